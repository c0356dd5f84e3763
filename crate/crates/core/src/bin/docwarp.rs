fn main() {
    std::process::exit(docwarp::cli::run(std::env::args_os()));
}
