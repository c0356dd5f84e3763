//! Command-line front end. `run` returns the process exit code: 0 success,
//! 1 usage or configuration, 2 data, 3 numeric or internal failure.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::read_kv;
use crate::dewarp::{rectify, Predictor};
use crate::error::{Error, Result};
use crate::metrics::{write_csv, MetricsReport};
use crate::model::{ModelConfig, Network};
use crate::raster::Image;
use crate::synth::{generate_dataset, read_dataset, ImageSource, SynthConfig};
use crate::train::{evaluate, preset, split_indices, train, TrainConfig};
use crate::verify::{layer_gradient_suite, model_gradient_check, selftest};

pub const THREADS_ENV: &str = "DEWARP_THREADS";

#[derive(Parser, Debug)]
#[command(
    name = "docwarp",
    version,
    about = "Document dewarping: data generation, training, inference and evaluation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic warped-document dataset.
    Generate(GenerateArgs),
    /// Train a model on a generated dataset.
    Train(TrainArgs),
    /// Rectify one image with a trained model.
    Dewarp(DewarpArgs),
    /// Score a model on a dataset.
    Eval(EvalArgs),
    /// Finite-difference gradient checks of every layer type and a small model.
    Gradcheck(GradcheckArgs),
    /// Run the built-in invariant suite.
    Selftest(SelftestArgs),
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long)]
    pub count: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory of flat page PNGs; built-in pages when absent.
    #[arg(long)]
    pub pages: Option<PathBuf>,
    /// Directory of background texture PNGs; built-in textures when absent.
    #[arg(long)]
    pub textures: Option<PathBuf>,
    #[arg(long)]
    pub size: Option<usize>,
    /// key = value file of generator settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// key = value file; command-line flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// full, no_gate, shared_decoders or single_decoder.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub scale: Option<f64>,
    #[arg(long)]
    pub input_size: Option<usize>,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Args, Debug)]
pub struct DewarpArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Upsample the grid and sample the input at its own resolution.
    #[arg(long)]
    pub native_res: bool,
    /// Also write the predicted edge map here.
    #[arg(long)]
    pub edges: Option<PathBuf>,
    /// Also write the predicted grid (WGRD) here.
    #[arg(long)]
    pub grid: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Model checkpoint or grid file; `identity` scores the unrectified input.
    #[arg(long)]
    pub checkpoint: String,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Compare at the dataset's resolution instead of the model's.
    #[arg(long)]
    pub native_res: bool,
    /// all, train or val (the split a training run with the same seed used).
    #[arg(long, default_value = "all")]
    pub split: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.1)]
    pub val_fraction: f64,
    /// Write rectified pairs, edge maps and per-level SSIM tables here.
    #[arg(long)]
    pub dump_figures: Option<PathBuf>,
    /// Model resolution of the `identity` baseline.
    #[arg(long, default_value_t = 256)]
    pub size: usize,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Tolerance of the per-layer checks.
    #[arg(long, default_value_t = 1e-4)]
    pub layer_tol: f64,
    /// Tolerance of the end-to-end check.
    #[arg(long, default_value_t = 1e-3)]
    pub model_tol: f64,
    /// Entries probed per parameter tensor in the end-to-end check.
    #[arg(long, default_value_t = 3)]
    pub samples: usize,
    #[arg(long, default_value_t = 0.125)]
    pub scale: f64,
    #[arg(long, default_value_t = 32)]
    pub size: usize,
}

#[derive(Args, Debug)]
pub struct SelftestArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return e.exit_code();
    }
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
    // A pool that already exists (tests, repeated calls) keeps its size.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn print_config(title: &str, entries: &[(String, String)]) {
    let mut out = io::stdout().lock();
    let _ = writeln!(out, "# {title}");
    for (k, v) in entries {
        let _ = writeln!(out, "#   {k} = {v}");
    }
}

fn owned(entries: Vec<(&'static str, String)>) -> Vec<(String, String)> {
    entries.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Generate(a) => cmd_generate(a),
        Command::Train(a) => cmd_train(a),
        Command::Dewarp(a) => cmd_dewarp(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Selftest(a) => cmd_selftest(a),
    }
}

fn source(dir: &Option<PathBuf>) -> Result<ImageSource> {
    match dir {
        Some(d) => ImageSource::from_dir(d),
        None => Ok(ImageSource::Builtin),
    }
}

fn cmd_generate(a: GenerateArgs) -> Result<i32> {
    let mut cfg = SynthConfig::default();
    if let Some(path) = &a.config {
        for (k, v) in read_kv(path)? {
            cfg.set(&k, &v)?;
        }
    }
    if let Some(s) = a.size {
        cfg.size = s;
    }
    let mut entries = vec![
        ("count".to_string(), a.count.to_string()),
        ("out".to_string(), a.out.display().to_string()),
        ("seed".to_string(), a.seed.to_string()),
        (
            "pages".to_string(),
            a.pages.as_ref().map_or("builtin".into(), |p| p.display().to_string()),
        ),
        (
            "textures".to_string(),
            a.textures.as_ref().map_or("builtin".into(), |p| p.display().to_string()),
        ),
    ];
    entries.extend(owned(cfg.entries()));
    print_config("generate", &entries);
    let pages = source(&a.pages)?;
    let textures = source(&a.textures)?;
    let records = generate_dataset(&a.out, a.count, a.seed, &cfg, &pages, &textures)?;
    let retried = records.iter().filter(|r| r.attempt > 0).count();
    println!("wrote {} samples to {} ({retried} needed a retry)", records.len(), a.out.display());
    Ok(0)
}

fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    if let Some(path) = &a.config {
        cfg.apply_file(path)?;
    }
    if let Some(name) = &a.preset {
        cfg.model = preset(name, &cfg.model)?;
    }
    if let Some(v) = &a.data {
        cfg.data_path = v.clone();
    }
    if let Some(v) = &a.out {
        cfg.out_dir = v.clone();
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = a.max_steps {
        cfg.max_steps = v;
    }
    if let Some(v) = a.scale {
        cfg.model.scale = v;
    }
    if let Some(v) = a.input_size {
        cfg.model.input_size = v;
    }
    for o in &a.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("--set expects KEY=VALUE, got {o:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(a: TrainArgs) -> Result<i32> {
    let cfg = train_config(&a)?;
    let entries: Vec<(String, String)> = crate::config::parse_kv(&cfg.to_text())?;
    print_config("train", &entries);
    let dataset = read_dataset(&cfg.data_path)?;
    let (net, store) = Network::build(&cfg.model, cfg.seed)?;
    eprintln!("{}", net.summary(&store));
    drop((net, store));
    let every = 10.max(cfg.max_steps / 100);
    let outcome = train(&cfg, &dataset, |r| {
        if r.step == 1 || r.step % every == 0 {
            eprintln!(
                "step {:>6}  epoch {:>4}  grid {:.6}  edge {:.6}  total {:.6}  {:>8.1}s",
                r.step, r.epoch, r.grid_loss, r.edge_loss, r.combined_loss, r.wall_time
            );
        }
    })?;
    if let Some(last) = outcome.log.last() {
        println!(
            "steps {}  final grid_loss {:.6}  edge_loss {:.6}  combined {:.6}",
            last.step, last.grid_loss, last.edge_loss, last.combined_loss
        );
    } else {
        println!("no training steps taken");
    }
    println!("checkpoint {}", outcome.checkpoint.display());
    println!("log {}", cfg.log_file().display());
    Ok(0)
}

fn cmd_dewarp(a: DewarpArgs) -> Result<i32> {
    print_config(
        "dewarp",
        &[
            ("checkpoint".into(), a.checkpoint.display().to_string()),
            ("input".into(), a.input.display().to_string()),
            ("output".into(), a.output.display().to_string()),
            ("native_res".into(), a.native_res.to_string()),
        ],
    );
    let predictor = Predictor::load(&a.checkpoint)?;
    let photo = Image::load_png(&a.input)?;
    let out = rectify(&predictor, &photo, a.native_res)?;
    out.image.save_png(&a.output)?;
    if let Some(p) = &a.edges {
        match &out.edges {
            Some(e) => e.save_png(p)?,
            None => eprintln!("warning: model has no edge head, {} not written", p.display()),
        }
    }
    if let Some(p) = &a.grid {
        out.grid.save(p)?;
    }
    println!("wrote {} ({}x{})", a.output.display(), out.image.width(), out.image.height());
    Ok(0)
}

fn cmd_eval(a: EvalArgs) -> Result<i32> {
    print_config(
        "eval",
        &[
            ("checkpoint".into(), a.checkpoint.clone()),
            ("data".into(), a.data.display().to_string()),
            ("native_res".into(), a.native_res.to_string()),
            ("split".into(), a.split.clone()),
            ("seed".into(), a.seed.to_string()),
            ("val_fraction".into(), a.val_fraction.to_string()),
        ],
    );
    let predictor = if a.checkpoint == "identity" {
        Predictor::identity(a.size)
    } else {
        Predictor::load(Path::new(&a.checkpoint))?
    };
    let dataset = read_dataset(&a.data)?;
    let (train_idx, val_idx) = split_indices(dataset.len(), a.val_fraction, a.seed);
    let indices = match a.split.as_str() {
        "all" => (0..dataset.len()).collect(),
        "train" => train_idx,
        "val" => val_idx,
        other => return Err(Error::Usage(format!("--split must be all, train or val, got {other:?}"))),
    };
    let summary = evaluate(&predictor, &dataset, &indices, a.native_res)?;
    if summary.skipped > 0 {
        eprintln!("warning: {} samples skipped (unreadable ground truth)", summary.skipped);
    }
    if let Some(path) = &a.csv {
        write_csv(fs::File::create(path)?, &summary.rows)?;
    }
    if let Some(dir) = &a.dump_figures {
        dump_figures(dir, &predictor, &dataset, &indices, a.native_res, &summary.rows)?;
    }
    match &summary.mean {
        Some(m) => println!("{} samples\n{m}", summary.rows.len()),
        None => println!("no samples evaluated"),
    }
    Ok(0)
}

/// Rectified/flat pairs, predicted and reference edge maps, and the SSIM
/// table per pyramid level for every evaluated sample.
fn dump_figures(
    dir: &Path,
    predictor: &Predictor,
    dataset: &crate::synth::Dataset,
    indices: &[usize],
    native: bool,
    rows: &[(String, MetricsReport)],
) -> Result<()> {
    fs::create_dir_all(dir)?;
    for &k in indices {
        let Ok(s) = dataset.load(k) else { continue };
        let out = rectify(predictor, &s.warped, native)?;
        let (w, h) = (out.image.width(), out.image.height());
        let pair = side_by_side(&[s.warped.resize(w, h), out.image.clone(), s.flat.resize(w, h)]);
        pair.save_png(dir.join(format!("pair_{k:06}.png")))?;
        if let Some(e) = &out.edges {
            let size = e.width();
            side_by_side(&[e.clone(), s.edge_mask.to_gray().resize(size, size)]).save_png(dir.join(format!("edges_{k:06}.png")))?;
        }
    }
    let mut text = String::from("sample,level,ssim\n");
    for (name, r) in rows {
        for (l, v) in r.ssim_levels.iter().enumerate() {
            text.push_str(&format!("{name},{},{v:.6}\n", l + 1));
        }
    }
    fs::write(dir.join("ssim_levels.csv"), text)?;
    Ok(())
}

fn side_by_side(images: &[Image]) -> Image {
    let h = images.iter().map(|i| i.height()).max().unwrap_or(0);
    let w: usize = images.iter().map(|i| i.width()).sum();
    let c = images.iter().map(|i| i.channels()).max().unwrap_or(1);
    let mut out = Image::filled(w, h, c, 1.0);
    let mut x0 = 0;
    for img in images {
        let img = if img.channels() == c { img.clone() } else { img.to_rgb() };
        for y in 0..img.height() {
            for x in 0..img.width() {
                out.pixel_mut(x0 + x, y).copy_from_slice(img.pixel(x, y));
            }
        }
        x0 += img.width();
    }
    out
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<i32> {
    print_config(
        "gradcheck",
        &[
            ("seed".into(), a.seed.to_string()),
            ("layer_tol".into(), a.layer_tol.to_string()),
            ("model_tol".into(), a.model_tol.to_string()),
            ("samples".into(), a.samples.to_string()),
            ("scale".into(), a.scale.to_string()),
            ("size".into(), a.size.to_string()),
        ],
    );
    let layers = layer_gradient_suite(a.seed, a.layer_tol)?;
    let mut ok = true;
    println!("{:<16}  {:>12}  {:>9}  status", "layer", "max_rel_err", "tolerance");
    for c in &layers {
        let pass = c.report.passed();
        ok &= pass;
        println!(
            "{:<16}  {:>12.3e}  {:>9.1e}  {}",
            c.name,
            c.report.max_rel_error(),
            a.layer_tol,
            if pass { "ok" } else { "FAIL" }
        );
    }
    let cfg = ModelConfig {
        input_size: a.size,
        scale: a.scale,
        ..ModelConfig::default()
    };
    let report = model_gradient_check(&cfg, a.seed, a.samples, a.model_tol)?;
    ok &= report.passed();
    println!(
        "{:<16}  {:>12.3e}  {:>9.1e}  {}",
        "model",
        report.max_rel_error(),
        a.model_tol,
        if report.passed() { "ok" } else { "FAIL" }
    );
    println!(
        "  {} tensors, {} probes, {} dropped on kinks",
        report.entries.len(),
        report.entries.iter().map(|e| e.checked).sum::<usize>(),
        report.kinked()
    );
    if !report.passed() {
        for f in report.failures() {
            eprintln!("  {}: {:.3e} ({} probes, {} kinked)", f.name, f.max_rel_error, f.checked, f.kinked);
        }
    }
    Ok(if ok { 0 } else { 3 })
}

fn cmd_selftest(a: SelftestArgs) -> Result<i32> {
    print_config("selftest", &[("seed".into(), a.seed.to_string())]);
    let results = selftest(a.seed)?;
    for r in &results {
        println!("{r}");
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    println!("{} checks, {failed} failed", results.len());
    Ok(if failed == 0 { 0 } else { 3 })
}
