//! Acceptance checks. Runs as a plain binary under `cargo test` and prints one
//! PASS/FAIL line per criterion; exits non-zero if any gating check fails.
//!
//! Set `DOCWARP_ABLATION_STUDY=1` to also run the (slow, non-gating)
//! directional ablation comparison on a 512-sample dataset.

use std::path::Path;
use std::time::{Duration, Instant};

use docwarp::cli;
use docwarp::dewarp::Predictor;
use docwarp::grid::{upsample_grid, WarpGrid};
use docwarp::metrics::{ms_ssim, ssim, weighted_average, MS_SSIM_WEIGHTS};
use docwarp::model::{ModelConfig, ModelOutput, Network, Trace};
use docwarp::nn::{Graph, Shape, Tensor};
use docwarp::objective::{combined_loss, ObjectiveConfig};
use docwarp::raster::Image;
use docwarp::synth::{generate_dataset, generate_sample, read_dataset, reconstruction_ssim, ImageSource, SynthConfig};
use docwarp::train::{ablation_presets, evaluate, make_batch, train, TrainConfig};
use docwarp::verify::{layer_gradient_suite, model_gradient_check, round_trip_error_px};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

type Check = fn() -> Outcome;

fn main() {
    // `cargo test -- <filter>` passes extra arguments; honour a plain filter.
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let checks: [(&str, &str, Check); 9] = [
        ("1", "shape conformance", shape_conformance),
        ("2", "gradient integrity", gradient_integrity),
        ("3", "synthesis round trip", synthesis_round_trip),
        ("4", "overfit convergence", overfit_convergence),
        ("5", "metric oracles", metric_oracles),
        ("6", "loss arithmetic", loss_arithmetic),
        ("7", "ablation contracts", ablation_contracts),
        ("8", "determinism", determinism),
        ("9", "native resolution", native_resolution),
    ];
    let mut failed = 0;
    for (id, name, check) in checks {
        if let Some(f) = &filter {
            if !name.contains(f.as_str()) && id != f {
                continue;
            }
        }
        let start = Instant::now();
        let out = check();
        let status = if out.passed { "PASS" } else { "FAIL" };
        println!("[{status}] criterion {id} {name} ({:.1?}): {}", start.elapsed(), out.detail);
        if !out.passed {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn within(elapsed: Duration, limit_s: u64) -> bool {
    elapsed < Duration::from_secs(limit_s)
}

fn shape_conformance() -> Outcome {
    let start = Instant::now();
    let cfg = ModelConfig::default();
    let (net, store) = Network::build(&cfg, 0).expect("build");
    let mut g = Graph::shape_probe();
    let x = g.input(Tensor::full(Shape::new(1, 3, 256, 256), 0.5f32));
    let out = net.forward(&mut g, &store, x).expect("forward");
    let expected = [
        ("L2", [64, 128, 128]),
        ("L3", [128, 64, 64]),
        ("L4", [256, 32, 32]),
        ("L5", [512, 16, 16]),
        ("B", [1024, 8, 8]),
        ("O", [2, 256, 256]),
        ("Go", [16, 256, 256]),
        ("X", [32, 256, 256]),
        ("U1", [50, 256, 256]),
        ("B1", [512, 8, 8]),
        ("B2", [512, 8, 8]),
        ("O1", [1, 256, 256]),
        ("O2", [1, 256, 256]),
        ("g", [2, 256, 256]),
    ];
    let named = out.named();
    let mut mismatches = Vec::new();
    for (name, [c, h, w]) in expected {
        let got = named.iter().find(|(n, _)| *n == name).map(|(_, v)| g.shape(*v));
        if got != Some(Shape::new(1, c, h, w)) {
            mismatches.push(format!("{name}: {got:?}"));
        }
    }
    let elapsed = start.elapsed();
    outcome(
        mismatches.is_empty() && within(elapsed, 10),
        format!(
            "{} symbols checked, mismatches {:?}, {} parameters, {:.2?}",
            expected.len(),
            mismatches,
            store.num_elements(),
            elapsed
        ),
    )
}

fn gradient_integrity() -> Outcome {
    let start = Instant::now();
    let layers = layer_gradient_suite(3, 1e-4).expect("layer suite");
    let layer_worst = layers.iter().map(|c| c.report.max_rel_error()).fold(0.0, f64::max);
    let layer_failures: Vec<&str> = layers.iter().filter(|c| !c.report.passed()).map(|c| c.name).collect();
    let cfg = ModelConfig {
        input_size: 32,
        scale: 0.125,
        ..ModelConfig::default()
    };
    let model = model_gradient_check(&cfg, 3, 3, 1e-3).expect("model check");
    let model_failures: Vec<String> = model.failures().map(|f| format!("{} {:.2e}", f.name, f.max_rel_error)).collect();
    let elapsed = start.elapsed();
    outcome(
        layer_failures.is_empty() && model.passed() && within(elapsed, 300),
        format!(
            "{} layer types max rel {:.2e} (tol 1e-4) failing {:?}; end-to-end {} tensors, {} probes ({} dropped on kinks) max rel {:.2e} (tol 1e-3) failing {:?}",
            layers.len(),
            layer_worst,
            layer_failures,
            model.entries.len(),
            model.entries.iter().map(|e| e.checked).sum::<usize>(),
            model.kinked(),
            model.max_rel_error(),
            model_failures
        ),
    )
}

fn synthesis_round_trip() -> Outcome {
    let start = Instant::now();
    let cfg = SynthConfig::default();
    let mut min_ssim = f64::INFINITY;
    let mut max_px: f64 = 0.0;
    let mut bad = Vec::new();
    for i in 0..50 {
        let (s, _) = generate_sample(i, 2024, &cfg, &ImageSource::Builtin, &ImageSource::Builtin).expect("sample");
        let q = reconstruction_ssim(&s).expect("ssim");
        let px = round_trip_error_px(&s.gt_grid).expect("invert");
        min_ssim = min_ssim.min(q);
        max_px = max_px.max(px);
        if q < 0.9 || px > 2.0 {
            bad.push(i);
        }
    }
    let elapsed = start.elapsed();
    outcome(
        bad.is_empty() && within(elapsed, 120),
        format!("50 samples at 256: min SSIM {min_ssim:.4} (>= 0.90), max round-trip error {max_px:.3} px (<= 2), failing {bad:?}"),
    )
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    v[v.len() / 2]
}

fn overfit_convergence() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().expect("tempdir");
    let data = dir.path().join("data");
    generate_dataset(&data, 8, 11, &SynthConfig::default(), &ImageSource::Builtin, &ImageSource::Builtin).expect("generate");
    let dataset = read_dataset(&data).expect("read");
    let cfg = TrainConfig {
        epochs: usize::MAX,
        max_steps: OVERFIT_STEPS,
        batch_size: 4,
        learning_rate: 1e-3,
        seed: 5,
        val_fraction: 0.0,
        model: ModelConfig {
            input_size: 64,
            scale: 0.25,
            ..ModelConfig::default()
        },
        data_path: data.clone(),
        out_dir: dir.path().join("run"),
        ..TrainConfig::default()
    };
    let run = train(&cfg, &dataset, |_| {}).expect("train");

    // Grid MSE of the final parameters over all eight training samples.
    let samples: Vec<_> = (0..8).map(|k| dataset.load(k).expect("load")).collect();
    let batch = make_batch(&samples, 64).expect("batch");
    let mut g = Graph::inference();
    let x = g.input(batch.input.clone());
    let out = run.network.forward(&mut g, &run.store, x).expect("forward");
    let gt = g.input(batch.grid.clone());
    let mse_var = g.mse(out.grid, gt).expect("mse");
    let mse = g.value(mse_var).data()[0] as f64;

    let all: Vec<usize> = (0..8).collect();
    let model = Predictor::load(&run.checkpoint).expect("checkpoint");
    let trained = evaluate(&model, &dataset, &all, true).expect("eval").mean.expect("mean");
    let base = evaluate(&Predictor::identity(64), &dataset, &all, true)
        .expect("eval")
        .mean
        .expect("mean");
    let gain = trained.ms_ssim - base.ms_ssim;

    let mut first: Vec<f64> = run.log.iter().take(100).map(|r| r.combined_loss).collect();
    let mut last: Vec<f64> = run.log.iter().rev().take(100).map(|r| r.combined_loss).collect();
    let (m_first, m_last) = (median(&mut first), median(&mut last));
    let elapsed = start.elapsed();
    outcome(
        mse < 0.005 && gain >= 0.1 && m_first > m_last && within(elapsed, 1800),
        format!(
            "{} steps: grid MSE {mse:.5} (< 0.005); MS-SSIM {:.4} vs identity {:.4}, gain {gain:.4} (>= 0.1); median loss first/last 100 {m_first:.4}/{m_last:.4}",
            run.log.len(),
            trained.ms_ssim,
            base.ms_ssim
        ),
    )
}

const OVERFIT_STEPS: usize = 600;

/// Direct single-window SSIM over an 11x11 patch, written out from the
/// definition with its own Gaussian weights.
fn ssim_patch_oracle(a: &[f64], b: &[f64]) -> f64 {
    let mut w = [0.0f64; 121];
    for y in 0..11 {
        for x in 0..11 {
            let d2 = ((x as f64 - 5.0).powi(2) + (y as f64 - 5.0).powi(2)) / (2.0 * 1.5 * 1.5);
            w[y * 11 + x] = (-d2).exp();
        }
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    let (mut ma, mut mb) = (0.0, 0.0);
    for k in 0..121 {
        ma += w[k] * a[k];
        mb += w[k] * b[k];
    }
    let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
    for k in 0..121 {
        va += w[k] * (a[k] - ma).powi(2);
        vb += w[k] * (b[k] - mb).powi(2);
        cov += w[k] * (a[k] - ma) * (b[k] - mb);
    }
    let c1 = (0.01f64).powi(2);
    let c2 = (0.03f64).powi(2);
    ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
}

fn metric_oracles() -> Outcome {
    let page = docwarp::synth::synthetic_page(256, &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(9));
    let s = ssim(&page, &page).expect("ssim");
    let m = ms_ssim(&page, &page).expect("ms-ssim");
    let weight_sum: f64 = MS_SSIM_WEIGHTS.iter().sum();
    let wa = weighted_average(&[0.8, 0.9, 0.95, 0.99, 1.0]);
    // 0.945212 / 1.0001, evaluated by hand.
    let worked = 0.945118;

    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(4);
    let a: Vec<f32> = (0..121).map(|_| rand::Rng::gen_range(&mut rng, 0.0..1.0)).collect();
    let b: Vec<f32> = a
        .iter()
        .map(|v| (v * 0.7 + 0.1 + rand::Rng::gen_range(&mut rng, 0.0..0.2)).min(1.0))
        .collect();
    let ia = Image::from_vec(11, 11, 1, a.clone()).expect("patch");
    let ib = Image::from_vec(11, 11, 1, b.clone()).expect("patch");
    let got = ssim(&ia, &ib).expect("ssim");
    let oracle = ssim_patch_oracle(
        &a.iter().map(|&v| v as f64).collect::<Vec<_>>(),
        &b.iter().map(|&v| v as f64).collect::<Vec<_>>(),
    );

    let ok = (s - 1.0).abs() <= 1e-9
        && (m - 1.0).abs() <= 1e-6
        && (weight_sum - 1.0001).abs() < 1e-12
        && (wa - worked).abs() <= 1e-4
        && (got - oracle).abs() <= 1e-10;
    outcome(
        ok,
        format!(
            "ssim(x,x) {s:.12}; ms-ssim(x,x) {m:.9}; weights sum {weight_sum:.4}; worked example {wa:.6} vs {worked}; 11x11 patch {got:.12} vs oracle {oracle:.12}"
        ),
    )
}

fn loss_arithmetic() -> Outcome {
    // A hand-made forward output: grid offset by 0.1 everywhere (L_g = 0.01)
    // and zero edge logits (sigmoid 0.5, L_e = ln 2 for any binary target).
    let s = 16;
    let mut g = Graph::<f64>::inference();
    let pred = g.input(Tensor::zeros(Shape::new(1, 2, s, s)));
    let logits = g.input(Tensor::zeros(Shape::new(1, 1, s, s)));
    let gt = g.input(Tensor::full(Shape::new(1, 2, s, s), 0.1));
    let edges = g.input(Tensor::from_fn(Shape::new(1, 1, s, s), |_, _, y, x| {
        ((x + y) % 3 == 0) as u8 as f64
    }));
    let out = ModelOutput {
        grid: pred,
        edge_logits: Some(logits),
        edge_features: pred,
        trace: Trace {
            x: pred,
            l2: pred,
            l3: pred,
            l4: pred,
            l5: pred,
            b: pred,
            o: pred,
            go: pred,
            u1: pred,
            b1: None,
            b2: None,
            o1: None,
            o2: None,
        },
    };
    let terms = combined_loss(&mut g, &out, gt, Some(edges), &ObjectiveConfig::default()).expect("loss");
    let l = g.value(terms.combined).data()[0];
    let lg = g.value(terms.grid).data()[0];
    let le = g.value(terms.edge.expect("edge")).data()[0];
    let zero = ObjectiveConfig {
        lambda: 0.0,
        ..ObjectiveConfig::default()
    };
    let terms0 = combined_loss(&mut g, &out, gt, Some(edges), &zero).expect("loss");
    let l0 = g.value(terms0.combined).data()[0];
    let exact = 0.01 + 0.9 * 2f64.ln();
    #[allow(clippy::approx_constant)]
    let truncated = docwarp::objective::combine(0.01, 0.6931, 0.9);
    let ok = (lg - 0.01).abs() < 1e-12
        && (le - 2f64.ln()).abs() < 1e-12
        && (l - exact).abs() <= 1e-6
        && l0 == lg
        && (truncated - 0.63379).abs() <= 1e-6;
    outcome(
        ok,
        format!(
            "L_g {lg:.6}, L_e {le:.6}, L {l:.7} vs 0.01 + 0.9 ln 2 = {exact:.7} (ln 2 as 0.6931 gives {truncated:.6}); lambda 0 gives {l0:.6}"
        ),
    )
}

fn ablation_contracts() -> Outcome {
    let base = ModelConfig {
        input_size: 64,
        scale: 0.25,
        ..ModelConfig::default()
    };
    let presets = ablation_presets(&base);
    let summaries: Vec<_> = presets
        .iter()
        .map(|(n, c)| {
            let (net, store) = Network::build(c, 0).expect("build");
            let gated_names = store.ids().filter(|&id| store.name(id).starts_with("gated.")).count();
            (*n, net.summary(&store), gated_names)
        })
        .collect();
    let full = summaries[0].1;
    let no_gate = &summaries[1];
    let shared = summaries[2].1;
    let counts_ok = no_gate.1.gated == 0 && no_gate.2 == 0 && 2 * shared.secondary_decoders == full.secondary_decoders;

    let dir = tempfile::tempdir().expect("tempdir");
    let data = dir.path().join("data");
    generate_dataset(&data, 8, 77, &SynthConfig::default(), &ImageSource::Builtin, &ImageSource::Builtin).expect("generate");
    let dataset = read_dataset(&data).expect("read");
    let mut smoke = Vec::new();
    for (name, cfg) in &presets {
        let tc = TrainConfig {
            epochs: usize::MAX,
            max_steps: 50,
            batch_size: 2,
            learning_rate: 1e-3,
            seed: 1,
            val_fraction: 0.0,
            model: cfg.clone(),
            data_path: data.clone(),
            out_dir: dir.path().join(name),
            ..TrainConfig::default()
        };
        let r = train(&tc, &dataset, |_| {});
        smoke.push(match r {
            Ok(o) if o.log.len() == 50 => format!("{name} ok ({:.4})", o.log.last().unwrap().grid_loss),
            Ok(o) => format!("{name} stopped after {}", o.log.len()),
            Err(e) => format!("{name} error {e}"),
        });
    }
    let smoke_ok = smoke.iter().all(|s| s.contains(" ok "));
    let direction = if std::env::var("DOCWARP_ABLATION_STUDY").is_ok() {
        ablation_direction(&presets)
    } else {
        "directional 512-sample comparison not run (non-gating; set DOCWARP_ABLATION_STUDY=1 or see the ablations example)".to_string()
    };
    outcome(
        counts_ok && smoke_ok,
        format!(
            "gated params full/no_gate {}/{}; decoder params full/shared {}/{}; smoke {:?}; {direction}",
            full.gated, no_gate.1.gated, full.secondary_decoders, shared.secondary_decoders, smoke
        ),
    )
}

fn ablation_direction(presets: &[(&'static str, ModelConfig)]) -> String {
    let dir = tempfile::tempdir().expect("tempdir");
    let data = dir.path().join("data");
    generate_dataset(
        &data,
        512,
        512,
        &SynthConfig::default(),
        &ImageSource::Builtin,
        &ImageSource::Builtin,
    )
    .expect("generate");
    let dataset = read_dataset(&data).expect("read");
    let mut scores = Vec::new();
    for (name, cfg) in presets {
        let tc = TrainConfig {
            epochs: 2,
            batch_size: 4,
            learning_rate: 1e-3,
            seed: 1,
            model: cfg.clone(),
            data_path: data.clone(),
            out_dir: dir.path().join(name),
            ..TrainConfig::default()
        };
        let run = train(&tc, &dataset, |_| {}).expect("train");
        let p = Predictor::load(&run.checkpoint).expect("load");
        let m = evaluate(&p, &dataset, &run.val_indices, true).expect("eval").mean.expect("mean");
        scores.push((*name, m.ms_ssim));
    }
    let full = scores[0].1;
    let holds = scores[1..].iter().all(|(_, s)| full >= *s);
    format!("directional (non-gating) val MS-SSIM {scores:?}: full best = {holds}")
}

fn files_equal(a: &Path, b: &Path) -> bool {
    let mut names: Vec<_> = std::fs::read_dir(a).expect("dir").map(|e| e.expect("entry").file_name()).collect();
    names.sort();
    names.iter().all(|n| std::fs::read(a.join(n)).ok() == std::fs::read(b.join(n)).ok())
        && std::fs::read_dir(b).expect("dir").count() == names.len()
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().expect("tempdir");
    let (d1, d2) = (dir.path().join("d1"), dir.path().join("d2"));
    let gen = |d: &Path| {
        let code = cli::run(["docwarp", "generate", "--count", "6", "--seed", "1", "--out", d.to_str().unwrap()]);
        assert_eq!(code, 0);
    };
    gen(&d1);
    gen(&d2);
    let same_data = files_equal(&d1, &d2);

    let dataset = read_dataset(&d1).expect("read");
    let grids_bitwise = (0..dataset.len()).all(|k| {
        let (s, _) = generate_sample(k, 1, &SynthConfig::default(), &ImageSource::Builtin, &ImageSource::Builtin).expect("sample");
        let loaded = dataset.load(k).expect("load");
        s.gt_grid
            .coords()
            .iter()
            .zip(loaded.gt_grid.coords())
            .all(|(a, b)| a.to_bits() == b.to_bits())
    });

    let run = |out: &str| {
        let tc = TrainConfig {
            epochs: 3,
            batch_size: 2,
            learning_rate: 1e-3,
            seed: 9,
            val_fraction: 0.0,
            model: ModelConfig {
                input_size: 32,
                scale: 0.125,
                ..ModelConfig::default()
            },
            data_path: d1.clone(),
            out_dir: dir.path().join(out),
            ..TrainConfig::default()
        };
        train(&tc, &dataset, |_| {}).expect("train")
    };
    let (a, b) = (run("r1"), run("r2"));
    let same_params = a.store.same_values(&b.store);
    let same_losses = a
        .log
        .iter()
        .zip(&b.log)
        .all(|(x, y)| (x.grid_loss, x.edge_loss, x.combined_loss) == (y.grid_loss, y.edge_loss, y.combined_loss));

    let p = Predictor::load(&a.checkpoint).expect("load");
    let idx: Vec<usize> = (0..dataset.len()).collect();
    let e1 = evaluate(&p, &dataset, &idx, true).expect("eval");
    let e2 = evaluate(&p, &dataset, &idx, true).expect("eval");
    let in_memory = Predictor::Model {
        net: a.network,
        store: a.store,
    };
    let e3 = evaluate(&in_memory, &dataset, &idx, true).expect("eval");
    let same_eval = e1.rows == e2.rows && e1.rows == e3.rows;

    outcome(
        same_data && grids_bitwise && same_params && same_losses && same_eval,
        format!(
            "dataset bytes identical {same_data}; grids bitwise after write/read {grids_bitwise}; params bitwise {same_params}; losses identical {same_losses} ({} steps); eval identical incl. checkpoint round trip {same_eval}",
            b.log.len()
        ),
    )
}

/// Runs `dewarp --native-res` and returns (exit code, written image, native grid).
fn dewarp_native(predictor: &Path, input: &Path, dir: &Path, tag: &str) -> (i32, Image, WarpGrid) {
    let output = dir.join(format!("{tag}.png"));
    let grid_path = dir.join(format!("{tag}.wgrd"));
    let code = cli::run([
        "docwarp",
        "dewarp",
        "--checkpoint",
        predictor.to_str().unwrap(),
        "--input",
        input.to_str().unwrap(),
        "--output",
        output.to_str().unwrap(),
        "--native-res",
        "--grid",
        grid_path.to_str().unwrap(),
    ]);
    (
        code,
        Image::load_png(&output).expect("output"),
        WarpGrid::load(&grid_path).expect("grid"),
    )
}

/// Largest difference between a 256 grid and the native grid interpolated at
/// the exact native position of each 256 lattice point.
fn point_agreement(native: &WarpGrid, model: &WarpGrid) -> f64 {
    let (h, w) = (native.height() as f64 - 1.0, native.width() as f64 - 1.0);
    let n = model.height() as f64 - 1.0;
    let mut worst: f64 = 0.0;
    for i in 0..model.height() {
        for j in 0..model.width() {
            let [a, b] = native.interpolate(j as f64 * w / n, i as f64 * h / n).unwrap_or([f64::INFINITY; 2]);
            let [c, d] = model.get(i, j);
            worst = worst.max((a - c as f64).abs()).max((b - d as f64).abs());
        }
    }
    worst
}

fn native_resolution() -> Outcome {
    let dir = tempfile::tempdir().expect("tempdir");
    let photo = Image::from_fn(1024, 768, 3, |x, y, c| ((x / 16 + y / 16 + c) % 2) as f32 * 0.8 + 0.1);
    let input = dir.path().join("photo.png");
    photo.save_png(&input).expect("png");

    // A model checkpoint: output size and exact agreement with an
    // align-corners bilinear reference computed here.
    let ckpt = dir.path().join("model.gbsu");
    let cfg = ModelConfig {
        input_size: 256,
        scale: 0.125,
        ..ModelConfig::default()
    };
    let (_, store) = Network::build(&cfg, 21).expect("build");
    docwarp::model::save_model(&ckpt, &cfg, &store).expect("save");
    let (code, written, native) = dewarp_native(&ckpt, &input, dir.path(), "model");
    let p = Predictor::load(&ckpt).expect("load");
    let decoded = Image::load_png(&input).expect("input");
    let model_grid = p.predict(&decoded.resize(256, 256)).expect("predict").grid;
    let reference = upsample_grid(&model_grid, 768, 1024).expect("upsample");
    let exact = native.max_abs_diff(&reference).unwrap_or(f64::INFINITY);

    // A realistic warp field written as a grid file: agreement at the
    // corresponding points.
    let (s, _) = generate_sample(3, 2024, &SynthConfig::default(), &ImageSource::Builtin, &ImageSource::Builtin).expect("sample");
    let warp = dir.path().join("warp.wgrd");
    s.gt_grid.save(&warp).expect("grid");
    let (code2, written2, native2) = dewarp_native(&warp, &input, dir.path(), "warp");
    let worst = point_agreement(&native2, &s.gt_grid);
    let untrained = point_agreement(&native, &model_grid);

    let sizes = [(written.width(), written.height()), (written2.width(), written2.height())];
    let ok = code == 0 && code2 == 0 && sizes.iter().all(|&s| s == (1024, 768)) && worst <= 1e-2 && exact <= 1e-6;
    outcome(
        ok,
        format!(
            "exit {code}/{code2}; outputs {sizes:?}; warp grid agreement at corresponding points {worst:.2e} (<= 1e-2); model grid vs interpolated reference {exact:.2e} (untrained model point agreement {untrained:.2e}, not gated)"
        ),
    )
}
