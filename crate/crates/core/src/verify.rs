//! Built-in invariant checks behind `gradcheck` and `selftest`.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::grid::{black, compose, invert_grid, sample, WarpGrid};
use crate::metrics::{ms_ssim, ssim, weighted_average};
use crate::model::{ModelConfig, Network};
use crate::nn::{checkpoint, grad_check, GradCheckConfig, GradCheckReport, Graph, ParamId, ParamStore, Shape, Tensor, Var};
use crate::objective::{combine, combined_loss, ObjectiveConfig};
use crate::raster::Image;
use crate::synth::{generate_sample, reconstruction_ssim, ImageSource, SynthConfig};

/// One named layer-level gradient check.
pub struct LayerCheck {
    pub name: &'static str,
    pub report: GradCheckReport,
}

fn random(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    // Keep values away from zero so ReLU kinks sit outside the probe step.
    Tensor::from_fn(shape, |_, _, _, _| {
        let v: f64 = rng.gen_range(0.05..1.0);
        if rng.gen_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

/// Distinct values, at least 1e-2 apart, so max-pool has no near ties.
fn distinct(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    use rand::seq::SliceRandom;
    let mut v: Vec<f64> = (0..shape.numel()).map(|i| i as f64 * 0.01 - 0.3).collect();
    v.shuffle(rng);
    Tensor::from_vec(shape, v).expect("shape")
}

fn weighted_sum<'p>(g: &mut Graph<'p, f64>, y: Var, w: &Tensor<f64>) -> Result<Var> {
    let wv = g.input(w.clone());
    let p = g.mul(y, wv)?;
    Ok(g.sum(p))
}

struct Case {
    store: ParamStore<f64>,
    ids: Vec<ParamId>,
    probe: Tensor<f64>,
}

fn case(tensors: Vec<(&str, Tensor<f64>)>, out: Shape, rng: &mut ChaCha8Rng) -> Case {
    let mut store = ParamStore::new();
    let ids = tensors
        .into_iter()
        .map(|(n, t)| {
            let dims = t.shape().dims().to_vec();
            store.insert(n, dims, t).expect("unique names")
        })
        .collect();
    Case {
        store,
        ids,
        probe: random(out, rng),
    }
}

type LayerFn = dyn Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var>;

/// Central-difference checks of every layer type the network uses, each on
/// a tiny random instance, against `rel_tol`.
pub fn layer_gradient_suite(seed: u64, rel_tol: f64) -> Result<Vec<LayerCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = GradCheckConfig {
        seed,
        ..GradCheckConfig::default().with_rel_tol(rel_tol)
    };
    let mut out = Vec::new();
    let mut run = |name: &'static str, c: Case, f: &LayerFn| -> Result<()> {
        let report = grad_check(&c.store, &cfg, |g, st| {
            let vars: Vec<Var> = c.ids.iter().map(|&id| g.param(st, id)).collect();
            let y = f(g, &vars)?;
            weighted_sum(g, y, &c.probe)
        })?;
        out.push(LayerCheck { name, report });
        Ok(())
    };

    let x = Shape::new(2, 3, 5, 5);
    let c = case(
        vec![
            ("input", random(x, &mut rng)),
            ("weight", random(Shape::new(4, 3, 3, 3), &mut rng)),
            ("bias", random(Shape::new(4, 1, 1, 1), &mut rng)),
        ],
        Shape::new(2, 4, 5, 5),
        &mut rng,
    );
    run("conv3x3", c, &|g, v| g.conv2d(v[0], v[1], Some(v[2]), 1, 1))?;

    let c = case(
        vec![
            ("input", random(x, &mut rng)),
            ("weight", random(Shape::new(2, 3, 1, 1), &mut rng)),
            ("bias", random(Shape::new(2, 1, 1, 1), &mut rng)),
        ],
        Shape::new(2, 2, 5, 5),
        &mut rng,
    );
    run("conv1x1", c, &|g, v| g.conv2d(v[0], v[1], Some(v[2]), 1, 0))?;

    let c = case(
        vec![("input", distinct(Shape::new(1, 2, 4, 6), &mut rng))],
        Shape::new(1, 2, 2, 3),
        &mut rng,
    );
    run("maxpool2x2", c, &|g, v| g.max_pool2x2(v[0]))?;

    let c = case(
        vec![("input", random(Shape::new(1, 2, 3, 4), &mut rng))],
        Shape::new(1, 2, 6, 8),
        &mut rng,
    );
    run("upsample2x", c, &|g, v| g.upsample2x(v[0]))?;

    let c = case(
        vec![("input", random(Shape::new(1, 2, 2, 2), &mut rng))],
        Shape::new(1, 2, 7, 5),
        &mut rng,
    );
    run("resize_bilinear", c, &|g, v| g.resize_bilinear(v[0], 7, 5))?;

    let a = Shape::new(1, 3, 4, 4);
    for (name, mode) in [
        ("relu", crate::nn::ActivationMode::Relu),
        ("sigmoid", crate::nn::ActivationMode::Sigmoid),
        ("tanh", crate::nn::ActivationMode::Tanh),
    ] {
        let c = case(vec![("input", random(a, &mut rng))], a, &mut rng);
        run(name, c, &move |g, v| Ok(g.activation(v[0], mode)))?;
    }

    let c = case(
        vec![
            ("a", random(Shape::new(1, 2, 3, 3), &mut rng)),
            ("b", random(Shape::new(1, 3, 3, 3), &mut rng)),
        ],
        Shape::new(1, 4, 3, 3),
        &mut rng,
    );
    run("concat_split", c, &|g, v| {
        let cat = g.concat_channels(&[v[0], v[1]])?;
        let parts = g.split_channels(cat, &[1, 4])?;
        Ok(parts[1])
    })?;

    let c = case(
        vec![
            ("stream", random(Shape::new(2, 3, 4, 4), &mut rng)),
            ("gate", random(Shape::new(2, 1, 4, 4), &mut rng)),
        ],
        Shape::new(2, 3, 4, 4),
        &mut rng,
    );
    run("gated_product", c, &|g, v| {
        let m = g.mul_channel(v[0], v[1])?;
        g.add(m, v[0])
    })?;

    let target = random(Shape::new(1, 2, 3, 3), &mut rng);
    let c = case(vec![("pred", random(Shape::new(1, 2, 3, 3), &mut rng))], Shape::scalar(), &mut rng);
    run("mse", c, &move |g, v| {
        let t = g.input(target.clone());
        g.mse(v[0], t)
    })?;

    let labels = Tensor::from_fn(Shape::new(1, 1, 3, 3), |_, _, y, x| ((x * 3 + y) % 2) as f64);
    let c = case(
        vec![(
            "prob",
            Tensor::from_fn(Shape::new(1, 1, 3, 3), |_, _, y, x| 0.1 + 0.09 * (y * 3 + x) as f64),
        )],
        Shape::scalar(),
        &mut rng,
    );
    run("bce", c, &move |g, v| {
        let t = g.input(labels.clone());
        g.bce(v[0], t, 1e-7)
    })?;

    Ok(out)
}

/// End-to-end check of the combined objective through a small full model
/// in double precision. `samples` entries are probed per parameter tensor.
pub fn model_gradient_check(cfg: &ModelConfig, seed: u64, samples: usize, rel_tol: f64) -> Result<GradCheckReport> {
    let (net, store) = Network::build(cfg, seed)?;
    let mut store = store.cast::<f64>();
    let s = cfg.input_size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
    // Zero biases behind dead channels put pre-activations exactly on the
    // ReLU kink, where central differences see half a slope.
    let biases: Vec<_> = store.ids().filter(|&id| store.name(id).ends_with(".bias")).collect();
    for id in biases {
        for b in store.get_mut(id).data_mut() {
            let m = rng.gen_range(0.02..0.1);
            *b = if rng.gen_bool(0.5) { m } else { -m };
        }
    }
    let input = Tensor::from_fn(Shape::new(1, 3, s, s), |_, _, _, _| rng.gen_range(0.0..1.0));
    let gt = Tensor::from_fn(Shape::new(1, 2, s, s), |_, _, _, _| rng.gen_range(-0.9..0.9));
    let edges = Tensor::from_fn(Shape::new(1, 1, s, s), |_, _, _, _| if rng.gen_bool(0.2) { 1.0 } else { 0.0 });
    let objective = ObjectiveConfig::default();
    let check = GradCheckConfig {
        step: 1e-5,
        rel_tol,
        abs_floor: 1e-6,
        samples_per_param: Some(samples),
        seed,
    };
    grad_check(&store, &check, |g, st| {
        let x = g.input(input.clone());
        let out = net.forward(g, st, x)?;
        let t = g.input(gt.clone());
        let e = g.input(edges.clone());
        Ok(combined_loss(g, &out, t, Some(e), &objective)?.combined)
    })
}

/// Outcome of one self-test item.
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

fn item(name: &str, passed: bool, detail: String) -> CheckResult {
    CheckResult {
        name: name.to_string(),
        passed,
        detail,
    }
}

/// Worst `|compose(F, invert(F)) - id|` in pixels, skipping pixels where
/// the composition is undefined.
pub fn round_trip_error_px(forward: &WarpGrid) -> Result<f64> {
    let inv = invert_grid(forward)?;
    Ok(compose(forward, &inv).max_identity_error_px())
}

/// The self-test run: grid identities, synthesis round trips, metric and
/// loss oracles, layer gradients, a small end-to-end gradient check and a
/// checkpoint round trip. Needs no external data.
pub fn selftest(seed: u64) -> Result<Vec<CheckResult>> {
    let mut results = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let page = crate::synth::synthetic_page(128, &mut rng);

    let same = sample(&page, &WarpGrid::identity(128, 128), &black(3))?;
    let diff = same
        .data()
        .iter()
        .zip(page.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f32, f32::max);
    results.push(item("identity sampling", diff <= 1e-6, format!("max diff {diff:.2e}")));

    let cfg = SynthConfig::default();
    let mut worst_ssim = f64::INFINITY;
    let mut worst_px: f64 = 0.0;
    for i in 0..4 {
        let (s, _) = generate_sample(i, seed, &cfg, &ImageSource::Builtin, &ImageSource::Builtin)?;
        worst_ssim = worst_ssim.min(reconstruction_ssim(&s)?);
        worst_px = worst_px.max(round_trip_error_px(&s.gt_grid)?);
    }
    results.push(item(
        "synthesis round trip",
        worst_ssim >= 0.9 && worst_px <= 2.0,
        format!("min ssim {worst_ssim:.4}, max inverse error {worst_px:.3} px"),
    ));

    let gray = page.to_gray();
    let s1 = ssim(&gray, &gray)?;
    let m1 = ms_ssim(&page, &page)?;
    let wa = weighted_average(&[0.8, 0.9, 0.95, 0.99, 1.0]);
    let wa_oracle = (0.0448 * 0.8 + 0.2856 * 0.9 + 0.3001 * 0.95 + 0.2363 * 0.99 + 0.1333) / 1.0001;
    let (a, b) = (Image::filled(32, 32, 1, 0.3), Image::filled(32, 32, 1, 0.31));
    let c1 = (0.01f64).powi(2);
    let lum = (2.0 * 0.3 * 0.31 + c1) / (0.09 + 0.31f64.powi(2) + c1);
    let sc = ssim(&a, &b)?;
    results.push(item(
        "metric oracles",
        (s1 - 1.0).abs() <= 1e-9 && (m1 - 1.0).abs() <= 1e-6 && (wa - wa_oracle).abs() <= 1e-12 && (sc - lum).abs() < 1e-6,
        format!("ssim(x,x) {s1:.12}, ms-ssim(x,x) {m1:.9}, weighted {wa:.6}, constant pair {sc:.6} vs {lum:.6}"),
    ));

    let l = combine(0.01, 2f64.ln(), 0.9);
    results.push(item(
        "loss arithmetic",
        (l - (0.01 + 0.9 * 2f64.ln())).abs() < 1e-12 && combine(0.01, 2f64.ln(), 0.0) == 0.01,
        format!("0.01 + 0.9 ln 2 = {l:.6}"),
    ));

    let layers = layer_gradient_suite(seed, 1e-4)?;
    let worst = layers.iter().map(|c| c.report.max_rel_error()).fold(0.0, f64::max);
    let failed: Vec<&str> = layers.iter().filter(|c| !c.report.passed()).map(|c| c.name).collect();
    results.push(item(
        "layer gradients",
        failed.is_empty(),
        format!(
            "{} layer types, max rel error {worst:.2e}{}",
            layers.len(),
            if failed.is_empty() {
                String::new()
            } else {
                format!(", failing {failed:?}")
            }
        ),
    ));

    let tiny = ModelConfig {
        input_size: 32,
        scale: 0.0625,
        ..ModelConfig::default()
    };
    let report = model_gradient_check(&tiny, seed, 2, 1e-3)?;
    results.push(item(
        "model gradients",
        report.passed(),
        format!("{} tensors, max rel error {:.2e}", report.entries.len(), report.max_rel_error()),
    ));

    let (_, store) = Network::build(&tiny, seed)?;
    let decoded = checkpoint::decode(&checkpoint::encode(&store), std::path::Path::new("<memory>"))?;
    results.push(item(
        "checkpoint round trip",
        decoded.same_values(&store),
        format!("{} tensors", store.len()),
    ));
    Ok(results)
}
