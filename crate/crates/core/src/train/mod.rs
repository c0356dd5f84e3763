//! Mini-batch training, evaluation and the ablation presets.

mod eval;
mod optim;

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use eval::{evaluate, EvalSummary};
pub use optim::{Optimizer, OptimizerKind, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};

use crate::config::{parse_kv, parse_value, read_kv, unknown};
use crate::error::{Error, Result};
use crate::grid::resize_grid;
use crate::model::{save_model, ModelConfig, Network};
use crate::nn::{Graph, ParamStore, Shape, Tensor};
use crate::objective::{combined_loss, ObjectiveConfig};
use crate::raster::Image;
use crate::synth::{Dataset, DocumentSample};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub model: ModelConfig,
    pub objective: ObjectiveConfig,
    /// Checkpoint every this many steps; 0 writes only the initial and final ones.
    pub checkpoint_every: usize,
    /// Stop after this many steps even mid-epoch; 0 means no limit.
    pub max_steps: usize,
    /// Fraction of the dataset held out for validation (rounded down).
    pub val_fraction: f64,
    pub data_path: PathBuf,
    pub out_dir: PathBuf,
    /// Defaults to `out_dir/train_log.csv`.
    pub log_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 4,
            learning_rate: 1e-4,
            optimizer: OptimizerKind::Adam,
            seed: 0,
            model: ModelConfig::default(),
            objective: ObjectiveConfig::default(),
            checkpoint_every: 0,
            max_steps: 0,
            val_fraction: 0.1,
            data_path: PathBuf::from("data"),
            out_dir: PathBuf::from("run"),
            log_path: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("val_fraction must lie in [0, 1)".into()));
        }
        self.model.validate()?;
        self.objective.validate()
    }

    /// Sets one key. Model and objective fields take an optional `model.` or
    /// `objective.` prefix.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "epochs" => self.epochs = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "learning_rate" => self.learning_rate = parse_value(key, value)?,
            "optimizer" => self.optimizer = value.parse()?,
            "seed" => self.seed = parse_value(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse_value(key, value)?,
            "max_steps" => self.max_steps = parse_value(key, value)?,
            "val_fraction" => self.val_fraction = parse_value(key, value)?,
            "data_path" => self.data_path = PathBuf::from(value),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "log_path" => self.log_path = (!value.is_empty()).then(|| PathBuf::from(value)),
            _ => {
                if let Some(k) = key.strip_prefix("model.") {
                    return self.model.set(k, value);
                }
                if let Some(k) = key.strip_prefix("objective.") {
                    return self.objective.set(k, value);
                }
                return self
                    .model
                    .set(key, value)
                    .or_else(|_| self.objective.set(key, value))
                    .map_err(|_| unknown(key));
            }
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        for (k, v) in read_kv(path)? {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (k, v) in parse_kv(text)? {
            cfg.set(&k, &v)?;
        }
        Ok(cfg)
    }

    pub fn log_file(&self) -> PathBuf {
        self.log_path.clone().unwrap_or_else(|| self.out_dir.join("train_log.csv"))
    }

    /// Every field as `key = value` lines, parseable by [`TrainConfig::parse`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let top = [
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("optimizer", self.optimizer.to_string()),
            ("seed", self.seed.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("max_steps", self.max_steps.to_string()),
            ("val_fraction", self.val_fraction.to_string()),
            ("data_path", self.data_path.display().to_string()),
            ("out_dir", self.out_dir.display().to_string()),
            ("log_path", self.log_file().display().to_string()),
        ];
        for (k, v) in top {
            let _ = writeln!(s, "{k} = {v}");
        }
        for (k, v) in self.model.entries() {
            let _ = writeln!(s, "model.{k} = {v}");
        }
        for (k, v) in self.objective.entries() {
            let _ = writeln!(s, "objective.{k} = {v}");
        }
        s
    }
}

/// The four architecture variants compared in the ablation study, all
/// derived from `base`.
pub fn ablation_presets(base: &ModelConfig) -> Vec<(&'static str, ModelConfig)> {
    let full = ModelConfig {
        gate_enabled: true,
        bifurcated: true,
        decoder_shared_weights: false,
        ..base.clone()
    };
    vec![
        ("full", full.clone()),
        (
            "no_gate",
            ModelConfig {
                gate_enabled: false,
                ..full.clone()
            },
        ),
        (
            "shared_decoders",
            ModelConfig {
                decoder_shared_weights: true,
                ..full.clone()
            },
        ),
        ("single_decoder", ModelConfig { bifurcated: false, ..full }),
    ]
}

pub fn preset(name: &str, base: &ModelConfig) -> Result<ModelConfig> {
    ablation_presets(base)
        .into_iter()
        .find(|(n, _)| *n == name)
        .map(|(_, c)| c)
        .ok_or_else(|| Error::Config(format!("unknown preset {name:?} (full, no_gate, shared_decoders, single_decoder)")))
}

/// Seed-stable split by index: a `val_fraction` share (rounded down) of a
/// seeded permutation is held out. Both lists come back sorted.
pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    perm.shuffle(&mut rng);
    let n_val = (n as f64 * val_fraction).floor() as usize;
    let mut val = perm[..n_val].to_vec();
    let mut train = perm[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

/// Model-resolution tensors for a list of samples.
pub struct Batch {
    pub input: Tensor<f32>,
    pub grid: Tensor<f32>,
    pub edges: Tensor<f32>,
}

/// Binary edge map at `size`: a pixel is an edge when any source pixel under
/// it is.
fn edges_at(edge_mask: &Image, size: usize) -> Vec<f32> {
    let small = edge_mask.to_gray().resize(size, size);
    small.data().iter().map(|&v| if v > 1e-3 { 1.0 } else { 0.0 }).collect()
}

pub fn make_batch(samples: &[DocumentSample], size: usize) -> Result<Batch> {
    let n = samples.len();
    let mut input = Vec::with_capacity(n * 3 * size * size);
    let mut grid = Vec::with_capacity(n * 2 * size * size);
    let mut edges = Vec::with_capacity(n * size * size);
    for s in samples {
        input.extend_from_slice(s.warped.to_rgb().resize(size, size).to_tensor::<f32>().data());
        let g = if s.gt_grid.width() == size && s.gt_grid.height() == size {
            s.gt_grid.clone()
        } else {
            resize_grid(&s.gt_grid, size, size)?
        };
        grid.extend_from_slice(g.to_tensor::<f32>().data());
        edges.extend(edges_at(&s.edge_mask, size));
    }
    Ok(Batch {
        input: Tensor::from_vec(Shape::new(n, 3, size, size), input)?,
        grid: Tensor::from_vec(Shape::new(n, 2, size, size), grid)?,
        edges: Tensor::from_vec(Shape::new(n, 1, size, size), edges)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainLogRecord {
    pub step: usize,
    pub epoch: usize,
    pub grid_loss: f64,
    /// Zero when the model has no edge head.
    pub edge_loss: f64,
    pub combined_loss: f64,
    /// Seconds since training started.
    pub wall_time: f64,
}

pub const LOG_HEADER: &str = "step,epoch,grid_loss,edge_loss,combined_loss,wall_time";

impl TrainLogRecord {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.step, self.epoch, self.grid_loss, self.edge_loss, self.combined_loss, self.wall_time
        )
    }
}

/// Losses of one forward/backward step, accumulated into the store's
/// gradient slots.
pub struct StepLosses {
    pub grid: f64,
    pub edge: f64,
    pub combined: f64,
}

pub fn train_step(net: &Network, store: &mut ParamStore<f32>, batch: &Batch, objective: &ObjectiveConfig) -> Result<StepLosses> {
    let (losses, grads) = {
        let mut g = Graph::new();
        let x = g.input(batch.input.clone());
        let out = net.forward(&mut g, store, x)?;
        let gt = g.input(batch.grid.clone());
        let edges = g.input(batch.edges.clone());
        let terms = combined_loss(&mut g, &out, gt, Some(edges), objective)?;
        let scalar = |v| g.value(v).data()[0] as f64;
        let losses = StepLosses {
            grid: scalar(terms.grid),
            edge: terms.edge.map(scalar).unwrap_or(0.0),
            combined: scalar(terms.combined),
        };
        if !losses.combined.is_finite() {
            return Ok(losses);
        }
        (losses, g.backward(terms.combined)?)
    };
    store.accumulate(&grads)?;
    Ok(losses)
}

pub struct TrainOutcome {
    pub network: Network,
    pub store: ParamStore<f32>,
    pub log: Vec<TrainLogRecord>,
    /// Last checkpoint written: the final one, or the initial one after zero steps.
    pub checkpoint: PathBuf,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

/// Trains on `dataset` per `cfg`, writing checkpoints, their configuration
/// sidecars and the CSV log under `cfg.out_dir`. `progress` sees every log
/// record as it is produced.
pub fn train(cfg: &TrainConfig, dataset: &Dataset, mut progress: impl FnMut(&TrainLogRecord)) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() && cfg.epochs > 0 {
        return Err(Error::Usage(format!("dataset {} is empty", dataset.dir().display())));
    }
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join("train.config"), cfg.to_text())?;
    let (network, mut store) = Network::build(&cfg.model, cfg.seed)?;
    let size = cfg.model.input_size;
    let (train_idx, val_idx) = split_indices(dataset.len(), cfg.val_fraction, cfg.seed);
    if train_idx.is_empty() && cfg.epochs > 0 {
        return Err(Error::Usage("no training samples left after the validation split".into()));
    }

    let mut checkpoint = cfg.out_dir.join("initial.gbsu");
    save_model(&checkpoint, &cfg.model, &store)?;
    let mut log_file = fs::File::create(cfg.log_file())?;
    writeln!(log_file, "{LOG_HEADER}")?;

    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, &store);
    let mut log = Vec::new();
    let start = Instant::now();
    let mut step = 0usize;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    'epochs: for epoch in 0..cfg.epochs {
        let mut order = train_idx.clone();
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            if cfg.max_steps > 0 && step >= cfg.max_steps {
                break 'epochs;
            }
            let samples = chunk.iter().map(|&k| dataset.load(k)).collect::<Result<Vec<_>>>()?;
            let batch = make_batch(&samples, size)?;
            store.zero_grads();
            let problem = match train_step(&network, &mut store, &batch, &cfg.objective) {
                Ok(l) if l.combined.is_finite() && store.grads_finite() => Ok(l),
                Ok(_) => Err("non-finite loss or gradient".to_string()),
                Err(Error::Numeric(msg)) => Err(msg),
                Err(e) => return Err(e),
            };
            let losses = match problem {
                Ok(l) => l,
                Err(msg) => {
                    let path = cfg.out_dir.join("diagnostic.gbsu");
                    save_model(&path, &cfg.model, &store)?;
                    return Err(Error::Numeric(format!(
                        "{msg} at step {} (epoch {epoch}); parameters saved to {}",
                        step + 1,
                        path.display()
                    )));
                }
            };
            opt.step(&mut store);
            step += 1;
            let rec = TrainLogRecord {
                step,
                epoch,
                grid_loss: losses.grid,
                edge_loss: losses.edge,
                combined_loss: losses.combined,
                wall_time: start.elapsed().as_secs_f64(),
            };
            writeln!(log_file, "{}", rec.csv())?;
            progress(&rec);
            log.push(rec);
            if cfg.checkpoint_every > 0 && step.is_multiple_of(cfg.checkpoint_every) {
                save_model(&cfg.out_dir.join(format!("step_{step:06}.gbsu")), &cfg.model, &store)?;
            }
        }
    }
    log_file.flush()?;
    store.zero_grads();
    if step > 0 {
        checkpoint = cfg.out_dir.join("final.gbsu");
        save_model(&checkpoint, &cfg.model, &store)?;
    }
    Ok(TrainOutcome {
        network,
        store,
        log,
        checkpoint,
        train_indices: train_idx,
        val_indices: val_idx,
    })
}

/// Reads a log written by [`train`].
pub fn read_log(path: &Path) -> Result<Vec<TrainLogRecord>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(LOG_HEADER) {
        return Err(Error::format(path, "not a training log"));
    }
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let bad = || Error::format(path, format!("bad log line {l:?}"));
            if f.len() != 6 {
                return Err(bad());
            }
            let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad());
            Ok(TrainLogRecord {
                step: f[0].parse().map_err(|_| bad())?,
                epoch: f[1].parse().map_err(|_| bad())?,
                grid_loss: num(2)?,
                edge_loss: num(3)?,
                combined_loss: num(4)?,
                wall_time: num(5)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_text_round_trip() {
        let mut cfg = TrainConfig::default();
        cfg.set("model.scale", "0.25").unwrap();
        cfg.set("lambda", "0.5").unwrap();
        cfg.set("input_size", "64").unwrap();
        cfg.set("optimizer", "sgd").unwrap();
        assert!(cfg.set("bogus", "1").is_err());
        let back = TrainConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(back.model, cfg.model);
        assert_eq!(back.objective.lambda, 0.5);
        assert_eq!(back.optimizer, OptimizerKind::Sgd);
        assert!(TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn split_is_stable_and_disjoint() {
        let (t, v) = split_indices(100, 0.1, 7);
        assert_eq!(v.len(), 10);
        assert_eq!(t.len(), 90);
        assert!(v.iter().all(|i| !t.contains(i)));
        assert_eq!(split_indices(100, 0.1, 7), (t, v));
        assert_eq!(split_indices(8, 0.1, 7).1.len(), 0);
    }

    #[test]
    fn presets_differ_only_in_switches() {
        let base = ModelConfig {
            scale: 0.25,
            ..ModelConfig::default()
        };
        let p = ablation_presets(&base);
        assert_eq!(p.len(), 4);
        for (_, c) in &p {
            assert_eq!((c.scale, c.input_size), (0.25, 256));
            c.validate().unwrap();
        }
        assert!(!preset("no_gate", &base).unwrap().gate_enabled);
        assert!(preset("shared_decoders", &base).unwrap().decoder_shared_weights);
        assert!(!preset("single_decoder", &base).unwrap().bifurcated);
        assert!(preset("nope", &base).is_err());
    }
}
