//! Stacked U-Net dewarping network with a gated edge branch and a
//! bifurcated grid decoder.
//!
//! The architecture object only holds parameter handles; values live in a
//! [`ParamStore`], so the same network runs in `f32` for training and in
//! `f64` for gradient checks.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{parse_bool, parse_kv, parse_value, unknown};
use crate::error::{Error, Result};
use crate::nn::{checkpoint, ActivationMode, Element, Graph, LayerParams, ParamStore, Shape, Tensor, Var};

const STAGES: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub input_size: usize,
    /// Width of the first encoder features `X`.
    pub base_channels: usize,
    pub gated_channels: usize,
    pub scale: f64,
    pub gate_enabled: bool,
    pub bifurcated: bool,
    pub decoder_shared_weights: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_size: 256,
            base_channels: 32,
            gated_channels: 16,
            scale: 1.0,
            gate_enabled: true,
            bifurcated: true,
            decoder_shared_weights: false,
        }
    }
}

impl ModelConfig {
    /// Scaled channel count, never below one.
    pub fn width(&self, channels: usize) -> usize {
        ((channels as f64 * self.scale).round() as usize).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || !self.input_size.is_multiple_of(32) {
            return Err(Error::Config(format!(
                "input_size {} must be a positive multiple of 32",
                self.input_size
            )));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::Config("scale must be positive".into()));
        }
        if self.base_channels == 0 || self.gated_channels == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        if self.decoder_shared_weights && !self.bifurcated {
            return Err(Error::Config("decoder_shared_weights requires bifurcated".into()));
        }
        Ok(())
    }

    pub fn x_channels(&self) -> usize {
        self.width(self.base_channels)
    }

    pub fn o_channels(&self) -> usize {
        self.width(2)
    }

    pub fn go_channels(&self) -> usize {
        self.width(self.gated_channels)
    }

    pub fn u1_channels(&self) -> usize {
        self.o_channels() + self.go_channels() + self.x_channels()
    }

    /// Encoder stage widths: `base * 2^k` for stages 1..=5.
    pub fn stage_channels(&self) -> [usize; STAGES] {
        std::array::from_fn(|k| self.width(self.base_channels << (k + 1)))
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "input_size" => self.input_size = parse_value(key, value)?,
            "base_channels" => self.base_channels = parse_value(key, value)?,
            "gated_channels" => self.gated_channels = parse_value(key, value)?,
            "scale" => self.scale = parse_value(key, value)?,
            "gate_enabled" => self.gate_enabled = parse_bool(key, value)?,
            "bifurcated" => self.bifurcated = parse_bool(key, value)?,
            "decoder_shared_weights" => self.decoder_shared_weights = parse_bool(key, value)?,
            _ => return Err(unknown(key)),
        }
        Ok(())
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("input_size", self.input_size.to_string()),
            ("base_channels", self.base_channels.to_string()),
            ("gated_channels", self.gated_channels.to_string()),
            ("scale", self.scale.to_string()),
            ("gate_enabled", self.gate_enabled.to_string()),
            ("bifurcated", self.bifurcated.to_string()),
            ("decoder_shared_weights", self.decoder_shared_weights.to_string()),
        ]
    }
}

/// Where the model configuration of a checkpoint lives: same stem, `.config` extension.
pub fn config_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("config")
}

/// Writes parameters and the configuration sidecar.
pub fn save_model(path: &Path, cfg: &ModelConfig, store: &ParamStore<f32>) -> Result<()> {
    checkpoint::save(store, path)?;
    let text: String = cfg.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
    fs::write(config_path(path), text)?;
    Ok(())
}

/// Rebuilds the network described by the sidecar and restores its parameters.
pub fn load_model(path: &Path) -> Result<(Network, ParamStore<f32>)> {
    let loaded = checkpoint::load(path)?;
    let sidecar = config_path(path);
    let text = fs::read_to_string(&sidecar).map_err(|e| Error::format(&sidecar, format!("missing model configuration: {e}")))?;
    let mut cfg = ModelConfig::default();
    for (k, v) in parse_kv(&text)? {
        cfg.set(&k, &v).map_err(|e| Error::format(&sidecar, e.to_string()))?;
    }
    let (net, mut store) = Network::build(&cfg, 0)?;
    checkpoint::restore_into(&mut store, &loaded, path)?;
    Ok((net, store))
}

#[derive(Clone, Debug)]
struct Encoder {
    stem: [LayerParams; 2],
    stages: Vec<[LayerParams; 2]>,
    /// One conv per resolution level 0..=4 on the way to the decoder.
    skips: Vec<LayerParams>,
}

#[derive(Clone, Debug)]
struct Decoder {
    /// `(after-upsample conv, fusion conv)` from the coarsest level up.
    stages: Vec<[LayerParams; 2]>,
    head: LayerParams,
}

#[derive(Clone, Debug)]
struct Gcl {
    attention: LayerParams,
    conv: LayerParams,
}

#[derive(Clone, Debug)]
struct Gated {
    stream: LayerParams,
    gcls: Vec<Gcl>,
    out: LayerParams,
    edge: LayerParams,
}

/// Parameter layout of the whole network.
#[derive(Clone, Debug)]
pub struct Network {
    cfg: ModelConfig,
    primary: Encoder,
    primary_decoder: Decoder,
    gated: Option<Gated>,
    secondary: Encoder,
    decoders: Vec<Decoder>,
}

/// Every named intermediate of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Trace {
    pub x: Var,
    pub l2: Var,
    pub l3: Var,
    pub l4: Var,
    pub l5: Var,
    pub b: Var,
    pub o: Var,
    pub go: Var,
    pub u1: Var,
    pub b1: Option<Var>,
    pub b2: Option<Var>,
    pub o1: Option<Var>,
    pub o2: Option<Var>,
}

impl ModelOutput {
    /// The published tensor symbols in forward order; absent branches are skipped.
    pub fn named(&self) -> Vec<(&'static str, Var)> {
        let t = &self.trace;
        let mut out = vec![
            ("X", t.x),
            ("L2", t.l2),
            ("L3", t.l3),
            ("L4", t.l4),
            ("L5", t.l5),
            ("B", t.b),
            ("O", t.o),
            ("Go", t.go),
            ("U1", t.u1),
        ];
        for (name, v) in [("B1", t.b1), ("B2", t.b2), ("O1", t.o1), ("O2", t.o2)] {
            out.extend(v.map(|v| (name, v)));
        }
        out.push(("g", self.grid));
        out
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ModelOutput {
    /// `B x 2 x S x S`, tanh range.
    pub grid: Var,
    /// `B x 1 x S x S` pre-sigmoid; absent without the gated branch.
    pub edge_logits: Option<Var>,
    /// `Go`; zeros without the gated branch.
    pub edge_features: Var,
    pub trace: Trace,
}

fn conv(
    store: &mut ParamStore<f32>,
    rng: &mut ChaCha8Rng,
    name: &str,
    cin: usize,
    cout: usize,
    k: usize,
    act: ActivationMode,
) -> Result<LayerParams> {
    let mut l = store.add_conv(name, cin, cout, k, true, rng)?;
    l.activation = act;
    Ok(l)
}

fn build_encoder(
    store: &mut ParamStore<f32>,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    cin: usize,
    stem_width: usize,
    widths: [usize; STAGES],
) -> Result<Encoder> {
    let relu = ActivationMode::Relu;
    let stem = [
        conv(store, rng, &format!("{prefix}.stem.0"), cin, stem_width, 3, relu)?,
        conv(store, rng, &format!("{prefix}.stem.1"), stem_width, stem_width, 3, relu)?,
    ];
    let mut stages = Vec::with_capacity(STAGES);
    let mut prev = stem_width;
    for (k, &w) in widths.iter().enumerate() {
        stages.push([
            conv(store, rng, &format!("{prefix}.enc{}.0", k + 1), prev, w, 3, relu)?,
            conv(store, rng, &format!("{prefix}.enc{}.1", k + 1), w, w, 3, relu)?,
        ]);
        prev = w;
    }
    let mut skips = Vec::with_capacity(STAGES);
    for (level, &w) in std::iter::once(&stem_width).chain(&widths[..STAGES - 1]).enumerate() {
        skips.push(conv(store, rng, &format!("{prefix}.skip{level}"), w, w, 3, relu)?);
    }
    Ok(Encoder { stem, stages, skips })
}

/// `skip_widths[level]` for levels 0..=4; decoding starts from `cin` at level 5.
fn build_decoder(
    store: &mut ParamStore<f32>,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    cin: usize,
    skip_widths: [usize; STAGES],
    cout: usize,
) -> Result<Decoder> {
    let relu = ActivationMode::Relu;
    let mut stages = Vec::with_capacity(STAGES);
    let mut prev = cin;
    for d in 0..STAGES {
        let level = STAGES - 1 - d;
        let w = skip_widths[level];
        stages.push([
            conv(store, rng, &format!("{prefix}.up{}", d + 1), prev, w, 3, relu)?,
            conv(store, rng, &format!("{prefix}.fuse{}", d + 1), 2 * w, w, 3, relu)?,
        ]);
        prev = w;
    }
    let head = conv(store, rng, &format!("{prefix}.head"), prev, cout, 1, ActivationMode::None)?;
    Ok(Decoder { stages, head })
}

impl Network {
    /// Lays out the network and initializes its parameters (He-uniform
    /// weights, zero biases) from `seed`.
    pub fn build(cfg: &ModelConfig, seed: u64) -> Result<(Network, ParamStore<f32>)> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let widths = cfg.stage_channels();
        let x = cfg.x_channels();

        let primary = build_encoder(&mut store, &mut rng, "primary", 3, x, widths)?;
        let skip_w = [x, widths[0], widths[1], widths[2], widths[3]];
        let primary_decoder = build_decoder(&mut store, &mut rng, "primary.dec", widths[4], skip_w, cfg.o_channels())?;

        let gated = if cfg.gate_enabled {
            let g = cfg.go_channels();
            let gcls = [(1, widths[2]), (2, widths[3])]
                .iter()
                .map(|&(k, feat)| -> Result<Gcl> {
                    Ok(Gcl {
                        attention: conv(
                            &mut store,
                            &mut rng,
                            &format!("gated.gcl{k}.att"),
                            g + feat,
                            1,
                            1,
                            ActivationMode::Sigmoid,
                        )?,
                        conv: conv(&mut store, &mut rng, &format!("gated.gcl{k}.conv"), g, g, 3, ActivationMode::Relu)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Some(Gated {
                stream: conv(&mut store, &mut rng, "gated.stream", widths[0], g, 1, ActivationMode::None)?,
                gcls,
                out: conv(&mut store, &mut rng, "gated.out", g, g, 1, ActivationMode::None)?,
                edge: conv(&mut store, &mut rng, "gated.edge", g, 1, 1, ActivationMode::None)?,
            })
        } else {
            None
        };

        let x2 = cfg.width(2 * cfg.base_channels);
        let secondary = build_encoder(&mut store, &mut rng, "secondary", cfg.u1_channels(), x2, widths)?;
        let skip2 = [x2, widths[0], widths[1], widths[2], widths[3]];
        let decoders = if !cfg.bifurcated {
            vec![build_decoder(&mut store, &mut rng, "secondary.dec", widths[4], skip2, 2)?]
        } else {
            let half = widths[4] / 2;
            if half == 0 || !widths[4].is_multiple_of(2) {
                return Err(Error::Config(format!("bottleneck width {} cannot be split in two", widths[4])));
            }
            if cfg.decoder_shared_weights {
                let d = build_decoder(&mut store, &mut rng, "secondary.dec", half, skip2, 1)?;
                vec![d.clone(), d]
            } else {
                vec![
                    build_decoder(&mut store, &mut rng, "secondary.dec1", half, skip2, 1)?,
                    build_decoder(&mut store, &mut rng, "secondary.dec2", half, skip2, 1)?,
                ]
            }
        };

        Ok((
            Network {
                cfg: cfg.clone(),
                primary,
                primary_decoder,
                gated,
                secondary,
                decoders,
            },
            store,
        ))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    fn encode<'p, T: Element>(&self, enc: &Encoder, g: &mut Graph<'p, T>, store: &'p ParamStore<T>, input: Var) -> Result<(Vec<Var>, Var)> {
        let mut h = g.layer(store, &enc.stem[0], input, 1)?;
        h = g.layer(store, &enc.stem[1], h, 1)?;
        let mut feats = vec![h];
        for stage in &enc.stages {
            let p = g.max_pool2x2(h)?;
            let a = g.layer(store, &stage[0], p, 1)?;
            h = g.layer(store, &stage[1], a, 1)?;
            feats.push(h);
        }
        let bottleneck = feats.pop().expect("five stages");
        Ok((feats, bottleneck))
    }

    fn skips<'p, T: Element>(&self, enc: &Encoder, g: &mut Graph<'p, T>, store: &'p ParamStore<T>, feats: &[Var]) -> Result<Vec<Var>> {
        enc.skips.iter().zip(feats).map(|(l, &f)| g.layer(store, l, f, 1)).collect()
    }

    fn decode<'p, T: Element>(
        &self,
        dec: &Decoder,
        g: &mut Graph<'p, T>,
        store: &'p ParamStore<T>,
        bottom: Var,
        skips: &[Var],
    ) -> Result<Var> {
        let mut h = bottom;
        for (d, stage) in dec.stages.iter().enumerate() {
            let skip = skips[STAGES - 1 - d];
            let up = g.upsample2x(h)?;
            let a = g.layer(store, &stage[0], up, 1)?;
            let cat = g.concat_channels(&[a, skip])?;
            h = g.layer(store, &stage[1], cat, 1)?;
        }
        g.layer(store, &dec.head, h, 0)
    }

    /// Gated convolutional layer: `relu(conv3x3(s * a + s))` with
    /// `a = sigmoid(conv1x1([s, resize(feat)]))`.
    ///
    /// The 1x1 attention kernel is split into its stream and feature parts;
    /// the feature part is applied before resizing, which is the same linear
    /// map as resizing first.
    fn gcl<'p, T: Element>(&self, layer: &Gcl, g: &mut Graph<'p, T>, store: &'p ParamStore<T>, stream: Var, feat: Var) -> Result<Var> {
        let s = g.shape(stream);
        let gc = s.channels;
        let fc = g.shape(feat).channels;
        let w = g.param(store, layer.attention.weight.expect("attention weight"));
        let w_s = g.slice_channels(w, 0, gc)?;
        let w_f = g.slice_channels(w, gc, fc)?;
        let bias = layer.attention.bias.map(|b| g.param(store, b));
        let from_stream = g.conv2d(stream, w_s, bias, 1, 0)?;
        let from_feat = g.conv2d(feat, w_f, None, 1, 0)?;
        let from_feat = g.resize_bilinear(from_feat, s.height, s.width)?;
        let logits = g.add(from_stream, from_feat)?;
        let alpha = g.sigmoid(logits);
        let gated = g.mul_channel(stream, alpha)?;
        let pre = g.add(gated, stream)?;
        g.layer(store, &layer.conv, pre, 1)
    }

    /// Full forward pass on a `B x 3 x S x S` input in `[0, 1]`.
    pub fn forward<'p, T: Element>(&self, g: &mut Graph<'p, T>, store: &'p ParamStore<T>, input: Var) -> Result<ModelOutput> {
        let s = g.shape(input);
        let size = self.cfg.input_size;
        if s.channels != 3 || s.height != size || s.width != size {
            return Err(Error::dim(format!("model expects Bx3x{size}x{size}, got {s}")));
        }

        let (feats, b) = self.encode(&self.primary, g, store, input)?;
        let skips = self.skips(&self.primary, g, store, &feats)?;
        let o = self.decode(&self.primary_decoder, g, store, b, &skips)?;
        let (x, l2, l3, l4, l5) = (feats[0], feats[1], feats[2], feats[3], feats[4]);

        let (go, edge_logits) = match &self.gated {
            Some(gated) => {
                let stream = g.layer(store, &gated.stream, l2, 0)?;
                let mut stream = g.resize_bilinear(stream, size, size)?;
                for (layer, feat) in gated.gcls.iter().zip([l4, l5]) {
                    stream = self.gcl(layer, g, store, stream, feat)?;
                }
                let go = g.layer(store, &gated.out, stream, 0)?;
                let edge = g.layer(store, &gated.edge, go, 0)?;
                (go, Some(edge))
            }
            None => {
                let zeros = Tensor::zeros(Shape::new(s.batch, self.cfg.go_channels(), size, size));
                (g.input(zeros), None)
            }
        };

        let u1 = g.concat_channels(&[o, go, x])?;
        let (feats2, b2nd) = self.encode(&self.secondary, g, store, u1)?;
        let skips2 = self.skips(&self.secondary, g, store, &feats2)?;

        let (grid_raw, b1, b2, o1, o2) = if self.cfg.bifurcated {
            let half = g.shape(b2nd).channels / 2;
            let parts = g.split_channels(b2nd, &[half, half])?;
            let o1 = self.decode(&self.decoders[0], g, store, parts[0], &skips2)?;
            let o2 = self.decode(&self.decoders[1], g, store, parts[1], &skips2)?;
            let cat = g.concat_channels(&[o1, o2])?;
            (cat, Some(parts[0]), Some(parts[1]), Some(o1), Some(o2))
        } else {
            let out = self.decode(&self.decoders[0], g, store, b2nd, &skips2)?;
            (out, None, None, None, None)
        };
        let grid = g.tanh(grid_raw);

        Ok(ModelOutput {
            grid,
            edge_logits,
            edge_features: go,
            trace: Trace {
                x,
                l2,
                l3,
                l4,
                l5,
                b,
                o,
                go,
                u1,
                b1,
                b2,
                o1,
                o2,
            },
        })
    }

    pub fn summary(&self, store: &ParamStore<f32>) -> ModelSummary {
        let count = |prefix: &str| store.count_with_prefix(prefix);
        ModelSummary {
            total: store.num_elements(),
            tensors: store.len(),
            primary: count("primary."),
            gated: count("gated."),
            secondary_encoder: count("secondary.stem") + count("secondary.enc") + count("secondary.skip"),
            secondary_decoders: count("secondary.dec"),
        }
    }
}

/// Parameter counts by component.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelSummary {
    pub total: usize,
    pub tensors: usize,
    pub primary: usize,
    pub gated: usize,
    pub secondary_encoder: usize,
    pub secondary_decoders: usize,
}

impl fmt::Display for ModelSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "primary u-net        {:>12}", self.primary)?;
        writeln!(f, "gated branch         {:>12}", self.gated)?;
        writeln!(f, "secondary encoder    {:>12}", self.secondary_encoder)?;
        writeln!(f, "secondary decoders   {:>12}", self.secondary_decoders)?;
        write!(f, "total ({} tensors)   {:>12}", self.tensors, self.total)
    }
}
