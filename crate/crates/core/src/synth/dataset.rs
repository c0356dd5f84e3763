//! On-disk datasets: numbered PNG/WGRD files plus a tab-separated manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::mesh::{PerturbRanges, Perturbation, WarpKind};
use super::pages::ImageSource;
use super::sample::{synthesize_sample, DocumentSample, Placement, PlacementRanges, WarpSpec};
use crate::config::{parse_range, parse_value, unknown};
use crate::error::{Error, Result};
use crate::grid::WarpGrid;
use crate::raster::Image;

pub const MANIFEST: &str = "manifest.txt";

/// Which deformation kinds a generated sample may contain.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KindMix {
    Mixed,
    FoldOnly,
    CurveOnly,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub size: usize,
    pub mesh_size: usize,
    pub perturbations: (usize, usize),
    pub kinds: KindMix,
    pub ranges: PerturbRanges,
    pub placement: PlacementRanges,
    pub edge_threshold: f32,
    /// Fresh draws tried per sample when a warp turns out degenerate.
    pub attempts: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            size: 256,
            mesh_size: 21,
            perturbations: (1, 4),
            kinds: KindMix::Mixed,
            ranges: PerturbRanges::default(),
            placement: PlacementRanges::default(),
            edge_threshold: 0.2,
            attempts: 5,
        }
    }
}

impl SynthConfig {
    /// Sets one `key = value` configuration entry.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let f = |v: &str| parse_value::<f64>(key, v);
        match key {
            "size" => self.size = parse_value(key, value)?,
            "mesh_size" => self.mesh_size = parse_value(key, value)?,
            "perturbations" => {
                let (lo, hi) = parse_range(key, value)?;
                if lo < 0.0 || hi < lo || lo.fract() != 0.0 || hi.fract() != 0.0 {
                    return Err(Error::Config(format!("perturbations expects integers lo <= hi, got {value}")));
                }
                self.perturbations = (lo as usize, hi as usize);
            }
            "kinds" => {
                self.kinds = match value {
                    "mixed" => KindMix::Mixed,
                    "fold" => KindMix::FoldOnly,
                    "curve" => KindMix::CurveOnly,
                    _ => return Err(Error::Config(format!("kinds must be mixed, fold or curve, got {value:?}"))),
                }
            }
            "edge_threshold" => self.edge_threshold = parse_value(key, value)?,
            "attempts" => self.attempts = parse_value(key, value)?,
            "fold_alpha" => self.ranges.fold_alpha = parse_range(key, value)?,
            "curve_alpha" => self.ranges.curve_alpha = parse_range(key, value)?,
            "displacement" => self.ranges.displacement = parse_range(key, value)?,
            "boundary_limit" => self.ranges.boundary_limit = f(value)?,
            "placement_area" => self.placement.area = parse_range(key, value)?,
            "max_rotation_deg" => self.placement.max_rotation_deg = f(value)?,
            "placement_offset" => self.placement.offset = f(value)?,
            _ => return Err(unknown(key)),
        }
        Ok(())
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let pair = |(a, b): (f64, f64)| format!("{a},{b}");
        let kinds = match self.kinds {
            KindMix::Mixed => "mixed",
            KindMix::FoldOnly => "fold",
            KindMix::CurveOnly => "curve",
        };
        vec![
            ("size", self.size.to_string()),
            ("mesh_size", self.mesh_size.to_string()),
            ("perturbations", format!("{},{}", self.perturbations.0, self.perturbations.1)),
            ("kinds", kinds.to_string()),
            ("edge_threshold", self.edge_threshold.to_string()),
            ("attempts", self.attempts.to_string()),
            ("fold_alpha", pair(self.ranges.fold_alpha)),
            ("curve_alpha", pair(self.ranges.curve_alpha)),
            ("displacement", pair(self.ranges.displacement)),
            ("boundary_limit", self.ranges.boundary_limit.to_string()),
            ("placement_area", pair(self.placement.area)),
            ("max_rotation_deg", self.placement.max_rotation_deg.to_string()),
            ("placement_offset", self.placement.offset.to_string()),
        ]
    }
}

/// One manifest line.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRecord {
    pub index: usize,
    pub seed: u64,
    pub attempt: usize,
    pub warp_seed: u64,
    pub perturbations: Vec<Perturbation>,
    pub placement: Placement,
    pub page: String,
    pub texture: String,
}

impl ManifestRecord {
    pub fn kinds(&self) -> Vec<WarpKind> {
        self.perturbations.iter().map(|p| p.kind).collect()
    }

    fn to_line(&self) -> String {
        let kinds: Vec<String> = self.kinds().iter().map(|k| k.to_string()).collect();
        let perts: Vec<String> = self.perturbations.iter().map(|p| p.to_string()).collect();
        let pl = &self.placement;
        format!(
            "index={}\tseed={}\tattempt={}\twarp_seed={}\tkinds={}\tperturbations={}\tplacement={},{},{},{}\tpage={}\ttexture={}",
            self.index,
            self.seed,
            self.attempt,
            self.warp_seed,
            kinds.join(","),
            perts.join(";"),
            pl.scale,
            pl.rotation,
            pl.offset[0],
            pl.offset[1],
            self.page,
            self.texture
        )
    }

    fn parse(line: &str, origin: &Path) -> Result<Self> {
        let bad = |what: &str| Error::format(origin, format!("manifest line {line:?}: {what}"));
        let field = |key: &str| -> Result<&str> {
            line.split('\t')
                .find_map(|kv| kv.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
                .ok_or_else(|| bad(&format!("missing {key}")))
        };
        let num = |key: &str| -> Result<u64> { field(key)?.parse().map_err(|_| bad(&format!("bad {key}"))) };
        let perturbations = match field("perturbations")? {
            "" => Vec::new(),
            s => s
                .split(';')
                .map(|p| p.parse())
                .collect::<Result<_>>()
                .map_err(|e| bad(&e.to_string()))?,
        };
        let pl: Vec<f64> = field("placement")?
            .split(',')
            .map(|v| v.parse().map_err(|_| bad("bad placement")))
            .collect::<Result<_>>()?;
        if pl.len() != 4 {
            return Err(bad("placement needs 4 values"));
        }
        Ok(ManifestRecord {
            index: num("index")? as usize,
            seed: num("seed")?,
            attempt: num("attempt")? as usize,
            warp_seed: num("warp_seed")?,
            perturbations,
            placement: Placement {
                scale: pl[0],
                rotation: pl[1],
                offset: [pl[2], pl[3]],
            },
            page: field("page")?.to_string(),
            texture: field("texture")?.to_string(),
        })
    }
}

/// Independent RNG for sample `index`: the base seed selects the key and the
/// index (with the retry attempt) selects the ChaCha stream.
pub fn sample_rng(seed: u64, index: usize, attempt: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((attempt as u64) << 40) | index as u64);
    rng
}

fn draw_spec(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> WarpSpec {
    let (lo, hi) = cfg.perturbations;
    let n = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
    let kinds = (0..n)
        .map(|_| match cfg.kinds {
            KindMix::FoldOnly => WarpKind::Fold,
            KindMix::CurveOnly => WarpKind::Curve,
            KindMix::Mixed => {
                if rng.gen_bool(0.5) {
                    WarpKind::Fold
                } else {
                    WarpKind::Curve
                }
            }
        })
        .collect();
    WarpSpec {
        kinds,
        seed: rng.gen(),
        ranges: cfg.ranges.clone(),
        placement: cfg.placement.clone(),
        mesh_size: cfg.mesh_size,
        size: cfg.size,
        edge_threshold: cfg.edge_threshold,
    }
}

/// Generates sample `index` of a dataset seeded with `seed`, retrying with
/// fresh draws when the warp is degenerate.
pub fn generate_sample(
    index: usize,
    seed: u64,
    cfg: &SynthConfig,
    pages: &ImageSource,
    textures: &ImageSource,
) -> Result<(DocumentSample, ManifestRecord)> {
    let mut last = None;
    for attempt in 0..cfg.attempts.max(1) {
        match generate_attempt(index, seed, attempt, cfg, pages, textures) {
            Err(Error::DegenerateWarp(msg)) => last = Some(msg),
            other => return other,
        }
    }
    Err(Error::DegenerateWarp(format!(
        "sample {index}: no valid warp in {} attempts ({})",
        cfg.attempts.max(1),
        last.unwrap_or_default()
    )))
}

/// Replays one specific attempt; used for manifest verification.
pub fn generate_attempt(
    index: usize,
    seed: u64,
    attempt: usize,
    cfg: &SynthConfig,
    pages: &ImageSource,
    textures: &ImageSource,
) -> Result<(DocumentSample, ManifestRecord)> {
    let mut rng = sample_rng(seed, index, attempt);
    let (flat, page) = pages.pick(cfg.size, true, &mut rng)?;
    let (texture, texture_label) = textures.pick(cfg.size, false, &mut rng)?;
    let spec = draw_spec(cfg, &mut rng);
    let (sample, warp) = synthesize_sample(&flat, &texture, &spec)?;
    Ok((
        sample,
        ManifestRecord {
            index,
            seed,
            attempt,
            warp_seed: spec.seed,
            perturbations: warp.perturbations,
            placement: warp.placement,
            page,
            texture: texture_label,
        },
    ))
}

fn file_names(index: usize) -> [String; 4] {
    [
        format!("warped_{index:06}.png"),
        format!("flat_{index:06}.png"),
        format!("grid_{index:06}.wgrd"),
        format!("edge_{index:06}.png"),
    ]
}

pub fn write_sample(dir: &Path, index: usize, s: &DocumentSample) -> Result<()> {
    let [warped, flat, grid, edge] = file_names(index);
    s.warped.save_png(dir.join(warped))?;
    s.flat.save_png(dir.join(flat))?;
    s.gt_grid.save(dir.join(grid))?;
    s.edge_mask.save_png(dir.join(edge))?;
    Ok(())
}

fn write_manifest(dir: &Path, seed: u64, cfg: &SynthConfig, records: &[ManifestRecord]) -> Result<()> {
    let mut text = String::new();
    writeln!(text, "# docwarp dataset v1").unwrap();
    writeln!(text, "# size={} seed={} count={}", cfg.size, seed, records.len()).unwrap();
    for r in records {
        writeln!(text, "{}", r.to_line()).unwrap();
    }
    fs::write(dir.join(MANIFEST), text)?;
    Ok(())
}

/// Writes already-built samples (index = position) and their manifest.
pub fn write_dataset(dir: &Path, seed: u64, cfg: &SynthConfig, samples: &[(DocumentSample, ManifestRecord)]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (s, r) in samples {
        write_sample(dir, r.index, s)?;
    }
    let records: Vec<ManifestRecord> = samples.iter().map(|(_, r)| r.clone()).collect();
    write_manifest(dir, seed, cfg, &records)
}

/// Generates `count` samples in parallel and writes them to `dir`.
/// The result does not depend on the number of worker threads.
pub fn generate_dataset(
    dir: &Path,
    count: usize,
    seed: u64,
    cfg: &SynthConfig,
    pages: &ImageSource,
    textures: &ImageSource,
) -> Result<Vec<ManifestRecord>> {
    fs::create_dir_all(dir).map_err(|e| Error::format(dir, format!("cannot create output directory: {e}")))?;
    let records = (0..count)
        .into_par_iter()
        .map(|i| {
            let (s, r) = generate_sample(i, seed, cfg, pages, textures)?;
            write_sample(dir, i, &s)?;
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()?;
    write_manifest(dir, seed, cfg, &records)?;
    Ok(records)
}

/// A dataset directory whose files were all found.
#[derive(Clone, Debug)]
pub struct Dataset {
    dir: PathBuf,
    size: Option<usize>,
    seed: Option<u64>,
    records: Vec<ManifestRecord>,
}

/// Checks the manifest against the files on disk. A directory without a
/// manifest and without sample files is an empty dataset.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = dir.join(MANIFEST);
    if !manifest.exists() {
        let stray = fs::read_dir(dir)
            .map(|it| {
                it.filter_map(|e| e.ok())
                    .any(|e| e.file_name().to_string_lossy().ends_with(".wgrd"))
            })
            .unwrap_or(false);
        if stray {
            return Err(Error::Integrity {
                missing: vec![MANIFEST.to_string()],
            });
        }
        return Ok(Dataset {
            dir: dir.to_path_buf(),
            size: None,
            seed: None,
            records: Vec::new(),
        });
    }
    let text = fs::read_to_string(&manifest)?;
    let mut records = Vec::new();
    let (mut size, mut seed) = (None, None);
    for line in text.lines() {
        if let Some(header) = line.strip_prefix('#') {
            for kv in header.split_whitespace() {
                match kv.split_once('=') {
                    Some(("size", v)) => size = v.parse().ok(),
                    Some(("seed", v)) => seed = v.parse().ok(),
                    _ => {}
                }
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        records.push(ManifestRecord::parse(line, &manifest)?);
    }
    let missing: Vec<String> = records
        .iter()
        .flat_map(|r| file_names(r.index))
        .filter(|name| !dir.join(name).is_file())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Integrity { missing });
    }
    Ok(Dataset {
        dir: dir.to_path_buf(),
        size,
        seed,
        records,
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Frame size recorded in the manifest header.
    pub fn size(&self) -> Option<usize> {
        self.size
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn records(&self) -> &[ManifestRecord] {
        &self.records
    }

    /// Loads the `k`-th sample listed in the manifest.
    pub fn load(&self, k: usize) -> Result<DocumentSample> {
        let [warped, flat, grid, edge] = file_names(self.records[k].index);
        Ok(DocumentSample {
            warped: Image::load_png(self.dir.join(warped))?,
            flat: Image::load_png(self.dir.join(flat))?,
            gt_grid: WarpGrid::load(self.dir.join(grid))?,
            edge_mask: Image::load_gray_png(self.dir.join(edge))?,
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = Result<DocumentSample>> + '_ {
        (0..self.len()).map(|k| self.load(k))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> SynthConfig {
        SynthConfig {
            size: 64,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn config_entries_round_trip_through_set() {
        let mut cfg = SynthConfig::default();
        cfg.set("kinds", "curve").unwrap();
        cfg.set("displacement", "0.1,0.2").unwrap();
        cfg.set("perturbations", "2,3").unwrap();
        let mut back = SynthConfig::default();
        for (k, v) in cfg.entries() {
            back.set(k, &v).unwrap();
        }
        assert_eq!(back, cfg);
        assert!(cfg.set("perturbations", "3,1").is_err());
        assert!(cfg.set("kinds", "wave").is_err());
        assert!(cfg.set("nope", "1").is_err());
    }

    #[test]
    fn write_read_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_cfg();
        let samples: Vec<_> = (0..3)
            .map(|i| generate_sample(i, 11, &cfg, &ImageSource::Builtin, &ImageSource::Builtin).unwrap())
            .collect();
        write_dataset(dir.path(), 11, &cfg, &samples).unwrap();
        let ds = read_dataset(dir.path()).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.size(), Some(64));
        for (k, (s, r)) in samples.iter().enumerate() {
            let back = ds.load(k).unwrap();
            assert_eq!(back.gt_grid.coords(), s.gt_grid.coords());
            assert_eq!(back.warped, s.warped);
            assert_eq!(back.flat, s.flat);
            assert_eq!(back.edge_mask, s.edge_mask);
            assert_eq!(&ds.records()[k], r);
        }
    }

    #[test]
    fn manifest_replay_regenerates_sample() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_cfg();
        generate_dataset(dir.path(), 2, 5, &cfg, &ImageSource::Builtin, &ImageSource::Builtin).unwrap();
        let ds = read_dataset(dir.path()).unwrap();
        for (k, r) in ds.records().iter().enumerate() {
            let (s, again) = generate_attempt(r.index, r.seed, r.attempt, &cfg, &ImageSource::Builtin, &ImageSource::Builtin).unwrap();
            assert_eq!(&again, r);
            assert_eq!(ds.load(k).unwrap(), s);
        }
    }

    #[test]
    fn empty_directory_and_missing_files() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(read_dataset(dir.path()).unwrap().len(), 0);

        let cfg = small_cfg();
        generate_dataset(dir.path(), 2, 1, &cfg, &ImageSource::Builtin, &ImageSource::Builtin).unwrap();
        fs::remove_file(dir.path().join("edge_000001.png")).unwrap();
        match read_dataset(dir.path()) {
            Err(Error::Integrity { missing }) => assert_eq!(missing, vec!["edge_000001.png".to_string()]),
            other => panic!("expected integrity error, got {other:?}"),
        }
    }

    #[test]
    fn zero_count_writes_empty_manifest() {
        let dir = tempfile::tempdir().unwrap();
        generate_dataset(dir.path(), 0, 1, &small_cfg(), &ImageSource::Builtin, &ImageSource::Builtin).unwrap();
        assert!(dir.path().join(MANIFEST).is_file());
        assert!(read_dataset(dir.path()).unwrap().is_empty());
    }
}
