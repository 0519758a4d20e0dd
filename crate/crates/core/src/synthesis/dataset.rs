//! Reference-flow recipes and the tapered-patch training dataset.
//!
//! Binary layout (`LAPK-DS v1`, little-endian): two text lines
//! `LAPK-DS v1` and `count=<n> w=<W> channels=4`, then per sample
//! 3×i32 centre, i32 orientation, i32 mask kind, f32 R, 4·W³ f32 patch values
//! (fixed re, fixed im, moving re, moving im, each x-fastest) and 3×f32 flow.
//!
//! Every export also writes `<path>.manifest.csv` with the recipe, scene and
//! seed of each sample.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{apply_augmentation, bound_flow, gen_phantom, gen_smooth_flow_with_sigma, Augmentation};
use crate::error::{Error, Result};
use crate::fourier::fft3;
use crate::grid::{Dims, FlowField, KSpace, Volume};
use crate::interp::warp;
use crate::io::{read_f32s, truncated, write_f32s};
use crate::lap_image::{estimate_flow_multires, LapConfig};
use crate::lap_kspace::{taper_and_regrid, Taper};
use crate::sampling::{apply_mask, gen_mask, MaskKind, SamplingMask};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FlowKind {
    /// Image-space LAP estimate between two deformed phantom states.
    Real,
    Smooth,
    /// A smooth flow passed through a random augmentation.
    Augmented,
}

impl FlowKind {
    pub const ALL: [FlowKind; 3] = [FlowKind::Real, FlowKind::Smooth, FlowKind::Augmented];

    /// Share of each recipe in an exported dataset.
    pub fn share(self) -> f64 {
        match self {
            FlowKind::Real => 0.4,
            FlowKind::Smooth => 0.2,
            FlowKind::Augmented => 0.4,
        }
    }
}

impl fmt::Display for FlowKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FlowKind::Real => "real",
            FlowKind::Smooth => "smooth",
            FlowKind::Augmented => "augmented",
        })
    }
}

impl FromStr for FlowKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "real" => Ok(FlowKind::Real),
            "smooth" => Ok(FlowKind::Smooth),
            "augmented" => Ok(FlowKind::Augmented),
            _ => Err(Error::InvalidParameter(format!("unknown flow recipe '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowRecipe {
    pub kind: FlowKind,
    /// Bound on every vector norm, in voxels.
    pub max_disp: f64,
    /// Width of the smooth-flow Gaussian; 0 selects `dims / 8`.
    pub smoothing_sigma: f64,
    pub seed: u64,
}

impl FlowRecipe {
    pub fn new(kind: FlowKind, seed: u64) -> Self {
        Self { kind, max_disp: 10.0, smoothing_sigma: 0.0, seed }
    }
}

/// Smooth flow whose peak norm is drawn from `[0.2, 1] · max_disp`.
fn smooth_component(dims: Dims, recipe: &FlowRecipe, rng: &mut ChaCha8Rng) -> Result<FlowField> {
    let sigma = if recipe.smoothing_sigma > 0.0 { [recipe.smoothing_sigma; 3] } else { dims.map(|n| n as f64 / 8.0) };
    let peak = recipe.max_disp * rng.random_range(0.2..=1.0);
    gen_smooth_flow_with_sigma(dims, peak, sigma, rng.random())
}

/// Reference flow for a phantom. Real flows are estimated by multi-resolution
/// image LAP between two smoothly deformed copies of the phantom.
pub fn gen_reference_flow(phantom: &Volume, recipe: &FlowRecipe) -> Result<FlowField> {
    if !(recipe.max_disp > 0.0) || !recipe.max_disp.is_finite() {
        return Err(Error::InvalidParameter(format!("max_disp {} must be positive", recipe.max_disp)));
    }
    let dims = phantom.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(recipe.seed);
    let mut flow = match recipe.kind {
        FlowKind::Smooth => smooth_component(dims, recipe, &mut rng)?,
        FlowKind::Augmented => {
            let base = smooth_component(dims, recipe, &mut rng)?;
            apply_augmentation(&base, &Augmentation::draw(rng.random()))?
        }
        FlowKind::Real => {
            let half = FlowRecipe { max_disp: recipe.max_disp / 2.0, ..recipe.clone() };
            let a = warp(phantom, &smooth_component(dims, &half, &mut rng)?)?;
            let b = warp(phantom, &smooth_component(dims, &half, &mut rng)?)?;
            let smallest = *dims.iter().min().unwrap();
            let windows: Vec<usize> = [33, 17, 9, 5].into_iter().filter(|&w| w <= smallest).collect();
            let mut cfg = LapConfig::with_windows(&windows);
            cfg.levels.last_mut().unwrap().iterations = 3;
            cfg.stride = 2;
            estimate_flow_multires(&a, &b, &cfg)?
        }
    };
    bound_flow(&mut flow, recipe.max_disp);
    flow.mark_all_reliable();
    Ok(flow)
}

/// Phantom plus reference flow; the pair it describes is
/// `fixed = warp(phantom, flow)`, `moving = phantom`.
#[derive(Clone, Debug)]
pub struct ScenePair {
    pub phantom: Volume,
    pub flow: FlowField,
    pub recipe: FlowRecipe,
}

pub fn build_scene(dims: Dims, phantom_seed: u64, recipe: FlowRecipe) -> Result<ScenePair> {
    let phantom = gen_phantom(dims, phantom_seed)?;
    let flow = gen_reference_flow(&phantom, &recipe)?;
    Ok(ScenePair { phantom, flow, recipe })
}

/// `per_kind` scenes of every recipe with seeds derived from `seed`.
pub fn default_scenes(dims: Dims, per_kind: usize, max_disp: f64, seed: u64) -> Result<Vec<ScenePair>> {
    let jobs: Vec<(usize, FlowKind)> = FlowKind::ALL.iter().flat_map(|&k| (0..per_kind).map(move |i| (i, k))).collect();
    jobs.par_iter()
        .enumerate()
        .map(|(j, &(_, kind))| {
            let s = seed ^ (0x5eed_0000 + j as u64);
            let recipe = FlowRecipe { max_disp, ..FlowRecipe::new(kind, s.wrapping_mul(3)) };
            build_scene(dims, s, recipe)
        })
        .collect()
}

/// One exported sample, stored exactly as on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample {
    pub center: [i32; 3],
    /// 1 or 2: which pair of orthogonal runs the sample feeds.
    pub orientation: i32,
    pub mask_kind: MaskKind,
    pub r: f32,
    /// `4·W³` values: fixed re, fixed im, moving re, moving im.
    pub patches: Vec<f32>,
    pub flow: [f32; 3],
}

impl TrainingSample {
    pub fn is_finite(&self) -> bool {
        self.r.is_finite() && self.patches.iter().all(|v| v.is_finite()) && self.flow.iter().all(|v| v.is_finite())
    }

    pub fn flow_norm(&self) -> f64 {
        self.flow.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt()
    }
}

/// Provenance of one sample, written to the manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRow {
    pub index: usize,
    pub recipe: FlowKind,
    pub scene: usize,
    pub sample_seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchDataset {
    pub w: usize,
    pub samples: Vec<TrainingSample>,
}

/// Voxels kept between a patch centre and the volume edge.
pub const INTERIOR_BAND: usize = 4;

/// Highest acceleration drawn for dataset samples.
pub const MAX_DATASET_R: u32 = 30;

/// Per-sample parameters, drawn before any expensive work.
struct Plan {
    row: ManifestRow,
    center: [usize; 3],
    orientation: i32,
    mask_kind: MaskKind,
    r: u32,
}

fn recipe_labels(n: usize, rng: &mut ChaCha8Rng) -> Vec<FlowKind> {
    let real = (n as f64 * FlowKind::Real.share()).round() as usize;
    let smooth = ((n as f64 * FlowKind::Smooth.share()).round() as usize).min(n - real);
    let mut labels = vec![FlowKind::Real; real];
    labels.extend(std::iter::repeat_n(FlowKind::Smooth, smooth));
    labels.extend(std::iter::repeat_n(FlowKind::Augmented, n - real - smooth));
    labels.shuffle(rng);
    labels
}

fn plan_samples(pairs: &[ScenePair], n: usize, seed: u64) -> Result<Vec<Plan>> {
    let dims = pairs[0].phantom.dims();
    if dims.iter().any(|&d| d <= 2 * INTERIOR_BAND) {
        return Err(Error::Shape(format!("volume {dims:?} too small for interior centres")));
    }
    let mut by_kind: HashMap<FlowKind, Vec<usize>> = HashMap::new();
    for (i, p) in pairs.iter().enumerate() {
        by_kind.entry(p.recipe.kind).or_default().push(i);
    }
    let labels = recipe_labels(n, &mut ChaCha8Rng::seed_from_u64(seed));
    labels
        .into_iter()
        .enumerate()
        .map(|(index, kind)| {
            let scenes =
                by_kind.get(&kind).ok_or_else(|| Error::InvalidParameter(format!("no {kind} scene supplied")))?;
            let sample_seed = seed ^ index as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
            let scene = scenes[rng.random_range(0..scenes.len())];
            let center = dims.map(|d| rng.random_range(INTERIOR_BAND..d - INTERIOR_BAND));
            let orientation = rng.random_range(1..=2);
            let r = rng.random_range(1..=MAX_DATASET_R);
            let mask_kind = if r == 1 {
                MaskKind::Full
            } else if rng.random_bool(0.5) {
                MaskKind::Vdpd
            } else {
                MaskKind::Center
            };
            Ok(Plan { row: ManifestRow { index, recipe: kind, scene, sample_seed }, center, orientation, mask_kind, r })
        })
        .collect()
}

/// Draws `n_samples` tapered patch pairs from the scenes. The recipe mixture
/// is exactly 40/20/40 up to rounding; fixed and moving share one mask per
/// (kind, R), generated with the dataset seed.
pub fn generate_samples(
    pairs: &[ScenePair],
    n_samples: usize,
    w: usize,
    seed: u64,
) -> Result<(Vec<TrainingSample>, Vec<ManifestRow>)> {
    let taper = Taper::hann(w)?;
    if n_samples == 0 {
        return Ok((Vec::new(), Vec::new()));
    }
    if pairs.is_empty() {
        return Err(Error::InvalidParameter("no scenes supplied".into()));
    }
    let dims = pairs[0].phantom.dims();
    if pairs.iter().any(|p| p.phantom.dims() != dims || p.flow.dims() != dims) {
        return Err(Error::Shape("scenes must share one grid".into()));
    }
    let plans = plan_samples(pairs, n_samples, seed)?;

    let needed: BTreeSet<(i32, u32)> = plans.iter().map(|p| (p.mask_kind.code(), p.r)).collect();
    let masks: HashMap<(i32, u32), SamplingMask> = needed
        .into_par_iter()
        .map(|(code, r)| {
            let kind = MaskKind::from_code(code)?;
            let m =
                if kind == MaskKind::Full { SamplingMask::full(dims) } else { gen_mask(kind, dims, r as f64, seed)? };
            Ok(((code, r), m))
        })
        .collect::<Result<_>>()?;

    let used: BTreeSet<usize> = plans.iter().map(|p| p.row.scene).collect();
    let spectra: HashMap<usize, (KSpace, KSpace)> = used
        .into_par_iter()
        .map(|s| {
            let p = &pairs[s];
            let fixed = fft3(&warp(&p.phantom, &p.flow)?)?;
            Ok((s, (fixed, fft3(&p.phantom)?)))
        })
        .collect::<Result<_>>()?;

    let samples = plans
        .par_iter()
        .map(|p| {
            let mask = &masks[&(p.mask_kind.code(), p.r)];
            let (kf, km) = &spectra[&p.row.scene];
            let pf = taper_and_regrid(&apply_mask(kf, mask)?, p.center, &taper)?;
            let pm = taper_and_regrid(&apply_mask(km, mask)?, p.center, &taper)?;
            let mut patches = Vec::with_capacity(4 * pf.data.len());
            for patch in [&pf, &pm] {
                patches.extend(patch.data.data().iter().map(|c| c.re as f32));
                patches.extend(patch.data.data().iter().map(|c| c.im as f32));
            }
            let u = pairs[p.row.scene].flow.at(p.center[0], p.center[1], p.center[2]);
            Ok(TrainingSample {
                center: p.center.map(|c| c as i32),
                orientation: p.orientation,
                mask_kind: p.mask_kind,
                r: p.r as f32,
                patches,
                flow: u.map(|v| v as f32),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((samples, plans.into_iter().map(|p| p.row).collect()))
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.csv");
    PathBuf::from(s)
}

/// Per-recipe sample counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RecipeCounts {
    pub real: usize,
    pub smooth: usize,
    pub augmented: usize,
}

impl RecipeCounts {
    pub fn from_rows(rows: &[ManifestRow]) -> Self {
        let mut c = Self::default();
        for r in rows {
            match r.recipe {
                FlowKind::Real => c.real += 1,
                FlowKind::Smooth => c.smooth += 1,
                FlowKind::Augmented => c.augmented += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.real + self.smooth + self.augmented
    }
}

/// Generates, writes the dataset and its manifest, and returns the recipe counts.
pub fn export_patch_dataset(
    pairs: &[ScenePair],
    n_samples: usize,
    w: usize,
    seed: u64,
    path: impl AsRef<Path>,
) -> Result<RecipeCounts> {
    let (samples, rows) = generate_samples(pairs, n_samples, w, seed)?;
    write_patch_dataset(path.as_ref(), w, &samples)?;
    write_manifest(&manifest_path(path.as_ref()), seed, w, &rows)?;
    Ok(RecipeCounts::from_rows(&rows))
}

pub fn write_patch_dataset(path: impl AsRef<Path>, w: usize, samples: &[TrainingSample]) -> Result<()> {
    let len = 4 * w * w * w;
    if let Some(bad) = samples.iter().position(|s| s.patches.len() != len) {
        return Err(Error::Shape(format!("sample {bad} does not hold 4·{w}³ values")));
    }
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "LAPK-DS v1")?;
    writeln!(out, "count={} w={w} channels=4", samples.len())?;
    for s in samples {
        for v in s.center.iter().chain([&s.orientation, &s.mask_kind.code()]) {
            out.write_all(&v.to_le_bytes())?;
        }
        out.write_all(&s.r.to_le_bytes())?;
        write_f32s(&mut out, s.patches.iter().copied())?;
        write_f32s(&mut out, s.flow)?;
    }
    out.flush()?;
    Ok(())
}

fn read_i32(r: &mut impl Read) -> Result<i32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(i32::from_le_bytes(b))
}

pub fn read_patch_dataset(path: impl AsRef<Path>) -> Result<PatchDataset> {
    let mut r = BufReader::new(File::open(path)?);
    let mut line = String::new();
    r.read_line(&mut line)?;
    if line.trim_end() != "LAPK-DS v1" {
        return Err(Error::Format("expected a LAPK-DS v1 file".into()));
    }
    line.clear();
    r.read_line(&mut line)?;
    let mut fields = HashMap::new();
    for t in line.split_whitespace() {
        let (k, v) = t.split_once('=').ok_or_else(|| Error::Format(format!("malformed dataset header token '{t}'")))?;
        fields.insert(k, v);
    }
    let get = |k: &str| -> Result<usize> {
        fields
            .get(k)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Format(format!("dataset header lacks a valid '{k}'")))
    };
    let (count, w, channels) = (get("count")?, get("w")?, get("channels")?);
    if channels != 4 {
        return Err(Error::Format(format!("{channels} channels (expected 4)")));
    }
    if w == 0 {
        return Err(Error::Format("patch size 0".into()));
    }
    let len = 4 * w * w * w;
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let center = [read_i32(&mut r)?, read_i32(&mut r)?, read_i32(&mut r)?];
        let orientation = read_i32(&mut r)?;
        let mask_kind = MaskKind::from_code(read_i32(&mut r)?).map_err(|e| Error::Format(e.to_string()))?;
        let r_val = read_f32s(&mut r, 1)?[0];
        let patches = read_f32s(&mut r, len)?;
        let f = read_f32s(&mut r, 3)?;
        samples.push(TrainingSample { center, orientation, mask_kind, r: r_val, patches, flow: [f[0], f[1], f[2]] });
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::Format("trailing bytes after the last sample".into()));
    }
    Ok(PatchDataset { w, samples })
}

fn write_manifest(path: &Path, seed: u64, w: usize, rows: &[ManifestRow]) -> Result<()> {
    let c = RecipeCounts::from_rows(rows);
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(
        out,
        "# seed={seed} count={} w={w} real={} smooth={} augmented={}",
        rows.len(),
        c.real,
        c.smooth,
        c.augmented
    )?;
    writeln!(out, "index,recipe,scene,sample_seed")?;
    for r in rows {
        writeln!(out, "{},{},{},{}", r.index, r.recipe, r.scene, r.sample_seed)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.starts_with("index,") || line.trim().is_empty() {
            continue;
        }
        let bad = || Error::Format(format!("manifest line {}: '{line}'", n + 1));
        let c: Vec<&str> = line.split(',').collect();
        if c.len() != 4 {
            return Err(bad());
        }
        rows.push(ManifestRow {
            index: c[0].parse().map_err(|_| bad())?,
            recipe: c[1].parse().map_err(|_| bad())?,
            scene: c[2].parse().map_err(|_| bad())?,
            sample_seed: c[3].parse().map_err(|_| bad())?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_are_exact_and_shuffled() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = recipe_labels(1000, &mut rng);
        let count = |k| l.iter().filter(|&&x| x == k).count();
        assert_eq!((count(FlowKind::Real), count(FlowKind::Smooth), count(FlowKind::Augmented)), (400, 200, 400));
        assert!(l[..20].iter().any(|&k| k != l[0]));
        assert_eq!(recipe_labels(3, &mut rng).len(), 3);
    }

    #[test]
    fn recipe_names_round_trip() {
        for k in FlowKind::ALL {
            assert_eq!(k.to_string().parse::<FlowKind>().unwrap(), k);
        }
        assert!("cubic".parse::<FlowKind>().is_err());
    }

    #[test]
    fn empty_export_writes_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.lapkds");
        let c = export_patch_dataset(&[], 0, 9, 1, &p).unwrap();
        assert_eq!(c.total(), 0);
        assert_eq!(std::fs::read(&p).unwrap(), b"LAPK-DS v1\ncount=0 w=9 channels=4\n");
        assert!(read_patch_dataset(&p).unwrap().samples.is_empty());
    }
}
