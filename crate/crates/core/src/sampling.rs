//! Retrospective k-space undersampling: variable-density Poisson-disc and
//! elliptical centre masks calibrated to a target acceleration.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{check_same_dims, coords_of, voxel_count, Dims, Grid, KSpace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MaskKind {
    Full,
    Vdpd,
    Center,
}

impl MaskKind {
    /// Integer code used in the dataset format.
    pub fn code(self) -> i32 {
        match self {
            MaskKind::Full => 0,
            MaskKind::Vdpd => 1,
            MaskKind::Center => 2,
        }
    }

    pub fn from_code(c: i32) -> Result<Self> {
        match c {
            0 => Ok(MaskKind::Full),
            1 => Ok(MaskKind::Vdpd),
            2 => Ok(MaskKind::Center),
            _ => Err(Error::Format(format!("unknown mask kind code {c}"))),
        }
    }
}

impl fmt::Display for MaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaskKind::Full => "full",
            MaskKind::Vdpd => "vdpd",
            MaskKind::Center => "center",
        })
    }
}

impl FromStr for MaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(MaskKind::Full),
            "vdpd" => Ok(MaskKind::Vdpd),
            "center" => Ok(MaskKind::Center),
            _ => Err(Error::InvalidParameter(format!("unknown mask kind '{s}'"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SamplingMask {
    dims: Dims,
    kept: Vec<bool>,
    kind: MaskKind,
    r_target: f64,
    seed: u64,
    /// Calibrated base exclusion radius of a Poisson-disc mask (0 otherwise).
    /// Not part of the on-disk format and ignored by equality.
    r0: f64,
}

impl PartialEq for SamplingMask {
    fn eq(&self, o: &Self) -> bool {
        self.dims == o.dims
            && self.kept == o.kept
            && self.kind == o.kind
            && self.r_target.to_bits() == o.r_target.to_bits()
            && self.seed == o.seed
    }
}

impl SamplingMask {
    pub fn full(dims: Dims) -> Self {
        Self { dims, kept: vec![true; voxel_count(dims)], kind: MaskKind::Full, r_target: 1.0, seed: 0, r0: 0.0 }
    }

    pub fn from_parts(dims: Dims, kept: Vec<bool>, kind: MaskKind, r_target: f64, seed: u64) -> Result<Self> {
        if kept.len() != voxel_count(dims) {
            return Err(Error::Shape(format!("{} flags for dims {dims:?}", kept.len())));
        }
        if !kept[dc_index(dims)] {
            return Err(Error::InvalidParameter("mask must keep the DC sample".into()));
        }
        Ok(Self { dims, kept, kind, r_target, seed, r0: 0.0 })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn kept(&self) -> &[bool] {
        &self.kept
    }

    pub fn kind(&self) -> MaskKind {
        self.kind
    }

    pub fn r_target(&self) -> f64 {
        self.r_target
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn kept_count(&self) -> usize {
        self.kept.iter().filter(|&&k| k).count()
    }

    pub fn vdpd_r0(&self) -> f64 {
        self.r0
    }

    pub fn r_actual(&self) -> f64 {
        voxel_count(self.dims) as f64 / self.kept_count() as f64
    }
}

pub fn dc_index(dims: Dims) -> usize {
    crate::grid::linear_index(dims, dims[0] / 2, dims[1] / 2, dims[2] / 2)
}

/// Signed offset of every axis coordinate from DC, in samples.
fn offsets(dims: Dims, i: usize) -> [f64; 3] {
    let c = coords_of(dims, i);
    [0, 1, 2].map(|a| c[a] as f64 - (dims[a] / 2) as f64)
}

fn check_r(r: f64) -> Result<()> {
    if !(r >= 1.0) || !r.is_finite() {
        return Err(Error::InvalidParameter(format!("acceleration {r} must be at least 1")));
    }
    Ok(())
}

const TOLERANCE: f64 = 0.05;

pub fn acceleration(mask: &SamplingMask) -> f64 {
    mask.r_actual()
}

/// Zero-fills every sample the mask does not keep.
pub fn apply_mask(kspace: &KSpace, mask: &SamplingMask) -> Result<KSpace> {
    check_same_dims(kspace.dims(), mask.dims)?;
    let data = kspace
        .data()
        .iter()
        .zip(&mask.kept)
        .map(|(v, &k)| if k { *v } else { num_complex::Complex64::new(0.0, 0.0) })
        .collect();
    Grid::from_vec(kspace.dims(), data)
}

pub fn gen_mask(kind: MaskKind, dims: Dims, r: f64, seed: u64) -> Result<SamplingMask> {
    match kind {
        MaskKind::Full => Ok(SamplingMask::full(dims)),
        MaskKind::Vdpd => gen_vdpd_mask(dims, r, seed),
        MaskKind::Center => gen_center_mask(dims, r),
    }
}

/// Keeps the samples inside the ellipsoid `Σ (k_a / a_a)² ≤ s²` with semi-axes
/// proportional to the grid, `s` found by bisection.
pub fn gen_center_mask(dims: Dims, r: f64) -> Result<SamplingMask> {
    check_r(r)?;
    let total = voxel_count(dims);
    let rho2: Vec<f64> = (0..total)
        .map(|i| {
            let k = offsets(dims, i);
            (0..3).map(|a| (k[a] / (dims[a] as f64 / 2.0)).powi(2)).sum()
        })
        .collect();
    let count = |s2: f64| rho2.iter().filter(|&&v| v <= s2).count();
    let target = total as f64 / r;
    let (mut lo, mut hi) = (0.0f64, 4.0f64);
    let mut best = (hi, total);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        let c = count(mid);
        if (c as f64 - target).abs() < (best.1 as f64 - target).abs() {
            best = (mid, c);
        }
        if (c as f64) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let kept = rho2.iter().map(|&v| v <= best.0).collect();
    let mask = SamplingMask::from_parts(dims, kept, MaskKind::Center, r, 0)?;
    let err = (mask.r_actual() - r).abs() / r;
    if err > TOLERANCE {
        return Err(Error::InvalidParameter(format!("centre mask reaches R = {:.3} for target {r}", mask.r_actual())));
    }
    Ok(mask)
}

/// Poisson-disc sampling whose exclusion radius grows linearly from `r0` at
/// DC to `3 r0` at the corner of k-space. A 5 %-radius central ellipsoid is
/// always kept. `r0` is bisected until the acceleration matches.
pub fn gen_vdpd_mask(dims: Dims, r: f64, seed: u64) -> Result<SamplingMask> {
    check_r(r)?;
    let total = voxel_count(dims);
    if r == 1.0 {
        let mut m = SamplingMask::full(dims);
        m.kind = MaskKind::Vdpd;
        m.seed = seed;
        return Ok(m);
    }
    let disc = PoissonDisc::new(dims, seed);
    let accel = |kept: usize| total as f64 / kept as f64;
    let max_r = accel(disc.calibration_count().max(1));
    if r > max_r * (1.0 - TOLERANCE) {
        return Err(Error::InvalidParameter(format!(
            "acceleration {r} outside the achievable range [1, {:.1}] for dims {dims:?}",
            max_r
        )));
    }
    // grow the upper bracket until it overshoots
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut best: Option<(f64, Vec<bool>, f64)> = None;
    let consider = |r0: f64, best: &mut Option<(f64, Vec<bool>, f64)>| {
        let kept = disc.sample(r0);
        let ra = accel(kept.iter().filter(|&&k| k).count());
        let err = (ra - r).abs() / r;
        if best.as_ref().is_none_or(|b| err < b.0) {
            *best = Some((err, kept, r0));
        }
        ra
    };
    loop {
        let ra = consider(hi, &mut best);
        if ra >= r {
            break;
        }
        lo = hi;
        hi *= 2.0;
        if hi > 4.0 * dims.iter().copied().max().unwrap() as f64 {
            break;
        }
    }
    for _ in 0..60 {
        if best.as_ref().is_some_and(|b| b.0 <= 0.01) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let ra = consider(mid, &mut best);
        if ra < r {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-9 {
            break;
        }
    }
    let (err, kept, r0) = best.expect("at least one trial");
    if err > TOLERANCE {
        return Err(Error::InvalidParameter(format!(
            "Poisson-disc calibration missed R = {r} by {:.1} %",
            100.0 * err
        )));
    }
    let mut mask = SamplingMask::from_parts(dims, kept, MaskKind::Vdpd, r, seed)?;
    mask.r0 = r0;
    Ok(mask)
}

/// Fully sampled core: ellipsoid with semi-axes 5 % of each half-extent (at
/// least half a sample), always including DC.
pub fn calibration_region(dims: Dims) -> Vec<bool> {
    let mut c: Vec<bool> = (0..voxel_count(dims))
        .map(|i| {
            let k = offsets(dims, i);
            (0..3).map(|a| (k[a] / (0.05 * dims[a] as f64 / 2.0).max(0.5)).powi(2)).sum::<f64>() <= 1.0
        })
        .collect();
    c[dc_index(dims)] = true;
    c
}

struct PoissonDisc {
    dims: Dims,
    order: Vec<usize>,
    calibration: Vec<bool>,
    /// `‖k‖ / ‖k_max‖` per sample.
    radial: Vec<f64>,
}

impl PoissonDisc {
    fn new(dims: Dims, seed: u64) -> Self {
        let calibration = calibration_region(dims);
        let total = voxel_count(dims);
        let kmax = (0..3).map(|a| (dims[a] as f64 / 2.0).powi(2)).sum::<f64>().sqrt();
        let radial = (0..total)
            .map(|i| {
                let k = offsets(dims, i);
                (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]).sqrt() / kmax
            })
            .collect();
        let mut order: Vec<usize> = (0..total).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        Self { dims, order, calibration, radial }
    }

    fn calibration_count(&self) -> usize {
        self.calibration.iter().filter(|&&c| c).count()
    }

    fn radius(&self, r0: f64, i: usize) -> f64 {
        r0 * (1.0 + 2.0 * self.radial[i])
    }

    /// Dart throwing in the fixed random order. The occupancy grid doubles as
    /// the spatial hash: neighbours are looked up by offset, nearest first.
    fn sample(&self, r0: f64) -> Vec<bool> {
        let d = self.dims;
        let mut kept = self.calibration.clone();
        let mut darts = vec![false; kept.len()];
        let reach = (3.0 * r0).ceil() as isize;
        let mut neighbourhood: Vec<(f64, [isize; 3])> = Vec::new();
        for dz in -reach..=reach {
            for dy in -reach..=reach {
                for dx in -reach..=reach {
                    let dist = ((dx * dx + dy * dy + dz * dz) as f64).sqrt();
                    if dist > 0.0 && dist < 3.0 * r0 {
                        neighbourhood.push((dist, [dx, dy, dz]));
                    }
                }
            }
        }
        neighbourhood.sort_by(|a, b| a.0.total_cmp(&b.0));
        for &i in &self.order {
            if self.calibration[i] {
                continue;
            }
            let c = coords_of(d, i);
            let rc = self.radius(r0, i);
            let mut ok = true;
            for &(dist, off) in &neighbourhood {
                if dist >= 3.0 * r0 {
                    break;
                }
                let p = [0, 1, 2].map(|a| c[a] as isize + off[a]);
                if (0..3).any(|a| p[a] < 0 || p[a] >= d[a] as isize) {
                    continue;
                }
                let j = crate::grid::linear_index(d, p[0] as usize, p[1] as usize, p[2] as usize);
                if darts[j] && dist < rc.max(self.radius(r0, j)) {
                    ok = false;
                    break;
                }
            }
            if ok {
                darts[i] = true;
                kept[i] = true;
            }
        }
        kept
    }
}

/// Radius law used by the Poisson-disc generator, exposed for audits.
pub fn vdpd_radius(dims: Dims, r0: f64, k: [f64; 3]) -> f64 {
    let kmax = (0..3).map(|a| (dims[a] as f64 / 2.0).powi(2)).sum::<f64>().sqrt();
    r0 * (1.0 + 2.0 * (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]).sqrt() / kmax)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn r_one_keeps_everything() {
        for kind in [MaskKind::Vdpd, MaskKind::Center] {
            let m = gen_mask(kind, [8, 8, 8], 1.0, 3).unwrap();
            assert_eq!(m.r_actual(), 1.0);
        }
    }

    #[test]
    fn rejects_r_below_one() {
        assert!(gen_center_mask([8, 8, 8], 0.5).is_err());
        assert!(gen_vdpd_mask([8, 8, 8], f64::NAN, 1).is_err());
    }

    #[test]
    fn unreachable_acceleration_reports_range() {
        let e = gen_vdpd_mask([16, 16, 16], 1e6, 1).unwrap_err();
        assert!(e.to_string().contains("achievable range"));
    }

    #[test]
    fn kind_round_trips() {
        for k in [MaskKind::Full, MaskKind::Vdpd, MaskKind::Center] {
            assert_eq!(MaskKind::from_code(k.code()).unwrap(), k);
            assert_eq!(k.to_string().parse::<MaskKind>().unwrap(), k);
        }
    }
}
