//! Flow and image quality metrics. All reductions run in voxel-index order.

use crate::error::{Error, Result};
use crate::grid::{check_same_dims, coords_of, norm3, sub3, Dims, FlowField, Volume};
use crate::smoothing::{convolve_separable, Boundary};

/// Region of interest over a voxel grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Roi {
    dims: Dims,
    mask: Vec<bool>,
}

impl Roi {
    pub fn all(dims: Dims) -> Self {
        Self { dims, mask: vec![true; crate::grid::voxel_count(dims)] }
    }

    pub fn from_mask(dims: Dims, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != crate::grid::voxel_count(dims) {
            return Err(Error::Shape("roi size".into()));
        }
        Ok(Self { dims, mask })
    }

    /// Voxels at least `band` samples away from every face.
    pub fn interior(dims: Dims, band: usize) -> Self {
        let mask = (0..crate::grid::voxel_count(dims))
            .map(|i| {
                let c = coords_of(dims, i);
                (0..3).all(|a| c[a] >= band && c[a] + band < dims[a])
            })
            .collect();
        Self { dims, mask }
    }

    /// Interior voxels whose reference source position `x − u(x)` lies inside
    /// the field of view; elsewhere the fixed image holds clamped edge content
    /// that no registration can attribute to a displacement.
    pub fn observable(reference: &FlowField, band: usize) -> Self {
        let dims = reference.dims();
        let mut roi = Self::interior(dims, band);
        for (i, m) in roi.mask.iter_mut().enumerate() {
            let c = coords_of(dims, i);
            let u = reference.vectors()[i];
            let inside = (0..3).all(|a| {
                let p = c[a] as f64 - u[a];
                p >= 0.0 && p <= (dims[a] - 1) as f64
            });
            *m = *m && inside;
        }
        roi
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpeStats {
    pub mean: f64,
    pub std: f64,
    /// End-point errors of the ROI voxels in index order.
    pub per_voxel: Vec<f64>,
}

pub fn epe(est: &FlowField, reference: &FlowField, roi: &Roi) -> Result<EpeStats> {
    check_same_dims(est.dims(), reference.dims())?;
    check_same_dims(est.dims(), roi.dims)?;
    let per_voxel: Vec<f64> = (0..est.len())
        .filter(|&i| roi.mask[i])
        .map(|i| norm3(sub3(est.vectors()[i], reference.vectors()[i])))
        .collect();
    if per_voxel.is_empty() {
        return Err(Error::Undefined("empty region of interest".into()));
    }
    let (mean, std) = mean_std(&per_voxel);
    Ok(EpeStats { mean, std, per_voxel })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EaeStats {
    /// Degrees.
    pub mean: f64,
    pub std: f64,
    /// ROI voxels skipped because either vector is shorter than the threshold.
    pub excluded: usize,
}

/// Vectors shorter than this carry no usable direction.
pub const EAE_MIN_NORM: f64 = 1e-3;

pub fn eae(est: &FlowField, reference: &FlowField, roi: &Roi) -> Result<EaeStats> {
    check_same_dims(est.dims(), reference.dims())?;
    check_same_dims(est.dims(), roi.dims)?;
    let mut angles = Vec::new();
    let mut excluded = 0;
    for i in (0..est.len()).filter(|&i| roi.mask[i]) {
        let a = est.vectors()[i];
        let b = reference.vectors()[i];
        let (na, nb) = (norm3(a), norm3(b));
        if na < EAE_MIN_NORM || nb < EAE_MIN_NORM {
            excluded += 1;
            continue;
        }
        // atan2 keeps precision for nearly parallel vectors
        let dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
        let cross = [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
        angles.push(norm3(cross).atan2(dot).to_degrees());
    }
    if angles.is_empty() {
        return Err(Error::Undefined("every voxel excluded from the angular error".into()));
    }
    let (mean, std) = mean_std(&angles);
    Ok(EaeStats { mean, std, excluded })
}

/// Squared end-point error of one vector pair.
pub fn sepe(est: [f64; 3], reference: [f64; 3]) -> f64 {
    (0..3).map(|a| (reference[a] - est[a]).powi(2)).sum()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImageMetrics {
    pub ssim: f64,
    /// `(1/N) √MSE`, N the voxel count.
    pub nrmse: f64,
    /// `√MSE` of the unit-range images, i.e. the RMSE normalised by the range.
    pub nrmse_range: f64,
    /// Decibels, capped at [`PSNR_CAP`].
    pub psnr: f64,
    pub ncc: f64,
}

pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

fn unit_range(v: &Volume) -> Result<Vec<f64>> {
    let (lo, hi) = v.min_max();
    if !(hi > lo) {
        return Err(Error::Undefined("constant image has no normalisable range".into()));
    }
    Ok(v.data().iter().map(|x| (x - lo) / (hi - lo)).collect())
}

/// Both inputs are rescaled to `[0, 1]` before any metric is taken.
pub fn image_metrics(deformed: &Volume, fixed: &Volume) -> Result<ImageMetrics> {
    check_same_dims(deformed.dims(), fixed.dims())?;
    let a = unit_range(deformed)?;
    let b = unit_range(fixed)?;
    let n = a.len() as f64;
    let mse = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n;
    let psnr = if mse > 0.0 { (10.0 * (1.0 / mse).log10()).min(PSNR_CAP) } else { PSNR_CAP };
    let (ma, sa) = mean_std(&a);
    let (mb, sb) = mean_std(&b);
    let cov = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>();
    let ncc = cov / (sa * sb * n);
    Ok(ImageMetrics { ssim: ssim(&a, &b, fixed.dims())?, nrmse: mse.sqrt() / n, nrmse_range: mse.sqrt(), psnr, ncc })
}

/// Mean SSIM over the voxels whose full Gaussian window lies inside the grid.
fn ssim(a: &[f64], b: &[f64], dims: Dims) -> Result<f64> {
    if dims.iter().any(|&d| d < SSIM_WINDOW) {
        return Err(Error::Shape(format!("SSIM needs at least {SSIM_WINDOW} voxels per axis")));
    }
    let h = (SSIM_WINDOW / 2) as isize;
    let g: Vec<f64> = (-h..=h).map(|x| (-(x * x) as f64 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let s: f64 = g.iter().sum();
    let g: Vec<f64> = g.iter().map(|v| v / s).collect();
    let filt = |v: &[f64]| convolve_separable(v, dims, [&g, &g, &g], Boundary::Clamp);
    let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<f64>>();
    let mu_a = filt(a);
    let mu_b = filt(b);
    let aa = filt(&prod(a, a));
    let bb = filt(&prod(b, b));
    let ab = filt(&prod(a, b));
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let h = h as usize;
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..a.len() {
        let c = coords_of(dims, i);
        if (0..3).any(|k| c[k] < h || c[k] + h >= dims[k]) {
            continue;
        }
        let va = aa[i] - mu_a[i] * mu_a[i];
        let vb = bb[i] - mu_b[i] * mu_b[i];
        let cov = ab[i] - mu_a[i] * mu_b[i];
        sum += ((2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2))
            / ((mu_a[i].powi(2) + mu_b[i].powi(2) + c1) * (va + vb + c2));
        count += 1;
    }
    Ok(sum / count as f64)
}

/// One row of an evaluation table.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub epe_mean: f64,
    pub epe_std: f64,
    pub eae_mean: f64,
    pub eae_std: f64,
    pub image: Option<ImageMetrics>,
    pub n_voxels_evaluated: usize,
}

pub fn flow_report(est: &FlowField, reference: &FlowField, roi: &Roi) -> Result<MetricReport> {
    let e = epe(est, reference, roi)?;
    let (eae_mean, eae_std) = match eae(est, reference, roi) {
        Ok(a) => (a.mean, a.std),
        Err(Error::Undefined(_)) => (f64::NAN, f64::NAN),
        Err(e) => return Err(e),
    };
    Ok(MetricReport {
        epe_mean: e.mean,
        epe_std: e.std,
        eae_mean,
        eae_std,
        image: None,
        n_voxels_evaluated: e.per_voxel.len(),
    })
}
