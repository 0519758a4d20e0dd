//! k-space LAP: tapering and regridding to local patches, per-patch filter and
//! translation estimators, and the sliding-window flow field.

mod field;
mod solve;

pub use field::*;
pub use solve::*;

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fourier::{k_axis, Fft3};
use crate::grid::{linear_index, voxel_count, CVolume, Dims, Grid, KSpace};
use crate::sampling::SamplingMask;

/// Default patch size.
pub const DEFAULT_PATCH: usize = 33;

/// Kernel entries below this fraction of the peak are dropped.
pub const TAPER_TRUNCATION: f64 = 1e-3;

/// Separable image-domain window `w(y) = cos²(π y / (W + 1))`, `|y| ≤ W/2`.
#[derive(Clone, Debug, PartialEq)]
pub struct Taper {
    w: usize,
    window: Vec<f64>,
}

impl Taper {
    pub fn hann(w: usize) -> Result<Self> {
        if w < 3 || w % 2 == 0 {
            return Err(Error::InvalidParameter(format!("taper size {w} must be odd and at least 3")));
        }
        let h = (w / 2) as isize;
        let window = (-h..=h).map(|y| (PI * y as f64 / (w as f64 + 1.0)).cos().powi(2)).collect();
        Ok(Self { w, window })
    }

    pub fn w(&self) -> usize {
        self.w
    }

    /// 1D window samples, centre at index `W/2`.
    pub fn window(&self) -> &[f64] {
        &self.window
    }

    /// `T(ω) = Σ_y w(y) e^{−jωy}`; real because the window is even.
    pub fn transfer(&self, omega: f64) -> f64 {
        let h = (self.w / 2) as isize;
        self.window.iter().enumerate().map(|(i, v)| v * (omega * (i as isize - h) as f64).cos()).sum()
    }

    pub fn peak(&self) -> f64 {
        self.window.iter().sum()
    }

    /// Fraction of the 3D kernel energy kept after truncation, measured on the
    /// frequency grid of an axis of length `n`.
    pub fn retained_energy(&self, n: usize) -> f64 {
        let peak = self.peak();
        let (mut kept, mut all) = (0.0, 0.0);
        for k in k_axis(n) {
            let t = self.transfer(k);
            all += t * t;
            if t.abs() >= TAPER_TRUNCATION * peak {
                kept += t * t;
            }
        }
        (kept / all).powi(3)
    }

    /// Sparse rows mapping a parent axis of length `n` onto the patch axis for
    /// a window centred at `x0`: `row_i = {(j, T(κ_i − k_j) e^{j k_j x0} / √(W n))}`.
    fn regrid_rows(&self, n: usize, x0: usize) -> Vec<Vec<(usize, Complex64)>> {
        let peak = self.peak();
        let ks = k_axis(n);
        let kappa = k_axis(self.w);
        let scale = 1.0 / ((self.w * n) as f64).sqrt();
        kappa
            .iter()
            .map(|&kap| {
                ks.iter()
                    .enumerate()
                    .filter_map(|(j, &k)| {
                        let t = self.transfer(kap - k);
                        (t.abs() >= TAPER_TRUNCATION * peak)
                            .then(|| (j, Complex64::from_polar(t * scale, k * x0 as f64)))
                    })
                    .collect()
            })
            .collect()
    }
}

/// Tapered, regridded k-space patch anchored at a voxel.
#[derive(Clone, Debug, PartialEq)]
pub struct KPatch {
    pub center: [usize; 3],
    /// Samples on a DC-centred grid of the patch size.
    pub data: KSpace,
    /// Acquired pattern inherited from the parent mask.
    pub mask: Vec<bool>,
}

impl KPatch {
    /// Fully sampled patch from explicit data.
    pub fn new(center: [usize; 3], data: KSpace) -> Self {
        let n = data.len();
        Self { center, data, mask: vec![true; n] }
    }

    /// Centred unitary DFT of an image-domain window, positions taken as the
    /// sample indices.
    pub fn from_image(center: [usize; 3], image: &CVolume) -> Result<Self> {
        Ok(Self::new(center, crate::fourier::fft3_complex(image)?))
    }

    pub fn dims(&self) -> Dims {
        self.data.dims()
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.data.len() {
            return Err(Error::Shape("patch mask size".into()));
        }
        self.mask = mask;
        Ok(self)
    }

    /// Multiplies the samples by `exp(−j u·κ)`.
    pub fn shifted(&self, u: [f64; 3]) -> Result<Self> {
        Ok(Self {
            center: self.center,
            data: crate::fourier::apply_phase_ramp(&self.data, u)?,
            mask: self.mask.clone(),
        })
    }

    pub fn energy(&self) -> f64 {
        self.data.energy()
    }
}

fn check_center(dims: Dims, x0: [usize; 3]) -> Result<()> {
    if (0..3).any(|a| x0[a] >= dims[a]) {
        return Err(Error::InvalidParameter(format!("centre {x0:?} outside {dims:?}")));
    }
    Ok(())
}

/// Parent-grid index nearest to each patch frequency along one axis.
fn nearest_parent(n: usize, w: usize) -> Vec<usize> {
    let h = (w / 2) as f64;
    (0..w)
        .map(|i| {
            let j = ((i as f64 - h) * n as f64 / w as f64).round() as isize + (n / 2) as isize;
            j.clamp(0, n as isize - 1) as usize
        })
        .collect()
}

/// Patch mask obtained by sampling the parent mask at the nearest frequency.
pub fn propagate_mask(mask: &SamplingMask, w: usize) -> Vec<bool> {
    let d = mask.dims();
    let near = [nearest_parent(d[0], w), nearest_parent(d[1], w), nearest_parent(d[2], w)];
    let mut out = Vec::with_capacity(w * w * w);
    for z in 0..w {
        for y in 0..w {
            for x in 0..w {
                out.push(mask.kept()[linear_index(d, near[0][x], near[1][y], near[2][z])]);
            }
        }
    }
    out
}

/// k-space-native tapering: convolution with the truncated, phase-modulated
/// window transform followed by subsampling onto the patch grid.
pub fn taper_and_regrid(kspace: &KSpace, x0: [usize; 3], taper: &Taper) -> Result<KPatch> {
    let d = kspace.dims();
    check_center(d, x0)?;
    kspace.check_finite()?;
    let w = taper.w;
    let rows: Vec<_> = (0..3).map(|a| taper.regrid_rows(d[a], x0[a])).collect();
    let zero = Complex64::new(0.0, 0.0);
    // contract x, then y, then z
    let mut t1 = vec![zero; w * d[1] * d[2]];
    for z in 0..d[2] {
        for y in 0..d[1] {
            let line = &kspace.data()[linear_index(d, 0, y, z)..linear_index(d, 0, y, z) + d[0]];
            for (i, row) in rows[0].iter().enumerate() {
                t1[i + w * (y + d[1] * z)] = row.iter().map(|&(j, c)| c * line[j]).sum();
            }
        }
    }
    let mut t2 = vec![zero; w * w * d[2]];
    for z in 0..d[2] {
        for (i, row) in rows[1].iter().enumerate() {
            for x in 0..w {
                t2[x + w * (i + w * z)] = row.iter().map(|&(j, c)| c * t1[x + w * (j + d[1] * z)]).sum();
            }
        }
    }
    let mut t3 = vec![zero; w * w * w];
    for (i, row) in rows[2].iter().enumerate() {
        for y in 0..w {
            for x in 0..w {
                t3[x + w * (y + w * i)] = row.iter().map(|&(j, c)| c * t2[x + w * (y + w * j)]).sum();
            }
        }
    }
    Ok(KPatch::new(x0, Grid::from_vec([w, w, w], t3)?))
}

/// [`taper_and_regrid`] with the patch mask propagated from the parent mask.
pub fn taper_and_regrid_masked(kspace: &KSpace, mask: &SamplingMask, x0: [usize; 3], taper: &Taper) -> Result<KPatch> {
    crate::grid::check_same_dims(kspace.dims(), mask.dims())?;
    taper_and_regrid(kspace, x0, taper)?.with_mask(propagate_mask(mask, taper.w))
}

/// Image-domain definition: the windowed periodic crop around `x0` of the
/// inverse transform, then a centred DFT on the patch grid.
pub fn taper_and_regrid_reference(kspace: &KSpace, x0: [usize; 3], taper: &Taper) -> Result<KPatch> {
    check_center(kspace.dims(), x0)?;
    let image = crate::fourier::ifft3(kspace)?;
    Ok(windowed_crop_patch(&image, x0, taper))
}

/// Windowed crop of an image-domain volume transformed onto the patch grid.
pub(crate) fn windowed_crop_patch(image: &CVolume, x0: [usize; 3], taper: &Taper) -> KPatch {
    let plan = Fft3::new([taper.w; 3], rustfft::FftDirection::Forward);
    windowed_crop_patch_with(image, x0, taper, &plan)
}

pub(crate) fn windowed_crop_patch_with(image: &CVolume, x0: [usize; 3], taper: &Taper, plan: &Fft3) -> KPatch {
    let w = taper.w;
    let h = (w / 2) as isize;
    let mut buf = vec![Complex64::new(0.0, 0.0); w * w * w];
    for z in -h..=h {
        for y in -h..=h {
            for x in -h..=h {
                let v = image.at_wrapped(x0[0] as isize + x, x0[1] as isize + y, x0[2] as isize + z);
                let win =
                    taper.window[(x + h) as usize] * taper.window[(y + h) as usize] * taper.window[(z + h) as usize];
                // offset y stored at index y mod W so the DFT sees positions relative to x0
                let idx = linear_index(
                    [w, w, w],
                    x.rem_euclid(w as isize) as usize,
                    y.rem_euclid(w as isize) as usize,
                    z.rem_euclid(w as isize) as usize,
                );
                buf[idx] = v * win;
            }
        }
    }
    plan.process(&mut buf, false);
    KPatch::new(x0, Grid::from_vec([w, w, w], buf).expect("patch shape"))
}

/// Relative energy of the difference between two patches.
pub fn relative_energy_difference(a: &KPatch, b: &KPatch) -> f64 {
    let diff: f64 = a.data.data().iter().zip(b.data.data()).map(|(p, q)| (p - q).norm_sqr()).sum();
    diff / b.energy().max(1e-300)
}

/// Combines two orthogonal 2D runs: the first sees (x, y), the second (y, z).
pub fn merge_orthogonal_runs(run1: (f64, f64), run2: (f64, f64)) -> [f64; 3] {
    [run1.0, 0.5 * (run1.1 + run2.0), run2.1]
}

pub(crate) fn patch_frequencies(dims: Dims) -> [Vec<f64>; 3] {
    [k_axis(dims[0]), k_axis(dims[1]), k_axis(dims[2])]
}

pub(crate) fn count(dims: Dims) -> usize {
    voxel_count(dims)
}
