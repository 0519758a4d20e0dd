//! Synthetic stand-ins for anatomy and motion: phantoms, reference flows,
//! registered k-space pairs and the training-patch dataset.

mod dataset;

pub use dataset::*;

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::fourier::{apply_phase_ramp, fft3, ifft3, k_axis};
use crate::grid::{check_dims, check_same_dims, coords_of, Dims, FlowField, Grid, KSpace, Volume};
use crate::interp::{sample_flow, warp};
use crate::sampling::{apply_mask, SamplingMask};
use crate::smoothing::{convolve_separable, Boundary};

/// Cutoff of the phantom texture, in radians per voxel.
pub const TEXTURE_CUTOFF: f64 = PI / 4.0;

fn white_noise(dims: Dims, rng: &mut ChaCha8Rng) -> Volume {
    Volume::from_fn(dims, |_, _, _| rng.sample::<f64, _>(StandardNormal))
}

/// Multiplies a k-space by a real per-sample gain.
fn filter_spectrum(k: &KSpace, gain: impl Fn([f64; 3]) -> f64) -> KSpace {
    let d = k.dims();
    let axes = [k_axis(d[0]), k_axis(d[1]), k_axis(d[2])];
    Grid::from_fn(d, |x, y, z| k.at(x, y, z) * gain([axes[0][x], axes[1][y], axes[2][z]]))
}

/// Ellipsoids with soft edges, a curved bright interface and band-limited
/// texture, normalised to `[0, 1]`.
pub fn gen_phantom(dims: Dims, seed: u64) -> Result<Volume> {
    check_dims(dims, 32)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = dims.map(|v| v as f64);
    let mut vol = Volume::zeros(dims);

    let count = rng.random_range(5..=12);
    for _ in 0..count {
        let centre = [0, 1, 2].map(|a| rng.random_range(0.2..0.8) * n[a]);
        let semi = [0, 1, 2].map(|a| rng.random_range(0.08..0.3) * n[a]);
        let level: f64 = rng.random_range(0.2..1.0);
        let theta: f64 = rng.random_range(0.0..PI);
        let (s, c) = theta.sin_cos();
        let mean_semi = (semi[0] + semi[1] + semi[2]) / 3.0;
        let edge = 1.5;
        for (i, v) in vol.data_mut().iter_mut().enumerate() {
            let p = coords_of(dims, i);
            let d = [0, 1, 2].map(|a| p[a] as f64 - centre[a]);
            let q = [c * d[0] + s * d[1], -s * d[0] + c * d[1], d[2]];
            let rho = (0..3).map(|a| (q[a] / semi[a]).powi(2)).sum::<f64>().sqrt();
            *v += level * 0.5 * (1.0 - ((rho - 1.0) * mean_semi / edge).tanh());
        }
    }

    // dome-shaped bright sheet over a darker filled region
    let z0 = rng.random_range(0.55..0.7) * n[2];
    let bend = rng.random_range(0.3..0.6);
    let cx = rng.random_range(0.4..0.6) * n[0];
    let cy = rng.random_range(0.4..0.6) * n[1];
    for (i, v) in vol.data_mut().iter_mut().enumerate() {
        let p = coords_of(dims, i).map(|c| c as f64);
        let zd = z0 - bend * ((p[0] - cx).powi(2) + (p[1] - cy).powi(2)) / n[0];
        let t = p[2] - zd;
        *v += 1.2 * (-t * t / (2.0 * 1.5 * 1.5)).exp() + 0.3 / (1.0 + (-t / 1.5).exp());
    }

    let noise = fft3(&white_noise(dims, &mut rng))?;
    let band = filter_spectrum(&noise, |k| {
        if (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]).sqrt() <= TEXTURE_CUTOFF {
            1.0
        } else {
            0.0
        }
    });
    let texture = ifft3(&band)?.re();
    let sd = (texture.data().iter().map(|v| v * v).sum::<f64>() / texture.len() as f64).sqrt();
    for (v, t) in vol.data_mut().iter_mut().zip(texture.data()) {
        *v += TEXTURE_AMPLITUDE * t / sd.max(1e-12);
    }

    // gentle global low-pass keeps the edges inside the texture band
    let k = fft3(&vol)?;
    let smooth = ifft3(&filter_spectrum(&k, |k| {
        (-(k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) / (2.0 * PHANTOM_LOWPASS * PHANTOM_LOWPASS)).exp()
    }))?
    .re();
    Ok(normalize_unit(&smooth))
}

/// Standard deviation of the texture relative to the unit-scale shapes.
pub const TEXTURE_AMPLITUDE: f64 = 0.5;

/// Width (radians per voxel) of the Gaussian spectral roll-off applied to phantoms.
pub const PHANTOM_LOWPASS: f64 = 0.5;

pub fn normalize_unit(v: &Volume) -> Volume {
    let (lo, hi) = v.min_max();
    let range = (hi - lo).max(1e-300);
    v.map(|x| (x - lo) / range)
}

/// Each component is white noise smoothed by a Gaussian of width `dims / 8`
/// (periodic), then the field is scaled so its largest vector norm is `max_disp`.
pub fn gen_smooth_flow(dims: Dims, max_disp: f64, seed: u64) -> Result<FlowField> {
    gen_smooth_flow_with_sigma(dims, max_disp, dims.map(|n| n as f64 / 8.0), seed)
}

/// [`gen_smooth_flow`] with an explicit per-axis smoothing width in voxels.
pub fn gen_smooth_flow_with_sigma(dims: Dims, max_disp: f64, sigma: [f64; 3], seed: u64) -> Result<FlowField> {
    if !(max_disp > 0.0) || !max_disp.is_finite() {
        return Err(Error::InvalidParameter(format!("max_disp {max_disp} must be positive")));
    }
    if sigma.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::InvalidParameter(format!("smoothing width {sigma:?} must be positive")));
    }
    check_dims(dims, 4)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut comps = Vec::with_capacity(3);
    for _ in 0..3 {
        let k = fft3(&white_noise(dims, &mut rng))?;
        let g = filter_spectrum(&k, |k| (0..3).map(|a| (-(sigma[a] * k[a]).powi(2) / 2.0).exp()).product());
        comps.push(ifft3(&g)?.re());
    }
    let mut flow = FlowField::from_components(&[comps[0].clone(), comps[1].clone(), comps[2].clone()])?;
    let m = flow.max_norm();
    if m <= 0.0 {
        return Err(Error::Degenerate("smooth flow vanished".into()));
    }
    flow.scale(max_disp / m);
    Ok(flow)
}

/// Independently drawn augmentation steps, applied in declaration order.
#[derive(Clone, Debug, PartialEq)]
pub struct Augmentation {
    /// 5³ Gaussian low-pass of each component.
    pub smooth: bool,
    /// Constant offset added to every vector.
    pub translation: Option<[f64; 3]>,
    /// Euler angles in degrees about z, y and x (applied in that order).
    pub rotation_deg: Option<[f64; 3]>,
    /// Seed of a positive modulation field with values in `[0.5, 1.5]`.
    pub modulation_seed: Option<u64>,
}

impl Augmentation {
    pub fn none() -> Self {
        Self { smooth: false, translation: None, rotation_deg: None, modulation_seed: None }
    }

    /// Each step is selected with probability 1/2; at least one is always selected.
    pub fn draw(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        loop {
            let mut a = Self::none();
            if rng.random_bool(0.5) {
                a.smooth = true;
            }
            if rng.random_bool(0.5) {
                a.translation = Some([0; 3].map(|_| rng.random_range(-10.0..=10.0)));
            }
            if rng.random_bool(0.5) {
                a.rotation_deg = Some([0; 3].map(|_| rng.random_range(-25.0..=25.0)));
            }
            if rng.random_bool(0.5) {
                a.modulation_seed = Some(rng.random());
            }
            if a != Self::none() {
                return a;
            }
        }
    }
}

pub fn augment_flow(flow: &FlowField, seed: u64) -> Result<FlowField> {
    apply_augmentation(flow, &Augmentation::draw(seed))
}

fn rotation_matrix(deg: [f64; 3]) -> [[f64; 3]; 3] {
    let [a, b, g] = deg.map(f64::to_radians);
    let rz = [[a.cos(), -a.sin(), 0.0], [a.sin(), a.cos(), 0.0], [0.0, 0.0, 1.0]];
    let ry = [[b.cos(), 0.0, b.sin()], [0.0, 1.0, 0.0], [-b.sin(), 0.0, b.cos()]];
    let rx = [[1.0, 0.0, 0.0], [0.0, g.cos(), -g.sin()], [0.0, g.sin(), g.cos()]];
    matmul(matmul(rz, ry), rx)
}

fn matmul(a: [[f64; 3]; 3], b: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

fn matvec(a: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|i| a[i][0] * v[0] + a[i][1] * v[1] + a[i][2] * v[2])
}

pub fn apply_augmentation(flow: &FlowField, aug: &Augmentation) -> Result<FlowField> {
    let dims = flow.dims();
    let mut out = flow.clone();
    if aug.smooth {
        let g: Vec<f64> = (-2..=2).map(|x: i32| (-(x * x) as f64 / 2.0).exp()).collect();
        let s: f64 = g.iter().sum();
        let g: Vec<f64> = g.iter().map(|v| v / s).collect();
        let comps: Vec<Volume> = (0..3)
            .map(|a| {
                let c = out.component(a);
                Volume::from_vec(dims, convolve_separable(c.data(), dims, [&g, &g, &g], Boundary::Clamp))
            })
            .collect::<Result<_>>()?;
        out = FlowField::from_components(&[comps[0].clone(), comps[1].clone(), comps[2].clone()])?;
    }
    if let Some(t) = aug.translation {
        for v in out.vectors_mut() {
            for a in 0..3 {
                v[a] += t[a];
            }
        }
    }
    if let Some(deg) = aug.rotation_deg {
        let r = rotation_matrix(deg);
        let rt = [0, 1, 2].map(|i| [0, 1, 2].map(|j| r[j][i]));
        let centre = dims.map(|n| (n as f64 - 1.0) / 2.0);
        let src = out.clone();
        out = FlowField::from_fn(dims, |x, y, z| {
            let d = [x as f64 - centre[0], y as f64 - centre[1], z as f64 - centre[2]];
            let q = matvec(&rt, d);
            let p = [0, 1, 2].map(|a| q[a] + centre[a]);
            matvec(&r, sample_flow(&src, p))
        });
    }
    if let Some(seed) = aug.modulation_seed {
        let s = gen_smooth_flow(dims, 1.0, seed)?.component(0);
        let (lo, hi) = s.min_max();
        let range = (hi - lo).max(1e-300);
        for (v, m) in out.vectors_mut().iter_mut().zip(s.data()) {
            let f = 0.5 + (m - lo) / range;
            for c in v.iter_mut() {
                *c *= f;
            }
        }
    }
    FlowField::with_reliability(dims, out.vectors().to_vec(), flow.reliable().to_vec())
}

/// Rescales the field so that its largest vector norm does not exceed `bound`.
pub fn bound_flow(flow: &mut FlowField, bound: f64) {
    let m = flow.max_norm();
    if m > bound {
        flow.scale(bound / m);
    }
}

/// Registered k-space pair whose reference flow satisfies
/// `fixed(x) = moving(x − u_ref(x))`: the moving image is the phantom itself and
/// the fixed image is the phantom warped by `flow`.
pub fn make_pair(
    phantom: &Volume,
    flow: &FlowField,
    mask_f: &SamplingMask,
    mask_m: &SamplingMask,
) -> Result<(KSpace, KSpace, FlowField)> {
    check_same_dims(phantom.dims(), flow.dims())?;
    let fixed = warp(phantom, flow)?;
    let v_f = apply_mask(&fft3(&fixed)?, mask_f)?;
    let v_m = apply_mask(&fft3(phantom)?, mask_m)?;
    Ok((v_f, v_m, flow.clone()))
}

/// Translates a volume by `u` with the shift theorem (periodic, band-limited).
pub fn fourier_shift(volume: &Volume, u: [f64; 3]) -> Result<Volume> {
    Ok(ifft3(&apply_phase_ramp(&fft3(volume)?, u)?)?.re())
}

/// Fraction of gradient energy `Σ |k|² |v(k)|²` carried by `|k| > cutoff`.
pub fn gradient_energy_fraction_above(volume: &Volume, cutoff: f64) -> Result<f64> {
    let k = fft3(volume)?;
    let d = k.dims();
    let axes = [k_axis(d[0]), k_axis(d[1]), k_axis(d[2])];
    let (mut hi, mut all) = (0.0, 0.0);
    for (i, v) in k.data().iter().enumerate() {
        let c = coords_of(d, i);
        let k2: f64 = (0..3).map(|a| axes[a][c[a]].powi(2)).sum();
        let e = k2 * v.norm_sqr();
        all += e;
        if k2.sqrt() > cutoff {
            hi += e;
        }
    }
    Ok(if all > 0.0 { hi / all } else { 0.0 })
}

/// Fraction of spectral energy of `volume` carried by `|k| > cutoff` (DC excluded).
pub fn spectral_energy_fraction_above(volume: &Volume, cutoff: f64) -> Result<f64> {
    let k = fft3(volume)?;
    let d = k.dims();
    let axes = [k_axis(d[0]), k_axis(d[1]), k_axis(d[2])];
    let (mut hi, mut all) = (0.0, 0.0);
    for (i, v) in k.data().iter().enumerate() {
        let c = coords_of(d, i);
        let kk: f64 = (0..3).map(|a| axes[a][c[a]].powi(2)).sum::<f64>().sqrt();
        if kk == 0.0 {
            continue;
        }
        all += v.norm_sqr();
        if kk > cutoff {
            hi += v.norm_sqr();
        }
    }
    Ok(if all > 0.0 { hi / all } else { 0.0 })
}
