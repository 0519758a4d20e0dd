//! Per-patch estimators.

use num_complex::Complex64;

use super::{count, patch_frequencies, KPatch};
use crate::error::{Error, Result};
use crate::filter_basis::{dtft_1d, AllPassFilter, BasisKernel, FilterBasis};
use crate::grid::{check_same_dims, Dims};
use crate::linalg::NormalEquations;

/// Kernel transfer function sampled on the DC-centred grid of `dims`.
pub fn transfer_on_grid(kernel: &BasisKernel, dims: Dims) -> Vec<Complex64> {
    let ks = patch_frequencies(dims);
    let mut out = vec![Complex64::new(0.0, 0.0); count(dims)];
    for t in &kernel.terms {
        let f: Vec<Vec<Complex64>> =
            (0..3).map(|a| ks[a].iter().map(|&k| dtft_1d(&t.factors[a], k)).collect()).collect();
        let mut i = 0;
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                let yz = f[1][y] * f[2][z] * t.coef;
                for x in 0..dims[0] {
                    out[i] += f[0][x] * yz;
                    i += 1;
                }
            }
        }
    }
    out
}

/// Fits `f = f_0 + Σ c_n f_n` so that `F(κ)·p_m(κ) ≈ F(−κ)·p_f(κ)` over the
/// jointly acquired samples of two patches.
pub fn solve_kspace_filter<'a>(
    fixed: &KPatch,
    moving: &KPatch,
    basis: &'a FilterBasis,
    ridge: f64,
) -> Result<AllPassFilter<'a>> {
    check_same_dims(fixed.dims(), moving.dims())?;
    fixed.data.check_finite()?;
    moving.data.check_finite()?;
    let dims = fixed.dims();
    let n = basis.n();
    let joint: Vec<usize> = (0..count(dims)).filter(|&i| fixed.mask[i] && moving.mask[i]).collect();
    if joint.len() < n + 1 {
        return Err(Error::InsufficientSamples(format!(
            "{} jointly acquired samples for {n} coefficients",
            joint.len()
        )));
    }
    let transfers: Vec<Vec<Complex64>> = basis.kernels().iter().map(|k| transfer_on_grid(k, dims)).collect();
    let mut ne = NormalEquations::new(n);
    let mut energy = 0.0;
    let (mut re, mut im) = (vec![0.0; n], vec![0.0; n]);
    for &i in &joint {
        let (pf, pm) = (fixed.data.data()[i], moving.data.data()[i]);
        // real kernels: F(−κ) = conj F(κ)
        let col = |t: &[Complex64]| t[i] * pm - t[i].conj() * pf;
        for c in 1..=n {
            let a = col(&transfers[c]);
            re[c - 1] = a.re;
            im[c - 1] = a.im;
        }
        let a0 = col(&transfers[0]);
        ne.add_row(&re, -a0.re, 1.0);
        ne.add_row(&im, -a0.im, 1.0);
        let f0 = transfers[0][i].norm_sqr();
        energy += f0 * (pm.norm_sqr() + pf.norm_sqr());
    }
    let c = ne.solve(ridge, 1e-20 * energy + 1e-300)?;
    AllPassFilter::new(basis, c)
}

/// Outcome of [`estimate_translation_phase_slope`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhaseSlopeEstimate {
    pub u: [f64; 3],
    /// False when unwrapping broke down inside half of the sampled radius.
    pub reliable: bool,
    pub samples: usize,
}

/// Samples weaker than this fraction of the strongest cross-power are ignored.
pub const PHASE_NOISE_FLOOR: f64 = 1e-6;

/// Shell residual RMS above which unwrapping is declared failed.
pub const UNWRAP_TOLERANCE: f64 = std::f64::consts::FRAC_PI_2;

/// Solves the 3×3 weighted normal equations, falling back to a tiny ridge
/// when an axis carries no information (e.g. single-slice patches).
fn solve3(a: &[f64; 9], b: &[f64; 3]) -> [f64; 3] {
    let m = nalgebra::Matrix3::from_row_slice(a);
    let trace = a[0] + a[4] + a[8];
    let reg = m + nalgebra::Matrix3::identity() * (1e-12 * trace);
    let x = reg
        .cholesky()
        .map(|c| c.solve(&nalgebra::Vector3::from_column_slice(b)))
        .unwrap_or_else(nalgebra::Vector3::zeros);
    [x[0], x[1], x[2]]
}

/// Patch frequencies of one shape listed by increasing radius, shared by
/// every patch a field estimate visits.
pub(crate) struct ShellOrder {
    dims: Dims,
    order: Vec<(usize, [f64; 3], f64)>,
}

impl ShellOrder {
    pub(crate) fn new(dims: Dims) -> Self {
        let ks = patch_frequencies(dims);
        let mut order = Vec::with_capacity(count(dims));
        let mut i = 0;
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    let k = [ks[0][x], ks[1][y], ks[2][z]];
                    order.push((i, k, (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]).sqrt()));
                    i += 1;
                }
            }
        }
        order.sort_by(|a, b| a.2.total_cmp(&b.2));
        Self { dims, order }
    }
}

/// Rigid translation from the linear phase of `p_f · conj(p_m)`, unwrapped
/// in radial shells against the running fit.
pub fn estimate_translation_phase_slope(fixed: &KPatch, moving: &KPatch) -> Result<PhaseSlopeEstimate> {
    phase_slope_with(&ShellOrder::new(fixed.dims()), fixed, moving)
}

pub(crate) fn phase_slope_with(shells: &ShellOrder, fixed: &KPatch, moving: &KPatch) -> Result<PhaseSlopeEstimate> {
    check_same_dims(fixed.dims(), moving.dims())?;
    check_same_dims(fixed.dims(), shells.dims)?;
    fixed.data.check_finite()?;
    moving.data.check_finite()?;
    let dims = fixed.dims();
    // (κ, weight, phase, radius) in radial order
    let mut samples: Vec<([f64; 3], f64, f64, f64)> = Vec::new();
    let mut wmax = 0.0f64;
    for &(i, k, r) in &shells.order {
        if fixed.mask[i] && moving.mask[i] {
            let cross = fixed.data.data()[i] * moving.data.data()[i].conj();
            let w = cross.norm();
            wmax = wmax.max(w);
            samples.push((k, w, cross.arg(), r));
        }
    }
    samples.retain(|s| s.1 > PHASE_NOISE_FLOOR * wmax && s.1 > 0.0);
    let nonzero = samples.iter().filter(|s| s.0 != [0.0; 3]).count();
    let spans = (0..3).filter(|&a| samples.iter().any(|s| s.0[a] != 0.0)).count();
    if nonzero < 4 || spans < dims.iter().filter(|&&d| d > 1).count().min(3) {
        return Err(Error::InsufficientSamples(format!("{nonzero} usable samples spanning {spans} axes")));
    }
    let step =
        dims.iter().filter(|&&d| d > 1).map(|&d| 2.0 * std::f64::consts::PI / d as f64).fold(f64::INFINITY, f64::min);

    // model: unwrapped phase = −u·κ. Shells are accepted outward until the
    // first one whose residual says the unwrap lost track; that shell and
    // everything beyond it are left out of the fit.
    let outer = samples.last().map_or(0.0, |s| s.3);
    let mut reached = 0.0f64;
    let mut a = [0.0; 9];
    let mut b = [0.0; 3];
    let mut u = [0.0; 3];
    let mut start = 0;
    while start < samples.len() {
        let shell = (samples[start].3 / step).floor();
        let mut end = start;
        while end < samples.len() && (samples[end].3 / step).floor() == shell {
            end += 1;
        }
        let (mut sa, mut sb) = (a, b);
        let (mut rss, mut wsum) = (0.0, 0.0);
        for (k, w, phi, _) in &samples[start..end] {
            let pred = -(u[0] * k[0] + u[1] * k[1] + u[2] * k[2]);
            let tau = std::f64::consts::TAU;
            let unwrapped = phi + tau * ((pred - phi) / tau).round();
            let r = unwrapped - pred;
            rss += w * r * r;
            wsum += w;
            for p in 0..3 {
                sb[p] -= w * k[p] * unwrapped;
                for q in 0..3 {
                    sa[p * 3 + q] += w * k[p] * k[q];
                }
            }
        }
        if wsum > 0.0 && (rss / wsum).sqrt() > UNWRAP_TOLERANCE {
            break;
        }
        reached = samples[end - 1].3;
        a = sa;
        b = sb;
        if a[0] + a[4] + a[8] > 0.0 {
            u = solve3(&a, &b);
        }
        start = end;
    }
    let reliable = reached >= 0.5 * outer;
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::Unwrap("non-finite phase fit".into()));
    }
    Ok(PhaseSlopeEstimate { u, reliable, samples: nonzero })
}
