//! Sliding-window k-space registration.
//!
//! The filter solver minimises the tapered k-space residual of every window.
//! By Parseval that residual equals a window-weighted image-domain residual of
//! the basis-filtered volumes `ifft3(F_n·v_m)` and `ifft3(conj F_n·v_f)`, which
//! is how it is evaluated here: once per volume rather than once per patch.
//! Later stages resample the filtered moving volumes along the running flow and
//! estimate an increment, which is composed into the flow.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rayon::prelude::*;

use super::solve::{phase_slope_with, ShellOrder};
use super::{propagate_mask, solve::transfer_on_grid, windowed_crop_patch_with, Taper};
use crate::error::{Error, Result};
use crate::filter_basis::{flow_from_filter, AllPassFilter, FilterBasis};
use crate::fourier::{ifft3, k_axis, Fft3};
use crate::grid::{check_dims, check_same_dims, linear_index, CVolume, Dims, FlowField, Grid, KSpace};
use crate::interp::{compose, warp_complex};
use crate::lap_image::{expand_stride_grid, inpaint_flow, stride_axis};
use crate::linalg::ridge_solve;
use crate::sampling::SamplingMask;
use crate::smoothing::{convolve_separable, smooth_flow_gaussian, Boundary};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KSolver {
    /// Local all-pass filter fit.
    Filter,
    /// Rigid phase-slope fit per window.
    PhaseSlope,
}

impl fmt::Display for KSolver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KSolver::Filter => "filter",
            KSolver::PhaseSlope => "phase_slope",
        })
    }
}

impl FromStr for KSolver {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "filter" => Ok(KSolver::Filter),
            "phase_slope" => Ok(KSolver::PhaseSlope),
            _ => Err(Error::InvalidParameter(format!("unknown k-space solver '{s}'"))),
        }
    }
}

/// One pass of the sliding window.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KStage {
    pub taper_w: usize,
    pub basis_w: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KspaceConfig {
    pub solver: KSolver,
    /// Coarse to fine. The phase-slope solver ignores `basis_w`.
    pub stages: Vec<KStage>,
    pub n: usize,
    pub stride: usize,
    pub ridge: f64,
    /// Gaussian smoothing applied to every stage increment.
    pub smoothing_sigma: f64,
}

impl Default for KspaceConfig {
    fn default() -> Self {
        Self {
            solver: KSolver::Filter,
            stages: vec![
                KStage { taper_w: 33, basis_w: 21 },
                KStage { taper_w: 17, basis_w: 9 },
                KStage { taper_w: 17, basis_w: 9 },
                KStage { taper_w: 9, basis_w: 5 },
                KStage { taper_w: 9, basis_w: 5 },
            ],
            n: 4,
            stride: 2,
            ridge: 1e-6,
            smoothing_sigma: 2.0,
        }
    }
}

impl KspaceConfig {
    pub fn phase_slope() -> Self {
        Self { solver: KSolver::PhaseSlope, stages: vec![KStage { taper_w: 17, basis_w: 9 }; 3], ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::InvalidParameter("no stages".into()));
        }
        for s in &self.stages {
            if s.taper_w % 2 == 0 || s.basis_w % 2 == 0 || s.taper_w < 3 || s.basis_w < 3 || s.basis_w > s.taper_w {
                return Err(Error::InvalidParameter(format!("bad stage {s:?}")));
            }
        }
        if self.stride == 0 {
            return Err(Error::InvalidParameter("stride must be positive".into()));
        }
        if !(3..=4).contains(&self.n) {
            return Err(Error::InvalidParameter(format!("basis size {}", self.n)));
        }
        if !(self.ridge >= 0.0) || !(self.smoothing_sigma >= 0.0) {
            return Err(Error::InvalidParameter("negative regularisation".into()));
        }
        Ok(())
    }
}

/// Dense flow field from two (possibly zero-filled) k-spaces.
pub fn kspace_flow_field(
    fixed: &KSpace,
    moving: &KSpace,
    fixed_mask: &SamplingMask,
    moving_mask: &SamplingMask,
    config: &KspaceConfig,
) -> Result<FlowField> {
    config.validate()?;
    check_same_dims(fixed.dims(), moving.dims())?;
    check_same_dims(fixed.dims(), fixed_mask.dims())?;
    check_same_dims(fixed.dims(), moving_mask.dims())?;
    check_dims(fixed.dims(), 4)?;
    fixed.check_finite()?;
    moving.check_finite()?;
    let dims = fixed.dims();
    let axes =
        [stride_axis(dims[0], config.stride), stride_axis(dims[1], config.stride), stride_axis(dims[2], config.stride)];
    let centres: Vec<[usize; 3]> = {
        let mut v = Vec::new();
        for &z in &axes[2] {
            for &y in &axes[1] {
                for &x in &axes[0] {
                    v.push([x, y, z]);
                }
            }
        }
        v
    };
    let mut flow = FlowField::zeros(dims);
    match config.solver {
        KSolver::Filter => {
            let mut started = false;
            for stage in &config.stages {
                if stage.taper_w > *dims.iter().min().unwrap() {
                    continue;
                }
                let est = filter_stage(fixed, moving, started.then_some(&flow), &centres, stage, config)?;
                let du = finish_stage(dims, &axes, est, config.smoothing_sigma)?;
                flow = if started { compose(&du, &flow)? } else { du };
                started = true;
            }
        }
        KSolver::PhaseSlope => {
            let imf = ifft3(&band_pass(fixed, PHASE_BAND_SIGMA))?;
            let imm = ifft3(&band_pass(moving, PHASE_BAND_SIGMA))?;
            let mut started = false;
            for stage in &config.stages {
                if stage.taper_w > *dims.iter().min().unwrap() {
                    continue;
                }
                // the window shrinks each slope toward zero; later stages only
                // see the residual left after warping by the running flow
                let warped;
                let moved = if started {
                    warped = Grid::from_vec(dims, warp_complex(imm.data(), dims, &flow)?)?;
                    &warped
                } else {
                    &imm
                };
                let est = phase_stage(&imf, moved, fixed_mask, moving_mask, &centres, stage.taper_w)?;
                let du = finish_stage(dims, &axes, est, config.smoothing_sigma)?;
                flow = if started { compose(&du, &flow)? } else { du };
                started = true;
            }
        }
    }
    flow.mark_all_reliable();
    Ok(flow)
}

fn phase_stage(
    fixed: &CVolume,
    moving: &CVolume,
    fixed_mask: &SamplingMask,
    moving_mask: &SamplingMask,
    centres: &[[usize; 3]],
    taper_w: usize,
) -> Result<Vec<([f64; 3], bool)>> {
    let taper = Taper::hann(taper_w)?;
    let fm = propagate_mask(fixed_mask, taper.w());
    let mm = propagate_mask(moving_mask, taper.w());
    let limit = taper.w() as f64 / 2.0 - 1.0;
    let shells = ShellOrder::new([taper.w(); 3]);
    let plan = Fft3::new([taper.w(); 3], rustfft::FftDirection::Forward);
    Ok(centres
        .par_iter()
        .map(|&c| {
            let pf = windowed_crop_patch_with(fixed, c, &taper, &plan).with_mask(fm.clone());
            let pm = windowed_crop_patch_with(moving, c, &taper, &plan).with_mask(mm.clone());
            match pf.and_then(|pf| pm.and_then(|pm| phase_slope_with(&shells, &pf, &pm))) {
                Ok(e) if e.reliable && e.u.iter().all(|v| v.abs() <= limit) => (e.u, true),
                _ => ([0.0; 3], false),
            }
        })
        .collect())
}

/// Width of the band-pass applied before phase-slope patches are cut.
pub const PHASE_BAND_SIGMA: f64 = 1.0;

// |k|² e^{-|k|²σ²/2}: removes the flat parts of the anatomy, whose windowed
// spectrum would otherwise stay put and pull the slope toward zero.
fn band_pass(kspace: &KSpace, sigma: f64) -> KSpace {
    let dims = kspace.dims();
    let ks = [k_axis(dims[0]), k_axis(dims[1]), k_axis(dims[2])];
    let mut out = kspace.clone();
    let mut i = 0;
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let k2 = ks[0][x].powi(2) + ks[1][y].powi(2) + ks[2][z].powi(2);
                out.data_mut()[i] *= k2 * (-0.5 * k2 * sigma * sigma).exp();
                i += 1;
            }
        }
    }
    out
}

fn finish_stage(dims: Dims, axes: &[Vec<usize>; 3], est: Vec<([f64; 3], bool)>, sigma: f64) -> Result<FlowField> {
    let (values, flags): (Vec<_>, Vec<_>) = est.into_iter().unzip();
    let field = expand_stride_grid(dims, axes, &values, &flags);
    let field = inpaint_flow(&field)?;
    Ok(smooth_flow_gaussian(&field, sigma))
}

/// Basis-filtered volumes of one stage: `moving[n] = ifft3(F_n·v_m)` and
/// `fixed[n] = ifft3(conj F_n·v_f)`.
struct Filtered {
    moving: Vec<Vec<Complex64>>,
    fixed: Vec<Vec<Complex64>>,
}

fn filtered_volumes(fixed: &KSpace, moving: &KSpace, basis: &FilterBasis) -> Result<Filtered> {
    let dims = fixed.dims();
    let mut out = Filtered { moving: Vec::new(), fixed: Vec::new() };
    for k in basis.kernels() {
        let t = transfer_on_grid(k, dims);
        let m: Vec<Complex64> = t.iter().zip(moving.data()).map(|(a, b)| a * b).collect();
        let f: Vec<Complex64> = t.iter().zip(fixed.data()).map(|(a, b)| a.conj() * b).collect();
        out.moving.push(ifft3(&Grid::from_vec(dims, m)?)?.into_data());
        out.fixed.push(ifft3(&Grid::from_vec(dims, f)?)?.into_data());
    }
    Ok(out)
}

/// Upper-triangle products of the columns, the right-hand sides and the energy.
fn product_count(n: usize) -> usize {
    n * (n + 1) / 2 + n + 1
}

#[inline]
fn accumulate(acc: &mut [f64], a: &[Complex64], e: f64, w: f64) {
    let n = a.len() - 1;
    let mut k = 0;
    for p in 1..=n {
        for q in p..=n {
            acc[k] += w * (a[p].re * a[q].re + a[p].im * a[q].im);
            k += 1;
        }
    }
    for p in 1..=n {
        acc[k] -= w * (a[p].re * a[0].re + a[p].im * a[0].im);
        k += 1;
    }
    acc[k] += w * e;
}

fn solve_products<'a>(acc: &[f64], basis: &'a FilterBasis, ridge: f64) -> Result<AllPassFilter<'a>> {
    let n = basis.n();
    let mut m = vec![0.0; n * n];
    let mut k = 0;
    for p in 0..n {
        for q in p..n {
            m[p * n + q] = acc[k];
            m[q * n + p] = acc[k];
            k += 1;
        }
    }
    let b = acc[k..k + n].to_vec();
    let energy = acc[k + n];
    let c = ridge_solve(&m, &b, ridge, 1e-20 * energy + 1e-300)?;
    AllPassFilter::new(basis, c)
}

fn filter_stage(
    fixed: &KSpace,
    moving: &KSpace,
    flow: Option<&FlowField>,
    centres: &[[usize; 3]],
    stage: &KStage,
    config: &KspaceConfig,
) -> Result<Vec<([f64; 3], bool)>> {
    let dims = fixed.dims();
    let basis = FilterBasis::new(stage.basis_w, config.n)?;
    let taper = Taper::hann(stage.taper_w)?;
    let w2: Vec<f64> = taper.window().iter().map(|v| v * v).collect();
    let vols = filtered_volumes(fixed, moving, &basis)?;
    let n = config.n;
    let np = product_count(n);
    let limit = stage.basis_w as f64 / 2.0 - 1.0;
    let total = crate::grid::voxel_count(dims);

    let solve_at = |acc: &[f64]| -> ([f64; 3], bool) {
        match solve_products(acc, &basis, config.ridge).and_then(|f| flow_from_filter(&f)) {
            Ok(u) if u.iter().all(|v| v.abs() <= limit) => (u, true),
            _ => ([0.0; 3], false),
        }
    };

    let moving_vols: Vec<Vec<Complex64>> = match flow {
        None => vols.moving,
        Some(u) => vols.moving.iter().map(|v| warp_complex(v, dims, u)).collect::<Result<_>>()?,
    };
    let mut products = vec![vec![0.0; total]; np];
    let mut a = vec![Complex64::new(0.0, 0.0); n + 1];
    let mut acc = vec![0.0; np];
    for i in 0..total {
        for (j, aj) in a.iter_mut().enumerate() {
            *aj = moving_vols[j][i] - vols.fixed[j][i];
        }
        let e = moving_vols[0][i].norm_sqr() + vols.fixed[0][i].norm_sqr();
        acc.iter_mut().for_each(|v| *v = 0.0);
        accumulate(&mut acc, &a, e, 1.0);
        for (p, v) in products.iter_mut().zip(&acc) {
            p[i] = *v;
        }
    }
    let sums: Vec<Vec<f64>> =
        products.par_iter().map(|p| convolve_separable(p, dims, [&w2, &w2, &w2], Boundary::Periodic)).collect();
    Ok(centres
        .par_iter()
        .map(|c| {
            let i = linear_index(dims, c[0], c[1], c[2]);
            let acc: Vec<f64> = sums.iter().map(|s| s[i]).collect();
            solve_at(&acc)
        })
        .collect())
}
