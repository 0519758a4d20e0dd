//! Image-space LAP registration.
//!
//! Within a window around each voxel the filter `f = f_0 + Σ c_n f_n` is fitted
//! so that `f(−x) ∗ ρ_f ≈ f(x) ∗ ρ_m`; the local translation is then read off
//! the filter's first moment. Sign convention: `ρ_f(x) = ρ_m(x − u(x))`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::filter_basis::{flow_from_filter, AllPassFilter, BasisKernel, FilterBasis};
use crate::grid::{check_dims, check_same_dims, coords_of, linear_index, Dims, FlowField, Volume};
use crate::interp::{compose, warp};
use crate::linalg::{ridge_solve, NormalEquations};
use crate::smoothing::{
    box_sum, convolve_separable, normalized_fill, smooth_flow_box3, smooth_flow_gaussian, Boundary,
};

#[derive(Clone, Debug, PartialEq)]
pub struct LapLevel {
    /// Odd window (and basis support) size.
    pub w: usize,
    /// Number of re-warp passes spent at this size.
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LapConfig {
    pub levels: Vec<LapLevel>,
    /// Basis size `N` (3 or 4).
    pub n: usize,
    pub stride: usize,
    /// Ridge weight relative to `trace(M) / N`.
    pub ridge: f64,
    /// Gaussian width applied to every per-pass increment before it is composed
    /// into the running flow; 0 disables it.
    pub increment_sigma: f64,
}

impl Default for LapConfig {
    fn default() -> Self {
        Self::with_windows(&[65, 33, 17, 9, 5])
    }
}

impl LapConfig {
    /// One pass per window, twelve passes at the finest window.
    pub fn with_windows(windows: &[usize]) -> Self {
        let last = windows.len().saturating_sub(1);
        Self {
            levels: windows
                .iter()
                .enumerate()
                .map(|(i, &w)| LapLevel { w, iterations: if i == last { 12 } else { 1 } })
                .collect(),
            n: 4,
            stride: 1,
            ridge: 1e-6,
            increment_sigma: 3.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::InvalidParameter("no levels".into()));
        }
        for pair in self.levels.windows(2) {
            if pair[1].w >= pair[0].w {
                return Err(Error::InvalidParameter("levels must strictly decrease".into()));
            }
        }
        for l in &self.levels {
            if l.w < 5 || l.w % 2 == 0 || l.iterations == 0 {
                return Err(Error::InvalidParameter(format!("bad level {l:?}")));
            }
        }
        if self.stride == 0 {
            return Err(Error::InvalidParameter("stride must be positive".into()));
        }
        if !(3..=4).contains(&self.n) {
            return Err(Error::InvalidParameter(format!("basis size {}", self.n)));
        }
        if !(self.ridge >= 0.0) || !(self.increment_sigma >= 0.0) {
            return Err(Error::InvalidParameter("negative regularisation".into()));
        }
        Ok(())
    }

    pub fn finest_window(&self) -> usize {
        self.levels.last().map(|l| l.w).unwrap_or(5)
    }
}

/// How convolutions treat the patch edge in [`solve_local_filter`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PatchMode {
    /// Only output samples whose full kernel support lies inside the patch.
    Valid,
    /// The patch is treated as one period of a periodic image.
    Circular,
}

/// Response of `data` to a basis kernel; `mirrored` uses `f(−x)`.
pub(crate) fn kernel_response(
    data: &[f64],
    dims: Dims,
    kernel: &BasisKernel,
    mirrored: bool,
    boundary: Boundary,
) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for term in &kernel.terms {
        let factors: Vec<Vec<f64>> = term
            .factors
            .iter()
            .map(|f| {
                let mut f = f.clone();
                if mirrored {
                    f.reverse();
                }
                f
            })
            .collect();
        let r = convolve_separable(data, dims, [&factors[0], &factors[1], &factors[2]], boundary);
        for (o, v) in out.iter_mut().zip(r) {
            *o += term.coef * v;
        }
    }
    out
}

/// Per-sample columns `a_n = f_n(−x)∗ρ_f − f_n∗ρ_m`, target `f_0∗(ρ_m − ρ_f)` and
/// the smoothed signal energy used to detect flat windows.
struct Responses {
    columns: Vec<Vec<f64>>,
    target: Vec<f64>,
    energy: Vec<f64>,
}

fn responses(fixed: &[f64], moving: &[f64], dims: Dims, basis: &FilterBasis, boundary: Boundary) -> Responses {
    let mut columns = Vec::with_capacity(basis.n());
    let mut target = Vec::new();
    let mut energy = Vec::new();
    for (n, k) in basis.kernels().iter().enumerate() {
        let rf = kernel_response(fixed, dims, k, true, boundary);
        let rm = kernel_response(moving, dims, k, false, boundary);
        if n == 0 {
            target = rm.iter().zip(&rf).map(|(m, f)| m - f).collect();
            energy = rm.iter().zip(&rf).map(|(m, f)| m * m + f * f).collect();
        } else {
            columns.push(rf.iter().zip(&rm).map(|(f, m)| f - m).collect());
        }
    }
    Responses { columns, target, energy }
}

fn degeneracy_floor(energy: f64) -> f64 {
    1e-20 * energy + 1e-300
}

/// Fits the filter coefficients relating two local patches.
pub fn solve_local_filter<'a>(
    fixed: &Volume,
    moving: &Volume,
    basis: &'a FilterBasis,
    ridge: f64,
    mode: PatchMode,
) -> Result<AllPassFilter<'a>> {
    check_same_dims(fixed.dims(), moving.dims())?;
    let dims = fixed.dims();
    let sup = basis.support();
    let boundary = match mode {
        PatchMode::Valid => {
            if (0..3).any(|a| dims[a] < sup[a]) {
                return Err(Error::Shape(format!("patch {dims:?} smaller than kernel support {sup:?}")));
            }
            Boundary::Clamp
        }
        PatchMode::Circular => Boundary::Periodic,
    };
    let r = responses(fixed.data(), moving.data(), dims, basis, boundary);
    let h = sup.map(|s| s / 2);
    let mut ne = NormalEquations::new(basis.n());
    let mut energy = 0.0;
    let mut row = vec![0.0; basis.n()];
    for i in 0..fixed.len() {
        let p = coords_of(dims, i);
        if mode == PatchMode::Valid && (0..3).any(|a| p[a] < h[a] || p[a] + h[a] >= dims[a]) {
            continue;
        }
        for (n, c) in r.columns.iter().enumerate() {
            row[n] = c[i];
        }
        ne.add_row(&row, r.target[i], 1.0);
        energy += r.energy[i];
    }
    let c = ne.solve(ridge, degeneracy_floor(energy))?;
    AllPassFilter::new(basis, c)
}

fn max_abs(u: [f64; 3]) -> f64 {
    u.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Grid of window centres `0, s, 2s, …` along each axis, always including the last voxel.
pub(crate) fn stride_axis(n: usize, stride: usize) -> Vec<usize> {
    let mut v: Vec<usize> = (0..n).step_by(stride).collect();
    if *v.last().unwrap() != n - 1 {
        v.push(n - 1);
    }
    v
}

/// Fills a full-resolution field from estimates on a stride grid by trilinear
/// interpolation over the reliable corners of each cell.
pub(crate) fn expand_stride_grid(
    dims: Dims,
    axes: &[Vec<usize>; 3],
    values: &[[f64; 3]],
    reliable: &[bool],
) -> FlowField {
    let g = [axes[0].len(), axes[1].len(), axes[2].len()];
    // cell lookup: index of the grid node at or below each coordinate
    let lower: Vec<Vec<usize>> = (0..3)
        .map(|a| {
            (0..dims[a])
                .map(|p| axes[a].partition_point(|&c| c <= p).saturating_sub(1).min(g[a].saturating_sub(2)))
                .collect()
        })
        .collect();
    let out: Vec<([f64; 3], bool)> = (0..crate::grid::voxel_count(dims))
        .into_par_iter()
        .map(|i| {
            let p = coords_of(dims, i);
            let mut acc = [0.0; 3];
            let mut wsum = 0.0;
            let mut idx = [[0usize; 2]; 3];
            let mut t = [[0.0f64; 2]; 3];
            for a in 0..3 {
                let l = lower[a][p[a]];
                let u = (l + 1).min(g[a] - 1);
                idx[a] = [l, u];
                let (c0, c1) = (axes[a][l], axes[a][u]);
                let f = if c1 > c0 { (p[a] - c0) as f64 / (c1 - c0) as f64 } else { 0.0 };
                t[a] = [1.0 - f, f];
            }
            for dz in 0..2 {
                for dy in 0..2 {
                    for dx in 0..2 {
                        let w = t[0][dx] * t[1][dy] * t[2][dz];
                        if w == 0.0 {
                            continue;
                        }
                        let j = linear_index(g, idx[0][dx], idx[1][dy], idx[2][dz]);
                        if reliable[j] {
                            for a in 0..3 {
                                acc[a] += w * values[j][a];
                            }
                            wsum += w;
                        }
                    }
                }
            }
            if wsum > 0.0 {
                (acc.map(|v| v / wsum), true)
            } else {
                ([0.0; 3], false)
            }
        })
        .collect();
    let (vectors, flags): (Vec<_>, Vec<_>) = out.into_iter().unzip();
    FlowField::with_reliability(dims, vectors, flags).expect("finite interpolation")
}

/// One sliding-window pass. Failed or out-of-range windows are flagged unreliable.
pub fn estimate_flow_single_level(
    fixed: &Volume,
    moving: &Volume,
    basis: &FilterBasis,
    ridge: f64,
    stride: usize,
) -> Result<FlowField> {
    check_same_dims(fixed.dims(), moving.dims())?;
    check_dims(fixed.dims(), 4)?;
    if stride == 0 {
        return Err(Error::InvalidParameter("stride must be positive".into()));
    }
    let dims = fixed.dims();
    let w = basis.w();
    let r = responses(fixed.data(), moving.data(), dims, basis, Boundary::Clamp);
    let n = basis.n();
    // windowed sums of all products entering the normal equations
    let mut products: Vec<Vec<f64>> = Vec::new();
    for i in 0..n {
        for j in i..n {
            products.push(r.columns[i].iter().zip(&r.columns[j]).map(|(a, b)| a * b).collect());
        }
    }
    for i in 0..n {
        products.push(r.columns[i].iter().zip(&r.target).map(|(a, b)| a * b).collect());
    }
    products.push(r.energy.clone());
    let sums: Vec<Vec<f64>> = products.par_iter().map(|p| box_sum(p, dims, w, Boundary::Truncate)).collect();

    let axes = [stride_axis(dims[0], stride), stride_axis(dims[1], stride), stride_axis(dims[2], stride)];
    let limit = w as f64 / 2.0 - 1.0;
    let centres: Vec<usize> = {
        let mut v = Vec::new();
        for &z in &axes[2] {
            for &y in &axes[1] {
                for &x in &axes[0] {
                    v.push(linear_index(dims, x, y, z));
                }
            }
        }
        v
    };
    let est: Vec<([f64; 3], bool)> = centres
        .par_iter()
        .map(|&i| {
            let mut m = vec![0.0; n * n];
            let mut b = vec![0.0; n];
            let mut k = 0;
            for p in 0..n {
                for q in p..n {
                    m[p * n + q] = sums[k][i];
                    m[q * n + p] = sums[k][i];
                    k += 1;
                }
            }
            for bp in b.iter_mut() {
                *bp = sums[k][i];
                k += 1;
            }
            let energy = sums[k][i];
            let solved = ridge_solve(&m, &b, ridge, degeneracy_floor(energy))
                .and_then(|c| AllPassFilter::new(basis, c))
                .and_then(|f| flow_from_filter(&f));
            match solved {
                Ok(u) if max_abs(u) <= limit => (u, true),
                _ => ([0.0; 3], false),
            }
        })
        .collect();
    let (values, flags): (Vec<_>, Vec<_>) = est.into_iter().unzip();
    if stride == 1 {
        return FlowField::with_reliability(dims, values, flags);
    }
    Ok(expand_stride_grid(dims, &axes, &values, &flags))
}

/// Replaces unreliable vectors by a normalised-convolution fill (σ = 2) and
/// smooths the whole field with a 3³ mean filter.
pub fn inpaint_flow(flow: &FlowField) -> Result<FlowField> {
    let filled = normalized_fill(flow, 2.0)?;
    let mut merged = flow.clone();
    for i in 0..flow.len() {
        if !flow.reliable()[i] {
            merged.vectors_mut()[i] = filled.vectors()[i];
        }
    }
    merged.mark_all_reliable();
    Ok(smooth_flow_box3(&merged))
}

/// Coarse-to-fine registration. Before every pass the moving image is warped by
/// the running flow; the pass increment is cleaned, smoothed and composed in.
/// Levels whose window exceeds the smallest volume dimension are skipped.
pub fn estimate_flow_multires(fixed: &Volume, moving: &Volume, config: &LapConfig) -> Result<FlowField> {
    config.validate()?;
    check_same_dims(fixed.dims(), moving.dims())?;
    check_dims(fixed.dims(), 4)?;
    let dims = fixed.dims();
    let smallest = *dims.iter().min().unwrap();
    let mut u = FlowField::zeros(dims);
    let mut ran = false;
    for level in config.levels.iter().filter(|l| l.w <= smallest) {
        let basis = FilterBasis::new(level.w, config.n)?;
        for _ in 0..level.iterations {
            let warped = warp(moving, &u)?;
            let du = estimate_flow_single_level(fixed, &warped, &basis, config.ridge, config.stride)?;
            let du = match inpaint_flow(&du) {
                Ok(f) => f,
                // nothing usable at this size: keep the current flow
                Err(_) => continue,
            };
            let du = smooth_flow_gaussian(&du, config.increment_sigma);
            u = compose(&du, &u)?;
            ran = true;
        }
    }
    if !ran && config.levels.iter().all(|l| l.w > smallest) {
        return Err(Error::InvalidParameter(format!("every window exceeds the volume {dims:?}")));
    }
    u.mark_all_reliable();
    Ok(u)
}
