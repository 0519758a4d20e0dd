//! Separable convolution helpers and flow-field smoothing.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{coords_of, Dims, FlowField, Volume};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Boundary {
    /// Samples outside the grid repeat the edge value.
    Clamp,
    /// The grid is periodic.
    Periodic,
    /// Samples outside the grid are dropped from the sum.
    Truncate,
}

/// True convolution along one axis with a centred odd-length kernel:
/// `out[x] = Σ_t taps[t] · src[x − (t − h)]`.
pub fn convolve_axis(src: &[f64], dims: Dims, axis: usize, taps: &[f64], boundary: Boundary) -> Vec<f64> {
    debug_assert!(taps.len() % 2 == 1);
    let n = dims[axis] as isize;
    let stride = [1, dims[0], dims[0] * dims[1]][axis] as isize;
    let h = (taps.len() / 2) as isize;
    (0..src.len())
        .into_par_iter()
        .map(|i| {
            let p = coords_of(dims, i)[axis] as isize;
            let base = i as isize - p * stride;
            let mut acc = 0.0;
            for (t, &w) in taps.iter().enumerate() {
                let q = p - (t as isize - h);
                let q = match boundary {
                    Boundary::Clamp => q.clamp(0, n - 1),
                    Boundary::Periodic => q.rem_euclid(n),
                    Boundary::Truncate => {
                        if q < 0 || q >= n {
                            continue;
                        }
                        q
                    }
                };
                acc += w * src[(base + q * stride) as usize];
            }
            acc
        })
        .collect()
}

/// Applies one 1D kernel per axis; a kernel equal to `[1.0]` is skipped.
pub fn convolve_separable(src: &[f64], dims: Dims, taps: [&[f64]; 3], boundary: Boundary) -> Vec<f64> {
    let mut cur: Option<Vec<f64>> = None;
    for (axis, t) in taps.iter().enumerate() {
        if t.len() == 1 && t[0] == 1.0 {
            continue;
        }
        let next = convolve_axis(cur.as_deref().unwrap_or(src), dims, axis, t, boundary);
        cur = Some(next);
    }
    cur.unwrap_or_else(|| src.to_vec())
}

/// Sum over a centred box of odd width `w` per axis, dropping out-of-grid samples.
pub fn box_sum(src: &[f64], dims: Dims, w: usize, boundary: Boundary) -> Vec<f64> {
    let ones = vec![1.0; w];
    convolve_separable(src, dims, [&ones, &ones, &ones], boundary)
}

/// Normalised sampled Gaussian with radius `ceil(3σ)`.
pub fn gaussian_taps(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil().max(1.0) as isize;
    let g: Vec<f64> = (-r..=r).map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

pub fn gaussian_smooth(volume: &Volume, sigma: f64) -> Volume {
    let g = gaussian_taps(sigma);
    let out = convolve_separable(volume.data(), volume.dims(), [&g, &g, &g], Boundary::Clamp);
    Volume::from_vec(volume.dims(), out).expect("same shape")
}

fn map_components(flow: &FlowField, f: impl Fn(&[f64]) -> Vec<f64>) -> FlowField {
    let comps: Vec<Vec<f64>> = (0..3).map(|a| f(flow.component(a).data())).collect();
    let vectors = (0..flow.len()).map(|i| [comps[0][i], comps[1][i], comps[2][i]]).collect();
    FlowField::with_reliability(flow.dims(), vectors, flow.reliable().to_vec())
        .expect("finite smoothing of a finite field")
}

/// Gaussian smoothing of each component with clamped boundaries.
pub fn smooth_flow_gaussian(flow: &FlowField, sigma: f64) -> FlowField {
    if sigma <= 0.0 {
        return flow.clone();
    }
    let g = gaussian_taps(sigma);
    map_components(flow, |c| convolve_separable(c, flow.dims(), [&g, &g, &g], Boundary::Clamp))
}

/// 3³ mean filter with clamped boundaries; constants are preserved exactly.
pub fn smooth_flow_box3(flow: &FlowField) -> FlowField {
    let b = [1.0 / 3.0; 3];
    map_components(flow, |c| convolve_separable(c, flow.dims(), [&b, &b, &b], Boundary::Clamp))
}

/// Normalised convolution: fills every voxel with the Gaussian-weighted mean of
/// the reliable voxels around it. The kernel widens until every voxel has support.
pub fn normalized_fill(flow: &FlowField, sigma: f64) -> Result<FlowField> {
    if flow.n_reliable() == 0 {
        return Err(Error::Degenerate("no reliable flow vectors".into()));
    }
    let d = flow.dims();
    let weights: Vec<f64> = flow.reliable().iter().map(|&r| r as u8 as f64).collect();
    let mut s = sigma;
    loop {
        let g = gaussian_taps(s);
        let conv = |v: &[f64]| convolve_separable(v, d, [&g, &g, &g], Boundary::Truncate);
        let wsum = conv(&weights);
        let floor = 1e-8;
        if wsum.iter().all(|&w| w > floor) || s > 4.0 * d.iter().copied().max().unwrap() as f64 {
            let comps: Vec<Vec<f64>> = (0..3)
                .map(|a| {
                    let masked: Vec<f64> = flow.vectors().iter().zip(&weights).map(|(v, w)| v[a] * w).collect();
                    conv(&masked)
                })
                .collect();
            let vectors = (0..flow.len())
                .map(|i| {
                    let w = wsum[i].max(f64::MIN_POSITIVE);
                    [comps[0][i] / w, comps[1][i] / w, comps[2][i] / w]
                })
                .collect();
            return FlowField::from_vectors(d, vectors);
        }
        s *= 2.0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn convolution_matches_direct_loop() {
        let d = [7, 5, 4];
        let src: Vec<f64> = (0..140).map(|i| ((i * 37) % 11) as f64).collect();
        let taps = [0.5, 2.0, -1.0];
        for boundary in [Boundary::Clamp, Boundary::Periodic, Boundary::Truncate] {
            let out = convolve_axis(&src, d, 1, &taps, boundary);
            for i in 0..src.len() {
                let [x, y, z] = coords_of(d, i);
                let mut want = 0.0;
                for (t, w) in taps.iter().enumerate() {
                    let q = y as isize - (t as isize - 1);
                    let q = match boundary {
                        Boundary::Clamp => q.clamp(0, 4),
                        Boundary::Periodic => q.rem_euclid(5),
                        Boundary::Truncate if !(0..5).contains(&q) => continue,
                        Boundary::Truncate => q,
                    } as usize;
                    want += w * src[x + 7 * (q + 5 * z)];
                }
                assert!((out[i] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gaussian_preserves_constants() {
        let v = Volume::filled([6, 6, 6], 2.5);
        for x in gaussian_smooth(&v, 1.3).data() {
            assert!((x - 2.5).abs() < 1e-12);
        }
    }

    #[test]
    fn fill_of_constant_field() {
        let mut f = FlowField::constant([9, 9, 9], [1.0, 1.0, 1.0]);
        f.reliable_mut()[200] = false;
        f.vectors_mut()[200] = [40.0, -3.0, 7.0];
        let g = normalized_fill(&f, 2.0).unwrap();
        for c in g.vectors()[200] {
            assert!((c - 1.0).abs() < 1e-12);
        }
    }
}
