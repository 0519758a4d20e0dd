//! Trilinear sampling and flow-driven warping with clamp-to-edge boundaries.

use rayon::prelude::*;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{check_same_dims, coords_of, linear_index, Dims, FlowField, Grid, Volume};

#[inline]
fn axis_weights(p: f64, n: usize) -> (usize, usize, f64) {
    let p = p.clamp(0.0, (n - 1) as f64);
    let i0 = (p.floor() as usize).min(n - 1);
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, p - i0 as f64)
}

/// Trilinear interpolation of any per-voxel quantity supporting weighted sums.
#[inline]
pub fn trilinear_with<T, F>(dims: Dims, p: [f64; 3], fetch: F) -> T
where
    T: Copy + std::ops::Mul<f64, Output = T> + std::ops::Add<Output = T>,
    F: Fn(usize, usize, usize) -> T,
{
    let (x0, x1, tx) = axis_weights(p[0], dims[0]);
    let (y0, y1, ty) = axis_weights(p[1], dims[1]);
    let (z0, z1, tz) = axis_weights(p[2], dims[2]);
    let lerp = |a: T, b: T, t: f64| a * (1.0 - t) + b * t;
    let c00 = lerp(fetch(x0, y0, z0), fetch(x1, y0, z0), tx);
    let c10 = lerp(fetch(x0, y1, z0), fetch(x1, y1, z0), tx);
    let c01 = lerp(fetch(x0, y0, z1), fetch(x1, y0, z1), tx);
    let c11 = lerp(fetch(x0, y1, z1), fetch(x1, y1, z1), tx);
    lerp(lerp(c00, c10, ty), lerp(c01, c11, ty), tz)
}

pub fn trilinear(volume: &Volume, p: [f64; 3]) -> f64 {
    trilinear_with(volume.dims(), p, |x, y, z| *volume.at(x, y, z))
}

pub fn sample_flow(flow: &FlowField, p: [f64; 3]) -> [f64; 3] {
    let d = flow.dims();
    let mut out = [0.0; 3];
    for (a, o) in out.iter_mut().enumerate() {
        *o = trilinear_with(d, p, |x, y, z| flow.at(x, y, z)[a]);
    }
    out
}

/// `out(x) = volume(x − u(x))`.
pub fn warp(volume: &Volume, flow: &FlowField) -> Result<Volume> {
    check_same_dims(volume.dims(), flow.dims())?;
    let d = volume.dims();
    let data: Vec<f64> = (0..volume.len())
        .into_par_iter()
        .map(|i| {
            let c = coords_of(d, i);
            let u = flow.vectors()[i];
            trilinear(volume, [c[0] as f64 - u[0], c[1] as f64 - u[1], c[2] as f64 - u[2]])
        })
        .collect();
    Grid::from_vec(d, data)
}

/// Complex-valued [`warp`] on raw x-fastest data.
pub fn warp_complex(data: &[Complex64], dims: Dims, flow: &FlowField) -> Result<Vec<Complex64>> {
    check_same_dims(dims, flow.dims())?;
    if data.len() != flow.len() {
        return Err(Error::Shape("data length does not match the flow".into()));
    }
    Ok((0..data.len())
        .into_par_iter()
        .map(|i| {
            let c = coords_of(dims, i);
            let u = flow.vectors()[i];
            let p = [c[0] as f64 - u[0], c[1] as f64 - u[1], c[2] as f64 - u[2]];
            trilinear_with(dims, p, |x, y, z| data[linear_index(dims, x, y, z)])
        })
        .collect())
}

/// Flow of warping first by `base` and then by `increment`:
/// `u(x) = Δ(x) + base(x − Δ(x))`, so that
/// `warp(warp(m, base), increment) ≈ warp(m, u)`.
pub fn compose(increment: &FlowField, base: &FlowField) -> Result<FlowField> {
    check_same_dims(increment.dims(), base.dims())?;
    let d = base.dims();
    let vectors: Vec<[f64; 3]> = (0..base.len())
        .into_par_iter()
        .map(|i| {
            let c = coords_of(d, i);
            let du = increment.vectors()[i];
            let b = sample_flow(base, [c[0] as f64 - du[0], c[1] as f64 - du[1], c[2] as f64 - du[2]]);
            [du[0] + b[0], du[1] + b[1], du[2] + b[2]]
        })
        .collect();
    let reliable = increment.reliable().iter().zip(base.reliable()).map(|(a, b)| *a && *b).collect();
    FlowField::with_reliability(d, vectors, reliable)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_flow_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = Volume::from_fn([6, 5, 4], |_, _, _| rng.random());
        assert_eq!(warp(&v, &FlowField::zeros(v.dims())).unwrap(), v);
    }

    #[test]
    fn integer_flow_shifts_interior() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v = Volume::from_fn([10, 6, 6], |_, _, _| rng.random());
        let w = warp(&v, &FlowField::constant(v.dims(), [2.0, 0.0, 0.0])).unwrap();
        for z in 0..6 {
            for y in 0..6 {
                for x in 2..10 {
                    assert_eq!(w.at(x, y, z), v.at(x - 2, y, z));
                }
            }
        }
    }

    #[test]
    fn clamps_outside() {
        let v = Volume::from_fn([4, 4, 4], |x, _, _| x as f64);
        assert_eq!(trilinear(&v, [-3.0, 1.5, 9.0]), 0.0);
        assert_eq!(trilinear(&v, [7.0, 0.0, 0.0]), 3.0);
        assert!((trilinear(&v, [1.25, 2.0, 2.0]) - 1.25).abs() < 1e-15);
    }

    #[test]
    fn compose_of_constants_adds() {
        let d = [8, 8, 8];
        let a = FlowField::constant(d, [0.5, -1.0, 0.25]);
        let b = FlowField::constant(d, [1.0, 2.0, -0.5]);
        let c = compose(&a, &b).unwrap();
        for v in c.vectors() {
            assert!((v[0] - 1.5).abs() < 1e-12 && (v[1] - 1.0).abs() < 1e-12);
        }
    }
}
