//! Unitary, DC-centred 3D discrete Fourier transforms and the shift theorem.
//!
//! Sample `i` along an axis of length `n` sits at frequency
//! `k = 2π (i − n/2) / n` (integer division), so DC lives at index `n/2`.
//! Image-domain sample `x` sits at position `x`, i.e. the image grid is not
//! shifted; only the frequency axis is centred.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftDirection, FftPlanner};

use crate::error::Result;
use crate::grid::{CVolume, Dims, Grid, KSpace, Volume};

/// Frequencies of a centred axis of length `n`.
pub fn k_axis(n: usize) -> Vec<f64> {
    (0..n).map(|i| k_of(i, n)).collect()
}

#[inline]
pub fn k_of(i: usize, n: usize) -> f64 {
    2.0 * PI * (i as f64 - (n / 2) as f64) / n as f64
}

pub fn fft3(volume: &Volume) -> Result<KSpace> {
    volume.check_finite()?;
    fft3_complex(&volume.to_complex())
}

pub fn fft3_complex(volume: &CVolume) -> Result<KSpace> {
    volume.check_finite()?;
    let mut data = volume.data().to_vec();
    transform(&mut data, volume.dims(), FftDirection::Forward);
    Grid::from_vec(volume.dims(), data)
}

pub fn ifft3(kspace: &KSpace) -> Result<CVolume> {
    kspace.check_finite()?;
    let mut data = kspace.data().to_vec();
    transform(&mut data, kspace.dims(), FftDirection::Inverse);
    Grid::from_vec(kspace.dims(), data)
}

/// Multiplies every sample by `exp(-j u·k)`, which shifts the image by `+u`.
pub fn apply_phase_ramp(kspace: &KSpace, u: [f64; 3]) -> Result<KSpace> {
    kspace.check_finite()?;
    if u.iter().any(|c| !c.is_finite()) {
        return Err(crate::Error::NonFinite("phase ramp".into()));
    }
    let d = kspace.dims();
    let ramps: Vec<Vec<Complex64>> =
        (0..3).map(|a| k_axis(d[a]).into_iter().map(|k| Complex64::from_polar(1.0, -u[a] * k)).collect()).collect();
    Ok(Grid::from_fn(d, |x, y, z| kspace.at(x, y, z) * ramps[0][x] * ramps[1][y] * ramps[2][z]))
}

pub(crate) fn transform(data: &mut [Complex64], dims: Dims, direction: FftDirection) {
    Fft3::new(dims, direction).process(data, true);
}

/// Planned centred unitary 3D transform for one shape, reusable across calls.
pub(crate) struct Fft3 {
    dims: Dims,
    direction: FftDirection,
    ffts: [Option<Arc<dyn Fft<f64>>>; 3],
}

impl Fft3 {
    pub(crate) fn new(dims: Dims, direction: FftDirection) -> Self {
        let mut planner = FftPlanner::new();
        let mut plan = |n: usize| (n > 1).then(|| planner.plan_fft(n, direction));
        Self { dims, direction, ffts: [plan(dims[0]), plan(dims[1]), plan(dims[2])] }
    }

    /// `parallel` spreads the lines of each axis over the thread pool; leave
    /// it off inside work that is already parallel.
    pub(crate) fn process(&self, data: &mut [Complex64], parallel: bool) {
        let dims = self.dims;
        let strides = [1, dims[0], dims[0] * dims[1]];
        for axis in 0..3 {
            let Some(fft) = &self.ffts[axis] else { continue };
            let n = dims[axis];
            let stride = strides[axis];
            let (o1, o2) = ((axis + 1) % 3, (axis + 2) % 3);
            let starts: Vec<usize> =
                (0..dims[o2]).flat_map(|b| (0..dims[o1]).map(move |a| a * strides[o1] + b * strides[o2])).collect();
            let mut lines = vec![Complex64::new(0.0, 0.0); starts.len() * n];
            for (l, &s) in starts.iter().enumerate() {
                for i in 0..n {
                    lines[l * n + i] = data[s + i * stride];
                }
            }
            let scale = 1.0 / (n as f64).sqrt();
            let direction = self.direction;
            let run = |line: &mut [Complex64]| {
                match direction {
                    FftDirection::Inverse => {
                        line.rotate_left(n / 2);
                        fft.process(line);
                    }
                    FftDirection::Forward => {
                        fft.process(line);
                        line.rotate_right(n / 2);
                    }
                }
                for v in line.iter_mut() {
                    *v *= scale;
                }
            };
            if parallel {
                lines.par_chunks_mut(n).for_each(run);
            } else {
                lines.chunks_mut(n).for_each(run);
            }
            for (l, &s) in starts.iter().enumerate() {
                for i in 0..n {
                    data[s + i * stride] = lines[l * n + i];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::voxel_count;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_volume(dims: Dims, seed: u64) -> Volume {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Volume::from_fn(dims, |_, _, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn impulse_at_centre_gives_flat_spectrum() {
        let d = [8, 6, 4];
        let mut v = Volume::zeros(d);
        *v.at_mut(4, 3, 2) = 1.0;
        let k = fft3(&v).unwrap();
        let m = 1.0 / (voxel_count(d) as f64).sqrt();
        for c in k.data() {
            assert!((c.norm() - m).abs() < 1e-14);
        }
    }

    #[test]
    fn constant_volume_is_pure_dc() {
        let d = [6, 5, 4];
        let k = fft3(&Volume::filled(d, 1.0)).unwrap();
        let dc = crate::grid::linear_index(d, 3, 2, 2);
        for (i, c) in k.data().iter().enumerate() {
            if i == dc {
                assert!((c.re - (voxel_count(d) as f64).sqrt()).abs() < 1e-12);
            } else {
                assert!(c.norm() < 1e-12);
            }
        }
    }

    #[test]
    fn round_trip_and_parseval() {
        let v = random_volume([8, 8, 8], 1);
        let k = fft3(&v).unwrap();
        let back = ifft3(&k).unwrap();
        for (a, b) in v.data().iter().zip(back.data()) {
            assert!((a - b.re).abs() < 1e-10 && b.im.abs() < 1e-10);
        }
        let e: f64 = v.data().iter().map(|x| x * x).sum();
        assert!((k.energy() - e).abs() < 1e-10 * e);
    }

    #[test]
    fn odd_sizes_round_trip() {
        let v = random_volume([7, 5, 9], 2);
        let back = ifft3(&fft3(&v).unwrap()).unwrap();
        for (a, b) in v.data().iter().zip(back.data()) {
            assert!((a - b.re).abs() < 1e-12);
        }
    }

    #[test]
    fn non_finite_rejected() {
        let mut v = Volume::zeros([4, 4, 4]);
        v.data_mut()[5] = f64::INFINITY;
        assert!(fft3(&v).is_err());
    }

    #[test]
    fn hermitian_symmetry_of_real_input() {
        let d = [8, 7, 6];
        let k = fft3(&random_volume(d, 3)).unwrap();
        let c = [d[0] / 2, d[1] / 2, d[2] / 2];
        let scale = k.energy().sqrt();
        for z in 0..d[2] {
            for y in 0..d[1] {
                for x in 0..d[0] {
                    // k -> -k maps index i to (2c - i) mod n
                    let m = |i: usize, a: usize| (2 * c[a] + d[a] - i) % d[a];
                    let a = *k.at(x, y, z);
                    let b = *k.at(m(x, 0), m(y, 1), m(z, 2));
                    assert!((a - b.conj()).norm() < 1e-10 * scale);
                }
            }
        }
    }

    #[test]
    fn zero_ramp_is_identity() {
        let k = fft3(&random_volume([6, 6, 6], 4)).unwrap();
        assert_eq!(apply_phase_ramp(&k, [0.0; 3]).unwrap(), k);
    }

    #[test]
    fn integer_ramp_is_circular_shift() {
        let d = [16, 16, 16];
        let v = random_volume(d, 5);
        let u = [3.0, -2.0, 1.0];
        let s = ifft3(&apply_phase_ramp(&fft3(&v).unwrap(), u).unwrap()).unwrap();
        for z in 0..16 {
            for y in 0..16 {
                for x in 0..16 {
                    let want = *v.at_wrapped(x as isize - 3, y as isize + 2, z as isize - 1);
                    let got = s.at(x, y, z);
                    assert!((got.re - want).abs() < 1e-9 && got.im.abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn ramps_compose_additively() {
        let k = fft3(&random_volume([6, 5, 4], 6)).unwrap();
        let a = apply_phase_ramp(&apply_phase_ramp(&k, [0.3, -1.1, 2.5]).unwrap(), [0.4, 0.2, -0.7]).unwrap();
        let b = apply_phase_ramp(&k, [0.7, -0.9, 1.8]).unwrap();
        for (p, q) in a.data().iter().zip(b.data()) {
            assert!((p - q).norm() < 1e-12);
        }
    }
}
