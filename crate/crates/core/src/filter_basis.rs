//! Gaussian-derivative filter basis and the composite all-pass filter
//! `f = f_0 + Σ c_n f_n`.
//!
//! Every kernel is stored both densely (x-fastest over its support) and as a
//! short sum of separable terms, which is what convolution and frequency
//! evaluation use.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{voxel_count, Dims};

#[derive(Clone, Debug)]
pub struct SeparableTerm {
    pub coef: f64,
    /// One centred 1D factor per axis.
    pub factors: [Vec<f64>; 3],
}

#[derive(Clone, Debug)]
pub struct BasisKernel {
    pub terms: Vec<SeparableTerm>,
    values: Vec<f64>,
    sum: f64,
    first_moments: [f64; 3],
}

impl BasisKernel {
    fn from_terms(support: Dims, terms: Vec<SeparableTerm>) -> Self {
        let h = support.map(|n| (n / 2) as isize);
        let mut values = vec![0.0; voxel_count(support)];
        let mut i = 0;
        for z in 0..support[2] {
            for y in 0..support[1] {
                for x in 0..support[0] {
                    values[i] =
                        terms.iter().map(|t| t.coef * t.factors[0][x] * t.factors[1][y] * t.factors[2][z]).sum();
                    i += 1;
                }
            }
        }
        let sum = values.iter().sum();
        // mirrored pairs are differenced first so even kernels give exact zeros
        let mut first_moments = [0.0; 3];
        for (a, m) in first_moments.iter_mut().enumerate() {
            for z in 0..support[2] {
                for y in 0..support[1] {
                    for x in 0..support[0] {
                        let p = [x, y, z];
                        let off = p[a] as isize - h[a];
                        if off <= 0 {
                            continue;
                        }
                        let mut q = p;
                        q[a] = (h[a] - off) as usize;
                        let v = values[p[0] + support[0] * (p[1] + support[1] * p[2])];
                        let w = values[q[0] + support[0] * (q[1] + support[1] * q[2])];
                        *m += off as f64 * (v - w);
                    }
                }
            }
        }
        Self { terms, values, sum, first_moments }
    }

    /// Dense kernel values over the support, x-fastest, centre at `support / 2`.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sum(&self) -> f64 {
        self.sum
    }

    /// `F(k) = Σ_x f(x) e^{−j k·x}` with `x` relative to the kernel centre.
    pub fn transfer(&self, k: [f64; 3]) -> Complex64 {
        self.terms.iter().map(|t| t.coef * (0..3).map(|a| dtft_1d(&t.factors[a], k[a])).product::<Complex64>()).sum()
    }
}

/// DTFT of a centred odd-length 1D kernel.
pub fn dtft_1d(taps: &[f64], k: f64) -> Complex64 {
    let h = (taps.len() / 2) as isize;
    taps.iter().enumerate().map(|(t, &v)| Complex64::from_polar(v, -k * (t as isize - h) as f64)).sum()
}

#[derive(Clone, Debug)]
pub struct FilterBasis {
    w: usize,
    support: Dims,
    sigma: f64,
    kernels: Vec<BasisKernel>,
}

impl FilterBasis {
    /// Volumetric basis on a `w³` support: Gaussian, its three first
    /// derivatives and, for `n = 4`, a zero-mean Laplacian of Gaussian.
    pub fn new(w: usize, n: usize) -> Result<Self> {
        if !(3..=4).contains(&n) {
            return Err(Error::InvalidParameter(format!("basis size {n} not in 3..=4")));
        }
        Self::build(w, n, 3)
    }

    /// The same family restricted to the xy-plane on a `w × w × 1` support
    /// (`n = 2` derivatives, or `n = 3` with the planar Laplacian).
    pub fn planar(w: usize, n: usize) -> Result<Self> {
        if !(2..=3).contains(&n) {
            return Err(Error::InvalidParameter(format!("planar basis size {n} not in 2..=3")));
        }
        Self::build(w, n, 2)
    }

    fn build(w: usize, n: usize, rank: usize) -> Result<Self> {
        if w < 5 || w % 2 == 0 {
            return Err(Error::InvalidParameter(format!("support {w} must be odd and at least 5")));
        }
        let sigma = (w as f64 - 2.0) / 4.0;
        let s2 = sigma * sigma;
        let h = (w / 2) as isize;
        let xs: Vec<f64> = (-h..=h).map(|x| x as f64).collect();
        let g: Vec<f64> = xs.iter().map(|x| (-x * x / (2.0 * s2)).exp()).collect();
        let gs: f64 = g.iter().sum();
        let g: Vec<f64> = g.iter().map(|v| v / gs).collect();
        let dg: Vec<f64> = xs.iter().zip(&g).map(|(x, v)| -x / s2 * v).collect();
        let x2g: Vec<f64> = xs.iter().zip(&g).map(|(x, v)| x * x * v).collect();
        // second moment of the sampled Gaussian along one axis
        let m1: f64 = x2g.iter().sum();

        let support = if rank == 3 { [w, w, w] } else { [w, w, 1] };
        let unit = vec![1.0];
        let base = |a: usize| if a < rank { g.clone() } else { unit.clone() };
        let mut kernels = vec![BasisKernel::from_terms(
            support,
            vec![SeparableTerm { coef: 1.0, factors: [base(0), base(1), base(2)] }],
        )];
        for axis in 0..rank {
            let mut factors = [base(0), base(1), base(2)];
            factors[axis] = dg.clone();
            kernels.push(BasisKernel::from_terms(support, vec![SeparableTerm { coef: 1.0, factors }]));
        }
        if n > rank {
            // (|x|² − Σ|x|² f_0) / σ⁴ · f_0: the Laplacian of Gaussian with its
            // centring constant taken from the sampled kernel, so the DC gain is zero
            let s4 = s2 * s2;
            let mut terms = Vec::new();
            for axis in 0..rank {
                let mut factors = [base(0), base(1), base(2)];
                factors[axis] = x2g.clone();
                terms.push(SeparableTerm { coef: 1.0 / s4, factors });
            }
            terms.push(SeparableTerm { coef: -(rank as f64) * m1 / s4, factors: [base(0), base(1), base(2)] });
            kernels.push(BasisKernel::from_terms(support, terms));
        }
        Ok(Self { w, support, sigma, kernels })
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn support(&self) -> Dims {
        self.support
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Number of free coefficients `N`.
    pub fn n(&self) -> usize {
        self.kernels.len() - 1
    }

    /// `f_0 … f_N`.
    pub fn kernels(&self) -> &[BasisKernel] {
        &self.kernels
    }

    pub fn kernel(&self, i: usize) -> &BasisKernel {
        &self.kernels[i]
    }
}

/// `f = c_0 (f_0 + Σ c_n f_n)`; `c_0` is 1 unless the filter was rescaled.
#[derive(Clone, Debug)]
pub struct AllPassFilter<'a> {
    basis: &'a FilterBasis,
    coeffs: Vec<f64>,
    gain: f64,
}

impl<'a> AllPassFilter<'a> {
    pub fn new(basis: &'a FilterBasis, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != basis.n() {
            return Err(Error::Shape(format!("{} coefficients for a basis of size {}", coeffs.len(), basis.n())));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("filter coefficients".into()));
        }
        Ok(Self { basis, coeffs, gain: 1.0 })
    }

    pub fn scaled(mut self, s: f64) -> Self {
        self.gain *= s;
        self
    }

    pub fn basis(&self) -> &FilterBasis {
        self.basis
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    fn weights(&self) -> impl Iterator<Item = (f64, &BasisKernel)> {
        std::iter::once(1.0)
            .chain(self.coeffs.iter().copied())
            .zip(self.basis.kernels.iter())
            .map(move |(c, k)| (self.gain * c, k))
    }

    pub fn values(&self) -> Vec<f64> {
        let mut out = vec![0.0; voxel_count(self.basis.support)];
        for (c, k) in self.weights() {
            for (o, v) in out.iter_mut().zip(k.values()) {
                *o += c * v;
            }
        }
        out
    }

    pub fn transfer(&self, k: [f64; 3]) -> Complex64 {
        self.weights().map(|(c, b)| c * b.transfer(k)).sum()
    }
}

/// Translation encoded by a symmetric-pair filter: `u = 2 Σ x f(x) / Σ f(x)`.
pub fn flow_from_filter(filter: &AllPassFilter) -> Result<[f64; 3]> {
    let mut s = 0.0;
    let mut m = [0.0; 3];
    for (c, k) in filter.weights() {
        s += c * k.sum;
        for a in 0..3 {
            m[a] += c * k.first_moments[a];
        }
    }
    if s.abs() < 1e-12 {
        return Err(Error::Degenerate("filter has zero DC gain".into()));
    }
    Ok(m.map(|v| 2.0 * v / s))
}

/// `F(k) / F(−k)`, unit-modulus for any real filter.
pub fn allpass_response(filter: &AllPassFilter, k: [f64; 3]) -> Result<Complex64> {
    let num = filter.transfer(k);
    let den = filter.transfer(k.map(|v| -v));
    if den.norm() < 1e-12 {
        return Err(Error::Undefined(format!("F(-k) vanishes at k = {k:?}")));
    }
    Ok(num / den)
}
