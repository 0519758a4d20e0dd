use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Solves `(M + ε I) c = b` with `ε = ridge · trace(M) / n`.
///
/// `m` is row-major `n × n` and symmetric. `floor` is the smallest trace still
/// considered informative; anything below is reported as a degenerate window.
pub(crate) fn ridge_solve(m: &[f64], b: &[f64], ridge: f64, floor: f64) -> Result<Vec<f64>> {
    let n = b.len();
    let trace: f64 = (0..n).map(|i| m[i * n + i]).sum();
    if !(trace > floor) || !trace.is_finite() {
        return Err(Error::Degenerate(format!("normal matrix trace {trace:e}")));
    }
    let eps = ridge * trace / n as f64;
    let mut a = DMatrix::from_row_slice(n, n, m);
    for i in 0..n {
        a[(i, i)] += eps;
    }
    let chol = a.cholesky().ok_or_else(|| Error::Degenerate("normal matrix not positive definite".into()))?;
    let c = chol.solve(&DVector::from_column_slice(b));
    if c.iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("non-finite solution".into()));
    }
    Ok(c.iter().copied().collect())
}

/// Accumulates the symmetric normal equations of a real least-squares system
/// one row at a time.
#[derive(Clone, Debug)]
pub(crate) struct NormalEquations {
    pub n: usize,
    pub m: Vec<f64>,
    pub b: Vec<f64>,
}

impl NormalEquations {
    pub fn new(n: usize) -> Self {
        Self { n, m: vec![0.0; n * n], b: vec![0.0; n] }
    }

    /// Adds `weight · |row·c − rhs|²`.
    #[inline]
    pub fn add_row(&mut self, row: &[f64], rhs: f64, weight: f64) {
        let n = self.n;
        for i in 0..n {
            let wi = weight * row[i];
            self.b[i] += wi * rhs;
            for j in i..n {
                self.m[i * n + j] += wi * row[j];
            }
        }
    }

    pub fn symmetrize(&mut self) {
        let n = self.n;
        for i in 0..n {
            for j in 0..i {
                self.m[i * n + j] = self.m[j * n + i];
            }
        }
    }

    pub fn solve(mut self, ridge: f64, floor: f64) -> Result<Vec<f64>> {
        self.symmetrize();
        ridge_solve(&self.m, &self.b, ridge, floor)
    }
}
