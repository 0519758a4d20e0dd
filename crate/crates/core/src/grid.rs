//! Dense 3D grids stored x-fastest: `index = x + nx * (y + ny * z)`.

use num_complex::Complex64;

use crate::error::{Error, Result};

pub type Dims = [usize; 3];

#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    dims: Dims,
    data: Vec<T>,
}

/// Real image volume.
pub type Volume = Grid<f64>;
/// Complex image-domain volume, e.g. the inverse transform of zero-filled k-space.
pub type CVolume = Grid<Complex64>;
/// Complex k-space samples on a DC-centred grid (see [`crate::fourier::k_axis`]).
pub type KSpace = Grid<Complex64>;

pub fn voxel_count(dims: Dims) -> usize {
    dims[0] * dims[1] * dims[2]
}

#[inline]
pub fn linear_index(dims: Dims, x: usize, y: usize, z: usize) -> usize {
    x + dims[0] * (y + dims[1] * z)
}

#[inline]
pub fn coords_of(dims: Dims, idx: usize) -> [usize; 3] {
    let x = idx % dims[0];
    let r = idx / dims[0];
    [x, r % dims[1], r / dims[1]]
}

#[inline]
pub fn wrap(i: isize, n: usize) -> usize {
    i.rem_euclid(n as isize) as usize
}

pub fn check_dims(dims: Dims, min: usize) -> Result<()> {
    if dims.iter().any(|&n| n < min) {
        return Err(Error::Shape(format!("dims {dims:?} must be at least {min} along every axis")));
    }
    Ok(())
}

pub fn check_same_dims(a: Dims, b: Dims) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{a:?} vs {b:?}")));
    }
    Ok(())
}

impl<T: Clone> Grid<T> {
    pub fn from_vec(dims: Dims, data: Vec<T>) -> Result<Self> {
        check_dims(dims, 1)?;
        if data.len() != voxel_count(dims) {
            return Err(Error::Shape(format!("{} values for dims {dims:?}", data.len())));
        }
        Ok(Self { dims, data })
    }

    pub fn filled(dims: Dims, value: T) -> Self {
        Self { dims, data: vec![value; voxel_count(dims)] }
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(voxel_count(dims));
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    data.push(f(x, y, z));
                }
            }
        }
        Self { dims, data }
    }

    pub fn map<U: Clone>(&self, f: impl Fn(&T) -> U) -> Grid<U> {
        Grid { dims: self.dims, data: self.data.iter().map(f).collect() }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, z: usize) -> &T {
        &self.data[linear_index(self.dims, x, y, z)]
    }

    #[inline]
    pub fn at_mut(&mut self, x: usize, y: usize, z: usize) -> &mut T {
        let i = linear_index(self.dims, x, y, z);
        &mut self.data[i]
    }

    /// Periodic access.
    #[inline]
    pub fn at_wrapped(&self, x: isize, y: isize, z: isize) -> &T {
        let d = self.dims;
        self.at(wrap(x, d[0]), wrap(y, d[1]), wrap(z, d[2]))
    }

    /// Clamp-to-edge access.
    #[inline]
    pub fn at_clamped(&self, x: isize, y: isize, z: isize) -> &T {
        let d = self.dims;
        let c = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
        self.at(c(x, d[0]), c(y, d[1]), c(z, d[2]))
    }
}

impl Grid<f64> {
    pub fn zeros(dims: Dims) -> Self {
        Self::filled(dims, 0.0)
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite("volume".into()))
        }
    }

    pub fn to_complex(&self) -> CVolume {
        self.map(|&v| Complex64::new(v, 0.0))
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

impl Grid<Complex64> {
    pub fn zeros(dims: Dims) -> Self {
        Self::filled(dims, Complex64::new(0.0, 0.0))
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.data.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite("complex volume".into()))
        }
    }

    pub fn re(&self) -> Volume {
        self.map(|c| c.re)
    }

    pub fn abs(&self) -> Volume {
        self.map(|c| c.norm())
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }
}

/// Per-voxel displacement in voxel units plus a reliability flag.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    dims: Dims,
    vectors: Vec<[f64; 3]>,
    reliable: Vec<bool>,
}

impl FlowField {
    pub fn zeros(dims: Dims) -> Self {
        Self::constant(dims, [0.0; 3])
    }

    pub fn constant(dims: Dims, u: [f64; 3]) -> Self {
        let n = voxel_count(dims);
        Self { dims, vectors: vec![u; n], reliable: vec![true; n] }
    }

    pub fn from_vectors(dims: Dims, vectors: Vec<[f64; 3]>) -> Result<Self> {
        let n = vectors.len();
        Self::with_reliability(dims, vectors, vec![true; n])
    }

    pub fn with_reliability(dims: Dims, vectors: Vec<[f64; 3]>, reliable: Vec<bool>) -> Result<Self> {
        check_dims(dims, 1)?;
        let n = voxel_count(dims);
        if vectors.len() != n || reliable.len() != n {
            return Err(Error::Shape(format!(
                "flow with {} vectors / {} flags for dims {dims:?}",
                vectors.len(),
                reliable.len()
            )));
        }
        if vectors.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("flow".into()));
        }
        Ok(Self { dims, vectors, reliable })
    }

    pub fn from_fn(dims: Dims, f: impl FnMut(usize, usize, usize) -> [f64; 3]) -> Self {
        let g = Grid::from_fn(dims, f);
        let n = g.len();
        Self { dims, vectors: g.into_vec(), reliable: vec![true; n] }
    }

    pub fn from_components(c: &[Volume; 3]) -> Result<Self> {
        let dims = c[0].dims();
        check_same_dims(dims, c[1].dims())?;
        check_same_dims(dims, c[2].dims())?;
        let vectors = (0..c[0].len()).map(|i| [c[0].data()[i], c[1].data()[i], c[2].data()[i]]).collect();
        Self::from_vectors(dims, vectors)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vectors(&self) -> &[[f64; 3]] {
        &self.vectors
    }

    pub fn vectors_mut(&mut self) -> &mut [[f64; 3]] {
        &mut self.vectors
    }

    pub fn reliable(&self) -> &[bool] {
        &self.reliable
    }

    pub fn reliable_mut(&mut self) -> &mut [bool] {
        &mut self.reliable
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, z: usize) -> [f64; 3] {
        self.vectors[linear_index(self.dims, x, y, z)]
    }

    pub fn component(&self, axis: usize) -> Volume {
        Grid { dims: self.dims, data: self.vectors.iter().map(|v| v[axis]).collect() }
    }

    pub fn n_reliable(&self) -> usize {
        self.reliable.iter().filter(|&&r| r).count()
    }

    pub fn max_norm(&self) -> f64 {
        self.vectors.iter().map(|v| norm3(*v)).fold(0.0, f64::max)
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.vectors {
            for c in v.iter_mut() {
                *c *= s;
            }
        }
    }

    pub fn mark_all_reliable(&mut self) {
        self.reliable.iter_mut().for_each(|r| *r = true);
    }
}

#[inline]
pub fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

#[inline]
pub fn add3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_round_trip() {
        let d = [5, 4, 3];
        for i in 0..voxel_count(d) {
            let [x, y, z] = coords_of(d, i);
            assert_eq!(linear_index(d, x, y, z), i);
        }
    }

    #[test]
    fn wrong_length_rejected() {
        assert!(Volume::from_vec([2, 2, 2], vec![0.0; 7]).is_err());
        assert!(FlowField::from_vectors([2, 2, 2], vec![[0.0; 3]; 9]).is_err());
    }

    #[test]
    fn non_finite_flow_rejected() {
        let mut v = vec![[0.0; 3]; 8];
        v[3][1] = f64::NAN;
        assert!(FlowField::from_vectors([2, 2, 2], v).is_err());
    }

    #[test]
    fn wrapped_and_clamped_access() {
        let g = Volume::from_fn([4, 4, 4], |x, y, z| (x + 10 * y + 100 * z) as f64);
        assert_eq!(*g.at_wrapped(-1, 4, 0), 3.0);
        assert_eq!(*g.at_clamped(-5, 9, 2), 230.0);
    }
}
