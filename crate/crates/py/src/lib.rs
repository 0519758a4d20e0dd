//! Python bindings. Grids cross the boundary as flat x-fastest lists, so
//! `numpy.asarray(v.data()).reshape(nz, ny, nx)` gives the usual view.

use std::collections::BTreeMap;
use std::path::PathBuf;

use num_complex::Complex64;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use lapk_core::filter_basis::{
    allpass_response, flow_from_filter as core_flow_from_filter, AllPassFilter, FilterBasis,
};
use lapk_core::lap_image::{estimate_flow_multires, LapConfig};
use lapk_core::lap_kspace::{taper_and_regrid_masked, KSolver, KStage, KspaceConfig, Taper};
use lapk_core::metrics::{self, Roi};
use lapk_core::sampling::{self, MaskKind};
use lapk_core::synthesis::{self, default_scenes, export_patch_dataset, read_patch_dataset};
use lapk_core::{fourier, interp, io, lap_kspace, Dims, Error, Grid};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        Error::Shape(_) | Error::InvalidParameter(_) | Error::NonFinite(_) | Error::Format(_) => {
            PyValueError::new_err(e.to_string())
        }
        e => PyRuntimeError::new_err(e.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for lapk_core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

/// Real voxel grid.
#[pyclass(module = "lapk")]
pub struct Volume(pub lapk_core::Volume);

#[pymethods]
impl Volume {
    #[new]
    fn new(dims: Dims, data: Vec<f64>) -> PyResult<Self> {
        Ok(Self(Grid::from_vec(dims, data).py()?))
    }

    #[getter]
    fn dims(&self) -> Dims {
        self.0.dims()
    }

    fn data(&self) -> Vec<f64> {
        self.0.data().to_vec()
    }

    fn at(&self, x: usize, y: usize, z: usize) -> f64 {
        *self.0.at(x, y, z)
    }

    fn min_max(&self) -> (f64, f64) {
        self.0.min_max()
    }

    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(Self(io::read_volume(path).py()?))
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        io::write_volume(path, &self.0).py()
    }

    fn __repr__(&self) -> String {
        format!("Volume(dims={:?})", self.0.dims())
    }
}

/// Complex grid with the DC sample at `dims / 2`.
#[pyclass(module = "lapk")]
pub struct KSpace(pub lapk_core::KSpace);

#[pymethods]
impl KSpace {
    #[new]
    fn new(dims: Dims, real: Vec<f64>, imag: Vec<f64>) -> PyResult<Self> {
        if real.len() != imag.len() {
            return Err(PyValueError::new_err("real and imag differ in length"));
        }
        let data = real.iter().zip(&imag).map(|(&r, &i)| Complex64::new(r, i)).collect();
        Ok(Self(Grid::from_vec(dims, data).py()?))
    }

    #[getter]
    fn dims(&self) -> Dims {
        self.0.dims()
    }

    fn real(&self) -> Vec<f64> {
        self.0.data().iter().map(|c| c.re).collect()
    }

    fn imag(&self) -> Vec<f64> {
        self.0.data().iter().map(|c| c.im).collect()
    }

    fn energy(&self) -> f64 {
        self.0.energy()
    }

    /// Magnitude of the inverse transform.
    fn magnitude_image(&self) -> PyResult<Volume> {
        Ok(Volume(fourier::ifft3(&self.0).py()?.abs()))
    }

    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(Self(io::read_kspace(path).py()?))
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        io::write_kspace(path, &self.0).py()
    }

    fn __repr__(&self) -> String {
        format!("KSpace(dims={:?})", self.0.dims())
    }
}

/// Per-voxel displacement in voxels plus a reliability flag.
#[pyclass(module = "lapk")]
pub struct FlowField(pub lapk_core::FlowField);

#[pymethods]
impl FlowField {
    #[new]
    fn new(dims: Dims, vectors: Vec<[f64; 3]>) -> PyResult<Self> {
        Ok(Self(lapk_core::FlowField::from_vectors(dims, vectors).py()?))
    }

    #[staticmethod]
    fn constant(dims: Dims, u: [f64; 3]) -> Self {
        Self(lapk_core::FlowField::constant(dims, u))
    }

    #[getter]
    fn dims(&self) -> Dims {
        self.0.dims()
    }

    fn vectors(&self) -> Vec<[f64; 3]> {
        self.0.vectors().to_vec()
    }

    fn reliable(&self) -> Vec<bool> {
        self.0.reliable().to_vec()
    }

    fn at(&self, x: usize, y: usize, z: usize) -> [f64; 3] {
        self.0.at(x, y, z)
    }

    fn max_norm(&self) -> f64 {
        self.0.max_norm()
    }

    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(Self(io::read_flow(path).py()?))
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        io::write_flow(path, &self.0).py()
    }

    fn __repr__(&self) -> String {
        format!("FlowField(dims={:?}, max_norm={:.3})", self.0.dims(), self.0.max_norm())
    }
}

#[pyclass(module = "lapk")]
pub struct SamplingMask(pub sampling::SamplingMask);

#[pymethods]
impl SamplingMask {
    #[staticmethod]
    fn full(dims: Dims) -> Self {
        Self(sampling::SamplingMask::full(dims))
    }

    #[getter]
    fn dims(&self) -> Dims {
        self.0.dims()
    }

    #[getter]
    fn kind(&self) -> String {
        self.0.kind().to_string()
    }

    #[getter]
    fn r_target(&self) -> f64 {
        self.0.r_target()
    }

    #[getter]
    fn r_actual(&self) -> f64 {
        self.0.r_actual()
    }

    fn kept(&self) -> Vec<bool> {
        self.0.kept().to_vec()
    }

    fn kept_count(&self) -> usize {
        self.0.kept_count()
    }

    fn __repr__(&self) -> String {
        format!("SamplingMask(kind={}, R={:.3})", self.0.kind(), self.0.r_actual())
    }
}

#[pyfunction]
fn fft3(volume: &Volume) -> PyResult<KSpace> {
    Ok(KSpace(fourier::fft3(&volume.0).py()?))
}

/// Inverse transform as `(real, imag)` volumes.
#[pyfunction]
fn ifft3(kspace: &KSpace) -> PyResult<(Volume, Volume)> {
    let c = fourier::ifft3(&kspace.0).py()?;
    Ok((Volume(c.re()), Volume(c.map(|v| v.im))))
}

#[pyfunction]
fn apply_phase_ramp(kspace: &KSpace, u: [f64; 3]) -> PyResult<KSpace> {
    Ok(KSpace(fourier::apply_phase_ramp(&kspace.0, u).py()?))
}

#[pyfunction]
fn warp(volume: &Volume, flow: &FlowField) -> PyResult<Volume> {
    Ok(Volume(interp::warp(&volume.0, &flow.0).py()?))
}

/// `kind` is `vdpd`, `center` or `full`.
#[pyfunction]
#[pyo3(signature = (kind, dims, r, seed=0))]
fn gen_mask(kind: &str, dims: Dims, r: f64, seed: u64) -> PyResult<SamplingMask> {
    let kind: MaskKind = kind.parse().py()?;
    Ok(SamplingMask(sampling::gen_mask(kind, dims, r, seed).py()?))
}

#[pyfunction]
fn apply_mask(kspace: &KSpace, mask: &SamplingMask) -> PyResult<KSpace> {
    Ok(KSpace(sampling::apply_mask(&kspace.0, &mask.0).py()?))
}

#[pyfunction]
fn gen_phantom(dims: Dims, seed: u64) -> PyResult<Volume> {
    Ok(Volume(synthesis::gen_phantom(dims, seed).py()?))
}

#[pyfunction]
fn gen_smooth_flow(dims: Dims, max_disp: f64, seed: u64) -> PyResult<FlowField> {
    Ok(FlowField(synthesis::gen_smooth_flow(dims, max_disp, seed).py()?))
}

#[pyfunction]
fn augment_flow(flow: &FlowField, seed: u64) -> PyResult<FlowField> {
    Ok(FlowField(synthesis::augment_flow(&flow.0, seed).py()?))
}

/// `(fixed, moving, reference)` with `fixed(x) = moving(x − reference(x))`.
#[pyfunction]
fn make_pair(
    phantom: &Volume,
    flow: &FlowField,
    mask_f: &SamplingMask,
    mask_m: &SamplingMask,
) -> PyResult<(KSpace, KSpace, FlowField)> {
    let (f, m, r) = synthesis::make_pair(&phantom.0, &flow.0, &mask_f.0, &mask_m.0).py()?;
    Ok((KSpace(f), KSpace(m), FlowField(r)))
}

/// Multi-resolution image-space LAP. `windows` defaults to 65, 33, 17, 9, 5.
#[pyfunction]
#[pyo3(signature = (fixed, moving, windows=None, stride=1))]
fn register_image(fixed: &Volume, moving: &Volume, windows: Option<Vec<usize>>, stride: usize) -> PyResult<FlowField> {
    let mut cfg = match windows {
        Some(w) => LapConfig::with_windows(&w),
        None => LapConfig::default(),
    };
    cfg.stride = stride;
    Ok(FlowField(estimate_flow_multires(&fixed.0, &moving.0, &cfg).py()?))
}

/// Sliding-window k-space LAP. `solver` is `filter` or `phase_slope`;
/// `stages` is a list of `(taper_w, basis_w)` pairs, coarse to fine.
#[pyfunction]
#[pyo3(signature = (fixed, moving, mask_f, mask_m, solver="filter", stride=2, stages=None))]
fn register_kspace(
    fixed: &KSpace,
    moving: &KSpace,
    mask_f: &SamplingMask,
    mask_m: &SamplingMask,
    solver: &str,
    stride: usize,
    stages: Option<Vec<(usize, usize)>>,
) -> PyResult<FlowField> {
    let mut cfg = match solver.parse().py()? {
        KSolver::Filter => KspaceConfig::default(),
        KSolver::PhaseSlope => KspaceConfig::phase_slope(),
    };
    cfg.stride = stride;
    if let Some(s) = stages {
        cfg.stages = s.into_iter().map(|(taper_w, basis_w)| KStage { taper_w, basis_w }).collect();
    }
    Ok(FlowField(lap_kspace::kspace_flow_field(&fixed.0, &moving.0, &mask_f.0, &mask_m.0, &cfg).py()?))
}

/// Rigid translation of the `w³` tapered patches at `center`, with a
/// reliability flag.
#[pyfunction]
#[pyo3(signature = (fixed, moving, mask, center, w=33))]
fn phase_slope_translation(
    fixed: &KSpace,
    moving: &KSpace,
    mask: &SamplingMask,
    center: [usize; 3],
    w: usize,
) -> PyResult<([f64; 3], bool)> {
    let taper = Taper::hann(w).py()?;
    let pf = taper_and_regrid_masked(&fixed.0, &mask.0, center, &taper).py()?;
    let pm = taper_and_regrid_masked(&moving.0, &mask.0, center, &taper).py()?;
    let e = lap_kspace::estimate_translation_phase_slope(&pf, &pm).py()?;
    Ok((e.u, e.reliable))
}

/// Local translation encoded by `f_0 + Σ c_n f_n` on a `w³` basis.
#[pyfunction]
fn flow_from_filter(w: usize, coeffs: Vec<f64>) -> PyResult<[f64; 3]> {
    let basis = FilterBasis::new(w, coeffs.len()).py()?;
    core_flow_from_filter(&AllPassFilter::new(&basis, coeffs).py()?).py()
}

/// `F(k) / F(−k)` as `(re, im)`.
#[pyfunction]
fn filter_response(w: usize, coeffs: Vec<f64>, k: [f64; 3]) -> PyResult<(f64, f64)> {
    let basis = FilterBasis::new(w, coeffs.len()).py()?;
    let h = allpass_response(&AllPassFilter::new(&basis, coeffs).py()?, k).py()?;
    Ok((h.re, h.im))
}

#[pyfunction]
fn merge_orthogonal_runs(run1: (f64, f64), run2: (f64, f64)) -> [f64; 3] {
    lap_kspace::merge_orthogonal_runs(run1, run2)
}

fn roi(reference: &FlowField, band: usize) -> Roi {
    Roi::interior(reference.0.dims(), band)
}

/// `(mean, std)` end-point error over voxels at least `band` from every face.
#[pyfunction]
#[pyo3(signature = (est, reference, band=0))]
fn epe(est: &FlowField, reference: &FlowField, band: usize) -> PyResult<(f64, f64)> {
    let s = metrics::epe(&est.0, &reference.0, &roi(reference, band)).py()?;
    Ok((s.mean, s.std))
}

/// `(mean, std)` end-angulation error in degrees.
#[pyfunction]
#[pyo3(signature = (est, reference, band=0))]
fn eae(est: &FlowField, reference: &FlowField, band: usize) -> PyResult<(f64, f64)> {
    let s = metrics::eae(&est.0, &reference.0, &roi(reference, band)).py()?;
    Ok((s.mean, s.std))
}

#[pyfunction]
fn sepe(est: [f64; 3], reference: [f64; 3]) -> f64 {
    metrics::sepe(est, reference)
}

/// `{"ssim", "nrmse", "nrmse_range", "psnr", "ncc"}`.
#[pyfunction]
fn image_metrics(deformed: &Volume, fixed: &Volume) -> PyResult<BTreeMap<&'static str, f64>> {
    let m = metrics::image_metrics(&deformed.0, &fixed.0).py()?;
    Ok(BTreeMap::from([
        ("ssim", m.ssim),
        ("nrmse", m.nrmse),
        ("nrmse_range", m.nrmse_range),
        ("psnr", m.psnr),
        ("ncc", m.ncc),
    ]))
}

/// Writes a dataset of `count` patch pairs and returns the recipe counts.
#[pyfunction]
#[pyo3(signature = (path, dims, count, w=33, max_disp=10.0, scenes_per_kind=1, seed=0))]
fn export_dataset(
    path: PathBuf,
    dims: Dims,
    count: usize,
    w: usize,
    max_disp: f64,
    scenes_per_kind: usize,
    seed: u64,
) -> PyResult<BTreeMap<&'static str, usize>> {
    let scenes = default_scenes(dims, scenes_per_kind, max_disp, seed).py()?;
    let c = export_patch_dataset(&scenes, count, w, seed.wrapping_add(1), path).py()?;
    Ok(BTreeMap::from([("real", c.real), ("smooth", c.smooth), ("augmented", c.augmented)]))
}

/// `(w, flows)`: patch size and the reference flow of every sample.
#[pyfunction]
fn read_dataset_flows(path: PathBuf) -> PyResult<(usize, Vec<[f32; 3]>)> {
    let ds = read_patch_dataset(path).py()?;
    Ok((ds.w, ds.samples.iter().map(|s| s.flow).collect()))
}

/// Writes an `index,ux,uy,uz` predictions CSV.
#[pyfunction]
fn write_predictions(path: PathBuf, rows: Vec<(usize, [f64; 3])>) -> PyResult<()> {
    let rows: Vec<io::PredictionRow> = rows.into_iter().map(|(index, u)| io::PredictionRow { index, u }).collect();
    io::write_predictions(path, &rows).py()
}

#[pyfunction]
fn read_predictions(path: PathBuf) -> PyResult<Vec<(usize, [f64; 3])>> {
    Ok(io::read_predictions(path).py()?.into_iter().map(|r| (r.index, r.u)).collect())
}

#[pymodule]
fn lapk(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Volume>()?;
    m.add_class::<KSpace>()?;
    m.add_class::<FlowField>()?;
    m.add_class::<SamplingMask>()?;
    m.add_function(wrap_pyfunction!(fft3, m)?)?;
    m.add_function(wrap_pyfunction!(ifft3, m)?)?;
    m.add_function(wrap_pyfunction!(apply_phase_ramp, m)?)?;
    m.add_function(wrap_pyfunction!(warp, m)?)?;
    m.add_function(wrap_pyfunction!(gen_mask, m)?)?;
    m.add_function(wrap_pyfunction!(apply_mask, m)?)?;
    m.add_function(wrap_pyfunction!(gen_phantom, m)?)?;
    m.add_function(wrap_pyfunction!(gen_smooth_flow, m)?)?;
    m.add_function(wrap_pyfunction!(augment_flow, m)?)?;
    m.add_function(wrap_pyfunction!(make_pair, m)?)?;
    m.add_function(wrap_pyfunction!(register_image, m)?)?;
    m.add_function(wrap_pyfunction!(register_kspace, m)?)?;
    m.add_function(wrap_pyfunction!(phase_slope_translation, m)?)?;
    m.add_function(wrap_pyfunction!(flow_from_filter, m)?)?;
    m.add_function(wrap_pyfunction!(filter_response, m)?)?;
    m.add_function(wrap_pyfunction!(merge_orthogonal_runs, m)?)?;
    m.add_function(wrap_pyfunction!(epe, m)?)?;
    m.add_function(wrap_pyfunction!(eae, m)?)?;
    m.add_function(wrap_pyfunction!(sepe, m)?)?;
    m.add_function(wrap_pyfunction!(image_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(export_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(read_dataset_flows, m)?)?;
    m.add_function(wrap_pyfunction!(write_predictions, m)?)?;
    m.add_function(wrap_pyfunction!(read_predictions, m)?)?;
    Ok(())
}
