use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use lapk_core::fourier::ifft3;
use lapk_core::interp::warp;
use lapk_core::io::{read_predictions, write_flow};
use lapk_core::lap_image::estimate_flow_multires;
use lapk_core::lap_kspace::kspace_flow_field;
use lapk_core::metrics::{flow_report, image_metrics, sepe, Roi};
use lapk_core::sampling::{gen_mask, SamplingMask};
use lapk_core::synthesis::{
    default_scenes, export_patch_dataset, gen_phantom, gen_smooth_flow, make_pair, read_patch_dataset, RecipeCounts,
};
use lapk_core::{Error, FlowField};

use crate::config::{ExperimentConfig, MaskChoice, Method};
use crate::CliError;

/// Voxels next to the faces are left out of every flow statistic.
pub const EVAL_BAND: usize = 4;

pub const RUN_HEADER: &str =
    "method,mask_kind,R,R_actual,seed,epe_mean,epe_std,eae_mean,ssim,nrmse,nrmse_range,psnr,ncc,n_voxels,runtime_s";

/// One registration outcome, one CSV line.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRow {
    pub method: Method,
    pub mask_kind: MaskChoice,
    pub r: f64,
    pub r_actual: f64,
    pub seed: u64,
    pub epe_mean: f64,
    pub epe_std: f64,
    pub eae_mean: f64,
    pub ssim: f64,
    pub nrmse: f64,
    pub nrmse_range: f64,
    pub psnr: f64,
    pub ncc: f64,
    pub n_voxels: usize,
    pub runtime_s: f64,
}

impl RunRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{:.4},{},{:.6},{:.6},{:.4},{:.6},{:.3e},{:.6},{:.3},{:.6},{},{:.2}",
            self.method,
            self.mask_kind,
            self.r,
            self.r_actual,
            self.seed,
            self.epe_mean,
            self.epe_std,
            self.eae_mean,
            self.ssim,
            self.nrmse,
            self.nrmse_range,
            self.psnr,
            self.ncc,
            self.n_voxels,
            self.runtime_s
        )
    }
}

/// Synthetic scene of one seed offset: phantom (moving image) and reference
/// flow, which is zero when `max_disp` is 0.
pub struct Scene {
    pub seed: u64,
    pub phantom: lapk_core::Volume,
    pub flow: FlowField,
}

pub fn build_scene(cfg: &ExperimentConfig, offset: u64) -> Result<Scene, CliError> {
    let seed = cfg.phantom_seed.wrapping_add(offset);
    let flow = if cfg.max_disp == 0.0 {
        FlowField::zeros(cfg.dims)
    } else {
        gen_smooth_flow(cfg.dims, cfg.max_disp, cfg.flow_seed.wrapping_add(offset))?
    };
    Ok(Scene { seed, phantom: gen_phantom(cfg.dims, seed)?, flow })
}

/// Fully sampled for `full` or R = 1; otherwise a mask seeded by the scene.
pub fn scene_mask(cfg: &ExperimentConfig, scene: &Scene, kind: MaskChoice, r: f64) -> Result<SamplingMask, CliError> {
    match kind.kind() {
        Some(k) if r > 1.0 => Ok(gen_mask(k, cfg.dims, r, scene.seed)?),
        _ => Ok(SamplingMask::full(cfg.dims)),
    }
}

/// Registers one scene under one mask shared by the fixed and moving scans.
pub fn register_scene(
    cfg: &ExperimentConfig,
    scene: &Scene,
    kind: MaskChoice,
    r: f64,
) -> Result<(FlowField, RunRow), CliError> {
    let mask = scene_mask(cfg, scene, kind, r)?;
    let (vf, vm, reference) = make_pair(&scene.phantom, &scene.flow, &mask, &mask)?;
    let start = Instant::now();
    let est = match cfg.method {
        // image-space LAP sees the zero-filled magnitude images
        Method::ImageLap => estimate_flow_multires(&ifft3(&vf)?.abs(), &ifft3(&vm)?.abs(), &cfg.lap_config())?,
        Method::KspaceFilter | Method::KspacePhase => kspace_flow_field(&vf, &vm, &mask, &mask, &cfg.kspace_config())?,
    };
    let runtime_s = start.elapsed().as_secs_f64();
    let report = flow_report(&est, &reference, &Roi::observable(&reference, EVAL_BAND))?;
    let image = image_metrics(&warp(&scene.phantom, &est)?, &warp(&scene.phantom, &reference)?)?;
    let row = RunRow {
        method: cfg.method,
        mask_kind: if mask.r_actual() > 1.0 { kind } else { MaskChoice::Full },
        r: if mask.r_actual() > 1.0 { r } else { 1.0 },
        r_actual: mask.r_actual(),
        seed: scene.seed,
        epe_mean: report.epe_mean,
        epe_std: report.epe_std,
        eae_mean: report.eae_mean,
        ssim: image.ssim,
        nrmse: image.nrmse,
        nrmse_range: image.nrmse_range,
        psnr: image.psnr,
        ncc: image.ncc,
        n_voxels: report.n_voxels_evaluated,
        runtime_s,
    };
    Ok((est, row))
}

fn append_rows(path: &Path, rows: &[RunRow]) -> Result<(), CliError> {
    let fresh = !path.exists();
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    if fresh {
        writeln!(f, "{RUN_HEADER}")?;
    }
    for r in rows {
        writeln!(f, "{}", r.csv())?;
    }
    Ok(())
}

fn prepare_out(cfg: &ExperimentConfig) -> Result<(), CliError> {
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join("config.txt"), cfg.to_text())?;
    Ok(())
}

pub fn flow_file_name(row: &RunRow) -> String {
    format!("flow_{}_{}_R{}_s{}.lapf", row.method, row.mask_kind, row.r, row.seed)
}

/// One run per (mask kind, R) on the configured scene. Flows go to
/// `out_dir/flow_*.lapf`, rows are appended to `out_dir/register.csv`.
pub fn cmd_register(cfg: &ExperimentConfig) -> Result<Vec<RunRow>, CliError> {
    cfg.validate()?;
    prepare_out(cfg)?;
    let scene = build_scene(cfg, 0)?;
    let mut rows = Vec::new();
    for &kind in &cfg.mask_kind {
        for &r in &cfg.r_list {
            let (flow, row) = register_scene(cfg, &scene, kind, r)?;
            write_flow(cfg.out_dir.join(flow_file_name(&row)), &flow)?;
            append_rows(&cfg.out_dir.join("register.csv"), std::slice::from_ref(&row))?;
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Every (seed, mask kind, R) combination, rows in that order, written to
/// `out_dir/sweep.csv`. R = 1 is fully sampled whatever the kind, so it is
/// registered once per seed and reported under each kind.
pub fn cmd_sweep(cfg: &ExperimentConfig) -> Result<Vec<RunRow>, CliError> {
    cfg.validate()?;
    prepare_out(cfg)?;
    let mut rows = Vec::new();
    for s in 0..cfg.seeds as u64 {
        let scene = build_scene(cfg, s)?;
        let mut full: Option<RunRow> = None;
        for &kind in &cfg.mask_kind {
            for &r in &cfg.r_list {
                let row = if kind == MaskChoice::Full || r <= 1.0 {
                    let base = match &full {
                        Some(row) => row.clone(),
                        None => register_scene(cfg, &scene, kind, r)?.1,
                    };
                    full = Some(base.clone());
                    RunRow { mask_kind: kind, ..base }
                } else {
                    register_scene(cfg, &scene, kind, r)?.1
                };
                rows.push(row);
            }
        }
    }
    let path = cfg.out_dir.join("sweep.csv");
    let _ = fs::remove_file(&path);
    append_rows(&path, &rows)?;
    Ok(rows)
}

pub fn dataset_path(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out_dir.join("dataset.lapk")
}

/// Exports `count` patches of size `patch_w`, drawn from one scene per flow
/// recipe for every hundred samples (at most ten).
pub fn cmd_dataset(cfg: &ExperimentConfig) -> Result<RecipeCounts, CliError> {
    cfg.validate()?;
    prepare_out(cfg)?;
    let per_kind = cfg.count.div_ceil(100).min(10);
    let scenes = default_scenes(cfg.dims, per_kind, cfg.max_disp, cfg.phantom_seed)?;
    Ok(export_patch_dataset(&scenes, cfg.count, cfg.patch_w, cfg.flow_seed, dataset_path(cfg))?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub n: usize,
    pub epe_mean: f64,
    pub epe_std: f64,
    pub sepe_mean: f64,
    /// `(index, sepe)` per sample in dataset order.
    pub per_sample: Vec<(usize, f64)>,
}

/// Scores a predictions CSV against the flows stored in a dataset. A NaN
/// component (an axis no run predicted) is left out of that sample's error.
pub fn cmd_evaluate(predictions: &Path, dataset: &Path, out: Option<&Path>) -> Result<EvalReport, CliError> {
    let ds = read_patch_dataset(dataset)?;
    let preds = read_predictions(predictions)?;
    let mut by_index: Vec<Option<[f64; 3]>> = vec![None; ds.samples.len()];
    for p in &preds {
        let slot = by_index
            .get_mut(p.index)
            .ok_or_else(|| Error::Format(format!("prediction index {} outside the dataset", p.index)))?;
        if slot.replace(p.u).is_some() {
            return Err(Error::Format(format!("index {} predicted twice", p.index)).into());
        }
    }
    let mut per_sample = Vec::with_capacity(ds.samples.len());
    for (i, (s, p)) in ds.samples.iter().zip(&by_index).enumerate() {
        let u = p.ok_or_else(|| Error::Format(format!("no prediction for index {i}")))?;
        let truth = s.flow.map(f64::from);
        let keep = |a: usize| if u[a].is_nan() { (0.0, 0.0) } else { (u[a], truth[a]) };
        let (est, reference): (Vec<f64>, Vec<f64>) = (0..3).map(keep).unzip();
        per_sample.push((i, sepe([est[0], est[1], est[2]], [reference[0], reference[1], reference[2]])));
    }
    let n = per_sample.len();
    let epes: Vec<f64> = per_sample.iter().map(|s| s.1.sqrt()).collect();
    let (epe_mean, epe_std, sepe_mean) = if n == 0 {
        (f64::NAN, f64::NAN, f64::NAN)
    } else {
        let mean = epes.iter().sum::<f64>() / n as f64;
        let var = epes.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n as f64;
        (mean, var.sqrt(), per_sample.iter().map(|s| s.1).sum::<f64>() / n as f64)
    };
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        let mut f = fs::File::create(dir.join("evaluate.csv"))?;
        writeln!(f, "index,sepe,epe")?;
        for ((i, s), e) in per_sample.iter().zip(&epes) {
            writeln!(f, "{i},{s},{e}")?;
        }
    }
    Ok(EvalReport { n, epe_mean, epe_std, sepe_mean, per_sample })
}
