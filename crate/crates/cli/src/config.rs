//! Experiment configuration: `key = value` text, one key per line.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use lapk_core::lap_image::LapConfig;
use lapk_core::lap_kspace::{KSolver, KStage, KspaceConfig};
use lapk_core::sampling::MaskKind;
use lapk_core::Dims;

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    ImageLap,
    KspaceFilter,
    KspacePhase,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::ImageLap, Method::KspaceFilter, Method::KspacePhase];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::ImageLap => "image_lap",
            Method::KspaceFilter => "kspace_eq13",
            Method::KspacePhase => "kspace_phase",
        })
    }
}

impl FromStr for Method {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        Method::ALL
            .into_iter()
            .find(|m| m.to_string() == s)
            .ok_or_else(|| CliError::Usage(format!("unknown method '{s}' (image_lap, kspace_eq13, kspace_phase)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskChoice {
    Full,
    Vdpd,
    Center,
}

impl MaskChoice {
    /// `None` for fully sampled runs.
    pub fn kind(self) -> Option<MaskKind> {
        match self {
            MaskChoice::Full => None,
            MaskChoice::Vdpd => Some(MaskKind::Vdpd),
            MaskChoice::Center => Some(MaskKind::Center),
        }
    }
}

impl fmt::Display for MaskChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaskChoice::Full => "full",
            MaskChoice::Vdpd => "vdpd",
            MaskChoice::Center => "center",
        })
    }
}

impl FromStr for MaskChoice {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "full" => Ok(MaskChoice::Full),
            "vdpd" => Ok(MaskChoice::Vdpd),
            "center" => Ok(MaskChoice::Center),
            _ => Err(CliError::Usage(format!("unknown mask_kind '{s}' (full, vdpd, center)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub phantom_seed: u64,
    pub flow_seed: u64,
    pub dims: Dims,
    pub method: Method,
    /// Several kinds may be listed; a sweep covers each of them.
    pub mask_kind: Vec<MaskChoice>,
    pub r_list: Vec<f64>,
    pub stride: usize,
    /// Window sizes, coarse to fine. Empty means the method's defaults.
    pub levels: Vec<usize>,
    pub out_dir: PathBuf,
    pub max_disp: f64,
    /// Number of consecutive seeds a sweep runs.
    pub seeds: usize,
    /// Dataset sample count and patch size.
    pub count: usize,
    pub patch_w: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            phantom_seed: 0,
            flow_seed: 1,
            dims: [64, 64, 64],
            method: Method::KspaceFilter,
            mask_kind: vec![MaskChoice::Vdpd],
            r_list: vec![1.0],
            stride: 2,
            levels: Vec::new(),
            out_dir: PathBuf::from("out"),
            max_disp: 8.0,
            seeds: 1,
            count: 1000,
            patch_w: 33,
        }
    }
}

fn parse_one<T: FromStr>(key: &str, v: &str) -> Result<T, CliError> {
    v.parse().map_err(|_| CliError::Usage(format!("bad value '{v}' for {key}")))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>, CliError> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| parse_one(key, s)).collect()
}

impl ExperimentConfig {
    /// Applies one key. `seed` is shorthand for `phantom_seed = N, flow_seed = N + 1`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let v = value.trim();
        match key {
            "phantom_seed" => self.phantom_seed = parse_one(key, v)?,
            "flow_seed" => self.flow_seed = parse_one(key, v)?,
            "seed" => {
                let s: u64 = parse_one(key, v)?;
                self.phantom_seed = s;
                self.flow_seed = s.wrapping_add(1);
            }
            "dims" => {
                let d: Vec<usize> = parse_list(key, v)?;
                self.dims = match d[..] {
                    [n] => [n, n, n],
                    [x, y, z] => [x, y, z],
                    _ => return Err(CliError::Usage(format!("dims needs 1 or 3 values, got '{v}'"))),
                };
            }
            "method" => self.method = v.parse()?,
            "mask_kind" => self.mask_kind = parse_list(key, v)?,
            "r_list" => self.r_list = parse_list(key, v)?,
            "stride" => self.stride = parse_one(key, v)?,
            "levels" => self.levels = parse_list(key, v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            "max_disp" => self.max_disp = parse_one(key, v)?,
            "seeds" => self.seeds = parse_one(key, v)?,
            "count" => self.count = parse_one(key, v)?,
            "patch_w" => self.patch_w = parse_one(key, v)?,
            _ => return Err(CliError::Usage(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse_text(text: &str) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) =
                line.split_once('=').ok_or_else(|| CliError::Usage(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(k.trim(), v)?;
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |m: String| Err(CliError::Usage(m));
        if self.dims.iter().any(|&d| d < 8) {
            return usage(format!("dims {:?} below 8", self.dims));
        }
        if self.r_list.is_empty() || self.r_list.iter().any(|r| !(*r >= 1.0)) {
            return usage(format!("r_list {:?} must hold values >= 1", self.r_list));
        }
        if self.mask_kind.is_empty() {
            return usage("mask_kind is empty".into());
        }
        if self.stride == 0 || self.seeds == 0 {
            return usage("stride and seeds must be positive".into());
        }
        if !(self.max_disp >= 0.0) {
            return usage(format!("max_disp {}", self.max_disp));
        }
        if self.patch_w % 2 == 0 || self.patch_w < 3 {
            return usage(format!("patch_w {} must be odd and >= 3", self.patch_w));
        }
        if self.levels.iter().any(|&w| w % 2 == 0 || w < 3) {
            return usage(format!("levels {:?} must be odd sizes >= 3", self.levels));
        }
        Ok(())
    }

    /// Text form accepted by [`parse_text`](Self::parse_text).
    pub fn to_text(&self) -> String {
        let join = |v: Vec<String>| v.join(",");
        [
            format!("phantom_seed = {}", self.phantom_seed),
            format!("flow_seed = {}", self.flow_seed),
            format!("dims = {},{},{}", self.dims[0], self.dims[1], self.dims[2]),
            format!("method = {}", self.method),
            format!("mask_kind = {}", join(self.mask_kind.iter().map(|m| m.to_string()).collect())),
            format!("r_list = {}", join(self.r_list.iter().map(|r| r.to_string()).collect())),
            format!("stride = {}", self.stride),
            format!("levels = {}", join(self.levels.iter().map(|w| w.to_string()).collect())),
            format!("out_dir = {}", self.out_dir.display()),
            format!("max_disp = {}", self.max_disp),
            format!("seeds = {}", self.seeds),
            format!("count = {}", self.count),
            format!("patch_w = {}", self.patch_w),
        ]
        .join("\n")
            + "\n"
    }

    pub fn lap_config(&self) -> LapConfig {
        let mut cfg = if self.levels.is_empty() { LapConfig::default() } else { LapConfig::with_windows(&self.levels) };
        cfg.stride = 1;
        cfg
    }

    /// k-space stages from `levels`: each taper size gets a basis of about
    /// half its width.
    pub fn kspace_config(&self) -> KspaceConfig {
        let mut cfg = match self.method {
            Method::KspacePhase => KspaceConfig::phase_slope(),
            _ => KspaceConfig::default(),
        };
        if !self.levels.is_empty() {
            cfg.stages = self.levels.iter().map(|&w| KStage { taper_w: w, basis_w: w.div_ceil(2) | 1 }).collect();
        }
        cfg.stride = self.stride;
        if self.method == Method::KspacePhase {
            cfg.solver = KSolver::PhaseSlope;
        }
        cfg
    }
}
