//! Pipeline configuration: a flat TOML file, then command-line overrides.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Result;
use ccc_core::inference::BackendSpec;
use ccc_core::phenotype::{PhenotypeParams, DEFAULT_MIN_STAIN_AREA, DEFAULT_TAU, DEFAULT_V_X};
use ccc_core::preprocess::AugmentParams;
use serde::{Deserialize, Serialize};

use crate::UsageError;

pub const DEFAULT_K: usize = 5;
pub const DEFAULT_SEED: u64 = 0;
pub const DEFAULT_BACKEND: &str = "classical";

/// Keys accepted in the config file. Anything else is rejected.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub dataset: Option<PathBuf>,
    pub models: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub tau: Option<f64>,
    pub v_x: Option<u8>,
    pub k: Option<usize>,
    pub seed: Option<u64>,
    pub backend: Option<String>,
    pub threads: Option<usize>,
    pub min_stain_area: Option<usize>,
    pub augment: Option<AugmentParams>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| UsageError(format!("config {}: {e}", path.display())))?;
        let cfg = toml::from_str(&text)
            .map_err(|e| UsageError(format!("config {}: {e}", path.display())))?;
        Ok(cfg)
    }
}

/// Values given on the command line; each one wins over the file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub tau: Option<f64>,
    pub v_x: Option<u8>,
    pub k: Option<usize>,
    pub seed: Option<u64>,
    pub backend: Option<String>,
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PipelineConfig {
    pub dataset: Option<PathBuf>,
    pub models: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub tau: f64,
    pub v_x: u8,
    pub k: usize,
    pub seed: u64,
    pub backend: String,
    /// 0 lets the thread pool pick.
    pub threads: usize,
    pub min_stain_area: usize,
    pub augment: AugmentParams,
}

impl PipelineConfig {
    pub fn resolve(file: FileConfig, flags: &Overrides) -> Result<Self> {
        let cfg = Self {
            dataset: file.dataset,
            models: file.models,
            output: file.output,
            tau: flags.tau.or(file.tau).unwrap_or(DEFAULT_TAU),
            v_x: flags.v_x.or(file.v_x).unwrap_or(DEFAULT_V_X),
            k: flags.k.or(file.k).unwrap_or(DEFAULT_K),
            seed: flags.seed.or(file.seed).unwrap_or(DEFAULT_SEED),
            backend: flags
                .backend
                .clone()
                .or(file.backend)
                .unwrap_or_else(|| DEFAULT_BACKEND.to_string()),
            threads: flags.threads.or(file.threads).unwrap_or(0),
            min_stain_area: file.min_stain_area.unwrap_or(DEFAULT_MIN_STAIN_AREA),
            augment: file.augment.unwrap_or_default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(UsageError(format!("tau {} is outside [0, 1]", self.tau)).into());
        }
        if self.k < 2 {
            return Err(UsageError(format!("k = {} folds; need at least 2", self.k)).into());
        }
        for (name, path) in [("dataset", &self.dataset), ("models", &self.models)] {
            if let Some(p) = path {
                if !p.exists() {
                    return Err(UsageError(format!("{name} path {} does not exist", p.display())).into());
                }
            }
        }
        let a = &self.augment;
        let unit = |r: (f64, f64)| 0.0 < r.0 && r.0 <= r.1 && r.1 <= 1.0;
        if !unit(a.crop_scale) || a.rotation.0 > a.rotation.1 || a.blur_sigma.0 > a.blur_sigma.1 || a.blur_sigma.0 < 0.0 {
            return Err(UsageError("augment ranges must be ordered, crop_scale within (0, 1]".into()).into());
        }
        self.backend_spec()?;
        Ok(())
    }

    /// The backend; ONNX paths are taken relative to `models` when set.
    pub fn backend_spec(&self) -> Result<BackendSpec> {
        let spec = BackendSpec::parse(&self.backend).map_err(|e| UsageError(e.to_string()))?;
        Ok(match (spec, &self.models) {
            (BackendSpec::Onnx(p), Some(dir)) if p.is_relative() => BackendSpec::Onnx(dir.join(p)),
            (spec, _) => spec,
        })
    }

    pub fn phenotype_params(&self) -> PhenotypeParams {
        PhenotypeParams {
            tau: self.tau,
            v_x: self.v_x,
            min_stain_area: self.min_stain_area,
        }
    }

    /// A manifest argument, else the configured dataset. A directory means
    /// its `manifest.jsonl`.
    pub fn manifest_path(&self, arg: Option<PathBuf>) -> Result<PathBuf> {
        let p = arg
            .or_else(|| self.dataset.clone())
            .ok_or_else(|| UsageError("no manifest given and no dataset configured".into()))?;
        Ok(if p.is_dir() { p.join("manifest.jsonl") } else { p })
    }

    pub fn output_dir(&self, arg: Option<PathBuf>) -> Result<PathBuf> {
        Ok(arg
            .or_else(|| self.output.clone())
            .ok_or_else(|| UsageError("no output directory given and none configured".into()))?)
    }
}
