//! Experiment configuration files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use mdpf::filter::{FilterConfig, LearnedFilterSpec, SyntheticParams};
use mdpf::metrics::{ProbeLoss, ProbeTarget};
use mdpf::kernels::KernelFamily;
use mdpf::resample::ResamplerConfig;
use mdpf::tasks::BearingsWorld;
use mdpf::training::{PhaseConfig, PretrainConfig, TrainConfig};

use crate::CliError;

/// One experiment: data, model, and what to do with them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Method label used in result tables.
    pub name: String,
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Where datasets live; defaults to `<out_dir>/data`.
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    pub task: TaskConfig,
    #[serde(default)]
    pub filter: Option<FilterConfig>,
    #[serde(default)]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub train: Option<TrainSection>,
    #[serde(default)]
    pub eval: Option<EvalSection>,
    #[serde(default)]
    pub diagnose: Option<DiagnoseSection>,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskConfig {
    Synthetic {
        truth: SyntheticParams,
        prior_std: f64,
        steps: usize,
        train_seqs: usize,
        #[serde(default)]
        val_seqs: usize,
        #[serde(default)]
        eval_seqs: usize,
    },
    Bearings {
        #[serde(default)]
        world: BearingsWorld,
        train_seqs: usize,
        train_steps: usize,
        train_label_stride: usize,
        #[serde(default)]
        val_seqs: usize,
        eval_seqs: usize,
        eval_steps: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    /// The generating model family with perturbed starting values.
    Synthetic {
        init: SyntheticParams,
        posterior_bandwidth: f64,
        #[serde(default)]
        resampling_bandwidth: Option<f64>,
    },
    /// Dynamics and measurement networks.
    Learned {
        #[serde(flatten)]
        spec: LearnedFilterSpec,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(flatten)]
    pub config: TrainConfig,
    pub phases: Vec<PhaseConfig>,
    #[serde(default)]
    pub pretrain: Option<PretrainConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// Write per-step posterior mixtures as JSON lines.
    #[serde(default)]
    pub dumps: bool,
    /// Limit evaluation to the first `limit` trajectories.
    #[serde(default)]
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeCase {
    pub name: String,
    pub resampler: ResamplerConfig,
    pub centers: Vec<f64>,
    pub logits: Vec<f64>,
    pub bandwidth: f64,
    #[serde(default = "gaussian")]
    pub family: KernelFamily,
    pub n_out: usize,
    pub target: ProbeTarget,
    pub loss: ProbeLoss,
    /// Pass when the estimator mean is within this many standard errors of
    /// the reference.
    #[serde(default)]
    pub max_z: Option<f64>,
    /// Known gradient every replicate should reproduce to `tolerance`.
    #[serde(default)]
    pub expected: Option<f64>,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn default_tolerance() -> f64 {
    1e-6
}

fn gaussian() -> KernelFamily {
    KernelFamily::Gaussian
}

/// Pass when `variance(numerator) / variance(denominator) >= min`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VarianceRatio {
    pub numerator: String,
    pub denominator: String,
    pub min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuntimeSection {
    pub particles: Vec<usize>,
    pub reps: usize,
    /// Trajectory length used for timing.
    pub steps: usize,
    pub train_slope: [f64; 2],
    pub inference_slope_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnoseSection {
    pub replicates: usize,
    #[serde(default)]
    pub probes: Vec<ProbeCase>,
    #[serde(default)]
    pub ratios: Vec<VarianceRatio>,
    #[serde(default)]
    pub runtime: Option<RuntimeSection>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<ExperimentConfig, CliError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        ExperimentConfig::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if let Some(f) = &self.filter {
            f.validate()?;
        }
        if let Some(t) = &self.train {
            t.config.validate()?;
        }
        match (&self.task, &self.model) {
            (TaskConfig::Synthetic { .. }, Some(ModelConfig::Learned { .. })) | (TaskConfig::Bearings { .. }, Some(ModelConfig::Synthetic { .. })) => {
                return Err(CliError::Config("model kind does not match the task".into()))
            }
            _ => {}
        }
        if let TaskConfig::Bearings { world, .. } = &self.task {
            world.validate()?;
        }
        Ok(())
    }

    pub fn data_dir(&self) -> PathBuf {
        self.data_dir.clone().unwrap_or_else(|| self.out_dir.join("data"))
    }

    /// Datasets are keyed by seed so that runs sharing a seed share data.
    pub fn dataset_path(&self, split: Split) -> PathBuf {
        self.data_dir().join(format!("seed-{}", self.seed)).join(format!("{}.bin", split.name()))
    }

    /// Command-line values win over `MDPF_OUT_DIR`, which wins over the file.
    pub fn apply_overrides(&mut self, seed: Option<u64>, out_dir: Option<PathBuf>) {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(d) = out_dir.or_else(|| std::env::var_os("MDPF_OUT_DIR").map(PathBuf::from)) {
            self.out_dir = d;
        }
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.out_dir.join("checkpoint")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Eval,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Eval => "eval",
        }
    }

    pub fn key(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Eval => 2,
        }
    }
}
