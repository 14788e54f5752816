//! Builds the filter an experiment describes.

use mdpf::autodiff::ParamId;
use mdpf::filter::{FilterConfig, FilterSystem, LearnedFilter, RunOutput, SyntheticFilter};
use mdpf::kernels::Topology;
use mdpf::mixture::ParticleSet;
use mdpf::tasks::Trajectory;
use mdpf::{Graph, ParamStore, RngStream};

use crate::config::{ExperimentConfig, ModelConfig, TaskConfig};
use crate::{CliError, Result};

/// Either filter family behind one type.
#[derive(Debug, Clone)]
pub enum System {
    Synthetic(SyntheticFilter),
    Learned(LearnedFilter),
}

impl System {
    /// Parameters held fixed during training.
    pub fn fixed_params(&self) -> Vec<ParamId> {
        match self {
            System::Synthetic(s) => std::iter::once(s.bandwidths.posterior).chain(s.bandwidths.resampling).collect(),
            System::Learned(_) => Vec::new(),
        }
    }
}

impl FilterSystem for System {
    fn config(&self) -> &FilterConfig {
        match self {
            System::Synthetic(s) => s.config(),
            System::Learned(s) => s.config(),
        }
    }

    fn posterior_bandwidth(&self) -> ParamId {
        match self {
            System::Synthetic(s) => s.posterior_bandwidth(),
            System::Learned(s) => s.posterior_bandwidth(),
        }
    }

    fn initial<'g>(&self, g: &'g Graph, traj: &Trajectory, rng: &mut RngStream) -> mdpf::Result<ParticleSet<'g>> {
        match self {
            System::Synthetic(s) => s.initial(g, traj, rng),
            System::Learned(s) => s.initial(g, traj, rng),
        }
    }

    fn run<'g>(
        &self,
        g: &'g Graph,
        store: &ParamStore,
        traj: &Trajectory,
        tbptt_window: Option<usize>,
        rng: &mut RngStream,
    ) -> mdpf::Result<RunOutput<'g>> {
        match self {
            System::Synthetic(s) => s.run(g, store, traj, tbptt_window, rng),
            System::Learned(s) => s.run(g, store, traj, tbptt_window, rng),
        }
    }
}

/// Register the experiment's model in `store`. Network weights draw from `rng`.
pub fn build_system(
    cfg: &ExperimentConfig,
    store: &mut ParamStore,
    obs_topology: &[Topology],
    action_dim: usize,
    rng: &mut RngStream,
) -> Result<System> {
    let filter = cfg.filter.clone().ok_or_else(|| CliError::Config("missing [filter]".into()))?;
    let model = cfg.model.as_ref().ok_or_else(|| CliError::Config("missing [model]".into()))?;
    Ok(match (model, &cfg.task) {
        (ModelConfig::Synthetic { init, posterior_bandwidth, resampling_bandwidth }, TaskConfig::Synthetic { prior_std, .. }) => {
            System::Synthetic(SyntheticFilter::build(store, filter, init, *posterior_bandwidth, *resampling_bandwidth, *prior_std)?)
        }
        (ModelConfig::Learned { spec }, TaskConfig::Bearings { .. }) => {
            System::Learned(LearnedFilter::build(store, filter, obs_topology, action_dim, spec, rng)?)
        }
        _ => return Err(CliError::Config("model kind does not match the task".into())),
    })
}
