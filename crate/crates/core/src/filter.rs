//! Filtering recursions.
//!
//! One step is propose → weigh → build the posterior mixture → resample.
//! The posterior is taken after weighing and before resampling, so losses
//! see the measurement update of the current step. When a second
//! measurement model is present, resampling draws from its own weights and
//! bandwidth while the posterior keeps the first model's.
//!
//! The mixture Kalman filter at the end of the module gives exact posteriors
//! for the scalar linear-Gaussian model with a two-branch likelihood.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Constraint, Graph, ParamGroup, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::kernels::{self, KernelFamily, Topology};
use crate::mixture::{weighted_mean_values, MixtureDensity, ParticleSet};
use crate::models::{normalize, DynamicsModel, MeasurementModel, NetworkConfig};
use crate::resample::{resample, ResamplerConfig};
use crate::rng::RngStream;
use crate::special::wrap_angle;
use crate::tasks::Trajectory;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Moves particles forward one step.
pub trait Transition {
    fn propose<'g>(
        &self,
        g: &'g Graph,
        store: &ParamStore,
        ps: &ParticleSet<'g>,
        action: Option<&[f64]>,
        rng: &mut RngStream,
    ) -> Result<ParticleSet<'g>>;
}

/// Scores particles against an observation.
pub trait Likelihood {
    /// Unnormalized log-likelihood per particle, shape `[N]`.
    fn log_likelihood<'g>(&self, g: &'g Graph, store: &ParamStore, particles: Var<'g>, obs: &[f64]) -> Result<Var<'g>>;
}

impl Transition for DynamicsModel {
    fn propose<'g>(
        &self,
        g: &'g Graph,
        store: &ParamStore,
        ps: &ParticleSet<'g>,
        action: Option<&[f64]>,
        rng: &mut RngStream,
    ) -> Result<ParticleSet<'g>> {
        DynamicsModel::propose(self, g, store, ps, action, rng)
    }
}

impl Likelihood for MeasurementModel {
    fn log_likelihood<'g>(&self, g: &'g Graph, store: &ParamStore, particles: Var<'g>, obs: &[f64]) -> Result<Var<'g>> {
        self.score(g, store, particles, obs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    pub n_particles: usize,
    pub resampler: ResamplerConfig,
    pub posterior_kernels: Vec<KernelFamily>,
    /// Separate kernels for the resampling mixture.
    #[serde(default)]
    pub resampling_kernels: Option<Vec<KernelFamily>>,
    /// Resample from a second measurement model's weights.
    #[serde(default)]
    pub dual_measurement: bool,
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        self.resampler.validate()?;
        if self.n_particles == 0 {
            return Err(Error::Config("n_particles must be at least 1".into()));
        }
        if self.dual_measurement && self.resampling_kernels.is_none() {
            return Err(Error::Config("dual_measurement needs resampling_kernels".into()));
        }
        if let Some(k) = &self.resampling_kernels {
            if k.len() != self.posterior_kernels.len() {
                return Err(Error::Config("resampling and posterior kernels differ in dimension".into()));
            }
        }
        Ok(())
    }

    pub fn topology(&self) -> Vec<Topology> {
        self.posterior_kernels.iter().map(|f| f.topology()).collect()
    }
}

/// Bandwidth parameters of the posterior and (optional) resampling mixtures.
#[derive(Debug, Clone, Copy)]
pub struct Bandwidths {
    pub posterior: ParamId,
    pub resampling: Option<ParamId>,
}

impl Bandwidths {
    /// Register positive bandwidth parameters with the given initial values.
    pub fn register(store: &mut ParamStore, posterior: &[f64], resampling: Option<&[f64]>) -> Bandwidths {
        Bandwidths {
            posterior: store.add_positive("bandwidth.posterior", posterior, ParamGroup::Bandwidth),
            resampling: resampling.map(|r| store.add_positive("bandwidth.resampling", r, ParamGroup::Bandwidth)),
        }
    }
}

/// Everything one step needs besides the particles.
pub struct FilterModels<'m, T: Transition, L: Likelihood> {
    pub dynamics: &'m T,
    pub measurement: &'m L,
    pub resampling_measurement: Option<&'m L>,
    pub bandwidths: Bandwidths,
}

pub struct StepOutput<'g> {
    /// Resampled set carried to the next step.
    pub next: ParticleSet<'g>,
    /// Post-measurement, pre-resampling posterior.
    pub posterior: MixtureDensity<'g>,
    /// Weighted particle set behind `posterior`.
    pub weighted: ParticleSet<'g>,
    pub converged: bool,
}

/// One propose → weigh → resample step.
#[allow(clippy::too_many_arguments)]
pub fn filter_step<'g, T: Transition, L: Likelihood>(
    cfg: &FilterConfig,
    models: &FilterModels<'_, T, L>,
    g: &'g Graph,
    store: &ParamStore,
    ps: &ParticleSet<'g>,
    obs: &[f64],
    action: Option<&[f64]>,
    rng: &mut RngStream,
) -> Result<StepOutput<'g>> {
    let proposed = models.dynamics.propose(g, store, ps, action, rng)?;
    let score = models.measurement.log_likelihood(g, store, proposed.particles, obs)?;
    let lw = normalize(proposed.log_weights.add(score)?)?;
    let mut weighted = ParticleSet::new(proposed.particles, lw, proposed.topology.clone())?;
    let post_bw = g.constrained(store, models.bandwidths.posterior);
    let posterior = MixtureDensity::new(weighted.particles, lw, cfg.posterior_kernels.clone(), post_bw)?;

    let resampling_mix = match (&cfg.resampling_kernels, models.bandwidths.resampling) {
        (Some(families), Some(bw_id)) => {
            let rlw = match (cfg.dual_measurement, models.resampling_measurement) {
                (true, Some(m)) => {
                    let s = m.log_likelihood(g, store, proposed.particles, obs)?;
                    let base = proposed.resampling_log_weights.unwrap_or(proposed.log_weights);
                    normalize(base.add(s)?)?
                }
                (true, None) => return Err(Error::Config("dual_measurement without a second measurement model".into())),
                (false, _) => lw,
            };
            if cfg.dual_measurement {
                weighted.resampling_log_weights = Some(rlw);
            }
            MixtureDensity::new(weighted.particles, rlw, families.clone(), g.constrained(store, bw_id))?
        }
        (Some(_), None) => return Err(Error::Config("resampling kernels without a resampling bandwidth".into())),
        _ => posterior.clone(),
    };
    let out = resample(&cfg.resampler, &weighted, &resampling_mix, cfg.n_particles, rng)?;
    let mut next = out.set;
    if cfg.dual_measurement {
        // Both weight vectors restart from the resampler's output weights.
        next.resampling_log_weights = Some(next.log_weights);
    }
    Ok(StepOutput { next, posterior, weighted, converged: out.converged })
}

/// Observations, optional actions and truncation settings for one run.
pub struct RunInputs<'a> {
    pub observations: &'a [Vec<f64>],
    pub actions: Option<&'a [Vec<f64>]>,
    /// Cut gradients through the particle set every `window` steps.
    pub tbptt_window: Option<usize>,
}

pub struct RunOutput<'g> {
    pub posteriors: Vec<MixtureDensity<'g>>,
    /// Graph-free weighted means of each posterior particle set.
    pub means: Vec<Vec<f64>>,
    pub weighted: Vec<ParticleSet<'g>>,
    pub all_converged: bool,
}

/// Iterate [`filter_step`] over a sequence.
pub fn run_filter<'g, T: Transition, L: Likelihood>(
    cfg: &FilterConfig,
    models: &FilterModels<'_, T, L>,
    g: &'g Graph,
    store: &ParamStore,
    inputs: &RunInputs<'_>,
    init: ParticleSet<'g>,
    rng: &mut RngStream,
) -> Result<RunOutput<'g>> {
    let steps = inputs.observations.len();
    let mut ps = init;
    let mut out = RunOutput {
        posteriors: Vec::with_capacity(steps),
        means: Vec::with_capacity(steps),
        weighted: Vec::with_capacity(steps),
        all_converged: true,
    };
    for t in 0..steps {
        let action = inputs.actions.map(|a| a[t].as_slice());
        let step = filter_step(cfg, models, g, store, &ps, &inputs.observations[t], action, rng)?;
        let w: Vec<f64> = step.weighted.weights();
        out.means.push(weighted_mean_values(&step.weighted.particles.value(), &w, &step.weighted.topology).0);
        out.all_converged &= step.converged;
        out.posteriors.push(step.posterior);
        out.weighted.push(step.weighted);
        ps = step.next;
        if let Some(win) = inputs.tbptt_window {
            if (t + 1) % win == 0 {
                ps = ps.detached();
            }
        }
    }
    Ok(out)
}

/// `n` particles at `state` plus independent kernel noise per dimension.
pub fn init_particles<'g>(
    g: &'g Graph,
    state: &[f64],
    families: &[KernelFamily],
    noise: &[f64],
    n: usize,
    rng: &mut RngStream,
) -> Result<ParticleSet<'g>> {
    let d = state.len();
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        for k in 0..d {
            let v = state[k] + kernels::sample(families[k], noise[k], rng);
            data.push(if families[k].topology() == Topology::Circular { wrap_angle(v) } else { v });
        }
    }
    let topo = families.iter().map(|f| f.topology()).collect();
    ParticleSet::uniform(g.constant(Tensor::matrix(n, d, data)), topo)
}

/// Graph-free dump of one posterior mixture, one JSON object per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDump {
    pub sequence: usize,
    pub step: usize,
    pub centers: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub bandwidth: Vec<f64>,
    pub kernels: Vec<KernelFamily>,
    /// True state at this step.
    pub state: Vec<f64>,
}

impl PosteriorDump {
    pub fn from_mixture(sequence: usize, step: usize, mix: &MixtureDensity<'_>, state: &[f64]) -> Self {
        let c = mix.centers.value();
        PosteriorDump {
            sequence,
            step,
            centers: (0..c.rows()).map(|i| c.row(i).to_vec()).collect(),
            weights: mix.log_weights.value().data().iter().map(|l| l.exp()).collect(),
            bandwidth: mix.bandwidth.value().data().to_vec(),
            kernels: mix.families.clone(),
            state: state.to_vec(),
        }
    }
}

/// Scalar model `x' ~ N(A x + B a, σ²)`,
/// `y ~ w1 N(C1 x + c1, γ²) + w2 N(C2 x + c2, γ²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticParams {
    pub a: f64,
    pub b: f64,
    pub c1: f64,
    pub offset1: f64,
    pub c2: f64,
    pub offset2: f64,
    /// Logit of the second branch weight: `w2 = 1/(1+e^{-v})`.
    pub v: f64,
    pub sigma: f64,
    pub gamma: f64,
}

impl SyntheticParams {
    pub fn branch_weights(&self) -> (f64, f64) {
        let w2 = 1.0 / (1.0 + (-self.v).exp());
        (1.0 - w2, w2)
    }

    /// The learnable values by name, with `w2` in place of its logit.
    pub fn learnable(&self) -> [(&'static str, f64); 7] {
        [
            ("A", self.a),
            ("B", self.b),
            ("C1", self.c1),
            ("C2", self.c2),
            ("c1", self.offset1),
            ("c2", self.offset2),
            ("w2", self.branch_weights().1),
        ]
    }
}

/// The synthetic model with `σ` and `γ` fixed and everything else learnable.
#[derive(Debug, Clone)]
pub struct SyntheticModel {
    pub a: ParamId,
    pub b: ParamId,
    pub c1: ParamId,
    pub offset1: ParamId,
    pub c2: ParamId,
    pub offset2: ParamId,
    pub v: ParamId,
    pub sigma: f64,
    pub gamma: f64,
}

impl SyntheticModel {
    pub fn new(store: &mut ParamStore, init: &SyntheticParams) -> SyntheticModel {
        let mut add = |name: &str, v: f64, c: Constraint| store.add(name, Tensor::scalar(v), ParamGroup::Network, c);
        SyntheticModel {
            a: add("A", init.a, Constraint::None),
            b: add("B", init.b, Constraint::None),
            c1: add("C1", init.c1, Constraint::None),
            offset1: add("c1", init.offset1, Constraint::None),
            c2: add("C2", init.c2, Constraint::None),
            offset2: add("c2", init.offset2, Constraint::None),
            v: add("v", init.v, Constraint::LogisticPair),
            sigma: init.sigma,
            gamma: init.gamma,
        }
    }

    pub fn values(&self, store: &ParamStore) -> SyntheticParams {
        let s = |id: ParamId| store.value(id).item();
        SyntheticParams {
            a: s(self.a),
            b: s(self.b),
            c1: s(self.c1),
            offset1: s(self.offset1),
            c2: s(self.c2),
            offset2: s(self.offset2),
            v: s(self.v),
            sigma: self.sigma,
            gamma: self.gamma,
        }
    }

    /// Log of `(w1, w2)` as a `[2]` node.
    fn log_branch_weights<'g>(&self, g: &'g Graph, store: &ParamStore) -> Result<Var<'g>> {
        Ok(g.constrained(store, self.v).log()?)
    }

    /// Mixture KF predict.
    pub fn kf_predict<'g>(&self, g: &'g Graph, store: &ParamStore, belief: &GaussianMixtureBelief<'g>, action: f64) -> Result<GaussianMixtureBelief<'g>> {
        let a = g.param(store, self.a);
        let b = g.param(store, self.b);
        mixture_kf_predict(belief, a, b, self.sigma, action)
    }

    /// Mixture KF update with the two-branch likelihood.
    pub fn kf_update<'g>(
        &self,
        g: &'g Graph,
        store: &ParamStore,
        belief: &GaussianMixtureBelief<'g>,
        obs: f64,
        cap: usize,
    ) -> Result<GaussianMixtureBelief<'g>> {
        let branches = [
            (g.param(store, self.c1), g.param(store, self.offset1)),
            (g.param(store, self.c2), g.param(store, self.offset2)),
        ];
        mixture_kf_update(belief, &branches, self.gamma, self.log_branch_weights(g, store)?, obs, cap)
    }
}

impl Transition for SyntheticModel {
    fn propose<'g>(
        &self,
        g: &'g Graph,
        store: &ParamStore,
        ps: &ParticleSet<'g>,
        action: Option<&[f64]>,
        rng: &mut RngStream,
    ) -> Result<ParticleSet<'g>> {
        let n = ps.len();
        let a = g.param(store, self.a);
        let b = g.param(store, self.b);
        let act = action.map(|v| v[0]).unwrap_or(0.0);
        let eta: Vec<f64> = (0..n).map(|_| self.sigma * rng.normal()).collect();
        let x = ps.particles.mul(a)?.add(b.mul_scalar(act))?.add(g.constant(Tensor::matrix(n, 1, eta)))?;
        Ok(ParticleSet {
            particles: x,
            log_weights: ps.log_weights,
            resampling_log_weights: ps.resampling_log_weights,
            topology: ps.topology.clone(),
        })
    }
}

impl Likelihood for SyntheticModel {
    fn log_likelihood<'g>(&self, g: &'g Graph, store: &ParamStore, particles: Var<'g>, obs: &[f64]) -> Result<Var<'g>> {
        let n = particles.shape()[0];
        let y = obs[0];
        let lw = self.log_branch_weights(g, store)?;
        let inv = 1.0 / self.gamma;
        let norm = -self.gamma.ln() - 0.5 * LN_2PI;
        let branch = |c: ParamId, off: ParamId, k: usize| -> Result<Var<'g>> {
            let mean = particles.mul(g.param(store, c))?.add(g.param(store, off))?;
            let r = mean.neg().add_scalar(y).mul_scalar(inv);
            Ok(r.square().mul_scalar(-0.5).add_scalar(norm).add(lw.index_select(0, &[k])?)?)
        };
        let l1 = branch(self.c1, self.offset1, 0)?;
        let l2 = branch(self.c2, self.offset2, 1)?;
        Ok(Var::concat(&[l1, l2], 1)?.logsumexp(1)?.reshape(&[n]))
    }
}

/// One step of the generative particle filter on the synthetic model.
#[allow(clippy::too_many_arguments)]
pub fn generative_pf_step<'g>(
    model: &SyntheticModel,
    cfg: &FilterConfig,
    bandwidths: Bandwidths,
    g: &'g Graph,
    store: &ParamStore,
    ps: &ParticleSet<'g>,
    action: f64,
    obs: f64,
    rng: &mut RngStream,
) -> Result<StepOutput<'g>> {
    let models: FilterModels<'_, SyntheticModel, SyntheticModel> =
        FilterModels { dynamics: model, measurement: model, resampling_measurement: None, bandwidths };
    filter_step(cfg, &models, g, store, ps, &[obs], Some(&[action]), rng)
}

/// Scalar Gaussian mixture `Σ_k π_k N(μ_k, P_k)` on the graph.
#[derive(Clone)]
pub struct GaussianMixtureBelief<'g> {
    /// Shape `[K]`, normalized.
    pub log_weights: Var<'g>,
    /// Shape `[K]`.
    pub means: Var<'g>,
    /// Shape `[K]`, positive.
    pub variances: Var<'g>,
}

impl<'g> GaussianMixtureBelief<'g> {
    pub fn single(g: &'g Graph, mean: f64, variance: f64) -> Self {
        GaussianMixtureBelief { log_weights: g.vector(vec![0.0]), means: g.vector(vec![mean]), variances: g.vector(vec![variance]) }
    }

    pub fn components(&self) -> usize {
        self.means.shape()[0]
    }

    /// Graph-free density.
    pub fn density(&self, x: f64) -> f64 {
        let lw = self.log_weights.value();
        let m = self.means.value();
        let v = self.variances.value();
        (0..self.components())
            .map(|k| (lw.data()[k] - 0.5 * (x - m.data()[k]).powi(2) / v.data()[k]).exp() / (2.0 * PI * v.data()[k]).sqrt())
            .sum()
    }

    pub fn mean(&self) -> f64 {
        let lw = self.log_weights.value();
        let m = self.means.value();
        (0..self.components()).map(|k| lw.data()[k].exp() * m.data()[k]).sum()
    }
}

/// Means `A μ + B a`, variances `A² P + σ²`, weights unchanged.
pub fn mixture_kf_predict<'g>(
    belief: &GaussianMixtureBelief<'g>,
    a: Var<'g>,
    b: Var<'g>,
    sigma: f64,
    action: f64,
) -> Result<GaussianMixtureBelief<'g>> {
    Ok(GaussianMixtureBelief {
        log_weights: belief.log_weights,
        means: belief.means.mul(a)?.add(b.mul_scalar(action))?,
        variances: belief.variances.mul(a.square())?.add_scalar(sigma * sigma),
    })
}

/// Condition every component on every likelihood branch `(C_ℓ, c_ℓ)`. The
/// new weight of (k, ℓ) is `π_k w_ℓ N(y; C_ℓ μ_k + c_ℓ, C_ℓ² P_k + γ²)`.
pub fn mixture_kf_update<'g>(
    belief: &GaussianMixtureBelief<'g>,
    branches: &[(Var<'g>, Var<'g>)],
    gamma: f64,
    log_branch_weights: Var<'g>,
    obs: f64,
    cap: usize,
) -> Result<GaussianMixtureBelief<'g>> {
    let k = belief.components();
    if k * branches.len() > cap {
        return Err(Error::ComponentCap { cap });
    }
    let mut lws = Vec::with_capacity(branches.len());
    let mut means = Vec::with_capacity(branches.len());
    let mut vars = Vec::with_capacity(branches.len());
    for (l, &(c, off)) in branches.iter().enumerate() {
        let pred = belief.means.mul(c)?.add(off)?;
        let s = belief.variances.mul(c.square())?.add_scalar(gamma * gamma);
        let resid = pred.neg().add_scalar(obs);
        let gain = belief.variances.mul(c)?.div(s)?;
        means.push(belief.means.add(gain.mul(resid)?)?);
        vars.push(gain.mul(c)?.neg().add_scalar(1.0).mul(belief.variances)?);
        let loglik = resid.square().div(s)?.add(s.log()?)?.add_scalar(LN_2PI).mul_scalar(-0.5);
        let lw = belief.log_weights.add(loglik)?.add(log_branch_weights.index_select(0, &[l])?.reshape(&[]))?;
        lws.push(lw);
    }
    let lw = Var::concat(&lws, 0)?;
    Ok(GaussianMixtureBelief { log_weights: normalize(lw)?, means: Var::concat(&means, 0)?, variances: Var::concat(&vars, 0)? })
}

/// `−log Σ_k π_k N(x; μ_k, P_k)`.
pub fn mixture_kf_nll<'g>(belief: &GaussianMixtureBelief<'g>, x: f64) -> Result<Var<'g>> {
    let k = belief.components();
    let d = belief.means.neg().add_scalar(x);
    let terms = d.square().div(belief.variances)?.add(belief.variances.log()?)?.add_scalar(LN_2PI).mul_scalar(-0.5).add(belief.log_weights)?;
    Ok(terms.reshape(&[1, k]).logsumexp(1)?.reshape(&[]).neg())
}

/// A complete filter: models, kernels, bandwidths and initialization.
pub trait FilterSystem: Sync {
    fn config(&self) -> &FilterConfig;

    fn posterior_bandwidth(&self) -> ParamId;

    /// Particle set before the first step of `traj`.
    fn initial<'g>(&self, g: &'g Graph, traj: &Trajectory, rng: &mut RngStream) -> Result<ParticleSet<'g>>;

    fn run<'g>(
        &self,
        g: &'g Graph,
        store: &ParamStore,
        traj: &Trajectory,
        tbptt_window: Option<usize>,
        rng: &mut RngStream,
    ) -> Result<RunOutput<'g>>;

    fn topology(&self) -> Vec<Topology> {
        self.config().topology()
    }
}

fn run_trajectory<'g, T: Transition, L: Likelihood, S: FilterSystem>(
    sys: &S,
    models: &FilterModels<'_, T, L>,
    g: &'g Graph,
    store: &ParamStore,
    traj: &Trajectory,
    tbptt_window: Option<usize>,
    rng: &mut RngStream,
) -> Result<RunOutput<'g>> {
    let init = sys.initial(g, traj, rng)?;
    let inputs = RunInputs { observations: &traj.observations, actions: traj.actions.as_deref(), tbptt_window };
    run_filter(sys.config(), models, g, store, &inputs, init, rng)
}

/// Sizes and initial values for a [`LearnedFilter`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnedFilterSpec {
    pub posterior_bandwidth: Vec<f64>,
    #[serde(default)]
    pub resampling_bandwidth: Option<Vec<f64>>,
    /// Per-dimension spread of the initial particles; defaults to the
    /// posterior bandwidth.
    #[serde(default)]
    pub init_noise: Option<Vec<f64>>,
    #[serde(default)]
    pub network: NetworkConfig,
}

/// Filter with learned dynamics and measurement networks.
#[derive(Debug, Clone)]
pub struct LearnedFilter {
    pub cfg: FilterConfig,
    pub dynamics: DynamicsModel,
    pub measurement: MeasurementModel,
    pub resampling_measurement: Option<MeasurementModel>,
    pub bandwidths: Bandwidths,
    pub init_noise: Vec<f64>,
}

impl LearnedFilter {
    pub fn build(
        store: &mut ParamStore,
        cfg: FilterConfig,
        obs_topology: &[Topology],
        action_dim: usize,
        spec: &LearnedFilterSpec,
        rng: &mut RngStream,
    ) -> Result<LearnedFilter> {
        cfg.validate()?;
        let topo = cfg.topology();
        let d = topo.len();
        if spec.posterior_bandwidth.len() != d || spec.resampling_bandwidth.as_ref().is_some_and(|b| b.len() != d) {
            return Err(Error::Config(format!("bandwidths must have {d} entries")));
        }
        if cfg.resampling_kernels.is_some() != spec.resampling_bandwidth.is_some() {
            return Err(Error::Config("resampling kernels and resampling bandwidth go together".into()));
        }
        let dynamics = DynamicsModel::new(store, "dynamics", &topo, action_dim, &spec.network, rng);
        let measurement = MeasurementModel::new(store, "measurement", &topo, obs_topology, &spec.network, rng);
        let resampling_measurement = cfg
            .dual_measurement
            .then(|| MeasurementModel::new(store, "resampling_measurement", &topo, obs_topology, &spec.network, rng));
        let bandwidths = Bandwidths::register(store, &spec.posterior_bandwidth, spec.resampling_bandwidth.as_deref());
        let init_noise = spec.init_noise.clone().unwrap_or_else(|| spec.posterior_bandwidth.clone());
        Ok(LearnedFilter { cfg, dynamics, measurement, resampling_measurement, bandwidths, init_noise })
    }

    /// Same models and parameters with a different particle count.
    pub fn with_particles(&self, n: usize) -> LearnedFilter {
        let mut f = self.clone();
        f.cfg.n_particles = n;
        f
    }
}

impl FilterSystem for LearnedFilter {
    fn config(&self) -> &FilterConfig {
        &self.cfg
    }

    fn posterior_bandwidth(&self) -> ParamId {
        self.bandwidths.posterior
    }

    fn initial<'g>(&self, g: &'g Graph, traj: &Trajectory, rng: &mut RngStream) -> Result<ParticleSet<'g>> {
        init_particles(g, &traj.initial_state, &self.cfg.posterior_kernels, &self.init_noise, self.cfg.n_particles, rng)
    }

    fn run<'g>(
        &self,
        g: &'g Graph,
        store: &ParamStore,
        traj: &Trajectory,
        tbptt_window: Option<usize>,
        rng: &mut RngStream,
    ) -> Result<RunOutput<'g>> {
        let models = FilterModels {
            dynamics: &self.dynamics,
            measurement: &self.measurement,
            resampling_measurement: self.resampling_measurement.as_ref(),
            bandwidths: self.bandwidths,
        };
        run_trajectory(self, &models, g, store, traj, tbptt_window, rng)
    }
}

/// Particle filter on the synthetic model with fixed bandwidths.
#[derive(Debug, Clone)]
pub struct SyntheticFilter {
    pub cfg: FilterConfig,
    pub model: SyntheticModel,
    pub bandwidths: Bandwidths,
    /// Standard deviation of the zero-mean initial particle cloud.
    pub prior_std: f64,
}

impl SyntheticFilter {
    /// Registers the model and two frozen bandwidths.
    pub fn build(
        store: &mut ParamStore,
        cfg: FilterConfig,
        init: &SyntheticParams,
        posterior_bandwidth: f64,
        resampling_bandwidth: Option<f64>,
        prior_std: f64,
    ) -> Result<SyntheticFilter> {
        cfg.validate()?;
        if cfg.posterior_kernels.len() != 1 {
            return Err(Error::Config("the synthetic model has a scalar state".into()));
        }
        if cfg.resampling_kernels.is_some() != resampling_bandwidth.is_some() {
            return Err(Error::Config("resampling kernels and resampling bandwidth go together".into()));
        }
        let model = SyntheticModel::new(store, init);
        let rb = resampling_bandwidth.map(|b| vec![b]);
        let bandwidths = Bandwidths::register(store, &[posterior_bandwidth], rb.as_deref());
        store.set_trainable(bandwidths.posterior, false);
        if let Some(r) = bandwidths.resampling {
            store.set_trainable(r, false);
        }
        Ok(SyntheticFilter { cfg, model, bandwidths, prior_std })
    }
}

impl FilterSystem for SyntheticFilter {
    fn config(&self) -> &FilterConfig {
        &self.cfg
    }

    fn posterior_bandwidth(&self) -> ParamId {
        self.bandwidths.posterior
    }

    fn initial<'g>(&self, g: &'g Graph, _traj: &Trajectory, rng: &mut RngStream) -> Result<ParticleSet<'g>> {
        init_particles(g, &[0.0], &self.cfg.posterior_kernels, &[self.prior_std], self.cfg.n_particles, rng)
    }

    fn run<'g>(
        &self,
        g: &'g Graph,
        store: &ParamStore,
        traj: &Trajectory,
        tbptt_window: Option<usize>,
        rng: &mut RngStream,
    ) -> Result<RunOutput<'g>> {
        let models: FilterModels<'_, SyntheticModel, SyntheticModel> =
            FilterModels { dynamics: &self.model, measurement: &self.model, resampling_measurement: None, bandwidths: self.bandwidths };
        run_trajectory(self, &models, g, store, traj, tbptt_window, rng)
    }
}

/// Exact posterior over the final state of a synthetic trajectory.
pub fn mixture_kf_run<'g>(
    model: &SyntheticModel,
    g: &'g Graph,
    store: &ParamStore,
    traj: &Trajectory,
    prior_std: f64,
    cap: usize,
) -> Result<Vec<GaussianMixtureBelief<'g>>> {
    let mut belief = GaussianMixtureBelief::single(g, 0.0, prior_std * prior_std);
    let mut out = Vec::with_capacity(traj.len());
    for t in 0..traj.len() {
        let a = traj.actions.as_ref().map(|a| a[t][0]).unwrap_or(0.0);
        belief = model.kf_predict(g, store, &belief, a)?;
        belief = model.kf_update(g, store, &belief, traj.observations[t][0], cap)?;
        out.push(belief.clone());
    }
    Ok(out)
}

/// Default component cap for [`mixture_kf_update`].
pub const KF_COMPONENT_CAP: usize = 1 << 10;
