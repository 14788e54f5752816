//! Losses, optimisation and the training protocol.
//!
//! A batch is a set of trajectories. Each trajectory gets its own graph and
//! random stream, is filtered with truncated backpropagation, and yields a
//! gradient; gradients are summed in trajectory order and averaged, clipped,
//! and handed to Adam. Network and bandwidth parameters have separate
//! learning rates.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Graph, ParamGroup, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::filter::{init_particles, FilterSystem};
use crate::kernels::{KernelFamily, Topology};
use crate::metrics::{evaluate, EvalReport};
use crate::mixture::{weighted_mean, MixtureDensity, StateSummary};
use crate::models::{normalize, MeasurementModel};
use crate::rng::RngStream;
use crate::tasks::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Nll,
    Mse,
}

/// Mean of `−log m(x_t)` over labeled steps; `labels` pairs a step index
/// with its true state.
pub fn nll_loss<'g>(posteriors: &[MixtureDensity<'g>], labels: &[(usize, &[f64])]) -> Result<Var<'g>> {
    let first = labels.first().ok_or(Error::NoLabels)?;
    let mut total = posteriors[first.0].log_density_at(first.1)?;
    for &(t, x) in &labels[1..] {
        total = total.add(posteriors[t].log_density_at(x)?)?;
    }
    Ok(total.mul_scalar(-1.0 / labels.len() as f64))
}

/// Mean over labeled steps of the squared error summed over dimensions;
/// circular dimensions use the wrapped difference.
pub fn mse_loss<'g>(summaries: &[StateSummary<'g>], labels: &[(usize, &[f64])], topology: &[Topology]) -> Result<Var<'g>> {
    if labels.is_empty() {
        return Err(Error::NoLabels);
    }
    let mut total: Option<Var<'g>> = None;
    for &(t, x) in labels {
        let mean = summaries[t].mean;
        let g = mean.graph();
        let diff = mean.sub(g.constant(Tensor::vector(x.to_vec())))?;
        let parts: Vec<Var<'g>> = topology
            .iter()
            .enumerate()
            .map(|(d, topo)| {
                let c = diff.index_select(0, &[d])?;
                Ok(match topo {
                    Topology::Linear => c,
                    Topology::Circular => c.wrap_angle(),
                })
            })
            .collect::<Result<_>>()?;
        let se = Var::concat(&parts, 0)?.square().sum();
        total = Some(match total {
            Some(acc) => acc.add(se)?,
            None => se,
        });
    }
    Ok(total.expect("labels are non-empty").mul_scalar(1.0 / labels.len() as f64))
}

/// Filter one trajectory and build its loss. `None` when no label survives
/// the stride.
#[allow(clippy::too_many_arguments)]
pub fn trajectory_loss<'g, S: FilterSystem>(
    sys: &S,
    g: &'g Graph,
    store: &ParamStore,
    traj: &Trajectory,
    kind: LossKind,
    label_stride: usize,
    tbptt_window: Option<usize>,
    rng: &mut RngStream,
) -> Result<Option<Var<'g>>> {
    let steps = traj.labels_with_stride(label_stride);
    if steps.is_empty() {
        return Ok(None);
    }
    let out = sys.run(g, store, traj, tbptt_window, rng)?;
    let labels: Vec<(usize, &[f64])> = steps.iter().map(|&t| (t, traj.states[t].as_slice())).collect();
    Ok(Some(match kind {
        LossKind::Nll => nll_loss(&out.posteriors, &labels)?,
        LossKind::Mse => {
            let summaries: Vec<StateSummary<'g>> = out.weighted.iter().map(weighted_mean).collect::<Result<_>>()?;
            mse_loss(&summaries, &labels, &sys.topology())?
        }
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningRates {
    pub network: f64,
    pub bandwidth: f64,
}

impl LearningRates {
    pub fn scaled(self, f: f64) -> LearningRates {
        LearningRates { network: self.network * f, bandwidth: self.bandwidth * f }
    }

    fn of(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::Network => self.network,
            ParamGroup::Bandwidth => self.bandwidth,
        }
    }
}

/// Adam with bias correction, `β₁ = 0.9`, `β₂ = 0.999`, `ε = 1e-8`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> AdamState {
        let zeros = || store.entries().iter().map(|e| Tensor::zeros(e.value.shape())).collect();
        AdamState { m: zeros(), v: zeros(), step: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    /// Apply one update to every trainable parameter. A non-finite gradient
    /// leaves parameters and moments untouched and returns `false`.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients, lr: LearningRates) -> bool {
        if !grads.all_finite() {
            return false;
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let ids: Vec<ParamId> = store.ids().collect();
        for id in ids {
            let e = store.entry(id);
            if !e.trainable {
                continue;
            }
            let rate = lr.of(e.group);
            let g = grads.get(id).data();
            let m = self.m[id.0].data_mut();
            let v = self.v[id.0].data_mut();
            let p = store.value_mut(id).data_mut();
            for k in 0..p.len() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                p[k] -= rate * (m[k] / bc1) / ((v[k] / bc2).sqrt() + self.eps);
            }
        }
        true
    }

    /// Moments and step counter as named arrays, for checkpoints.
    pub fn to_arrays(&self, store: &ParamStore) -> Vec<(String, Tensor)> {
        let mut out = vec![("adam.step".to_string(), Tensor::scalar(self.step as f64))];
        for (e, (m, v)) in store.entries().iter().zip(self.m.iter().zip(&self.v)) {
            out.push((format!("adam.m.{}", e.name), m.clone()));
            out.push((format!("adam.v.{}", e.name), v.clone()));
        }
        out
    }

    pub fn from_arrays(store: &ParamStore, arrays: &[(String, Tensor)]) -> Result<AdamState> {
        let find = |name: &str| {
            arrays
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t.clone())
                .ok_or_else(|| Error::Format(format!("checkpoint lacks {name}")))
        };
        let mut s = AdamState::new(store);
        s.step = find("adam.step")?.item() as u64;
        for (i, e) in store.entries().iter().enumerate() {
            s.m[i] = find(&format!("adam.m.{}", e.name))?;
            s.v[i] = find(&format!("adam.v.{}", e.name))?;
        }
        Ok(s)
    }
}

/// Scale `grads` down to `max_norm` if larger; returns the factor applied.
pub fn clip_global_norm(grads: &mut Gradients, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm.is_finite() {
        let f = max_norm / norm;
        grads.scale(f);
        f
    } else {
        1.0
    }
}

/// Multiply the learning rate by `factor` once the validation loss has not
/// improved by `threshold` for `patience` evaluations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlateauConfig {
    pub patience: usize,
    pub threshold: f64,
    pub factor: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        PlateauConfig { patience: 5, threshold: 1e-3, factor: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plateau {
    pub cfg: PlateauConfig,
    /// Lowest loss seen so far.
    pub best: Option<f64>,
    pub bad: usize,
    pub scale: f64,
}

impl Plateau {
    pub fn new(cfg: PlateauConfig) -> Plateau {
        Plateau { cfg, best: None, bad: 0, scale: 1.0 }
    }

    /// Record a validation loss; returns true when the rate was reduced.
    pub fn observe(&mut self, loss: f64) -> bool {
        if self.best.is_none_or(|b| loss < b - self.cfg.threshold) {
            self.best = Some(loss);
            self.bad = 0;
            return false;
        }
        self.bad += 1;
        if self.bad >= self.cfg.patience {
            self.scale *= self.cfg.factor;
            self.bad = 0;
            return true;
        }
        false
    }
}

/// Settings shared by every phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    #[serde(default)]
    pub clip_norm: Option<f64>,
    #[serde(default)]
    pub tbptt_window: Option<usize>,
    #[serde(default = "one")]
    pub label_stride: usize,
    #[serde(default)]
    pub plateau: PlateauConfig,
}

fn one() -> usize {
    1
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.label_stride == 0 || self.tbptt_window == Some(0) {
            return Err(Error::Config("batch_size, label_stride and tbptt_window must be at least 1".into()));
        }
        Ok(())
    }
}

/// Which parameter groups a phase updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Trainable {
    #[default]
    All,
    BandwidthOnly,
    NetworkOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseConfig {
    pub loss: LossKind,
    pub lr_net: f64,
    pub lr_bandwidth: f64,
    pub epochs: usize,
    #[serde(default)]
    pub trainable: Trainable,
}

/// One epoch's summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub phase: usize,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_nll: Option<f64>,
    pub val_rmse: Option<f64>,
    pub lr_net: f64,
    pub lr_bandwidth: f64,
    pub grad_norm_mean: f64,
    pub grad_norm_max: f64,
    /// Pre-clipping global gradient norm of every optimizer step.
    pub grad_norms: Vec<f64>,
    pub skipped_steps: usize,
}

/// Loss and parameter gradient of one trajectory.
fn trajectory_gradient<S: FilterSystem>(
    sys: &S,
    store: &ParamStore,
    traj: &Trajectory,
    kind: LossKind,
    cfg: &TrainConfig,
    mut rng: RngStream,
) -> Result<Option<(f64, Gradients)>> {
    let g = Graph::new();
    let Some(loss) = trajectory_loss(sys, &g, store, traj, kind, cfg.label_stride, cfg.tbptt_window, &mut rng)? else {
        return Ok(None);
    };
    g.backward(loss)?;
    Ok(Some((loss.item(), g.gradients(store))))
}

/// One pass over `data` in a shuffled order. Trajectory `i` of epoch `e`
/// draws from `rng.split(e).split(i)` whatever its batch.
#[allow(clippy::too_many_arguments)]
pub fn train_epoch<S: FilterSystem>(
    sys: &S,
    store: &mut ParamStore,
    adam: &mut AdamState,
    cfg: &TrainConfig,
    kind: LossKind,
    lr: LearningRates,
    data: &[Trajectory],
    epoch: usize,
    rng: &RngStream,
    exec: Exec,
) -> Result<EpochRecord> {
    let erng = rng.split(epoch as u64);
    let mut order: Vec<usize> = (0..data.len()).collect();
    erng.split(u64::MAX).shuffle(&mut order);
    let mut losses = Vec::new();
    let mut norms = Vec::new();
    let mut skipped = 0;
    for batch in order.chunks(cfg.batch_size) {
        let frozen: &ParamStore = store;
        let results = exec.map(batch, |&i| trajectory_gradient(sys, frozen, &data[i], kind, cfg, erng.split(i as u64)));
        let mut total = Gradients::zeros_like(store);
        let mut count = 0usize;
        for r in results {
            if let Some((l, g)) = r? {
                losses.push(l);
                total.accumulate(&g);
                count += 1;
            }
        }
        if count == 0 {
            continue;
        }
        total.scale(1.0 / count as f64);
        norms.push(total.global_norm());
        if let Some(c) = cfg.clip_norm {
            clip_global_norm(&mut total, c);
        }
        if !adam.step(store, &total, lr) {
            skipped += 1;
        }
    }
    let finite: Vec<f64> = norms.iter().copied().filter(|v| v.is_finite()).collect();
    Ok(EpochRecord {
        phase: 0,
        epoch,
        train_loss: losses.iter().sum::<f64>() / losses.len().max(1) as f64,
        val_nll: None,
        val_rmse: None,
        lr_net: lr.network,
        lr_bandwidth: lr.bandwidth,
        grad_norm_mean: finite.iter().sum::<f64>() / finite.len().max(1) as f64,
        grad_norm_max: finite.iter().cloned().fold(0.0, f64::max),
        grad_norms: norms,
        skipped_steps: skipped,
    })
}

fn set_phase_trainable(store: &mut ParamStore, t: Trainable, fixed: &[ParamId]) {
    let (net, bw) = match t {
        Trainable::All => (true, true),
        Trainable::BandwidthOnly => (false, true),
        Trainable::NetworkOnly => (true, false),
    };
    store.set_group_trainable(ParamGroup::Network, net);
    store.set_group_trainable(ParamGroup::Bandwidth, bw);
    for &id in fixed {
        store.set_trainable(id, false);
    }
}

/// Resumable position inside [`fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct FitState {
    pub phase: usize,
    /// Next epoch to run within `phase`.
    pub epoch: usize,
    pub adam: AdamState,
    pub plateau: Plateau,
}

impl FitState {
    pub fn start(store: &ParamStore, cfg: &TrainConfig) -> FitState {
        FitState { phase: 0, epoch: 0, adam: AdamState::new(store), plateau: Plateau::new(cfg.plateau.clone()) }
    }
}

/// Everything [`fit`] needs besides the model.
pub struct FitInputs<'a> {
    pub train: &'a [Trajectory],
    pub val: &'a [Trajectory],
    pub cfg: &'a TrainConfig,
    pub phases: &'a [PhaseConfig],
    /// Parameters that stay frozen in every phase.
    pub fixed: &'a [ParamId],
    pub rng: &'a RngStream,
    pub exec: Exec,
}

/// Validation score used by the plateau rule for a phase's loss.
fn validation_loss(kind: LossKind, report: &EvalReport) -> f64 {
    match kind {
        LossKind::Nll => report.mean_nll(),
        LossKind::Mse => report.pooled_rmse().combined.powi(2),
    }
}

/// Run the phases in order from `state`. Each phase starts a fresh Adam
/// state and plateau schedule. `on_epoch` sees every record and the state
/// to resume from after it; returning an error aborts training.
pub fn fit<S: FilterSystem>(
    sys: &S,
    store: &mut ParamStore,
    inputs: &FitInputs<'_>,
    mut state: FitState,
    mut on_epoch: impl FnMut(&EpochRecord, &ParamStore, &FitState) -> Result<()>,
) -> Result<FitState> {
    inputs.cfg.validate()?;
    while state.phase < inputs.phases.len() {
        let p = &inputs.phases[state.phase];
        set_phase_trainable(store, p.trainable, inputs.fixed);
        let prng = inputs.rng.split(state.phase as u64);
        while state.epoch < p.epochs {
            let lr = LearningRates { network: p.lr_net, bandwidth: p.lr_bandwidth }.scaled(state.plateau.scale);
            let mut rec = train_epoch(sys, store, &mut state.adam, inputs.cfg, p.loss, lr, inputs.train, state.epoch, &prng, inputs.exec)?;
            rec.phase = state.phase;
            if !rec.train_loss.is_finite() || !store.all_finite() {
                return Err(Error::NonFinite(format!(
                    "phase {} epoch {}: train loss {}, last grad norm {:?}, lr {:?}",
                    state.phase,
                    state.epoch,
                    rec.train_loss,
                    rec.grad_norms.last(),
                    lr
                )));
            }
            if !inputs.val.is_empty() {
                let report = evaluate(sys, store, inputs.val, &prng.split(u64::MAX - 1), inputs.exec, false)?;
                rec.val_nll = Some(report.mean_nll());
                rec.val_rmse = Some(report.pooled_rmse().combined);
                state.plateau.observe(validation_loss(p.loss, &report));
            }
            state.epoch += 1;
            on_epoch(&rec, store, &state)?;
        }
        state.phase += 1;
        state.epoch = 0;
        state.adam = AdamState::new(store);
        state.plateau = Plateau::new(inputs.cfg.plateau.clone());
    }
    set_phase_trainable(store, Trainable::All, inputs.fixed);
    Ok(state)
}

/// Measurement-model pre-training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub n_particles: usize,
    /// Fixed KDE bandwidth; also the spread of the particle cloud.
    pub bandwidth: Vec<f64>,
}

/// Train a measurement model on labeled states alone: scatter particles
/// around a true state, weigh them against its observation, and minimize the
/// NLL of the true state under the weighted KDE. Returns the loss trace.
#[allow(clippy::too_many_arguments)]
pub fn pretrain_measurement(
    meas: &MeasurementModel,
    families: &[KernelFamily],
    store: &mut ParamStore,
    data: &[Trajectory],
    cfg: &PretrainConfig,
    rng: &RngStream,
    exec: Exec,
) -> Result<Vec<f64>> {
    let pairs: Vec<(usize, usize)> = data.iter().enumerate().flat_map(|(i, t)| t.labels.iter().map(move |&s| (i, s))).collect();
    if pairs.is_empty() {
        return Err(Error::NoLabels);
    }
    let owned = meas.params();
    let saved: Vec<bool> = store.entries().iter().map(|e| e.trainable).collect();
    for id in store.ids().collect::<Vec<_>>() {
        store.set_trainable(id, owned.contains(&id));
    }
    let mut adam = AdamState::new(store);
    let lr = LearningRates { network: cfg.lr, bandwidth: 0.0 };
    let mut trace = Vec::with_capacity(cfg.steps);
    let mut result = Ok(());
    for step in 0..cfg.steps {
        let srng = rng.split(step as u64);
        let mut pick = srng.split(u64::MAX);
        let batch: Vec<(usize, usize)> = (0..cfg.batch_size).map(|_| pairs[pick.below(pairs.len())]).collect();
        let frozen: &ParamStore = store;
        let results = exec.map_range(batch.len(), |b| -> Result<(f64, Gradients)> {
            let (i, t) = batch[b];
            let mut r = srng.split(b as u64);
            let g = Graph::new();
            let state = &data[i].states[t];
            let ps = init_particles(&g, state, families, &cfg.bandwidth, cfg.n_particles, &mut r)?;
            let lw = normalize(meas.score(&g, frozen, ps.particles, &data[i].observations[t])?)?;
            let mix = MixtureDensity::new(ps.particles, lw, families.to_vec(), g.constant(Tensor::vector(cfg.bandwidth.clone())))?;
            let loss = mix.log_density_at(state)?.neg();
            g.backward(loss)?;
            Ok((loss.item(), g.gradients(frozen)))
        });
        let mut total = Gradients::zeros_like(store);
        let mut loss = 0.0;
        for r in results {
            match r {
                Ok((l, g)) => {
                    loss += l;
                    total.accumulate(&g);
                }
                Err(e) => {
                    result = Err(e);
                    break;
                }
            }
        }
        if result.is_err() {
            break;
        }
        total.scale(1.0 / batch.len() as f64);
        adam.step(store, &total, lr);
        trace.push(loss / batch.len() as f64);
    }
    for (id, t) in store.ids().collect::<Vec<_>>().into_iter().zip(saved) {
        store.set_trainable(id, t);
    }
    result.map(|_| trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Constraint;

    #[test]
    fn nll_reference_points() {
        let g = Graph::new();
        let mix = |bw: f64| {
            MixtureDensity::new(g.constant(Tensor::matrix(1, 1, vec![0.3])), g.vector(vec![0.0]), vec![KernelFamily::Gaussian], g.vector(vec![bw]))
                .unwrap()
        };
        let x = [0.3];
        let l1 = nll_loss(&[mix(1.0)], &[(0, &x)]).unwrap().item();
        assert!((l1 - 0.918_938_533_204_672_7).abs() < 1e-12);
        let l2 = nll_loss(&[mix(2.0)], &[(0, &x)]).unwrap().item();
        assert!((l2 - l1 - 2f64.ln()).abs() < 1e-12);
        assert!(matches!(nll_loss(&[mix(1.0)], &[]), Err(Error::NoLabels)));
    }

    #[test]
    fn adam_first_step_and_zero_gradient() {
        let mut store = ParamStore::new();
        let id = store.add("p", Tensor::vector(vec![1.0, -2.0]), ParamGroup::Network, Constraint::None);
        let mut adam = AdamState::new(&store);
        let mut g = Gradients::zeros_like(&store);
        g.get_mut(id).data_mut().copy_from_slice(&[5.0, -3.0]);
        assert!(adam.step(&mut store, &g, LearningRates { network: 0.01, bandwidth: 0.0 }));
        let v = store.value(id).data();
        assert!((v[0] - 0.99).abs() < 1e-9 && (v[1] + 1.99).abs() < 1e-9);

        let mut store2 = ParamStore::new();
        let id2 = store2.add("p", Tensor::vector(vec![1.0]), ParamGroup::Network, Constraint::None);
        let mut adam2 = AdamState::new(&store2);
        let zero = Gradients::zeros_like(&store2);
        adam2.step(&mut store2, &zero, LearningRates { network: 0.1, bandwidth: 0.1 });
        assert_eq!(store2.value(id2).data(), &[1.0]);
    }

    #[test]
    fn adam_skips_non_finite() {
        let mut store = ParamStore::new();
        let id = store.add("p", Tensor::vector(vec![1.0]), ParamGroup::Network, Constraint::None);
        let mut adam = AdamState::new(&store);
        let mut g = Gradients::zeros_like(&store);
        g.get_mut(id).data_mut()[0] = f64::NAN;
        assert!(!adam.step(&mut store, &g, LearningRates { network: 0.1, bandwidth: 0.1 }));
        assert_eq!(store.value(id).data(), &[1.0]);
        assert_eq!(adam.step, 0);
    }

    #[test]
    fn adam_quadratic_bowl() {
        let mut store = ParamStore::new();
        let id = store.add("p", Tensor::vector(vec![3.0, -1.0]), ParamGroup::Network, Constraint::None);
        let target = [0.5, 0.25];
        let mut adam = AdamState::new(&store);
        let lr = 0.05;
        for _ in 0..200 {
            let mut g = Gradients::zeros_like(&store);
            let p = store.value(id).data().to_vec();
            for k in 0..2 {
                g.get_mut(id).data_mut()[k] = 2.0 * (p[k] - target[k]);
            }
            adam.step(&mut store, &g, LearningRates { network: lr, bandwidth: 0.0 });
        }
        for (p, t) in store.value(id).data().iter().zip(target) {
            assert!((p - t).abs() < 1e-3, "{p} vs {t}");
        }
    }

    #[test]
    fn clipping_factors() {
        let mut store = ParamStore::new();
        let id = store.add("p", Tensor::vector(vec![0.0, 0.0]), ParamGroup::Network, Constraint::None);
        let mut g = Gradients::zeros_like(&store);
        g.get_mut(id).data_mut().copy_from_slice(&[30.0, 40.0]);
        assert_eq!(clip_global_norm(&mut g, 100.0), 1.0);
        g.get_mut(id).data_mut().copy_from_slice(&[120.0, 160.0]);
        assert!((clip_global_norm(&mut g, 100.0) - 0.5).abs() < 1e-15);
        assert!((g.global_norm() - 100.0).abs() < 1e-12);
    }

    #[test]
    fn plateau_reduces_after_patience() {
        let mut p = Plateau::new(PlateauConfig::default());
        assert!(!p.observe(1.0));
        for _ in 0..4 {
            assert!(!p.observe(0.9995));
        }
        assert!(p.observe(1.0));
        assert!((p.scale - 0.1).abs() < 1e-15);
        assert!(!p.observe(0.5));
    }
}
