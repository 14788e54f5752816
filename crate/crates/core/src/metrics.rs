//! Evaluation metrics and estimator diagnostics.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamStore, Tensor};
use crate::error::Result;
use crate::exec::Exec;
use crate::filter::{FilterSystem, LearnedFilter, PosteriorDump};
use crate::kernels::{cdf_value, KernelFamily, Topology};
use crate::mixture::{MixtureDensity, ParticleSet};
use crate::models::normalize;
use crate::resample::{resample, ResamplerConfig};
use crate::rng::RngStream;
use crate::special::wrap_angle;
use crate::tasks::Trajectory;
use crate::training::{trajectory_loss, LossKind};

/// Mean of `−log m(x_t)` over the labeled steps. `posteriors[t]` is the
/// posterior at step `t`.
pub fn eval_nll(posteriors: &[MixtureDensity<'_>], states: &[Vec<f64>], labels: &[usize]) -> f64 {
    let total: f64 = labels.iter().map(|&t| -posteriors[t].log_density_value(&states[t])).sum();
    total / labels.len() as f64
}

/// Root-mean-square errors over labeled steps.
///
/// `position` pools the linear dimensions (Euclidean), `angle` the circular
/// ones (wrapped differences), `combined` all dimensions with equal weight:
/// `combined² = position² + angle²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmseReport {
    pub position: f64,
    pub angle: f64,
    pub combined: f64,
}

/// Squared error split into (linear, circular) parts.
pub fn squared_error(pred: &[f64], truth: &[f64], topology: &[Topology]) -> (f64, f64) {
    let mut lin = 0.0;
    let mut circ = 0.0;
    for ((p, t), topo) in pred.iter().zip(truth).zip(topology) {
        match topo {
            Topology::Linear => lin += (p - t).powi(2),
            Topology::Circular => circ += wrap_angle(p - t).powi(2),
        }
    }
    (lin, circ)
}

/// Sums of squared errors and the number of labeled steps behind them.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SquaredErrors {
    pub linear: f64,
    pub circular: f64,
    pub count: usize,
}

impl SquaredErrors {
    pub fn add(&mut self, other: &SquaredErrors) {
        self.linear += other.linear;
        self.circular += other.circular;
        self.count += other.count;
    }

    pub fn rmse(&self) -> RmseReport {
        let n = self.count.max(1) as f64;
        RmseReport {
            position: (self.linear / n).sqrt(),
            angle: (self.circular / n).sqrt(),
            combined: ((self.linear + self.circular) / n).sqrt(),
        }
    }
}

pub fn squared_errors(means: &[Vec<f64>], states: &[Vec<f64>], labels: &[usize], topology: &[Topology]) -> SquaredErrors {
    let mut s = SquaredErrors { count: labels.len(), ..Default::default() };
    for &t in labels {
        let (l, c) = squared_error(&means[t], &states[t], topology);
        s.linear += l;
        s.circular += c;
    }
    s
}

pub fn eval_rmse(means: &[Vec<f64>], states: &[Vec<f64>], labels: &[usize], topology: &[Topology]) -> RmseReport {
    squared_errors(means, states, labels, topology).rmse()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMetrics {
    pub nll: f64,
    pub rmse: RmseReport,
    pub errors: SquaredErrors,
}

#[derive(Debug, Clone, Default)]
pub struct EvalReport {
    pub per_trajectory: Vec<TrajectoryMetrics>,
    pub dumps: Vec<PosteriorDump>,
}

impl EvalReport {
    pub fn mean_nll(&self) -> f64 {
        self.per_trajectory.iter().map(|m| m.nll).sum::<f64>() / self.per_trajectory.len().max(1) as f64
    }

    /// RMSE pooled over every labeled step of every trajectory.
    pub fn pooled_rmse(&self) -> RmseReport {
        let mut s = SquaredErrors::default();
        for m in &self.per_trajectory {
            s.add(&m.errors);
        }
        s.rmse()
    }
}

/// Filter every trajectory without gradients and score it at its labels.
/// Trajectory `i` draws from `rng.split(i)`.
pub fn evaluate<S: FilterSystem>(
    sys: &S,
    store: &ParamStore,
    data: &[Trajectory],
    rng: &RngStream,
    exec: Exec,
    dumps: bool,
) -> Result<EvalReport> {
    let topo = sys.topology();
    let results = exec.map_range(data.len(), |i| -> Result<(TrajectoryMetrics, Vec<PosteriorDump>)> {
        let traj = &data[i];
        let g = Graph::inference();
        let mut r = rng.split(i as u64);
        let out = sys.run(&g, store, traj, None, &mut r)?;
        let errors = squared_errors(&out.means, &traj.states, &traj.labels, &topo);
        let m = TrajectoryMetrics { nll: eval_nll(&out.posteriors, &traj.states, &traj.labels), rmse: errors.rmse(), errors };
        let d = if dumps {
            out.posteriors.iter().enumerate().map(|(t, p)| PosteriorDump::from_mixture(i, t, p, &traj.states[t])).collect()
        } else {
            Vec::new()
        };
        Ok((m, d))
    });
    let mut report = EvalReport::default();
    for r in results {
        let (m, d) = r?;
        report.per_trajectory.push(m);
        report.dumps.extend(d);
    }
    Ok(report)
}

/// Scalar parameter of a probe mixture to differentiate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeTarget {
    Center(usize),
    /// Unnormalized log-weight of one component.
    Logit(usize),
    Bandwidth,
}

/// Test function averaged over the resampled particles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeLoss {
    Linear,
    Quadratic,
    Tanh,
}

impl ProbeLoss {
    pub fn value(self, z: f64) -> f64 {
        match self {
            ProbeLoss::Linear => z,
            ProbeLoss::Quadratic => z * z,
            ProbeLoss::Tanh => z.tanh(),
        }
    }
}

/// A 1-D weighted particle set with a kernel bandwidth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSpec {
    pub centers: Vec<f64>,
    pub logits: Vec<f64>,
    pub bandwidth: f64,
    pub family: KernelFamily,
    /// Number of resampled particles per replicate.
    pub n_out: usize,
    pub target: ProbeTarget,
    pub loss: ProbeLoss,
}

impl ProbeSpec {
    fn perturbed(&self, h: f64) -> ProbeSpec {
        let mut s = self.clone();
        match self.target {
            ProbeTarget::Center(i) => s.centers[i] += h,
            ProbeTarget::Logit(i) => s.logits[i] += h,
            ProbeTarget::Bandwidth => s.bandwidth += h,
        }
        s
    }

    fn weights(&self) -> Vec<f64> {
        let m = self.logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = self.logits.iter().map(|l| (l - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect()
    }

    fn mixture_cdf(&self, z: f64) -> f64 {
        self.weights().iter().zip(&self.centers).map(|(w, c)| w * cdf_value(self.family, z - c, self.bandwidth)).sum()
    }

    /// Quantile of the kernel mixture by bisection.
    pub fn mixture_quantile(&self, u: f64) -> f64 {
        let lo0 = self.centers.iter().cloned().fold(f64::INFINITY, f64::min) - 40.0 * self.bandwidth;
        let hi0 = self.centers.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 40.0 * self.bandwidth;
        let (mut lo, mut hi) = (lo0, hi0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.mixture_cdf(mid) < u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// `E f(z)` under the weighted particles, exactly.
    pub fn particle_expectation(&self) -> f64 {
        self.weights().iter().zip(&self.centers).map(|(w, c)| w * self.loss.value(*c)).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub replicates: usize,
    pub mean: f64,
    pub variance: f64,
    pub std_err: f64,
    /// Finite-difference gradient of the expected test loss.
    pub reference: f64,
    pub reference_std_err: f64,
}

impl ProbeResult {
    /// `|mean − reference|` in combined standard errors.
    pub fn z_score(&self) -> f64 {
        let se = (self.std_err.powi(2) + self.reference_std_err.powi(2)).sqrt();
        (self.mean - self.reference).abs() / se.max(f64::MIN_POSITIVE)
    }
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = if xs.len() > 1 { xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (m, v)
}

const PROBE_FD_STEP: f64 = 1e-4;

/// Per-replicate gradients of `Σ_i w_i f(z_i)` over the resampled set, and a
/// finite-difference reference for the gradient of its expectation.
///
/// Mixture resamplers are referenced against the kernel mixture: each
/// replicate draws `n_out` uniforms and pushes them through the mixture
/// quantile at `θ ± h` (common random numbers). Discrete resamplers target
/// the weighted particles, whose expectation is computed exactly.
pub fn gradient_probe(cfg: &ResamplerConfig, spec: &ProbeSpec, replicates: usize, rng: &RngStream, exec: Exec) -> Result<ProbeResult> {
    let n = spec.centers.len();
    let grads = exec.map_range(replicates, |r| -> Result<f64> {
        let mut rng = rng.split(r as u64);
        let g = Graph::new();
        let centers = g.variable(Tensor::matrix(n, 1, spec.centers.clone()));
        let logits = g.variable(Tensor::vector(spec.logits.clone()));
        let bw = g.variable(Tensor::vector(vec![spec.bandwidth]));
        let lw = normalize(logits)?;
        let ps = ParticleSet::new(centers, lw, vec![spec.family.topology()])?;
        let mix = MixtureDensity::new(centers, lw, vec![spec.family], bw)?;
        let out = resample(cfg, &ps, &mix, spec.n_out, &mut rng)?;
        let z = out.set.particles.reshape(&[spec.n_out]);
        let f = match spec.loss {
            ProbeLoss::Linear => z,
            ProbeLoss::Quadratic => z.square(),
            ProbeLoss::Tanh => z.tanh(),
        };
        let loss = out.set.log_weights.exp().mul(f)?.sum();
        g.backward(loss)?;
        Ok(match spec.target {
            ProbeTarget::Center(i) => g.grad(centers).data()[i],
            ProbeTarget::Logit(i) => g.grad(logits).data()[i],
            ProbeTarget::Bandwidth => g.grad(bw).data()[0],
        })
    });
    let grads: Vec<f64> = grads.into_iter().collect::<Result<_>>()?;
    let (mean, variance) = mean_var(&grads);
    let (reference, reference_std_err) = if cfg.kind.uses_mixture() {
        mixture_fd_reference(spec, replicates, rng, exec)
    } else {
        let h = PROBE_FD_STEP;
        ((spec.perturbed(h).particle_expectation() - spec.perturbed(-h).particle_expectation()) / (2.0 * h), 0.0)
    };
    Ok(ProbeResult {
        replicates,
        mean,
        variance,
        std_err: (variance / replicates as f64).sqrt(),
        reference,
        reference_std_err,
    })
}

/// Common-random-number central difference of the mixture expectation.
/// Uses its own streams, so the reference does not depend on the estimator.
pub fn mixture_fd_reference(spec: &ProbeSpec, replicates: usize, rng: &RngStream, exec: Exec) -> (f64, f64) {
    let h = PROBE_FD_STEP;
    let (plus, minus) = (spec.perturbed(h), spec.perturbed(-h));
    let base = rng.split(u64::MAX);
    let fd = exec.map_range(replicates, |r| {
        let mut rng = base.split(r as u64);
        let mut acc = 0.0;
        for _ in 0..spec.n_out {
            let u = rng.uniform_open();
            acc += spec.loss.value(plus.mixture_quantile(u)) - spec.loss.value(minus.mixture_quantile(u));
        }
        acc / (2.0 * h * spec.n_out as f64)
    });
    let (m, v) = mean_var(&fd);
    (m, (v / replicates as f64).sqrt())
}

/// Least-squares slope of `ln t` against `ln n`.
pub fn loglog_slope(ns: &[f64], times: &[f64]) -> f64 {
    let x: Vec<f64> = ns.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = times.iter().map(|v| v.ln()).collect();
    let k = x.len() as f64;
    let mx = x.iter().sum::<f64>() / k;
    let my = y.iter().sum::<f64>() / k;
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub n: Vec<usize>,
    /// Median seconds per call.
    pub seconds: Vec<f64>,
    pub slope: f64,
}

/// Median wall time of `work(n)` over `reps` calls per `n`, after one warm-up
/// call, and the fitted log-log exponent.
pub fn runtime_scaling(ns: &[usize], reps: usize, mut work: impl FnMut(usize)) -> ScalingReport {
    let mut seconds = Vec::with_capacity(ns.len());
    for &n in ns {
        work(n);
        let mut t: Vec<f64> = (0..reps.max(1))
            .map(|_| {
                let start = Instant::now();
                work(n);
                start.elapsed().as_secs_f64()
            })
            .collect();
        t.sort_by(f64::total_cmp);
        seconds.push(t[t.len() / 2]);
    }
    let nf: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
    ScalingReport { n: ns.to_vec(), slope: loglog_slope(&nf, &seconds), seconds }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepMode {
    /// Filter, NLL at the labels, backward.
    TrainStep,
    /// Filter without a gradient tape.
    InferenceStep,
}

/// Time one filter run over `traj` per particle count, divided by its length.
pub fn filter_runtime_scaling(
    sys: &LearnedFilter,
    store: &ParamStore,
    traj: &Trajectory,
    ns: &[usize],
    mode: StepMode,
    reps: usize,
    seed: u64,
) -> ScalingReport {
    let steps = traj.len().max(1) as f64;
    let mut rep = runtime_scaling(ns, reps, |n| {
        let f = sys.with_particles(n);
        let mut rng = RngStream::new(seed);
        match mode {
            StepMode::TrainStep => {
                let g = Graph::new();
                if let Ok(Some(loss)) = trajectory_loss(&f, &g, store, traj, LossKind::Nll, 1, None, &mut rng) {
                    g.backward(loss).expect("scalar loss");
                }
            }
            StepMode::InferenceStep => {
                let g = Graph::inference();
                f.run(&g, store, traj, None, &mut rng).expect("inference run");
            }
        }
    });
    for s in &mut rep.seconds {
        *s /= steps;
    }
    rep
}

/// One row of the long-format results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub method: String,
    pub seed: u64,
    /// Trajectory index for per-trajectory metrics, empty for pooled ones.
    pub trajectory: Option<usize>,
    pub metric: String,
    pub value: f64,
}

pub fn write_csv(path: &Path, rows: &[CsvRow]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| crate::Error::Format(e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| crate::Error::Format(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
