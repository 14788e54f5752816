//! Resampling operators and their gradient estimators.
//!
//! Every resampler returns a new [`ParticleSet`] whose graph connections
//! define the gradient estimator:
//!
//! | kind          | forward                    | gradient path                                   |
//! |---------------|----------------------------|-------------------------------------------------|
//! | `tg_discrete` | categorical copies         | none                                            |
//! | `dis`         | categorical copies         | weights `w_j / sg(w_j)`, locations via gather   |
//! | `sr`          | copies from mixed weights  | weights `w_j / ((1-λ)w_j + λ/N)`                |
//! | `concrete`    | Gumbel-softmax averages    | fully relaxed                                   |
//! | `ot`          | entropic transport map     | through the unrolled Sinkhorn iterations        |
//! | `tg_mixture`  | kernel-density draws       | none                                            |
//! | `irg`         | kernel-density draws       | implicit differentiation of conditional CDFs    |
//! | `iwsg`        | kernel-density draws       | weights `m(z) / sg(m(z))`, locations detached   |
//!
//! `sg` is stop-gradient: the ratio is exactly one in the forward pass but
//! carries the derivative of its numerator.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::kernels::{self, Topology};
use crate::mixture::{MixtureDensity, ParticleSet};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResamplerKind {
    TgDiscrete,
    Dis,
    Sr,
    Concrete,
    Ot,
    TgMixture,
    Irg,
    Iwsg,
}

impl ResamplerKind {
    /// Whether the operator draws from the kernel density rather than the
    /// discrete particle set.
    pub fn uses_mixture(self) -> bool {
        matches!(self, ResamplerKind::TgMixture | ResamplerKind::Irg | ResamplerKind::Iwsg)
    }

    pub fn name(self) -> &'static str {
        match self {
            ResamplerKind::TgDiscrete => "tg_discrete",
            ResamplerKind::Dis => "dis",
            ResamplerKind::Sr => "sr",
            ResamplerKind::Concrete => "concrete",
            ResamplerKind::Ot => "ot",
            ResamplerKind::TgMixture => "tg_mixture",
            ResamplerKind::Irg => "irg",
            ResamplerKind::Iwsg => "iwsg",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResamplerConfig {
    pub kind: ResamplerKind,
    pub sr_lambda: f64,
    pub concrete_temperature: f64,
    pub ot_epsilon: f64,
    pub ot_scaling: f64,
    pub ot_threshold: f64,
    pub ot_max_iters: usize,
    /// Resample only when ESS/N falls below this fraction. `None` resamples
    /// every step.
    pub ess_fraction: Option<f64>,
}

impl Default for ResamplerConfig {
    fn default() -> Self {
        ResamplerConfig {
            kind: ResamplerKind::Iwsg,
            sr_lambda: 0.1,
            concrete_temperature: 0.5,
            ot_epsilon: 0.5,
            ot_scaling: 0.9,
            ot_threshold: 1e-3,
            ot_max_iters: 500,
            ess_fraction: None,
        }
    }
}

impl ResamplerConfig {
    pub fn of(kind: ResamplerKind) -> Self {
        ResamplerConfig { kind, ..ResamplerConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.sr_lambda) {
            return Err(Error::Config(format!("sr_lambda {} outside [0, 1]", self.sr_lambda)));
        }
        if !(self.concrete_temperature > 0.0) {
            return Err(Error::Config("concrete_temperature must be positive".into()));
        }
        if !(self.ot_epsilon > 0.0) {
            return Err(Error::Config("ot_epsilon must be positive".into()));
        }
        if !(self.ot_scaling > 0.0 && self.ot_scaling < 1.0) {
            return Err(Error::Config("ot_scaling must lie in (0, 1)".into()));
        }
        if let Some(f) = self.ess_fraction {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::Config("ess_fraction must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }
}

/// Output of one resampling call.
pub struct Resampled<'g> {
    pub set: ParticleSet<'g>,
    /// Ancestor of each output, for the discrete and mixture samplers.
    pub ancestors: Option<Vec<usize>>,
    /// False only when Sinkhorn hit its iteration cap.
    pub converged: bool,
    /// False when the ESS rule skipped resampling.
    pub resampled: bool,
}

impl<'g> Resampled<'g> {
    fn new(set: ParticleSet<'g>, ancestors: Option<Vec<usize>>) -> Self {
        Resampled { set, ancestors, converged: true, resampled: true }
    }
}

/// Resample `ps` (discrete kinds) or `mix` (mixture kinds) into `n` particles.
pub fn resample<'g>(
    cfg: &ResamplerConfig,
    ps: &ParticleSet<'g>,
    mix: &MixtureDensity<'g>,
    n: usize,
    rng: &mut RngStream,
) -> Result<Resampled<'g>> {
    if let Some(frac) = cfg.ess_fraction {
        if ps.ess() >= frac * ps.len() as f64 {
            return Ok(Resampled { set: ps.clone(), ancestors: None, converged: true, resampled: false });
        }
    }
    match cfg.kind {
        ResamplerKind::TgDiscrete => tg_discrete(ps, rng),
        ResamplerKind::Dis => dis(ps, rng),
        ResamplerKind::Sr => soft(ps, cfg.sr_lambda, rng),
        ResamplerKind::Concrete => concrete(ps, cfg.concrete_temperature, rng),
        ResamplerKind::Ot => optimal_transport(ps, cfg),
        ResamplerKind::TgMixture => tg_mixture(mix, n, rng),
        ResamplerKind::Irg => irg(mix, n, rng),
        ResamplerKind::Iwsg => iwsg(mix, n, rng),
    }
}

fn uniform_log_weights(g: &Graph, n: usize) -> Var<'_> {
    g.constant(Tensor::full(&[n], -(n as f64).ln()))
}

fn normalize_log<'g>(lw: Var<'g>) -> Result<Var<'g>> {
    let n = lw.shape()[0];
    Ok(lw.sub(lw.reshape(&[1, n]).logsumexp(1)?.reshape(&[]))?)
}

fn sampling_weights(ps: &ParticleSet<'_>) -> Vec<f64> {
    ps.sampling_log_weights().value().data().iter().map(|l| l.exp()).collect()
}

/// Categorical copies with every gradient cut.
pub fn tg_discrete<'g>(ps: &ParticleSet<'g>, rng: &mut RngStream) -> Result<Resampled<'g>> {
    let n = ps.len();
    let anc = kernels::categorical_samples(&sampling_weights(ps), n, rng)?;
    let x = ps.particles.index_select(0, &anc)?.stop_gradient();
    let g = ps.graph();
    let set = ParticleSet::new(x, uniform_log_weights(g, n), ps.topology.clone())?;
    Ok(Resampled::new(set, Some(anc)))
}

/// Categorical copies whose weights carry `∇w_j / w_j`. The weights are not
/// renormalized: that leaves the forward value alone but shrinks the expected
/// gradient by `(N-1)/N`.
pub fn dis<'g>(ps: &ParticleSet<'g>, rng: &mut RngStream) -> Result<Resampled<'g>> {
    let n = ps.len();
    let anc = kernels::categorical_samples(&sampling_weights(ps), n, rng)?;
    let x = ps.particles.index_select(0, &anc)?;
    let lw = ps.sampling_log_weights().index_select(0, &anc)?;
    let ratio = lw.sub(lw.stop_gradient())?.add_scalar(-(n as f64).ln());
    let set = ParticleSet::new(x, ratio, ps.topology.clone())?;
    Ok(Resampled::new(set, Some(anc)))
}

/// Ancestors from `(1-λ)w + λ/N`, weights `w_j / ((1-λ)w_j + λ/N)`.
pub fn soft<'g>(ps: &ParticleSet<'g>, lambda: f64, rng: &mut RngStream) -> Result<Resampled<'g>> {
    let n = ps.len();
    let w = sampling_weights(ps);
    let mixed: Vec<f64> = w.iter().map(|&wi| (1.0 - lambda) * wi + lambda / n as f64).collect();
    let anc = kernels::categorical_samples(&mixed, n, rng)?;
    let x = ps.particles.index_select(0, &anc)?;
    let lw = ps.sampling_log_weights().index_select(0, &anc)?;
    let denom = lw.exp().mul_scalar(1.0 - lambda).add_scalar(lambda / n as f64).log()?;
    let set = ParticleSet::new(x, normalize_log(lw.sub(denom)?)?, ps.topology.clone())?;
    Ok(Resampled::new(set, Some(anc)))
}

/// Rows of `coupling` (`[N, N]`, rows summing to one) applied to the
/// particles; circular dimensions average unit vectors.
fn barycentric<'g>(coupling: Var<'g>, ps: &ParticleSet<'g>) -> Result<Var<'g>> {
    let mut cols = Vec::with_capacity(ps.dims());
    for (d, topo) in ps.topology.iter().enumerate() {
        let x = ps.particles.index_select(1, &[d])?;
        cols.push(match topo {
            Topology::Linear => coupling.matmul(x)?,
            Topology::Circular => {
                let s = coupling.matmul(x.sin())?;
                let c = coupling.matmul(x.cos())?;
                s.atan2(c)?
            }
        });
    }
    Ok(Var::concat(&cols, 1)?)
}

/// Gumbel-softmax relaxation: each output is a convex combination of the
/// inputs with coefficients `softmax((log w + G)/λ)`.
pub fn concrete<'g>(ps: &ParticleSet<'g>, temperature: f64, rng: &mut RngStream) -> Result<Resampled<'g>> {
    let n = ps.len();
    let g = ps.graph();
    let gumbel: Vec<f64> = (0..n * n).map(|_| kernels::gumbel_sample(rng)).collect();
    let lw = ps.sampling_log_weights().clamp(1e-30f64.ln(), f64::INFINITY).reshape(&[1, n]);
    let logits = lw.add(g.constant(Tensor::matrix(n, n, gumbel)))?.mul_scalar(1.0 / temperature);
    let alpha = logits.softmax(1)?;
    let x = barycentric(alpha, ps)?;
    let set = ParticleSet::new(x, uniform_log_weights(g, n), ps.topology.clone())?;
    Ok(Resampled::new(set, None))
}

/// Diagnostics from a Sinkhorn solve.
#[derive(Debug, Clone, Copy)]
pub struct SinkhornReport {
    pub iterations: usize,
    /// L1 error of the column marginals at return.
    pub residual: f64,
    pub converged: bool,
}

const UNROLLED: usize = 10;

fn lse(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Log-domain Sinkhorn between row marginals `1/N` and column marginals
/// `w = exp(log_w)`, with ε-scaling from the largest cost down to
/// `epsilon`. The final iterations are replayed on the graph so the coupling
/// is differentiable in `cost` and `log_w`.
#[allow(clippy::too_many_arguments)]
pub fn sinkhorn<'g>(
    cost: Var<'g>,
    log_w: Var<'g>,
    epsilon: f64,
    scaling: f64,
    threshold: f64,
    max_iters: usize,
) -> Result<(Var<'g>, SinkhornReport)> {
    let n = log_w.shape()[0];
    if cost.shape() != [n, n] {
        return Err(Error::Config(format!("cost {:?} is not {n}x{n}", cost.shape())));
    }
    let c = cost.value();
    let lb = log_w.value();
    let la = -(n as f64).ln();
    let cmax = c.data().iter().cloned().fold(0.0, f64::max);
    let mut eps = cmax.max(epsilon);
    let mut f = vec![0.0; n];
    let mut gpot = vec![0.0; n];
    let update = |f: &mut [f64], gpot: &mut [f64], eps: f64| {
        for j in 0..n {
            gpot[j] = -eps * lse((0..n).map(|i| (f[i] - c.at2(i, j)) / eps + la));
        }
        for i in 0..n {
            f[i] = -eps * lse((0..n).map(|j| (gpot[j] - c.at2(i, j)) / eps + lb.data()[j]));
        }
    };
    let residual = |f: &[f64], gpot: &[f64]| -> f64 {
        (0..n)
            .map(|j| {
                let col: f64 = (0..n).map(|i| ((f[i] + gpot[j] - c.at2(i, j)) / epsilon + la + lb.data()[j]).exp()).sum();
                (col - lb.data()[j].exp()).abs()
            })
            .sum()
    };
    // Warm start, leaving the last updates to the graph.
    let budget = max_iters.saturating_sub(UNROLLED);
    let mut iters = 0;
    while iters < budget {
        update(&mut f, &mut gpot, eps);
        iters += 1;
        if eps > epsilon {
            eps = (eps * scaling).max(epsilon);
        } else if residual(&f, &gpot) < threshold {
            break;
        }
    }
    let g = cost.graph();
    let fv = g.constant(Tensor::matrix(n, 1, f));
    let mut fnode = fv;
    let mut gnode = g.constant(Tensor::matrix(1, n, gpot));
    let lbn = log_w.reshape(&[1, n]);
    let inv = 1.0 / epsilon;
    let unrolled = UNROLLED.min(max_iters - iters).max(1);
    for _ in 0..unrolled {
        gnode = fnode.sub(cost)?.mul_scalar(inv).add_scalar(la).logsumexp(0)?.mul_scalar(-epsilon).reshape(&[1, n]);
        fnode = gnode.sub(cost)?.mul_scalar(inv).add(lbn)?.logsumexp(1)?.mul_scalar(-epsilon).reshape(&[n, 1]);
        iters += 1;
    }
    let log_plan = fnode.add(gnode)?.sub(cost)?.mul_scalar(inv).add_scalar(la).add(lbn)?;
    let plan = log_plan.exp();
    let pv = plan.value();
    let res: f64 = (0..n).map(|j| ((0..n).map(|i| pv.at2(i, j)).sum::<f64>() - lb.data()[j].exp()).abs()).sum();
    let report = SinkhornReport { iterations: iters, residual: res, converged: res < threshold };
    Ok((plan, report))
}

/// Pairwise squared distances; circular dimensions use the chordal form
/// `|e^{iθ} - e^{iφ}|² = 2 - 2cos(θ - φ)`.
pub fn transport_cost<'g>(ps: &ParticleSet<'g>) -> Result<Var<'g>> {
    let n = ps.len();
    let mut acc: Option<Var<'g>> = None;
    for (d, topo) in ps.topology.iter().enumerate() {
        let x = ps.particles.index_select(1, &[d])?;
        let diff = x.sub(x.reshape(&[1, n]))?;
        let term = match topo {
            Topology::Linear => diff.square(),
            Topology::Circular => diff.cos().mul_scalar(-2.0).add_scalar(2.0),
        };
        acc = Some(match acc {
            None => term,
            Some(a) => a.add(term)?,
        });
    }
    Ok(acc.expect("at least one dimension"))
}

/// Deterministic transport of the weighted set onto `N` equally weighted
/// points, `x̂_i = Σ_j N α_ij x_j`.
pub fn optimal_transport<'g>(ps: &ParticleSet<'g>, cfg: &ResamplerConfig) -> Result<Resampled<'g>> {
    let n = ps.len();
    let cost = transport_cost(ps)?;
    let (plan, report) =
        sinkhorn(cost, ps.sampling_log_weights(), cfg.ot_epsilon, cfg.ot_scaling, cfg.ot_threshold, cfg.ot_max_iters)?;
    let x = barycentric(plan.mul_scalar(n as f64), ps)?;
    let set = ParticleSet::new(x, uniform_log_weights(ps.graph(), n), ps.topology.clone())?;
    Ok(Resampled { set, ancestors: None, converged: report.converged, resampled: true })
}

/// Kernel-density draws with every gradient cut.
pub fn tg_mixture<'g>(mix: &MixtureDensity<'g>, n: usize, rng: &mut RngStream) -> Result<Resampled<'g>> {
    let (z, anc) = mix.sample(n, rng)?;
    let g = mix.graph();
    let set = ParticleSet::new(g.constant(z), uniform_log_weights(g, n), mix.topology())?;
    Ok(Resampled::new(set, Some(anc)))
}

/// Kernel-density draws at fixed locations whose weights
/// `m(z_i) / sg(m(z_i)) / n` carry the density's gradient.
pub fn iwsg<'g>(mix: &MixtureDensity<'g>, n: usize, rng: &mut RngStream) -> Result<Resampled<'g>> {
    let (z, anc) = mix.sample(n, rng)?;
    let g = mix.graph();
    let z = g.constant(z);
    let lw = if g.grad_enabled() {
        let lm = mix.log_density(z)?;
        lm.sub(lm.stop_gradient())?.add_scalar(-(n as f64).ln())
    } else {
        uniform_log_weights(g, n)
    };
    let set = ParticleSet::new(z, lw, mix.topology())?;
    Ok(Resampled::new(set, Some(anc)))
}

/// Kernel-density draws whose locations move with the mixture parameters
/// through implicit differentiation of the standardization `S(z) = u`,
/// where `S` stacks the per-dimension conditional CDFs. Solving the
/// triangular system one dimension at a time gives
/// `z_d = z_d⁰ − (S_d − sg(S_d)) / sg(∂S_d/∂z_d)` with earlier `z` live.
pub fn irg<'g>(mix: &MixtureDensity<'g>, n: usize, rng: &mut RngStream) -> Result<Resampled<'g>> {
    if let Some(f) = mix.families.iter().find(|f| !f.has_continuous_density()) {
        return Err(Error::UnsupportedKernel(f.name()));
    }
    let (z0, anc) = mix.sample(n, rng)?;
    let g = mix.graph();
    if !g.grad_enabled() {
        let set = ParticleSet::new(g.constant(z0), uniform_log_weights(g, n), mix.topology())?;
        return Ok(Resampled::new(set, Some(anc)));
    }
    let dims = mix.dims();
    let mut cols: Vec<Var<'g>> = Vec::with_capacity(dims);
    for d in 0..dims {
        let fixed = g.constant(Tensor::matrix(n, 1, z0.column(d)));
        let mut parts = cols.clone();
        parts.push(fixed);
        for k in d + 1..dims {
            parts.push(g.constant(Tensor::matrix(n, 1, z0.column(k))));
        }
        let x = Var::concat(&parts, 1)?;
        let s = mix.conditional_cdf(x, d)?;
        let slope: Vec<f64> = mix.conditional_density_values(&z0, d).into_iter().map(|p| p.max(1e-300)).collect();
        let step = s.sub(s.stop_gradient())?.div(g.constant(Tensor::vector(slope)))?;
        cols.push(fixed.sub(step.reshape(&[n, 1]))?);
    }
    let z = Var::concat(&cols, 1)?;
    let set = ParticleSet::new(z, uniform_log_weights(g, n), mix.topology())?;
    Ok(Resampled::new(set, Some(anc)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelFamily;

    fn set_1d<'g>(g: &'g Graph, xs: &[f64], ws: &[f64]) -> ParticleSet<'g> {
        let x = g.variable(Tensor::matrix(xs.len(), 1, xs.to_vec()));
        let lw = g.variable(Tensor::vector(ws.iter().map(|w| w.ln()).collect()));
        ParticleSet::new(x, lw, vec![Topology::Linear]).unwrap()
    }

    #[test]
    fn degenerate_weights_copy_one_particle() {
        let g = Graph::new();
        let ps = set_1d(&g, &[3.0, 1.0, 2.0], &[1.0, 1e-300, 1e-300]);
        let out = tg_discrete(&ps, &mut RngStream::new(0)).unwrap();
        assert!(out.set.particles.value().data().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn truncated_gradient_is_zero() {
        let g = Graph::new();
        let ps = set_1d(&g, &[0.0, 1.0, 2.0], &[0.2, 0.3, 0.5]);
        let out = tg_discrete(&ps, &mut RngStream::new(0)).unwrap();
        let loss = out.set.particles.sum().add(out.set.log_weights.sum()).unwrap();
        g.backward(loss).unwrap();
        assert!(g.grad(ps.particles).data().iter().all(|&v| v == 0.0));
        assert!(g.grad(ps.log_weights).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dis_forward_weights_are_uniform() {
        let g = Graph::new();
        let ps = set_1d(&g, &[0.0, 1.0, 2.0, 3.0], &[0.1, 0.2, 0.3, 0.4]);
        let out = dis(&ps, &mut RngStream::new(5)).unwrap();
        for &l in out.set.log_weights.value().data() {
            assert!((l.exp() - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn sr_uniform_input_gives_unit_ratio() {
        let g = Graph::new();
        let ps = set_1d(&g, &[0.0, 1.0, 2.0], &[1.0 / 3.0; 3]);
        let out = soft(&ps, 0.1, &mut RngStream::new(2)).unwrap();
        for &l in out.set.log_weights.value().data() {
            assert!((l.exp() - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn concrete_rows_are_convex() {
        let g = Graph::new();
        let ps = set_1d(&g, &[-5.0, 0.0, 5.0], &[0.2, 0.3, 0.5]);
        // At high temperature the logits flatten and every output tends to
        // the unweighted average of the inputs.
        let out = concrete(&ps, 1e3, &mut RngStream::new(1)).unwrap();
        for &v in out.set.particles.value().data() {
            assert!(v.abs() < 0.05, "{v}");
        }
        let out = concrete(&ps, 0.01, &mut RngStream::new(1)).unwrap();
        for &v in out.set.particles.value().data() {
            assert!([-5.0, 0.0, 5.0].iter().any(|x| (v - x).abs() < 0.01), "{v}");
        }
    }

    #[test]
    fn sinkhorn_zero_cost_is_product_coupling() {
        let g = Graph::new();
        let w = [0.1, 0.6, 0.3];
        let lw = g.vector(w.iter().map(|v: &f64| v.ln()).collect());
        let cost = g.constant(Tensor::zeros(&[3, 3]));
        let (plan, report) = sinkhorn(cost, lw, 0.5, 0.9, 1e-3, 500).unwrap();
        assert!(report.converged);
        for i in 0..3 {
            for j in 0..3 {
                assert!((plan.value().at2(i, j) - w[j] / 3.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn identical_particles_are_fixed_by_transport() {
        let g = Graph::new();
        let ps = set_1d(&g, &[1.5, 1.5, 1.5], &[0.2, 0.3, 0.5]);
        let out = optimal_transport(&ps, &ResamplerConfig::of(ResamplerKind::Ot)).unwrap();
        for &v in out.set.particles.value().data() {
            assert!((v - 1.5).abs() < 1e-12);
        }
    }

    #[test]
    fn iwsg_single_gaussian_center_gradient() {
        // Σ_i ŵ_i z_i has derivative Σ_i z_i (z_i - μ)/σ² / n in μ.
        let g = Graph::new();
        let (mu, sigma) = (0.4, 0.7);
        let c = g.variable(Tensor::matrix(1, 1, vec![mu]));
        let mix = MixtureDensity::new(c, g.vector(vec![0.0]), vec![KernelFamily::Gaussian], g.vector(vec![sigma])).unwrap();
        let out = iwsg(&mix, 50, &mut RngStream::new(9)).unwrap();
        let z = out.set.particles.value();
        let loss = out.set.log_weights.exp().mul(out.set.particles.reshape(&[50])).unwrap().sum();
        g.backward(loss).unwrap();
        let expected: f64 = z.data().iter().map(|&zi| zi * (zi - mu) / (sigma * sigma)).sum::<f64>() / 50.0;
        assert!((g.grad(c).item() - expected).abs() < 1e-10);
        for &l in out.set.log_weights.value().data() {
            assert_eq!(l, -(50f64).ln());
        }
    }

    #[test]
    fn irg_single_gaussian_is_location_scale() {
        let g = Graph::new();
        let (mu, sigma) = (0.4, 0.7);
        let c = g.variable(Tensor::matrix(1, 1, vec![mu]));
        let bw = g.variable(Tensor::vector(vec![sigma]));
        let mix = MixtureDensity::new(c, g.vector(vec![0.0]), vec![KernelFamily::Gaussian], bw).unwrap();
        let out = irg(&mix, 1, &mut RngStream::new(4)).unwrap();
        let z = out.set.particles.item();
        g.backward(out.set.particles.sum()).unwrap();
        assert!((g.grad(c).item() - 1.0).abs() < 1e-6);
        assert!((g.grad(bw).item() - (z - mu) / sigma).abs() < 1e-6);
    }
}
