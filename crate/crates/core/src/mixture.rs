//! Weighted particle sets and the kernel density mixtures built on them.
//!
//! A mixture places one product kernel on every particle:
//! `m(x) = Σ_i w_i Π_d K_d(x_d ⊖ c_{i,d}; β_d)`, where `⊖` is the plain
//! difference on linear dimensions and the wrapped difference on circular
//! ones. Weights are carried in log space throughout.

use std::f64::consts::PI;

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::kernels::{self, KernelFamily, KernelSpec, Topology};
use crate::rng::RngStream;
use crate::special::wrap_angle;

/// Floor added inside the log-density when compact kernels are present.
pub const DENSITY_FLOOR: f64 = 1e-300;

/// `N` particles in `D` dimensions with normalized log-weights.
#[derive(Clone)]
pub struct ParticleSet<'g> {
    /// Shape `[N, D]`.
    pub particles: Var<'g>,
    /// Shape `[N]`, log-sum-exp zero.
    pub log_weights: Var<'g>,
    /// Second weight vector for a decoupled resampling mixture.
    pub resampling_log_weights: Option<Var<'g>>,
    pub topology: Vec<Topology>,
}

impl<'g> ParticleSet<'g> {
    pub fn new(particles: Var<'g>, log_weights: Var<'g>, topology: Vec<Topology>) -> Result<Self> {
        let ps = particles.shape();
        if ps.len() != 2 || ps[1] != topology.len() || log_weights.shape() != [ps[0]] {
            return Err(Error::Config(format!(
                "particle set shapes {ps:?} / {:?} do not match {} dimensions",
                log_weights.shape(),
                topology.len()
            )));
        }
        Ok(ParticleSet { particles, log_weights, resampling_log_weights: None, topology })
    }

    /// Equal weights `1/N`, as constants.
    pub fn uniform(particles: Var<'g>, topology: Vec<Topology>) -> Result<Self> {
        let n = particles.shape()[0];
        let lw = particles.graph().constant(Tensor::full(&[n], -(n as f64).ln()));
        ParticleSet::new(particles, lw, topology)
    }

    pub fn graph(&self) -> &'g Graph {
        self.particles.graph()
    }

    pub fn len(&self) -> usize {
        self.particles.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> usize {
        self.topology.len()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.value().data().iter().map(|l| l.exp()).collect()
    }

    /// Weights used to pick ancestors: the resampling weights when present.
    pub fn sampling_log_weights(&self) -> Var<'g> {
        self.resampling_log_weights.unwrap_or(self.log_weights)
    }

    /// Effective sample size `1 / Σ w²` of the posterior weights.
    pub fn ess(&self) -> f64 {
        1.0 / self.weights().iter().map(|w| w * w).sum::<f64>()
    }

    /// Same values with every gradient path cut.
    pub fn detached(&self) -> ParticleSet<'g> {
        ParticleSet {
            particles: self.particles.stop_gradient(),
            log_weights: self.log_weights.stop_gradient(),
            resampling_log_weights: self.resampling_log_weights.map(|v| v.stop_gradient()),
            topology: self.topology.clone(),
        }
    }
}

/// Product-kernel density mixture on the graph.
#[derive(Clone)]
pub struct MixtureDensity<'g> {
    /// Shape `[N, D]`.
    pub centers: Var<'g>,
    /// Shape `[N]`, normalized in log space.
    pub log_weights: Var<'g>,
    pub families: Vec<KernelFamily>,
    /// Shape `[D]`, strictly positive.
    pub bandwidth: Var<'g>,
}

impl<'g> MixtureDensity<'g> {
    pub fn new(centers: Var<'g>, log_weights: Var<'g>, families: Vec<KernelFamily>, bandwidth: Var<'g>) -> Result<Self> {
        let cs = centers.shape();
        let d = families.len();
        if cs.len() != 2 || cs[1] != d || log_weights.shape() != [cs[0]] || bandwidth.shape() != [d] {
            return Err(Error::Config(format!(
                "mixture shapes centers {cs:?}, weights {:?}, bandwidth {:?} inconsistent with {d} kernels",
                log_weights.shape(),
                bandwidth.shape()
            )));
        }
        if bandwidth.value().data().iter().any(|&b| !(b > 0.0)) {
            return Err(Error::Config("kernel bandwidth must be positive".into()));
        }
        Ok(MixtureDensity { centers, log_weights, families, bandwidth })
    }

    /// Mixture over a particle set's posterior weights.
    pub fn from_particles(ps: &ParticleSet<'g>, families: Vec<KernelFamily>, bandwidth: Var<'g>) -> Result<Self> {
        MixtureDensity::new(ps.particles, ps.log_weights, families, bandwidth)
    }

    pub fn graph(&self) -> &'g Graph {
        self.centers.graph()
    }

    pub fn len(&self) -> usize {
        self.centers.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> usize {
        self.families.len()
    }

    pub fn topology(&self) -> Vec<Topology> {
        self.families.iter().map(|f| f.topology()).collect()
    }

    pub fn specs(&self) -> Vec<KernelSpec> {
        let bw = self.bandwidth.value();
        self.families.iter().zip(bw.data()).map(|(&f, &b)| KernelSpec::new(f, b)).collect()
    }

    fn any_compact(&self) -> bool {
        self.families.iter().any(|f| !f.has_continuous_density())
    }

    fn bandwidth_at(&self, d: usize) -> Result<Var<'g>> {
        Ok(self.bandwidth.index_select(0, &[d])?.reshape(&[]))
    }

    /// `[M, N]` displacements `x_{m,d} ⊖ c_{n,d}`.
    fn displacement(&self, x: Var<'g>, d: usize) -> Result<Var<'g>> {
        let n = self.len();
        let xc = x.index_select(1, &[d])?;
        let cc = self.centers.index_select(1, &[d])?.reshape(&[1, n]);
        let u = xc.sub(cc)?;
        Ok(match self.families[d].topology() {
            Topology::Linear => u,
            Topology::Circular => u.wrap_angle(),
        })
    }

    /// `[M, N]` sum over `dims` of per-dimension kernel log-densities.
    fn log_kernel_sum(&self, x: Var<'g>, dims: std::ops::Range<usize>) -> Result<Option<Var<'g>>> {
        let mut acc: Option<Var<'g>> = None;
        for d in dims {
            let u = self.displacement(x, d)?;
            let lk = kernels::log_density(self.families[d], u, self.bandwidth_at(d)?)?;
            acc = Some(match acc {
                None => lk,
                Some(a) => a.add(lk)?,
            });
        }
        Ok(acc)
    }

    fn check_points(&self, x: Var<'g>) -> Result<usize> {
        let s = x.shape();
        if s.len() != 2 || s[1] != self.dims() {
            return Err(Error::Config(format!("query points {s:?} do not have {} columns", self.dims())));
        }
        Ok(s[0])
    }

    /// Log-density at each row of `x` (`[M, D]`), shape `[M]`.
    pub fn log_density(&self, x: Var<'g>) -> Result<Var<'g>> {
        let m = self.check_points(x)?;
        let n = self.len();
        let lk = self.log_kernel_sum(x, 0..self.dims())?.expect("at least one dimension");
        let terms = lk.add(self.log_weights.reshape(&[1, n]))?;
        if self.any_compact() {
            let floor = self.graph().constant(Tensor::full(&[m, 1], DENSITY_FLOOR.ln()));
            Ok(Var::concat(&[terms, floor], 1)?.logsumexp(1)?)
        } else {
            Ok(terms.logsumexp(1)?)
        }
    }

    /// Log-density at a single point, as a scalar node.
    pub fn log_density_at(&self, x: &[f64]) -> Result<Var<'g>> {
        let p = self.graph().constant(Tensor::matrix(1, x.len(), x.to_vec()));
        Ok(self.log_density(p)?.reshape(&[]))
    }

    /// Graph-free log-density at a single point.
    pub fn log_density_value(&self, x: &[f64]) -> f64 {
        let centers = self.centers.value();
        let lw = self.log_weights.value();
        let specs = self.specs();
        log_density_direct(&centers, lw.data(), &specs, x)
    }

    /// Draw `n` points: categorical ancestor, then a kernel offset per
    /// dimension. Values only; the graph is not touched.
    pub fn sample(&self, n: usize, rng: &mut RngStream) -> Result<(Tensor, Vec<usize>)> {
        let weights: Vec<f64> = self.log_weights.value().data().iter().map(|l| l.exp()).collect();
        let ancestors = kernels::categorical_samples(&weights, n, rng)?;
        let centers = self.centers.value();
        let specs = self.specs();
        let d = self.dims();
        let mut out = Vec::with_capacity(n * d);
        for &a in &ancestors {
            for (k, spec) in specs.iter().enumerate() {
                let v = centers.at2(a, k) + spec.sample(rng);
                out.push(match spec.topology() {
                    Topology::Linear => v,
                    Topology::Circular => wrap_angle(v),
                });
            }
        }
        Ok((Tensor::matrix(n, d, out), ancestors))
    }

    fn check_continuous(&self, upto: usize) -> Result<()> {
        match self.families[..=upto].iter().find(|f| !f.has_continuous_density()) {
            Some(f) => Err(Error::UnsupportedKernel(f.name())),
            None => Ok(()),
        }
    }

    /// Conditional CDF of dimension `d` given the earlier dimensions of each
    /// row of `x`, shape `[M]`. Circular dimensions are cut at −π.
    pub fn conditional_cdf(&self, x: Var<'g>, d: usize) -> Result<Var<'g>> {
        self.check_points(x)?;
        if d >= self.dims() {
            return Err(Error::Config(format!("dimension {d} out of range")));
        }
        self.check_continuous(d)?;
        let n = self.len();
        let lw = self.log_weights.reshape(&[1, n]);
        let resp = match self.log_kernel_sum(x, 0..d)? {
            Some(lk) => lk.add(lw)?.softmax(1)?,
            None => lw.softmax(1)?,
        };
        let bw = self.bandwidth_at(d)?;
        let fam = self.families[d];
        let u = self.displacement(x, d)?;
        let mut cdf = kernels::cdf(fam, u, bw)?;
        if fam.topology() == Topology::Circular {
            // Mass from the cut at −π up to x: G(x ⊖ c) − G(−π ⊖ c), plus one
            // full turn when the wrapped path passes the kernel's own cut.
            let cut = self.centers.index_select(1, &[d])?.reshape(&[1, n]).neg().add_scalar(-PI).wrap_angle();
            let start = kernels::cdf(fam, cut, bw)?;
            let uv = u.value();
            let cv = cut.value();
            let shape = uv.shape().to_vec();
            let turn: Vec<f64> =
                (0..uv.len()).map(|k| if uv.data()[k] < cv.data()[k % n] { 1.0 } else { 0.0 }).collect();
            cdf = cdf.sub(start)?.add(self.graph().constant(Tensor::from_shape(&shape, turn)))?;
        }
        Ok(resp.mul(cdf)?.sum_axis(1)?)
    }

    /// Conditional density of dimension `d` given the earlier dimensions,
    /// i.e. the derivative of [`MixtureDensity::conditional_cdf`] in `x_d`.
    pub fn conditional_density_values(&self, x: &Tensor, d: usize) -> Vec<f64> {
        let centers = self.centers.value();
        let lw = self.log_weights.value();
        let specs = self.specs();
        let n = self.len();
        let mut out = Vec::with_capacity(x.rows());
        let mut logr = vec![0.0; n];
        for m in 0..x.rows() {
            let row = x.row(m);
            for (i, lr) in logr.iter_mut().enumerate() {
                *lr = lw.data()[i]
                    + (0..d).map(|k| specs[k].log_density(displace(specs[k].topology(), row[k], centers.at2(i, k)))).sum::<f64>();
            }
            let mx = logr.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if mx == f64::NEG_INFINITY {
                out.push(0.0);
                continue;
            }
            let z: f64 = logr.iter().map(|l| (l - mx).exp()).sum();
            let dens: f64 = (0..n)
                .map(|i| (logr[i] - mx).exp() / z * specs[d].density(displace(specs[d].topology(), row[d], centers.at2(i, d))))
                .sum();
            out.push(dens);
        }
        out
    }

    /// Mixture mean: weighted center average, unit-vector average on circles.
    pub fn mean_value(&self) -> Vec<f64> {
        let w: Vec<f64> = self.log_weights.value().data().iter().map(|l| l.exp()).collect();
        weighted_mean_values(&self.centers.value(), &w, &self.topology()).0
    }
}

fn displace(topo: Topology, x: f64, c: f64) -> f64 {
    match topo {
        Topology::Linear => x - c,
        Topology::Circular => wrap_angle(x - c),
    }
}

/// Direct summation of the mixture log-density; the reference form used by
/// evaluation code that does not need gradients.
pub fn log_density_direct(centers: &Tensor, log_weights: &[f64], specs: &[KernelSpec], x: &[f64]) -> f64 {
    let terms: Vec<f64> = (0..centers.rows())
        .map(|i| {
            log_weights[i]
                + specs
                    .iter()
                    .enumerate()
                    .map(|(d, s)| s.log_density(displace(s.topology(), x[d], centers.at2(i, d))))
                    .sum::<f64>()
        })
        .collect();
    let compact = specs.iter().any(|s| !s.family.has_continuous_density());
    let mx = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mx = if compact { mx.max(DENSITY_FLOOR.ln()) } else { mx };
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    let mut s: f64 = terms.iter().map(|t| (t - mx).exp()).sum();
    if compact {
        s += (DENSITY_FLOOR.ln() - mx).exp();
    }
    mx + s.ln()
}

/// Point summary of a weighted particle set.
pub struct StateSummary<'g> {
    /// Shape `[D]`.
    pub mean: Var<'g>,
    /// Per dimension: circular resultant vanished and the mean was set to 0.
    pub degenerate: Vec<bool>,
}

/// Weighted mean on the graph; circular dimensions use the direction of the
/// weighted unit-vector sum.
pub fn weighted_mean<'g>(ps: &ParticleSet<'g>) -> Result<StateSummary<'g>> {
    let n = ps.len();
    let g = ps.graph();
    let w = ps.log_weights.exp().reshape(&[1, n]);
    let mut cols = Vec::with_capacity(ps.dims());
    let mut degenerate = Vec::with_capacity(ps.dims());
    for (d, topo) in ps.topology.iter().enumerate() {
        let x = ps.particles.index_select(1, &[d])?;
        match topo {
            Topology::Linear => {
                cols.push(w.matmul(x)?.reshape(&[1]));
                degenerate.push(false);
            }
            Topology::Circular => {
                let s = w.matmul(x.sin())?.reshape(&[1]);
                let c = w.matmul(x.cos())?.reshape(&[1]);
                let (sv, cv) = (s.item(), c.item());
                if sv.hypot(cv) < 1e-12 {
                    cols.push(g.vector(vec![0.0]));
                    degenerate.push(true);
                } else {
                    cols.push(s.atan2(c)?);
                    degenerate.push(false);
                }
            }
        }
    }
    Ok(StateSummary { mean: Var::concat(&cols, 0)?, degenerate })
}

/// Graph-free weighted mean and degeneracy flags.
pub fn weighted_mean_values(particles: &Tensor, weights: &[f64], topology: &[Topology]) -> (Vec<f64>, Vec<bool>) {
    let mut mean = Vec::with_capacity(topology.len());
    let mut degenerate = Vec::with_capacity(topology.len());
    for (d, topo) in topology.iter().enumerate() {
        match topo {
            Topology::Linear => {
                mean.push((0..particles.rows()).map(|i| weights[i] * particles.at2(i, d)).sum());
                degenerate.push(false);
            }
            Topology::Circular => {
                let (mut s, mut c) = (0.0, 0.0);
                for i in 0..particles.rows() {
                    let (si, ci) = particles.at2(i, d).sin_cos();
                    s += weights[i] * si;
                    c += weights[i] * ci;
                }
                if s.hypot(c) < 1e-12 {
                    mean.push(0.0);
                    degenerate.push(true);
                } else {
                    mean.push(s.atan2(c));
                    degenerate.push(false);
                }
            }
        }
    }
    (mean, degenerate)
}
