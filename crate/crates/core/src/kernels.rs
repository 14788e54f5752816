//! Per-dimension probability kernels and elementary samplers.
//!
//! Every kernel is a normalized density centred at zero. Linear kernels
//! (Gaussian, Epanechnikov) take a displacement; the von Mises kernel takes a
//! wrapped angular displacement in [−π, π). Bandwidth means the standard
//! deviation σ for Gaussian, the support half-width β for Epanechnikov, and
//! the concentration κ for von Mises.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::special;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    Linear,
    Circular,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Gaussian,
    Epanechnikov,
    VonMises,
}

impl KernelFamily {
    pub fn topology(self) -> Topology {
        match self {
            KernelFamily::VonMises => Topology::Circular,
            _ => Topology::Linear,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::Gaussian => "gaussian",
            KernelFamily::Epanechnikov => "epanechnikov",
            KernelFamily::VonMises => "von_mises",
        }
    }

    pub fn has_continuous_density(self) -> bool {
        !matches!(self, KernelFamily::Epanechnikov)
    }
}

/// A kernel with a concrete bandwidth, for graph-free evaluation and sampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub bandwidth: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, bandwidth: f64) -> Self {
        assert!(bandwidth > 0.0, "kernel bandwidth must be positive");
        KernelSpec { family, bandwidth }
    }

    pub fn gaussian(sigma: f64) -> Self {
        KernelSpec::new(KernelFamily::Gaussian, sigma)
    }

    pub fn epanechnikov(beta: f64) -> Self {
        KernelSpec::new(KernelFamily::Epanechnikov, beta)
    }

    pub fn von_mises(kappa: f64) -> Self {
        KernelSpec::new(KernelFamily::VonMises, kappa)
    }

    pub fn topology(&self) -> Topology {
        self.family.topology()
    }

    /// Log of the normalized density; −∞ outside a compact support.
    pub fn log_density(&self, u: f64) -> f64 {
        log_density_value(self.family, u, self.bandwidth)
    }

    pub fn density(&self, u: f64) -> f64 {
        self.log_density(u).exp()
    }

    pub fn cdf(&self, u: f64) -> f64 {
        cdf_value(self.family, u, self.bandwidth)
    }

    pub fn sample(&self, rng: &mut RngStream) -> f64 {
        sample(self.family, self.bandwidth, rng)
    }
}

pub fn log_density_value(family: KernelFamily, u: f64, bw: f64) -> f64 {
    match family {
        KernelFamily::Gaussian => {
            let t = u / bw;
            -0.5 * t * t - bw.ln() - 0.5 * LN_2PI
        }
        KernelFamily::Epanechnikov => {
            let t = u / bw;
            if t.abs() < 1.0 {
                (0.75 / bw).ln() + (1.0 - t * t).ln()
            } else {
                f64::NEG_INFINITY
            }
        }
        KernelFamily::VonMises => bw * u.cos() - LN_2PI - special::log_bessel_i0(bw),
    }
}

pub fn cdf_value(family: KernelFamily, u: f64, bw: f64) -> f64 {
    match family {
        KernelFamily::Gaussian => special::std_normal_cdf(u / bw),
        KernelFamily::Epanechnikov => {
            let t = (u / bw).clamp(-1.0, 1.0);
            0.5 + 0.75 * (t - t * t * t / 3.0)
        }
        KernelFamily::VonMises => special::von_mises_cdf(u.clamp(-PI, PI), bw),
    }
}

/// Log density on the graph, differentiable in `u` and `bw`. `bw` is scalar
/// or broadcastable against `u`.
pub fn log_density<'g>(family: KernelFamily, u: Var<'g>, bw: Var<'g>) -> Result<Var<'g>> {
    Ok(match family {
        KernelFamily::Gaussian => {
            let t = u.div(bw)?;
            t.square().mul_scalar(-0.5).sub(bw.log()?)?.add_scalar(-0.5 * LN_2PI)
        }
        KernelFamily::Epanechnikov => {
            let t = u.div(bw)?;
            let one_minus = t.square().neg().add_scalar(1.0);
            let shape = one_minus.shape();
            let mask: Vec<bool> = one_minus.value().data().iter().map(|&v| v > 0.0).collect();
            let inside = one_minus.clamp(1e-300, 1.0).log()?.add(bw.log()?.neg().add_scalar(0.75f64.ln()))?;
            let outside = u.graph().scalar(f64::NEG_INFINITY);
            Var::select(&mask, &shape, inside, outside)?
        }
        KernelFamily::VonMises => u.cos().mul(bw)?.sub(bw.log_bessel_i0())?.add_scalar(-LN_2PI),
    })
}

/// CDF on the graph, differentiable in `u` and `bw`.
pub fn cdf<'g>(family: KernelFamily, u: Var<'g>, bw: Var<'g>) -> Result<Var<'g>> {
    Ok(match family {
        KernelFamily::Gaussian => u.div(bw)?.mul_scalar(std::f64::consts::FRAC_1_SQRT_2).erf().mul_scalar(0.5).add_scalar(0.5),
        KernelFamily::Epanechnikov => {
            let t = u.div(bw)?.clamp(-1.0, 1.0);
            let cubic = t.mul(t)?.mul(t)?.mul_scalar(1.0 / 3.0);
            t.sub(cubic)?.mul_scalar(0.75).add_scalar(0.5)
        }
        KernelFamily::VonMises => u.clamp(-PI, PI).von_mises_cdf(bw)?,
    })
}

/// One draw from the zero-centred kernel.
pub fn sample(family: KernelFamily, bw: f64, rng: &mut RngStream) -> f64 {
    match family {
        KernelFamily::Gaussian => bw * rng.normal(),
        KernelFamily::Epanechnikov => {
            // Median-of-three uniforms on [-1, 1].
            let u1 = rng.uniform_range(-1.0, 1.0);
            let u2 = rng.uniform_range(-1.0, 1.0);
            let u3 = rng.uniform_range(-1.0, 1.0);
            let v = if u3.abs() >= u2.abs() && u3.abs() >= u1.abs() { u2 } else { u3 };
            bw * v
        }
        KernelFamily::VonMises => sample_von_mises(bw, rng),
    }
}

/// Best–Fisher rejection sampler, mean 0, result in [−π, π).
pub fn sample_von_mises(kappa: f64, rng: &mut RngStream) -> f64 {
    if kappa < 1e-8 {
        return rng.uniform_range(-PI, PI);
    }
    let tau = 1.0 + (1.0 + 4.0 * kappa * kappa).sqrt();
    let rho = (tau - (2.0 * tau).sqrt()) / (2.0 * kappa);
    let r = (1.0 + rho * rho) / (2.0 * rho);
    loop {
        let u1 = rng.uniform();
        let u2 = rng.uniform_open();
        let u3 = rng.uniform();
        let z = (PI * u1).cos();
        let f = (1.0 + r * z) / (r + z);
        let c = kappa * (r - f);
        if c * (2.0 - c) - u2 > 0.0 || (c / u2).ln() + 1.0 - c >= 0.0 {
            let theta = f.clamp(-1.0, 1.0).acos();
            let theta = if u3 > 0.5 { theta } else { -theta };
            return special::wrap_angle(theta);
        }
    }
}

/// Inverse-CDF categorical draw over the cumulative sum of `weights`.
pub fn categorical_sample(weights: &[f64], rng: &mut RngStream) -> Result<usize> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::ZeroWeights);
    }
    let u = rng.uniform() * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            last_positive = i;
            acc += w;
            if u < acc {
                return Ok(i);
            }
        }
    }
    Ok(last_positive)
}

/// `n` independent categorical draws.
pub fn categorical_samples(weights: &[f64], n: usize, rng: &mut RngStream) -> Result<Vec<usize>> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::ZeroWeights);
    }
    // Same inversion as `categorical_sample`, by binary search.
    let mut cum = Vec::with_capacity(weights.len());
    let mut index = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            cum.push(acc);
            index.push(i);
        }
    }
    Ok((0..n)
        .map(|_| {
            let u = rng.uniform() * total;
            let k = cum.partition_point(|&c| c <= u);
            index[k.min(index.len() - 1)]
        })
        .collect())
}

/// Standard Gumbel draw `−ln(−ln U)`.
pub fn gumbel_sample(rng: &mut RngStream) -> f64 {
    -(-rng.uniform_open().ln()).ln()
}
