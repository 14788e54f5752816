//! Learnable dynamics and measurement networks.
//!
//! States are lifted before they enter a network: each circular dimension
//! becomes the pair `(cos θ, sin θ)` and linear dimensions pass through. The
//! dynamics network predicts a bounded residual in lifted space, which is
//! added to the lifted particle and mapped back.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Constraint, Graph, ParamGroup, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::kernels::Topology;
use crate::mixture::ParticleSet;
use crate::rng::RngStream;
use crate::special::wrap_angle;

/// Width of a state after lifting.
pub fn lifted_dims(topology: &[Topology]) -> usize {
    topology.iter().map(|t| if *t == Topology::Circular { 2 } else { 1 }).sum()
}

/// Replace each circular component by `(cos, sin)`.
pub fn angle_to_vec(state: &[f64], topology: &[Topology]) -> Vec<f64> {
    let mut out = Vec::with_capacity(lifted_dims(topology));
    for (&x, t) in state.iter().zip(topology) {
        match t {
            Topology::Linear => out.push(x),
            Topology::Circular => {
                out.push(x.cos());
                out.push(x.sin());
            }
        }
    }
    out
}

/// Inverse of [`angle_to_vec`]; pairs need not be unit length.
pub fn vec_to_angle(lifted: &[f64], topology: &[Topology]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(topology.len());
    let mut k = 0;
    for t in topology {
        match t {
            Topology::Linear => {
                out.push(lifted[k]);
                k += 1;
            }
            Topology::Circular => {
                let (c, s) = (lifted[k], lifted[k + 1]);
                if c == 0.0 && s == 0.0 {
                    return Err(Error::ZeroVector);
                }
                out.push(wrap_angle(s.atan2(c)));
                k += 2;
            }
        }
    }
    Ok(out)
}

/// Lift an `[N, D]` particle array to `[N, L]`. Columns flagged in `mask`
/// are replaced by zeros.
pub fn lift<'g>(x: Var<'g>, topology: &[Topology], mask: &[bool]) -> Result<Var<'g>> {
    let n = x.shape()[0];
    let g = x.graph();
    let mut cols = Vec::with_capacity(lifted_dims(topology));
    for (d, t) in topology.iter().enumerate() {
        let c = x.index_select(1, &[d])?;
        let masked = mask.get(d).copied().unwrap_or(false);
        match t {
            Topology::Linear if masked => cols.push(g.constant(Tensor::zeros(&[n, 1]))),
            Topology::Linear => cols.push(c),
            Topology::Circular => {
                cols.push(c.cos());
                cols.push(c.sin());
            }
        }
    }
    Ok(Var::concat(&cols, 1)?)
}

/// Map an `[N, L]` lifted array back to `[N, D]`.
pub fn unlift<'g>(u: Var<'g>, topology: &[Topology]) -> Result<Var<'g>> {
    let mut cols = Vec::with_capacity(topology.len());
    let mut k = 0;
    for t in topology {
        match t {
            Topology::Linear => {
                cols.push(u.index_select(1, &[k])?);
                k += 1;
            }
            Topology::Circular => {
                let c = u.index_select(1, &[k])?;
                let s = u.index_select(1, &[k + 1])?;
                cols.push(s.atan2(c)?.wrap_angle());
                k += 2;
            }
        }
    }
    Ok(Var::concat(&cols, 1)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

/// Dense feed-forward network; the activation follows every hidden layer.
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<(ParamId, ParamId)>,
    widths: Vec<usize>,
    activation: Activation,
}

impl Mlp {
    /// Weights and biases uniform in `±1/√fan_in`. With `zero_last` the
    /// output layer starts at zero.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        widths: &[usize],
        activation: Activation,
        zero_last: bool,
        rng: &mut RngStream,
    ) -> Mlp {
        assert!(widths.len() >= 2, "an MLP needs input and output widths");
        let mut layers = Vec::with_capacity(widths.len() - 1);
        for (l, pair) in widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let last = l + 2 == widths.len();
            let bound = 1.0 / (fan_in as f64).sqrt();
            let mut draw = |len: usize| -> Vec<f64> {
                if zero_last && last {
                    vec![0.0; len]
                } else {
                    (0..len).map(|_| rng.uniform_range(-bound, bound)).collect()
                }
            };
            let w = Tensor::matrix(fan_in, fan_out, draw(fan_in * fan_out));
            let b = Tensor::matrix(1, fan_out, draw(fan_out));
            let wi = store.add(format!("{name}.{l}.weight"), w, ParamGroup::Network, Constraint::None);
            let bi = store.add(format!("{name}.{l}.bias"), b, ParamGroup::Network, Constraint::None);
            layers.push((wi, bi));
        }
        Mlp { layers, widths: widths.to_vec(), activation }
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().expect("non-empty widths")
    }

    pub fn params(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.layers.iter().flat_map(|&(w, b)| [w, b])
    }

    /// Apply to each row of `x` (`[N, in]`), giving `[N, out]`.
    pub fn forward<'g>(&self, g: &'g Graph, store: &ParamStore, x: Var<'g>) -> Result<Var<'g>> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (l, &(w, b)) in self.layers.iter().enumerate() {
            h = h.matmul(g.param(store, w))?.add(g.param(store, b))?;
            if l < last {
                h = match self.activation {
                    Activation::Relu => h.relu(),
                    Activation::Tanh => h.tanh(),
                };
            }
        }
        Ok(h)
    }
}

/// Network sizes shared by the bearings models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub encoder_hidden: Vec<usize>,
    pub latent: usize,
    pub residual_hidden: Vec<usize>,
    pub weight_hidden: Vec<usize>,
    /// Bound on each lifted residual component.
    pub output_scale: f64,
    pub position_invariant: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            encoder_hidden: vec![64, 64],
            latent: 32,
            residual_hidden: vec![64, 64, 64],
            weight_hidden: vec![64, 64],
            output_scale: 0.99,
            position_invariant: true,
        }
    }
}

fn widths(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut w = Vec::with_capacity(hidden.len() + 2);
    w.push(input);
    w.extend_from_slice(hidden);
    w.push(output);
    w
}

/// `x_t = unlift(lift(x_{t-1}) + s·tanh(f(enc(x_{t-1}), enc(a_t), η)))`, η ~ N(0, I).
#[derive(Debug, Clone)]
pub struct DynamicsModel {
    pub topology: Vec<Topology>,
    particle_encoder: Mlp,
    action_encoder: Option<Mlp>,
    residual: Mlp,
    pub noise_dim: usize,
    pub output_scale: Vec<f64>,
    /// Linear dimensions hidden from the encoder.
    pub mask: Vec<bool>,
}

impl DynamicsModel {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        topology: &[Topology],
        action_dim: usize,
        cfg: &NetworkConfig,
        rng: &mut RngStream,
    ) -> DynamicsModel {
        let lifted = lifted_dims(topology);
        let noise_dim = topology.len();
        let particle_encoder =
            Mlp::new(store, &format!("{name}.particle_encoder"), &widths(lifted, &cfg.encoder_hidden, cfg.latent), Activation::Relu, false, rng);
        let action_encoder = (action_dim > 0).then(|| {
            Mlp::new(store, &format!("{name}.action_encoder"), &widths(action_dim, &cfg.encoder_hidden, cfg.latent), Activation::Relu, false, rng)
        });
        let input = cfg.latent * if action_dim > 0 { 2 } else { 1 } + noise_dim;
        let residual = Mlp::new(store, &format!("{name}.residual"), &widths(input, &cfg.residual_hidden, lifted), Activation::Relu, true, rng);
        let mask = topology.iter().map(|t| cfg.position_invariant && *t == Topology::Linear).collect();
        DynamicsModel {
            topology: topology.to_vec(),
            particle_encoder,
            action_encoder,
            residual,
            noise_dim,
            output_scale: vec![cfg.output_scale; lifted],
            mask,
        }
    }

    /// Move every particle one step; weights are carried over.
    pub fn propose<'g>(
        &self,
        g: &'g Graph,
        store: &ParamStore,
        ps: &ParticleSet<'g>,
        action: Option<&[f64]>,
        rng: &mut RngStream,
    ) -> Result<ParticleSet<'g>> {
        let n = ps.len();
        let enc_in = lift(ps.particles, &self.topology, &self.mask)?;
        let mut parts = vec![self.particle_encoder.forward(g, store, enc_in)?];
        if let Some(enc) = &self.action_encoder {
            let a = action.ok_or_else(|| Error::Config("dynamics model expects an action".into()))?;
            let a = g.constant(Tensor::matrix(1, a.len(), a.to_vec()));
            let ea = enc.forward(g, store, a)?.index_select(0, &vec![0; n])?;
            parts.push(ea);
        }
        let eta: Vec<f64> = (0..n * self.noise_dim).map(|_| rng.normal()).collect();
        parts.push(g.constant(Tensor::matrix(n, self.noise_dim, eta)));
        let h = Var::concat(&parts, 1)?;
        let scale = g.constant(Tensor::matrix(1, self.output_scale.len(), self.output_scale.clone()));
        let delta = self.residual.forward(g, store, h)?.tanh().mul(scale)?;
        let base = lift(ps.particles, &self.topology, &[])?;
        let x = unlift(base.add(delta)?, &self.topology)?;
        Ok(ParticleSet {
            particles: x,
            log_weights: ps.log_weights,
            resampling_log_weights: ps.resampling_log_weights,
            topology: ps.topology.clone(),
        })
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut v: Vec<ParamId> = self.particle_encoder.params().collect();
        if let Some(a) = &self.action_encoder {
            v.extend(a.params());
        }
        v.extend(self.residual.params());
        v
    }
}

/// Scores each particle against an observation; log-weights are updated
/// additively and renormalized.
#[derive(Debug, Clone)]
pub struct MeasurementModel {
    pub topology: Vec<Topology>,
    pub obs_topology: Vec<Topology>,
    particle_encoder: Mlp,
    observation_encoder: Mlp,
    weight_net: Mlp,
}

impl MeasurementModel {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        topology: &[Topology],
        obs_topology: &[Topology],
        cfg: &NetworkConfig,
        rng: &mut RngStream,
    ) -> MeasurementModel {
        let particle_encoder = Mlp::new(
            store,
            &format!("{name}.particle_encoder"),
            &widths(lifted_dims(topology), &cfg.encoder_hidden, cfg.latent),
            Activation::Relu,
            false,
            rng,
        );
        let observation_encoder = Mlp::new(
            store,
            &format!("{name}.observation_encoder"),
            &widths(lifted_dims(obs_topology), &cfg.encoder_hidden, cfg.latent),
            Activation::Relu,
            false,
            rng,
        );
        let weight_net =
            Mlp::new(store, &format!("{name}.weight_net"), &widths(2 * cfg.latent, &cfg.weight_hidden, 1), Activation::Relu, false, rng);
        MeasurementModel {
            topology: topology.to_vec(),
            obs_topology: obs_topology.to_vec(),
            particle_encoder,
            observation_encoder,
            weight_net,
        }
    }

    /// Unnormalized log-likelihood score of each particle, shape `[N]`.
    pub fn score<'g>(&self, g: &'g Graph, store: &ParamStore, particles: Var<'g>, obs: &[f64]) -> Result<Var<'g>> {
        let n = particles.shape()[0];
        let ep = self.particle_encoder.forward(g, store, lift(particles, &self.topology, &[])?)?;
        let lifted = angle_to_vec(obs, &self.obs_topology);
        let o = g.constant(Tensor::matrix(1, lifted.len(), lifted));
        let eo = self.observation_encoder.forward(g, store, o)?.index_select(0, &vec![0; n])?;
        let h = Var::concat(&[ep, eo], 1)?;
        Ok(self.weight_net.forward(g, store, h)?.reshape(&[n]))
    }

    /// Posterior weights `w_i ∝ exp(score_i) w_i`.
    pub fn weigh<'g>(&self, g: &'g Graph, store: &ParamStore, ps: &ParticleSet<'g>, obs: &[f64]) -> Result<ParticleSet<'g>> {
        let s = self.score(g, store, ps.particles, obs)?;
        let lw = normalize(ps.log_weights.add(s)?)?;
        Ok(ParticleSet {
            particles: ps.particles,
            log_weights: lw,
            resampling_log_weights: ps.resampling_log_weights,
            topology: ps.topology.clone(),
        })
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.particle_encoder
            .params()
            .chain(self.observation_encoder.params())
            .chain(self.weight_net.params())
            .collect()
    }
}

/// Subtract the log-sum-exp of a `[N]` log-weight vector.
pub fn normalize<'g>(lw: Var<'g>) -> Result<Var<'g>> {
    let n = lw.shape()[0];
    Ok(lw.sub(lw.reshape(&[1, n]).logsumexp(1)?.reshape(&[]))?)
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"MDPFPARM";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub group: ParamGroup,
    pub constraint: Constraint,
}

/// Write `params.bin` (name, shape, little-endian f64 data per array) and
/// `manifest.json` into `dir`. Extra named arrays are appended after the
/// parameters.
pub fn save_checkpoint(store: &ParamStore, extra: &[(String, Tensor)], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut bin = Vec::new();
    bin.extend_from_slice(CHECKPOINT_MAGIC);
    let arrays: Vec<(&str, &Tensor)> = store
        .entries()
        .iter()
        .map(|e| (e.name.as_str(), &e.value))
        .chain(extra.iter().map(|(n, t)| (n.as_str(), t)))
        .collect();
    bin.extend_from_slice(&(arrays.len() as u64).to_le_bytes());
    for (name, t) in &arrays {
        bin.extend_from_slice(&(name.len() as u32).to_le_bytes());
        bin.extend_from_slice(name.as_bytes());
        bin.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &s in t.shape() {
            bin.extend_from_slice(&(s as u64).to_le_bytes());
        }
        for &v in t.data() {
            bin.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::File::create(dir.join("params.bin"))?.write_all(&bin)?;
    let manifest: Vec<ManifestEntry> = store
        .entries()
        .iter()
        .map(|e| ManifestEntry { name: e.name.clone(), shape: e.value.shape().to_vec(), group: e.group, constraint: e.constraint })
        .collect();
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

/// Read every named array of a checkpoint.
pub fn read_arrays(dir: &Path) -> Result<Vec<(String, Tensor)>> {
    let mut buf = Vec::new();
    fs::File::open(dir.join("params.bin"))?.read_to_end(&mut buf)?;
    let mut cur = Cursor { buf: &buf, pos: 0 };
    if cur.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("checkpoint magic mismatch".into()));
    }
    let count = cur.u64()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = cur.u32()? as usize;
        let name = String::from_utf8(cur.take(len)?.to_vec()).map_err(|_| Error::Format("array name is not UTF-8".into()))?;
        let ndim = cur.u32()? as usize;
        let shape: Vec<usize> = (0..ndim).map(|_| cur.u64().map(|v| v as usize)).collect::<Result<_>>()?;
        let len: usize = shape.iter().product();
        let data: Vec<f64> = (0..len).map(|_| cur.f64()).collect::<Result<_>>()?;
        out.push((name, Tensor::from_shape(&shape, data)));
    }
    Ok(out)
}

/// Load parameter values by name into `store`; shapes must agree. Returns
/// arrays that are not parameters.
pub fn load_checkpoint(store: &mut ParamStore, dir: &Path) -> Result<Vec<(String, Tensor)>> {
    let mut extra = Vec::new();
    let mut seen = 0;
    for (name, t) in read_arrays(dir)? {
        match store.find(&name) {
            Some(id) => {
                if store.value(id).shape() != t.shape() {
                    return Err(Error::Format(format!(
                        "parameter {name} has shape {:?} in the checkpoint but {:?} in the model",
                        t.shape(),
                        store.value(id).shape()
                    )));
                }
                store.set_value(id, t);
                seen += 1;
            }
            None => extra.push((name, t)),
        }
    }
    if seen != store.len() {
        return Err(Error::Format(format!("checkpoint holds {seen} of {} model parameters", store.len())));
    }
    Ok(extra)
}

pub(crate) struct Cursor<'a> {
    pub buf: &'a [u8],
    pub pos: usize,
}

impl<'a> Cursor<'a> {
    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
