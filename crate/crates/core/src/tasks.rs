//! Dataset generators and the on-disk dataset container.
//!
//! Two tasks are provided: a scalar linear-Gaussian system with a two-branch
//! observation mixture, and a car tracked from a fixed radar station that
//! reports noisy bearings with occasional uniform outliers.
//!
//! Step indices are zero-based throughout. A trajectory of length `T` holds
//! the state before the first step in `initial_state`, then `T` states,
//! observations and (optionally) actions.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::filter::SyntheticParams;
use crate::kernels::{sample_von_mises, Topology};
use crate::models::Cursor;
use crate::rng::RngStream;
use crate::special::wrap_angle;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub initial_state: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub observations: Vec<Vec<f64>>,
    pub actions: Option<Vec<Vec<f64>>>,
    /// Noise-free observations, where the task defines them.
    pub clean_observations: Option<Vec<Vec<f64>>>,
    /// Zero-based labeled steps, ascending.
    pub labels: Vec<usize>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Labeled steps `t` with `(t + 1) % stride == 0`.
    pub fn labels_with_stride(&self, stride: usize) -> Vec<usize> {
        self.labels.iter().copied().filter(|t| (t + 1) % stride.max(1) == 0).collect()
    }

    /// Copy with every step labeled.
    pub fn densely_labeled(&self) -> Trajectory {
        Trajectory { labels: (0..self.len()).collect(), ..self.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Synthetic,
    Bearings,
}

/// How the synthetic sequences were produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticTask {
    pub truth: SyntheticParams,
    /// Standard deviation of the zero-mean Gaussian initial state.
    pub prior_std: f64,
    pub n_seq: usize,
    pub steps: usize,
}

/// Radar station at the origin tracking a car with variable speed and heading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BearingsWorld {
    /// Probability that an observation is a uniform outlier.
    pub outlier_rate: f64,
    /// Von Mises concentration of inlier bearings.
    pub concentration: f64,
    pub speed_noise: f64,
    pub speed_min: f64,
    pub speed_max: f64,
    pub turn_noise: f64,
    pub init_radius_min: f64,
    pub init_radius_max: f64,
    pub station: [f64; 2],
}

impl Default for BearingsWorld {
    fn default() -> Self {
        BearingsWorld {
            outlier_rate: 0.15,
            concentration: 50.0,
            speed_noise: 0.02,
            speed_min: 0.05,
            speed_max: 0.5,
            turn_noise: 0.1,
            init_radius_min: 1.0,
            init_radius_max: 3.0,
            station: [0.0, 0.0],
        }
    }
}

impl BearingsWorld {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.outlier_rate) {
            return Err(Error::Config(format!("outlier_rate {} is outside [0, 1]", self.outlier_rate)));
        }
        if !(self.concentration > 0.0) {
            return Err(Error::Config("concentration must be positive".into()));
        }
        if !(self.speed_min <= self.speed_max && self.init_radius_min <= self.init_radius_max) {
            return Err(Error::Config("speed and radius ranges must be ordered".into()));
        }
        Ok(())
    }

    /// Bearing of a state from the station.
    pub fn bearing(&self, state: &[f64]) -> f64 {
        (state[1] - self.station[1]).atan2(state[0] - self.station[0])
    }
}

pub const BEARINGS_TOPOLOGY: [Topology; 3] = [Topology::Linear, Topology::Linear, Topology::Circular];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub task: TaskKind,
    pub state_topology: Vec<Topology>,
    pub obs_topology: Vec<Topology>,
    pub action_dim: usize,
    /// Generator settings echoed for provenance.
    pub generator: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub trajectories: Vec<Trajectory>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }
}

/// Roll the scalar model forward. Actions are uniform on (−1, 1); only the
/// final step is labeled.
pub fn gen_synthetic(task: &SyntheticTask, rng: &RngStream, exec: Exec) -> Dataset {
    let p = task.truth;
    let (_, w2) = p.branch_weights();
    let trajectories = exec.map_range(task.n_seq, |i| {
        let mut rng = rng.split(i as u64);
        let x0 = task.prior_std * rng.normal();
        let mut x = x0;
        let mut states = Vec::with_capacity(task.steps);
        let mut obs = Vec::with_capacity(task.steps);
        let mut actions = Vec::with_capacity(task.steps);
        for _ in 0..task.steps {
            let a = rng.uniform_range(-1.0, 1.0);
            x = p.a * x + p.b * a + p.sigma * rng.normal();
            let second = rng.uniform() < w2;
            let (c, off) = if second { (p.c2, p.offset2) } else { (p.c1, p.offset1) };
            let y = c * x + off + p.gamma * rng.normal();
            states.push(vec![x]);
            obs.push(vec![y]);
            actions.push(vec![a]);
        }
        Trajectory {
            initial_state: vec![x0],
            states,
            observations: obs,
            actions: Some(actions),
            clean_observations: None,
            labels: task.steps.checked_sub(1).into_iter().collect(),
        }
    });
    Dataset {
        header: DatasetHeader {
            task: TaskKind::Synthetic,
            state_topology: vec![Topology::Linear],
            obs_topology: vec![Topology::Linear],
            action_dim: 1,
            generator: serde_json::to_value(task).expect("serializable task"),
        },
        trajectories,
    }
}

/// Bearings dataset settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BearingsTask {
    #[serde(default)]
    pub world: BearingsWorld,
    pub n_seq: usize,
    pub steps: usize,
    /// Label every `label_stride`-th step; 1 labels every step.
    pub label_stride: usize,
}

/// Simulate the car and the radar. No actions are recorded.
pub fn gen_bearings(task: &BearingsTask, rng: &RngStream, exec: Exec) -> Dataset {
    let w = &task.world;
    let stride = task.label_stride.max(1);
    let trajectories = exec.map_range(task.n_seq, |i| {
        let mut rng = rng.split(i as u64);
        let r = rng.uniform_range(w.init_radius_min, w.init_radius_max);
        let phi = rng.uniform_range(-PI, PI);
        let mut heading = rng.uniform_range(-PI, PI);
        let mut speed = rng.uniform_range(w.speed_min, w.speed_max);
        let mut pos = [w.station[0] + r * phi.cos(), w.station[1] + r * phi.sin()];
        let initial_state = vec![pos[0], pos[1], heading];
        let mut states = Vec::with_capacity(task.steps);
        let mut obs = Vec::with_capacity(task.steps);
        let mut clean = Vec::with_capacity(task.steps);
        for _ in 0..task.steps {
            speed = (speed + w.speed_noise * rng.normal()).clamp(w.speed_min, w.speed_max);
            heading = wrap_angle(heading + w.turn_noise * rng.normal());
            pos = [pos[0] + speed * heading.cos(), pos[1] + speed * heading.sin()];
            let state = vec![pos[0], pos[1], heading];
            let psi = w.bearing(&state);
            let outlier = rng.uniform() < w.outlier_rate;
            let y = if outlier { rng.uniform_range(-PI, PI) } else { wrap_angle(psi + sample_von_mises(w.concentration, &mut rng)) };
            states.push(state);
            obs.push(vec![y]);
            clean.push(vec![psi]);
        }
        Trajectory {
            initial_state,
            labels: (0..task.steps).filter(|t| (t + 1) % stride == 0).collect(),
            states,
            observations: obs,
            actions: None,
            clean_observations: Some(clean),
        }
    });
    Dataset {
        header: DatasetHeader {
            task: TaskKind::Bearings,
            state_topology: BEARINGS_TOPOLOGY.to_vec(),
            obs_topology: vec![Topology::Circular],
            action_dim: 0,
            generator: serde_json::to_value(task).expect("serializable task"),
        },
        trajectories,
    }
}

const DATASET_MAGIC: &[u8; 8] = b"MDPFDSET";
pub const DATASET_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct FileHeader {
    dataset: DatasetHeader,
    state_dim: usize,
    obs_dim: usize,
    trajectories: Vec<TrajectoryLayout>,
}

#[derive(Serialize, Deserialize)]
struct TrajectoryLayout {
    steps: usize,
    labels: Vec<usize>,
    has_actions: bool,
    has_clean: bool,
}

/// Magic, `u32` version, `u64` header length, JSON header, then per
/// trajectory the initial state, states, observations, clean observations
/// and actions as little-endian `f64` blocks.
pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let state_dim = ds.header.state_topology.len();
    let obs_dim = ds.header.obs_topology.len();
    let header = FileHeader {
        dataset: ds.header.clone(),
        state_dim,
        obs_dim,
        trajectories: ds
            .trajectories
            .iter()
            .map(|t| TrajectoryLayout {
                steps: t.len(),
                labels: t.labels.clone(),
                has_actions: t.actions.is_some(),
                has_clean: t.clean_observations.is_some(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::new();
    buf.extend_from_slice(DATASET_MAGIC);
    buf.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    let mut put = |rows: &[Vec<f64>], width: usize| -> Result<()> {
        for r in rows {
            if r.len() != width {
                return Err(Error::Format(format!("row of width {} where {width} was expected", r.len())));
            }
            for v in r {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(())
    };
    for t in &ds.trajectories {
        put(std::slice::from_ref(&t.initial_state), state_dim)?;
        put(&t.states, state_dim)?;
        put(&t.observations, obs_dim)?;
        if let Some(c) = &t.clean_observations {
            put(c, obs_dim)?;
        }
        if let Some(a) = &t.actions {
            put(a, ds.header.action_dim)?;
        }
    }
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    decode_dataset(&fs::read(path)?)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    if cur.take(8)? != DATASET_MAGIC {
        return Err(Error::Format("not a dataset file (magic mismatch)".into()));
    }
    let version = cur.u32()?;
    if version != DATASET_VERSION {
        return Err(Error::Version { found: version, expected: DATASET_VERSION });
    }
    let len = cur.u64()? as usize;
    let header: FileHeader = serde_json::from_slice(cur.take(len)?)?;
    let mut rows = |n: usize, width: usize| -> Result<Vec<Vec<f64>>> {
        (0..n).map(|_| (0..width).map(|_| cur.f64()).collect::<Result<Vec<f64>>>()).collect()
    };
    let mut trajectories = Vec::with_capacity(header.trajectories.len());
    for lay in &header.trajectories {
        let initial_state = rows(1, header.state_dim)?.remove(0);
        let states = rows(lay.steps, header.state_dim)?;
        let observations = rows(lay.steps, header.obs_dim)?;
        let clean_observations = if lay.has_clean { Some(rows(lay.steps, header.obs_dim)?) } else { None };
        let actions = if lay.has_actions { Some(rows(lay.steps, header.dataset.action_dim)?) } else { None };
        if lay.labels.iter().any(|&l| l >= lay.steps) {
            return Err(Error::Format("label index beyond trajectory length".into()));
        }
        trajectories.push(Trajectory { initial_state, states, observations, actions, clean_observations, labels: lay.labels.clone() });
    }
    if cur.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - cur.pos)));
    }
    Ok(Dataset { header: header.dataset, trajectories })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn truth() -> SyntheticParams {
        SyntheticParams { a: 0.8, b: 1.0, c1: 1.5, offset1: 1.0, c2: -1.0, offset2: -2.0, v: -0.4, sigma: 1.0, gamma: 1.0 }
    }

    #[test]
    fn noiseless_random_walk_is_constant() {
        let mut p = truth();
        p.a = 1.0;
        p.b = 0.0;
        p.sigma = 0.0;
        let ds = gen_synthetic(&SyntheticTask { truth: p, prior_std: 1.0, n_seq: 5, steps: 6 }, &RngStream::new(1), Exec::Sequential);
        for t in &ds.trajectories {
            assert!(t.states.iter().all(|s| s[0] == t.initial_state[0]));
            assert_eq!(t.labels, vec![5]);
        }
    }

    #[test]
    fn single_branch_residual_variance() {
        let mut p = truth();
        p.v = -60.0;
        let ds = gen_synthetic(&SyntheticTask { truth: p, prior_std: 1.0, n_seq: 4000, steps: 5 }, &RngStream::new(2), Exec::Parallel);
        let r: Vec<f64> = ds
            .trajectories
            .iter()
            .flat_map(|t| t.states.iter().zip(&t.observations).map(|(s, o)| o[0] - p.c1 * s[0] - p.offset1))
            .collect();
        let var = r.iter().map(|v| v * v).sum::<f64>() / r.len() as f64;
        assert!((var - 1.0).abs() < 4.0 * (2.0f64 / r.len() as f64).sqrt(), "{var}");
    }

    #[test]
    fn clean_bearings_match_states() {
        let task = BearingsTask { world: BearingsWorld::default(), n_seq: 3, steps: 20, label_stride: 4 };
        let ds = gen_bearings(&task, &RngStream::new(3), Exec::Sequential);
        for t in &ds.trajectories {
            let clean = t.clean_observations.as_ref().unwrap();
            for (s, c) in t.states.iter().zip(clean) {
                assert_eq!(task.world.bearing(s), c[0]);
            }
            assert_eq!(t.labels, vec![3, 7, 11, 15, 19]);
            assert!(t.actions.is_none());
        }
    }

    #[test]
    fn container_round_trip_and_rejections() {
        let task = BearingsTask { world: BearingsWorld::default(), n_seq: 4, steps: 9, label_stride: 1 };
        let ds = gen_bearings(&task, &RngStream::new(4), Exec::Sequential);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        save_dataset(&ds, &path).unwrap();
        assert_eq!(load_dataset(&path).unwrap(), ds);

        let bytes = fs::read(&path).unwrap();
        assert!(matches!(decode_dataset(&bytes[..bytes.len() - 3]), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_dataset(&bad), Err(Error::Format(_))));
        let mut ver = bytes.clone();
        ver[8] = 9;
        assert!(matches!(decode_dataset(&ver), Err(Error::Version { found: 9, expected: 1 })));

        let empty = Dataset { header: ds.header.clone(), trajectories: vec![] };
        save_dataset(&empty, &path).unwrap();
        assert_eq!(load_dataset(&path).unwrap(), empty);
    }
}
