//! The four verbs. Each returns a summary and writes its files under the
//! experiment's output directory. Everything except `runtime.json` is a pure
//! function of the config and seed.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use mdpf::exec::Exec;
use mdpf::filter::{mixture_kf_nll, mixture_kf_run, FilterSystem, SyntheticModel, KF_COMPONENT_CAP};
use mdpf::kernels::Topology;
use mdpf::metrics::{
    evaluate, filter_runtime_scaling, gradient_probe, runtime_scaling, write_csv, CsvRow, ProbeResult, ProbeSpec, RmseReport,
    ScalingReport, StepMode,
};
use mdpf::models::{load_checkpoint, save_checkpoint};
use mdpf::tasks::{gen_bearings, gen_synthetic, load_dataset, save_dataset, BearingsTask, Dataset, SyntheticTask};
use mdpf::training::{fit, pretrain_measurement, AdamState, EpochRecord, FitInputs, FitState, Plateau};
use mdpf::{Graph, ParamStore, RngStream};

use crate::config::{ExperimentConfig, Split, TaskConfig};
use crate::system::{build_system, System};
use crate::{CliError, Result};

/// Keys of the independent random streams derived from the seed.
mod streams {
    pub const MODEL_INIT: u64 = 10;
    pub const PRETRAIN: u64 = 11;
    pub const FIT: u64 = 12;
    pub const EVAL: u64 = 13;
    pub const PROBES: u64 = 14;
    pub const RUNTIME: u64 = 15;
}

fn root(cfg: &ExperimentConfig) -> RngStream {
    RngStream::new(cfg.seed)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> mdpf::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

// ---------------------------------------------------------------- generate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub split: String,
    pub path: PathBuf,
    pub trajectories: usize,
    pub steps: usize,
    pub labels: usize,
}

fn split_size(task: &TaskConfig, split: Split) -> usize {
    match (task, split) {
        (TaskConfig::Synthetic { train_seqs, .. }, Split::Train) | (TaskConfig::Bearings { train_seqs, .. }, Split::Train) => *train_seqs,
        (TaskConfig::Synthetic { val_seqs, .. }, Split::Val) | (TaskConfig::Bearings { val_seqs, .. }, Split::Val) => *val_seqs,
        (TaskConfig::Synthetic { eval_seqs, .. }, Split::Eval) | (TaskConfig::Bearings { eval_seqs, .. }, Split::Eval) => *eval_seqs,
    }
}

/// Simulate one split from its own stream.
pub fn generate_split(cfg: &ExperimentConfig, split: Split, exec: Exec) -> Dataset {
    let rng = root(cfg).split(split.key());
    let n_seq = split_size(&cfg.task, split);
    match &cfg.task {
        TaskConfig::Synthetic { truth, prior_std, steps, .. } => {
            gen_synthetic(&SyntheticTask { truth: *truth, prior_std: *prior_std, n_seq, steps: *steps }, &rng, exec)
        }
        TaskConfig::Bearings { world, train_steps, train_label_stride, eval_steps, .. } => {
            let (steps, label_stride) = match split {
                Split::Eval => (*eval_steps, 1),
                _ => (*train_steps, *train_label_stride),
            };
            gen_bearings(&BearingsTask { world: world.clone(), n_seq, steps, label_stride }, &rng, exec)
        }
    }
}

/// Write every non-empty split.
pub fn generate(cfg: &ExperimentConfig, exec: Exec) -> Result<Vec<SplitSummary>> {
    let mut out = Vec::new();
    for split in [Split::Train, Split::Val, Split::Eval] {
        if split_size(&cfg.task, split) == 0 {
            continue;
        }
        let ds = generate_split(cfg, split, exec);
        let path = cfg.dataset_path(split);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        save_dataset(&ds, &path)?;
        out.push(SplitSummary {
            split: split.name().into(),
            path,
            trajectories: ds.len(),
            steps: ds.trajectories.first().map_or(0, |t| t.len()),
            labels: ds.trajectories.iter().map(|t| t.labels.len()).sum(),
        });
    }
    Ok(out)
}

/// Load a split, or `None` when the config asks for no trajectories in it.
pub fn load_split(cfg: &ExperimentConfig, split: Split) -> Result<Option<Dataset>> {
    if split_size(&cfg.task, split) == 0 {
        return Ok(None);
    }
    let path = cfg.dataset_path(split);
    if !path.exists() {
        return Err(CliError::Missing(format!("{} not found; run `mdpf generate` with this config first", path.display())));
    }
    Ok(Some(load_dataset(&path)?))
}

fn require_split(cfg: &ExperimentConfig, split: Split) -> Result<Dataset> {
    load_split(cfg, split)?.ok_or_else(|| CliError::Config(format!("the {} split is empty", split.name())))
}

// ---------------------------------------------------------------- checkpoints

/// Training position stored next to the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainState {
    phase: usize,
    epoch: usize,
    /// Lines of `metrics.jsonl` covered by this checkpoint.
    records: usize,
    plateau: Plateau,
    pretrained: bool,
}

const STATE_FILE: &str = "state.json";

/// Write into a scratch directory, then swap it in, so a crash never
/// leaves a half-written checkpoint behind.
fn save_checkpoint_atomic(dir: &Path, store: &ParamStore, adam: &AdamState, state: &TrainState) -> mdpf::Result<()> {
    let parent = dir.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(parent)?;
    let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "checkpoint".into());
    let tmp = parent.join(format!("{name}.tmp"));
    let old = parent.join(format!("{name}.old"));
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    save_checkpoint(store, &adam.to_arrays(store), &tmp)?;
    write_json(&tmp.join(STATE_FILE), state)?;
    if old.exists() {
        fs::remove_dir_all(&old)?;
    }
    if dir.exists() {
        fs::rename(dir, &old)?;
    }
    fs::rename(&tmp, dir)?;
    if old.exists() {
        fs::remove_dir_all(&old)?;
    }
    Ok(())
}

/// The checkpoint in `dir`, or the one a crash left mid-swap.
fn locate_checkpoint(dir: &Path) -> Option<PathBuf> {
    if dir.join("params.bin").exists() {
        return Some(dir.to_path_buf());
    }
    let name = dir.file_name()?.to_string_lossy().into_owned();
    let old = dir.parent().unwrap_or(Path::new(".")).join(format!("{name}.old"));
    old.join("params.bin").exists().then_some(old)
}

fn read_records(path: &Path, keep: usize) -> Result<Vec<EpochRecord>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(path)?;
    let records: Vec<EpochRecord> =
        text.lines().take(keep).map(serde_json::from_str).collect::<std::result::Result<_, _>>()?;
    if records.len() != keep {
        return Err(CliError::Missing(format!("{} holds {} records, the checkpoint expects {keep}", path.display(), records.len())));
    }
    Ok(records)
}

fn write_records(path: &Path, records: &[EpochRecord]) -> Result<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

// ---------------------------------------------------------------- train

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub name: String,
    pub seed: u64,
    pub epochs: usize,
    pub final_train_loss: Option<f64>,
    pub final_val_nll: Option<f64>,
    /// Learned values of the synthetic model's parameters.
    pub learned: Option<BTreeMap<String, f64>>,
    pub truth: Option<BTreeMap<String, f64>>,
    pub pretrain_final_loss: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub summary: TrainSummary,
    pub records: Vec<EpochRecord>,
}

/// Train per the config, resuming from the output directory's checkpoint
/// when `resume` is set and one exists.
pub fn train(cfg: &ExperimentConfig, exec: Exec, resume: bool) -> Result<TrainReport> {
    let tsec = cfg.train.as_ref().ok_or_else(|| CliError::Config("missing [train]".into()))?;
    let train_ds = require_split(cfg, Split::Train)?;
    let val_ds = load_split(cfg, Split::Val)?;
    let rng = root(cfg);
    let mut store = ParamStore::new();
    let sys = build_system(cfg, &mut store, &train_ds.header.obs_topology, train_ds.header.action_dim, &mut rng.split(streams::MODEL_INIT))?;
    let fixed = sys.fixed_params();

    fs::create_dir_all(&cfg.out_dir)?;
    let ckpt_dir = cfg.checkpoint_dir();
    let metrics_path = cfg.out_dir.join("metrics.jsonl");
    let mut state = FitState::start(&store, &tsec.config);
    let mut pretrained = false;
    let mut records = Vec::new();
    match locate_checkpoint(&ckpt_dir).filter(|_| resume) {
        Some(dir) => {
            let extra = load_checkpoint(&mut store, &dir)?;
            let saved: TrainState = serde_json::from_str(&fs::read_to_string(dir.join(STATE_FILE))?)?;
            state = FitState { phase: saved.phase, epoch: saved.epoch, adam: AdamState::from_arrays(&store, &extra)?, plateau: saved.plateau };
            pretrained = saved.pretrained;
            records = read_records(&metrics_path, saved.records)?;
            write_records(&metrics_path, &records)?;
            eprintln!("resuming at phase {} epoch {} ({} records)", state.phase, state.epoch, records.len());
        }
        None => write_records(&metrics_path, &[])?,
    }

    let mut pretrain_final = Vec::new();
    if let (Some(pcfg), false) = (&tsec.pretrain, pretrained) {
        let System::Learned(learned) = &sys else {
            return Err(CliError::Config("measurement pre-training needs a learned model".into()));
        };
        let prng = rng.split(streams::PRETRAIN);
        let mut traces = Vec::new();
        let mut models = vec![(&learned.measurement, learned.cfg.posterior_kernels.clone())];
        if let (Some(m), Some(k)) = (&learned.resampling_measurement, &learned.cfg.resampling_kernels) {
            models.push((m, k.clone()));
        }
        for (k, (meas, families)) in models.into_iter().enumerate() {
            let start = Instant::now();
            let trace = pretrain_measurement(meas, &families, &mut store, &train_ds.trajectories, pcfg, &prng.split(k as u64), exec)?;
            eprintln!("pretrained measurement model {k}: loss {:?} -> {:?} in {:.1}s", trace.first(), trace.last(), start.elapsed().as_secs_f64());
            pretrain_final.push(trace.last().copied().unwrap_or(f64::NAN));
            traces.push(trace);
        }
        write_json(&cfg.out_dir.join("pretrain.json"), &traces)?;
        pretrained = true;
        let st = TrainState { phase: state.phase, epoch: state.epoch, records: records.len(), plateau: state.plateau.clone(), pretrained };
        save_checkpoint_atomic(&ckpt_dir, &store, &state.adam, &st)?;
    }

    let val = val_ds.map(|d| d.trajectories).unwrap_or_default();
    let fit_rng = rng.split(streams::FIT);
    let inputs = FitInputs {
        train: &train_ds.trajectories,
        val: &val,
        cfg: &tsec.config,
        phases: &tsec.phases,
        fixed: &fixed,
        rng: &fit_rng,
        exec,
    };
    let mut clock = Instant::now();
    let final_state = fit(&sys, &mut store, &inputs, state, |rec, store, st| {
        records.push(rec.clone());
        let mut f = fs::OpenOptions::new().append(true).create(true).open(&metrics_path)?;
        writeln!(f, "{}", serde_json::to_string(rec)?)?;
        let ts = TrainState { phase: st.phase, epoch: st.epoch, records: records.len(), plateau: st.plateau.clone(), pretrained };
        save_checkpoint_atomic(&ckpt_dir, store, &st.adam, &ts)?;
        eprintln!(
            "phase {} epoch {:>3}: loss {:.4} val_nll {} grad {:.3e} ({:.1}s)",
            rec.phase,
            rec.epoch,
            rec.train_loss,
            rec.val_nll.map_or("-".into(), |v| format!("{v:.4}")),
            rec.grad_norm_mean,
            clock.elapsed().as_secs_f64()
        );
        clock = Instant::now();
        Ok(())
    })?;
    let ts = TrainState {
        phase: final_state.phase,
        epoch: final_state.epoch,
        records: records.len(),
        plateau: final_state.plateau.clone(),
        pretrained,
    };
    save_checkpoint_atomic(&ckpt_dir, &store, &final_state.adam, &ts)?;

    let (learned, truth) = match (&sys, &cfg.task) {
        (System::Synthetic(s), TaskConfig::Synthetic { truth, .. }) => {
            let l = s.model.values(&store).learnable().iter().map(|(k, v)| (k.to_string(), *v)).collect();
            let t = truth.learnable().iter().map(|(k, v)| (k.to_string(), *v)).collect();
            (Some(l), Some(t))
        }
        _ => (None, None),
    };
    let summary = TrainSummary {
        name: cfg.name.clone(),
        seed: cfg.seed,
        epochs: records.len(),
        final_train_loss: records.last().map(|r| r.train_loss),
        final_val_nll: records.last().and_then(|r| r.val_nll),
        learned,
        truth,
        pretrain_final_loss: pretrain_final,
    };
    write_json(&cfg.out_dir.join("train_summary.json"), &summary)?;
    Ok(TrainReport { summary, records })
}

// ---------------------------------------------------------------- eval

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub name: String,
    pub seed: u64,
    pub trajectories: usize,
    pub mean_nll: f64,
    pub median_nll: f64,
    pub rmse: RmseReport,
    /// Mean NLL of the exact posterior under the generating parameters.
    pub oracle_nll: Option<f64>,
}

/// Rebuild the model, load `checkpoint` (default: the output directory's)
/// and score the evaluation split.
pub fn eval(cfg: &ExperimentConfig, exec: Exec, checkpoint: Option<&Path>) -> Result<EvalSummary> {
    let esec = cfg.eval.clone().unwrap_or_default();
    let ds = require_split(cfg, Split::Eval)?;
    let data = &ds.trajectories[..esec.limit.unwrap_or(ds.len()).min(ds.len())];
    let rng = root(cfg);
    let mut store = ParamStore::new();
    let sys = build_system(cfg, &mut store, &ds.header.obs_topology, ds.header.action_dim, &mut rng.split(streams::MODEL_INIT))?;
    let dir = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| cfg.checkpoint_dir());
    let dir = locate_checkpoint(&dir).ok_or_else(|| CliError::Missing(format!("no checkpoint in {}", dir.display())))?;
    load_checkpoint(&mut store, &dir)?;

    let report = evaluate(&sys, &store, data, &rng.split(streams::EVAL), exec, esec.dumps)?;
    let topo = sys.topology();
    let has_linear = topo.contains(&Topology::Linear);
    let has_angle = topo.contains(&Topology::Circular);
    let mut rows = Vec::new();
    for (i, m) in report.per_trajectory.iter().enumerate() {
        let mut push = |metric: &str, value: f64| {
            rows.push(CsvRow { method: cfg.name.clone(), seed: cfg.seed, trajectory: Some(i), metric: metric.into(), value })
        };
        push("nll", m.nll);
        if has_linear {
            push("rmse_position", m.rmse.position);
        }
        if has_angle {
            push("rmse_angle", m.rmse.angle);
        }
        push("rmse_combined", m.rmse.combined);
    }
    fs::create_dir_all(&cfg.out_dir)?;
    write_csv(&cfg.out_dir.join("eval.csv"), &rows)?;
    if esec.dumps {
        let mut text = String::new();
        for d in &report.dumps {
            text.push_str(&serde_json::to_string(d)?);
            text.push('\n');
        }
        fs::write(cfg.out_dir.join("posteriors.jsonl"), text)?;
    }

    let oracle_nll = match (&sys, &cfg.task) {
        (System::Synthetic(s), TaskConfig::Synthetic { truth, .. }) => Some(oracle_nll(truth, s.prior_std, data)?),
        _ => None,
    };
    let nlls: Vec<f64> = report.per_trajectory.iter().map(|m| m.nll).collect();
    let summary = EvalSummary {
        name: cfg.name.clone(),
        seed: cfg.seed,
        trajectories: data.len(),
        mean_nll: report.mean_nll(),
        median_nll: median(&nlls),
        rmse: report.pooled_rmse(),
        oracle_nll,
    };
    write_json(&cfg.out_dir.join("eval_summary.json"), &summary)?;
    Ok(summary)
}

/// Exact-filter NLL at the labels, averaged over trajectories.
fn oracle_nll(truth: &mdpf::filter::SyntheticParams, prior_std: f64, data: &[mdpf::tasks::Trajectory]) -> Result<f64> {
    let mut store = ParamStore::new();
    let model = SyntheticModel::new(&mut store, truth);
    let mut total = 0.0;
    for traj in data {
        let g = Graph::inference();
        let beliefs = mixture_kf_run(&model, &g, &store, traj, prior_std, KF_COMPONENT_CAP)?;
        let mut s = 0.0;
        for &t in &traj.labels {
            s += mixture_kf_nll(&beliefs[t], traj.states[t][0])?.item();
        }
        total += s / traj.labels.len().max(1) as f64;
    }
    Ok(total / data.len().max(1) as f64)
}

// ---------------------------------------------------------------- diagnose

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeOutcome {
    pub name: String,
    pub resampler: String,
    #[serde(flatten)]
    pub result: ProbeResult,
    pub z: f64,
    pub pass: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioOutcome {
    pub numerator: String,
    pub denominator: String,
    pub ratio: f64,
    pub min: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseReport {
    pub name: String,
    pub seed: u64,
    pub replicates: usize,
    pub probes: Vec<ProbeOutcome>,
    pub ratios: Vec<RatioOutcome>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeCheck {
    pub report: ScalingReport,
    pub band: [f64; 2],
    pub pass: bool,
}

impl SlopeCheck {
    fn new(report: ScalingReport, band: [f64; 2]) -> SlopeCheck {
        let pass = report.slope >= band[0] && report.slope <= band[1];
        SlopeCheck { report, band, pass }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuntimeReport {
    pub calibration_linear: SlopeCheck,
    pub calibration_quadratic: SlopeCheck,
    pub train_step: SlopeCheck,
    pub inference_step: SlopeCheck,
}

/// Work units per particle for the calibration loads.
const CALIBRATION_UNIT: usize = 20_000;

fn linear_load(n: usize) {
    let mut acc = 0.0f64;
    for i in 0..n * CALIBRATION_UNIT {
        acc += (i as f64).sqrt();
    }
    std::hint::black_box(acc);
}

fn quadratic_load(n: usize) {
    let mut acc = 0.0f64;
    for i in 0..n {
        for j in 0..n * CALIBRATION_UNIT / 200 {
            acc += ((i ^ j) as f64).sqrt();
        }
    }
    std::hint::black_box(acc);
}

fn probe_outcome(case: &crate::config::ProbeCase, result: ProbeResult) -> ProbeOutcome {
    let z = result.z_score();
    let mut checks = Vec::new();
    if let Some(m) = case.max_z {
        checks.push(z <= m);
    }
    if let Some(e) = case.expected {
        checks.push((result.mean - e).abs() <= case.tolerance && result.variance.sqrt() <= case.tolerance);
    }
    let pass = (!checks.is_empty()).then(|| checks.iter().all(|&c| c));
    ProbeOutcome { name: case.name.clone(), resampler: case.resampler.kind.name().into(), result, z, pass }
}

/// Gradient probes and variance ratios. Deterministic given the seed.
pub fn diagnose_probes(cfg: &ExperimentConfig, exec: Exec) -> Result<DiagnoseReport> {
    let dsec = cfg.diagnose.as_ref().ok_or_else(|| CliError::Config("missing [diagnose]".into()))?;
    let prng = root(cfg).split(streams::PROBES);
    let mut probes = Vec::new();
    for case in &dsec.probes {
        case.resampler.validate()?;
        let spec = ProbeSpec {
            centers: case.centers.clone(),
            logits: case.logits.clone(),
            bandwidth: case.bandwidth,
            family: case.family,
            n_out: case.n_out,
            target: case.target,
            loss: case.loss,
        };
        if spec.centers.len() != spec.logits.len() || spec.centers.is_empty() {
            return Err(CliError::Config(format!("probe {}: centers and logits must be non-empty and equally long", case.name)));
        }
        let result = gradient_probe(&case.resampler, &spec, dsec.replicates, &prng, exec)?;
        probes.push(probe_outcome(case, result));
    }
    let mut ratios = Vec::new();
    for r in &dsec.ratios {
        let find = |name: &str| {
            probes.iter().find(|p| p.name == name).ok_or_else(|| CliError::Config(format!("ratio refers to unknown probe {name}")))
        };
        let ratio = find(&r.numerator)?.result.variance / find(&r.denominator)?.result.variance;
        ratios.push(RatioOutcome { numerator: r.numerator.clone(), denominator: r.denominator.clone(), ratio, min: r.min, pass: ratio >= r.min });
    }
    let pass = probes.iter().all(|p| p.pass != Some(false)) && ratios.iter().all(|r| r.pass);
    Ok(DiagnoseReport { name: cfg.name.clone(), seed: cfg.seed, replicates: dsec.replicates, probes, ratios, pass })
}

/// Wall-clock scaling of the calibration loads and of the learned filter.
pub fn diagnose_runtime(cfg: &ExperimentConfig) -> Result<Option<RuntimeReport>> {
    let Some(rt) = cfg.diagnose.as_ref().and_then(|d| d.runtime.as_ref()) else {
        return Ok(None);
    };
    let TaskConfig::Bearings { world, .. } = &cfg.task else {
        return Err(CliError::Config("runtime scaling needs the bearings task".into()));
    };
    let rng = root(cfg);
    let ds = gen_bearings(&BearingsTask { world: world.clone(), n_seq: 1, steps: rt.steps, label_stride: 1 }, &rng.split(streams::RUNTIME), Exec::Sequential);
    let mut store = ParamStore::new();
    let System::Learned(sys) = build_system(cfg, &mut store, &ds.header.obs_topology, ds.header.action_dim, &mut rng.split(streams::MODEL_INIT))? else {
        return Err(CliError::Config("runtime scaling needs a learned model".into()));
    };
    let traj = &ds.trajectories[0];
    let tol = 0.15;
    Ok(Some(RuntimeReport {
        calibration_linear: SlopeCheck::new(runtime_scaling(&rt.particles, rt.reps, linear_load), [1.0 - tol, 1.0 + tol]),
        calibration_quadratic: SlopeCheck::new(runtime_scaling(&rt.particles, rt.reps, quadratic_load), [2.0 - tol, 2.0 + tol]),
        train_step: SlopeCheck::new(
            filter_runtime_scaling(&sys, &store, traj, &rt.particles, StepMode::TrainStep, rt.reps, cfg.seed),
            rt.train_slope,
        ),
        inference_step: SlopeCheck::new(
            filter_runtime_scaling(&sys, &store, traj, &rt.particles, StepMode::InferenceStep, rt.reps, cfg.seed),
            [0.0, rt.inference_slope_max],
        ),
    }))
}

/// Run the probes and, when configured, the timing study. Writes
/// `diagnose.csv` and `diagnose.json`, plus `runtime.json` for timings.
pub fn diagnose(cfg: &ExperimentConfig, exec: Exec) -> Result<(DiagnoseReport, Option<RuntimeReport>)> {
    let report = diagnose_probes(cfg, exec)?;
    let mut rows = Vec::new();
    for p in &report.probes {
        let r = &p.result;
        for (metric, value) in [("mean", r.mean), ("variance", r.variance), ("std_err", r.std_err), ("reference", r.reference), ("z", p.z)] {
            rows.push(CsvRow { method: p.name.clone(), seed: cfg.seed, trajectory: None, metric: metric.into(), value });
        }
    }
    for r in &report.ratios {
        rows.push(CsvRow {
            method: format!("{}/{}", r.numerator, r.denominator),
            seed: cfg.seed,
            trajectory: None,
            metric: "variance_ratio".into(),
            value: r.ratio,
        });
    }
    fs::create_dir_all(&cfg.out_dir)?;
    write_csv(&cfg.out_dir.join("diagnose.csv"), &rows)?;
    write_json(&cfg.out_dir.join("diagnose.json"), &report)?;
    let runtime = diagnose_runtime(cfg)?;
    if let Some(rt) = &runtime {
        write_json(&cfg.out_dir.join("runtime.json"), rt)?;
    }
    Ok((report, runtime))
}
