//! Whole-filter oracles: exact Bayes on the synthetic model, finite
//! differences through the full pipeline, truncation barriers and the
//! single-measurement reduction of the adaptive filter.

use mdpf::exec::Exec;
use mdpf::filter::{
    mixture_kf_run, run_filter, FilterConfig, FilterModels, FilterSystem, LearnedFilter, LearnedFilterSpec, RunInputs,
    SyntheticFilter, SyntheticParams, KF_COMPONENT_CAP,
};
use mdpf::kernels::{KernelFamily, Topology};
use mdpf::mixture::ParticleSet;
use mdpf::resample::{ResamplerConfig, ResamplerKind};
use mdpf::tasks::{gen_bearings, gen_synthetic, BearingsTask, BearingsWorld, SyntheticTask, Trajectory};
use mdpf::training::{trajectory_loss, LossKind};
use mdpf::{Graph, ParamStore, RngStream, Tensor};

const PRIOR_STD: f64 = 2.0;

fn truth() -> SyntheticParams {
    SyntheticParams { a: 0.8, b: 2.0, c1: 1.5, offset1: 2.0, c2: -1.0, offset2: -4.0, v: (0.4f64 / 0.6).ln(), sigma: 2.0, gamma: 2.0 }
}

fn synthetic_data(n_seq: usize, steps: usize, seed: u64) -> Vec<Trajectory> {
    let task = SyntheticTask { truth: truth(), prior_std: PRIOR_STD, n_seq, steps };
    gen_synthetic(&task, &RngStream::new(seed), Exec::Sequential).trajectories
}

fn synthetic_filter(kind: ResamplerKind, n: usize, params: &SyntheticParams) -> (ParamStore, SyntheticFilter) {
    let cfg = FilterConfig {
        n_particles: n,
        resampler: ResamplerConfig::of(kind),
        posterior_kernels: vec![KernelFamily::Gaussian],
        resampling_kernels: None,
        dual_measurement: false,
    };
    let mut store = ParamStore::new();
    let f = SyntheticFilter::build(&mut store, cfg, params, 0.5, None, PRIOR_STD).unwrap();
    (store, f)
}

fn normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    (-0.5 * ((x - mean) / sd).powi(2)).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
}

#[test]
fn mixture_kalman_filter_matches_grid_bayes() {
    let p = truth();
    let (w1, w2) = p.branch_weights();
    let (store, f) = synthetic_filter(ResamplerKind::TgDiscrete, 1, &p);
    let h = 0.02;
    let grid: Vec<f64> = (0..=4000).map(|i| -40.0 + h * i as f64).collect();
    for traj in synthetic_data(3, 3, 21) {
        let g = Graph::inference();
        let beliefs = mixture_kf_run(&f.model, &g, &store, &traj, PRIOR_STD, KF_COMPONENT_CAP).unwrap();
        let mut dens: Vec<f64> = grid.iter().map(|&x| normal_pdf(x, 0.0, PRIOR_STD)).collect();
        for t in 0..traj.len() {
            let a = traj.actions.as_ref().unwrap()[t][0];
            let y = traj.observations[t][0];
            let pred: Vec<f64> = grid
                .iter()
                .map(|&x| grid.iter().zip(&dens).map(|(&xp, &d)| d * normal_pdf(x, p.a * xp + p.b * a, p.sigma)).sum::<f64>() * h)
                .collect();
            dens = grid
                .iter()
                .zip(&pred)
                .map(|(&x, &q)| q * (w1 * normal_pdf(y, p.c1 * x + p.offset1, p.gamma) + w2 * normal_pdf(y, p.c2 * x + p.offset2, p.gamma)))
                .collect();
            let z: f64 = dens.iter().sum::<f64>() * h;
            dens.iter_mut().for_each(|d| *d /= z);
            let err = grid.iter().zip(&dens).map(|(&x, &d)| (beliefs[t].density(x) - d).abs()).fold(0.0, f64::max);
            assert!(err < 1e-6, "step {t}: max density error {err:.2e}");
        }
    }
}

#[test]
fn large_particle_filter_matches_the_exact_posterior_mean() {
    let p = truth();
    let traj = &synthetic_data(1, 5, 8)[0];
    let (store, f) = synthetic_filter(ResamplerKind::TgDiscrete, 10_000, &p);
    let exact = {
        let g = Graph::inference();
        mixture_kf_run(&f.model, &g, &store, traj, PRIOR_STD, KF_COMPONENT_CAP).unwrap().last().unwrap().mean()
    };
    let runs = 10;
    let rng = RngStream::new(4);
    let means: Vec<f64> = (0..runs)
        .map(|r| {
            let g = Graph::inference();
            let out = f.run(&g, &store, traj, None, &mut rng.split(r)).unwrap();
            out.means.last().unwrap()[0]
        })
        .collect();
    let avg = means.iter().sum::<f64>() / runs as f64;
    let sd = (means.iter().map(|m| (m - avg).powi(2)).sum::<f64>() / (runs - 1) as f64).sqrt();
    let se = sd / (runs as f64).sqrt();
    assert!((avg - exact).abs() < 3.0 * se, "particle mean {avg} vs exact {exact} (se {se:.2e})");
}

/// Loss of one synthetic trajectory with the given store and random stream.
fn loss_value(f: &SyntheticFilter, store: &ParamStore, traj: &Trajectory, seed: u64) -> f64 {
    let g = Graph::inference();
    trajectory_loss(f, &g, store, traj, LossKind::Nll, 1, None, &mut RngStream::new(seed)).unwrap().unwrap().item()
}

#[test]
fn pathwise_estimators_match_finite_differences_through_the_filter() {
    // These estimators differentiate the sampled path itself, so a central
    // difference under common random numbers is their exact reference. The
    // truncated and mixture estimators cut or reweight that path instead, and
    // transport differentiates only the last few Sinkhorn sweeps.
    let init = SyntheticParams { a: 0.6, b: 1.4, c1: 1.2, offset1: 1.0, c2: -0.7, offset2: -3.0, v: 0.3, ..truth() };
    let trajs = synthetic_data(3, 2, 33);
    let h = 1e-6;
    for kind in [ResamplerKind::Sr, ResamplerKind::Concrete] {
        let (store, f) = synthetic_filter(kind, 3, &init);
        for (i, traj) in trajs.iter().enumerate() {
            let seed = 100 + i as u64;
            let g = Graph::new();
            let loss = trajectory_loss(&f, &g, &store, traj, LossKind::Nll, 1, None, &mut RngStream::new(seed)).unwrap().unwrap();
            g.backward(loss).unwrap();
            let grads = g.gradients(&store);
            for id in store.ids().filter(|&id| store.entry(id).trainable) {
                let shifted = |delta: f64| {
                    let mut s = store.clone();
                    s.value_mut(id).data_mut()[0] += delta;
                    loss_value(&f, &s, traj, seed)
                };
                let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
                let a = grads.get(id).data()[0];
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-2);
                assert!(rel < 1e-3, "{} traj {i} {}: analytic {a} vs fd {fd}", kind.name(), store.entry(id).name);
            }
        }
    }
}

#[test]
fn truncation_blocks_gradients_into_earlier_windows() {
    let (store, f) = synthetic_filter(ResamplerKind::Iwsg, 6, &truth());
    let traj = &synthetic_data(1, 4, 5)[0];
    let models = FilterModels { dynamics: &f.model, measurement: &f.model, resampling_measurement: None, bandwidths: f.bandwidths };
    let run = |window: Option<usize>| {
        let g = Graph::new();
        let start = g.variable(Tensor::matrix(6, 1, vec![-1.0, -0.5, 0.0, 0.2, 0.9, 1.4]));
        let init = ParticleSet::uniform(start, vec![Topology::Linear]).unwrap();
        let inputs = RunInputs { observations: &traj.observations, actions: traj.actions.as_deref(), tbptt_window: window };
        let out = run_filter(&f.cfg, &models, &g, &store, &inputs, init, &mut RngStream::new(9)).unwrap();
        let nll = out.posteriors[3].log_density_at(&traj.states[3]).unwrap().neg();
        g.backward(nll).unwrap();
        let to_start = g.grad(start).data().iter().map(|v| v.abs()).sum::<f64>();
        let to_a = g.gradients(&store).get(f.model.a).data()[0];
        (nll.item(), to_start, to_a)
    };
    let (cut_loss, cut_start, cut_a) = run(Some(2));
    let (full_loss, full_start, _) = run(None);
    assert_eq!(cut_loss, full_loss);
    assert_eq!(cut_start, 0.0);
    assert!(full_start > 0.0);
    assert!(cut_a != 0.0);
}

fn bearings_filter(split: bool) -> (ParamStore, LearnedFilter) {
    let families = vec![KernelFamily::Gaussian, KernelFamily::Gaussian, KernelFamily::VonMises];
    let bw = vec![0.3, 0.3, 0.4];
    let cfg = FilterConfig {
        n_particles: 8,
        resampler: ResamplerConfig::of(ResamplerKind::Iwsg),
        posterior_kernels: families.clone(),
        resampling_kernels: split.then(|| families.clone()),
        dual_measurement: false,
    };
    let spec = LearnedFilterSpec {
        posterior_bandwidth: bw.clone(),
        resampling_bandwidth: split.then(|| bw.clone()),
        init_noise: Some(vec![0.1, 0.1, 0.1]),
        network: Default::default(),
    };
    let mut store = ParamStore::new();
    let f = LearnedFilter::build(&mut store, cfg, &[Topology::Circular], 0, &spec, &mut RngStream::new(2)).unwrap();
    (store, f)
}

#[test]
fn single_measurement_adaptive_filter_reduces_to_the_plain_one() {
    let task = BearingsTask { world: BearingsWorld::default(), n_seq: 2, steps: 6, label_stride: 2 };
    let data = gen_bearings(&task, &RngStream::new(6), Exec::Sequential);
    let (plain_store, plain) = bearings_filter(false);
    let (split_store, split) = bearings_filter(true);
    for (i, traj) in data.trajectories.iter().enumerate() {
        let grads = |store: &ParamStore, f: &LearnedFilter| {
            let g = Graph::new();
            let loss = trajectory_loss(f, &g, store, traj, LossKind::Nll, 1, Some(4), &mut RngStream::new(i as u64)).unwrap().unwrap();
            g.backward(loss).unwrap();
            (loss.item(), g.gradients(store))
        };
        let (plain_loss, pg) = grads(&plain_store, &plain);
        let (split_loss, sg) = grads(&split_store, &split);
        assert_eq!(plain_loss, split_loss);
        for id in plain_store.ids() {
            let name = &plain_store.entry(id).name;
            let mut want = sg.get(split_store.find(name).unwrap()).data().to_vec();
            if id == plain.bandwidths.posterior {
                let r = sg.get(split.bandwidths.resampling.unwrap());
                want.iter_mut().zip(r.data()).for_each(|(w, r)| *w += r);
            }
            for (got, want) in pg.get(id).data().iter().zip(&want) {
                assert!((got - want).abs() <= 1e-10 * (1.0 + want.abs()), "{name}: {got} vs {want}");
            }
        }
    }
}
