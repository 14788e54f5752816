//! Forward-distribution and transport checks for every resampler.

use mdpf::kernels::{KernelFamily, Topology};
use mdpf::mixture::{weighted_mean_values, MixtureDensity, ParticleSet};
use mdpf::resample::{resample, sinkhorn, transport_cost, ResamplerConfig, ResamplerKind};
use mdpf::{Graph, RngStream, Tensor};

const CENTERS: [f64; 5] = [-1.5, -0.2, 0.4, 1.1, 2.6];
const WEIGHTS: [f64; 5] = [0.1, 0.3, 0.05, 0.35, 0.2];

fn log_weights() -> Vec<f64> {
    WEIGHTS.iter().map(|w| w.ln()).collect()
}

/// Weighted mean of one resampled set drawn from the fixed 1-D mixture.
fn resampled_mean(kind: ResamplerKind, n_out: usize, rng: &mut RngStream) -> f64 {
    let g = Graph::new();
    let centers = g.variable(Tensor::matrix(CENTERS.len(), 1, CENTERS.to_vec()));
    let lw = g.variable(Tensor::vector(log_weights()));
    let ps = ParticleSet::new(centers, lw, vec![Topology::Linear]).unwrap();
    let mix = MixtureDensity::new(centers, lw, vec![KernelFamily::Gaussian], g.constant(Tensor::vector(vec![0.4]))).unwrap();
    let out = resample(&ResamplerConfig::of(kind), &ps, &mix, n_out, rng).unwrap();
    let w = out.set.weights();
    weighted_mean_values(&out.set.particles.value(), &w, &[Topology::Linear]).0[0]
}

#[test]
fn stochastic_resamplers_preserve_the_mean() {
    let target: f64 = CENTERS.iter().zip(WEIGHTS).map(|(c, w)| c * w).sum();
    let reps = 20_000;
    for kind in [
        ResamplerKind::TgDiscrete,
        ResamplerKind::Dis,
        ResamplerKind::Sr,
        ResamplerKind::TgMixture,
        ResamplerKind::Irg,
        ResamplerKind::Iwsg,
    ] {
        let rng = RngStream::new(11);
        let xs: Vec<f64> = (0..reps).map(|r| resampled_mean(kind, 5, &mut rng.split(r))).collect();
        let mean = xs.iter().sum::<f64>() / reps as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
        let se = (var / reps as f64).sqrt();
        assert!((mean - target).abs() < 3.0 * se, "{}: mean {mean} vs {target} (se {se})", kind.name());
    }
}

#[test]
fn transport_preserves_the_mean() {
    let target: f64 = CENTERS.iter().zip(WEIGHTS).map(|(c, w)| c * w).sum();
    let got = resampled_mean(ResamplerKind::Ot, 5, &mut RngStream::new(0));
    // Column marginals hold to the Sinkhorn threshold.
    assert!((got - target).abs() < 1e-3 * CENTERS.iter().map(|c| c.abs()).fold(0.0, f64::max), "{got} vs {target}");
}

#[test]
fn sinkhorn_marginals_meet_the_threshold() {
    let mut rng = RngStream::new(5);
    for trial in 0..20 {
        let n = 25;
        let g = Graph::new();
        let data: Vec<f64> = (0..n).flat_map(|_| [2.0 * rng.normal(), rng.uniform_range(-std::f64::consts::PI, std::f64::consts::PI)]).collect();
        let raw: Vec<f64> = (0..n).map(|_| 2.0 * rng.normal()).collect();
        let lse = raw.iter().map(|v| v.exp()).sum::<f64>().ln();
        let lw = g.constant(Tensor::vector(raw.iter().map(|v| v - lse).collect()));
        let ps = ParticleSet::new(g.constant(Tensor::matrix(n, 2, data)), lw, vec![Topology::Linear, Topology::Circular]).unwrap();
        let cfg = ResamplerConfig::default();
        let (plan, report) = sinkhorn(transport_cost(&ps).unwrap(), lw, cfg.ot_epsilon, cfg.ot_scaling, cfg.ot_threshold, cfg.ot_max_iters).unwrap();
        assert!(report.converged, "trial {trial}: {report:?}");
        let p = plan.value();
        let w = ps.weights();
        let col: f64 = (0..n).map(|j| ((0..n).map(|i| p.at2(i, j)).sum::<f64>() - w[j]).abs()).sum();
        let row: f64 = (0..n).map(|i| ((0..n).map(|j| p.at2(i, j)).sum::<f64>() - 1.0 / n as f64).abs()).sum();
        assert!(col < 1e-3 && row < 1e-3, "trial {trial}: column residual {col}, row residual {row}");
    }
}

/// Ancestor counts of `calls` resampling calls.
fn ancestor_counts(kind: ResamplerKind, calls: u64) -> Vec<f64> {
    let mut counts = vec![0.0; CENTERS.len()];
    let rng = RngStream::new(3);
    for c in 0..calls {
        let g = Graph::new();
        let centers = g.constant(Tensor::matrix(CENTERS.len(), 1, CENTERS.to_vec()));
        let lw = g.constant(Tensor::vector(log_weights()));
        let ps = ParticleSet::new(centers, lw, vec![Topology::Linear]).unwrap();
        let mix = MixtureDensity::new(centers, lw, vec![KernelFamily::Gaussian], g.constant(Tensor::vector(vec![0.4]))).unwrap();
        let out = resample(&ResamplerConfig::of(kind), &ps, &mix, CENTERS.len(), &mut rng.split(c)).unwrap();
        for a in out.ancestors.unwrap() {
            counts[a] += 1.0;
        }
    }
    counts
}

/// χ² with four degrees of freedom exceeds 18.47 with probability 0.001.
const CHI2_4_999: f64 = 18.47;

fn chi2(counts: &[f64], probs: &[f64]) -> f64 {
    let total: f64 = counts.iter().sum();
    counts.iter().zip(probs).map(|(o, p)| (o - total * p).powi(2) / (total * p)).sum()
}

#[test]
fn ancestor_frequencies_follow_the_sampling_weights() {
    let calls = 20_000;
    for kind in [ResamplerKind::TgDiscrete, ResamplerKind::Dis, ResamplerKind::TgMixture, ResamplerKind::Iwsg] {
        let stat = chi2(&ancestor_counts(kind, calls), &WEIGHTS);
        assert!(stat < CHI2_4_999, "{}: chi2 {stat}", kind.name());
    }
    let lambda = ResamplerConfig::default().sr_lambda;
    let mixed: Vec<f64> = WEIGHTS.iter().map(|w| (1.0 - lambda) * w + lambda / WEIGHTS.len() as f64).collect();
    let stat = chi2(&ancestor_counts(ResamplerKind::Sr, calls), &mixed);
    assert!(stat < CHI2_4_999, "sr: chi2 {stat}");
}

fn forward_values(kind: ResamplerKind, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let g = Graph::new();
    let centers = g.variable(Tensor::matrix(CENTERS.len(), 1, CENTERS.to_vec()));
    let lw = g.variable(Tensor::vector(log_weights()));
    let ps = ParticleSet::new(centers, lw, vec![Topology::Linear]).unwrap();
    let mix = MixtureDensity::new(centers, lw, vec![KernelFamily::Gaussian], g.variable(Tensor::vector(vec![0.4]))).unwrap();
    let out = resample(&ResamplerConfig::of(kind), &ps, &mix, 7, &mut RngStream::new(seed)).unwrap();
    (out.set.particles.value().data().to_vec(), out.set.weights())
}

#[test]
fn gradient_estimators_leave_the_forward_pass_alone() {
    for seed in 0..20 {
        assert_eq!(forward_values(ResamplerKind::Dis, seed), forward_values(ResamplerKind::TgDiscrete, seed));
        let tg = forward_values(ResamplerKind::TgMixture, seed);
        assert_eq!(forward_values(ResamplerKind::Iwsg, seed).0, tg.0);
        assert_eq!(forward_values(ResamplerKind::Irg, seed).0, tg.0);
        for w in forward_values(ResamplerKind::Iwsg, seed).1 {
            assert!((w - 1.0 / 7.0).abs() < 1e-15);
        }
    }
}

#[test]
fn importance_weighted_gradients_are_unbiased_for_weight_parameters() {
    use mdpf::exec::Exec;
    use mdpf::metrics::{gradient_probe, ProbeLoss, ProbeSpec, ProbeTarget};
    let spec = ProbeSpec {
        centers: vec![-1.0, 1.5],
        logits: vec![0.0, 0.7],
        bandwidth: 0.6,
        family: KernelFamily::Gaussian,
        n_out: 2,
        target: ProbeTarget::Logit(0),
        loss: ProbeLoss::Tanh,
    };
    for kind in [ResamplerKind::Dis, ResamplerKind::Iwsg] {
        let r = gradient_probe(&ResamplerConfig::of(kind), &spec, 10_000, &RngStream::new(2), Exec::available()).unwrap();
        assert!(r.z_score() < 3.0, "{}: {r:?}", kind.name());
    }
}
