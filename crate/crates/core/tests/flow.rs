use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rsnpe::datagen::TrainSample;
use rsnpe::flow::{std_normal_log_density, train_flow, FlowConfig, FlowModel, Standardizer, TrainConfig};
use rsnpe::TerrainParams;

const MEAN: [f64; 3] = [7.0, 2.5, 0.25];
const SLOPE: [f64; 3] = [1.0, -0.5, 0.05];
const SCALE: [f64; 3] = [0.8, 0.4, 0.03];
const RHO: f64 = 0.6;

/// θ | h ~ N(MEAN + SLOPE·ln h, Σ) with a correlated (ε, σ) block.
fn gaussian_conditional(n: usize, seed: u64) -> Vec<TrainSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let u: f64 = rng.random_range(-1.0..1.0);
            let z: [f64; 3] = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
            let noise = [
                SCALE[0] * z[0],
                SCALE[1] * (RHO * z[0] + (1.0 - RHO * RHO).sqrt() * z[1]),
                SCALE[2] * z[2],
            ];
            let theta: Vec<f64> = (0..3).map(|d| MEAN[d] + SLOPE[d] * u + noise[d]).collect();
            TrainSample {
                theta: TerrainParams::new(theta[0], theta[1], theta[2]).unwrap(),
                h: u.exp(),
            }
        })
        .collect()
}

/// Expected NLL of the true conditional, in physical units.
fn analytic_nll() -> f64 {
    let log_det_chol = SCALE.iter().map(|s| s.ln()).sum::<f64>() + (1.0 - RHO * RHO).sqrt().ln();
    1.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln() + log_det_chol
}

fn jittered(seed: u64, scale: f64) -> FlowModel {
    let mut m = FlowModel::new(FlowConfig::default(), Standardizer::identity(3), seed).unwrap();
    m.jitter_params(scale, seed);
    m
}

/// Midpoint rule on a 40³ grid over [-5, 5]³ in flow coordinates.
fn quadrature(model: &FlowModel, ctx: f64) -> f64 {
    let n = 40;
    let step = 10.0 / n as f64;
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let x = [i, j, k].map(|v| -5.0 + (v as f64 + 0.5) * step);
                total += model.log_prob_standardized(&x, ctx).unwrap().exp();
            }
        }
    }
    total * step.powi(3)
}

fn trained() -> (FlowModel, rsnpe::flow::History) {
    let train = gaussian_conditional(20_000, 1);
    let val = gaussian_conditional(5_000, 2);
    let cfg = TrainConfig { batch_size: 256, learning_rate: 3e-3, seed: 9, ..TrainConfig::default() };
    train_flow(&train, &val, &FlowConfig::default(), &cfg).unwrap()
}

#[test]
fn training_reaches_analytic_optimum() {
    let (model, history) = trained();
    let std_shift: f64 = model.standardizer().theta_std.iter().map(|s| s.ln()).sum();
    let optimum = analytic_nll() - std_shift;
    let best = history.best_val_nll().unwrap();
    assert!((best - optimum).abs() < 0.1, "val NLL {best} vs optimum {optimum}");
    for e in &history.epochs {
        assert!(best <= e.val_nll);
    }
    for ctx in [-1.5, -0.5, 0.0, 0.7, 1.5] {
        let mass = quadrature(&model, ctx);
        assert!((mass - 1.0).abs() < 0.01, "context {ctx}: mass {mass}");
    }
    let (_, again) = trained();
    assert_eq!(history, again);
}

#[test]
fn untrained_density_is_normalized() {
    let model = jittered(3, 0.03);
    for ctx in [-2.0, -0.3, 0.0, 0.9, 2.0] {
        let mass = quadrature(&model, ctx);
        assert!((mass - 1.0).abs() < 0.01, "context {ctx}: mass {mass}");
    }
}

#[test]
fn log_det_matches_finite_difference_jacobian() {
    let model = jittered(5, 0.1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    // Small enough that no sample point straddles a ReLU kink in a conditioner.
    let h = 1e-6;
    for _ in 0..100 {
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
        let ctx = rng.random_range(-2.0..2.0);
        let (_, logdet) = model.to_base_with_logdet(&x, ctx).unwrap();
        let mut jac = [[0.0; 3]; 3];
        for c in 0..3 {
            let mut up = x.clone();
            up[c] += h;
            let mut down = x.clone();
            down[c] -= h;
            let zu = model.to_base(&up, ctx).unwrap();
            let zd = model.to_base(&down, ctx).unwrap();
            for r in 0..3 {
                jac[r][c] = (zu[r] - zd[r]) / (2.0 * h);
            }
        }
        let det = jac[0][0] * (jac[1][1] * jac[2][2] - jac[1][2] * jac[2][1])
            - jac[0][1] * (jac[1][0] * jac[2][2] - jac[1][2] * jac[2][0])
            + jac[0][2] * (jac[1][0] * jac[2][1] - jac[1][1] * jac[2][0]);
        let rel = (logdet.exp() - det).abs() / det.abs();
        assert!(rel < 1e-4, "x {x:?}: analytic {} vs fd {det}", logdet.exp());
    }
}

#[test]
fn samples_reconstruct_their_base_draws() {
    let model = jittered(7, 0.3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..1000 {
        let z: Vec<f64> = (0..3).map(|_| rng.sample(StandardNormal)).collect();
        let ctx = rng.random_range(-2.0..2.0);
        let x = model.push_forward(&z, ctx);
        assert!(model.log_prob_standardized(&x, ctx).unwrap().is_finite());
        let back = model.to_base(&x, ctx).unwrap();
        for (a, b) in z.iter().zip(&back) {
            assert!((a - b).abs() < 1e-8);
        }
    }
}

#[test]
fn identity_model_samples_the_base() {
    use statrs::distribution::{ContinuousCDF, Normal};
    let model = FlowModel::new(FlowConfig::default(), Standardizer::identity(3), 0).unwrap();
    let draws = model.sample_standardized(0.0, 10_000, 11);
    let normal = Normal::standard();
    for d in 0..3 {
        let mut u: Vec<f64> = draws.iter().map(|x| normal.cdf(x[d])).collect();
        u.sort_by(f64::total_cmp);
        let n = u.len() as f64;
        let dstat = u
            .iter()
            .enumerate()
            .map(|(i, v)| ((i as f64 + 1.0) / n - v).max(v - i as f64 / n))
            .fold(0.0, f64::max);
        // 1% critical value of the one-sample KS statistic.
        assert!(dstat * n.sqrt() < 1.628, "dim {d}: D = {dstat}");
    }
    for x in draws.iter().take(100) {
        let lp = model.log_prob_standardized(x, 0.0).unwrap();
        assert!((lp - std_normal_log_density(x)).abs() < 1e-12);
    }
}
