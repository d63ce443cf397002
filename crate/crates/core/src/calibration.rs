//! Simulation-based calibration: rank statistics, Kolmogorov–Smirnov
//! uniformity tests and classifier two-sample tests.
//!
//! For a calibrated posterior estimator, the rank of a ground-truth parameter
//! among `L` posterior draws is uniform on `{0, …, L}`, and posterior draws
//! pooled over observations from the joint are distributed as the prior.

use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{PriorSpec, TrainSample};
use crate::error::{Error, Result};
use crate::flow::FlowModel;
use crate::nn::{Adam, MlpCache, MlpShape};
use crate::rng::{derive_seed, stream_rng, Stream};

/// Names of the θ dimensions, in order.
pub const THETA_NAMES: [&str; 3] = ["eps", "sigma", "slope"];

/// Upper bound on pooled posterior draws entering the data-averaged C2ST.
pub const DAP_MAX_SAMPLES: usize = 2000;

/// Minimum number of ranks accepted by [`ks_uniformity`].
pub const MIN_KS_RANKS: usize = 20;

/// Anything that can draw θ given an observation `h`.
pub trait PosteriorSampler: Sync {
    /// `n` draws `[ε, σ, m]`, deterministic in `seed`.
    fn sample(&self, h: f64, n: usize, seed: u64) -> Vec<[f64; 3]>;
}

impl PosteriorSampler for FlowModel {
    fn sample(&self, h: f64, n: usize, seed: u64) -> Vec<[f64; 3]> {
        FlowModel::sample(self, h, n, seed)
    }
}

/// Ignores the observation and draws from the prior. Calibrated by
/// construction against test points drawn from the same prior.
#[derive(Debug, Clone)]
pub struct PriorSampler(pub PriorSpec);

impl PosteriorSampler for PriorSampler {
    fn sample(&self, _h: f64, n: usize, seed: u64) -> Vec<[f64; 3]> {
        let mut rng = stream_rng(seed, Stream::Prior, 0);
        (0..n).map(|_| self.0.draw(&mut rng)).collect()
    }
}

/// SBC ranks, one vector per θ dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRecord {
    /// Posterior draws per test point.
    pub l: usize,
    /// `ranks[d][i]` in `0..=l`.
    pub ranks: [Vec<usize>; 3],
}

impl RankRecord {
    pub fn len(&self) -> usize {
        self.ranks[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Ranks mapped to `(rank + U) / (L + 1)`, exactly uniform on `[0, 1)`
    /// under calibration.
    pub fn uniformized(&self, dim: usize, seed: u64) -> Vec<f64> {
        let mut rng = stream_rng(seed, Stream::Calibration, 1000 + dim as u64);
        let scale = (self.l + 1) as f64;
        self.ranks[dim].iter().map(|&r| (r as f64 + rng.random::<f64>()) / scale).collect()
    }
}

/// Rank of `truth` among `draws`: strictly smaller values count 1, ties
/// count 1 with probability ½.
fn rank_of<R: Rng>(truth: f64, draws: impl Iterator<Item = f64>, rng: &mut R) -> usize {
    draws
        .map(|v| {
            if v < truth {
                1
            } else if v == truth && rng.random::<bool>() {
                1
            } else {
                0
            }
        })
        .sum()
}

fn check_sbc_inputs(test_set: &[TrainSample], l: usize) -> Result<()> {
    if test_set.is_empty() {
        return Err(Error::Insufficient("SBC needs at least one test point".into()));
    }
    if l < 1 {
        return Err(Error::config("calibration.l", "need at least one posterior draw per test point"));
    }
    Ok(())
}

fn point_draws<S: PosteriorSampler + ?Sized>(sampler: &S, point: &TrainSample, i: usize, l: usize, seed: u64) -> Vec<[f64; 3]> {
    sampler.sample(point.h, l, derive_seed(seed, Stream::Posterior, i as u64))
}

/// Ranks of each test point's θ* among `l` posterior draws for its `h`.
pub fn sbc_ranks<S: PosteriorSampler + ?Sized>(
    sampler: &S,
    test_set: &[TrainSample],
    l: usize,
    seed: u64,
) -> Result<RankRecord> {
    Ok(sbc_run(sampler, test_set, l, seed)?.0)
}

/// Ranks plus a seeded subsample (at most [`DAP_MAX_SAMPLES`]) of the pooled draws.
fn sbc_run<S: PosteriorSampler + ?Sized>(
    sampler: &S,
    test_set: &[TrainSample],
    l: usize,
    seed: u64,
) -> Result<(RankRecord, Vec<[f64; 3]>)> {
    check_sbc_inputs(test_set, l)?;
    let total = test_set.len() * l;
    let keep_n = total.min(DAP_MAX_SAMPLES);
    let mut keep = index::sample(&mut stream_rng(seed, Stream::Calibration, 0), total, keep_n).into_vec();
    keep.sort_unstable();

    let per_point: Vec<([usize; 3], Vec<[f64; 3]>)> = test_set
        .par_iter()
        .enumerate()
        .map(|(i, point)| {
            let draws = point_draws(sampler, point, i, l, seed);
            let truth = point.theta.to_array();
            let mut coin = stream_rng(seed, Stream::Calibration, 1 + i as u64);
            let ranks = std::array::from_fn(|d| rank_of(truth[d], draws.iter().map(|s| s[d]), &mut coin));
            let lo = keep.partition_point(|&k| k < i * l);
            let hi = keep.partition_point(|&k| k < (i + 1) * l);
            let kept = keep[lo..hi].iter().map(|&k| draws[k - i * l]).collect();
            (ranks, kept)
        })
        .collect();

    let mut ranks: [Vec<usize>; 3] = Default::default();
    let mut pooled = Vec::with_capacity(keep_n);
    for (r, kept) in per_point {
        for d in 0..3 {
            ranks[d].push(r[d]);
        }
        pooled.extend(kept);
    }
    Ok((RankRecord { l, ranks }, pooled))
}

/// Two-sided one-sample KS statistic of `sample` against U[0, 1].
pub fn ks_statistic(sample: &[f64]) -> f64 {
    let mut u = sample.to_vec();
    u.sort_by(f64::total_cmp);
    let n = u.len() as f64;
    u.iter()
        .enumerate()
        .map(|(i, &v)| {
            let v = v.clamp(0.0, 1.0);
            ((i as f64 + 1.0) / n - v).max(v - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

/// `P(K > λ)` for the Kolmogorov distribution.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // Jacobi theta form of the CDF converges fast for small λ.
        let c = std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let cdf: f64 = (1..=20)
            .map(|k| (-((2 * k - 1) as f64).powi(2) * c).exp())
            .sum::<f64>()
            * (2.0 * std::f64::consts::PI).sqrt()
            / lambda;
        (1.0 - cdf).clamp(0.0, 1.0)
    } else {
        let sum: f64 = (1..=100)
            .map(|k| {
                let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                sign * (-2.0 * (k * k) as f64 * lambda * lambda).exp()
            })
            .sum();
        (2.0 * sum).clamp(0.0, 1.0)
    }
}

/// Asymptotic p-value of the KS statistic `d` for sample size `n`, with
/// the small-sample scaling `√n + 0.12 + 0.11/√n`.
pub fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    kolmogorov_survival((sn + 0.12 + 0.11 / sn) * d)
}

/// KS p-value per dimension for the uniformity of the ranks.
pub fn ks_uniformity(record: &RankRecord, seed: u64) -> Result<[f64; 3]> {
    if record.len() < MIN_KS_RANKS {
        return Err(Error::Insufficient(format!(
            "KS test needs at least {MIN_KS_RANKS} ranks, got {}",
            record.len()
        )));
    }
    Ok(std::array::from_fn(|d| {
        let u = record.uniformized(d, seed);
        ks_p_value(ks_statistic(&u), u.len())
    }))
}

/// Settings of the classifier behind [`c2st`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct C2stConfig {
    pub hidden_units: usize,
    pub folds: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for C2stConfig {
    fn default() -> Self {
        Self { hidden_units: 32, folds: 5, epochs: 50, batch_size: 128, learning_rate: 1e-2 }
    }
}

/// Classifier two-sample test: mean held-out accuracy of a one-hidden-layer
/// network separating `a` (label 0) from `b` (label 1) under k-fold
/// cross-validation. 0.5 means indistinguishable.
pub fn c2st(a: &[Vec<f64>], b: &[Vec<f64>], seed: u64) -> Result<f64> {
    c2st_with(a, b, seed, &C2stConfig::default())
}

pub fn c2st_with(a: &[Vec<f64>], b: &[Vec<f64>], seed: u64, cfg: &C2stConfig) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Insufficient("C2ST needs two nonempty samples".into()));
    }
    let dim = a[0].len();
    if dim == 0 || a.iter().chain(b).any(|r| r.len() != dim) {
        return Err(Error::Shape("C2ST samples must share one nonzero dimension".into()));
    }
    if a.len() + b.len() < cfg.folds || cfg.folds < 2 {
        return Err(Error::Insufficient("C2ST needs at least as many points as folds (>= 2)".into()));
    }
    let mut data: Vec<(&[f64], f64)> =
        a.iter().map(|r| (r.as_slice(), 0.0)).chain(b.iter().map(|r| (r.as_slice(), 1.0))).collect();
    data.shuffle(&mut stream_rng(seed, Stream::Classifier, 0));

    let n = data.len();
    let accuracies: Vec<f64> = (0..cfg.folds)
        .into_par_iter()
        .map(|fold| {
            let (test, train): (Vec<_>, Vec<_>) = (0..n).partition(|i| i % cfg.folds == fold);
            let fold_seed = derive_seed(seed, Stream::Classifier, 1 + fold as u64);
            fold_accuracy(&data, &train, &test, dim, fold_seed, cfg)
        })
        .collect();
    Ok(accuracies.iter().sum::<f64>() / cfg.folds as f64)
}

fn fold_accuracy(data: &[(&[f64], f64)], train: &[usize], test: &[usize], dim: usize, seed: u64, cfg: &C2stConfig) -> f64 {
    let mut mean = vec![0.0; dim];
    let mut std = vec![0.0; dim];
    for &i in train {
        mean.iter_mut().zip(data[i].0).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= train.len() as f64);
    for &i in train {
        std.iter_mut().zip(data[i].0.iter().zip(&mean)).for_each(|(s, (v, m))| *s += (v - m).powi(2));
    }
    std.iter_mut().for_each(|s| {
        *s = (*s / train.len() as f64).sqrt();
        if !(*s > 0.0) {
            *s = 1.0;
        }
    });
    let feat = |i: usize| -> Vec<f64> { data[i].0.iter().zip(mean.iter().zip(&std)).map(|(v, (m, s))| (v - m) / s).collect() };

    let shape = MlpShape::new(vec![dim, cfg.hidden_units, 1]);
    let mut params = vec![0.0; shape.param_count()];
    let mut rng = stream_rng(seed, Stream::Classifier, 0);
    shape.init(&mut params, &mut rng, false);
    let mut opt = Adam::new(params.len(), cfg.learning_rate);
    let mut cache = MlpCache::default();
    let mut grads = vec![0.0; params.len()];
    let train_x: Vec<Vec<f64>> = train.iter().map(|&i| feat(i)).collect();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            grads.iter_mut().for_each(|g| *g = 0.0);
            for &j in batch {
                shape.forward(&params, &train_x[j], &mut cache);
                let p = sigmoid(cache.output()[0]);
                let g = (p - data[train[j]].1) / batch.len() as f64;
                shape.backward(&params, &cache, &[g], &mut grads, None);
            }
            opt.step(&mut params, &grads);
        }
    }
    let correct = test
        .iter()
        .filter(|&&i| {
            shape.forward(&params, &feat(i), &mut cache);
            let predicted = if cache.output()[0] > 0.0 { 1.0 } else { 0.0 };
            predicted == data[i].1
        })
        .count();
    correct as f64 / test.len() as f64
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn column(rows: &[[f64; 3]], d: usize) -> Vec<Vec<f64>> {
    rows.iter().map(|r| vec![r[d]]).collect()
}

/// Per-dimension C2ST of uniformized ranks against fresh U[0, 1] draws.
pub fn c2st_ranks(record: &RankRecord, seed: u64) -> Result<[f64; 3]> {
    let mut out = [0.0; 3];
    for (d, acc) in out.iter_mut().enumerate() {
        let u: Vec<Vec<f64>> = record.uniformized(d, seed).into_iter().map(|v| vec![v]).collect();
        let mut rng = stream_rng(seed, Stream::Calibration, 2000 + d as u64);
        let reference: Vec<Vec<f64>> = (0..u.len()).map(|_| vec![rng.random::<f64>()]).collect();
        *acc = c2st(&u, &reference, derive_seed(seed, Stream::Classifier, 100 + d as u64))?;
    }
    Ok(out)
}

fn dap_from_pooled(pooled: &[[f64; 3]], prior: &PriorSpec, seed: u64) -> Result<[f64; 3]> {
    let mut rng = stream_rng(seed, Stream::Calibration, 3000);
    let fresh: Vec<[f64; 3]> = (0..pooled.len()).map(|_| prior.draw(&mut rng)).collect();
    let mut out = [0.0; 3];
    for (d, acc) in out.iter_mut().enumerate() {
        *acc = c2st(&column(pooled, d), &column(&fresh, d), derive_seed(seed, Stream::Classifier, 200 + d as u64))?;
    }
    Ok(out)
}

/// Per-dimension C2ST of the data-averaged posterior against the prior.
pub fn c2st_dap<S: PosteriorSampler + ?Sized>(
    sampler: &S,
    test_set: &[TrainSample],
    l: usize,
    prior: &PriorSpec,
    seed: u64,
) -> Result<[f64; 3]> {
    let (_, pooled) = sbc_run(sampler, test_set, l, seed)?;
    dap_from_pooled(&pooled, prior, seed)
}

/// Everything the `validate` step reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub n_test: usize,
    pub l: usize,
    pub seed: u64,
    pub ks_p: [f64; 3],
    pub c2st_rank: [f64; 3],
    pub c2st_dap: [f64; 3],
}

/// Runs SBC once and derives the KS, rank-C2ST and DAP-C2ST diagnostics.
pub fn calibrate<S: PosteriorSampler + ?Sized>(
    sampler: &S,
    test_set: &[TrainSample],
    l: usize,
    prior: &PriorSpec,
    seed: u64,
) -> Result<(CalibrationReport, RankRecord)> {
    let (ranks, pooled) = sbc_run(sampler, test_set, l, seed)?;
    let report = CalibrationReport {
        n_test: test_set.len(),
        l,
        seed,
        ks_p: ks_uniformity(&ranks, seed)?,
        c2st_rank: c2st_ranks(&ranks, seed)?,
        c2st_dap: dap_from_pooled(&pooled, prior, seed)?,
    };
    Ok((report, ranks))
}

/// One row of a rank histogram: ranks in `lo..=hi` and their counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub lo: usize,
    pub hi: usize,
    pub eps: usize,
    pub sigma: usize,
    pub slope: usize,
}

/// Counts of ranks in `n_bins` contiguous groups of `{0, …, L}`.
pub fn rank_histogram(record: &RankRecord, n_bins: usize) -> Vec<HistogramRow> {
    let values = record.l + 1;
    let n_bins = n_bins.clamp(1, values);
    let bin_of = |r: usize| (r * n_bins / values).min(n_bins - 1);
    let mut rows: Vec<HistogramRow> = (0..n_bins)
        .map(|b| HistogramRow {
            lo: (b * values).div_ceil(n_bins),
            hi: ((b + 1) * values).div_ceil(n_bins) - 1,
            eps: 0,
            sigma: 0,
            slope: 0,
        })
        .collect();
    for (d, ranks) in record.ranks.iter().enumerate() {
        for &r in ranks {
            let row = &mut rows[bin_of(r)];
            *[&mut row.eps, &mut row.sigma, &mut row.slope][d] += 1;
        }
    }
    rows
}

pub fn write_rank_histogram(path: &Path, record: &RankRecord, n_bins: usize) -> Result<()> {
    crate::io::write_csv(path, &rank_histogram(record, n_bins))
}
