//! Prior sampling, dataset simulation and training-pair assembly.
//!
//! The primary dataset holds `(θ, P)` for θ drawn from the prior. The
//! reference dataset holds flat-plate powers `P_ref` for a uniformly drawn
//! `ε_ref`. Training pairs are drawn without replacement from the Cartesian
//! product of the two and carry the relative power `h(P, P_ref, ε_ref)`.

use std::collections::HashMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::{compute_h, Permittivity, PowerLinear};
use crate::rng::{derive_seed, stream_rng, Stream};
use crate::simulator::{Simulator, TerrainParams};

/// Axis-aligned uniform prior over θ plus the range of assumed `ε_ref`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSpec {
    pub eps_lo: f64,
    pub eps_hi: f64,
    pub sigma_lo: f64,
    pub sigma_hi: f64,
    pub slope_lo: f64,
    pub slope_hi: f64,
    pub eps_ref_lo: f64,
    pub eps_ref_hi: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            eps_lo: 2.0,
            eps_hi: 12.0,
            sigma_lo: 0.0,
            sigma_hi: 5.0,
            slope_lo: 0.0,
            slope_hi: 0.5,
            eps_ref_lo: 2.0,
            eps_ref_hi: 4.0,
        }
    }
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        let pairs = [
            ("prior.eps", self.eps_lo, self.eps_hi),
            ("prior.sigma", self.sigma_lo, self.sigma_hi),
            ("prior.slope", self.slope_lo, self.slope_hi),
            ("prior.eps_ref", self.eps_ref_lo, self.eps_ref_hi),
        ];
        for (field, lo, hi) in pairs {
            if !lo.is_finite() || !hi.is_finite() || lo > hi {
                return Err(Error::config(field, format!("need finite lo <= hi, got [{lo}, {hi}]")));
            }
        }
        if self.eps_lo < 1.0 {
            return Err(Error::config("prior.eps", "permittivity bound below 1"));
        }
        if self.eps_ref_lo < 1.0 {
            return Err(Error::config("prior.eps_ref", "permittivity bound below 1"));
        }
        if self.sigma_lo < 0.0 || self.slope_lo < 0.0 {
            return Err(Error::config("prior", "roughness bounds must be >= 0"));
        }
        Ok(())
    }

    /// Lower corner `(ε, σ, m)`.
    pub fn lows(&self) -> [f64; 3] {
        [self.eps_lo, self.sigma_lo, self.slope_lo]
    }

    /// Upper corner `(ε, σ, m)`.
    pub fn highs(&self) -> [f64; 3] {
        [self.eps_hi, self.sigma_hi, self.slope_hi]
    }

    /// Whether `v` lies in the box widened by `expand` of its width on each side.
    pub fn contains(&self, v: &[f64; 3], expand: f64) -> bool {
        let (lo, hi) = (self.lows(), self.highs());
        (0..3).all(|d| {
            let pad = expand * (hi[d] - lo[d]);
            v[d] >= lo[d] - pad && v[d] <= hi[d] + pad
        })
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 3] {
        let (lo, hi) = (self.lows(), self.highs());
        std::array::from_fn(|d| lo[d] + (hi[d] - lo[d]) * rng.random::<f64>())
    }

    pub fn draw_eps_ref<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.eps_ref_lo + (self.eps_ref_hi - self.eps_ref_lo) * rng.random::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrimaryRecord {
    pub theta: TerrainParams,
    pub p: PowerLinear,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefRecord {
    pub eps_ref: Permittivity,
    pub p_ref: PowerLinear,
    pub seed: u64,
}

/// One `(θ, h)` example for the density estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSample {
    pub theta: TerrainParams,
    pub h: f64,
}

/// `n` i.i.d. draws from the uniform prior box.
pub fn sample_prior(n: usize, spec: &PriorSpec, seed: u64) -> Result<Vec<TerrainParams>> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::Insufficient("requested zero prior samples".into()));
    }
    let mut rng = stream_rng(seed, Stream::Prior, 0);
    (0..n).map(|_| TerrainParams::from_array(spec.draw(&mut rng))).collect()
}

/// Simulates the primary dataset. Record `i` uses its own derived seed, so
/// results do not depend on thread scheduling.
pub fn generate_primary(n: usize, spec: &PriorSpec, sim: &Simulator, seed: u64) -> Result<Vec<PrimaryRecord>> {
    let thetas = sample_prior(n, spec, seed)?;
    thetas
        .into_par_iter()
        .enumerate()
        .map(|(i, theta)| {
            let rec_seed = derive_seed(seed, Stream::Primary, i as u64);
            let p = sim
                .peak_power(&theta, rec_seed)
                .map_err(|e| Error::Record { index: i, source: Box::new(e) })?;
            Ok(PrimaryRecord { theta, p, seed: rec_seed })
        })
        .collect()
}

/// Simulates flat reference plates with `ε_ref ~ U[eps_ref_lo, eps_ref_hi]`.
pub fn generate_reference(n: usize, spec: &PriorSpec, sim: &Simulator, seed: u64) -> Result<Vec<RefRecord>> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::Insufficient("requested zero reference records".into()));
    }
    let mut rng = stream_rng(seed, Stream::Reference, 0);
    let eps: Vec<f64> = (0..n).map(|_| spec.draw_eps_ref(&mut rng)).collect();
    eps.into_par_iter()
        .enumerate()
        .map(|(i, e)| {
            let rec_seed = derive_seed(seed, Stream::Reference, i as u64 + 1);
            let wrap = |e| Error::Record { index: i, source: Box::new(e) };
            let theta = TerrainParams::flat(e).map_err(wrap)?;
            let p_ref = sim.peak_power(&theta, rec_seed).map_err(wrap)?;
            if p_ref.get() <= 0.0 {
                return Err(wrap(Error::Domain("reference power is zero".into())));
            }
            Ok(RefRecord { eps_ref: theta.eps, p_ref, seed: rec_seed })
        })
        .collect()
}

/// Index of a pair in `primary × reference`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PairIndex {
    pub primary: usize,
    pub reference: usize,
}

/// Disjoint splits drawn from the product set.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Vec<TrainSample>,
    pub val: Vec<TrainSample>,
    pub test: Vec<TrainSample>,
    pub train_idx: Vec<PairIndex>,
    pub val_idx: Vec<PairIndex>,
    pub test_idx: Vec<PairIndex>,
}

/// The first `k` entries of a uniformly random permutation of `0..total`,
/// by a partial Fisher–Yates shuffle over a sparse swap table.
fn partial_shuffle(total: u64, k: usize, seed: u64) -> Vec<u64> {
    let mut rng = stream_rng(seed, Stream::Pairs, 0);
    let mut swapped: HashMap<u64, u64> = HashMap::with_capacity(2 * k);
    (0..k as u64)
        .map(|i| {
            let j = rng.random_range(i..total);
            let at_j = *swapped.get(&j).unwrap_or(&j);
            let at_i = *swapped.get(&i).unwrap_or(&i);
            swapped.insert(j, at_i);
            at_j
        })
        .collect()
}

/// `h` for one product pair.
pub fn pair_sample(primary: &PrimaryRecord, reference: &RefRecord) -> Result<TrainSample> {
    Ok(TrainSample {
        theta: primary.theta,
        h: compute_h(primary.p, reference.p_ref, reference.eps_ref)?,
    })
}

/// Draws `n_train + n_val + n_test` distinct pairs from `primary × reference`.
pub fn build_splits(
    primary: &[PrimaryRecord],
    reference: &[RefRecord],
    n_train: usize,
    n_val: usize,
    n_test: usize,
    seed: u64,
) -> Result<Splits> {
    let total = primary.len() as u64 * reference.len() as u64;
    let want = n_train + n_val + n_test;
    if want as u64 > total {
        return Err(Error::Insufficient(format!(
            "requested {want} pairs but the product set has only {} × {} = {total}",
            primary.len(),
            reference.len()
        )));
    }
    let n_ref = reference.len() as u64;
    let picks = partial_shuffle(total, want, seed);
    let to_pairs = |lin: &[u64]| -> Result<(Vec<TrainSample>, Vec<PairIndex>)> {
        lin.iter()
            .map(|&l| {
                let idx = PairIndex { primary: (l / n_ref) as usize, reference: (l % n_ref) as usize };
                Ok((pair_sample(&primary[idx.primary], &reference[idx.reference])?, idx))
            })
            .collect::<Result<Vec<_>>>()
            .map(|v| v.into_iter().unzip())
    };
    let (train, train_idx) = to_pairs(&picks[..n_train])?;
    let (val, val_idx) = to_pairs(&picks[n_train..n_train + n_val])?;
    let (test, test_idx) = to_pairs(&picks[n_train + n_val..])?;
    Ok(Splits { train, val, test, train_idx, val_idx, test_idx })
}

/// Train and validation splits from the product set.
pub fn build_pairs(
    primary: &[PrimaryRecord],
    reference: &[RefRecord],
    n_train: usize,
    n_val: usize,
    seed: u64,
) -> Result<(Vec<TrainSample>, Vec<TrainSample>)> {
    let s = build_splits(primary, reference, n_train, n_val, 0, seed)?;
    Ok((s.train, s.val))
}

// CSV row layouts. Column names are part of the external interface.

#[derive(Debug, Serialize, Deserialize)]
struct PrimaryRow {
    eps: f64,
    sigma: f64,
    slope: f64,
    p_linear: f64,
    seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ReferenceRow {
    eps_ref: f64,
    p_ref_linear: f64,
    seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct PairRow {
    eps: f64,
    sigma: f64,
    slope: f64,
    h: f64,
}

pub mod csv_io {
    //! CSV persistence: `eps,sigma,slope,p_linear,seed` for the primary set,
    //! `eps_ref,p_ref_linear,seed` for the reference set, `eps,sigma,slope,h`
    //! for pairs.
    use std::path::Path;

    use super::*;
    use crate::io::{read_csv, write_csv};

    pub fn write_primary(path: &Path, records: &[PrimaryRecord]) -> Result<()> {
        let rows: Vec<_> = records
            .iter()
            .map(|r| PrimaryRow {
                eps: r.theta.eps.get(),
                sigma: r.theta.sigma,
                slope: r.theta.slope,
                p_linear: r.p.get(),
                seed: r.seed,
            })
            .collect();
        write_csv(path, &rows)
    }

    pub fn read_primary(path: &Path) -> Result<Vec<PrimaryRecord>> {
        read_csv::<PrimaryRow>(path)?
            .into_iter()
            .map(|r| {
                Ok(PrimaryRecord {
                    theta: TerrainParams::new(r.eps, r.sigma, r.slope)?,
                    p: PowerLinear::new(r.p_linear)?,
                    seed: r.seed,
                })
            })
            .collect()
    }

    pub fn write_reference(path: &Path, records: &[RefRecord]) -> Result<()> {
        let rows: Vec<_> = records
            .iter()
            .map(|r| ReferenceRow { eps_ref: r.eps_ref.get(), p_ref_linear: r.p_ref.get(), seed: r.seed })
            .collect();
        write_csv(path, &rows)
    }

    pub fn read_reference(path: &Path) -> Result<Vec<RefRecord>> {
        read_csv::<ReferenceRow>(path)?
            .into_iter()
            .map(|r| {
                Ok(RefRecord {
                    eps_ref: Permittivity::new(r.eps_ref)?,
                    p_ref: PowerLinear::new(r.p_ref_linear)?,
                    seed: r.seed,
                })
            })
            .collect()
    }

    pub fn write_pairs(path: &Path, samples: &[TrainSample]) -> Result<()> {
        let rows: Vec<_> = samples
            .iter()
            .map(|s| PairRow { eps: s.theta.eps.get(), sigma: s.theta.sigma, slope: s.theta.slope, h: s.h })
            .collect();
        write_csv(path, &rows)
    }

    pub fn read_pairs(path: &Path) -> Result<Vec<TrainSample>> {
        read_csv::<PairRow>(path)?
            .into_iter()
            .map(|r| Ok(TrainSample { theta: TerrainParams::new(r.eps, r.sigma, r.slope)?, h: r.h }))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::RadarConfig;
    use std::collections::HashSet;

    fn small_sim() -> Simulator {
        Simulator::new(RadarConfig { footprint_radius_m: Some(40.0), ..RadarConfig::default() }).unwrap()
    }

    #[test]
    fn degenerate_box_returns_point() {
        let spec = PriorSpec {
            eps_lo: 3.0,
            eps_hi: 3.0,
            sigma_lo: 1.0,
            sigma_hi: 1.0,
            slope_lo: 0.2,
            slope_hi: 0.2,
            ..PriorSpec::default()
        };
        let s = sample_prior(1, &spec, 5).unwrap();
        assert_eq!(s[0].to_array(), [3.0, 1.0, 0.2]);
    }

    #[test]
    fn invalid_prior_rejected() {
        let spec = PriorSpec { eps_lo: 0.5, ..PriorSpec::default() };
        assert!(sample_prior(3, &spec, 0).is_err());
        let spec = PriorSpec { sigma_lo: 3.0, sigma_hi: 1.0, ..PriorSpec::default() };
        assert!(matches!(spec.validate(), Err(Error::Config { field, .. }) if field == "prior.sigma"));
    }

    #[test]
    fn prior_means_near_midpoint() {
        let spec = PriorSpec::default();
        let s = sample_prior(10_000, &spec, 1).unwrap();
        let (lo, hi) = (spec.lows(), spec.highs());
        for d in 0..3 {
            let mean = s.iter().map(|t| t.to_array()[d]).sum::<f64>() / s.len() as f64;
            let mid = 0.5 * (lo[d] + hi[d]);
            assert!((mean - mid).abs() / mid < 0.02, "dim {d}: mean {mean} vs {mid}");
            assert!(s.iter().all(|t| spec.contains(&t.to_array(), 0.0)));
        }
    }

    #[test]
    fn exhaustive_product() {
        let sim = small_sim();
        let spec = PriorSpec::default();
        let primary = generate_primary(2, &spec, &sim, 3).unwrap();
        let reference = generate_reference(2, &spec, &sim, 4).unwrap();
        let s = build_splits(&primary, &reference, 3, 1, 0, 9).unwrap();
        let all: HashSet<_> = s.train_idx.iter().chain(&s.val_idx).copied().collect();
        assert_eq!(all.len(), 4);
        assert!(s.val_idx.iter().all(|v| !s.train_idx.contains(v)));
        assert!(build_pairs(&primary, &reference, 4, 1, 9).is_err());
    }

    #[test]
    fn pairs_recompute_h_and_stay_disjoint() {
        let sim = small_sim();
        let spec = PriorSpec::default();
        let primary = generate_primary(12, &spec, &sim, 3).unwrap();
        let reference = generate_reference(6, &spec, &sim, 4).unwrap();
        let s = build_splits(&primary, &reference, 40, 20, 10, 2).unwrap();
        let mut seen = HashSet::new();
        for (sample, idx) in s.train.iter().chain(&s.val).chain(&s.test).zip(s.train_idx.iter().chain(&s.val_idx).chain(&s.test_idx)) {
            assert!(seen.insert(*idx), "duplicate pair {idx:?}");
            let p = primary[idx.primary].p.get();
            let r = &reference[idx.reference];
            let g = ((1.0 - r.eps_ref.get().sqrt()) / (1.0 + r.eps_ref.get().sqrt())).powi(2);
            let expect = p / r.p_ref.get() * g;
            assert!((sample.h - expect).abs() <= 1e-12 * expect);
            assert!(sample.h >= 0.0);
            assert!(spec.contains(&sample.theta.to_array(), 0.0));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let sim = small_sim();
        let spec = PriorSpec::default();
        let a = generate_primary(3, &spec, &sim, 8).unwrap();
        let b = generate_primary(3, &spec, &sim, 8).unwrap();
        assert_eq!(a, b);
        let a = generate_reference(3, &spec, &sim, 8).unwrap();
        let b = generate_reference(3, &spec, &sim, 8).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|r| (2.0..=4.0).contains(&r.eps_ref.get())));
    }

    #[test]
    fn partial_shuffle_is_a_sample_without_replacement() {
        let v = partial_shuffle(50, 50, 1);
        let mut sorted = v.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let sim = small_sim();
        let spec = PriorSpec::default();
        let primary = generate_primary(4, &spec, &sim, 1).unwrap();
        let reference = generate_reference(3, &spec, &sim, 1).unwrap();
        let p = dir.path().join("primary.csv");
        let r = dir.path().join("reference.csv");
        csv_io::write_primary(&p, &primary).unwrap();
        csv_io::write_reference(&r, &reference).unwrap();
        assert_eq!(csv_io::read_primary(&p).unwrap(), primary);
        assert_eq!(csv_io::read_reference(&r).unwrap(), reference);
        let header = std::fs::read_to_string(&p).unwrap();
        assert!(header.starts_with("eps,sigma,slope,p_linear,seed"));
    }
}
