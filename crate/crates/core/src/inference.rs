//! Amortized posterior inference for observed peak powers.
//!
//! Nothing here calls the simulator: an observation is reduced to `h` and the
//! trained flow is sampled directly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::PriorSpec;
use crate::error::{Error, Result};
use crate::flow::FlowModel;
use crate::physics::{altitude_rescale, compute_h, db_to_linear, AltitudeCorrection, Permittivity, PowerDb};

/// Standardized `|ln h|` beyond which a result is flagged as extrapolated.
pub const EXTRAPOLATION_Z: f64 = 6.0;

/// Fraction of each prior width by which the support check widens the box.
pub const SUPPORT_MARGIN: f64 = 0.05;

/// Quantile levels reported in every [`Summary`].
pub const QUANTILES: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];

/// Observed surface and reference-zone powers with an assumed `ε_ref`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Observation {
    pub p_obs: PowerDb,
    pub p_ref_obs: PowerDb,
    /// Spacecraft altitude over the target, km.
    pub r_obs_km: f64,
    /// Spacecraft altitude over the reference zone, km.
    pub r_ref_obs_km: f64,
    pub eps_ref_assumed: Permittivity,
    #[serde(default)]
    pub altitude_correction: AltitudeCorrection,
}

impl Observation {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [("observation.r_obs_km", self.r_obs_km), ("observation.r_ref_obs_km", self.r_ref_obs_km)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(field, format!("altitude must be finite and > 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Relative power `h` after rescaling the reference power to the
    /// target altitude.
    pub fn h(&self) -> Result<f64> {
        self.validate()?;
        let p = db_to_linear(self.p_obs);
        let p_ref = altitude_rescale(
            db_to_linear(self.p_ref_obs),
            self.r_ref_obs_km,
            self.r_obs_km,
            self.altitude_correction,
        )?;
        compute_h(p, p_ref, self.eps_ref_assumed)
    }

    pub fn with_eps_ref(&self, eps_ref: Permittivity) -> Self {
        Self { eps_ref_assumed: eps_ref, ..self.clone() }
    }
}

/// Per-dimension posterior statistics, ordered `(ε, σ, m)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: [f64; 3],
    pub std: [f64; 3],
    /// `quantiles[d][k]` at level [`QUANTILES`]`[k]`.
    pub quantiles: [[f64; 5]; 3],
    /// Pearson correlation; zero where a dimension has no spread.
    pub correlation: [[f64; 3]; 3],
}

/// Linear-interpolation quantile of sorted data (`(n − 1)·q` positions).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize(samples: &[[f64; 3]]) -> Result<Summary> {
    if samples.is_empty() {
        return Err(Error::Insufficient("cannot summarize zero samples".into()));
    }
    let n = samples.len() as f64;
    let mean: [f64; 3] = std::array::from_fn(|d| samples.iter().map(|s| s[d]).sum::<f64>() / n);
    let cov = |a: usize, b: usize| samples.iter().map(|s| (s[a] - mean[a]) * (s[b] - mean[b])).sum::<f64>() / n;
    let std: [f64; 3] = std::array::from_fn(|d| cov(d, d).sqrt());
    let correlation = std::array::from_fn(|a| {
        std::array::from_fn(|b| {
            if a == b {
                1.0
            } else if std[a] > 0.0 && std[b] > 0.0 {
                cov(a, b) / (std[a] * std[b])
            } else {
                0.0
            }
        })
    });
    let quantiles = std::array::from_fn(|d| {
        let mut col: Vec<f64> = samples.iter().map(|s| s[d]).collect();
        col.sort_by(f64::total_cmp);
        QUANTILES.map(|q| quantile_sorted(&col, q))
    });
    Ok(Summary { n: samples.len(), mean, std, quantiles, correlation })
}

/// Posterior draws for one observation and assumed `ε_ref`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorResult {
    pub eps_ref_used: f64,
    pub h_used: f64,
    /// Standardized `ln h` seen by the flow.
    pub context_z: f64,
    /// `|context_z|` exceeded [`EXTRAPOLATION_Z`].
    pub extrapolation: bool,
    /// Draws outside the prior box widened by [`SUPPORT_MARGIN`].
    pub out_of_support: usize,
    pub seed: u64,
    pub summary: Summary,
    #[serde(skip)]
    pub samples: Vec<[f64; 3]>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleRow {
    eps: f64,
    sigma: f64,
    slope: f64,
}

impl PosteriorResult {
    /// Summary and metadata as JSON.
    pub fn write_json(&self, path: &Path) -> Result<()> {
        crate::io::write_json(path, self)
    }

    /// Samples as CSV with columns `eps,sigma,slope`.
    pub fn write_samples_csv(&self, path: &Path) -> Result<()> {
        let rows: Vec<SampleRow> =
            self.samples.iter().map(|s| SampleRow { eps: s[0], sigma: s[1], slope: s[2] }).collect();
        crate::io::write_csv(path, &rows)
    }

    pub fn read_samples_csv(path: &Path) -> Result<Vec<[f64; 3]>> {
        let rows: Vec<SampleRow> = crate::io::read_csv(path)?;
        Ok(rows.into_iter().map(|r| [r.eps, r.sigma, r.slope]).collect())
    }
}

/// `n` posterior draws for `obs`.
pub fn infer(model: &FlowModel, prior: &PriorSpec, obs: &Observation, n: usize, seed: u64) -> Result<PosteriorResult> {
    if n < 1 {
        return Err(Error::config("inference.n_samples", "must be >= 1"));
    }
    let h = obs.h()?;
    let context_z = model.standardizer().context_to_flow(h);
    let extrapolation = !(context_z.abs() <= EXTRAPOLATION_Z);
    if extrapolation {
        log::warn!("h = {h:e} lies {context_z:.1} standard deviations from the training mean of ln h");
    }
    let samples = model.sample(h, n, seed);
    if samples.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { transform: 0, message: "posterior sample is not finite".into() });
    }
    let out_of_support = samples.iter().filter(|s| !prior.contains(s, SUPPORT_MARGIN)).count();
    Ok(PosteriorResult {
        eps_ref_used: obs.eps_ref_assumed.get(),
        h_used: h,
        context_z,
        extrapolation,
        out_of_support,
        seed,
        summary: summarize(&samples)?,
        samples,
    })
}

/// One inference per assumed `ε_ref`, all with the same seed so that the
/// results differ only through `h`.
pub fn eps_ref_sweep(
    model: &FlowModel,
    prior: &PriorSpec,
    obs: &Observation,
    eps_values: &[Permittivity],
    n: usize,
    seed: u64,
) -> Result<Vec<PosteriorResult>> {
    if eps_values.is_empty() {
        return Err(Error::config("inference.eps_ref", "need at least one value"));
    }
    eps_values.iter().map(|&e| infer(model, prior, &obs.with_eps_ref(e), n, seed)).collect()
}
