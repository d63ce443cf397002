//! Galactic background noise with a power-law spectrum `S(f) = |f|^-α`.

use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

/// Spectral index of the galactic background.
pub const GALACTIC_ALPHA: f64 = 2.5;

/// Draws a zero-mean circular complex Gaussian series of length `n_s` with
/// sample spacing `dt` seconds whose PSD follows `|f|^-alpha`.
///
/// The DC bin carries no power. The expected value of `|n(t)|²` equals
/// `level` at every sample; individual realizations fluctuate around it.
pub fn galactic_noise(n_s: usize, dt: f64, alpha: f64, level: f64, seed: u64) -> Result<Vec<Complex64>> {
    if n_s < 16 {
        return Err(Error::config("noise.n_s", format!("need at least 16 samples, got {n_s}")));
    }
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::config("noise.alpha", "must be finite and > 0"));
    }
    if !(level >= 0.0) || !level.is_finite() {
        return Err(Error::config("noise.level", "must be finite and >= 0"));
    }
    if !(dt > 0.0) {
        return Err(Error::config("noise.dt", "must be > 0"));
    }
    if level == 0.0 {
        return Ok(vec![Complex64::default(); n_s]);
    }

    let df = 1.0 / (n_s as f64 * dt);
    let psd: Vec<f64> = (0..n_s)
        .map(|k| {
            if k == 0 {
                0.0
            } else {
                let signed = if k <= n_s / 2 { k as f64 } else { k as f64 - n_s as f64 };
                (signed.abs() * df).powf(-alpha)
            }
        })
        .collect();
    let total: f64 = psd.iter().sum();
    let gain = (level / total).sqrt();

    let mut rng = stream_rng(seed, Stream::Noise, 0);
    let mut series: Vec<Complex64> = psd
        .iter()
        .map(|&s| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            Complex64::new(re, im) * (gain * (s / 2.0).sqrt())
        })
        .collect();

    FftPlanner::new().plan_fft_inverse(n_s).process(&mut series);
    Ok(series)
}
