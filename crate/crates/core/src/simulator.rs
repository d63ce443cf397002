//! Forward model: terrain parameters → rangeline → peak power.
//!
//! Each facet of a synthetic surface inside the first Fresnel zone returns a
//! delta echo
//!
//! ```text
//! E_i = A · Γ(ε) · dx² · cos(tilt_i) / h_i² · exp(-j·2k·h_i)    at τ_i = 2h_i / c
//! ```
//!
//! where `Γ` is the normal-incidence Fresnel amplitude coefficient, `h_i` the
//! facet-to-radar distance and `A` the transmit amplitude. Echoes are deposited
//! on the sample grid at the nearest sample, carrying their exact phase, and
//! galactic noise is added on top.

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{galactic_noise, GALACTIC_ALPHA};
use crate::physics::{fresnel_amplitude, Permittivity, PowerLinear, SPEED_OF_LIGHT};
use crate::rng::{derive_seed, Stream};
use crate::surface::{synthesize_grf, SurfaceMesh, SurfaceSpec};

/// Facets evaluated per parallel work item.
const FACET_CHUNK: usize = 4096;

/// Fraction of a sample by which the earliest echo precedes a sample boundary.
/// Keeps a flat-plate Fresnel zone (spread ≈ λ/4 in range) inside one sample.
const LEAD_PHASE: f64 = 0.45;

/// Permittivity of the flat plate that defines the SNR convention.
pub const SNR_REFERENCE_EPS: f64 = 3.1;

static SIMULATIONS: AtomicU64 = AtomicU64::new(0);

/// Number of rangelines rendered by this process so far.
pub fn simulation_count() -> u64 {
    SIMULATIONS.load(Ordering::Relaxed)
}

/// Instrument and geometry settings. Everything the forward model needs
/// besides the terrain itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadarConfig {
    /// Centre frequency, MHz.
    pub f_c_mhz: f64,
    /// Spacecraft altitude above the mean surface, km.
    pub altitude_km: f64,
    /// Facet edge, m. Defaults to λ/10.
    pub dx_m: Option<f64>,
    /// Footprint radius, m. Defaults to the first Fresnel zone `√(λr/2)`.
    pub footprint_radius_m: Option<f64>,
    /// Sampling frequency, MHz.
    pub f_s_mhz: f64,
    /// Samples per rangeline.
    pub n_s: usize,
    /// Spectral index of the galactic noise.
    pub noise_alpha: f64,
    /// Flat-plate (ε = 3.1) noiseless peak power over mean noise power, dB.
    /// `None` disables noise.
    pub snr_db: Option<f64>,
    pub tx_amplitude: f64,
}

impl Default for RadarConfig {
    /// Desk-scale configuration: a 20 MHz sounder at 5 km altitude.
    fn default() -> Self {
        Self {
            f_c_mhz: 20.0,
            altitude_km: 5.0,
            dx_m: None,
            footprint_radius_m: None,
            f_s_mhz: 80.0 / 3.0,
            n_s: 256,
            noise_alpha: GALACTIC_ALPHA,
            snr_db: Some(30.0),
            tx_amplitude: 1.0,
        }
    }
}

impl RadarConfig {
    /// Orbital configuration at 300 km (about 4·10⁶ facets per simulation).
    pub fn orbital() -> Self {
        Self {
            altitude_km: 300.0,
            ..Self::default()
        }
    }

    pub fn noiseless(mut self) -> Self {
        self.snr_db = None;
        self
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / (self.f_c_mhz * 1e6)
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.wavelength()
    }

    pub fn altitude_m(&self) -> f64 {
        self.altitude_km * 1e3
    }

    pub fn dx(&self) -> f64 {
        self.dx_m.unwrap_or(self.wavelength() / 10.0)
    }

    pub fn fresnel_radius(&self) -> f64 {
        (self.wavelength() * self.altitude_m() / 2.0).sqrt()
    }

    pub fn footprint_radius(&self) -> f64 {
        self.footprint_radius_m.unwrap_or_else(|| self.fresnel_radius())
    }

    pub fn dt(&self) -> f64 {
        1.0 / (self.f_s_mhz * 1e6)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, field: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(field, format!("must be finite and > 0, got {v}")))
            }
        };
        positive(self.f_c_mhz, "radar.f_c_mhz")?;
        positive(self.altitude_km, "radar.altitude_km")?;
        positive(self.f_s_mhz, "radar.f_s_mhz")?;
        positive(self.dx(), "radar.dx_m")?;
        positive(self.footprint_radius(), "radar.footprint_radius_m")?;
        positive(self.noise_alpha, "radar.noise_alpha")?;
        if !(self.tx_amplitude >= 0.0) || !self.tx_amplitude.is_finite() {
            return Err(Error::config("radar.tx_amplitude", "must be finite and >= 0"));
        }
        if self.dx() > self.wavelength() / 10.0 * (1.0 + 1e-12) {
            return Err(Error::config(
                "radar.dx_m",
                format!("facets must not exceed λ/10 = {:.4} m", self.wavelength() / 10.0),
            ));
        }
        if self.footprint_radius() > self.fresnel_radius() * (1.0 + 1e-9) {
            return Err(Error::config(
                "radar.footprint_radius_m",
                format!("must not exceed the first Fresnel zone radius {:.3} m", self.fresnel_radius()),
            ));
        }
        if self.n_s < 16 {
            return Err(Error::config("radar.n_s", "must be >= 16"));
        }
        if let Some(snr) = self.snr_db {
            if !snr.is_finite() {
                return Err(Error::config("radar.snr_db", "must be finite"));
            }
        }
        Ok(())
    }

    /// Grid points per side of the footprint mesh (odd, nadir at the centre).
    pub fn mesh_size(&self) -> usize {
        2 * (self.footprint_radius() / self.dx()).ceil() as usize + 1
    }
}

/// The inferred triplet θ = (ε, σ, m).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TerrainParams {
    pub eps: Permittivity,
    /// RMS height, m.
    pub sigma: f64,
    /// RMS slope.
    pub slope: f64,
}

impl TerrainParams {
    pub fn new(eps: f64, sigma: f64, slope: f64) -> Result<Self> {
        let p = Self {
            eps: Permittivity::new(eps)?,
            sigma,
            slope,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn flat(eps: f64) -> Result<Self> {
        Self::new(eps, 0.0, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::config("theta.sigma", "must be finite and >= 0"));
        }
        if !(self.slope >= 0.0) || !self.slope.is_finite() {
            return Err(Error::config("theta.slope", "must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn to_array(&self) -> [f64; 3] {
        [self.eps.get(), self.sigma, self.slope]
    }

    pub fn from_array(v: [f64; 3]) -> Result<Self> {
        Self::new(v[0], v[1], v[2])
    }
}

/// Complex echo samples `R(t0 + i·dt)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rangeline {
    pub samples: Vec<Complex64>,
    /// Sample spacing, s.
    pub dt: f64,
    /// Time of the first sample, s.
    pub t0: f64,
}

impl Rangeline {
    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.samples.len()).map(move |i| self.t0 + i as f64 * self.dt)
    }

    /// Writes `<base>.json` and `<base>.bin` (interleaved re/im, little-endian
    /// f64).
    pub fn write_dump(
        &self,
        base: &Path,
        seed: u64,
        theta: &TerrainParams,
        cfg: &RadarConfig,
    ) -> Result<()> {
        use std::io::Write as _;
        let header = serde_json::json!({
            "format": "rsnpe-rangeline",
            "version": 1,
            "n_s": self.samples.len(),
            "dt": self.dt,
            "t0": self.t0,
            "seed": seed,
            "theta": theta,
            "radar": cfg,
            "config_hash": crate::io::config_hash(cfg)?,
            "layout": "interleaved re,im f64 little-endian",
        });
        std::fs::write(base.with_extension("json"), serde_json::to_vec_pretty(&header)?)?;
        let mut out = std::io::BufWriter::new(std::fs::File::create(base.with_extension("bin"))?);
        for s in &self.samples {
            out.write_all(&s.re.to_le_bytes())?;
            out.write_all(&s.im.to_le_bytes())?;
        }
        out.flush()?;
        Ok(())
    }
}

/// One facet's contribution to the received field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FacetReturn {
    pub amplitude: Complex64,
    /// Two-way travel time, s.
    pub delay: f64,
}

/// Per-facet echoes for every facet of `mesh` whose centre lies inside the
/// footprint disk. The radar sits at `(0, 0, altitude)` above the mesh origin.
pub fn facet_fields(mesh: &SurfaceMesh, eps: Permittivity, cfg: &RadarConfig) -> Result<Vec<FacetReturn>> {
    cfg.validate()?;
    let cells = footprint_cells(mesh, cfg.footprint_radius());
    if cells.is_empty() {
        return Err(Error::config("radar.footprint_radius_m", "footprint contains no facets"));
    }
    let geom = Geometry::new(cfg, eps);
    Ok(cells
        .par_chunks(FACET_CHUNK)
        .flat_map_iter(|chunk| chunk.iter().map(|&(r, c)| geom.facet(mesh, r, c)).collect::<Vec<_>>())
        .collect())
}

struct Geometry {
    altitude: f64,
    two_k: f64,
    scale: f64,
}

impl Geometry {
    fn new(cfg: &RadarConfig, eps: Permittivity) -> Self {
        let dx = cfg.dx();
        Self {
            altitude: cfg.altitude_m(),
            two_k: 2.0 * cfg.wavenumber(),
            scale: cfg.tx_amplitude * fresnel_amplitude(eps) * dx * dx,
        }
    }

    #[inline]
    fn facet(&self, mesh: &SurfaceMesh, row: usize, col: usize) -> FacetReturn {
        let x = mesh.coord(col);
        let y = mesh.coord(row);
        let dz = self.altitude - mesh.height(row, col);
        let h = (x * x + y * y + dz * dz).sqrt();
        let (gx, gy) = mesh.gradient(row, col);
        let cos_tilt = 1.0 / (1.0 + gx * gx + gy * gy).sqrt();
        let magnitude = self.scale * cos_tilt / (h * h);
        FacetReturn {
            amplitude: Complex64::from_polar(magnitude, -self.two_k * h),
            delay: 2.0 * h / SPEED_OF_LIGHT,
        }
    }
}

fn footprint_cells(mesh: &SurfaceMesh, radius: f64) -> Vec<(usize, usize)> {
    let r2 = radius * radius;
    let n = mesh.n();
    let mut cells = Vec::new();
    for row in 0..n {
        let y = mesh.coord(row);
        for col in 0..n {
            let x = mesh.coord(col);
            if x * x + y * y <= r2 {
                cells.push((row, col));
            }
        }
    }
    cells
}

/// Reusable forward model for a fixed radar configuration.
#[derive(Debug, Clone)]
pub struct Simulator {
    cfg: RadarConfig,
    noise_level: f64,
}

impl Simulator {
    pub fn new(cfg: RadarConfig) -> Result<Self> {
        cfg.validate()?;
        let mut sim = Self { cfg, noise_level: 0.0 };
        if let Some(snr_db) = sim.cfg.snr_db {
            let flat = TerrainParams::flat(SNR_REFERENCE_EPS)?;
            let mesh = SurfaceMesh::flat(sim.cfg.mesh_size(), sim.cfg.dx());
            let p = peak_power(&sim.render(&mesh, flat.eps, 0)?).get();
            sim.noise_level = p / 10f64.powf(snr_db / 10.0);
        }
        Ok(sim)
    }

    pub fn config(&self) -> &RadarConfig {
        &self.cfg
    }

    /// Mean noise power per sample.
    pub fn noise_level(&self) -> f64 {
        self.noise_level
    }

    /// Surface recipe actually realized for `theta`.
    ///
    /// The mesh cannot carry correlation lengths shorter than two facets or
    /// longer than the footprint, so the slope is clamped into the range
    /// `[2σ/D, σ/dx]` (`D` the mesh extent). Flat terrain (`σ = 0`) ignores
    /// the slope.
    pub fn surface_spec(&self, theta: &TerrainParams, seed: u64) -> SurfaceSpec {
        let dx = self.cfg.dx();
        let n = self.cfg.mesh_size();
        let extent = n as f64 * dx;
        let slope = if theta.sigma == 0.0 {
            0.0
        } else {
            theta.slope.clamp(2.0 * theta.sigma / extent, theta.sigma / dx)
        };
        SurfaceSpec {
            sigma: theta.sigma,
            slope,
            dx,
            n,
            seed: derive_seed(seed, Stream::Surface, 0),
        }
    }

    /// Simulates one rangeline for `theta`. Deterministic in `seed`.
    pub fn simulate(&self, theta: &TerrainParams, seed: u64) -> Result<Rangeline> {
        theta.validate()?;
        let mesh = synthesize_grf(&self.surface_spec(theta, seed))?;
        self.render(&mesh, theta.eps, seed)
    }

    /// Deposits the echoes of `mesh` on the sample grid and adds noise.
    pub fn render(&self, mesh: &SurfaceMesh, eps: Permittivity, seed: u64) -> Result<Rangeline> {
        SIMULATIONS.fetch_add(1, Ordering::Relaxed);
        let returns = facet_fields(mesh, eps, &self.cfg)?;
        let dt = self.cfg.dt();
        let n_s = self.cfg.n_s;

        let (lo, hi) = returns
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r.delay), hi.max(r.delay)));
        let lead = (n_s / 8).max(2) as f64;
        let t0 = lo - (lead - LEAD_PHASE) * dt;
        let spread = hi - lo;
        let last = (hi - t0) / dt;
        if last > (n_s - 1) as f64 - 0.1 * spread / dt {
            return Err(Error::config(
                "radar.n_s",
                format!(
                    "delay spread of {:.1} ns does not fit a {n_s}-sample window with a 10% margin",
                    spread * 1e9
                ),
            ));
        }

        let mut samples = vec![Complex64::default(); n_s];
        for r in &returns {
            let idx = ((r.delay - t0) / dt).round() as usize;
            samples[idx] += r.amplitude;
        }

        if self.noise_level > 0.0 {
            let noise = galactic_noise(
                n_s,
                dt,
                self.cfg.noise_alpha,
                self.noise_level,
                derive_seed(seed, Stream::Noise, 0),
            )?;
            samples.iter_mut().zip(noise).for_each(|(s, n)| *s += n);
        }

        Ok(Rangeline { samples, dt, t0 })
    }

    /// Peak power of one simulated rangeline.
    pub fn peak_power(&self, theta: &TerrainParams, seed: u64) -> Result<PowerLinear> {
        Ok(peak_power(&self.simulate(theta, seed)?))
    }
}

/// One-shot convenience over [`Simulator::simulate`].
pub fn simulate_rangeline(theta: &TerrainParams, cfg: &RadarConfig, seed: u64) -> Result<Rangeline> {
    Simulator::new(cfg.clone())?.simulate(theta, seed)
}

/// `max_t |R(t)|²`.
pub fn peak_power(r: &Rangeline) -> PowerLinear {
    let p = r.samples.iter().map(|s| s.norm_sqr()).fold(0.0, f64::max);
    PowerLinear::new(p).expect("squared magnitudes are non-negative")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn eps(v: f64) -> Permittivity {
        Permittivity::new(v).unwrap()
    }

    fn quiet() -> RadarConfig {
        RadarConfig::default().noiseless()
    }

    /// Independent evaluation of the flat-plate coherent sum.
    fn flat_plate_oracle(cfg: &RadarConfig, e: f64) -> f64 {
        let dx = cfg.dx();
        let r = cfg.altitude_m();
        let k = 2.0 * std::f64::consts::PI * cfg.f_c_mhz * 1e6 / SPEED_OF_LIGHT;
        let gamma = (1.0 - e.sqrt()) / (1.0 + e.sqrt());
        let rad = cfg.footprint_radius();
        let half = (rad / dx).ceil() as i64;
        let (mut re, mut im) = (0.0, 0.0);
        for i in -half..=half {
            for j in -half..=half {
                let (x, y) = (i as f64 * dx, j as f64 * dx);
                if x * x + y * y > rad * rad {
                    continue;
                }
                let h = (x * x + y * y + r * r).sqrt();
                let a = gamma * dx * dx / (h * h);
                re += a * (2.0 * k * h).cos();
                im -= a * (2.0 * k * h).sin();
            }
        }
        re * re + im * im
    }

    #[test]
    fn peak_power_examples() {
        let mk = |s: Vec<Complex64>| Rangeline { samples: s, dt: 1.0, t0: 0.0 };
        assert_eq!(peak_power(&mk(vec![Complex64::default(); 4])).get(), 0.0);
        assert_eq!(peak_power(&mk(vec![Complex64::new(0.0, 1.0)])).get(), 1.0);
        let s = vec![Complex64::new(1.0, 0.0), Complex64::default(), Complex64::new(0.0, 3.0)];
        assert_eq!(peak_power(&mk(s)).get(), 9.0);
    }

    #[test]
    fn defaults_are_valid() {
        quiet().validate().unwrap();
        RadarConfig::orbital().validate().unwrap();
        let cfg = RadarConfig::default();
        assert_relative_eq!(cfg.fresnel_radius(), 193.6, epsilon = 0.1);
        assert_relative_eq!(cfg.dx(), 1.499, epsilon = 1e-3);
    }

    #[test]
    fn validation_names_fields() {
        let bad = RadarConfig { dx_m: Some(3.0), ..quiet() };
        assert!(matches!(bad.validate(), Err(Error::Config { field, .. }) if field == "radar.dx_m"));
        let bad = RadarConfig { footprint_radius_m: Some(500.0), ..quiet() };
        assert!(matches!(bad.validate(), Err(Error::Config { field, .. }) if field == "radar.footprint_radius_m"));
        let bad = RadarConfig { n_s: 8, ..quiet() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn flat_delays_and_amplitude_ratio() {
        let cfg = RadarConfig { footprint_radius_m: Some(20.0), ..quiet() };
        let mesh = SurfaceMesh::flat(cfg.mesh_size(), cfg.dx());
        let a = facet_fields(&mesh, eps(4.0), &cfg).unwrap();
        let b = facet_fields(&mesh, eps(9.0), &cfg).unwrap();
        assert_eq!(a.len(), b.len());
        for (fa, fb) in a.iter().zip(&b) {
            assert_relative_eq!(fa.amplitude.norm() / fb.amplitude.norm(), 2.0 / 3.0, max_relative = 1e-12);
            assert_eq!(fa.delay, fb.delay);
        }
        // Nadir facet sits exactly at 2r/c; every delay is within the
        // footprint's path-length spread of it.
        let nominal = 2.0 * cfg.altitude_m() / SPEED_OF_LIGHT;
        let min = a.iter().map(|f| f.delay).fold(f64::INFINITY, f64::min);
        assert_relative_eq!(min, nominal, max_relative = 1e-15);
        let spread = 2.0 * ((cfg.altitude_m().powi(2) + 2.0 * 20.0f64.powi(2)).sqrt() - cfg.altitude_m()) / SPEED_OF_LIGHT;
        assert!(a.iter().all(|f| f.delay - nominal <= spread * (1.0 + 1e-9)));
    }

    #[test]
    fn spreading_law_two_points() {
        let near = RadarConfig { footprint_radius_m: Some(10.0), ..quiet() };
        let far = RadarConfig { altitude_km: 10.0, ..near.clone() };
        let mesh = SurfaceMesh::flat(near.mesh_size(), near.dx());
        let a = facet_fields(&mesh, eps(3.0), &near).unwrap();
        let b = facet_fields(&mesh, eps(3.0), &far).unwrap();
        let nadir = a.len() / 2;
        assert_relative_eq!(b[nadir].amplitude.norm() / a[nadir].amplitude.norm(), 0.25, max_relative = 1e-12);
        assert_relative_eq!(b[nadir].delay - a[nadir].delay, 2.0 * 5000.0 / SPEED_OF_LIGHT, max_relative = 1e-9);
        // Corner facet: compare against hand-evaluated 1/h² at both ranges.
        let (x, y) = (mesh.coord(0), mesh.coord(0));
        let corner = a
            .iter()
            .zip(&b)
            .find(|(f, _)| {
                let h = f.delay * SPEED_OF_LIGHT / 2.0;
                ((h * h - 5000f64.powi(2)).sqrt() - (x * x + y * y).sqrt()).abs() < 1e-3
            });
        if let Some((fa, fb)) = corner {
            let ha2 = x * x + y * y + 5000f64.powi(2);
            let hb2 = x * x + y * y + 10000f64.powi(2);
            assert_relative_eq!(fb.amplitude.norm() / fa.amplitude.norm(), ha2 / hb2, max_relative = 1e-9);
        }
    }

    #[test]
    fn flat_plate_energy_in_one_bin() {
        let sim = Simulator::new(quiet()).unwrap();
        let r = sim.simulate(&TerrainParams::flat(4.0).unwrap(), 1).unwrap();
        let nonzero: Vec<_> = r.samples.iter().enumerate().filter(|(_, s)| s.norm() > 0.0).collect();
        assert_eq!(nonzero.len(), 1);
        let (idx, _) = nonzero[0];
        let t = r.t0 + idx as f64 * r.dt;
        let nominal = 2.0 * sim.config().altitude_m() / SPEED_OF_LIGHT;
        assert!((t - nominal).abs() <= r.dt / 2.0);
    }

    #[test]
    fn flat_plate_matches_oracle() {
        let cfg = quiet();
        let sim = Simulator::new(cfg.clone()).unwrap();
        let p = sim.peak_power(&TerrainParams::flat(4.0).unwrap(), 0).unwrap().get();
        assert_relative_eq!(p, flat_plate_oracle(&cfg, 4.0), max_relative = 1e-9);
    }

    #[test]
    fn transmit_amplitude_scales_power_quadratically() {
        let theta = TerrainParams::new(5.0, 1.0, 0.2).unwrap();
        let a = Simulator::new(quiet()).unwrap().peak_power(&theta, 3).unwrap().get();
        let b = Simulator::new(RadarConfig { tx_amplitude: 3.0, ..quiet() })
            .unwrap()
            .peak_power(&theta, 3)
            .unwrap()
            .get();
        assert_relative_eq!(b, 9.0 * a, max_relative = 1e-12);
    }

    #[test]
    fn monotone_in_permittivity() {
        let sim = Simulator::new(quiet()).unwrap();
        let powers: Vec<f64> = [2.0, 4.0, 8.0, 12.0]
            .iter()
            .map(|&e| sim.peak_power(&TerrainParams::flat(e).unwrap(), 0).unwrap().get())
            .collect();
        assert!(powers.windows(2).all(|w| w[1] > w[0]), "{powers:?}");
    }

    #[test]
    fn deterministic_and_bounded() {
        let sim = Simulator::new(RadarConfig::default()).unwrap();
        let theta = TerrainParams::new(6.0, 2.0, 0.3).unwrap();
        let a = sim.simulate(&theta, 11).unwrap();
        let b = sim.simulate(&theta, 11).unwrap();
        assert_eq!(a, b);

        let quiet = Simulator::new(quiet()).unwrap();
        let spec = quiet.surface_spec(&theta, 11);
        let mesh = synthesize_grf(&spec).unwrap();
        let bound: f64 = facet_fields(&mesh, theta.eps, quiet.config())
            .unwrap()
            .iter()
            .map(|f| f.amplitude.norm())
            .sum();
        let p = peak_power(&quiet.render(&mesh, theta.eps, 11).unwrap()).get();
        assert!(p <= bound * bound);
    }

    #[test]
    fn slope_is_clamped_to_mesh_resolution() {
        let sim = Simulator::new(quiet()).unwrap();
        let dx = sim.config().dx();
        let spec = sim.surface_spec(&TerrainParams::new(3.0, 0.1, 0.5).unwrap(), 0);
        assert_relative_eq!(spec.slope, 0.1 / dx, max_relative = 1e-12);
        let spec = sim.surface_spec(&TerrainParams::new(3.0, 5.0, 0.0).unwrap(), 0);
        assert!(spec.slope > 0.0);
        assert!(synthesize_grf(&spec).is_ok());
        let spec = sim.surface_spec(&TerrainParams::new(3.0, 0.0, 0.4).unwrap(), 0);
        assert_eq!(spec.slope, 0.0);
    }

    #[test]
    fn window_too_short_is_a_config_error() {
        let cfg = RadarConfig { n_s: 16, f_s_mhz: 400.0, ..quiet() };
        let sim = Simulator::new(RadarConfig { n_s: 256, ..cfg.clone() }).unwrap();
        let mesh = synthesize_grf(&sim.surface_spec(&TerrainParams::new(3.0, 5.0, 0.3).unwrap(), 0)).unwrap();
        let short = Simulator { cfg, noise_level: 0.0 };
        assert!(matches!(short.render(&mesh, eps(3.0), 0), Err(Error::Config { .. })));
    }

    #[test]
    fn counter_tracks_simulations() {
        let sim = Simulator::new(quiet()).unwrap();
        let before = simulation_count();
        sim.simulate(&TerrainParams::flat(3.0).unwrap(), 0).unwrap();
        assert!(simulation_count() > before);
    }
}
