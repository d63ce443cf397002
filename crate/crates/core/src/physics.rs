//! Closed-form electromagnetic quantities.
//!
//! All arithmetic happens on linear power. Decibels are only produced or
//! consumed at the edges through [`db_to_linear`] and [`linear_to_db`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Relative dielectric constant of a lossless medium, `eps >= 1`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Permittivity(f64);

impl Permittivity {
    pub fn new(eps: f64) -> Result<Self> {
        if !eps.is_finite() || eps < 1.0 {
            return Err(Error::Domain(format!(
                "relative permittivity must be finite and >= 1, got {eps}"
            )));
        }
        Ok(Self(eps))
    }

    #[inline]
    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Permittivity {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<Permittivity> for f64 {
    fn from(p: Permittivity) -> f64 {
        p.0
    }
}

/// Power in decibels relative to an arbitrary common level.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct PowerDb(f64);

impl PowerDb {
    pub fn new(value: f64) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::Domain(format!("dB value must be finite, got {value}")));
        }
        Ok(Self(value))
    }

    #[inline]
    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for PowerDb {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<PowerDb> for f64 {
    fn from(p: PowerDb) -> f64 {
        p.0
    }
}

/// Non-negative linear power in arbitrary but consistent units.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct PowerLinear(f64);

impl PowerLinear {
    pub fn new(value: f64) -> Result<Self> {
        if !(value >= 0.0) || !value.is_finite() {
            return Err(Error::Domain(format!(
                "linear power must be finite and >= 0, got {value}"
            )));
        }
        Ok(Self(value))
    }

    #[inline]
    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for PowerLinear {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<PowerLinear> for f64 {
    fn from(p: PowerLinear) -> f64 {
        p.0
    }
}

/// Normal-incidence Fresnel amplitude coefficient `(1 - √ε) / (1 + √ε)`.
///
/// Negative for every `ε > 1`; the sign is the half-wave phase flip on
/// reflection from a denser medium.
#[inline]
pub fn fresnel_amplitude(eps: Permittivity) -> f64 {
    let s = eps.get().sqrt();
    (1.0 - s) / (1.0 + s)
}

/// Normal-incidence power reflectance `|(1 - √ε) / (1 + √ε)|²`, in `[0, 1)`.
#[inline]
pub fn fresnel_power_reflectance(eps: Permittivity) -> f64 {
    let g = fresnel_amplitude(eps);
    g * g
}

/// Relative power conditioned on an assumed reference permittivity:
///
/// ```text
/// h = P / P_ref · |(1 - √ε_ref) / (1 + √ε_ref)|²
/// ```
///
/// Any gain common to `p` and `p_ref` cancels, so uncalibrated powers are
/// fine as long as both come from the same instrument chain.
pub fn compute_h(p: PowerLinear, p_ref: PowerLinear, eps_ref: Permittivity) -> Result<f64> {
    if p_ref.get() == 0.0 {
        return Err(Error::Division("reference power is zero".into()));
    }
    Ok(p.get() / p_ref.get() * fresnel_power_reflectance(eps_ref))
}

/// `10^(dB / 10)`.
#[inline]
pub fn db_to_linear(p: PowerDb) -> PowerLinear {
    PowerLinear(10f64.powf(p.get() / 10.0))
}

/// `10 · log10(p)`; zero power has no decibel representation.
pub fn linear_to_db(p: PowerLinear) -> Result<PowerDb> {
    if p.get() <= 0.0 {
        return Err(Error::Domain("cannot express zero power in dB".into()));
    }
    PowerDb::new(10.0 * p.get().log10())
}

/// Which way the altitude correction `(r / r_ref)` is applied.
///
/// `Multiply` is the literal factor; `Divide` uses `(r_ref / r)`, which is the
/// direction a `1/r²`-style loss would suggest for a higher orbit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AltitudeCorrection {
    #[default]
    Multiply,
    Divide,
}

impl AltitudeCorrection {
    /// Signed exponent applied to `r / r_ref`.
    pub fn exponent(self) -> i32 {
        match self {
            AltitudeCorrection::Multiply => 1,
            AltitudeCorrection::Divide => -1,
        }
    }
}

/// Rescales a reference power measured at `r_ref_km` to altitude `r_km`.
pub fn altitude_rescale(
    p_ref: PowerLinear,
    r_ref_km: f64,
    r_km: f64,
    correction: AltitudeCorrection,
) -> Result<PowerLinear> {
    if !(r_ref_km > 0.0) || !(r_km > 0.0) || !r_ref_km.is_finite() || !r_km.is_finite() {
        return Err(Error::Domain(format!(
            "altitudes must be positive, got r_ref = {r_ref_km} km, r = {r_km} km"
        )));
    }
    let factor = (r_km / r_ref_km).powi(correction.exponent());
    PowerLinear::new(p_ref.get() * factor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn eps(v: f64) -> Permittivity {
        Permittivity::new(v).unwrap()
    }

    fn lin(v: f64) -> PowerLinear {
        PowerLinear::new(v).unwrap()
    }

    #[test]
    fn reflectance_examples() {
        assert_eq!(fresnel_power_reflectance(eps(1.0)), 0.0);
        assert_relative_eq!(fresnel_power_reflectance(eps(4.0)), 1.0 / 9.0, max_relative = 1e-15);
        assert!((fresnel_power_reflectance(eps(3.1)) - 0.075923).abs() < 5e-7);
    }

    #[test]
    fn permittivity_below_one_is_rejected() {
        assert!(matches!(Permittivity::new(0.99), Err(Error::Domain(_))));
        assert!(Permittivity::new(f64::NAN).is_err());
        assert!(serde_json::from_str::<Permittivity>("0.5").is_err());
    }

    #[test]
    fn h_examples() {
        assert_relative_eq!(compute_h(lin(2.5), lin(2.5), eps(4.0)).unwrap(), 1.0 / 9.0, max_relative = 1e-15);
        assert_eq!(compute_h(lin(2.0), lin(1.0), eps(1.0)).unwrap(), 0.0);
        let ratio = 10f64.powf(0.211);
        let h = compute_h(lin(ratio), lin(1.0), eps(3.1)).unwrap();
        assert!((h - 0.123416).abs() < 1e-6, "h = {h}");
    }

    #[test]
    fn h_rejects_zero_reference() {
        assert!(matches!(compute_h(lin(1.0), lin(0.0), eps(3.0)), Err(Error::Division(_))));
    }

    #[test]
    fn db_examples() {
        assert_eq!(db_to_linear(PowerDb::new(0.0).unwrap()).get(), 1.0);
        assert_relative_eq!(db_to_linear(PowerDb::new(10.0).unwrap()).get(), 10.0, max_relative = 1e-15);
        // 10^3.473 evaluated independently.
        let p = db_to_linear(PowerDb::new(34.73).unwrap()).get();
        assert!((p - 2971.666).abs() < 1e-3, "p = {p}");
        assert!(linear_to_db(lin(0.0)).is_err());
    }

    #[test]
    fn altitude_examples() {
        let p = altitude_rescale(lin(3.0), 250.0, 250.0, AltitudeCorrection::Multiply).unwrap();
        assert_eq!(p.get(), 3.0);
        let p = altitude_rescale(lin(1.0), 250.0, 300.0, AltitudeCorrection::Multiply).unwrap();
        assert_relative_eq!(p.get(), 1.2, max_relative = 1e-15);
        let p_ref = db_to_linear(PowerDb::new(32.62).unwrap());
        let p = altitude_rescale(p_ref, 250.0, 300.0, AltitudeCorrection::Multiply).unwrap();
        assert!((linear_to_db(p).unwrap().get() - 33.4118).abs() < 1e-4);
        let p = altitude_rescale(lin(1.2), 250.0, 300.0, AltitudeCorrection::Divide).unwrap();
        assert_relative_eq!(p.get(), 1.0, max_relative = 1e-15);
        assert!(altitude_rescale(lin(1.0), 0.0, 300.0, AltitudeCorrection::Multiply).is_err());
        assert!(altitude_rescale(lin(1.0), 250.0, -1.0, AltitudeCorrection::Multiply).is_err());
    }

    proptest! {
        #[test]
        fn reflectance_increasing_and_bounded(a in 1.0f64..500.0, d in 1e-6f64..50.0) {
            let lo = fresnel_power_reflectance(eps(a));
            let hi = fresnel_power_reflectance(eps(a + d));
            prop_assert!(hi > lo || a == 1.0 && hi > 0.0);
            prop_assert!(hi < 1.0);
        }

        #[test]
        fn h_linear_in_power(p in 0.0f64..1e6, pr in 1e-6f64..1e6, a in 0.0f64..100.0, e in 1.0f64..20.0) {
            let base = compute_h(lin(p), lin(pr), eps(e)).unwrap();
            let scaled = compute_h(lin(a * p), lin(pr), eps(e)).unwrap();
            prop_assert!((scaled - a * base).abs() <= 1e-12 * (a * base).abs().max(1e-300));
        }

        #[test]
        fn h_invariant_to_common_gain(p in 0.0f64..1e6, pr in 1e-6f64..1e6, g in 1e-6f64..1e6, e in 1.0f64..20.0) {
            let base = compute_h(lin(p), lin(pr), eps(e)).unwrap();
            let gained = compute_h(lin(g * p), lin(g * pr), eps(e)).unwrap();
            prop_assert!((gained - base).abs() <= 1e-12 * base.abs().max(1e-300));
        }

        #[test]
        fn db_round_trip(x in -100.0f64..100.0) {
            let back = linear_to_db(db_to_linear(PowerDb::new(x).unwrap())).unwrap().get();
            prop_assert!((back - x).abs() <= 1e-12);
        }
    }
}
