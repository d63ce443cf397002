use proptest::prelude::*;
use rsnpe::physics::{fresnel_power_reflectance, Permittivity};
use rsnpe::simulator::peak_power;
use rsnpe::surface::{estimate_surface_stats, synthesize_grf, SurfaceSpec};
use rsnpe::{RadarConfig, Simulator, TerrainParams};

fn flat_power(sim: &Simulator, eps: f64) -> f64 {
    peak_power(&sim.simulate(&TerrainParams::flat(eps).unwrap(), 0).unwrap()).get()
}

#[test]
fn rougher_surfaces_return_less_coherent_power_on_average() {
    let sim = Simulator::new(RadarConfig::default().noiseless()).unwrap();
    let mean = |sigma: f64| {
        let theta = TerrainParams::new(5.0, sigma, 0.1).unwrap();
        (0..16).map(|s| peak_power(&sim.simulate(&theta, s).unwrap()).get()).sum::<f64>() / 16.0
    };
    let powers: Vec<f64> = [0.0, 0.5, 2.0, 5.0].iter().map(|&s| mean(s)).collect();
    assert!(powers.windows(2).all(|w| w[0] > w[1]), "{powers:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn flat_plate_ratio_follows_fresnel(a in 1.5f64..40.0, b in 1.5f64..40.0) {
        let sim = Simulator::new(RadarConfig::default().noiseless()).unwrap();
        let got = flat_power(&sim, a) / flat_power(&sim, b);
        let want = fresnel_power_reflectance(Permittivity::new(a).unwrap())
            / fresnel_power_reflectance(Permittivity::new(b).unwrap());
        prop_assert!((got / want - 1.0).abs() < 1e-9, "{} vs {}", got, want);
    }

    #[test]
    fn peak_power_is_positive_and_reproducible(
        eps in 2.0f64..12.0, sigma in 0.0f64..5.0, slope in 0.0f64..0.5, seed in any::<u64>()
    ) {
        let sim = Simulator::new(RadarConfig::default()).unwrap();
        let theta = TerrainParams::new(eps, sigma, slope).unwrap();
        let a = sim.peak_power(&theta, seed).unwrap().get();
        let b = sim.peak_power(&theta, seed).unwrap().get();
        prop_assert!(a.is_finite() && a > 0.0);
        prop_assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn grf_heights_have_zero_mean_and_requested_rms(
        sigma in 0.1f64..5.0, slope in 0.02f64..0.3, seed in any::<u64>()
    ) {
        let spec = SurfaceSpec { sigma, slope, dx: 1.5, n: 256, seed };
        let mesh = synthesize_grf(&spec).unwrap();
        let mean = mesh.heights().iter().sum::<f64>() / mesh.heights().len() as f64;
        let (h, _) = estimate_surface_stats(&mesh).unwrap();
        prop_assert!(mean.abs() < 1e-9 * sigma.max(1.0));
        prop_assert!((h / sigma - 1.0).abs() < 1e-9, "{} vs {}", h, sigma);
    }
}
