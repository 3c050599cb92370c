use std::f64::consts::PI;

use approx::assert_relative_eq;
use proptest::prelude::*;

use fracsaddle::fracops1d::{
    c_1_gamma, calibrate_d_gamma, d_gamma_exact, extend_1d, frac_lap_1d, CalibrationCache, PoissonKernel,
    SampledFunction1D, TailDecay,
};
use fracsaddle::numerics::gauss_legendre;

// Γ(1/4) and Γ(3/4) to double precision
const GAMMA_QUARTER: f64 = 3.625_609_908_221_908;
const GAMMA_THREE_QUARTERS: f64 = 1.225_416_702_465_178;

#[test]
fn dtn_constant_closed_form() {
    assert_relative_eq!(d_gamma_exact(0.5), 1.0, epsilon = 1e-14);
    let quarter = 2f64.powf(-0.5) * GAMMA_QUARTER / GAMMA_THREE_QUARTERS;
    assert_relative_eq!(d_gamma_exact(0.25), quarter, max_relative = 1e-12);
}

#[test]
fn fractional_laplacian_constant_at_one_half() {
    assert_relative_eq!(c_1_gamma(0.5), 1.0 / PI, max_relative = 1e-13);
}

proptest! {
    /// ∫_0^V P(w, 1) dw by quadrature plus the closed-form upper tail Q(V) is one half.
    #[test]
    fn poisson_kernel_has_unit_mass(gamma in 0.05f64..0.95, v in 0.5f64..6.0) {
        let k = PoissonKernel::new(gamma);
        let (x, w) = gauss_legendre(64);
        let head: f64 = x.iter().zip(&w).map(|(x, w)| 0.5 * v * w * k.density(0.5 * v * (x + 1.0), 1.0)).sum();
        prop_assert!((k.upper_tail(0.0) - 0.5).abs() < 1e-10);
        prop_assert!((head + k.upper_tail(v) - 0.5).abs() < 1e-9, "{}", head + k.upper_tail(v));
    }
}

fn arctan_sampled() -> SampledFunction1D {
    let tail = TailDecay { kappa: 2.0 / PI, exponent: 1.0, kappa2: -2.0 / (3.0 * PI), exponent2: 3.0 };
    SampledFunction1D::from_fn(|x| 2.0 / PI * x.atan(), 50.0, 2000, -1.0, 1.0).unwrap().with_tail(tail)
}

/// (2/π)arctan solves (−Δ)^{1/2}u = sin(πu)/π exactly.
#[test]
fn half_laplacian_of_arctan_layer() {
    let f = arctan_sampled();
    for (&x, &u) in f.nodes.iter().zip(&f.values).filter(|(x, _)| x.abs() <= 10.0).step_by(7) {
        let lhs = frac_lap_1d(&f, 0.5, x).unwrap();
        assert!((lhs - (PI * u).sin() / PI).abs() < 1e-4, "x = {x}: {lhs}");
    }
}

/// The harmonic extension of (2/π)arctan x is (2/π)arctan(x/(1+λ)).
#[test]
fn extension_of_arctan_layer() {
    let f = arctan_sampled();
    for (x, l) in [(0.3, 0.5), (-2.0, 1.0), (5.0, 3.0), (0.0, 2.0)] {
        let u = extend_1d(&f, 0.5, x, l).unwrap();
        assert!((u - 2.0 / PI * (x / (1.0 + l)).atan()).abs() < 1e-4, "({x}, {l}): {u}");
    }
}

#[test]
fn calibration_and_cache_round_trip() {
    let c = calibrate_d_gamma(0.5).unwrap();
    assert!((c.d_gamma - 1.0).abs() < 0.01);
    assert!(c.spread <= 0.01);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cache.json");
    let mut cache = CalibrationCache::load(&path).unwrap();
    cache.entries.insert(CalibrationCache::key(0.5), c.clone());
    cache.save(&path).unwrap();
    let mut again = CalibrationCache::load(&path).unwrap();
    let back = again.get_or_calibrate(0.5).unwrap();
    assert_relative_eq!(back.d_gamma, c.d_gamma, max_relative = 1e-15);
    assert_eq!(back.samples.len(), c.samples.len());
}
