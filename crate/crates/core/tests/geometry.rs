use proptest::prelude::*;

use fracsaddle::geometry::{
    half_ball_cone_ratio, half_ball_measure, narrow_radius, unit_ball_volume, weighted_measure, NarrowOptions,
    SetDescriptor,
};
use fracsaddle::Error;

#[test]
fn unit_ball_volumes() {
    assert!((unit_ball_volume(1) - 2.0).abs() < 1e-14);
    assert!((unit_ball_volume(2) - std::f64::consts::PI).abs() < 1e-14);
    assert!((unit_ball_volume(3) - 4.0 * std::f64::consts::PI / 3.0).abs() < 1e-13);
}

/// |B⁺_1|_0 in ℝ² × (0, ∞) is half the unit 3-ball; in ℝ¹ with weight λ^{1/2} the measure is
/// checked against direct quadrature.
#[test]
fn half_ball_measure_oracles() {
    assert!((half_ball_measure(2, 1.0, 0.0) - 2.0 * std::f64::consts::PI / 3.0).abs() < 1e-12);
    let (x, w) = fracsaddle::numerics::gauss_legendre(400);
    // ∫_0^1 λ^{1/2}·2√(1 − λ²) dλ with λ = u² to remove the endpoint singularity
    let q: f64 = x
        .iter()
        .zip(&w)
        .map(|(x, w)| {
            let u = 0.5 * (x + 1.0);
            let l = u * u;
            0.5 * w * u * 2.0 * (1.0 - l * l).sqrt() * 2.0 * u
        })
        .sum();
    assert!((half_ball_measure(1, 1.0, 0.5) - q).abs() < 1e-5, "{q}");
    // scaling |B⁺_R|_a = R^{n+1+a}|B⁺_1|_a
    assert!((half_ball_measure(3, 2.0, -0.4) - 2f64.powf(3.6) * half_ball_measure(3, 1.0, -0.4)).abs() < 1e-10);
}

#[test]
fn monte_carlo_matches_half_ball_measure() {
    for (n, a) in [(2usize, 0.0), (1, 0.5), (4, -0.5)] {
        let x0 = vec![0.3; n];
        let e = weighted_measure(&SetDescriptor::All, &x0, 1.5, a, 200_000, 5).unwrap();
        let exact = half_ball_measure(n, 1.5, a);
        assert!((e.value - exact).abs() <= 4.0 * e.stderr, "n = {n}, a = {a}: {e:?} vs {exact}");
    }
}

#[test]
fn weighted_measure_is_additive_over_disjoint_pieces() {
    let whole = SetDescriptor::Box { lo: vec![-1.0, 0.0], hi: vec![1.0, 0.5] };
    let left = SetDescriptor::Box { lo: vec![-1.0, 0.0], hi: vec![0.2, 0.5] };
    let right = SetDescriptor::Box { lo: vec![0.2, 0.0], hi: vec![1.0, 0.5] };
    let m = |d: &SetDescriptor| weighted_measure(d, &[0.1], 1.0, 0.3, 50_000, 9).unwrap().value;
    // identical samples, so the split is exact up to rounding
    assert!((m(&left) + m(&right) - m(&whole)).abs() < 1e-12);
    assert_eq!(m(&SetDescriptor::Empty), 0.0);
}

#[test]
fn weighted_measure_is_deterministic() {
    let d = SetDescriptor::Slab { eps: 0.2 };
    let a = weighted_measure(&d, &[0.0, 1.0], 1.0, 0.0, 30_000, 3).unwrap();
    let b = weighted_measure(&d, &[0.0, 1.0], 1.0, 0.0, 30_000, 3).unwrap();
    assert_eq!(a, b);
}

#[test]
fn cone_ratio_is_one_half_and_block_invariant() {
    let m = 3;
    let mut x = vec![0.0; 2 * m];
    x[0] = 1.2;
    x[m] = 1.2;
    let base = half_ball_cone_ratio(&x, 0.8, 200_000, 1).unwrap();
    assert!((base.value - 0.5).abs() <= 4.0 * base.stderr);
    // rotate inside each block: (x′, x″) ↦ (Qx′, Px″)
    let c = std::f64::consts::FRAC_1_SQRT_2 * 1.2;
    let mut y = vec![0.0; 2 * m];
    y[0] = c;
    y[1] = c;
    y[m + 2] = 1.2;
    let rotated = half_ball_cone_ratio(&y, 0.8, 200_000, 2).unwrap();
    let se = (base.stderr.powi(2) + rotated.stderr.powi(2)).sqrt();
    assert!((base.value - rotated.value).abs() <= 4.0 * se);
    // swapping the blocks maps O onto its complement
    let mut z = x.clone();
    z.rotate_left(m);
    let swapped = half_ball_cone_ratio(&z, 0.8, 200_000, 1).unwrap();
    assert!((swapped.value - base.value).abs() <= 4.0 * se);
}

#[test]
fn geometry_input_errors() {
    assert!(matches!(half_ball_cone_ratio(&[1.0, 0.5], 1.0, 10_000, 0), Err(Error::Precondition(_))));
    assert!(matches!(weighted_measure(&SetDescriptor::All, &[0.0], 1.0, 1.0, 10_000, 0), Err(Error::Domain(_))));
    assert!(weighted_measure(&SetDescriptor::All, &[0.0], 1.0, 0.0, 100, 0).is_err());
    assert!(SetDescriptor::Slab { eps: -1.0 }.validate().is_err());
    assert!(weighted_measure(&SetDescriptor::ConeSide { m: 2 }, &[0.0; 3], 1.0, 0.0, 10_000, 0).is_err());
}

#[test]
fn descriptors_round_trip_through_json() {
    let all = [
        SetDescriptor::All,
        SetDescriptor::Wedge { eps: 0.1, slope: 0.5 },
        SetDescriptor::ConeNeighborhood { m: 7, eps: 0.1 },
        SetDescriptor::Box { lo: vec![0.0, 0.0], hi: vec![1.0, 1.0] },
        SetDescriptor::HalfSpaceComplement { normal: vec![1.0, 0.0], offset: 0.5 },
    ];
    for d in all {
        let text = serde_json::to_string(&d).unwrap();
        assert_eq!(serde_json::from_str::<SetDescriptor>(&text).unwrap(), d);
    }
    let parsed: SetDescriptor = serde_json::from_str(r#"{"kind": "slab", "eps": 0.25}"#).unwrap();
    assert_eq!(parsed, SetDescriptor::Slab { eps: 0.25 });
}

#[test]
fn narrow_radius_of_the_slab_and_wedge() {
    let opts = NarrowOptions { dim: Some(1), samples: 40_000, ..NarrowOptions::default() };
    let grid = [0.025, 0.05, 0.1, 0.2, 0.4, 0.8];
    let slab = narrow_radius(&SetDescriptor::Slab { eps: 0.1 }, &SetDescriptor::All, 0.5, 0.0, &grid, &opts).unwrap();
    assert!(slab.radius.is_finite() && slab.radius <= 0.5);
    let wedge = SetDescriptor::Wedge { eps: 0.1, slope: 0.5 };
    let grid: Vec<f64> = (0..7).map(|k| 0.1 * 2f64.powi(k)).collect();
    let w = narrow_radius(&wedge, &wedge, 0.5, 0.0, &grid, &opts).unwrap();
    assert_eq!(w.radius, f64::INFINITY);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]
    #[test]
    fn narrow_radius_grows_with_theta(t1 in 0.1f64..0.6, dt in 0.0f64..0.3) {
        let opts = NarrowOptions { dim: Some(1), samples: 20_000, probe_points: 3, ..NarrowOptions::default() };
        let grid = [0.025, 0.05, 0.1, 0.2, 0.4, 0.8, 1.6];
        let slab = SetDescriptor::Slab { eps: 0.1 };
        let a = narrow_radius(&slab, &SetDescriptor::All, t1, 0.0, &grid, &opts).unwrap();
        let b = narrow_radius(&slab, &SetDescriptor::All, t1 + dt, 0.0, &grid, &opts).unwrap();
        if a.radius.is_finite() && b.radius.is_finite() {
            prop_assert!(a.radius <= b.radius + 1e-12);
        }
    }
}
