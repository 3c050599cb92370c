use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fracsaddle::problem::NonlinearityModel;
use fracsaddle::saddle::{derivative_fields, SaddleField};
use fracsaddle::stability::{
    cutoff, cutoff_family_check, min_rayleigh, quadratic_form, smooth_step, StabilityOptions, Verdict,
};
use fracsaddle::verify::build_phi;
use fracsaddle::Error;

mod common;

/// A random test function vanishing on the outer faces of the quadrant.
fn test_function(sf: &SaddleField, seed: u64) -> Vec<f64> {
    let g = &sf.grid;
    let (n, nl) = (g.n_s(), g.n_lambda());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..g.len())
        .map(|p| {
            let (i, j, k) = g.coords(p);
            if i + 1 < n && j + 1 < n && k + 1 < nl {
                rng.gen::<f64>() - 0.5
            } else {
                0.0
            }
        })
        .collect()
}

fn quotient(sf: &SaddleField, xi: &[f64]) -> f64 {
    let (num, den) = quadratic_form(sf, &NonlinearityModel::cubic(), xi).unwrap();
    num / den
}

#[test]
fn form_is_even_and_quadratic() {
    let (sf, _) = common::small_saddle(3, 25, 10);
    let model = NonlinearityModel::cubic();
    let xi = test_function(&sf, 1);
    let (num, den) = quadratic_form(&sf, &model, &xi).unwrap();
    for c in [-1.0, 3.0, 0.25] {
        let scaled: Vec<f64> = xi.iter().map(|v| c * v).collect();
        let (n2, d2) = quadratic_form(&sf, &model, &scaled).unwrap();
        assert!((n2 - c * c * num).abs() <= 1e-12 * num.abs().max(1.0));
        assert!((d2 - c * c * den).abs() <= 1e-12 * den);
    }
}

/// Polarization: Q(x + y) + Q(x − y) = 2Q(x) + 2Q(y) for a quadratic form.
#[test]
fn form_satisfies_the_parallelogram_law() {
    let (sf, _) = common::small_saddle(2, 25, 10);
    let model = NonlinearityModel::cubic();
    let x = test_function(&sf, 2);
    let y = test_function(&sf, 3);
    let q = |v: &[f64]| quadratic_form(&sf, &model, v).unwrap().0;
    let plus: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
    let minus: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
    let lhs = q(&plus) + q(&minus);
    let rhs = 2.0 * q(&x) + 2.0 * q(&y);
    assert!((lhs - rhs).abs() <= 1e-10 * rhs.abs().max(1.0));
}

#[test]
fn form_rejects_invalid_test_functions() {
    let (sf, _) = common::small_saddle(2, 25, 10);
    let model = NonlinearityModel::cubic();
    assert!(matches!(quadratic_form(&sf, &model, &[0.0; 3]), Err(Error::Dimension { .. })));
    let mut xi = test_function(&sf, 4);
    let g = &sf.grid;
    xi[g.idx(g.n_s() - 1, 2, 2)] = 1.0;
    assert!(matches!(quadratic_form(&sf, &model, &xi), Err(Error::Precondition(_))));
    assert!(matches!(quadratic_form(&sf, &model, &vec![0.0; g.len()]), Err(Error::Degenerate(_))));
    let mut xi = test_function(&sf, 4);
    xi[g.idx(3, 2, 2)] = f64::NAN;
    assert!(matches!(quadratic_form(&sf, &model, &xi), Err(Error::InvalidData(_))));
}

#[test]
fn minimal_quotient_bounds_every_test_function() {
    let (sf, _) = common::small_saddle(1, 33, 12);
    let rep = min_rayleigh(&sf, &NonlinearityModel::cubic(), &StabilityOptions::default()).unwrap();
    assert!(rep.lambda_min_estimate < 0.0, "m = 1 is unstable, got {}", rep.lambda_min_estimate);
    // the estimate is the quotient of its own witness
    assert!((quotient(&sf, &rep.witness) - rep.lambda_min_estimate).abs() < 1e-9);
    // and is below the quotient of any other admissible function
    for seed in 10..15 {
        assert!(rep.lambda_min_estimate <= quotient(&sf, &test_function(&sf, seed)) + 1e-9);
    }
    // witness scaling does not change the quotient
    let scaled: Vec<f64> = rep.witness.iter().map(|v| -7.0 * v).collect();
    assert!((quotient(&sf, &scaled) - rep.lambda_min_estimate).abs() < 1e-9);
}

#[test]
fn stable_dimension_gives_nonnegative_quotients() {
    let (sf, _) = common::small_saddle(7, 33, 12);
    let rep = min_rayleigh(&sf, &NonlinearityModel::cubic(), &StabilityOptions::default()).unwrap();
    assert_eq!(rep.verdict, Verdict::StableAtTolerance);
    let tol = 10.0 * rep.tolerance;

    // a bump times the supersolution φ
    let sf = derivative_fields(sf);
    let phi = build_phi(&sf, 2.5).unwrap();
    let g = &sf.grid;
    let (n, nl) = (g.n_s(), g.n_lambda());
    let radius = 0.8 * g.spec.s_max.min(g.spec.lambda_max);
    let xi: Vec<f64> = (0..g.len())
        .map(|p| {
            let (i, j, k) = g.coords(p);
            if i == 0 || j == 0 || i + 1 == n || j + 1 == n || k + 1 == nl {
                return 0.0;
            }
            let r = (g.s[i].powi(2) + g.s[j].powi(2) + g.lambda[k].powi(2)).sqrt();
            (1.0 - r / radius).max(0.0).powi(2) * phi.phi[p]
        })
        .collect();
    assert!(quotient(&sf, &xi) >= -tol);
}

#[test]
fn deterministic_for_a_fixed_seed() {
    let (sf, _) = common::small_saddle(2, 25, 10);
    let model = NonlinearityModel::cubic();
    let a = min_rayleigh(&sf, &model, &StabilityOptions::default()).unwrap();
    let b = min_rayleigh(&sf, &model, &StabilityOptions::default()).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.witness, b.witness);
}

proptest! {
    #[test]
    fn smooth_step_is_a_monotone_ramp(x in -1.0f64..2.0, dx in 0.0f64..1.0) {
        let (a, b) = (smooth_step(x), smooth_step(x + dx));
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!(a <= b + 1e-15);
        if x <= 0.0 { prop_assert_eq!(a, 0.0); }
        if x >= 1.0 { prop_assert_eq!(a, 1.0); }
    }

    #[test]
    fn cutoff_shape(eps in 0.1f64..5.0, s in 0.0f64..20.0) {
        let v = cutoff(eps, s);
        prop_assert!((0.0..=1.0).contains(&v));
        if s <= 0.5 * eps { prop_assert_eq!(v, 0.0); }
        if s >= 1.000_001 * eps { prop_assert_eq!(v, 1.0); }
    }
}

#[test]
fn cutoff_family_preconditions() {
    let (sf, _) = common::small_saddle(2, 25, 10);
    assert!(matches!(cutoff_family_check(&sf, &[4.0, 2.0], 8.0), Err(Error::Precondition(_))));
    let (sf, _) = common::small_saddle(3, 25, 10);
    assert!(matches!(cutoff_family_check(&sf, &[4.0, 0.1], 8.0), Err(Error::Truncation(_))));
    assert!(cutoff_family_check(&sf, &[4.0], 8.0).is_err());
}
