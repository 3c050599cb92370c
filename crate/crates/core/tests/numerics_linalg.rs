use approx::assert_relative_eq;
use proptest::prelude::*;

use fracsaddle::grid::{apply_operator, weighted_dot, Grid3, GridSpec};
use fracsaddle::linalg::{dot, pcg, LinePreconditioner, Stiffness};
use fracsaddle::numerics::{fit_slope, gauss_legendre, powdiff, MonotoneCubic};
use fracsaddle::problem::ProblemParams;

fn grid(m: usize, gamma: f64, n: usize, nl: usize) -> Grid3 {
    let params = ProblemParams::new(m, gamma, 1.0).unwrap();
    Grid3::new(GridSpec::new(6.0, 6.0, n, nl), &params).unwrap()
}

fn pseudo(len: usize, salt: usize) -> Vec<f64> {
    (0..len).map(|r| ((r * 7919 + salt * 104729) % 211) as f64 / 211.0 - 0.5).collect()
}

#[test]
fn gauss_legendre_is_exact_for_degree_2n_minus_1() {
    let (x, w) = gauss_legendre(6);
    for d in 0..12 {
        let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(d)).sum();
        let exact = if d % 2 == 1 { 0.0 } else { 2.0 / (d as f64 + 1.0) };
        assert_relative_eq!(q, exact, epsilon = 1e-14);
    }
}

#[test]
fn powdiff_matches_log_at_zero_power() {
    assert_relative_eq!(powdiff(3.0, 2.0, 0.0), (1.5f64).ln(), epsilon = 1e-15);
    assert_relative_eq!(powdiff(3.0, 2.0, 1e-9), (1.5f64).ln(), epsilon = 1e-9);
    assert_relative_eq!(powdiff(3.0, 2.0, 2.0), 2.5, epsilon = 1e-14);
}

#[test]
fn slope_of_exact_power_law() {
    let x: Vec<f64> = (1..6).map(|k| (k as f64).ln()).collect();
    let y: Vec<f64> = x.iter().map(|v| 3.0 * v - 1.0).collect();
    assert_relative_eq!(fit_slope(&x, &y), 3.0, epsilon = 1e-12);
}

proptest! {
    #[test]
    fn monotone_cubic_preserves_monotone_data(steps in prop::collection::vec(0.0f64..1.0, 3..12), q in 0.0f64..1.0) {
        let x: Vec<f64> = (0..steps.len()).map(|i| i as f64).collect();
        let y: Vec<f64> = steps.iter().scan(0.0, |acc, s| { *acc += s; Some(*acc) }).collect();
        let c = MonotoneCubic::new(&x, &y);
        let span = x[x.len() - 1];
        let (a, b) = (q * span * 0.5, q * span * 0.5 + 0.25 * span);
        prop_assert!(c.eval(a) <= c.eval(b) + 1e-12);
        for (xi, yi) in x.iter().zip(&y) {
            prop_assert!((c.eval(*xi) - yi).abs() < 1e-12);
        }
    }
}

#[test]
fn grid_measures_are_positive_and_graded() {
    let g = grid(3, 0.25, 17, 9);
    assert_eq!(g.len(), 17 * 17 * 9);
    assert_relative_eq!(g.grading, 2.0 / 1.5, epsilon = 1e-14);
    assert!(g.lambda.windows(2).all(|w| w[1] > w[0]));
    // graded spacing grows away from λ = 0
    assert!(g.lambda[1] - g.lambda[0] < g.lambda[8] - g.lambda[7]);
    let p = g.idx(3, 5, 2);
    assert_eq!(g.coords(p), (3, 5, 2));
    assert!(g.mass(3, 5, 2) > 0.0);
}

#[test]
fn discrete_operator_annihilates_constants() {
    let g = grid(7, 0.5, 13, 7);
    let lu = apply_operator(&g, &vec![2.5; g.len()]);
    assert!(lu.iter().all(|v| v.abs() < 1e-10));
}

#[test]
fn weighted_inner_product_is_symmetric_and_positive() {
    let g = grid(2, 0.5, 11, 6);
    let v = pseudo(g.len(), 1);
    let w = pseudo(g.len(), 2);
    assert_relative_eq!(weighted_dot(&g, &v, &w), weighted_dot(&g, &w, &v), epsilon = 1e-14);
    assert!(weighted_dot(&g, &v, &v) > 0.0);
}

#[test]
fn stiffness_is_symmetric_and_positive_definite() {
    for (m, gamma) in [(1, 0.5), (7, 0.25), (4, 0.75)] {
        let g = grid(m, gamma, 15, 8);
        let (n, nl) = (g.n_s(), g.n_lambda());
        let a = Stiffness::new(&g, |i, j, k| i > j && i + 1 < n && k + 1 < nl);
        let x = pseudo(a.len(), 3);
        let y = pseudo(a.len(), 4);
        let (mut ax, mut ay) = (vec![0.0; a.len()], vec![0.0; a.len()]);
        a.apply(&x, None, &mut ax);
        a.apply(&y, None, &mut ay);
        assert_relative_eq!(dot(&ax, &y), dot(&ay, &x), max_relative = 1e-12);
        assert!(dot(&ax, &x) > 0.0);
    }
}

#[test]
fn pcg_recovers_a_manufactured_solution() {
    let g = grid(7, 0.5, 21, 9);
    let (n, nl) = (g.n_s(), g.n_lambda());
    let a = Stiffness::new(&g, |i, j, k| i > j && i + 1 < n && k + 1 < nl);
    let x = pseudo(a.len(), 5);
    let mut b = vec![0.0; a.len()];
    a.apply(&x, None, &mut b);
    let pre = LinePreconditioner::new(&a, None);
    let mut sol = vec![0.0; a.len()];
    let info = pcg(&a, None, &pre, &b, &mut sol, 1e-12, 5000);
    assert!(info.converged && !info.indefinite);
    let err = sol.iter().zip(&x).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    assert!(err < 1e-8, "error {err:e}");
}
