use proptest::prelude::*;

use fracsaddle::problem::{admissible_b_interval, b_feasibility_coefficient, BInterval};
use fracsaddle::saddle::{derivative_fields, load_field, save_field, SaddleField};
use fracsaddle::problem::NonlinearityModel;
use fracsaddle::verify::{
    build_phi, check_barrier_bound, check_monotonicity, check_supersolution, check_uniqueness, TrustRegion,
};

mod common;

fn field() -> SaddleField {
    common::small_saddle(7, 33, 12).0
}

#[test]
fn saddle_solution_is_odd_bounded_and_converged() {
    let sf = field();
    let g = &sf.grid;
    assert!(sf.residual_norm < 1e-8, "residual {:e}", sf.residual_norm);
    let n = g.n_s();
    for k in 0..g.n_lambda() {
        for j in 0..n {
            for i in 0..n {
                let (u, v) = (sf.u[g.idx(i, j, k)], sf.u[g.idx(j, i, k)]);
                assert!((u + v).abs() < 1e-12);
                assert!(u.abs() < 1.0);
                if i > j && i + 1 < n {
                    assert!(u > 0.0, "u <= 0 at ({i}, {j}, {k})");
                }
            }
        }
    }
}

#[test]
fn field_files_round_trip_and_reject_nan() {
    let sf = field();
    let dir = tempfile::tempdir().unwrap();
    save_field(dir.path(), "saddle", &sf, &NonlinearityModel::cubic()).unwrap();
    let back = load_field(dir.path(), "saddle").unwrap();
    assert_eq!(back.u, sf.u);
    assert_eq!(back.params, sf.params);

    let path = dir.path().join("saddle.csv");
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let last = lines[40].rfind(',').unwrap();
    lines[40].replace_range(last + 1.., "NaN");
    std::fs::write(&path, lines.join("\n")).unwrap();
    assert!(load_field(dir.path(), "saddle").is_err());
}

#[test]
fn admissible_b_interval_oracle() {
    // b(b − m + 2) + m − 1 ≤ 0 has real roots iff m² − 8m + 8 ≥ 0
    for m in 1..=6 {
        assert_eq!(admissible_b_interval(m), BInterval::Infeasible, "m = {m}");
    }
    assert_eq!(admissible_b_interval(7), BInterval::Feasible { low: 2.0, high: 3.0 });
    match admissible_b_interval(10) {
        BInterval::Feasible { low, high } => {
            assert!((low - (4.0 - 7f64.sqrt())).abs() < 1e-12);
            assert!((high - (4.0 + 7f64.sqrt())).abs() < 1e-12);
        }
        BInterval::Infeasible => panic!("m = 10 is feasible"),
    }
}

proptest! {
    #[test]
    fn feasibility_coefficient_agrees_with_interval(m in 7usize..40, b in 0.0f64..40.0) {
        let inside = admissible_b_interval(m).contains(b);
        let c = b_feasibility_coefficient(m, b);
        prop_assert!(inside == (c <= 1e-12) || c.abs() < 1e-9);
    }
}

#[test]
fn trust_region_membership() {
    let sf = field();
    let g = &sf.grid;
    let n = g.n_s();
    let all = TrustRegion::everything();
    let core = TrustRegion::default();
    assert!(all.contains(g, n - 1, 0, g.n_lambda() - 1));
    assert!(!core.contains(g, n - 1, 0, 0));
    assert!(core.contains(g, 5, 2, 1));
}

#[test]
fn verification_suite_on_a_coarse_field() {
    let (sf, bt) = common::small_saddle(7, 33, 12);
    let sf = derivative_fields(sf);
    let region = TrustRegion::default();
    let mono = check_monotonicity(&sf, 1e-8, &region).unwrap();
    assert!(mono.pass(), "{:#?}", mono.checks.iter().filter(|c| !c.pass).collect::<Vec<_>>());
    let bound = check_barrier_bound(&sf, &bt, 1e-6, &region);
    assert!(bound.pass());
    let sup = check_supersolution(&sf, &NonlinearityModel::cubic(), 2.5, 10.0 * sf.residual_norm.max(1e-8), &region).unwrap();
    assert!(sup.checks.iter().any(|c| c.name.contains("phi > 0")));
    let same = check_uniqueness(&sf, &sf, 1e-3).unwrap();
    assert!(same.pass());
}

#[test]
fn phi_rejects_infeasible_exponents_and_needs_derivatives() {
    let sf = field();
    assert!(build_phi(&sf, 2.5).is_err(), "derivative fields are required");
    let sf = derivative_fields(sf);
    assert!(build_phi(&sf, 5.0).is_err());
    let phi = build_phi(&sf, 2.5).unwrap();
    assert!(phi.phi.iter().filter(|v| v.is_finite()).count() > 0);
}

#[test]
fn uniqueness_detects_a_perturbation() {
    let sf = field();
    let mut other = sf.clone();
    let g = &sf.grid;
    let p = g.idx(10, 3, 2);
    other.u[p] += 0.01;
    assert!(!check_uniqueness(&sf, &other, 1e-3).unwrap().pass());
}
