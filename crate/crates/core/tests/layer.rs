use std::f64::consts::PI;

use fracsaddle::layer::{layer_derivative_signs, load_layer, save_layer, solve_layer, LayerOptions};
use fracsaddle::problem::NonlinearityModel;

mod common;

#[test]
fn sine_model_reproduces_arctan_layer() {
    let ls = solve_layer(&NonlinearityModel::sine(), 0.5, 50.0, 2000, 1e-8, &LayerOptions::default()).unwrap();
    let err = ls
        .trace
        .nodes
        .iter()
        .zip(&ls.trace.values)
        .map(|(x, v)| (v - 2.0 / PI * x.atan()).abs())
        .fold(0.0, f64::max);
    assert!(err <= 1e-3, "sup error {err:e}");
    // the extension of (2/π)arctan is (2/π)arctan(x/(1+λ))
    let u = ls.eval(1.0, 1.0).u;
    assert!((u - 2.0 / PI * 0.5f64.atan()).abs() < 1e-3);
}

#[test]
fn cubic_layer_is_odd_and_monotone() {
    let ls = common::cubic_layer();
    assert!(layer_derivative_signs(ls).pass);
    for x in [0.3, 1.7, 6.0, 25.0] {
        assert!((ls.trace_value(x) + ls.trace_value(-x)).abs() < 1e-10, "x = {x}");
    }
    assert!(ls.trace_value(0.0).abs() < 1e-12);
    let v = ls.eval(2.0, 0.0);
    assert!(v.ux > 0.0 && v.uxx < 0.0);
}

#[test]
fn layer_files_round_trip() {
    let ls = common::cubic_layer();
    let dir = tempfile::tempdir().unwrap();
    save_layer(dir.path(), "layer", ls).unwrap();
    let back = load_layer(dir.path(), "layer").unwrap();
    assert_eq!(back.trace.values, ls.trace.values);
    assert_eq!(back.gamma, ls.gamma);
    for (z, l) in [(0.5, 0.0), (-3.0, 2.0), (10.0, 7.5)] {
        assert!((back.eval(z, l).u - ls.eval(z, l).u).abs() < 1e-12);
    }
}

#[test]
fn corrupted_layer_file_is_rejected() {
    let ls = common::cubic_layer();
    let dir = tempfile::tempdir().unwrap();
    save_layer(dir.path(), "layer", ls).unwrap();
    let path = dir.path().join("layer.csv");
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut cells: Vec<String> = lines[10].split(',').map(String::from).collect();
    cells[1] = "NaN".into();
    lines[10] = cells.join(",");
    std::fs::write(&path, lines.join("\n")).unwrap();
    assert!(load_layer(dir.path(), "layer").is_err());
}

#[test]
fn invalid_layer_parameters_are_errors() {
    let cubic = NonlinearityModel::cubic();
    assert!(solve_layer(&cubic, 1.2, 50.0, 2000, 1e-8, &LayerOptions::default()).is_err());
    assert!(solve_layer(&cubic, 0.5, -1.0, 2000, 1e-8, &LayerOptions::default()).is_err());
}
