//! The pipeline stages. Each reads its prerequisites from the output directory, refuses to
//! overwrite existing outputs unless forced, and writes JSON reports plus CSV tables.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use fracsaddle::fracops1d::{calibrate_d_gamma, d_gamma_exact, Calibration, CalibrationCache};
use fracsaddle::geometry::{half_ball_cone_ratio, narrow_radius, Estimate, NarrowOptions, NarrowRadius, SetDescriptor};
use fracsaddle::grid::{Grid3, GridSpec};
use fracsaddle::layer::{load_layer, save_layer, solve_layer, LayerOptions};
use fracsaddle::problem::{admissible_b_interval, BInterval, NonlinearityModel, ProblemParams};
use fracsaddle::saddle::{
    derivative_fields, load_field, save_field, solve_saddle, write_field_csv, BarrierTable, SaddleInit, SaddleOptions,
};
use fracsaddle::stability::{cutoff_family_check, min_rayleigh, CutoffReport, StabilityOptions, StabilityReport};
use fracsaddle::verify::{
    check_asymptotics, check_barrier_bound, check_monotonicity, check_supersolution, check_uniqueness, AsymptoticsRow,
    CheckRecord, TrustRegion, VerificationReport,
};

use crate::artifacts::{num, OutDir};
use crate::config::{DGammaSource, RunConfig};
use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Calibrate,
    Layer,
    Saddle,
    Verify,
    Stability,
    Geometry,
    Pipeline,
}

/// Whether the stage's checks held; failures map to exit status 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Passed,
    Failed,
}

impl Outcome {
    fn and(self, other: Outcome) -> Outcome {
        if self == Outcome::Passed && other == Outcome::Passed {
            Outcome::Passed
        } else {
            Outcome::Failed
        }
    }
}

const CACHE: &str = "d_gamma_cache.json";

fn outputs(stage: Stage, cfg: &RunConfig) -> Vec<&'static str> {
    match stage {
        Stage::Calibrate => vec!["calibration.json"],
        Stage::Layer => vec!["layer.csv", "layer.json", "layer_residual.csv"],
        Stage::Saddle => {
            let mut v = vec!["saddle.csv", "saddle.json", "saddle_residual.csv", "saddle_energy.csv"];
            if cfg.saddle.compare_init != "none" {
                v.extend(["saddle_alt.csv", "saddle_alt.json"]);
            }
            v
        }
        Stage::Verify => vec!["verify.json", "asymptotics.csv"],
        Stage::Stability => vec!["stability.json", "stability_history.csv", "witness.csv", "witness.json", "cutoff.csv"],
        Stage::Geometry => vec!["geometry.json", "geometry_ratios.csv"],
        Stage::Pipeline => [Stage::Calibrate, Stage::Layer, Stage::Saddle, Stage::Verify, Stage::Stability, Stage::Geometry]
            .into_iter()
            .flat_map(|s| outputs(s, cfg))
            .collect(),
    }
}

pub fn run(stage: Stage, cfg: &RunConfig, out: &OutDir) -> Result<Outcome, CliError> {
    cfg.validate()?;
    out.guard(&outputs(stage, cfg))?;
    match stage {
        Stage::Calibrate => calibrate(cfg, out),
        Stage::Layer => layer(cfg, out),
        Stage::Saddle => saddle(cfg, out),
        Stage::Verify => verify(cfg, out),
        Stage::Stability => stability(cfg, out),
        Stage::Geometry => geometry(cfg, out),
        Stage::Pipeline => {
            let mut o = calibrate(cfg, out)?;
            o = o.and(layer(cfg, out)?);
            o = o.and(saddle(cfg, out)?);
            o = o.and(verify(cfg, out)?);
            o = o.and(stability(cfg, out)?);
            Ok(o.and(geometry(cfg, out)?))
        }
    }
}

fn model(name: &str) -> Result<NonlinearityModel, CliError> {
    Ok(NonlinearityModel::by_name(name)?)
}

/// (d_γ used by the solver, source scale of the layer equation).
fn d_gamma(cfg: &RunConfig, out: &OutDir) -> Result<(f64, f64), CliError> {
    let exact = d_gamma_exact(cfg.problem.gamma);
    let used = match cfg.problem.d_gamma {
        DGammaSource::ClosedForm => exact,
        DGammaSource::Value(v) => v,
        DGammaSource::Calibrated => {
            let path = out.file(CACHE);
            let mut cache = CalibrationCache::load(&path)?;
            let c = cache.get_or_calibrate(cfg.problem.gamma)?;
            cache.save(&path)?;
            c.d_gamma
        }
    };
    Ok((used, exact / used))
}

fn spec(cfg: &RunConfig) -> GridSpec {
    GridSpec { grading: cfg.grid.grading, ..GridSpec::new(cfg.grid.s_max, cfg.grid.lambda_max, cfg.grid.n_s, cfg.grid.n_lambda) }
}

fn log(stage: &str, t: Instant, msg: &str) {
    eprintln!("[{stage}] {msg} ({:.1} s)", t.elapsed().as_secs_f64());
}

#[derive(Serialize)]
struct CalibrationReport<'a> {
    calibration: &'a Calibration,
    closed_form: f64,
    relative_difference: f64,
}

fn calibrate(cfg: &RunConfig, out: &OutDir) -> Result<Outcome, CliError> {
    let t = Instant::now();
    let c = calibrate_d_gamma(cfg.problem.gamma)?;
    let exact = d_gamma_exact(cfg.problem.gamma);
    let path = out.file(CACHE);
    let mut cache = CalibrationCache::load(&path)?;
    cache.entries.insert(CalibrationCache::key(cfg.problem.gamma), c.clone());
    cache.save(&path)?;
    out.write_json(
        "calibration.json",
        &CalibrationReport { calibration: &c, closed_form: exact, relative_difference: (c.d_gamma - exact).abs() / exact },
    )?;
    log("calibrate", t, &format!("d_gamma = {:.6} (closed form {exact:.6}), spread {:.2e}", c.d_gamma, c.spread));
    Ok(Outcome::Passed)
}

fn layer(cfg: &RunConfig, out: &OutDir) -> Result<Outcome, CliError> {
    let t = Instant::now();
    let model = model(&cfg.problem.model)?;
    let (_, source_scale) = d_gamma(cfg, out)?;
    let opts = LayerOptions { source_scale, ..LayerOptions::default() };
    let ls = solve_layer(&model, cfg.problem.gamma, cfg.layer.half_width, cfg.layer.cells, cfg.layer.tol, &opts)?;
    save_layer(&out.path, "layer", &ls)?;
    let rows: Vec<Vec<String>> =
        ls.residual_history.iter().enumerate().map(|(i, r)| vec![i.to_string(), num(*r)]).collect();
    out.write_table("layer_residual.csv", &["iteration", "residual"], &rows)?;
    log("layer", t, &format!("residual {:.2e}", ls.residual));
    Ok(Outcome::Passed)
}

fn init_of(name: &str) -> SaddleInit {
    match name {
        "zero-jiggle" => SaddleInit::ZeroJiggle,
        _ => SaddleInit::Barrier,
    }
}

fn saddle(cfg: &RunConfig, out: &OutDir) -> Result<Outcome, CliError> {
    let t = Instant::now();
    out.require(&["layer.csv", "layer.json"])?;
    let ls = load_layer(&out.path, "layer")?;
    if (ls.gamma - cfg.problem.gamma).abs() > 1e-12 || ls.model.name() != cfg.problem.model {
        return Err(CliError::Config("the stored layer was computed for a different gamma or model".into()));
    }
    let model = model(&cfg.problem.model)?;
    let (d, _) = d_gamma(cfg, out)?;
    let params = ProblemParams::new(cfg.problem.m, cfg.problem.gamma, d)?;
    let grid = Grid3::new(spec(cfg), &params)?;
    let bt = BarrierTable::new(&ls, &grid);
    let opts = SaddleOptions::default();
    let sf = solve_saddle(&grid, &params, &model, &bt, cfg.saddle.tol, init_of(&cfg.saddle.init), &opts)?;
    save_field(&out.path, "saddle", &sf, &model)?;
    let rows: Vec<Vec<String>> =
        sf.residual_history.iter().enumerate().map(|(i, r)| vec![i.to_string(), num(*r)]).collect();
    out.write_table("saddle_residual.csv", &["iteration", "residual"], &rows)?;
    let rows: Vec<Vec<String>> =
        sf.energy_history.iter().enumerate().map(|(i, e)| vec![i.to_string(), num(*e)]).collect();
    out.write_table("saddle_energy.csv", &["iteration", "energy"], &rows)?;
    log("saddle", t, &format!("{} init, residual {:.2e}", sf.init, sf.residual_norm));
    if cfg.saddle.compare_init != "none" {
        let alt = solve_saddle(&grid, &params, &model, &bt, cfg.saddle.tol, init_of(&cfg.saddle.compare_init), &opts)?;
        save_field(&out.path, "saddle_alt", &alt, &model)?;
        log("saddle", t, &format!("{} init, residual {:.2e}", alt.init, alt.residual_norm));
    }
    Ok(Outcome::Passed)
}

#[derive(Serialize)]
struct VerifyReport {
    pass: bool,
    m: usize,
    gamma: f64,
    b_interval: BInterval,
    trust_region: TrustRegion,
    checks: Vec<CheckRecord>,
    asymptotics: Vec<AsymptoticsRow>,
    notes: Vec<String>,
}

fn verify(cfg: &RunConfig, out: &OutDir) -> Result<Outcome, CliError> {
    let t = Instant::now();
    out.require(&["saddle.csv", "saddle.json", "layer.csv", "layer.json"])?;
    let sf = load_field(&out.path, "saddle")?;
    let ls = load_layer(&out.path, "layer")?;
    if (ls.gamma - sf.params.gamma).abs() > 1e-12 {
        return Err(CliError::Config("layer and saddle field were computed for different gamma".into()));
    }
    let model = model(&sf.model)?;
    let bt = BarrierTable::new(&ls, &sf.grid);
    let sf = derivative_fields(sf);
    let region = TrustRegion { s_fraction: cfg.verify.trust_s, lambda_fraction: cfg.verify.trust_lambda };
    let mut notes = Vec::new();

    let mut report = check_monotonicity(&sf, cfg.verify.sign_tol, &region)?;
    report.extend(check_barrier_bound(&sf, &bt, cfg.verify.barrier_tol, &region));
    let smax = sf.grid.spec.s_max;
    if let Some(r) = cfg.verify.radii.iter().find(|&&r| r >= smax) {
        return Err(CliError::Config(format!("asymptotics radius {r} is not inside the box S = {smax}")));
    }
    let (asym, rows) = check_asymptotics(&sf, &bt, &cfg.verify.radii)?;
    report.extend(asym);

    let m = sf.params.m;
    let interval = admissible_b_interval(m);
    match interval {
        BInterval::Infeasible => notes.push(format!("no admissible b for m = {m}: the supersolution check does not apply")),
        BInterval::Feasible { .. } => {
            for &b in &cfg.verify.b {
                if interval.contains(b) {
                    report.extend(check_supersolution(&sf, &model, b, 10.0 * sf.residual_norm, &region)?);
                } else {
                    notes.push(format!("b = {b} lies outside the admissible interval; skipped"));
                }
            }
        }
    }
    if out.file("saddle_alt.csv").exists() {
        let alt = load_field(&out.path, "saddle_alt")?;
        report.extend(check_uniqueness(&sf, &alt, cfg.saddle.uniqueness_tol)?);
    }
    let VerificationReport { checks } = report;
    let pass = checks.iter().all(|c| c.pass);
    let table: Vec<Vec<String>> = rows.iter().map(|r| vec![num(r.radius), num(r.m0), num(r.m2)]).collect();
    out.write_table("asymptotics.csv", &["radius", "M", "M2"], &table)?;
    for c in checks.iter().filter(|c| !c.pass) {
        eprintln!("[verify] FAIL {}: margin {:.3e}", c.name, c.worst_margin);
    }
    out.write_json(
        "verify.json",
        &VerifyReport {
            pass,
            m,
            gamma: sf.params.gamma,
            b_interval: interval,
            trust_region: region,
            checks,
            asymptotics: rows,
            notes,
        },
    )?;
    log("verify", t, if pass { "all checks pass" } else { "some checks failed" });
    Ok(if pass { Outcome::Passed } else { Outcome::Failed })
}

#[derive(Serialize)]
struct StabilityOutput<'a> {
    report: &'a StabilityReport,
    cutoff: Option<CutoffReport>,
    notes: Vec<String>,
}

#[derive(Serialize)]
struct WitnessManifest {
    params: ProblemParams,
    grid: GridSpec,
    normalization: &'static str,
    quotient: f64,
}

fn stability(cfg: &RunConfig, out: &OutDir) -> Result<Outcome, CliError> {
    let t = Instant::now();
    out.require(&["saddle.csv", "saddle.json"])?;
    let sf = load_field(&out.path, "saddle")?;
    let model = model(&sf.model)?;
    let opts =
        StabilityOptions { max_iter: cfg.stability.max_iter, tol: cfg.stability.tol, seed: cfg.seed, ..StabilityOptions::default() };
    let rep = min_rayleigh(&sf, &model, &opts)?;
    let rows: Vec<Vec<String>> = rep.history.iter().enumerate().map(|(i, q)| vec![(i + 1).to_string(), num(*q)]).collect();
    out.write_table("stability_history.csv", &["iteration", "quotient"], &rows)?;
    write_field_csv(&out.file("witness.csv"), &sf.grid, &rep.witness)?;
    out.write_json(
        "witness.json",
        &WitnessManifest {
            params: sf.params,
            grid: sf.grid.spec,
            normalization: "unit L2 norm on the bottom face",
            quotient: rep.lambda_min_estimate,
        },
    )?;

    let mut notes = Vec::new();
    let mut outcome = Outcome::Passed;
    let mut cutoff = None;
    let g = &sf.grid;
    if sf.params.m >= 3 {
        let radius = cfg.stability.cutoff_radius.unwrap_or(g.spec.s_max.min(g.spec.lambda_max));
        let eps: Vec<f64> =
            cfg.stability.cutoff_eps.iter().copied().filter(|&e| e >= 4.0 * g.h && e <= radius).collect();
        if eps.len() < cfg.stability.cutoff_eps.len() {
            notes.push(format!("cutoff: dropped eps values below 4h = {:.4} or above the box radius", 4.0 * g.h));
        }
        if eps.len() >= 2 {
            let c = cutoff_family_check(&sf, &eps, radius)?;
            let rows: Vec<Vec<String>> = c.eps.iter().zip(&c.energy).map(|(e, v)| vec![num(*e), num(*v)]).collect();
            out.write_table("cutoff.csv", &["eps", "energy"], &rows)?;
            if !c.pass() {
                outcome = Outcome::Failed;
            }
            cutoff = Some(c);
        } else {
            notes.push("cutoff: fewer than two usable eps values; check skipped".into());
        }
    } else {
        notes.push(format!("cutoff: the estimate needs m >= 3, got m = {}", sf.params.m));
    }
    if cutoff.is_none() {
        out.write_table("cutoff.csv", &["eps", "energy"], &[])?;
    }
    out.write_json("stability.json", &StabilityOutput { report: &rep, cutoff, notes })?;
    log(
        "stability",
        t,
        &format!("estimate {:.4e}, verdict {}, {} iterations", rep.lambda_min_estimate, rep.verdict.label(), rep.iterations),
    );
    Ok(outcome)
}

#[derive(Serialize)]
struct ConeRatio {
    m: usize,
    point: Vec<f64>,
    radius: f64,
    ratio: Estimate,
}

#[derive(Serialize)]
struct NarrowCase {
    name: String,
    theta: f64,
    a: f64,
    expectation: String,
    /// "infinite", "unresolved" or the radius; JSON has no infinity
    radius: String,
    result: NarrowRadius,
}

fn radius_label(r: &NarrowRadius) -> String {
    if r.unresolved {
        "unresolved".into()
    } else if r.radius.is_infinite() {
        "infinite".into()
    } else {
        format!("{:?}", r.radius)
    }
}

#[derive(Serialize)]
struct GeometryReport {
    pass: bool,
    cone_ratios: Vec<ConeRatio>,
    narrow: Vec<NarrowCase>,
    checks: Vec<CheckRecord>,
}

/// A point on the Simons cone of ℝ^{2m} with |x′| = |x″| = ρ.
pub fn random_cone_point(m: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let rho = 0.5 + 4.5 * rng.gen::<f64>();
    let mut x: Vec<f64> = (0..2 * m).map(|_| rng.sample(StandardNormal)).collect();
    for half in [0..m, m..2 * m] {
        let nrm = x[half.clone()].iter().map(|v| v * v).sum::<f64>().sqrt();
        x[half].iter_mut().for_each(|v| *v *= rho / nrm);
    }
    x
}

fn geometry(cfg: &RunConfig, out: &OutDir) -> Result<Outcome, CliError> {
    let t = Instant::now();
    let gcfg = &cfg.geometry;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut cone_ratios = Vec::new();
    let mut checks = Vec::new();
    for &m in &gcfg.cone_m {
        for q in 0..gcfg.cone_points {
            let x = random_cone_point(m, &mut rng);
            let seed = cfg.seed.wrapping_add(1000 * m as u64 + q as u64);
            let est = half_ball_cone_ratio(&x, gcfg.cone_radius, gcfg.samples, seed)?;
            checks.push(CheckRecord::new(
                &format!("cone half-ball ratio = 1/2 within 3 sigma (m = {m}, point {q})"),
                3.0 * est.stderr - (est.value - 0.5).abs(),
                [f64::NAN; 3],
                0.0,
                gcfg.samples,
            ));
            cone_ratios.push(ConeRatio { m, point: x, radius: gcfg.cone_radius, ratio: est });
        }
    }

    let eps = gcfg.eps;
    let base = NarrowOptions {
        probe_points: gcfg.probe_points,
        samples: gcfg.narrow_samples,
        seed: cfg.seed,
        ..NarrowOptions::default()
    };
    let mut narrow = Vec::new();
    let mut table = Vec::new();

    let grid: Vec<f64> = [0.25, 0.5, 1.0, 2.0, 4.0, 8.0].iter().map(|f| f * eps).collect();
    let slab = narrow_radius(
        &SetDescriptor::Slab { eps },
        &SetDescriptor::All,
        0.5,
        0.0,
        &grid,
        &NarrowOptions { dim: Some(1), ..base.clone() },
    )?;
    checks.push(CheckRecord::new("slab pair: finite radius <= 5 eps", 5.0 * eps - slab.radius, [f64::NAN; 3], 0.0, grid.len()));
    narrow.push(NarrowCase {
        name: "slab".into(),
        theta: 0.5,
        a: 0.0,
        expectation: "finite, at most 5 eps".into(),
        radius: radius_label(&slab),
        result: slab,
    });

    let grid: Vec<f64> = (0..7).map(|k| eps * 2f64.powi(k)).collect();
    let wedge = SetDescriptor::Wedge { eps, slope: 0.5 };
    let w = narrow_radius(&wedge, &wedge, 0.5, 0.0, &grid, &NarrowOptions { dim: Some(1), ..base.clone() })?;
    checks.push(CheckRecord::new(
        "wedge pair: radius is infinite",
        if w.radius == f64::INFINITY { 0.0 } else { -1.0 },
        [f64::NAN; 3],
        0.0,
        grid.len(),
    ));
    narrow.push(NarrowCase { name: "wedge".into(), theta: 0.5, a: 0.0, expectation: "infinite".into(), radius: radius_label(&w), result: w });

    let m = cfg.problem.m;
    let a = 1.0 - 2.0 * cfg.problem.gamma;
    let theta = 2f64.powf(-4.0 * m as f64 - 3.0 - 2.0 * a);
    let grid: Vec<f64> = [0.125, 0.25, 0.5, 1.0].iter().map(|f| f * eps).collect();
    let c = narrow_radius(
        &SetDescriptor::ConeSide { m },
        &SetDescriptor::ConeNeighborhood { m, eps },
        theta,
        a,
        &grid,
        &base,
    )?;
    checks.push(CheckRecord::new("cone neighborhood pair: radius <= eps", eps - c.radius, [f64::NAN; 3], 0.0, grid.len()));
    narrow.push(NarrowCase { name: format!("cone-neighborhood-m{m}"), theta, a, expectation: "at most eps".into(), radius: radius_label(&c), result: c });

    for case in &narrow {
        for r in &case.result.rows {
            table.push(vec![case.name.clone(), num(r.radius), num(r.min_ratio), num(r.stderr)]);
        }
    }
    out.write_table("geometry_ratios.csv", &["case", "radius", "min_ratio", "stderr"], &table)?;
    let pass = checks.iter().all(|c| c.pass);
    out.write_json("geometry.json", &GeometryReport { pass, cone_ratios, narrow, checks })?;
    log("geometry", t, if pass { "all checks pass" } else { "some checks failed" });
    Ok(if pass { Outcome::Passed } else { Outcome::Failed })
}
