//! The reduced extension problem on {s ≥ t}: barrier tables, the nonlinear solver,
//! derivative fields, the discrete energy, and field files.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{apply_operator, Grid3, GridSpec};
use crate::layer::LayerSolution;
use crate::linalg::{dot, pcg, LinePreconditioner, Stiffness};
use crate::numerics::d1_uniform;
use crate::problem::{NonlinearityModel, ProblemParams};

/// Layer values u₀, ∂ₓu₀, ∂ₓₓu₀ tabulated at z = (i − j)h/√2 for every λ node.
#[derive(Debug, Clone)]
pub struct BarrierTable {
    n: usize,
    n_lambda: usize,
    u: Vec<f64>,
    ux: Vec<f64>,
    uxx: Vec<f64>,
}

impl BarrierTable {
    pub fn new(ls: &LayerSolution, grid: &Grid3) -> Self {
        let n = grid.n_s();
        let nl = grid.n_lambda();
        let h = grid.h;
        // only d = i − j ≥ 0 is computed; u₀ is odd, ∂ₓu₀ even, ∂ₓₓu₀ odd in z
        let vals: Vec<(f64, f64, f64)> = (0..nl * n)
            .into_par_iter()
            .map(|q| {
                let (k, d) = (q / n, q % n);
                let v = ls.eval(d as f64 * h * FRAC_1_SQRT_2, grid.lambda[k]);
                if d == 0 {
                    (0.0, v.ux, 0.0)
                } else {
                    (v.u, v.ux, v.uxx)
                }
            })
            .collect();
        Self {
            n,
            n_lambda: nl,
            u: vals.iter().map(|v| v.0).collect(),
            ux: vals.iter().map(|v| v.1).collect(),
            uxx: vals.iter().map(|v| v.2).collect(),
        }
    }

    #[inline]
    fn lookup(&self, i: usize, j: usize, k: usize) -> (usize, f64) {
        if i >= j {
            (k * self.n + (i - j), 1.0)
        } else {
            (k * self.n + (j - i), -1.0)
        }
    }

    /// U at node (i, j, k).
    pub fn u(&self, i: usize, j: usize, k: usize) -> f64 {
        let (q, sg) = self.lookup(i, j, k);
        sg * self.u[q]
    }

    /// U_s = ∂ₓu₀/√2 (U_t = −U_s).
    pub fn u_s(&self, i: usize, j: usize, k: usize) -> f64 {
        let (q, _) = self.lookup(i, j, k);
        FRAC_1_SQRT_2 * self.ux[q]
    }

    /// U_st = −∂ₓₓu₀/2.
    pub fn u_st(&self, i: usize, j: usize, k: usize) -> f64 {
        let (q, sg) = self.lookup(i, j, k);
        -0.5 * sg * self.uxx[q]
    }

    /// ∂ₓu₀ at node (i, j, k).
    pub fn ux(&self, i: usize, j: usize, k: usize) -> f64 {
        self.ux[self.lookup(i, j, k).0]
    }

    /// U on every node of the grid.
    pub fn field(&self, grid: &Grid3) -> Vec<f64> {
        assert_eq!((grid.n_s(), grid.n_lambda()), (self.n, self.n_lambda));
        (0..grid.len())
            .map(|p| {
                let (i, j, k) = grid.coords(p);
                self.u(i, j, k)
            })
            .collect()
    }

    /// The barrier as a saddle field (derivatives from the layer, not from differences).
    pub fn to_field(&self, grid: &Grid3, params: &ProblemParams, model: &str) -> SaddleField {
        let len = grid.len();
        let mut sf = SaddleField::new(grid.clone(), *params, model, self.field(grid), "barrier-exact");
        let mut u_s = vec![0.0; len];
        let mut u_t = vec![0.0; len];
        let mut u_st = vec![0.0; len];
        for p in 0..len {
            let (i, j, k) = grid.coords(p);
            u_s[p] = if i == 0 { 0.0 } else { self.u_s(i, j, k) };
            u_t[p] = if j == 0 { 0.0 } else { -self.u_s(i, j, k) };
            u_st[p] = if i == 0 || j == 0 { 0.0 } else { self.u_st(i, j, k) };
        }
        sf.u_y = u_s.iter().zip(&u_t).map(|(a, b)| FRAC_1_SQRT_2 * (a + b)).collect();
        sf.u_s = u_s;
        sf.u_t = u_t;
        sf.u_st = u_st;
        sf.residual_norm = 0.0;
        sf
    }
}

/// Nodal solution on the full quadrant (filled by odd reflection) with derived fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaddleField {
    pub grid: Grid3,
    pub params: ProblemParams,
    pub model: String,
    pub u: Vec<f64>,
    pub u_s: Vec<f64>,
    pub u_t: Vec<f64>,
    pub u_y: Vec<f64>,
    pub u_st: Vec<f64>,
    pub residual_norm: f64,
    pub residual_history: Vec<f64>,
    /// discrete energy after every gradient-flow step
    pub energy_history: Vec<f64>,
    pub init: String,
}

impl SaddleField {
    pub fn new(grid: Grid3, params: ProblemParams, model: &str, u: Vec<f64>, init: &str) -> Self {
        Self {
            grid,
            params,
            model: model.to_string(),
            u,
            u_s: Vec::new(),
            u_t: Vec::new(),
            u_y: Vec::new(),
            u_st: Vec::new(),
            residual_norm: f64::NAN,
            residual_history: Vec::new(),
            energy_history: Vec::new(),
            init: init.to_string(),
        }
    }

    pub fn value(&self, i: usize, j: usize, k: usize) -> f64 {
        self.u[self.grid.idx(i, j, k)]
    }

    pub fn has_derivatives(&self) -> bool {
        self.u_st.len() == self.u.len()
    }
}

/// Starting field of the nonlinear iteration.
#[derive(Debug, Clone, PartialEq)]
pub enum SaddleInit {
    Barrier,
    /// 0.1 on {s > t}, odd across the diagonal
    ZeroJiggle,
    /// Full-grid values; only the {s > t} part is used.
    Custom(Vec<f64>),
}

impl SaddleInit {
    pub fn label(&self) -> &'static str {
        match self {
            SaddleInit::Barrier => "barrier",
            SaddleInit::ZeroJiggle => "zero-jiggle",
            SaddleInit::Custom(_) => "custom",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SaddleOptions {
    /// Gradient-flow steps allowed before Newton takes over.
    pub max_flow: usize,
    /// Residual below which gradient flow hands over to Newton.
    pub flow_switch: f64,
    pub max_newton: usize,
    pub cg_max: usize,
}

impl Default for SaddleOptions {
    fn default() -> Self {
        Self { max_flow: 400, flow_switch: 5e-2, max_newton: 60, cg_max: 4000 }
    }
}

/// The discrete half-domain problem: unknowns on {s > t}, away from s = S and λ = Λ.
pub(crate) struct HalfProblem<'a> {
    pub a: Stiffness,
    pub b: Vec<f64>,
    /// H/d_γ on bottom rows, 0 elsewhere
    pub hd: Vec<f64>,
    pub mass: Vec<f64>,
    pub model: &'a NonlinearityModel,
}

impl<'a> HalfProblem<'a> {
    pub fn new(grid: &'a Grid3, params: &ProblemParams, model: &'a NonlinearityModel, dirichlet: &[f64]) -> Self {
        let n = grid.n_s();
        let nl = grid.n_lambda();
        let a = Stiffness::new(grid, |i, j, k| i > j && i + 1 < n && k + 1 < nl);
        let b = a.dirichlet_rhs(dirichlet);
        let mut hd = vec![0.0; a.len()];
        let mut mass = vec![0.0; a.len()];
        for (r, &p) in a.nodes.iter().enumerate() {
            let (i, j, k) = grid.coords(p);
            mass[r] = grid.mass(i, j, k);
            if k == 0 {
                hd[r] = grid.bottom_weight(i, j) / params.d_gamma;
            }
        }
        Self { a, b, hd, mass, model }
    }

    /// F = b − A x + (H/d) f(x): the negative energy gradient.
    pub fn residual(&self, x: &[f64]) -> Vec<f64> {
        let mut ax = vec![0.0; x.len()];
        self.a.apply(x, None, &mut ax);
        (0..x.len()).map(|r| self.b[r] - ax[r] + self.hd[r] * self.model.f(x[r])).collect()
    }

    /// Max over rows of the pointwise residual: |F|/mass inside, d|F|/H on the bottom.
    pub fn norm(&self, f: &[f64]) -> f64 {
        f.iter()
            .enumerate()
            .map(|(r, v)| if self.hd[r] > 0.0 { v.abs() / self.hd[r] } else { v.abs() / self.mass[r] })
            .fold(0.0, f64::max)
    }

    /// ½xᵀAx − bᵀx + Σ (H/d) G(x), up to a constant from the Dirichlet data.
    pub fn energy(&self, x: &[f64]) -> f64 {
        let mut ax = vec![0.0; x.len()];
        self.a.apply(x, None, &mut ax);
        let mut e = 0.0;
        for r in 0..x.len() {
            e += 0.5 * x[r] * ax[r] - self.b[r] * x[r] + self.hd[r] * self.model.potential(x[r]);
        }
        e
    }
}

fn fprime_bound(model: &NonlinearityModel) -> f64 {
    // max of −f′ on [−1, 1], sampled finely; the flow step needs σ above it
    (0..=2000)
        .map(|i| -model.fprime(-1.0 + i as f64 / 1000.0))
        .fold(0.0, f64::max)
}

/// Solves the reduced problem on {s ≥ t} and returns the field on the full quadrant.
pub fn solve_saddle(
    grid: &Grid3,
    params: &ProblemParams,
    model: &NonlinearityModel,
    barrier: &BarrierTable,
    tol: f64,
    init: SaddleInit,
    opts: &SaddleOptions,
) -> Result<SaddleField> {
    if !(tol > 0.0) {
        return Err(Error::Parameter("tolerance must be positive".into()));
    }
    if grid.m != params.m || grid.a != params.a {
        return Err(Error::Parameter("grid was built for different parameters".into()));
    }
    let n = grid.n_s();
    let nl = grid.n_lambda();
    let ufull = barrier.field(grid);
    let mut dirichlet = ufull.clone();
    for (p, v) in dirichlet.iter_mut().enumerate() {
        let (i, _, k) = grid.coords(p);
        if !(i == n - 1 || k == nl - 1) {
            *v = 0.0;
        }
    }
    let prob = HalfProblem::new(grid, params, model, &dirichlet);
    let nu = prob.a.len();
    let label = init.label();
    let mut x: Vec<f64> = match &init {
        SaddleInit::Barrier => prob.a.gather(&ufull),
        SaddleInit::ZeroJiggle => vec![0.1; nu],
        SaddleInit::Custom(v) => {
            if v.len() != grid.len() {
                return Err(Error::Dimension { expected: grid.len(), got: v.len() });
            }
            prob.a.gather(v)
        }
    };

    let sigma = fprime_bound(model).max(0.0) + 1e-3;
    let mut history = Vec::new();
    let mut energies = vec![prob.energy(&x)];
    let mut f = prob.residual(&x);
    let mut res = prob.norm(&f);
    history.push(res);

    // majorize-minimize gradient flow: each step minimizes a quadratic upper bound of the
    // energy, and CG started from the current iterate only lowers that bound
    let flow_extra: Vec<f64> = prob.hd.iter().map(|h| sigma * h).collect();
    let flow_pre = LinePreconditioner::new(&prob.a, Some(&flow_extra));
    let flow_step = |x: &mut Vec<f64>| {
        let rhs: Vec<f64> =
            (0..nu).map(|r| prob.b[r] + prob.hd[r] * (model.f(x[r]) + sigma * x[r])).collect();
        pcg(&prob.a, Some(&flow_extra), &flow_pre, &rhs, x, 1e-6, opts.cg_max);
    };
    let mut steps = 0;
    while res > tol && res > opts.flow_switch && steps < opts.max_flow {
        flow_step(&mut x);
        steps += 1;
        energies.push(prob.energy(&x));
        f = prob.residual(&x);
        res = prob.norm(&f);
        history.push(res);
    }

    let mut newton_steps = 0;
    let mut stalls = 0;
    while res > tol && newton_steps < opts.max_newton {
        newton_steps += 1;
        let extra: Vec<f64> = (0..nu).map(|r| -prob.hd[r] * model.fprime(x[r])).collect();
        let pre_extra: Vec<f64> = extra.iter().map(|e| e.abs()).collect();
        let pre = LinePreconditioner::new(&prob.a, Some(&pre_extra));
        let mut delta = vec![0.0; nu];
        let rtol = (0.1 * res).clamp(1e-11, 1e-3);
        let info = pcg(&prob.a, Some(&extra), &pre, &f, &mut delta, rtol, opts.cg_max);
        let mut accepted = false;
        if !info.indefinite {
            let e0 = prob.energy(&x);
            let slope = -dot(&f, &delta);
            let mut alpha = 1.0;
            for _ in 0..=20 {
                let trial: Vec<f64> = x.iter().zip(&delta).map(|(a, d)| a + alpha * d).collect();
                let ft = prob.residual(&trial);
                let rt = prob.norm(&ft);
                let et = prob.energy(&trial);
                if et <= e0 + 1e-4 * alpha * slope || rt < res {
                    x = trial;
                    f = ft;
                    res = rt;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
        }
        if !accepted {
            // fall back to a few monotone flow steps
            for _ in 0..10 {
                flow_step(&mut x);
                energies.push(prob.energy(&x));
            }
            f = prob.residual(&x);
            res = prob.norm(&f);
            stalls += 1;
            if stalls > 5 {
                history.push(res);
                break;
            }
        }
        history.push(res);
    }
    if !(res <= tol) {
        return Err(Error::NoConvergence { iterations: history.len(), last_residual: res, history });
    }

    let mut u = dirichlet;
    prob.a.scatter(&x, &mut u);
    reflect_odd(grid, &mut u);
    for (r, &p) in prob.a.nodes.iter().enumerate() {
        if !(x[r] > 0.0) {
            let (i, j, k) = grid.coords(p);
            return Err(Error::Quality(format!(
                "u = {:.3e} <= 0 at interior node s={:.4}, t={:.4}, lambda={:.4}",
                x[r], grid.s[i], grid.s[j], grid.lambda[k]
            )));
        }
    }
    if let Some(v) = u.iter().find(|v| !(v.abs() < 1.0)) {
        return Err(Error::Quality(format!("|u| = {v} is not below 1")));
    }
    let mut sf = SaddleField::new(grid.clone(), *params, model.name(), u, label);
    sf.residual_norm = res;
    sf.residual_history = history;
    sf.energy_history = energies;
    Ok(sf)
}

/// Fills {s < t} from {s > t} by u(s,t) = −u(t,s) and sets the diagonal to 0.
pub fn reflect_odd(grid: &Grid3, u: &mut [f64]) {
    let n = grid.n_s();
    for k in 0..grid.n_lambda() {
        for j in 0..n {
            u[grid.idx(j, j, k)] = 0.0;
            for i in j + 1..n {
                u[grid.idx(j, i, k)] = -u[grid.idx(i, j, k)];
            }
        }
    }
}

/// Computes u_s, u_t, u_y, u_st by fourth-order differences with even reflection at
/// s = 0 and t = 0.
pub fn derivative_fields(mut sf: SaddleField) -> SaddleField {
    let g = &sf.grid;
    let n = g.n_s();
    let nl = g.n_lambda();
    let h = g.h;
    let len = g.len();
    let mut u_s = vec![0.0; len];
    let mut u_t = vec![0.0; len];
    let mut u_st = vec![0.0; len];
    let mut line = vec![0.0; n];
    for k in 0..nl {
        for j in 0..n {
            for i in 0..n {
                line[i] = sf.u[g.idx(i, j, k)];
            }
            for (i, d) in d1_uniform(&line, h, true).into_iter().enumerate() {
                u_s[g.idx(i, j, k)] = if i == 0 { 0.0 } else { d };
            }
        }
        for i in 0..n {
            for j in 0..n {
                line[j] = sf.u[g.idx(i, j, k)];
            }
            for (j, d) in d1_uniform(&line, h, true).into_iter().enumerate() {
                u_t[g.idx(i, j, k)] = if j == 0 { 0.0 } else { d };
            }
            for j in 0..n {
                line[j] = u_s[g.idx(i, j, k)];
            }
            for (j, d) in d1_uniform(&line, h, true).into_iter().enumerate() {
                u_st[g.idx(i, j, k)] = if i == 0 || j == 0 { 0.0 } else { d };
            }
        }
    }
    sf.u_y = u_s.iter().zip(&u_t).map(|(a, b)| FRAC_1_SQRT_2 * (a + b)).collect();
    sf.u_s = u_s;
    sf.u_t = u_t;
    sf.u_st = u_st;
    sf
}

/// Axis-aligned box in (s, t, λ).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBox {
    pub s: (f64, f64),
    pub t: (f64, f64),
    pub lambda: (f64, f64),
}

impl EnergyBox {
    pub fn whole(grid: &Grid3) -> Self {
        let s = grid.spec.s_max;
        Self { s: (0.0, s), t: (0.0, s), lambda: (0.0, grid.spec.lambda_max) }
    }
}

/// |S^{m−1}|², the angular factor between the reduced and the 2m-dimensional measure.
pub fn surface_area_factor(m: usize) -> f64 {
    let mf = m as f64;
    let sphere = 2.0 * PI.powf(0.5 * mf) / statrs::function::gamma::gamma(0.5 * mf);
    sphere * sphere
}

/// (d_γ/2)·Σ c(Δu)² over faces inside the box plus Σ H·G(u) over bottom nodes inside it.
pub fn compute_energy(sf: &SaddleField, model: &NonlinearityModel, bx: &EnergyBox) -> Result<f64> {
    let g = &sf.grid;
    let (smax, lmax) = (g.spec.s_max, g.spec.lambda_max);
    let tol = 1e-12 * smax.max(lmax);
    let ok = |(lo, hi): (f64, f64), top: f64| lo >= -tol && hi <= top + tol && lo <= hi;
    if !(ok(bx.s, smax) && ok(bx.t, smax) && ok(bx.lambda, lmax)) {
        return Err(Error::Domain(format!("energy box {bx:?} is outside the grid")));
    }
    let inside = |p: usize| {
        let (i, j, k) = g.coords(p);
        let within = |v: f64, (lo, hi): (f64, f64)| v >= lo - tol && v <= hi + tol;
        within(g.s[i], bx.s) && within(g.s[j], bx.t) && within(g.lambda[k], bx.lambda)
    };
    let mut grad = 0.0;
    g.for_each_face(|p, q, c| {
        if inside(p) && inside(q) {
            let d = sf.u[q] - sf.u[p];
            grad += c * d * d;
        }
    });
    let mut pot = 0.0;
    let n = g.n_s();
    if bx.lambda.0 <= tol {
        for j in 0..n {
            for i in 0..n {
                let p = g.idx(i, j, 0);
                if inside(p) {
                    pot += g.bottom_weight(i, j) * model.potential(sf.u[p]);
                }
            }
        }
    }
    Ok(0.5 * sf.params.d_gamma * grad + pot)
}

/// λᵃ·[discrete λ^{−a}div(λᵃ∇U) − ((m−1)/√2)((t − s)/(st))∂ₓu₀] at interior nodes
/// (s, t, λ > 0, off the outer boundary); other entries are 0.
pub fn residual_u(barrier: &BarrierTable, grid: &Grid3, params: &ProblemParams) -> Vec<f64> {
    let u = barrier.field(grid);
    let lu = apply_operator(grid, &u);
    let n = grid.n_s();
    let nl = grid.n_lambda();
    let mf = params.m as f64;
    (0..grid.len())
        .map(|p| {
            let (i, j, k) = grid.coords(p);
            if i == 0 || j == 0 || k == 0 || i == n - 1 || j == n - 1 || k == nl - 1 {
                return 0.0;
            }
            let (s, t, l) = (grid.s[i], grid.s[j], grid.lambda[k]);
            let rhs = (mf - 1.0) * FRAC_1_SQRT_2 * (t - s) / (s * t) * barrier.ux(i, j, k);
            l.powf(params.a) * (lu[p] - rhs)
        })
        .collect()
}

/// Metadata written next to a field file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldManifest {
    pub params: ProblemParams,
    pub grid: GridSpec,
    pub model: String,
    pub init: String,
    pub residual_norm: f64,
    pub energy: f64,
    pub surface_area_factor: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct FieldRow {
    s: f64,
    t: f64,
    lambda: f64,
    u: f64,
}

/// Writes columns s, t, lambda, u in λ-major, then t, then s order.
pub fn write_field_csv(path: &Path, grid: &Grid3, u: &[f64]) -> Result<()> {
    if u.len() != grid.len() {
        return Err(Error::Dimension { expected: grid.len(), got: u.len() });
    }
    let mut w = csv::Writer::from_path(path)?;
    for (p, &v) in u.iter().enumerate() {
        let (i, j, k) = grid.coords(p);
        w.serialize(FieldRow { s: grid.s[i], t: grid.s[j], lambda: grid.lambda[k], u: v })?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a field file written for `grid`, checking coordinates and finiteness.
pub fn read_field_csv(path: &Path, grid: &Grid3) -> Result<Vec<f64>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut u = Vec::with_capacity(grid.len());
    for (p, row) in r.deserialize::<FieldRow>().enumerate() {
        let row = row?;
        if p >= grid.len() {
            return Err(Error::InvalidData(format!("{} has more rows than the grid", path.display())));
        }
        let (i, j, k) = grid.coords(p);
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * (1.0 + b.abs());
        if !(close(row.s, grid.s[i]) && close(row.t, grid.s[j]) && close(row.lambda, grid.lambda[k])) {
            return Err(Error::InvalidData(format!("row {p}: coordinates do not match the grid")));
        }
        if !row.u.is_finite() {
            return Err(Error::InvalidData(format!("row {p}: non-finite value {}", row.u)));
        }
        u.push(row.u);
    }
    if u.len() != grid.len() {
        return Err(Error::InvalidData(format!("expected {} rows, found {}", grid.len(), u.len())));
    }
    Ok(u)
}

/// Writes `<stem>.csv` and `<stem>.json` for a solved field.
pub fn save_field(dir: &Path, stem: &str, sf: &SaddleField, model: &NonlinearityModel) -> Result<FieldManifest> {
    write_field_csv(&dir.join(format!("{stem}.csv")), &sf.grid, &sf.u)?;
    let manifest = FieldManifest {
        params: sf.params,
        grid: sf.grid.spec,
        model: sf.model.clone(),
        init: sf.init.clone(),
        residual_norm: sf.residual_norm,
        energy: compute_energy(sf, model, &EnergyBox::whole(&sf.grid))?,
        surface_area_factor: surface_area_factor(sf.params.m),
    };
    std::fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Loads a field saved by [`save_field`] and validates it against its manifest.
pub fn load_field(dir: &Path, stem: &str) -> Result<SaddleField> {
    let manifest: FieldManifest =
        serde_json::from_str(&std::fs::read_to_string(dir.join(format!("{stem}.json")))?)?;
    let grid = Grid3::new(manifest.grid, &manifest.params)?;
    let u = read_field_csv(&dir.join(format!("{stem}.csv")), &grid)?;
    if let Some(v) = u.iter().find(|v| v.abs() > 1.0) {
        return Err(Error::InvalidData(format!("field value {v} outside [-1, 1]")));
    }
    let mut sf = SaddleField::new(grid, manifest.params, &manifest.model, u, &manifest.init);
    sf.residual_norm = manifest.residual_norm;
    Ok(sf)
}
