//! The one-dimensional monotone layer u₀, its derivatives, and the barrier
//! U(s, t, λ) = u₀((s − t)/√2, λ).

use std::f64::consts::FRAC_1_SQRT_2;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fracops1d::{c_1_gamma, frac_lap_row, PoissonKernel, SampledFunction1D, TailDecay};
use crate::numerics::{d1_uniform, d2_uniform, MonotoneCubic};
use crate::problem::{DoublyRadialPoint, NonlinearityModel};

/// Initial profile for the layer iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerInit {
    Tanh,
    PiecewiseLinear,
}

/// Nonlinear iteration used for the layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerMethod {
    /// Newton with line search, falling back to gradient flow.
    Newton,
    /// Stabilized semi-implicit gradient flow only.
    GradientFlow,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerOptions {
    pub init: LayerInit,
    pub method: LayerMethod,
    /// Multiplies f in the trace equation; equals d_cal/d_γ when d_γ is overridden.
    pub source_scale: f64,
    /// Refinement factor of the resampled trace used for extensions.
    pub fine_factor: usize,
    pub max_newton: usize,
    pub max_flow: usize,
    pub tail_refits: usize,
}

impl Default for LayerOptions {
    fn default() -> Self {
        Self {
            init: LayerInit::Tanh,
            method: LayerMethod::Newton,
            source_scale: 1.0,
            fine_factor: 2,
            max_newton: 60,
            max_flow: 50_000,
            tail_refits: 40,
        }
    }
}

/// Metadata persisted next to the layer table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerManifest {
    pub gamma: f64,
    pub model: String,
    pub half_width: f64,
    pub cells: usize,
    pub residual: f64,
    pub tail: TailDecay,
    pub source_scale: f64,
    pub fine_factor: usize,
}

/// The computed layer with interpolants and an extension evaluator.
#[derive(Debug, Clone)]
pub struct LayerSolution {
    pub gamma: f64,
    pub model: NonlinearityModel,
    pub trace: SampledFunction1D,
    pub dtrace: SampledFunction1D,
    pub d2trace: SampledFunction1D,
    pub residual: f64,
    pub residual_history: Vec<f64>,
    pub source_scale: f64,
    fine: SampledFunction1D,
    fine_factor: usize,
    dcubic: MonotoneCubic,
    d2cubic: MonotoneCubic,
    kernel: PoissonKernel,
}

/// u₀ and its x-derivatives at one (z, λ).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerValue {
    pub u: f64,
    pub ux: f64,
    pub uxx: f64,
}

/// U and its reduced-coordinate partials.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierValue {
    pub u: f64,
    pub u_s: f64,
    pub u_t: f64,
    pub u_st: f64,
}

struct LayerSystem {
    nodes: Vec<f64>,
    center: usize,
    /// folded rows over the positive unknowns
    k: DMatrix<f64>,
    /// coefficient of the boundary value u(L) in each row
    b_dirichlet: DVector<f64>,
    /// coefficient of the far-field limit 1
    b_limit: DVector<f64>,
    /// coefficients of κ, κ₂ from the tail integrals
    b_kappa: DVector<f64>,
    b_kappa2: DVector<f64>,
    exponent: f64,
}

impl LayerSystem {
    fn new(gamma: f64, half_width: f64, cells: usize) -> Self {
        let h = 2.0 * half_width / cells as f64;
        let nodes: Vec<f64> = (0..=cells).map(|j| -half_width + j as f64 * h).collect();
        let center = cells / 2;
        let nu = center - 1;
        let exponent = 2.0 * gamma;
        let shape = TailDecay::single(1.0, exponent);
        let rows: Vec<_> = (0..nu)
            .into_par_iter()
            .map(|r| frac_lap_row(&nodes, center + 1 + r, gamma, Some(shape)))
            .collect();
        let mut k = DMatrix::zeros(nu, nu);
        let mut b_dirichlet = DVector::zeros(nu);
        let mut b_limit = DVector::zeros(nu);
        let mut b_kappa = DVector::zeros(nu);
        let mut b_kappa2 = DVector::zeros(nu);
        for (r, row) in rows.iter().enumerate() {
            for c in 0..nu {
                let j = center + 1 + c;
                let jm = center - 1 - c;
                k[(r, c)] = row.weights[j] - row.weights[jm];
            }
            b_dirichlet[r] = row.weights[cells] - row.weights[0];
            b_limit[r] = row.w_right - row.w_left;
            b_kappa[r] = row.w_kappa;
            b_kappa2[r] = row.w_kappa2;
        }
        Self { nodes, center, k, b_dirichlet, b_limit, b_kappa, b_kappa2, exponent }
    }

    fn tail(&self, kappa: (f64, f64)) -> TailDecay {
        TailDecay { kappa: kappa.0, exponent: self.exponent, kappa2: kappa.1, exponent2: 2.0 * self.exponent }
    }

    fn constant(&self, kappa: (f64, f64)) -> DVector<f64> {
        let l = *self.nodes.last().unwrap();
        let ub = 1.0 - self.tail(kappa).deficit(l);
        &self.b_dirichlet * ub + &self.b_limit + &self.b_kappa * kappa.0 + &self.b_kappa2 * kappa.1
    }

    fn positive_nodes(&self) -> &[f64] {
        &self.nodes[self.center + 1..self.nodes.len() - 1]
    }
}

fn residual(sys: &LayerSystem, u: &DVector<f64>, c: &DVector<f64>, f: &dyn Fn(f64) -> f64) -> DVector<f64> {
    let mut r = &sys.k * u + c;
    for (ri, ui) in r.iter_mut().zip(u.iter()) {
        *ri -= f(*ui);
    }
    r
}

fn sup(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

/// (κ, κ₂) in 1 − u ≈ κ x^{−e} + κ₂ x^{−2e}, interpolating the last interior node and the
/// node a quarter of the positive grid further in, so the tail joins the solution at L.
fn fit_kappa(xs: &[f64], u: &DVector<f64>, e: f64) -> (f64, f64) {
    let n = xs.len();
    let (i1, i2) = (n - 1 - n / 4, n - 1);
    let (p1, p2) = (xs[i1].powf(-e), xs[i2].powf(-e));
    let (w1, w2) = (1.0 - u[i1], 1.0 - u[i2]);
    // w = κ p + κ₂ p²
    let det = p1 * p2 * p2 - p2 * p1 * p1;
    ((w1 * p2 * p2 - w2 * p1 * p1) / det, (p1 * w2 - p2 * w1) / det)
}

fn newton(
    sys: &LayerSystem,
    u: &mut DVector<f64>,
    c: &DVector<f64>,
    f: &dyn Fn(f64) -> f64,
    fp: &dyn Fn(f64) -> f64,
    tol: f64,
    max_iter: usize,
    history: &mut Vec<f64>,
) -> bool {
    let mut r = residual(sys, u, c, f);
    let mut rn = sup(&r);
    for _ in 0..max_iter {
        history.push(rn);
        if rn < tol {
            return true;
        }
        let mut j = sys.k.clone();
        for i in 0..u.len() {
            j[(i, i)] -= fp(u[i]);
        }
        let Some(du) = j.lu().solve(&r) else { return false };
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..20 {
            let trial = &*u - &du * step;
            let rt = residual(sys, &trial, c, f);
            let rtn = sup(&rt);
            if rtn < rn || rtn < tol {
                *u = trial;
                r = rt;
                rn = rtn;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            return false;
        }
    }
    history.push(rn);
    rn < tol
}

/// Chord iterations with a frozen Jacobian factorization.
fn chord(
    sys: &LayerSystem,
    u: &mut DVector<f64>,
    c: &DVector<f64>,
    f: &dyn Fn(f64) -> f64,
    lu: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    tol: f64,
    history: &mut Vec<f64>,
) -> bool {
    let mut r = residual(sys, u, c, f);
    let mut rn = sup(&r);
    for _ in 0..50 {
        history.push(rn);
        if rn < tol {
            return true;
        }
        let Some(du) = lu.solve(&r) else { return false };
        let trial = &*u - du;
        let rt = residual(sys, &trial, c, f);
        let rtn = sup(&rt);
        if !(rtn < 0.5 * rn) {
            return false;
        }
        *u = trial;
        r = rt;
        rn = rtn;
    }
    rn < tol
}

fn jacobian_lu(sys: &LayerSystem, u: &DVector<f64>, fp: &dyn Fn(f64) -> f64) -> nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn> {
    let mut j = sys.k.clone();
    for i in 0..u.len() {
        j[(i, i)] -= fp(u[i]);
    }
    j.lu()
}

fn gradient_flow(
    sys: &LayerSystem,
    u: &mut DVector<f64>,
    c: &DVector<f64>,
    f: &dyn Fn(f64) -> f64,
    sigma: f64,
    tol: f64,
    max_iter: usize,
    history: &mut Vec<f64>,
) -> bool {
    // (K + σI) u⁺ = σu + f(u) − c, which is monotone when σ ≥ max f'
    let mut a = sys.k.clone();
    for i in 0..u.len() {
        a[(i, i)] += sigma;
    }
    let lu = a.lu();
    for it in 0..max_iter {
        if it % 10 == 0 {
            let rn = sup(&residual(sys, u, c, f));
            history.push(rn);
            if rn < tol {
                return true;
            }
        }
        let mut rhs = -c.clone();
        for i in 0..u.len() {
            rhs[i] += sigma * u[i] + f(u[i]);
        }
        match lu.solve(&rhs) {
            Some(v) => *u = v,
            None => return false,
        }
    }
    let rn = sup(&residual(sys, u, c, f));
    history.push(rn);
    rn < tol
}

/// Solves (−Δ)^γ u₀ = s·f(u₀) on [−L, L] with `cells` uniform cells, exploiting oddness.
pub fn solve_layer(
    model: &NonlinearityModel,
    gamma: f64,
    half_width: f64,
    cells: usize,
    tol: f64,
    opts: &LayerOptions,
) -> Result<LayerSolution> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::Parameter(format!("gamma {gamma} outside (0,1)")));
    }
    if half_width < 20.0 || cells < 200 || !(tol > 0.0) {
        return Err(Error::Parameter("solve_layer needs L >= 20, N >= 200, tol > 0".into()));
    }
    let cells = cells + cells % 2;
    let sys = LayerSystem::new(gamma, half_width, cells);
    let xs = sys.positive_nodes().to_vec();
    let scale = opts.source_scale;
    let f = |v: f64| scale * model.f(v);
    let fp = |v: f64| scale * model.fprime(v);
    let e = sys.exponent;

    // leading-order tail constant: 1 − u₀ ≈ 2c_{1,γ}/(2γ|f'(1)|) x^{−2γ}
    let mut kappa = (2.0 * c_1_gamma(gamma) / (e * (scale * model.fprime(1.0)).abs()), 0.0);
    let mut u = DVector::from_iterator(
        xs.len(),
        xs.iter().map(|&x| match opts.init {
            LayerInit::Tanh => (0.5 * x).tanh(),
            LayerInit::PiecewiseLinear => (x / 4.0).min(1.0),
        }),
    );
    let sigma = (0..=1000).map(|i| fp(i as f64 / 1000.0)).fold(0.0, f64::max) * 1.5 + 0.1;
    let mut history = Vec::new();
    let inner_tol = tol.min(1e-10);
    let mut frozen = None;
    for refit in 0..=opts.tail_refits {
        let c = sys.constant(kappa);
        let ok = match opts.method {
            LayerMethod::Newton if frozen.as_ref().is_some_and(|lu| chord(&sys, &mut u, &c, &f, lu, inner_tol, &mut history)) => true,
            LayerMethod::Newton => {
                newton(&sys, &mut u, &c, &f, &fp, inner_tol, opts.max_newton, &mut history)
                    || gradient_flow(&sys, &mut u, &c, &f, sigma, inner_tol.max(1e-9), opts.max_flow, &mut history)
                        && newton(&sys, &mut u, &c, &f, &fp, inner_tol, opts.max_newton, &mut history)
            }
            LayerMethod::GradientFlow => {
                gradient_flow(&sys, &mut u, &c, &f, sigma, inner_tol.max(1e-9), opts.max_flow, &mut history)
            }
        };
        if !ok {
            return Err(Error::NoConvergence {
                iterations: history.len(),
                last_residual: history.last().copied().unwrap_or(f64::NAN),
                history,
            });
        }
        if opts.method == LayerMethod::Newton && frozen.is_none() {
            frozen = Some(jacobian_lu(&sys, &u, &fp));
        }
        let new_kappa = fit_kappa(&xs, &u, e);
        let change = (new_kappa.0 - kappa.0).abs() / kappa.0.abs().max(1e-300);
        kappa = new_kappa;
        if refit > 0 && change < 1e-8 {
            break;
        }
    }
    let c = sys.constant(kappa);
    let res = sup(&residual(&sys, &u, &c, &f));
    if res >= tol {
        return Err(Error::NoConvergence { iterations: history.len(), last_residual: res, history });
    }

    let n = sys.nodes.len();
    let mut values = vec![0.0; n];
    let tail = sys.tail(kappa);
    let ub = 1.0 - tail.deficit(half_width);
    values[n - 1] = ub;
    values[0] = -ub;
    for (r, v) in u.iter().enumerate() {
        values[sys.center + 1 + r] = *v;
        values[sys.center - 1 - r] = -*v;
    }
    let trace = SampledFunction1D::new(sys.nodes.clone(), values, -1.0, 1.0)?.with_tail(tail);
    let mut ls = LayerSolution::from_trace(model.clone(), gamma, trace, scale, opts.fine_factor)?;
    ls.residual = res;
    ls.residual_history = history;
    Ok(ls)
}

impl LayerSolution {
    /// Rebuilds derivatives and interpolants from an odd trace with its tail model.
    pub fn from_trace(
        model: NonlinearityModel,
        gamma: f64,
        trace: SampledFunction1D,
        source_scale: f64,
        fine_factor: usize,
    ) -> Result<Self> {
        let tail = trace
            .tail
            .ok_or_else(|| Error::Parameter("layer trace needs a tail model".into()))?;
        let nodes = &trace.nodes;
        let n = nodes.len();
        let h = nodes[1] - nodes[0];
        if nodes.windows(2).any(|w| ((w[1] - w[0]) - h).abs() > 1e-9 * h) {
            return Err(Error::Parameter("layer trace must be on a uniform grid".into()));
        }
        // centred differences everywhere, with ghost values from the tail model
        let l = nodes[n - 1];
        let mut ext = Vec::with_capacity(n + 4);
        ext.push(trace.left_limit + tail.deficit(l + 2.0 * h));
        ext.push(trace.left_limit + tail.deficit(l + h));
        ext.extend_from_slice(&trace.values);
        ext.push(trace.right_limit - tail.deficit(l + h));
        ext.push(trace.right_limit - tail.deficit(l + 2.0 * h));
        let d1 = d1_uniform(&ext, h, false)[2..n + 2].to_vec();
        let d2 = d2_uniform(&ext, h)[2..n + 2].to_vec();
        let dtrace = SampledFunction1D::new(nodes.clone(), d1, 0.0, 0.0)?;
        let (e, e2) = (tail.exponent, tail.exponent2);
        let d2trace = SampledFunction1D::new(nodes.clone(), d2, 0.0, 0.0)?.with_tail(TailDecay {
            kappa: e * (e + 1.0) * tail.kappa,
            exponent: e + 2.0,
            kappa2: e2 * (e2 + 1.0) * tail.kappa2,
            exponent2: e2 + 2.0,
        });

        let fine_factor = fine_factor.max(1);
        let cubic = MonotoneCubic::new(nodes, &trace.values);
        let nf = (n - 1) * fine_factor + 1;
        let hf = h / fine_factor as f64;
        let fine_nodes: Vec<f64> = (0..nf).map(|j| nodes[0] + j as f64 * hf).collect();
        let mut fine_values: Vec<f64> = fine_nodes.iter().map(|&x| cubic.eval(x)).collect();
        // exact oddness of the resampled trace
        for j in 0..nf / 2 {
            let v = 0.5 * (fine_values[nf - 1 - j] - fine_values[j]);
            fine_values[nf - 1 - j] = v;
            fine_values[j] = -v;
        }
        if nf % 2 == 1 {
            fine_values[nf / 2] = 0.0;
        }
        let fine = SampledFunction1D::new(fine_nodes, fine_values, -1.0, 1.0)?.with_tail(tail);
        let dcubic = MonotoneCubic::new(nodes, &dtrace.values);
        let d2cubic = MonotoneCubic::new(nodes, &d2trace.values);
        Ok(Self {
            gamma,
            model,
            trace,
            dtrace,
            d2trace,
            residual: f64::NAN,
            residual_history: Vec::new(),
            source_scale,
            fine,
            fine_factor,
            dcubic,
            d2cubic,
            kernel: PoissonKernel::new(gamma),
        })
    }

    pub fn tail(&self) -> TailDecay {
        self.trace.tail.expect("layer traces always carry a tail model")
    }

    pub fn half_width(&self) -> f64 {
        *self.trace.nodes.last().unwrap()
    }

    pub fn manifest(&self) -> LayerManifest {
        let t = self.tail();
        LayerManifest {
            gamma: self.gamma,
            model: self.model.name().to_string(),
            half_width: self.half_width(),
            cells: self.trace.len() - 1,
            residual: self.residual,
            tail: t,
            source_scale: self.source_scale,
            fine_factor: self.fine_factor,
        }
    }

    /// Residual of the trace equation at a node index (away from the ends).
    pub fn node_residual(&self, i: usize) -> f64 {
        let row = frac_lap_row(&self.trace.nodes, i, self.gamma, self.trace.tail);
        row.apply(&self.trace.values, -1.0, 1.0, self.trace.tail) - self.source_scale * self.model.f(self.trace.values[i])
    }

    /// u₀(z, 0): the resampled piecewise-linear trace, so that λ ↓ 0 of the extension agrees.
    pub fn trace_value(&self, z: f64) -> f64 {
        if z == 0.0 {
            return 0.0;
        }
        self.fine.value_at(z)
    }

    /// u₀ and its x-derivatives at (z, λ).
    pub fn eval(&self, z: f64, lambda: f64) -> LayerValue {
        let t = self.tail();
        let l = self.half_width();
        if lambda <= 0.0 {
            let (ux, uxx) = if z.abs() > l {
                let r = z.abs();
                let [(k1, e1), (k2, e2)] = t.terms();
                (
                    e1 * k1 * r.powf(-e1 - 1.0) + e2 * k2 * r.powf(-e2 - 1.0),
                    -z.signum() * (e1 * (e1 + 1.0) * k1 * r.powf(-e1 - 2.0) + e2 * (e2 + 1.0) * k2 * r.powf(-e2 - 2.0)),
                )
            } else {
                (self.dcubic.eval(z), self.d2cubic.eval(z))
            };
            return LayerValue { u: self.trace_value(z), ux, uxx };
        }
        let (u, ux) = self.kernel.extend_with_slope(&self.fine, z, lambda);
        let (uxx, _) = self.kernel.extend_with_slope(&self.d2trace, z, lambda);
        LayerValue { u, ux, uxx }
    }

    /// u₀ and ∂ₓu₀ only (cheaper than `eval` for λ > 0).
    pub fn eval_value_slope(&self, z: f64, lambda: f64) -> (f64, f64) {
        if lambda <= 0.0 {
            let v = self.eval(z, 0.0);
            return (v.u, v.ux);
        }
        self.kernel.extend_with_slope(&self.fine, z, lambda)
    }
}

/// Barrier U = u₀((s − t)/√2, λ) with partials U_s = ∂ₓu₀/√2, U_t = −U_s, U_st = −∂ₓₓu₀/2.
pub fn eval_u(ls: &LayerSolution, p: &DoublyRadialPoint) -> BarrierValue {
    let v = ls.eval(p.z(), p.lambda);
    let u_s = FRAC_1_SQRT_2 * v.ux;
    BarrierValue { u: v.u, u_s, u_t: -u_s, u_st: -0.5 * v.uxx }
}

/// Sign report for the layer derivatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSignReport {
    pub pass: bool,
    pub min_dtrace: f64,
    pub min_dtrace_at: f64,
    /// max of d2trace over nodes with x > 0 (must be negative)
    pub max_d2trace_positive_side: f64,
    pub max_d2trace_at: f64,
    pub d2trace_at_zero: f64,
    pub offending_nodes: Vec<f64>,
}

pub fn layer_derivative_signs(ls: &LayerSolution) -> LayerSignReport {
    let x = &ls.dtrace.nodes;
    let mut min_d = f64::INFINITY;
    let mut min_at = 0.0;
    let mut max_d2 = f64::NEG_INFINITY;
    let mut max_at = 0.0;
    let mut offending = Vec::new();
    let mut d2_zero = 0.0;
    for (i, &xi) in x.iter().enumerate() {
        let d = ls.dtrace.values[i];
        if d < min_d {
            min_d = d;
            min_at = xi;
        }
        let mut bad = !(d > 0.0);
        if xi == 0.0 {
            d2_zero = ls.d2trace.values[i];
        }
        if xi > 0.0 {
            let d2 = ls.d2trace.values[i];
            if d2 > max_d2 {
                max_d2 = d2;
                max_at = xi;
            }
            bad |= !(d2 < 0.0);
        }
        if bad {
            offending.push(xi);
        }
    }
    LayerSignReport {
        pass: offending.is_empty(),
        min_dtrace: min_d,
        min_dtrace_at: min_at,
        max_d2trace_positive_side: max_d2,
        max_d2trace_at: max_at,
        d2trace_at_zero: d2_zero,
        offending_nodes: offending,
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerRow {
    x: f64,
    u0: f64,
    u0x: f64,
    u0xx: f64,
}

/// Writes `<stem>.csv` (columns x, u0, u0x, u0xx) and `<stem>.json` for a layer.
pub fn save_layer(dir: &std::path::Path, stem: &str, ls: &LayerSolution) -> Result<LayerManifest> {
    let mut w = csv::Writer::from_path(dir.join(format!("{stem}.csv")))?;
    for i in 0..ls.trace.len() {
        w.serialize(LayerRow {
            x: ls.trace.nodes[i],
            u0: ls.trace.values[i],
            u0x: ls.dtrace.values[i],
            u0xx: ls.d2trace.values[i],
        })?;
    }
    w.flush()?;
    let manifest = ls.manifest();
    std::fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Loads a layer written by [`save_layer`]; derivatives and interpolants are rebuilt from the
/// trace, and the stored derivative columns must agree with them.
pub fn load_layer(dir: &std::path::Path, stem: &str) -> Result<LayerSolution> {
    let manifest: LayerManifest =
        serde_json::from_str(&std::fs::read_to_string(dir.join(format!("{stem}.json")))?)?;
    let model = NonlinearityModel::by_name(&manifest.model)?;
    let mut r = csv::Reader::from_path(dir.join(format!("{stem}.csv")))?;
    let mut rows = Vec::new();
    for (i, row) in r.deserialize::<LayerRow>().enumerate() {
        let row = row?;
        if ![row.x, row.u0, row.u0x, row.u0xx].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidData(format!("row {i}: non-finite value")));
        }
        rows.push(row);
    }
    if rows.len() != manifest.cells + 1 {
        return Err(Error::InvalidData(format!("expected {} rows, found {}", manifest.cells + 1, rows.len())));
    }
    let nodes: Vec<f64> = rows.iter().map(|r| r.x).collect();
    let values: Vec<f64> = rows.iter().map(|r| r.u0).collect();
    let trace = SampledFunction1D::new(nodes, values, -1.0, 1.0)?.with_tail(manifest.tail);
    let mut ls = LayerSolution::from_trace(model, manifest.gamma, trace, manifest.source_scale, manifest.fine_factor)?;
    let scale = ls.dtrace.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (i, row) in rows.iter().enumerate() {
        if (row.u0x - ls.dtrace.values[i]).abs() > 1e-9 * scale.max(1.0) {
            return Err(Error::InvalidData(format!("row {i}: u0x does not match the trace")));
        }
    }
    ls.residual = manifest.residual;
    Ok(ls)
}
