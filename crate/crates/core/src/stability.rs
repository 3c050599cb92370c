//! Second variation of the energy in the doubly radial class: the quadratic form, its
//! smallest Rayleigh quotient against the bottom-face mass, and the cutoff energy scaling.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid3;
use crate::linalg::{dot, pcg, LinePreconditioner, Stiffness};
use crate::numerics::fit_slope;
use crate::problem::NonlinearityModel;
use crate::saddle::SaddleField;
use crate::verify::CheckRecord;

/// Outcome class of the eigenvalue estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Unstable,
    StableAtTolerance,
    Inconclusive,
}

impl Verdict {
    pub fn label(&self) -> &'static str {
        match self {
            Verdict::Unstable => "unstable",
            Verdict::StableAtTolerance => "stable-at-tolerance",
            Verdict::Inconclusive => "inconclusive",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilityOptions {
    /// Lanczos steps (one inner linear solve each).
    pub max_iter: usize,
    /// Relative Ritz residual at which the iteration stops.
    pub tol: f64,
    /// Relative tolerance of the inner conjugate-gradient solves.
    pub inner_tol: f64,
    pub inner_max: usize,
    /// Seed of the random start vector.
    pub seed: u64,
    /// Full-grid fields whose bottom traces are projected out of the Krylov space.
    /// Empty by default: with zero data on s = S, t = S and λ = Λ there is no kernel.
    #[serde(skip)]
    pub deflate: Vec<Vec<f64>>,
}

impl Default for StabilityOptions {
    fn default() -> Self {
        Self { max_iter: 80, tol: 1e-8, inner_tol: 1e-10, inner_max: 5000, seed: 0, deflate: Vec::new() }
    }
}

/// Smallest doubly radial Rayleigh quotient of the second variation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilityReport {
    pub m: usize,
    pub gamma: f64,
    /// Q(ξ)/‖ξ‖² of the witness.
    pub lambda_min_estimate: f64,
    /// Ritz value from the Lanczos tridiagonal matrix.
    pub ritz_value: f64,
    /// Relative Ritz residual at exit.
    pub ritz_residual: f64,
    pub iterations: usize,
    /// Ritz estimate of the smallest quotient after every step.
    pub history: Vec<f64>,
    /// Verdict tolerance max(solver residual, h²); the threshold is −10 times it.
    pub tolerance: f64,
    pub verdict: Verdict,
    pub scope: String,
    pub diagnostics: Option<String>,
    /// Witness on the full grid, unit bottom-face L² norm; written separately as a field file.
    #[serde(skip)]
    pub witness: Vec<f64>,
}

/// Q(ξ) and ‖ξ‖² with the bottom-face mass:
/// Q = d_γ Σ λᵃ|∇ξ|²·weight − Σ_{λ=0} f′(u) ξ² H, ‖ξ‖² = Σ_{λ=0} ξ² H.
pub fn quadratic_form(sf: &SaddleField, model: &NonlinearityModel, xi: &[f64]) -> Result<(f64, f64)> {
    let g = &sf.grid;
    if xi.len() != g.len() {
        return Err(Error::Dimension { expected: g.len(), got: xi.len() });
    }
    let n = g.n_s();
    let nl = g.n_lambda();
    for p in 0..g.len() {
        let (i, j, k) = g.coords(p);
        if (i + 1 == n || j + 1 == n || k + 1 == nl) && xi[p] != 0.0 {
            return Err(Error::Precondition(format!(
                "test field must vanish on s = S, t = S and lambda = Lambda; value {:.3e} at node ({i}, {j}, {k})",
                xi[p]
            )));
        }
        if !xi[p].is_finite() {
            return Err(Error::InvalidData(format!("non-finite test field value at node ({i}, {j}, {k})")));
        }
    }
    if xi.iter().all(|&v| v == 0.0) {
        return Err(Error::Degenerate("test field is identically zero".into()));
    }
    let mut grad = 0.0;
    g.for_each_face(|p, q, c| {
        let d = xi[q] - xi[p];
        grad += c * d * d;
    });
    let (mut pot, mut den) = (0.0, 0.0);
    for j in 0..n {
        for i in 0..n {
            let p = g.idx(i, j, 0);
            let w = g.bottom_weight(i, j) * xi[p] * xi[p];
            pot += model.fprime(sf.u[p]) * w;
            den += w;
        }
    }
    Ok((sf.params.d_gamma * grad - pot, den))
}

/// Threshold tolerance of the verdict: max(solver residual, h²).
pub fn verdict_tolerance(sf: &SaddleField) -> f64 {
    let r = if sf.residual_norm.is_finite() { sf.residual_norm } else { 0.0 };
    r.max(sf.grid.h * sf.grid.h)
}

fn classify(m: usize, estimate: f64, tol: f64, converged: bool) -> Verdict {
    if estimate < -10.0 * tol {
        Verdict::Unstable
    } else if !converged || (4..=6).contains(&m) {
        // dimensions 8, 10 and 12 are left open; a non-negative estimate proves nothing there
        Verdict::Inconclusive
    } else {
        Verdict::StableAtTolerance
    }
}

/// Smallest eigenvalue μ of Kξ = μBξ, K the second variation and B the bottom-face mass.
///
/// With σ > max f′ the shifted form K + σB is positive definite, and the largest eigenvalue
/// θ of B^{1/2}(K + σB)^{−1}B^{1/2} gives μ_min = 1/θ − σ. Lanczos with full
/// reorthogonalization runs on that operator over the bottom unknowns; every step is one
/// inner solve, so the method is a Krylov-accelerated inverse iteration.
pub fn min_rayleigh(sf: &SaddleField, model: &NonlinearityModel, opts: &StabilityOptions) -> Result<StabilityReport> {
    if opts.max_iter < 2 {
        return Err(Error::Parameter("max_iter must be at least 2".into()));
    }
    let g = &sf.grid;
    if sf.u.len() != g.len() {
        return Err(Error::Dimension { expected: g.len(), got: sf.u.len() });
    }
    let n = g.n_s();
    let nl = g.n_lambda();
    let d = sf.params.d_gamma;
    let a = Stiffness::new(g, |i, j, k| i + 1 < n && j + 1 < n && k + 1 < nl);
    let fmax = (0..n * n).map(|p| model.fprime(sf.u[p])).fold(f64::NEG_INFINITY, f64::max);
    let sigma = fmax.max(0.0) + 0.5;

    // bottom unknowns and their masses
    let bottom: Vec<usize> = (0..a.len()).filter(|&r| a.nodes[r] < n * n).collect();
    let hb: Vec<f64> = bottom
        .iter()
        .map(|&r| {
            let (i, j, _) = g.coords(a.nodes[r]);
            g.bottom_weight(i, j)
        })
        .collect();
    let sq: Vec<f64> = hb.iter().map(|h| h.sqrt()).collect();
    let mut extra = vec![0.0; a.len()];
    for (b, &r) in bottom.iter().enumerate() {
        extra[r] = hb[b] * (sigma - model.fprime(sf.u[a.nodes[r]])) / d;
    }
    let pre = LinePreconditioner::new(&a, Some(&extra));
    let nb = bottom.len();

    // ξ = (K + σB)^{−1} B^{1/2} y, with K + σB = d(A + extra)
    let solve = |y: &[f64]| -> Result<Vec<f64>> {
        let mut rhs = vec![0.0; a.len()];
        for (b, &r) in bottom.iter().enumerate() {
            rhs[r] = sq[b] * y[b] / d;
        }
        let mut x = vec![0.0; a.len()];
        let info = pcg(&a, Some(&extra), &pre, &rhs, &mut x, opts.inner_tol, opts.inner_max);
        if !info.converged {
            return Err(Error::NoConvergence {
                iterations: info.iterations,
                last_residual: info.relative_residual,
                history: Vec::new(),
            });
        }
        Ok(x)
    };
    let trace = |x: &[f64]| -> Vec<f64> { bottom.iter().enumerate().map(|(b, &r)| sq[b] * x[r]).collect() };

    // deflation vectors as B^{1/2}-weighted bottom traces, orthonormalized
    let mut defl: Vec<Vec<f64>> = Vec::new();
    for v in &opts.deflate {
        if v.len() != g.len() {
            return Err(Error::Dimension { expected: g.len(), got: v.len() });
        }
        let mut w: Vec<f64> = bottom.iter().enumerate().map(|(b, &r)| sq[b] * v[a.nodes[r]]).collect();
        orthogonalize(&mut w, &defl);
        let nw = dot(&w, &w).sqrt();
        if nw > 0.0 {
            w.iter_mut().for_each(|x| *x /= nw);
            defl.push(w);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut q: Vec<f64> = (0..nb).map(|_| rng.gen::<f64>() - 0.5).collect();
    orthogonalize(&mut q, &defl);
    let nq = dot(&q, &q).sqrt();
    q.iter_mut().for_each(|x| *x /= nq);

    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut history = Vec::new();
    let mut ritz = (f64::NAN, Vec::new(), f64::INFINITY);
    let mut converged = false;
    for _ in 0..opts.max_iter.min(nb) {
        let x = solve(&q)?;
        let mut w = trace(&x);
        orthogonalize(&mut w, &defl);
        let al = dot(&w, &q);
        basis.push(q.clone());
        alpha.push(al);
        // two passes of classical Gram-Schmidt against the whole basis
        orthogonalize(&mut w, &basis);
        orthogonalize(&mut w, &basis);
        let bt = dot(&w, &w).sqrt();

        let kk = alpha.len();
        let mut t = DMatrix::<f64>::zeros(kk, kk);
        for i in 0..kk {
            t[(i, i)] = alpha[i];
            if i + 1 < kk {
                t[(i, i + 1)] = beta[i];
                t[(i + 1, i)] = beta[i];
            }
        }
        let eig = SymmetricEigen::new(t);
        let (imax, theta) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        let coef: Vec<f64> = eig.eigenvectors.column(imax).iter().copied().collect();
        let res = (bt * coef[kk - 1]).abs() / theta.abs().max(f64::MIN_POSITIVE);
        history.push(1.0 / theta - sigma);
        ritz = (theta, coef, res);
        if res <= opts.tol || bt <= f64::EPSILON * theta.abs() {
            converged = true;
            break;
        }
        beta.push(bt);
        q = w.iter().map(|v| v / bt).collect();
    }

    let (theta, coef, res) = ritz;
    let mut y = vec![0.0; nb];
    for (c, v) in coef.iter().zip(&basis) {
        for b in 0..nb {
            y[b] += c * v[b];
        }
    }
    let x = solve(&y)?;
    let mut witness = vec![0.0; g.len()];
    a.scatter(&x, &mut witness);
    let (num, den) = quadratic_form(sf, model, &witness)?;
    let scale = 1.0 / den.sqrt();
    witness.iter_mut().for_each(|v| *v *= scale);
    let (num, den) = (num * scale * scale, den * scale * scale);
    let estimate = num / den;

    let tolerance = verdict_tolerance(sf);
    let verdict = classify(sf.params.m, estimate, tolerance, converged);
    let diagnostics = if converged {
        None
    } else {
        Some(format!("Lanczos stopped after {} steps with relative Ritz residual {res:.3e}", alpha.len()))
    };
    Ok(StabilityReport {
        m: sf.params.m,
        gamma: sf.params.gamma,
        lambda_min_estimate: estimate,
        ritz_value: 1.0 / theta - sigma,
        ritz_residual: res,
        iterations: alpha.len(),
        history,
        tolerance,
        verdict,
        scope: "doubly-radial stability: test fields depend on (s, t, lambda) only".into(),
        diagnostics,
        witness,
    })
}

fn orthogonalize(w: &mut [f64], basis: &[Vec<f64>]) {
    for v in basis {
        let c = dot(w, v);
        for (x, y) in w.iter_mut().zip(v) {
            *x -= c * y;
        }
    }
}

/// C^∞ ramp: 0 on (−∞, 0], 1 on [1, ∞).
pub fn smooth_step(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x >= 1.0 {
        1.0
    } else {
        let a = (-1.0 / x).exp();
        let b = (-1.0 / (1.0 - x)).exp();
        a / (a + b)
    }
}

/// η_ε(s): 0 on [0, ε/2], 1 on [ε, ∞).
pub fn cutoff(eps: f64, s: f64) -> f64 {
    smooth_step((s - 0.5 * eps) / (0.5 * eps))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CutoffReport {
    pub m: usize,
    pub eps: Vec<f64>,
    pub energy: Vec<f64>,
    pub slope: f64,
    pub expected_slope: f64,
    pub checks: Vec<CheckRecord>,
}

impl CutoffReport {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// Weighted gradient energy Σ λᵃ|∇η_ε(s)|²·weight over the grid box [0, R]³ for each ε,
/// with the fitted log-log slope against ε; the expected slope is m − 2.
pub fn cutoff_family_check(sf: &SaddleField, eps_list: &[f64], radius: f64) -> Result<CutoffReport> {
    let g = &sf.grid;
    let m = g.m;
    if m < 3 {
        return Err(Error::Precondition(format!("the cutoff estimate needs m >= 3, got {m}")));
    }
    if eps_list.len() < 2 {
        return Err(Error::Parameter("need at least two values of eps".into()));
    }
    if eps_list.windows(2).any(|w| !(w[1] < w[0])) || eps_list.iter().any(|&e| !(e > 0.0)) {
        return Err(Error::Parameter("eps values must be positive and strictly decreasing".into()));
    }
    if !(radius > 0.0) || radius > g.spec.s_max.min(g.spec.lambda_max) * (1.0 + 1e-12) {
        return Err(Error::Domain(format!("box radius {radius} does not fit in the grid")));
    }
    if eps_list[0] > radius {
        return Err(Error::Domain(format!("eps {} exceeds the box radius {radius}", eps_list[0])));
    }
    if let Some(e) = eps_list.iter().find(|&&e| e < 4.0 * g.h) {
        return Err(Error::Truncation(format!("eps {e} is below four grid cells (h = {:.4})", g.h)));
    }
    let energy: Vec<f64> = eps_list.iter().map(|&eps| cutoff_energy(g, eps, radius)).collect();
    let lx: Vec<f64> = eps_list.iter().map(|e| e.ln()).collect();
    let ly: Vec<f64> = energy.iter().map(|e| e.ln()).collect();
    let slope = fit_slope(&lx, &ly);
    let expected = m as f64 - 2.0;
    let mut checks = vec![CheckRecord::new(
        "cutoff energy log-log slope within 0.3 of m - 2",
        0.3 - (slope - expected).abs(),
        [f64::NAN; 3],
        0.0,
        eps_list.len(),
    )];
    let worst_drop = energy.windows(2).map(|w| w[0] - w[1]).fold(f64::INFINITY, f64::min);
    checks.push(CheckRecord::new(
        "cutoff energy decreasing as eps decreases",
        worst_drop,
        [f64::NAN; 3],
        crate::verify::STRICT,
        eps_list.len(),
    ));
    Ok(CutoffReport { m, eps: eps_list.to_vec(), energy, slope, expected_slope: expected, checks })
}

fn cutoff_energy(g: &Grid3, eps: f64, radius: f64) -> f64 {
    let n = g.n_s();
    let inside = |x: f64| x <= radius * (1.0 + 1e-12);
    let tsum: f64 = (0..n).filter(|&j| inside(g.s[j])).map(|j| g.scell[j]).sum();
    let lsum: f64 = (0..g.n_lambda()).filter(|&k| inside(g.lambda[k])).map(|k| g.lcell[k]).sum();
    let ssum: f64 = (0..n - 1)
        .filter(|&i| inside(g.s[i + 1]))
        .map(|i| {
            let d = cutoff(eps, g.s[i + 1]) - cutoff(eps, g.s[i]);
            g.sface[i] * d * d
        })
        .sum();
    ssum * tsum * lsum
}
