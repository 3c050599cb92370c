//! One-dimensional fractional Laplacian, Poisson extension of traces on the line, and the
//! Dirichlet-to-Neumann constant d_γ.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use statrs::function::gamma::gamma as gamma_fn;

use crate::error::{Error, Result};
use crate::numerics::{gauss_legendre, locate, powdiff};

/// Algebraic approach to the far-field limits: value ≈ right − κ·x^{−e} − κ₂·x^{−e₂} beyond the
/// last node and left + κ·|x|^{−e} + κ₂·|x|^{−e₂} before the first node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailDecay {
    pub kappa: f64,
    pub exponent: f64,
    pub kappa2: f64,
    pub exponent2: f64,
}

impl TailDecay {
    pub fn single(kappa: f64, exponent: f64) -> Self {
        Self { kappa, exponent, kappa2: 0.0, exponent2: 2.0 * exponent }
    }

    /// κ·x^{−e} + κ₂·x^{−e₂} for x > 0.
    pub fn deficit(&self, x: f64) -> f64 {
        self.kappa * x.powf(-self.exponent) + self.kappa2 * x.powf(-self.exponent2)
    }

    pub fn terms(&self) -> [(f64, f64); 2] {
        [(self.kappa, self.exponent), (self.kappa2, self.exponent2)]
    }
}

/// Values on a strictly increasing grid with far-field limits used in tail integrals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledFunction1D {
    pub nodes: Vec<f64>,
    pub values: Vec<f64>,
    pub left_limit: f64,
    pub right_limit: f64,
    pub tail: Option<TailDecay>,
}

impl SampledFunction1D {
    pub fn new(nodes: Vec<f64>, values: Vec<f64>, left_limit: f64, right_limit: f64) -> Result<Self> {
        if nodes.len() != values.len() {
            return Err(Error::Dimension { expected: nodes.len(), got: values.len() });
        }
        if nodes.len() < 5 {
            return Err(Error::Parameter("need at least 5 nodes".into()));
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Parameter("nodes must be strictly increasing".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite sample value".into()));
        }
        Ok(Self { nodes, values, left_limit, right_limit, tail: None })
    }

    /// Samples `g` on `n` uniform nodes of [−half_width, half_width].
    pub fn from_fn(g: impl Fn(f64) -> f64, half_width: f64, n: usize, left_limit: f64, right_limit: f64) -> Result<Self> {
        let h = 2.0 * half_width / (n - 1) as f64;
        let nodes: Vec<f64> = (0..n).map(|i| -half_width + i as f64 * h).collect();
        let values = nodes.iter().map(|&x| g(x)).collect();
        Self::new(nodes, values, left_limit, right_limit)
    }

    pub fn with_tail(mut self, tail: TailDecay) -> Self {
        self.tail = Some(tail);
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Piecewise-linear value inside the grid, tail model outside.
    pub fn value_at(&self, x: f64) -> f64 {
        let n = self.nodes.len();
        let deficit = |x: f64| self.tail.map_or(0.0, |t| t.deficit(x));
        if x > self.nodes[n - 1] {
            return self.right_limit - deficit(x);
        }
        if x < self.nodes[0] {
            return self.left_limit + deficit(-x);
        }
        let i = locate(&self.nodes, x);
        let w = (x - self.nodes[i]) / (self.nodes[i + 1] - self.nodes[i]);
        self.values[i] * (1.0 - w) + self.values[i + 1] * w
    }
}

/// Normalizing constant of the one-dimensional fractional Laplacian,
/// c_{1,γ} = γ·4^γ·Γ(1/2+γ) / (√π·Γ(1−γ)); see Di Nezza, Palatucci, Valdinoci,
/// "Hitchhiker's guide to the fractional Sobolev spaces", Bull. Sci. Math. 136 (2012).
pub fn c_1_gamma(gamma: f64) -> f64 {
    gamma * 4f64.powf(gamma) * gamma_fn(0.5 + gamma) / (PI.sqrt() * gamma_fn(1.0 - gamma))
}

fn gl48() -> &'static (Vec<f64>, Vec<f64>) {
    static GL: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    GL.get_or_init(|| {
        let (x, w) = gauss_legendre(48);
        // map to [0, 1]
        (x.iter().map(|v| 0.5 * (v + 1.0)).collect(), w.iter().map(|v| 0.5 * v).collect())
    })
}

fn gl8() -> &'static (Vec<f64>, Vec<f64>) {
    static GL: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    GL.get_or_init(|| gauss_legendre(8))
}

/// ∫_d^∞ g(r) dr for g smooth on (0, ∞) with g(r) = O(r^{−decay}), decay > 1: panels of
/// width ≤ 1/2 in ln r up to `r0`, then an algebraic map of [r0, ∞) onto (0, 1].
fn integrate_algebraic_tail(g: impl Fn(f64) -> f64, d: f64, r0: f64, decay: f64) -> f64 {
    let (gx, gw) = gl8();
    let mut total = 0.0;
    let (s0, s1) = (d.ln(), r0.ln());
    if s1 > s0 {
        let panels = ((s1 - s0) / 0.5).ceil().max(1.0) as usize;
        let w = (s1 - s0) / panels as f64;
        for p in 0..panels {
            let mid = s0 + (p as f64 + 0.5) * w;
            for (x, wt) in gx.iter().zip(gw) {
                let r = (mid + 0.5 * w * x).exp();
                total += 0.5 * w * wt * r * g(r);
            }
        }
    }
    let r0 = r0.max(d);
    let (q, w) = gl48();
    let k = 1.0 / (decay - 1.0);
    for (&qq, &ww) in q.iter().zip(w) {
        let r = r0 * qq.powf(-k);
        total += ww * g(r) * r0 * k * qq.powf(-k - 1.0);
    }
    total
}

/// ∫_{lb}^∞ y^{−e} (y − x)^{−1−2γ} dy for x < lb.
fn tail_kernel_integral(x: f64, lb: f64, e: f64, gamma: f64) -> f64 {
    let d = lb - x;
    let g2 = 2.0 * gamma;
    let r0 = d + 8.0 * x.abs().max(d);
    integrate_algebraic_tail(|r| (x + r).powf(-e) * r.powf(-1.0 - g2), d, r0, 1.0 + g2 + e)
}

/// Linear functional giving (−Δ)^γ u at one node:
/// Σ w_j u_j + w_left·left + w_right·right + w_kappa·κ + w_kappa2·κ₂.
#[derive(Debug, Clone)]
pub struct FracLapRow {
    pub weights: Vec<f64>,
    pub w_left: f64,
    pub w_right: f64,
    pub w_kappa: f64,
    pub w_kappa2: f64,
}

impl FracLapRow {
    pub fn apply(&self, values: &[f64], left: f64, right: f64, tail: Option<TailDecay>) -> f64 {
        let s: f64 = self.weights.iter().zip(values).map(|(w, v)| w * v).sum();
        let (k1, k2) = tail.map_or((0.0, 0.0), |t| (t.kappa, t.kappa2));
        s + self.w_left * left + self.w_right * right + self.w_kappa * k1 + self.w_kappa2 * k2
    }
}

/// Assembles the quadrature row at node `i` (which needs a neighbor on each side).
/// `tail` supplies the decay exponents of the tail model, if any.
pub fn frac_lap_row(nodes: &[f64], i: usize, gamma: f64, tail: Option<TailDecay>) -> FracLapRow {
    let n = nodes.len();
    assert!(i >= 1 && i + 1 < n);
    let g2 = 2.0 * gamma;
    let xi = nodes[i];
    let mut w = vec![0.0; n];

    // singular cell [x_{i-1}, x_{i+1}]: integrate the second-order Taylor polynomial
    let h1 = xi - nodes[i - 1];
    let h2 = nodes[i + 1] - xi;
    let a1 = powdiff(h2, h1, 1.0 - g2);
    let a2 = (h1.powf(2.0 - g2) + h2.powf(2.0 - g2)) / (2.0 - g2);
    let d1 = [-h2 / (h1 * (h1 + h2)), (h2 - h1) / (h1 * h2), h1 / (h2 * (h1 + h2))];
    let d2 = [2.0 / (h1 * (h1 + h2)), -2.0 / (h1 * h2), 2.0 / (h2 * (h1 + h2))];
    for k in 0..3 {
        w[i - 1 + k] -= a1 * d1[k] + 0.5 * a2 * d2[k];
    }

    // regular segments: exact moments of the linear interpolant plus a quadratic correction
    // u − ℓ ≈ ½ū''(r − ra)(r − rb), with ū'' the mean of the nodal second differences
    let second_diff = |j: usize| -> [(usize, f64); 3] {
        let j = j.clamp(1, n - 2);
        let h1 = nodes[j] - nodes[j - 1];
        let h2 = nodes[j + 1] - nodes[j];
        [
            (j - 1, 2.0 / (h1 * (h1 + h2))),
            (j, -2.0 / (h1 * h2)),
            (j + 1, 2.0 / (h2 * (h1 + h2))),
        ]
    };
    let mut segment = |ra: f64, rb: f64, near: usize, far: usize| {
        // r runs from ra (endpoint `near`) to rb (endpoint `far`), 0 < ra < rb
        let hk = rb - ra;
        let i0 = (ra.powf(-g2) - rb.powf(-g2)) / g2;
        let i1 = powdiff(rb, ra, 1.0 - g2);
        let c = (i1 - ra * i0) / hk;
        w[i] += i0;
        w[near] += c - i0;
        w[far] -= c;
        let k2 = if ra < 32.0 * hk {
            let i2 = powdiff(rb, ra, 2.0 - g2);
            i2 - (ra + rb) * i1 + ra * rb * i0
        } else {
            -hk * hk * hk / 6.0 * (0.5 * (ra + rb)).powf(-1.0 - g2)
        };
        for j in [near, far] {
            for (idx, coef) in second_diff(j) {
                w[idx] -= 0.25 * k2 * coef;
            }
        }
    };
    for k in (i + 1)..(n - 1) {
        segment(nodes[k] - xi, nodes[k + 1] - xi, k, k + 1);
    }
    for k in 1..i {
        segment(xi - nodes[k], xi - nodes[k - 1], k, k - 1);
    }

    // tails
    let rr = nodes[n - 1] - xi;
    let rl = xi - nodes[0];
    let tr = rr.powf(-g2) / g2;
    let tl = rl.powf(-g2) / g2;
    w[i] += tr + tl;
    let tail_weight = |e: f64| tail_kernel_integral(xi, nodes[n - 1], e, gamma) - tail_kernel_integral(-xi, -nodes[0], e, gamma);
    let (w_kappa, w_kappa2) = match tail {
        Some(t) => (tail_weight(t.exponent), tail_weight(t.exponent2)),
        None => (0.0, 0.0),
    };

    let c = c_1_gamma(gamma);
    for v in w.iter_mut() {
        *v *= c;
    }
    FracLapRow { weights: w, w_left: -c * tl, w_right: -c * tr, w_kappa: c * w_kappa, w_kappa2: c * w_kappa2 }
}

/// (−Δ)^γ of a sampled function at a grid node.
pub fn frac_lap_1d(func: &SampledFunction1D, gamma: f64, x: f64) -> Result<f64> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::Domain(format!("gamma {gamma} outside (0,1)")));
    }
    let n = func.nodes.len();
    let i = func
        .nodes
        .iter()
        .position(|&v| (v - x).abs() <= 1e-12 * (1.0 + x.abs()))
        .ok_or_else(|| Error::Domain(format!("x = {x} is not a grid node")))?;
    if i < 2 || i + 2 >= n {
        return Err(Error::Truncation(format!("x = {x} within two cells of the grid end")));
    }
    let row = frac_lap_row(&func.nodes, i, gamma, func.tail);
    Ok(row.apply(&func.values, func.left_limit, func.right_limit, func.tail))
}

/// Poisson kernel of the extension, P(x, λ) = c_P λ^{2γ} (x² + λ²)^{−(1+2γ)/2}, with its
/// distribution function in a cancellation-free form.
#[derive(Debug, Clone)]
pub struct PoissonKernel {
    gamma: f64,
    c_p: f64,
    table: Option<CdfTable>,
}

#[derive(Debug, Clone)]
struct CdfTable {
    dtheta: f64,
    q: Vec<f64>,
    dq: Vec<f64>,
    series: Vec<f64>,
}

const TABLE_LIMIT: f64 = 4.0;
const TABLE_INTERVALS: usize = 2048;

impl PoissonKernel {
    pub fn new(gamma: f64) -> Self {
        let c_p = gamma_fn(gamma + 0.5) / (PI.sqrt() * gamma_fn(gamma));
        let table = if gamma == 0.5 {
            None
        } else {
            let theta_max = TABLE_LIMIT.atan();
            let dtheta = theta_max / TABLE_INTERVALS as f64;
            let mut q = Vec::with_capacity(TABLE_INTERVALS + 1);
            let mut dq = Vec::with_capacity(TABLE_INTERVALS + 1);
            for k in 0..=TABLE_INTERVALS {
                let th = k as f64 * dtheta;
                let c = th.cos();
                q.push(0.5 * beta_reg(gamma, 0.5, c * c));
                dq.push(-c_p * c.powf(2.0 * gamma - 1.0));
            }
            // Q(v) = c_P Σ_k binom(−β, k) v^{−2γ−2k} / (2γ + 2k) for v > 1
            let beta = 0.5 + gamma;
            let mut series = Vec::new();
            let mut binom = 1.0;
            for k in 0..60 {
                let kf = k as f64;
                series.push(c_p * binom / (2.0 * gamma + 2.0 * kf));
                binom *= -(beta + kf) / (kf + 1.0);
            }
            Some(CdfTable { dtheta, q, dq, series })
        };
        Self { gamma, c_p, table }
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Kernel value at (x, λ).
    pub fn density(&self, x: f64, lambda: f64) -> f64 {
        self.c_p * lambda.powf(2.0 * self.gamma) * (x * x + lambda * lambda).powf(-(0.5 + self.gamma))
    }

    /// Upper tail Q(v) = ∫_v^∞ P(w, 1) dw for v ≥ 0.
    pub fn upper_tail(&self, v: f64) -> f64 {
        debug_assert!(v >= 0.0);
        match &self.table {
            None => {
                if v == 0.0 {
                    0.5
                } else {
                    (1.0 / v).atan() / PI
                }
            }
            Some(t) => {
                if v > TABLE_LIMIT {
                    let inv2 = 1.0 / (v * v);
                    let mut pw = v.powf(-2.0 * self.gamma);
                    let mut s = 0.0;
                    for c in &t.series {
                        let term = c * pw;
                        s += term;
                        if term.abs() < 1e-18 * s.abs() {
                            break;
                        }
                        pw *= inv2;
                    }
                    s
                } else {
                    let th = v.atan();
                    let x = th / t.dtheta;
                    let k = (x.floor() as usize).min(TABLE_INTERVALS - 1);
                    let u = x - k as f64;
                    let h = t.dtheta;
                    let u2 = u * u;
                    let u3 = u2 * u;
                    (2.0 * u3 - 3.0 * u2 + 1.0) * t.q[k]
                        + (u3 - 2.0 * u2 + u) * h * t.dq[k]
                        + (-2.0 * u3 + 3.0 * u2) * t.q[k + 1]
                        + (u3 - u2) * h * t.dq[k + 1]
                }
            }
        }
    }

    /// Φ(v) = ∫_{−∞}^v P(w, 1) dw, split as (upper, q) meaning Φ = 1 − q if upper else q.
    fn split_cdf(&self, v: f64) -> (bool, f64) {
        if v >= 0.0 {
            (true, self.upper_tail(v))
        } else {
            (false, self.upper_tail(-v))
        }
    }

    /// Φ(v_hi) − Φ(v_lo) for v_lo ≤ v_hi, given split representations.
    fn cdf_diff(lo: (bool, f64), hi: (bool, f64)) -> f64 {
        match (lo.0, hi.0) {
            (true, true) => lo.1 - hi.1,
            (false, false) => hi.1 - lo.1,
            (false, true) => 1.0 - hi.1 - lo.1,
            (true, false) => -(1.0 - lo.1 - hi.1),
        }
    }

    pub fn cdf(&self, v: f64) -> f64 {
        let (up, q) = self.split_cdf(v);
        if up {
            1.0 - q
        } else {
            q
        }
    }

    /// ∫_{v_lo}^{v_hi} w P(w, 1) dw.
    fn first_moment(&self, v_lo: f64, v_hi: f64) -> f64 {
        let p = 0.5 - self.gamma;
        0.5 * self.c_p * powdiff(1.0 + v_hi * v_hi, 1.0 + v_lo * v_lo, p)
    }

    /// ∫_{lb}^∞ P(z − y, λ) y^{−e} dy for z < lb.
    fn tail_integral(&self, z: f64, lambda: f64, lb: f64, e: f64) -> f64 {
        let d = lb - z;
        let r0 = d + 8.0 * z.abs().max(d).max(lambda);
        let g2 = 2.0 * self.gamma;
        integrate_algebraic_tail(|r| self.density(r, lambda) * (z + r).powf(-e), d, r0, 1.0 + g2 + e)
    }

    /// Extension value and its x-derivative at (z, λ) for a piecewise-linear trace.
    pub fn extend_with_slope(&self, func: &SampledFunction1D, z: f64, lambda: f64) -> (f64, f64) {
        let y = &func.nodes;
        let u = &func.values;
        let n = y.len();
        let mut prev_v = (z - y[0]) / lambda;
        let mut prev = self.split_cdf(prev_v);
        let first = prev;
        let mut val = 0.0;
        let mut slope_sum = 0.0;
        for k in 0..n - 1 {
            let v = (z - y[k + 1]) / lambda;
            let cur = self.split_cdf(v);
            let m0 = Self::cdf_diff(cur, prev);
            let hk = y[k + 1] - y[k];
            let mk = (u[k + 1] - u[k]) / hk;
            // x = z − y ∈ [x_{k+1}, x_k], the trace is u_k + m_k (x_k − x)
            let m1 = lambda * self.first_moment(v, prev_v);
            let xk = z - y[k];
            val += (u[k] + mk * xk) * m0 - mk * m1;
            slope_sum += mk * m0;
            prev = cur;
            prev_v = v;
        }
        // tails: y > y_N ⇔ v < v_N, y < y_0 ⇔ v > v_0
        let mass_right = Self::cdf_diff((false, 0.0), prev);
        let mass_left = Self::cdf_diff(first, (true, 0.0));
        val += func.right_limit * mass_right + func.left_limit * mass_left;
        if let Some(t) = func.tail {
            for (kappa, e) in t.terms() {
                if kappa == 0.0 {
                    continue;
                }
                let kr = self.tail_integral(z, lambda, y[n - 1], e);
                let kl = self.tail_integral(-z, lambda, -y[0], e);
                val += kappa * (kl - kr);
                let sr = self.tail_integral(z, lambda, y[n - 1], e + 1.0);
                let sl = self.tail_integral(-z, lambda, -y[0], e + 1.0);
                slope_sum += kappa * e * (sr + sl);
            }
        }
        (val, slope_sum)
    }
}

/// Value at (x, λ) of the λ^a-harmonic extension of the piecewise-linear trace.
pub fn extend_1d(func: &SampledFunction1D, gamma: f64, x: f64, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::Domain(format!("lambda must be positive, got {lambda}")));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::Domain(format!("gamma {gamma} outside (0,1)")));
    }
    Ok(PoissonKernel::new(gamma).extend_with_slope(func, x, lambda).0)
}

/// Decreasing λ sequence for the conormal limit.
pub const CALIBRATION_LAMBDAS: [f64; 3] = [1e-2, 5e-3, 2.5e-3];

/// −lim_{λ↓0} λ^a ∂_λ of the extension at node x, by Richardson extrapolation of
/// q(λ) = (ext − trace)/λ^{2γ} with correction exponents 2 − 2γ and 2.
pub fn conormal_derivative(func: &SampledFunction1D, kernel: &PoissonKernel, x: f64) -> f64 {
    let gamma = kernel.gamma();
    let g0 = func.value_at(x);
    let p1 = 2.0 - 2.0 * gamma;
    let p2 = 2.0;
    let mut a = nalgebra::Matrix3::<f64>::zeros();
    let mut rhs = nalgebra::Vector3::<f64>::zeros();
    for (r, &lam) in CALIBRATION_LAMBDAS.iter().enumerate() {
        let e = kernel.extend_with_slope(func, x, lam).0;
        rhs[r] = (e - g0) / lam.powf(2.0 * gamma);
        a[(r, 0)] = 1.0;
        a[(r, 1)] = lam.powf(p1);
        a[(r, 2)] = lam.powf(p2);
    }
    let coef = a.lu().solve(&rhs).expect("Richardson system is nonsingular");
    -2.0 * gamma * coef[0]
}

/// Ratio (−Δ)^γ g / (−lim λ^a u_λ) at each of the given nodes.
pub fn dn_ratios(func: &SampledFunction1D, gamma: f64, xs: &[f64]) -> Result<Vec<f64>> {
    let kernel = PoissonKernel::new(gamma);
    xs.iter()
        .map(|&x| {
            let lap = frac_lap_1d(func, gamma, x)?;
            let neu = conormal_derivative(func, &kernel, x);
            Ok(lap / neu)
        })
        .collect()
}

/// Closed-form Dirichlet-to-Neumann constant 2^{2γ−1}Γ(γ)/Γ(1−γ): the factor with
/// (−Δ)^γ u = −d_γ lim_{λ↓0} λᵃ ∂_λ u for the λᵃ-harmonic extension.
pub fn d_gamma_exact(gamma: f64) -> f64 {
    2f64.powf(2.0 * gamma - 1.0) * gamma_fn(gamma) / gamma_fn(1.0 - gamma)
}

/// Outcome of a d_γ calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub gamma: f64,
    pub d_gamma: f64,
    pub spread: f64,
    pub trace_means: Vec<(String, f64)>,
    pub samples: Vec<(String, f64, f64)>,
}

const CALIBRATION_HALF_WIDTH: f64 = 16.0;
const CALIBRATION_STEP: f64 = 2.5e-4;
const CALIBRATION_POINTS: [f64; 3] = [0.0, 0.2, 0.4];

/// Calibrates d_γ from a Gaussian and a rational trace and reports the relative spread.
pub fn calibrate_d_gamma(gamma: f64) -> Result<Calibration> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::Domain(format!("gamma {gamma} outside (0,1)")));
    }
    let n = (2.0 * CALIBRATION_HALF_WIDTH / CALIBRATION_STEP).round() as usize + 1;
    let traces: [(&str, fn(f64) -> f64); 2] = [
        ("gaussian", |x| (-x * x).exp()),
        ("rational", |x| {
            let w = 1.0 + x * x;
            1.0 / (w * w)
        }),
    ];
    let mut samples = Vec::new();
    let mut trace_means = Vec::new();
    for (name, g) in traces {
        let func = SampledFunction1D::from_fn(g, CALIBRATION_HALF_WIDTH, n, 0.0, 0.0)?;
        let xs: Vec<f64> = CALIBRATION_POINTS
            .iter()
            .map(|&x| func.nodes[locate(&func.nodes, x + 0.5 * CALIBRATION_STEP)])
            .collect();
        let ratios = dn_ratios(&func, gamma, &xs)?;
        trace_means.push((name.to_string(), ratios.iter().sum::<f64>() / ratios.len() as f64));
        for (x, r) in xs.iter().zip(&ratios) {
            samples.push((name.to_string(), *x, *r));
        }
    }
    let vals: Vec<f64> = samples.iter().map(|s| s.2).collect();
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let spread = (hi - lo) / mean.abs();
    if !(mean > 0.0) || !(spread <= 0.01) {
        return Err(Error::Calibration(format!("d_gamma = {mean:.6}, relative spread {spread:.3e} above 1%")));
    }
    Ok(Calibration { gamma, d_gamma: mean, spread, trace_means, samples })
}

/// JSON sidecar of calibrated constants keyed by γ.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCache {
    pub entries: BTreeMap<String, Calibration>,
}

impl CalibrationCache {
    pub fn key(gamma: f64) -> String {
        format!("{gamma:.12}")
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Ok(Self::default());
        }
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    /// Cached calibration for γ, computing and inserting it on a miss.
    pub fn get_or_calibrate(&mut self, gamma: f64) -> Result<Calibration> {
        let key = Self::key(gamma);
        if let Some(c) = self.entries.get(&key) {
            return Ok(c.clone());
        }
        let c = calibrate_d_gamma(gamma)?;
        self.entries.insert(key, c.clone());
        Ok(c)
    }
}
