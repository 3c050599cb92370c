//! Tensor-product (s, t, λ) grid with the reduced measure s^{m−1} t^{m−1} λ^a.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::ProblemParams;

/// User-facing description of a grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Extent S of the s and t axes.
    pub s_max: f64,
    /// Extent Λ of the λ axis.
    pub lambda_max: f64,
    /// Number of nodes along s (and t).
    pub n_s: usize,
    /// Number of nodes along λ.
    pub n_lambda: usize,
    /// λ grading exponent; `None` selects 2/(1+a).
    pub grading: Option<f64>,
}

impl GridSpec {
    pub fn new(s_max: f64, lambda_max: f64, n_s: usize, n_lambda: usize) -> Self {
        Self { s_max, lambda_max, n_s, n_lambda, grading: None }
    }
}

/// Nodes, dual-cell measures and face coefficients of the finite-volume scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid3 {
    pub spec: GridSpec,
    pub m: usize,
    pub a: f64,
    pub grading: f64,
    pub h: f64,
    pub s: Vec<f64>,
    pub lambda: Vec<f64>,
    /// ∫ s^{m−1} ds over the dual cell of each s node (same for t).
    pub scell: Vec<f64>,
    /// ∫ λ^a dλ over the dual cell of each λ node.
    pub lcell: Vec<f64>,
    /// s_{i+1/2}^{m−1}/h for the face between nodes i and i+1.
    pub sface: Vec<f64>,
    /// (1−a)/(λ_{k+1}^{1−a} − λ_k^{1−a}) for the face between λ nodes k and k+1.
    pub lface: Vec<f64>,
}

fn power_integral(lo: f64, hi: f64, p: f64) -> f64 {
    // ∫_lo^hi x^{p−1} dx
    (hi.powf(p) - lo.powf(p)) / p
}

impl Grid3 {
    pub fn new(spec: GridSpec, params: &ProblemParams) -> Result<Self> {
        if spec.n_s < 6 || spec.n_lambda < 4 {
            return Err(Error::Parameter("grid needs n_s >= 6 and n_lambda >= 4".into()));
        }
        if !(spec.s_max > 0.0 && spec.lambda_max > 0.0) {
            return Err(Error::Parameter("grid extents must be positive".into()));
        }
        let a = params.a;
        let m = params.m;
        let grading = spec.grading.unwrap_or(2.0 / (1.0 + a));
        if !(grading >= 1.0) {
            return Err(Error::Parameter(format!("grading exponent {grading} must be >= 1")));
        }
        let n = spec.n_s;
        let h = spec.s_max / (n - 1) as f64;
        let s: Vec<f64> = (0..n).map(|i| i as f64 * h).collect();
        let nl = spec.n_lambda;
        let lambda: Vec<f64> = (0..nl)
            .map(|k| spec.lambda_max * (k as f64 / (nl - 1) as f64).powf(grading))
            .collect();
        let mf = m as f64;
        let scell = (0..n)
            .map(|i| {
                let lo = (s[i] - 0.5 * h).max(0.0);
                let hi = (s[i] + 0.5 * h).min(spec.s_max);
                power_integral(lo, hi, mf)
            })
            .collect();
        let sface = (0..n - 1).map(|i| (s[i] + 0.5 * h).powi(m as i32 - 1) / h).collect();
        let lcell = (0..nl)
            .map(|k| {
                let lo = if k == 0 { 0.0 } else { 0.5 * (lambda[k - 1] + lambda[k]) };
                let hi = if k + 1 == nl { lambda[k] } else { 0.5 * (lambda[k] + lambda[k + 1]) };
                power_integral(lo, hi, 1.0 + a)
            })
            .collect();
        let lface = (0..nl - 1)
            .map(|k| 1.0 / power_integral(lambda[k], lambda[k + 1], 1.0 - a))
            .collect();
        Ok(Self { spec, m, a, grading, h, s, lambda, scell, lcell, sface, lface })
    }

    pub fn n_s(&self) -> usize {
        self.s.len()
    }

    pub fn n_lambda(&self) -> usize {
        self.lambda.len()
    }

    pub fn len(&self) -> usize {
        self.n_s() * self.n_s() * self.n_lambda()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Linear index; s fastest, then t, then λ.
    #[inline]
    pub fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        let n = self.s.len();
        i + n * (j + n * k)
    }

    #[inline]
    pub fn coords(&self, p: usize) -> (usize, usize, usize) {
        let n = self.s.len();
        (p % n, (p / n) % n, p / (n * n))
    }

    /// Dual-cell measure of node (i, j, k).
    #[inline]
    pub fn mass(&self, i: usize, j: usize, k: usize) -> f64 {
        self.scell[i] * self.scell[j] * self.lcell[k]
    }

    /// Horizontal weight of a bottom node.
    #[inline]
    pub fn bottom_weight(&self, i: usize, j: usize) -> f64 {
        self.scell[i] * self.scell[j]
    }

    /// Face coefficient between (i,j,k) and (i+1,j,k).
    #[inline]
    pub fn cs(&self, i: usize, j: usize, k: usize) -> f64 {
        self.sface[i] * self.scell[j] * self.lcell[k]
    }

    /// Face coefficient between (i,j,k) and (i,j+1,k).
    #[inline]
    pub fn ct(&self, i: usize, j: usize, k: usize) -> f64 {
        self.scell[i] * self.sface[j] * self.lcell[k]
    }

    /// Face coefficient between (i,j,k) and (i,j,k+1).
    #[inline]
    pub fn cl(&self, i: usize, j: usize, k: usize) -> f64 {
        self.scell[i] * self.scell[j] * self.lface[k]
    }

    /// The same spec on a grid with `factor` times as many cells in every direction.
    pub fn refined_spec(&self, factor: usize) -> GridSpec {
        GridSpec {
            n_s: (self.n_s() - 1) * factor + 1,
            n_lambda: (self.n_lambda() - 1) * factor + 1,
            grading: Some(self.grading),
            ..self.spec
        }
    }

    /// Calls `f(p, q, c)` once for every face between nodes p < q with coefficient c.
    pub fn for_each_face(&self, mut f: impl FnMut(usize, usize, f64)) {
        let n = self.n_s();
        let nl = self.n_lambda();
        for k in 0..nl {
            for j in 0..n {
                for i in 0..n {
                    let p = self.idx(i, j, k);
                    if i + 1 < n {
                        f(p, p + 1, self.cs(i, j, k));
                    }
                    if j + 1 < n {
                        f(p, p + n, self.ct(i, j, k));
                    }
                    if k + 1 < nl {
                        f(p, p + n * n, self.cl(i, j, k));
                    }
                }
            }
        }
    }
}

/// Discrete λ^{−a}div(λ^a∇w) in reduced coordinates at every node: the conservative flux
/// sum divided by the dual-cell measure. Faces are absent on s = 0, t = 0 and λ = 0, which
/// builds in the reflection conditions; rows on the outer boundary carry a zero-flux closure.
pub fn apply_operator(grid: &Grid3, w: &[f64]) -> Vec<f64> {
    assert_eq!(w.len(), grid.len());
    let mut acc = vec![0.0; grid.len()];
    grid.for_each_face(|p, q, c| {
        let flux = c * (w[q] - w[p]);
        acc[p] += flux;
        acc[q] -= flux;
    });
    for (p, v) in acc.iter_mut().enumerate() {
        let (i, j, k) = grid.coords(p);
        *v /= grid.mass(i, j, k);
    }
    acc
}

/// ⟨v, w⟩ weighted by the dual-cell measures.
pub fn weighted_dot(grid: &Grid3, v: &[f64], w: &[f64]) -> f64 {
    let mut s = 0.0;
    for p in 0..grid.len() {
        let (i, j, k) = grid.coords(p);
        s += grid.mass(i, j, k) * v[p] * w[p];
    }
    s
}
