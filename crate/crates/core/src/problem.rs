//! Problem parameters, doubly radial coordinates and bistable nonlinearities.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::gauss_legendre;

/// Half-dimension, fractional power, extension exponent and Dirichlet-to-Neumann constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemParams {
    pub m: usize,
    pub gamma: f64,
    pub a: f64,
    pub d_gamma: f64,
}

impl ProblemParams {
    pub fn new(m: usize, gamma: f64, d_gamma: f64) -> Result<Self> {
        if m < 1 {
            return Err(Error::Parameter(format!("m must be >= 1, got {m}")));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::Parameter(format!("gamma must lie in (0,1), got {gamma}")));
        }
        if !(d_gamma > 0.0 && d_gamma.is_finite()) {
            return Err(Error::Parameter(format!("d_gamma must be positive, got {d_gamma}")));
        }
        Ok(Self { m, gamma, a: 1.0 - 2.0 * gamma, d_gamma })
    }

    /// Ambient dimension n = 2m.
    pub fn n(&self) -> usize {
        2 * self.m
    }
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Which quantity of a nonlinearity to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Order {
    F,
    FPrime,
    FSecond,
    G,
}

/// A bistable nonlinearity f with f', f'' and the potential G (G' = -f, G(±1) = 0).
#[derive(Clone)]
pub struct NonlinearityModel {
    name: String,
    f: ScalarFn,
    fprime: ScalarFn,
    fsecond: ScalarFn,
    g: ScalarFn,
}

impl fmt::Debug for NonlinearityModel {
    fn fmt(&self, fm: &mut fmt::Formatter<'_>) -> fmt::Result {
        fm.debug_struct("NonlinearityModel").field("name", &self.name).finish()
    }
}

impl NonlinearityModel {
    pub fn cubic() -> Self {
        Self {
            name: "cubic".into(),
            f: Arc::new(|u| u - u * u * u),
            fprime: Arc::new(|u| 1.0 - 3.0 * u * u),
            fsecond: Arc::new(|u| -6.0 * u),
            g: Arc::new(|u| {
                let w = 1.0 - u * u;
                0.25 * w * w
            }),
        }
    }

    /// f(u) = sin(πu)/π. At γ = 1/2 its layer is (2/π)·arctan(x).
    pub fn sine() -> Self {
        Self {
            name: "sine".into(),
            f: Arc::new(|u| (PI * u).sin() / PI),
            fprime: Arc::new(|u| (PI * u).cos()),
            fsecond: Arc::new(|u| -PI * (PI * u).sin()),
            g: Arc::new(|u| (1.0 + (PI * u).cos()) / (PI * PI)),
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "cubic" => Ok(Self::cubic()),
            "sine" => Ok(Self::sine()),
            other => Err(Error::Parameter(format!("unknown nonlinearity model '{other}'"))),
        }
    }

    /// Builds a model from an (f, f', f'') triple. G is obtained by quadrature and the
    /// bistable invariants are spot-checked on a 1001-point grid.
    pub fn custom<F, F1, F2>(name: &str, f: F, fprime: F1, fsecond: F2) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
        F1: Fn(f64) -> f64 + Send + Sync + 'static,
        F2: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let f: ScalarFn = Arc::new(f);
        let fq = f.clone();
        let (xs, ws) = gauss_legendre(32);
        let g: ScalarFn = Arc::new(move |u: f64| {
            // G(u) = ∫_u^1 f(v) dv
            let half = 0.5 * (1.0 - u);
            let mid = 0.5 * (1.0 + u);
            xs.iter().zip(&ws).map(|(x, w)| w * fq(mid + half * x)).sum::<f64>() * half
        });
        let model = Self {
            name: name.to_string(),
            f,
            fprime: Arc::new(fprime),
            fsecond: Arc::new(fsecond),
            g,
        };
        model.spot_check()?;
        Ok(model)
    }

    fn spot_check(&self) -> Result<()> {
        let scale = (0..=1000)
            .map(|i| (self.f)(-1.0 + 2.0 * i as f64 / 1000.0).abs())
            .fold(0.0, f64::max)
            .max(1.0);
        let tol = 1e-10 * scale;
        if (self.f)(0.0).abs() > tol || (self.f)(1.0).abs() > tol {
            return Err(Error::Parameter(format!("{}: f(0) and f(1) must vanish", self.name)));
        }
        for i in 0..=1000 {
            let v = -1.0 + 2.0 * i as f64 / 1000.0;
            if ((self.f)(-v) + (self.f)(v)).abs() > tol {
                return Err(Error::Parameter(format!("{}: f is not odd at v = {v}", self.name)));
            }
            if v > 0.0 && v < 1.0 && (self.fsecond)(v) >= 0.0 {
                return Err(Error::Parameter(format!("{}: f'' must be negative at v = {v}", self.name)));
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    #[inline]
    pub fn f(&self, u: f64) -> f64 {
        (self.f)(u)
    }

    #[inline]
    pub fn fprime(&self, u: f64) -> f64 {
        (self.fprime)(u)
    }

    #[inline]
    pub fn fsecond(&self, u: f64) -> f64 {
        (self.fsecond)(u)
    }

    #[inline]
    pub fn potential(&self, u: f64) -> f64 {
        (self.g)(u)
    }
}

/// Evaluates f, f', f'' or G at v ∈ [-1, 1].
pub fn eval_nonlinearity(model: &NonlinearityModel, v: f64, order: Order) -> Result<f64> {
    if !(v.abs() <= 1.0) {
        return Err(Error::Domain(format!("nonlinearity argument {v} outside [-1, 1]")));
    }
    Ok(match order {
        Order::F => model.f(v),
        Order::FPrime => model.fprime(v),
        Order::FSecond => model.fsecond(v),
        Order::G => model.potential(v),
    })
}

/// A point in reduced coordinates: s = |x'|, t = |x''|, and the extension variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoublyRadialPoint {
    pub s: f64,
    pub t: f64,
    pub lambda: f64,
}

impl DoublyRadialPoint {
    pub fn new(s: f64, t: f64, lambda: f64) -> Self {
        Self { s, t, lambda }
    }

    pub fn y(&self) -> f64 {
        (self.s + self.t) * FRAC_1_SQRT_2
    }

    /// Signed distance to the Simons cone, positive on the side s > t.
    pub fn z(&self) -> f64 {
        (self.s - self.t) * FRAC_1_SQRT_2
    }
}

pub fn to_doubly_radial(x: &[f64], m: usize, lambda: f64) -> Result<DoublyRadialPoint> {
    if x.len() != 2 * m {
        return Err(Error::Dimension { expected: 2 * m, got: x.len() });
    }
    let norm = |v: &[f64]| v.iter().map(|c| c * c).sum::<f64>().sqrt();
    Ok(DoublyRadialPoint::new(norm(&x[..m]), norm(&x[m..]), lambda))
}

pub fn dist_to_cone(p: &DoublyRadialPoint) -> f64 {
    (p.s - p.t).abs() * FRAC_1_SQRT_2
}

/// The closed set of b > 0 with b² − (m−2)b + (m−1) ≤ 0, if any.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BInterval {
    Feasible { low: f64, high: f64 },
    Infeasible,
}

impl BInterval {
    pub fn contains(&self, b: f64) -> bool {
        match *self {
            BInterval::Feasible { low, high } => b >= low && b <= high,
            BInterval::Infeasible => false,
        }
    }

    pub fn midpoint(&self) -> Option<f64> {
        match *self {
            BInterval::Feasible { low, high } => Some(0.5 * (low + high)),
            BInterval::Infeasible => None,
        }
    }
}

pub fn admissible_b_interval(m: usize) -> BInterval {
    let mf = m as f64;
    let disc = mf * mf - 8.0 * mf + 8.0;
    if disc < 0.0 {
        return BInterval::Infeasible;
    }
    let r = disc.sqrt();
    let low = 0.5 * (mf - 2.0 - r);
    let high = 0.5 * (mf - 2.0 + r);
    if high <= 0.0 {
        return BInterval::Infeasible;
    }
    BInterval::Feasible { low: low.max(0.0), high }
}

/// b(b − m + 2) + (m − 1), which must be ≤ 0 for φ to be a supersolution.
pub fn b_feasibility_coefficient(m: usize, b: f64) -> f64 {
    let mf = m as f64;
    b * (b - mf + 2.0) + mf - 1.0
}
