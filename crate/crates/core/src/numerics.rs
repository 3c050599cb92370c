//! Small numerical building blocks shared by the solvers.

use std::f64::consts::PI;

/// Gauss–Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut xs = vec![0.0; n];
    let mut ws = vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        xs[i] = -x;
        xs[n - 1 - i] = x;
        ws[i] = w;
        ws[n - 1 - i] = w;
    }
    (xs, ws)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// (b^p − a^p)/p for a, b > 0, continuous through p = 0 where it equals ln(b/a).
pub fn powdiff(b: f64, a: f64, p: f64) -> f64 {
    let l = (b / a).ln();
    let q = p * l;
    if q.abs() < 1e-300 {
        return l;
    }
    a.powf(p) * q.exp_m1() / p
}

/// Fritsch–Carlson monotone cubic Hermite interpolant.
#[derive(Debug, Clone)]
pub struct MonotoneCubic {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl MonotoneCubic {
    pub fn new(x: &[f64], y: &[f64]) -> Self {
        let n = x.len();
        assert!(n >= 2 && y.len() == n);
        let delta: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / (x[i + 1] - x[i])).collect();
        let mut d = vec![0.0; n];
        d[0] = delta[0];
        d[n - 1] = delta[n - 2];
        for i in 1..n - 1 {
            if delta[i - 1] * delta[i] <= 0.0 {
                d[i] = 0.0;
            } else {
                let h0 = x[i] - x[i - 1];
                let h1 = x[i + 1] - x[i];
                let w1 = 2.0 * h1 + h0;
                let w2 = h1 + 2.0 * h0;
                d[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
            }
        }
        for i in 0..n - 1 {
            if delta[i] == 0.0 {
                d[i] = 0.0;
                d[i + 1] = 0.0;
                continue;
            }
            let al = d[i] / delta[i];
            let be = d[i + 1] / delta[i];
            let r = al * al + be * be;
            if r > 9.0 {
                let tau = 3.0 / r.sqrt();
                d[i] = tau * al * delta[i];
                d[i + 1] = tau * be * delta[i];
            }
        }
        Self { x: x.to_vec(), y: y.to_vec(), d }
    }

    /// Interpolates inside [x_0, x_{n-1}]; outside it the end values are held.
    pub fn eval(&self, xq: f64) -> f64 {
        let n = self.x.len();
        if xq <= self.x[0] {
            return self.y[0];
        }
        if xq >= self.x[n - 1] {
            return self.y[n - 1];
        }
        let i = locate(&self.x, xq);
        let h = self.x[i + 1] - self.x[i];
        let t = (xq - self.x[i]) / h;
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * self.y[i] + h10 * h * self.d[i] + h01 * self.y[i + 1] + h11 * h * self.d[i + 1]
    }
}

/// Index i with x[i] <= xq < x[i+1], clamped to the valid range.
pub fn locate(x: &[f64], xq: f64) -> usize {
    let n = x.len();
    match x.binary_search_by(|v| v.partial_cmp(&xq).unwrap_or(std::cmp::Ordering::Less)) {
        Ok(i) => i.min(n - 2),
        Err(i) => i.saturating_sub(1).min(n - 2),
    }
}

/// Fourth-order first derivative on a uniform grid. `even_left` reflects the data evenly
/// across index 0 (a Neumann symmetry axis); otherwise one-sided stencils are used at both ends.
pub fn d1_uniform(v: &[f64], h: f64, even_left: bool) -> Vec<f64> {
    let n = v.len();
    assert!(n >= 5);
    let at = |i: isize| -> f64 {
        if i < 0 {
            v[(-i) as usize]
        } else {
            v[i as usize]
        }
    };
    let mut out = vec![0.0; n];
    for (i, o) in out.iter_mut().enumerate() {
        let ii = i as isize;
        *o = if i >= 2 && i + 2 < n || (even_left && i < 2) {
            (-at(ii + 2) + 8.0 * at(ii + 1) - 8.0 * at(ii - 1) + at(ii - 2)) / (12.0 * h)
        } else if i == 0 {
            (-25.0 * v[0] + 48.0 * v[1] - 36.0 * v[2] + 16.0 * v[3] - 3.0 * v[4]) / (12.0 * h)
        } else if i == 1 {
            (-3.0 * v[0] - 10.0 * v[1] + 18.0 * v[2] - 6.0 * v[3] + v[4]) / (12.0 * h)
        } else if i == n - 2 {
            (3.0 * v[n - 1] + 10.0 * v[n - 2] - 18.0 * v[n - 3] + 6.0 * v[n - 4] - v[n - 5]) / (12.0 * h)
        } else {
            (25.0 * v[n - 1] - 48.0 * v[n - 2] + 36.0 * v[n - 3] - 16.0 * v[n - 4] + 3.0 * v[n - 5])
                / (12.0 * h)
        };
    }
    out
}

/// Fourth-order second derivative on a uniform grid with one-sided stencils at the ends.
pub fn d2_uniform(v: &[f64], h: f64) -> Vec<f64> {
    let n = v.len();
    assert!(n >= 6);
    let h2 = 12.0 * h * h;
    let mut out = vec![0.0; n];
    for i in 2..n - 2 {
        out[i] = (-v[i + 2] + 16.0 * v[i + 1] - 30.0 * v[i] + 16.0 * v[i - 1] - v[i - 2]) / h2;
    }
    let left = |w: &dyn Fn(usize) -> f64| -> (f64, f64) {
        let a = (45.0 * w(0) - 154.0 * w(1) + 214.0 * w(2) - 156.0 * w(3) + 61.0 * w(4) - 10.0 * w(5)) / h2;
        let b = (10.0 * w(0) - 15.0 * w(1) - 4.0 * w(2) + 14.0 * w(3) - 6.0 * w(4) + w(5)) / h2;
        (a, b)
    };
    let (a, b) = left(&|k| v[k]);
    out[0] = a;
    out[1] = b;
    let (a, b) = left(&|k| v[n - 1 - k]);
    out[n - 1] = a;
    out[n - 2] = b;
    out
}

/// Least-squares slope of y against x.
pub fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}
