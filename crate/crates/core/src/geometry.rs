//! Weighted measures of half-balls cut by simple sets, the half-ball ratio at the Simons
//! cone, and the radius R_a(Ω, Γ, θ) of extension-narrow pairs, all by seeded Monte Carlo.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta;
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};

/// Membership predicate on points (x, λ) of the upper half-space ℝⁿ × (0, ∞).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SetDescriptor {
    /// Everything.
    All,
    /// Nothing.
    Empty,
    /// {0 < λ < ε}.
    Slab { eps: f64 },
    /// {λ > slope·(|x| − ε)}: the region above two lines through (±ε, 0).
    Wedge { eps: f64, slope: f64 },
    /// N_ε = {t < s < t + ε} with s = |x′|, t = |x″|, x ∈ ℝ^{2m}; its points lie within ε/√2
    /// of the cone.
    ConeNeighborhood { m: usize, eps: f64 },
    /// O × (0, ∞).
    ConeSide { m: usize },
    /// Axis-aligned box on (x, λ); `lo` and `hi` have n + 1 entries, λ last.
    Box { lo: Vec<f64>, hi: Vec<f64> },
    /// {ν·x < c}: the complement of a closed half-space in x.
    HalfSpaceComplement { normal: Vec<f64>, offset: f64 },
}

fn split_norms(x: &[f64], m: usize) -> (f64, f64) {
    let a = x[..m].iter().map(|v| v * v).sum::<f64>().sqrt();
    let b = x[m..2 * m].iter().map(|v| v * v).sum::<f64>().sqrt();
    (a, b)
}

impl SetDescriptor {
    /// Dimension n of x forced by the descriptor, if any.
    pub fn dim(&self) -> Option<usize> {
        match self {
            SetDescriptor::ConeNeighborhood { m, .. } | SetDescriptor::ConeSide { m } => Some(2 * m),
            SetDescriptor::Box { lo, .. } => Some(lo.len().saturating_sub(1)),
            SetDescriptor::HalfSpaceComplement { normal, .. } => Some(normal.len()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Parameter(msg));
        match self {
            SetDescriptor::Slab { eps } | SetDescriptor::Wedge { eps, .. } if !(*eps > 0.0) => {
                bad(format!("eps must be positive, got {eps}"))
            }
            SetDescriptor::ConeNeighborhood { m, eps } if *m == 0 || !(*eps > 0.0) => {
                bad(format!("cone neighborhood needs m >= 1 and eps > 0, got m = {m}, eps = {eps}"))
            }
            SetDescriptor::ConeSide { m } if *m == 0 => bad("cone side needs m >= 1".into()),
            SetDescriptor::Box { lo, hi } if lo.len() != hi.len() || lo.len() < 2 => {
                bad("box bounds need matching lengths n + 1 >= 2".into())
            }
            SetDescriptor::HalfSpaceComplement { normal, .. } if normal.is_empty() => {
                bad("half-space normal is empty".into())
            }
            _ => Ok(()),
        }
    }

    pub fn contains(&self, x: &[f64], lambda: f64) -> bool {
        match self {
            SetDescriptor::All => true,
            SetDescriptor::Empty => false,
            SetDescriptor::Slab { eps } => lambda > 0.0 && lambda < *eps,
            SetDescriptor::Wedge { eps, slope } => {
                let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                lambda > slope * (r - eps)
            }
            SetDescriptor::ConeNeighborhood { m, eps } => {
                let (s, t) = split_norms(x, *m);
                s > t && s - t < *eps
            }
            SetDescriptor::ConeSide { m } => {
                let (s, t) = split_norms(x, *m);
                s > t
            }
            SetDescriptor::Box { lo, hi } => {
                let n = x.len();
                x.iter().enumerate().all(|(i, &v)| v > lo[i] && v < hi[i]) && lambda > lo[n] && lambda < hi[n]
            }
            SetDescriptor::HalfSpaceComplement { normal, offset } => {
                normal.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() < *offset
            }
        }
    }

    /// Bounds of the trace on {λ = 0} used to sample probe points, clipped to [−w, w]ⁿ.
    fn trace_window(&self, n: usize, w: f64) -> (Vec<f64>, Vec<f64>) {
        match self {
            SetDescriptor::Wedge { eps, .. } => (vec![-eps; n], vec![*eps; n]),
            SetDescriptor::Box { lo, hi } => (
                lo[..n].iter().map(|v| v.max(-w)).collect(),
                hi[..n].iter().map(|v| v.min(w)).collect(),
            ),
            _ => (vec![-w; n], vec![w; n]),
        }
    }
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

const CHUNKS: u64 = 64;

/// Volume of the unit ball in ℝⁿ.
pub fn unit_ball_volume(n: usize) -> f64 {
    let h = n as f64 / 2.0;
    std::f64::consts::PI.powf(h) / gamma(h + 1.0)
}

/// |B⁺_R|_a = ∫ λᵃ over the half-ball of radius R in ℝⁿ × (0, ∞).
pub fn half_ball_measure(n: usize, r: f64, a: f64) -> f64 {
    unit_ball_volume(n) * r.powf(n as f64 + 1.0 + a) * 0.5 * beta((1.0 + a) / 2.0, n as f64 / 2.0 + 1.0)
}

fn uniform_in_ball(rng: &mut ChaCha8Rng, n: usize, out: &mut [f64]) {
    let mut nrm = 0.0;
    for v in out.iter_mut() {
        let g: f64 = rng.sample(StandardNormal);
        *v = g;
        nrm += g * g;
    }
    let scale = rng.gen::<f64>().powf(1.0 / n as f64) / nrm.sqrt();
    out.iter_mut().for_each(|v| *v *= scale);
}

fn check_a(a: f64) -> Result<()> {
    if a > -1.0 && a < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("the weight lambda^a is not integrable for a = {a}; need -1 < a < 1")))
    }
}

/// Fraction estimator over chunked independent streams. `hit` receives a unit-ball x,
/// a λ-sample in (0, 1) with density ∝ λᵃ, and returns the integrand (0 or 1).
fn chunked_mean(
    n: usize,
    a: f64,
    samples: usize,
    seed: u64,
    hit: impl Fn(&[f64], f64) -> bool + Sync,
) -> (f64, f64) {
    let per = samples.div_ceil(CHUNKS as usize);
    let counts: Vec<(u64, u64)> = (0..CHUNKS)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c);
            let mut y = vec![0.0; n];
            let mut hits = 0u64;
            let mut total = 0u64;
            for _ in 0..per {
                uniform_in_ball(&mut rng, n, &mut y);
                let mu = rng.gen::<f64>().powf(1.0 / (1.0 + a));
                total += 1;
                if hit(&y, mu) {
                    hits += 1;
                }
            }
            (hits, total)
        })
        .collect();
    let (h, t) = counts.iter().fold((0u64, 0u64), |acc, c| (acc.0 + c.0, acc.1 + c.1));
    let p = h as f64 / t as f64;
    (p, (p * (1.0 - p) / t as f64).sqrt())
}

/// |region ∩ B⁺_R(x₀)|_a with x uniform in the n-ball and λ drawn with density ∝ λᵃ on (0, R).
pub fn weighted_measure(
    region: &SetDescriptor,
    x0: &[f64],
    r: f64,
    a: f64,
    samples: usize,
    seed: u64,
) -> Result<Estimate> {
    check_a(a)?;
    region.validate()?;
    if !(r > 0.0) {
        return Err(Error::Parameter(format!("radius must be positive, got {r}")));
    }
    if samples < 10_000 {
        return Err(Error::Parameter(format!("need at least 1e4 samples, got {samples}")));
    }
    let n = x0.len();
    if let Some(d) = region.dim() {
        if d != n {
            return Err(Error::Dimension { expected: d, got: n });
        }
    }
    let (p, se) = chunked_mean(n, a, samples, seed, |y, mu| {
        if y.iter().map(|v| v * v).sum::<f64>() + mu * mu >= 1.0 {
            return false;
        }
        let x: Vec<f64> = x0.iter().zip(y).map(|(c, v)| c + r * v).collect();
        region.contains(&x, r * mu)
    });
    // sampling box measure: |B_R| in x times ∫_0^R λᵃ
    let total = unit_ball_volume(n) * r.powi(n as i32) * r.powf(1.0 + a) / (1.0 + a);
    Ok(Estimate { value: total * p, stderr: total * se })
}

/// |B_r(x₀) ∩ O| / |B_r(x₀)| for x₀ on the Simons cone of ℝ^{2m}.
pub fn half_ball_cone_ratio(x0: &[f64], r: f64, samples: usize, seed: u64) -> Result<Estimate> {
    if x0.len() < 2 || x0.len() % 2 != 0 {
        return Err(Error::Parameter(format!("point must lie in R^(2m), got length {}", x0.len())));
    }
    if !(r > 0.0) {
        return Err(Error::Parameter(format!("radius must be positive, got {r}")));
    }
    let m = x0.len() / 2;
    let (s, t) = split_norms(x0, m);
    if (s - t).abs() > 1e-12 * s.max(1.0) {
        return Err(Error::Precondition(format!("point is off the cone: |x'| - |x''| = {:.3e}", s - t)));
    }
    Ok(ball_fraction(x0, r, samples, seed, |x| {
        let (s, t) = split_norms(x, m);
        s > t
    }))
}

/// Fraction of B_r(x₀) ⊂ ℝⁿ inside the given set, no λ direction.
pub fn ball_fraction(x0: &[f64], r: f64, samples: usize, seed: u64, inside: impl Fn(&[f64]) -> bool + Sync) -> Estimate {
    let n = x0.len();
    // λ is drawn but ignored; a = 0 keeps the streams identical to weighted_measure
    let (p, se) = chunked_mean(n, 0.0, samples, seed, |y, _| {
        let x: Vec<f64> = x0.iter().zip(y).map(|(c, v)| c + r * v).collect();
        inside(&x)
    });
    Estimate { value: p, stderr: se }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NarrowOptions {
    /// Dimension n of x; taken from the descriptors when they fix it.
    pub dim: Option<usize>,
    pub probe_points: usize,
    pub samples: usize,
    pub seed: u64,
    /// Probe points of unbounded traces are drawn from [−window, window]ⁿ.
    pub window: f64,
    pub bisection_steps: usize,
}

impl Default for NarrowOptions {
    fn default() -> Self {
        Self { dim: None, probe_points: 5, samples: 100_000, seed: 0, window: 1.0, bisection_steps: 12 }
    }
}

/// One radius of the scan: the minimum ratio over the probe points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub radius: f64,
    pub min_ratio: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NarrowRadius {
    /// Estimated R_a(Ω, Γ, θ); `f64::INFINITY` when no radius exists; NaN if unresolved.
    pub radius: f64,
    pub unresolved: bool,
    /// Extrapolated limit of the minimum ratio, when the scan ended below θ.
    pub limit_estimate: Option<f64>,
    pub rows: Vec<RatioRow>,
    pub probes: Vec<Vec<f64>>,
}

/// R_a(Ω, Γ, θ): the smallest R with |B⁺_R(x) \ Ω|_a ≥ θ |B⁺_R(x)|_a for all probe x ∈ Γ.
///
/// All radii reuse the same unit-ball samples scaled by R, so the minimum ratio is a
/// deterministic function of R and bisection between grid radii is meaningful. When no
/// grid radius qualifies, INFINITY is returned only if the ratio is decreasing at the end of
/// the grid or its Aitken-extrapolated limit stays below θ; otherwise the result is
/// flagged unresolved.
pub fn narrow_radius(
    omega: &SetDescriptor,
    gamma_set: &SetDescriptor,
    theta: f64,
    a: f64,
    r_grid: &[f64],
    opts: &NarrowOptions,
) -> Result<NarrowRadius> {
    check_a(a)?;
    omega.validate()?;
    gamma_set.validate()?;
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::Parameter(format!("theta must lie in (0, 1), got {theta}")));
    }
    if r_grid.is_empty() || r_grid.windows(2).any(|w| !(w[1] > w[0])) || !(r_grid[0] > 0.0) {
        return Err(Error::Parameter("radius grid must be positive and increasing".into()));
    }
    if opts.samples < 10_000 || opts.probe_points == 0 {
        return Err(Error::Parameter("need probe_points >= 1 and samples >= 1e4".into()));
    }
    let n = opts
        .dim
        .or(omega.dim())
        .or(gamma_set.dim())
        .ok_or_else(|| Error::Parameter("dimension of x is not fixed by the descriptors; set dim".into()))?;
    for d in [omega.dim(), gamma_set.dim()].into_iter().flatten() {
        if d != n {
            return Err(Error::Dimension { expected: n, got: d });
        }
    }

    let probes = sample_probes(gamma_set, n, opts)?;
    let denom = half_ball_measure(n, 1.0, a);
    let min_ratio = |r: f64| -> RatioRow {
        let mut worst = RatioRow { radius: r, min_ratio: f64::INFINITY, stderr: 0.0 };
        for (q, x0) in probes.iter().enumerate() {
            let (p, se) = chunked_mean(n, a, opts.samples, opts.seed.wrapping_add(1 + q as u64), |y, mu| {
                if y.iter().map(|v| v * v).sum::<f64>() + mu * mu >= 1.0 {
                    return false;
                }
                let x: Vec<f64> = x0.iter().zip(y).map(|(c, v)| c + r * v).collect();
                !omega.contains(&x, r * mu)
            });
            // scale-free: the sampling measure of the unit problem over |B⁺_1|_a
            let box_unit = unit_ball_volume(n) / (1.0 + a);
            let ratio = p * box_unit / denom;
            if ratio < worst.min_ratio {
                worst.min_ratio = ratio;
                worst.stderr = se * box_unit / denom;
            }
        }
        worst
    };

    let rows: Vec<RatioRow> = r_grid.iter().map(|&r| min_ratio(r)).collect();
    if let Some(first) = rows.iter().position(|row| row.min_ratio >= theta) {
        let mut hi = r_grid[first];
        if first > 0 {
            let mut lo = r_grid[first - 1];
            for _ in 0..opts.bisection_steps {
                let mid = 0.5 * (lo + hi);
                if min_ratio(mid).min_ratio >= theta {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
        }
        return Ok(NarrowRadius { radius: hi, unresolved: false, limit_estimate: None, rows, probes });
    }

    let k = rows.len();
    let decreasing = k >= 2 && rows[k - 1].min_ratio < rows[k - 2].min_ratio;
    let limit = if k >= 3 {
        let (r1, r2, r3) = (rows[k - 3].min_ratio, rows[k - 2].min_ratio, rows[k - 1].min_ratio);
        let d = (r3 - r2) - (r2 - r1);
        if d.abs() > 1e-14 {
            Some(r3 - (r3 - r2) * (r3 - r2) / d)
        } else {
            Some(r3)
        }
    } else {
        None
    };
    let noise = 3.0 * rows[k - 1].stderr;
    let infinite = decreasing || limit.is_some_and(|l| l + noise < theta);
    Ok(NarrowRadius {
        radius: if infinite { f64::INFINITY } else { f64::NAN },
        unresolved: !infinite,
        limit_estimate: limit,
        rows,
        probes,
    })
}

fn sample_probes(gamma_set: &SetDescriptor, n: usize, opts: &NarrowOptions) -> Result<Vec<Vec<f64>>> {
    let (lo, hi) = gamma_set.trace_window(n, opts.window);
    if lo.iter().zip(&hi).any(|(l, h)| !(h > l)) {
        return Err(Error::Parameter("the trace of the boundary set is empty in the sampling window".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut out = Vec::with_capacity(opts.probe_points);
    let mut x = vec![0.0; n];
    let mut tries = 0usize;
    while out.len() < opts.probe_points {
        tries += 1;
        if tries > 1_000_000 {
            return Err(Error::Degenerate("could not sample probe points from the boundary set".into()));
        }
        for i in 0..n {
            x[i] = lo[i] + (hi[i] - lo[i]) * rng.gen::<f64>();
        }
        // the trace on {λ = 0}, approached from above
        if gamma_set.contains(&x, 0.0) || gamma_set.contains(&x, 1e-300) {
            out.push(x.clone());
        }
    }
    Ok(out)
}
