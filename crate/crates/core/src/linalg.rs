//! Sparse symmetric systems on a masked grid, preconditioned conjugate gradients and a
//! λ-line block-Jacobi preconditioner.

use rayon::prelude::*;

use crate::grid::Grid3;

/// Stiffness matrix of the face-coefficient form restricted to a set of unknown nodes.
/// Nodes outside the set but inside the grid act as Dirichlet data.
#[derive(Debug, Clone)]
pub struct Stiffness {
    /// grid node of each unknown
    pub nodes: Vec<usize>,
    /// unknown index of each grid node, or u32::MAX
    pub map: Vec<u32>,
    /// Σ of face coefficients at each unknown
    pub diag: Vec<f64>,
    /// up to six (neighbor unknown, coefficient) pairs per unknown; Dirichlet neighbors are
    /// stored with unknown index u32::MAX and their grid node in `dirichlet`
    nbr: Vec<[(u32, f64); 6]>,
    count: Vec<u8>,
    /// (unknown, grid node, coefficient) couplings to Dirichlet nodes
    dirichlet: Vec<(u32, u32, f64)>,
    /// for each unknown, the unknown directly above in λ (if any) and its coefficient
    pub up: Vec<(u32, f64)>,
}

pub const NONE: u32 = u32::MAX;

impl Stiffness {
    pub fn new(grid: &Grid3, is_unknown: impl Fn(usize, usize, usize) -> bool) -> Self {
        let n = grid.n_s();
        let nl = grid.n_lambda();
        let mut map = vec![NONE; grid.len()];
        let mut nodes = Vec::new();
        // λ-major order keeps each λ line strided but deterministic
        for k in 0..nl {
            for j in 0..n {
                for i in 0..n {
                    if is_unknown(i, j, k) {
                        let p = grid.idx(i, j, k);
                        map[p] = nodes.len() as u32;
                        nodes.push(p);
                    }
                }
            }
        }
        let nu = nodes.len();
        let mut diag = vec![0.0; nu];
        let mut nbr = vec![[(NONE, 0.0); 6]; nu];
        let mut count = vec![0u8; nu];
        let mut dirichlet = Vec::new();
        let mut up = vec![(NONE, 0.0); nu];
        for (r, &p) in nodes.iter().enumerate() {
            let (i, j, k) = grid.coords(p);
            let mut faces: [(usize, f64); 6] = [(usize::MAX, 0.0); 6];
            let mut nf = 0;
            let mut push = |q: usize, c: f64| {
                faces[nf] = (q, c);
                nf += 1;
            };
            if i > 0 {
                push(grid.idx(i - 1, j, k), grid.cs(i - 1, j, k));
            }
            if i + 1 < n {
                push(grid.idx(i + 1, j, k), grid.cs(i, j, k));
            }
            if j > 0 {
                push(grid.idx(i, j - 1, k), grid.ct(i, j - 1, k));
            }
            if j + 1 < n {
                push(grid.idx(i, j + 1, k), grid.ct(i, j, k));
            }
            if k > 0 {
                push(grid.idx(i, j, k - 1), grid.cl(i, j, k - 1));
            }
            if k + 1 < nl {
                push(grid.idx(i, j, k + 1), grid.cl(i, j, k));
            }
            for &(q, c) in &faces[..nf] {
                diag[r] += c;
                let mq = map[q];
                if mq == NONE {
                    dirichlet.push((r as u32, q as u32, c));
                } else {
                    nbr[r][count[r] as usize] = (mq, c);
                    count[r] += 1;
                    if q == p + n * n {
                        up[r] = (mq, c);
                    }
                }
            }
        }
        Self { nodes, map, diag, nbr, count, dirichlet, up }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// y = (A + diag(extra)) x, where A is the stiffness restricted to the unknowns.
    pub fn apply(&self, x: &[f64], extra: Option<&[f64]>, y: &mut [f64]) {
        y.par_iter_mut().enumerate().for_each(|(r, yr)| {
            let mut v = self.diag[r] * x[r];
            if let Some(e) = extra {
                v += e[r] * x[r];
            }
            for &(q, c) in &self.nbr[r][..self.count[r] as usize] {
                v -= c * x[q as usize];
            }
            *yr = v;
        });
    }

    /// Σ over Dirichlet neighbors of c·g(node), per unknown.
    pub fn dirichlet_rhs(&self, g: &[f64]) -> Vec<f64> {
        let mut b = vec![0.0; self.len()];
        for &(r, q, c) in &self.dirichlet {
            b[r as usize] += c * g[q as usize];
        }
        b
    }

    /// Scatters unknown values into a full grid field.
    pub fn scatter(&self, x: &[f64], full: &mut [f64]) {
        for (r, &p) in self.nodes.iter().enumerate() {
            full[p] = x[r];
        }
    }

    pub fn gather(&self, full: &[f64]) -> Vec<f64> {
        self.nodes.iter().map(|&p| full[p]).collect()
    }
}

/// Block-Jacobi preconditioner whose blocks are the tridiagonal λ-lines of A + diag(extra).
#[derive(Debug, Clone)]
pub struct LinePreconditioner {
    lines: Vec<Vec<u32>>,
    /// Thomas factors per line: modified diagonal and sub-diagonal multipliers
    dinv: Vec<Vec<f64>>,
    off: Vec<Vec<f64>>,
}

impl LinePreconditioner {
    pub fn new(a: &Stiffness, extra: Option<&[f64]>) -> Self {
        let nu = a.len();
        let mut has_below = vec![false; nu];
        for &(q, _) in &a.up {
            if q != NONE {
                has_below[q as usize] = true;
            }
        }
        let mut lines = Vec::new();
        for start in 0..nu {
            if has_below[start] {
                continue;
            }
            let mut line = vec![start as u32];
            let mut cur = start;
            while a.up[cur].0 != NONE {
                cur = a.up[cur].0 as usize;
                line.push(cur as u32);
            }
            lines.push(line);
        }
        let mut dinv = Vec::with_capacity(lines.len());
        let mut off = Vec::with_capacity(lines.len());
        for line in &lines {
            let len = line.len();
            let mut d = vec![0.0; len];
            let mut o = vec![0.0; len];
            for (t, &r) in line.iter().enumerate() {
                let r = r as usize;
                let mut diag = a.diag[r] + extra.map_or(0.0, |e| e[r]);
                if t > 0 {
                    let prev = line[t - 1] as usize;
                    let c = a.up[prev].1;
                    // eliminate the coupling to the node below
                    diag -= c * c * d[t - 1];
                    o[t] = c;
                }
                d[t] = 1.0 / diag;
            }
            dinv.push(d);
            off.push(o);
        }
        Self { lines, dinv, off }
    }

    pub fn apply(&self, r: &[f64], z: &mut [f64]) {
        // lines are disjoint; solve each tridiagonal block independently
        let out: Vec<Vec<f64>> = self
            .lines
            .par_iter()
            .zip(self.dinv.par_iter().zip(self.off.par_iter()))
            .map(|(line, (d, o))| {
                let len = line.len();
                let mut y = vec![0.0; len];
                for t in 0..len {
                    let mut v = r[line[t] as usize];
                    if t > 0 {
                        v += o[t] * y[t - 1];
                    }
                    y[t] = v * d[t];
                }
                for t in (0..len - 1).rev() {
                    y[t] += d[t] * o[t + 1] * y[t + 1];
                }
                y
            })
            .collect();
        for (line, y) in self.lines.iter().zip(out) {
            for (t, &r) in line.iter().enumerate() {
                z[r as usize] = y[t];
            }
        }
    }
}

/// Outcome of a conjugate-gradient solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgInfo {
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
    /// set when a direction of nonpositive curvature was met
    pub indefinite: bool,
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    // fixed summation order for reproducibility
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// max_i |r_i| / D_i: the residual measured row by row in the units of the solution.
fn scaled_max(r: &[f64], dinv: &[f64]) -> f64 {
    r.iter().zip(dinv).map(|(v, d)| (v * d).abs()).fold(0.0, f64::max)
}

/// Preconditioned CG for (A + diag(extra)) x = b, starting from the given x. Convergence is
/// judged by the diagonally scaled max norm of the residual relative to that of b, so rows
/// with tiny cell measures near the axes are held to the same standard as the rest.
pub fn pcg(
    a: &Stiffness,
    extra: Option<&[f64]>,
    pre: &LinePreconditioner,
    b: &[f64],
    x: &mut [f64],
    rtol: f64,
    max_iter: usize,
) -> CgInfo {
    let n = b.len();
    let dinv: Vec<f64> = (0..n)
        .map(|i| 1.0 / (a.diag[i] + extra.map_or(0.0, |e| e[i])).abs().max(1e-300))
        .collect();
    let mut r = vec![0.0; n];
    a.apply(x, extra, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let bnorm = scaled_max(b, &dinv).max(1e-300);
    let mut rel = scaled_max(&r, &dinv) / bnorm;
    if rel <= rtol {
        return CgInfo { iterations: 0, relative_residual: rel, converged: true, indefinite: false };
    }
    let mut z = vec![0.0; n];
    pre.apply(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut q = vec![0.0; n];
    for it in 1..=max_iter {
        a.apply(&p, extra, &mut q);
        let pq = dot(&p, &q);
        if !(pq > 0.0) {
            return CgInfo { iterations: it, relative_residual: rel, converged: false, indefinite: true };
        }
        let alpha = rz / pq;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        rel = scaled_max(&r, &dinv) / bnorm;
        if rel <= rtol {
            return CgInfo { iterations: it, relative_residual: rel, converged: true, indefinite: false };
        }
        pre.apply(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    CgInfo { iterations: max_iter, relative_residual: rel, converged: false, indefinite: false }
}
