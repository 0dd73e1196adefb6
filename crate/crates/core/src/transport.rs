//! Kantorovich-Rubinstein distance between particle clouds with the torus
//! distance as ground cost.
//!
//! [`kantorovich_d1`] solves the transport LP exactly with the
//! transportation simplex (a network simplex specialised to complete
//! bipartite graphs). [`sinkhorn_d1`] is the entropic approximation for
//! clouds above the exact solver's size cap.

use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

use crate::group::{torus_dist_projected, DEFAULT_TORUS_WINDOW};
use crate::measure::ParticleCloud;
use crate::{Error, Result};

/// Largest `rows × cols` accepted by the exact solver.
pub const DEFAULT_LP_CAP: usize = 500 * 500;

/// Optimal plan in sparse form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransportPlan {
    pub cost: f64,
    /// `(source atom, target atom, mass)` for every positive entry.
    pub entries: Vec<(usize, usize, f64)>,
    pub pivots: usize,
}

impl TransportPlan {
    pub fn row_sums(&self, rows: usize) -> Vec<f64> {
        let mut s = vec![0.0; rows];
        for &(i, _, f) in &self.entries {
            s[i] += f;
        }
        s
    }

    pub fn col_sums(&self, cols: usize) -> Vec<f64> {
        let mut s = vec![0.0; cols];
        for &(_, j, f) in &self.entries {
            s[j] += f;
        }
        s
    }
}

/// Row-major matrix of torus distances between the atoms of `a` and `b`.
pub fn cost_matrix(a: &ParticleCloud, b: &ParticleCloud) -> Vec<f64> {
    use rayon::prelude::*;
    a.points()
        .par_iter()
        .flat_map_iter(|p| {
            b.points()
                .iter()
                .map(move |q| torus_dist_projected(p, q, DEFAULT_TORUS_WINDOW))
        })
        .collect()
}

/// Exact `d₁(a, b)` and an optimal plan.
pub fn kantorovich_d1(a: &ParticleCloud, b: &ParticleCloud) -> Result<TransportPlan> {
    kantorovich_d1_with_cap(a, b, DEFAULT_LP_CAP)
}

pub fn kantorovich_d1_with_cap(
    a: &ParticleCloud,
    b: &ParticleCloud,
    cap: usize,
) -> Result<TransportPlan> {
    if a.len() * b.len() > cap {
        return Err(Error::TransportTooLarge {
            rows: a.len(),
            cols: b.len(),
            cap,
        });
    }
    let c = cost_matrix(a, b);
    transport_simplex(a.weights(), b.weights(), &c)
}

#[derive(Clone, Copy, Debug)]
struct Arc {
    row: usize,
    col: usize,
    flow: f64,
}

/// Balanced transportation problem `min Σ c_ij x_ij` subject to row sums
/// `supply` and column sums `demand`, for a dense row-major cost matrix.
///
/// Starts from the northwest-corner basis and pivots with block pricing.
/// The basis is a spanning tree on `rows + cols` nodes; potentials and the
/// tree orientation are rebuilt after each pivot.
pub fn transport_simplex(supply: &[f64], demand: &[f64], cost: &[f64]) -> Result<TransportPlan> {
    let m = supply.len();
    let n = demand.len();
    if m == 0 || n == 0 || cost.len() != m * n {
        return Err(Error::InvalidParameter(format!(
            "transport problem needs a {m}x{n} cost matrix, got {} entries",
            cost.len()
        )));
    }
    let ssum: f64 = supply.iter().sum();
    let dsum: f64 = demand.iter().sum();
    if (ssum - dsum).abs() > 1e-9 * ssum.max(1.0) {
        return Err(Error::InvalidParameter(format!(
            "unbalanced transport problem: {ssum} vs {dsum}"
        )));
    }

    // northwest corner
    let mut arcs: Vec<Arc> = Vec::with_capacity(m + n - 1);
    {
        let mut s = supply.to_vec();
        let mut d = demand.to_vec();
        let (mut i, mut j) = (0, 0);
        loop {
            let x = s[i].min(d[j]).max(0.0);
            arcs.push(Arc {
                row: i,
                col: j,
                flow: x,
            });
            s[i] -= x;
            d[j] -= x;
            if i == m - 1 && j == n - 1 {
                break;
            }
            if i == m - 1 {
                j += 1;
            } else if j == n - 1 || s[i] <= d[j] {
                i += 1;
            } else {
                j += 1;
            }
        }
    }
    let nodes = m + n;
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); nodes];
    for (id, a) in arcs.iter().enumerate() {
        adj[a.row].push(id);
        adj[m + a.col].push(id);
    }

    let cmax = cost.iter().fold(0.0f64, |acc, c| acc.max(c.abs()));
    let tol = 1e-12 * (1.0 + cmax);
    let block = ((m * n) as f64).sqrt().ceil() as usize;
    let block = block.max(nodes).min(m * n);
    let max_pivots = 50 * (m * n) + 10_000;

    let mut pot = vec![0.0; nodes];
    let mut parent_arc = vec![usize::MAX; nodes];
    let mut parent = vec![usize::MAX; nodes];
    let mut depth = vec![0usize; nodes];
    let mut queue = VecDeque::with_capacity(nodes);
    let mut cursor = 0usize;
    let mut pivots = 0usize;

    loop {
        // orient the tree from node 0 and compute u_i + v_j = c_ij
        parent[0] = usize::MAX;
        parent_arc[0] = usize::MAX;
        depth[0] = 0;
        pot[0] = 0.0;
        let mut seen = vec![false; nodes];
        seen[0] = true;
        queue.clear();
        queue.push_back(0);
        while let Some(v) = queue.pop_front() {
            for &id in &adj[v] {
                let a = arcs[id];
                let (r, c) = (a.row, m + a.col);
                let w = if v == r { c } else { r };
                if seen[w] {
                    continue;
                }
                seen[w] = true;
                parent[w] = v;
                parent_arc[w] = id;
                depth[w] = depth[v] + 1;
                let cij = cost[a.row * n + a.col];
                // rows carry u, columns carry v
                pot[w] = cij - pot[v];
                queue.push_back(w);
            }
        }

        // block pricing
        let mut best = (0.0, usize::MAX);
        let mut scanned = 0usize;
        while scanned < m * n {
            let end = (scanned + block).min(m * n);
            for _ in scanned..end {
                let i = cursor / n;
                let j = cursor % n;
                let rc = cost[cursor] - pot[i] - pot[m + j];
                if rc < best.0 {
                    best = (rc, cursor);
                }
                cursor += 1;
                if cursor == m * n {
                    cursor = 0;
                }
            }
            scanned = end;
            if best.0 < -tol {
                break;
            }
        }
        if best.0 >= -tol {
            break;
        }
        pivots += 1;
        if pivots > max_pivots {
            return Err(Error::PivotLimit(max_pivots));
        }
        let (ei, ej) = (best.1 / n, best.1 % n);

        // tree path from column node back to row node
        let mut a_side = Vec::new();
        let mut b_side = Vec::new();
        let (mut x, mut y) = (m + ej, ei);
        while depth[x] > depth[y] {
            a_side.push(parent_arc[x]);
            x = parent[x];
        }
        while depth[y] > depth[x] {
            b_side.push(parent_arc[y]);
            y = parent[y];
        }
        while x != y {
            a_side.push(parent_arc[x]);
            x = parent[x];
            b_side.push(parent_arc[y]);
            y = parent[y];
        }
        b_side.reverse();
        a_side.extend(b_side);
        let path = a_side;

        // entering arc gains θ; path arcs alternate -, +, -, ...
        let mut theta = f64::INFINITY;
        let mut leave = usize::MAX;
        for (pos, &id) in path.iter().enumerate().step_by(2) {
            let _ = pos;
            if arcs[id].flow < theta {
                theta = arcs[id].flow;
                leave = id;
            }
        }
        for (pos, &id) in path.iter().enumerate() {
            if pos % 2 == 0 {
                arcs[id].flow = (arcs[id].flow - theta).max(0.0);
            } else {
                arcs[id].flow += theta;
            }
        }
        let old = arcs[leave];
        adj[old.row].retain(|&e| e != leave);
        adj[m + old.col].retain(|&e| e != leave);
        arcs[leave] = Arc {
            row: ei,
            col: ej,
            flow: theta,
        };
        adj[ei].push(leave);
        adj[m + ej].push(leave);
    }

    let mut total = 0.0;
    let mut entries = Vec::new();
    for a in &arcs {
        if a.flow > 0.0 {
            total += a.flow * cost[a.row * n + a.col];
            entries.push((a.row, a.col, a.flow));
        }
    }
    entries.sort_by(|x, y| (x.0, x.1).cmp(&(y.0, y.1)));
    Ok(TransportPlan {
        cost: total,
        entries,
        pivots,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinkhornConfig {
    pub reg: f64,
    pub max_iter: usize,
    /// L1 marginal violation accepted before rounding.
    pub tol: f64,
    /// Factor applied to the regularisation between annealing stages.
    pub scaling: f64,
}

impl SinkhornConfig {
    pub fn new(reg: f64) -> Self {
        Self {
            reg,
            max_iter: 200_000,
            tol: 1e-6,
            scaling: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinkhornReport {
    /// Cost of the rounded, exactly feasible plan: an upper bound on `d₁`.
    pub cost: f64,
    /// Dual objective of a feasible dual pair: a lower bound on `d₁`.
    pub lower_bound: f64,
    /// `reg · ln(n m)`, the textbook gap between entropic and exact costs.
    pub slack: f64,
    pub iterations: usize,
    pub marginal_error: f64,
}

/// Entropic `d₁` with default iteration limits.
pub fn sinkhorn_d1(a: &ParticleCloud, b: &ParticleCloud, reg: f64) -> Result<SinkhornReport> {
    sinkhorn_d1_with(a, b, &SinkhornConfig::new(reg))
}

pub fn sinkhorn_d1_with(
    a: &ParticleCloud,
    b: &ParticleCloud,
    cfg: &SinkhornConfig,
) -> Result<SinkhornReport> {
    let c = cost_matrix(a, b);
    sinkhorn(a.weights(), b.weights(), &c, cfg)
}

fn logsumexp(vals: impl Iterator<Item = f64>, scratch: &mut Vec<f64>) -> f64 {
    scratch.clear();
    scratch.extend(vals);
    let mx = scratch.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + scratch.iter().map(|v| (v - mx).exp()).sum::<f64>().ln()
}

// scaling factors outside this range are absorbed into the potentials
const ABSORB_MIN: f64 = 1e-100;
const ABSORB_MAX: f64 = 1e100;

fn stabilised_kernel(f: &[f64], g: &[f64], cost: &[f64], reg: f64, n: usize) -> Vec<f64> {
    cost.iter()
        .enumerate()
        .map(|(idx, c)| {
            let (i, j) = (idx / n, idx % n);
            let e = (f[i] + g[j] - c) / reg;
            if e.is_nan() { 0.0 } else { e.exp() }
        })
        .collect()
}

fn absorb(pot: &mut [f64], scale: &[f64], reg: f64) {
    for (p, s) in pot.iter_mut().zip(scale) {
        *p = if *s == 0.0 { f64::NEG_INFINITY } else { *p + reg * s.ln() };
    }
}

fn scaled_row_error(kernel: &[f64], u: &[f64], v: &[f64], a: &[f64], n: usize) -> f64 {
    (0..a.len())
        .map(|i| {
            let r: f64 = kernel[i * n..(i + 1) * n].iter().zip(v).map(|(k, x)| k * x).sum();
            (u[i] * r - a[i]).abs()
        })
        .sum()
}

#[allow(clippy::too_many_arguments)]
fn log_domain_step(
    f: &mut [f64],
    g: &mut [f64],
    la: &[f64],
    lb: &[f64],
    a: &[f64],
    b: &[f64],
    cost: &[f64],
    reg: f64,
    scratch: &mut Vec<f64>,
) {
    let (m, n) = (a.len(), b.len());
    for i in 0..m {
        f[i] = if a[i] == 0.0 {
            f64::NEG_INFINITY
        } else {
            reg * la[i] - reg * logsumexp((0..n).map(|j| (g[j] - cost[i * n + j]) / reg), scratch)
        };
    }
    for j in 0..n {
        g[j] = if b[j] == 0.0 {
            f64::NEG_INFINITY
        } else {
            reg * lb[j] - reg * logsumexp((0..m).map(|i| (f[i] - cost[i * n + j]) / reg), scratch)
        };
    }
}

/// Sinkhorn with annealing of the regularisation, followed by
/// rounding onto the transport polytope.
pub fn sinkhorn(a: &[f64], b: &[f64], cost: &[f64], cfg: &SinkhornConfig) -> Result<SinkhornReport> {
    if !(cfg.reg > 0.0) || !(cfg.scaling > 0.0 && cfg.scaling < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "sinkhorn needs reg > 0 and scaling in (0,1), got {} and {}",
            cfg.reg, cfg.scaling
        )));
    }
    let m = a.len();
    let n = b.len();
    if cost.len() != m * n || m == 0 || n == 0 {
        return Err(Error::InvalidParameter("cost matrix shape mismatch".into()));
    }
    let la: Vec<f64> = a.iter().map(|v| v.ln()).collect();
    let lb: Vec<f64> = b.iter().map(|v| v.ln()).collect();
    let mut f = vec![0.0; m];
    let mut g = vec![0.0; n];
    let cmax = cost.iter().fold(0.0f64, |x, c| x.max(*c));
    let mut reg = (cmax * 0.5).max(cfg.reg);
    let mut scratch = Vec::with_capacity(m.max(n));
    let mut iterations = 0usize;
    let mut err;

    let row_error = |f: &[f64], g: &[f64], reg: f64, scratch: &mut Vec<f64>| -> f64 {
        let mut e = 0.0;
        for i in 0..m {
            if a[i] == 0.0 {
                continue;
            }
            let lse = logsumexp((0..n).map(|j| (f[i] + g[j] - cost[i * n + j]) / reg), scratch);
            e += (lse.exp() - a[i]).abs();
        }
        e
    };

    loop {
        let last = reg <= cfg.reg;
        let stage_tol = if last { cfg.tol } else { cfg.tol.max(1e-3) };
        // scaling iterations on K = exp((f + g - C) / reg); u and v are
        // absorbed into the potentials before they leave a safe range
        let mut kernel = stabilised_kernel(&f, &g, cost, reg, n);
        let mut u = vec![1.0; m];
        let mut v = vec![1.0; n];
        let mut kv = vec![0.0; m];
        let mut ku = vec![0.0; n];
        loop {
            for i in 0..m {
                kv[i] = kernel[i * n..(i + 1) * n].iter().zip(&v).map(|(k, x)| k * x).sum();
            }
            let u_new: Vec<f64> = (0..m).map(|i| if a[i] == 0.0 { 0.0 } else { a[i] / kv[i] }).collect();
            ku.iter_mut().for_each(|x| *x = 0.0);
            for i in 0..m {
                let ui = u_new[i];
                for (acc, k) in ku.iter_mut().zip(&kernel[i * n..(i + 1) * n]) {
                    *acc += k * ui;
                }
            }
            let v_new: Vec<f64> = (0..n).map(|j| if b[j] == 0.0 { 0.0 } else { b[j] / ku[j] }).collect();
            iterations += 1;
            let unsafe_scale = |x: &f64| !x.is_finite() || (*x != 0.0 && !(ABSORB_MIN..ABSORB_MAX).contains(x));
            if u_new.iter().any(unsafe_scale) || v_new.iter().any(unsafe_scale) {
                // fold the last safe scalings in and take one log-domain step
                absorb(&mut f, &u, reg);
                absorb(&mut g, &v, reg);
                log_domain_step(&mut f, &mut g, &la, &lb, a, b, cost, reg, &mut scratch);
                kernel = stabilised_kernel(&f, &g, cost, reg, n);
                u.iter_mut().for_each(|x| *x = 1.0);
                v.iter_mut().for_each(|x| *x = 1.0);
            } else {
                u = u_new;
                v = v_new;
            }
            if iterations % 10 == 0 || m * n < 10_000 {
                err = scaled_row_error(&kernel, &u, &v, a, n);
                if err < stage_tol {
                    break;
                }
            }
            if iterations >= cfg.max_iter {
                err = scaled_row_error(&kernel, &u, &v, a, n);
                return Err(Error::SinkhornNotConverged {
                    iterations,
                    residual: err,
                });
            }
        }
        absorb(&mut f, &u, reg);
        absorb(&mut g, &v, reg);
        if last {
            break;
        }
        reg = (reg * cfg.scaling).max(cfg.reg);
    }
    let marginal_error = row_error(&f, &g, reg, &mut scratch);

    // rounding onto the polytope
    let mut p: Vec<f64> = (0..m * n)
        .map(|idx| {
            let (i, j) = (idx / n, idx % n);
            ((f[i] + g[j] - cost[idx]) / reg).exp()
        })
        .collect();
    for i in 0..m {
        let r: f64 = p[i * n..(i + 1) * n].iter().sum();
        if r > a[i] && r > 0.0 {
            let s = a[i] / r;
            p[i * n..(i + 1) * n].iter_mut().for_each(|v| *v *= s);
        }
    }
    for j in 0..n {
        let c: f64 = (0..m).map(|i| p[i * n + j]).sum();
        if c > b[j] && c > 0.0 {
            let s = b[j] / c;
            (0..m).for_each(|i| p[i * n + j] *= s);
        }
    }
    let er: Vec<f64> = (0..m)
        .map(|i| (a[i] - p[i * n..(i + 1) * n].iter().sum::<f64>()).max(0.0))
        .collect();
    let ec: Vec<f64> = (0..n)
        .map(|j| (b[j] - (0..m).map(|i| p[i * n + j]).sum::<f64>()).max(0.0))
        .collect();
    let er_sum: f64 = er.iter().sum();
    let mut upper = 0.0;
    for i in 0..m {
        for j in 0..n {
            let mut v = p[i * n + j];
            if er_sum > 0.0 {
                v += er[i] * ec[j] / er_sum;
            }
            upper += v * cost[i * n + j];
        }
    }

    // feasible dual: g'_j = min_i (c_ij - f_i)
    let fin: Vec<f64> = f
        .iter()
        .map(|v| if v.is_finite() { *v } else { 0.0 })
        .collect();
    let mut lower: f64 = a.iter().zip(&fin).map(|(w, v)| w * v).sum();
    for j in 0..n {
        let gj = (0..m)
            .map(|i| cost[i * n + j] - fin[i])
            .fold(f64::INFINITY, f64::min);
        lower += b[j] * gj;
    }

    Ok(SinkhornReport {
        cost: upper,
        lower_bound: lower,
        slack: cfg.reg * ((m * n) as f64).ln(),
        iterations,
        marginal_error,
    })
}
