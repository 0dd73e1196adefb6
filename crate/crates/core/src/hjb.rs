//! Backward semi-Lagrangian dynamic programming for
//! `-∂t u + |D_H u|²/2 = f`, `u(·, T) = g`, over a finite set of horizontal
//! controls.
//!
//! One step of the scheme at a grid node `x` is
//! `u(x, t) = min_α [Δt |α|²/2 + u(x ⊕ Δt α, t + Δt)] + Δt f(x, t)`,
//! where `x ⊕ Δt α` is the exact endpoint of the constant-control flow (the
//! RK2 step of `x' = α Bᵀ(x)` coincides with it) and `u(·, t + Δt)` is read
//! through periodic trilinear interpolation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::continuity::{GridDrift, TimeInterp};
use crate::grid::{GridField, Resolution};
use crate::group::{horizontal_step, HPoint};
use crate::testfn::{SmoothFn, TestFunction};
use crate::{Error, Result};

/// Running and terminal cost.
pub trait Cost: Sync {
    fn running(&self, x: &HPoint, t: f64) -> f64;
    fn terminal(&self, x: &HPoint) -> f64;
}

/// Costs given by closed-form periodic functions; `f` is time independent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FnCost {
    pub running: SmoothFn,
    pub terminal: SmoothFn,
}

impl Cost for FnCost {
    fn running(&self, x: &HPoint, _t: f64) -> f64 {
        self.running.value(x)
    }
    fn terminal(&self, x: &HPoint) -> f64 {
        self.terminal.value(x)
    }
}

/// Closure-backed cost.
pub struct ClosureCost<F, G> {
    pub f: F,
    pub g: G,
}

impl<F, G> Cost for ClosureCost<F, G>
where
    F: Fn(&HPoint, f64) -> f64 + Sync,
    G: Fn(&HPoint) -> f64 + Sync,
{
    fn running(&self, x: &HPoint, t: f64) -> f64 {
        (self.f)(x, t)
    }
    fn terminal(&self, x: &HPoint) -> f64 {
        (self.g)(x)
    }
}

/// Costs sampled on grids: one running slice per time node plus a
/// terminal field. Between nodes the running cost uses the slice of the
/// last node at or before `t`.
#[derive(Clone, Debug)]
pub struct GridCost {
    pub times: Vec<f64>,
    pub running: Vec<GridField>,
    pub terminal: GridField,
}

impl GridCost {
    pub fn new(times: Vec<f64>, running: Vec<GridField>, terminal: GridField) -> Result<Self> {
        if times.len() != running.len() || times.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "{} cost times for {} running slices",
                times.len(),
                running.len()
            )));
        }
        Ok(Self {
            times,
            running,
            terminal,
        })
    }

    fn slice_index(&self, t: f64) -> usize {
        let k = self.times.partition_point(|s| *s <= t + 1e-12);
        k.saturating_sub(1).min(self.times.len() - 1)
    }
}

impl Cost for GridCost {
    fn running(&self, x: &HPoint, t: f64) -> f64 {
        self.running[self.slice_index(t)].lookup(x)
    }
    fn terminal(&self, x: &HPoint) -> f64 {
        self.terminal.lookup(x)
    }
}

/// Finite control set inside the disk of radius `radius`, sorted by `|α|`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlDisk {
    pub radius: f64,
    pub samples: Vec<[f64; 2]>,
}

impl ControlDisk {
    pub fn new(radius: f64, mut samples: Vec<[f64; 2]>) -> Result<Self> {
        if !(radius > 0.0) || samples.is_empty() {
            return Err(Error::InvalidParameter(
                "control disk needs a positive radius and at least one sample".into(),
            ));
        }
        if let Some(a) = samples
            .iter()
            .find(|a| a[0].hypot(a[1]) > radius * (1.0 + 1e-12))
        {
            return Err(Error::InvalidParameter(format!(
                "control {a:?} lies outside the disk of radius {radius}"
            )));
        }
        // stable sort keeps the construction order among equal norms
        samples.sort_by(|a, b| a[0].hypot(a[1]).total_cmp(&b[0].hypot(b[1])));
        Ok(Self { radius, samples })
    }

    /// The origin plus `n_rings` rings at radii `radius·k/n_rings` with
    /// `per_ring` equally spaced angles starting at 0.
    pub fn rings(radius: f64, n_rings: usize, per_ring: usize) -> Result<Self> {
        Self::rings_with(radius, n_rings, per_ring, |s| s)
    }

    /// Like [`rings`](Self::rings) with radii `radius·(k/n_rings)²`, denser
    /// near the origin where optimal controls of weakly coupled problems live.
    pub fn rings_quadratic(radius: f64, n_rings: usize, per_ring: usize) -> Result<Self> {
        Self::rings_with(radius, n_rings, per_ring, |s| s * s)
    }

    fn rings_with(
        radius: f64,
        n_rings: usize,
        per_ring: usize,
        profile: impl Fn(f64) -> f64,
    ) -> Result<Self> {
        if n_rings == 0 || per_ring == 0 {
            return Err(Error::InvalidParameter(
                "control rings need positive ring and angle counts".into(),
            ));
        }
        let mut s = vec![[0.0, 0.0]];
        for k in 1..=n_rings {
            let r = radius * profile(k as f64 / n_rings as f64);
            for a in 0..per_ring {
                let th = std::f64::consts::TAU * a as f64 / per_ring as f64;
                s.push([r * th.cos(), r * th.sin()]);
            }
        }
        Self::new(radius, s)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Default control bound `2·sqrt(2C(T+1))` for costs bounded by `C`.
pub fn default_control_radius(cost_bound: f64, horizon: f64) -> f64 {
    2.0 * (2.0 * cost_bound.max(1e-12) * (horizon + 1.0)).sqrt()
}

/// Value function slices `u(·, t_n)` and the minimising control index at
/// every node of every slice but the last.
#[derive(Clone, Debug)]
pub struct ValueFunction {
    pub times: Vec<f64>,
    pub slices: Vec<GridField>,
    pub policy: Vec<Vec<u32>>,
    pub controls: ControlDisk,
    /// `max |f|` and `max |g|` over the nodes actually used.
    pub f_sup: f64,
    pub g_sup: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ValueManifest {
    pub times: Vec<f64>,
    pub resolution: Resolution,
    pub control_radius: f64,
    pub n_controls: usize,
    pub files: Vec<String>,
    pub f_sup: f64,
    pub g_sup: f64,
}

impl ValueFunction {
    pub fn resolution(&self) -> Resolution {
        self.slices[0].resolution()
    }

    pub fn horizon(&self) -> f64 {
        self.times[self.times.len() - 1] - self.times[0]
    }

    /// `max |u|` over all slices.
    pub fn sup(&self) -> f64 {
        self.slices.iter().map(GridField::sup_norm).fold(0.0, f64::max)
    }

    /// `‖f‖∞ T + ‖g‖∞` with the node suprema of the data.
    pub fn a_priori_bound(&self) -> f64 {
        self.f_sup * self.horizon() + self.g_sup
    }

    /// Writes `u_XXXX.csv` per slice and `manifest.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<ValueManifest> {
        std::fs::create_dir_all(dir)?;
        let mut files = Vec::new();
        for (k, s) in self.slices.iter().enumerate() {
            let name = format!("u_{k:04}.csv");
            s.save_csv(&dir.join(&name))?;
            files.push(name);
        }
        let man = ValueManifest {
            times: self.times.clone(),
            resolution: self.resolution(),
            control_radius: self.controls.radius,
            n_controls: self.controls.len(),
            files,
            f_sup: self.f_sup,
            g_sup: self.g_sup,
        };
        let f = std::fs::File::create(dir.join("manifest.json"))?;
        serde_json::to_writer_pretty(f, &man)?;
        Ok(man)
    }
}

/// One-step minimisation at `x` against the next slice. Returns the value
/// without the running-cost term and the argmin. Ties keep the first, that
/// is the smallest `|α|`.
#[inline]
fn one_step(next: &GridField, controls: &ControlDisk, x: &HPoint, dt: f64) -> (f64, u32) {
    let mut best = f64::INFINITY;
    let mut arg = 0u32;
    for (c, a) in controls.samples.iter().enumerate() {
        let y = horizontal_step(x, *a, dt);
        let v = 0.5 * dt * (a[0] * a[0] + a[1] * a[1]) + next.lookup(&y);
        if v < best {
            best = v;
            arg = c as u32;
        }
    }
    (best, arg)
}

/// Backward sweep over `times` (which must end at the horizon `T`).
pub fn solve_hjb(
    cost: &dyn Cost,
    controls: &ControlDisk,
    res: Resolution,
    times: &[f64],
) -> Result<ValueFunction> {
    if times.len() < 2 || times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter(
            "HJB needs at least two strictly increasing times".into(),
        ));
    }
    let nt = times.len();
    let terminal = GridField::from_fn(res, |x| cost.terminal(x));
    let g_sup = terminal.sup_norm();
    let mut f_sup: f64 = 0.0;
    let mut slices = vec![terminal];
    let mut policy = Vec::with_capacity(nt - 1);
    for n in (0..nt - 1).rev() {
        let dt = times[n + 1] - times[n];
        let t = times[n];
        let next = slices.last().expect("terminal slice present");
        let out: Vec<(f64, u32, f64)> = (0..res.len())
            .into_par_iter()
            .map(|idx| {
                let x = res.node_at(idx);
                let f = cost.running(&x, t);
                let (v, a) = one_step(next, controls, &x, dt);
                (v + dt * f, a, f.abs())
            })
            .collect();
        f_sup = out.iter().fold(f_sup, |m, o| m.max(o.2));
        let vals: Vec<f64> = out.iter().map(|o| o.0).collect();
        if let Some(i) = vals.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                time: t,
                context: format!("value function at node {i}"),
            });
        }
        policy.push(out.iter().map(|o| o.1).collect());
        slices.push(GridField::new(res, vals)?);
    }
    slices.reverse();
    policy.reverse();
    Ok(ValueFunction {
        times: times.to_vec(),
        slices,
        policy,
        controls: controls.clone(),
        f_sup,
        g_sup,
    })
}

/// `D_H u = (∂1u - x2 ∂3u, ∂2u + x1 ∂3u)` by centred differences of the
/// periodic interpolant, at the grid nodes.
pub fn horizontal_gradient(u: &GridField) -> [GridField; 2] {
    let res = u.resolution();
    let [h1, h2, h3] = res.spacing();
    let vals: Vec<[f64; 2]> = (0..res.len())
        .into_par_iter()
        .map(|idx| {
            let x = res.node_at(idx);
            let at = |d1: f64, d2: f64, d3: f64| {
                u.lookup(&HPoint::new(x.x1 + d1, x.x2 + d2, x.x3 + d3))
            };
            let d1 = (at(h1, 0.0, 0.0) - at(-h1, 0.0, 0.0)) / (2.0 * h1);
            let d2 = (at(0.0, h2, 0.0) - at(0.0, -h2, 0.0)) / (2.0 * h2);
            let d3 = (at(0.0, 0.0, h3) - at(0.0, 0.0, -h3)) / (2.0 * h3);
            [d1 - x.x2 * d3, d2 + x.x1 * d3]
        })
        .collect();
    let a = vals.iter().map(|v| v[0]).collect();
    let b = vals.iter().map(|v| v[1]).collect();
    [
        GridField::new(res, a).expect("same resolution"),
        GridField::new(res, b).expect("same resolution"),
    ]
}

/// The feedback drift `-D_H u`, nearest slice in time.
pub fn synthesis_drift(u: &ValueFunction) -> Result<GridDrift> {
    synthesis_drift_with(u, TimeInterp::Nearest)
}

pub fn synthesis_drift_with(u: &ValueFunction, interp: TimeInterp) -> Result<GridDrift> {
    let slices: Vec<[GridField; 2]> = u
        .slices
        .iter()
        .map(|s| {
            let [a, b] = horizontal_gradient(s);
            [a.scaled(-1.0), b.scaled(-1.0)]
        })
        .collect();
    GridDrift::new(u.times.clone(), slices, interp)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DppEntry {
    pub point: HPoint,
    pub time: f64,
    pub stored: f64,
    pub recomputed: f64,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DppReport {
    pub entries: Vec<DppEntry>,
    pub max_residual: f64,
}

/// Recomputes the one-step minimum at arbitrary `(x, t_n)` samples and
/// compares it with the interpolated stored value. `t_n` must be a grid
/// time other than the last.
pub fn verify_dpp(
    u: &ValueFunction,
    cost: &dyn Cost,
    controls: &ControlDisk,
    samples: &[(HPoint, f64)],
) -> Result<DppReport> {
    let mut entries = Vec::with_capacity(samples.len());
    for (x, t) in samples {
        let n = u
            .times
            .iter()
            .position(|s| (s - t).abs() <= 1e-9 * t.abs().max(1.0))
            .ok_or_else(|| Error::InvalidParameter(format!("{t} is not a grid time")))?;
        if n + 1 >= u.times.len() {
            return Err(Error::InvalidParameter(
                "DPP check needs a time before the horizon".into(),
            ));
        }
        let dt = u.times[n + 1] - u.times[n];
        let (v, _) = one_step(&u.slices[n + 1], controls, x, dt);
        let recomputed = v + dt * cost.running(x, u.times[n]);
        let stored = u.slices[n].lookup(x);
        entries.push(DppEntry {
            point: *x,
            time: *t,
            stored,
            recomputed,
            residual: (recomputed - stored).abs(),
        });
    }
    let max_residual = entries.iter().map(|e| e.residual).fold(0.0, f64::max);
    Ok(DppReport {
        entries,
        max_residual,
    })
}

/// Largest second difference along the coordinate directions over a
/// slice, a one-sided measure of semiconcavity.
pub fn max_second_difference(u: &GridField) -> f64 {
    let res = u.resolution();
    let h = res.spacing();
    (0..res.len())
        .map(|idx| {
            let x = res.node_at(idx);
            let c = u.values()[idx];
            let mut m = f64::NEG_INFINITY;
            for (d, hd) in h.iter().enumerate() {
                let mut e = [0.0; 3];
                e[d] = *hd;
                let p = u.lookup(&HPoint::new(x.x1 + e[0], x.x2 + e[1], x.x3 + e[2]));
                let q = u.lookup(&HPoint::new(x.x1 - e[0], x.x2 - e[1], x.x3 - e[2]));
                m = m.max((p - 2.0 * c + q) / (hd * hd));
            }
            m
        })
        .fold(f64::NEG_INFINITY, f64::max)
}
