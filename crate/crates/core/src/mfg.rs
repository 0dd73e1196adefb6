//! Fictitious play for the first-order mean field game
//!
//! ```text
//! -∂t u + |D_H u|²/2 = F[m_t],   u(·, T) = G[m_T],
//!  m_t = flow of m₀ under the feedback drift -D_H u,
//! ```
//!
//! with `F[m] = w_f (ρ_ε ∗ m)` and `G[m] = w_g (ρ_ε ∗ m)`.
//!
//! Iterate `k` answers the averaged flow `m̄^k` with a best response (HJB
//! solve plus characteristics from `m₀`) and averages it in:
//! `m̄^{k+1} = (k m̄^k + m^{new}) / (k + 1)`. Because `F` is linear in `m`,
//! the averaged couplings are tracked as averaged density fields, and the
//! averaged flow itself is the union of all response bundles with equal
//! weights. Distances between flows are bounded by the coupling that pairs
//! each atom of `m₀` with itself across bundles.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use std::path::Path;

use crate::continuity::{
    solve_continuity, uniform_times, DriftField, GridDrift, TimeInterp, TrajectoryBundle,
};
use crate::grid::{GridField, Resolution};
use crate::group::{horizontal_velocity, torus_dist, HPoint};
use crate::hjb::{
    default_control_radius, solve_hjb, synthesis_drift_with, ControlDisk, Cost, GridCost,
    ValueFunction,
};
use crate::measure::{density_from_cloud, ParticleCloud};
use crate::mollifier::Kernel;
use crate::stats::{loglog_fit, par_sum, LinearFit};
use crate::{Error, Result};

/// Convolution couplings `F = w_f ρ_ε ∗ m`, `G = w_g ρ_ε ∗ m`, sampled on
/// `resolution`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    pub kernel: Kernel,
    pub weight_f: f64,
    pub weight_g: f64,
    pub resolution: Resolution,
}

impl Coupling {
    pub fn new(epsilon: f64, weight_f: f64, weight_g: f64, resolution: Resolution) -> Result<Self> {
        Ok(Self {
            kernel: Kernel::new(epsilon)?,
            weight_f,
            weight_g,
            resolution,
        })
    }

    pub fn benchmark() -> Self {
        Self::new(0.2, 0.5, 0.2, Resolution::cube(16).expect("positive"))
            .expect("valid benchmark kernel")
    }

    pub fn density(&self, cloud: &ParticleCloud) -> Result<GridField> {
        density_from_cloud(cloud, &self.kernel, self.resolution)
    }

    pub fn running(&self, cloud: &ParticleCloud) -> Result<GridField> {
        Ok(self.density(cloud)?.scaled(self.weight_f))
    }

    pub fn terminal(&self, cloud: &ParticleCloud) -> Result<GridField> {
        Ok(self.density(cloud)?.scaled(self.weight_g))
    }

    /// Lipschitz bound of `m ↦ F[m]` from `d₁` into sup norm.
    pub fn lipschitz_bound_f(&self) -> f64 {
        self.weight_f.abs() * self.kernel.translation_lipschitz_bound()
    }
}

/// `F[cloud]` on the coupling grid.
pub fn eval_coupling(c: &Coupling, cloud: &ParticleCloud) -> Result<GridField> {
    c.running(cloud)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RingSpacing {
    Linear,
    Quadratic,
}

/// Control set specification; the radius defaults to
/// [`default_control_radius`] of the measured cost bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlSpec {
    #[serde(default)]
    pub radius: Option<f64>,
    pub n_rings: usize,
    pub per_ring: usize,
    pub spacing: RingSpacing,
}

impl ControlSpec {
    pub fn build(&self, cost_bound: f64, horizon: f64) -> Result<ControlDisk> {
        let r = self
            .radius
            .unwrap_or_else(|| default_control_radius(cost_bound, horizon));
        match self.spacing {
            RingSpacing::Linear => ControlDisk::rings(r, self.n_rings, self.per_ring),
            RingSpacing::Quadratic => ControlDisk::rings_quadratic(r, self.n_rings, self.per_ring),
        }
    }
}

/// Time grid, controls and integration parameters of a best response.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResponseConfig {
    pub horizon: f64,
    pub steps: usize,
    /// RK4 steps per HJB time step when integrating characteristics.
    pub substeps: usize,
    pub controls: ControlSpec,
    pub drift_interp: TimeInterp,
}

impl ResponseConfig {
    pub fn benchmark() -> Self {
        Self {
            horizon: 1.0,
            steps: 20,
            substeps: 2,
            controls: ControlSpec {
                radius: None,
                n_rings: 24,
                per_ring: 16,
                spacing: RingSpacing::Quadratic,
            },
            drift_interp: TimeInterp::Nearest,
        }
    }

    pub fn times(&self) -> Vec<f64> {
        uniform_times(self.horizon, self.steps)
    }

    pub fn dt(&self) -> f64 {
        self.horizon / (self.steps * self.substeps) as f64
    }

    fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0) || self.steps == 0 || self.substeps == 0 {
            return Err(Error::InvalidParameter(
                "response needs a positive horizon and positive step counts".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MfgConfig {
    pub response: ResponseConfig,
    pub tol: f64,
    pub max_iter: usize,
}

impl MfgConfig {
    pub fn benchmark() -> Self {
        Self {
            response: ResponseConfig::benchmark(),
            tol: 1e-3,
            max_iter: 30,
        }
    }
}

/// Running and terminal cost from per-time density fields.
fn cost_from_densities(
    c: &Coupling,
    times: &[f64],
    dens: &[GridField],
) -> Result<GridCost> {
    let running = dens.iter().map(|d| d.scaled(c.weight_f)).collect();
    let terminal = dens[dens.len() - 1].scaled(c.weight_g);
    GridCost::new(times.to_vec(), running, terminal)
}

fn response_to_densities(
    c: &Coupling,
    dens: &[GridField],
    cfg: &ResponseConfig,
    controls: &ControlDisk,
) -> Result<(ValueFunction, GridDrift)> {
    let times = cfg.times();
    let cost = cost_from_densities(c, &times, dens)?;
    let u = solve_hjb(&cost, controls, c.resolution, &times)?;
    let d = synthesis_drift_with(&u, cfg.drift_interp)?;
    Ok((u, d))
}

/// Cost bound `max F + max G` for the given densities.
fn measured_cost_bound(c: &Coupling, dens: &[GridField]) -> f64 {
    let fmax = dens.iter().map(GridField::sup_norm).fold(0.0, f64::max);
    c.weight_f.abs() * fmax + c.weight_g.abs() * dens[dens.len() - 1].sup_norm()
}

/// Best response to a flow given as one cloud per time node.
pub fn best_response(
    flow: &[ParticleCloud],
    c: &Coupling,
    cfg: &ResponseConfig,
) -> Result<(ValueFunction, GridDrift)> {
    cfg.validate()?;
    if flow.len() != cfg.steps + 1 {
        return Err(Error::InvalidParameter(format!(
            "flow has {} clouds for {} time nodes",
            flow.len(),
            cfg.steps + 1
        )));
    }
    let dens: Vec<GridField> = flow
        .iter()
        .map(|m| c.density(m))
        .collect::<Result<_>>()?;
    let controls = cfg
        .controls
        .build(measured_cost_bound(c, &dens), cfg.horizon)?;
    response_to_densities(c, &dens, cfg, &controls)
}

/// Iterate of the fixed-point loop.
#[derive(Clone, Debug)]
pub struct MfgState {
    /// Value function solved against `cost_density`.
    pub u: ValueFunction,
    pub drift: GridDrift,
    /// Averaged densities `ρ_ε ∗ m̄_t` the value function answers.
    pub cost_density: Vec<GridField>,
    /// Averaged densities of the current flow.
    pub density: Vec<GridField>,
    /// Response bundles; the flow is their equal-weight mixture. The first
    /// bundle is the static flow `m_t = m₀`.
    pub bundles: Vec<TrajectoryBundle>,
    pub residuals: Vec<f64>,
    /// `max_t max_x (ρ_ε ∗ m̄_t)` per iteration.
    pub c0_history: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub best_iteration: usize,
    pub times: Vec<f64>,
}

impl MfgState {
    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    /// The averaged flow at time index `t` as a cloud.
    pub fn flow(&self, t: usize) -> ParticleCloud {
        let parts: Vec<ParticleCloud> = self.bundles.iter().map(|b| b.marginal(t)).collect();
        let lam = 1.0 / parts.len() as f64;
        let refs: Vec<(&ParticleCloud, f64)> = parts.iter().map(|p| (p, lam)).collect();
        ParticleCloud::mixture(&refs).expect("equal weights form a probability vector")
    }

    /// Relative spread `(max - min) / last` of the density bound over the
    /// second half of the iterations; the start-up transient is excluded.
    pub fn c0_drift(&self) -> f64 {
        let n = self.c0_history.len();
        relative_spread(&self.c0_history[n / 2..])
    }

    /// As [`MfgState::c0_drift`] over every iteration.
    pub fn c0_drift_full(&self) -> f64 {
        relative_spread(&self.c0_history)
    }

    pub fn min_density(&self) -> f64 {
        self.density.iter().map(GridField::min).fold(f64::INFINITY, f64::min)
    }
}

fn relative_spread(v: &[f64]) -> f64 {
    let Some(&last) = v.last() else { return 0.0 };
    let mx = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mn = v.iter().copied().fold(f64::INFINITY, f64::min);
    (mx - mn) / last
}

/// `(1/k) Σ_j Σ_i w_i d_T(Y^j_i(t), Y^new_i(t))` maximised over `t`.
fn mixture_distance(bundles: &[TrajectoryBundle], new: &TrajectoryBundle) -> f64 {
    let nt = new.n_times();
    let k = bundles.len() as f64;
    (0..nt)
        .map(|t| {
            let d = par_sum(new.n_atoms(), |a| {
                let y = new.state(a, t);
                let s: f64 = bundles.iter().map(|b| torus_dist(b.state(a, t), y)).sum();
                new.weights()[a] * s
            });
            d / k
        })
        .fold(0.0, f64::max)
}

fn bundle_densities(c: &Coupling, b: &TrajectoryBundle) -> Result<Vec<GridField>> {
    (0..b.n_times()).map(|t| c.density(&b.marginal(t))).collect()
}

/// Fictitious-play fixed point. Stops when the averaging step moves the
/// flow by less than `tol` in `sup_t d₁`; otherwise returns the iterate with
/// the smallest step, flagged as not converged.
pub fn fixed_point(m0: &ParticleCloud, c: &Coupling, cfg: &MfgConfig) -> Result<MfgState> {
    let rc = &cfg.response;
    rc.validate()?;
    if !(cfg.tol > 0.0) || cfg.max_iter == 0 {
        return Err(Error::InvalidParameter(
            "fixed point needs tol > 0 and max_iter > 0".into(),
        ));
    }
    let times = rc.times();
    let nt = times.len();
    let stat_states: Vec<HPoint> = m0
        .points()
        .iter()
        .flat_map(|p| std::iter::repeat(*p).take(nt))
        .collect();
    let static_bundle = TrajectoryBundle::from_parts(times.clone(), m0.weights().to_vec(), stat_states)?;
    let d0 = c.density(m0)?;
    let mut density = vec![d0; nt];
    let controls = rc.controls.build(measured_cost_bound(c, &density), rc.horizon)?;
    let mut bundles = vec![static_bundle];
    let mut residuals = Vec::new();
    let mut c0_history = Vec::new();

    struct Best {
        iter: usize,
        residual: f64,
        u: ValueFunction,
        drift: GridDrift,
        cost_density: Vec<GridField>,
        density: Vec<GridField>,
        n_bundles: usize,
    }
    let mut best: Option<Best> = None;
    let mut converged = false;
    let mut iterations = 0;

    for iter in 1..=cfg.max_iter {
        iterations = iter;
        let c0 = density.iter().map(GridField::max).fold(f64::NEG_INFINITY, f64::max);
        c0_history.push(c0);
        let (u, drift) = response_to_densities(c, &density, rc, &controls)?;
        let newb = solve_continuity(&drift, m0, &times, rc.dt())?;
        let k = bundles.len() as f64;
        let residual = mixture_distance(&bundles, &newb) / (k + 1.0);
        residuals.push(residual);
        let new_dens = bundle_densities(c, &newb)?;
        let cost_density = density.clone();
        for (d, nd) in density.iter_mut().zip(&new_dens) {
            d.axpby(k / (k + 1.0), 1.0 / (k + 1.0), nd)?;
        }
        bundles.push(newb);
        if best.as_ref().map_or(true, |b| residual < b.residual) {
            best = Some(Best {
                iter,
                residual,
                u,
                drift,
                cost_density,
                density: density.clone(),
                n_bundles: bundles.len(),
            });
        }
        if residual < cfg.tol {
            converged = true;
            break;
        }
    }
    let b = best.expect("at least one iteration ran");
    bundles.truncate(b.n_bundles);
    Ok(MfgState {
        u: b.u,
        drift: b.drift,
        cost_density: b.cost_density,
        density: b.density,
        bundles,
        residuals,
        c0_history,
        converged,
        iterations,
        best_iteration: b.iter,
        times,
    })
}

/// Hölder fit of `t ↦ m̄_t` in `d₁`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolderFit {
    /// Fitted exponent of `d(s,t) ~ (t-s)^β`; `None` for a constant curve.
    pub exponent: Option<f64>,
    /// `max d(s,t) / (t-s)^{1/4}`.
    pub c1: f64,
    pub r2: Option<f64>,
    pub pairs: usize,
}

/// Upper bounds `d₁(m_s, m_t) ≤ Σ_j λ_j Σ_i w_i d_T(Y^j_i(s), Y^j_i(t))`
/// for every time pair, from an evenly spaced subsample of atoms.
pub fn flow_holder_fit(bundles: &[TrajectoryBundle], sample_atoms: usize) -> Result<HolderFit> {
    let b0 = &bundles[0];
    let n = b0.n_atoms();
    let stride = (n / sample_atoms.max(1)).max(1);
    let atoms: Vec<usize> = (0..n).step_by(stride).collect();
    let times = b0.times();
    let nt = times.len();
    let mut gaps = Vec::new();
    let mut dists = Vec::new();
    for s in 0..nt {
        for t in s + 1..nt {
            let d: f64 = bundles
                .iter()
                .map(|b| {
                    atoms
                        .iter()
                        .map(|&a| torus_dist(b.state(a, s), b.state(a, t)))
                        .sum::<f64>()
                        / atoms.len() as f64
                })
                .sum::<f64>()
                / bundles.len() as f64;
            gaps.push(times[t] - times[s]);
            dists.push(d);
        }
    }
    holder_from_pairs(&gaps, &dists)
}

pub(crate) fn holder_from_pairs(gaps: &[f64], dists: &[f64]) -> Result<HolderFit> {
    let fit: Option<LinearFit> = if dists.iter().any(|&d| d > 0.0) {
        Some(loglog_fit(gaps, dists)?)
    } else {
        None
    };
    let c1 = gaps
        .iter()
        .zip(dists)
        .map(|(g, d)| d / g.powf(0.25))
        .fold(0.0, f64::max);
    Ok(HolderFit {
        exponent: fit.map(|f| f.slope),
        c1,
        r2: fit.map(|f| f.r2),
        pairs: gaps.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub max_gap: f64,
    pub mean_gap: f64,
    pub gaps: Vec<f64>,
    pub costs: Vec<f64>,
    pub values: Vec<f64>,
}

/// Cost `∫ (|α|²/2 + F) dτ + G(Y_T)` of the path started at `x0` under the
/// feedback `α = drift + perturbation(t)`, by the trapezoid rule along the
/// RK4 path. `F` and `G` are the couplings the state's value function
/// answers.
pub fn trajectory_cost(
    state: &MfgState,
    c: &Coupling,
    x0: &HPoint,
    dt: f64,
    perturbation: &dyn Fn(f64) -> [f64; 2],
) -> Result<f64> {
    let cost = cost_from_densities(c, &state.times, &state.cost_density)?;
    path_cost(&state.drift, &cost, &state.times, x0, dt, perturbation)
}

/// [`trajectory_cost`] for an arbitrary feedback and cost.
pub fn path_cost(
    drift: &dyn DriftField,
    cost: &dyn Cost,
    times: &[f64],
    x0: &HPoint,
    dt: f64,
    perturbation: &dyn Fn(f64) -> [f64; 2],
) -> Result<f64> {
    let horizon = times[times.len() - 1];
    let steps = crate::continuity::step_count(horizon - times[0], dt)?;
    let control = |y: &HPoint, t: f64| {
        let a = drift.eval(y, t);
        let p = perturbation(t);
        [a[0] + p[0], a[1] + p[1]]
    };
    let running = |y: &HPoint, t: f64| {
        let a = control(y, t);
        0.5 * (a[0] * a[0] + a[1] * a[1]) + cost.running(y, t)
    };
    let vel = |y: &HPoint, t: f64| horizontal_velocity(y, control(y, t));
    let add = |p: &HPoint, k: [f64; 3], h: f64| {
        HPoint::new(p.x1 + h * k[0], p.x2 + h * k[1], p.x3 + h * k[2])
    };
    let mut y = *x0;
    let mut t = times[0];
    let mut j = 0.0;
    let mut prev = running(&y, t);
    for _ in 0..steps {
        let k1 = vel(&y, t);
        let k2 = vel(&add(&y, k1, 0.5 * dt), t + 0.5 * dt);
        let k3 = vel(&add(&y, k2, 0.5 * dt), t + 0.5 * dt);
        let k4 = vel(&add(&y, k3, dt), t + dt);
        y = HPoint::new(
            y.x1 + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
            y.x2 + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
            y.x3 + dt / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]),
        );
        t += dt;
        if !y.is_finite() {
            return Err(Error::NonFinite {
                time: t,
                context: format!("cost path from {x0}"),
            });
        }
        // data may jump at slice boundaries; close the interval with the
        // left-hand slice
        let cur = running(&y, t - 1e-12);
        j += 0.5 * dt * (prev + cur);
        prev = running(&y, t);
    }
    Ok(j + cost.terminal(&y))
}

/// Relative gap `|J(x) - u(x, 0)| / max(|u|, 1e-8)` of the synthesised
/// trajectories from `sample_atoms` atoms of `m₀`.
pub fn mild_certificate(
    state: &MfgState,
    c: &Coupling,
    m0: &ParticleCloud,
    sample_atoms: usize,
    dt: f64,
) -> Result<CertificateReport> {
    let n = m0.len();
    let stride = (n / sample_atoms.max(1)).max(1);
    let idx: Vec<usize> = (0..n).step_by(stride).take(sample_atoms).collect();
    let zero = |_t: f64| [0.0, 0.0];
    let rows: Vec<Result<(f64, f64, f64)>> = idx
        .par_iter()
        .map(|&a| {
            let x = m0.points()[a];
            let j = trajectory_cost(state, c, &x, dt, &zero)?;
            let u = state.u.slices[0].lookup(&x);
            Ok((j, u, (j - u).abs() / u.abs().max(1e-8)))
        })
        .collect();
    let mut costs = Vec::new();
    let mut values = Vec::new();
    let mut gaps = Vec::new();
    for r in rows {
        let (j, u, g) = r?;
        costs.push(j);
        values.push(u);
        gaps.push(g);
    }
    let max_gap = gaps.iter().copied().fold(0.0, f64::max);
    let mean_gap = gaps.iter().sum::<f64>() / gaps.len().max(1) as f64;
    Ok(CertificateReport {
        max_gap,
        mean_gap,
        gaps,
        costs,
        values,
    })
}

/// Benchmark initial density `1 + ½ cos(2πx1) cos(2πx2)` (unit mass).
pub fn benchmark_density(x: &HPoint) -> f64 {
    1.0 + 0.5 * (TAU * x.x1).cos() * (TAU * x.x2).cos()
}

/// Inverse of `x2 ↦ x2 + c sin(2πx2) / (4π)`, the conditional CDF of `x2`
/// given `x1` with `c = cos 2πx1`.
fn conditional_x2(u: f64, c: f64) -> f64 {
    let k = c / (2.0 * TAU);
    let mut x = u;
    for _ in 0..50 {
        let g = x + k * (TAU * x).sin() - u;
        let dg = 1.0 + k * TAU * (TAU * x).cos();
        let step = g / dg;
        x -= step;
        if step.abs() < 1e-15 {
            break;
        }
    }
    x.clamp(0.0, 1.0 - f64::EPSILON)
}

/// Vertical strata used by [`benchmark_m0`] when `n` allows it.
pub const BENCHMARK_VERTICAL_STRATA: usize = 32;

/// `n` equal atoms of the benchmark density by stratified sampling.
///
/// `m = n / n3` horizontal points (`n3 = 32` when it divides `n`) come from
/// a jittered square grid when `m` is a square and a jittered golden-ratio
/// lattice otherwise, mapped through the marginal of `x1` (uniform) and the
/// conditional inverse CDF of `x2`. Each horizontal point carries a column
/// of `n3` atoms on a randomly shifted lattice in `x3`. The density does not
/// depend on `x3`, and a column with spacing below the kernel's vertical
/// width has an `x3`-independent density estimate; i.i.d. draws would
/// leave sampling noise there that `D_H` amplifies through `x_j ∂3`.
pub fn benchmark_m0(n: usize, seed: u64) -> Result<ParticleCloud> {
    use rand::{Rng, SeedableRng};
    if n == 0 {
        return Err(Error::InvalidParameter("benchmark cloud needs atoms".into()));
    }
    let n3 = if n % BENCHMARK_VERTICAL_STRATA == 0 {
        BENCHMARK_VERTICAL_STRATA
    } else {
        1
    };
    let m = n / n3;
    let side = (m as f64).sqrt().round() as usize;
    let square = side * side == m;
    let golden = (5f64.sqrt() - 1.0) / 2.0;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let shift: f64 = rng.gen();
    let mut pts = Vec::with_capacity(n);
    for i in 0..m {
        let (u1, u2) = if square {
            let (a, b) = (i / side, i % side);
            (
                (a as f64 + rng.gen::<f64>()) / side as f64,
                (b as f64 + rng.gen::<f64>()) / side as f64,
            )
        } else {
            let u1 = (i as f64 + rng.gen::<f64>()) / m as f64;
            (u1, (i as f64 * golden + shift).fract())
        };
        let x1 = u1;
        let x2 = conditional_x2(u2, (TAU * x1).cos());
        let v: f64 = rng.gen();
        for k in 0..n3 {
            let x3 = (k as f64 + v) / n3 as f64;
            pts.push(HPoint::new(x1, x2, x3));
        }
    }
    ParticleCloud::uniform(pts)
}

/// Summary written by the CLI and checked by the acceptance tests.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MfgManifest {
    pub coupling: Coupling,
    pub config: MfgConfig,
    pub n_atoms: usize,
    pub converged: bool,
    pub iterations: usize,
    pub best_iteration: usize,
    pub residuals: Vec<f64>,
    pub c0_history: Vec<f64>,
    pub c0_drift: f64,
    pub c0_drift_full: f64,
    pub min_density: f64,
    pub holder: HolderFit,
    pub certificate_max_gap: f64,
    pub certificate_mean_gap: f64,
    pub control_radius: f64,
    pub n_controls: usize,
}

impl MfgManifest {
    pub fn build(
        state: &MfgState,
        c: &Coupling,
        cfg: &MfgConfig,
        n_atoms: usize,
        holder: HolderFit,
        cert: &CertificateReport,
    ) -> Self {
        Self {
            coupling: c.clone(),
            config: cfg.clone(),
            n_atoms,
            converged: state.converged,
            iterations: state.iterations,
            best_iteration: state.best_iteration,
            residuals: state.residuals.clone(),
            c0_history: state.c0_history.clone(),
            c0_drift: state.c0_drift(),
            c0_drift_full: state.c0_drift_full(),
            min_density: state.min_density(),
            holder,
            certificate_max_gap: cert.max_gap,
            certificate_mean_gap: cert.mean_gap,
            control_radius: state.u.controls.radius,
            n_controls: state.u.controls.len(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(f, self)?;
        Ok(())
    }
}
