//! Characteristics of horizontal drifts and the measure flows they carry.
//!
//! A drift `v(x, t) ∈ R²` moves points along `Y' = v(Y, t) Bᵀ(Y)`. The
//! flow of a cloud is the push-forward of its atoms along these curves, and
//! it solves the continuity equation in the weak form
//! `d/dt ∫ ζ dm_t = ∫ v · D_H ζ dm_t`, which is what [`weak_residual`]
//! measures.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use crate::grid::{GridField, Resolution};
use crate::group::{group_mul, horizontal_velocity, project, HPoint};
use crate::measure::{density_from_cloud, vector_density_from_cloud, ParticleCloud};
use crate::mollifier::{divide_fields, Kernel};
use crate::stats::par_sum;
use crate::testfn::TestFunction;
use crate::{Error, Result};

/// A bounded, periodic horizontal drift.
pub trait DriftField: Send + Sync {
    fn eval(&self, x: &HPoint, t: f64) -> [f64; 2];

    /// Supremum of `|v|`.
    fn bound(&self) -> f64;

    fn lipschitz_hint(&self) -> Option<f64> {
        None
    }
}

impl<D: DriftField + ?Sized> DriftField for Arc<D> {
    fn eval(&self, x: &HPoint, t: f64) -> [f64; 2] {
        (**self).eval(x, t)
    }
    fn bound(&self) -> f64 {
        (**self).bound()
    }
    fn lipschitz_hint(&self) -> Option<f64> {
        (**self).lipschitz_hint()
    }
}

impl<D: DriftField + ?Sized> DriftField for &D {
    fn eval(&self, x: &HPoint, t: f64) -> [f64; 2] {
        (**self).eval(x, t)
    }
    fn bound(&self) -> f64 {
        (**self).bound()
    }
    fn lipschitz_hint(&self) -> Option<f64> {
        (**self).lipschitz_hint()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantDrift(pub [f64; 2]);

impl DriftField for ConstantDrift {
    fn eval(&self, _x: &HPoint, _t: f64) -> [f64; 2] {
        self.0
    }
    fn bound(&self) -> f64 {
        self.0[0].hypot(self.0[1])
    }
    fn lipschitz_hint(&self) -> Option<f64> {
        Some(0.0)
    }
}

/// `v(x) = amp · (-sin 2πx2, sin 2πx1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotatingDrift {
    pub amp: f64,
}

impl DriftField for RotatingDrift {
    fn eval(&self, x: &HPoint, _t: f64) -> [f64; 2] {
        [
            -self.amp * (TAU * x.x2).sin(),
            self.amp * (TAU * x.x1).sin(),
        ]
    }
    fn bound(&self) -> f64 {
        self.amp.abs() * 2f64.sqrt()
    }
    fn lipschitz_hint(&self) -> Option<f64> {
        Some(self.amp.abs() * TAU)
    }
}

/// Piecewise-constant drift in `q1`: `left` on `[0, ½)`, `right` on `[½, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepDrift {
    pub left: [f64; 2],
    pub right: [f64; 2],
}

impl DriftField for StepDrift {
    fn eval(&self, x: &HPoint, _t: f64) -> [f64; 2] {
        if project(x).x1 < 0.5 {
            self.left
        } else {
            self.right
        }
    }
    fn bound(&self) -> f64 {
        self.left[0]
            .hypot(self.left[1])
            .max(self.right[0].hypot(self.right[1]))
    }
}

/// Serialisable choice among the closed-form drifts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DriftSpec {
    Constant { v: [f64; 2] },
    Rotating { amp: f64 },
    Step { left: [f64; 2], right: [f64; 2] },
}

impl DriftSpec {
    pub fn build(&self) -> Box<dyn DriftField> {
        match *self {
            DriftSpec::Constant { v } => Box::new(ConstantDrift(v)),
            DriftSpec::Rotating { amp } => Box::new(RotatingDrift { amp }),
            DriftSpec::Step { left, right } => Box::new(StepDrift { left, right }),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            DriftSpec::Constant { v } => v.iter().all(|c| c.is_finite()),
            DriftSpec::Rotating { amp } => amp.is_finite(),
            DriftSpec::Step { left, right } => left.iter().chain(right).all(|c| c.is_finite()),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("non-finite drift parameters in {self:?}")))
        }
    }
}

/// Closure-backed drift.
pub struct FnDrift<F> {
    f: F,
    bound: f64,
    lipschitz: Option<f64>,
}

impl<F: Fn(&HPoint, f64) -> [f64; 2] + Send + Sync> FnDrift<F> {
    pub fn new(f: F, bound: f64) -> Self {
        Self {
            f,
            bound,
            lipschitz: None,
        }
    }

    pub fn with_lipschitz(mut self, l: f64) -> Self {
        self.lipschitz = Some(l);
        self
    }
}

impl<F: Fn(&HPoint, f64) -> [f64; 2] + Send + Sync> DriftField for FnDrift<F> {
    fn eval(&self, x: &HPoint, t: f64) -> [f64; 2] {
        (self.f)(x, t)
    }
    fn bound(&self) -> f64 {
        self.bound
    }
    fn lipschitz_hint(&self) -> Option<f64> {
        self.lipschitz
    }
}

/// How a [`GridDrift`] is evaluated between its time slices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeInterp {
    Nearest,
    Linear,
}

/// Drift sampled on a grid at a sequence of times.
#[derive(Clone, Debug)]
pub struct GridDrift {
    times: Vec<f64>,
    slices: Vec<[GridField; 2]>,
    interp: TimeInterp,
    bound: f64,
}

impl GridDrift {
    pub fn new(times: Vec<f64>, slices: Vec<[GridField; 2]>, interp: TimeInterp) -> Result<Self> {
        if times.is_empty() || times.len() != slices.len() {
            return Err(Error::InvalidParameter(format!(
                "{} drift times for {} slices",
                times.len(),
                slices.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter(
                "drift times must be strictly increasing".into(),
            ));
        }
        let bound = slices
            .iter()
            .flat_map(|[a, b]| a.values().iter().zip(b.values()).map(|(x, y)| x.hypot(*y)))
            .fold(0.0, f64::max);
        Ok(Self {
            times,
            slices,
            interp,
            bound,
        })
    }

    /// Time-independent drift.
    pub fn stationary(field: [GridField; 2]) -> Result<Self> {
        Self::new(vec![0.0], vec![field], TimeInterp::Nearest)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn slices(&self) -> &[[GridField; 2]] {
        &self.slices
    }

    pub fn resolution(&self) -> Resolution {
        self.slices[0][0].resolution()
    }

    fn bracket(&self, t: f64) -> (usize, usize, f64) {
        let n = self.times.len();
        if n == 1 || t <= self.times[0] {
            return (0, 0, 0.0);
        }
        if t >= self.times[n - 1] {
            return (n - 1, n - 1, 0.0);
        }
        let hi = self.times.partition_point(|s| *s <= t);
        let lo = hi - 1;
        let lam = (t - self.times[lo]) / (self.times[hi] - self.times[lo]);
        (lo, hi, lam)
    }
}

impl DriftField for GridDrift {
    fn eval(&self, x: &HPoint, t: f64) -> [f64; 2] {
        let q = project(x);
        let (lo, hi, lam) = self.bracket(t);
        let at = |k: usize| {
            [
                self.slices[k][0].lookup_projected(&q),
                self.slices[k][1].lookup_projected(&q),
            ]
        };
        match self.interp {
            TimeInterp::Nearest => at(if lam < 0.5 { lo } else { hi }),
            TimeInterp::Linear => {
                if lo == hi || lam == 0.0 {
                    at(lo)
                } else {
                    let a = at(lo);
                    let b = at(hi);
                    [
                        (1.0 - lam) * a[0] + lam * b[0],
                        (1.0 - lam) * a[1] + lam * b[1],
                    ]
                }
            }
        }
    }

    fn bound(&self) -> f64 {
        self.bound
    }
}

/// Number of `dt` steps in `span`, or an error if `dt` does not divide it.
pub fn step_count(span: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) || !(span >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "need dt > 0 and a nonnegative interval, got dt = {dt}, span = {span}"
        )));
    }
    let n = (span / dt).round();
    if (n * dt - span).abs() > 1e-9 * span.max(1.0) {
        return Err(Error::InvalidParameter(format!(
            "time step {dt} does not divide the interval length {span}"
        )));
    }
    Ok(n as usize)
}

#[inline]
fn rk4_step(v: &dyn DriftField, y: &HPoint, t: f64, dt: f64) -> HPoint {
    let f = |p: &HPoint, s: f64| horizontal_velocity(p, v.eval(p, s));
    let add = |p: &HPoint, k: [f64; 3], h: f64| {
        HPoint::new(p.x1 + h * k[0], p.x2 + h * k[1], p.x3 + h * k[2])
    };
    let k1 = f(y, t);
    let k2 = f(&add(y, k1, 0.5 * dt), t + 0.5 * dt);
    let k3 = f(&add(y, k2, 0.5 * dt), t + 0.5 * dt);
    let k4 = f(&add(y, k3, dt), t + dt);
    HPoint::new(
        y.x1 + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        y.x2 + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        y.x3 + dt / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]),
    )
}

/// RK4 path of `Y' = v(Y,t)Bᵀ(Y)` from `x0` at time `s` to `t_end`, every
/// step included. Integration stays in the universal cover.
pub fn integrate_characteristic(
    v: &dyn DriftField,
    x0: &HPoint,
    s: f64,
    t_end: f64,
    dt: f64,
) -> Result<Vec<HPoint>> {
    let steps = step_count(t_end - s, dt)?;
    let mut path = Vec::with_capacity(steps + 1);
    let mut y = *x0;
    path.push(y);
    for k in 0..steps {
        let t = s + k as f64 * dt;
        y = rk4_step(v, &y, t, dt);
        if !y.is_finite() {
            return Err(Error::NonFinite {
                time: t + dt,
                context: format!("characteristic from {x0}"),
            });
        }
        path.push(y);
    }
    Ok(path)
}

/// Per-atom trajectories sampled at observation times.
#[derive(Clone, Debug)]
pub struct TrajectoryBundle {
    times: Vec<f64>,
    weights: Vec<f64>,
    /// atom-major: `states[a * times.len() + t]`
    states: Vec<HPoint>,
}

impl TrajectoryBundle {
    pub fn from_parts(times: Vec<f64>, weights: Vec<f64>, states: Vec<HPoint>) -> Result<Self> {
        if times.is_empty() || states.len() != times.len() * weights.len() {
            return Err(Error::InvalidParameter(format!(
                "bundle with {} times and {} atoms needs {} states, got {}",
                times.len(),
                weights.len(),
                times.len() * weights.len(),
                states.len()
            )));
        }
        Ok(Self {
            times,
            weights,
            states,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn n_atoms(&self) -> usize {
        self.weights.len()
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    #[inline]
    pub fn state(&self, atom: usize, t: usize) -> &HPoint {
        &self.states[atom * self.times.len() + t]
    }

    pub fn path(&self, atom: usize) -> &[HPoint] {
        let n = self.times.len();
        &self.states[atom * n..(atom + 1) * n]
    }

    /// States at time index `t` in the universal cover.
    pub fn column(&self, t: usize) -> Vec<HPoint> {
        (0..self.n_atoms()).map(|a| *self.state(a, t)).collect()
    }

    /// `e_t # η`: the projected cloud at time index `t`.
    pub fn marginal(&self, t: usize) -> ParticleCloud {
        let pts: Vec<HPoint> = (0..self.n_atoms())
            .map(|a| project(self.state(a, t)))
            .collect();
        // weights were validated when the bundle was built from a cloud
        ParticleCloud::new(pts, self.weights.clone())
            .expect("bundle weights form a probability vector")
    }

    /// `∫ f(γ(t)) dη` at time index `t`.
    pub fn integrate(&self, t: usize, f: impl Fn(&HPoint) -> f64) -> f64 {
        (0..self.n_atoms())
            .map(|a| self.weights[a] * f(self.state(a, t)))
            .sum()
    }

    /// CSV with columns `atom_id,t,x1,x2,x3,w`; states are written as
    /// integrated, in the cover.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["atom_id", "t", "x1", "x2", "x3", "w"])?;
        for a in 0..self.n_atoms() {
            for (k, t) in self.times.iter().enumerate() {
                let p = self.state(a, k);
                wr.write_record(&[
                    a.to_string(),
                    t.to_string(),
                    p.x1.to_string(),
                    p.x2.to_string(),
                    p.x3.to_string(),
                    self.weights[a].to_string(),
                ])?;
            }
        }
        wr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }
}

fn check_times(times: &[f64]) -> Result<()> {
    if times.is_empty() || times[0] < 0.0 || times.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidParameter(
            "observation times must be finite, nonnegative and nonempty".into(),
        ));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter(
            "observation times must be strictly increasing".into(),
        ));
    }
    Ok(())
}

/// Integrates every atom of `m0` from `times[0]` and records its state at
/// each observation time.
pub fn solve_continuity(
    v: &dyn DriftField,
    m0: &ParticleCloud,
    times: &[f64],
    dt: f64,
) -> Result<TrajectoryBundle> {
    solve_from_points(v, m0.points(), m0.weights().to_vec(), times, dt)
}

/// [`solve_continuity`] for explicit starting points in the cover.
pub fn solve_from_points(
    v: &dyn DriftField,
    starts: &[HPoint],
    weights: Vec<f64>,
    times: &[f64],
    dt: f64,
) -> Result<TrajectoryBundle> {
    check_times(times)?;
    let steps: Vec<usize> = times
        .windows(2)
        .map(|w| step_count(w[1] - w[0], dt))
        .collect::<Result<_>>()?;
    let nt = times.len();
    let rows: Vec<Result<Vec<HPoint>>> = starts
        .par_iter()
        .map(|x0| {
            let mut row = Vec::with_capacity(nt);
            let mut y = *x0;
            row.push(y);
            for (iv, &ns) in steps.iter().enumerate() {
                let t0 = times[iv];
                let h = (times[iv + 1] - t0) / ns.max(1) as f64;
                for k in 0..ns {
                    let t = t0 + k as f64 * h;
                    y = rk4_step(v, &y, t, h);
                }
                if !y.is_finite() {
                    return Err(Error::NonFinite {
                        time: times[iv + 1],
                        context: format!("characteristic from {x0}"),
                    });
                }
                row.push(y);
            }
            Ok(row)
        })
        .collect();
    let mut states = Vec::with_capacity(starts.len() * nt);
    for r in rows {
        states.extend(r?);
    }
    TrajectoryBundle::from_parts(times.to_vec(), weights, states)
}

/// Weak-form residual of one test function at one interior time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualEntry {
    pub test: usize,
    pub time: f64,
    /// Centred difference of `∫ ζ dm_t`.
    pub lhs: f64,
    /// `∫ v · D_H ζ dm_t`.
    pub rhs: f64,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub entries: Vec<ResidualEntry>,
    pub max_residual: f64,
}

/// Compares `d/dt ∫ ζ dm_t` (centred differences between observation
/// times) with `∫ v · D_H ζ dm_t` at every interior observation time.
pub fn weak_residual(
    bundle: &TrajectoryBundle,
    v: &dyn DriftField,
    tests: &[&dyn TestFunction],
) -> ResidualReport {
    let times = bundle.times();
    let nt = times.len();
    let mut entries = Vec::new();
    for (ti, zeta) in tests.iter().enumerate() {
        let integrals: Vec<f64> = (0..nt)
            .map(|k| {
                par_sum(bundle.n_atoms(), |a| {
                    bundle.weights()[a] * zeta.value(bundle.state(a, k))
                })
            })
            .collect();
        for k in 1..nt.saturating_sub(1) {
            let lhs = (integrals[k + 1] - integrals[k - 1]) / (times[k + 1] - times[k - 1]);
            let t = times[k];
            let rhs = par_sum(bundle.n_atoms(), |a| {
                let y = bundle.state(a, k);
                let vv = v.eval(y, t);
                let g = zeta.horizontal_gradient(y);
                bundle.weights()[a] * (vv[0] * g[0] + vv[1] * g[1])
            });
            entries.push(ResidualEntry {
                test: ti,
                time: t,
                lhs,
                rhs,
                residual: (lhs - rhs).abs(),
            });
        }
    }
    let max_residual = entries.iter().map(|e| e.residual).fold(0.0, f64::max);
    ResidualReport {
        entries,
        max_residual,
    }
}

/// Parameters of [`mollified_system_check`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MollifiedConfig {
    pub epsilon: f64,
    pub resolution: Resolution,
    pub times: Vec<f64>,
    pub dt: f64,
    /// Atoms sampled from `m^ε_0` for the mollified characteristics.
    pub n_atoms: usize,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JensenEntry {
    pub time: f64,
    pub p: f64,
    /// `∫ |v^ε|^p m^ε`.
    pub mollified: f64,
    /// `∫ |v|^p dm`.
    pub raw: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MollifiedReport {
    pub residual: ResidualReport,
    pub raw_residual: ResidualReport,
    pub jensen: Vec<JensenEntry>,
    /// `max (mollified - raw)` over all Jensen entries.
    pub jensen_excess: f64,
    /// Discrete mass of `m^ε_t` per observation time.
    pub masses: Vec<f64>,
}

/// Draws `n` atoms from `m ∗ ρ_ε` as `y ⊕ z` with `y ~ m`, `z ~ ρ_ε`.
pub fn sample_mollified(m: &ParticleCloud, k: &Kernel, n: usize, seed: u64) -> Result<ParticleCloud> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = m.resample(n, &mut rng);
    let e = k.epsilon;
    let pts: Vec<HPoint> = base
        .points()
        .iter()
        .map(|y| {
            // ρ_1 ∝ e^{-r⁴} e^{-s3²}: r² and s3 are half-normal and normal
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            let r2 = (a * std::f64::consts::FRAC_1_SQRT_2).abs();
            let s3 = b * std::f64::consts::FRAC_1_SQRT_2;
            let phi = rng.gen::<f64>() * TAU;
            let r = r2.sqrt();
            let z = HPoint::new(e * r * phi.cos(), e * r * phi.sin(), e * e * s3);
            group_mul(y, &z)
        })
        .collect();
    ParticleCloud::uniform(pts)
}

/// Builds `m^ε`, `E^ε = (v m)^ε` and `v^ε = E^ε / m^ε` from the particle
/// flow of `v`, integrates the characteristics of `v^ε` from a sample of
/// `m^ε_0`, and certifies the mollified flow through its weak residual.
/// Also reports `∫ |v^ε|^p m^ε ≤ ∫ |v|^p dm` for `p ∈ {1, 2, 4}`.
pub fn mollified_system_check(
    m0: &ParticleCloud,
    v: &dyn DriftField,
    tests: &[&dyn TestFunction],
    cfg: &MollifiedConfig,
) -> Result<MollifiedReport> {
    let k = Kernel::new(cfg.epsilon)?;
    let raw = solve_continuity(v, m0, &cfg.times, cfg.dt)?;
    let raw_residual = weak_residual(&raw, v, tests);

    let mut slices = Vec::with_capacity(cfg.times.len());
    let mut jensen = Vec::new();
    let mut masses = Vec::new();
    for (ti, &t) in cfg.times.iter().enumerate() {
        let cloud = raw.marginal(ti);
        let vals: Vec<[f64; 2]> = (0..raw.n_atoms())
            .map(|a| v.eval(raw.state(a, ti), t))
            .collect();
        let me = density_from_cloud(&cloud, &k, cfg.resolution)?;
        let ee = vector_density_from_cloud(&cloud, &vals, &k, cfg.resolution)?;
        masses.push(me.integral());
        let ve = divide_fields(&me, ee)?;
        for p in [1.0, 2.0, 4.0] {
            let cell = cfg.resolution.cell_volume();
            let moll: f64 = me
                .values()
                .iter()
                .zip(ve[0].values().iter().zip(ve[1].values()))
                .map(|(m, (a, b))| a.hypot(*b).powf(p) * m)
                .sum::<f64>()
                * cell;
            let rawp: f64 = cloud
                .weights()
                .iter()
                .zip(&vals)
                .map(|(w, u)| w * u[0].hypot(u[1]).powf(p))
                .sum();
            jensen.push(JensenEntry {
                time: t,
                p,
                mollified: moll,
                raw: rawp,
            });
        }
        slices.push(ve);
    }
    let ve = GridDrift::new(cfg.times.clone(), slices, TimeInterp::Linear)?;
    let start = sample_mollified(m0, &k, cfg.n_atoms, cfg.seed)?;
    let bundle = solve_continuity(&ve, &start, &cfg.times, cfg.dt)?;
    let residual = weak_residual(&bundle, &ve, tests);
    let jensen_excess = jensen
        .iter()
        .map(|j| j.mollified - j.raw)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(MollifiedReport {
        residual,
        raw_residual,
        jensen,
        jensen_excess,
        masses,
    })
}

/// Uniform time grid `0, h, …, t_end`.
pub fn uniform_times(t_end: f64, steps: usize) -> Vec<f64> {
    (0..=steps)
        .map(|k| t_end * k as f64 / steps as f64)
        .collect()
}
