//! Euler-Maruyama simulation of the horizontal diffusion
//!
//! ```text
//! dY = B(Y) (v(Y, t) dt + √(2σ) dW),   B(Y) = [X₁ X₂](Y),
//! ```
//!
//! and comparison of its torus law with the deterministic push-forward as
//! `σ → 0`.
//!
//! Every path owns a ChaCha stream keyed by `(seed, path)`; the increments
//! of step `n` are the `n`-th pair drawn from it. Runs that differ only in
//! `σ` therefore share their Brownian paths.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use std::path::Path;

use crate::continuity::{step_count, DriftField, TrajectoryBundle};
use crate::group::{horizontal_velocity, torus_dist, HPoint};
use crate::measure::ParticleCloud;
use crate::mfg::{holder_from_pairs, HolderFit};
use crate::stats::par_sum;
use crate::transport::{kantorovich_d1_with_cap, sinkhorn_d1, DEFAULT_LP_CAP};
use crate::{Error, Result};

/// Stream reserved for resampling initial points.
const INIT_STREAM: u64 = u64::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdeConfig {
    pub sigma: f64,
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
}

impl SdeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.sigma) {
            return Err(Error::InvalidParameter(format!(
                "sigma = {} outside [0, 1)",
                self.sigma
            )));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidParameter(format!("dt = {} must be positive", self.dt)));
        }
        if self.n_paths == 0 {
            return Err(Error::InvalidParameter("n_paths must be positive".into()));
        }
        Ok(())
    }

    pub fn with_sigma(&self, sigma: f64) -> Self {
        Self { sigma, ..*self }
    }
}

fn path_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Two independent standard normals (Box-Muller), always consuming two
/// uniforms so that step `n` reads a fixed position of the stream.
fn normal_pair(rng: &mut ChaCha8Rng) -> [f64; 2] {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen::<f64>();
    let r = (-2.0 * u1.ln()).sqrt();
    [r * (TAU * u2).cos(), r * (TAU * u2).sin()]
}

/// Initial points: `n_paths` draws from `m0` by weight.
pub fn initial_points(m0: &ParticleCloud, cfg: &SdeConfig) -> Vec<HPoint> {
    let mut rng = path_rng(cfg.seed, INIT_STREAM);
    m0.resample(cfg.n_paths, &mut rng).points().to_vec()
}

/// Euler-Maruyama paths observed at `times`; every observation time must
/// be reachable from `times[0]` in whole steps of `cfg.dt`. States are kept
/// in the cover.
pub fn simulate_sde(
    drift: &dyn DriftField,
    cfg: &SdeConfig,
    m0: &ParticleCloud,
    times: &[f64],
) -> Result<TrajectoryBundle> {
    cfg.validate()?;
    let starts = initial_points(m0, cfg);
    simulate_from_points(drift, cfg, &starts, times)
}

pub fn simulate_from_points(
    drift: &dyn DriftField,
    cfg: &SdeConfig,
    starts: &[HPoint],
    times: &[f64],
) -> Result<TrajectoryBundle> {
    cfg.validate()?;
    if times.is_empty() {
        return Err(Error::InvalidParameter("no observation times".into()));
    }
    let mut offsets = Vec::with_capacity(times.len());
    for w in times.windows(2) {
        offsets.push(step_count(w[1] - w[0], cfg.dt)?);
    }
    let noise = (2.0 * cfg.sigma).sqrt() * cfg.dt.sqrt();
    let dt = cfg.dt;
    let paths: Vec<Result<Vec<HPoint>>> = starts
        .par_iter()
        .enumerate()
        .map(|(p, x0)| {
            let mut rng = path_rng(cfg.seed, p as u64);
            let mut y = *x0;
            let mut t = times[0];
            let mut out = Vec::with_capacity(times.len());
            out.push(y);
            for &n in &offsets {
                for _ in 0..n {
                    let v = drift.eval(&y, t);
                    let z = normal_pair(&mut rng);
                    let a = [v[0] * dt + noise * z[0], v[1] * dt + noise * z[1]];
                    let d = horizontal_velocity(&y, a);
                    y = HPoint::new(y.x1 + d[0], y.x2 + d[1], y.x3 + d[2]);
                    t += dt;
                }
                if !y.is_finite() {
                    return Err(Error::NonFinite {
                        time: t,
                        context: format!("path {p} from {x0}"),
                    });
                }
                out.push(y);
            }
            Ok(out)
        })
        .collect();
    let mut states = Vec::with_capacity(starts.len() * times.len());
    for p in paths {
        states.extend(p?);
    }
    let w = vec![1.0 / starts.len() as f64; starts.len()];
    TrajectoryBundle::from_parts(times.to_vec(), w, states)
}

/// Regularisation used above the exact-LP cap.
pub const LAW_SINKHORN_REG: f64 = 1e-3;

/// `d₁` between two equally sized empirical torus laws: exact when the
/// problem fits under the LP cap, otherwise the rounded Sinkhorn upper
/// bound.
pub fn empirical_d1(a: &ParticleCloud, b: &ParticleCloud) -> Result<f64> {
    if a.len() * b.len() <= DEFAULT_LP_CAP {
        Ok(kantorovich_d1_with_cap(a, b, DEFAULT_LP_CAP)?.cost)
    } else {
        Ok(sinkhorn_d1(a, b, LAW_SINKHORN_REG)?.cost)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmaRow {
    pub sigma: f64,
    /// `d₁(law_σ(t), law_0(t))` per observation time.
    pub distances: Vec<f64>,
    /// Hölder fit of `t ↦ law_σ(t)`.
    pub holder: HolderFit,
    /// `E|Y_t|²` in the cover per observation time.
    pub second_moments: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LawReport {
    pub times: Vec<f64>,
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub rows: Vec<SigmaRow>,
}

impl LawReport {
    pub fn row(&self, sigma: f64) -> Option<&SigmaRow> {
        self.rows.iter().find(|r| r.sigma == sigma)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(f, self)?;
        Ok(())
    }
}

/// Hölder fit from the pathwise coupling bound
/// `d₁(η_s, η_t) ≤ (1/n) Σ_i d_T(Y_i(s), Y_i(t))` over all time pairs.
pub fn bundle_holder_fit(b: &TrajectoryBundle) -> Result<HolderFit> {
    let times = b.times();
    let nt = times.len();
    let mut gaps = Vec::new();
    let mut dists = Vec::new();
    for s in 0..nt {
        for t in s + 1..nt {
            let d = par_sum(b.n_atoms(), |a| {
                b.weights()[a] * torus_dist(b.state(a, s), b.state(a, t))
            });
            gaps.push(times[t] - times[s]);
            dists.push(d);
        }
    }
    holder_from_pairs(&gaps, &dists)
}

fn second_moments(b: &TrajectoryBundle) -> Vec<f64> {
    (0..b.n_times())
        .map(|t| b.integrate(t, |y| y.x1 * y.x1 + y.x2 * y.x2 + y.x3 * y.x3))
        .collect()
}

/// Law distance to the `σ = 0` Euler reference for each `σ`, with common
/// random numbers and common initial points.
pub fn law_distance_curve(
    drift: &dyn DriftField,
    m0: &ParticleCloud,
    sigmas: &[f64],
    times: &[f64],
    base: &SdeConfig,
) -> Result<LawReport> {
    for &s in sigmas {
        base.with_sigma(s).validate()?;
    }
    let reference = simulate_sde(drift, &base.with_sigma(0.0), m0, times)?;
    let ref_laws: Vec<ParticleCloud> = (0..times.len()).map(|t| reference.marginal(t)).collect();
    let mut rows = Vec::with_capacity(sigmas.len());
    for &sigma in sigmas {
        let b = simulate_sde(drift, &base.with_sigma(sigma), m0, times)?;
        let mut distances = Vec::with_capacity(times.len());
        for (t, r) in ref_laws.iter().enumerate() {
            distances.push(if sigma == 0.0 {
                0.0
            } else {
                empirical_d1(&b.marginal(t), r)?
            });
        }
        rows.push(SigmaRow {
            sigma,
            distances,
            holder: bundle_holder_fit(&b)?,
            second_moments: second_moments(&b),
        });
    }
    Ok(LawReport {
        times: times.to_vec(),
        dt: base.dt,
        n_paths: base.n_paths,
        seed: base.seed,
        rows,
    })
}
