//! `verify-all`: cheap end-to-end checks of every solver.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::path::Path;

use heis_mfg::continuity::{solve_continuity, uniform_times, weak_residual, RotatingDrift};
use heis_mfg::hjb::{solve_hjb, ControlDisk, FnCost};
use heis_mfg::mfg::{benchmark_m0, fixed_point};
use heis_mfg::testfn::{SmoothFn, TestFunction};
use heis_mfg::viscous::{law_distance_curve, SdeConfig};
use heis_mfg::{group_mul, h_dist, inverse, pavage, HPoint, ParticleCloud, Resolution};

use crate::config::{quick_mfg, ConfigFile};
use crate::{write_json, Status};

#[derive(Serialize)]
struct Check {
    name: &'static str,
    value: f64,
    limit: f64,
    passed: bool,
}

fn check(name: &'static str, value: f64, limit: f64) -> Check {
    let passed = value <= limit;
    println!("{} {name}: {value:e} (limit {limit:e})", if passed { "PASS" } else { "FAIL" });
    Check {
        name,
        value,
        limit,
        passed,
    }
}

fn random_point(rng: &mut ChaCha8Rng, r: f64) -> HPoint {
    HPoint::new(
        rng.gen_range(-r..r),
        rng.gen_range(-r..r),
        rng.gen_range(-r..r),
    )
}

pub fn run(file: &ConfigFile, seed: u64, out: &Path) -> anyhow::Result<Status> {
    let mut checks = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut assoc: f64 = 0.0;
    let mut inv: f64 = 0.0;
    let mut left: f64 = 0.0;
    let mut pav: f64 = 0.0;
    for _ in 0..1000 {
        let (x, y, z) = (
            random_point(&mut rng, 2.0),
            random_point(&mut rng, 2.0),
            random_point(&mut rng, 2.0),
        );
        let a = group_mul(&group_mul(&x, &y), &z);
        let b = group_mul(&x, &group_mul(&y, &z));
        assoc = assoc.max(a.max_abs_diff(&b));
        inv = inv.max(group_mul(&x, &inverse(&x)).max_abs_diff(&HPoint::ORIGIN));
        left = left.max((h_dist(&group_mul(&z, &x), &group_mul(&z, &y)) - h_dist(&x, &y)).abs());
        let w = random_point(&mut rng, 5.0);
        pav = pav.max(pavage(&w).reconstruct().max_abs_diff(&w));
    }
    checks.push(check("group associativity", assoc, 1e-12));
    checks.push(check("group inverse", inv, 1e-12));
    checks.push(check("left-invariant distance", left, 1e-12));
    checks.push(check("pavage reconstruction", pav, 1e-12));

    let m0 = ParticleCloud::sample_uniform(2000, seed)?;
    let times = uniform_times(0.5, 5);
    let v = RotatingDrift { amp: 0.5 };
    let b = solve_continuity(&v, &m0, &times, 0.01)?;
    let theta = SmoothFn::theta(1.0);
    let tests: [&dyn TestFunction; 1] = [&theta];
    let r = weak_residual(&b, &v, &tests);
    checks.push(check("rotating-drift weak residual", r.max_residual, 5e-2));

    let zero = FnCost {
        running: SmoothFn::zero(),
        terminal: SmoothFn::zero(),
    };
    let u = solve_hjb(
        &zero,
        &ControlDisk::rings(1.0, 2, 8)?,
        Resolution::cube(6)?,
        &uniform_times(1.0, 3),
    )?;
    checks.push(check("zero-data value function", u.sup(), 0.0));

    let mcfg = file.mfg.clone().unwrap_or_else(quick_mfg);
    let mm0 = benchmark_m0(mcfg.n_atoms, seed)?;
    let state = fixed_point(&mm0, &mcfg.coupling, &mcfg.solver)?;
    let first = state.residuals[0];
    let last = *state.residuals.last().expect("at least one iteration");
    checks.push(check("fixed-point residual decrease", last / first, 1.0));
    let mass_err = (0..state.n_times())
        .map(|t| (state.flow(t).total_mass() - 1.0).abs())
        .fold(0.0, f64::max);
    checks.push(check("flow mass", mass_err, 1e-12));

    let base = SdeConfig {
        sigma: 0.0,
        dt: 0.01,
        n_paths: 200,
        seed,
    };
    let rep = law_distance_curve(&v, &m0, &[0.0], &uniform_times(0.2, 2), &base)?;
    let d0 = rep.rows[0].distances.iter().copied().fold(0.0, f64::max);
    checks.push(check("zero-viscosity law distance", d0, 1e-12));

    let all = checks.iter().all(|c| c.passed);
    write_json(&out.join("verify.json"), &checks)?;
    if all {
        Ok(Status::Ok)
    } else {
        anyhow::bail!("{} check(s) failed", checks.iter().filter(|c| !c.passed).count())
    }
}
