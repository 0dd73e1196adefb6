use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use heis_mfg::continuity::{solve_continuity, uniform_times, weak_residual, DriftSpec};
use heis_mfg::hjb::{solve_hjb, ValueFunction};
use heis_mfg::mfg::{fixed_point, flow_holder_fit, mild_certificate, MfgManifest};
use heis_mfg::testfn::TestFunction;
use heis_mfg::viscous::{law_distance_curve, SdeConfig};
use heis_mfg::{group_mul, inverse, pavage, torus_dist, HPoint};

mod config;
mod verify;

use config::{ConfigFile, ContinuityConfig, GeomConfig, HjbConfig, MfgRunConfig, ViscousConfig};

const SAMPLE_POINTS: &str = include_str!("../data/sample_points.csv");

#[derive(Parser, Debug)]
#[command(name = "heis-mfg", version, about = "Continuity equation and mean field game solvers on the Heisenberg torus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON config with one object per subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Allow writing into a non-empty output directory.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Pavage, group products and torus distances of a point list.
    Geom,
    /// Particle solution of the continuity equation and its weak residual.
    Continuity,
    /// Semi-Lagrangian value function for closed-form costs.
    Hjb,
    /// Fictitious-play mean field game run.
    Mfg,
    /// Vanishing-viscosity law comparison.
    Viscous,
    /// Small self-checks of every solver.
    VerifyAll,
}

/// Outcome of a run that completed without error.
enum Status {
    Ok,
    NotConverged,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::NotConverged) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn load_config(path: Option<&Path>) -> anyhow::Result<ConfigFile> {
    match path {
        None => Ok(ConfigFile::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

fn run(cli: &Cli) -> anyhow::Result<Status> {
    if let Some(n) = cli.common.threads {
        anyhow::ensure!(n > 0, "--threads must be positive");
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let file = load_config(cli.common.config.as_deref())?;
    let c = &cli.common;
    match cli.command {
        Command::Geom => cmd_geom(file.geom.unwrap_or_default(), c),
        Command::Continuity => {
            let mut cfg = file.continuity.context("config has no continuity section")?;
            if let Some(s) = c.seed {
                cfg.seed = s;
            }
            cmd_continuity(cfg, c)
        }
        Command::Hjb => cmd_hjb(file.hjb.context("config has no hjb section")?, c),
        Command::Mfg => {
            let mut cfg = file.mfg.unwrap_or_else(MfgRunConfig::benchmark);
            if let Some(s) = c.seed {
                cfg.seed = s;
            }
            cmd_mfg(cfg, c)
        }
        Command::Viscous => {
            let mut cfg = file.viscous.context("config has no viscous section")?;
            if let Some(s) = c.seed {
                cfg.seed = s;
            }
            cmd_viscous(cfg, c)
        }
        Command::VerifyAll => verify::run(&file, c.seed.unwrap_or(0), &prepare_out(c)?),
    }
}

/// Creates the output directory, refusing to write into a non-empty one
/// unless `--force` is given. Called only after validation.
fn prepare_out(c: &Common) -> anyhow::Result<PathBuf> {
    let dir = &c.out;
    if dir.exists() {
        anyhow::ensure!(dir.is_dir(), "{} exists and is not a directory", dir.display());
        let occupied = fs::read_dir(dir)?.next().is_some();
        if occupied && !c.force {
            bail!(
                "output directory {} is not empty; pass --force to overwrite",
                dir.display()
            );
        }
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir.clone())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut f = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    Ok(())
}

fn read_points(text: &str, source: &str) -> anyhow::Result<Vec<HPoint>> {
    #[derive(serde::Deserialize)]
    struct Row {
        x1: f64,
        x2: f64,
        x3: f64,
    }
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut pts = Vec::new();
    for (i, rec) in rd.deserialize::<Row>().enumerate() {
        // header is row 1
        let r = rec.map_err(|e| anyhow::anyhow!("{source}: row {}: {e}", i + 2))?;
        let p = HPoint::new(r.x1, r.x2, r.x3);
        anyhow::ensure!(p.is_finite(), "{source}: row {}: non-finite coordinate", i + 2);
        pts.push(p);
    }
    Ok(pts)
}

#[derive(Serialize)]
struct GeomManifest {
    n_points: usize,
    max_reconstruction_error: f64,
    files: Vec<&'static str>,
}

fn cmd_geom(cfg: GeomConfig, c: &Common) -> anyhow::Result<Status> {
    let (text, source) = match &cfg.points {
        Some(p) => (
            fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
            p.display().to_string(),
        ),
        None => (SAMPLE_POINTS.to_string(), "bundled sample points".to_string()),
    };
    let pts = read_points(&text, &source)?;
    let out = prepare_out(c)?;

    let mut w = csv::Writer::from_path(out.join("pavage.csv"))?;
    w.write_record(["x1", "x2", "x3", "n1", "n2", "n3", "q1", "q2", "q3"])?;
    let mut max_err: f64 = 0.0;
    for p in &pts {
        let d = pavage(p);
        max_err = max_err.max(d.reconstruct().max_abs_diff(p));
        w.write_record([
            p.x1.to_string(),
            p.x2.to_string(),
            p.x3.to_string(),
            d.n[0].to_string(),
            d.n[1].to_string(),
            d.n[2].to_string(),
            d.q.x1.to_string(),
            d.q.x2.to_string(),
            d.q.x3.to_string(),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(out.join("group_table.csv"))?;
    w.write_record(["i", "j", "p1", "p2", "p3", "inv1", "inv2", "inv3"])?;
    for (i, p) in pts.iter().enumerate() {
        let j = (i + 1) % pts.len();
        let prod = group_mul(p, &pts[j]);
        let inv = inverse(p);
        w.write_record([
            i.to_string(),
            j.to_string(),
            prod.x1.to_string(),
            prod.x2.to_string(),
            prod.x3.to_string(),
            inv.x1.to_string(),
            inv.x2.to_string(),
            inv.x3.to_string(),
        ])?;
    }
    w.flush()?;

    let mut files = vec!["pavage.csv", "group_table.csv"];
    if cfg.distances {
        let mut w = csv::Writer::from_path(out.join("torus_dist.csv"))?;
        w.write_record(["i", "j", "d"])?;
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                w.write_record([
                    i.to_string(),
                    j.to_string(),
                    torus_dist(&pts[i], &pts[j]).to_string(),
                ])?;
            }
        }
        w.flush()?;
        files.push("torus_dist.csv");
    }
    write_json(
        &out.join("manifest.json"),
        &GeomManifest {
            n_points: pts.len(),
            max_reconstruction_error: max_err,
            files,
        },
    )?;
    Ok(Status::Ok)
}

#[derive(Serialize)]
struct ContinuityManifest<'a> {
    config: &'a ContinuityConfig,
    max_residual: f64,
    passed: Option<bool>,
}

fn cmd_continuity(cfg: ContinuityConfig, c: &Common) -> anyhow::Result<Status> {
    let drift = cfg.validate()?;
    let out = prepare_out(c)?;
    let m0 = cfg.m0.build(cfg.seed)?;
    let v = drift.build();
    let times = uniform_times(cfg.horizon, cfg.steps);
    let bundle = solve_continuity(&*v, &m0, &times, cfg.dt)?;
    let tests: Vec<&dyn TestFunction> = cfg.tests.iter().map(|t| t as &dyn TestFunction).collect();
    let report = weak_residual(&bundle, &*v, &tests);

    let mut w = csv::Writer::from_path(out.join("residuals.csv"))?;
    w.write_record(["test", "t", "lhs", "rhs", "residual"])?;
    for e in &report.entries {
        w.write_record([
            e.test.to_string(),
            e.time.to_string(),
            e.lhs.to_string(),
            e.rhs.to_string(),
            e.residual.to_string(),
        ])?;
    }
    w.flush()?;
    if cfg.write_bundle {
        bundle.save_csv(&out.join("bundle.csv"))?;
    }
    let passed = cfg.threshold.map(|t| report.max_residual <= t);
    write_json(
        &out.join("manifest.json"),
        &ContinuityManifest {
            config: &cfg,
            max_residual: report.max_residual,
            passed,
        },
    )?;
    println!("max weak residual {:e}", report.max_residual);
    Ok(match passed {
        Some(false) => Status::NotConverged,
        _ => Status::Ok,
    })
}

fn cmd_hjb(cfg: HjbConfig, c: &Common) -> anyhow::Result<Status> {
    cfg.validate()?;
    let bound = cfg.cost.running.sup_bound() + cfg.cost.terminal.sup_bound();
    let controls = cfg.controls.build(bound, cfg.horizon)?;
    let out = prepare_out(c)?;
    let times = uniform_times(cfg.horizon, cfg.steps);
    let u: ValueFunction = solve_hjb(&cfg.cost, &controls, cfg.resolution, &times)?;
    u.save(&out)?;
    println!(
        "sup |u| = {:e} (a priori bound {:e})",
        u.sup(),
        u.a_priori_bound()
    );
    Ok(Status::Ok)
}

fn cmd_mfg(cfg: MfgRunConfig, c: &Common) -> anyhow::Result<Status> {
    cfg.validate()?;
    let out = prepare_out(c)?;
    let m0 = heis_mfg::mfg::benchmark_m0(cfg.n_atoms, cfg.seed)?;
    let state = fixed_point(&m0, &cfg.coupling, &cfg.solver)?;
    let holder = flow_holder_fit(&state.bundles, cfg.holder_atoms)?;
    let cert = mild_certificate(
        &state,
        &cfg.coupling,
        &m0,
        cfg.certificate_atoms,
        cfg.solver.response.dt(),
    )?;
    let manifest = MfgManifest::build(&state, &cfg.coupling, &cfg.solver, cfg.n_atoms, holder, &cert);
    manifest.save(&out.join("manifest.json"))?;

    let mut w = csv::Writer::from_path(out.join("residuals.csv"))?;
    w.write_record(["iteration", "residual", "c0"])?;
    for (k, (r, c0)) in state.residuals.iter().zip(&state.c0_history).enumerate() {
        w.write_record([(k + 1).to_string(), r.to_string(), c0.to_string()])?;
    }
    w.flush()?;
    state.u.save(&out.join("value"))?;
    if cfg.dump_flow {
        let dir = out.join("flow");
        fs::create_dir_all(&dir)?;
        for t in 0..state.n_times() {
            state.flow(t).save_csv(&dir.join(format!("m_{t:04}.csv")))?;
        }
    }
    println!(
        "{} after {} iterations, residual {:e}, certificate gap {:e}",
        if state.converged { "converged" } else { "not converged" },
        state.iterations,
        state.residuals.last().copied().unwrap_or(f64::NAN),
        cert.max_gap
    );
    Ok(if state.converged {
        Status::Ok
    } else {
        Status::NotConverged
    })
}

fn cmd_viscous(cfg: ViscousConfig, c: &Common) -> anyhow::Result<Status> {
    let drift: DriftSpec = cfg.validate()?;
    let out = prepare_out(c)?;
    let m0 = cfg.m0.build(cfg.seed)?;
    let v = drift.build();
    let times = uniform_times(cfg.horizon, cfg.steps);
    let base = SdeConfig {
        sigma: 0.0,
        dt: cfg.dt,
        n_paths: cfg.n_paths,
        seed: cfg.seed,
    };
    let report = law_distance_curve(&*v, &m0, &cfg.sigmas, &times, &base)?;
    report.save(&out.join("report.json"))?;
    let mut w = csv::Writer::from_path(out.join("distances.csv"))?;
    w.write_record(["sigma", "t", "d1", "second_moment"])?;
    for row in &report.rows {
        for (k, t) in report.times.iter().enumerate() {
            w.write_record([
                row.sigma.to_string(),
                t.to_string(),
                row.distances[k].to_string(),
                row.second_moments[k].to_string(),
            ])?;
        }
    }
    w.flush()?;
    write_json(
        &out.join("manifest.json"),
        &ViscousManifest {
            config: &cfg,
            files: vec!["report.json", "distances.csv"],
        },
    )?;
    Ok(Status::Ok)
}

#[derive(Serialize)]
struct ViscousManifest<'a> {
    config: &'a ViscousConfig,
    files: Vec<&'static str>,
}
