use serde::{Deserialize, Serialize};
use std::path::PathBuf;

use heis_mfg::continuity::DriftSpec;
use heis_mfg::hjb::FnCost;
use heis_mfg::mfg::{benchmark_m0, ControlSpec, Coupling, MfgConfig, RingSpacing};
use heis_mfg::testfn::SmoothFn;
use heis_mfg::{HPoint, ParticleCloud, Resolution};

/// Whole config document; each subcommand reads its own section.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub geom: Option<GeomConfig>,
    #[serde(default)]
    pub continuity: Option<ContinuityConfig>,
    #[serde(default)]
    pub hjb: Option<HjbConfig>,
    #[serde(default)]
    pub mfg: Option<MfgRunConfig>,
    #[serde(default)]
    pub viscous: Option<ViscousConfig>,
}

fn positive(name: &str, v: f64) -> anyhow::Result<()> {
    anyhow::ensure!(v > 0.0 && v.is_finite(), "{name} must be positive, got {v}");
    Ok(())
}

fn nonzero(name: &str, v: usize) -> anyhow::Result<()> {
    anyhow::ensure!(v > 0, "{name} must be positive");
    Ok(())
}

/// Initial measure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CloudSpec {
    /// i.i.d. uniform atoms on `[0,1)^3`.
    Uniform { n: usize },
    /// Cell-centred lattice.
    Lattice { n1: usize, n2: usize, n3: usize },
    /// `1 + ½ cos(2πx1) cos(2πx2)` by rejection sampling.
    Benchmark { n: usize },
    Dirac { x: [f64; 3] },
}

impl CloudSpec {
    pub fn validate(&self) -> anyhow::Result<()> {
        match *self {
            CloudSpec::Uniform { n } | CloudSpec::Benchmark { n } => nonzero("atom count", n),
            CloudSpec::Lattice { n1, n2, n3 } => {
                anyhow::ensure!(n1 * n2 * n3 > 0, "lattice sizes must be positive");
                Ok(())
            }
            CloudSpec::Dirac { x } => {
                anyhow::ensure!(x.iter().all(|c| c.is_finite()), "non-finite dirac location");
                Ok(())
            }
        }
    }

    pub fn build(&self, seed: u64) -> heis_mfg::Result<ParticleCloud> {
        match *self {
            CloudSpec::Uniform { n } => ParticleCloud::sample_uniform(n, seed),
            CloudSpec::Lattice { n1, n2, n3 } => ParticleCloud::regular_lattice(n1, n2, n3),
            CloudSpec::Benchmark { n } => benchmark_m0(n, seed),
            CloudSpec::Dirac { x } => Ok(ParticleCloud::dirac(HPoint::from_array(x))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeomConfig {
    /// CSV with header `x1,x2,x3`; the bundled sample points when absent.
    #[serde(default)]
    pub points: Option<PathBuf>,
    /// Also write the pairwise torus-distance matrix.
    #[serde(default = "yes")]
    pub distances: bool,
}

fn yes() -> bool {
    true
}

impl Default for GeomConfig {
    fn default() -> Self {
        Self {
            points: None,
            distances: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuityConfig {
    pub drift: Option<DriftSpec>,
    pub m0: CloudSpec,
    pub horizon: f64,
    /// Number of observation intervals.
    pub steps: usize,
    pub dt: f64,
    #[serde(default = "default_tests")]
    pub tests: Vec<SmoothFn>,
    /// Exit with status 2 when the weak residual exceeds this.
    #[serde(default)]
    pub threshold: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub write_bundle: bool,
}

pub fn default_tests() -> Vec<SmoothFn> {
    vec![
        SmoothFn::theta(1.0),
        SmoothFn::Trig {
            amp: 1.0,
            k1: 1,
            k2: 1,
            phase: 0.3,
        },
    ]
}

impl ContinuityConfig {
    pub fn validate(&self) -> anyhow::Result<DriftSpec> {
        let drift = self
            .drift
            .ok_or_else(|| anyhow::anyhow!("continuity config has no drift"))?;
        drift.validate()?;
        self.m0.validate()?;
        positive("horizon", self.horizon)?;
        positive("dt", self.dt)?;
        nonzero("steps", self.steps)?;
        anyhow::ensure!(!self.tests.is_empty(), "at least one test function is required");
        if let Some(t) = self.threshold {
            positive("threshold", t)?;
        }
        heis_mfg::continuity::step_count(self.horizon / self.steps as f64, self.dt)?;
        Ok(drift)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HjbConfig {
    pub resolution: Resolution,
    pub horizon: f64,
    pub steps: usize,
    pub cost: FnCost,
    pub controls: ControlSpec,
}

impl HjbConfig {
    pub fn validate(&self) -> anyhow::Result<()> {
        Resolution::new(self.resolution.n1, self.resolution.n2, self.resolution.n3)?;
        positive("horizon", self.horizon)?;
        nonzero("steps", self.steps)?;
        validate_controls(&self.controls)
    }
}

fn validate_controls(c: &ControlSpec) -> anyhow::Result<()> {
    nonzero("n_rings", c.n_rings)?;
    nonzero("per_ring", c.per_ring)?;
    if let Some(r) = c.radius {
        positive("control radius", r)?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MfgRunConfig {
    pub coupling: Coupling,
    pub solver: MfgConfig,
    pub n_atoms: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_holder_atoms")]
    pub holder_atoms: usize,
    #[serde(default = "default_certificate_atoms")]
    pub certificate_atoms: usize,
    #[serde(default)]
    pub dump_flow: bool,
}

fn default_holder_atoms() -> usize {
    2000
}

fn default_certificate_atoms() -> usize {
    200
}

impl MfgRunConfig {
    pub fn benchmark() -> Self {
        Self {
            coupling: Coupling::benchmark(),
            solver: MfgConfig::benchmark(),
            n_atoms: 20_000,
            seed: 0,
            holder_atoms: default_holder_atoms(),
            certificate_atoms: default_certificate_atoms(),
            dump_flow: false,
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        let c = &self.coupling;
        positive("epsilon", c.kernel.epsilon)?;
        anyhow::ensure!(
            c.weight_f.is_finite() && c.weight_g.is_finite(),
            "coupling weights must be finite"
        );
        Resolution::new(c.resolution.n1, c.resolution.n2, c.resolution.n3)?;
        c.kernel.check_halo(heis_mfg::mollifier::DEFAULT_HALO)?;
        let r = &self.solver.response;
        positive("horizon", r.horizon)?;
        nonzero("steps", r.steps)?;
        nonzero("substeps", r.substeps)?;
        validate_controls(&r.controls)?;
        positive("tol", self.solver.tol)?;
        nonzero("max_iter", self.solver.max_iter)?;
        nonzero("n_atoms", self.n_atoms)?;
        nonzero("holder_atoms", self.holder_atoms)?;
        nonzero("certificate_atoms", self.certificate_atoms)?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViscousConfig {
    pub drift: Option<DriftSpec>,
    pub m0: CloudSpec,
    pub sigmas: Vec<f64>,
    pub horizon: f64,
    /// Number of observation intervals.
    pub steps: usize,
    pub dt: f64,
    pub n_paths: usize,
    #[serde(default)]
    pub seed: u64,
}

impl ViscousConfig {
    pub fn validate(&self) -> anyhow::Result<DriftSpec> {
        let drift = self
            .drift
            .ok_or_else(|| anyhow::anyhow!("viscous config has no drift"))?;
        drift.validate()?;
        self.m0.validate()?;
        anyhow::ensure!(!self.sigmas.is_empty(), "sigma list is empty");
        for &s in &self.sigmas {
            anyhow::ensure!((0.0..1.0).contains(&s), "sigma = {s} outside [0, 1)");
        }
        positive("horizon", self.horizon)?;
        positive("dt", self.dt)?;
        nonzero("steps", self.steps)?;
        nonzero("n_paths", self.n_paths)?;
        heis_mfg::continuity::step_count(self.horizon / self.steps as f64, self.dt)?;
        Ok(drift)
    }
}

/// Small configuration used by `verify-all` when the file has no `mfg`
/// section.
pub fn quick_mfg() -> MfgRunConfig {
    let mut c = MfgRunConfig::benchmark();
    c.coupling.resolution = Resolution::cube(8).expect("positive");
    c.solver.response.steps = 8;
    c.solver.response.substeps = 1;
    c.solver.response.controls = ControlSpec {
        radius: None,
        n_rings: 8,
        per_ring: 8,
        spacing: RingSpacing::Quadratic,
    };
    c.solver.max_iter = 10;
    c.solver.tol = 1e-2;
    c.n_atoms = 2000;
    c.holder_atoms = 500;
    c.certificate_atoms = 20;
    c
}
