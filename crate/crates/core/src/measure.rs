//! Weighted atomic probability measures on the Heisenberg torus.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

use crate::grid::{GridField, Resolution};
use crate::group::{project, HPoint};
use crate::mollifier::{convolve_atoms, Kernel, DEFAULT_HALO};
use crate::{Error, Result};

/// Tolerance on `Σ w = 1`.
pub const MASS_TOL: f64 = 1e-12;

/// Atoms stored by their fundamental-domain representative.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleCloud {
    points: Vec<HPoint>,
    weights: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CloudRow {
    x1: f64,
    x2: f64,
    x3: f64,
    w: f64,
}

/// Neumaier-compensated sum, so that `n` copies of `1/n` add up to 1.
pub(crate) fn mass(w: &[f64]) -> f64 {
    let mut s = 0.0f64;
    let mut c = 0.0f64;
    for &x in w {
        let t = s + x;
        if s.abs() >= x.abs() {
            c += (s - t) + x;
        } else {
            c += (x - t) + s;
        }
        s = t;
    }
    s + c
}

impl ParticleCloud {
    /// Projects every point and checks the weights form a probability
    /// vector.
    pub fn new(points: Vec<HPoint>, weights: Vec<f64>) -> Result<Self> {
        if points.len() != weights.len() {
            return Err(Error::InvalidParameter(format!(
                "{} points but {} weights",
                points.len(),
                weights.len()
            )));
        }
        if points.is_empty() {
            return Err(Error::InvalidParameter("cloud has no atoms".into()));
        }
        if let Some(p) = points.iter().find(|p| !p.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite atom {p}")));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidParameter(
                "weights must be finite and nonnegative".into(),
            ));
        }
        let total = mass(&weights);
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidParameter(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        let points = points.iter().map(project).collect();
        Ok(Self { points, weights })
    }

    /// Like [`new`](Self::new) but rescales the weights to unit mass.
    pub fn normalized(points: Vec<HPoint>, weights: Vec<f64>) -> Result<Self> {
        let total = mass(&weights);
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "total weight {total} cannot be normalised"
            )));
        }
        Self::new(points, weights.into_iter().map(|w| w / total).collect())
    }

    pub fn uniform(points: Vec<HPoint>) -> Result<Self> {
        let n = points.len();
        Self::new(points, vec![1.0 / n as f64; n])
    }

    pub fn dirac(x: HPoint) -> Self {
        Self {
            points: vec![project(&x)],
            weights: vec![1.0],
        }
    }

    /// `n` independent uniform atoms in `[0,1)^3`.
    pub fn sample_uniform(n: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = (0..n)
            .map(|_| HPoint::new(rng.gen(), rng.gen(), rng.gen()))
            .collect();
        Self::uniform(pts)
    }

    /// Cell-centred `n1 × n2 × n3` lattice of equal atoms.
    pub fn regular_lattice(n1: usize, n2: usize, n3: usize) -> Result<Self> {
        let mut pts = Vec::with_capacity(n1 * n2 * n3);
        for i in 0..n1 {
            for j in 0..n2 {
                for k in 0..n3 {
                    pts.push(HPoint::new(
                        (i as f64 + 0.5) / n1 as f64,
                        (j as f64 + 0.5) / n2 as f64,
                        (k as f64 + 0.5) / n3 as f64,
                    ));
                }
            }
        }
        Self::uniform(pts)
    }

    /// Rejection sampling of `n` equal atoms from the periodic density `f`
    /// on `[0,1)^3`, where `0 ≤ f ≤ bound`.
    pub fn sample_density(
        n: usize,
        bound: f64,
        seed: u64,
        f: impl Fn(&HPoint) -> f64,
    ) -> Result<Self> {
        if !(bound > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "rejection bound must be positive, got {bound}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts = Vec::with_capacity(n);
        let mut tries = 0usize;
        while pts.len() < n {
            let x = HPoint::new(rng.gen(), rng.gen(), rng.gen());
            let fx = f(&x);
            if fx > bound * (1.0 + 1e-12) {
                return Err(Error::InvalidParameter(format!(
                    "density {fx} exceeds rejection bound {bound} at {x}"
                )));
            }
            if rng.gen::<f64>() * bound < fx {
                pts.push(x);
            }
            tries += 1;
            if tries > 1000 * n.max(1000) {
                return Err(Error::InvalidParameter(
                    "rejection sampler accepted too few points".into(),
                ));
            }
        }
        Self::uniform(pts)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.points.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    #[inline]
    pub fn points(&self) -> &[HPoint] {
        &self.points
    }

    #[inline]
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (&HPoint, f64)> {
        self.points.iter().zip(self.weights.iter().copied())
    }

    pub fn total_mass(&self) -> f64 {
        mass(&self.weights)
    }

    /// `∫ f dm`.
    pub fn integrate(&self, f: impl Fn(&HPoint) -> f64) -> f64 {
        self.iter().map(|(p, w)| w * f(p)).sum()
    }

    /// Moves every atom through `map` and re-projects; weights unchanged.
    pub fn push_forward(&self, map: impl Fn(&HPoint) -> HPoint + Sync) -> ParticleCloud {
        let points = self.points.par_iter().map(|p| project(&map(p))).collect();
        ParticleCloud {
            points,
            weights: self.weights.clone(),
        }
    }

    /// Convex combination `Σ λ_i m_i` of clouds, as the union of their atoms
    /// with rescaled weights.
    pub fn mixture(parts: &[(&ParticleCloud, f64)]) -> Result<Self> {
        let lsum: f64 = parts.iter().map(|(_, l)| l).sum();
        if (lsum - 1.0).abs() > 1e-12 || parts.iter().any(|(_, l)| *l < 0.0) {
            return Err(Error::InvalidParameter(format!(
                "mixture coefficients must be a probability vector (sum {lsum})"
            )));
        }
        let mut points = Vec::new();
        let mut weights = Vec::new();
        for (c, l) in parts {
            points.extend_from_slice(&c.points);
            weights.extend(c.weights.iter().map(|w| w * l));
        }
        let total = mass(&weights);
        weights.iter_mut().for_each(|w| *w /= total);
        Ok(Self { points, weights })
    }

    /// `n` equal-weight atoms drawn from this cloud by weight.
    pub fn resample(&self, n: usize, rng: &mut impl Rng) -> ParticleCloud {
        let mut cdf = Vec::with_capacity(self.len());
        let mut acc = 0.0;
        for w in &self.weights {
            acc += w;
            cdf.push(acc);
        }
        let points = (0..n)
            .map(|_| {
                let u = rng.gen::<f64>() * acc;
                let i = cdf.partition_point(|c| *c <= u).min(self.len() - 1);
                self.points[i]
            })
            .collect();
        ParticleCloud {
            points,
            weights: vec![1.0 / n as f64; n],
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for (p, wt) in self.iter() {
            wr.serialize(CloudRow {
                x1: p.x1,
                x2: p.x2,
                x3: p.x3,
                w: wt,
            })?;
        }
        if self.is_empty() {
            wr.write_record(["x1", "x2", "x3", "w"])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads `x1,x2,x3,w` rows; weights are renormalised when they are
    /// within `1e-9` of unit mass (text round-off), rejected otherwise.
    pub fn read_csv<R: Read>(r: R, source_name: &str) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let mut points = Vec::new();
        let mut weights = Vec::new();
        for (row, rec) in rd.deserialize::<CloudRow>().enumerate() {
            let rec = rec.map_err(|e| Error::Parse {
                source_name: source_name.to_string(),
                row: row + 2,
                message: e.to_string(),
            })?;
            points.push(HPoint::new(rec.x1, rec.x2, rec.x3));
            weights.push(rec.w);
        }
        let total = mass(&weights);
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Parse {
                source_name: source_name.to_string(),
                row: weights.len() + 1,
                message: format!("weights sum to {total}, expected 1"),
            });
        }
        Self::normalized(points, weights)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_csv(f, &path.display().to_string())
    }
}

/// Free-function form of [`ParticleCloud::push_forward`].
pub fn push_forward(
    cloud: &ParticleCloud,
    map: impl Fn(&HPoint) -> HPoint + Sync,
) -> ParticleCloud {
    cloud.push_forward(map)
}

/// Kernel density estimate `m ∗ ρ_ε` at the nodes of `res`.
///
/// The values are point samples of the convolution with the periodised
/// measure, so the discrete integral equals 1 up to the grid's quadrature
/// error for the kernel.
pub fn density_from_cloud(cloud: &ParticleCloud, k: &Kernel, res: Resolution) -> Result<GridField> {
    let w: Vec<[f64; 1]> = cloud.weights().iter().map(|w| [*w]).collect();
    let [f] = convolve_atoms(cloud.points(), &w, k, res, DEFAULT_HALO)?;
    Ok(f)
}

/// `(v m) ∗ ρ_ε` for a vector quantity `v` carried by the atoms.
pub fn vector_density_from_cloud(
    cloud: &ParticleCloud,
    values: &[[f64; 2]],
    k: &Kernel,
    res: Resolution,
) -> Result<[GridField; 2]> {
    if values.len() != cloud.len() {
        return Err(Error::InvalidParameter(format!(
            "{} atom values for {} atoms",
            values.len(),
            cloud.len()
        )));
    }
    let w: Vec<[f64; 2]> = cloud
        .weights()
        .iter()
        .zip(values)
        .map(|(w, v)| [w * v[0], w * v[1]])
        .collect();
    convolve_atoms(cloud.points(), &w, k, res, DEFAULT_HALO)
}
