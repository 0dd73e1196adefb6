//! The homogeneous kernel `ρ_ε(x) = C(ε) exp(-‖δ_{1/ε} x‖⁴)` and group
//! convolution against it.
//!
//! Convolution is taken in the order that commutes with left lattice
//! translations, `(ψ ∗ ρ)(x) = ∫ ψ(x ⊕ z) ρ(z) dz = ∫ ψ(y) ρ(y⁻¹ ⊕ x) dy`,
//! so periodic inputs give periodic outputs. Grid fields are convolved with
//! a fixed quadrature rule on the kernel side (the kernel is far narrower
//! than a grid cell in `x3` for the scales of interest, so a rule on the
//! density grid would not resolve it). Atomic measures are convolved by
//! direct summation over atoms and their lattice translates.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::grid::{GridField, Resolution};
use crate::group::{group_mul, HPoint};
use crate::{Error, Result};

/// Default number of lattice cells searched around the fundamental domain.
pub const DEFAULT_HALO: i64 = 1;

/// Kernel mass allowed outside the halo.
pub const HALO_MASS_TOL: f64 = 1e-8;

/// Relative kernel value below which atom contributions are dropped.
const SCATTER_TOL: f64 = 1e-12;

// C(ε) quadrature: box of homogeneous half-width 8ε, spacing 0.05 in
// scaled coordinates
const NORM_RADIUS: f64 = 8.0;
const NORM_STEP: f64 = 0.05;

// kernel-side convolution rule in scaled coordinates s = δ_{1/ε} z
const RULE_STEP_H: f64 = 0.3;
const RULE_STEP_V: f64 = 0.3;
const RULE_EXTENT_H: f64 = 2.5;
const RULE_EXTENT_V: f64 = 6.0;
const RULE_PRUNE: f64 = 1e-15;

/// Deserialises from `epsilon` alone; a stored `normalizer` is recomputed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelParams")]
pub struct Kernel {
    pub epsilon: f64,
    pub normalizer: f64,
}

#[derive(Deserialize)]
struct KernelParams {
    epsilon: f64,
}

impl TryFrom<KernelParams> for Kernel {
    type Error = Error;

    fn try_from(p: KernelParams) -> Result<Self> {
        Kernel::new(p.epsilon)
    }
}

impl Kernel {
    /// Builds `ρ_ε` with `C(ε)` from quadrature of the unnormalised kernel.
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "kernel scale must be positive, got {epsilon}"
            )));
        }
        Ok(Self {
            epsilon,
            normalizer: 1.0 / unnormalized_mass(epsilon),
        })
    }

    #[inline]
    pub fn eval(&self, x: &HPoint) -> f64 {
        let e4 = self.epsilon.powi(4);
        let r2 = x.x1 * x.x1 + x.x2 * x.x2;
        self.normalizer * (-(r2 * r2 + x.x3 * x.x3) / e4).exp()
    }

    /// Euclidean gradient. Differentiating `e^{-t}` contributes a minus
    /// sign: `∇ρ_ε = -ρ_ε (4x1 r²/ε⁴, 4x2 r²/ε⁴, 2x3/ε⁴)`.
    pub fn gradient(&self, x: &HPoint) -> [f64; 3] {
        let e4 = self.epsilon.powi(4);
        let r2 = x.x1 * x.x1 + x.x2 * x.x2;
        let v = self.eval(x);
        [
            -v * 4.0 * x.x1 * r2 / e4,
            -v * 4.0 * x.x2 * r2 / e4,
            -v * 2.0 * x.x3 / e4,
        ]
    }

    pub fn horizontal_gradient(&self, x: &HPoint) -> [f64; 2] {
        let g = self.gradient(x);
        [g[0] - x.x2 * g[2], g[1] + x.x1 * g[2]]
    }

    /// Homogeneous radius outside which the kernel carries mass `tol`.
    ///
    /// In homogeneous polar coordinates the volume element is `4 s³ ds`,
    /// so the mass outside radius `Rε` is `exp(-R⁴)`.
    pub fn support_radius(&self, tol: f64) -> f64 {
        self.epsilon * (-tol.ln()).max(0.0).powf(0.25)
    }

    /// Fails when the kernel mass outside `halo` lattice cells exceeds
    /// [`HALO_MASS_TOL`].
    pub fn check_halo(&self, halo: i64) -> Result<()> {
        let support = self.support_radius(HALO_MASS_TOL);
        if halo < 1 || support > halo as f64 {
            return Err(Error::KernelTooWide { support, halo });
        }
        Ok(())
    }

    /// Constant `L` with `|ρ_ε(w⁻¹ ⊕ z) - ρ_ε(z)| ≤ L ‖w‖` for `‖w‖ ≤ 1`.
    ///
    /// Mean value bound along the Euclidean segment: the horizontal change is
    /// at most `‖w‖` and the vertical change at most `‖w‖(‖w‖ + |z_h|)`,
    /// where `|z_h|` can be restricted to the numerical support plus one.
    pub fn translation_lipschitz_bound(&self) -> f64 {
        let e = self.epsilon;
        let radial = 4.0 / e * 0.75f64.powf(0.75) * (-0.75f64).exp();
        let vertical = 2.0f64.sqrt() * (-0.5f64).exp() / (e * e);
        let reach = 2.0 + self.support_radius(SCATTER_TOL);
        self.normalizer * (radial + vertical * reach)
    }

    /// Quadrature rule `Σ w_k g(z_k) ≈ ∫ g(z) ρ_ε(z) dz` with `Σ w_k = 1`.
    pub fn quadrature_rule(&self) -> KernelRule {
        let nh = (RULE_EXTENT_H / RULE_STEP_H).round() as i64;
        let nv = (RULE_EXTENT_V / RULE_STEP_V).round() as i64;
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        for a in -nh..=nh {
            for b in -nh..=nh {
                let s1 = a as f64 * RULE_STEP_H;
                let s2 = b as f64 * RULE_STEP_H;
                let r2 = s1 * s1 + s2 * s2;
                for c in -nv..=nv {
                    let s3 = c as f64 * RULE_STEP_V;
                    let w = (-(r2 * r2 + s3 * s3)).exp();
                    if w < RULE_PRUNE {
                        continue;
                    }
                    let e = self.epsilon;
                    nodes.push(HPoint::new(e * s1, e * s2, e * e * s3));
                    weights.push(w);
                }
            }
        }
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        KernelRule { nodes, weights }
    }
}

/// `∫ exp(-‖δ_{1/ε} x‖⁴) dx` by separable trapezoid quadrature.
fn unnormalized_mass(epsilon: f64) -> f64 {
    let n = (NORM_RADIUS / NORM_STEP).round() as i64;
    // horizontal factor
    let mut h = 0.0;
    for a in -n..=n {
        for b in -n..=n {
            let s1 = a as f64 * NORM_STEP;
            let s2 = b as f64 * NORM_STEP;
            let r2 = s1 * s1 + s2 * s2;
            h += (-(r2 * r2)).exp();
        }
    }
    h *= NORM_STEP * NORM_STEP;
    // vertical factor over |s3| ≤ R²
    let nv = (NORM_RADIUS * NORM_RADIUS / NORM_STEP).round() as i64;
    let mut v = 0.0;
    for c in -nv..=nv {
        let s3 = c as f64 * NORM_STEP;
        v += (-(s3 * s3)).exp();
    }
    v *= NORM_STEP;
    // Jacobian of δ_ε
    h * v * epsilon.powi(4)
}

pub fn kernel_eval(k: &Kernel, x: &HPoint) -> f64 {
    k.eval(x)
}

/// Nodes and weights for integrating against `ρ_ε`.
#[derive(Clone, Debug)]
pub struct KernelRule {
    pub nodes: Vec<HPoint>,
    pub weights: Vec<f64>,
}

impl KernelRule {
    /// `∫ g(x ⊕ z) ρ_ε(z) dz`.
    #[inline]
    pub fn apply(&self, x: &HPoint, g: impl Fn(&HPoint) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(z, w)| w * g(&group_mul(x, z)))
            .sum()
    }
}

/// `ψ ∗ ρ_ε` sampled on the grid of `psi`.
pub fn convolve_density(psi: &GridField, k: &Kernel) -> Result<GridField> {
    convolve_density_with_halo(psi, k, DEFAULT_HALO)
}

pub fn convolve_density_with_halo(psi: &GridField, k: &Kernel, halo: i64) -> Result<GridField> {
    k.check_halo(halo)?;
    let res = psi.resolution();
    let rule = k.quadrature_rule();
    let values: Vec<f64> = (0..res.len())
        .into_par_iter()
        .map(|idx| rule.apply(&res.node_at(idx), |y| psi.lookup(y)))
        .collect();
    GridField::new(res, values)
}

/// `v^ε = (E ∗ ρ_ε) / (m ∗ ρ_ε)` componentwise.
pub fn mollified_drift(m: &GridField, e: &[GridField; 2], k: &Kernel) -> Result<[GridField; 2]> {
    let me = convolve_density(m, k)?;
    let e1 = convolve_density(&e[0], k)?;
    let e2 = convolve_density(&e[1], k)?;
    divide_fields(&me, [e1, e2])
}

/// Pointwise quotient `E / m`, rejecting vanishing denominators.
pub fn divide_fields(m: &GridField, e: [GridField; 2]) -> Result<[GridField; 2]> {
    let [mut a, mut b] = e;
    for (idx, &mv) in m.values().iter().enumerate() {
        if !(mv >= 1e-14) {
            return Err(Error::DegenerateDensity {
                value: mv,
                node: idx,
            });
        }
        a.values_mut()[idx] /= mv;
        b.values_mut()[idx] /= mv;
    }
    Ok([a, b])
}

/// `Σ_a w_a ρ_ε(p⁻¹ ⊕ x)` summed over atoms `p` and all their lattice
/// translates, sampled at the grid nodes, for `C` weight channels at once.
///
/// Atoms must lie in `[0,1)^3`. Horizontal translates are enumerated over
/// `[-halo, halo]²`; vertical translates are folded into the periodic `x3`
/// index directly.
pub fn convolve_atoms<const C: usize>(
    points: &[HPoint],
    weights: &[[f64; C]],
    k: &Kernel,
    res: Resolution,
    halo: i64,
) -> Result<[GridField; C]> {
    if points.len() != weights.len() {
        return Err(Error::InvalidParameter(format!(
            "{} atoms but {} weight rows",
            points.len(),
            weights.len()
        )));
    }
    k.check_halo(halo)?;
    const CHUNK: usize = 2048;
    let partials: Vec<Vec<f64>> = points
        .par_chunks(CHUNK)
        .zip(weights.par_chunks(CHUNK))
        .map(|(pts, ws)| {
            let mut acc = vec![0.0; C * res.len()];
            for (p, w) in pts.iter().zip(ws) {
                scatter_atom(p, w, k, res, halo, &mut acc);
            }
            acc
        })
        .collect();
    let mut total = vec![0.0; C * res.len()];
    for part in &partials {
        for (t, v) in total.iter_mut().zip(part) {
            *t += v;
        }
    }
    let mut out: [GridField; C] = std::array::from_fn(|_| GridField::zeros(res));
    for idx in 0..res.len() {
        for (c, field) in out.iter_mut().enumerate() {
            field.values_mut()[idx] = total[idx * C + c];
        }
    }
    Ok(out)
}

fn scatter_atom<const C: usize>(
    y: &HPoint,
    w: &[f64; C],
    k: &Kernel,
    res: Resolution,
    halo: i64,
    acc: &mut [f64],
) {
    let e4 = k.epsilon.powi(4);
    let radius = k.support_radius(SCATTER_TOL);
    let r4max = radius.powi(4);
    let (n1f, n2f, n3f) = (res.n1 as f64, res.n2 as f64, res.n3 as f64);
    for a in -halo..=halo {
        for b in -halo..=halo {
            let p = group_mul(&HPoint::new(a as f64, b as f64, 0.0), y);
            if p.x1 + radius < 0.0 || p.x1 - radius >= 1.0 {
                continue;
            }
            if p.x2 + radius < 0.0 || p.x2 - radius >= 1.0 {
                continue;
            }
            let i_lo = ((p.x1 - radius) * n1f).ceil().max(0.0) as usize;
            let i_hi = (((p.x1 + radius) * n1f).floor()).min(n1f - 1.0);
            let j_lo = ((p.x2 - radius) * n2f).ceil().max(0.0) as usize;
            let j_hi = (((p.x2 + radius) * n2f).floor()).min(n2f - 1.0);
            if i_hi < 0.0 || j_hi < 0.0 {
                continue;
            }
            for i in i_lo..=(i_hi as usize) {
                let x1 = i as f64 / n1f;
                let d1 = x1 - p.x1;
                for j in j_lo..=(j_hi as usize) {
                    let x2 = j as f64 / n2f;
                    let d2 = x2 - p.x2;
                    let r2 = d1 * d1 + d2 * d2;
                    let r4 = r2 * r2;
                    if r4 > r4max {
                        continue;
                    }
                    let hpart = k.normalizer * (-r4 / e4).exp();
                    // third coordinate of p⁻¹ ⊕ x is x3 - c
                    let c = p.x3 - p.x2 * x1 + p.x1 * x2;
                    let vhalf = (r4max - r4).sqrt();
                    let k_lo = ((c - vhalf) * n3f).ceil() as i64;
                    let k_hi = ((c + vhalf) * n3f).floor() as i64;
                    let base = res.index(i, j, 0);
                    // Gaussian recurrence along the column: two exponentials
                    // per column instead of one per node
                    let h = 1.0 / n3f;
                    let z0 = k_lo as f64 / n3f - c;
                    let mut val = hpart * (-(z0 * z0) / e4).exp();
                    let mut ratio = (-(2.0 * z0 * h + h * h) / e4).exp();
                    let step = (-2.0 * h * h / e4).exp();
                    let mut kk = k_lo.rem_euclid(res.n3 as i64) as usize;
                    for _ in k_lo..=k_hi {
                        let slot = (base + kk) * C;
                        for ch in 0..C {
                            acc[slot + ch] += w[ch] * val;
                        }
                        val *= ratio;
                        ratio *= step;
                        kk += 1;
                        if kk == res.n3 {
                            kk = 0;
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::{dilate, group_mul, inverse};
    use std::f64::consts::PI;

    #[test]
    fn normalizer_matches_closed_form() {
        for eps in [1.0, 0.5, 0.25, 0.1] {
            let k = Kernel::new(eps).unwrap();
            let exact = 2.0 / (PI * PI * eps.powi(4));
            assert!((k.normalizer / exact - 1.0).abs() < 1e-10, "eps {eps}");
        }
    }

    #[test]
    fn origin_and_homogeneity() {
        let k = Kernel::new(0.3).unwrap();
        assert_eq!(k.eval(&HPoint::ORIGIN), k.normalizer);
        let y = HPoint::new(0.4, -0.7, 0.2);
        let z = dilate(0.3, &y).unwrap();
        let n4 = crate::group::h_norm(&y).powi(4);
        assert!((k.eval(&z) - k.normalizer * (-n4).exp()).abs() < 1e-12 * k.normalizer);
    }

    #[test]
    fn gradient_sign_by_finite_differences() {
        let k = Kernel::new(0.5).unwrap();
        let x = HPoint::new(0.2, 0.3, 0.1);
        let g = k.gradient(&x);
        let h = 1e-6;
        let fd = [
            (k.eval(&HPoint::new(x.x1 + h, x.x2, x.x3)) - k.eval(&HPoint::new(x.x1 - h, x.x2, x.x3)))
                / (2.0 * h),
            (k.eval(&HPoint::new(x.x1, x.x2 + h, x.x3)) - k.eval(&HPoint::new(x.x1, x.x2 - h, x.x3)))
                / (2.0 * h),
            (k.eval(&HPoint::new(x.x1, x.x2, x.x3 + h)) - k.eval(&HPoint::new(x.x1, x.x2, x.x3 - h)))
                / (2.0 * h),
        ];
        for i in 0..3 {
            assert!(g[i] < 0.0);
            assert!((g[i] - fd[i]).abs() < 1e-6 * g[i].abs().max(1.0));
        }
    }

    #[test]
    fn kernel_is_symmetric() {
        let k = Kernel::new(0.2).unwrap();
        let x = HPoint::new(0.05, -0.1, 0.01);
        assert_eq!(k.eval(&x), k.eval(&inverse(&x)));
    }

    #[test]
    fn rule_integrates_constants_and_moments() {
        let k = Kernel::new(0.2).unwrap();
        let rule = k.quadrature_rule();
        assert!((rule.weights.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        let m2: f64 = rule
            .nodes
            .iter()
            .zip(&rule.weights)
            .map(|(z, w)| w * z.x1 * z.x1)
            .sum();
        // E[r²] = ∫ r³ e^{-r⁴} / ∫ r e^{-r⁴} = (1/4)/(√π/4) = 1/√π; E[s1²] = E[r²]/2
        let exact = 0.04 / (2.0 * PI.sqrt());
        assert!((m2 / exact - 1.0).abs() < 1e-5, "{m2} {exact}");
    }

    #[test]
    fn halo_check() {
        assert!(Kernel::new(0.3).unwrap().check_halo(1).is_ok());
        assert!(matches!(
            Kernel::new(0.6).unwrap().check_halo(1),
            Err(Error::KernelTooWide { .. })
        ));
    }

    #[test]
    fn single_atom_scatter_matches_direct_sum() {
        let k = Kernel::new(0.15).unwrap();
        let res = Resolution::new(8, 8, 8).unwrap();
        let y = HPoint::new(0.95, 0.05, 0.97);
        let [f] = convolve_atoms(&[y], &[[1.0]], &k, res, 1).unwrap();
        for idx in 0..res.len() {
            let x = res.node_at(idx);
            let mut direct = 0.0;
            for a in -2..=2 {
                for b in -2..=2 {
                    for c in -3..=3 {
                        let p = group_mul(&HPoint::lattice([a, b, c]), &y);
                        direct += k.eval(&group_mul(&inverse(&p), &x));
                    }
                }
            }
            assert!((f.values()[idx] - direct).abs() < 1e-9 * k.normalizer, "{idx}");
        }
    }
}
