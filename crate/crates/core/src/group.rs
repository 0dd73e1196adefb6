//! Heisenberg group algebra on `R^3`.
//!
//! The group law is `x ⊕ y = (x1+y1, x2+y2, x3+y3 - x2*y1 + x1*y2)`, the
//! integer lattice `Z^3` is a discrete subgroup, and the unit cube
//! `[0,1)^3` is a fundamental domain for its left action. Everything
//! periodic in this crate is built on [`pavage`].

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::{Error, Result};

/// A point of the Heisenberg group `H^1`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HPoint {
    pub x1: f64,
    pub x2: f64,
    pub x3: f64,
}

impl HPoint {
    pub const ORIGIN: HPoint = HPoint {
        x1: 0.0,
        x2: 0.0,
        x3: 0.0,
    };

    #[inline]
    pub const fn new(x1: f64, x2: f64, x3: f64) -> Self {
        Self { x1, x2, x3 }
    }

    /// Lattice point `n ∈ Z^3` viewed as a group element.
    #[inline]
    pub fn lattice(n: [i64; 3]) -> Self {
        Self::new(n[0] as f64, n[1] as f64, n[2] as f64)
    }

    #[inline]
    pub fn is_finite(&self) -> bool {
        self.x1.is_finite() && self.x2.is_finite() && self.x3.is_finite()
    }

    #[inline]
    pub fn to_array(self) -> [f64; 3] {
        [self.x1, self.x2, self.x3]
    }

    #[inline]
    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    /// Euclidean sup-norm of the coordinate difference, used only for
    /// floating-point comparisons.
    #[inline]
    pub fn max_abs_diff(&self, other: &HPoint) -> f64 {
        (self.x1 - other.x1)
            .abs()
            .max((self.x2 - other.x2).abs())
            .max((self.x3 - other.x3).abs())
    }
}

impl fmt::Display for HPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.x1, self.x2, self.x3)
    }
}

/// `x ⊕ y`.
#[inline]
pub fn group_mul(x: &HPoint, y: &HPoint) -> HPoint {
    HPoint {
        x1: x.x1 + y.x1,
        x2: x.x2 + y.x2,
        x3: x.x3 + y.x3 - x.x2 * y.x1 + x.x1 * y.x2,
    }
}

#[inline]
pub fn inverse(x: &HPoint) -> HPoint {
    HPoint {
        x1: -x.x1,
        x2: -x.x2,
        x3: -x.x3,
    }
}

/// Anisotropic dilation `δ_λ(x) = (λx1, λx2, λ²x3)`.
pub fn dilate(lambda: f64, x: &HPoint) -> Result<HPoint> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "dilation factor must be positive and finite, got {lambda}"
        )));
    }
    Ok(dilate_unchecked(lambda, x))
}

#[inline]
pub(crate) fn dilate_unchecked(lambda: f64, x: &HPoint) -> HPoint {
    HPoint {
        x1: lambda * x.x1,
        x2: lambda * x.x2,
        x3: lambda * lambda * x.x3,
    }
}

/// Homogeneous norm `((x1²+x2²)² + x3²)^{1/4}`.
#[inline]
pub fn h_norm(x: &HPoint) -> f64 {
    let r2 = x.x1 * x.x1 + x.x2 * x.x2;
    (r2 * r2 + x.x3 * x.x3).sqrt().sqrt()
}

/// Left-invariant distance `‖y⁻¹ ⊕ x‖`.
#[inline]
pub fn h_dist(x: &HPoint, y: &HPoint) -> f64 {
    h_norm(&group_mul(&inverse(y), x))
}

/// The decomposition `x = n ⊕ q` with `n ∈ Z^3` and `q ∈ [0,1)^3`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PavageDecomposition {
    pub n: [i64; 3],
    pub q: HPoint,
}

impl PavageDecomposition {
    pub fn reconstruct(&self) -> HPoint {
        group_mul(&HPoint::lattice(self.n), &self.q)
    }
}

/// Integer and fractional part with the fractional part forced into `[0,1)`.
#[inline]
fn split_unit(v: f64) -> (i64, f64) {
    let n = v.floor();
    let mut q = v - n;
    let mut n = n as i64;
    // v slightly below an integer can round q up to exactly 1.0
    if q >= 1.0 {
        q = 0.0;
        n += 1;
    }
    (n, q)
}

/// Unique lattice/fundamental-domain split of `x`.
pub fn pavage(x: &HPoint) -> PavageDecomposition {
    let (n1, q1) = split_unit(x.x1);
    let (n2, q2) = split_unit(x.x2);
    let arg = x.x3 + n2 as f64 * q1 - n1 as f64 * q2;
    let (n3, q3) = split_unit(arg);
    PavageDecomposition {
        n: [n1, n2, n3],
        q: HPoint::new(q1, q2, q3),
    }
}

/// Fundamental-domain representative `q_H(x)`.
#[inline]
pub fn project(x: &HPoint) -> HPoint {
    pavage(x).q
}

/// Default half-width of the lattice window searched by [`torus_dist`].
pub const DEFAULT_TORUS_WINDOW: i64 = 2;

/// Distance on the Heisenberg torus `H^1 / Z^3` with the default window.
#[inline]
pub fn torus_dist(x: &HPoint, y: &HPoint) -> f64 {
    torus_dist_window(x, y, DEFAULT_TORUS_WINDOW)
}

/// `min_{n ∈ [-w,w]^3} d_H(q(x), n ⊕ q(y))`.
///
/// For fixed `(n1, n2)` the vertical coordinate of `(n ⊕ q(y))⁻¹ ⊕ q(x)` is
/// `c - n3` with `c` independent of `n3`, and the norm is increasing in its
/// absolute value, so the inner minimisation over `n3` is the clamped
/// nearest integer to `c`. The result equals the full `(2w+1)^3` search.
pub fn torus_dist_window(x: &HPoint, y: &HPoint, window: i64) -> f64 {
    let a = project(x);
    let b = project(y);
    torus_dist_projected(&a, &b, window)
}

/// [`torus_dist_window`] for points already in `[0,1)^3`.
#[inline]
pub fn torus_dist_projected(a: &HPoint, b: &HPoint, window: i64) -> f64 {
    let w = window as f64;
    let mut best_sq = f64::INFINITY;
    for n1 in -window..=window {
        let n1f = n1 as f64;
        let z1 = a.x1 - b.x1 - n1f;
        let z1sq = z1 * z1;
        if z1sq * z1sq >= best_sq {
            continue;
        }
        for n2 in -window..=window {
            let n2f = n2 as f64;
            let z2 = a.x2 - b.x2 - n2f;
            let r2 = z1sq + z2 * z2;
            let r4 = r2 * r2;
            if r4 >= best_sq {
                continue;
            }
            // third coordinate of (n⊕b)⁻¹ ⊕ a without the n3 term
            let c = a.x3 - b.x3 + n2f * b.x1 - n1f * b.x2 + (n2f + b.x2) * a.x1
                - (n1f + b.x1) * a.x2;
            let n3 = c.round().clamp(-w, w);
            let z3 = c - n3;
            let s = r4 + z3 * z3;
            if s < best_sq {
                best_sq = s;
            }
        }
    }
    best_sq.sqrt().sqrt()
}

/// The `3×2` matrix `B(x)` whose columns are the horizontal fields
/// `X1 = ∂1 - x2 ∂3` and `X2 = ∂2 + x1 ∂3`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HorizontalFrame {
    pub b: [[f64; 2]; 3],
}

impl HorizontalFrame {
    /// `α Bᵀ(x)`: the Euclidean velocity of the horizontal control `α`.
    #[inline]
    pub fn apply(&self, alpha: [f64; 2]) -> [f64; 3] {
        [
            self.b[0][0] * alpha[0] + self.b[0][1] * alpha[1],
            self.b[1][0] * alpha[0] + self.b[1][1] * alpha[1],
            self.b[2][0] * alpha[0] + self.b[2][1] * alpha[1],
        ]
    }

    /// `D u B(x)`: horizontal gradient from a Euclidean gradient.
    #[inline]
    pub fn horizontal(&self, grad: [f64; 3]) -> [f64; 2] {
        [
            grad[0] * self.b[0][0] + grad[1] * self.b[1][0] + grad[2] * self.b[2][0],
            grad[0] * self.b[0][1] + grad[1] * self.b[1][1] + grad[2] * self.b[2][1],
        ]
    }
}

pub fn horizontal_frame(x: &HPoint) -> HorizontalFrame {
    HorizontalFrame {
        b: [[1.0, 0.0], [0.0, 1.0], [-x.x2, x.x1]],
    }
}

/// Velocity `α Bᵀ(x)` without materialising the frame.
#[inline]
pub fn horizontal_velocity(x: &HPoint, alpha: [f64; 2]) -> [f64; 3] {
    [alpha[0], alpha[1], -x.x2 * alpha[0] + x.x1 * alpha[1]]
}

/// Exact flow of the constant horizontal control `α` for time `s`,
/// which is the left translation `x ⊕ (sα1, sα2, 0)`.
#[inline]
pub fn horizontal_step(x: &HPoint, alpha: [f64; 2], s: f64) -> HPoint {
    group_mul(x, &HPoint::new(s * alpha[0], s * alpha[1], 0.0))
}
