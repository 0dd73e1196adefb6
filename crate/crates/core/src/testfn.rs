//! Smooth Heisenberg-periodic functions with closed-form horizontal
//! gradients. They serve as test functions for weak-form residuals, as cost
//! data for the HJB solver and as reference fields in interpolation tests.

use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::group::{group_mul, project, HPoint};

/// A function on the torus together with its horizontal gradient
/// `(X1 ζ, X2 ζ)`.
pub trait TestFunction: Sync {
    fn value(&self, x: &HPoint) -> f64;
    fn horizontal_gradient(&self, x: &HPoint) -> [f64; 2];
}

/// Serialisable family of smooth periodic functions.
///
/// `Trig` depends on the horizontal coordinates only. `Theta` genuinely
/// depends on `x3`: it is the periodisation
/// `Σ_k φ(x1 + k - c) cos(2π(x3 + x1 x2 + 2k x2) + phase)` of a Gaussian
/// profile `φ`, which is invariant under every lattice translation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SmoothFn {
    Constant {
        value: f64,
    },
    Trig {
        amp: f64,
        k1: i32,
        k2: i32,
        #[serde(default)]
        phase: f64,
    },
    Theta {
        amp: f64,
        #[serde(default = "half")]
        center: f64,
        #[serde(default = "default_width")]
        width: f64,
        #[serde(default)]
        phase: f64,
    },
    Sum {
        terms: Vec<SmoothFn>,
    },
}

fn half() -> f64 {
    0.5
}

fn default_width() -> f64 {
    0.3
}

const THETA_TERMS: i32 = 6;

impl SmoothFn {
    pub fn zero() -> Self {
        SmoothFn::Constant { value: 0.0 }
    }

    pub fn theta(amp: f64) -> Self {
        SmoothFn::Theta {
            amp,
            center: 0.5,
            width: 0.3,
            phase: 0.0,
        }
    }

    /// Upper bound on `|value|`.
    pub fn sup_bound(&self) -> f64 {
        match self {
            SmoothFn::Constant { value } => value.abs(),
            SmoothFn::Trig { amp, .. } => amp.abs(),
            SmoothFn::Theta { amp, width, .. } => {
                // Σ_k φ(s + k) ≤ 1 + sqrt(2π) w for a unit-spaced Gaussian sum
                amp.abs() * (1.0 + (TAU).sqrt() * width)
            }
            SmoothFn::Sum { terms } => terms.iter().map(SmoothFn::sup_bound).sum(),
        }
    }

    fn eval_both(&self, q: &HPoint) -> (f64, [f64; 2]) {
        match self {
            SmoothFn::Constant { value } => (*value, [0.0, 0.0]),
            SmoothFn::Trig { amp, k1, k2, phase } => {
                let a1 = TAU * *k1 as f64;
                let a2 = TAU * *k2 as f64;
                let arg = a1 * q.x1 + a2 * q.x2 + phase;
                let (s, c) = arg.sin_cos();
                (amp * s, [amp * a1 * c, amp * a2 * c])
            }
            SmoothFn::Theta {
                amp,
                center,
                width,
                phase,
            } => {
                let inv_var = 1.0 / (width * width);
                let mut v = 0.0;
                let mut g1 = 0.0;
                let mut g2 = 0.0;
                for k in -THETA_TERMS..=THETA_TERMS {
                    let kf = k as f64;
                    let s = q.x1 + kf - center;
                    let phi = (-0.5 * s * s * inv_var).exp();
                    if phi < 1e-300 {
                        continue;
                    }
                    let arg = TAU * (q.x3 + q.x1 * q.x2 + 2.0 * kf * q.x2) + phase;
                    let (sn, cs) = arg.sin_cos();
                    v += phi * cs;
                    // X1 annihilates the phase: X1(x3 + x1 x2) = 0
                    g1 += -s * inv_var * phi * cs;
                    // X2(x3 + x1 x2 + 2k x2) = 2 x1 + 2k
                    g2 += -phi * sn * TAU * (2.0 * q.x1 + 2.0 * kf);
                }
                (amp * v, [amp * g1, amp * g2])
            }
            SmoothFn::Sum { terms } => {
                let mut v = 0.0;
                let mut g = [0.0, 0.0];
                for t in terms {
                    let (tv, tg) = t.eval_both(q);
                    v += tv;
                    g[0] += tg[0];
                    g[1] += tg[1];
                }
                (v, g)
            }
        }
    }
}

impl TestFunction for SmoothFn {
    fn value(&self, x: &HPoint) -> f64 {
        self.eval_both(&project(x)).0
    }

    // the horizontal gradient of a periodic function is periodic, so it is
    // evaluated at the fundamental representative
    fn horizontal_gradient(&self, x: &HPoint) -> [f64; 2] {
        self.eval_both(&project(x)).1
    }
}

/// Default x3-dependent test function `SmoothFn::theta(1.0)`.
pub fn theta(x: &HPoint) -> f64 {
    SmoothFn::theta(1.0).value(x)
}

/// Numerical horizontal gradient by centred differences along the
/// left-invariant flows `x ⊕ (±h, 0, 0)` and `x ⊕ (0, ±h, 0)`.
pub fn fd_horizontal_gradient(f: &impl Fn(&HPoint) -> f64, x: &HPoint, h: f64) -> [f64; 2] {
    let e1p = group_mul(x, &HPoint::new(h, 0.0, 0.0));
    let e1m = group_mul(x, &HPoint::new(-h, 0.0, 0.0));
    let e2p = group_mul(x, &HPoint::new(0.0, h, 0.0));
    let e2m = group_mul(x, &HPoint::new(0.0, -h, 0.0));
    [
        (f(&e1p) - f(&e1m)) / (2.0 * h),
        (f(&e2p) - f(&e2m)) / (2.0 * h),
    ]
}

impl TestFunction for crate::grid::GridField {
    fn value(&self, x: &HPoint) -> f64 {
        self.lookup(x)
    }

    fn horizontal_gradient(&self, x: &HPoint) -> [f64; 2] {
        let r = self.resolution();
        let h = 0.25 / r.n1.max(r.n2) as f64;
        fd_horizontal_gradient(&|y: &HPoint| self.lookup(y), x, h)
    }
}
