//! Independent oracles shared by the integration suites.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use heis_mfg::hjb::{ControlDisk, Cost};
use heis_mfg::transport::cost_matrix;
use heis_mfg::group::horizontal_step;
use heis_mfg::mollifier::{convolve_density, divide_fields};
use heis_mfg::testfn::{SmoothFn, TestFunction};
use heis_mfg::{GridField, HPoint, Kernel, ParticleCloud, Resolution};

/// Dense two-phase tableau simplex with Bland's rule for
/// `min cᵀx, A x = b, x ≥ 0` with `b ≥ 0`.
pub fn dense_simplex(a: &[Vec<f64>], b: &[f64], c: &[f64]) -> f64 {
    let m = a.len();
    let n = c.len();
    let width = n + m + 1;
    // columns: structural, artificial, rhs
    let mut t: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            let mut row = vec![0.0; width];
            row[..n].copy_from_slice(&a[i]);
            row[n + i] = 1.0;
            row[width - 1] = b[i];
            row
        })
        .collect();
    let mut basis: Vec<usize> = (n..n + m).collect();

    let pivot = |t: &mut Vec<Vec<f64>>, basis: &mut Vec<usize>, r: usize, col: usize| {
        let p = t[r][col];
        for v in t[r].iter_mut() {
            *v /= p;
        }
        let pr = t[r].clone();
        for (i, row) in t.iter_mut().enumerate() {
            if i != r && row[col] != 0.0 {
                let f = row[col];
                for (v, q) in row.iter_mut().zip(&pr) {
                    *v -= f * q;
                }
            }
        }
        basis[r] = col;
    };

    let run = |t: &mut Vec<Vec<f64>>, basis: &mut Vec<usize>, cost: &[f64], allowed: usize| {
        loop {
            // reduced cost of column j: cost_j - Σ_i cost_{basis_i} t_ij
            let reduced = |t: &Vec<Vec<f64>>, basis: &Vec<usize>, j: usize| {
                cost[j] - (0..m).map(|i| cost[basis[i]] * t[i][j]).sum::<f64>()
            };
            let Some(col) = (0..allowed).find(|&j| !basis.contains(&j) && reduced(t, basis, j) < -1e-12)
            else {
                return;
            };
            let mut best: Option<(f64, usize)> = None;
            for i in 0..m {
                if t[i][col] > 1e-12 {
                    let ratio = t[i][width - 1] / t[i][col];
                    let better = match best {
                        None => true,
                        Some((r, bi)) => ratio < r - 1e-14 || (ratio <= r + 1e-14 && basis[i] < basis[bi]),
                    };
                    if better {
                        best = Some((ratio, i));
                    }
                }
            }
            let (_, r) = best.expect("transport LP is bounded");
            pivot(t, basis, r, col);
        }
    };

    let mut phase1 = vec![0.0; n + m];
    for v in &mut phase1[n..] {
        *v = 1.0;
    }
    run(&mut t, &mut basis, &phase1, n + m);
    let infeas: f64 = (0..m).filter(|&i| basis[i] >= n).map(|i| t[i][width - 1]).sum();
    assert!(infeas < 1e-10, "transport LP infeasible");
    // drive zero-level artificials out where a structural pivot exists
    for r in 0..m {
        if basis[r] >= n {
            if let Some(col) = (0..n).find(|&j| t[r][j].abs() > 1e-10) {
                pivot(&mut t, &mut basis, r, col);
            }
        }
    }
    let mut phase2 = c.to_vec();
    phase2.extend(std::iter::repeat(0.0).take(m));
    run(&mut t, &mut basis, &phase2, n);
    (0..m).map(|i| phase2[basis[i]] * t[i][width - 1]).sum()
}

pub fn lp_oracle(a: &ParticleCloud, b: &ParticleCloud) -> f64 {
    let (m, n) = (a.len(), b.len());
    let cost = cost_matrix(a, b);
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    for i in 0..m {
        let mut r = vec![0.0; m * n];
        for j in 0..n {
            r[i * n + j] = 1.0;
        }
        rows.push(r);
        rhs.push(a.weights()[i]);
    }
    for j in 0..n {
        let mut r = vec![0.0; m * n];
        for i in 0..m {
            r[i * n + j] = 1.0;
        }
        rows.push(r);
        rhs.push(b.weights()[j]);
    }
    dense_simplex(&rows, &rhs, &cost)
}

pub fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> ParticleCloud {
    let pts = (0..n).map(|_| HPoint::new(rng.gen(), rng.gen(), rng.gen())).collect();
    let w = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
    ParticleCloud::normalized(pts, w).unwrap()
}

/// Exact discrete-time value by enumerating every control sequence from
/// `x` at `times[n]`, with no interpolation anywhere.
pub fn enumerated_value(cost: &dyn Cost, controls: &ControlDisk, x: &HPoint, times: &[f64], n: usize) -> f64 {
    if n + 1 == times.len() {
        return cost.terminal(x);
    }
    let dt = times[n + 1] - times[n];
    let run = dt * cost.running(x, times[n]);
    let mut best = f64::INFINITY;
    for a in &controls.samples {
        let y = horizontal_step(x, *a, dt);
        let v = 0.5 * dt * (a[0] * a[0] + a[1] * a[1]) + enumerated_value(cost, controls, &y, times, n + 1);
        best = best.min(v);
    }
    best + run
}

/// Max over `probes` of `|I u - u|` where `I u` is the grid interpolant of
/// the exact function `u` sampled at the nodes of `res`.
pub fn interpolation_error(
    u: &(dyn Fn(&HPoint) -> f64 + Sync),
    res: heis_mfg::Resolution,
    probes: &[HPoint],
) -> f64 {
    let grid = GridField::from_fn(res, u);
    probes
        .iter()
        .map(|x| (grid.lookup(x) - u(x)).abs())
        .fold(0.0, f64::max)
}

/// `∫ ρ_ε` by a tensor trapezoid rule in unscaled coordinates.
pub fn kernel_mass(k: &Kernel) -> f64 {
    let e = k.epsilon;
    let (hh, hv) = (3.0 * e, 7.0 * e * e);
    let (nh, nv) = (240usize, 240usize);
    let (dh, dv) = (2.0 * hh / nh as f64, 2.0 * hv / nv as f64);
    let mut s = 0.0;
    for a in 0..=nh {
        let x1 = -hh + a as f64 * dh;
        for b in 0..=nh {
            let x2 = -hh + b as f64 * dh;
            for c in 0..=nv {
                let x3 = -hv + c as f64 * dv;
                s += k.eval(&HPoint::new(x1, x2, x3));
            }
        }
    }
    s * dh * dh * dv
}

pub fn jensen_pair(rng: &mut ChaCha8Rng, res: Resolution, constant_v: bool) -> (GridField, [GridField; 2]) {
    let m = SmoothFn::Sum {
        terms: vec![
            SmoothFn::Constant { value: 1.0 },
            SmoothFn::Trig {
                amp: rng.gen_range(0.1..0.5),
                k1: rng.gen_range(-2..=2),
                k2: rng.gen_range(-2..=2),
                phase: rng.gen_range(0.0..6.0),
            },
            SmoothFn::Theta {
                amp: rng.gen_range(0.0..0.3),
                center: rng.gen(),
                width: 0.3,
                phase: rng.gen_range(0.0..6.0),
            },
        ],
    };
    let c: [f64; 2] = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
    let v: [SmoothFn; 2] = std::array::from_fn(|i| {
        if constant_v {
            SmoothFn::Constant { value: c[i] }
        } else {
            SmoothFn::Sum {
                terms: vec![
                    SmoothFn::Constant { value: c[i] },
                    SmoothFn::Theta {
                        amp: 0.5,
                        center: rng.gen(),
                        width: 0.3,
                        phase: rng.gen_range(0.0..6.0),
                    },
                ],
            }
        }
    });
    let mg = GridField::from_fn(res, |x| m.value(x));
    let e = std::array::from_fn(|i| GridField::from_fn(res, |x| m.value(x) * v[i].value(x)));
    (mg, e)
}

pub fn kinetic(m: &GridField, v: &[GridField; 2], p: f64) -> f64 {
    let cell = m.resolution().cell_volume();
    m.values()
        .iter()
        .zip(v[0].values().iter().zip(v[1].values()))
        .map(|(m, (a, b))| a.hypot(*b).powf(p) * m)
        .sum::<f64>()
        * cell
}

/// Max over p ∈ {1,2,4} of `∫|v^ε|^p m^ε - ∫|v|^p m` for one pair.
pub fn jensen_excess(m: &GridField, e: &[GridField; 2], k: &Kernel) -> f64 {
    let v = divide_fields(m, e.clone()).unwrap();
    let me = convolve_density(m, k).unwrap();
    let ee = [convolve_density(&e[0], k).unwrap(), convolve_density(&e[1], k).unwrap()];
    let ve = divide_fields(&me, ee).unwrap();
    [1.0, 2.0, 4.0]
        .iter()
        .map(|&p| kinetic(&me, &ve, p) - kinetic(m, &v, p))
        .fold(f64::NEG_INFINITY, f64::max)
}
