mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

use heis_mfg::measure::density_from_cloud;
use heis_mfg::mollifier::{convolve_density, mollified_drift};
use common::{jensen_excess, jensen_pair, kernel_mass};
use heis_mfg::testfn::{SmoothFn, TestFunction};
use heis_mfg::{group_mul, h_norm, inverse, GridField, HPoint, Kernel, ParticleCloud, Resolution};

#[test]
fn normalizer_has_closed_form() {
    // ∫ e^{-r⁴} 2πr dr · ∫ e^{-s²} ds = π²/2 after the ε⁴ Jacobian
    for eps in [1.0, 0.5, 0.25, 0.1] {
        let k = Kernel::new(eps).unwrap();
        let exact = 2.0 / (PI * PI * eps.powi(4));
        assert!((k.normalizer / exact - 1.0).abs() < 1e-9, "{eps}");
    }
}

#[test]
fn kernel_has_unit_mass() {
    for eps in [0.1, 0.2, 0.3] {
        let m = kernel_mass(&Kernel::new(eps).unwrap());
        assert!((m - 1.0).abs() < 1e-6, "{eps}: {m}");
    }
}

#[test]
fn kernel_is_inverse_symmetric_and_positive() {
    let k = Kernel::new(0.2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let x = HPoint::new(
            rng.gen_range(-0.5..0.5),
            rng.gen_range(-0.5..0.5),
            rng.gen_range(-0.5..0.5),
        );
        assert!(k.eval(&x) > 0.0);
        assert_eq!(k.eval(&x), k.eval(&inverse(&x)));
        // radial in the homogeneous norm
        let r = h_norm(&x) / k.epsilon;
        assert!((k.eval(&x) - k.normalizer * (-r.powi(4)).exp()).abs() <= 1e-12 * k.normalizer);
    }
}

#[test]
fn gradient_matches_finite_differences() {
    let k = Kernel::new(0.3).unwrap();
    let x = HPoint::new(0.1, -0.07, 0.02);
    let g = k.gradient(&x);
    let h = 1e-6;
    let e = [
        HPoint::new(h, 0.0, 0.0),
        HPoint::new(0.0, h, 0.0),
        HPoint::new(0.0, 0.0, h),
    ];
    for (i, d) in e.iter().enumerate() {
        let p = HPoint::new(x.x1 + d.x1, x.x2 + d.x2, x.x3 + d.x3);
        let m = HPoint::new(x.x1 - d.x1, x.x2 - d.x2, x.x3 - d.x3);
        let fd = (k.eval(&p) - k.eval(&m)) / (2.0 * h);
        assert!((fd - g[i]).abs() <= 1e-6 * k.normalizer, "{i}: {fd} vs {}", g[i]);
    }
}

#[test]
fn constants_are_fixed() {
    let res = Resolution::cube(6).unwrap();
    for eps in [0.1, 0.3] {
        let k = Kernel::new(eps).unwrap();
        let one = convolve_density(&GridField::constant(res, 1.0), &k).unwrap();
        assert!(one.max_abs_diff(&GridField::constant(res, 1.0)) < 1e-12);
        // constant drift survives the quotient
        let m = GridField::from_fn(res, |x| 1.0 + 0.5 * (2.0 * PI * x.x1).sin());
        let e = [m.scaled(0.7), m.scaled(-0.2)];
        let v = mollified_drift(&m, &e, &k).unwrap();
        assert!(v[0].max_abs_diff(&GridField::constant(res, 0.7)) < 1e-12);
        assert!(v[1].max_abs_diff(&GridField::constant(res, -0.2)) < 1e-12);
    }
}

#[test]
fn grid_convolution_matches_direct_quadrature() {
    // ψ has no x3 dependence, so the exact convolution is a horizontal
    // Gaussian-like average that a fine direct rule resolves
    let psi = SmoothFn::Trig {
        amp: 1.0,
        k1: 1,
        k2: 1,
        phase: 0.3,
    };
    let k = Kernel::new(0.15).unwrap();
    let res = Resolution::new(24, 24, 4).unwrap();
    let grid = GridField::from_fn(res, |x| psi.value(x));
    let conv = convolve_density(&grid, &k).unwrap();
    let e = k.epsilon;
    let n = 120;
    let hh = 3.0 * e;
    let d = 2.0 * hh / n as f64;
    let mut worst: f64 = 0.0;
    for (i, j) in [(0, 0), (5, 17), (11, 3), (20, 20)] {
        let x = res.node(i, j, 1);
        // with ψ independent of x3 the vertical kernel factor integrates to
        // its marginal, leaving a 2D rule
        let mut num = 0.0;
        let mut den = 0.0;
        for a in 0..=n {
            for b in 0..=n {
                let z1 = -hh + a as f64 * d;
                let z2 = -hh + b as f64 * d;
                let r2 = (z1 * z1 + z2 * z2) / (e * e);
                let w = (-(r2 * r2)).exp();
                num += w * psi.value(&group_mul(&x, &HPoint::new(z1, z2, 0.0)));
                den += w;
            }
        }
        worst = worst.max((conv.at(i, j, 1) - num / den).abs());
    }
    // trilinear interpolation of ψ on a 24-point horizontal grid
    assert!(worst < 2e-2, "{worst}");
}

#[test]
fn positive_inputs_give_positive_outputs() {
    let res = Resolution::cube(8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let vals: Vec<f64> = (0..res.len()).map(|_| rng.gen_range(0.01..1.0)).collect();
    let psi = GridField::new(res, vals).unwrap();
    let out = convolve_density(&psi, &Kernel::new(0.2).unwrap()).unwrap();
    assert!(out.min() > 0.0);
    assert!(out.max() <= psi.max() + 1e-12);
    assert!(out.min() >= psi.min() - 1e-12);
    assert!((out.integral() - psi.integral()).abs() < 1e-12);
}

#[test]
fn atom_density_matches_periodised_kernel() {
    let k = Kernel::new(0.25).unwrap();
    let res = Resolution::new(8, 8, 8).unwrap();
    let p = HPoint::new(0.9, 0.05, 0.97);
    let dens = density_from_cloud(&ParticleCloud::dirac(p), &k, res).unwrap();
    let mut worst: f64 = 0.0;
    for idx in 0..res.len() {
        let x = res.node_at(idx);
        let mut want = 0.0;
        for a in -2..=2 {
            for b in -2..=2 {
                for c in -4..=4 {
                    let np = group_mul(&HPoint::lattice([a, b, c]), &p);
                    want += k.eval(&group_mul(&inverse(&np), &x));
                }
            }
        }
        worst = worst.max((dens.values()[idx] - want).abs());
    }
    assert!(worst <= 1e-9 * k.normalizer, "{worst}");
}

#[test]
fn atom_density_is_lipschitz_in_the_atom() {
    let k = Kernel::new(0.3).unwrap();
    let res = Resolution::cube(10).unwrap();
    let lip = k.translation_lipschitz_bound();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let p = HPoint::new(rng.gen(), rng.gen(), rng.gen());
        let w = HPoint::new(
            rng.gen_range(-0.05..0.05),
            rng.gen_range(-0.05..0.05),
            rng.gen_range(-0.002..0.002),
        );
        let q = heis_mfg::project(&group_mul(&p, &w));
        let a = density_from_cloud(&ParticleCloud::dirac(p), &k, res).unwrap();
        let b = density_from_cloud(&ParticleCloud::dirac(q), &k, res).unwrap();
        assert!(a.max_abs_diff(&b) <= lip * h_norm(&w), "{} > {}", a.max_abs_diff(&b), lip * h_norm(&w));
    }
}

#[test]
fn jensen_bound_on_random_pairs() {
    let res = Resolution::cube(6).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for i in 0..20 {
        let eps = [0.1, 0.2, 0.3][i % 3];
        let (m, e) = jensen_pair(&mut rng, res, i % 4 == 0);
        let ex = jensen_excess(&m, &e, &Kernel::new(eps).unwrap());
        assert!(ex <= 1e-6, "pair {i}: {ex}");
    }
}

#[test]
fn constant_drift_is_jensen_tight() {
    let res = Resolution::cube(8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (m, e) = jensen_pair(&mut rng, res, true);
    let ex = jensen_excess(&m, &e, &Kernel::new(0.2).unwrap());
    assert!(ex.abs() < 1e-12, "{ex}");
}

#[test]
fn smoothing_shrinks_oscillation_with_width() {
    let res = Resolution::cube(16).unwrap();
    let psi = GridField::from_fn(res, |x| SmoothFn::theta(1.0).value(x));
    let mut last = f64::INFINITY;
    for eps in [0.05, 0.1, 0.2] {
        let c = convolve_density(&psi, &Kernel::new(eps).unwrap()).unwrap();
        let osc = c.max() - c.min();
        assert!(osc < last, "{eps}: {osc} vs {last}");
        last = osc;
    }
}

#[test]
fn mollification_converges_as_width_shrinks() {
    let res = Resolution::new(32, 32, 4).unwrap();
    let f = SmoothFn::Trig {
        amp: 1.0,
        k1: 1,
        k2: 0,
        phase: 0.0,
    };
    let psi = GridField::from_fn(res, |x| f.value(x));
    let errs: Vec<f64> = [0.2, 0.1, 0.05]
        .iter()
        .map(|&eps| {
            let c = convolve_density(&psi, &Kernel::new(eps).unwrap()).unwrap();
            let l2: f64 = c
                .values()
                .iter()
                .zip(psi.values())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                * res.cell_volume();
            l2.sqrt()
        })
        .collect();
    assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
}

#[test]
fn too_wide_kernels_are_rejected() {
    let k = Kernel::new(2.0).unwrap();
    let psi = GridField::constant(Resolution::cube(4).unwrap(), 1.0);
    assert!(convolve_density(&psi, &k).is_err());
    assert!(Kernel::new(0.0).is_err());
    assert!(Kernel::new(f64::NAN).is_err());
}

#[test]
fn kernel_deserialises_from_epsilon() {
    let k: Kernel = serde_json::from_str(r#"{"epsilon": 0.2}"#).unwrap();
    assert_eq!(k, Kernel::new(0.2).unwrap());
    let stale: Kernel = serde_json::from_str(r#"{"epsilon": 0.2, "normalizer": 1.0}"#).unwrap();
    assert_eq!(stale, k);
}
