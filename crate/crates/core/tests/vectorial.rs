use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sobolev_lab::vectorial::*;

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// The weighted vectorial inequality written out from scratch on vectors:
/// `|x+y|^{p-2}(x+y).y - |x|^{p-2}x.y` minus its lower bound.
fn brute_margin(c: &VecIneqConstants, x: &[f64], y: &[f64]) -> f64 {
    let p = c.p;
    let s: Vec<f64> = x.iter().zip(y).map(|(a, b)| a + b).collect();
    let (nx, ns, ny) = (norm(x), norm(&s), norm(y));
    let pw = |v: f64, e: f64| if v == 0.0 { 0.0 } else { v.powf(e) };
    let lhs = pw(ns, p - 2.0) * dot(&s, y) - pw(nx, p - 2.0) * dot(x, y);
    let k = 1.0 - c.kappa;
    let gap = (ns - nx) * (ns - nx);
    let rhs = if p < 2.0 {
        let big = nx.max(ns);
        let w1 = pw(big, p - 2.0);
        let w2 = if nx <= ns {
            pw(ns, p - 1.0) / ((2.0 - p) * ns + (p - 1.0) * nx)
        } else {
            pw(nx, p - 2.0)
        };
        let small = if nx == 0.0 {
            ny.powf(p)
        } else {
            ny.powf(p).min(nx.powf(p - 2.0) * ny * ny)
        };
        k * w1 * ny * ny + (p - 2.0) * k * w2 * gap + c.c1.unwrap() * small
    } else {
        let c3 = c.c3.unwrap();
        let w3 = if nx <= ns {
            pw(nx, p - 2.0)
        } else if ns >= c3.powf(1.0 / (p - 1.0)) * nx {
            pw(ns, p - 1.0) / nx
        } else {
            c3 * pw(nx, p - 2.0)
        };
        let w4 = if nx <= ns {
            pw(nx, p - 2.0)
        } else {
            pw(ns, p - 1.0) / nx
        };
        k * w3 * ny * ny + (p - 2.0) * k * w4 * gap + c.c2.unwrap() * ny.powf(p)
    };
    lhs - rhs
}

fn random_pair(rng: &mut ChaCha8Rng, n: usize) -> (Vec<f64>, Vec<f64>) {
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mag = 10f64.powf(rng.random_range(-2.0..2.0));
    let y: Vec<f64> = (0..n).map(|_| mag * rng.random_range(-1.0..1.0)).collect();
    (x, y)
}

#[test]
fn omega_two_on_the_near_branch() {
    let c = estimate_vec_constants(1.5, 0.5, 1e3, 64).unwrap();
    let w = omega(2, &c, &[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0]).unwrap();
    assert!((w - 2f64.sqrt() / 1.5).abs() < 1e-15);
}

#[test]
fn weights_reject_the_wrong_regime() {
    let low = estimate_vec_constants(1.5, 0.5, 1e3, 64).unwrap();
    let high = estimate_vec_constants(3.0, 0.5, 1e3, 64).unwrap();
    let (x, y) = ([1.0, 0.0], [0.5, 0.5]);
    assert!(omega(3, &low, &x, &y).is_err());
    assert!(omega(1, &high, &x, &y).is_err());
    assert!(omega(5, &high, &x, &y).is_err());
}

#[test]
fn weights_are_continuous_at_their_seams() {
    for p in [1.2, 1.5, 1.8] {
        for j in [1, 2] {
            let a = omega_norms(j, p, 0.0, 1.0, 1.0).unwrap();
            let b = omega_norms(j, p, 0.0, 1.0, 1.0 - 1e-12).unwrap();
            assert!((a - b).abs() < 1e-10, "omega_{j} p={p}");
        }
    }
    for p in [2.0, 2.5, 3.0, 4.0] {
        let c3 = estimate_c3(p, 256).unwrap();
        let seam = c3.powf(1.0 / (p - 1.0));
        for j in [3, 4] {
            let a = omega_norms(j, p, c3, 1.0, 1.0).unwrap();
            let b = omega_norms(j, p, c3, 1.0, 1.0 - 1e-12).unwrap();
            assert!((a - b).abs() < 1e-10, "omega_{j} p={p} at |x| = |x+y|");
        }
        let above = omega_norms(3, p, c3, 1.0, seam).unwrap();
        let below = omega_norms(3, p, c3, 1.0, seam * (1.0 - 1e-13)).unwrap();
        assert!((above - below).abs() < 1e-10, "omega_3 p={p} at the c3 seam");
    }
}

#[test]
fn margin_vanishes_without_increment() {
    for p in [1.2, 2.0, 3.0] {
        let c = estimate_vec_constants(p, 0.1, 1e3, 64).unwrap();
        assert_eq!(gradient_ineq_margin(&c, &[0.3, -1.0, 2.0], &[0.0; 3]), 0.0);
    }
}

#[test]
fn margin_at_origin_reduces_to_power() {
    let c = estimate_vec_constants(1.5, 0.5, 1e3, 64).unwrap();
    let c1 = c.c1.unwrap();
    assert!(c1 > 0.0 && c1 <= 1.0);
    let y = [0.4, -1.2, 0.7];
    let m = gradient_ineq_margin(&c, &[0.0; 3], &y);
    let expected = (1.0 - c1) * norm(&y).powf(1.5);
    assert!((m - expected).abs() < 1e-13 * expected, "{m} vs {expected}");
}

#[test]
fn margin_matches_brute_force_evaluator() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (p, kappa) in [(1.2, 0.1), (1.5, 0.5), (2.0, 0.1), (2.5, 0.5), (3.0, 0.1)] {
        let c = estimate_vec_constants(p, kappa, 1e3, 64).unwrap();
        for _ in 0..2000 {
            let (x, y) = random_pair(&mut rng, 3);
            let (a, b) = (gradient_ineq_margin(&c, &x, &y), brute_margin(&c, &x, &y));
            let scale = (norm(&x).powi(2) + norm(&y).powi(2)).powf(0.5 * p);
            assert!((a - b).abs() <= 1e-12 * scale, "p={p}: {a} vs {b}");
        }
    }
}

#[test]
fn quadratic_case_margin_is_kappa_minus_constant() {
    // at p = 2 the lhs is |y|^2 and every weight on the near branch is 1
    let c = estimate_vec_constants(2.0, 0.1, 1e3, 64).unwrap();
    let c2 = c.c2.unwrap();
    assert!(c2 <= 0.1);
    let (x, y) = ([1.0, 0.0, 0.0], [0.5, 0.2, 0.0]);
    let ny2 = 0.29;
    let m = gradient_ineq_margin(&c, &x, &y);
    assert!((m - (0.1 - c2) * ny2).abs() < 1e-14, "{m}");
    assert!(m >= 0.0);
}

#[test]
fn auxiliary_function_is_nonnegative_above_the_c3_seam() {
    for p in [2.0, 2.5, 3.0, 4.0, 6.0] {
        let c3 = estimate_c3(p, 512).unwrap();
        assert!(c3 > 0.0 && c3 <= 0.5);
        let lo = c3.powf(1.0 / (p - 1.0));
        for i in 0..=1000 {
            let t = lo + (1.0 - lo) * i as f64 / 1000.0;
            assert!(g_aux(p, t) >= -1e-15, "p={p} t={t}: {}", g_aux(p, t));
        }
        for i in 0..=1000 {
            let t = 1.0 + 10.0 * i as f64 / 1000.0;
            assert!(g_aux(p, t) >= -1e-15);
        }
    }
}

#[test]
fn c3_condition_limit_at_p_three() {
    let f = c3_condition(3.0, 1e-6, 1.0 / 3.0);
    assert!((f - 2.0 / 3.0).abs() < 1e-3, "{f}");
}

#[test]
fn estimated_constants_survive_vector_fuzz() {
    let c = estimate_vec_constants(1.5, 0.5, 1e3, 256).unwrap();
    let report = fuzz_vectorial(&c, 3, 200_000, 5);
    assert!(report.min_margin >= -1e-12, "{report:?}");
    assert!(report.min_margin_away_from_zero > 0.0);
    // an independent pass with the brute-force evaluator in R^4
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..100_000 {
        let (x, y) = random_pair(&mut rng, 4);
        let scale = (norm(&x).powi(2) + norm(&y).powi(2)).powf(0.75);
        assert!(brute_margin(&c, &x, &y) / scale >= -1e-12);
    }
}

#[test]
fn omega_three_dominates_its_floor() {
    for p in [2.0, 2.5, 3.0] {
        let c = estimate_vec_constants(p, 0.1, 1e3, 128).unwrap();
        let report = fuzz_vectorial(&c, 3, 100_000, 9);
        assert!(report.min_omega3_excess.unwrap() >= -1e-12);
    }
}

#[test]
fn scalar_margin_edge_cases() {
    let reg = estimate_scalar_constants(3.0, 0.1).unwrap();
    assert_eq!(scalar_ineq_margin(&reg, 1.7, 0.0), 0.0);
    let b: f64 = -0.8;
    let m = scalar_ineq_margin(&reg, 0.0, b);
    let expected = (reg.c2 - 1.0) * b.abs().powf(3.0);
    assert!(reg.c2 >= 1.0);
    assert!((m - expected).abs() < 1e-12 * expected.max(1.0), "{m} vs {expected}");
}

#[test]
fn scalar_c1_floor_and_bounded_far_field() {
    for pstar in [1.5, 1.8, 2.0, 2.5, 3.6, 6.0] {
        for kappa in [0.1, 0.5] {
            let c = estimate_scalar_constants(pstar, kappa).unwrap();
            assert!(c.c1 >= 1.0 / pstar);
            assert!(c.c1.is_finite() && c.c2.is_finite());
        }
    }
    for pstar in [1.5, 2.0] {
        let far = c1_requirement(pstar, 0.1, 1e6);
        assert!(far.is_finite(), "{far}");
        assert!((far - c1_requirement(pstar, 0.1, 1e5)).abs() < 1e-2 * far.abs().max(1.0));
    }
}

#[test]
fn singular_scalar_holds_with_minimal_c1_near_zero() {
    for pstar in [1.5, 2.0] {
        let kappa = 0.1;
        // largest t0 on a fine scan with c1_requirement <= 1/p* on [-t0, t0]
        let mut t0 = 0.0;
        for i in 1..=10_000 {
            let t = 1e-4 * i as f64;
            if c1_requirement(pstar, kappa, t) > 1.0 / pstar || c1_requirement(pstar, kappa, -t) > 1.0 / pstar {
                break;
            }
            t0 = t;
        }
        assert!(t0 > 0.0, "p*={pstar}");
        let c = ScalarIneqConstants {
            pstar,
            kappa,
            c1: 1.0 / pstar,
            c2: 1.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50_000 {
            let a: f64 = if rng.random_bool(0.5) { 1.0 } else { -1.0 } * 10f64.powf(rng.random_range(-2.0..2.0));
            let b = a * t0 * rng.random_range(-1.0..1.0);
            let scale = (a * a + b * b).powf(0.5 * pstar);
            assert!(scalar_ineq_margin(&c, a, b) / scale >= -1e-12, "p*={pstar} a={a} b={b}");
        }
    }
}

#[test]
fn scalar_fuzz_with_estimated_constants() {
    for pstar in [2.0, 3.6, 5.0] {
        let c = estimate_scalar_constants(pstar, 0.1).unwrap();
        let report = fuzz_scalar(&c, 100_000, 17);
        assert!(report.min_margin >= -1e-12, "{report:?}");
    }
}

fn reflect(v: &[f64], u: &[f64]) -> Vec<f64> {
    let k = 2.0 * dot(v, u) / dot(u, u);
    v.iter().zip(u).map(|(a, b)| a - k * b).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn margin_is_p_homogeneous(
        pi in 0usize..5,
        x in prop::array::uniform3(-2.0f64..2.0),
        y in prop::array::uniform3(-2.0f64..2.0),
        s in 0.01f64..100.0,
    ) {
        let p = [1.2, 1.5, 2.0, 2.5, 3.0][pi];
        let c = estimate_vec_constants(p, 0.3, 1e3, 32).unwrap();
        let m = gradient_ineq_margin(&c, &x, &y);
        let sx: Vec<f64> = x.iter().map(|v| s * v).collect();
        let sy: Vec<f64> = y.iter().map(|v| s * v).collect();
        let ms = gradient_ineq_margin(&c, &sx, &sy);
        let size = (norm(&x).powi(2) + norm(&y).powi(2)).powf(0.5 * p) * s.powf(p);
        prop_assert!((ms - s.powf(p) * m).abs() <= 1e-10 * size.max(1e-300));
    }

    #[test]
    fn margin_is_rotation_invariant(
        pi in 0usize..5,
        x in prop::array::uniform3(-2.0f64..2.0),
        y in prop::array::uniform3(-2.0f64..2.0),
        u in prop::array::uniform3(0.1f64..1.0),
        w in prop::array::uniform3(-1.0f64..-0.1),
    ) {
        let p = [1.2, 1.5, 2.0, 2.5, 3.0][pi];
        let c = estimate_vec_constants(p, 0.3, 1e3, 32).unwrap();
        // two reflections make a rotation
        let rx = reflect(&reflect(&x, &u), &w);
        let ry = reflect(&reflect(&y, &u), &w);
        let a = gradient_ineq_margin(&c, &x, &y);
        let b = gradient_ineq_margin(&c, &rx, &ry);
        let size = (norm(&x).powi(2) + norm(&y).powi(2)).powf(0.5 * p);
        prop_assert!((a - b).abs() <= 1e-12 * size.max(1.0));
    }
}
