use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sobolev_lab::dualnorm::*;
use sobolev_lab::experiment::{make_direction, Direction};
use sobolev_lab::spectrum::{assemble_mode_operator, solve_eigs};
use sobolev_lab::{make_grid, ModeFn, Params, RadialGrid};

const PAIRS: [(usize, f64); 5] = [(3, 2.0), (4, 1.5), (5, 3.0), (3, 1.2), (8, 2.5)];

fn setup(n: usize, p: f64, nodes: usize) -> (Params, RadialGrid) {
    let params = Params::new(n, p).unwrap();
    let grid = RadialGrid::for_bubble(&params.exponents(), nodes, 1.0).unwrap();
    (params, grid)
}

/// Bubble plus a small orthogonal bump: a residual of moderate size.
fn perturbed_residual(params: &Params, grid: &RadialGrid, eps: f64) -> Residual {
    let b = params.bubble(1.0);
    let dir = make_direction(
        params,
        &b,
        grid,
        Direction::Bump {
            center: 0.3,
            width: 1.0,
        },
    )
    .unwrap();
    let delta = ModeFn::radial(dir.values.iter().map(|x| eps * x).collect());
    residual_about(params, &b, &delta, grid).unwrap()
}

#[test]
fn bubble_residual_vanishes_pointwise() {
    for (n, p) in [(3, 2.0), (4, 1.5), (5, 3.0), (8, 2.5)] {
        let (params, grid) = setup(n, p, 1024);
        let e = params.exponents();
        let b = params.bubble(1.0);
        let res = residual(&params, &ModeFn::radial(b.sample(&e, &grid)), &grid).unwrap();
        // nodal differentiation cancels badly where the profile or its flux
        // is tiny, so stay within |q log r| <= 6
        let worst = grid
            .nodes()
            .iter()
            .zip(&res.pointwise)
            .filter(|(r, _)| (e.q * r.ln()).abs() <= 6.0)
            .map(|(&r, x)| (x / b.profile(&e, r).powf(params.pstar - 1.0)).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-8, "({n},{p}): {worst}");
    }
}

#[test]
fn doubled_bubble_residual_has_the_homogeneous_sign() {
    for (n, p) in PAIRS {
        let (params, grid) = setup(n, p, 1024);
        let e = params.exponents();
        let b = params.bubble(1.0);
        let u = ModeFn::radial(b.sample(&e, &grid).iter().map(|x| 2.0 * x).collect());
        let res = residual(&params, &u, &grid).unwrap();
        let k = 2f64.powf(p - 1.0) - 2f64.powf(params.pstar - 1.0);
        for (&r, x) in grid.nodes().iter().zip(&res.pointwise) {
            if (0.1..10.0).contains(&r) {
                let expected = k * b.profile(&e, r).powf(params.pstar - 1.0);
                assert!((x / expected - 1.0).abs() < 1e-6, "({n},{p}) r={r}: {x} vs {expected}");
            }
        }
    }
}

#[test]
fn weak_and_pointwise_forms_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for (n, p) in PAIRS {
        let (params, grid) = setup(n, p, 1024);
        let e = params.exponents();
        let b = params.bubble(1.0);
        let dir = make_direction(
            &params,
            &b,
            &grid,
            Direction::Bump {
                center: 0.3,
                width: 1.0,
            },
        )
        .unwrap();
        let u: Vec<f64> = b
            .sample(&e, &grid)
            .iter()
            .zip(&dir.values)
            .map(|(v, d)| v + 1e-2 * d)
            .collect();
        let f = perturbed_residual(&params, &grid, 1e-2);
        let du = grid.gradient_to_mid(&u);
        // supported well inside the grid: below roundoff at both ends
        let (lo, hi) = (grid.nodes()[0].ln(), grid.nodes()[grid.len() - 1].ln());
        let span = hi - lo;
        for _ in 0..10 {
            let c = lo + span * rng.random_range(0.35..0.65);
            let w = span * rng.random_range(0.01..0.05);
            let a = rng.random_range(-2.0..2.0);
            let phi: Vec<f64> = grid
                .nodes()
                .iter()
                .map(|r| a * (-((r.ln() - c) / w).powi(2)).exp() * (1.0 + 0.3 * (3.0 * r.ln()).sin()))
                .collect();
            let (weak, strong) = (f.pair(&phi), f.pair_pointwise(&grid, &phi));
            // the residual is a difference of two terms; measure against their size
            let dphi = grid.gradient_to_mid(&phi);
            let flux: f64 = du
                .iter()
                .zip(&dphi)
                .zip(grid.mid_weights())
                .map(|((d, g), w)| w * d.abs().powf(p - 1.0) * g.abs())
                .sum();
            let zero: Vec<f64> = u
                .iter()
                .zip(&phi)
                .map(|(v, g)| v.abs().powf(params.pstar - 1.0) * g.abs())
                .collect();
            let size = flux + grid.integrate(&zero);
            assert!(
                (weak - strong).abs() <= 1e-8 * size,
                "({n},{p}): {weak} vs {strong} at size {size}"
            );
        }
    }
}

#[test]
fn zero_functional_has_zero_solution() {
    let (params, grid) = setup(4, 1.5, 256);
    let f = Residual::from_density(params.p, &grid, &vec![0.0; grid.len()]);
    let sol = dual_solve(&params, &f, &grid).unwrap();
    assert!(sol.w.iter().all(|x| *x == 0.0));
    assert_eq!(sol.dual_norm, 0.0);
}

#[test]
fn quadratic_dual_matches_dense_poisson_solve() {
    for n in [3, 5] {
        let (params, grid) = setup(n, 2.0, 256);
        let m = grid.len() - 1;
        let mut g = DMatrix::<f64>::zeros(m, m);
        for j in 0..m {
            let (s, row) = grid.gradient_row(j);
            for (k, c) in row.iter().enumerate() {
                if s + k < m {
                    g[(j, s + k)] = *c;
                }
            }
        }
        let wm = DMatrix::from_diagonal(&DVector::from_row_slice(grid.mid_weights()));
        let a = g.transpose() * wm * &g;
        let f = perturbed_residual(&params, &grid, 1e-2);
        let rhs = DVector::from_row_slice(&f.weighted(&grid)[..m]);
        let oracle = a.clone().lu().solve(&rhs).unwrap();
        let sol = dual_solve(&params, &f, &grid).unwrap();
        // the normal matrix squares the conditioning of G, so compare in the
        // energy norm it defines rather than nodewise
        let diff = DVector::from_iterator(m, (0..m).map(|i| sol.w[i] - oracle[i]));
        let err = (diff.transpose() * &a * &diff)[(0, 0)].sqrt();
        let scale = (oracle.transpose() * &a * &oracle)[(0, 0)].sqrt();
        // both solves leave a roundoff residual; what remains is the conditioning of A
        let w = DVector::from_iterator(m, sol.w[..m].iter().copied());
        assert!((&a * &w - &rhs).amax() <= 1e-13 * rhs.amax());
        assert!(err <= 1e-8 * scale, "n={n}: {}", err / scale);
    }
}

#[test]
fn duality_identity_and_optimality() {
    for (n, p) in PAIRS {
        let (params, grid) = setup(n, p, 1024);
        let sol = dual_solve(&params, &perturbed_residual(&params, &grid, 1e-2), &grid).unwrap();
        assert!((sol.pairing / sol.energy - 1.0).abs() < 1e-8, "({n},{p}): {sol:?}");
        assert!(sol.optimality < 1e-10, "({n},{p}): {}", sol.optimality);
    }
}

#[test]
fn bubble_has_negligible_dual_norm() {
    for (n, p) in PAIRS {
        let (params, grid) = setup(n, p, 1024);
        let b = params.bubble(1.0);
        let f = residual_about(&params, &b, &ModeFn::zero(grid.len()), &grid).unwrap();
        let d = dual_norm(&params, &f, &grid).unwrap();
        let natural = params.sobolev.powf(n as f64 * (p - 1.0) / p);
        assert!(d <= 1e-6 * natural, "({n},{p}): {d} vs {natural}");
    }
}

#[test]
fn dictionary_never_beats_the_dual_norm() {
    for (n, p) in PAIRS {
        let (params, grid) = setup(n, p, 1024);
        let e = params.exponents();
        let b = params.bubble(1.0);
        let eig = solve_eigs(&assemble_mode_operator(&params, &b, &grid, 0).unwrap(), 6).unwrap();
        let mut dict = vec![b.sample(&e, &grid), b.sample_scale_derivative(&e, &grid)];
        dict.extend(eig.eigenvectors[2..6].iter().cloned());
        for eps in [1e-3, 1e-1] {
            let f = perturbed_residual(&params, &grid, eps);
            let sol = dual_solve(&params, &f, &grid).unwrap();
            let lower = dictionary_lower_bound(p, &f, &grid, &dict);
            assert!(lower > 0.0);
            assert!(
                lower <= sol.dual_norm * (1.0 + 1e-10),
                "({n},{p}) eps={eps}: {lower} > {}",
                sol.dual_norm
            );
            // the minimizer itself attains the supremum
            let attained = dictionary_lower_bound(p, &f, &grid, std::slice::from_ref(&sol.w));
            assert!((attained / sol.dual_norm - 1.0).abs() < 1e-8);
        }
    }
}

#[test]
fn quadratic_spectral_oracle() {
    // -Delta w = v^{p*-2} xi with -Delta xi = mu v^{p*-2} xi gives w = xi / mu,
    // so the dual norm of a mass-normalized eigenvector is mu^{-1/2}
    let (params, grid) = setup(3, 2.0, 1024);
    let e = params.exponents();
    let b = params.bubble(1.0);
    let eig = solve_eigs(&assemble_mode_operator(&params, &b, &grid, 0).unwrap(), 4).unwrap();
    for k in 2..4 {
        let xi = &eig.eigenvectors[k];
        let g: Vec<f64> = grid
            .nodes()
            .iter()
            .zip(xi)
            .map(|(&r, x)| b.profile(&e, r).powf(params.pstar - 2.0) * x)
            .collect();
        let f = Residual::from_density(2.0, &grid, &g);
        let d = dual_norm(&params, &f, &grid).unwrap();
        let expected = eig.eigenvalues[k].powf(-0.5);
        assert!((d / expected - 1.0).abs() < 1e-6, "k={k}: {d} vs {expected}");
    }
}

#[test]
fn scaling_the_functional() {
    for (n, p) in PAIRS {
        let (params, grid) = setup(n, p, 512);
        let f = perturbed_residual(&params, &grid, 1e-2);
        let base = dual_solve(&params, &f, &grid).unwrap();
        let gw = grid.gradient_to_mid(&base.w);
        for s in [-3.0, 0.25, 10.0] {
            let sol = dual_solve(&params, &f.scaled(s), &grid).unwrap();
            assert!((sol.dual_norm / (s.abs() * base.dual_norm) - 1.0).abs() < 1e-8);
            // w scales by sign(s)|s|^{1/(p-1)}; compare gradients in the energy norm.
            // For p > 2 the map y -> |y|^{1/(p-1)} is only Holder at sign changes,
            // which lifts roundoff in the flux well above machine precision.
            let gs = grid.gradient_to_mid(&sol.w);
            let k = s.signum() * s.abs().powf(1.0 / (p - 1.0));
            let diff: f64 = gs
                .iter()
                .zip(&gw)
                .zip(grid.mid_weights())
                .map(|((a, c), w)| w * (a - k * c).abs().powf(p))
                .sum();
            let rel = diff.powf(1.0 / p) / (k.abs() * base.energy.powf(1.0 / p));
            let tol = if p > 2.0 { 1e-5 } else { 1e-8 };
            assert!(rel <= tol, "({n},{p}) s={s}: {rel}");
        }
    }
}

#[test]
fn dual_norm_of_residual_is_scale_invariant() {
    for (n, p) in PAIRS {
        let (params, grid) = setup(n, p, 1024);
        let e = params.exponents();
        let alpha = params.alpha();
        let shape = |r: f64| 0.01 * (-(r.ln() - 0.4).powi(2)).exp() * params.bubble(1.0).profile(&e, r);
        let delta = ModeFn::radial(grid.nodes().iter().map(|&r| shape(r)).collect());
        let f = residual_about(&params, &params.bubble(1.0), &delta, &grid).unwrap();
        let d1 = dual_norm(&params, &f, &grid).unwrap();
        let lambda = 2.0;
        let g2 = RadialGrid::for_bubble(&e, 1024, lambda).unwrap();
        let delta2 = ModeFn::radial(
            g2.nodes()
                .iter()
                .map(|&r| lambda.powf(alpha) * shape(lambda * r))
                .collect(),
        );
        let f2 = residual_about(&params, &params.bubble(lambda), &delta2, &g2).unwrap();
        let d2 = dual_norm(&params, &f2, &g2).unwrap();
        assert!((d2 / d1 - 1.0).abs() < 1e-6, "({n},{p}): {d1} vs {d2}");
    }
}

/// Minimizes `(1/p) int |Dw|^p - int f w` over piecewise-linear functions on a
/// triangulated square `[-half, half]^2` with zero boundary values, by
/// nonlinear conjugate gradients. Returns `int |Dw|^p`, read off the optimal
/// value `J = (1/p - 1) int |Dw|^p`, which is insensitive to early stopping.
fn planar_dual_energy(f: impl Fn(f64, f64) -> f64, p: f64, half: f64, m: usize) -> f64 {
    let h = 2.0 * half / m as f64;
    let idx = |i: usize, j: usize| i * (m + 1) + j;
    let len = (m + 1) * (m + 1);
    let load: Vec<f64> = (0..len)
        .map(|k| {
            let (i, j) = (k / (m + 1), k % (m + 1));
            if i == 0 || j == 0 || i == m || j == m {
                0.0
            } else {
                h * h * f(-half + i as f64 * h, -half + j as f64 * h)
            }
        })
        .collect();
    let interior = |k: usize| {
        let (i, j) = (k / (m + 1), k % (m + 1));
        i > 0 && j > 0 && i < m && j < m
    };
    // energy and gradient; each cell splits into two right triangles
    let eval = |w: &[f64], grad: Option<&mut Vec<f64>>| -> (f64, f64) {
        let mut e = 0.0;
        let mut gbuf = grad;
        if let Some(g) = gbuf.as_deref_mut() {
            g.iter_mut().for_each(|x| *x = 0.0);
        }
        for i in 0..m {
            for j in 0..m {
                let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i, j + 1), idx(i + 1, j + 1));
                // lower triangle a, b, c and upper triangle d, c, b
                for (o, x, y, s) in [(a, b, c, 1.0), (d, c, b, -1.0)] {
                    let gx = s * (w[x] - w[o]) / h;
                    let gy = s * (w[y] - w[o]) / h;
                    let n2 = gx * gx + gy * gy;
                    let area = 0.5 * h * h;
                    e += area * n2.powf(0.5 * p);
                    if let Some(g) = gbuf.as_deref_mut() {
                        if n2 > 0.0 {
                            let k = area * n2.powf(0.5 * p - 1.0);
                            g[x] += k * gx * s / h;
                            g[y] += k * gy * s / h;
                            g[o] -= k * (gx + gy) * s / h;
                        }
                    }
                }
            }
        }
        let lin: f64 = w.iter().zip(&load).map(|(a, b)| a * b).sum();
        (e, e / p - lin)
    };
    let mut w = vec![0.0; len];
    let mut g = vec![0.0; len];
    let grad_j = |w: &[f64], g: &mut Vec<f64>| -> f64 {
        let (_, j) = eval(w, Some(g));
        for k in 0..len {
            g[k] = if interior(k) { g[k] - load[k] } else { 0.0 };
        }
        j
    };
    let mut jv = grad_j(&w, &mut g);
    let mut dir: Vec<f64> = g.iter().map(|x| -x).collect();
    let mut g_prev = g.clone();
    for it in 0..3_000 {
        let slope: f64 = g.iter().zip(&dir).map(|(a, b)| a * b).sum();
        if slope >= 0.0 {
            dir = g.iter().map(|x| -x).collect();
        }
        let slope: f64 = g.iter().zip(&dir).map(|(a, b)| a * b).sum();
        let mut t = 1.0;
        let mut trial;
        loop {
            trial = w.iter().zip(&dir).map(|(a, b)| a + t * b).collect::<Vec<_>>();
            let (_, jt) = eval(&trial, None);
            if jt <= jv + 1e-4 * t * slope || t < 1e-20 {
                break;
            }
            t *= 0.5;
        }
        w = trial;
        g_prev.clone_from(&g);
        let jn = grad_j(&w, &mut g);
        if (jv - jn).abs() < 1e-11 * jn.abs() && it > 50 {
            jv = jn;
            break;
        }
        jv = jn;
        let num: f64 = g.iter().zip(&g_prev).map(|(a, b)| a * (a - b)).sum();
        let den: f64 = g_prev.iter().map(|a| a * a).sum();
        let beta = (num / den).max(0.0);
        for k in 0..len {
            dir[k] = -g[k] + beta * dir[k];
        }
        // doubling the trial step keeps it near the last accepted length
        dir.iter_mut().for_each(|x| *x *= (2.0 * t).min(1.0));
    }
    jv * p / (1.0 - p)
}

#[test]
fn planar_dual_norm_matches_cartesian_minimizer() {
    // zero-mean density, so the minimizer is flat far out and the box truncation is harmless
    let p = 1.5;
    let density = |r2: f64| (1.0 - r2) * (-r2).exp();
    let grid = make_grid(2, 1024, 1.0).unwrap();
    let g: Vec<f64> = grid.nodes().iter().map(|r| density(r * r)).collect();
    let f = Residual::from_density(p, &grid, &g);
    let radial = DualSolver::new(&grid).unwrap().solve(p, &f).unwrap();
    let energy = planar_dual_energy(|x, y| density(x * x + y * y), p, 6.0, 64);
    let cart = energy.powf((p - 1.0) / p);
    assert!(
        (radial.dual_norm / cart - 1.0).abs() < 0.01,
        "{} vs {cart}",
        radial.dual_norm
    );
}
