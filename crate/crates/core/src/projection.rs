//! Projection of a radial function onto the bubble manifold in the weighted
//! sense: find `v = c U[0, lambda]` with `u - v` orthogonal to `v` and to
//! `lambda dv/dlambda` in `L^2(v^{p*-2})`.
//!
//! With `s = lambda r` and `g = (lambda d/dlambda) log U = alpha (1 - q s^q / (1 + s^q))`
//! every integrand is `U^{p*-1}` times a bounded factor, so the Jacobian in
//! `(c, log lambda)` stays well scaled far out in the tail.

use serde::Serialize;

use crate::bubble::{Bubble, Params};
use crate::error::{Error, Result};
use crate::grid::{grad_norm_lp, ModeFn, RadialGrid};

const MAX_NEWTON: usize = 60;
const NEWTON_TOL: f64 = 1e-14;

#[derive(Clone, Debug, Serialize)]
pub struct ProjectionResult {
    pub v: Bubble,
    pub epsilon: f64,
    pub phi: ModeFn,
    /// `int v^{p*-2} xi (u - v)` for `xi = v`, `lambda dv/dlambda` and the
    /// `n` translations (zero for radial input).
    pub ortho_residuals: Vec<f64>,
    /// `int v^{p*-1} |u|`, the natural size of the residuals above.
    pub ortho_scale: f64,
    /// `|c / a - 1|` for the solved amplitude `c`.
    pub amplitude_drift: f64,
    pub iterations: usize,
}

struct Sampled {
    /// `U^{p*-1}` times node weights.
    w: Vec<f64>,
    u: Vec<f64>,
    g: Vec<f64>,
    dg: Vec<f64>,
}

fn sample(params: &Params, grid: &RadialGrid, log_lambda: f64) -> Sampled {
    let e = params.exponents();
    let (alpha, q) = (e.alpha(), e.q);
    let lambda = log_lambda.exp();
    let b = params.bubble(lambda);
    let mut out = Sampled {
        w: Vec::with_capacity(grid.len()),
        u: Vec::with_capacity(grid.len()),
        g: Vec::with_capacity(grid.len()),
        dg: Vec::with_capacity(grid.len()),
    };
    for (&r, &wt) in grid.nodes().iter().zip(grid.weights()) {
        let u = b.profile(&e, r);
        let sq = (lambda * r).powf(q);
        let frac = sq / (1.0 + sq);
        out.w.push(wt * u.powf(params.pstar - 1.0));
        out.u.push(u);
        out.g.push(alpha * (1.0 - q * frac));
        out.dg.push(-alpha * q * q * frac / (1.0 + sq));
    }
    out
}

/// Equations and Jacobian at `(c, log lambda)`.
fn system(pstar: f64, s: &Sampled, u: &[f64], c: f64) -> ([f64; 2], [[f64; 2]; 2]) {
    let mut e = [0.0; 2];
    let mut j = [[0.0; 2]; 2];
    for (i, &ui) in u.iter().enumerate() {
        let (w, uu, g, dg) = (s.w[i], s.u[i], s.g[i], s.dg[i]);
        let d = ui - c * uu;
        e[0] += w * d;
        e[1] += w * g * d;
        j[0][0] -= w * uu;
        j[0][1] += (pstar - 1.0) * w * g * d - c * w * g * uu;
        j[1][0] -= w * g * uu;
        j[1][1] += w * ((pstar - 1.0) * g * g + dg) * d - c * w * g * g * uu;
    }
    (e, j)
}

fn norm2(e: [f64; 2]) -> f64 {
    e[0].hypot(e[1])
}

pub fn project(params: &Params, u: &ModeFn, grid: &RadialGrid, init: &Bubble) -> Result<ProjectionResult> {
    init.validate(params.n)?;
    if !u.is_radial() {
        return Err(Error::Unsupported(
            "projection is implemented for radial functions".into(),
        ));
    }
    if init.center.iter().any(|z| *z != 0.0) {
        return Err(Error::Unsupported(
            "radial projection needs a centred initial bubble".into(),
        ));
    }
    u.validate(grid)?;
    let e = params.exponents();
    let uvals = u.radial_part(grid.len());
    let mut c = init.amplitude / params.amplitude;
    let mut t = init.scale.ln();
    let s = sample(params, grid, t);
    let scale: f64 = s.w.iter().zip(&uvals).map(|(w, x)| w * x.abs()).sum();
    if scale == 0.0 {
        return Err(Error::Precondition("u vanishes on the grid".into()));
    }
    let (mut eq, mut jac) = system(params.pstar, &s, &uvals, c);
    let mut iterations = 0;
    while norm2(eq) > NEWTON_TOL * scale {
        if iterations == MAX_NEWTON {
            return Err(Error::Convergence {
                what: "projection Newton",
                iterations,
                residual: norm2(eq) / scale,
            });
        }
        iterations += 1;
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        if det == 0.0 || !det.is_finite() {
            return Err(Error::Convergence {
                what: "projection Newton (singular Jacobian)",
                iterations,
                residual: norm2(eq) / scale,
            });
        }
        let dc = -(jac[1][1] * eq[0] - jac[0][1] * eq[1]) / det;
        let dt = -(jac[0][0] * eq[1] - jac[1][0] * eq[0]) / det;

        let current = norm2(eq);
        let mut step = 1.0;
        loop {
            let (c1, t1) = (c + step * dc, t + step * dt);
            let (e1, j1) = system(params.pstar, &sample(params, grid, t1), &uvals, c1);
            if norm2(e1) < current || step < 1e-6 {
                // accept the smallest step even without decrease: roundoff stalls near the root
                if norm2(e1) >= current && current > 1e3 * NEWTON_TOL * scale {
                    return Err(Error::Convergence {
                        what: "projection line search",
                        iterations,
                        residual: current / scale,
                    });
                }
                c = c1;
                t = t1;
                eq = e1;
                jac = j1;
                break;
            }
            step *= 0.5;
        }
        if (dc.abs() < 1e-15 * c.abs() && dt.abs() < 1e-15) || (step < 1e-6) {
            break;
        }
    }

    let v = Bubble::new(c * params.amplitude, t.exp(), vec![0.0; params.n]);
    let vals = v.sample(&e, grid);
    let diff: Vec<f64> = uvals.iter().zip(&vals).map(|(a, b)| a - b).collect();
    let epsilon = grad_norm_lp(grid, &ModeFn::radial(diff.clone()), params.p)?;
    let phi = if epsilon > 0.0 {
        ModeFn::radial(diff.iter().map(|d| d / epsilon).collect())
    } else {
        ModeFn::zero(grid.len())
    };
    let cw = c.powf(params.pstar - 1.0);
    let mut ortho = vec![cw * eq[0], cw * eq[1]];
    ortho.extend(std::iter::repeat_n(0.0, params.n));
    Ok(ProjectionResult {
        v,
        epsilon,
        phi,
        ortho_residuals: ortho,
        ortho_scale: cw * scale,
        amplitude_drift: (c - 1.0).abs(),
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(n: usize, p: f64) -> (Params, RadialGrid) {
        let params = Params::new(n, p).unwrap();
        let grid = RadialGrid::for_bubble(&params.exponents(), 512, 1.0).unwrap();
        (params, grid)
    }

    #[test]
    fn calibrated_bubble_is_fixed() {
        let (params, grid) = setup(3, 2.0);
        let b = params.bubble(1.0);
        let u = ModeFn::radial(b.sample(&params.exponents(), &grid));
        let res = project(&params, &u, &grid, &b).unwrap();
        assert_eq!(res.epsilon, 0.0);
        assert_eq!(res.v, b);
        assert!(res.ortho_residuals.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn recovers_rescaled_bubble() {
        for (n, p) in [(3, 1.2), (4, 1.5), (5, 3.0)] {
            let (params, grid) = setup(n, p);
            let target = params.bubble(1.3);
            let u = ModeFn::radial(target.sample(&params.exponents(), &grid));
            let res = project(&params, &u, &grid, &params.bubble(1.0)).unwrap();
            assert!((res.v.scale - 1.3).abs() < 1e-8, "{n} {p}: {}", res.v.scale);
            assert!(res.epsilon < 1e-8, "{n} {p}: {}", res.epsilon);
            assert!(res.amplitude_drift < 1e-10);
        }
    }

    #[test]
    fn rejects_non_radial() {
        let (params, grid) = setup(3, 2.0);
        let u = ModeFn::single(1, 0, vec![0.0; grid.len()]);
        assert!(matches!(
            project(&params, &u, &grid, &params.bubble(1.0)),
            Err(Error::Unsupported(_))
        ));
    }
}
