//! The Euler-Lagrange residual `P(u)` of radial functions and its dual norm
//! in `W^{-1,q}`.
//!
//! The dual norm is `||Dw||_p^{p-1}` where `w` minimizes
//! `(1/p) int |Dw|^p - <f, w>`. On the grid the gradient operator restricted
//! to the Dirichlet unknowns is square and invertible, so the optimality
//! condition `G^T (w_mid |Gw|^{p-2} Gw) = f` is solved exactly by two banded
//! solves and a pointwise inversion of `g -> |g|^{p-2} g`.
//!
//! The right-hand side is the pointwise residual times the node weights. The
//! weak form `G^T(flux) - W u^{p*-1}` is only consistent away from the outer
//! node: the far-field flux `r^{n-1} |v'|^{p-1}` of a bubble tends to a
//! nonzero constant, and the transposed one-sided stencils near the boundary
//! turn it into an O(1) oscillation that the dual norm would pick up.

use serde::Serialize;

use crate::bubble::{Bubble, Params};
use crate::error::{Error, Result};
use crate::grid::{ModeFn, RadialGrid};
use crate::linalg::BandedLu;
use crate::vectorial::signed_pow;

/// `P(u) = -div(|Du|^{p-2} Du) - |u|^{p*-2} u` in two representations.
#[derive(Clone, Debug, Serialize)]
pub struct Residual {
    pub p: f64,
    /// Values at the grid nodes.
    pub pointwise: Vec<f64>,
    /// Weak form: `functional . phi = int |Du|^{p-2} Du . D phi - int |u|^{p*-2} u phi`
    /// for nodal test profiles `phi` supported away from the outer node.
    pub functional: Vec<f64>,
}

impl Residual {
    /// Weak-form pairing with a nodal test profile (its last value is ignored).
    pub fn pair(&self, phi: &[f64]) -> f64 {
        let m = self.functional.len() - 1;
        self.functional[..m].iter().zip(phi).map(|(a, b)| a * b).sum()
    }

    /// Node weights times the pointwise values: the functional used by the dual solve.
    pub fn weighted(&self, grid: &RadialGrid) -> Vec<f64> {
        self.pointwise.iter().zip(grid.weights()).map(|(a, w)| a * w).collect()
    }

    /// Pairing through [`Residual::weighted`].
    pub fn pair_weighted(&self, grid: &RadialGrid, phi: &[f64]) -> f64 {
        let m = self.pointwise.len() - 1;
        self.weighted(grid)[..m].iter().zip(phi).map(|(a, b)| a * b).sum()
    }

    /// Pairing of the pointwise residual with `phi` by nodal quadrature.
    pub fn pair_pointwise(&self, grid: &RadialGrid, phi: &[f64]) -> f64 {
        let prod: Vec<f64> = self.pointwise.iter().zip(phi).map(|(a, b)| a * b).collect();
        grid.integrate(&prod)
    }

    pub fn scaled(&self, s: f64) -> Residual {
        Residual {
            p: self.p,
            pointwise: self.pointwise.iter().map(|v| s * v).collect(),
            functional: self.functional.iter().map(|v| s * v).collect(),
        }
    }

    /// Functional `phi -> int g phi` for a nodal density `g`.
    pub fn from_density(p: f64, grid: &RadialGrid, g: &[f64]) -> Residual {
        Residual {
            p,
            pointwise: g.to_vec(),
            functional: g.iter().zip(grid.weights()).map(|(a, w)| a * w).collect(),
        }
    }
}

pub fn residual(params: &Params, u: &ModeFn, grid: &RadialGrid) -> Result<Residual> {
    if !u.is_radial() {
        return Err(Error::Unsupported(
            "the residual is computed for radial functions only".into(),
        ));
    }
    u.validate(grid)?;
    let u = u.radial_part(grid.len());
    let du = grid.gradient_to_mid(&u);
    Ok(residual_from_parts(params, grid, &u, &du))
}

/// Residual of `u = b + delta` with the bubble differentiated analytically.
///
/// Near the origin the nodal values of a bubble agree with `b(0)` to all
/// printed digits, so differencing them leaves only roundoff; for `p` close
/// to 1 the dual norm raises that roundoff to the power `p - 1`.
pub fn residual_about(params: &Params, b: &Bubble, delta: &ModeFn, grid: &RadialGrid) -> Result<Residual> {
    b.validate(params.n)?;
    if !delta.is_radial() || b.center.iter().any(|z| *z != 0.0) {
        return Err(Error::Unsupported(
            "the residual is computed for radial functions only".into(),
        ));
    }
    delta.validate(grid)?;
    let e = params.exponents();
    let d = delta.radial_part(grid.len());
    let u: Vec<f64> = b.sample(&e, grid).iter().zip(&d).map(|(x, y)| x + y).collect();
    let du: Vec<f64> = grid
        .gradient_to_mid(&d)
        .iter()
        .zip(grid.mids())
        .map(|(g, r)| g + b.radial_derivative(&e, *r))
        .collect();
    Ok(residual_from_parts(params, grid, &u, &du))
}

/// Residual from nodal values of `u` and its derivative at the midpoints.
pub fn residual_from_parts(params: &Params, grid: &RadialGrid, u: &[f64], du: &[f64]) -> Residual {
    let p = params.p;
    let nf = params.n as i32;
    let zero_order: Vec<f64> = u.iter().map(|v| signed_pow(*v, params.pstar - 1.0)).collect();

    let flux: Vec<f64> = du
        .iter()
        .zip(grid.mids())
        .map(|(d, r)| r.powi(nf - 1) * signed_pow(*d, p - 1.0))
        .collect();
    let dflux = grid.mid_derivative(&flux);
    let pointwise: Vec<f64> = dflux
        .iter()
        .zip(grid.nodes())
        .zip(&zero_order)
        .map(|((d, r), z)| -d / r.powi(nf - 1) - z)
        .collect();

    let y: Vec<f64> = du
        .iter()
        .zip(grid.mid_weights())
        .map(|(d, w)| w * signed_pow(*d, p - 1.0))
        .collect();
    let mut functional = grid.gradient_transpose(&y);
    for ((f, z), w) in functional.iter_mut().zip(&zero_order).zip(grid.weights()) {
        *f -= w * z;
    }
    Residual {
        p,
        pointwise,
        functional,
    }
}

/// Square gradient operator on the Dirichlet unknowns, factored once.
pub struct DualSolver<'g> {
    grid: &'g RadialGrid,
    /// Rows of the restricted gradient as (first column, coefficients).
    rows: Vec<(usize, Vec<f64>)>,
    g: BandedLu,
    gt: BandedLu,
}

impl<'g> DualSolver<'g> {
    pub fn new(grid: &'g RadialGrid) -> Result<Self> {
        let m = grid.len() - 1;
        let rows: Vec<(usize, Vec<f64>)> = (0..m)
            .map(|j| {
                let (s, mut row) = grid.gradient_row(j);
                row.truncate(m.saturating_sub(s).min(row.len()));
                (s, row)
            })
            .collect();
        let entry = |j: usize, i: usize| -> f64 {
            let (s, row) = &rows[j];
            if i >= *s && i < s + row.len() {
                row[i - s]
            } else {
                0.0
            }
        };
        let g = BandedLu::factor(m, 7, 7, entry)?;
        let gt = BandedLu::factor(m, 7, 7, |i, j| entry(j, i))?;
        Ok(DualSolver { grid, rows, g, gt })
    }

    pub fn solve(&self, p: f64, f: &Residual) -> Result<DualSolution> {
        let grid = self.grid;
        let m = grid.len() - 1;
        if f.pointwise.len() != grid.len() {
            return Err(Error::InvalidParams("functional does not match the grid".into()));
        }
        let full = f.weighted(grid);
        let rhs = &full[..m];
        let y = self.gt.solve(rhs);
        let grad: Vec<f64> = y
            .iter()
            .zip(grid.mid_weights())
            .map(|(yi, w)| signed_pow(yi / w, 1.0 / (p - 1.0)))
            .collect();
        let mut w = self.g.solve(&grad);
        w.push(0.0);
        if w.iter().any(|x| !x.is_finite()) {
            return Err(Error::Convergence {
                what: "dual solve",
                iterations: 1,
                residual: f64::NAN,
            });
        }

        // Backward errors of the two banded solves. Recomputing the flux from
        // `Gw` instead would raise the roundoff in the flat part of `w` to
        // the power `p - 1`, which dominates for `p` near 1.
        let gw = grid.gradient_to_mid(&w);
        let back = grid.gradient_transpose(&y);
        let flux_err = backward_error(&back[..m], rhs, |i| {
            self.rows
                .iter()
                .zip(&y)
                .filter(|((s, row), _)| i >= *s && i < s + row.len())
                .map(|((s, row), yj)| (row[i - s] * yj).abs())
                .sum()
        });
        let grad_err = backward_error(&gw, &grad, |j| {
            let (s, row) = &self.rows[j];
            row.iter().zip(&w[*s..]).map(|(c, x)| (c * x).abs()).sum()
        });
        let optimality = flux_err.max(grad_err);
        let energy: f64 = gw
            .iter()
            .zip(grid.mid_weights())
            .map(|(d, wm)| wm * d.abs().powf(p))
            .sum();
        let pairing = rhs.iter().zip(&w).map(|(a, b)| a * b).sum();
        Ok(DualSolution {
            dual_norm: energy.powf((p - 1.0) / p),
            w,
            energy,
            pairing,
            optimality,
        })
    }
}

/// `max |a - b| / max (|A| |x| + |b|)` for a computed product `a = A x`.
fn backward_error(a: &[f64], b: &[f64], abs_row: impl Fn(usize) -> f64) -> f64 {
    let (mut num, mut den) = (0.0f64, 0.0f64);
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        num = num.max((x - y).abs());
        den = den.max(abs_row(i) + y.abs());
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DualSolution {
    /// Minimizer on the grid nodes (zero at the outer node).
    pub w: Vec<f64>,
    /// `int |Dw|^p`.
    pub energy: f64,
    /// `<f, w>`; equals `energy` at the optimum.
    pub pairing: f64,
    /// Normwise backward error of the first-order condition, taken over the
    /// flux equation `G^T y = f` and the gradient equation `G w = g`.
    pub optimality: f64,
    /// `||Dw||_p^{p-1}`.
    pub dual_norm: f64,
}

pub fn dual_solve(params: &Params, f: &Residual, grid: &RadialGrid) -> Result<DualSolution> {
    DualSolver::new(grid)?.solve(params.p, f)
}

pub fn dual_norm(params: &Params, f: &Residual, grid: &RadialGrid) -> Result<f64> {
    Ok(dual_solve(params, f, grid)?.dual_norm)
}

/// `max |<f, phi>| / ||D phi||_p` over a dictionary of radial profiles, each
/// taken with its outer value set to zero.
pub fn dictionary_lower_bound(p: f64, f: &Residual, grid: &RadialGrid, dict: &[Vec<f64>]) -> f64 {
    dict.iter()
        .map(|phi| {
            let mut phi = phi.clone();
            if let Some(last) = phi.last_mut() {
                *last = 0.0;
            }
            let d = grid.gradient_to_mid(&phi);
            let norm = grid
                .integrate_mid(&d.iter().map(|x| x.abs().powf(p)).collect::<Vec<_>>())
                .powf(1.0 / p);
            if norm > 0.0 {
                f.pair_weighted(grid, &phi).abs() / norm
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max)
}
