//! Per-mode generalized eigenproblems of the linearized p-Laplacian at a
//! bubble, the spectral gap on the complement of the tangent space, and the
//! perturbed gap inequality for small radial perturbations.
//!
//! For radial `v` and `phi = f(r) Y_ell`, the second variation reduces to
//! `m_ell * int |v'|^{p-2} ((p-1) f'^2 + ell(ell+n-2) f^2 / r^2)`, where
//! `m_ell` is the mean square of `Y_ell`, against the mass
//! `m_ell * int v^{p*-2} f^2`.

use rayon::prelude::*;
use serde::Serialize;

use crate::bubble::{Branch, Bubble, Params};
use crate::error::{Error, Result};
use crate::grid::{angular_eigenvalue, harmonic_mean_square, ModeFn, RadialGrid};
use crate::linalg::{smallest_generalized, BandedCholesky, BandedLu, SpdOperator, SymBanded};
use crate::vectorial::{omega_norms, VecIneqConstants};

/// Relative tolerance for eigenvector Rayleigh quotients.
pub const RAYLEIGH_TOL: f64 = 1e-8;

/// Linearized operator restricted to one harmonic degree. Unknowns are the
/// profile values at all nodes but the last, where the profile is zero.
///
/// The stiffness is kept in factored form `G^T diag(grad_coef) G + diag(ang_coef)`
/// so that quadratic forms are sums of nonnegative terms.
#[derive(Clone, Debug)]
pub struct ModeOperator {
    pub ell: usize,
    /// Gradient rows restricted to the unknowns: (first column, coefficients).
    grad_rows: Vec<(usize, Vec<f64>)>,
    /// `m_ell w_mid (p-1) |v'|^{p-2}` on the midpoints.
    pub grad_coef: Vec<f64>,
    /// `m_ell w ell(ell+n-2) |v'|^{p-2} / r^2` on the unknown nodes.
    pub ang_coef: Vec<f64>,
    /// Diagonal of the (lumped) mass matrix `m_ell w v^{p*-2}`.
    pub mass: Vec<f64>,
    pub p: f64,
    pub pstar: f64,
    pub sobolev: f64,
}

impl ModeOperator {
    pub fn unknowns(&self) -> usize {
        self.mass.len()
    }

    fn gradient(&self, f: &[f64]) -> Vec<f64> {
        self.grad_rows
            .iter()
            .map(|(s, row)| row.iter().zip(&f[*s..]).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Bilinear form of two profiles (values past the unknowns are ignored).
    pub fn bilinear(&self, f: &[f64], g: &[f64]) -> f64 {
        let (gf, gg) = (self.gradient(f), self.gradient(g));
        let grad: f64 = self
            .grad_coef
            .iter()
            .zip(gf.iter().zip(&gg))
            .map(|(c, (a, b))| c * a * b)
            .sum();
        let ang: f64 = self
            .ang_coef
            .iter()
            .zip(f.iter().zip(g))
            .map(|(c, (a, b))| c * a * b)
            .sum();
        grad + ang
    }

    /// Quadratic form of a full-length profile.
    pub fn form(&self, f: &[f64]) -> f64 {
        self.bilinear(f, f)
    }

    pub fn mass_form(&self, f: &[f64]) -> f64 {
        self.mass_inner(f, f)
    }

    pub fn mass_inner(&self, f: &[f64], g: &[f64]) -> f64 {
        f.iter().zip(g).zip(&self.mass).map(|((a, b), m)| m * a * b).sum()
    }

    /// Assembled banded stiffness matrix (bandwidth 7).
    pub fn stiffness(&self) -> SymBanded {
        let mut k = SymBanded::zeros(self.unknowns(), 7);
        for ((s, row), c) in self.grad_rows.iter().zip(&self.grad_coef) {
            for (a, &ra) in row.iter().enumerate() {
                for (b, &rb) in row.iter().enumerate().take(a + 1) {
                    k.add_lower(s + a, s + b, c * ra * rb);
                }
            }
        }
        for (i, c) in self.ang_coef.iter().enumerate() {
            k.add_lower(i, i, *c);
        }
        k
    }

    /// Number of eigenvalues of this mode that belong to the tangent space.
    pub fn tangent_count(&self) -> usize {
        match self.ell {
            0 => 2,
            1 => 1,
            _ => 0,
        }
    }

    /// Factors the stiffness for repeated solves.
    pub fn factor(&self) -> Result<FactoredMode<'_>> {
        let kind = if self.ell == 0 {
            // K = B^T B with B = diag(sqrt(grad_coef)) G square; factoring B
            // avoids the cancellation of forming K when |v'|^{p-2} spans
            // many orders of magnitude.
            let m = self.unknowns();
            let entry = |j: usize, i: usize| -> f64 {
                let (s, row) = &self.grad_rows[j];
                if i >= *s && i < s + row.len() {
                    self.grad_coef[j].sqrt() * row[i - s]
                } else {
                    0.0
                }
            };
            let b = BandedLu::factor(m, 7, 7, entry)?;
            let bt = BandedLu::factor(m, 7, 7, |i, j| entry(j, i))?;
            Factor::Root { b, bt }
        } else {
            Factor::Cholesky(BandedCholesky::factor(&self.stiffness())?)
        };
        Ok(FactoredMode { op: self, kind })
    }
}

enum Factor {
    Cholesky(BandedCholesky),
    Root { b: BandedLu, bt: BandedLu },
}

/// A [`ModeOperator`] with a factored stiffness.
pub struct FactoredMode<'a> {
    op: &'a ModeOperator,
    kind: Factor,
}

impl SpdOperator for FactoredMode<'_> {
    fn dim(&self) -> usize {
        self.op.unknowns()
    }

    fn solve(&self, y: &[f64]) -> Vec<f64> {
        match &self.kind {
            Factor::Cholesky(c) => c.solve(y),
            Factor::Root { b, bt } => b.solve(&bt.solve(y)),
        }
    }

    fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        self.op.bilinear(x, y)
    }
}

pub fn assemble_mode_operator(params: &Params, b: &Bubble, grid: &RadialGrid, ell: usize) -> Result<ModeOperator> {
    b.validate(params.n)?;
    let e = params.exponents();
    let p = params.p;
    let unknowns = grid.len() - 1;
    let m_ell = harmonic_mean_square(params.n, ell);
    let mut grad_rows = Vec::with_capacity(unknowns);
    let mut grad_coef = Vec::with_capacity(unknowns);
    for (j, (&rm, &wm)) in grid.mids().iter().zip(grid.mid_weights()).enumerate() {
        let coef = m_ell * wm * (p - 1.0) * b.radial_derivative(&e, rm).abs().powf(p - 2.0);
        if !coef.is_finite() {
            return Err(Error::Domain(format!("non-finite stiffness weight at r = {rm:.3e}")));
        }
        let (s, mut row) = grid.gradient_row(j);
        row.truncate(unknowns.saturating_sub(s).min(row.len()));
        grad_rows.push((s, row));
        grad_coef.push(coef);
    }
    let ang = angular_eigenvalue(params.n, ell);
    let mut ang_coef = Vec::with_capacity(unknowns);
    let mut mass = Vec::with_capacity(unknowns);
    for i in 0..unknowns {
        let r = grid.nodes()[i];
        let w = grid.weights()[i];
        let c = m_ell * w * ang * b.radial_derivative(&e, r).abs().powf(p - 2.0) / (r * r);
        if !c.is_finite() {
            return Err(Error::Domain(format!("non-finite angular weight at r = {r:.3e}")));
        }
        ang_coef.push(c);
        mass.push(m_ell * w * b.profile(&e, r).powf(e.pstar - 2.0));
    }
    Ok(ModeOperator {
        ell,
        grad_rows,
        grad_coef,
        ang_coef,
        mass,
        p,
        pstar: params.pstar,
        sobolev: params.sobolev,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectrumResult {
    pub ell: usize,
    pub eigenvalues: Vec<f64>,
    /// Mass-orthonormal profiles on the full grid (last value zero).
    pub eigenvectors: Vec<Vec<f64>>,
    /// `(mu_next - (p* - 1)) S^p / 2` for the first eigenvalue of this mode
    /// outside the tangent space, when it was computed.
    pub gap_lambda: Option<f64>,
    pub iterations: usize,
    pub residual: f64,
}

pub fn solve_eigs(op: &ModeOperator, k: usize) -> Result<SpectrumResult> {
    let factored = op.factor()?;
    let eig = smallest_generalized(&factored, &op.mass, k)?;
    let mut vectors = Vec::with_capacity(k);
    for (mu, mut x) in eig.values.iter().zip(eig.vectors) {
        let imax = (0..x.len())
            .max_by(|&a, &b| x[a].abs().total_cmp(&x[b].abs()))
            .unwrap_or(0);
        if x[imax] < 0.0 {
            x.iter_mut().for_each(|v| *v = -*v);
        }
        let rq = op.form(&x) / op.mass_form(&x);
        if (rq - mu).abs() > RAYLEIGH_TOL * mu.abs() {
            return Err(Error::Convergence {
                what: "eigenvector Rayleigh quotient",
                iterations: eig.iterations,
                residual: (rq - mu).abs() / mu.abs(),
            });
        }
        x.push(0.0);
        vectors.push(x);
    }
    let next = op.tangent_count();
    let gap_lambda = eig
        .values
        .get(next)
        .map(|mu| (mu - (op.pstar - 1.0)) * op.sobolev.powf(op.p) / 2.0);
    Ok(SpectrumResult {
        ell: op.ell,
        eigenvalues: eig.values,
        eigenvectors: vectors,
        gap_lambda,
        iterations: eig.iterations,
        residual: eig.residual,
    })
}

/// Eigenvalues of every mode up to `ell_max` and the implied gap constant.
#[derive(Clone, Debug, Serialize)]
pub struct SpectralGap {
    /// `S^p / 2 * (mu_min - (p* - 1))`.
    pub lambda_hat: f64,
    /// Smallest eigenvalue outside the tangent space.
    pub mu_min: f64,
    /// Degree attaining `mu_min`.
    pub ell_min: usize,
    pub modes: Vec<SpectrumResult>,
}

/// Eigenpairs requested per mode when computing the gap.
fn eig_count(ell: usize) -> usize {
    match ell {
        0 => 6,
        1 => 3,
        _ => 2,
    }
}

pub fn spectral_gap(params: &Params, b: &Bubble, grid: &RadialGrid, ell_max: usize) -> Result<SpectralGap> {
    if ell_max < 2 {
        return Err(Error::InvalidParams(format!(
            "spectral gap needs modes up to degree 2 or more, got {ell_max}"
        )));
    }
    let modes: Vec<SpectrumResult> = (0..=ell_max)
        .into_par_iter()
        .map(|ell| {
            let op = assemble_mode_operator(params, b, grid, ell)?;
            solve_eigs(&op, eig_count(ell))
        })
        .collect::<Result<_>>()?;
    let (mut mu_min, mut ell_min) = (f64::INFINITY, 0);
    for m in &modes {
        let skip = match m.ell {
            0 => 2,
            1 => 1,
            _ => 0,
        };
        if m.eigenvalues[skip] < mu_min {
            mu_min = m.eigenvalues[skip];
            ell_min = m.ell;
        }
    }
    let lambda_hat = params.sobolev.powf(params.p) / 2.0 * (mu_min - (params.pstar - 1.0));
    if !(lambda_hat > 0.0) {
        return Err(Error::NonPositiveGap(lambda_hat));
    }
    Ok(SpectralGap {
        lambda_hat,
        mu_min,
        ell_min,
        modes,
    })
}

/// `kappa` used downstream: half of the largest value compatible with the gap,
/// `Lambda / (1 + (p* - 1) + Lambda)` with `Lambda = lambda_hat S^{-p}`.
pub fn default_kappa(params: &Params, lambda_hat: f64) -> f64 {
    let g = params.pstar - 1.0;
    let big = lambda_hat * params.sobolev.powf(-params.p);
    0.5 * big / (1.0 + g + big)
}

/// Largest `gamma_0` with `c1/2 <= c1 - (p*-1+kappa) gamma_0 / (p*-1+Lambda)`.
pub fn default_gamma0(params: &Params, c1: f64, kappa: f64, lambda_hat: f64) -> f64 {
    let g = params.pstar - 1.0;
    let big = lambda_hat * params.sobolev.powf(-params.p);
    c1 * (g + big) / (2.0 * (g + kappa))
}

/// Removes the `v^{p*-2}`-weighted projections of `f` onto `basis`
/// (Gram-Schmidt on the basis first).
pub fn orthogonalize(f: &[f64], basis: &[Vec<f64>], weight: &[f64]) -> Vec<f64> {
    let ip = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).zip(weight).map(|((x, y), w)| w * x * y).sum() };
    let mut ortho: Vec<Vec<f64>> = Vec::new();
    for b in basis {
        let mut u = b.clone();
        for _ in 0..2 {
            for q in &ortho {
                let c = ip(&u, q);
                u.iter_mut().zip(q).for_each(|(x, y)| *x -= c * y);
            }
        }
        let nu = ip(&u, &u).sqrt();
        u.iter_mut().for_each(|x| *x /= nu);
        ortho.push(u);
    }
    let mut out = f.to_vec();
    for _ in 0..2 {
        for q in &ortho {
            let c = ip(&out, q);
            out.iter_mut().zip(q).for_each(|(x, y)| *x -= c * y);
        }
    }
    out
}

/// Inputs of the perturbed gap inequality besides the perturbation itself.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct GapCheckConfig {
    pub branch: Branch,
    pub lambda_hat: f64,
    pub gamma0: f64,
    /// Scalar constant `C1` (singular branch only).
    pub c1_scalar: f64,
    /// Vectorial constants; `c3` is read on the degenerate branch.
    pub vec_consts: VecIneqConstants,
    /// Largest admissible `||D phi||_p`.
    pub delta_bar: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct GapMargin {
    /// `int omega |D phi|^2 + (p-2) omega' (|D(v+phi)| - |Dv|)^2`.
    pub weighted: f64,
    /// `gamma_0 int min{|D phi|^p, |Dv|^{p-2} |D phi|^2}` (zero on the degenerate branch).
    pub min_term: f64,
    pub lhs: f64,
    /// The mass term times `p* - 1 + lambda_hat S^{-p}`.
    pub rhs: f64,
    pub margin: f64,
    pub grad_norm: f64,
    pub ortho_residual: f64,
}

/// Default threshold on `||D phi||_p` for the perturbed gap check.
pub const DEFAULT_DELTA_BAR: f64 = 1e-2;

/// Largest relative weighted inner product of `phi` with `v` and `d_lambda v`.
pub fn orthogonality_residual(params: &Params, b: &Bubble, grid: &RadialGrid, phi: &[f64]) -> f64 {
    let e = params.exponents();
    let wv: Vec<f64> = grid
        .nodes()
        .iter()
        .zip(grid.weights())
        .map(|(&r, w)| w * b.profile(&e, r).powf(e.pstar - 2.0))
        .collect();
    let ip = |a: &[f64], c: &[f64]| -> f64 { a.iter().zip(c).zip(&wv).map(|((x, y), w)| w * x * y).sum() };
    let nphi = ip(phi, phi).sqrt();
    if nphi == 0.0 {
        return 0.0;
    }
    [b.sample(&e, grid), b.sample_scale_derivative(&e, grid)]
        .iter()
        .map(|xi| ip(xi, phi).abs() / (ip(xi, xi).sqrt() * nphi))
        .fold(0.0, f64::max)
}

pub fn perturbed_gap_check(
    params: &Params,
    b: &Bubble,
    grid: &RadialGrid,
    phi: &ModeFn,
    cfg: &GapCheckConfig,
) -> Result<GapMargin> {
    if !phi.is_radial() {
        return Err(Error::Unsupported(
            "perturbed gap check takes radial perturbations".into(),
        ));
    }
    phi.validate(grid)?;
    if cfg.branch != params.branch() {
        return Err(Error::Precondition(format!(
            "branch {} does not match p = {}",
            cfg.branch.index(),
            params.p
        )));
    }
    let e = params.exponents();
    let p = params.p;
    let f = phi.radial_part(grid.len());
    let grad_norm = crate::grid::grad_norm_lp(grid, phi, p)?;
    if grad_norm == 0.0 {
        return Ok(GapMargin::default());
    }
    if grad_norm > cfg.delta_bar {
        return Err(Error::Precondition(format!(
            "||D phi||_p = {grad_norm:.3e} exceeds delta_bar = {:.3e}",
            cfg.delta_bar
        )));
    }
    let ortho_residual = orthogonality_residual(params, b, grid, &f);
    if ortho_residual > 1e-8 {
        return Err(Error::Precondition(format!(
            "perturbation is not orthogonal to the tangent space (residual {ortho_residual:.3e})"
        )));
    }
    let c3 = cfg.vec_consts.c3.unwrap_or(0.5);
    let df = grid.gradient_to_mid(&f);
    let (mut weighted, mut min_term) = (0.0, 0.0);
    for ((&r, &w), &y) in grid.mids().iter().zip(grid.mid_weights()).zip(&df) {
        let x = b.radial_derivative(&e, r);
        let (nx, nxy, ny) = (x.abs(), (x + y).abs(), y.abs());
        let (wa, wb) = match cfg.branch {
            Branch::Degenerate => (omega_norms(3, p, c3, nx, nxy)?, omega_norms(4, p, c3, nx, nxy)?),
            _ => (omega_norms(1, p, 0.0, nx, nxy)?, omega_norms(2, p, 0.0, nx, nxy)?),
        };
        weighted += w * (wa * ny * ny + (p - 2.0) * wb * (nxy - nx) * (nxy - nx));
        if cfg.branch != Branch::Degenerate {
            let small = if nx > 0.0 {
                ny.powf(p).min(nx.powf(p - 2.0) * ny * ny)
            } else {
                ny.powf(p)
            };
            min_term += w * small;
        }
    }
    min_term *= cfg.gamma0;
    let factor = params.pstar - 1.0 + cfg.lambda_hat * params.sobolev.powf(-p);
    let mass: f64 = grid
        .nodes()
        .iter()
        .zip(grid.weights())
        .zip(&f)
        .map(|((&r, &w), &ph)| {
            let v = b.profile(&e, r);
            let density = match cfg.branch {
                Branch::Singular => {
                    if ph == 0.0 {
                        0.0
                    } else {
                        (v + cfg.c1_scalar * ph.abs()).powf(params.pstar) / (v * v + ph * ph) * ph * ph
                    }
                }
                _ => v.powf(params.pstar - 2.0) * ph * ph,
            };
            w * density
        })
        .sum();
    let lhs = weighted + min_term;
    let rhs = factor * mass;
    Ok(GapMargin {
        weighted,
        min_term,
        lhs,
        rhs,
        margin: lhs - rhs,
        grad_norm,
        ortho_residual,
    })
}
