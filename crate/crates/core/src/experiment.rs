//! Stability sweeps and term-by-term breakdowns.
//!
//! A sweep perturbs a calibrated bubble `b` along a fixed direction,
//! `u = b + eps phi_0`, re-projects `u` onto the manifold and compares
//! `||Du - Dv||_p^{max(1, p-1)}` with `||P(u)||_{W^{-1,q}}`. The breakdown
//! evaluates every inequality used to bound the second quantity below by
//! the first.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::bubble::{Branch, Bubble, Exponents, Params};
use crate::dualnorm::{residual_from_parts, DualSolver, Residual};
use crate::error::{Error, Result};
use crate::grid::{ModeFn, RadialGrid};
use crate::projection::{project, ProjectionResult};
use crate::spectrum::{
    assemble_mode_operator, default_gamma0, default_kappa, perturbed_gap_check, solve_eigs, spectral_gap,
    GapCheckConfig, GapMargin,
};
use crate::vectorial::{
    estimate_scalar_constants, estimate_vec_constants, gradient_ineq_margin, omega_norms, scalar_ineq_margin,
    signed_pow, ScalarIneqConstants, VecIneqConstants,
};

/// Below this `eps` both sides of the stability inequality are dominated by
/// discretization error; such rows are flagged and left out of slope fits.
pub const EPSILON_FLOOR: f64 = 1e-8;
pub const DEFAULT_EPSILONS: [f64; 5] = [1e-3, 3e-3, 1e-2, 3e-2, 1e-1];
/// Highest angular degree used when estimating the gap.
pub const GAP_ELL_MAX: usize = 4;
/// Relative tolerance on inequality links.
pub const LINK_TOL: f64 = 1e-10;
/// Absolute tolerance on the normalized identity link.
pub const IDENTITY_TOL: f64 = 1e-8;

/// Least-squares slope of `y` against `x`.
pub fn fit_slope(points: &[(f64, f64)]) -> f64 {
    let m = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / m;
    let my = points.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// Empirical constants entering the breakdown.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Constants {
    pub lambda_hat: f64,
    pub kappa: f64,
    pub gamma0: f64,
    pub vec: VecIneqConstants,
    pub scalar: ScalarIneqConstants,
}

impl Constants {
    pub fn estimate(params: &Params, grid: &RadialGrid) -> Result<Self> {
        let b = params.bubble(1.0 / grid.scale());
        let gap = spectral_gap(params, &b, grid, GAP_ELL_MAX)?;
        Self::from_gap(params, gap.lambda_hat)
    }

    pub fn from_gap(params: &Params, lambda_hat: f64) -> Result<Self> {
        let kappa = default_kappa(params, lambda_hat);
        let vec = estimate_vec_constants(params.p, kappa, 1e4, 256)?;
        let scalar = estimate_scalar_constants(params.pstar, kappa)?;
        let gamma0 = vec.c1.map_or(0.0, |c1| default_gamma0(params, c1, kappa, lambda_hat));
        Ok(Constants {
            lambda_hat,
            kappa,
            gamma0,
            vec,
            scalar,
        })
    }

    pub fn gap_config(&self, params: &Params) -> GapCheckConfig {
        GapCheckConfig {
            branch: params.branch(),
            lambda_hat: self.lambda_hat,
            gamma0: self.gamma0,
            c1_scalar: self.scalar.c1,
            vec_consts: self.vec,
            delta_bar: f64::INFINITY,
        }
    }
}

/// `u = base + delta`, with the bubble part differentiated analytically and
/// the derivative of `delta` supplied at the cell midpoints.
#[derive(Clone, Debug)]
pub struct PerturbedBubble {
    pub base: Bubble,
    pub delta: Vec<f64>,
    pub delta_grad: Vec<f64>,
}

impl PerturbedBubble {
    pub fn new(base: Bubble, dir: &UnitDirection, eps: f64) -> Self {
        PerturbedBubble {
            base,
            delta: dir.values.iter().map(|x| eps * x).collect(),
            delta_grad: dir.grad.iter().map(|x| eps * x).collect(),
        }
    }

    pub fn values(&self, params: &Params, grid: &RadialGrid) -> Vec<f64> {
        let e = params.exponents();
        self.base
            .sample(&e, grid)
            .iter()
            .zip(&self.delta)
            .map(|(a, b)| a + b)
            .collect()
    }

    /// Radial derivative at the cell midpoints.
    pub fn gradient(&self, params: &Params, grid: &RadialGrid) -> Vec<f64> {
        let e = params.exponents();
        self.delta_grad
            .iter()
            .zip(grid.mids())
            .map(|(d, r)| d + self.base.radial_derivative(&e, *r))
            .collect()
    }

    pub fn residual(&self, params: &Params, grid: &RadialGrid) -> Residual {
        residual_from_parts(params, grid, &self.values(params, grid), &self.gradient(params, grid))
    }
}

/// Perturbation direction of a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Direction {
    /// The `l = 0` eigenvector with this (0-based) index.
    Eigen(usize),
    /// `exp(-((log(lambda r) - center) / width)^2) v(r)`.
    Bump { center: f64, width: f64 },
}

impl Direction {
    /// Eigenvectors on the singular branch are flat at the origin far below
    /// roundoff, so their nodal derivative there is noise that `|Du|^{p-2}`
    /// amplifies; the bump has an analytic derivative instead.
    pub fn default_for(branch: Branch) -> Direction {
        match branch {
            Branch::Singular => Direction::Bump {
                center: 0.0,
                width: 1.0,
            },
            _ => Direction::Eigen(2),
        }
    }
}

/// Radial direction weighted-orthogonal to `v` and `d_lambda v`, with
/// `||D phi||_p = 1`; `grad` is its derivative at the cell midpoints.
#[derive(Clone, Debug)]
pub struct UnitDirection {
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
}

/// `d/dlambda` of `v'(r)`.
fn scale_derivative_of_gradient(e: &Exponents, b: &Bubble, r: f64) -> f64 {
    let (l, al) = (b.scale, e.alpha());
    b.amplitude
        * ((al + 1.0) * l.powf(al) * e.reference_derivative(l * r)
            + l.powf(al + 1.0) * r * e.reference_second_derivative(l * r))
}

pub fn make_direction(params: &Params, b: &Bubble, grid: &RadialGrid, dir: Direction) -> Result<UnitDirection> {
    let e = params.exponents();
    let (values, grad) = match dir {
        Direction::Eigen(index) => {
            let op = assemble_mode_operator(params, b, grid, 0)?;
            let eig = solve_eigs(&op, (index + 1).max(3))?;
            let xi = eig.eigenvectors[index].clone();
            let g = grid.gradient_to_mid(&xi);
            (xi, g)
        }
        Direction::Bump { center, width } => {
            if !(width > 0.0) {
                return Err(Error::InvalidParams("bump width must be positive".into()));
            }
            let shape = |r: f64| {
                let t = ((b.scale * r).ln() - center) / width;
                ((-t * t).exp(), -2.0 * t / (width * r) * (-t * t).exp())
            };
            let values = grid.nodes().iter().map(|&r| shape(r).0 * b.profile(&e, r)).collect();
            let grad = grid
                .mids()
                .iter()
                .map(|&r| {
                    let (g, dg) = shape(r);
                    dg * b.profile(&e, r) + g * b.radial_derivative(&e, r)
                })
                .collect();
            (values, grad)
        }
    };
    orthogonal_unit(params, b, grid, values, grad)
}

/// Removes the tangent components (values and derivative alike) and
/// rescales to `||D phi||_p = 1`.
pub fn orthogonal_unit(
    params: &Params,
    b: &Bubble,
    grid: &RadialGrid,
    mut values: Vec<f64>,
    mut grad: Vec<f64>,
) -> Result<UnitDirection> {
    let e = params.exponents();
    let v = b.sample(&e, grid);
    let dv = b.sample_scale_derivative(&e, grid);
    let weight: Vec<f64> = v
        .iter()
        .zip(grid.weights())
        .map(|(x, w)| w * x.powf(params.pstar - 2.0))
        .collect();
    let ip = |a: &[f64], c: &[f64]| -> f64 { a.iter().zip(c).zip(&weight).map(|((x, y), w)| w * x * y).sum() };
    let (g00, g01, g11) = (ip(&v, &v), ip(&v, &dv), ip(&dv, &dv));
    let (r0, r1) = (ip(&values, &v), ip(&values, &dv));
    let det = g00 * g11 - g01 * g01;
    let c0 = (g11 * r0 - g01 * r1) / det;
    let c1 = (g00 * r1 - g01 * r0) / det;
    for (i, x) in values.iter_mut().enumerate() {
        *x -= c0 * v[i] + c1 * dv[i];
    }
    for (x, &r) in grad.iter_mut().zip(grid.mids()) {
        *x -= c0 * b.radial_derivative(&e, r) + c1 * scale_derivative_of_gradient(&e, b, r);
    }
    if let Some(last) = values.last_mut() {
        *last = 0.0;
    }
    let norm = grid
        .integrate_mid(&grad.iter().map(|x| x.abs().powf(params.p)).collect::<Vec<_>>())
        .powf(1.0 / params.p);
    if !(norm > 0.0) {
        return Err(Error::InvalidParams("direction lies in the tangent space".into()));
    }
    Ok(UnitDirection {
        values: values.iter().map(|x| x / norm).collect(),
        grad: grad.iter().map(|x| x / norm).collect(),
    })
}

/// Radial unit direction from nodal values alone (derivative by differencing).
pub fn normalized_orthogonal(params: &Params, b: &Bubble, grid: &RadialGrid, f: &[f64]) -> Result<UnitDirection> {
    orthogonal_unit(params, b, grid, f.to_vec(), grid.gradient_to_mid(f))
}

/// One inequality of the chain, read as `lhs <= rhs`.
#[derive(Clone, Debug, Serialize)]
pub struct Link {
    pub name: &'static str,
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs - lhs`.
    pub margin: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Link {
    fn relative(name: &'static str, lhs: f64, rhs: f64) -> Link {
        let tolerance = LINK_TOL * lhs.abs().max(rhs.abs());
        let margin = rhs - lhs;
        Link {
            name,
            lhs,
            rhs,
            margin,
            tolerance,
            passed: margin >= -tolerance,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TermBreakdown {
    pub branch: Branch,
    pub epsilon: f64,
    /// `<P(u), eps phi>` through the pointwise residual.
    pub pairing: f64,
    /// `eps int |Du|^{p-2} Du.D phi - eps int |u|^{p*-2} u phi`.
    pub weak_lhs: f64,
    /// `eps ||P(u)|| ||D phi||_p`.
    pub dual_bound: f64,
    /// `int |Dv|^{p-2} Dv.D phi / ||Dv||_p^{p-1}`.
    pub identity_grad: f64,
    /// `int v^{p*-1} phi / ||Dv||_p^{p-1}`.
    pub identity_mass: f64,
    /// `eps^2 (1-kappa) int omega |D phi|^2` (`omega_1` or `omega_3`).
    pub weighted_grad: f64,
    /// `(p-2)(1-kappa) int omega' (|Du| - |Dv|)^2` (`omega_2` or `omega_4`).
    pub weighted_p2: f64,
    /// `int min{eps^p |D phi|^p, eps^2 |Dv|^{p-2} |D phi|^2}`.
    pub min_integral: f64,
    /// `c1` times the min integral, or `c2 eps^p int |D phi|^p`.
    pub power_term: f64,
    /// `eps^2 (p*-1+kappa)` times the branch mass integral.
    pub mass_term: f64,
    /// `C2 eps^{p*} int |phi|^{p*}` (zero on the singular branch).
    pub critical_term: f64,
    /// `min_integral / (eps^2 ||D phi||_p^2)`.
    pub min_integral_constant: f64,
    /// `1 - kappa - (p*-1+kappa) / (p*-1+lambda_hat S^{-p})`.
    pub gap_coefficient: f64,
    pub gap: Option<GapMargin>,
    pub links: Vec<Link>,
}

impl TermBreakdown {
    pub fn passed(&self) -> bool {
        self.links.iter().all(|l| l.passed)
    }

    /// Named scalar columns for tabular output.
    pub fn columns(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("pairing", self.pairing),
            ("weak_lhs", self.weak_lhs),
            ("dual_bound", self.dual_bound),
            ("identity_grad", self.identity_grad),
            ("identity_mass", self.identity_mass),
            ("weighted_grad", self.weighted_grad),
            ("weighted_p2", self.weighted_p2),
            ("min_integral", self.min_integral),
            ("power_term", self.power_term),
            ("mass_term", self.mass_term),
            ("critical_term", self.critical_term),
            ("min_integral_constant", self.min_integral_constant),
            ("gap_margin", self.gap.map_or(f64::NAN, |g| g.margin)),
        ]
    }

    pub fn column_names() -> Vec<&'static str> {
        vec![
            "pairing",
            "weak_lhs",
            "dual_bound",
            "identity_grad",
            "identity_mass",
            "weighted_grad",
            "weighted_p2",
            "min_integral",
            "power_term",
            "mass_term",
            "critical_term",
            "min_integral_constant",
            "gap_margin",
        ]
    }
}

/// Evaluates the chain for `u` against its projection `proj`.
pub fn term_breakdown(
    params: &Params,
    grid: &RadialGrid,
    u: &PerturbedBubble,
    proj: &ProjectionResult,
    dual_norm: f64,
    consts: &Constants,
) -> Result<TermBreakdown> {
    let eps = proj.epsilon;
    if !(eps > 0.0) {
        return Err(Error::Precondition("the breakdown needs eps > 0".into()));
    }
    let e = params.exponents();
    let (p, ps) = (params.p, params.pstar);
    let branch = params.branch();
    let v = &proj.v;
    let uvals = u.values(params, grid);
    let du = u.gradient(params, grid);
    let vvals = v.sample(&e, grid);
    let pert: Vec<f64> = uvals.iter().zip(&vvals).map(|(a, b)| a - b).collect();
    let kappa = consts.kappa;
    let k1 = 1.0 - kappa;
    let c3 = consts.vec.c3.unwrap_or(0.5);

    let (mut grad_full, mut grad_base, mut weighted_grad, mut weighted_p2) = (0.0, 0.0, 0.0, 0.0);
    let (mut min_integral, mut power_p, mut grad_margin, mut dv_p) = (0.0, 0.0, 0.0, 0.0);
    for ((&r, &w), &d) in grid.mids().iter().zip(grid.mid_weights()).zip(&du) {
        let x = v.radial_derivative(&e, r);
        let y = d - x;
        let (nx, nxy, ny) = (x.abs(), d.abs(), y.abs());
        grad_full += w * signed_pow(d, p - 1.0) * y;
        grad_base += w * signed_pow(x, p - 1.0) * y;
        let (wa, wb) = match branch {
            Branch::Degenerate => (omega_norms(3, p, c3, nx, nxy)?, omega_norms(4, p, c3, nx, nxy)?),
            _ => (
                omega_norms(1, p, 0.0, nx, nxy).unwrap_or(0.0),
                omega_norms(2, p, 0.0, nx, nxy).unwrap_or(0.0),
            ),
        };
        weighted_grad += w * k1 * wa * ny * ny;
        weighted_p2 += w * (p - 2.0) * k1 * wb * (nxy - nx) * (nxy - nx);
        let small = if nx > 0.0 {
            ny.powf(p).min(nx.powf(p - 2.0) * ny * ny)
        } else {
            ny.powf(p)
        };
        min_integral += w * small;
        power_p += w * ny.powf(p);
        dv_p += w * nx.powf(p);
        grad_margin += w * gradient_ineq_margin(&consts.vec, &[x], &[y]);
    }
    let power_term = match branch {
        Branch::Degenerate => consts.vec.c2.unwrap_or(0.0) * power_p,
        _ => consts.vec.c1.unwrap_or(0.0) * min_integral,
    };

    let (mut mass_full, mut mass_base, mut mass_integral, mut critical, mut mass_margin) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (((&w, &a), &uu), &b) in grid.weights().iter().zip(&vvals).zip(&uvals).zip(&pert) {
        mass_full += w * signed_pow(uu, ps - 1.0) * b;
        mass_base += w * a.powf(ps - 1.0) * b;
        mass_integral += w * match branch {
            Branch::Singular if b != 0.0 => (a + consts.scalar.c1 * b.abs()).powf(ps) / (a * a + b * b) * b * b,
            Branch::Singular => 0.0,
            _ => a.powf(ps - 2.0) * b * b,
        };
        critical += w * b.abs().powf(ps);
        mass_margin += w * scalar_ineq_margin(&consts.scalar, a, b);
    }
    let mass_term = (ps - 1.0 + consts.scalar.kappa) * mass_integral;
    let critical_term = match branch {
        Branch::Singular => 0.0,
        _ => consts.scalar.c2 * critical,
    };

    let res = u.residual(params, grid);
    let pairing = res.pair_weighted(grid, &pert);
    let mut pert0 = pert.clone();
    if let Some(last) = pert0.last_mut() {
        *last = 0.0;
    }
    let gp: f64 = grid
        .gradient_to_mid(&pert0)
        .iter()
        .zip(grid.mid_weights())
        .map(|(g, w)| w * g.abs().powf(p))
        .sum();
    let dual_bound = dual_norm * gp.powf(1.0 / p);

    let norm_v = dv_p.powf((p - 1.0) / p);
    let identity_grad = grad_base / eps / norm_v;
    let identity_mass = mass_base / eps / norm_v;
    let big = consts.lambda_hat * params.sobolev.powf(-p);
    let gap_coefficient = 1.0 - kappa - (ps - 1.0 + kappa) / (ps - 1.0 + big);
    let gap = perturbed_gap_check(
        params,
        v,
        grid,
        &ModeFn::radial(pert.clone()),
        &consts.gap_config(params),
    )
    .ok();

    let final_lower = match branch {
        Branch::Singular => 0.5 * consts.vec.c1.unwrap_or(0.0) * min_integral,
        Branch::Subquadratic => 0.5 * consts.vec.c1.unwrap_or(0.0) * min_integral - critical_term,
        Branch::Degenerate => power_term - critical_term,
    };
    let id = identity_grad.abs().max(identity_mass.abs());
    let mut links = vec![
        Link {
            name: "identity",
            lhs: id,
            rhs: 0.0,
            margin: -id,
            tolerance: IDENTITY_TOL,
            passed: id <= IDENTITY_TOL,
        },
        Link::relative("duality", pairing, dual_bound),
        {
            let lhs = grad_base + weighted_grad + weighted_p2 + power_term;
            let mut l = Link::relative("gradient", lhs, grad_full);
            l.margin = grad_margin;
            l.passed = grad_margin >= -l.tolerance;
            l
        },
        {
            let rhs = mass_base + mass_term + critical_term;
            let mut l = Link::relative("mass", mass_full, rhs);
            l.margin = mass_margin;
            l.passed = mass_margin >= -l.tolerance;
            l
        },
    ];
    if let Some(g) = gap {
        links.push(Link::relative("gap", g.rhs, g.lhs));
    }
    links.push(Link {
        name: "gap_coefficient",
        lhs: 0.0,
        rhs: gap_coefficient,
        margin: gap_coefficient,
        tolerance: 0.0,
        passed: gap_coefficient >= 0.0,
    });
    links.push(Link::relative("final", final_lower, dual_bound));
    let min_integral_constant = min_integral / (gp.powf(2.0 / p));
    links.push(Link {
        name: "comparison",
        lhs: 0.0,
        rhs: min_integral_constant,
        margin: min_integral_constant,
        tolerance: 0.0,
        passed: min_integral_constant > 0.0,
    });

    Ok(TermBreakdown {
        branch,
        epsilon: eps,
        pairing,
        weak_lhs: grad_full - mass_full,
        dual_bound,
        identity_grad,
        identity_mass,
        weighted_grad,
        weighted_p2,
        min_integral,
        power_term,
        mass_term,
        critical_term,
        min_integral_constant,
        gap_coefficient,
        gap,
        links,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepConfig {
    pub grid_size: usize,
    /// Scale of the base bubble; the grid is rebuilt around it.
    pub scale: f64,
    pub direction: Direction,
    pub epsilons: Vec<f64>,
    pub breakdown: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            grid_size: 1024,
            scale: 1.0,
            direction: Direction::Eigen(2),
            epsilons: DEFAULT_EPSILONS.to_vec(),
            breakdown: true,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct StabilityReport {
    pub n: usize,
    pub p: f64,
    /// Requested perturbation size.
    pub epsilon: f64,
    /// `||Du - Dv||_p` after projection.
    pub projected_epsilon: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: Option<f64>,
    pub slope: Option<f64>,
    /// Below [`EPSILON_FLOOR`]: excluded from fits.
    pub exact: bool,
    pub amplitude_drift: f64,
    pub scale_shift: f64,
    pub dual_optimality: f64,
    pub terms: Option<TermBreakdown>,
    pub error: Option<String>,
}

impl StabilityReport {
    fn failed(params: &Params, epsilon: f64, err: Error) -> Self {
        StabilityReport {
            n: params.n,
            p: params.p,
            epsilon,
            projected_epsilon: f64::NAN,
            lhs: f64::NAN,
            rhs: f64::NAN,
            ratio: None,
            slope: None,
            exact: epsilon < EPSILON_FLOOR,
            amplitude_drift: f64::NAN,
            scale_shift: f64::NAN,
            dual_optimality: f64::NAN,
            terms: None,
            error: Some(err.to_string()),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Sweep {
    pub config: SweepConfig,
    pub constants: Option<Constants>,
    pub slope: Option<f64>,
    pub rows: Vec<StabilityReport>,
}

impl Sweep {
    /// `max ratio / min ratio` over rows above the floor.
    pub fn ratio_spread(&self) -> Option<f64> {
        let r: Vec<f64> = self.rows.iter().filter(|r| !r.exact).filter_map(|r| r.ratio).collect();
        if r.is_empty() {
            return None;
        }
        let max = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = r.iter().cloned().fold(f64::INFINITY, f64::min);
        Some(max / min)
    }
}

pub fn stability_sweep(params: &Params, cfg: &SweepConfig) -> Result<Sweep> {
    if cfg.epsilons.iter().any(|e| !(*e >= 0.0 && *e <= 0.1)) {
        return Err(Error::InvalidParams("sweep epsilons must lie in [0, 0.1]".into()));
    }
    let e = params.exponents();
    let grid = RadialGrid::for_bubble(&e, cfg.grid_size, cfg.scale)?;
    let base = params.bubble(cfg.scale);
    let phi0 = make_direction(params, &base, &grid, cfg.direction)?;
    let constants = if cfg.breakdown {
        Some(Constants::estimate(params, &grid)?)
    } else {
        None
    };
    let solver = DualSolver::new(&grid)?;
    let mut rows: Vec<StabilityReport> = cfg
        .epsilons
        .par_iter()
        .map(|&eps| {
            sweep_row(params, &grid, &solver, &base, &phi0, eps, constants.as_ref())
                .unwrap_or_else(|err| StabilityReport::failed(params, eps, err))
        })
        .collect();
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| !r.exact && r.error.is_none() && r.rhs > 0.0)
        .map(|r| (r.projected_epsilon.ln(), r.rhs.ln()))
        .collect();
    let slope = (pts.len() >= 2).then(|| fit_slope(&pts));
    for r in &mut rows {
        r.slope = slope;
    }
    Ok(Sweep {
        config: cfg.clone(),
        constants,
        slope,
        rows,
    })
}

fn sweep_row(
    params: &Params,
    grid: &RadialGrid,
    solver: &DualSolver,
    base: &Bubble,
    phi0: &UnitDirection,
    eps: f64,
    consts: Option<&Constants>,
) -> Result<StabilityReport> {
    let u = PerturbedBubble::new(base.clone(), phi0, eps);
    let proj = project(params, &ModeFn::radial(u.values(params, grid)), grid, base)?;
    let res = u.residual(params, grid);
    let dual = solver.solve(params.p, &res)?;
    let lhs = proj.epsilon.powf(params.stability_exponent());
    let rhs = dual.dual_norm;
    let exact = eps < EPSILON_FLOOR;
    let terms = match consts {
        Some(c) if !exact => Some(term_breakdown(params, grid, &u, &proj, rhs, c)?),
        _ => None,
    };
    Ok(StabilityReport {
        n: params.n,
        p: params.p,
        epsilon: eps,
        projected_epsilon: proj.epsilon,
        lhs,
        rhs,
        ratio: (!exact && rhs > 0.0).then(|| lhs / rhs),
        slope: None,
        exact,
        amplitude_drift: proj.amplitude_drift,
        scale_shift: proj.v.scale / base.scale - 1.0,
        dual_optimality: dual.optimality,
        terms,
        error: None,
    })
}

/// Outcome of the perturbed gap inequality on random orthogonal perturbations.
#[derive(Clone, Debug, Serialize)]
pub struct GapSample {
    pub norm: f64,
    pub margin: GapMargin,
    /// Margin divided by the larger side.
    pub relative_margin: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GapSweep {
    pub constants: Constants,
    pub samples: Vec<GapSample>,
    pub min_margin: f64,
    pub min_relative_margin: f64,
}

/// `count` random radial perturbations, orthogonal to the tangent space,
/// scaled to each norm in `norms`. Each is a random combination of the
/// `l = 0` eigenvectors 3..6 and a Gaussian bump in `log r`.
pub fn gap_check_sweep(params: &Params, grid_size: usize, count: usize, norms: &[f64], seed: u64) -> Result<GapSweep> {
    let e = params.exponents();
    let grid = RadialGrid::for_bubble(&e, grid_size, 1.0)?;
    let b = params.bubble(1.0);
    let gap = spectral_gap(params, &b, &grid, GAP_ELL_MAX)?;
    let constants = Constants::from_gap(params, gap.lambda_hat)?;
    let cfg = constants.gap_config(params);
    let eig = &gap.modes[0].eigenvectors;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(count * norms.len());
    for _ in 0..count {
        let centre: f64 = rng.random_range(-3.0..3.0);
        let width: f64 = rng.random_range(0.3..2.0);
        let amp: f64 = rng.random_range(-1.0..1.0);
        let coef: Vec<f64> = (2..eig.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let raw: Vec<f64> = grid
            .nodes()
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let t = (r.ln() - centre) / width;
                let bump = amp * (-t * t).exp() * b.profile(&e, *r);
                bump + coef.iter().zip(&eig[2..]).map(|(c, x)| c * x[i]).sum::<f64>()
            })
            .collect();
        let unit = normalized_orthogonal(params, &b, &grid, &raw)?;
        for &s in norms {
            let phi = ModeFn::radial(unit.values.iter().map(|x| s * x).collect());
            let margin = perturbed_gap_check(params, &b, &grid, &phi, &cfg)?;
            let scale = margin.lhs.abs().max(margin.rhs.abs());
            samples.push(GapSample {
                norm: s,
                margin,
                relative_margin: if scale > 0.0 { margin.margin / scale } else { 0.0 },
            });
        }
    }
    let min_margin = samples.iter().map(|s| s.margin.margin).fold(f64::INFINITY, f64::min);
    let min_relative_margin = samples.iter().map(|s| s.relative_margin).fold(f64::INFINITY, f64::min);
    Ok(GapSweep {
        constants,
        samples,
        min_margin,
        min_relative_margin,
    })
}

/// Version tag written as the first line of sweep CSV files.
pub const CSV_TAG: &str = "# sobolev-lab sweep v1";

/// CSV rendering of sweep rows; numbers in `{:.16e}`, missing values empty.
pub fn sweep_csv(rows: &[StabilityReport]) -> String {
    let mut out = String::new();
    out.push_str(CSV_TAG);
    out.push('\n');
    let mut header = vec![
        "n",
        "p",
        "epsilon",
        "lhs",
        "rhs",
        "ratio",
        "slope",
        "projected_epsilon",
        "amplitude_drift",
        "scale_shift",
        "dual_optimality",
        "exact",
        "links_passed",
    ];
    header.extend(TermBreakdown::column_names());
    header.push("error");
    out.push_str(&header.join(","));
    out.push('\n');
    let num = |x: f64| format!("{x:.16e}");
    let opt = |x: Option<f64>| x.map(num).unwrap_or_default();
    for r in rows {
        let mut cells = vec![
            r.n.to_string(),
            num(r.p),
            num(r.epsilon),
            num(r.lhs),
            num(r.rhs),
            opt(r.ratio),
            opt(r.slope),
            num(r.projected_epsilon),
            num(r.amplitude_drift),
            num(r.scale_shift),
            num(r.dual_optimality),
            r.exact.to_string(),
            r.terms.as_ref().map(|t| t.passed().to_string()).unwrap_or_default(),
        ];
        match &r.terms {
            Some(t) => cells.extend(t.columns().into_iter().map(|(_, x)| num(x))),
            None => cells.extend(TermBreakdown::column_names().iter().map(|_| String::new())),
        }
        cells.push(r.error.as_deref().unwrap_or("").replace([',', '\n'], ";"));
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}
