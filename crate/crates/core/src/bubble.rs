//! Talenti bubbles: exact profiles, tangent directions and calibration of the
//! amplitude and the optimal Sobolev constant.
//!
//! The reference profile is `U(r) = (1 + r^q)^{-(n-p)/p}` with `q = p/(p-1)`;
//! a bubble is `a * lambda^{(n-p)/p} * U(lambda |x - z|)`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::RadialGrid;

/// Reference node count used when calibrating the amplitude and `S`.
pub const CALIBRATION_NODES: usize = 1024;

/// Which vectorial/scalar inequality regime a given `p` falls into.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Branch {
    /// `1 < p <= 2n/(n+2)`, equivalently `p* <= 2`.
    Singular,
    /// `2n/(n+2) < p < 2`.
    Subquadratic,
    /// `p >= 2`.
    Degenerate,
}

impl Branch {
    pub fn index(self) -> u8 {
        match self {
            Branch::Singular => 1,
            Branch::Subquadratic => 2,
            Branch::Degenerate => 3,
        }
    }

    pub fn from_index(i: u8) -> Option<Branch> {
        match i {
            1 => Some(Branch::Singular),
            2 => Some(Branch::Subquadratic),
            3 => Some(Branch::Degenerate),
            _ => None,
        }
    }
}

/// Dimension and exponents, before any calibration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Exponents {
    pub n: usize,
    pub p: f64,
    pub q: f64,
    pub pstar: f64,
}

impl Exponents {
    pub fn new(n: usize, p: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidParams(format!("dimension n = {n} must be >= 2")));
        }
        let nf = n as f64;
        if !(p.is_finite() && p > 1.0 && p < nf) {
            return Err(Error::InvalidParams(format!("p = {p} must lie in (1, {n})")));
        }
        Ok(Exponents {
            n,
            p,
            q: p / (p - 1.0),
            pstar: nf * p / (nf - p),
        })
    }

    /// `(n - p) / p`, the homogeneity of the bubble under rescaling.
    pub fn alpha(&self) -> f64 {
        (self.n as f64 - self.p) / self.p
    }

    /// `max{1, p - 1}`.
    pub fn stability_exponent(&self) -> f64 {
        (self.p - 1.0).max(1.0)
    }

    pub fn branch(&self) -> Branch {
        let nf = self.n as f64;
        let threshold = 2.0 * nf / (nf + 2.0);
        if self.p <= threshold * (1.0 + 1e-12) {
            Branch::Singular
        } else if self.p < 2.0 {
            Branch::Subquadratic
        } else {
            Branch::Degenerate
        }
    }

    /// Reference profile `U[0,1]` and its first two radial derivatives.
    pub fn reference_profile(&self, r: f64) -> f64 {
        (1.0 + r.powf(self.q)).powf(-self.alpha())
    }

    pub fn reference_derivative(&self, r: f64) -> f64 {
        let nf = self.n as f64;
        let k = (nf - self.p) / (self.p - 1.0);
        -k * r.powf(self.q - 1.0) * (1.0 + r.powf(self.q)).powf(-nf / self.p)
    }

    pub fn reference_second_derivative(&self, r: f64) -> f64 {
        let nf = self.n as f64;
        let (p, q) = (self.p, self.q);
        let k = (nf - p) / (p - 1.0);
        let rq = r.powf(q);
        // bracket = (q-1)(1+r^q) - (nq/p) r^q, expanded without cancellation
        let bracket = (q - 1.0) + (q - 1.0 - nf * q / p) * rq;
        -k * r.powf(q - 2.0) * (1.0 + rq).powf(-nf / p - 1.0) * bracket
    }
}

/// Problem constants with the calibrated amplitude `a` and optimal constant `S`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Params {
    pub n: usize,
    pub p: f64,
    pub q: f64,
    pub pstar: f64,
    /// Amplitude `a` for which `a U[z, lambda]` solves the critical equation.
    pub amplitude: f64,
    /// Optimal Sobolev constant `S_{n,p}`.
    pub sobolev: f64,
}

impl Params {
    /// Validates `(n, p)` and calibrates `a` and `S` numerically.
    pub fn new(n: usize, p: f64) -> Result<Self> {
        let exps = Exponents::new(n, p)?;
        let amplitude = normalization_constant(&exps)?;
        let sobolev = sobolev_constant(&exps, amplitude)?;
        Ok(Params {
            n,
            p,
            q: exps.q,
            pstar: exps.pstar,
            amplitude,
            sobolev,
        })
    }

    pub fn exponents(&self) -> Exponents {
        Exponents {
            n: self.n,
            p: self.p,
            q: self.q,
            pstar: self.pstar,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.exponents().alpha()
    }

    pub fn branch(&self) -> Branch {
        self.exponents().branch()
    }

    pub fn stability_exponent(&self) -> f64 {
        self.exponents().stability_exponent()
    }

    /// `S^n`, the common value of `||Dv||_p^p` and `||v||_{p*}^{p*}`.
    pub fn energy(&self) -> f64 {
        self.sobolev.powi(self.n as i32)
    }

    /// Calibrated bubble centred at the origin with the given scale.
    pub fn bubble(&self, scale: f64) -> Bubble {
        Bubble::new(self.amplitude, scale, vec![0.0; self.n])
    }
}

/// A point `a U[z, lambda]` of the extremal manifold (amplitude free).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Bubble {
    pub amplitude: f64,
    pub scale: f64,
    pub center: Vec<f64>,
}

impl Bubble {
    pub fn new(amplitude: f64, scale: f64, center: Vec<f64>) -> Self {
        Bubble {
            amplitude,
            scale,
            center,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.amplitude > 0.0 && self.amplitude.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "bubble amplitude {} must be positive",
                self.amplitude
            )));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "bubble scale {} must be positive",
                self.scale
            )));
        }
        if self.center.len() != n {
            return Err(Error::InvalidParams(format!(
                "bubble centre has {} coordinates, expected {n}",
                self.center.len()
            )));
        }
        Ok(())
    }

    /// Radial profile `v(r)` about the centre.
    pub fn profile(&self, e: &Exponents, r: f64) -> f64 {
        let l = self.scale;
        self.amplitude * l.powf(e.alpha()) * e.reference_profile(l * r)
    }

    /// `v'(r)`.
    pub fn radial_derivative(&self, e: &Exponents, r: f64) -> f64 {
        let l = self.scale;
        self.amplitude * l.powf(e.alpha() + 1.0) * e.reference_derivative(l * r)
    }

    /// `v''(r)`.
    pub fn radial_second_derivative(&self, e: &Exponents, r: f64) -> f64 {
        let l = self.scale;
        self.amplitude * l.powf(e.alpha() + 2.0) * e.reference_second_derivative(l * r)
    }

    /// `d v / d lambda` at fixed `r`.
    pub fn scale_derivative(&self, e: &Exponents, r: f64) -> f64 {
        let (l, al) = (self.scale, e.alpha());
        self.amplitude
            * (al * l.powf(al - 1.0) * e.reference_profile(l * r) + l.powf(al) * r * e.reference_derivative(l * r))
    }

    /// `d^2 v / d lambda^2` at fixed `r`.
    pub fn scale_second_derivative(&self, e: &Exponents, r: f64) -> f64 {
        let (l, al) = (self.scale, e.alpha());
        let s = l * r;
        self.amplitude
            * (al * (al - 1.0) * l.powf(al - 2.0) * e.reference_profile(s)
                + 2.0 * al * l.powf(al - 1.0) * r * e.reference_derivative(s)
                + l.powf(al) * r * r * e.reference_second_derivative(s))
    }

    /// `-Delta_p v` for the radial profile, from analytic derivatives.
    pub fn p_laplacian(&self, e: &Exponents, r: f64) -> f64 {
        let d1 = self.radial_derivative(e, r);
        let d2 = self.radial_second_derivative(e, r);
        let nf = e.n as f64;
        -d1.abs().powf(e.p - 2.0) * ((e.p - 1.0) * d2 + (nf - 1.0) * d1 / r)
    }

    /// Samples the profile on the grid nodes.
    pub fn sample(&self, e: &Exponents, grid: &RadialGrid) -> Vec<f64> {
        grid.nodes().iter().map(|&r| self.profile(e, r)).collect()
    }

    pub fn sample_scale_derivative(&self, e: &Exponents, grid: &RadialGrid) -> Vec<f64> {
        grid.nodes().iter().map(|&r| self.scale_derivative(e, r)).collect()
    }

    /// True when `lambda r` lies where analytic cancellation is harmless.
    pub fn in_core(&self, e: &Exponents, r: f64) -> bool {
        let tau = e.q * (self.scale * r).ln();
        tau.abs() <= CORE_HALF_WIDTH
    }
}

/// Half width, in units of `q log(lambda r)`, of the region where the
/// Euler-Lagrange residual is evaluated.
pub const CORE_HALF_WIDTH: f64 = 12.0;

/// Evaluates `v(x)` at a point of `R^n`.
pub fn bubble_eval(params: &Params, b: &Bubble, x: &[f64]) -> f64 {
    let r = x
        .iter()
        .zip(&b.center)
        .map(|(xi, zi)| (xi - zi) * (xi - zi))
        .sum::<f64>()
        .sqrt();
    b.profile(&params.exponents(), r)
}

/// Solves for the amplitude `a` that makes `a U` a solution of
/// `-Delta_p v = v^{p*-1}`.
pub fn normalization_constant(e: &Exponents) -> Result<f64> {
    let grid = RadialGrid::for_bubble(e, CALIBRATION_NODES, 1.0)?;
    let unit = Bubble::new(1.0, 1.0, vec![0.0; e.n]);
    let ratios: Vec<f64> = grid
        .nodes()
        .iter()
        .filter(|&&r| unit.in_core(e, r))
        .map(|&r| unit.p_laplacian(e, r) / unit.profile(e, r).powf(e.pstar - 1.0))
        .collect();
    if ratios.is_empty() {
        return Err(Error::RootBracket("no calibration nodes in the core".into()));
    }
    let mean_ratio = ratios.iter().sum::<f64>() / ratios.len() as f64;
    // relative residual of a*U, averaged over the core: a^{p-p*} c - 1
    let residual = |log_a: f64| (log_a * (e.p - e.pstar)).exp() * mean_ratio - 1.0;
    let log_a = bisect(residual, -40.0, 40.0, 1e-15)?;
    Ok(log_a.exp())
}

/// `S = ||Dv||_p / ||v||_{p*}` for the calibrated bubble.
pub fn sobolev_constant(e: &Exponents, amplitude: f64) -> Result<f64> {
    let grid = RadialGrid::for_bubble(e, CALIBRATION_NODES, 1.0)?;
    let b = Bubble::new(amplitude, 1.0, vec![0.0; e.n]);
    let (grad, mass) = bubble_norms(e, &b, &grid)?;
    Ok(grad.powf(1.0 / e.p) / mass.powf(1.0 / e.pstar))
}

/// `(||Dv||_p^p, ||v||_{p*}^{p*})` by quadrature of analytic integrands.
pub fn bubble_norms(e: &Exponents, b: &Bubble, grid: &RadialGrid) -> Result<(f64, f64)> {
    let grad: Vec<f64> = grid
        .nodes()
        .iter()
        .map(|&r| b.radial_derivative(e, r).abs().powf(e.p))
        .collect();
    let mass: Vec<f64> = grid.nodes().iter().map(|&r| b.profile(e, r).powf(e.pstar)).collect();
    let g = grid.integrate_with_tail(&grad);
    let m = grid.integrate_with_tail(&mass);
    for q in [&g, &m] {
        if q.tail_fraction > 1e-6 {
            return Err(Error::Quadrature {
                tail_fraction: q.tail_fraction,
            });
        }
    }
    Ok((g.value, m.value))
}

/// Euler-Lagrange residual `-Delta_p v - v^{p*-1}` of a bubble on a grid.
#[derive(Clone, Debug)]
pub struct ElResidual {
    /// Pointwise residual at every node.
    pub pointwise: Vec<f64>,
    /// Residual divided by `v^{p*-1}`; `None` outside the core region.
    pub relative: Vec<Option<f64>>,
}

impl ElResidual {
    /// Sup norm of the relative residual over the core nodes.
    pub fn relative_sup(&self) -> f64 {
        self.relative.iter().flatten().fold(0.0, |m, x| m.max(x.abs()))
    }
}

pub fn el_residual(params: &Params, b: &Bubble, grid: &RadialGrid) -> ElResidual {
    let e = params.exponents();
    let mut pointwise = Vec::with_capacity(grid.len());
    let mut relative = Vec::with_capacity(grid.len());
    for &r in grid.nodes() {
        let v = b.profile(&e, r);
        let res = b.p_laplacian(&e, r) - v.powf(e.pstar - 1.0);
        pointwise.push(res);
        relative.push(b.in_core(&e, r).then(|| res / v.powf(e.pstar - 1.0)));
    }
    ElResidual { pointwise, relative }
}

/// Generator of the tangent space `T_v M`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum TangentKind {
    /// `v` itself.
    Amplitude,
    /// `d v / d lambda`.
    Scale,
    /// `d v / d z_i`, carried by the harmonic `x_i / |x|`.
    Translation(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TangentVector {
    pub kind: TangentKind,
    /// Spherical-harmonic degree of the generator.
    pub degree: usize,
    /// Axis of the harmonic (`x_axis / |x|` for degree one).
    pub axis: usize,
}

impl TangentVector {
    /// Radial profile of the generator; the full function is
    /// `profile(r) * Y(x/|x|)`.
    pub fn profile(&self, e: &Exponents, b: &Bubble, r: f64) -> f64 {
        match self.kind {
            TangentKind::Amplitude => b.profile(e, r),
            TangentKind::Scale => b.scale_derivative(e, r),
            // d/dz_i v(|x - z|) = -v'(r) x_i / r
            TangentKind::Translation(_) => -b.radial_derivative(e, r),
        }
    }

    pub fn sample(&self, e: &Exponents, b: &Bubble, grid: &RadialGrid) -> Vec<f64> {
        grid.nodes().iter().map(|&r| self.profile(e, b, r)).collect()
    }
}

/// `{v, d_lambda v, d_{z_1} v, ..., d_{z_n} v}` with their mode labels.
pub fn tangent_basis(params: &Params, b: &Bubble) -> Vec<TangentVector> {
    let _ = b;
    let mut out = vec![
        TangentVector {
            kind: TangentKind::Amplitude,
            degree: 0,
            axis: 0,
        },
        TangentVector {
            kind: TangentKind::Scale,
            degree: 0,
            axis: 0,
        },
    ];
    out.extend((0..params.n).map(|i| TangentVector {
        kind: TangentKind::Translation(i),
        degree: 1,
        axis: i,
    }));
    out
}

/// Bisection on a sign change; `f(lo)` and `f(hi)` must differ in sign.
pub(crate) fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> Result<f64> {
    let (mut flo, fhi) = (f(lo), f(hi));
    if !(flo.is_finite() && fhi.is_finite()) || flo * fhi > 0.0 {
        return Err(Error::RootBracket(format!("f({lo}) = {flo:.3e}, f({hi}) = {fhi:.3e}")));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if (fm < 0.0) == (flo < 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
        if (hi - lo).abs() <= tol * (1.0 + mid.abs()) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}
