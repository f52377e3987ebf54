//! Radial discretization of `R^n`.
//!
//! Nodes are uniform in a logarithmic coordinate `x`, with `r = L exp(x / kappa)`.
//! Radial integrals become `|S^{n-1}| / kappa * int f(r) r^n dx`, which the
//! trapezoid rule handles to spectral accuracy for profiles that decay
//! exponentially in `x` at both ends (bubbles, Gaussians, their derivatives).
//!
//! Derivatives use staggered high-order finite differences: gradients live on
//! the cell midpoints and zero-order terms on the nodes.

use serde::Serialize;

use crate::bubble::Exponents;
use crate::error::{Error, Result};

/// Default coordinate window for [`make_grid`], in units of `log r`.
pub const DEFAULT_LOG_RANGE: (f64, f64) = (-24.0, 34.0);

/// Depth of the tails, in e-folds of the integrands, for bubble grids.
const BUBBLE_TAIL_DEPTH: f64 = 34.0;

/// Surface area of the unit sphere `S^{k}` in `R^{k+1}`.
pub fn sphere_area(k: usize) -> f64 {
    let mut even = 2.0;
    let mut odd = 2.0 * std::f64::consts::PI;
    if k == 0 {
        return even;
    }
    if k == 1 {
        return odd;
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    for j in 2..=k {
        // |S^j| = 2 pi / (j - 1) |S^{j-2}|
        let next = two_pi / (j as f64 - 1.0) * if j.is_multiple_of(2) { even } else { odd };
        if j.is_multiple_of(2) {
            even = next;
        } else {
            odd = next;
        }
    }
    if k.is_multiple_of(2) {
        even
    } else {
        odd
    }
}

/// Result of a quadrature with the fraction carried by the outer 5% of nodes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Quadrature {
    pub value: f64,
    pub tail_fraction: f64,
}

/// Finite-difference rows with a sliding window of fixed width.
#[derive(Clone, Debug)]
struct Stencil {
    width: usize,
    start: Vec<usize>,
    coef: Vec<f64>,
}

impl Stencil {
    /// Builds one row per target position `targets[i]`, sampling `sources`
    /// at `width` consecutive points starting at `start(i)`.
    fn build(sources: &[f64], targets: &[f64], width: usize, order: usize, start: impl Fn(usize) -> usize) -> Self {
        let mut starts = Vec::with_capacity(targets.len());
        let mut coef = Vec::with_capacity(targets.len() * width);
        for (i, &z) in targets.iter().enumerate() {
            let s = start(i);
            let w = fornberg(z, &sources[s..s + width], order);
            starts.push(s);
            coef.extend_from_slice(&w[order]);
        }
        Stencil {
            width,
            start: starts,
            coef,
        }
    }

    fn rows(&self) -> usize {
        self.start.len()
    }

    fn row(&self, i: usize) -> (usize, &[f64]) {
        (self.start[i], &self.coef[i * self.width..(i + 1) * self.width])
    }

    fn apply(&self, f: &[f64]) -> Vec<f64> {
        (0..self.rows())
            .map(|i| {
                let (s, c) = self.row(i);
                c.iter().zip(&f[s..s + self.width]).map(|(a, b)| a * b).sum()
            })
            .collect()
    }

    fn apply_transpose(&self, g: &[f64], out_len: usize) -> Vec<f64> {
        let mut out = vec![0.0; out_len];
        for (i, gi) in g.iter().enumerate() {
            let (s, c) = self.row(i);
            for (k, ck) in c.iter().enumerate() {
                out[s + k] += ck * gi;
            }
        }
        out
    }
}

/// Finite-difference weights (Fornberg 1988) for derivatives `0..=m` at `z`.
pub fn fornberg(z: f64, x: &[f64], m: usize) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut c = vec![vec![0.0; n]; m + 1];
    let mut c1 = 1.0;
    let mut c4 = x[0] - z;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = x[i] - z;
        for j in 0..i {
            let c3 = x[i] - x[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

/// Immutable radial grid with quadrature weights and difference operators.
#[derive(Clone, Debug)]
pub struct RadialGrid {
    n: usize,
    kappa: f64,
    scale: f64,
    h: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    mids: Vec<f64>,
    mid_weights: Vec<f64>,
    grad: Stencil,
    interp: Stencil,
    div: Stencil,
    deriv: Stencil,
}

/// Uniform-in-`log r` grid with `n_nodes` nodes and map scale `scale`.
pub fn make_grid(n: usize, n_nodes: usize, scale: f64) -> Result<RadialGrid> {
    RadialGrid::new(n, n_nodes, scale, 1.0, DEFAULT_LOG_RANGE)
}

impl RadialGrid {
    /// `r_i = scale * exp(x_i / kappa)` with `x` uniform on `range`.
    pub fn new(n: usize, n_nodes: usize, scale: f64, kappa: f64, range: (f64, f64)) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidParams(format!("dimension {n} < 2")));
        }
        if n_nodes < 16 {
            return Err(Error::InvalidParams(format!(
                "grid needs at least 16 nodes, got {n_nodes}"
            )));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidParams(format!("grid scale {scale} must be positive")));
        }
        if !(kappa > 0.0 && range.1 > range.0) {
            return Err(Error::InvalidParams("empty coordinate window".into()));
        }
        let h = (range.1 - range.0) / (n_nodes - 1) as f64;
        let xs: Vec<f64> = (0..n_nodes).map(|i| range.0 + i as f64 * h).collect();
        let xm: Vec<f64> = xs[..n_nodes - 1].iter().map(|x| x + 0.5 * h).collect();
        let area = sphere_area(n - 1);
        let nf = n as i32;
        let nodes: Vec<f64> = xs.iter().map(|x| scale * (x / kappa).exp()).collect();
        let mids: Vec<f64> = xm.iter().map(|x| scale * (x / kappa).exp()).collect();
        let mut weights: Vec<f64> = nodes.iter().map(|r| area * r.powi(nf) * h / kappa).collect();
        weights[0] *= 0.5;
        weights[n_nodes - 1] *= 0.5;
        let mid_weights = mids.iter().map(|r| area * r.powi(nf) * h / kappa).collect();

        let nn = n_nodes;
        let grad = Stencil::build(&xs, &xm, 8, 1, |j| j.saturating_sub(3).min(nn - 8));
        let interp = Stencil::build(&xs, &xm, 8, 0, |j| j.saturating_sub(3).min(nn - 8));
        let div = Stencil::build(&xm, &xs, 8, 1, |i| i.saturating_sub(4).min(nn - 9));
        let deriv = Stencil::build(&xs, &xs, 9, 1, |i| i.saturating_sub(4).min(nn - 9));
        Ok(RadialGrid {
            n,
            kappa,
            scale,
            h,
            nodes,
            weights,
            mids,
            mid_weights,
            grad,
            interp,
            div,
            deriv,
        })
    }

    /// Grid adapted to a bubble of scale `lambda`: `(lambda r)^q = e^x`, with
    /// windows wide enough that all bubble integrands lose 34 e-folds.
    pub fn for_bubble(e: &Exponents, n_nodes: usize, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParams(format!("bubble scale {lambda} must be positive")));
        }
        let nf = e.n as f64;
        let hi = BUBBLE_TAIL_DEPTH / e.alpha();
        let lo = -BUBBLE_TAIL_DEPTH * e.q / nf.min(nf + e.q - 2.0);
        RadialGrid::new(e.n, n_nodes, 1.0 / lambda, e.q, (lo, hi))
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mids(&self) -> &[f64] {
        &self.mids
    }

    pub fn mid_weights(&self) -> &[f64] {
        &self.mid_weights
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn step(&self) -> f64 {
        self.h
    }

    /// `sum_i w_i f(r_i)`, the integral of a radial function over `R^n`.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        assert_eq!(f.len(), self.len(), "integrand length");
        self.weights.iter().zip(f).map(|(w, v)| w * v).sum()
    }

    /// Like [`integrate`](Self::integrate), also reporting how much of the
    /// absolute mass sits on the outermost 5% of nodes.
    pub fn integrate_with_tail(&self, f: &[f64]) -> Quadrature {
        let value = self.integrate(f);
        let n = self.len();
        let tail_start = n - (n / 20).max(1);
        let total: f64 = self.weights.iter().zip(f).map(|(w, v)| (w * v).abs()).sum();
        let tail: f64 = self.weights[tail_start..]
            .iter()
            .zip(&f[tail_start..])
            .map(|(w, v)| (w * v).abs())
            .sum();
        Quadrature {
            value,
            tail_fraction: if total > 0.0 { tail / total } else { 0.0 },
        }
    }

    /// Midpoint-rule integral of values given on the cell midpoints.
    pub fn integrate_mid(&self, g: &[f64]) -> f64 {
        assert_eq!(g.len(), self.mids.len(), "midpoint integrand length");
        self.mid_weights.iter().zip(g).map(|(w, v)| w * v).sum()
    }

    /// `f'` at the cell midpoints.
    pub fn gradient_to_mid(&self, f: &[f64]) -> Vec<f64> {
        let mut g = self.grad.apply(f);
        for (gi, r) in g.iter_mut().zip(&self.mids) {
            *gi *= self.kappa / r;
        }
        g
    }

    /// Transpose of [`gradient_to_mid`](Self::gradient_to_mid).
    pub fn gradient_transpose(&self, g: &[f64]) -> Vec<f64> {
        let scaled: Vec<f64> = g.iter().zip(&self.mids).map(|(gi, r)| gi * self.kappa / r).collect();
        self.grad.apply_transpose(&scaled, self.len())
    }

    /// Row `j` of the gradient operator as (first column, coefficients in r).
    pub fn gradient_row(&self, j: usize) -> (usize, Vec<f64>) {
        let (s, c) = self.grad.row(j);
        let k = self.kappa / self.mids[j];
        (s, c.iter().map(|x| x * k).collect())
    }

    /// Row `j` of the node-to-midpoint interpolation.
    pub fn interp_row(&self, j: usize) -> (usize, &[f64]) {
        self.interp.row(j)
    }

    /// Values interpolated from nodes to cell midpoints.
    pub fn interp_to_mid(&self, f: &[f64]) -> Vec<f64> {
        self.interp.apply(f)
    }

    /// `d/dr` at the nodes of a quantity sampled on the midpoints.
    pub fn mid_derivative(&self, g: &[f64]) -> Vec<f64> {
        assert_eq!(g.len(), self.mids.len(), "midpoint values length");
        let mut d = self.div.apply(g);
        for (di, r) in d.iter_mut().zip(&self.nodes) {
            *di *= self.kappa / r;
        }
        d
    }

    /// Nodal derivative `f'` with 9-point stencils (one-sided near the ends).
    /// The first node is treated as the origin and gets derivative zero.
    pub fn differentiate(&self, f: &[f64]) -> Vec<f64> {
        let mut d = self.deriv.apply(f);
        for (di, r) in d.iter_mut().zip(&self.nodes) {
            *di *= self.kappa / r;
        }
        d[0] = 0.0;
        d
    }
}

/// One term `f(r) Y(x/|x|)` of a mode expansion.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModeEntry {
    pub degree: usize,
    /// Degree one: `Y = x_axis / |x|`. Higher degrees are zonal about the
    /// first axis and require `axis == 0`.
    pub axis: usize,
    pub profile: Vec<f64>,
}

/// A function on `R^n` as a finite sum of radial profiles times harmonics.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ModeFn {
    pub entries: Vec<ModeEntry>,
}

impl ModeFn {
    pub fn radial(profile: Vec<f64>) -> Self {
        ModeFn {
            entries: vec![ModeEntry {
                degree: 0,
                axis: 0,
                profile,
            }],
        }
    }

    pub fn single(degree: usize, axis: usize, profile: Vec<f64>) -> Self {
        ModeFn {
            entries: vec![ModeEntry { degree, axis, profile }],
        }
    }

    pub fn zero(len: usize) -> Self {
        ModeFn::radial(vec![0.0; len])
    }

    pub fn is_radial(&self) -> bool {
        self.entries.iter().all(|e| e.degree == 0)
    }

    /// Sum of all degree-zero profiles.
    pub fn radial_part(&self, len: usize) -> Vec<f64> {
        let mut out = vec![0.0; len];
        for e in self.entries.iter().filter(|e| e.degree == 0) {
            for (o, v) in out.iter_mut().zip(&e.profile) {
                *o += v;
            }
        }
        out
    }

    pub fn scaled(&self, s: f64) -> Self {
        ModeFn {
            entries: self
                .entries
                .iter()
                .map(|e| ModeEntry {
                    degree: e.degree,
                    axis: e.axis,
                    profile: e.profile.iter().map(|v| s * v).collect(),
                })
                .collect(),
        }
    }

    /// Entries merged by `(degree, axis)`, in sorted order.
    pub fn groups(&self, len: usize) -> Vec<ModeEntry> {
        let mut out: Vec<ModeEntry> = Vec::new();
        for e in &self.entries {
            let axis = if e.degree == 0 { 0 } else { e.axis };
            match out.iter_mut().find(|g| g.degree == e.degree && g.axis == axis) {
                Some(g) => {
                    for (o, v) in g.profile.iter_mut().zip(&e.profile) {
                        *o += v;
                    }
                }
                None => {
                    let mut profile = vec![0.0; len];
                    for (o, v) in profile.iter_mut().zip(&e.profile) {
                        *o += v;
                    }
                    out.push(ModeEntry {
                        degree: e.degree,
                        axis,
                        profile,
                    });
                }
            }
        }
        out.sort_by_key(|g| (g.degree, g.axis));
        out
    }

    pub fn validate(&self, grid: &RadialGrid) -> Result<()> {
        for e in &self.entries {
            if e.profile.len() != grid.len() {
                return Err(Error::InvalidParams(format!(
                    "mode profile has {} values for a grid of {}",
                    e.profile.len(),
                    grid.len()
                )));
            }
            if e.degree == 1 && e.axis >= grid.dim() {
                return Err(Error::InvalidParams(format!(
                    "axis {} out of range in dimension {}",
                    e.axis,
                    grid.dim()
                )));
            }
            if e.degree >= 2 && e.axis != 0 {
                return Err(Error::Unsupported(
                    "harmonics of degree >= 2 are zonal about the first axis".into(),
                ));
            }
        }
        Ok(())
    }
}

/// `ell (ell + n - 2)`, the eigenvalue of `-Delta_S` on degree-`ell` harmonics.
pub fn angular_eigenvalue(n: usize, ell: usize) -> f64 {
    (ell * (ell + n - 2)) as f64
}

/// Dimension of the space of degree-`ell` spherical harmonics on `S^{n-1}`.
pub fn harmonic_dimension(n: usize, ell: usize) -> f64 {
    let binom = |a: usize, b: usize| -> f64 {
        if b > a {
            return 0.0;
        }
        (0..b).fold(1.0, |acc, i| acc * (a - i) as f64 / (i + 1) as f64)
    };
    let lower = if ell >= 2 { binom(ell + n - 3, n - 1) } else { 0.0 };
    binom(ell + n - 1, n - 1) - lower
}

/// Mean of `Y^2` over the sphere for the harmonics used by [`ModeFn`].
pub fn harmonic_mean_square(n: usize, ell: usize) -> f64 {
    1.0 / harmonic_dimension(n, ell)
}

/// Zonal harmonic of degree `ell` as a polynomial in `t = cos(theta)`,
/// normalized to 1 at `t = 1`; returns `(P(t), P'(t))`.
pub fn zonal_harmonic(n: usize, ell: usize, t: f64) -> (f64, f64) {
    if ell == 0 {
        return (1.0, 0.0);
    }
    if n == 2 {
        // Chebyshev T_ell via the cosine form; derivative ell U_{ell-1}.
        let (mut t0, mut t1) = (1.0, t);
        let (mut u0, mut u1) = (1.0, 2.0 * t);
        for _ in 1..ell {
            let t2 = 2.0 * t * t1 - t0;
            t0 = t1;
            t1 = t2;
            let u2 = 2.0 * t * u1 - u0;
            u0 = u1;
            u1 = u2;
        }
        return (t1, ell as f64 * u0);
    }
    let nu = (n as f64 - 2.0) / 2.0;
    let gegen = |nu: f64, k: usize, t: f64| -> f64 {
        let (mut c0, mut c1) = (1.0, 2.0 * nu * t);
        if k == 0 {
            return c0;
        }
        for j in 2..=k {
            let jf = j as f64;
            let c2 = (2.0 * t * (jf + nu - 1.0) * c1 - (jf + 2.0 * nu - 2.0) * c0) / jf;
            c0 = c1;
            c1 = c2;
        }
        c1
    };
    let norm = gegen(nu, ell, 1.0);
    let value = gegen(nu, ell, t) / norm;
    let deriv = 2.0 * nu * gegen(nu + 1.0, ell - 1, t) / norm;
    (value, deriv)
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; m];
    let mut w = vec![0.0; m];
    let mf = m as f64;
    for i in 0..m.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (mf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=m {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = mf * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[m - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[m - 1 - i] = w[i];
    }
    (x, w)
}

/// Polar-angle points used for `p != 2` norms of non-radial functions.
const ANGULAR_POINTS: usize = 96;

/// `(int |D phi|^p)^{1/p}`.
///
/// Exact up to quadrature for purely radial `phi` (any `p`) and for any mode
/// content when `p = 2`. For `p != 2` at most one non-radial `(degree, axis)`
/// group is supported; it is integrated over the polar angle.
pub fn grad_norm_lp(grid: &RadialGrid, phi: &ModeFn, p: f64) -> Result<f64> {
    phi.validate(grid)?;
    let n = grid.dim();
    let groups = phi.groups(grid.len());
    let nonradial: Vec<&ModeEntry> = groups.iter().filter(|g| g.degree > 0).collect();
    let radial = phi.radial_part(grid.len());
    let d0 = grid.gradient_to_mid(&radial);

    if nonradial.is_empty() {
        let s: f64 = grid.integrate_mid(&d0.iter().map(|d| d.abs().powf(p)).collect::<Vec<_>>());
        return Ok(s.max(0.0).powf(1.0 / p));
    }
    if p == 2.0 {
        let mut total = grid.integrate_mid(&d0.iter().map(|d| d * d).collect::<Vec<_>>());
        for g in &nonradial {
            total += harmonic_mean_square(n, g.degree) * mode_dirichlet(grid, g.degree, &g.profile);
        }
        return Ok(total.max(0.0).sqrt());
    }
    if nonradial.len() > 1 {
        return Err(Error::Unsupported(
            "p != 2 norms allow at most one non-radial mode".into(),
        ));
    }
    let g = nonradial[0];
    let df = grid.gradient_to_mid(&g.profile);
    let fm = grid.interp_to_mid(&g.profile);
    let (tn, tw) = gauss_legendre(ANGULAR_POINTS);
    let area = sphere_area(n - 2);
    let half_pi = 0.5 * std::f64::consts::PI;
    // angular samples: (measure weight, Y, dY/dtheta), normalised to mean 1
    let samples: Vec<(f64, f64, f64)> = tn
        .iter()
        .zip(&tw)
        .map(|(&s, &w)| {
            let theta = half_pi * (s + 1.0);
            let (st, ct) = theta.sin_cos();
            let (y, dy) = zonal_harmonic(n, g.degree, ct);
            (w * half_pi * area * st.powi(n as i32 - 2), y, -st * dy)
        })
        .collect();
    let total_area = sphere_area(n - 1);
    let integrand: Vec<f64> = (0..d0.len())
        .map(|j| {
            let r = grid.mids()[j];
            samples
                .iter()
                .map(|&(w, y, dy)| {
                    let radial = d0[j] + df[j] * y;
                    let tangential = fm[j] * dy / r;
                    w * (radial * radial + tangential * tangential).powf(0.5 * p)
                })
                .sum::<f64>()
                / total_area
        })
        .collect();
    Ok(grid.integrate_mid(&integrand).max(0.0).powf(1.0 / p))
}

/// `int (f'^2 + ell(ell+n-2) f^2 / r^2)` over `R^n` for a degree-`ell` profile
/// (without the mean square of the harmonic).
pub fn mode_dirichlet(grid: &RadialGrid, ell: usize, f: &[f64]) -> f64 {
    let d = grid.gradient_to_mid(f);
    let grad = grid.integrate_mid(&d.iter().map(|x| x * x).collect::<Vec<_>>());
    if ell == 0 {
        return grad;
    }
    let k = angular_eigenvalue(grid.dim(), ell);
    let ang: Vec<f64> = f.iter().zip(grid.nodes()).map(|(v, r)| k * v * v / (r * r)).collect();
    grad + grid.integrate(&ang)
}
