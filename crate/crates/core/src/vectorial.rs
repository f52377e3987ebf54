//! Weighted vectorial inequalities for `|x|^{p-2} x` and the scalar
//! inequalities for `|a|^{p*-2} a`, with empirical constants and fuzzers.
//!
//! All margins are homogeneous (degree `p`, resp. `p*`), so the fuzzers
//! report margins of pairs normalized to unit size.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};

/// Lower constants are multiplied by this before use.
pub const LOWER_SAFETY: f64 = 0.9;
/// Upper constants are multiplied by this before use.
pub const UPPER_SAFETY: f64 = 1.1;

const FUZZ_CHUNK: usize = 1 << 14;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct VecIneqConstants {
    pub p: f64,
    pub kappa: f64,
    /// Present for `p < 2`.
    pub c1: Option<f64>,
    /// Present for `p >= 2`.
    pub c2: Option<f64>,
    /// Present for `p >= 2`; lies in `(0, 1/2]`.
    pub c3: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ScalarIneqConstants {
    pub pstar: f64,
    pub kappa: f64,
    #[serde(rename = "C1")]
    pub c1: f64,
    #[serde(rename = "C2")]
    pub c2: f64,
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

/// `sign(a) |a|^e`.
pub fn signed_pow(a: f64, e: f64) -> f64 {
    a.signum() * a.abs().powf(e)
}

/// Weight `omega_j` as a function of `|x|` and `|x + y|`.
///
/// `c3` is only read for `j = 3`.
pub fn omega_norms(j: u8, p: f64, c3: f64, nx: f64, nxy: f64) -> Result<f64> {
    match j {
        1 | 2 if !(p > 1.0 && p < 2.0) => return Err(Error::Domain(format!("omega_{j} needs 1 < p < 2, got {p}"))),
        3 | 4 if p < 2.0 => return Err(Error::Domain(format!("omega_{j} needs p >= 2, got {p}"))),
        1..=4 => {}
        _ => return Err(Error::Domain(format!("no weight omega_{j}"))),
    }
    if nx == 0.0 && nxy == 0.0 {
        // both vectors vanish; the weight only ever multiplies |y|^2 = 0
        return Ok(0.0);
    }
    let near = nx <= nxy;
    Ok(match j {
        1 => {
            if near {
                nxy.powf(p - 2.0)
            } else {
                nx.powf(p - 2.0)
            }
        }
        2 => {
            if near {
                nxy.powf(p - 1.0) / ((2.0 - p) * nxy + (p - 1.0) * nx)
            } else {
                nx.powf(p - 2.0)
            }
        }
        3 => {
            if near {
                nx.powf(p - 2.0)
            } else if nxy >= c3.powf(1.0 / (p - 1.0)) * nx {
                nxy.powf(p - 1.0) / nx
            } else {
                c3 * nx.powf(p - 2.0)
            }
        }
        _ => {
            if near {
                nx.powf(p - 2.0)
            } else {
                nxy.powf(p - 1.0) / nx
            }
        }
    })
}

/// Weight `omega_j(x, x + y)`; weights 3 and 4 use the stored `c3`.
pub fn omega(j: u8, consts: &VecIneqConstants, x: &[f64], y: &[f64]) -> Result<f64> {
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a + b).collect();
    let c3 = match (j, consts.c3) {
        (3, Some(c)) => c,
        (3, None) => return Err(Error::Domain("omega_3 needs c3 (p >= 2 constants)".into())),
        _ => 0.0,
    };
    omega_norms(j, consts.p, c3, norm(x), norm(&xy))
}

/// Left side minus right side of the vectorial inequality, from the
/// invariants `|x|`, `|y|`, `x.y`.
fn gradient_margin_invariants(c: &VecIneqConstants, nx: f64, ny: f64, xdy: f64) -> f64 {
    let p = c.p;
    let nxy = (nx * nx + 2.0 * xdy + ny * ny).max(0.0).sqrt();
    // |x+y|^{p-2}(x+y).y - |x|^{p-2} x.y
    let lead = if nxy > 0.0 {
        nxy.powf(p - 2.0) * (xdy + ny * ny)
    } else {
        0.0
    };
    let base = if nx > 0.0 { nx.powf(p - 2.0) * xdy } else { 0.0 };
    let lhs = lead - base;
    let gap2 = (nx - nxy) * (nx - nxy);
    let k1 = 1.0 - c.kappa;
    let rhs = if p < 2.0 {
        let w1 = omega_norms(1, p, 0.0, nx, nxy).unwrap_or(0.0);
        let w2 = omega_norms(2, p, 0.0, nx, nxy).unwrap_or(0.0);
        let small = if nx > 0.0 {
            ny.powf(p).min(nx.powf(p - 2.0) * ny * ny)
        } else {
            ny.powf(p)
        };
        k1 * w1 * ny * ny + (p - 2.0) * k1 * w2 * gap2 + c.c1.unwrap_or(0.0) * small
    } else {
        let c3 = c.c3.unwrap_or(0.5);
        let w3 = omega_norms(3, p, c3, nx, nxy).unwrap_or(0.0);
        let w4 = omega_norms(4, p, c3, nx, nxy).unwrap_or(0.0);
        k1 * w3 * ny * ny + (p - 2.0) * k1 * w4 * gap2 + c.c2.unwrap_or(0.0) * ny.powf(p)
    };
    lhs - rhs
}

/// LHS minus RHS of the vectorial inequality (nonnegative for valid constants).
pub fn gradient_ineq_margin(consts: &VecIneqConstants, x: &[f64], y: &[f64]) -> f64 {
    gradient_margin_invariants(consts, norm(x), norm(y), dot(x, y))
}

/// Auxiliary function whose nonnegativity on `(0, a^{1/(p-1)}]` fixes `c3`.
pub fn c3_condition(p: f64, t: f64, a: f64) -> f64 {
    (2.0 - p) * t.powf(p + 1.0) + (2.0 * p - 3.0) * t.powf(p) + (1.0 - p) * t.powf(p - 1.0) - (t - 1.0) * (t - 1.0) * a
        + (1.0 - t)
}

/// `(p - 1) t^p - p t^{p-1} + 1`, nonnegative for `t >= 0`.
pub fn g_aux(p: f64, t: f64) -> f64 {
    (p - 1.0) * t.powf(p) - p * t.powf(p - 1.0) + 1.0
}

/// Largest `a` in `(0, 1/2]` (to bisection accuracy) with the `c3` condition
/// holding on `density` sample points, times [`LOWER_SAFETY`].
pub fn estimate_c3(p: f64, density: usize) -> Result<f64> {
    if p < 2.0 {
        return Err(Error::Domain(format!("c3 is defined for p >= 2, got {p}")));
    }
    let feasible = |a: f64| -> bool {
        let top = a.powf(1.0 / (p - 1.0));
        (1..=density).all(|i| {
            let t = top * i as f64 / density as f64;
            c3_condition(p, t, a) >= 0.0
        })
    };
    if feasible(0.5) {
        return Ok(LOWER_SAFETY * 0.5);
    }
    let (mut lo, mut hi) = (0.0, 0.5);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if lo <= 0.0 {
        return Err(Error::Estimation(format!("no admissible c3 for p = {p}")));
    }
    Ok(LOWER_SAFETY * lo)
}

/// Empirical constants for the vectorial inequality from the reduced
/// sample `|x| = 1`, `|y| = t` in `[1e-6, t_max]`, `cos(theta)` in `[-1, 1]`.
pub fn estimate_vec_constants(p: f64, kappa: f64, t_max: f64, grid_density: usize) -> Result<VecIneqConstants> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::InvalidParams(format!("p = {p} must exceed 1")));
    }
    if !(kappa > 0.0 && kappa < 1.0) {
        return Err(Error::InvalidParams(format!("kappa = {kappa} must lie in (0, 1)")));
    }
    if grid_density < 8 || !(t_max > 1.0) {
        return Err(Error::InvalidParams("scan needs density >= 8 and t_max > 1".into()));
    }
    let c3 = if p >= 2.0 {
        Some(estimate_c3(p, 4 * grid_density)?)
    } else {
        None
    };
    let base = VecIneqConstants {
        p,
        kappa,
        c1: (p < 2.0).then_some(0.0),
        c2: (p >= 2.0).then_some(0.0),
        c3,
    };
    let t_min: f64 = 1e-6;
    let (la, lb) = (t_min.ln(), t_max.ln());
    // the x = 0 configuration gives the ratio 1
    let mut ratio = 1.0f64;
    for i in 0..=grid_density {
        let t = (la + (lb - la) * i as f64 / grid_density as f64).exp();
        for k in 0..=grid_density {
            let cos = -1.0 + 2.0 * k as f64 / grid_density as f64;
            let m = gradient_margin_invariants(&base, 1.0, t, t * cos);
            let unit = if p < 2.0 { t.powf(p).min(t * t) } else { t.powf(p) };
            ratio = ratio.min(m / unit);
        }
    }
    if !(ratio > 0.0) {
        return Err(Error::Estimation(format!(
            "no positive constant for p = {p}, kappa = {kappa} (ratio {ratio:.3e})"
        )));
    }
    let c = LOWER_SAFETY * ratio;
    Ok(VecIneqConstants {
        c1: (p < 2.0).then_some(c),
        c2: (p >= 2.0).then_some(c),
        ..base
    })
}

/// Outcome of a fuzzing run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FuzzReport<C> {
    pub samples: usize,
    /// Smallest normalized margin.
    pub min_margin: f64,
    /// The sample attaining `min_margin`.
    pub argmin: Vec<f64>,
    /// For `p >= 2`: smallest normalized `omega_3 - c3 |x|^{p-2}`.
    pub min_omega3_excess: Option<f64>,
    /// Smallest normalized margin among samples with `|y| >= 1e-3 |x|`.
    pub min_margin_away_from_zero: f64,
    pub constants: C,
}

struct Partial {
    min: f64,
    arg: Vec<f64>,
    omega: f64,
    away: f64,
}

fn reduce(parts: Vec<Partial>) -> Partial {
    let mut best = Partial {
        min: f64::INFINITY,
        arg: Vec::new(),
        omega: f64::INFINITY,
        away: f64::INFINITY,
    };
    for p in parts {
        if p.min < best.min {
            best.min = p.min;
            best.arg = p.arg;
        }
        best.omega = best.omega.min(p.omega);
        best.away = best.away.min(p.away);
    }
    best
}

fn chunk_rng(seed: u64, chunk: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk as u64);
    rng
}

fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let dir: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let len = norm(&dir);
    let mag = 10f64.powf(rng.random_range(-3.0..3.0));
    dir.iter().map(|d| d * mag / len).collect()
}

/// Random pairs `(x, y)` in `R^n`, with occasional exact degeneracies
/// (`x = 0`, `y = 0`, `y = -x`).
fn sample_pair(rng: &mut ChaCha8Rng, n: usize) -> (Vec<f64>, Vec<f64>) {
    let x = random_vector(rng, n);
    let y = random_vector(rng, n);
    match rng.random_range(0..64u32) {
        0 => (vec![0.0; n], y),
        1 => (x, vec![0.0; n]),
        2 => {
            let y = x.iter().map(|v| -v).collect();
            (x, y)
        }
        3 => {
            // nearly parallel, nearly cancelling
            let s = rng.random_range(-1.5..0.5);
            let y = x.iter().zip(&y).map(|(a, b)| s * a + 1e-4 * b).collect();
            (x, y)
        }
        _ => (x, y),
    }
}

/// Checks the vectorial inequality on `samples` random pairs in `R^n`.
pub fn fuzz_vectorial(consts: &VecIneqConstants, n: usize, samples: usize, seed: u64) -> FuzzReport<VecIneqConstants> {
    let p = consts.p;
    let chunks = samples.div_ceil(FUZZ_CHUNK);
    let parts: Vec<Partial> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = chunk_rng(seed, c);
            let count = FUZZ_CHUNK.min(samples - c * FUZZ_CHUNK);
            let mut part = Partial {
                min: f64::INFINITY,
                arg: Vec::new(),
                omega: f64::INFINITY,
                away: f64::INFINITY,
            };
            for _ in 0..count {
                let (x, y) = sample_pair(&mut rng, n);
                let (nx, ny) = (norm(&x), norm(&y));
                let scale = (nx * nx + ny * ny).powf(0.5 * p);
                if scale == 0.0 {
                    continue;
                }
                let m = gradient_ineq_margin(consts, &x, &y) / scale;
                if m < part.min {
                    part.min = m;
                    part.arg = x.iter().chain(&y).copied().collect();
                }
                if ny >= 1e-3 * nx {
                    part.away = part.away.min(m);
                }
                if let Some(c3) = consts.c3 {
                    let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
                    if nx > 0.0 {
                        let w3 = omega_norms(3, p, c3, nx, norm(&xy)).unwrap_or(f64::NAN);
                        let ex = (w3 - c3 * nx.powf(p - 2.0)) / nx.powf(p - 2.0).max(f64::MIN_POSITIVE);
                        part.omega = part.omega.min(ex);
                    }
                }
            }
            part
        })
        .collect();
    let best = reduce(parts);
    FuzzReport {
        samples,
        min_margin: best.min,
        argmin: best.arg,
        min_omega3_excess: consts.c3.map(|_| best.omega),
        min_margin_away_from_zero: best.away,
        constants: *consts,
    }
}

/// Whether `pstar` falls in the singular scalar regime `p* <= 2`.
pub fn scalar_singular(pstar: f64) -> bool {
    pstar <= 2.0 + 1e-12
}

/// RHS minus LHS of the scalar inequality (nonnegative for valid constants).
pub fn scalar_ineq_margin(consts: &ScalarIneqConstants, a: f64, b: f64) -> f64 {
    let ps = consts.pstar;
    let g = ps - 1.0 + consts.kappa;
    let lhs = signed_pow(a + b, ps - 1.0) * b;
    let base = signed_pow(a, ps - 1.0) * b;
    if b == 0.0 {
        return 0.0;
    }
    let rhs = if scalar_singular(ps) {
        base + g * (a.abs() + consts.c1 * b.abs()).powf(ps) / (a * a + b * b) * b * b
    } else {
        base + g * a.abs().powf(ps - 2.0) * b * b + consts.c2 * b.abs().powf(ps)
    };
    rhs - lhs
}

/// Smallest `C1` making the singular-regime inequality hold at `a = 1, b = t`.
pub fn c1_requirement(pstar: f64, kappa: f64, t: f64) -> f64 {
    if t == 0.0 {
        return 0.0;
    }
    let g = pstar - 1.0 + kappa;
    let q = (1.0 + t * t) * (signed_pow(1.0 + t, pstar - 1.0) * t - t) / (g * t * t);
    if q <= 1.0 {
        0.0
    } else {
        (q.powf(1.0 / pstar) - 1.0) / t.abs()
    }
}

/// Smallest `C2` making the regular-regime inequality hold at `a = 1, b = t`.
pub fn c2_requirement(pstar: f64, kappa: f64, t: f64) -> f64 {
    if t == 0.0 {
        return f64::NEG_INFINITY;
    }
    let g = pstar - 1.0 + kappa;
    (signed_pow(1.0 + t, pstar - 1.0) * t - t - g * t * t) / t.abs().powf(pstar)
}

fn scan_sup(f: impl Fn(f64) -> f64, t_max: f64) -> f64 {
    let per_decade = 400;
    let lo: f64 = -8.0;
    let hi = t_max.log10();
    let steps = ((hi - lo) * per_decade as f64) as usize;
    let mut sup = f64::NEG_INFINITY;
    for i in 0..=steps {
        let t = 10f64.powf(lo + (hi - lo) * i as f64 / steps as f64);
        sup = sup.max(f(t)).max(f(-t));
    }
    // resolve the neighbourhood of t = -1, where a + b changes sign
    for i in 0..=4000 {
        let t = -1.0 + (i as f64 - 2000.0) * 1e-4;
        sup = sup.max(f(t));
    }
    sup
}

/// Empirical `C1`, `C2` for the scalar inequality from 1D scans in `t = b/a`.
pub fn estimate_scalar_constants(pstar: f64, kappa: f64) -> Result<ScalarIneqConstants> {
    if !(pstar > 1.0 && pstar.is_finite()) {
        return Err(Error::InvalidParams(format!("p* = {pstar} must exceed 1")));
    }
    if !(kappa > 0.0) {
        return Err(Error::InvalidParams(format!("kappa = {kappa} must be positive")));
    }
    let sup1 = scan_sup(|t| c1_requirement(pstar, kappa, t), 1e6);
    let sup1_far = scan_sup(|t| c1_requirement(pstar, kappa, t), 1e8);
    let sup2 = scan_sup(|t| c2_requirement(pstar, kappa, t), 1e6);
    let sup2_far = scan_sup(|t| c2_requirement(pstar, kappa, t), 1e8);
    for (near, far, name) in [(sup1, sup1_far, "C1"), (sup2, sup2_far, "C2")] {
        if !far.is_finite() || far > near + 1e-2 * near.abs() + 1e-12 {
            return Err(Error::Estimation(format!(
                "{name} scan grows with the range ({near:.6e} -> {far:.6e})"
            )));
        }
    }
    Ok(ScalarIneqConstants {
        pstar,
        kappa,
        c1: (UPPER_SAFETY * sup1_far).max(1.0 / pstar),
        // a = 0 reduces the regular inequality to |b|^{p*} <= C2 |b|^{p*}
        c2: (UPPER_SAFETY * sup2_far).max(1.0),
    })
}

/// Checks the scalar inequality on `samples` random pairs `(a, b)`.
pub fn fuzz_scalar(consts: &ScalarIneqConstants, samples: usize, seed: u64) -> FuzzReport<ScalarIneqConstants> {
    let ps = consts.pstar;
    let chunks = samples.div_ceil(FUZZ_CHUNK);
    let parts: Vec<Partial> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = chunk_rng(seed, c);
            let count = FUZZ_CHUNK.min(samples - c * FUZZ_CHUNK);
            let mut part = Partial {
                min: f64::INFINITY,
                arg: Vec::new(),
                omega: f64::INFINITY,
                away: f64::INFINITY,
            };
            for _ in 0..count {
                let sa = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let sb = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let mut a = sa * 10f64.powf(rng.random_range(-3.0..3.0));
                let mut b = sb * a.abs() * 10f64.powf(rng.random_range(-6.0..6.0));
                match rng.random_range(0..64u32) {
                    0 => a = 0.0,
                    1 => b = 0.0,
                    2 => b = -a,
                    3 => b = -a * (1.0 + rng.random_range(-1e-3..1e-3)),
                    _ => {}
                }
                let scale = (a * a + b * b).powf(0.5 * ps);
                if scale == 0.0 {
                    continue;
                }
                let m = scalar_ineq_margin(consts, a, b) / scale;
                if m < part.min {
                    part.min = m;
                    part.arg = vec![a, b];
                }
                if b.abs() >= 1e-3 * a.abs() {
                    part.away = part.away.min(m);
                }
            }
            part
        })
        .collect();
    let best = reduce(parts);
    FuzzReport {
        samples,
        min_margin: best.min,
        argmin: best.arg,
        min_omega3_excess: None,
        min_margin_away_from_zero: best.away,
        constants: *consts,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn consts(p: f64, kappa: f64) -> VecIneqConstants {
        estimate_vec_constants(p, kappa, 1e3, 200).unwrap()
    }

    #[test]
    fn omega_two_branch_value() {
        // |x| = 1, |x + y| = 2
        let w = omega_norms(2, 1.5, 0.0, 1.0, 2.0).unwrap();
        assert!((w - 2f64.sqrt() / 1.5).abs() < 1e-15);
    }

    #[test]
    fn omega_domain_errors() {
        assert!(omega_norms(1, 2.0, 0.0, 1.0, 1.0).is_err());
        assert!(omega_norms(3, 1.5, 0.25, 1.0, 1.0).is_err());
        assert!(omega_norms(5, 1.5, 0.25, 1.0, 1.0).is_err());
    }

    #[test]
    fn quadratic_case_weights() {
        // at p = 2 only the |x| <= |x+y| branch of omega_3, omega_4 equals one
        for nxy in [1.0, 1.5, 4.0] {
            assert_eq!(omega_norms(3, 2.0, 0.5, 1.0, nxy).unwrap(), 1.0);
            assert_eq!(omega_norms(4, 2.0, 0.5, 1.0, nxy).unwrap(), 1.0);
        }
        assert!((omega_norms(3, 2.0, 0.5, 1.0, 0.7).unwrap() - 0.7).abs() < 1e-15);
    }

    #[test]
    fn omega_continuous_at_seams() {
        for p in [2.0, 2.5, 3.0] {
            let c3 = estimate_c3(p, 400).unwrap();
            let seam = c3.powf(1.0 / (p - 1.0));
            for j in [3u8, 4] {
                let a = omega_norms(j, p, c3, 1.0, 1.0).unwrap();
                let b = omega_norms(j, p, c3, 1.0, 1.0 - 1e-13).unwrap();
                assert!((a - b).abs() < 1e-10, "j={j} p={p}");
            }
            let a = omega_norms(3, p, c3, 1.0, seam * (1.0 + 1e-14)).unwrap();
            let b = omega_norms(3, p, c3, 1.0, seam * (1.0 - 1e-14)).unwrap();
            assert!((a - b).abs() < 1e-10);
        }
        for p in [1.2, 1.5, 1.8] {
            for j in [1u8, 2] {
                let a = omega_norms(j, p, 0.0, 1.0, 1.0).unwrap();
                let b = omega_norms(j, p, 0.0, 1.0, 1.0 - 1e-13).unwrap();
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn margin_vanishes_at_zero_increment() {
        let c = consts(1.5, 0.5);
        assert_eq!(gradient_ineq_margin(&c, &[0.3, -1.0, 2.0], &[0.0; 3]), 0.0);
    }

    #[test]
    fn margin_at_origin() {
        let c = consts(1.5, 0.5);
        let y = [0.3, -1.0, 2.0];
        let m = gradient_ineq_margin(&c, &[0.0; 3], &y);
        let expect = (1.0 - c.c1.unwrap()) * norm(&y).powf(1.5);
        assert!((m - expect).abs() < 1e-12);
    }

    #[test]
    fn quadratic_margin_reduces_to_kappa() {
        let c = VecIneqConstants {
            p: 2.0,
            kappa: 0.1,
            c1: None,
            c2: Some(0.05),
            c3: Some(0.45),
        };
        // |x| <= |x + y|: all weights are one
        let (x, y) = ([1.0, 0.0, 0.0], [0.5, 0.2, 0.0]);
        let ny2 = dot(&y, &y);
        let expect = 0.1 * ny2 - 0.05 * ny2;
        assert!((gradient_ineq_margin(&c, &x, &y) - expect).abs() < 1e-14);
    }

    #[test]
    fn c3_limit_and_auxiliary() {
        assert!((c3_condition(3.0, 1e-6, 1.0 / 3.0) - 2.0 / 3.0).abs() < 1e-3);
        for p in [2.0, 2.5, 3.0] {
            let c3 = estimate_c3(p, 400).unwrap();
            assert!(c3 > 0.0 && c3 <= 0.5);
            let lo = c3.powf(1.0 / (p - 1.0));
            for i in 0..=1000 {
                let t = lo + (1.0 - lo) * i as f64 / 1000.0;
                assert!(g_aux(p, t) >= -1e-15, "p={p} t={t}");
            }
        }
    }

    #[test]
    fn scalar_edge_cases() {
        let c = estimate_scalar_constants(3.6, 0.5).unwrap();
        assert_eq!(scalar_ineq_margin(&c, 1.3, 0.0), 0.0);
        let m = scalar_ineq_margin(&c, 0.0, 2.0);
        assert!((m - (c.c2 - 1.0) * 2f64.powf(3.6)).abs() < 1e-12);
        assert!(c.c1 >= 1.0 / 3.6);
    }

    #[test]
    fn singular_scalar_bounded_at_infinity() {
        for ps in [1.5, 1.8, 2.0] {
            let v = c1_requirement(ps, 0.5, 1e6);
            assert!(v.is_finite() && v < 10.0);
        }
    }

    #[test]
    fn fuzz_is_deterministic() {
        let c = consts(2.5, 0.1);
        let a = fuzz_vectorial(&c, 3, 40_000, 9);
        let b = fuzz_vectorial(&c, 3, 40_000, 9);
        assert_eq!(a, b);
        assert!(a.min_margin >= -1e-12);
    }
}
