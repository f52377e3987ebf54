//! Banded factorizations and a shift-invert Lanczos eigensolver.

// index loops read closer to the band arithmetic than iterator chains
#![allow(clippy::needless_range_loop)]

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Symmetric banded matrix stored by lower diagonals: `band[d][i] = A[i+d][i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SymBanded {
    n: usize,
    bw: usize,
    band: Vec<Vec<f64>>,
}

impl SymBanded {
    pub fn zeros(n: usize, bw: usize) -> Self {
        SymBanded {
            n,
            bw,
            band: (0..=bw).map(|d| vec![0.0; n.saturating_sub(d)]).collect(),
        }
    }

    pub fn diagonal(d: &[f64]) -> Self {
        let mut m = SymBanded::zeros(d.len(), 0);
        m.band[0].copy_from_slice(d);
        m
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        let d = hi - lo;
        if d > self.bw {
            0.0
        } else {
            self.band[d][lo]
        }
    }

    /// Adds `v` to `A[i][j]` (and by symmetry `A[j][i]`); `i >= j` expected.
    pub fn add_lower(&mut self, i: usize, j: usize, v: f64) {
        let d = i - j;
        assert!(d <= self.bw, "entry outside the band");
        self.band[d][j] += v;
    }

    pub fn scale(&mut self, s: f64) {
        for row in &mut self.band {
            for v in row {
                *v *= s;
            }
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y: Vec<f64> = self.band[0].iter().zip(x).map(|(a, b)| a * b).collect();
        for d in 1..=self.bw {
            for (j, a) in self.band[d].iter().enumerate() {
                y[j + d] += a * x[j];
                y[j] += a * x[j + d];
            }
        }
        y
    }

    pub fn quad_form(&self, x: &[f64]) -> f64 {
        self.mul_vec(x).iter().zip(x).map(|(a, b)| a * b).sum()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }
}

/// Banded Cholesky factor `A = L L^T`.
#[derive(Clone, Debug)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    // l[i][k] = L[i][i - bw + k]
    l: Vec<Vec<f64>>,
}

impl BandedCholesky {
    pub fn factor(a: &SymBanded) -> Result<Self> {
        let (n, bw) = (a.n, a.bw);
        let mut l = vec![vec![0.0; bw + 1]; n];
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            for j in j0..=i {
                let mut s = a.get(i, j);
                let k0 = j0.max(j.saturating_sub(bw));
                for k in k0..j {
                    s -= l[i][k + bw - i] * l[j][k + bw - j];
                }
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::Singular(i));
                    }
                    l[i][bw] = s.sqrt();
                } else {
                    l[i][j + bw - i] = s / l[j][bw];
                }
            }
        }
        Ok(BandedCholesky { n, bw, l })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (n, bw) = (self.n, self.bw);
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.l[i][k + bw - i] * y[k];
            }
            y[i] = s / self.l[i][bw];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..(i + bw + 1).min(n) {
                s -= self.l[k][i + bw - k] * y[k];
            }
            y[i] = s / self.l[i][bw];
        }
        y
    }
}

/// General banded matrix with `kl` sub- and `ku` super-diagonals,
/// LU-factorized with partial pivoting.
#[derive(Clone, Debug)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    // row i holds columns i - kl .. i + kl + ku, wide enough for pivoting fill-in
    width: usize,
    a: Vec<Vec<f64>>,
    piv: Vec<usize>,
}

impl BandedLu {
    /// Factors the matrix given by `entry(i, j)`, which must vanish for
    /// `j + kl < i` or `j > i + ku`.
    pub fn factor(n: usize, kl: usize, ku: usize, entry: impl Fn(usize, usize) -> f64) -> Result<Self> {
        // row i stores columns col0(i) .. col0(i) + width, col0(i) = i - kl
        let width = 2 * kl + ku + 1;
        let col0 = |i: usize| i as isize - kl as isize;
        let mut a = vec![vec![0.0; width]; n];
        for (i, row) in a.iter_mut().enumerate() {
            for j in i.saturating_sub(kl)..(i + ku + 1).min(n) {
                row[(j as isize - col0(i)) as usize] = entry(i, j);
            }
        }
        let mut piv = vec![0; n];
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = 0.0f64;
            for (i, row) in a.iter().enumerate().take(last + 1).skip(k) {
                let v = row[(k as isize - col0(i)) as usize].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return Err(Error::Singular(k));
            }
            piv[k] = p;
            let jmax = (k + kl + ku).min(n - 1);
            if p != k {
                for j in k..=jmax {
                    let ck = (j as isize - col0(k)) as usize;
                    let cp = (j as isize - col0(p)) as usize;
                    let t = a[k][ck];
                    a[k][ck] = a[p][cp];
                    a[p][cp] = t;
                }
            }
            let pivot = a[k][(k as isize - col0(k)) as usize];
            for i in k + 1..=last {
                let ci = (k as isize - col0(i)) as usize;
                let m = a[i][ci] / pivot;
                a[i][ci] = m;
                if m != 0.0 {
                    for j in k + 1..=jmax {
                        let u = a[k][(j as isize - col0(k)) as usize];
                        a[i][(j as isize - col0(i)) as usize] -= m * u;
                    }
                }
            }
        }
        Ok(BandedLu { n, kl, width, a, piv })
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        let c = j as isize - i as isize + self.kl as isize;
        if c < 0 || c as usize >= self.width {
            0.0
        } else {
            self.a[i][c as usize]
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = b.to_vec();
        for k in 0..n {
            x.swap(k, self.piv[k]);
            let xk = x[k];
            for i in k + 1..(k + self.kl + 1).min(n) {
                x[i] -= self.at(i, k) * xk;
            }
        }
        let reach = self.width - self.kl;
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..(i + reach).min(n) {
                s -= self.at(i, j) * x[j];
            }
            x[i] = s / self.at(i, i);
        }
        x
    }
}

/// Eigenpairs of `K x = mu M x` for the smallest `mu`.
#[derive(Clone, Debug)]
pub struct GenEig {
    pub values: Vec<f64>,
    /// `M`-orthonormal eigenvectors.
    pub vectors: Vec<Vec<f64>>,
    pub iterations: usize,
    /// Largest relative Ritz residual `|mu K^{-1} M x - x|_M`.
    pub residual: f64,
}

/// A symmetric positive-definite operator given through its inverse and its
/// bilinear form.
pub trait SpdOperator {
    fn dim(&self) -> usize;
    /// `K^{-1} y`.
    fn solve(&self, y: &[f64]) -> Vec<f64>;
    /// `x^T K y`, evaluated in a cancellation-free form where possible.
    fn bilinear(&self, x: &[f64], y: &[f64]) -> f64;
}

/// A [`SymBanded`] matrix with its Cholesky factor.
#[derive(Clone, Debug)]
pub struct BandedSpd {
    pub matrix: SymBanded,
    chol: BandedCholesky,
}

impl BandedSpd {
    pub fn new(matrix: SymBanded) -> Result<Self> {
        let chol = BandedCholesky::factor(&matrix)?;
        Ok(BandedSpd { matrix, chol })
    }
}

impl SpdOperator for BandedSpd {
    fn dim(&self) -> usize {
        self.matrix.size()
    }

    fn solve(&self, y: &[f64]) -> Vec<f64> {
        self.chol.solve(y)
    }

    fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        self.matrix.mul_vec(y).iter().zip(x).map(|(a, b)| a * b).sum()
    }
}

/// Smallest `k` eigenpairs of the symmetric-definite pencil `(K, M)`, with
/// `K` positive definite and `M` diagonal positive, via Lanczos on
/// `K^{-1} M` in the `M` inner product with full reorthogonalization.
pub fn smallest_generalized<K: SpdOperator + ?Sized>(k_op: &K, m_diag: &[f64], k: usize) -> Result<GenEig> {
    let n = k_op.dim();
    if k == 0 || k > n {
        return Err(Error::InvalidParams(format!("requested {k} eigenpairs of {n}")));
    }
    if m_diag.len() != n || m_diag.iter().any(|m| !(*m > 0.0) || !m.is_finite()) {
        return Err(Error::Singular(0));
    }
    let mdot = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).zip(m_diag).map(|((x, y), m)| x * y * m).sum() };
    let max_steps = n.min((8 * k + 60).max(2 * k + 20));
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut alpha = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    // deterministic, non-degenerate start vector
    let mut q: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 * ((i as f64) * 0.7548776662).sin()).collect();
    let nq = mdot(&q, &q).sqrt();
    q.iter_mut().for_each(|x| *x /= nq);

    let mut best: Option<GenEig> = None;
    for step in 0..max_steps {
        basis.push(q.clone());
        let mq: Vec<f64> = q.iter().zip(m_diag).map(|(a, b)| a * b).collect();
        let mut w = k_op.solve(&mq);
        let a = mdot(&w, &q);
        alpha.push(a);
        // full reorthogonalization, twice
        for _ in 0..2 {
            for b in &basis {
                let c = mdot(&w, b);
                w.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
        }
        let bnorm = mdot(&w, &w).sqrt();
        let m = basis.len();
        if m >= k && (m.is_multiple_of(4) || bnorm < 1e-300 || step + 1 == max_steps) {
            let eig = purify(k_op, m_diag, ritz(&alpha, &beta, &basis, k));
            let res = ritz_residual(k_op, m_diag, &eig);
            let done = res < 1e-11 || bnorm < 1e-300 || step + 1 == max_steps;
            let eig = GenEig {
                values: eig.0,
                vectors: eig.1,
                iterations: m,
                residual: res,
            };
            if done {
                best = Some(eig);
                break;
            }
        }
        if bnorm < 1e-300 {
            break;
        }
        beta.push(bnorm);
        q = w.iter().map(|x| x / bnorm).collect();
    }
    let eig = best.ok_or(Error::Convergence {
        what: "Lanczos eigensolver",
        iterations: max_steps,
        residual: f64::NAN,
    })?;
    if eig.residual > 1e-6 {
        return Err(Error::Convergence {
            what: "Lanczos eigensolver",
            iterations: eig.iterations,
            residual: eig.residual,
        });
    }
    Ok(eig)
}

fn ritz(alpha: &[f64], beta: &[f64], basis: &[Vec<f64>], k: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let m = alpha.len();
    let t = DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            alpha[i]
        } else if i == j + 1 {
            beta[j]
        } else if j == i + 1 {
            beta[i]
        } else {
            0.0
        }
    });
    let se = SymmetricEigen::new(t);
    // largest theta of K^{-1}M are the smallest mu = 1/theta
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| se.eigenvalues[b].total_cmp(&se.eigenvalues[a]));
    let n = basis[0].len();
    let mut values = Vec::with_capacity(k);
    let mut vectors = Vec::with_capacity(k);
    for &c in order.iter().take(k) {
        values.push(1.0 / se.eigenvalues[c]);
        let s: DVector<f64> = se.eigenvectors.column(c).into_owned();
        let mut x = vec![0.0; n];
        for (j, b) in basis.iter().enumerate() {
            x.iter_mut().zip(b).for_each(|(xi, bi)| *xi += s[j] * bi);
        }
        vectors.push(x);
    }
    (values, vectors)
}

/// Two inverse-iteration sweeps on the Ritz vectors followed by a
/// Rayleigh-Ritz step on their span. Lanczos Ritz vectors are accurate in the
/// `M` norm only; this removes the high-frequency error that `K` amplifies.
fn purify<K: SpdOperator + ?Sized>(
    k_op: &K,
    m_diag: &[f64],
    eig: (Vec<f64>, Vec<Vec<f64>>),
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut xs = eig.1;
    for x in xs.iter_mut() {
        for _ in 0..2 {
            let mx: Vec<f64> = x.iter().zip(m_diag).map(|(a, m)| a * m).collect();
            *x = k_op.solve(&mx);
            let nx = x.iter().zip(m_diag).map(|(a, m)| m * a * a).sum::<f64>().sqrt();
            x.iter_mut().for_each(|a| *a /= nx);
        }
    }
    let k = xs.len();
    let a: DMatrix<f64> = DMatrix::from_fn(k, k, |i, j| k_op.bilinear(&xs[i], &xs[j]));
    let b: DMatrix<f64> = DMatrix::from_fn(k, k, |i, j| {
        xs[i].iter().zip(&xs[j]).zip(m_diag).map(|((x, y), m)| m * x * y).sum()
    });
    let Some(lb) = b.clone().cholesky() else {
        return (eig.0, xs);
    };
    let l = lb.l();
    let Some(linv) = l.clone().try_inverse() else {
        return (eig.0, xs);
    };
    let c: DMatrix<f64> = &linv * a * linv.transpose();
    let c = 0.5 * (&c + c.transpose());
    let se = SymmetricEigen::new(c);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| se.eigenvalues[i].total_cmp(&se.eigenvalues[j]));
    let coeffs = linv.transpose() * &se.eigenvectors;
    let n = xs[0].len();
    let mut values = Vec::with_capacity(k);
    let mut vectors = Vec::with_capacity(k);
    for &c in &order {
        values.push(se.eigenvalues[c]);
        let mut x = vec![0.0; n];
        for (j, xj) in xs.iter().enumerate() {
            let s = coeffs[(j, c)];
            x.iter_mut().zip(xj).for_each(|(a, b)| *a += s * b);
        }
        vectors.push(x);
    }
    (values, vectors)
}

/// Largest `|mu K^{-1} M x - x|_M / |x|_M` over the Ritz pairs.
fn ritz_residual<K: SpdOperator + ?Sized>(k_op: &K, m_diag: &[f64], eig: &(Vec<f64>, Vec<Vec<f64>>)) -> f64 {
    eig.0
        .iter()
        .zip(&eig.1)
        .map(|(mu, x)| {
            let mx: Vec<f64> = x.iter().zip(m_diag).map(|(a, m)| a * m).collect();
            let w = k_op.solve(&mx);
            let (mut num, mut den) = (0.0, 0.0);
            for i in 0..x.len() {
                let d = mu * w[i] - x[i];
                num += m_diag[i] * d * d;
                den += m_diag[i] * x[i] * x[i];
            }
            (num / den).sqrt()
        })
        .fold(0.0, f64::max)
}
