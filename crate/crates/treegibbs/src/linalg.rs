//! Small dense linear-algebra helpers (f64 via nalgebra, exact via BigRational).

use nalgebra::{DMatrix, DVector};
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// All eigenvalue moduli, sorted in decreasing order.
pub fn eigen_moduli(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let mut v: Vec<f64> = m.clone().complex_eigenvalues().iter().map(|z| z.norm()).collect();
    v.sort_by(|a, b| b.partial_cmp(a).unwrap());
    v
}

/// Orthonormal basis (as columns) of the approximate null space of `a`,
/// taken from the `dim` smallest singular values.
pub fn null_space(a: &DMatrix<f64>, dim: usize) -> DMatrix<f64> {
    let n = a.ncols();
    let svd = a.clone().svd(false, true);
    let vt = svd.v_t.expect("requested v_t");
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|&i, &j| svd.singular_values[i].partial_cmp(&svd.singular_values[j]).unwrap());
    let mut out = DMatrix::zeros(n, dim);
    for (c, &i) in idx.iter().take(dim).enumerate() {
        for r in 0..n {
            out[(r, c)] = vt[(i, r)];
        }
    }
    out
}

/// Nonnegative right eigenvector of `m` for its Perron value `rho`,
/// scaled to unit sum. Tiny negative entries from round-off are zeroed.
pub fn perron_right(m: &DMatrix<f64>, rho: f64) -> DVector<f64> {
    let n = m.nrows();
    let a = m - DMatrix::identity(n, n) * rho;
    let v = null_space(&a, 1).column(0).into_owned();
    let s: f64 = v.sum();
    let mut v = if s < 0.0 { -v } else { v };
    let scale = v.amax();
    for x in v.iter_mut() {
        if *x < 0.0 && *x > -1e-11 * scale {
            *x = 0.0;
        }
    }
    let s = v.sum();
    v / s
}

pub fn perron_left(m: &DMatrix<f64>, rho: f64) -> DVector<f64> {
    perron_right(&m.transpose(), rho)
}

/// Least-squares line fit `y = a + b x`; returns (a, b, r2).
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    let b = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let a = my - b * mx;
    let r2 = if syy > 0.0 { (sxy * sxy) / (sxx * syy) } else { 1.0 };
    (a, b, r2)
}

pub type QMatrix = Vec<Vec<BigRational>>;

pub fn q_zeros(r: usize, c: usize) -> QMatrix {
    vec![vec![BigRational::zero(); c]; r]
}

pub fn q_mul(a: &QMatrix, b: &QMatrix) -> QMatrix {
    let (n, m, p) = (a.len(), b.len(), b.first().map_or(0, |r| r.len()));
    let mut out = q_zeros(n, p);
    for i in 0..n {
        for k in 0..m {
            if a[i][k].is_zero() {
                continue;
            }
            for j in 0..p {
                if !b[k][j].is_zero() {
                    out[i][j] += &a[i][k] * &b[k][j];
                }
            }
        }
    }
    out
}

pub fn q_transpose(a: &QMatrix) -> QMatrix {
    let (n, m) = (a.len(), a.first().map_or(0, |r| r.len()));
    (0..m).map(|j| (0..n).map(|i| a[i][j].clone()).collect()).collect()
}

/// Basis of the exact null space (columns returned as a `n x d` matrix).
pub fn q_null_space(a: &QMatrix) -> QMatrix {
    let rows = a.len();
    let cols = a.first().map_or(0, |r| r.len());
    let mut m = a.clone();
    let mut pivots = Vec::new();
    let mut r = 0;
    for c in 0..cols {
        let Some(p) = (r..rows).find(|&i| !m[i][c].is_zero()) else { continue };
        m.swap(r, p);
        let inv = BigRational::one() / &m[r][c];
        for j in c..cols {
            m[r][j] = &m[r][j] * &inv;
        }
        for i in 0..rows {
            if i != r && !m[i][c].is_zero() {
                let f = m[i][c].clone();
                for j in c..cols {
                    let t = &f * &m[r][j];
                    m[i][j] -= t;
                }
            }
        }
        pivots.push(c);
        r += 1;
        if r == rows {
            break;
        }
    }
    let free: Vec<usize> = (0..cols).filter(|c| !pivots.contains(c)).collect();
    let mut basis = q_zeros(cols, free.len());
    for (k, &fc) in free.iter().enumerate() {
        basis[fc][k] = BigRational::one();
        for (pr, &pc) in pivots.iter().enumerate() {
            basis[pc][k] = -m[pr][fc].clone();
        }
    }
    basis
}

/// Exact inverse by Gauss-Jordan; `None` if singular.
pub fn q_inverse(a: &QMatrix) -> Option<QMatrix> {
    let n = a.len();
    let mut m: QMatrix = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { BigRational::one() } else { BigRational::zero() }));
            r
        })
        .collect();
    for c in 0..n {
        let p = (c..n).find(|&i| !m[i][c].is_zero())?;
        m.swap(c, p);
        let inv = BigRational::one() / &m[c][c];
        for j in 0..2 * n {
            m[c][j] = &m[c][j] * &inv;
        }
        for i in 0..n {
            if i != c && !m[i][c].is_zero() {
                let f = m[i][c].clone();
                for j in 0..2 * n {
                    let t = &f * &m[c][j];
                    m[i][j] -= t;
                }
            }
        }
    }
    Some(m.into_iter().map(|r| r[n..].to_vec()).collect())
}

/// Best rational approximation with denominator at most `max_den` (continued fractions).
pub fn rational_approx(x: f64, max_den: i64) -> Option<(i64, i64)> {
    if !x.is_finite() || x.abs() > 1e12 {
        return None;
    }
    let (mut h0, mut h1, mut k0, mut k1) = (0i64, 1i64, 1i64, 0i64);
    let mut v = x;
    for _ in 0..64 {
        let a = v.floor();
        let ai = a as i64;
        let h2 = ai.checked_mul(h1)?.checked_add(h0)?;
        let k2 = ai.checked_mul(k1)?.checked_add(k0)?;
        if k2 > max_den {
            break;
        }
        h0 = h1;
        h1 = h2;
        k0 = k1;
        k1 = k2;
        let frac = v - a;
        if frac.abs() < 1e-12 {
            break;
        }
        v = 1.0 / frac;
    }
    (k1 != 0).then_some((h1, k1))
}

pub fn q_abs_max(a: &QMatrix) -> BigRational {
    let mut best = BigRational::zero();
    for row in a {
        for v in row {
            if v.abs() > best {
                best = v.abs();
            }
        }
    }
    best
}
