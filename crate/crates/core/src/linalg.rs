//! Dense 2x2 / 3x3 helpers for per-cell metric algebra.

use crate::grid::MAX_DIM;

pub type Mat = [[f64; MAX_DIM]; MAX_DIM];

/// Relative pivot threshold below which a metric is reported as degenerate.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

pub const IDENTITY: Mat = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

pub fn det(m: &Mat, n: usize) -> f64 {
    if n == 2 {
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    } else {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }
}

/// Smallest LDL^T pivot of a symmetric matrix, relative to its largest
/// diagonal entry. Negative or tiny values flag an indefinite/singular input.
pub fn relative_pivot(m: &Mat, n: usize) -> f64 {
    let scale = (0..n).map(|i| m[i][i].abs()).fold(0.0, f64::max);
    if !(scale > 0.0) {
        return 0.0;
    }
    let mut a = *m;
    let mut min_pivot = f64::INFINITY;
    for k in 0..n {
        let d = a[k][k];
        min_pivot = min_pivot.min(d / scale);
        if d <= 0.0 {
            return min_pivot;
        }
        for i in k + 1..n {
            let l = a[i][k] / d;
            for j in k + 1..n {
                a[i][j] -= l * a[k][j];
            }
        }
    }
    min_pivot
}

/// Inverse of a symmetric positive-definite matrix via cofactors, or `None`
/// when the relative pivot falls below [`PIVOT_TOLERANCE`].
pub fn spd_inverse(m: &Mat, n: usize) -> Option<(Mat, f64)> {
    if !(relative_pivot(m, n) > PIVOT_TOLERANCE) {
        return None;
    }
    let d = det(m, n);
    let mut inv = [[0.0; MAX_DIM]; MAX_DIM];
    if n == 2 {
        inv[0][0] = m[1][1] / d;
        inv[1][1] = m[0][0] / d;
        inv[0][1] = -m[0][1] / d;
        inv[1][0] = inv[0][1];
    } else {
        inv[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / d;
        inv[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / d;
        inv[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / d;
        inv[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / d;
        inv[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / d;
        inv[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / d;
        inv[1][0] = inv[0][1];
        inv[2][0] = inv[0][2];
        inv[2][1] = inv[1][2];
    }
    Some((inv, d))
}

/// Lower Cholesky factor; `None` if not positive-definite.
pub fn cholesky(m: &Mat, n: usize) -> Option<Mat> {
    let mut l = [[0.0; MAX_DIM]; MAX_DIM];
    for i in 0..n {
        for j in 0..=i {
            let mut s = m[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if !(s > 0.0) {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Some(l)
}

/// Inverse of a lower-triangular matrix.
pub fn lower_inverse(l: &Mat, n: usize) -> Mat {
    let mut inv = [[0.0; MAX_DIM]; MAX_DIM];
    for i in 0..n {
        inv[i][i] = 1.0 / l[i][i];
        for j in 0..i {
            let mut s = 0.0;
            for k in j..i {
                s -= l[i][k] * inv[k][j];
            }
            inv[i][j] = s / l[i][i];
        }
    }
    inv
}

/// `a * m * a^T`.
pub fn congruence(a: &Mat, m: &Mat, n: usize) -> Mat {
    let mut t = [[0.0; MAX_DIM]; MAX_DIM];
    for i in 0..n {
        for j in 0..n {
            t[i][j] = (0..n).map(|k| a[i][k] * m[k][j]).sum();
        }
    }
    let mut out = [[0.0; MAX_DIM]; MAX_DIM];
    for i in 0..n {
        for j in 0..n {
            out[i][j] = (0..n).map(|k| t[i][k] * a[j][k]).sum();
        }
    }
    out
}

/// Eigenvalues of a symmetric matrix, ascending. Only the first `n` are used.
pub fn sym_eigenvalues(m: &Mat, n: usize) -> [f64; MAX_DIM] {
    if n == 2 {
        let tr = m[0][0] + m[1][1];
        let dd = m[0][0] - m[1][1];
        let disc = (0.25 * dd * dd + m[0][1] * m[0][1]).sqrt();
        return [0.5 * tr - disc, 0.5 * tr + disc, 0.0];
    }
    let p1 = m[0][1] * m[0][1] + m[0][2] * m[0][2] + m[1][2] * m[1][2];
    if p1 == 0.0 {
        let mut e = [m[0][0], m[1][1], m[2][2]];
        e.sort_by(|a, b| a.total_cmp(b));
        return e;
    }
    let q = (m[0][0] + m[1][1] + m[2][2]) / 3.0;
    let p2 = (m[0][0] - q).powi(2) + (m[1][1] - q).powi(2) + (m[2][2] - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    let mut b = *m;
    for (i, row) in b.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (*v - if i == j { q } else { 0.0 }) / p;
        }
    }
    let r = (det(&b, 3) / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let e1 = q + 2.0 * p * phi.cos();
    let e3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
    let e2 = 3.0 * q - e1 - e3;
    let mut e = [e1, e2, e3];
    e.sort_by(|a, b| a.total_cmp(b));
    e
}
