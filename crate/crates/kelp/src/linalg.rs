//! Thin wrappers around the LAPACK-backed dense decompositions.

use ndarray::{s, Array1, Array2};
use ndarray_linalg::{svddc::JobSvd, Eigh, SVDDC, UPLO};

use crate::error::Result;

/// Eigendecomposition of a symmetric matrix with eigenvalues sorted in
/// nonincreasing order. Returns `(values, vectors)` with eigenvectors in the
/// columns of `vectors`, matching the value order.
pub fn sym_eigen_desc(a: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let (vals, vecs) = a.eigh(UPLO::Lower)?;
    let m = vals.len();
    let vals_desc = Array1::from_shape_fn(m, |i| vals[m - 1 - i]);
    let mut vecs_desc = Array2::zeros(vecs.raw_dim());
    for i in 0..m {
        vecs_desc.column_mut(i).assign(&vecs.column(m - 1 - i));
    }
    Ok((vals_desc, vecs_desc))
}

/// Thin singular value decomposition `a = u diag(s) vt` with
/// `u: m x k`, `s: k`, `vt: k x n`, `k = min(m, n)`, singular values
/// nonincreasing.
pub fn thin_svd(a: &Array2<f64>) -> Result<(Array2<f64>, Array1<f64>, Array2<f64>)> {
    let (u, s, vt) = a.svddc(JobSvd::Some)?;
    Ok((
        u.expect("left singular vectors requested"),
        s,
        vt.expect("right singular vectors requested"),
    ))
}

/// Rank-`r` truncated SVD factors `(u_r * sqrt(s_r), v_r * sqrt(s_r))` of `a`,
/// the balanced split used for factor initialization. Components with zero
/// singular value contribute zero columns.
pub fn balanced_rank_r_factors(a: &Array2<f64>, r: usize) -> Result<(Array2<f64>, Array2<f64>)> {
    let (u, s, vt) = thin_svd(a)?;
    let k = r.min(s.len());
    let mut uf = Array2::zeros((a.nrows(), r));
    let mut vf = Array2::zeros((a.ncols(), r));
    for c in 0..k {
        let scale = s[c].max(0.0).sqrt();
        uf.column_mut(c).assign(&(&u.column(c) * scale));
        vf.column_mut(c).assign(&(&vt.row(c) * scale));
    }
    Ok((uf, vf))
}

/// Squared spectral norm of the vertical stack `[u; v]`, i.e. the largest
/// eigenvalue of `u'u + v'v`.
pub fn stacked_spectral_norm_sq(u: &Array2<f64>, v: &Array2<f64>) -> Result<f64> {
    let g = u.t().dot(u) + v.t().dot(v);
    if g.nrows() == 0 {
        return Ok(0.0);
    }
    let (vals, _) = g.eigh(UPLO::Lower)?;
    Ok(vals.iter().cloned().fold(0.0, f64::max))
}

/// Frobenius norm.
pub fn fro_norm(a: &Array2<f64>) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Spectral norm estimate by deterministic power iteration on a'a. Converges
/// from below; twenty sweeps are ample for the well-separated spectra this is
/// used on.
pub fn spectral_norm_est(a: &Array2<f64>) -> f64 {
    let (n, p) = a.dim();
    if n == 0 || p == 0 {
        return 0.0;
    }
    let mut v = Array1::from_elem(p, 1.0 / (p as f64).sqrt());
    for _ in 0..20 {
        let w = a.dot(&v);
        let z = a.t().dot(&w);
        let z_norm = z.dot(&z).sqrt();
        if z_norm <= 0.0 {
            return 0.0;
        }
        v = z / z_norm;
    }
    let w = a.dot(&v);
    w.dot(&w).sqrt()
}

/// Orthonormal column basis via thin QR; used for random rotations in tests
/// and for the balanced SVD of factored products.
pub fn thin_qr(a: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
    use ndarray_linalg::QRInto;
    let (q, r) = a.clone().qr_into()?;
    Ok((q, r))
}

/// SVD of a factored product `a b'` without forming the full matrix:
/// QR both factors, SVD the small core. Returns `(left, s, right)` with
/// `a b' = left diag(s) right'`, `left: m x k`, `right: n x k`.
pub fn factored_svd(
    a: &Array2<f64>,
    b: &Array2<f64>,
) -> Result<(Array2<f64>, Array1<f64>, Array2<f64>)> {
    let (qa, ra) = thin_qr(a)?;
    let (qb, rb) = thin_qr(b)?;
    let core = ra.dot(&rb.t());
    let (w, s, zt) = thin_svd(&core)?;
    let left = qa.dot(&w);
    let right = qb.dot(&zt.t());
    Ok((left, s, right))
}

/// `a` restricted to its first `r` columns.
pub fn take_columns(a: &Array2<f64>, r: usize) -> Array2<f64> {
    a.slice(s![.., ..r]).to_owned()
}
