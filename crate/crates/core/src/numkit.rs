//! Dense-matrix primitives: column-major vectorization, Kronecker products,
//! commutation matrices, pseudoinverses and truncated right singular
//! subspaces.
//!
//! Every matrix is an `nalgebra::DMatrix<f64>`, which already stores its
//! entries in column-major order, so `vec` is a plain copy of the storage.

use nalgebra::{DMatrix, DVector};

pub type DenseMatrix = DMatrix<f64>;

/// Relative singular-value cutoff used by [`pinv`] unless a caller overrides it.
pub const DEFAULT_PINV_REL_TOL: f64 = 1e-8;

/// Stacks the columns of `m` into one vector: entry `(j, k)` lands at `k * rows + j`.
pub fn vec(m: &DenseMatrix) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec`]: reshapes a length `rows * cols` vector column by column.
pub fn unvec(v: &[f64], rows: usize, cols: usize) -> DenseMatrix {
    assert_eq!(v.len(), rows * cols, "unvec: length {} != {rows}x{cols}", v.len());
    DenseMatrix::from_column_slice(rows, cols, v)
}

/// The `qr × qr` permutation `K` with `K · vec(B) = vec(Bᵀ)` for every `q × r` matrix `B`.
pub fn commutation_matrix(q: usize, r: usize) -> DenseMatrix {
    let mut k = DenseMatrix::zeros(q * r, q * r);
    for col in 0..r {
        for row in 0..q {
            // B(row, col) sits at col*q + row in vec(B) and at row*r + col in vec(Bᵀ).
            k[(row * r + col, col * q + row)] = 1.0;
        }
    }
    k
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    a.kronecker(b)
}

pub fn frobenius_norm_sq(m: &DenseMatrix) -> f64 {
    m.iter().map(|x| x * x).sum()
}

/// Moore–Penrose pseudoinverse through the SVD.
///
/// Singular values below `rel_tol × σ_max` are treated as zero. An all-zero
/// input yields the all-zero transpose-shaped matrix.
pub fn pinv(s: &DenseMatrix, rel_tol: f64) -> DenseMatrix {
    assert!(rel_tol > 0.0, "pinv: rel_tol must be positive");
    let (rows, cols) = s.shape();
    if rows == 0 || cols == 0 {
        return DenseMatrix::zeros(cols, rows);
    }
    let svd = s.clone().svd(true, true);
    let u = svd.u.expect("left singular vectors requested");
    let v_t = svd.v_t.expect("right singular vectors requested");
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    if sigma_max == 0.0 {
        return DenseMatrix::zeros(cols, rows);
    }
    let cutoff = rel_tol * sigma_max;
    let mut out = DenseMatrix::zeros(cols, rows);
    for (i, &sv) in svd.singular_values.iter().enumerate() {
        if sv > cutoff {
            // out += v_i u_iᵀ / σ_i
            let v_i = v_t.row(i).transpose();
            let u_i = u.column(i);
            out.ger(1.0 / sv, &v_i, &u_i, 1.0);
        }
    }
    out
}

/// Pseudoinverse of a symmetric matrix via its eigendecomposition.
///
/// For symmetric input the eigendecomposition is an SVD up to signs, so the
/// result and the cutoff rule match [`pinv`]; it is just cheaper.
pub fn pinv_symmetric(s: &DenseMatrix, rel_tol: f64) -> DenseMatrix {
    assert!(rel_tol > 0.0, "pinv_symmetric: rel_tol must be positive");
    let n = s.nrows();
    assert_eq!(n, s.ncols(), "pinv_symmetric: matrix must be square");
    if n == 0 {
        return DenseMatrix::zeros(0, 0);
    }
    let sym = symmetrize(s);
    let eig = sym.symmetric_eigen();
    let sigma_max = eig.eigenvalues.iter().map(|e| e.abs()).fold(0.0, f64::max);
    if sigma_max == 0.0 {
        return DenseMatrix::zeros(n, n);
    }
    let cutoff = rel_tol * sigma_max;
    let mut scaled = eig.eigenvectors.clone();
    for (i, &e) in eig.eigenvalues.iter().enumerate() {
        let w = if e.abs() > cutoff { 1.0 / e } else { 0.0 };
        scaled.column_mut(i).scale_mut(w);
    }
    let out = &scaled * eig.eigenvectors.transpose();
    symmetrize(&out)
}

/// `(m + mᵀ) / 2`.
pub fn symmetrize(m: &DenseMatrix) -> DenseMatrix {
    (m + m.transpose()) * 0.5
}

/// Number of singular values above `rel_tol × σ_max`.
pub fn numerical_rank(m: &DenseMatrix, rel_tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.singular_values();
    let sigma_max = sv.iter().cloned().fold(0.0, f64::max);
    if sigma_max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * sigma_max).count()
}

/// Leading `r` right singular vectors of `m` as the columns of a `q × r` matrix.
///
/// Columns are ordered by descending singular value. Each column is signed so
/// that its first nonzero entry is nonnegative. Directions belonging to
/// (numerically) zero singular values are replaced by an orthonormal
/// completion built from the canonical basis, so a zero input returns the
/// first `r` canonical vectors.
pub fn leading_right_singular_vectors(m: &DenseMatrix, r: usize) -> DenseMatrix {
    let (p, q) = m.shape();
    assert!(r <= p.min(q), "leading_right_singular_vectors: r = {r} exceeds min({p}, {q})");
    let mut kept: Vec<DVector<f64>> = Vec::with_capacity(r);
    let sigma_max = m.amax();
    if sigma_max > 0.0 && r > 0 {
        let svd = m.clone().svd(false, true);
        let v_t = svd.v_t.expect("right singular vectors requested");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| {
            svd.singular_values[b]
                .partial_cmp(&svd.singular_values[a])
                .expect("finite singular values")
                .then(a.cmp(&b))
        });
        let top = svd.singular_values[order[0]];
        for &i in order.iter().take(r) {
            if svd.singular_values[i] <= 1e-12 * top {
                break;
            }
            kept.push(v_t.row(i).transpose());
        }
    }
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(r);
    for v in kept {
        push_orthonormal(&mut basis, v);
    }
    let mut canonical = 0;
    while basis.len() < r && canonical < q {
        let mut e = DVector::zeros(q);
        e[canonical] = 1.0;
        push_orthonormal(&mut basis, e);
        canonical += 1;
    }
    let mut out = DenseMatrix::zeros(q, r);
    for (c, mut v) in basis.into_iter().enumerate() {
        fix_sign(&mut v);
        out.set_column(c, &v);
    }
    out
}

/// Gram–Schmidt step (applied twice for stability); skips vectors that are
/// numerically inside the current span.
fn push_orthonormal(basis: &mut Vec<DVector<f64>>, mut v: DVector<f64>) {
    let original = v.norm();
    if original == 0.0 {
        return;
    }
    for _ in 0..2 {
        for b in basis.iter() {
            let proj = b.dot(&v);
            v.axpy(-proj, b, 1.0);
        }
    }
    let norm = v.norm();
    if norm > 1e-10 * original {
        basis.push(v / norm);
    }
}

fn fix_sign(v: &mut DVector<f64>) {
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
        if *first < 0.0 {
            v.neg_mut();
        }
    }
}

pub fn all_finite(m: &DenseMatrix) -> bool {
    m.iter().all(|x| x.is_finite())
}
