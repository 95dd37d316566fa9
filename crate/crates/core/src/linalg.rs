//! Dense helpers shared by the flow and spectrum modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Eigenpairs of the generalized problem `A u = λ M u` with `M = diag(m)`,
/// sorted ascending, eigenvectors `M`-orthonormal (columns).
pub(crate) fn generalized_eigen(a: &DMatrix<f64>, m: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.len();
    let isq: Vec<f64> = m.iter().map(|w| 1.0 / w.sqrt()).collect();
    let b = DMatrix::from_fn(n, n, |i, j| isq[i] * a[(i, j)] * isq[j]);
    let b = (&b + b.transpose()) * 0.5;
    let eig = SymmetricEigen::new(b);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| isq[r] * eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Modified Gram-Schmidt in the `m`-weighted inner product. Columns whose
/// remaining norm falls below `drop_tol` are discarded.
pub(crate) fn orthonormalize(cols: &[Vec<f64>], m: &[f64], drop_tol: f64) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(cols.len());
    for c in cols {
        let mut v = c.clone();
        let n0 = wnorm(&v, m);
        // two passes for stability
        for _ in 0..2 {
            for q in &out {
                let p = wdot(&v, q, m);
                for (x, y) in v.iter_mut().zip(q) {
                    *x -= p * y;
                }
            }
        }
        let nv = wnorm(&v, m);
        if nv > drop_tol * n0.max(f64::MIN_POSITIVE) && nv > 0.0 {
            out.push(v.into_iter().map(|x| x / nv).collect());
        }
    }
    out
}

pub(crate) fn wdot(a: &[f64], b: &[f64], m: &[f64]) -> f64 {
    a.iter().zip(b).zip(m).map(|((x, y), w)| w * x * y).sum()
}

pub(crate) fn wnorm(a: &[f64], m: &[f64]) -> f64 {
    wdot(a, a, m).sqrt()
}

/// Gram matrix of `cols` in the `m`-weighted inner product.
pub(crate) fn gram(cols: &[Vec<f64>], m: &[f64]) -> DMatrix<f64> {
    let k = cols.len();
    DMatrix::from_fn(k, k, |i, j| wdot(&cols[i], &cols[j], m))
}

pub(crate) fn column(mat: &DMatrix<f64>, j: usize) -> Vec<f64> {
    mat.column(j).iter().copied().collect()
}

pub(crate) fn to_dvector(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}
