//! Thin bridge to nalgebra for the few dense decompositions we need.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2};

fn to_na(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted in
/// descending order. Equal eigenvalues keep the solver's original order.
/// Each eigenvector is signed so that its largest-magnitude entry (first
/// one on ties) is positive.
pub fn symmetric_eigen(a: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let eig = SymmetricEigen::new(to_na(a));
    let n = a.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| {
        eig.eigenvalues[y]
            .total_cmp(&eig.eigenvalues[x])
            .then(x.cmp(&y))
    });
    let values = Array1::from_iter(order.iter().map(|&k| eig.eigenvalues[k]));
    let mut vectors = Array2::zeros((n, n));
    for (col, &k) in order.iter().enumerate() {
        let v = eig.eigenvectors.column(k);
        let mut pivot = 0;
        for i in 1..n {
            if v[i].abs() > v[pivot].abs() {
                pivot = i;
            }
        }
        let s = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            vectors[[i, col]] = s * v[i];
        }
    }
    (values, vectors)
}

/// `(W W^T)^{-1/2} W`: the closest orthogonal matrix to `w`.
pub fn symmetric_decorrelation(w: &Array2<f64>) -> Array2<f64> {
    let (values, vectors) = symmetric_eigen(&w.dot(&w.t()));
    let scale = values.mapv(|d| 1.0 / d.max(1e-300).sqrt());
    let inv_sqrt = (&vectors * &scale.insert_axis(ndarray::Axis(0))).dot(&vectors.t());
    inv_sqrt.dot(w)
}

/// Solves `a x = b` for symmetric positive-definite `a`, column by column.
pub fn spd_solve(a: &Array2<f64>, b: &Array2<f64>) -> Option<Array2<f64>> {
    let chol = to_na(a).cholesky()?;
    let x = chol.solve(&to_na(b));
    Some(Array2::from_shape_fn((x.nrows(), x.ncols()), |(i, j)| x[(i, j)]))
}
