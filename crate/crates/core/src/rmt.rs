//! Random matrix sampling and resolvent statistics.

use ndarray::Array2;
use ndarray_linalg::{Eig, QRSquare, SVD};
use num_complex::Complex64;

/// Smoke check for the LAPACK bindings.
pub fn lapack_smoke(n: usize) -> (usize, usize, usize) {
    let a = Array2::<Complex64>::eye(n);
    let (q, _r) = a.qr_square().unwrap();
    let (_u, s, _vt) = q.svd(false, false).map(|(u, s, v)| (u, s, v)).unwrap();
    let (w, _) = q.eig().unwrap();
    (q.nrows(), s.len(), w.len())
}
