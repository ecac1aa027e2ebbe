//! Sparse LU of `A − σI` with access to the pivots.

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::perm::PermRef;
use faer::sparse::linalg::amd;
use faer::sparse::linalg::lu::simplicial::{
    factorize_simplicial_numeric_lu, factorize_simplicial_numeric_lu_scratch, solve_in_place_scratch,
    SimplicialLu,
};
use faer::{c64, Conj, MatMut, Par};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::sparse::SparseComplexMatrix;

/// `P_r (A − σI) Q = L U` with `L` unit lower triangular. `Q` is an AMD ordering of the
/// symmetrized pattern; partial pivoting picks `P_r`.
pub struct ShiftedLu {
    dim: usize,
    shift: Complex64,
    row_fwd: Vec<usize>,
    row_inv: Vec<usize>,
    col_fwd: Vec<usize>,
    col_inv: Vec<usize>,
    lu: SimplicialLu<usize, c64>,
    /// Diagonal of `U` in factor order.
    pivots: Vec<Complex64>,
}

/// `log det` split into modulus and phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogDet {
    pub log_abs: f64,
    /// Argument in `(−π, π]`.
    pub phase: f64,
    pub min_pivot: f64,
}

impl ShiftedLu {
    pub fn factor(a: &SparseComplexMatrix, shift: Complex64) -> Result<Self> {
        let n = a.dim();
        let shifted = if shift == Complex64::new(0.0, 0.0) { a.to_faer_csc() } else { a.shifted(shift).to_faer_csc() };
        let mut col_fwd = vec![0usize; n];
        let mut col_inv = vec![0usize; n];
        let mut row_fwd = vec![0usize; n];
        let mut row_inv = vec![0usize; n];
        let singular = || Error::Singular { re: shift.re, im: shift.im };
        {
            let mut upper: Vec<faer::sparse::Triplet<usize, usize, f64>> =
                (0..n).map(|i| faer::sparse::Triplet::new(i, i, 1.0)).collect();
            for (r, c, _) in a.iter() {
                upper.push(faer::sparse::Triplet::new(r.min(c), r.max(c), 1.0));
            }
            let pattern = faer::sparse::SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &upper)
                .map_err(|e| Error::Solver(format!("pattern assembly failed: {e:?}")))?;
            let req = amd::order_scratch::<usize>(n, pattern.compute_nnz());
            let mut buf = MemBuffer::new(req);
            amd::order(&mut col_fwd, &mut col_inv, pattern.symbolic(), Default::default(), MemStack::new(&mut buf))
                .map_err(|e| Error::Solver(format!("fill-reducing ordering failed: {e:?}")))?;
        }
        let mut lu = SimplicialLu::<usize, c64>::new();
        {
            let req = factorize_simplicial_numeric_lu_scratch::<usize, c64>(n, n);
            let mut buf = MemBuffer::new(req);
            let col_perm = PermRef::new_checked(&col_fwd, &col_inv, n);
            factorize_simplicial_numeric_lu(
                &mut row_fwd,
                &mut row_inv,
                &mut lu,
                shifted.as_ref(),
                col_perm,
                MemStack::new(&mut buf),
            )
            .map_err(|_| singular())?;
        }
        let u = lu.u_factor_unsorted();
        let pivots: Vec<Complex64> = (0..n)
            .map(|j| {
                let rows = u.row_idx_of_col_raw(j);
                let vals = u.val_of_col(j);
                rows.iter()
                    .zip(vals)
                    .find(|(&r, _)| r == j)
                    .map(|(_, &v)| v)
                    .unwrap_or(Complex64::new(0.0, 0.0))
            })
            .collect();
        Ok(ShiftedLu { dim: n, shift, row_fwd, row_inv, col_fwd, col_inv, lu, pivots })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shift(&self) -> Complex64 {
        self.shift
    }

    pub fn min_pivot(&self) -> f64 {
        self.pivots.iter().map(|p| p.norm()).fold(f64::INFINITY, f64::min)
    }

    /// Overwrites `rhs` with `(A − σI)⁻¹ rhs`.
    pub fn solve_in_place(&self, rhs: MatMut<'_, c64>) {
        let req = solve_in_place_scratch::<usize, c64>(self.dim, rhs.ncols(), Par::Seq);
        let mut buf = MemBuffer::new(req);
        self.lu.solve_in_place_with_conj(
            PermRef::new_checked(&self.row_fwd, &self.row_inv, self.dim),
            PermRef::new_checked(&self.col_fwd, &self.col_inv, self.dim),
            Conj::No,
            rhs,
            Par::Seq,
            MemStack::new(&mut buf),
        );
    }

    /// `det(A − σI) = sgn(P_r)·sgn(Q)·∏ U_jj`.
    pub fn log_det(&self) -> LogDet {
        let mut log_abs = 0.0;
        let mut phase = 0.0;
        for p in &self.pivots {
            log_abs += p.norm().ln();
            phase = (phase + p.arg()).rem_euclid(std::f64::consts::TAU);
        }
        if permutation_is_odd(&self.row_fwd) != permutation_is_odd(&self.col_fwd) {
            phase = (phase + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU);
        }
        if phase > std::f64::consts::PI {
            phase -= std::f64::consts::TAU;
        }
        LogDet { log_abs, phase, min_pivot: self.min_pivot() }
    }
}

/// Parity from the cycle decomposition.
fn permutation_is_odd(perm: &[usize]) -> bool {
    let mut seen = vec![false; perm.len()];
    let mut odd = false;
    for start in 0..perm.len() {
        if seen[start] {
            continue;
        }
        let mut len = 0;
        let mut i = start;
        while !seen[i] {
            seen[i] = true;
            i = perm[i];
            len += 1;
        }
        if len % 2 == 0 {
            odd = !odd;
        }
    }
    odd
}

#[cfg(test)]
mod tests {
    use super::*;
    use faer::Mat;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn sample() -> SparseComplexMatrix {
        SparseComplexMatrix::from_triplets(
            4,
            vec![
                (0, 1, c(2.0, 1.0)),
                (1, 0, c(-1.0, 0.5)),
                (1, 2, c(0.0, 3.0)),
                (2, 3, c(1.0, -1.0)),
                (3, 0, c(0.5, 0.0)),
                (3, 3, c(0.2, 0.1)),
                (2, 2, c(0.0, 0.0)),
            ],
        )
        .unwrap()
    }

    #[test]
    fn log_det_matches_dense_lu() {
        let a = sample();
        for shift in [c(0.0, 0.0), c(0.3, -0.2), c(-1.5, 2.0)] {
            let sparse = ShiftedLu::factor(&a, shift).unwrap().log_det();
            let mut dense = a.to_dense();
            for i in 0..4 {
                dense[(i, i)] -= shift;
            }
            let det = dense.determinant();
            assert!((sparse.log_abs - det.norm().ln()).abs() < 1e-12);
            let dphase = (sparse.phase - det.arg()).rem_euclid(std::f64::consts::TAU);
            assert!(dphase.min(std::f64::consts::TAU - dphase) < 1e-12);
        }
    }

    #[test]
    fn solve_inverts_shifted_matrix() {
        let a = sample();
        let shift = c(0.4, 0.7);
        let lu = ShiftedLu::factor(&a, shift).unwrap();
        let b = Mat::<c64>::from_fn(4, 2, |i, j| c(i as f64 + 1.0, j as f64 - 0.5));
        let mut x = b.clone();
        lu.solve_in_place(x.as_mut());
        for col in 0..2 {
            let xs: Vec<Complex64> = (0..4).map(|i| x[(i, col)]).collect();
            let ax = a.matvec(&xs);
            for i in 0..4 {
                assert!((ax[i] - shift * xs[i] - b[(i, col)]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn parity_of_small_permutations() {
        assert!(!permutation_is_odd(&[0, 1, 2]));
        assert!(permutation_is_odd(&[1, 0, 2]));
        assert!(!permutation_is_odd(&[1, 2, 0]));
    }
}
