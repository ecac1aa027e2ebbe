//! Compressed-sparse-row complex matrix.

use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fmt::format_g;

/// Square complex matrix in CSR layout with sorted, unique column indices per row and no
/// explicit zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseComplexMatrix {
    dim: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<Complex64>,
}

impl SparseComplexMatrix {
    /// Sums duplicate coordinates and drops entries that cancel to exactly zero.
    pub fn from_triplets(dim: usize, mut triplets: Vec<(usize, usize, Complex64)>) -> Result<Self> {
        if let Some(&(r, c, _)) = triplets.iter().find(|&&(r, c, _)| r >= dim || c >= dim) {
            return Err(Error::DimensionMismatch { expected: dim, got: r.max(c) + 1 });
        }
        triplets.par_sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut rows: Vec<Vec<(usize, Complex64)>> = vec![Vec::new(); dim];
        let mut iter = triplets.into_iter().peekable();
        while let Some((r, c, mut v)) = iter.next() {
            while let Some(&(r2, c2, v2)) = iter.peek() {
                if (r2, c2) != (r, c) {
                    break;
                }
                v += v2;
                iter.next();
            }
            rows[r].push((c, v));
        }
        Ok(Self::from_rows(rows))
    }

    /// Builds from per-row entry lists; each list is sorted and merged.
    pub fn from_rows(mut rows: Vec<Vec<(usize, Complex64)>>) -> Self {
        let dim = rows.len();
        rows.par_iter_mut().for_each(|row| {
            row.sort_unstable_by_key(|&(c, _)| c);
            let mut merged: Vec<(usize, Complex64)> = Vec::with_capacity(row.len());
            for &(c, v) in row.iter() {
                match merged.last_mut() {
                    Some(last) if last.0 == c => last.1 += v,
                    _ => merged.push((c, v)),
                }
            }
            merged.retain(|&(_, v)| v != Complex64::new(0.0, 0.0));
            *row = merged;
        });
        let mut row_ptr = Vec::with_capacity(dim + 1);
        row_ptr.push(0);
        let nnz: usize = rows.iter().map(Vec::len).sum();
        let mut col_idx = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        for row in rows {
            for (c, v) in row {
                col_idx.push(c);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        SparseComplexMatrix { dim, row_ptr, col_idx, values }
    }

    pub fn zeros(dim: usize) -> Self {
        SparseComplexMatrix { dim, row_ptr: vec![0; dim + 1], col_idx: Vec::new(), values: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `r`.
    pub fn row(&self, r: usize) -> (&[usize], &[Complex64]) {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        (&self.col_idx[span.clone()], &self.values[span])
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&c) {
            Ok(k) => vals[k],
            Err(_) => Complex64::new(0.0, 0.0),
        }
    }

    /// `(row, col, value)` in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, Complex64)> + '_ {
        (0..self.dim).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
        })
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn matvec(&self, x: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.dim);
        (0..self.dim)
            .map(|r| {
                let (cols, vals) = self.row(r);
                cols.iter().zip(vals).map(|(&c, &v)| v * x[c]).sum()
            })
            .collect()
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        let mut rows: Vec<Vec<(usize, Complex64)>> = vec![Vec::new(); self.dim];
        for (r, c, v) in self.iter() {
            rows[c].push((r, v.conj()));
        }
        Self::from_rows(rows)
    }

    /// `self − shift·I`.
    pub fn shifted(&self, shift: Complex64) -> Self {
        let rows = (0..self.dim)
            .map(|r| {
                let (cols, vals) = self.row(r);
                let mut row: Vec<(usize, Complex64)> = cols.iter().copied().zip(vals.iter().copied()).collect();
                row.push((r, -shift));
                row
            })
            .collect();
        Self::from_rows(rows)
    }

    pub fn to_dense(&self) -> faer::Mat<faer::c64> {
        let mut m = faer::Mat::<faer::c64>::zeros(self.dim, self.dim);
        for (r, c, v) in self.iter() {
            m[(r, c)] = v;
        }
        m
    }

    /// Transfers the pattern into a faer column-major sparse matrix.
    pub fn to_faer_csc(&self) -> faer::sparse::SparseColMat<usize, faer::c64> {
        let triplets: Vec<faer::sparse::Triplet<usize, usize, faer::c64>> =
            self.iter().map(|(r, c, v)| faer::sparse::Triplet::new(r, c, v)).collect();
        faer::sparse::SparseColMat::try_new_from_triplets(self.dim, self.dim, &triplets)
            .expect("CSR entries are unique and in range")
    }

    /// One `row col re im` line per nonzero, 0-based, 17 significant digits.
    pub fn write_coordinate<W: Write>(&self, mut out: W) -> Result<()> {
        for (r, c, v) in self.iter() {
            writeln!(out, "{r} {c} {} {}", format_g(v.re, 17), format_g(v.im, 17))?;
        }
        Ok(())
    }

    /// Parses the output of [`write_coordinate`](Self::write_coordinate).
    pub fn read_coordinate(dim: usize, text: &str) -> Result<Self> {
        let mut triplets = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.is_empty() {
                continue;
            }
            let bad = || Error::Config(format!("malformed matrix line {}: {line:?}", lineno + 1));
            if f.len() != 4 {
                return Err(bad());
            }
            let r: usize = f[0].parse().map_err(|_| bad())?;
            let c: usize = f[1].parse().map_err(|_| bad())?;
            let re: f64 = f[2].parse().map_err(|_| bad())?;
            let im: f64 = f[3].parse().map_err(|_| bad())?;
            triplets.push((r, c, Complex64::new(re, im)));
        }
        Self::from_triplets(dim, triplets)
    }
}

/// `max |H_ij − conj(H_ji)|`.
pub fn hermiticity_defect(h: &SparseComplexMatrix) -> f64 {
    let upper = h.iter().map(|(r, c, v)| (v - h.get(c, r).conj()).norm());
    upper.fold(0.0, f64::max)
}
