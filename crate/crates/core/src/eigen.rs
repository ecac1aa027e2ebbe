//! Eigenpairs of the non-Hermitian Hamiltonian.

use faer::{c64, Mat};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lu::ShiftedLu;
use crate::sparse::SparseComplexMatrix;

/// Default ceiling on the dense dimension; `DOUBLON_ED_DENSE_CAP` overrides it.
pub const DEFAULT_DENSE_CAP: usize = 8000;
pub const DENSE_TOL: f64 = 1e-8;
pub const TARGETED_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SolveMethod {
    Dense,
    Targeted { sigma: [f64; 2], k: usize },
}

/// Right eigenpairs, unit 2-norm, largest component real and positive.
#[derive(Debug, Clone)]
pub struct EigenSolution {
    pub eigenvalues: Vec<Complex64>,
    pub vectors: Vec<Vec<Complex64>>,
    /// `‖Hψ − Eψ‖₂` per pair.
    pub residuals: Vec<f64>,
    pub method: SolveMethod,
}

impl EigenSolution {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }

    /// Reorders pairs by real part, then imaginary part.
    fn sort(&mut self) {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| {
            let (x, y) = (self.eigenvalues[a], self.eigenvalues[b]);
            x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im))
        });
        self.eigenvalues = order.iter().map(|&i| self.eigenvalues[i]).collect();
        self.residuals = order.iter().map(|&i| self.residuals[i]).collect();
        let mut vectors = std::mem::take(&mut self.vectors);
        self.vectors = order.iter().map(|&i| std::mem::take(&mut vectors[i])).collect();
    }

    /// Keeps only the pairs whose index passes `keep`.
    pub fn retain(&mut self, mut keep: impl FnMut(usize, Complex64) -> bool) {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(i, self.eigenvalues[i])).collect();
        self.eigenvalues = idx.iter().map(|&i| self.eigenvalues[i]).collect();
        self.residuals = idx.iter().map(|&i| self.residuals[i]).collect();
        let mut vectors = std::mem::take(&mut self.vectors);
        self.vectors = idx.iter().map(|&i| std::mem::take(&mut vectors[i])).collect();
    }
}

pub fn dense_cap() -> usize {
    std::env::var("DOUBLON_ED_DENSE_CAP")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(DEFAULT_DENSE_CAP)
}

/// Unit norm, largest-magnitude component real and positive.
pub fn fix_phase(v: &mut [Complex64]) {
    let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if norm == 0.0 {
        return;
    }
    let mut best = 0;
    let mut best_mag = -1.0;
    for (i, z) in v.iter().enumerate() {
        // Ties resolve to the lowest index, with slack for rounding.
        if z.norm() > best_mag * (1.0 + 1e-12) {
            best_mag = z.norm();
            best = i;
        }
    }
    let rot = v[best].conj() / (v[best].norm() * norm);
    for z in v.iter_mut() {
        *z *= rot;
    }
    v[best] = Complex64::new(v[best].re, 0.0);
}

fn residual(h: &SparseComplexMatrix, e: Complex64, v: &[Complex64]) -> f64 {
    h.matvec(v).iter().zip(v).map(|(hv, x)| (hv - e * x).norm_sqr()).sum::<f64>().sqrt()
}

/// Every eigenpair from a dense Schur-based decomposition.
pub fn eig_dense(h: &SparseComplexMatrix) -> Result<EigenSolution> {
    let cap = dense_cap();
    if h.dim() > cap {
        return Err(Error::Capacity { dim: h.dim() as u128, cap: cap as u128 });
    }
    let n = h.dim();
    if n == 0 {
        return Ok(EigenSolution { eigenvalues: vec![], vectors: vec![], residuals: vec![], method: SolveMethod::Dense });
    }
    let evd = h.to_dense().eigen().map_err(|e| Error::Solver(format!("dense decomposition failed: {e:?}")))?;
    let s = evd.S().column_vector();
    let u = evd.U();
    let mut sol = EigenSolution {
        eigenvalues: (0..n).map(|i| s[i]).collect(),
        vectors: (0..n)
            .map(|j| {
                let mut v: Vec<Complex64> = (0..n).map(|i| u[(i, j)]).collect();
                fix_phase(&mut v);
                v
            })
            .collect(),
        residuals: vec![],
        method: SolveMethod::Dense,
    };
    sol.residuals = sol.eigenvalues.iter().zip(&sol.vectors).map(|(&e, v)| residual(h, e, v)).collect();
    let bound = DENSE_TOL * h.frobenius_norm().max(f64::MIN_POSITIVE);
    if sol.max_residual() > bound {
        return Err(Error::Solver(format!(
            "dense residual {:e} exceeds {:e}",
            sol.max_residual(),
            bound
        )));
    }
    sol.sort();
    Ok(sol)
}

/// Eigenvalues only, sorted by real then imaginary part.
pub fn eigenvalues_dense(h: &SparseComplexMatrix) -> Result<Vec<Complex64>> {
    let cap = dense_cap();
    if h.dim() > cap {
        return Err(Error::Capacity { dim: h.dim() as u128, cap: cap as u128 });
    }
    let mut ev = h
        .to_dense()
        .eigenvalues()
        .map_err(|e| Error::Solver(format!("dense decomposition failed: {e:?}")))?;
    ev.sort_by(|x, y| x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im)));
    Ok(ev)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TargetedOptions {
    /// Extra subspace columns beyond `k`; `None` picks `max(16, k/2)`.
    pub guard: Option<usize>,
    pub max_iter: usize,
    /// Acceptance bound on `‖Hψ − Eψ‖ / ‖H‖_F`.
    pub tol: f64,
    /// Iteration stops early once every wanted residual is below this relative level.
    pub target: f64,
    pub seed: u64,
}

impl Default for TargetedOptions {
    fn default() -> Self {
        TargetedOptions { guard: None, max_iter: 400, tol: TARGETED_TOL, target: 1e-13, seed: 0x5eed }
    }
}

/// The `k` eigenpairs nearest `sigma`.
pub fn eig_targeted(h: &SparseComplexMatrix, sigma: Complex64, k: usize) -> Result<EigenSolution> {
    eig_targeted_with(h, sigma, k, &TargetedOptions::default())
}

/// Block shift-invert subspace iteration with Rayleigh-Ritz extraction on `H` itself.
pub fn eig_targeted_with(
    h: &SparseComplexMatrix,
    sigma: Complex64,
    k: usize,
    opts: &TargetedOptions,
) -> Result<EigenSolution> {
    let n = h.dim();
    if k == 0 || k > n {
        return Err(Error::Param(format!("requested {k} eigenpairs of a dimension-{n} matrix")));
    }
    let method = SolveMethod::Targeted { sigma: [sigma.re, sigma.im], k };
    let guard = opts.guard.unwrap_or((k / 2).max(16));
    let p = (k + guard).min(n);
    let hnorm = h.frobenius_norm().max(f64::MIN_POSITIVE);
    if p == n {
        let mut sol = eig_dense(h)?;
        keep_nearest(&mut sol, sigma, k);
        sol.method = method;
        return Ok(sol);
    }

    let lu = factor_with_jitter(h, sigma, hnorm)?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let start = Mat::<c64>::from_fn(n, p, |_, _| c64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
    let mut v = orthonormalize(start);
    let mut best_max = f64::INFINITY;
    let mut stalled = 0;
    for iter in 1..=opts.max_iter {
        lu.solve_in_place(v.as_mut());
        v = orthonormalize(v);
        let hv = sparse_times_dense(h, &v);
        let g = v.adjoint() * &hv;
        let evd = g.eigen().map_err(|e| Error::Solver(format!("projected decomposition failed: {e:?}")))?;
        let theta: Vec<Complex64> = (0..p).map(|i| evd.S().column_vector()[i]).collect();
        let y = evd.U();
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&a, &b| (theta[a] - sigma).norm().total_cmp(&(theta[b] - sigma).norm()));
        order.truncate(k);
        let ysel = Mat::<c64>::from_fn(p, k, |i, j| y[(i, order[j])]);
        let x = &v * &ysel;
        let hx = &hv * &ysel;
        let res: Vec<f64> = (0..k)
            .map(|j| {
                let th = theta[order[j]];
                let (mut r2, mut x2) = (0.0, 0.0);
                for i in 0..n {
                    r2 += (hx[(i, j)] - th * x[(i, j)]).norm_sqr();
                    x2 += x[(i, j)].norm_sqr();
                }
                (r2 / x2).sqrt()
            })
            .collect();
        let worst = res.iter().copied().fold(0.0, f64::max) / hnorm;
        if worst < 0.9 * best_max {
            best_max = worst;
            stalled = 0;
        } else {
            stalled += 1;
        }
        let done = worst <= opts.target || (worst <= opts.tol && stalled >= 5);
        if done || iter == opts.max_iter {
            if worst > opts.tol {
                return Err(Error::NoConvergence { iterations: iter, residual: worst * hnorm });
            }
            log::debug!("targeted solve converged in {iter} iterations, residual {:e}", worst * hnorm);
            let mut sol = EigenSolution {
                eigenvalues: order.iter().map(|&i| theta[i]).collect(),
                vectors: (0..k)
                    .map(|j| {
                        let mut col: Vec<Complex64> = (0..n).map(|i| x[(i, j)]).collect();
                        fix_phase(&mut col);
                        col
                    })
                    .collect(),
                residuals: vec![],
                method,
            };
            sol.residuals = sol.eigenvalues.iter().zip(&sol.vectors).map(|(&e, v)| residual(h, e, v)).collect();
            sol.sort();
            return Ok(sol);
        }
    }
    unreachable!("loop returns on its final iteration")
}

/// Factors `H − σI`, nudging σ by `1e−8·‖H‖_F·e^{iπ/4}·attempt` when a pivot collapses.
fn factor_with_jitter(h: &SparseComplexMatrix, sigma: Complex64, hnorm: f64) -> Result<ShiftedLu> {
    let floor = 1e-13 * hnorm;
    let step = Complex64::from_polar(1e-8 * hnorm, std::f64::consts::FRAC_PI_4);
    for attempt in 0..=3 {
        let shift = sigma + step * attempt as f64;
        match ShiftedLu::factor(h, shift) {
            Ok(lu) if lu.min_pivot() > floor => return Ok(lu),
            Ok(_) | Err(Error::Singular { .. }) => {
                log::warn!("shift {shift} is numerically singular, retrying");
            }
            Err(e) => return Err(e),
        }
    }
    Err(Error::Singular { re: sigma.re, im: sigma.im })
}

fn keep_nearest(sol: &mut EigenSolution, sigma: Complex64, k: usize) {
    let mut order: Vec<usize> = (0..sol.len()).collect();
    order.sort_by(|&a, &b| {
        (sol.eigenvalues[a] - sigma).norm().total_cmp(&(sol.eigenvalues[b] - sigma).norm())
    });
    let keep: std::collections::HashSet<usize> = order.into_iter().take(k).collect();
    sol.retain(|i, _| keep.contains(&i));
}

fn orthonormalize(m: Mat<c64>) -> Mat<c64> {
    m.qr().compute_thin_Q()
}

pub(crate) fn sparse_times_dense(h: &SparseComplexMatrix, v: &Mat<c64>) -> Mat<c64> {
    let mut out = Mat::<c64>::zeros(h.dim(), v.ncols());
    for j in 0..v.ncols() {
        let col = v.col(j);
        for r in 0..h.dim() {
            let (cols, vals) = h.row(r);
            let mut acc = c64::new(0.0, 0.0);
            for (&c, &a) in cols.iter().zip(vals) {
                acc += a * col[c];
            }
            out[(r, j)] = acc;
        }
    }
    out
}
