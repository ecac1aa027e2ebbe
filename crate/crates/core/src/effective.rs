//! Strong-coupling doublon theory: effective lattice Hamiltonian, pair-hopping chain,
//! closed-form edge states and spectrum matching.

use faer::{Mat, Side};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::basis::FockBasis;
use crate::error::{Error, Result};
use crate::hamiltonian::assemble;
use crate::model::{LatticeSpec, ModelParams, YDirection};
use crate::sparse::SparseComplexMatrix;

/// Coefficients of the second-order doublon Hamiltonian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectiveModel {
    pub j_eff: f64,
    pub t_eff: f64,
    pub u_eff_bulk: f64,
    pub u_eff_edge: f64,
    pub p: f64,
    pub v: f64,
}

impl EffectiveModel {
    pub fn new(params: &ModelParams) -> Result<Self> {
        params.validate()?;
        let j0 = params.j0()?;
        let scale = params.j.abs().max(params.t.abs()).max(params.p.abs());
        if params.u.abs() < 5.0 * scale {
            log::warn!("|U| = {} is below 5·max(|J|,|t|,|P|) = {}; second order may be inaccurate", params.u.abs(), 5.0 * scale);
        }
        Ok(EffectiveModel {
            j_eff: j0,
            t_eff: params.t * params.t / params.u,
            u_eff_bulk: 2.0 * j0 + 2.0 * params.u,
            u_eff_edge: j0 + 2.0 * params.u,
            p: params.p,
            v: params.v,
        })
    }
}

/// Doublon hopping on the lattice; row and column index the doublon's site.
///
/// A doublon carries two bosons, so a boundary-crossing hop collects twice the twist.
pub fn build_h_eff(params: &ModelParams, lattice: &LatticeSpec) -> Result<SparseComplexMatrix> {
    let m = EffectiveModel::new(params)?;
    let mut trip = Vec::new();
    for site in 0..lattice.num_sites() {
        let (x, _) = lattice.coords(site);
        let edge = lattice.is_edge_column(x);
        let u = if edge && lattice.bc_x.is_open() { m.u_eff_edge } else { m.u_eff_bulk };
        let v = if edge { m.v } else { 0.0 };
        trip.push((site, site, Complex64::new(-u - v, 0.0)));
    }
    let phi_x = lattice.bc_x.twist();
    for bond in &lattice.x_bonds {
        let amp = if bond.column % 2 == 1 { -(m.j_eff + m.p) } else { -m.j_eff };
        let theta = if bond.wraps { 2.0 * phi_x } else { 0.0 };
        trip.push((bond.right, bond.left, amp * Complex64::from_polar(1.0, theta)));
        trip.push((bond.left, bond.right, amp * Complex64::from_polar(1.0, -theta)));
    }
    let phi_y = lattice.bc_y.twist();
    for bond in &lattice.y_bonds {
        let theta = match (bond.wraps, bond.direction) {
            (false, _) => 0.0,
            (true, YDirection::Up) => 2.0 * phi_y,
            (true, YDirection::Down) => -2.0 * phi_y,
        };
        trip.push((bond.target, bond.source, m.t_eff * Complex64::from_polar(1.0, theta)));
    }
    SparseComplexMatrix::from_triplets(lattice.num_sites(), trip)
}

/// Second-order quasi-degenerate projection of the full two-boson Hamiltonian onto the
/// doublon states, with `E_d − E_s = −2U` for every intermediate state.
pub fn derive_eff_numerically(params: &ModelParams, lattice: &LatticeSpec) -> Result<SparseComplexMatrix> {
    if params.u == 0.0 {
        return Err(Error::Param("projection needs U != 0".into()));
    }
    if params.n_particles != 2 {
        return Err(Error::Param("projection acts on the two-boson sector".into()));
    }
    let basis = FockBasis::new(lattice.num_sites(), 2)?;
    let h = assemble(params, lattice, &basis, None)?;
    let mut site_of = vec![None; basis.dim()];
    for r in 0..lattice.num_sites() {
        site_of[basis.condensed_index(r).expect("doublon state")] = Some(r);
    }
    let denom = -2.0 * params.u;
    let mut trip = Vec::new();
    for r in 0..lattice.num_sites() {
        let d = basis.condensed_index(r).expect("doublon state");
        let (cols, vals) = h.row(d);
        for (&k, &hv) in cols.iter().zip(vals) {
            match site_of[k] {
                Some(r2) => trip.push((r, r2, hv)),
                None => {
                    let (cols2, vals2) = h.row(k);
                    for (&k2, &hv2) in cols2.iter().zip(vals2) {
                        if let Some(r2) = site_of[k2] {
                            trip.push((r, r2, hv * hv2 / denom));
                        }
                    }
                }
            }
        }
    }
    SparseComplexMatrix::from_triplets(lattice.num_sites(), trip)
}

/// Open pair-hopping chain of length `len`: cells `(2x − 1, 2x)` joined by `−(J²/U + P)`,
/// neighboring cells by `−J²/U`, end sites detuned by `+J²/U`.
pub fn build_h_1d(params: &ModelParams, len: usize) -> Result<Mat<f64>> {
    let j0 = params.j0()?;
    if len < 2 {
        return Err(Error::Param(format!("chain length {len} is below 2")));
    }
    let mut h = Mat::<f64>::zeros(len, len);
    for i in 0..len {
        let end = i == 0 || i == len - 1;
        h[(i, i)] = -2.0 * params.u - if end { j0 } else { 2.0 * j0 } - if end { params.v } else { 0.0 };
    }
    for i in 0..len - 1 {
        // 0-based `i` even is the 1-based odd site `2x − 1`.
        let hop = if i % 2 == 0 { -(j0 + params.p) } else { -j0 };
        h[(i, i + 1)] = hop;
        h[(i + 1, i)] = hop;
    }
    Ok(h)
}

/// Ascending eigenvalues and orthonormal eigenvectors (columns) of the chain.
pub fn chain_spectrum(params: &ModelParams, len: usize) -> Result<(Vec<f64>, Mat<f64>)> {
    let h = build_h_1d(params, len)?;
    let evd = h
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Solver(format!("chain decomposition failed: {e:?}")))?;
    let s = evd.S().column_vector();
    let values = (0..len).map(|i| s[i]).collect();
    Ok((values, evd.U().to_owned()))
}

/// One branch of the right-edge solution `β_{2x−1} = z^x`, `β_{2x} = r·z^x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeBranch {
    pub energy: f64,
    /// Cell-to-cell ratio `z = ζ²`, signed.
    pub zeta2: f64,
    pub zeta2_abs: f64,
    /// `|ζ²| > 1`, i.e. the profile decays away from the right end.
    pub localized: bool,
    /// Even-to-odd amplitude ratio `φ_B/φ_A = −J0/(J0 + P)` within a cell.
    pub phi_ratio: f64,
}

impl EdgeBranch {
    /// Unnormalized profile on an odd-length chain with `β_L = 1`.
    pub fn profile(&self, len: usize) -> Vec<f64> {
        let last_cell = (len + 1) / 2;
        (1..=len)
            .map(|i| {
                let cell = (i + 1) / 2;
                let base = self.zeta2.powi(cell as i32 - last_cell as i32);
                if i % 2 == 1 { base } else { self.phi_ratio * base }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeSolution {
    pub j0: f64,
    pub plus: EdgeBranch,
    pub minus: EdgeBranch,
    /// `ε₋` is present unless `P > 0` or `P < −2J²/U`.
    pub exists_minus: bool,
}

/// Right-edge eigenstates of the semi-infinite chain in closed form.
///
/// With `Q = J0 + P`, `S = 2J0·P + P²` and `R = √(S² + 4J0⁴)`, the energies are
/// `ε± = −J0 − 2U + (S ∓ R)/(2J0)` and the decay ratios `ζ²± = −(S ± R)/(2J0·Q)`.
pub fn analytic_edge(params: &ModelParams) -> Result<EdgeSolution> {
    params.validate()?;
    let j0 = params.j0()?;
    let q = j0 + params.p;
    if j0 == 0.0 || q == 0.0 {
        return Err(Error::Param(format!("edge solution is singular: J0 = {j0}, J0 + P = {q}")));
    }
    let p = params.p;
    let s = 2.0 * j0 * p + p * p;
    let r = (s * s + 4.0 * j0.powi(4)).sqrt();
    let branch = |sign: f64| {
        let energy = -j0 - 2.0 * params.u + (s - sign * r) / (2.0 * j0);
        let zeta2 = -(s + sign * r) / (2.0 * j0 * q);
        EdgeBranch { energy, zeta2, zeta2_abs: zeta2.abs(), localized: zeta2.abs() > 1.0, phi_ratio: -j0 / q }
    };
    Ok(EdgeSolution {
        j0,
        plus: branch(1.0),
        minus: branch(-1.0),
        exists_minus: !(p > 0.0 || p < -2.0 * j0),
    })
}

/// Optimal one-to-one matching of two spectra.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MismatchReport {
    /// `(index in full, index in eff, |ΔE|)`.
    pub pairs: Vec<(usize, usize, f64)>,
    pub max: f64,
    pub mean: f64,
    pub unmatched_full: Vec<usize>,
    pub unmatched_eff: Vec<usize>,
}

/// Minimum-total-distance matching; surplus states on the larger side stay unmatched.
pub fn compare_spectra(full: &[Complex64], eff: &[Complex64]) -> MismatchReport {
    let transpose = full.len() > eff.len();
    let (rows, cols) = if transpose { (eff, full) } else { (full, eff) };
    let cost: Vec<Vec<f64>> = rows.iter().map(|a| cols.iter().map(|b| (a - b).norm()).collect()).collect();
    let assign = hungarian(&cost);
    let mut pairs: Vec<(usize, usize, f64)> = assign
        .iter()
        .enumerate()
        .map(|(i, &j)| if transpose { (j, i, cost[i][j]) } else { (i, j, cost[i][j]) })
        .collect();
    pairs.sort_by_key(|p| p.0);
    let max = pairs.iter().map(|p| p.2).fold(0.0, f64::max);
    let mean = if pairs.is_empty() { 0.0 } else { pairs.iter().map(|p| p.2).sum::<f64>() / pairs.len() as f64 };
    let used_full: std::collections::HashSet<usize> = pairs.iter().map(|p| p.0).collect();
    let used_eff: std::collections::HashSet<usize> = pairs.iter().map(|p| p.1).collect();
    MismatchReport {
        unmatched_full: (0..full.len()).filter(|i| !used_full.contains(i)).collect(),
        unmatched_eff: (0..eff.len()).filter(|i| !used_eff.contains(i)).collect(),
        pairs,
        max,
        mean,
    }
}

/// Rectangular assignment with `rows ≤ cols` by shortest augmenting paths with potentials.
/// Returns the column assigned to each row.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    let m = cost[0].len();
    assert!(n <= m, "more rows than columns");
    let inf = f64::INFINITY;
    // 1-based with a virtual column 0.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0usize; n];
    for j in 1..=m {
        if owner[j] != 0 {
            assign[owner[j] - 1] = j - 1;
        }
    }
    assign
}
