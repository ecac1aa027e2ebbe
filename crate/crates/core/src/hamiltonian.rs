//! Assembly of the full many-body Hamiltonian.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::basis::{hop_in_place, pair_hop_in_place, FockBasis};
use crate::error::{Error, Result};
use crate::model::{DisorderRealization, EdgePotential, LatticeSpec, ModelParams, YDirection};
use crate::sparse::SparseComplexMatrix;

/// Builds `H + H_dis` in `basis`.
///
/// Hops crossing a twisted boundary pick up `e^{iφ}` when moving in the positive direction
/// and `e^{−iφ}` when moving in the negative direction, so the twist is a uniform gauge field.
pub fn assemble(
    params: &ModelParams,
    lattice: &LatticeSpec,
    basis: &FockBasis,
    disorder: Option<&DisorderRealization>,
) -> Result<SparseComplexMatrix> {
    params.validate()?;
    if basis.sites() != lattice.num_sites() {
        return Err(Error::DimensionMismatch { expected: lattice.num_sites(), got: basis.sites() });
    }
    if basis.particles() != params.n_particles {
        return Err(Error::DimensionMismatch { expected: params.n_particles, got: basis.particles() });
    }
    if let Some(d) = disorder {
        d.check_shape(lattice)?;
    }
    let terms = Terms::new(params, lattice, disorder);
    let columns: Vec<Vec<(usize, Complex64)>> = (0..basis.dim())
        .into_par_iter()
        .map(|k| terms.apply(basis, k))
        .collect();
    let mut triplets = Vec::with_capacity(columns.iter().map(Vec::len).sum());
    for (k, col) in columns.into_iter().enumerate() {
        triplets.extend(col.into_iter().map(|(r, v)| (r, k, v)));
    }
    SparseComplexMatrix::from_triplets(basis.dim(), triplets)
}

struct Hop {
    from: usize,
    to: usize,
    amp: Complex64,
}

/// Bond list flattened into one-body and pair moves with final amplitudes.
struct Terms {
    hops: Vec<Hop>,
    pairs: Vec<Hop>,
    onsite_pair: Vec<f64>,
    onsite_single: Vec<f64>,
}

impl Terms {
    fn new(params: &ModelParams, lattice: &LatticeSpec, disorder: Option<&DisorderRealization>) -> Self {
        let m = lattice.num_sites();
        let phase = |angle: f64| Complex64::from_polar(1.0, angle);
        let mut hops = Vec::new();
        let phi_x = lattice.bc_x.twist();
        for (b, bond) in lattice.x_bonds.iter().enumerate() {
            let j = params.j + disorder.map_or(0.0, |d| d.x_amplitude(b, bond));
            let theta = if bond.wraps { phi_x } else { 0.0 };
            hops.push(Hop { from: bond.left, to: bond.right, amp: -j * phase(theta) });
            hops.push(Hop { from: bond.right, to: bond.left, amp: -j * phase(-theta) });
        }
        let phi_y = lattice.bc_y.twist();
        for (b, bond) in lattice.y_bonds.iter().enumerate() {
            let t = params.t + disorder.map_or(0.0, |d| d.y_amplitude(b, bond));
            let theta = match (bond.wraps, bond.direction) {
                (false, _) => 0.0,
                (true, YDirection::Up) => phi_y,
                (true, YDirection::Down) => -phi_y,
            };
            hops.push(Hop { from: bond.source, to: bond.target, amp: Complex64::new(0.0, -t) * phase(theta) });
        }
        let mut pairs = Vec::new();
        for (b, bond) in lattice.pair_bonds.iter().enumerate() {
            let p = 0.5 * params.p + disorder.map_or(0.0, |d| d.pair_amplitude(b, bond));
            let amp = Complex64::new(-p, 0.0);
            pairs.push(Hop { from: bond.even, to: bond.odd, amp });
            pairs.push(Hop { from: bond.odd, to: bond.even, amp });
        }
        let mut onsite_pair = vec![-params.u; m];
        let mut onsite_single = vec![0.0; m];
        for site in 0..m {
            let (x, _) = lattice.coords(site);
            if lattice.is_edge_column(x) {
                match params.edge_potential {
                    EdgePotential::TwoBody => onsite_pair[site] -= 0.5 * params.v,
                    EdgePotential::SingleParticle => onsite_single[site] -= 0.5 * params.v,
                }
            }
        }
        hops.retain(|h| h.amp != Complex64::new(0.0, 0.0));
        pairs.retain(|h| h.amp != Complex64::new(0.0, 0.0));
        Terms { hops, pairs, onsite_pair, onsite_single }
    }

    /// Nonzeros of column `k`, i.e. `H|k⟩`.
    fn apply(&self, basis: &FockBasis, k: usize) -> Vec<(usize, Complex64)> {
        let occ = &basis.state(k).occupations;
        let mut out = Vec::new();
        let diag: f64 = occ
            .iter()
            .enumerate()
            .map(|(r, &n)| {
                let n = n as f64;
                self.onsite_pair[r] * n * (n - 1.0) + self.onsite_single[r] * n
            })
            .sum();
        if diag != 0.0 {
            out.push((k, Complex64::new(diag, 0.0)));
        }
        let mut work = occ.clone();
        for h in &self.hops {
            if let Some(c) = hop_in_place(&mut work, h.to, h.from) {
                let target = basis.index_of(&work).expect("hop preserves N");
                out.push((target, h.amp * c));
                work.copy_from_slice(occ);
            }
        }
        for h in &self.pairs {
            if let Some(c) = pair_hop_in_place(&mut work, h.to, h.from) {
                let target = basis.index_of(&work).expect("pair hop preserves N");
                out.push((target, h.amp * c));
                work.copy_from_slice(occ);
            }
        }
        out
    }
}
