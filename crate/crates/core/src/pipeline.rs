//! Solve-and-classify steps shared by the experiments.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::basis::FockBasis;
use crate::eigen::{eig_dense, eig_targeted_with, EigenSolution, TargetedOptions};
use crate::error::{Error, Result};
use crate::hamiltonian::assemble;
use crate::model::{Boundary, DisorderRealization, LatticeSpec, ModelParams};
use crate::observables::{classify, doublon_weight, StateClass, StateRecord, Thresholds};
use crate::sparse::SparseComplexMatrix;
use crate::topology::{gap_window_from_energies, GapWindow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMode {
    Dense,
    Targeted,
    /// Dense up to `dense_max`, targeted above.
    #[default]
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub mode: SolverMode,
    pub dense_max: usize,
    /// Shift for targeted solves; defaults to the doublon band center `−2U − 2J²/U`.
    pub sigma: Option<[f64; 2]>,
    /// Pairs for targeted solves; defaults to the number of sites.
    pub k: Option<usize>,
    pub targeted: TargetedOptions,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { mode: SolverMode::Auto, dense_max: 1000, sigma: None, k: None, targeted: TargetedOptions::default() }
    }
}

impl SolverConfig {
    pub fn dense() -> Self {
        SolverConfig { mode: SolverMode::Dense, ..Default::default() }
    }

    pub fn targeted() -> Self {
        SolverConfig { mode: SolverMode::Targeted, ..Default::default() }
    }
}

/// Basis, matrix and eigenpairs of one model instance.
#[derive(Debug, Clone)]
pub struct Sector {
    pub lattice: LatticeSpec,
    pub basis: FockBasis,
    pub matrix: SparseComplexMatrix,
    pub solution: EigenSolution,
}

pub fn solve_model(
    params: &ModelParams,
    lattice: &LatticeSpec,
    disorder: Option<&DisorderRealization>,
    solver: &SolverConfig,
) -> Result<Sector> {
    let basis = FockBasis::new(lattice.num_sites(), params.n_particles)?;
    let matrix = assemble(params, lattice, &basis, disorder)?;
    let solution = solve_matrix(&matrix, params, lattice.num_sites(), solver)?;
    Ok(Sector { lattice: lattice.clone(), basis, matrix, solution })
}

pub fn solve_matrix(
    h: &SparseComplexMatrix,
    params: &ModelParams,
    sites: usize,
    solver: &SolverConfig,
) -> Result<EigenSolution> {
    let dense = match solver.mode {
        SolverMode::Dense => true,
        SolverMode::Targeted => false,
        SolverMode::Auto => h.dim() <= solver.dense_max,
    };
    if dense {
        return eig_dense(h);
    }
    let sigma = solver.sigma.map_or(Complex64::new(params.doublon_center(), 0.0), |s| Complex64::new(s[0], s[1]));
    let k = solver.k.unwrap_or(sites).min(h.dim());
    eig_targeted_with(h, sigma, k, &solver.targeted)
}

/// Energies of states whose doublon weight reaches the threshold.
pub fn doublon_energies(sector: &Sector, thresholds: &Thresholds) -> Result<Vec<Complex64>> {
    let mut out = Vec::new();
    for (e, v) in sector.solution.eigenvalues.iter().zip(&sector.solution.vectors) {
        if doublon_weight(v, &sector.basis)? >= thresholds.doublon {
            out.push(*e);
        }
    }
    Ok(out)
}

/// Even width used for the periodic reference of an `lx`-wide lattice.
pub fn reference_width(lx: usize) -> usize {
    if lx % 2 == 0 { lx } else { lx - 1 }
}

/// Gap window from the clean, fully periodic reference with `V = 0`.
pub fn reference_gap_window(
    params: &ModelParams,
    lx: usize,
    ly: usize,
    solver: &SolverConfig,
    thresholds: &Thresholds,
) -> Result<GapWindow> {
    let lattice = LatticeSpec::new(reference_width(lx), ly, Boundary::Periodic, Boundary::Periodic)?;
    let clean = params.with_v(0.0);
    let sector = solve_model(&clean, &lattice, None, solver)?;
    gap_window_from_energies(&doublon_energies(&sector, thresholds)?)
}

/// Reference window, or `None` when the reference bands have no gap.
pub fn optional_gap_window(
    params: &ModelParams,
    lx: usize,
    ly: usize,
    solver: &SolverConfig,
    thresholds: &Thresholds,
) -> Result<Option<GapWindow>> {
    match reference_gap_window(params, lx, ly, solver, thresholds) {
        Ok(g) => Ok(Some(g)),
        Err(Error::NoGap { gap, required }) => {
            log::info!("reference bands have no gap (largest spacing {gap:.3e}, needed {required:.3e})");
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

/// Solve plus per-state records.
pub fn classified(
    params: &ModelParams,
    lattice: &LatticeSpec,
    disorder: Option<&DisorderRealization>,
    gap: Option<&GapWindow>,
    solver: &SolverConfig,
    thresholds: &Thresholds,
) -> Result<(Sector, Vec<StateRecord>)> {
    let sector = solve_model(params, lattice, disorder, solver)?;
    let records = classify(&sector.solution, &sector.basis, lattice, gap, thresholds)?;
    Ok((sector, records))
}

pub fn count_class(records: &[StateRecord], class: StateClass) -> usize {
    records.iter().filter(|r| r.class == class).count()
}

/// Full-OBC corner modes of an `lx × ly` lattice, classified against the clean reference gap.
pub fn corner_mode_count(
    params: &ModelParams,
    lx: usize,
    ly: usize,
    solver: &SolverConfig,
    thresholds: &Thresholds,
) -> Result<usize> {
    let Some(gap) = optional_gap_window(params, lx, ly, solver, thresholds)? else {
        return Ok(0);
    };
    let lattice = LatticeSpec::new(lx, ly, Boundary::Open, Boundary::Open)?;
    let (_, records) = classified(params, &lattice, None, Some(&gap), solver, thresholds)?;
    Ok(count_class(&records, StateClass::InGapCorner))
}

/// Centroid of the in-gap edge band of the x-open, y-periodic system.
pub fn default_reference_energy(
    params: &ModelParams,
    lx: usize,
    ly: usize,
    gap: &GapWindow,
    solver: &SolverConfig,
    thresholds: &Thresholds,
) -> Result<Complex64> {
    let lattice = LatticeSpec::new(lx, ly, Boundary::Open, Boundary::Periodic)?;
    let (_, records) = classified(params, &lattice, None, Some(gap), solver, thresholds)?;
    let edge: Vec<Complex64> =
        records.iter().filter(|r| r.class == StateClass::InGapEdge).map(|r| r.energy).collect();
    if edge.is_empty() {
        return Err(Error::NoGap { gap: gap.width(), required: 0.0 });
    }
    Ok(edge.iter().sum::<Complex64>() / edge.len() as f64)
}
