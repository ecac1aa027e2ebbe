//! Doublon gap window and the many-body winding number over a twisted y boundary.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::FockBasis;
use crate::error::{Error, Result};
use crate::hamiltonian::assemble;
use crate::lu::ShiftedLu;
use crate::model::{Boundary, DisorderRealization, LatticeSpec, ModelParams};

/// Minimum ratio of the largest level spacing to the mean spacing for a gap to count.
pub const GAP_SIGNIFICANCE: f64 = 5.0;
/// Fraction of the gap trimmed from each side of the window.
pub const GAP_PADDING: f64 = 0.05;

/// Rectangle in the complex plane between two doublon bands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapWindow {
    pub re_min: f64,
    pub re_max: f64,
    pub im_min: f64,
    pub im_max: f64,
}

impl GapWindow {
    pub fn contains(&self, e: Complex64) -> bool {
        const SLACK: f64 = 1e-9;
        e.re > self.re_min && e.re < self.re_max && e.im >= self.im_min - SLACK && e.im <= self.im_max + SLACK
    }

    pub fn center(&self) -> Complex64 {
        Complex64::new(0.5 * (self.re_min + self.re_max), 0.5 * (self.im_min + self.im_max))
    }

    pub fn width(&self) -> f64 {
        self.re_max - self.re_min
    }
}

/// Window around the widest real-part spacing of `energies`.
///
/// The imaginary extent covers the bands and at least half the padded real width on each
/// side of the real axis.
pub fn gap_window_from_energies(energies: &[Complex64]) -> Result<GapWindow> {
    if energies.len() < 3 {
        return Err(Error::NoGap { gap: 0.0, required: f64::INFINITY });
    }
    let mut re: Vec<f64> = energies.iter().map(|e| e.re).collect();
    re.sort_by(f64::total_cmp);
    let (mut gap, mut at) = (f64::NEG_INFINITY, 0);
    for (i, w) in re.windows(2).enumerate() {
        if w[1] - w[0] > gap {
            gap = w[1] - w[0];
            at = i;
        }
    }
    let mean = (re[re.len() - 1] - re[0]) / (re.len() - 1) as f64;
    let required = GAP_SIGNIFICANCE * mean;
    if !(gap >= required) || gap <= 0.0 {
        return Err(Error::NoGap { gap, required });
    }
    let (re_min, re_max) = (re[at] + GAP_PADDING * gap, re[at + 1] - GAP_PADDING * gap);
    let half = 0.5 * (re_max - re_min);
    let im_min = energies.iter().map(|e| e.im).fold(-half, f64::min);
    let im_max = energies.iter().map(|e| e.im).fold(half, f64::max);
    Ok(GapWindow { re_min, re_max, im_min, im_max })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindingResult {
    pub e_ref: Complex64,
    pub winding: i64,
    /// Number of twist samples after refinement.
    pub phi_grid: usize,
    /// Largest unwrapped phase step, radians.
    pub max_step_phase: f64,
    pub refined: bool,
    pub accumulated_phase: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindingOptions {
    pub n_phi: usize,
    pub max_n_phi: usize,
    /// Traverse the twist loop from 2π down to 0.
    pub reverse: bool,
    /// Smallest admissible LU pivot relative to `‖H‖_F`.
    pub pivot_floor: f64,
}

impl Default for WindingOptions {
    fn default() -> Self {
        WindingOptions { n_phi: 64, max_n_phi: 1024, reverse: false, pivot_floor: 1e-10 }
    }
}

/// Phase of `det(H(φ) − E_ref)` on an ever finer twist grid.
pub fn winding_number(params: &ModelParams, lattice: &LatticeSpec, e_ref: Complex64, n_phi: usize) -> Result<WindingResult> {
    winding_number_with(params, lattice, None, e_ref, &WindingOptions { n_phi, ..Default::default() })
}

pub fn winding_number_with(
    params: &ModelParams,
    lattice: &LatticeSpec,
    disorder: Option<&DisorderRealization>,
    e_ref: Complex64,
    opts: &WindingOptions,
) -> Result<WindingResult> {
    if !lattice.bc_y.wraps() {
        return Err(Error::Lattice("winding needs a periodic or twisted y boundary".into()));
    }
    if opts.n_phi < 2 || opts.max_n_phi < opts.n_phi {
        return Err(Error::Param(format!("twist grid {} (cap {}) is too small", opts.n_phi, opts.max_n_phi)));
    }
    let basis = FockBasis::new(lattice.num_sites(), params.n_particles)?;
    let sign = if opts.reverse { -1.0 } else { 1.0 };
    let phase_at = |phi: f64| -> Result<f64> {
        let twisted = lattice.with_bc_y(Boundary::Twisted(phi))?;
        let h = assemble(params, &twisted, &basis, disorder)?;
        let floor = opts.pivot_floor * h.frobenius_norm();
        let lu = ShiftedLu::factor(&h, e_ref).map_err(|_| Error::NearSpectrum { distance: 0.0 })?;
        let ld = lu.log_det();
        if !(ld.min_pivot > floor) {
            return Err(Error::NearSpectrum { distance: ld.min_pivot });
        }
        Ok(ld.phase)
    };

    let mut n = opts.n_phi;
    let mut phases: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|k| phase_at(sign * TAU * k as f64 / n as f64))
        .collect::<Result<_>>()?;
    let mut refined = false;
    loop {
        let steps: Vec<f64> = (0..n).map(|k| wrap(phases[(k + 1) % n] - phases[k])).collect();
        let max_step = steps.iter().map(|s| s.abs()).fold(0.0, f64::max);
        if max_step < PI / 2.0 {
            let accumulated: f64 = steps.iter().sum();
            let winding = (accumulated / TAU).round() as i64;
            return Ok(WindingResult {
                e_ref,
                winding,
                phi_grid: n,
                max_step_phase: max_step,
                refined,
                accumulated_phase: accumulated,
            });
        }
        if 2 * n > opts.max_n_phi {
            return Err(Error::Aliasing { n_phi: n });
        }
        let fresh: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|k| phase_at(sign * TAU * (2 * k + 1) as f64 / (2 * n) as f64))
            .collect::<Result<_>>()?;
        phases = phases.into_iter().zip(fresh).flat_map(|(a, b)| [a, b]).collect();
        n *= 2;
        refined = true;
    }
}

/// Maps an angle difference into `(−π, π]`.
fn wrap(d: f64) -> f64 {
    let r = d.rem_euclid(TAU);
    if r > PI { r - TAU } else { r }
}

/// `winding ≠ 0` for each energy in the x-open, y-twisted system.
pub fn enclosure_check(
    corner_energies: &[Complex64],
    params: &ModelParams,
    lattice: &LatticeSpec,
    opts: &WindingOptions,
) -> Result<Vec<bool>> {
    corner_energies
        .iter()
        .map(|&e| winding_number_with(params, lattice, None, e, opts).map(|w| w.winding != 0))
        .collect()
}
