//! Per-state densities, doublon character, corner weight and classification.

use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::FockBasis;
use crate::eigen::EigenSolution;
use crate::error::{Error, Result};
use crate::fmt::format_g;
use crate::model::LatticeSpec;
use crate::topology::GapWindow;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    NDensity,
    MDensity,
}

/// Real field on the lattice, stored in site order (row-major, x fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct ObservableGrid {
    pub lx: usize,
    pub ly: usize,
    pub kind: GridKind,
    pub values: Vec<f64>,
}

impl ObservableGrid {
    pub fn new(lx: usize, ly: usize, kind: GridKind, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), lx * ly);
        ObservableGrid { lx, ly, kind, values }
    }

    /// Value at 1-based `(x, y)`.
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[(y - 1) * self.lx + (x - 1)]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Share of the total inside the inclusive 1-based box.
    pub fn fraction_in(&self, xs: std::ops::RangeInclusive<usize>, ys: std::ops::RangeInclusive<usize>) -> f64 {
        let total = self.sum();
        if total == 0.0 {
            return 0.0;
        }
        let mut part = 0.0;
        for y in ys {
            for x in xs.clone() {
                if (1..=self.lx).contains(&x) && (1..=self.ly).contains(&y) {
                    part += self.get(x, y);
                }
            }
        }
        part / total
    }

    /// Share in the `size × size` block at the largest `x` and `y`.
    pub fn top_right_fraction(&self, size: usize) -> f64 {
        self.fraction_in(
            self.lx.saturating_sub(size - 1).max(1)..=self.lx,
            self.ly.saturating_sub(size - 1).max(1)..=self.ly,
        )
    }

    /// Share in the `width` columns at the largest `x`.
    pub fn right_columns_fraction(&self, width: usize) -> f64 {
        self.fraction_in(self.lx.saturating_sub(width - 1).max(1)..=self.lx, 1..=self.ly)
    }

    /// `x,y,value` header, then one line per site in row-major order.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "x,y,value")?;
        for y in 1..=self.ly {
            for x in 1..=self.lx {
                writeln!(out, "{x},{y},{}", format_g(self.get(x, y), 12))?;
            }
        }
        Ok(())
    }
}

fn check_dim(state: &[Complex64], basis: &FockBasis) -> Result<()> {
    if state.len() != basis.dim() {
        return Err(Error::DimensionMismatch { expected: basis.dim(), got: state.len() });
    }
    Ok(())
}

fn check_lattice(basis: &FockBasis, lattice: &LatticeSpec) -> Result<()> {
    if basis.sites() != lattice.num_sites() {
        return Err(Error::DimensionMismatch { expected: lattice.num_sites(), got: basis.sites() });
    }
    Ok(())
}

/// `Σ_k |ψ_k|² f(occupation of state k)` per site, with `ψ` normalized.
fn site_expectation(state: &[Complex64], basis: &FockBasis, f: impl Fn(u8) -> f64) -> Vec<f64> {
    let norm: f64 = state.iter().map(|z| z.norm_sqr()).sum();
    let mut out = vec![0.0; basis.sites()];
    if norm == 0.0 {
        return out;
    }
    for (amp, s) in state.iter().zip(basis.states()) {
        let p = amp.norm_sqr() / norm;
        if p == 0.0 {
            continue;
        }
        for (r, &n) in s.occupations.iter().enumerate() {
            if n > 0 {
                out[r] += p * f(n);
            }
        }
    }
    out
}

/// `⟨n̂_{x,y}⟩` in the right eigenvector.
pub fn density_n(state: &[Complex64], basis: &FockBasis, lattice: &LatticeSpec) -> Result<ObservableGrid> {
    check_dim(state, basis)?;
    check_lattice(basis, lattice)?;
    let values = site_expectation(state, basis, |n| n as f64);
    Ok(ObservableGrid::new(lattice.lx, lattice.ly, GridKind::NDensity, values))
}

/// `⟨a†a†aa⟩ = ⟨n(n − 1)⟩` in the right eigenvector.
pub fn density_m(state: &[Complex64], basis: &FockBasis, lattice: &LatticeSpec) -> Result<ObservableGrid> {
    check_dim(state, basis)?;
    check_lattice(basis, lattice)?;
    let values = site_expectation(state, basis, |n| {
        let n = n as f64;
        n * (n - 1.0)
    });
    Ok(ObservableGrid::new(lattice.lx, lattice.ly, GridKind::MDensity, values))
}

/// Probability of double occupancy, `Σ_r ⟨m̂_r⟩ / 2`, for two bosons.
pub fn doublon_weight(state: &[Complex64], basis: &FockBasis) -> Result<f64> {
    check_dim(state, basis)?;
    if basis.particles() != 2 {
        return Err(Error::Param(format!("doublon weight needs N = 2, basis has N = {}", basis.particles())));
    }
    let norm: f64 = state.iter().map(|z| z.norm_sqr()).sum();
    if norm == 0.0 {
        return Ok(0.0);
    }
    let w: f64 = state
        .iter()
        .zip(basis.states())
        .filter(|(_, s)| s.occupations.contains(&2))
        .map(|(a, _)| a.norm_sqr())
        .sum();
    Ok((w / norm).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Euclidean,
    Manhattan,
}

/// `w = ½ Σ_r Σ_corners |⟨n_r⟩|² e^{−|r − r_c|/ξ}`.
pub fn corner_weight(grid: &ObservableGrid, xi: f64) -> Result<f64> {
    corner_weight_with(grid, xi, Metric::Euclidean)
}

pub fn corner_weight_with(grid: &ObservableGrid, xi: f64, metric: Metric) -> Result<f64> {
    if !(xi > 0.0) {
        return Err(Error::Param(format!("corner length xi = {xi} must be positive")));
    }
    let corners = [(1, 1), (grid.lx, 1), (1, grid.ly), (grid.lx, grid.ly)];
    let mut w = 0.0;
    for y in 1..=grid.ly {
        for x in 1..=grid.lx {
            let n2 = grid.get(x, y).powi(2);
            if n2 == 0.0 {
                continue;
            }
            for &(cx, cy) in &corners {
                let dx = x.abs_diff(cx) as f64;
                let dy = y.abs_diff(cy) as f64;
                let d = match metric {
                    Metric::Euclidean => dx.hypot(dy),
                    Metric::Manhattan => dx + dy,
                };
                w += n2 * (-d / xi).exp();
            }
        }
    }
    Ok(0.5 * w)
}

/// `Σ_r p_r²` with `p_r = ⟨n_r⟩ / Σ⟨n⟩`.
pub fn ipr(grid: &ObservableGrid) -> f64 {
    let total = grid.sum();
    if total == 0.0 {
        return 0.0;
    }
    grid.values.iter().map(|v| (v / total).powi(2)).sum()
}

/// Classification thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    /// Minimum doublon weight of a doublon state.
    pub doublon: f64,
    /// Minimum corner weight of a corner mode.
    pub corner: f64,
    pub xi: f64,
    pub metric: Metric,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { doublon: 0.5, corner: 0.25, xi: 1.0, metric: Metric::Euclidean }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateClass {
    Scattering,
    DoublonBulk,
    InGapEdge,
    InGapCorner,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateRecord {
    /// Position in the solution's (sorted) pair list.
    pub index: usize,
    pub energy: Complex64,
    pub doublon_weight: f64,
    pub corner_weight: f64,
    pub ipr: f64,
    pub class: StateClass,
}

/// Decision rule shared by every caller; depends only on the listed quantities.
pub fn class_of(
    energy: Complex64,
    doublon_weight: f64,
    corner_weight: f64,
    gap: Option<&GapWindow>,
    full_open: bool,
    thresholds: &Thresholds,
) -> StateClass {
    if doublon_weight < thresholds.doublon {
        return StateClass::Scattering;
    }
    match gap {
        Some(g) if g.contains(energy) => {
            if full_open && corner_weight >= thresholds.corner {
                StateClass::InGapCorner
            } else {
                StateClass::InGapEdge
            }
        }
        _ => StateClass::DoublonBulk,
    }
}

/// One record per eigenpair, in solution order.
pub fn classify(
    solution: &EigenSolution,
    basis: &FockBasis,
    lattice: &LatticeSpec,
    gap: Option<&GapWindow>,
    thresholds: &Thresholds,
) -> Result<Vec<StateRecord>> {
    let full_open = lattice.is_full_open();
    solution
        .eigenvalues
        .par_iter()
        .zip(solution.vectors.par_iter())
        .enumerate()
        .map(|(index, (&energy, v))| {
            let dw = doublon_weight(v, basis)?;
            let grid = density_n(v, basis, lattice)?;
            let w = corner_weight_with(&grid, thresholds.xi, thresholds.metric)?;
            Ok(StateRecord {
                index,
                energy,
                doublon_weight: dw,
                corner_weight: w,
                ipr: ipr(&grid),
                class: class_of(energy, dw, w, gap, full_open, thresholds),
            })
        })
        .collect()
}

/// Corner-mode count for one lattice height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub ly: usize,
    pub n_corner: usize,
}

/// `N_c(L_y)` with a least-squares line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingResult {
    pub lx: usize,
    pub rows: Vec<ScalingRow>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

impl ScalingResult {
    pub fn from_rows(lx: usize, rows: Vec<ScalingRow>) -> Self {
        let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.ly as f64, r.n_corner as f64)).collect();
        let (slope, intercept, r_squared) = linear_fit(&pts);
        ScalingResult { lx, rows, slope, intercept, r_squared }
    }

    pub fn strictly_increasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].n_corner > w[0].n_corner)
    }
}

/// Ordinary least squares `y = a x + b` and its `R²`. A constant series has `R² = 1`
/// when it is fitted exactly.
pub fn linear_fit(pts: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = pts.len() as f64;
    if pts.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let ss_res: f64 = pts.iter().map(|p| (p.1 - slope * p.0 - intercept).powi(2)).sum();
    let r2 = if syy > 0.0 { 1.0 - ss_res / syy } else if ss_res == 0.0 { 1.0 } else { 0.0 };
    (slope, intercept, r2)
}

/// Counts full-OBC corner modes at fixed odd `L_x` for each `L_y`.
pub fn count_corner_modes(
    params: &crate::model::ModelParams,
    lx: usize,
    ly_list: &[usize],
    solver: &crate::pipeline::SolverConfig,
    thresholds: &Thresholds,
) -> Result<ScalingResult> {
    let mut rows = Vec::with_capacity(ly_list.len());
    for &ly in ly_list {
        let n_corner = crate::pipeline::corner_mode_count(params, lx, ly, solver, thresholds).map_err(|e| {
            log::error!("corner-mode count failed at Ly = {ly}: {e}");
            e
        })?;
        rows.push(ScalingRow { ly, n_corner });
    }
    Ok(ScalingResult::from_rows(lx, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Boundary;

    fn unit(dim: usize, k: usize) -> Vec<Complex64> {
        let mut v = vec![Complex64::new(0.0, 0.0); dim];
        v[k] = Complex64::new(1.0, 0.0);
        v
    }

    fn setup() -> (LatticeSpec, FockBasis) {
        (LatticeSpec::new(3, 2, Boundary::Open, Boundary::Open).unwrap(), FockBasis::new(6, 2).unwrap())
    }

    #[test]
    fn doublon_basis_state_densities() {
        let (l, b) = setup();
        let site = l.site(2, 2);
        let v = unit(b.dim(), b.condensed_index(site).unwrap());
        let n = density_n(&v, &b, &l).unwrap();
        let m = density_m(&v, &b, &l).unwrap();
        assert_eq!(n.get(2, 2), 2.0);
        assert_eq!(n.sum(), 2.0);
        assert_eq!(m.get(2, 2), 2.0);
        assert_eq!(doublon_weight(&v, &b).unwrap(), 1.0);
    }

    #[test]
    fn superposition_and_scattering_states() {
        let (l, b) = setup();
        let mut v = vec![Complex64::new(0.0, 0.0); b.dim()];
        v[b.condensed_index(0).unwrap()] = Complex64::new(1.0, 0.0);
        v[b.condensed_index(5).unwrap()] = Complex64::new(0.0, -1.0);
        let n = density_n(&v, &b, &l).unwrap();
        assert!((n.values[0] - 1.0).abs() < 1e-15 && (n.values[5] - 1.0).abs() < 1e-15);
        let s = unit(b.dim(), b.index_of(&[1, 0, 0, 0, 0, 1]).unwrap());
        assert!(density_m(&s, &b, &l).unwrap().values.iter().all(|&x| x == 0.0));
        assert_eq!(doublon_weight(&s, &b).unwrap(), 0.0);
        let b3 = FockBasis::new(6, 3).unwrap();
        assert!(doublon_weight(&unit(b3.dim(), 0), &b3).is_err());
        assert!(density_n(&unit(3, 0), &b, &l).is_err());
    }

    #[test]
    fn corner_weight_reference_values() {
        let mut vals = vec![0.0; 64];
        vals[63] = 2.0;
        let g = ObservableGrid::new(8, 8, GridKind::NDensity, vals);
        // ½·4·(1 + e^{-7} + e^{-7} + e^{-7√2}).
        let want = 2.0 * (1.0 + 2.0 * (-7f64).exp() + (-7.0 * 2f64.sqrt()).exp());
        assert!((corner_weight(&g, 1.0).unwrap() - want).abs() < 1e-14);
        assert!((corner_weight(&g, 1.0).unwrap() - 2.0).abs() < 0.01);
        let uniform = ObservableGrid::new(8, 8, GridKind::NDensity, vec![2.0 / 64.0; 64]);
        assert!(corner_weight(&uniform, 1.0).unwrap() < 0.01);
        let zero = ObservableGrid::new(8, 8, GridKind::NDensity, vec![0.0; 64]);
        assert_eq!(corner_weight(&zero, 1.0).unwrap(), 0.0);
        assert!(corner_weight(&zero, 0.0).is_err());
        let manhattan = corner_weight_with(&g, 1.0, Metric::Manhattan).unwrap();
        assert!((manhattan - 2.0 * (1.0 + 2.0 * (-7f64).exp() + (-14f64).exp())).abs() < 1e-14);
    }

    #[test]
    fn ipr_limits() {
        let mut vals = vec![0.0; 12];
        vals[4] = 2.0;
        assert_eq!(ipr(&ObservableGrid::new(4, 3, GridKind::NDensity, vals)), 1.0);
        let u = ObservableGrid::new(4, 3, GridKind::NDensity, vec![1.0 / 6.0; 12]);
        assert!((ipr(&u) - 1.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn csv_layout() {
        let g = ObservableGrid::new(2, 2, GridKind::NDensity, vec![0.5, 1.0 / 3.0, 0.0, 1e-20]);
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "x,y,value\n1,1,0.5\n2,1,0.333333333333\n1,2,0\n2,2,1e-20\n"
        );
    }

    #[test]
    fn class_rule() {
        let gap = GapWindow { re_min: -19.0, re_max: -13.0, im_min: -1.0, im_max: 1.0 };
        let t = Thresholds::default();
        let e_in = Complex64::new(-16.0, 0.01);
        let e_out = Complex64::new(-20.0, 0.0);
        assert_eq!(class_of(Complex64::new(0.0, 0.0), 0.01, 0.0, Some(&gap), true, &t), StateClass::Scattering);
        assert_eq!(class_of(e_out, 0.99, 2.0, Some(&gap), true, &t), StateClass::DoublonBulk);
        assert_eq!(class_of(e_in, 0.99, 2.0, Some(&gap), true, &t), StateClass::InGapCorner);
        assert_eq!(class_of(e_in, 0.99, 0.1, Some(&gap), true, &t), StateClass::InGapEdge);
        assert_eq!(class_of(e_in, 0.99, 2.0, Some(&gap), false, &t), StateClass::InGapEdge);
        assert_eq!(class_of(e_in, 0.99, 2.0, None, true, &t), StateClass::DoublonBulk);
    }

    #[test]
    fn fit_of_exact_line() {
        let (a, b, r2) = linear_fit(&[(4.0, 4.0), (6.0, 6.0), (8.0, 8.0), (10.0, 10.0)]);
        assert!((a - 1.0).abs() < 1e-14 && b.abs() < 1e-12 && (r2 - 1.0).abs() < 1e-14);
        let (_, _, r2) = linear_fit(&[(4.0, 0.0), (6.0, 0.0)]);
        assert_eq!(r2, 1.0);
    }
}
