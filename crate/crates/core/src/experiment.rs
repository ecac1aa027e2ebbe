//! Named experiment pipelines, their JSON configuration and the result bundle.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::basis::FockBasis;
use crate::effective::{analytic_edge, build_h_eff, chain_spectrum, compare_spectra, derive_eff_numerically, EdgeBranch};
use crate::eigen::{eig_dense, eigenvalues_dense, SolveMethod, DENSE_TOL};
use crate::error::{Error, Result};
use crate::fmt::round_sig;
use crate::hamiltonian::assemble;
use crate::model::{Boundary, DisorderOptions, DisorderRealization, LatticeSpec, ModelParams};
use crate::observables::{
    corner_weight_with, count_corner_modes, density_m, density_n, GridKind, ObservableGrid, ScalingResult, StateClass,
    StateRecord, Thresholds,
};
use crate::pipeline::{
    classified, count_class, default_reference_energy, doublon_energies, reference_width, solve_model, Sector,
    SolverConfig,
};
use crate::topology::{gap_window_from_energies, winding_number_with, GapWindow, WindingOptions, WindingResult};

pub const SCHEMA_VERSION: u32 = 1;
/// Significant digits of every float written to `result.json`.
pub const OUTPUT_DIGITS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Spectrum,
    Densities,
    Winding,
    Scaling,
    EffectiveCompare,
    EdgeAnalytic,
    DisorderEnsemble,
    PotentialSweep,
    ThreeBody,
    NullTests,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryKind {
    Periodic,
    Open,
    Twisted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    #[serde(rename = "Lx")]
    pub lx: usize,
    #[serde(rename = "Ly")]
    pub ly: usize,
    pub bc_x: BoundaryKind,
    pub bc_y: BoundaryKind,
    /// Radians; applies to every direction marked `twisted`.
    #[serde(default)]
    pub twist: f64,
}

impl LatticeConfig {
    pub fn boundary(&self, kind: BoundaryKind) -> Boundary {
        match kind {
            BoundaryKind::Periodic => Boundary::Periodic,
            BoundaryKind::Open => Boundary::Open,
            BoundaryKind::Twisted => Boundary::Twisted(self.twist),
        }
    }

    pub fn build(&self) -> Result<LatticeSpec> {
        LatticeSpec::new(self.lx, self.ly, self.boundary(self.bc_x), self.boundary(self.bc_y))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisorderConfig {
    #[serde(rename = "W")]
    pub w: f64,
    pub seed: u64,
    #[serde(default)]
    pub layout: crate::model::DisorderLayout,
    #[serde(default)]
    pub pair_scale: crate::model::PairDisorderScale,
}

impl DisorderConfig {
    pub fn options(&self) -> DisorderOptions {
        DisorderOptions { layout: self.layout, pair_scale: self.pair_scale }
    }

    pub fn sample(&self, lattice: &LatticeSpec, seed: u64) -> Result<DisorderRealization> {
        DisorderRealization::sample_with(lattice, self.w, seed, self.options())
    }
}

/// Which states get CSV density grids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridSelection {
    #[default]
    InGap,
    All,
    None,
}

/// Experiment-specific knobs; each is ignored by experiments that do not use it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentOptions {
    pub ly_values: Vec<usize>,
    pub winding: WindingOptions,
    /// Explicit winding reference energies as `[re, im]`.
    pub e_ref: Option<Vec<Complex64>>,
    pub check_refinement: bool,
    pub enclosure: bool,
    pub seeds: usize,
    pub v_values: Option<Vec<f64>>,
    pub u_values: Option<Vec<f64>>,
    pub p_values: Option<Vec<f64>>,
    pub chain_length: usize,
    pub grids: GridSelection,
    /// Side of the top-right patch used for corner fractions.
    pub patch: usize,
    /// Real-part spacing that separates two three-body bands.
    pub band_gap: f64,
    /// Top-right `m` share a corner mode needs to count in a disorder ensemble.
    pub localization: f64,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        ExperimentOptions {
            ly_values: vec![4, 6, 8, 10],
            winding: WindingOptions::default(),
            e_ref: None,
            check_refinement: true,
            enclosure: false,
            seeds: 10,
            v_values: None,
            u_values: None,
            p_values: None,
            chain_length: 41,
            grids: GridSelection::InGap,
            patch: 3,
            band_gap: 0.3,
            localization: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub experiment: ExperimentKind,
    pub lattice: LatticeConfig,
    pub params: ModelParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disorder: Option<DisorderConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub options: ExperimentOptions,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.params.validate()?;
        if !self.lattice.twist.is_finite() {
            return Err(Error::Config(format!("twist {} is not finite", self.lattice.twist)));
        }
        if let Some(d) = &self.disorder {
            if !(d.w.is_finite() && d.w >= 0.0) {
                return Err(Error::Config(format!("disorder strength W = {} must be finite and non-negative", d.w)));
            }
        }
        if self.options.patch == 0 {
            return Err(Error::Config("options.patch must be positive".into()));
        }
        Ok(())
    }

    /// Replaces the disorder seed, creating a `W = 0` block when none is configured.
    pub fn with_seed(mut self, seed: u64) -> Self {
        match &mut self.disorder {
            Some(d) => d.seed = seed,
            None => {
                self.disorder = Some(DisorderConfig {
                    w: 0.0,
                    seed,
                    layout: Default::default(),
                    pair_scale: Default::default(),
                })
            }
        }
        self
    }

    /// Same config with one scalar coupling replaced.
    pub fn with_axis(&self, axis: &str, value: f64) -> Result<Self> {
        let mut c = self.clone();
        c.params = c.params.with_axis(axis, value)?;
        Ok(c)
    }
}

/// Class counts of one spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassCounts {
    pub scattering: usize,
    pub doublon_bulk: usize,
    pub in_gap_edge: usize,
    pub in_gap_corner: usize,
}

impl ClassCounts {
    pub fn of(records: &[StateRecord]) -> Self {
        ClassCounts {
            scattering: count_class(records, StateClass::Scattering),
            doublon_bulk: count_class(records, StateClass::DoublonBulk),
            in_gap_edge: count_class(records, StateClass::InGapEdge),
            in_gap_corner: count_class(records, StateClass::InGapCorner),
        }
    }

    pub fn in_gap(&self) -> usize {
        self.in_gap_edge + self.in_gap_corner
    }
}

/// Location summary of one in-gap state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InGapState {
    pub index: usize,
    pub energy: Complex64,
    pub class: StateClass,
    pub corner_weight: f64,
    /// Share of `n` in the two rightmost columns.
    pub right_columns_n: f64,
    /// Share of `n` in the top-right patch.
    pub patch_n: f64,
    /// Share of `m` in the top-right patch.
    pub patch_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumBlock {
    pub label: String,
    #[serde(rename = "Lx")]
    pub lx: usize,
    #[serde(rename = "Ly")]
    pub ly: usize,
    pub bc_x: Boundary,
    pub bc_y: Boundary,
    pub params: ModelParams,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub disorder_seed: Option<u64>,
    pub dim: usize,
    pub method: SolveMethod,
    /// Absolute residual bound every listed pair satisfies.
    pub tolerance: f64,
    pub eigenvalues: Vec<Complex64>,
    pub residuals: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub states: Vec<StateRecord>,
    pub counts: ClassCounts,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub in_gap: Vec<InGapState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    pub label: String,
    pub state: usize,
    pub kind: GridKind,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindingEntry {
    pub label: String,
    pub result: WindingResult,
    /// Winding on a grid twice as fine as the accepted one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub refined_winding: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnclosureEntry {
    pub energy: Complex64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub winding: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingEntry {
    pub table: ScalingResult,
    pub strictly_increasing: bool,
    /// `N_c / (L_x L_y)` per row.
    pub fill_fraction: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveEntry {
    #[serde(rename = "U")]
    pub u: f64,
    pub n_full: usize,
    pub n_eff: usize,
    pub max_mismatch: f64,
    pub mean_mismatch: f64,
    pub unmatched_full: usize,
    pub unmatched_eff: usize,
    /// Largest entrywise difference between the numerical projection and the closed form.
    pub projector_max_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeBranchEntry {
    pub branch: String,
    pub analytic: EdgeBranch,
    /// Allowed by the closed-form existence rule.
    pub admitted: bool,
    pub nearest_ed: f64,
    pub energy_error: f64,
    /// `|ζ²|` from a log-linear fit of the matching ED eigenvector; zero when not admitted.
    pub fitted_zeta2_abs: f64,
    pub zeta_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeEntry {
    #[serde(rename = "P")]
    pub p: f64,
    #[serde(rename = "U")]
    pub u: f64,
    pub chain_length: usize,
    pub j0: f64,
    pub branches: Vec<EdgeBranchEntry>,
    /// Chain eigenvectors with at least 90% weight on the right half.
    pub ed_right_edge_states: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub seed: u64,
    /// Corner modes that also hold the localization share in the top-right patch.
    pub n_corner: usize,
    /// All `in_gap_corner` states, localized or not.
    pub n_corner_raw: usize,
    pub n_in_gap_edge: usize,
    /// Smallest corner weight among the counted corner modes; zero when there are none.
    pub min_corner_weight: f64,
    pub min_patch_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleEntry {
    #[serde(rename = "W")]
    pub w: f64,
    /// Minimum top-right `m` share of a counted corner mode.
    pub localization: f64,
    pub clean_count: usize,
    pub clean_raw: usize,
    pub seeds: Vec<SeedRecord>,
    pub min: usize,
    pub median: f64,
    pub max: usize,
    pub all_equal_clean: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialEntry {
    #[serde(rename = "V")]
    pub v: f64,
    pub n_corner: usize,
    pub min_corner_weight: f64,
    /// Doublon states whose real part lies strictly between the bulk windows.
    pub n_between: usize,
    /// Smallest real-part distance from those states to a bulk window.
    pub min_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialSummary {
    /// Real-part ranges of the two clean reference bands.
    pub lower_band: [f64; 2],
    pub upper_band: [f64; 2],
    pub points: Vec<PotentialEntry>,
    pub never_enter_bulk: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandEntry {
    pub re_min: f64,
    pub re_max: f64,
    pub size: usize,
    pub min_patch_n: f64,
    pub mean_patch_n: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullEntry {
    pub label: String,
    pub max_corner_weight: f64,
    pub n_corner: usize,
    pub gap_found: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixDump {
    pub file: String,
    pub dim: usize,
    pub nnz: usize,
}

/// Everything one run produces; `timings` go to a separate file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultBundle {
    pub schema_version: u32,
    pub experiment: ExperimentKind,
    pub config: ExperimentConfig,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub spectra: Vec<SpectrumBlock>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gap_window: Option<GapWindow>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub grids: Vec<GridEntry>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub winding: Vec<WindingEntry>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub enclosure: Vec<EnclosureEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scaling: Option<ScalingEntry>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub effective: Vec<EffectiveEntry>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub edge: Vec<EdgeEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ensemble: Option<EnsembleEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub potential: Option<PotentialSummary>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub bands: Vec<BandEntry>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub nulls: Vec<NullEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matrix: Option<MatrixDump>,
    /// Stage names in execution order.
    pub stages: Vec<String>,
    #[serde(skip)]
    pub timings: Vec<(String, f64)>,
    #[serde(skip)]
    pub grid_data: Vec<(String, ObservableGrid)>,
}

impl ResultBundle {
    fn new(config: &ExperimentConfig) -> Self {
        let mut echo = config.clone();
        echo.output_dir = None;
        ResultBundle {
            schema_version: SCHEMA_VERSION,
            experiment: config.experiment,
            config: echo,
            spectra: vec![],
            gap_window: None,
            grids: vec![],
            winding: vec![],
            enclosure: vec![],
            scaling: None,
            effective: vec![],
            edge: vec![],
            ensemble: None,
            potential: None,
            bands: vec![],
            nulls: vec![],
            matrix: None,
            stages: vec![],
            timings: vec![],
            grid_data: vec![],
        }
    }

    fn stage<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        log::info!("stage {name}");
        let out = f()?;
        self.stages.push(name.to_string());
        self.timings.push((name.to_string(), start.elapsed().as_secs_f64()));
        Ok(out)
    }

    /// `result.json` text: floats rounded to 12 significant digits, complex numbers as `[re, im]`.
    pub fn to_json(&self) -> Result<String> {
        let mut v = serde_json::to_value(self)?;
        pin_floats(&mut v);
        let mut s = serde_json::to_string_pretty(&v)?;
        s.push('\n');
        Ok(s)
    }

    pub fn timings_json(&self) -> Result<String> {
        let map: BTreeMap<String, f64> = self.timings.iter().cloned().collect();
        let stages: Vec<Value> = self
            .timings
            .iter()
            .map(|(k, t)| serde_json::json!({ "stage": k, "seconds": t }))
            .collect();
        let total: f64 = map.values().sum();
        Ok(serde_json::to_string_pretty(&serde_json::json!({ "stages": stages, "total_seconds": total }))? + "\n")
    }

    /// Writes `result.json`, `timings.json` and the CSV grids into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (file, grid) in &self.grid_data {
            grid.write_csv(std::io::BufWriter::new(fs::File::create(dir.join(file))?))?;
        }
        fs::write(dir.join("result.json"), self.to_json()?)?;
        fs::write(dir.join("timings.json"), self.timings_json()?)?;
        Ok(())
    }
}

/// Rounds every non-integer JSON number to [`OUTPUT_DIGITS`] significant digits.
pub fn pin_floats(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().unwrap_or(f64::NAN);
            *v = serde_json::Number::from_f64(round_sig(x, OUTPUT_DIGITS)).map_or(Value::Null, Value::Number);
        }
        Value::Array(a) => a.iter_mut().for_each(pin_floats),
        Value::Object(o) => o.values_mut().for_each(pin_floats),
        _ => {}
    }
}

/// Switches for [`run_with`].
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Directory for `hamiltonian.coo`; no dump when `None`.
    pub dump_matrix: Option<PathBuf>,
}

pub fn run(config: &ExperimentConfig) -> Result<ResultBundle> {
    run_with(config, &RunOptions::default())
}

pub fn run_with(config: &ExperimentConfig, opts: &RunOptions) -> Result<ResultBundle> {
    config.validate()?;
    let mut bundle = ResultBundle::new(config);
    if let Some(dir) = &opts.dump_matrix {
        let dump = bundle.stage("dump_matrix", || dump_matrix(config, dir))?;
        bundle.matrix = Some(dump);
    }
    match config.experiment {
        ExperimentKind::Spectrum => spectrum(config, &mut bundle, false)?,
        ExperimentKind::Densities => spectrum(config, &mut bundle, true)?,
        ExperimentKind::Winding => winding(config, &mut bundle)?,
        ExperimentKind::Scaling => scaling(config, &mut bundle)?,
        ExperimentKind::EffectiveCompare => effective_compare(config, &mut bundle)?,
        ExperimentKind::EdgeAnalytic => edge_analytic(config, &mut bundle)?,
        ExperimentKind::DisorderEnsemble => disorder_ensemble(config, &mut bundle)?,
        ExperimentKind::PotentialSweep => potential_sweep(config, &mut bundle)?,
        ExperimentKind::ThreeBody => three_body(config, &mut bundle)?,
        ExperimentKind::NullTests => null_tests(config, &mut bundle)?,
    }
    Ok(bundle)
}

/// Runs and writes the bundle into `dir`.
pub fn run_to_dir(config: &ExperimentConfig, dir: &Path, dump: bool) -> Result<ResultBundle> {
    let opts = RunOptions { dump_matrix: dump.then(|| dir.to_path_buf()) };
    let bundle = run_with(config, &opts)?;
    bundle.write(dir)?;
    Ok(bundle)
}

/// One point of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub dir: String,
}

/// Runs `config` once per value of `axis`, in order; point `i` goes to `dir/point_{i:03}`.
pub fn sweep(config: &ExperimentConfig, axis: &str, values: &[f64], dir: &Path, dump: bool) -> Result<Vec<ResultBundle>> {
    config.with_axis(axis, 0.0)?;
    fs::create_dir_all(dir)?;
    let mut bundles = Vec::with_capacity(values.len());
    let mut points = Vec::with_capacity(values.len());
    for (i, &value) in values.iter().enumerate() {
        let name = format!("point_{i:03}");
        let point = config.with_axis(axis, value)?;
        bundles.push(run_to_dir(&point, &dir.join(&name), dump)?);
        points.push(SweepPoint { value, dir: name });
    }
    let mut index = serde_json::json!({
        "schema_version": SCHEMA_VERSION,
        "axis": axis,
        "points": points,
    });
    pin_floats(&mut index);
    fs::write(dir.join("sweep.json"), serde_json::to_string_pretty(&index)? + "\n")?;
    Ok(bundles)
}

fn dump_matrix(config: &ExperimentConfig, dir: &Path) -> Result<MatrixDump> {
    let lattice = config.lattice.build()?;
    let basis = FockBasis::new(lattice.num_sites(), config.params.n_particles)?;
    let disorder = match &config.disorder {
        Some(d) => Some(d.sample(&lattice, d.seed)?),
        None => None,
    };
    let h = assemble(&config.params, &lattice, &basis, disorder.as_ref())?;
    fs::create_dir_all(dir)?;
    let file = "hamiltonian.coo".to_string();
    h.write_coordinate(std::io::BufWriter::new(fs::File::create(dir.join(&file))?))?;
    Ok(MatrixDump { file, dim: h.dim(), nnz: h.nnz() })
}

fn tolerance(sector: &Sector, solver: &SolverConfig) -> f64 {
    let norm = sector.matrix.frobenius_norm();
    match sector.solution.method {
        SolveMethod::Dense => DENSE_TOL * norm,
        SolveMethod::Targeted { .. } => solver.targeted.tol * norm,
    }
}

fn in_gap_states(sector: &Sector, records: &[StateRecord], patch: usize) -> Result<Vec<InGapState>> {
    records
        .iter()
        .filter(|r| matches!(r.class, StateClass::InGapEdge | StateClass::InGapCorner))
        .map(|r| {
            let v = &sector.solution.vectors[r.index];
            let n = density_n(v, &sector.basis, &sector.lattice)?;
            let m = density_m(v, &sector.basis, &sector.lattice)?;
            Ok(InGapState {
                index: r.index,
                energy: r.energy,
                class: r.class,
                corner_weight: r.corner_weight,
                right_columns_n: n.right_columns_fraction(2),
                patch_n: n.top_right_fraction(patch),
                patch_m: m.top_right_fraction(patch),
            })
        })
        .collect()
}

fn block(
    label: &str,
    sector: &Sector,
    records: Vec<StateRecord>,
    params: &ModelParams,
    disorder_seed: Option<u64>,
    config: &ExperimentConfig,
) -> Result<SpectrumBlock> {
    let in_gap = if records.is_empty() { vec![] } else { in_gap_states(sector, &records, config.options.patch)? };
    Ok(SpectrumBlock {
        label: label.to_string(),
        lx: sector.lattice.lx,
        ly: sector.lattice.ly,
        bc_x: sector.lattice.bc_x,
        bc_y: sector.lattice.bc_y,
        params: *params,
        disorder_seed,
        dim: sector.basis.dim(),
        method: sector.solution.method,
        tolerance: tolerance(sector, &config.solver),
        eigenvalues: sector.solution.eigenvalues.clone(),
        residuals: sector.solution.residuals.clone(),
        counts: ClassCounts::of(&records),
        states: records,
        in_gap,
    })
}

/// Clean periodic reference for `params`; returns the window (if any) and its doublon energies.
fn reference(
    params: &ModelParams,
    lx: usize,
    ly: usize,
    config: &ExperimentConfig,
) -> Result<(Option<GapWindow>, Vec<Complex64>)> {
    let lattice = LatticeSpec::new(reference_width(lx), ly, Boundary::Periodic, Boundary::Periodic)?;
    let sector = solve_model(&params.with_v(0.0), &lattice, None, &config.solver)?;
    let energies = doublon_energies(&sector, &config.thresholds)?;
    match gap_window_from_energies(&energies) {
        Ok(g) => Ok((Some(g), energies)),
        Err(Error::NoGap { .. }) => Ok((None, energies)),
        Err(e) => Err(e),
    }
}

fn disorder_of(config: &ExperimentConfig, lattice: &LatticeSpec) -> Result<Option<DisorderRealization>> {
    config.disorder.as_ref().filter(|d| d.w != 0.0).map(|d| d.sample(lattice, d.seed)).transpose()
}

fn spectrum(config: &ExperimentConfig, bundle: &mut ResultBundle, with_grids: bool) -> Result<()> {
    let lattice = config.lattice.build()?;
    let params = &config.params;
    let two_body = params.n_particles == 2;
    let gap = if two_body && params.u != 0.0 {
        bundle.stage("reference", || reference(params, lattice.lx, lattice.ly, config))?.0
    } else {
        None
    };
    bundle.gap_window = gap;
    let disorder = disorder_of(config, &lattice)?;
    let sector = bundle.stage("solve", || solve_model(params, &lattice, disorder.as_ref(), &config.solver))?;
    let records = if two_body {
        bundle.stage("classify", || {
            crate::observables::classify(&sector.solution, &sector.basis, &lattice, gap.as_ref(), &config.thresholds)
        })?
    } else {
        vec![]
    };
    if with_grids {
        let chosen: Vec<usize> = match config.options.grids {
            GridSelection::None => vec![],
            GridSelection::All => (0..sector.solution.len()).collect(),
            GridSelection::InGap => records
                .iter()
                .filter(|r| matches!(r.class, StateClass::InGapEdge | StateClass::InGapCorner))
                .map(|r| r.index)
                .collect(),
        };
        let made: Vec<(usize, ObservableGrid)> = bundle.stage("grids", || {
            let mut out = Vec::with_capacity(2 * chosen.len());
            for &k in &chosen {
                let v = &sector.solution.vectors[k];
                out.push((k, density_n(v, &sector.basis, &lattice)?));
                out.push((k, density_m(v, &sector.basis, &lattice)?));
            }
            Ok(out)
        })?;
        for (k, grid) in made {
            let tag = if grid.kind == GridKind::NDensity { "n" } else { "m" };
            let file = format!("grid_{k:05}_{tag}.csv");
            bundle.grids.push(GridEntry { label: "main".into(), state: k, kind: grid.kind, file: file.clone() });
            bundle.grid_data.push((file, grid));
        }
    }
    let seed = disorder.as_ref().map(|d| d.seed);
    bundle.spectra.push(block("main", &sector, records, params, seed, config)?);
    Ok(())
}

fn winding(config: &ExperimentConfig, bundle: &mut ResultBundle) -> Result<()> {
    let lattice = config.lattice.build()?;
    if !lattice.bc_x.is_open() || !lattice.bc_y.wraps() {
        return Err(Error::Config("winding needs bc_x = open and a periodic or twisted bc_y".into()));
    }
    let params = &config.params;
    let (gap, energies) = bundle.stage("reference", || reference(params, lattice.lx, lattice.ly, config))?;
    bundle.gap_window = gap;
    let refs: Vec<(String, Complex64)> = match &config.options.e_ref {
        Some(list) => list.iter().enumerate().map(|(i, &e)| (format!("e_ref_{i}"), e)).collect(),
        None => {
            let gap = gap.ok_or(Error::NoGap { gap: 0.0, required: 0.0 })?;
            let centroid = bundle.stage("edge_band", || {
                default_reference_energy(params, lattice.lx, lattice.ly, &gap, &config.solver, &config.thresholds)
            })?;
            let floor = energies.iter().map(|e| e.re).fold(f64::INFINITY, f64::min);
            vec![
                ("in_gap".to_string(), centroid),
                ("outside".to_string(), Complex64::new(floor - 2.0 * params.j.abs().max(1.0), 0.0)),
            ]
        }
    };
    let disorder = disorder_of(config, &lattice)?;
    let wopts = config.options.winding;
    for (label, e) in refs {
        let result = bundle.stage(&format!("winding_{label}"), || {
            winding_number_with(params, &lattice, disorder.as_ref(), e, &wopts)
        })?;
        let refined_winding = if config.options.check_refinement {
            let finer = WindingOptions {
                n_phi: 2 * result.phi_grid,
                max_n_phi: wopts.max_n_phi.max(2 * result.phi_grid),
                ..wopts
            };
            let r = bundle.stage(&format!("refine_{label}"), || {
                winding_number_with(params, &lattice, disorder.as_ref(), e, &finer)
            })?;
            Some(r.winding)
        } else {
            None
        };
        bundle.winding.push(WindingEntry { label, result, refined_winding });
    }
    if config.options.enclosure {
        let gap = gap.ok_or(Error::NoGap { gap: 0.0, required: 0.0 })?;
        let obc = LatticeSpec::new(lattice.lx, lattice.ly, Boundary::Open, Boundary::Open)?;
        let (sector, records) = bundle.stage("corner_modes", || {
            classified(params, &obc, None, Some(&gap), &config.solver, &config.thresholds)
        })?;
        let corners: Vec<Complex64> =
            records.iter().filter(|r| r.class == StateClass::InGapCorner).map(|r| r.energy).collect();
        let entries: Vec<EnclosureEntry> = bundle.stage("enclosure", || {
            Ok(corners
                .iter()
                .map(|&energy| match winding_number_with(params, &lattice, None, energy, &wopts) {
                    Ok(w) => EnclosureEntry { energy, winding: Some(w.winding), error: None },
                    Err(e) => EnclosureEntry { energy, winding: None, error: Some(e.to_string()) },
                })
                .collect())
        })?;
        bundle.enclosure = entries;
        bundle.spectra.push(block("full_open", &sector, records, params, None, config)?);
    }
    Ok(())
}

fn scaling(config: &ExperimentConfig, bundle: &mut ResultBundle) -> Result<()> {
    let lx = config.lattice.lx;
    let table = bundle.stage("scaling", || {
        count_corner_modes(&config.params, lx, &config.options.ly_values, &config.solver, &config.thresholds)
    })?;
    let fill_fraction = table.rows.iter().map(|r| r.n_corner as f64 / (lx * r.ly) as f64).collect();
    bundle.scaling = Some(ScalingEntry { strictly_increasing: table.strictly_increasing(), fill_fraction, table });
    Ok(())
}

fn effective_compare(config: &ExperimentConfig, bundle: &mut ResultBundle) -> Result<()> {
    let lattice = config.lattice.build()?;
    let us = config.options.u_values.clone().unwrap_or_else(|| vec![config.params.u]);
    for u in us {
        let params = config.params.with_axis("U", u)?;
        let sector = bundle.stage(&format!("full_U{u}"), || solve_model(&params, &lattice, None, &config.solver))?;
        let full = doublon_energies(&sector, &config.thresholds)?;
        let closed = build_h_eff(&params, &lattice)?;
        let eff = bundle.stage(&format!("effective_U{u}"), || eigenvalues_dense(&closed))?;
        let numeric = bundle.stage(&format!("projector_U{u}"), || derive_eff_numerically(&params, &lattice))?;
        let report = compare_spectra(&full, &eff);
        bundle.effective.push(EffectiveEntry {
            u,
            n_full: full.len(),
            n_eff: eff.len(),
            max_mismatch: report.max,
            mean_mismatch: report.mean,
            unmatched_full: report.unmatched_full.len(),
            unmatched_eff: report.unmatched_eff.len(),
            projector_max_diff: max_entry_diff(&numeric, &closed),
        });
    }
    Ok(())
}

fn max_entry_diff(a: &crate::sparse::SparseComplexMatrix, b: &crate::sparse::SparseComplexMatrix) -> f64 {
    if a.dim() != b.dim() {
        return f64::INFINITY;
    }
    a.iter()
        .map(|(r, c, x)| (x - b.get(r, c)).norm())
        .chain(b.iter().map(|(r, c, y)| (a.get(r, c) - y).norm()))
        .fold(0.0, f64::max)
}

/// `|ζ²|` from a least-squares line through `ln|β|` on the odd sites nearest the right end.
pub fn fit_decay(vector: &[f64]) -> f64 {
    let len = vector.len();
    let peak = vector.iter().map(|x| x.abs()).fold(0.0, f64::max);
    let mut pts = Vec::new();
    let mut site = if len % 2 == 1 { len } else { len - 1 };
    while site >= 1 && pts.len() < 8 {
        let a = vector[site - 1].abs();
        if a < 1e-6 * peak {
            break;
        }
        pts.push((((site + 1) / 2) as f64, a.ln()));
        if site < 3 {
            break;
        }
        site -= 2;
    }
    if pts.len() < 2 {
        return f64::NAN;
    }
    let (slope, _, _) = crate::observables::linear_fit(&pts);
    slope.exp()
}

fn edge_analytic(config: &ExperimentConfig, bundle: &mut ResultBundle) -> Result<()> {
    let len = config.options.chain_length;
    if len < 3 || len % 2 == 0 {
        return Err(Error::Config(format!("chain_length {len} must be odd and at least 3")));
    }
    let ps = config.options.p_values.clone().unwrap_or_else(|| vec![config.params.p]);
    let us = config.options.u_values.clone().unwrap_or_else(|| vec![config.params.u]);
    for &u in &us {
        for &p in &ps {
            let params = config.params.with_axis("U", u)?.with_axis("P", p)?;
            let sol = analytic_edge(&params)?;
            let (values, vectors) = bundle.stage(&format!("chain_P{p}_U{u}"), || chain_spectrum(&params, len))?;
            let ed_right_edge_states = (0..len)
                .filter(|&j| {
                    let total: f64 = (0..len).map(|i| vectors[(i, j)].powi(2)).sum();
                    let right: f64 = (len / 2..len).map(|i| vectors[(i, j)].powi(2)).sum();
                    right >= 0.9 * total
                })
                .count();
            let mut branches = Vec::new();
            for (name, b, admitted) in
                [("plus", sol.plus, sol.plus.localized), ("minus", sol.minus, sol.exists_minus && sol.minus.localized)]
            {
                let (k, nearest) = values
                    .iter()
                    .enumerate()
                    .min_by(|a, c| (a.1 - b.energy).abs().total_cmp(&(c.1 - b.energy).abs()))
                    .map(|(k, &e)| (k, e))
                    .ok_or_else(|| Error::Solver("empty chain spectrum".into()))?;
                let (fitted, rel) = if admitted {
                    let col: Vec<f64> = (0..len).map(|i| vectors[(i, k)]).collect();
                    let f = fit_decay(&col);
                    (f, (f - b.zeta2_abs).abs() / b.zeta2_abs)
                } else {
                    (0.0, 0.0)
                };
                branches.push(EdgeBranchEntry {
                    branch: name.to_string(),
                    analytic: b,
                    admitted,
                    nearest_ed: nearest,
                    energy_error: (nearest - b.energy).abs(),
                    fitted_zeta2_abs: fitted,
                    zeta_rel_error: rel,
                });
            }
            bundle.edge.push(EdgeEntry { p, u, chain_length: len, j0: sol.j0, branches, ed_right_edge_states });
        }
    }
    Ok(())
}

fn median(sorted: &[usize]) -> f64 {
    match sorted.len() {
        0 => 0.0,
        n if n % 2 == 1 => sorted[n / 2] as f64,
        n => (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0,
    }
}

/// Corner modes of a block whose top-right `m` share reaches `share`, and their minima.
fn localized_corners(blk: &SpectrumBlock, share: f64) -> (usize, f64, f64) {
    let hits: Vec<&InGapState> =
        blk.in_gap.iter().filter(|s| s.class == StateClass::InGapCorner && s.patch_m >= share).collect();
    let min_w = hits.iter().map(|s| s.corner_weight).fold(f64::INFINITY, f64::min);
    let min_m = hits.iter().map(|s| s.patch_m).fold(f64::INFINITY, f64::min);
    let finite = |x: f64| if x.is_finite() { x } else { 0.0 };
    (hits.len(), finite(min_w), finite(min_m))
}

fn disorder_ensemble(config: &ExperimentConfig, bundle: &mut ResultBundle) -> Result<()> {
    let d = config.disorder.ok_or_else(|| Error::Config("disorder_ensemble needs a disorder block".into()))?;
    let lattice = config.lattice.build()?;
    let params = &config.params;
    let share = config.options.localization;
    let (gap, _) = bundle.stage("reference", || reference(params, lattice.lx, lattice.ly, config))?;
    bundle.gap_window = gap;
    let (clean_sector, clean_records) = bundle.stage("clean", || {
        classified(params, &lattice, None, gap.as_ref(), &config.solver, &config.thresholds)
    })?;
    let clean_block = block("clean", &clean_sector, clean_records, params, None, config)?;
    drop(clean_sector);
    let (clean_count, _, _) = localized_corners(&clean_block, share);
    let clean_raw = clean_block.counts.in_gap_corner;
    bundle.spectra.push(clean_block);
    let seeds: Vec<u64> = (0..config.options.seeds as u64).map(|i| d.seed.wrapping_add(i)).collect();
    let runs: Vec<(SeedRecord, SpectrumBlock)> = bundle.stage("seeds", || {
        seeds
            .par_iter()
            .map(|&seed| {
                let real = d.sample(&lattice, seed)?;
                let (sector, records) =
                    classified(params, &lattice, Some(&real), gap.as_ref(), &config.solver, &config.thresholds)?;
                let blk = block(&format!("seed_{seed}"), &sector, records, params, Some(seed), config)?;
                let (n_corner, min_corner_weight, min_patch_m) = localized_corners(&blk, share);
                let rec = SeedRecord {
                    seed,
                    n_corner,
                    n_corner_raw: blk.counts.in_gap_corner,
                    n_in_gap_edge: blk.counts.in_gap_edge,
                    min_corner_weight,
                    min_patch_m,
                };
                Ok((rec, blk))
            })
            .collect()
    })?;
    let mut records = Vec::with_capacity(runs.len());
    for (rec, blk) in runs {
        records.push(rec);
        bundle.spectra.push(blk);
    }
    let mut counts: Vec<usize> = records.iter().map(|r| r.n_corner).collect();
    counts.sort_unstable();
    bundle.ensemble = Some(EnsembleEntry {
        w: d.w,
        localization: share,
        clean_count,
        clean_raw,
        min: counts.first().copied().unwrap_or(0),
        median: median(&counts),
        max: counts.last().copied().unwrap_or(0),
        all_equal_clean: records.iter().all(|r| r.n_corner == clean_count),
        seeds: records,
    });
    Ok(())
}

fn potential_sweep(config: &ExperimentConfig, bundle: &mut ResultBundle) -> Result<()> {
    let lattice = config.lattice.build()?;
    let base = config.params.with_v(0.0);
    let j0 = base.j0()?;
    let vs = config.options.v_values.clone().unwrap_or_else(|| vec![0.0, j0, 2.0 * j0]);
    let (gap, energies) = bundle.stage("reference", || reference(&base, lattice.lx, lattice.ly, config))?;
    let gap = gap.ok_or(Error::NoGap { gap: 0.0, required: 0.0 })?;
    bundle.gap_window = Some(gap);
    let mid = 0.5 * (gap.re_min + gap.re_max);
    let range = |below: bool| {
        energies.iter().map(|e| e.re).filter(|&r| (r < mid) == below).fold([f64::INFINITY, f64::NEG_INFINITY], |a, r| {
            [a[0].min(r), a[1].max(r)]
        })
    };
    let (lower, upper) = (range(true), range(false));
    let mut points = Vec::with_capacity(vs.len());
    for v in vs {
        let params = base.with_v(v);
        let (sector, records) = bundle.stage(&format!("solve_V{v}"), || {
            classified(&params, &lattice, None, Some(&gap), &config.solver, &config.thresholds)
        })?;
        let between: Vec<f64> = records
            .iter()
            .filter(|r| r.class != StateClass::Scattering && r.energy.re > lower[1] && r.energy.re < upper[0])
            .map(|r| (r.energy.re - lower[1]).min(upper[0] - r.energy.re))
            .collect();
        let corner_w = records
            .iter()
            .filter(|r| r.class == StateClass::InGapCorner)
            .map(|r| r.corner_weight)
            .fold(f64::INFINITY, f64::min);
        points.push(PotentialEntry {
            v,
            n_corner: count_class(&records, StateClass::InGapCorner),
            min_corner_weight: if corner_w.is_finite() { corner_w } else { 0.0 },
            n_between: between.len(),
            min_margin: between.iter().copied().fold(f64::INFINITY, f64::min).min(f64::MAX),
        });
        bundle.spectra.push(block(&format!("V_{v}"), &sector, records, &params, None, config)?);
    }
    let first = points.first().map(|p| p.n_between);
    let never_enter_bulk = points.iter().all(|p| Some(p.n_between) == first);
    bundle.potential = Some(PotentialSummary { lower_band: lower, upper_band: upper, points, never_enter_bulk });
    Ok(())
}

/// Groups real-sorted energies wherever consecutive real parts differ by more than `gap`.
pub fn split_bands(energies: &[Complex64], gap: f64) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=energies.len() {
        if i == energies.len() || energies[i].re - energies[i - 1].re > gap {
            if i > start {
                out.push(start..i);
            }
            start = i;
        }
    }
    out
}

fn three_body(config: &ExperimentConfig, bundle: &mut ResultBundle) -> Result<()> {
    let lattice = config.lattice.build()?;
    let params = &config.params;
    let basis = FockBasis::new(lattice.num_sites(), params.n_particles)?;
    let h = assemble(params, &lattice, &basis, None)?;
    let solution = bundle.stage("solve", || eig_dense(&h))?;
    let patch = config.options.patch;
    let fractions: Vec<f64> = solution
        .vectors
        .par_iter()
        .map(|v| density_n(v, &basis, &lattice).map(|g| g.top_right_fraction(patch)))
        .collect::<Result<_>>()?;
    for r in split_bands(&solution.eigenvalues, config.options.band_gap) {
        let f = &fractions[r.clone()];
        bundle.bands.push(BandEntry {
            re_min: solution.eigenvalues[r.start].re,
            re_max: solution.eigenvalues[r.end - 1].re,
            size: r.len(),
            min_patch_n: f.iter().copied().fold(f64::INFINITY, f64::min),
            mean_patch_n: f.iter().sum::<f64>() / f.len() as f64,
        });
    }
    let sector = Sector { lattice, basis, matrix: h, solution };
    bundle.spectra.push(block("main", &sector, vec![], params, None, config)?);
    Ok(())
}

fn null_tests(config: &ExperimentConfig, bundle: &mut ResultBundle) -> Result<()> {
    let lattice = LatticeSpec::new(config.lattice.lx, config.lattice.ly, Boundary::Open, Boundary::Open)?;
    for (label, axis) in [("U0", "U"), ("P0", "P")] {
        let params = config.params.with_axis(axis, 0.0)?;
        let (gap, _) = bundle.stage(&format!("reference_{label}"), || reference(&params, lattice.lx, lattice.ly, config))?;
        let (sector, records) = bundle.stage(&format!("solve_{label}"), || {
            classified(&params, &lattice, None, gap.as_ref(), &config.solver, &config.thresholds)
        })?;
        let max_w = sector
            .solution
            .vectors
            .par_iter()
            .map(|v| {
                density_n(v, &sector.basis, &lattice)
                    .and_then(|g| corner_weight_with(&g, config.thresholds.xi, config.thresholds.metric))
            })
            .collect::<Result<Vec<f64>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        bundle.nulls.push(NullEntry {
            label: label.to_string(),
            max_corner_weight: max_w,
            n_corner: count_class(&records, StateClass::InGapCorner),
            gap_found: gap.is_some(),
        });
        bundle.spectra.push(block(label, &sector, records, &params, None, config)?);
    }
    Ok(())
}
