//! Lattice geometry, couplings and disorder realizations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Boundary condition along one lattice direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    Periodic,
    Open,
    /// Periodic with phase `e^{iφ}` on hops that cross the boundary in the forward direction.
    Twisted(f64),
}

impl Boundary {
    pub fn wraps(self) -> bool {
        !matches!(self, Boundary::Open)
    }

    pub fn twist(self) -> f64 {
        match self {
            Boundary::Twisted(phi) => phi,
            _ => 0.0,
        }
    }

    pub fn is_open(self) -> bool {
        matches!(self, Boundary::Open)
    }
}

/// Reciprocal bond between `(x, y)` and `(x + 1, y)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct XBond {
    pub left: usize,
    pub right: usize,
    /// Column of the left endpoint, 1-based.
    pub column: usize,
    pub row: usize,
    pub wraps: bool,
}

/// Direction of a unidirectional y-bond.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum YDirection {
    /// `a†_{x,y+1} a_{x,y}`, carried by odd columns.
    Up,
    /// `a†_{x,y} a_{x,y+1}`, carried by even columns.
    Down,
}

/// One-way bond along y. A particle moves from `source` to `target`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct YBond {
    pub source: usize,
    pub target: usize,
    pub column: usize,
    /// Lower row of the bond, 1-based. The bond joins rows `row` and `row + 1` (mod `L_y`).
    pub row: usize,
    pub direction: YDirection,
    pub wraps: bool,
}

/// Intra-cell pair bond between columns `2c − 1` (odd) and `2c` (even).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairBond {
    pub odd: usize,
    pub even: usize,
    /// Cell index `c`, 1-based.
    pub cell: usize,
    pub row: usize,
}

/// Validated rectangular lattice with precomputed bond tables.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeSpec {
    pub lx: usize,
    pub ly: usize,
    pub bc_x: Boundary,
    pub bc_y: Boundary,
    pub x_bonds: Vec<XBond>,
    pub y_bonds: Vec<YBond>,
    pub pair_bonds: Vec<PairBond>,
}

impl LatticeSpec {
    pub fn new(lx: usize, ly: usize, bc_x: Boundary, bc_y: Boundary) -> Result<Self> {
        if lx < 2 || ly < 2 {
            return Err(Error::Lattice(format!(
                "dimensions must be at least 2, got {lx}x{ly}"
            )));
        }
        if bc_x.wraps() && lx % 2 != 0 {
            return Err(Error::Lattice(format!(
                "periodic x requires even Lx, got {lx}"
            )));
        }
        for bc in [bc_x, bc_y] {
            if let Boundary::Twisted(phi) = bc {
                if !phi.is_finite() {
                    return Err(Error::Lattice(format!("twist angle {phi} is not finite")));
                }
            }
        }
        let idx = |x: usize, y: usize| (y - 1) * lx + (x - 1);

        let mut x_bonds = Vec::new();
        for y in 1..=ly {
            for x in 1..=lx {
                let wraps = x == lx;
                if wraps && !bc_x.wraps() {
                    continue;
                }
                let right = if wraps { 1 } else { x + 1 };
                x_bonds.push(XBond { left: idx(x, y), right: idx(right, y), column: x, row: y, wraps });
            }
        }

        let mut y_bonds = Vec::new();
        for y in 1..=ly {
            for x in 1..=lx {
                let wraps = y == ly;
                if wraps && !bc_y.wraps() {
                    continue;
                }
                let upper = if wraps { 1 } else { y + 1 };
                let (lo, hi) = (idx(x, y), idx(x, upper));
                let (source, target, direction) = if x % 2 == 1 {
                    (lo, hi, YDirection::Up)
                } else {
                    (hi, lo, YDirection::Down)
                };
                y_bonds.push(YBond { source, target, column: x, row: y, direction, wraps });
            }
        }

        let mut pair_bonds = Vec::new();
        for y in 1..=ly {
            for c in 1..=lx / 2 {
                pair_bonds.push(PairBond { odd: idx(2 * c - 1, y), even: idx(2 * c, y), cell: c, row: y });
            }
        }

        Ok(LatticeSpec { lx, ly, bc_x, bc_y, x_bonds, y_bonds, pair_bonds })
    }

    pub fn num_sites(&self) -> usize {
        self.lx * self.ly
    }

    /// Linear index of the 1-based coordinate `(x, y)`.
    pub fn site(&self, x: usize, y: usize) -> usize {
        debug_assert!((1..=self.lx).contains(&x) && (1..=self.ly).contains(&y));
        (y - 1) * self.lx + (x - 1)
    }

    /// 1-based coordinates of a linear index.
    pub fn coords(&self, site: usize) -> (usize, usize) {
        (site % self.lx + 1, site / self.lx + 1)
    }

    /// Columns carrying the edge potential.
    pub fn is_edge_column(&self, x: usize) -> bool {
        x == 1 || x == self.lx
    }

    pub fn is_full_open(&self) -> bool {
        self.bc_x.is_open() && self.bc_y.is_open()
    }

    /// Same geometry with a different y boundary.
    pub fn with_bc_y(&self, bc_y: Boundary) -> Result<Self> {
        LatticeSpec::new(self.lx, self.ly, self.bc_x, bc_y)
    }

    /// Number of distinct x-bond columns (`Lx − 1` open, `Lx` wrapped).
    pub fn x_bond_columns(&self) -> usize {
        if self.bc_x.wraps() { self.lx } else { self.lx - 1 }
    }

    /// Number of distinct y-bond rows.
    pub fn y_bond_rows(&self) -> usize {
        if self.bc_y.wraps() { self.ly } else { self.ly - 1 }
    }
}

/// Functional form of the compensating edge potential.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgePotential {
    /// `−(V/2) n(n−1)`: shifts a doublon by exactly `−V`, leaves single occupation untouched.
    #[default]
    TwoBody,
    /// `−(V/2) n`.
    SingleParticle,
}

/// Couplings of one Hamiltonian instance, in units where `J` is typically 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    #[serde(rename = "J")]
    pub j: f64,
    pub t: f64,
    #[serde(rename = "P")]
    pub p: f64,
    #[serde(rename = "U")]
    pub u: f64,
    #[serde(rename = "V", default)]
    pub v: f64,
    #[serde(rename = "N")]
    pub n_particles: usize,
    #[serde(default)]
    pub edge_potential: EdgePotential,
}

impl ModelParams {
    pub fn new(j: f64, t: f64, p: f64, u: f64, n_particles: usize) -> Self {
        ModelParams { j, t, p, u, v: 0.0, n_particles, edge_potential: EdgePotential::TwoBody }
    }

    pub fn with_v(mut self, v: f64) -> Self {
        self.v = v;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, x) in [("J", self.j), ("t", self.t), ("P", self.p), ("U", self.u), ("V", self.v)] {
            if !x.is_finite() {
                return Err(Error::Param(format!("{name} = {x} is not finite")));
            }
        }
        if self.n_particles == 0 {
            return Err(Error::Param("N must be at least 1".into()));
        }
        Ok(())
    }

    /// Second-order doublon hopping `J²/U`.
    pub fn j0(&self) -> Result<f64> {
        if self.u == 0.0 {
            return Err(Error::Param("strong-coupling quantities need U != 0".into()));
        }
        Ok(self.j * self.j / self.u)
    }

    /// Real-energy center of the doublon band, `−2U − 2J²/U` (`−2U` when `U = 0`).
    pub fn doublon_center(&self) -> f64 {
        -2.0 * self.u - self.j0().unwrap_or(0.0) * 2.0
    }

    /// Replaces a named scalar coupling.
    pub fn with_axis(mut self, axis: &str, value: f64) -> Result<Self> {
        match axis {
            "J" => self.j = value,
            "t" => self.t = value,
            "P" => self.p = value,
            "U" => self.u = value,
            "V" => self.v = value,
            other => return Err(Error::Config(format!("unknown sweep axis {other:?}"))),
        }
        Ok(self)
    }
}

/// How disorder amplitudes are shared between bonds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisorderLayout {
    /// One `J̃` per bond column, one `P̃` per cell column, one `t̃` per row.
    #[default]
    PerLine,
    /// Independent amplitude on every bond.
    PerBond,
}

/// Prefactor of the disordered pair term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairDisorderScale {
    /// `−P̃ (a†a†aa + h.c.)`.
    #[default]
    Full,
    /// `−(P̃/2) (a†a†aa + h.c.)`, matching the clean term.
    Half,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisorderOptions {
    #[serde(default)]
    pub layout: DisorderLayout,
    #[serde(default)]
    pub pair_scale: PairDisorderScale,
}

/// Frozen disorder amplitudes.
///
/// Amplitudes come from ChaCha20 (`rand_chacha::ChaCha20Rng::seed_from_u64`), each drawn as
/// `W·(u − 1/2)` with `u = (next_u64 >> 11)·2⁻⁵³`. Draw order: all `J̃`, then all `P̃`, then
/// all `t̃`. Per-line layout orders by bond column, cell and bond row; per-bond layout follows
/// the lattice bond tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisorderRealization {
    pub w: f64,
    pub seed: u64,
    pub options: DisorderOptions,
    pub j_tilde: Vec<f64>,
    pub p_tilde: Vec<f64>,
    pub t_tilde: Vec<f64>,
}

impl DisorderRealization {
    pub fn sample(lattice: &LatticeSpec, w: f64, seed: u64) -> Result<Self> {
        Self::sample_with(lattice, w, seed, DisorderOptions::default())
    }

    pub fn sample_with(lattice: &LatticeSpec, w: f64, seed: u64, options: DisorderOptions) -> Result<Self> {
        if !(w >= 0.0) || !w.is_finite() {
            return Err(Error::Param(format!("disorder width W = {w} must be finite and non-negative")));
        }
        let (nj, np, nt) = match options.layout {
            DisorderLayout::PerLine => (lattice.x_bond_columns(), lattice.lx / 2, lattice.y_bond_rows()),
            DisorderLayout::PerBond => {
                (lattice.x_bonds.len(), lattice.pair_bonds.len(), lattice.y_bonds.len())
            }
        };
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n).map(|_| w * (rng.random::<f64>() - 0.5)).collect()
        };
        let j_tilde = draw(nj);
        let p_tilde = draw(np);
        let t_tilde = draw(nt);
        Ok(DisorderRealization { w, seed, options, j_tilde, p_tilde, t_tilde })
    }

    pub fn x_amplitude(&self, bond_index: usize, bond: &XBond) -> f64 {
        match self.options.layout {
            DisorderLayout::PerLine => self.j_tilde[bond.column - 1],
            DisorderLayout::PerBond => self.j_tilde[bond_index],
        }
    }

    pub fn pair_amplitude(&self, bond_index: usize, bond: &PairBond) -> f64 {
        let raw = match self.options.layout {
            DisorderLayout::PerLine => self.p_tilde[bond.cell - 1],
            DisorderLayout::PerBond => self.p_tilde[bond_index],
        };
        match self.options.pair_scale {
            PairDisorderScale::Full => raw,
            PairDisorderScale::Half => 0.5 * raw,
        }
    }

    pub fn y_amplitude(&self, bond_index: usize, bond: &YBond) -> f64 {
        match self.options.layout {
            DisorderLayout::PerLine => self.t_tilde[bond.row - 1],
            DisorderLayout::PerBond => self.t_tilde[bond_index],
        }
    }

    /// Checks that the arrays fit `lattice`.
    pub fn check_shape(&self, lattice: &LatticeSpec) -> Result<()> {
        let want = match self.options.layout {
            DisorderLayout::PerLine => (lattice.x_bond_columns(), lattice.lx / 2, lattice.y_bond_rows()),
            DisorderLayout::PerBond => {
                (lattice.x_bonds.len(), lattice.pair_bonds.len(), lattice.y_bonds.len())
            }
        };
        let got = (self.j_tilde.len(), self.p_tilde.len(), self.t_tilde.len());
        if want != got {
            return Err(Error::Lattice(format!(
                "disorder arrays {got:?} do not fit lattice (expected {want:?})"
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Counts bonds by scanning every ordered site pair.
    fn brute_counts(l: &LatticeSpec) -> (usize, usize, usize) {
        let wrap = |d: isize, len: usize, bc: Boundary| -> bool {
            d == 1 || (bc.wraps() && d == -(len as isize - 1))
        };
        let mut nx = 0;
        let mut ny = 0;
        let mut np = 0;
        for a in 0..l.num_sites() {
            for b in 0..l.num_sites() {
                let (xa, ya) = l.coords(a);
                let (xb, yb) = l.coords(b);
                let dx = xb as isize - xa as isize;
                let dy = yb as isize - ya as isize;
                if ya == yb && wrap(dx, l.lx, l.bc_x) {
                    nx += 1;
                }
                if xa == xb && wrap(dy, l.ly, l.bc_y) {
                    ny += 1;
                }
                if ya == yb && xa % 2 == 1 && xb == xa + 1 {
                    np += 1;
                }
            }
        }
        (nx, ny, np)
    }

    #[test]
    fn torus_bond_counts() {
        let l = LatticeSpec::new(4, 3, Boundary::Periodic, Boundary::Periodic).unwrap();
        assert_eq!(l.num_sites(), 12);
        assert_eq!((l.x_bonds.len(), l.y_bonds.len(), l.pair_bonds.len()), (12, 12, 6));
    }

    #[test]
    fn open_bond_counts_match_brute_force() {
        let l = LatticeSpec::new(15, 14, Boundary::Open, Boundary::Open).unwrap();
        assert_eq!(l.num_sites(), 210);
        let counts = (l.x_bonds.len(), l.y_bonds.len(), l.pair_bonds.len());
        assert_eq!(counts, (14 * 14, 15 * 13, 7 * 14));
        assert_eq!(counts, brute_counts(&l));
        let t = LatticeSpec::new(6, 4, Boundary::Periodic, Boundary::Twisted(0.3)).unwrap();
        assert_eq!((t.x_bonds.len(), t.y_bonds.len(), t.pair_bonds.len()), brute_counts(&t));
    }

    #[test]
    fn periodic_x_needs_even_width() {
        assert!(matches!(
            LatticeSpec::new(3, 3, Boundary::Periodic, Boundary::Open),
            Err(Error::Lattice(_))
        ));
        assert!(LatticeSpec::new(3, 3, Boundary::Open, Boundary::Periodic).is_ok());
        assert!(LatticeSpec::new(1, 3, Boundary::Open, Boundary::Open).is_err());
    }

    #[test]
    fn y_direction_alternates_with_column_parity() {
        let l = LatticeSpec::new(4, 3, Boundary::Open, Boundary::Open).unwrap();
        for b in &l.y_bonds {
            let (xs, ys) = l.coords(b.source);
            let (xt, yt) = l.coords(b.target);
            assert_eq!(xs, xt);
            match b.direction {
                YDirection::Up => {
                    assert_eq!(b.column % 2, 1);
                    assert_eq!(yt, ys + 1);
                }
                YDirection::Down => {
                    assert_eq!(b.column % 2, 0);
                    assert_eq!(ys, yt + 1);
                }
            }
        }
    }

    #[test]
    fn zero_width_disorder_vanishes() {
        let l = LatticeSpec::new(6, 4, Boundary::Open, Boundary::Open).unwrap();
        let d = DisorderRealization::sample(&l, 0.0, 99).unwrap();
        assert!(d.j_tilde.iter().chain(&d.p_tilde).chain(&d.t_tilde).all(|&a| a == 0.0));
        assert_eq!((d.j_tilde.len(), d.p_tilde.len(), d.t_tilde.len()), (5, 3, 3));
    }

    #[test]
    fn disorder_is_bounded_and_reproducible() {
        let l = LatticeSpec::new(9, 8, Boundary::Open, Boundary::Open).unwrap();
        let a = DisorderRealization::sample(&l, 2.0, 7).unwrap();
        let b = DisorderRealization::sample(&l, 2.0, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.j_tilde.iter().chain(&a.p_tilde).chain(&a.t_tilde).all(|x| x.abs() <= 1.0));
        let c = DisorderRealization::sample(&l, 2.0, 8).unwrap();
        assert_ne!(a.j_tilde, c.j_tilde);
        assert!(DisorderRealization::sample(&l, -1.0, 7).is_err());
    }

    #[test]
    fn disorder_histogram_is_uniform() {
        let l = LatticeSpec::new(9, 8, Boundary::Open, Boundary::Open).unwrap();
        let mut xs: Vec<f64> = (0..400u64)
            .flat_map(|s| {
                let d = DisorderRealization::sample(&l, 2.0, s).unwrap();
                d.j_tilde.into_iter().chain(d.p_tilde).chain(d.t_tilde)
            })
            .collect();
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        let ks = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let cdf = (x + 1.0) / 2.0;
                (cdf - i as f64 / n).abs().max((cdf - (i + 1) as f64 / n).abs())
            })
            .fold(0.0, f64::max);
        // 1% critical value of the one-sample KS statistic.
        assert!(ks < 1.63 / n.sqrt(), "KS statistic {ks}");
    }

    #[test]
    fn per_bond_layout_sizes() {
        let l = LatticeSpec::new(4, 3, Boundary::Periodic, Boundary::Open).unwrap();
        let opts = DisorderOptions { layout: DisorderLayout::PerBond, ..Default::default() };
        let d = DisorderRealization::sample_with(&l, 1.0, 3, opts).unwrap();
        assert_eq!((d.j_tilde.len(), d.p_tilde.len(), d.t_tilde.len()), (12, 6, 8));
        d.check_shape(&l).unwrap();
    }

    #[test]
    fn params_reject_non_finite() {
        assert!(ModelParams::new(f64::NAN, 0.0, 0.0, 1.0, 2).validate().is_err());
        assert!(ModelParams::new(1.0, 0.0, 0.0, 1.0, 0).validate().is_err());
        assert!(ModelParams::new(1.0, 2.0, 4.0, 0.0, 2).j0().is_err());
        assert_eq!(ModelParams::new(1.0, 2.0, 4.0, 8.0, 2).doublon_center(), -16.25);
    }
}
