//! Fixed-N bosonic Fock basis.
//!
//! States are ordered ascending-lexicographically on the occupation vector, so
//! `(0, …, 0, N)` is ordinal 0 and `(N, 0, …, 0)` is the last ordinal.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// Largest basis the enumerator will allocate unless told otherwise.
pub const DEFAULT_BASIS_CAP: u128 = 5_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FockState {
    pub occupations: Vec<u8>,
}

impl FockState {
    pub fn new(occupations: Vec<u8>) -> Self {
        FockState { occupations }
    }

    pub fn particles(&self) -> usize {
        self.occupations.iter().map(|&n| n as usize).sum()
    }
}

/// Site and double occupations `n_r` and `m_r = n_r(n_r − 1)`.
pub fn number_operators(state: &FockState) -> (Vec<f64>, Vec<f64>) {
    let n: Vec<f64> = state.occupations.iter().map(|&k| k as f64).collect();
    let m = n.iter().map(|&k| k * (k - 1.0)).collect();
    (n, m)
}

/// `a†_i a_j`; `None` when site `j` is empty.
pub fn apply_hop(state: &FockState, i: usize, j: usize) -> Result<Option<(f64, FockState)>> {
    check_pair(state, i, j)?;
    let mut occ = state.occupations.clone();
    Ok(hop_in_place(&mut occ, i, j).map(|c| (c, FockState::new(occ))))
}

/// `a†_i a†_i a_j a_j`; `None` when site `j` holds fewer than two bosons.
pub fn apply_pair_hop(state: &FockState, i: usize, j: usize) -> Result<Option<(f64, FockState)>> {
    check_pair(state, i, j)?;
    let mut occ = state.occupations.clone();
    Ok(pair_hop_in_place(&mut occ, i, j).map(|c| (c, FockState::new(occ))))
}

fn check_pair(state: &FockState, i: usize, j: usize) -> Result<()> {
    let sites = state.occupations.len();
    for site in [i, j] {
        if site >= sites {
            return Err(Error::SiteOutOfRange { site, sites });
        }
    }
    if i == j {
        return Err(Error::Param(format!("hop endpoints coincide at site {i}")));
    }
    Ok(())
}

pub(crate) fn hop_in_place(occ: &mut [u8], i: usize, j: usize) -> Option<f64> {
    let nj = occ[j] as f64;
    if nj == 0.0 {
        return None;
    }
    let ni = occ[i] as f64;
    occ[j] -= 1;
    occ[i] += 1;
    Some(((ni + 1.0) * nj).sqrt())
}

pub(crate) fn pair_hop_in_place(occ: &mut [u8], i: usize, j: usize) -> Option<f64> {
    let nj = occ[j] as f64;
    if nj < 2.0 {
        return None;
    }
    let ni = occ[i] as f64;
    occ[j] -= 2;
    occ[i] += 2;
    Some(((ni + 1.0) * (ni + 2.0) * nj * (nj - 1.0)).sqrt())
}

/// `C(n, k)` in 128-bit arithmetic; `None` on overflow.
pub fn binomial(n: u128, k: u128) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.checked_mul(n - i)? / (i + 1);
    }
    Some(acc)
}

/// Number of ways to put `k` bosons on `m` sites.
fn multiset_count(m: u128, k: u128) -> Option<u128> {
    if m == 0 {
        return Some(if k == 0 { 1 } else { 0 });
    }
    binomial(m + k - 1, k)
}

/// How occupation vectors are mapped back to ordinals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndexStrategy {
    /// Combinatorial ranking; no storage beyond a count table.
    Combinadic,
    Hash,
}

#[derive(Debug, Clone)]
pub struct FockBasis {
    sites: usize,
    particles: usize,
    states: Vec<FockState>,
    strategy: IndexStrategy,
    /// `counts[m][k]` = multisets of `k` bosons over `m` sites.
    counts: Vec<Vec<usize>>,
    index: HashMap<Vec<u8>, usize>,
}

impl FockBasis {
    /// Combinadic ranking for `N ≤ 3`, hashing otherwise.
    pub fn new(sites: usize, particles: usize) -> Result<Self> {
        Self::with_options(sites, particles, DEFAULT_BASIS_CAP, None)
    }

    pub fn with_options(
        sites: usize,
        particles: usize,
        cap: u128,
        strategy: Option<IndexStrategy>,
    ) -> Result<Self> {
        if sites == 0 || particles == 0 {
            return Err(Error::Param(format!(
                "basis needs at least one site and one particle, got M={sites}, N={particles}"
            )));
        }
        if particles > u8::MAX as usize {
            return Err(Error::Param(format!("N = {particles} exceeds occupation range")));
        }
        let dim = multiset_count(sites as u128, particles as u128).unwrap_or(u128::MAX);
        if dim > cap {
            return Err(Error::Capacity { dim, cap });
        }
        let strategy = strategy.unwrap_or(if particles <= 3 {
            IndexStrategy::Combinadic
        } else {
            IndexStrategy::Hash
        });
        let counts = (0..=sites)
            .map(|m| {
                (0..=particles)
                    .map(|k| multiset_count(m as u128, k as u128).unwrap() as usize)
                    .collect()
            })
            .collect();

        let mut states = Vec::with_capacity(dim as usize);
        let mut occ = vec![0u8; sites];
        occ[sites - 1] = particles as u8;
        loop {
            states.push(FockState::new(occ.clone()));
            if !next_lex(&mut occ) {
                break;
            }
        }
        debug_assert_eq!(states.len() as u128, dim);

        let index = match strategy {
            IndexStrategy::Hash => states
                .iter()
                .enumerate()
                .map(|(k, s)| (s.occupations.clone(), k))
                .collect(),
            IndexStrategy::Combinadic => HashMap::new(),
        };
        Ok(FockBasis { sites, particles, states, strategy, counts, index })
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn particles(&self) -> usize {
        self.particles
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[FockState] {
        &self.states
    }

    pub fn state(&self, k: usize) -> &FockState {
        &self.states[k]
    }

    pub fn strategy(&self) -> IndexStrategy {
        self.strategy
    }

    /// Ordinal of an occupation vector, `None` if it is not in this basis.
    pub fn index_of(&self, occ: &[u8]) -> Option<usize> {
        if occ.len() != self.sites || occ.iter().map(|&n| n as usize).sum::<usize>() != self.particles {
            return None;
        }
        match self.strategy {
            IndexStrategy::Hash => self.index.get(occ).copied(),
            IndexStrategy::Combinadic => Some(self.rank(occ)),
        }
    }

    /// Ordinal from the count table. Lexicographically smaller vectors agree on a prefix and
    /// then hold fewer bosons at the first differing site.
    fn rank(&self, occ: &[u8]) -> usize {
        let mut remaining = self.particles;
        let mut rank = 0;
        for (i, &n) in occ.iter().enumerate() {
            if n == 0 {
                continue;
            }
            let rest = self.sites - i - 1;
            for v in 0..n as usize {
                rank += self.counts[rest][remaining - v];
            }
            remaining -= n as usize;
            if remaining == 0 {
                break;
            }
        }
        rank
    }

    /// Ordinal of the state with all bosons on `site`.
    pub fn condensed_index(&self, site: usize) -> Option<usize> {
        let mut occ = vec![0u8; self.sites];
        *occ.get_mut(site)? = self.particles as u8;
        self.index_of(&occ)
    }
}

/// Advances to the lexicographic successor with the same sum.
fn next_lex(occ: &mut [u8]) -> bool {
    let m = occ.len();
    // Rightmost position that can grow by taking one boson from the suffix.
    let mut suffix: u32 = occ[m - 1] as u32;
    for i in (0..m - 1).rev() {
        if suffix > 0 {
            occ[i] += 1;
            let rest = suffix - 1;
            for o in occ[i + 1..].iter_mut() {
                *o = 0;
            }
            occ[m - 1] = rest as u8;
            return true;
        }
        suffix += occ[i] as u32;
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dimensions() {
        assert_eq!(FockBasis::new(4, 2).unwrap().dim(), 10);
        assert_eq!(FockBasis::new(196, 2).unwrap().dim(), 19306);
        assert_eq!(FockBasis::new(20, 3).unwrap().dim(), 1540);
    }

    #[test]
    fn ordering_is_lexicographic() {
        let b = FockBasis::new(3, 2).unwrap();
        let got: Vec<Vec<u8>> = b.states().iter().map(|s| s.occupations.clone()).collect();
        let want = vec![
            vec![0, 0, 2],
            vec![0, 1, 1],
            vec![0, 2, 0],
            vec![1, 0, 1],
            vec![1, 1, 0],
            vec![2, 0, 0],
        ];
        assert_eq!(got, want);
        assert!(b.states().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn both_strategies_round_trip() {
        for (m, n) in [(5, 1), (6, 2), (5, 3), (4, 4), (7, 5)] {
            for strategy in [IndexStrategy::Combinadic, IndexStrategy::Hash] {
                let b = FockBasis::with_options(m, n, DEFAULT_BASIS_CAP, Some(strategy)).unwrap();
                for (k, s) in b.states().iter().enumerate() {
                    assert_eq!(b.index_of(&s.occupations), Some(k));
                }
            }
        }
    }

    #[test]
    fn foreign_vectors_have_no_index() {
        let b = FockBasis::new(4, 2).unwrap();
        assert_eq!(b.index_of(&[1, 0, 0, 0]), None);
        assert_eq!(b.index_of(&[1, 1, 0]), None);
    }

    #[test]
    fn capacity_error_names_dimension() {
        match FockBasis::with_options(100, 3, 1000, None) {
            Err(Error::Capacity { dim, cap }) => {
                assert_eq!(dim, 171700);
                assert_eq!(cap, 1000);
            }
            other => panic!("expected capacity error, got {other:?}"),
        }
    }

    #[test]
    fn ladder_coefficients() {
        let s = FockState::new(vec![0, 2]);
        let (c, t) = apply_hop(&s, 0, 1).unwrap().unwrap();
        assert!((c - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(t.occupations, vec![1, 1]);
        let (c, t) = apply_hop(&t, 0, 1).unwrap().unwrap();
        assert!((c - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(t.occupations, vec![2, 0]);
        assert!(apply_hop(&FockState::new(vec![1, 0]), 0, 1).unwrap().is_none());
        assert!(apply_hop(&s, 0, 2).is_err());
        assert!(apply_hop(&s, 1, 1).is_err());
    }

    #[test]
    fn pair_coefficients() {
        let (c, t) = apply_pair_hop(&FockState::new(vec![0, 2]), 0, 1).unwrap().unwrap();
        assert_eq!((c, t.occupations), (2.0, vec![2, 0]));
        let (c, t) = apply_pair_hop(&FockState::new(vec![1, 2]), 0, 1).unwrap().unwrap();
        assert!((c - 12f64.sqrt()).abs() < 1e-14);
        assert_eq!(t.occupations, vec![3, 0]);
        assert!(apply_pair_hop(&FockState::new(vec![0, 1]), 0, 1).unwrap().is_none());
    }

    #[test]
    fn occupation_eigenvalues() {
        let (n, m) = number_operators(&FockState::new(vec![2, 0, 3, 1]));
        assert_eq!(n, vec![2.0, 0.0, 3.0, 1.0]);
        assert_eq!(m, vec![2.0, 0.0, 6.0, 0.0]);
    }
}
