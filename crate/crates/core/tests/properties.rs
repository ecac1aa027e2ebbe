use doublon_core::basis::{apply_hop, binomial, FockBasis, IndexStrategy};
use doublon_core::effective::compare_spectra;
use doublon_core::experiment::pin_floats;
use doublon_core::fmt::format_g;
use doublon_core::hamiltonian::assemble;
use doublon_core::lu::ShiftedLu;
use doublon_core::model::{Boundary, DisorderRealization, LatticeSpec, ModelParams};
use doublon_core::observables::{corner_weight, density_m, density_n, doublon_weight, ObservableGrid};
use doublon_core::sparse::{hermiticity_defect, SparseComplexMatrix};
use num_complex::Complex64;
use proptest::prelude::*;

fn boundary() -> impl Strategy<Value = Boundary> {
    prop_oneof![Just(Boundary::Open), Just(Boundary::Periodic), (0.0..6.3f64).prop_map(Boundary::Twisted)]
}

fn lattice() -> impl Strategy<Value = LatticeSpec> {
    (1usize..=2, 2usize..=3, boundary(), boundary(), any::<bool>()).prop_map(|(half, ly, bx, by, odd)| {
        let bx = if odd { Boundary::Open } else { bx };
        let lx = 2 * half + usize::from(odd);
        LatticeSpec::new(lx, ly, bx, by).unwrap()
    })
}

fn params() -> impl Strategy<Value = ModelParams> {
    (-2.0..2.0f64, -2.0..2.0f64, -5.0..5.0f64, 1.0..10.0f64, -1.0..1.0f64)
        .prop_map(|(j, t, p, u, v)| ModelParams::new(j, t, p, u, 2).with_v(v))
}

fn unit_vector(dim: usize, seed: &[f64]) -> Vec<Complex64> {
    let mut v: Vec<Complex64> =
        (0..dim).map(|k| Complex64::new(seed[k % seed.len()] + k as f64 * 0.01, seed[(k + 1) % seed.len()])).collect();
    let n = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    v.iter_mut().for_each(|z| *z /= n);
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn basis_rank_round_trips(sites in 1usize..=7, n in 1usize..=4) {
        let basis = FockBasis::new(sites, n).unwrap();
        let hashed = FockBasis::with_options(sites, n, 1_000_000u128, Some(IndexStrategy::Hash)).unwrap();
        prop_assert_eq!(basis.dim() as u128, binomial((sites + n - 1) as u128, n as u128).unwrap());
        prop_assert_eq!(basis.dim(), hashed.dim());
        for k in 0..basis.dim() {
            let occ = &basis.state(k).occupations;
            prop_assert_eq!(occ.iter().map(|&x| x as usize).sum::<usize>(), n);
            prop_assert_eq!(basis.index_of(occ), Some(k));
            prop_assert_eq!(hashed.index_of(occ), Some(k));
        }
        for w in basis.states().windows(2) {
            prop_assert!(w[0].occupations < w[1].occupations);
        }
    }

    #[test]
    fn hops_conserve_number_with_bosonic_amplitude(sites in 2usize..=5, n in 1usize..=3, i in 0usize..5, j in 0usize..5, k in 0usize..1000) {
        prop_assume!(i < sites && j < sites && i != j);
        let basis = FockBasis::new(sites, n).unwrap();
        let s = basis.state(k % basis.dim());
        match apply_hop(s, i, j).unwrap() {
            None => prop_assert_eq!(s.occupations[j], 0),
            Some((amp, t)) => {
                prop_assert_eq!(t.particles(), n);
                let (ni, nj) = (s.occupations[i] as f64, s.occupations[j] as f64);
                prop_assert!((amp - ((ni + 1.0) * nj).sqrt()).abs() < 1e-12);
                let (back, orig) = apply_hop(&t, j, i).unwrap().unwrap();
                prop_assert_eq!(&orig, s);
                prop_assert!((back - amp).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn one_way_hopping_is_the_only_non_hermitian_term(lat in lattice(), p in params()) {
        let basis = FockBasis::new(lat.num_sites(), 2).unwrap();
        let mut lat0 = lat.clone();
        if matches!(lat0.bc_y, Boundary::Twisted(_)) {
            lat0 = lat0.with_bc_y(Boundary::Periodic).unwrap();
        }
        let mut hermitian = p;
        hermitian.t = 0.0;
        let h = assemble(&hermitian, &lat0, &basis, None).unwrap();
        prop_assert!(hermiticity_defect(&h) <= 1e-12 * h.frobenius_norm().max(1.0));
    }

    #[test]
    fn twist_is_two_pi_periodic(lat in lattice(), p in params()) {
        prop_assume!(lat.bc_y.wraps());
        let basis = FockBasis::new(lat.num_sites(), 2).unwrap();
        let a = assemble(&p, &lat.with_bc_y(Boundary::Twisted(0.0)).unwrap(), &basis, None).unwrap();
        let b = assemble(&p, &lat.with_bc_y(Boundary::Twisted(std::f64::consts::TAU)).unwrap(), &basis, None).unwrap();
        for (r, c, x) in a.iter() {
            prop_assert!((x - b.get(r, c)).norm() < 1e-12);
        }
        prop_assert_eq!(a.nnz(), b.nnz());
    }

    #[test]
    fn densities_are_consistent(lat in lattice(), seed in prop::collection::vec(-1.0..1.0f64, 3..7)) {
        let basis = FockBasis::new(lat.num_sites(), 2).unwrap();
        let v = unit_vector(basis.dim(), &seed);
        let n = density_n(&v, &basis, &lat).unwrap();
        let m = density_m(&v, &basis, &lat).unwrap();
        let dw = doublon_weight(&v, &basis).unwrap();
        prop_assert!((n.sum() - 2.0).abs() < 1e-10);
        prop_assert!(m.values.iter().all(|&x| x >= 0.0));
        prop_assert!((m.sum() / 2.0 - dw).abs() < 1e-10);
        prop_assert!((0.0..=1.0).contains(&dw));
    }

    #[test]
    fn corner_weight_is_reflection_invariant(lx in 2usize..7, ly in 2usize..7, vals in prop::collection::vec(0.0..1.0f64, 36)) {
        let values: Vec<f64> = vals[..lx * ly].to_vec();
        let grid = ObservableGrid::new(lx, ly, doublon_core::observables::GridKind::NDensity, values.clone());
        let mirrored: Vec<f64> = (0..lx * ly).map(|s| { let (x, y) = (s % lx, s / lx); values[y * lx + (lx - 1 - x)] }).collect();
        let flipped = ObservableGrid::new(lx, ly, grid.kind, mirrored);
        let (a, b) = (corner_weight(&grid, 1.0).unwrap(), corner_weight(&flipped, 1.0).unwrap());
        prop_assert!(a >= 0.0);
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
    }

    #[test]
    fn disorder_draws_are_bounded_and_reproducible(lat in lattice(), w in 0.0..5.0f64, seed in any::<u64>()) {
        let a = DisorderRealization::sample(&lat, w, seed).unwrap();
        let b = DisorderRealization::sample(&lat, w, seed).unwrap();
        prop_assert_eq!(&a, &b);
        for x in a.j_tilde.iter().chain(&a.p_tilde).chain(&a.t_tilde) {
            prop_assert!(x.abs() <= w / 2.0);
        }
    }

    #[test]
    fn log_det_matches_dense_determinant(entries in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 16), sr in -0.5..0.5f64, si in -0.5..0.5f64) {
        let mut trip = Vec::new();
        for (k, &(re, im)) in entries.iter().enumerate() {
            let (r, c) = (k / 4, k % 4);
            let diag = if r == c { 3.0 } else { 0.0 };
            trip.push((r, c, Complex64::new(re + diag, im)));
        }
        let a = SparseComplexMatrix::from_triplets(4, trip).unwrap();
        let shift = Complex64::new(sr, si);
        let det = a.shifted(shift).to_dense().determinant();
        let det = Complex64::new(det.re, det.im);
        let ld = ShiftedLu::factor(&a, shift).unwrap().log_det();
        prop_assert!((ld.log_abs - det.norm().ln()).abs() < 1e-10);
        let dphi = (ld.phase - det.arg()).rem_euclid(std::f64::consts::TAU);
        prop_assert!(dphi.min(std::f64::consts::TAU - dphi) < 1e-10);
    }

    #[test]
    fn permuted_spectra_match_exactly(vals in prop::collection::vec((-5.0..5.0f64, -1.0..1.0f64), 1..12), rot in 0usize..12) {
        let a: Vec<Complex64> = vals.iter().map(|&(r, i)| Complex64::new(r, i)).collect();
        let mut b = a.clone();
        b.rotate_left(rot % a.len());
        let report = compare_spectra(&a, &b);
        prop_assert!(report.max < 1e-12);
        prop_assert_eq!(report.pairs.len(), a.len());
    }

    #[test]
    fn g_format_round_trips(x in any::<f64>().prop_filter("finite", |x| x.is_finite())) {
        prop_assert_eq!(format_g(x, 17).parse::<f64>().unwrap(), x);
    }

    #[test]
    fn float_pinning_is_idempotent(xs in prop::collection::vec(-1e6..1e6f64, 0..8)) {
        let mut v = serde_json::json!(xs);
        pin_floats(&mut v);
        let once = v.to_string();
        pin_floats(&mut v);
        prop_assert_eq!(once, v.to_string());
    }
}
