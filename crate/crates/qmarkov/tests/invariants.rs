//! Randomized cross-module properties. Each case derives all randomness from
//! a proptest-supplied seed through the crate's own deterministic generators,
//! so failures shrink to a reproducible seed.

use std::sync::Arc;

use proptest::prelude::*;
use rand_chacha::ChaCha8Rng;

use qmarkov::algebra::{AlgebraKind, LatticeSpec, LocalStructure, SiteBasisVariant};
use qmarkov::chain::{BoundarySequence, ChainSpec, CorrelationQuery};
use qmarkov::cp::{BlockMatrix, CpMap, SampleConfig};
use qmarkov::kernel::{
    extend_with_variant, umegaki_local, verify_compat_e_e0, verify_markov_property,
    TransitionExpectation,
};
use qmarkov::linalg::{
    cr, identity, kron, min_eigenvalue, zeros, CMatrix, SpanBasis, ToleranceConfig,
};
use qmarkov::random;
use qmarkov::C64;

fn tol() -> ToleranceConfig {
    ToleranceConfig::default()
}

fn tensor_chain(sites: usize, d: usize) -> LocalStructure {
    LocalStructure::build(
        LatticeSpec {
            kind: AlgebraKind::Tensor,
            site_dims: vec![d; sites],
        },
        &tol(),
    )
    .unwrap()
}

fn fermi_chain(sites: usize) -> LocalStructure {
    LocalStructure::build(
        LatticeSpec {
            kind: AlgebraKind::Fermi,
            site_dims: vec![1; sites],
        },
        &tol(),
    )
    .unwrap()
}

fn m_units(d: usize) -> Arc<SpanBasis> {
    Arc::new(SpanBasis::full_matrix_units(d))
}

fn haar_like_unitary(rng: &mut ChaCha8Rng, d: usize) -> CMatrix {
    random::complex_matrix(rng, d, d).qr().q()
}

fn psd_grid_left(rng: &mut ChaCha8Rng, m: usize, d: usize) -> BlockMatrix {
    let rows: Vec<Vec<CMatrix>> = (0..m)
        .map(|_| {
            (0..m)
                .map(|_| kron(&random::complex_matrix(rng, d, d), &identity(d)))
                .collect()
        })
        .collect();
    BlockMatrix::from_factor(&BlockMatrix::new(rows).unwrap())
}

fn psd_grid_right(rng: &mut ChaCha8Rng, m: usize, d: usize) -> BlockMatrix {
    let rows: Vec<Vec<CMatrix>> = (0..m)
        .map(|_| {
            (0..m)
                .map(|_| kron(&identity(d), &random::complex_matrix(rng, d, d)))
                .collect()
        })
        .collect();
    BlockMatrix::from_factor(&BlockMatrix::new(rows).unwrap())
}

fn psd_grid(rng: &mut ChaCha8Rng, m: usize, d: usize) -> BlockMatrix {
    let rows: Vec<Vec<CMatrix>> = (0..m)
        .map(|_| (0..m).map(|_| random::complex_matrix(rng, d, d)).collect())
        .collect();
    BlockMatrix::from_factor(&BlockMatrix::new(rows).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 20, failure_persistence: None, .. ProptestConfig::default()
    })]

    /// The full Choi certificate and the sampled restricted certificate must
    /// never contradict each other: Kraus-built maps pass both, while
    /// unitarily twisted transposes fail the Choi test outright.
    #[test]
    fn positivity_certificates_agree_on_known_families(
        seed in any::<u64>(),
        d in 2usize..=3,
        kraus_count in 1usize..=3,
        cp in any::<bool>(),
    ) {
        let mut rng = random::rng(seed);
        let units = m_units(d);
        if cp {
            let ops = random::kraus_family(&mut rng, kraus_count, d, d);
            let map = CpMap::from_kraus("kraus", units.clone(), units.clone(), &ops, &tol()).unwrap();
            let full = map.completely_positive(&tol()).unwrap();
            prop_assert!(full.positive, "choi min eig {}", full.min_eigenvalue);
            let sampled = map
                .completely_positive_restricted(&units, &SampleConfig::with_seed(seed ^ 0x9e37), &tol())
                .unwrap();
            prop_assert!(sampled.positive, "sampled min eig {}", sampled.min_eigenvalue);
        } else {
            let u = haar_like_unitary(&mut rng, d);
            let images: Vec<CMatrix> = units
                .elements()
                .iter()
                .map(|e| &u * e.transpose() * u.adjoint())
                .collect();
            let map = CpMap::from_images("twisted transpose", units.clone(), units, images, &tol()).unwrap();
            let full = map.completely_positive(&tol()).unwrap();
            prop_assert!(!full.positive);
            prop_assert!(full.min_eigenvalue < -1e-6, "min eig {}", full.min_eigenvalue);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 24, failure_persistence: None, .. ProptestConfig::default()
    })]

    /// Blockwise products of PSD grids with mutually commuting entries stay
    /// PSD, for any block count and factor dimension in range.
    #[test]
    fn schur_of_commuting_psd_grids_is_psd(
        seed in any::<u64>(),
        m in 2usize..=4,
        d in 1usize..=2,
    ) {
        let mut rng = random::rng(seed);
        let a = psd_grid_left(&mut rng, m, d);
        let b = psd_grid_right(&mut rng, m, d);
        let assembled = a.schur(&b).unwrap().assemble();
        let min = min_eigenvalue(&assembled, &tol()).unwrap();
        prop_assert!(min >= -1e-9, "min eigenvalue {min}");
    }

    /// The tensor variant needs no commutation assumption at all.
    #[test]
    fn schur_tensor_of_psd_grids_is_psd(
        seed in any::<u64>(),
        m in 2usize..=3,
        da in 1usize..=3,
        db in 1usize..=3,
    ) {
        let mut rng = random::rng(seed);
        let a = psd_grid(&mut rng, m, da);
        let b = psd_grid(&mut rng, m, db);
        let assembled = a.schur_tensor(&b).unwrap().assemble();
        let min = min_eigenvalue(&assembled, &tol()).unwrap();
        prop_assert!(min >= -1e-9, "min eigenvalue {min}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 6, failure_persistence: None, .. ProptestConfig::default()
    })]

    /// The extension construction only uses a site basis as scaffolding:
    /// swapping the generator-ordering convention must not change the map.
    #[test]
    fn fermi_extension_is_independent_of_the_site_basis_variant(
        seed in any::<u64>(),
        bond in 0usize..=1,
    ) {
        let chain = fermi_chain(3);
        let mut rng = random::rng(seed);
        let e = TransitionExpectation::random_even(&chain, bond, &mut rng, 2, &tol()).unwrap();
        let standard = extend_with_variant(&e, &chain, SiteBasisVariant::Standard, &tol()).unwrap();
        let led = extend_with_variant(&e, &chain, SiteBasisVariant::AnnihilatorLed, &tol()).unwrap();
        let d = standard.prefix().ambient_dim();
        for probe in 0..4 {
            let mut prng = random::rng_for(seed ^ 0xabcd, probe);
            let x = random::complex_matrix(&mut prng, d, d);
            let a = standard.map().apply(&x, &tol()).unwrap();
            let b = led.map().apply(&x, &tol()).unwrap();
            prop_assert!((a - b).norm() < 1e-9 * (1.0 + x.norm()));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 12, failure_persistence: None, .. ProptestConfig::default()
    })]

    /// Compatibility with the even projection and parity covariance are
    /// equivalent conditions: verdicts agree whether or not an odd
    /// perturbation is injected, and the perturbation flips both at once.
    #[test]
    fn odd_perturbations_flip_compat_and_evenness_together(
        seed in any::<u64>(),
        perturb in any::<bool>(),
    ) {
        let chain = fermi_chain(3);
        let mut rng = random::rng(seed);
        let e = TransitionExpectation::random_even(&chain, 1, &mut rng, 2, &tol()).unwrap();
        let v_block = kron(&chain.site_parity_local(1), &chain.site_parity_local(2));
        let odd_index = e
            .map()
            .domain()
            .elements()
            .iter()
            .position(|x| ((&v_block * x * &v_block) + x).norm() < 1e-9 * x.norm())
            .expect("fermi block basis contains fully odd elements");
        let mut images = e.map().images().to_vec();
        let amp = if perturb { 0.4 } else { 0.0 };
        let mut odd_local = zeros(2, 2);
        odd_local[(0, 1)] = cr(amp);
        images[odd_index] += &odd_local;
        let kernel = TransitionExpectation::from_images_unchecked(&chain, 1, images, &tol()).unwrap();
        let report = verify_compat_e_e0(&kernel, &chain, &tol()).unwrap();
        prop_assert!(report.equivalent);
        prop_assert_eq!(report.compat.pass, !perturb);
        let evenness = report.evenness.expect("fermi blocks carry the evenness verdict");
        prop_assert_eq!(evenness.pass, !perturb);
    }

    /// Even kernels keep their images inside the parity-even part of the
    /// target site, which is exactly the admissible range past site zero.
    #[test]
    fn even_fermi_kernels_keep_even_markov_ranges(seed in any::<u64>()) {
        let chain = fermi_chain(3);
        let mut rng = random::rng(seed);
        let e = TransitionExpectation::random_even(&chain, 1, &mut rng, 2, &tol()).unwrap();
        let report = verify_markov_property(&e, &chain, &tol()).unwrap();
        prop_assert!(report.pass, "range residual {}", report.worst_residual);
        let v = chain.site_parity_local(1);
        for img in e.map().images() {
            prop_assert!(((&v * img * &v) - img).norm() < 1e-9 * (1.0 + img.norm()));
        }
    }

    /// Correlation values are linear in every observable slot.
    #[test]
    fn chain_evaluation_is_linear_in_each_observable(
        seed in any::<u64>(),
        slot in 0usize..=1,
    ) {
        let structure = tensor_chain(3, 2);
        let mut rng = random::rng(seed);
        let kernels: Vec<TransitionExpectation> = (0..2)
            .map(|n| TransitionExpectation::random_unital(&structure, n, &mut rng, 2, &tol()).unwrap())
            .collect();
        let rho0 = random::density(&mut rng, 2);
        let spec = ChainSpec::new(structure, kernels, rho0, None).unwrap();

        let x = random::complex_matrix(&mut rng, 2, 2);
        let y = random::complex_matrix(&mut rng, 2, 2);
        let other = random::complex_matrix(&mut rng, 2, 2);
        let alpha = C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
        let beta = C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
        let combo = &x * alpha + &y * beta;

        let place = |a: &CMatrix| -> Vec<CMatrix> {
            if slot == 0 {
                vec![a.clone(), other.clone()]
            } else {
                vec![other.clone(), a.clone()]
            }
        };
        let eval = |obs: Vec<CMatrix>| {
            spec.evaluate(&CorrelationQuery { observables: obs, horizon_extension: 0 })
                .unwrap()
        };
        let lhs = eval(place(&combo));
        let rhs = alpha * eval(place(&x)) + beta * eval(place(&y));
        let scale = (1.0 + x.norm() + y.norm()) * (1.0 + other.norm());
        prop_assert!((lhs - rhs).norm() < 1e-9 * scale, "lhs {lhs} rhs {rhs}");
    }

    /// Kraus operators extracted from a CP map rebuild the same map.
    #[test]
    fn kraus_decomposition_round_trips_random_cp_maps(
        seed in any::<u64>(),
        d in 2usize..=3,
        count in 1usize..=3,
    ) {
        let mut rng = random::rng(seed);
        let units = m_units(d);
        let ops = random::kraus_family(&mut rng, count, d, d);
        let map = CpMap::from_kraus("forward", units.clone(), units.clone(), &ops, &tol()).unwrap();
        let extracted = map.kraus_decomposition(&tol()).unwrap();
        let rebuilt = CpMap::from_kraus("rebuilt", units.clone(), units, &extracted, &tol()).unwrap();
        for (a, b) in map.images().iter().zip(rebuilt.images()) {
            prop_assert!((a - b).norm() < 1e-8 * (1.0 + a.norm()));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 16, failure_persistence: None, .. ProptestConfig::default()
    })]

    /// Diagonal correlation values of a classical kernel chain equal the
    /// path-sum of the underlying Markov chain, computed here directly.
    #[test]
    fn classical_chain_joints_match_the_path_sum(
        seed in any::<u64>(),
        d in 2usize..=3,
        raw_idx in prop::collection::vec(0usize..3, 4),
    ) {
        let structure = tensor_chain(4, d);
        let mut rng = random::rng(seed);
        let p = random::stochastic_matrix(&mut rng, d);
        let kernels: Vec<TransitionExpectation> = (0..3)
            .map(|n| TransitionExpectation::classical(&structure, n, &p, &tol()).unwrap())
            .collect();
        let pi = random::probability_vector(&mut rng, d);
        let mut rho0 = zeros(d, d);
        for (i, w) in pi.iter().enumerate() {
            rho0[(i, i)] = cr(*w);
        }
        let spec = ChainSpec::new(structure, kernels, rho0, None).unwrap();

        let idx: Vec<usize> = raw_idx.iter().map(|r| r % d).collect();
        let obs: Vec<CMatrix> = idx
            .iter()
            .map(|&i| {
                let mut m = zeros(d, d);
                m[(i, i)] = cr(1.0);
                m
            })
            .collect();
        let value = spec
            .evaluate(&CorrelationQuery { observables: obs, horizon_extension: 0 })
            .unwrap();
        let mut oracle = pi[idx[0]];
        for t in 0..3 {
            oracle *= p[(idx[t], idx[t + 1])].re;
        }
        prop_assert!((value.re - oracle).abs() < 1e-10, "value {} oracle {}", value.re, oracle);
        prop_assert!(value.im.abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 6, failure_persistence: None, .. ProptestConfig::default()
    })]

    /// The reconstructed finite-volume density matrix represents the same
    /// functional as nested kernel evaluation, on arbitrary product
    /// observables rather than just the basis used to solve for it.
    #[test]
    fn reconstructed_densities_match_direct_evaluation(seed in any::<u64>()) {
        let structure = tensor_chain(3, 2);
        let mut rng = random::rng(seed);
        let psi = random::density(&mut rng, 2);
        let kernels: Vec<TransitionExpectation> = (0..2)
            .map(|n| TransitionExpectation::product_state(&structure, n, &psi, &tol()).unwrap())
            .collect();
        let rho0 = random::density(&mut rng, 2);
        let spec = ChainSpec::new(structure, kernels, rho0, None).unwrap();
        let state = spec.density_matrix(2).unwrap();
        prop_assert!(state.trace_residual < 1e-10);
        prop_assert!(state.min_eigenvalue > -1e-9);
        for _ in 0..5 {
            let xs: Vec<CMatrix> = (0..3).map(|_| random::complex_matrix(&mut rng, 2, 2)).collect();
            let direct = spec
                .evaluate(&CorrelationQuery { observables: xs.clone(), horizon_extension: 0 })
                .unwrap();
            let via = (&state.rho * kron(&kron(&xs[0], &xs[1]), &xs[2])).trace();
            prop_assert!((direct - via).norm() < 1e-9 * (1.0 + direct.norm()));
        }
    }

    /// The canonical block projection passes its own conditional-expectation
    /// audit on every lattice and bond in range.
    #[test]
    fn umegaki_projection_verifies_on_small_fermi_lattices(
        seed in any::<u64>(),
        sites in 2usize..=3,
    ) {
        let chain = fermi_chain(sites);
        let bond = (seed as usize) % (sites - 1);
        let e0 = umegaki_local(&chain, bond).unwrap();
        let report = e0.verify_umegaki(&SampleConfig::with_seed(seed), &tol()).unwrap();
        let failure = report.first_failure().map(|(name, c)| (name, c.residual));
        prop_assert!(report.pass(), "first failure {failure:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 10, failure_persistence: None, .. ProptestConfig::default()
    })]

    /// For unit-preserving kernels the trivial boundary is exact: reported
    /// martingale residuals vanish, every element is PSD, and the homogeneous
    /// solver independently lands on the identity.
    #[test]
    fn unital_kernels_admit_the_identity_boundary(seed in any::<u64>()) {
        let structure = tensor_chain(3, 2);
        let mut rng = random::rng(seed);
        let kernel = TransitionExpectation::random_unital(&structure, 0, &mut rng, 2, &tol()).unwrap();
        let kernels = vec![
            kernel.clone(),
            kernel.replicate(&structure, 1, &tol()).unwrap(),
        ];
        let trivial = BoundarySequence::trivial(&structure, &kernels, &tol()).unwrap();
        for r in trivial.martingale_residuals() {
            prop_assert!(*r < 1e-9, "martingale residual {r}");
        }
        for b in trivial.elements() {
            prop_assert!(min_eigenvalue(b, &tol()).unwrap() > -1e-9);
        }
        let solved = BoundarySequence::solve_homogeneous(&structure, &kernels, seed, &tol()).unwrap();
        for b in solved.elements() {
            prop_assert!((b - identity(2)).norm() < 1e-8);
        }
    }
}
