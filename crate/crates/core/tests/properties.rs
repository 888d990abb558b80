mod common;

use common::*;
use num_complex::Complex64 as C64;
use pdcnet::algebra::{normal_order_word, ModeId, OperatorExpr, StateSpec};
use pdcnet::network::{apply_component, compile, detector_rate, Component, FieldMap, OrderPolicy};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn occupations(modes: usize) -> impl Strategy<Value = Vec<u32>> {
    prop::collection::vec(0u32..=8, modes)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn normal_ordering_preserves_matrix_elements(seed in any::<u64>(), modes in 1usize..=3, occ in occupations(3)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ids = test_modes(modes);
        let word = random_word(&mut rng, &ids, 6);
        let expr = normal_order_word(C64::new(1.0, 0.0), &word);
        let ket = basis_ket(&occ[..modes]);
        let direct = apply_word(&word, &ids, &ket);
        let ordered = apply_expr(&expr, &ids, &ket);
        let scale = direct.values().chain(ordered.values()).map(|a| a.norm()).fold(1.0, f64::max);
        prop_assert!(ket_distance(&direct, &ordered) <= 1e-12 * scale);
    }

    #[test]
    fn normal_ordering_is_idempotent(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ids = test_modes(3);
        let expr = &normal_order_word(random_complex(&mut rng, 1.0), &random_word(&mut rng, &ids, 6))
            + &normal_order_word(random_complex(&mut rng, 1.0), &random_word(&mut rng, &ids, 6));
        prop_assert_eq!(expr.normal_order(), expr.clone());
    }

    #[test]
    fn adjoint_is_an_involution(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ids = test_modes(3);
        let expr = normal_order_word(random_complex(&mut rng, 2.0), &random_word(&mut rng, &ids, 6));
        prop_assert_eq!(expr.adjoint().adjoint(), expr);
    }

    #[test]
    fn product_adjoint_reverses_order(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ids = test_modes(2);
        let a = normal_order_word(random_complex(&mut rng, 1.0), &random_word(&mut rng, &ids, 4));
        let b = normal_order_word(random_complex(&mut rng, 1.0), &random_word(&mut rng, &ids, 4));
        let lhs = a.multiply(&b).adjoint();
        let rhs = b.adjoint().multiply(&a.adjoint());
        prop_assert!(lhs.max_abs_diff(&rhs) < 1e-12);
    }

    #[test]
    fn coherent_expectation_matches_truncated_state(alpha_re in -1.0..1.0f64, alpha_im in -1.0..1.0f64, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = ModeId::signal("m0");
        let ids = vec![m.clone()];
        let alpha = C64::new(alpha_re, alpha_im);
        let word = random_word(&mut rng, &ids, 4);
        let expr = normal_order_word(C64::new(1.0, 0.0), &word);
        // |α⟩ truncated at 40 photons; the tail is far below tolerance.
        let mut ket = common::Ket::new();
        let mut amp = C64::new((-alpha.norm_sqr() / 2.0).exp(), 0.0);
        for n in 0..40u32 {
            ket.insert(vec![n], amp);
            amp = amp * alpha / ((n + 1) as f64).sqrt();
        }
        let image = apply_word(&word, &ids, &ket);
        let brute: C64 = image.iter().map(|(k, a)| ket.get(k).copied().unwrap_or_default().conj() * a).sum();
        let engine = expr.expectation(&StateSpec::vacuum().with_coherent(m, alpha));
        prop_assert!((brute - engine).norm() < 1e-10);
    }

    #[test]
    fn filter_chain_preserves_commutator(taus in prop::collection::vec((0.0..=1.0f64, -3.2..3.2f64), 1..4)) {
        let mode = ModeId::idler("i");
        let mut fields = FieldMap::new();
        for (k, (r, th)) in taus.iter().enumerate() {
            let f = Component::Filter {
                mode: mode.clone(),
                transmission: C64::from_polar(*r, *th),
                ancilla: ModeId::ancilla(format!("n{k}")),
            };
            fields = apply_component(&fields, &f, &OrderPolicy::default()).unwrap();
        }
        let out = fields[&mode].total();
        let comm = out.commutator(&out.adjoint());
        prop_assert_eq!(comm.len(), 1);
        prop_assert!((comm.constant() - 1.0).norm() < 1e-14);
    }

    #[test]
    fn random_network_rates_are_real_and_nonnegative(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (net, det) = random_network(&mut rng, 6);
        let fields = compile(&net, &OrderPolicy::default()).unwrap();
        let rate = detector_rate(&fields, &det, &net.initial_state).unwrap();
        prop_assert!(rate >= -1e-12, "rate {rate}");
    }
}

#[test]
fn commutator_of_distinct_modes_vanishes() {
    let a = OperatorExpr::annihilate(&ModeId::signal("x"));
    let b = OperatorExpr::create(&ModeId::idler("y"));
    assert!(a.commutator(&b).is_zero());
}
