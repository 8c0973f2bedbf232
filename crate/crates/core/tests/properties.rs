//! Property tests for the evidential types, losses, and serialization.

use betau_core::evidence::{
    beta_from_evidence, expected_probability, frame_uncertainty, opinion_from_evidence, Evidence,
};
use betau_core::loss::{asl_point, ebce_baseline, frame_loss, LossConfig};
use betau_core::quadrature::{quadrature_expectation, QuadratureSpec};
use betau_core::region::{combo_decode, combo_index};
use betau_core::tensor::{read_tensors, write_tensors, Graph, ParamStore, Tensor};
use proptest::prelude::*;

fn evidence_strategy() -> impl Strategy<Value = Evidence> {
    (0.0..1e6f64, 0.0..1e6f64).prop_map(|(p, n)| Evidence::new(p, n).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn opinion_masses_form_a_distribution(ev in evidence_strategy()) {
        let op = opinion_from_evidence(ev);
        prop_assert!(op.belief >= 0.0 && op.belief <= 1.0);
        prop_assert!(op.disbelief >= 0.0 && op.disbelief <= 1.0);
        prop_assert!(op.uncertainty >= 0.0 && op.uncertainty <= 1.0);
        prop_assert!((op.belief + op.disbelief + op.uncertainty - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn uncertainty_strictly_decreases_with_evidence(
        pos in 0.01..100.0f64,
        neg in 0.01..100.0f64,
        scale in 1.01..50.0f64,
    ) {
        let base = opinion_from_evidence(Evidence::new(pos, neg).unwrap());
        let scaled = opinion_from_evidence(Evidence::new(pos * scale, neg * scale).unwrap());
        prop_assert!(scaled.uncertainty < base.uncertainty);
    }

    #[test]
    fn combo_index_is_a_bijection(bits in proptest::collection::vec(0u8..2, 1..6)) {
        let idx = combo_index(&bits);
        prop_assert_eq!(combo_decode(idx, bits.len()), bits);
    }

    #[test]
    fn asl_ignores_easy_negatives(p in 1e-6..0.2f64, gn in 1u32..5) {
        let cfg = LossConfig { gamma_pos: 1, gamma_neg: gn, shift_c: 0.2, ..LossConfig::defaults(1) };
        let loss = asl_point(p.min(0.199_999), false, &cfg).unwrap();
        prop_assert_eq!(loss, 0.0);
    }

    #[test]
    fn ebce_is_label_symmetric(a in 1.0..100.0f64, b in 1.0..100.0f64) {
        let lhs = ebce_baseline(a, b, true).unwrap();
        let rhs = ebce_baseline(b, a, false).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn frame_loss_is_permutation_invariant(
        params in proptest::collection::vec((1.0..20.0f64, 1.0..20.0f64, any::<bool>()), 2..6),
        seed in 0u64..1000,
    ) {
        let n = params.len();
        let weights: Vec<f64> = (0..n).map(|i| 0.5 + ((seed + i as u64) % 7) as f64 * 0.25).collect();
        let cfg = LossConfig {
            au_weights: weights.clone(),
            ..LossConfig::defaults(n)
        };
        let base = frame_loss(&params, &cfg).unwrap();
        // rotate by one position, weights rotated consistently
        let mut rotated = params.clone();
        rotated.rotate_left(1);
        let mut wrot = weights;
        wrot.rotate_left(1);
        let cfg_rot = LossConfig { au_weights: wrot, ..cfg };
        let rot = frame_loss(&rotated, &cfg_rot).unwrap();
        prop_assert!((base - rot).abs() <= 1e-12 * base.abs().max(1.0));
    }

    #[test]
    fn softmax_rows_sum_to_one(vals in proptest::collection::vec(-30.0..30.0f64, 3..24)) {
        let n = vals.len();
        let mut g = Graph::new();
        let x = g.input(Tensor::vector(vals));
        let s = g.softmax(x, 0).unwrap();
        let total: f64 = g.value(s).data().iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-12);
        prop_assert_eq!(g.value(s).len(), n);
    }

    #[test]
    fn tensor_serialization_round_trips_bits(
        dims in (1usize..5, 1usize..5),
        seed in any::<u64>(),
    ) {
        let (r, c) = dims;
        let mut rng = betau_core::rng::Rng::seed(seed);
        let data: Vec<f64> = (0..r * c).map(|_| rng.normal() * 10f64.powi((rng.below(9) as i32) - 4)).collect();
        let mut store = ParamStore::new();
        store.insert("t", Tensor::new(vec![r, c], data.clone()).unwrap());
        let back = read_tensors(&write_tensors(&store)).unwrap();
        let rt = back.get("t").unwrap();
        for (a, b) in data.iter().zip(rt.data()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}

#[test]
fn expected_probability_matches_quadrature_mean() {
    let spec = QuadratureSpec::default();
    let mut rng = betau_core::rng::Rng::seed(77);
    for _ in 0..12 {
        let ev = Evidence::new(rng.range(0.0, 40.0), rng.range(0.0, 40.0)).unwrap();
        let bp = beta_from_evidence(ev);
        let closed = expected_probability(bp);
        let quad = quadrature_expectation(|p| p, bp.alpha, bp.beta, &spec).unwrap();
        assert!(
            (closed - quad).abs() <= 1e-9,
            "alpha={} beta={}: {closed} vs {quad}",
            bp.alpha,
            bp.beta
        );
    }
}

#[test]
fn zero_evidence_prior_is_exact() {
    let bp = beta_from_evidence(Evidence::new(0.0, 0.0).unwrap());
    assert_eq!(expected_probability(bp), 0.5);
    let u = frame_uncertainty(&[bp]).unwrap();
    assert_eq!(u, 1.0);
}
