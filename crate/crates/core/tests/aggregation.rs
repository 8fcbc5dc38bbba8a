mod common;

use alti_core::aggregation::{encoder_rollout, source_relevance, target_relevance};
use alti_core::{Attributor, DecoderLayerContributions, Matrix, RelevanceResult};
use common::{decoder_paths, encoder_paths, random_decoder_layer, rng, stochastic_matrix, sweep};
use rand::Rng;

#[test]
fn rollouts_match_path_enumeration() {
    let mut r = rng(301);
    for _ in 0..50 {
        let j = r.random_range(1..=5);
        let t = r.random_range(1..=5);
        let enc: Vec<Matrix<f64>> = (0..r.random_range(1..=3))
            .map(|_| stochastic_matrix(&mut r, j))
            .collect();
        let dec: Vec<DecoderLayerContributions> = (0..r.random_range(1..=3))
            .map(|l| random_decoder_layer(&mut r, l, t, j))
            .collect();
        let rollout = encoder_rollout(&enc).unwrap();
        for i in 0..j {
            for s in 0..j {
                assert!((rollout.get(i, s) - encoder_paths(&enc, i, s)).abs() < 1e-6);
            }
        }
        let (src, _) = source_relevance(&rollout, &dec).unwrap();
        let tgt = target_relevance(&dec).unwrap();
        for p in 0..t {
            let (want_src, want_tgt) = decoder_paths(&enc, &dec, p);
            for s in 0..j {
                assert!((src.get(p, s) - want_src[s]).abs() < 1e-6);
            }
            for k in 0..t {
                assert!((tgt.get(p, k) - want_tgt[k]).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn zeroed_source_column_has_no_relevance() {
    let mut r = rng(302);
    let (j, t) = (4, 3);
    let enc: Vec<Matrix<f64>> = (0..2).map(|_| stochastic_matrix(&mut r, j)).collect();
    let mut dec: Vec<DecoderLayerContributions> = (0..3).map(|l| random_decoder_layer(&mut r, l, t, j)).collect();
    // Also cut the encoder so no path reaches source 2 through another token.
    let mut enc = enc;
    for m in &mut enc {
        for i in 0..j {
            m.set(i, 2, 0.0);
        }
    }
    for l in &mut dec {
        for p in 0..t {
            l.cross_part.set(p, 2, 0.0);
            l.combined.set(p, 2, 0.0);
        }
    }
    let result = RelevanceResult::from_layers(&enc, &dec).unwrap();
    for p in 0..t {
        assert_eq!(result.source_relevance.get(p, 2), 0.0);
    }
}

#[test]
fn relevance_is_conserved_and_causal_on_models() {
    for case in sweep(303, 100) {
        let model = case.model::<f32>();
        let (_, trace) = model
            .forward_with_trace(&case.source_seq(), &case.target_seq())
            .unwrap();
        let rel = Attributor::new(&model, &trace).relevance().unwrap();
        let t = case.target.len();
        assert_eq!(rel.source_relevance.shape(), (t, case.source.len()));
        let share = rel.total_source_contribution();
        for p in 0..t {
            let s: f64 = rel.source_relevance.row(p).iter().sum();
            let g: f64 = rel.target_relevance.row(p).iter().sum();
            assert!((s + g - 1.0).abs() < 1e-5);
            assert!((share.per_step[p] - (1.0 - g)).abs() < 1e-5);
            for k in p + 1..t {
                assert_eq!(rel.target_relevance.get(p, k), 0.0);
            }
        }
    }
}

#[test]
fn f32_and_f64_relevance_agree() {
    for case in sweep(304, 10) {
        let m64 = case.model::<f64>();
        let m32: alti_core::Transformer<f32> = m64.cast().unwrap();
        let (_, t64) = m64.forward_with_trace(&case.source_seq(), &case.target_seq()).unwrap();
        let (_, t32) = m32.forward_with_trace(&case.source_seq(), &case.target_seq()).unwrap();
        let a = Attributor::new(&m64, &t64).relevance().unwrap();
        let b = Attributor::new(&m32, &t32).relevance().unwrap();
        assert!(a.source_relevance.max_abs_diff(&b.source_relevance) < 1e-3);
        assert!(a.target_relevance.max_abs_diff(&b.target_relevance) < 1e-3);
    }
}
