mod common;

use alti_core::model::{argmax, decode_model, encode_model, save_model};
use alti_core::{Matrix, ModelConfig, TokenSequence, Transformer};
use common::{reference_logits, sweep};

#[test]
fn logits_match_reference_fixed_case() {
    let config = ModelConfig::toy(2, 2, 4);
    let model64 = Transformer::<f64>::random(config.clone(), 11).unwrap();
    let model32: Transformer<f32> = model64.cast().unwrap();
    let src = TokenSequence::source(vec![5, 9, 3, 0], 0).unwrap();
    let tgt = TokenSequence::target_prefix(vec![0, 7, 2], 0).unwrap();
    let want = reference_logits(&model64, &src.ids, &tgt.ids);
    let (got, _) = model32.forward_with_trace(&src, &tgt).unwrap();
    assert_eq!(got.shape(), (3, config.vocab_size_tgt));
    for (p, row) in want.iter().enumerate() {
        for (c, w) in row.iter().enumerate() {
            assert!((got.get(p, c) as f64 - w).abs() < 1e-4, "row {p} col {c}");
        }
    }
}

#[test]
fn logits_match_reference_sweep_f64() {
    for case in sweep(101, 40) {
        let model = case.model::<f64>();
        let want = reference_logits(&model, &case.source, &case.target);
        let (got, _) = model
            .forward_with_trace(&case.source_seq(), &case.target_seq())
            .unwrap();
        for (p, row) in want.iter().enumerate() {
            for (c, w) in row.iter().enumerate() {
                assert!((got.get(p, c) - w).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn attention_rows_are_distributions_and_causal() {
    for case in sweep(102, 30) {
        let model = case.model::<f32>();
        let (_, trace) = model
            .forward_with_trace(&case.source_seq(), &case.target_seq())
            .unwrap();
        let mut all = Vec::new();
        for l in &trace.encoder {
            all.extend(l.self_attn.heads.iter().map(|m| (m, false)));
        }
        for l in &trace.decoder {
            all.extend(l.self_attn.heads.iter().map(|m| (m, true)));
            all.extend(l.cross_attn.heads.iter().map(|m| (m, false)));
        }
        for (m, causal) in all {
            for i in 0..m.rows() {
                let row = m.row(i);
                assert!(row.iter().all(|&a| a >= 0.0));
                let s: f64 = row.iter().map(|&a| a as f64).sum();
                assert!((s - 1.0).abs() < 1e-6);
                if causal {
                    assert!(row[i + 1..].iter().all(|&a| a == 0.0));
                }
            }
        }
    }
}

#[test]
fn suffix_perturbation_keeps_earlier_logits_bit_identical() {
    for case in sweep(103, 30) {
        if case.target.len() < 2 {
            continue;
        }
        let model = case.model::<f32>();
        let (base, _) = model
            .forward_with_trace(&case.source_seq(), &case.target_seq())
            .unwrap();
        for k in 1..case.target.len() {
            let mut changed = case.target.clone();
            changed[k] = if changed[k] == 5 { 6 } else { 5 };
            let seq = TokenSequence::target_prefix(changed, 0).unwrap();
            let (other, _) = model.forward_with_trace(&case.source_seq(), &seq).unwrap();
            for p in 0..k {
                let a: Vec<u32> = base.row(p).iter().map(|v| v.to_bits()).collect();
                let b: Vec<u32> = other.row(p).iter().map(|v| v.to_bits()).collect();
                assert_eq!(a, b, "position {p} changed after perturbing {k}");
            }
        }
    }
}

#[test]
fn greedy_stops_when_eos_is_forced() {
    let config = ModelConfig::toy(1, 2, 4);
    let mut weights = Transformer::<f32>::random(config.clone(), 5).unwrap().weights().clone();
    weights.output.weight = Matrix::zeros(config.vocab_size_tgt, config.model_dim);
    weights.output.bias = vec![0.0; config.vocab_size_tgt];
    weights.output.bias[config.eos_id as usize] = 1.0;
    let model = Transformer::new(config, weights).unwrap();
    let src = TokenSequence::source(vec![3, 4, 0], 0).unwrap();
    assert_eq!(model.greedy_decode(&src, 10).unwrap().ids, vec![0]);
}

#[test]
fn greedy_tokens_are_row_argmaxes() {
    for case in sweep(104, 15) {
        let model = case.model::<f32>();
        let out = model.greedy_decode(&case.source_seq(), 8).unwrap().ids;
        assert!(!out.is_empty() && out.len() <= 8);
        let mut prefix = vec![0];
        prefix.extend_from_slice(&out[..out.len() - 1]);
        let (logits, _) = model
            .forward_with_trace(&case.source_seq(), &TokenSequence::target_prefix(prefix, 0).unwrap())
            .unwrap();
        for (p, &tok) in out.iter().enumerate() {
            assert_eq!(argmax(logits.row(p)) as u32, tok);
        }
        if out.len() < 8 {
            assert_eq!(*out.last().unwrap(), 0);
        }
    }
}

#[test]
fn greedy_is_deterministic_across_threads() {
    let model = Transformer::<f32>::random(ModelConfig::toy(2, 2, 4), 77).unwrap();
    let sources: Vec<TokenSequence> = (0..8u32)
        .map(|i| TokenSequence::source(vec![2 + i, 3 + 2 * i % 20, 0], 0).unwrap())
        .collect();
    let serial: Vec<Vec<u32>> = sources
        .iter()
        .map(|s| model.greedy_decode(s, 12).unwrap().ids)
        .collect();
    let threaded: Vec<Vec<u32>> = std::thread::scope(|scope| {
        let handles: Vec<_> = sources
            .iter()
            .map(|s| scope.spawn(|| model.greedy_decode(s, 12).unwrap().ids))
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    assert_eq!(serial, threaded);
}

#[test]
fn save_load_is_bitwise_lossless() {
    for case in sweep(105, 10) {
        let model = case.model::<f32>();
        let bytes = encode_model(model.config(), model.weights()).unwrap();
        let (config, weights) = decode_model::<f32>(&bytes).unwrap();
        assert_eq!(&config, model.config());
        let a: Vec<u32> = model
            .weights()
            .tensors()
            .iter()
            .flat_map(|(_, _, v)| v.iter().map(|x| x.to_bits()))
            .collect();
        let b: Vec<u32> = weights
            .tensors()
            .iter()
            .flat_map(|(_, _, v)| v.iter().map(|x| x.to_bits()))
            .collect();
        assert_eq!(a, b);
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("toy.altiw");
    let model = Transformer::<f32>::random(ModelConfig::toy(2, 2, 4), 3).unwrap();
    save_model(&path, model.config(), model.weights()).unwrap();
    let loaded = Transformer::<f32>::load(&path).unwrap();
    assert_eq!(loaded.weights(), model.weights());
}
