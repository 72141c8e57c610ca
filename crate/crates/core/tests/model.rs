mod common;

use std::collections::BTreeSet;

use lac_void::executor::run_stack_with_voids;
use lac_void::model::{
    build_model, encode_bytes, generate, run_prompt, KvCache, Model, ModelConfig,
};
use lac_void::weights::{from_bytes, load_weights, save_weights, MAGIC};
use lac_void::{run_stack, HaltPolicy, LacError, Phase, SkipMode, Tensor};

fn off() -> HaltPolicy {
    HaltPolicy::new(0.8).with_mode(SkipMode::Off)
}

#[test]
fn saved_weights_reproduce_forward_outputs() {
    let m = build_model(ModelConfig::new(8, 2, 3).with_seed(9)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.lac");
    save_weights(&m, &path).unwrap();
    let loaded = load_weights(&path).unwrap();
    let toks = vec![encode_bytes(b"round trip")];
    let (a, _) = m.forward(&toks, &off()).unwrap();
    let (b, _) = loaded.forward(&toks, &off()).unwrap();
    assert_eq!(a, b);
}

fn le(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// Depth 2, one head, FFN width 2, vocabulary 2. Attention value/output and
/// both FFN matrices are identities; queries and keys are zero.
fn hand_written_container() -> Vec<u8> {
    let i2 = [1.0, 0.0, 0.0, 1.0];
    let z2 = [0.0; 4];
    let tensors: Vec<(&str, Vec<usize>, Vec<f32>)> = vec![
        ("embed", vec![2, 2], vec![3.0, 4.0, -1.0, 2.0]),
        ("layers.0.ln1", vec![2], vec![1.0, 1.0]),
        ("layers.0.wq", vec![2, 2], z2.to_vec()),
        ("layers.0.wk", vec![2, 2], z2.to_vec()),
        ("layers.0.wv", vec![2, 2], i2.to_vec()),
        ("layers.0.wo", vec![2, 2], i2.to_vec()),
        ("layers.0.ln2", vec![2], vec![1.0, 1.0]),
        ("layers.0.w1", vec![2, 2], i2.to_vec()),
        ("layers.0.w2", vec![2, 2], i2.to_vec()),
        ("final_ln", vec![2], vec![1.0, 1.0]),
        ("lm_head", vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]),
    ];
    let mut header = String::from(
        "{\"__config__\":{\"layer_count\":1,\"depth\":2,\"head_count\":1,\"ffn_dim\":2,\
         \"vocab_size\":2,\"max_seq\":8,\"seed\":0}",
    );
    let mut payload = Vec::new();
    for (name, shape, data) in &tensors {
        header.push_str(&format!(
            ",\"{name}\":{{\"offset\":{},\"shape\":{:?},\"dtype\":\"f32\"}}",
            payload.len(),
            shape
        ));
        payload.extend(le(data));
    }
    header.push('}');
    let mut out = MAGIC.to_vec();
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    out.extend(payload);
    out
}

fn rms_normalize(v: [f64; 2]) -> [f64; 2] {
    let ms = (v[0] * v[0] + v[1] * v[1]) / 2.0;
    let inv = 1.0 / (ms + 1e-5).sqrt();
    [v[0] * inv, v[1] * inv]
}

#[test]
fn hand_written_container_matches_hand_computation() {
    let m = from_bytes(&hand_written_container()).unwrap();
    let h = Tensor::new(vec![1, 1, 2], vec![3.0, 4.0]).unwrap();
    let mut cache = KvCache::new(&m.config, 1);
    let out = m.block_forward(0, &h, &mut cache, 0).unwrap();

    // One token attends only to itself: attention output = RmsNorm(h).
    let x = rms_normalize([3.0, 4.0]);
    let h1 = [3.0 + x[0], 4.0 + x[1]];
    // Both components positive, so ReLU passes the normalized vector through.
    let x2 = rms_normalize(h1);
    let expected = [h1[0] + x2[0], h1[1] + x2[1]];
    for k in 0..2 {
        assert!(
            (out.data()[k] as f64 - expected[k]).abs() < 1e-5,
            "{:?} vs {expected:?}",
            out
        );
    }
}

#[test]
fn container_error_paths() {
    let bytes = hand_written_container();
    assert!(matches!(
        from_bytes(&bytes[..bytes.len() - 1]),
        Err(LacError::LengthMismatch(_))
    ));
    let mut bad = bytes.clone();
    bad[..8].copy_from_slice(b"NOTLACTN");
    assert!(matches!(from_bytes(&bad), Err(LacError::BadMagic(_))));
}

fn full_logits(m: &Model, tokens: &[u32]) -> Tensor {
    m.forward(&[tokens.to_vec()], &off()).unwrap().0
}

#[test]
fn cached_generation_matches_full_reforward() {
    let m = build_model(ModelConfig::new(16, 4, 3).with_seed(4)).unwrap();
    let (mut st, _) = run_prompt(&m, "s", &encode_bytes(b"cache me"), &off()).unwrap();
    let (generated, _) = generate(&mut st, &m, &off(), 8).unwrap();
    assert!(!generated.is_empty());

    // Every generated token is the argmax of a full re-forward over its prefix.
    let v = m.config.vocab_size;
    for n in 8..st.tokens.len() {
        let logits = full_logits(&m, &st.tokens[..n]);
        let last = &logits.data()[(n - 1) * v..n * v];
        assert_eq!(lac_void::model::argmax(last), st.tokens[n]);
    }
    // The cached logits after the last token equal the full-sequence logits.
    let n = st.tokens.len();
    let logits = full_logits(&m, &st.tokens);
    for (a, b) in logits.data()[(n - 1) * v..].iter().zip(&st.last_logits) {
        assert!((a - b).abs() < 1e-4);
    }
}

#[test]
fn phase_partition_and_ordering() {
    let m = build_model(ModelConfig::new(8, 2, 4).with_seed(1)).unwrap();
    let p = HaltPolicy::new(0.8);
    let prompt = encode_bytes(b"phase");
    let (mut st, mut recs) = run_prompt(&m, "s", &prompt, &p).unwrap();
    let (gen, rg) = generate(&mut st, &m, &p, 7).unwrap();
    recs.extend(rg);
    assert_eq!(recs.len(), prompt.len() + gen.len());
    let pp = recs.iter().filter(|r| r.phase == Phase::Pp).count();
    assert_eq!(pp, prompt.len());
    let last_pp = recs.iter().rposition(|r| r.phase == Phase::Pp).unwrap();
    assert!(recs[..=last_pp].iter().all(|r| r.phase == Phase::Pp));
    assert_eq!(st.phases.len(), st.tokens.len());
    for (i, r) in recs.iter().enumerate() {
        assert_eq!(r.token_index, i);
        assert_eq!(r.token_id, st.tokens[i]);
    }
}

#[test]
fn detect_and_off_give_identical_prompt_logits() {
    let m = build_model(ModelConfig::new(16, 2, 4).with_seed(3)).unwrap();
    for prompt in common::random_prompts(8, 10, 12) {
        let (a, _) = m.forward(std::slice::from_ref(&prompt), &off()).unwrap();
        let (b, _) = m.forward(&[prompt], &HaltPolicy::new(0.8)).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn passive_trace_deltas_are_norm_differences() {
    let m = build_model(ModelConfig::new(16, 2, 5).with_seed(2)).unwrap();
    let (_, recs) = run_prompt(&m, "s", &encode_bytes(b"deltas"), &HaltPolicy::new(0.5)).unwrap();
    for r in recs {
        for t in 1..r.layer_count() {
            let diff = r.layer_norms[t] - r.layer_norms[t - 1];
            assert!((r.layer_deltas[t] - diff).abs() < 1e-5);
        }
    }
}

#[test]
fn always_void_middle_layer_matches_removed_layer() {
    // Layer 1 is an exact identity: zero progress, flagged once the range is positive.
    let mut m = common::positive_progress_model(16, &[1.0, 0.0, 0.8, 1.2], 6);
    m.blocks[1].w2 = Tensor::zeros(&[32, 16]);
    let removed = m.without_layers(&BTreeSet::from([1]));
    // Range of {4, 0, 3.2, 4.8} is 4.8; alpha 0.5 gives lambda <= 2.4 < 3.2.
    let skip = HaltPolicy::new(0.5).with_mode(SkipMode::SkipIdentity);
    let prompt = encode_bytes(b"remove");

    let (mut a, ra) = run_prompt(&m, "a", &prompt, &skip).unwrap();
    let (mut b, _) = run_prompt(&removed, "b", &prompt, &off()).unwrap();
    assert!(ra
        .iter()
        .all(|r| r.layer_flags == vec![true, false, true, true]));
    let (ta, rga) = generate(&mut a, &m, &skip, 6).unwrap();
    let (tb, _) = generate(&mut b, &removed, &off(), 6).unwrap();
    assert_eq!(ta, tb);
    assert!(rga.iter().all(|r| !r.layer_flags[1]));
    for (x, y) in a.last_logits.iter().zip(&b.last_logits) {
        assert!((x - y).abs() < 1e-5);
    }
}

#[test]
fn fixed_void_sets_on_model_stack_match_removal() {
    let m = build_model(ModelConfig::new(16, 2, 4).with_seed(12)).unwrap();
    let toks = vec![encode_bytes(b"fixed voids")];
    let h0 = m.embed(&toks, 0).unwrap();
    let voids = BTreeSet::from([0, 2]);
    let mut cache = KvCache::new(&m.config, 1);
    let skipped = run_stack_with_voids(&mut m.stack(&mut cache, 0), &h0, &voids).unwrap();
    let reduced = m.without_layers(&voids);
    let mut cache = KvCache::new(&reduced.config, 1);
    let expected = run_stack(&mut reduced.stack(&mut cache, 0), &h0, &off()).unwrap();
    assert_eq!(skipped, expected.final_hidden);
}
