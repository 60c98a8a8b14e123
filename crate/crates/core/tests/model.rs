mod common;

use hseq_core::corpus::Vocabulary;
use hseq_core::{context_vector, EncoderMemory, NetworkSpec, Seq2Seq};
use hseq_numcore::Tensor;
use proptest::prelude::*;

fn vocab(n: usize) -> Vocabulary {
    Vocabulary::with_words((0..n).map(|i| format!("w{i}"))).unwrap()
}

fn coarse(hidden: usize, embed: usize, seed: u64) -> Seq2Seq<f64> {
    let mut spec = NetworkSpec::coarse(vocab(5), vocab(6), hidden);
    spec.encoder.embed_dim = embed;
    spec.decoder.embed_dim = embed;
    Seq2Seq::with_init_scale(spec, seed, 0.7).unwrap()
}

fn fine(hidden: usize, seed: u64) -> Seq2Seq<f64> {
    Seq2Seq::with_init_scale(NetworkSpec::fine(vocab(6), hidden), seed, 0.7).unwrap()
}

fn set(model: &mut Seq2Seq<f64>, name: &str, values: &[f64]) {
    let store = model.params_mut();
    let id = store.id(name).unwrap();
    let p = store.get_mut(id);
    assert_eq!(p.value.len(), values.len(), "{name}");
    p.value.data_mut().copy_from_slice(values);
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

fn memory(ann: &[Vec<f64>], emb: &[Vec<f64>]) -> EncoderMemory<f64> {
    let q = ann.len();
    EncoderMemory::new(
        Tensor::new(vec![q, ann[0].len()], ann.concat()).unwrap(),
        Tensor::new(vec![q, emb[0].len()], emb.concat()).unwrap(),
    )
    .unwrap()
}

#[test]
fn encoder_matches_scalar_reference() {
    for seed in 0..4 {
        let m = coarse(3, 2, seed);
        let src = [4, 5, 6, 7, 8, 4];
        let mem = m.encode(&src).unwrap();
        let (ann, emb) = common::encode(&m, &src);
        for j in 0..src.len() {
            assert!(close(mem.annotation(j), &ann[j], 1e-12), "seed {seed} position {j}");
            assert!(close(mem.embedding(j), &emb[j], 0.0));
        }
    }
}

#[test]
fn fine_encoder_matches_scalar_reference() {
    let m = fine(4, 9);
    let src = [9, 4, 4, 5];
    let mem = m.encode(&src).unwrap();
    let (ann, _) = common::encode(&m, &src);
    for (j, row) in ann.iter().enumerate() {
        assert!(close(mem.annotation(j), row, 1e-12));
    }
}

#[test]
fn loss_matches_scalar_reference() {
    for seed in 0..3 {
        let m = coarse(3, 4, seed);
        let (src, tgt) = ([4, 6, 8, 5], [9, 5, 4]);
        let engine = m.teacher_forced_loss(&src, &tgt).unwrap();
        let oracle = common::loss(&m, &src, &tgt) / 4.0;
        assert!((engine - oracle).abs() < 1e-12, "{engine} vs {oracle}");
    }
    let f = fine(3, 5);
    let engine = f.teacher_forced_loss(&[4, 5, 6], &[6, 6]).unwrap();
    assert!((engine - common::loss(&f, &[4, 5, 6], &[6, 6]) / 3.0).abs() < 1e-12);
}

#[test]
fn greedy_matches_scalar_reference() {
    for seed in 0..6 {
        let mut m = coarse(4, 4, seed);
        set(&mut m, "coarse/decoder/out/b", &[0.0, 0.0, 0.0, -2.0, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5]);
        let src = vec![4, 5, 6, 7];
        let engine = m.translate_ids(&[src.clone()], 12).unwrap().remove(0);
        assert_eq!(engine, common::greedy(&m, &src, 12), "seed {seed}");
    }
}

/// Two positions whose scores differ by exactly one: weights are the
/// logistic pair and the context is their mix of annotations 0 and 10.
#[test]
fn attention_toy_example() {
    let mut m = coarse(1, 1, 0);
    m.fill_param("coarse/decoder/attn/V_a", 0.0).unwrap();
    m.fill_param("coarse/decoder/attn/W_a", 0.0).unwrap();
    m.fill_param("coarse/decoder/attn/U_a", 1.0).unwrap();
    m.fill_param("coarse/decoder/attn/p_a", 2.0).unwrap();
    let mem = memory(&[vec![0.0], vec![10.0]], &[vec![0.0], vec![0.5f64.atanh()]]);
    let att = m.attention_scores(&[0.3], &mem).unwrap();
    assert!(close(&att.scores, &[0.0, 1.0], 1e-12), "{:?}", att.scores);
    assert!(close(&att.weights, &[0.268_941_421_369_995, 0.731_058_578_630_005], 1e-12));
    let ctx = context_vector(&att, &mem);
    assert!((ctx[0] - 7.310_585_786_300_05).abs() < 1e-10);
}

#[test]
fn bidirectional_layer_is_symmetric_under_reversal() {
    let mut spec = NetworkSpec::coarse(vocab(5), vocab(5), 3);
    spec.encoder.num_layers = 1;
    spec.encoder.residual_layers.clear();
    let mut m = Seq2Seq::<f64>::with_init_scale(spec, 2, 0.5).unwrap();
    for name in ["W_ih", "W_hh", "b"] {
        let fwd = m.params().by_name(&format!("coarse/encoder/layer0/fwd/{name}")).unwrap().value.data().to_vec();
        set(&mut m, &format!("coarse/encoder/layer0/bwd/{name}"), &fwd);
    }
    let w = m.params().by_name("coarse/encoder/layer0/proj/W").unwrap().value.data().to_vec();
    let (top, _) = w.split_at(9);
    set(&mut m, "coarse/encoder/layer0/proj/W", &[top, top].concat());
    let src = [4, 5, 6, 7, 8];
    let rev: Vec<usize> = src.iter().rev().copied().collect();
    let a = m.encode(&src).unwrap();
    let b = m.encode(&rev).unwrap();
    for j in 0..src.len() {
        assert!(close(a.annotation(j), b.annotation(src.len() - 1 - j), 1e-12));
    }
}

#[test]
fn batched_translation_equals_single() {
    let m = coarse(3, 3, 11);
    let sources = vec![vec![4, 5], vec![6, 7, 8, 4, 5, 6], vec![8]];
    let together = m.translate_ids(&sources, 8).unwrap();
    for (s, t) in sources.iter().zip(&together) {
        assert_eq!(&m.translate_ids(&[s.clone()], 8).unwrap()[0], t);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn attention_matches_reference_and_is_permutation_equivariant(
        seed in 0u64..1000,
        q in 1usize..8,
        s in prop::collection::vec(-2.0f64..2.0, 3),
        raw in prop::collection::vec(-2.0f64..2.0, 8 * 5),
        rot in 0usize..8,
    ) {
        let m = coarse(3, 2, seed);
        let ann: Vec<Vec<f64>> = (0..q).map(|j| raw[j * 5..j * 5 + 3].to_vec()).collect();
        let emb: Vec<Vec<f64>> = (0..q).map(|j| raw[j * 5 + 3..j * 5 + 5].to_vec()).collect();
        let mem = memory(&ann, &emb);
        let att = m.attention_scores(&s, &mem).unwrap();
        let (scores, weights, ctx) = common::Attention::load(&m).attend(&s, &ann, &emb);
        prop_assert!(close(&att.scores, &scores, 1e-12));
        prop_assert!(close(&att.weights, &weights, 1e-12));
        prop_assert!(close(&context_vector(&att, &mem), &ctx, 1e-12));

        let r = rot % q;
        let perm: Vec<usize> = (0..q).map(|j| (j + r) % q).collect();
        let pann: Vec<Vec<f64>> = perm.iter().map(|&j| ann[j].clone()).collect();
        let pemb: Vec<Vec<f64>> = perm.iter().map(|&j| emb[j].clone()).collect();
        let pmem = memory(&pann, &pemb);
        let patt = m.attention_scores(&s, &pmem).unwrap();
        for (k, &j) in perm.iter().enumerate() {
            prop_assert!((patt.weights[k] - att.weights[j]).abs() < 1e-12);
        }
        prop_assert!(close(&context_vector(&patt, &pmem), &ctx, 1e-12));
    }
}
