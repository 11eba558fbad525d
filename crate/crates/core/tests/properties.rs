//! Invariants checked through the public API on random inputs.

use educe_core::encoder::{encode, BiLstmParams};
use educe_core::evaluation::TinyInstance;
use educe_core::model::{
    concept_classifier, forward, forward_with, pool_excerpt, Choices, Span, SpanMasks, SpanWindow,
};
use educe_core::numerics::{argmax, masked_softmax};
use educe_core::rng::{self, EduceRng};
use educe_core::text::{
    gen_planted, scan_families, stratified_assign, stratified_split, tokenize, Dataset, Document, EmbeddingTable,
    Label, PlantedSpec, Task, Vocab,
};
use proptest::prelude::*;

fn scores_and_mask() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (1usize..30).prop_flat_map(|n| {
        (
            prop::collection::vec(-50.0f64..50.0, n),
            prop::collection::vec(any::<bool>(), n).prop_filter("one valid entry", |m| m.iter().any(|&b| b)),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn masked_softmax_is_a_distribution_over_the_valid_set((s, mask) in scores_and_mask()) {
        let p = masked_softmax(&s, &mask).unwrap();
        let total: f64 = p.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        for (q, &ok) in p.iter().zip(&mask) {
            if ok {
                prop_assert!(*q >= 0.0);
            } else {
                prop_assert_eq!(*q, 0.0);
            }
        }
    }
}

proptest! {
    #[test]
    fn masked_softmax_ignores_a_shift_of_valid_scores((s, mask) in scores_and_mask(), shift in -20.0f64..20.0) {
        let p = masked_softmax(&s, &mask).unwrap();
        let moved: Vec<f64> = s.iter().zip(&mask).map(|(x, &ok)| if ok { x + shift } else { *x }).collect();
        let q = masked_softmax(&moved, &mask).unwrap();
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn vocabulary_ids_are_dense_and_bijective(words in prop::collection::vec("[a-e]{1,3}", 1..40)) {
        let line = words.join(" ");
        let v = Vocab::build([line.as_str()], 1).unwrap();
        prop_assert_ne!(v.pad_id(), v.unk_id());
        for (id, tok) in v.tokens().iter().enumerate() {
            prop_assert_eq!(v.id(tok), id as u32);
        }
        let ids = v.encode(&line);
        let words = tokenize(&line);
        prop_assert_eq!(v.decode(&ids), words.iter().map(String::as_str).collect::<Vec<_>>());
    }

    #[test]
    fn stratified_parts_partition_the_input(per_class in 3usize..25, classes in 1usize..4, seed in 0u64..1000) {
        let n = per_class * classes;
        // Token 100 + i tags document i.
        let docs = (0..n)
            .map(|i| Document::new(vec![100 + i as u32; 4], Label::Class(i % classes), 0))
            .collect();
        let data = Dataset::new(Task::Classification { classes }, docs).unwrap();
        let parts = stratified_split(&data, &[0.6, 0.2, 0.2], seed).unwrap();
        let mut seen: Vec<u32> = parts.iter().flat_map(|p| p.docs.iter().map(|d| d.tokens[0])).collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..n as u32).map(|i| 100 + i).collect::<Vec<_>>());
    }

    #[test]
    fn stratified_sizes_round_within_one(
        sizes in prop::collection::vec(3usize..60, 1..8),
        weights in prop::collection::vec(1u32..10, 3),
        seed in 0u64..100,
    ) {
        let total_w: u32 = weights.iter().sum();
        let fractions: Vec<f64> = weights.iter().map(|&w| w as f64 / total_w as f64).collect();
        let labels: Vec<usize> = sizes.iter().enumerate().flat_map(|(c, &m)| std::iter::repeat(c).take(m)).collect();
        let part = stratified_assign(&labels, &fractions, seed).unwrap();
        let n = labels.len() as f64;
        for (j, f) in fractions.iter().enumerate() {
            let got = part.iter().filter(|&&p| p == j).count() as f64;
            prop_assert!((got - f * n).abs() < 1.0, "part {} has {} of {}", j, got, f * n);
            for (c, &m) in sizes.iter().enumerate() {
                let k = labels.iter().zip(&part).filter(|&(&l, &p)| l == c && p == j).count() as f64;
                prop_assert!((k - f * m as f64).abs() < 1.0 + 1e-9);
            }
        }
    }

    #[test]
    fn planted_documents_hold_exactly_their_families(seed in 0u64..200, len in 8usize..30) {
        let c = gen_planted(&PlantedSpec::pairs(4, 3, len, seed)).unwrap();
        for d in &c.dataset.docs {
            let label = d.label.class().unwrap();
            prop_assert_eq!(scan_families(&c, &d.tokens), c.spec.classes[label].clone());
        }
    }

    #[test]
    fn encoder_directions_are_causal(seed in 0u64..500, len in 3usize..10, at in 0usize..10) {
        let at = at % len;
        let vocab = Vocab::from_tokens((0..6).map(|i| format!("w{i}")));
        let emb = EmbeddingTable::random(&vocab, 4, seed);
        let params = BiLstmParams::init(4, 3, &mut rng::stream(&[seed]));
        let mut r = rng::stream(&[seed, 1]);
        let tokens: Vec<u32> = (0..len).map(|_| rng::uniform(2.0, 8.0, &mut r) as u32).collect();
        let mut other = tokens.clone();
        other[at] = if tokens[at] == 2 { 3 } else { 2 };
        let a = encode(&tokens, &emb, &params).unwrap().rows;
        let b = encode(&other, &emb, &params).unwrap().rows;
        for k in 0..len {
            let (ra, rb) = (a.row(k), b.row(k));
            // Forward half sees positions <= k, backward half positions >= k.
            if k < at {
                prop_assert_eq!(&ra[..3], &rb[..3]);
            }
            if k > at {
                prop_assert_eq!(&ra[3..], &rb[3..]);
            }
        }
    }

    #[test]
    fn sampled_traces_respect_span_and_code_invariants(seed in 0u64..300, len in 4usize..14, concepts in 1usize..4, pads in 0usize..4) {
        let inst = TinyInstance::build(seed, len, concepts, false).unwrap();
        let p = &inst.params;
        let mut tokens = inst.tokens.clone();
        tokens.extend(std::iter::repeat(p.config.pad_id).take(pads));
        let t = forward(&tokens, p, &inst.emb, &mut rng::stream(&[seed, 9])).unwrap();
        prop_assert_eq!(t.extractions.len(), concepts);
        for (c, e) in t.extractions.iter().enumerate() {
            let l = e.span.stop - e.span.start;
            prop_assert!((3..=10).contains(&l));
            prop_assert!(e.span.stop < len);
            prop_assert!(e.presence > 0.0 && e.presence < 1.0);
            prop_assert_eq!(t.code[c], e.present);
            // Pooled vector against a direct mean of the rows.
            let pooled = pool_excerpt(e.span, &inst.emb, &tokens).unwrap();
            for (j, x) in pooled.iter().enumerate() {
                let mean = (e.span.start..=e.span.stop).map(|k| inst.emb.row(tokens[k])[j]).sum::<f64>() / (l + 1) as f64;
                prop_assert!((x - mean).abs() < 1e-12);
            }
        }
        prop_assert!((t.output.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn concept_classifier_argmax_is_scale_free(seed in 0u64..500, kappa in 0.01f64..100.0) {
        let inst = TinyInstance::random(seed).unwrap();
        let mut r = rng::stream(&[seed]);
        let s: Vec<f64> = (0..4).map(|_| rng::uniform(-1.0, 1.0, &mut r)).collect();
        let scaled: Vec<f64> = s.iter().map(|x| kappa * x).collect();
        let a = concept_classifier(inst.params.theta(), &s).unwrap();
        let b = concept_classifier(inst.params.theta(), &scaled).unwrap();
        prop_assert_eq!(argmax(&a), argmax(&b));
    }

    #[test]
    fn output_depends_on_the_code_alone(seed in 0u64..300, len in 6usize..13, concepts in 1usize..4) {
        let inst = TinyInstance::build(seed, len, concepts, false).unwrap();
        let p = &inst.params;
        let mut r = rng::stream(&[seed, 3]);
        let t = forward(&inst.tokens, p, &inst.emb, &mut r).unwrap();
        let all = SpanMasks::new(&inst.tokens, p.config.pad_id, SpanWindow::default()).unwrap().spans();
        let spans: Vec<Span> = (0..concepts).map(|c| all[(seed as usize + 7 * c) % all.len()]).collect();
        let u = forward_with::<EduceRng>(&inst.tokens, p, &inst.emb, Choices::Fixed { spans: &spans, code: &t.code }).unwrap();
        prop_assert_eq!(
            t.output.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            u.output.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
    }
}

#[test]
fn short_documents_are_padded_to_four_tokens() {
    let d = Document::new(vec![5, 6], Label::Class(0), 0);
    assert_eq!(d.tokens, vec![5, 6, 0, 0]);
}
