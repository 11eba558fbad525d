use alloc::vec;
use alloc::vec::Vec;

use proptest::prelude::*;

use super::*;
use crate::model::{forward_with, Choices, ModelConfig, Span};
use crate::numerics::{dot, finite_diff_check, Tensor};
use crate::rng::{self, EduceRng};
use crate::text::{Document, GoldSpan, Label, Task, Vocab};
use crate::training::{compute_losses, Model, Objective};

fn with_heads(inst: &TinyInstance, classes: usize, alpha: Option<Tensor>, delta: Option<Tensor>) -> EduceParams {
    let cfg = ModelConfig {
        task: Task::Classification { classes },
        ..inst.params.config
    };
    let mut store = inst.params.store.clone();
    if let Some(a) = alpha {
        *store.get_mut(EduceParams::ALPHA) = a;
    }
    *store.get_mut(EduceParams::DELTA) = delta.unwrap_or_else(|| Tensor::zeros(&[classes, cfg.concepts]));
    EduceParams::from_store(cfg, store).unwrap()
}

fn docs_for(inst: &TinyInstance, n: usize, classes: usize) -> Dataset {
    let mut r = rng::stream(&[inst.seed, 0xd0c]);
    let docs = (0..n)
        .map(|i| {
            let len = 6 + i % 4;
            let tokens = (0..len)
                .map(|_| 2 + (rng::uniform(0.0, 6.0, &mut r) as u32).min(5))
                .collect();
            Document::new(tokens, Label::Class(i % classes), inst.params.config.pad_id)
        })
        .collect();
    Dataset::new(Task::Classification { classes }, docs).unwrap()
}

#[test]
fn configuration_probabilities_sum_to_one() {
    for seed in 0..4 {
        for inst in [
            TinyInstance::random(seed).unwrap(),
            TinyInstance::saturated(seed).unwrap(),
        ] {
            let e = exact_expectation(
                &inst.params,
                &inst.tokens,
                &inst.label,
                &inst.emb,
                inst.objective,
                DEFAULT_BUDGET,
            )
            .unwrap();
            assert!((e.total_probability - 1.0).abs() < 1e-9, "{}", e.total_probability);
            // 7 tokens: starts 0..=3 with 4, 3, 2, 1 stops.
            assert_eq!(e.configurations, configuration_count(10, 2));
            assert_eq!(e.configurations, 400);
        }
    }
}

#[test]
fn zero_output_head_without_concept_loss_gives_ln4() {
    for seed in 0..3 {
        let inst = TinyInstance::random(seed).unwrap();
        let p = with_heads(&inst, 4, None, None);
        let obj = Objective {
            lambda: 0.0,
            lambda_l1: 0.0,
        };
        let e = exact_expectation(&p, &inst.tokens, &Label::Class(1), &inst.emb, obj, DEFAULT_BUDGET).unwrap();
        assert!((e.loss - libm::log(4.0)).abs() < 1e-12, "{}", e.loss);
    }
}

#[test]
fn single_configuration_limit() {
    let inst = TinyInstance::build(4, 4, 1, false).unwrap();
    let s = crate::model::pool_excerpt(Span { start: 0, stop: 3 }, &inst.emb, &inst.tokens).unwrap();
    let norm = dot(&s, &s);
    let alpha = Tensor::matrix(1, 4, s.iter().map(|x| 100.0 * x / norm).collect()).unwrap();
    let p = with_heads(&inst, 3, Some(alpha), Some(inst.params.delta().clone()));
    let e = exact_expectation(&p, &inst.tokens, &inst.label, &inst.emb, inst.objective, DEFAULT_BUDGET).unwrap();
    assert_eq!(e.configurations, 2);
    let trace = forward_with::<EduceRng>(
        &inst.tokens,
        &p,
        &inst.emb,
        Choices::Fixed {
            spans: &[Span { start: 0, stop: 3 }],
            code: &[true],
        },
    )
    .unwrap();
    let single = compute_losses(&trace, &inst.label, inst.objective).unwrap();
    assert!((e.loss - single.joint).abs() < 1e-9);
}

#[test]
fn enumeration_over_budget_is_refused() {
    let inst = TinyInstance::random(0).unwrap();
    let r = exact_expectation(&inst.params, &inst.tokens, &inst.label, &inst.emb, inst.objective, 399);
    assert!(matches!(
        r,
        Err(Error::Budget {
            count: 400,
            budget: 399
        })
    ));
}

#[test]
fn exact_gradient_matches_finite_differences_of_the_expectation() {
    for seed in 0..2 {
        let inst = TinyInstance::build(seed, 6, 2, false).unwrap();
        let base = &inst.params;
        let e = exact_expectation(
            base,
            &inst.tokens,
            &inst.label,
            &inst.emb,
            inst.objective,
            DEFAULT_BUDGET,
        )
        .unwrap();
        let err = finite_diff_check(
            |ts| {
                let mut store = base.store.clone();
                store.set_all(ts.to_vec())?;
                let p = EduceParams::from_store(base.config, store)?;
                Ok(exact_expectation(&p, &inst.tokens, &inst.label, &inst.emb, inst.objective, DEFAULT_BUDGET)?.loss)
            },
            base.store.tensors(),
            &e.grads,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-6, "seed {seed}: {err}");
    }
}

#[test]
fn monte_carlo_agrees_with_enumeration_on_small_runs() {
    let rep = check_unbiasedness(&TinyInstance::random(11).unwrap(), 20_000, 3).unwrap();
    assert!(rep.pass(), "{rep:#?}");
    assert!(rep.block("alpha").is_none());
    let sat = check_unbiasedness(&TinyInstance::saturated(12).unwrap(), 20_000, 3).unwrap();
    assert!(sat.pass(), "{sat:#?}");
    assert!(sat.block("alpha").unwrap().max_abs_dev < 1e-9);
}

#[test]
fn unbiasedness_needs_two_traces() {
    let inst = TinyInstance::random(0).unwrap();
    assert!(check_unbiasedness(&inst, 1, 0).is_err());
}

fn clustered(concepts: usize, per: usize, noise: f64, seed: u64) -> Vec<(Vec<f64>, usize)> {
    let d = 8;
    let mut r = rng::stream(&[seed, 5]);
    let mut pairs = Vec::new();
    for _ in 0..per {
        for c in 0..concepts {
            let v = (0..d)
                .map(|j| if j == c { 3.0 } else { 0.0 } + rng::uniform(-noise, noise, &mut r))
                .collect();
            pairs.push((v, c));
        }
    }
    pairs
}

#[test]
fn separable_excerpts_are_recovered() {
    let pairs = clustered(4, 50, 0.5, 1);
    let acc = posteriori_from_pairs(&pairs, 4, &PosterioriConfig::default()).unwrap();
    assert!(acc >= 0.99, "{acc}");
}

#[test]
fn noise_excerpts_score_at_chance() {
    let mut r = rng::stream(&[9]);
    let pairs: Vec<(Vec<f64>, usize)> = (0..400)
        .map(|i| ((0..8).map(|_| rng::uniform(-1.0, 1.0, &mut r)).collect(), i % 4))
        .collect();
    let acc = posteriori_from_pairs(&pairs, 4, &PosterioriConfig::default()).unwrap();
    let n = 80.0;
    assert!((acc - 0.25).abs() <= 3.0 * libm::sqrt(0.25 * 0.75 / n), "{acc}");
}

#[test]
fn single_concept_is_degenerate() {
    let pairs = vec![(vec![1.0, 0.0], 2); 10];
    assert!(matches!(
        posteriori_from_pairs(&pairs, 3, &PosterioriConfig::default()),
        Err(Error::Degenerate(_))
    ));
    assert!(matches!(
        posteriori_from_pairs(&[], 3, &PosterioriConfig::default()),
        Err(Error::Degenerate(_))
    ));
}

#[test]
fn concepts_seen_once_stay_in_training() {
    let mut pairs = clustered(2, 10, 0.1, 2);
    pairs.push((vec![0.0, 0.0, 3.0, 0.0, 0.0, 0.0, 0.0, 0.0], 2));
    let acc = posteriori_from_pairs(&pairs, 3, &PosterioriConfig::default()).unwrap();
    assert_eq!(acc, 1.0);
}

#[test]
fn posteriori_is_deterministic() {
    let pairs = clustered(3, 20, 2.0, 3);
    let cfg = PosterioriConfig::default();
    let a = posteriori_from_pairs(&pairs, 3, &cfg).unwrap();
    assert_eq!(a.to_bits(), posteriori_from_pairs(&pairs, 3, &cfg).unwrap().to_bits());
}

fn forced_alpha(sign: f64) -> Tensor {
    // Saturated instances keep embedding coordinate 0 in [0.75, 1.25].
    Tensor::matrix(2, 4, vec![sign * 200.0, 0.0, 0.0, 0.0, sign * 200.0, 0.0, 0.0, 0.0]).unwrap()
}

#[test]
fn forced_presence_sets_sparsity() {
    let inst = TinyInstance::saturated(2).unwrap();
    let data = docs_for(&inst, 20, 3);
    let off = with_heads(&inst, 3, Some(forced_alpha(-1.0)), None);
    let on = with_heads(&inst, 3, Some(forced_alpha(1.0)), None);
    assert_eq!(sparsity(&off, &data, &inst.emb, 0).unwrap(), 0.0);
    assert_eq!(sparsity(&on, &data, &inst.emb, 0).unwrap(), 2.0);
    let traces = sampled_traces(&off, &data, &inst.emb, 0).unwrap();
    assert_eq!(concept_consistency(&traces), 0.0);
    assert!(matches!(
        posteriori_concept_accuracy(&off, &data, &inst.emb, 0, &PosterioriConfig::default()),
        Err(Error::Degenerate(_))
    ));
}

#[test]
fn zero_output_head_scores_chance_on_balanced_data() {
    let inst = TinyInstance::random(3).unwrap();
    let data = docs_for(&inst, 40, 4);
    let p = with_heads(&inst, 4, None, None);
    let acc = evaluate_output(&Model::Educe(p), &data, &inst.emb, 1).unwrap();
    let sd = libm::sqrt(0.25 * 0.75 / 40.0);
    assert!((acc.value() - 0.25).abs() <= 3.0 * sd);
}

#[test]
fn correct_outputs_score_one() {
    let inst = TinyInstance::random(3).unwrap();
    let data = docs_for(&inst, 9, 3);
    let outputs: Vec<Vec<f64>> = data
        .docs
        .iter()
        .map(|d| {
            let mut o = vec![0.1; 3];
            o[d.label.class().unwrap()] = 0.8;
            o
        })
        .collect();
    assert_eq!(output_metric(&data, &outputs).unwrap(), OutputMetric::Accuracy(1.0));
    assert!(output_metric(&data, &outputs[..3]).is_err());
}

#[test]
fn regression_metric_is_mean_squared_error() {
    let docs = vec![
        Document::new(vec![2; 4], Label::Targets(vec![0.0, 1.0]), 0),
        Document::new(vec![2; 4], Label::Targets(vec![0.5, 0.5]), 0),
    ];
    let data = Dataset::new(Task::Regression { targets: 2 }, docs).unwrap();
    let m = output_metric(&data, &[vec![0.2, 0.6], vec![0.5, 0.5]]).unwrap();
    let OutputMetric::Mse(v) = m else { panic!("{m:?}") };
    assert!((v - 0.05).abs() < 1e-15);
}

fn fixed_trace(inst: &TinyInstance, tokens: &[u32], spans: &[Span], code: &[bool]) -> crate::model::ForwardTrace {
    forward_with::<EduceRng>(tokens, &inst.params, &inst.emb, Choices::Fixed { spans, code }).unwrap()
}

#[test]
fn rationale_precision_counts_tokens_inside_gold_spans() {
    let inst = TinyInstance::random(4).unwrap();
    let mut d = Document::new(vec![3; 10], Label::Class(0), inst.params.config.pad_id);
    d.gold_spans = vec![
        GoldSpan {
            aspect: 0,
            start: 0,
            stop: 5,
        },
        GoldSpan {
            aspect: 1,
            start: 6,
            stop: 10,
        },
    ];
    let data = Dataset::new(inst.params.config.task, vec![d.clone()]).unwrap();
    let t = fixed_trace(
        &inst,
        &d.tokens,
        &[Span { start: 0, stop: 3 }, Span { start: 4, stop: 9 }],
        &[true, true],
    );
    let rep = rationale_precision(core::slice::from_ref(&t), &data).unwrap();
    assert_eq!(rep.precision[0], vec![1.0, 0.0]);
    assert_eq!(rep.precision[1], vec![1.0 / 6.0, 4.0 / 6.0]);
    assert_eq!(rep.extraction, 1.0);
    assert_eq!(rep.presence_counts, vec![1, 1]);

    let t = fixed_trace(
        &inst,
        &d.tokens,
        &[Span { start: 0, stop: 3 }, Span { start: 4, stop: 9 }],
        &[true, false],
    );
    let rep = rationale_precision(&[t], &data).unwrap();
    assert_eq!(rep.precision[1], vec![0.0, 0.0]);
    assert_eq!(rep.presence_counts, vec![1, 0]);
    assert_eq!(rep.extraction, 0.4);
    assert!(!rep.nothing_present);
}

#[test]
fn repartition_matches_an_independent_recount() {
    let inst = TinyInstance::random(5).unwrap();
    let mut data = docs_for(&inst, 30, 3);
    let mut r = rng::stream(&[44]);
    for d in &mut data.docs {
        d.word_labels = Some(
            (0..d.len())
                .map(|_| (rng::uniform(0.0, 3.0, &mut r) as u32).min(2))
                .collect(),
        );
    }
    let traces = sampled_traces(&inst.params, &data, &inst.emb, 7).unwrap();
    let rep = label_repartition(&traces, &data, Some(1)).unwrap();
    for c in 0..2 {
        let mut want = [0usize; 3];
        let mut non_neutral = 0;
        for (t, d) in traces.iter().zip(&data.docs) {
            let e = &t.extractions[c];
            if !e.present {
                continue;
            }
            for k in e.span.start..=e.span.stop {
                let l = d.word_labels.as_ref().unwrap()[k];
                if l != 1 {
                    want[l as usize] += 1;
                    non_neutral += 1;
                }
            }
        }
        assert_eq!(rep.counts[c], want.to_vec());
        assert_eq!(rep.counts[c].iter().sum::<usize>(), non_neutral);
    }
    assert_eq!(rep.counts.iter().map(|row| row[1]).sum::<usize>(), 0);

    data.docs[0].word_labels = None;
    assert!(label_repartition(&traces, &data, None).is_err());
}

#[test]
fn uniform_word_labels_give_a_single_bar() {
    let inst = TinyInstance::saturated(6).unwrap();
    let mut data = docs_for(&inst, 5, 3);
    for d in &mut data.docs {
        d.word_labels = Some(vec![2; d.len()]);
    }
    let on = with_heads(&inst, 3, Some(forced_alpha(1.0)), None);
    let traces = sampled_traces(&on, &data, &inst.emb, 0).unwrap();
    let rep = label_repartition(&traces, &data, Some(0)).unwrap();
    for row in &rep.counts {
        assert_eq!(row[0], 0);
        assert_eq!(row[1], 0);
        assert!(row[2] >= 4 * data.len());
    }
}

#[test]
fn explanation_of_a_forced_concept() {
    let inst = TinyInstance::build(7, 9, 1, true).unwrap();
    let alpha = Tensor::matrix(1, 4, vec![200.0, 0.0, 0.0, 0.0]).unwrap();
    let p = with_heads(&inst, 3, Some(alpha), Some(inst.params.delta().clone()));
    let names: Vec<alloc::string::String> = (0..8).map(|i| alloc::format!("v{i}")).collect();
    let vocab = Vocab::from_tokens(&names);
    let x = explain(&p, 0, &inst.tokens, &inst.label, &inst.emb, &vocab, 3, false).unwrap();
    assert_eq!(x.concepts.len(), 1);
    let c = &x.concepts[0];
    assert!(c.present);
    assert!((4..=11).contains(&c.tokens.len()));
    assert_eq!(c.tokens.len(), c.span.len());
    assert_eq!(c.tokens[0], vocab.token(inst.tokens[c.span.start]).unwrap());
    assert_eq!(
        x,
        explain(&p, 0, &inst.tokens, &inst.label, &inst.emb, &vocab, 3, false).unwrap()
    );

    let argmax = explain(&p, 0, &inst.tokens, &inst.label, &inst.emb, &vocab, 3, true).unwrap();
    assert!(argmax.concepts[0].present);
}

#[test]
fn explanations_recount_to_the_reported_sparsity() {
    let inst = TinyInstance::random(8).unwrap();
    let data = docs_for(&inst, 25, 3);
    let names: Vec<alloc::string::String> = (0..8).map(|i| alloc::format!("v{i}")).collect();
    let vocab = Vocab::from_tokens(&names);
    let mut present = 0usize;
    for (i, d) in data.docs.iter().enumerate() {
        let x = explain(&inst.params, i, &d.tokens, &d.label, &inst.emb, &vocab, 13, false).unwrap();
        present += x.concepts.iter().filter(|c| c.present).count();
    }
    let s = sparsity(&inst.params, &data, &inst.emb, 13).unwrap();
    assert_eq!(s, present as f64 / data.len() as f64);
}

#[test]
fn metrics_report_is_consistent_with_the_single_metrics() {
    let inst = TinyInstance::random(9).unwrap();
    let data = docs_for(&inst, 60, 3);
    let cfg = PosterioriConfig {
        epochs: 20,
        ..PosterioriConfig::default()
    };
    let rep = metrics_report(&inst.params, &data, &inst.emb, 5, &cfg, None).unwrap();
    assert_eq!(
        rep.output,
        evaluate_output(&Model::Educe(inst.params.clone()), &data, &inst.emb, 5).unwrap()
    );
    assert_eq!(rep.sparsity, sparsity(&inst.params, &data, &inst.emb, 5).unwrap());
    assert_eq!(
        rep.posteriori.clone().unwrap(),
        posteriori_concept_accuracy(&inst.params, &data, &inst.emb, 5, &cfg).unwrap()
    );
    assert!(rep.rationale.is_none());
    assert!(rep.repartition.is_none());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn metrics_stay_in_range(seed in 0u64..500, eval_seed in 0u64..100) {
        let inst = TinyInstance::build(seed, 7, 1 + (seed % 3) as usize, false).unwrap();
        let data = docs_for(&inst, 12, 3);
        let traces = sampled_traces(&inst.params, &data, &inst.emb, eval_seed).unwrap();
        let s = mean_sparsity(&traces);
        prop_assert!((0.0..=inst.params.config.concepts as f64).contains(&s));
        let c = concept_consistency(&traces);
        prop_assert!((0.0..=1.0).contains(&c));
        let acc = evaluate_output(&Model::Educe(inst.params.clone()), &data, &inst.emb, eval_seed).unwrap().value();
        prop_assert!((0.0..=1.0).contains(&acc));
    }

    #[test]
    fn enumeration_is_normalized(seed in 0u64..500, len in 4usize..9, concepts in 1usize..3) {
        let inst = TinyInstance::build(seed, len, concepts, seed % 2 == 0).unwrap();
        let e = exact_expectation(&inst.params, &inst.tokens, &inst.label, &inst.emb, inst.objective, DEFAULT_BUDGET).unwrap();
        prop_assert!((e.total_probability - 1.0).abs() < 1e-9);
        prop_assert!(e.loss.is_finite());
    }
}
