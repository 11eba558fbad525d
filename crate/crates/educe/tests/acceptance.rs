//! Acceptance suite. Prints one PASS/FAIL line per criterion and a verdict
//! over the gating ones; with `EDUCE_ACCEPTANCE_STRICT=1` a gating failure
//! also makes the process exit non-zero. Criterion 9 needs user data
//! (`EDUCE_AGNEWS_CONFIG`, a run config for AG News with 300-d vectors) and
//! never gates.

use std::path::Path;
use std::time::Instant;

use educe::config::{parse_config, DataSource, RunConfig};
use educe::run::{self, train_run};
use educe_core::encoder::encode;
use educe_core::evaluation::{
    check_unbiasedness, evaluate_output, posteriori_concept_accuracy, sparsity, PosterioriConfig, TinyInstance,
};
use educe_core::model::{forward_with, start_distribution, stop_distribution, Choices, EduceParams, Span, SpanMasks};
use educe_core::numerics::finite_diff_check;
use educe_core::rng::{self, EduceRng};
use educe_core::text::{gen_planted, planted_embeddings, stratified_split, PlantedSpec};
use educe_core::training::{
    document_gradient, run_training, surrogate_value, EstimatorConfig, ModelKind, Objective, TrainConfig, TrainingLog,
};
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(n: usize, name: &str, gating: bool, start: Instant, o: &Outcome) {
    let verdict = match (o.pass, gating) {
        (true, _) => "PASS",
        (false, true) => "FAIL",
        (false, false) => "FAIL (non-gating)",
    };
    println!(
        "criterion {n} {verdict}  {name}: {} [{:.1} s]",
        o.detail,
        start.elapsed().as_secs_f64()
    );
}

/// Finite differences of the fixed-sample surrogate against the tape
/// gradient, for the pathwise estimator and the training mix.
fn gradient_exactness() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut shapes = Vec::new();
    for seed in 0..5u64 {
        let (m, c) = (4 + seed as usize, 1 + seed as usize % 3);
        let inst = TinyInstance::build(100 + seed, m, c, false).unwrap();
        shapes.push(format!("M{m}C{c}"));
        for r in [0.0, 0.1] {
            let est = EstimatorConfig {
                objective: Objective {
                    lambda: 0.5,
                    lambda_l1: 0.1,
                },
                r,
                entropy_weight: 0.0,
            };
            let b = 0.3;
            let mut stream = rng::stream(&[seed, 0xACC]);
            let g = document_gradient(
                &inst.tokens,
                &inst.label,
                &inst.params,
                &inst.emb,
                &est,
                b,
                Choices::Sample(&mut stream),
                0,
            )
            .unwrap();
            let spans = g.trace.spans();
            let code = g.trace.code.clone();
            let base = &inst.params;
            let err = finite_diff_check(
                |ts| {
                    let mut store = base.store.clone();
                    store.set_all(ts.to_vec())?;
                    let p = EduceParams::from_store(base.config, store)?;
                    surrogate_value(&p, base, &inst.tokens, &inst.label, &inst.emb, &est, b, &spans, &code)
                },
                base.store.tensors(),
                &g.grads,
                1e-6,
            )
            .unwrap();
            worst = worst.max(err);
        }
    }
    Outcome {
        pass: worst < 1e-4,
        detail: format!("max relative error {worst:.2e} (limit 1e-4) on {}", shapes.join(" ")),
    }
}

fn unbiasedness() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for seed in 1..=3 {
        let inst = TinyInstance::random(seed).unwrap();
        let rep = check_unbiasedness(&inst, 100_000, 0).unwrap();
        let loss_z = (rep.mc_loss - rep.exact_loss).abs() / rep.mc_loss_se;
        let mut line = format!("instance {seed}:");
        for name in ["gamma_start", "gamma_stop"] {
            let b = rep.block(name).unwrap();
            let ok = b.within == b.coordinates;
            pass &= ok;
            line += &format!(" {name} {}/{} max_z {:.2}", b.within, b.coordinates, b.max_z);
        }
        pass &= loss_z <= 3.0;
        line += &format!(" loss z {loss_z:.2}");
        parts.push(line);
    }
    Outcome {
        pass,
        detail: parts.join("; "),
    }
}

/// Expected supports written out from the offset window 3..=10.
fn distribution_contracts() -> Outcome {
    let mut checked = 0usize;
    let mut worst_sum: f64 = 0.0;
    let mut failures = Vec::new();
    for m in 4..=12usize {
        for padded in [false, true] {
            let inst = TinyInstance::build(m as u64, m, 2, false).unwrap();
            let p = &inst.params;
            let pad = p.config.pad_id;
            let mut tokens = inst.tokens.clone();
            if padded {
                tokens.extend(std::iter::repeat(pad).take(5));
            }
            let enc = encode(&tokens, &inst.emb, &p.encoder()).unwrap();
            let masks = SpanMasks::new(&tokens, pad, p.config.window).unwrap();
            for c in 0..2 {
                let ps = start_distribution(&enc, p.gamma_start(), c, &masks).unwrap();
                let sum: f64 = (0..tokens.len()).filter(|&k| k + 3 < m).map(|k| ps[k]).sum();
                worst_sum = worst_sum.max((sum - 1.0).abs());
                for (k, &pk) in ps.iter().enumerate() {
                    let valid = k + 3 <= m - 1;
                    if !valid && pk != 0.0 {
                        failures.push(format!("M{m} start {k} off-support mass {pk}"));
                    }
                    if !valid {
                        if stop_distribution(&enc, p.gamma_stop(), c, k, &masks).is_ok() {
                            failures.push(format!("M{m} start {k} accepted"));
                        }
                        continue;
                    }
                    let pt = stop_distribution(&enc, p.gamma_stop(), c, k, &masks).unwrap();
                    let lo = k + 3;
                    let hi = (k + 10).min(m - 1);
                    let mut sum = 0.0;
                    for (j, &q) in pt.iter().enumerate() {
                        if (lo..=hi).contains(&j) {
                            sum += q;
                        } else if q != 0.0 {
                            failures.push(format!("M{m} start {k} stop {j} off-support mass {q}"));
                        }
                    }
                    worst_sum = worst_sum.max((sum - 1.0).abs());
                    checked += 1;
                }
            }
        }
    }
    let pass = failures.is_empty() && worst_sum < 1e-9;
    let mut detail = format!("{checked} stop distributions, max |sum - 1| {worst_sum:.1e}");
    if !failures.is_empty() {
        detail += &format!(", {} violations, first: {}", failures.len(), failures[0]);
    }
    Outcome { pass, detail }
}

fn z_sufficiency() -> Outcome {
    let mut altered = 0;
    let mut changed = Vec::new();
    for t in 0..1000u64 {
        let m = 6 + (t % 7) as usize;
        let c = 1 + (t % 3) as usize;
        let inst = TinyInstance::build(t / 21, m, c, false).unwrap();
        let p = &inst.params;
        let mut r = rng::stream(&[t, 0x25]);
        let trace = forward_with(&inst.tokens, p, &inst.emb, Choices::Sample(&mut r)).unwrap();
        let masks = SpanMasks::new(&inst.tokens, p.config.pad_id, p.config.window).unwrap();
        let all = masks.spans();
        let spans: Vec<Span> = (0..c).map(|_| all[r.gen_range(0..all.len())]).collect();
        if spans != trace.spans() {
            altered += 1;
        }
        let fixed = forward_with::<EduceRng>(
            &inst.tokens,
            p,
            &inst.emb,
            Choices::Fixed {
                spans: &spans,
                code: &trace.code,
            },
        )
        .unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        if bits(&fixed.output) != bits(&trace.output) {
            changed.push(t);
        }
    }
    Outcome {
        pass: changed.is_empty() && altered > 900,
        detail: format!(
            "1000 traces, {altered} with altered excerpts, {} output changes",
            changed.len()
        ),
    }
}

fn determinism(dir: &Path) -> Outcome {
    let mut cfg = RunConfig {
        source: DataSource::Planted,
        log_timing: false,
        ..RunConfig::default()
    };
    cfg.planted.docs_per_class = 30;
    cfg.train.embed_dim = 16;
    cfg.train.concepts = 4;
    cfg.train.hidden = 8;
    cfg.train.batch_size = 4;
    cfg.train.max_epochs = 3;
    cfg.train.seed = 11;
    let mut same = true;
    let mut compared = Vec::new();
    let a = dir.join("a");
    let b = dir.join("b");
    for out in [&a, &b] {
        cfg.out_dir = out.clone();
        train_run(&cfg).unwrap();
    }
    for f in [run::CHECKPOINT_FILE, "train_log.csv", "batch_log.csv"] {
        let x = std::fs::read(a.join(f)).unwrap();
        let y = std::fs::read(b.join(f)).unwrap();
        same &= x == y;
        compared.push(format!("{f} {} bytes", x.len()));
    }
    Outcome {
        pass: same,
        detail: format!("two runs, identical {}", compared.join(", ")),
    }
}

struct PlantedRun {
    accuracy: f64,
    posteriori: f64,
    sparsity: f64,
    log: TrainingLog,
    lambda0: f64,
}

fn planted_run(kind: ModelKind, seed: u64) -> PlantedRun {
    let corpus = gen_planted(&PlantedSpec::pairs(4, 500, 20, seed)).unwrap();
    let emb = planted_embeddings(&corpus, 16, seed);
    let parts = stratified_split(&corpus.dataset, &[4.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0], seed).unwrap();
    assert_eq!([parts[0].len(), parts[1].len(), parts[2].len()], [2000, 500, 500]);
    let mut cfg = TrainConfig::new(corpus.dataset.task, 16);
    cfg.kind = kind;
    cfg.concepts = 4;
    cfg.hidden = 32;
    cfg.lambda0 = 0.1;
    cfg.r = 0.1;
    cfg.lr = 1e-3;
    cfg.batch_size = 1;
    cfg.max_epochs = 30;
    cfg.patience = 0;
    cfg.lambda_l1 = 1.0;
    cfg.seed = seed;
    let mut clock = || 0.0;
    let out = run_training(&cfg, &parts[0], &parts[1], &emb, corpus.vocab.pad_id(), &mut clock).unwrap();
    let p = out.best.as_educe().unwrap();
    let test = &parts[2];
    PlantedRun {
        accuracy: evaluate_output(&out.best, test, &emb, 99).unwrap().value(),
        posteriori: posteriori_concept_accuracy(p, test, &emb, 99, &PosterioriConfig::default()).unwrap_or(0.0),
        sparsity: sparsity(p, test, &emb, 99).unwrap(),
        log: out.log,
        lambda0: if kind.uses_concept_loss() { cfg.lambda0 } else { 0.0 },
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn planted_recovery(educe: &[PlantedRun], plain: &[PlantedRun], minutes: f64) -> Outcome {
    let acc = mean(educe.iter().map(|r| r.accuracy));
    let post = mean(educe.iter().map(|r| r.posteriori));
    let plain_post = mean(plain.iter().map(|r| r.posteriori));
    let gap = post - plain_post;
    Outcome {
        pass: acc >= 0.90 && post >= 0.70 && gap >= 0.15 && minutes < 20.0,
        detail: format!(
            "EDUCE accuracy {acc:.3} (>= 0.90), a-posteriori {post:.3} (>= 0.70); lambda0=0 a-posteriori {plain_post:.3}, \
             gap {:.1} points (>= 15); {minutes:.1} min for 6 runs (< 20)",
            100.0 * gap
        ),
    }
}

fn l1_direction(l1: &[PlantedRun], plain: &[PlantedRun]) -> Outcome {
    let with = mean(l1.iter().map(|r| r.sparsity));
    let without = mean(plain.iter().map(|r| r.sparsity));
    Outcome {
        pass: with < without,
        detail: format!("mean sparsity {with:.3} with lambda_L1 = 1, {without:.3} with lambda_L1 = 0"),
    }
}

fn schedule_audit(runs: &[&PlantedRun]) -> Outcome {
    let mut lambda_err: f64 = 0.0;
    let mut b_err: f64 = 0.0;
    let mut epochs = 0;
    for run in runs {
        let log = &run.log;
        for e in &log.epochs {
            let k = e.epoch - 1;
            let mut want = run.lambda0;
            for _ in 0..k {
                want *= 1.1;
            }
            lambda_err = lambda_err.max((e.lambda - want).abs());
            let losses: Vec<f64> = log
                .batches
                .iter()
                .filter(|b| b.epoch <= e.epoch)
                .map(|b| b.loss_joint)
                .collect();
            let m = losses.iter().sum::<f64>() / losses.len() as f64;
            b_err = b_err.max((e.baseline_b - m).abs());
            epochs += 1;
        }
        let mut sum = 0.0;
        for (i, b) in log.batches.iter().enumerate() {
            let before = if i == 0 { 0.0 } else { sum / i as f64 };
            b_err = b_err.max((b.baseline_before - before).abs());
            sum += b.loss_joint;
        }
    }
    Outcome {
        pass: lambda_err <= 1e-12 && b_err <= 1e-12 && epochs > 0,
        detail: format!("{epochs} epochs audited, max lambda error {lambda_err:.1e}, max baseline error {b_err:.1e}"),
    }
}

fn agnews_stretch(dir: &Path) -> Option<Outcome> {
    let path = std::env::var_os("EDUCE_AGNEWS_CONFIG")?;
    let mut cfg = parse_config(Path::new(&path), &[]).unwrap();
    cfg.out_dir = dir.join("agnews");
    let res = train_run(&cfg).unwrap();
    let ck = run::load_checkpoint(&res.out_dir.join(run::CHECKPOINT_FILE)).unwrap();
    let (data, emb) = run::select_data(&cfg, &ck, None, None).unwrap();
    let rep = match run::eval_run(&cfg, &ck, &data, &emb, &res.out_dir).unwrap() {
        run::Evaluation::Full(rep) => rep,
        run::Evaluation::OutputOnly(_) => panic!("AG News config must train an EDUCE model"),
    };
    let acc = 100.0 * rep.output.value();
    let post = 100.0 * rep.posteriori.as_ref().copied().unwrap_or(0.0);
    Some(Outcome {
        pass: (acc - 87.5).abs() <= 1.5 && post >= 65.0,
        detail: format!("accuracy {acc:.1} (87.5 +/- 1.5), a-posteriori {post:.1} (>= 65)"),
    })
}

fn main() {
    // `cargo test` passes harness flags such as `--nocapture`; none apply.
    let tmp = tempfile::tempdir().unwrap();
    let mut failed = Vec::new();
    let mut check = |n: usize, name: &str, start: Instant, o: Outcome| {
        report(n, name, true, start, &o);
        if !o.pass {
            failed.push(n);
        }
    };

    let t = Instant::now();
    check(1, "gradient exactness", t, gradient_exactness());
    let t = Instant::now();
    check(2, "estimator unbiasedness", t, unbiasedness());
    let t = Instant::now();
    check(3, "distribution contracts", t, distribution_contracts());

    let t = Instant::now();
    let educe: Vec<PlantedRun> = (1..=3).map(|s| planted_run(ModelKind::Educe, s)).collect();
    let plain: Vec<PlantedRun> = (1..=3).map(|s| planted_run(ModelKind::NoConcept, s)).collect();
    let minutes = t.elapsed().as_secs_f64() / 60.0;
    check(
        4,
        "planted concept recovery",
        t,
        planted_recovery(&educe, &plain, minutes),
    );
    let t = Instant::now();
    let l1: Vec<PlantedRun> = (1..=3).map(|s| planted_run(ModelKind::NoConceptL1, s)).collect();
    check(5, "L1 sparsity direction", t, l1_direction(&l1, &plain));

    let t = Instant::now();
    check(6, "z-sufficiency", t, z_sufficiency());
    let t = Instant::now();
    check(7, "determinism", t, determinism(tmp.path()));
    let t = Instant::now();
    let audited: Vec<&PlantedRun> = educe.iter().chain(&plain).chain(&l1).collect();
    check(8, "lambda schedule and baseline audit", t, schedule_audit(&audited));

    let t = Instant::now();
    match agnews_stretch(tmp.path()) {
        Some(o) => report(9, "AG News stretch", false, t, &o),
        None => println!("criterion 9 SKIP  AG News stretch: set EDUCE_AGNEWS_CONFIG to run (non-gating)"),
    }

    if failed.is_empty() {
        println!("acceptance: all gating criteria PASS");
    } else {
        println!("acceptance: gating criteria {failed:?} FAIL");
        if std::env::var_os("EDUCE_ACCEPTANCE_STRICT").is_some_and(|v| v == "1") {
            std::process::exit(1);
        }
    }
}
