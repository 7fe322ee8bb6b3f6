//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Tolerances are pinned below.

use std::time::{Duration, Instant};

use fusenet::data::{generate_synthetic, parse_jsonl, write_jsonl, SyntheticConfig, SyntheticDataset};
use fusenet::embed::EmbeddingTable;
use fusenet::eval::{self, topk_accuracy, topk_recall, EvalReport};
use fusenet::fusion::{self, FusionModel, Variant};
use fusenet::nn::params::flatten;
use fusenet::nn::{Activation, FeedforwardAttention};
use fusenet::numcore::{Rng, Tensor2D};
use fusenet::textprep::normalize;
use fusenet::train::{self, grad_check, layer_checks, TrainConfig};
use fusenet::workflow;

const GRAD_TOL: f64 = 1e-4;
const GRAD_TOL_MLP: f64 = 1e-5;
const GRAD_SEEDS: u64 = 10;
const GRAD_BUDGET: Duration = Duration::from_secs(60);

const ORDER_MARGIN: f64 = 0.02;
const TOP3_CHANCE: f64 = 3.0 / 13.0;
const ORDER_BUDGET: Duration = Duration::from_secs(600);

const BLIND_SINGLE_MAX: f64 = 0.7;
const BLIND_FUSION_MIN: f64 = 0.9;
const BLIND_GAP_MIN: f64 = 0.15;

const METRIC_CASES: usize = 500;
const IDENTITY_TOL: f64 = 1e-12;

const FUZZ_STRINGS: usize = 1000;
const EMBED_WORDS: usize = 100;

const ALPHA_SUM_TOL: f64 = 1e-12;
const UNIFORM_TOL: f64 = 1e-12;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Shared experiment settings for the synthetic runs.
fn experiment(ds: &SyntheticDataset) -> (workflow::Prepared, fusion::ModelConfig, TrainConfig) {
    let max_seq_len = 20;
    let prepared = workflow::prepare(&ds.examples, &ds.embeddings, [0.6, 0.2, 0.2], 0, max_seq_len).unwrap();
    let model_cfg = workflow::model_config(&prepared.pipeline, &ds.embeddings, max_seq_len, 16, 32, Activation::Relu, 1);
    let train_cfg = TrainConfig {
        epochs: 30,
        batch_size: 32,
        learning_rate: 3e-3,
        early_stop_patience: 8,
        seed: 1,
        ..TrainConfig::default()
    };
    (prepared, model_cfg, train_cfg)
}

fn train_all(ds: &SyntheticDataset) -> Vec<(Variant, EvalReport)> {
    let (prepared, model_cfg, train_cfg) = experiment(ds);
    Variant::ALL
        .iter()
        .map(|&v| {
            let model = FusionModel::build(&model_cfg, v, &mut Rng::new(model_cfg.seed)).unwrap();
            let (best, _) = train::train(model, &prepared.train, &prepared.val, &train_cfg).unwrap();
            (v, eval::report(&best, &prepared.test, 3).unwrap())
        })
        .collect()
}

fn get(reports: &[(Variant, EvalReport)], v: Variant) -> &EvalReport {
    &reports.iter().find(|(x, _)| *x == v).unwrap().1
}

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let mut worst_layer: f64 = 0.0;
    let mut worst_model = [0.0f64; 3];
    let mut failures = Vec::new();
    for seed in 1..=GRAD_SEEDS {
        for r in layer_checks(seed).unwrap() {
            worst_layer = worst_layer.max(r.max_rel_err());
            if !r.passes(GRAD_TOL) {
                failures.push(format!("{} seed {seed}", r.name));
            }
        }
        for (i, v) in Variant::ALL.iter().enumerate() {
            let r = grad_check(*v, seed).unwrap();
            worst_model[i] = worst_model[i].max(r.max_rel_err());
            let tol = if *v == Variant::Mlp { GRAD_TOL_MLP } else { GRAD_TOL };
            if !r.passes(tol) {
                failures.push(format!("{} seed {seed}", r.name));
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        failures.is_empty() && elapsed < GRAD_BUDGET,
        format!(
            "{GRAD_SEEDS} seeds, layers {worst_layer:.2e}, fusion {:.2e}, mlp {:.2e}, text {:.2e}, {:.1}s{}",
            worst_model[0],
            worst_model[1],
            worst_model[2],
            elapsed.as_secs_f64(),
            if failures.is_empty() { String::new() } else { format!(", failing: {}", failures.join("; ")) }
        ),
    )
}

fn variant_ordering() -> (Outcome, Vec<(Variant, EvalReport)>) {
    let start = Instant::now();
    let ds = generate_synthetic(&SyntheticConfig {
        n: 1300,
        noise: 0.05,
        seed: 5,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let reports = train_all(&ds);
    let (f, m, t) = (
        get(&reports, Variant::Fusion).accuracy,
        get(&reports, Variant::Mlp).accuracy,
        get(&reports, Variant::Text).accuracy,
    );
    let elapsed = start.elapsed();
    let pass = f >= t + ORDER_MARGIN
        && f >= m + ORDER_MARGIN
        && m >= TOP3_CHANCE
        && t >= TOP3_CHANCE
        && elapsed < ORDER_BUDGET;
    (
        outcome(
            pass,
            format!(
                "top-3 fusion {f:.4}, mlp {m:.4}, text {t:.4} (margin {ORDER_MARGIN}, chance {TOP3_CHANCE:.4}), {:.1}s",
                elapsed.as_secs_f64()
            ),
        ),
        reports,
    )
}

fn blind_spots() -> (Outcome, Vec<(Variant, EvalReport)>) {
    let ds = generate_synthetic(&SyntheticConfig {
        n: 1300,
        noise: 0.0,
        seed: 5,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let reports = train_all(&ds);
    let tg: Vec<&str> = ds.manifest.text_disambiguated.iter().map(String::as_str).collect();
    let sg: Vec<&str> = ds.manifest.signal_disambiguated.iter().map(String::as_str).collect();

    let mlp_on_text = get(&reports, Variant::Mlp).pooled_recall(&tg).unwrap();
    let fusion_on_text = get(&reports, Variant::Fusion).pooled_recall(&tg).unwrap();
    let text_on_signal = get(&reports, Variant::Text).pooled_recall(&sg).unwrap();
    let fusion_on_signal = get(&reports, Variant::Fusion).pooled_recall(&sg).unwrap();
    let gap1 = fusion_on_text - mlp_on_text;
    let gap2 = fusion_on_signal - text_on_signal;
    let pass = mlp_on_text < BLIND_SINGLE_MAX
        && fusion_on_text > BLIND_FUSION_MIN
        && text_on_signal < BLIND_SINGLE_MAX
        && fusion_on_signal > BLIND_FUSION_MIN
        && gap1 >= BLIND_GAP_MIN
        && gap2 >= BLIND_GAP_MIN;
    (
        outcome(
            pass,
            format!(
                "text-disambiguated group: mlp {mlp_on_text:.4} vs fusion {fusion_on_text:.4} (gap {gap1:.4}); \
                 signal-disambiguated group: text {text_on_signal:.4} vs fusion {fusion_on_signal:.4} (gap {gap2:.4})"
            ),
        ),
        reports,
    )
}

/// Per-case enumeration: walk every case and every slot of its top-k list.
fn oracle(preds: &[Vec<usize>], labels: &[usize], classes: usize) -> (f64, Vec<Option<f64>>) {
    let mut hits = 0usize;
    let mut class_hits = vec![0usize; classes];
    let mut class_n = vec![0usize; classes];
    for i in 0..labels.len() {
        let mut hit = false;
        for slot in 0..preds[i].len() {
            if preds[i][slot] == labels[i] {
                hit = true;
            }
        }
        class_n[labels[i]] += 1;
        if hit {
            hits += 1;
            class_hits[labels[i]] += 1;
        }
    }
    let recalls = (0..classes)
        .map(|c| (class_n[c] > 0).then(|| class_hits[c] as f64 / class_n[c] as f64))
        .collect();
    (hits as f64 / labels.len() as f64, recalls)
}

fn metric_exactness(trained: &[&EvalReport]) -> Outcome {
    let mut rng = Rng::new(2024);
    let mut mismatches = 0;
    let mut worst_identity: f64 = 0.0;
    for _ in 0..METRIC_CASES {
        let classes = 2 + rng.below(12);
        let k = 1 + rng.below(classes.min(5));
        let n = 1 + rng.below(80);
        let preds: Vec<Vec<usize>> = (0..n)
            .map(|_| {
                let mut all: Vec<usize> = (0..classes).collect();
                rng.shuffle(&mut all);
                all.truncate(k);
                all
            })
            .collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.below(classes)).collect();
        let (acc, recalls) = oracle(&preds, &labels, classes);
        if topk_accuracy(&preds, &labels).unwrap().to_bits() != acc.to_bits() {
            mismatches += 1;
        }
        for (c, want) in recalls.iter().enumerate() {
            let got = topk_recall(&preds, &labels, c).unwrap();
            if got.map(f64::to_bits) != want.map(f64::to_bits) {
                mismatches += 1;
            }
        }
        let report = EvalReport::from_predictions(&preds, &labels, classes).unwrap();
        worst_identity = worst_identity.max((report.accuracy - report.weighted_recall()).abs());
    }
    for r in trained {
        worst_identity = worst_identity.max((r.accuracy - r.weighted_recall()).abs());
    }
    outcome(
        mismatches == 0 && worst_identity <= IDENTITY_TOL,
        format!(
            "{METRIC_CASES} random sets, {mismatches} oracle mismatches, identity gap max {worst_identity:.1e} over {} reports",
            METRIC_CASES + trained.len()
        ),
    )
}

fn fuzz_string(rng: &mut Rng) -> String {
    const PIECES: &[&str] = &[
        "I'd", "don't", "can't", "won't", "it's", "they're", "April 29, 2017", "4/29/2017", "12-01-19",
        "$1,200.50", "$ 30", "$5", "john.doe@gmail.com", "a_b@x.io", "(415) 555-0134", "415.555.0134",
        "+1 415-555-0134", "loan", "LOAN", "Hello", "  ", "\t", ",", ".", "!", "?", "'", "\u{2019}", "@", "$",
        "0", "19", "2017", "May", "june 3", "this date", "this amount", "y'all", "o'clock", "\u{e9}t\u{e9}",
        "ma\u{f1}ana", "-", "/", "(", ")",
    ];
    let mut s = String::new();
    for _ in 0..rng.below(12) {
        if rng.bernoulli(0.3) {
            for _ in 0..1 + rng.below(4) {
                let c = match rng.below(4) {
                    0 => char::from(b'a' + rng.below(26) as u8),
                    1 => char::from(b'0' + rng.below(10) as u8),
                    2 => *rng.choose(&[' ', '\'', '.', ',', '@', '$', '-', '/', ':']),
                    _ => *rng.choose(&['\u{2019}', '\u{e9}', '\u{df}', 'A', 'Z']),
                };
                s.push(c);
            }
        } else {
            s.push_str(rng.choose(PIECES));
        }
        if rng.bernoulli(0.7) {
            s.push(' ');
        }
    }
    s
}

fn preprocessing() -> Outcome {
    let golden = [
        ("April 29, 2017", "this date"),
        ("I\u{2019}d like a loan", "i would like a loan"),
        ("john.doe@gmail.com", "this email address"),
    ];
    let mut failures = Vec::new();
    for (raw, want) in golden {
        let got = normalize(raw);
        if got != want {
            failures.push(format!("{raw:?} -> {got:?}"));
        }
    }
    let mut rng = Rng::new(99);
    let mut not_idempotent = 0;
    for _ in 0..FUZZ_STRINGS {
        let s = fuzz_string(&mut rng);
        let once = normalize(&s);
        if normalize(&once) != once {
            not_idempotent += 1;
            if not_idempotent <= 3 {
                failures.push(format!("not idempotent on {s:?}"));
            }
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "3 golden examples, {FUZZ_STRINGS} fuzz strings, {not_idempotent} idempotence failures{}",
            if failures.is_empty() { String::new() } else { format!(": {}", failures.join("; ")) }
        ),
    )
}

fn determinism_and_round_trips() -> Outcome {
    let mut notes = Vec::new();
    let ds = generate_synthetic(&SyntheticConfig {
        n: 260,
        noise: 0.05,
        seed: 11,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let (prepared, model_cfg, mut train_cfg) = experiment(&ds);
    train_cfg.epochs = 3;
    train_cfg.dropout_rate = 0.1;
    let run = || {
        let m = FusionModel::build(&model_cfg, Variant::Fusion, &mut Rng::new(model_cfg.seed)).unwrap();
        let (best, report) = train::train(m, &prepared.train, &prepared.val, &train_cfg).unwrap();
        (fusion::to_bytes(&best), report, best)
    };
    let (bytes1, rep1, model) = run();
    let (bytes2, rep2, _) = run();
    let same_ckpt = bytes1 == bytes2 && rep1.same_run(&rep2);
    notes.push(format!("checkpoint bit-identical {same_ckpt}"));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.fnet");
    fusion::save(&model, &path).unwrap();
    let back = fusion::load(&path).unwrap();
    let params_equal = flatten(&model)
        .iter()
        .zip(flatten(&back))
        .all(|(a, b)| a.to_bits() == b.to_bits());
    let probs_equal = prepared.test.iter().all(|ex| {
        let (p, _) = model.forward(&ex.input()).unwrap();
        let (q, _) = back.forward(&ex.input()).unwrap();
        p.iter().zip(&q).all(|(a, b)| a.to_bits() == b.to_bits())
    });
    let model_rt = params_equal && probs_equal && back.config() == model.config();
    notes.push(format!("model save/load lossless {model_rt}"));

    let jsonl = dir.path().join("d.jsonl");
    write_jsonl(&jsonl, &ds.examples).unwrap();
    let text = std::fs::read_to_string(&jsonl).unwrap();
    let reread = parse_jsonl(text.as_bytes(), "d.jsonl").unwrap();
    let data_rt = reread == ds.examples;
    notes.push(format!("jsonl lossless {data_rt}"));

    let mut rng = Rng::new(31);
    let (v, d) = (400, 7);
    let words: Vec<String> = (0..v).map(|i| format!("w{i}_{}", rng.below(1000))).collect();
    let w_emb = Tensor2D::from_fn(v, d, |_, _| rng.normal(0.0, 1.0) * 10f64.powi(rng.below(7) as i32 - 3));
    let table = EmbeddingTable::new(words.clone(), w_emb.clone()).unwrap();
    let vec_path = dir.path().join("e.vec");
    table.write_vec_file(&vec_path).unwrap();
    let loaded = EmbeddingTable::load_vec_file(&vec_path, usize::MAX).unwrap();
    let mut embed_ok = loaded.len() == v;
    for _ in 0..EMBED_WORDS {
        let i = rng.below(v);
        let mut onehot = vec![0.0; v];
        onehot[i] = 1.0;
        // W_emb^T e_i, written out as the full sum over the vocabulary
        let oracle: Vec<f64> = (0..d)
            .map(|j| (0..v).map(|r| w_emb.get(r, j) * onehot[r]).sum::<f64>())
            .collect();
        let got = loaded.lookup(&words[i]).unwrap();
        embed_ok &= got.iter().zip(&oracle).all(|(a, b)| a.to_bits() == b.to_bits());
    }
    notes.push(format!("embedding one-hot oracle exact {embed_ok} ({EMBED_WORDS} words)"));

    outcome(same_ckpt && model_rt && data_rt && embed_ok, notes.join(", "))
}

fn attention_contract() -> Outcome {
    let mut rng = Rng::new(7);
    let mut worst_sum: f64 = 0.0;
    let mut masked_nonzero = 0;
    let mut worst_uniform: f64 = 0.0;
    let trials = 500;
    for trial in 0..trials {
        let t = 1 + rng.below(12);
        let n = 1 + rng.below(10);
        let mut attn = FeedforwardAttention::init(n, &mut rng);
        attn.b = rng.normal(0.0, 1.0);
        let h = Tensor2D::from_fn(t, n, |_, _| rng.normal(0.0, 2.0));
        let mut mask: Vec<bool> = (0..t).map(|_| rng.bernoulli(0.7)).collect();
        let keep = rng.below(t);
        mask[keep] = true;
        let (_, alphas, _) = attn.forward(&h, &mask).unwrap();
        worst_sum = worst_sum.max((alphas.iter().sum::<f64>() - 1.0).abs());
        masked_nonzero += alphas.iter().zip(&mask).filter(|(a, m)| !**m && **a != 0.0).count();

        // uniform psi: zero projection, or identical rows, on alternate trials
        let (attn_u, h_u) = if trial % 2 == 0 {
            (FeedforwardAttention { w: vec![0.0; n], b: rng.normal(0.0, 1.0) }, h.clone())
        } else {
            let row: Vec<f64> = (0..n).map(|_| rng.normal(0.0, 2.0)).collect();
            (attn.clone(), Tensor2D::from_fn(t, n, |_, c| row[c]))
        };
        let (_, alphas, _) = attn_u.forward(&h_u, &mask).unwrap();
        let live = mask.iter().filter(|m| **m).count() as f64;
        for (a, m) in alphas.iter().zip(&mask) {
            let want = if *m { 1.0 / live } else { 0.0 };
            worst_uniform = worst_uniform.max((a - want).abs());
        }
    }
    outcome(
        worst_sum <= ALPHA_SUM_TOL && masked_nonzero == 0 && worst_uniform < UNIFORM_TOL,
        format!(
            "{trials} trials, |sum alpha - 1| max {worst_sum:.1e}, masked non-zero weights {masked_nonzero}, uniform deviation max {worst_uniform:.1e}"
        ),
    )
}

fn main() {
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    results.push(("1 gradient fidelity", gradient_fidelity()));
    let (ordering, reports_noisy) = variant_ordering();
    results.push(("2 ordering on synthetic data", ordering));
    let (blind, reports_clean) = blind_spots();
    results.push(("3 single-source blind spots", blind));
    let trained: Vec<&EvalReport> = reports_noisy.iter().chain(&reports_clean).map(|(_, r)| r).collect();
    results.push(("4 metric exactness", metric_exactness(&trained)));
    results.push(("5 preprocessing golden and idempotence", preprocessing()));
    results.push(("6 determinism and round trips", determinism_and_round_trips()));
    results.push(("7 attention contract", attention_contract()));

    let mut failed = 0;
    for (name, o) in &results {
        println!("{} criterion {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += !o.pass as usize;
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
