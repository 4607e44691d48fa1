//! Acceptance gate for the crate: nine checks, each printing one
//! `acceptance N (name): PASS` / `FAIL` line. The lines are written
//! straight to stdout so they survive the harness's output capture.
//!
//! Tolerances and time budgets are pinned next to each check.

mod common;

use std::io::Write as _;
use std::panic::{catch_unwind, resume_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

use common::{two_cluster_corpus, write_corpus, CorpusFiles, CorpusSpec};
use evmem::embedding::{Embedder, EmbedderKind, Embedding};
use evmem::eval::{
    average_precision, evaluate, mean_average_precision, mean_reciprocal_rank, reciprocal_rank,
    QuestionRanking, RankedCandidate,
};
use evmem::data::Label;
use evmem::manifest::RunManifest;
use evmem::memory::{GateParams, MemoryBank};
use evmem::model::{
    backward, embed_dataset, forward_step, loss, train, ClassifierParams, TrainingConfig,
};
use evmem::rng::sub_rng;
use evmem::tracing::{random_baseline_precision, run_tracing_experiment};

/// Seed for every randomized check in this file.
const SUITE_SEED: u64 = 20260816;

/// Writes through the raw handle, bypassing the per-test capture, so
/// the verdict lines show up in ordinary `cargo test` output.
fn announce(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
}

fn criterion<F: FnOnce()>(number: usize, name: &str, check: F) {
    match catch_unwind(AssertUnwindSafe(check)) {
        Ok(()) => announce(&format!("acceptance {number} ({name}): PASS")),
        Err(cause) => {
            announce(&format!("acceptance {number} ({name}): FAIL"));
            resume_unwind(cause);
        }
    }
}

fn assert_within(elapsed: Duration, budget: Duration, what: &str) {
    assert!(
        elapsed <= budget,
        "{what} took {elapsed:?}, over its {budget:?} budget"
    );
}

// ---------------------------------------------------------------------------
// 1. Honest scale statement.

#[test]
fn criterion_1_scale_statement() {
    criterion(1, "scale-statement", || {
        announce(
            "note: the published full-scale scores (TrecQA MAP 0.961 / MRR 0.993 with 32 \
             memory cells) rest on a finetuned RoBERTa encoder and ASNQ transfer training, \
             far beyond this test bed; they are not reproduced here.",
        );
        announce(
            "note: this suite instead verifies the mechanism at desk scale: equation and \
             metric oracles, gradient checks, update invariants, and synthetic learning and \
             tracing runs.",
        );
    });
}

// ---------------------------------------------------------------------------
// 2. Forward-pass equation oracle.

/// One random model state plus input, small enough to re-derive by hand.
struct RandomInstance {
    bank: MemoryBank,
    gate_params: GateParams,
    classifier: ClassifierParams,
    x: Embedding,
    epsilon: f64,
    label: Label,
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-3 {
            return v.into_iter().map(|a| a / norm).collect();
        }
    }
}

fn random_instance(rng: &mut ChaCha8Rng) -> RandomInstance {
    let dim = rng.random_range(1..=8);
    let cells = rng.random_range(1..=5);
    let bank = MemoryBank::new(
        (0..cells)
            .map(|_| {
                // Unit direction scaled below 1 so cell norms start legal.
                let scale = rng.random_range(0.0..1.0);
                random_unit(rng, dim).into_iter().map(|v| v * scale).collect()
            })
            .collect(),
    )
    .expect("valid bank");
    let gate_params = GateParams {
        w_g: (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
        b_g: rng.random_range(-1.0..1.0),
    };
    let classifier = ClassifierParams {
        w_p: [
            (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
            (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
        ],
        b_p: [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
    };
    let x = Embedding::new(random_unit(rng, dim)).unwrap();
    let epsilon = rng.random_range(0.05..=1.0);
    let label = if rng.random_range(0..2) == 0 { Label::Negative } else { Label::Positive };
    RandomInstance { bank, gate_params, classifier, x, epsilon, label }
}

/// Everything the straight-line oracle recomputes for one step.
struct OracleStep {
    attention: Vec<f64>,
    best: usize,
    gate: f64,
    written_cell: Vec<f64>,
    support: Vec<f64>,
    probabilities: [f64; 2],
}

/// The whole forward step as bare loops: softmax attention over dot
/// products, argmax with low-index ties, sigmoid gate with the doubled
/// bias, convex write, post-write weighted read, linear head softmax.
fn oracle_step(inst: &RandomInstance) -> OracleStep {
    let x = inst.x.values();
    let dim = x.len();
    let cells: Vec<&[f64]> = inst.bank.cells().collect();

    let dots: Vec<f64> = cells
        .iter()
        .map(|cell| (0..dim).map(|d| x[d] * cell[d]).sum::<f64>())
        .collect();
    let exps: Vec<f64> = dots.iter().map(|z| z.exp()).collect();
    let exp_sum: f64 = exps.iter().sum();
    let attention: Vec<f64> = exps.iter().map(|e| e / exp_sum).collect();

    let mut best = 0;
    for (i, &w) in attention.iter().enumerate() {
        if w > attention[best] {
            best = i;
        }
    }

    let z = (0..dim).map(|d| inst.gate_params.w_g[d] * (cells[best][d] + x[d])).sum::<f64>()
        + 2.0 * inst.gate_params.b_g;
    let gate = inst.epsilon * (1.0 / (1.0 + (-z).exp()));

    let written_cell: Vec<f64> =
        (0..dim).map(|d| gate * x[d] + (1.0 - gate) * cells[best][d]).collect();

    let mut support = vec![0.0; dim];
    for (i, cell) in cells.iter().enumerate() {
        let source = if i == best { &written_cell } else { *cell };
        for d in 0..dim {
            support[d] += attention[i] * source[d];
        }
    }

    let logits: Vec<f64> = (0..2)
        .map(|c| {
            (0..dim)
                .map(|d| inst.classifier.w_p[c][d] * (support[d] + x[d]))
                .sum::<f64>()
                + inst.classifier.b_p[c]
        })
        .collect();
    let lexps: Vec<f64> = logits.iter().map(|z| z.exp()).collect();
    let lsum: f64 = lexps.iter().sum();
    let probabilities = [lexps[0] / lsum, lexps[1] / lsum];

    OracleStep { attention, best, gate, written_cell, support, probabilities }
}

fn assert_close_slices(actual: &[f64], expected: &[f64], tol: f64, what: &str) {
    assert_eq!(actual.len(), expected.len(), "{what} length");
    for (i, (a, e)) in actual.iter().zip(expected).enumerate() {
        assert!(
            (a - e).abs() <= tol,
            "{what}[{i}]: {a} vs oracle {e} (diff {})",
            (a - e).abs()
        );
    }
}

#[test]
fn criterion_2_forward_oracle() {
    criterion(2, "forward-oracle", || {
        const TOL: f64 = 1e-9;
        const CONFIGS: usize = 1000;
        let started = Instant::now();
        let mut rng = sub_rng(SUITE_SEED, "forward-oracle");
        for _ in 0..CONFIGS {
            let inst = random_instance(&mut rng);
            let expected = oracle_step(&inst);

            let mut bank = inst.bank.clone();
            let trace = forward_step(
                &inst.x,
                &mut bank,
                &inst.gate_params,
                &inst.classifier,
                inst.epsilon,
            )
            .unwrap();

            assert_close_slices(trace.attention.weights(), &expected.attention, TOL, "attention");
            assert_eq!(trace.best_index, expected.best, "written index");
            assert!((trace.gate.gate.value() - expected.gate).abs() <= TOL, "gate");
            assert_close_slices(
                bank.cell(expected.best).unwrap(),
                &expected.written_cell,
                TOL,
                "written cell",
            );
            assert_close_slices(&trace.support, &expected.support, TOL, "support");
            assert_close_slices(
                &[trace.probabilities.p_neg, trace.probabilities.p_pos],
                &expected.probabilities,
                TOL,
                "probabilities",
            );
        }
        assert_within(started.elapsed(), Duration::from_secs(10), "forward oracle");
    });
}

// ---------------------------------------------------------------------------
// 3. Gradient check against central finite differences.

#[test]
fn criterion_3_gradient_check() {
    criterion(3, "gradient-check", || {
        const INSTANCES: usize = 120;
        const H: f64 = 1e-5;
        const REL: f64 = 1e-4;
        const ABS: f64 = 1e-7;
        let started = Instant::now();
        let mut rng = sub_rng(SUITE_SEED, "gradient-check");

        let close = |analytic: f64, fd: f64, what: &str| {
            let diff = (analytic - fd).abs();
            let scale = analytic.abs().max(fd.abs());
            assert!(
                diff <= ABS + REL * scale,
                "{what}: analytic {analytic} vs finite difference {fd} (diff {diff})"
            );
        };

        for _ in 0..INSTANCES {
            let inst = random_instance(&mut rng);

            let mut bank = inst.bank.clone();
            let trace = forward_step(
                &inst.x,
                &mut bank,
                &inst.gate_params,
                &inst.classifier,
                inst.epsilon,
            )
            .unwrap();
            let grads = backward(&trace, &inst.classifier, inst.label).unwrap();

            // Loss of the whole step, re-run from the same carried-in
            // bank with perturbed parameters.
            let step_loss = |gate_params: &GateParams, classifier: &ClassifierParams| -> f64 {
                let mut bank = inst.bank.clone();
                let trace =
                    forward_step(&inst.x, &mut bank, gate_params, classifier, inst.epsilon)
                        .unwrap();
                loss(&trace.probabilities, inst.label)
            };
            let central = |plus: f64, minus: f64| (plus - minus) / (2.0 * H);

            let dim = inst.classifier.dim();
            for row in 0..2 {
                for d in 0..dim {
                    let mut up = inst.classifier.clone();
                    let mut down = inst.classifier.clone();
                    up.w_p[row][d] += H;
                    down.w_p[row][d] -= H;
                    let fd = central(
                        step_loss(&inst.gate_params, &up),
                        step_loss(&inst.gate_params, &down),
                    );
                    close(grads.d_w_p[row][d], fd, "d w_p");
                }
                let mut up = inst.classifier.clone();
                let mut down = inst.classifier.clone();
                up.b_p[row] += H;
                down.b_p[row] -= H;
                let fd = central(
                    step_loss(&inst.gate_params, &up),
                    step_loss(&inst.gate_params, &down),
                );
                close(grads.d_b_p[row], fd, "d b_p");
            }
            for d in 0..dim {
                let mut up = inst.gate_params.clone();
                let mut down = inst.gate_params.clone();
                up.w_g[d] += H;
                down.w_g[d] -= H;
                let fd =
                    central(step_loss(&up, &inst.classifier), step_loss(&down, &inst.classifier));
                close(grads.d_w_g[d], fd, "d w_g");
            }
            let mut up = inst.gate_params.clone();
            let mut down = inst.gate_params.clone();
            up.b_g += H;
            down.b_g -= H;
            let fd =
                central(step_loss(&up, &inst.classifier), step_loss(&down, &inst.classifier));
            close(grads.d_b_g, fd, "d b_g");
        }
        assert_within(started.elapsed(), Duration::from_secs(30), "gradient check");
    });
}

// ---------------------------------------------------------------------------
// 4. Step invariants.

#[test]
fn criterion_4_update_invariants() {
    criterion(4, "update-invariants", || {
        const TRIALS: usize = 10_000;
        const SUM_TOL: f64 = 1e-9;
        const NORM_TOL: f64 = 1e-12;
        let started = Instant::now();
        let mut rng = sub_rng(SUITE_SEED, "update-invariants");

        for _ in 0..TRIALS {
            let inst = random_instance(&mut rng);
            let before = inst.bank.clone();
            let mut bank = inst.bank.clone();
            let trace = forward_step(
                &inst.x,
                &mut bank,
                &inst.gate_params,
                &inst.classifier,
                inst.epsilon,
            )
            .unwrap();

            // Attention is a distribution.
            let weights = trace.attention.weights();
            assert!((weights.iter().sum::<f64>() - 1.0).abs() <= SUM_TOL);
            assert!(weights.iter().all(|&w| w >= 0.0));

            // The gate stays strictly inside (0, epsilon).
            let g = trace.gate.gate.value();
            assert!(g > 0.0 && g < inst.epsilon, "gate {g} vs epsilon {}", inst.epsilon);

            // Exactly one cell changed, to exactly the convex blend.
            for i in 0..bank.k() {
                let old = before.cell(i).unwrap();
                let new = bank.cell(i).unwrap();
                if i == trace.best_index {
                    for (d, (&nv, &ov)) in new.iter().zip(old).enumerate() {
                        let blend = g * inst.x.values()[d] + (1.0 - g) * ov;
                        assert!(nv == blend, "cell {i}[{d}]: {nv} vs blend {blend}");
                    }
                } else {
                    assert!(new == old, "untouched cell {i} changed");
                }
            }

            // A unit input keeps the written cell's norm at most 1.
            let norm =
                bank.cell(trace.best_index).unwrap().iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm <= 1.0 + NORM_TOL, "cell norm {norm}");

            // A frozen pass cannot move the bank.
            let frozen_before = bank.clone();
            let probe = Embedding::new(random_unit(&mut rng, inst.x.dim())).unwrap();
            inst_model(&inst, bank.clone()).frozen_forward(&probe).unwrap();
            assert!(bank == frozen_before, "frozen pass moved the bank");
        }
        assert_within(started.elapsed(), Duration::from_secs(30), "update invariants");
    });
}

/// Wraps loose pieces as a trained model so the frozen path under test
/// is the one evaluation uses.
fn inst_model(inst: &RandomInstance, bank: MemoryBank) -> evmem::model::TrainedModel {
    evmem::model::TrainedModel {
        config: TrainingConfig {
            dim: inst.x.dim(),
            cells: bank.k(),
            epsilon: inst.epsilon,
            learning_rate: 0.1,
            epochs: 1,
            seed: 0,
            embedder: EmbedderKind::File,
            l2_penalty: 0.0,
        },
        gate_params: inst.gate_params.clone(),
        classifier_params: inst.classifier.clone(),
        bank,
    }
}

// ---------------------------------------------------------------------------
// 5. Ranking-metric oracle.

/// Precision-at-rank by rescanning the prefix for every relevant hit.
fn oracle_average_precision(ranking: &QuestionRanking) -> f64 {
    let relevant: Vec<bool> =
        ranking.candidates.iter().map(|c| c.label.is_positive()).collect();
    let total = relevant.iter().filter(|&&r| r).count();
    let mut sum = 0.0;
    for (i, &rel) in relevant.iter().enumerate() {
        if rel {
            let hits = relevant[..=i].iter().filter(|&&r| r).count();
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / total as f64
}

fn oracle_reciprocal_rank(ranking: &QuestionRanking) -> f64 {
    let first = ranking
        .candidates
        .iter()
        .position(|c| c.label.is_positive())
        .expect("at least one relevant candidate");
    1.0 / (first + 1) as f64
}

#[test]
fn criterion_5_ranking_metric_oracle() {
    criterion(5, "ranking-metric-oracle", || {
        const TOL: f64 = 1e-9;
        const RANKINGS: usize = 1000;
        let mut rng = sub_rng(SUITE_SEED, "metric-oracle");

        let mut rankings = Vec::with_capacity(RANKINGS);
        for q in 0..RANKINGS {
            let n = rng.random_range(1..=12);
            let forced_relevant = rng.random_range(0..n);
            let candidates: Vec<RankedCandidate> = (0..n)
                .map(|i| RankedCandidate {
                    instance_id: format!("q{q}#{i}"),
                    p_pos: rng.random_range(-1.0..1.0),
                    label: if i == forced_relevant || rng.random_range(0..2) == 0 {
                        Label::Positive
                    } else {
                        Label::Negative
                    },
                })
                .collect();
            rankings.push(QuestionRanking::new(format!("q{q}"), candidates));
        }

        let mut ap_sum = 0.0;
        let mut rr_sum = 0.0;
        for ranking in &rankings {
            let ap = average_precision(ranking).unwrap();
            let rr = reciprocal_rank(ranking).unwrap();
            let ap_oracle = oracle_average_precision(ranking);
            let rr_oracle = oracle_reciprocal_rank(ranking);
            assert!((ap - ap_oracle).abs() <= TOL, "AP {ap} vs oracle {ap_oracle}");
            assert!((rr - rr_oracle).abs() <= TOL, "RR {rr} vs oracle {rr_oracle}");
            ap_sum += ap_oracle;
            rr_sum += rr_oracle;
        }
        let map = mean_average_precision(&rankings).unwrap();
        let mrr = mean_reciprocal_rank(&rankings).unwrap();
        assert!((map - ap_sum / RANKINGS as f64).abs() <= TOL);
        assert!((mrr - rr_sum / RANKINGS as f64).abs() <= TOL);

        // Hand-checked cases are exact.
        let perfect = QuestionRanking::new(
            "perfect",
            vec![
                RankedCandidate { instance_id: "a".into(), p_pos: 0.9, label: Label::Positive },
                RankedCandidate { instance_id: "b".into(), p_pos: 0.8, label: Label::Positive },
                RankedCandidate { instance_id: "c".into(), p_pos: 0.1, label: Label::Negative },
            ],
        );
        assert_eq!(average_precision(&perfect).unwrap(), 1.0);
        assert_eq!(reciprocal_rank(&perfect).unwrap(), 1.0);

        let second = QuestionRanking::new(
            "second",
            vec![
                RankedCandidate { instance_id: "a".into(), p_pos: 0.9, label: Label::Negative },
                RankedCandidate { instance_id: "b".into(), p_pos: 0.5, label: Label::Positive },
                RankedCandidate { instance_id: "c".into(), p_pos: 0.1, label: Label::Negative },
            ],
        );
        assert_eq!(average_precision(&second).unwrap(), 0.5);
        assert_eq!(reciprocal_rank(&second).unwrap(), 0.5);
    });
}

// ---------------------------------------------------------------------------
// 6. Desk-scale learning.

/// The pinned desk-scale learning configuration: two memory cells on
/// the 200/50 two-cluster corpus.
fn desk_learning_config(seed: u64) -> TrainingConfig {
    TrainingConfig {
        dim: 16,
        cells: 2,
        epsilon: 0.5,
        learning_rate: 0.1,
        epochs: 50,
        seed,
        embedder: EmbedderKind::File,
        l2_penalty: 0.0,
    }
}

#[test]
fn criterion_6_desk_scale_learning() {
    criterion(6, "desk-scale-learning", || {
        const SEED: u64 = 0;
        const FLOOR: f64 = 0.95;
        let started = Instant::now();

        let pipeline = || {
            let corpus = two_cluster_corpus(&CorpusSpec::desk_scale(SEED));
            let embedder = Embedder::Store(corpus.store.clone());
            let train_emb = embed_dataset(&corpus.train, &embedder).unwrap();
            let dev_emb = embed_dataset(&corpus.dev, &embedder).unwrap();
            let run = train(&corpus.train, &train_emb, &desk_learning_config(SEED)).unwrap();
            let report = evaluate(&run.model, &corpus.dev, &dev_emb).unwrap();
            (run, report)
        };

        let (run, report) = pipeline();
        assert_eq!(run.model.config.cells, 2);
        assert!(
            report.accuracy >= FLOOR,
            "validation accuracy {} below {FLOOR}",
            report.accuracy
        );
        assert!(report.map >= FLOOR, "validation MAP {} below {FLOOR}", report.map);

        // The run is a pure function of its seed.
        let (again, report_again) = pipeline();
        assert!(run == again, "identical seeds produced different runs");
        assert!(report == report_again, "identical seeds produced different reports");

        assert_within(started.elapsed(), Duration::from_secs(60), "desk-scale learning");
    });
}

// ---------------------------------------------------------------------------
// 7. Random tracing baseline.

#[test]
fn criterion_7_random_baseline() {
    criterion(7, "random-baseline", || {
        const FRACTION: f64 = 0.10;
        const ANALYTIC_TOL: f64 = 1e-12;
        const DRAWS: usize = 100_000;

        // Closed form: picking k of the pool uniformly hits a flipped
        // instance unless all k picks miss.
        assert!((random_baseline_precision(FRACTION, 1).unwrap() - 0.10).abs() <= ANALYTIC_TOL);
        assert!((random_baseline_precision(FRACTION, 3).unwrap() - 0.271).abs() <= ANALYTIC_TOL);

        // Monte Carlo agrees within three standard errors.
        let mut rng = sub_rng(SUITE_SEED, "random-baseline");
        for k in [1usize, 3] {
            let p = random_baseline_precision(FRACTION, k).unwrap();
            let mut hits = 0usize;
            for _ in 0..DRAWS {
                if (0..k).any(|_| rng.random_range(0.0..1.0) < FRACTION) {
                    hits += 1;
                }
            }
            let estimate = hits as f64 / DRAWS as f64;
            let standard_error = (p * (1.0 - p) / DRAWS as f64).sqrt();
            assert!(
                (estimate - p).abs() <= 3.0 * standard_error,
                "top-{k}: estimate {estimate} vs {p} (3 SE = {})",
                3.0 * standard_error
            );
        }
    });
}

// ---------------------------------------------------------------------------
// 8. Tracing beats the random baseline and matches global search.

#[test]
fn criterion_8_error_tracing() {
    criterion(8, "error-tracing", || {
        const FRACTION: f64 = 0.10;
        const RUNS_NEEDED: usize = 10;
        const SEED_CAP: u64 = 24;
        let started = Instant::now();

        // The tracing configuration: a wide bank so cells specialize.
        let config = |seed: u64| TrainingConfig {
            dim: 16,
            cells: 30,
            epsilon: 0.5,
            learning_rate: 0.3,
            epochs: 50,
            seed,
            embedder: EmbedderKind::File,
            l2_penalty: 0.0,
        };

        let mut memory_1 = Vec::new();
        let mut memory_3 = Vec::new();
        let mut global_1 = Vec::new();
        let mut global_3 = Vec::new();
        let mut seed = 0;
        while memory_1.len() < RUNS_NEEDED && seed < SEED_CAP {
            let corpus = two_cluster_corpus(&CorpusSpec::desk_scale(seed));
            let embedder = Embedder::Store(corpus.store.clone());
            let (report, _) = run_tracing_experiment(
                &corpus.train,
                &corpus.dev,
                &embedder,
                &config(seed),
                FRACTION,
                seed,
                &[1, 3],
            )
            .unwrap();
            // Precision is undefined on a run without validation errors.
            if report.error_count > 0 {
                memory_1.push(report.precisions["memory"]["1"]);
                memory_3.push(report.precisions["memory"]["3"]);
                global_1.push(report.precisions["global"]["1"]);
                global_3.push(report.precisions["global"]["3"]);
            }
            seed += 1;
        }
        assert!(
            memory_1.len() >= RUNS_NEEDED,
            "only {} of the first {SEED_CAP} seeds produced validation errors",
            memory_1.len()
        );

        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let twice_random = 2.0 * random_baseline_precision(FRACTION, 3).unwrap();
        assert!(
            mean(&memory_3) >= twice_random,
            "memory top-3 {} below twice the random baseline {twice_random}",
            mean(&memory_3)
        );
        assert!(
            mean(&memory_1) >= mean(&global_1),
            "memory top-1 {} below the global baseline {}",
            mean(&memory_1),
            mean(&global_1)
        );
        assert!(
            mean(&memory_3) >= mean(&global_3),
            "memory top-3 {} below the global baseline {}",
            mean(&memory_3),
            mean(&global_3)
        );
        assert_within(started.elapsed(), Duration::from_secs(600), "error tracing");
    });
}

// ---------------------------------------------------------------------------
// 9. Manifest replay.

fn evmem(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evmem"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary launches")
}

fn evmem_ok(dir: &Path, args: &[&str]) {
    let output = evmem(dir, args);
    assert!(
        output.status.success(),
        "evmem {args:?} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr),
    );
}

fn path_str(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

#[test]
fn criterion_9_manifest_replay() {
    criterion(9, "manifest-replay", || {
        let dir = TempDir::new().unwrap();
        let root = dir.path();
        let CorpusFiles { train, dev, table } =
            write_corpus(root, &two_cluster_corpus(&CorpusSpec::tiny(2)));
        let common_flags = ["--embedder", "file", "--embedding-file", path_str(&table)];

        // One run of every command that writes a manifest.
        let model = root.join("model.evmem");
        let mut args = vec![
            "train",
            "--data",
            path_str(&train),
            "--cells",
            "4",
            "--epochs",
            "30",
            "--lr",
            "0.3",
            "--seed",
            "2",
            "--out",
            path_str(&model),
        ];
        args.extend_from_slice(&common_flags);
        evmem_ok(root, &args);

        let report = root.join("report.json");
        evmem_ok(
            root,
            &[
                "eval",
                "--model",
                path_str(&model),
                "--data",
                path_str(&dev),
                "--embedding-file",
                path_str(&table),
                "--out",
                path_str(&report),
            ],
        );

        let corrupted = root.join("corrupted.tsv");
        evmem_ok(
            root,
            &[
                "perturb",
                "--data",
                path_str(&train),
                "--fraction",
                "0.25",
                "--seed",
                "2",
                "--out",
                path_str(&corrupted),
            ],
        );

        let trace = root.join("trace.json");
        let mut args = vec![
            "trace",
            "--data",
            path_str(&train),
            "--dev",
            path_str(&dev),
            "--cells",
            "4",
            "--epochs",
            "30",
            "--lr",
            "0.3",
            "--fraction",
            "0.25",
            "--seed",
            "2",
            "--k",
            "1,3",
            "--out",
            path_str(&trace),
        ];
        args.extend_from_slice(&common_flags);
        evmem_ok(root, &args);

        let sweep = root.join("sweep");
        let mut args = vec![
            "sweep",
            "--data",
            path_str(&train),
            "--dev",
            path_str(&dev),
            "--cells",
            "1,2",
            "--epochs",
            "5",
            "--seed",
            "2",
            "--out",
            path_str(&sweep),
        ];
        args.extend_from_slice(&common_flags);
        evmem_ok(root, &args);

        let manifests = [
            model.with_extension("evmem.manifest.json"),
            root.join("report.json.manifest.json"),
            root.join("corrupted.tsv.manifest.json"),
            root.join("trace.json.manifest.json"),
            sweep.join("sweep.manifest.json"),
        ];
        for manifest_path in &manifests {
            let manifest = RunManifest::load(manifest_path).unwrap();
            let outputs: Vec<PathBuf> = manifest.outputs.iter().map(PathBuf::from).collect();
            assert!(!outputs.is_empty(), "{} lists no outputs", manifest_path.display());
            let before: Vec<Vec<u8>> =
                outputs.iter().map(|p| std::fs::read(p).unwrap()).collect();

            evmem_ok(root, &["replay", "--manifest", path_str(manifest_path)]);

            for (path, expected) in outputs.iter().zip(&before) {
                let after = std::fs::read(path).unwrap();
                assert!(
                    after == *expected,
                    "replayed {} output {} is not byte-identical",
                    manifest.command,
                    path.display()
                );
            }
        }
    });
}
