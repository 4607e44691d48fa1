//! The classifier head, gradients, and the training loop.
//!
//! A forward step runs the full pipeline — attention, gate, write, read,
//! predict — against a mutable bank; a frozen forward skips the write and
//! leaves the bank untouched. Gradients are computed by hand. Parameters
//! only influence the loss through the current step (the gate moves this
//! step's write, the classifier scores this step's read); cells carried
//! in from earlier steps and the attention weights are constants with
//! respect to the parameters, so the analytic gradients below are exact
//! and finite differences must agree to rounding error.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::{Dataset, Label};
use crate::embedding::{check_dim, dot_slices, Embedder, EmbedderKind, Embedding};
use crate::error::{EvmemError, Result};
use crate::memory::{
    attention_weights, gate_activation, read_support, softmax, write_cell, AttentionVector,
    GateActivation, GateParams, MemoryBank,
};
use crate::rng::sub_rng;

/// Two-class linear head: row 0 scores the negative class, row 1 the
/// positive class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    pub w_p: [Vec<f64>; 2],
    pub b_p: [f64; 2],
}

impl ClassifierParams {
    pub fn zeros(dim: usize) -> Self {
        ClassifierParams {
            w_p: [vec![0.0; dim], vec![0.0; dim]],
            b_p: [0.0, 0.0],
        }
    }

    pub fn dim(&self) -> usize {
        self.w_p[0].len()
    }
}

/// A normalized two-class distribution, both entries strictly positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassProbabilities {
    pub p_neg: f64,
    pub p_pos: f64,
}

impl ClassProbabilities {
    pub fn prob_of(&self, label: Label) -> f64 {
        match label {
            Label::Negative => self.p_neg,
            Label::Positive => self.p_pos,
        }
    }

    /// Positive iff the positive probability exceeds one half.
    pub fn predicted_label(&self) -> Label {
        if self.p_pos > 0.5 {
            Label::Positive
        } else {
            Label::Negative
        }
    }
}

/// Scores the summed support-plus-input feature with the linear head
/// and softmaxes the two logits.
pub fn predict(
    x: &Embedding,
    support: &[f64],
    params: &ClassifierParams,
) -> Result<ClassProbabilities> {
    check_dim(params.dim(), x.dim())?;
    check_dim(params.dim(), support.len())?;
    let feature: Vec<f64> = support.iter().zip(x.values()).map(|(s, v)| s + v).collect();
    let logits = [
        dot_slices(&params.w_p[0], &feature) + params.b_p[0],
        dot_slices(&params.w_p[1], &feature) + params.b_p[1],
    ];
    let p = softmax(&logits);
    Ok(ClassProbabilities { p_neg: p[0], p_pos: p[1] })
}

/// Cross-entropy against the true label, clamped away from log(0).
pub fn loss(p: &ClassProbabilities, label: Label) -> f64 {
    let p_label = p.prob_of(label);
    // Clamp by comparison: f64::max would turn a NaN probability into
    // the clamp value, hiding divergence from the training loop.
    let clamped = if p_label < 1e-12 { 1e-12 } else { p_label };
    -clamped.ln()
}

/// Everything one writing forward step computed, in the order it was
/// computed; `backward` consumes this.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub x: Embedding,
    pub attention: AttentionVector,
    pub best_index: usize,
    pub gate: GateActivation,
    /// The written cell's contents before the write.
    pub pre_write_cell: Vec<f64>,
    /// Read from the bank after the write.
    pub support: Vec<f64>,
    pub probabilities: ClassProbabilities,
}

/// One training-time step: attends, gates, writes into the best cell,
/// reads the updated bank, and predicts.
pub fn forward_step(
    x: &Embedding,
    bank: &mut MemoryBank,
    gate_params: &GateParams,
    classifier: &ClassifierParams,
    epsilon: f64,
) -> Result<ForwardTrace> {
    let attention = attention_weights(x, bank)?;
    let best_index = attention.best();
    let pre_write_cell = bank.cell(best_index)?.to_vec();
    let gate = gate_activation(x, &pre_write_cell, gate_params, epsilon)?;
    write_cell(bank, best_index, x, gate.gate)?;
    let support = read_support(bank, &attention)?;
    let probabilities = predict(x, &support, classifier)?;
    Ok(ForwardTrace {
        x: x.clone(),
        attention,
        best_index,
        gate,
        pre_write_cell,
        support,
        probabilities,
    })
}

/// What an evaluation-time step computes against an untouched bank.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenForward {
    pub attention: AttentionVector,
    pub best_index: usize,
    pub support: Vec<f64>,
    pub probabilities: ClassProbabilities,
}

/// The no-write counterpart of [`forward_step`]: the shared borrow
/// guarantees the bank cannot change.
pub fn forward_frozen(
    x: &Embedding,
    bank: &MemoryBank,
    classifier: &ClassifierParams,
) -> Result<FrozenForward> {
    let attention = attention_weights(x, bank)?;
    let best_index = attention.best();
    let support = read_support(bank, &attention)?;
    let probabilities = predict(x, &support, classifier)?;
    Ok(FrozenForward { attention, best_index, support, probabilities })
}

/// Loss gradients for all four trainable parameter groups.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub d_w_p: [Vec<f64>; 2],
    pub d_b_p: [f64; 2],
    pub d_w_g: Vec<f64>,
    pub d_b_g: f64,
}

/// Exact gradients of the step loss. The classifier terms are the usual
/// softmax cross-entropy ones; the gate terms follow the loss through
/// the read into this step's write: the written cell moves with the gate
/// at rate `x - old_cell`, weighted by its attention weight, and the
/// gate moves with its preactivation at rate `gate * (1 - sigma)`. The
/// shared bias appears in both halves of the preactivation, hence its
/// gradient doubles.
pub fn backward(
    trace: &ForwardTrace,
    classifier: &ClassifierParams,
    label: Label,
) -> Result<Gradients> {
    let dim = classifier.dim();
    let consistent = trace.x.dim() == dim
        && trace.support.len() == dim
        && trace.pre_write_cell.len() == dim
        && trace.best_index < trace.attention.weights().len();
    if !consistent {
        return Err(EvmemError::Internal(
            "forward trace does not match the classifier it is differentiated against".into(),
        ));
    }
    let p = trace.probabilities;
    let dz = match label {
        Label::Negative => [p.p_neg - 1.0, p.p_pos],
        Label::Positive => [p.p_neg, p.p_pos - 1.0],
    };
    let feature: Vec<f64> = trace
        .support
        .iter()
        .zip(trace.x.values())
        .map(|(s, v)| s + v)
        .collect();
    let d_w_p = [
        feature.iter().map(|f| dz[0] * f).collect(),
        feature.iter().map(|f| dz[1] * f).collect(),
    ];
    let d_support: Vec<f64> = (0..dim)
        .map(|d| dz[0] * classifier.w_p[0][d] + dz[1] * classifier.w_p[1][d])
        .collect();
    let w_best = trace.attention.weights()[trace.best_index];
    let d_gate: f64 = w_best
        * trace
            .x
            .values()
            .iter()
            .zip(&trace.pre_write_cell)
            .zip(&d_support)
            .map(|((xv, ev), ds)| ds * (xv - ev))
            .sum::<f64>();
    let d_preact = d_gate * trace.gate.gate.value() * (1.0 - trace.gate.sigma);
    let d_w_g = trace
        .pre_write_cell
        .iter()
        .zip(trace.x.values())
        .map(|(e, v)| d_preact * (e + v))
        .collect();
    Ok(Gradients { d_w_p, d_b_p: dz, d_w_g, d_b_g: 2.0 * d_preact })
}

/// One plain SGD update. The L2 penalty decays the two weight vectors
/// only, never the biases.
pub fn sgd_update(
    gate_params: &mut GateParams,
    classifier: &mut ClassifierParams,
    grads: &Gradients,
    learning_rate: f64,
    l2_penalty: f64,
) {
    for (row, grad_row) in classifier.w_p.iter_mut().zip(&grads.d_w_p) {
        for (w, g) in row.iter_mut().zip(grad_row) {
            *w -= learning_rate * (g + l2_penalty * *w);
        }
    }
    for (b, g) in classifier.b_p.iter_mut().zip(&grads.d_b_p) {
        *b -= learning_rate * g;
    }
    for (w, g) in gate_params.w_g.iter_mut().zip(&grads.d_w_g) {
        *w -= learning_rate * (g + l2_penalty * *w);
    }
    gate_params.b_g -= learning_rate * grads.d_b_g;
}

/// Hyperparameters of one training run.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainingConfig {
    pub dim: usize,
    pub cells: usize,
    pub epsilon: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub embedder: EmbedderKind,
    pub l2_penalty: f64,
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(EvmemError::Config(format!(
                "dimension must be at least 2, got {}",
                self.dim
            )));
        }
        if self.cells == 0 {
            return Err(EvmemError::Config("cell count must be positive".into()));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(EvmemError::Config(format!(
                "epsilon must lie in (0, 1], got {}",
                self.epsilon
            )));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(EvmemError::Config(format!(
                "learning rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(EvmemError::Config("epoch count must be positive".into()));
        }
        if !(self.l2_penalty.is_finite() && self.l2_penalty >= 0.0) {
            return Err(EvmemError::Config(format!(
                "l2 penalty must be non-negative and finite, got {}",
                self.l2_penalty
            )));
        }
        Ok(())
    }
}

/// A trained classifier: learned parameters plus the frozen bank.
/// Immutable after training, safe to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub config: TrainingConfig,
    pub gate_params: GateParams,
    pub classifier_params: ClassifierParams,
    pub bank: MemoryBank,
}

impl TrainedModel {
    /// Scores one input against the frozen bank.
    pub fn frozen_forward(&self, x: &Embedding) -> Result<FrozenForward> {
        forward_frozen(x, &self.bank, &self.classifier_params)
    }
}

/// Fresh parameters: weights uniform in `(-1/sqrt(dim), 1/sqrt(dim))`
/// from the seed's "init" stream, biases zero. The gate weights draw
/// first, then the two classifier rows.
pub fn init_params(dim: usize, seed: u64) -> (GateParams, ClassifierParams) {
    let mut rng = sub_rng(seed, "init");
    let bound = 1.0 / (dim as f64).sqrt();
    let mut draw = |n: usize| -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-bound..bound)).collect()
    };
    let w_g = draw(dim);
    let w_p = [draw(dim), draw(dim)];
    (
        GateParams { w_g, b_g: 0.0 },
        ClassifierParams { w_p, b_p: [0.0, 0.0] },
    )
}

/// Builds the starting bank from the training stream:
///
/// * one cell — the first instance's embedding;
/// * two cells — per-class means of each class's first
///   `min(64, class size)` embeddings in dataset order, negative class
///   first (both classes must be present);
/// * more — the embeddings of the first K pairwise-distinct instances
///   in dataset order; if both classes exist but the picks cover only
///   one, the last pick is swapped for the missing class's first
///   instance; if fewer than K distinct embeddings exist, the remaining
///   slots repeat instances from the top of the dataset.
///
/// The rule reads the stream in order, so the same seed that ordered
/// the dataset reproduces the same bank.
pub fn init_memory(
    dataset: &Dataset,
    embeddings: &[Embedding],
    k: usize,
    _seed: u64,
) -> Result<MemoryBank> {
    if k == 0 {
        return Err(EvmemError::Config("cell count must be positive".into()));
    }
    if k > dataset.len() {
        return Err(EvmemError::Config(format!(
            "cannot initialize {k} cells from {} training instances",
            dataset.len()
        )));
    }
    check_dim(dataset.len(), embeddings.len())?;
    let cells: Vec<Vec<f64>> = match k {
        1 => vec![embeddings[0].values().to_vec()],
        2 => {
            let mut cells = Vec::with_capacity(2);
            for label in [Label::Negative, Label::Positive] {
                let class: Vec<&Embedding> = dataset
                    .instances()
                    .iter()
                    .zip(embeddings)
                    .filter(|(inst, _)| inst.label == label)
                    .map(|(_, e)| e)
                    .collect();
                if class.is_empty() {
                    return Err(EvmemError::Config(format!(
                        "two-cell initialization needs both classes; no instance has label {label}"
                    )));
                }
                let take = class.len().min(64);
                let mut mean = vec![0.0; embeddings[0].dim()];
                for e in &class[..take] {
                    for (m, v) in mean.iter_mut().zip(e.values()) {
                        *m += v;
                    }
                }
                for m in &mut mean {
                    *m /= take as f64;
                }
                cells.push(mean);
            }
            cells
        }
        _ => {
            let mut chosen: Vec<usize> = Vec::with_capacity(k);
            for i in 0..dataset.len() {
                if chosen.len() == k {
                    break;
                }
                if chosen.iter().all(|&c| embeddings[c] != embeddings[i]) {
                    chosen.push(i);
                }
            }
            let labels_present = |idxs: &[usize]| {
                let mut has = [false; 2];
                for &i in idxs {
                    has[dataset.instances()[i].label.is_positive() as usize] = true;
                }
                has
            };
            let in_dataset = labels_present(&(0..dataset.len()).collect::<Vec<_>>());
            let in_chosen = labels_present(&chosen);
            for (slot, label) in [(0, Label::Negative), (1, Label::Positive)] {
                if in_dataset[slot] && !in_chosen[slot] {
                    let first = dataset
                        .instances()
                        .iter()
                        .position(|inst| inst.label == label)
                        .expect("class present in dataset");
                    *chosen.last_mut().expect("k >= 3 picks at least one") = first;
                }
            }
            let mut fill = 0..dataset.len();
            while chosen.len() < k {
                let i = fill.next().expect("k <= dataset length");
                chosen.push(i);
            }
            chosen.iter().map(|&i| embeddings[i].values().to_vec()).collect()
        }
    };
    MemoryBank::new(cells)
}

/// One recorded training loss: epoch and step are zero-based, step
/// counts instances within the epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct LossEntry {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
}

/// A finished training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun {
    pub model: TrainedModel,
    pub loss_history: Vec<LossEntry>,
}

/// Embeds every instance of a dataset, in order.
pub fn embed_dataset(dataset: &Dataset, embedder: &Embedder) -> Result<Vec<Embedding>> {
    dataset
        .instances()
        .iter()
        .map(|inst| embedder.embed_record(&inst.instance_id, &inst.question, &inst.answer))
        .collect()
}

/// Streams the dataset through the model for `config.epochs` passes.
/// Each epoch visits every instance once in an order drawn from the
/// seed's "shuffle" stream, updating the parameters by SGD after every
/// instance. The bank carries over between epochs — it is the summary
/// of everything seen — and is frozen into the returned model. A
/// non-finite loss aborts with the offending instance in the error.
pub fn train(
    dataset: &Dataset,
    embeddings: &[Embedding],
    config: &TrainingConfig,
) -> Result<TrainRun> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(EvmemError::Config("cannot train on an empty dataset".into()));
    }
    check_dim(dataset.len(), embeddings.len())?;
    for e in embeddings {
        check_dim(config.dim, e.dim())?;
    }
    let (mut gate_params, mut classifier) = init_params(config.dim, config.seed);
    let mut bank = init_memory(dataset, embeddings, config.cells, config.seed)?;
    let mut shuffle_rng = sub_rng(config.seed, "shuffle");
    let mut loss_history = Vec::with_capacity(config.epochs * dataset.len());
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        for (step, &idx) in order.iter().enumerate() {
            let instance = &dataset.instances()[idx];
            let trace = forward_step(
                &embeddings[idx],
                &mut bank,
                &gate_params,
                &classifier,
                config.epsilon,
            )?;
            let step_loss = loss(&trace.probabilities, instance.label);
            if !step_loss.is_finite() {
                return Err(EvmemError::Numeric {
                    instance_id: instance.instance_id.clone(),
                    epoch,
                    step,
                    value: step_loss,
                });
            }
            loss_history.push(LossEntry { epoch, step, loss: step_loss });
            let grads = backward(&trace, &classifier, instance.label)?;
            sgd_update(
                &mut gate_params,
                &mut classifier,
                &grads,
                config.learning_rate,
                config.l2_penalty,
            );
        }
    }
    Ok(TrainRun {
        model: TrainedModel {
            config: config.clone(),
            gate_params,
            classifier_params: classifier,
            bank,
        },
        loss_history,
    })
}

const MODEL_VERSION_LINE: &str = "#evmem-v1";

/// Serializes a model as a single versioned text file: a config
/// section, the gate and classifier parameters, and the memory
/// snapshot. Floats print in shortest round-trip form, so save → load
/// → save is byte-stable.
pub fn save_model(model: &TrainedModel, path: &Path) -> Result<()> {
    let c = &model.config;
    let mut out = String::new();
    let _ = writeln!(out, "{MODEL_VERSION_LINE}");
    let _ = writeln!(out, "#section config");
    let _ = writeln!(out, "dim={}", c.dim);
    let _ = writeln!(out, "cells={}", c.cells);
    let _ = writeln!(out, "epsilon={}", c.epsilon);
    let _ = writeln!(out, "learning_rate={}", c.learning_rate);
    let _ = writeln!(out, "epochs={}", c.epochs);
    let _ = writeln!(out, "seed={}", c.seed);
    let _ = writeln!(out, "embedder={}", c.embedder);
    let _ = writeln!(out, "l2_penalty={}", c.l2_penalty);
    let _ = writeln!(out, "#section gate");
    let _ = write!(out, "w_g");
    for v in &model.gate_params.w_g {
        let _ = write!(out, "\t{v}");
    }
    let _ = writeln!(out, "\nb_g\t{}", model.gate_params.b_g);
    let _ = writeln!(out, "#section classifier");
    for (name, row) in [("w_p_neg", &model.classifier_params.w_p[0]), ("w_p_pos", &model.classifier_params.w_p[1])] {
        let _ = write!(out, "{name}");
        for v in row {
            let _ = write!(out, "\t{v}");
        }
        out.push('\n');
    }
    let _ = writeln!(
        out,
        "b_p\t{}\t{}",
        model.classifier_params.b_p[0], model.classifier_params.b_p[1]
    );
    let _ = writeln!(out, "#section memory");
    let _ = writeln!(out, "#dim={}", model.bank.dim());
    for (i, cell) in model.bank.cells().enumerate() {
        let _ = write!(out, "cell_{i}");
        for v in cell {
            let _ = write!(out, "\t{v}");
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| EvmemError::io(path.display().to_string(), e))
}

/// Reads a file written by [`save_model`], verifying the version line
/// and the mutual consistency of all sections.
pub fn load_model(path: &Path) -> Result<TrainedModel> {
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| EvmemError::io(display.clone(), e))?;
    parse_model(&text, &display)
}

fn parse_model(text: &str, path: &str) -> Result<TrainedModel> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, first)) if first.trim_end() == MODEL_VERSION_LINE => {}
        _ => {
            return Err(EvmemError::format(
                path,
                1,
                format!("expected version line {MODEL_VERSION_LINE:?}"),
            ));
        }
    }
    let mut section = String::new();
    let mut config_kv: Vec<(String, String)> = Vec::new();
    let mut rows: Vec<(String, String, usize)> = Vec::new();
    let mut memory_text = String::new();
    for (line_no, raw) in lines {
        let line_no = line_no + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix("#section ") {
            section = name.trim().to_owned();
            continue;
        }
        match section.as_str() {
            "config" => {
                let (key, value) = line.split_once('=').ok_or_else(|| {
                    EvmemError::format(path, line_no, format!("expected key=value, got {line:?}"))
                })?;
                config_kv.push((key.to_owned(), value.to_owned()));
            }
            "gate" | "classifier" => {
                let (name, rest) = line.split_once('\t').ok_or_else(|| {
                    EvmemError::format(path, line_no, format!("expected a tabbed row, got {line:?}"))
                })?;
                rows.push((name.to_owned(), rest.to_owned(), line_no));
            }
            "memory" => {
                memory_text.push_str(line);
                memory_text.push('\n');
            }
            other => {
                return Err(EvmemError::format(
                    path,
                    line_no,
                    format!("content outside any known section (in {other:?})"),
                ));
            }
        }
    }

    let lookup = |key: &str| -> Result<&str> {
        config_kv
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| EvmemError::format(path, 1, format!("config key {key:?} missing")))
    };
    fn parsed<T: std::str::FromStr>(path: &str, key: &str, value: &str) -> Result<T> {
        value.parse().map_err(|_| {
            EvmemError::format(path, 1, format!("config key {key:?} has bad value {value:?}"))
        })
    }
    let config = TrainingConfig {
        dim: parsed(path, "dim", lookup("dim")?)?,
        cells: parsed(path, "cells", lookup("cells")?)?,
        epsilon: parsed(path, "epsilon", lookup("epsilon")?)?,
        learning_rate: parsed(path, "learning_rate", lookup("learning_rate")?)?,
        epochs: parsed(path, "epochs", lookup("epochs")?)?,
        seed: parsed(path, "seed", lookup("seed")?)?,
        embedder: lookup("embedder")?.parse()?,
        l2_penalty: parsed(path, "l2_penalty", lookup("l2_penalty")?)?,
    };
    config.validate()?;

    let parse_floats = |name: &str| -> Result<Vec<f64>> {
        let (_, text, line_no) = rows
            .iter()
            .find(|(n, _, _)| n == name)
            .ok_or_else(|| EvmemError::format(path, 1, format!("parameter row {name:?} missing")))?;
        text.split('\t')
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| {
                        EvmemError::format(path, *line_no, format!("bad float {f:?} in row {name:?}"))
                    })
            })
            .collect()
    };
    let w_g = parse_floats("w_g")?;
    let b_g = parse_floats("b_g")?;
    let w_p_neg = parse_floats("w_p_neg")?;
    let w_p_pos = parse_floats("w_p_pos")?;
    let b_p = parse_floats("b_p")?;
    if b_g.len() != 1 || b_p.len() != 2 {
        return Err(EvmemError::format(path, 1, "bias rows have the wrong arity"));
    }
    let bank = MemoryBank::parse_snapshot(&memory_text, path)?;
    let consistent = w_g.len() == config.dim
        && w_p_neg.len() == config.dim
        && w_p_pos.len() == config.dim
        && bank.dim() == config.dim
        && bank.k() == config.cells;
    if !consistent {
        return Err(EvmemError::Config(format!(
            "model file sections disagree with config dim={} cells={}",
            config.dim, config.cells
        )));
    }
    Ok(TrainedModel {
        config,
        gate_params: GateParams { w_g, b_g: b_g[0] },
        classifier_params: ClassifierParams { w_p: [w_p_neg, w_p_pos], b_p: [b_p[0], b_p[1]] },
        bank,
    })
}

/// Writes the loss history as `epoch,step,loss` CSV.
pub fn save_loss_csv(history: &[LossEntry], path: &Path) -> Result<()> {
    let mut out = String::from("epoch,step,loss\n");
    for e in history {
        let _ = writeln!(out, "{},{},{}", e.epoch, e.step, e.loss);
    }
    std::fs::write(path, out).map_err(|e| EvmemError::io(path.display().to_string(), e))
}
