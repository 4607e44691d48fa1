//! Tracing validation errors back to training instances.
//!
//! After training, every training instance belongs to the cell its
//! attention peaks on. A misclassified validation instance is traced by
//! looking up its own best cell and ranking that cell's training group
//! by cosine similarity; the top k are the suspects. Two baselines
//! calibrate the result: the same similarity search over the whole
//! training set, and the analytic hit rate of picking k instances
//! uniformly at random. When the training labels were deliberately
//! corrupted, a good trace points at corrupted instances far more often
//! than either baseline.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Label, QAInstance};
use crate::embedding::{Embedder, Embedding};
use crate::error::{EvmemError, Result};
use crate::model::{embed_dataset, train, TrainedModel, TrainingConfig};

/// Which cell every training instance attends to hardest, both ways
/// around: id → cell, and cell → ids in dataset order.
#[derive(Debug, Clone, PartialEq)]
pub struct CellAssignment {
    by_instance: IndexMap<String, usize>,
    by_cell: Vec<Vec<String>>,
}

impl CellAssignment {
    pub fn cell_of(&self, instance_id: &str) -> Option<usize> {
        self.by_instance.get(instance_id).copied()
    }

    /// The training instance ids assigned to one cell.
    pub fn group(&self, cell: usize) -> &[String] {
        self.by_cell.get(cell).map(Vec::as_slice).unwrap_or_default()
    }

    pub fn k(&self) -> usize {
        self.by_cell.len()
    }
}

/// Runs one frozen forward pass per training instance and buckets each
/// by its argmax attention cell.
pub fn assign_cells(
    model: &TrainedModel,
    training: &Dataset,
    embeddings: &[Embedding],
) -> Result<CellAssignment> {
    if training.len() != embeddings.len() {
        return Err(EvmemError::Shape { expected: training.len(), actual: embeddings.len() });
    }
    let mut by_instance = IndexMap::new();
    let mut by_cell = vec![Vec::new(); model.bank.k()];
    for (inst, e) in training.instances().iter().zip(embeddings) {
        let best = model.frozen_forward(e)?.best_index;
        by_instance.insert(inst.instance_id.clone(), best);
        by_cell[best].push(inst.instance_id.clone());
    }
    Ok(CellAssignment { by_instance, by_cell })
}

/// One suspected training instance in a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracedInstance {
    pub instance_id: String,
    pub similarity: f64,
    /// Whether this instance's label was perturbed.
    pub hit: bool,
}

/// The full trace of one validation error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub validation_instance_id: String,
    pub predicted_label: Label,
    pub true_label: Label,
    pub best_cell: usize,
    /// True when the best cell's group was empty and the search fell
    /// back to the whole training set.
    pub used_global_fallback: bool,
    /// Top suspects, most similar first.
    pub traced: Vec<TracedInstance>,
}

/// Ranks candidate ids by cosine similarity to `val_x` (descending,
/// ties by ascending id) and keeps the top `k`. Embeddings are unit or
/// zero vectors, so the dot product is the cosine; it is clamped to
/// [-1, 1] against rounding spill.
fn top_k_similar(
    val_x: &Embedding,
    candidate_ids: &[String],
    training: &Dataset,
    embeddings: &[Embedding],
    perturbed: &BTreeSet<String>,
    k: usize,
) -> Result<Vec<TracedInstance>> {
    let index_of: IndexMap<&str, usize> = training
        .instances()
        .iter()
        .enumerate()
        .map(|(i, inst)| (inst.instance_id.as_str(), i))
        .collect();
    let mut scored = Vec::with_capacity(candidate_ids.len());
    for id in candidate_ids {
        let &i = index_of.get(id.as_str()).ok_or_else(|| {
            EvmemError::Internal(format!("traced id {id:?} is not a training instance"))
        })?;
        let sim = val_x.dot(&embeddings[i])?.clamp(-1.0, 1.0);
        scored.push((id.clone(), sim));
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    Ok(scored
        .into_iter()
        .map(|(instance_id, similarity)| TracedInstance {
            hit: perturbed.contains(&instance_id),
            instance_id,
            similarity,
        })
        .collect())
}

/// Traces one validation error through the memory: candidates are the
/// training instances of the error's own best cell, ranked by cosine
/// similarity. An empty cell group falls back to the whole training
/// set, and the record says so.
#[allow(clippy::too_many_arguments)]
pub fn trace_error(
    val: &QAInstance,
    val_x: &Embedding,
    predicted: Label,
    model: &TrainedModel,
    assignment: &CellAssignment,
    training: &Dataset,
    embeddings: &[Embedding],
    perturbed: &BTreeSet<String>,
    k: usize,
) -> Result<TraceRecord> {
    if k == 0 {
        return Err(EvmemError::Config("trace depth k must be positive".into()));
    }
    let best_cell = model.frozen_forward(val_x)?.best_index;
    let group = assignment.group(best_cell);
    let (candidates, used_global_fallback) = if group.is_empty() {
        log::warn!(
            "cell {best_cell} has no assigned training instances; tracing {:?} globally",
            val.instance_id
        );
        let all: Vec<String> = training
            .instances()
            .iter()
            .map(|i| i.instance_id.clone())
            .collect();
        (all, true)
    } else {
        (group.to_vec(), false)
    };
    Ok(TraceRecord {
        validation_instance_id: val.instance_id.clone(),
        predicted_label: predicted,
        true_label: val.label,
        best_cell,
        used_global_fallback,
        traced: top_k_similar(val_x, &candidates, training, embeddings, perturbed, k)?,
    })
}

/// The no-memory baseline: the same similarity search over every
/// training instance.
pub fn trace_error_global_baseline(
    val: &QAInstance,
    val_x: &Embedding,
    predicted: Label,
    training: &Dataset,
    embeddings: &[Embedding],
    perturbed: &BTreeSet<String>,
    k: usize,
) -> Result<TraceRecord> {
    if k == 0 {
        return Err(EvmemError::Config("trace depth k must be positive".into()));
    }
    let all: Vec<String> = training
        .instances()
        .iter()
        .map(|i| i.instance_id.clone())
        .collect();
    Ok(TraceRecord {
        validation_instance_id: val.instance_id.clone(),
        predicted_label: predicted,
        true_label: val.label,
        best_cell: 0,
        used_global_fallback: true,
        traced: top_k_similar(val_x, &all, training, embeddings, perturbed, k)?,
    })
}

/// Fraction of records whose first `min(k, traced length)` suspects
/// include at least one perturbed instance.
pub fn tracing_precision(
    records: &[TraceRecord],
    perturbed: &BTreeSet<String>,
    k: usize,
) -> Result<f64> {
    if records.is_empty() {
        return Err(EvmemError::UndefinedMetric(
            "tracing precision over zero validation errors".into(),
        ));
    }
    if k == 0 {
        return Err(EvmemError::Config("trace depth k must be positive".into()));
    }
    let hits = records
        .iter()
        .filter(|r| {
            let take = k.min(r.traced.len());
            r.traced[..take].iter().any(|t| perturbed.contains(&t.instance_id))
        })
        .count();
    Ok(hits as f64 / records.len() as f64)
}

/// Expected precision of tracing by picking `k` training instances
/// uniformly at random when a `fraction` of them are perturbed:
/// one minus the chance that all `k` picks miss.
pub fn random_baseline_precision(fraction: f64, k: usize) -> Result<f64> {
    if !(fraction.is_finite() && fraction > 0.0 && fraction < 1.0) {
        return Err(EvmemError::Config(format!(
            "perturbation fraction must lie strictly inside (0, 1), got {fraction}"
        )));
    }
    if k == 0 {
        return Err(EvmemError::Config("trace depth k must be positive".into()));
    }
    Ok(1.0 - (1.0 - fraction).powi(k as i32))
}

/// The resolved inputs of one tracing experiment, echoed in its report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRunConfig {
    #[serde(flatten)]
    pub training: TrainingConfig,
    pub fraction: f64,
    pub k_values: Vec<usize>,
}

/// Everything one tracing experiment produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceReport {
    pub config: TraceRunConfig,
    pub error_count: usize,
    /// Set when the metrics are undefined (no validation errors).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub note: Option<String>,
    /// method ("memory" / "global" / "random") → k → precision.
    pub precisions: BTreeMap<String, BTreeMap<String, f64>>,
    /// Memory-method traces, one per validation error.
    pub records: Vec<TraceRecord>,
}

impl TraceReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())
            .map_err(|e| EvmemError::io(path.display().to_string(), e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let display = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| EvmemError::io(display.clone(), e))?;
        serde_json::from_str(&text)
            .map_err(|e| EvmemError::format(display, e.line(), e.to_string()))
    }

    /// Just the method-by-depth precision table, one row per method,
    /// or an empty string when no precisions were computed.
    pub fn precision_table(&self) -> String {
        let mut out = String::new();
        if self.precisions.is_empty() {
            return out;
        }
        let _ = write!(out, "{:<8}", "method");
        for k in &self.config.k_values {
            let _ = write!(out, "  {:>6}", format!("Top {k}"));
        }
        let _ = writeln!(out);
        for method in ["memory", "global", "random"] {
            if let Some(by_k) = self.precisions.get(method) {
                let _ = write!(out, "{method:<8}");
                for k in &self.config.k_values {
                    match by_k.get(&k.to_string()) {
                        Some(p) => {
                            let _ = write!(out, "  {p:>6.2}");
                        }
                        None => {
                            let _ = write!(out, "  {:>6}", "-");
                        }
                    }
                }
                let _ = writeln!(out);
            }
        }
        out
    }

    /// The human-readable companion: the precision table followed by
    /// each error and its suspects.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "tracing report");
        let _ = writeln!(
            out,
            "perturbed fraction {}, {} validation error(s)",
            self.config.fraction, self.error_count
        );
        if let Some(note) = &self.note {
            let _ = writeln!(out, "note: {note}");
        }
        let table = self.precision_table();
        if !table.is_empty() {
            let _ = writeln!(out);
            out.push_str(&table);
        }
        for r in &self.records {
            let _ = writeln!(out);
            let _ = writeln!(
                out,
                "error {}: predicted {}, was {} (cell {}{})",
                r.validation_instance_id,
                r.predicted_label,
                r.true_label,
                r.best_cell,
                if r.used_global_fallback { ", global fallback" } else { "" }
            );
            for t in &r.traced {
                let _ = writeln!(
                    out,
                    "  {} similarity {:.4}{}",
                    t.instance_id,
                    t.similarity,
                    if t.hit { "  [perturbed]" } else { "" }
                );
            }
        }
        out
    }

    pub fn save_text(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render_text())
            .map_err(|e| EvmemError::io(path.display().to_string(), e))
    }
}

/// Traces every validation error of an already-trained model against
/// its (corrupted) training set and scores all three methods at every
/// requested depth. `fraction` is the share of corrupted training
/// labels, used for the analytic random baseline.
#[allow(clippy::too_many_arguments)]
pub fn trace_with_model(
    model: &TrainedModel,
    training: &Dataset,
    train_embeddings: &[Embedding],
    validation: &Dataset,
    val_embeddings: &[Embedding],
    perturbed: &BTreeSet<String>,
    fraction: f64,
    k_values: &[usize],
) -> Result<TraceReport> {
    if k_values.is_empty() {
        return Err(EvmemError::Config("at least one trace depth k is required".into()));
    }
    for &k in k_values {
        if k == 0 {
            return Err(EvmemError::Config("trace depth k must be positive".into()));
        }
    }
    let assignment = assign_cells(model, training, train_embeddings)?;
    let max_k = *k_values.iter().max().expect("k_values is nonempty");
    let mut memory_records = Vec::new();
    let mut global_records = Vec::new();
    for (inst, x) in validation.instances().iter().zip(val_embeddings) {
        let predicted = model.frozen_forward(x)?.probabilities.predicted_label();
        if predicted == inst.label {
            continue;
        }
        memory_records.push(trace_error(
            inst, x, predicted, model, &assignment, training, train_embeddings, perturbed, max_k,
        )?);
        global_records.push(trace_error_global_baseline(
            inst, x, predicted, training, train_embeddings, perturbed, max_k,
        )?);
    }

    let error_count = memory_records.len();
    let mut precisions: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    let mut note = None;
    if error_count == 0 {
        note = Some("no errors; tracing undefined".to_owned());
    } else {
        for &k in k_values {
            let key = k.to_string();
            precisions
                .entry("memory".into())
                .or_default()
                .insert(key.clone(), tracing_precision(&memory_records, perturbed, k)?);
            precisions
                .entry("global".into())
                .or_default()
                .insert(key.clone(), tracing_precision(&global_records, perturbed, k)?);
            precisions
                .entry("random".into())
                .or_default()
                .insert(key, random_baseline_precision(fraction, k)?);
        }
    }

    Ok(TraceReport {
        config: TraceRunConfig {
            training: model.config.clone(),
            fraction,
            k_values: k_values.to_vec(),
        },
        error_count,
        note,
        precisions,
        records: memory_records,
    })
}

/// The full experiment: corrupt a fraction of the training labels,
/// train on the corrupted stream, collect validation errors, trace each
/// error through the memory and through the global baseline, and score
/// all methods at every requested depth. The passed seed drives the
/// whole run (the training config's own seed is overridden), so one
/// seed reproduces the experiment bit for bit.
pub fn run_tracing_experiment(
    training: &Dataset,
    validation: &Dataset,
    embedder: &Embedder,
    config: &TrainingConfig,
    fraction: f64,
    seed: u64,
    k_values: &[usize],
) -> Result<(TraceReport, TrainedModel)> {
    let mut config = config.clone();
    config.seed = seed;

    let mut corrupted = training.clone();
    let record = corrupted.perturb_labels(fraction, seed)?;
    let perturbed: BTreeSet<String> =
        record.entries.iter().map(|e| e.instance_id.clone()).collect();

    let train_embeddings = embed_dataset(&corrupted, embedder)?;
    let run = train(&corrupted, &train_embeddings, &config)?;
    let model = run.model;
    let val_embeddings = embed_dataset(validation, embedder)?;
    let report = trace_with_model(
        &model,
        &corrupted,
        &train_embeddings,
        validation,
        &val_embeddings,
        &perturbed,
        fraction,
        k_values,
    )?;
    Ok((report, model))
}
