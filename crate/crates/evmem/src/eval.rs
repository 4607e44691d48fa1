//! Ranking evaluation of a frozen model.
//!
//! Each question's candidates are scored by the model's positive-class
//! probability and sorted; mean average precision and mean reciprocal
//! rank summarize the rankings, and plain accuracy summarizes the
//! instance-level decisions. Questions whose candidates all share one
//! label make the ranking metrics meaningless — callers filter them out
//! first (see [`Dataset::filter_single_label_questions`]).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Label};
use crate::embedding::{check_dim, Embedding};
use crate::error::{EvmemError, Result};
use crate::model::TrainedModel;

/// One scored candidate answer.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedCandidate {
    pub instance_id: String,
    pub p_pos: f64,
    pub label: Label,
}

/// A question's candidates, best score first; score ties fall back to
/// ascending instance id so the order is total and reproducible.
#[derive(Debug, Clone, PartialEq)]
pub struct QuestionRanking {
    pub question_id: String,
    pub candidates: Vec<RankedCandidate>,
}

impl QuestionRanking {
    /// Builds a ranking from unsorted candidates.
    pub fn new(question_id: impl Into<String>, mut candidates: Vec<RankedCandidate>) -> Self {
        candidates.sort_by(|a, b| {
            b.p_pos
                .total_cmp(&a.p_pos)
                .then_with(|| a.instance_id.cmp(&b.instance_id))
        });
        QuestionRanking { question_id: question_id.into(), candidates }
    }
}

/// Scores every candidate of every question against the frozen bank.
/// Questions appear in dataset order.
pub fn rank_candidates(
    model: &TrainedModel,
    dataset: &Dataset,
    embeddings: &[Embedding],
) -> Result<Vec<QuestionRanking>> {
    check_dim(dataset.len(), embeddings.len())?;
    let mut rankings = Vec::new();
    for qid in dataset.question_ids() {
        let idxs = dataset.question_instances(qid).unwrap_or_default();
        if idxs.is_empty() {
            log::warn!("question {qid:?} has no candidates; skipping");
            continue;
        }
        let mut candidates = Vec::with_capacity(idxs.len());
        for &i in idxs {
            let out = model.frozen_forward(&embeddings[i])?;
            candidates.push(RankedCandidate {
                instance_id: dataset.instances()[i].instance_id.clone(),
                p_pos: out.probabilities.p_pos,
                label: dataset.instances()[i].label,
            });
        }
        rankings.push(QuestionRanking::new(qid, candidates));
    }
    Ok(rankings)
}

/// Average precision of one ranking: the mean, over its relevant
/// candidates, of the precision at that candidate's rank.
pub fn average_precision(ranking: &QuestionRanking) -> Result<f64> {
    let relevant = ranking.candidates.iter().filter(|c| c.label.is_positive()).count();
    if relevant == 0 {
        return Err(EvmemError::UndefinedMetric(format!(
            "question {:?} has no relevant candidate; filter the split first",
            ranking.question_id
        )));
    }
    let mut hits = 0;
    let mut sum = 0.0;
    for (rank0, c) in ranking.candidates.iter().enumerate() {
        if c.label.is_positive() {
            hits += 1;
            sum += hits as f64 / (rank0 + 1) as f64;
        }
    }
    Ok(sum / relevant as f64)
}

/// Reciprocal of the rank of the first relevant candidate.
pub fn reciprocal_rank(ranking: &QuestionRanking) -> Result<f64> {
    ranking
        .candidates
        .iter()
        .position(|c| c.label.is_positive())
        .map(|rank0| 1.0 / (rank0 + 1) as f64)
        .ok_or_else(|| {
            EvmemError::UndefinedMetric(format!(
                "question {:?} has no relevant candidate; filter the split first",
                ranking.question_id
            ))
        })
}

fn mean_over(rankings: &[QuestionRanking], f: fn(&QuestionRanking) -> Result<f64>) -> Result<f64> {
    if rankings.is_empty() {
        return Err(EvmemError::UndefinedMetric(
            "no questions to average over".into(),
        ));
    }
    let mut sum = 0.0;
    for r in rankings {
        sum += f(r)?;
    }
    Ok(sum / rankings.len() as f64)
}

pub fn mean_average_precision(rankings: &[QuestionRanking]) -> Result<f64> {
    mean_over(rankings, average_precision)
}

pub fn mean_reciprocal_rank(rankings: &[QuestionRanking]) -> Result<f64> {
    mean_over(rankings, reciprocal_rank)
}

/// Per-question detail carried in the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionScore {
    pub question_id: String,
    pub average_precision: f64,
}

/// Evaluation summary; serializes to the JSON report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub map: f64,
    pub mrr: f64,
    pub accuracy: f64,
    pub per_question: Vec<QuestionScore>,
}

impl EvalReport {
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
}

/// Ranks, averages, and counts correct decisions (a candidate is called
/// positive iff its positive probability exceeds one half).
pub fn evaluate(
    model: &TrainedModel,
    dataset: &Dataset,
    embeddings: &[Embedding],
) -> Result<EvalReport> {
    let rankings = rank_candidates(model, dataset, embeddings)?;
    let map = mean_average_precision(&rankings)?;
    let mrr = mean_reciprocal_rank(&rankings)?;
    let mut correct = 0usize;
    for (inst, e) in dataset.instances().iter().zip(embeddings) {
        let out = model.frozen_forward(e)?;
        if out.probabilities.predicted_label() == inst.label {
            correct += 1;
        }
    }
    let per_question = rankings
        .iter()
        .map(|r| {
            Ok(QuestionScore {
                question_id: r.question_id.clone(),
                average_precision: average_precision(r)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        map,
        mrr,
        accuracy: correct as f64 / dataset.len() as f64,
        per_question,
    })
}
