//! Shared fixture for the integration suites: a synthetic
//! answer-selection corpus whose embeddings form two label clusters,
//! with a micro-cluster per question inside each.

#![allow(dead_code)] // each test binary uses a different slice of this module

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use evmem::data::{Dataset, Label, QAInstance};
use evmem::embedding::{Embedding, EmbeddingStore};
use evmem::rng::sub_rng;

/// Shape and geometry of a generated corpus.
#[derive(Debug, Clone)]
pub struct CorpusSpec {
    /// Number of questions; each is a micro-cluster of candidates.
    pub questions: usize,
    /// Training candidates per label per question.
    pub train_per_label: usize,
    /// How many of the questions also get validation candidates.
    pub dev_questions: usize,
    /// Validation candidates per label per dev question.
    pub dev_per_label: usize,
    pub dim: usize,
    /// Weight on the shared label axis; larger pulls the two label
    /// clusters further apart.
    pub margin: f64,
    /// Weight on each question's own direction, orthogonal to the
    /// label axis; larger spreads the questions out.
    pub question_spread: f64,
    /// Weight on per-instance noise; larger blurs the micro-clusters.
    pub jitter: f64,
    pub seed: u64,
}

impl CorpusSpec {
    /// The desk-scale corpus used by the learning and tracing checks:
    /// dim 16, 200 training and 50 validation instances, labels given
    /// by the cluster an embedding belongs to.
    pub fn desk_scale(seed: u64) -> Self {
        CorpusSpec {
            questions: 100,
            train_per_label: 1,
            dev_questions: 25,
            dev_per_label: 1,
            dim: 16,
            margin: 0.3,
            question_spread: 1.0,
            jitter: 0.25,
            seed,
        }
    }

    /// A small corpus for exercising the command-line interface:
    /// 32 training and 8 validation instances at dim 8.
    pub fn tiny(seed: u64) -> Self {
        CorpusSpec {
            questions: 8,
            train_per_label: 2,
            dev_questions: 4,
            dev_per_label: 1,
            dim: 8,
            margin: 1.0,
            question_spread: 0.6,
            jitter: 0.15,
            seed,
        }
    }

    pub fn train_len(&self) -> usize {
        self.questions * self.train_per_label * 2
    }

    pub fn dev_len(&self) -> usize {
        self.dev_questions * self.dev_per_label * 2
    }
}

pub struct Corpus {
    pub train: Dataset,
    pub dev: Dataset,
    /// Embeddings for both splits, keyed by instance id.
    pub store: EmbeddingStore,
}

fn make_instance(
    spec: &CorpusSpec,
    rng: &mut ChaCha8Rng,
    question_id: &str,
    question: &str,
    label: Label,
    slot: usize,
    axis: usize,
) -> (QAInstance, Embedding) {
    let sign = if label.is_positive() { 1.0 } else { -1.0 };
    let mut values = vec![0.0; spec.dim];
    values[0] = sign * spec.margin;
    values[axis] += spec.question_spread;
    // Jitter stays off the label axis so the clusters never overlap.
    for value in values.iter_mut().skip(1) {
        *value += spec.jitter * rng.random_range(-1.0..1.0);
    }
    let instance = QAInstance {
        instance_id: format!("{question_id}#{slot}"),
        question_id: question_id.to_owned(),
        question: question.to_owned(),
        answer: format!("candidate {slot} for {question_id}"),
        label,
        perturbed: false,
    };
    (instance, Embedding::new(values).expect("finite values"))
}

/// Generates the corpus. Within a question, training candidates come
/// first (positives, then negatives), then any validation candidates,
/// so instance ids follow one per-question counter.
pub fn two_cluster_corpus(spec: &CorpusSpec) -> Corpus {
    assert!(spec.dev_questions <= spec.questions);
    let mut rng = sub_rng(spec.seed, "two-cluster-corpus");
    let mut store = EmbeddingStore::new(spec.dim);
    let mut train = Vec::new();
    let mut dev = Vec::new();
    for q in 0..spec.questions {
        // Questions share the coordinate axes orthogonal to the label
        // axis, round-robin, so unrelated questions stay uncorrelated.
        let axis = 1 + (q % (spec.dim - 1));
        let question_id = format!("q{q:03}");
        let question = format!("synthetic question {q}");
        let mut slot = 0;
        for label in [Label::Positive, Label::Negative] {
            for _ in 0..spec.train_per_label {
                let (instance, embedding) =
                    make_instance(spec, &mut rng, &question_id, &question, label, slot, axis);
                store.insert(instance.instance_id.clone(), embedding).expect("fresh id");
                train.push(instance);
                slot += 1;
            }
        }
        if q < spec.dev_questions {
            for label in [Label::Positive, Label::Negative] {
                for _ in 0..spec.dev_per_label {
                    let (instance, embedding) = make_instance(
                        spec, &mut rng, &question_id, &question, label, slot, axis,
                    );
                    store.insert(instance.instance_id.clone(), embedding).expect("fresh id");
                    dev.push(instance);
                    slot += 1;
                }
            }
        }
    }
    Corpus {
        train: Dataset::new(train).expect("unique ids"),
        dev: Dataset::new(dev).expect("unique ids"),
        store,
    }
}

pub struct CorpusFiles {
    pub train: PathBuf,
    pub dev: PathBuf,
    pub table: PathBuf,
}

/// Writes the corpus as the three files the command-line interface
/// consumes: train TSV, dev TSV, and the embedding table.
pub fn write_corpus(dir: &Path, corpus: &Corpus) -> CorpusFiles {
    let files = CorpusFiles {
        train: dir.join("train.tsv"),
        dev: dir.join("dev.tsv"),
        table: dir.join("embeddings.tsv"),
    };
    corpus.train.save_tsv(&files.train).expect("write train split");
    corpus.dev.save_tsv(&files.dev).expect("write dev split");
    corpus.store.save(&files.table).expect("write embedding table");
    files
}
