//! Question–answer datasets.
//!
//! An instance is one candidate answer to a question with a binary
//! relevance label. Files are tab-separated with a header row; instances
//! keep their file order, which downstream code treats as significant
//! (memory writes happen in stream order).

use std::collections::BTreeSet;
use std::fmt;
use std::fmt::Write as _;
use std::path::Path;

use indexmap::IndexMap;
use rand::seq::index::sample;

use crate::error::{EvmemError, Result};
use crate::rng::sub_rng;

/// Binary relevance of a candidate answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }

    pub fn flipped(self) -> Self {
        match self {
            Label::Negative => Label::Positive,
            Label::Positive => Label::Negative,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Negative => "0",
            Label::Positive => "1",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "0" => Some(Label::Negative),
            "1" => Some(Label::Positive),
            _ => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

// Labels appear in JSON reports in the same "0"/"1" language the TSV
// files use.
impl serde::Serialize for Label {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> serde::Deserialize<'de> for Label {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Label::parse(&s).ok_or_else(|| serde::de::Error::custom(format!("label must be 0 or 1, got {s:?}")))
    }
}

/// One labeled question–answer candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct QAInstance {
    pub instance_id: String,
    pub question_id: String,
    pub question: String,
    pub answer: String,
    pub label: Label,
    /// True once a perturbation pass has flipped this label.
    pub perturbed: bool,
}

const HEADER: [&str; 4] = ["question_id", "question", "answer", "label"];
const ID_COLUMN: &str = "instance_id";

/// An ordered collection of instances with a per-question index.
#[derive(Debug, Clone)]
pub struct Dataset {
    instances: Vec<QAInstance>,
    by_question: IndexMap<String, Vec<usize>>,
}

impl Dataset {
    /// Builds a dataset, rejecting duplicate instance ids.
    pub fn new(instances: Vec<QAInstance>) -> Result<Self> {
        let mut by_question: IndexMap<String, Vec<usize>> = IndexMap::new();
        let mut seen = BTreeSet::new();
        for (i, inst) in instances.iter().enumerate() {
            if !seen.insert(inst.instance_id.as_str()) {
                return Err(EvmemError::Config(format!(
                    "duplicate instance id {:?}",
                    inst.instance_id
                )));
            }
            by_question.entry(inst.question_id.clone()).or_default().push(i);
        }
        Ok(Dataset { instances, by_question })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn instances(&self) -> &[QAInstance] {
        &self.instances
    }

    pub fn get(&self, index: usize) -> Result<&QAInstance> {
        self.instances
            .get(index)
            .ok_or(EvmemError::Index { index, len: self.instances.len() })
    }

    /// Question ids in first-appearance order.
    pub fn question_ids(&self) -> impl Iterator<Item = &str> {
        self.by_question.keys().map(String::as_str)
    }

    /// Indices of the candidates for one question, in file order.
    pub fn question_instances(&self, question_id: &str) -> Option<&[usize]> {
        self.by_question.get(question_id).map(Vec::as_slice)
    }

    /// Loads a tab-separated dataset. The header must start with
    /// `question_id  question  answer  label`; a fifth `instance_id`
    /// column is optional, and missing ids are generated as
    /// `<question_id>#<n>` with `n` counting that question's candidates
    /// from zero in file order.
    pub fn load_tsv(path: &Path) -> Result<Self> {
        let display = path.display().to_string();
        let text =
            std::fs::read_to_string(path).map_err(|e| EvmemError::io(display.clone(), e))?;
        Self::parse_tsv(&text, &display)
    }

    pub(crate) fn parse_tsv(text: &str, path: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| EvmemError::format(path, 1, "missing header row"))?;
        let header = header.strip_suffix('\r').unwrap_or(header);
        let cols: Vec<&str> = header.split('\t').collect();
        let has_ids = match cols.as_slice() {
            c if c == HEADER => false,
            [a, b, q, l, id] if [*a, *b, *q, *l] == HEADER && *id == ID_COLUMN => true,
            _ => {
                return Err(EvmemError::format(
                    path,
                    1,
                    format!("unrecognized header {header:?}"),
                ));
            }
        };
        let mut instances = Vec::new();
        let mut per_question: IndexMap<String, usize> = IndexMap::new();
        for (line_no, raw) in lines {
            let line_no = line_no + 1;
            let line = raw.strip_suffix('\r').unwrap_or(raw);
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let expected = if has_ids { 5 } else { 4 };
            if fields.len() != expected {
                return Err(EvmemError::format(
                    path,
                    line_no,
                    format!("expected {expected} columns, found {}", fields.len()),
                ));
            }
            let label = Label::parse(fields[3]).ok_or_else(|| {
                EvmemError::format(path, line_no, format!("label must be 0 or 1, got {:?}", fields[3]))
            })?;
            let question_id = fields[0].to_owned();
            let counter = per_question.entry(question_id.clone()).or_insert(0);
            let instance_id = if has_ids {
                fields[4].to_owned()
            } else {
                format!("{question_id}#{counter}")
            };
            *counter += 1;
            instances.push(QAInstance {
                instance_id,
                question_id,
                question: fields[1].to_owned(),
                answer: fields[2].to_owned(),
                label,
                perturbed: false,
            });
        }
        if instances.is_empty() {
            return Err(EvmemError::format(path, 1, "dataset has no instances"));
        }
        Dataset::new(instances)
    }

    /// Writes the dataset with all five columns, so a round trip
    /// preserves instance ids exactly.
    pub fn save_tsv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        let _ = writeln!(out, "{}\t{ID_COLUMN}", HEADER.join("\t"));
        for inst in &self.instances {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                inst.question_id, inst.question, inst.answer, inst.label, inst.instance_id
            );
        }
        std::fs::write(path, out).map_err(|e| EvmemError::io(path.display().to_string(), e))
    }

    /// Drops every question whose candidates all share one label; such
    /// questions carry no ranking signal. Returns the kept dataset and
    /// the removed question ids.
    pub fn filter_single_label_questions(&self) -> (Dataset, Vec<String>) {
        let mut removed = Vec::new();
        let mut keep = vec![true; self.instances.len()];
        for (qid, idxs) in &self.by_question {
            let first = self.instances[idxs[0]].label;
            if idxs.iter().all(|&i| self.instances[i].label == first) {
                removed.push(qid.clone());
                for &i in idxs {
                    keep[i] = false;
                }
            }
        }
        let kept: Vec<QAInstance> = self
            .instances
            .iter()
            .zip(&keep)
            .filter(|(_, &k)| k)
            .map(|(inst, _)| inst.clone())
            .collect();
        let dataset = Dataset::new(kept).expect("ids were unique before filtering");
        (dataset, removed)
    }

    /// Flips the labels of a seed-chosen subset of instances in place.
    /// The subset size is `fraction * len` rounded half-up and its
    /// members are distinct; picking zero instances is an error.
    pub fn perturb_labels(&mut self, fraction: f64, seed: u64) -> Result<PerturbationRecord> {
        if !(fraction.is_finite() && (0.0..=1.0).contains(&fraction)) {
            return Err(EvmemError::Config(format!(
                "perturbation fraction must lie in [0, 1], got {fraction}"
            )));
        }
        let count = (fraction * self.instances.len() as f64 + 0.5).floor() as usize;
        if count == 0 {
            return Err(EvmemError::Config(format!(
                "perturbation of fraction {fraction} over {} instances selects nothing",
                self.instances.len()
            )));
        }
        let mut rng = sub_rng(seed, "perturb");
        let mut chosen = sample(&mut rng, self.instances.len(), count).into_vec();
        chosen.sort_unstable();
        let mut entries = Vec::with_capacity(count);
        for i in chosen {
            let inst = &mut self.instances[i];
            let original = inst.label;
            inst.label = original.flipped();
            inst.perturbed = true;
            entries.push(PerturbationEntry {
                instance_id: inst.instance_id.clone(),
                original_label: original,
                new_label: inst.label,
            });
        }
        Ok(PerturbationRecord { entries })
    }
}

/// One flipped instance: which id changed and from what to what.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationEntry {
    pub instance_id: String,
    pub original_label: Label,
    pub new_label: Label,
}

/// The full log of one perturbation pass, in dataset order.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationRecord {
    pub entries: Vec<PerturbationEntry>,
}

const RECORD_HEADER: &str = "instance_id\toriginal_label\tnew_label";

impl PerturbationRecord {
    /// The set of perturbed instance ids.
    pub fn ids(&self) -> BTreeSet<&str> {
        self.entries.iter().map(|e| e.instance_id.as_str()).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        let _ = writeln!(out, "{RECORD_HEADER}");
        for e in &self.entries {
            let _ = writeln!(out, "{}\t{}\t{}", e.instance_id, e.original_label, e.new_label);
        }
        std::fs::write(path, out).map_err(|e| EvmemError::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let display = path.display().to_string();
        let text =
            std::fs::read_to_string(path).map_err(|e| EvmemError::io(display.clone(), e))?;
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.strip_suffix('\r').unwrap_or(h) == RECORD_HEADER => {}
            _ => return Err(EvmemError::format(&display, 1, "missing record header")),
        }
        let mut entries = Vec::new();
        for (line_no, raw) in lines {
            let line_no = line_no + 1;
            let line = raw.strip_suffix('\r').unwrap_or(raw);
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [id, orig, new] = fields.as_slice() else {
                return Err(EvmemError::format(
                    &display,
                    line_no,
                    format!("expected 3 columns, found {}", fields.len()),
                ));
            };
            let parse = |s: &str| {
                Label::parse(s).ok_or_else(|| {
                    EvmemError::format(&display, line_no, format!("label must be 0 or 1, got {s:?}"))
                })
            };
            entries.push(PerturbationEntry {
                instance_id: (*id).to_owned(),
                original_label: parse(orig)?,
                new_label: parse(new)?,
            });
        }
        Ok(PerturbationRecord { entries })
    }
}
