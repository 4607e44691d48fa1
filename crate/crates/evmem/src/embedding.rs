//! Fixed-dimension text embeddings.
//!
//! Two sources are supported: a seeded feature-hashing embedder that
//! vectorizes text in-process, and a store of precomputed vectors loaded
//! from a TSV file. Every vector is L2-normalized at ingestion (the
//! all-zero vector, the empty-text sentinel, is kept as-is), so dot
//! products downstream are cosine similarities.

use std::fmt;
use std::fmt::Write as _;
use std::path::Path;

use indexmap::IndexMap;

use crate::error::{EvmemError, Result};
use crate::hashing::fnv1a64;

/// Separator inserted between question and answer before hashing.
pub const PAIR_SEPARATOR: &str = " [SEP] ";

/// Norm tolerance honored by every normalized vector.
pub const NORM_TOLERANCE: f64 = 1e-9;

/// A finite real vector; unit L2 norm or exactly all-zero once ingested.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Vec<f64>,
}

impl Embedding {
    /// Wraps raw values, rejecting NaN/Inf. Does not normalize.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(EvmemError::Config(format!(
                "embedding contains non-finite value {bad}"
            )));
        }
        Ok(Embedding { values })
    }

    pub fn zeros(dim: usize) -> Self {
        Embedding {
            values: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// Scales to unit norm; the exact zero vector is left unchanged.
    pub fn normalized(mut self) -> Self {
        let norm = self.l2_norm();
        if norm > 0.0 {
            for v in &mut self.values {
                *v /= norm;
            }
        }
        self
    }

    pub fn dot(&self, other: &Embedding) -> Result<f64> {
        check_dim(self.dim(), other.dim())?;
        Ok(dot_slices(&self.values, &other.values))
    }
}

pub(crate) fn dot_slices(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(EvmemError::Shape { expected, actual })
    }
}

fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

const SIGN_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// Signed feature hashing: each token lands in one of `dim` buckets with
/// a ±1 sign drawn from an independent hash, counts are accumulated and
/// the result L2-normalized. Empty token lists map to the zero vector.
/// Deterministic for a fixed `(text, dim, seed)`.
pub fn embed_hash(text: &str, dim: usize, seed: u64) -> Result<Embedding> {
    if dim < 2 {
        return Err(EvmemError::Config(format!(
            "embedding dimension must be at least 2, got {dim}"
        )));
    }
    let mut values = vec![0.0; dim];
    for token in tokenize(text) {
        let bytes = token.as_bytes();
        let bucket = (fnv1a64(bytes, seed) % dim as u64) as usize;
        let sign = if fnv1a64(bytes, seed ^ SIGN_SALT) & 1 == 0 {
            1.0
        } else {
            -1.0
        };
        values[bucket] += sign;
    }
    Ok(Embedding { values }.normalized())
}

/// Embeds a question–answer pair as one text, with [`PAIR_SEPARATOR`]
/// between the two sides so that the split point itself is hashed.
pub fn embed_pair(question: &str, answer: &str, dim: usize, seed: u64) -> Result<Embedding> {
    embed_hash(
        &format!("{question}{PAIR_SEPARATOR}{answer}"),
        dim,
        seed,
    )
}

/// Precomputed vectors keyed by instance id. Immutable after load.
#[derive(Debug, Clone)]
pub struct EmbeddingStore {
    dim: usize,
    entries: IndexMap<String, Embedding>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        EmbeddingStore {
            dim,
            entries: IndexMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Embedding> {
        self.entries.get(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Inserts a vector, normalizing it first. Rejects duplicate ids and
    /// dimension mismatches.
    pub fn insert(&mut self, id: impl Into<String>, vector: Embedding) -> Result<()> {
        let id = id.into();
        check_dim(self.dim, vector.dim())?;
        if self.entries.contains_key(&id) {
            return Err(EvmemError::Config(format!("duplicate embedding id {id:?}")));
        }
        self.entries.insert(id, vector.normalized());
        Ok(())
    }

    /// Writes the store in the tab-separated vector format, insertion order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        let _ = writeln!(out, "#dim={}", self.dim);
        for (id, emb) in &self.entries {
            out.push_str(id);
            for v in emb.values() {
                let _ = write!(out, "\t{v}");
            }
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| EvmemError::io(path.display().to_string(), e))
    }
}

/// Loads a tab-separated embedding file: `id<TAB>v1<TAB>...<TAB>vd` per
/// line, `#`-prefixed comment lines, optional leading `#dim=<d>` header.
/// Vectors are normalized on load; errors carry 1-based line numbers.
pub fn load_embeddings(path: &Path) -> Result<EmbeddingStore> {
    let display = path.display().to_string();
    let text =
        std::fs::read_to_string(path).map_err(|e| EvmemError::io(display.clone(), e))?;
    parse_embeddings(&text, &display)
}

fn parse_embeddings(text: &str, path: &str) -> Result<EmbeddingStore> {
    let mut dim: Option<usize> = None;
    let mut entries: IndexMap<String, Embedding> = IndexMap::new();
    for (line_no, raw) in text.lines().enumerate() {
        let line_no = line_no + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if entries.is_empty() && dim.is_none() {
                if let Some(d) = rest.strip_prefix("dim=") {
                    let d: usize = d.trim().parse().map_err(|_| {
                        EvmemError::format(path, line_no, format!("unparseable header {line:?}"))
                    })?;
                    dim = Some(d);
                }
            }
            continue;
        }
        let mut fields = line.split('\t');
        let id = fields.next().expect("split yields at least one field");
        if id.is_empty() {
            return Err(EvmemError::format(path, line_no, "empty id"));
        }
        let mut values = Vec::new();
        for field in fields {
            let v: f64 = field.parse().map_err(|_| {
                EvmemError::format(path, line_no, format!("unparseable value {field:?}"))
            })?;
            if !v.is_finite() {
                return Err(EvmemError::format(
                    path,
                    line_no,
                    format!("non-finite value {field:?}"),
                ));
            }
            values.push(v);
        }
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(EvmemError::format(
                    path,
                    line_no,
                    format!("vector of length {} in a file of dimension {d}", values.len()),
                ));
            }
            Some(_) => {}
        }
        if entries.contains_key(id) {
            return Err(EvmemError::format(
                path,
                line_no,
                format!("duplicate id {id:?}"),
            ));
        }
        entries.insert(id.to_owned(), Embedding { values }.normalized());
    }
    let dim = dim.ok_or_else(|| EvmemError::format(path, 1, "empty embedding file"))?;
    if dim < 2 {
        return Err(EvmemError::Config(format!(
            "embedding dimension must be at least 2, got {dim}"
        )));
    }
    Ok(EmbeddingStore { dim, entries })
}

/// Which embedding source a run is configured to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    Hash,
    File,
}

impl EmbedderKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EmbedderKind::Hash => "hash",
            EmbedderKind::File => "file",
        }
    }
}

impl fmt::Display for EmbedderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for EmbedderKind {
    type Err = EvmemError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hash" => Ok(EmbedderKind::Hash),
            "file" => Ok(EmbedderKind::File),
            other => Err(EvmemError::Config(format!(
                "embedder must be \"hash\" or \"file\", got {other:?}"
            ))),
        }
    }
}

/// Where instance embeddings come from.
#[derive(Debug, Clone)]
pub enum Embedder {
    /// Feature-hash the question/answer text on the fly.
    Hash { dim: usize, seed: u64 },
    /// Look vectors up by instance id in a loaded store.
    Store(EmbeddingStore),
}

impl Embedder {
    pub fn dim(&self) -> usize {
        match self {
            Embedder::Hash { dim, .. } => *dim,
            Embedder::Store(store) => store.dim(),
        }
    }

    /// Embeds one instance record.
    pub fn embed_record(&self, id: &str, question: &str, answer: &str) -> Result<Embedding> {
        match self {
            Embedder::Hash { dim, seed } => embed_pair(question, answer, *dim, *seed),
            Embedder::Store(store) => store.get(id).cloned().ok_or_else(|| {
                EvmemError::Config(format!("no embedding for instance id {id:?}"))
            }),
        }
    }
}
