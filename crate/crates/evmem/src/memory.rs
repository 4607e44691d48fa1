//! The external evidence memory.
//!
//! A bank holds K cells of the embedding dimension. Each step computes
//! softmax attention of the input over the cells, blends the input into
//! the single best-matching cell through a bounded scalar gate, and reads
//! back an attention-weighted support vector. Cells are plain vectors,
//! not unit-normalized: repeated writes keep them inside the convex hull
//! of everything ever written.

use std::fmt::Write as _;
use std::path::Path;

use crate::embedding::{check_dim, dot_slices, Embedding};
use crate::error::{EvmemError, Result};

/// Bank of K evidence cells, all of one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    dim: usize,
    cells: Vec<Vec<f64>>,
}

impl MemoryBank {
    /// Builds a bank from raw cell vectors: at least one cell, equal
    /// lengths, finite entries.
    pub fn new(cells: Vec<Vec<f64>>) -> Result<Self> {
        let dim = match cells.first() {
            Some(c) => c.len(),
            None => return Err(EvmemError::Config("memory bank needs at least one cell".into())),
        };
        for cell in &cells {
            check_dim(dim, cell.len())?;
            if let Some(bad) = cell.iter().find(|v| !v.is_finite()) {
                return Err(EvmemError::Config(format!(
                    "memory cell contains non-finite value {bad}"
                )));
            }
        }
        Ok(MemoryBank { dim, cells })
    }

    pub fn k(&self) -> usize {
        self.cells.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cell(&self, index: usize) -> Result<&[f64]> {
        self.cells
            .get(index)
            .map(Vec::as_slice)
            .ok_or(EvmemError::Index { index, len: self.cells.len() })
    }

    pub fn cells(&self) -> impl Iterator<Item = &[f64]> {
        self.cells.iter().map(Vec::as_slice)
    }

    /// Writes the bank as a tab-separated snapshot with ids `cell_0`,
    /// `cell_1`, … in order. Values round-trip exactly.
    pub fn save_snapshot(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        let _ = writeln!(out, "#dim={}", self.dim);
        for (i, cell) in self.cells.iter().enumerate() {
            let _ = write!(out, "cell_{i}");
            for v in cell {
                let _ = write!(out, "\t{v}");
            }
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| EvmemError::io(path.display().to_string(), e))
    }

    /// Reads a snapshot produced by [`MemoryBank::save_snapshot`]. Ids
    /// must be `cell_<i>` in ascending order; values are kept raw.
    pub fn load_snapshot(path: &Path) -> Result<Self> {
        let display = path.display().to_string();
        let text =
            std::fs::read_to_string(path).map_err(|e| EvmemError::io(display.clone(), e))?;
        Self::parse_snapshot(&text, &display)
    }

    pub(crate) fn parse_snapshot(text: &str, path: &str) -> Result<Self> {
        let mut dim: Option<usize> = None;
        let mut cells: Vec<Vec<f64>> = Vec::new();
        for (line_no, raw) in text.lines().enumerate() {
            let line_no = line_no + 1;
            let line = raw.strip_suffix('\r').unwrap_or(raw);
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if cells.is_empty() && dim.is_none() {
                    if let Some(d) = rest.strip_prefix("dim=") {
                        dim = Some(d.trim().parse().map_err(|_| {
                            EvmemError::format(path, line_no, format!("unparseable header {line:?}"))
                        })?);
                    }
                }
                continue;
            }
            let mut fields = line.split('\t');
            let id = fields.next().expect("split yields at least one field");
            let expected_id = format!("cell_{}", cells.len());
            if id != expected_id {
                return Err(EvmemError::format(
                    path,
                    line_no,
                    format!("expected id {expected_id:?}, found {id:?}"),
                ));
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
                        format!("cell of length {} in a snapshot of dimension {d}", values.len()),
                    ));
                }
                Some(_) => {}
            }
            cells.push(values);
        }
        match dim {
            Some(dim) if !cells.is_empty() => Ok(MemoryBank { dim, cells }),
            _ => Err(EvmemError::format(path, 1, "empty memory snapshot")),
        }
    }
}

/// Numerically stable softmax: shifts by the maximum before
/// exponentiating, then normalizes the sum to exactly 1.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Softmax attention of one input over all cells. Weights are
/// non-negative and sum to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionVector {
    weights: Vec<f64>,
}

impl AttentionVector {
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Index of the largest weight; ties resolve to the lowest index.
    pub fn best(&self) -> usize {
        let mut best = 0;
        for (i, &w) in self.weights.iter().enumerate() {
            if w > self.weights[best] {
                best = i;
            }
        }
        best
    }
}

/// Attention of `x` over the bank: softmax over the K dot products.
pub fn attention_weights(x: &Embedding, bank: &MemoryBank) -> Result<AttentionVector> {
    check_dim(bank.dim(), x.dim())?;
    let logits: Vec<f64> = bank.cells().map(|cell| dot_slices(x.values(), cell)).collect();
    Ok(AttentionVector { weights: softmax(&logits) })
}

/// Parameters of the scalar write gate.
#[derive(Debug, Clone, PartialEq)]
pub struct GateParams {
    pub w_g: Vec<f64>,
    pub b_g: f64,
}

/// A write strength in `[0, 1]`: 0 keeps the cell, 1 replaces it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gate(f64);

impl Gate {
    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() && (0.0..=1.0).contains(&value) {
            Ok(Gate(value))
        } else {
            Err(EvmemError::Config(format!("gate must lie in [0, 1], got {value}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Gate evaluation plus the raw sigmoid, which the parameter updates
/// need again on the way back.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateActivation {
    pub gate: Gate,
    pub sigma: f64,
}

// The sigmoid saturates to exactly 0.0 or 1.0 in floating point once
// |z| is large enough; pinching it just inside keeps the gate strictly
// between 0 and epsilon for every finite input.
const SIGMA_MIN: f64 = 1e-300;
const SIGMA_MAX: f64 = 1.0 - 1e-16;

fn sigmoid(z: f64) -> f64 {
    let s = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    s.clamp(SIGMA_MIN, SIGMA_MAX)
}

/// Write gate for input `x` against the cell it attends to:
/// `epsilon * sigmoid(w_g . (cell + x) + 2 * b_g)`. The bias enters both
/// the cell term and the input term of the affine form, hence the
/// factor of two. Output is strictly inside `(0, epsilon)`.
pub fn gate_activation(
    x: &Embedding,
    cell: &[f64],
    params: &GateParams,
    epsilon: f64,
) -> Result<GateActivation> {
    check_dim(cell.len(), x.dim())?;
    check_dim(cell.len(), params.w_g.len())?;
    if !(epsilon.is_finite() && epsilon > 0.0 && epsilon <= 1.0) {
        return Err(EvmemError::Config(format!(
            "epsilon must lie in (0, 1], got {epsilon}"
        )));
    }
    let combined: Vec<f64> = cell.iter().zip(x.values()).map(|(e, v)| e + v).collect();
    let z = dot_slices(&params.w_g, &combined) + 2.0 * params.b_g;
    let sigma = sigmoid(z);
    Ok(GateActivation { gate: Gate(epsilon * sigma), sigma })
}

/// Convex write into one cell: `cell <- g * x + (1 - g) * cell`.
/// No other cell is touched.
pub fn write_cell(bank: &mut MemoryBank, index: usize, x: &Embedding, gate: Gate) -> Result<()> {
    check_dim(bank.dim(), x.dim())?;
    let len = bank.cells.len();
    let cell = bank
        .cells
        .get_mut(index)
        .ok_or(EvmemError::Index { index, len })?;
    let g = gate.value();
    for (e, &v) in cell.iter_mut().zip(x.values()) {
        *e = g * v + (1.0 - g) * *e;
    }
    Ok(())
}

/// Attention-weighted read over the whole bank: `sum_i w_i * cell_i`.
pub fn read_support(bank: &MemoryBank, attention: &AttentionVector) -> Result<Vec<f64>> {
    if attention.weights.len() != bank.k() {
        return Err(EvmemError::Shape {
            expected: bank.k(),
            actual: attention.weights.len(),
        });
    }
    let mut support = vec![0.0; bank.dim()];
    for (w, cell) in attention.weights.iter().zip(bank.cells()) {
        for (s, &v) in support.iter_mut().zip(cell) {
            *s += w * v;
        }
    }
    Ok(support)
}
