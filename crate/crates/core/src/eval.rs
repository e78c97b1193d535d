//! Cross-modal retrieval metrics: recall at k and mean reciprocal rank.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::matrix::{dot, norm};
use crate::encoder::{Matrix, Modality, Model};

pub const RECALL_KS: [usize; 4] = [1, 5, 10, 20];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Text2Mol,
    Mol2Text,
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Direction::Text2Mol => "text2mol",
            Direction::Mol2Text => "mol2text",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub direction: Direction,
    pub recall_at: BTreeMap<usize, f64>,
    pub mrr: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("retrieval needs at least 2 pairs, got {0}")]
    TooFewItems(usize),
}

/// Rank of each query's true item, where query `i` is row `i` and its true
/// candidate is column `i`. Ties go to the lower column index.
pub fn ranks(sim: &Matrix) -> Vec<usize> {
    (0..sim.rows())
        .map(|i| {
            let row = sim.row(i);
            let truth = row[i];
            1 + row
                .iter()
                .enumerate()
                .filter(|&(j, &s)| s > truth || (s == truth && j < i))
                .count()
        })
        .collect()
}

/// Metrics for a square similarity matrix with the truth on the diagonal.
pub fn report(sim: &Matrix, direction: Direction) -> RetrievalReport {
    let r = ranks(sim);
    let n = r.len() as f64;
    let recall_at = RECALL_KS
        .iter()
        .map(|&k| (k, r.iter().filter(|&&x| x <= k).count() as f64 / n))
        .collect();
    let mrr = r.iter().map(|&x| 1.0 / x as f64).sum::<f64>() / n;
    RetrievalReport {
        direction,
        recall_at,
        mrr,
    }
}

/// Cosine similarity; zero when either vector is zero.
fn cosine_or_zero(u: &[f64], v: &[f64]) -> f64 {
    let d = norm(u) * norm(v);
    if d == 0.0 {
        0.0
    } else {
        dot(u, v) / d
    }
}

/// `sim[i][j] = cos(mols[i], texts[j])`
pub fn similarity_matrix(mols: &[Vec<f64>], texts: &[Vec<f64>]) -> Matrix {
    let mut sim = Matrix::zeros(mols.len(), texts.len());
    for (i, m) in mols.iter().enumerate() {
        for (j, t) in texts.iter().enumerate() {
            sim.set(i, j, cosine_or_zero(m, t));
        }
    }
    sim
}

/// Retrieval in both directions over `(molecule, text)` pairs; the whole
/// set is the candidate pool. Returns `(text2mol, mol2text)`.
pub fn evaluate(model: &Model, pairs: &[(&str, &str)]) -> Result<(RetrievalReport, RetrievalReport), EvalError> {
    if pairs.len() < 2 {
        return Err(EvalError::TooFewItems(pairs.len()));
    }
    let mols: Vec<&str> = pairs.iter().map(|p| p.0).collect();
    let texts: Vec<&str> = pairs.iter().map(|p| p.1).collect();
    let m = model.embed_all(Modality::Molecule, &mols);
    let t = model.embed_all(Modality::Text, &texts);
    let sim = similarity_matrix(&m, &t);
    Ok((
        report(&sim.transpose(), Direction::Text2Mol),
        report(&sim, Direction::Mol2Text),
    ))
}

/// Plain-text table with one row per direction, values in percent.
pub fn render_table(reports: &[RetrievalReport]) -> String {
    let mut out = format!("{:<10}", "direction");
    for k in RECALL_KS {
        let _ = write!(out, "{:>8}", format!("R@{k}"));
    }
    out.push_str(&format!("{:>8}\n", "MRR"));
    for r in reports {
        let _ = write!(out, "{:<10}", r.direction.to_string());
        for k in RECALL_KS {
            let _ = write!(out, "{:>8.2}", 100.0 * r.recall_at.get(&k).copied().unwrap_or(0.0));
        }
        let _ = writeln!(out, "{:>8.2}", 100.0 * r.mrr);
    }
    out
}
