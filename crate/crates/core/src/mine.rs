//! Substructure/phrase relation mining and prompt-templated export.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{AlignmentPair, PairClass};
use crate::encoder::{cosine, EncodeError, Modality, Model};

pub const DEFAULT_THETA: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinedRelation {
    pub origin: String,
    pub sub: String,
    pub phrase: String,
    pub score: f64,
}

/// A whole pair with every fragment and phrase derived from it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OriginGroup {
    pub origin: String,
    pub mol: String,
    pub caption: String,
    pub fragments: Vec<String>,
    pub phrases: Vec<String>,
}

#[derive(Debug, Error, PartialEq)]
pub enum MineError {
    #[error("model parameters are all zero")]
    UntrainedModel,
    #[error("threshold {0} outside [-1, 1]")]
    InvalidTheta(f64),
    #[error("origin {origin}: {source}")]
    Encode { origin: String, source: EncodeError },
}

/// Collects each origin's S pair with its fragments and phrases, sorted by
/// origin id. Origins without an S pair are skipped.
pub fn group_pairs(pairs: &[AlignmentPair]) -> Vec<OriginGroup> {
    let mut by_origin: BTreeMap<&str, Vec<&AlignmentPair>> = BTreeMap::new();
    for p in pairs {
        by_origin.entry(&p.origin).or_default().push(p);
    }
    by_origin
        .into_iter()
        .filter_map(|(origin, ps)| {
            let whole = ps.iter().find(|p| p.pair_class == PairClass::S)?;
            let mut fragments: Vec<String> = ps
                .iter()
                .filter(|p| p.pair_class == PairClass::Sm)
                .map(|p| p.mol.clone())
                .collect();
            let mut phrases: Vec<String> = ps
                .iter()
                .filter(|p| p.pair_class == PairClass::St)
                .map(|p| p.text.clone())
                .collect();
            fragments.sort();
            fragments.dedup();
            phrases.sort();
            phrases.dedup();
            Some(OriginGroup {
                origin: origin.to_string(),
                mol: whole.mol.clone(),
                caption: whole.text.clone(),
                fragments,
                phrases,
            })
        })
        .collect()
}

/// Retention rule for scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Threshold {
    pub theta: f64,
    /// Keep scores equal to `theta`.
    pub inclusive: bool,
}

impl Threshold {
    pub fn inclusive(theta: f64) -> Self {
        Threshold { theta, inclusive: true }
    }

    pub fn keeps(&self, score: f64) -> bool {
        if self.inclusive {
            score >= self.theta
        } else {
            score > self.theta
        }
    }
}

impl Default for Threshold {
    fn default() -> Self {
        Threshold::inclusive(DEFAULT_THETA)
    }
}

/// Scores every same-origin (fragment, phrase) combination by cosine and
/// keeps those passing `threshold`. Output is ordered by origin, fragment
/// and phrase.
pub fn mine(model: &Model, groups: &[OriginGroup], threshold: Threshold) -> Result<Vec<MinedRelation>, MineError> {
    if !(-1.0..=1.0).contains(&threshold.theta) {
        return Err(MineError::InvalidTheta(threshold.theta));
    }
    if model.params.is_all_zero() {
        return Err(MineError::UntrainedModel);
    }
    let per_origin: Vec<Vec<MinedRelation>> = groups
        .par_iter()
        .map(|g| score_group(model, g, threshold))
        .collect::<Result<_, _>>()?;
    Ok(per_origin.into_iter().flatten().collect())
}

fn score_group(model: &Model, g: &OriginGroup, threshold: Threshold) -> Result<Vec<MinedRelation>, MineError> {
    let frags: Vec<Vec<f64>> = g.fragments.iter().map(|f| model.embed(Modality::Molecule, f)).collect();
    let phrases: Vec<Vec<f64>> = g.phrases.iter().map(|p| model.embed(Modality::Text, p)).collect();
    let mut out = Vec::new();
    for (f, fv) in g.fragments.iter().zip(&frags) {
        for (p, pv) in g.phrases.iter().zip(&phrases) {
            let score = cosine(fv, pv).map_err(|source| MineError::Encode {
                origin: g.origin.clone(),
                source,
            })?;
            if threshold.keeps(score) {
                out.push(MinedRelation {
                    origin: g.origin.clone(),
                    sub: f.clone(),
                    phrase: p.clone(),
                    score,
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Smiles2Caption,
    Caption2Smiles,
    Sub2Phrase,
    Phrase2Sub,
}

impl Task {
    pub fn template(self) -> &'static str {
        match self {
            Task::Smiles2Caption => "Provide a whole description of this molecule: ",
            Task::Caption2Smiles => "Provide a molecule based on this description: ",
            Task::Sub2Phrase => "Provide a keyword of this substructure: ",
            Task::Phrase2Sub => "Provide a substructure based on this keyword: ",
        }
    }

    pub fn prompt(self, input: &str) -> String {
        format!("{}{input}", self.template())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerativeRecord {
    pub task: Task,
    pub prompt: String,
    pub target: String,
}

impl GenerativeRecord {
    fn new(task: Task, input: &str, target: &str) -> Self {
        GenerativeRecord {
            task,
            prompt: task.prompt(input),
            target: target.to_string(),
        }
    }
}

/// Two whole-pair records per origin with at least one relation, then two
/// records per relation. Origins without relations are left out.
pub fn export_generative(relations: &[MinedRelation], groups: &[OriginGroup]) -> Vec<GenerativeRecord> {
    let mut by_origin: BTreeMap<&str, Vec<&MinedRelation>> = BTreeMap::new();
    for r in relations {
        by_origin.entry(&r.origin).or_default().push(r);
    }
    let groups: BTreeMap<&str, &OriginGroup> = groups.iter().map(|g| (g.origin.as_str(), g)).collect();
    let mut out = Vec::new();
    for (origin, rels) in by_origin {
        let Some(g) = groups.get(origin) else {
            continue;
        };
        out.push(GenerativeRecord::new(Task::Smiles2Caption, &g.mol, &g.caption));
        out.push(GenerativeRecord::new(Task::Caption2Smiles, &g.caption, &g.mol));
        for r in rels {
            out.push(GenerativeRecord::new(Task::Sub2Phrase, &r.sub, &r.phrase));
            out.push(GenerativeRecord::new(Task::Phrase2Sub, &r.phrase, &r.sub));
        }
    }
    out
}

/// Origins that yielded no relation.
pub fn excluded_origins<'g>(relations: &[MinedRelation], groups: &'g [OriginGroup]) -> Vec<&'g str> {
    let kept: std::collections::BTreeSet<&str> = relations.iter().map(|r| r.origin.as_str()).collect();
    groups
        .iter()
        .map(|g| g.origin.as_str())
        .filter(|o| !kept.contains(o))
        .collect()
}

/// Writes one JSON object per line.
pub fn write_jsonl<T: Serialize>(mut w: impl Write, items: &[T]) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn relation(origin: &str, sub: &str, phrase: &str) -> MinedRelation {
        MinedRelation {
            origin: origin.into(),
            sub: sub.into(),
            phrase: phrase.into(),
            score: 0.5,
        }
    }

    fn group(origin: &str) -> OriginGroup {
        OriginGroup {
            origin: origin.into(),
            mol: "CCO".into(),
            caption: "An alcohol.".into(),
            fragments: vec!["[4*]CC".into()],
            phrases: vec!["alcohol".into()],
        }
    }

    #[test]
    fn export_counts_and_templates() {
        let groups = [group("a"), group("b")];
        let recs = export_generative(&[relation("a", "[4*]CC", "alcohol")], &groups);
        assert_eq!(recs.len(), 4);
        assert_eq!(recs[0].prompt, "Provide a whole description of this molecule: CCO");
        assert_eq!(recs[0].target, "An alcohol.");
        assert_eq!(
            recs[1].prompt,
            "Provide a molecule based on this description: An alcohol."
        );
        assert_eq!(recs[2].prompt, "Provide a keyword of this substructure: [4*]CC");
        assert_eq!(recs[3].prompt, "Provide a substructure based on this keyword: alcohol");
        assert!(export_generative(&[], &groups).is_empty());
        assert_eq!(excluded_origins(&[relation("a", "x", "y")], &groups), ["b"]);
    }

    #[test]
    fn threshold_boundary() {
        assert!(Threshold::inclusive(0.3).keeps(0.3));
        assert!(!Threshold::inclusive(0.3).keeps(0.29));
        assert!(!Threshold {
            theta: 0.3,
            inclusive: false
        }
        .keeps(0.3));
    }

    #[test]
    fn task_names() {
        let r = GenerativeRecord::new(Task::Phrase2Sub, "x", "y");
        assert_eq!(
            serde_json::to_string(&r).unwrap(),
            r#"{"task":"phrase2sub","prompt":"Provide a substructure based on this keyword: x","target":"y"}"#
        );
    }

    #[test]
    fn grouping() {
        let pairs = vec![
            AlignmentPair::new("a", PairClass::St, "CCO", "alcohol"),
            AlignmentPair::new("a", PairClass::S, "CCO", "An alcohol."),
            AlignmentPair::new("a", PairClass::Sm, "[4*]CC", "An alcohol."),
            AlignmentPair::new("z", PairClass::St, "C", "gas"),
        ];
        assert_eq!(group_pairs(&pairs), [group("a")]);
    }
}
