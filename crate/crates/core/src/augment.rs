//! Builds the enriched alignment set from (molecule, caption) records:
//! whole pairs, fragment-caption pairs and molecule-phrase pairs.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::chem::{parse_smiles, SmilesError};
use crate::fragment::{fragment, FragmentError, RuleSet};
use crate::phrase::PhraseExtractor;

/// One input row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    pub smiles: String,
    #[serde(default)]
    pub caption: String,
    /// 1-based line in the source file; 0 when built in memory.
    #[serde(skip)]
    pub line: usize,
}

impl CorpusRecord {
    pub fn new(id: impl Into<String>, smiles: impl Into<String>, caption: impl Into<String>) -> Self {
        CorpusRecord {
            id: id.into(),
            smiles: smiles.into(),
            caption: caption.into(),
            line: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PairClass {
    /// Whole molecule with its caption.
    S,
    /// Fragment with the caption of its parent.
    Sm,
    /// Whole molecule with a phrase of its caption.
    St,
}

impl PairClass {
    pub fn as_str(self) -> &'static str {
        match self {
            PairClass::S => "S",
            PairClass::Sm => "Sm",
            PairClass::St => "St",
        }
    }
}

impl fmt::Display for PairClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PairClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "S" => Ok(PairClass::S),
            "Sm" => Ok(PairClass::Sm),
            "St" => Ok(PairClass::St),
            _ => Err(format!("unknown pair class {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentPair {
    pub pair_id: String,
    pub mol: String,
    pub text: String,
    #[serde(rename = "class")]
    pub pair_class: PairClass,
    pub origin: String,
    pub active: bool,
}

impl AlignmentPair {
    pub fn new(origin: &str, pair_class: PairClass, mol: impl Into<String>, text: impl Into<String>) -> Self {
        let (mol, text) = (mol.into(), text.into());
        AlignmentPair {
            pair_id: pair_id(origin, pair_class, &mol, &text),
            mol,
            text,
            pair_class,
            origin: origin.to_string(),
            active: true,
        }
    }
}

/// Content hash of a pair: 16 hex bytes of SHA-256 over its identifying fields.
pub fn pair_id(origin: &str, class: PairClass, mol: &str, text: &str) -> String {
    let mut h = Sha256::new();
    for part in [origin, class.as_str(), mol, text] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    h.finalize()[..16].iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("line {line}: {source}")]
    Smiles { line: usize, source: SmilesError },
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("line {line}: molecule duplicates the one on line {first_line} ({smiles})")]
    DuplicateMolecule {
        line: usize,
        first_line: usize,
        smiles: String,
    },
    #[error("line {line}: id {id:?} already used on line {first_line}")]
    DuplicateId { line: usize, first_line: usize, id: String },
    #[error("line {line}: duplicate pair id {pair_id}")]
    DuplicatePair { line: usize, pair_id: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Input file layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    /// Tab-separated with a header naming `id`, `smiles` and optionally `caption`.
    Tsv,
    /// One JSON object per line with `id`, `smiles` and optionally `caption`.
    Jsonl,
}

impl CorpusFormat {
    /// Guesses the layout from a file extension, defaulting to TSV.
    pub fn from_path(path: &std::path::Path) -> CorpusFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl" | "json" | "ndjson") => CorpusFormat::Jsonl,
            _ => CorpusFormat::Tsv,
        }
    }
}

pub fn read_corpus(reader: impl BufRead, format: CorpusFormat) -> Result<Vec<CorpusRecord>, AugmentError> {
    let mut records = Vec::new();
    let mut columns: Option<(usize, usize, Option<usize>)> = None;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let format_err = |message: String| AugmentError::Format { line: line_no, message };
        match format {
            CorpusFormat::Jsonl => {
                let mut rec: CorpusRecord = serde_json::from_str(line).map_err(|e| format_err(e.to_string()))?;
                rec.line = line_no;
                records.push(rec);
            }
            CorpusFormat::Tsv => {
                let fields: Vec<&str> = line.split('\t').collect();
                let Some(cols) = columns else {
                    let find = |name: &str| {
                        fields
                            .iter()
                            .position(|f| f.trim().eq_ignore_ascii_case(name))
                            .ok_or_else(|| format_err(format!("header lacks a {name:?} column")))
                    };
                    columns = Some((find("id")?, find("smiles")?, find("caption").ok()));
                    continue;
                };
                let get = |c: usize| {
                    fields
                        .get(c)
                        .map(|s| s.to_string())
                        .ok_or_else(|| format_err(format!("expected at least {} fields", c + 1)))
                };
                records.push(CorpusRecord {
                    id: get(cols.0)?,
                    smiles: get(cols.1)?,
                    caption: cols.2.map(get).transpose()?.unwrap_or_default(),
                    line: line_no,
                });
            }
        }
    }
    Ok(records)
}

pub fn write_pairs(mut w: impl Write, pairs: &[AlignmentPair]) -> std::io::Result<()> {
    for p in pairs {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_pairs(reader: impl BufRead) -> Result<Vec<AlignmentPair>, AugmentError> {
    let mut pairs = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let pair: AlignmentPair = serde_json::from_str(&line).map_err(|e| AugmentError::Format {
            line: i + 1,
            message: e.to_string(),
        })?;
        if !seen.insert(pair.pair_id.clone()) {
            return Err(AugmentError::DuplicatePair {
                line: i + 1,
                pair_id: pair.pair_id,
            });
        }
        pairs.push(pair);
    }
    Ok(pairs)
}

/// Per-class counts of an augmented set.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ClassCounts {
    pub s: usize,
    pub sm: usize,
    pub st: usize,
}

impl ClassCounts {
    pub fn of(pairs: &[AlignmentPair]) -> Self {
        let mut c = ClassCounts::default();
        for p in pairs {
            match p.pair_class {
                PairClass::S => c.s += 1,
                PairClass::Sm => c.sm += 1,
                PairClass::St => c.st += 1,
            }
        }
        c
    }
}

fn record_line(r: &CorpusRecord, index: usize) -> usize {
    if r.line > 0 {
        r.line
    } else {
        index + 1
    }
}

/// Expands every record into its S, Sm and St pairs, sorted by pair id.
///
/// Records must have distinct ids and distinct canonical molecules. Molecules
/// too large to fragment still contribute S and St pairs.
pub fn augment(
    corpus: &[CorpusRecord],
    rules: &RuleSet,
    extractor: &PhraseExtractor,
) -> Result<Vec<AlignmentPair>, AugmentError> {
    let expanded: Vec<Result<(String, Vec<AlignmentPair>), AugmentError>> = corpus
        .par_iter()
        .enumerate()
        .map(|(i, rec)| expand(rec, record_line(rec, i), rules, extractor))
        .collect();

    let mut by_smiles: HashMap<String, usize> = HashMap::new();
    let mut by_id: HashMap<&str, usize> = HashMap::new();
    let mut pairs = Vec::new();
    for (i, (rec, result)) in corpus.iter().zip(expanded).enumerate() {
        let line = record_line(rec, i);
        let (canonical, rec_pairs) = result?;
        if let Some(&first_line) = by_id.get(rec.id.as_str()) {
            return Err(AugmentError::DuplicateId {
                line,
                first_line,
                id: rec.id.clone(),
            });
        }
        by_id.insert(&rec.id, line);
        if let Some(&first_line) = by_smiles.get(&canonical) {
            return Err(AugmentError::DuplicateMolecule {
                line,
                first_line,
                smiles: canonical,
            });
        }
        by_smiles.insert(canonical, line);
        pairs.extend(rec_pairs);
    }
    pairs.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
    let counts = ClassCounts::of(&pairs);
    log::info!(
        "augmented {} records into {} pairs (S {}, Sm {}, St {}; {:.2}x)",
        corpus.len(),
        pairs.len(),
        counts.s,
        counts.sm,
        counts.st,
        pairs.len() as f64 / corpus.len().max(1) as f64
    );
    Ok(pairs)
}

fn expand(
    rec: &CorpusRecord,
    line: usize,
    rules: &RuleSet,
    extractor: &PhraseExtractor,
) -> Result<(String, Vec<AlignmentPair>), AugmentError> {
    let mol = parse_smiles(&rec.smiles).map_err(|source| AugmentError::Smiles { line, source })?;
    let canonical = mol.canonical_smiles().to_string();
    let mut pairs = vec![AlignmentPair::new(
        &rec.id,
        PairClass::S,
        canonical.clone(),
        rec.caption.clone(),
    )];
    match fragment(&mol, &rec.id, rules) {
        Ok(frags) => pairs.extend(
            frags
                .into_iter()
                .map(|f| AlignmentPair::new(&rec.id, PairClass::Sm, f.fragment_smiles, rec.caption.clone())),
        ),
        Err(FragmentError::TooLarge { atoms, .. }) => {
            log::debug!("line {line}: {atoms} atoms, skipping fragments");
        }
    }
    let mut seen = HashSet::new();
    for phrase in extractor.extract(&rec.caption, &rec.id) {
        if seen.insert(phrase.text.clone()) {
            pairs.push(AlignmentPair::new(
                &rec.id,
                PairClass::St,
                canonical.clone(),
                phrase.text,
            ));
        }
    }
    Ok((canonical, pairs))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl SplitRatios {
    pub fn new(train: f64, valid: f64, test: f64) -> Self {
        SplitRatios { train, valid, test }
    }
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios::new(0.8, 0.1, 0.1)
    }
}

#[derive(Debug, Error)]
pub enum SplitError {
    #[error("cannot split an empty corpus")]
    EmptyCorpus,
    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    InvalidRatios(SplitRatios),
    #[error("line {line}: {source}")]
    Smiles { line: usize, source: SmilesError },
}

/// Record indices assigned to each split.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

/// Groups records by ring skeleton and assigns whole groups to splits, largest
/// first; the seed only orders equally sized groups. When every molecule shares
/// one skeleton the grouping is meaningless and a seeded random split is used.
pub fn split_scaffold(corpus: &[CorpusRecord], ratios: SplitRatios, seed: u64) -> Result<Split, SplitError> {
    if corpus.is_empty() {
        return Err(SplitError::EmptyCorpus);
    }
    let parts = [ratios.train, ratios.valid, ratios.test];
    if parts.iter().any(|r| !r.is_finite() || *r < 0.0) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
        return Err(SplitError::InvalidRatios(ratios));
    }
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, rec) in corpus.iter().enumerate() {
        let mol = parse_smiles(&rec.smiles).map_err(|source| SplitError::Smiles {
            line: record_line(rec, i),
            source,
        })?;
        groups.entry(mol.scaffold_smiles()).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = corpus.len() as f64;
    let train_cut = ratios.train * n;
    let valid_cut = (ratios.train + ratios.valid) * n;
    let mut split = Split::default();

    if groups.len() == 1 {
        log::warn!("all molecules share one scaffold; falling back to a random split");
        let mut idx: Vec<usize> = (0..corpus.len()).collect();
        idx.shuffle(&mut rng);
        let a = train_cut.round() as usize;
        let b = (valid_cut.round() as usize).max(a);
        split.train = idx[..a].to_vec();
        split.valid = idx[a..b].to_vec();
        split.test = idx[b..].to_vec();
    } else {
        let mut sets: Vec<Vec<usize>> = groups.into_values().collect();
        sets.shuffle(&mut rng);
        sets.sort_by_key(|s| std::cmp::Reverse(s.len()));
        for set in sets {
            let (t, v) = (split.train.len() as f64, split.valid.len() as f64);
            let k = set.len() as f64;
            if t + k <= train_cut + 1e-9 {
                split.train.extend(set);
            } else if t + v + k <= valid_cut + 1e-9 {
                split.valid.extend(set);
            } else {
                split.test.extend(set);
            }
        }
    }
    for part in [&mut split.train, &mut split.valid, &mut split.test] {
        part.sort_unstable();
    }
    Ok(split)
}
