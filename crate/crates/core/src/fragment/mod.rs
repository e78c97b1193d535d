//! Rule-driven bond cleavage into attachment-labeled substructures.

mod pattern;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chem::{Atom, Bond, BondOrder, Molecule, StereoNeighbor};
pub use pattern::{MatchContext, Pattern, PatternError};

/// Molecules with more heavy atoms than this are not fragmented.
pub const MAX_ATOMS: usize = 100;

const BRICS_RULES: &str = include_str!("../../data/brics.tsv");
const RECAP_RULES: &str = include_str!("../../data/recap.tsv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Brics,
    Recap,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Brics => "BRICS",
            Scheme::Recap => "RECAP",
        })
    }
}

impl FromStr for Scheme {
    type Err = RuleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "brics" => Ok(Scheme::Brics),
            "recap" => Ok(Scheme::Recap),
            _ => Err(RuleError::UnknownScheme(s.to_string())),
        }
    }
}

#[derive(Debug, Error)]
pub enum RuleError {
    #[error("unknown fragmentation scheme {0:?}")]
    UnknownScheme(String),
    #[error("rule line {line}: expected 5 tab-separated fields, found {found}")]
    FieldCount { line: usize, found: usize },
    #[error("rule line {line}: {source}")]
    Pattern { line: usize, source: PatternError },
    #[error("rule line {line}: unsupported bond order {order:?}")]
    BondOrder { line: usize, order: String },
    #[error("rule line {line}: duplicate rule id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("rule line {line}: scheme {found} does not match {expected}")]
    SchemeMismatch {
        line: usize,
        expected: Scheme,
        found: Scheme,
    },
    #[error("rule table is empty")]
    Empty,
    #[error("reading rule table: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FragmentError {
    #[error("molecule has {atoms} heavy atoms; at most {max} are supported")]
    TooLarge { atoms: usize, max: usize },
}

#[derive(Debug, Clone)]
pub struct CleavageRule {
    pub rule_id: String,
    pub scheme: Scheme,
    pub left_env: Pattern,
    pub right_env: Pattern,
    pub bond_order: BondOrder,
    left_label: Option<u16>,
    right_label: Option<u16>,
}

impl CleavageRule {
    /// Attachment labels for the left and right sides, taken from the rule id:
    /// `"7a-7b"` gives 7 and 7, `"R4"` gives 4 on both sides.
    pub fn labels(&self) -> (Option<u16>, Option<u16>) {
        (self.left_label, self.right_label)
    }
}

fn leading_number(s: &str) -> Option<u16> {
    let digits: String = s
        .trim_start_matches(|c: char| c.is_ascii_alphabetic())
        .chars()
        .take_while(|c| c.is_ascii_digit())
        .collect();
    digits.parse().ok()
}

fn labels_from_id(id: &str) -> (Option<u16>, Option<u16>) {
    match id.split_once('-') {
        Some((l, r)) => (leading_number(l), leading_number(r)),
        None => {
            let n = leading_number(id);
            (n, n)
        }
    }
}

/// An ordered rule table for one scheme. Earlier rules win when several match a bond.
#[derive(Debug, Clone)]
pub struct RuleSet {
    scheme: Scheme,
    rules: Vec<CleavageRule>,
}

impl RuleSet {
    /// The rule table shipped with the crate.
    pub fn builtin(scheme: Scheme) -> &'static RuleSet {
        static BRICS: OnceLock<RuleSet> = OnceLock::new();
        static RECAP: OnceLock<RuleSet> = OnceLock::new();
        let (cell, text) = match scheme {
            Scheme::Brics => (&BRICS, BRICS_RULES),
            Scheme::Recap => (&RECAP, RECAP_RULES),
        };
        cell.get_or_init(|| RuleSet::parse(text, scheme).expect("bundled rule table is valid"))
    }

    /// Parses a rule table. Blank lines and lines starting with `#` are skipped.
    pub fn parse(text: &str, scheme: Scheme) -> Result<RuleSet, RuleError> {
        let mut rules = Vec::new();
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim_end_matches('\r');
            if trimmed.trim().is_empty() || trimmed.trim_start().starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = trimmed.split('\t').collect();
            if fields.len() != 5 {
                return Err(RuleError::FieldCount {
                    line,
                    found: fields.len(),
                });
            }
            let found: Scheme = fields[1].trim().parse()?;
            if found != scheme {
                return Err(RuleError::SchemeMismatch {
                    line,
                    expected: scheme,
                    found,
                });
            }
            let rule_id = fields[0].trim().to_string();
            if !seen.insert(rule_id.clone()) {
                return Err(RuleError::DuplicateId { line, id: rule_id });
            }
            let compile = |p: &str| Pattern::parse(p.trim()).map_err(|source| RuleError::Pattern { line, source });
            let left_env = compile(fields[2])?;
            let right_env = compile(fields[3])?;
            let bond_order = match BondOrder::from_symbol(fields[4].trim()) {
                Some(o @ (BondOrder::Single | BondOrder::Double | BondOrder::Triple)) => o,
                _ => {
                    return Err(RuleError::BondOrder {
                        line,
                        order: fields[4].to_string(),
                    })
                }
            };
            let (left_label, right_label) = labels_from_id(&rule_id);
            rules.push(CleavageRule {
                rule_id,
                scheme,
                left_env,
                right_env,
                bond_order,
                left_label,
                right_label,
            });
        }
        if rules.is_empty() {
            return Err(RuleError::Empty);
        }
        Ok(RuleSet { scheme, rules })
    }

    pub fn from_path(path: &Path, scheme: Scheme) -> Result<RuleSet, RuleError> {
        RuleSet::parse(&std::fs::read_to_string(path)?, scheme)
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn rules(&self) -> &[CleavageRule] {
        &self.rules
    }
}

/// A bond selected for cleavage, oriented so `left_atom` satisfies the rule's left environment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CleavableBond {
    pub bond: usize,
    pub rule_id: String,
    pub left_atom: usize,
    pub right_atom: usize,
    pub left_label: Option<u16>,
    pub right_label: Option<u16>,
}

fn check_size(m: &Molecule) -> Result<(), FragmentError> {
    let atoms = m.atom_count();
    if atoms > MAX_ATOMS {
        return Err(FragmentError::TooLarge { atoms, max: MAX_ATOMS });
    }
    Ok(())
}

/// Acyclic bonds matched by some rule, in bond-index order. Each bond is
/// attributed to the first rule (in table order) that matches it.
pub fn find_cleavable_bonds(m: &Molecule, rules: &RuleSet) -> Result<Vec<CleavableBond>, FragmentError> {
    check_size(m)?;
    let ctx = MatchContext::new(m);
    let mut found = Vec::new();
    for (i, bond) in m.bonds().iter().enumerate() {
        if ctx.is_ring_bond(i) {
            continue;
        }
        let hit = rules
            .rules
            .iter()
            .filter(|r| r.bond_order == bond.order)
            .find_map(|rule| {
                [(bond.a, bond.b), (bond.b, bond.a)]
                    .into_iter()
                    .find(|&(l, r)| rule.left_env.matches_at(&ctx, l) && rule.right_env.matches_at(&ctx, r))
                    .map(|(l, r)| (rule, l, r))
            });
        if let Some((rule, left_atom, right_atom)) = hit {
            found.push(CleavableBond {
                bond: i,
                rule_id: rule.rule_id.clone(),
                left_atom,
                right_atom,
                left_label: rule.left_label,
                right_label: rule.right_label,
            });
        }
    }
    Ok(found)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fragment {
    pub parent_id: String,
    pub fragment_smiles: String,
    /// Parent atom indices of the first occurrence, in fragment atom order.
    pub atom_map: Vec<usize>,
    /// Rules cut at this fragment's boundary, sorted and unique.
    pub rule_ids: Vec<String>,
    /// Atom maps of further occurrences that produced the same SMILES.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub duplicate_maps: Vec<Vec<usize>>,
}

impl Fragment {
    /// Every parent atom index this fragment stands for, across occurrences.
    pub fn covered_atoms(&self) -> impl Iterator<Item = usize> + '_ {
        self.atom_map
            .iter()
            .chain(self.duplicate_maps.iter().flatten())
            .copied()
    }
}

/// Cuts every cleavable bond at once and returns the distinct pieces sorted by SMILES.
/// An uncut molecule yields no fragments.
pub fn fragment(m: &Molecule, parent_id: &str, rules: &RuleSet) -> Result<Vec<Fragment>, FragmentError> {
    let cuts = find_cleavable_bonds(m, rules)?;
    if cuts.is_empty() {
        return Ok(Vec::new());
    }
    let cut_bonds: Vec<usize> = cuts.iter().map(|c| c.bond).collect();
    let mut by_smiles: BTreeMap<String, Fragment> = BTreeMap::new();
    for component in m.components_without(&cut_bonds) {
        let (piece, rule_ids) = build_piece(m, &component, &cuts);
        let smiles = piece.canonical_smiles().to_string();
        match by_smiles.get_mut(&smiles) {
            Some(existing) => {
                existing.duplicate_maps.push(component);
                for id in rule_ids {
                    if !existing.rule_ids.contains(&id) {
                        existing.rule_ids.push(id);
                    }
                }
                existing.rule_ids.sort();
            }
            None => {
                by_smiles.insert(
                    smiles.clone(),
                    Fragment {
                        parent_id: parent_id.to_string(),
                        fragment_smiles: smiles,
                        atom_map: component,
                        rule_ids,
                        duplicate_maps: Vec::new(),
                    },
                );
            }
        }
    }
    Ok(by_smiles.into_values().collect())
}

/// Builds the molecule for one component, capping each cut bond with a labeled wildcard.
fn build_piece(m: &Molecule, component: &[usize], cuts: &[CleavableBond]) -> (Molecule, Vec<String>) {
    let mut local = vec![usize::MAX; m.atoms().len()];
    for (new, &old) in component.iter().enumerate() {
        local[old] = new;
    }
    let mut atoms: Vec<Atom> = component.iter().map(|&i| m.atom(i).clone()).collect();
    let mut bonds: Vec<Bond> = m
        .bonds()
        .iter()
        .enumerate()
        .filter(|(i, b)| local[b.a] != usize::MAX && local[b.b] != usize::MAX && !cuts.iter().any(|c| c.bond == *i))
        .map(|(_, b)| b)
        .map(|b| Bond {
            a: local[b.a],
            b: local[b.b],
            order: b.order,
        })
        .collect();
    // (parent atom inside, parent atom outside) -> wildcard index
    let mut caps: Vec<((usize, usize), usize)> = Vec::new();
    let mut rule_ids = Vec::new();
    for cut in cuts {
        for (inside, outside, label) in [
            (cut.left_atom, cut.right_atom, cut.left_label),
            (cut.right_atom, cut.left_atom, cut.right_label),
        ] {
            if local[inside] == usize::MAX {
                continue;
            }
            let w = atoms.len();
            atoms.push(Atom::wildcard(label));
            bonds.push(Bond {
                a: local[inside],
                b: w,
                order: m.bonds()[cut.bond].order,
            });
            caps.push(((inside, outside), w));
            if !rule_ids.contains(&cut.rule_id) {
                rule_ids.push(cut.rule_id.clone());
            }
        }
    }
    for (new, &old) in component.iter().enumerate() {
        if let Some(stereo) = &mut atoms[new].stereo {
            for n in &mut stereo.neighbors {
                if let StereoNeighbor::Atom(o) = *n {
                    let mapped = if local[o] != usize::MAX {
                        local[o]
                    } else {
                        caps.iter()
                            .find(|((i, out), _)| *i == old && *out == o)
                            .map(|&(_, w)| w)
                            .expect("every outside neighbor is capped")
                    };
                    *n = StereoNeighbor::Atom(mapped);
                }
            }
        }
    }
    rule_ids.sort();
    (Molecule::from_parts(atoms, bonds, ""), rule_ids)
}
