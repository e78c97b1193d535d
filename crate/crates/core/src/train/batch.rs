use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{AlignmentPair, PairClass};
use crate::encoder::AnchorSets;

use super::TrainError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MolKind {
    Whole,
    Fragment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TextKind {
    Caption,
    Phrase,
}

/// Which fragment/phrase cross terms leave the denominators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exclusion {
    /// Every fragment/phrase combination.
    #[default]
    All,
    /// Only fragment/phrase combinations from the same origin.
    SameOrigin,
}

impl std::str::FromStr for Exclusion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all" => Ok(Exclusion::All),
            "same_origin" | "same-origin" => Ok(Exclusion::SameOrigin),
            other => Err(format!(
                "unknown exclusion rule {other:?} (expected all or same_origin)"
            )),
        }
    }
}

fn kinds(class: PairClass) -> (MolKind, TextKind) {
    match class {
        PairClass::S => (MolKind::Whole, TextKind::Caption),
        PairClass::Sm => (MolKind::Fragment, TextKind::Caption),
        PairClass::St => (MolKind::Whole, TextKind::Phrase),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchItem<K> {
    pub ids: Vec<usize>,
    pub kind: K,
    /// Sorted origin ids of the pairs that brought this item in.
    pub origins: Vec<String>,
}

/// One aligned pair inside a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchPair {
    /// Index into the dataset.
    pub pair: usize,
    pub mol: usize,
    pub text: usize,
    pub class: PairClass,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub mol_items: Vec<BatchItem<MolKind>>,
    pub text_items: Vec<BatchItem<TextKind>>,
    /// Per molecule anchor: positive and candidate text item indices.
    pub mol_anchors: Vec<AnchorSets>,
    /// Per text anchor: positive and candidate molecule item indices.
    pub text_anchors: Vec<AnchorSets>,
    pub pairs: Vec<BatchPair>,
}

/// Token ids for every pair's two sides.
pub trait Tokenized {
    fn pair(&self, i: usize) -> &AlignmentPair;
    fn mol_ids(&self, i: usize) -> &[usize];
    fn text_ids(&self, i: usize) -> &[usize];
}

fn intern<K: Copy + Eq + std::hash::Hash>(
    items: &mut Vec<BatchItem<K>>,
    index: &mut HashMap<(K, String), usize>,
    key: (K, &str),
    ids: &[usize],
    origin: &str,
) -> usize {
    let idx = *index.entry((key.0, key.1.to_string())).or_insert_with(|| {
        items.push(BatchItem {
            ids: ids.to_vec(),
            kind: key.0,
            origins: Vec::new(),
        });
        items.len() - 1
    });
    let origins = &mut items[idx].origins;
    if let Err(at) = origins.binary_search_by(|o| o.as_str().cmp(origin)) {
        origins.insert(at, origin.to_string());
    }
    idx
}

/// Assembles a batch from dataset pair indices.
///
/// Items are deduplicated by kind and content, pairs by index. Positives
/// follow the pairs; candidates are every opposite-side item except the
/// excluded fragment/phrase cross terms.
pub fn assemble(data: &impl Tokenized, selected: &[usize], exclusion: Exclusion) -> Batch {
    let mut mol_items = Vec::new();
    let mut text_items = Vec::new();
    let mut mol_index = HashMap::new();
    let mut text_index = HashMap::new();
    let mut pairs: Vec<BatchPair> = Vec::new();
    for &i in selected {
        if pairs.iter().any(|p| p.pair == i) {
            continue;
        }
        let p = data.pair(i);
        let (mk, tk) = kinds(p.pair_class);
        let mol = intern(&mut mol_items, &mut mol_index, (mk, &p.mol), data.mol_ids(i), &p.origin);
        let text = intern(
            &mut text_items,
            &mut text_index,
            (tk, &p.text),
            data.text_ids(i),
            &p.origin,
        );
        pairs.push(BatchPair {
            pair: i,
            mol,
            text,
            class: p.pair_class,
        });
    }

    let excluded = |m: &BatchItem<MolKind>, t: &BatchItem<TextKind>| {
        m.kind == MolKind::Fragment
            && t.kind == TextKind::Phrase
            && match exclusion {
                Exclusion::All => true,
                Exclusion::SameOrigin => m.origins.iter().any(|o| t.origins.binary_search(o).is_ok()),
            }
    };
    let mut mol_pos: Vec<Vec<usize>> = vec![Vec::new(); mol_items.len()];
    let mut text_pos: Vec<Vec<usize>> = vec![Vec::new(); text_items.len()];
    for p in &pairs {
        mol_pos[p.mol].push(p.text);
        text_pos[p.text].push(p.mol);
    }
    let mol_anchors = mol_items
        .iter()
        .zip(mol_pos)
        .map(|(m, mut positives)| {
            positives.sort_unstable();
            positives.dedup();
            let candidates = (0..text_items.len())
                .filter(|&j| !excluded(m, &text_items[j]))
                .collect();
            AnchorSets { positives, candidates }
        })
        .collect();
    let text_anchors = text_items
        .iter()
        .zip(text_pos)
        .map(|(t, mut positives)| {
            positives.sort_unstable();
            positives.dedup();
            let candidates = (0..mol_items.len()).filter(|&j| !excluded(&mol_items[j], t)).collect();
            AnchorSets { positives, candidates }
        })
        .collect();
    Batch {
        mol_items,
        text_items,
        mol_anchors,
        text_anchors,
        pairs,
    }
}

/// Sampler settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sampling {
    /// Origins per batch.
    pub batch_origins: usize,
    /// Fragment pairs per origin slot.
    pub k_m: usize,
    /// Phrase pairs per origin slot.
    pub k_t: usize,
}

impl Default for Sampling {
    fn default() -> Self {
        Sampling {
            batch_origins: 8,
            k_m: 2,
            k_t: 2,
        }
    }
}

#[derive(Default)]
struct OriginPairs {
    whole: Option<usize>,
    fragments: Vec<usize>,
    phrases: Vec<usize>,
}

/// Splits the active pairs into the batches of one epoch.
///
/// Every origin yields enough slots to cover all of its active pairs; a slot
/// holds the origin's S pair plus up to `k_m` fragment and `k_t` phrase
/// pairs. Slots are shuffled and grouped `batch_origins` at a time.
pub fn plan_epoch(
    pairs: &[AlignmentPair],
    sampling: Sampling,
    rng: &mut impl Rng,
) -> Result<Vec<Vec<usize>>, TrainError> {
    let mut origins: BTreeMap<&str, OriginPairs> = BTreeMap::new();
    for (i, p) in pairs.iter().enumerate().filter(|(_, p)| p.active) {
        let entry = origins.entry(p.origin.as_str()).or_default();
        match p.pair_class {
            PairClass::S => entry.whole = Some(i),
            PairClass::Sm => entry.fragments.push(i),
            PairClass::St => entry.phrases.push(i),
        }
    }
    if origins.values().all(|o| o.whole.is_none()) {
        return Err(TrainError::EmptyDataset);
    }
    let chunks = |n: usize, k: usize| if k == 0 { 0 } else { n.div_ceil(k) };
    let mut slots: Vec<Vec<usize>> = Vec::new();
    for o in origins.values_mut() {
        o.fragments.shuffle(rng);
        o.phrases.shuffle(rng);
        let n = chunks(o.fragments.len(), sampling.k_m)
            .max(chunks(o.phrases.len(), sampling.k_t))
            .max(1);
        for s in 0..n {
            let mut slot: Vec<usize> = o.whole.into_iter().collect();
            slot.extend(o.fragments.iter().skip(s * sampling.k_m).take(sampling.k_m));
            slot.extend(o.phrases.iter().skip(s * sampling.k_t).take(sampling.k_t));
            if !slot.is_empty() {
                slots.push(slot);
            }
        }
    }
    slots.shuffle(rng);
    Ok(slots
        .chunks(sampling.batch_origins.max(1))
        .map(|c| c.concat())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Toy(Vec<AlignmentPair>);

    impl Tokenized for Toy {
        fn pair(&self, i: usize) -> &AlignmentPair {
            &self.0[i]
        }
        fn mol_ids(&self, _: usize) -> &[usize] {
            &[0]
        }
        fn text_ids(&self, _: usize) -> &[usize] {
            &[0]
        }
    }

    fn toy() -> Toy {
        Toy(vec![
            AlignmentPair::new("a", PairClass::S, "CCO", "ethanol"),
            AlignmentPair::new("a", PairClass::Sm, "[1*]C", "ethanol"),
            AlignmentPair::new("a", PairClass::St, "CCO", "alcohol"),
            AlignmentPair::new("b", PairClass::S, "CCN", "ethylamine"),
        ])
    }

    #[test]
    fn single_pair_batch() {
        let b = assemble(&toy(), &[0], Exclusion::All);
        assert_eq!(
            b.mol_anchors,
            [AnchorSets {
                positives: vec![0],
                candidates: vec![0]
            }]
        );
        assert_eq!(
            b.text_anchors,
            [AnchorSets {
                positives: vec![0],
                candidates: vec![0]
            }]
        );
    }

    #[test]
    fn fragment_and_phrase_are_not_compared() {
        let b = assemble(&toy(), &[0, 1, 2], Exclusion::All);
        // mol items: CCO, [1*]C ; text items: ethanol, alcohol
        assert_eq!(b.mol_anchors[0].positives, [0, 1]);
        assert_eq!(
            b.mol_anchors[1],
            AnchorSets {
                positives: vec![0],
                candidates: vec![0]
            }
        );
        assert_eq!(
            b.text_anchors[0],
            AnchorSets {
                positives: vec![0, 1],
                candidates: vec![0, 1]
            }
        );
        assert_eq!(
            b.text_anchors[1],
            AnchorSets {
                positives: vec![0],
                candidates: vec![0]
            }
        );
    }

    #[test]
    fn other_origins_are_negatives() {
        let b = assemble(&toy(), &[0, 3], Exclusion::All);
        assert_eq!(
            b.mol_anchors[0],
            AnchorSets {
                positives: vec![0],
                candidates: vec![0, 1]
            }
        );
        assert_eq!(
            b.mol_anchors[1],
            AnchorSets {
                positives: vec![1],
                candidates: vec![0, 1]
            }
        );
    }

    #[test]
    fn same_origin_exclusion_keeps_foreign_phrases() {
        let mut t = toy();
        t.0.push(AlignmentPair::new("b", PairClass::St, "CCN", "amine"));
        let all = assemble(&t, &[1, 4], Exclusion::All);
        assert_eq!(all.mol_anchors[0].candidates, [0]);
        let same = assemble(&t, &[1, 4], Exclusion::SameOrigin);
        assert_eq!(same.mol_anchors[0].candidates, [0, 1]);
    }

    #[test]
    fn epoch_plan_covers_every_active_pair() {
        use rand::SeedableRng;
        let mut pairs = toy().0;
        pairs[2].active = false;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let plan = plan_epoch(
            &pairs,
            Sampling {
                batch_origins: 1,
                k_m: 1,
                k_t: 1,
            },
            &mut rng,
        )
        .unwrap();
        let mut seen: Vec<usize> = plan.concat();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen, [0, 1, 3]);
        pairs[0].active = false;
        pairs[3].active = false;
        assert!(matches!(
            plan_epoch(&pairs, Sampling::default(), &mut rng),
            Err(TrainError::EmptyDataset)
        ));
    }
}
