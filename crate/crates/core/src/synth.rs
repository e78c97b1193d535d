//! Seeded synthetic corpora for sanity runs and benchmarks.

use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::augment::{AlignmentPair, CorpusRecord, PairClass};

/// Atom tokens and the caption word each one maps to.
pub const ATOM_WORDS: [(&str, &str); 12] = [
    ("C", "carbon"),
    ("N", "nitrogen"),
    ("O", "oxygen"),
    ("S", "sulfur"),
    ("P", "phosphorus"),
    ("F", "fluorine"),
    ("Cl", "chlorine"),
    ("Br", "bromine"),
    ("I", "iodine"),
    ("B", "boron"),
    ("[Si]", "silicon"),
    ("[Se]", "selenium"),
];

/// `n` whole pairs, each a distinct 4-subset of [`ATOM_WORDS`] written as
/// atom tokens on one side and their words on the other. Origins are `t0`,
/// `t1`, ... Panics if `n` exceeds the 495 possible subsets.
pub fn token_bijection(n: usize, seed: u64) -> Vec<AlignmentPair> {
    assert!(n <= 495, "only 495 distinct 4-subsets exist");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let all: Vec<usize> = (0..ATOM_WORDS.len()).collect();
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let mut pick: Vec<usize> = all.choose_multiple(&mut rng, 4).copied().collect();
        pick.sort_unstable();
        if !seen.insert(pick.clone()) {
            continue;
        }
        let mol: String = pick.iter().map(|&i| ATOM_WORDS[i].0).collect();
        let words: Vec<&str> = pick.iter().map(|&i| ATOM_WORDS[i].1).collect();
        out.push(AlignmentPair::new(
            &format!("t{}", out.len()),
            PairClass::S,
            mol,
            words.join(" "),
        ));
    }
    out
}

/// Para-substituted phenyl groups with their caption names.
pub const ARYL_GROUPS: [(&str, &str); 8] = [
    ("Fc1ccc(cc1)", "fluorophenyl"),
    ("Clc1ccc(cc1)", "chlorophenyl"),
    ("Brc1ccc(cc1)", "bromophenyl"),
    ("Ic1ccc(cc1)", "iodophenyl"),
    ("Nc1ccc(cc1)", "aminophenyl"),
    ("Cc1ccc(cc1)", "tolyl"),
    ("N#Cc1ccc(cc1)", "cyanophenyl"),
    ("Oc1ccc(cc1)", "hydroxyphenyl"),
];

/// Rings bonded to the aryl group, with their caption names.
pub const RING_GROUPS: [(&str, &str); 8] = [
    ("c1ccncc1", "pyridyl"),
    ("c1ccsc1", "thienyl"),
    ("c1ccoc1", "furyl"),
    ("c1cncnc1", "pyrimidinyl"),
    ("C1CCCCC1", "cyclohexyl"),
    ("C1CCNCC1", "piperidinyl"),
    ("c1cnccn1", "pyrazinyl"),
    ("c1cscn1", "thiazolyl"),
];

/// The 64 molecules joining every aryl group to every ring by one single
/// bond. Each caption names exactly the two groups, so every fragment and
/// phrase belongs to one group.
pub fn planted_biaryls() -> Vec<CorpusRecord> {
    let mut out = Vec::with_capacity(ARYL_GROUPS.len() * RING_GROUPS.len());
    for (a, (aryl, aryl_name)) in ARYL_GROUPS.iter().enumerate() {
        for (b, (ring, ring_name)) in RING_GROUPS.iter().enumerate() {
            out.push(CorpusRecord::new(
                format!("a{a}r{b}"),
                format!("{aryl}{ring}"),
                format!("It contains a {aryl_name} group and a {ring_name} ring."),
            ));
        }
    }
    out
}

/// Seeded split of [`planted_biaryls`] into `(train, test)` record indices
/// with `n_test` held out. Every group keeps at least one training molecule.
pub fn planted_split(n_test: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let n = ARYL_GROUPS.len() * RING_GROUPS.len();
    assert!(n_test <= n - ARYL_GROUPS.len().max(RING_GROUPS.len()));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        let (test, train) = idx.split_at(n_test);
        let aryl: BTreeSet<usize> = train.iter().map(|i| i / RING_GROUPS.len()).collect();
        let ring: BTreeSet<usize> = train.iter().map(|i| i % RING_GROUPS.len()).collect();
        if aryl.len() == ARYL_GROUPS.len() && ring.len() == RING_GROUPS.len() {
            let (mut train, mut test) = (train.to_vec(), test.to_vec());
            train.sort_unstable();
            test.sort_unstable();
            return (train, test);
        }
    }
}

/// Replaces the captions of `fraction` of the whole pairs with captions of
/// other origins (a derangement within the chosen set) and gives them fresh
/// pair ids. Returns the new pair list and the ids of the corrupted pairs.
pub fn shuffle_captions(pairs: &[AlignmentPair], fraction: f64, seed: u64) -> (Vec<AlignmentPair>, BTreeSet<String>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let whole: Vec<usize> = (0..pairs.len())
        .filter(|&i| pairs[i].pair_class == PairClass::S)
        .collect();
    let k = (fraction * whole.len() as f64).round() as usize;
    let mut chosen: Vec<usize> = whole.choose_multiple(&mut rng, k).copied().collect();
    chosen.sort_unstable();
    let mut out = pairs.to_vec();
    let mut corrupted = BTreeSet::new();
    if chosen.len() < 2 {
        return (out, corrupted);
    }
    // A rotation of a shuffled order never maps an element to itself.
    chosen.shuffle(&mut rng);
    for (j, &i) in chosen.iter().enumerate() {
        let donor = &pairs[chosen[(j + 1) % chosen.len()]];
        let p = &pairs[i];
        let mut fake = AlignmentPair::new(&p.origin, PairClass::S, p.mol.clone(), donor.text.clone());
        fake.active = p.active;
        corrupted.insert(fake.pair_id.clone());
        out[i] = fake;
    }
    (out, corrupted)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bijection_is_distinct_and_seeded() {
        let a = token_bijection(64, 3);
        assert_eq!(a, token_bijection(64, 3));
        let texts: BTreeSet<&str> = a.iter().map(|p| p.text.as_str()).collect();
        assert_eq!(texts.len(), 64);
        assert_eq!(a[0].text.split(' ').count(), 4);
    }

    #[test]
    fn planted_split_covers_groups() {
        let (train, test) = planted_split(24, 0);
        assert_eq!((train.len(), test.len()), (40, 24));
        let recs = planted_biaryls();
        assert_eq!(recs.len(), 64);
        let ids: BTreeSet<&str> = recs.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids.len(), 64);
    }

    #[test]
    fn shuffled_captions_move() {
        let pairs = token_bijection(20, 1);
        let (out, bad) = shuffle_captions(&pairs, 0.2, 5);
        assert_eq!(bad.len(), 4);
        for (before, after) in pairs.iter().zip(&out) {
            assert_eq!(bad.contains(&after.pair_id), before.text != after.text);
            assert_eq!(before.mol, after.mol);
        }
    }
}
