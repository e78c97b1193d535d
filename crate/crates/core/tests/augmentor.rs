use std::collections::{HashMap, HashSet};
use std::io::BufReader;

use molalign_core::augment::{
    augment, read_corpus, split_scaffold, write_pairs, AlignmentPair, CorpusFormat, CorpusRecord, PairClass,
    SplitRatios,
};
use molalign_core::chem::parse_smiles;
use molalign_core::fragment::{fragment, RuleSet, Scheme};
use molalign_core::phrase::PhraseExtractor;
use proptest::prelude::*;

const GOLDEN: &str = "tests/fixtures/corpus10.golden.jsonl";

fn corpus() -> Vec<CorpusRecord> {
    let text = include_str!("fixtures/corpus10.tsv");
    read_corpus(BufReader::new(text.as_bytes()), CorpusFormat::Tsv).unwrap()
}

fn run(records: &[CorpusRecord]) -> Vec<AlignmentPair> {
    augment(records, RuleSet::builtin(Scheme::Brics), &PhraseExtractor::default()).unwrap()
}

fn serialized(pairs: &[AlignmentPair]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_pairs(&mut buf, pairs).unwrap();
    buf
}

#[test]
fn fixture_matches_golden_file() {
    let out = serialized(&run(&corpus()));
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join(GOLDEN);
    if std::env::var_os("MOLALIGN_BLESS").is_some() {
        std::fs::write(&path, &out).unwrap();
    }
    let golden = std::fs::read(&path).expect("golden file present");
    assert_eq!(String::from_utf8(out).unwrap(), String::from_utf8(golden).unwrap());
}

#[test]
fn reruns_are_byte_identical() {
    let c = corpus();
    assert_eq!(serialized(&run(&c)), serialized(&run(&c)));
}

#[test]
fn size_and_origin_invariants() {
    let c = corpus();
    let pairs = run(&c);
    let rules = RuleSet::builtin(Scheme::Brics);
    let ex = PhraseExtractor::default();
    let mut expected = 0;
    for r in &c {
        let m = parse_smiles(&r.smiles).unwrap();
        let phrases: HashSet<String> = ex.extract(&r.caption, &r.id).into_iter().map(|p| p.text).collect();
        expected += 1 + fragment(&m, &r.id, rules).unwrap().len() + phrases.len();
    }
    assert_eq!(pairs.len(), expected);

    let whole: HashMap<&str, &AlignmentPair> = pairs
        .iter()
        .filter(|p| p.pair_class == PairClass::S)
        .map(|p| (p.origin.as_str(), p))
        .collect();
    assert_eq!(whole.len(), c.len());
    for p in &pairs {
        let origin = whole[p.origin.as_str()];
        match p.pair_class {
            PairClass::S => {}
            PairClass::Sm => assert_eq!(p.text, origin.text),
            PairClass::St => {
                assert_eq!(p.mol, origin.mol);
                assert!(origin.text.to_lowercase().contains(&p.text));
            }
        }
        assert!(p.active);
    }
    let ids: Vec<&str> = pairs.iter().map(|p| p.pair_id.as_str()).collect();
    let mut sorted = ids.clone();
    sorted.sort();
    sorted.dedup();
    assert_eq!(ids, sorted);
}

#[test]
fn input_order_does_not_change_output() {
    let mut c = corpus();
    let a = serialized(&run(&c));
    c.reverse();
    assert_eq!(a, serialized(&run(&c)));
}

const POOL: &[&str] = &[
    "c1ccccc1",
    "Cc1ccccc1",
    "CCc1ccccc1",
    "Oc1ccccc1",
    "c1ccncc1",
    "Cc1ccncc1",
    "C1CCCCC1",
    "CC1CCCCC1",
    "c1ccc2ccccc2c1",
    "Cc1ccc2ccccc2c1",
    "C1CCNCC1",
    "CN1CCCCC1",
    "CCO",
    "CCCN",
    "CC(=O)O",
    "c1ccc(cc1)-c1ccccc1",
    "Cc1ccc(cc1)-c1ccccc1",
    "C1CC1",
    "CC1CC1",
    "c1ccsc1",
];

proptest! {
    #[test]
    fn scaffold_groups_never_straddle(
        picks in prop::sample::subsequence(POOL.to_vec(), 4..POOL.len()),
        seed in any::<u64>(),
        train in 0.3f64..0.9,
    ) {
        let records: Vec<CorpusRecord> = picks.iter().enumerate()
            .map(|(i, s)| CorpusRecord::new(format!("r{i}"), *s, "")).collect();
        let rest = 1.0 - train;
        let split = split_scaffold(&records, SplitRatios::new(train, rest / 2.0, rest / 2.0), seed).unwrap();
        let mut all: Vec<usize> = split.train.iter().chain(&split.valid).chain(&split.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..records.len()).collect::<Vec<_>>());
        let scaffolds: Vec<String> = records.iter().map(|r| parse_smiles(&r.smiles).unwrap().scaffold_smiles()).collect();
        let distinct: HashSet<&String> = scaffolds.iter().collect();
        if distinct.len() > 1 {
            for (a, part_a) in [&split.train, &split.valid, &split.test].iter().enumerate() {
                for (b, part_b) in [&split.train, &split.valid, &split.test].iter().enumerate() {
                    if a == b { continue; }
                    for &i in part_a.iter() {
                        for &j in part_b.iter() {
                            prop_assert_ne!(&scaffolds[i], &scaffolds[j]);
                        }
                    }
                }
            }
        }
        let again = split_scaffold(&records, SplitRatios::new(train, rest / 2.0, rest / 2.0), seed).unwrap();
        prop_assert_eq!(split, again);
    }
}
