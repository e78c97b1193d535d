use molalign_core::chem::{parse_smiles, write_smiles, Atom, Bond, BondOrder, Element, Molecule, StereoNeighbor};
use petgraph::algo::is_isomorphic_matching;
use petgraph::graph::UnGraph;
use proptest::prelude::*;

const SEEDS: &[&str] = &[
    "CCO",
    "CC(=O)OCC",
    "c1ccccc1",
    "Cc1ccccc1",
    "c1ccc2ccccc2c1",
    "c1ccncc1",
    "c1cc[nH]c1",
    "Cn1cnc2c1c(=O)n(C)c(=O)n2C",
    "CC(=O)Nc1ccc(O)cc1",
    "CC(C)Cc1ccc(cc1)C(C)C(=O)O",
    "N[C@@H](C)C(=O)O",
    "N[C@H](C)C(=O)O",
    "C[C@H]1CC[C@@H](O)CC1",
    "F[C@](Cl)(Br)I",
    "[NH4+].[Cl-]",
    "C[N+](C)(C)C",
    "CC(=O)[O-]",
    "[13CH3]O",
    "O=S(=O)(N)c1ccc(N)cc1",
    "C1CC2CCC1C2",
    "C1CCC2(CC1)CCCC2",
    "c1ccc(cc1)-c1ccccc1",
    "C#N",
    "C=CC=C",
    "O=C1NC(=O)C(N1)(c1ccccc1)c1ccccc1",
    "CN1CCC[C@H]1c1cccnc1",
    "COc1ccc2[nH]cc(CCN)c2c1",
    "Clc1ccc(Cl)cc1",
    "OC[C@H]1OC(O)[C@H](O)[C@@H](O)[C@@H]1O",
    "c1ccsc1",
];

type Labels = (u8, bool, i8, u8, Option<u16>);

fn graph(m: &Molecule) -> UnGraph<Labels, u8> {
    let mut g = UnGraph::new_undirected();
    let nodes: Vec<_> = m
        .atoms()
        .iter()
        .map(|a| g.add_node((a.element.atomic_number(), a.aromatic, a.charge, a.h_count, a.isotope)))
        .collect();
    for b in m.bonds() {
        let code = match b.order {
            BondOrder::Single => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
            BondOrder::Aromatic => 4,
        };
        g.add_edge(nodes[b.a], nodes[b.b], code);
    }
    g
}

fn isomorphic(a: &Molecule, b: &Molecule) -> bool {
    is_isomorphic_matching(&graph(a), &graph(b), |x, y| x == y, |x, y| x == y)
}

/// Renumbers atoms by `perm` (old index -> new index), keeping chirality meaning intact.
fn permuted(m: &Molecule, perm: &[usize], bond_rotation: usize) -> Molecule {
    let mut atoms = vec![m.atom(0).clone(); m.atoms().len()];
    for (old, atom) in m.atoms().iter().enumerate() {
        let mut atom = atom.clone();
        if let Some(stereo) = &mut atom.stereo {
            for n in &mut stereo.neighbors {
                if let StereoNeighbor::Atom(i) = n {
                    *i = perm[*i];
                }
            }
        }
        atoms[perm[old]] = atom;
    }
    let mut bonds: Vec<Bond> = m
        .bonds()
        .iter()
        .map(|b| Bond {
            a: perm[b.b],
            b: perm[b.a],
            order: b.order,
        })
        .collect();
    if !bonds.is_empty() {
        let k = bond_rotation % bonds.len();
        bonds.rotate_left(k);
    }
    Molecule::from_parts(atoms, bonds, "")
}

fn shuffled_indices(n: usize, keys: &[u64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by_key(|&i| (keys[i % keys.len()].wrapping_mul(i as u64 + 1), i));
    idx
}

fn max_valence(e: Element) -> u8 {
    *e.default_valences().last().unwrap()
}

/// Builds a valence-respecting random graph of aliphatic organic atoms.
fn random_molecule(elements: &[u8], parents: &[usize], orders: &[u8], extra: &[(usize, usize)]) -> Molecule {
    let pool = [
        Element::C,
        Element::C,
        Element::C,
        Element::N,
        Element::O,
        Element::S,
        Element::CL,
    ];
    let atoms: Vec<Atom> = elements
        .iter()
        .map(|&e| Atom::organic(pool[e as usize % pool.len()], false))
        .collect();
    let mut spare: Vec<u8> = atoms.iter().map(|a| max_valence(a.element)).collect();
    let mut bonds = Vec::new();
    let mut bonded = std::collections::HashSet::new();
    for i in 1..atoms.len() {
        let candidates: Vec<usize> = (0..i).filter(|&p| spare[p] > 0).collect();
        if candidates.is_empty() || spare[i] == 0 {
            continue;
        }
        let p = candidates[parents[i] % candidates.len()];
        let order = orders[i].min(spare[i]).min(spare[p]).clamp(1, 3);
        spare[i] -= order;
        spare[p] -= order;
        bonded.insert((p, i));
        let order = match order {
            1 => BondOrder::Single,
            2 => BondOrder::Double,
            _ => BondOrder::Triple,
        };
        bonds.push(Bond { a: p, b: i, order });
    }
    for &(a, b) in extra {
        let (a, b) = (a % atoms.len(), b % atoms.len());
        let key = (a.min(b), a.max(b));
        if a == b || bonded.contains(&key) || spare[a] == 0 || spare[b] == 0 {
            continue;
        }
        spare[a] -= 1;
        spare[b] -= 1;
        bonded.insert(key);
        bonds.push(Bond {
            a,
            b,
            order: BondOrder::Single,
        });
    }
    Molecule::from_parts(atoms, bonds, "")
}

fn random_graph() -> impl Strategy<Value = Molecule> {
    (1usize..16).prop_flat_map(|n| {
        (
            prop::collection::vec(0u8..7, n),
            prop::collection::vec(0usize..64, n),
            prop::collection::vec(prop_oneof![6 => Just(1u8), 3 => Just(2u8), 1 => Just(3u8)], n),
            prop::collection::vec((0usize..64, 0usize..64), 0..4),
        )
            .prop_map(|(e, p, o, x)| random_molecule(&e, &p, &o, &x))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn any_atom_order_gives_same_canonical_form(seed in 0..SEEDS.len(), keys in prop::collection::vec(any::<u64>(), 1..8)) {
        let m = parse_smiles(SEEDS[seed]).unwrap();
        let priority = shuffled_indices(m.atoms().len(), &keys);
        let rewritten = write_smiles(&m, &priority);
        let reparsed = parse_smiles(&rewritten).unwrap();
        prop_assert_eq!(reparsed.canonical_smiles(), m.canonical_smiles(), "rewritten as {}", rewritten);
        prop_assert!(isomorphic(&m, &reparsed));
    }

    #[test]
    fn canonical_round_trip_is_stable(seed in 0..SEEDS.len()) {
        let m = parse_smiles(SEEDS[seed]).unwrap();
        let again = parse_smiles(m.canonical_smiles()).unwrap();
        prop_assert_eq!(again.canonical_smiles(), m.canonical_smiles());
        prop_assert!(isomorphic(&m, &again));
    }

    #[test]
    fn permuting_atom_indices_preserves_canonical_form(seed in 0..SEEDS.len(), keys in prop::collection::vec(any::<u64>(), 1..8), rot in 0usize..32) {
        let m = parse_smiles(SEEDS[seed]).unwrap();
        let order = shuffled_indices(m.atoms().len(), &keys);
        let mut perm = vec![0; order.len()];
        for (new, &old) in order.iter().enumerate() {
            perm[old] = new;
        }
        let p = permuted(&m, &perm, rot);
        prop_assert_eq!(p.canonical_smiles(), m.canonical_smiles());
    }

    #[test]
    fn random_graphs_round_trip(m in random_graph(), keys in prop::collection::vec(any::<u64>(), 1..8)) {
        let canonical = m.canonical_smiles().to_string();
        let reparsed = parse_smiles(&canonical).unwrap();
        prop_assert_eq!(reparsed.canonical_smiles(), canonical.as_str());
        prop_assert!(isomorphic(&m, &reparsed), "{}", canonical);
        let priority = shuffled_indices(m.atoms().len(), &keys);
        let rewritten = write_smiles(&m, &priority);
        let again = parse_smiles(&rewritten).unwrap();
        prop_assert_eq!(again.canonical_smiles(), canonical.as_str(), "rewritten as {}", rewritten);
    }
}

#[test]
fn enantiomers_differ_but_rewrites_agree() {
    let l = parse_smiles("N[C@@H](C)C(=O)O").unwrap();
    let d = parse_smiles("N[C@H](C)C(=O)O").unwrap();
    assert_ne!(l.canonical_smiles(), d.canonical_smiles());
    let l2 = parse_smiles("C[C@H](N)C(=O)O").unwrap();
    assert_eq!(l.canonical_smiles(), l2.canonical_smiles());
}
