//! Canonical atom ranking and SMILES serialization.
//!
//! Ranks start from a per-atom invariant (element, isotope, charge, degree,
//! hydrogens, aromaticity, chirality flag) and are refined by neighbor ranks
//! until the partition is stable. Remaining ties are broken by trying every
//! member of the first tied class; the lexicographically smallest SMILES over
//! all tie-break leaves is the canonical string.

use super::{BondOrder, Molecule, StereoNeighbor};

/// Upper bound on tie-break leaves explored per molecule. Past the budget
/// only the first member of each tied class is tried, which is still
/// canonical whenever the tied atoms are symmetry-equivalent.
const MAX_LEAVES: usize = 256;

/// Canonical SMILES of `m`, independent of the input atom order.
pub fn canonicalize(m: &Molecule) -> String {
    canonicalize_graph(m)
}

pub(crate) fn canonicalize_graph(m: &Molecule) -> String {
    if m.atoms().is_empty() {
        return String::new();
    }
    let mut leaves = Vec::new();
    let mut budget = MAX_LEAVES;
    enumerate_leaves(m, initial_ranks(m), &mut budget, &mut leaves);
    leaves
        .iter()
        .map(|ranks| write_smiles(m, ranks))
        .min()
        .expect("at least one leaf")
}

/// A total canonical ranking of the atoms (first leaf of the tie-break tree
/// that produces the canonical string).
pub fn canonical_ranking(m: &Molecule) -> Vec<usize> {
    if m.atoms().is_empty() {
        return Vec::new();
    }
    let mut leaves = Vec::new();
    let mut budget = MAX_LEAVES;
    enumerate_leaves(m, initial_ranks(m), &mut budget, &mut leaves);
    leaves
        .into_iter()
        .map(|r| (write_smiles(m, &r), r))
        .min_by(|a, b| a.0.cmp(&b.0))
        .map(|(_, r)| r)
        .expect("at least one leaf")
}

type Invariant = (u8, u16, i8, usize, u8, bool, bool);

fn initial_ranks(m: &Molecule) -> Vec<usize> {
    let keys: Vec<Invariant> = (0..m.atoms().len())
        .map(|i| {
            let a = m.atom(i);
            (
                a.element.atomic_number(),
                a.isotope.unwrap_or(0),
                a.charge,
                m.degree(i),
                a.h_count,
                a.aromatic,
                a.stereo.is_some(),
            )
        })
        .collect();
    ranks_from_keys(&keys)
}

/// Rank of each atom = number of atoms with a strictly smaller key.
fn ranks_from_keys<K: Ord>(keys: &[K]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by(|&a, &b| keys[a].cmp(&keys[b]));
    let mut ranks = vec![0; keys.len()];
    for (pos, &atom) in order.iter().enumerate() {
        ranks[atom] = if pos > 0 && keys[order[pos - 1]] == keys[atom] {
            ranks[order[pos - 1]]
        } else {
            pos
        };
    }
    ranks
}

fn class_count(ranks: &[usize]) -> usize {
    let mut r = ranks.to_vec();
    r.sort_unstable();
    r.dedup();
    r.len()
}

fn refine(m: &Molecule, mut ranks: Vec<usize>) -> Vec<usize> {
    let mut classes = class_count(&ranks);
    loop {
        let keys: Vec<(usize, Vec<(usize, u8)>)> = (0..ranks.len())
            .map(|i| {
                let mut nbrs: Vec<(usize, u8)> = m
                    .neighbors(i)
                    .iter()
                    .map(|&(v, b)| (ranks[v], m.bonds()[b].order.code()))
                    .collect();
                nbrs.sort_unstable();
                (ranks[i], nbrs)
            })
            .collect();
        let next = ranks_from_keys(&keys);
        let next_classes = class_count(&next);
        ranks = next;
        if next_classes == classes {
            return ranks;
        }
        classes = next_classes;
    }
}

fn enumerate_leaves(m: &Molecule, ranks: Vec<usize>, budget: &mut usize, out: &mut Vec<Vec<usize>>) {
    let ranks = refine(m, ranks);
    let n = ranks.len();
    if class_count(&ranks) == n {
        out.push(ranks);
        *budget = budget.saturating_sub(1);
        return;
    }
    let mut counts = vec![0usize; n];
    for &r in &ranks {
        counts[r] += 1;
    }
    let tied = (0..n).find(|&r| counts[r] > 1).expect("a tied class");
    let members: Vec<usize> = (0..n).filter(|&i| ranks[i] == tied).collect();
    for (k, &chosen) in members.iter().enumerate() {
        if k > 0 && *budget == 0 {
            break;
        }
        let mut next = ranks.clone();
        for &other in &members {
            if other != chosen {
                next[other] += 1;
            }
        }
        enumerate_leaves(m, next, budget, out);
    }
}

/// Serializes `m` visiting atoms by ascending `priority` (ties by index):
/// each component starts at its lowest-priority atom and neighbors are
/// explored in priority order. Any permutation gives a valid SMILES for the
/// same graph; the canonical one comes from [`canonical_ranking`].
pub fn write_smiles(m: &Molecule, priority: &[usize]) -> String {
    let n = m.atoms().len();
    assert_eq!(priority.len(), n, "one priority per atom");
    let key = |i: usize| (priority[i], i);

    let mut components = m.components();
    for comp in components.iter_mut() {
        comp.sort_by_key(|&i| key(i));
    }
    components.sort_by_key(|c| key(c[0]));

    let mut tree = DfsTree {
        visited: vec![false; n],
        bond_used: vec![false; m.bonds().len()],
        parent: vec![None; n],
        children: vec![Vec::new(); n],
        closings: vec![Vec::new(); n],
        openings: vec![Vec::new(); n],
    };
    let mut out = String::new();
    for (ci, comp) in components.iter().enumerate() {
        if ci > 0 {
            out.push('.');
        }
        let root = comp[0];
        tree.build(m, root, &key);
        let mut writer = Writer {
            m,
            tree: &tree,
            digits: [false; 100],
            assigned: std::collections::HashMap::new(),
            out: &mut out,
        };
        writer.write(root);
    }
    out
}

struct DfsTree {
    visited: Vec<bool>,
    bond_used: Vec<bool>,
    parent: Vec<Option<(usize, usize)>>,
    children: Vec<Vec<(usize, usize)>>,
    /// At the descendant end of a ring bond: (ancestor, bond).
    closings: Vec<Vec<(usize, usize)>>,
    /// At the ancestor end of a ring bond: (descendant, bond).
    openings: Vec<Vec<(usize, usize)>>,
}

impl DfsTree {
    fn build(&mut self, m: &Molecule, root: usize, key: &dyn Fn(usize) -> (usize, usize)) {
        // Iterative DFS to avoid deep recursion on long chains.
        let mut stack: Vec<(usize, Vec<(usize, usize)>, usize)> = Vec::new();
        self.visited[root] = true;
        stack.push((root, self.sorted_neighbors(m, root, key), 0));
        while let Some(top) = stack.last_mut() {
            let u = top.0;
            if top.2 >= top.1.len() {
                stack.pop();
                continue;
            }
            let (v, b) = top.1[top.2];
            top.2 += 1;
            if self.bond_used[b] {
                continue;
            }
            self.bond_used[b] = true;
            if self.visited[v] {
                self.closings[u].push((v, b));
                self.openings[v].push((u, b));
            } else {
                self.visited[v] = true;
                self.parent[v] = Some((u, b));
                self.children[u].push((v, b));
                let next = self.sorted_neighbors(m, v, key);
                stack.push((v, next, 0));
            }
        }
        for u in 0..self.openings.len() {
            self.openings[u].sort_by_key(|&(v, _)| key(v));
            self.closings[u].sort_by_key(|&(v, _)| key(v));
        }
    }

    fn sorted_neighbors(&self, m: &Molecule, u: usize, key: &dyn Fn(usize) -> (usize, usize)) -> Vec<(usize, usize)> {
        let mut nbrs = m.neighbors(u).to_vec();
        nbrs.sort_by_key(|&(v, _)| key(v));
        nbrs
    }
}

struct Writer<'a> {
    m: &'a Molecule,
    tree: &'a DfsTree,
    digits: [bool; 100],
    assigned: std::collections::HashMap<usize, usize>,
    out: &'a mut String,
}

impl Writer<'_> {
    fn write(&mut self, root: usize) {
        // Explicit stack of pending emissions keeps deep chains off the call stack.
        enum Step {
            Atom(usize),
            Text(&'static str),
            Bond(usize),
        }
        let mut stack = vec![Step::Atom(root)];
        while let Some(step) = stack.pop() {
            match step {
                Step::Text(t) => self.out.push_str(t),
                Step::Bond(b) => {
                    let s = bond_symbol(self.m, b);
                    self.out.push_str(s);
                }
                Step::Atom(u) => {
                    self.write_atom(u);
                    let children = &self.tree.children[u];
                    // Push in reverse so the first child is emitted first.
                    for (k, &(v, b)) in children.iter().enumerate().rev() {
                        let last = k + 1 == children.len();
                        if !last {
                            stack.push(Step::Text(")"));
                        }
                        stack.push(Step::Atom(v));
                        stack.push(Step::Bond(b));
                        if !last {
                            stack.push(Step::Text("("));
                        }
                    }
                }
            }
        }
    }

    fn write_atom(&mut self, u: usize) {
        let m = self.m;
        let atom = m.atom(u);

        let mut ring_partners: Vec<usize> = Vec::new();
        let mut ring_text = String::new();
        let mut released = Vec::new();
        for &(v, b) in &self.tree.closings[u] {
            let d = self.assigned.remove(&b).expect("ring bond opened before closing");
            push_digit(&mut ring_text, d);
            released.push(d);
            ring_partners.push(v);
        }
        for &(v, b) in &self.tree.openings[u] {
            let d = (1..100).find(|&d| !self.digits[d]).expect("fewer than 100 open rings");
            self.digits[d] = true;
            self.assigned.insert(b, d);
            ring_text.push_str(bond_symbol(m, b));
            push_digit(&mut ring_text, d);
            ring_partners.push(v);
        }
        for d in released {
            self.digits[d] = false;
        }

        let chirality = atom.stereo.as_ref().and_then(|stereo| {
            let mut written: Vec<StereoNeighbor> = Vec::new();
            if let Some((p, _)) = self.tree.parent[u] {
                written.push(StereoNeighbor::Atom(p));
            }
            if stereo.neighbors.contains(&StereoNeighbor::ImplicitH) {
                written.push(StereoNeighbor::ImplicitH);
            }
            written.extend(ring_partners.iter().map(|&v| StereoNeighbor::Atom(v)));
            written.extend(self.tree.children[u].iter().map(|&(v, _)| StereoNeighbor::Atom(v)));
            permutation_parity(&stereo.neighbors, &written).map(|odd| {
                if odd {
                    stereo.chirality.flipped()
                } else {
                    stereo.chirality
                }
            })
        });

        let element = atom.element;
        let symbol = if atom.aromatic {
            element.symbol().to_ascii_lowercase()
        } else {
            element.symbol().to_string()
        };
        let plain = if element.is_wildcard() {
            atom.isotope.is_none() && atom.charge == 0 && atom.h_count == 0
        } else {
            element.is_organic_subset()
                && atom.charge == 0
                && atom.isotope.is_none()
                && chirality.is_none()
                && atom.h_count == m.implicit_hydrogens(u)
                && (!atom.aromatic || element.can_be_aromatic())
        };
        if plain {
            self.out.push_str(&symbol);
        } else {
            self.out.push('[');
            if let Some(iso) = atom.isotope {
                self.out.push_str(&iso.to_string());
            }
            self.out.push_str(&symbol);
            if let Some(c) = chirality {
                self.out.push_str(c.as_str());
            }
            match atom.h_count {
                0 => {}
                1 => self.out.push('H'),
                h => {
                    self.out.push('H');
                    self.out.push_str(&h.to_string());
                }
            }
            match atom.charge {
                0 => {}
                1 => self.out.push('+'),
                -1 => self.out.push('-'),
                c if c > 0 => self.out.push_str(&format!("+{c}")),
                c => self.out.push_str(&format!("-{}", -c)),
            }
            self.out.push(']');
        }
        self.out.push_str(&ring_text);
    }
}

fn push_digit(out: &mut String, d: usize) {
    if d < 10 {
        out.push(char::from(b'0' + d as u8));
    } else {
        out.push('%');
        out.push_str(&format!("{d:02}"));
    }
}

fn bond_symbol(m: &Molecule, b: usize) -> &'static str {
    let bond = m.bonds()[b];
    let both_aromatic = m.atom(bond.a).aromatic && m.atom(bond.b).aromatic;
    match bond.order {
        BondOrder::Single if both_aromatic => "-",
        BondOrder::Single => "",
        BondOrder::Aromatic if both_aromatic => "",
        BondOrder::Aromatic => ":",
        BondOrder::Double => "=",
        BondOrder::Triple => "#",
    }
}

/// Parity of the permutation taking `from` to `to`; `None` if they are not
/// permutations of each other.
fn permutation_parity(from: &[StereoNeighbor], to: &[StereoNeighbor]) -> Option<bool> {
    if from.len() != to.len() {
        return None;
    }
    let mut perm = Vec::with_capacity(from.len());
    for x in to {
        perm.push(from.iter().position(|y| y == x)?);
    }
    let mut seen = vec![false; perm.len()];
    let mut odd = false;
    for start in 0..perm.len() {
        if seen[start] {
            continue;
        }
        let mut len = 0;
        let mut i = start;
        while !seen[i] {
            seen[i] = true;
            i = perm[i];
            len += 1;
        }
        if len % 2 == 0 {
            odd = !odd;
        }
    }
    Some(odd)
}
