//! Molecular graphs: SMILES parsing, canonical serialization and ring perception.
//!
//! The graph keeps hydrogens implicit. Atoms written without brackets get their
//! hydrogen count from the element's default valences, which lets the writer
//! reproduce the same graph when re-parsing its own output.

mod canon;
mod element;
mod smiles;

pub use canon::{canonical_ranking, canonicalize, write_smiles};
pub use element::Element;
pub use smiles::{parse_fragment_smiles, parse_smiles, parse_smiles_with, ParseOptions, SmilesError, DEFAULT_MAX_LEN};

/// Tetrahedral chirality as written in SMILES (`@` or `@@`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Chirality {
    /// `@`
    CounterClockwise,
    /// `@@`
    Clockwise,
}

impl Chirality {
    pub fn flipped(self) -> Self {
        match self {
            Chirality::CounterClockwise => Chirality::Clockwise,
            Chirality::Clockwise => Chirality::CounterClockwise,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Chirality::CounterClockwise => "@",
            Chirality::Clockwise => "@@",
        }
    }
}

/// One entry of the neighbor ordering a chirality mark refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StereoNeighbor {
    Atom(usize),
    ImplicitH,
}

/// A chirality mark together with the neighbor order it was written against.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Stereo {
    pub chirality: Chirality,
    pub neighbors: Vec<StereoNeighbor>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Atom {
    pub element: Element,
    pub aromatic: bool,
    pub charge: i8,
    /// Total (implicit or bracket) hydrogen count.
    pub h_count: u8,
    /// Mass number; on wildcard atoms this carries the attachment label.
    pub isotope: Option<u16>,
    pub stereo: Option<Stereo>,
    /// Written inside `[...]`; organic atoms outside brackets derive `h_count`.
    pub bracket: bool,
}

impl Atom {
    pub fn organic(element: Element, aromatic: bool) -> Self {
        Atom {
            element,
            aromatic,
            charge: 0,
            h_count: 0,
            isotope: None,
            stereo: None,
            bracket: false,
        }
    }

    /// A `[n*]` attachment point.
    pub fn wildcard(label: Option<u16>) -> Self {
        Atom {
            element: Element::WILDCARD,
            aromatic: false,
            charge: 0,
            h_count: 0,
            isotope: label,
            stereo: None,
            bracket: label.is_some(),
        }
    }

    pub fn is_wildcard(&self) -> bool {
        self.element.is_wildcard()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    /// Contribution to the valence sum used for implicit hydrogens.
    pub fn valence(self) -> u8 {
        match self {
            BondOrder::Single | BondOrder::Aromatic => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            BondOrder::Single => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
            BondOrder::Aromatic => 4,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            BondOrder::Single => "-",
            BondOrder::Double => "=",
            BondOrder::Triple => "#",
            BondOrder::Aromatic => ":",
        }
    }

    pub fn from_symbol(s: &str) -> Option<Self> {
        match s {
            "-" => Some(BondOrder::Single),
            "=" => Some(BondOrder::Double),
            "#" => Some(BondOrder::Triple),
            ":" => Some(BondOrder::Aromatic),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: BondOrder,
}

impl Bond {
    pub fn other(&self, atom: usize) -> usize {
        if self.a == atom {
            self.b
        } else {
            self.a
        }
    }
}

/// A molecular graph with hydrogens folded into atom attributes.
#[derive(Debug, Clone)]
pub struct Molecule {
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    /// Per atom: `(neighbor, bond index)` in insertion order.
    adjacency: Vec<Vec<(usize, usize)>>,
    source_smiles: String,
    canonical_smiles: String,
}

impl Molecule {
    /// Builds a molecule from raw parts and computes its canonical form.
    /// Organic atoms outside brackets get their hydrogen count recomputed.
    pub fn from_parts(atoms: Vec<Atom>, bonds: Vec<Bond>, source_smiles: impl Into<String>) -> Self {
        let mut mol = Molecule::without_canonical(atoms, bonds, source_smiles.into());
        mol.canonical_smiles = canon::canonicalize_graph(&mol);
        mol
    }

    pub(crate) fn without_canonical(atoms: Vec<Atom>, bonds: Vec<Bond>, source: String) -> Self {
        let mut adjacency = vec![Vec::new(); atoms.len()];
        for (i, bond) in bonds.iter().enumerate() {
            adjacency[bond.a].push((bond.b, i));
            adjacency[bond.b].push((bond.a, i));
        }
        let mut mol = Molecule {
            atoms,
            bonds,
            adjacency,
            source_smiles: source,
            canonical_smiles: String::new(),
        };
        // An aromatic bond outside any ring is really a single bond (biphenyl written as c1ccccc1c1ccccc1).
        let ring = mol.ring_bonds();
        for (bond, in_ring) in mol.bonds.iter_mut().zip(ring) {
            if bond.order == BondOrder::Aromatic && !in_ring {
                bond.order = BondOrder::Single;
            }
        }
        for i in 0..mol.atoms.len() {
            if !mol.atoms[i].bracket && !mol.atoms[i].is_wildcard() {
                mol.atoms[i].h_count = mol.implicit_hydrogens(i);
            }
        }
        mol
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    pub fn atom(&self, i: usize) -> &Atom {
        &self.atoms[i]
    }

    pub fn neighbors(&self, atom: usize) -> &[(usize, usize)] {
        &self.adjacency[atom]
    }

    pub fn degree(&self, atom: usize) -> usize {
        self.adjacency[atom].len()
    }

    pub fn bond_between(&self, a: usize, b: usize) -> Option<usize> {
        self.adjacency[a].iter().find(|(n, _)| *n == b).map(|&(_, bond)| bond)
    }

    pub fn source_smiles(&self) -> &str {
        &self.source_smiles
    }

    pub fn canonical_smiles(&self) -> &str {
        &self.canonical_smiles
    }

    /// Heavy atoms: hydrogens and attachment wildcards are not counted.
    pub fn atom_count(&self) -> usize {
        self.atoms
            .iter()
            .filter(|a| a.element != Element::H && !a.is_wildcard())
            .count()
    }

    pub fn bond_count(&self) -> usize {
        self.bonds.len()
    }

    /// Implicit hydrogens an unbracketed atom would carry at this position.
    pub fn implicit_hydrogens(&self, atom: usize) -> u8 {
        let a = &self.atoms[atom];
        let valences = a.element.default_valences();
        if valences.is_empty() {
            return 0;
        }
        let mut sum: u8 = self.adjacency[atom]
            .iter()
            .map(|&(_, b)| self.bonds[b].order.valence())
            .sum();
        if a.aromatic {
            sum += 1;
            return valences[0].saturating_sub(sum);
        }
        valences.iter().find(|&&v| v >= sum).map_or(0, |&v| v - sum)
    }

    /// Connected components as sorted atom index lists, ordered by smallest index.
    pub fn components(&self) -> Vec<Vec<usize>> {
        self.components_without(&[])
    }

    /// Connected components after deleting the given bonds.
    pub fn components_without(&self, removed_bonds: &[usize]) -> Vec<Vec<usize>> {
        let mut seen = vec![false; self.atoms.len()];
        let mut out = Vec::new();
        for start in 0..self.atoms.len() {
            if seen[start] {
                continue;
            }
            let mut comp = vec![start];
            seen[start] = true;
            let mut stack = vec![start];
            while let Some(u) = stack.pop() {
                for &(v, b) in &self.adjacency[u] {
                    if !seen[v] && !removed_bonds.contains(&b) {
                        seen[v] = true;
                        comp.push(v);
                        stack.push(v);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    /// `true` for bonds that lie on a ring (i.e. are not bridges).
    pub fn ring_bonds(&self) -> Vec<bool> {
        let n = self.atoms.len();
        let mut disc = vec![usize::MAX; n];
        let mut low = vec![0usize; n];
        let mut is_bridge = vec![false; self.bonds.len()];
        let mut timer = 0usize;
        for root in 0..n {
            if disc[root] != usize::MAX {
                continue;
            }
            // Iterative DFS: (atom, parent bond, next adjacency slot).
            let mut stack: Vec<(usize, Option<usize>, usize)> = vec![(root, None, 0)];
            disc[root] = timer;
            low[root] = timer;
            timer += 1;
            while let Some(&mut (u, parent_bond, ref mut slot)) = stack.last_mut() {
                if let Some(&(v, b)) = self.adjacency[u].get(*slot) {
                    *slot += 1;
                    if Some(b) == parent_bond {
                        continue;
                    }
                    if disc[v] == usize::MAX {
                        disc[v] = timer;
                        low[v] = timer;
                        timer += 1;
                        stack.push((v, Some(b), 0));
                    } else {
                        low[u] = low[u].min(disc[v]);
                    }
                } else {
                    stack.pop();
                    if let (Some(b), Some(&(p, _, _))) = (parent_bond, stack.last()) {
                        low[p] = low[p].min(low[u]);
                        if low[u] > disc[p] {
                            is_bridge[b] = true;
                        }
                    }
                }
            }
        }
        is_bridge.into_iter().map(|b| !b).collect()
    }

    /// `true` for atoms incident to at least one ring bond.
    pub fn ring_atoms(&self) -> Vec<bool> {
        let ring_bonds = self.ring_bonds();
        let mut out = vec![false; self.atoms.len()];
        for (i, bond) in self.bonds.iter().enumerate() {
            if ring_bonds[i] {
                out[bond.a] = true;
                out[bond.b] = true;
            }
        }
        out
    }

    /// Ring-system skeleton: ring atoms plus the chains linking them, with
    /// terminal side chains stripped iteratively. Acyclic molecules give `""`.
    pub fn scaffold_smiles(&self) -> String {
        let n = self.atoms.len();
        let mut keep = vec![true; n];
        let mut degree: Vec<usize> = (0..n).map(|i| self.degree(i)).collect();
        let mut queue: Vec<usize> = (0..n).filter(|&i| degree[i] <= 1).collect();
        while let Some(u) = queue.pop() {
            if !keep[u] {
                continue;
            }
            keep[u] = false;
            for &(v, _) in &self.adjacency[u] {
                if keep[v] {
                    degree[v] -= 1;
                    if degree[v] <= 1 {
                        queue.push(v);
                    }
                }
            }
        }
        let kept: Vec<usize> = (0..n).filter(|&i| keep[i]).collect();
        if kept.is_empty() {
            return String::new();
        }
        let sub = self.induced_subgraph(&kept, true);
        sub.canonical_smiles().to_string()
    }

    /// Subgraph on `atoms` (sorted parent indices). With `reset_hydrogens`,
    /// unbracketed atoms get hydrogens recomputed for their new degree and
    /// chirality marks are dropped.
    pub fn induced_subgraph(&self, atoms: &[usize], reset_hydrogens: bool) -> Molecule {
        let mut index = vec![usize::MAX; self.atoms.len()];
        for (new, &old) in atoms.iter().enumerate() {
            index[old] = new;
        }
        let new_atoms: Vec<Atom> = atoms
            .iter()
            .map(|&i| {
                let mut a = self.atoms[i].clone();
                if reset_hydrogens {
                    a.stereo = None;
                }
                a
            })
            .collect();
        let bonds: Vec<Bond> = self
            .bonds
            .iter()
            .filter(|b| index[b.a] != usize::MAX && index[b.b] != usize::MAX)
            .map(|b| Bond {
                a: index[b.a],
                b: index[b.b],
                order: b.order,
            })
            .collect();
        let mut new_atoms = new_atoms;
        if !reset_hydrogens {
            for a in new_atoms.iter_mut() {
                if let Some(stereo) = &mut a.stereo {
                    let remapped: Option<Vec<StereoNeighbor>> = stereo
                        .neighbors
                        .iter()
                        .map(|n| match *n {
                            StereoNeighbor::Atom(i) if index[i] != usize::MAX => Some(StereoNeighbor::Atom(index[i])),
                            StereoNeighbor::Atom(_) => None,
                            StereoNeighbor::ImplicitH => Some(StereoNeighbor::ImplicitH),
                        })
                        .collect();
                    match remapped {
                        Some(ns) => stereo.neighbors = ns,
                        None => a.stereo = None,
                    }
                }
            }
        }
        let smiles = String::new();
        let mut mol = Molecule::without_canonical(new_atoms, bonds, smiles);
        mol.canonical_smiles = canon::canonicalize_graph(&mol);
        mol.source_smiles = mol.canonical_smiles.clone();
        mol
    }
}

/// Number of heavy atoms in `m`.
pub fn atom_count(m: &Molecule) -> usize {
    m.atom_count()
}
