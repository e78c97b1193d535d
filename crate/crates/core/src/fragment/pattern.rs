//! A small SMARTS subset for describing bond-cleavage environments.
//!
//! Supported: bracket atoms with `*`, `#n`, element symbols (lowercase for
//! aromatic), `a`, `A`, `Dn`, `Xn`, `Hn`, `R`/`R0`, charges and recursive
//! `$(...)` environments, combined with `!`, `&`, `,` and `;`. Bonds take
//! `-`, `=`, `#`, `:`, `~` and `@` with the same operators. Patterns are
//! trees: ring-closure digits are rejected.

use thiserror::Error;

use crate::chem::{BondOrder, Element, Molecule};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("pattern error at byte {offset} of {pattern:?}: {message}")]
pub struct PatternError {
    pub pattern: String,
    pub offset: usize,
    pub message: &'static str,
}

#[derive(Debug, Clone, PartialEq)]
enum AtomExpr {
    Any,
    AtomicNumber(u8),
    Element { element: Element, aromatic: bool },
    Aromatic,
    Aliphatic,
    Degree(u8),
    Connections(u8),
    Hydrogens(u8),
    InRing,
    Charge(i8),
    Recursive(Box<Pattern>),
    Not(Box<AtomExpr>),
    And(Vec<AtomExpr>),
    Or(Vec<AtomExpr>),
}

#[derive(Debug, Clone, PartialEq)]
enum BondExpr {
    /// Unspecified bond: single or aromatic.
    Implicit,
    Any,
    Order(BondOrder),
    Ring,
    Not(Box<BondExpr>),
    And(Vec<BondExpr>),
    Or(Vec<BondExpr>),
}

/// A compiled tree pattern. Atom 0 is the root the pattern is anchored at.
#[derive(Debug, Clone, PartialEq)]
pub struct Pattern {
    source: String,
    atoms: Vec<AtomExpr>,
    /// For each atom after the root: (parent atom, bond to parent).
    parents: Vec<Option<(usize, BondExpr)>>,
}

/// Per-molecule facts the matcher needs, computed once.
pub struct MatchContext<'m> {
    mol: &'m Molecule,
    ring_bonds: Vec<bool>,
    ring_atoms: Vec<bool>,
}

impl<'m> MatchContext<'m> {
    pub fn new(mol: &'m Molecule) -> Self {
        let ring_bonds = mol.ring_bonds();
        let mut ring_atoms = vec![false; mol.atoms().len()];
        for (i, b) in mol.bonds().iter().enumerate() {
            if ring_bonds[i] {
                ring_atoms[b.a] = true;
                ring_atoms[b.b] = true;
            }
        }
        MatchContext {
            mol,
            ring_bonds,
            ring_atoms,
        }
    }

    pub fn molecule(&self) -> &'m Molecule {
        self.mol
    }

    pub fn is_ring_bond(&self, bond: usize) -> bool {
        self.ring_bonds[bond]
    }
}

impl Pattern {
    pub fn parse(src: &str) -> Result<Pattern, PatternError> {
        let mut p = PatternParser {
            src: src.as_bytes(),
            text: src,
            pos: 0,
        };
        let pattern = p.pattern()?;
        if p.pos != src.len() {
            return Err(p.err("trailing characters"));
        }
        Ok(pattern)
    }

    pub fn as_str(&self) -> &str {
        &self.source
    }

    /// Whether the pattern matches with its root atom mapped onto `atom`.
    pub fn matches_at(&self, ctx: &MatchContext<'_>, atom: usize) -> bool {
        if !atom_matches(&self.atoms[0], ctx, atom) {
            return false;
        }
        let mut mapping = vec![usize::MAX; self.atoms.len()];
        mapping[0] = atom;
        self.extend(ctx, &mut mapping, 1)
    }

    fn extend(&self, ctx: &MatchContext<'_>, mapping: &mut Vec<usize>, next: usize) -> bool {
        if next == self.atoms.len() {
            return true;
        }
        let (parent, bond_expr) = self.parents[next].as_ref().expect("non-root atoms have parents");
        let anchor = mapping[*parent];
        for &(candidate, bond) in ctx.mol.neighbors(anchor) {
            if mapping.contains(&candidate) {
                continue;
            }
            if !bond_matches(bond_expr, ctx, bond) || !atom_matches(&self.atoms[next], ctx, candidate) {
                continue;
            }
            mapping[next] = candidate;
            if self.extend(ctx, mapping, next + 1) {
                return true;
            }
            mapping[next] = usize::MAX;
        }
        false
    }
}

fn atom_matches(expr: &AtomExpr, ctx: &MatchContext<'_>, i: usize) -> bool {
    let atom = ctx.mol.atom(i);
    match expr {
        AtomExpr::Any => true,
        AtomExpr::AtomicNumber(z) => atom.element.atomic_number() == *z,
        AtomExpr::Element { element, aromatic } => atom.element == *element && atom.aromatic == *aromatic,
        AtomExpr::Aromatic => atom.aromatic,
        AtomExpr::Aliphatic => !atom.aromatic && !atom.is_wildcard(),
        AtomExpr::Degree(d) => ctx.mol.degree(i) == *d as usize,
        AtomExpr::Connections(x) => ctx.mol.degree(i) + atom.h_count as usize == *x as usize,
        AtomExpr::Hydrogens(h) => atom.h_count == *h,
        AtomExpr::InRing => ctx.ring_atoms[i],
        AtomExpr::Charge(c) => atom.charge == *c,
        AtomExpr::Recursive(p) => p.matches_at(ctx, i),
        AtomExpr::Not(e) => !atom_matches(e, ctx, i),
        AtomExpr::And(es) => es.iter().all(|e| atom_matches(e, ctx, i)),
        AtomExpr::Or(es) => es.iter().any(|e| atom_matches(e, ctx, i)),
    }
}

fn bond_matches(expr: &BondExpr, ctx: &MatchContext<'_>, b: usize) -> bool {
    let order = ctx.mol.bonds()[b].order;
    match expr {
        BondExpr::Implicit => matches!(order, BondOrder::Single | BondOrder::Aromatic),
        BondExpr::Any => true,
        BondExpr::Order(o) => order == *o,
        BondExpr::Ring => ctx.ring_bonds[b],
        BondExpr::Not(e) => !bond_matches(e, ctx, b),
        BondExpr::And(es) => es.iter().all(|e| bond_matches(e, ctx, b)),
        BondExpr::Or(es) => es.iter().any(|e| bond_matches(e, ctx, b)),
    }
}

struct PatternParser<'a> {
    src: &'a [u8],
    text: &'a str,
    pos: usize,
}

impl PatternParser<'_> {
    fn err(&self, message: &'static str) -> PatternError {
        PatternError {
            pattern: self.text.to_string(),
            offset: self.pos,
            message,
        }
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn number(&mut self) -> Option<u32> {
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.pos += 1;
        }
        (self.pos > start).then(|| self.text[start..self.pos].parse().unwrap_or(u32::MAX))
    }

    /// Parses a pattern up to the end of input or an unmatched `)`.
    fn pattern(&mut self) -> Result<Pattern, PatternError> {
        let start = self.pos;
        let mut atoms = Vec::new();
        let mut parents = Vec::new();
        let mut prev: Option<usize> = None;
        let mut stack: Vec<usize> = Vec::new();
        let mut pending: Option<BondExpr> = None;
        loop {
            match self.peek() {
                None => break,
                Some(b')') if stack.is_empty() => break,
                Some(b'(') => {
                    let p = prev.ok_or_else(|| self.err("branch without an atom"))?;
                    stack.push(p);
                    self.pos += 1;
                }
                Some(b')') => {
                    if pending.is_some() {
                        return Err(self.err("bond without an atom"));
                    }
                    prev = stack.pop();
                    self.pos += 1;
                }
                Some(c) if c.is_ascii_digit() || c == b'%' => {
                    return Err(self.err("ring closures are not supported in patterns"));
                }
                Some(c) if is_bond_char(c) => {
                    if pending.is_some() || prev.is_none() {
                        return Err(self.err("unexpected bond"));
                    }
                    pending = Some(self.bond_expr()?);
                }
                Some(_) => {
                    let atom = self.atom()?;
                    let idx = atoms.len();
                    atoms.push(atom);
                    parents.push(prev.map(|p| (p, pending.take().unwrap_or(BondExpr::Implicit))));
                    prev = Some(idx);
                }
            }
        }
        if !stack.is_empty() {
            return Err(self.err("unbalanced parenthesis"));
        }
        if pending.is_some() {
            return Err(self.err("bond without an atom"));
        }
        if atoms.is_empty() {
            return Err(self.err("empty pattern"));
        }
        Ok(Pattern {
            source: self.text[start..self.pos].to_string(),
            atoms,
            parents,
        })
    }

    fn atom(&mut self) -> Result<AtomExpr, PatternError> {
        if self.eat(b'[') {
            let expr = self.atom_low_and()?;
            if !self.eat(b']') {
                return Err(self.err("expected ']'"));
            }
            return Ok(expr);
        }
        let rest = &self.text[self.pos..];
        for (sym, z) in [("Cl", 17u8), ("Br", 35)] {
            if rest.starts_with(sym) {
                self.pos += 2;
                return Ok(element(z, false));
            }
        }
        let c = self.peek().unwrap();
        self.pos += 1;
        Ok(match c {
            b'*' => AtomExpr::Any,
            b'a' => AtomExpr::Aromatic,
            b'A' => AtomExpr::Aliphatic,
            b'B' => element(5, false),
            b'C' => element(6, false),
            b'N' => element(7, false),
            b'O' => element(8, false),
            b'P' => element(15, false),
            b'S' => element(16, false),
            b'F' => element(9, false),
            b'I' => element(53, false),
            b'b' => element(5, true),
            b'c' => element(6, true),
            b'n' => element(7, true),
            b'o' => element(8, true),
            b'p' => element(15, true),
            b's' => element(16, true),
            _ => {
                self.pos -= 1;
                return Err(self.err("unknown atom"));
            }
        })
    }

    fn atom_low_and(&mut self) -> Result<AtomExpr, PatternError> {
        let mut terms = vec![self.atom_or()?];
        while self.eat(b';') {
            terms.push(self.atom_or()?);
        }
        Ok(collapse(terms, AtomExpr::And))
    }

    fn atom_or(&mut self) -> Result<AtomExpr, PatternError> {
        let mut terms = vec![self.atom_high_and()?];
        while self.eat(b',') {
            terms.push(self.atom_high_and()?);
        }
        Ok(collapse(terms, AtomExpr::Or))
    }

    fn atom_high_and(&mut self) -> Result<AtomExpr, PatternError> {
        let mut terms = vec![self.atom_unary()?];
        loop {
            if self.eat(b'&') {
                terms.push(self.atom_unary()?);
                continue;
            }
            match self.peek() {
                Some(b']' | b';' | b',' | b')') | None => break,
                _ => terms.push(self.atom_unary()?),
            }
        }
        Ok(collapse(terms, AtomExpr::And))
    }

    fn atom_unary(&mut self) -> Result<AtomExpr, PatternError> {
        if self.eat(b'!') {
            return Ok(AtomExpr::Not(Box::new(self.atom_unary()?)));
        }
        self.atom_primitive()
    }

    fn atom_primitive(&mut self) -> Result<AtomExpr, PatternError> {
        let Some(c) = self.peek() else {
            return Err(self.err("unterminated atom"));
        };
        let start = self.pos;
        self.pos += 1;
        let small = |n: Option<u32>, default: u32| -> u8 { n.unwrap_or(default).min(u8::MAX as u32) as u8 };
        Ok(match c {
            b'*' => AtomExpr::Any,
            b'#' => {
                let z = self.number().ok_or_else(|| self.err("expected atomic number"))?;
                if z > 118 {
                    return Err(self.err("atomic number out of range"));
                }
                AtomExpr::AtomicNumber(z as u8)
            }
            b'$' => {
                if !self.eat(b'(') {
                    return Err(self.err("expected '(' after '$'"));
                }
                let inner = self.pattern()?;
                if !self.eat(b')') {
                    return Err(self.err("unterminated recursive pattern"));
                }
                AtomExpr::Recursive(Box::new(inner))
            }
            b'D' => AtomExpr::Degree(small(self.number(), 1)),
            b'X' => AtomExpr::Connections(small(self.number(), 1)),
            b'H' => AtomExpr::Hydrogens(small(self.number(), 1)),
            b'R' => match self.number() {
                Some(0) => AtomExpr::Not(Box::new(AtomExpr::InRing)),
                _ => AtomExpr::InRing,
            },
            b'+' | b'-' => {
                let sign: i32 = if c == b'+' { 1 } else { -1 };
                let magnitude = match self.number() {
                    Some(n) => n as i32,
                    None => {
                        let mut m = 1;
                        while self.eat(c) {
                            m += 1;
                        }
                        m
                    }
                };
                AtomExpr::Charge((sign * magnitude).clamp(-8, 8) as i8)
            }
            b'a' => AtomExpr::Aromatic,
            b'A' => AtomExpr::Aliphatic,
            b'c' | b'n' | b'o' | b's' | b'p' | b'b' => {
                let z = match c {
                    b'c' => 6,
                    b'n' => 7,
                    b'o' => 8,
                    b's' => 16,
                    b'p' => 15,
                    _ => 5,
                };
                element(z, true)
            }
            c if c.is_ascii_uppercase() => {
                // Two-letter symbols take precedence when they exist.
                if let Some(&next) = self.src.get(self.pos) {
                    if next.is_ascii_lowercase() {
                        if let Some(e) = Element::from_symbol(&self.text[start..start + 2]) {
                            self.pos += 1;
                            return Ok(element(e.atomic_number(), false));
                        }
                    }
                }
                match Element::from_symbol(&self.text[start..start + 1]) {
                    Some(e) => element(e.atomic_number(), false),
                    None => {
                        self.pos = start;
                        return Err(self.err("unknown element"));
                    }
                }
            }
            _ => {
                self.pos = start;
                return Err(self.err("unexpected character in atom"));
            }
        })
    }

    fn bond_expr(&mut self) -> Result<BondExpr, PatternError> {
        let mut terms = vec![self.bond_or()?];
        while self.eat(b';') {
            terms.push(self.bond_or()?);
        }
        Ok(collapse(terms, BondExpr::And))
    }

    fn bond_or(&mut self) -> Result<BondExpr, PatternError> {
        let mut terms = vec![self.bond_high_and()?];
        while self.eat(b',') {
            terms.push(self.bond_high_and()?);
        }
        Ok(collapse(terms, BondExpr::Or))
    }

    fn bond_high_and(&mut self) -> Result<BondExpr, PatternError> {
        let mut terms = vec![self.bond_unary()?];
        loop {
            if self.eat(b'&') {
                terms.push(self.bond_unary()?);
                continue;
            }
            match self.peek() {
                Some(c) if is_bond_char(c) && c != b';' && c != b',' => terms.push(self.bond_unary()?),
                _ => break,
            }
        }
        Ok(collapse(terms, BondExpr::And))
    }

    fn bond_unary(&mut self) -> Result<BondExpr, PatternError> {
        if self.eat(b'!') {
            return Ok(BondExpr::Not(Box::new(self.bond_unary()?)));
        }
        let c = self.peek().ok_or_else(|| self.err("expected bond"))?;
        self.pos += 1;
        Ok(match c {
            b'-' => BondExpr::Order(BondOrder::Single),
            b'=' => BondExpr::Order(BondOrder::Double),
            b'#' => BondExpr::Order(BondOrder::Triple),
            b':' => BondExpr::Order(BondOrder::Aromatic),
            b'~' => BondExpr::Any,
            b'@' => BondExpr::Ring,
            _ => {
                self.pos -= 1;
                return Err(self.err("unknown bond"));
            }
        })
    }
}

fn is_bond_char(c: u8) -> bool {
    matches!(c, b'-' | b'=' | b'#' | b':' | b'~' | b'@' | b'!' | b';' | b',' | b'&')
}

fn element(z: u8, aromatic: bool) -> AtomExpr {
    AtomExpr::Element {
        element: Element::from_atomic_number(z).expect("valid atomic number"),
        aromatic,
    }
}

fn collapse<T>(mut terms: Vec<T>, wrap: fn(Vec<T>) -> T) -> T {
    if terms.len() == 1 {
        terms.pop().unwrap()
    } else {
        wrap(terms)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::parse_smiles;

    fn hits(pattern: &str, smiles: &str) -> Vec<usize> {
        let p = Pattern::parse(pattern).unwrap();
        let m = parse_smiles(smiles).unwrap();
        let ctx = MatchContext::new(&m);
        (0..m.atoms().len()).filter(|&i| p.matches_at(&ctx, i)).collect()
    }

    #[test]
    fn element_and_degree() {
        assert_eq!(hits("[C;D3]", "CC(C)O"), vec![1]);
        assert_eq!(hits("C", "CCO"), vec![0, 1]);
        assert_eq!(hits("c", "Cc1ccccc1"), vec![1, 2, 3, 4, 5, 6]);
        assert_eq!(hits("[#8]", "CCO"), vec![2]);
        assert_eq!(hits("[Cl]", "CCCl"), vec![2]);
    }

    #[test]
    fn neighbors_and_bonds() {
        // carbonyl carbon
        assert_eq!(hits("[C](=O)", "CC(=O)OC"), vec![1]);
        // ester oxygen: two single bonds to carbon, not in a ring
        assert_eq!(hits("[O;D2]-;!@[#6]", "CC(=O)OC"), vec![3]);
        assert_eq!(hits("[O;D2]-;!@[#6]", "C1CCOC1"), Vec::<usize>::new());
    }

    #[test]
    fn recursive_and_negation() {
        assert_eq!(hits("[C;!$(C=*)]", "C=CC"), vec![2]);
        assert_eq!(hits("[N;!$(N-C=O)]", "CC(=O)NCCN"), vec![6]);
        assert_eq!(hits("[n;+0;$(n(:[c,n,o,s]):[c,n,o,s])]", "c1ccncc1"), vec![3]);
        assert_eq!(hits("[C;R]", "CC1CC1"), vec![1, 2, 3]);
        assert_eq!(hits("[C;R0]", "CC1CC1"), vec![0]);
    }

    #[test]
    fn injective_mapping() {
        // needs two distinct carbon neighbors
        assert_eq!(hits("O(C)C", "COC"), vec![1]);
        assert_eq!(hits("O(C)C", "CO"), Vec::<usize>::new());
    }

    #[test]
    fn charges_and_hydrogens() {
        assert_eq!(hits("[N;+0]", "C[NH3+].CN"), vec![3]);
        assert_eq!(hits("[C;H3]", "CC(C)O"), vec![0, 2]);
        assert_eq!(hits("[C;X4]", "CC=O"), vec![0]);
    }

    #[test]
    fn parse_errors() {
        assert!(Pattern::parse("C1CC1").is_err());
        assert!(Pattern::parse("[C").is_err());
        assert!(Pattern::parse("").is_err());
        assert!(Pattern::parse("C(").is_err());
        assert!(Pattern::parse("[Qq]").is_err());
        assert!(Pattern::parse("C=").is_err());
    }
}
