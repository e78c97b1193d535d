use std::collections::BTreeMap;

use thiserror::Error;

use super::{Atom, Bond, BondOrder, Chirality, Element, Molecule, Stereo, StereoNeighbor};

/// Longest SMILES accepted by default, matching the encoder's sequence budget.
pub const DEFAULT_MAX_LEN: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SmilesError {
    #[error("empty SMILES")]
    EmptyInput,
    #[error("SMILES is {len} bytes, limit is {max}")]
    TooLong { len: usize, max: usize },
    #[error("unknown element at byte {offset}")]
    UnknownElement { offset: usize },
    #[error("unbalanced ring closure at byte {offset}")]
    UnbalancedRingClosure { offset: usize },
    #[error("bond without a following atom at byte {offset}")]
    DanglingBond { offset: usize },
    #[error("unbalanced parenthesis at byte {offset}")]
    UnbalancedParenthesis { offset: usize },
    #[error("unexpected character {ch:?} at byte {offset}")]
    UnexpectedCharacter { offset: usize, ch: char },
    #[error("charge out of range at byte {offset}")]
    InvalidCharge { offset: usize },
    #[error("wildcard atom outside a fragment at byte {offset}")]
    WildcardNotAllowed { offset: usize },
    #[error("unsupported construct {what} at byte {offset}")]
    Unsupported { offset: usize, what: &'static str },
    #[error("duplicate bond at byte {offset}")]
    DuplicateBond { offset: usize },
    #[error("aromatic bond between non-aromatic atoms at byte {offset}")]
    InvalidAromaticBond { offset: usize },
}

impl SmilesError {
    /// Byte offset the error refers to, if any.
    pub fn offset(&self) -> Option<usize> {
        match *self {
            SmilesError::EmptyInput | SmilesError::TooLong { .. } => None,
            SmilesError::UnknownElement { offset }
            | SmilesError::UnbalancedRingClosure { offset }
            | SmilesError::DanglingBond { offset }
            | SmilesError::UnbalancedParenthesis { offset }
            | SmilesError::UnexpectedCharacter { offset, .. }
            | SmilesError::InvalidCharge { offset }
            | SmilesError::WildcardNotAllowed { offset }
            | SmilesError::Unsupported { offset, .. }
            | SmilesError::DuplicateBond { offset }
            | SmilesError::InvalidAromaticBond { offset } => Some(offset),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ParseOptions {
    pub max_len: usize,
    /// Accept `*` / `[n*]` attachment atoms (fragment SMILES).
    pub allow_wildcard: bool,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions {
            max_len: DEFAULT_MAX_LEN,
            allow_wildcard: false,
        }
    }
}

/// Parses a whole-molecule SMILES string.
pub fn parse_smiles(s: &str) -> Result<Molecule, SmilesError> {
    parse_smiles_with(s, ParseOptions::default())
}

/// Parses a fragment SMILES, where wildcard attachment atoms are allowed.
pub fn parse_fragment_smiles(s: &str) -> Result<Molecule, SmilesError> {
    parse_smiles_with(
        s,
        ParseOptions {
            allow_wildcard: true,
            ..ParseOptions::default()
        },
    )
}

pub fn parse_smiles_with(s: &str, opts: ParseOptions) -> Result<Molecule, SmilesError> {
    if s.is_empty() {
        return Err(SmilesError::EmptyInput);
    }
    if s.len() > opts.max_len {
        return Err(SmilesError::TooLong {
            len: s.len(),
            max: opts.max_len,
        });
    }
    let mut p = Parser {
        src: s.as_bytes(),
        pos: 0,
        opts,
        atoms: Vec::new(),
        bonds: Vec::new(),
        order: Vec::new(),
    };
    p.run()?;
    // Chirality marks are stored against the order neighbors were written in.
    for (i, order) in p.order.iter().enumerate() {
        if let Some(stereo) = &mut p.atoms[i].stereo {
            stereo.neighbors = order
                .iter()
                .map(|slot| match *slot {
                    Slot::Atom(a) => StereoNeighbor::Atom(a),
                    Slot::H => StereoNeighbor::ImplicitH,
                    Slot::PendingRing(_) => unreachable!("ring closures are resolved"),
                })
                .collect();
        }
    }
    Ok(Molecule::from_parts(p.atoms, p.bonds, s))
}

#[derive(Debug, Clone, Copy)]
enum Slot {
    Atom(usize),
    H,
    PendingRing(u32),
}

#[derive(Debug, Clone, Copy)]
struct PendingBond {
    order: Option<BondOrder>,
    offset: usize,
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    opts: ParseOptions,
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    order: Vec<Vec<Slot>>,
}

impl Parser<'_> {
    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn unexpected(&self, at: usize) -> SmilesError {
        let ch = std::str::from_utf8(&self.src[at..])
            .ok()
            .and_then(|s| s.chars().next())
            .unwrap_or(char::REPLACEMENT_CHARACTER);
        SmilesError::UnexpectedCharacter { offset: at, ch }
    }

    fn run(&mut self) -> Result<(), SmilesError> {
        let mut prev: Option<usize> = None;
        let mut pending: Option<PendingBond> = None;
        let mut branches: Vec<(usize, usize)> = Vec::new();
        // ring number -> (atom, bond order, offset of the digit)
        let mut rings: BTreeMap<u32, (usize, Option<BondOrder>, usize)> = BTreeMap::new();
        let mut expect_atom = true;

        while let Some(c) = self.peek() {
            let start = self.pos;
            match c {
                b'(' => {
                    let Some(p) = prev else {
                        return Err(self.unexpected(start));
                    };
                    if pending.is_some() {
                        return Err(SmilesError::DanglingBond { offset: start });
                    }
                    branches.push((p, start));
                    self.pos += 1;
                    expect_atom = true;
                }
                b')' => {
                    if let Some(b) = pending {
                        return Err(SmilesError::DanglingBond { offset: b.offset });
                    }
                    if expect_atom {
                        return Err(self.unexpected(start));
                    }
                    let Some((p, _)) = branches.pop() else {
                        return Err(SmilesError::UnbalancedParenthesis { offset: start });
                    };
                    prev = Some(p);
                    self.pos += 1;
                }
                b'.' => {
                    if let Some(b) = pending {
                        return Err(SmilesError::DanglingBond { offset: b.offset });
                    }
                    if prev.is_none() || expect_atom {
                        return Err(self.unexpected(start));
                    }
                    prev = None;
                    self.pos += 1;
                    expect_atom = true;
                }
                b'-' | b'=' | b'#' | b':' | b'/' | b'\\' => {
                    if pending.is_some() || prev.is_none() {
                        return Err(SmilesError::DanglingBond { offset: start });
                    }
                    let order = match c {
                        b'=' => BondOrder::Double,
                        b'#' => BondOrder::Triple,
                        b':' => BondOrder::Aromatic,
                        _ => BondOrder::Single,
                    };
                    pending = Some(PendingBond {
                        order: Some(order),
                        offset: start,
                    });
                    self.pos += 1;
                    expect_atom = true;
                }
                b'$' => {
                    return Err(SmilesError::Unsupported {
                        offset: start,
                        what: "quadruple bond",
                    })
                }
                b'>' => {
                    return Err(SmilesError::Unsupported {
                        offset: start,
                        what: "reaction SMILES",
                    })
                }
                b'0'..=b'9' | b'%' => {
                    let Some(atom) = prev else {
                        return Err(self.unexpected(start));
                    };
                    let number = self.ring_number()?;
                    let bond_order = pending.take().and_then(|b| b.order);
                    if let Some((other, open_order, _)) = rings.remove(&number) {
                        if other == atom {
                            return Err(SmilesError::DuplicateBond { offset: start });
                        }
                        let order = match (open_order, bond_order) {
                            (Some(a), Some(b)) if a != b => {
                                return Err(SmilesError::UnbalancedRingClosure { offset: start })
                            }
                            (Some(a), _) | (None, Some(a)) => a,
                            (None, None) => self.default_order(other, atom),
                        };
                        self.add_bond(other, atom, order, start)?;
                        let slot = self.order[other]
                            .iter_mut()
                            .find(|s| matches!(s, Slot::PendingRing(n) if *n == number))
                            .expect("ring opening slot");
                        *slot = Slot::Atom(atom);
                        self.order[atom].push(Slot::Atom(other));
                    } else {
                        rings.insert(number, (atom, bond_order, start));
                        self.order[atom].push(Slot::PendingRing(number));
                    }
                    expect_atom = false;
                }
                _ => {
                    let atom = self.atom(prev)?;
                    if let Some(p) = prev {
                        let order = match pending.take() {
                            Some(PendingBond { order: Some(o), .. }) => o,
                            _ => self.default_order(p, atom),
                        };
                        self.add_bond(p, atom, order, start)?;
                        self.order[p].push(Slot::Atom(atom));
                    } else if let Some(b) = pending {
                        return Err(SmilesError::DanglingBond { offset: b.offset });
                    }
                    prev = Some(atom);
                    expect_atom = false;
                }
            }
        }
        if let Some(b) = pending {
            return Err(SmilesError::DanglingBond { offset: b.offset });
        }
        if let Some((_, (_, _, offset))) = rings.iter().next() {
            return Err(SmilesError::UnbalancedRingClosure { offset: *offset });
        }
        if let Some(&(_, offset)) = branches.last() {
            return Err(SmilesError::UnbalancedParenthesis { offset });
        }
        if expect_atom {
            return Err(self.unexpected(self.src.len().saturating_sub(1)));
        }
        Ok(())
    }

    fn ring_number(&mut self) -> Result<u32, SmilesError> {
        let start = self.pos;
        if self.peek() == Some(b'%') {
            let digits = self.src.get(self.pos + 1..self.pos + 3);
            match digits {
                Some(d) if d.iter().all(u8::is_ascii_digit) => {
                    self.pos += 3;
                    Ok(((d[0] - b'0') as u32) * 10 + (d[1] - b'0') as u32)
                }
                _ => Err(self.unexpected(start)),
            }
        } else {
            let d = self.src[self.pos] - b'0';
            self.pos += 1;
            Ok(d as u32)
        }
    }

    fn default_order(&self, a: usize, b: usize) -> BondOrder {
        if self.atoms[a].aromatic && self.atoms[b].aromatic {
            BondOrder::Aromatic
        } else {
            BondOrder::Single
        }
    }

    fn add_bond(&mut self, a: usize, b: usize, order: BondOrder, offset: usize) -> Result<(), SmilesError> {
        if self
            .bonds
            .iter()
            .any(|x| (x.a == a && x.b == b) || (x.a == b && x.b == a))
        {
            return Err(SmilesError::DuplicateBond { offset });
        }
        if order == BondOrder::Aromatic
            && !(self.atoms[a].element.can_be_aromatic() && self.atoms[b].element.can_be_aromatic())
        {
            return Err(SmilesError::InvalidAromaticBond { offset });
        }
        self.bonds.push(Bond { a, b, order });
        Ok(())
    }

    fn push_atom(&mut self, atom: Atom, prev: Option<usize>) -> usize {
        let idx = self.atoms.len();
        let mut order = Vec::new();
        if let Some(p) = prev {
            order.push(Slot::Atom(p));
        }
        if atom.stereo.is_some() && atom.h_count == 1 {
            order.push(Slot::H);
        }
        self.atoms.push(atom);
        self.order.push(order);
        idx
    }

    fn atom(&mut self, prev: Option<usize>) -> Result<usize, SmilesError> {
        let start = self.pos;
        let c = self.src[start];
        if c == b'[' {
            let atom = self.bracket_atom()?;
            return Ok(self.push_atom(atom, prev));
        }
        let two = self.src.get(start..start + 2);
        let (element, aromatic, len) = match (c, two) {
            (b'C', Some(b"Cl")) => (Element::CL, false, 2),
            (b'B', Some(b"Br")) => (Element::BR, false, 2),
            (b'B', _) => (Element::B, false, 1),
            (b'C', _) => (Element::C, false, 1),
            (b'N', _) => (Element::N, false, 1),
            (b'O', _) => (Element::O, false, 1),
            (b'P', _) => (Element::P, false, 1),
            (b'S', _) => (Element::S, false, 1),
            (b'F', _) => (Element::F, false, 1),
            (b'I', _) => (Element::I, false, 1),
            (b'b', _) => (Element::B, true, 1),
            (b'c', _) => (Element::C, true, 1),
            (b'n', _) => (Element::N, true, 1),
            (b'o', _) => (Element::O, true, 1),
            (b'p', _) => (Element::P, true, 1),
            (b's', _) => (Element::S, true, 1),
            (b'*', _) => {
                if !self.opts.allow_wildcard {
                    return Err(SmilesError::WildcardNotAllowed { offset: start });
                }
                (Element::WILDCARD, false, 1)
            }
            (c, _) if c.is_ascii_alphabetic() => return Err(SmilesError::UnknownElement { offset: start }),
            _ => return Err(self.unexpected(start)),
        };
        self.pos += len;
        let atom = if element.is_wildcard() {
            Atom::wildcard(None)
        } else {
            Atom::organic(element, aromatic)
        };
        Ok(self.push_atom(atom, prev))
    }

    fn number(&mut self) -> Option<u32> {
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.pos += 1;
        }
        if self.pos == start {
            return None;
        }
        std::str::from_utf8(&self.src[start..self.pos]).ok()?.parse().ok()
    }

    fn bracket_atom(&mut self) -> Result<Atom, SmilesError> {
        let open = self.pos;
        self.pos += 1;
        let isotope = match self.number() {
            Some(n) if n <= u16::MAX as u32 => Some(n as u16),
            Some(_) => return Err(self.unexpected(open + 1)),
            None => None,
        };

        let sym_start = self.pos;
        let (element, aromatic) = self.bracket_symbol()?;
        if element.is_wildcard() && !self.opts.allow_wildcard {
            return Err(SmilesError::WildcardNotAllowed { offset: sym_start });
        }

        let mut chirality = None;
        if self.peek() == Some(b'@') {
            self.pos += 1;
            chirality = Some(Chirality::CounterClockwise);
            if self.peek() == Some(b'@') {
                self.pos += 1;
                chirality = Some(Chirality::Clockwise);
            }
            let rest = &self.src[self.pos..];
            if [b"TH", b"AL", b"SP", b"TB", b"OH"].iter().any(|p| rest.starts_with(*p)) {
                return Err(SmilesError::Unsupported {
                    offset: self.pos,
                    what: "non-tetrahedral chirality",
                });
            }
        }

        let mut h_count = 0u8;
        if self.peek() == Some(b'H') {
            self.pos += 1;
            h_count = match self.number() {
                Some(n) if n <= 9 => n as u8,
                Some(_) => return Err(self.unexpected(self.pos - 1)),
                None => 1,
            };
        }

        let charge_start = self.pos;
        let mut charge: i32 = 0;
        if let Some(sign @ (b'+' | b'-')) = self.peek() {
            let unit = if sign == b'+' { 1 } else { -1 };
            self.pos += 1;
            if let Some(n) = self.number() {
                charge = unit * n as i32;
            } else {
                charge = unit;
                while self.peek() == Some(sign) {
                    self.pos += 1;
                    charge += unit;
                }
            }
        }
        if !(-4..=4).contains(&charge) {
            return Err(SmilesError::InvalidCharge { offset: charge_start });
        }

        if self.peek() == Some(b':') {
            // atom class: accepted, not stored
            self.pos += 1;
            if self.number().is_none() {
                return Err(self.unexpected(self.pos));
            }
        }
        match self.peek() {
            Some(b']') => self.pos += 1,
            Some(_) => return Err(self.unexpected(self.pos)),
            None => return Err(SmilesError::UnexpectedCharacter { offset: open, ch: '[' }),
        }

        Ok(Atom {
            element,
            aromatic,
            charge: charge as i8,
            h_count,
            isotope,
            stereo: chirality.map(|chirality| Stereo {
                chirality,
                neighbors: Vec::new(),
            }),
            bracket: true,
        })
    }

    fn bracket_symbol(&mut self) -> Result<(Element, bool), SmilesError> {
        let start = self.pos;
        let Some(c) = self.peek() else {
            return Err(SmilesError::UnknownElement { offset: start });
        };
        if c == b'*' {
            self.pos += 1;
            return Ok((Element::WILDCARD, false));
        }
        if c.is_ascii_lowercase() {
            // aromatic: two-letter forms first
            for (sym, element) in [("se", 34u8), ("as", 33), ("te", 52)] {
                if self.src[start..].starts_with(sym.as_bytes()) {
                    self.pos += 2;
                    return Ok((Element::from_atomic_number(element).unwrap(), true));
                }
            }
            let element = match c {
                b'b' => Element::B,
                b'c' => Element::C,
                b'n' => Element::N,
                b'o' => Element::O,
                b'p' => Element::P,
                b's' => Element::S,
                _ => return Err(SmilesError::UnknownElement { offset: start }),
            };
            self.pos += 1;
            return Ok((element, true));
        }
        if !c.is_ascii_uppercase() {
            return Err(SmilesError::UnknownElement { offset: start });
        }
        // Prefer the two-letter symbol when it exists ("Cl" over "C" + "l").
        if let Some(&next) = self.src.get(start + 1) {
            if next.is_ascii_lowercase() {
                let sym = std::str::from_utf8(&self.src[start..start + 2]).unwrap();
                if let Some(e) = Element::from_symbol(sym) {
                    self.pos += 2;
                    return Ok((e, false));
                }
            }
        }
        let sym = std::str::from_utf8(&self.src[start..start + 1]).unwrap();
        match Element::from_symbol(sym) {
            Some(e) => {
                self.pos += 1;
                Ok((e, false))
            }
            None => Err(SmilesError::UnknownElement { offset: start }),
        }
    }
}
