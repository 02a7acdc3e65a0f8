use std::collections::BTreeMap;

use thiserror::Error;

use super::{Atom, Bond, BondOrder, Element, MolecularGraph};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SmilesError {
    #[error("empty SMILES string")]
    Empty,
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unclosed ring bond {label} (opened at byte {offset})")]
    UnclosedRing { label: u32, offset: usize },
    #[error("unsupported element '{symbol}' at byte {offset}")]
    UnsupportedElement { symbol: String, offset: usize },
    #[error("unsupported SMILES feature ({feature}) at byte {offset}")]
    UnsupportedFeature {
        feature: &'static str,
        offset: usize,
    },
    #[error("disconnected input: '.' at byte {offset} separates fragments")]
    Disconnected { offset: usize },
}

fn syntax(offset: usize, message: impl Into<String>) -> SmilesError {
    SmilesError::Syntax {
        offset,
        message: message.into(),
    }
}

struct RingOpen {
    atom: usize,
    order: Option<BondOrder>,
    offset: usize,
}

struct Parser<'a> {
    text: &'a [u8],
    pos: usize,
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    prev: Option<usize>,
    branches: Vec<(usize, usize)>,
    pending: Option<(BondOrder, usize)>,
    rings: BTreeMap<u32, RingOpen>,
}

/// Parses the supported SMILES subset into a heavy-atom graph.
///
/// Atoms are indexed in order of first appearance in the text.
pub fn parse_smiles(text: &str) -> Result<MolecularGraph, SmilesError> {
    if text.trim().is_empty() {
        return Err(SmilesError::Empty);
    }
    let mut parser = Parser {
        text: text.as_bytes(),
        pos: 0,
        atoms: Vec::new(),
        bonds: Vec::new(),
        prev: None,
        branches: Vec::new(),
        pending: None,
        rings: BTreeMap::new(),
    };
    parser.run()?;
    Ok(MolecularGraph {
        atoms: parser.atoms,
        bonds: parser.bonds,
    })
}

impl Parser<'_> {
    fn peek(&self) -> Option<u8> {
        self.text.get(self.pos).copied()
    }

    fn run(&mut self) -> Result<(), SmilesError> {
        while let Some(c) = self.peek() {
            let offset = self.pos;
            match c {
                b'(' => {
                    let Some(prev) = self.prev else {
                        return Err(syntax(offset, "branch without a preceding atom"));
                    };
                    if self.pending.is_some() {
                        return Err(syntax(offset, "bond symbol before '('"));
                    }
                    self.branches.push((prev, offset));
                    self.pos += 1;
                }
                b')' => {
                    let Some((atom, _)) = self.branches.pop() else {
                        return Err(syntax(offset, "unmatched ')'"));
                    };
                    if self.pending.is_some() {
                        return Err(syntax(offset, "dangling bond before ')'"));
                    }
                    self.prev = Some(atom);
                    self.pos += 1;
                }
                b'-' | b'=' | b'#' | b':' => {
                    if self.pending.is_some() {
                        return Err(syntax(offset, "two consecutive bond symbols"));
                    }
                    if self.prev.is_none() {
                        return Err(syntax(offset, "bond symbol without a preceding atom"));
                    }
                    let order = match c {
                        b'-' => BondOrder::Single,
                        b'=' => BondOrder::Double,
                        b'#' => BondOrder::Triple,
                        _ => BondOrder::Aromatic,
                    };
                    self.pending = Some((order, offset));
                    self.pos += 1;
                }
                b'/' | b'\\' => {
                    return Err(SmilesError::UnsupportedFeature {
                        feature: "directional bond",
                        offset,
                    })
                }
                b'$' => {
                    return Err(SmilesError::UnsupportedFeature {
                        feature: "quadruple bond",
                        offset,
                    })
                }
                b'.' => return Err(SmilesError::Disconnected { offset }),
                b'0'..=b'9' | b'%' => self.ring_bond()?,
                b'[' => {
                    let atom = self.bracket_atom()?;
                    self.add_atom(atom, offset)?;
                }
                _ => {
                    let atom = self.organic_atom()?;
                    self.add_atom(atom, offset)?;
                }
            }
        }
        if let Some((_, offset)) = self.pending {
            return Err(syntax(offset, "bond symbol at end of input"));
        }
        if let Some((_, offset)) = self.branches.last() {
            return Err(syntax(*offset, "unclosed branch"));
        }
        if let Some((&label, open)) = self.rings.iter().next() {
            return Err(SmilesError::UnclosedRing {
                label,
                offset: open.offset,
            });
        }
        if self.atoms.is_empty() {
            return Err(SmilesError::Empty);
        }
        Ok(())
    }

    fn add_atom(&mut self, mut atom: Atom, offset: usize) -> Result<(), SmilesError> {
        let idx = self.atoms.len();
        atom.index = idx;
        self.atoms.push(atom);
        if let Some(prev) = self.prev {
            let order = match self.pending.take() {
                Some((order, _)) => order,
                None => self.default_order(prev, idx),
            };
            self.push_bond(prev, idx, order, offset)?;
        } else if self.pending.is_some() {
            return Err(syntax(offset, "bond symbol without a preceding atom"));
        }
        self.prev = Some(idx);
        Ok(())
    }

    fn default_order(&self, a: usize, b: usize) -> BondOrder {
        if self.atoms[a].aromatic && self.atoms[b].aromatic {
            BondOrder::Aromatic
        } else {
            BondOrder::Single
        }
    }

    fn push_bond(
        &mut self,
        a: usize,
        b: usize,
        order: BondOrder,
        offset: usize,
    ) -> Result<(), SmilesError> {
        if a == b {
            return Err(syntax(offset, "atom bonded to itself"));
        }
        if self.bonds.iter().any(|x| x.contains(a) && x.contains(b)) {
            return Err(syntax(offset, "duplicate bond between the same atoms"));
        }
        self.bonds.push(Bond {
            endpoints: (a, b),
            order,
        });
        Ok(())
    }

    fn ring_bond(&mut self) -> Result<(), SmilesError> {
        let offset = self.pos;
        let Some(prev) = self.prev else {
            return Err(syntax(offset, "ring bond without a preceding atom"));
        };
        let label = if self.peek() == Some(b'%') {
            let digits = self.text.get(self.pos + 1..self.pos + 3);
            match digits {
                Some(d) if d.iter().all(u8::is_ascii_digit) => {
                    self.pos += 3;
                    u32::from(d[0] - b'0') * 10 + u32::from(d[1] - b'0')
                }
                _ => return Err(syntax(offset, "'%' must be followed by two digits")),
            }
        } else {
            let d = self.text[self.pos];
            self.pos += 1;
            u32::from(d - b'0')
        };
        let here = self.pending.take().map(|(o, _)| o);
        match self.rings.remove(&label) {
            Some(open) => {
                let order = match (open.order, here) {
                    (Some(x), Some(y)) if x != y => {
                        return Err(syntax(offset, "conflicting ring-closure bond symbols"))
                    }
                    (Some(x), _) | (None, Some(x)) => x,
                    (None, None) => self.default_order(open.atom, prev),
                };
                self.push_bond(open.atom, prev, order, offset)?;
            }
            None => {
                self.rings.insert(
                    label,
                    RingOpen {
                        atom: prev,
                        order: here,
                        offset,
                    },
                );
            }
        }
        Ok(())
    }

    fn organic_atom(&mut self) -> Result<Atom, SmilesError> {
        let offset = self.pos;
        let c = self.text[self.pos];
        let next = self.text.get(self.pos + 1).copied();
        let (element, aromatic, len) = match (c, next) {
            (b'C', Some(b'l')) => (Element::Cl, false, 2),
            (b'B', Some(b'r')) => (Element::Br, false, 2),
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
                return Err(SmilesError::UnsupportedElement {
                    symbol: "*".into(),
                    offset,
                })
            }
            (c, _) if c.is_ascii_uppercase() => {
                let mut end = self.pos + 1;
                if next.is_some_and(|n| n.is_ascii_lowercase()) {
                    end += 1;
                }
                let symbol = String::from_utf8_lossy(&self.text[self.pos..end]).into_owned();
                return Err(SmilesError::UnsupportedElement { symbol, offset });
            }
            _ => {
                let ch = std::str::from_utf8(&self.text[self.pos..])
                    .ok()
                    .and_then(|s| s.chars().next())
                    .unwrap_or('?');
                return Err(syntax(offset, format!("unexpected character '{ch}'")));
            }
        };
        self.pos += len;
        Ok(Atom {
            element,
            aromatic,
            formal_charge: 0,
            index: 0,
        })
    }

    fn bracket_atom(&mut self) -> Result<Atom, SmilesError> {
        let open = self.pos;
        self.pos += 1;
        if self.peek().is_some_and(|c| c.is_ascii_digit()) {
            return Err(SmilesError::UnsupportedFeature {
                feature: "isotope",
                offset: self.pos,
            });
        }
        let sym_start = self.pos;
        let first = self
            .peek()
            .ok_or_else(|| syntax(open, "unterminated bracket atom"))?;
        let (element, aromatic) = if first.is_ascii_lowercase() {
            self.pos += 1;
            let symbol = (first as char).to_ascii_uppercase().to_string();
            match Element::from_symbol(&symbol) {
                Some(e) if e.can_be_aromatic() => (e, true),
                _ => {
                    return Err(SmilesError::UnsupportedElement {
                        symbol: (first as char).to_string(),
                        offset: sym_start,
                    })
                }
            }
        } else if first.is_ascii_uppercase() {
            self.pos += 1;
            // Prefer a two-letter symbol, but "[CH3]" is C + H-count, not "Ch".
            let mut symbol = (first as char).to_string();
            if let Some(n) = self.peek().filter(u8::is_ascii_lowercase) {
                let two = format!("{}{}", first as char, n as char);
                if Element::from_symbol(&two).is_some() || !matches!(n, b'h') {
                    symbol = two;
                    self.pos += 1;
                }
            }
            match Element::from_symbol(&symbol) {
                Some(e) => (e, false),
                None => {
                    return Err(SmilesError::UnsupportedElement {
                        symbol,
                        offset: sym_start,
                    })
                }
            }
        } else {
            return Err(syntax(sym_start, "expected element symbol in bracket atom"));
        };
        if self.peek() == Some(b'@') {
            return Err(SmilesError::UnsupportedFeature {
                feature: "stereochemistry",
                offset: self.pos,
            });
        }
        // Hydrogen count is accepted and dropped: hydrogens stay implicit.
        if self.peek() == Some(b'H') {
            self.pos += 1;
            while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                self.pos += 1;
            }
        }
        let mut charge: i32 = 0;
        if let Some(sign @ (b'+' | b'-')) = self.peek() {
            let unit = if sign == b'+' { 1 } else { -1 };
            self.pos += 1;
            let mut magnitude = 1;
            if self.peek().is_some_and(|c| c.is_ascii_digit()) {
                let start = self.pos;
                while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                    self.pos += 1;
                }
                let digits = std::str::from_utf8(&self.text[start..self.pos]).unwrap_or("0");
                magnitude = digits
                    .parse::<i32>()
                    .map_err(|_| syntax(start, "invalid charge"))?;
            } else {
                while self.peek() == Some(sign) {
                    self.pos += 1;
                    magnitude += 1;
                }
            }
            charge = unit * magnitude;
            if !(-8..=8).contains(&charge) {
                return Err(syntax(open, "formal charge out of range"));
            }
        }
        match self.peek() {
            Some(b']') => self.pos += 1,
            Some(b':') => {
                return Err(SmilesError::UnsupportedFeature {
                    feature: "atom class",
                    offset: self.pos,
                })
            }
            Some(b'@') => {
                return Err(SmilesError::UnsupportedFeature {
                    feature: "stereochemistry",
                    offset: self.pos,
                })
            }
            Some(_) => return Err(syntax(self.pos, "unexpected character in bracket atom")),
            None => return Err(syntax(open, "unterminated bracket atom")),
        }
        Ok(Atom {
            element,
            aromatic,
            formal_charge: charge as i8,
            index: 0,
        })
    }
}

fn atom_text(atom: &Atom) -> String {
    let symbol = if atom.aromatic {
        atom.element.symbol().to_ascii_lowercase()
    } else {
        atom.element.symbol().to_string()
    };
    if atom.formal_charge == 0 && atom.element.is_organic_subset() {
        return symbol;
    }
    let charge = match atom.formal_charge {
        0 => String::new(),
        1 => "+".into(),
        -1 => "-".into(),
        c if c > 0 => format!("+{c}"),
        c => format!("-{}", -c),
    };
    format!("[{symbol}{charge}]")
}

fn bond_text(order: BondOrder, a: &Atom, b: &Atom) -> &'static str {
    let both_aromatic = a.aromatic && b.aromatic;
    match order {
        BondOrder::Single if both_aromatic => "-",
        BondOrder::Single => "",
        BondOrder::Aromatic if both_aromatic => "",
        BondOrder::Aromatic => ":",
        BondOrder::Double => "=",
        BondOrder::Triple => "#",
    }
}

/// Writes a SMILES string for `g` by depth-first traversal from atom 0.
///
/// The output is deterministic for a given atom numbering and parses back
/// to an isomorphic graph.
pub fn to_smiles(g: &MolecularGraph) -> String {
    let n = g.atoms.len();
    if n == 0 {
        return String::new();
    }
    let adj = g.adjacency();

    // First pass: DFS tree and ring-closure (back) edges.
    let mut order = vec![usize::MAX; n];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut closures: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    let mut tree_bond = vec![false; g.bonds.len()];
    let mut counter = 0;
    let mut stack = vec![(0usize, usize::MAX)];
    while let Some((v, parent_bond)) = stack.pop() {
        if order[v] != usize::MAX {
            continue;
        }
        order[v] = counter;
        counter += 1;
        if parent_bond != usize::MAX {
            tree_bond[parent_bond] = true;
            children[g.bonds[parent_bond].other(v)].push(v);
        }
        for &(w, b) in adj[v].iter().rev() {
            if order[w] == usize::MAX {
                stack.push((w, b));
            }
        }
    }
    for (i, bond) in g.bonds.iter().enumerate() {
        if !tree_bond[i] {
            let (a, b) = bond.endpoints;
            closures[a].push((b, i));
            closures[b].push((a, i));
        }
    }

    let mut out = String::new();
    let mut labels: BTreeMap<usize, u32> = BTreeMap::new();
    let mut free: Vec<u32> = Vec::new();
    let mut next_label = 1u32;
    let mut write_stack: Vec<Frame> = vec![Frame::Atom(0, None)];
    enum Frame {
        Atom(usize, Option<usize>),
        Text(&'static str),
    }
    while let Some(frame) = write_stack.pop() {
        let (v, via) = match frame {
            Frame::Text(t) => {
                out.push_str(t);
                continue;
            }
            Frame::Atom(v, via) => (v, via),
        };
        if let Some(b) = via {
            let bond = &g.bonds[b];
            out.push_str(bond_text(bond.order, &g.atoms[bond.other(v)], &g.atoms[v]));
        }
        out.push_str(&atom_text(&g.atoms[v]));
        let mut ring_marks: Vec<(usize, usize)> = closures[v].clone();
        ring_marks.sort_by_key(|&(w, _)| order[w]);
        for (w, b) in ring_marks {
            let text = |label: u32| {
                if label < 10 {
                    label.to_string()
                } else {
                    format!("%{label:02}")
                }
            };
            if order[w] < order[v] {
                let label = labels.remove(&b).expect("ring opened before closing");
                let bond = &g.bonds[b];
                out.push_str(bond_text(bond.order, &g.atoms[w], &g.atoms[v]));
                out.push_str(&text(label));
                free.push(label);
                free.sort_unstable_by(|a, b| b.cmp(a));
            } else {
                let label = free.pop().unwrap_or_else(|| {
                    let l = next_label;
                    next_label += 1;
                    l
                });
                labels.insert(b, label);
                out.push_str(&text(label));
            }
        }
        let kids = &children[v];
        let bond_to = |c: usize| adj[v].iter().find(|&&(w, _)| w == c).map(|&(_, b)| b);
        // Pushed in reverse so that output order follows `kids`.
        for (i, &c) in kids.iter().enumerate().rev() {
            let last = i + 1 == kids.len();
            if !last {
                write_stack.push(Frame::Text(")"));
            }
            write_stack.push(Frame::Atom(c, bond_to(c)));
            if !last {
                write_stack.push(Frame::Text("("));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::graphs_isomorphic;

    #[test]
    fn ethanol_chain() {
        let g = parse_smiles("CCO").unwrap();
        assert_eq!(g.atoms.len(), 3);
        assert_eq!(
            g.atoms.iter().map(|a| a.element).collect::<Vec<_>>(),
            vec![Element::C, Element::C, Element::O]
        );
        assert_eq!(g.bonds.len(), 2);
        assert!(g.bonds.iter().all(|b| b.order == BondOrder::Single));
        assert_eq!(g.bonds[0].endpoints, (0, 1));
        assert_eq!(g.bonds[1].endpoints, (1, 2));
    }

    #[test]
    fn benzene_ring_closure() {
        let g = parse_smiles("c1ccccc1").unwrap();
        assert_eq!(g.atoms.len(), 6);
        assert!(g
            .atoms
            .iter()
            .all(|a| a.aromatic && a.element == Element::C));
        assert_eq!(g.bonds.len(), 6);
        assert!(g.bonds.iter().all(|b| b.order == BondOrder::Aromatic));
        let adj = g.adjacency();
        assert!(adj.iter().all(|n| n.len() == 2));
        assert!(g.is_connected());
    }

    #[test]
    fn unclosed_ring() {
        assert_eq!(
            parse_smiles("C1CC"),
            Err(SmilesError::UnclosedRing {
                label: 1,
                offset: 1
            })
        );
    }

    #[test]
    fn rejects_unsupported_input() {
        assert!(matches!(
            parse_smiles("CC.O"),
            Err(SmilesError::Disconnected { offset: 2 })
        ));
        assert!(matches!(
            parse_smiles("C[Fe]C"),
            Err(SmilesError::UnsupportedElement { ref symbol, offset: 2 }) if symbol == "Fe"
        ));
        assert!(matches!(
            parse_smiles("C[C@H](O)N"),
            Err(SmilesError::UnsupportedFeature {
                feature: "stereochemistry",
                ..
            })
        ));
        assert!(matches!(
            parse_smiles("[13C]"),
            Err(SmilesError::UnsupportedFeature {
                feature: "isotope",
                ..
            })
        ));
        assert!(matches!(
            parse_smiles("F/C=C/F"),
            Err(SmilesError::UnsupportedFeature { .. })
        ));
        assert!(matches!(
            parse_smiles("C(C"),
            Err(SmilesError::Syntax { offset: 1, .. })
        ));
        assert!(matches!(
            parse_smiles("CC)"),
            Err(SmilesError::Syntax { offset: 2, .. })
        ));
        assert!(matches!(
            parse_smiles("C=="),
            Err(SmilesError::Syntax { .. })
        ));
        assert!(matches!(
            parse_smiles("C1C1"),
            Err(SmilesError::Syntax { .. })
        ));
        assert_eq!(parse_smiles(""), Err(SmilesError::Empty));
    }

    #[test]
    fn bracket_atoms_and_bonds() {
        let g = parse_smiles("C[N+](C)(C)C").unwrap();
        assert_eq!(g.atoms[1].formal_charge, 1);
        assert_eq!(g.adjacency()[1].len(), 4);
        let g = parse_smiles("[O-]C(=O)C#N").unwrap();
        assert_eq!(g.atoms[0].formal_charge, -1);
        assert_eq!(g.bonds[1].order, BondOrder::Double);
        assert_eq!(g.bonds[3].order, BondOrder::Triple);
        let g = parse_smiles("c1cc[nH]c1").unwrap();
        assert_eq!(g.atoms.len(), 5);
        assert!(g.atoms[3].aromatic);
        let g = parse_smiles("[CH3][CH2]Cl").unwrap();
        assert_eq!(g.atoms[0].element, Element::C);
        assert_eq!(g.atoms[2].element, Element::Cl);
        let g = parse_smiles("C%12CC%12").unwrap();
        assert_eq!(g.bonds.len(), 3);
        let g = parse_smiles("[Fe+2]".replace("Fe", "C").as_str()).unwrap();
        assert_eq!(g.atoms[0].formal_charge, 2);
    }

    #[test]
    fn writer_round_trips() {
        for s in [
            "CCO",
            "CC(C)(C)C",
            "c1ccc2ccccc2c1",
            "C1CCC2(CC1)CC2",
            "C[N+](C)(C)C",
            "[O-]C(=O)c1ccccc1",
            "c1ccc(-c2ccccc2)cc1",
            "C1CC2CCC1C2",
        ] {
            let g = parse_smiles(s).unwrap();
            let text = to_smiles(&g);
            let back = parse_smiles(&text).unwrap_or_else(|e| panic!("{s} -> {text}: {e}"));
            assert!(graphs_isomorphic(&g, &back), "{s} -> {text}");
        }
    }
}
