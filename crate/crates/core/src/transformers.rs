//! Transformer expressions and their concrete relational semantics.
//!
//! Expressions are kept in a normal form: `Concat` is flat and never holds
//! `Identity`, `Union` is flat, sorted and deduplicated, and `Star(Identity)`
//! collapses to `Identity`. Derived `PartialEq` is therefore equality modulo
//! associativity of concatenation and associativity, commutativity and
//! idempotence of union.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransformerError {
    #[error("no concrete relation bound to `{0}`")]
    UnboundAtomic(String),
    #[error("relation does not fit the state space: {0}")]
    StateSpaceMismatch(String),
    #[error("star did not reach a fixpoint within {0} iterations")]
    StarDiverged(usize),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("expression syntax error at offset {offset}: {message}")]
pub struct ExprParseError {
    pub offset: usize,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TransformerExpr {
    /// Opaque transformer of one original outcome, tagged `atom.result`.
    Atomic(String),
    Identity,
    Concat(Vec<TransformerExpr>),
    Union(Vec<TransformerExpr>),
    Star(Box<TransformerExpr>),
}

pub fn outcome_tag(atom: &str, result: &str) -> String {
    format!("{atom}.{result}")
}

impl TransformerExpr {
    pub fn atomic(tag: impl Into<String>) -> Self {
        TransformerExpr::Atomic(tag.into())
    }

    pub fn concat<I: IntoIterator<Item = TransformerExpr>>(parts: I) -> Self {
        let mut flat = Vec::new();
        for p in parts {
            match p.normalize() {
                TransformerExpr::Identity => {}
                TransformerExpr::Concat(inner) => flat.extend(inner),
                other => flat.push(other),
            }
        }
        match flat.len() {
            0 => TransformerExpr::Identity,
            1 => flat.pop().unwrap(),
            _ => TransformerExpr::Concat(flat),
        }
    }

    pub fn union<I: IntoIterator<Item = TransformerExpr>>(parts: I) -> Self {
        let mut set = BTreeSet::new();
        for p in parts {
            match p.normalize() {
                TransformerExpr::Union(inner) => set.extend(inner),
                other => {
                    set.insert(other);
                }
            }
        }
        let mut v: Vec<_> = set.into_iter().collect();
        match v.len() {
            0 => panic!("union of zero expressions"),
            1 => v.pop().unwrap(),
            _ => TransformerExpr::Union(v),
        }
    }

    pub fn star(inner: TransformerExpr) -> Self {
        match inner.normalize() {
            TransformerExpr::Identity => TransformerExpr::Identity,
            other => TransformerExpr::Star(Box::new(other)),
        }
    }

    /// `self` followed by `next`.
    pub fn then(&self, next: &TransformerExpr) -> Self {
        Self::concat([self.clone(), next.clone()])
    }

    pub fn normalize(self) -> Self {
        match self {
            TransformerExpr::Concat(parts) => {
                if parts.iter().all(|p| p.is_normal()) && is_flat_concat(&parts) {
                    TransformerExpr::Concat(parts)
                } else {
                    Self::concat(parts)
                }
            }
            TransformerExpr::Union(parts) => {
                if parts.iter().all(|p| p.is_normal()) && is_sorted_union(&parts) {
                    TransformerExpr::Union(parts)
                } else {
                    Self::union(parts)
                }
            }
            TransformerExpr::Star(inner) => Self::star(*inner),
            other => other,
        }
    }

    pub fn is_normal(&self) -> bool {
        match self {
            TransformerExpr::Atomic(_) | TransformerExpr::Identity => true,
            TransformerExpr::Concat(parts) => {
                is_flat_concat(parts) && parts.iter().all(|p| p.is_normal())
            }
            TransformerExpr::Union(parts) => {
                is_sorted_union(parts) && parts.iter().all(|p| p.is_normal())
            }
            TransformerExpr::Star(inner) => {
                **inner != TransformerExpr::Identity && inner.is_normal()
            }
        }
    }

    /// Tags of all atomic transformers occurring in the expression.
    pub fn atoms(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_atoms(&mut out);
        out
    }

    fn collect_atoms(&self, out: &mut BTreeSet<String>) {
        match self {
            TransformerExpr::Atomic(t) => {
                out.insert(t.clone());
            }
            TransformerExpr::Identity => {}
            TransformerExpr::Concat(ps) | TransformerExpr::Union(ps) => {
                ps.iter().for_each(|p| p.collect_atoms(out))
            }
            TransformerExpr::Star(e) => e.collect_atoms(out),
        }
    }

    pub fn size(&self) -> usize {
        match self {
            TransformerExpr::Atomic(_) | TransformerExpr::Identity => 1,
            TransformerExpr::Concat(ps) | TransformerExpr::Union(ps) => {
                1 + ps.iter().map(|p| p.size()).sum::<usize>()
            }
            TransformerExpr::Star(e) => 1 + e.size(),
        }
    }
}

fn is_flat_concat(parts: &[TransformerExpr]) -> bool {
    parts.len() >= 2
        && parts
            .iter()
            .all(|p| !matches!(p, TransformerExpr::Concat(_) | TransformerExpr::Identity))
}

fn is_sorted_union(parts: &[TransformerExpr]) -> bool {
    parts.len() >= 2
        && parts.windows(2).all(|w| w[0] < w[1])
        && parts.iter().all(|p| !matches!(p, TransformerExpr::Union(_)))
}

impl fmt::Display for TransformerExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TransformerExpr::Atomic(t) => f.write_str(t),
            TransformerExpr::Identity => f.write_str("ε"),
            TransformerExpr::Concat(parts) => {
                for (i, p) in parts.iter().enumerate() {
                    if i > 0 {
                        f.write_str("·")?;
                    }
                    if matches!(p, TransformerExpr::Union(_)) {
                        write!(f, "({p})")?;
                    } else {
                        write!(f, "{p}")?;
                    }
                }
                Ok(())
            }
            TransformerExpr::Union(parts) => {
                for (i, p) in parts.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" ∪ ")?;
                    }
                    write!(f, "{p}")?;
                }
                Ok(())
            }
            TransformerExpr::Star(inner) => match **inner {
                TransformerExpr::Atomic(_) => write!(f, "{inner}*"),
                _ => write!(f, "({inner})*"),
            },
        }
    }
}

/// Characters that cannot appear inside atom ids or result names.
pub const RESERVED_CHARS: &[char] = &['.', '·', '(', ')', '*', '∪', ','];

fn is_ident_char(c: char) -> bool {
    !c.is_whitespace() && !RESERVED_CHARS.contains(&c)
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Dot,
    LParen,
    RParen,
    Star,
    Union,
}

fn tokenize(s: &str) -> Result<Vec<(usize, Tok)>, ExprParseError> {
    let mut out = Vec::new();
    let mut it = s.char_indices().peekable();
    while let Some(&(i, c)) = it.peek() {
        if c.is_whitespace() {
            it.next();
            continue;
        }
        let tok = match c {
            '.' | '·' => Tok::Dot,
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            '*' => Tok::Star,
            '∪' => Tok::Union,
            ',' => {
                return Err(ExprParseError {
                    offset: i,
                    message: "unexpected ','".into(),
                })
            }
            _ => {
                let mut id = String::new();
                while let Some(&(_, c)) = it.peek() {
                    if !is_ident_char(c) {
                        break;
                    }
                    id.push(c);
                    it.next();
                }
                out.push((i, Tok::Ident(id)));
                continue;
            }
        };
        it.next();
        out.push((i, tok));
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn peek_at(&self, k: usize) -> Option<&Tok> {
        self.toks.get(self.pos + k).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map(|(o, _)| *o).unwrap_or(self.end)
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, ExprParseError> {
        Err(ExprParseError {
            offset: self.offset(),
            message: message.into(),
        })
    }

    fn is_union_here(&self) -> bool {
        match self.peek() {
            Some(Tok::Union) => true,
            Some(Tok::Ident(s)) if s == "U" => self.peek_at(1) != Some(&Tok::Dot),
            _ => false,
        }
    }

    fn expr(&mut self) -> Result<TransformerExpr, ExprParseError> {
        let mut terms = vec![self.term()?];
        while self.is_union_here() {
            self.pos += 1;
            terms.push(self.term()?);
        }
        Ok(TransformerExpr::union(terms))
    }

    fn starts_factor(&self) -> bool {
        match self.peek() {
            Some(Tok::LParen) => true,
            Some(Tok::Ident(_)) => !self.is_union_here(),
            _ => false,
        }
    }

    fn term(&mut self) -> Result<TransformerExpr, ExprParseError> {
        let mut factors = vec![self.factor()?];
        loop {
            if self.peek() == Some(&Tok::Dot) {
                self.pos += 1;
                factors.push(self.factor()?);
            } else if self.starts_factor() {
                factors.push(self.factor()?);
            } else {
                break;
            }
        }
        Ok(TransformerExpr::concat(factors))
    }

    fn factor(&mut self) -> Result<TransformerExpr, ExprParseError> {
        let mut base = match self.peek().cloned() {
            Some(Tok::LParen) => {
                self.pos += 1;
                let e = self.expr()?;
                if self.peek() != Some(&Tok::RParen) {
                    return self.err("expected ')'");
                }
                self.pos += 1;
                e
            }
            Some(Tok::Ident(id)) => {
                self.pos += 1;
                if self.peek() == Some(&Tok::Dot) {
                    match self.peek_at(1).cloned() {
                        Some(Tok::Ident(res)) => {
                            self.pos += 2;
                            TransformerExpr::Atomic(outcome_tag(&id, &res))
                        }
                        _ => {
                            self.pos += 1;
                            return self.err("expected result name after '.'");
                        }
                    }
                } else if id == "ε" || id == "eps" {
                    TransformerExpr::Identity
                } else {
                    self.pos -= 1;
                    return self.err(format!("expected `atom.result`, found `{id}`"));
                }
            }
            _ => return self.err("expected an atom, 'ε' or '('"),
        };
        while self.peek() == Some(&Tok::Star) {
            self.pos += 1;
            base = TransformerExpr::star(base);
        }
        Ok(base)
    }
}

impl FromStr for TransformerExpr {
    type Err = ExprParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let toks = tokenize(s)?;
        let mut p = Parser {
            toks,
            pos: 0,
            end: s.len(),
        };
        let e = p.expr()?;
        if p.pos != p.toks.len() {
            return p.err("trailing input");
        }
        Ok(e)
    }
}

/// Finite per-agent state sets, indexed by agent position.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StateSpace {
    names: Vec<Vec<String>>,
}

impl StateSpace {
    pub fn new(names: Vec<Vec<String>>) -> Self {
        assert!(names.iter().all(|n| !n.is_empty()), "empty state set");
        StateSpace { names }
    }

    pub fn uniform(agents: usize, size: usize) -> Self {
        StateSpace::new(vec![(0..size).map(|i| i.to_string()).collect(); agents])
    }

    pub fn agents(&self) -> usize {
        self.names.len()
    }

    pub fn size(&self, agent: usize) -> usize {
        self.names[agent].len()
    }

    pub fn names(&self, agent: usize) -> &[String] {
        &self.names[agent]
    }

    pub fn state_index(&self, agent: usize, name: &str) -> Option<u16> {
        self.names[agent]
            .iter()
            .position(|n| n == name)
            .map(|i| i as u16)
    }

    /// All assignments over `parties`, in lexicographic order.
    pub fn assignments(&self, parties: &[usize]) -> Vec<Vec<u16>> {
        let mut out = vec![Vec::with_capacity(parties.len())];
        for &p in parties {
            let mut next = Vec::with_capacity(out.len() * self.size(p));
            for a in &out {
                for s in 0..self.size(p) as u16 {
                    let mut b = a.clone();
                    b.push(s);
                    next.push(b);
                }
            }
            out = next;
        }
        out
    }

    pub fn local_size(&self, parties: &[usize]) -> usize {
        parties.iter().map(|&p| self.size(p)).product()
    }
}

pub type Assignment = Vec<u16>;

/// A relation over the joint states of a sorted party set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConcreteRelation {
    parties: Vec<usize>,
    pairs: BTreeSet<(Assignment, Assignment)>,
}

pub type Interp = BTreeMap<String, ConcreteRelation>;

impl ConcreteRelation {
    pub fn new(
        parties: Vec<usize>,
        pairs: impl IntoIterator<Item = (Assignment, Assignment)>,
    ) -> Self {
        debug_assert!(parties.windows(2).all(|w| w[0] < w[1]));
        ConcreteRelation {
            parties,
            pairs: pairs.into_iter().collect(),
        }
    }

    pub fn identity(parties: &[usize], space: &StateSpace) -> Self {
        let pairs = space
            .assignments(parties)
            .into_iter()
            .map(|a| (a.clone(), a));
        ConcreteRelation::new(parties.to_vec(), pairs)
    }

    pub fn empty(parties: &[usize]) -> Self {
        ConcreteRelation::new(parties.to_vec(), [])
    }

    pub fn parties(&self) -> &[usize] {
        &self.parties
    }

    pub fn pairs(&self) -> &BTreeSet<(Assignment, Assignment)> {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn check(&self, space: &StateSpace) -> Result<(), TransformerError> {
        for &p in &self.parties {
            if p >= space.agents() {
                return Err(TransformerError::StateSpaceMismatch(format!(
                    "agent {p} outside a space of {} agents",
                    space.agents()
                )));
            }
        }
        for (x, y) in &self.pairs {
            for v in [x, y] {
                if v.len() != self.parties.len() {
                    return Err(TransformerError::StateSpaceMismatch(format!(
                        "assignment of length {} over {} parties",
                        v.len(),
                        self.parties.len()
                    )));
                }
                for (i, &s) in v.iter().enumerate() {
                    if s as usize >= space.size(self.parties[i]) {
                        return Err(TransformerError::StateSpaceMismatch(format!(
                            "state {s} out of range for agent {}",
                            self.parties[i]
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn is_left_total(&self, space: &StateSpace) -> bool {
        let entries: BTreeSet<&Assignment> = self.pairs.iter().map(|(x, _)| x).collect();
        entries.len() == space.local_size(&self.parties)
    }

    /// Extends the relation to `to ⊇ parties`, leaving the extra agents unchanged.
    pub fn expand(&self, to: &[usize], space: &StateSpace) -> ConcreteRelation {
        if to == self.parties.as_slice() {
            return self.clone();
        }
        let pos: Vec<Option<usize>> = to
            .iter()
            .map(|a| self.parties.iter().position(|p| p == a))
            .collect();
        let extra: Vec<usize> = to
            .iter()
            .copied()
            .filter(|a| !self.parties.contains(a))
            .collect();
        assert_eq!(
            extra.len() + self.parties.len(),
            to.len(),
            "expand target must contain the party set"
        );
        let frames = space.assignments(&extra);
        let mut pairs = BTreeSet::new();
        for (x, y) in &self.pairs {
            for z in &frames {
                let mut xi = Vec::with_capacity(to.len());
                let mut yi = Vec::with_capacity(to.len());
                let mut k = 0;
                for p in &pos {
                    match p {
                        Some(i) => {
                            xi.push(x[*i]);
                            yi.push(y[*i]);
                        }
                        None => {
                            xi.push(z[k]);
                            yi.push(z[k]);
                            k += 1;
                        }
                    }
                }
                pairs.insert((xi, yi));
            }
        }
        ConcreteRelation {
            parties: to.to_vec(),
            pairs,
        }
    }

    /// Restricts a relation to `to ⊆ parties`. Only meaningful when agents
    /// outside `to` are left unchanged by every pair.
    pub fn restrict(&self, to: &[usize]) -> ConcreteRelation {
        let pos: Vec<usize> = to
            .iter()
            .map(|a| {
                self.parties
                    .iter()
                    .position(|p| p == a)
                    .expect("restrict target must be a subset")
            })
            .collect();
        let pairs = self
            .pairs
            .iter()
            .map(|(x, y)| {
                (
                    pos.iter().map(|&i| x[i]).collect(),
                    pos.iter().map(|&i| y[i]).collect(),
                )
            })
            .collect();
        ConcreteRelation {
            parties: to.to_vec(),
            pairs,
        }
    }

    pub fn global(&self, space: &StateSpace) -> ConcreteRelation {
        let all: Vec<usize> = (0..space.agents()).collect();
        self.expand(&all, space)
    }

    pub fn concat(
        &self,
        other: &ConcreteRelation,
        space: &StateSpace,
    ) -> Result<ConcreteRelation, TransformerError> {
        self.check(space)?;
        other.check(space)?;
        let joint = joint_parties(&self.parties, &other.parties);
        let a = self.expand(&joint, space);
        let b = other.expand(&joint, space);
        let mut by_entry: HashMap<&Assignment, Vec<&Assignment>> = HashMap::new();
        for (x, y) in &b.pairs {
            by_entry.entry(x).or_default().push(y);
        }
        let mut pairs = BTreeSet::new();
        for (x, y) in &a.pairs {
            if let Some(zs) = by_entry.get(y) {
                for z in zs {
                    pairs.insert((x.clone(), (*z).clone()));
                }
            }
        }
        Ok(ConcreteRelation {
            parties: joint,
            pairs,
        })
    }

    pub fn union(
        &self,
        other: &ConcreteRelation,
        space: &StateSpace,
    ) -> Result<ConcreteRelation, TransformerError> {
        self.check(space)?;
        other.check(space)?;
        let joint = joint_parties(&self.parties, &other.parties);
        let mut a = self.expand(&joint, space);
        a.pairs.extend(other.expand(&joint, space).pairs);
        Ok(a)
    }

    pub fn star(&self, space: &StateSpace) -> Result<ConcreteRelation, TransformerError> {
        self.check(space)?;
        let id = ConcreteRelation::identity(&self.parties, space);
        let n = space.local_size(&self.parties);
        let cap = n * n + 1;
        let mut r = id.clone();
        for _ in 0..cap {
            let next = id.union(&self.concat(&r, space)?, space)?;
            if next == r {
                return Ok(r);
            }
            r = next;
        }
        Err(TransformerError::StarDiverged(cap))
    }

    /// Equality after expanding both sides to their joint party set.
    pub fn equivalent(&self, other: &ConcreteRelation, space: &StateSpace) -> bool {
        let joint = joint_parties(&self.parties, &other.parties);
        self.expand(&joint, space) == other.expand(&joint, space)
    }

    pub fn render(&self, space: &StateSpace) -> String {
        let show = |v: &Assignment| {
            v.iter()
                .enumerate()
                .map(|(i, &s)| space.names(self.parties[i])[s as usize].clone())
                .collect::<Vec<_>>()
                .join(",")
        };
        self.pairs
            .iter()
            .map(|(x, y)| format!("({})->({})", show(x), show(y)))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

pub fn joint_parties(a: &[usize], b: &[usize]) -> Vec<usize> {
    let set: BTreeSet<usize> = a.iter().chain(b.iter()).copied().collect();
    set.into_iter().collect()
}

pub fn eval(
    e: &TransformerExpr,
    interp: &Interp,
    space: &StateSpace,
) -> Result<ConcreteRelation, TransformerError> {
    match e {
        TransformerExpr::Atomic(tag) => {
            let r = interp
                .get(tag)
                .ok_or_else(|| TransformerError::UnboundAtomic(tag.clone()))?;
            r.check(space)?;
            Ok(r.clone())
        }
        TransformerExpr::Identity => Ok(ConcreteRelation::identity(&[], space)),
        TransformerExpr::Concat(parts) => {
            let mut acc = ConcreteRelation::identity(&[], space);
            for p in parts {
                acc = acc.concat(&eval(p, interp, space)?, space)?;
            }
            Ok(acc)
        }
        TransformerExpr::Union(parts) => {
            let mut it = parts.iter();
            let mut acc = match it.next() {
                Some(p) => eval(p, interp, space)?,
                None => ConcreteRelation::empty(&[]),
            };
            for p in it {
                acc = acc.union(&eval(p, interp, space)?, space)?;
            }
            Ok(acc)
        }
        TransformerExpr::Star(inner) => eval(inner, interp, space)?.star(space),
    }
}

/// Denotational equality evidence: both expressions evaluate to equivalent
/// relations under every supplied interpretation.
pub fn expr_equal(
    a: &TransformerExpr,
    b: &TransformerExpr,
    cases: &[(&StateSpace, &Interp)],
) -> Result<bool, TransformerError> {
    for (space, interp) in cases {
        let ra = eval(a, interp, space)?;
        let rb = eval(b, interp, space)?;
        if !ra.equivalent(&rb, space) {
            return Ok(false);
        }
    }
    Ok(true)
}
