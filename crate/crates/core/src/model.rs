//! Negotiation diagrams: atoms, the transition function, validation,
//! the negotiation graph and determinism classification.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use petgraph::algo::{has_path_connecting, toposort};
use petgraph::graph::{DiGraph, NodeIndex};
use petgraph::visit::EdgeRef;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::transformers::{
    outcome_tag, ConcreteRelation, Interp, StateSpace, TransformerExpr, RESERVED_CHARS,
};

pub type AgentIdx = usize;
pub type AtomIdx = usize;

/// An outcome `(atom, result)` by dense index; only meaningful for the
/// negotiation it was taken from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Outcome {
    pub atom: AtomIdx,
    pub result: usize,
}

impl Outcome {
    pub fn new(atom: AtomIdx, result: usize) -> Self {
        Outcome { atom, result }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ResultDef {
    pub name: String,
    /// Targets per party, aligned with the owning atom's `parties`.
    pub next: Vec<BTreeSet<AtomIdx>>,
    pub delta: TransformerExpr,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Atom {
    pub id: String,
    /// Sorted agent indices.
    pub parties: Vec<AgentIdx>,
    pub results: Vec<ResultDef>,
}

impl Atom {
    pub fn party_pos(&self, agent: AgentIdx) -> Option<usize> {
        self.parties.binary_search(&agent).ok()
    }

    pub fn has_party(&self, agent: AgentIdx) -> bool {
        self.party_pos(agent).is_some()
    }

    pub fn result_pos(&self, name: &str) -> Option<usize> {
        self.results.iter().position(|r| r.name == name)
    }
}

/// An arc `(source, agent, result, target)` of the diagram.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Arc {
    pub source: AtomIdx,
    pub agent: AgentIdx,
    pub result: usize,
    pub target: AtomIdx,
}

/// Index-level description of a negotiation, checked by [`Negotiation::new`].
#[derive(Clone, Debug)]
pub struct NegotiationParts {
    pub agents: Vec<String>,
    pub atoms: Vec<Atom>,
    pub initial: AtomIdx,
    pub final_atom: AtomIdx,
    pub space: Option<StateSpace>,
    pub interp: Interp,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Negotiation {
    agents: Vec<String>,
    atoms: Vec<Atom>,
    initial: AtomIdx,
    final_atom: AtomIdx,
    space: Option<StateSpace>,
    interp: Interp,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Violation {
    #[error("the agent set is empty")]
    NoAgents,
    #[error("agent name `{0}` is empty or duplicated")]
    BadAgent(String),
    #[error("atom id `{0}` is duplicated")]
    DuplicateAtom(String),
    #[error("`{0}` is not a valid identifier")]
    BadIdentifier(String),
    #[error("atom {atom} has no parties")]
    NoParties { atom: String },
    #[error("atom {atom} names unknown or repeated party `{agent}`")]
    BadParty { atom: String, agent: String },
    #[error("atom {atom} has no results")]
    NoResults { atom: String },
    #[error("atom {atom} repeats result `{result}`")]
    DuplicateResult { atom: String, result: String },
    #[error("unknown atom `{0}` named as initial or final")]
    UnknownEndpoint(String),
    #[error("condition (1): {atom} is initial or final but not every agent is a party")]
    InitialOrFinalNotAllAgents { atom: String },
    #[error("condition (2): X({atom},{agent},{result}) is empty but {atom} is not final")]
    NonFinalEmptyTransition {
        atom: String,
        agent: String,
        result: String,
    },
    #[error("condition (2): X({atom},{agent},{result}) is nonempty at the final atom")]
    FinalNonEmptyTransition {
        atom: String,
        agent: String,
        result: String,
    },
    #[error("condition (3): {atom} is not on a path from the initial to the final atom")]
    MissingPath { atom: String },
    #[error("arc ({atom},{agent},{result},{target}) leads to an unknown atom")]
    DanglingTarget {
        atom: String,
        agent: String,
        result: String,
        target: String,
    },
    #[error("arc ({atom},{agent},{result},{target}) leads to an atom without party {agent}")]
    TargetLacksParty {
        atom: String,
        agent: String,
        result: String,
        target: String,
    },
    #[error("X({atom},{agent},{result}) is undefined")]
    MissingTransition {
        atom: String,
        agent: String,
        result: String,
    },
    #[error("result {atom}.{result} gives a transition for non-party `{agent}`")]
    TransitionForNonParty {
        atom: String,
        agent: String,
        result: String,
    },
    #[error("states missing for agent `{0}`")]
    MissingStates(String),
    #[error("relation `{tag}` is malformed: {detail}")]
    BadRelation { tag: String, detail: String },
    #[error("relation `{tag}` is not left-total")]
    NotLeftTotal { tag: String },
    #[error("transformer of {atom}.{result} is malformed: {detail}")]
    BadDelta {
        atom: String,
        result: String,
        detail: String,
    },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("invalid negotiation: {}", render_violations(.0))]
    Invalid(Vec<Violation>),
}

fn render_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

impl ModelError {
    pub fn violations(&self) -> &[Violation] {
        match self {
            ModelError::Invalid(v) => v,
        }
    }
}

fn valid_ident(s: &str) -> bool {
    !s.is_empty() && !s.chars().any(|c| c.is_whitespace() || RESERVED_CHARS.contains(&c))
}

impl Negotiation {
    pub fn new(parts: NegotiationParts) -> Result<Negotiation, ModelError> {
        let violations = check_parts(&parts);
        if !violations.is_empty() {
            return Err(ModelError::Invalid(violations));
        }
        let NegotiationParts {
            agents,
            atoms,
            initial,
            final_atom,
            space,
            interp,
        } = parts;
        Ok(Negotiation {
            agents,
            atoms,
            initial,
            final_atom,
            space,
            interp,
        })
    }

    pub fn into_parts(self) -> NegotiationParts {
        NegotiationParts {
            agents: self.agents,
            atoms: self.atoms,
            initial: self.initial,
            final_atom: self.final_atom,
            space: self.space,
            interp: self.interp,
        }
    }

    pub fn to_parts(&self) -> NegotiationParts {
        self.clone().into_parts()
    }

    pub fn agents(&self) -> &[String] {
        &self.agents
    }

    pub fn agent_count(&self) -> usize {
        self.agents.len()
    }

    pub fn agent_index(&self, name: &str) -> Option<AgentIdx> {
        self.agents.iter().position(|a| a == name)
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn atom(&self, i: AtomIdx) -> &Atom {
        &self.atoms[i]
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    pub fn atom_index(&self, id: &str) -> Option<AtomIdx> {
        self.atoms.iter().position(|a| a.id == id)
    }

    pub fn initial(&self) -> AtomIdx {
        self.initial
    }

    pub fn final_atom(&self) -> AtomIdx {
        self.final_atom
    }

    pub fn space(&self) -> Option<&StateSpace> {
        self.space.as_ref()
    }

    pub fn interp(&self) -> &Interp {
        &self.interp
    }

    pub fn is_atomic(&self) -> bool {
        self.atoms.len() == 1
    }

    /// Looks up an outcome by atom id and result name.
    pub fn outcome(&self, atom: &str, result: &str) -> Option<Outcome> {
        let a = self.atom_index(atom)?;
        let r = self.atoms[a].result_pos(result)?;
        Some(Outcome::new(a, r))
    }

    pub fn outcomes(&self) -> impl Iterator<Item = Outcome> + '_ {
        self.atoms
            .iter()
            .enumerate()
            .flat_map(|(a, atom)| (0..atom.results.len()).map(move |r| Outcome::new(a, r)))
    }

    pub fn outcome_count(&self) -> usize {
        self.atoms.iter().map(|a| a.results.len()).sum()
    }

    pub fn result_def(&self, o: Outcome) -> &ResultDef {
        &self.atoms[o.atom].results[o.result]
    }

    pub fn result_name(&self, o: Outcome) -> &str {
        &self.result_def(o).name
    }

    pub fn delta(&self, o: Outcome) -> &TransformerExpr {
        &self.result_def(o).delta
    }

    /// `atom.result` label of an outcome.
    pub fn outcome_label(&self, o: Outcome) -> String {
        outcome_tag(&self.atoms[o.atom].id, self.result_name(o))
    }

    /// X(n, p, r); `None` if `agent` is not a party of the atom.
    pub fn next(&self, o: Outcome, agent: AgentIdx) -> Option<&BTreeSet<AtomIdx>> {
        let atom = &self.atoms[o.atom];
        atom.party_pos(agent)
            .map(|i| &atom.results[o.result].next[i])
    }

    pub fn arcs(&self) -> Vec<Arc> {
        let mut out = Vec::new();
        for (a, atom) in self.atoms.iter().enumerate() {
            for (r, res) in atom.results.iter().enumerate() {
                for (i, &p) in atom.parties.iter().enumerate() {
                    for &t in &res.next[i] {
                        out.push(Arc {
                            source: a,
                            agent: p,
                            result: r,
                            target: t,
                        });
                    }
                }
            }
        }
        out
    }

    pub fn graph(&self) -> NegotiationGraph {
        NegotiationGraph::new(self)
    }

    pub fn classify(&self) -> Classification {
        classify(self)
    }

    pub fn is_deterministic(&self) -> bool {
        self.classify().deterministic
    }
}

fn check_parts(parts: &NegotiationParts) -> Vec<Violation> {
    let mut v = Vec::new();
    let agents = &parts.agents;
    let atoms = &parts.atoms;
    if agents.is_empty() {
        v.push(Violation::NoAgents);
    }
    let mut seen = BTreeSet::new();
    for a in agents {
        if a.is_empty() || !seen.insert(a) {
            v.push(Violation::BadAgent(a.clone()));
        }
    }
    let mut ids = BTreeSet::new();
    for atom in atoms {
        if !ids.insert(&atom.id) {
            v.push(Violation::DuplicateAtom(atom.id.clone()));
        }
        if !valid_ident(&atom.id) {
            v.push(Violation::BadIdentifier(atom.id.clone()));
        }
    }
    let agent_name = |p: usize| agents.get(p).cloned().unwrap_or_else(|| format!("#{p}"));
    let atom_name = |a: usize| {
        atoms
            .get(a)
            .map(|x| x.id.clone())
            .unwrap_or_else(|| format!("#{a}"))
    };
    if parts.initial >= atoms.len() {
        v.push(Violation::UnknownEndpoint(format!("#{}", parts.initial)));
    }
    if parts.final_atom >= atoms.len() {
        v.push(Violation::UnknownEndpoint(format!("#{}", parts.final_atom)));
    }
    if !v.is_empty() {
        return v;
    }
    let mut structural_ok = true;
    for (ai, atom) in atoms.iter().enumerate() {
        if atom.parties.is_empty() {
            v.push(Violation::NoParties {
                atom: atom.id.clone(),
            });
            structural_ok = false;
        }
        let sorted = atom.parties.windows(2).all(|w| w[0] < w[1]);
        for &p in &atom.parties {
            if p >= agents.len() || !sorted {
                v.push(Violation::BadParty {
                    atom: atom.id.clone(),
                    agent: agent_name(p),
                });
                structural_ok = false;
            }
        }
        if atom.results.is_empty() {
            v.push(Violation::NoResults {
                atom: atom.id.clone(),
            });
        }
        let mut names = BTreeSet::new();
        for res in &atom.results {
            if !names.insert(&res.name) {
                v.push(Violation::DuplicateResult {
                    atom: atom.id.clone(),
                    result: res.name.clone(),
                });
            }
            if !valid_ident(&res.name) {
                v.push(Violation::BadIdentifier(res.name.clone()));
            }
            if res.next.len() != atom.parties.len() {
                v.push(Violation::MissingTransition {
                    atom: atom.id.clone(),
                    agent: "?".into(),
                    result: res.name.clone(),
                });
                structural_ok = false;
                continue;
            }
            for (i, targets) in res.next.iter().enumerate() {
                let p = atom.parties[i];
                if ai == parts.final_atom {
                    if !targets.is_empty() {
                        v.push(Violation::FinalNonEmptyTransition {
                            atom: atom.id.clone(),
                            agent: agent_name(p),
                            result: res.name.clone(),
                        });
                    }
                } else if targets.is_empty() {
                    v.push(Violation::NonFinalEmptyTransition {
                        atom: atom.id.clone(),
                        agent: agent_name(p),
                        result: res.name.clone(),
                    });
                }
                for &t in targets {
                    if t >= atoms.len() {
                        v.push(Violation::DanglingTarget {
                            atom: atom.id.clone(),
                            agent: agent_name(p),
                            result: res.name.clone(),
                            target: atom_name(t),
                        });
                        structural_ok = false;
                    } else if !atoms[t].parties.contains(&p) {
                        v.push(Violation::TargetLacksParty {
                            atom: atom.id.clone(),
                            agent: agent_name(p),
                            result: res.name.clone(),
                            target: atom_name(t),
                        });
                    }
                }
            }
        }
    }
    for end in [parts.initial, parts.final_atom] {
        if atoms[end].parties.len() != agents.len() {
            let atom = atoms[end].id.clone();
            let viol = Violation::InitialOrFinalNotAllAgents { atom };
            if !v.contains(&viol) {
                v.push(viol);
            }
        }
    }
    if structural_ok {
        let fwd = reach(atoms, parts.initial, false);
        let bwd = reach(atoms, parts.final_atom, true);
        for (i, atom) in atoms.iter().enumerate() {
            if !fwd[i] || !bwd[i] {
                v.push(Violation::MissingPath {
                    atom: atom.id.clone(),
                });
            }
        }
    }
    check_relations(parts, &mut v);
    v
}

fn reach(atoms: &[Atom], start: AtomIdx, backward: bool) -> Vec<bool> {
    let mut succ = vec![Vec::new(); atoms.len()];
    for (a, atom) in atoms.iter().enumerate() {
        for res in &atom.results {
            for ts in &res.next {
                for &t in ts {
                    if backward {
                        succ[t].push(a);
                    } else {
                        succ[a].push(t);
                    }
                }
            }
        }
    }
    let mut seen = vec![false; atoms.len()];
    seen[start] = true;
    let mut queue = VecDeque::from([start]);
    while let Some(a) = queue.pop_front() {
        for &b in &succ[a] {
            if !seen[b] {
                seen[b] = true;
                queue.push_back(b);
            }
        }
    }
    seen
}

fn check_relations(parts: &NegotiationParts, v: &mut Vec<Violation>) {
    if parts.interp.is_empty() {
        return;
    }
    let Some(space) = &parts.space else {
        for tag in parts.interp.keys() {
            v.push(Violation::BadRelation {
                tag: tag.clone(),
                detail: "no state space declared".into(),
            });
        }
        return;
    };
    if space.agents() != parts.agents.len() {
        v.push(Violation::MissingStates(format!(
            "{} state sets for {} agents",
            space.agents(),
            parts.agents.len()
        )));
        return;
    }
    for (tag, rel) in &parts.interp {
        if let Err(e) = rel.check(space) {
            v.push(Violation::BadRelation {
                tag: tag.clone(),
                detail: e.to_string(),
            });
        } else if !rel.is_left_total(space) {
            v.push(Violation::NotLeftTotal { tag: tag.clone() });
        }
    }
}

/// The negotiation graph: one edge per arc, labelled `(agent, result)`.
#[derive(Clone, Debug)]
pub struct NegotiationGraph {
    graph: DiGraph<AtomIdx, (AgentIdx, usize)>,
}

impl NegotiationGraph {
    pub fn new(n: &Negotiation) -> Self {
        let mut graph = DiGraph::new();
        for a in 0..n.atom_count() {
            graph.add_node(a);
        }
        for arc in n.arcs() {
            graph.add_edge(
                NodeIndex::new(arc.source),
                NodeIndex::new(arc.target),
                (arc.agent, arc.result),
            );
        }
        NegotiationGraph { graph }
    }

    pub fn node_count(&self) -> usize {
        self.graph.node_count()
    }

    pub fn edge_count(&self) -> usize {
        self.graph.edge_count()
    }

    /// `(source, target, agent, result)` for every edge.
    pub fn edges(&self) -> Vec<(AtomIdx, AtomIdx, AgentIdx, usize)> {
        self.graph
            .edge_references()
            .map(|e| {
                (
                    e.source().index(),
                    e.target().index(),
                    e.weight().0,
                    e.weight().1,
                )
            })
            .collect()
    }

    pub fn successors(&self, a: AtomIdx) -> BTreeSet<AtomIdx> {
        self.graph
            .neighbors(NodeIndex::new(a))
            .map(|n| n.index())
            .collect()
    }

    pub fn has_edge(&self, a: AtomIdx, b: AtomIdx) -> bool {
        self.graph
            .find_edge(NodeIndex::new(a), NodeIndex::new(b))
            .is_some()
    }

    pub fn has_path(&self, from: AtomIdx, to: AtomIdx) -> bool {
        has_path_connecting(&self.graph, NodeIndex::new(from), NodeIndex::new(to), None)
    }

    pub fn is_acyclic(&self) -> bool {
        self.topological_order().is_some()
    }

    pub fn topological_order(&self) -> Option<Vec<AtomIdx>> {
        toposort(&self.graph, None)
            .ok()
            .map(|v| v.into_iter().map(|n| n.index()).collect())
    }

    pub fn has_self_loop(&self, a: AtomIdx) -> bool {
        self.has_edge(a, a)
    }

    /// Simple cycles as atom sequences, each starting at its smallest atom.
    /// Stops after `cap` cycles.
    pub fn simple_cycles(&self, cap: usize) -> Vec<Vec<AtomIdx>> {
        let n = self.node_count();
        let succ: Vec<BTreeSet<AtomIdx>> = (0..n).map(|a| self.successors(a)).collect();
        let mut out = Vec::new();
        for start in 0..n {
            let mut path = vec![start];
            let mut on_path = vec![false; n];
            on_path[start] = true;
            cycles_from(start, start, &succ, &mut path, &mut on_path, &mut out, cap);
            if out.len() >= cap {
                break;
            }
        }
        out
    }
}

fn cycles_from(
    start: usize,
    cur: usize,
    succ: &[BTreeSet<usize>],
    path: &mut Vec<usize>,
    on_path: &mut [bool],
    out: &mut Vec<Vec<usize>>,
    cap: usize,
) {
    for &next in &succ[cur] {
        if out.len() >= cap {
            return;
        }
        if next == start {
            out.push(path.clone());
        } else if next > start && !on_path[next] {
            on_path[next] = true;
            path.push(next);
            cycles_from(start, next, succ, path, on_path, out, cap);
            path.pop();
            on_path[next] = false;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Classification {
    pub deterministic: bool,
    pub weakly_deterministic: bool,
    pub acyclic: bool,
    pub deterministic_agents: BTreeSet<AgentIdx>,
}

pub fn classify(n: &Negotiation) -> Classification {
    let mut det: BTreeSet<AgentIdx> = (0..n.agent_count()).collect();
    for atom in n.atoms() {
        for res in &atom.results {
            for (i, ts) in res.next.iter().enumerate() {
                if ts.len() > 1 {
                    det.remove(&atom.parties[i]);
                }
            }
        }
    }
    let weakly = n.atoms().iter().all(|atom| {
        atom.results.iter().all(|res| {
            res.next.iter().all(|ts| {
                ts.is_empty()
                    || det
                        .iter()
                        .any(|&b| ts.iter().all(|&t| n.atom(t).has_party(b)))
            })
        })
    });
    Classification {
        deterministic: det.len() == n.agent_count(),
        weakly_deterministic: weakly,
        acyclic: n.graph().is_acyclic(),
        deterministic_agents: det,
    }
}

/// Name-level description of a negotiation, as stored on disk.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawNegotiation {
    pub agents: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub states: Option<BTreeMap<String, Vec<String>>>,
    pub atoms: Vec<RawAtom>,
    pub initial: String,
    #[serde(rename = "final")]
    pub final_atom: String,
    /// Relations of outcomes that no longer exist as atom results.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub relations: BTreeMap<String, RawRelation>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawAtom {
    pub id: String,
    pub parties: Vec<String>,
    pub results: Vec<RawResult>,
}

pub type RawPair = [Vec<String>; 2];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawResult {
    pub name: String,
    pub next: BTreeMap<String, Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rel: Option<Vec<RawPair>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawRelation {
    pub parties: Vec<String>,
    pub pairs: Vec<RawPair>,
}

/// Resolves names and checks every well-formedness condition, collecting
/// all violations.
pub fn validate(raw: &RawNegotiation) -> Result<Negotiation, ModelError> {
    let mut v = Vec::new();
    let agent_idx: BTreeMap<&str, usize> = raw
        .agents
        .iter()
        .enumerate()
        .map(|(i, a)| (a.as_str(), i))
        .collect();
    let atom_idx: BTreeMap<&str, usize> = raw
        .atoms
        .iter()
        .enumerate()
        .map(|(i, a)| (a.id.as_str(), i))
        .collect();

    let space = match &raw.states {
        None => None,
        Some(states) => {
            let mut names = Vec::new();
            for a in &raw.agents {
                match states.get(a) {
                    Some(s) if !s.is_empty() => names.push(s.clone()),
                    _ => v.push(Violation::MissingStates(a.clone())),
                }
            }
            for k in states.keys() {
                if !agent_idx.contains_key(k.as_str()) {
                    v.push(Violation::MissingStates(format!("unknown agent `{k}`")));
                }
            }
            (names.len() == raw.agents.len()).then(|| StateSpace::new(names))
        }
    };

    let mut interp = Interp::new();
    let mut atoms = Vec::new();
    for ra in &raw.atoms {
        let mut parties = Vec::new();
        for p in &ra.parties {
            match agent_idx.get(p.as_str()) {
                Some(&i) if !parties.contains(&i) => parties.push(i),
                _ => v.push(Violation::BadParty {
                    atom: ra.id.clone(),
                    agent: p.clone(),
                }),
            }
        }
        parties.sort_unstable();
        let mut results = Vec::new();
        for rr in &ra.results {
            let mut next = Vec::new();
            for &p in &parties {
                let pname = &raw.agents[p];
                match rr.next.get(pname) {
                    None => {
                        v.push(Violation::MissingTransition {
                            atom: ra.id.clone(),
                            agent: pname.clone(),
                            result: rr.name.clone(),
                        });
                        next.push(BTreeSet::new());
                    }
                    Some(ts) => {
                        let mut set = BTreeSet::new();
                        for t in ts {
                            match atom_idx.get(t.as_str()) {
                                Some(&ti) => {
                                    set.insert(ti);
                                }
                                None => v.push(Violation::DanglingTarget {
                                    atom: ra.id.clone(),
                                    agent: pname.clone(),
                                    result: rr.name.clone(),
                                    target: t.clone(),
                                }),
                            }
                        }
                        next.push(set);
                    }
                }
            }
            for k in rr.next.keys() {
                let known = agent_idx
                    .get(k.as_str())
                    .is_some_and(|i| parties.contains(i));
                if !known {
                    v.push(Violation::TransitionForNonParty {
                        atom: ra.id.clone(),
                        agent: k.clone(),
                        result: rr.name.clone(),
                    });
                }
            }
            let tag = outcome_tag(&ra.id, &rr.name);
            let delta = match &rr.delta {
                None => TransformerExpr::atomic(tag.clone()),
                Some(s) => match s.parse::<TransformerExpr>() {
                    Ok(e) => e,
                    Err(e) => {
                        v.push(Violation::BadDelta {
                            atom: ra.id.clone(),
                            result: rr.name.clone(),
                            detail: e.to_string(),
                        });
                        TransformerExpr::atomic(tag.clone())
                    }
                },
            };
            if let Some(pairs) = &rr.rel {
                match (&space, resolve_pairs(&raw.agents, &ra.parties, &parties, pairs, space.as_ref())) {
                    (None, _) => v.push(Violation::BadRelation {
                        tag: tag.clone(),
                        detail: "no state space declared".into(),
                    }),
                    (Some(_), Ok(rel)) => {
                        interp.insert(tag.clone(), rel);
                    }
                    (Some(_), Err(detail)) => v.push(Violation::BadRelation {
                        tag: tag.clone(),
                        detail,
                    }),
                }
            }
            results.push(ResultDef {
                name: rr.name.clone(),
                next,
                delta,
            });
        }
        atoms.push(Atom {
            id: ra.id.clone(),
            parties,
            results,
        });
    }
    for (tag, rr) in &raw.relations {
        let mut parties = Vec::new();
        for p in &rr.parties {
            match agent_idx.get(p.as_str()) {
                Some(&i) => parties.push(i),
                None => v.push(Violation::BadRelation {
                    tag: tag.clone(),
                    detail: format!("unknown agent `{p}`"),
                }),
            }
        }
        parties.sort_unstable();
        if interp.contains_key(tag) {
            v.push(Violation::BadRelation {
                tag: tag.clone(),
                detail: "defined twice".into(),
            });
            continue;
        }
        match resolve_pairs(&raw.agents, &rr.parties, &parties, &rr.pairs, space.as_ref()) {
            Ok(rel) => {
                interp.insert(tag.clone(), rel);
            }
            Err(detail) => v.push(Violation::BadRelation {
                tag: tag.clone(),
                detail,
            }),
        }
    }

    let initial = atom_idx.get(raw.initial.as_str()).copied();
    let final_atom = atom_idx.get(raw.final_atom.as_str()).copied();
    if initial.is_none() {
        v.push(Violation::UnknownEndpoint(raw.initial.clone()));
    }
    if final_atom.is_none() {
        v.push(Violation::UnknownEndpoint(raw.final_atom.clone()));
    }
    if !v.is_empty() {
        return Err(ModelError::Invalid(v));
    }
    Negotiation::new(NegotiationParts {
        agents: raw.agents.clone(),
        atoms,
        initial: initial.unwrap(),
        final_atom: final_atom.unwrap(),
        space,
        interp,
    })
}

/// Converts name pairs listed in `declared` party order into a relation over
/// the sorted party set.
fn resolve_pairs(
    agents: &[String],
    declared: &[String],
    sorted: &[usize],
    pairs: &[RawPair],
    space: Option<&StateSpace>,
) -> Result<ConcreteRelation, String> {
    let space = space.ok_or("no state space declared")?;
    let declared_idx: Vec<usize> = declared
        .iter()
        .map(|d| agents.iter().position(|a| a == d).ok_or(format!("unknown agent `{d}`")))
        .collect::<Result<_, _>>()?;
    let perm: Vec<usize> = sorted
        .iter()
        .map(|s| declared_idx.iter().position(|d| d == s).unwrap())
        .collect();
    let mut out = Vec::new();
    for [x, y] in pairs {
        let conv = |v: &Vec<String>| -> Result<Vec<u16>, String> {
            if v.len() != declared_idx.len() {
                return Err(format!("assignment {v:?} has the wrong length"));
            }
            perm.iter()
                .map(|&i| {
                    let agent = declared_idx[i];
                    space
                        .state_index(agent, &v[i])
                        .ok_or(format!("unknown state `{}` for agent `{}`", v[i], agents[agent]))
                })
                .collect()
        };
        out.push((conv(x)?, conv(y)?));
    }
    Ok(ConcreteRelation::new(sorted.to_vec(), out))
}

/// Inverse of [`validate`], in canonical order.
pub fn to_raw(n: &Negotiation) -> RawNegotiation {
    let agent = |p: usize| n.agents()[p].clone();
    let states = n.space().map(|s| {
        (0..n.agent_count())
            .map(|p| (agent(p), s.names(p).to_vec()))
            .collect()
    });
    let render_pairs = |rel: &ConcreteRelation| -> Vec<RawPair> {
        let s = n.space().expect("relations need a state space");
        let show = |v: &Vec<u16>| -> Vec<String> {
            v.iter()
                .enumerate()
                .map(|(i, &x)| s.names(rel.parties()[i])[x as usize].clone())
                .collect()
        };
        rel.pairs().iter().map(|(x, y)| [show(x), show(y)]).collect()
    };
    let mut inline = BTreeSet::new();
    let atoms = n
        .atoms()
        .iter()
        .map(|atom| RawAtom {
            id: atom.id.clone(),
            parties: atom.parties.iter().map(|&p| agent(p)).collect(),
            results: atom
                .results
                .iter()
                .map(|res| {
                    let tag = outcome_tag(&atom.id, &res.name);
                    let own = TransformerExpr::atomic(tag.clone());
                    let rel = n
                        .interp()
                        .get(&tag)
                        .filter(|r| r.parties() == atom.parties.as_slice())
                        .map(|r| {
                            inline.insert(tag.clone());
                            render_pairs(r)
                        });
                    RawResult {
                        name: res.name.clone(),
                        next: atom
                            .parties
                            .iter()
                            .enumerate()
                            .map(|(i, &p)| {
                                (agent(p), res.next[i].iter().map(|&t| n.atom(t).id.clone()).collect())
                            })
                            .collect(),
                        rel,
                        delta: (res.delta != own).then(|| res.delta.to_string()),
                    }
                })
                .collect(),
        })
        .collect();
    let relations = n
        .interp()
        .iter()
        .filter(|(tag, _)| !inline.contains(*tag))
        .map(|(tag, rel)| {
            (
                tag.clone(),
                RawRelation {
                    parties: rel.parties().iter().map(|&p| agent(p)).collect(),
                    pairs: render_pairs(rel),
                },
            )
        })
        .collect();
    RawNegotiation {
        agents: n.agents().to_vec(),
        states,
        atoms,
        initial: n.atom(n.initial()).id.clone(),
        final_atom: n.atom(n.final_atom()).id.clone(),
        relations,
    }
}

impl fmt::Display for Negotiation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (a, atom) in self.atoms.iter().enumerate() {
            let mark = match (a == self.initial, a == self.final_atom) {
                (true, true) => " (initial, final)",
                (true, false) => " (initial)",
                (false, true) => " (final)",
                _ => "",
            };
            let parties: Vec<_> = atom.parties.iter().map(|&p| self.agents[p].as_str()).collect();
            writeln!(f, "{} [{}]{}", atom.id, parties.join(","), mark)?;
            for res in &atom.results {
                let next: Vec<String> = atom
                    .parties
                    .iter()
                    .zip(&res.next)
                    .map(|(&p, ts)| {
                        let ids: Vec<_> = ts.iter().map(|&t| self.atoms[t].id.as_str()).collect();
                        format!("{}->{{{}}}", self.agents[p], ids.join(","))
                    })
                    .collect();
                writeln!(f, "  {}: {}  δ={}", res.name, next.join(" "), res.delta)?;
            }
        }
        Ok(())
    }
}

/// `(result, [(agent, [targets])])`
pub type ResultSpec<'a> = (&'a str, &'a [(&'a str, &'a [&'a str])]);

/// Small builder used by fixtures and tests: atoms are given as
/// `(id, parties, results)`.
pub fn build(
    agents: &[&str],
    atoms: &[(&str, &[&str], &[ResultSpec])],
    initial: &str,
    final_atom: &str,
) -> Result<Negotiation, ModelError> {
    let raw = RawNegotiation {
        agents: agents.iter().map(|s| s.to_string()).collect(),
        states: None,
        atoms: atoms
            .iter()
            .map(|(id, parties, results)| RawAtom {
                id: id.to_string(),
                parties: parties.iter().map(|s| s.to_string()).collect(),
                results: results
                    .iter()
                    .map(|(name, next)| RawResult {
                        name: name.to_string(),
                        next: next
                            .iter()
                            .map(|(p, ts)| (p.to_string(), ts.iter().map(|t| t.to_string()).collect()))
                            .collect(),
                        rel: None,
                        delta: None,
                    })
                    .collect(),
            })
            .collect(),
        initial: initial.to_string(),
        final_atom: final_atom.to_string(),
        relations: BTreeMap::new(),
    };
    validate(&raw)
}

/// The one-atom negotiation whose single atom is both initial and final.
pub fn atomic(agents: &[&str], results: &[&str]) -> Negotiation {
    let no_next: Vec<RawResult> = results
        .iter()
        .map(|r| RawResult {
            name: r.to_string(),
            next: agents.iter().map(|a| (a.to_string(), vec![])).collect(),
            rel: None,
            delta: None,
        })
        .collect();
    validate(&RawNegotiation {
        agents: agents.iter().map(|s| s.to_string()).collect(),
        states: None,
        atoms: vec![RawAtom {
            id: "n0".into(),
            parties: agents.iter().map(|s| s.to_string()).collect(),
            results: no_next,
        }],
        initial: "n0".into(),
        final_atom: "n0".into(),
        relations: BTreeMap::new(),
    })
    .expect("atomic negotiation is valid")
}
