//! Token semantics and the reachability-graph soundness check.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use indexmap::IndexMap;
use thiserror::Error;

use crate::model::{AtomIdx, Negotiation, Outcome};

pub const DEFAULT_CAP: usize = 1_000_000;

/// For each agent, the set of atoms it is ready to engage in.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Marking(pub Vec<BTreeSet<AtomIdx>>);

impl Marking {
    pub fn initial(n: &Negotiation) -> Self {
        Marking(vec![BTreeSet::from([n.initial()]); n.agent_count()])
    }

    pub fn final_marking(n: &Negotiation) -> Self {
        Marking(vec![BTreeSet::new(); n.agent_count()])
    }

    /// x_n: parties of `atom` are ready for it, everybody else for nothing.
    pub fn at_atom(n: &Negotiation, atom: AtomIdx) -> Self {
        Marking(
            (0..n.agent_count())
                .map(|p| {
                    if n.atom(atom).has_party(p) {
                        BTreeSet::from([atom])
                    } else {
                        BTreeSet::new()
                    }
                })
                .collect(),
        )
    }

    pub fn ready(&self, agent: usize) -> &BTreeSet<AtomIdx> {
        &self.0[agent]
    }

    pub fn is_empty(&self) -> bool {
        self.0.iter().all(|s| s.is_empty())
    }

    /// Canonical text form, e.g. `A={n1};B={};C={n2,nf}`.
    pub fn key(&self, n: &Negotiation) -> String {
        self.0
            .iter()
            .enumerate()
            .map(|(p, s)| {
                let ids: Vec<&str> = s.iter().map(|&a| n.atom(a).id.as_str()).collect();
                format!("{}={{{}}}", n.agents()[p], ids.join(","))
            })
            .collect::<Vec<_>>()
            .join(";")
    }
}

#[derive(Debug, Error, Clone)]
pub enum SemanticsError {
    #[error("outcome {outcome} is not enabled at {marking}")]
    NotEnabled { outcome: String, marking: String },
    #[error("state budget of {cap} markings exceeded")]
    BudgetExceeded {
        cap: usize,
        partial: Box<ReachabilityGraph>,
    },
}

pub fn is_enabled(n: &Negotiation, m: &Marking, atom: AtomIdx) -> bool {
    n.atom(atom).parties.iter().all(|&p| m.0[p].contains(&atom))
}

/// Enabled atoms in index order.
pub fn enabled(n: &Negotiation, m: &Marking) -> Vec<AtomIdx> {
    let candidates: BTreeSet<AtomIdx> = m.0.iter().flatten().copied().collect();
    candidates
        .into_iter()
        .filter(|&a| is_enabled(n, m, a))
        .collect()
}

pub fn step(n: &Negotiation, m: &Marking, o: Outcome) -> Result<Marking, SemanticsError> {
    if !is_enabled(n, m, o.atom) {
        return Err(SemanticsError::NotEnabled {
            outcome: n.outcome_label(o),
            marking: m.key(n),
        });
    }
    Ok(step_unchecked(n, m, o))
}

pub(crate) fn step_unchecked(n: &Negotiation, m: &Marking, o: Outcome) -> Marking {
    let atom = n.atom(o.atom);
    let mut next = m.clone();
    for (i, &p) in atom.parties.iter().enumerate() {
        next.0[p] = atom.results[o.result].next[i].clone();
    }
    next
}

pub fn replay(n: &Negotiation, start: &Marking, seq: &[Outcome]) -> Result<Marking, SemanticsError> {
    let mut m = start.clone();
    for &o in seq {
        m = step(n, &m, o)?;
    }
    Ok(m)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MarkingClass {
    Final,
    Deadlock,
    Live,
}

pub fn classify_marking(n: &Negotiation, m: &Marking) -> MarkingClass {
    if m.is_empty() {
        MarkingClass::Final
    } else if enabled(n, m).is_empty() {
        MarkingClass::Deadlock
    } else {
        MarkingClass::Live
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RgEdge {
    pub source: usize,
    pub outcome: Outcome,
    pub target: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReachabilityGraph {
    /// Nodes in discovery order; node 0 is the start marking.
    pub nodes: Vec<Marking>,
    pub edges: Vec<RgEdge>,
    /// Index of the all-empty marking, if reached.
    pub final_node: Option<usize>,
    /// Discovery edge of each node (none for the start node).
    pub parent: Vec<Option<usize>>,
}

impl ReachabilityGraph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn out_edges(&self, v: usize) -> impl Iterator<Item = &RgEdge> {
        self.edges.iter().filter(move |e| e.source == v)
    }

    pub fn index_of(&self, m: &Marking) -> Option<usize> {
        self.nodes.iter().position(|x| x == m)
    }

    /// The discovery path from the start node to `v`.
    pub fn path_to(&self, v: usize) -> Vec<Outcome> {
        let mut out = Vec::new();
        let mut cur = v;
        while let Some(e) = self.parent[cur] {
            out.push(self.edges[e].outcome);
            cur = self.edges[e].source;
        }
        out.reverse();
        out
    }

    /// Nodes from which `target` is reachable.
    pub fn can_reach(&self, target: usize) -> Vec<bool> {
        let mut preds = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            preds[e.target].push(e.source);
        }
        let mut seen = vec![false; self.nodes.len()];
        seen[target] = true;
        let mut queue = VecDeque::from([target]);
        while let Some(v) = queue.pop_front() {
            for &u in &preds[v] {
                if !seen[u] {
                    seen[u] = true;
                    queue.push_back(u);
                }
            }
        }
        seen
    }

    /// Node and edge sets with markings in canonical form, independent of
    /// exploration order.
    pub fn canonical(&self) -> (BTreeSet<Marking>, BTreeSet<(Marking, Outcome, Marking)>) {
        let nodes = self.nodes.iter().cloned().collect();
        let edges = self
            .edges
            .iter()
            .map(|e| {
                (
                    self.nodes[e.source].clone(),
                    e.outcome,
                    self.nodes[e.target].clone(),
                )
            })
            .collect();
        (nodes, edges)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExplorationOrder {
    BreadthFirst,
    DepthFirst,
}

pub fn reachability(n: &Negotiation, cap: usize) -> Result<ReachabilityGraph, SemanticsError> {
    explore(n, Marking::initial(n), cap, ExplorationOrder::BreadthFirst)
}

/// Closure of `step` from `start`. Successors of a node are generated by
/// enabled atom index, then result index.
pub fn explore(
    n: &Negotiation,
    start: Marking,
    cap: usize,
    order: ExplorationOrder,
) -> Result<ReachabilityGraph, SemanticsError> {
    let mut index: IndexMap<Marking, ()> = IndexMap::new();
    let mut parent = vec![None];
    let mut edges = Vec::new();
    index.insert(start, ());
    let mut work = VecDeque::from([0usize]);
    while let Some(v) = match order {
        ExplorationOrder::BreadthFirst => work.pop_front(),
        ExplorationOrder::DepthFirst => work.pop_back(),
    } {
        let m = index.get_index(v).unwrap().0.clone();
        for atom in enabled(n, &m) {
            for r in 0..n.atom(atom).results.len() {
                let o = Outcome::new(atom, r);
                let next = step_unchecked(n, &m, o);
                let target = match index.get_index_of(&next) {
                    Some(t) => t,
                    None => {
                        if index.len() >= cap {
                            let partial = finish(index, edges, parent);
                            return Err(SemanticsError::BudgetExceeded {
                                cap,
                                partial: Box::new(partial),
                            });
                        }
                        index.insert(next, ());
                        parent.push(Some(edges.len()));
                        work.push_back(index.len() - 1);
                        index.len() - 1
                    }
                };
                edges.push(RgEdge {
                    source: v,
                    outcome: o,
                    target,
                });
            }
        }
    }
    Ok(finish(index, edges, parent))
}

fn finish(
    index: IndexMap<Marking, ()>,
    edges: Vec<RgEdge>,
    parent: Vec<Option<usize>>,
) -> ReachabilityGraph {
    let nodes: Vec<Marking> = index.into_keys().collect();
    let final_node = nodes.iter().position(|m| m.is_empty());
    ReachabilityGraph {
        nodes,
        edges,
        final_node,
        parent,
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SoundnessVerdict {
    pub sound: bool,
    pub dead_atoms: BTreeSet<AtomIdx>,
    /// Shortest occurrence sequence from x0 to a marking that cannot reach
    /// the final marking.
    pub stuck_witness: Option<Vec<Outcome>>,
    pub state_count: usize,
}

impl SoundnessVerdict {
    pub fn render(&self, n: &Negotiation) -> String {
        let mut s = format!(
            "{} ({} markings)",
            if self.sound { "sound" } else { "unsound" },
            self.state_count
        );
        if !self.dead_atoms.is_empty() {
            let ids: Vec<_> = self.dead_atoms.iter().map(|&a| n.atom(a).id.as_str()).collect();
            s.push_str(&format!("\ndead atoms: {}", ids.join(", ")));
        }
        if let Some(w) = &self.stuck_witness {
            s.push_str(&format!("\nwitness: {}", render_sequence(n, w)));
        }
        s
    }
}

pub fn render_sequence(n: &Negotiation, seq: &[Outcome]) -> String {
    if seq.is_empty() {
        return "ε".into();
    }
    seq.iter()
        .map(|&o| format!("({},{})", n.atom(o.atom).id, n.result_name(o)))
        .collect()
}

pub fn check_soundness(n: &Negotiation, cap: usize) -> Result<SoundnessVerdict, SemanticsError> {
    let rg = reachability(n, cap)?;
    Ok(soundness_of(n, &rg))
}

pub fn soundness_of(n: &Negotiation, rg: &ReachabilityGraph) -> SoundnessVerdict {
    let mut dead: BTreeSet<AtomIdx> = (0..n.atom_count()).collect();
    for e in &rg.edges {
        dead.remove(&e.outcome.atom);
    }
    let reaches = match rg.final_node {
        Some(f) => rg.can_reach(f),
        None => vec![false; rg.node_count()],
    };
    let stuck_witness = reaches.iter().position(|&ok| !ok).map(|v| rg.path_to(v));
    SoundnessVerdict {
        sound: dead.is_empty() && stuck_witness.is_none(),
        dead_atoms: dead,
        stuck_witness,
        state_count: rg.node_count(),
    }
}

impl fmt::Display for RgEdge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} -({}/{})-> {}",
            self.source, self.outcome.atom, self.outcome.result, self.target
        )
    }
}
