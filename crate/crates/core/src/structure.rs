//! Structural diagnostics: targets of maximal n-sequences, fragments and
//! segments, minimal loops with their synchronizers, dominating atoms of
//! graph cycles, and executions of paths.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use indexmap::IndexMap;
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use thiserror::Error;

use crate::model::{self, AgentIdx, AtomIdx, ModelError, Negotiation, Outcome, RawAtom, RawResult};
use crate::semantics::{self, Marking, ReachabilityGraph, SemanticsError, enabled, step_unchecked};

/// Two maximal sequences from the same start with different targets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NonUniqueTargets {
    pub first: (Vec<Outcome>, Marking),
    pub second: (Vec<Outcome>, Marking),
    /// Atoms occurring in the explored sequences.
    pub atoms: BTreeSet<AtomIdx>,
}

#[derive(Debug, Error, Clone)]
pub enum StructureError {
    #[error(transparent)]
    Semantics(#[from] SemanticsError),
    #[error("maximal sequences from {0} reach different targets")]
    NonUniqueTargets(String, Box<NonUniqueTargets>),
    #[error("no finite maximal sequence starts at {0}")]
    NoTarget(String),
    #[error("the fragment is not a negotiation: {0}")]
    Invalid(#[from] ModelError),
}

struct Exploration {
    nodes: Vec<Marking>,
    /// (source, outcome, target)
    edges: Vec<(usize, Outcome, usize)>,
    parent: Vec<Option<usize>>,
    terminal: Vec<usize>,
}

impl Exploration {
    fn path_to(&self, v: usize) -> Vec<Outcome> {
        let mut out = Vec::new();
        let mut cur = v;
        while let Some(e) = self.parent[cur] {
            out.push(self.edges[e].1);
            cur = self.edges[e].0;
        }
        out.reverse();
        out
    }

    fn atoms(&self) -> BTreeSet<AtomIdx> {
        self.edges.iter().map(|e| e.1.atom).collect()
    }
}

/// Sequences from x_a starting with `first` (any outcome of `a` if none),
/// continuing with atoms accepted by `allowed`.
fn explore_from(
    n: &Negotiation,
    a: AtomIdx,
    first: Option<Outcome>,
    allowed: impl Fn(AtomIdx) -> bool,
    cap: usize,
) -> Result<Exploration, SemanticsError> {
    let start = Marking::at_atom(n, a);
    // The start gets a placeholder key so that returning to x_a is a node of
    // its own, explored like any other.
    let mut index: IndexMap<Marking, ()> = IndexMap::new();
    index.insert(Marking(Vec::new()), ());
    let mut parent = vec![None];
    let mut edges = Vec::new();
    let mut terminal = Vec::new();
    let mut work = VecDeque::from([0usize]);
    while let Some(v) = work.pop_front() {
        let m = if v == 0 {
            start.clone()
        } else {
            index.get_index(v).unwrap().0.clone()
        };
        let outs: Vec<Outcome> = if v == 0 {
            match first {
                Some(o) => vec![o],
                None => (0..n.atom(a).results.len()).map(|r| Outcome::new(a, r)).collect(),
            }
        } else {
            enabled(n, &m)
                .into_iter()
                .filter(|&b| allowed(b))
                .flat_map(|b| (0..n.atom(b).results.len()).map(move |r| Outcome::new(b, r)))
                .collect()
        };
        if outs.is_empty() {
            terminal.push(v);
        }
        for o in outs {
            let next = step_unchecked(n, &m, o);
            let t = match index.get_index_of(&next) {
                Some(t) => t,
                None => {
                    if index.len() >= cap {
                        return Err(SemanticsError::BudgetExceeded {
                            cap,
                            partial: Box::new(ReachabilityGraph {
                                nodes: index.into_keys().collect(),
                                edges: Vec::new(),
                                final_node: None,
                                parent: Vec::new(),
                            }),
                        });
                    }
                    index.insert(next, ());
                    parent.push(Some(edges.len()));
                    work.push_back(index.len() - 1);
                    index.len() - 1
                }
            };
            edges.push((v, o, t));
        }
    }
    let mut nodes: Vec<Marking> = index.into_keys().collect();
    nodes[0] = start;
    Ok(Exploration {
        nodes,
        edges,
        parent,
        terminal,
    })
}

fn unique_target(start: &str, ex: &Exploration) -> Result<Marking, StructureError> {
    let Some(&t0) = ex.terminal.first() else {
        return Err(StructureError::NoTarget(start.to_string()));
    };
    if let Some(&t1) = ex.terminal.iter().find(|&&t| ex.nodes[t] != ex.nodes[t0]) {
        return Err(StructureError::NonUniqueTargets(
            start.to_string(),
            Box::new(NonUniqueTargets {
                first: (ex.path_to(t0), ex.nodes[t0].clone()),
                second: (ex.path_to(t1), ex.nodes[t1].clone()),
                atoms: ex.atoms(),
            }),
        ));
    }
    Ok(ex.nodes[t0].clone())
}

fn subset(a: &[AgentIdx], b: &[AgentIdx]) -> bool {
    a.iter().all(|p| b.contains(p))
}

fn n_sequences(n: &Negotiation, a: AtomIdx, cap: usize) -> Result<Exploration, SemanticsError> {
    let pa = &n.atom(a).parties;
    explore_from(n, a, None, |b| subset(&n.atom(b).parties, pa), cap)
}

fn strict_sequences(n: &Negotiation, o: Outcome, cap: usize) -> Result<Exploration, SemanticsError> {
    let pa = &n.atom(o.atom).parties;
    explore_from(
        n,
        o.atom,
        Some(o),
        |b| {
            let pb = &n.atom(b).parties;
            pb.len() < pa.len() && subset(pb, pa)
        },
        cap,
    )
}

/// The common target of all maximal n-sequences.
pub fn target_of_atom(n: &Negotiation, a: AtomIdx, cap: usize) -> Result<Marking, StructureError> {
    let ex = n_sequences(n, a, cap)?;
    unique_target(&n.atom(a).id, &ex)
}

/// The common target of all maximal strict (n,r)-sequences.
pub fn target_of_outcome(n: &Negotiation, o: Outcome, cap: usize) -> Result<Marking, StructureError> {
    let ex = strict_sequences(n, o, cap)?;
    unique_target(&n.outcome_label(o), &ex)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fragment {
    pub entry: AtomIdx,
    /// The first outcome, for segments.
    pub outcome: Option<Outcome>,
    /// Atoms of the original negotiation included in the fragment.
    pub atoms: BTreeSet<AtomIdx>,
    pub target: Marking,
    /// The fragment as a standalone negotiation over the parties of the
    /// entry atom, with the exit atom as final atom.
    pub negotiation: Negotiation,
}

impl Fragment {
    pub fn exit_id(&self) -> &str {
        let n = &self.negotiation;
        &n.atom(n.final_atom()).id
    }

    /// Only the entry atom with a single result, plus the exit.
    pub fn is_atomic(&self) -> bool {
        let n = &self.negotiation;
        n.atom_count() == 2 && n.atom(n.initial()).results.len() == 1
    }
}

pub fn exit_atom_id(entry: &str) -> String {
    format!("n̂:{entry}")
}

pub const EXIT_RESULT: &str = "r̂";

pub fn fragment(n: &Negotiation, a: AtomIdx, cap: usize) -> Result<Fragment, StructureError> {
    let ex = n_sequences(n, a, cap)?;
    let target = unique_target(&n.atom(a).id, &ex)?;
    materialize(n, a, None, &ex, target)
}

pub fn segment(n: &Negotiation, o: Outcome, cap: usize) -> Result<Fragment, StructureError> {
    let ex = strict_sequences(n, o, cap)?;
    let target = unique_target(&n.outcome_label(o), &ex)?;
    materialize(n, o.atom, Some(o), &ex, target)
}

fn materialize(
    n: &Negotiation,
    a: AtomIdx,
    first: Option<Outcome>,
    ex: &Exploration,
    target: Marking,
) -> Result<Fragment, StructureError> {
    let raw = model::to_raw(n);
    let seen: BTreeSet<Outcome> = ex.edges.iter().map(|e| e.1).collect();
    let atoms: BTreeSet<AtomIdx> = seen.iter().map(|o| o.atom).collect();
    let exit = exit_atom_id(&n.atom(a).id);
    let parties = &n.atom(a).parties;
    let agent_names: Vec<String> = parties.iter().map(|&p| n.agents()[p].clone()).collect();

    let mut raw_atoms = Vec::new();
    for &b in &atoms {
        let atom = n.atom(b);
        let src = &raw.atoms[b];
        let mut results = Vec::new();
        for (r, rr) in src.results.iter().enumerate() {
            if !seen.contains(&Outcome::new(b, r)) {
                continue;
            }
            let mut next = BTreeMap::new();
            for (i, &p) in atom.parties.iter().enumerate() {
                let x = &atom.results[r].next[i];
                let ids = if x == target.ready(p) {
                    vec![exit.clone()]
                } else {
                    x.iter().map(|&t| n.atom(t).id.clone()).collect()
                };
                next.insert(n.agents()[p].clone(), ids);
            }
            results.push(RawResult { next, ..rr.clone() });
        }
        raw_atoms.push(RawAtom {
            id: atom.id.clone(),
            parties: src.parties.clone(),
            results,
        });
    }
    raw_atoms.push(RawAtom {
        id: exit.clone(),
        parties: agent_names.clone(),
        results: vec![RawResult {
            name: EXIT_RESULT.to_string(),
            next: agent_names.iter().map(|p| (p.clone(), Vec::new())).collect(),
            rel: None,
            delta: Some("ε".into()),
        }],
    });
    let keep: BTreeSet<&String> = agent_names.iter().collect();
    let sub = model::RawNegotiation {
        agents: agent_names.clone(),
        states: raw.states.as_ref().map(|s| {
            s.iter()
                .filter(|(k, _)| keep.contains(k))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect()
        }),
        atoms: raw_atoms,
        initial: n.atom(a).id.clone(),
        final_atom: exit,
        relations: raw
            .relations
            .iter()
            .filter(|(_, r)| r.parties.iter().all(|p| keep.contains(p)))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect(),
    };
    let negotiation = model::validate(&sub)?;
    Ok(Fragment {
        entry: a,
        outcome: first,
        atoms,
        target,
        negotiation,
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Loop {
    pub sequence: Vec<Outcome>,
    pub marking: Marking,
    pub atoms: BTreeSet<AtomIdx>,
    pub agents: BTreeSet<AgentIdx>,
}

impl Loop {
    /// Checks that `seq` is nonempty and leads from `marking` back to it.
    pub fn from_sequence(n: &Negotiation, marking: Marking, seq: Vec<Outcome>) -> Option<Loop> {
        if seq.is_empty() {
            return None;
        }
        let end = semantics::replay(n, &marking, &seq).ok()?;
        if end != marking {
            return None;
        }
        let atoms: BTreeSet<AtomIdx> = seq.iter().map(|o| o.atom).collect();
        let agents = atoms
            .iter()
            .flat_map(|&a| n.atom(a).parties.iter().copied())
            .collect();
        Some(Loop {
            sequence: seq,
            marking,
            atoms,
            agents,
        })
    }
}

/// A cycle of the reachability graph using only edges of `allowed` atoms,
/// as a start node and a list of edge indices.
fn cycle_within(rg: &ReachabilityGraph, allowed: &BTreeSet<AtomIdx>) -> Option<(usize, Vec<usize>)> {
    let mut g = DiGraph::<(), usize>::new();
    let nodes: Vec<_> = (0..rg.node_count()).map(|_| g.add_node(())).collect();
    let usable: Vec<usize> = (0..rg.edges.len())
        .filter(|&i| allowed.contains(&rg.edges[i].outcome.atom))
        .collect();
    for &i in &usable {
        let e = &rg.edges[i];
        g.add_edge(nodes[e.source], nodes[e.target], i);
    }
    let mut comp = vec![usize::MAX; rg.node_count()];
    for (c, scc) in tarjan_scc(&g).into_iter().enumerate() {
        for v in scc {
            comp[v.index()] = c;
        }
    }
    let &first = usable.iter().find(|&&i| {
        let e = &rg.edges[i];
        comp[e.source] == comp[e.target]
    })?;
    let (u, v) = (rg.edges[first].source, rg.edges[first].target);
    // shortest way back from v to u inside the component
    let mut back: HashMap<usize, usize> = HashMap::new();
    let mut queue = VecDeque::from([v]);
    let mut seen = BTreeSet::from([v]);
    while let Some(x) = queue.pop_front() {
        if x == u {
            break;
        }
        for &i in &usable {
            let e = &rg.edges[i];
            if e.source == x && comp[e.target] == comp[u] && seen.insert(e.target) {
                back.insert(e.target, i);
                queue.push_back(e.target);
            }
        }
    }
    let mut path = Vec::new();
    let mut cur = u;
    while cur != v {
        let i = back[&cur];
        path.push(i);
        cur = rg.edges[i].source;
    }
    path.reverse();
    let mut cycle = vec![first];
    cycle.extend(path);
    Some((u, cycle))
}

/// A loop of the reachability graph whose atom set is minimal w.r.t.
/// inclusion, or none if the reachability graph is acyclic.
pub fn find_minimal_loop(n: &Negotiation, cap: usize) -> Result<Option<Loop>, SemanticsError> {
    let rg = semantics::reachability(n, cap)?;
    let all: BTreeSet<AtomIdx> = (0..n.atom_count()).collect();
    let Some(mut best) = cycle_within(&rg, &all) else {
        return Ok(None);
    };
    let atoms_of = |c: &(usize, Vec<usize>)| -> BTreeSet<AtomIdx> {
        c.1.iter().map(|&i| rg.edges[i].outcome.atom).collect()
    };
    'shrink: loop {
        let set = atoms_of(&best);
        for &a in &set {
            let mut smaller = set.clone();
            smaller.remove(&a);
            if let Some(c) = cycle_within(&rg, &smaller) {
                best = c;
                continue 'shrink;
            }
        }
        break;
    }
    let (start, edges) = best;
    let seq = edges.iter().map(|&i| rg.edges[i].outcome).collect();
    Ok(Loop::from_sequence(n, rg.nodes[start].clone(), seq))
}

/// Atoms of the loop whose parties include the parties of every atom of
/// the loop.
pub fn synchronizers(n: &Negotiation, l: &Loop) -> BTreeSet<AtomIdx> {
    l.atoms
        .iter()
        .copied()
        .filter(|&a| {
            l.atoms
                .iter()
                .all(|&b| subset(&n.atom(b).parties, &n.atom(a).parties))
        })
        .collect()
}

/// The first atom of a graph cycle whose parties include those of all
/// others on the cycle.
pub fn dominating_atom(n: &Negotiation, cycle: &[AtomIdx]) -> Option<AtomIdx> {
    cycle.iter().copied().find(|&a| {
        cycle
            .iter()
            .all(|&b| subset(&n.atom(b).parties, &n.atom(a).parties))
    })
}

/// An execution of a path of arcs: a reachable marking and an occurrence
/// sequence from it that fires the path's outcomes in order and fires atoms
/// of the path only with results the path uses.
pub fn execute_path(
    n: &Negotiation,
    path: &[model::Arc],
    cap: usize,
) -> Result<Option<(Marking, Vec<Outcome>)>, SemanticsError> {
    let rg = semantics::reachability(n, cap)?;
    let wanted: Vec<Outcome> = path.iter().map(|a| Outcome::new(a.source, a.result)).collect();
    let on_path: BTreeSet<AtomIdx> = wanted.iter().map(|o| o.atom).collect();
    let permitted: BTreeSet<Outcome> = wanted.iter().copied().collect();
    let k = wanted.len();
    let mut adj = vec![Vec::new(); rg.node_count()];
    for e in &rg.edges {
        if !on_path.contains(&e.outcome.atom) || permitted.contains(&e.outcome) {
            adj[e.source].push((e.outcome, e.target));
        }
    }
    type State = (usize, usize);
    let mut prev: HashMap<State, Option<(State, Outcome)>> = HashMap::new();
    let mut queue = VecDeque::new();
    for v in 0..rg.node_count() {
        prev.insert((v, 0), None);
        queue.push_back((v, 0));
    }
    let mut goal = None;
    if k == 0 {
        goal = Some((0, 0));
    }
    while let Some(s @ (v, i)) = queue.pop_front() {
        if goal.is_some() {
            break;
        }
        for &(o, w) in &adj[v] {
            let mut succ = vec![(w, i)];
            if i < k && o == wanted[i] {
                succ.push((w, i + 1));
            }
            for t in succ {
                if let std::collections::hash_map::Entry::Vacant(e) = prev.entry(t) {
                    e.insert(Some((s, o)));
                    if t.1 == k {
                        goal = Some(t);
                    }
                    queue.push_back(t);
                }
            }
        }
    }
    let Some(mut cur) = goal else {
        return Ok(None);
    };
    let mut seq = Vec::new();
    while let Some(Some((p, o))) = prev.get(&cur) {
        seq.push(*o);
        cur = *p;
    }
    seq.reverse();
    Ok(Some((rg.nodes[cur.0].clone(), seq)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{atomic, build};
    use crate::semantics::{DEFAULT_CAP, check_soundness};

    fn split_join() -> Negotiation {
        build(
            &["A", "B"],
            &[
                ("n0", &["A", "B"], &[("a", &[("A", &["n1"]), ("B", &["n2"])])]),
                ("n1", &["A"], &[("x", &[("A", &["n3"])]), ("y", &[("A", &["n3"])])]),
                ("n2", &["B"], &[("z", &[("B", &["n3"])])]),
                ("n3", &["A", "B"], &[("b", &[("A", &["nf"]), ("B", &["nf"])]), ("c", &[("A", &["n0"]), ("B", &["n0"])])]),
                ("nf", &["A", "B"], &[("f", &[("A", &[]), ("B", &[])])]),
            ],
            "n0",
            "nf",
        )
        .unwrap()
    }

    #[test]
    fn final_atom_targets_the_empty_marking() {
        let n = split_join();
        let t = target_of_atom(&n, n.final_atom(), DEFAULT_CAP).unwrap();
        assert!(t.is_empty());
    }

    #[test]
    fn targets_of_single_party_atoms() {
        let n = split_join();
        let t = target_of_atom(&n, 1, DEFAULT_CAP).unwrap();
        assert_eq!(t.key(&n), "A={n3};B={}");
    }

    #[test]
    fn fragment_of_the_initial_atom_covers_everything() {
        let n = split_join();
        let f = fragment(&n, 0, DEFAULT_CAP).unwrap();
        assert_eq!(f.atoms.len(), n.atom_count());
        assert_eq!(f.exit_id(), "n̂:n0");
        assert!(check_soundness(&f.negotiation, DEFAULT_CAP).unwrap().sound);
    }

    #[test]
    fn segment_of_one_party_outcome_is_atomic() {
        let n = split_join();
        let s = segment(&n, n.outcome("n1", "x").unwrap(), DEFAULT_CAP).unwrap();
        assert!(s.is_atomic());
        let s = segment(&n, n.outcome("n0", "a").unwrap(), DEFAULT_CAP).unwrap();
        assert_eq!(s.atoms, BTreeSet::from([0, 1, 2]));
        assert!(check_soundness(&s.negotiation, DEFAULT_CAP).unwrap().sound);
    }

    #[test]
    fn fragment_of_final_atom_is_atomic() {
        let n = atomic(&["A"], &["r"]);
        let f = fragment(&n, 0, DEFAULT_CAP).unwrap();
        assert!(f.is_atomic());
    }

    #[test]
    fn loop_through_the_whole_round() {
        let n = split_join();
        let l = find_minimal_loop(&n, DEFAULT_CAP).unwrap().unwrap();
        assert_eq!(l.atoms, BTreeSet::from([0, 1, 2, 3]));
        assert_eq!(synchronizers(&n, &l), BTreeSet::from([0, 3]));
        assert_eq!(dominating_atom(&n, &[1, 3, 0]), Some(3));
    }

    #[test]
    fn acyclic_nets_have_no_loops() {
        let n = atomic(&["A"], &["r"]);
        assert!(find_minimal_loop(&n, DEFAULT_CAP).unwrap().is_none());
    }

    #[test]
    fn unsound_split_reports_two_targets() {
        // A may leave early, so n1's maximal sequences disagree
        let n = build(
            &["A", "B"],
            &[
                ("n0", &["A", "B"], &[("a", &[("A", &["n1"]), ("B", &["n2"])])]),
                ("n1", &["A"], &[("x", &[("A", &["n2"])]), ("y", &[("A", &["nf"])])]),
                ("n2", &["A", "B"], &[("z", &[("A", &["nf"]), ("B", &["nf"])])]),
                ("nf", &["A", "B"], &[("f", &[("A", &[]), ("B", &[])])]),
            ],
            "n0",
            "nf",
        )
        .unwrap();
        match target_of_atom(&n, 1, DEFAULT_CAP) {
            Err(StructureError::NonUniqueTargets(_, w)) => {
                assert_ne!(w.first.1, w.second.1);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn paths_execute_on_sound_nets() {
        let n = split_join();
        let arcs = n.arcs();
        let a0 = arcs.iter().find(|a| a.source == 0 && a.target == 1).copied().unwrap();
        let a1 = arcs.iter().find(|a| a.source == 1 && a.result == 1).copied().unwrap();
        let (m, seq) = execute_path(&n, &[a0, a1], DEFAULT_CAP).unwrap().unwrap();
        assert!(semantics::replay(&n, &m, &seq).is_ok());
        assert!(seq.contains(&Outcome::new(1, 1)));
        assert!(!seq.contains(&Outcome::new(1, 0)));
    }
}
