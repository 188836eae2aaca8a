#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};

use negotiation::cli::gen::{self, GenParams};
use negotiation::model::Negotiation;
use negotiation::semantics::{self, Marking, step};
use negotiation::state_elim::Summary;
use negotiation::transformers::{self, Assignment, ConcreteRelation, StateSpace};
use negotiation::Outcome;

pub const CAP: usize = 200_000;

pub type Concrete = BTreeMap<String, ConcreteRelation>;

/// Per final result, the union of the transformers of all large steps,
/// computed as a fixpoint over (marking, global state) configurations.
pub fn oracle_summary(n: &Negotiation) -> Concrete {
    let space = n.space().expect("negotiation carries a state space");
    let all: Vec<usize> = (0..n.agent_count()).collect();
    let mut pairs: BTreeMap<String, BTreeSet<(Assignment, Assignment)>> = n
        .atom(n.final_atom())
        .results
        .iter()
        .map(|r| (r.name.clone(), BTreeSet::new()))
        .collect();
    let rels: BTreeMap<Outcome, ConcreteRelation> = n
        .outcomes()
        .map(|o| (o, transformers::eval(n.delta(o), n.interp(), space).unwrap()))
        .collect();
    for g0 in space.assignments(&all) {
        let start = (Marking::initial(n), g0.clone());
        let mut seen: HashSet<(Marking, Assignment)> = HashSet::new();
        let mut queue = VecDeque::new();
        seen.insert(start.clone());
        queue.push_back(start);
        while let Some((m, g)) = queue.pop_front() {
            for a in semantics::enabled(n, &m) {
                for r in 0..n.atom(a).results.len() {
                    let o = Outcome::new(a, r);
                    let m2 = step(n, &m, o).unwrap();
                    for g2 in apply_relation(&rels[&o], &g) {
                        if a == n.final_atom() {
                            pairs
                                .get_mut(n.result_name(o))
                                .unwrap()
                                .insert((g0.clone(), g2));
                        } else if seen.insert((m2.clone(), g2.clone())) {
                            queue.push_back((m2.clone(), g2));
                        }
                    }
                }
            }
        }
    }
    pairs
        .into_iter()
        .map(|(k, v)| (k, ConcreteRelation::new(all.clone(), v)))
        .collect()
}

fn apply_relation(rel: &ConcreteRelation, g: &Assignment) -> Vec<Assignment> {
    let local: Assignment = rel.parties().iter().map(|&p| g[p]).collect();
    rel.pairs()
        .iter()
        .filter(|(x, _)| *x == local)
        .map(|(_, y)| {
            let mut g2 = g.clone();
            for (i, &p) in rel.parties().iter().enumerate() {
                g2[p] = y[i];
            }
            g2
        })
        .collect()
}

pub fn eval_summary(n: &Negotiation, s: &Summary) -> Concrete {
    let space = n.space().unwrap();
    s.iter()
        .map(|(k, e)| {
            let r = transformers::eval(e, n.interp(), space).unwrap();
            (k.clone(), r.global(space))
        })
        .collect()
}

/// Equal key sets and pointwise equivalent relations; results whose
/// relation is empty on one side may be missing on the other.
pub fn concrete_equal(a: &Concrete, b: &Concrete, space: &StateSpace) -> bool {
    let keys: BTreeSet<&String> = a.keys().chain(b.keys()).collect();
    keys.into_iter().all(|k| match (a.get(k), b.get(k)) {
        (Some(x), Some(y)) => x.equivalent(y, space),
        (Some(x), None) | (None, Some(x)) => x.is_empty(),
        (None, None) => true,
    })
}

/// Elementary cycles of the reachability graph, each as (start node,
/// outcomes), up to `limit` cycles.
pub fn rg_cycles(rg: &semantics::ReachabilityGraph, limit: usize) -> Vec<(usize, Vec<Outcome>)> {
    let mut adj = vec![Vec::new(); rg.node_count()];
    for e in &rg.edges {
        adj[e.source].push((e.outcome, e.target));
    }
    let mut out = Vec::new();
    for s in 0..rg.node_count() {
        let mut path: Vec<Outcome> = Vec::new();
        let mut on: Vec<bool> = vec![false; rg.node_count()];
        dfs_cycles(&adj, s, s, &mut path, &mut on, &mut out, limit);
        if out.len() >= limit {
            break;
        }
    }
    out
}

fn dfs_cycles(
    adj: &[Vec<(Outcome, usize)>],
    start: usize,
    v: usize,
    path: &mut Vec<Outcome>,
    on: &mut [bool],
    out: &mut Vec<(usize, Vec<Outcome>)>,
    limit: usize,
) {
    on[v] = true;
    for &(o, w) in &adj[v] {
        if out.len() >= limit {
            break;
        }
        if w == start {
            let mut c = path.clone();
            c.push(o);
            out.push((start, c));
        } else if w > start && !on[w] {
            path.push(o);
            dfs_cycles(adj, start, w, path, on, out, limit);
            path.pop();
        }
    }
    on[v] = false;
}

pub fn params(agents: usize, acyclic: bool, states: Option<usize>) -> GenParams {
    GenParams {
        agents,
        steps: 10,
        max_atoms: 12,
        acyclic,
        states,
    }
}

pub fn sound_instances(count: usize, p: &GenParams, seed0: u64) -> Vec<Negotiation> {
    (0..count as u64)
        .map(|i| gen::generate_sound(seed0 + i, p))
        .collect()
}

/// The first `count` unsound instances found from consecutive seeds.
pub fn unsound_instances(count: usize, p: &GenParams) -> Vec<Negotiation> {
    let mut out = Vec::new();
    let mut seed = 0;
    while out.len() < count && seed < 20 * count as u64 {
        if let Some(n) = gen::generate_unsound_acyclic(seed, p) {
            out.push(n);
        }
        seed += 1;
    }
    out
}

/// Violations of the structural properties of sound deterministic
/// negotiations: minimal loops without synchronizers, graph cycles without
/// a dominating atom, atoms or outcomes without a unique target, and
/// fragments or segments that are not sound.
pub fn structure_violations(n: &Negotiation) -> Vec<String> {
    use negotiation::structure;
    let mut v = Vec::new();
    let rg = semantics::reachability(n, CAP).unwrap();
    let loops: Vec<structure::Loop> = rg_cycles(&rg, 5_000)
        .into_iter()
        .filter_map(|(s, seq)| structure::Loop::from_sequence(n, rg.nodes[s].clone(), seq))
        .collect();
    for l in &loops {
        let minimal = !loops.iter().any(|o| o.atoms.is_subset(&l.atoms) && o.atoms != l.atoms);
        if minimal && structure::synchronizers(n, l).is_empty() {
            v.push(format!("loop {} has no synchronizer", semantics::render_sequence(n, &l.sequence)));
        }
    }
    for c in n.graph().simple_cycles(5_000) {
        if structure::dominating_atom(n, &c).is_none() {
            v.push(format!("cycle {c:?} has no dominating atom"));
        }
    }
    for a in 0..n.atom_count() {
        if a == n.final_atom() {
            continue;
        }
        let id = &n.atom(a).id;
        match structure::fragment(n, a, CAP) {
            Ok(f) => match semantics::check_soundness(&f.negotiation, CAP) {
                Ok(s) if s.sound => {}
                other => v.push(format!("fragment {id} is not sound: {other:?}")),
            },
            Err(e) => v.push(format!("fragment {id}: {e}")),
        }
        for r in 0..n.atom(a).results.len() {
            let o = Outcome::new(a, r);
            match structure::segment(n, o, CAP) {
                Ok(f) => match semantics::check_soundness(&f.negotiation, CAP) {
                    Ok(s) if s.sound => {}
                    other => v.push(format!("segment {} is not sound: {other:?}", n.outcome_label(o))),
                },
                Err(e) => v.push(format!("segment {}: {e}", n.outcome_label(o))),
            }
        }
    }
    v
}
