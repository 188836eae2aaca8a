//! Random sound deterministic negotiations, built from an atomic one by
//! applying inverses of the reduction rules.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{Atom, AtomIdx, Negotiation, NegotiationParts, ResultDef};
use crate::semantics::{DEFAULT_CAP, check_soundness};
use crate::transformers::{ConcreteRelation, Interp, StateSpace, TransformerExpr, outcome_tag};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GenParams {
    pub agents: usize,
    pub steps: usize,
    pub max_atoms: usize,
    /// Disables self-loops and joins that close a cycle.
    pub acyclic: bool,
    /// Attach random left-total relations over this many states per agent.
    pub states: Option<usize>,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            agents: 3,
            steps: 12,
            max_atoms: 12,
            acyclic: false,
            states: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Op {
    UnMerge,
    UnFinal,
    Insert,
    Join,
    SelfLoop,
}

struct Builder {
    agents: Vec<String>,
    atoms: Vec<Atom>,
    initial: AtomIdx,
    final_atom: AtomIdx,
    fresh: usize,
    acyclic: bool,
}

fn one(t: AtomIdx) -> BTreeSet<AtomIdx> {
    BTreeSet::from([t])
}

impl Builder {
    fn atomic(agents: usize, results: usize, acyclic: bool) -> Self {
        let mut b = Builder {
            agents: (0..agents).map(|i| format!("A{i}")).collect(),
            atoms: Vec::new(),
            initial: 0,
            final_atom: 0,
            fresh: 0,
            acyclic,
        };
        let id = b.atom_id();
        let results = (0..results)
            .map(|_| b.result(&id, vec![BTreeSet::new(); agents]))
            .collect();
        b.atoms.push(Atom {
            id,
            parties: (0..agents).collect(),
            results,
        });
        b
    }

    fn atom_id(&mut self) -> String {
        let id = format!("n{}", self.fresh);
        self.fresh += 1;
        id
    }

    fn result(&mut self, atom: &str, next: Vec<BTreeSet<AtomIdx>>) -> ResultDef {
        let name = format!("r{}", self.fresh);
        self.fresh += 1;
        ResultDef {
            delta: TransformerExpr::atomic(outcome_tag(atom, &name)),
            name,
            next,
        }
    }

    fn non_final_outcomes(&self) -> Vec<(AtomIdx, usize)> {
        (0..self.atoms.len())
            .filter(|&a| a != self.final_atom)
            .flat_map(|a| (0..self.atoms[a].results.len()).map(move |r| (a, r)))
            .collect()
    }

    fn reaches(&self, from: AtomIdx, to: AtomIdx) -> bool {
        let mut seen = BTreeSet::from([from]);
        let mut stack = vec![from];
        while let Some(a) = stack.pop() {
            if a == to {
                return true;
            }
            for r in &self.atoms[a].results {
                for ts in &r.next {
                    for &t in ts {
                        if seen.insert(t) {
                            stack.push(t);
                        }
                    }
                }
            }
        }
        false
    }

    /// Split a non-final result in two with the same transitions.
    fn un_merge(&mut self, rng: &mut ChaCha8Rng) -> bool {
        let Some(&(a, r)) = self.non_final_outcomes().choose(rng) else {
            return false;
        };
        let next = self.atoms[a].results[r].next.clone();
        let id = self.atoms[a].id.clone();
        let res = self.result(&id, next);
        self.atoms[a].results.insert(r + 1, res);
        true
    }

    /// The final atom gets a single result leading to a fresh final atom
    /// that takes over its results.
    fn un_final(&mut self) -> bool {
        let old = self.final_atom;
        let id = self.atom_id();
        let k = self.agents.len();
        let mut moved = std::mem::take(&mut self.atoms[old].results);
        for r in &mut moved {
            r.delta = TransformerExpr::atomic(outcome_tag(&id, &r.name));
        }
        let nf = self.atoms.len();
        self.atoms.push(Atom {
            id,
            parties: (0..k).collect(),
            results: moved,
        });
        let old_id = self.atoms[old].id.clone();
        let res = self.result(&old_id, vec![one(nf); k]);
        self.atoms[old].results = vec![res];
        self.final_atom = nf;
        true
    }

    /// A fresh single-result atom for some parties of an outcome, placed
    /// between the outcome and its targets.
    fn insert(&mut self, rng: &mut ChaCha8Rng) -> bool {
        let Some(&(a, r)) = self.non_final_outcomes().choose(rng) else {
            return false;
        };
        let parties = self.atoms[a].parties.clone();
        let keep: Vec<usize> = parties
            .iter()
            .copied()
            .filter(|_| rng.gen_bool(0.5))
            .collect();
        let sub = if keep.is_empty() {
            vec![*parties.choose(rng).unwrap()]
        } else {
            keep
        };
        let new = self.atoms.len();
        let id = self.atom_id();
        let next: Vec<BTreeSet<AtomIdx>> = sub
            .iter()
            .map(|&p| {
                let i = self.atoms[a].party_pos(p).unwrap();
                std::mem::replace(&mut self.atoms[a].results[r].next[i], one(new))
            })
            .collect();
        let res = self.result(&id, next);
        self.atoms.push(Atom {
            id,
            parties: sub,
            results: vec![res],
        });
        true
    }

    /// Route the parties of a single-result atom n' through n' when an
    /// outcome already moves them exactly where n' would.
    fn join(&mut self, rng: &mut ChaCha8Rng) -> bool {
        let mut cands = Vec::new();
        for (a, r) in self.non_final_outcomes() {
            for (t, tgt) in self.atoms.iter().enumerate() {
                if t == a || t == self.initial || t == self.final_atom || tgt.results.len() != 1 {
                    continue;
                }
                let src = &self.atoms[a];
                let fits = tgt.parties.iter().enumerate().all(|(j, &p)| {
                    src.party_pos(p)
                        .is_some_and(|i| src.results[r].next[i] == tgt.results[0].next[j])
                });
                if fits && !(self.acyclic && self.reaches(t, a)) {
                    cands.push((a, r, t));
                }
            }
        }
        let Some(&(a, r, t)) = cands.choose(rng) else {
            return false;
        };
        for p in self.atoms[t].parties.clone() {
            let i = self.atoms[a].party_pos(p).unwrap();
            self.atoms[a].results[r].next[i] = one(t);
        }
        true
    }

    /// A self-loop result on a non-final atom.
    fn self_loop(&mut self, rng: &mut ChaCha8Rng) -> bool {
        let cands: Vec<AtomIdx> = (0..self.atoms.len())
            .filter(|&a| a != self.final_atom)
            .collect();
        let Some(&a) = cands.choose(rng) else {
            return false;
        };
        let id = self.atoms[a].id.clone();
        let k = self.atoms[a].parties.len();
        let res = self.result(&id, vec![one(a); k]);
        self.atoms[a].results.push(res);
        true
    }

    fn parts(self) -> NegotiationParts {
        NegotiationParts {
            agents: self.agents,
            atoms: self.atoms,
            initial: self.initial,
            final_atom: self.final_atom,
            space: None,
            interp: Interp::new(),
        }
    }
}

fn random_relations(parts: &mut NegotiationParts, states: usize, rng: &mut ChaCha8Rng) {
    let space = StateSpace::uniform(parts.agents.len(), states);
    let mut interp = Interp::new();
    for atom in &parts.atoms {
        for r in &atom.results {
            let mut pairs = Vec::new();
            for entry in space.assignments(&atom.parties) {
                let exits = space.assignments(&atom.parties);
                let count = rng.gen_range(1..=2);
                for exit in exits.choose_multiple(rng, count) {
                    pairs.push((entry.clone(), exit.clone()));
                }
            }
            interp.insert(
                outcome_tag(&atom.id, &r.name),
                ConcreteRelation::new(atom.parties.clone(), pairs),
            );
        }
    }
    parts.space = Some(space);
    parts.interp = interp;
}

/// A sound deterministic negotiation; acyclic when asked.
pub fn generate_sound(seed: u64, params: &GenParams) -> Negotiation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = Builder::atomic(params.agents.max(1), rng.gen_range(1..=2), params.acyclic);
    for _ in 0..params.steps {
        let mut ops = vec![Op::UnMerge, Op::Join];
        if b.atoms.len() < params.max_atoms {
            ops.extend([Op::Insert, Op::Insert, Op::UnFinal]);
        }
        if !params.acyclic {
            ops.push(Op::SelfLoop);
        }
        ops.shuffle(&mut rng);
        for op in ops {
            let done = match op {
                Op::UnMerge => b.un_merge(&mut rng),
                Op::UnFinal => b.un_final(),
                Op::Insert => b.insert(&mut rng),
                Op::Join => b.join(&mut rng),
                Op::SelfLoop => b.self_loop(&mut rng),
            };
            if done {
                break;
            }
        }
    }
    let mut parts = b.parts();
    if let Some(states) = params.states {
        random_relations(&mut parts, states, &mut rng);
    }
    Negotiation::new(parts).expect("inverse rules keep the negotiation well formed")
}

/// An unsound acyclic deterministic negotiation, obtained by redirecting one
/// arc of a sound one. None if no redirection within the attempt budget
/// breaks soundness.
pub fn generate_unsound_acyclic(seed: u64, params: &GenParams) -> Option<Negotiation> {
    let params = GenParams {
        acyclic: true,
        ..params.clone()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for attempt in 0..64u64 {
        let base = generate_sound(seed.wrapping_add(attempt.wrapping_mul(0x9e37_79b9)), &params);
        let arcs: Vec<_> = base
            .arcs()
            .into_iter()
            .filter(|a| a.source != base.final_atom())
            .collect();
        for _ in 0..16 {
            let Some(arc) = arcs.choose(&mut rng).copied() else {
                break;
            };
            let graph = base.graph();
            let targets: Vec<AtomIdx> = (0..base.atom_count())
                .filter(|&t| {
                    t != arc.target
                        && t != arc.source
                        && t != base.initial()
                        && base.atom(t).has_party(arc.agent)
                        && !graph.has_path(t, arc.source)
                })
                .collect();
            let Some(&t) = targets.choose(&mut rng) else {
                continue;
            };
            let mut parts = base.to_parts();
            let atom = &mut parts.atoms[arc.source];
            let i = atom.party_pos(arc.agent).unwrap();
            atom.results[arc.result].next[i] = one(t);
            let Ok(n) = Negotiation::new(parts) else {
                continue;
            };
            if n.graph().is_acyclic()
                && check_soundness(&n, DEFAULT_CAP).is_ok_and(|v| !v.sound)
            {
                return Some(n);
            }
        }
    }
    None
}
