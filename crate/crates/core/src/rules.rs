//! Reduction rules on negotiation diagrams and their guards.
//!
//! Every rule returns a fresh [`RuleApplication`]; the input is never
//! modified. Outcomes passed in are indices into the `before` negotiation.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::model::{self, AtomIdx, ModelError, Negotiation, Outcome, ResultDef};
use crate::transformers::TransformerExpr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RuleKind {
    Merge,
    Iteration,
    UselessArc,
    Shortcut,
    DShortcut,
}

impl RuleKind {
    pub const ALL: [RuleKind; 5] = [
        RuleKind::Merge,
        RuleKind::Iteration,
        RuleKind::UselessArc,
        RuleKind::Shortcut,
        RuleKind::DShortcut,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RuleKind::Merge => "merge",
            RuleKind::Iteration => "iteration",
            RuleKind::UselessArc => "useless_arc",
            RuleKind::Shortcut => "shortcut",
            RuleKind::DShortcut => "d_shortcut",
        }
    }
}

impl fmt::Display for RuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Where a rule was applied, by name, so it stays readable after indices
/// shift.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Site {
    Merge {
        atom: String,
        first: String,
        second: String,
    },
    Iteration {
        atom: String,
        result: String,
    },
    UselessArc {
        atom: String,
        agent: String,
        result: String,
        target: String,
    },
    Shortcut {
        atom: String,
        result: String,
        target: String,
    },
}

impl Site {
    pub fn atom(&self) -> &str {
        match self {
            Site::Merge { atom, .. }
            | Site::Iteration { atom, .. }
            | Site::UselessArc { atom, .. }
            | Site::Shortcut { atom, .. } => atom,
        }
    }

    pub fn result(&self) -> &str {
        match self {
            Site::Merge { first, .. } => first,
            Site::Iteration { result, .. }
            | Site::UselessArc { result, .. }
            | Site::Shortcut { result, .. } => result,
        }
    }

    pub fn target(&self) -> Option<&str> {
        match self {
            Site::Shortcut { target, .. } | Site::UselessArc { target, .. } => Some(target),
            _ => None,
        }
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Site::Merge {
                atom,
                first,
                second,
            } => write!(f, "{atom}.{first}+{second}"),
            Site::Iteration { atom, result } => write!(f, "{atom}.{result}"),
            Site::UselessArc {
                atom,
                agent,
                result,
                target,
            } => write!(f, "({atom},{agent},{result},{target})"),
            Site::Shortcut {
                atom,
                result,
                target,
            } => write!(f, "{atom}.{result}->{target}"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Produced {
    pub fresh_results: Vec<String>,
    pub removed_atoms: Vec<String>,
    /// Set when a shortcut into the final atom made the source final.
    pub new_final: Option<String>,
}

#[derive(Clone, Debug)]
pub struct RuleApplication {
    pub kind: RuleKind,
    pub site: Site,
    pub produced: Produced,
    pub before: Arc<Negotiation>,
    pub after: Arc<Negotiation>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GuardReport {
    pub site: Site,
    pub guard: &'static str,
    pub holds: bool,
    pub detail: String,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RuleError {
    #[error("{rule} guard fails: {reason}")]
    GuardFailed { rule: RuleKind, reason: String },
    #[error("removing the arc would break the path condition: {0}")]
    WouldBreakPathCondition(String),
    #[error("rule produced an invalid negotiation: {0}")]
    Invalid(#[from] ModelError),
}

fn guard_failed(rule: RuleKind, reason: impl Into<String>) -> RuleError {
    RuleError::GuardFailed {
        rule,
        reason: reason.into(),
    }
}

/// P_n ⊇ P_n2 and X(n,p,r) = {n2} for every party p of n2.
pub fn unconditionally_enables(n: &Negotiation, o: Outcome, n2: AtomIdx) -> bool {
    let src = n.atom(o.atom);
    n.atom(n2).parties.iter().all(|&p| match src.party_pos(p) {
        Some(i) => {
            let ts = &src.results[o.result].next[i];
            ts.len() == 1 && ts.contains(&n2)
        }
        None => false,
    })
}

/// Every party of n2 has an arc from o into n2, and no other outcome has an
/// arc into n2.
pub fn exclusive_access(n: &Negotiation, o: Outcome, n2: AtomIdx) -> bool {
    let covered = n.atom(n2).parties.iter().all(|&p| {
        n.next(o, p).is_some_and(|ts| ts.contains(&n2))
    });
    covered
        && n.outcomes().filter(|&o2| o2 != o).all(|o2| {
            n.atom(o2.atom)
                .results[o2.result]
                .next
                .iter()
                .all(|ts| !ts.contains(&n2))
        })
}

/// X(n,p,r) = {n2} for some party p.
pub fn commits_to(n: &Negotiation, o: Outcome, n2: AtomIdx) -> bool {
    n.result_def(o)
        .next
        .iter()
        .any(|ts| ts.len() == 1 && ts.contains(&n2))
}

/// All parties move to the same atoms. Final outcomes are uniform.
pub fn uniform(n: &Negotiation, o: Outcome) -> bool {
    let next = &n.result_def(o).next;
    next.windows(2).all(|w| w[0] == w[1])
}

/// The common singleton target of a uniform non-final outcome.
pub fn uniform_target(n: &Negotiation, o: Outcome) -> Option<AtomIdx> {
    if o.atom == n.final_atom() || !uniform(n, o) {
        return None;
    }
    let ts = &n.result_def(o).next[0];
    (ts.len() == 1).then(|| *ts.iter().next().unwrap())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShortcutCase {
    /// Target is not final and the outcome has exclusive access to it.
    Exclusive,
    /// Target is not final and another outcome commits to it.
    Committed,
    /// Target is the final atom, exclusive access, single source result.
    IntoFinal,
}

pub fn shortcut_guard(n: &Negotiation, o: Outcome, n2: AtomIdx) -> Result<ShortcutCase, String> {
    if n2 == o.atom {
        return Err("target equals the source atom".into());
    }
    if !unconditionally_enables(n, o, n2) {
        return Err(format!(
            "{} does not unconditionally enable {}",
            n.outcome_label(o),
            n.atom(n2).id
        ));
    }
    let exclusive = exclusive_access(n, o, n2);
    if n2 != n.final_atom() {
        if exclusive {
            return Ok(ShortcutCase::Exclusive);
        }
        let committed = n
            .outcomes()
            .any(|o2| o2 != o && commits_to(n, o2, n2));
        if committed {
            Ok(ShortcutCase::Committed)
        } else {
            Err(format!(
                "no exclusive access to {} and no other outcome commits to it",
                n.atom(n2).id
            ))
        }
    } else if !exclusive {
        Err("no exclusive access to the final atom".into())
    } else if n.atom(o.atom).results.len() != 1 {
        Err(format!(
            "{} is not the only result of {}",
            n.result_name(o),
            n.atom(o.atom).id
        ))
    } else {
        Ok(ShortcutCase::IntoFinal)
    }
}

pub fn shortcut_report(n: &Negotiation, o: Outcome, n2: AtomIdx) -> GuardReport {
    let (holds, detail) = match shortcut_guard(n, o, n2) {
        Ok(case) => (true, format!("{case:?}")),
        Err(e) => (false, e),
    };
    GuardReport {
        site: shortcut_site(n, o, n2),
        guard: "shortcut",
        holds,
        detail,
    }
}

pub fn merge_guard(n: &Negotiation, o1: Outcome, o2: Outcome) -> Result<(), String> {
    if o1.atom != o2.atom || o1.result == o2.result {
        return Err("two distinct results of one atom are needed".into());
    }
    if o1.atom == n.final_atom() {
        return Err("merging at the final atom is forbidden".into());
    }
    if n.result_def(o1).next != n.result_def(o2).next {
        return Err("the results lead to different atoms".into());
    }
    Ok(())
}

pub fn iteration_guard(n: &Negotiation, o: Outcome) -> Result<(), String> {
    let atom = n.atom(o.atom);
    let self_loop = atom.results[o.result]
        .next
        .iter()
        .all(|ts| ts.len() == 1 && ts.contains(&o.atom));
    if !self_loop {
        return Err(format!("{} is not a self-loop", n.outcome_label(o)));
    }
    if atom.results.len() < 2 {
        return Err("the self-loop is the only result".into());
    }
    Ok(())
}

/// First bullet of the useless-arc guard: a witness agent `q ≠ p` with
/// X(n,q,r) = {n'} for some n' ∈ X(n,p,r), n' ≠ n''. The witness must also
/// be a party of n'', otherwise n'' may be enabled right after (n,r).
pub fn useless_arc_witness(n: &Negotiation, arc: model::Arc) -> bool {
    let o = Outcome::new(arc.source, arc.result);
    let Some(xp) = n.next(o, arc.agent) else {
        return false;
    };
    if xp.len() < 2 || !xp.contains(&arc.target) {
        return false;
    }
    n.atom(arc.source).parties.iter().any(|&q| {
        q != arc.agent
            && n.atom(arc.target).parties.contains(&q)
            && n.next(o, q).is_some_and(|xq| {
                xq.len() == 1 && {
                    let t = *xq.iter().next().unwrap();
                    t != arc.target && xp.contains(&t)
                }
            })
    })
}

pub fn useless_arc_guard(n: &Negotiation, arc: model::Arc) -> Result<(), RuleError> {
    if !useless_arc_witness(n, arc) {
        return Err(guard_failed(
            RuleKind::UselessArc,
            "no witness agent with a singleton transition into another target of the hyperarc",
        ));
    }
    if n.graph().is_acyclic() {
        let others = n
            .arcs()
            .into_iter()
            .any(|a| a.target == arc.target && a != arc);
        if others {
            Ok(())
        } else {
            Err(RuleError::WouldBreakPathCondition(format!(
                "it is the only arc into {}",
                n.atom(arc.target).id
            )))
        }
    } else {
        remove_arc(n, arc).map(|_| ()).map_err(|e| {
            RuleError::WouldBreakPathCondition(e.to_string())
        })
    }
}

fn remove_arc(n: &Negotiation, arc: model::Arc) -> Result<Negotiation, ModelError> {
    let mut parts = n.to_parts();
    let atom = &mut parts.atoms[arc.source];
    let i = atom.party_pos(arc.agent).expect("arc agent is a party");
    atom.results[arc.result].next[i].remove(&arc.target);
    Negotiation::new(parts)
}

fn shortcut_site(n: &Negotiation, o: Outcome, n2: AtomIdx) -> Site {
    Site::Shortcut {
        atom: n.atom(o.atom).id.clone(),
        result: n.result_name(o).to_string(),
        target: n.atom(n2).id.clone(),
    }
}

fn fresh_name(base: String, taken: &HashSet<String>) -> String {
    if !taken.contains(&base) {
        return base;
    }
    (2..)
        .map(|k| format!("{base}_{k}"))
        .find(|c| !taken.contains(c))
        .unwrap()
}

fn finish(
    before: &Arc<Negotiation>,
    kind: RuleKind,
    site: Site,
    produced: Produced,
    parts: model::NegotiationParts,
) -> Result<RuleApplication, RuleError> {
    let after = Negotiation::new(parts)?;
    Ok(RuleApplication {
        kind,
        site,
        produced,
        before: Arc::clone(before),
        after: Arc::new(after),
    })
}

/// Replaces results `o1` and `o2` by one result whose transformer is the
/// union of theirs.
pub fn apply_merge(
    n: &Arc<Negotiation>,
    o1: Outcome,
    o2: Outcome,
) -> Result<RuleApplication, RuleError> {
    merge_guard(n, o1, o2).map_err(|e| guard_failed(RuleKind::Merge, e))?;
    let atom = n.atom(o1.atom);
    let r1 = &atom.results[o1.result];
    let r2 = &atom.results[o2.result];
    let taken: HashSet<String> = atom
        .results
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != o1.result && i != o2.result)
        .map(|(_, r)| r.name.clone())
        .collect();
    let name = fresh_name(format!("{}+{}", r1.name, r2.name), &taken);
    let merged = ResultDef {
        name: name.clone(),
        next: r1.next.clone(),
        delta: TransformerExpr::union([r1.delta.clone(), r2.delta.clone()]),
    };
    let site = Site::Merge {
        atom: atom.id.clone(),
        first: r1.name.clone(),
        second: r2.name.clone(),
    };
    let mut parts = n.to_parts();
    let results = &mut parts.atoms[o1.atom].results;
    results[o1.result] = merged;
    results.remove(o2.result);
    finish(
        n,
        RuleKind::Merge,
        site,
        Produced {
            fresh_results: vec![name],
            ..Produced::default()
        },
        parts,
    )
}

/// Removes a self-loop result, prefixing its star to every other result.
pub fn apply_iteration(n: &Arc<Negotiation>, o: Outcome) -> Result<RuleApplication, RuleError> {
    iteration_guard(n, o).map_err(|e| guard_failed(RuleKind::Iteration, e))?;
    let site = Site::Iteration {
        atom: n.atom(o.atom).id.clone(),
        result: n.result_name(o).to_string(),
    };
    let star = TransformerExpr::star(n.delta(o).clone());
    let mut parts = n.to_parts();
    let results = &mut parts.atoms[o.atom].results;
    results.remove(o.result);
    for r in results.iter_mut() {
        r.delta = star.then(&r.delta);
    }
    finish(n, RuleKind::Iteration, site, Produced::default(), parts)
}

pub fn apply_useless_arc(
    n: &Arc<Negotiation>,
    arc: model::Arc,
) -> Result<RuleApplication, RuleError> {
    useless_arc_guard(n, arc)?;
    let o = Outcome::new(arc.source, arc.result);
    let site = Site::UselessArc {
        atom: n.atom(arc.source).id.clone(),
        agent: n.agents()[arc.agent].clone(),
        result: n.result_name(o).to_string(),
        target: n.atom(arc.target).id.clone(),
    };
    let after = remove_arc(n, arc)?;
    Ok(RuleApplication {
        kind: RuleKind::UselessArc,
        site,
        produced: Produced::default(),
        before: Arc::clone(n),
        after: Arc::new(after),
    })
}

pub fn apply_shortcut(
    n: &Arc<Negotiation>,
    o: Outcome,
    n2: AtomIdx,
) -> Result<RuleApplication, RuleError> {
    let case = shortcut_guard(n, o, n2).map_err(|e| guard_failed(RuleKind::Shortcut, e))?;
    shortcut_action(n, o, n2, case, RuleKind::Shortcut)
}

/// Shortcut restricted to targets with at most one result.
pub fn apply_d_shortcut(
    n: &Arc<Negotiation>,
    o: Outcome,
    n2: AtomIdx,
) -> Result<RuleApplication, RuleError> {
    if n.atom(n2).results.len() > 1 {
        return Err(guard_failed(
            RuleKind::DShortcut,
            format!("{} has more than one result", n.atom(n2).id),
        ));
    }
    let case = shortcut_guard(n, o, n2).map_err(|e| guard_failed(RuleKind::DShortcut, e))?;
    shortcut_action(n, o, n2, case, RuleKind::DShortcut)
}

/// Shortcut with an explicit kind label; used by strategies that accept a
/// multi-result final atom at their d-shortcut step.
pub(crate) fn apply_shortcut_as(
    n: &Arc<Negotiation>,
    o: Outcome,
    n2: AtomIdx,
    kind: RuleKind,
) -> Result<RuleApplication, RuleError> {
    let case = shortcut_guard(n, o, n2).map_err(|e| guard_failed(kind, e))?;
    shortcut_action(n, o, n2, case, kind)
}

fn shortcut_action(
    n: &Arc<Negotiation>,
    o: Outcome,
    n2: AtomIdx,
    case: ShortcutCase,
    kind: RuleKind,
) -> Result<RuleApplication, RuleError> {
    let src = n.atom(o.atom);
    let tgt = n.atom(n2);
    let r = &src.results[o.result];
    let mut taken: HashSet<String> = src
        .results
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != o.result)
        .map(|(_, x)| x.name.clone())
        .collect();
    let mut fresh = Vec::new();
    for r2 in &tgt.results {
        let name = match case {
            ShortcutCase::IntoFinal => r2.name.clone(),
            _ => fresh_name(format!("{}>{}", r.name, r2.name), &taken),
        };
        taken.insert(name.clone());
        let next = src
            .parties
            .iter()
            .enumerate()
            .map(|(i, &p)| match tgt.party_pos(p) {
                Some(j) => r2.next[j].clone(),
                None => r.next[i].clone(),
            })
            .collect();
        fresh.push(ResultDef {
            name,
            next,
            delta: r.delta.then(&r2.delta),
        });
    }
    let site = shortcut_site(n, o, n2);
    let mut produced = Produced {
        fresh_results: fresh.iter().map(|f| f.name.clone()).collect(),
        ..Produced::default()
    };
    let mut parts = n.to_parts();
    parts.atoms[o.atom]
        .results
        .splice(o.result..o.result + 1, fresh);
    let remove = matches!(case, ShortcutCase::Exclusive | ShortcutCase::IntoFinal)
        && n2 != n.initial();
    if case == ShortcutCase::IntoFinal {
        parts.final_atom = o.atom;
        produced.new_final = Some(src.id.clone());
    }
    if remove {
        produced.removed_atoms.push(tgt.id.clone());
        remove_atom(&mut parts, n2);
    }
    finish(n, kind, site, produced, parts)
}

/// Drops atom `k`, shifting later indices down. Arcs into `k` must already
/// be gone.
fn remove_atom(parts: &mut model::NegotiationParts, k: AtomIdx) {
    parts.atoms.remove(k);
    let shift = |i: AtomIdx| if i > k { i - 1 } else { i };
    for atom in &mut parts.atoms {
        for r in &mut atom.results {
            for ts in &mut r.next {
                debug_assert!(!ts.contains(&k));
                *ts = ts.iter().map(|&i| shift(i)).collect();
            }
        }
    }
    parts.initial = shift(parts.initial);
    parts.final_atom = shift(parts.final_atom);
}

/// A concrete rule instance on a given negotiation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RuleInstance {
    Merge(Outcome, Outcome),
    Iteration(Outcome),
    UselessArc(model::Arc),
    Shortcut(Outcome, AtomIdx),
}

impl RuleInstance {
    pub fn outcome(&self) -> Outcome {
        match *self {
            RuleInstance::Merge(o, _)
            | RuleInstance::Iteration(o)
            | RuleInstance::Shortcut(o, _) => o,
            RuleInstance::UselessArc(a) => Outcome::new(a.source, a.result),
        }
    }
}

pub fn apply_instance(
    n: &Arc<Negotiation>,
    inst: RuleInstance,
) -> Result<RuleApplication, RuleError> {
    match inst {
        RuleInstance::Merge(a, b) => apply_merge(n, a, b),
        RuleInstance::Iteration(o) => apply_iteration(n, o),
        RuleInstance::UselessArc(arc) => apply_useless_arc(n, arc),
        RuleInstance::Shortcut(o, t) => apply_shortcut(n, o, t),
    }
}

/// Mergeable pairs ordered by atom index, then result names.
pub fn merge_pairs(n: &Negotiation) -> Vec<(Outcome, Outcome)> {
    let mut out = Vec::new();
    for (a, atom) in n.atoms().iter().enumerate() {
        if a == n.final_atom() {
            continue;
        }
        let mut order: Vec<usize> = (0..atom.results.len()).collect();
        order.sort_by(|&x, &y| atom.results[x].name.cmp(&atom.results[y].name));
        for (i, &x) in order.iter().enumerate() {
            for &y in &order[i + 1..] {
                if atom.results[x].next == atom.results[y].next {
                    out.push((Outcome::new(a, x), Outcome::new(a, y)));
                }
            }
        }
    }
    out
}

pub fn iteration_sites(n: &Negotiation) -> Vec<Outcome> {
    let mut v: Vec<Outcome> = n
        .outcomes()
        .filter(|&o| iteration_guard(n, o).is_ok())
        .collect();
    sort_by_name(n, &mut v);
    v
}

/// Candidate targets for a shortcut at `o`: atoms some party moves to alone.
fn shortcut_candidates(n: &Negotiation, o: Outcome) -> BTreeSet<AtomIdx> {
    n.result_def(o)
        .next
        .iter()
        .filter(|ts| ts.len() == 1)
        .flatten()
        .copied()
        .filter(|&t| t != o.atom)
        .collect()
}

/// Shortcut instances whose guard holds, ordered by atom index, result name
/// and target index.
pub fn shortcut_sites(n: &Negotiation) -> Vec<(Outcome, AtomIdx, ShortcutCase)> {
    let mut outs: Vec<Outcome> = n.outcomes().collect();
    sort_by_name(n, &mut outs);
    let mut v = Vec::new();
    for o in outs {
        for t in shortcut_candidates(n, o) {
            if let Ok(case) = shortcut_guard(n, o, t) {
                v.push((o, t, case));
            }
        }
    }
    v
}

pub fn useless_arcs(n: &Negotiation) -> Vec<model::Arc> {
    n.arcs()
        .into_iter()
        .filter(|&a| useless_arc_guard(n, a).is_ok())
        .collect()
}

pub fn applicable_instances(n: &Negotiation) -> Vec<RuleInstance> {
    let mut v: Vec<RuleInstance> = merge_pairs(n)
        .into_iter()
        .map(|(a, b)| RuleInstance::Merge(a, b))
        .collect();
    v.extend(iteration_sites(n).into_iter().map(RuleInstance::Iteration));
    v.extend(useless_arcs(n).into_iter().map(RuleInstance::UselessArc));
    v.extend(
        shortcut_sites(n)
            .into_iter()
            .map(|(o, t, _)| RuleInstance::Shortcut(o, t)),
    );
    v
}

/// Sorts outcomes by atom index, then result name.
pub fn sort_by_name(n: &Negotiation, v: &mut [Outcome]) {
    v.sort_by(|a, b| {
        a.atom
            .cmp(&b.atom)
            .then_with(|| n.result_name(*a).cmp(n.result_name(*b)))
    });
}

pub fn is_reducible(n: &Negotiation, o: Outcome) -> bool {
    if o.atom == n.final_atom() {
        return false;
    }
    if iteration_guard(n, o).is_ok() {
        return true;
    }
    if shortcut_candidates(n, o)
        .into_iter()
        .any(|t| shortcut_guard(n, o, t).is_ok())
    {
        return true;
    }
    let atom = n.atom(o.atom);
    let mergeable = (0..atom.results.len())
        .any(|r2| r2 != o.result && atom.results[r2].next == atom.results[o.result].next);
    if mergeable {
        return true;
    }
    atom.parties.iter().any(|&p| {
        n.next(o, p).is_some_and(|ts| {
            ts.iter().any(|&t| {
                let arc = model::Arc {
                    source: o.atom,
                    agent: p,
                    result: o.result,
                    target: t,
                };
                useless_arc_guard(n, arc).is_ok()
            })
        })
    })
}

/// R(N), ordered by atom index, then result name.
pub fn reducible_outcomes(n: &Negotiation) -> Vec<Outcome> {
    let mut v: Vec<Outcome> = n.outcomes().filter(|&o| is_reducible(n, o)).collect();
    sort_by_name(n, &mut v);
    v
}

/// R(N, k): reducible outcomes of atoms with exactly k parties.
pub fn reducible_outcomes_k(n: &Negotiation, k: usize) -> Vec<Outcome> {
    let mut v: Vec<Outcome> = n
        .outcomes()
        .filter(|&o| n.atom(o.atom).parties.len() == k && is_reducible(n, o))
        .collect();
    sort_by_name(n, &mut v);
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build;

    fn chain3() -> Arc<Negotiation> {
        Arc::new(
            build(
                &["A"],
                &[
                    ("n0", &["A"], &[("a", &[("A", &["n1"])])]),
                    ("n1", &["A"], &[("b", &[("A", &["nf"])])]),
                    ("nf", &["A"], &[("f", &[("A", &[])])]),
                ],
                "n0",
                "nf",
            )
            .unwrap(),
        )
    }

    #[test]
    fn chain_d_shortcut_and_final_shortcut() {
        let n = chain3();
        let o = n.outcome("n0", "a").unwrap();
        assert!(exclusive_access(&n, o, 1));
        let app = apply_d_shortcut(&n, o, 1).unwrap();
        assert_eq!(app.produced.removed_atoms, vec!["n1".to_string()]);
        let n2 = app.after;
        assert_eq!(n2.atom_count(), 2);
        let o = n2.outcome("n0", "a>b").unwrap();
        let app = apply_d_shortcut(&n2, o, n2.final_atom()).unwrap();
        let n3 = app.after;
        assert!(n3.is_atomic());
        assert_eq!(n3.atom(0).results[0].name, "f");
        assert_eq!(
            n3.atom(0).results[0].delta,
            TransformerExpr::concat([
                TransformerExpr::atomic("n0.a"),
                TransformerExpr::atomic("n1.b"),
                TransformerExpr::atomic("nf.f")
            ])
        );
        assert!(reducible_outcomes(&n3).is_empty());
    }

    #[test]
    fn merge_requires_equal_transitions_and_not_final() {
        let n = Arc::new(
            build(
                &["A"],
                &[
                    (
                        "n0",
                        &["A"],
                        &[("a", &[("A", &["nf"])]), ("b", &[("A", &["nf"])]), ("c", &[("A", &["nf"])])],
                    ),
                    ("nf", &["A"], &[("f", &[("A", &[])]), ("g", &[("A", &[])])]),
                ],
                "n0",
                "nf",
            )
            .unwrap(),
        );
        assert_eq!(merge_pairs(&n).len(), 3);
        let app = apply_merge(&n, Outcome::new(0, 0), Outcome::new(0, 1)).unwrap();
        assert_eq!(app.after.atom(0).results[0].name, "a+b");
        let app2 = apply_merge(&app.after, Outcome::new(0, 0), Outcome::new(0, 1)).unwrap();
        assert_eq!(app2.after.atom(0).results.len(), 1);
        assert!(matches!(
            apply_merge(&n, Outcome::new(1, 0), Outcome::new(1, 1)),
            Err(RuleError::GuardFailed { .. })
        ));
    }

    #[test]
    fn iteration_removes_self_loop() {
        let n = Arc::new(
            build(
                &["A"],
                &[
                    ("n0", &["A"], &[("a", &[("A", &["n1"])])]),
                    ("n1", &["A"], &[("l", &[("A", &["n1"])]), ("b", &[("A", &["nf"])])]),
                    ("nf", &["A"], &[("f", &[("A", &[])])]),
                ],
                "n0",
                "nf",
            )
            .unwrap(),
        );
        assert_eq!(iteration_sites(&n), vec![Outcome::new(1, 0)]);
        let app = apply_iteration(&n, Outcome::new(1, 0)).unwrap();
        assert_eq!(app.after.atom(1).results.len(), 1);
        assert_eq!(app.after.atom(1).results[0].delta.to_string(), "n1.l*·n1.b");
        assert!(app.after.graph().is_acyclic());
    }

    #[test]
    fn deterministic_nets_have_no_useless_arcs() {
        let n = chain3();
        assert!(useless_arcs(&n).is_empty());
    }

    #[test]
    fn committed_shortcut_keeps_target() {
        // two results of n0 both lead to n1
        let n = Arc::new(
            build(
                &["A"],
                &[
                    ("n0", &["A"], &[("a", &[("A", &["n1"])]), ("b", &[("A", &["n1"])])]),
                    ("n1", &["A"], &[("c", &[("A", &["nf"])])]),
                    ("nf", &["A"], &[("f", &[("A", &[])])]),
                ],
                "n0",
                "nf",
            )
            .unwrap(),
        );
        let o = Outcome::new(0, 0);
        assert_eq!(shortcut_guard(&n, o, 1), Ok(ShortcutCase::Committed));
        let app = apply_shortcut(&n, o, 1).unwrap();
        assert!(app.produced.removed_atoms.is_empty());
        assert_eq!(app.after.atom(0).results[0].name, "a>c");
    }
}
