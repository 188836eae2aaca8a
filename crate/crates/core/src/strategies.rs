//! Reduction strategies: the polynomial algorithms for acyclic, one-agent and
//! general deterministic negotiations, a maximal-sequence driver for acyclic
//! weakly deterministic ones, and the index measure.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use petgraph::algo::toposort;
use petgraph::graph::DiGraph;
use thiserror::Error;

use crate::model::{self, AtomIdx, Negotiation, Outcome};
use crate::rules::{
    self, RuleApplication, RuleError, RuleKind, ShortcutCase, merge_pairs, shortcut_sites,
};
use crate::semantics::{self, ExplorationOrder, Marking, SemanticsError};
use crate::state_elim::Summary;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Index {
    Finite(u64),
    Infinite,
}

impl Index {
    pub fn is_finite(self) -> bool {
        matches!(self, Index::Finite(_))
    }
}

impl std::ops::Add for Index {
    type Output = Index;

    fn add(self, rhs: Index) -> Index {
        match (self, rhs) {
            (Index::Finite(a), Index::Finite(b)) => Index::Finite(a + b),
            _ => Index::Infinite,
        }
    }
}

impl fmt::Display for Index {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Index::Finite(v) => write!(f, "{v}"),
            Index::Infinite => f.write_str("∞"),
        }
    }
}

/// Length of a longest maximal (n,r)-sequence minus one.
pub fn outcome_index(n: &Negotiation, o: Outcome, cap: usize) -> Result<Index, SemanticsError> {
    let start = semantics::step(n, &Marking::at_atom(n, o.atom), o)?;
    let rg = semantics::explore(n, start, cap, ExplorationOrder::BreadthFirst)?;
    let mut g = DiGraph::<(), ()>::new();
    let nodes: Vec<_> = (0..rg.node_count()).map(|_| g.add_node(())).collect();
    for e in &rg.edges {
        g.add_edge(nodes[e.source], nodes[e.target], ());
    }
    let Ok(order) = toposort(&g, None) else {
        return Ok(Index::Infinite);
    };
    let mut longest = vec![0u64; rg.node_count()];
    for v in order.into_iter().rev() {
        let v = v.index();
        longest[v] = rg
            .out_edges(v)
            .map(|e| longest[e.target] + 1)
            .max()
            .unwrap_or(0);
    }
    Ok(Index::Finite(longest[0]))
}

/// I(N): the sum of the indices of all non-final outcomes.
pub fn index(n: &Negotiation, cap: usize) -> Result<Index, SemanticsError> {
    let mut total = Index::Finite(0);
    for o in n.outcomes().filter(|o| o.atom != n.final_atom()) {
        total = total + outcome_index(n, o, cap)?;
    }
    Ok(total)
}

/// A total order on atoms, fixed on the input and carried by id through a
/// reduction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OutcomeOrder {
    rank: HashMap<String, usize>,
}

impl OutcomeOrder {
    pub fn declaration(n: &Negotiation) -> Self {
        Self::from_ids(n.atoms().iter().map(|a| a.id.clone()))
    }

    pub fn from_ids<I: IntoIterator<Item = String>>(ids: I) -> Self {
        OutcomeOrder {
            rank: ids.into_iter().enumerate().map(|(i, id)| (id, i)).collect(),
        }
    }

    pub fn rank(&self, n: &Negotiation, a: AtomIdx) -> usize {
        self.rank.get(&n.atom(a).id).copied().unwrap_or(usize::MAX)
    }

    pub fn precedes(&self, n: &Negotiation, a: AtomIdx, b: AtomIdx) -> bool {
        self.rank(n, a) < self.rank(n, b)
    }

    /// Key of a uniform outcome `src → tgt`: target first, then source.
    fn outcome_key(&self, n: &Negotiation, src: AtomIdx, tgt: AtomIdx) -> (usize, usize) {
        (self.rank(n, tgt), self.rank(n, src))
    }
}

/// The line of the algorithm that selected an application.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StrategyStep {
    Merge,
    Iteration,
    DShortcutNonUniform,
    MinimalBackwardShortcut,
    DShortcut,
    UselessArc,
    Shortcut,
}

#[derive(Clone, Debug)]
pub struct TraceEntry {
    pub stage: usize,
    pub step: StrategyStep,
    pub app: RuleApplication,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnsoundReason {
    GuardExhausted,
    CounterExceeded,
    ResidualNonAtomic,
}

impl fmt::Display for UnsoundReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UnsoundReason::GuardExhausted => "no rule applies to a reducible outcome",
            UnsoundReason::CounterExceeded => "application counter exceeded the bound",
            UnsoundReason::ResidualNonAtomic => "irreducible but not atomic",
        })
    }
}

#[derive(Clone, Debug)]
pub enum Verdict {
    Summarized { result: Arc<Negotiation>, summary: Summary },
    Unsound(UnsoundReason),
    /// Application budget exhausted before a decision.
    Unknown,
}

#[derive(Clone, Debug)]
pub struct ReductionTrace {
    pub input: Arc<Negotiation>,
    pub entries: Vec<TraceEntry>,
    pub per_kind: BTreeMap<RuleKind, usize>,
    pub verdict: Verdict,
    /// Theoretical bound on the number of applications, from the input.
    pub bound: Option<u64>,
    /// Broken invariants observed during the run; empty on correct runs.
    pub violations: Vec<String>,
}

impl ReductionTrace {
    pub fn total(&self) -> usize {
        self.entries.len()
    }

    pub fn current(&self) -> &Arc<Negotiation> {
        self.entries
            .last()
            .map(|e| &e.app.after)
            .unwrap_or(&self.input)
    }

    pub fn is_summarized(&self) -> bool {
        matches!(self.verdict, Verdict::Summarized { .. })
    }

    pub fn summary(&self) -> Option<&Summary> {
        match &self.verdict {
            Verdict::Summarized { summary, .. } => Some(summary),
            _ => None,
        }
    }

    /// Every application starts from the negotiation the previous one
    /// produced.
    pub fn is_chained(&self) -> bool {
        let mut cur = &self.input;
        for e in &self.entries {
            if !Arc::ptr_eq(cur, &e.app.before) {
                return false;
            }
            cur = &e.app.after;
        }
        true
    }

    /// One line per application:
    /// `k=<stage> rule=<kind> site=<atom>.<result> total=<n>`.
    pub fn log_lines(&self) -> Vec<String> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, e)| {
                format!(
                    "k={} rule={} site={}.{} total={}",
                    e.stage,
                    e.app.kind,
                    e.app.site.atom(),
                    e.app.site.result(),
                    i + 1
                )
            })
            .collect()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StrategyError {
    #[error("the negotiation is not acyclic")]
    NotAcyclic,
    #[error("the negotiation has more than one agent and is not a replication")]
    NotOneAgentOrReplication,
    #[error("the negotiation is not deterministic")]
    NotDeterministic,
    #[error("the negotiation is not weakly deterministic")]
    NotWeaklyDeterministic,
    #[error("no strategy covers this class: {0}")]
    Unsupported(String),
    #[error("rule application failed: {0}")]
    Rule(#[from] RuleError),
}

pub fn bound_acyclic(n: &Negotiation) -> u64 {
    let (k, l) = size(n);
    k * l
}

pub fn bound_one_agent(n: &Negotiation) -> u64 {
    let (k, l) = size(n);
    2 * k.pow(3) + k * k + l
}

pub fn bound_general(n: &Negotiation) -> u64 {
    let (k, l) = size(n);
    2 * k.pow(3) + k * k + k * l + l
}

fn size(n: &Negotiation) -> (u64, u64) {
    (n.atom_count() as u64, n.outcome_count() as u64)
}

/// The per-final-result transformers of an atomic negotiation.
pub fn atomic_summary(n: &Negotiation) -> Summary {
    n.atom(n.final_atom())
        .results
        .iter()
        .map(|r| (r.name.clone(), r.delta.clone()))
        .collect()
}

#[derive(Clone, Copy, Debug)]
enum Choice {
    Merge(Outcome, Outcome),
    Iteration(Outcome),
    UselessArc(model::Arc),
    Shortcut(Outcome, AtomIdx, RuleKind),
}

struct Runner {
    input: Arc<Negotiation>,
    current: Arc<Negotiation>,
    entries: Vec<TraceEntry>,
    per_kind: BTreeMap<RuleKind, usize>,
    violations: Vec<String>,
    bound: Option<u64>,
}

impl Runner {
    fn new(n: &Negotiation, bound: Option<u64>) -> Self {
        let input = Arc::new(n.clone());
        Runner {
            current: Arc::clone(&input),
            input,
            entries: Vec::new(),
            per_kind: BTreeMap::new(),
            violations: Vec::new(),
            bound,
        }
    }

    fn apply(&mut self, stage: usize, step: StrategyStep, c: Choice) -> Result<(), StrategyError> {
        let n = &self.current;
        let app = match c {
            Choice::Merge(a, b) => rules::apply_merge(n, a, b)?,
            Choice::Iteration(o) => rules::apply_iteration(n, o)?,
            Choice::UselessArc(arc) => rules::apply_useless_arc(n, arc)?,
            Choice::Shortcut(o, t, kind) => rules::apply_shortcut_as(n, o, t, kind)?,
        };
        *self.per_kind.entry(app.kind).or_default() += 1;
        self.current = Arc::clone(&app.after);
        self.entries.push(TraceEntry { stage, step, app });
        Ok(())
    }

    fn count(&self) -> u64 {
        self.entries.len() as u64
    }

    fn finish(mut self, unsound: Option<UnsoundReason>) -> ReductionTrace {
        if let Some(b) = self.bound {
            if self.count() > b && unsound != Some(UnsoundReason::CounterExceeded) {
                self.violations
                    .push(format!("{} applications exceed the bound {b}", self.count()));
            }
        }
        let verdict = match unsound {
            Some(r) => Verdict::Unsound(r),
            None if self.current.is_atomic() => Verdict::Summarized {
                summary: atomic_summary(&self.current),
                result: Arc::clone(&self.current),
            },
            None => Verdict::Unsound(UnsoundReason::ResidualNonAtomic),
        };
        ReductionTrace {
            input: self.input,
            entries: self.entries,
            per_kind: self.per_kind,
            verdict,
            bound: self.bound,
            violations: self.violations,
        }
    }
}

/// A shortcut counts as a d-shortcut when its target has at most one result,
/// or when it folds a single-result atom into the final atom.
fn d_eligible(n: &Negotiation, t: AtomIdx, case: ShortcutCase) -> bool {
    n.atom(t).results.len() <= 1 || case == ShortcutCase::IntoFinal
}

fn first_merge(n: &Negotiation, keep: impl Fn(Outcome) -> bool) -> Option<Choice> {
    merge_pairs(n)
        .into_iter()
        .find(|&(a, _)| keep(a))
        .map(|(a, b)| Choice::Merge(a, b))
}

fn first_iteration(n: &Negotiation, keep: impl Fn(Outcome) -> bool) -> Option<Choice> {
    rules::iteration_sites(n)
        .into_iter()
        .find(|&o| keep(o))
        .map(Choice::Iteration)
}

fn first_d_shortcut(n: &Negotiation, keep: impl Fn(Outcome) -> bool) -> Option<Choice> {
    shortcut_sites(n)
        .into_iter()
        .find(|&(o, t, case)| keep(o) && d_eligible(n, t, case))
        .map(|(o, t, _)| Choice::Shortcut(o, t, RuleKind::DShortcut))
}

/// The ≺-minimal backward uniform outcome whose shortcut guard holds.
fn min_backward(
    n: &Negotiation,
    order: &OutcomeOrder,
    keep: impl Fn(Outcome) -> bool,
) -> Option<Choice> {
    n.outcomes()
        .filter(|&o| keep(o))
        .filter_map(|o| {
            let t = rules::uniform_target(n, o)?;
            let backward = t != n.final_atom() && order.precedes(n, t, o.atom);
            (backward && rules::shortcut_guard(n, o, t).is_ok()).then_some((o, t))
        })
        .min_by(|&(o1, t1), &(o2, t2)| {
            order
                .outcome_key(n, o1.atom, t1)
                .cmp(&order.outcome_key(n, o2.atom, t2))
                .then_with(|| n.result_name(o1).cmp(n.result_name(o2)))
        })
        .map(|(o, t)| Choice::Shortcut(o, t, RuleKind::Shortcut))
}

/// Algorithm for acyclic deterministic negotiations: merge first, then
/// d-shortcut; stuck on a reducible outcome means unsound.
pub fn run_acyclic(n: &Negotiation) -> Result<ReductionTrace, StrategyError> {
    if !n.graph().is_acyclic() {
        return Err(StrategyError::NotAcyclic);
    }
    let bound = bound_acyclic(n);
    let mut run = Runner::new(n, Some(bound));
    loop {
        let cur = Arc::clone(&run.current);
        if rules::reducible_outcomes(&cur).is_empty() {
            return Ok(run.finish(None));
        }
        if run.count() > 4 * bound + 64 {
            return Ok(run.finish(Some(UnsoundReason::CounterExceeded)));
        }
        if let Some(c) = first_merge(&cur, |_| true) {
            run.apply(0, StrategyStep::Merge, c)?;
        } else if let Some(c) = first_d_shortcut(&cur, |_| true) {
            run.apply(0, StrategyStep::DShortcut, c)?;
        } else {
            return Ok(run.finish(Some(UnsoundReason::GuardExhausted)));
        }
    }
}

fn is_replication(n: &Negotiation) -> bool {
    let p = &n.atom(0).parties;
    n.atoms().iter().all(|a| &a.parties == p)
}

/// Algorithm for one-agent negotiations and replications: merge, iteration,
/// shortcut at the minimal backward outcome, d-shortcut.
pub fn run_one_agent(n: &Negotiation, order: &OutcomeOrder) -> Result<ReductionTrace, StrategyError> {
    if n.agent_count() != 1 && !is_replication(n) {
        return Err(StrategyError::NotOneAgentOrReplication);
    }
    let bound = bound_one_agent(n);
    let mut run = Runner::new(n, Some(bound));
    let mut last_backward: Option<(usize, usize)> = None;
    loop {
        let cur = Arc::clone(&run.current);
        if rules::reducible_outcomes(&cur).is_empty() {
            return Ok(run.finish(None));
        }
        if run.count() > 4 * bound + 64 {
            return Ok(run.finish(Some(UnsoundReason::CounterExceeded)));
        }
        let all = |_| true;
        if let Some(c) = first_merge(&cur, all) {
            run.apply(0, StrategyStep::Merge, c)?;
        } else if let Some(c) = first_iteration(&cur, all) {
            run.apply(0, StrategyStep::Iteration, c)?;
        } else if let Some(c) = min_backward(&cur, order, all) {
            if let Choice::Shortcut(o, t, _) = c {
                let key = order.outcome_key(&cur, o.atom, t);
                if last_backward.is_some_and(|prev| prev >= key) {
                    run.violations.push(format!(
                        "backward shortcut {}→{} is not above the previous one",
                        cur.atom(o.atom).id,
                        cur.atom(t).id
                    ));
                }
                last_backward = Some(key);
            }
            run.apply(0, StrategyStep::MinimalBackwardShortcut, c)?;
        } else if let Some(c) = first_d_shortcut(&cur, all) {
            run.apply(0, StrategyStep::DShortcut, c)?;
        } else {
            return Ok(run.finish(Some(UnsoundReason::GuardExhausted)));
        }
    }
}

/// Staged algorithm for deterministic negotiations with an application
/// counter. Stage k works on outcomes of atoms with k parties.
pub fn run_general(n: &Negotiation, order: &OutcomeOrder) -> Result<ReductionTrace, StrategyError> {
    if !n.is_deterministic() {
        return Err(StrategyError::NotDeterministic);
    }
    let bound = bound_general(n);
    let mut run = Runner::new(n, Some(bound));
    for k in 1..=n.agent_count() {
        loop {
            let cur = Arc::clone(&run.current);
            if rules::reducible_outcomes_k(&cur, k).is_empty() {
                break;
            }
            if run.count() > bound {
                return Ok(run.finish(Some(UnsoundReason::CounterExceeded)));
            }
            let in_stage = |o: Outcome| cur.atom(o.atom).parties.len() == k;
            let non_uniform = |o: Outcome| in_stage(o) && !rules::uniform(&cur, o);
            let choice = if let Some(c) = first_merge(&cur, in_stage) {
                (StrategyStep::Merge, c)
            } else if let Some(c) = first_iteration(&cur, in_stage) {
                (StrategyStep::Iteration, c)
            } else if let Some(c) = first_d_shortcut(&cur, non_uniform) {
                (StrategyStep::DShortcutNonUniform, c)
            } else if let Some(c) = min_backward(&cur, order, in_stage) {
                (StrategyStep::MinimalBackwardShortcut, c)
            } else if let Some(c) = first_d_shortcut(&cur, in_stage) {
                (StrategyStep::DShortcut, c)
            } else {
                return Ok(run.finish(Some(UnsoundReason::GuardExhausted)));
            };
            run.apply(k, choice.0, choice.1)?;
            let after = Arc::clone(&run.current);
            for j in 1..k {
                if !rules::reducible_outcomes_k(&after, j).is_empty() {
                    run.violations.push(format!(
                        "application {} in stage {k} created a {j}-reducible outcome",
                        run.count()
                    ));
                }
            }
        }
    }
    Ok(run.finish(None))
}

pub const DEFAULT_BUDGET: usize = 100_000;

/// An arbitrary maximal sequence of merge, useless-arc and shortcut
/// applications, for acyclic weakly deterministic negotiations.
pub fn run_acyclic_wd(n: &Negotiation, budget: usize) -> Result<ReductionTrace, StrategyError> {
    let class = n.classify();
    if !class.acyclic {
        return Err(StrategyError::NotAcyclic);
    }
    if !class.weakly_deterministic {
        return Err(StrategyError::NotWeaklyDeterministic);
    }
    let mut run = Runner::new(n, None);
    loop {
        let cur = Arc::clone(&run.current);
        if let Some(c) = first_merge(&cur, |_| true) {
            run.apply(0, StrategyStep::Merge, c)?;
        } else if let Some(&arc) = rules::useless_arcs(&cur).first() {
            run.apply(0, StrategyStep::UselessArc, Choice::UselessArc(arc))?;
        } else if let Some(&(o, t, _)) = shortcut_sites(&cur).first() {
            run.apply(0, StrategyStep::Shortcut, Choice::Shortcut(o, t, RuleKind::Shortcut))?;
        } else {
            return Ok(run.finish(None));
        }
        if run.entries.len() >= budget {
            let mut t = run.finish(None);
            if !t.is_summarized() {
                t.verdict = Verdict::Unknown;
            }
            return Ok(t);
        }
    }
}

/// Picks the strategy matching the classification of `n`.
pub fn reduce(n: &Negotiation) -> Result<ReductionTrace, StrategyError> {
    let class = n.classify();
    let order = OutcomeOrder::declaration(n);
    if class.deterministic && n.agent_count() == 1 {
        run_one_agent(n, &order)
    } else if class.deterministic && class.acyclic {
        run_acyclic(n)
    } else if class.deterministic {
        run_general(n, &order)
    } else if class.acyclic && class.weakly_deterministic {
        run_acyclic_wd(n, DEFAULT_BUDGET)
    } else {
        Err(StrategyError::Unsupported(
            "cyclic and not deterministic".into(),
        ))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExpStrategy {
    /// Shortcut at the initial atom whenever possible.
    InitialPriority,
    /// Merge, then d-shortcut, then shortcut, all at the initial atom.
    Alternating,
}

#[derive(Clone, Debug)]
pub struct ExpDemo {
    pub trace: ReductionTrace,
    /// Largest number of results the initial atom had during the run.
    pub peak_initial_results: usize,
}

/// Runs one of the two contrasting strategies on a member of the
/// exponential family.
pub fn run_exponential_demo(
    n: &Negotiation,
    strategy: ExpStrategy,
    budget: usize,
) -> Result<ExpDemo, StrategyError> {
    let init_id = n.atom(n.initial()).id.clone();
    let mut run = Runner::new(n, None);
    let mut peak = n.atom(n.initial()).results.len();
    loop {
        let cur = Arc::clone(&run.current);
        let init = cur.atom_index(&init_id).expect("initial atom is never removed");
        let at_init = |o: Outcome| o.atom == init;
        let mut init_shortcuts: Vec<_> = shortcut_sites(&cur)
            .into_iter()
            .filter(|&(o, _, _)| at_init(o))
            .collect();
        init_shortcuts.sort_by(|a, b| {
            a.1.cmp(&b.1)
                .then_with(|| cur.result_name(a.0).cmp(cur.result_name(b.0)))
        });
        let first_init = init_shortcuts
            .first()
            .map(|&(o, t, _)| Choice::Shortcut(o, t, RuleKind::Shortcut));
        let first_init_d = init_shortcuts
            .iter()
            .find(|&&(_, t, case)| d_eligible(&cur, t, case))
            .map(|&(o, t, _)| Choice::Shortcut(o, t, RuleKind::DShortcut));
        let fallback = || {
            first_merge(&cur, |_| true)
                .map(|c| (StrategyStep::Merge, c))
                .or_else(|| first_d_shortcut(&cur, |_| true).map(|c| (StrategyStep::DShortcut, c)))
                .or_else(|| {
                    shortcut_sites(&cur)
                        .first()
                        .map(|&(o, t, _)| (StrategyStep::Shortcut, Choice::Shortcut(o, t, RuleKind::Shortcut)))
                })
        };
        let choice = match strategy {
            ExpStrategy::InitialPriority => first_init
                .map(|c| (StrategyStep::Shortcut, c))
                .or_else(fallback),
            ExpStrategy::Alternating => first_merge(&cur, at_init)
                .map(|c| (StrategyStep::Merge, c))
                .or_else(|| first_init_d.map(|c| (StrategyStep::DShortcut, c)))
                .or_else(|| first_init.map(|c| (StrategyStep::Shortcut, c)))
                .or_else(fallback),
        };
        let Some((step, c)) = choice else {
            break;
        };
        run.apply(0, step, c)?;
        let after = &run.current;
        if let Some(i) = after.atom_index(&init_id) {
            peak = peak.max(after.atom(i).results.len());
        }
        if run.entries.len() >= budget {
            let mut trace = run.finish(None);
            trace.verdict = Verdict::Unknown;
            return Ok(ExpDemo {
                trace,
                peak_initial_results: peak,
            });
        }
    }
    Ok(ExpDemo {
        trace: run.finish(None),
        peak_initial_results: peak,
    })
}
