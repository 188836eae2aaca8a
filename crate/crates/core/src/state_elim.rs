//! Summaries by state elimination on the labelled reachability graph.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::model::Negotiation;
use crate::semantics::{reachability, Marking, ReachabilityGraph, SemanticsError};
use crate::transformers::TransformerExpr;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledEdge {
    pub source: usize,
    pub target: usize,
    pub label: TransformerExpr,
    /// Final result carried by edges into the final marking.
    pub tag: Option<String>,
}

#[derive(Clone, Debug)]
pub struct LabeledRG {
    nodes: Vec<Marking>,
    keys: Vec<String>,
    alive: Vec<bool>,
    edges: Vec<LabeledEdge>,
    x0: usize,
    xf: Option<usize>,
}

#[derive(Debug, Error, Clone)]
pub enum StateElimError {
    #[error("rule ({rule}) does not apply: {reason}")]
    GuardFailed { rule: u8, reason: String },
    #[error(transparent)]
    Semantics(#[from] SemanticsError),
    #[error("state elimination stopped with {} extra nodes", .residual.extra_nodes())]
    NotFullyReducible { residual: Box<LabeledRG> },
}

/// Final result name to transformer expression.
pub type Summary = BTreeMap<String, TransformerExpr>;

impl LabeledRG {
    pub fn from_rg(n: &Negotiation, rg: &ReachabilityGraph) -> Self {
        let edges = rg
            .edges
            .iter()
            .map(|e| LabeledEdge {
                source: e.source,
                target: e.target,
                label: n.delta(e.outcome).clone(),
                tag: (Some(e.target) == rg.final_node)
                    .then(|| n.result_name(e.outcome).to_string()),
            })
            .collect();
        LabeledRG {
            keys: rg.nodes.iter().map(|m| m.key(n)).collect(),
            nodes: rg.nodes.clone(),
            alive: vec![true; rg.node_count()],
            edges,
            x0: 0,
            xf: rg.final_node,
        }
    }

    pub fn initial(&self) -> usize {
        self.x0
    }

    pub fn final_node(&self) -> Option<usize> {
        self.xf
    }

    pub fn marking(&self, v: usize) -> &Marking {
        &self.nodes[v]
    }

    pub fn key(&self, v: usize) -> &str {
        &self.keys[v]
    }

    pub fn nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nodes.len()).filter(|&v| self.alive[v])
    }

    pub fn node_count(&self) -> usize {
        self.alive.iter().filter(|&&a| a).count()
    }

    pub fn extra_nodes(&self) -> usize {
        self.nodes()
            .filter(|&v| v != self.x0 && Some(v) != self.xf)
            .count()
    }

    pub fn edges(&self) -> &[LabeledEdge] {
        &self.edges
    }

    fn edges_between(&self, v1: usize, v2: usize) -> Vec<usize> {
        (0..self.edges.len())
            .filter(|&i| self.edges[i].source == v1 && self.edges[i].target == v2)
            .collect()
    }

    /// Rule (1): parallel edges `v1 → v2` (with `v2` not final) become one
    /// edge labelled by their union.
    pub fn elim_parallel(&mut self, v1: usize, v2: usize) -> Result<(), StateElimError> {
        if Some(v2) == self.xf {
            return Err(StateElimError::GuardFailed {
                rule: 1,
                reason: "edges into the final marking are kept apart".into(),
            });
        }
        let idx = self.edges_between(v1, v2);
        if idx.len() < 2 {
            return Err(StateElimError::GuardFailed {
                rule: 1,
                reason: format!("fewer than two edges {v1} -> {v2}"),
            });
        }
        let label = TransformerExpr::union(idx.iter().map(|&i| self.edges[i].label.clone()));
        let first = idx[0];
        self.edges[first].label = label;
        let drop: Vec<usize> = idx[1..].to_vec();
        let mut k = 0;
        self.edges.retain(|_| {
            let keep = !drop.contains(&k);
            k += 1;
            keep
        });
        Ok(())
    }

    /// Rule (2): removes the self-loop at `v`, prefixing its star to every
    /// outgoing edge.
    pub fn elim_selfloop(&mut self, v: usize) -> Result<(), StateElimError> {
        let loops = self.edges_between(v, v);
        if loops.len() != 1 {
            return Err(StateElimError::GuardFailed {
                rule: 2,
                reason: format!("{} self-loops at {v}", loops.len()),
            });
        }
        let star = TransformerExpr::star(self.edges[loops[0]].label.clone());
        self.edges.remove(loops[0]);
        for e in self.edges.iter_mut().filter(|e| e.source == v) {
            e.label = star.then(&e.label);
        }
        Ok(())
    }

    /// Rule (3): bypasses `v` with shortcut edges and removes it.
    pub fn elim_node(&mut self, v: usize) -> Result<(), StateElimError> {
        let fail = |reason: &str| StateElimError::GuardFailed {
            rule: 3,
            reason: reason.to_string(),
        };
        if v == self.x0 || Some(v) == self.xf || !self.alive[v] {
            return Err(fail("node is the initial or final marking, or already removed"));
        }
        if !self.edges_between(v, v).is_empty() {
            return Err(fail("node has a self-loop"));
        }
        let ins: Vec<LabeledEdge> = self.edges.iter().filter(|e| e.target == v).cloned().collect();
        let outs: Vec<LabeledEdge> = self.edges.iter().filter(|e| e.source == v).cloned().collect();
        if outs.is_empty() {
            return Err(fail("node has no successor"));
        }
        self.edges.retain(|e| e.source != v && e.target != v);
        for i in &ins {
            for o in &outs {
                self.edges.push(LabeledEdge {
                    source: i.source,
                    target: o.target,
                    label: i.label.then(&o.label),
                    tag: o.tag.clone(),
                });
            }
        }
        self.alive[v] = false;
        Ok(())
    }

    fn parallel_pair(&self) -> Option<(usize, usize)> {
        let mut seen = BTreeMap::new();
        for e in &self.edges {
            if Some(e.target) == self.xf {
                continue;
            }
            let c = seen.entry((e.source, e.target)).or_insert(0);
            *c += 1;
            if *c >= 2 {
                return Some((e.source, e.target));
            }
        }
        None
    }

    fn selfloop_node(&self) -> Option<usize> {
        self.edges
            .iter()
            .find(|e| e.source == e.target)
            .map(|e| e.source)
    }

    /// Phase-3 choice: fewest in-edges times out-edges, then canonical key.
    fn pick_node(&self) -> Option<usize> {
        self.nodes()
            .filter(|&v| v != self.x0 && Some(v) != self.xf)
            .filter_map(|v| {
                let ins = self.edges.iter().filter(|e| e.target == v).count();
                let outs = self.edges.iter().filter(|e| e.source == v).count();
                (outs > 0).then_some((ins * outs, self.keys[v].as_str(), v))
            })
            .min()
            .map(|(_, _, v)| v)
    }

    /// Reads off the summary once only the initial and final markings remain.
    pub fn summary(&self) -> Option<Summary> {
        let xf = self.xf?;
        if self.extra_nodes() > 0 {
            return None;
        }
        let mut parts: BTreeMap<String, Vec<TransformerExpr>> = BTreeMap::new();
        for e in &self.edges {
            if e.source == self.x0 && e.target == xf {
                parts
                    .entry(e.tag.clone().expect("edges into xf carry a tag"))
                    .or_default()
                    .push(e.label.clone());
            }
        }
        Some(
            parts
                .into_iter()
                .map(|(k, v)| (k, TransformerExpr::union(v)))
                .collect(),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElimStep {
    Parallel(usize, usize),
    SelfLoop(usize),
    Node(usize),
}

pub fn summarize_by_states(n: &Negotiation, cap: usize) -> Result<Summary, StateElimError> {
    summarize_observed(n, cap, |_, _| {})
}

/// Runs the phase strategy, calling `observe` after every rule application.
pub fn summarize_observed(
    n: &Negotiation,
    cap: usize,
    mut observe: impl FnMut(ElimStep, &LabeledRG),
) -> Result<Summary, StateElimError> {
    let rg = reachability(n, cap)?;
    let mut g = LabeledRG::from_rg(n, &rg);
    loop {
        while let Some((a, b)) = g.parallel_pair() {
            g.elim_parallel(a, b)?;
            observe(ElimStep::Parallel(a, b), &g);
        }
        while let Some(v) = g.selfloop_node() {
            g.elim_selfloop(v)?;
            observe(ElimStep::SelfLoop(v), &g);
        }
        match g.pick_node() {
            Some(v) => {
                g.elim_node(v)?;
                observe(ElimStep::Node(v), &g);
            }
            None => break,
        }
    }
    g.summary().ok_or_else(|| StateElimError::NotFullyReducible {
        residual: Box::new(g),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{atomic, build};
    use crate::semantics::DEFAULT_CAP;

    fn a(s: &str) -> TransformerExpr {
        TransformerExpr::atomic(s)
    }

    #[test]
    fn atomic_maps_each_result_to_itself() {
        let n = atomic(&["A", "B"], &["r", "s"]);
        let s = summarize_by_states(&n, DEFAULT_CAP).unwrap();
        assert_eq!(s["r"], a("n0.r"));
        assert_eq!(s["s"], a("n0.s"));
    }

    #[test]
    fn chain_middle_node_becomes_concat() {
        let n = build(
            &["A"],
            &[
                ("n0", &["A"], &[("a", &[("A", &["n1"])])]),
                ("n1", &["A"], &[("b", &[("A", &["nf"])])]),
                ("nf", &["A"], &[("f", &[("A", &[])])]),
            ],
            "n0",
            "nf",
        )
        .unwrap();
        let s = summarize_by_states(&n, DEFAULT_CAP).unwrap();
        assert_eq!(s["f"], TransformerExpr::concat([a("n0.a"), a("n1.b"), a("nf.f")]));
    }

    #[test]
    fn stacked_self_loops_are_merged_first() {
        let n = build(
            &["A"],
            &[
                ("n0", &["A"], &[("a", &[("A", &["n1"])])]),
                (
                    "n1",
                    &["A"],
                    &[
                        ("x", &[("A", &["n1"])]),
                        ("y", &[("A", &["n1"])]),
                        ("b", &[("A", &["nf"])]),
                    ],
                ),
                ("nf", &["A"], &[("f", &[("A", &[])])]),
            ],
            "n0",
            "nf",
        )
        .unwrap();
        let mut steps = Vec::new();
        let s = summarize_observed(&n, DEFAULT_CAP, |st, _| steps.push(st)).unwrap();
        assert!(matches!(steps[0], ElimStep::Parallel(1, 1)));
        assert!(matches!(steps[1], ElimStep::SelfLoop(1)));
        let expected = TransformerExpr::concat([
            a("n0.a"),
            TransformerExpr::star(TransformerExpr::union([a("n1.x"), a("n1.y")])),
            a("n1.b"),
            a("nf.f"),
        ]);
        assert_eq!(s["f"], expected);
    }

    #[test]
    fn node_with_two_in_and_two_out_edges() {
        let n = build(
            &["A"],
            &[
                ("n0", &["A"], &[("a", &[("A", &["n1"])]), ("b", &[("A", &["n1"])])]),
                ("n1", &["A"], &[("c", &[("A", &["n2"])]), ("d", &[("A", &["n3"])])]),
                ("n2", &["A"], &[("e", &[("A", &["nf"])])]),
                ("n3", &["A"], &[("e", &[("A", &["nf"])])]),
                ("nf", &["A"], &[("f", &[("A", &[])])]),
            ],
            "n0",
            "nf",
        )
        .unwrap();
        let rg = reachability(&n, DEFAULT_CAP).unwrap();
        let mut g = LabeledRG::from_rg(&n, &rg);
        let before = g.edges().len();
        // node 1 is the marking A={n1}; it has two in- and two out-edges
        g.elim_node(1).unwrap();
        assert_eq!(g.edges().len(), before - 4 + 4);
        assert!(matches!(
            g.elim_parallel(0, 0),
            Err(StateElimError::GuardFailed { rule: 1, .. })
        ));
    }

    #[test]
    fn deadlock_leaves_residue() {
        // n1 needs both agents but B goes to n2 only
        let n = build(
            &["A", "B"],
            &[
                ("n0", &["A", "B"], &[("a", &[("A", &["n1"]), ("B", &["n2"])])]),
                ("n1", &["A", "B"], &[("b", &[("A", &["nf"]), ("B", &["nf"])])]),
                ("n2", &["B"], &[("c", &[("B", &["n1"])]), ("d", &[("B", &["nf"])])]),
                ("nf", &["A", "B"], &[("f", &[("A", &[]), ("B", &[])])]),
            ],
            "n0",
            "nf",
        )
        .unwrap();
        match summarize_by_states(&n, DEFAULT_CAP) {
            Err(StateElimError::NotFullyReducible { residual }) => {
                assert!(residual.extra_nodes() > 0)
            }
            other => panic!("expected residue, got {other:?}"),
        }
    }
}
