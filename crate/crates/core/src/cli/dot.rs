//! Graphviz export of diagrams and reachability graphs.

use std::fmt::Write;

use crate::model::Negotiation;
use crate::semantics::{ReachabilityGraph, render_sequence};

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

fn record_escape(s: &str) -> String {
    s.chars()
        .flat_map(|c| match c {
            '{' | '}' | '|' | '<' | '>' | '"' | '\\' => vec!['\\', c],
            _ => vec![c],
        })
        .collect()
}

/// Atoms become record nodes with one port per party; a hyperarc with
/// several targets goes through a point-shaped fork node.
pub fn negotiation_dot(n: &Negotiation) -> String {
    let mut s = String::from("digraph negotiation {\n  rankdir=TB;\n  node [shape=record];\n");
    for (a, atom) in n.atoms().iter().enumerate() {
        let ports: Vec<String> = atom
            .parties
            .iter()
            .map(|&p| format!("<p{p}> {}", record_escape(&n.agents()[p])))
            .collect();
        let mut extra = String::new();
        if a == n.initial() {
            extra.push_str(", penwidth=2");
        }
        if a == n.final_atom() {
            extra.push_str(", peripheries=2");
        }
        writeln!(
            s,
            "  {} [label=\"{{{}|{{{}}}}}\"{extra}];",
            quote(&atom.id),
            record_escape(&atom.id),
            ports.join("|")
        )
        .unwrap();
    }
    for atom in n.atoms() {
        for res in &atom.results {
            for (i, &p) in atom.parties.iter().enumerate() {
                let targets = &res.next[i];
                let from = format!("{}:p{p}", quote(&atom.id));
                let label = quote(&res.name);
                match targets.len() {
                    0 => {}
                    1 => {
                        let t = *targets.iter().next().unwrap();
                        writeln!(s, "  {from} -> {}:p{p} [label={label}];", quote(&n.atom(t).id)).unwrap();
                    }
                    _ => {
                        let fork = quote(&format!("fork:{}:{}:{}", atom.id, n.agents()[p], res.name));
                        writeln!(s, "  {fork} [shape=point, width=0.08];").unwrap();
                        writeln!(s, "  {from} -> {fork} [label={label}, arrowhead=none];").unwrap();
                        for &t in targets {
                            writeln!(s, "  {fork} -> {}:p{p};", quote(&n.atom(t).id)).unwrap();
                        }
                    }
                }
            }
        }
    }
    s.push_str("}\n");
    s
}

pub fn reachability_dot(n: &Negotiation, rg: &ReachabilityGraph) -> String {
    let mut s = String::from("digraph reachability {\n  node [shape=box];\n");
    for (v, m) in rg.nodes.iter().enumerate() {
        let mut extra = String::new();
        if v == 0 {
            extra.push_str(", penwidth=2");
        }
        if Some(v) == rg.final_node {
            extra.push_str(", peripheries=2");
        }
        writeln!(s, "  m{v} [label={}{extra}];", quote(&m.key(n))).unwrap();
    }
    for e in &rg.edges {
        writeln!(
            s,
            "  m{} -> m{} [label={}];",
            e.source,
            e.target,
            quote(&render_sequence(n, &[e.outcome]))
        )
        .unwrap();
    }
    s.push_str("}\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cli::fixtures;
    use crate::model::atomic;
    use crate::semantics::{DEFAULT_CAP, reachability};

    #[test]
    fn single_atom_has_no_edges() {
        let d = negotiation_dot(&atomic(&["A"], &["r"]));
        assert_eq!(d.matches("->").count(), 0);
        assert_eq!(d.matches("[label=\"{").count(), 1);
    }

    #[test]
    fn hyperarc_of_m_goes_through_a_fork() {
        let d = negotiation_dot(&fixtures::load("fdm_acyclic").unwrap());
        assert!(d.contains("\"fork:n0:M:st\" [shape=point"));
        assert!(d.contains("\"fork:n0:M:st\" -> \"n2\":p2;"));
        assert!(d.contains("\"fork:n0:M:st\" -> \"nf\":p2;"));
        assert_eq!(d, negotiation_dot(&fixtures::load("fdm_acyclic").unwrap()));
    }

    #[test]
    fn ladder_reachability_graph_shape() {
        let n = fixtures::load("ladder").unwrap();
        let rg = reachability(&n, DEFAULT_CAP).unwrap();
        let d = reachability_dot(&n, &rg);
        assert_eq!(d.matches(" [label=").count() - d.matches(" -> ").count(), 7);
        assert_eq!(d.matches(" -> ").count(), 9);
        let loops = rg.edges.iter().filter(|e| e.source == e.target).count();
        assert_eq!(loops, 2);
    }
}
