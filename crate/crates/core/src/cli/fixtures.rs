//! The bundled example negotiations and the exponential family.

use crate::cli::io::{ParseError, parse_str};
use crate::model::{Atom, Negotiation, NegotiationParts, ResultDef};
use crate::transformers::{Interp, TransformerExpr, outcome_tag};

pub const NAMES: [&str; 17] = [
    "fdm_acyclic",
    "fdm_cyclic",
    "fdm_unsound",
    "ladder",
    "merge_demo",
    "iter_demo",
    "useless_demo",
    "shortcut_demo",
    "shortcut_problem",
    "fdm_wd_summary",
    "cyclic_two_outcomes",
    "pingpong",
    "regen",
    "dfs_example",
    "running_multi",
    "multifragment",
    "lemma3_counterexample",
];

macro_rules! fixture_sources {
    ($($name:literal),* $(,)?) => {
        pub fn source(name: &str) -> Option<&'static str> {
            match name {
                $($name => Some(include_str!(concat!("../../fixtures/", $name, ".json"))),)*
                _ => None,
            }
        }
    };
}

fixture_sources!(
    "fdm_acyclic",
    "fdm_cyclic",
    "fdm_unsound",
    "ladder",
    "merge_demo",
    "iter_demo",
    "useless_demo",
    "shortcut_demo",
    "shortcut_problem",
    "fdm_wd_summary",
    "cyclic_two_outcomes",
    "pingpong",
    "regen",
    "dfs_example",
    "running_multi",
    "multifragment",
    "lemma3_counterexample",
);

pub fn load(name: &str) -> Result<Negotiation, ParseError> {
    let text = source(name).ok_or_else(|| ParseError::Syntax {
        line: 0,
        column: 0,
        message: format!("unknown fixture `{name}`"),
    })?;
    parse_str(text)
}

pub fn all() -> Vec<(&'static str, Negotiation)> {
    NAMES
        .iter()
        .map(|&name| (name, load(name).expect("bundled fixtures are valid")))
        .collect()
}

/// Member k of the exponential family: agent Pi runs a diamond
/// ni → ni_1 | ni_2 → nip between the shared atoms n0 and nf.
///
/// Atoms are declared layer by layer: n0, the ni, the diamond sides, the
/// nip, nf.
pub fn expfam(k: usize) -> Negotiation {
    assert!(k >= 1);
    let agents: Vec<String> = (1..=k).map(|i| format!("P{i}")).collect();
    let all: Vec<usize> = (0..k).collect();
    let ni = |i: usize| 1 + i;
    let side = |i: usize, j: usize| 1 + k + 2 * i + j;
    let nip = |i: usize| 1 + 3 * k + i;
    let nf = 1 + 4 * k;
    let one = |t: usize| std::collections::BTreeSet::from([t]);
    let res = |id: &str, name: &str, next: Vec<std::collections::BTreeSet<usize>>| ResultDef {
        name: name.to_string(),
        next,
        delta: TransformerExpr::atomic(outcome_tag(id, name)),
    };
    let mut atoms = vec![Atom {
        id: "n0".into(),
        parties: all.clone(),
        results: vec![res("n0", "a", (0..k).map(|i| one(ni(i))).collect())],
    }];
    for i in 0..k {
        let id = format!("n{}", i + 1);
        atoms.push(Atom {
            id: id.clone(),
            parties: vec![i],
            results: vec![
                res(&id, &format!("a_{}", i + 1), vec![one(side(i, 0))]),
                res(&id, &format!("b_{}", i + 1), vec![one(side(i, 1))]),
            ],
        });
    }
    for i in 0..k {
        for j in 0..2 {
            let id = format!("n{}_{}", i + 1, j + 1);
            atoms.push(Atom {
                id: id.clone(),
                parties: vec![i],
                results: vec![res(&id, "a", vec![one(nip(i))])],
            });
        }
    }
    for i in 0..k {
        let id = format!("n{}p", i + 1);
        atoms.push(Atom {
            id: id.clone(),
            parties: vec![i],
            results: vec![res(&id, "a", vec![one(nf)])],
        });
    }
    atoms.push(Atom {
        id: "nf".into(),
        parties: all,
        results: vec![res("nf", "f", vec![Default::default(); k])],
    });
    Negotiation::new(NegotiationParts {
        agents,
        atoms,
        initial: 0,
        final_atom: nf,
        space: None,
        interp: Interp::new(),
    })
    .expect("the exponential family is well formed")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_validate_with_documented_classes() {
        // (name, deterministic, weakly deterministic, acyclic)
        let expected = [
            ("fdm_acyclic", false, true, true),
            ("fdm_cyclic", true, true, false),
            ("fdm_unsound", true, true, true),
            ("ladder", true, true, false),
            ("merge_demo", true, true, true),
            ("iter_demo", true, true, false),
            ("useless_demo", false, true, true),
            ("shortcut_demo", true, true, true),
            ("shortcut_problem", false, false, true),
            ("fdm_wd_summary", false, true, true),
            ("cyclic_two_outcomes", true, true, false),
            ("pingpong", true, true, false),
            ("regen", true, true, false),
            ("dfs_example", true, true, false),
            ("running_multi", true, true, false),
            ("multifragment", true, true, false),
            ("lemma3_counterexample", true, true, false),
        ];
        assert_eq!(expected.len(), NAMES.len());
        for (name, det, weak, acyc) in expected {
            let c = load(name).unwrap().classify();
            assert_eq!(
                (c.deterministic, c.weakly_deterministic, c.acyclic),
                (det, weak, acyc),
                "{name}"
            );
        }
    }

    #[test]
    fn expfam_shape() {
        let n = expfam(4);
        assert_eq!(n.atom_count(), 18);
        assert!(n.is_deterministic());
        assert!(n.graph().is_acyclic());
    }
}
