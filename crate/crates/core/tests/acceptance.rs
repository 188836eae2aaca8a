mod common;

use std::sync::Arc;

use negotiation::cli::io::serialize;
use negotiation::cli::{fixtures, gen};
use negotiation::model::Negotiation;
use negotiation::rules::{self, RuleKind};
use negotiation::semantics::{check_soundness, render_sequence};
use negotiation::state_elim::summarize_by_states;
use negotiation::strategies::{
    self, ExpStrategy, OutcomeOrder, StrategyError, StrategyStep, Verdict,
};
use negotiation::structure;
use negotiation::transformers::{self, TransformerExpr};

use common::{CAP, concrete_equal, eval_summary, oracle_summary, params};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond { Ok(()) } else { Err(msg()) }
}

fn soundness_verdicts() -> Check {
    for name in ["fdm_acyclic", "fdm_cyclic"] {
        let v = check_soundness(&fixtures::load(name).unwrap(), CAP).unwrap();
        ensure(v.sound, || format!("{name} reported unsound"))?;
    }
    let n = fixtures::load("fdm_unsound").unwrap();
    let v = check_soundness(&n, CAP).unwrap();
    ensure(!v.sound, || "fdm_unsound reported sound".into())?;
    let w = render_sequence(&n, v.stuck_witness.as_deref().unwrap_or(&[]));
    ensure(w.starts_with("(n0,st)(n1,yes)"), || format!("witness {w}"))?;
    Ok(format!("fdm_unsound witness {w}"))
}

fn ladder_summary() -> Check {
    let n = fixtures::load("ladder").unwrap();
    let s = summarize_by_states(&n, CAP).map_err(|e| e.to_string())?;
    let expected: TransformerExpr =
        "n0.a·(n1.b*·n1.c·n2.d ∪ n1.b*·n2.d·n1.b*·n1.c)·n3.e·nf.f".parse().unwrap();
    let got = s.get("f").ok_or("no summary for result f")?;
    ensure(got.clone().normalize() == expected.clone().normalize(), || {
        format!("got {got}")
    })?;
    let space = n.space().unwrap();
    let eval = eval_summary(&n, &s);
    ensure(concrete_equal(&eval, &oracle_summary(&n), space), || {
        "concrete summary differs from the large-step fixpoint".into()
    })?;
    let r = transformers::eval(&expected, n.interp(), space).unwrap();
    Ok(format!("f: {got} ({} pairs)", r.global(space).len()))
}

fn rule_equivalence() -> Check {
    let mut checked = 0;
    for name in fixtures::NAMES {
        let n = fixtures::load(name).unwrap();
        if n.space().is_none() {
            continue;
        }
        let mut seen = std::collections::HashSet::new();
        let mut frontier = vec![Arc::new(n)];
        while let Some(cur) = frontier.pop() {
            if !seen.insert(serialize(&cur)) {
                continue;
            }
            if seen.len() > 15 {
                break;
            }
            let before_sound = check_soundness(&cur, CAP).unwrap().sound;
            let before = oracle_summary(&cur);
            let space = cur.space().unwrap().clone();
            for inst in rules::applicable_instances(&cur) {
                let app = rules::apply_instance(&cur, inst).map_err(|e| format!("{name}: {e}"))?;
                checked += 1;
                let after_sound = check_soundness(&app.after, CAP).unwrap().sound;
                ensure(before_sound == after_sound, || {
                    format!("{name}: {} at {} changed soundness", app.kind, app.site)
                })?;
                ensure(concrete_equal(&before, &oracle_summary(&app.after), &space), || {
                    format!("{name}: {} at {} changed the summary", app.kind, app.site)
                })?;
                frontier.push(app.after);
            }
        }
    }
    Ok(format!("{checked} rule instances"))
}

fn acyclic_bound() -> Check {
    let p = params(3, true, None);
    for (i, n) in common::sound_instances(200, &p, 0).iter().enumerate() {
        ensure(n.atom_count() <= 12, || format!("instance {i} has {} atoms", n.atom_count()))?;
        let sound = check_soundness(n, CAP).unwrap().sound;
        let t = strategies::run_acyclic(n).map_err(|e| format!("instance {i}: {e}"))?;
        let bound = strategies::bound_acyclic(n);
        ensure(sound && t.is_summarized(), || format!("instance {i}: {:?}", t.verdict))?;
        ensure(t.total() as u64 <= bound, || {
            format!("instance {i}: {} applications, bound {bound}", t.total())
        })?;
    }
    let unsound = common::unsound_instances(200, &p);
    ensure(unsound.len() == 200, || format!("only {} unsound instances", unsound.len()))?;
    for (i, n) in unsound.iter().enumerate() {
        ensure(!check_soundness(n, CAP).unwrap().sound, || format!("unsound {i} is sound"))?;
        let t = strategies::run_acyclic(n).map_err(|e| format!("unsound {i}: {e}"))?;
        ensure(matches!(t.verdict, Verdict::Unsound(_)), || {
            format!("unsound {i}: {:?}", t.verdict)
        })?;
    }
    Ok("200 sound, 200 unsound".into())
}

fn shortcut_targets(t: &strategies::ReductionTrace) -> Vec<String> {
    t.entries
        .iter()
        .filter(|e| matches!(e.app.kind, RuleKind::Shortcut | RuleKind::DShortcut))
        .map(|e| format!("{}→{}", e.app.site.atom(), e.app.site.target().unwrap()))
        .collect()
}

fn one_agent() -> Check {
    let n = fixtures::load("dfs_example").unwrap();
    let t = strategies::run_one_agent(&n, &OutcomeOrder::declaration(&n)).map_err(|e| e.to_string())?;
    let first: Vec<String> = shortcut_targets(&t).into_iter().take(3).collect();
    ensure(first == ["n4→n1", "n4→n3", "n4→n2"], || format!("first shortcuts {first:?}"))?;
    ensure(t.is_summarized(), || "dfs_example not summarized".into())?;
    let n = fixtures::load("lemma3_counterexample").unwrap();
    let t = strategies::run_one_agent(&n, &OutcomeOrder::declaration(&n)).map_err(|e| e.to_string())?;
    ensure(t.is_summarized(), || format!("lemma3_counterexample: {:?}", t.verdict))?;

    let mut runs: Vec<Negotiation> = fixtures::all().into_iter().map(|(_, n)| n).collect();
    runs.extend(common::sound_instances(100, &params(1, false, None), 1_000));
    let mut count = 0;
    for n in &runs {
        let t = match strategies::run_one_agent(n, &OutcomeOrder::declaration(n)) {
            Ok(t) => t,
            Err(StrategyError::NotOneAgentOrReplication | StrategyError::NotDeterministic) => continue,
            Err(e) => return Err(e.to_string()),
        };
        count += 1;
        let bound = strategies::bound_one_agent(n);
        ensure(t.total() as u64 <= bound, || format!("{} applications, bound {bound}", t.total()))?;
        ensure(t.violations.is_empty(), || format!("{:?}", t.violations))?;
    }
    Ok(format!("first shortcuts {first:?}, {count} one-agent runs within bound"))
}

fn multi_agent() -> Check {
    let n = fixtures::load("running_multi").unwrap();
    let t = strategies::run_general(&n, &OutcomeOrder::declaration(&n)).map_err(|e| e.to_string())?;
    ensure(t.is_summarized(), || format!("{:?}", t.verdict))?;
    let stage1_end = t.entries.iter().rposition(|e| e.stage == 1).ok_or("no stage 1")?;
    let after1 = &t.entries[stage1_end].app.after;
    let kept: Vec<&str> = ["n6", "n7"]
        .into_iter()
        .filter(|id| after1.atom_index(id).is_some())
        .collect();
    ensure(kept.len() == 1, || format!("after stage 1 {kept:?} remain"))?;
    let a = after1.atom_index(kept[0]).unwrap();
    let inner = ["n6", "n7"].map(|id| after1.atom_index(id));
    let closed = after1.outcomes().filter(|o| o.atom == a).all(|o| {
        after1.atom(a).parties.iter().all(|&p| {
            after1.next(o, p).unwrap().iter().all(|t| !inner.contains(&Some(*t)))
        })
    });
    ensure(closed, || format!("{} still loops after stage 1", kept[0]))?;
    let removed: Vec<String> = t
        .entries
        .iter()
        .filter(|e| e.stage == 2 && e.step == StrategyStep::DShortcutNonUniform)
        .flat_map(|e| e.app.produced.removed_atoms.clone())
        .collect();
    for id in ["n2", "n5"] {
        ensure(removed.iter().any(|r| r == id), || {
            format!("{id} not removed by a non-uniform d-shortcut in stage 2; removed {removed:?}")
        })?;
    }
    let bound = strategies::bound_general(&n);
    ensure(t.total() as u64 <= bound, || format!("{} applications, bound {bound}", t.total()))?;
    ensure(t.violations.is_empty(), || format!("{:?}", t.violations))?;
    Ok(format!("{} applications, bound {bound}", t.total()))
}

fn exponential_family() -> Check {
    let n = fixtures::expfam(4);
    let ip = strategies::run_exponential_demo(&n, ExpStrategy::InitialPriority, 100_000)
        .map_err(|e| e.to_string())?;
    let alt = strategies::run_exponential_demo(&n, ExpStrategy::Alternating, 100_000)
        .map_err(|e| e.to_string())?;
    let detail = format!(
        "initial-priority peak {}, alternating {} applications",
        ip.peak_initial_results,
        alt.trace.total()
    );
    ensure(alt.trace.is_summarized(), || format!("alternating: {:?}", alt.trace.verdict))?;
    ensure(alt.trace.total() <= 21, || detail.clone())?;
    ensure(ip.peak_initial_results == 8, || format!("{detail}; expected peak 8"))?;
    Ok(detail)
}

fn structure_properties() -> Check {
    let mut nets: Vec<(String, Negotiation)> = ["fdm_cyclic", "running_multi", "multifragment"]
        .into_iter()
        .map(|s| (s.to_string(), fixtures::load(s).unwrap()))
        .collect();
    for (i, n) in common::sound_instances(30, &params(3, false, None), 500).into_iter().enumerate() {
        nets.push((format!("generated {i}"), n));
    }
    for (name, n) in &nets {
        let v = common::structure_violations(n);
        ensure(v.is_empty(), || format!("{name}: {}", v.join("; ")))?;
        for a in 0..n.atom_count() {
            if a != n.final_atom() {
                structure::target_of_atom(n, a, CAP).map_err(|e| format!("{name}: {e}"))?;
            }
        }
    }
    Ok(format!("{} negotiations", nets.len()))
}

fn cross_method() -> Check {
    let mut nets: Vec<(String, Negotiation)> = fixtures::all()
        .into_iter()
        .filter(|(_, n)| n.is_deterministic())
        .map(|(k, n)| (k.to_string(), n))
        .collect();
    for i in 0..100u64 {
        let p = params(1 + (i % 3) as usize, i % 2 == 0, Some(2));
        let n = if i % 4 == 3 {
            gen::generate_unsound_acyclic(i, &p).unwrap_or_else(|| gen::generate_sound(i, &p))
        } else {
            gen::generate_sound(i, &p)
        };
        nets.push((format!("generated {i}"), n));
    }
    let mut compared = 0;
    for (name, n) in &nets {
        let sound = check_soundness(n, CAP).unwrap().sound;
        let t = strategies::reduce(n).map_err(|e| format!("{name}: {e}"))?;
        ensure(t.is_summarized() == sound, || {
            format!("{name}: reduce {:?}, check_soundness sound={sound}", t.verdict)
        })?;
        if let (Some(space), Some(rs)) = (n.space(), t.summary()) {
            let states = summarize_by_states(n, CAP).map_err(|e| format!("{name}: {e}"))?;
            ensure(concrete_equal(&eval_summary(n, rs), &eval_summary(n, &states), space), || {
                format!("{name}: summaries differ")
            })?;
            compared += 1;
        }
    }
    Ok(format!("{} negotiations, {compared} concrete comparisons", nets.len()))
}

fn main() {
    type Criterion = (&'static str, fn() -> Check);
    let criteria: [Criterion; 9] = [
        ("soundness verdicts of the three FDM negotiations", soundness_verdicts),
        ("ladder state-elimination summary", ladder_summary),
        ("rule equivalence", rule_equivalence),
        ("acyclic strategy bound and verdicts", acyclic_bound),
        ("one-agent strategy", one_agent),
        ("multi-agent strategy on running_multi", multi_agent),
        ("exponential family counts", exponential_family),
        ("structure properties", structure_properties),
        ("cross-method agreement", cross_method),
    ];
    let mut failed = 0;
    for (i, (title, check)) in criteria.iter().enumerate() {
        let clock = std::time::Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!(
                "PASS {} {title}: {detail} [{:.1?}]",
                i + 1,
                clock.elapsed()
            ),
            Err(why) => {
                failed += 1;
                println!("FAIL {} {title}: {why} [{:.1?}]", i + 1, clock.elapsed());
            }
        }
    }
    if failed > 0 {
        println!("{failed} of 9 criteria failed");
        std::process::exit(1);
    }
}
