//! One line per acceptance criterion. Every criterion runs even when an
//! earlier one fails; the test fails at the end if any did.

mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use subjektiv_core::analysis::{analyze, replay, ExploreBounds};
use subjektiv_core::conformance::{
    atomic_multicast_runs, check_round_trip, random_deletions, random_model, random_walk, scramble,
};
use subjektiv_core::patterns::{all_cases, case, corpus};
use subjektiv_core::pdl::serialize;
use subjektiv_node::cluster::run_case_distributed;

type Verdict = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(started: Instant, limit: Duration) -> Result<(), String> {
    let took = started.elapsed();
    ensure(took < limit, || format!("took {took:?}, limit {limit:?}"))
}

fn corpus_conformance() -> Verdict {
    let started = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_subjektiv"))
        .args(["corpus", "run", "--repeat", "10"])
        .output()
        .map_err(|e| e.to_string())?;
    let text = String::from_utf8_lossy(&out.stdout);
    ensure(out.status.success(), || {
        text.lines()
            .filter(|l| !l.starts_with("PASS"))
            .collect::<Vec<_>>()
            .join("; ")
    })?;
    let passed: BTreeSet<&str> = text
        .lines()
        .filter_map(|l| l.strip_prefix("PASS "))
        .collect();
    let cases = corpus();
    let missing: Vec<String> = cases
        .iter()
        .map(|c| c.id())
        .filter(|id| !passed.contains(id.as_str()))
        .collect();
    ensure(cases.len() == 13 && missing.is_empty(), || {
        format!("{} cases, missing {missing:?}", cases.len())
    })?;
    within(started, Duration::from_secs(5))?;
    Ok(format!(
        "{} cases x 10 runs identical in {:?}",
        cases.len(),
        started.elapsed()
    ))
}

fn distributed_equivalence() -> Verdict {
    let started = Instant::now();
    for id in ["send_receive", "contingent_request", "atomic_multicast"] {
        let c = case(id).map_err(|e| e.to_string())?;
        let report = run_case_distributed(&c).map_err(|e| e.to_string())?;
        ensure(report.passed(), || report.line())?;
    }
    within(started, Duration::from_secs(30))?;
    Ok(format!("3 cases over 2 nodes in {:?}", started.elapsed()))
}

fn deadlock_verdicts() -> Verdict {
    let mut replayed = 0;
    let expected = [
        ("send_receive", false),
        ("contingent_request", false),
        ("request_with_referral", false),
        ("multi_responses", false),
        ("one_to_many", true),
        ("multi_responses.no_timer", true),
    ];
    for (id, deadlocks) in expected {
        let c = case(id).map_err(|e| e.to_string())?;
        let a = analyze(&c.model, &c.starters(), ExploreBounds::default());
        ensure(a.deadlocks.is_empty() != deadlocks, || {
            format!("{id}: {} deadlocks", a.deadlocks.len())
        })?;
        for d in &a.deadlocks {
            let reached = replay(&c.model, d).map_err(|e| format!("{id}: replay: {e}"))?;
            ensure(reached == d.state, || {
                format!("{id}: replay ends elsewhere")
            })?;
            replayed += 1;
        }
    }
    Ok(format!("6 verdicts exact, {replayed} deadlocks replayed"))
}

fn conservation() -> Verdict {
    let started = Instant::now();
    let cases = all_cases();
    for seed in 0..1000u64 {
        let c = &cases[seed as usize % cases.len()];
        let capacity = if seed % 4 == 3 { 1 } else { 64 };
        random_walk(&mut ChaCha8Rng::seed_from_u64(seed), c, capacity, 400)
            .map_err(|e| format!("{} seed {seed}: {e}", c.id()))?;
    }
    within(started, Duration::from_secs(60))?;
    Ok(format!("1000 runs in {:?}", started.elapsed()))
}

fn parser_round_trip() -> Verdict {
    let cases = all_cases();
    for c in &cases {
        check_round_trip(&c.source).map_err(|e| format!("{}: {e}", c.id()))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for i in 0..500 {
        let model = random_model(&mut rng);
        let source = scramble(&mut rng, &serialize(&model));
        let back = check_round_trip(&source).map_err(|e| format!("model {i}: {e}"))?;
        ensure(back == model, || format!("model {i} changed"))?;
    }
    let deletions = random_deletions(&mut ChaCha8Rng::seed_from_u64(11), 100);
    if let Some((id, d)) = deletions.iter().find(|(_, d)| !d.holds()) {
        return Err(format!(
            "{id}: deleting offset {} reported at {:?}, bound {}",
            d.at, d.reported, d.bound
        ));
    }
    let reported = deletions
        .iter()
        .filter(|(_, d)| d.reported.is_some())
        .count();
    Ok(format!(
        "{} corpus cases, 500 generated models, 100 deletions ({reported} rejected)",
        cases.len()
    ))
}

fn bus_dedup() -> Verdict {
    let o = common::dedup_scenario()?;
    ensure(o.holds(), || format!("{o:?}"))?;
    Ok(format!(
        "{} duplicates, {} pool-full refusals, no second insertion",
        o.duplicates, o.pool_full
    ))
}

fn atomic_multicast() -> Verdict {
    let runs = atomic_multicast_runs()?;
    ensure(runs.len() == 8, || format!("{} runs", runs.len()))?;
    for r in &runs {
        ensure(r.all_or_nothing(), || {
            format!("answers {:?} got {:?}", r.answers, r.outcome)
        })?;
    }
    let confirmed = runs.iter().filter(|r| r.answers.iter().all(|a| *a)).count();
    Ok(format!("8 combinations uniform, {confirmed} confirmed"))
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 7] = [
        ("corpus conformance", corpus_conformance),
        ("distributed equivalence", distributed_equivalence),
        ("deadlock verdicts", deadlock_verdicts),
        ("engine conservation", conservation),
        ("parser round trip", parser_round_trip),
        ("bus dedup", bus_dedup),
        ("atomic multicast", atomic_multicast),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let verdict =
            catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        match verdict {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
