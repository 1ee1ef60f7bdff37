use super::*;
use crate::patterns::{all_cases, case};

fn analysis(id: &str) -> Analysis {
    let c = case(id).unwrap();
    analyze(&c.model, &c.starters(), ExploreBounds::default())
}

#[test]
fn combinations_are_lexicographic() {
    assert_eq!(combinations(3, 2), vec![vec![0, 1], vec![0, 2], vec![1, 2]]);
    assert_eq!(combinations(2, 3), Vec::<Vec<u32>>::new());
    assert_eq!(combinations(4, 0), vec![Vec::<u32>::new()]);
}

#[test]
fn deadlock_free_patterns() {
    for id in [
        "send_receive",
        "contingent_request",
        "request_with_referral",
        "multi_responses",
    ] {
        let a = analysis(id);
        assert!(
            a.deadlocks.is_empty(),
            "{id}: {:?}",
            a.deadlocks.first().map(|d| &d.state)
        );
        assert!(a.stats.terminal > 0, "{id}");
    }
}

#[test]
fn quorum_shortfall_deadlocks() {
    let a = analysis("one_to_many_send_receive");
    assert!(!a.deadlocks.is_empty());
    let a = analysis("multi_responses.no_timer");
    assert!(!a.deadlocks.is_empty());
}

#[test]
fn discarding_racer_does_not_leak() {
    assert!(analysis("racing").leaks.is_empty());
    let leaky = analysis("racing.no_discard");
    assert!(!leaky.leaks.is_empty());
    assert_eq!(leaky.max_residue, 1);
}

#[test]
fn bounded_patterns_are_explored_exhaustively() {
    for id in [
        "send_receive",
        "contingent_request",
        "request_with_referral",
        "racing",
    ] {
        assert!(!analysis(id).stats.truncated, "{id}");
    }
    assert!(analysis("multi_responses").stats.truncated);
}

#[test]
fn default_starters_skip_receivers() {
    let c = case("multi_responses.no_timer").unwrap();
    let s = default_starters(&c.model);
    assert_eq!(
        s.into_iter().collect::<Vec<_>>(),
        vec![("Supplier".to_string(), 1)]
    );
}

#[test]
fn late_responses_leak() {
    assert!(!analysis("multi_responses").leaks.is_empty());
}

#[test]
fn output_is_deterministic() {
    let a = analysis("one_to_many_send_receive");
    let b = analysis("one_to_many_send_receive");
    assert_eq!(a, b);
}

#[test]
fn replay_reproduces_every_deadlock() {
    for id in ["one_to_many_send_receive", "multi_responses.no_timer"] {
        let c = case(id).unwrap();
        for d in find_deadlocks(&c.model, &c.starters(), ExploreBounds::default()) {
            let reached = replay(&c.model, &d).unwrap();
            assert_eq!(reached, d.state, "{id} via {:?}", d.path);
            assert!(reached.agents.values().all(|a| a.timer.is_none()));
            assert!(reached
                .agents
                .values()
                .all(|a| a.status != AgentStatus::WaitingDecision));
        }
    }
}

#[test]
fn scripted_end_states_are_reachable() {
    for c in all_cases()
        .iter()
        .filter(|c| c.script.is_some() && c.golden.is_some())
    {
        let mut cluster = LocalCluster::new(c.model.clone());
        let Ok(out) = run_scripted(&mut cluster, c.script.as_ref().unwrap()) else {
            continue;
        };
        let end = StateView::of_engine(cluster.host().instance(out.instance).unwrap());
        let states = reachable_states(&c.model, &c.starters(), ExploreBounds::default());
        assert!(states.binary_search(&end).is_ok(), "{}: {:?}", c.id(), end);
    }
}

#[test]
fn larger_bounds_keep_deadlocks() {
    let c = case("one_to_many_send_receive").unwrap();
    let small = ExploreBounds {
        max_instances: 2,
        pool_bound: 4,
        ..ExploreBounds::default()
    };
    let before = find_deadlocks(&c.model, &c.starters(), small);
    let after: Vec<StateView> = find_deadlocks(&c.model, &c.starters(), ExploreBounds::default())
        .into_iter()
        .map(|d| d.state)
        .collect();
    assert!(!before.is_empty());
    for d in before {
        assert!(after.contains(&d.state), "{:?}", d.state);
    }
}

#[test]
fn zero_bounds_are_raised_to_one() {
    let c = case("send_receive").unwrap();
    let zero = ExploreBounds {
        max_instances: 0,
        pool_bound: 0,
        max_states: 0,
    };
    let stats = explore(&c.model, &c.starters(), zero);
    assert_eq!(stats.states, 1);
    assert!(stats.truncated);
}
