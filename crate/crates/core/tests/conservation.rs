use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use subjektiv_core::conformance::random_walk;
use subjektiv_core::patterns::all_cases;

#[test]
fn randomized_runs_conserve_messages() {
    let cases = all_cases();
    let started = Instant::now();
    let mut quiescent = 0;
    let mut stale = 0;
    let mut retries = 0;
    for seed in 0..1000u64 {
        let case = &cases[seed as usize % cases.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let capacity = if seed % 4 == 3 { 1 } else { 64 };
        let stats = random_walk(&mut rng, case, capacity, 400)
            .unwrap_or_else(|e| panic!("{} seed {seed}: {e}", case.id()));
        quiescent += stats.quiescent as usize;
        stale += stats.stale_attempts;
        retries += stats.retries;
    }
    assert!(quiescent > 500, "only {quiescent} runs came to rest");
    assert!(stale > 0, "no settled task was ever retried");
    assert!(retries > 0, "no delivery was ever retried");
    assert!(started.elapsed().as_secs() < 60, "{:?}", started.elapsed());
}

#[test]
fn walks_are_reproducible() {
    let case = subjektiv_core::patterns::case("relayed_request").unwrap();
    let a = random_walk(&mut ChaCha8Rng::seed_from_u64(3), &case, 64, 400).unwrap();
    let b = random_walk(&mut ChaCha8Rng::seed_from_u64(3), &case, 64, 400).unwrap();
    assert_eq!(a, b);
}
