use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use subjektiv_core::conformance::{check_round_trip, random_deletions, random_model, scramble};
use subjektiv_core::patterns::all_cases;
use subjektiv_core::pdl::{parse, serialize};

#[test]
fn corpus_files_reach_a_canonical_fixpoint() {
    for case in all_cases() {
        let valid = check_round_trip(&case.source).unwrap_or_else(|e| panic!("{}: {e}", case.id()));
        let once = serialize(&valid);
        let twice = serialize(&parse(&once).unwrap().into_valid().unwrap());
        assert_eq!(once, twice, "{}", case.id());
    }
}

#[test]
fn generated_models_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for i in 0..500 {
        let model = random_model(&mut rng);
        let canonical = serialize(&model);
        let source = scramble(&mut rng, &canonical);
        let back = check_round_trip(&source).unwrap_or_else(|e| panic!("model {i}: {e}\n{source}"));
        assert_eq!(back, model, "model {i}");
        assert_eq!(serialize(&back), canonical, "model {i}");
    }
}

#[test]
fn deletions_are_reported_near_the_damage() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let deletions = random_deletions(&mut rng, 100);
    let failing: Vec<_> = deletions.iter().filter(|(_, d)| !d.holds()).collect();
    assert!(failing.is_empty(), "{failing:#?}");
    let reported = deletions
        .iter()
        .filter(|(_, d)| d.reported.is_some())
        .count();
    assert!(
        reported > 30,
        "only {reported} of 100 mutants failed to parse"
    );
}

#[test]
fn every_deletion_in_one_file_is_reported_near_the_damage() {
    let case = subjektiv_core::patterns::case("send_receive").unwrap();
    for (at, _) in case.source.char_indices() {
        let d = subjektiv_core::conformance::delete_and_parse(&case.source, at);
        assert!(d.holds(), "{d:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn layout_does_not_change_the_model(seed: u64, layout: u64) {
        let model = random_model(&mut ChaCha8Rng::seed_from_u64(seed));
        let canonical = serialize(&model);
        let source = scramble(&mut ChaCha8Rng::seed_from_u64(layout), &canonical);
        let parsed = parse(&source).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(&parsed, model.model());
    }

    #[test]
    fn arbitrary_text_never_panics(text in "\\PC{0,200}") {
        let _ = parse(&text);
    }
}
