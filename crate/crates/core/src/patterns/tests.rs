use super::*;

#[test]
fn corpus_has_thirteen_patterns_in_order() {
    let names: Vec<String> = corpus().into_iter().map(|c| c.name).collect();
    assert_eq!(names, PATTERNS.map(String::from).to_vec());
}

#[test]
fn every_model_validates_without_warnings() {
    for case in all_cases() {
        assert!(
            case.model.warnings().is_empty(),
            "{}: {}",
            case.id(),
            case.model.warnings()
        );
    }
}

#[test]
fn one_to_many_alias_resolves() {
    assert_eq!(
        case("one_to_many").unwrap().name,
        "one_to_many_send_receive"
    );
    assert_eq!(
        case("one_to_many.all").unwrap().id(),
        "one_to_many_send_receive.all"
    );
    assert!(matches!(case("nope"), Err(CaseError::Unknown(_))));
}

/// `SUBJEKTIV_BLESS=1 cargo test -p subjektiv-core bless` rewrites goldens.
#[test]
fn bless() {
    if std::env::var("SUBJEKTIV_BLESS").as_deref() != Ok("1") {
        return;
    }
    let root = concat!(env!("CARGO_MANIFEST_DIR"), "/../..");
    for case in all_cases() {
        if case.golden.is_none() {
            continue;
        }
        let text = super::bless(&case).unwrap();
        std::fs::write(format!("{root}/{}", case.golden_path()), text).unwrap();
    }
}

#[test]
fn every_case_passes() {
    if std::env::var("SUBJEKTIV_BLESS").as_deref() == Ok("1") {
        return;
    }
    let failures: Vec<String> = all_cases()
        .iter()
        .filter(|c| c.script.is_some())
        .map(|c| run_case(c).unwrap())
        .filter(|r| !r.passed())
        .map(|r| r.line())
        .collect();
    assert!(failures.is_empty(), "{}", failures.join("\n"));
}
