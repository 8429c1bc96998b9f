use dagf_core::verify::{corrupted_gradient_detected, run_scope, Scope};

fn check(scope: Scope) {
    let results = run_scope(scope, 0).unwrap();
    for r in &results {
        println!("{}", r.summary());
    }
    let failed: Vec<_> = results.iter().filter(|r| !r.passed()).map(|r| r.name.as_str()).collect();
    assert!(failed.is_empty(), "failing cases: {failed:?}");
}

#[test]
fn ops_scope() {
    check(Scope::Ops);
}

#[test]
fn blocks_scope() {
    check(Scope::Blocks);
}

#[test]
fn e2e_scope() {
    check(Scope::E2e);
}

#[test]
fn doubled_gradient_rejected() {
    assert!(corrupted_gradient_detected(3).unwrap());
}

#[test]
fn scope_names_parse() {
    for s in Scope::ALL {
        assert_eq!(s.to_string().parse::<Scope>().unwrap(), s);
    }
    assert!("everything".parse::<Scope>().is_err());
}
