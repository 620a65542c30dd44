use std::path::PathBuf;

use citytb_testbed::scenario::run_file;

fn script(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn run(name: &str) {
    let mut out = Vec::new();
    let report = run_file(&script(name), None, &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    println!("{text}");
    assert!(report.passed(), "{name}:\n{text}");
    assert!(!report.asserts.is_empty());
}

#[test]
fn registration_storm() {
    run("registration_storm.scn");
}

#[test]
fn soft_state() {
    run("soft_state.scn");
}

#[test]
fn february() {
    run("february.scn");
}
