use std::path::PathBuf;

use ltss_core::scenario::ScenarioConfig;
use ltss_core::sim::run_scenario;
use ltss_core::tpv::{Outcome, Phase};

fn shipped(name: &str) -> ScenarioConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.toml"));
    ScenarioConfig::load(&path).unwrap()
}

fn outcomes(name: &str) -> (Vec<(Phase, Outcome)>, i32, String) {
    let (report, sim) = run_scenario(shipped(name)).unwrap();
    sim.network().check_conservation().unwrap();
    sim.network().check_no_reuse().unwrap();
    let o = report.verdicts.iter().map(|v| (v.phase, v.outcome)).collect();
    (o, report.exit_code, report.transcript)
}

use Outcome::*;
use Phase::*;

#[test]
fn tamper_owner_fails_check() {
    let (o, code, t) = outcomes("tamper-owner");
    assert_eq!(o, vec![(Registration, Success), (Reconstruction, Success), (IntegrityCheck, Fail)], "{t}");
    assert_eq!(code, 1);
}

#[test]
fn false_claim_is_refuted() {
    let (o, code, t) = outcomes("false-claim");
    assert_eq!(o, vec![(Registration, Success), (Reconstruction, Success), (Refutation, RefutationSuccess)], "{t}");
    assert_eq!(code, 0);
}

#[test]
fn corrupt_holder_is_caught() {
    let (o, code, t) = outcomes("corrupt-holder");
    assert_eq!(o, vec![(Registration, Success), (Renewal, Fail), (Reconstruction, Fail)], "{t}");
    assert!(t.contains("accused_holder2"), "{t}");
    assert_eq!(code, 1);
}

#[test]
fn dropped_holders_abort() {
    let (o, code, t) = outcomes("drop-holders");
    assert_eq!(o, vec![(Registration, Success), (Reconstruction, Abort)], "{t}");
    assert_eq!(code, 2);
}

#[test]
fn bit_flip_is_rejected() {
    let (o, code, t) = outcomes("bit-flip");
    assert_eq!(o, vec![(Registration, Abort)], "{t}");
    assert!(t.contains("reject calculator->holder1"), "{t}");
    assert_eq!(code, 2);
}

#[test]
fn computational_option() {
    let (o, code, t) = outcomes("computational");
    assert_eq!(
        o,
        vec![
            (Registration, Success),
            (Reconstruction, Success),
            (IntegrityCheck, Success),
            (Refutation, RefutationSuccess)
        ],
        "{t}"
    );
    assert_eq!(code, 0);
}

#[test]
fn toeplitz_option() {
    let (o, code, t) = outcomes("toeplitz");
    assert_eq!(
        o,
        vec![
            (Registration, Success),
            (Reconstruction, Success),
            (IntegrityCheck, Success),
            (Refutation, RefutationSuccess)
        ],
        "{t}"
    );
    assert_eq!(code, 0);
}

#[test]
fn skewed_clock_fails_check() {
    let (o, code, t) = outcomes("skewed-clock");
    assert_eq!(o, vec![(Registration, Success), (Reconstruction, Success), (IntegrityCheck, Fail)], "{t}");
    assert_eq!(code, 1);
}

#[test]
fn honest_suite() {
    let (o, code, t) = outcomes("honest");
    assert!(o.iter().all(|(_, x)| *x == Success), "{t}");
    assert_eq!(o.len(), 6);
    assert_eq!(code, 0);
}
