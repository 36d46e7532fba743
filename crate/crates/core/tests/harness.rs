//! Scenario runner behaviour seen through the library API.

use std::path::{Path, PathBuf};

use xmpu_sim::harness::{run_many, run_scenario, run_script, RunOptions, Script};
use xmpu_sim::os::SanitizeMode;

fn scenarios() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

fn script(text: &str) -> Script {
    Script::parse(text, "inline.scn", &scenarios()).unwrap()
}

#[test]
fn unmitigated_run_discloses_and_costs_nothing() {
    let run = run_scenario(&scenarios().join("pipeline.scn"), &RunOptions::default()).unwrap();
    assert!(run.passed());
    assert!(run.report.residue_words_disclosed > 0);
    assert_eq!(run.report.sanitize_cycles, 0);
    assert_eq!(run.report.profiles_matched, 1);
}

#[test]
fn mitigated_scenario_reads_zeros_and_matches_nothing() {
    let run = run_scenario(&scenarios().join("mitigated.scn"), &RunOptions::default()).unwrap();
    assert!(run.passed(), "{:?}", run.failure);
    assert!(run
        .transcript
        .lines
        .iter()
        .any(|l| l.trim_start().starts_with("APU has read 0x00000000 ")));
    let report = run.match_report.unwrap();
    assert!(report.profiles.iter().all(|p| !p.matched));
    assert_eq!(run.report.residue_words_disclosed, 0);
}

#[test]
fn victim_active_denials_equal_adversary_probes() {
    let run = run_scenario(&scenarios().join("fig_a2.scn"), &RunOptions::default()).unwrap();
    let probes = run.transcript.lines.iter().filter(|l| l.ends_with("FAILED!")).count() as u64;
    assert_eq!(run.report.denials, probes);
}

#[test]
fn reassign_leaves_the_disabled_path_open() {
    // Wiping on grant cannot help when the adversary simply turns the unit
    // off instead of asking for a grant.
    let options = RunOptions {
        policy: Some(SanitizeMode::OnReassign),
        ..Default::default()
    };
    let run = run_scenario(&scenarios().join("fig_a3.scn"), &options).unwrap();
    assert!(!run.passed());
    assert!(run.report.residue_words_disclosed > 0);
}

#[test]
fn expect_error_records_the_message() {
    let run = run_script(
        &script("include lib/platform.scn\nexpect_error terminate ghost\nexpect_error seed_pids 1\n"),
        "inline",
        &RunOptions::default(),
    );
    assert!(run.passed(), "{:?}", run.failure);
    assert_eq!(run.transcript.lines.len(), 2);
    assert!(run.transcript.lines.iter().all(|l| l.starts_with("error: ")));
}

#[test]
fn expect_error_fails_when_the_step_succeeds() {
    let run = run_script(
        &script("include lib/platform.scn\nexpect_error tick\n"),
        "inline",
        &RunOptions::default(),
    );
    assert!(!run.passed());
}

#[test]
fn platform_steps_after_boot_are_rejected() {
    let run = run_script(
        &script("include lib/platform.scn\ntick\nbackground 0x1\n"),
        "inline",
        &RunOptions::default(),
    );
    let failure = run.failure.unwrap();
    assert_eq!(failure.line, 3);
    assert!(failure.message.contains("before the platform boots"));
}

#[test]
fn snapshots_detect_allowed_writes_only() {
    let run = run_script(
        &script(
            "include lib/platform.scn\n\
             spawn v RPU v\nrequest_isolation v\n\
             snapshot s\nwrite_as APU RPU_OCM_S_BASE 0x1\nassert_snapshot_eq s\n\
             write_as RPU RPU_OCM_S_BASE 0x1\nexpect_error assert_snapshot_eq s\n",
        ),
        "inline",
        &RunOptions::default(),
    );
    // assertion failures are not swallowed by expect_error
    assert_eq!(run.failure.unwrap().line, 8);
}

#[test]
fn run_many_keeps_input_order() {
    let names = ["fig_a3", "fig_a1", "pipeline", "fig_a2"];
    let paths: Vec<PathBuf> = names.iter().map(|n| scenarios().join(format!("{n}.scn"))).collect();
    let refs: Vec<&Path> = paths.iter().map(PathBuf::as_path).collect();
    let runs = run_many(&refs, &RunOptions::default());
    let got: Vec<String> = runs.into_iter().map(|r| r.unwrap().scenario).collect();
    assert_eq!(got, names);
}

#[test]
fn missing_include_is_a_parse_error() {
    let err = Script::parse("echo a\ninclude nope.scn\n", "x.scn", &scenarios()).unwrap_err();
    assert_eq!((err.line, err.column), (2, 9));
}
