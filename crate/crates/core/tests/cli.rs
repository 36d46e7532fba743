//! The `xmpu-sim` binary: subcommands, overrides and exit codes.

use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xmpu-sim"))
        .args(args)
        .current_dir(root())
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_prints_the_transcript() {
    let o = cli(&["run", "scenarios/fig_a2.scn"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(
        stdout(&o),
        fs::read_to_string(root().join("golden/fig_a2.txt")).unwrap()
    );
    assert_eq!(stdout(&o).matches("FAILED!").count(), 6);
}

#[test]
fn empty_script_gives_empty_transcript() {
    let o = cli(&["run", "scenarios/empty.scn"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(o.stdout.is_empty());
}

#[test]
fn verify_accepts_the_golden() {
    let o = cli(&["verify", "scenarios/fig_a4.scn", "--golden", "golden/fig_a4.txt"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("OK "));
}

#[test]
fn verify_shows_a_one_line_diff() {
    let dir = tempfile::tempdir().unwrap();
    let golden = fs::read_to_string(root().join("golden/fig_a2.txt")).unwrap();
    let flipped = golden.replacen(
        "Reading RPU_OCM_S_BASE                 ...  FAILED!",
        "Reading RPU_OCM_S_BASE                 ...  PASS!",
        1,
    );
    assert_ne!(flipped, golden);
    let path = dir.path().join("fig_a2.txt");
    fs::write(&path, flipped).unwrap();
    let o = cli(&["verify", "scenarios/fig_a2.scn", "--golden", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("1 line(s) differ"), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("-                 Reading RPU_OCM_S_BASE                 ...  PASS!"));
    assert!(out.contains("+                 Reading RPU_OCM_S_BASE                 ...  FAILED!"));
}

#[test]
fn verify_without_golden_is_a_usage_error() {
    let o = cli(&["verify", "scenarios/fig_a1.scn", "--golden", "golden/missing.txt"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("does not exist"));
}

#[test]
fn parse_errors_exit_2_with_position() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.scn");
    fs::write(&path, "echo fine\nprobe_read APU\n").unwrap();
    let o = cli(&["run", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bad.scn:2:1:"), "{}", stderr(&o));
}

#[test]
fn failed_assertion_exits_1_and_names_the_step() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fail.scn");
    let platform = root().join("scenarios/lib/platform.scn");
    fs::write(
        &path,
        format!("include {}\nassert_interrupts 3\necho never\n", platform.display()),
    )
    .unwrap();
    let o = cli(&["run", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(
        stderr(&o).contains("fail.scn:2: 0 interrupts pending, expected 3"),
        "{}",
        stderr(&o)
    );
    assert!(!stdout(&o).contains("never"));
}

#[test]
fn policy_override_applies_to_unchanged_scripts() {
    let o = cli(&[
        "report",
        "--format",
        "structured",
        "--policy",
        "terminate",
        "scenarios/pipeline.scn",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("policy=terminate\n"));
    assert!(out.contains("residue_words_disclosed=0\n"));
    assert!(out.contains("sanitize_cycles=299008\n"));
    assert!(out.contains("profiles_matched=0\n"));
}

#[test]
fn fill_override_changes_what_residue_reads_back() {
    let o = cli(&[
        "run",
        "--policy",
        "terminate",
        "--fill",
        "0xa5a5a5a5",
        "scenarios/fig_a3.scn",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("APU has read 0xa5a5a5a5, 0xa5a5a5a5 from RPU(Secure) Memory"));
}

#[test]
fn seed_override_moves_the_pids() {
    let o = cli(&["run", "--seed", "500", "scenarios/smid_swap.scn"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("to pid 501 "));
}

#[test]
fn report_text_lists_every_counter() {
    let o = cli(&["report", "scenarios/fig_a2.scn"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    for key in [
        "denials:",
        "residue_words_disclosed:",
        "sanitize_cycles:",
        "profiles_matched:",
    ] {
        assert!(out.contains(key), "{out}");
    }
}

#[test]
fn run_accepts_several_scripts_in_order() {
    let o = cli(&["run", "--sequential", "scenarios/fig_a1.scn", "scenarios/fig_a2.scn"]);
    assert_eq!(o.status.code(), Some(0));
    let a1 = fs::read_to_string(root().join("golden/fig_a1.txt")).unwrap();
    let a2 = fs::read_to_string(root().join("golden/fig_a2.txt")).unwrap();
    assert_eq!(stdout(&o), a1 + &a2);
}
