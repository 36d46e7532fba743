use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use xmpu_sim::harness::{compare_transcript, run_many, Comparison, GoldenError, RunOptions, RunOutcome};
use xmpu_sim::os::SanitizeMode;
use xmpu_sim::par::Exec;

const EXIT_FAIL: u8 = 1;
const EXIT_USAGE: u8 = 2;

#[derive(Parser)]
#[command(name = "xmpu-sim", version, about = "Scenario runner for the XMPU residue simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    global: GlobalOpts,
}

#[derive(Args)]
struct GlobalOpts {
    /// First PID handed out, overriding `pid_seed` in the script.
    #[arg(long, global = true)]
    seed: Option<u32>,
    /// Sanitize policy, overriding `policy` steps in the script.
    #[arg(long, global = true, value_parser = parse_mode)]
    policy: Option<SanitizeMode>,
    /// Fill word used when sanitizing.
    #[arg(long, global = true, value_parser = parse_word)]
    fill: Option<u32>,
    /// Disable data-parallel reads.
    #[arg(long, global = true)]
    sequential: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run scenarios and print their transcripts.
    Run { scripts: Vec<PathBuf> },
    /// Run a scenario and compare its transcript with a golden file.
    Verify {
        script: PathBuf,
        #[arg(long)]
        golden: PathBuf,
    },
    /// Run scenarios and print their reports.
    Report {
        scripts: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Structured,
}

fn parse_mode(s: &str) -> Result<SanitizeMode, String> {
    s.parse()
}

fn parse_word(s: &str) -> Result<u32, String> {
    let digits = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")).unwrap_or(s);
    u32::from_str_radix(digits, 16).map_err(|e| format!("`{s}`: {e}"))
}

fn report_failure(run: &RunOutcome) {
    if let Some(f) = &run.failure {
        eprintln!("{}:{}: {}", f.file, f.line, f.message);
    }
}

/// Runs `scripts`; parse errors are reported and turn into `None`.
fn run_all(scripts: &[PathBuf], options: &RunOptions) -> Result<Vec<RunOutcome>, u8> {
    let paths: Vec<&Path> = scripts.iter().map(PathBuf::as_path).collect();
    let mut out = Vec::new();
    let mut parse_failed = false;
    for result in run_many(&paths, options) {
        match result {
            Ok(run) => out.push(run),
            Err(e) => {
                eprintln!("{e}");
                parse_failed = true;
            }
        }
    }
    if parse_failed {
        Err(EXIT_USAGE)
    } else {
        Ok(out)
    }
}

fn status(runs: &[RunOutcome]) -> u8 {
    if runs.iter().all(RunOutcome::passed) {
        0
    } else {
        EXIT_FAIL
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let options = RunOptions {
        seed: cli.global.seed,
        policy: cli.global.policy,
        fill: cli.global.fill,
        exec: if cli.global.sequential {
            Exec::Sequential
        } else {
            Exec::default()
        },
    };
    let code = match cli.command {
        Command::Run { scripts } => match run_all(&scripts, &options) {
            Err(code) => code,
            Ok(runs) => {
                for run in &runs {
                    print!("{}", run.transcript.text());
                    report_failure(run);
                }
                status(&runs)
            }
        },
        Command::Verify { script, golden } => match run_all(std::slice::from_ref(&script), &options) {
            Err(code) => code,
            Ok(runs) => {
                let run = &runs[0];
                report_failure(run);
                match compare_transcript(&run.transcript.text(), &golden) {
                    Ok(Comparison::Same) => {
                        println!("OK {}", golden.display());
                        status(&runs)
                    }
                    Ok(Comparison::Differs { diff, changed_lines }) => {
                        print!("{diff}");
                        eprintln!("{changed_lines} line(s) differ from {}", golden.display());
                        EXIT_FAIL
                    }
                    Err(e @ GoldenError::MissingGolden(_)) | Err(e @ GoldenError::Io { .. }) => {
                        eprintln!("{e}");
                        EXIT_USAGE
                    }
                }
            }
        },
        Command::Report { scripts, format } => match run_all(&scripts, &options) {
            Err(code) => code,
            Ok(runs) => {
                for run in &runs {
                    match format {
                        Format::Text => print!("{}", run.report),
                        Format::Structured => print!("{}", run.report.to_structured()),
                    }
                    report_failure(run);
                }
                status(&runs)
            }
        },
    };
    ExitCode::from(code)
}
