use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use afd_lab::afd::{check_omega, check_omega_f, AfdTrace, Verdict};
use afd_lab::consensus::{check_consensus_trace, ConsensusTrace};
use afd_lab::harness::{analyze, load_scenario, run_scenario, HarnessError, Report};
use afd_lab::observation::Observation;

#[derive(Parser)]
#[command(name = "afd-lab", version, about = "Failure detector, execution tree and extraction workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Problem {
    Consensus,
    Omega,
    #[value(name = "omega_f")]
    OmegaF,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and print its report.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Write report.txt and the artifacts into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also render observations and tree slices as Graphviz.
        #[arg(long)]
        dot: bool,
    },
    /// Check a trace file against a problem.
    CheckTrace {
        file: PathBuf,
        #[arg(long, value_enum)]
        problem: Problem,
        #[arg(long, default_value_t = 0)]
        f: usize,
    },
    /// Valence and gadgets of the reference system over an observation.
    AnalyzeObs {
        obs: PathBuf,
        #[arg(long)]
        system: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        dot: bool,
    },
}

fn read(path: &Path) -> Result<String, String> {
    std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn write_out(report: &Report, dir: &Path) -> Result<(), String> {
    std::fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    let put = |name: &str, body: &str| std::fs::write(dir.join(name), body).map_err(|e| format!("{name}: {e}"));
    put("report.txt", &report.to_text())?;
    for (name, body) in &report.artifacts {
        put(name, body)?;
    }
    Ok(())
}

fn finish(result: Result<Report, HarnessError>, out: Option<&Path>) -> ExitCode {
    match result {
        Ok(report) => {
            print!("{}", report.to_text());
            if let Some(dir) = out {
                if let Err(e) = write_out(&report, dir) {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            }
            ExitCode::from(report.exit_code() as u8)
        }
        Err(e) => {
            if let HarnessError::Capacity { report, .. } | HarnessError::Fatal { report, .. } = &e {
                print!("{}", report.to_text());
            }
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn check_trace(file: &Path, problem: Problem, f: usize) -> Result<Vec<(String, Verdict)>, String> {
    let text = read(file)?;
    let file_err = |e: afd_lab::afd::ParseError| format!("{}: {e}", file.display());
    Ok(match problem {
        Problem::Consensus => {
            let t = ConsensusTrace::parse(&text).map_err(file_err)?;
            let v = check_consensus_trace(&t, f, t.complete);
            let mut lines = vec![("consensus".to_string(), v.overall.clone())];
            lines.extend(v.clauses().into_iter().map(|(name, c)| (name.to_string(), c.clone())));
            lines
        }
        Problem::Omega => vec![("omega".into(), check_omega(&AfdTrace::parse(&text).map_err(file_err)?))],
        Problem::OmegaF => vec![("omega_f".into(), check_omega_f(&AfdTrace::parse(&text).map_err(file_err)?, f))],
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { scenario, seed, out, dot } => {
            let mut s = match load_scenario(&scenario) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("error: {}: {e}", scenario.display());
                    return ExitCode::from(2);
                }
            };
            if let Some(seed) = seed {
                s.seed = seed;
            }
            finish(run_scenario(&s, dot), out.as_deref())
        }
        Command::CheckTrace { file, problem, f } => match check_trace(&file, problem, f) {
            Ok(lines) => {
                for (name, v) in &lines {
                    println!("verdict {name} {v}");
                }
                ExitCode::from(u8::from(lines.iter().any(|(_, v)| v.is_violated())))
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        },
        Command::AnalyzeObs { obs, system, out, dot } => {
            let s = match load_scenario(&system) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("error: {}: {e}", system.display());
                    return ExitCode::from(2);
                }
            };
            let g = match read(&obs).and_then(|t| Observation::parse(&t).map_err(|e| format!("{}: {e}", obs.display()))) {
                Ok(g) => g,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            if g.n() != s.locations.n {
                eprintln!("error: observation has n = {} but the system has n = {}", g.n(), s.locations.n);
                return ExitCode::from(2);
            }
            finish(analyze(&s, g, None, dot), out.as_deref())
        }
    }
}
