//! Command line entry points.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use muon_lab_core::linalg::{newton_schulz_orthogonalize, polar_factor_svd, NewtonSchulzConfig, Tolerances};
use muon_lab_core::noise::NoiseKind;
use muon_lab_core::objective::Family;
use muon_lab_core::Error as CoreError;

use crate::config::{OptimizerKind, RunConfig};
use crate::error::LabError;
use crate::harness::{noise_check, run_all, schedule_check, Experiment, ReportRow, Status};
use crate::io;

/// Exit code when a check fails.
pub const EXIT_CHECK_FAILED: u8 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "muon-lab",
    version,
    about = "Muon vs mini-batch SGD under heavy-tailed gradient noise"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the seeded ensemble and every enabled check.
    Run(Common),
    /// Check the summability conditions of the configured schedule.
    CheckSchedules(Common),
    /// Measure mini-batch moment scaling and tail behaviour of the noise.
    CheckNoise(Common),
    /// Print the orthogonal polar factor of a matrix read from CSV.
    Polar(PolarArgs),
    /// Merge report files into one pass/fail summary.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PolarMethod {
    ExactSvd,
    NewtonSchulz,
}

#[derive(Debug, Args)]
struct PolarArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "exact-svd")]
    method: PolarMethod,
    /// Optional config supplying tolerances and Newton-Schulz settings.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Config whose output directory is summarized.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Outcome {
    Passed,
    ChecksFailed,
}

/// Runs the CLI and returns the process exit code.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    0
                }
                _ => {
                    let _ = write!(err, "{e}");
                    1
                }
            };
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(Outcome::Passed) => 0,
        Ok(Outcome::ChecksFailed) => EXIT_CHECK_FAILED,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<Outcome, LabError> {
    match cmd {
        Command::Run(c) => cmd_run(&load(&c)?, out),
        Command::CheckSchedules(c) => cmd_check_schedules(&load(&c)?, out),
        Command::CheckNoise(c) => cmd_check_noise(&load(&c)?, out),
        Command::Polar(p) => cmd_polar(&p, out, err),
        Command::Report(r) => cmd_report(&r, out),
    }
}

fn load(c: &Common) -> Result<RunConfig, LabError> {
    let mut cfg = RunConfig::load(&c.config)?;
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &c.out {
        cfg.out = out.to_string_lossy().into_owned();
    }
    Ok(cfg)
}

fn say(out: &mut dyn Write, line: impl std::fmt::Display) {
    let _ = writeln!(out, "{line}");
}

fn labels(cfg: &RunConfig) -> io::TraceMeta {
    let optimizer = match cfg.optimizer.kind {
        OptimizerKind::Sgd => "sgd".to_string(),
        OptimizerKind::Muon => format!("muon(beta={})", cfg.optimizer.beta),
    };
    let objective = match cfg.objective.family {
        Family::PoweredDistance => "powered-distance",
        Family::GemanMcClure => "geman-mcclure",
    };
    let noise = match cfg.noise.kind {
        NoiseKind::None => "none",
        NoiseKind::Gaussian { .. } => "gaussian",
        NoiseKind::SymmetricPareto { .. } => "pareto",
        NoiseKind::StudentT { .. } => "student-t",
    };
    io::TraceMeta {
        seed: cfg.seed,
        optimizer,
        objective: objective.to_string(),
        noise: noise.to_string(),
    }
}

/// Per check id: row count and count per status, in order of first
/// appearance.
pub fn summarize(rows: &[ReportRow]) -> Vec<(String, [usize; 6])> {
    let mut out: Vec<(String, [usize; 6])> = Vec::new();
    for r in rows {
        let slot = match r.status {
            Status::Pass => 0,
            Status::Fail => 1,
            Status::Skipped => 2,
            Status::Vacuous => 3,
            Status::Unavailable => 4,
            Status::Info => 5,
        };
        match out.iter_mut().find(|(id, _)| *id == r.check_id) {
            Some((_, c)) => c[slot] += 1,
            None => {
                let mut c = [0; 6];
                c[slot] = 1;
                out.push((r.check_id.clone(), c));
            }
        }
    }
    out
}

fn print_summary(rows: &[ReportRow], out: &mut dyn Write) -> Outcome {
    let mut failed = false;
    for (id, c) in summarize(rows) {
        let verdict = if c[1] > 0 {
            failed = true;
            "FAIL"
        } else if c[0] > 0 {
            "PASS"
        } else {
            "N/A "
        };
        say(
            out,
            format_args!(
                "{verdict} {id}: {} pass, {} fail, {} skipped, {} vacuous, {} unavailable, {} info",
                c[0], c[1], c[2], c[3], c[4], c[5]
            ),
        );
    }
    if failed {
        Outcome::ChecksFailed
    } else {
        Outcome::Passed
    }
}

fn cmd_run(cfg: &RunConfig, out: &mut dyn Write) -> Result<Outcome, LabError> {
    let exp = Experiment::from_config(cfg)?;
    let result = run_all(&exp)?;
    let dir = Path::new(&cfg.out);
    io::ensure_dir(dir)?;
    io::write_file(&dir.join(io::CONFIG_ECHO), cfg.to_toml().as_bytes())?;
    io::write_file(
        &dir.join(io::TRACES),
        &io::traces_jsonl(&result.ensemble.traces, &labels(cfg)),
    )?;
    io::write_file(&dir.join(io::ENSEMBLE), &io::ensemble_csv(&result.ensemble.stats))?;
    io::write_file(&dir.join(io::REPORT), &io::report_csv(&result.report))?;
    if let Some(d) = &result.descent {
        io::write_file(&dir.join(io::DESCENT), &io::descent_csv(d))?;
    }
    say(
        out,
        format_args!(
            "{}: {} trials x {} steps, outputs in {}",
            cfg.name,
            cfg.seeds,
            cfg.horizon,
            dir.display()
        ),
    );
    if let Some(fit) = &result.rate {
        say(
            out,
            format_args!(
                "rate slope {:.4} (target {:.4}, residual {:.2e}, raw-min slope {:.4})",
                fit.slope, fit.target, fit.residual, fit.raw_min_slope
            ),
        );
    }
    Ok(print_summary(&result.report, out))
}

fn cmd_check_schedules(cfg: &RunConfig, out: &mut dyn Write) -> Result<Outcome, LabError> {
    let exp = Experiment::from_config(cfg)?;
    let report = schedule_check(&exp)?;
    let dir = Path::new(&cfg.out);
    io::ensure_dir(dir)?;
    io::write_file(&dir.join(io::SCHEDULES), &io::schedules_csv(&report))?;
    io::write_file(
        &dir.join(io::SCHEDULES_REPORT),
        &io::report_csv(&io::schedule_report_rows(&report)),
    )?;
    if report.pass {
        say(
            out,
            format_args!("schedule conditions for {} hold", report.method.name()),
        );
        Ok(Outcome::Passed)
    } else {
        let names: Vec<&str> = report.failures.iter().map(|s| s.name()).collect();
        say(
            out,
            format_args!(
                "schedule conditions for {} fail: {}",
                report.method.name(),
                names.join(", ")
            ),
        );
        Ok(Outcome::ChecksFailed)
    }
}

fn cmd_check_noise(cfg: &RunConfig, out: &mut dyn Write) -> Result<Outcome, LabError> {
    let exp = Experiment::from_config(cfg)?;
    let report = noise_check(&exp)?;
    let dir = Path::new(&cfg.out);
    io::ensure_dir(dir)?;
    io::write_file(&dir.join(io::NOISE), &io::noise_csv(&report))?;
    io::write_file(&dir.join(io::NOISE_REPORT), &io::report_csv(&report.report))?;
    say(
        out,
        format_args!("moment scaling slope {:.4} (target {:.4})", report.slope, report.target),
    );
    if let Some(w) = &report.witness {
        say(
            out,
            format_args!(
                "tail index estimate {:.3} +/- {:.3} from {} samples",
                w.hill_alpha, w.hill_stderr, w.samples
            ),
        );
    }
    Ok(print_summary(&report.report, out))
}

fn cmd_polar(args: &PolarArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<Outcome, LabError> {
    let (tol, ns) = match &args.config {
        Some(path) => {
            let cfg = RunConfig::load(path)?;
            (cfg.tolerances, cfg.optimizer.ns)
        }
        None => (Tolerances::default(), NewtonSchulzConfig::cubic()),
    };
    let w = io::read_matrix(&args.input)?;
    let o = match args.method {
        PolarMethod::ExactSvd => match polar_factor_svd(&w, &tol) {
            Ok(o) => o,
            Err(CoreError::DegenerateRank { rank, completion }) => {
                say(
                    err,
                    format_args!("warning: input has rank {rank}; printing a completed orthogonal factor"),
                );
                *completion
            }
            Err(e) => return Err(e.into()),
        },
        PolarMethod::NewtonSchulz => newton_schulz_orthogonalize(&w, &ns, &tol)?,
    };
    out.write_all(&io::matrix_csv(&o))
        .map_err(|e| LabError::io("<stdout>", e))?;
    Ok(Outcome::Passed)
}

fn cmd_report(args: &ReportArgs, out: &mut dyn Write) -> Result<Outcome, LabError> {
    let dir = match (&args.out, &args.config) {
        (Some(d), _) => d.clone(),
        (None, Some(c)) => PathBuf::from(RunConfig::load(c)?.out),
        (None, None) => return Err(LabError::Harness("report needs --out or --config".into())),
    };
    let files = io::report_files(&dir)?;
    if files.is_empty() {
        return Err(LabError::Input {
            path: dir,
            message: "no report files found".into(),
        });
    }
    let mut rows = Vec::new();
    for f in &files {
        rows.extend(io::read_report(f)?);
    }
    let summary = summarize(&rows);
    let mut csv = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    csv.write_record(io::SUMMARY_HEADER).expect("in-memory write");
    for (id, c) in &summary {
        let mut rec = vec![id.clone(), c.iter().sum::<usize>().to_string()];
        rec.extend(c.iter().map(|n| n.to_string()));
        csv.write_record(&rec).expect("in-memory write");
    }
    io::write_file(&dir.join(io::SUMMARY), &csv.into_inner().expect("in-memory flush"))?;
    let outcome = print_summary(&rows, out);
    say(
        out,
        match outcome {
            Outcome::Passed => "overall: pass",
            Outcome::ChecksFailed => "overall: FAIL",
        },
    );
    Ok(outcome)
}
