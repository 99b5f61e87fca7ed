//! `mixsim` subcommands. Exit codes: 0 success, 1 a violated invariant or
//! failed study, 2 a usage or configuration error.

use super::config::{parse_config, RunConfig};
use super::diagnostics_csv::{format_row, DiagnosticsWriter};
use super::snapshot::{read_snapshot, write_snapshot};
use crate::diagnostics::{self, DiagnosticsReport};
use crate::solver::{MixtureState, Solver, StepRecord};
use crate::verification::{convergence_study, CaseKind};
use clap::{Parser, Subcommand};
use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

#[derive(Parser, Debug)]
#[command(name = "mixsim", version, about = "Spectral solver and audit tool for reacting gas mixtures")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Integrate a configured run, writing diagnostics.csv and snapshots.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides `dir` in the [output] section.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute diagnostics of a snapshot and verify its ledgers.
    Check {
        #[arg(long)]
        snapshot: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
    /// Manufactured-solution convergence study.
    Mms {
        /// coupled, single_species or heat
        #[arg(long)]
        case: String,
        #[arg(long, default_value_t = 3)]
        levels: usize,
    },
}

/// Relative ledger drift tolerated by `check`, per unit of simulated time.
pub const LEDGER_TOLERANCE: f64 = 1e-10;
/// Allowed max |Σρ_k − ρ|/ρ when δ = 0.
pub const CONSISTENCY_BAND: f64 = 1e-6;

struct Failure {
    code: i32,
    message: String,
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: 2, message: message.into() }
}

fn violated(message: impl Into<String>) -> Failure {
    Failure { code: 1, message: message.into() }
}

pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let outcome = match cli.command {
        Command::Run { config, out } => run(&config, out),
        Command::Check { snapshot, config } => check(&snapshot, &config),
        Command::Mms { case, levels } => mms(&case, levels),
    };
    match outcome {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn load_config(path: &Path) -> Result<RunConfig, Failure> {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn build(cfg: &RunConfig) -> Result<(Solver, MixtureState), Failure> {
    let solver = Solver::new(cfg.grid(), cfg.approx.clone(), cfg.params.clone(), cfg.reaction.clone())
        .map_err(|e| usage(e.to_string()))?;
    let data = cfg.initial_data().map_err(usage)?;
    let state = data.into_state(solver.grid(), solver.approx(), solver.params()).map_err(|e| usage(e.to_string()))?;
    Ok((solver, state))
}

fn save(path: &Path, modes: usize, state: &MixtureState) -> Result<(), String> {
    let file = File::create(path).map_err(|e| format!("{}: {e}", path.display()))?;
    write_snapshot(BufWriter::new(file), modes, state).map_err(|e| format!("{}: {e}", path.display()))
}

fn run(config: &Path, out: Option<PathBuf>) -> Result<(), Failure> {
    let cfg = load_config(config)?;
    let (solver, state) = build(&cfg)?;
    let dir = out.unwrap_or_else(|| cfg.output.dir.clone());
    fs::create_dir_all(&dir).map_err(|e| usage(format!("cannot create {}: {e}", dir.display())))?;
    let csv_path = dir.join("diagnostics.csv");
    let file = File::create(&csv_path).map_err(|e| usage(format!("cannot create {}: {e}", csv_path.display())))?;
    let mut writer = DiagnosticsWriter::new(BufWriter::new(file));
    let t_end = cfg.approx.t_end;
    let modes = cfg.modes;
    let mut previous_energy: Option<f64> = None;
    let mut rows = 0usize;
    let mut steps = 0usize;

    let observer = |state: &MixtureState, record: &StepRecord| -> Result<(), String> {
        let initial = previous_energy.is_none();
        let last = state.time >= t_end;
        if initial || last || record.step.is_multiple_of(cfg.output.diag_every) {
            let report = diagnostics::report(&solver, state, record, previous_energy, cfg.output.bd_r);
            writer.write_row(&report).map_err(|e| e.to_string())?;
            previous_energy = Some(report.energy_total);
            rows += 1;
        } else {
            previous_energy = Some(diagnostics::total_energy(&solver, state));
        }
        if !initial && cfg.output.snapshot_every > 0 && record.step.is_multiple_of(cfg.output.snapshot_every) {
            save(&dir.join(format!("snapshot_{:06}.mxs", record.step)), modes, state)?;
        }
        steps = record.step;
        Ok(())
    };
    let end = solver.run(state, observer).map_err(|e| violated(format!("run aborted: {e}")))?;
    save(&dir.join("final.mxs"), modes, &end).map_err(usage)?;
    println!("run finished: t = {}, {steps} steps, {rows} diagnostics rows in {}", end.time, csv_path.display());
    Ok(())
}

struct Verdict {
    name: &'static str,
    passed: bool,
    detail: String,
}

fn relative(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

fn check(snapshot: &Path, config: &Path) -> Result<(), Failure> {
    let cfg = load_config(config)?;
    let file = File::open(snapshot).map_err(|e| usage(format!("cannot open {}: {e}", snapshot.display())))?;
    let snap = read_snapshot(BufReader::new(file)).map_err(|e| violated(format!("snapshot integrity: {e}")))?;
    if snap.dim != cfg.dim || snap.modes != cfg.modes || snap.state.n_species() != cfg.params.n_species() {
        return Err(violated(format!(
            "snapshot integrity: grid {}D M={} with {} species does not match the config",
            snap.dim,
            snap.modes,
            snap.state.n_species()
        )));
    }
    let (solver, initial) = build(&cfg)?;
    let state = &snap.state;
    let start = diagnostics::ledgers_and_positivity(&solver, &initial);
    let report = diagnostics::report(&solver, state, &StepRecord::default(), None, cfg.output.bd_r);
    let tolerance = LEDGER_TOLERANCE * (1.0 + state.time.abs());
    let mut verdicts = vec![
        Verdict { name: "finite diagnostics", passed: report.is_finite(), detail: String::new() },
        Verdict {
            name: "density positivity",
            passed: report.min_rho > 0.0,
            detail: format!("min rho = {:e}", report.min_rho),
        },
        Verdict {
            name: "temperature positivity",
            passed: report.min_theta > 0.0,
            detail: format!("min theta = {:e}", report.min_theta),
        },
        Verdict {
            name: "total mass ledger",
            passed: relative(report.total_mass, start.total_mass) <= tolerance,
            detail: format!("drift {:e}", relative(report.total_mass, start.total_mass)),
        },
        Verdict {
            name: "species mass ledger",
            passed: relative(report.species_ledger, start.species_ledger) <= tolerance,
            detail: format!("drift {:e}", relative(report.species_ledger, start.species_ledger)),
        },
    ];
    if cfg.approx.delta == 0.0 {
        verdicts.push(Verdict {
            name: "species/density consistency",
            passed: report.sum_rhok_dev <= CONSISTENCY_BAND,
            detail: format!("max |sum rho_k - rho|/rho = {:e}", report.sum_rhok_dev),
        });
    }
    let csv_path = snapshot.parent().unwrap_or(Path::new(".")).join("diagnostics.csv");
    if let Some(v) = replay_row(&csv_path, &report) {
        verdicts.push(v);
    }

    let mut failed = Vec::new();
    for v in &verdicts {
        println!("{:<30} {}  {}", v.name, if v.passed { "PASS" } else { "FAIL" }, v.detail);
        if !v.passed {
            failed.push(v.name);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(violated(format!("failed: {}", failed.join(", "))))
    }
}

// Compares the state-only columns against the logged row with the same time.
fn replay_row(csv_path: &Path, report: &DiagnosticsReport) -> Option<Verdict> {
    let mut reader = csv::Reader::from_path(csv_path).ok()?;
    let cells = format_row(report);
    let skip = ["picard_iters", "energy_residual"];
    for record in reader.records().flatten() {
        if record.get(0) != Some(cells[0].as_str()) {
            continue;
        }
        let mismatched: Vec<&str> = DiagnosticsReport::COLUMNS
            .iter()
            .enumerate()
            .filter(|(i, name)| !skip.contains(name) && record.get(*i) != Some(cells[*i].as_str()))
            .map(|(_, name)| *name)
            .collect();
        return Some(Verdict {
            name: "diagnostics replay",
            passed: mismatched.is_empty(),
            detail: if mismatched.is_empty() {
                format!("matches {}", csv_path.display())
            } else {
                format!("columns differ: {}", mismatched.join(", "))
            },
        });
    }
    None
}

fn mms(case: &str, levels: usize) -> Result<(), Failure> {
    let kind: CaseKind = case.parse().map_err(|e: crate::verification::MmsError| usage(e.to_string()))?;
    let report = convergence_study(kind, levels).map_err(|e| usage(e.to_string()))?;
    println!("case {case}");
    println!("{:>8} {:>14}", "M", "L2 error");
    for (m, e) in &report.spatial {
        println!("{m:>8} {e:>14.6e}");
    }
    println!("spatial gain (coarsest/finest): {:.3e}", report.spatial_gain());
    println!("{:>8} {:>14}", "dt", "L2 error");
    for (dt, e) in &report.temporal {
        println!("{dt:>8} {e:>14.6e}");
    }
    println!("observed temporal order: {:.4}", report.temporal_order);
    for f in &report.failures {
        println!("failed run: {f}");
    }
    if report.passed() {
        println!("PASS");
        Ok(())
    } else {
        Err(violated("convergence study below the required rates"))
    }
}
