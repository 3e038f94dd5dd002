//! Command-line experiment harness: single runs, ablation sweeps, the
//! learning-rate grid search, and standalone cost reports.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numeric divergence,
//! 1 anything else. The output directory defaults to `runs/` and can be
//! overridden with the `ZOWARMUP_OUT_DIR` environment variable.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::config::RunConfig;
use crate::cost::{
    comm_full_with, comm_zo_with, mem_full_with, mem_zo_with, resnet18_descriptor, Accounting,
    Direction, Resnet18Stem,
};
use crate::data::{save_weights, SplitDataset};
use crate::error::{Error, Result};
use crate::fed::{run_zowarmup, sweep_seed, tau_for_grad_steps, RunOutput};
use crate::metrics::{mean_std, write_curves_csv, write_jsonl, write_summary_csv, CurvePoint, SummaryRow};
use crate::nn::ModelDescriptor;
use crate::zopt::PerturbKind;

pub const OUT_DIR_ENV: &str = "ZOWARMUP_OUT_DIR";

#[derive(Parser)]
#[command(name = "zowarmup", version, about = "Two-phase federated training simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute one run and write metrics, cost report, and final weights.
    Run {
        config: PathBuf,
    },
    /// Run the cross product of axis values and seeds; write summary and
    /// curve CSVs.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        axis: Axis,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long, default_value_t = 3)]
        seeds: usize,
    },
    /// Two-stage learning-rate grid search over the standard ranges.
    Grid {
        config: PathBuf,
    },
    /// Communication/memory cost report for a model descriptor file
    /// (JSON: {"param_count": N, "layer_outputs": [{"maps":..,"width":..,
    /// "height":..}, ...]}).
    Cost {
        /// Descriptor JSON path; omit when using --builtin.
        descriptor: Option<PathBuf>,
        /// Built-in descriptor: resnet18-cifar32 or resnet18-imagenet32.
        #[arg(long)]
        builtin: Option<BuiltinDescriptor>,
        #[arg(long, default_value_t = 64)]
        batch_size: u64,
        #[arg(long, default_value_t = 3)]
        seeds_per_client: u64,
        #[arg(long, default_value_t = 50)]
        participants: u64,
        /// Accounting width: 32 (headline convention) or 64 (strict).
        #[arg(long, default_value_t = 32)]
        accounting: u8,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    Pivot,
    S,
    Tau,
    Split,
    GradSteps,
    Distribution,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BuiltinDescriptor {
    Resnet18Cifar32,
    Resnet18Imagenet32,
}

/// Parses arguments from the process environment and dispatches. Returns the
/// process exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => 2,
                Error::Numeric(_) => 3,
                _ => 1,
            }
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config } => cmd_run(&config),
        Command::Sweep { config, axis, values, seeds } => cmd_sweep(&config, axis, &values, seeds),
        Command::Grid { config } => cmd_grid(&config),
        Command::Cost { descriptor, builtin, batch_size, seeds_per_client, participants, accounting } => {
            cmd_cost(descriptor.as_deref(), builtin, batch_size, seeds_per_client, participants, accounting)
        }
    }
}

fn out_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn run_dir(config_path: &Path, suffix: &str) -> Result<PathBuf> {
    let stem = config_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("run");
    let dir = out_dir().join(format!("{stem}{suffix}"));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn cmd_run(config_path: &Path) -> Result<()> {
    let cfg = RunConfig::load(config_path)?;
    let data = cfg.dataset()?;
    let output = run_zowarmup(&cfg.experiment(), &data)?;
    let dir = run_dir(config_path, "")?;
    write_run_artifacts(&dir, &output)?;

    let total_ms: f64 = output.metrics.iter().map(|m| m.wall_time_ms).sum();
    for m in &output.metrics {
        let every = (output.metrics.len() / 10).max(1);
        if m.round_index % every == 0 || m.round_index + 1 == output.metrics.len() {
            println!(
                "round {:>4}/{} phase={:?} acc={:.4} loss={:.4}",
                m.round_index + 1,
                output.metrics.len(),
                m.phase,
                m.eval_accuracy,
                m.eval_loss
            );
        }
    }
    println!(
        "run complete: final_accuracy={:.4} rounds={} wall_time={:.1}s artifacts={}",
        output.final_accuracy(),
        output.metrics.len(),
        total_ms / 1000.0,
        dir.display()
    );
    Ok(())
}

fn write_run_artifacts(dir: &Path, output: &RunOutput) -> Result<()> {
    write_jsonl(&dir.join("metrics.jsonl"), &output.metrics)?;
    let report = serde_json::to_string_pretty(&output.cost_report)
        .map_err(|e| Error::Config(format!("cost report serialization: {e}")))?;
    std::fs::write(dir.join("cost_report.json"), report)?;
    save_weights(&dir.join("final_weights.bin"), &output.final_weights)?;
    Ok(())
}

fn axis_label(axis: Axis) -> &'static str {
    match axis {
        Axis::Pivot => "pivot",
        Axis::S => "s",
        Axis::Tau => "tau",
        Axis::Split => "split",
        Axis::GradSteps => "grad_steps",
        Axis::Distribution => "distribution",
    }
}

/// Applies one grid value to a config copy. Gradient-step values also pull
/// in the paired tau preset.
fn apply_axis(cfg: &mut RunConfig, axis: Axis, value: &str) -> Result<()> {
    let parse_usize = |v: &str| {
        v.parse::<usize>()
            .map_err(|_| Error::Config(format!("axis value '{v}' is not an integer")))
    };
    let parse_f64 = |v: &str| {
        v.parse::<f64>()
            .map_err(|_| Error::Config(format!("axis value '{v}' is not a number")))
    };
    match axis {
        Axis::Pivot => cfg.pivot_round = parse_usize(value)?,
        Axis::S => cfg.seeds_per_client = parse_usize(value)?,
        Axis::Tau => cfg.tau = parse_f64(value)?,
        Axis::Split => cfg.hi_fraction = parse_f64(value)?,
        Axis::GradSteps => {
            cfg.zo_grad_steps = parse_usize(value)?;
            cfg.tau = tau_for_grad_steps(cfg.zo_grad_steps);
        }
        Axis::Distribution => {
            cfg.perturb_kind = match value.to_ascii_lowercase().as_str() {
                "rademacher" => PerturbKind::Rademacher,
                "gaussian" => PerturbKind::Gaussian,
                other => {
                    return Err(Error::Config(format!(
                        "unknown distribution '{other}' (expected rademacher or gaussian)"
                    )))
                }
            };
        }
    }
    Ok(())
}

fn cmd_sweep(config_path: &Path, axis: Axis, values: &[String], seeds: usize) -> Result<()> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    if seeds == 0 {
        return Err(Error::Config("sweep needs at least one seed".into()));
    }
    let base = RunConfig::load(config_path)?;
    let data = base.dataset()?;

    let mut rows: Vec<SummaryRow> = Vec::new();
    let mut curves: Vec<CurvePoint> = Vec::new();
    for value in values {
        let mut cfg = base.clone();
        apply_axis(&mut cfg, axis, value)?;
        cfg.experiment().validate()?;

        let mut finals = Vec::with_capacity(seeds);
        for seed_index in 0..seeds {
            let mut exp = cfg.experiment();
            exp.master_seed = sweep_seed(base.master_seed, seed_index);
            let output = run_zowarmup(&exp, &data)?;
            finals.push(output.final_accuracy());
            for m in &output.metrics {
                curves.push(CurvePoint {
                    value: value.clone(),
                    seed_index,
                    round_index: m.round_index,
                    phase: m.phase,
                    eval_accuracy: m.eval_accuracy,
                    eval_loss: m.eval_loss,
                });
            }
        }
        let (mean, std) = mean_std(&finals);
        println!(
            "{}={value}: mean_final_accuracy={mean:.4} std={std:.4} over {seeds} seeds",
            axis_label(axis)
        );
        rows.push(SummaryRow {
            value: value.clone(),
            mean_accuracy: mean,
            std_accuracy: std,
            runs: seeds,
        });
    }

    let dir = run_dir(config_path, &format!("_sweep_{}", axis_label(axis)))?;
    write_summary_csv(&dir.join("summary.csv"), &rows)?;
    write_curves_csv(&dir.join("curves.csv"), &curves)?;
    println!("sweep complete: {}", dir.display());
    Ok(())
}

// Standard search ranges for the two phase's client/server rates.
const ETA_S_WARMUP_GRID: [f64; 3] = [1.0, 0.5, 0.1];
const ETA_C_WARMUP_GRID: [f64; 8] = [0.5, 0.1, 0.05, 0.01, 0.005, 0.001, 0.0005, 0.0001];
const ETA_S_ZO_GRID: [f64; 4] = [0.5, 0.1, 0.05, 0.01];
const ETA_C_ZO_GRID: [f64; 11] = [
    0.1, 0.05, 0.01, 0.005, 0.001, 0.0005, 0.0001, 0.00005, 0.00001, 0.000005, 0.000001,
];

/// Two-stage grid: warm-up rates are scored on a warm-up-only schedule
/// (pivot pinned to total_rounds), then the zeroth-order rates are searched
/// with the winning warm-up pair on the full schedule.
fn cmd_grid(config_path: &Path) -> Result<()> {
    let base = RunConfig::load(config_path)?;
    let data = base.dataset()?;
    let dir = run_dir(config_path, "_grid")?;
    let mut lines = vec!["stage,eta_client,eta_server,final_accuracy".to_string()];

    let mut best_warmup = (base.eta_c_hi, base.eta_s, f64::NEG_INFINITY);
    for &eta_c in &ETA_C_WARMUP_GRID {
        for &eta_s in &ETA_S_WARMUP_GRID {
            let mut exp = base.experiment();
            exp.eta_c_hi = eta_c;
            exp.eta_s = eta_s;
            exp.pivot_round = exp.total_rounds;
            let acc = run_zowarmup(&exp, &data)?.final_accuracy();
            lines.push(format!("warmup,{eta_c},{eta_s},{acc}"));
            if acc > best_warmup.2 {
                best_warmup = (eta_c, eta_s, acc);
            }
        }
    }
    println!(
        "warm-up grid best: eta_c_hi={} eta_s={} accuracy={:.4}",
        best_warmup.0, best_warmup.1, best_warmup.2
    );

    let mut best_zo = (base.eta_c_zo, base.eta_s_zo, f64::NEG_INFINITY);
    for &eta_c_zo in &ETA_C_ZO_GRID {
        for &eta_s_zo in &ETA_S_ZO_GRID {
            let mut exp = base.experiment();
            exp.eta_c_hi = best_warmup.0;
            exp.eta_s = best_warmup.1;
            exp.eta_c_zo = eta_c_zo;
            exp.eta_s_zo = eta_s_zo;
            let acc = run_zowarmup(&exp, &data)?.final_accuracy();
            lines.push(format!("zo,{eta_c_zo},{eta_s_zo},{acc}"));
            if acc > best_zo.2 {
                best_zo = (eta_c_zo, eta_s_zo, acc);
            }
        }
    }
    println!(
        "zo grid best: eta_c_zo={} eta_s_zo={} accuracy={:.4}",
        best_zo.0, best_zo.1, best_zo.2
    );

    std::fs::write(dir.join("grid.csv"), lines.join("\n") + "\n")?;
    println!("grid complete: {}", dir.display());
    Ok(())
}

fn cmd_cost(
    descriptor_path: Option<&Path>,
    builtin: Option<BuiltinDescriptor>,
    batch_size: u64,
    seeds_per_client: u64,
    participants: u64,
    accounting: u8,
) -> Result<()> {
    let acc = match accounting {
        32 => Accounting::Bits32,
        64 => Accounting::Bits64,
        other => {
            return Err(Error::Config(format!(
                "accounting must be 32 or 64, got {other}"
            )))
        }
    };
    let desc: ModelDescriptor = match (descriptor_path, builtin) {
        (Some(path), None) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Error::Config(format!("cannot read descriptor {}: {e}", path.display()))
            })?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        (None, Some(b)) => match b {
            BuiltinDescriptor::Resnet18Cifar32 => {
                resnet18_descriptor(Resnet18Stem::Cifar, 32, 10)
            }
            BuiltinDescriptor::Resnet18Imagenet32 => {
                resnet18_descriptor(Resnet18Stem::ImageNet, 32, 10)
            }
        },
        _ => {
            return Err(Error::Config(
                "pass exactly one of a descriptor file or --builtin".into(),
            ))
        }
    };
    desc.validate()?;

    let report = serde_json::json!({
        "accounting_bits": if acc == Accounting::Bits32 { 32 } else { 64 },
        "param_count": desc.param_count,
        "batch_size": batch_size,
        "seeds_per_client": seeds_per_client,
        "participants": participants,
        "first_order": {
            "uplink_bytes": comm_full_with(desc.param_count, acc),
            "downlink_bytes": comm_full_with(desc.param_count, acc),
            "peak_memory_bytes": mem_full_with(&desc, batch_size, acc),
        },
        "zero_order": {
            "uplink_bytes": comm_zo_with(seeds_per_client, participants, Direction::Up, acc),
            "downlink_bytes": comm_zo_with(seeds_per_client, participants, Direction::Down, acc),
            "peak_memory_bytes": mem_zo_with(&desc, batch_size, acc),
        },
    });
    println!("{}", serde_json::to_string_pretty(&report).expect("json"));
    Ok(())
}

/// Shared by tests: loads a config and runs it once, returning the output
/// and the resolved dataset.
pub fn run_config_once(config_path: &Path) -> Result<(RunOutput, SplitDataset)> {
    let cfg = RunConfig::load(config_path)?;
    let data = cfg.dataset()?;
    let output = run_zowarmup(&cfg.experiment(), &data)?;
    Ok((output, data))
}
