use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use uha_cli::config::{ConfigError, ExperimentConfig};
use uha_cli::experiments::{
    generate_reference_moments, records_to_csv, run_experiment, run_extrapolation, run_moments,
    run_subsets, run_table, table_to_csv, ReferenceMoments, TableOptions,
};
use uha_cli::record::{append_records, read_records, RunRecord};

#[derive(Parser)]
#[command(
    name = "uha",
    version,
    about = "Annealed variational bounds: training, evaluation, and reproduction harness"
)]
struct Cli {
    /// Worker threads for draw-level parallelism (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonRunArgs {
    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output JSON-lines path (overrides the config's `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Evaluation draw count override.
    #[arg(long)]
    eval_draws: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train (or grid-search) one configured experiment across seeds.
    Optimize(CommonRunArgs),
    /// Bound-versus-budget table on factorized Student-t targets.
    Table1 {
        /// Target dimensionalities.
        #[arg(long, value_delimiter = ',', default_values_t = [20usize, 200, 500])]
        dims: Vec<usize>,
        /// Annealed-bound budgets.
        #[arg(long, value_delimiter = ',', default_values_t = [4usize, 16, 64, 128])]
        uha_ks: Vec<usize>,
        /// Importance-weighting budgets.
        #[arg(long, value_delimiter = ',', default_values_t = [128usize, 1024])]
        iw_ks: Vec<usize>,
        #[arg(long, default_value_t = 5000)]
        steps: usize,
        #[arg(long, default_value_t = 4)]
        seeds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10_000)]
        eval_draws: usize,
        /// CSV output path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the same experiment under several trainable-group subsets.
    Subsets {
        #[command(flatten)]
        common: CommonRunArgs,
        /// Subsets as comma-separated group lists, e.g.
        /// --subset eps,eta --subset q,eps,eta,sigma,beta,eps_of_beta,psi_of_beta
        #[arg(long = "subset", required = true)]
        subsets: Vec<String>,
    },
    /// Rescale a trained record's schedules to a new budget and evaluate.
    Extrapolate {
        /// JSON-lines file holding trained records.
        #[arg(long)]
        record: PathBuf,
        /// New likelihood budget.
        #[arg(long)]
        k1: usize,
        #[arg(long, default_value_t = 10_000)]
        eval_draws: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Posterior-moment error of a trained record against a reference.
    Moments {
        /// Trained-run records (not needed with --generate-reference).
        #[arg(long)]
        record: Option<PathBuf>,
        /// Reference moments file; omit to use the target's analytic moments.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Generate a reference file with a long corrected-HMC run instead
        /// of evaluating (writes to --reference).
        #[arg(long, default_value_t = false)]
        generate_reference: bool,
        /// Config describing the target (generation mode only).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 500_000)]
        hmc_steps: usize,
        #[arg(long, default_value_t = 0.2)]
        hmc_step_size: f64,
    },
    /// Grid-search the corrected bound over (rejection rate, damping) cells.
    Grid(CommonRunArgs),
    /// Flatten JSON-lines records into CSV headlines.
    ExportCsv {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(args: &CommonRunArgs) -> Result<ExperimentConfig, ConfigError> {
    let mut config = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.base_seed = seed;
    }
    if let Some(eval_draws) = args.eval_draws {
        config.eval_draws = eval_draws;
    }
    if let Some(out) = &args.out {
        config.out = Some(out.clone());
    }
    config.validate()?;
    Ok(config)
}

fn out_path(config: &ExperimentConfig) -> PathBuf {
    config
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs.jsonl"))
}

/// Writes a partial record carrying the failure diagnostic, best effort.
fn persist_failure(config: &ExperimentConfig, err: &anyhow::Error) {
    let mut record = RunRecord::new("failed", config);
    record.error = Some(format!("{err:#}"));
    let _ = append_records(&out_path(config), &[record]);
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Some(workers) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
            .context("initializing worker pool")?;
    }

    match cli.command {
        Command::Optimize(ref args) | Command::Grid(ref args) => {
            let config = match load_config(args) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("invalid config: {e}");
                    return Ok(ExitCode::from(2));
                }
            };
            match run_experiment(&config) {
                Ok(records) => {
                    append_records(&out_path(&config), &records)?;
                    if let Some(summary) = records.iter().find(|r| r.kind == "summary") {
                        if let Some(stats) = &summary.final_eval {
                            println!(
                                "{} k={}: mean {:.4} ± {:.4} ({} seeds, {} diverged)",
                                config.method,
                                config.k,
                                stats.mean,
                                stats.stderr,
                                config.n_seeds,
                                stats.diverged
                            );
                        }
                    }
                    Ok(ExitCode::SUCCESS)
                }
                Err(e) => {
                    persist_failure(&config, &e);
                    eprintln!("run failed: {e:#}");
                    Ok(ExitCode::from(1))
                }
            }
        }
        Command::Table1 {
            dims,
            uha_ks,
            iw_ks,
            steps,
            seeds,
            seed,
            eval_draws,
            out,
        } => {
            let opts = TableOptions {
                dims,
                uha_ks,
                iw_ks,
                steps,
                eval_draws,
                n_seeds: seeds,
                base_seed: seed,
                ..Default::default()
            };
            let cells = run_table(&opts);
            let csv = table_to_csv(&cells);
            std::fs::write(&out, &csv)?;
            print!("{csv}");
            for cell in cells.iter().filter(|c| c.error.is_some()) {
                eprintln!(
                    "warning: cell ({}, {}, K={}) incomplete: {}",
                    cell.dim,
                    cell.method,
                    cell.k,
                    cell.error.as_ref().unwrap()
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Subsets { ref common, ref subsets } => {
            let config = match load_config(common) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("invalid config: {e}");
                    return Ok(ExitCode::from(2));
                }
            };
            let parsed: Vec<Vec<String>> = subsets
                .iter()
                .map(|s| s.split(',').map(|g| g.trim().to_string()).collect())
                .collect();
            match run_subsets(&config, &parsed) {
                Ok(results) => {
                    println!("subset ranking (best first):");
                    for r in &results {
                        println!(
                            "  {:<55} {:.4} ± {:.4}",
                            r.groups.join("+"),
                            r.mean,
                            r.stderr
                        );
                    }
                    let mut record = RunRecord::new("subsets", &config);
                    record.notes = Some(serde_json::to_string(&results)?);
                    append_records(&out_path(&config), &[record])?;
                    Ok(ExitCode::SUCCESS)
                }
                Err(e) => {
                    persist_failure(&config, &e);
                    eprintln!("run failed: {e:#}");
                    Ok(ExitCode::from(1))
                }
            }
        }
        Command::Extrapolate {
            record,
            k1,
            eval_draws,
            out,
        } => {
            let records = read_records(&record)?;
            let sources: Vec<&RunRecord> = records
                .iter()
                .filter(|r| r.kind == "run" && r.params_after.is_some() && r.method == "uha")
                .collect();
            if sources.is_empty() {
                bail!("no trained annealed-bound records in {}", record.display());
            }
            let mut outputs = Vec::new();
            for source in sources {
                let (rec, stats) = run_extrapolation(source, k1, eval_draws)?;
                println!(
                    "seed {:?}: K={} -> K={k1}: mean {:.4} ± {:.4}",
                    source.seed, source.k, stats.mean, stats.stderr
                );
                outputs.push(rec);
            }
            let out = out.unwrap_or(record);
            append_records(&out, &outputs)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Moments {
            record,
            reference,
            samples,
            out,
            generate_reference,
            config,
            hmc_steps,
            hmc_step_size,
        } => {
            if generate_reference {
                let config_path =
                    config.ok_or_else(|| anyhow!("--generate-reference needs --config"))?;
                let config = ExperimentConfig::load(&config_path)
                    .map_err(|e| anyhow!(e.to_string()))?;
                let target = config.target.build().map_err(|e| anyhow!(e.to_string()))?;
                let reference_path =
                    reference.ok_or_else(|| anyhow!("--generate-reference needs --reference"))?;
                let moments = generate_reference_moments(
                    &target,
                    hmc_steps,
                    hmc_steps / 10,
                    hmc_step_size,
                    0.0,
                    config.base_seed,
                );
                std::fs::write(&reference_path, serde_json::to_string_pretty(&moments)?)?;
                println!("reference written to {}", reference_path.display());
                return Ok(ExitCode::SUCCESS);
            }

            let record = record.ok_or_else(|| anyhow!("--record is required to evaluate"))?;
            let records = read_records(&record)?;
            let source = records
                .iter()
                .rev()
                .find(|r| r.kind == "run" && r.params_after.is_some() && r.method == "uha")
                .ok_or_else(|| anyhow!("no trained annealed-bound record found"))?;
            let reference_file = match &reference {
                Some(path) => {
                    let text = std::fs::read_to_string(path)?;
                    let parsed: ReferenceMoments = serde_json::from_str(&text)?;
                    Some(parsed)
                }
                None => None,
            };
            let result = run_moments(source, reference_file.as_ref(), samples)?;
            println!(
                "mean MAE {:.6}, covariance-diagonal MAE {:.6} ({} samples{})",
                result.mean_mae,
                result.var_mae,
                result.n_samples,
                if result.low_confidence {
                    ", low confidence"
                } else {
                    ""
                }
            );
            if let Some(out) = out {
                let config: ExperimentConfig = serde_json::from_value(source.config.clone())?;
                let mut rec = RunRecord::new("moments", &config);
                rec.seed = source.seed;
                rec.notes = Some(serde_json::to_string(&result)?);
                append_records(&out, &[rec])?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::ExportCsv { records, out } => {
            let parsed = read_records(&records)?;
            std::fs::write(&out, records_to_csv(&parsed))?;
            println!("wrote {} records to {}", parsed.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
