//! Experiment orchestration: per-seed training runs with pooled summaries,
//! the bound-vs-budget table, subset-tuning comparisons, schedule
//! extrapolation, and posterior-moment diagnostics.

use crate::config::{ExperimentConfig, GridConfig, TargetSpec};
use crate::record::{
    hash_value, GridCellRecord, RateRecord, RawParams, RealizedParams, RunRecord,
};
use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::time::Instant;
use uha_core::bounds::{AnnealParams, BoundStats, Group, GroupSet};
use uha_core::dynamics::{
    corrected_transition, LeapfrogConfig, PhasePoint, TargetBridge,
};
use uha_core::rng::{derive_seed, CounterRng, Rand};
use uha_core::targets::{AnyTarget, Moments, Target};
use uha_core::tuning::{
    evaluate_method, extrapolate_params, grid_search_hais, moment_error, optimize, GridSpec,
    Method, OptimizeResult, TrainConfig,
};

/// Fresh (untrained) parameters for a method at likelihood budget `k`.
pub fn initial_params(config: &ExperimentConfig, dim: usize, method: Method) -> AnnealParams<f64> {
    let num_states = match method {
        Method::Uha | Method::Hais => config.k,
        Method::PlainVi | Method::Iw => 1,
    };
    let mut params = AnnealParams::new(dim, num_states);
    params.eps_max = config.eps_max;
    params.set_epsilon(config.eps_init);
    params.set_eta(config.eta_init);
    params
}

/// Runs plain VI to convergence and returns the tuned q (the standard
/// initialization for every other method).
pub fn plain_vi_q(
    config: &ExperimentConfig,
    target: &AnyTarget,
    seed: u64,
) -> Result<uha_core::targets::MeanFieldGaussian<f64>> {
    let params0 = initial_params(config, target.dim(), Method::PlainVi);
    let train = TrainConfig {
        steps: config.init_plain_vi_steps.unwrap_or(config.steps),
        batch_size: config.batch_size,
        learning_rates: config.learning_rates.clone(),
        groups: GroupSet::of(&[Group::Q]),
        k: 1,
        eval_draws: config.eval_draws.max(2000),
        seed: derive_seed(seed, &[("vi-init", 0)]),
    };
    let result = optimize(&train, &params0, target, Method::PlainVi)?;
    Ok(result.best.q)
}

/// One seed of the configured experiment. Returns the per-seed record and,
/// for gradient-trained methods, the optimizer output.
pub fn run_one_seed(
    config: &ExperimentConfig,
    target: &AnyTarget,
    seed_index: usize,
) -> Result<(RunRecord, Option<OptimizeResult>)> {
    let start = Instant::now();
    let method = config.method().map_err(|e| anyhow!(e.to_string()))?;
    let groups = config.groups().map_err(|e| anyhow!(e.to_string()))?;
    let seed = derive_seed(config.base_seed, &[("seed", seed_index as u64)]);

    let mut params0 = initial_params(config, target.dim(), method);
    if config.init_from_plain_vi && method != Method::PlainVi {
        params0.q = plain_vi_q(config, target, seed)?;
    }

    let mut record = RunRecord::new("run", config);
    record.seed = Some(seed);
    record.notes = config.target.notes();
    record.params_before = Some(RawParams::from_params(&params0));

    match method {
        Method::Hais => {
            let grid_config = config.grid.clone().unwrap_or_default();
            let spec = GridSpec {
                etas: grid_config.etas,
                target_rejection_rates: grid_config.target_rejection_rates,
                pilot_draws: grid_config.pilot_draws,
            };
            let result = grid_search_hais(&spec, &params0, target, config.eval_draws, seed);
            record.grid_cells = Some(
                result
                    .cells
                    .iter()
                    .map(|c| GridCellRecord {
                        target_rejection: c.target_rejection,
                        eta: c.eta,
                        epsilon: c.epsilon,
                        eval: c.eval.map(Into::into),
                        error: c.error.clone(),
                    })
                    .collect(),
            );
            let best = result
                .best_cell
                .ok_or_else(|| anyhow!("every grid cell failed calibration"))?;
            record.final_eval = result.cells[best].eval.map(Into::into);
            let best_params = result.best_params.unwrap();
            record.realized_after = Some(RealizedParams::from_params(&best_params));
            record.params_after = Some(RawParams::from_params(&best_params));
            record.wall_clock_seconds = start.elapsed().as_secs_f64();
            Ok((record, None))
        }
        _ => {
            let train = TrainConfig {
                steps: config.steps,
                batch_size: config.batch_size,
                learning_rates: config.learning_rates.clone(),
                groups: if method == Method::PlainVi && groups.is_empty() {
                    GroupSet::of(&[Group::Q])
                } else {
                    groups
                },
                k: config.k,
                eval_draws: config.eval_draws,
                seed,
            };
            let result = optimize(&train, &params0, target, method)?;
            record.params_after = Some(RawParams::from_params(&result.best));
            record.realized_after = Some(RealizedParams::from_params(&result.best));
            record.final_eval = Some(result.best_eval.into());
            record.baseline_eval = Some(result.baseline_eval.into());
            record.best_learning_rate = result.best_learning_rate;
            record.used_baseline = Some(result.used_baseline);
            record.learning_rates = Some(
                result
                    .rates
                    .iter()
                    .map(|r| RateRecord {
                        learning_rate: r.learning_rate,
                        eval: r.eval.into(),
                        skipped_steps: r.skipped_steps,
                        diverged_draws: r.diverged_draws,
                    })
                    .collect(),
            );
            // Trace of the winning rate (or the first if the baseline won).
            let trace_idx = result
                .rates
                .iter()
                .position(|r| Some(r.learning_rate) == result.best_learning_rate)
                .unwrap_or(0);
            record.trace = Some(result.rates[trace_idx].trace.clone());
            record.wall_clock_seconds = start.elapsed().as_secs_f64();
            Ok((record, Some(result)))
        }
    }
}

/// Pools per-seed final evaluations into a summary record.
pub fn pooled_summary(config: &ExperimentConfig, per_seed: &[RunRecord]) -> RunRecord {
    let stats: Vec<BoundStats> = per_seed
        .iter()
        .filter_map(|r| r.final_eval)
        .map(|s| BoundStats {
            mean: s.mean,
            stderr: s.stderr,
            n: s.n,
            diverged: s.diverged,
            unreliable: s.unreliable,
        })
        .collect();
    let mut summary = RunRecord::new("summary", config);
    if !stats.is_empty() {
        summary.final_eval = Some(BoundStats::pool(&stats).into());
    }
    summary.wall_clock_seconds = per_seed.iter().map(|r| r.wall_clock_seconds).sum();
    summary
}

/// Full experiment: every seed plus a pooled summary.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    let target = config.target.build().map_err(|e| anyhow!(e.to_string()))?;
    let mut records = Vec::new();
    for seed_index in 0..config.n_seeds {
        let (record, _) = run_one_seed(config, &target, seed_index)
            .with_context(|| format!("seed index {seed_index}"))?;
        records.push(record);
    }
    records.push(pooled_summary(config, &records.clone()));
    Ok(records)
}

// ---------------------------------------------------------------------------
// Bound-vs-budget table
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct TableOptions {
    pub dims: Vec<usize>,
    pub uha_ks: Vec<usize>,
    pub iw_ks: Vec<usize>,
    pub steps: usize,
    pub batch_size: usize,
    pub iw_batch_size: usize,
    pub learning_rates: Vec<f64>,
    pub eval_draws: usize,
    pub n_seeds: usize,
    pub base_seed: u64,
    pub nu: f64,
    /// Step-size cap; the tuned step size saturates 0.5 above ~100
    /// dimensions, so the table runner defaults to a looser cap.
    pub eps_max: f64,
}

impl Default for TableOptions {
    fn default() -> Self {
        TableOptions {
            dims: vec![20, 200, 500],
            uha_ks: vec![4, 16, 64, 128],
            iw_ks: vec![128, 1024],
            steps: 5000,
            batch_size: 16,
            // The importance-weighted gradient already averages K samples
            // per draw, so a smaller batch carries the same information.
            iw_batch_size: 4,
            learning_rates: vec![1e-3],
            eval_draws: 10_000,
            n_seeds: 4,
            base_seed: 0,
            nu: 3.0,
            eps_max: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableCell {
    pub dim: usize,
    pub method: String,
    pub k: usize,
    pub mean: f64,
    pub stderr: f64,
    pub per_seed_means: Vec<f64>,
    pub diverged: usize,
    pub error: Option<String>,
}

fn cell_config(opts: &TableOptions, dim: usize, method: &str, k: usize) -> ExperimentConfig {
    let (trainable, batch) = match method {
        "uha" => (vec!["q".into(), "eps".into(), "eta".into()], opts.batch_size),
        "iw" => (vec!["q".into()], opts.iw_batch_size),
        _ => (vec!["q".into()], opts.batch_size),
    };
    ExperimentConfig {
        method: method.to_string(),
        target: TargetSpec::StudentT { dim, nu: opts.nu },
        k,
        trainable,
        steps: opts.steps,
        batch_size: batch,
        learning_rates: opts.learning_rates.clone(),
        eval_draws: opts.eval_draws,
        base_seed: opts.base_seed,
        n_seeds: opts.n_seeds,
        init_from_plain_vi: true,
        init_plain_vi_steps: None,
        eps_max: opts.eps_max,
        eps_init: 0.1,
        eta_init: 0.5,
        grid: None,
        out: None,
    }
}

/// Runs the full (plain VI, annealed, importance-weighted) × K × dimension
/// grid on factorized Student-t targets, pooling seeds per cell. Per-cell
/// failures are reported as NaN cells and the run continues. The per-seed
/// plain-VI optimum is shared: it is both the K = 1 column and the
/// initializer for every other cell of that seed.
pub fn run_table(opts: &TableOptions) -> Vec<TableCell> {
    let mut cells = Vec::new();
    for &dim in &opts.dims {
        let target = TargetSpec::StudentT { dim, nu: opts.nu }
            .build()
            .expect("student-t target");

        // Per-seed plain-VI optima, reused across all cells of this dim.
        let vi_config = cell_config(opts, dim, "plain_vi", 1);
        let mut vi_qs = Vec::new();
        let mut vi_stats: Vec<Result<BoundStats>> = Vec::new();
        for seed_index in 0..opts.n_seeds {
            let seed = derive_seed(opts.base_seed, &[("seed", seed_index as u64)]);
            match plain_vi_q(&vi_config, &target, seed) {
                Ok(q) => {
                    let mut params = initial_params(&vi_config, dim, Method::PlainVi);
                    params.q = q.clone();
                    let eval = evaluate_method(
                        Method::PlainVi,
                        &params,
                        &target,
                        1,
                        opts.eval_draws,
                        derive_seed(seed, &[("table-eval", 0)]),
                    );
                    vi_qs.push(Some(q));
                    vi_stats.push(Ok(eval));
                }
                Err(e) => {
                    vi_qs.push(None);
                    vi_stats.push(Err(e));
                }
            }
        }
        cells.push(pool_cell(dim, "plain_vi", 1, &vi_stats));

        let mut run_method = |method: &str, ks: &[usize]| {
            for &k in ks {
                let config = cell_config(opts, dim, method, k);
                let m = method.parse::<Method>().unwrap();
                let results: Vec<Result<BoundStats>> = (0..opts.n_seeds)
                    .map(|seed_index| {
                        let seed =
                            derive_seed(opts.base_seed, &[("seed", seed_index as u64)]);
                        let q = vi_qs[seed_index]
                            .clone()
                            .ok_or_else(|| anyhow!("plain-VI initializer failed"))?;
                        let mut params0 = initial_params(&config, dim, m);
                        params0.q = q;
                        let train = TrainConfig {
                            steps: config.steps,
                            batch_size: config.batch_size,
                            learning_rates: config.learning_rates.clone(),
                            groups: config.groups().map_err(|e| anyhow!(e.to_string()))?,
                            k,
                            eval_draws: config.eval_draws,
                            seed,
                        };
                        let result = optimize(&train, &params0, &target, m)?;
                        Ok(result.best_eval)
                    })
                    .collect();
                cells.push(pool_cell(dim, method, k, &results));
            }
        };
        run_method("uha", &opts.uha_ks);
        run_method("iw", &opts.iw_ks);
    }
    cells
}

fn pool_cell(dim: usize, method: &str, k: usize, results: &[Result<BoundStats>]) -> TableCell {
    let ok: Vec<BoundStats> = results.iter().filter_map(|r| r.as_ref().ok()).copied().collect();
    let errors: Vec<String> = results
        .iter()
        .filter_map(|r| r.as_ref().err().map(|e| e.to_string()))
        .collect();
    if ok.is_empty() {
        return TableCell {
            dim,
            method: method.to_string(),
            k,
            mean: f64::NAN,
            stderr: f64::NAN,
            per_seed_means: vec![],
            diverged: 0,
            error: Some(errors.join("; ")),
        };
    }
    let pooled = BoundStats::pool(&ok);
    TableCell {
        dim,
        method: method.to_string(),
        k,
        mean: pooled.mean,
        stderr: pooled.stderr,
        per_seed_means: ok.iter().map(|s| s.mean).collect(),
        diverged: pooled.diverged,
        error: if errors.is_empty() {
            None
        } else {
            Some(errors.join("; "))
        },
    }
}

/// Wide CSV mirroring the table layout: one row per dimension, mean and
/// stderr columns per (method, K) cell.
pub fn table_to_csv(cells: &[TableCell]) -> String {
    let mut dims: Vec<usize> = cells.iter().map(|c| c.dim).collect();
    dims.sort_unstable();
    dims.dedup();
    let mut columns: Vec<(String, usize)> = Vec::new();
    for c in cells {
        let key = (c.method.clone(), c.k);
        if !columns.iter().any(|(m, k)| *m == key.0 && *k == key.1) {
            columns.push(key);
        }
    }

    let mut out = String::from("dim");
    for (method, k) in &columns {
        out.push_str(&format!(",{method}_k{k}_mean,{method}_k{k}_stderr"));
    }
    out.push('\n');
    for dim in dims {
        out.push_str(&dim.to_string());
        for (method, k) in &columns {
            match cells
                .iter()
                .find(|c| c.dim == dim && &c.method == method && c.k == *k)
            {
                Some(c) => out.push_str(&format!(",{},{}", c.mean, c.stderr)),
                None => out.push_str(",,"),
            }
        }
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
// Subset-tuning comparison
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubsetResult {
    pub groups: Vec<String>,
    pub mean: f64,
    pub stderr: f64,
    pub per_seed_means: Vec<f64>,
}

/// Trains one run per subset at matched seeds and initialization and returns
/// the results sorted by pooled mean, best first. Duplicate subsets are
/// dropped with a warning on stderr.
pub fn run_subsets(
    config: &ExperimentConfig,
    subsets: &[Vec<String>],
) -> Result<Vec<SubsetResult>> {
    let target = config.target.build().map_err(|e| anyhow!(e.to_string()))?;
    let mut seen: Vec<GroupSet> = Vec::new();
    let mut unique: Vec<(GroupSet, Vec<String>)> = Vec::new();
    for names in subsets {
        let set = GroupSet::from_names(names).map_err(|e| anyhow!(e))?;
        if set.is_empty() {
            bail!("subset {names:?} is empty");
        }
        if seen.contains(&set) {
            eprintln!("warning: duplicate subset {} dropped", set);
            continue;
        }
        seen.push(set);
        unique.push((set, names.clone()));
    }

    // Shared per-seed initializers.
    let mut inits = Vec::new();
    for seed_index in 0..config.n_seeds {
        let seed = derive_seed(config.base_seed, &[("seed", seed_index as u64)]);
        let mut params0 = initial_params(config, target.dim(), Method::Uha);
        if config.init_from_plain_vi {
            params0.q = plain_vi_q(config, &target, seed)?;
        }
        inits.push((seed, params0));
    }

    let mut results = Vec::new();
    for (set, names) in unique {
        let mut stats = Vec::new();
        for (seed, params0) in &inits {
            let train = TrainConfig {
                steps: config.steps,
                batch_size: config.batch_size,
                learning_rates: config.learning_rates.clone(),
                groups: set,
                k: config.k,
                eval_draws: config.eval_draws,
                seed: *seed,
            };
            let result = optimize(&train, params0, &target, Method::Uha)?;
            stats.push(result.best_eval);
        }
        let pooled = BoundStats::pool(&stats);
        results.push(SubsetResult {
            groups: names,
            mean: pooled.mean,
            stderr: pooled.stderr,
            per_seed_means: stats.iter().map(|s| s.mean).collect(),
        });
    }
    results.sort_by(|a, b| b.mean.total_cmp(&a.mean));
    Ok(results)
}

// ---------------------------------------------------------------------------
// Extrapolation and moments
// ---------------------------------------------------------------------------

/// Applies the cross-K schedule transformation to a trained record and
/// evaluates at the new budget.
pub fn run_extrapolation(
    record: &RunRecord,
    k1: usize,
    eval_draws: usize,
) -> Result<(RunRecord, BoundStats)> {
    let raw = record
        .params_after
        .as_ref()
        .ok_or_else(|| anyhow!("record has no trained parameters"))?;
    if record.method != "uha" {
        bail!("extrapolation applies to annealed-bound records, got {}", record.method);
    }
    let params = raw.to_params().map_err(|e| anyhow!(e))?;
    let extrapolated = extrapolate_params(&params, k1)?;

    let config: ExperimentConfig = serde_json::from_value(record.config.clone())
        .context("record carries an unreadable config echo")?;
    let target = config.target.build().map_err(|e| anyhow!(e.to_string()))?;
    let seed = derive_seed(record.seed.unwrap_or(config.base_seed), &[("extrapolate", k1 as u64)]);
    let start = Instant::now();
    let eval = evaluate_method(Method::Uha, &extrapolated, &target, k1, eval_draws, seed);

    let mut out = RunRecord::new("extrapolation", &config);
    out.k = k1;
    out.seed = record.seed;
    out.params_before = Some(raw.clone());
    out.params_after = Some(RawParams::from_params(&extrapolated));
    out.realized_after = Some(RealizedParams::from_params(&extrapolated));
    out.final_eval = Some(eval.into());
    out.notes = Some(format!("extrapolated from K={} record", params.num_states()));
    out.wall_clock_seconds = start.elapsed().as_secs_f64();
    Ok((out, eval))
}

/// Reference moments file: flat JSON with a checksum over its content.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReferenceMoments {
    pub mean: Vec<f64>,
    pub var_diag: Vec<f64>,
    pub source: String,
    pub checksum: String,
}

fn moments_checksum(mean: &[f64], var_diag: &[f64], source: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(source.as_bytes());
    hasher.update(b"\n");
    for v in mean.iter().chain(var_diag) {
        hasher.update(v.to_le_bytes());
    }
    format!("sha256:{:x}", hasher.finalize())
}

impl ReferenceMoments {
    pub fn new(mean: Vec<f64>, var_diag: Vec<f64>, source: String) -> Self {
        let checksum = moments_checksum(&mean, &var_diag, &source);
        ReferenceMoments {
            mean,
            var_diag,
            source,
            checksum,
        }
    }

    pub fn verify(&self) -> Result<()> {
        let expected = moments_checksum(&self.mean, &self.var_diag, &self.source);
        if expected != self.checksum {
            bail!(
                "reference checksum mismatch: file says {}, content hashes to {expected}",
                self.checksum
            );
        }
        Ok(())
    }

    pub fn moments(&self) -> Moments {
        Moments {
            mean: self.mean.clone(),
            var_diag: self.var_diag.clone(),
        }
    }
}

/// Long-run corrected-HMC reference: a single adjusted chain on the raw
/// target, thinned into moment estimates. Used once per dataset-backed
/// target and persisted with a checksum.
pub fn generate_reference_moments(
    target: &AnyTarget,
    n_steps: usize,
    burn_in: usize,
    step_size: f64,
    eta: f64,
    seed: u64,
) -> ReferenceMoments {
    let d = target.dim();
    let bridge = TargetBridge(target);
    let momentum = uha_core::dynamics::MomentumSpec::identity(d).prepared();
    let cfg = LeapfrogConfig {
        step_size,
        n_steps: 10,
    };
    let mut rng = CounterRng::from_seed(seed);
    let mut state = PhasePoint::new(vec![0.0; d], rng.normals(d));
    let mut n = 0usize;
    let mut mean = vec![0.0; d];
    let mut m2 = vec![0.0; d];
    for step in 0..n_steps {
        match corrected_transition(&state, &bridge, &cfg, &momentum, eta, &mut rng) {
            Ok(out) => state = out.state,
            Err(_) => continue, // divergent proposal; chain stays put
        }
        if step < burn_in {
            continue;
        }
        n += 1;
        for i in 0..d {
            let delta = state.z[i] - mean[i];
            mean[i] += delta / n as f64;
            m2[i] += delta * (state.z[i] - mean[i]);
        }
    }
    let var: Vec<f64> = m2.iter().map(|s| s / (n as f64 - 1.0).max(1.0)).collect();
    ReferenceMoments::new(
        mean,
        var,
        format!("corrected-hmc steps={n_steps} burn_in={burn_in} eps={step_size} eta={eta} seed={seed}"),
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MomentRecord {
    pub mean_mae: f64,
    pub var_mae: f64,
    pub n_samples: usize,
    pub diverged: usize,
    pub low_confidence: bool,
    pub reference_checksum: String,
}

/// Evaluates posterior-moment errors of a trained annealed sampler against a
/// reference (analytic moments or a checksummed file).
pub fn run_moments(
    record: &RunRecord,
    reference: Option<&ReferenceMoments>,
    n_samples: usize,
) -> Result<MomentRecord> {
    let raw = record
        .params_after
        .as_ref()
        .ok_or_else(|| anyhow!("record has no trained parameters"))?;
    let params = raw.to_params().map_err(|e| anyhow!(e))?;
    let config: ExperimentConfig = serde_json::from_value(record.config.clone())
        .context("record carries an unreadable config echo")?;
    let target = config.target.build().map_err(|e| anyhow!(e.to_string()))?;

    let (moments, checksum) = match reference {
        Some(file) => {
            file.verify()?;
            (file.moments(), file.checksum.clone())
        }
        None => {
            let analytic = target
                .known_moments()
                .ok_or_else(|| anyhow!("target has no analytic moments; supply a reference file"))?;
            let checksum =
                moments_checksum(&analytic.mean, &analytic.var_diag, "analytic");
            (analytic, checksum)
        }
    };

    let seed = derive_seed(record.seed.unwrap_or(config.base_seed), &[("moments", 0)]);
    let err = moment_error(&params, &target, n_samples, &moments, seed)?;
    Ok(MomentRecord {
        mean_mae: err.mean_mae,
        var_mae: err.var_mae,
        n_samples: err.n_samples,
        diverged: err.diverged,
        low_confidence: err.low_confidence,
        reference_checksum: checksum,
    })
}

/// Flattens record headlines into CSV.
pub fn records_to_csv(records: &[RunRecord]) -> String {
    let mut out = String::from(
        "kind,method,k,seed,mean,stderr,n,diverged,unreliable,best_learning_rate,wall_clock_seconds,config_hash\n",
    );
    for r in records {
        let (mean, stderr, n, diverged, unreliable) = match &r.final_eval {
            Some(s) => (
                s.mean.to_string(),
                s.stderr.to_string(),
                s.n.to_string(),
                s.diverged.to_string(),
                s.unreliable.to_string(),
            ),
            None => Default::default(),
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.kind,
            r.method,
            r.k,
            r.seed.map(|s| s.to_string()).unwrap_or_default(),
            mean,
            stderr,
            n,
            diverged,
            unreliable,
            r.best_learning_rate.map(|l| l.to_string()).unwrap_or_default(),
            r.wall_clock_seconds,
            r.config_hash,
        ));
    }
    out
}

/// Re-exported for the grid subcommand: a config-driven grid spec.
pub fn grid_spec_from(config: &Option<GridConfig>) -> GridSpec {
    let g = config.clone().unwrap_or_default();
    GridSpec {
        etas: g.etas,
        target_rejection_rates: g.target_rejection_rates,
        pilot_draws: g.pilot_draws,
    }
}

/// Stable hash of an arbitrary JSON value (exposed for tests).
pub fn json_hash(value: &serde_json::Value) -> String {
    hash_value(value)
}
