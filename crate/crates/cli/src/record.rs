//! Run records: self-contained JSON-lines output, one parseable record per
//! line, append-only so a crashed run leaves a valid prefix.

use crate::config::ExperimentConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use uha_core::bounds::{AffineEps, AffinePsi, AnnealParams, BoundStats, BridgeSchedule, GroupSet};
use uha_core::dynamics::MomentumSpec;
use uha_core::targets::MeanFieldGaussian;

/// Unconstrained parameters in storable form; reconstructs an
/// [`AnnealParams`] exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawParams {
    pub q_loc: Vec<f64>,
    pub q_log_scale: Vec<f64>,
    pub raw_eps: f64,
    pub raw_eta: f64,
    pub log_sigma_diag: Vec<f64>,
    pub raw_beta: Vec<f64>,
    pub affine_eps: Option<(f64, f64)>,
    pub affine_psi: Option<RawAffinePsi>,
    pub eps_max: f64,
    pub n_leapfrog: usize,
    pub trainable: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawAffinePsi {
    pub loc_slope: Vec<f64>,
    pub loc_intercept: Vec<f64>,
    pub log_scale_slope: Vec<f64>,
    pub log_scale_intercept: Vec<f64>,
}

impl RawParams {
    pub fn from_params(params: &AnnealParams<f64>) -> Self {
        RawParams {
            q_loc: params.q.loc.clone(),
            q_log_scale: params.q.log_scale.clone(),
            raw_eps: params.raw_eps,
            raw_eta: params.raw_eta,
            log_sigma_diag: params.momentum.log_sigma_diag.clone(),
            raw_beta: params.schedule.raw_beta.clone(),
            affine_eps: params
                .schedule
                .affine_eps
                .as_ref()
                .map(|ae| (ae.slope, ae.intercept)),
            affine_psi: params.schedule.affine_psi.as_ref().map(|psi| RawAffinePsi {
                loc_slope: psi.loc_slope.clone(),
                loc_intercept: psi.loc_intercept.clone(),
                log_scale_slope: psi.log_scale_slope.clone(),
                log_scale_intercept: psi.log_scale_intercept.clone(),
            }),
            eps_max: params.eps_max,
            n_leapfrog: params.n_leapfrog,
            trainable: params.trainable.names().iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn to_params(&self) -> Result<AnnealParams<f64>, String> {
        Ok(AnnealParams {
            q: MeanFieldGaussian {
                loc: self.q_loc.clone(),
                log_scale: self.q_log_scale.clone(),
            },
            momentum: MomentumSpec {
                log_sigma_diag: self.log_sigma_diag.clone(),
            },
            raw_eps: self.raw_eps,
            raw_eta: self.raw_eta,
            schedule: BridgeSchedule {
                raw_beta: self.raw_beta.clone(),
                affine_eps: self.affine_eps.map(|(slope, intercept)| AffineEps {
                    slope,
                    intercept,
                }),
                affine_psi: self.affine_psi.as_ref().map(|psi| AffinePsi {
                    loc_slope: psi.loc_slope.clone(),
                    loc_intercept: psi.loc_intercept.clone(),
                    log_scale_slope: psi.log_scale_slope.clone(),
                    log_scale_intercept: psi.log_scale_intercept.clone(),
                }),
            },
            eps_max: self.eps_max,
            n_leapfrog: self.n_leapfrog,
            trainable: GroupSet::from_names(&self.trainable)?,
        })
    }
}

/// Human-readable realization of the parameters (derived, for inspection).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RealizedParams {
    pub epsilon: f64,
    pub eta: f64,
    pub betas: Vec<f64>,
    pub sigma_diag: Vec<f64>,
}

impl RealizedParams {
    pub fn from_params(params: &AnnealParams<f64>) -> Self {
        RealizedParams {
            epsilon: params.realized_epsilon(),
            eta: params.realized_eta(),
            betas: params.realized_betas(),
            sigma_diag: params
                .momentum
                .log_sigma_diag
                .iter()
                .map(|ls| ls.exp())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StatsRecord {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
    pub diverged: usize,
    pub unreliable: bool,
}

impl From<BoundStats> for StatsRecord {
    fn from(s: BoundStats) -> Self {
        StatsRecord {
            mean: s.mean,
            stderr: s.stderr,
            n: s.n,
            diverged: s.diverged,
            unreliable: s.unreliable,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateRecord {
    pub learning_rate: f64,
    pub eval: StatsRecord,
    pub skipped_steps: usize,
    pub diverged_draws: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridCellRecord {
    pub target_rejection: f64,
    pub eta: f64,
    pub epsilon: Option<f64>,
    pub eval: Option<StatsRecord>,
    pub error: Option<String>,
}

/// One JSON-lines record. `kind` distinguishes per-seed runs, pooled
/// summaries, and the derived record types.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub kind: String,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub method: String,
    pub k: usize,
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub params_before: Option<RawParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub params_after: Option<RawParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub realized_after: Option<RealizedParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_eval: Option<StatsRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline_eval: Option<StatsRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rates: Option<Vec<RateRecord>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_learning_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub used_baseline: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_cells: Option<Vec<GridCellRecord>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub wall_clock_seconds: f64,
    pub library_version: String,
    pub rng_algorithm: String,
}

impl RunRecord {
    pub fn new(kind: &str, config: &ExperimentConfig) -> Self {
        let config_json = serde_json::to_value(config).expect("config serializes");
        let config_hash = hash_value(&config_json);
        RunRecord {
            kind: kind.to_string(),
            config: config_json,
            config_hash,
            method: config.method.clone(),
            k: config.k,
            seed: None,
            params_before: None,
            params_after: None,
            realized_after: None,
            trace: None,
            final_eval: None,
            baseline_eval: None,
            learning_rates: None,
            best_learning_rate: None,
            used_baseline: None,
            grid_cells: None,
            notes: None,
            error: None,
            wall_clock_seconds: 0.0,
            library_version: env!("CARGO_PKG_VERSION").to_string(),
            rng_algorithm: uha_core::rng::RNG_ALGORITHM.to_string(),
        }
    }
}

/// SHA-256 of the canonical (serde_json-compact) encoding.
pub fn hash_value(value: &serde_json::Value) -> String {
    let bytes = serde_json::to_vec(value).expect("value serializes");
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    format!("sha256:{:x}", hasher.finalize())
}

/// Appends one record per line; creates the file if needed.
pub fn append_records(path: &Path, records: &[RunRecord]) -> anyhow::Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut file = OpenOptions::new().create(true).append(true).open(path)?;
    for record in records {
        serde_json::to_writer(&mut file, record)?;
        file.write_all(b"\n")?;
    }
    file.flush()?;
    Ok(())
}

/// Reads every parseable record; a trailing partial line (crashed run) is
/// ignored.
pub fn read_records(path: &Path) -> anyhow::Result<Vec<RunRecord>> {
    let file = std::fs::File::open(path)?;
    let mut records = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<RunRecord>(&line) {
            Ok(r) => records.push(r),
            Err(_) => break, // partial trailing line
        }
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_params_round_trip() {
        let mut p = AnnealParams::new(3, 5);
        p.set_epsilon(0.07);
        p.set_eta(0.83);
        p.schedule.raw_beta = vec![0.3, -0.2, 1.0, 0.0];
        p.ensure_groups(GroupSet::all());
        p.trainable = GroupSet::all();
        let raw = RawParams::from_params(&p);
        let text = serde_json::to_string(&raw).unwrap();
        let back: RawParams = serde_json::from_str(&text).unwrap();
        let q = back.to_params().unwrap();
        assert_eq!(q.raw_eps, p.raw_eps);
        assert_eq!(q.schedule.raw_beta, p.schedule.raw_beta);
        assert_eq!(q.trainable, p.trainable);
        assert_eq!(
            q.schedule.affine_psi.as_ref().unwrap().loc_intercept,
            p.schedule.affine_psi.as_ref().unwrap().loc_intercept
        );
    }

    #[test]
    fn jsonl_append_and_crash_tolerant_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("runs.jsonl");
        let config: ExperimentConfig = serde_json::from_value(serde_json::json!({
            "method": "uha",
            "target": {"kind": "student_t", "dim": 2},
            "k": 4
        }))
        .unwrap();
        let mut r1 = RunRecord::new("run", &config);
        r1.seed = Some(1);
        let r2 = RunRecord::new("summary", &config);
        append_records(&path, &[r1, r2]).unwrap();

        // Simulate a crash mid-record.
        {
            let mut f = OpenOptions::new().append(true).open(&path).unwrap();
            f.write_all(b"{\"kind\": \"run\", \"truncat").unwrap();
        }
        let records = read_records(&path).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[0].kind, "run");
        assert_eq!(records[1].kind, "summary");
        assert_eq!(records[0].config_hash, records[1].config_hash);
        assert!(records[0].config_hash.starts_with("sha256:"));
    }
}
