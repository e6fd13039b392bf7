use std::time::Instant;
use uha_cli::config::ExperimentConfig;
use uha_cli::experiments::{initial_params, plain_vi_q};
use uha_core::bounds::{Group, GroupSet};
use uha_core::rng::derive_seed;
use uha_core::tuning::{optimize, Method, TrainConfig};

fn main() {
    let dim: usize = std::env::args().nth(1).unwrap().parse().unwrap();
    let steps: usize = std::env::args().nth(2).unwrap().parse().unwrap();
    let eps_max: f64 = std::env::args().nth(3).map(|s| s.parse().unwrap()).unwrap_or(0.5);
    let config: ExperimentConfig = serde_json::from_value(serde_json::json!({
        "method": "uha",
        "target": {"kind": "student_t", "dim": dim, "nu": 3.0},
        "k": 16,
        "trainable": ["q", "eps", "eta"],
        "steps": steps, "batch_size": 16, "learning_rates": [1e-3],
        "eval_draws": 10000, "base_seed": 1
    }))
    .unwrap();
    let target = config.target.build().unwrap();
    let seed = derive_seed(1, &[("seed", 0)]);
    let t0 = Instant::now();
    let q = plain_vi_q(&config, &target, seed).unwrap();
    println!("[{:.0?}] plain VI trained", t0.elapsed());

    // UHA K=16
    let t0 = Instant::now();
    let mut params0 = initial_params(&config, dim, Method::Uha);
    params0.schedule.raw_beta = vec![0.0; 15];
    params0.eps_max = eps_max;
    params0.set_epsilon(0.1);
    params0.q = q.clone();
    let train = TrainConfig {
        steps,
        batch_size: 16,
        learning_rates: vec![1e-3],
        groups: GroupSet::of(&[Group::Q, Group::Eps, Group::Eta]),
        k: 16,
        eval_draws: 10_000,
        seed,
    };
    let r = optimize(&train, &params0, &target, Method::Uha).unwrap();
    println!(
        "[{:.0?}] UHA K=16 d{dim}: {:.4} ± {:.4}  eps {:.4} eta {:.3}",
        t0.elapsed(), r.best_eval.mean, r.best_eval.stderr,
        r.best.realized_epsilon(), r.best.realized_eta()
    );

    // IW at large K
    let iw_k = if dim >= 500 { 1024 } else { 128 };
    let t0 = Instant::now();
    let mut params0 = initial_params(&config, dim, Method::Iw);
    params0.q = q.clone();
    let train = TrainConfig {
        steps,
        batch_size: 2,
        learning_rates: vec![1e-3],
        groups: GroupSet::of(&[Group::Q]),
        k: iw_k,
        eval_draws: 10_000,
        seed,
    };
    let r = optimize(&train, &params0, &target, Method::Iw).unwrap();
    println!("[{:.0?}] IW K={iw_k} d{dim}: {:.4} ± {:.4}", t0.elapsed(), r.best_eval.mean, r.best_eval.stderr);
}
