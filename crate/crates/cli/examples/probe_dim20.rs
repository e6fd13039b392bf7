use std::time::Instant;
use uha_cli::config::ExperimentConfig;
use uha_cli::experiments::{initial_params, plain_vi_q};
use uha_core::bounds::{Group, GroupSet};
use uha_core::rng::derive_seed;
use uha_core::tuning::{evaluate_method, optimize, Method, TrainConfig};

fn main() {
    let config: ExperimentConfig = serde_json::from_value(serde_json::json!({
        "method": "uha",
        "target": {"kind": "student_t", "dim": 20, "nu": 3.0},
        "k": 16,
        "trainable": ["q", "eps", "eta"],
        "steps": 5000, "batch_size": 16, "learning_rates": [1e-3],
        "eval_draws": 10000, "base_seed": 1
    }))
    .unwrap();
    let target = config.target.build().unwrap();
    let seed = derive_seed(1, &[("seed", 0)]);

    let t0 = Instant::now();
    let q = plain_vi_q(&config, &target, seed).unwrap();
    let mut vi_params = initial_params(&config, 20, Method::PlainVi);
    vi_params.q = q.clone();
    let vi = evaluate_method(Method::PlainVi, &vi_params, &target, 1, 10_000, 99);
    println!("[{:.0?}] plain VI: {:.4} ± {:.4} (paper -0.82)", t0.elapsed(), vi.mean, vi.stderr);
    println!("  q scales: {:?}", &q.log_scale.iter().map(|l| (l.exp() * 1000.0).round() / 1000.0).collect::<Vec<_>>()[..4]);

    for k in [4usize, 16] {
        let t0 = Instant::now();
        let mut params0 = initial_params(&config, 20, Method::Uha);
        params0.schedule.raw_beta = vec![0.0; k - 1];
        params0.q = q.clone();
        let train = TrainConfig {
            steps: 5000,
            batch_size: 16,
            learning_rates: vec![1e-3],
            groups: GroupSet::of(&[Group::Q, Group::Eps, Group::Eta]),
            k,
            eval_draws: 10_000,
            seed,
        };
        let r = optimize(&train, &params0, &target, Method::Uha).unwrap();
        println!(
            "[{:.0?}] UHA K={k}: {:.4} ± {:.4} (paper: K4 -0.55, K16 -0.36) eps {:.4} eta {:.3} baseline {:.3}",
            t0.elapsed(), r.best_eval.mean, r.best_eval.stderr,
            r.best.realized_epsilon(), r.best.realized_eta(), r.baseline_eval.mean
        );
    }

    // IW K=128
    let t0 = Instant::now();
    let mut params0 = initial_params(&config, 20, Method::Iw);
    params0.q = q.clone();
    let train = TrainConfig {
        steps: 5000, batch_size: 4, learning_rates: vec![1e-3],
        groups: GroupSet::of(&[Group::Q]), k: 128, eval_draws: 10_000, seed,
    };
    let r = optimize(&train, &params0, &target, Method::Iw).unwrap();
    println!("[{:.0?}] IW K=128: {:.4} ± {:.4} (paper -0.14)", t0.elapsed(), r.best_eval.mean, r.best_eval.stderr);
}
