use std::time::Instant;
use uha_cli::config::ExperimentConfig;
use uha_cli::experiments::{initial_params, plain_vi_q};
use uha_core::bounds::{Group, GroupSet};
use uha_core::rng::derive_seed;
use uha_core::tuning::{optimize, Method, TrainConfig};

fn main() {
    let config: ExperimentConfig = serde_json::from_value(serde_json::json!({
        "method": "uha",
        "target": {"kind": "student_t", "dim": 20, "nu": 3.0},
        "k": 4,
        "trainable": ["q", "eps", "eta"],
        "steps": 5000, "batch_size": 16, "learning_rates": [1e-3],
        "eval_draws": 10000, "base_seed": 1
    }))
    .unwrap();
    let target = config.target.build().unwrap();
    let seed = derive_seed(1, &[("seed", 0)]);
    let q = plain_vi_q(&config, &target, seed).unwrap();

    for (k, eps_max) in [(4usize, 2.0f64), (4, 1.0), (16, 1.0), (128, 0.5), (128, 1.0)] {
        let t0 = Instant::now();
        let mut params0 = initial_params(&config, 20, Method::Uha);
        params0.schedule.raw_beta = vec![0.0; k - 1];
        params0.eps_max = eps_max;
        params0.set_epsilon(0.1);
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
            "[{:.0?}] K={k} eps_max={eps_max}: {:.4} ± {:.4}  eps {:.4} eta {:.3}",
            t0.elapsed(), r.best_eval.mean, r.best_eval.stderr,
            r.best.realized_epsilon(), r.best.realized_eta()
        );
    }
}
