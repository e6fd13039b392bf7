use std::time::Instant;
use uha_core::bounds::{AnnealParams, GroupSet, Group};
use uha_core::targets::StudentT;
use uha_core::tuning::{reparam_gradient, Method, evaluate_method};

fn main() {
    // dim-500 UHA K=16 training step, batch 16
    let target = StudentT::new(500, 3.0).unwrap();
    let params = AnnealParams::new(500, 16);
    let groups = GroupSet::of(&[Group::Q, Group::Eps, Group::Eta]);
    let t0 = Instant::now();
    for step in 0..10 {
        let _ = reparam_gradient(Method::Uha, &params, groups, &target, 16, 16, step).unwrap();
    }
    println!("uha d500 K16 batch16: {:.1} ms/step", t0.elapsed().as_secs_f64() * 100.0);

    // IW K=1024 d500 gradient step batch 2
    let t0 = Instant::now();
    for step in 0..5 {
        let _ = reparam_gradient(Method::Iw, &params, GroupSet::of(&[Group::Q]), &target, 1024, 2, step).unwrap();
    }
    println!("iw d500 K1024 batch2: {:.1} ms/step", t0.elapsed().as_secs_f64() * 200.0);

    // Evaluation: 10k draws UHA d500 K16
    let t0 = Instant::now();
    let s = evaluate_method(Method::Uha, &params, &target, 16, 10_000, 1);
    println!("uha eval 10k draws: {:.2} s  (mean {:.3})", t0.elapsed().as_secs_f64(), s.mean);

    // Evaluation: 10k draws IW K1024 d500
    let t0 = Instant::now();
    let s = evaluate_method(Method::Iw, &params, &target, 1024, 10_000, 1);
    println!("iw eval 10k draws: {:.2} s  (mean {:.3})", t0.elapsed().as_secs_f64(), s.mean);
}
