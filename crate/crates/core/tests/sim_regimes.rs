use pixreason::{run_training, RewardConfig, SimConfig};

#[test]
fn identical_configs_give_identical_traces() {
    let cfg = SimConfig { seed: 11, steps: 60, ..SimConfig::default() };
    let a = serde_json::to_string(&run_training(&cfg).unwrap()).unwrap();
    let b = serde_json::to_string(&run_training(&cfg).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn curiosity_lifts_rapr_above_start() {
    for seed in 10..15 {
        let trace = run_training(&SimConfig { seed, ..SimConfig::default() }).unwrap();
        assert!(trace.tail_rapr(100) > trace.init_rapr, "seed {seed}");
    }
}

/// Without any skill growth the bonus alone keeps pixel-space usage at the
/// threshold while its accuracy does not improve.
#[test]
fn frozen_skill_gives_reward_hacking() {
    let h = RewardConfig::default().h_threshold;
    for seed in 0..5 {
        let cfg = SimConfig { seed, practice_gain: 0.0, recovery_factor: 1.0, op_error: 1.0, ..SimConfig::default() };
        let trace = run_training(&cfg).unwrap();
        assert!(trace.tail_rapr(100) >= h, "seed {seed}: {}", trace.tail_rapr(100));

        let acc = |steps: &[pixreason::sim::StepMetrics]| {
            let v: Vec<f64> = steps.iter().filter_map(|s| s.pr_accuracy).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        let n = trace.steps.len();
        let (early, late) = (acc(&trace.steps[..50]), acc(&trace.steps[n - 50..]));
        assert!((late - early).abs() < 0.05, "seed {seed}: accuracy {early:.3} -> {late:.3}");
    }
}

#[test]
fn invalid_configs_are_rejected() {
    assert!(run_training(&SimConfig { group_size: 1, ..SimConfig::default() }).is_err());
    assert!(run_training(&SimConfig { init_rapr: 1.5, ..SimConfig::default() }).is_err());
}
