use std::collections::HashSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pixreason::grpo::{ReplayBuffer, SampleSource, DEFAULT_EPS};
use pixreason::{
    group_advantages, ssr_fill_batch, AdvantageGroup, AdvantageMode, EpisodeClock, EpisodeConfig, SsrSelector,
};

fn mode() -> impl Strategy<Value = AdvantageMode> {
    prop_oneof![Just(AdvantageMode::MeanOnly), Just(AdvantageMode::MeanStd)]
}

/// Per step: per group, either a constant reward or a list of rewards.
fn stream() -> impl Strategy<Value = Vec<Vec<Vec<f64>>>> {
    let group = prop_oneof![
        (0.0..2.0f64).prop_map(|r| vec![r; 4]),
        prop::collection::vec(0.0..2.0f64, 4),
    ];
    prop::collection::vec(prop::collection::vec(group, 1..6), 1..12)
}

fn build(step: usize, rewards: &[Vec<f64>]) -> Vec<AdvantageGroup> {
    rewards
        .iter()
        .enumerate()
        .map(|(q, r)| {
            let ids = (0..r.len()).map(|i| format!("s{step}q{q}-{i}")).collect();
            AdvantageGroup::new(format!("s{step}q{q}"), ids, r.clone(), AdvantageMode::MeanOnly, DEFAULT_EPS).unwrap()
        })
        .collect()
}

/// Small episodes so that boundaries occur within a short stream.
fn small() -> EpisodeConfig {
    EpisodeConfig { queries_per_episode: 8, group_size: 4, train_batch: 12 }
}

fn run(stream: &[Vec<Vec<f64>>], seed: u64) -> Vec<String> {
    let cfg = small();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buffer = ReplayBuffer::new();
    let mut clock = EpisodeClock::new(cfg);
    stream
        .iter()
        .enumerate()
        .map(|(step, rewards)| {
            let batch = ssr_fill_batch(&build(step, rewards), &mut buffer, &cfg, &SsrSelector::default(), &mut rng);
            clock.advance(rewards.len() as u64, &mut buffer);
            serde_json::to_string(&batch.entries).unwrap()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 512, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn advantages_sum_to_zero(rewards in prop::collection::vec(-5.0..5.0f64, 2..16), m in mode()) {
        let g = group_advantages(&rewards, m, DEFAULT_EPS).unwrap();
        prop_assert!(g.advantages.iter().sum::<f64>().abs() < 1e-9);
        if g.uniform {
            prop_assert!(g.advantages.iter().all(|a| *a == 0.0));
        }
    }

    #[test]
    fn batches_hold_fresh_or_current_episode_samples(stream in stream(), seed in any::<u64>()) {
        let cfg = small();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut buffer = ReplayBuffer::new();
        let mut clock = EpisodeClock::new(cfg);
        for (step, rewards) in stream.iter().enumerate() {
            let groups = build(step, rewards);
            let uniform: HashSet<&str> =
                groups.iter().filter(|g| g.uniform).map(|g| g.query_id.as_str()).collect();
            let buffered: HashSet<String> = buffer.entries().iter().map(|s| s.trajectory_id.clone()).collect();
            let episode = clock.episode();
            prop_assert!(buffer.entries().iter().all(|s| s.episode == episode));

            let batch = ssr_fill_batch(&groups, &mut buffer, &cfg, &SsrSelector::default(), &mut rng);
            prop_assert!(batch.len() <= cfg.train_batch);
            let fresh_prefix = format!("s{step}q");
            let mut seen = HashSet::new();
            for e in &batch.entries {
                prop_assert!(!uniform.contains(e.sample.query_id.as_str()));
                prop_assert!(seen.insert(e.sample.trajectory_id.clone()));
                match e.source {
                    SampleSource::Fresh => prop_assert!(e.sample.query_id.starts_with(&fresh_prefix)),
                    SampleSource::Replay => prop_assert!(buffered.contains(&e.sample.trajectory_id)),
                }
            }
            clock.advance(rewards.len() as u64, &mut buffer);
        }
    }

    #[test]
    fn ssr_is_reproducible(stream in stream(), seed in any::<u64>()) {
        prop_assert_eq!(run(&stream, seed), run(&stream, seed));
    }
}
