//! Deterministic inputs shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pixreason::{AdvantageGroup, AdvantageMode, ImageBuffer, RolloutGroup, RolloutRecord};

/// A transcript with `rounds` think / crop / result rounds and a final answer.
pub fn transcript(rounds: usize) -> String {
    let mut text = String::new();
    for i in 0..rounds {
        text.push_str(&format!("Looking at region {i} of the image for the small label.\n\n"));
        text.push_str(&format!(
            "<tool_call>{{\"name\": \"crop_image\", \"arguments\": {{\"bbox_2d\": [{a},{a},{b},{b}], \"target_image\": 1}}}}</tool_call>\n\n",
            a = i * 10,
            b = i * 10 + 40
        ));
        text.push_str(&format!("Execution result: <image {}: 40x40>\n\n", i + 2));
    }
    text.push_str("The label reads B.\n\n\\boxed{B}");
    text
}

/// An image with a gradient so crops touch distinct bytes.
pub fn gradient(width: u32, height: u32) -> ImageBuffer {
    let pixels = (0..height)
        .flat_map(|y| (0..width).flat_map(move |x| [(x % 256) as u8, (y % 256) as u8, ((x + y) % 256) as u8]))
        .collect();
    ImageBuffer::new(width, height, pixels).expect("sides are positive")
}

/// A group of `g` random rollout records for one query.
pub fn rollout_group(g: usize, seed: u64) -> RolloutGroup {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = (0..g)
        .map(|i| {
            let n_vo = rng.random_range(0..4u32);
            RolloutRecord {
                query_id: "q".into(),
                trajectory_id: format!("q-{i}"),
                correct: rng.random_bool(0.5),
                is_pr: n_vo > 0,
                n_vo,
            }
        })
        .collect();
    RolloutGroup::new("q", records).expect("records share one query")
}

/// `n` advantage groups of size `g`; about a fifth of them uniform.
pub fn advantage_groups(n: usize, g: usize, seed: u64) -> Vec<AdvantageGroup> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|q| {
            let uniform = rng.random_bool(0.2);
            let rewards = (0..g).map(|_| if uniform { 1.0 } else { f64::from(rng.random_range(0..2u8)) }).collect();
            let ids = (0..g).map(|t| format!("q{q}-{t}")).collect();
            AdvantageGroup::new(format!("q{q}"), ids, rewards, AdvantageMode::MeanOnly, pixreason::grpo::DEFAULT_EPS)
                .expect("valid group")
        })
        .collect()
}
