//! Two-mode policy simulator for the learning trap.
//!
//! Each rollout picks pixel mode with probability `logistic(pr_logit)`.
//! Textual reasoning is already competent; pixel reasoning starts out
//! clumsy because most operations fail, and failures are only partly
//! recoverable. Practice makes operations reliable and sharpens the pixel
//! skill, but unused skill slowly decays back toward its starting point.
//!
//! Trained on plain correctness the policy abandons pixel mode before the
//! skill can pay off. The curiosity bonus keeps enough pixel rollouts alive
//! for practice to close the gap, after which pixel mode wins on its own and
//! the bonus switches itself off.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::grpo::{group_advantages, AdvantageMode, DEFAULT_EPS};
use crate::reward::{curiosity_bonus, modified_reward, rapr, RewardConfig, RolloutGroup, RolloutRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryClass {
    NeedsPixel,
    TextSolvable,
}

impl QueryClass {
    fn idx(self) -> usize {
        match self {
            QueryClass::NeedsPixel => 0,
            QueryClass::TextSolvable => 1,
        }
    }
}

/// Share of `NeedsPixel` queries in the training stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimQuery {
    pub needs_pixel_fraction: f64,
}

impl SimQuery {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> QueryClass {
        if rng.random::<f64>() < self.needs_pixel_fraction {
            QueryClass::NeedsPixel
        } else {
            QueryClass::TextSolvable
        }
    }

    fn weights(&self) -> [f64; 2] {
        [self.needs_pixel_fraction, 1.0 - self.needs_pixel_fraction]
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Simulated learner. Skill arrays are indexed by [`QueryClass`]
/// (`[needs_pixel, text_solvable]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimPolicy {
    pub pr_logit: f64,
    pub skill_text: [f64; 2],
    pub skill_pixel: [f64; 2],
    pub skill_pixel_init: [f64; 2],
    pub skill_pixel_cap: [f64; 2],
    pub op_error_rate: f64,
    pub op_error_init: f64,
    pub op_error_floor: f64,
    /// Chance that a failed operation still ends in a correct answer, as a
    /// fraction of the text-mode accuracy.
    pub recovery_factor: f64,
    /// Attempted operations so far.
    pub practice: u64,
    pub step_size: f64,
    /// Pixel-skill gain per successful operation.
    pub practice_gain: f64,
    /// Op-error reduction per attempted operation.
    pub error_gain: f64,
    /// Per-step pull of the pixel skill back toward its initial value.
    pub skill_decay: f64,
}

impl SimPolicy {
    pub fn pr_prob(&self) -> f64 {
        logistic(self.pr_logit)
    }

    /// Expected accuracy of text mode under the query mix.
    pub fn return_text(&self, mix: &SimQuery) -> f64 {
        let w = mix.weights();
        w[0] * self.skill_text[0] + w[1] * self.skill_text[1]
    }

    /// Expected accuracy of pixel mode under the query mix.
    pub fn return_pixel(&self, mix: &SimQuery) -> f64 {
        let w = mix.weights();
        (0..2)
            .map(|c| {
                let e = self.op_error_rate;
                w[c] * (e * self.skill_text[c] * self.recovery_factor + (1.0 - e) * self.skill_pixel[c])
            })
            .sum()
    }

    /// Relaxes the pixel skill toward its initial value by `skill_decay`.
    pub fn forget(&mut self) {
        for c in 0..2 {
            self.skill_pixel[c] -= self.skill_decay * (self.skill_pixel[c] - self.skill_pixel_init[c]);
        }
    }
}

/// Sampled group with the hidden per-rollout draws kept for the update.
#[derive(Debug, Clone, PartialEq)]
pub struct SimGroup {
    pub class: QueryClass,
    pub group: RolloutGroup,
    pub pixel_mode: Vec<bool>,
    pub op_failed: Vec<bool>,
    /// Pixel-mode probability the modes were drawn with.
    pub sampling_prob: f64,
}

pub fn sim_rollout_group<R: Rng + ?Sized>(
    policy: &SimPolicy,
    class: QueryClass,
    query_id: &str,
    group_size: usize,
    rng: &mut R,
) -> SimGroup {
    let p = policy.pr_prob();
    let c = class.idx();
    let mut records = Vec::with_capacity(group_size);
    let mut pixel_mode = Vec::with_capacity(group_size);
    let mut op_failed = Vec::with_capacity(group_size);
    for i in 0..group_size {
        let pixel = rng.random::<f64>() < p;
        let (failed, chance) = if pixel {
            let failed = rng.random::<f64>() < policy.op_error_rate;
            let chance = if failed {
                policy.skill_text[c] * policy.recovery_factor
            } else {
                policy.skill_pixel[c]
            };
            (failed, chance)
        } else {
            (false, policy.skill_text[c])
        };
        let correct = rng.random::<f64>() < chance;
        records.push(RolloutRecord {
            query_id: query_id.to_string(),
            trajectory_id: format!("{query_id}-{i}"),
            correct,
            is_pr: pixel,
            n_vo: u32::from(pixel),
        });
        pixel_mode.push(pixel);
        op_failed.push(failed);
    }
    SimGroup {
        class,
        group: RolloutGroup { query_id: query_id.to_string(), records },
        pixel_mode,
        op_failed,
        sampling_prob: p,
    }
}

/// Score-function update on the mode choice plus practice bookkeeping.
pub fn policy_gradient_step(policy: &SimPolicy, group: &SimGroup, advantages: &[f64]) -> SimPolicy {
    let mut next = policy.clone();
    let score: f64 = advantages
        .iter()
        .zip(&group.pixel_mode)
        .map(|(a, &m)| a * (f64::from(u8::from(m)) - group.sampling_prob))
        .sum();
    next.pr_logit += policy.step_size * score;

    let attempts = group.pixel_mode.iter().filter(|&&m| m).count() as u64;
    let successes = group.pixel_mode.iter().zip(&group.op_failed).filter(|(&m, &f)| m && !f).count();
    next.practice += attempts;
    let c = group.class.idx();
    next.skill_pixel[c] =
        (next.skill_pixel[c] + policy.practice_gain * successes as f64).min(next.skill_pixel_cap[c]);
    next.op_error_rate =
        (next.op_error_init - next.error_gain * next.practice as f64).max(next.op_error_floor).min(next.op_error_init);
    next
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub seed: u64,
    pub steps: usize,
    pub group_size: usize,
    pub queries_per_step: usize,
    pub reward: RewardConfig,
    pub with_curiosity: bool,
    pub practice_gain: f64,
    /// Op-error reduction per attempted op, as a multiple of `practice_gain`.
    pub error_gain_ratio: f64,
    pub skill_decay: f64,
    pub step_size: f64,
    pub query: SimQuery,
    pub init_rapr: f64,
    pub skill_text: [f64; 2],
    pub skill_pixel: [f64; 2],
    pub skill_pixel_cap: [f64; 2],
    pub op_error: f64,
    pub op_error_floor: f64,
    pub recovery_factor: f64,
    pub advantage_mode: AdvantageMode,
}

impl Default for SimConfig {
    /// Calibrated so that at step 0 RaPR ≈ 0.55, pixel-mode accuracy ≈ 24%
    /// and text-mode accuracy ≈ 50%.
    fn default() -> Self {
        Self {
            seed: 0,
            steps: 400,
            group_size: 8,
            queries_per_step: 32,
            reward: RewardConfig::default(),
            with_curiosity: true,
            practice_gain: 4e-5,
            error_gain_ratio: 50.0,
            skill_decay: 0.005,
            step_size: 0.06,
            query: SimQuery { needs_pixel_fraction: 0.7 },
            init_rapr: 0.55,
            skill_text: [0.33, 0.9],
            skill_pixel: [0.46, 0.46],
            skill_pixel_cap: [0.9, 0.9],
            op_error: 0.85,
            op_error_floor: 0.05,
            recovery_factor: 0.4,
            advantage_mode: AdvantageMode::MeanOnly,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid simulation config: {0}")]
pub struct SimConfigError(String);

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimConfigError> {
        let err = |m: &str| Err(SimConfigError(m.into()));
        if self.steps == 0 {
            return err("steps must be >= 1");
        }
        if self.group_size < 2 || self.queries_per_step == 0 {
            return err("group_size must be >= 2 and queries_per_step >= 1");
        }
        if !(self.init_rapr > 0.0 && self.init_rapr < 1.0) {
            return err("init_rapr must lie strictly between 0 and 1");
        }
        let probs = [
            self.skill_text[0],
            self.skill_text[1],
            self.skill_pixel[0],
            self.skill_pixel[1],
            self.skill_pixel_cap[0],
            self.skill_pixel_cap[1],
            self.op_error,
            self.op_error_floor,
            self.recovery_factor,
            self.query.needs_pixel_fraction,
            self.skill_decay,
        ];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return err("skills, rates and fractions must lie in [0, 1]");
        }
        if self.practice_gain < 0.0 || self.error_gain_ratio < 0.0 || self.step_size < 0.0 {
            return err("gains and step size must be non-negative");
        }
        self.reward.validate().map_err(|e| SimConfigError(e.to_string()))
    }

    pub fn initial_policy(&self) -> SimPolicy {
        SimPolicy {
            pr_logit: logit(self.init_rapr),
            skill_text: self.skill_text,
            skill_pixel: self.skill_pixel,
            skill_pixel_init: self.skill_pixel,
            skill_pixel_cap: self.skill_pixel_cap,
            op_error_rate: self.op_error,
            op_error_init: self.op_error,
            op_error_floor: self.op_error_floor.min(self.op_error),
            recovery_factor: self.recovery_factor,
            practice: 0,
            step_size: self.step_size,
            practice_gain: self.practice_gain,
            error_gain: self.practice_gain * self.error_gain_ratio,
            skill_decay: self.skill_decay,
        }
    }
}

/// One CSV row per training step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    /// Fraction of this step's rollouts that used pixel mode.
    pub rapr: f64,
    pub op_error: f64,
    pub return_text: f64,
    pub return_pixel: f64,
    /// Mean curiosity bonus over this step's pixel rollouts (0 if none).
    pub bonus_mean: f64,
    /// Accuracy of this step's pixel rollouts; empty when there were none.
    pub pr_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTrace {
    pub init_rapr: f64,
    pub init_return_text: f64,
    pub init_return_pixel: f64,
    pub steps: Vec<StepMetrics>,
}

impl MetricsTrace {
    pub fn rapr(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.rapr).collect()
    }

    pub fn op_error(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.op_error).collect()
    }

    /// Mean RaPR over the last `n` steps.
    pub fn tail_rapr(&self, n: usize) -> f64 {
        tail_mean(self.steps.iter().map(|s| s.rapr), self.steps.len(), n)
    }

    pub fn tail_bonus(&self, n: usize) -> f64 {
        tail_mean(self.steps.iter().map(|s| s.bonus_mean), self.steps.len(), n)
    }

    pub fn peak_bonus(&self) -> f64 {
        self.steps.iter().map(|s| s.bonus_mean).fold(0.0, f64::max)
    }

    pub fn initial_gap(&self) -> f64 {
        self.init_return_text - self.init_return_pixel
    }

    pub fn final_gap(&self) -> f64 {
        self.steps.last().map_or(self.initial_gap(), |s| s.return_text - s.return_pixel)
    }
}

fn tail_mean(values: impl Iterator<Item = f64>, len: usize, n: usize) -> f64 {
    let n = n.min(len).max(1);
    values.skip(len.saturating_sub(n)).sum::<f64>() / n as f64
}

/// Runs the full simulation. Identical configs give identical traces.
pub fn run_training(cfg: &SimConfig) -> Result<MetricsTrace, SimConfigError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut policy = cfg.initial_policy();
    let reward_cfg = if cfg.with_curiosity { cfg.reward } else { cfg.reward.without_curiosity() };
    let mut trace = MetricsTrace {
        init_rapr: policy.pr_prob(),
        init_return_text: policy.return_text(&cfg.query),
        init_return_pixel: policy.return_pixel(&cfg.query),
        steps: Vec::with_capacity(cfg.steps),
    };

    for step in 0..cfg.steps {
        let groups: Vec<SimGroup> = (0..cfg.queries_per_step)
            .map(|q| {
                let class = cfg.query.sample(&mut rng);
                sim_rollout_group(&policy, class, &format!("s{step}q{q}"), cfg.group_size, &mut rng)
            })
            .collect();

        let (mut pixel, mut pixel_correct, mut bonus_sum, mut total) = (0usize, 0usize, 0.0, 0usize);
        for g in &groups {
            let rewards = modified_reward(&reward_cfg, &g.group).expect("simulated groups are non-empty");
            let adv = group_advantages(&rewards, cfg.advantage_mode, DEFAULT_EPS)
                .expect("group_size >= 2 is validated");
            policy = policy_gradient_step(&policy, g, &adv.advantages);

            let rate = rapr(&g.group).expect("non-empty");
            for r in g.group.records.iter().filter(|r| r.is_pr) {
                pixel += 1;
                pixel_correct += usize::from(r.correct);
                bonus_sum += curiosity_bonus(&reward_cfg, rate, true);
            }
            total += g.group.len();
        }
        policy.forget();

        trace.steps.push(StepMetrics {
            step,
            rapr: pixel as f64 / total as f64,
            op_error: policy.op_error_rate,
            return_text: policy.return_text(&cfg.query),
            return_pixel: policy.return_pixel(&cfg.query),
            bonus_mean: if pixel > 0 { bonus_sum / pixel as f64 } else { 0.0 },
            pr_accuracy: (pixel > 0).then(|| pixel_correct as f64 / pixel as f64),
        });
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn policy() -> SimPolicy {
        SimConfig::default().initial_policy()
    }

    #[test]
    fn initial_calibration() {
        let cfg = SimConfig::default();
        let p = cfg.initial_policy();
        assert!((p.pr_prob() - 0.55).abs() < 1e-12);
        assert!((p.return_text(&cfg.query) - 0.501).abs() < 1e-9);
        let pixel = p.return_pixel(&cfg.query);
        assert!((0.20..0.26).contains(&pixel), "{pixel}");
    }

    #[test]
    fn saturated_logit_never_uses_pixels() {
        let mut p = policy();
        p.pr_logit = -1e9;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = sim_rollout_group(&p, QueryClass::NeedsPixel, "q", 8, &mut rng);
        assert_eq!(rapr(&g.group).unwrap(), 0.0);
    }

    #[test]
    fn perfect_pixel_skill_always_correct() {
        let mut p = policy();
        p.pr_logit = 1e9;
        p.op_error_rate = 0.0;
        p.skill_pixel = [1.0, 1.0];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = sim_rollout_group(&p, QueryClass::NeedsPixel, "q", 8, &mut rng);
        assert!(g.group.records.iter().all(|r| r.is_pr && r.correct && r.n_vo == 1));
    }

    #[test]
    fn sampling_is_seeded() {
        let p = policy();
        let a = sim_rollout_group(&p, QueryClass::TextSolvable, "q", 8, &mut ChaCha8Rng::seed_from_u64(9));
        let b = sim_rollout_group(&p, QueryClass::TextSolvable, "q", 8, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    fn two(pixel: [bool; 2], failed: [bool; 2], sampling_prob: f64) -> SimGroup {
        let records = (0..2)
            .map(|i| RolloutRecord {
                query_id: "q".into(),
                trajectory_id: i.to_string(),
                correct: false,
                is_pr: pixel[i],
                n_vo: u32::from(pixel[i]),
            })
            .collect();
        SimGroup {
            class: QueryClass::NeedsPixel,
            group: RolloutGroup { query_id: "q".into(), records },
            pixel_mode: pixel.to_vec(),
            op_failed: failed.to_vec(),
            sampling_prob,
        }
    }

    #[test]
    fn zero_advantages_leave_logit() {
        let p = policy();
        let next = policy_gradient_step(&p, &two([true, false], [true, false], 0.55), &[0.0, 0.0]);
        assert_eq!(next.pr_logit, p.pr_logit);
    }

    #[test]
    fn positive_pixel_advantage_raises_logit() {
        let p = policy();
        let next = policy_gradient_step(&p, &two([true, false], [false, false], 0.55), &[0.5, -0.5]);
        assert!(next.pr_logit > p.pr_logit);
    }

    #[test]
    fn two_rollout_update_matches_closed_form() {
        // step 0.1, p = 0.25, adv = [0.6, -0.6], modes = [1, 0]:
        // Δlogit = 0.1 * (0.6 * 0.75 + (-0.6) * (-0.25)) = 0.06
        let mut p = policy();
        p.step_size = 0.1;
        p.practice_gain = 0.01;
        p.error_gain = 0.02;
        let next = policy_gradient_step(&p, &two([true, false], [false, false], 0.25), &[0.6, -0.6]);
        assert!((next.pr_logit - p.pr_logit - 0.06).abs() < 1e-12);
        assert_eq!(next.practice, 1);
        assert!((next.skill_pixel[0] - 0.47).abs() < 1e-12);
        assert_eq!(next.skill_pixel[1], p.skill_pixel[1]);
        assert!((next.op_error_rate - 0.83).abs() < 1e-12);
    }

    #[test]
    fn error_rate_never_increases_and_respects_floor() {
        let mut p = policy();
        p.error_gain = 0.3;
        let g = two([true, true], [true, true], 0.5);
        let mut last = p.op_error_rate;
        for _ in 0..5 {
            p = policy_gradient_step(&p, &g, &[0.0, 0.0]);
            assert!(p.op_error_rate <= last);
            last = p.op_error_rate;
        }
        assert_eq!(p.op_error_rate, p.op_error_floor);
    }

    #[test]
    fn trace_is_deterministic() {
        let cfg = SimConfig { steps: 30, seed: 4, ..SimConfig::default() };
        let a = run_training(&cfg).unwrap();
        assert_eq!(a, run_training(&cfg).unwrap());
        assert_eq!(a.steps.len(), 30);
        assert_ne!(a, run_training(&SimConfig { seed: 5, ..cfg }).unwrap());
    }

    #[test]
    fn rejects_bad_config() {
        assert!(run_training(&SimConfig { steps: 0, ..SimConfig::default() }).is_err());
        assert!(run_training(&SimConfig { init_rapr: 1.0, ..SimConfig::default() }).is_err());
    }
}
