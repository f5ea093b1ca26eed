//! Correctness reward plus the two constraint terms.
//!
//! For a record in a group with pixel-reasoning rate `RaPR`:
//!
//! ```text
//! r' = correct + α·max(H − RaPR, 0)·[is_pr] + β·min(N − n_vo, 0)
//! ```
//!
//! The clipping is what separates this from a plain Lagrangian relaxation,
//! which also pays out when a constraint is over-satisfied (see
//! [`standard_lagrangian_reward`]).

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RewardError {
    #[error("rollout group is empty")]
    EmptyGroup,
    #[error("record {trajectory_id} belongs to query {found}, expected {expected}")]
    MixedQueries { trajectory_id: String, expected: String, found: String },
    #[error("record {trajectory_id} is marked pixel-space but has n_vo = 0")]
    PixelWithoutOps { trajectory_id: String },
    #[error("invalid reward config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub alpha: f64,
    pub beta: f64,
    pub h_threshold: f64,
    pub n_max: u32,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self { alpha: 0.5, beta: 0.05, h_threshold: 0.3, n_max: 1 }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RewardError> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(RewardError::Config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(RewardError::Config(format!("beta must be >= 0, got {}", self.beta)));
        }
        if !(0.0..=1.0).contains(&self.h_threshold) {
            return Err(RewardError::Config(format!("H must lie in [0, 1], got {}", self.h_threshold)));
        }
        Ok(())
    }

    /// Same thresholds with the curiosity term switched off.
    pub fn without_curiosity(self) -> Self {
        Self { alpha: 0.0, ..self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LagrangianConfig {
    pub lambda1: f64,
    pub lambda2: f64,
}

/// Serde helper: booleans written as 0/1, read from either form.
mod bit {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(u8::from(*v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Bit {
            Bool(bool),
            Int(u64),
        }
        match Bit::deserialize(d)? {
            Bit::Bool(b) => Ok(b),
            Bit::Int(0) => Ok(false),
            Bit::Int(1) => Ok(true),
            Bit::Int(n) => Err(de::Error::custom(format!("expected 0 or 1, got {n}"))),
        }
    }
}

/// One rollout as seen by the reward: did it answer correctly, did it try
/// pixel-space reasoning, and how many operations it attempted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub query_id: String,
    pub trajectory_id: String,
    #[serde(with = "bit")]
    pub correct: bool,
    pub is_pr: bool,
    pub n_vo: u32,
}

impl RolloutRecord {
    pub fn validate(&self) -> Result<(), RewardError> {
        if self.is_pr && self.n_vo == 0 {
            return Err(RewardError::PixelWithoutOps { trajectory_id: self.trajectory_id.clone() });
        }
        Ok(())
    }
}

/// All rollouts sampled for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub query_id: String,
    pub records: Vec<RolloutRecord>,
}

impl RolloutGroup {
    pub fn new(query_id: impl Into<String>, records: Vec<RolloutRecord>) -> Result<Self, RewardError> {
        let group = Self { query_id: query_id.into(), records };
        group.validate()?;
        Ok(group)
    }

    pub fn validate(&self) -> Result<(), RewardError> {
        if self.records.is_empty() {
            return Err(RewardError::EmptyGroup);
        }
        for r in &self.records {
            if r.query_id != self.query_id {
                return Err(RewardError::MixedQueries {
                    trajectory_id: r.trajectory_id.clone(),
                    expected: self.query_id.clone(),
                    found: r.query_id.clone(),
                });
            }
            r.validate()?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Groups records by query id, keeping first-appearance order.
pub fn group_by_query(records: Vec<RolloutRecord>) -> Result<Vec<RolloutGroup>, RewardError> {
    let mut groups: Vec<RolloutGroup> = Vec::new();
    let mut index = std::collections::HashMap::new();
    for r in records {
        r.validate()?;
        let slot = *index.entry(r.query_id.clone()).or_insert_with(|| {
            groups.push(RolloutGroup { query_id: r.query_id.clone(), records: Vec::new() });
            groups.len() - 1
        });
        groups[slot].records.push(r);
    }
    Ok(groups)
}

/// How a boxed answer is compared with the gold string.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Matcher {
    Exact,
    /// Trim, lowercase, collapse internal whitespace.
    Normalized,
    /// Compare the leading option letter, e.g. "(B) cat" matches "B".
    ChoiceLetter,
}

impl Matcher {
    /// `ChoiceLetter` for single-letter golds, `Normalized` otherwise.
    pub fn for_gold(gold: &str) -> Self {
        let g = gold.trim();
        if g.len() == 1 && g.chars().all(|c| c.is_ascii_alphabetic()) {
            Matcher::ChoiceLetter
        } else {
            Matcher::Normalized
        }
    }
}

fn normalize(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn choice_letter(s: &str) -> Option<char> {
    let s = s.trim().trim_start_matches(['(', '[']);
    let mut chars = s.chars();
    let c = chars.next()?.to_ascii_uppercase();
    if !c.is_ascii_alphabetic() {
        return None;
    }
    match chars.next() {
        None => Some(c),
        Some(next) if !next.is_alphanumeric() => Some(c),
        _ => None,
    }
}

/// 1 iff `answer` is present and accepted against `gold`.
pub fn correctness_reward(answer: Option<&str>, gold: &str, matcher: Matcher) -> bool {
    let Some(answer) = answer else { return false };
    match matcher {
        Matcher::Exact => answer == gold,
        Matcher::Normalized => normalize(answer) == normalize(gold),
        Matcher::ChoiceLetter => match (choice_letter(answer), choice_letter(gold)) {
            (Some(a), Some(g)) => a == g,
            _ => false,
        },
    }
}

/// Fraction of records that attempted at least one visual operation.
pub fn rapr(group: &RolloutGroup) -> Result<f64, RewardError> {
    if group.records.is_empty() {
        return Err(RewardError::EmptyGroup);
    }
    let k = group.records.iter().filter(|r| r.is_pr).count();
    Ok(k as f64 / group.records.len() as f64)
}

pub fn curiosity_bonus(cfg: &RewardConfig, rapr_value: f64, is_pr: bool) -> f64 {
    if !is_pr {
        return 0.0;
    }
    cfg.alpha * (cfg.h_threshold - rapr_value).max(0.0)
}

pub fn efficiency_penalty(cfg: &RewardConfig, n_vo: u32) -> f64 {
    let over = n_vo.saturating_sub(cfg.n_max);
    -cfg.beta * over as f64
}

/// Per-record terms of the modified reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub correctness: f64,
    pub rapr: f64,
    pub bonus: f64,
    pub penalty: f64,
    pub reward: f64,
}

pub fn reward_breakdown(cfg: &RewardConfig, group: &RolloutGroup) -> Result<Vec<RewardBreakdown>, RewardError> {
    let rate = rapr(group)?;
    Ok(group
        .records
        .iter()
        .map(|r| {
            let correctness = if r.correct { 1.0 } else { 0.0 };
            let bonus = curiosity_bonus(cfg, rate, r.is_pr);
            let penalty = efficiency_penalty(cfg, r.n_vo);
            RewardBreakdown { correctness, rapr: rate, bonus, penalty, reward: correctness + bonus + penalty }
        })
        .collect())
}

pub fn modified_reward(cfg: &RewardConfig, group: &RolloutGroup) -> Result<Vec<f64>, RewardError> {
    Ok(reward_breakdown(cfg, group)?.into_iter().map(|b| b.reward).collect())
}

/// Unclipped contrast: `r − λ1·(H − RaPR) − λ2·(n_vo − N)`. Thresholds come
/// from `cfg`; its α and β are ignored.
pub fn standard_lagrangian_reward(
    lcfg: &LagrangianConfig,
    cfg: &RewardConfig,
    group: &RolloutGroup,
) -> Result<Vec<f64>, RewardError> {
    let rate = rapr(group)?;
    Ok(group
        .records
        .iter()
        .map(|r| {
            let correctness = if r.correct { 1.0 } else { 0.0 };
            correctness
                - lcfg.lambda1 * (cfg.h_threshold - rate)
                - lcfg.lambda2 * (r.n_vo as f64 - cfg.n_max as f64)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(i: usize, correct: bool, n_vo: u32) -> RolloutRecord {
        RolloutRecord {
            query_id: "q".into(),
            trajectory_id: format!("q-{i}"),
            correct,
            is_pr: n_vo > 0,
            n_vo,
        }
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12
    }

    #[test]
    fn matchers() {
        assert!(correctness_reward(Some("A"), "A", Matcher::ChoiceLetter));
        assert!(correctness_reward(Some("(a) dog"), "A", Matcher::ChoiceLetter));
        assert!(!correctness_reward(Some("Alabama"), "A", Matcher::ChoiceLetter));
        assert!(!correctness_reward(None, "A", Matcher::Exact));
        assert!(correctness_reward(Some("alabama "), "Alabama", Matcher::Normalized));
        assert!(correctness_reward(Some(" 9,000\n Baht"), "9,000 baht", Matcher::Normalized));
        assert!(!correctness_reward(Some("alabama "), "Alabama", Matcher::Exact));
        assert_eq!(Matcher::for_gold("C"), Matcher::ChoiceLetter);
        assert_eq!(Matcher::for_gold("Alabama"), Matcher::Normalized);
    }

    #[test]
    fn rapr_fractions() {
        let mut records: Vec<_> = (0..8).map(|i| rec(i, true, 0)).collect();
        let g = RolloutGroup::new("q", records.clone()).unwrap();
        assert_eq!(rapr(&g).unwrap(), 0.0);
        records[3] = rec(3, true, 1);
        assert_eq!(rapr(&RolloutGroup::new("q", records.clone()).unwrap()).unwrap(), 0.125);
        let all: Vec<_> = (0..8).map(|i| rec(i, true, 1)).collect();
        assert_eq!(rapr(&RolloutGroup::new("q", all).unwrap()).unwrap(), 1.0);
        assert_eq!(RolloutGroup::new("q", vec![]).unwrap_err(), RewardError::EmptyGroup);
    }

    #[test]
    fn bonus_and_penalty_values() {
        let cfg = RewardConfig::default();
        assert!(close(curiosity_bonus(&cfg, 0.125, true), 0.0875));
        assert_eq!(curiosity_bonus(&cfg, 0.3, true), 0.0);
        assert_eq!(curiosity_bonus(&cfg, 0.0, false), 0.0);
        assert!(close(efficiency_penalty(&cfg, 2), -0.05));
        assert!(close(efficiency_penalty(&cfg, 3), -0.10));
        assert_eq!(efficiency_penalty(&cfg, 1), 0.0);
        assert_eq!(efficiency_penalty(&cfg, 0), 0.0);
    }

    #[test]
    fn modified_reward_examples() {
        let cfg = RewardConfig::default();
        let mut records: Vec<_> = (0..8).map(|i| rec(i, true, 0)).collect();
        records[0] = rec(0, true, 1);
        let r = modified_reward(&cfg, &RolloutGroup::new("q", records).unwrap()).unwrap();
        assert!(close(r[0], 1.0875));
        assert!(r[1..].iter().all(|&x| x == 1.0));

        let all_text: Vec<_> = (0..8).map(|i| rec(i, true, 0)).collect();
        let r = modified_reward(&cfg, &RolloutGroup::new("q", all_text).unwrap()).unwrap();
        assert!(r.iter().all(|&x| x == 1.0));

        // rapr = 4/8 ≥ H, so only the penalty applies to the n_vo = 2 record.
        let mixed = vec![rec(0, false, 2), rec(1, true, 1), rec(2, true, 1), rec(3, true, 1)]
            .into_iter()
            .chain((4..8).map(|i| rec(i, true, 0)))
            .collect();
        let r = modified_reward(&cfg, &RolloutGroup::new("q", mixed).unwrap()).unwrap();
        assert!(close(r[0], -0.05));
    }

    #[test]
    fn lagrangian_pays_for_unused_budget() {
        let cfg = RewardConfig { h_threshold: 0.3, n_max: 1, ..RewardConfig::default() };
        let l = LagrangianConfig { lambda1: 0.0, lambda2: 0.05 };
        let g = RolloutGroup::new("q", vec![rec(0, true, 0), rec(1, true, 1)]).unwrap();
        let lag = standard_lagrangian_reward(&l, &cfg, &g).unwrap();
        assert!(close(lag[0] - 1.0, 0.05));
        assert_eq!(efficiency_penalty(&cfg, 0), 0.0);

        // Both constraints exactly active: plain correctness.
        let active = RewardConfig { h_threshold: 0.5, ..cfg };
        let l = LagrangianConfig { lambda1: 0.7, lambda2: 0.2 };
        let g = RolloutGroup::new("q", vec![rec(0, true, 1), rec(1, false, 0)]).unwrap();
        let lag = standard_lagrangian_reward(&l, &active, &g).unwrap();
        assert!(close(lag[0], 1.0));
    }

    #[test]
    fn record_json_uses_bits() {
        let r = rec(1, true, 2);
        let line = serde_json::to_string(&r).unwrap();
        assert_eq!(line, r#"{"query_id":"q","trajectory_id":"q-1","correct":1,"is_pr":true,"n_vo":2}"#);
        let back: RolloutRecord =
            serde_json::from_str(r#"{"query_id":"q","trajectory_id":"q-1","correct":true,"is_pr":true,"n_vo":2}"#)
                .unwrap();
        assert_eq!(back, r);
        assert!(serde_json::from_str::<RolloutRecord>(
            r#"{"query_id":"q","trajectory_id":"t","correct":2,"is_pr":false,"n_vo":0}"#
        )
        .is_err());
    }

    #[test]
    fn pixel_record_needs_ops() {
        let mut r = rec(0, true, 0);
        r.is_pr = true;
        assert!(matches!(RolloutGroup::new("q", vec![r]), Err(RewardError::PixelWithoutOps { .. })));
    }

    #[test]
    fn grouping_keeps_order() {
        let mut a = rec(0, true, 0);
        a.query_id = "b".into();
        let groups = group_by_query(vec![a.clone(), rec(1, true, 0), a]).unwrap();
        assert_eq!(groups.len(), 2);
        assert_eq!(groups[0].query_id, "b");
        assert_eq!(groups[0].records.len(), 2);
    }
}
