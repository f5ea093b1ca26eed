//! Group-relative advantages and selective sample replay (SSR).
//!
//! When every rollout of a query earns the same reward the group carries no
//! learning signal. As training progresses more groups go uniform and fresh
//! batches shrink. SSR keeps a per-episode buffer of informative samples and
//! tops batches back up from it.
//!
//! The replay selector here is a stand-in: samples are drawn without
//! replacement with probability proportional to `|advantage|`, falling back
//! to uniform draws when all magnitudes are equal.

use rand::Rng;
use serde::{Deserialize, Serialize};

pub const DEFAULT_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GrpoError {
    #[error("group has {0} rewards; at least 2 are needed")]
    GroupTooSmall(usize),
    #[error("{ids} trajectory ids for {rewards} rewards")]
    LengthMismatch { ids: usize, rewards: usize },
    #[error("invalid episode config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvantageMode {
    /// `r_i − mean`.
    #[default]
    MeanOnly,
    /// `(r_i − mean) / (std + eps)` with the population std.
    MeanStd,
}

/// Advantages for one query's rollouts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageGroup {
    pub query_id: String,
    pub trajectory_ids: Vec<String>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    pub uniform: bool,
}

impl AdvantageGroup {
    pub fn new(
        query_id: impl Into<String>,
        trajectory_ids: Vec<String>,
        rewards: Vec<f64>,
        mode: AdvantageMode,
        eps: f64,
    ) -> Result<Self, GrpoError> {
        if trajectory_ids.len() != rewards.len() {
            return Err(GrpoError::LengthMismatch { ids: trajectory_ids.len(), rewards: rewards.len() });
        }
        let mut group = group_advantages(&rewards, mode, eps)?;
        group.query_id = query_id.into();
        group.trajectory_ids = trajectory_ids;
        Ok(group)
    }
}

/// Normalizes `rewards` against their group. A group whose reward spread is
/// below `eps` is flagged uniform and gets all-zero advantages. The returned
/// group has empty ids; see [`AdvantageGroup::new`].
pub fn group_advantages(rewards: &[f64], mode: AdvantageMode, eps: f64) -> Result<AdvantageGroup, GrpoError> {
    if rewards.len() < 2 {
        return Err(GrpoError::GroupTooSmall(rewards.len()));
    }
    let n = rewards.len() as f64;
    let max = rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = rewards.iter().copied().fold(f64::INFINITY, f64::min);
    let uniform = max - min < eps;
    let advantages = if uniform {
        vec![0.0; rewards.len()]
    } else {
        let mean = rewards.iter().sum::<f64>() / n;
        let centered = rewards.iter().map(|r| r - mean);
        match mode {
            AdvantageMode::MeanOnly => centered.collect(),
            AdvantageMode::MeanStd => {
                let std = (rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
                centered.map(|a| a / (std + eps)).collect()
            }
        }
    };
    Ok(AdvantageGroup {
        query_id: String::new(),
        trajectory_ids: Vec::new(),
        rewards: rewards.to_vec(),
        advantages,
        uniform,
    })
}

/// Fraction of groups with no learning signal.
pub fn detect_uniformity_ratio(groups: &[AdvantageGroup]) -> f64 {
    if groups.is_empty() {
        return 0.0;
    }
    groups.iter().filter(|g| g.uniform).count() as f64 / groups.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub queries_per_episode: u64,
    pub group_size: usize,
    pub train_batch: usize,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self { queries_per_episode: 512, group_size: 8, train_batch: 256 }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<(), GrpoError> {
        if self.queries_per_episode == 0 || self.group_size == 0 || self.train_batch == 0 {
            return Err(GrpoError::Config("all sizes must be positive".into()));
        }
        Ok(())
    }

    /// Queries consumed by one full fresh batch.
    pub fn queries_per_step(&self) -> usize {
        (self.train_batch / self.group_size).max(1)
    }
}

/// A (record, advantage) pair as it enters training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub query_id: String,
    pub trajectory_id: String,
    pub reward: f64,
    pub advantage: f64,
    pub episode: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReplayBuffer {
    episode: u64,
    entries: Vec<Sample>,
}

impl ReplayBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn episode(&self) -> u64 {
        self.episode
    }

    pub fn entries(&self) -> &[Sample] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Drops every entry and moves to `episode`.
    pub fn start_episode(&mut self, episode: u64) {
        self.entries.clear();
        self.episode = episode;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplayWeighting {
    #[default]
    AbsAdvantage,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SsrSelector {
    /// With replay off, batches hold only fresh non-uniform samples and the
    /// buffer is left untouched.
    pub enabled: bool,
    pub weighting: ReplayWeighting,
}

impl Default for SsrSelector {
    fn default() -> Self {
        Self { enabled: true, weighting: ReplayWeighting::AbsAdvantage }
    }
}

impl SsrSelector {
    pub fn disabled() -> Self {
        Self { enabled: false, ..Self::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleSource {
    Fresh,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchEntry {
    #[serde(flatten)]
    pub sample: Sample,
    pub source: SampleSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilledBatch {
    pub entries: Vec<BatchEntry>,
    pub fresh: usize,
    pub replayed: usize,
    /// Fewer than `train_batch` entries were available.
    pub underfull: bool,
}

impl FilledBatch {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Builds one training batch: the non-uniform fresh samples first (at most
/// `train_batch`), then replayed buffer entries for any shortfall. The buffer
/// is sampled before it is extended with this step's fresh samples, so a
/// batch never holds the same sample twice.
pub fn ssr_fill_batch<R: Rng + ?Sized>(
    fresh: &[AdvantageGroup],
    buffer: &mut ReplayBuffer,
    cfg: &EpisodeConfig,
    selector: &SsrSelector,
    rng: &mut R,
) -> FilledBatch {
    let episode = buffer.episode;
    let informative: Vec<Sample> = fresh
        .iter()
        .filter(|g| !g.uniform)
        .flat_map(|g| {
            g.trajectory_ids.iter().zip(&g.rewards).zip(&g.advantages).map(|((id, &reward), &advantage)| Sample {
                query_id: g.query_id.clone(),
                trajectory_id: id.clone(),
                reward,
                advantage,
                episode,
            })
        })
        .collect();

    let mut entries: Vec<BatchEntry> = informative
        .iter()
        .take(cfg.train_batch)
        .map(|s| BatchEntry { sample: s.clone(), source: SampleSource::Fresh })
        .collect();
    let fresh_count = entries.len();

    if selector.enabled {
        let shortfall = cfg.train_batch - fresh_count;
        let picks = weighted_without_replacement(&buffer.entries, shortfall, selector.weighting, rng);
        entries.extend(
            picks.into_iter().map(|i| BatchEntry { sample: buffer.entries[i].clone(), source: SampleSource::Replay }),
        );
        buffer.entries.extend(informative);
    }

    let replayed = entries.len() - fresh_count;
    FilledBatch { underfull: entries.len() < cfg.train_batch, entries, fresh: fresh_count, replayed }
}

/// Efraimidis–Spirakis: key `ln(u) / w`, keep the `k` largest. Entries with
/// zero weight sort last. Returned indices are in buffer order.
fn weighted_without_replacement<R: Rng + ?Sized>(
    pool: &[Sample],
    k: usize,
    weighting: ReplayWeighting,
    rng: &mut R,
) -> Vec<usize> {
    if k == 0 || pool.is_empty() {
        return Vec::new();
    }
    if k >= pool.len() {
        return (0..pool.len()).collect();
    }
    let weights: Vec<f64> = pool.iter().map(|s| s.advantage.abs()).collect();
    let first = weights[0];
    let flat = weighting == ReplayWeighting::Uniform || weights.iter().all(|&w| w == first);
    let mut keyed: Vec<(f64, usize)> = weights
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            // 1 - u lies in (0, 1], so the log is finite.
            let u: f64 = 1.0 - rng.random::<f64>();
            let key = if flat {
                u.ln()
            } else if w > 0.0 {
                u.ln() / w
            } else {
                f64::NEG_INFINITY
            };
            (key, i)
        })
        .collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut picked: Vec<usize> = keyed.into_iter().take(k).map(|(_, i)| i).collect();
    picked.sort_unstable();
    picked
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tick {
    Continue,
    SyncPolicyAndClear,
}

/// Signal after the `counter`-th query has been consumed.
pub fn episode_tick(counter: u64, cfg: &EpisodeConfig) -> Tick {
    if counter > 0 && counter.is_multiple_of(cfg.queries_per_episode) {
        Tick::SyncPolicyAndClear
    } else {
        Tick::Continue
    }
}

/// Counts consumed queries and clears the buffer at episode boundaries.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EpisodeClock {
    cfg: EpisodeConfig,
    consumed: u64,
}

impl EpisodeClock {
    pub fn new(cfg: EpisodeConfig) -> Self {
        Self { cfg, consumed: 0 }
    }

    pub fn consumed(&self) -> u64 {
        self.consumed
    }

    pub fn episode(&self) -> u64 {
        self.consumed / self.cfg.queries_per_episode
    }

    /// Consumes `queries` queries; returns how many sync events fired.
    pub fn advance(&mut self, queries: u64, buffer: &mut ReplayBuffer) -> usize {
        let mut syncs = 0;
        for _ in 0..queries {
            self.consumed += 1;
            if episode_tick(self.consumed, &self.cfg) == Tick::SyncPolicyAndClear {
                buffer.start_episode(self.episode());
                syncs += 1;
            }
        }
        syncs
    }
}
