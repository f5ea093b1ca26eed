pub mod advantages;
pub mod exec_op;
pub mod parse;
pub mod reward;
pub mod rollout;
pub mod simulate;
pub mod synth;

use clap::Args as ClapArgs;
use pixreason::RewardConfig;

/// Reward hyperparameters shared by `reward` and `simulate`.
#[derive(Debug, Clone, ClapArgs)]
pub struct RewardArgs {
    /// Curiosity bonus scale.
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    /// Penalty per visual operation beyond the budget.
    #[arg(long, default_value_t = 0.05)]
    pub beta: f64,
    /// Target RaPR below which the bonus is paid.
    #[arg(long = "h", default_value_t = 0.3)]
    pub h_threshold: f64,
    /// Visual-operation budget per response.
    #[arg(long = "n", default_value_t = 1)]
    pub n_max: u32,
}

impl RewardArgs {
    pub fn config(&self) -> anyhow::Result<RewardConfig> {
        let cfg = RewardConfig { alpha: self.alpha, beta: self.beta, h_threshold: self.h_threshold, n_max: self.n_max };
        cfg.validate()?;
        Ok(cfg)
    }
}
