use crate::seeds::derive_seed;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SummarizationMode {
    AttentionPool,
    MeanPool,
}

/// How the variable-length recurrent state sequence is collapsed into the
/// fixed-size `su` tap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuTap {
    /// Mean over timesteps of the concatenated forward/backward states.
    MeanStates,
    /// Final forward state concatenated with the final (t = 0) backward state.
    FinalStates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embedding_dim: usize,
    /// Per-direction recurrent width.
    pub hidden_dim: usize,
    pub ff_dims: Vec<usize>,
    pub dropout: f64,
    pub seed: u64,
    pub summarization: SummarizationMode,
    pub su_tap: SuTap,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embedding_dim: 32,
            hidden_dim: 32,
            ff_dims: vec![64],
            dropout: 0.0,
            seed: 0,
            summarization: SummarizationMode::AttentionPool,
            su_tap: SuTap::MeanStates,
            learning_rate: 0.005,
            epochs: 4,
            batch_size: 32,
            clip_norm: 5.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.embedding_dim == 0 || self.hidden_dim == 0 {
            return Err("embedding_dim and hidden_dim must be positive".into());
        }
        if self.ff_dims.is_empty() || self.ff_dims.contains(&0) {
            return Err("ff_dims must be a non-empty list of positive widths".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(format!("dropout {} not in [0, 1)", self.dropout));
        }
        if self.batch_size == 0 {
            return Err("batch_size must be positive".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(format!("learning_rate {} must be finite and non-negative", self.learning_rate));
        }
        if self.clip_norm.is_nan() || self.clip_norm < 0.0 {
            return Err("clip_norm must be non-negative".into());
        }
        Ok(())
    }

    pub fn attention_dim(&self) -> usize {
        self.hidden_dim
    }
}

/// Recipe for an ensemble: `members` copies of `base`, made diverse by seed,
/// by cycling `hidden_dims`, and by switching the last member to mean pooling
/// when there is more than one member. `overrides` replaces individual member
/// configs wholesale (index, config), applied after the recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub members: usize,
    pub base: ModelConfig,
    pub hidden_dims: Vec<usize>,
    pub mean_pool_last: bool,
    pub overrides: Vec<(usize, ModelConfig)>,
}

impl Default for EnsembleSpec {
    fn default() -> Self {
        EnsembleSpec {
            members: 7,
            base: ModelConfig::default(),
            hidden_dims: vec![32, 48, 64],
            mean_pool_last: true,
            overrides: Vec::new(),
        }
    }
}

impl EnsembleSpec {
    /// Per-member configs with seeds derived from `seed`.
    pub fn member_configs(&self, seed: u64) -> Vec<ModelConfig> {
        let mut configs: Vec<ModelConfig> = (0..self.members)
            .map(|i| {
                let mut c = self.base.clone();
                if !self.hidden_dims.is_empty() {
                    c.hidden_dim = self.hidden_dims[i % self.hidden_dims.len()];
                }
                if self.mean_pool_last && self.members > 1 && i == self.members - 1 {
                    c.summarization = SummarizationMode::MeanPool;
                }
                c.seed = derive_seed(seed, &[i as u64]);
                c
            })
            .collect();
        for (i, c) in &self.overrides {
            if let Some(slot) = configs.get_mut(*i) {
                let mut c = c.clone();
                c.seed = derive_seed(seed, &[*i as u64]);
                *slot = c;
            }
        }
        configs
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.members == 0 {
            return Err("an ensemble needs at least one member".into());
        }
        if self.hidden_dims.contains(&0) {
            return Err("hidden_dims must be positive".into());
        }
        self.member_configs(0).iter().try_for_each(ModelConfig::validate)
    }
}
