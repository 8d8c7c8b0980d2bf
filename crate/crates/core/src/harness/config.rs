//! Experiment configuration, read from a flat TOML file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::StrategyId;
use crate::budget::BudgetParams;
use crate::data::{RatingScale, SyntheticSpec};
use crate::fm::TrainConfig;
use crate::selector::{Weights, DEFAULT_MAX_ITER};
use crate::{Error, Result};

/// Every key is optional; see `Default` for the values used when absent.
/// Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Ratings CSV (`user_id,item_id,rating[,timestamp]`). When unset a
    /// synthetic corpus is generated from the `synthetic_*` keys.
    pub ratings_path: Option<PathBuf>,
    /// Item attributes CSV (`item_id,attr_id`).
    pub attributes_path: Option<PathBuf>,
    pub synthetic_users: usize,
    pub synthetic_items: usize,
    pub synthetic_attrs: usize,
    pub synthetic_latent_dim: usize,
    pub synthetic_density: f64,
    pub synthetic_noise: f64,
    pub synthetic_seed: u64,
    pub rating_min: f64,
    pub rating_max: f64,

    pub test_fraction: f64,
    pub split_seed: u64,
    /// Base seed for training and the randomised strategies.
    pub seed: u64,

    pub fm_factors: usize,
    pub fm_epochs: usize,
    pub fm_learning_rate: f64,
    pub fm_l2_w0: f64,
    pub fm_l2_w: f64,
    pub fm_l2_v: f64,
    pub fm_init_std: f64,
    pub fm_shuffle: bool,
    /// Epochs of warm-start training after feedback is added.
    pub retrain_epochs: usize,

    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub sigma: f64,
    /// Users asked per new item (fixed-budget strategies).
    pub k: usize,
    /// Total requests for the dynamic budget; defaults to `k` times the
    /// number of new items.
    pub k_total: Option<usize>,
    pub lambda: f64,
    pub budget_normalize: bool,
    /// Divisor applied to standardised pairwise criteria; defaults to the
    /// pool size.
    pub calibration_divisor: Option<f64>,
    pub max_iter: usize,

    pub strategies: Vec<StrategyId>,
    pub epsilon: f64,
    pub gamma_e: f64,

    pub top_n: usize,
    pub relevance_threshold: f64,
    pub clip_predictions: bool,

    /// Run `r` (from 0) uses `split_seed + r` and `seed + r`.
    pub repetitions: usize,
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let synth = SyntheticSpec::default();
        let fm = TrainConfig::default();
        let w = Weights::default();
        let scale = RatingScale::default();
        Self {
            ratings_path: None,
            attributes_path: None,
            synthetic_users: synth.n_users,
            synthetic_items: synth.n_items,
            synthetic_attrs: synth.n_attrs,
            synthetic_latent_dim: synth.latent_dim,
            synthetic_density: synth.density,
            synthetic_noise: synth.noise_std,
            synthetic_seed: synth.seed,
            rating_min: scale.min,
            rating_max: scale.max,
            test_fraction: 0.2,
            split_seed: 0,
            seed: 0,
            fm_factors: fm.factors,
            fm_epochs: fm.epochs,
            fm_learning_rate: fm.learning_rate,
            fm_l2_w0: fm.l2_w0,
            fm_l2_w: fm.l2_w,
            fm_l2_v: fm.l2_v,
            fm_init_std: fm.init_std,
            fm_shuffle: fm.shuffle,
            retrain_epochs: fm.epochs,
            alpha: w.alpha,
            beta: w.beta,
            gamma: w.gamma,
            sigma: w.sigma,
            k: 25,
            k_total: None,
            lambda: 1.0,
            budget_normalize: true,
            calibration_divisor: None,
            max_iter: DEFAULT_MAX_ITER,
            strategies: StrategyId::ALL.to_vec(),
            epsilon: 0.5,
            gamma_e: 1.0,
            top_n: 10,
            relevance_threshold: 3.0,
            clip_predictions: false,
            repetitions: 1,
            output: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialises to TOML")
    }

    pub fn scale(&self) -> RatingScale {
        RatingScale {
            min: self.rating_min,
            max: self.rating_max,
        }
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            n_users: self.synthetic_users,
            n_items: self.synthetic_items,
            n_attrs: self.synthetic_attrs,
            latent_dim: self.synthetic_latent_dim,
            density: self.synthetic_density,
            noise_std: self.synthetic_noise,
            seed: self.synthetic_seed,
        }
    }

    /// Pre-training settings for repetition `rep`.
    pub fn train_config(&self, rep: usize) -> TrainConfig {
        TrainConfig {
            factors: self.fm_factors,
            epochs: self.fm_epochs,
            learning_rate: self.fm_learning_rate,
            l2_w0: self.fm_l2_w0,
            l2_w: self.fm_l2_w,
            l2_v: self.fm_l2_v,
            init_std: self.fm_init_std,
            seed: self.seed.wrapping_add(rep as u64),
            shuffle: self.fm_shuffle,
        }
    }

    pub fn retrain_config(&self, rep: usize) -> TrainConfig {
        TrainConfig {
            epochs: self.retrain_epochs,
            ..self.train_config(rep)
        }
    }

    pub fn split_seed_for(&self, rep: usize) -> u64 {
        self.split_seed.wrapping_add(rep as u64)
    }

    pub fn weights(&self) -> Weights {
        Weights {
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
            sigma: self.sigma,
        }
    }

    pub fn budget_params(&self, cap: usize) -> BudgetParams {
        BudgetParams {
            lambda: self.lambda,
            normalize: self.budget_normalize,
            cap: Some(cap),
        }
    }

    // `!(a < b)` also rejects NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.ratings_path.is_some() != self.attributes_path.is_some() {
            return bad("ratings_path and attributes_path must be given together");
        }
        if !(self.rating_min < self.rating_max) {
            return bad("rating_min must be below rating_max");
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad("test_fraction must lie strictly between 0 and 1");
        }
        self.train_config(0)
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.weights().validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        if self.k_total == Some(0) {
            return bad("k_total must be at least 1");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be finite and >= 0");
        }
        if self.calibration_divisor.is_some_and(|d| !(d > 0.0 && d.is_finite())) {
            return bad("calibration_divisor must be positive");
        }
        if self.max_iter == 0 {
            return bad("max_iter must be at least 1");
        }
        if self.strategies.is_empty() {
            return bad("at least one strategy is required");
        }
        let mut seen = self.strategies.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.strategies.len() {
            return bad("strategies must not repeat");
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad("epsilon must lie in [0, 1]");
        }
        if !(self.gamma_e >= 0.0 && self.gamma_e.is_finite()) {
            return bad("gamma_e must be finite and >= 0");
        }
        if self.top_n < 5 {
            return bad("top_n must be at least 5");
        }
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1");
        }
        Ok(())
    }
}
