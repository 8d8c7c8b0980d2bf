//! Second-order factorization machines.
//!
//! The model scores a sparse feature vector `x` as
//! `w0 + Σ w_i x_i + Σ_{i<j} x_i x_j <V_i, V_j>`, evaluated with the
//! `O(k · nnz(x))` identity `½ Σ_f [(Σ_i V_if x_i)² − Σ_i V_if² x_i²]`.
//! Regression uses squared loss; classification passes the score through a
//! logistic link and uses log loss. Training is plain seeded SGD with L2
//! penalties applied to the parameters touched by each instance.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{binarize, encode, BinaryMatrix, FeatureVector, Layout, Rating, RatingStore, Split};
use crate::rng::{derive_seed, seeded_rng};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Regression,
    Classification,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FmModel {
    pub w0: f64,
    pub w: Vec<f64>,
    /// `dim × factors`, row-major.
    pub v: Vec<f64>,
    factors: usize,
    task: Task,
    layout: Layout,
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl FmModel {
    pub fn zeros(layout: Layout, factors: usize, task: Task) -> Self {
        let dim = layout.dim();
        Self {
            w0: 0.0,
            w: vec![0.0; dim],
            v: vec![0.0; dim * factors],
            factors,
            task,
            layout,
        }
    }

    /// Zero biases and weights, factors drawn from `N(0, init_std²)`.
    pub fn random(layout: Layout, factors: usize, task: Task, init_std: f64, seed: u64) -> Self {
        let mut model = Self::zeros(layout, factors, task);
        let mut rng = seeded_rng(seed);
        for v in &mut model.v {
            *v = init_std * rng.sample::<f64, _>(StandardNormal);
        }
        model
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    pub fn factors(&self) -> usize {
        self.factors
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    #[inline]
    pub fn factor(&self, feature: usize, f: usize) -> f64 {
        self.v[feature * self.factors + f]
    }

    pub fn is_finite(&self) -> bool {
        self.w0.is_finite() && self.w.iter().chain(&self.v).all(|p| p.is_finite())
    }

    fn check_dim(&self, x: &FeatureVector) -> Result<()> {
        if x.dim() != self.dim() {
            return Err(Error::contract(format!(
                "feature vector has dimension {} but the model expects {}",
                x.dim(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// Raw score; fills `sums[f] = Σ_i V_if x_i`.
    fn forward(&self, x: &FeatureVector, sums: &mut [f64]) -> f64 {
        let k = self.factors;
        sums.iter_mut().for_each(|s| *s = 0.0);
        let mut linear = self.w0;
        let mut squares = 0.0;
        for &(i, xi) in x.entries() {
            linear += self.w[i] * xi;
            let row = &self.v[i * k..(i + 1) * k];
            for (s, &vf) in sums.iter_mut().zip(row) {
                *s += vf * xi;
                squares += vf * vf * xi * xi;
            }
        }
        let pairwise: f64 = sums.iter().map(|s| s * s).sum::<f64>() - squares;
        linear + 0.5 * pairwise
    }

    /// Score before any link function.
    pub fn raw_score(&self, x: &FeatureVector) -> Result<f64> {
        self.check_dim(x)?;
        let mut sums = vec![0.0; self.factors];
        Ok(self.forward(x, &mut sums))
    }

    /// Regression output, or the rate probability for classification models.
    pub fn predict(&self, x: &FeatureVector) -> Result<f64> {
        let s = self.raw_score(x)?;
        Ok(match self.task {
            Task::Regression => s,
            Task::Classification => logistic(s),
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let items = self
            .layout
            .items
            .map_or_else(|| "none".to_string(), |n| n.to_string());
        let task = match self.task {
            Task::Regression => "regression",
            Task::Classification => "classification",
        };
        writeln!(
            out,
            "fm dim={} factors={} task={task} users={} items={items} attrs={}",
            self.dim(),
            self.factors,
            self.layout.users,
            self.layout.attrs
        )
        .unwrap();
        writeln!(out, "{:?}", self.w0).unwrap();
        for &w in &self.w {
            writeln!(out, "{w:?}").unwrap();
        }
        for row in self.v.chunks(self.factors.max(1)).take(self.dim()) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            writeln!(out, "{}", line.join(" ")).unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::validation(format!("model file: {m}"));
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty"))?;
        let mut fields = header.split_whitespace();
        if fields.next() != Some("fm") {
            return Err(bad("missing 'fm' header"));
        }
        let mut dim = None;
        let mut factors = None;
        let mut task = None;
        let mut users = None;
        let mut items = None;
        let mut attrs = None;
        for field in fields {
            let (key, value) = field.split_once('=').ok_or_else(|| bad("malformed header"))?;
            let num = || value.parse::<usize>().map_err(|_| bad("malformed header number"));
            match key {
                "dim" => dim = Some(num()?),
                "factors" => factors = Some(num()?),
                "users" => users = Some(num()?),
                "attrs" => attrs = Some(num()?),
                "items" => items = Some(if value == "none" { None } else { Some(num()?) }),
                "task" => {
                    task = Some(match value {
                        "regression" => Task::Regression,
                        "classification" => Task::Classification,
                        _ => return Err(bad("unknown task")),
                    })
                }
                _ => return Err(bad("unknown header key")),
            }
        }
        let missing = || bad("incomplete header");
        let layout = Layout {
            users: users.ok_or_else(missing)?,
            items: items.ok_or_else(missing)?,
            attrs: attrs.ok_or_else(missing)?,
        };
        let dim = dim.ok_or_else(missing)?;
        if layout.dim() != dim {
            return Err(bad("layout does not match dim"));
        }
        let factors = factors.ok_or_else(missing)?;
        let mut model = Self::zeros(layout, factors, task.ok_or_else(missing)?);
        let float = |s: &str| s.trim().parse::<f64>().map_err(|_| bad("malformed number"));
        model.w0 = float(lines.next().ok_or_else(|| bad("missing w0"))?)?;
        for w in model.w.iter_mut() {
            *w = float(lines.next().ok_or_else(|| bad("missing weight"))?)?;
        }
        for row in model.v.chunks_mut(factors.max(1)) {
            let line = lines.next().ok_or_else(|| bad("missing factor row"))?;
            let values: Vec<&str> = line.split_whitespace().collect();
            if values.len() != row.len() {
                return Err(bad("factor row has the wrong width"));
            }
            for (slot, s) in row.iter_mut().zip(values) {
                *slot = float(s)?;
            }
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

/// L2 penalty weights per parameter group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regularization {
    pub w0: f64,
    pub w: f64,
    pub v: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub factors: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2_w0: f64,
    pub l2_w: f64,
    pub l2_v: f64,
    pub init_std: f64,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            factors: 8,
            epochs: 50,
            learning_rate: 0.01,
            l2_w0: 1e-4,
            l2_w: 1e-4,
            l2_v: 1e-4,
            init_std: 0.01,
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn regularization(&self) -> Regularization {
        Regularization {
            w0: self.l2_w0,
            w: self.l2_w,
            v: self.l2_v,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.factors == 0 {
            return Err(Error::validation("factors must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::validation("learning_rate must be positive"));
        }
        if [self.l2_w0, self.l2_w, self.l2_v]
            .iter()
            .any(|r| !(*r >= 0.0 && r.is_finite()))
        {
            return Err(Error::validation("l2 penalties must be >= 0"));
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return Err(Error::validation("init_std must be positive"));
        }
        Ok(())
    }
}

/// Dense gradient with the same shape as the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub w0: f64,
    pub w: Vec<f64>,
    pub v: Vec<f64>,
}

fn loss_from_score(task: Task, score: f64, label: f64) -> f64 {
    match task {
        Task::Regression => (score - label) * (score - label),
        Task::Classification => softplus(score) - label * score,
    }
}

fn loss_slope(task: Task, score: f64, label: f64) -> f64 {
    match task {
        Task::Regression => 2.0 * (score - label),
        Task::Classification => logistic(score) - label,
    }
}

fn penalty(model: &FmModel, x: &FeatureVector, reg: &Regularization) -> f64 {
    let k = model.factors;
    let mut total = reg.w0 * model.w0 * model.w0;
    for &(i, _) in x.entries() {
        total += reg.w * model.w[i] * model.w[i];
        total += reg.v * model.v[i * k..(i + 1) * k].iter().map(|v| v * v).sum::<f64>();
    }
    total
}

/// Per-instance loss plus the L2 penalty on the parameters `x` touches.
pub fn instance_loss(model: &FmModel, x: &FeatureVector, label: f64, reg: &Regularization) -> Result<f64> {
    let score = model.raw_score(x)?;
    Ok(loss_from_score(model.task, score, label) + penalty(model, x, reg))
}

/// Mean regularized loss over a data set.
pub fn training_loss(model: &FmModel, instances: &[(FeatureVector, f64)], reg: &Regularization) -> Result<f64> {
    let mut total = 0.0;
    for (x, y) in instances {
        total += instance_loss(model, x, *y, reg)?;
    }
    Ok(total / instances.len().max(1) as f64)
}

/// Analytic gradient of [`instance_loss`] with respect to `(w0, w, V)`.
pub fn gradient(model: &FmModel, x: &FeatureVector, label: f64, reg: &Regularization) -> Result<Gradient> {
    model.check_dim(x)?;
    let k = model.factors;
    let mut sums = vec![0.0; k];
    let score = model.forward(x, &mut sums);
    let g = loss_slope(model.task, score, label);
    let mut grad = Gradient {
        w0: g + 2.0 * reg.w0 * model.w0,
        w: vec![0.0; model.dim()],
        v: vec![0.0; model.v.len()],
    };
    for &(i, xi) in x.entries() {
        grad.w[i] = g * xi + 2.0 * reg.w * model.w[i];
        for (f, &sum) in sums.iter().enumerate() {
            let vif = model.v[i * k + f];
            grad.v[i * k + f] = g * (xi * sum - vif * xi * xi) + 2.0 * reg.v * vif;
        }
    }
    Ok(grad)
}

/// One SGD step; returns the instance loss before the update.
fn sgd_step(model: &mut FmModel, x: &FeatureVector, label: f64, lr: f64, reg: &Regularization, sums: &mut [f64]) -> f64 {
    let k = model.factors;
    let score = model.forward(x, sums);
    let loss = loss_from_score(model.task, score, label) + penalty(model, x, reg);
    let g = loss_slope(model.task, score, label);
    model.w0 -= lr * (g + 2.0 * reg.w0 * model.w0);
    for &(i, xi) in x.entries() {
        model.w[i] -= lr * (g * xi + 2.0 * reg.w * model.w[i]);
        let row = &mut model.v[i * k..(i + 1) * k];
        for (vif, &s) in row.iter_mut().zip(sums.iter()) {
            let grad = g * (xi * s - *vif * xi * xi) + 2.0 * reg.v * *vif;
            *vif -= lr * grad;
        }
    }
    loss
}

/// Trains a model with SGD, warm-starting from `init` when given.
///
/// Without `init`, `w0` and `w` start at zero and factors are drawn from
/// `N(0, init_std²)` seeded by `config.seed`.
pub fn train(
    instances: &[(FeatureVector, f64)],
    task: Task,
    layout: Layout,
    config: &TrainConfig,
    init: Option<&FmModel>,
) -> Result<FmModel> {
    config.validate()?;
    if instances.is_empty() {
        return Err(Error::validation("training set is empty"));
    }
    let mut model = match init {
        Some(m) => {
            if m.task != task || m.layout != layout {
                return Err(Error::contract("initial model does not match task or layout"));
            }
            m.clone()
        }
        None => FmModel::random(layout, config.factors, task, config.init_std, config.seed),
    };
    for (x, y) in instances {
        model.check_dim(x)?;
        let ok = match task {
            Task::Regression => y.is_finite(),
            Task::Classification => *y == 0.0 || *y == 1.0,
        };
        if !ok {
            return Err(Error::validation(format!("invalid label {y} for {task:?}")));
        }
    }

    let reg = config.regularization();
    let mut order: Vec<usize> = (0..instances.len()).collect();
    let mut rng = seeded_rng(derive_seed(config.seed, 0x5348_5546));
    let mut sums = vec![0.0; model.factors];
    for epoch in 0..config.epochs {
        if config.shuffle {
            order.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;
        for &idx in &order {
            let (x, y) = &instances[idx];
            epoch_loss += sgd_step(&mut model, x, *y, config.learning_rate, &reg, &mut sums);
        }
        if !epoch_loss.is_finite() || !model.is_finite() {
            return Err(Error::Diverged { epoch });
        }
    }
    Ok(model)
}

/// Samples zero cells of `r01` inside the `restrict_items` columns, as many
/// as there are ones in those columns (capped at the number of zeros).
/// Returned pairs are sorted.
pub fn sample_negatives(r01: &BinaryMatrix, restrict_items: &[usize], seed: u64) -> Vec<(usize, usize)> {
    let mut in_scope = vec![false; r01.cols()];
    for &i in restrict_items {
        in_scope[i] = true;
    }
    let cols: Vec<usize> = (0..r01.cols()).filter(|&c| in_scope[c]).collect();
    let ones: usize = (0..r01.rows())
        .map(|r| r01.row_ones(r).iter().filter(|&&c| in_scope[c]).count())
        .sum();
    let cells = r01.rows() * cols.len();
    let zeros = cells - ones;
    let want = ones.min(zeros);
    if want == 0 {
        return Vec::new();
    }
    let mut rng = seeded_rng(seed);

    let mut picked: Vec<(usize, usize)> = if want * 2 >= zeros {
        let all: Vec<(usize, usize)> = (0..r01.rows())
            .flat_map(|r| cols.iter().map(move |&c| (r, c)))
            .filter(|&(r, c)| !r01.get(r, c))
            .collect();
        index::sample(&mut rng, all.len(), want)
            .into_iter()
            .map(|i| all[i])
            .collect()
    } else {
        let mut chosen = std::collections::HashSet::with_capacity(want);
        let mut out = Vec::with_capacity(want);
        while out.len() < want {
            let cell = rng.random_range(0..cells);
            let (r, c) = (cell / cols.len(), cols[cell % cols.len()]);
            if !r01.get(r, c) && chosen.insert((r, c)) {
                out.push((r, c));
            }
        }
        out
    };
    picked.sort_unstable();
    picked
}

/// The three models trained on historical (train-item) data.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainedModels {
    /// Will the user rate an item with these attributes (user + attributes).
    pub classifier: FmModel,
    /// Rating from user + attributes, used for potential ratings.
    pub regressor_no_item: FmModel,
    /// Rating from user + item + attributes, used for final prediction.
    pub regressor_with_item: FmModel,
}

/// Ratings on the split's train items.
pub fn train_ratings(store: &RatingStore, split: &Split) -> Vec<Rating> {
    store
        .ratings()
        .iter()
        .filter(|r| !split.is_test_item(r.item))
        .copied()
        .collect()
}

fn rating_instances(store: &RatingStore, layout: Layout, ratings: &[Rating]) -> Result<Vec<(FeatureVector, f64)>> {
    ratings
        .iter()
        .map(|r| {
            let item = layout.items.map(|_| r.item);
            Ok((encode(layout, r.user, item, store.item_attrs(r.item))?, r.value))
        })
        .collect()
}

pub fn pretrain_models(store: &RatingStore, split: &Split, config: &TrainConfig) -> Result<PretrainedModels> {
    let history = train_ratings(store, split);
    if history.is_empty() {
        return Err(Error::validation("no ratings on training items"));
    }

    let clf_layout = Layout::user_attr(store);
    let r01 = binarize(store);
    let negatives = sample_negatives(&r01, &split.train_items, derive_seed(config.seed, 1));
    let mut clf_data = Vec::with_capacity(history.len() + negatives.len());
    for r in &history {
        clf_data.push((encode(clf_layout, r.user, None, store.item_attrs(r.item))?, 1.0));
    }
    for &(u, i) in &negatives {
        clf_data.push((encode(clf_layout, u, None, store.item_attrs(i))?, 0.0));
    }
    let seeded = |tag| TrainConfig {
        seed: derive_seed(config.seed, tag),
        ..*config
    };
    let classifier = train(&clf_data, Task::Classification, clf_layout, &seeded(2), None)?;

    let no_item = Layout::user_attr(store);
    let data = rating_instances(store, no_item, &history)?;
    let regressor_no_item = train(&data, Task::Regression, no_item, &seeded(3), None)?;

    let with_item = Layout::user_item_attr(store);
    let data = rating_instances(store, with_item, &history)?;
    let regressor_with_item = train(&data, Task::Regression, with_item, &seeded(4), None)?;

    Ok(PretrainedModels {
        classifier,
        regressor_no_item,
        regressor_with_item,
    })
}

/// Continues training the item-aware regressor on history plus feedback.
pub fn retrain_with_feedback(
    pretrained: &FmModel,
    store: &RatingStore,
    split: &Split,
    history: &[Rating],
    feedback: &[Rating],
    config: &TrainConfig,
) -> Result<FmModel> {
    for r in feedback {
        if !split.is_test_item(r.item) || !split.is_active_user(r.user) {
            return Err(Error::contract(format!(
                "feedback ({}, {}) must come from an active user on a test item",
                r.user, r.item
            )));
        }
    }
    let layout = pretrained.layout();
    let mut data = rating_instances(store, layout, history)?;
    data.extend(rating_instances(store, layout, feedback)?);
    if data.is_empty() || config.epochs == 0 {
        return Ok(pretrained.clone());
    }
    train(&data, Task::Regression, layout, config, Some(pretrained))
}

/// Root mean squared error of a regression model on rating instances.
pub fn rmse_on(model: &FmModel, instances: &[(FeatureVector, f64)]) -> Result<f64> {
    let mut sq = 0.0;
    for (x, y) in instances {
        let e = model.predict(x)? - y;
        sq += e * e;
    }
    Ok((sq / instances.len().max(1) as f64).sqrt())
}

pub fn encode_ratings(store: &RatingStore, layout: Layout, ratings: &[Rating]) -> Result<Vec<(FeatureVector, f64)>> {
    rating_instances(store, layout, ratings)
}
