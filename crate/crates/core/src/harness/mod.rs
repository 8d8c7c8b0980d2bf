//! Experiment orchestration: data, split, pre-training, one pass per
//! strategy (select, simulate feedback, re-train, evaluate) and reports.

pub mod config;
pub mod report;

use std::collections::{BTreeMap, HashSet};
use std::time::Instant;

use serde::Serialize;

pub use config::ExperimentConfig;
pub use report::{
    render_table, Convergence, DataSummary, ExperimentReport, ItemRequestCount, RunReport, SelectionDiagnostics,
    Series, Significance, StrategyReport, StrategySummary,
};

use crate::baselines::{select_coverage, select_eps_greedy, select_exploration, select_popular, select_random};
use crate::baselines::{HybridNeighbour, StrategyId};
use crate::budget::{self, BudgetPlan};
use crate::criteria::{self, calibrate, CriteriaBundle};
use crate::data::{self, encode, make_split, Rating, RatingStore, Split};
use crate::fm::{pretrain_models, retrain_with_feedback, train_ratings, FmModel, PretrainedModels};
use crate::matrix::SquareMatrix;
use crate::metrics::{self, Prediction, PredictionSet, RequestLog};
use crate::rng::derive_seed;
use crate::selector::{build_m, psd_shift, solve, SelectionResult, Weights};
use crate::{Error, Result, Stage};

/// Loads the configured corpus or generates the synthetic one.
pub fn load_store(config: &ExperimentConfig) -> Result<RatingStore> {
    match (&config.ratings_path, &config.attributes_path) {
        (Some(r), Some(a)) => data::ingest(r, a, config.scale()),
        _ => data::generate_synthetic(&config.synthetic_spec(), config.scale()),
    }
}

fn describe_source(config: &ExperimentConfig) -> String {
    match &config.ratings_path {
        Some(path) => path.display().to_string(),
        None => "synthetic".to_string(),
    }
}

/// Selection-signal values that do not depend on the new item are built
/// once per pool; item-dependent ones once per item, on first use.
pub struct CriteriaCache {
    pool: Vec<usize>,
    objectivity: Vec<f64>,
    similarity: SquareMatrix,
    signals: BTreeMap<usize, ItemSignals>,
    bundles: BTreeMap<usize, CriteriaBundle>,
    stats: CacheStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ItemSignals {
    pub p: Vec<f64>,
    pub potential: Vec<f64>,
}

/// How often each cached quantity was computed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CacheStats {
    /// Objectivity and similarity over the pool.
    pub pool_criteria: usize,
    /// Willingness and potential ratings for one item.
    pub item_signals: usize,
    /// Calibrated bundles (including the diversity matrix) for one item.
    pub item_bundles: usize,
}

impl CriteriaCache {
    pub fn new(store: &RatingStore, split: &Split) -> Self {
        let pool = split.active_users.clone();
        Self {
            objectivity: criteria::objectivity(store, &split.train_items, &pool),
            similarity: criteria::similarity_matrix(store, &split.train_items, &pool),
            pool,
            signals: BTreeMap::new(),
            bundles: BTreeMap::new(),
            stats: CacheStats {
                pool_criteria: 1,
                ..CacheStats::default()
            },
        }
    }

    pub fn pool(&self) -> &[usize] {
        &self.pool
    }

    /// Raw cosine similarity between pool members.
    pub fn similarity(&self) -> &SquareMatrix {
        &self.similarity
    }

    pub fn stats(&self) -> CacheStats {
        self.stats
    }

    pub fn signals(&mut self, store: &RatingStore, models: &PretrainedModels, item: usize) -> Result<&ItemSignals> {
        if !self.signals.contains_key(&item) {
            let attrs = store.item_attrs(item);
            let p = criteria::willingness(&models.classifier, &self.pool, attrs)?;
            let potential = criteria::potential_ratings(&models.regressor_no_item, &self.pool, attrs)?;
            self.stats.item_signals += 1;
            self.signals.insert(item, ItemSignals { p, potential });
        }
        Ok(&self.signals[&item])
    }

    pub fn bundle(
        &mut self,
        store: &RatingStore,
        models: &PretrainedModels,
        item: usize,
        divisor: Option<f64>,
    ) -> Result<&CriteriaBundle> {
        if !self.bundles.contains_key(&item) {
            let ItemSignals { p, potential } = self.signals(store, models, item)?.clone();
            let d = criteria::diversity_matrix(&potential);
            let raw = CriteriaBundle::new(
                self.pool.clone(),
                p,
                potential,
                d,
                self.objectivity.clone(),
                self.similarity.clone(),
            )?;
            self.stats.item_bundles += 1;
            self.bundles.insert(item, calibrate(&raw, divisor)?);
        }
        Ok(&self.bundles[&item])
    }
}

/// Everything a strategy run needs that is shared across strategies.
pub struct Context<'a> {
    pub store: &'a RatingStore,
    pub split: &'a Split,
    pub models: &'a PretrainedModels,
    pub config: &'a ExperimentConfig,
    pub repetition: usize,
    history: Vec<Rating>,
}

impl<'a> Context<'a> {
    pub fn new(
        store: &'a RatingStore,
        split: &'a Split,
        models: &'a PretrainedModels,
        config: &'a ExperimentConfig,
        repetition: usize,
    ) -> Self {
        Self {
            store,
            split,
            models,
            config,
            repetition,
            history: train_ratings(store, split),
        }
    }

    fn seed(&self) -> u64 {
        self.config.train_config(self.repetition).seed
    }

    fn strategy_seed(&self, strategy: StrategyId, item: usize) -> u64 {
        let tag = StrategyId::ALL.iter().position(|&s| s == strategy).unwrap_or(0) as u64;
        derive_seed(derive_seed(self.seed(), 0x5354_0000 + tag), item as u64)
    }
}

/// Held-out ratings of `selected` users on `item`, recorded in `log`.
pub fn simulate_feedback(
    store: &RatingStore,
    split: &Split,
    item: usize,
    selected: &[usize],
    log: &mut RequestLog,
) -> Result<Vec<Rating>> {
    if !split.is_test_item(item) {
        return Err(Error::contract(format!("item {item} is not a new item")));
    }
    if let Some(u) = selected.iter().find(|&&u| !split.is_active_user(u)) {
        return Err(Error::contract(format!("user {u} is outside the selection pool")));
    }
    let feedback: Vec<Rating> = selected
        .iter()
        .filter_map(|&user| store.rating(user, item).map(|value| Rating { user, item, value }))
        .collect();
    log.record(item, selected.to_vec(), feedback.iter().map(|r| r.user).collect())?;
    Ok(feedback)
}

/// Fails if any rating by a prediction user on a new item is in `training`.
pub fn check_no_leak(split: &Split, training: &[Rating]) -> Result<()> {
    match training
        .iter()
        .find(|r| split.is_test_item(r.item) && !split.is_active_user(r.user))
    {
        Some(r) => Err(Error::contract(format!(
            "held-out rating ({}, {}) reached the training data",
            r.user, r.item
        ))),
        None => Ok(()),
    }
}

/// Per-item selections of one strategy before re-training.
struct Selections {
    per_item: Vec<(usize, Vec<usize>)>,
    solver: Vec<SelectionResult>,
    budget: Option<BudgetPlan>,
}

fn positions_to_users(pool: &[usize], positions: &[usize]) -> Vec<usize> {
    positions.iter().map(|&i| pool[i]).collect()
}

fn select_all(
    ctx: &Context,
    cache: &mut CriteriaCache,
    strategy: StrategyId,
    weights: Weights,
) -> Result<Selections> {
    let cfg = ctx.config;
    let items = &ctx.split.test_items;
    let pool = cache.pool().to_vec();
    let mut out = Selections {
        per_item: Vec::with_capacity(items.len()),
        solver: Vec::new(),
        budget: None,
    };

    let mut budgets = vec![cfg.k; items.len()];
    if strategy == StrategyId::FmfcDb {
        let mut p = Vec::with_capacity(items.len());
        let mut pr = Vec::with_capacity(items.len());
        for &item in items {
            let s = cache.signals(ctx.store, ctx.models, item)?;
            p.push(s.p.clone());
            pr.push(s.potential.clone());
        }
        let k_total = cfg.k_total.unwrap_or(cfg.k * items.len());
        let plan = budget::allocate(
            items,
            &budget::popularity(&p)?,
            &budget::controversy(&pr)?,
            &cfg.budget_params(pool.len()),
            k_total,
        )?;
        budgets.clone_from(&plan.k);
        out.budget = Some(plan);
    }

    // item-independent choices
    let fixed = match strategy {
        StrategyId::Popular => Some(select_popular(ctx.store, &ctx.split.train_items, &pool, cfg.k)?),
        StrategyId::Coverage => Some(select_coverage(ctx.store, &ctx.split.train_items, &pool, cfg.k)?),
        StrategyId::Exploration => {
            let result = select_exploration(cache.similarity(), cfg.k, cfg.gamma_e, cfg.max_iter)?;
            let users = positions_to_users(&pool, &result.selected);
            out.solver.push(result);
            Some(users)
        }
        _ => None,
    };

    for (pos, &item) in items.iter().enumerate() {
        let users = match strategy {
            _ if fixed.is_some() => fixed.clone().unwrap_or_default(),
            StrategyId::Random => select_random(&pool, cfg.k, ctx.strategy_seed(strategy, item))?,
            StrategyId::EpsGreedy => {
                let p = &cache.signals(ctx.store, ctx.models, item)?.p;
                let chosen = select_eps_greedy(p, cfg.k, cfg.epsilon, ctx.strategy_seed(strategy, item))?;
                positions_to_users(&pool, &chosen)
            }
            StrategyId::Fmfc | StrategyId::FmfcDb => {
                let bundle = cache.bundle(ctx.store, ctx.models, item, cfg.calibration_divisor)?;
                let problem = psd_shift(&build_m(bundle, weights, budgets[pos])?);
                let result = solve(&problem, cfg.max_iter)?;
                let users = positions_to_users(&pool, &result.selected);
                out.solver.push(result);
                users
            }
            StrategyId::FmNoAl | StrategyId::Hbrnn => {
                return Err(Error::contract(format!("{strategy} does not select users")));
            }
            _ => unreachable!("item-independent strategies handled above"),
        };
        out.per_item.push((item, users));
    }
    Ok(out)
}

fn convergence(results: &[SelectionResult]) -> Option<Convergence> {
    if results.is_empty() {
        return None;
    }
    let iterations: Vec<usize> = results.iter().map(|r| r.iterations).collect();
    Some(Convergence {
        problems: results.len(),
        converged: results.iter().filter(|r| r.converged).count(),
        mean_iterations: iterations.iter().sum::<usize>() as f64 / results.len() as f64,
        max_iterations: iterations.iter().copied().max().unwrap_or(0),
        monotone: results.iter().all(SelectionResult::is_monotone),
    })
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

fn diagnostics(
    ctx: &Context,
    cache: &mut CriteriaCache,
    log: &RequestLog,
) -> Result<SelectionDiagnostics> {
    let pool = cache.pool().to_vec();
    let position: BTreeMap<usize, usize> = pool.iter().enumerate().map(|(i, &u)| (u, i)).collect();
    let (mut willing, mut diverse, mut similar) = (Vec::new(), Vec::new(), Vec::new());
    for req in log.items() {
        let asked: Vec<usize> = req.requested.iter().map(|u| position[u]).collect();
        let signals = cache.signals(ctx.store, ctx.models, req.item)?.clone();
        willing.push(mean(&asked.iter().map(|&i| signals.p[i]).collect::<Vec<_>>()));
        if req.answered.len() >= 2 {
            let given: Vec<f64> = req
                .answered
                .iter()
                .filter_map(|&u| ctx.store.rating(u, req.item))
                .collect();
            let mut pairs = Vec::new();
            for (a, &x) in given.iter().enumerate() {
                for &y in &given[a + 1..] {
                    pairs.push((x - y).abs().sqrt());
                }
            }
            diverse.push(mean(&pairs));
        }
        let in_q: HashSet<usize> = asked.iter().copied().collect();
        let s = cache.similarity();
        let cross: Vec<f64> = asked
            .iter()
            .flat_map(|&i| (0..pool.len()).filter(|j| !in_q.contains(j)).map(move |j| s.get(i, j)))
            .collect();
        if !cross.is_empty() {
            similar.push(mean(&cross));
        }
    }
    Ok(SelectionDiagnostics {
        selected_willingness: mean(&willing),
        feedback_diversity: mean(&diverse),
        selected_similarity: mean(&similar),
    })
}

fn prediction_pairs(ctx: &Context) -> Vec<(usize, usize, f64)> {
    let mut pairs = Vec::new();
    for &item in &ctx.split.test_items {
        for &(user, value) in ctx.store.item_ratings(item) {
            if !ctx.split.is_active_user(user) {
                pairs.push((user, item, value));
            }
        }
    }
    pairs.sort_by_key(|&(u, i, _)| (u, i));
    pairs
}

fn predict_with(ctx: &Context, mut predict: impl FnMut(usize, usize) -> Result<f64>) -> Result<PredictionSet> {
    let scale = ctx.store.scale();
    let entries = prediction_pairs(ctx)
        .into_iter()
        .map(|(user, item, actual)| {
            let raw = predict(user, item)?;
            let predicted = if ctx.config.clip_predictions { scale.clamp(raw) } else { raw };
            Ok(Prediction { user, item, actual, predicted })
        })
        .collect::<Result<Vec<_>>>()?;
    PredictionSet::new(entries)
}

fn model_predictions(ctx: &Context, model: &FmModel) -> Result<PredictionSet> {
    predict_with(ctx, |user, item| {
        model.predict(&encode(model.layout(), user, Some(item), ctx.store.item_attrs(item))?)
    })
}

/// Runs one strategy end to end with the configured criteria weights.
pub fn run_strategy(ctx: &Context, cache: &mut CriteriaCache, strategy: StrategyId) -> Result<StrategyReport> {
    run_strategy_with(ctx, cache, strategy, ctx.config.weights())
}

/// As [`run_strategy`], with explicit weights for the four-criteria
/// strategies.
pub fn run_strategy_with(
    ctx: &Context,
    cache: &mut CriteriaCache,
    strategy: StrategyId,
    weights: Weights,
) -> Result<StrategyReport> {
    let mut log = RequestLog::new();
    let mut convergence_info = None;
    let mut diagnostics_info = None;
    let mut budget_plan = None;

    let predictions = match strategy {
        StrategyId::Hbrnn => {
            let hybrid = HybridNeighbour::new(ctx.store, &ctx.split.train_items);
            predict_with(ctx, |user, item| Ok(hybrid.predict(user, ctx.store.item_attrs(item))))?
        }
        StrategyId::FmNoAl => model_predictions(ctx, &ctx.models.regressor_with_item)?,
        _ => {
            let selections = select_all(ctx, cache, strategy, weights)?;
            let mut feedback = Vec::new();
            for (item, users) in &selections.per_item {
                feedback.extend(simulate_feedback(ctx.store, ctx.split, *item, users, &mut log)?);
            }
            check_no_leak(ctx.split, &ctx.history)?;
            check_no_leak(ctx.split, &feedback)?;
            let model = retrain_with_feedback(
                &ctx.models.regressor_with_item,
                ctx.store,
                ctx.split,
                &ctx.history,
                &feedback,
                &ctx.config.retrain_config(ctx.repetition),
            )?;
            convergence_info = convergence(&selections.solver);
            diagnostics_info = Some(diagnostics(ctx, cache, &log)?);
            budget_plan = selections.budget;
            model_predictions(ctx, &model)?
        }
    };

    let ranking = metrics::topn_eval(&predictions, ctx.config.top_n, ctx.config.relevance_threshold)?;
    let active = strategy.is_active();
    Ok(StrategyReport {
        strategy,
        pfr: if active { Some(metrics::pfr(&log)?) } else { None },
        ast: if active { Some(metrics::ast(&log)?) } else { None },
        requests: log.total_requests(),
        answers: log.total_answers(),
        distinct_users: log.distinct_requested(),
        rmse: metrics::rmse(&predictions)?,
        mae: metrics::mae(&predictions)?,
        ranking,
        predictions: predictions.len(),
        convergence: convergence_info,
        diagnostics: diagnostics_info,
        budget: budget_plan,
        items: log
            .items()
            .iter()
            .map(|r| ItemRequestCount {
                item: r.item,
                requested: r.requested.len(),
                answered: r.answered.len(),
            })
            .collect(),
    })
}

/// Split and pre-trained models for one repetition.
pub struct Prepared {
    pub split: Split,
    pub models: PretrainedModels,
}

pub fn prepare(store: &RatingStore, config: &ExperimentConfig, repetition: usize) -> Result<Prepared> {
    let split = make_split(store, config.test_fraction, config.split_seed_for(repetition)).map_err(|e| e.at_stage(Stage::Split))?;
    let models = pretrain_models(store, &split, &config.train_config(repetition)).map_err(|e| e.at_stage(Stage::Pretrain))?;
    Ok(Prepared { split, models })
}

/// Runs every configured strategy on an already loaded corpus.
pub fn run_on_store(config: &ExperimentConfig, store: &RatingStore) -> Result<ExperimentReport> {
    let started = Instant::now();
    config.validate().map_err(|e| e.at_stage(Stage::Config))?;
    let mut runs = Vec::with_capacity(config.repetitions);
    for rep in 0..config.repetitions {
        let Prepared { split, models } = prepare(store, config, rep)?;
        let ctx = Context::new(store, &split, &models, config, rep);
        let mut cache = CriteriaCache::new(store, &split);
        let strategies = config
            .strategies
            .iter()
            .map(|&s| run_strategy(&ctx, &mut cache, s))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| e.at_stage(Stage::Strategy))?;
        runs.push(RunReport {
            repetition: rep,
            split_seed: split.seed,
            seed: ctx.seed(),
            train_items: split.train_items.len(),
            test_items: split.test_items.len(),
            active_users: split.active_users.len(),
            prediction_users: split.prediction_users.len(),
            strategies,
        });
    }
    let summary = report::summarize(&config.strategies, &runs);
    let significance = report::significance(&summary);
    Ok(ExperimentReport {
        config: config.clone(),
        data: DataSummary {
            users: store.num_users(),
            items: store.num_items(),
            attrs: store.num_attrs(),
            ratings: store.num_ratings(),
            source: describe_source(config),
        },
        runs,
        summary,
        significance,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Loads data, runs every strategy and writes the report if an output
/// path is configured. Nothing is written when any stage fails.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let started = Instant::now();
    config.validate().map_err(|e| e.at_stage(Stage::Config))?;
    let store = load_store(config).map_err(|e| e.at_stage(Stage::Data))?;
    let mut report = run_on_store(config, &store)?;
    report.wall_clock_seconds = started.elapsed().as_secs_f64();
    if let Some(path) = &config.output {
        report.write(path).map_err(|e| e.at_stage(Stage::Report))?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub pfr: Series,
    pub rmse: Series,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// Cache counters per repetition.
    pub cache: Vec<CacheStats>,
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("alpha,pfr,rmse\n");
        for row in &self.rows {
            out.push_str(&format!("{},{},{}\n", row.alpha, row.pfr.mean, row.rmse.mean));
        }
        out
    }
}

/// Fixed-budget four-criteria selection for each `α`, other weights as
/// configured. Models and item criteria are shared across the `α` values.
pub fn alpha_sweep_on_store(config: &ExperimentConfig, store: &RatingStore, alphas: &[f64]) -> Result<SweepReport> {
    config.validate().map_err(|e| e.at_stage(Stage::Config))?;
    if alphas.len() < 2 {
        return Err(Error::Config("an alpha sweep needs at least 2 values".into()).at_stage(Stage::Config));
    }
    let mut pfr = vec![Vec::new(); alphas.len()];
    let mut rmse = vec![Vec::new(); alphas.len()];
    let mut stats = Vec::new();
    for rep in 0..config.repetitions {
        let Prepared { split, models } = prepare(store, config, rep)?;
        let ctx = Context::new(store, &split, &models, config, rep);
        let mut cache = CriteriaCache::new(store, &split);
        for (a, &alpha) in alphas.iter().enumerate() {
            let weights = Weights {
                alpha,
                ..config.weights()
            };
            let r = run_strategy_with(&ctx, &mut cache, StrategyId::Fmfc, weights)
                .map_err(|e| e.at_stage(Stage::Strategy))?;
            pfr[a].push(r.pfr.unwrap_or(0.0));
            rmse[a].push(r.rmse);
        }
        stats.push(cache.stats());
    }
    let rows = alphas
        .iter()
        .zip(pfr.into_iter().zip(rmse))
        .map(|(&alpha, (p, r))| SweepRow {
            alpha,
            pfr: Series::new(p),
            rmse: Series::new(r),
        })
        .collect();
    Ok(SweepReport { rows, cache: stats })
}

pub fn alpha_sweep(config: &ExperimentConfig, alphas: &[f64]) -> Result<SweepReport> {
    let store = load_store(config).map_err(|e| e.at_stage(Stage::Data))?;
    alpha_sweep_on_store(config, &store, alphas)
}
