//! Browser demo over a small synthetic corpus.
//!
//! A [`Demo`] holds one corpus, its split and pre-trained models. The page
//! calls three operations on it: choose users for one new item, allocate a
//! shared request budget across the new items, and sweep `α`. Each returns
//! a JSON string.
//!
//! The `*_json` methods are the native entry points; the `wasm_bindgen`
//! wrappers only convert errors.

use coldstart::baselines::StrategyId;
use coldstart::budget::{self, BudgetParams};
use coldstart::data::RatingStore;
use coldstart::harness::{alpha_sweep_on_store, load_store, prepare, CriteriaCache, ExperimentConfig, Prepared};
use coldstart::selector::{build_m, psd_shift, solve, Weights};
use coldstart::{Error, Result};
use serde_json::json;
use wasm_bindgen::prelude::*;

fn demo_config(seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        synthetic_users: 100,
        synthetic_items: 60,
        synthetic_attrs: 20,
        synthetic_density: 0.1,
        synthetic_seed: seed,
        fm_epochs: 20,
        retrain_epochs: 20,
        k: 10,
        strategies: vec![StrategyId::Fmfc],
        ..ExperimentConfig::default()
    }
}

#[wasm_bindgen]
pub struct Demo {
    config: ExperimentConfig,
    store: RatingStore,
    prepared: Prepared,
    cache: CriteriaCache,
}

impl Demo {
    pub fn create(seed: u64) -> Result<Demo> {
        let config = demo_config(seed);
        let store = load_store(&config)?;
        let prepared = prepare(&store, &config, 0)?;
        let cache = CriteriaCache::new(&store, &prepared.split);
        Ok(Demo {
            config,
            store,
            prepared,
            cache,
        })
    }

    pub fn new_items(&self) -> &[usize] {
        &self.prepared.split.test_items
    }

    /// Users chosen for the `slot`-th new item under the given weights.
    pub fn select_json(&mut self, slot: usize, weights: Weights, k: usize) -> Result<String> {
        let item = *self
            .new_items()
            .get(slot)
            .ok_or_else(|| Error::Validation(format!("there are only {} new items", self.new_items().len())))?;
        let bundle = self
            .cache
            .bundle(&self.store, &self.prepared.models, item, None)?
            .clone();
        let result = solve(&psd_shift(&build_m(&bundle, weights, k)?), self.config.max_iter)?;
        let signals = self.cache.signals(&self.store, &self.prepared.models, item)?;
        let users: Vec<_> = result
            .selected
            .iter()
            .map(|&pos| {
                let user = bundle.users[pos];
                json!({
                    "user": self.store.user_id(user),
                    "willingness": signals.p[pos],
                    "potential": signals.potential[pos],
                    "rated": self.store.rating(user, item),
                })
            })
            .collect();
        let answered = users.iter().filter(|u| !u["rated"].is_null()).count();
        Ok(json!({
            "item": self.store.item_id(item),
            "attributes": self.store.item_attrs(item).iter().map(|&a| self.store.attr_id(a)).collect::<Vec<_>>(),
            "pool": bundle.len(),
            "k": k,
            "users": users,
            "answered": answered,
            "objective": result.objective,
            "iterations": result.iterations,
            "converged": result.converged,
            "trace": result.trace,
        })
        .to_string())
    }

    /// Request counts per new item for a total budget.
    pub fn budget_json(&mut self, lambda: f64, k_total: usize) -> Result<String> {
        let items = self.new_items().to_vec();
        let (mut p, mut pr) = (Vec::new(), Vec::new());
        for &item in &items {
            let s = self.cache.signals(&self.store, &self.prepared.models, item)?;
            p.push(s.p.clone());
            pr.push(s.potential.clone());
        }
        let params = BudgetParams {
            lambda,
            normalize: true,
            cap: Some(self.cache.pool().len()),
        };
        let plan = budget::allocate(&items, &budget::popularity(&p)?, &budget::controversy(&pr)?, &params, k_total)?;
        let rows: Vec<_> = (0..items.len())
            .map(|i| {
                json!({
                    "item": self.store.item_id(items[i]),
                    "popularity": plan.popularity[i],
                    "controversy": plan.controversy[i],
                    "score": plan.scores[i],
                    "k": plan.k[i],
                })
            })
            .collect();
        Ok(json!({ "lambda": lambda, "k_total": k_total, "items": rows }).to_string())
    }

    /// PFR and RMSE after re-training, for each `α`.
    pub fn sweep_json(&self, alphas: &[f64]) -> Result<String> {
        let sweep = alpha_sweep_on_store(&self.config, &self.store, alphas)?;
        let rows: Vec<_> = sweep
            .rows
            .iter()
            .map(|r| json!({ "alpha": r.alpha, "pfr": r.pfr.mean, "rmse": r.rmse.mean }))
            .collect();
        Ok(json!({ "rows": rows }).to_string())
    }
}

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32) -> std::result::Result<Demo, JsError> {
        Demo::create(u64::from(seed)).map_err(js)
    }

    #[wasm_bindgen(js_name = newItemCount)]
    pub fn new_item_count(&self) -> usize {
        self.new_items().len()
    }

    pub fn select(
        &mut self,
        slot: usize,
        alpha: f64,
        beta: f64,
        gamma: f64,
        sigma: f64,
        k: usize,
    ) -> std::result::Result<String, JsError> {
        let weights = Weights {
            alpha,
            beta,
            gamma,
            sigma,
        };
        self.select_json(slot, weights, k).map_err(js)
    }

    pub fn budget(&mut self, lambda: f64, k_total: usize) -> std::result::Result<String, JsError> {
        self.budget_json(lambda, k_total).map_err(js)
    }

    /// `alphas` is a comma-separated list.
    pub fn sweep(&self, alphas: &str) -> std::result::Result<String, JsError> {
        let parsed = alphas
            .split(',')
            .map(|a| a.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| JsError::new(&format!("bad alpha list: {e}")))?;
        self.sweep_json(&parsed).map_err(js)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    fn parse(s: &str) -> Value {
        serde_json::from_str(s).unwrap()
    }

    #[test]
    fn select_returns_k_users() {
        let mut demo = Demo::create(3).unwrap();
        let out = parse(&demo.select_json(0, Weights::default(), 7).unwrap());
        assert_eq!(out["users"].as_array().unwrap().len(), 7);
        assert_eq!(out["pool"], 50);
        assert!(out["answered"].as_u64().unwrap() <= 7);
        let trace = out["trace"].as_array().unwrap();
        assert!(trace.windows(2).all(|w| w[1].as_f64() >= w[0].as_f64()));
        assert!(demo.select_json(999, Weights::default(), 7).unwrap_err().is_validation());
    }

    #[test]
    fn budget_sums_to_total() {
        let mut demo = Demo::create(3).unwrap();
        let out = parse(&demo.budget_json(1.0, 100).unwrap());
        let ks: u64 = out["items"].as_array().unwrap().iter().map(|r| r["k"].as_u64().unwrap()).sum();
        assert_eq!(ks, 100);
        assert!(demo.budget_json(1.0, 1).is_err());
    }

    #[test]
    fn sweep_has_a_row_per_alpha() {
        let demo = Demo::create(3).unwrap();
        let out = parse(&demo.sweep_json(&[0.0, 1.0, 2.0]).unwrap());
        let rows = out["rows"].as_array().unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r["pfr"].as_f64().unwrap())));
    }
}
