//! Evaluation measures for both phases and the paired significance test.

use std::collections::{BTreeMap, HashSet};

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prediction {
    pub user: usize,
    pub item: usize,
    pub actual: f64,
    pub predicted: f64,
}

/// Predicted vs. actual ratings, at most one per (user, item).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PredictionSet {
    entries: Vec<Prediction>,
}

impl PredictionSet {
    pub fn new(entries: Vec<Prediction>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            if !seen.insert((e.user, e.item)) {
                return Err(Error::validation(format!(
                    "duplicate prediction for ({}, {})",
                    e.user, e.item
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[Prediction] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries grouped by user, users ascending.
    pub fn by_user(&self) -> BTreeMap<usize, Vec<Prediction>> {
        let mut out: BTreeMap<usize, Vec<Prediction>> = BTreeMap::new();
        for e in &self.entries {
            out.entry(e.user).or_default().push(*e);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ItemRequests {
    pub item: usize,
    pub requested: Vec<usize>,
    pub answered: Vec<usize>,
}

/// Who was asked about each new item and who answered.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RequestLog {
    items: Vec<ItemRequests>,
}

impl RequestLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, item: usize, requested: Vec<usize>, answered: Vec<usize>) -> Result<()> {
        let asked: HashSet<usize> = requested.iter().copied().collect();
        if let Some(u) = answered.iter().find(|u| !asked.contains(u)) {
            return Err(Error::contract(format!(
                "user {u} answered item {item} without being asked"
            )));
        }
        self.items.push(ItemRequests {
            item,
            requested,
            answered,
        });
        Ok(())
    }

    pub fn items(&self) -> &[ItemRequests] {
        &self.items
    }

    pub fn total_requests(&self) -> usize {
        self.items.iter().map(|i| i.requested.len()).sum()
    }

    pub fn total_answers(&self) -> usize {
        self.items.iter().map(|i| i.answered.len()).sum()
    }

    pub fn distinct_requested(&self) -> usize {
        self.items
            .iter()
            .flat_map(|i| i.requested.iter().copied())
            .collect::<HashSet<_>>()
            .len()
    }
}

fn require_requests(log: &RequestLog) -> Result<usize> {
    match log.total_requests() {
        0 => Err(Error::validation("no rating requests were made")),
        n => Ok(n),
    }
}

/// Fraction of rating requests that were answered.
pub fn pfr(log: &RequestLog) -> Result<f64> {
    let requests = require_requests(log)?;
    Ok(log.total_answers() as f64 / requests as f64)
}

/// Requests per distinct requested user.
pub fn ast(log: &RequestLog) -> Result<f64> {
    let requests = require_requests(log)?;
    Ok(requests as f64 / log.distinct_requested() as f64)
}

fn require_predictions(preds: &PredictionSet) -> Result<()> {
    if preds.is_empty() {
        return Err(Error::validation("prediction set is empty"));
    }
    Ok(())
}

pub fn rmse(preds: &PredictionSet) -> Result<f64> {
    require_predictions(preds)?;
    let sq: f64 = preds.entries.iter().map(|p| (p.actual - p.predicted).powi(2)).sum();
    Ok((sq / preds.len() as f64).sqrt())
}

pub fn mae(preds: &PredictionSet) -> Result<f64> {
    require_predictions(preds)?;
    let abs: f64 = preds.entries.iter().map(|p| (p.actual - p.predicted).abs()).sum();
    Ok(abs / preds.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RankingMetrics {
    pub precision_at_5: f64,
    pub precision_at_n: f64,
    pub recall_at_5: f64,
    pub recall_at_n: f64,
    pub ndcg_at_5: f64,
    pub ndcg_at_n: f64,
    /// Users counted in precision.
    pub users: usize,
    /// Users with at least one preferred item, counted in recall and NDCG.
    pub users_with_preferred: usize,
}

struct UserRanking {
    /// Relevance of candidates in predicted order.
    ranked: Vec<f64>,
    /// Relevance sorted descending.
    ideal: Vec<f64>,
    preferred: usize,
}

fn dcg(relevance: &[f64], k: usize) -> f64 {
    relevance
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &r)| (2f64.powf(r) - 1.0) / ((i + 2) as f64).log2())
        .sum()
}

impl UserRanking {
    fn new(candidates: &[Prediction], threshold: f64) -> Self {
        let relevance = |p: &Prediction| if p.actual > threshold { p.actual } else { 0.0 };
        let mut order: Vec<&Prediction> = candidates.iter().collect();
        order.sort_by(|a, b| b.predicted.total_cmp(&a.predicted).then(a.item.cmp(&b.item)));
        let ranked: Vec<f64> = order.iter().map(|p| relevance(p)).collect();
        let mut ideal = ranked.clone();
        ideal.sort_by(|a, b| b.total_cmp(a));
        let preferred = ranked.iter().filter(|&&r| r > 0.0).count();
        Self {
            ranked,
            ideal,
            preferred,
        }
    }

    fn hits(&self, k: usize) -> usize {
        self.ranked.iter().take(k).filter(|&&r| r > 0.0).count()
    }

    fn precision(&self, k: usize) -> f64 {
        self.hits(k) as f64 / k as f64
    }

    fn recall(&self, k: usize) -> f64 {
        self.hits(k) as f64 / self.preferred as f64
    }

    fn ndcg(&self, k: usize) -> f64 {
        let ideal = dcg(&self.ideal, k);
        if ideal == 0.0 {
            0.0
        } else {
            dcg(&self.ranked, k) / ideal
        }
    }
}

/// Top-`n` ranking quality at cut-offs 5 and `n`.
///
/// Each user's candidates are ranked by predicted rating (ties to the lower
/// item index). Items with actual rating above `threshold` are preferred and
/// carry their rating as relevance. Users with no preferred candidate count
/// toward precision only.
pub fn topn_eval(preds: &PredictionSet, n: usize, threshold: f64) -> Result<RankingMetrics> {
    if n < 5 {
        return Err(Error::validation("top-N length must be at least 5"));
    }
    let rankings: Vec<UserRanking> = preds
        .by_user()
        .values()
        .map(|c| UserRanking::new(c, threshold))
        .collect();
    let with_pref: Vec<&UserRanking> = rankings.iter().filter(|r| r.preferred > 0).collect();
    let mean = |values: Vec<f64>| {
        if values.is_empty() {
            0.0
        } else {
            values.iter().sum::<f64>() / values.len() as f64
        }
    };
    Ok(RankingMetrics {
        precision_at_5: mean(rankings.iter().map(|r| r.precision(5)).collect()),
        precision_at_n: mean(rankings.iter().map(|r| r.precision(n)).collect()),
        recall_at_5: mean(with_pref.iter().map(|r| r.recall(5)).collect()),
        recall_at_n: mean(with_pref.iter().map(|r| r.recall(n)).collect()),
        ndcg_at_5: mean(with_pref.iter().map(|r| r.ndcg(5)).collect()),
        ndcg_at_n: mean(with_pref.iter().map(|r| r.ndcg(n)).collect()),
        users: rankings.len(),
        users_with_preferred: with_pref.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Alternative {
    /// Mean of `a − b` is greater than zero.
    Greater,
    /// Mean of `a − b` is less than zero.
    Less,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub df: usize,
    pub significant: bool,
}

pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

/// One-tailed paired t-test on `a − b`.
///
/// When every difference is identical and nonzero, `t` is infinite and `p`
/// is 0 (or 1 if the sign opposes the alternative).
pub fn paired_t_test(a: &[f64], b: &[f64], alternative: Alternative) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::validation("paired samples differ in length"));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::validation("a paired t-test needs at least 2 pairs"));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if diffs.iter().all(|&d| d == 0.0) {
        return Err(Error::validation("all paired differences are zero"));
    }
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let df = n - 1;
    let signed = match alternative {
        Alternative::Greater => 1.0,
        Alternative::Less => -1.0,
    };
    let (t, p) = if var == 0.0 {
        let t = mean.signum() * f64::INFINITY;
        (t, if signed * mean > 0.0 { 0.0 } else { 1.0 })
    } else {
        let t = mean / (var / n as f64).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df as f64).map_err(|e| Error::validation(e.to_string()))?;
        (t, dist.sf(signed * t))
    };
    Ok(TTest {
        t,
        p,
        df,
        significant: p < SIGNIFICANCE_LEVEL,
    })
}
