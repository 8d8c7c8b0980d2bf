//! Comparison strategies: a content/neighbourhood hybrid predictor and the
//! alternative ways of choosing whom to ask.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::RatingStore;
use crate::matrix::{top_k_indices, SquareMatrix};
use crate::rng::seeded_rng;
use crate::selector::{psd_shift, solve, SelectionProblem, SelectionResult};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyId {
    /// Four-criteria selection with a fixed per-item batch size.
    Fmfc,
    /// Four-criteria selection with the dynamic budget.
    FmfcDb,
    Random,
    EpsGreedy,
    Popular,
    Coverage,
    Exploration,
    /// Pre-trained model, no active learning.
    FmNoAl,
    /// Attribute-similarity weighted neighbourhood prediction.
    Hbrnn,
}

impl StrategyId {
    pub const ALL: [StrategyId; 9] = [
        StrategyId::Hbrnn,
        StrategyId::FmNoAl,
        StrategyId::Random,
        StrategyId::EpsGreedy,
        StrategyId::Popular,
        StrategyId::Coverage,
        StrategyId::Exploration,
        StrategyId::Fmfc,
        StrategyId::FmfcDb,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyId::Fmfc => "fmfc",
            StrategyId::FmfcDb => "fmfc_db",
            StrategyId::Random => "random",
            StrategyId::EpsGreedy => "eps_greedy",
            StrategyId::Popular => "popular",
            StrategyId::Coverage => "coverage",
            StrategyId::Exploration => "exploration",
            StrategyId::FmNoAl => "fm_no_al",
            StrategyId::Hbrnn => "hbrnn",
        }
    }

    /// Whether the strategy asks users for ratings before predicting.
    pub fn is_active(self) -> bool {
        !matches!(self, StrategyId::FmNoAl | StrategyId::Hbrnn)
    }
}

impl fmt::Display for StrategyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrategyId::ALL
            .into_iter()
            .find(|id| id.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy '{s}'")))
    }
}

fn cosine_sorted(a: &[usize], b: &[usize]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let (mut i, mut j, mut common) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                common += 1;
                i += 1;
                j += 1;
            }
        }
    }
    common as f64 / ((a.len() * b.len()) as f64).sqrt()
}

/// Item-based neighbourhood prediction with attribute cosine similarity.
pub struct HybridNeighbour<'a> {
    store: &'a RatingStore,
    is_train: Vec<bool>,
    global_mean: f64,
}

impl<'a> HybridNeighbour<'a> {
    pub fn new(store: &'a RatingStore, train_items: &[usize]) -> Self {
        let mut is_train = vec![false; store.num_items()];
        train_items.iter().for_each(|&i| is_train[i] = true);
        let (sum, count) = store
            .ratings()
            .iter()
            .filter(|r| is_train[r.item])
            .fold((0.0, 0usize), |(s, c), r| (s + r.value, c + 1));
        let global_mean = if count == 0 {
            (store.scale().min + store.scale().max) / 2.0
        } else {
            sum / count as f64
        };
        Self {
            store,
            is_train,
            global_mean,
        }
    }

    pub fn global_mean(&self) -> f64 {
        self.global_mean
    }

    /// Similarity-weighted mean of `user`'s training ratings; the global
    /// training mean when no rated item shares an attribute.
    pub fn predict(&self, user: usize, new_item_attrs: &[usize]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for &(item, rating) in self.store.user_ratings(user) {
            if !self.is_train[item] {
                continue;
            }
            let sim = cosine_sorted(self.store.item_attrs(item), new_item_attrs);
            num += sim * rating;
            den += sim;
        }
        if den > 0.0 {
            num / den
        } else {
            self.global_mean
        }
    }
}

pub fn hbrnn_predict(store: &RatingStore, train_items: &[usize], new_item_attrs: &[usize], user: usize) -> f64 {
    HybridNeighbour::new(store, train_items).predict(user, new_item_attrs)
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k > n {
        return Err(Error::validation(format!("cannot select {k} users from a pool of {n}")));
    }
    Ok(())
}

/// Uniform sample of `k` pool members without replacement (sorted).
pub fn select_random(pool: &[usize], k: usize, seed: u64) -> Result<Vec<usize>> {
    check_k(k, pool.len())?;
    let mut rng = seeded_rng(seed);
    let mut out: Vec<usize> = index::sample(&mut rng, pool.len(), k)
        .into_iter()
        .map(|i| pool[i])
        .collect();
    out.sort_unstable();
    Ok(out)
}

/// `k` sequential picks over pool positions: the most willing remaining
/// user with probability `1 − ε`, otherwise a uniform remaining user.
pub fn select_eps_greedy(p: &[f64], k: usize, epsilon: f64, seed: u64) -> Result<Vec<usize>> {
    check_k(k, p.len())?;
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::validation(format!("epsilon must lie in [0, 1], got {epsilon}")));
    }
    let mut rng = seeded_rng(seed);
    let mut remaining: Vec<usize> = (0..p.len()).collect();
    let mut chosen = Vec::with_capacity(k);
    for _ in 0..k {
        let explore = rng.random::<f64>() < epsilon;
        let pos = if explore {
            rng.random_range(0..remaining.len())
        } else {
            // remaining stays in ascending order, so the first maximum is the lowest index
            let mut best = 0;
            for (pos, &u) in remaining.iter().enumerate() {
                if p[u] > p[remaining[best]] {
                    best = pos;
                }
            }
            best
        };
        chosen.push(remaining.remove(pos));
    }
    chosen.sort_unstable();
    Ok(chosen)
}

fn training_counts(store: &RatingStore, train_items: &[usize]) -> (Vec<bool>, Vec<usize>) {
    let mut is_train = vec![false; store.num_items()];
    train_items.iter().for_each(|&i| is_train[i] = true);
    let per_item = (0..store.num_items())
        .map(|i| if is_train[i] { store.item_ratings(i).len() } else { 0 })
        .collect();
    (is_train, per_item)
}

fn top_pool(pool: &[usize], scores: &[f64], k: usize) -> Result<Vec<usize>> {
    check_k(k, pool.len())?;
    let pool_scores: Vec<f64> = pool.iter().map(|&u| scores[u]).collect();
    Ok(top_k_indices(&pool_scores, k).into_iter().map(|i| pool[i]).collect())
}

/// Pool users with the most training ratings.
pub fn select_popular(store: &RatingStore, train_items: &[usize], pool: &[usize], k: usize) -> Result<Vec<usize>> {
    let (is_train, _) = training_counts(store, train_items);
    let counts: Vec<f64> = (0..store.num_users())
        .map(|u| store.user_ratings(u).iter().filter(|(i, _)| is_train[*i]).count() as f64)
        .collect();
    top_pool(pool, &counts, k)
}

/// `Coverage(u) = Σ_{v ≠ u} |items rated by both u and v|` over training items.
pub fn coverage_scores(store: &RatingStore, train_items: &[usize]) -> Vec<f64> {
    let (is_train, per_item) = training_counts(store, train_items);
    (0..store.num_users())
        .map(|u| {
            store
                .user_ratings(u)
                .iter()
                .filter(|(i, _)| is_train[*i])
                .map(|&(i, _)| (per_item[i] - 1) as f64)
                .sum()
        })
        .collect()
}

pub fn select_coverage(store: &RatingStore, train_items: &[usize], pool: &[usize], k: usize) -> Result<Vec<usize>> {
    top_pool(pool, &coverage_scores(store, train_items), k)
}

/// Selection matrix of the exploration objective
/// `−qᵀSq + γ_e qᵀS(1−q)`.
pub fn exploration_matrix(s: &SquareMatrix, gamma_e: f64) -> SquareMatrix {
    let rows = s.row_sums();
    SquareMatrix::from_fn(s.size(), |i, j| {
        if i == j {
            gamma_e * rows[i]
        } else {
            -(1.0 + gamma_e) * s.get(i, j)
        }
    })
}

/// Diverse-yet-representative selection over pool positions, solved with
/// the same shifted top-k iteration as the main selector.
pub fn select_exploration(s: &SquareMatrix, k: usize, gamma_e: f64, max_iter: usize) -> Result<SelectionResult> {
    check_k(k, s.size())?;
    if !(gamma_e >= 0.0 && gamma_e.is_finite()) {
        return Err(Error::validation("gamma_e must be finite and >= 0"));
    }
    let problem = SelectionProblem::new(exploration_matrix(s, gamma_e), k)?;
    solve(&psd_shift(&problem), max_iter)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Rating, RatingScale};

    fn store(ratings: &[(usize, usize, f64)], users: usize, attrs: Vec<Vec<usize>>) -> RatingStore {
        let n_attrs = attrs.iter().flatten().max().map_or(0, |m| m + 1);
        let ratings = ratings.iter().map(|&(user, item, value)| Rating { user, item, value }).collect();
        RatingStore::new(users, attrs.len(), n_attrs, ratings, attrs, RatingScale::default()).unwrap()
    }

    #[test]
    fn strategy_names_round_trip() {
        for id in StrategyId::ALL {
            assert_eq!(id.name().parse::<StrategyId>().unwrap(), id);
        }
        assert!("fmfc-db".parse::<StrategyId>().is_err());
    }

    #[test]
    fn hbrnn_examples() {
        // items 0,1 share attributes with the new item {0}; item 2 does not
        let s = store(
            &[(0, 0, 2.0), (0, 1, 4.0), (1, 0, 5.0), (2, 2, 1.0)],
            4,
            vec![vec![0], vec![0], vec![1], vec![0]],
        );
        let train = [0, 1, 2];
        assert_eq!(hbrnn_predict(&s, &train, &[0], 0), 3.0);
        assert_eq!(hbrnn_predict(&s, &train, &[0], 1), 5.0);
        let global = (2.0 + 4.0 + 5.0 + 1.0) / 4.0;
        assert_eq!(hbrnn_predict(&s, &train, &[0], 3), global);
        // no shared attribute
        assert_eq!(hbrnn_predict(&s, &train, &[0], 2), global);
    }

    #[test]
    fn random_selection() {
        let pool: Vec<usize> = (10..20).collect();
        assert_eq!(select_random(&pool, 10, 1).unwrap(), pool);
        assert_eq!(select_random(&pool, 4, 9).unwrap(), select_random(&pool, 4, 9).unwrap());
        assert!(matches!(select_random(&pool, 11, 0), Err(Error::Validation(_))));
    }

    #[test]
    fn eps_greedy_examples() {
        assert_eq!(select_eps_greedy(&[0.9, 0.1, 0.5], 2, 0.0, 3).unwrap(), vec![0, 2]);
        let p = [0.2, 0.7, 0.7, 0.1];
        assert_eq!(select_eps_greedy(&p, 2, 0.0, 0).unwrap(), top_k_indices(&p, 2));
        assert!(select_eps_greedy(&p, 2, 1.5, 0).is_err());
    }

    #[test]
    fn popular_examples() {
        // training counts (5, 3, 9)
        let mut r = Vec::new();
        for (u, n) in [(0, 5), (1, 3), (2, 9)] {
            for i in 0..n {
                r.push((u, i, 3.0));
            }
        }
        let s = store(&r, 3, vec![vec![]; 10]);
        let train: Vec<usize> = (0..10).collect();
        assert_eq!(select_popular(&s, &train, &[0, 1, 2], 1).unwrap(), vec![2]);

        let flat = store(&[(0, 0, 3.0), (1, 0, 3.0), (2, 0, 3.0)], 3, vec![vec![0]]);
        assert_eq!(select_popular(&flat, &[0], &[0, 1, 2], 2).unwrap(), vec![0, 1]);
    }

    #[test]
    fn coverage_examples() {
        let r = [(0, 0, 1.0), (0, 1, 1.0), (0, 2, 1.0), (1, 0, 1.0), (1, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0)];
        let s = store(&r, 3, vec![vec![]; 4]);
        let train = [0, 1, 2, 3];
        assert_eq!(coverage_scores(&s, &train), vec![3.0, 3.0, 0.0]);
        assert_eq!(select_coverage(&s, &train, &[0, 1, 2], 2).unwrap(), vec![0, 1]);
        assert_eq!(select_coverage(&s, &train, &[2], 1).unwrap(), vec![2]);
    }

    #[test]
    fn exploration_avoids_duplicates() {
        let s = SquareMatrix::from_rows(&[vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 0.0]]);
        let r = select_exploration(&s, 2, 1.0, 100).unwrap();
        assert_ne!(r.selected, vec![0, 1]);

        let zero = SquareMatrix::zeros(4);
        assert_eq!(select_exploration(&zero, 2, 1.0, 100).unwrap().selected, vec![0, 1]);
    }
}
