//! Splitting a total request budget across a batch of new items.
//!
//! Items that many pool users are likely to rate (popular) and items whose
//! potential ratings disagree (controversial) receive more requests. Scores
//! are turned into integers that sum exactly to the total, with every item
//! receiving at least one request.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetParams {
    /// Weight of controversy relative to popularity.
    pub lambda: f64,
    /// Min-max normalise both features across the batch before combining.
    pub normalize: bool,
    /// Upper bound on any single item's allocation (e.g. the pool size).
    pub cap: Option<usize>,
}

impl Default for BudgetParams {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            normalize: true,
            cap: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BudgetPlan {
    pub items: Vec<usize>,
    pub popularity: Vec<f64>,
    pub controversy: Vec<f64>,
    pub scores: Vec<f64>,
    pub lambda: f64,
    pub k_total: usize,
    pub k: Vec<usize>,
}

impl BudgetPlan {
    pub fn budget_for(&self, item: usize) -> Option<usize> {
        self.items.iter().position(|&i| i == item).map(|pos| self.k[pos])
    }
}

/// Mean willingness over the pool, per item.
pub fn popularity(p_vectors: &[Vec<f64>]) -> Result<Vec<f64>> {
    p_vectors
        .iter()
        .map(|p| {
            if p.is_empty() {
                return Err(Error::validation("popularity needs a non-empty user pool"));
            }
            Ok(p.iter().sum::<f64>() / p.len() as f64)
        })
        .collect()
}

/// `(1/n) · sqrt(Σ (P_r − mean)²)` per item.
pub fn controversy(potential_vectors: &[Vec<f64>]) -> Result<Vec<f64>> {
    potential_vectors
        .iter()
        .map(|pr| {
            if pr.is_empty() {
                return Err(Error::validation("controversy needs a non-empty user pool"));
            }
            let n = pr.len() as f64;
            let mean = pr.iter().sum::<f64>() / n;
            Ok(pr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>().sqrt() / n)
        })
        .collect()
}

fn min_max(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 0.0 || !(hi - lo).is_finite() {
        return vec![0.5; values.len()];
    }
    values.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

/// Real quotas `clamp(t·w(i), 1, cap)` with `t` chosen so they sum to
/// `k_total`. `None` when even `t → ∞` falls short (zero weights stay at 1).
fn water_fill(weights: &[f64], k_total: usize, cap: Option<usize>) -> Option<Vec<f64>> {
    let upper = cap.map_or(f64::INFINITY, |c| c as f64);
    let target = k_total as f64;
    let total_at = |t: f64| weights.iter().map(|&w| (t * w).clamp(1.0, upper)).sum::<f64>();

    // the sum is piecewise linear in t with kinks where an item leaves 1 or
    // reaches the cap
    let mut kinks: Vec<f64> = weights
        .iter()
        .filter(|&&w| w > 0.0)
        .flat_map(|&w| [1.0 / w, upper / w])
        .filter(|t| t.is_finite())
        .collect();
    kinks.sort_by(f64::total_cmp);
    let mut lo = 0.0;
    let mut hi = f64::INFINITY;
    for &t in &kinks {
        if total_at(t) >= target {
            hi = t;
            break;
        }
        lo = t;
    }
    // on [lo, hi] the sum is fixed + t·slope; classify items mid-segment so
    // rounding at the kinks cannot misplace them
    let mid = if hi.is_finite() { 0.5 * (lo + hi) } else { 2.0 * lo + 1.0 };
    let (mut fixed, mut slope) = (0.0, 0.0);
    for &w in weights {
        let q = mid * w;
        if w > 0.0 && q > 1.0 && q < upper {
            slope += w;
        } else {
            fixed += q.clamp(1.0, upper);
        }
    }
    if slope == 0.0 {
        return (total_at(lo) == target).then(|| weights.iter().map(|&w| (lo * w).clamp(1.0, upper)).collect());
    }
    let t = (target - fixed) / slope;
    Some(weights.iter().map(|&w| (t * w).clamp(1.0, upper)).collect())
}

/// Integer allocation proportional to `scores` summing to `k_total`.
///
/// Every item gets at least 1 and, with a cap, at most `cap`; the rest is
/// shared in proportion to the scores (water-filling), and the real quotas
/// are rounded by the largest-remainder rule with ties going to the lower
/// index. All-zero scores share the budget evenly. If the capped positive
/// scores cannot absorb the budget, the surplus is spread evenly over the
/// zero-score items.
pub fn allocate_scores(scores: &[f64], k_total: usize, cap: Option<usize>) -> Result<Vec<usize>> {
    let l = scores.len();
    if l == 0 {
        return Err(Error::validation("no items to allocate budget to"));
    }
    if k_total < l {
        return Err(Error::validation(format!(
            "total budget {k_total} is smaller than the {l} items"
        )));
    }
    if scores.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
        return Err(Error::validation("budget scores must be finite and >= 0"));
    }
    if let Some(cap) = cap {
        if cap == 0 || k_total > cap.saturating_mul(l) {
            return Err(Error::validation(format!(
                "total budget {k_total} cannot be placed under a per-item cap of {cap}"
            )));
        }
    }
    let weights: Vec<f64> = if scores.iter().all(|&s| s == 0.0) {
        vec![1.0; l]
    } else {
        scores.to_vec()
    };
    let quotas = water_fill(&weights, k_total, cap).unwrap_or_else(|| {
        let cap = cap.expect("an uncapped fill always reaches the total") as f64;
        let zeros = weights.iter().filter(|&&w| w == 0.0).count() as f64;
        let positive = l as f64 - zeros;
        let share = (k_total as f64 - cap * positive) / zeros;
        weights.iter().map(|&w| if w > 0.0 { cap } else { share }).collect()
    });

    let mut k: Vec<usize> = quotas.iter().map(|q| (q + 1e-9).floor() as usize).collect();
    let assigned: usize = k.iter().sum();
    let leftover = k_total.saturating_sub(assigned);
    let remainder = |i: usize| quotas[i] - k[i] as f64;
    let mut order: Vec<usize> = (0..l).filter(|&i| cap.is_none_or(|c| k[i] < c)).collect();
    order.sort_by(|&a, &b| remainder(b).total_cmp(&remainder(a)).then(a.cmp(&b)));
    debug_assert!(leftover <= order.len());
    for &i in order.iter().take(leftover) {
        k[i] += 1;
    }
    debug_assert_eq!(k.iter().sum::<usize>(), k_total);
    Ok(k)
}

/// Combines the two features into scores and allocates `k_total` requests.
pub fn allocate(
    items: &[usize],
    popularity: &[f64],
    controversy: &[f64],
    params: &BudgetParams,
    k_total: usize,
) -> Result<BudgetPlan> {
    let l = items.len();
    if popularity.len() != l || controversy.len() != l {
        return Err(Error::contract("budget features must have one entry per item"));
    }
    if !(params.lambda >= 0.0 && params.lambda.is_finite()) {
        return Err(Error::validation("lambda must be finite and >= 0"));
    }
    let (pop, con) = if params.normalize {
        (min_max(popularity), min_max(controversy))
    } else {
        (popularity.to_vec(), controversy.to_vec())
    };
    let scores: Vec<f64> = pop
        .iter()
        .zip(&con)
        .map(|(p, c)| (p + params.lambda * c).max(0.0))
        .collect();
    let k = allocate_scores(&scores, k_total, params.cap)?;
    Ok(BudgetPlan {
        items: items.to_vec(),
        popularity: popularity.to_vec(),
        controversy: controversy.to_vec(),
        scores,
        lambda: params.lambda,
        k_total,
        k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn popularity_examples() {
        assert_eq!(popularity(&[vec![0.5; 4]]).unwrap(), vec![0.5]);
        assert!((popularity(&[vec![0.2, 0.8]]).unwrap()[0] - 0.5).abs() < 1e-15);
        assert_eq!(popularity(&[vec![0.2, 0.8, 0.5]]).unwrap(), popularity(&[vec![0.2, 0.8]]).unwrap());
        assert!(matches!(popularity(&[vec![]]), Err(Error::Validation(_))));
    }

    #[test]
    fn controversy_examples() {
        assert_eq!(controversy(&[vec![3.0; 5]]).unwrap(), vec![0.0]);
        let c = controversy(&[vec![1.0, 5.0], vec![5.0, 1.0]]).unwrap();
        assert!((c[0] - 8f64.sqrt() / 2.0).abs() < 1e-15);
        assert_eq!(c[0], c[1]);
    }

    #[test]
    fn allocation_fixtures() {
        assert_eq!(allocate_scores(&[1.0, 1.0], 50, None).unwrap(), vec![25, 25]);
        assert_eq!(allocate_scores(&[0.25, 0.5, 0.75], 12, None).unwrap(), vec![2, 4, 6]);
        assert_eq!(allocate_scores(&[0.0, 0.1, 9.0], 3, None).unwrap(), vec![1, 1, 1]);
        assert_eq!(allocate_scores(&[0.0, 0.0], 5, None).unwrap(), vec![3, 2]);
        assert!(matches!(allocate_scores(&[1.0, 1.0, 1.0], 2, None), Err(Error::Validation(_))));
    }

    #[test]
    fn raw_mode_matches_score_fixture() {
        let params = BudgetParams { lambda: 0.0, normalize: false, cap: None };
        let plan = allocate(&[10, 11, 12], &[0.25, 0.5, 0.75], &[9.0, 0.0, 1.0], &params, 12).unwrap();
        assert_eq!(plan.k, vec![2, 4, 6]);
        assert_eq!(plan.budget_for(11), Some(4));
    }

    #[test]
    fn normalized_mode() {
        let plan = allocate(&[0, 1], &[0.3, 0.3], &[1.0, 1.0], &BudgetParams::default(), 50).unwrap();
        assert_eq!(plan.k, vec![25, 25]);
        let plan = allocate(&[0, 1, 2], &[0.1, 0.2, 0.3], &[0.0; 3], &BudgetParams::default(), 30).unwrap();
        // normalised popularity (0, 0.5, 1) plus λ·0.5
        assert_eq!(plan.scores, vec![0.5, 1.0, 1.5]);
        assert_eq!(plan.k, vec![5, 10, 15]);
    }

    #[test]
    fn cap_redistributes() {
        let k = allocate_scores(&[10.0, 1.0, 1.0], 30, Some(12)).unwrap();
        assert_eq!(k, vec![12, 9, 9]);
        assert!(allocate_scores(&[1.0, 1.0], 30, Some(12)).is_err());
    }
}
