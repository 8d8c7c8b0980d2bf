//! The four user-selection signals for one new item and their calibration.
//!
//! * `p`: probability that each pool user rates the item (classifier output).
//! * `D`: pairwise diversity of attribute-only potential ratings,
//!   `|P_r(m) − P_r(n)|^½`.
//! * `o`: objectivity, the log-damped mean squared deviation of a user's
//!   historical ratings from the item means (smaller is better).
//! * `S`: cosine similarity of users' historical rating rows.

use std::ops::Range;

use serde::Serialize;

use crate::data::{encode, RatingStore};
use crate::fm::{FmModel, Task};
use crate::matrix::{format_g, mean_std, SquareMatrix};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriteriaBundle {
    /// Global user indices of the selection pool, in pool order.
    pub users: Vec<usize>,
    pub p: Vec<f64>,
    pub potential: Vec<f64>,
    pub d: SquareMatrix,
    pub o: Vec<f64>,
    pub s: SquareMatrix,
    calibrated: bool,
}

impl CriteriaBundle {
    pub fn new(
        users: Vec<usize>,
        p: Vec<f64>,
        potential: Vec<f64>,
        d: SquareMatrix,
        o: Vec<f64>,
        s: SquareMatrix,
    ) -> Result<Self> {
        let n = users.len();
        if p.len() != n || potential.len() != n || o.len() != n || d.size() != n || s.size() != n {
            return Err(Error::contract("criteria structures disagree on pool size"));
        }
        Ok(Self {
            users,
            p,
            potential,
            d,
            o,
            s,
            calibrated: false,
        })
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    pub fn is_calibrated(&self) -> bool {
        self.calibrated
    }

    /// Writes each structure to `<dir>/<name>.txt`, one matrix row per line,
    /// `%.12g` entries.
    pub fn dump(&self, dir: &std::path::Path) -> Result<()> {
        let write = |name: &str, rows: Vec<Vec<f64>>| {
            let path = dir.join(format!("{name}.txt"));
            let text: String = rows
                .iter()
                .map(|r| {
                    let cells: Vec<String> = r.iter().map(|v| format_g(*v, 12)).collect();
                    cells.join(" ") + "\n"
                })
                .collect();
            std::fs::write(&path, text).map_err(|e| Error::io(path, e))
        };
        let column = |v: &[f64]| v.iter().map(|&x| vec![x]).collect();
        let rows = |m: &SquareMatrix| (0..m.size()).map(|i| m.row(i).to_vec()).collect();
        write("p", column(&self.p))?;
        write("potential", column(&self.potential))?;
        write("o", column(&self.o))?;
        write("d", rows(&self.d))?;
        write("s", rows(&self.s))
    }
}

fn check_model(model: &FmModel, task: Task) -> Result<()> {
    if model.task() != task {
        return Err(Error::contract(format!("expected a {task:?} model")));
    }
    if model.layout().items.is_some() {
        return Err(Error::contract("expected a user + attribute layout without an item block"));
    }
    Ok(())
}

fn score_users(model: &FmModel, users: &[usize], attrs: &[usize]) -> Result<Vec<f64>> {
    users
        .iter()
        .map(|&u| model.predict(&encode(model.layout(), u, None, attrs)?))
        .collect()
}

/// Probability each user rates an item with `attrs`.
pub fn willingness(classifier: &FmModel, users: &[usize], attrs: &[usize]) -> Result<Vec<f64>> {
    check_model(classifier, Task::Classification)?;
    score_users(classifier, users, attrs)
}

/// Attribute-only rating estimates for each user.
pub fn potential_ratings(regressor: &FmModel, users: &[usize], attrs: &[usize]) -> Result<Vec<f64>> {
    check_model(regressor, Task::Regression)?;
    score_users(regressor, users, attrs)
}

/// Rows `rows` of the diversity matrix, concatenated.
pub fn diversity_rows(potential: &[f64], rows: Range<usize>) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows.len() * potential.len());
    for m in rows {
        for (n, &pn) in potential.iter().enumerate() {
            out.push(if m == n { 0.0 } else { (potential[m] - pn).abs().sqrt() });
        }
    }
    out
}

pub fn diversity_matrix(potential: &[f64]) -> SquareMatrix {
    let n = potential.len();
    let mut d = SquareMatrix::zeros(n);
    d.values_mut().copy_from_slice(&diversity_rows(potential, 0..n));
    d
}

fn train_mask(store: &RatingStore, train_items: &[usize]) -> Vec<bool> {
    let mut mask = vec![false; store.num_items()];
    for &i in train_items {
        mask[i] = true;
    }
    mask
}

/// Objectivity of each user over their ratings on `train_items`.
///
/// Users without training ratings get the largest value computed for any
/// other user (0 if nobody has history).
pub fn objectivity(store: &RatingStore, train_items: &[usize], users: &[usize]) -> Vec<f64> {
    let mask = train_mask(store, train_items);
    let item_mean: Vec<f64> = (0..store.num_items())
        .map(|i| {
            let r = store.item_ratings(i);
            if !mask[i] || r.is_empty() {
                0.0
            } else {
                r.iter().map(|x| x.1).sum::<f64>() / r.len() as f64
            }
        })
        .collect();

    let raw: Vec<Option<f64>> = users
        .iter()
        .map(|&u| {
            let rated: Vec<(usize, f64)> = store
                .user_ratings(u)
                .iter()
                .copied()
                .filter(|&(i, _)| mask[i])
                .collect();
            if rated.is_empty() {
                return None;
            }
            let count = rated.len() as f64;
            let sq: f64 = rated.iter().map(|&(i, r)| (r - item_mean[i]).powi(2)).sum();
            Some(sq / count / (count.ln() + 1.0))
        })
        .collect();
    let worst = raw.iter().flatten().copied().fold(0.0, f64::max);
    raw.into_iter().map(|o| o.unwrap_or(worst)).collect()
}

/// Sparse rating rows of `users`, restricted to train items, with norms.
pub struct UserProfiles {
    rows: Vec<Vec<(usize, f64)>>,
    norms: Vec<f64>,
}

impl UserProfiles {
    pub fn new(store: &RatingStore, train_items: &[usize], users: &[usize]) -> Self {
        let mask = train_mask(store, train_items);
        let rows: Vec<Vec<(usize, f64)>> = users
            .iter()
            .map(|&u| {
                store
                    .user_ratings(u)
                    .iter()
                    .copied()
                    .filter(|&(i, _)| mask[i])
                    .collect()
            })
            .collect();
        let norms = rows
            .iter()
            .map(|r| r.iter().map(|x| x.1 * x.1).sum::<f64>().sqrt())
            .collect();
        Self { rows, norms }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn cosine(&self, a: usize, b: usize) -> f64 {
        if self.norms[a] == 0.0 || self.norms[b] == 0.0 {
            return 0.0;
        }
        let (ra, rb) = (&self.rows[a], &self.rows[b]);
        let (mut i, mut j, mut dot) = (0, 0, 0.0);
        while i < ra.len() && j < rb.len() {
            match ra[i].0.cmp(&rb[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    dot += ra[i].1 * rb[j].1;
                    i += 1;
                    j += 1;
                }
            }
        }
        dot / (self.norms[a] * self.norms[b])
    }

    /// Rows `rows` of the similarity matrix, concatenated.
    pub fn similarity_rows(&self, rows: Range<usize>) -> Vec<f64> {
        let n = self.len();
        let mut out = Vec::with_capacity(rows.len() * n);
        for m in rows {
            for k in 0..n {
                out.push(if m == k { 0.0 } else { self.cosine(m, k) });
            }
        }
        out
    }
}

pub fn similarity_matrix(store: &RatingStore, train_items: &[usize], users: &[usize]) -> SquareMatrix {
    let profiles = UserProfiles::new(store, train_items, users);
    let n = profiles.len();
    let mut s = SquareMatrix::zeros(n);
    s.values_mut().copy_from_slice(&profiles.similarity_rows(0..n));
    s
}

fn standardize(values: &mut [f64]) {
    let (mean, std) = mean_std(values);
    // constant up to rounding
    if std <= 1e-12 * mean.abs().max(1.0) || !std.is_finite() {
        values.iter_mut().for_each(|v| *v = 0.0);
    } else {
        values.iter_mut().for_each(|v| *v = (*v - mean) / std);
    }
}

fn standardize_matrix(m: &mut SquareMatrix, divisor: f64) {
    standardize(m.values_mut());
    let n = m.size();
    m.values_mut().iter_mut().for_each(|v| *v /= divisor);
    for i in 0..n {
        m.set(i, i, 0.0);
    }
}

/// Standardizes `p` and `o`; standardizes `D` and `S` over all their entries,
/// divides them by `divisor` (the pool size when `None`) and re-zeroes their
/// diagonals.
pub fn calibrate(bundle: &CriteriaBundle, divisor: Option<f64>) -> Result<CriteriaBundle> {
    if bundle.calibrated {
        return Err(Error::contract("bundle is already calibrated"));
    }
    let n = bundle.len();
    if n < 2 {
        return Err(Error::validation("calibration needs at least 2 users"));
    }
    let divisor = divisor.unwrap_or(n as f64);
    if !(divisor > 0.0 && divisor.is_finite()) {
        return Err(Error::validation("calibration divisor must be positive"));
    }
    let mut out = bundle.clone();
    standardize(&mut out.p);
    standardize(&mut out.o);
    standardize_matrix(&mut out.d, divisor);
    standardize_matrix(&mut out.s, divisor);
    out.calibrated = true;
    Ok(out)
}
