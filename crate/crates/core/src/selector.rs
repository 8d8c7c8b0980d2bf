//! Cardinality-constrained selection: maximise `qᵀ M q` over 0/1 vectors
//! with exactly `k` ones.
//!
//! `M` folds the four criteria into one symmetric matrix: the diagonal holds
//! `α p − γ o + σ S·1`, the off-diagonal `β D − σ S`. The solver starts from
//! the `k` largest column sums and repeatedly keeps the `k` largest entries
//! of `M q` until the selection stops changing. A diagonal shift large
//! enough to make `M` positive semi-definite makes the shifted objective
//! non-decreasing; the shift adds the constant `shift · k` to every
//! feasible objective and does not change the optimum.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::criteria::CriteriaBundle;
use crate::matrix::{top_k_indices, SquareMatrix};
use crate::{Error, Result};

/// Added on top of the Gershgorin bound so the shifted matrix is strictly
/// diagonally dominant.
pub const SHIFT_EPSILON: f64 = 1e-6;

pub const DEFAULT_MAX_ITER: usize = 100;

/// Largest number of subsets [`brute_force_select`] will enumerate.
pub const BRUTE_FORCE_LIMIT: u128 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub sigma: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.3,
            gamma: 0.1,
            sigma: 0.1,
        }
    }
}

impl Weights {
    pub fn validate(&self) -> Result<()> {
        if [self.alpha, self.beta, self.gamma, self.sigma]
            .iter()
            .any(|w| !(*w >= 0.0 && w.is_finite()))
        {
            return Err(Error::validation("criteria weights must be finite and >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionProblem {
    matrix: SquareMatrix,
    k: usize,
    shift: f64,
    weights: Option<Weights>,
}

impl SelectionProblem {
    pub fn new(matrix: SquareMatrix, k: usize) -> Result<Self> {
        if k > matrix.size() {
            return Err(Error::validation(format!(
                "batch size {k} exceeds pool size {}",
                matrix.size()
            )));
        }
        if !matrix.is_symmetric(1e-9) {
            return Err(Error::contract("selection matrix must be symmetric"));
        }
        Ok(Self {
            matrix,
            k,
            shift: 0.0,
            weights: None,
        })
    }

    /// The unshifted matrix.
    pub fn matrix(&self) -> &SquareMatrix {
        &self.matrix
    }

    pub fn size(&self) -> usize {
        self.matrix.size()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn weights(&self) -> Option<Weights> {
        self.weights
    }

    pub fn with_k(mut self, k: usize) -> Result<Self> {
        if k > self.size() {
            return Err(Error::validation(format!(
                "batch size {k} exceeds pool size {}",
                self.size()
            )));
        }
        self.k = k;
        Ok(self)
    }

    /// `Σ_{i,j ∈ selected} M_shifted(i, j)`.
    fn shifted_value(&self, selected: &[usize]) -> f64 {
        self.matrix.quadratic_form_on(selected) + self.shift * selected.len() as f64
    }

    /// `M_shifted · q` for a 0/1 `q` given by its support, one row at a time.
    fn shifted_product(&self, selected: &[usize]) -> Vec<f64> {
        let mut in_q = vec![false; self.size()];
        selected.iter().for_each(|&j| in_q[j] = true);
        (0..self.size())
            .map(|i| {
                let row = self.matrix.row(i);
                let s: f64 = selected.iter().map(|&j| row[j]).sum();
                if in_q[i] {
                    s + self.shift
                } else {
                    s
                }
            })
            .collect()
    }
}

/// Folds calibrated criteria into the selection matrix (shift 0).
pub fn build_m(bundle: &CriteriaBundle, weights: Weights, k: usize) -> Result<SelectionProblem> {
    if !bundle.is_calibrated() {
        return Err(Error::contract("selection matrix needs a calibrated bundle"));
    }
    weights.validate()?;
    let n = bundle.len();
    let s_rows = bundle.s.row_sums();
    let matrix = SquareMatrix::from_fn(n, |i, j| {
        if i == j {
            weights.alpha * bundle.p[i] - weights.gamma * bundle.o[i] + weights.sigma * s_rows[i]
        } else {
            weights.beta * bundle.d.get(i, j) - weights.sigma * bundle.s.get(i, j)
        }
    });
    let mut problem = SelectionProblem::new(matrix, k)?;
    problem.weights = Some(weights);
    Ok(problem)
}

/// Selection vector as 0/1 flags.
pub fn indicator(n: usize, selected: &[usize]) -> Vec<bool> {
    let mut q = vec![false; n];
    selected.iter().for_each(|&i| q[i] = true);
    q
}

fn support(q: &[bool]) -> Vec<usize> {
    q.iter().enumerate().filter(|(_, b)| **b).map(|(i, _)| i).collect()
}

/// Unshifted objective `qᵀ M q` of a feasible selection.
pub fn objective(problem: &SelectionProblem, q: &[bool]) -> Result<f64> {
    if q.len() != problem.size() {
        return Err(Error::contract("selection vector has the wrong length"));
    }
    let selected = support(q);
    if selected.len() != problem.k {
        return Err(Error::contract(format!(
            "selection has {} ones, expected {}",
            selected.len(),
            problem.k
        )));
    }
    Ok(problem.matrix.quadratic_form_on(&selected))
}

/// Lower bound on the smallest eigenvalue from Gershgorin discs.
pub fn gershgorin_lower_bound(m: &SquareMatrix) -> f64 {
    (0..m.size())
        .map(|i| {
            let row = m.row(i);
            let off: f64 = row
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, v)| v.abs())
                .sum();
            row[i] - off
        })
        .fold(f64::INFINITY, f64::min)
}

/// Sets the diagonal shift to `max(0, −bound) + ε`.
pub fn psd_shift(problem: &SelectionProblem) -> SelectionProblem {
    let bound = if problem.size() == 0 {
        0.0
    } else {
        gershgorin_lower_bound(&problem.matrix)
    };
    let mut out = problem.clone();
    out.shift = (-bound).max(0.0) + SHIFT_EPSILON;
    out
}

/// Ones at the `k` largest column sums, ties to the lower index.
pub fn initial_solution(problem: &SelectionProblem) -> Vec<bool> {
    let n = problem.size();
    let sums: Vec<f64> = problem
        .matrix
        .row_sums()
        .into_iter()
        .map(|s| s + problem.shift)
        .collect();
    indicator(n, &top_k_indices(&sums, problem.k))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionResult {
    pub q: Vec<bool>,
    /// Pool positions of the selected users, ascending.
    pub selected: Vec<usize>,
    /// Unshifted `qᵀ M q`.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Shifted objective of the initial solution and every later iterate.
    pub trace: Vec<f64>,
}

impl SelectionResult {
    /// Whether the shifted objective never decreased (up to rounding).
    pub fn is_monotone(&self) -> bool {
        self.trace.windows(2).all(|w| {
            let tol = 1e-9 * (1.0 + w[0].abs());
            w[1] >= w[0] - tol
        })
    }

    /// Writes `iter,objective_shifted` lines.
    pub fn write_trace(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "iter,objective_shifted")?;
        for (t, v) in self.trace.iter().enumerate() {
            writeln!(out, "{t},{v}")?;
        }
        Ok(())
    }
}

/// Iterative top-`k` ascent from [`initial_solution`].
///
/// Stops when two consecutive iterates agree (converged), when an iterate
/// repeats the one two steps back (period-2 cycle, not converged) or after
/// `max_iter` steps (not converged). The last iterate is returned.
pub fn solve(problem: &SelectionProblem, max_iter: usize) -> Result<SelectionResult> {
    if problem.k == 0 {
        return Err(Error::validation("batch size must be at least 1"));
    }
    let mut current = support(&initial_solution(problem));
    let mut previous: Option<Vec<usize>> = None;
    let mut trace = vec![problem.shifted_value(&current)];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < max_iter {
        iterations += 1;
        let scores = problem.shifted_product(&current);
        let next = top_k_indices(&scores, problem.k);
        trace.push(problem.shifted_value(&next));
        if next == current {
            converged = true;
            break;
        }
        let cycled = previous.as_ref() == Some(&next);
        previous = Some(std::mem::replace(&mut current, next));
        if cycled {
            break;
        }
    }

    let objective = problem.matrix.quadratic_form_on(&current);
    Ok(SelectionResult {
        q: indicator(problem.size(), &current),
        selected: current,
        objective,
        iterations,
        converged,
        trace,
    })
}

pub fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k.min(n));
    let mut acc: u128 = 1;
    for i in 0..k as u128 {
        acc = acc * (n as u128 - i) / (i + 1);
    }
    acc
}

/// Exhaustive maximiser of the unshifted objective; ties resolve to the
/// first subset in lexicographic index order.
pub fn brute_force_select(problem: &SelectionProblem) -> Result<SelectionResult> {
    let (n, k) = (problem.size(), problem.k);
    let combinations = binomial(n, k);
    if combinations > BRUTE_FORCE_LIMIT {
        return Err(Error::TooManyCombinations {
            combinations,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    let mut subset: Vec<usize> = (0..k).collect();
    let mut best = subset.clone();
    let mut best_value = problem.matrix.quadratic_form_on(&subset);
    loop {
        // advance to the next k-combination in lexicographic order
        let mut pos = k;
        while pos > 0 && subset[pos - 1] == n - k + pos - 1 {
            pos -= 1;
        }
        if pos == 0 {
            break;
        }
        subset[pos - 1] += 1;
        for j in pos..k {
            subset[j] = subset[j - 1] + 1;
        }
        let value = problem.matrix.quadratic_form_on(&subset);
        if value > best_value {
            best_value = value;
            best.clone_from(&subset);
        }
    }
    Ok(SelectionResult {
        q: indicator(n, &best),
        selected: best,
        objective: best_value,
        iterations: 0,
        converged: true,
        trace: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::criteria::calibrate;

    fn problem(rows: &[Vec<f64>], k: usize) -> SelectionProblem {
        SelectionProblem::new(SquareMatrix::from_rows(rows), k).unwrap()
    }

    fn calibrated_pair(s: f64) -> CriteriaBundle {
        let mut sm = SquareMatrix::zeros(2);
        sm.set(0, 1, s);
        sm.set(1, 0, s);
        let mut b = calibrate(
            &CriteriaBundle::new(
                vec![0, 1],
                vec![0.0, 1.0],
                vec![0.0, 0.0],
                SquareMatrix::zeros(2),
                vec![0.0, 1.0],
                SquareMatrix::zeros(2),
            )
            .unwrap(),
            None,
        )
        .unwrap();
        b.s = sm;
        b
    }

    #[test]
    fn weight_isolation() {
        let b = calibrated_pair(0.4);
        let only_alpha = build_m(&b, Weights { alpha: 1.0, beta: 0.0, gamma: 0.0, sigma: 0.0 }, 1).unwrap();
        assert_eq!(only_alpha.matrix(), &SquareMatrix::diagonal(&b.p));

        let only_sigma = build_m(&b, Weights { alpha: 0.0, beta: 0.0, gamma: 0.0, sigma: 1.0 }, 1).unwrap();
        assert_eq!(only_sigma.matrix(), &SquareMatrix::from_rows(&[vec![0.4, -0.4], vec![-0.4, 0.4]]));

        let mut d = SquareMatrix::zeros(2);
        d.set(0, 1, 0.7);
        d.set(1, 0, 0.7);
        let mut b2 = b.clone();
        b2.d = d.clone();
        let only_beta = build_m(&b2, Weights { alpha: 0.0, beta: 1.0, gamma: 0.0, sigma: 0.0 }, 1).unwrap();
        assert_eq!(only_beta.matrix(), &d);
    }

    #[test]
    fn build_rejects_raw_bundle() {
        let raw = CriteriaBundle::new(
            vec![0, 1],
            vec![0.0; 2],
            vec![0.0; 2],
            SquareMatrix::zeros(2),
            vec![0.0; 2],
            SquareMatrix::zeros(2),
        )
        .unwrap();
        assert!(matches!(build_m(&raw, Weights::default(), 1), Err(Error::Contract(_))));
    }

    #[test]
    fn objective_examples() {
        let p = problem(&[vec![1.0, 2.0], vec![2.0, 3.0]], 0);
        assert_eq!(objective(&p, &[false, false]).unwrap(), 0.0);
        let id = SelectionProblem::new(SquareMatrix::identity(5), 3).unwrap();
        assert_eq!(objective(&id, &[true, false, true, true, false]).unwrap(), 3.0);
        assert!(matches!(objective(&id, &[true; 5]), Err(Error::Contract(_))));

        let rows = vec![
            vec![0.3, -1.2, 0.5, 2.0],
            vec![-1.2, 0.8, 0.1, -0.4],
            vec![0.5, 0.1, -0.6, 0.9],
            vec![2.0, -0.4, 0.9, 1.1],
        ];
        let m = problem(&rows, 2);
        let expected = 0.3 + -1.2 + -1.2 + 0.8;
        assert!((objective(&m, &[true, true, false, false]).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn shift_examples() {
        let dominant = problem(&[vec![3.0, 1.0], vec![1.0, 2.0]], 1);
        assert_eq!(psd_shift(&dominant).shift(), SHIFT_EPSILON);
        let indefinite = problem(&[vec![0.0, -2.0], vec![-2.0, 0.0]], 1);
        assert!((psd_shift(&indefinite).shift() - (2.0 + SHIFT_EPSILON)).abs() < 1e-15);
    }

    #[test]
    fn initial_solution_examples() {
        // column sums (3, 1, 2)
        let p = problem(&[vec![1.0, 1.0, 1.0], vec![1.0, 0.0, 0.0], vec![1.0, 0.0, 1.0]], 2);
        assert_eq!(initial_solution(&p), vec![true, false, true]);
        let flat = problem(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]], 2);
        assert_eq!(initial_solution(&flat), vec![true, true, false]);
        let all = flat.clone().with_k(3).unwrap();
        assert_eq!(initial_solution(&all), vec![true; 3]);
    }

    #[test]
    fn solve_diagonal_case() {
        let p = SelectionProblem::new(SquareMatrix::diagonal(&[5.0, 4.0, 3.0, 2.0]), 2).unwrap();
        let r = solve(&p, DEFAULT_MAX_ITER).unwrap();
        assert_eq!(r.q, vec![true, true, false, false]);
        assert_eq!(r.objective, 9.0);
        assert!(r.converged && r.iterations <= 2);

        let full = p.clone().with_k(4).unwrap();
        let r = solve(&full, DEFAULT_MAX_ITER).unwrap();
        assert_eq!(r.q, vec![true; 4]);
        assert_eq!(r.objective, 14.0);
        assert!(r.converged);
        assert!(matches!(solve(&p.with_k(0).unwrap(), 5), Err(Error::Validation(_))));
    }

    #[test]
    fn period_two_cycle_is_reported() {
        // unshifted anti-diagonal matrix alternates between {0} and {1}
        let p = problem(&[vec![0.0, 1.0], vec![1.0, 0.0]], 1);
        let r = solve(&p, DEFAULT_MAX_ITER).unwrap();
        assert!(!r.converged);
        assert!(r.iterations <= 3);
    }

    #[test]
    fn brute_force_examples() {
        let diag = SelectionProblem::new(SquareMatrix::diagonal(&[0.1, 0.9, 0.5, 0.7]), 2).unwrap();
        assert_eq!(brute_force_select(&diag).unwrap().selected, vec![1, 3]);

        let p = problem(&[vec![1.0, 9.0], vec![9.0, 2.0]], 1);
        let r = brute_force_select(&p).unwrap();
        assert_eq!(r.selected, vec![1]);
        assert_eq!(r.objective, 2.0);

        let big = SelectionProblem::new(SquareMatrix::zeros(40), 20).unwrap();
        assert!(matches!(brute_force_select(&big), Err(Error::TooManyCombinations { .. })));
    }

    #[test]
    fn trace_format() {
        let p = SelectionProblem::new(SquareMatrix::diagonal(&[2.0, 1.0]), 1).unwrap();
        let r = solve(&p, 10).unwrap();
        let mut buf = Vec::new();
        r.write_trace(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "iter,objective_shifted\n0,2\n1,2\n");
    }

    #[test]
    fn binomial_values() {
        assert_eq!(binomial(12, 4), 495);
        assert_eq!(binomial(5, 0), 1);
        assert_eq!(binomial(5, 5), 1);
        assert_eq!(binomial(40, 20), 137_846_528_820);
    }
}
