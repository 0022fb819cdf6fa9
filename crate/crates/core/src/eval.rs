//! Gaussian-kernel (Nadaraya–Watson) regression R² and the prediction
//! predicates built on top of it.
//!
//! Predictor columns are standardised on the training split before distances
//! are taken, so scores do not depend on the scale of learned latents.
//! Automatic bandwidth selection runs leave-one-out cross-validation over a
//! geometric grid anchored at the median pairwise distance.

use std::fmt::Write as _;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par::Execution;
use crate::stats::{mean_std, ColumnScaler};

pub const DEFAULT_TAU: f64 = 0.6;
pub const DEFAULT_EPS: f64 = 0.1;
pub const MIN_SAMPLES: usize = 50;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("kernel regression needs at least {min} samples, got {n}")]
    TooFewSamples { n: usize, min: usize },
    #[error("predictor has {predictor} rows but target has {target}")]
    RowMismatch { predictor: usize, target: usize },
    #[error("{0} has no columns")]
    Empty(&'static str),
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),
    #[error("target column {column} has zero variance on the evaluation split")]
    DegenerateTarget { column: usize },
    #[error("bandwidth must be positive and finite, got {0}")]
    BadBandwidth(f64),
    #[error("prediction matrix needs at least two variables")]
    TooFewVariables,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    /// Leave-one-out cross-validated over multiples of the median heuristic.
    Auto,
    /// Fixed kernel width in standardised predictor units.
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct R2Options {
    pub bandwidth: Bandwidth,
    /// Maximum number of rows used (split evenly into fit and evaluation).
    pub budget: usize,
    /// Seed of the row permutation that defines the split.
    pub seed: u64,
    /// Number of training rows used as leave-one-out queries.
    pub cv_queries: usize,
    /// Multipliers of the median distance tried by the bandwidth search.
    pub grid: Vec<f64>,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for R2Options {
    fn default() -> Self {
        R2Options {
            bandwidth: Bandwidth::Auto,
            budget: 8192,
            seed: 0,
            cv_queries: 512,
            grid: (-7..=1).map(|k| 2f64.powi(k)).collect(),
            execution: Execution::Auto,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct R2Score {
    pub value: f64,
    pub n_train: usize,
    pub n_eval: usize,
    pub bandwidth: f64,
}

/// Deterministic fit/evaluation row split: a seeded permutation truncated to
/// `budget` rows, the first half fitting and the rest evaluating.
pub fn split_indices(n: usize, budget: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(budget.min(n));
    let eval = idx.split_off(idx.len() / 2);
    (idx, eval)
}

/// Row-major dense copy used by the kernel loops.
struct Rows {
    data: Vec<f64>,
    width: usize,
}

impl Rows {
    fn gather(x: &Array2<f64>, rows: &[usize]) -> Self {
        let width = x.ncols();
        let mut data = Vec::with_capacity(rows.len() * width);
        for &r in rows {
            data.extend(x.row(r).iter());
        }
        Rows { data, width }
    }

    fn from_array(x: ArrayView2<f64>) -> Self {
        Rows {
            data: x.iter().copied().collect(),
            width: x.ncols(),
        }
    }

    fn len(&self) -> usize {
        self.data.len().checked_div(self.width).unwrap_or(0)
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.width..(i + 1) * self.width]
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Squared distances from `query` to every training row, with `skip`
/// (leave-one-out) set to infinity. Returns the distances and their minimum.
fn distances(train: &Rows, query: &[f64], skip: Option<usize>, out: &mut Vec<f64>) -> f64 {
    out.clear();
    let mut min = f64::INFINITY;
    for j in 0..train.len() {
        let d = if Some(j) == skip {
            f64::INFINITY
        } else {
            sq_dist(train.row(j), query)
        };
        min = min.min(d);
        out.push(d);
    }
    min
}

/// Kernel-weighted average of training targets given squared distances.
/// Weights are shifted by the nearest distance so at least one weight is 1.
fn weighted_mean(d2: &[f64], min: f64, h: f64, targets: &Rows, out: &mut [f64]) {
    let inv = 1.0 / (2.0 * h * h);
    out.iter_mut().for_each(|v| *v = 0.0);
    let mut total = 0.0;
    for (j, &d) in d2.iter().enumerate() {
        if !d.is_finite() {
            continue;
        }
        let w = (-(d - min) * inv).exp();
        if w == 0.0 {
            continue;
        }
        total += w;
        for (o, &t) in out.iter_mut().zip(targets.row(j)) {
            *o += w * t;
        }
    }
    out.iter_mut().for_each(|v| *v /= total);
}

/// Nadaraya–Watson predictions at `query` rows from a training set, with
/// isotropic Gaussian kernel of width `h` in the given coordinates.
pub fn nw_predict(
    train_x: ArrayView2<f64>,
    train_y: ArrayView2<f64>,
    query: ArrayView2<f64>,
    h: f64,
    execution: Execution,
) -> Array2<f64> {
    let tx = Rows::from_array(train_x);
    let ty = Rows::from_array(train_y);
    let qx = Rows::from_array(query);
    predict_rows(&tx, &ty, &qx, h, execution)
}

fn predict_rows(tx: &Rows, ty: &Rows, qx: &Rows, h: f64, execution: Execution) -> Array2<f64> {
    let q = ty.width;
    let rows = execution.map(qx.len(), |i| {
        let mut d2 = Vec::with_capacity(tx.len());
        let min = distances(tx, qx.row(i), None, &mut d2);
        let mut out = vec![0.0; q];
        weighted_mean(&d2, min, h, ty, &mut out);
        out
    });
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Array2::from_shape_vec((qx.len(), q), flat).expect("prediction shape")
}

fn median_distance(train: &Rows) -> f64 {
    let m = train.len().min(512);
    let mut d: Vec<f64> = Vec::with_capacity(m * (m - 1) / 2);
    for i in 0..m {
        for j in (i + 1)..m {
            d.push(sq_dist(train.row(i), train.row(j)).sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let med = d[d.len() / 2];
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

/// Picks the grid bandwidth with the smallest leave-one-out error, each
/// target column weighted by its inverse variance.
fn select_bandwidth(tx: &Rows, ty: &Rows, opts: &R2Options) -> f64 {
    let med = median_distance(tx);
    let grid: Vec<f64> = opts.grid.iter().map(|g| g * med).collect();
    if grid.len() == 1 {
        return grid[0];
    }
    let n = tx.len();
    let q = ty.width;
    let queries = opts.cv_queries.min(n);
    let mut col_var = vec![0.0; q];
    {
        let mut mean = vec![0.0; q];
        for i in 0..n {
            for (m, &v) in mean.iter_mut().zip(ty.row(i)) {
                *m += v / n as f64;
            }
        }
        for i in 0..n {
            for ((cv, &m), &v) in col_var.iter_mut().zip(&mean).zip(ty.row(i)) {
                *cv += (v - m) * (v - m) / n as f64;
            }
        }
    }
    let weights: Vec<f64> = col_var
        .iter()
        .map(|v| if *v > 0.0 { 1.0 / v } else { 0.0 })
        .collect();
    let per_query = opts.execution.map(queries, |i| {
        let mut d2 = Vec::with_capacity(n);
        let min = distances(tx, tx.row(i), Some(i), &mut d2);
        let mut pred = vec![0.0; q];
        grid.iter()
            .map(|&h| {
                weighted_mean(&d2, min, h, ty, &mut pred);
                pred.iter()
                    .zip(ty.row(i))
                    .zip(&weights)
                    .map(|((p, t), w)| w * (p - t) * (p - t))
                    .sum::<f64>()
            })
            .collect::<Vec<f64>>()
    });
    let mut best = (f64::INFINITY, grid[grid.len() - 1]);
    // Scan from wide to narrow so ties keep the smoother fit.
    for (k, &h) in grid.iter().enumerate().rev() {
        let err: f64 = per_query.iter().map(|e| e[k]).sum();
        if err < best.0 {
            best = (err, h);
        }
    }
    best.1
}

fn check_inputs(x: &ArrayView2<f64>, y: &ArrayView2<f64>) -> Result<(), EvalError> {
    if x.nrows() != y.nrows() {
        return Err(EvalError::RowMismatch {
            predictor: x.nrows(),
            target: y.nrows(),
        });
    }
    if x.nrows() < MIN_SAMPLES {
        return Err(EvalError::TooFewSamples {
            n: x.nrows(),
            min: MIN_SAMPLES,
        });
    }
    if x.ncols() == 0 {
        return Err(EvalError::Empty("predictor"));
    }
    if y.ncols() == 0 {
        return Err(EvalError::Empty("target"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(EvalError::NonFinite("predictor"));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(EvalError::NonFinite("target"));
    }
    Ok(())
}

/// Detailed result of [`kernel_r2_detailed`]: the score together with the
/// evaluation rows and their fitted values.
#[derive(Debug, Clone)]
pub struct KernelFit {
    pub score: R2Score,
    pub train_rows: Vec<usize>,
    pub eval_rows: Vec<usize>,
    pub fitted: Array2<f64>,
}

/// Held-out R² of predicting `y` from `x` by Nadaraya–Watson regression.
pub fn kernel_r2(
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    opts: &R2Options,
) -> Result<R2Score, EvalError> {
    kernel_r2_detailed(x, y, opts).map(|f| f.score)
}

pub fn kernel_r2_detailed(
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    opts: &R2Options,
) -> Result<KernelFit, EvalError> {
    check_inputs(&x, &y)?;
    if let Bandwidth::Fixed(h) = opts.bandwidth {
        if !(h > 0.0 && h.is_finite()) {
            return Err(EvalError::BadBandwidth(h));
        }
    }
    let (train_rows, eval_rows) = split_indices(x.nrows(), opts.budget.max(MIN_SAMPLES), opts.seed);
    let x_train = x.select(ndarray::Axis(0), &train_rows);
    let scaler = ColumnScaler::fit(x_train.view());
    let xs = scaler.transform(x);
    let y_owned = y.to_owned();
    let tx = Rows::gather(&xs, &train_rows);
    let ty = Rows::gather(&y_owned, &train_rows);
    let ex = Rows::gather(&xs, &eval_rows);
    let ey = Rows::gather(&y_owned, &eval_rows);

    let h = match opts.bandwidth {
        Bandwidth::Fixed(h) => h,
        Bandwidth::Auto => select_bandwidth(&tx, &ty, opts),
    };
    let fitted = predict_rows(&tx, &ty, &ex, h, opts.execution);
    let value = r2_columns(&ey, &fitted)?;
    Ok(KernelFit {
        score: R2Score {
            value,
            n_train: train_rows.len(),
            n_eval: eval_rows.len(),
            bandwidth: h,
        },
        train_rows,
        eval_rows,
        fitted,
    })
}

fn r2_columns(truth: &Rows, fitted: &Array2<f64>) -> Result<f64, EvalError> {
    let n = truth.len() as f64;
    let mut total = 0.0;
    for c in 0..truth.width {
        let col: Vec<f64> = (0..truth.len()).map(|i| truth.row(i)[c]).collect();
        let mean = col.iter().sum::<f64>() / n;
        let sst: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum();
        if sst <= 1e-12 * n * (1.0 + mean * mean) {
            return Err(EvalError::DegenerateTarget { column: c });
        }
        let sse: f64 = col
            .iter()
            .zip(fitted.column(c))
            .map(|(t, f)| (t - f) * (t - f))
            .sum();
        total += 1.0 - sse / sst;
    }
    Ok(total / truth.width as f64)
}

/// Closed threshold: a score of exactly `tau` counts as a perfect prediction.
pub fn predicts_perfectly(score: &R2Score, tau: f64) -> bool {
    score.value >= tau
}

/// Both directions predict each other at or above `tau`.
pub fn are_equivalent(
    a: ArrayView2<f64>,
    b: ArrayView2<f64>,
    tau: f64,
    opts: &R2Options,
) -> Result<bool, EvalError> {
    let ab = kernel_r2(a, b, opts)?;
    if !predicts_perfectly(&ab, tau) {
        return Ok(false);
    }
    let ba = kernel_r2(b, a, opts)?;
    Ok(predicts_perfectly(&ba, tau))
}

/// Both directional scores between `a` and the concatenated `rest` are at
/// most `eps`. An empty `rest` is trivially independent.
pub fn independence_score(
    a: ArrayView2<f64>,
    rest: ArrayView2<f64>,
    opts: &R2Options,
) -> Result<f64, EvalError> {
    if rest.ncols() == 0 {
        return Ok(f64::NEG_INFINITY);
    }
    let forward = kernel_r2(a, rest, opts)?.value;
    let backward = kernel_r2(rest, a, opts)?.value;
    Ok(forward.max(backward))
}

pub fn is_independent(
    a: ArrayView2<f64>,
    rest: ArrayView2<f64>,
    eps: f64,
    opts: &R2Options,
) -> Result<bool, EvalError> {
    Ok(independence_score(a, rest, opts)? <= eps)
}

/// Pairwise directional scores; `scores[i][j]` predicts `j` from `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionMatrix {
    pub labels: Vec<String>,
    pub scores: Vec<Vec<Option<R2Score>>>,
    /// Cells whose regression failed, with the error message.
    pub failures: Vec<(usize, usize, String)>,
}

impl PredictionMatrix {
    pub fn value(&self, from: usize, to: usize) -> Option<f64> {
        self.scores[from][to].map(|s| s.value)
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// CSV in the layout of a pairwise table; the diagonal is marked `×`.
    pub fn to_csv(&self) -> String {
        summarize_matrices(std::slice::from_ref(self)).to_csv()
    }
}

pub fn pairwise_matrix(
    variables: &[(String, ArrayView2<f64>)],
    opts: &R2Options,
) -> Result<PredictionMatrix, EvalError> {
    let k = variables.len();
    if k < 2 {
        return Err(EvalError::TooFewVariables);
    }
    let n = variables[0].1.nrows();
    if let Some((_, v)) = variables.iter().find(|(_, v)| v.nrows() != n) {
        return Err(EvalError::RowMismatch {
            predictor: n,
            target: v.nrows(),
        });
    }
    let cells = opts.execution.map(k * k, |c| {
        let (i, j) = (c / k, c % k);
        if i == j {
            None
        } else {
            Some(kernel_r2(variables[i].1, variables[j].1, opts))
        }
    });
    let mut scores = vec![vec![None; k]; k];
    let mut failures = Vec::new();
    for (c, cell) in cells.into_iter().enumerate() {
        let (i, j) = (c / k, c % k);
        match cell {
            Some(Ok(s)) => scores[i][j] = Some(s),
            Some(Err(e)) => failures.push((i, j, e.to_string())),
            None => {}
        }
    }
    Ok(PredictionMatrix {
        labels: variables.iter().map(|(l, _)| l.clone()).collect(),
        scores,
        failures,
    })
}

/// Cell-wise mean and population std over matrices sharing labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixSummary {
    pub labels: Vec<String>,
    pub mean: Vec<Vec<Option<f64>>>,
    pub std: Vec<Vec<Option<f64>>>,
}

pub fn summarize_matrices(matrices: &[PredictionMatrix]) -> MatrixSummary {
    let labels = matrices.first().map(|m| m.labels.clone()).unwrap_or_default();
    let k = labels.len();
    let mut mean = vec![vec![None; k]; k];
    let mut std = vec![vec![None; k]; k];
    for i in 0..k {
        for j in 0..k {
            let vals: Vec<f64> = matrices.iter().filter_map(|m| m.value(i, j)).collect();
            if !vals.is_empty() {
                let (m, s) = mean_std(&vals);
                mean[i][j] = Some(m);
                std[i][j] = Some(s);
            }
        }
    }
    MatrixSummary { labels, mean, std }
}

impl MatrixSummary {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("predictor");
        for l in &self.labels {
            let _ = write!(out, ",{l}");
        }
        out.push('\n');
        for (i, l) in self.labels.iter().enumerate() {
            out.push_str(l);
            for j in 0..self.labels.len() {
                out.push(',');
                if i == j {
                    out.push('×');
                } else if let (Some(m), Some(s)) = (self.mean[i][j], self.std[i][j]) {
                    let _ = write!(out, "{m:.2}±{s:.3}");
                } else {
                    out.push_str("NA");
                }
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, p: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, p), |_| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let (a, b) = split_indices(100, 8192, 3);
        let (c, d) = split_indices(100, 8192, 3);
        assert_eq!((a.clone(), b.clone()), (c, d));
        assert_eq!(a.len(), 50);
        assert_eq!(b.len(), 50);
        let mut all: Vec<usize> = a.into_iter().chain(b).collect();
        all.sort();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        let (t, e) = split_indices(10_000, 8192, 0);
        assert_eq!(t.len() + e.len(), 8192);
    }

    #[test]
    fn identity_target_scores_near_one() {
        let x = gaussian(2000, 1, 1);
        let s = kernel_r2(x.view(), x.view(), &R2Options::default()).unwrap();
        assert!(s.value >= 0.999, "{s:?}");
    }

    #[test]
    fn cube_is_equivalent() {
        let a = gaussian(4000, 1, 2);
        let b = a.mapv(|v| v * v * v);
        assert!(are_equivalent(a.view(), b.view(), 0.6, &R2Options::default()).unwrap());
    }

    #[test]
    fn independent_are_not_equivalent() {
        let a = gaussian(2000, 2, 3);
        let b = gaussian(2000, 2, 4);
        let opts = R2Options::default();
        assert!(!are_equivalent(a.view(), b.view(), 0.6, &opts).unwrap());
        assert!(is_independent(a.view(), b.view(), 0.1, &opts).unwrap());
    }

    #[test]
    fn degenerate_target_is_an_error() {
        let x = gaussian(100, 1, 5);
        let y = Array2::from_elem((100, 1), 2.0);
        assert_eq!(
            kernel_r2(x.view(), y.view(), &R2Options::default()).unwrap_err(),
            EvalError::DegenerateTarget { column: 0 }
        );
    }

    #[test]
    fn input_validation() {
        let opts = R2Options::default();
        let x = gaussian(40, 1, 0);
        assert!(matches!(
            kernel_r2(x.view(), x.view(), &opts),
            Err(EvalError::TooFewSamples { .. })
        ));
        let x = gaussian(60, 1, 0);
        let y = gaussian(61, 1, 0);
        assert!(matches!(
            kernel_r2(x.view(), y.view(), &opts),
            Err(EvalError::RowMismatch { .. })
        ));
        let mut z = gaussian(60, 1, 0);
        z[[3, 0]] = f64::NAN;
        assert_eq!(
            kernel_r2(z.view(), x.view(), &opts).unwrap_err(),
            EvalError::NonFinite("predictor")
        );
        let bad = R2Options {
            bandwidth: Bandwidth::Fixed(0.0),
            ..R2Options::default()
        };
        assert!(matches!(
            kernel_r2(x.view(), x.view(), &bad),
            Err(EvalError::BadBandwidth(_))
        ));
    }

    #[test]
    fn threshold_is_closed() {
        let s = |v| R2Score {
            value: v,
            n_train: 1,
            n_eval: 1,
            bandwidth: 1.0,
        };
        assert!(predicts_perfectly(&s(0.85), 0.6));
        assert!(!predicts_perfectly(&s(0.55), 0.6));
        assert!(predicts_perfectly(&s(0.6), 0.6));
    }

    #[test]
    fn empty_rest_is_independent() {
        let a = gaussian(100, 1, 0);
        let rest = Array2::zeros((100, 0));
        assert!(is_independent(a.view(), rest.view(), 0.1, &R2Options::default()).unwrap());
    }

    #[test]
    fn matrix_csv_layout() {
        let a = gaussian(300, 1, 7);
        let vars = vec![("a".to_string(), a.view()), ("b".to_string(), a.view())];
        let m = pairwise_matrix(&vars, &R2Options::default()).unwrap();
        assert!(m.value(0, 1).unwrap() >= 0.99);
        assert!(m.value(1, 0).unwrap() >= 0.99);
        assert!(m.value(0, 0).is_none());
        let csv = m.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "predictor,a,b");
        assert!(lines[1].starts_with("a,×,"));
        assert!(lines[2].ends_with(",×"));
    }

    #[test]
    fn pairwise_records_failures_instead_of_aborting() {
        let a = gaussian(100, 1, 8);
        let c = Array2::from_elem((100, 1), 1.0);
        let vars = vec![("a".to_string(), a.view()), ("c".to_string(), c.view())];
        let m = pairwise_matrix(&vars, &R2Options::default()).unwrap();
        assert_eq!(m.failures.len(), 1);
        assert_eq!((m.failures[0].0, m.failures[0].1), (0, 1));
        assert!(m.value(1, 0).is_some());
    }
}
