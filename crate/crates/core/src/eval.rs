//! Logistic-regression probe over frozen embeddings.

use gclab_autodiff::Matrix;
use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Split;
use crate::rng;
use crate::trainer::Model;

pub const REG_GRID: [f64; 5] = [1e-4, 1e-3, 1e-2, 1e-1, 1.0];
pub const FOLDS: usize = 5;
pub const MAX_ITERS: usize = 2000;
pub const GRAD_TOL: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub test_accuracy: f64,
    /// Validation accuracy of each fold at the chosen strength.
    pub fold_accuracies: Vec<f64>,
    pub reg_strength: f64,
    pub split_seed: u64,
}

/// Softmax regression weights; `predict` takes the first maximal class.
#[derive(Debug, Clone)]
pub struct Logistic {
    pub w: Matrix,
    pub b: Array1<f64>,
    pub iterations: usize,
}

impl Logistic {
    pub fn predict(&self, x: &Matrix) -> Vec<usize> {
        let z = x.dot(&self.w) + &self.b;
        z.rows()
            .into_iter()
            .map(|r| {
                let mut best = 0;
                for (k, v) in r.iter().enumerate() {
                    if *v > r[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }
}

fn softmax_rows(z: &Matrix) -> Matrix {
    let mut p = z.clone();
    for mut r in p.rows_mut() {
        let m = r.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        r.mapv_inplace(|v| (v - m).exp());
        let s = r.sum();
        r /= s;
    }
    p
}

/// Largest eigenvalue of `x^T x / n` by power iteration.
fn gram_spectral_norm(x: &Matrix) -> f64 {
    let n = x.nrows().max(1) as f64;
    let mut v = Array1::from_elem(x.ncols(), 1.0);
    let mut lambda = 0.0;
    for _ in 0..100 {
        let u = x.t().dot(&x.dot(&v)) / n;
        let norm = u.dot(&u).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = norm / v.dot(&v).sqrt();
        v = u / norm;
    }
    lambda
}

/// Full-batch gradient descent on mean cross-entropy plus `lambda/2 ||W||^2`.
/// Weights and the unregularized bias take alternating steps sized by their
/// curvature bounds.
pub fn fit_logistic(x: &Matrix, y: &[usize], classes: usize, lambda: f64) -> Logistic {
    let (n, d) = x.dim();
    let mut onehot = Array2::zeros((n, classes));
    for (i, &c) in y.iter().enumerate() {
        onehot[[i, c]] = 1.0;
    }
    let nf = n.max(1) as f64;
    let eta_w = 1.0 / (0.5 * gram_spectral_norm(x) * 1.05 + lambda);
    let eta_b = 2.0;
    let mut w = Array2::zeros((d, classes));
    let mut b = Array1::zeros(classes);
    let mut z: Matrix = Array2::zeros((n, classes));
    let mut iterations = 0;
    while iterations < MAX_ITERS {
        let r = softmax_rows(&z) - &onehot;
        let gw = x.t().dot(&r) / nf + &w * lambda;
        let gb = r.sum_axis(Axis(0)) / nf;
        if (gw.iter().map(|v| v * v).sum::<f64>() + gb.dot(&gb)).sqrt() < GRAD_TOL {
            break;
        }
        w.scaled_add(-eta_w, &gw);
        z = x.dot(&w) + &b;
        let gb = (softmax_rows(&z) - &onehot).sum_axis(Axis(0)) / nf;
        let step = gb * -eta_b;
        b += &step;
        z += &step;
        iterations += 1;
    }
    Logistic { w, b, iterations }
}

/// Per-column mean and scale from `train` rows. Columns whose spread is at
/// round-off level relative to their magnitude get scale 0 and standardize
/// to exactly zero.
pub fn standardizer(x: &Matrix, train: &[usize]) -> (Array1<f64>, Array1<f64>) {
    let rows = x.select(Axis(0), train);
    let mean = rows.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(x.ncols()));
    let std = rows.std_axis(Axis(0), 0.0);
    let inv = ndarray::Zip::from(&std).and(&mean).map_collect(|&s, &m| {
        if s <= 1e-10 * m.abs().max(1.0) {
            0.0
        } else {
            1.0 / s
        }
    });
    (mean, inv)
}

fn accuracy(pred: &[usize], y: &[usize]) -> f64 {
    if y.is_empty() {
        return 0.0;
    }
    pred.iter().zip(y).filter(|(a, b)| a == b).count() as f64 / y.len() as f64
}

/// Deterministic fold assignment of `n` train positions.
pub fn fold_ids(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, 0xf01d));
    let mut ids = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        ids[i] = pos % folds;
    }
    ids
}

pub fn fit_logistic_cv(embeddings: &Matrix, labels: &[usize], split: &Split, reg_grid: &[f64]) -> Result<EvalReport> {
    if embeddings.nrows() != labels.len() {
        return Err(Error::Eval(format!("{} embeddings for {} labels", embeddings.nrows(), labels.len())));
    }
    if reg_grid.is_empty() || reg_grid.iter().any(|l| !(*l >= 0.0)) {
        return Err(Error::Eval("regularization grid must be non-empty and non-negative".into()));
    }
    if let Some(&bad) = split.train.iter().chain(&split.val).chain(&split.test).find(|&&i| i >= labels.len()) {
        return Err(Error::Eval(format!("split index {bad} out of range for {} items", labels.len())));
    }
    if split.test.is_empty() {
        return Err(Error::Eval("empty test split".into()));
    }
    let ytrain: Vec<usize> = split.train.iter().map(|&i| labels[i]).collect();
    let mut distinct = ytrain.clone();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::Eval("train split covers fewer than two classes".into()));
    }
    if embeddings.iter().any(|v| !v.is_finite()) {
        return Err(Error::Eval("embeddings contain non-finite values".into()));
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let (mean, inv) = standardizer(embeddings, &split.train);
    let x = (embeddings - &mean) * &inv;
    let xtrain = x.select(Axis(0), &split.train);

    let folds = FOLDS.min(split.train.len());
    let ids = fold_ids(split.train.len(), folds, split.seed);
    let per_lambda: Vec<Vec<f64>> = std::thread::scope(|s| {
        let handles: Vec<_> = reg_grid
            .iter()
            .map(|&lambda| {
                let (xtrain, ytrain, ids) = (&xtrain, &ytrain, &ids);
                s.spawn(move || {
                    (0..folds)
                        .map(|f| {
                            let fit_rows: Vec<usize> = (0..ids.len()).filter(|&i| ids[i] != f).collect();
                            let val_rows: Vec<usize> = (0..ids.len()).filter(|&i| ids[i] == f).collect();
                            let yf: Vec<usize> = fit_rows.iter().map(|&i| ytrain[i]).collect();
                            let yv: Vec<usize> = val_rows.iter().map(|&i| ytrain[i]).collect();
                            let m = fit_logistic(&xtrain.select(Axis(0), &fit_rows), &yf, classes, lambda);
                            accuracy(&m.predict(&xtrain.select(Axis(0), &val_rows)), &yv)
                        })
                        .collect()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("cv worker panicked")).collect()
    });

    // ties go to the stronger regularization
    let mut best = 0;
    let mean_of = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    for (k, accs) in per_lambda.iter().enumerate() {
        let (a, b) = (mean_of(accs), mean_of(&per_lambda[best]));
        if a > b || (a == b && reg_grid[k] > reg_grid[best]) {
            best = k;
        }
    }
    let model = fit_logistic(&xtrain, &ytrain, classes, reg_grid[best]);
    let ytest: Vec<usize> = split.test.iter().map(|&i| labels[i]).collect();
    let test_accuracy = accuracy(&model.predict(&x.select(Axis(0), &split.test)), &ytest);
    Ok(EvalReport {
        test_accuracy,
        fold_accuracies: per_lambda[best].clone(),
        reg_strength: reg_grid[best],
        split_seed: split.seed,
    })
}

/// Embeds the model's data and probes it. `split` indexes the model's items
/// (nodes or graphs after any subsampling at assembly).
pub fn evaluate(model: &Model, split: &Split) -> Result<EvalReport> {
    let emb = model.embed_for_task()?;
    fit_logistic_cv(&emb, &model.dataset().labels(), split, &REG_GRID)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::NODE_SPLIT;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn clusters(n: usize, seed: u64) -> (Matrix, Vec<usize>) {
        let mut r = rng::rng(seed);
        let mut x = Array2::zeros((2 * n, 1));
        let mut y = Vec::new();
        for i in 0..2 * n {
            let c = i / n;
            let noise: f64 = StandardNormal.sample(&mut r);
            x[[i, 0]] = if c == 0 { -1.0 } else { 1.0 } + 0.1 * noise;
            y.push(c);
        }
        (x, y)
    }

    #[test]
    fn separable_clusters() {
        let (x, y) = clusters(50, 0);
        let split = Split::of_size(100, NODE_SPLIT, 3).unwrap();
        let r = fit_logistic_cv(&x, &y, &split, &REG_GRID).unwrap();
        assert_eq!(r.test_accuracy, 1.0);
        assert_eq!(r.fold_accuracies.len(), 5);
    }

    #[test]
    fn shuffled_labels_are_chance() {
        let mut total = 0.0;
        for seed in 0..20 {
            let mut r = rng::rng(100 + seed);
            let x = Array2::from_shape_fn((200, 4), |_| StandardNormal.sample(&mut r));
            let y: Vec<usize> = (0..200).map(|_| r.random_range(0..2)).collect();
            let split = Split::of_size(200, NODE_SPLIT, seed).unwrap();
            total += fit_logistic_cv(&x, &y, &split, &REG_GRID).unwrap().test_accuracy;
        }
        let mean = total / 20.0;
        assert!((mean - 0.5).abs() <= 0.1, "{mean}");
    }

    #[test]
    fn ridge_limit() {
        let (x, mut y) = clusters(50, 1);
        // make class 1 the majority
        for v in y.iter_mut().take(20) {
            *v = 1;
        }
        let split = Split::of_size(100, NODE_SPLIT, 4).unwrap();
        let mut xs = x.clone();
        let (mean, inv) = standardizer(&x, &split.train);
        xs = (xs - &mean) * &inv;
        let ytrain: Vec<usize> = split.train.iter().map(|&i| y[i]).collect();
        let m = fit_logistic(&xs.select(Axis(0), &split.train), &ytrain, 2, 1e6);
        assert!(m.w.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-2);
        let r = fit_logistic_cv(&x, &y, &split, &[1e6]).unwrap();
        let majority = split.test.iter().filter(|&&i| y[i] == 1).count() as f64 / split.test.len() as f64;
        assert!((r.test_accuracy - majority).abs() < 1e-12);
    }

    #[test]
    fn single_class_train_is_error() {
        let x = Array2::zeros((10, 2));
        let y = vec![0; 10];
        let split = Split::of_size(10, NODE_SPLIT, 0).unwrap();
        assert!(matches!(fit_logistic_cv(&x, &y, &split, &REG_GRID), Err(Error::Eval(_))));
    }

    #[test]
    fn constant_columns_standardize_to_zero() {
        let mut x = Array2::from_elem((6, 2), 0.1 + 0.2);
        x[[3, 0]] = 0.30000000000000004 + f64::EPSILON;
        let (_, inv) = standardizer(&x, &[0, 1, 2, 3, 4, 5]);
        assert_eq!(inv[0], 0.0);
        assert_eq!(inv[1], 0.0);
    }

    #[test]
    fn folds_partition_train() {
        let ids = fold_ids(23, 5, 7);
        assert_eq!(ids, fold_ids(23, 5, 7));
        for f in 0..5 {
            let c = ids.iter().filter(|&&i| i == f).count();
            assert!(c == 4 || c == 5);
        }
    }

    fn random_rotation(d: usize, seed: u64) -> Matrix {
        let mut r = rng::rng(seed);
        let mut q: Matrix = Array2::from_shape_fn((d, d), |_| StandardNormal.sample(&mut r));
        for j in 0..d {
            for k in 0..j {
                let proj = q.column(j).dot(&q.column(k));
                let ck = q.column(k).to_owned();
                q.column_mut(j).scaled_add(-proj, &ck);
            }
            let norm = q.column(j).dot(&q.column(j)).sqrt();
            q.column_mut(j).mapv_inplace(|v| v / norm);
        }
        q
    }

    #[test]
    fn affine_invariance_on_block_embeddings() {
        let y: Vec<usize> = (0..400).map(|i| i / 200).collect();
        let mut r = rng::rng(3);
        let x = Array2::from_shape_fn((400, 4), |(i, j)| {
            let noise: f64 = StandardNormal.sample(&mut r);
            let mean = if j == y[i] { 1.5 } else { 0.0 };
            mean + 0.5 * noise
        });
        for seed in 0..5 {
            let split = Split::of_size(400, NODE_SPLIT, seed).unwrap();
            let a = fit_logistic_cv(&x, &y, &split, &REG_GRID).unwrap().test_accuracy;
            let q = random_rotation(4, seed);
            let b = fit_logistic_cv(&(x.dot(&q) * 3.0 + 1.0), &y, &split, &REG_GRID).unwrap().test_accuracy;
            assert!((a - b).abs() <= 0.02, "{a} vs {b}");
        }
    }
}
