//! Multinomial (softmax) logistic regression.
//!
//! Minimizes the summed cross-entropy plus `l2 / 2 * ||W||^2` (bias not
//! penalized) with L-BFGS and an Armijo backtracking line search. Only the
//! classes present in the training labels are modelled; the remaining
//! classes get confidence zero at prediction time.

use std::collections::VecDeque;

use ndarray::{Array1, Array2, ArrayView2, Axis};

use super::LearnerError;
use crate::model::ClassIdx;

const HISTORY: usize = 10;
const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRegConfig {
    pub max_iter: usize,
    pub l2: f64,
    pub tol: f64,
    /// Threaded through for reproducibility; the zero start makes fitting
    /// deterministic regardless of its value.
    pub seed: u64,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        LogRegConfig {
            max_iter: 1000,
            l2: 1.0,
            tol: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingMeta {
    pub iterations_used: usize,
    pub final_gradient_norm: f64,
    /// Objective value after every accepted step, starting at the initial point.
    pub loss_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRegModel {
    /// `K × D`, one row per class in `classes`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    /// Modelled classes (indices into the full label set), ascending.
    pub classes: Vec<ClassIdx>,
    pub n_classes: usize,
    pub training_meta: TrainingMeta,
}

impl LogRegModel {
    /// A model with all-zero parameters over every class.
    pub fn zeros(n_classes: usize, width: usize) -> Self {
        LogRegModel {
            weights: Array2::zeros((n_classes, width)),
            bias: Array1::zeros(n_classes),
            classes: (0..n_classes).collect(),
            n_classes,
            training_meta: TrainingMeta {
                iterations_used: 0,
                final_gradient_norm: 0.0,
                loss_trace: Vec::new(),
            },
        }
    }

    pub fn width(&self) -> usize {
        self.weights.ncols()
    }
}

/// Objective and gradient at `params = [W (K×D, row-major), b (K)]` for
/// labels already mapped into `0..k`.
pub fn objective(
    params: &[f64],
    x: ArrayView2<'_, f64>,
    y: &[usize],
    k: usize,
    l2: f64,
) -> (f64, Vec<f64>) {
    let (n, d) = x.dim();
    assert_eq!(params.len(), k * d + k, "parameter vector length");
    assert_eq!(y.len(), n);
    let w = ArrayView2::from_shape((k, d), &params[..k * d]).expect("weight block");
    let b = &params[k * d..];
    let mut logits = x.dot(&w.t());
    for mut row in logits.rows_mut() {
        row.iter_mut().zip(b).for_each(|(z, bk)| *z += bk);
    }
    let mut loss = 0.0;
    // residual = softmax - onehot
    for (i, mut row) in logits.axis_iter_mut(Axis(0)).enumerate() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for z in row.iter_mut() {
            *z = (*z - max).exp();
            sum += *z;
        }
        let true_prob = row[y[i]] / sum;
        loss -= true_prob.ln();
        row.mapv_inplace(|e| e / sum);
        row[y[i]] -= 1.0;
    }
    let residual = logits;
    let mut grad_w = residual.t().dot(&x);
    let mut penalty = 0.0;
    for (g, wv) in grad_w.iter_mut().zip(w.iter()) {
        *g += l2 * wv;
        penalty += wv * wv;
    }
    loss += 0.5 * l2 * penalty;
    let grad_b = residual.sum_axis(Axis(0));
    let mut grad = grad_w.into_raw_vec_and_offset().0;
    grad.extend(grad_b.iter());
    (loss, grad)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Fits on rows of `x` with labels `y` (indices into `0..n_classes`).
pub fn logreg_fit(
    x: ArrayView2<'_, f64>,
    y: &[ClassIdx],
    n_classes: usize,
    config: &LogRegConfig,
) -> Result<LogRegModel, LearnerError> {
    let (n, d) = x.dim();
    if n == 0 || y.len() != n {
        return Err(LearnerError::InvalidData(format!(
            "{n} rows with {} labels",
            y.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(LearnerError::InvalidData("non-finite feature value".into()));
    }
    if let Some(&bad) = y.iter().find(|&&c| c >= n_classes) {
        return Err(LearnerError::InvalidData(format!(
            "label {bad} outside {n_classes} classes"
        )));
    }
    let mut classes: Vec<ClassIdx> = y.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let k = classes.len();
    if k == 1 {
        // nothing to separate: constant predictor
        return Ok(LogRegModel {
            weights: Array2::zeros((1, d)),
            bias: Array1::zeros(1),
            classes,
            n_classes,
            training_meta: TrainingMeta {
                iterations_used: 0,
                final_gradient_norm: 0.0,
                loss_trace: vec![0.0],
            },
        });
    }
    let local: Vec<usize> = y
        .iter()
        .map(|c| classes.binary_search(c).expect("class present"))
        .collect();

    let eval = |p: &[f64]| objective(p, x, &local, k, config.l2);
    let mut params = vec![0.0; k * d + k];
    let (mut loss, mut grad) = eval(&params);
    if !loss.is_finite() {
        return Err(LearnerError::NumericFailure(format!("initial loss {loss}")));
    }
    let mut trace = vec![loss];
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(HISTORY);
    let mut iterations = 0;
    while iterations < config.max_iter && norm(&grad) > config.tol {
        iterations += 1;
        // two-loop recursion
        let mut dir: Vec<f64> = grad.clone();
        let mut alphas = Vec::with_capacity(memory.len());
        for (s, yv, rho) in memory.iter().rev() {
            let a = rho * dot(s, &dir);
            dir.iter_mut().zip(yv).for_each(|(q, yi)| *q -= a * yi);
            alphas.push(a);
        }
        if let Some((s, yv, _)) = memory.back() {
            let gamma = dot(s, yv) / dot(yv, yv);
            dir.iter_mut().for_each(|q| *q *= gamma);
        } else {
            let scale = 1.0 / norm(&grad).max(1.0);
            dir.iter_mut().for_each(|q| *q *= scale);
        }
        for ((s, yv, rho), a) in memory.iter().zip(alphas.iter().rev()) {
            let beta = rho * dot(yv, &dir);
            dir.iter_mut()
                .zip(s)
                .for_each(|(r, si)| *r += (a - beta) * si);
        }
        dir.iter_mut().for_each(|v| *v = -*v);
        let mut slope = dot(&grad, &dir);
        if slope.is_nan() || slope >= 0.0 {
            memory.clear();
            let scale = 1.0 / norm(&grad).max(1.0);
            dir = grad.iter().map(|g| -g * scale).collect();
            slope = dot(&grad, &dir);
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let trial: Vec<f64> = params.iter().zip(&dir).map(|(p, d)| p + step * d).collect();
            let (f, g) = eval(&trial);
            if f.is_finite() && f <= loss + ARMIJO_C1 * step * slope {
                accepted = Some((trial, f, g));
                break;
            }
            step *= 0.5;
        }
        let Some((next, f, g)) = accepted else {
            // no decrease representable at this precision
            break;
        };
        let s: Vec<f64> = next.iter().zip(&params).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = g.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        if sy > 1e-12 {
            if memory.len() == HISTORY {
                memory.pop_front();
            }
            memory.push_back((s, yv, 1.0 / sy));
        }
        params = next;
        loss = f;
        grad = g;
        trace.push(loss);
    }
    if !loss.is_finite() || params.iter().any(|p| !p.is_finite()) {
        return Err(LearnerError::NumericFailure("non-finite parameters".into()));
    }
    let weights = Array2::from_shape_vec((k, d), params[..k * d].to_vec()).expect("shape");
    let bias = Array1::from_vec(params[k * d..].to_vec());
    Ok(LogRegModel {
        weights,
        bias,
        classes,
        n_classes,
        training_meta: TrainingMeta {
            iterations_used: iterations,
            final_gradient_norm: norm(&grad),
            loss_trace: trace,
        },
    })
}

/// Softmax confidences over all `n_classes` and argmax predictions (ties go
/// to the first class).
pub fn logreg_predict(
    model: &LogRegModel,
    x: ArrayView2<'_, f64>,
) -> Result<(Vec<ClassIdx>, Array2<f64>), LearnerError> {
    if x.ncols() != model.width() {
        return Err(LearnerError::WidthMismatch {
            expected: model.width(),
            got: x.ncols(),
        });
    }
    let n = x.nrows();
    let mut logits = x.dot(&model.weights.t());
    logits += &model.bias;
    let mut confidences = Array2::zeros((n, model.n_classes));
    let mut predictions = Vec::with_capacity(n);
    for (i, row) in logits.axis_iter(Axis(0)).enumerate() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|z| (z - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        for (e, &c) in exps.iter().zip(&model.classes) {
            confidences[[i, c]] = e / sum;
        }
        let conf = confidences.row(i);
        let mut best = 0;
        for c in 1..model.n_classes {
            if conf[c] > conf[best] {
                best = c;
            }
        }
        predictions.push(best);
    }
    Ok((predictions, confidences))
}
