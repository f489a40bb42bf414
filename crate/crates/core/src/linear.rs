//! Multinomial logistic regression, the linear reference point next to the
//! boosted trees. Weighted cross-entropy plus an L2 penalty on everything
//! but the biases, minimized by batch gradient descent with backtracking
//! line search until the gradient norm drops below tolerance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, ModelFileError, Result};
use crate::features::FeatureMatrix;
use crate::gbt::{argmax, softmax_into};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegConfig {
    pub n_classes: usize,
    pub l2: f64,
    pub class_weights: Option<Vec<f64>>,
    pub max_iters: usize,
    /// Stop once the Euclidean norm of the full gradient falls below this.
    pub tol: f64,
}

impl LogRegConfig {
    pub fn new(n_classes: usize) -> LogRegConfig {
        LogRegConfig {
            n_classes,
            l2: 1e-3,
            class_weights: None,
            max_iters: 2000,
            tol: 1e-5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        if !self.l2.is_finite() || self.l2 < 0.0 {
            return Err(Error::Config(format!(
                "l2 penalty must be non-negative (got {})",
                self.l2
            )));
        }
        if !self.tol.is_finite() || self.tol <= 0.0 {
            return Err(Error::Config("gradient tolerance must be positive".into()));
        }
        if let Some(w) = &self.class_weights {
            if w.len() != self.n_classes {
                return Err(Error::Config(format!(
                    "{} class weights for {} classes",
                    w.len(),
                    self.n_classes
                )));
            }
            if w.iter().any(|v| !v.is_finite() || *v <= 0.0) {
                return Err(Error::Config("class weights must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Per-class weight rows of length n_features + 1, bias last.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearModel {
    pub config: LogRegConfig,
    pub dense_width: usize,
    pub n_features: usize,
    pub fingerprint: u64,
    pub weights: Vec<f64>,
    pub iterations: usize,
    pub final_grad_norm: f64,
}

impl LinearModel {
    pub fn converged(&self) -> bool {
        self.final_grad_norm < self.config.tol
    }

    pub fn check_fingerprint(&self, fingerprint: u64) -> Result<()> {
        if self.fingerprint != fingerprint {
            return Err(ModelFileError::FingerprintMismatch {
                model: self.fingerprint,
                expected: fingerprint,
            }
            .into());
        }
        Ok(())
    }

    pub fn predict_proba(&self, matrix: &FeatureMatrix, row: usize) -> Result<Vec<f64>> {
        self.check_fingerprint(matrix.fingerprint())?;
        Ok(self.proba_parts(matrix.dense_row(row), matrix.sparse_row(row)))
    }

    pub fn predict(&self, matrix: &FeatureMatrix, row: usize) -> Result<usize> {
        Ok(argmax(&self.predict_proba(matrix, row)?))
    }

    pub fn proba_parts(&self, dense: &[f64], sparse: &[(u32, f64)]) -> Vec<f64> {
        let k = self.config.n_classes;
        let stride = self.n_features + 1;
        let mut scores = vec![0.0; k];
        for (c, score) in scores.iter_mut().enumerate() {
            let row = &self.weights[c * stride..(c + 1) * stride];
            let mut s = row[self.n_features];
            for (f, &x) in dense.iter().enumerate() {
                s += row[f] * x;
            }
            for &(col, x) in sparse {
                s += row[self.dense_width + col as usize] * x;
            }
            *score = s;
        }
        let mut proba = vec![0.0; k];
        softmax_into(&scores, &mut proba);
        proba
    }
}

pub fn train_logreg(
    matrix: &FeatureMatrix,
    labels: &[usize],
    config: &LogRegConfig,
) -> Result<LinearModel> {
    config.validate()?;
    let n = matrix.rows();
    if n == 0 {
        return Err(Error::Data("cannot train on an empty feature matrix".into()));
    }
    if labels.len() != n {
        return Err(Error::Data(format!(
            "{} labels for {} feature rows",
            labels.len(),
            n
        )));
    }
    let k = config.n_classes;
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::Data(format!("label {bad} outside {k} classes")));
    }
    let weights = match &config.class_weights {
        Some(w) => w.clone(),
        None => vec![1.0; k],
    };
    let row_weight: Vec<f64> = labels.iter().map(|&y| weights[y]).collect();

    let d = matrix.width();
    let stride = d + 1;
    let mut w = vec![0.0; k * stride];
    let (mut loss, mut grad) = logreg_loss_and_grad(matrix, labels, &row_weight, config.l2, &w, k);
    let mut grad_norm = norm(&grad);
    let mut iterations = 0;
    let mut step = 1.0f64;

    while iterations < config.max_iters && grad_norm >= config.tol {
        step = (step * 2.0).min(1e6);
        let mut accepted = false;
        while step > 1e-18 {
            let candidate: Vec<f64> = w
                .iter()
                .zip(&grad)
                .map(|(wi, gi)| wi - step * gi)
                .collect();
            let (c_loss, c_grad) =
                logreg_loss_and_grad(matrix, labels, &row_weight, config.l2, &candidate, k);
            if c_loss <= loss - 1e-4 * step * grad_norm * grad_norm {
                w = candidate;
                loss = c_loss;
                grad = c_grad;
                grad_norm = norm(&grad);
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        iterations += 1;
        if !accepted {
            break;
        }
    }

    Ok(LinearModel {
        config: config.clone(),
        dense_width: matrix.dense_width(),
        n_features: d,
        fingerprint: matrix.fingerprint(),
        weights: w,
        iterations,
        final_grad_norm: grad_norm,
    })
}

/// Weighted mean cross-entropy plus (l2/2)|W|^2 over non-bias coordinates,
/// with its gradient.
/// Weighted softmax cross-entropy with L2 penalty on non-bias weights, and
/// its gradient, both normalized by the total row weight. `w` is laid out as
/// `k` blocks of `width + 1` values, bias last. Exposed so callers can verify
/// training against the exact objective the optimizer descends.
pub fn logreg_loss_and_grad(
    matrix: &FeatureMatrix,
    labels: &[usize],
    row_weight: &[f64],
    l2: f64,
    w: &[f64],
    k: usize,
) -> (f64, Vec<f64>) {
    let n = matrix.rows();
    let d = matrix.width();
    let dw = matrix.dense_width();
    let stride = d + 1;
    let weight_sum: f64 = row_weight.iter().sum();

    let mut loss = 0.0;
    let mut grad = vec![0.0; w.len()];
    let mut scores = vec![0.0; k];
    let mut proba = vec![0.0; k];

    for i in 0..n {
        let dense = matrix.dense_row(i);
        let sparse = matrix.sparse_row(i);
        for (c, score) in scores.iter_mut().enumerate() {
            let row = &w[c * stride..(c + 1) * stride];
            let mut s = row[d];
            for (f, &x) in dense.iter().enumerate() {
                s += row[f] * x;
            }
            for &(col, x) in sparse {
                s += row[dw + col as usize] * x;
            }
            *score = s;
        }
        softmax_into(&scores, &mut proba);
        loss -= row_weight[i] * proba[labels[i]].max(1e-300).ln();
        for c in 0..k {
            let y = if labels[i] == c { 1.0 } else { 0.0 };
            let coef = row_weight[i] * (proba[c] - y) / weight_sum;
            let row = &mut grad[c * stride..(c + 1) * stride];
            for (f, &x) in dense.iter().enumerate() {
                row[f] += coef * x;
            }
            for &(col, x) in sparse {
                row[dw + col as usize] += coef * x;
            }
            row[d] += coef;
        }
    }
    loss /= weight_sum;

    for c in 0..k {
        for f in 0..d {
            let wi = w[c * stride + f];
            loss += 0.5 * l2 * wi * wi;
            grad[c * stride + f] += l2 * wi;
        }
    }
    (loss, grad)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
