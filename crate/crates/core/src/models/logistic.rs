//! L2-regularized logistic regression fitted with L-BFGS.
//!
//! The objective is the mean log-loss plus `lambda / 2 * ||w||^2`; the
//! intercept is not penalized. Parameters are laid out as `[w_0 .. w_{p-1}, b]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row access to a design matrix.
pub trait Design: Sync {
    fn n_samples(&self) -> usize;
    fn n_features(&self) -> usize;
    /// `x_i . w`
    fn dot(&self, i: usize, w: &[f64]) -> f64;
    /// `out += alpha * x_i`
    fn axpy(&self, i: usize, alpha: f64, out: &mut [f64]);
}

/// Binary rows given as sorted index lists.
pub struct SparseDesign<'a> {
    rows: Vec<&'a [usize]>,
    n_features: usize,
}

impl<'a> SparseDesign<'a> {
    pub fn new(rows: Vec<&'a [usize]>, n_features: usize) -> Self {
        SparseDesign { rows, n_features }
    }
}

impl Design for SparseDesign<'_> {
    fn n_samples(&self) -> usize {
        self.rows.len()
    }

    fn n_features(&self) -> usize {
        self.n_features
    }

    fn dot(&self, i: usize, w: &[f64]) -> f64 {
        self.rows[i].iter().map(|&j| w[j]).sum()
    }

    fn axpy(&self, i: usize, alpha: f64, out: &mut [f64]) {
        for &j in self.rows[i] {
            out[j] += alpha;
        }
    }
}

/// Row-major dense features.
#[derive(Debug, Clone)]
pub struct DenseDesign {
    data: Vec<f64>,
    n_features: usize,
}

impl DenseDesign {
    pub fn new(data: Vec<f64>, n_features: usize) -> Self {
        assert!(n_features > 0 && data.len() % n_features == 0);
        DenseDesign { data, n_features }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_features..(i + 1) * self.n_features]
    }
}

impl Design for DenseDesign {
    fn n_samples(&self) -> usize {
        self.data.len() / self.n_features
    }

    fn n_features(&self) -> usize {
        self.n_features
    }

    fn dot(&self, i: usize, w: &[f64]) -> f64 {
        self.row(i).iter().zip(w).map(|(x, w)| x * w).sum()
    }

    fn axpy(&self, i: usize, alpha: f64, out: &mut [f64]) {
        for (o, x) in out.iter_mut().zip(self.row(i)) {
            *o += alpha * x;
        }
    }
}

/// A view of selected rows of another design.
pub struct Subset<'a, D: ?Sized> {
    inner: &'a D,
    index: &'a [usize],
}

impl<'a, D: Design + ?Sized> Subset<'a, D> {
    pub fn new(inner: &'a D, index: &'a [usize]) -> Self {
        Subset { inner, index }
    }
}

impl<D: Design + ?Sized> Design for Subset<'_, D> {
    fn n_samples(&self) -> usize {
        self.index.len()
    }

    fn n_features(&self) -> usize {
        self.inner.n_features()
    }

    fn dot(&self, i: usize, w: &[f64]) -> f64 {
        self.inner.dot(self.index[i], w)
    }

    fn axpy(&self, i: usize, alpha: f64, out: &mut [f64]) {
        self.inner.axpy(self.index[i], alpha, out)
    }
}

/// Stopping rule for the optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerOptions {
    /// Stop once the Euclidean norm of the full gradient drops below this.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// L-BFGS memory.
    pub history: usize,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        OptimizerOptions {
            tolerance: 1e-6,
            max_iterations: 500,
            history: 10,
        }
    }
}

/// Regularized mean log-loss over a design and binary labels.
pub struct LogisticObjective<'a, D: ?Sized> {
    design: &'a D,
    labels: &'a [bool],
    lambda: f64,
}

impl<'a, D: Design + ?Sized> LogisticObjective<'a, D> {
    pub fn new(design: &'a D, labels: &'a [bool], lambda: f64) -> Self {
        assert_eq!(design.n_samples(), labels.len());
        LogisticObjective {
            design,
            labels,
            lambda,
        }
    }

    pub fn dimension(&self) -> usize {
        self.design.n_features() + 1
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        let p = self.design.n_features();
        let (w, b) = (&theta[..p], theta[p]);
        let n = self.labels.len() as f64;
        let loss: f64 = self
            .labels
            .iter()
            .enumerate()
            .map(|(i, &y)| {
                let z = b + self.design.dot(i, w);
                softplus(z) - if y { z } else { 0.0 }
            })
            .sum();
        loss / n + 0.5 * self.lambda * w.iter().map(|v| v * v).sum::<f64>()
    }

    /// Objective value; writes the gradient into `grad`.
    pub fn value_and_gradient(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let p = self.design.n_features();
        let (w, b) = (&theta[..p], theta[p]);
        let n = self.labels.len() as f64;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        let mut bias_grad = 0.0;
        for (i, &y) in self.labels.iter().enumerate() {
            let z = b + self.design.dot(i, w);
            let target = if y { 1.0 } else { 0.0 };
            loss += softplus(z) - target * z;
            let residual = sigmoid(z) - target;
            bias_grad += residual;
            self.design.axpy(i, residual / n, &mut grad[..p]);
        }
        grad[p] = bias_grad / n;
        let mut penalty = 0.0;
        for (g, &wj) in grad[..p].iter_mut().zip(w) {
            *g += self.lambda * wj;
            penalty += wj * wj;
        }
        loss / n + 0.5 * self.lambda * penalty
    }
}

/// `log(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Logistic link, stable for large `|z|`.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub objective: f64,
}

impl LogisticFit {
    pub fn to_theta(&self) -> Vec<f64> {
        let mut t = self.coefficients.clone();
        t.push(self.intercept);
        t
    }
}

/// Fits the regularized model, optionally warm-started from `start`.
pub fn fit_logistic<D: Design + ?Sized>(
    design: &D,
    labels: &[bool],
    lambda: f64,
    options: &OptimizerOptions,
    start: Option<&[f64]>,
) -> Result<LogisticFit> {
    let objective = LogisticObjective::new(design, labels, lambda);
    let dim = objective.dimension();
    let theta0 = match start {
        Some(s) => {
            assert_eq!(s.len(), dim);
            s.to_vec()
        }
        None => {
            let mut t = vec![0.0; dim];
            let pos = labels.iter().filter(|&&y| y).count() as f64;
            let neg = labels.len() as f64 - pos;
            if pos > 0.0 && neg > 0.0 {
                t[dim - 1] = (pos / neg).ln();
            }
            t
        }
    };
    let state = lbfgs(|t, g| objective.value_and_gradient(t, g), theta0, options);
    if state.gradient_norm >= options.tolerance {
        return Err(Error::NonConvergence {
            iterations: state.iterations,
            gradient_norm: state.gradient_norm,
            objective: state.value,
            lambda,
        });
    }
    let mut theta = state.theta;
    let intercept = theta.pop().expect("non-empty parameter vector");
    Ok(LogisticFit {
        coefficients: theta,
        intercept,
        iterations: state.iterations,
        gradient_norm: state.gradient_norm,
        objective: state.value,
    })
}

struct LbfgsState {
    theta: Vec<f64>,
    value: f64,
    gradient_norm: f64,
    iterations: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Limited-memory BFGS with a backtracking Armijo line search.
fn lbfgs<F>(mut f: F, mut theta: Vec<f64>, options: &OptimizerOptions) -> LbfgsState
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let dim = theta.len();
    let mut grad = vec![0.0; dim];
    let mut value = f(&theta, &mut grad);
    let mut s_hist: Vec<Vec<f64>> = Vec::with_capacity(options.history);
    let mut y_hist: Vec<Vec<f64>> = Vec::with_capacity(options.history);
    let mut rho_hist: Vec<f64> = Vec::with_capacity(options.history);
    let mut alpha = vec![0.0; options.history];
    let mut direction = vec![0.0; dim];
    let mut trial = vec![0.0; dim];
    let mut trial_grad = vec![0.0; dim];
    let mut iterations = 0;

    while iterations < options.max_iterations {
        let gnorm = norm(&grad);
        if gnorm < options.tolerance || !gnorm.is_finite() {
            break;
        }
        iterations += 1;

        // Two-loop recursion: direction = -H * grad.
        direction.copy_from_slice(&grad);
        for k in (0..s_hist.len()).rev() {
            alpha[k] = rho_hist[k] * dot(&s_hist[k], &direction);
            for (d, y) in direction.iter_mut().zip(&y_hist[k]) {
                *d -= alpha[k] * y;
            }
        }
        let gamma = match (s_hist.last(), y_hist.last()) {
            (Some(s), Some(y)) => dot(s, y) / dot(y, y),
            _ => 1.0 / gnorm.max(1.0),
        };
        direction.iter_mut().for_each(|d| *d *= gamma);
        for k in 0..s_hist.len() {
            let beta = rho_hist[k] * dot(&y_hist[k], &direction);
            for (d, s) in direction.iter_mut().zip(&s_hist[k]) {
                *d += (alpha[k] - beta) * s;
            }
        }
        direction.iter_mut().for_each(|d| *d = -*d);

        let mut slope = dot(&grad, &direction);
        if slope >= 0.0 {
            // Curvature information went stale; restart from steepest descent.
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            for (d, g) in direction.iter_mut().zip(&grad) {
                *d = -g / gnorm.max(1.0);
            }
            slope = dot(&grad, &direction);
        }

        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            for ((t, x), d) in trial.iter_mut().zip(&theta).zip(&direction) {
                *t = x + step * d;
            }
            let trial_value = f(&trial, &mut trial_grad);
            let slack = 4.0 * f64::EPSILON * value.abs();
            if trial_value.is_finite() && trial_value <= value + 1e-4 * step * slope + slack {
                let s: Vec<f64> = trial.iter().zip(&theta).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = trial_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
                let sy = dot(&s, &y);
                if sy > 1e-12 * norm(&s) * norm(&y) && sy > 0.0 {
                    if s_hist.len() == options.history {
                        s_hist.remove(0);
                        y_hist.remove(0);
                        rho_hist.remove(0);
                    }
                    rho_hist.push(1.0 / sy);
                    s_hist.push(s);
                    y_hist.push(y);
                }
                theta.copy_from_slice(&trial);
                grad.copy_from_slice(&trial_grad);
                value = trial_value;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    LbfgsState {
        gradient_norm: norm(&grad),
        theta,
        value,
        iterations,
    }
}
