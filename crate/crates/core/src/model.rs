//! Ridge-penalized binary logistic regression fitted by Newton's method.

use serde::{Deserialize, Serialize};

use crate::datagen::{Label, Matrix};
use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogisticConfig {
    pub max_iter: usize,
    /// Convergence threshold on the max-norm of the penalized gradient.
    pub tol: f64,
    /// L2 penalty on the weights; the intercept is not penalized.
    pub ridge: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-8,
            ridge: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl TrainedModel {
    #[inline]
    pub fn logit(&self, x: &[f64]) -> f64 {
        self.intercept + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }

    /// Ties (logit exactly zero) classify as positive.
    #[inline]
    pub fn classify(&self, x: &[f64]) -> Label {
        if self.logit(x) >= 0.0 {
            Label::Positive
        } else {
            Label::Negative
        }
    }
}

pub fn fit_logistic(
    features: &Matrix,
    labels: &[Label],
    config: &LogisticConfig,
) -> Result<TrainedModel> {
    let n = features.rows();
    let p = features.cols();
    if labels.len() != n {
        return Err(Error::Shape(format!(
            "{n} rows but {} labels",
            labels.len()
        )));
    }
    if p == 0 {
        return Err(invalid("at least one feature is required"));
    }
    if features.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(invalid("features must be finite"));
    }
    let y: Vec<f64> = labels
        .iter()
        .map(|l| if l.is_positive() { 1.0 } else { 0.0 })
        .collect();
    fit_design(features.as_slice(), &y, p, config)
}

/// Penalized negative log-likelihood, its gradient and Hessian (upper
/// triangle, intercept at index 0).
fn evaluate(
    x: &[f64],
    y: &[f64],
    p: usize,
    beta: &[f64],
    ridge: f64,
    g: &mut [f64],
    h: &mut [f64],
) -> f64 {
    let q = p + 1;
    g.iter_mut().for_each(|v| *v = 0.0);
    h.iter_mut().for_each(|v| *v = 0.0);
    let mut loss = 0.0;
    for (row, &yi) in x.chunks_exact(p).zip(y) {
        let mut z = beta[0];
        for (w, v) in beta[1..].iter().zip(row) {
            z += w * v;
        }
        // log(1 + e^z) and sigmoid(z) without overflow.
        let (softplus, prob) = if z >= 0.0 {
            let e = (-z).exp();
            (z + e.ln_1p(), 1.0 / (1.0 + e))
        } else {
            let e = z.exp();
            (e.ln_1p(), e / (1.0 + e))
        };
        loss += softplus - yi * z;
        let r = prob - yi;
        let s = prob * (1.0 - prob);
        g[0] += r;
        h[0] += s;
        for j in 0..p {
            let xj = row[j];
            g[j + 1] += r * xj;
            let sx = s * xj;
            h[j + 1] += sx;
            let base = (j + 1) * q;
            for k in j..p {
                h[base + k + 1] += sx * row[k];
            }
        }
    }
    for j in 1..q {
        loss += 0.5 * ridge * beta[j] * beta[j];
        g[j] += ridge * beta[j];
        h[j * q + j] += ridge;
    }
    loss
}

/// Solves `h * d = rhs` for symmetric positive-definite `h` given by its upper
/// triangle. Returns `false` if the factorization breaks down.
fn cholesky_solve(h: &[f64], q: usize, rhs: &[f64], out: &mut [f64], l: &mut [f64]) -> bool {
    // l holds the lower factor, row-major.
    for i in 0..q {
        for j in 0..=i {
            let mut sum = h[j * q + i];
            for k in 0..j {
                sum -= l[i * q + k] * l[j * q + k];
            }
            if i == j {
                if !(sum > 0.0) || !sum.is_finite() {
                    return false;
                }
                l[i * q + i] = sum.sqrt();
            } else {
                l[i * q + j] = sum / l[j * q + j];
            }
        }
    }
    for i in 0..q {
        let mut sum = rhs[i];
        for k in 0..i {
            sum -= l[i * q + k] * out[k];
        }
        out[i] = sum / l[i * q + i];
    }
    for i in (0..q).rev() {
        let mut sum = out[i];
        for k in i + 1..q {
            sum -= l[k * q + i] * out[k];
        }
        out[i] = sum / l[i * q + i];
    }
    true
}

/// Newton iterations on a row-major `n x p` design with 0/1 targets. Inputs
/// are assumed validated.
pub(crate) fn fit_design(
    x: &[f64],
    y: &[f64],
    p: usize,
    config: &LogisticConfig,
) -> Result<TrainedModel> {
    let n = y.len();
    if n < 2 {
        return Err(Error::InvalidTrainingSet(
            "need at least two samples".into(),
        ));
    }
    let positives = y.iter().filter(|&&v| v > 0.5).count();
    if positives == 0 || positives == n {
        return Err(Error::InvalidTrainingSet(
            "training labels contain a single class".into(),
        ));
    }

    let q = p + 1;
    let mut beta = vec![0.0; q];
    let mut g = vec![0.0; q];
    let mut h = vec![0.0; q * q];
    let mut dir = vec![0.0; q];
    let mut rhs = vec![0.0; q];
    let mut chol = vec![0.0; q * q];
    let mut prev_beta = vec![0.0; q];
    let mut prev_loss = f64::INFINITY;
    let mut step = 1.0;
    let mut backtracks = 0;
    let mut iterations = 0;
    let mut converged = false;

    loop {
        let loss = evaluate(x, y, p, &beta, config.ridge, &mut g, &mut h);
        if iterations > 0 && loss > prev_loss + 1e-12 * (1.0 + prev_loss.abs()) && backtracks < 40 {
            step *= 0.5;
            backtracks += 1;
            for j in 0..q {
                beta[j] = prev_beta[j] + step * dir[j];
            }
            continue;
        }
        let gmax = g.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        if gmax < config.tol {
            converged = true;
            break;
        }
        if iterations >= config.max_iter {
            break;
        }
        for j in 0..q {
            rhs[j] = -g[j];
        }
        if !cholesky_solve(&h, q, &rhs, &mut dir, &mut chol) {
            dir.copy_from_slice(&rhs);
        }
        prev_beta.copy_from_slice(&beta);
        prev_loss = loss;
        step = 1.0;
        backtracks = 0;
        for j in 0..q {
            beta[j] += dir[j];
        }
        iterations += 1;
    }

    Ok(TrainedModel {
        intercept: beta[0],
        weights: beta[1..].to_vec(),
        converged,
        iterations,
    })
}

pub fn predict(model: &TrainedModel, features: &Matrix) -> Result<Vec<Label>> {
    if features.cols() != model.weights.len() {
        return Err(Error::Shape(format!(
            "model expects {} features, got {}",
            model.weights.len(),
            features.cols()
        )));
    }
    Ok((0..features.rows())
        .map(|r| model.classify(features.row(r)))
        .collect())
}

pub fn accuracy(predicted: &[Label], actual: &[Label]) -> Result<f64> {
    if predicted.len() != actual.len() {
        return Err(Error::Shape(format!(
            "{} predictions vs {} labels",
            predicted.len(),
            actual.len()
        )));
    }
    if predicted.is_empty() {
        return Err(invalid("accuracy of an empty set"));
    }
    let hits = predicted.iter().zip(actual).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / predicted.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate, DatasetSpec};
    use crate::rng::Stream;
    use rand::Rng;

    fn cfg() -> LogisticConfig {
        LogisticConfig::default()
    }

    /// Penalized log-likelihood (the quantity being maximized).
    fn loglik(x: &Matrix, y: &[Label], beta0: f64, w: &[f64], ridge: f64) -> f64 {
        let mut ll = 0.0;
        for r in 0..x.rows() {
            let z = beta0 + w.iter().zip(x.row(r)).map(|(a, b)| a * b).sum::<f64>();
            let t = if y[r].is_positive() { 1.0 } else { 0.0 };
            ll += t * z - (1.0 + z.exp()).ln();
        }
        ll - 0.5 * ridge * w.iter().map(|v| v * v).sum::<f64>()
    }

    #[test]
    fn separable_1d() {
        let x = Matrix::new(4, 1, vec![10.0, 11.0, -10.0, -12.0]).unwrap();
        let y = vec![
            Label::Positive,
            Label::Positive,
            Label::Negative,
            Label::Negative,
        ];
        let model = fit_logistic(&x, &y, &cfg()).unwrap();
        let pred = predict(&model, &x).unwrap();
        assert_eq!(accuracy(&pred, &y).unwrap(), 1.0);
        assert!(model.iterations <= 100);
    }

    #[test]
    fn coin_flip_labels_give_small_weight() {
        let mut s = Stream::from_seed(11);
        let n = 10_000;
        let xs: Vec<f64> = (0..n).map(|_| s.standard_normal()).collect();
        let y: Vec<Label> = (0..n)
            .map(|_| {
                if s.random_bool(0.5) {
                    Label::Positive
                } else {
                    Label::Negative
                }
            })
            .collect();
        let model = fit_logistic(&Matrix::new(n, 1, xs).unwrap(), &y, &cfg()).unwrap();
        assert!(model.converged);
        assert!(model.weights[0].abs() < 0.1, "weight {}", model.weights[0]);
    }

    #[test]
    fn recovers_direction_of_effect() {
        let spec = DatasetSpec::balanced(5_000, 2, 1, 0.8).with_seed(3);
        let ds = generate(&spec).unwrap();
        let model = fit_logistic(ds.features(), ds.labels(), &cfg()).unwrap();
        assert!(model.weights[0] > 0.0);
        assert!(model.weights[0].abs() > 5.0 * model.weights[1].abs());
    }

    #[test]
    fn gradient_vanishes_at_optimum() {
        let ds = generate(&DatasetSpec::balanced(20, 3, 2, 0.9).with_seed(5)).unwrap();
        let c = cfg();
        let model = fit_logistic(ds.features(), ds.labels(), &c).unwrap();
        assert!(model.converged);
        let h = 1e-5;
        let mut params = vec![model.intercept];
        params.extend(&model.weights);
        for j in 0..params.len() {
            let f = |delta: f64| {
                let mut p = params.clone();
                p[j] += delta;
                loglik(ds.features(), ds.labels(), p[0], &p[1..], c.ridge)
            };
            let fd = (f(h) - f(-h)) / (2.0 * h);
            assert!(fd.abs() < 10.0 * c.tol, "component {j}: {fd:e}");
        }
    }

    #[test]
    fn label_swap_negates_parameters() {
        let ds = generate(&DatasetSpec::balanced(30, 3, 2, 0.7).with_seed(8)).unwrap();
        let a = fit_logistic(ds.features(), ds.labels(), &cfg()).unwrap();
        let flipped: Vec<Label> = ds.labels().iter().map(|l| l.flipped()).collect();
        let b = fit_logistic(ds.features(), &flipped, &cfg()).unwrap();
        assert!((a.intercept + b.intercept).abs() < 1e-6);
        for (u, v) in a.weights.iter().zip(&b.weights) {
            assert!((u + v).abs() < 1e-6);
        }
    }

    #[test]
    fn column_scaling_keeps_predictions() {
        let ds = generate(&DatasetSpec::balanced(40, 3, 2, 1.0).with_seed(21)).unwrap();
        let base = fit_logistic(ds.features(), ds.labels(), &cfg()).unwrap();
        let mut scaled = ds.features().clone();
        for r in 0..scaled.rows() {
            scaled.set(r, 1, 7.5 * scaled.get(r, 1));
        }
        let other = fit_logistic(&scaled, ds.labels(), &cfg()).unwrap();
        assert_eq!(
            predict(&base, ds.features()).unwrap(),
            predict(&other, &scaled).unwrap()
        );
    }

    #[test]
    fn single_class_rejected() {
        let x = Matrix::new(3, 1, vec![1.0, 2.0, 3.0]).unwrap();
        let y = vec![Label::Positive; 3];
        assert!(matches!(
            fit_logistic(&x, &y, &cfg()),
            Err(Error::InvalidTrainingSet(_))
        ));
    }

    #[test]
    fn non_finite_rejected() {
        let x = Matrix::new(2, 1, vec![1.0, f64::NAN]).unwrap();
        let y = vec![Label::Positive, Label::Negative];
        assert!(matches!(
            fit_logistic(&x, &y, &cfg()),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn non_convergence_is_reported_not_raised() {
        let x = Matrix::new(4, 1, vec![1.0, 2.0, -1.0, -2.0]).unwrap();
        let y = vec![
            Label::Positive,
            Label::Positive,
            Label::Negative,
            Label::Negative,
        ];
        let c = LogisticConfig {
            max_iter: 2,
            ..cfg()
        };
        let model = fit_logistic(&x, &y, &c).unwrap();
        assert!(!model.converged);
        assert_eq!(model.iterations, 2);
    }

    #[test]
    fn predict_conventions() {
        let zero = TrainedModel {
            weights: vec![0.0],
            intercept: 0.0,
            converged: true,
            iterations: 0,
        };
        let x = Matrix::new(2, 1, vec![5.0, -5.0]).unwrap();
        assert_eq!(predict(&zero, &x).unwrap(), vec![Label::Positive; 2]);
        let unit = TrainedModel {
            weights: vec![1.0],
            ..zero.clone()
        };
        let x = Matrix::new(1, 1, vec![-3.0]).unwrap();
        assert_eq!(predict(&unit, &x).unwrap(), vec![Label::Negative]);
        let wide = Matrix::new(1, 2, vec![0.0, 0.0]).unwrap();
        assert!(matches!(predict(&unit, &wide), Err(Error::Shape(_))));
    }

    #[test]
    fn accuracy_arithmetic() {
        use Label::*;
        let a = [Positive, Negative, Positive, Positive];
        assert_eq!(accuracy(&a, &a).unwrap(), 1.0);
        let flipped: Vec<Label> = a.iter().map(|l| l.flipped()).collect();
        assert_eq!(accuracy(&a, &flipped).unwrap(), 0.0);
        let b = [Positive, Negative, Positive, Negative];
        assert_eq!(accuracy(&a, &b).unwrap(), 0.75);
        assert!(matches!(accuracy(&a, &b[..3]), Err(Error::Shape(_))));
    }
}
