//! Curve fitting: two-term exponentials, power curves, quadratics and planes,
//! plus the RMSE / MPE error metrics.
//!
//! Linear fits go through a Householder QR least-squares solve. Nonlinear fits
//! use a Levenberg-Marquardt-damped Gauss-Newton iteration started from a fixed
//! schedule of nonlinear parameters; for each start the linear coefficients are
//! initialised by least squares. The lowest-residual result wins, so fits are
//! deterministic for identical inputs.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Minimizes `||a x - b||` for a row-major `rows x cols` matrix `a`.
/// Fails when `a` is numerically rank deficient.
pub(crate) fn lstsq(a: &[f64], rows: usize, cols: usize, b: &[f64]) -> Result<Vec<f64>> {
    if rows < cols {
        return Err(fit_failure("fewer observations than coefficients"));
    }
    let mut r = a.to_vec();
    let mut qtb = b.to_vec();
    for j in 0..cols {
        let col_norm = (0..rows)
            .map(|i| a[i * cols + j].powi(2))
            .sum::<f64>()
            .sqrt();
        let norm = (j..rows)
            .map(|i| r[i * cols + j].powi(2))
            .sum::<f64>()
            .sqrt();
        if !(norm > 1e-10 * col_norm) || col_norm == 0.0 {
            return Err(fit_failure("design matrix is rank deficient"));
        }
        let alpha = if r[j * cols + j] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (j..rows).map(|i| r[i * cols + j]).collect();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        for c in j..cols {
            let dot: f64 = (j..rows).map(|i| v[i - j] * r[i * cols + c]).sum();
            let f = 2.0 * dot / vnorm2;
            for i in j..rows {
                r[i * cols + c] -= f * v[i - j];
            }
        }
        let dot: f64 = (j..rows).map(|i| v[i - j] * qtb[i]).sum();
        let f = 2.0 * dot / vnorm2;
        for i in j..rows {
            qtb[i] -= f * v[i - j];
        }
    }
    let mut x = vec![0.0; cols];
    for j in (0..cols).rev() {
        let mut s = qtb[j];
        for c in j + 1..cols {
            s -= r[j * cols + c] * x[c];
        }
        x[j] = s / r[j * cols + j];
    }
    Ok(x)
}

fn fit_failure(msg: &str) -> Error {
    Error::FitFailure {
        message: msg.to_string(),
        best_residual: f64::NAN,
    }
}

fn check_xy(x: &[f64], y: &[f64], min: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!(
            "{} x values vs {} y values",
            x.len(),
            y.len()
        )));
    }
    if x.len() < min {
        return Err(invalid(format!(
            "need at least {min} points, got {}",
            x.len()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(invalid("fit data must be finite"));
    }
    Ok(())
}

fn rms(r: &[f64]) -> f64 {
    (r.iter().map(|v| v * v).sum::<f64>() / r.len() as f64).sqrt()
}

/// Outcome of one damped Gauss-Newton run.
struct Solved {
    params: Vec<f64>,
    cost: f64,
    converged: bool,
}

/// Levenberg-Marquardt on `residual(params)`; `jacobian` fills a row-major
/// `n x q` matrix.
fn levenberg_marquardt<R, J>(start: Vec<f64>, n: usize, residual: R, jacobian: J) -> Option<Solved>
where
    R: Fn(&[f64], &mut [f64]),
    J: Fn(&[f64], &mut [f64]),
{
    let q = start.len();
    let mut params = start;
    let mut r = vec![0.0; n];
    residual(&params, &mut r);
    let mut cost: f64 = r.iter().map(|v| v * v).sum();
    if !cost.is_finite() {
        return None;
    }
    let mut jac = vec![0.0; n * q];
    let mut aug = vec![0.0; (n + q) * q];
    let mut rhs = vec![0.0; n + q];
    let mut trial = vec![0.0; q];
    let mut r_trial = vec![0.0; n];
    let mut mu: f64 = 1e-3;
    let mut converged = false;

    for _ in 0..2000 {
        if cost == 0.0 {
            converged = true;
            break;
        }
        jacobian(&params, &mut jac);
        let scale: Vec<f64> = (0..q)
            .map(|j| {
                (0..n)
                    .map(|i| jac[i * q + j].powi(2))
                    .sum::<f64>()
                    .sqrt()
                    .max(1e-12)
            })
            .collect();
        let mut accepted = false;
        while mu < 1e20 {
            aug[..n * q].copy_from_slice(&jac);
            aug[n * q..].iter_mut().for_each(|v| *v = 0.0);
            for j in 0..q {
                aug[(n + j) * q + j] = mu.sqrt() * scale[j];
            }
            for i in 0..n {
                rhs[i] = -r[i];
            }
            rhs[n..].iter_mut().for_each(|v| *v = 0.0);
            let Ok(step) = lstsq(&aug, n + q, q, &rhs) else {
                mu *= 10.0;
                continue;
            };
            for j in 0..q {
                trial[j] = params[j] + step[j];
            }
            residual(&trial, &mut r_trial);
            let trial_cost: f64 = r_trial.iter().map(|v| v * v).sum();
            if trial_cost.is_finite() && trial_cost <= cost {
                let step_norm = step.iter().map(|v| v * v).sum::<f64>().sqrt();
                let param_norm = params.iter().map(|v| v * v).sum::<f64>().sqrt();
                let improvement = cost - trial_cost;
                params.copy_from_slice(&trial);
                r.copy_from_slice(&r_trial);
                cost = trial_cost;
                mu = (mu / 3.0).max(1e-12);
                accepted = true;
                if step_norm < 1e-9 * (param_norm + 1e-9) || improvement <= 1e-30 {
                    converged = true;
                }
                break;
            }
            mu *= 4.0;
        }
        if !accepted || converged {
            break;
        }
    }
    Some(Solved {
        params,
        cost,
        converged,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpFit {
    /// `y = theta[0] * exp(theta[1] * x) + theta[2] * exp(theta[3] * x)`.
    pub theta: [f64; 4],
    pub residual_rmse: f64,
    pub converged: bool,
}

impl ExpFit {
    pub fn predict(&self, x: f64) -> f64 {
        let [a, b, c, d] = self.theta;
        a * (b * x).exp() + c * (d * x).exp()
    }
}

/// Rates (in units of `1 / max|x|`) tried for the two exponentials.
const EXP_STARTS: [(f64, f64); 8] = [
    (-10.0, 0.0),
    (-1.0, 0.0),
    (1.0, 0.0),
    (10.0, 0.0),
    (-10.0, -0.1),
    (-1.0, -0.1),
    (1.0, -0.1),
    (10.0, -0.1),
];

pub fn fit_two_term_exp(x: &[f64], y: &[f64]) -> Result<ExpFit> {
    check_xy(x, y, 5)?;
    if x.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("x must be strictly increasing"));
    }
    let s = x.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let s = if s > 0.0 { s } else { 1.0 };
    let u: Vec<f64> = x.iter().map(|v| v / s).collect();
    let n = u.len();

    let residual = |p: &[f64], out: &mut [f64]| {
        for i in 0..n {
            out[i] = p[0] * (p[1] * u[i]).exp() + p[2] * (p[3] * u[i]).exp() - y[i];
        }
    };
    let jacobian = |p: &[f64], out: &mut [f64]| {
        for i in 0..n {
            let e1 = (p[1] * u[i]).exp();
            let e2 = (p[3] * u[i]).exp();
            out[i * 4] = e1;
            out[i * 4 + 1] = p[0] * u[i] * e1;
            out[i * 4 + 2] = e2;
            out[i * 4 + 3] = p[2] * u[i] * e2;
        }
    };

    let mut best: Option<Solved> = None;
    for (k1, k2) in EXP_STARTS {
        let design: Vec<f64> = u
            .iter()
            .flat_map(|&ui| [(k1 * ui).exp(), (k2 * ui).exp()])
            .collect();
        let Ok(lin) = lstsq(&design, n, 2, y) else {
            continue;
        };
        let Some(run) = levenberg_marquardt(vec![lin[0], k1, lin[1], k2], n, residual, jacobian)
        else {
            continue;
        };
        if best.as_ref().is_none_or(|b| run.cost < b.cost) {
            best = Some(run);
        }
    }
    let best = best.ok_or(Error::FitFailure {
        message: "every start diverged".into(),
        best_residual: f64::INFINITY,
    })?;
    let p = &best.params;
    let fit = ExpFit {
        theta: [p[0], p[1] / s, p[2], p[3] / s],
        residual_rmse: (best.cost / n as f64).sqrt(),
        converged: best.converged,
    };
    if x.iter().any(|&v| !fit.predict(v).is_finite()) {
        return Err(Error::FitFailure {
            message: "fitted curve is not finite over the data range".into(),
            best_residual: fit.residual_rmse,
        });
    }
    Ok(fit)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FitDiagnostic {
    /// The data carry no information about the exponent.
    Degenerate,
    /// Required-n curves should fall with D; this fit has `b >= 0`.
    NonNegativeExponent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerFit {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub residual_rmse: f64,
    pub converged: bool,
    pub diagnostics: Vec<FitDiagnostic>,
}

impl PowerFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.a * x.powf(self.b) + self.c
    }
}

const POWER_STARTS: [f64; 8] = [-3.0, -2.0, -1.0, -0.5, 0.5, 1.0, 2.0, 3.0];

/// Fits `n = a * d^b + c`.
pub fn fit_power_curve(d_values: &[f64], n_values: &[f64]) -> Result<PowerFit> {
    check_xy(d_values, n_values, 4)?;
    if d_values.iter().any(|&d| d <= 0.0) {
        return Err(invalid("d values must be positive"));
    }
    if d_values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("d values must be strictly increasing"));
    }
    let x = d_values;
    let y = n_values;
    let n = x.len();
    let lnx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let residual = |p: &[f64], out: &mut [f64]| {
        for i in 0..n {
            out[i] = p[0] * (p[1] * lnx[i]).exp() + p[2] - y[i];
        }
    };
    let jacobian = |p: &[f64], out: &mut [f64]| {
        for i in 0..n {
            let e = (p[1] * lnx[i]).exp();
            out[i * 3] = e;
            out[i * 3 + 1] = p[0] * lnx[i] * e;
            out[i * 3 + 2] = 1.0;
        }
    };

    let mut best: Option<Solved> = None;
    for b in POWER_STARTS {
        let design: Vec<f64> = lnx.iter().flat_map(|&l| [(b * l).exp(), 1.0]).collect();
        let Ok(lin) = lstsq(&design, n, 2, y) else {
            continue;
        };
        let Some(run) = levenberg_marquardt(vec![lin[0], b, lin[1]], n, residual, jacobian) else {
            continue;
        };
        if best.as_ref().is_none_or(|r| run.cost < r.cost) {
            best = Some(run);
        }
    }
    let best = best.ok_or(Error::FitFailure {
        message: "every start diverged".into(),
        best_residual: f64::INFINITY,
    })?;
    let (a, b, c) = (best.params[0], best.params[1], best.params[2]);
    let mut diagnostics = Vec::new();
    let terms: Vec<f64> = lnx.iter().map(|l| a * (b * l).exp()).collect();
    let spread = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - terms.iter().cloned().fold(f64::INFINITY, f64::min);
    let mean_y = y.iter().sum::<f64>() / n as f64;
    if spread <= 1e-9 * mean_y.abs().max(1.0) {
        diagnostics.push(FitDiagnostic::Degenerate);
    } else if b >= 0.0 {
        diagnostics.push(FitDiagnostic::NonNegativeExponent);
    }
    Ok(PowerFit {
        a,
        b,
        c,
        residual_rmse: (best.cost / n as f64).sqrt(),
        converged: best.converged,
        diagnostics,
    })
}

/// Ordinary least squares `y = c0 + c1 x + c2 x^2`; returns `[c0, c1, c2]`.
pub fn fit_quadratic(x: &[f64], y: &[f64]) -> Result<[f64; 3]> {
    check_xy(x, y, 3)?;
    let design: Vec<f64> = x.iter().flat_map(|&v| [1.0, v, v * v]).collect();
    let c = lstsq(&design, x.len(), 3, y)?;
    Ok([c[0], c[1], c[2]])
}

pub fn eval_quadratic(coef: &[f64; 3], x: f64) -> f64 {
    coef[0] + coef[1] * x + coef[2] * x * x
}

/// `value = intercept + coef_l * l + coef_m * m`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneFit {
    pub intercept: f64,
    pub coef_l: f64,
    pub coef_m: f64,
}

impl PlaneFit {
    pub fn eval(&self, l: f64, m: f64) -> f64 {
        self.intercept + self.coef_l * l + self.coef_m * m
    }
}

/// OLS plane through `((l, m), value)` points.
pub fn fit_plane(points: &[((f64, f64), f64)]) -> Result<PlaneFit> {
    if points.len() < 3 {
        return Err(invalid("need at least three points"));
    }
    let design: Vec<f64> = points
        .iter()
        .flat_map(|((l, m), _)| [1.0, *l, *m])
        .collect();
    let values: Vec<f64> = points.iter().map(|p| p.1).collect();
    let c = lstsq(&design, points.len(), 3, &values).map_err(|_| Error::FitFailure {
        message: "(l, m) design points are collinear".into(),
        best_residual: f64::NAN,
    })?;
    Ok(PlaneFit {
        intercept: c[0],
        coef_l: c[1],
        coef_m: c[2],
    })
}

fn check_pair(predicted: &[f64], actual: &[f64]) -> Result<()> {
    if predicted.len() != actual.len() {
        return Err(Error::Shape(format!(
            "{} predictions vs {} actual values",
            predicted.len(),
            actual.len()
        )));
    }
    if predicted.is_empty() {
        return Err(invalid("empty input"));
    }
    Ok(())
}

pub fn rmse(predicted: &[f64], actual: &[f64]) -> Result<f64> {
    check_pair(predicted, actual)?;
    let diff: Vec<f64> = predicted.iter().zip(actual).map(|(p, a)| p - a).collect();
    Ok(rms(&diff))
}

/// Mean percent magnitude error, `100 * mean(|pred - actual| / |actual|)`.
pub fn mpe(predicted: &[f64], actual: &[f64]) -> Result<f64> {
    check_pair(predicted, actual)?;
    if actual.iter().any(|&a| a == 0.0) {
        return Err(Error::Degenerate(
            "mpe is undefined when an actual value is zero".into(),
        ));
    }
    let total: f64 = predicted
        .iter()
        .zip(actual)
        .map(|(p, a)| ((p - a) / a).abs())
        .sum();
    Ok(100.0 * total / actual.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_round_trip() {
        let truth = ExpFit {
            theta: [0.3, -0.01, 0.5, -0.0001],
            residual_rmse: 0.0,
            converged: true,
        };
        let x: Vec<f64> = (1..=20).map(|i| 25.0 * i as f64).collect();
        let y: Vec<f64> = x.iter().map(|&v| truth.predict(v)).collect();
        let fit = fit_two_term_exp(&x, &y).unwrap();
        assert!(fit.residual_rmse < 1e-6, "rmse {}", fit.residual_rmse);
        for &v in &x {
            assert!((fit.predict(v) - truth.predict(v)).abs() < 1e-6);
        }
    }

    #[test]
    fn exp_constant() {
        let x: Vec<f64> = (0..8).map(|i| 50.0 + 10.0 * i as f64).collect();
        let y = vec![0.5; 8];
        let fit = fit_two_term_exp(&x, &y).unwrap();
        assert!(fit.residual_rmse < 1e-8);
        assert!((fit.predict(75.0) - 0.5).abs() < 1e-8);
    }

    #[test]
    fn exp_needs_increasing_x_and_points() {
        assert!(fit_two_term_exp(&[1.0, 2.0, 3.0, 4.0], &[1.0; 4]).is_err());
        assert!(fit_two_term_exp(&[1.0, 2.0, 2.0, 4.0, 5.0], &[1.0; 5]).is_err());
    }

    #[test]
    fn quadratic_exact_cases() {
        let x: Vec<f64> = (0..10).map(|i| i as f64 - 3.0).collect();
        let y: Vec<f64> = x.iter().map(|v| v * v).collect();
        let c = fit_quadratic(&x, &y).unwrap();
        assert!(c[0].abs() < 1e-9 && c[1].abs() < 1e-9 && (c[2] - 1.0).abs() < 1e-9);

        let x3 = [1.0, 2.0, 4.0];
        let y3 = [3.0, -1.0, 7.0];
        let c = fit_quadratic(&x3, &y3).unwrap();
        for (xv, yv) in x3.iter().zip(y3) {
            assert!((eval_quadratic(&c, *xv) - yv).abs() < 1e-9);
        }

        let ya: Vec<f64> = x.iter().map(|v| 2.0 - 0.5 * v).collect();
        assert!(fit_quadratic(&x, &ya).unwrap()[2].abs() < 1e-9);
    }

    #[test]
    fn quadratic_rank_deficient() {
        assert!(matches!(
            fit_quadratic(&[1.0, 1.0, 2.0, 2.0], &[0.0, 1.0, 2.0, 3.0]),
            Err(Error::FitFailure { .. })
        ));
    }

    fn eq4_to_6(l: f64, m: f64) -> (f64, f64, f64) {
        (
            39.37 - 6.718 * l + 0.263 * m,
            -1.985 - 0.023 * l + 0.001 * m,
            -0.886 + 1.507 * l - 0.015 * m,
        )
    }

    #[test]
    fn power_round_trip() {
        let (a, b, c) = eq4_to_6(2.0, 20.0);
        let d: Vec<f64> = (4..=10).map(|i| i as f64 / 10.0).collect();
        let n: Vec<f64> = d.iter().map(|&v| a * v.powf(b) + c).collect();
        let fit = fit_power_curve(&d, &n).unwrap();
        assert!(((fit.a - a) / a).abs() < 0.01);
        assert!(((fit.b - b) / b).abs() < 0.01);
        assert!(((fit.c - c) / c).abs() < 0.01);
        assert!(fit.residual_rmse < 1e-6);
        assert!(fit.diagnostics.is_empty());
    }

    #[test]
    fn power_constant_is_degenerate() {
        let d = [0.4, 0.6, 0.8, 1.0];
        let fit = fit_power_curve(&d, &[50.0; 4]).unwrap();
        assert!(fit.residual_rmse < 1e-8);
        assert!(fit.diagnostics.contains(&FitDiagnostic::Degenerate));
    }

    #[test]
    fn power_increasing_data_warns() {
        let d = [0.4, 0.6, 0.8, 1.0, 1.2];
        let n: Vec<f64> = d.iter().map(|v| 10.0 + 30.0 * v).collect();
        let fit = fit_power_curve(&d, &n).unwrap();
        assert!(fit
            .diagnostics
            .contains(&FitDiagnostic::NonNegativeExponent));
    }

    #[test]
    fn plane_from_eq4() {
        let mut pts = Vec::new();
        for m in [10.0, 20.0, 30.0, 40.0] {
            for l in [2.0, 3.0, 4.0] {
                pts.push(((l, m), eq4_to_6(l, m).0));
            }
        }
        let p = fit_plane(&pts).unwrap();
        assert!((p.intercept - 39.37).abs() < 1e-9);
        assert!((p.coef_l + 6.718).abs() < 1e-9);
        assert!((p.coef_m - 0.263).abs() < 1e-9);
    }

    #[test]
    fn plane_degenerate_cases() {
        let pts: Vec<_> = [(2.0, 10.0), (3.0, 10.0), (2.0, 30.0), (4.0, 20.0)]
            .into_iter()
            .map(|p| (p, 7.0))
            .collect();
        let p = fit_plane(&pts).unwrap();
        assert!(p.coef_l.abs() < 1e-12 && p.coef_m.abs() < 1e-12);

        let only_l: Vec<_> = [(2.0, 10.0), (3.0, 10.0), (2.0, 30.0), (4.0, 20.0)]
            .into_iter()
            .map(|(l, m)| ((l, m), 1.0 + 2.0 * l))
            .collect();
        assert!(fit_plane(&only_l).unwrap().coef_m.abs() < 1e-9);

        let collinear: Vec<_> = [(1.0, 2.0), (2.0, 4.0), (3.0, 6.0)]
            .into_iter()
            .map(|p| (p, 1.0))
            .collect();
        assert!(matches!(
            fit_plane(&collinear),
            Err(Error::FitFailure { .. })
        ));
    }

    #[test]
    fn error_metrics() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mpe(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rmse(&[110.0], &[100.0]).unwrap() - 10.0).abs() < 1e-12);
        assert!((mpe(&[110.0], &[100.0]).unwrap() - 10.0).abs() < 1e-12);
        // (10^2 + 20^2) / 2 = 250.
        assert!((rmse(&[90.0, 120.0], &[100.0, 100.0]).unwrap() - 250f64.sqrt()).abs() < 1e-12);
        assert!((mpe(&[90.0, 120.0], &[100.0, 100.0]).unwrap() - 15.0).abs() < 1e-12);
        assert!(matches!(mpe(&[1.0], &[0.0]), Err(Error::Degenerate(_))));
        assert!(matches!(rmse(&[1.0], &[1.0, 2.0]), Err(Error::Shape(_))));
    }
}
