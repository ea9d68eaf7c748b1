use serde::{Deserialize, Serialize};

use super::{apply_scaler, fit_scaler, sigmoid, Matrix, ScalerMode, ScalerParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LogRegParams {
    pub l2: f64,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for LogRegParams {
    fn default() -> Self {
        LogRegParams {
            l2: 1e-3,
            epochs: 500,
            learning_rate: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRegModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub scaler: ScalerParams,
}

pub(crate) fn check_binary(y: &[u8], rows: usize) -> Result<()> {
    if y.len() != rows {
        return Err(Error::Dimension(format!(
            "{} labels for {rows} rows",
            y.len()
        )));
    }
    let pos = y.iter().filter(|&&v| v == 1).count();
    if pos == 0 || pos == y.len() {
        return Err(Error::Training("both classes must be present".into()));
    }
    if y.iter().any(|&v| v > 1) {
        return Err(Error::Domain("labels must be 0 or 1".into()));
    }
    Ok(())
}

/// Full-batch gradient descent on L2-regularised mean log loss, after the
/// min-max-then-standardize transform fitted on `x`.
pub fn logreg_fit(x: &Matrix, y: &[u8], params: &LogRegParams) -> Result<LogRegModel> {
    check_binary(y, x.rows())?;
    let scaler = fit_scaler(x, ScalerMode::MinmaxThenStandardize)?;
    let z = apply_scaler(&scaler, x)?;
    let (n, d) = (z.rows() as f64, z.cols());
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    for _ in 0..params.epochs {
        let mut gw = vec![0.0; d];
        let mut gb = 0.0;
        for (row, &t) in z.iter_rows().zip(y) {
            let p = sigmoid(dot(&w, row) + b);
            let r = p - t as f64;
            gb += r;
            for (g, v) in gw.iter_mut().zip(row) {
                *g += r * v;
            }
        }
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= params.learning_rate * (g / n + params.l2 * *wi);
        }
        b -= params.learning_rate * gb / n;
    }
    Ok(LogRegModel {
        weights: w,
        bias: b,
        scaler,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl LogRegModel {
    pub fn score(&self, x: &Matrix) -> Result<Vec<f64>> {
        let z = apply_scaler(&self.scaler, x)?;
        Ok(z.iter_rows()
            .map(|r| sigmoid(dot(&self.weights, r) + self.bias))
            .collect())
    }
}

pub fn logreg_score(model: &LogRegModel, x: &Matrix) -> Result<Vec<f64>> {
    model.score(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::auc_roc;

    #[test]
    fn separable_line() {
        let x = Matrix::new(6, 1, vec![-1.0, -1.0, -1.0, 1.0, 1.0, 1.0]).unwrap();
        let y = [0, 0, 0, 1, 1, 1];
        let m = logreg_fit(&x, &y, &LogRegParams::default()).unwrap();
        let s = m.score(&x).unwrap();
        assert!(s[0] < s[3]);
        assert_eq!(auc_roc(&s, &y).unwrap(), 1.0);
    }

    #[test]
    fn zero_epochs_stays_at_half() {
        let x = Matrix::new(4, 2, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 9.0]).unwrap();
        let m = logreg_fit(
            &x,
            &[0, 1, 0, 1],
            &LogRegParams {
                epochs: 0,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(m.weights.iter().all(|&w| w == 0.0));
        assert!(m.score(&x).unwrap().iter().all(|&p| p == 0.5));
    }

    #[test]
    fn conflicting_duplicates_approach_empirical_frequency() {
        // Point A carries 3 positives / 1 negative, point B 1 / 3.
        let x = Matrix::new(8, 1, vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]).unwrap();
        let y = [1, 1, 1, 0, 1, 0, 0, 0];
        let params = LogRegParams {
            l2: 0.0,
            epochs: 5000,
            learning_rate: 0.5,
        };
        let m = logreg_fit(&x, &y, &params).unwrap();
        let s = m.score(&x).unwrap();
        assert!((s[0] - 0.75).abs() < 1e-3, "{}", s[0]);
        assert!((s[4] - 0.25).abs() < 1e-3, "{}", s[4]);
    }

    #[test]
    fn single_class_rejected() {
        let x = Matrix::new(3, 1, vec![1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(
            logreg_fit(&x, &[1, 1, 1], &LogRegParams::default()),
            Err(Error::Training(_))
        ));
    }

    #[test]
    fn stored_scaler_reproduces_training_transform() {
        let x = Matrix::new(4, 2, vec![0.0, 10.0, 2.0, 30.0, 3.0, -5.0, 10.0, 1.0]).unwrap();
        let m = logreg_fit(&x, &[0, 1, 0, 1], &LogRegParams::default()).unwrap();
        let refit = fit_scaler(&x, ScalerMode::MinmaxThenStandardize).unwrap();
        assert_eq!(refit, m.scaler);
        assert_eq!(
            apply_scaler(&refit, &x).unwrap(),
            apply_scaler(&m.scaler, &x).unwrap()
        );
    }
}
