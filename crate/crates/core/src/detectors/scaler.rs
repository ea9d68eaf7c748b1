use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalerMode {
    /// Min-max to `[0, 1]` on training rows, then zero mean / unit variance.
    MinmaxThenStandardize,
    StandardizeOnly,
}

/// Per-column statistics learned from training rows only.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalerParams {
    pub mode: ScalerMode,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ScalerParams {
    pub fn cols(&self) -> usize {
        self.mean.len()
    }

    fn minmax(&self, c: usize, v: f64) -> f64 {
        let range = self.max[c] - self.min[c];
        let range = if range > 0.0 { range } else { 1.0 };
        (v - self.min[c]) / range
    }

    fn transform_value(&self, c: usize, v: f64) -> f64 {
        let v = match self.mode {
            ScalerMode::MinmaxThenStandardize => self.minmax(c, v),
            ScalerMode::StandardizeOnly => v,
        };
        (v - self.mean[c]) / self.std[c]
    }
}

pub fn fit_scaler(x_train: &Matrix, mode: ScalerMode) -> Result<ScalerParams> {
    if x_train.rows() == 0 || x_train.cols() == 0 {
        return Err(Error::Dimension(
            "cannot fit a scaler on an empty matrix".into(),
        ));
    }
    let n = x_train.rows() as f64;
    let cols = x_train.cols();
    let mut min = vec![f64::INFINITY; cols];
    let mut max = vec![f64::NEG_INFINITY; cols];
    for row in x_train.iter_rows() {
        for (c, &v) in row.iter().enumerate() {
            min[c] = min[c].min(v);
            max[c] = max[c].max(v);
        }
    }
    let mut params = ScalerParams {
        mode,
        min,
        max,
        mean: vec![0.0; cols],
        std: vec![1.0; cols],
    };
    let stage1 = |p: &ScalerParams, c: usize, v: f64| match mode {
        ScalerMode::MinmaxThenStandardize => p.minmax(c, v),
        ScalerMode::StandardizeOnly => v,
    };
    let mut mean = vec![0.0; cols];
    for row in x_train.iter_rows() {
        for (c, &v) in row.iter().enumerate() {
            mean[c] += stage1(&params, c, v);
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; cols];
    for row in x_train.iter_rows() {
        for (c, &v) in row.iter().enumerate() {
            let d = stage1(&params, c, v) - mean[c];
            var[c] += d * d;
        }
    }
    params.mean = mean;
    params.std = var
        .into_iter()
        .map(|v| {
            let s = (v / n).sqrt();
            if s > 0.0 {
                s
            } else {
                1.0
            }
        })
        .collect();
    Ok(params)
}

pub fn apply_scaler(params: &ScalerParams, x: &Matrix) -> Result<Matrix> {
    if x.cols() != params.cols() {
        return Err(Error::Dimension(format!(
            "scaler fitted on {} columns, matrix has {}",
            params.cols(),
            x.cols()
        )));
    }
    Ok(x.map_columns(|c, v| params.transform_value(c, v)))
}

/// Min-max stage only, for inspecting the `[0, 1]` intermediate.
pub fn minmax_only(params: &ScalerParams, x: &Matrix) -> Result<Matrix> {
    if x.cols() != params.cols() {
        return Err(Error::Dimension("column count mismatch".into()));
    }
    Ok(x.map_columns(|c, v| params.minmax(c, v)))
}
