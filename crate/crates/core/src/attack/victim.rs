use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::GrayImage;
use crate::seeds;

const MAGIC: &[u8; 8] = b"TGVICTIM";
const VERSION: u32 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VictimSpec {
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Clean images (balanced across visual classes) used for training.
    pub train_size: usize,
}

impl Default for VictimSpec {
    fn default() -> Self {
        VictimSpec {
            hidden: 32,
            epochs: 200,
            learning_rate: 0.5,
            train_size: 32,
        }
    }
}

/// One-hidden-layer perceptron over flattened pixels.
///
/// `z = w2 · tanh(s · W1 (x - center) + b1) + b2`, `p = sigmoid(z)`. The
/// gain `s` is `1 / sqrt(input_len)`. Centered pixel deviations are small,
/// so hidden units stay in the near-linear part of tanh on natural inputs and
/// the input gradient points the same way for every frame of a class.
#[derive(Debug, Clone, PartialEq)]
pub struct VictimModel {
    pub(crate) input_len: usize,
    pub(crate) center: Array1<f64>,
    pub(crate) w1: Array2<f64>,
    pub(crate) b1: Array1<f64>,
    pub(crate) w2: Array1<f64>,
    pub(crate) b2: f64,
    /// Multiplies the centered input before the first layer.
    pub(crate) gain: f64,
    pub(crate) seed: u64,
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy written in terms of the logit for stability.
fn bce_from_logit(z: f64, y: f64) -> f64 {
    // log(1 + e^z) - y z
    let softplus = if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    };
    softplus - y * z
}

struct Forward {
    hidden: Array1<f64>,
    logit: f64,
}

impl VictimModel {
    /// Assembles a model from explicit parameters.
    pub fn from_parts(
        center: Vec<f64>,
        w1: Array2<f64>,
        b1: Vec<f64>,
        w2: Vec<f64>,
        b2: f64,
    ) -> Result<Self> {
        let n = center.len();
        let h = w2.len();
        if n == 0 || h == 0 {
            return Err(Error::Dimension(
                "victim needs at least one input and hidden unit".into(),
            ));
        }
        if w1.dim() != (h, n) || b1.len() != h {
            return Err(Error::Dimension(format!(
                "W1 is {:?}, b1 has {}; expected ({h}, {n}) and {h}",
                w1.dim(),
                b1.len()
            )));
        }
        Ok(VictimModel {
            input_len: n,
            center: Array1::from(center),
            w1,
            b1: Array1::from(b1),
            w2: Array1::from(w2),
            b2,
            gain: 1.0 / (n as f64).sqrt(),
            seed: 0,
        })
    }

    pub fn input_len(&self) -> usize {
        self.input_len
    }

    pub fn hidden(&self) -> usize {
        self.w2.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    fn check(&self, img: &GrayImage) -> Result<()> {
        if img.len() != self.input_len {
            return Err(Error::Dimension(format!(
                "victim expects {} pixels, image has {} ({}x{})",
                self.input_len,
                img.len(),
                img.width(),
                img.height()
            )));
        }
        Ok(())
    }

    fn forward(&self, x: ArrayView1<f64>) -> Forward {
        let centered = &x - &self.center;
        let pre = self.w1.dot(&centered) * self.gain + &self.b1;
        let hidden = pre.mapv(f64::tanh);
        let logit = self.w2.dot(&hidden) + self.b2;
        Forward { hidden, logit }
    }

    /// Probability of the defect class.
    pub fn predict(&self, img: &GrayImage) -> Result<f64> {
        self.check(img)?;
        Ok(sigmoid(self.forward(ArrayView1::from(img.pixels())).logit))
    }

    pub fn classify(&self, img: &GrayImage) -> Result<u8> {
        Ok(u8::from(self.predict(img)? >= 0.5))
    }

    /// Cross-entropy of the victim at `img` for true label `label`.
    pub fn loss(&self, img: &GrayImage, label: u8) -> Result<f64> {
        self.check(img)?;
        Ok(bce_from_logit(
            self.forward(ArrayView1::from(img.pixels())).logit,
            label as f64,
        ))
    }

    pub(crate) fn gradient_of(&self, x: &[f64], label: u8) -> Vec<f64> {
        let f = self.forward(ArrayView1::from(x));
        let dz = sigmoid(f.logit) - label as f64;
        let da = (&self.w2 * &f.hidden.mapv(|h| 1.0 - h * h)) * (dz * self.gain);
        self.w1.t().dot(&da).to_vec()
    }

    /// Analytic d(loss)/d(pixel), row-major like the image.
    pub fn input_gradient(&self, img: &GrayImage, label: u8) -> Result<Vec<f64>> {
        self.check(img)?;
        Ok(self.gradient_of(img.pixels(), label))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for v in [self.input_len as u64, self.hidden() as u64, self.seed] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.gain.to_le_bytes());
        let floats = self
            .center
            .iter()
            .chain(self.w1.iter())
            .chain(self.b1.iter())
            .chain(self.w2.iter())
            .chain(std::iter::once(&self.b2));
        for v in floats {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("victim model: {m}"));
        if bytes.len() < 44 || &bytes[..8] != MAGIC {
            return Err(bad("bad magic"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        if u32_at(8) != VERSION {
            return Err(bad("unsupported version"));
        }
        let (n, h, seed) = (u64_at(12) as usize, u64_at(20) as usize, u64_at(28));
        let count = n + h * n + h + h + 1;
        if n == 0 || h == 0 || bytes.len() != 44 + count * 8 {
            return Err(bad("payload length does not match dimensions"));
        }
        let gain = f64::from_le_bytes(bytes[36..44].try_into().unwrap());
        if !(gain.is_finite() && gain > 0.0) {
            return Err(bad("invalid input gain"));
        }
        let floats: Vec<f64> = bytes[44..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mut rest = floats.as_slice();
        let mut take = |k: usize| {
            let (head, tail) = rest.split_at(k);
            rest = tail;
            head.to_vec()
        };
        let center = take(n);
        let w1 = Array2::from_shape_vec((h, n), take(h * n)).map_err(|e| bad(&e.to_string()))?;
        let b1 = take(h);
        let w2 = take(h);
        let b2 = take(1)[0];
        let mut m = VictimModel::from_parts(center, w1, b1, w2, b2)?;
        m.seed = seed;
        m.gain = gain;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Result of [`train_victim`] with the per-epoch mean training loss.
#[derive(Debug, Clone)]
pub struct VictimFit {
    pub model: VictimModel,
    /// Mean cross-entropy before each epoch's update, plus the final value.
    pub losses: Vec<f64>,
}

impl VictimFit {
    pub fn accuracy(&self, images: &[GrayImage], labels: &[u8]) -> Result<f64> {
        let mut hits = 0;
        for (img, &y) in images.iter().zip(labels) {
            hits += usize::from(self.model.classify(img)? == y);
        }
        Ok(hits as f64 / images.len() as f64)
    }
}

/// Full-batch gradient descent on mean binary cross-entropy.
pub fn train_victim(
    images: &[GrayImage],
    labels: &[u8],
    spec: &VictimSpec,
    seed: u64,
) -> Result<VictimFit> {
    if images.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} images but {} labels",
            images.len(),
            labels.len()
        )));
    }
    let positives = labels.iter().filter(|&&y| y == 1).count();
    if positives < 2 || images.len() - positives < 2 {
        return Err(Error::Training(format!(
            "need at least two examples per class, got {positives} positive of {}",
            images.len()
        )));
    }
    if spec.hidden == 0 {
        return Err(Error::Config("victim hidden width must be positive".into()));
    }
    let n = images[0].len();
    if let Some(bad) = images.iter().find(|i| i.len() != n) {
        return Err(Error::Dimension(format!(
            "training images differ in size: {} vs {n} pixels",
            bad.len()
        )));
    }
    let rows = images.len();
    let mut x = Array2::<f64>::zeros((rows, n));
    for (mut row, img) in x.axis_iter_mut(Axis(0)).zip(images) {
        row.assign(&ArrayView1::from(img.pixels()));
    }
    let center = x.mean_axis(Axis(0)).expect("non-empty");
    x -= &center;
    let y = Array1::from_iter(labels.iter().map(|&l| l as f64));

    let h = spec.hidden;
    let mut rng = seeds::rng(seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let out_normal = Normal::new(0.0, 1.0 / (h as f64).sqrt()).expect("finite");
    let w1 = Array2::from_shape_simple_fn((h, n), || std_normal.sample(&mut rng));
    let w2 = Array1::from_shape_simple_fn(h, || out_normal.sample(&mut rng));
    let mut model = VictimModel {
        input_len: n,
        center,
        w1,
        b1: Array1::zeros(h),
        w2,
        b2: 0.0,
        gain: 1.0 / (n as f64).sqrt(),
        seed,
    };
    let scale = model.gain;
    let inv_rows = 1.0 / rows as f64;
    let mut losses = Vec::with_capacity(spec.epochs + 1);
    let epoch = |model: &mut VictimModel, update: bool| -> f64 {
        let pre = x.dot(&model.w1.t()) * scale + &model.b1;
        let hidden = pre.mapv(f64::tanh);
        let logits = hidden.dot(&model.w2) + model.b2;
        let loss = logits
            .iter()
            .zip(y.iter())
            .map(|(&z, &t)| bce_from_logit(z, t))
            .sum::<f64>()
            * inv_rows;
        if update {
            let dz = logits.mapv(sigmoid) - &y;
            let dw2 = hidden.t().dot(&dz) * inv_rows;
            let db2 = dz.sum() * inv_rows;
            // rows x hidden
            let mut da = hidden.mapv(|v| 1.0 - v * v) * &model.w2;
            for (mut row, &d) in da.axis_iter_mut(Axis(0)).zip(dz.iter()) {
                row *= d;
            }
            let db1 = da.sum_axis(Axis(0)) * inv_rows;
            let dw1 = da.t().dot(&x) * (scale * inv_rows);
            let lr = spec.learning_rate;
            model.w1.scaled_add(-lr, &dw1);
            model.b1.scaled_add(-lr, &db1);
            model.w2.scaled_add(-lr, &dw2);
            model.b2 -= lr * db2;
        }
        loss
    };
    for _ in 0..spec.epochs {
        losses.push(epoch(&mut model, true));
    }
    losses.push(epoch(&mut model, false));
    Ok(VictimFit { model, losses })
}
