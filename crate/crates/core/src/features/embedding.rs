use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::GrayImage;
use crate::seeds;

pub const POOL: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbeddingParams {
    pub dim: usize,
    pub seed: u64,
    /// Externally computed embeddings per variant, e.g. `{ original = "emb.csv" }`.
    pub files: std::collections::BTreeMap<String, std::path::PathBuf>,
}

impl Default for EmbeddingParams {
    fn default() -> Self {
        EmbeddingParams {
            dim: 512,
            seed: 0,
            files: Default::default(),
        }
    }
}

/// 8x8 average pooling; trailing partial blocks are dropped.
pub fn average_pool(img: &GrayImage) -> Result<Vec<f64>> {
    let (bw, bh) = (img.width() / POOL, img.height() / POOL);
    if bw == 0 || bh == 0 {
        return Err(Error::Dimension(format!(
            "{}x{} image smaller than the {POOL}x{POOL} pooling window",
            img.width(),
            img.height()
        )));
    }
    let mut out = Vec::with_capacity(bw * bh);
    let norm = 1.0 / (POOL * POOL) as f64;
    for by in 0..bh {
        for bx in 0..bw {
            let mut s = 0.0;
            for y in by * POOL..(by + 1) * POOL {
                for x in bx * POOL..(bx + 1) * POOL {
                    s += img.get(x, y);
                }
            }
            out.push(s * norm);
        }
    }
    Ok(out)
}

/// Seeded Gaussian projection from pooled pixels to `dim` values.
#[derive(Debug, Clone)]
pub struct Projector {
    inputs: usize,
    dim: usize,
    matrix: Vec<f64>,
}

impl Projector {
    pub fn new(inputs: usize, dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("embedding dim must be >= 1".into()));
        }
        let mut rng = seeds::rng(seeds::derive(seed, "embedding/projection"));
        let normal = Normal::new(0.0, 1.0 / (inputs as f64).sqrt()).expect("finite");
        let matrix = (0..inputs * dim).map(|_| normal.sample(&mut rng)).collect();
        Ok(Projector {
            inputs,
            dim,
            matrix,
        })
    }

    pub fn for_image(img: &GrayImage, dim: usize, seed: u64) -> Result<Self> {
        Self::new(average_pool(img)?.len(), dim, seed)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embed(&self, img: &GrayImage) -> Result<Vec<f64>> {
        let pooled = average_pool(img)?;
        if pooled.len() != self.inputs {
            return Err(Error::Dimension(format!(
                "projector built for {} pooled cells, image yields {}",
                self.inputs,
                pooled.len()
            )));
        }
        Ok(self
            .matrix
            .chunks_exact(self.inputs)
            .map(|row| row.iter().zip(&pooled).map(|(a, b)| a * b).sum())
            .collect())
    }
}

/// Deterministic stand-in for network embeddings.
pub fn fallback_embedding(img: &GrayImage, dim: usize, seed: u64) -> Result<Vec<f64>> {
    Projector::for_image(img, dim, seed)?.embed(img)
}

pub fn column_names(dim: usize) -> Vec<String> {
    (0..dim).map(|i| format!("e{i}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img() -> GrayImage {
        GrayImage::from_fn(24, 16, |x, y| ((x * 3 + y * 7) % 29) as f64 / 28.0).unwrap()
    }

    #[test]
    fn deterministic() {
        assert_eq!(
            fallback_embedding(&img(), 16, 4).unwrap(),
            fallback_embedding(&img(), 16, 4).unwrap()
        );
        assert_ne!(
            fallback_embedding(&img(), 16, 4).unwrap(),
            fallback_embedding(&img(), 16, 5).unwrap()
        );
    }

    #[test]
    fn resnet_width() {
        assert_eq!(fallback_embedding(&img(), 512, 0).unwrap().len(), 512);
    }

    #[test]
    fn zero_image_zero_row() {
        let z = GrayImage::new(16, 16, vec![0.0; 256]).unwrap();
        assert!(fallback_embedding(&z, 32, 1)
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn too_small_for_pooling() {
        let tiny = GrayImage::new(7, 20, vec![0.5; 140]).unwrap();
        assert!(matches!(
            fallback_embedding(&tiny, 8, 0),
            Err(Error::Dimension(_))
        ));
        assert!(Projector::new(4, 0, 0).is_err());
    }

    #[test]
    fn pooling_averages_blocks() {
        let img = GrayImage::from_fn(16, 8, |x, _| if x < 8 { 0.25 } else { 0.75 }).unwrap();
        assert_eq!(average_pool(&img).unwrap(), vec![0.25, 0.75]);
    }
}
