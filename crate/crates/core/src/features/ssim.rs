use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::GrayImage;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SsimParams {
    pub window: usize,
    pub stride: usize,
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range of the intensities.
    pub range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window: 8,
            stride: 8,
            k1: 0.01,
            k2: 0.03,
            range: 1.0,
        }
    }
}

impl SsimParams {
    pub fn validate(&self) -> Result<()> {
        if self.window < 2
            || self.stride < 1
            || !(self.k1 > 0.0 && self.k2 > 0.0 && self.range > 0.0)
        {
            return Err(Error::Config(format!("invalid SSIM parameters {self:?}")));
        }
        Ok(())
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.range).powi(2)
    }

    /// Window positions along each axis: `floor((len - window) / stride) + 1`.
    pub fn grid(&self, width: usize, height: usize) -> Result<(usize, usize)> {
        if self.window > width || self.window > height {
            return Err(Error::Dimension(format!(
                "SSIM window {} larger than {width}x{height} image",
                self.window
            )));
        }
        Ok((
            (width - self.window) / self.stride + 1,
            (height - self.window) / self.stride + 1,
        ))
    }

    pub fn column_names(&self, width: usize, height: usize) -> Result<Vec<String>> {
        let (nx, ny) = self.grid(width, height)?;
        let mut names = Vec::with_capacity(nx * ny + 1);
        for gy in 0..ny {
            for gx in 0..nx {
                names.push(format!("ssim_y{}_x{}", gy * self.stride, gx * self.stride));
            }
        }
        names.push("ssim_mean".into());
        Ok(names)
    }
}

/// Local SSIM over uniform windows in row-major scan order.
pub fn ssim_map(img: &GrayImage, reference: &GrayImage, p: &SsimParams) -> Result<Vec<f64>> {
    p.validate()?;
    if !img.same_shape(reference) {
        return Err(Error::Dimension(format!(
            "SSIM inputs differ: {}x{} vs {}x{}",
            img.width(),
            img.height(),
            reference.width(),
            reference.height()
        )));
    }
    let (nx, ny) = p.grid(img.width(), img.height())?;
    let (c1, c2) = (p.c1(), p.c2());
    let n = (p.window * p.window) as f64;
    let (a, b) = (img.pixels(), reference.pixels());
    let w = img.width();

    let mut out = Vec::with_capacity(nx * ny);
    for gy in 0..ny {
        for gx in 0..nx {
            let (x0, y0) = (gx * p.stride, gy * p.stride);
            let (mut sx, mut sy) = (0.0, 0.0);
            for y in y0..y0 + p.window {
                let row = y * w;
                for x in x0..x0 + p.window {
                    sx += a[row + x];
                    sy += b[row + x];
                }
            }
            let (mx, my) = (sx / n, sy / n);
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for y in y0..y0 + p.window {
                let row = y * w;
                for x in x0..x0 + p.window {
                    let (dx, dy) = (a[row + x] - mx, b[row + x] - my);
                    vx += dx * dx;
                    vy += dy * dy;
                    cxy += dx * dy;
                }
            }
            let (vx, vy, cxy) = (vx / n, vy / n, cxy / n);
            let num = (2.0 * mx * my + c1) * (2.0 * cxy + c2);
            let den = (mx * mx + my * my + c1) * (vx + vy + c2);
            out.push(num / den);
        }
    }
    Ok(out)
}

/// Local SSIM map followed by its mean as the final column.
pub fn ssim_features(img: &GrayImage, reference: &GrayImage, p: &SsimParams) -> Result<Vec<f64>> {
    let mut row = ssim_map(img, reference, p)?;
    let mean = row.iter().sum::<f64>() / row.len() as f64;
    row.push(mean);
    Ok(row)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::white_reference;
    use proptest::prelude::*;

    fn textured(w: usize, h: usize, seed: usize) -> GrayImage {
        GrayImage::from_fn(w, h, |x, y| {
            ((x * 37 + y * 11 + seed * 5) % 97) as f64 / 96.0
        })
        .unwrap()
    }

    #[test]
    fn identical_images_score_one() {
        let img = textured(24, 16, 1);
        let row = ssim_features(&img, &img, &SsimParams::default()).unwrap();
        assert!(row.iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn black_against_white_closed_form() {
        let p = SsimParams::default();
        let black = GrayImage::new(16, 16, vec![0.0; 256]).unwrap();
        let white = white_reference(16, 16).unwrap();
        let c1 = p.c1();
        let expected = c1 / (1.0 + c1);
        assert!((expected - 9.999e-5).abs() < 1e-8);
        for v in ssim_map(&black, &white, &p).unwrap() {
            assert!((v - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_for_cropped_v1() {
        let p = SsimParams::default();
        assert_eq!(p.grid(40, 369).unwrap(), (5, 46));
        assert_eq!(p.column_names(40, 369).unwrap().len(), 231);
    }

    #[test]
    fn errors() {
        let p = SsimParams::default();
        let a = textured(16, 16, 0);
        let b = textured(16, 8, 0);
        assert!(matches!(ssim_map(&a, &b, &p), Err(Error::Dimension(_))));
        let tiny = textured(4, 4, 0);
        assert!(matches!(
            ssim_map(&tiny, &tiny, &p),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn darkening_white_lowers_mean_ssim() {
        let p = SsimParams::default();
        let white = white_reference(16, 16).unwrap();
        let mut last = 1.0;
        for k in 1..5 {
            let eps = k as f64 * 8.0 / 255.0;
            let dark = GrayImage::new(16, 16, vec![1.0 - eps; 256]).unwrap();
            let m = *ssim_features(&dark, &white, &p).unwrap().last().unwrap();
            assert!(m < last);
            last = m;
        }
    }

    proptest! {
        #[test]
        fn bounded_and_symmetric(s1 in 0usize..50, s2 in 0usize..50) {
            let p = SsimParams { stride: 4, ..SsimParams::default() };
            let a = textured(20, 20, s1);
            let b = textured(20, 20, s2);
            let ab = ssim_features(&a, &b, &p).unwrap();
            let ba = ssim_features(&b, &a, &p).unwrap();
            prop_assert!((ab.last().unwrap() - ba.last().unwrap()).abs() < 1e-12);
            prop_assert!(ab.iter().all(|v| (-1.0..=1.0 + 1e-12).contains(v)));
        }
    }
}
