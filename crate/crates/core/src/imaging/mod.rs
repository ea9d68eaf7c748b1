//! Grayscale rasters, crop variants and the synthetic inspection corpus.
//!
//! Intensities are kept as unit-interval reals (`1.0` is white). Quantization
//! to 8 bits happens only when images are written to disk or histogrammed.

mod corpus;
mod io;
mod manifest;

pub use corpus::{generate_corpus, synthesize, CorpusSpec, SyntheticImage, VisualClass};
pub use io::{decode_png, encode_png, load_png, quantize, save_png};
pub use manifest::{
    load_manifest, load_visual_classes, save_manifest, save_visual_classes, CorpusManifest, Label,
    ManifestEntry, Variant,
};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Dimension(format!(
                "image must be non-empty, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::Dimension(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        if let Some((i, v)) = pixels
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::Domain(format!(
                "pixel {i} has intensity {v} outside [0, 1]"
            )));
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }

    /// Builds an image by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn same_shape(&self, other: &GrayImage) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// Pixel box `(left, upper, right, lower)`; right and lower are exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropBox {
    pub left: usize,
    pub upper: usize,
    pub right: usize,
    pub lower: usize,
}

impl CropBox {
    /// Vertical slice spanning the full part height.
    pub const V1: CropBox = CropBox::new_const(160, 0, 200, 369);
    /// Central slice of the part, nested inside [`CropBox::V1`].
    pub const V2: CropBox = CropBox::new_const(160, 50, 200, 319);

    const fn new_const(left: usize, upper: usize, right: usize, lower: usize) -> Self {
        CropBox {
            left,
            upper,
            right,
            lower,
        }
    }

    pub fn new(left: usize, upper: usize, right: usize, lower: usize) -> Result<Self> {
        if left >= right || upper >= lower {
            return Err(Error::Bounds(format!(
                "crop box ({left}, {upper}, {right}, {lower}) has no area"
            )));
        }
        Ok(CropBox {
            left,
            upper,
            right,
            lower,
        })
    }

    pub fn full(width: usize, height: usize) -> Self {
        CropBox::new_const(0, 0, width, height)
    }

    pub fn width(&self) -> usize {
        self.right - self.left
    }

    pub fn height(&self) -> usize {
        self.lower - self.upper
    }

    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.left < self.right
            && self.upper < self.lower
            && self.right <= width
            && self.lower <= height
    }
}

/// Multi-channel raster as decoded from a file.
#[derive(Debug, Clone)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub bit_depth: u8,
    /// Interleaved channel samples, row-major.
    pub samples: Vec<u16>,
}

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Luma-weighted conversion of a 1-4 channel raster. Alpha is ignored.
pub fn to_gray(raster: &Raster) -> Result<GrayImage> {
    if raster.width == 0 || raster.height == 0 {
        return Err(Error::Dimension("zero-sized raster".into()));
    }
    if !(1..=4).contains(&raster.channels) {
        return Err(Error::Dimension(format!(
            "unsupported channel count {}",
            raster.channels
        )));
    }
    if raster.bit_depth == 0 || raster.bit_depth > 16 {
        return Err(Error::Domain(format!("bit depth {}", raster.bit_depth)));
    }
    let n = raster.width * raster.height;
    if raster.samples.len() != n * raster.channels {
        return Err(Error::Dimension(format!(
            "raster holds {} samples, expected {}",
            raster.samples.len(),
            n * raster.channels
        )));
    }
    let max = ((1u32 << raster.bit_depth) - 1) as f64;
    let pixels = raster
        .samples
        .chunks_exact(raster.channels)
        .map(|px| {
            let v = match raster.channels {
                1 | 2 => px[0] as f64,
                _ => LUMA[0] * px[0] as f64 + LUMA[1] * px[1] as f64 + LUMA[2] * px[2] as f64,
            };
            (v / max).clamp(0.0, 1.0)
        })
        .collect();
    GrayImage::new(raster.width, raster.height, pixels)
}

pub fn crop(img: &GrayImage, b: CropBox) -> Result<GrayImage> {
    if !b.fits(img.width, img.height) {
        return Err(Error::Bounds(format!(
            "crop box ({}, {}, {}, {}) exceeds {}x{} image",
            b.left, b.upper, b.right, b.lower, img.width, img.height
        )));
    }
    let mut pixels = Vec::with_capacity(b.width() * b.height());
    for y in b.upper..b.lower {
        let row = y * img.width;
        pixels.extend_from_slice(&img.pixels[row + b.left..row + b.right]);
    }
    Ok(GrayImage {
        width: b.width(),
        height: b.height(),
        pixels,
    })
}

pub fn white_reference(width: usize, height: usize) -> Result<GrayImage> {
    if width == 0 || height == 0 {
        return Err(Error::Dimension(format!(
            "white reference must be non-empty, got {width}x{height}"
        )));
    }
    GrayImage::new(width, height, vec![1.0; width * height])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(w: usize, h: usize) -> GrayImage {
        GrayImage::from_fn(w, h, |x, y| ((x * 7 + y * 13) % 256) as f64 / 255.0).unwrap()
    }

    fn rgb(px: [u16; 3]) -> Raster {
        Raster {
            width: 1,
            height: 1,
            channels: 3,
            bit_depth: 8,
            samples: px.to_vec(),
        }
    }

    #[test]
    fn to_gray_luma() {
        assert_eq!(to_gray(&rgb([255, 255, 255])).unwrap().pixels(), &[1.0]);
        assert_eq!(to_gray(&rgb([0, 0, 0])).unwrap().pixels(), &[0.0]);
        let red = to_gray(&rgb([255, 0, 0])).unwrap().pixels()[0];
        assert!((red - 0.299).abs() < 1e-15);
    }

    #[test]
    fn to_gray_rejects_zero_size() {
        let r = Raster {
            width: 0,
            height: 3,
            channels: 1,
            bit_depth: 8,
            samples: vec![],
        };
        assert!(matches!(to_gray(&r), Err(Error::Dimension(_))));
    }

    #[test]
    fn crop_v1_box() {
        let img = ramp(400, 369);
        let c = crop(&img, CropBox::V1).unwrap();
        assert_eq!((c.width(), c.height()), (40, 369));
        assert_eq!(c.get(0, 0), img.get(160, 0));
        assert_eq!(c.get(39, 368), img.get(199, 368));
    }

    #[test]
    fn crop_full_frame_identity() {
        let img = ramp(17, 9);
        assert_eq!(crop(&img, CropBox::full(17, 9)).unwrap(), img);
    }

    #[test]
    fn crop_out_of_bounds() {
        let img = ramp(10, 10);
        let b = CropBox::new(5, 5, 15, 10).unwrap();
        assert!(matches!(crop(&img, b), Err(Error::Bounds(_))));
    }

    #[test]
    fn white_reference_values() {
        assert_eq!(white_reference(2, 2).unwrap().pixels(), &[1.0; 4]);
        let w = white_reference(40, 369).unwrap();
        assert_eq!(w.len(), 14760);
        assert!(w.pixels().iter().all(|&v| v == 1.0));
        assert!(matches!(white_reference(0, 5), Err(Error::Dimension(_))));
    }

    #[test]
    fn constructor_rejects_out_of_range() {
        assert!(GrayImage::new(1, 2, vec![0.5, 1.5]).is_err());
        assert!(GrayImage::new(1, 2, vec![-0.1, 0.5]).is_err());
        assert!(GrayImage::new(1, 1, vec![f64::NAN]).is_err());
        assert!(GrayImage::new(2, 2, vec![0.5; 3]).is_err());
    }

    #[test]
    fn v2_is_sub_slice_of_v1() {
        let img = ramp(400, 369);
        let v1 = crop(&img, CropBox::V1).unwrap();
        let inner = crop(&v1, CropBox::new(0, 50, 40, 319).unwrap()).unwrap();
        assert_eq!(inner, crop(&img, CropBox::V2).unwrap());
    }

    proptest! {
        #[test]
        fn crop_composes_with_full_frame(
            w in 2usize..24, h in 2usize..24,
            fl in 0.0f64..1.0, fu in 0.0f64..1.0, fw in 0.0f64..1.0, fh in 0.0f64..1.0,
        ) {
            let img = ramp(w, h);
            let l = (fl * (w - 1) as f64) as usize;
            let u = (fu * (h - 1) as f64) as usize;
            let dw = 1 + (fw * (w - l - 1) as f64) as usize;
            let dh = 1 + (fh * (h - u - 1) as f64) as usize;
            let b = CropBox::new(l, u, l + dw, u + dh).unwrap();
            let full = crop(&img, CropBox::full(w, h)).unwrap();
            prop_assert_eq!(crop(&full, b).unwrap(), crop(&img, b).unwrap());
        }
    }
}
