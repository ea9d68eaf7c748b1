use crate::imaging::{quantize, GrayImage};

pub const BINS: usize = 256;

/// Relative frequency of each 8-bit gray level.
pub fn histogram_features(img: &GrayImage) -> Vec<f64> {
    let mut counts = [0usize; BINS];
    for &v in img.pixels() {
        counts[quantize(v) as usize] += 1;
    }
    let total = img.len() as f64;
    counts.iter().map(|&c| c as f64 / total).collect()
}

pub fn column_names() -> Vec<String> {
    (0..BINS).map(|b| format!("bin_{b:03}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn direct_count() {
        let img = GrayImage::new(2, 2, vec![0.0, 0.0, 1.0, 128.0 / 255.0]).unwrap();
        let h = histogram_features(&img);
        assert_eq!(h[0], 0.5);
        assert_eq!(h[128], 0.25);
        assert_eq!(h[255], 0.25);
        assert_eq!(h.iter().filter(|&&v| v > 0.0).count(), 3);
    }

    #[test]
    fn white_image() {
        let img = GrayImage::new(3, 5, vec![1.0; 15]).unwrap();
        assert_eq!(histogram_features(&img)[255], 1.0);
    }

    proptest! {
        #[test]
        fn rows_are_distributions(px in proptest::collection::vec(0.0f64..=1.0, 1..200)) {
            let n = px.len();
            let img = GrayImage::new(n, 1, px).unwrap();
            let h = histogram_features(&img);
            prop_assert_eq!(h.len(), 256);
            prop_assert!(h.iter().all(|&v| v >= 0.0));
            prop_assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
