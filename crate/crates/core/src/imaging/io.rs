use std::fs;
use std::io::Cursor;
use std::path::Path;

use super::{to_gray, GrayImage, Raster};
use crate::error::{Error, Result};

const PNG_SIGNATURE: [u8; 8] = [0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a];

/// Maps an intensity to its 8-bit level, `round(v * 255)`.
pub fn quantize(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

pub fn encode_png(img: &GrayImage) -> Result<Vec<u8>> {
    let data: Vec<u8> = img.pixels().iter().map(|&v| quantize(v)).collect();
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width() as u32, img.height() as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::Format(e.to_string()))?;
        writer
            .write_image_data(&data)
            .map_err(|e| Error::Format(e.to_string()))?;
    }
    Ok(out)
}

/// Decodes a PNG byte stream. Anything that is not PNG is rejected, which
/// keeps lossy formats out of the pipeline.
pub fn decode_png(bytes: &[u8]) -> Result<GrayImage> {
    if bytes.len() < PNG_SIGNATURE.len() || bytes[..8] != PNG_SIGNATURE {
        return Err(Error::Format(
            "not a PNG stream (lossless PNG required)".into(),
        ));
    }
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Format(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Format("PNG too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Format(e.to_string()))?;
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => {
            return Err(Error::Format("unexpanded palette image".into()));
        }
    };
    let (width, height) = (info.width as usize, info.height as usize);
    let (bit_depth, samples): (u8, Vec<u16>) = match info.bit_depth {
        png::BitDepth::Sixteen => (
            16,
            buf.chunks_exact(2)
                .take(width * height * channels)
                .map(|b| u16::from_be_bytes([b[0], b[1]]))
                .collect(),
        ),
        _ => (
            8,
            buf.iter()
                .take(width * height * channels)
                .map(|&b| b as u16)
                .collect(),
        ),
    };
    to_gray(&Raster {
        width,
        height,
        channels,
        bit_depth,
        samples,
    })
}

pub fn save_png(img: &GrayImage, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, encode_png(img)?).map_err(|e| Error::io(path, e))
}

pub fn load_png(path: &Path) -> Result<GrayImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_png(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}
