//! PNG helpers: header inspection and small encoders for fixtures.

use std::io::Cursor;

use image::{ColorType, ExtendedColorType, ImageDecoder, ImageEncoder, ImageReader};
use image::codecs::png::PngEncoder;

use super::GatewayError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RasterInfo {
    pub width: u32,
    pub height: u32,
    pub color: ColorType,
}

impl RasterInfo {
    pub fn is_luma8(&self) -> bool {
        self.color == ColorType::L8
    }
}

/// Reads dimensions and color type without decoding pixel data.
pub fn inspect(bytes: &[u8]) -> Result<RasterInfo, GatewayError> {
    let bad = |e: image::ImageError| GatewayError::InvalidImage(e.to_string());
    let reader = ImageReader::new(Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| GatewayError::InvalidImage(e.to_string()))?;
    if reader.format().is_none() {
        return Err(GatewayError::InvalidImage("unrecognized image format".into()));
    }
    let decoder = reader.into_decoder().map_err(bad)?;
    let (width, height) = decoder.dimensions();
    Ok(RasterInfo { width, height, color: decoder.color_type() })
}

fn encode(width: u32, height: u32, pixels: &[u8], color: ExtendedColorType) -> Result<Vec<u8>, GatewayError> {
    let mut out = Vec::new();
    PngEncoder::new(&mut out)
        .write_image(pixels, width, height, color)
        .map_err(|e| GatewayError::InvalidImage(e.to_string()))?;
    Ok(out)
}

pub fn encode_rgb(width: u32, height: u32, pixels: &[u8]) -> Result<Vec<u8>, GatewayError> {
    encode(width, height, pixels, ExtendedColorType::Rgb8)
}

pub fn encode_luma(width: u32, height: u32, pixels: &[u8]) -> Result<Vec<u8>, GatewayError> {
    encode(width, height, pixels, ExtendedColorType::L8)
}

/// Decodes a PNG to raw 8-bit luma pixels.
pub fn decode_luma(bytes: &[u8]) -> Result<(u32, u32, Vec<u8>), GatewayError> {
    let img = image::load_from_memory(bytes).map_err(|e| GatewayError::InvalidImage(e.to_string()))?;
    let luma = img.to_luma8();
    Ok((luma.width(), luma.height(), luma.into_raw()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inspect_reports_dims_and_color() {
        let png = encode_luma(5, 3, &[0; 15]).unwrap();
        let info = inspect(&png).unwrap();
        assert_eq!((info.width, info.height), (5, 3));
        assert!(info.is_luma8());
        let png = encode_rgb(2, 2, &[1; 12]).unwrap();
        assert!(!inspect(&png).unwrap().is_luma8());
        assert!(inspect(b"").is_err());
    }

    #[test]
    fn luma_round_trip() {
        let px: Vec<u8> = (0..12).map(|i| i * 20).collect();
        let (w, h, back) = decode_luma(&encode_luma(4, 3, &px).unwrap()).unwrap();
        assert_eq!((w, h), (4, 3));
        assert_eq!(back, px);
    }
}
