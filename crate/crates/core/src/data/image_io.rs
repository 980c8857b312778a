//! Pixel payload codecs: the raw `LFIM` tensor format and 8-bit PNG.

use std::fs;
use std::io::{BufReader, Read};
use std::path::Path;

use crate::data::Image;
use crate::error::{Error, Result};

pub const LFIM_MAGIC: &[u8; 4] = b"LFIM";
pub const LFIM_VERSION: u32 = 1;

pub fn encode_lfim(img: &Image) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + 4 * img.data.len());
    out.extend_from_slice(LFIM_MAGIC);
    for v in [LFIM_VERSION, img.height as u32, img.width as u32, img.channels as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in &img.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_lfim(bytes: &[u8]) -> Result<Image> {
    if bytes.len() < 20 || &bytes[..4] != LFIM_MAGIC {
        return Err(Error::Format("not an LFIM payload".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let version = word(0);
    if version != LFIM_VERSION {
        return Err(Error::Incompatible {
            what: "LFIM",
            found: version,
            expected: LFIM_VERSION,
        });
    }
    let (h, w, c) = (word(1) as usize, word(2) as usize, word(3) as usize);
    let n = h
        .checked_mul(w)
        .and_then(|x| x.checked_mul(c))
        .ok_or_else(|| Error::Format("LFIM dimensions overflow".into()))?;
    let body = &bytes[20..];
    if body.len() != 4 * n {
        return Err(Error::Format(format!(
            "LFIM {h}x{w}x{c} needs {} payload bytes, found {}",
            4 * n,
            body.len()
        )));
    }
    let data: Vec<f32> = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Format(format!("LFIM pixel {bad} outside [0, 1]")));
    }
    Image::new(h, w, c, data).map_err(|e| Error::Format(e.to_string()))
}

pub fn decode_png(reader: impl Read) -> Result<Image> {
    let mut decoder = png::Decoder::new(reader);
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| Error::Format(format!("png: {e}")))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Format(format!("png: {e}")))?;
    let (h, w) = (info.height as usize, info.width as usize);
    let (src_c, keep) = match info.color_type {
        png::ColorType::Grayscale => (1, 1),
        png::ColorType::GrayscaleAlpha => (2, 1),
        png::ColorType::Rgb => (3, 3),
        png::ColorType::Rgba => (4, 3),
        png::ColorType::Indexed => return Err(Error::Format("png: unexpanded palette".into())),
    };
    let data = buf[..info.buffer_size()]
        .chunks_exact(src_c)
        .flat_map(|px| px[..keep].iter().map(|&b| b as f32 / 255.0))
        .collect();
    Image::new(h, w, keep, data).map_err(|e| Error::Format(e.to_string()))
}

/// Writes an 8-bit PNG; values are rounded to the nearest level.
pub fn encode_png(img: &Image) -> Result<Vec<u8>> {
    let color = match img.channels {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        c => return Err(Error::Input(format!("png needs 1 or 3 channels, got {c}"))),
    };
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width as u32, img.height as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| Error::Format(format!("png: {e}")))?;
        let bytes: Vec<u8> = img
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        writer
            .write_image_data(&bytes)
            .map_err(|e| Error::Format(format!("png: {e}")))?;
    }
    Ok(out)
}

/// Reads a payload, choosing the codec by magic bytes.
pub fn read_image(path: &Path) -> Result<Image> {
    let file = fs::File::open(path).map_err(|e| Error::at_path(path, e))?;
    let mut reader = BufReader::new(file);
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes).map_err(|e| Error::at_path(path, e))?;
    if bytes.starts_with(LFIM_MAGIC) {
        decode_lfim(&bytes)
    } else if bytes.starts_with(b"\x89PNG") {
        decode_png(bytes.as_slice())
    } else {
        Err(Error::Format(format!("{}: unrecognized image payload", path.display())))
    }
}

pub fn write_lfim(path: &Path, img: &Image) -> Result<()> {
    fs::write(path, encode_lfim(img)).map_err(|e| Error::at_path(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lfim_roundtrip_is_exact() {
        let img = Image::new(2, 3, 2, (0..12).map(|i| i as f32 / 11.0).collect()).unwrap();
        assert_eq!(decode_lfim(&encode_lfim(&img)).unwrap(), img);
    }

    #[test]
    fn lfim_rejects_bad_payloads() {
        let img = Image::new(1, 1, 1, vec![0.5]).unwrap();
        let mut bytes = encode_lfim(&img);
        assert!(decode_lfim(&bytes[..bytes.len() - 1]).is_err());
        bytes[4] = 9;
        assert!(matches!(decode_lfim(&bytes), Err(Error::Incompatible { found: 9, .. })));
        let mut hot = encode_lfim(&img);
        hot[20..24].copy_from_slice(&1.5f32.to_le_bytes());
        assert!(decode_lfim(&hot).is_err());
    }

    #[test]
    fn png_roundtrip_within_quantization() {
        let img = Image::new(2, 2, 3, (0..12).map(|i| i as f32 / 11.0).collect()).unwrap();
        let back = decode_png(encode_png(&img).unwrap().as_slice()).unwrap();
        assert_eq!((back.height, back.width, back.channels), (2, 2, 3));
        for (a, b) in img.data.iter().zip(&back.data) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }
}
