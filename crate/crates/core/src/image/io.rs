use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use super::Image;
use crate::error::{Error, Result};

/// Sample depth used when writing PNG files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    pub fn max_value(self) -> f64 {
        match self {
            BitDepth::Eight => 255.0,
            BitDepth::Sixteen => 65535.0,
        }
    }

    pub fn from_bits(bits: u32) -> Result<Self> {
        match bits {
            8 => Ok(BitDepth::Eight),
            16 => Ok(BitDepth::Sixteen),
            other => Err(Error::InvalidArgument(format!(
                "bit depth must be 8 or 16, got {other}"
            ))),
        }
    }
}

/// Reads an 8- or 16-bit grayscale/RGB PNG, scaling samples into `[0, 1]`.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let corrupt = |e: png::DecodingError| match e {
        png::DecodingError::IoError(io) if io.kind() != std::io::ErrorKind::UnexpectedEof => {
            Error::io(path, io)
        }
        other => Error::CorruptImage {
            path: path.to_path_buf(),
            detail: other.to_string(),
        },
    };
    let mut reader = decoder.read_info().map_err(corrupt)?;
    let info = reader.info();
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => {
            return Err(Error::UnsupportedFormat {
                path: path.to_path_buf(),
                detail: format!("color type {other:?} (only grayscale and RGB are accepted)"),
            })
        }
    };
    let depth = match info.bit_depth {
        png::BitDepth::Eight => BitDepth::Eight,
        png::BitDepth::Sixteen => BitDepth::Sixteen,
        other => {
            return Err(Error::UnsupportedFormat {
                path: path.to_path_buf(),
                detail: format!("bit depth {other:?} (only 8 and 16 are accepted)"),
            })
        }
    };
    let (width, height) = (info.width as usize, info.height as usize);
    let mut buf = vec![0u8; reader.output_buffer_size()];
    reader.next_frame(&mut buf).map_err(corrupt)?;

    let pixels = width * height;
    let max = depth.max_value();
    let mut data = vec![0.0; pixels * channels];
    for i in 0..pixels * channels {
        let raw = match depth {
            BitDepth::Eight => buf[i] as f64,
            BitDepth::Sixteen => u16::from_be_bytes([buf[2 * i], buf[2 * i + 1]]) as f64,
        };
        // interleaved -> planar
        let (p, c) = (i / channels, i % channels);
        data[c * pixels + p] = raw / max;
    }
    Image::new(height, width, channels, data)
}

/// Quantizes a `[0, 1]` value with round-half-up.
pub(crate) fn quantize(v: f64, depth: BitDepth) -> u16 {
    let max = depth.max_value();
    (v.clamp(0.0, 1.0) * max + 0.5).floor().min(max) as u16
}

/// Writes `img` as PNG after clamping to `[0, 1]` and round-half-up
/// quantization.
pub fn save_image(img: &Image, path: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(
        BufWriter::new(file),
        img.width() as u32,
        img.height() as u32,
    );
    encoder.set_color(if img.channels() == 1 {
        png::ColorType::Grayscale
    } else {
        png::ColorType::Rgb
    });
    encoder.set_depth(match depth {
        BitDepth::Eight => png::BitDepth::Eight,
        BitDepth::Sixteen => png::BitDepth::Sixteen,
    });
    let pixels = img.pixels();
    let channels = img.channels();
    let mut bytes = Vec::with_capacity(img.len() * 2);
    for p in 0..pixels {
        for c in 0..channels {
            let q = quantize(img.data()[c * pixels + p], depth);
            match depth {
                BitDepth::Eight => bytes.push(q as u8),
                BitDepth::Sixteen => bytes.extend_from_slice(&q.to_be_bytes()),
            }
        }
    }
    let encode_err = |e: png::EncodingError| match e {
        png::EncodingError::IoError(io) => Error::io(path, io),
        other => Error::InvalidImage(other.to_string()),
    };
    let mut writer = encoder.write_header().map_err(encode_err)?;
    writer.write_image_data(&bytes).map_err(encode_err)?;
    writer.finish().map_err(encode_err)?;
    Ok(())
}
