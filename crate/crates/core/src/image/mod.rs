//! Planar floating-point rasters and the spatial primitives shared by every
//! other module.
//!
//! Pixel values are nominally in `[0, 1]`. Channels are stored planar
//! (all of channel 0, then all of channel 1, ...), each plane row-major.

mod io;

pub use io::{load_image, save_image, BitDepth};

use crate::error::{Error, Result};

/// Rec.601 luma weights.
pub const GRAY_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    /// Builds an image from planar data, checking shape and finiteness.
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidImage(format!(
                "extent must be positive, got {height}x{width}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidImage(format!(
                "channel count must be 1 or 3, got {channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::InvalidImage(format!(
                "data length {} does not match {height}x{width}x{channels}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidImage(format!(
                "non-finite value {} at index {i}",
                data[i]
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(
            height,
            width,
            channels,
            vec![value; height * width * channels],
        )
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Result<Self> {
        Self::filled(height, width, channels, 0.0)
    }

    /// Builds a single-channel image from a row-major closure.
    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self::new(height, width, 1, data)
    }

    /// Stacks single-channel planes into one image.
    pub fn from_planes(planes: &[Image]) -> Result<Self> {
        let first = planes
            .first()
            .ok_or_else(|| Error::InvalidImage("no planes given".into()))?;
        let mut data = Vec::with_capacity(first.len() * planes.len());
        for p in planes {
            if p.channels != 1 || p.height != first.height || p.width != first.width {
                return Err(Error::shape(first.shape_string(), p.shape_string()));
            }
            data.extend_from_slice(&p.data);
        }
        Self::new(first.height, first.width, planes.len(), data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Total number of stored values.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.pixels();
        &self.data[c * n..(c + 1) * n]
    }

    /// Copies channel `c` out as a single-channel image.
    pub fn channel(&self, c: usize) -> Image {
        Image {
            height: self.height,
            width: self.width,
            channels: 1,
            data: self.plane(c).to_vec(),
        }
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub fn same_size(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub(crate) fn shape_string(&self) -> String {
        format!("{}x{}x{}", self.height, self.width, self.channels)
    }

    pub(crate) fn check_same_shape(&self, other: &Image) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::shape(self.shape_string(), other.shape_string()))
        }
    }

    pub(crate) fn check_same_size(&self, height: usize, width: usize) -> Result<()> {
        if self.height == height && self.width == width {
            Ok(())
        } else {
            Err(Error::shape(
                format!("{height}x{width}"),
                format!("{}x{}", self.height, self.width),
            ))
        }
    }

    /// Applies `f` to every value, rejecting non-finite results.
    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Result<Image> {
        Image::new(
            self.height,
            self.width,
            self.channels,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    /// Elementwise combination of two equally shaped images.
    pub fn zip_map(&self, other: &Image, f: impl Fn(f64, f64) -> f64) -> Result<Image> {
        self.check_same_shape(other)?;
        Image::new(
            self.height,
            self.width,
            self.channels,
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn clamp01(&self) -> Image {
        Image {
            data: self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
            ..self.clone()
        }
    }

    pub fn min_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn flip_horizontal(&self) -> Image {
        let mut out = self.clone();
        for c in 0..self.channels {
            for y in 0..self.height {
                for x in 0..self.width {
                    out.set(c, y, x, self.get(c, y, self.width - 1 - x));
                }
            }
        }
        out
    }

    pub fn flip_vertical(&self) -> Image {
        let mut out = self.clone();
        for c in 0..self.channels {
            for y in 0..self.height {
                for x in 0..self.width {
                    out.set(c, y, x, self.get(c, self.height - 1 - y, x));
                }
            }
        }
        out
    }
}

/// An odd-sized correlation kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel2D {
    rows: usize,
    cols: usize,
    taps: Vec<f64>,
}

impl Kernel2D {
    pub fn new(rows: usize, cols: usize, taps: Vec<f64>) -> Result<Self> {
        if rows.is_multiple_of(2) || cols.is_multiple_of(2) {
            return Err(Error::InvalidKernel(format!(
                "kernel extent must be odd, got {rows}x{cols}"
            )));
        }
        if taps.len() != rows * cols {
            return Err(Error::InvalidKernel(format!(
                "{} taps for a {rows}x{cols} kernel",
                taps.len()
            )));
        }
        if taps.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidKernel("non-finite tap".into()));
        }
        Ok(Self { rows, cols, taps })
    }

    pub fn from_3x3(taps: [[f64; 3]; 3]) -> Self {
        Self {
            rows: 3,
            cols: 3,
            taps: taps.iter().flatten().copied().collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn tap(&self, r: usize, c: usize) -> f64 {
        self.taps[r * self.cols + c]
    }

    pub fn transpose(&self) -> Kernel2D {
        let mut taps = Vec::with_capacity(self.taps.len());
        for c in 0..self.cols {
            for r in 0..self.rows {
                taps.push(self.tap(r, c));
            }
        }
        Kernel2D {
            rows: self.cols,
            cols: self.rows,
            taps,
        }
    }

    /// Sum of absolute taps; bounds how far one output can move when a
    /// single input pixel moves.
    pub fn abs_sum(&self) -> f64 {
        self.taps.iter().map(|t| t.abs()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    pub fn new(top: usize, left: usize, height: usize, width: usize) -> Self {
        Self {
            top,
            left,
            height,
            width,
        }
    }

    pub fn fits(&self, height: usize, width: usize) -> bool {
        self.height > 0
            && self.width > 0
            && self.top + self.height <= height
            && self.left + self.width <= width
    }

    /// Rect `inner`, expressed relative to `self`, mapped to the host frame.
    pub fn compose(&self, inner: &Rect) -> Rect {
        Rect::new(
            self.top + inner.top,
            self.left + inner.left,
            inner.height,
            inner.width,
        )
    }
}

impl std::fmt::Display for Rect {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}x{}@({},{})",
            self.height, self.width, self.top, self.left
        )
    }
}

/// Luma conversion with Rec.601 weights; single-channel input is returned
/// unchanged.
pub fn to_grayscale(img: &Image) -> Image {
    if img.channels == 1 {
        return img.clone();
    }
    let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
    let data = r
        .iter()
        .zip(g)
        .zip(b)
        .map(|((&r, &g), &b)| GRAY_WEIGHTS[0] * r + GRAY_WEIGHTS[1] * g + GRAY_WEIGHTS[2] * b)
        .collect();
    Image {
        height: img.height,
        width: img.width,
        channels: 1,
        data,
    }
}

/// Adjoint of [`to_grayscale`]: spreads a single-channel gradient back over
/// `channels` planes.
pub(crate) fn grayscale_adjoint(grad: &Image, channels: usize) -> Image {
    if channels == 1 {
        return grad.clone();
    }
    let mut data = Vec::with_capacity(grad.len() * 3);
    for w in GRAY_WEIGHTS {
        data.extend(grad.data.iter().map(|g| w * g));
    }
    Image {
        height: grad.height,
        width: grad.width,
        channels: 3,
        data,
    }
}

struct Axis {
    lo: usize,
    hi: usize,
    t: f64,
}

fn bilinear_axis(out_len: usize, in_len: usize) -> Vec<Axis> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(in_len - 1);
            Axis {
                lo,
                hi,
                t: src - lo as f64,
            }
        })
        .collect()
}

/// Bilinear resampling with half-pixel-centre mapping and edge clamping.
pub fn resize_bilinear(img: &Image, out_h: usize, out_w: usize) -> Result<Image> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidArgument(format!(
            "output size must be positive, got {out_h}x{out_w}"
        )));
    }
    if out_h == img.height && out_w == img.width {
        return Ok(img.clone());
    }
    let rows = bilinear_axis(out_h, img.height);
    let cols = bilinear_axis(out_w, img.width);
    let mut data = Vec::with_capacity(out_h * out_w * img.channels);
    for c in 0..img.channels {
        let plane = img.plane(c);
        for ry in &rows {
            let top = &plane[ry.lo * img.width..(ry.lo + 1) * img.width];
            let bot = &plane[ry.hi * img.width..(ry.hi + 1) * img.width];
            for cx in &cols {
                let t = top[cx.lo] + (top[cx.hi] - top[cx.lo]) * cx.t;
                let b = bot[cx.lo] + (bot[cx.hi] - bot[cx.lo]) * cx.t;
                data.push(t + (b - t) * ry.t);
            }
        }
    }
    Image::new(out_h, out_w, img.channels, data)
}

pub fn crop_rect(img: &Image, r: &Rect) -> Result<Image> {
    if !r.fits(img.height, img.width) {
        return Err(Error::RectOutOfBounds {
            rect: r.to_string(),
            height: img.height,
            width: img.width,
        });
    }
    let mut data = Vec::with_capacity(r.height * r.width * img.channels);
    for c in 0..img.channels {
        let plane = img.plane(c);
        for y in r.top..r.top + r.height {
            let row = &plane[y * img.width..(y + 1) * img.width];
            data.extend_from_slice(&row[r.left..r.left + r.width]);
        }
    }
    Image::new(r.height, r.width, img.channels, data)
}

#[inline]
fn clamp_index(i: isize, len: usize) -> usize {
    i.clamp(0, len as isize - 1) as usize
}

fn require_single_channel(img: &Image) -> Result<()> {
    if img.channels == 1 {
        Ok(())
    } else {
        Err(Error::ChannelCount {
            expected: "1".into(),
            found: img.channels,
        })
    }
}

/// Cross-correlation (no kernel flip) with replicate padding; the output has
/// the input's size.
pub fn convolve2d(img: &Image, k: &Kernel2D) -> Result<Image> {
    require_single_channel(img)?;
    let (h, w) = (img.height, img.width);
    let (ry, rx) = ((k.rows / 2) as isize, (k.cols / 2) as isize);
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for ky in 0..k.rows {
                let sy = clamp_index(y as isize + ky as isize - ry, h);
                let row = &img.data[sy * w..(sy + 1) * w];
                for kx in 0..k.cols {
                    let sx = clamp_index(x as isize + kx as isize - rx, w);
                    acc += k.tap(ky, kx) * row[sx];
                }
            }
            out[y * w + x] = acc;
        }
    }
    Image::new(h, w, 1, out)
}

/// Transpose of [`convolve2d`] as a linear map, including the replicate
/// padding: every output gradient is scattered back onto the input pixels it
/// was read from.
pub fn convolve2d_adjoint(grad: &Image, k: &Kernel2D) -> Result<Image> {
    require_single_channel(grad)?;
    let (h, w) = (grad.height, grad.width);
    let (ry, rx) = ((k.rows / 2) as isize, (k.cols / 2) as isize);
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let g = grad.data[y * w + x];
            if g == 0.0 {
                continue;
            }
            for ky in 0..k.rows {
                let sy = clamp_index(y as isize + ky as isize - ry, h);
                for kx in 0..k.cols {
                    let sx = clamp_index(x as isize + kx as isize - rx, w);
                    out[sy * w + sx] += k.tap(ky, kx) * g;
                }
            }
        }
    }
    Image::new(h, w, 1, out)
}
