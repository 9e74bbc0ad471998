//! Classical disparity-guided bokeh: normalise a disparity map, derive a
//! foreground mask and a blur-radius field from it, blur with a
//! spatially varying disc (gather model), then blend the sharp foreground
//! back over the blurred frame.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{load_image, Image};
use crate::loss::SaliencyMask;

/// Per-pixel disparity; larger values are closer to the camera.
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl DisparityMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || values.len() != height * width {
            return Err(Error::InvalidArgument(format!(
                "disparity map of {} values cannot be {height}x{width}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument(
                "disparity values must be finite and non-negative".into(),
            ));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn from_image(img: &Image) -> Result<Self> {
        if img.channels() != 1 {
            return Err(Error::ChannelCount {
                expected: "1".into(),
                found: img.channels(),
            });
        }
        Self::new(img.height(), img.width(), img.data().to_vec())
    }

    /// Loads a single-channel (typically 16-bit) PNG.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_image(&load_image(path)?)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn to_image(&self) -> Image {
        Image::new(self.height, self.width, 1, self.values.clone()).expect("valid raster")
    }
}

/// Blur radius per pixel, in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct RadiusMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl RadiusMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || values.len() != height * width {
            return Err(Error::InvalidArgument(format!(
                "radius map of {} values cannot be {height}x{width}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument(
                "radii must be finite and >= 0".into(),
            ));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn uniform(height: usize, width: usize, radius: f64) -> Result<Self> {
        Self::new(height, width, vec![radius; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn max_radius(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderParams {
    /// Radius at the disparity farthest from the focal plane, in pixels.
    pub max_radius: f64,
    /// Normalised disparity that stays in focus.
    pub focal_disparity: f64,
    /// Normalised disparity at which the mask crosses 0.5.
    pub mask_threshold: f64,
    /// Half-width of the mask's linear ramp, in normalised disparity.
    pub feather: f64,
}

impl Default for RenderParams {
    fn default() -> Self {
        Self {
            max_radius: 16.0,
            focal_disparity: 1.0,
            mask_threshold: 0.6,
            feather: DEFAULT_RAMP_HALF_WIDTH,
        }
    }
}

impl RenderParams {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(self.max_radius >= 0.0 && self.max_radius.is_finite()) {
            return Err(Error::InvalidArgument("max_radius must be >= 0".into()));
        }
        if !unit(self.focal_disparity) || !unit(self.mask_threshold) {
            return Err(Error::InvalidArgument(
                "focal_disparity and mask_threshold must lie in [0, 1]".into(),
            ));
        }
        if !(self.feather >= 0.0 && self.feather.is_finite()) {
            return Err(Error::InvalidArgument("feather must be >= 0".into()));
        }
        Ok(())
    }
}

pub const DEFAULT_RAMP_HALF_WIDTH: f64 = 0.05;

/// Min-max rescale into `[0, 1]`. A constant map has no depth ordering and is
/// rejected with [`Error::DegenerateDepth`].
pub fn normalize_disparity(d: &DisparityMap) -> Result<DisparityMap> {
    let lo = d.values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = d.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return Err(Error::DegenerateDepth);
    }
    let span = hi - lo;
    Ok(DisparityMap {
        values: d.values.iter().map(|v| (v - lo) / span).collect(),
        ..d.clone()
    })
}

/// Foreground mask with the default ramp half-width.
pub fn saliency_from_disparity(d: &DisparityMap, threshold: f64) -> SaliencyMask {
    saliency_with_ramp(d, threshold, DEFAULT_RAMP_HALF_WIDTH)
}

/// 0 below `threshold − half_width`, 1 above `threshold + half_width`,
/// linear in between. A zero half-width gives a hard step that is 0.5 exactly
/// at the threshold.
pub fn saliency_with_ramp(d: &DisparityMap, threshold: f64, half_width: f64) -> SaliencyMask {
    let values = d
        .values
        .iter()
        .map(|&v| {
            if half_width > 0.0 {
                ((v - (threshold - half_width)) / (2.0 * half_width)).clamp(0.0, 1.0)
            } else if v > threshold {
                1.0
            } else if v < threshold {
                0.0
            } else {
                0.5
            }
        })
        .collect();
    SaliencyMask::new(d.height, d.width, values).expect("ramp output is finite")
}

/// `max_radius · |d − focal| / max(focal, 1 − focal)`.
pub fn radius_map(d: &DisparityMap, p: &RenderParams) -> Result<RadiusMap> {
    p.validate()?;
    let reach = p.focal_disparity.max(1.0 - p.focal_disparity);
    let values = d
        .values
        .iter()
        .map(|&v| (p.max_radius * (v - p.focal_disparity).abs() / reach).min(p.max_radius))
        .collect();
    RadiusMap::new(d.height, d.width, values)
}

/// Half-widths of the rows of an integer disc: entry `dy + r` is the largest
/// `dx` with `dx² + dy² <= r²`.
fn disc_spans(r: usize) -> Vec<usize> {
    let r2 = r * r;
    (0..=2 * r)
        .map(|i| {
            let dy = i.abs_diff(r);
            let rem = r2 - dy * dy;
            let mut dx = (rem as f64).sqrt() as usize;
            while dx * dx > rem {
                dx -= 1;
            }
            while (dx + 1) * (dx + 1) <= rem {
                dx += 1;
            }
            dx
        })
        .collect()
}

/// Per-pixel rounded disc radius.
pub fn rounded_radius(r: f64) -> usize {
    r.round() as usize
}

/// Running sums of each row from the left and from the right.
struct RowPrefix {
    stride: usize,
    left: Vec<f64>,
    right: Vec<f64>,
}

impl RowPrefix {
    fn new(plane: &[f64], h: usize, w: usize) -> Self {
        let stride = w + 1;
        let mut left = vec![0.0; h * stride];
        let mut right = vec![0.0; h * stride];
        for y in 0..h {
            let row = &plane[y * w..(y + 1) * w];
            let (l, r) = (
                &mut left[y * stride..(y + 1) * stride],
                &mut right[y * stride..(y + 1) * stride],
            );
            for x in 0..w {
                l[x + 1] = l[x] + row[x];
            }
            for x in (0..w).rev() {
                r[x] = r[x + 1] + row[x];
            }
        }
        Self {
            stride,
            left,
            right,
        }
    }

    /// Sum of `row[x0..=x1]`, split at the centre `x`: the left part comes
    /// from the left-running sums and the right part from the right-running
    /// sums. Mirroring the row swaps the two parts exactly.
    #[inline]
    fn span(&self, row: usize, centre_value: f64, x: usize, x0: usize, x1: usize) -> f64 {
        let l = &self.left[row * self.stride..(row + 1) * self.stride];
        let r = &self.right[row * self.stride..(row + 1) * self.stride];
        centre_value + ((l[x] - l[x0]) + (r[x + 1] - r[x1 + 1]))
    }
}

/// Spatially varying disc blur, gather model.
///
/// Each output pixel is the plain average of the input pixels within
/// Euclidean distance `round(radius)` of it, restricted to the image. The
/// disc is walked row by row over running row sums, so the cost per pixel
/// is `O(radius)`. Rows above and below the centre are added in mirrored
/// pairs and each row span is split at the centre column, which makes the
/// result exactly equivariant under horizontal and vertical flips for a
/// uniform radius. Output rows are processed in parallel; every value is
/// produced by a fixed sequence of operations, so the result does not depend
/// on the thread count.
pub fn disc_blur(img: &Image, r: &RadiusMap) -> Result<Image> {
    img.check_same_size(r.height, r.width)?;
    let (h, w) = (img.height(), img.width());
    let max_r = rounded_radius(r.max_radius());
    let spans: Vec<Vec<usize>> = (0..=max_r).map(disc_spans).collect();

    let mut out = vec![0.0; img.len()];
    for c in 0..img.channels() {
        let plane = img.plane(c);
        let prefix = RowPrefix::new(plane, h, w);
        out[c * h * w..(c + 1) * h * w]
            .par_chunks_mut(w)
            .enumerate()
            .for_each(|(y, dst)| {
                for (x, o) in dst.iter_mut().enumerate() {
                    let rad = rounded_radius(r.values[y * w + x]);
                    if rad == 0 {
                        *o = plane[y * w + x];
                        continue;
                    }
                    let span = &spans[rad];
                    let row_sum = |sy: usize, half: usize| -> (f64, usize) {
                        let x0 = x.saturating_sub(half);
                        let x1 = (x + half).min(w - 1);
                        (prefix.span(sy, plane[sy * w + x], x, x0, x1), x1 + 1 - x0)
                    };
                    let (mut sum, mut count) = row_sum(y, span[rad]);
                    for k in 1..=rad {
                        let half = span[rad - k];
                        let above = if k <= y {
                            row_sum(y - k, half)
                        } else {
                            (0.0, 0)
                        };
                        let below = if y + k < h {
                            row_sum(y + k, half)
                        } else {
                            (0.0, 0)
                        };
                        sum += above.0 + below.0;
                        count += above.1 + below.1;
                    }
                    *o = sum / count as f64;
                }
            });
    }
    Image::new(h, w, img.channels(), out)
}

/// `m·sharp + (1 − m)·blurred` per pixel, broadcasting the mask over
/// channels. Where the inputs agree the shared value is returned unchanged.
pub fn composite_bokeh(sharp: &Image, blurred: &Image, m: &SaliencyMask) -> Result<Image> {
    sharp.check_same_shape(blurred)?;
    sharp.check_same_size(m.height(), m.width())?;
    let n = sharp.pixels();
    let mv = m.values();
    let data = sharp
        .data()
        .iter()
        .zip(blurred.data())
        .enumerate()
        .map(|(i, (&s, &b))| {
            if s == b {
                s
            } else {
                let a = mv[i % n];
                a * s + (1.0 - a) * b
            }
        })
        .collect();
    Image::new(sharp.height(), sharp.width(), sharp.channels(), data)
}

/// Intermediate products of [`render_bokeh_detailed`].
#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub image: Image,
    pub mask: SaliencyMask,
    pub radii: RadiusMap,
}

pub fn render_bokeh(img: &Image, d: &DisparityMap, p: &RenderParams) -> Result<Image> {
    Ok(render_bokeh_detailed(img, d, p)?.image)
}

/// normalise → mask → radius field → disc blur → composite.
pub fn render_bokeh_detailed(
    img: &Image,
    d: &DisparityMap,
    p: &RenderParams,
) -> Result<RenderOutput> {
    p.validate()?;
    img.check_same_size(d.height, d.width)?;
    let nd = normalize_disparity(d)?;
    let mask = saliency_with_ramp(&nd, p.mask_threshold, p.feather);
    let radii = radius_map(&nd, p)?;
    let blurred = disc_blur(img, &radii)?;
    let image = composite_bokeh(img, &blurred, &mask)?;
    Ok(RenderOutput { image, mask, radii })
}
