use crate::error::{Error, Result};
use crate::image::Image;

/// Channel-planar feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::shape(
                format!(
                    "{channels}x{height}x{width} ({} values)",
                    channels * height * width
                ),
                format!("{} values", data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite tensor value".into()));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub(crate) fn from_raw(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), channels * height * width);
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn from_image(img: &Image) -> Self {
        Self::from_raw(
            img.channels(),
            img.height(),
            img.width(),
            img.data().iter().map(|&v| v as f32).collect(),
        )
    }

    /// Converts back to an image, clamping into `[0, 1]`.
    pub fn to_image(&self) -> Result<Image> {
        Image::new(
            self.height,
            self.width,
            self.channels,
            self.data
                .iter()
                .map(|&v| (v as f64).clamp(0.0, 1.0))
                .collect(),
        )
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }
}
