use serde::{Deserialize, Serialize};

use super::ops::{concat_channels, conv_layer, leaky_relu, pixel_shuffle};
use super::tensor::Tensor;
use super::weights::WeightStore;
use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinalOp {
    PixelShuffle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub levels: usize,
    pub base_channels: usize,
    pub skip_connections: bool,
    pub leaky_slope: f32,
    pub final_op: FinalOp,
    /// Channels of the input and output images.
    pub image_channels: usize,
}

impl Default for NetSpec {
    fn default() -> Self {
        Self {
            levels: 3,
            base_channels: 16,
            skip_connections: true,
            leaky_slope: 0.2,
            final_op: FinalOp::PixelShuffle,
            image_channels: 3,
        }
    }
}

impl NetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.base_channels == 0 || self.image_channels == 0 {
            return Err(Error::InvalidArgument(
                "levels, base_channels and image_channels must be >= 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.leaky_slope) {
            return Err(Error::InvalidArgument(format!(
                "leaky slope must be in [0, 1), got {}",
                self.leaky_slope
            )));
        }
        if self.levels > 16 {
            return Err(Error::InvalidArgument(
                "at most 16 levels are supported".into(),
            ));
        }
        Ok(())
    }

    /// Input sides must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        1 << (self.levels - 1)
    }
}

/// One 3x3 convolution of the network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerDef {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub activation: bool,
    /// Followed by a 2x pixel shuffle.
    pub shuffle: bool,
}

impl LayerDef {
    fn new(
        name: String,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        activation: bool,
        shuffle: bool,
    ) -> Self {
        Self {
            name,
            in_channels,
            out_channels,
            stride,
            activation,
            shuffle,
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn weight_dims(&self) -> Vec<usize> {
        vec![self.out_channels, self.in_channels, 3, 3]
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * 9
    }
}

fn enc_width(spec: &NetSpec, k: usize) -> usize {
    spec.base_channels << k
}

/// Expands a spec into its convolutions, in execution order.
///
/// For `levels = L >= 2`: `enc0 .. enc{L-2}` (stride 2, widths `base·2^k`),
/// `bottom` (stride 1), then `dec{L-2} .. dec0`, each producing four times
/// the channels it hands to the next stage so a 2x pixel shuffle restores
/// the resolution. A single level degenerates to `bottom` + `head`.
pub fn layer_plan(spec: &NetSpec) -> Result<Vec<LayerDef>> {
    spec.validate()?;
    let c = spec.image_channels;
    if spec.levels == 1 {
        return Ok(vec![
            LayerDef::new("bottom".into(), c, spec.base_channels, 1, true, false),
            LayerDef::new("head".into(), spec.base_channels, c, 1, false, false),
        ]);
    }
    let downs = spec.levels - 1;
    let mut plan = Vec::with_capacity(2 * downs + 1);
    for k in 0..downs {
        let inp = if k == 0 { c } else { enc_width(spec, k - 1) };
        plan.push(LayerDef::new(
            format!("enc{k}"),
            inp,
            enc_width(spec, k),
            2,
            true,
            false,
        ));
    }
    let deepest = enc_width(spec, downs - 1);
    plan.push(LayerDef::new(
        "bottom".into(),
        deepest,
        deepest,
        1,
        true,
        false,
    ));
    let mut carried = deepest;
    for k in (0..downs).rev() {
        let inp = carried
            + if spec.skip_connections {
                enc_width(spec, k)
            } else {
                0
            };
        let hand_off = if k == 0 { c } else { enc_width(spec, k - 1) };
        plan.push(LayerDef::new(
            format!("dec{k}"),
            inp,
            hand_off * 4,
            1,
            k != 0,
            true,
        ));
        carried = hand_off;
    }
    Ok(plan)
}

fn run_layer(x: &Tensor, layer: &LayerDef, w: &WeightStore, slope: f32) -> Result<Tensor> {
    let kernel = w.get(&layer.weight_name())?;
    let bias = w.get(&layer.bias_name())?;
    let mut y = conv_layer(x, kernel, bias.data(), layer.stride)?;
    if layer.activation {
        y = leaky_relu(&y, slope);
    }
    if layer.shuffle {
        y = pixel_shuffle(&y, 2)?;
    }
    Ok(y)
}

/// Raw network output before clamping.
pub fn unet_forward_tensor(x: &Tensor, w: &WeightStore, spec: &NetSpec) -> Result<Tensor> {
    w.validate(spec)?;
    let m = spec.size_multiple();
    if !x.height().is_multiple_of(m) || !x.width().is_multiple_of(m) {
        return Err(Error::InvalidArgument(format!(
            "input {}x{} is not divisible by {m}",
            x.height(),
            x.width()
        )));
    }
    if x.channels() != spec.image_channels {
        return Err(Error::ChannelCount {
            expected: spec.image_channels.to_string(),
            found: x.channels(),
        });
    }
    let plan = layer_plan(spec)?;
    let slope = spec.leaky_slope;
    if spec.levels == 1 {
        let h = run_layer(x, &plan[0], w, slope)?;
        return run_layer(&h, &plan[1], w, slope);
    }
    let downs = spec.levels - 1;
    let mut skips = Vec::with_capacity(downs);
    let mut h = x.clone();
    for layer in &plan[..downs] {
        h = run_layer(&h, layer, w, slope)?;
        skips.push(h.clone());
    }
    h = run_layer(&h, &plan[downs], w, slope)?;
    for (layer, skip) in plan[downs + 1..].iter().zip(skips.iter().rev()) {
        if spec.skip_connections {
            h = concat_channels(&h, skip)?;
        }
        h = run_layer(&h, layer, w, slope)?;
    }
    Ok(h)
}

/// Runs the network on `img` and clamps the result into `[0, 1]`.
pub fn unet_forward(img: &Image, w: &WeightStore, spec: &NetSpec) -> Result<Image> {
    unet_forward_tensor(&Tensor::from_image(img), w, spec)?.to_image()
}

/// Floating-point operations (two per multiply-accumulate) of one forward
/// pass over an `h x w` input.
pub fn unet_flops(spec: &NetSpec, h: usize, w: usize) -> Result<u64> {
    let plan = layer_plan(spec)?;
    let (mut ch, mut cw) = (h, w);
    let mut total = 0u64;
    for layer in &plan {
        let (oh, ow) = (ch.div_ceil(layer.stride), cw.div_ceil(layer.stride));
        total += 2 * (layer.out_channels * layer.in_channels * 9 * oh * ow) as u64;
        (ch, cw) = if layer.shuffle {
            (oh * 2, ow * 2)
        } else {
            (oh, ow)
        };
    }
    Ok(total)
}
