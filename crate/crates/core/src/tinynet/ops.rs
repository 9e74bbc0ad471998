use rayon::prelude::*;

use super::tensor::Tensor;
use super::weights::WeightTensor;
use crate::error::{Error, Result};

/// 3x3 cross-correlation with replicate padding of one pixel.
///
/// `w` has shape `[out, in, 3, 3]`, `b` has `out` entries. The output is
/// `ceil(h / stride) x ceil(w / stride)`; output pixel `(y, x)` is centred on
/// input pixel `(y·stride, x·stride)`. Output channels are computed in
/// parallel, each with a fixed accumulation order.
pub fn conv_layer(x: &Tensor, w: &WeightTensor, b: &[f32], stride: usize) -> Result<Tensor> {
    let dims = w.dims();
    if dims.len() != 4 || dims[2] != 3 || dims[3] != 3 {
        return Err(Error::InvalidArgument(format!(
            "convolution weights must be [out, in, 3, 3], got {dims:?}"
        )));
    }
    let (out_c, in_c) = (dims[0], dims[1]);
    if in_c != x.channels() {
        return Err(Error::ChannelCount {
            expected: in_c.to_string(),
            found: x.channels(),
        });
    }
    if b.len() != out_c {
        return Err(Error::InvalidArgument(format!(
            "bias has {} entries for {out_c} output channels",
            b.len()
        )));
    }
    if stride != 1 && stride != 2 {
        return Err(Error::InvalidArgument(format!(
            "stride must be 1 or 2, got {stride}"
        )));
    }
    let (h, wd) = (x.height(), x.width());
    let (oh, ow) = (h.div_ceil(stride), wd.div_ceil(stride));
    let (ph, pw) = (h + 2, wd + 2);

    let padded: Vec<Vec<f32>> = (0..in_c)
        .map(|c| {
            let plane = x.plane(c);
            let mut p = vec![0.0f32; ph * pw];
            for py in 0..ph {
                let sy = py.saturating_sub(1).min(h - 1);
                for px in 0..pw {
                    let sx = px.saturating_sub(1).min(wd - 1);
                    p[py * pw + px] = plane[sy * wd + sx];
                }
            }
            p
        })
        .collect();

    let taps = w.data();
    let mut out = vec![0.0f32; out_c * oh * ow];
    out.par_chunks_mut(oh * ow)
        .enumerate()
        .for_each(|(oc, dst)| {
            let kernel = |ic: usize| &taps[(oc * in_c + ic) * 9..(oc * in_c + ic + 1) * 9];
            if stride == 1 {
                // Accumulate with the padded row pitch so every tap is one
                // contiguous pass; the two extra columns per row are discarded.
                let span = (oh - 1) * pw + ow;
                let mut acc = vec![b[oc]; span];
                for (ic, pad) in padded.iter().enumerate() {
                    let k = kernel(ic);
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let wk = k[ky * 3 + kx];
                            let src = &pad[ky * pw + kx..ky * pw + kx + span];
                            for (o, s) in acc.iter_mut().zip(src) {
                                *o += wk * s;
                            }
                        }
                    }
                }
                for (oy, row) in dst.chunks_mut(ow).enumerate() {
                    row.copy_from_slice(&acc[oy * pw..oy * pw + ow]);
                }
            } else {
                dst.fill(b[oc]);
                for (ic, pad) in padded.iter().enumerate() {
                    let k = kernel(ic);
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let wk = k[ky * 3 + kx];
                            for (oy, row) in dst.chunks_mut(ow).enumerate() {
                                let src = &pad[(oy * stride + ky) * pw + kx..];
                                for (ox, o) in row.iter_mut().enumerate() {
                                    *o += wk * src[ox * stride];
                                }
                            }
                        }
                    }
                }
            }
        });
    Ok(Tensor::from_raw(out_c, oh, ow, out))
}

pub fn leaky_relu(x: &Tensor, slope: f32) -> Tensor {
    let data = x
        .data()
        .iter()
        .map(|&v| if v >= 0.0 { v } else { slope * v })
        .collect();
    Tensor::from_raw(x.channels(), x.height(), x.width(), data)
}

/// Depth-to-space: `(c·r², h, w)` → `(c, h·r, w·r)`. Channel `k·r² + i·r + j`
/// supplies sub-pixel `(i, j)` of output channel `k`.
pub fn pixel_shuffle(x: &Tensor, r: usize) -> Result<Tensor> {
    if r == 0 || !x.channels().is_multiple_of(r * r) {
        return Err(Error::InvalidArgument(format!(
            "{} channels are not divisible by {r}^2",
            x.channels()
        )));
    }
    let (oc, h, w) = (x.channels() / (r * r), x.height(), x.width());
    let (oh, ow) = (h * r, w * r);
    let mut out = vec![0.0f32; oc * oh * ow];
    for k in 0..oc {
        for i in 0..r {
            for j in 0..r {
                let src = x.plane(k * r * r + i * r + j);
                for y in 0..h {
                    for xx in 0..w {
                        out[(k * oh + y * r + i) * ow + xx * r + j] = src[y * w + xx];
                    }
                }
            }
        }
    }
    Ok(Tensor::from_raw(oc, oh, ow, out))
}

/// Inverse of [`pixel_shuffle`].
pub fn space_to_depth(x: &Tensor, r: usize) -> Result<Tensor> {
    if r == 0 || !x.height().is_multiple_of(r) || !x.width().is_multiple_of(r) {
        return Err(Error::InvalidArgument(format!(
            "{}x{} is not divisible by {r}",
            x.height(),
            x.width()
        )));
    }
    let (c, h, w) = (x.channels(), x.height() / r, x.width() / r);
    let mut out = vec![0.0f32; c * r * r * h * w];
    for k in 0..c {
        let src = x.plane(k);
        for i in 0..r {
            for j in 0..r {
                let dst = &mut out[(k * r * r + i * r + j) * h * w..][..h * w];
                for y in 0..h {
                    for xx in 0..w {
                        dst[y * w + xx] = src[(y * r + i) * x.width() + xx * r + j];
                    }
                }
            }
        }
    }
    Ok(Tensor::from_raw(c * r * r, h, w, out))
}

pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.height() != b.height() || a.width() != b.width() {
        return Err(Error::shape(
            format!("{}x{}", a.height(), a.width()),
            format!("{}x{}", b.height(), b.width()),
        ));
    }
    let mut data = Vec::with_capacity(a.data().len() + b.data().len());
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Ok(Tensor::from_raw(
        a.channels() + b.channels(),
        a.height(),
        a.width(),
        data,
    ))
}
