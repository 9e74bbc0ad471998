use super::{sign, SaliencyMask};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics::{filter_valid_adjoint, local_stats, ssim, SsimParams};

pub const DEFAULT_HIST_BINS: usize = 32;

/// Guards the mask-mass normalisation of the masked L1 terms.
pub const MASK_MASS_EPS: f64 = 1e-8;

/// Mean absolute difference over every value.
pub fn l1_loss(pred: &Image, target: &Image) -> Result<f64> {
    pred.check_same_shape(target)?;
    let sum: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| (p - t).abs())
        .sum();
    Ok(sum / pred.len() as f64)
}

pub fn l1_gradient(pred: &Image, target: &Image) -> Result<Image> {
    let n = pred.len() as f64;
    pred.zip_map(target, |p, t| sign(p - t) / n)
}

fn check_masked(pred: &Image, target: &Image, m: &SaliencyMask) -> Result<()> {
    pred.check_same_shape(target)?;
    m.check_matches(pred)
}

fn masked_l1_weighted(pred: &Image, target: &Image, weights: &[f64]) -> f64 {
    let mass = weights.iter().sum::<f64>().max(MASK_MASS_EPS);
    let per_channel: f64 = (0..pred.channels())
        .map(|c| {
            pred.plane(c)
                .iter()
                .zip(target.plane(c))
                .zip(weights)
                .map(|((p, t), m)| (p - t).abs() * m)
                .sum::<f64>()
                / mass
        })
        .sum();
    per_channel / pred.channels() as f64
}

/// L1 restricted to the mask: `Σ|pred − target|·m / max(Σm, ε)` per channel,
/// averaged over channels.
pub fn masked_l1_loss(pred: &Image, target: &Image, m: &SaliencyMask) -> Result<f64> {
    check_masked(pred, target, m)?;
    Ok(masked_l1_weighted(pred, target, m.values()))
}

/// [`masked_l1_loss`] over the background, i.e. with weight `1 − m`.
pub fn masked_l1_background_loss(pred: &Image, target: &Image, m: &SaliencyMask) -> Result<f64> {
    masked_l1_loss(pred, target, &m.inverted())
}

/// Gradient of [`masked_l1_loss`]; pass `m.inverted()` for the background
/// variant.
pub fn masked_l1_gradient(pred: &Image, target: &Image, m: &SaliencyMask) -> Result<Image> {
    check_masked(pred, target, m)?;
    let w = m.values();
    let scale = 1.0 / (w.iter().sum::<f64>().max(MASK_MASS_EPS) * pred.channels() as f64);
    let n = pred.pixels();
    let data = pred
        .data()
        .iter()
        .zip(target.data())
        .enumerate()
        .map(|(i, (p, t))| sign(p - t) * w[i % n] * scale)
        .collect();
    Image::new(pred.height(), pred.width(), pred.channels(), data)
}

/// `1 − SSIM(pred, target)`.
pub fn ssim_loss(pred: &Image, target: &Image, p: &SsimParams) -> Result<f64> {
    Ok(1.0 - ssim(pred, target, p)?)
}

/// Gradient of [`ssim_loss`] with respect to `pred`.
///
/// Each local SSIM value is a function of the windowed mean of `pred`, the
/// windowed mean of `pred²` and the windowed mean of `pred·target`; the
/// chain rule runs through those three maps and back through the window.
pub fn ssim_loss_gradient(pred: &Image, target: &Image, p: &SsimParams) -> Result<Image> {
    // Validates shapes, window size and parameters.
    ssim(pred, target, p)?;
    let win = p.window();
    let (h, w) = (pred.height(), pred.width());
    let (c1, c2) = (p.c1(), p.c2());
    let channels = pred.channels();
    let mut out = Vec::with_capacity(pred.len());
    for c in 0..channels {
        let (a, b) = (pred.plane(c), target.plane(c));
        let s = local_stats(a, b, h, w, &win);
        let n = (s.height * s.width) as f64;
        let norm = -1.0 / (n * channels as f64);
        let len = s.mu_a.len();
        let (mut d_mu, mut d_aa, mut d_ab) = (vec![0.0; len], vec![0.0; len], vec![0.0; len]);
        for i in 0..len {
            let (ua, ub) = (s.mu_a[i], s.mu_b[i]);
            let a1 = 2.0 * ua * ub + c1;
            let a2 = 2.0 * s.cov[i] + c2;
            let b1 = ua * ua + ub * ub + c1;
            let b2 = s.var_a[i] + s.var_b[i] + c2;
            let den = b1 * b2;
            let val = a1 * a2 / den;
            d_mu[i] = norm * (2.0 * ub * (a2 - a1) - val * 2.0 * ua * (b2 - b1)) / den;
            d_aa[i] = norm * (-val * b1) / den;
            d_ab[i] = norm * (2.0 * a1) / den;
        }
        let g_mu = filter_valid_adjoint(&d_mu, h, w, &win);
        let g_aa = filter_valid_adjoint(&d_aa, h, w, &win);
        let g_ab = filter_valid_adjoint(&d_ab, h, w, &win);
        for i in 0..h * w {
            out.push(g_mu[i] + 2.0 * a[i] * g_aa[i] + b[i] * g_ab[i]);
        }
    }
    Image::new(h, w, channels, out)
}

fn check_hist(pred: &Image, target: &Image, bins: usize) -> Result<()> {
    if pred.channels() != 3 {
        return Err(Error::ChannelCount {
            expected: "3".into(),
            found: pred.channels(),
        });
    }
    pred.check_same_shape(target)?;
    if bins < 2 {
        return Err(Error::InvalidArgument(format!(
            "histogram needs at least 2 bins, got {bins}"
        )));
    }
    Ok(())
}

/// Lower bin index and the weight carried by the upper neighbour. Bin
/// centres sit at `k / (bins − 1)`; values are clamped into `[0, 1]`.
#[inline]
fn soft_bin(v: f64, bins: usize) -> (usize, f64) {
    let t = v.clamp(0.0, 1.0) * (bins - 1) as f64;
    let lo = (t.floor() as usize).min(bins - 2);
    (lo, t - lo as f64)
}

/// Normalised histogram of one plane with triangular soft assignment.
pub(crate) fn soft_histogram(plane: &[f64], bins: usize) -> Vec<f64> {
    let mut h = vec![0.0; bins];
    let n = plane.len() as f64;
    for &v in plane {
        let (lo, f) = soft_bin(v, bins);
        h[lo] += (1.0 - f) / n;
        h[lo + 1] += f / n;
    }
    h
}

/// L1 distance between soft colour histograms, summed over R, G and B.
pub fn histogram_loss(pred: &Image, target: &Image, bins: usize) -> Result<f64> {
    check_hist(pred, target, bins)?;
    Ok((0..3)
        .map(|c| {
            let hp = soft_histogram(pred.plane(c), bins);
            let ht = soft_histogram(target.plane(c), bins);
            hp.iter().zip(&ht).map(|(p, t)| (p - t).abs()).sum::<f64>()
        })
        .sum())
}

pub fn histogram_gradient(pred: &Image, target: &Image, bins: usize) -> Result<Image> {
    check_hist(pred, target, bins)?;
    let n = pred.pixels() as f64;
    let slope = (bins - 1) as f64 / n;
    let mut out = Vec::with_capacity(pred.len());
    for c in 0..3 {
        let hp = soft_histogram(pred.plane(c), bins);
        let ht = soft_histogram(target.plane(c), bins);
        let s: Vec<f64> = hp.iter().zip(&ht).map(|(p, t)| sign(p - t)).collect();
        out.extend(pred.plane(c).iter().map(|&v| {
            if !(0.0..=1.0).contains(&v) {
                return 0.0;
            }
            let (lo, _) = soft_bin(v, bins);
            slope * (s[lo + 1] - s[lo])
        }));
    }
    Image::new(pred.height(), pred.width(), 3, out)
}
