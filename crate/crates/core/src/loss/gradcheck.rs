//! Central finite-difference oracle for the loss gradients.
//!
//! Most terms are piecewise linear, so a finite difference is only
//! meaningful when no kink lies within one step of the evaluation point.
//! [`kink_clearance`] measures that distance and [`sample_case`] draws
//! seeded inputs that respect it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::pixel::soft_histogram;
use super::{LossContext, LossTerm, SaliencyMask, SobelDirection};
use crate::error::{Error, Result};
use crate::image::{convolve2d, resize_bilinear, to_grayscale, Image, GRAY_WEIGHTS};

/// Default central-difference step.
pub const DEFAULT_EPS: f64 = 1e-5;

/// Maximum relative error accepted between analytic and numeric gradients.
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// Amplitude of the pixel nudges used to move samples off kinks.
pub const KINK_NUDGE: f64 = 1e-3;

/// Required clearance, in units of a single-pixel displacement, between a
/// sample and the nearest kink: ten finite-difference steps.
pub fn required_clearance(eps: f64) -> f64 {
    10.0 * eps
}

/// Central differences of an arbitrary scalar function of an image.
pub fn finite_diff<F>(f: F, x: &Image, eps: f64) -> Result<Image>
where
    F: Fn(&Image) -> Result<f64>,
{
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "eps must be positive, got {eps}"
        )));
    }
    let mut probe = x.data().to_vec();
    let mut grad = Vec::with_capacity(probe.len());
    for i in 0..probe.len() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let up = f(&Image::new(
            x.height(),
            x.width(),
            x.channels(),
            probe.clone(),
        )?)?;
        probe[i] = orig - eps;
        let down = f(&Image::new(
            x.height(),
            x.width(),
            x.channels(),
            probe.clone(),
        )?)?;
        probe[i] = orig;
        grad.push((up - down) / (2.0 * eps));
    }
    Image::new(x.height(), x.width(), x.channels(), grad)
}

/// Finite-difference gradient of one loss term with respect to `pred`.
pub fn finite_diff_gradient(
    term: LossTerm,
    pred: &Image,
    ctx: &LossContext,
    eps: f64,
) -> Result<Image> {
    finite_diff(|p| term.evaluate(p, ctx), pred, eps)
}

/// `max|a − n| / max(max|a|, max|n|)`: the worst deviation measured against
/// the scale of the gradient, so near-zero entries do not dominate.
pub fn relative_error(analytic: &Image, numeric: &Image) -> Result<f64> {
    analytic.check_same_shape(numeric)?;
    let inf = |img: &Image| img.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = inf(analytic).max(inf(numeric));
    let worst = analytic
        .data()
        .iter()
        .zip(numeric.data())
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    Ok(if scale == 0.0 {
        worst
    } else {
        worst / scale.max(1e-300)
    })
}

fn luma_weight_max(img: &Image) -> f64 {
    if img.channels() == 1 {
        1.0
    } else {
        GRAY_WEIGHTS.iter().copied().fold(0.0, f64::max)
    }
}

fn min_abs(values: impl Iterator<Item = f64>) -> f64 {
    values.fold(f64::INFINITY, |m, v| m.min(v.abs()))
}

/// Smallest directional response of the masked luma, converted to the pixel
/// displacement needed to zero it.
fn edge_clearance(pred: &Image, m: &SaliencyMask) -> Result<f64> {
    let gray = to_grayscale(pred);
    let gated = gray.zip_map(&m.to_image(), |g, w| g * w)?;
    let mut best = f64::INFINITY;
    for dir in SobelDirection::ALL {
        let k = dir.kernel();
        let r = convolve2d(&gated, &k)?;
        let max_tap = k.taps().iter().fold(0.0f64, |m, t| m.max(t.abs()));
        best = best.min(min_abs(r.data().iter().copied()) / (max_tap * luma_weight_max(pred)));
    }
    Ok(best)
}

/// Distance from `pred` to the nearest point where `term` is not
/// differentiable, expressed as the smallest single-pixel displacement that
/// could reach it. Smooth terms return infinity.
pub fn kink_clearance(term: LossTerm, pred: &Image, ctx: &LossContext) -> Result<f64> {
    let m = &ctx.mask;
    let residual = |other: &Image, weights: Option<&[f64]>| -> Result<f64> {
        pred.check_same_shape(other)?;
        let n = pred.pixels();
        Ok(min_abs(
            pred.data()
                .iter()
                .zip(other.data())
                .enumerate()
                .filter(|(i, _)| weights.is_none_or(|w| w[i % n] > 0.0))
                .map(|(_, (p, t))| p - t),
        ))
    };
    match term {
        LossTerm::Ssim => Ok(f64::INFINITY),
        LossTerm::L1 => residual(&ctx.target, None),
        LossTerm::MaskedL1Fg => residual(&ctx.input, Some(m.values())),
        LossTerm::MaskedL1Bg => residual(&ctx.target, Some(m.inverted().values())),
        LossTerm::ForeEdge => edge_clearance(pred, m),
        LossTerm::EdgeDiff => {
            let gap = super::edge_strength(pred, m)? - super::edge_strength(&ctx.input, m)?;
            // one pixel moves the edge strength by at most 4 kernels x 8 / (h·w)
            let per_pixel = 32.0 * luma_weight_max(pred) / pred.pixels() as f64;
            Ok(edge_clearance(pred, m)?.min(gap.abs() / per_pixel))
        }
        LossTerm::BackBlur => {
            let inv = m.inverted();
            let bg = to_grayscale(pred).zip_map(&inv.to_image(), |g, w| g * w)?;
            let (h, w) = (bg.height(), bg.width());
            let d = bg.data();
            let mut best = f64::INFINITY;
            for y in 0..h {
                for x in 0..w {
                    let i = y * w + x;
                    if x + 1 < w {
                        best = best.min((d[i + 1] - d[i]).abs());
                    }
                    if y + 1 < h {
                        best = best.min((d[i + w] - d[i]).abs());
                    }
                }
            }
            Ok(best / luma_weight_max(pred))
        }
        LossTerm::Hist => {
            let bins = ctx.hist_bins;
            let step = 1.0 / (bins - 1) as f64;
            let mut best = f64::INFINITY;
            for c in 0..pred.channels() {
                for &v in pred.plane(c) {
                    let t = v / step;
                    best = best.min((t - t.round()).abs() * step);
                }
                let hp = soft_histogram(pred.plane(c), bins);
                let ht = soft_histogram(ctx.target.plane(c), bins);
                let mass_per_unit = 1.0 / (pred.pixels() as f64 * step);
                for (p, t) in hp.iter().zip(&ht) {
                    if *p != 0.0 || *t != 0.0 {
                        best = best.min((p - t).abs() / mass_per_unit);
                    }
                }
            }
            Ok(best)
        }
    }
}

/// Bilinear upsampling of a coarse random grid: a smooth random field in
/// `[lo, hi]`.
fn smooth_field(rng: &mut ChaCha8Rng, size: usize, channels: usize, lo: f64, hi: f64) -> Image {
    let coarse = Image::new(
        4,
        4,
        channels,
        (0..16 * channels).map(|_| rng.gen_range(lo..hi)).collect(),
    )
    .expect("finite");
    resize_bilinear(&coarse, size, size).expect("positive size")
}

fn nudge_from_ties(pred: &mut [f64], other: &[f64]) {
    for (p, t) in pred.iter_mut().zip(other) {
        if (*p - t).abs() < KINK_NUDGE {
            *p = if *p >= *t {
                t + KINK_NUDGE
            } else {
                t - KINK_NUDGE
            };
        }
    }
}

fn nudge_from_bin_centres(pred: &mut [f64], bins: usize) {
    let step = 1.0 / (bins - 1) as f64;
    for v in pred.iter_mut() {
        let centre = (*v / step).round() * step;
        if (*v - centre).abs() < KINK_NUDGE {
            let away = if *v >= centre {
                KINK_NUDGE
            } else {
                -KINK_NUDGE
            };
            *v = (centre + away).clamp(KINK_NUDGE, 1.0 - KINK_NUDGE);
        }
    }
}

/// Seeded gradient-check input for `term`: a smooth random prediction with a
/// little texture, random input and target images and a smooth random mask.
/// The prediction is nudged off pixel-level ties, then re-perturbed by up to
/// [`KINK_NUDGE`] per value until it clears every kink by
/// [`required_clearance`]`(eps)`.
pub fn sample_case(
    term: LossTerm,
    seed: u64,
    channels: usize,
    size: usize,
    eps: f64,
) -> Result<(Image, LossContext)> {
    let channels = if term == LossTerm::Hist { 3 } else { channels };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6b6f_6b65_685f_6763);
    fn texture(rng: &mut ChaCha8Rng, base: Image) -> Image {
        let data = base
            .data()
            .iter()
            .map(|v| v + rng.gen_range(-0.02..0.02))
            .collect();
        Image::new(base.height(), base.width(), base.channels(), data).expect("finite")
    }
    let base = smooth_field(&mut rng, size, channels, 0.1, 0.9);
    let mut pred = texture(&mut rng, base).into_data();
    let base = smooth_field(&mut rng, size, channels, 0.05, 0.95);
    let input = texture(&mut rng, base);
    let target = Image::new(
        size,
        size,
        channels,
        (0..size * size * channels)
            .map(|_| rng.gen_range(0.05..0.95))
            .collect(),
    )?;
    let mask = SaliencyMask::from_image(&smooth_field(&mut rng, size, 1, 0.05, 0.95))?;
    let ctx = LossContext::new(input, target, mask);

    let need = required_clearance(eps);
    for _ in 0..1000 {
        match term {
            LossTerm::L1 | LossTerm::MaskedL1Bg => nudge_from_ties(&mut pred, ctx.target.data()),
            LossTerm::MaskedL1Fg => nudge_from_ties(&mut pred, ctx.input.data()),
            LossTerm::Hist => nudge_from_bin_centres(&mut pred, ctx.hist_bins),
            _ => {}
        }
        let candidate = Image::new(size, size, channels, pred.clone())?;
        if kink_clearance(term, &candidate, &ctx)? >= need {
            return Ok((candidate, ctx));
        }
        for v in pred.iter_mut() {
            *v += rng.gen_range(-KINK_NUDGE..KINK_NUDGE);
        }
    }
    Err(Error::InvalidArgument(format!(
        "could not draw a kink-free sample for `{term}` (seed {seed})"
    )))
}

/// Outcome of checking one term over a set of seeds.
#[derive(Debug, Clone, Serialize)]
pub struct TermCheck {
    pub term: LossTerm,
    pub eps: f64,
    pub max_relative_error: f64,
    pub worst_seed: u64,
    pub samples: usize,
    pub passed: bool,
}

/// Compares the analytic gradient of `term` against central differences on
/// `seeds.len()` samples of size `size`, alternating single- and
/// three-channel inputs. `perturb` is applied to the analytic gradient
/// before comparison; it exists so the harness can run a negative control.
pub fn check_term(
    term: LossTerm,
    seeds: &[u64],
    size: usize,
    eps: f64,
    tolerance: f64,
    perturb: Option<&(dyn Fn(&Image) -> Image + Sync)>,
) -> Result<TermCheck> {
    let errors = seeds
        .par_iter()
        .map(|&seed| {
            let channels = if seed % 2 == 0 { 1 } else { 3 };
            let (pred, ctx) = sample_case(term, seed, channels, size, eps)?;
            let mut analytic = term.gradient(&pred, &ctx)?;
            if let Some(f) = perturb {
                analytic = f(&analytic);
            }
            let numeric = finite_diff_gradient(term, &pred, &ctx, eps)?;
            relative_error(&analytic, &numeric)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut worst = (0.0f64, seeds.first().copied().unwrap_or(0));
    for (&seed, &err) in seeds.iter().zip(&errors) {
        if err > worst.0 || err.is_nan() {
            worst = (err, seed);
        }
    }
    Ok(TermCheck {
        term,
        eps,
        max_relative_error: worst.0,
        worst_seed: worst.1,
        samples: seeds.len(),
        passed: worst.0 <= tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn richardson_on_quadratic() {
        // f(x) = Σ x³ has a non-zero third derivative, so the central
        // difference error is exactly eps² per entry.
        let x = Image::from_fn(3, 3, |y, x| 0.1 * (y * 3 + x) as f64 + 0.2).unwrap();
        let f = |img: &Image| Ok(img.data().iter().map(|v| v * v * v).sum::<f64>());
        let exact = x.map(|v| 3.0 * v * v).unwrap();
        let err = |eps: f64| {
            let g = finite_diff(f, &x, eps).unwrap();
            g.data()
                .iter()
                .zip(exact.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (err(1e-2), err(5e-3));
        let ratio = e1 / e2;
        assert!((ratio - 4.0).abs() < 0.05, "ratio {ratio}");
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let x = Image::filled(4, 4, 3, 0.3).unwrap();
        let g = finite_diff(|_| Ok(2.5), &x, 1e-5).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
        assert!(finite_diff(|_| Ok(0.0), &x, 0.0).is_err());
    }

    #[test]
    fn relative_error_scaling() {
        let a = Image::new(1, 2, 1, vec![1.0, 2.0]).unwrap();
        let b = Image::new(1, 2, 1, vec![1.0, 2.2]).unwrap();
        assert!((relative_error(&a, &b).unwrap() - 0.2 / 2.2).abs() < 1e-15);
        let z = Image::zeros(1, 2, 1).unwrap();
        assert_eq!(relative_error(&z, &z).unwrap(), 0.0);
    }

    #[test]
    fn samples_are_deterministic_and_clear() {
        for term in LossTerm::ALL {
            let (p1, c1) = sample_case(term, 3, 3, 16, DEFAULT_EPS).unwrap();
            let (p2, _) = sample_case(term, 3, 3, 16, DEFAULT_EPS).unwrap();
            assert_eq!(p1, p2);
            assert!(kink_clearance(term, &p1, &c1).unwrap() >= required_clearance(DEFAULT_EPS));
        }
    }

    #[test]
    fn every_term_passes_on_a_few_seeds() {
        for term in LossTerm::ALL {
            let r = check_term(term, &[0, 1, 2], 16, DEFAULT_EPS, DEFAULT_TOLERANCE, None).unwrap();
            assert!(r.passed, "{term}: {}", r.max_relative_error);
        }
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let corrupt = |g: &Image| g.map(|v| v * 1.01).unwrap();
        let r = check_term(
            LossTerm::L1,
            &[0, 1],
            16,
            DEFAULT_EPS,
            DEFAULT_TOLERANCE,
            Some(&corrupt),
        )
        .unwrap();
        assert!(!r.passed);
        assert!(r.max_relative_error > 5e-3);
    }

    #[test]
    fn l1_ssim_masked_gradients_against_oracle() {
        let (pred, ctx) = sample_case(LossTerm::Ssim, 11, 3, 16, DEFAULT_EPS).unwrap();
        let a = LossTerm::Ssim.gradient(&pred, &ctx).unwrap();
        let n = finite_diff_gradient(LossTerm::Ssim, &pred, &ctx, 1e-5).unwrap();
        assert!(relative_error(&a, &n).unwrap() < 1e-4);
    }

    #[test]
    fn pretrain_gradient_matches_oracle() {
        use super::super::{pretrain_gradient, pretrain_loss, LossWeights};
        let w = LossWeights::default();
        // The combined objective carries the union of the terms' kinks, so
        // take the first seed whose sample clears all of them.
        let (pred, ctx) = (0..50)
            .map(|seed| sample_case(LossTerm::EdgeDiff, seed, 3, 16, DEFAULT_EPS).unwrap())
            .find(|(p, c)| {
                [LossTerm::L1, LossTerm::BackBlur]
                    .iter()
                    .all(|t| kink_clearance(*t, p, c).unwrap() >= required_clearance(DEFAULT_EPS))
            })
            .expect("some seed clears every kink");
        let f =
            |p: &Image| pretrain_loss(&ctx.input, p, &ctx.target, &ctx.mask, &w).map(|b| b.total);
        let a = pretrain_gradient(&ctx.input, &pred, &ctx.target, &ctx.mask, &w).unwrap();
        let n = finite_diff(f, &pred, DEFAULT_EPS).unwrap();
        assert!(relative_error(&a, &n).unwrap() < 1e-4);
    }
}
