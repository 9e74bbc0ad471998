//! Bokeh-specific training losses with analytic gradients.
//!
//! Every term is a scalar function of the predicted image. Edge and blur
//! terms operate on the luma of the prediction; colour terms operate per
//! channel. Gradients are taken with respect to every value of the
//! prediction and are validated against central finite differences in
//! [`gradcheck`].
//!
//! The L1-type terms are piecewise linear. At an exact tie (zero residual or
//! zero filter response) the subgradient used is 0; callers that need a true
//! derivative must evaluate away from such points.

mod edges;
pub mod gradcheck;
mod pixel;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use edges::{
    background_blur_gradient, background_blur_loss, edge_difference_gradient, edge_difference_loss,
    edge_strength, foreground_edge_gradient, foreground_edge_loss, sobel_edge_map,
};
pub use pixel::{
    histogram_gradient, histogram_loss, l1_gradient, l1_loss, masked_l1_background_loss,
    masked_l1_gradient, masked_l1_loss, ssim_loss, ssim_loss_gradient, DEFAULT_HIST_BINS,
    MASK_MASS_EPS,
};

use crate::error::{Error, Result};
use crate::image::{Image, Kernel2D};
use crate::metrics::SsimParams;

/// Single-channel soft foreground mask; 1 marks the in-focus subject.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMask {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl SaliencyMask {
    /// Values are clamped into `[0, 1]`; non-finite values are rejected.
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || values.len() != height * width {
            return Err(Error::InvalidArgument(format!(
                "mask of {} values cannot be {height}x{width}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite mask value".into()));
        }
        Ok(Self {
            height,
            width,
            values: values.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn ones(height: usize, width: usize) -> Result<Self> {
        Self::filled(height, width, 1.0)
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::filled(height, width, 0.0)
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

    pub fn to_image(&self) -> Image {
        Image::new(self.height, self.width, 1, self.values.clone()).expect("mask is a valid raster")
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

    /// `1 − m`.
    pub fn inverted(&self) -> SaliencyMask {
        SaliencyMask {
            values: self.values.iter().map(|m| 1.0 - m).collect(),
            ..self.clone()
        }
    }

    pub(crate) fn check_matches(&self, img: &Image) -> Result<()> {
        img.check_same_size(self.height, self.width).map_err(|_| {
            Error::shape(
                format!("{}x{}", self.height, self.width),
                img.shape_string(),
            )
        })
    }
}

/// Coefficients of the pre-training objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub zeta: f64,
    pub lambda: f64,
    pub kappa: f64,
    pub mu: f64,
    pub nu: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 0.1,
            zeta: 0.05,
            lambda: 1.0,
            kappa: 0.005,
            mu: 0.1,
            nu: 0.005,
        }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        Self {
            alpha: 0.0,
            beta: 0.0,
            zeta: 0.0,
            lambda: 0.0,
            kappa: 0.0,
            mu: 0.0,
            nu: 0.0,
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            alpha: self.alpha * s,
            beta: self.beta * s,
            zeta: self.zeta * s,
            lambda: self.lambda * s,
            kappa: self.kappa * s,
            mu: self.mu * s,
            nu: self.nu * s,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SobelDirection {
    X,
    Y,
    Xy,
    Yx,
}

impl SobelDirection {
    pub const ALL: [SobelDirection; 4] = [
        SobelDirection::X,
        SobelDirection::Y,
        SobelDirection::Xy,
        SobelDirection::Yx,
    ];

    pub fn kernel(self) -> Kernel2D {
        match self {
            SobelDirection::X => {
                Kernel2D::from_3x3([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
            }
            SobelDirection::Y => SobelDirection::X.kernel().transpose(),
            SobelDirection::Xy => {
                Kernel2D::from_3x3([[2.0, 1.0, 0.0], [1.0, 0.0, -1.0], [0.0, -1.0, -2.0]])
            }
            SobelDirection::Yx => {
                Kernel2D::from_3x3([[0.0, 1.0, 2.0], [-1.0, 0.0, 1.0], [-2.0, -1.0, 0.0]])
            }
        }
    }
}

/// Stable tags for the individually differentiable loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LossTerm {
    #[serde(rename = "l1")]
    L1,
    #[serde(rename = "ssim")]
    Ssim,
    #[serde(rename = "foreedge")]
    ForeEdge,
    #[serde(rename = "edgediff")]
    EdgeDiff,
    #[serde(rename = "backblur")]
    BackBlur,
    #[serde(rename = "hist")]
    Hist,
    #[serde(rename = "masked_l1_fg")]
    MaskedL1Fg,
    #[serde(rename = "masked_l1_bg")]
    MaskedL1Bg,
}

impl LossTerm {
    pub const ALL: [LossTerm; 8] = [
        LossTerm::L1,
        LossTerm::Ssim,
        LossTerm::ForeEdge,
        LossTerm::EdgeDiff,
        LossTerm::BackBlur,
        LossTerm::Hist,
        LossTerm::MaskedL1Fg,
        LossTerm::MaskedL1Bg,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            LossTerm::L1 => "l1",
            LossTerm::Ssim => "ssim",
            LossTerm::ForeEdge => "foreedge",
            LossTerm::EdgeDiff => "edgediff",
            LossTerm::BackBlur => "backblur",
            LossTerm::Hist => "hist",
            LossTerm::MaskedL1Fg => "masked_l1_fg",
            LossTerm::MaskedL1Bg => "masked_l1_bg",
        }
    }

    /// Value of the term at `pred`.
    pub fn evaluate(self, pred: &Image, ctx: &LossContext) -> Result<f64> {
        match self {
            LossTerm::L1 => l1_loss(pred, &ctx.target),
            LossTerm::Ssim => ssim_loss(pred, &ctx.target, &ctx.ssim),
            LossTerm::ForeEdge => foreground_edge_loss(pred, &ctx.mask),
            LossTerm::EdgeDiff => edge_difference_loss(&ctx.input, pred, &ctx.mask),
            LossTerm::BackBlur => background_blur_loss(pred, &ctx.mask),
            LossTerm::Hist => histogram_loss(pred, &ctx.target, ctx.hist_bins),
            LossTerm::MaskedL1Fg => masked_l1_loss(pred, &ctx.input, &ctx.mask),
            LossTerm::MaskedL1Bg => masked_l1_background_loss(pred, &ctx.target, &ctx.mask),
        }
    }

    /// Analytic gradient of the term with respect to `pred`.
    pub fn gradient(self, pred: &Image, ctx: &LossContext) -> Result<Image> {
        match self {
            LossTerm::L1 => l1_gradient(pred, &ctx.target),
            LossTerm::Ssim => ssim_loss_gradient(pred, &ctx.target, &ctx.ssim),
            LossTerm::ForeEdge => foreground_edge_gradient(pred, &ctx.mask),
            LossTerm::EdgeDiff => edge_difference_gradient(&ctx.input, pred, &ctx.mask),
            LossTerm::BackBlur => background_blur_gradient(pred, &ctx.mask),
            LossTerm::Hist => histogram_gradient(pred, &ctx.target, ctx.hist_bins),
            LossTerm::MaskedL1Fg => masked_l1_gradient(pred, &ctx.input, &ctx.mask),
            LossTerm::MaskedL1Bg => masked_l1_gradient(pred, &ctx.target, &ctx.mask.inverted()),
        }
    }
}

impl fmt::Display for LossTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for LossTerm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossTerm::ALL
            .into_iter()
            .find(|t| t.tag() == s)
            .ok_or_else(|| Error::UnknownTerm(s.to_string()))
    }
}

/// Everything a loss term needs besides the prediction.
///
/// `input` is the all-in-focus source image, `target` the ground-truth
/// bokeh image. The foreground masked-L1 term compares against `input`;
/// the background term compares against `target`.
#[derive(Debug, Clone)]
pub struct LossContext {
    pub input: Image,
    pub target: Image,
    pub mask: SaliencyMask,
    pub hist_bins: usize,
    pub ssim: SsimParams,
}

impl LossContext {
    pub fn new(input: Image, target: Image, mask: SaliencyMask) -> Self {
        Self {
            input,
            target,
            mask,
            hist_bins: DEFAULT_HIST_BINS,
            ssim: SsimParams::default(),
        }
    }
}

/// Per-term values of the pre-training objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PretrainBreakdown {
    pub l1: f64,
    pub ssim: f64,
    pub edgediff: f64,
    pub backblur: f64,
    pub foreedge: f64,
    pub total: f64,
}

/// `α·L1 + ζ·L_SSIM + κ·L_edgediff + μ·L_backblur + ν·L_foreedge`.
pub fn pretrain_loss(
    input: &Image,
    pred: &Image,
    target: &Image,
    m: &SaliencyMask,
    w: &LossWeights,
) -> Result<PretrainBreakdown> {
    input.check_same_shape(pred)?;
    let l1 = l1_loss(pred, target)?;
    let ssim = ssim_loss(pred, target, &SsimParams::default())?;
    let edgediff = edge_difference_loss(input, pred, m)?;
    let backblur = background_blur_loss(pred, m)?;
    let foreedge = foreground_edge_loss(pred, m)?;
    let total =
        w.alpha * l1 + w.zeta * ssim + w.kappa * edgediff + w.mu * backblur + w.nu * foreedge;
    Ok(PretrainBreakdown {
        l1,
        ssim,
        edgediff,
        backblur,
        foreedge,
        total,
    })
}

/// Gradient of [`pretrain_loss`]'s total with respect to `pred`.
pub fn pretrain_gradient(
    input: &Image,
    pred: &Image,
    target: &Image,
    m: &SaliencyMask,
    w: &LossWeights,
) -> Result<Image> {
    input.check_same_shape(pred)?;
    let parts = [
        (w.alpha, l1_gradient(pred, target)?),
        (
            w.zeta,
            ssim_loss_gradient(pred, target, &SsimParams::default())?,
        ),
        (w.kappa, edge_difference_gradient(input, pred, m)?),
        (w.mu, background_blur_gradient(pred, m)?),
        (w.nu, foreground_edge_gradient(pred, m)?),
    ];
    let mut acc = vec![0.0; pred.len()];
    for (wt, g) in &parts {
        for (a, v) in acc.iter_mut().zip(g.data()) {
            *a += wt * v;
        }
    }
    Image::new(pred.height(), pred.width(), pred.channels(), acc)
}

#[inline]
pub(crate) fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step() -> Image {
        Image::from_fn(3, 3, |_, x| if x == 2 { 1.0 } else { 0.0 }).unwrap()
    }

    #[test]
    fn tags_round_trip() {
        for t in LossTerm::ALL {
            assert_eq!(t.tag().parse::<LossTerm>().unwrap(), t);
            assert_eq!(
                serde_json::to_string(&t).unwrap(),
                format!("\"{}\"", t.tag())
            );
        }
        assert!(matches!(
            "vgg".parse::<LossTerm>(),
            Err(Error::UnknownTerm(_))
        ));
    }

    #[test]
    fn default_weights_are_published_values() {
        let w = LossWeights::default();
        assert_eq!(
            [w.alpha, w.beta, w.zeta, w.lambda, w.kappa, w.mu, w.nu],
            [0.5, 0.1, 0.05, 1.0, 0.005, 0.1, 0.005]
        );
    }

    #[test]
    fn sobel_kernels_zero_sum_and_y_is_transpose() {
        for d in SobelDirection::ALL {
            assert_eq!(d.kernel().taps().iter().sum::<f64>(), 0.0);
            assert_eq!(d.kernel().abs_sum(), 8.0);
        }
        assert_eq!(
            SobelDirection::Y.kernel().taps(),
            &[-1.0, -2.0, -1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 1.0]
        );
    }

    #[test]
    fn mask_clamps_and_validates() {
        let m = SaliencyMask::new(1, 3, vec![-0.5, 0.5, 1.5]).unwrap();
        assert_eq!(m.values(), &[0.0, 0.5, 1.0]);
        assert!(SaliencyMask::new(1, 2, vec![0.0]).is_err());
        assert!(SaliencyMask::new(1, 1, vec![f64::NAN]).is_err());
        assert_eq!(m.inverted().values(), &[1.0, 0.5, 0.0]);
    }

    #[test]
    fn pretrain_trivial_cases() {
        let c = Image::filled(16, 16, 3, 0.4).unwrap();
        let m = SaliencyMask::filled(16, 16, 0.7).unwrap();
        let b = pretrain_loss(&c, &c, &c, &m, &LossWeights::default()).unwrap();
        assert!(b.total.abs() < 1e-12);

        let other = Image::from_fn(16, 16, |y, x| ((y * 3 + x * 5) % 7) as f64 / 7.0).unwrap();
        let gray = Image::filled(16, 16, 1, 0.2).unwrap();
        let z = pretrain_loss(&gray, &other, &gray, &m, &LossWeights::zero()).unwrap();
        assert_eq!(z.total, 0.0);
        let g = pretrain_loss(&gray, &gray, &gray, &m, &LossWeights::default()).unwrap();
        assert!(g.total.abs() < 1e-12);
    }

    #[test]
    fn pretrain_composes_terms_and_is_linear_in_weights() {
        // 3x3 step images are smaller than the SSIM window, so use a 16x16
        // version of the same step for the composite fixture.
        let input = Image::from_fn(16, 16, |_, x| if x >= 8 { 1.0 } else { 0.0 }).unwrap();
        let pred = Image::filled(16, 16, 1, 0.5).unwrap();
        let target = Image::from_fn(16, 16, |y, _| if y >= 8 { 0.9 } else { 0.1 }).unwrap();
        let m = SaliencyMask::ones(16, 16).unwrap();
        let w = LossWeights::default();
        let b = pretrain_loss(&input, &pred, &target, &m, &w).unwrap();
        let manual = 0.5 * l1_loss(&pred, &target).unwrap()
            + 0.05 * ssim_loss(&pred, &target, &SsimParams::default()).unwrap()
            + 0.005 * edge_difference_loss(&input, &pred, &m).unwrap()
            + 0.1 * background_blur_loss(&pred, &m).unwrap()
            + 0.005 * foreground_edge_loss(&pred, &m).unwrap();
        assert_eq!(b.total, manual);
        assert!((b.l1 - 0.4).abs() < 1e-12);
        let doubled = pretrain_loss(&input, &pred, &target, &m, &w.scaled(2.0)).unwrap();
        assert!((doubled.total - 2.0 * b.total).abs() <= 1e-15 * b.total.abs().max(1.0));
    }

    #[test]
    fn step_fixture_terms() {
        let m = SaliencyMask::ones(3, 3).unwrap();
        let fe = foreground_edge_loss(&step(), &m).unwrap();
        assert!((fe + 60.0 / 9.0).abs() < 1e-12);
    }
}
