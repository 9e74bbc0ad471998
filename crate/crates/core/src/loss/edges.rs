use super::{sign, SaliencyMask, SobelDirection};
use crate::error::Result;
use crate::image::{convolve2d, convolve2d_adjoint, grayscale_adjoint, to_grayscale, Image};

/// Response of one directional Sobel kernel (replicate padding).
pub fn sobel_edge_map(img: &Image, dir: SobelDirection) -> Result<Image> {
    convolve2d(img, &dir.kernel())
}

/// `gray(img) · weights`, the raster all edge and blur terms filter.
fn gated_luma(img: &Image, weights: &[f64]) -> Image {
    let g = to_grayscale(img);
    let data = g.data().iter().zip(weights).map(|(v, m)| v * m).collect();
    Image::new(g.height(), g.width(), 1, data).expect("product of finite values is finite")
}

/// Summed L1 norm of the four directional responses, divided by `h·w`.
/// This is `|L_foreedge|`.
pub fn edge_strength(img: &Image, m: &SaliencyMask) -> Result<f64> {
    m.check_matches(img)?;
    let gated = gated_luma(img, m.values());
    let mut total = 0.0;
    for dir in SobelDirection::ALL {
        total += sobel_edge_map(&gated, dir)?
            .data()
            .iter()
            .map(|v| v.abs())
            .sum::<f64>();
    }
    Ok(total / img.pixels() as f64)
}

fn edge_strength_gradient(img: &Image, m: &SaliencyMask) -> Result<Image> {
    m.check_matches(img)?;
    let gated = gated_luma(img, m.values());
    let n = img.pixels() as f64;
    let mut acc = vec![0.0; img.pixels()];
    for dir in SobelDirection::ALL {
        let k = dir.kernel();
        let signs = convolve2d(&gated, &k)?.map(sign)?;
        let back = convolve2d_adjoint(&signs, &k)?;
        for (a, b) in acc.iter_mut().zip(back.data()) {
            *a += b;
        }
    }
    let data = acc.iter().zip(m.values()).map(|(g, w)| g * w / n).collect();
    let luma_grad = Image::new(img.height(), img.width(), 1, data)?;
    Ok(grayscale_adjoint(&luma_grad, img.channels()))
}

/// Negative mean directional edge energy of the masked prediction; always
/// `<= 0`, so minimising it sharpens foreground edges.
pub fn foreground_edge_loss(pred: &Image, m: &SaliencyMask) -> Result<f64> {
    Ok(-edge_strength(pred, m)?)
}

pub fn foreground_edge_gradient(pred: &Image, m: &SaliencyMask) -> Result<Image> {
    edge_strength_gradient(pred, m)?.map(|g| -g)
}

/// Absolute difference between the foreground edge strength of the
/// prediction and that of the input.
pub fn edge_difference_loss(input: &Image, pred: &Image, m: &SaliencyMask) -> Result<f64> {
    input.check_same_size(pred.height(), pred.width())?;
    Ok((edge_strength(pred, m)? - edge_strength(input, m)?).abs())
}

pub fn edge_difference_gradient(input: &Image, pred: &Image, m: &SaliencyMask) -> Result<Image> {
    input.check_same_size(pred.height(), pred.width())?;
    let s = sign(edge_strength(pred, m)? - edge_strength(input, m)?);
    edge_strength_gradient(pred, m)?.map(|g| s * g)
}

/// Anisotropic total variation (forward differences, no wrap-around) of the
/// masked-out background, divided by `h·w`.
pub fn background_blur_loss(pred: &Image, m: &SaliencyMask) -> Result<f64> {
    m.check_matches(pred)?;
    let bg = gated_luma(pred, m.inverted().values());
    let (h, w) = (bg.height(), bg.width());
    let d = bg.data();
    let mut tv = 0.0;
    for y in 0..h {
        for x in 0..w {
            let v = d[y * w + x];
            if x + 1 < w {
                tv += (d[y * w + x + 1] - v).abs();
            }
            if y + 1 < h {
                tv += (d[(y + 1) * w + x] - v).abs();
            }
        }
    }
    Ok(tv / (h * w) as f64)
}

pub fn background_blur_gradient(pred: &Image, m: &SaliencyMask) -> Result<Image> {
    m.check_matches(pred)?;
    let inv = m.inverted();
    let bg = gated_luma(pred, inv.values());
    let (h, w) = (bg.height(), bg.width());
    let d = bg.data();
    let mut g = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if x + 1 < w {
                let s = sign(d[i + 1] - d[i]);
                g[i + 1] += s;
                g[i] -= s;
            }
            if y + 1 < h {
                let s = sign(d[i + w] - d[i]);
                g[i + w] += s;
                g[i] -= s;
            }
        }
    }
    let n = (h * w) as f64;
    let data = g.iter().zip(inv.values()).map(|(g, b)| g * b / n).collect();
    let luma_grad = Image::new(h, w, 1, data)?;
    Ok(grayscale_adjoint(&luma_grad, pred.channels()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn step() -> Image {
        Image::from_fn(3, 3, |_, x| if x == 2 { 1.0 } else { 0.0 }).unwrap()
    }

    fn random(h: usize, w: usize, c: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::new(h, w, c, (0..h * w * c).map(|_| rng.gen()).collect()).unwrap()
    }

    fn random_mask(h: usize, w: usize, seed: u64) -> SaliencyMask {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SaliencyMask::new(h, w, (0..h * w).map(|_| rng.gen()).collect()).unwrap()
    }

    #[test]
    fn sobel_on_step() {
        let x = sobel_edge_map(&step(), SobelDirection::X).unwrap();
        for y in 0..3 {
            assert_eq!(
                [x.get(0, y, 0), x.get(0, y, 1), x.get(0, y, 2)],
                [0.0, 4.0, 4.0]
            );
        }
        let y = sobel_edge_map(&step(), SobelDirection::Y).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        let c = Image::filled(4, 4, 1, 0.3).unwrap();
        for d in SobelDirection::ALL {
            assert!(sobel_edge_map(&c, d)
                .unwrap()
                .data()
                .iter()
                .all(|&v| v.abs() < 1e-12));
        }
        assert!(sobel_edge_map(&Image::zeros(3, 3, 3).unwrap(), SobelDirection::X).is_err());
    }

    #[test]
    fn diagonal_responses_on_step() {
        let sum = |d| -> f64 {
            sobel_edge_map(&step(), d)
                .unwrap()
                .data()
                .iter()
                .map(|v| v.abs())
                .sum()
        };
        assert_eq!(sum(SobelDirection::X), 24.0);
        assert_eq!(sum(SobelDirection::Y), 0.0);
        assert_eq!(sum(SobelDirection::Xy), 18.0);
        assert_eq!(sum(SobelDirection::Yx), 18.0);
    }

    #[test]
    fn foreedge_cases() {
        let ones = SaliencyMask::ones(3, 3).unwrap();
        let zeros = SaliencyMask::zeros(3, 3).unwrap();
        let c = Image::filled(3, 3, 1, 0.8).unwrap();
        assert!(foreground_edge_loss(&c, &ones).unwrap().abs() < 1e-12);
        assert_eq!(foreground_edge_loss(&step(), &zeros).unwrap(), 0.0);
        let v = foreground_edge_loss(&step(), &ones).unwrap();
        assert!((v - (-6.666_666_666_666_667)).abs() < 1e-12);
        let wrong = SaliencyMask::ones(3, 4).unwrap();
        assert!(matches!(
            foreground_edge_loss(&step(), &wrong),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn edgediff_cases() {
        let ones = SaliencyMask::ones(3, 3).unwrap();
        assert_eq!(edge_difference_loss(&step(), &step(), &ones).unwrap(), 0.0);
        let c = Image::filled(3, 3, 1, 0.2).unwrap();
        let d = Image::filled(3, 3, 1, 0.9).unwrap();
        assert!(edge_difference_loss(&c, &d, &ones).unwrap().abs() < 1e-12);
        let v = edge_difference_loss(&step(), &c, &ones).unwrap();
        assert!((v - 60.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn backblur_cases() {
        let img = Image::new(2, 2, 1, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        assert_eq!(
            background_blur_loss(&img, &SaliencyMask::zeros(2, 2).unwrap()).unwrap(),
            0.5
        );
        assert_eq!(
            background_blur_loss(&img, &SaliencyMask::ones(2, 2).unwrap()).unwrap(),
            0.0
        );
        let c = Image::filled(5, 5, 3, 0.4).unwrap();
        assert_eq!(
            background_blur_loss(&c, &SaliencyMask::zeros(5, 5).unwrap()).unwrap(),
            0.0
        );
        let g = background_blur_gradient(&c, &SaliencyMask::zeros(5, 5).unwrap()).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn edge_term_invariants() {
        for seed in 0..10 {
            let a = random(12, 10, if seed % 2 == 0 { 1 } else { 3 }, seed);
            let b = random(12, 10, a.channels(), seed + 50);
            let m = random_mask(12, 10, seed + 100);
            assert!(foreground_edge_loss(&a, &m).unwrap() <= 0.0);
            let ab = edge_difference_loss(&a, &b, &m).unwrap();
            assert!(ab >= 0.0);
            assert_eq!(ab, edge_difference_loss(&b, &a, &m).unwrap());
            assert!(background_blur_loss(&a, &m).unwrap() >= 0.0);

            // absolute homogeneity
            let s = 2.5;
            let scaled = a.map(|v| s * v).unwrap();
            let lhs = foreground_edge_loss(&scaled, &m).unwrap();
            let rhs = s * foreground_edge_loss(&a, &m).unwrap();
            assert!((lhs - rhs).abs() < 1e-12 * rhs.abs().max(1.0));

            // offset invariance with a full mask, and for the background term
            // when the background weight is uniform
            let ones = SaliencyMask::ones(12, 10).unwrap();
            let zeros = SaliencyMask::zeros(12, 10).unwrap();
            let shifted = a.map(|v| v + 0.37).unwrap();
            let fe = foreground_edge_loss(&a, &ones).unwrap();
            assert!((foreground_edge_loss(&shifted, &ones).unwrap() - fe).abs() < 1e-12);
            let bb = background_blur_loss(&a, &zeros).unwrap();
            assert!((background_blur_loss(&shifted, &zeros).unwrap() - bb).abs() < 1e-12);
        }
    }
}
