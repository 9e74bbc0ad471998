//! Fixtures and reference implementations shared by the benchmarks.

use bokeh_core::render::RadiusMap;
use bokeh_core::Image;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_image(h: usize, w: usize, c: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::new(h, w, c, (0..h * w * c).map(|_| rng.gen()).collect()).expect("valid raster")
}

pub fn random_radii(h: usize, w: usize, max: f64, seed: u64) -> RadiusMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    RadiusMap::new(h, w, (0..h * w).map(|_| rng.gen_range(0.0..=max)).collect())
        .expect("valid radii")
}

/// Direct per-pixel disc average, O(r^2) per pixel.
pub fn brute_disc_blur(img: &Image, r: &RadiusMap) -> Image {
    let (h, w) = (img.height() as isize, img.width() as isize);
    let mut out = img.clone();
    for c in 0..img.channels() {
        for y in 0..h {
            for x in 0..w {
                let rad = r.values()[(y * w + x) as usize].round() as isize;
                let (mut s, mut n) = (0.0, 0.0);
                for dy in -rad..=rad {
                    for dx in -rad..=rad {
                        let (sy, sx) = (y + dy, x + dx);
                        if dy * dy + dx * dx <= rad * rad
                            && (0..h).contains(&sy)
                            && (0..w).contains(&sx)
                        {
                            s += img.get(c, sy as usize, sx as usize);
                            n += 1.0;
                        }
                    }
                }
                out.set(c, y as usize, x as usize, s / n);
            }
        }
    }
    out
}
