//! Windowed structural similarity with the standard constants (11-tap
//! Gaussian window, sigma 1.5, C1 = (0.01 L)^2, C2 = (0.03 L)^2, L = 1) and
//! the mask-SSIM variant that aggregates the per-pixel SSIM map over head
//! pixels only.

use ndarray::Array2;

use crate::error::{CoreError, Result};
use crate::img::{filter_cols, filter_rows, RgbImage};

const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn window_kernel() -> Vec<f64> {
    let radius = (WINDOW / 2) as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i as f64).powi(2) / (2.0 * SIGMA * SIGMA)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

fn filter(src: &Array2<f64>, kernel: &[f64]) -> Array2<f64> {
    filter_cols(&filter_rows(src, kernel), kernel)
}

fn ssim_map_channel(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let k = window_kernel();
    let mu_a = filter(a, &k);
    let mu_b = filter(b, &k);
    let aa = filter(&(a * a), &k);
    let bb = filter(&(b * b), &k);
    let ab = filter(&(a * b), &k);
    let (h, w) = a.dim();
    let mut map = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let ma = mu_a[[y, x]];
            let mb = mu_b[[y, x]];
            let va = aa[[y, x]] - ma * ma;
            let vb = bb[[y, x]] - mb * mb;
            let cab = ab[[y, x]] - ma * mb;
            let num = (2.0 * ma * mb + C1) * (2.0 * cab + C2);
            let den = (ma * ma + mb * mb + C1) * (va + vb + C2);
            map[[y, x]] = num / den;
        }
    }
    map
}

/// Per-pixel SSIM map, averaged over the three channels.
pub fn ssim_map(a: &RgbImage, b: &RgbImage) -> Result<Array2<f64>> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(CoreError::InvalidInput("ssim: image shapes differ".into()));
    }
    if a.width() < WINDOW || a.height() < WINDOW {
        return Err(CoreError::InvalidInput(format!(
            "ssim: image smaller than the {WINDOW}x{WINDOW} window"
        )));
    }
    let mut map = Array2::<f64>::zeros((a.height(), a.width()));
    for ch in 0..3 {
        let pa = a.data().index_axis(ndarray::Axis(0), ch).to_owned();
        let pb = b.data().index_axis(ndarray::Axis(0), ch).to_owned();
        map += &ssim_map_channel(&pa, &pb);
    }
    map /= 3.0;
    Ok(map)
}

fn mean_over(map: &Array2<f64>, mask: Option<&Array2<u8>>) -> Option<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for ((y, x), &v) in map.indexed_iter() {
        let keep = mask.map(|m| m[[y, x]] != 0).unwrap_or(true);
        if keep {
            sum += v;
            count += 1;
        }
    }
    if count == 0 {
        None
    } else {
        Some(sum / count as f64)
    }
}

/// Mean SSIM over the whole frame.
pub fn ssim(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    let map = ssim_map(a, b)?;
    Ok(mean_over(&map, None).expect("non-empty image"))
}

/// SSIM map aggregated over mask pixels only; `None` when the mask is empty.
pub fn mask_ssim(a: &RgbImage, b: &RgbImage, mask: &Array2<u8>) -> Result<Option<f64>> {
    if mask.dim() != (a.height(), a.width()) {
        return Err(CoreError::InvalidInput("mask shape mismatch".into()));
    }
    let map = ssim_map(a, b)?;
    Ok(mean_over(&map, Some(mask)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(seed: u64, h: usize, w: usize) -> RgbImage {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut img = RgbImage::new(h, w);
        for y in 0..h {
            for x in 0..w {
                img.set(x, y, [rng.random(), rng.random(), rng.random()]);
            }
        }
        img
    }

    #[test]
    fn self_similarity_is_exactly_one() {
        let img = textured(1, 24, 24);
        assert_eq!(ssim(&img, &img).unwrap(), 1.0);
    }

    #[test]
    fn constant_images_match_the_direct_formula() {
        let mut a = RgbImage::new(16, 16);
        let mut b = RgbImage::new(16, 16);
        for y in 0..16 {
            for x in 0..16 {
                a.set(x, y, [0.2, 0.2, 0.2]);
                b.set(x, y, [0.5, 0.5, 0.5]);
            }
        }
        // Direct formula oracle: constant images have zero variances, so
        // SSIM = (2 u v + C1) / (u^2 + v^2 + C1) (the contrast term is 1).
        let (u, v) = (0.2f64, 0.5f64);
        let want = (2.0 * u * v + C1) / (u * u + v * v + C1);
        let got = ssim(&a, &b).unwrap();
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    }

    #[test]
    fn full_mask_equals_whole_image_ssim() {
        let a = textured(2, 20, 20);
        let b = textured(3, 20, 20);
        let full = Array2::<u8>::ones((20, 20));
        let m = mask_ssim(&a, &b, &full).unwrap().unwrap();
        let s = ssim(&a, &b).unwrap();
        assert!((m - s).abs() < 1e-9);
    }

    #[test]
    fn empty_mask_is_undefined() {
        let a = textured(4, 16, 16);
        let empty = Array2::<u8>::zeros((16, 16));
        assert_eq!(mask_ssim(&a, &a, &empty).unwrap(), None);
    }

    #[test]
    fn image_smaller_than_window_errors() {
        let a = textured(5, 8, 8);
        assert!(ssim(&a, &a).is_err());
    }

    #[test]
    fn ssim_is_in_range_and_symmetric_enough() {
        let a = textured(6, 20, 20);
        let b = textured(7, 20, 20);
        let s1 = ssim(&a, &b).unwrap();
        let s2 = ssim(&b, &a).unwrap();
        assert!((-1.0..=1.0).contains(&s1));
        assert!((s1 - s2).abs() < 1e-12);
    }
}
