//! Bundled face detector for the landmark detection success ratio:
//! normalized cross-correlation against a small bank of canonical face
//! templates with a fixed success threshold. Real-photo runs can plug any
//! other detector through the same trait.

use ndarray::Array2;

use crate::dataset::synth::canonical_face_chip_posed;
use crate::error::{CoreError, Result};
use crate::img::RgbImage;

#[derive(Debug, Clone, Copy)]
pub struct Detection {
    pub score: f64,
    pub center: [f64; 2],
}

pub trait FaceDetector {
    /// `Some` when a face-like region was found with sufficient confidence.
    fn detect(&self, image: &RgbImage) -> Option<Detection>;
}

/// Gradient field (gx, gy) of a lightly smoothed grayscale image. Matching
/// in the gradient domain keys the correlation to the facial edge layout
/// (eye pair, brows, nose, mouth); straight obfuscation-box edges, clothing
/// boundaries, and smooth background ramps correlate poorly with it.
fn gradient_field(gray: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let smooth = crate::img::gaussian_blur_channel(gray, 1.0);
    let (h, w) = smooth.dim();
    let mut gx = Array2::<f64>::zeros((h, w));
    let mut gy = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let xm = x.saturating_sub(1);
            let xp = (x + 1).min(w - 1);
            let ym = y.saturating_sub(1);
            let yp = (y + 1).min(h - 1);
            gx[[y, x]] = (smooth[[y, xp]] - smooth[[y, xm]]) / 2.0;
            gy[[y, x]] = (smooth[[yp, x]] - smooth[[ym, x]]) / 2.0;
        }
    }
    (gx, gy)
}

/// One template: interior-face gradient fields with unit joint norm.
struct GradTemplate {
    gx: Array2<f64>,
    gy: Array2<f64>,
}

impl GradTemplate {
    fn from_chip(chip: &Array2<f64>) -> Self {
        // Keep the interior of the head box (brows to chin, ears trimmed) so
        // hair and outline variation do not dominate the match.
        let (h, w) = chip.dim();
        let x0 = (w as f64 * 0.15) as usize;
        let x1 = (w as f64 * 0.85) as usize;
        let y0 = (h as f64 * 0.30) as usize;
        let y1 = (h as f64 * 0.95) as usize;
        let (gx_full, gy_full) = gradient_field(chip);
        let mut gx = gx_full.slice(ndarray::s![y0..y1, x0..x1]).to_owned();
        let mut gy = gy_full.slice(ndarray::s![y0..y1, x0..x1]).to_owned();
        let norm = gx
            .iter()
            .chain(gy.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        if norm > 1e-12 {
            gx /= norm;
            gy /= norm;
        }
        GradTemplate { gx, gy }
    }
}

pub struct TemplateDetector {
    templates: Vec<GradTemplate>,
    pub threshold: f64,
    stride: usize,
}

impl TemplateDetector {
    /// Bank sized for square crops of side `s`: yaw and roll variants at
    /// three scales around the expected in-crop head size (the crop geometry
    /// puts the head at roughly s/3). A lightly blurred copy of each chip is
    /// included so soft inpainted faces still correlate.
    pub fn for_crop_size(s: usize) -> Self {
        let base = (s as f64 / 3.4).round() as usize;
        let mut templates = Vec::new();
        for &scale in &[0.8f64, 1.0, 1.3] {
            let size = ((base as f64 * scale).round() as usize).max(12);
            for &yaw in &[-0.6f64, 0.0, 0.6] {
                for &roll in &[-0.25f64, 0.0, 0.25] {
                    let chip = canonical_face_chip_posed(size, yaw, roll);
                    templates.push(GradTemplate::from_chip(&chip));
                    let soft = crate::img::gaussian_blur_channel(&chip, 1.2);
                    templates.push(GradTemplate::from_chip(&soft));
                }
            }
        }
        TemplateDetector {
            templates,
            threshold: 0.30,
            stride: 2,
        }
    }

    fn best_match(&self, gx: &Array2<f64>, gy: &Array2<f64>) -> Detection {
        let (h, w) = gx.dim();
        let mut best = Detection {
            score: f64::MIN,
            center: [0.0, 0.0],
        };
        for t in &self.templates {
            let (th, tw) = t.gx.dim();
            if th > h || tw > w {
                continue;
            }
            let mut y = 0;
            while y + th <= h {
                let mut x = 0;
                while x + tw <= w {
                    let mut sq = 0.0;
                    let mut dot = 0.0;
                    for ty in 0..th {
                        for tx in 0..tw {
                            let vx = gx[[y + ty, x + tx]];
                            let vy = gy[[y + ty, x + tx]];
                            sq += vx * vx + vy * vy;
                            dot += vx * t.gx[[ty, tx]] + vy * t.gy[[ty, tx]];
                        }
                    }
                    // zero-gradient windows (e.g. all black) never match
                    let score = if sq > 1e-9 { dot / sq.sqrt() } else { 0.0 };
                    if score > best.score {
                        best = Detection {
                            score,
                            center: [x as f64 + tw as f64 / 2.0, y as f64 + th as f64 / 2.0],
                        };
                    }
                    x += self.stride;
                }
                y += self.stride;
            }
        }
        best
    }
}

impl FaceDetector for TemplateDetector {
    fn detect(&self, image: &RgbImage) -> Option<Detection> {
        let (gx, gy) = gradient_field(&image.gray());
        let best = self.best_match(&gx, &gy);
        if best.score >= self.threshold {
            Some(best)
        } else {
            None
        }
    }
}

/// Landmark detection success ratio: the fraction of images on which the
/// detector succeeds.
pub fn ldsr(images: &[RgbImage], detector: &dyn FaceDetector) -> Result<f64> {
    if images.is_empty() {
        return Err(CoreError::InvalidInput("ldsr: empty image list".into()));
    }
    let hits = images
        .iter()
        .filter(|img| detector.detect(img).is_some())
        .count();
    Ok(hits as f64 / images.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{body_crop, synth_generate, SynthConfig};

    #[test]
    fn all_black_images_score_zero() {
        let det = TemplateDetector::for_crop_size(64);
        let blacks = vec![RgbImage::new(64, 64); 4];
        assert_eq!(ldsr(&blacks, &det).unwrap(), 0.0);
    }

    #[test]
    fn empty_list_is_an_error() {
        let det = TemplateDetector::for_crop_size(64);
        assert!(ldsr(&[], &det).is_err());
    }

    #[test]
    fn original_synthetic_crops_all_detected() {
        let insts = synth_generate(&SynthConfig {
            num_identities: 4,
            instances_per_identity: 2,
            resolution: 64,
            rng_seed: 11,
            ..SynthConfig::default()
        });
        let det = TemplateDetector::for_crop_size(64);
        let images: Vec<RgbImage> = insts
            .iter()
            .map(|i| body_crop(i, 64).unwrap().image)
            .collect();
        let r = ldsr(&images, &det).unwrap();
        assert_eq!(r, 1.0, "detector must find every rendered face");
    }

    #[test]
    fn ldsr_is_permutation_invariant() {
        let insts = synth_generate(&SynthConfig {
            num_identities: 3,
            instances_per_identity: 2,
            resolution: 64,
            rng_seed: 12,
            ..SynthConfig::default()
        });
        let det = TemplateDetector::for_crop_size(64);
        let mut images: Vec<RgbImage> = insts
            .iter()
            .map(|i| body_crop(i, 64).unwrap().image)
            .collect();
        // blacken one so the ratio is not trivially 1.0
        images[1] = RgbImage::new(64, 64);
        let r1 = ldsr(&images, &det).unwrap();
        images.reverse();
        let r2 = ldsr(&images, &det).unwrap();
        assert_eq!(r1, r2);
    }
}
