//! Training/evaluation samples: synthetic person rendering, the body-crop
//! geometry, head obfuscation, and identity-disjoint splits.

pub mod io;
pub mod synth;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::img::{self, RgbImage};
use crate::landmark::LandmarkSet;

pub use synth::{synth_generate, RenderParams, SynthConfig};

/// Head bounding box in source-image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadBox {
    pub x: i32,
    pub y: i32,
    pub w: i32,
    pub h: i32,
}

impl HeadBox {
    pub fn validate(&self, img_w: usize, img_h: usize) -> Result<()> {
        if self.w <= 0 || self.h <= 0 {
            return Err(CoreError::DegenerateHeadBox {
                w: self.w,
                h: self.h,
            });
        }
        let intersects = self.x < img_w as i32
            && self.y < img_h as i32
            && self.x + self.w > 0
            && self.y + self.h > 0;
        if !intersects {
            return Err(CoreError::InvalidInput(
                "head box does not intersect the image".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Test,
}

/// One annotated person instance in source-image coordinates.
#[derive(Debug, Clone)]
pub struct PersonInstance {
    pub id: u64,
    pub image: RgbImage,
    pub head_box: HeadBox,
    pub identity: u32,
    pub landmarks_gt: Option<LandmarkSet>,
    pub split: Split,
    /// Generator parameters for synthetic instances; not persisted.
    pub render: Option<RenderParams>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObfuscationMode {
    Original,
    Black,
    Blur,
}

/// Scale-plus-translation map from source coordinates into crop coordinates,
/// along with the integer regions it was built from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropTransform {
    pub scale: f64,
    pub tx: f64,
    pub ty: f64,
    /// Clamped crop region in the source image (x, y, w, h).
    pub src_region: [i32; 4],
    /// Content box inside the S x S crop (x, y, w, h); everything outside is
    /// zero padding.
    pub content: [usize; 4],
}

impl CropTransform {
    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        [p[0] * self.scale + self.tx, p[1] * self.scale + self.ty]
    }

    pub fn invert(&self, p: [f64; 2]) -> [f64; 2] {
        [(p[0] - self.tx) / self.scale, (p[1] - self.ty) / self.scale]
    }
}

/// Square person crop with its head mask.
#[derive(Debug, Clone)]
pub struct BodyCrop {
    pub image: RgbImage,       // S x S
    pub head_mask: Array2<u8>, // S x S, 1 inside the head rectangle
    pub mode: ObfuscationMode,
    pub landmarks: Option<LandmarkSet>,
    pub identity: u32,
    pub crop_transform: CropTransform,
    pub source_id: u64,
}

impl BodyCrop {
    pub fn size(&self) -> usize {
        self.image.width()
    }

    /// Bounding rectangle (x, y, w, h) of the head mask; zero-sized when the
    /// mask is empty.
    pub fn mask_rect(&self) -> [usize; 4] {
        let (h, w) = self.head_mask.dim();
        let (mut x0, mut y0, mut x1, mut y1) = (w, h, 0usize, 0usize);
        for ((y, x), &v) in self.head_mask.indexed_iter() {
            if v != 0 {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x + 1);
                y1 = y1.max(y + 1);
            }
        }
        if x0 >= x1 || y0 >= y1 {
            return [0, 0, 0, 0];
        }
        [x0, y0, x1 - x0, y1 - y0]
    }
}

/// The head box extended by the fixed ratios, before clamping: 3x the width
/// and 6x the height, horizontally centered, with the head box's top edge at
/// 1/12 of the extended height.
pub fn extended_region(hb: &HeadBox) -> [f64; 4] {
    let we = 3.0 * hb.w as f64;
    let he = 6.0 * hb.h as f64;
    let xe = hb.x as f64 - hb.w as f64;
    let ye = hb.y as f64 - he / 12.0;
    [xe, ye, we, he]
}

/// Build the square body crop for one instance: extend the head box, clamp
/// to the image, resize preserving aspect ratio so the longer side equals
/// `size` (bilinear), and zero-pad to `size x size` with the content
/// centered.
pub fn body_crop(instance: &PersonInstance, size: usize) -> Result<BodyCrop> {
    let (img_w, img_h) = (instance.image.width(), instance.image.height());
    instance.head_box.validate(img_w, img_h)?;
    let [xe, ye, we, he] = extended_region(&instance.head_box);

    let rx0 = (xe.floor().max(0.0)) as i32;
    let ry0 = (ye.floor().max(0.0)) as i32;
    let rx1 = ((xe + we).ceil().min(img_w as f64)) as i32;
    let ry1 = ((ye + he).ceil().min(img_h as f64)) as i32;
    if rx1 <= rx0 || ry1 <= ry0 {
        return Err(CoreError::InvalidInput(
            "extended crop region does not intersect the image".into(),
        ));
    }
    let (rw, rh) = ((rx1 - rx0) as usize, (ry1 - ry0) as usize);

    let scale = size as f64 / rw.max(rh) as f64;
    let out_w = ((rw as f64 * scale).round() as usize).clamp(1, size);
    let out_h = ((rh as f64 * scale).round() as usize).clamp(1, size);
    let pad_x = (size - out_w) / 2;
    let pad_y = (size - out_h) / 2;

    let transform = CropTransform {
        scale,
        tx: (0.5 - rx0 as f64) * scale - 0.5 + pad_x as f64,
        ty: (0.5 - ry0 as f64) * scale - 0.5 + pad_y as f64,
        src_region: [rx0, ry0, rw as i32, rh as i32],
        content: [pad_x, pad_y, out_w, out_h],
    };

    let mut image = RgbImage::new(size, size);
    for oy in 0..out_h {
        for ox in 0..out_w {
            let src = transform.invert([(pad_x + ox) as f64, (pad_y + oy) as f64]);
            let c = instance.image.sample_clamped(src[0], src[1]);
            image.set(pad_x + ox, pad_y + oy, c);
        }
    }

    let head_mask = mask_from_box(&instance.head_box, &transform, size);
    let landmarks = instance
        .landmarks_gt
        .as_ref()
        .map(|l| l.map(|p| transform.apply(p)));

    Ok(BodyCrop {
        image,
        head_mask,
        mode: ObfuscationMode::Original,
        landmarks,
        identity: instance.identity,
        crop_transform: transform,
        source_id: instance.id,
    })
}

/// Axis-aligned rectangle image of the head box under the crop transform.
pub fn mask_from_box(hb: &HeadBox, transform: &CropTransform, size: usize) -> Array2<u8> {
    let tl = transform.apply([hb.x as f64, hb.y as f64]);
    let br = transform.apply([(hb.x + hb.w) as f64, (hb.y + hb.h) as f64]);
    let x0 = (tl[0].round().max(0.0) as usize).min(size);
    let y0 = (tl[1].round().max(0.0) as usize).min(size);
    let x1 = (br[0].round().max(0.0) as usize).min(size);
    let y1 = (br[1].round().max(0.0) as usize).min(size);
    let mut mask = Array2::<u8>::zeros((size, size));
    for y in y0..y1 {
        for x in x0..x1 {
            mask[[y, x]] = 1;
        }
    }
    mask
}

/// Default blur strength: strong enough to destroy identity detail at any
/// resolution of the head rectangle.
pub fn default_blur_sigma(crop: &BodyCrop) -> f64 {
    let [_, _, w, h] = crop.mask_rect();
    (w.max(h) as f64 / 8.0).max(0.5)
}

/// Obfuscate the head region: BLACK zeroes masked pixels, BLUR replaces them
/// with a Gaussian-blurred copy of the original. Pixels outside the mask are
/// bit-identical to the input.
pub fn obfuscate_head(crop: &BodyCrop, mode: ObfuscationMode) -> Result<BodyCrop> {
    let sigma = default_blur_sigma(crop);
    obfuscate_head_with_sigma(crop, mode, sigma)
}

pub fn obfuscate_head_with_sigma(
    crop: &BodyCrop,
    mode: ObfuscationMode,
    sigma: f64,
) -> Result<BodyCrop> {
    if crop.mode != ObfuscationMode::Original {
        return Err(CoreError::InvalidInput(format!(
            "obfuscate_head expects an ORIGINAL crop, got {:?}",
            crop.mode
        )));
    }
    let mut out = crop.clone();
    match mode {
        ObfuscationMode::Original => {
            return Err(CoreError::InvalidInput(
                "obfuscation mode must be BLACK or BLUR".into(),
            ))
        }
        ObfuscationMode::Black => {
            for ((y, x), &m) in crop.head_mask.indexed_iter() {
                if m != 0 {
                    out.image.set(x, y, [0.0, 0.0, 0.0]);
                }
            }
        }
        ObfuscationMode::Blur => {
            let blurred = img::gaussian_blur(&crop.image, sigma);
            for ((y, x), &m) in crop.head_mask.indexed_iter() {
                if m != 0 {
                    out.image.set(x, y, blurred.get(x, y));
                }
            }
        }
    }
    out.mode = mode;
    Ok(out)
}

/// Composite `generated` into `crop` strictly inside the head mask; every
/// pixel outside is taken bit-exactly from `crop`.
pub fn composite_head(generated: &RgbImage, crop: &BodyCrop) -> RgbImage {
    assert_eq!(generated.width(), crop.image.width());
    assert_eq!(generated.height(), crop.image.height());
    let mut out = crop.image.clone();
    for ((y, x), &m) in crop.head_mask.indexed_iter() {
        if m != 0 {
            out.set(x, y, generated.get(x, y));
        }
    }
    out
}

/// Assign identity-disjoint TRAIN/TEST splits. Every instance of an identity
/// lands in the same split; the number of test identities is
/// `round(num_identities * test_fraction)` clamped to leave at least one
/// identity on each side.
pub fn split_identities(
    instances: &mut [PersonInstance],
    test_fraction: f64,
    seed: u64,
) -> Result<()> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(CoreError::InvalidInput(format!(
            "test_fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    let mut ids: Vec<u32> = instances.iter().map(|i| i.identity).collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 2 {
        return Err(CoreError::InvalidInput(
            "need at least 2 identities to split".into(),
        ));
    }
    let n_test = ((ids.len() as f64 * test_fraction).round() as usize).clamp(1, ids.len() - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let test_ids: std::collections::HashSet<u32> = ids[..n_test].iter().copied().collect();
    for inst in instances.iter_mut() {
        inst.split = if test_ids.contains(&inst.identity) {
            Split::Test
        } else {
            Split::Train
        };
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn checker_instance(img_w: usize, img_h: usize, hb: HeadBox) -> PersonInstance {
        let mut image = RgbImage::new(img_h, img_w);
        for y in 0..img_h {
            for x in 0..img_w {
                let v = ((x / 3 + y / 5) % 2) as f64;
                image.set(x, y, [v, 1.0 - v, (x % 7) as f64 / 7.0]);
            }
        }
        PersonInstance {
            id: 0,
            image,
            head_box: hb,
            identity: 0,
            landmarks_gt: None,
            split: Split::Train,
            render: None,
        }
    }

    #[test]
    fn extension_is_3x_width_6x_height() {
        let hb = HeadBox {
            x: 50,
            y: 40,
            w: 20,
            h: 20,
        };
        let [_, _, we, he] = extended_region(&hb);
        assert_eq!(we, 60.0);
        assert_eq!(he, 120.0);
        // head box horizontally centered, top edge at 1/12 of the height
        let [xe, ye, _, _] = extended_region(&hb);
        assert_eq!(xe, 30.0);
        assert_eq!(ye, 30.0);
    }

    #[test]
    fn exact_fit_region_gives_identity_resize_and_pure_translation() {
        let size = 64;
        // Region exactly 64x64 inside a larger image.
        let hb = HeadBox {
            x: 70,
            y: 20,
            w: 21,
            h: 11,
        };
        let [xe, ye, we, he] = extended_region(&hb);
        assert!(we < 64.0 && he > 64.0);
        // Build an instance where the clamp yields exactly 64x64: place the
        // region so that clamping cuts it to the image.
        let inst = checker_instance(200, 200, hb);
        let crop = body_crop(&inst, size).unwrap();
        let _ = (xe, ye);
        // scale is 64 / max(rw, rh); with he > 64 the region is taller than
        // wide, so this checks resize+pad bookkeeping instead. Use a crafted
        // square region for the pure-translation case below.
        assert_eq!(crop.image.width(), size);

        let hb2 = HeadBox {
            x: 100,
            y: 60,
            w: 22,
            h: 11,
        };
        // extended: 66 x 66 starting at (78, 54.5): floor/ceil -> 67 wide.
        // Instead craft exactly: head box w=22 -> we=66; h=11 -> he=66;
        // ye = 60 - 5.5 = 54.5 (fractional), so shift to integer:
        let _ = hb2;
        let hb3 = HeadBox {
            x: 100,
            y: 60,
            w: 22,
            h: 12,
        };
        let [xe3, ye3, we3, he3] = extended_region(&hb3);
        assert_eq!((xe3, ye3, we3, he3), (78.0, 54.0, 66.0, 72.0));
        let inst3 = checker_instance(300, 300, hb3);
        let crop3 = body_crop(&inst3, 72).unwrap();
        // rw=66, rh=72 -> scale = 1, content 66x72, pad_x = 3.
        let t = crop3.crop_transform;
        assert_eq!(t.scale, 1.0);
        assert_eq!(t.content, [3, 0, 66, 72]);
        // At scale 1 every content pixel is an exact copy.
        for oy in 0..72usize {
            for ox in 0..66usize {
                let got = crop3.image.get(ox + 3, oy);
                let want = inst3.image.get(78 + ox, 54 + oy);
                assert_eq!(got, want);
            }
        }
    }

    #[test]
    fn corner_head_box_clamps_and_matches_independent_affine_resample() {
        let size = 48;
        let hb = HeadBox {
            x: 0,
            y: 0,
            w: 12,
            h: 10,
        };
        let inst = checker_instance(80, 100, hb);
        let crop = body_crop(&inst, size).unwrap();
        let t = crop.crop_transform;

        // Independent oracle: re-derive the affine map from the recorded
        // region and compare every output pixel against direct bilinear
        // resampling of the source.
        let [rx, ry, rw, rh] = t.src_region;
        let scale = size as f64 / (rw.max(rh)) as f64;
        assert!((scale - t.scale).abs() < 1e-12);
        let [px, py, cw, ch] = t.content;
        for oy in 0..size {
            for ox in 0..size {
                let inside = ox >= px && ox < px + cw && oy >= py && oy < py + ch;
                let got = crop.image.get(ox, oy);
                if !inside {
                    assert_eq!(got, [0.0, 0.0, 0.0], "padding must be zero at ({ox},{oy})");
                    continue;
                }
                let sx = rx as f64 + (ox as f64 - px as f64 + 0.5) / scale - 0.5;
                let sy = ry as f64 + (oy as f64 - py as f64 + 0.5) / scale - 0.5;
                let want = inst.image.sample_clamped(sx, sy);
                for c in 0..3 {
                    assert!((got[c] - want[c]).abs() < 1e-12);
                }
            }
        }
        // Clamping at the corner makes the padding asymmetric.
        assert!(t.content[0] > 0 || t.content[1] > 0);
    }

    #[test]
    fn degenerate_head_box_is_rejected() {
        let inst = checker_instance(
            50,
            50,
            HeadBox {
                x: 10,
                y: 10,
                w: 0,
                h: 5,
            },
        );
        assert!(matches!(
            body_crop(&inst, 32),
            Err(CoreError::DegenerateHeadBox { .. })
        ));
    }

    #[test]
    fn crop_transform_roundtrips_landmarks_within_half_pixel() {
        let hb = HeadBox {
            x: 30,
            y: 20,
            w: 16,
            h: 14,
        };
        let mut inst = checker_instance(120, 160, hb);
        let pts: Vec<[f64; 2]> = (0..crate::landmark::NUM_LANDMARKS)
            .map(|i| {
                [
                    32.0 + (i % 10) as f64 * 1.5,
                    24.0 + (i / 10) as f64 * 1.75,
                ]
            })
            .collect();
        inst.landmarks_gt = Some(LandmarkSet::new(pts.clone()).unwrap());
        let crop = body_crop(&inst, 64).unwrap();
        let mapped = crop.landmarks.as_ref().unwrap();
        for (orig, m) in pts.iter().zip(mapped.points()) {
            let back = crop.crop_transform.invert(*m);
            assert!((back[0] - orig[0]).abs() < 0.5);
            assert!((back[1] - orig[1]).abs() < 0.5);
        }
    }

    #[test]
    fn black_obfuscation_zeroes_exactly_the_mask() {
        let hb = HeadBox {
            x: 20,
            y: 10,
            w: 14,
            h: 12,
        };
        let inst = checker_instance(100, 120, hb);
        let crop = body_crop(&inst, 64).unwrap();
        let black = obfuscate_head(&crop, ObfuscationMode::Black).unwrap();
        let mut masked_sum = 0.0;
        for ((y, x), &m) in black.head_mask.indexed_iter() {
            let px = black.image.get(x, y);
            if m != 0 {
                masked_sum += px[0] + px[1] + px[2];
            } else {
                assert_eq!(px, crop.image.get(x, y), "outside-mask pixel changed");
            }
        }
        assert_eq!(masked_sum, 0.0);
        // BLACK is idempotent (re-obfuscating an already-original crop of the
        // blacked image gives the same pixels).
        let mut reblack_input = black.clone();
        reblack_input.mode = ObfuscationMode::Original;
        let again = obfuscate_head(&reblack_input, ObfuscationMode::Black).unwrap();
        assert_eq!(again.image, black.image);
    }

    #[test]
    fn empty_mask_blur_is_identity() {
        let hb = HeadBox {
            x: 20,
            y: 10,
            w: 14,
            h: 12,
        };
        let inst = checker_instance(100, 120, hb);
        let mut crop = body_crop(&inst, 64).unwrap();
        crop.head_mask.fill(0);
        let out = obfuscate_head_with_sigma(&crop, ObfuscationMode::Blur, 3.0).unwrap();
        assert_eq!(out.image, crop.image);
    }

    #[test]
    fn blur_matches_direct_convolution_oracle_inside_mask() {
        let hb = HeadBox {
            x: 24,
            y: 16,
            w: 16,
            h: 14,
        };
        let inst = checker_instance(96, 128, hb);
        let crop = body_crop(&inst, 48).unwrap();
        let sigma = 3.0;
        let out = obfuscate_head_with_sigma(&crop, ObfuscationMode::Blur, sigma).unwrap();

        // Direct (non-separable) convolution oracle with the same mirrored
        // border convention.
        let radius = (3.0 * sigma).ceil() as i64;
        let k1 = crate::img::gaussian_kernel(sigma);
        let reflect = |i: i64, n: i64| -> i64 {
            let mut i = i;
            loop {
                if i < 0 {
                    i = -i - 1;
                } else if i >= n {
                    i = 2 * n - i - 1;
                } else {
                    return i;
                }
            }
        };
        let size = crop.size() as i64;
        for ((y, x), &m) in crop.head_mask.indexed_iter() {
            if m == 0 {
                assert_eq!(out.image.get(x, y), crop.image.get(x, y));
                continue;
            }
            let mut want = [0.0f64; 3];
            for dy in -radius..=radius {
                for dx in -radius..=radius {
                    let wgt = k1[(dy + radius) as usize] * k1[(dx + radius) as usize];
                    let sy = reflect(y as i64 + dy, size) as usize;
                    let sx = reflect(x as i64 + dx, size) as usize;
                    let px = crop.image.get(sx, sy);
                    for c in 0..3 {
                        want[c] += wgt * px[c];
                    }
                }
            }
            let got = out.image.get(x, y);
            for c in 0..3 {
                assert!(
                    (got[c] - want[c]).abs() < 1e-6,
                    "({x},{y}) ch{c}: {} vs {}",
                    got[c],
                    want[c]
                );
            }
        }
    }

    fn instances_with_identities(ids: &[u32]) -> Vec<PersonInstance> {
        ids.iter()
            .flat_map(|&identity| {
                (0..3).map(move |k| PersonInstance {
                    id: identity as u64 * 10 + k,
                    image: RgbImage::new(8, 8),
                    head_box: HeadBox {
                        x: 1,
                        y: 1,
                        w: 2,
                        h: 2,
                    },
                    identity,
                    landmarks_gt: None,
                    split: Split::Train,
                    render: None,
                })
            })
            .collect()
    }

    #[test]
    fn split_is_identity_disjoint_with_expected_counts() {
        let ids: Vec<u32> = (0..10).collect();
        let mut instances = instances_with_identities(&ids);
        split_identities(&mut instances, 0.2, 7).unwrap();
        let mut train = std::collections::HashSet::new();
        let mut test = std::collections::HashSet::new();
        for i in &instances {
            match i.split {
                Split::Train => train.insert(i.identity),
                Split::Test => test.insert(i.identity),
            };
        }
        assert_eq!(test.len(), 2);
        assert_eq!(train.len(), 8);
        assert!(train.is_disjoint(&test));
    }

    #[test]
    fn pipa_shaped_ratio_reproduces_257_test_identities() {
        let ids: Vec<u32> = (0..2356).collect();
        let mut instances: Vec<PersonInstance> = ids
            .iter()
            .map(|&identity| PersonInstance {
                id: identity as u64,
                image: RgbImage::new(4, 4),
                head_box: HeadBox {
                    x: 0,
                    y: 0,
                    w: 2,
                    h: 2,
                },
                identity,
                landmarks_gt: None,
                split: Split::Train,
                render: None,
            })
            .collect();
        split_identities(&mut instances, 257.0 / 2356.0, 1).unwrap();
        let test_count = instances
            .iter()
            .filter(|i| i.split == Split::Test)
            .count();
        assert_eq!(test_count, 257);
    }

    #[test]
    fn invalid_test_fraction_is_rejected() {
        let mut instances = instances_with_identities(&[0, 1, 2]);
        assert!(split_identities(&mut instances, 0.0, 1).is_err());
        assert!(split_identities(&mut instances, 1.0, 1).is_err());
    }

    #[test]
    fn composite_preserves_outside_mask_bit_exactly() {
        let hb = HeadBox {
            x: 20,
            y: 10,
            w: 14,
            h: 12,
        };
        let inst = checker_instance(100, 120, hb);
        let crop = body_crop(&inst, 32).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut generated = RgbImage::new(32, 32);
        for y in 0..32 {
            for x in 0..32 {
                generated.set(x, y, [rng.random(), rng.random(), rng.random()]);
            }
        }
        let out = composite_head(&generated, &crop);
        for ((y, x), &m) in crop.head_mask.indexed_iter() {
            if m != 0 {
                assert_eq!(out.get(x, y), generated.get(x, y));
            } else {
                assert_eq!(out.get(x, y), crop.image.get(x, y));
            }
        }
    }
}
