//! Nearest-neighbour baselines: head copy-paste and landmark substitution,
//! both searched by mean landmark L2 distance against the training gallery.

use crate::dataset::BodyCrop;
use crate::error::{CoreError, Result};
use crate::img::RgbImage;
use crate::landmark::{LandmarkSet, NUM_LANDMARKS};

/// One gallery entry: a training crop with its landmarks.
pub struct GalleryItem {
    pub crop: BodyCrop,
    pub landmarks: LandmarkSet,
}

fn mean_l2(a: &LandmarkSet, b: &LandmarkSet) -> f64 {
    a.points()
        .iter()
        .zip(b.points())
        .map(|(p, q)| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt())
        .sum::<f64>()
        / NUM_LANDMARKS as f64
}

fn nearest<'g>(query: &LandmarkSet, gallery: &'g [GalleryItem]) -> Result<(usize, &'g GalleryItem)> {
    if gallery.is_empty() {
        return Err(CoreError::InvalidInput("empty gallery".into()));
    }
    let mut best = 0;
    let mut best_d = f64::MAX;
    for (i, item) in gallery.iter().enumerate() {
        let d = mean_l2(query, &item.landmarks);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    Ok((best, &gallery[best]))
}

/// Copy the nearest neighbour's head-box pixels into the query's head box,
/// resized, with no blending. Pixels outside the query mask stay bit-equal
/// to the query.
pub fn nn_head_copy_paste(query: &BodyCrop, gallery: &[GalleryItem]) -> Result<RgbImage> {
    let query_lm = query.landmarks.as_ref().ok_or_else(|| {
        CoreError::InvalidInput("query crop carries no landmarks".into())
    })?;
    let (_, neighbor) = nearest(query_lm, gallery)?;
    let src_rect = neighbor.crop.mask_rect();
    let dst_rect = query.mask_rect();
    let mut out = query.image.clone();
    if src_rect[2] == 0 || dst_rect[2] == 0 {
        return Ok(out);
    }
    let [sx, sy, sw, sh] = src_rect;
    let [dx, dy, dw, dh] = dst_rect;
    for oy in 0..dh {
        for ox in 0..dw {
            // only mask pixels receive the paste
            if query.head_mask[[dy + oy, dx + ox]] == 0 {
                continue;
            }
            let u = sx as f64 + (ox as f64 + 0.5) / dw as f64 * sw as f64 - 0.5;
            let v = sy as f64 + (oy as f64 + 0.5) / dh as f64 * sh as f64 - 0.5;
            let c = neighbor.crop.image.sample_clamped(u, v);
            out.set(dx + ox, dy + oy, c);
        }
    }
    Ok(out)
}

/// The gallery landmark set nearest to the query's, used as an obfuscating
/// landmark substitute. The returned set is always an exact gallery member.
pub fn nn_landmarks(query: &LandmarkSet, gallery: &[GalleryItem]) -> Result<(LandmarkSet, usize)> {
    let (idx, item) = nearest(query, gallery)?;
    Ok((item.landmarks.clone(), idx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{body_crop, obfuscate_head, synth_generate, ObfuscationMode, SynthConfig};

    fn small_gallery() -> (Vec<GalleryItem>, BodyCrop) {
        let insts = synth_generate(&SynthConfig {
            num_identities: 4,
            instances_per_identity: 2,
            resolution: 64,
            rng_seed: 31,
            ..SynthConfig::default()
        });
        let mut items = Vec::new();
        for inst in &insts {
            let crop = body_crop(inst, 64).unwrap();
            let lm = crop.landmarks.clone().unwrap();
            items.push(GalleryItem {
                crop,
                landmarks: lm,
            });
        }
        let query = body_crop(&insts[2], 64).unwrap();
        (items, query)
    }

    #[test]
    fn self_match_reconstructs_exactly_inside_mask() {
        let (gallery, query) = small_gallery();
        let out = nn_head_copy_paste(&query, &gallery).unwrap();
        for ((y, x), &m) in query.head_mask.indexed_iter() {
            if m != 0 {
                let got = out.get(x, y);
                let want = query.image.get(x, y);
                for c in 0..3 {
                    assert!(
                        (got[c] - want[c]).abs() < 1e-9,
                        "self-match paste should be exact at ({x},{y})"
                    );
                }
            } else {
                assert_eq!(out.get(x, y), query.image.get(x, y));
            }
        }
    }

    #[test]
    fn paste_leaves_outside_mask_bit_equal() {
        let (gallery, query_orig) = small_gallery();
        // Exclude the query itself so a different head is pasted.
        let filtered: Vec<GalleryItem> = gallery
            .into_iter()
            .enumerate()
            .filter(|(i, _)| *i != 2)
            .map(|(_, g)| g)
            .collect();
        let out = nn_head_copy_paste(&query_orig, &filtered).unwrap();
        for ((y, x), &m) in query_orig.head_mask.indexed_iter() {
            if m == 0 {
                assert_eq!(out.get(x, y), query_orig.image.get(x, y));
            }
        }
    }

    #[test]
    fn nn_landmarks_returns_exact_member_with_zero_self_distance() {
        let (gallery, query) = small_gallery();
        let qlm = query.landmarks.clone().unwrap();
        let (found, idx) = nn_landmarks(&qlm, &gallery).unwrap();
        assert_eq!(found.points(), gallery[idx].landmarks.points());
        // query instance 2 is itself in the gallery
        assert_eq!(idx, 2);
        assert_eq!(mean_l2(&found, &qlm), 0.0);
    }

    #[test]
    fn empty_gallery_errors() {
        let (_, query) = small_gallery();
        assert!(nn_head_copy_paste(&query, &[]).is_err());
        let obf = obfuscate_head(&query, ObfuscationMode::Black).unwrap();
        let _ = obf;
    }
}
