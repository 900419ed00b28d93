//! Recognizer-attention head contribution: gradient of the predicted-class
//! score with respect to the input pixels, reduced by the channel-wise
//! maximum of absolute values, Gaussian-smoothed, and tested for whether its
//! maximum falls inside the head region.

use headgen_nn::Net;
use ndarray::{Array2, Array4, Axis};

use crate::error::Result;
use crate::img::gaussian_blur_channel;

use super::recognizer::{resize_region_backward, RecogSample, Recognizer, RecognizerRegion};

/// Gradient-based saliency map for the recognizer's predicted class on this
/// sample. Returns the smoothed map and the predicted class index.
pub fn saliency_map(
    rec: &mut Recognizer,
    sample: &RecogSample,
    blur_sigma: f64,
) -> Result<(Array2<f64>, usize)> {
    let s = sample.image.width();
    let head_dim = rec.head_net.config.feature_dim;

    // Forward (caches activations), then the predicted class.
    let scores = rec.scores(sample);
    let mut pred = 0;
    for c in 1..scores.len() {
        if scores[c] > scores[pred] {
            pred = c;
        }
    }

    // d score_pred / d features = classifier row (without the bias column).
    let wrow = rec.classifier.row(pred);
    let mut dinput = Array2::<f64>::zeros((0, 0));
    let _ = &mut dinput;

    // Head branch: through the feature net, then splat through the resize.
    let mut dhead_feat = Array2::<f64>::zeros((1, head_dim));
    for d in 0..head_dim {
        dhead_feat[[0, d]] = wrow[d];
    }
    rec.head_net.zero_grad();
    let dchip4 = rec.head_net.backward_to_input(&dhead_feat);
    let dchip = dchip4.index_axis(Axis(0), 0).to_owned();
    let mut dimage = resize_region_backward(&dchip, sample.head_rect, s, s);

    if let Some(body) = rec.body_net.as_mut() {
        debug_assert_eq!(rec.region, RecognizerRegion::HeadBody);
        let body_dim = body.config.feature_dim;
        let mut dbody_feat = Array2::<f64>::zeros((1, body_dim));
        for d in 0..body_dim {
            dbody_feat[[0, d]] = wrow[head_dim + d];
        }
        // Re-run the body forward so the caches belong to this sample (the
        // head forward ran after it inside `scores`).
        let mut xb = Array4::<f64>::zeros((1, 3, s, s));
        xb.index_axis_mut(Axis(0), 0).assign(sample.image.data());
        body.forward(&xb);
        body.zero_grad();
        let dfull = body.backward_to_input(&dbody_feat);
        dimage += &dfull.index_axis(Axis(0), 0);
    }

    // Channel-wise max of absolute values, then Gaussian smoothing.
    let mut map = Array2::<f64>::zeros((s, s));
    for y in 0..s {
        for x in 0..s {
            let m = dimage[[0, y, x]]
                .abs()
                .max(dimage[[1, y, x]].abs())
                .max(dimage[[2, y, x]].abs());
            map[[y, x]] = m;
        }
    }
    let smoothed = gaussian_blur_channel(&map, blur_sigma.max(0.5));
    Ok((smoothed, pred))
}

/// True iff the saliency maximum lies inside the (inclusive) head mask.
/// An all-zero map counts as outside.
pub fn max_inside_mask(map: &Array2<f64>, mask: &Array2<u8>) -> bool {
    let mut best = f64::MIN;
    let mut arg = (0usize, 0usize);
    for ((y, x), &v) in map.indexed_iter() {
        if v > best {
            best = v;
            arg = (y, x);
        }
    }
    if best <= 0.0 {
        return false;
    }
    mask[[arg.0, arg.1]] != 0
}

/// Head-contribution indicator for one probe.
pub fn head_contribution(
    rec: &mut Recognizer,
    sample: &RecogSample,
    mask: &Array2<u8>,
    blur_sigma: f64,
) -> Result<bool> {
    let (map, _) = saliency_map(rec, sample, blur_sigma)?;
    Ok(max_inside_mask(&map, mask))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn injected_max_inside_mask_counts_as_one() {
        let mut map = Array2::<f64>::zeros((8, 8));
        map[[3, 4]] = 2.0;
        map[[6, 1]] = 1.0;
        let mut mask = Array2::<u8>::zeros((8, 8));
        for y in 2..5 {
            for x in 3..6 {
                mask[[y, x]] = 1;
            }
        }
        assert!(max_inside_mask(&map, &mask));
    }

    #[test]
    fn max_on_mask_boundary_is_inside() {
        let mut map = Array2::<f64>::zeros((8, 8));
        map[[2, 3]] = 1.0; // top-left corner pixel of the mask rectangle
        let mut mask = Array2::<u8>::zeros((8, 8));
        for y in 2..5 {
            for x in 3..6 {
                mask[[y, x]] = 1;
            }
        }
        assert!(max_inside_mask(&map, &mask));
    }

    #[test]
    fn uniform_positive_rescaling_does_not_change_the_outcome() {
        let mut map = Array2::<f64>::zeros((6, 6));
        map[[1, 1]] = 0.25;
        map[[4, 4]] = 0.5;
        let mut mask = Array2::<u8>::zeros((6, 6));
        mask[[4, 4]] = 1;
        let a = max_inside_mask(&map, &mask);
        let scaled = map.mapv(|v| v * 1234.5);
        let b = max_inside_mask(&scaled, &mask);
        assert_eq!(a, b);
        assert!(a);
    }

    #[test]
    fn all_zero_saliency_counts_as_outside() {
        let map = Array2::<f64>::zeros((6, 6));
        let mask = Array2::<u8>::ones((6, 6));
        assert!(!max_inside_mask(&map, &mask));
    }
}
