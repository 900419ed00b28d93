//! Differentiable rendering of landmark coordinates into per-landmark
//! Gaussian heatmap channels.
//!
//! Channel `k` holds `exp(-((x - Lx)^2 + (y - Ly)^2) / (2 sigma^2))`:
//! peak-normalized so each channel tops out at 1 regardless of sigma, and
//! smooth in the landmark coordinates everywhere, which is what lets the
//! discriminator pass gradients back into generated coordinates.

use ndarray::Array3;

use super::{LandmarkSet, NUM_LANDMARKS};

/// Default heatmap sigma for a given output resolution (4 px at S = 256).
pub fn default_sigma(size: usize) -> f64 {
    (size as f64 / 64.0).max(0.75)
}

/// Render one channel per landmark on an `size x size` grid.
pub fn render(landmarks: &LandmarkSet, size: usize, sigma: f64) -> Array3<f64> {
    assert!(sigma > 0.0, "sigma must be positive");
    let mut out = Array3::<f64>::zeros((NUM_LANDMARKS, size, size));
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut fx = vec![0.0f64; size];
    let mut fy = vec![0.0f64; size];
    for (k, p) in landmarks.points().iter().enumerate() {
        for (i, f) in fx.iter_mut().enumerate() {
            let d = i as f64 - p[0];
            *f = (-d * d * inv).exp();
        }
        for (i, f) in fy.iter_mut().enumerate() {
            let d = i as f64 - p[1];
            *f = (-d * d * inv).exp();
        }
        let mut ch = out.index_axis_mut(ndarray::Axis(0), k);
        let cs = ch.as_slice_mut().unwrap();
        for y in 0..size {
            let row = y * size;
            let gy = fy[y];
            for x in 0..size {
                cs[row + x] = gy * fx[x];
            }
        }
    }
    out
}

/// Gradient of a weighted sum of heatmap values with respect to the landmark
/// coordinates: given `d(loss)/d(heatmap)` returns `d(loss)/d(x_k, y_k)` for
/// each landmark.
pub fn backward(
    landmarks: &LandmarkSet,
    size: usize,
    sigma: f64,
    grad: &Array3<f64>,
) -> Vec<[f64; 2]> {
    let inv = 1.0 / (2.0 * sigma * sigma);
    let sig2 = sigma * sigma;
    let mut out = vec![[0.0f64; 2]; NUM_LANDMARKS];
    let mut fx = vec![0.0f64; size];
    let mut fy = vec![0.0f64; size];
    for (k, p) in landmarks.points().iter().enumerate() {
        for (i, f) in fx.iter_mut().enumerate() {
            let d = i as f64 - p[0];
            *f = (-d * d * inv).exp();
        }
        for (i, f) in fy.iter_mut().enumerate() {
            let d = i as f64 - p[1];
            *f = (-d * d * inv).exp();
        }
        let g = grad.index_axis(ndarray::Axis(0), k);
        let gs = g.as_slice().unwrap();
        let mut dx = 0.0;
        let mut dy = 0.0;
        for y in 0..size {
            let row = y * size;
            let gy = fy[y];
            let ddy = y as f64 - p[1];
            for x in 0..size {
                let h = gy * fx[x];
                let gv = gs[row + x];
                // dh/dLx = h * (x - Lx) / sigma^2
                dx += gv * h * (x as f64 - p[0]) / sig2;
                dy += gv * h * ddy / sig2;
            }
        }
        out[k] = [dx, dy];
    }
    out
}

/// Probability-weighted coordinate of one channel (soft argmax).
pub fn soft_argmax(channel: ndarray::ArrayView2<f64>) -> [f64; 2] {
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut mass = 0.0;
    for ((y, x), &v) in channel.indexed_iter() {
        sx += v * x as f64;
        sy += v * y as f64;
        mass += v;
    }
    if mass <= 0.0 {
        return [f64::NAN, f64::NAN];
    }
    [sx / mass, sy / mass]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landmark::LandmarkSet;

    fn set_with_point(k: usize, p: [f64; 2], fill: [f64; 2]) -> LandmarkSet {
        let mut pts = vec![fill; NUM_LANDMARKS];
        pts[k] = p;
        LandmarkSet::new(pts).unwrap()
    }

    #[test]
    fn integer_landmark_peaks_at_exactly_one() {
        let l = set_with_point(0, [128.0, 128.0], [40.0, 40.0]);
        let h = render(&l, 256, 4.0);
        assert_eq!(h[[0, 128, 128]], 1.0);
        let ch = h.index_axis(ndarray::Axis(0), 0);
        let (mut best, mut arg) = (f64::MIN, (0, 0));
        for ((y, x), &v) in ch.indexed_iter() {
            if v > best {
                best = v;
                arg = (y, x);
            }
        }
        assert_eq!(arg, (128, 128));
    }

    #[test]
    fn stack_shape_is_channels_by_size_by_size() {
        let l = set_with_point(5, [10.0, 20.0], [30.0, 30.0]);
        let h = render(&l, 256, 4.0);
        assert_eq!(h.dim(), (68, 256, 256));
        assert!(h.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn fractional_landmark_argmax_is_rounded_location() {
        let l = set_with_point(3, [17.4, 22.6], [5.0, 5.0]);
        let h = render(&l, 48, 2.0);
        let ch = h.index_axis(ndarray::Axis(0), 3);
        let (mut best, mut arg) = (f64::MIN, (0usize, 0usize));
        for ((y, x), &v) in ch.indexed_iter() {
            if v > best {
                best = v;
                arg = (y, x);
            }
        }
        assert_eq!(arg, (23, 17));
    }

    #[test]
    fn gradient_matches_central_finite_differences_at_probe_pixel() {
        // Probe the value of a single pixel as the landmark x moves.
        let size = 32;
        let sigma = 2.0;
        let probe = (12usize, 9usize); // (y, x)
        let base = [10.3, 11.7];
        let value_at = |px: f64| {
            let l = set_with_point(0, [px, base[1]], [20.0, 20.0]);
            render(&l, size, sigma)[[0, probe.0, probe.1]]
        };
        let h = 1e-5;
        let numeric = (value_at(base[0] + h) - value_at(base[0] - h)) / (2.0 * h);

        let l = set_with_point(0, [base[0], base[1]], [20.0, 20.0]);
        let mut g = Array3::<f64>::zeros((NUM_LANDMARKS, size, size));
        g[[0, probe.0, probe.1]] = 1.0;
        let analytic = backward(&l, size, sigma, &g)[0][0];
        let rel = (analytic - numeric).abs() / numeric.abs().max(1e-12);
        assert!(rel < 1e-5, "rel err {rel}: {analytic} vs {numeric}");
    }

    #[test]
    fn soft_argmax_recovers_interior_landmarks_within_a_tenth_pixel() {
        let size = 64;
        let sigma = 2.0;
        // Landmarks at least 3 sigma away from every border.
        let candidates = [[10.25, 40.5], [32.0, 32.0], [50.75, 12.5], [6.1, 6.2]];
        for &p in &candidates {
            let l = set_with_point(0, p, [32.0, 32.0]);
            let h = render(&l, size, sigma);
            let rec = soft_argmax(h.index_axis(ndarray::Axis(0), 0));
            assert!(
                (rec[0] - p[0]).abs() < 0.1 && (rec[1] - p[1]).abs() < 0.1,
                "{p:?} -> {rec:?}"
            );
        }
    }

    #[test]
    fn off_image_landmarks_render_truncated_tails() {
        let l = set_with_point(0, [-10.0, -10.0], [16.0, 16.0]);
        let h = render(&l, 32, 2.0);
        let ch = h.index_axis(ndarray::Axis(0), 0);
        assert!(ch.iter().all(|&v| v.is_finite() && v < 1e-6));
    }
}
