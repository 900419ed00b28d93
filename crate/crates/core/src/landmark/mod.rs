//! Landmark representation, heatmap rendering, and landmark metrics.

pub mod heatmap;
pub mod pdm;
pub mod rotation;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub const NUM_LANDMARKS: usize = 68;

/// Index ranges of the standard 68-point convention (0-based).
pub const JAW: std::ops::Range<usize> = 0..17;
pub const BROWS: std::ops::Range<usize> = 17..27;
pub const NOSE: std::ops::Range<usize> = 27..36;
pub const LEFT_EYE: std::ops::Range<usize> = 36..42;
pub const RIGHT_EYE: std::ops::Range<usize> = 42..48;
pub const MOUTH: std::ops::Range<usize> = 48..68;
pub const NOSE_TIP: usize = 30;

/// 68 facial keypoints in pixel coordinates (origin top-left, x right,
/// y down).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet {
    points: Vec<[f64; 2]>,
}

impl LandmarkSet {
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self> {
        if points.len() != NUM_LANDMARKS {
            return Err(CoreError::InvalidInput(format!(
                "expected {NUM_LANDMARKS} landmarks, got {}",
                points.len()
            )));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(CoreError::InvalidInput(
                "landmark coordinates must be finite".into(),
            ));
        }
        Ok(LandmarkSet { points })
    }

    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if flat.len() != 2 * NUM_LANDMARKS {
            return Err(CoreError::InvalidInput(format!(
                "expected {} values, got {}",
                2 * NUM_LANDMARKS,
                flat.len()
            )));
        }
        Self::new(flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect())
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.points.iter().flatten().copied().collect()
    }

    pub fn centroid(&self) -> [f64; 2] {
        let mut c = [0.0, 0.0];
        for p in &self.points {
            c[0] += p[0];
            c[1] += p[1];
        }
        [c[0] / NUM_LANDMARKS as f64, c[1] / NUM_LANDMARKS as f64]
    }

    pub fn map(&self, f: impl Fn([f64; 2]) -> [f64; 2]) -> LandmarkSet {
        LandmarkSet {
            points: self.points.iter().map(|&p| f(p)).collect(),
        }
    }

    /// Pixel coordinates mapped to `[-1, 1]` network units: `2x/S - 1`.
    pub fn to_normalized(&self, size: usize) -> Vec<f64> {
        let s = size as f64;
        self.points
            .iter()
            .flatten()
            .map(|&v| 2.0 * v / s - 1.0)
            .collect()
    }

    pub fn from_normalized(norm: &[f64], size: usize) -> Result<Self> {
        let s = size as f64;
        let px: Vec<f64> = norm.iter().map(|&v| (v + 1.0) * s / 2.0).collect();
        Self::from_flat(&px)
    }

    /// Distance between the centroids of the two eye-landmark groups.
    pub fn interocular_distance(&self) -> f64 {
        let mean = |range: std::ops::Range<usize>| {
            let mut c = [0.0, 0.0];
            let n = range.len() as f64;
            for p in &self.points[range] {
                c[0] += p[0];
                c[1] += p[1];
            }
            [c[0] / n, c[1] / n]
        };
        let l = mean(LEFT_EYE);
        let r = mean(RIGHT_EYE);
        ((l[0] - r[0]).powi(2) + (l[1] - r[1]).powi(2)).sqrt()
    }
}

/// Landmark error: mean per-point Euclidean distance, plus the same value
/// normalized by the inter-ocular distance of the reference set. The
/// normalized value is `None` when the reference inter-ocular distance is
/// zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandmarkError {
    pub l2: f64,
    pub norm_l2: Option<f64>,
}

pub fn normalized_l2(a: &LandmarkSet, b: &LandmarkSet) -> LandmarkError {
    let l2 = a
        .points
        .iter()
        .zip(&b.points)
        .map(|(p, q)| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt())
        .sum::<f64>()
        / NUM_LANDMARKS as f64;
    let iod = b.interocular_distance();
    let norm_l2 = if iod > 0.0 { Some(l2 / iod) } else { None };
    LandmarkError { l2, norm_l2 }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_set() -> LandmarkSet {
        LandmarkSet::new(
            (0..NUM_LANDMARKS)
                .map(|i| [10.0 + (i % 10) as f64 * 3.0, 20.0 + (i / 10) as f64 * 4.0])
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn identical_sets_have_zero_error() {
        let l = grid_set();
        let e = normalized_l2(&l, &l);
        assert_eq!(e.l2, 0.0);
        assert_eq!(e.norm_l2, Some(0.0));
    }

    #[test]
    fn uniform_3_4_shift_gives_l2_of_exactly_5() {
        let l = grid_set();
        let shifted = l.map(|p| [p[0] + 3.0, p[1] + 4.0]);
        let e = normalized_l2(&shifted, &l);
        assert!((e.l2 - 5.0).abs() < 1e-12);
    }

    #[test]
    fn interocular_uses_eye_centroids() {
        let mut pts = vec![[0.0, 0.0]; NUM_LANDMARKS];
        for p in &mut pts[LEFT_EYE] {
            *p = [10.0, 30.0];
        }
        for p in &mut pts[RIGHT_EYE] {
            *p = [50.0, 30.0];
        }
        let l = LandmarkSet::new(pts).unwrap();
        assert!((l.interocular_distance() - 40.0).abs() < 1e-12);
    }

    #[test]
    fn zero_interocular_distance_reports_undefined() {
        let l = LandmarkSet::new(vec![[5.0, 5.0]; NUM_LANDMARKS]).unwrap();
        let shifted = l.map(|p| [p[0] + 1.0, p[1]]);
        let e = normalized_l2(&shifted, &l);
        assert_eq!(e.norm_l2, None);
        assert!((e.l2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn translation_invariance_of_normalized_error() {
        let a = grid_set();
        let b = a.map(|p| [p[0] + 2.0, p[1] - 1.0]);
        let e1 = normalized_l2(&b, &a);
        let a2 = a.map(|p| [p[0] + 7.0, p[1] + 9.0]);
        let b2 = b.map(|p| [p[0] + 7.0, p[1] + 9.0]);
        let e2 = normalized_l2(&b2, &a2);
        assert!((e1.l2 - e2.l2).abs() < 1e-9);
        assert!((e1.norm_l2.unwrap() - e2.norm_l2.unwrap()).abs() < 1e-9);
    }

    #[test]
    fn l2_scales_linearly_under_joint_scaling() {
        let a = grid_set();
        let b = a.map(|p| [p[0] + 1.0, p[1] + 2.0]);
        let e1 = normalized_l2(&b, &a);
        let scale = |l: &LandmarkSet| l.map(|p| [p[0] * 3.0, p[1] * 3.0]);
        let e2 = normalized_l2(&scale(&b), &scale(&a));
        assert!((e2.l2 - 3.0 * e1.l2).abs() < 1e-9);
        // normalized error is scale invariant
        assert!((e2.norm_l2.unwrap() - e1.norm_l2.unwrap()).abs() < 1e-9);
    }
}
