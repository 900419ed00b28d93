//! Point Distribution Model: landmarks as a scaled, rotated mean 3-D shape
//! plus a linear non-rigid basis, `L = s * R * (mean + basis * q) + t`,
//! where `R` is the top two rows of the rotation matrix built from three
//! axis-angle parameters.
//!
//! Fitting is self-contained: generalized Procrustes alignment of the 2-D
//! shapes, a rank-3 rigid factorization of the aligned measurement matrix
//! with an orthonormality-constrained corrective transform to recover the
//! mean 3-D shape, and PCA over back-projected per-sample residuals (with
//! similarity modes removed) for the non-rigid basis.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::rotation::{
    axis_angles_from_rotation, cross, rotation_from_axis_angles, rotation_jacobian, Mat3,
};
use super::{LandmarkSet, NOSE_TIP, NUM_LANDMARKS};
use crate::error::{CoreError, Result};

const FLAT_DIM: usize = 3 * NUM_LANDMARKS; // 204, point-major (x, y, z per point)

/// Pose and shape parameters, `n + 6` numbers in total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdmParams {
    pub scale: f64,
    pub axis_angles: [f64; 3],
    pub translation: [f64; 2],
    pub shape_coeffs: Vec<f64>,
}

impl PdmParams {
    pub fn identity(n: usize) -> Self {
        PdmParams {
            scale: 1.0,
            axis_angles: [0.0; 3],
            translation: [0.0; 2],
            shape_coeffs: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        6 + self.shape_coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.push(self.scale);
        v.extend_from_slice(&self.axis_angles);
        v.extend_from_slice(&self.translation);
        v.extend_from_slice(&self.shape_coeffs);
        v
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() < 6 {
            return Err(CoreError::InvalidInput(format!(
                "parameter vector too short: {}",
                v.len()
            )));
        }
        Ok(PdmParams {
            scale: v[0],
            axis_angles: [v[1], v[2], v[3]],
            translation: [v[4], v[5]],
            shape_coeffs: v[6..].to_vec(),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// RMS residual (px) of the rigid factorization stage on the aligned
    /// training shapes.
    pub rigid_residual_rmse: f64,
    /// Fraction of residual variance captured by the retained basis.
    pub explained_variance: f64,
    /// True when the data had no usable depth variation and the mean shape
    /// was lifted with z = 0.
    pub planar_fallback: bool,
}

/// Statistical shape model with an orthonormal non-rigid basis.
#[derive(Debug, Clone)]
pub struct PdmModel {
    mean_shape_3d: Array2<f64>, // (68, 3)
    basis: Array2<f64>,         // (204, n)
    mean_params: PdmParams,
    pub diagnostics: FitDiagnostics,
}

/// Result of projecting a landmark set onto the model.
#[derive(Debug, Clone)]
pub struct Projection {
    pub params: PdmParams,
    pub rmse: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl PdmModel {
    pub fn n(&self) -> usize {
        self.basis.ncols()
    }

    pub fn mean_shape_3d(&self) -> &Array2<f64> {
        &self.mean_shape_3d
    }

    pub fn basis(&self) -> &Array2<f64> {
        &self.basis
    }

    /// Average pose over the training set (identity rotation, zero shape
    /// coefficients). Used to initialize decoder heads so they start on the
    /// shape manifold.
    pub fn mean_params(&self) -> &PdmParams {
        &self.mean_params
    }

    /// Restriction of the model to its first `n` basis columns. PCA orders
    /// the basis by explained variance, so submodels nest.
    pub fn submodel(&self, n: usize) -> Result<PdmModel> {
        if n < 1 || n > self.n() {
            return Err(CoreError::InvalidInput(format!(
                "submodel size {n} out of range 1..={}",
                self.n()
            )));
        }
        let mut mp = self.mean_params.clone();
        mp.shape_coeffs.truncate(n);
        Ok(PdmModel {
            mean_shape_3d: self.mean_shape_3d.clone(),
            basis: self.basis.slice(ndarray::s![.., 0..n]).to_owned(),
            mean_params: mp,
            diagnostics: self.diagnostics.clone(),
        })
    }

    /// The 3-D shape `mean + reshape(basis * q)`.
    fn shape_for(&self, q: &[f64]) -> Array2<f64> {
        let mut x = self.mean_shape_3d.clone();
        if !q.is_empty() {
            let qv = Array1::from_vec(q.to_vec());
            let disp = self.basis.dot(&qv); // (204)
            for p in 0..NUM_LANDMARKS {
                for d in 0..3 {
                    x[[p, d]] += disp[3 * p + d];
                }
            }
        }
        x
    }

    /// Eq.-style decode: `L = s * R * (mean + basis q) + t`.
    pub fn decode(&self, params: &PdmParams) -> Result<LandmarkSet> {
        if params.shape_coeffs.len() != self.n() {
            return Err(CoreError::InvalidInput(format!(
                "expected {} shape coefficients, got {}",
                self.n(),
                params.shape_coeffs.len()
            )));
        }
        let x = self.shape_for(&params.shape_coeffs);
        let r = rotation_from_axis_angles(&params.axis_angles);
        let s = params.scale;
        let t = params.translation;
        let pts = (0..NUM_LANDMARKS)
            .map(|p| {
                let v = [x[[p, 0]], x[[p, 1]], x[[p, 2]]];
                [
                    s * (r[0][0] * v[0] + r[0][1] * v[1] + r[0][2] * v[2]) + t[0],
                    s * (r[1][0] * v[0] + r[1][1] * v[1] + r[1][2] * v[2]) + t[1],
                ]
            })
            .collect();
        LandmarkSet::new(pts)
    }

    /// Decode a batch of parameter rows `(N, n+6)` to pixel-coordinate rows
    /// `(N, 136)`. Differentiable companion of [`PdmModel::decode`] used by
    /// the landmark generator's PDM decoder head.
    pub fn decode_batch(&self, params: &Array2<f64>) -> Array2<f64> {
        let n = params.nrows();
        assert_eq!(params.ncols(), self.n() + 6, "parameter width mismatch");
        let mut out = Array2::<f64>::zeros((n, 2 * NUM_LANDMARKS));
        for i in 0..n {
            let row = params.row(i);
            let p = PdmParams::from_slice(row.as_slice().unwrap()).expect("row length checked");
            let l = self.decode(&p).expect("dimensions checked");
            out.row_mut(i)
                .assign(&Array1::from_vec(l.to_flat()));
        }
        out
    }

    /// Gradient of `decode_batch`: given `d(loss)/d(landmarks)` per sample,
    /// returns `d(loss)/d(params)` per sample.
    pub fn decode_batch_backward(
        &self,
        params: &Array2<f64>,
        grad: &Array2<f64>,
    ) -> Array2<f64> {
        let nb = params.nrows();
        let n = self.n();
        let mut out = Array2::<f64>::zeros((nb, n + 6));
        let mut dflat = Array2::<f64>::zeros((nb, FLAT_DIM));
        for i in 0..nb {
            let prow = params.row(i);
            let p = PdmParams::from_slice(prow.as_slice().unwrap()).expect("row length checked");
            let x = self.shape_for(&p.shape_coeffs);
            let r = rotation_from_axis_angles(&p.axis_angles);
            let jac = rotation_jacobian(&p.axis_angles);
            let g = grad.row(i);
            let s = p.scale;
            let mut ds = 0.0;
            let mut dw = [0.0f64; 3];
            let mut dt = [0.0f64; 2];
            for pt in 0..NUM_LANDMARKS {
                let v = [x[[pt, 0]], x[[pt, 1]], x[[pt, 2]]];
                let gx = g[2 * pt];
                let gy = g[2 * pt + 1];
                let rx = r[0][0] * v[0] + r[0][1] * v[1] + r[0][2] * v[2];
                let ry = r[1][0] * v[0] + r[1][1] * v[1] + r[1][2] * v[2];
                ds += gx * rx + gy * ry;
                for (k, jk) in jac.iter().enumerate() {
                    let jx = jk[0][0] * v[0] + jk[0][1] * v[1] + jk[0][2] * v[2];
                    let jy = jk[1][0] * v[0] + jk[1][1] * v[1] + jk[1][2] * v[2];
                    dw[k] += s * (gx * jx + gy * jy);
                }
                dt[0] += gx;
                dt[1] += gy;
                // d/dX_p = s * R(2x3)^T g_p
                for d in 0..3 {
                    dflat[[i, 3 * pt + d]] = s * (r[0][d] * gx + r[1][d] * gy);
                }
            }
            out[[i, 0]] = ds;
            out[[i, 1]] = dw[0];
            out[[i, 2]] = dw[1];
            out[[i, 3]] = dw[2];
            out[[i, 4]] = dt[0];
            out[[i, 5]] = dt[1];
        }
        // dq = basis^T dflat, batched
        let dq = dflat.dot(&self.basis); // (N, n)
        out.slice_mut(ndarray::s![.., 6..]).assign(&dq);
        out
    }

    /// Embed the model into a tensor archive under `prefix`.
    pub fn store_into(&self, arc: &mut headgen_nn::TensorArchive, prefix: &str) {
        arc.insert(
            &format!("{prefix}.mean_shape_3d"),
            self.mean_shape_3d.clone().into_dyn(),
        );
        arc.insert(&format!("{prefix}.basis"), self.basis.clone().into_dyn());
        arc.insert_scalar(&format!("{prefix}.n"), self.n() as f64);
        arc.insert(
            &format!("{prefix}.mean_params"),
            Array1::from_vec(self.mean_params.to_vec()).into_dyn(),
        );
    }

    /// Extract a model previously embedded with [`PdmModel::store_into`].
    pub fn load_from(arc: &headgen_nn::TensorArchive, prefix: &str) -> Result<PdmModel> {
        let mean = arc
            .get(&format!("{prefix}.mean_shape_3d"))?
            .clone()
            .into_dimensionality::<ndarray::Ix2>()
            .map_err(|e| CoreError::InvalidInput(format!("bad mean shape: {e}")))?;
        let basis = arc
            .get(&format!("{prefix}.basis"))?
            .clone()
            .into_dimensionality::<ndarray::Ix2>()
            .map_err(|e| CoreError::InvalidInput(format!("bad basis: {e}")))?;
        let mp = arc.get(&format!("{prefix}.mean_params"))?;
        let mean_params = PdmParams::from_slice(mp.as_slice().unwrap())?;
        Ok(PdmModel {
            mean_shape_3d: mean,
            basis,
            mean_params,
            diagnostics: FitDiagnostics {
                rigid_residual_rmse: f64::NAN,
                explained_variance: f64::NAN,
                planar_fallback: false,
            },
        })
    }

    pub fn save(&self, base: &Path) -> Result<()> {
        use headgen_nn::TensorArchive;
        let mut arc = TensorArchive::new();
        arc.insert("mean_shape_3d", self.mean_shape_3d.clone().into_dyn());
        arc.insert("basis", self.basis.clone().into_dyn());
        arc.insert_scalar("n", self.n() as f64);
        arc.insert(
            "mean_params",
            Array1::from_vec(self.mean_params.to_vec()).into_dyn(),
        );
        arc.save(&base.with_extension("ntar"))?;
        let sidecar = serde_json::json!({
            "landmark_convention": "68-point (jaw 1-17, brows 18-27, nose 28-36, eyes 37-48, mouth 49-68)",
            "flatten_order": "point-major xyz",
            "n": self.n(),
            "diagnostics": self.diagnostics,
        });
        let path = base.with_extension("json");
        std::fs::write(&path, serde_json::to_string_pretty(&sidecar).unwrap())
            .map_err(|e| CoreError::io(&path, e))?;
        Ok(())
    }

    pub fn load(base: &Path) -> Result<PdmModel> {
        use headgen_nn::TensorArchive;
        let arc = TensorArchive::load(&base.with_extension("ntar"))?;
        let mean = arc
            .get("mean_shape_3d")?
            .clone()
            .into_dimensionality::<ndarray::Ix2>()
            .map_err(|e| CoreError::InvalidInput(format!("bad mean shape: {e}")))?;
        let basis = arc
            .get("basis")?
            .clone()
            .into_dimensionality::<ndarray::Ix2>()
            .map_err(|e| CoreError::InvalidInput(format!("bad basis: {e}")))?;
        let mp = arc.get("mean_params")?;
        let mean_params = PdmParams::from_slice(mp.as_slice().unwrap())?;
        let sidecar = base.with_extension("json");
        let diagnostics = std::fs::read_to_string(&sidecar)
            .ok()
            .and_then(|s| serde_json::from_str::<serde_json::Value>(&s).ok())
            .and_then(|v| serde_json::from_value(v["diagnostics"].clone()).ok())
            .unwrap_or(FitDiagnostics {
                rigid_residual_rmse: f64::NAN,
                explained_variance: f64::NAN,
                planar_fallback: false,
            });
        Ok(PdmModel {
            mean_shape_3d: mean,
            basis,
            mean_params,
            diagnostics,
        })
    }
}

/// RMS point distance between a landmark set and its decode under `params`.
pub fn reconstruction_rmse(model: &PdmModel, l: &LandmarkSet, params: &PdmParams) -> f64 {
    let dec = model.decode(params).expect("valid params");
    let ms = l
        .points()
        .iter()
        .zip(dec.points())
        .map(|(a, b)| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2))
        .sum::<f64>()
        / NUM_LANDMARKS as f64;
    ms.sqrt()
}

// ---------------------------------------------------------------------------
// Fitting
// ---------------------------------------------------------------------------

struct Gpa {
    aligned_px: Vec<Array2<f64>>, // centered, mean-scale pixels
    mean_centroid: [f64; 2],
    mean_sample_scale: f64, // mean of per-sample scale ratios (approx. 1)
}

fn centroid2(x: &Array2<f64>) -> [f64; 2] {
    let n = x.nrows() as f64;
    [x.column(0).sum() / n, x.column(1).sum() / n]
}

fn rms_scale(x: &Array2<f64>) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.nrows() as f64).sqrt()
}

/// Optimal in-plane rotation aligning `x` to `m` (both centered): returns
/// `x` rotated.
fn align_rotation(x: &Array2<f64>, m: &Array2<f64>) -> (Array2<f64>, f64) {
    // a = sum x_i m_i^T components for the 2x2 Kabsch problem
    let mut a = [[0.0f64; 2]; 2];
    for p in 0..x.nrows() {
        for i in 0..2 {
            for j in 0..2 {
                a[i][j] += x[[p, i]] * m[[p, j]];
            }
        }
    }
    // closed-form 2-D polar decomposition of a^T
    let c = a[0][0] + a[1][1];
    let s = a[0][1] - a[1][0];
    let norm = (c * c + s * s).sqrt();
    let (cos_t, sin_t) = if norm > 1e-12 {
        (c / norm, s / norm)
    } else {
        (1.0, 0.0)
    };
    let mut out = Array2::<f64>::zeros((x.nrows(), 2));
    for p in 0..x.nrows() {
        let (px, py) = (x[[p, 0]], x[[p, 1]]);
        out[[p, 0]] = cos_t * px - sin_t * py;
        out[[p, 1]] = sin_t * px + cos_t * py;
    }
    let angle = sin_t.atan2(cos_t);
    (out, angle)
}

fn generalized_procrustes(shapes: &[LandmarkSet]) -> Result<Gpa> {
    let f = shapes.len();
    let mut centered = Vec::with_capacity(f);
    let mut centroids = Vec::with_capacity(f);
    let mut scales = Vec::with_capacity(f);
    for l in shapes {
        let mut x = Array2::<f64>::zeros((NUM_LANDMARKS, 2));
        for (p, pt) in l.points().iter().enumerate() {
            x[[p, 0]] = pt[0];
            x[[p, 1]] = pt[1];
        }
        let c = centroid2(&x);
        for p in 0..NUM_LANDMARKS {
            x[[p, 0]] -= c[0];
            x[[p, 1]] -= c[1];
        }
        let s = rms_scale(&x);
        if s < 1e-9 {
            return Err(CoreError::FittingFailure {
                reason: "degenerate training shape with zero spatial extent".into(),
                residual_rmse: 0.0,
            });
        }
        centroids.push(c);
        scales.push(s);
        centered.push(x / s);
    }
    let mean_scale = scales.iter().sum::<f64>() / f as f64;

    let mut mean = centered[0].clone();
    let mut aligned = centered.clone();
    for _ in 0..10 {
        for (i, x) in centered.iter().enumerate() {
            let (ax, _) = align_rotation(x, &mean);
            aligned[i] = ax;
        }
        let mut new_mean = Array2::<f64>::zeros((NUM_LANDMARKS, 2));
        for a in &aligned {
            new_mean += a;
        }
        new_mean /= f as f64;
        let ns = rms_scale(&new_mean);
        if ns > 1e-12 {
            new_mean /= ns;
        }
        mean = new_mean;
    }

    let aligned_px: Vec<Array2<f64>> = aligned.iter().map(|a| a * mean_scale).collect();
    let mean_centroid = [
        centroids.iter().map(|c| c[0]).sum::<f64>() / f as f64,
        centroids.iter().map(|c| c[1]).sum::<f64>() / f as f64,
    ];
    let mean_sample_scale = scales.iter().map(|s| s / mean_scale).sum::<f64>() / f as f64;
    Ok(Gpa {
        aligned_px,
        mean_centroid,
        mean_sample_scale,
    })
}

/// Flattened (point-major xyz) similarity modes of a 3-D shape: scale, three
/// rotation generators, three translations. Residuals are projected onto the
/// orthogonal complement of this subspace so the non-rigid basis cannot
/// express pose changes.
fn similarity_modes(mean: &Array2<f64>) -> Vec<Vec<f64>> {
    let mut modes = Vec::new();
    let mut scale = vec![0.0; FLAT_DIM];
    for p in 0..NUM_LANDMARKS {
        for d in 0..3 {
            scale[3 * p + d] = mean[[p, d]];
        }
    }
    modes.push(scale);
    for axis in 0..3 {
        let mut e = [0.0; 3];
        e[axis] = 1.0;
        let mut rot = vec![0.0; FLAT_DIM];
        for p in 0..NUM_LANDMARKS {
            let v = [mean[[p, 0]], mean[[p, 1]], mean[[p, 2]]];
            let r = cross(&e, &v);
            for d in 0..3 {
                rot[3 * p + d] = r[d];
            }
        }
        modes.push(rot);
    }
    for d in 0..3 {
        let mut t = vec![0.0; FLAT_DIM];
        for p in 0..NUM_LANDMARKS {
            t[3 * p + d] = 1.0;
        }
        modes.push(t);
    }
    // orthonormalize, dropping near-zero vectors
    let mut ortho: Vec<Vec<f64>> = Vec::new();
    for mut m in modes {
        for o in &ortho {
            let dot: f64 = m.iter().zip(o).map(|(a, b)| a * b).sum();
            for (mv, ov) in m.iter_mut().zip(o) {
                *mv -= dot * ov;
            }
        }
        let norm: f64 = m.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-9 {
            for v in &mut m {
                *v /= norm;
            }
            ortho.push(m);
        }
    }
    ortho
}

/// Extend `cols` (orthonormal 204-vectors) to `n` columns using canonical
/// basis vectors, keeping orthonormality. Used when the residual data has
/// lower rank than the requested basis size.
fn complete_basis(cols: &mut Vec<Vec<f64>>, n: usize) {
    let mut k = 0;
    while cols.len() < n && k < FLAT_DIM {
        let mut e = vec![0.0; FLAT_DIM];
        e[k] = 1.0;
        for c in cols.iter() {
            let dot: f64 = e.iter().zip(c).map(|(a, b)| a * b).sum();
            for (ev, cv) in e.iter_mut().zip(c) {
                *ev -= dot * cv;
            }
        }
        let norm: f64 = e.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-6 {
            for v in &mut e {
                *v /= norm;
            }
            cols.push(e);
        }
        k += 1;
    }
    assert!(cols.len() >= n, "could not complete orthonormal basis");
}

/// Fit a PDM with `n` basis vectors to a set of landmark shapes.
pub fn fit(shapes: &[LandmarkSet], n: usize) -> Result<PdmModel> {
    if n < 1 || n > FLAT_DIM {
        return Err(CoreError::InvalidInput(format!(
            "basis size {n} out of range 1..={FLAT_DIM}"
        )));
    }
    if shapes.len() < n + 1 {
        return Err(CoreError::InvalidInput(format!(
            "need at least {} shapes to fit n={n}, got {}",
            n + 1,
            shapes.len()
        )));
    }
    let f = shapes.len();
    let gpa = generalized_procrustes(shapes)?;

    // Measurement matrix: x-row and y-row per aligned shape.
    let mut w = DMatrix::<f64>::zeros(2 * f, NUM_LANDMARKS);
    for (i, a) in gpa.aligned_px.iter().enumerate() {
        for p in 0..NUM_LANDMARKS {
            w[(2 * i, p)] = a[[p, 0]];
            w[(2 * i + 1, p)] = a[[p, 1]];
        }
    }
    let svd = w.clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd with u");
    let vt = svd.v_t.as_ref().expect("svd with vt");
    let sigma = &svd.singular_values;
    let s1 = sigma[0];
    let planar = sigma.len() < 3 || sigma[2] / s1.max(1e-300) < 1e-9;

    let (mean3d, rotations, scales_f, rigid_residual);
    if planar {
        // No usable depth variation: lift the 2-D mean with z = 0. Every
        // view then projects through the identity rotation.
        let mut mean = Array2::<f64>::zeros((NUM_LANDMARKS, 3));
        for a in &gpa.aligned_px {
            for p in 0..NUM_LANDMARKS {
                mean[[p, 0]] += a[[p, 0]] / f as f64;
                mean[[p, 1]] += a[[p, 1]] / f as f64;
            }
        }
        mean3d = mean;
        rotations = vec![super::rotation::IDENTITY; f];
        scales_f = vec![1.0f64; f];
        rigid_residual = {
            let mut ss = 0.0;
            for a in &gpa.aligned_px {
                for p in 0..NUM_LANDMARKS {
                    ss += (a[[p, 0]] - mean3d[[p, 0]]).powi(2)
                        + (a[[p, 1]] - mean3d[[p, 1]]).powi(2);
                }
            }
            (ss / (f * NUM_LANDMARKS) as f64).sqrt()
        };
    } else {
        // Rank-3 factorization W = M S with metric upgrade G solving the
        // per-view row orthonormality constraints in least squares.
        let mut m_hat = DMatrix::<f64>::zeros(2 * f, 3);
        let mut s_hat = DMatrix::<f64>::zeros(3, NUM_LANDMARKS);
        for k in 0..3 {
            let sk = sigma[k].sqrt();
            for r in 0..2 * f {
                m_hat[(r, k)] = u[(r, k)] * sk;
            }
            for c in 0..NUM_LANDMARKS {
                s_hat[(k, c)] = vt[(k, c)] * sk;
            }
        }
        // Solve for symmetric Q = G G^T: a_f Q a_f^T = b_f Q b_f^T,
        // a_f Q b_f^T = 0, sum of row norms fixed.
        let qrow = |a: &[f64; 3], b: &[f64; 3]| {
            [
                a[0] * b[0],
                a[0] * b[1] + a[1] * b[0],
                a[0] * b[2] + a[2] * b[0],
                a[1] * b[1],
                a[1] * b[2] + a[2] * b[1],
                a[2] * b[2],
            ]
        };
        let mut rows: Vec<[f64; 6]> = Vec::with_capacity(2 * f + 1);
        let mut rhs: Vec<f64> = Vec::with_capacity(2 * f + 1);
        let mut norm_row = [0.0f64; 6];
        for i in 0..f {
            let a = [m_hat[(2 * i, 0)], m_hat[(2 * i, 1)], m_hat[(2 * i, 2)]];
            let b = [
                m_hat[(2 * i + 1, 0)],
                m_hat[(2 * i + 1, 1)],
                m_hat[(2 * i + 1, 2)],
            ];
            let ra = qrow(&a, &a);
            let rb = qrow(&b, &b);
            let mut diff = [0.0f64; 6];
            for k in 0..6 {
                diff[k] = ra[k] - rb[k];
                norm_row[k] += ra[k] + rb[k];
            }
            rows.push(diff);
            rhs.push(0.0);
            rows.push(qrow(&a, &b));
            rhs.push(0.0);
        }
        rows.push(norm_row);
        rhs.push(2.0 * f as f64);
        let a_mat = DMatrix::<f64>::from_fn(rows.len(), 6, |r, c| rows[r][c]);
        let b_vec = DVector::<f64>::from_vec(rhs);
        let sol = a_mat
            .svd(true, true)
            .solve(&b_vec, 1e-12)
            .map_err(|e| CoreError::FittingFailure {
                reason: format!("metric upgrade solve failed: {e}"),
                residual_rmse: f64::NAN,
            })?;
        let q_sym = nalgebra::Matrix3::new(
            sol[0], sol[1], sol[2], sol[1], sol[3], sol[4], sol[2], sol[4], sol[5],
        );
        let eig = nalgebra::SymmetricEigen::new(q_sym);
        let max_eig = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
        if !(max_eig > 0.0) {
            return Err(CoreError::FittingFailure {
                reason: "metric upgrade produced a non-positive Gram matrix".into(),
                residual_rmse: f64::NAN,
            });
        }
        let mut g = nalgebra::Matrix3::zeros();
        for k in 0..3 {
            let lam = eig.eigenvalues[k].max(max_eig * 1e-9);
            let col = eig.eigenvectors.column(k) * lam.sqrt();
            g.set_column(k, &col);
        }
        let g_inv = g.try_inverse().ok_or_else(|| CoreError::FittingFailure {
            reason: "corrective transform not invertible".into(),
            residual_rmse: f64::NAN,
        })?;
        let m_up = &m_hat * g;
        let g_inv_dyn = DMatrix::<f64>::from_fn(3, 3, |i, j| g_inv[(i, j)]);
        let s_up = g_inv_dyn * &s_hat;

        // Gauge fix: rotate so the first view is the identity.
        let a0 = nalgebra::Vector3::new(m_up[(0, 0)], m_up[(0, 1)], m_up[(0, 2)]);
        let b0 = nalgebra::Vector3::new(m_up[(1, 0)], m_up[(1, 1)], m_up[(1, 2)]);
        let r1 = a0.normalize();
        let b_orth = (b0 - r1 * b0.dot(&r1)).normalize();
        let r3 = r1.cross(&b_orth);
        let r0 = nalgebra::Matrix3::from_rows(&[
            r1.transpose(),
            b_orth.transpose(),
            r3.transpose(),
        ]);
        let m_fix = &m_up * r0.transpose();
        let r0_dyn = DMatrix::<f64>::from_fn(3, 3, |i, j| r0[(i, j)]);
        let mut s_fix = r0_dyn * &s_up;

        // Depth-sign convention: nose tip toward the viewer (positive z).
        let mean_z: f64 = s_fix.row(2).iter().sum::<f64>() / NUM_LANDMARKS as f64;
        let mut flip_z = false;
        if s_fix[(2, NOSE_TIP)] < mean_z {
            for c in 0..NUM_LANDMARKS {
                s_fix[(2, c)] = -s_fix[(2, c)];
            }
            flip_z = true;
        }

        let mut mean = Array2::<f64>::zeros((NUM_LANDMARKS, 3));
        for p in 0..NUM_LANDMARKS {
            mean[[p, 0]] = s_fix[(0, p)];
            mean[[p, 1]] = s_fix[(1, p)];
            mean[[p, 2]] = s_fix[(2, p)];
        }

        // Per-view scaled rotations: nearest orthonormal row pair.
        let mut rots = Vec::with_capacity(f);
        let mut svs = Vec::with_capacity(f);
        let mut ss_res = 0.0;
        for i in 0..f {
            let mut pv = nalgebra::Matrix2x3::zeros();
            for c in 0..3 {
                let zsign = if flip_z && c == 2 { -1.0 } else { 1.0 };
                pv[(0, c)] = m_fix[(2 * i, c)] * zsign;
                pv[(1, c)] = m_fix[(2 * i + 1, c)] * zsign;
            }
            let svd_v = pv.svd(true, true);
            let uu = svd_v.u.unwrap();
            let vvt = svd_v.v_t.unwrap();
            let rr = uu * vvt; // (2x3) with orthonormal rows
            let s_view = (svd_v.singular_values[0] + svd_v.singular_values[1]) / 2.0;
            let row1 = [rr[(0, 0)], rr[(0, 1)], rr[(0, 2)]];
            let row2 = [rr[(1, 0)], rr[(1, 1)], rr[(1, 2)]];
            let row3 = cross(&row1, &row2);
            rots.push([row1, row2, row3]);
            svs.push(s_view);
            for p in 0..NUM_LANDMARKS {
                let proj_x = s_view
                    * (row1[0] * mean[[p, 0]] + row1[1] * mean[[p, 1]] + row1[2] * mean[[p, 2]]);
                let proj_y = s_view
                    * (row2[0] * mean[[p, 0]] + row2[1] * mean[[p, 1]] + row2[2] * mean[[p, 2]]);
                ss_res += (gpa.aligned_px[i][[p, 0]] - proj_x).powi(2)
                    + (gpa.aligned_px[i][[p, 1]] - proj_y).powi(2);
            }
        }
        mean3d = mean;
        rotations = rots;
        scales_f = svs;
        rigid_residual = (ss_res / (f * NUM_LANDMARKS) as f64).sqrt();
    }

    // Back-project 2-D residuals to minimum-norm 3-D displacement fields.
    let mut resid = DMatrix::<f64>::zeros(f, FLAT_DIM);
    for i in 0..f {
        let r = &rotations[i];
        let s = scales_f[i];
        // pinv of s * R(2x3): P^T (P P^T)^-1 with P P^T = s^2 I for
        // orthonormal rows, so pinv = R^T / s.
        for p in 0..NUM_LANDMARKS {
            let proj_x = s
                * (r[0][0] * mean3d[[p, 0]] + r[0][1] * mean3d[[p, 1]] + r[0][2] * mean3d[[p, 2]]);
            let proj_y = s
                * (r[1][0] * mean3d[[p, 0]] + r[1][1] * mean3d[[p, 1]] + r[1][2] * mean3d[[p, 2]]);
            let rx = gpa.aligned_px[i][[p, 0]] - proj_x;
            let ry = gpa.aligned_px[i][[p, 1]] - proj_y;
            for d in 0..3 {
                resid[(i, 3 * p + d)] = (r[0][d] * rx + r[1][d] * ry) / s;
            }
        }
    }

    // Fold the mean residual into the mean shape, then remove similarity
    // modes so the basis is purely non-rigid.
    let mut mean3d = mean3d;
    for p in 0..NUM_LANDMARKS {
        for d in 0..3 {
            let col_mean: f64 = resid.column(3 * p + d).iter().sum::<f64>() / f as f64;
            mean3d[[p, d]] += col_mean;
        }
    }
    for i in 0..f {
        let r = &rotations[i];
        let s = scales_f[i];
        for p in 0..NUM_LANDMARKS {
            let proj_x = s
                * (r[0][0] * mean3d[[p, 0]] + r[0][1] * mean3d[[p, 1]] + r[0][2] * mean3d[[p, 2]]);
            let proj_y = s
                * (r[1][0] * mean3d[[p, 0]] + r[1][1] * mean3d[[p, 1]] + r[1][2] * mean3d[[p, 2]]);
            let rx = gpa.aligned_px[i][[p, 0]] - proj_x;
            let ry = gpa.aligned_px[i][[p, 1]] - proj_y;
            for d in 0..3 {
                resid[(i, 3 * p + d)] = (r[0][d] * rx + r[1][d] * ry) / s;
            }
        }
    }
    let sim = similarity_modes(&mean3d);
    for i in 0..f {
        for mode in &sim {
            let dot: f64 = (0..FLAT_DIM).map(|k| resid[(i, k)] * mode[k]).sum();
            for k in 0..FLAT_DIM {
                resid[(i, k)] -= dot * mode[k];
            }
        }
    }

    let total_var: f64 = resid.iter().map(|v| v * v).sum();
    let rsvd = resid.svd(false, true);
    let rvt = rsvd.v_t.expect("svd with vt");
    let rsig = &rsvd.singular_values;
    let mut cols: Vec<Vec<f64>> = Vec::new();
    for k in 0..rvt.nrows().min(n) {
        if rsig[k] / rsig[0].max(1e-300) < 1e-9 {
            break;
        }
        cols.push((0..FLAT_DIM).map(|c| rvt[(k, c)]).collect());
    }
    let kept_var: f64 = rsig.iter().take(cols.len()).map(|s| s * s).sum();
    complete_basis(&mut cols, n);
    let mut basis = Array2::<f64>::zeros((FLAT_DIM, n));
    for (k, col) in cols.iter().take(n).enumerate() {
        for (r, &v) in col.iter().enumerate() {
            basis[[r, k]] = v;
        }
    }

    let diagnostics = FitDiagnostics {
        rigid_residual_rmse: rigid_residual,
        explained_variance: if total_var > 0.0 {
            kept_var / total_var
        } else {
            1.0
        },
        planar_fallback: planar,
    };
    let mean_params = PdmParams {
        scale: gpa.mean_sample_scale,
        axis_angles: [0.0; 3],
        translation: gpa.mean_centroid,
        shape_coeffs: vec![0.0; n],
    };
    let model = PdmModel {
        mean_shape_3d: mean3d,
        basis,
        mean_params,
        diagnostics,
    };
    if model.mean_shape_3d.iter().any(|v| !v.is_finite())
        || model.basis.iter().any(|v| !v.is_finite())
    {
        return Err(CoreError::FittingFailure {
            reason: "non-finite model entries".into(),
            residual_rmse: rigid_residual,
        });
    }
    Ok(model)
}

// ---------------------------------------------------------------------------
// Projection (model inversion)
// ---------------------------------------------------------------------------

/// Scaled-orthographic rigid alignment: the (s, R, t) minimizing
/// `|s R X + t - L|` for a fixed 3-D shape `X`.
fn rigid_step(l: &Array2<f64>, x: &Array2<f64>) -> (f64, Mat3, [f64; 2]) {
    let np = l.nrows();
    let lc = centroid2(l);
    let cx = [
        x.column(0).sum() / np as f64,
        x.column(1).sum() / np as f64,
        x.column(2).sum() / np as f64,
    ];
    // Unconstrained 2x3 affine P minimizing |Xc P^T - Lc| via normal
    // equations, then the nearest scaled orthonormal row pair via SVD.
    let mut xtx = nalgebra::Matrix3::<f64>::zeros();
    let mut xtl = nalgebra::Matrix3x2::<f64>::zeros();
    for p in 0..np {
        let xv = [x[[p, 0]] - cx[0], x[[p, 1]] - cx[1], x[[p, 2]] - cx[2]];
        let lv = [l[[p, 0]] - lc[0], l[[p, 1]] - lc[1]];
        for i in 0..3 {
            for j in 0..3 {
                xtx[(i, j)] += xv[i] * xv[j];
            }
            for j in 0..2 {
                xtl[(i, j)] += xv[i] * lv[j];
            }
        }
    }
    // Ridge for flat shapes (z identically zero makes XtX singular).
    let tr = xtx.trace().max(1e-12);
    for i in 0..3 {
        xtx[(i, i)] += 1e-12 * tr;
    }
    let pt = xtx.lu().solve(&xtl).unwrap_or_else(|| {
        nalgebra::Matrix3x2::from_fn(|i, j| if i == j { 1.0 } else { 0.0 })
    });
    let p_aff = pt.transpose(); // (2x3)
    let svd = p_aff.svd(true, true);
    let uu = svd.u.unwrap();
    let vvt = svd.v_t.unwrap();
    let rr = uu * vvt;
    let s = ((svd.singular_values[0] + svd.singular_values[1]) / 2.0).max(1e-9);
    let row1 = [rr[(0, 0)], rr[(0, 1)], rr[(0, 2)]];
    let row2 = [rr[(1, 0)], rr[(1, 1)], rr[(1, 2)]];
    let row3 = cross(&row1, &row2);
    let r = [row1, row2, row3];
    let t = [
        lc[0] - s * (row1[0] * cx[0] + row1[1] * cx[1] + row1[2] * cx[2]),
        lc[1] - s * (row2[0] * cx[0] + row2[1] * cx[1] + row2[2] * cx[2]),
    ];
    (s, r, t)
}

const PROJECT_MAX_ITERS: usize = 100;
const PROJECT_TOL: f64 = 1e-6;
// Alternating block steps approach the optimum quickly but zigzag once pose
// and shape errors couple; the remaining iteration budget is spent on joint
// Gauss-Newton steps, which close the gap quadratically.
const PROJECT_ALTERNATING_ITERS: usize = 15;

/// Projection of a landmark set onto the model: alternating rigid/non-rigid
/// steps followed by joint Gauss-Newton refinement, until the parameter
/// change drops below `1e-6` or 100 iterations total.
pub fn project(model: &PdmModel, l: &LandmarkSet) -> Projection {
    project_with_init(model, l, &PdmParams::identity(model.n()))
}

pub fn project_with_init(model: &PdmModel, l: &LandmarkSet, init: &PdmParams) -> Projection {
    let n = model.n();
    let mut lmat = Array2::<f64>::zeros((NUM_LANDMARKS, 2));
    for (p, pt) in l.points().iter().enumerate() {
        lmat[[p, 0]] = pt[0];
        lmat[[p, 1]] = pt[1];
    }
    let mut q = init.shape_coeffs.clone();
    q.resize(n, 0.0);
    let mut params = PdmParams {
        shape_coeffs: q,
        ..init.clone()
    };

    let mut best: Option<(f64, PdmParams)> = None;
    let mut converged = false;
    let mut iters = 0;
    for it in 0..PROJECT_MAX_ITERS {
        iters = it + 1;
        let prev = params.to_vec();

        if it < PROJECT_ALTERNATING_ITERS {
            let x = model.shape_for(&params.shape_coeffs);
            let (s, r, t) = rigid_step(&lmat, &x);
            params.scale = s;
            params.axis_angles = axis_angles_from_rotation(&r);
            params.translation = t;
            nonrigid_step(model, &lmat, &mut params);
        } else {
            gauss_newton_step(model, &lmat, &mut params);
        }

        let rmse = reconstruction_rmse(model, l, &params);
        if best.as_ref().map(|(r, _)| rmse < *r).unwrap_or(true) {
            best = Some((rmse, params.clone()));
        }
        let cur = params.to_vec();
        let delta: f64 = prev
            .iter()
            .zip(&cur)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        if delta < PROJECT_TOL {
            converged = true;
            break;
        }
    }
    let (rmse, params) = best.expect("at least one iteration ran");
    Projection {
        params,
        rmse,
        converged,
        iterations: iters,
    }
}

/// Least squares on q with the pose fixed. Row 2p+d of the design matrix is
/// `s * (R basis_col)_d` at point p.
fn nonrigid_step(model: &PdmModel, lmat: &Array2<f64>, params: &mut PdmParams) {
    let n = model.n();
    let s = params.scale;
    let r = rotation_from_axis_angles(&params.axis_angles);
    let t = params.translation;
    let mut a = DMatrix::<f64>::zeros(2 * NUM_LANDMARKS, n);
    let mut b = DVector::<f64>::zeros(2 * NUM_LANDMARKS);
    for p in 0..NUM_LANDMARKS {
        let mv = [
            model.mean_shape_3d[[p, 0]],
            model.mean_shape_3d[[p, 1]],
            model.mean_shape_3d[[p, 2]],
        ];
        let base_x = s * (r[0][0] * mv[0] + r[0][1] * mv[1] + r[0][2] * mv[2]) + t[0];
        let base_y = s * (r[1][0] * mv[0] + r[1][1] * mv[1] + r[1][2] * mv[2]) + t[1];
        b[2 * p] = lmat[[p, 0]] - base_x;
        b[2 * p + 1] = lmat[[p, 1]] - base_y;
        for j in 0..n {
            let bp = [
                model.basis[[3 * p, j]],
                model.basis[[3 * p + 1, j]],
                model.basis[[3 * p + 2, j]],
            ];
            a[(2 * p, j)] = s * (r[0][0] * bp[0] + r[0][1] * bp[1] + r[0][2] * bp[2]);
            a[(2 * p + 1, j)] = s * (r[1][0] * bp[0] + r[1][1] * bp[1] + r[1][2] * bp[2]);
        }
    }
    let mut ata = DMatrix::<f64>::zeros(n, n);
    let mut atb = DVector::<f64>::zeros(n);
    ata.gemm_tr(1.0, &a, &a, 0.0);
    atb.gemv_tr(1.0, &a, &b, 0.0);
    let ridge = 1e-9 * ata.trace().max(1e-12);
    for j in 0..n {
        ata[(j, j)] += ridge;
    }
    if let Some(sol) = ata.lu().solve(&atb) {
        params.shape_coeffs = sol.iter().copied().collect();
    }
}

/// Full Jacobian of the decode with respect to the parameter vector,
/// `(136, n+6)` with columns ordered `[s, w1, w2, w3, tx, ty, q...]`.
fn decode_jacobian(model: &PdmModel, params: &PdmParams) -> DMatrix<f64> {
    let n = model.n();
    let x = model.shape_for(&params.shape_coeffs);
    let r = rotation_from_axis_angles(&params.axis_angles);
    let jac = rotation_jacobian(&params.axis_angles);
    let s = params.scale;
    let mut j = DMatrix::<f64>::zeros(2 * NUM_LANDMARKS, n + 6);
    for p in 0..NUM_LANDMARKS {
        let v = [x[[p, 0]], x[[p, 1]], x[[p, 2]]];
        let rx = r[0][0] * v[0] + r[0][1] * v[1] + r[0][2] * v[2];
        let ry = r[1][0] * v[0] + r[1][1] * v[1] + r[1][2] * v[2];
        j[(2 * p, 0)] = rx;
        j[(2 * p + 1, 0)] = ry;
        for (k, jk) in jac.iter().enumerate() {
            j[(2 * p, 1 + k)] = s * (jk[0][0] * v[0] + jk[0][1] * v[1] + jk[0][2] * v[2]);
            j[(2 * p + 1, 1 + k)] = s * (jk[1][0] * v[0] + jk[1][1] * v[1] + jk[1][2] * v[2]);
        }
        j[(2 * p, 4)] = 1.0;
        j[(2 * p + 1, 5)] = 1.0;
        for c in 0..n {
            let bp = [
                model.basis[[3 * p, c]],
                model.basis[[3 * p + 1, c]],
                model.basis[[3 * p + 2, c]],
            ];
            j[(2 * p, 6 + c)] = s * (r[0][0] * bp[0] + r[0][1] * bp[1] + r[0][2] * bp[2]);
            j[(2 * p + 1, 6 + c)] = s * (r[1][0] * bp[0] + r[1][1] * bp[1] + r[1][2] * bp[2]);
        }
    }
    j
}

fn gauss_newton_step(model: &PdmModel, lmat: &Array2<f64>, params: &mut PdmParams) {
    let n = model.n();
    let dec = model.decode(params).expect("dimensions checked");
    let mut r = DVector::<f64>::zeros(2 * NUM_LANDMARKS);
    for (p, pt) in dec.points().iter().enumerate() {
        r[2 * p] = lmat[[p, 0]] - pt[0];
        r[2 * p + 1] = lmat[[p, 1]] - pt[1];
    }
    let j = decode_jacobian(model, params);
    let mut jtj = DMatrix::<f64>::zeros(n + 6, n + 6);
    let mut jtr = DVector::<f64>::zeros(n + 6);
    jtj.gemm_tr(1.0, &j, &j, 0.0);
    jtr.gemv_tr(1.0, &j, &r, 0.0);
    let damp = 1e-10 * jtj.trace().max(1e-12);
    for k in 0..n + 6 {
        jtj[(k, k)] += damp;
    }
    if let Some(delta) = jtj.lu().solve(&jtr) {
        let mut v = params.to_vec();
        for (pv, d) in v.iter_mut().zip(delta.iter()) {
            *pv += d;
        }
        v[0] = v[0].max(1e-9); // scale stays positive
        *params = PdmParams::from_slice(&v).expect("length preserved");
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// A small synthetic 3-D shape family: scaled/rotated views of a box-ish
    /// template with two non-rigid modes.
    fn synthetic_shapes(count: usize, seed: u64) -> Vec<LandmarkSet> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let template: Vec<[f64; 3]> = (0..NUM_LANDMARKS)
            .map(|i| {
                let a = i as f64 / NUM_LANDMARKS as f64 * std::f64::consts::TAU;
                [a.cos() * 30.0, a.sin() * 20.0, (3.0 * a).sin() * 8.0]
            })
            .collect();
        (0..count)
            .map(|_| {
                let yaw = rng.random_range(-0.8..0.8);
                let roll = rng.random_range(-0.3..0.3);
                let s = rng.random_range(0.8..1.2);
                let t = [rng.random_range(90.0..160.0), rng.random_range(90.0..160.0)];
                let m1 = rng.random_range(-4.0..4.0);
                let m2 = rng.random_range(-3.0..3.0);
                let r = rotation_from_axis_angles(&[0.0, yaw, roll]);
                let pts = template
                    .iter()
                    .enumerate()
                    .map(|(i, p)| {
                        let wob = [
                            p[0] + m1 * (i as f64 / 10.0).sin(),
                            p[1] + m2 * (i as f64 / 7.0).cos(),
                            p[2] + m1 * 0.5 * (i as f64 / 13.0).cos(),
                        ];
                        let v = super::super::rotation::mat_vec(&r, &wob);
                        [s * v[0] + t[0], s * v[1] + t[1]]
                    })
                    .collect();
                LandmarkSet::new(pts).unwrap()
            })
            .collect()
    }

    #[test]
    fn identity_pose_decodes_to_orthographic_mean_projection() {
        let shapes = synthetic_shapes(60, 1);
        let model = fit(&shapes, 4).unwrap();
        let l = model.decode(&PdmParams::identity(4)).unwrap();
        for (p, pt) in l.points().iter().enumerate() {
            assert!((pt[0] - model.mean_shape_3d()[[p, 0]]).abs() < 1e-12);
            assert!((pt[1] - model.mean_shape_3d()[[p, 1]]).abs() < 1e-12);
        }
    }

    #[test]
    fn parameter_vector_length_is_n_plus_six() {
        let p = PdmParams::identity(34);
        assert_eq!(p.len(), 40);
        assert_eq!(p.to_vec().len(), 40);
    }

    #[test]
    fn decode_is_linear_in_shape_coefficients() {
        let shapes = synthetic_shapes(80, 2);
        let model = fit(&shapes, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut base = PdmParams::identity(6);
        base.scale = 1.3;
        base.axis_angles = [0.1, -0.4, 0.2];
        base.translation = [40.0, 50.0];
        let q1: Vec<f64> = (0..6).map(|_| rng.random_range(-3.0..3.0)).collect();
        let q2: Vec<f64> = (0..6).map(|_| rng.random_range(-3.0..3.0)).collect();

        let dec = |q: &[f64]| {
            let mut p = base.clone();
            p.shape_coeffs = q.to_vec();
            model.decode(&p).unwrap().to_flat()
        };
        let sum: Vec<f64> = q1.iter().zip(&q2).map(|(a, b)| a + b).collect();
        let lhs = dec(&sum);
        let l1 = dec(&q1);
        let l0 = dec(&vec![0.0; 6]);
        let l2 = dec(&q2);
        // decode(q1+q2) - decode(q1) == decode(q2) - decode(0)
        for i in 0..lhs.len() {
            assert!(
                ((lhs[i] - l1[i]) - (l2[i] - l0[i])).abs() < 1e-9,
                "index {i}"
            );
        }
    }

    #[test]
    fn basis_is_orthonormal() {
        let shapes = synthetic_shapes(100, 4);
        let model = fit(&shapes, 12).unwrap();
        let gram = model.basis().t().dot(model.basis());
        for i in 0..12 {
            for j in 0..12 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (gram[[i, j]] - want).abs() < 1e-8,
                    "gram[{i},{j}] = {}",
                    gram[[i, j]]
                );
            }
        }
    }

    #[test]
    fn identical_shapes_fit_with_zero_reconstruction_error_at_n_1() {
        let one = synthetic_shapes(1, 5).remove(0);
        let shapes = vec![one.clone(); 10];
        let model = fit(&shapes, 1).unwrap();
        assert!(model.diagnostics.planar_fallback);
        let proj = project(&model, &one);
        assert!(proj.rmse < 1e-6, "rmse {}", proj.rmse);
    }

    #[test]
    fn roundtrip_recovers_in_model_shapes() {
        let shapes = synthetic_shapes(120, 6);
        let model = fit(&shapes, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let p0 = PdmParams {
                scale: rng.random_range(0.7..1.4),
                axis_angles: [
                    rng.random_range(-0.3..0.3),
                    rng.random_range(-0.6..0.6),
                    rng.random_range(-0.3..0.3),
                ],
                translation: [rng.random_range(50.0..200.0), rng.random_range(50.0..200.0)],
                shape_coeffs: (0..8).map(|_| rng.random_range(-2.0..2.0)).collect(),
            };
            let l = model.decode(&p0).unwrap();
            let proj = project(&model, &l);
            let rec = model.decode(&proj.params).unwrap();
            let err = normalized_err(&l, &rec);
            assert!(err < 1e-4, "roundtrip landmark error {err}");
        }
    }

    fn normalized_err(a: &LandmarkSet, b: &LandmarkSet) -> f64 {
        a.points()
            .iter()
            .zip(b.points())
            .map(|(p, q)| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt())
            .fold(0.0, f64::max)
    }

    #[test]
    fn mean_shape_projection_has_small_q_and_unit_scale() {
        let shapes = synthetic_shapes(100, 8);
        let model = fit(&shapes, 6).unwrap();
        let mean2d = model
            .decode(&PdmParams::identity(6))
            .unwrap();
        let proj = project(&model, &mean2d);
        assert!((proj.params.scale - 1.0).abs() < 1e-4, "s = {}", proj.params.scale);
        for &c in &proj.params.shape_coeffs {
            assert!(c.abs() < 1e-4, "q entry {c}");
        }
    }

    #[test]
    fn doubling_about_centroid_doubles_scale_and_preserves_q() {
        let shapes = synthetic_shapes(100, 9);
        let model = fit(&shapes, 6).unwrap();
        let p0 = PdmParams {
            scale: 1.1,
            axis_angles: [0.05, -0.3, 0.1],
            translation: [120.0, 130.0],
            shape_coeffs: vec![1.5, -0.7, 0.3, 0.9, -0.2, 0.4],
        };
        let l = model.decode(&p0).unwrap();
        let c = l.centroid();
        let doubled = l.map(|p| [c[0] + 2.0 * (p[0] - c[0]), c[1] + 2.0 * (p[1] - c[1])]);
        let pa = project(&model, &l);
        let pb = project(&model, &doubled);
        assert!(
            (pb.params.scale / pa.params.scale - 2.0).abs() < 1e-4,
            "scale ratio {}",
            pb.params.scale / pa.params.scale
        );
        for (a, b) in pa.params.shape_coeffs.iter().zip(&pb.params.shape_coeffs) {
            assert!((a - b).abs() < 1e-4, "q changed: {a} vs {b}");
        }
    }

    #[test]
    fn fit_rejects_too_few_shapes() {
        let shapes = synthetic_shapes(5, 10);
        assert!(fit(&shapes, 10).is_err());
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = std::env::temp_dir().join("headgen_pdm_test");
        std::fs::create_dir_all(&dir).unwrap();
        let shapes = synthetic_shapes(60, 11);
        let model = fit(&shapes, 5).unwrap();
        let base = dir.join("pdm");
        model.save(&base).unwrap();
        let loaded = PdmModel::load(&base).unwrap();
        assert_eq!(loaded.n(), 5);
        assert_eq!(loaded.mean_shape_3d(), model.mean_shape_3d());
        assert_eq!(loaded.basis(), model.basis());
        assert_eq!(loaded.mean_params().to_vec(), model.mean_params().to_vec());
    }
}
