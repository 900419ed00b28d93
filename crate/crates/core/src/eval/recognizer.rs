//! Desk-scale person recognizer: a small convolutional feature extractor
//! trained with identity cross-entropy on TRAIN identities, then a linear
//! classifier fit on a gallery/probe split of TEST identities, mirroring the
//! feature-extractor + SVM protocol at small scale.
//!
//! The HEAD region uses features of the resized head rectangle; HEAD_BODY
//! concatenates head-region and full-crop features.

use std::path::Path;

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, Array3, Array4, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use headgen_nn::param::visit_scoped;
use headgen_nn::{Act, Activation, Adam, Conv2d, Linear, Net, Param, TensorArchive};

use crate::error::{CoreError, Result};
use crate::img::RgbImage;

pub const HEAD_INPUT: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RecognizerRegion {
    Head,
    HeadBody,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureNetConfig {
    pub input_size: usize,
    pub channels: Vec<usize>,
    pub feature_dim: usize,
    pub lr: f64,
    pub lr_halve_every: u64,
    pub batch_size: usize,
    pub iterations: u64,
    pub seed: u64,
}

impl FeatureNetConfig {
    pub fn desk(input_size: usize, seed: u64) -> Self {
        FeatureNetConfig {
            input_size,
            channels: vec![12, 24, 48, 64],
            feature_dim: 64,
            lr: 1e-3,
            lr_halve_every: 400,
            batch_size: 32,
            iterations: 500,
            seed,
        }
    }
}

/// Four stride-2 conv blocks, global average pooling, linear features.
#[derive(Debug, Clone)]
pub struct FeatureNet {
    pub config: FeatureNetConfig,
    convs: Vec<Conv2d>,
    acts: Vec<Activation>,
    to_feat: Linear,
    pool_hw: Option<(usize, usize)>,
}

impl FeatureNet {
    pub fn new(cfg: &FeatureNetConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut convs = Vec::new();
        let mut acts = Vec::new();
        let mut prev = 3;
        for &c in &cfg.channels {
            convs.push(Conv2d::new(&mut rng, prev, c, 3, 2, 1));
            acts.push(Activation::new(Act::Relu));
            prev = c;
        }
        FeatureNet {
            to_feat: Linear::new(&mut rng, prev, cfg.feature_dim),
            config: cfg.clone(),
            convs,
            acts,
            pool_hw: None,
        }
    }

    pub fn forward(&mut self, x: &Array4<f64>) -> Array2<f64> {
        let mut h = x.clone();
        for i in 0..self.convs.len() {
            h = self.convs[i].forward(&h);
            h = self.acts[i]
                .forward(&h.into_dyn())
                .into_dimensionality()
                .unwrap();
        }
        let (n, c, hh, ww) = h.dim();
        self.pool_hw = Some((hh, ww));
        let mut pooled = Array2::<f64>::zeros((n, c));
        for i in 0..n {
            for ch in 0..c {
                let mut s = 0.0;
                for y in 0..hh {
                    for xx in 0..ww {
                        s += h[[i, ch, y, xx]];
                    }
                }
                pooled[[i, ch]] = s / (hh * ww) as f64;
            }
        }
        self.to_feat.forward(&pooled)
    }

    pub fn backward_to_input(&mut self, grad: &Array2<f64>) -> Array4<f64> {
        let gp = self.to_feat.backward(grad);
        let (hh, ww) = self.pool_hw.expect("backward before forward");
        let (n, c) = gp.dim();
        let mut g = Array4::<f64>::zeros((n, c, hh, ww));
        let inv = 1.0 / (hh * ww) as f64;
        for i in 0..n {
            for ch in 0..c {
                let v = gp[[i, ch]] * inv;
                for y in 0..hh {
                    for xx in 0..ww {
                        g[[i, ch, y, xx]] = v;
                    }
                }
            }
        }
        for i in (0..self.convs.len()).rev() {
            g = self.acts[i]
                .backward(&g.into_dyn())
                .into_dimensionality()
                .unwrap();
            g = self.convs[i].backward(&g);
        }
        g
    }
}

impl Net for FeatureNet {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        for (i, c) in self.convs.iter_mut().enumerate() {
            visit_scoped(c, &format!("conv{i}"), f);
        }
        visit_scoped(&mut self.to_feat, "to_feat", f);
    }
}

struct WithHead {
    net: FeatureNet,
    head: Linear,
}

impl Net for WithHead {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        visit_scoped(&mut self.net, "net", f);
        visit_scoped(&mut self.head, "softmax", f);
    }
}

/// Train the extractor with a softmax identity head on TRAIN identities; the
/// head is discarded, the features remain.
pub fn train_feature_net(
    images: &[Array3<f64>],
    labels: &[usize],
    num_classes: usize,
    cfg: &FeatureNetConfig,
) -> Result<FeatureNet> {
    if images.len() != labels.len() || images.is_empty() {
        return Err(CoreError::InvalidInput(
            "feature training needs matching, non-empty images and labels".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xfea7);
    let mut model = WithHead {
        net: FeatureNet::new(cfg),
        head: Linear::new(&mut rng, cfg.feature_dim, num_classes),
    };
    let mut adam = Adam::default();
    let s = cfg.input_size;
    for it in 0..cfg.iterations {
        let mut brng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xbac0 ^ it.wrapping_mul(0x9e37));
        let idx: Vec<usize> = (0..cfg.batch_size)
            .map(|_| brng.random_range(0..images.len()))
            .collect();
        let mut x = Array4::<f64>::zeros((idx.len(), 3, s, s));
        for (b, &i) in idx.iter().enumerate() {
            x.index_axis_mut(Axis(0), b).assign(&images[i]);
        }
        let feats = model.net.forward(&x);
        let logits = model.head.forward(&feats);
        let (loss, dlogits) = softmax_ce(&logits, &idx.iter().map(|&i| labels[i]).collect::<Vec<_>>());
        if !loss.is_finite() {
            return Err(CoreError::Diverged {
                iteration: it,
                what: format!("recognizer feature loss became {loss}"),
            });
        }
        model.zero_grad();
        let gfeat = model.head.backward(&dlogits);
        model.net.backward_to_input(&gfeat);
        let lr = headgen_nn::adam::halving_lr(cfg.lr, it, cfg.lr_halve_every);
        adam.step(&mut model, lr);
    }
    Ok(model.net)
}

fn softmax_ce(logits: &Array2<f64>, labels: &[usize]) -> (f64, Array2<f64>) {
    let n = logits.nrows();
    let mut grad = Array2::<f64>::zeros(logits.raw_dim());
    let mut loss = 0.0;
    for i in 0..n {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::MIN, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        for (k, e) in exps.iter().enumerate() {
            let p = e / sum;
            grad[[i, k]] = (p - if k == labels[i] { 1.0 } else { 0.0 }) / n as f64;
        }
        loss -= (exps[labels[i]] / sum).max(1e-300).ln() / n as f64;
    }
    (loss, grad)
}

/// Bilinear resize of an axis-aligned region into a square chip.
pub fn resize_region(img: &Array3<f64>, rect: [usize; 4], out: usize) -> Array3<f64> {
    let (_, h, w) = img.dim();
    let [rx, ry, rw, rh] = rect;
    let mut chip = Array3::<f64>::zeros((3, out, out));
    for oy in 0..out {
        for ox in 0..out {
            let sx = (rx as f64 + (ox as f64 + 0.5) / out as f64 * rw.max(1) as f64 - 0.5)
                .clamp(0.0, (w - 1) as f64);
            let sy = (ry as f64 + (oy as f64 + 0.5) / out as f64 * rh.max(1) as f64 - 0.5)
                .clamp(0.0, (h - 1) as f64);
            let x0 = sx.floor() as usize;
            let y0 = sy.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let y1 = (y0 + 1).min(h - 1);
            let fx = sx - x0 as f64;
            let fy = sy - y0 as f64;
            for ch in 0..3 {
                chip[[ch, oy, ox]] = img[[ch, y0, x0]] * (1.0 - fx) * (1.0 - fy)
                    + img[[ch, y0, x1]] * fx * (1.0 - fy)
                    + img[[ch, y1, x0]] * (1.0 - fx) * fy
                    + img[[ch, y1, x1]] * fx * fy;
            }
        }
    }
    chip
}

/// Transpose of [`resize_region`]: splat chip gradients back onto the full
/// image grid.
pub fn resize_region_backward(
    grad: &Array3<f64>,
    rect: [usize; 4],
    h: usize,
    w: usize,
) -> Array3<f64> {
    let [rx, ry, rw, rh] = rect;
    let out = grad.dim().1;
    let mut g = Array3::<f64>::zeros((3, h, w));
    for oy in 0..out {
        for ox in 0..out {
            let sx = (rx as f64 + (ox as f64 + 0.5) / out as f64 * rw.max(1) as f64 - 0.5)
                .clamp(0.0, (w - 1) as f64);
            let sy = (ry as f64 + (oy as f64 + 0.5) / out as f64 * rh.max(1) as f64 - 0.5)
                .clamp(0.0, (h - 1) as f64);
            let x0 = sx.floor() as usize;
            let y0 = sy.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let y1 = (y0 + 1).min(h - 1);
            let fx = sx - x0 as f64;
            let fy = sy - y0 as f64;
            for ch in 0..3 {
                let gv = grad[[ch, oy, ox]];
                g[[ch, y0, x0]] += gv * (1.0 - fx) * (1.0 - fy);
                g[[ch, y0, x1]] += gv * fx * (1.0 - fy);
                g[[ch, y1, x0]] += gv * (1.0 - fx) * fy;
                g[[ch, y1, x1]] += gv * fx * fy;
            }
        }
    }
    g
}

/// One probe or gallery item: a processed image plus the head rectangle (in
/// the same crop coordinates) and the true identity.
pub struct RecogSample {
    pub image: RgbImage,
    pub head_rect: [usize; 4],
    pub identity: u32,
}

/// Feature extractor(s) plus the linear identity classifier over TEST
/// identities.
pub struct Recognizer {
    pub region: RecognizerRegion,
    pub head_net: FeatureNet,
    pub body_net: Option<FeatureNet>,
    /// (num_classes, feature_dim + 1), last column is the bias.
    pub classifier: Array2<f64>,
    pub classes: Vec<u32>,
    pub chance: f64,
}

impl Recognizer {
    pub fn feature_dim(&self) -> usize {
        self.head_net.config.feature_dim
            + self
                .body_net
                .as_ref()
                .map(|b| b.config.feature_dim)
                .unwrap_or(0)
    }

    /// Region features of one sample (head chip features, plus full-crop
    /// features for HEAD_BODY).
    pub fn features(&mut self, sample: &RecogSample) -> Array1<f64> {
        let chip = resize_region(sample.image.data(), sample.head_rect, HEAD_INPUT);
        let mut x = Array4::<f64>::zeros((1, 3, HEAD_INPUT, HEAD_INPUT));
        x.index_axis_mut(Axis(0), 0).assign(&chip);
        let hf = self.head_net.forward(&x);
        let mut feats: Vec<f64> = hf.row(0).iter().copied().collect();
        if let Some(body) = self.body_net.as_mut() {
            let s = sample.image.width();
            let mut xb = Array4::<f64>::zeros((1, 3, s, s));
            xb.index_axis_mut(Axis(0), 0).assign(sample.image.data());
            let bf = body.forward(&xb);
            feats.extend(bf.row(0).iter().copied());
        }
        Array1::from_vec(feats)
    }

    /// Fit the linear identity classifier on gallery samples (ridge
    /// regression to one-hot targets).
    pub fn fit_classifier(&mut self, gallery: &[RecogSample]) -> Result<()> {
        if gallery.is_empty() {
            return Err(CoreError::InvalidInput("empty gallery".into()));
        }
        let mut classes: Vec<u32> = gallery.iter().map(|g| g.identity).collect();
        classes.sort_unstable();
        classes.dedup();
        let k = classes.len();
        let fdim = self.feature_dim();
        let n = gallery.len();
        let mut x = DMatrix::<f64>::zeros(n, fdim + 1);
        let mut y = DMatrix::<f64>::zeros(n, k);
        for (i, g) in gallery.iter().enumerate() {
            let f = self.features(g);
            for (j, v) in f.iter().enumerate() {
                x[(i, j)] = *v;
            }
            x[(i, fdim)] = 1.0;
            let cls = classes.binary_search(&g.identity).expect("class present");
            y[(i, cls)] = 1.0;
        }
        let mut xtx = x.transpose() * &x;
        let ridge = 1e-4 * xtx.trace().max(1e-12) / (fdim + 1) as f64;
        for d in 0..fdim + 1 {
            xtx[(d, d)] += ridge;
        }
        let xty = x.transpose() * &y;
        let w = xtx
            .lu()
            .solve(&xty)
            .ok_or_else(|| CoreError::InvalidInput("classifier solve failed".into()))?;
        let mut classifier = Array2::<f64>::zeros((k, fdim + 1));
        for c in 0..k {
            for d in 0..fdim + 1 {
                classifier[[c, d]] = w[(d, c)];
            }
        }
        self.classifier = classifier;
        self.classes = classes;
        self.chance = 1.0 / k as f64;
        Ok(())
    }

    /// Class scores for a sample.
    pub fn scores(&mut self, sample: &RecogSample) -> Array1<f64> {
        let f = self.features(sample);
        let k = self.classifier.nrows();
        let fdim = self.feature_dim();
        let mut out = Array1::<f64>::zeros(k);
        for c in 0..k {
            let mut s = self.classifier[[c, fdim]];
            for d in 0..fdim {
                s += self.classifier[[c, d]] * f[d];
            }
            out[c] = s;
        }
        out
    }

    pub fn predict(&mut self, sample: &RecogSample) -> (u32, usize) {
        let scores = self.scores(sample);
        let mut best = 0;
        for c in 1..scores.len() {
            if scores[c] > scores[best] {
                best = c;
            }
        }
        (self.classes[best], best)
    }
}

/// Top-1 accuracy over probes.
pub fn recognition_rate(rec: &mut Recognizer, probes: &[RecogSample]) -> Result<f64> {
    if probes.is_empty() {
        return Err(CoreError::InvalidInput("empty probe set".into()));
    }
    let hits = probes
        .iter()
        .filter(|p| rec.predict(p).0 == p.identity)
        .count();
    Ok(hits as f64 / probes.len() as f64)
}

pub fn save_recognizer(rec: &mut Recognizer, base: &Path) -> Result<()> {
    let mut arc = TensorArchive::new();
    arc.store_net("head_net", &mut rec.head_net);
    if let Some(body) = rec.body_net.as_mut() {
        arc.store_net("body_net", body);
    }
    arc.insert("classifier", rec.classifier.clone().into_dyn());
    arc.insert(
        "classes",
        Array1::from_vec(rec.classes.iter().map(|&c| c as f64).collect()).into_dyn(),
    );
    arc.save(&base.with_extension("ntar"))?;
    let manifest = serde_json::json!({
        "region": rec.region,
        "head_config": rec.head_net.config,
        "body_config": rec.body_net.as_ref().map(|b| &b.config),
        "chance": rec.chance,
    });
    let path = base.with_extension("json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest).unwrap())
        .map_err(|e| CoreError::io(&path, e))?;
    Ok(())
}

pub fn load_recognizer(base: &Path) -> Result<Recognizer> {
    let path = base.with_extension("json");
    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(&path).map_err(|e| CoreError::io(&path, e))?,
    )
    .map_err(|e| CoreError::json(&path, e))?;
    let region: RecognizerRegion = serde_json::from_value(manifest["region"].clone())
        .map_err(|e| CoreError::json(&path, e))?;
    let head_config: FeatureNetConfig = serde_json::from_value(manifest["head_config"].clone())
        .map_err(|e| CoreError::json(&path, e))?;
    let body_config: Option<FeatureNetConfig> =
        serde_json::from_value(manifest["body_config"].clone())
            .map_err(|e| CoreError::json(&path, e))?;
    let arc = TensorArchive::load(&base.with_extension("ntar"))?;
    let mut head_net = FeatureNet::new(&head_config);
    arc.load_net("head_net", &mut head_net)?;
    let body_net = match body_config {
        Some(cfg) => {
            let mut b = FeatureNet::new(&cfg);
            arc.load_net("body_net", &mut b)?;
            Some(b)
        }
        None => None,
    };
    let classifier = arc
        .get("classifier")?
        .clone()
        .into_dimensionality::<ndarray::Ix2>()
        .map_err(|e| CoreError::InvalidInput(format!("bad classifier: {e}")))?;
    let classes: Vec<u32> = arc.get("classes")?.iter().map(|&v| v as u32).collect();
    Ok(Recognizer {
        region,
        head_net,
        body_net,
        classifier,
        chance: manifest["chance"].as_f64().unwrap_or(f64::NAN),
        classes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_ce_gradient_matches_finite_differences() {
        let logits = Array2::from_shape_vec((2, 3), vec![0.3, -0.2, 0.9, 0.1, 0.4, -0.6]).unwrap();
        let labels = vec![2usize, 0];
        let (_, grad) = softmax_ce(&logits, &labels);
        let h = 1e-6;
        for i in 0..2 {
            for k in 0..3 {
                let mut lp = logits.clone();
                lp[[i, k]] += h;
                let (fp, _) = softmax_ce(&lp, &labels);
                let mut lm = logits.clone();
                lm[[i, k]] -= h;
                let (fm, _) = softmax_ce(&lm, &labels);
                let num = (fp - fm) / (2.0 * h);
                assert!((grad[[i, k]] - num).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn region_resize_roundtrip_adjoint_identity() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let img = Array3::from_shape_fn((3, 20, 20), |_| rng.random_range(0.0..1.0));
        let rect = [4usize, 5, 9, 8];
        let chip = resize_region(&img, rect, 8);
        let gout = Array3::from_shape_fn((3, 8, 8), |_| rng.random_range(-1.0..1.0));
        let gin = resize_region_backward(&gout, rect, 20, 20);
        // adjoint identity <Ax, g> == <x, A^T g>
        let lhs: f64 = chip.iter().zip(gout.iter()).map(|(a, b)| a * b).sum();
        let rhs: f64 = img.iter().zip(gin.iter()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn perfect_classifier_scores_one() {
        // Craft a recognizer whose features trivially separate two classes
        // by average color.
        let cfg = FeatureNetConfig {
            iterations: 60,
            batch_size: 8,
            ..FeatureNetConfig::desk(HEAD_INPUT, 3)
        };
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for i in 0..16 {
            let v = if i % 2 == 0 { 0.9 } else { 0.1 };
            images.push(Array3::from_elem((3, HEAD_INPUT, HEAD_INPUT), v));
            labels.push(i % 2);
        }
        let net = train_feature_net(&images, &labels, 2, &cfg).unwrap();
        let mut rec = Recognizer {
            region: RecognizerRegion::Head,
            head_net: net,
            body_net: None,
            classifier: Array2::zeros((0, 0)),
            classes: vec![],
            chance: 0.0,
        };
        let samples: Vec<RecogSample> = (0..8)
            .map(|i| {
                let v = if i % 2 == 0 { 0.9 } else { 0.1 };
                let mut img = RgbImage::new(HEAD_INPUT, HEAD_INPUT);
                for y in 0..HEAD_INPUT {
                    for x in 0..HEAD_INPUT {
                        img.set(x, y, [v, v, v]);
                    }
                }
                RecogSample {
                    image: img,
                    head_rect: [0, 0, HEAD_INPUT, HEAD_INPUT],
                    identity: (i % 2) as u32,
                }
            })
            .collect();
        rec.fit_classifier(&samples).unwrap();
        assert_eq!(recognition_rate(&mut rec, &samples).unwrap(), 1.0);
        assert_eq!(rec.chance, 0.5);
    }

    #[test]
    fn empty_probe_set_is_an_error() {
        let cfg = FeatureNetConfig::desk(HEAD_INPUT, 1);
        let mut rec = Recognizer {
            region: RecognizerRegion::Head,
            head_net: FeatureNet::new(&cfg),
            body_net: None,
            classifier: Array2::zeros((2, 65)),
            classes: vec![0, 1],
            chance: 0.5,
        };
        assert!(recognition_rate(&mut rec, &[]).is_err());
    }
}
