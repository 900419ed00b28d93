//! Stage II: landmark-conditioned head inpainting. The U-Net generator
//! consumes the obfuscated crop concatenated with the 68 landmark heatmap
//! channels, outputs a full frame, and only the head-mask region of that
//! frame survives compositing. The discriminator judges whole composited
//! frames against originals.

pub mod unet;

use std::path::Path;

use ndarray::{Array2, Array3, Array4, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use headgen_nn::{log_prob, Adam, Net, TensorArchive, PROB_EPS};

use crate::dataset::{body_crop, obfuscate_head, BodyCrop, ObfuscationMode, PersonInstance, Split};
use crate::error::{CoreError, Result};
use crate::img::RgbImage;
use crate::landmark::{heatmap, LandmarkSet, NUM_LANDMARKS};
use crate::lmgan::{LmganBundle, TrainLog};

pub use crate::dataset::composite_head;
pub use unet::{HeadDiscriminator, UNet};

/// Where the conditioning landmarks come from during training and inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LandmarkSource {
    /// Ground-truth (stands in for detector output on synthetic data).
    Detected,
    /// Produced by a trained stage-I generator.
    Generated,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InpainterConfig {
    pub input_size: usize,
    pub input_mode: ObfuscationMode,
    /// The black region already encodes the mask; the extra channel is off
    /// by default but available.
    pub include_mask_channel: bool,
    pub gen_channels: Vec<usize>,
    pub disc_channels: Vec<usize>,
    pub lambda_h: f64,
    pub lr: f64,
    pub lr_halve_every: u64,
    pub batch_size: usize,
    pub iterations: u64,
    pub g_steps_per_iter: u32,
    pub d_steps_per_iter: u32,
    pub heatmap_sigma: f64,
    pub landmark_source: LandmarkSource,
    pub seed: u64,
    pub log_every: u64,
    pub checkpoint_every: u64,
}

impl InpainterConfig {
    /// Paper-scale profile at S = 256 (batch 6, 13000 iterations, lr 2e-5
    /// halving every 5000, 5:1 updates; U-Net depth log2(S) - 2 = 6).
    pub fn paper(input_mode: ObfuscationMode) -> Self {
        InpainterConfig {
            input_size: 256,
            input_mode,
            include_mask_channel: false,
            gen_channels: vec![64, 128, 256, 256, 512, 512],
            disc_channels: vec![64, 128, 256, 256],
            lambda_h: 50.0,
            lr: 2e-5,
            lr_halve_every: 5_000,
            batch_size: 6,
            iterations: 13_000,
            g_steps_per_iter: 5,
            d_steps_per_iter: 1,
            heatmap_sigma: heatmap::default_sigma(256),
            landmark_source: LandmarkSource::Detected,
            seed: 0,
            log_every: 100,
            checkpoint_every: 1_000,
        }
    }

    /// Desk-scale profile at S = 64 (depth log2(64) - 2 = 4).
    pub fn desk(input_mode: ObfuscationMode) -> Self {
        InpainterConfig {
            input_size: 64,
            input_mode,
            include_mask_channel: false,
            gen_channels: vec![16, 32, 64, 64],
            disc_channels: vec![12, 24, 48, 48],
            lambda_h: 50.0,
            lr: 5e-4,
            lr_halve_every: 1_500,
            batch_size: 6,
            iterations: 300,
            g_steps_per_iter: 5,
            d_steps_per_iter: 1,
            heatmap_sigma: 1.5,
            landmark_source: LandmarkSource::Detected,
            seed: 0,
            log_every: 25,
            checkpoint_every: 0,
        }
    }

    pub fn in_channels(&self) -> usize {
        3 + NUM_LANDMARKS + usize::from(self.include_mask_channel)
    }
}

/// Assemble the generator input: obfuscated RGB, 68 heatmap channels, and
/// optionally the head mask.
pub fn inpaint_input(
    crop: &BodyCrop,
    landmarks: &LandmarkSet,
    cfg: &InpainterConfig,
) -> Array3<f64> {
    let s = crop.size();
    let mut x = Array3::<f64>::zeros((cfg.in_channels(), s, s));
    x.slice_mut(ndarray::s![0..3, .., ..]).assign(crop.image.data());
    let maps = heatmap::render(landmarks, s, cfg.heatmap_sigma);
    x.slice_mut(ndarray::s![3..3 + NUM_LANDMARKS, .., ..])
        .assign(&maps);
    if cfg.include_mask_channel {
        for ((y, xx), &m) in crop.head_mask.indexed_iter() {
            x[[3 + NUM_LANDMARKS, y, xx]] = m as f64;
        }
    }
    x
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Discriminator objective `E[log D(real)] + E[log(1 - D(fake))]` on whole
/// composited frames.
pub fn d_h_loss(
    d: &mut HeadDiscriminator,
    real: &Array4<f64>,
    fake_composited: &Array4<f64>,
) -> f64 {
    let pr = d.forward(real);
    let pf = d.forward(fake_composited);
    crate::lmgan::adversarial_d_value(&pr, &pf)
}

/// Generator objective value: non-saturating adversarial term on the
/// composited fake plus `lambda * mean |generated - original|` over all
/// pixels and channels.
pub fn g_h_value(
    p_fake: &Array2<f64>,
    generated: &Array4<f64>,
    original: &Array4<f64>,
    lambda: f64,
) -> f64 {
    assert!(p_fake.iter().all(|&p| (0.0..=1.0).contains(&p)));
    assert!(lambda >= 0.0);
    let adv = p_fake.iter().map(|&p| -log_prob(p)).sum::<f64>() / p_fake.len() as f64;
    let l1 = generated
        .iter()
        .zip(original.iter())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / generated.len() as f64;
    adv + lambda * l1
}

/// Run the discriminator on the composited fakes and return the generator
/// loss value.
pub fn g_h_loss(
    d: &mut HeadDiscriminator,
    composited: &Array4<f64>,
    generated: &Array4<f64>,
    original: &Array4<f64>,
    lambda: f64,
) -> f64 {
    let p = d.forward(composited);
    g_h_value(&p, generated, original, lambda)
}

/// Generator loss plus its gradient with respect to the raw generator
/// output. The adversarial part flows through the composite (mask-gated);
/// the L1 part is dense.
pub fn g_h_loss_with_grad(
    d: &mut HeadDiscriminator,
    composited: &Array4<f64>,
    generated: &Array4<f64>,
    original: &Array4<f64>,
    masks: &[ndarray::Array2<u8>],
    lambda: f64,
) -> (f64, Array4<f64>) {
    let p = d.forward(composited);
    let value = g_h_value(&p, generated, original, lambda);
    let nb = p.len() as f64;
    let dprob = p.mapv(|v| -1.0 / v.clamp(PROB_EPS, 1.0 - PROB_EPS) / nb);
    let dcomp = d.backward_to_input(&dprob);
    let mut grad = Array4::<f64>::zeros(generated.raw_dim());
    let inv_n = lambda / generated.len() as f64;
    let (n, c, h, w) = generated.dim();
    for i in 0..n {
        let mask = &masks[i];
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let mut g = 0.0;
                    if mask[[y, x]] != 0 {
                        g += dcomp[[i, ch, y, x]];
                    }
                    let diff = generated[[i, ch, y, x]] - original[[i, ch, y, x]];
                    g += inv_n * diff.signum();
                    grad[[i, ch, y, x]] = g;
                }
            }
        }
    }
    (value, grad)
}

// ---------------------------------------------------------------------------
// Training data
// ---------------------------------------------------------------------------

pub struct InpaintSample {
    pub obf: BodyCrop,
    pub landmarks: LandmarkSet,
    pub original: Array3<f64>,
}

pub struct InpaintData {
    pub samples: Vec<InpaintSample>,
    pub train_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
    pub size: usize,
}

/// Build (obfuscated crop, landmarks, original) triples for one split. With
/// `LandmarkSource::Generated` a trained stage-I bundle supplies the
/// conditioning landmarks.
pub fn prepare_inpaint_data(
    instances: &[PersonInstance],
    split: Split,
    cfg: &InpainterConfig,
    lmgen: Option<&mut LmganBundle>,
) -> Result<InpaintData> {
    let mut data = InpaintData {
        samples: Vec::new(),
        train_idx: Vec::new(),
        val_idx: Vec::new(),
        size: cfg.input_size,
    };
    let mut lmgen = lmgen;
    for inst in instances.iter().filter(|i| i.split == split) {
        let crop = body_crop(inst, cfg.input_size)?;
        let obf = obfuscate_head(&crop, cfg.input_mode)?;
        let landmarks = match (cfg.landmark_source, lmgen.as_deref_mut()) {
            (LandmarkSource::Detected, _) => match &crop.landmarks {
                Some(l) => l.clone(),
                None => continue,
            },
            (LandmarkSource::Generated, Some(bundle)) => {
                crate::lmgan::generate_landmarks(bundle, &obf)?
            }
            (LandmarkSource::Generated, None) => {
                return Err(CoreError::MissingArtifact {
                    name: "landmark generator".into(),
                    hint: "landmark_source=generated needs a stage-I checkpoint".into(),
                })
            }
        };
        data.samples.push(InpaintSample {
            original: crop.image.data().clone(),
            obf,
            landmarks,
        });
    }
    if data.samples.is_empty() {
        return Err(CoreError::InvalidInput(
            "no usable instances in the requested split".into(),
        ));
    }
    for i in 0..data.samples.len() {
        if i % 20 == 19 {
            data.val_idx.push(i);
        } else {
            data.train_idx.push(i);
        }
    }
    if data.val_idx.is_empty() {
        data.val_idx.push(0);
    }
    Ok(data)
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

pub struct InpaintBundle {
    pub config: InpainterConfig,
    pub generator: UNet,
    pub discriminator: HeadDiscriminator,
    pub adam_g: Adam,
    pub adam_d: Adam,
    pub iteration: u64,
    pub final_l1: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InpaintManifest {
    pub config: InpainterConfig,
    pub config_hash: String,
    pub iteration: u64,
    pub landmark_source: LandmarkSource,
    pub final_l1: Option<f64>,
}

const G_STREAM: u64 = 0x4847;
const D_STREAM: u64 = 0x4844;

fn batch_indices(seed: u64, tag: u64, iter: u64, step: u32, pool: &[usize], k: usize) -> Vec<usize> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(
        seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15)
            ^ iter.wrapping_mul(0x2545_f491_4f6c_dd1d)
            ^ (step as u64).wrapping_mul(0x6a09_e667),
    );
    (0..k).map(|_| pool[rng.random_range(0..pool.len())]).collect()
}

struct Batch {
    input: Array4<f64>,
    original: Array4<f64>,
    obf_rgb: Array4<f64>,
    masks: Vec<ndarray::Array2<u8>>,
}

fn gather_batch(data: &InpaintData, cfg: &InpainterConfig, idx: &[usize]) -> Batch {
    let s = data.size;
    let mut input = Array4::<f64>::zeros((idx.len(), cfg.in_channels(), s, s));
    let mut original = Array4::<f64>::zeros((idx.len(), 3, s, s));
    let mut obf_rgb = Array4::<f64>::zeros((idx.len(), 3, s, s));
    let mut masks = Vec::with_capacity(idx.len());
    for (b, &i) in idx.iter().enumerate() {
        let sample = &data.samples[i];
        input
            .index_axis_mut(Axis(0), b)
            .assign(&inpaint_input(&sample.obf, &sample.landmarks, cfg));
        original.index_axis_mut(Axis(0), b).assign(&sample.original);
        obf_rgb
            .index_axis_mut(Axis(0), b)
            .assign(sample.obf.image.data());
        masks.push(sample.obf.head_mask.clone());
    }
    Batch {
        input,
        original,
        obf_rgb,
        masks,
    }
}

/// Composite generated frames into the obfuscated crops (mask region from
/// the generator, everything else from the crop), batched.
fn composite_batch(generated: &Array4<f64>, obf_rgb: &Array4<f64>, masks: &[ndarray::Array2<u8>]) -> Array4<f64> {
    let mut out = obf_rgb.clone();
    let (n, c, h, w) = generated.dim();
    for i in 0..n {
        for ((y, x), &m) in masks[i].indexed_iter() {
            if m != 0 {
                for ch in 0..c {
                    out[[i, ch, y, x]] = generated[[i, ch, y, x]];
                }
            }
        }
    }
    let _ = (h, w);
    out
}

/// Mean absolute pixel error of the generator on the validation indices.
pub fn validation_l1(bundle: &mut InpaintBundle, data: &InpaintData) -> f64 {
    let cfg = bundle.config.clone();
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in data.val_idx.chunks(cfg.batch_size.max(1)) {
        let batch = gather_batch(data, &cfg, chunk);
        let gen = bundle.generator.forward(&batch.input);
        total += gen
            .iter()
            .zip(batch.original.iter())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>();
        count += gen.len();
    }
    total / count as f64
}

/// Alternating 5:1 adversarial training of the inpainter.
pub fn train_inpainter(
    data: &InpaintData,
    cfg: &InpainterConfig,
    resume: Option<InpaintBundle>,
    checkpoint_dir: Option<&Path>,
) -> Result<(InpaintBundle, TrainLog)> {
    let mut bundle = match resume {
        Some(b) => b,
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x1199);
            let generator = UNet::new(&mut rng, cfg.in_channels(), &cfg.gen_channels);
            let discriminator =
                HeadDiscriminator::new(&mut rng, cfg.input_size, &cfg.disc_channels);
            InpaintBundle {
                config: cfg.clone(),
                generator,
                discriminator,
                adam_g: Adam::default(),
                adam_d: Adam::default(),
                iteration: 0,
                final_l1: None,
            }
        }
    };
    let mut log = TrainLog::default();
    let start = bundle.iteration;
    for it in start..cfg.iterations {
        let lr = headgen_nn::adam::halving_lr(cfg.lr, it, cfg.lr_halve_every);
        let mut g_loss = f64::NAN;
        for gs in 0..cfg.g_steps_per_iter {
            let idx = batch_indices(cfg.seed, G_STREAM, it, gs, &data.train_idx, cfg.batch_size);
            let batch = gather_batch(data, cfg, &idx);
            let gen = bundle.generator.forward(&batch.input);
            let comp = composite_batch(&gen, &batch.obf_rgb, &batch.masks);
            bundle.discriminator.zero_grad();
            let (value, grad) = g_h_loss_with_grad(
                &mut bundle.discriminator,
                &comp,
                &gen,
                &batch.original,
                &batch.masks,
                cfg.lambda_h,
            );
            g_loss = value;
            if !value.is_finite() {
                return Err(CoreError::Diverged {
                    iteration: it,
                    what: format!("inpainter generator loss became {value}"),
                });
            }
            bundle.generator.zero_grad();
            bundle.generator.backward(&grad);
            bundle.adam_g.step(&mut bundle.generator, lr);
        }
        let mut d_loss = f64::NAN;
        for ds in 0..cfg.d_steps_per_iter {
            let idx = batch_indices(cfg.seed, D_STREAM, it, ds, &data.train_idx, cfg.batch_size);
            let batch = gather_batch(data, cfg, &idx);
            let gen = bundle.generator.forward(&batch.input);
            let comp = composite_batch(&gen, &batch.obf_rgb, &batch.masks);
            bundle.discriminator.zero_grad();
            let n = cfg.batch_size as f64;
            let p_real = bundle.discriminator.forward(&batch.original);
            let gr = p_real.mapv(|p| -1.0 / p.clamp(PROB_EPS, 1.0 - PROB_EPS) / n);
            bundle.discriminator.backward_to_input(&gr);
            let p_fake = bundle.discriminator.forward(&comp);
            let gf = p_fake.mapv(|p| 1.0 / (1.0 - p).clamp(PROB_EPS, 1.0 - PROB_EPS) / n);
            bundle.discriminator.backward_to_input(&gf);
            d_loss = crate::lmgan::adversarial_d_value(&p_real, &p_fake);
            if !d_loss.is_finite() {
                return Err(CoreError::Diverged {
                    iteration: it,
                    what: format!("inpainter discriminator loss became {d_loss}"),
                });
            }
            bundle.adam_d.step(&mut bundle.discriminator, lr);
        }
        bundle.iteration = it + 1;
        if cfg.log_every > 0 && (it + 1) % cfg.log_every == 0 {
            let val = validation_l1(&mut bundle, data);
            log.rows.push(crate::lmgan::LogRow {
                iteration: it + 1,
                d_loss,
                g_loss,
                val_norm_l2: val,
            });
        }
        if cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0 {
            if let Some(dir) = checkpoint_dir {
                save_bundle(&mut bundle, &dir.join(format!("inpaint_iter{:06}", it + 1)))?;
            }
        }
    }
    bundle.final_l1 = Some(validation_l1(&mut bundle, data));
    Ok((bundle, log))
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct InpaintResult {
    /// Raw generator output over the full frame.
    pub raw: RgbImage,
    /// Head region from the generator, everything else from the crop.
    pub composited: RgbImage,
    /// Fraction of conditioning landmarks inside the head mask; wildly
    /// off-mask landmark sets are still processed but flagged.
    pub landmarks_in_mask: f64,
}

impl InpaintResult {
    pub fn landmarks_flagged(&self) -> bool {
        self.landmarks_in_mask < 0.5
    }
}

/// Landmark-conditioned inpainting of one crop. Deterministic for fixed
/// weights and input.
pub fn inpaint(
    bundle: &mut InpaintBundle,
    crop: &BodyCrop,
    landmarks: &LandmarkSet,
) -> Result<InpaintResult> {
    if crop.mode == ObfuscationMode::Original {
        return Err(CoreError::InvalidInput(
            "inpainting expects an obfuscated crop (BLACK or BLUR)".into(),
        ));
    }
    let s = crop.size();
    if s != bundle.config.input_size {
        return Err(CoreError::InvalidInput(format!(
            "crop size {s} does not match the inpainter's input size {}",
            bundle.config.input_size
        )));
    }
    let cfg = bundle.config.clone();
    let mut x = Array4::<f64>::zeros((1, cfg.in_channels(), s, s));
    x.index_axis_mut(Axis(0), 0)
        .assign(&inpaint_input(crop, landmarks, &cfg));
    let gen = bundle.generator.forward(&x);
    let raw = RgbImage::from_array(gen.index_axis(Axis(0), 0).to_owned());
    let composited = composite_head(&raw, crop);
    let inside = landmarks
        .points()
        .iter()
        .filter(|p| {
            let x = p[0].round() as i64;
            let y = p[1].round() as i64;
            x >= 0
                && y >= 0
                && (x as usize) < s
                && (y as usize) < s
                && crop.head_mask[[y as usize, x as usize]] != 0
        })
        .count() as f64
        / NUM_LANDMARKS as f64;
    Ok(InpaintResult {
        raw,
        composited,
        landmarks_in_mask: inside,
    })
}

pub fn save_bundle(bundle: &mut InpaintBundle, base: &Path) -> Result<()> {
    let mut arc = TensorArchive::new();
    arc.store_net("g", &mut bundle.generator);
    arc.store_net("d", &mut bundle.discriminator);
    arc.insert_scalar("adam_g.t", bundle.adam_g.t as f64);
    arc.insert_scalar("adam_d.t", bundle.adam_d.t as f64);
    arc.insert_scalar("iteration", bundle.iteration as f64);
    arc.save(&base.with_extension("ntar"))?;
    let cfg_json = serde_json::to_string(&bundle.config).expect("config serializes");
    let manifest = InpaintManifest {
        config: bundle.config.clone(),
        config_hash: crate::artifact::sha256_hex(cfg_json.as_bytes()),
        iteration: bundle.iteration,
        landmark_source: bundle.config.landmark_source,
        final_l1: bundle.final_l1,
    };
    let path = base.with_extension("json");
    std::fs::write(
        &path,
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )
    .map_err(|e| CoreError::io(&path, e))?;
    Ok(())
}

pub fn load_bundle(base: &Path) -> Result<InpaintBundle> {
    let path = base.with_extension("json");
    let manifest: InpaintManifest = serde_json::from_str(
        &std::fs::read_to_string(&path).map_err(|e| CoreError::io(&path, e))?,
    )
    .map_err(|e| CoreError::json(&path, e))?;
    let cfg = manifest.config;
    let arc = TensorArchive::load(&base.with_extension("ntar"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x1199);
    let mut generator = UNet::new(&mut rng, cfg.in_channels(), &cfg.gen_channels);
    let mut discriminator = HeadDiscriminator::new(&mut rng, cfg.input_size, &cfg.disc_channels);
    arc.load_net("g", &mut generator)?;
    arc.load_net("d", &mut discriminator)?;
    Ok(InpaintBundle {
        adam_g: Adam {
            t: arc.get_scalar("adam_g.t")? as u64,
            ..Adam::default()
        },
        adam_d: Adam {
            t: arc.get_scalar("adam_d.t")? as u64,
            ..Adam::default()
        },
        iteration: arc.get_scalar("iteration")? as u64,
        final_l1: manifest.final_l1,
        config: cfg,
        generator,
        discriminator,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probs(vals: &[f64]) -> Array2<f64> {
        Array2::from_shape_vec((vals.len(), 1), vals.to_vec()).unwrap()
    }

    #[test]
    fn constant_half_discriminator_matches_hand_value() {
        let v = crate::lmgan::adversarial_d_value(&probs(&[0.5]), &probs(&[0.5]));
        assert!((v + 1.3862943611).abs() < 1e-9);
    }

    #[test]
    fn hand_computed_d_h_loss() {
        let v = crate::lmgan::adversarial_d_value(&probs(&[0.9]), &probs(&[0.2]));
        let want = 0.9f64.ln() + 0.8f64.ln();
        assert!((v - want).abs() < 1e-12);
        assert!((v + 0.3285040669).abs() < 1e-9);
    }

    #[test]
    fn zero_residual_generator_loss_is_adversarial_only() {
        let img = Array4::from_elem((1, 3, 8, 8), 0.4);
        let v = g_h_value(&probs(&[0.5]), &img, &img, 50.0);
        assert!((v - (-0.5f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn hand_computed_generator_loss_uniform_error() {
        let gen = Array4::from_elem((1, 3, 8, 8), 0.6);
        let orig = Array4::from_elem((1, 3, 8, 8), 0.5);
        let v = g_h_value(&probs(&[0.5]), &gen, &orig, 50.0);
        let want = -0.5f64.ln() + 50.0 * 0.1;
        assert!((v - want).abs() < 1e-9, "{v} vs {want}");
        assert!((v - 5.6931471806).abs() < 1e-7);
    }

    #[test]
    fn default_lambda_is_fifty_and_batch_is_six() {
        for cfg in [
            InpainterConfig::paper(ObfuscationMode::Black),
            InpainterConfig::desk(ObfuscationMode::Blur),
        ] {
            assert_eq!(cfg.lambda_h, 50.0);
            assert_eq!(cfg.batch_size, 6);
            assert_eq!(cfg.g_steps_per_iter, 5);
            assert_eq!(cfg.d_steps_per_iter, 1);
        }
        let paper = InpainterConfig::paper(ObfuscationMode::Black);
        assert_eq!(paper.iterations, 13_000);
        // U-Net depth log2(S) - 2
        assert_eq!(paper.gen_channels.len(), 6);
        assert_eq!(InpainterConfig::desk(ObfuscationMode::Black).gen_channels.len(), 4);
    }

    #[test]
    fn generator_input_is_71_channels_without_mask_channel() {
        let cfg = InpainterConfig::desk(ObfuscationMode::Black);
        assert!(!cfg.include_mask_channel);
        assert_eq!(cfg.in_channels(), 71);
        let with_mask = InpainterConfig {
            include_mask_channel: true,
            ..cfg
        };
        assert_eq!(with_mask.in_channels(), 72);
    }

    #[test]
    fn zeroed_bottleneck_output_still_depends_on_input() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut unet = UNet::new(&mut rng, 5, &[6, 8, 8]);
        unet.set_zero_bottleneck(true);
        let mut x1 = Array4::<f64>::zeros((1, 5, 32, 32));
        for v in x1.iter_mut() {
            *v = rng.random_range(0.0..1.0);
        }
        let mut x2 = x1.clone();
        for y in 0..8 {
            for x in 0..8 {
                x2[[0, 0, y, x]] = 1.0 - x2[[0, 0, y, x]];
            }
        }
        let y1 = unet.forward(&x1);
        let y2 = unet.forward(&x2);
        let diff: f64 = y1.iter().zip(y2.iter()).map(|(a, b)| (a - b).abs()).sum();
        assert!(
            diff > 1e-6,
            "output must react to the input through the skip connections"
        );
    }
}
