//! Stage I: generating facial landmarks from an obfuscated body crop via
//! adversarial training, with three decoder variants (Scratch, AEDec,
//! PDMDec) and the landmark auto-encoder pretraining.

pub mod ae;
pub mod nets;

use std::path::Path;

use ndarray::{Array2, Array3, Array4, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use headgen_nn::{log_prob, Adam, Net, TensorArchive, PROB_EPS};

use crate::dataset::{body_crop, obfuscate_head, BodyCrop, ObfuscationMode, PersonInstance, Split};
use crate::error::{CoreError, Result};
use crate::landmark::{normalized_l2, LandmarkSet};

pub use ae::{train_landmark_ae, AeConfig, LandmarkAe};
pub use nets::{build_generator, LandmarkDiscriminator, LandmarkGenerator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecoderVariant {
    Scratch,
    AeDec,
    PdmDec,
}

impl std::fmt::Display for DecoderVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DecoderVariant::Scratch => write!(f, "scratch"),
            DecoderVariant::AeDec => write!(f, "aedec"),
            DecoderVariant::PdmDec => write!(f, "pdmdec"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LandmarkGenConfig {
    pub input_size: usize,
    pub input_mode: ObfuscationMode,
    pub encoder_channels: Vec<usize>,
    pub latent_dim: usize,
    pub decoder_variant: DecoderVariant,
    pub decoder_hidden: usize,
    pub lambda_l: f64,
    pub lr: f64,
    pub lr_halve_every: u64,
    pub batch_size: usize,
    pub iterations: u64,
    pub g_steps_per_iter: u32,
    pub d_steps_per_iter: u32,
    /// Resolution of the heatmap stack fed to the discriminator.
    pub disc_res: usize,
    pub disc_channels: Vec<usize>,
    pub disc_sigma: f64,
    pub seed: u64,
    pub log_every: u64,
    /// Periodic checkpoint interval in iterations; 0 = final только.
    pub checkpoint_every: u64,
}

impl LandmarkGenConfig {
    /// Paper-scale profile at S = 256: lr 2e-5 halving every 5000
    /// iterations, batch 16, 10000 iterations, 5:1 generator:discriminator
    /// updates, 32-d latent.
    pub fn paper(input_mode: ObfuscationMode) -> Self {
        LandmarkGenConfig {
            input_size: 256,
            input_mode,
            encoder_channels: vec![64, 128, 256, 256, 256, 256],
            latent_dim: 32,
            decoder_variant: DecoderVariant::Scratch,
            decoder_hidden: 256,
            lambda_l: 2.0,
            lr: 2e-5,
            lr_halve_every: 5_000,
            batch_size: 16,
            iterations: 10_000,
            g_steps_per_iter: 5,
            d_steps_per_iter: 1,
            disc_res: 256,
            disc_channels: vec![64, 128, 256, 256],
            disc_sigma: 4.0,
            seed: 0,
            log_every: 100,
            checkpoint_every: 1_000,
        }
    }

    /// Desk-scale profile at S = 64: same structure, smaller widths and a
    /// CPU-sized schedule.
    pub fn desk(input_mode: ObfuscationMode) -> Self {
        LandmarkGenConfig {
            input_size: 64,
            input_mode,
            encoder_channels: vec![8, 16, 32, 32, 32, 32],
            latent_dim: 32,
            decoder_variant: DecoderVariant::Scratch,
            decoder_hidden: 128,
            lambda_l: 2.0,
            lr: 1e-3,
            lr_halve_every: 1_500,
            batch_size: 16,
            iterations: 300,
            g_steps_per_iter: 5,
            d_steps_per_iter: 1,
            disc_res: 32,
            disc_channels: vec![16, 32, 32],
            disc_sigma: 1.5,
            seed: 0,
            log_every: 25,
            checkpoint_every: 0,
        }
    }
}

/// Stack a crop's RGB channels with its head mask: the S x S x 4 generator
/// input X.
pub fn crop_to_input(crop: &BodyCrop) -> Array3<f64> {
    let s = crop.size();
    let mut x = Array3::<f64>::zeros((4, s, s));
    x.slice_mut(ndarray::s![0..3, .., ..])
        .assign(crop.image.data());
    for ((y, xx), &m) in crop.head_mask.indexed_iter() {
        x[[3, y, xx]] = m as f64;
    }
    x
}

/// Prepared training collection for stage I: obfuscated inputs paired with
/// ground-truth landmarks (the paper uses detected landmarks as the real
/// examples; the synthetic dataset supplies exact ones).
pub struct LmganData {
    pub inputs: Vec<Array3<f64>>,
    pub targets_norm: Vec<Vec<f64>>,
    pub targets_px: Vec<LandmarkSet>,
    pub train_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
    pub size: usize,
}

pub fn prepare_lmgan_data(
    instances: &[PersonInstance],
    split: Split,
    mode: ObfuscationMode,
    size: usize,
) -> Result<LmganData> {
    if mode == ObfuscationMode::Original {
        return Err(CoreError::InvalidInput(
            "stage-I input must be BLACK or BLUR".into(),
        ));
    }
    let mut data = LmganData {
        inputs: Vec::new(),
        targets_norm: Vec::new(),
        targets_px: Vec::new(),
        train_idx: Vec::new(),
        val_idx: Vec::new(),
        size,
    };
    for inst in instances.iter().filter(|i| i.split == split) {
        let lm = match &inst.landmarks_gt {
            Some(l) => l,
            None => continue,
        };
        let _ = lm;
        let crop = body_crop(inst, size)?;
        let obf = obfuscate_head(&crop, mode)?;
        let target = crop
            .landmarks
            .clone()
            .expect("instance had landmarks, crop must too");
        data.inputs.push(crop_to_input(&obf));
        data.targets_norm.push(target.to_normalized(size));
        data.targets_px.push(target);
    }
    if data.inputs.is_empty() {
        return Err(CoreError::InvalidInput(
            "no instances with landmarks in the requested split".into(),
        ));
    }
    for i in 0..data.inputs.len() {
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
// Losses
// ---------------------------------------------------------------------------

/// Discriminator objective `E[log D(real)] + E[log(1 - D(fake))]`, the
/// quantity the discriminator maximizes (training minimizes its negation).
pub fn adversarial_d_value(p_real: &Array2<f64>, p_fake: &Array2<f64>) -> f64 {
    assert!(p_real.iter().chain(p_fake.iter()).all(|&p| (0.0..=1.0).contains(&p)));
    let lr = p_real.iter().map(|&p| log_prob(p)).sum::<f64>() / p_real.len() as f64;
    let lf = p_fake.iter().map(|&p| log_prob(1.0 - p)).sum::<f64>() / p_fake.len() as f64;
    lr + lf
}

/// Generator objective value: non-saturating adversarial term
/// `-E[log D(fake)]` plus `lambda * E[|coords - target|_2]` on normalized
/// coordinates. This is the quantity the generator minimizes.
pub fn g_l_value(p_fake: &Array2<f64>, coords: &Array2<f64>, target: &Array2<f64>, lambda: f64) -> f64 {
    assert!(p_fake.iter().all(|&p| (0.0..=1.0).contains(&p)));
    assert!(lambda >= 0.0);
    let n = p_fake.len() as f64;
    let adv = p_fake.iter().map(|&p| -log_prob(p)).sum::<f64>() / n;
    let mut l2 = 0.0;
    for (c, t) in coords.rows().into_iter().zip(target.rows()) {
        l2 += c
            .iter()
            .zip(t.iter())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
    }
    adv + lambda * l2 / coords.nrows() as f64
}

/// Run the discriminator on real and fake coordinate rows and return the
/// discriminator objective.
pub fn d_l_loss(
    d: &mut LandmarkDiscriminator,
    real: &Array2<f64>,
    fake: &Array2<f64>,
) -> f64 {
    let pr = d.forward(real);
    let pf = d.forward(fake);
    adversarial_d_value(&pr, &pf)
}

/// Generator loss for a batch of generated coordinates; also returns the
/// gradient with respect to those coordinates (discriminator parameter
/// gradients are accumulated as a side effect and must be zeroed by the
/// caller before a discriminator update).
pub fn g_l_loss_with_grad(
    d: &mut LandmarkDiscriminator,
    coords: &Array2<f64>,
    target: &Array2<f64>,
    lambda: f64,
) -> (f64, Array2<f64>) {
    let p = d.forward(coords);
    let value = g_l_value(&p, coords, target, lambda);
    let n = coords.nrows() as f64;
    // d(-log p)/dp = -1/p, averaged over the batch
    let dprob = p.mapv(|v| -1.0 / v.clamp(PROB_EPS, 1.0 - PROB_EPS) / n);
    let mut grad = d.backward_to_coords(&dprob);
    for (i, (c, t)) in coords.rows().into_iter().zip(target.rows()).enumerate() {
        let norm = c
            .iter()
            .zip(t.iter())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
            .max(1e-12);
        for (k, (a, b)) in c.iter().zip(t.iter()).enumerate() {
            grad[[i, k]] += lambda * (a - b) / norm / n;
        }
    }
    (value, grad)
}

/// Convenience wrapper returning just the generator loss value.
pub fn g_l_loss(
    d: &mut LandmarkDiscriminator,
    coords: &Array2<f64>,
    target: &Array2<f64>,
    lambda: f64,
) -> f64 {
    let p = d.forward(coords);
    g_l_value(&p, coords, target, lambda)
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// Paired stage-I generator/discriminator with optimizer state.
pub struct LmganBundle {
    pub config: LandmarkGenConfig,
    pub generator: LandmarkGenerator,
    pub discriminator: LandmarkDiscriminator,
    pub adam_g: Adam,
    pub adam_d: Adam,
    pub iteration: u64,
    pub val_norm_l2: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LmganManifest {
    pub config: LandmarkGenConfig,
    pub config_hash: String,
    pub iteration: u64,
    pub decoder_variant: DecoderVariant,
    pub val_norm_l2: Option<f64>,
    /// Hidden widths of the frozen AE decoder, when the variant needs one.
    pub ae_hidden: Option<Vec<usize>>,
    pub pdm_n: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct LogRow {
    pub iteration: u64,
    pub d_loss: f64,
    pub g_loss: f64,
    pub val_norm_l2: f64,
}

impl TrainLog {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("iteration,d_loss,g_loss,val_norm_l2\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.iteration, r.d_loss, r.g_loss, r.val_norm_l2
            ));
        }
        std::fs::write(path, out).map_err(|e| CoreError::io(path, e))
    }
}

fn batch_indices(seed: u64, tag: u64, iter: u64, step: u32, pool: &[usize], k: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(
        seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15)
            ^ iter.wrapping_mul(0x2545_f491_4f6c_dd1d)
            ^ (step as u64).wrapping_mul(0x6a09_e667),
    );
    (0..k).map(|_| pool[rng.random_range(0..pool.len())]).collect()
}

fn gather_batch(data: &LmganData, idx: &[usize]) -> (Array4<f64>, Array2<f64>) {
    let s = data.size;
    let mut x = Array4::<f64>::zeros((idx.len(), 4, s, s));
    let mut t = Array2::<f64>::zeros((idx.len(), 2 * crate::landmark::NUM_LANDMARKS));
    for (b, &i) in idx.iter().enumerate() {
        x.index_axis_mut(Axis(0), b).assign(&data.inputs[i]);
        for (k, &v) in data.targets_norm[i].iter().enumerate() {
            t[[b, k]] = v;
        }
    }
    (x, t)
}

/// Mean inter-ocular-normalized landmark error of the generator on the
/// validation indices.
pub fn validation_norm_l2(bundle: &mut LmganBundle, data: &LmganData) -> f64 {
    let size = data.size;
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in data.val_idx.chunks(bundle.config.batch_size.max(1)) {
        let (x, _) = gather_batch(data, chunk);
        let coords = bundle.generator.forward(&x);
        for (b, &i) in chunk.iter().enumerate() {
            let flat: Vec<f64> = coords.row(b).iter().copied().collect();
            if let Ok(l) = LandmarkSet::from_normalized(&flat, size) {
                let e = normalized_l2(&l, &data.targets_px[i]);
                if let Some(n) = e.norm_l2 {
                    total += n;
                    count += 1;
                }
            }
        }
    }
    if count == 0 {
        f64::NAN
    } else {
        total / count as f64
    }
}

/// Adversarial training with the configured generator:discriminator update
/// ratio (one iteration = `g_steps` generator updates then `d_steps`
/// discriminator updates). Frozen decoder variants keep their decoder
/// weights untouched by construction (the optimizer skips frozen
/// parameters).
pub fn train_landmark_gan(
    data: &LmganData,
    cfg: &LandmarkGenConfig,
    ae: Option<&LandmarkAe>,
    pdm: Option<&crate::landmark::pdm::PdmModel>,
    resume: Option<LmganBundle>,
    checkpoint_dir: Option<&Path>,
) -> Result<(LmganBundle, TrainLog)> {
    let mut bundle = match resume {
        Some(b) => b,
        None => {
            let generator = build_generator(
                cfg,
                ae.map(|a| a.decoder.clone()),
                pdm.cloned(),
            )?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xd15c);
            let discriminator = LandmarkDiscriminator::new(&mut rng, cfg);
            LmganBundle {
                config: cfg.clone(),
                generator,
                discriminator,
                adam_g: Adam::default(),
                adam_d: Adam::default(),
                iteration: 0,
                val_norm_l2: None,
            }
        }
    };
    let ae_hidden = ae.map(|a| a.config.hidden.clone());
    let pdm_n = pdm.map(|p| p.n());
    let mut log = TrainLog::default();

    let start = bundle.iteration;
    for it in start..cfg.iterations {
        let lr = headgen_nn::adam::halving_lr(cfg.lr, it, cfg.lr_halve_every);
        let mut g_loss = f64::NAN;
        for gs in 0..cfg.g_steps_per_iter {
            let idx = batch_indices(cfg.seed, G_STREAM, it, gs, &data.train_idx, cfg.batch_size);
            let (x, t) = gather_batch(data, &idx);
            let coords = bundle.generator.forward(&x);
            bundle.discriminator.zero_grad();
            let (value, grad) =
                g_l_loss_with_grad(&mut bundle.discriminator, &coords, &t, cfg.lambda_l);
            g_loss = value;
            if !value.is_finite() {
                return Err(CoreError::Diverged {
                    iteration: it,
                    what: format!("generator loss became {value}"),
                });
            }
            bundle.generator.zero_grad();
            bundle.generator.backward(&grad);
            bundle.adam_g.step(&mut bundle.generator, lr);
        }
        let mut d_loss = f64::NAN;
        for ds in 0..cfg.d_steps_per_iter {
            let idx = batch_indices(cfg.seed, D_STREAM, it, ds, &data.train_idx, cfg.batch_size);
            let (x, t) = gather_batch(data, &idx);
            let fake = bundle.generator.forward(&x);
            bundle.discriminator.zero_grad();
            let n = cfg.batch_size as f64;
            let p_real = bundle.discriminator.forward(&t);
            let gr = p_real.mapv(|p| -1.0 / p.clamp(PROB_EPS, 1.0 - PROB_EPS) / n);
            bundle.discriminator.backward_to_coords(&gr);
            let p_fake = bundle.discriminator.forward(&fake);
            let gf = p_fake.mapv(|p| 1.0 / (1.0 - p).clamp(PROB_EPS, 1.0 - PROB_EPS) / n);
            bundle.discriminator.backward_to_coords(&gf);
            d_loss = adversarial_d_value(&p_real, &p_fake);
            if !d_loss.is_finite() {
                return Err(CoreError::Diverged {
                    iteration: it,
                    what: format!("discriminator loss became {d_loss}"),
                });
            }
            bundle.adam_d.step(&mut bundle.discriminator, lr);
        }
        bundle.iteration = it + 1;
        if cfg.log_every > 0 && (it + 1) % cfg.log_every == 0 {
            let val = validation_norm_l2(&mut bundle, data);
            log.rows.push(LogRow {
                iteration: it + 1,
                d_loss,
                g_loss,
                val_norm_l2: val,
            });
        }
        if cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0 {
            if let Some(dir) = checkpoint_dir {
                let base = dir.join(format!("lmgan_iter{:06}", it + 1));
                save_bundle(&mut bundle, &base, ae_hidden.clone(), pdm_n)?;
            }
        }
    }
    bundle.val_norm_l2 = Some(validation_norm_l2(&mut bundle, data));
    Ok((bundle, log))
}

// Distinct stream tags keep generator and discriminator batch draws
// independent. Batch indices derive purely from (seed, iteration, step), so
// resumed runs draw exactly the batches a continuous run would have.
const G_STREAM: u64 = 0x6767;
const D_STREAM: u64 = 0x6464;

/// Deterministic inference: obfuscated crop in, landmark set out. For the
/// PDMDec variant the output is by construction the decode of predicted
/// parameters, so it lies on the shape manifold.
pub fn generate_landmarks(bundle: &mut LmganBundle, crop: &BodyCrop) -> Result<LandmarkSet> {
    if crop.mode == ObfuscationMode::Original {
        return Err(CoreError::InvalidInput(
            "landmark generation expects an obfuscated crop (BLACK or BLUR)".into(),
        ));
    }
    let s = crop.size();
    if s != bundle.config.input_size {
        return Err(CoreError::InvalidInput(format!(
            "crop size {s} does not match the generator's input size {}",
            bundle.config.input_size
        )));
    }
    let input = crop_to_input(crop);
    let mut x = Array4::<f64>::zeros((1, 4, s, s));
    x.index_axis_mut(Axis(0), 0).assign(&input);
    let coords = bundle.generator.forward(&x);
    let flat: Vec<f64> = coords.row(0).iter().copied().collect();
    LandmarkSet::from_normalized(&flat, s)
}

pub fn save_bundle(
    bundle: &mut LmganBundle,
    base: &Path,
    ae_hidden: Option<Vec<usize>>,
    pdm_n: Option<usize>,
) -> Result<()> {
    let mut arc = TensorArchive::new();
    arc.store_net("g", &mut bundle.generator);
    arc.store_net("d", &mut bundle.discriminator);
    arc.insert_scalar("adam_g.t", bundle.adam_g.t as f64);
    arc.insert_scalar("adam_d.t", bundle.adam_d.t as f64);
    arc.insert_scalar("iteration", bundle.iteration as f64);
    if let nets::LandmarkDecoder::Pdm(head) = &bundle.generator.decoder {
        head.pdm().store_into(&mut arc, "pdm");
    }
    arc.save(&base.with_extension("ntar"))?;

    let cfg_json = serde_json::to_string(&bundle.config).expect("config serializes");
    let manifest = LmganManifest {
        config: bundle.config.clone(),
        config_hash: crate::artifact::sha256_hex(cfg_json.as_bytes()),
        iteration: bundle.iteration,
        decoder_variant: bundle.config.decoder_variant,
        val_norm_l2: bundle.val_norm_l2,
        ae_hidden,
        pdm_n,
    };
    let path = base.with_extension("json");
    std::fs::write(
        &path,
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )
    .map_err(|e| CoreError::io(&path, e))?;
    Ok(())
}

pub fn load_bundle(base: &Path) -> Result<LmganBundle> {
    let path = base.with_extension("json");
    let manifest: LmganManifest = serde_json::from_str(
        &std::fs::read_to_string(&path).map_err(|e| CoreError::io(&path, e))?,
    )
    .map_err(|e| CoreError::json(&path, e))?;
    let arc = TensorArchive::load(&base.with_extension("ntar"))?;
    let cfg = manifest.config.clone();

    let ae_decoder = match (cfg.decoder_variant, &manifest.ae_hidden) {
        (DecoderVariant::AeDec, Some(hidden)) => {
            let ae_cfg = AeConfig {
                hidden: hidden.clone(),
                bottleneck: cfg.latent_dim,
                ..AeConfig::default()
            };
            Some(LandmarkAe::new(&ae_cfg).decoder)
        }
        (DecoderVariant::AeDec, None) => {
            return Err(CoreError::MissingArtifact {
                name: "ae_hidden".into(),
                hint: "AEDec checkpoint manifest must record the AE hidden widths".into(),
            })
        }
        _ => None,
    };
    let pdm = match cfg.decoder_variant {
        DecoderVariant::PdmDec => Some(crate::landmark::pdm::PdmModel::load_from(&arc, "pdm")?),
        _ => None,
    };
    // `build_generator` freezes pretrained decoders; `load_net` only
    // restores values, so the freeze carries over.
    let mut generator = build_generator(&cfg, ae_decoder, pdm)?;
    arc.load_net("g", &mut generator)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xd15c);
    let mut discriminator = LandmarkDiscriminator::new(&mut rng, &cfg);
    arc.load_net("d", &mut discriminator)?;
    Ok(LmganBundle {
        adam_g: Adam {
            t: arc.get_scalar("adam_g.t")? as u64,
            ..Adam::default()
        },
        adam_d: Adam {
            t: arc.get_scalar("adam_d.t")? as u64,
            ..Adam::default()
        },
        iteration: arc.get_scalar("iteration")? as u64,
        val_norm_l2: manifest.val_norm_l2,
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
    fn constant_half_discriminator_gives_two_log_half() {
        let v = adversarial_d_value(&probs(&[0.5]), &probs(&[0.5]));
        assert!((v - 2.0 * 0.5f64.ln()).abs() < 1e-12);
        assert!((v + 1.3862943611).abs() < 1e-9);
    }

    #[test]
    fn perfect_discriminator_loss_is_near_zero_under_clamping() {
        let v = adversarial_d_value(&probs(&[1.0]), &probs(&[0.0]));
        assert!(v.abs() < 1e-5, "clamped perfect-D loss {v}");
        assert!(v <= 0.0);
    }

    #[test]
    fn hand_computed_single_sample_d_loss() {
        let v = adversarial_d_value(&probs(&[0.8]), &probs(&[0.3]));
        let want = 0.8f64.ln() + 0.7f64.ln();
        assert!((v - want).abs() < 1e-12);
        assert!((v + 0.5798184953).abs() < 1e-9);
    }

    #[test]
    fn generator_loss_reduces_to_adversarial_term_at_zero_residual() {
        let coords = Array2::from_elem((2, 136), 0.25);
        let v = g_l_value(&probs(&[0.5, 0.5]), &coords, &coords, 2.0);
        assert!((v - (-0.5f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn hand_computed_generator_loss_with_unit_residual() {
        // residual norm exactly 1.0: one coordinate differs by 1
        let mut coords = Array2::zeros((1, 136));
        coords[[0, 0]] = 1.0;
        let target = Array2::zeros((1, 136));
        let v = g_l_value(&probs(&[0.5]), &coords, &target, 2.0);
        assert!((v - (-0.5f64.ln() + 2.0)).abs() < 1e-12);
        assert!((v - 2.6931471806).abs() < 1e-9);
    }

    #[test]
    fn default_lambda_is_two_and_ratio_is_five_to_one() {
        for cfg in [
            LandmarkGenConfig::paper(ObfuscationMode::Black),
            LandmarkGenConfig::desk(ObfuscationMode::Blur),
        ] {
            assert_eq!(cfg.lambda_l, 2.0);
            assert_eq!(cfg.batch_size, 16);
            assert_eq!(cfg.g_steps_per_iter, 5);
            assert_eq!(cfg.d_steps_per_iter, 1);
            assert_eq!(cfg.latent_dim, 32);
            assert_eq!(cfg.encoder_channels.len(), 6);
        }
        let paper = LandmarkGenConfig::paper(ObfuscationMode::Black);
        assert_eq!(paper.lr, 2e-5);
        assert_eq!(paper.lr_halve_every, 5_000);
        assert_eq!(paper.iterations, 10_000);
    }

    #[test]
    fn crop_input_has_four_channels() {
        use crate::dataset::{synth_generate, SynthConfig};
        let insts = synth_generate(&SynthConfig {
            num_identities: 2,
            instances_per_identity: 1,
            resolution: 64,
            rng_seed: 1,
            ..SynthConfig::default()
        });
        let crop = crate::dataset::body_crop(&insts[0], 64).unwrap();
        let obf = crate::dataset::obfuscate_head(&crop, ObfuscationMode::Black).unwrap();
        let x = crop_to_input(&obf);
        assert_eq!(x.dim(), (4, 64, 64));
        // mask channel is binary and non-empty
        let mask_sum: f64 = x.slice(ndarray::s![3, .., ..]).sum();
        assert!(mask_sum > 0.0);
    }
}
