//! Landmark auto-encoder: fully connected coders with ReLU activations and a
//! 32-unit bottleneck, trained to reconstruct the 136 normalized landmark
//! coordinates under squared error. Its decoder can be frozen and reused as
//! the AEDec variant of the landmark generator.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use headgen_nn::param::visit_scoped;
use headgen_nn::{Act, Activation, Adam, Linear, Net, Param};

use crate::error::{CoreError, Result};

pub const COORD_DIM: usize = 136;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AeConfig {
    pub bottleneck: usize,
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub lr_halve_every: u64,
    pub batch_size: usize,
    pub iterations: u64,
    pub seed: u64,
}

impl Default for AeConfig {
    fn default() -> Self {
        AeConfig {
            bottleneck: 32,
            hidden: vec![128, 64],
            lr: 1e-3,
            lr_halve_every: 20_000,
            batch_size: 16,
            iterations: 4_000,
            seed: 0,
        }
    }
}

impl AeConfig {
    /// Training schedule from the reference setup (60k iterations, batch 16).
    pub fn paper() -> Self {
        AeConfig {
            lr: 2e-5,
            lr_halve_every: 5_000,
            iterations: 60_000,
            ..AeConfig::default()
        }
    }
}

/// Stack of fully connected layers with ReLU between them (none after the
/// last).
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    acts: Vec<Activation>,
}

impl Mlp {
    pub fn new<R: Rng>(rng: &mut R, dims: &[usize]) -> Self {
        let layers: Vec<Linear> = dims
            .windows(2)
            .map(|w| Linear::new(rng, w[0], w[1]))
            .collect();
        let acts = (0..layers.len().saturating_sub(1))
            .map(|_| Activation::new(Act::Relu))
            .collect();
        Mlp { layers, acts }
    }

    pub fn forward(&mut self, x: &Array2<f64>) -> Array2<f64> {
        let mut h = x.clone();
        for i in 0..self.layers.len() {
            h = self.layers[i].forward(&h);
            if i + 1 < self.layers.len() {
                h = self.acts[i]
                    .forward(&h.into_dyn())
                    .into_dimensionality()
                    .unwrap();
            }
        }
        h
    }

    pub fn backward(&mut self, grad: &Array2<f64>) -> Array2<f64> {
        let mut g = grad.clone();
        for i in (0..self.layers.len()).rev() {
            if i + 1 < self.layers.len() {
                g = self.acts[i]
                    .backward(&g.into_dyn())
                    .into_dimensionality()
                    .unwrap();
            }
            g = self.layers[i].backward(&g);
        }
        g
    }
}

impl Net for Mlp {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            visit_scoped(l, &format!("lin{i}"), f);
        }
    }
}

/// Encoder 136 -> ... -> 32 and decoder 32 -> ... -> 136.
#[derive(Debug, Clone)]
pub struct LandmarkAe {
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub config: AeConfig,
}

impl LandmarkAe {
    pub fn new(cfg: &AeConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut enc_dims = vec![COORD_DIM];
        enc_dims.extend(&cfg.hidden);
        enc_dims.push(cfg.bottleneck);
        let mut dec_dims = vec![cfg.bottleneck];
        dec_dims.extend(cfg.hidden.iter().rev());
        dec_dims.push(COORD_DIM);
        LandmarkAe {
            encoder: Mlp::new(&mut rng, &enc_dims),
            decoder: Mlp::new(&mut rng, &dec_dims),
            config: cfg.clone(),
        }
    }

    pub fn reconstruct(&mut self, coords: &Array2<f64>) -> Array2<f64> {
        let z = self.encoder.forward(coords);
        self.decoder.forward(&z)
    }
}

impl Net for LandmarkAe {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        visit_scoped(&mut self.encoder, "encoder", f);
        visit_scoped(&mut self.decoder, "decoder", f);
    }
}

/// Train the auto-encoder on normalized landmark rows `(N, 136)`.
pub fn train_landmark_ae(coords: &Array2<f64>, cfg: &AeConfig) -> Result<LandmarkAe> {
    if coords.nrows() < cfg.batch_size {
        return Err(CoreError::InvalidInput(format!(
            "need at least {} samples, got {}",
            cfg.batch_size,
            coords.nrows()
        )));
    }
    let mut ae = LandmarkAe::new(cfg);
    let mut adam = Adam::default();
    let n = coords.nrows();
    for it in 0..cfg.iterations {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (0xae00_0000 + it));
        let mut batch = Array2::<f64>::zeros((cfg.batch_size, COORD_DIM));
        for b in 0..cfg.batch_size {
            let idx = rng.random_range(0..n);
            batch.row_mut(b).assign(&coords.row(idx));
        }
        let recon = ae.reconstruct(&batch);
        let diff = &recon - &batch;
        let loss = diff.iter().map(|v| v * v).sum::<f64>() / cfg.batch_size as f64;
        if !loss.is_finite() {
            return Err(CoreError::Diverged {
                iteration: it,
                what: format!("auto-encoder loss became {loss}"),
            });
        }
        let grad = diff.mapv(|v| 2.0 * v / cfg.batch_size as f64);
        ae.zero_grad();
        let gz = ae.decoder.backward(&grad);
        ae.encoder.backward(&gz);
        let lr = headgen_nn::adam::halving_lr(cfg.lr, it, cfg.lr_halve_every);
        adam.step(&mut ae, lr);
    }
    Ok(ae)
}
