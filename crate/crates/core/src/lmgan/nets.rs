//! Networks of stage I: the context encoder, the three decoder variants,
//! the coordinate-to-heatmap layer, and the heatmap discriminator.

use ndarray::{Array2, Array4};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use headgen_nn::param::visit_scoped;
use headgen_nn::{Act, Activation, Conv2d, ConvDownBlock, Linear, Net, Param, Sigmoid};

use crate::landmark::pdm::{PdmModel, PdmParams};
use crate::landmark::NUM_LANDMARKS;

use super::ae::Mlp;
use super::{DecoderVariant, LandmarkGenConfig};

/// Six downsampling residual conv blocks, global average pooling, and a
/// linear map to the latent code.
#[derive(Debug, Clone)]
pub struct ContextEncoder {
    blocks: Vec<ConvDownBlock>,
    to_latent: Linear,
    pool_hw: Option<(usize, usize)>,
}

impl ContextEncoder {
    pub fn new<R: Rng>(rng: &mut R, channels: &[usize], latent: usize) -> Self {
        assert_eq!(channels.len(), 6, "encoder uses 6 conv residual blocks");
        let mut blocks = Vec::with_capacity(6);
        let mut prev = 4; // RGB + head mask
        for &c in channels {
            blocks.push(ConvDownBlock::new(rng, prev, c, Act::LeakyRelu(0.2)));
            prev = c;
        }
        ContextEncoder {
            blocks,
            to_latent: Linear::new(rng, prev, latent),
            pool_hw: None,
        }
    }

    pub fn forward(&mut self, x: &Array4<f64>) -> Array2<f64> {
        let mut h = x.clone();
        for b in &mut self.blocks {
            h = b.forward(&h);
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
        self.to_latent.forward(&pooled)
    }

    pub fn backward(&mut self, grad: &Array2<f64>) -> Array4<f64> {
        let gp = self.to_latent.backward(grad);
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
        for b in self.blocks.iter_mut().rev() {
            g = b.backward(&g);
        }
        g
    }
}

impl Net for ContextEncoder {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            visit_scoped(b, &format!("block{i}"), f);
        }
        visit_scoped(&mut self.to_latent, "to_latent", f);
    }
}

/// Decoder trained jointly from scratch: linear lift, six FC residual
/// blocks, linear head to the 136 normalized coordinates.
#[derive(Debug, Clone)]
pub struct ScratchDecoder {
    lift: Linear,
    blocks: Vec<headgen_nn::FcResBlock>,
    head: Linear,
}

impl ScratchDecoder {
    pub fn new<R: Rng>(rng: &mut R, latent: usize, hidden: usize) -> Self {
        ScratchDecoder {
            lift: Linear::new(rng, latent, hidden),
            blocks: (0..6)
                .map(|_| headgen_nn::FcResBlock::new(rng, hidden))
                .collect(),
            head: Linear::new(rng, hidden, 2 * NUM_LANDMARKS),
        }
    }

    pub fn forward(&mut self, z: &Array2<f64>) -> Array2<f64> {
        let mut h = self.lift.forward(z);
        for b in &mut self.blocks {
            h = b.forward(&h);
        }
        self.head.forward(&h)
    }

    pub fn backward(&mut self, grad: &Array2<f64>) -> Array2<f64> {
        let mut g = self.head.backward(grad);
        for b in self.blocks.iter_mut().rev() {
            g = b.backward(&g);
        }
        self.lift.backward(&g)
    }
}

impl Net for ScratchDecoder {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        visit_scoped(&mut self.lift, "lift", f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            visit_scoped(b, &format!("block{i}"), f);
        }
        visit_scoped(&mut self.head, "head", f);
    }
}

/// Learned linear head into the frozen Eq.-style PDM decode. Only the head
/// trains; the shape model itself has no trainable parameters. Outputs are
/// normalized to `[-1, 1]` by `2x/S - 1`.
#[derive(Debug, Clone)]
pub struct PdmDecHead {
    pub head: Linear,
    pdm: PdmModel,
    size: usize,
    cached_params: Option<Array2<f64>>,
}

impl PdmDecHead {
    pub fn new<R: Rng>(rng: &mut R, latent: usize, pdm: PdmModel, size: usize) -> Self {
        let n = pdm.n();
        let mut head = Linear::new(rng, latent, n + 6);
        // Small weights plus a bias at the training-mean pose: the first
        // decodes start on the shape manifold near the average face.
        head.weight.value.mapv_inplace(|v| v * 0.01);
        let mean = pdm.mean_params().to_vec();
        for (b, m) in head.bias.value.iter_mut().zip(mean) {
            *b = m;
        }
        PdmDecHead {
            head,
            pdm,
            size,
            cached_params: None,
        }
    }

    pub fn pdm(&self) -> &PdmModel {
        &self.pdm
    }

    pub fn forward(&mut self, z: &Array2<f64>) -> Array2<f64> {
        let params = self.head.forward(z);
        let px = self.pdm.decode_batch(&params);
        self.cached_params = Some(params);
        px.mapv(|v| 2.0 * v / self.size as f64 - 1.0)
    }

    pub fn backward(&mut self, grad: &Array2<f64>) -> Array2<f64> {
        let params = self
            .cached_params
            .as_ref()
            .expect("backward before forward");
        let dpx = grad.mapv(|v| v * 2.0 / self.size as f64);
        let dparams = self.pdm.decode_batch_backward(params, &dpx);
        self.head.backward(&dparams)
    }
}

impl Net for PdmDecHead {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        visit_scoped(&mut self.head, "head", f);
    }
}

/// The three decoder variants behind one interface.
#[derive(Debug, Clone)]
pub enum LandmarkDecoder {
    Scratch(ScratchDecoder),
    /// Pre-trained auto-encoder decoder, frozen.
    Ae(Mlp),
    /// Frozen PDM decode with a trained linear head.
    Pdm(PdmDecHead),
}

impl LandmarkDecoder {
    pub fn variant(&self) -> DecoderVariant {
        match self {
            LandmarkDecoder::Scratch(_) => DecoderVariant::Scratch,
            LandmarkDecoder::Ae(_) => DecoderVariant::AeDec,
            LandmarkDecoder::Pdm(_) => DecoderVariant::PdmDec,
        }
    }

    pub fn forward(&mut self, z: &Array2<f64>) -> Array2<f64> {
        match self {
            LandmarkDecoder::Scratch(d) => d.forward(z),
            LandmarkDecoder::Ae(d) => d.forward(z),
            LandmarkDecoder::Pdm(d) => d.forward(z),
        }
    }

    pub fn backward(&mut self, grad: &Array2<f64>) -> Array2<f64> {
        match self {
            LandmarkDecoder::Scratch(d) => d.backward(grad),
            LandmarkDecoder::Ae(d) => d.backward(grad),
            LandmarkDecoder::Pdm(d) => d.backward(grad),
        }
    }
}

impl Net for LandmarkDecoder {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        match self {
            LandmarkDecoder::Scratch(d) => d.visit_params(f),
            LandmarkDecoder::Ae(d) => d.visit_params(f),
            LandmarkDecoder::Pdm(d) => d.visit_params(f),
        }
    }
}

/// Full landmark generator: context encoder into one of the decoders.
/// Outputs normalized coordinate rows `(N, 136)`.
#[derive(Debug, Clone)]
pub struct LandmarkGenerator {
    pub encoder: ContextEncoder,
    pub decoder: LandmarkDecoder,
}

impl LandmarkGenerator {
    pub fn forward(&mut self, x: &Array4<f64>) -> Array2<f64> {
        assert_eq!(x.dim().1, 4, "generator input is image (3) + mask (1)");
        let z = self.encoder.forward(x);
        self.decoder.forward(&z)
    }

    pub fn backward(&mut self, grad: &Array2<f64>) {
        let gz = self.decoder.backward(grad);
        self.encoder.backward(&gz);
    }
}

impl Net for LandmarkGenerator {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        visit_scoped(&mut self.encoder, "encoder", f);
        visit_scoped(&mut self.decoder, "decoder", f);
    }
}

/// Differentiable coordinate-to-heatmap rendering for the discriminator
/// input path. Coordinates are normalized `[-1, 1]`; the stack is rendered
/// at `res x res`.
#[derive(Debug, Clone)]
pub struct HeatmapLayer {
    pub res: usize,
    pub sigma: f64,
    cached_coords: Option<Array2<f64>>,
}

impl HeatmapLayer {
    pub fn new(res: usize, sigma: f64) -> Self {
        HeatmapLayer {
            res,
            sigma,
            cached_coords: None,
        }
    }

    fn to_px(&self, v: f64) -> f64 {
        (v + 1.0) * self.res as f64 / 2.0
    }

    pub fn forward(&mut self, coords: &Array2<f64>) -> Array4<f64> {
        let n = coords.nrows();
        let r = self.res;
        let inv = 1.0 / (2.0 * self.sigma * self.sigma);
        let mut out = Array4::<f64>::zeros((n, NUM_LANDMARKS, r, r));
        let mut fx = vec![0.0; r];
        let mut fy = vec![0.0; r];
        for i in 0..n {
            for k in 0..NUM_LANDMARKS {
                let px = self.to_px(coords[[i, 2 * k]]);
                let py = self.to_px(coords[[i, 2 * k + 1]]);
                for (t, f) in fx.iter_mut().enumerate() {
                    let d = t as f64 - px;
                    *f = (-d * d * inv).exp();
                }
                for (t, f) in fy.iter_mut().enumerate() {
                    let d = t as f64 - py;
                    *f = (-d * d * inv).exp();
                }
                for y in 0..r {
                    let gy = fy[y];
                    for x in 0..r {
                        out[[i, k, y, x]] = gy * fx[x];
                    }
                }
            }
        }
        self.cached_coords = Some(coords.clone());
        out
    }

    pub fn backward(&mut self, grad: &Array4<f64>) -> Array2<f64> {
        let coords = self
            .cached_coords
            .as_ref()
            .expect("backward before forward");
        let n = coords.nrows();
        let r = self.res;
        let inv = 1.0 / (2.0 * self.sigma * self.sigma);
        let sig2 = self.sigma * self.sigma;
        let half = self.res as f64 / 2.0; // d px / d coord
        let mut out = Array2::<f64>::zeros((n, 2 * NUM_LANDMARKS));
        let mut fx = vec![0.0; r];
        let mut fy = vec![0.0; r];
        for i in 0..n {
            for k in 0..NUM_LANDMARKS {
                let px = self.to_px(coords[[i, 2 * k]]);
                let py = self.to_px(coords[[i, 2 * k + 1]]);
                for (t, f) in fx.iter_mut().enumerate() {
                    let d = t as f64 - px;
                    *f = (-d * d * inv).exp();
                }
                for (t, f) in fy.iter_mut().enumerate() {
                    let d = t as f64 - py;
                    *f = (-d * d * inv).exp();
                }
                let mut dx = 0.0;
                let mut dy = 0.0;
                for y in 0..r {
                    let gy = fy[y];
                    let ddy = y as f64 - py;
                    for x in 0..r {
                        let h = gy * fx[x];
                        let g = grad[[i, k, y, x]];
                        dx += g * h * (x as f64 - px) / sig2;
                        dy += g * h * ddy / sig2;
                    }
                }
                out[[i, 2 * k]] = dx * half;
                out[[i, 2 * k + 1]] = dy * half;
            }
        }
        out
    }
}

/// Strided-convolution classifier over the 68-channel heatmap stack,
/// ending in a sigmoid real-vs-fake probability.
#[derive(Debug, Clone)]
pub struct LandmarkDiscriminator {
    pub heatmap: HeatmapLayer,
    convs: Vec<Conv2d>,
    acts: Vec<Activation>,
    classify: Linear,
    sigmoid: Sigmoid,
    feat_shape: Option<(usize, usize, usize)>,
}

impl LandmarkDiscriminator {
    pub fn new<R: Rng>(rng: &mut R, cfg: &LandmarkGenConfig) -> Self {
        let res = cfg.disc_res;
        let mut convs = Vec::new();
        let mut acts = Vec::new();
        let mut prev = NUM_LANDMARKS;
        let mut hw = res;
        for &c in &cfg.disc_channels {
            convs.push(Conv2d::new(rng, prev, c, 3, 2, 1));
            acts.push(Activation::new(Act::LeakyRelu(0.2)));
            prev = c;
            hw /= 2;
        }
        LandmarkDiscriminator {
            heatmap: HeatmapLayer::new(res, cfg.disc_sigma),
            convs,
            acts,
            classify: Linear::new(rng, prev * hw * hw, 1),
            sigmoid: Sigmoid::new(),
            feat_shape: None,
        }
    }

    /// Probability that each coordinate row is a real landmark set.
    pub fn forward(&mut self, coords: &Array2<f64>) -> Array2<f64> {
        let h = self.heatmap.forward(coords);
        let p = self.forward_heatmaps(&h);
        debug_assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
        p
    }

    fn forward_heatmaps(&mut self, stack: &Array4<f64>) -> Array2<f64> {
        let mut h = stack.clone();
        for i in 0..self.convs.len() {
            h = self.convs[i].forward(&h);
            h = self.acts[i]
                .forward(&h.into_dyn())
                .into_dimensionality()
                .unwrap();
        }
        let (n, c, hh, ww) = h.dim();
        self.feat_shape = Some((c, hh, ww));
        let flat = h.into_shape_with_order((n, c * hh * ww)).unwrap();
        let logits = self.classify.forward(&flat);
        self.sigmoid
            .forward(&logits.into_dyn())
            .into_dimensionality()
            .unwrap()
    }

    /// Backpropagate a gradient on the output probability all the way to the
    /// input coordinates (also accumulating the discriminator's own
    /// parameter gradients).
    pub fn backward_to_coords(&mut self, grad_prob: &Array2<f64>) -> Array2<f64> {
        let gh = self.backward_to_heatmaps(grad_prob);
        self.heatmap.backward(&gh)
    }

    fn backward_to_heatmaps(&mut self, grad_prob: &Array2<f64>) -> Array4<f64> {
        let glogit = self
            .sigmoid
            .backward(&grad_prob.clone().into_dyn())
            .into_dimensionality::<ndarray::Ix2>()
            .unwrap();
        let gflat = self.classify.backward(&glogit);
        let (c, hh, ww) = self.feat_shape.expect("backward before forward");
        let n = gflat.nrows();
        let mut g = gflat.into_shape_with_order((n, c, hh, ww)).unwrap();
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

impl Net for LandmarkDiscriminator {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        for (i, c) in self.convs.iter_mut().enumerate() {
            visit_scoped(c, &format!("conv{i}"), f);
        }
        visit_scoped(&mut self.classify, "classify", f);
    }
}

/// Construct the generator for a config, consuming the pretrained artifacts
/// the chosen decoder variant requires.
pub fn build_generator(
    cfg: &LandmarkGenConfig,
    ae_decoder: Option<Mlp>,
    pdm: Option<PdmModel>,
) -> crate::Result<LandmarkGenerator> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let encoder = ContextEncoder::new(&mut rng, &cfg.encoder_channels, cfg.latent_dim);
    let decoder = match cfg.decoder_variant {
        DecoderVariant::Scratch => LandmarkDecoder::Scratch(ScratchDecoder::new(
            &mut rng,
            cfg.latent_dim,
            cfg.decoder_hidden,
        )),
        DecoderVariant::AeDec => {
            let mut dec = ae_decoder.ok_or_else(|| crate::CoreError::MissingArtifact {
                name: "landmark auto-encoder".into(),
                hint: "the AEDec variant needs a trained AE checkpoint".into(),
            })?;
            if dec.layers[0].in_dim() != cfg.latent_dim {
                return Err(crate::CoreError::InvalidInput(format!(
                    "AE bottleneck {} does not match latent dim {}",
                    dec.layers[0].in_dim(),
                    cfg.latent_dim
                )));
            }
            dec.freeze();
            LandmarkDecoder::Ae(dec)
        }
        DecoderVariant::PdmDec => {
            let pdm = pdm.ok_or_else(|| crate::CoreError::MissingArtifact {
                name: "point distribution model".into(),
                hint: "the PDMDec variant needs a fitted PDM checkpoint".into(),
            })?;
            LandmarkDecoder::Pdm(PdmDecHead::new(
                &mut rng,
                cfg.latent_dim,
                pdm,
                cfg.input_size,
            ))
        }
    };
    Ok(LandmarkGenerator { encoder, decoder })
}

pub fn default_pdm_params_for(pdm: &PdmModel) -> PdmParams {
    pdm.mean_params().clone()
}
