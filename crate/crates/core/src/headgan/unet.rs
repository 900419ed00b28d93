//! Convolutional encoder-decoder with skip connections between mirrored
//! layers, plus the DCGAN-style image discriminator.

use ndarray::{Array4, Axis};
use rand::Rng;

use headgen_nn::param::visit_scoped;
use headgen_nn::{Act, Activation, Conv2d, Linear, Net, Param, Sigmoid, Upsample2x};

/// U-Net: stride-2 encoder convs, nearest-upsample decoder convs, each
/// decoder stage concatenated with the mirrored encoder activation, sigmoid
/// RGB output at full resolution.
#[derive(Debug, Clone)]
pub struct UNet {
    enc: Vec<Conv2d>,
    enc_acts: Vec<Activation>,
    dec: Vec<Conv2d>,
    dec_acts: Vec<Activation>,
    out_conv: Conv2d,
    out_act: Sigmoid,
    up: Upsample2x,
    skips: Vec<Array4<f64>>,
    zero_bottleneck: bool,
}

impl UNet {
    /// `channels[i]` is the encoder width at level `i`; the number of levels
    /// is `log2(size) - 2`.
    pub fn new<R: Rng>(rng: &mut R, in_ch: usize, channels: &[usize]) -> Self {
        assert!(channels.len() >= 2, "need at least two U-Net levels");
        let mut enc = Vec::new();
        let mut enc_acts = Vec::new();
        let mut prev = in_ch;
        for &c in channels {
            enc.push(Conv2d::new(rng, prev, c, 3, 2, 1));
            enc_acts.push(Activation::new(Act::LeakyRelu(0.2)));
            prev = c;
        }
        let l = channels.len();
        let mut dec = Vec::new();
        let mut dec_acts = Vec::new();
        for j in (0..l - 1).rev() {
            // decoder at level j produces channels[j], consuming the previous
            // decoder output concatenated with the skip (except the first,
            // which consumes the bottleneck alone)
            let in_c = if j == l - 2 {
                channels[l - 1]
            } else {
                2 * channels[j + 1]
            };
            dec.push(Conv2d::new(rng, in_c, channels[j], 3, 1, 1));
            dec_acts.push(Activation::new(Act::Relu));
        }
        let out_conv = Conv2d::new(rng, 2 * channels[0], 3, 3, 1, 1);
        UNet {
            enc,
            enc_acts,
            dec,
            dec_acts,
            out_conv,
            out_act: Sigmoid::new(),
            up: Upsample2x,
            skips: Vec::new(),
            zero_bottleneck: false,
        }
    }

    pub fn levels(&self) -> usize {
        self.enc.len()
    }

    /// Diagnostic switch used by the skip-connection test: zero the deepest
    /// activations before decoding.
    pub fn set_zero_bottleneck(&mut self, on: bool) {
        self.zero_bottleneck = on;
    }

    pub fn forward(&mut self, x: &Array4<f64>) -> Array4<f64> {
        self.skips.clear();
        let mut h = x.clone();
        for i in 0..self.enc.len() {
            h = self.enc[i].forward(&h);
            h = self.enc_acts[i]
                .forward(&h.into_dyn())
                .into_dimensionality()
                .unwrap();
            self.skips.push(h.clone());
        }
        if self.zero_bottleneck {
            h.fill(0.0);
        }
        let l = self.enc.len();
        for (di, j) in (0..l - 1).rev().enumerate() {
            let up = self.up.forward(&h);
            let mut d = self.dec[di].forward(&up);
            d = self.dec_acts[di]
                .forward(&d.into_dyn())
                .into_dimensionality()
                .unwrap();
            h = concat_channels(&d, &self.skips[j]);
        }
        let up = self.up.forward(&h);
        let o = self.out_conv.forward(&up);
        self.out_act
            .forward(&o.into_dyn())
            .into_dimensionality()
            .unwrap()
    }

    pub fn backward(&mut self, grad: &Array4<f64>) -> Array4<f64> {
        let l = self.enc.len();
        let g = self
            .out_act
            .backward(&grad.clone().into_dyn())
            .into_dimensionality::<ndarray::Ix4>()
            .unwrap();
        let g = self.out_conv.backward(&g);
        let mut g = self.up.backward(&g);

        // Split gradients flowing into each [decoder output, skip] concat.
        let mut skip_grads: Vec<Option<Array4<f64>>> = vec![None; l];
        for (di, j) in (0..l - 1).rev().enumerate().rev() {
            let d_ch = self.dec[di].out_ch();
            let (gd, gskip) = split_channels(&g, d_ch);
            skip_grads[j] = Some(gskip);
            let gd = self.dec_acts[di]
                .backward(&gd.into_dyn())
                .into_dimensionality()
                .unwrap();
            let gd = self.dec[di].backward(&gd);
            g = self.up.backward(&gd);
        }
        if self.zero_bottleneck {
            g.fill(0.0);
        }
        // Encoder chain, adding each skip's gradient where it branched off.
        for i in (0..l).rev() {
            if i < l - 1 {
                if let Some(sg) = &skip_grads[i] {
                    g += sg;
                }
            }
            let ga = self.enc_acts[i]
                .backward(&g.into_dyn())
                .into_dimensionality()
                .unwrap();
            g = self.enc[i].backward(&ga);
        }
        g
    }
}

impl Net for UNet {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        for (i, c) in self.enc.iter_mut().enumerate() {
            visit_scoped(c, &format!("enc{i}"), f);
        }
        for (i, c) in self.dec.iter_mut().enumerate() {
            visit_scoped(c, &format!("dec{i}"), f);
        }
        visit_scoped(&mut self.out_conv, "out", f);
    }
}

fn concat_channels(a: &Array4<f64>, b: &Array4<f64>) -> Array4<f64> {
    ndarray::concatenate(Axis(1), &[a.view(), b.view()]).expect("matching shapes")
}

fn split_channels(g: &Array4<f64>, first: usize) -> (Array4<f64>, Array4<f64>) {
    let a = g.slice(ndarray::s![.., 0..first, .., ..]).to_owned();
    let b = g.slice(ndarray::s![.., first.., .., ..]).to_owned();
    (a, b)
}

/// Strided-convolution image classifier ending in a sigmoid probability. The
/// discriminator always sees the whole frame so the generator is pushed to
/// blend the head with its surroundings.
#[derive(Debug, Clone)]
pub struct HeadDiscriminator {
    convs: Vec<Conv2d>,
    acts: Vec<Activation>,
    classify: Linear,
    sigmoid: Sigmoid,
    feat_shape: Option<(usize, usize, usize)>,
}

impl HeadDiscriminator {
    pub fn new<R: Rng>(rng: &mut R, size: usize, channels: &[usize]) -> Self {
        let mut convs = Vec::new();
        let mut acts = Vec::new();
        let mut prev = 3;
        let mut hw = size;
        for &c in channels {
            convs.push(Conv2d::new(rng, prev, c, 3, 2, 1));
            acts.push(Activation::new(Act::LeakyRelu(0.2)));
            prev = c;
            hw /= 2;
        }
        HeadDiscriminator {
            convs,
            acts,
            classify: Linear::new(rng, prev * hw * hw, 1),
            sigmoid: Sigmoid::new(),
            feat_shape: None,
        }
    }

    pub fn forward(&mut self, images: &Array4<f64>) -> ndarray::Array2<f64> {
        let mut h = images.clone();
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
        let p = self
            .sigmoid
            .forward(&logits.into_dyn())
            .into_dimensionality()
            .unwrap();
        debug_assert!(p.iter().all(|&v: &f64| v > 0.0 && v < 1.0));
        p
    }

    pub fn backward_to_input(&mut self, grad_prob: &ndarray::Array2<f64>) -> Array4<f64> {
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

impl Net for HeadDiscriminator {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        for (i, c) in self.convs.iter_mut().enumerate() {
            visit_scoped(c, &format!("conv{i}"), f);
        }
        visit_scoped(&mut self.classify, "classify", f);
    }
}
