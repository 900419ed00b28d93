use ndarray::{Array2, Array4};
use rand::Rng;

use crate::act::{Act, Activation};
use crate::conv::Conv2d;
use crate::linear::Linear;
use crate::param::{visit_scoped, Net, Param};

/// Residual convolution block that halves the spatial resolution.
///
/// Main path: 3x3 stride-2 conv, activation, 3x3 conv. Shortcut: 1x1
/// stride-2 conv. Output: activation(main + shortcut).
#[derive(Debug, Clone)]
pub struct ConvDownBlock {
    conv1: Conv2d,
    conv2: Conv2d,
    shortcut: Conv2d,
    act_mid: Activation,
    act_out: Activation,
}

impl ConvDownBlock {
    pub fn new<R: Rng>(rng: &mut R, in_ch: usize, out_ch: usize, act: Act) -> Self {
        ConvDownBlock {
            conv1: Conv2d::new(rng, in_ch, out_ch, 3, 2, 1),
            conv2: Conv2d::new(rng, out_ch, out_ch, 3, 1, 1),
            shortcut: Conv2d::new(rng, in_ch, out_ch, 1, 2, 0),
            act_mid: Activation::new(act),
            act_out: Activation::new(act),
        }
    }

    pub fn forward(&mut self, x: &Array4<f64>) -> Array4<f64> {
        let a = self.conv1.forward(x);
        let a = self.act_mid.forward(&a.into_dyn());
        let a = self.conv2.forward(&a.into_dimensionality().unwrap());
        let s = self.shortcut.forward(x);
        let sum = (&a + &s).into_dyn();
        self.act_out
            .forward(&sum)
            .into_dimensionality()
            .unwrap()
    }

    pub fn backward(&mut self, grad: &Array4<f64>) -> Array4<f64> {
        let g = self.act_out.backward(&grad.clone().into_dyn());
        let g: Array4<f64> = g.into_dimensionality().unwrap();
        let gs = self.shortcut.backward(&g);
        let gm = self.conv2.backward(&g);
        let gm = self.act_mid.backward(&gm.into_dyn());
        let gm = self.conv1.backward(&gm.into_dimensionality().unwrap());
        gm + gs
    }
}

impl Net for ConvDownBlock {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        visit_scoped(&mut self.conv1, "conv1", f);
        visit_scoped(&mut self.conv2, "conv2", f);
        visit_scoped(&mut self.shortcut, "shortcut", f);
    }
}

/// Fully connected residual block: `relu(x + lin2(relu(lin1(x))))`.
#[derive(Debug, Clone)]
pub struct FcResBlock {
    lin1: Linear,
    lin2: Linear,
    act_mid: Activation,
    act_out: Activation,
}

impl FcResBlock {
    pub fn new<R: Rng>(rng: &mut R, dim: usize) -> Self {
        FcResBlock {
            lin1: Linear::new(rng, dim, dim),
            lin2: Linear::new(rng, dim, dim),
            act_mid: Activation::new(Act::Relu),
            act_out: Activation::new(Act::Relu),
        }
    }

    pub fn forward(&mut self, x: &Array2<f64>) -> Array2<f64> {
        let a = self.lin1.forward(x);
        let a = self.act_mid.forward(&a.into_dyn());
        let a = self.lin2.forward(&a.into_dimensionality().unwrap());
        let sum = (&a + x).into_dyn();
        self.act_out.forward(&sum).into_dimensionality().unwrap()
    }

    pub fn backward(&mut self, grad: &Array2<f64>) -> Array2<f64> {
        let g = self.act_out.backward(&grad.clone().into_dyn());
        let g: Array2<f64> = g.into_dimensionality().unwrap();
        let gm = self.lin2.backward(&g);
        let gm = self.act_mid.backward(&gm.into_dyn());
        let gm = self.lin1.backward(&gm.into_dimensionality().unwrap());
        gm + &g
    }
}

impl Net for FcResBlock {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        visit_scoped(&mut self.lin1, "lin1", f);
        visit_scoped(&mut self.lin2, "lin2", f);
    }
}
