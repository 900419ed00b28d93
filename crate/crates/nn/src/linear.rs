use ndarray::{Array2, Ix2};
use rand::Rng;

use crate::init;
use crate::param::{Net, Param};

/// Fully connected layer, `y = x W^T + b`, over batches shaped `(N, in)`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Param, // (out, in)
    pub bias: Param,   // (out)
    input: Option<Array2<f64>>,
}

impl Linear {
    pub fn new<R: Rng>(rng: &mut R, in_dim: usize, out_dim: usize) -> Self {
        Linear {
            weight: Param::new(init::he_uniform(rng, &[out_dim, in_dim], in_dim)),
            bias: Param::new(init::zeros(&[out_dim])),
            input: None,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn forward(&mut self, x: &Array2<f64>) -> Array2<f64> {
        self.input = Some(x.clone());
        let w = self.weight.value.view().into_dimensionality::<Ix2>().unwrap();
        let mut y = x.dot(&w.t());
        let b = &self.bias.value;
        for mut row in y.rows_mut() {
            for (v, bv) in row.iter_mut().zip(b.iter()) {
                *v += bv;
            }
        }
        y
    }

    pub fn backward(&mut self, grad: &Array2<f64>) -> Array2<f64> {
        let x = self.input.as_ref().expect("backward before forward");
        let w = self.weight.value.view().into_dimensionality::<Ix2>().unwrap();
        let dw = grad.t().dot(x);
        let db = grad.sum_axis(ndarray::Axis(0));
        let dx = grad.dot(&w);
        self.weight.grad += &dw;
        self.bias.grad += &db;
        dx
    }
}

impl Net for Linear {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        f("weight", &mut self.weight);
        f("bias", &mut self.bias);
    }
}
