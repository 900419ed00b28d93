use ndarray::ArrayD;

/// Pointwise nonlinearity selector for layers that take one by configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Act {
    Relu,
    LeakyRelu(f64),
}

impl Act {
    pub fn apply(&self, x: f64) -> f64 {
        match *self {
            Act::Relu => x.max(0.0),
            Act::LeakyRelu(a) => {
                if x >= 0.0 {
                    x
                } else {
                    a * x
                }
            }
        }
    }

    pub fn grad(&self, x: f64) -> f64 {
        match *self {
            Act::Relu => {
                if x >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Act::LeakyRelu(a) => {
                if x >= 0.0 {
                    1.0
                } else {
                    a
                }
            }
        }
    }
}

/// Caching activation layer over arbitrary-rank tensors.
#[derive(Debug, Clone)]
pub struct Activation {
    pub act: Act,
    input: Option<ArrayD<f64>>,
}

impl Activation {
    pub fn new(act: Act) -> Self {
        Activation { act, input: None }
    }

    pub fn forward(&mut self, x: &ArrayD<f64>) -> ArrayD<f64> {
        self.input = Some(x.clone());
        x.mapv(|v| self.act.apply(v))
    }

    pub fn backward(&mut self, grad: &ArrayD<f64>) -> ArrayD<f64> {
        let input = self.input.as_ref().expect("backward before forward");
        let mut out = grad.clone();
        out.zip_mut_with(input, |g, &x| *g *= self.act.grad(x));
        out
    }
}

/// Logistic sigmoid with cached output.
#[derive(Debug, Clone, Default)]
pub struct Sigmoid {
    output: Option<ArrayD<f64>>,
}

impl Sigmoid {
    pub fn new() -> Self {
        Sigmoid { output: None }
    }

    pub fn forward(&mut self, x: &ArrayD<f64>) -> ArrayD<f64> {
        let out = x.mapv(|v| 1.0 / (1.0 + (-v).exp()));
        self.output = Some(out.clone());
        out
    }

    pub fn backward(&mut self, grad: &ArrayD<f64>) -> ArrayD<f64> {
        let out = self.output.as_ref().expect("backward before forward");
        let mut g = grad.clone();
        g.zip_mut_with(out, |g, &y| *g *= y * (1.0 - y));
        g
    }
}
