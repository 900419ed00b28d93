use ndarray::ArrayD;

/// A trainable tensor together with its gradient and Adam moment estimates.
///
/// Moments live here rather than in the optimizer so that saving every
/// `Param` of a network captures the complete training state; resuming from
/// a checkpoint then continues the exact same trajectory.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: ArrayD<f64>,
    pub grad: ArrayD<f64>,
    pub m: ArrayD<f64>,
    pub v: ArrayD<f64>,
    /// Frozen parameters still receive gradients during backprop but the
    /// optimizer never applies them.
    pub trainable: bool,
}

impl Param {
    pub fn new(value: ArrayD<f64>) -> Self {
        let zeros = ArrayD::zeros(value.raw_dim());
        Param {
            grad: zeros.clone(),
            m: zeros.clone(),
            v: zeros,
            value,
            trainable: true,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Anything that exposes named parameters.
///
/// Composite networks implement this by delegating to their layers with a
/// path prefix, giving every parameter a stable, unique name used by the
/// checkpoint archive and the optimizer alike. Visit order must be
/// deterministic.
pub trait Net {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param));

    fn zero_grad(&mut self) {
        self.visit_params(&mut |_, p| p.zero_grad());
    }

    fn num_params(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, p| n += p.value.len());
        n
    }

    /// Mark every parameter as frozen (gradients are computed but never applied).
    fn freeze(&mut self) {
        self.visit_params(&mut |_, p| p.trainable = false);
    }
}

/// Visit `net`'s parameters with `prefix.` prepended to each name.
pub fn visit_scoped(net: &mut dyn Net, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
    net.visit_params(&mut |name, p| f(&format!("{prefix}.{name}"), p));
}
