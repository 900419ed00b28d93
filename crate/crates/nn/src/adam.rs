use crate::param::Net;

/// Adam with bias correction. Moment buffers live in each `Param`; only the
/// step counter is kept here, so checkpointing a network plus this counter
/// restores the optimizer exactly.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
        }
    }
}

impl Adam {
    pub fn step(&mut self, net: &mut dyn Net, lr: f64) {
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        net.visit_params(&mut |_, p| {
            if !p.trainable {
                return;
            }
            let g = &p.grad;
            p.m.zip_mut_with(g, |m, &g| *m = b1 * *m + (1.0 - b1) * g);
            p.v.zip_mut_with(g, |v, &g| *v = b2 * *v + (1.0 - b2) * g * g);
            let m = &p.m;
            let v = &p.v;
            ndarray::Zip::from(&mut p.value)
                .and(m)
                .and(v)
                .for_each(|w, &m, &v| {
                    let mhat = m / bc1;
                    let vhat = v / bc2;
                    *w -= lr * mhat / (vhat.sqrt() + eps);
                });
        });
    }
}

/// Step-decay learning rate: `base * 0.5^(iter / halve_every)`.
pub fn halving_lr(base: f64, iter: u64, halve_every: u64) -> f64 {
    if halve_every == 0 {
        return base;
    }
    base * 0.5f64.powi((iter / halve_every) as i32)
}
