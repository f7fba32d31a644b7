//! SGD with momentum, L2 weight decay, and an ascent mode used by the
//! unlearning stage.

use super::Param;
use ndarray::ArrayD;

#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    /// When true the step is `w += lr * g` (gradient ascent).
    pub maximize: bool,
    velocity: Vec<ArrayD<f32>>,
}

impl Sgd {
    pub fn new(lr: f32, momentum: f32, weight_decay: f32, maximize: bool) -> Self {
        Sgd {
            lr,
            momentum,
            weight_decay,
            maximize,
            velocity: Vec::new(),
        }
    }

    /// Apply one update to `params` from their accumulated gradients.
    pub fn step(&mut self, params: &mut [&mut Param]) {
        if self.velocity.is_empty() {
            self.velocity = params
                .iter()
                .map(|p| ArrayD::zeros(p.value.raw_dim()))
                .collect();
        }
        assert_eq!(self.velocity.len(), params.len(), "optimizer/param count");
        for (p, v) in params.iter_mut().zip(self.velocity.iter_mut()) {
            let mut g = p.grad.clone();
            if self.weight_decay > 0.0 && p.decay {
                g.scaled_add(self.weight_decay, &p.value);
            }
            if self.momentum > 0.0 {
                v.mapv_inplace(|x| x * self.momentum);
                *v += &g;
                g.assign(v);
            }
            if self.maximize {
                p.value.scaled_add(self.lr, &g);
            } else {
                p.value.scaled_add(-self.lr, &g);
            }
        }
    }
}
