//! SGD with momentum and L2 weight decay.
//!
//! Update per trainable element: `g ← grad + wd·θ`, `v ← μ·v + g`,
//! `θ ← θ − lr·v`.

#[derive(Clone, Debug, PartialEq)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<f64>,
    mask: Vec<bool>,
}

impl Sgd {
    pub fn new(num_params: usize, momentum: f64, weight_decay: f64, mask: Vec<bool>) -> Self {
        assert_eq!(mask.len(), num_params);
        Self {
            momentum,
            weight_decay,
            velocity: vec![0.0; num_params],
            mask,
        }
    }

    pub fn velocity(&self) -> &[f64] {
        &self.velocity
    }

    pub fn set_velocity(&mut self, v: Vec<f64>) {
        assert_eq!(v.len(), self.velocity.len());
        self.velocity = v;
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        for (((p, g), v), &m) in params
            .iter_mut()
            .zip(grad)
            .zip(self.velocity.iter_mut())
            .zip(&self.mask)
        {
            if !m {
                continue;
            }
            let d = g + self.weight_decay * *p;
            *v = self.momentum * *v + d;
            *p -= lr * *v;
        }
    }
}
