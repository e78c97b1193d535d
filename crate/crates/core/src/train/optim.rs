use crate::encoder::{Matrix, Params};

/// Adam with decoupled weight decay. The temperature is never decayed.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: i32,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    /// Applies one update; `grads` follows the order of [`Params::tensors_mut`].
    pub fn step(&mut self, params: &mut Params, grads: &[Matrix]) {
        let mut tensors = params.tensors_mut();
        assert_eq!(tensors.len(), grads.len(), "one gradient per tensor");
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| Matrix::zeros(g.rows(), g.cols())).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (i, ((name, p), g)) in tensors.iter_mut().zip(grads).enumerate() {
            let decay = if name == "log_inv_temp" { 0.0 } else { self.weight_decay };
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (((x, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let update = (*mv / c1) / ((*vv / c2).sqrt() + self.eps) + decay * *x;
                *x -= self.lr * update;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;

    #[test]
    fn first_step_moves_by_lr_against_the_gradient() {
        let config = EncoderConfig {
            dim: 2,
            ffn_dim: 2,
            layers: 0,
            max_len: 2,
        };
        let mut p = Params::zeros(&config, 3, 3);
        let grads: Vec<Matrix> = p
            .tensors()
            .iter()
            .map(|(_, m)| Matrix::filled(m.rows(), m.cols(), 0.5))
            .collect();
        let mut opt = AdamW::new(0.1, 0.0);
        opt.step(&mut p, &grads);
        for (_, m) in p.tensors() {
            assert!(m.data().iter().all(|&x| (x + 0.1).abs() < 1e-6));
        }
    }

    #[test]
    fn weight_decay_skips_temperature() {
        let config = EncoderConfig {
            dim: 2,
            ffn_dim: 2,
            layers: 0,
            max_len: 2,
        };
        let mut p = Params::zeros(&config, 3, 3);
        for (_, m) in p.tensors_mut() {
            m.data_mut().iter_mut().for_each(|x| *x = 1.0);
        }
        let grads: Vec<Matrix> = p
            .tensors()
            .iter()
            .map(|(_, m)| Matrix::zeros(m.rows(), m.cols()))
            .collect();
        AdamW::new(0.1, 0.5).step(&mut p, &grads);
        assert_eq!(p.log_inv_temp.item(), 1.0);
        assert!((p.cls_w.get(0, 0) - 0.95).abs() < 1e-12);
    }
}
