//! AdamW with decoupled weight decay.

use super::{Gradient, RetrieverParams};

#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub steps: u64,
    m: Gradient,
    v: Gradient,
}

impl AdamW {
    pub fn new(params: &RetrieverParams, learning_rate: f64, weight_decay: f64) -> Self {
        AdamW {
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            steps: 0,
            m: Gradient::zeros_like(params),
            v: Gradient::zeros_like(params),
        }
    }

    /// One update. Embeddings are decayed as `θ ← θ·(1 − lr·wd)` before the
    /// adaptive step; the bias is not decayed.
    pub fn step(&mut self, params: &mut RetrieverParams, grad: &Gradient) {
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let shrink = 1.0 - self.learning_rate * self.weight_decay;
        let groups = [
            (&mut params.input, &grad.input, &mut self.m.input, &mut self.v.input, true),
            (&mut params.output, &grad.output, &mut self.m.output, &mut self.v.output, true),
            (&mut params.bias, &grad.bias, &mut self.m.bias, &mut self.v.bias, false),
        ];
        for (theta, g, m, v, decay) in groups {
            for k in 0..theta.len() {
                if decay {
                    theta[k] *= shrink;
                }
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                theta[k] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retriever::RetrieverConfig;

    fn params() -> RetrieverParams {
        let cfg = RetrieverConfig { embedding_dim: 3, ..Default::default() };
        RetrieverParams::init(&cfg, 6, 3, 3).unwrap()
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let mut p = params();
        let before = p.clone();
        let mut g = Gradient::zeros_like(&p);
        g.input.iter_mut().for_each(|x| *x = 1.5);
        g.bias.iter_mut().for_each(|x| *x = -2.0);
        let mut opt = AdamW::new(&p, 0.0, 0.5);
        opt.step(&mut p, &g);
        assert_eq!(p, before);
    }

    #[test]
    fn decay_is_decoupled_from_gradient() {
        let mut p = params();
        let before = p.clone();
        let g = Gradient::zeros_like(&p);
        let mut opt = AdamW::new(&p, 0.1, 0.5);
        opt.step(&mut p, &g);
        for (a, b) in p.input.iter().zip(&before.input) {
            assert_eq!(*a, b * (1.0 - 0.05));
        }
        assert_eq!(p.bias, before.bias);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // bias-corrected first step is lr * g / (|g| + eps)
        let mut p = params();
        let mut g = Gradient::zeros_like(&p);
        g.bias[0] = 4.0;
        g.bias[1] = -0.5;
        let mut opt = AdamW::new(&p, 0.01, 0.0);
        opt.step(&mut p, &g);
        assert!((p.bias[0] + 0.01).abs() < 1e-9);
        assert!((p.bias[1] - 0.01).abs() < 1e-9);
        assert_eq!(p.bias[2], 0.0);
    }
}
