use crate::decoder::IdModel;
use crate::real::Real;

/// Adam without weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: IdModel<T>,
    pub v: IdModel<T>,
}

impl<T: Real> Adam<T> {
    pub fn new(model: &IdModel<T>) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: model.zeros_like(),
            v: model.zeros_like(),
        }
    }

    pub fn update(&mut self, model: &mut IdModel<T>, grads: &IdModel<T>, lr: f64) {
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let step = T::of(lr * c2.sqrt() / c1);
        let eps = T::of(self.eps * c2.sqrt());
        let (b1, b2) = (T::of(b1), T::of(b2));
        let one = T::one();
        let params = model.params_mut();
        let ms = self.m.params_mut();
        let vs = self.v.params_mut();
        for ((((_, p), (_, g)), (_, m)), (_, v)) in params.into_iter().zip(grads.params()).zip(ms).zip(vs) {
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                *p -= step * *m / (v.sqrt() + eps);
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::DecoderConfig;

    #[test]
    fn first_step_moves_each_weight_by_lr() {
        let cfg = DecoderConfig {
            feature_dim: 2,
            num_layers: 1,
            num_heads: 1,
            max_rel_offset: 2,
            ..DecoderConfig::default()
        };
        let mut model = IdModel::<f64>::init(&cfg, 2).unwrap();
        let before = model.clone();
        let mut grads = model.zeros_like();
        grads.weights.head.bias.fill(3.0);
        let mut adam = Adam::new(&model);
        adam.update(&mut model, &grads, 0.01);
        let diff = &before.weights.head.bias - &model.weights.head.bias;
        assert!(diff.iter().all(|d| (d - 0.01).abs() < 1e-9));
        assert_eq!(model.weights.head.weight, before.weights.head.weight);
    }
}
