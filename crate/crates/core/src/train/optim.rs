use ndarray::Array2;

use crate::error::{Error, Result};

/// SGD with heavy-ball momentum and coupled L2 weight decay:
/// `v <- mu v + (g + wd w)`, `w <- w - lr v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Array2<f64>>,
}

impl Sgd {
    pub fn new(params: &[Array2<f64>], momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: params.iter().map(|p| Array2::zeros(p.raw_dim())).collect(),
        }
    }

    pub fn step(&mut self, params: &mut [Array2<f64>], grads: &[Array2<f64>], lr: f64) -> Result<()> {
        if params.len() != self.velocity.len() || grads.len() != params.len() {
            return Err(Error::shape("optimizer state does not match the parameters"));
        }
        for ((w, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            if g.dim() != w.dim() {
                return Err(Error::shape("gradient shape differs from its parameter"));
            }
            let (mu, wd) = (self.momentum, self.weight_decay);
            ndarray::Zip::from(&mut *v).and(g).and(&*w).for_each(|v, &g, &w| {
                *v = mu * *v + g + wd * w;
            });
            w.scaled_add(-lr, v);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn two_steps_by_hand() {
        let mut w = vec![array![[1.0, -2.0]]];
        let mut opt = Sgd::new(&w, 0.9, 0.1);
        opt.step(&mut w, &[array![[0.5, 0.5]]], 0.1).unwrap();
        // v = g + 0.1 w = [0.6, 0.3]; w = [0.94, -2.03]
        assert!((w[0][[0, 0]] - 0.94).abs() < 1e-15);
        assert!((w[0][[0, 1]] + 2.03).abs() < 1e-15);
        opt.step(&mut w, &[array![[0.0, 0.0]]], 0.1).unwrap();
        // v = 0.9 [0.6, 0.3] + 0.1 [0.94, -2.03] = [0.634, 0.067]
        assert!((w[0][[0, 0]] - (0.94 - 0.0634)).abs() < 1e-12);
        assert!((w[0][[0, 1]] - (-2.03 - 0.0067)).abs() < 1e-12);
    }
}
