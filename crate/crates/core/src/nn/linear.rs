//! Fully-connected layer.

use super::ParamBlock;
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal};

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Array2<f64>, // (out, in)
    pub bias: Array1<f64>,
    pub grad_weight: Array2<f64>,
    pub grad_bias: Array1<f64>,
}

impl Linear {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let std = (2.0 / in_dim as f64).sqrt();
        let normal = Normal::new(0.0, std).unwrap();
        let weight = Array2::from_shape_fn((out_dim, in_dim), |_| normal.sample(rng));
        Linear {
            grad_weight: Array2::zeros(weight.dim()),
            weight,
            bias: Array1::zeros(out_dim),
            grad_bias: Array1::zeros(out_dim),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight.t()) + &self.bias
    }

    pub fn backward(&mut self, x: &Array2<f64>, grad_out: &Array2<f64>) -> Array2<f64> {
        self.grad_weight += &grad_out.t().dot(x);
        for (gb, col) in self
            .grad_bias
            .iter_mut()
            .zip(grad_out.t().rows())
        {
            *gb += col.sum();
        }
        grad_out.dot(&self.weight)
    }

    pub fn collect_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamBlock<'a>>) {
        out.push(ParamBlock {
            name: format!("{prefix}.w"),
            values: self.weight.as_slice_mut().expect("contiguous"),
            grads: Some(self.grad_weight.as_slice_mut().expect("contiguous")),
        });
        out.push(ParamBlock {
            name: format!("{prefix}.b"),
            values: self.bias.as_slice_mut().expect("contiguous"),
            grads: Some(self.grad_bias.as_slice_mut().expect("contiguous")),
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut lin = Linear::new(5, 3, &mut rng);
        let x = Array2::from_shape_fn((2, 5), |_| rng.gen::<f64>() - 0.5);
        let w_loss = Array2::from_shape_fn((2, 3), |(i, j)| (i + j) as f64 - 1.0);
        let loss = |lin: &Linear, x: &Array2<f64>| (lin.forward(x) * &w_loss).sum();

        let grad_x = lin.backward(&x, &w_loss);
        let h = 1e-6;
        for idx in [(0, 0), (1, 4), (0, 2)] {
            let mut xp = x.clone();
            xp[idx] += h;
            let mut xm = x.clone();
            xm[idx] -= h;
            let fd = (loss(&lin, &xp) - loss(&lin, &xm)) / (2.0 * h);
            assert!((fd - grad_x[idx]).abs() < 1e-7);
        }
        for idx in [(0, 0), (2, 4)] {
            let orig = lin.weight[idx];
            lin.weight[idx] = orig + h;
            let up = loss(&lin, &x);
            lin.weight[idx] = orig - h;
            let down = loss(&lin, &x);
            lin.weight[idx] = orig;
            let fd = (up - down) / (2.0 * h);
            assert!((fd - lin.grad_weight[idx]).abs() < 1e-7);
        }
    }
}
