//! A small MLP with hand-written reverse mode.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Task, TrainError};
use crate::tensor::{sigmoid_poly_grad, Tensor};

pub const INIT_STD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    /// `x . W + b` with `W: [inp, out]`, `b: [out]`.
    Linear {
        inp: usize,
        out: usize,
    },
    SigmoidPoly,
}

impl Layer {
    pub fn num_params(&self) -> usize {
        match *self {
            Layer::Linear { inp, out } => inp * out + out,
            Layer::SigmoidPoly => 0,
        }
    }
}

/// Layers plus one flat parameter vector, laid out layer by layer as
/// `W` (row-major) then `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    layers: Vec<Layer>,
    params: Vec<f64>,
}

/// Layer stack for `dims = [d, h1, ..., 1]`: polynomial sigmoid after every
/// hidden layer, and after the output for binary tasks.
pub fn mlp_layers(dims: &[usize], task: Task) -> Result<Vec<Layer>, TrainError> {
    if dims.len() < 2 || dims.contains(&0) {
        return Err(TrainError::Config(format!("invalid layer sizes {dims:?}")));
    }
    let mut layers = Vec::new();
    for (i, w) in dims.windows(2).enumerate() {
        layers.push(Layer::Linear {
            inp: w[0],
            out: w[1],
        });
        let last = i == dims.len() - 2;
        if !last || task == Task::Binary {
            layers.push(Layer::SigmoidPoly);
        }
    }
    Ok(layers)
}

struct Cache {
    /// Input to each layer.
    inputs: Vec<Tensor>,
}

impl Model {
    pub fn new(layers: Vec<Layer>, params: Vec<f64>) -> Result<Self, TrainError> {
        let mut width = None;
        for l in &layers {
            if let Layer::Linear { inp, out } = *l {
                if let Some(w) = width {
                    if w != inp {
                        return Err(TrainError::Shape(format!(
                            "layer expects {inp} inputs but previous layer gives {w}"
                        )));
                    }
                }
                width = Some(out);
            }
        }
        let expected: usize = layers.iter().map(Layer::num_params).sum();
        if params.len() != expected {
            return Err(TrainError::Shape(format!(
                "model needs {expected} parameters, got {}",
                params.len()
            )));
        }
        Ok(Model { layers, params })
    }

    /// Weights drawn from N(0, INIT_STD^2), biases zero.
    pub fn init<R: Rng + ?Sized>(layers: Vec<Layer>, rng: &mut R) -> Result<Self, TrainError> {
        let normal = Normal::new(0.0, INIT_STD).expect("finite std");
        let mut params = Vec::new();
        for l in &layers {
            if let Layer::Linear { inp, out } = *l {
                params.extend((0..inp * out).map(|_| normal.sample(rng)));
                params.extend(std::iter::repeat_n(0.0, out));
            }
        }
        Model::new(layers, params)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// `(W, b)` for every Linear layer, in order.
    pub fn linear_params(&self) -> Vec<(Tensor, Tensor)> {
        let mut off = 0;
        let mut out = Vec::new();
        for l in &self.layers {
            if let Layer::Linear { inp, out: o } = *l {
                let w = Tensor::from_f64([inp, o], self.params[off..off + inp * o].to_vec())
                    .expect("sizes match");
                off += inp * o;
                let b =
                    Tensor::from_f64([o], self.params[off..off + o].to_vec()).expect("sizes match");
                off += o;
                out.push((w, b));
            }
        }
        out
    }

    /// θ ← θ − lr·g
    pub fn apply_update(&mut self, grad: &[f64], lr: f64) -> Result<(), TrainError> {
        if grad.len() != self.params.len() {
            return Err(TrainError::Shape(format!(
                "gradient has {} entries, model has {}",
                grad.len(),
                self.params.len()
            )));
        }
        for (p, g) in self.params.iter_mut().zip(grad) {
            *p -= lr * g;
        }
        Ok(())
    }

    fn input_dim(&self) -> Option<usize> {
        self.layers.iter().find_map(|l| match *l {
            Layer::Linear { inp, .. } => Some(inp),
            Layer::SigmoidPoly => None,
        })
    }

    fn run(&self, x: &Tensor) -> Result<(Tensor, Cache), TrainError> {
        let d = self.input_dim().unwrap_or(0);
        if x.dims().len() != 2 || x.dims()[1] != d {
            return Err(TrainError::Shape(format!(
                "input {} does not match model input width {d}",
                x.shape()
            )));
        }
        let mut a = x.clone();
        let mut inputs = Vec::with_capacity(self.layers.len());
        let params = self.linear_params();
        let mut lin = params.iter();
        for l in &self.layers {
            inputs.push(a.clone());
            a = match l {
                Layer::Linear { .. } => {
                    let (w, b) = lin.next().expect("one entry per linear layer");
                    a.matmul(w)?.add_rows(b)?
                }
                Layer::SigmoidPoly => a.sigmoid_poly()?,
            };
        }
        Ok((a, Cache { inputs }))
    }

    /// Model outputs `[B, out]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor, TrainError> {
        Ok(self.run(x)?.0)
    }

    /// Flattened single-output predictions.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<f64>, TrainError> {
        Ok(self.forward(x)?.into_f64()?)
    }

    fn backward(&self, cache: &Cache, mut delta: Tensor) -> Result<Vec<f64>, TrainError> {
        let params = self.linear_params();
        let mut grads: Vec<Vec<f64>> = Vec::with_capacity(params.len());
        let mut lin = params.iter().rev();
        for (l, input) in self.layers.iter().zip(&cache.inputs).rev() {
            match l {
                Layer::Linear { .. } => {
                    let (w, _) = lin.next().expect("one entry per linear layer");
                    let dw = input.transpose()?.matmul(&delta)?;
                    let db = delta.sum_rows()?;
                    let mut g = dw.into_f64()?;
                    g.extend(db.into_f64()?);
                    grads.push(g);
                    delta = delta.matmul(&w.transpose()?)?;
                }
                Layer::SigmoidPoly => {
                    let d: Vec<f64> = delta
                        .as_f64()?
                        .iter()
                        .zip(input.as_f64()?)
                        .map(|(g, &z)| g * sigmoid_poly_grad(z))
                        .collect();
                    delta = Tensor::from_f64(delta.shape().clone(), d)?;
                }
            }
        }
        Ok(grads.into_iter().rev().flatten().collect())
    }

    fn check_targets(x: &Tensor, y: &[f64]) -> Result<usize, TrainError> {
        let b = x.dims().first().copied().unwrap_or(0);
        if b == 0 || b != y.len() {
            return Err(TrainError::Shape(format!(
                "{} input rows for {} targets",
                b,
                y.len()
            )));
        }
        Ok(b)
    }

    /// Mean squared error over the batch and its gradient.
    pub fn loss_and_grad(&self, x: &Tensor, y: &[f64]) -> Result<(f64, Vec<f64>), TrainError> {
        let b = Self::check_targets(x, y)?;
        let (out, cache) = self.run(x)?;
        let pred = out.as_f64()?;
        if pred.len() != b {
            return Err(TrainError::Shape("model must have a single output".into()));
        }
        let loss = pred
            .iter()
            .zip(y)
            .map(|(p, t)| (p - t).powi(2))
            .sum::<f64>()
            / b as f64;
        let dout: Vec<f64> = pred
            .iter()
            .zip(y)
            .map(|(p, t)| 2.0 * (p - t) / b as f64)
            .collect();
        let grad = self.backward(&cache, Tensor::from_f64([b, 1], dout)?)?;
        Ok((loss, grad))
    }

    /// One gradient per row; their mean is the batch gradient.
    pub fn per_example_grads(&self, x: &Tensor, y: &[f64]) -> Result<Vec<Vec<f64>>, TrainError> {
        let b = Self::check_targets(x, y)?;
        let d = x.dims()[1];
        let xs = x.as_f64()?;
        (0..b)
            .map(|i| {
                let row = Tensor::from_f64([1, d], xs[i * d..(i + 1) * d].to_vec())?;
                Ok(self.loss_and_grad(&row, &y[i..i + 1])?.1)
            })
            .collect()
    }

    pub fn loss(&self, x: &Tensor, y: &[f64]) -> Result<f64, TrainError> {
        let b = Self::check_targets(x, y)?;
        let pred = self.predict(x)?;
        Ok(pred
            .iter()
            .zip(y)
            .map(|(p, t)| (p - t).powi(2))
            .sum::<f64>()
            / b as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn random_input(rng: &mut ChaCha20Rng, b: usize, d: usize) -> (Tensor, Vec<f64>) {
        let x = (0..b * d).map(|_| rng.random_range(-1.5..1.5)).collect();
        let y = (0..b).map(|_| rng.random_range(-1.0..1.0)).collect();
        (Tensor::from_f64([b, d], x).unwrap(), y)
    }

    #[test]
    fn layer_stacks() {
        assert_eq!(
            mlp_layers(&[13, 32, 1], Task::Regression).unwrap(),
            vec![
                Layer::Linear { inp: 13, out: 32 },
                Layer::SigmoidPoly,
                Layer::Linear { inp: 32, out: 1 }
            ]
        );
        assert_eq!(mlp_layers(&[8, 32, 1], Task::Binary).unwrap().len(), 4);
        let m = Model::init(
            mlp_layers(&[13, 32, 1], Task::Regression).unwrap(),
            &mut ChaCha20Rng::seed_from_u64(0),
        )
        .unwrap();
        assert_eq!(m.num_params(), 13 * 32 + 32 + 32 + 1);
        assert!(Model::new(
            vec![
                Layer::Linear { inp: 2, out: 3 },
                Layer::Linear { inp: 2, out: 1 }
            ],
            vec![0.0; 11]
        )
        .is_err());
    }

    #[test]
    fn linear_closed_form_gradient() {
        // 1 example, W: [3,1], b: [1]; grad = 2(Wx+b-y) [x, 1]
        let params = vec![0.5, -0.25, 1.0, 0.1];
        let m = Model::new(vec![Layer::Linear { inp: 3, out: 1 }], params).unwrap();
        let x = [1.0, 2.0, -1.0];
        let y = 0.3;
        let r: f64 = 0.5 * 1.0 - 0.25 * 2.0 + 1.0 * -1.0 + 0.1 - y;
        let (_, g) = m
            .loss_and_grad(&Tensor::from_f64([1, 3], x.to_vec()).unwrap(), &[y])
            .unwrap();
        let want = [2.0 * r * x[0], 2.0 * r * x[1], 2.0 * r * x[2], 2.0 * r];
        for (a, b) in g.iter().zip(want) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    fn finite_difference_check(task: Task, dims: &[usize], seed: u64) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut m = Model::init(mlp_layers(dims, task).unwrap(), &mut rng).unwrap();
        // non-zero biases so every parameter matters
        for p in m.params_mut() {
            *p += rng.random_range(-0.3..0.3);
        }
        let (x, y) = random_input(&mut rng, 5, dims[0]);
        let (_, g) = m.loss_and_grad(&x, &y).unwrap();
        let h = 1e-5;
        for i in 0..m.num_params() {
            let mut plus = m.clone();
            plus.params_mut()[i] += h;
            let mut minus = m.clone();
            minus.params_mut()[i] -= h;
            let fd = (plus.loss(&x, &y).unwrap() - minus.loss(&x, &y).unwrap()) / (2.0 * h);
            let tol = 1e-4 * fd.abs().max(g[i].abs()).max(1e-3);
            assert!((fd - g[i]).abs() <= tol, "param {i}: fd {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        finite_difference_check(Task::Regression, &[4, 6, 1], 1);
        finite_difference_check(Task::Binary, &[3, 5, 1], 2);
        finite_difference_check(Task::Regression, &[3, 4, 3, 1], 3);
    }

    #[test]
    fn per_example_mean_is_batch_gradient() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let m = Model::init(mlp_layers(&[5, 8, 1], Task::Binary).unwrap(), &mut rng).unwrap();
        let (x, y) = random_input(&mut rng, 16, 5);
        let (_, batch) = m.loss_and_grad(&x, &y).unwrap();
        let per = m.per_example_grads(&x, &y).unwrap();
        for (j, b) in batch.iter().enumerate() {
            let mean = per.iter().map(|g| g[j]).sum::<f64>() / per.len() as f64;
            assert!((mean - b).abs() <= 1e-12, "param {j}");
        }
    }

    #[test]
    fn zero_scaled_update_is_identity() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let mut m =
            Model::init(mlp_layers(&[3, 4, 1], Task::Regression).unwrap(), &mut rng).unwrap();
        let before = m.params().to_vec();
        let (x, y) = random_input(&mut rng, 4, 3);
        let (_, g) = m.loss_and_grad(&x, &y).unwrap();
        m.apply_update(&g, 0.0).unwrap();
        assert!(m
            .params()
            .iter()
            .zip(&before)
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn shape_errors() {
        let m = Model::new(vec![Layer::Linear { inp: 2, out: 1 }], vec![0.0; 3]).unwrap();
        let x = Tensor::from_f64([1, 3], vec![0.0; 3]).unwrap();
        assert!(matches!(
            m.loss_and_grad(&x, &[0.0]),
            Err(TrainError::Shape(_))
        ));
        let x = Tensor::from_f64([2, 2], vec![0.0; 4]).unwrap();
        assert!(matches!(
            m.loss_and_grad(&x, &[0.0]),
            Err(TrainError::Shape(_))
        ));
    }
}
