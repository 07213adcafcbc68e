//! Feed-forward networks with hand-written reverse-mode gradients.
//!
//! Hidden layers are `a = act(W a_prev + b)`; the output layer is affine with a
//! single unit. `backward` returns the exact derivatives of
//! `sum_i dl_dy[i] * y[i]` with respect to every parameter and every input.

use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, shape_err, Result};
use crate::linalg::{gemm, Matrix};
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Silu,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Silu => z / (1.0 + math::exp(-z)),
        }
    }

    /// ReLU'(0) is taken as 0.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Silu => {
                let s = 1.0 / (1.0 + math::exp(-z));
                s + z * s * (1.0 - s)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `d_out x d_in`.
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MlpRecord")]
pub struct MlpParams {
    layers: Vec<Layer>,
    activation: Activation,
}

#[derive(Deserialize)]
struct MlpRecord {
    layers: Vec<Layer>,
    activation: Activation,
}

impl TryFrom<MlpRecord> for MlpParams {
    type Error = crate::Error;

    fn try_from(r: MlpRecord) -> Result<Self> {
        Self::new(r.layers, r.activation)
    }
}

/// Activations of one forward pass, consumed by `backward`.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    batch: usize,
    /// Pre-activations of the hidden layers.
    pre: Vec<Matrix>,
    /// `post[0]` is the input, `post[k]` the activation of hidden layer `k`.
    post: Vec<Matrix>,
}

impl ForwardCache {
    pub fn batch(&self) -> usize {
        self.batch
    }
}

impl MlpParams {
    pub fn new(layers: Vec<Layer>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(arg_err!("network needs at least one layer"));
        }
        for (k, l) in layers.iter().enumerate() {
            if l.bias.len() != l.out_dim() {
                return Err(shape_err!(
                    "layer {k}: bias length {} for {} outputs",
                    l.bias.len(),
                    l.out_dim()
                ));
            }
            if let Some(next) = layers.get(k + 1) {
                if next.in_dim() != l.out_dim() {
                    return Err(shape_err!(
                        "layer {k} outputs {} but layer {} expects {}",
                        l.out_dim(),
                        k + 1,
                        next.in_dim()
                    ));
                }
            }
        }
        let last = layers.last().map_or(0, Layer::out_dim);
        if last != 1 {
            return Err(shape_err!("final layer must have one output, has {last}"));
        }
        Ok(Self { layers, activation })
    }

    /// All-zero network with layer widths `sizes = [d_in, h_1, ..., 1]`.
    pub fn zeros(sizes: &[usize], activation: Activation) -> Result<Self> {
        Self::build(sizes, activation, |_, _| (0.0, 0.0))
    }

    /// Kaiming-uniform weights (`U(-sqrt(6/fan_in), sqrt(6/fan_in))`) and
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` biases.
    pub fn kaiming_uniform<R: Rng + ?Sized>(
        sizes: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut params = Self::zeros(sizes, activation)?;
        for layer in &mut params.layers {
            let fan_in = layer.in_dim() as f64;
            let w_bound = math::sqrt(6.0 / fan_in);
            let b_bound = 1.0 / math::sqrt(fan_in);
            for w in layer.weight.as_mut_slice() {
                *w = rng.random_range(-w_bound..w_bound);
            }
            for b in &mut layer.bias {
                *b = rng.random_range(-b_bound..b_bound);
            }
        }
        Ok(params)
    }

    fn build(
        sizes: &[usize],
        activation: Activation,
        mut fill: impl FnMut(usize, usize) -> (f64, f64),
    ) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(arg_err!("layer sizes must be positive, got {sizes:?}"));
        }
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (d_in, d_out) = (w[0], w[1]);
                let (wv, bv) = fill(d_in, d_out);
                Layer {
                    weight: Matrix::from_vec_unchecked(d_out, d_in, vec![wv; d_in * d_out]),
                    bias: vec![bv; d_out],
                }
            })
            .collect();
        Self::new(layers, activation)
    }

    pub fn zeros_like(&self) -> Self {
        let layers = self
            .layers
            .iter()
            .map(|l| Layer {
                weight: Matrix::zeros(l.out_dim(), l.in_dim()),
                bias: vec![0.0; l.out_dim()],
            })
            .collect();
        Self {
            layers,
            activation: self.activation,
        }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.as_slice().len() + l.bias.len())
            .sum()
    }

    /// Parameter tensors in layer order: weight, bias, weight, bias, ...
    pub fn tensors(&self) -> impl Iterator<Item = &[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
    }

    pub fn same_shape(&self, other: &MlpParams) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.in_dim() == b.in_dim() && a.out_dim() == b.out_dim())
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(shape_err!(
                "input has {} columns, network expects {}",
                x.cols(),
                self.input_dim()
            ));
        }
        Ok(())
    }

    fn affine(layer: &Layer, input: &Matrix) -> Matrix {
        let batch = input.rows();
        let mut z = Matrix::repeat_row(&layer.bias, batch);
        gemm(
            1.0,
            input.as_slice(),
            batch,
            layer.in_dim(),
            false,
            layer.weight.as_slice(),
            layer.out_dim(),
            layer.in_dim(),
            true,
            1.0,
            z.as_mut_slice(),
        );
        z
    }

    /// Evaluates the network on each row of `x`, keeping what `backward` needs.
    pub fn forward(&self, x: &Matrix) -> Result<(Vec<f64>, ForwardCache)> {
        self.check_input(x)?;
        let hidden = self.layers.len() - 1;
        let mut pre = Vec::with_capacity(hidden);
        let mut post = Vec::with_capacity(hidden + 1);
        post.push(x.clone());
        for layer in &self.layers[..hidden] {
            let z = Self::affine(layer, post.last().expect("input present"));
            let mut a = z.clone();
            a.as_mut_slice()
                .iter_mut()
                .for_each(|v| *v = self.activation.apply(*v));
            pre.push(z);
            post.push(a);
        }
        let out = Self::affine(&self.layers[hidden], post.last().expect("input present"));
        Ok((
            out.into_vec(),
            ForwardCache {
                batch: x.rows(),
                pre,
                post,
            },
        ))
    }

    /// Forward pass without a cache.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let hidden = self.layers.len() - 1;
        let mut a = Self::affine(&self.layers[0], x);
        if hidden == 0 {
            return Ok(a.into_vec());
        }
        for layer in &self.layers[1..] {
            a.as_mut_slice()
                .iter_mut()
                .for_each(|v| *v = self.activation.apply(*v));
            a = Self::affine(layer, &a);
        }
        Ok(a.into_vec())
    }

    fn check_cache(&self, cache: &ForwardCache, dl_dy: &[f64]) -> Result<()> {
        let hidden = self.layers.len() - 1;
        let consistent = cache.pre.len() == hidden
            && cache.post.len() == hidden + 1
            && cache.post[0].cols() == self.input_dim()
            && cache
                .pre
                .iter()
                .zip(&self.layers)
                .all(|(z, l)| z.cols() == l.out_dim() && z.rows() == cache.batch);
        if !consistent {
            return Err(shape_err!("forward cache does not match the network"));
        }
        if dl_dy.len() != cache.batch {
            return Err(shape_err!(
                "{} output gradients for a batch of {}",
                dl_dy.len(),
                cache.batch
            ));
        }
        Ok(())
    }

    /// Reverse pass. Returns parameter gradients (shaped like `self`) and
    /// input gradients (`batch x d_in`).
    pub fn backward(&self, cache: &ForwardCache, dl_dy: &[f64]) -> Result<(MlpParams, Matrix)> {
        self.check_cache(cache, dl_dy)?;
        let mut grads = self.zeros_like();
        let input_grads = self.reverse(cache, dl_dy, Some(&mut grads));
        Ok((grads, input_grads))
    }

    /// Input gradients only; skips the weight-gradient products.
    pub fn input_gradients(&self, cache: &ForwardCache, dl_dy: &[f64]) -> Result<Matrix> {
        self.check_cache(cache, dl_dy)?;
        Ok(self.reverse(cache, dl_dy, None))
    }

    fn reverse(
        &self,
        cache: &ForwardCache,
        dl_dy: &[f64],
        mut grads: Option<&mut MlpParams>,
    ) -> Matrix {
        let batch = cache.batch;
        let mut g = Matrix::from_vec_unchecked(batch, 1, dl_dy.to_vec());
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let a_prev = &cache.post[k];
            if let Some(grads) = grads.as_deref_mut() {
                let gl = &mut grads.layers[k];
                gemm(
                    1.0,
                    g.as_slice(),
                    batch,
                    layer.out_dim(),
                    true,
                    a_prev.as_slice(),
                    batch,
                    layer.in_dim(),
                    false,
                    0.0,
                    gl.weight.as_mut_slice(),
                );
                for row in g.iter_rows() {
                    for (b, v) in gl.bias.iter_mut().zip(row) {
                        *b += v;
                    }
                }
            }
            let mut g_prev = Matrix::zeros(batch, layer.in_dim());
            gemm(
                1.0,
                g.as_slice(),
                batch,
                layer.out_dim(),
                false,
                layer.weight.as_slice(),
                layer.out_dim(),
                layer.in_dim(),
                false,
                0.0,
                g_prev.as_mut_slice(),
            );
            if k > 0 {
                let z = &cache.pre[k - 1];
                for (gv, zv) in g_prev.as_mut_slice().iter_mut().zip(z.as_slice()) {
                    *gv *= self.activation.derivative(*zv);
                }
            }
            g = g_prev;
        }
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn naive_eval(p: &MlpParams, x: &[f64]) -> f64 {
        let mut a: Vec<f64> = x.to_vec();
        let n = p.layers.len();
        for (k, l) in p.layers.iter().enumerate() {
            let mut z = Vec::new();
            for o in 0..l.out_dim() {
                let mut s = l.bias[o];
                for i in 0..l.in_dim() {
                    s += l.weight.get(o, i) * a[i];
                }
                z.push(s);
            }
            a = if k + 1 < n {
                z.iter().map(|v| p.activation.apply(*v)).collect()
            } else {
                z
            };
        }
        a[0]
    }

    #[test]
    fn single_affine_layer() {
        let layer = Layer {
            weight: Matrix::from_rows(&[[1.0, 1.0]]).unwrap(),
            bias: vec![0.0],
        };
        let p = MlpParams::new(vec![layer], Activation::Relu).unwrap();
        let x = Matrix::from_rows(&[[2.0, 3.0]]).unwrap();
        let (y, _) = p.forward(&x).unwrap();
        assert_eq!(y, vec![5.0]);
    }

    #[test]
    fn zero_weights_give_final_bias() {
        let mut p = MlpParams::zeros(&[3, 4, 1], Activation::Relu).unwrap();
        p.layers_mut()[1].bias[0] = 0.7;
        let x = Matrix::from_rows(&[[1.0, -2.0, 5.0], [0.0, 0.0, 0.0]]).unwrap();
        assert_eq!(p.predict(&x).unwrap(), vec![0.7, 0.7]);
    }

    #[test]
    fn silu_net_matches_naive_loop() {
        let mut r = rng::seeded(3);
        let p = MlpParams::kaiming_uniform(&[2, 16, 1], Activation::Silu, &mut r).unwrap();
        let x = [0.3, -1.2];
        let y = p.predict(&Matrix::from_rows(&[x]).unwrap()).unwrap()[0];
        assert!((y - naive_eval(&p, &x)).abs() < 1e-12);
    }

    #[test]
    fn linear_input_gradient_is_weight_row() {
        let layer = Layer {
            weight: Matrix::from_rows(&[[0.5, -2.0, 3.0]]).unwrap(),
            bias: vec![1.0],
        };
        let p = MlpParams::new(vec![layer], Activation::Silu).unwrap();
        let x = Matrix::from_rows(&[[1.0, 1.0, 1.0]]).unwrap();
        let (_, cache) = p.forward(&x).unwrap();
        let (_, gx) = p.backward(&cache, &[1.0]).unwrap();
        assert_eq!(gx.row(0), &[0.5, -2.0, 3.0]);
    }

    #[test]
    fn rejects_bad_shapes() {
        let p = MlpParams::zeros(&[2, 3, 1], Activation::Relu).unwrap();
        let x = Matrix::zeros(4, 3);
        assert!(matches!(p.forward(&x), Err(crate::Error::Shape(_))));
        let (_, cache) = p.forward(&Matrix::zeros(4, 2)).unwrap();
        assert!(p.backward(&cache, &[1.0; 3]).is_err());
        let other = MlpParams::zeros(&[2, 5, 1], Activation::Relu).unwrap();
        assert!(other.backward(&cache, &[1.0; 4]).is_err());
        assert!(MlpParams::zeros(&[2, 3, 2], Activation::Relu).is_err());
    }

    #[test]
    fn relu_subgradient_at_zero() {
        assert_eq!(Activation::Relu.derivative(0.0), 0.0);
        assert_eq!(Activation::Silu.derivative(0.0), 0.5);
    }

    #[test]
    fn forward_is_deterministic() {
        let mut r = rng::seeded(9);
        let p = MlpParams::kaiming_uniform(&[3, 8, 8, 1], Activation::Silu, &mut r).unwrap();
        let x = Matrix::from_rows(&[[0.1, 0.2, 0.3], [1.0, -1.0, 0.5]]).unwrap();
        let (y1, c1) = p.forward(&x).unwrap();
        let (y2, c2) = p.forward(&x).unwrap();
        assert_eq!(y1, y2);
        let (g1, i1) = p.backward(&c1, &[1.0, -2.0]).unwrap();
        let (g2, i2) = p.backward(&c2, &[1.0, -2.0]).unwrap();
        assert_eq!(g1, g2);
        assert_eq!(i1, i2);
    }
}
