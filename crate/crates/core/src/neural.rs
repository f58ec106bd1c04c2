//! Fully connected networks with rectifier hidden layers, Adam, a replay
//! buffer and a versioned JSON checkpoint format.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Checkpoint schema version written by [`Mlp::to_checkpoint`].
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense<T> {
    /// `in x out`.
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

/// Multi-layer perceptron. Every layer but the last is followed by a ReLU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp<T> {
    pub layers: Vec<Dense<T>>,
}

/// Activations kept from a forward pass for [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    /// Input to each layer.
    inputs: Vec<Array2<T>>,
    /// Pre-activation of each layer.
    pre: Vec<Array2<T>>,
}

/// Gradients shaped like an [`Mlp`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads<T> {
    pub layers: Vec<Dense<T>>,
}

impl<T: Scalar> Mlp<T> {
    /// Uniform `±1/sqrt(fan_in)` initialization for `widths = [in, h.., out]`.
    pub fn new<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Self {
        assert!(widths.len() >= 2, "an MLP needs input and output widths");
        let layers = widths
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                let mut draw = || T::lit(rng.random_range(-bound..bound));
                let weight = Array2::from_shape_simple_fn((w[0], w[1]), &mut draw);
                let bias = Array1::from_shape_simple_fn(w[1], &mut draw);
                Dense { weight, bias }
            })
            .collect();
        Self { layers }
    }

    pub fn zeros(widths: &[usize]) -> Self {
        let layers = widths
            .windows(2)
            .map(|w| Dense {
                weight: Array2::zeros((w[0], w[1])),
                bias: Array1::zeros(w[1]),
            })
            .collect();
        Self { layers }
    }

    pub fn from_layers(layers: Vec<Dense<T>>) -> Self {
        Self { layers }
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].weight.nrows()
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].weight.ncols()
    }

    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_width())
            .chain(self.layers.iter().map(|l| l.weight.ncols()))
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    fn check_width(&self, x: &ArrayView2<T>) -> Result<()> {
        if x.ncols() != self.input_width() {
            return Err(Error::WidthMismatch {
                expected: self.input_width(),
                got: x.ncols(),
            });
        }
        Ok(())
    }

    /// Batched forward pass, one sample per row.
    pub fn forward(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        self.check_width(&x)?;
        let last = self.layers.len() - 1;
        let mut a = x.to_owned();
        for (i, l) in self.layers.iter().enumerate() {
            a = a.dot(&l.weight) + &l.bias;
            if i < last {
                a.mapv_inplace(relu);
            }
        }
        Ok(a)
    }

    /// Single-sample forward pass.
    pub fn forward_one(&self, x: &[T]) -> Result<Vec<T>> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row view");
        Ok(self.forward(view)?.into_raw_vec_and_offset().0)
    }

    pub fn forward_cached(&self, x: ArrayView2<T>) -> Result<(Array2<T>, ForwardCache<T>)> {
        self.check_width(&x)?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut a = x.to_owned();
        for (i, l) in self.layers.iter().enumerate() {
            let z = a.dot(&l.weight) + &l.bias;
            inputs.push(a);
            a = if i < last { z.mapv(relu) } else { z.clone() };
            pre.push(z);
        }
        Ok((a, ForwardCache { inputs, pre }))
    }

    /// Reverse-mode pass: parameter gradients and the gradient with respect to
    /// the input, given `d loss / d output`.
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        grad_out: ArrayView2<T>,
    ) -> (MlpGrads<T>, Array2<T>) {
        let (grads, input) = self.reverse(cache, grad_out, true, true);
        (grads.expect("requested"), input.expect("requested"))
    }

    /// Parameter gradients only.
    pub fn backward_params(&self, cache: &ForwardCache<T>, grad_out: ArrayView2<T>) -> MlpGrads<T> {
        self.reverse(cache, grad_out, true, false)
            .0
            .expect("requested")
    }

    /// Input gradient only.
    pub fn backward_input(&self, cache: &ForwardCache<T>, grad_out: ArrayView2<T>) -> Array2<T> {
        self.reverse(cache, grad_out, false, true)
            .1
            .expect("requested")
    }

    fn reverse(
        &self,
        cache: &ForwardCache<T>,
        grad_out: ArrayView2<T>,
        want_params: bool,
        want_input: bool,
    ) -> (Option<MlpGrads<T>>, Option<Array2<T>>) {
        let mut delta = grad_out.to_owned();
        let mut grads: Vec<Dense<T>> = Vec::with_capacity(self.layers.len());
        for i in (0..self.layers.len()).rev() {
            if want_params {
                let weight = cache.inputs[i]
                    .t()
                    .dot(&delta)
                    .as_standard_layout()
                    .into_owned();
                let bias = delta.sum_axis(Axis(0));
                grads.push(Dense { weight, bias });
            }
            if i == 0 && !want_input {
                break;
            }
            delta = delta.dot(&self.layers[i].weight.t());
            if i > 0 {
                ndarray::Zip::from(&mut delta)
                    .and(&cache.pre[i - 1])
                    .for_each(|d, &z| {
                        if z <= T::zero() {
                            *d = T::zero();
                        }
                    });
            }
        }
        grads.reverse();
        (
            want_params.then_some(MlpGrads { layers: grads }),
            want_input.then_some(delta),
        )
    }

    /// `self <- tau * self + (1 - tau) * other`.
    pub fn blend_from(&mut self, other: &Mlp<T>, tau: T) {
        let keep = T::one() - tau;
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight
                .zip_mut_with(&b.weight, |x, &y| *x = tau * *x + keep * y);
            a.bias
                .zip_mut_with(&b.bias, |x, &y| *x = tau * *x + keep * y);
        }
    }

    /// Parameters flattened layer by layer (weight then bias).
    pub fn flat_params(&self) -> Vec<T> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied())
            .collect()
    }

    pub fn set_flat_params(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::WidthMismatch {
                expected: self.num_params(),
                got: flat.len(),
            });
        }
        let mut it = flat.iter();
        for l in &mut self.layers {
            for x in l.weight.iter_mut().chain(l.bias.iter_mut()) {
                *x = *it.next().expect("length checked");
            }
        }
        Ok(())
    }

    /// Mutable parameter tensors in [`flat_params`](Self::flat_params) order.
    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.weight.as_slice_mut().expect("standard layout"),
                    l.bias.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|x| x.is_finite()))
    }

    pub fn to_checkpoint(&self, kind: &str) -> Checkpoint {
        let tensors = self
            .layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                [
                    NamedArray {
                        name: format!("layer{i}.weight"),
                        shape: vec![l.weight.nrows(), l.weight.ncols()],
                        data: l.weight.iter().map(|x| x.as_f64()).collect(),
                    },
                    NamedArray {
                        name: format!("layer{i}.bias"),
                        shape: vec![l.bias.len()],
                        data: l.bias.iter().map(|x| x.as_f64()).collect(),
                    },
                ]
            })
            .collect();
        Checkpoint {
            version: CHECKPOINT_VERSION,
            kind: kind.to_string(),
            tensors,
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {}",
                ckpt.version
            )));
        }
        if ckpt.tensors.is_empty() || !ckpt.tensors.len().is_multiple_of(2) {
            return Err(Error::Checkpoint(
                "expected weight/bias tensor pairs".into(),
            ));
        }
        let mut layers = Vec::with_capacity(ckpt.tensors.len() / 2);
        for (i, pair) in ckpt.tensors.chunks(2).enumerate() {
            let (w, b) = (&pair[0], &pair[1]);
            if w.name != format!("layer{i}.weight") || b.name != format!("layer{i}.bias") {
                return Err(Error::Checkpoint(format!(
                    "unexpected tensor names {} / {}",
                    w.name, b.name
                )));
            }
            let bad_shape = || Error::Checkpoint(format!("bad shape for layer {i}"));
            let [rows, cols] = w.shape[..] else {
                return Err(bad_shape());
            };
            if b.shape != [cols] || w.data.len() != rows * cols || b.data.len() != cols {
                return Err(bad_shape());
            }
            let weight =
                Array2::from_shape_vec((rows, cols), w.data.iter().map(|&x| T::lit(x)).collect())
                    .map_err(|_| bad_shape())?;
            let bias = b.data.iter().map(|&x| T::lit(x)).collect();
            if let Some(prev) = layers.last().map(|l: &Dense<T>| l.weight.ncols()) {
                if prev != rows {
                    return Err(bad_shape());
                }
            }
            layers.push(Dense { weight, bias });
        }
        Ok(Self { layers })
    }
}

impl<T: Scalar> MlpGrads<T> {
    pub fn zeros_like(mlp: &Mlp<T>) -> Self {
        Self {
            layers: Mlp::zeros(&mlp.widths()).layers,
        }
    }

    pub fn add_assign(&mut self, other: &MlpGrads<T>) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.zip_mut_with(&b.weight, |x, &y| *x = *x + y);
            a.bias.zip_mut_with(&b.bias, |x, &y| *x = *x + y);
        }
    }

    pub fn flat(&self) -> Vec<T> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied())
            .collect()
    }

    pub fn tensors(&self) -> Vec<&[T]> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    l.weight.as_slice().expect("standard layout"),
                    l.bias.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn max_abs(&self) -> T {
        self.flat()
            .into_iter()
            .fold(T::zero(), |m, x| m.max(x.abs()))
    }
}

#[inline]
fn relu<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        T::zero()
    }
}

/// Adam with bias correction, holding one moment pair per parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// One update over paired `(params, grads)` tensors. Moments are created
    /// lazily on the first call.
    pub fn update<T: Scalar>(&mut self, params: Vec<&mut [T]>, grads: Vec<&[T]>) {
        assert_eq!(params.len(), grads.len(), "tensor count mismatch");
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in params
            .into_iter()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            assert_eq!(p.len(), g.len(), "tensor shape mismatch");
            for i in 0..p.len() {
                let gi = g[i].as_f64();
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let step = self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
                p[i] = p[i] - T::lit(step);
            }
        }
    }

    pub fn step_mlp<T: Scalar>(&mut self, mlp: &mut Mlp<T>, grads: &MlpGrads<T>) {
        self.update(mlp.tensors_mut(), grads.tensors());
    }
}

/// Fixed-capacity FIFO store with uniform sampling without replacement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer<E> {
    capacity: usize,
    items: Vec<E>,
    /// Next slot to overwrite once full.
    head: usize,
}

impl<E> ReplayBuffer<E> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: Vec::new(),
            head: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, item: E) {
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            self.items[self.head] = item;
            self.head = (self.head + 1) % self.capacity;
        }
    }

    /// Items from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &E> {
        let (newer, older) = self.items.split_at(self.head);
        older.iter().chain(newer)
    }

    /// Distinct storage indices of a uniform mini-batch.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.items.len() < batch {
            return Err(Error::UndersizedBuffer {
                have: self.items.len(),
                need: batch,
            });
        }
        Ok(index::sample(rng, self.items.len(), batch).into_vec())
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<&E>> {
        Ok(self
            .sample_indices(batch, rng)?
            .into_iter()
            .map(|i| &self.items[i])
            .collect())
    }
}

/// One named tensor in a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Versioned parameter snapshot of one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub kind: String,
    pub tensors: Vec<NamedArray>,
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}
