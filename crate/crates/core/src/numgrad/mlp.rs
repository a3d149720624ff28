use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    pub fn tag(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }
}

/// Multilayer perceptron with all parameters in one flat buffer.
///
/// Layer `l` occupies `in_l * out_l` weights (row-major `in × out`) followed
/// by `out_l` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel<T> {
    layer_sizes: Vec<usize>,
    activations: Vec<Activation>,
    params: Vec<T>,
}

/// Cached activations of one forward pass, needed by [`MlpModel::backward`].
#[derive(Debug, Clone)]
pub struct ForwardPass<T> {
    layer_sizes: Vec<usize>,
    /// `acts[0]` is the input batch, `acts[l + 1]` the output of layer `l`.
    acts: Vec<Array2<T>>,
}

impl<T: Scalar> ForwardPass<T> {
    pub fn output(&self) -> &Array2<T> {
        self.acts.last().expect("forward pass always holds the input")
    }

    pub fn input(&self) -> &Array2<T> {
        &self.acts[0]
    }

    /// Output of layer `l` (post-activation).
    pub fn layer_output(&self, l: usize) -> &Array2<T> {
        &self.acts[l + 1]
    }

    pub fn into_output(mut self) -> Array2<T> {
        self.acts.pop().expect("forward pass always holds the input")
    }
}

#[derive(Debug, Clone)]
pub struct Gradients<T> {
    /// Congruent to [`MlpModel::params`]. Entries of frozen layers are zero.
    pub params: Vec<T>,
    /// Gradient with respect to the input batch, when requested.
    pub input: Option<Array2<T>>,
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl<T: Scalar> MlpModel<T> {
    /// Zero-initialized model.
    pub fn zeros(layer_sizes: &[usize], activations: &[Activation]) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::Config(
                "an MLP needs at least an input and an output size".into(),
            ));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::Config("layer sizes must be positive".into()));
        }
        if activations.len() != layer_sizes.len() - 1 {
            return Err(Error::Dimension {
                context: "activation list",
                expected: layer_sizes.len() - 1,
                got: activations.len(),
            });
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            activations: activations.to_vec(),
            params: vec![T::zero(); param_count(layer_sizes)],
        })
    }

    /// He-uniform weights `U(-sqrt(6/fan_in), sqrt(6/fan_in))`, zero biases.
    pub fn he_uniform<R: Rng + ?Sized>(
        layer_sizes: &[usize],
        activations: &[Activation],
        rng: &mut R,
    ) -> Result<Self> {
        let mut model = Self::zeros(layer_sizes, activations)?;
        for l in 0..model.num_layers() {
            let fan_in = model.layer_sizes[l];
            let bound = (6.0 / fan_in as f64).sqrt();
            let (w, _) = model.layer_ranges(l);
            for p in &mut model.params[w] {
                *p = T::of(rng.random_range(-bound..bound));
            }
        }
        Ok(model)
    }

    pub fn from_params(
        layer_sizes: &[usize],
        activations: &[Activation],
        params: Vec<T>,
    ) -> Result<Self> {
        let mut model = Self::zeros(layer_sizes, activations)?;
        if params.len() != model.params.len() {
            return Err(Error::Dimension {
                context: "parameter array",
                expected: model.params.len(),
                got: params.len(),
            });
        }
        model.params = params;
        Ok(model)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    /// Offset of the first parameter of layer `l` (equals `num_params` for
    /// `l == num_layers`).
    pub fn layer_offset(&self, l: usize) -> usize {
        param_count(&self.layer_sizes[..=l])
    }

    fn layer_ranges(&self, l: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let start = self.layer_offset(l);
        let (i, o) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
        (start..start + i * o, start + i * o..start + i * o + o)
    }

    pub fn weights(&self, l: usize) -> ArrayView2<'_, T> {
        let (w, _) = self.layer_ranges(l);
        ArrayView2::from_shape((self.layer_sizes[l], self.layer_sizes[l + 1]), &self.params[w])
            .expect("weight block matches layer shape")
    }

    pub fn bias(&self, l: usize) -> ArrayView1<'_, T> {
        let (_, b) = self.layer_ranges(l);
        ArrayView1::from(&self.params[b])
    }

    fn check_input(&self, batch: &ArrayView2<'_, T>) -> Result<()> {
        if batch.ncols() != self.input_dim() {
            return Err(Error::Dimension {
                context: "forward input",
                expected: self.input_dim(),
                got: batch.ncols(),
            });
        }
        Ok(())
    }

    fn apply_layer(&self, l: usize, input: &ArrayView2<'_, T>) -> Array2<T> {
        let mut out = input.dot(&self.weights(l));
        out += &self.bias(l);
        if self.activations[l] == Activation::Relu {
            out.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() });
        }
        out
    }

    /// Logits for a `B × input_dim` batch.
    pub fn forward(&self, batch: ArrayView2<'_, T>) -> Result<Array2<T>> {
        self.check_input(&batch)?;
        let mut cur = self.apply_layer(0, &batch);
        for l in 1..self.num_layers() {
            cur = self.apply_layer(l, &cur.view());
        }
        Ok(cur)
    }

    /// Forward pass that keeps every intermediate activation.
    pub fn forward_pass(&self, batch: ArrayView2<'_, T>) -> Result<ForwardPass<T>> {
        self.check_input(&batch)?;
        let mut acts = Vec::with_capacity(self.num_layers() + 1);
        acts.push(batch.to_owned());
        for l in 0..self.num_layers() {
            let next = self.apply_layer(l, &acts[l].view());
            acts.push(next);
        }
        Ok(ForwardPass {
            layer_sizes: self.layer_sizes.clone(),
            acts,
        })
    }

    /// Parameter gradient of a scalar loss given `dout = dL/dlogits`.
    pub fn backward(&self, pass: &ForwardPass<T>, dout: ArrayView2<'_, T>) -> Result<Vec<T>> {
        Ok(self.backward_partial(pass, dout, 0, false)?.params)
    }

    /// Backpropagates through layers `trainable_from..`. Earlier layers get a
    /// zero gradient; the input gradient is only available when every layer
    /// is traversed (`trainable_from == 0`).
    pub fn backward_partial(
        &self,
        pass: &ForwardPass<T>,
        dout: ArrayView2<'_, T>,
        trainable_from: usize,
        want_input_grad: bool,
    ) -> Result<Gradients<T>> {
        if pass.layer_sizes != self.layer_sizes || pass.acts.len() != self.num_layers() + 1 {
            return Err(Error::Usage(
                "backward called with a forward pass from a different model".into(),
            ));
        }
        let batch = pass.acts[0].nrows();
        if dout.nrows() != batch || dout.ncols() != self.output_dim() {
            return Err(Error::Dimension {
                context: "backward output gradient",
                expected: batch * self.output_dim(),
                got: dout.len(),
            });
        }
        if want_input_grad && trainable_from != 0 {
            return Err(Error::Usage(
                "input gradient requires backpropagating through every layer".into(),
            ));
        }
        let mut grad = vec![T::zero(); self.params.len()];
        let mut delta = dout.to_owned();
        let mut input_grad = None;
        for l in (trainable_from..self.num_layers()).rev() {
            if self.activations[l] == Activation::Relu {
                let out = &pass.acts[l + 1];
                ndarray::Zip::from(&mut delta).and(out).for_each(|d, &o| {
                    if o <= T::zero() {
                        *d = T::zero();
                    }
                });
            }
            let a_in = &pass.acts[l];
            let dw = a_in.t().dot(&delta);
            let db: Array1<T> = delta.sum_axis(Axis(0));
            let (wr, br) = self.layer_ranges(l);
            for (g, v) in grad[wr].iter_mut().zip(dw.iter()) {
                *g = *v;
            }
            for (g, v) in grad[br].iter_mut().zip(db.iter()) {
                *g = *v;
            }
            if l > trainable_from || want_input_grad {
                let next = delta.dot(&self.weights(l).t());
                if l == 0 {
                    input_grad = Some(next);
                    break;
                }
                delta = next;
            }
        }
        Ok(Gradients {
            params: grad,
            input: input_grad,
        })
    }

    /// Concatenates `self` (first) and `next` into one network.
    pub fn stack(&self, next: &Self) -> Result<Self> {
        if self.output_dim() != next.input_dim() {
            return Err(Error::Dimension {
                context: "stacked model interface",
                expected: self.output_dim(),
                got: next.input_dim(),
            });
        }
        let mut sizes = self.layer_sizes.clone();
        sizes.extend_from_slice(&next.layer_sizes[1..]);
        let mut acts = self.activations.clone();
        acts.extend_from_slice(&next.activations);
        let mut params = self.params.clone();
        params.extend_from_slice(&next.params);
        Self::from_params(&sizes, &acts, params)
    }

    /// Splits into layers `..at` and `at..`.
    pub fn split(&self, at: usize) -> Result<(Self, Self)> {
        if at == 0 || at >= self.num_layers() {
            return Err(Error::Usage(format!(
                "split point {at} must be inside 1..{}",
                self.num_layers()
            )));
        }
        let off = self.layer_offset(at);
        let first = Self::from_params(
            &self.layer_sizes[..=at],
            &self.activations[..at],
            self.params[..off].to_vec(),
        )?;
        let second = Self::from_params(
            &self.layer_sizes[at..],
            &self.activations[at..],
            self.params[off..].to_vec(),
        )?;
        Ok((first, second))
    }

    pub fn cast<U: Scalar>(&self) -> MlpModel<U> {
        MlpModel {
            layer_sizes: self.layer_sizes.clone(),
            activations: self.activations.clone(),
            params: self.params.iter().map(|p| U::of(p.as_f64())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }
}
