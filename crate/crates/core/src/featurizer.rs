//! Maps candidate embeddings to model parameters: a per-element MLP for unary
//! scores (also applied to a learned EOS embedding) and affine key/value maps
//! whose scaled dot products give the interaction matrix.

use std::collections::BTreeMap;

use ndarray::{s, Array1, Array2, ArrayView1, Axis, ShapeBuilder};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::CplModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation output.
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

fn uniform_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..=bound))
}

fn uniform_vector<R: Rng + ?Sized>(len: usize, bound: f64, rng: &mut R) -> Array1<f64> {
    Array1::from_shape_simple_fn(len, || rng.random_range(-bound..=bound))
}

/// `y = W x + b` with `W` of shape `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Affine {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
        }
    }

    pub fn init<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        Self {
            weight: uniform_matrix(output, input, bound, rng),
            bias: uniform_vector(output, bound, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }

    /// Row-wise application to a batch of shape `(n, in)`.
    pub fn forward_batch(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight.t()) + &self.bias
    }

    /// Accumulates parameter gradients for a batch given `dY` of shape `(n, out)`.
    fn accumulate(&self, x: &Array2<f64>, dy: &Array2<f64>, grads: &mut Affine) {
        grads.weight += &dy.t().dot(x);
        grads.bias += &dy.sum_axis(Axis(0));
    }
}

/// One hidden layer: `output(act(hidden(x)))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub hidden: Affine,
    pub output: Affine,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpCache {
    pub input: Array2<f64>,
    pub hidden_act: Array2<f64>,
}

impl Mlp {
    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, output: usize, rng: &mut R) -> Self {
        Self {
            hidden: Affine::init(input, hidden, rng),
            output: Affine::init(hidden, output, rng),
            activation: Activation::Tanh,
        }
    }

    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Self {
            hidden: Affine::zeros(input, hidden),
            output: Affine::zeros(hidden, output),
            activation: Activation::Tanh,
        }
    }

    pub fn forward_batch(&self, x: Array2<f64>) -> Result<(Array2<f64>, MlpCache)> {
        if x.ncols() != self.hidden.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "input width {} but network expects {}",
                x.ncols(),
                self.hidden.input_dim()
            )));
        }
        let act = self.activation;
        let hidden_act = self.hidden.forward_batch(&x).mapv_into(|v| act.apply(v));
        let out = self.output.forward_batch(&hidden_act);
        Ok((out, MlpCache { input: x, hidden_act }))
    }

    /// Accumulates parameter gradients into `grads` and returns `dL/dx`.
    pub fn backward_batch(&self, cache: &MlpCache, dy: &Array2<f64>, grads: &mut Mlp) -> Array2<f64> {
        self.output.accumulate(&cache.hidden_act, dy, &mut grads.output);
        let act = self.activation;
        let mut dh = dy.dot(&self.output.weight);
        dh.zip_mut_with(&cache.hidden_act, |g, &y| *g *= act.grad_from_output(y));
        self.hidden.accumulate(&cache.input, &dh, &mut grads.hidden);
        dh.dot(&self.hidden.weight)
    }
}

/// Single-vector MLP evaluation.
pub fn mlp_forward(net: &Mlp, x: ArrayView1<'_, f64>) -> Result<(Array1<f64>, MlpCache)> {
    let batch = x.to_owned().insert_axis(Axis(0));
    let (out, cache) = net.forward_batch(batch)?;
    Ok((out.row(0).to_owned(), cache))
}

/// Candidate embeddings, one row per candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementEmbeddings {
    q: Array2<f64>,
}

impl ElementEmbeddings {
    pub fn new(q: Array2<f64>) -> Result<Self> {
        if q.nrows() == 0 || q.ncols() == 0 {
            return Err(Error::ShapeMismatch("embeddings need k >= 1 and d >= 1".into()));
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("non-finite embedding entry".into()));
        }
        Ok(Self { q })
    }

    pub fn k(&self) -> usize {
        self.q.nrows()
    }

    pub fn d(&self) -> usize {
        self.q.ncols()
    }

    pub fn q(&self) -> &Array2<f64> {
        &self.q
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "Checkpoint", try_from = "Checkpoint")]
pub struct FeaturizerNets {
    pub unary: Mlp,
    pub eos_embedding: Array1<f64>,
    pub key: Affine,
    pub value: Affine,
}

/// Parameter gradients share the parameter layout.
pub type FeaturizerGrads = FeaturizerNets;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeaturizerDims {
    pub d: usize,
    pub hidden: usize,
    pub d_h: usize,
}

impl Default for FeaturizerDims {
    fn default() -> Self {
        Self {
            d: 16,
            hidden: 32,
            d_h: 16,
        }
    }
}

impl FeaturizerNets {
    pub fn init<R: Rng + ?Sized>(dims: FeaturizerDims, rng: &mut R) -> Self {
        let bound = 1.0 / (dims.d as f64).sqrt();
        Self {
            unary: Mlp::init(dims.d, dims.hidden, 1, rng),
            eos_embedding: uniform_vector(dims.d, bound, rng),
            key: Affine::init(dims.d, dims.d_h, rng),
            value: Affine::init(dims.d, dims.d_h, rng),
        }
    }

    pub fn zeros(dims: FeaturizerDims) -> Self {
        Self {
            unary: Mlp::zeros(dims.d, dims.hidden, 1),
            eos_embedding: Array1::zeros(dims.d),
            key: Affine::zeros(dims.d, dims.d_h),
            value: Affine::zeros(dims.d, dims.d_h),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = Self::zeros(self.dims());
        z.unary.activation = self.unary.activation;
        z
    }

    pub fn dims(&self) -> FeaturizerDims {
        FeaturizerDims {
            d: self.eos_embedding.len(),
            hidden: self.unary.hidden.output_dim(),
            d_h: self.key.output_dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let FeaturizerDims { d, hidden, d_h } = self.dims();
        let shapes = [
            ("unary.hidden.weight", self.unary.hidden.weight.dim(), (hidden, d)),
            ("unary.hidden.bias", (self.unary.hidden.bias.len(), 1), (hidden, 1)),
            ("unary.output.weight", self.unary.output.weight.dim(), (1, hidden)),
            ("unary.output.bias", (self.unary.output.bias.len(), 1), (1, 1)),
            ("key.weight", self.key.weight.dim(), (d_h, d)),
            ("key.bias", (self.key.bias.len(), 1), (d_h, 1)),
            ("value.weight", self.value.weight.dim(), (d_h, d)),
            ("value.bias", (self.value.bias.len(), 1), (d_h, 1)),
        ];
        for (name, got, want) in shapes {
            if got != want {
                return Err(Error::ShapeMismatch(format!("{name}: {got:?}, expected {want:?}")));
            }
        }
        if self.tensors().iter().any(|(_, t)| t.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidModel("non-finite network parameter".into()));
        }
        Ok(())
    }

    /// Named flat views of every parameter tensor, in a fixed order.
    pub fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        fn s(a: &Array2<f64>) -> &[f64] {
            a.as_slice().expect("standard layout")
        }
        fn v(a: &Array1<f64>) -> &[f64] {
            a.as_slice().expect("contiguous")
        }
        vec![
            ("unary.hidden.weight", s(&self.unary.hidden.weight)),
            ("unary.hidden.bias", v(&self.unary.hidden.bias)),
            ("unary.output.weight", s(&self.unary.output.weight)),
            ("unary.output.bias", v(&self.unary.output.bias)),
            ("eos_embedding", v(&self.eos_embedding)),
            ("key.weight", s(&self.key.weight)),
            ("key.bias", v(&self.key.bias)),
            ("value.weight", s(&self.value.weight)),
            ("value.bias", v(&self.value.bias)),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.unary.hidden.weight.as_slice_mut().expect("standard layout"),
            self.unary.hidden.bias.as_slice_mut().expect("contiguous"),
            self.unary.output.weight.as_slice_mut().expect("standard layout"),
            self.unary.output.bias.as_slice_mut().expect("contiguous"),
            self.eos_embedding.as_slice_mut().expect("contiguous"),
            self.key.weight.as_slice_mut().expect("standard layout"),
            self.key.bias.as_slice_mut().expect("contiguous"),
            self.value.weight.as_slice_mut().expect("standard layout"),
            self.value.bias.as_slice_mut().expect("contiguous"),
        ]
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().into_iter().flat_map(|(_, t)| t.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {} parameters",
                flat.len(),
                self.num_params()
            )));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[offset..offset + t.len()]);
            offset += t.len();
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&Checkpoint::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(s)?;
        ck.try_into()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Checkpoint {
    activation: Activation,
    tensors: BTreeMap<String, Tensor>,
}

impl From<&FeaturizerNets> for Checkpoint {
    fn from(nets: &FeaturizerNets) -> Self {
        let shape2 = |a: &Array2<f64>| vec![a.nrows(), a.ncols()];
        let shapes = [
            shape2(&nets.unary.hidden.weight),
            vec![nets.unary.hidden.bias.len()],
            shape2(&nets.unary.output.weight),
            vec![nets.unary.output.bias.len()],
            vec![nets.eos_embedding.len()],
            shape2(&nets.key.weight),
            vec![nets.key.bias.len()],
            shape2(&nets.value.weight),
            vec![nets.value.bias.len()],
        ];
        let tensors = nets
            .tensors()
            .into_iter()
            .zip(shapes)
            .map(|((name, data), shape)| {
                (
                    name.to_string(),
                    Tensor {
                        shape,
                        data: data.to_vec(),
                    },
                )
            })
            .collect();
        Self {
            activation: nets.unary.activation,
            tensors,
        }
    }
}

impl From<FeaturizerNets> for Checkpoint {
    fn from(nets: FeaturizerNets) -> Self {
        Checkpoint::from(&nets)
    }
}

impl TryFrom<Checkpoint> for FeaturizerNets {
    type Error = Error;

    fn try_from(mut ck: Checkpoint) -> Result<Self> {
        let mut take = |name: &str| -> Result<Tensor> {
            let t = ck
                .tensors
                .remove(name)
                .ok_or_else(|| Error::ShapeMismatch(format!("checkpoint lacks {name}")))?;
            if t.shape.iter().product::<usize>() != t.data.len() {
                return Err(Error::ShapeMismatch(format!("{name}: shape disagrees with data length")));
            }
            Ok(t)
        };
        fn matrix(t: Tensor, name: &str) -> Result<Array2<f64>> {
            match t.shape[..] {
                [r, c] => Ok(Array2::from_shape_vec((r, c), t.data).expect("length checked")),
                _ => Err(Error::ShapeMismatch(format!("{name} must be 2-d"))),
            }
        }
        fn vector(t: Tensor, name: &str) -> Result<Array1<f64>> {
            match t.shape[..] {
                [_] => Ok(Array1::from(t.data)),
                _ => Err(Error::ShapeMismatch(format!("{name} must be 1-d"))),
            }
        }
        let nets = FeaturizerNets {
            unary: Mlp {
                hidden: Affine {
                    weight: matrix(take("unary.hidden.weight")?, "unary.hidden.weight")?,
                    bias: vector(take("unary.hidden.bias")?, "unary.hidden.bias")?,
                },
                output: Affine {
                    weight: matrix(take("unary.output.weight")?, "unary.output.weight")?,
                    bias: vector(take("unary.output.bias")?, "unary.output.bias")?,
                },
                activation: ck.activation,
            },
            eos_embedding: vector(take("eos_embedding")?, "eos_embedding")?,
            key: Affine {
                weight: matrix(take("key.weight")?, "key.weight")?,
                bias: vector(take("key.bias")?, "key.bias")?,
            },
            value: Affine {
                weight: matrix(take("value.weight")?, "value.weight")?,
                bias: vector(take("value.bias")?, "value.bias")?,
            },
        };
        nets.validate()?;
        Ok(nets)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnaryCache {
    /// MLP cache over `k + 1` rows; the last row is the EOS embedding.
    pub mlp: MlpCache,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InteractionCache {
    pub input: Array2<f64>,
    pub keys: Array2<f64>,
    pub values: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    pub unary: UnaryCache,
    pub interactions: InteractionCache,
}

impl ForwardCache {
    pub fn k(&self) -> usize {
        self.interactions.input.nrows()
    }
}

fn check_width(nets: &FeaturizerNets, emb: &ElementEmbeddings) -> Result<()> {
    if emb.d() != nets.dims().d {
        return Err(Error::ShapeMismatch(format!(
            "embedding width {} but networks expect {}",
            emb.d(),
            nets.dims().d
        )));
    }
    Ok(())
}

/// `theta[j] = unary(q_j)` for real candidates and `theta[k] = unary(eos)`.
pub fn unary_scores(nets: &FeaturizerNets, emb: &ElementEmbeddings) -> Result<(Vec<f64>, UnaryCache)> {
    check_width(nets, emb)?;
    let mut input = emb.q().clone();
    input.push_row(nets.eos_embedding.view()).expect("width checked");
    let (out, mlp) = nets.unary.forward_batch(input)?;
    Ok((out.column(0).to_vec(), UnaryCache { mlp }))
}

/// `W[j][i] = key(q_j) . value(q_i) / sqrt(d_h)`, padded with a zero EOS row
/// and column. The result is column-major.
pub fn pairwise_interactions(
    nets: &FeaturizerNets,
    emb: &ElementEmbeddings,
) -> Result<(Array2<f64>, InteractionCache)> {
    check_width(nets, emb)?;
    let k = emb.k();
    let scale = 1.0 / (nets.key.output_dim() as f64).sqrt();
    let keys = nets.key.forward_batch(emb.q());
    let values = nets.value.forward_batch(emb.q());
    let mut w = Array2::zeros((k + 1, k + 1).f());
    let block = keys.dot(&values.t()) * scale;
    w.slice_mut(s![..k, ..k]).assign(&block);
    Ok((
        w,
        InteractionCache {
            input: emb.q().clone(),
            keys,
            values,
        },
    ))
}

pub fn featurize(nets: &FeaturizerNets, emb: &ElementEmbeddings) -> Result<(CplModel, ForwardCache)> {
    let (theta, unary) = unary_scores(nets, emb)?;
    let (w, interactions) = pairwise_interactions(nets, emb)?;
    let model = CplModel::new(theta, w)?;
    Ok((model, ForwardCache { unary, interactions }))
}

/// Exact parameter gradients given `dL/dtheta` and `dL/dW`. Entries of the
/// EOS row and column of `grad_w` are ignored.
pub fn backprop_featurizer(
    grad_theta: &[f64],
    grad_w: &Array2<f64>,
    cache: &ForwardCache,
    nets: &FeaturizerNets,
) -> Result<FeaturizerGrads> {
    let k = cache.k();
    let dims = nets.dims();
    let consistent = cache.unary.mlp.input.dim() == (k + 1, dims.d)
        && cache.unary.mlp.hidden_act.ncols() == dims.hidden
        && cache.interactions.keys.dim() == (k, dims.d_h)
        && cache.interactions.values.dim() == (k, dims.d_h)
        && cache.interactions.input.ncols() == dims.d;
    if !consistent {
        return Err(Error::CacheMismatch("cache was produced by differently shaped networks".into()));
    }
    if grad_theta.len() != k + 1 || grad_w.dim() != (k + 1, k + 1) {
        return Err(Error::CacheMismatch(format!("gradients do not match k = {k}")));
    }
    let mut grads = nets.zeros_like();

    let dy = Array2::from_shape_vec((k + 1, 1), grad_theta.to_vec()).expect("length checked");
    let dx = nets.unary.backward_batch(&cache.unary.mlp, &dy, &mut grads.unary);
    grads.eos_embedding.assign(&dx.row(k));

    let g = grad_w.slice(s![..k, ..k]);
    let scale = 1.0 / (dims.d_h as f64).sqrt();
    let d_keys = g.dot(&cache.interactions.values) * scale;
    let d_values = g.t().dot(&cache.interactions.keys) * scale;
    nets.key.accumulate(&cache.interactions.input, &d_keys, &mut grads.key);
    nets.value.accumulate(&cache.interactions.input, &d_values, &mut grads.value);
    Ok(grads)
}
