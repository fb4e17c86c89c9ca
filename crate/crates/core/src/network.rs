//! Feedforward Q-network with explicit forward and backward passes.
//!
//! Plain networks end in one linear layer producing `action_count` values.
//! Dueling networks end in a value head (one output) and an advantage head
//! (`action_count` outputs) combined as `V + A - mean(A)`.

use std::fmt::Debug;
use std::io::{Read, Write};

use ndarray::{Array1, Array2, ArrayView2, Axis, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Floating-point type a network can be instantiated with.
pub trait Real:
    LinalgScalar
    + Float
    + FromPrimitive
    + ScalarOperand
    + std::ops::AddAssign
    + std::ops::SubAssign
    + Debug
    + Send
    + Sync
    + 'static
{
    const BYTES: u8;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("representable constant")
    }
}

impl Real for f32 {
    const BYTES: u8 = 4;
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().unwrap())
    }
}

impl Real for f64 {
    const BYTES: u8 = 8;
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().unwrap())
    }
}

/// Fully connected layer, `y = x W + b` with `W` stored `[inputs, outputs]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<F> {
    pub weights: Array2<F>,
    pub bias: Array1<F>,
}

impl<F: Real> Dense<F> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            weights: Array2::zeros((inputs, outputs)),
            bias: Array1::zeros(outputs),
        }
    }

    /// Uniform in `±1/sqrt(inputs)` for weights and bias.
    fn init(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let mut draw = || F::of(rng.gen_range(-bound..bound));
        Dense {
            weights: Array2::from_shape_simple_fn((inputs, outputs), &mut draw),
            bias: Array1::from_shape_simple_fn(outputs, &mut draw),
        }
    }

    fn apply(&self, x: &ArrayView2<F>) -> Array2<F> {
        let mut out = x.dot(&self.weights);
        out += &self.bias;
        out
    }

    pub fn inputs(&self) -> usize {
        self.weights.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weights.ncols()
    }
}

/// Architecture of a Q-network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub action_count: usize,
    pub dueling: bool,
}

/// Multi-layer perceptron Q-function. `F` is `f32` for training and `f64`
/// for gradient checks.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork<F = f32> {
    dueling: bool,
    /// Hidden layers followed by the head: one layer for plain networks,
    /// value then advantage layer for dueling ones.
    layers: Vec<Dense<F>>,
}

/// Activations kept from a forward pass for backpropagation.
pub struct ForwardCache<F> {
    /// Input to every hidden layer plus the final hidden activation.
    activations: Vec<Array2<F>>,
    pub q: Array2<F>,
    pub value: Option<Array2<F>>,
}

impl<F: Real> QNetwork<F> {
    pub fn new(arch: &Architecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(arch, |i, o| Dense::init(i, o, &mut rng))
    }

    pub fn zeros(arch: &Architecture) -> Self {
        Self::build(arch, Dense::zeros)
    }

    fn build(arch: &Architecture, mut make: impl FnMut(usize, usize) -> Dense<F>) -> Self {
        let mut layers = Vec::new();
        let mut width = arch.input_dim;
        for &h in &arch.hidden {
            layers.push(make(width, h));
            width = h;
        }
        if arch.dueling {
            layers.push(make(width, 1));
        }
        layers.push(make(width, arch.action_count));
        QNetwork {
            dueling: arch.dueling,
            layers,
        }
    }

    pub fn architecture(&self) -> Architecture {
        let hidden: Vec<usize> = self.hidden_layers().iter().map(Dense::outputs).collect();
        Architecture {
            input_dim: self.layers[0].inputs(),
            hidden,
            action_count: self.action_count(),
            dueling: self.dueling,
        }
    }

    pub fn is_dueling(&self) -> bool {
        self.dueling
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn action_count(&self) -> usize {
        self.layers.last().unwrap().outputs()
    }

    fn head_len(&self) -> usize {
        if self.dueling {
            2
        } else {
            1
        }
    }

    fn hidden_layers(&self) -> &[Dense<F>] {
        &self.layers[..self.layers.len() - self.head_len()]
    }

    pub fn layers(&self) -> &[Dense<F>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense<F>] {
        &mut self.layers
    }

    /// Zero-valued network of the same shape, used for gradients and moments.
    pub fn zeros_like(&self) -> Self {
        QNetwork {
            dueling: self.dueling,
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.inputs(), l.outputs()))
                .collect(),
        }
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.dueling == other.dueling
            && self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.weights.dim() == b.weights.dim())
    }

    /// All parameter tensors in a fixed order.
    pub fn tensors(&self) -> impl Iterator<Item = &[F]> {
        self.layers.iter().flat_map(|l| {
            [
                l.weights.as_slice().expect("standard layout"),
                l.bias.as_slice().expect("standard layout"),
            ]
        })
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut [F]> {
        self.layers.iter_mut().flat_map(|l| {
            [
                l.weights.as_slice_mut().expect("standard layout"),
                l.bias.as_slice_mut().expect("standard layout"),
            ]
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().map(<[F]>::len).sum()
    }

    /// Hard copy of every parameter from `source`.
    pub fn copy_from(&mut self, source: &Self) -> Result<()> {
        if !self.same_shape(source) {
            return Err(Error::contract("cannot sync networks with different architectures"));
        }
        for (dst, src) in self.tensors_mut().zip(source.tensors()) {
            dst.copy_from_slice(src);
        }
        Ok(())
    }

    fn check_input(&self, obs: &ArrayView2<F>) -> Result<()> {
        if obs.nrows() == 0 {
            return Err(Error::contract("forward pass needs at least one row"));
        }
        if obs.ncols() != self.input_dim() {
            return Err(Error::contract(format!(
                "observation width {} does not match network input {}",
                obs.ncols(),
                self.input_dim()
            )));
        }
        if obs.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("non-finite value in network input"));
        }
        Ok(())
    }

    /// Q-values `[batch, action_count]`.
    pub fn forward(&self, obs: ArrayView2<F>) -> Result<Array2<F>> {
        Ok(self.forward_cached(obs)?.q)
    }

    pub fn forward_cached(&self, obs: ArrayView2<F>) -> Result<ForwardCache<F>> {
        self.check_input(&obs)?;
        let mut activations = Vec::with_capacity(self.layers.len());
        let mut x = obs.to_owned();
        for layer in self.hidden_layers() {
            let mut z = layer.apply(&x.view());
            z.mapv_inplace(|v| v.max(F::zero()));
            activations.push(x);
            x = z;
        }
        let (q, value) = if self.dueling {
            let n = self.layers.len();
            let value = self.layers[n - 2].apply(&x.view());
            let mut adv = self.layers[n - 1].apply(&x.view());
            let mean = adv.mean_axis(Axis(1)).expect("non-empty action set");
            for (mut row, (&m, &v)) in adv.outer_iter_mut().zip(mean.iter().zip(value.iter())) {
                row.mapv_inplace(|a| a - m + v);
            }
            (adv, Some(value))
        } else {
            (self.layers.last().unwrap().apply(&x.view()), None)
        };
        activations.push(x);
        Ok(ForwardCache {
            activations,
            q,
            value,
        })
    }

    /// Gradient of a scalar loss with respect to every parameter, given
    /// `dloss/dq` for the batch the cache was computed on.
    pub fn backward(&self, cache: &ForwardCache<F>, grad_q: &Array2<F>) -> QNetwork<F> {
        let mut grads = self.zeros_like();
        let n = self.layers.len();
        let last_hidden = cache.activations.last().unwrap();
        let mut grad_h = if self.dueling {
            let actions = F::from_usize(self.action_count()).unwrap();
            let grad_v = grad_q.sum_axis(Axis(1)).insert_axis(Axis(1));
            let mut grad_a = grad_q.clone();
            for (mut row, &s) in grad_a.outer_iter_mut().zip(grad_v.iter()) {
                let mean = s / actions;
                row.mapv_inplace(|g| g - mean);
            }
            let value_layer = &self.layers[n - 2];
            let adv_layer = &self.layers[n - 1];
            grads.layers[n - 2].weights.assign(&last_hidden.t().dot(&grad_v));
            grads.layers[n - 2].bias.assign(&grad_v.sum_axis(Axis(0)));
            grads.layers[n - 1].weights.assign(&last_hidden.t().dot(&grad_a));
            grads.layers[n - 1].bias.assign(&grad_a.sum_axis(Axis(0)));
            let mut gh = grad_v.dot(&value_layer.weights.t());
            gh += &grad_a.dot(&adv_layer.weights.t());
            gh
        } else {
            let head = &self.layers[n - 1];
            grads.layers[n - 1].weights.assign(&last_hidden.t().dot(grad_q));
            grads.layers[n - 1].bias.assign(&grad_q.sum_axis(Axis(0)));
            grad_q.dot(&head.weights.t())
        };
        for i in (0..n - self.head_len()).rev() {
            // rectifier mask: the layer output is activations[i + 1]
            ndarray::Zip::from(&mut grad_h)
                .and(&cache.activations[i + 1])
                .for_each(|g, &a| {
                    if a <= F::zero() {
                        *g = F::zero();
                    }
                });
            let input = &cache.activations[i];
            grads.layers[i].weights.assign(&input.t().dot(&grad_h));
            grads.layers[i].bias.assign(&grad_h.sum_axis(Axis(0)));
            if i > 0 {
                grad_h = grad_h.dot(&self.layers[i].weights.t());
            }
        }
        grads
    }

    /// Converts parameters to another float width.
    pub fn cast<G: Real>(&self) -> QNetwork<G> {
        let conv = |v: &F| G::of(v.to_f64().unwrap());
        QNetwork {
            dueling: self.dueling,
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    weights: l.weights.map(conv),
                    bias: l.bias.map(conv),
                })
                .collect(),
        }
    }

    pub fn save(&self, mut w: impl Write) -> Result<()> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(mut r: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    /// Versioned checkpoint layout, all integers little-endian:
    /// `b"SQNT"`, `u16` version, `u8` float width in bytes, `u8` dueling flag,
    /// `u32` tensor count, then per tensor `u32` rank, `u32` dims and the
    /// row-major data.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.push(F::BYTES);
        out.push(self.dueling as u8);
        out.extend_from_slice(&((self.layers.len() * 2) as u32).to_le_bytes());
        for layer in &self.layers {
            let (i, o) = layer.weights.dim();
            for (dims, data) in [
                (vec![i, o], layer.weights.as_slice().unwrap()),
                (vec![o], layer.bias.as_slice().unwrap()),
            ] {
                out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
                for d in dims {
                    out.extend_from_slice(&(d as u32).to_le_bytes());
                }
                for &v in data {
                    v.write_le(&mut out);
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a network checkpoint".into()));
        }
        let version = u16::from_le_bytes(cur.take(2)?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let width = cur.take(1)?[0];
        if width != F::BYTES {
            return Err(Error::Format(format!(
                "checkpoint stores {width}-byte floats, expected {}",
                F::BYTES
            )));
        }
        let dueling = cur.take(1)?[0] != 0;
        let tensors = cur.u32()? as usize;
        if tensors % 2 != 0 || tensors < 2 * (1 + dueling as usize) {
            return Err(Error::Format(format!("bad tensor count {tensors}")));
        }
        let mut layers = Vec::with_capacity(tensors / 2);
        for _ in 0..tensors / 2 {
            let w_dims = cur.dims()?;
            if w_dims.len() != 2 {
                return Err(Error::Format("weight tensor must be rank 2".into()));
            }
            let weights = Array2::from_shape_vec((w_dims[0], w_dims[1]), cur.floats::<F>(w_dims[0] * w_dims[1])?)
                .map_err(|e| Error::Format(e.to_string()))?;
            let b_dims = cur.dims()?;
            if b_dims != [w_dims[1]] {
                return Err(Error::Format("bias does not match layer width".into()));
            }
            let bias = Array1::from_vec(cur.floats::<F>(b_dims[0])?);
            layers.push(Dense { weights, bias });
        }
        if cur.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        let net = QNetwork { dueling, layers };
        let arch = net.architecture();
        if !net.same_shape(&QNetwork::<F>::zeros(&arch)) {
            return Err(Error::Format("layer chain does not connect".into()));
        }
        Ok(net)
    }
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"SQNT";
const CHECKPOINT_VERSION: u16 = 1;

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Format("checkpoint truncated".into()));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn dims(&mut self) -> Result<Vec<usize>> {
        let rank = self.u32()? as usize;
        if rank > 2 {
            return Err(Error::Format(format!("tensor rank {rank} unsupported")));
        }
        (0..rank).map(|_| self.u32().map(|d| d as usize)).collect()
    }

    fn floats<F: Real>(&mut self, n: usize) -> Result<Vec<F>> {
        let width = F::BYTES as usize;
        let raw = self.take(n * width)?;
        Ok(raw.chunks_exact(width).map(F::read_le).collect())
    }
}

/// Stacks flattened observations into a `[rows, dim]` matrix.
pub fn stack_rows<'a, F: Real>(rows: impl ExactSizeIterator<Item = &'a [f32]>, dim: usize) -> Array2<F> {
    let n = rows.len();
    let mut data = Vec::with_capacity(n * dim);
    for r in rows {
        debug_assert_eq!(r.len(), dim);
        data.extend(r.iter().map(|&v| F::of(v as f64)));
    }
    Array2::from_shape_vec((n, dim), data).expect("row lengths match dim")
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<F: PartialOrd + Copy>(values: impl IntoIterator<Item = F>) -> usize {
    let mut best = 0;
    let mut best_v = None;
    for (i, v) in values.into_iter().enumerate() {
        match best_v {
            Some(b) if v <= b => {}
            _ => {
                best = i;
                best_v = Some(v);
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn arch(dueling: bool) -> Architecture {
        Architecture {
            input_dim: 4,
            hidden: vec![8, 6],
            action_count: 3,
            dueling,
        }
    }

    #[test]
    fn zero_network_outputs_zero() {
        for dueling in [false, true] {
            let net = QNetwork::<f32>::zeros(&arch(dueling));
            let q = net.forward(Array2::from_elem((5, 4), 0.7).view()).unwrap();
            assert_eq!(q.dim(), (5, 3));
            assert!(q.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn dueling_advantages_are_centered() {
        let net = QNetwork::<f64>::new(&arch(true), 11);
        let x = Array2::from_shape_fn((7, 4), |(i, j)| (i as f64 - j as f64) * 0.3);
        let cache = net.forward_cached(x.view()).unwrap();
        let v = cache.value.as_ref().unwrap();
        for (row, &val) in cache.q.outer_iter().zip(v.iter()) {
            let mean = row.iter().map(|q| q - val).sum::<f64>() / 3.0;
            assert!(mean.abs() < 1e-6);
        }
    }

    #[test]
    fn hand_computed_single_layer() {
        // no hidden layer: q = x W + b
        let mut net = QNetwork::<f64>::zeros(&Architecture {
            input_dim: 2,
            hidden: vec![],
            action_count: 2,
            dueling: false,
        });
        net.layers[0].weights = array![[1.0, 2.0], [3.0, 4.0]];
        net.layers[0].bias = array![0.5, -0.5];
        let q = net.forward(array![[1.0, 1.0], [2.0, -1.0]].view()).unwrap();
        // [1+3+0.5, 2+4-0.5] and [2-3+0.5, 4-4-0.5]
        assert_eq!(q, array![[4.5, 5.5], [-0.5, -0.5]]);
    }

    #[test]
    fn rejects_bad_input() {
        let net = QNetwork::<f32>::new(&arch(false), 1);
        assert!(net.forward(Array2::zeros((0, 4)).view()).is_err());
        assert!(net.forward(Array2::zeros((1, 3)).view()).is_err());
        let mut x = Array2::zeros((1, 4));
        x[[0, 2]] = f32::NAN;
        assert!(matches!(net.forward(x.view()), Err(Error::Contract(_))));
    }

    #[test]
    fn copy_is_deep_and_checked() {
        let src = QNetwork::<f32>::new(&arch(true), 3);
        let mut dst = QNetwork::<f32>::new(&arch(true), 4);
        dst.copy_from(&src).unwrap();
        assert_eq!(dst, src);
        let other = QNetwork::<f32>::new(&arch(false), 4);
        assert!(dst.copy_from(&other).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        for dueling in [false, true] {
            let net = QNetwork::<f32>::new(&arch(dueling), 9);
            let bytes = net.to_bytes();
            assert_eq!(QNetwork::<f32>::from_bytes(&bytes).unwrap(), net);
            assert!(QNetwork::<f64>::from_bytes(&bytes).is_err());
            assert!(QNetwork::<f32>::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        }
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax([0.0, 0.0, 0.0]), 0);
        assert_eq!(argmax([1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax([-1.0, -2.0]), 0);
    }
}
