use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{shape, Result};

use super::layers::{Affine, Cache, Conv1d, Layer, Lstm};
use super::tensor::Tensor;

pub const MLP_HIDDEN: [usize; 3] = [300, 100, 50];

/// An ordered layer stack with a fixed per-sample input shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    input_shape: Vec<usize>,
    pub layers: Vec<Layer>,
}

/// Layer inputs and caches from one forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    inputs: Vec<Tensor>,
    caches: Vec<Cache>,
    pub output: Tensor,
}

impl Model {
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Model> {
        let model = Model {
            input_shape,
            layers,
        };
        model.output_shape()?;
        Ok(model)
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> Result<Vec<usize>> {
        let mut s = self.input_shape.clone();
        for l in &self.layers {
            s = l.output_shape(&s)?;
        }
        Ok(s)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            for p in l.params() {
                out.extend_from_slice(p);
            }
        }
        out
    }

    pub fn set_flat_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(shape(format!(
                "model has {} parameters, got {}",
                self.param_count(),
                values.len()
            )));
        }
        let mut off = 0;
        for l in &mut self.layers {
            for p in l.params_mut() {
                let n = p.len();
                p.copy_from_slice(&values[off..off + n]);
                off += n;
            }
        }
        Ok(())
    }

    /// Seeded uniform weights in ±sqrt(6 / (fan_in + fan_out)); zero biases.
    pub fn init_glorot(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in &mut self.layers {
            let Some((fan_in, fan_out)) = l.fans() else {
                continue;
            };
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut params = l.params_mut();
            for w in params[0].iter_mut() {
                *w = rng.random_range(-limit..limit);
            }
            params[1].fill(0.0);
        }
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape() != self.input_shape.as_slice() {
            return Err(shape(format!(
                "model expects input {:?}, got {:?}",
                self.input_shape,
                x.shape()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut cur = x.clone();
        for l in &self.layers {
            cur = l.forward(&cur)?.0;
        }
        Ok(cur)
    }

    pub fn forward_trace(&self, x: &Tensor) -> Result<Trace> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for l in &self.layers {
            let (y, c) = l.forward(&cur)?;
            inputs.push(std::mem::replace(&mut cur, y));
            caches.push(c);
        }
        Ok(Trace {
            inputs,
            caches,
            output: cur,
        })
    }

    /// Adds parameter gradients of `dy · output` into `grad` (flat, in
    /// parameter order) and returns the input gradient.
    pub fn backward(&self, trace: &Trace, dy: &Tensor, grad: &mut [f64]) -> Tensor {
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for l in &self.layers {
            offsets.push(off);
            off += l.param_count();
        }
        let mut cur = dy.clone();
        for (k, l) in self.layers.iter().enumerate().rev() {
            let g = &mut grad[offsets[k]..offsets[k] + l.param_count()];
            cur = l.backward(&trace.inputs[k], &trace.caches[k], &cur, g);
        }
        cur
    }
}

/// Dense(in,300)+ReLU, Dense(300,100)+ReLU, Dense(100,50)+ReLU, Linear(50,3).
/// Parameters start at zero; call [`Model::init_glorot`] before training.
pub fn build_mlp(inputs: usize) -> Result<Model> {
    build_mlp_sized(inputs, &MLP_HIDDEN)
}

pub fn build_mlp_sized(inputs: usize, hidden: &[usize]) -> Result<Model> {
    let mut layers = Vec::new();
    let mut prev = inputs;
    for &h in hidden {
        layers.push(Layer::Dense(Affine::zeros(prev, h)));
        layers.push(Layer::Relu);
        prev = h;
    }
    layers.push(Layer::Linear(Affine::zeros(prev, 3)));
    Model::new(vec![inputs], layers)
}

/// Sizes of the convolution-recurrent decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CnnLstmShape {
    pub maps: usize,
    pub frame_len: usize,
    pub seq_len: usize,
    pub conv1: (usize, usize),
    pub pool: usize,
    pub conv2: (usize, usize),
    pub units: usize,
}

impl CnnLstmShape {
    /// 64 filters of 15, pool 2, 32 filters of 7, 50 LSTM cells.
    pub fn standard(maps: usize, frame_len: usize, seq_len: usize) -> Self {
        CnnLstmShape {
            maps,
            frame_len,
            seq_len,
            conv1: (64, 15),
            pool: 2,
            conv2: (32, 7),
            units: 50,
        }
    }

    /// Per-map length after the second convolution, if positive.
    pub fn feature_len(&self) -> Option<usize> {
        let a = self.frame_len.checked_sub(self.conv1.1 - 1)?;
        let b = a / self.pool;
        b.checked_sub(self.conv2.1 - 1).filter(|n| *n > 0)
    }
}

/// Per frame: Conv1d + ReLU + MaxPool1d + Conv1d + ReLU + Flatten; the
/// frame features of the whole sequence feed an LSTM whose final hidden
/// state goes through Linear(units, 3).
pub fn build_cnn_lstm(maps: usize, frame_len: usize, seq_len: usize) -> Result<Model> {
    build_cnn_lstm_sized(CnnLstmShape::standard(maps, frame_len, seq_len))
}

pub fn build_cnn_lstm_sized(s: CnnLstmShape) -> Result<Model> {
    let len = s.feature_len().ok_or_else(|| {
        shape(format!(
            "frame length {} is too short for kernels {} and {} with pooling {}",
            s.frame_len, s.conv1.1, s.conv2.1, s.pool
        ))
    })?;
    if s.seq_len == 0 || s.maps == 0 {
        return Err(shape("sequence length and map count must be positive"));
    }
    let layers = vec![
        Layer::Conv1d(Conv1d::zeros(s.maps, s.conv1.0, s.conv1.1)),
        Layer::Relu,
        Layer::MaxPool1d { width: s.pool },
        Layer::Conv1d(Conv1d::zeros(s.conv1.0, s.conv2.0, s.conv2.1)),
        Layer::Relu,
        Layer::Flatten,
        Layer::Lstm(Lstm::zeros(s.conv2.0 * len, s.units)),
        Layer::Linear(Affine::zeros(s.units, 3)),
    ];
    Model::new(vec![s.seq_len, s.maps, s.frame_len], layers)
}
