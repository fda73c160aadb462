//! Layers with analytic gradients. Leading input dimensions are treated as
//! independent frames, so the same convolution stack runs on a single
//! `[maps, len]` window or on a `[steps, maps, len]` sequence.

use crate::error::{shape, Result};

use super::tensor::Tensor;

/// Fully connected affine map on the last dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub inputs: usize,
    pub outputs: usize,
    /// outputs × inputs, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Affine {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Affine {
            inputs,
            outputs,
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }
}

/// Valid-mode 1-D correlation across input maps.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub in_maps: usize,
    pub out_maps: usize,
    pub kernel: usize,
    /// out_maps × in_maps × kernel.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv1d {
    pub fn zeros(in_maps: usize, out_maps: usize, kernel: usize) -> Self {
        Conv1d {
            in_maps,
            out_maps,
            kernel,
            weight: vec![0.0; out_maps * in_maps * kernel],
            bias: vec![0.0; out_maps],
        }
    }
}

/// LSTM over `[steps, features]`, emitting the final hidden state.
///
/// Weight rows are grouped by gate in the order input, forget, output,
/// candidate; columns are `[h_prev, f]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    pub inputs: usize,
    pub units: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Lstm {
    pub fn zeros(inputs: usize, units: usize) -> Self {
        Lstm {
            inputs,
            units,
            weight: vec![0.0; 4 * units * (units + inputs)],
            bias: vec![0.0; 4 * units],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(Affine),
    /// Output projection; identical arithmetic to `Dense`.
    Linear(Affine),
    Relu,
    Conv1d(Conv1d),
    MaxPool1d {
        width: usize,
    },
    /// Merges the last two dimensions.
    Flatten,
    Lstm(Lstm),
}

/// Values kept from the forward pass that the backward pass cannot recover
/// from the layer input alone.
#[derive(Debug, Clone, PartialEq)]
pub enum Cache {
    None,
    Argmax(Vec<usize>),
    Lstm(LstmTrace),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LstmTrace {
    /// Per step: `[h_prev, f]`.
    pub z: Vec<Vec<f64>>,
    /// Per step: activated gates i, m, o, g stacked.
    pub gates: Vec<Vec<f64>>,
    /// c_0 (zero) then c after each step.
    pub cells: Vec<Vec<f64>>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn frames(shape: &[usize], keep: usize) -> usize {
    shape[..shape.len() - keep].iter().product()
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::Linear(_) => "linear",
            Layer::Relu => "relu",
            Layer::Conv1d(_) => "conv1d",
            Layer::MaxPool1d { .. } => "maxpool1d",
            Layer::Flatten => "flatten",
            Layer::Lstm(_) => "lstm",
        }
    }

    /// Parameter arrays in checkpoint order: weight, then bias.
    pub fn params(&self) -> Vec<&[f64]> {
        match self {
            Layer::Dense(a) | Layer::Linear(a) => vec![&a.weight, &a.bias],
            Layer::Conv1d(c) => vec![&c.weight, &c.bias],
            Layer::Lstm(l) => vec![&l.weight, &l.bias],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        match self {
            Layer::Dense(a) | Layer::Linear(a) => vec![&mut a.weight, &mut a.bias],
            Layer::Conv1d(c) => vec![&mut c.weight, &mut c.bias],
            Layer::Lstm(l) => vec![&mut l.weight, &mut l.bias],
            _ => Vec::new(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Fan-in and fan-out used for initialization.
    pub fn fans(&self) -> Option<(usize, usize)> {
        match self {
            Layer::Dense(a) | Layer::Linear(a) => Some((a.inputs, a.outputs)),
            Layer::Conv1d(c) => Some((c.in_maps * c.kernel, c.out_maps * c.kernel)),
            Layer::Lstm(l) => Some((l.units + l.inputs, l.units)),
            _ => None,
        }
    }

    /// Dimension descriptors written to checkpoints.
    pub fn dims(&self) -> Vec<usize> {
        match self {
            Layer::Dense(a) | Layer::Linear(a) => vec![a.inputs, a.outputs],
            Layer::Conv1d(c) => vec![c.in_maps, c.out_maps, c.kernel],
            Layer::MaxPool1d { width } => vec![*width],
            Layer::Lstm(l) => vec![l.inputs, l.units],
            Layer::Relu | Layer::Flatten => Vec::new(),
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let bad = |msg: String| shape(format!("{}: {msg}", self.kind()));
        match self {
            Layer::Dense(a) | Layer::Linear(a) => {
                if input.last() != Some(&a.inputs) {
                    return Err(bad(format!(
                        "expects last dimension {}, got {input:?}",
                        a.inputs
                    )));
                }
                let mut s = input.to_vec();
                *s.last_mut().unwrap() = a.outputs;
                Ok(s)
            }
            Layer::Relu => Ok(input.to_vec()),
            Layer::Conv1d(c) => {
                let r = input.len();
                if r < 2 || input[r - 2] != c.in_maps {
                    return Err(bad(format!(
                        "expects [.., {}, len], got {input:?}",
                        c.in_maps
                    )));
                }
                if input[r - 1] < c.kernel {
                    return Err(bad(format!(
                        "kernel {} larger than input length {}",
                        c.kernel,
                        input[r - 1]
                    )));
                }
                let mut s = input.to_vec();
                s[r - 2] = c.out_maps;
                s[r - 1] = input[r - 1] - c.kernel + 1;
                Ok(s)
            }
            Layer::MaxPool1d { width } => {
                let r = input.len();
                if *width < 1 {
                    return Err(bad("width must be at least 1".into()));
                }
                if r < 1 || input[r - 1] < *width {
                    return Err(bad(format!("input {input:?} shorter than width {width}")));
                }
                let mut s = input.to_vec();
                s[r - 1] /= width;
                Ok(s)
            }
            Layer::Flatten => {
                let r = input.len();
                if r < 2 {
                    return Err(bad(format!("needs rank ≥ 2, got {input:?}")));
                }
                let mut s = input[..r - 2].to_vec();
                s.push(input[r - 2] * input[r - 1]);
                Ok(s)
            }
            Layer::Lstm(l) => {
                if input.len() != 2 || input[1] != l.inputs {
                    return Err(bad(format!("expects [steps, {}], got {input:?}", l.inputs)));
                }
                if input[0] == 0 {
                    return Err(bad("empty sequence".into()));
                }
                Ok(vec![l.units])
            }
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Cache)> {
        let out_shape = self.output_shape(x.shape())?;
        let mut y = Tensor::zeros(&out_shape);
        let cache = match self {
            Layer::Dense(a) | Layer::Linear(a) => {
                let yd = y.data_mut();
                for (f, xs) in x.data().chunks_exact(a.inputs).enumerate() {
                    for o in 0..a.outputs {
                        let w = &a.weight[o * a.inputs..(o + 1) * a.inputs];
                        yd[f * a.outputs + o] = a.bias[o] + dot(w, xs);
                    }
                }
                Cache::None
            }
            Layer::Relu => {
                for (o, v) in y.data_mut().iter_mut().zip(x.data()) {
                    *o = v.max(0.0);
                }
                Cache::None
            }
            Layer::Conv1d(c) => {
                let len = x.last_dim();
                let lo = len - c.kernel + 1;
                let n = frames(x.shape(), 2);
                let yd = y.data_mut();
                for f in 0..n {
                    let xf = &x.data()[f * c.in_maps * len..(f + 1) * c.in_maps * len];
                    for d in 0..c.out_maps {
                        let out = &mut yd[(f * c.out_maps + d) * lo..(f * c.out_maps + d + 1) * lo];
                        out.fill(c.bias[d]);
                        for i in 0..c.in_maps {
                            let xi = &xf[i * len..(i + 1) * len];
                            let w = &c.weight[(d * c.in_maps + i) * c.kernel
                                ..(d * c.in_maps + i + 1) * c.kernel];
                            for (k, wk) in w.iter().enumerate() {
                                for (o, xv) in out.iter_mut().zip(&xi[k..k + lo]) {
                                    *o += wk * xv;
                                }
                            }
                        }
                    }
                }
                Cache::None
            }
            Layer::MaxPool1d { width } => {
                let len = x.last_dim();
                let lo = len / width;
                let rows = x.len() / len;
                let mut idx = Vec::with_capacity(rows * lo);
                let yd = y.data_mut();
                for r in 0..rows {
                    for j in 0..lo {
                        let base = r * len + j * width;
                        let mut best = base;
                        for p in base + 1..base + width {
                            if x.data()[p] > x.data()[best] {
                                best = p;
                            }
                        }
                        yd[r * lo + j] = x.data()[best];
                        idx.push(best);
                    }
                }
                Cache::Argmax(idx)
            }
            Layer::Flatten => {
                y.data_mut().copy_from_slice(x.data());
                Cache::None
            }
            Layer::Lstm(l) => {
                let (h, trace) = lstm_forward(l, x);
                y.data_mut().copy_from_slice(&h);
                Cache::Lstm(trace)
            }
        };
        Ok((y, cache))
    }

    /// Accumulates parameter gradients into `grad` (this layer's slice of the
    /// flat gradient, weight then bias) and returns the input gradient.
    pub fn backward(&self, x: &Tensor, cache: &Cache, dy: &Tensor, grad: &mut [f64]) -> Tensor {
        let mut dx = Tensor::zeros(x.shape());
        match (self, cache) {
            (Layer::Dense(a) | Layer::Linear(a), _) => {
                let (gw, gb) = grad.split_at_mut(a.weight.len());
                let dxd = dx.data_mut();
                for (f, xs) in x.data().chunks_exact(a.inputs).enumerate() {
                    let dyf = &dy.data()[f * a.outputs..(f + 1) * a.outputs];
                    let dxf = &mut dxd[f * a.inputs..(f + 1) * a.inputs];
                    for (o, &g) in dyf.iter().enumerate() {
                        if g == 0.0 {
                            continue;
                        }
                        gb[o] += g;
                        let w = &a.weight[o * a.inputs..(o + 1) * a.inputs];
                        let gwo = &mut gw[o * a.inputs..(o + 1) * a.inputs];
                        for i in 0..a.inputs {
                            gwo[i] += g * xs[i];
                            dxf[i] += g * w[i];
                        }
                    }
                }
            }
            (Layer::Relu, _) => {
                for ((d, v), g) in dx.data_mut().iter_mut().zip(x.data()).zip(dy.data()) {
                    *d = if *v > 0.0 { *g } else { 0.0 };
                }
            }
            (Layer::Conv1d(c), _) => {
                let len = x.last_dim();
                let lo = len - c.kernel + 1;
                let n = frames(x.shape(), 2);
                let (gw, gb) = grad.split_at_mut(c.weight.len());
                let dxd = dx.data_mut();
                for f in 0..n {
                    let xf = &x.data()[f * c.in_maps * len..(f + 1) * c.in_maps * len];
                    let dxf = &mut dxd[f * c.in_maps * len..(f + 1) * c.in_maps * len];
                    for d in 0..c.out_maps {
                        let g =
                            &dy.data()[(f * c.out_maps + d) * lo..(f * c.out_maps + d + 1) * lo];
                        gb[d] += g.iter().sum::<f64>();
                        for i in 0..c.in_maps {
                            let xi = &xf[i * len..(i + 1) * len];
                            let off = (d * c.in_maps + i) * c.kernel;
                            for k in 0..c.kernel {
                                gw[off + k] += dot(g, &xi[k..k + lo]);
                                let w = c.weight[off + k];
                                for (dxv, gv) in
                                    dxf[i * len + k..i * len + k + lo].iter_mut().zip(g)
                                {
                                    *dxv += w * gv;
                                }
                            }
                        }
                    }
                }
            }
            (Layer::MaxPool1d { .. }, Cache::Argmax(idx)) => {
                let dxd = dx.data_mut();
                for (p, g) in idx.iter().zip(dy.data()) {
                    dxd[*p] += g;
                }
            }
            (Layer::Flatten, _) => {
                dx.data_mut().copy_from_slice(dy.data());
            }
            (Layer::Lstm(l), Cache::Lstm(trace)) => {
                lstm_backward(l, trace, dy.data(), grad, dx.data_mut());
            }
            _ => unreachable!("cache does not belong to layer {}", self.kind()),
        }
        dx
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn lstm_forward(l: &Lstm, x: &Tensor) -> (Vec<f64>, LstmTrace) {
    let (u, fdim) = (l.units, l.inputs);
    let cols = u + fdim;
    let mut h = vec![0.0; u];
    let mut trace = LstmTrace {
        cells: vec![vec![0.0; u]],
        ..LstmTrace::default()
    };
    for f in x.data().chunks_exact(fdim) {
        let mut z = Vec::with_capacity(cols);
        z.extend_from_slice(&h);
        z.extend_from_slice(f);
        let mut gates = vec![0.0; 4 * u];
        for (r, g) in gates.iter_mut().enumerate() {
            let pre = l.bias[r] + dot(&l.weight[r * cols..(r + 1) * cols], &z);
            *g = if r < 3 * u { sigmoid(pre) } else { pre.tanh() };
        }
        let c_prev = trace.cells.last().unwrap();
        let mut c = vec![0.0; u];
        for k in 0..u {
            let (i, m, o, g) = (gates[k], gates[u + k], gates[2 * u + k], gates[3 * u + k]);
            c[k] = i * g + m * c_prev[k];
            h[k] = o * c[k].tanh();
        }
        trace.z.push(z);
        trace.gates.push(gates);
        trace.cells.push(c);
    }
    (h, trace)
}

fn lstm_backward(l: &Lstm, trace: &LstmTrace, dh_out: &[f64], grad: &mut [f64], dx: &mut [f64]) {
    let (u, fdim) = (l.units, l.inputs);
    let cols = u + fdim;
    let (gw, gb) = grad.split_at_mut(l.weight.len());
    let mut dh = dh_out.to_vec();
    let mut dc = vec![0.0; u];
    let mut da = vec![0.0; 4 * u];
    let mut dz = vec![0.0; cols];
    for s in (0..trace.z.len()).rev() {
        let gates = &trace.gates[s];
        let (c_prev, c) = (&trace.cells[s], &trace.cells[s + 1]);
        for k in 0..u {
            let (i, m, o, g) = (gates[k], gates[u + k], gates[2 * u + k], gates[3 * u + k]);
            let tc = c[k].tanh();
            let d_o = dh[k] * tc;
            dc[k] += dh[k] * o * (1.0 - tc * tc);
            let (d_i, d_g, d_m) = (dc[k] * g, dc[k] * i, dc[k] * c_prev[k]);
            da[k] = d_i * i * (1.0 - i);
            da[u + k] = d_m * m * (1.0 - m);
            da[2 * u + k] = d_o * o * (1.0 - o);
            da[3 * u + k] = d_g * (1.0 - g * g);
            dc[k] *= m;
        }
        let z = &trace.z[s];
        dz.fill(0.0);
        for (r, &a) in da.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            gb[r] += a;
            let w = &l.weight[r * cols..(r + 1) * cols];
            let gwr = &mut gw[r * cols..(r + 1) * cols];
            for j in 0..cols {
                gwr[j] += a * z[j];
                dz[j] += a * w[j];
            }
        }
        dh.copy_from_slice(&dz[..u]);
        dx[s * fdim..(s + 1) * fdim].copy_from_slice(&dz[u..]);
    }
}

/// One LSTM step from explicit state, for inspection and tests.
pub fn lstm_step(
    cell: &Lstm,
    f: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let u = cell.units;
    if f.len() != cell.inputs || h_prev.len() != u || c_prev.len() != u {
        return Err(shape(format!(
            "lstm step expects input {} and state {u}, got {}, {}, {}",
            cell.inputs,
            f.len(),
            h_prev.len(),
            c_prev.len()
        )));
    }
    let cols = u + cell.inputs;
    let z: Vec<f64> = h_prev.iter().chain(f).copied().collect();
    let pre = |r: usize| cell.bias[r] + dot(&cell.weight[r * cols..(r + 1) * cols], &z);
    let mut h = vec![0.0; u];
    let mut c = vec![0.0; u];
    for k in 0..u {
        let i = sigmoid(pre(k));
        let m = sigmoid(pre(u + k));
        let o = sigmoid(pre(2 * u + k));
        let g = pre(3 * u + k).tanh();
        c[k] = i * g + m * c_prev[k];
        h[k] = o * c[k].tanh();
    }
    Ok((h, c))
}

/// Elementwise max(0, x).
pub fn relu(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    y.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    y
}
