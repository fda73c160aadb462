//! The three trained decoders: input construction from aligned trials,
//! windowed training sets and the text checkpoint format.
//!
//! A checkpoint looks like
//!
//! ```text
//! arch=cnnlstm channels=18 frame_len=64 seq_len=10 seed=7 epochs=50
//! layer conv1d 18 64 15
//! weight 0.0123 -0.044 ...
//! bias 0 0 ...
//! layer relu
//! ...
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::dataio::Dataset;
use crate::error::{invalid, shape, Error, Result};
use crate::eval::Decoder;
use crate::mlr::lag_vector;
use crate::wpd::{leaf_vector, LeafOrder, WaveletFilterPair};

use super::layers::Layer;
use super::model::{build_cnn_lstm, build_mlp, Model};
use super::tensor::Tensor;
use super::train::SampleSource;

pub const DEFAULT_FRAME_LEN: usize = 64;
pub const DEFAULT_SEQ_LEN: usize = 10;
pub const DEFAULT_WPD_DEPTH: usize = 5;

/// Decoder family and the input geometry it was built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    /// Lag vector of `channels · (max_lag + 1)` values.
    Mlp { channels: usize, max_lag: usize },
    /// `seq_len` consecutive raw windows of `frame_len` samples.
    CnnLstm {
        channels: usize,
        frame_len: usize,
        seq_len: usize,
    },
    /// As `CnnLstm`, but each channel's window is replaced by its db1 wavelet
    /// packet leaves at `depth`, lowest band first.
    WpdCnnLstm {
        channels: usize,
        frame_len: usize,
        seq_len: usize,
        depth: usize,
    },
}

impl Arch {
    pub fn id(&self) -> &'static str {
        match self {
            Arch::Mlp { .. } => "mlp",
            Arch::CnnLstm { .. } => "cnnlstm",
            Arch::WpdCnnLstm { .. } => "wpd-cnnlstm",
        }
    }

    pub fn channels(&self) -> usize {
        match *self {
            Arch::Mlp { channels, .. }
            | Arch::CnnLstm { channels, .. }
            | Arch::WpdCnnLstm { channels, .. } => channels,
        }
    }

    /// Earliest sample index with a complete input.
    pub fn context(&self) -> usize {
        match *self {
            Arch::Mlp { max_lag, .. } => max_lag,
            Arch::CnnLstm {
                frame_len, seq_len, ..
            }
            | Arch::WpdCnnLstm {
                frame_len, seq_len, ..
            } => frame_len + seq_len - 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels() == 0 {
            return Err(Error::Config("decoder needs at least one channel".into()));
        }
        if let Arch::WpdCnnLstm {
            frame_len, depth, ..
        } = *self
        {
            if depth == 0 || frame_len % (1 << depth) != 0 {
                return Err(Error::Config(format!(
                    "frame length {frame_len} must be a multiple of 2^{depth}"
                )));
            }
        }
        Ok(())
    }

    /// Untrained model with zero parameters.
    pub fn build(&self) -> Result<Model> {
        self.validate()?;
        match *self {
            Arch::Mlp { channels, max_lag } => build_mlp(channels * (max_lag + 1)),
            Arch::CnnLstm {
                channels,
                frame_len,
                seq_len,
            }
            | Arch::WpdCnnLstm {
                channels,
                frame_len,
                seq_len,
                ..
            } => build_cnn_lstm(channels, frame_len, seq_len),
        }
    }

    /// Network input for predicting sample `t` of `eeg` (channels × T).
    pub fn input_at(&self, eeg: &DMatrix<f64>, t: usize) -> Result<Tensor> {
        if eeg.nrows() != self.channels() {
            return Err(shape(format!(
                "{} decoder expects {} channels, got {}",
                self.id(),
                self.channels(),
                eeg.nrows()
            )));
        }
        if t < self.context() || t >= eeg.ncols() {
            return Err(invalid(format!(
                "sample {t} outside the predictable range {}..{}",
                self.context(),
                eeg.ncols()
            )));
        }
        match *self {
            Arch::Mlp { channels, max_lag } => {
                let mut v = vec![0.0; channels * (max_lag + 1)];
                lag_vector(eeg, max_lag, t, &mut v);
                Ok(Tensor::from_vec(v))
            }
            Arch::CnnLstm {
                channels,
                frame_len,
                seq_len,
            } => {
                let mut data = Vec::with_capacity(seq_len * channels * frame_len);
                for tau in t + 1 - seq_len..=t {
                    let first = tau + 1 - frame_len;
                    for c in 0..channels {
                        data.extend((first..=tau).map(|k| eeg[(c, k)]));
                    }
                }
                Tensor::new(vec![seq_len, channels, frame_len], data)
            }
            Arch::WpdCnnLstm {
                channels,
                frame_len,
                seq_len,
                depth,
            } => {
                let wavelet = WaveletFilterPair::db1();
                let mut data = Vec::with_capacity(seq_len * channels * frame_len);
                let mut window = vec![0.0; frame_len];
                for tau in t + 1 - seq_len..=t {
                    let first = tau + 1 - frame_len;
                    for c in 0..channels {
                        for (k, w) in window.iter_mut().enumerate() {
                            *w = eeg[(c, first + k)];
                        }
                        data.extend(leaf_vector(&window, depth, &wavelet, LeafOrder::Frequency)?);
                    }
                }
                Tensor::new(vec![seq_len, channels, frame_len], data)
            }
        }
    }

    fn header_fields(&self) -> BTreeMap<&'static str, usize> {
        let mut m = BTreeMap::new();
        m.insert("channels", self.channels());
        match *self {
            Arch::Mlp { max_lag, .. } => {
                m.insert("lag", max_lag);
            }
            Arch::CnnLstm {
                frame_len, seq_len, ..
            } => {
                m.insert("frame_len", frame_len);
                m.insert("seq_len", seq_len);
            }
            Arch::WpdCnnLstm {
                frame_len,
                seq_len,
                depth,
                ..
            } => {
                m.insert("frame_len", frame_len);
                m.insert("seq_len", seq_len);
                m.insert("depth", depth);
            }
        }
        m
    }
}

/// Training samples: every `stride`-th predictable time point of every
/// trial from `start` on, targets taken from the kinematics.
pub struct WindowSource<'a> {
    arch: Arch,
    data: &'a Dataset,
    index: Vec<(usize, usize)>,
}

impl<'a> WindowSource<'a> {
    pub fn new(arch: Arch, data: &'a Dataset, start: usize, stride: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::Config("train_stride must be at least 1".into()));
        }
        let start = start.max(arch.context());
        let mut index = Vec::new();
        for (k, trial) in data.trials.iter().enumerate() {
            if trial.channels() != arch.channels() {
                return Err(shape(format!(
                    "trial {} has {} channels, decoder expects {}",
                    trial.trial_id,
                    trial.channels(),
                    arch.channels()
                )));
            }
            index.extend((start..trial.samples()).step_by(stride).map(|t| (k, t)));
        }
        Ok(WindowSource { arch, data, index })
    }
}

impl SampleSource for WindowSource<'_> {
    fn len(&self) -> usize {
        self.index.len()
    }

    fn sample(&self, i: usize) -> Result<(Tensor, [f64; 3])> {
        let (k, t) = self.index[i];
        let trial = &self.data.trials[k];
        let x = self.arch.input_at(&trial.eeg, t)?;
        let y = trial.kinematics.column(t);
        Ok((x, [y[0], y[1], y[2]]))
    }
}

/// A trained network together with its input geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralDecoder {
    pub arch: Arch,
    pub model: Model,
    pub seed: u64,
    pub epochs: usize,
}

impl NeuralDecoder {
    /// Freshly initialized decoder.
    pub fn new(arch: Arch, seed: u64) -> Result<Self> {
        let mut model = arch.build()?;
        model.init_glorot(seed);
        Ok(NeuralDecoder {
            arch,
            model,
            seed,
            epochs: 0,
        })
    }

    pub fn to_checkpoint(&self) -> String {
        let mut out = format!("arch={}", self.arch.id());
        for (k, v) in self.arch.header_fields() {
            let _ = write!(out, " {k}={v}");
        }
        let _ = writeln!(out, " seed={} epochs={}", self.seed, self.epochs);
        for layer in &self.model.layers {
            out.push_str("layer ");
            out.push_str(layer.kind());
            for d in layer.dims() {
                let _ = write!(out, " {d}");
            }
            out.push('\n');
            for (name, values) in ["weight", "bias"].iter().zip(layer.params()) {
                out.push_str(name);
                for v in values {
                    let _ = write!(out, " {v}");
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn from_checkpoint(path: &Path, text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse(path, 1, "empty checkpoint"))?;
        let mut fields = BTreeMap::new();
        for part in header.split_whitespace() {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::parse(path, 1, format!("bad header field `{part}`")))?;
            fields.insert(k, v);
        }
        let num = |k: &str| -> Result<usize> {
            fields
                .get(k)
                .ok_or_else(|| Error::parse(path, 1, format!("header lacks `{k}`")))?
                .parse()
                .map_err(|_| Error::parse(path, 1, format!("bad value for `{k}`")))
        };
        let arch = match fields.get("arch").copied() {
            Some("mlp") => Arch::Mlp {
                channels: num("channels")?,
                max_lag: num("lag")?,
            },
            Some("cnnlstm") => Arch::CnnLstm {
                channels: num("channels")?,
                frame_len: num("frame_len")?,
                seq_len: num("seq_len")?,
            },
            Some("wpd-cnnlstm") => Arch::WpdCnnLstm {
                channels: num("channels")?,
                frame_len: num("frame_len")?,
                seq_len: num("seq_len")?,
                depth: num("depth")?,
            },
            other => {
                return Err(Error::parse(
                    path,
                    1,
                    format!("unknown architecture {other:?}"),
                ))
            }
        };
        let seed = fields
            .get("seed")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::parse(path, 1, "bad or missing seed"))?;
        let epochs = num("epochs")?;
        let mut model = arch
            .build()
            .map_err(|e| Error::parse(path, 1, e.to_string()))?;

        for layer in model.layers.iter_mut() {
            let (i, line) = lines
                .next()
                .ok_or_else(|| Error::parse(path, text.lines().count(), "checkpoint ends early"))?;
            let mut expect = format!("layer {}", layer.kind());
            for d in layer.dims() {
                let _ = write!(expect, " {d}");
            }
            if line.trim() != expect {
                return Err(Error::parse(
                    path,
                    i + 1,
                    format!("expected `{expect}`, found `{}`", line.trim()),
                ));
            }
            for (name, values) in ["weight", "bias"].iter().zip(layer.params_mut()) {
                let (i, line) = lines.next().ok_or_else(|| {
                    Error::parse(path, text.lines().count(), "checkpoint ends early")
                })?;
                let mut parts = line.split_whitespace();
                if parts.next() != Some(name) {
                    return Err(Error::parse(path, i + 1, format!("expected {name} values")));
                }
                let parsed: Vec<f64> = parts
                    .map(|p| {
                        p.parse::<f64>()
                            .map_err(|_| Error::parse(path, i + 1, format!("bad number `{p}`")))
                    })
                    .collect::<Result<_>>()?;
                if parsed.len() != values.len() {
                    return Err(Error::parse(
                        path,
                        i + 1,
                        format!(
                            "expected {} {name} values, got {}",
                            values.len(),
                            parsed.len()
                        ),
                    ));
                }
                *values = parsed;
            }
        }
        if let Some((i, _)) = lines.next() {
            return Err(Error::parse(
                path,
                i + 1,
                "trailing content after the last layer",
            ));
        }
        Ok(NeuralDecoder {
            arch,
            model,
            seed,
            epochs,
        })
    }
}

impl Decoder for NeuralDecoder {
    fn context(&self) -> usize {
        self.arch.context()
    }

    fn predict_trial(&self, eeg: &DMatrix<f64>, start: usize) -> Result<DMatrix<f64>> {
        let start = start.max(self.context());
        let cols: Vec<Vec<f64>> = (start..eeg.ncols())
            .into_par_iter()
            .map(|t| {
                Ok(self
                    .model
                    .forward(&self.arch.input_at(eeg, t)?)?
                    .into_data())
            })
            .collect::<Result<_>>()?;
        Ok(DMatrix::from_fn(3, cols.len(), |a, k| cols[k][a]))
    }
}

/// True when the network has no parameters left at their initial zero.
pub fn is_untrained(model: &Model) -> bool {
    model.layers.iter().all(|l| match l {
        Layer::Relu | Layer::Flatten | Layer::MaxPool1d { .. } => true,
        _ => l.params().iter().all(|p| p.iter().all(|v| *v == 0.0)),
    })
}
