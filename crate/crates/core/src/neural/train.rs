use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};

use super::model::Model;
use super::optim::{AdamConfig, AdamState};
use super::tensor::Tensor;

/// Samples per parallel work unit. Gradients are summed inside a chunk in
/// index order and across chunks in chunk order, so results do not depend on
/// the thread count.
const CHUNK: usize = 8;

/// Indexed (input, target) pairs built on demand.
pub trait SampleSource: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn sample(&self, i: usize) -> Result<(Tensor, [f64; 3])>;
}

/// In-memory samples.
#[derive(Debug, Clone, Default)]
pub struct VecSource {
    pub samples: Vec<(Tensor, [f64; 3])>,
}

impl SampleSource for VecSource {
    fn len(&self) -> usize {
        self.samples.len()
    }

    fn sample(&self, i: usize) -> Result<(Tensor, [f64; 3])> {
        Ok(self.samples[i].clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Loss {
    #[default]
    Mse,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    pub loss: Loss,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 64,
            seed: 0,
            adam: AdamConfig::default(),
            loss: Loss::Mse,
        }
    }
}

/// Per-epoch mean losses.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct History {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<Option<f64>>,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss\n");
        for (e, (t, v)) in self.train_loss.iter().zip(&self.val_loss).enumerate() {
            match v {
                Some(v) => writeln!(out, "{},{t},{v}", e + 1),
                None => writeln!(out, "{},{t},", e + 1),
            }
            .expect("writing to a String");
        }
        out
    }
}

/// Summed squared error and its gradient over samples `idx`.
fn chunk_gradient(
    model: &Model,
    src: &dyn SampleSource,
    idx: &[usize],
    scale: f64,
) -> Result<(Vec<f64>, f64)> {
    let mut grad = vec![0.0; model.param_count()];
    let mut sse = 0.0;
    for &i in idx {
        let (x, target) = src.sample(i)?;
        let trace = model.forward_trace(&x)?;
        let y = trace.output.data();
        let mut dy = vec![0.0; 3];
        for a in 0..3 {
            let e = y[a] - target[a];
            sse += e * e;
            dy[a] = 2.0 * e * scale;
        }
        model.backward(&trace, &Tensor::from_vec(dy), &mut grad);
    }
    Ok((grad, sse))
}

fn batch_gradient(
    model: &Model,
    src: &dyn SampleSource,
    batch: &[usize],
) -> Result<(Vec<f64>, f64)> {
    let scale = 1.0 / (3.0 * batch.len() as f64);
    let parts: Vec<(Vec<f64>, f64)> = batch
        .par_chunks(CHUNK)
        .map(|c| chunk_gradient(model, src, c, scale))
        .collect::<Result<_>>()?;
    let mut grad = vec![0.0; model.param_count()];
    let mut sse = 0.0;
    for (g, s) in parts {
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        sse += s;
    }
    Ok((grad, sse))
}

/// Predictions for every sample, in index order.
pub fn predict_source(model: &Model, src: &dyn SampleSource) -> Result<Vec<[f64; 3]>> {
    (0..src.len())
        .into_par_iter()
        .map(|i| {
            let (x, _) = src.sample(i)?;
            let y = model.forward(&x)?;
            Ok([y.data()[0], y.data()[1], y.data()[2]])
        })
        .collect()
}

/// Mean squared error over all samples and axes.
pub fn evaluate_loss(model: &Model, src: &dyn SampleSource) -> Result<f64> {
    if src.is_empty() {
        return Err(invalid("cannot evaluate on an empty set"));
    }
    let sums: Vec<f64> = (0..src.len())
        .collect::<Vec<_>>()
        .par_chunks(CHUNK)
        .map(|c| -> Result<f64> {
            let mut s = 0.0;
            for &i in c {
                let (x, t) = src.sample(i)?;
                let y = model.forward(&x)?;
                s += (0..3).map(|a| (y.data()[a] - t[a]).powi(2)).sum::<f64>();
            }
            Ok(s)
        })
        .collect::<Result<_>>()?;
    Ok(sums.iter().sum::<f64>() / (3.0 * src.len() as f64))
}

/// Mini-batch Adam on mean squared error. The batch order comes from a
/// shuffle seeded by `cfg.seed`, so a rerun reproduces the history bit for
/// bit.
pub fn train(
    model: &mut Model,
    train_set: &dyn SampleSource,
    val_set: Option<&dyn SampleSource>,
    cfg: &TrainConfig,
) -> Result<History> {
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    if train_set.is_empty() {
        return Err(invalid("training set is empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(model.param_count(), cfg.adam);
    let mut params = model.flat_params();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = History::default();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sse = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let (grad, s) = batch_gradient(model, train_set, batch)?;
            if !s.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NanLoss { epoch });
            }
            sse += s;
            adam.update(&mut params, &grad);
            model.set_flat_params(&params)?;
        }
        let train_loss = sse / (3.0 * train_set.len() as f64);
        let val_loss = match val_set {
            Some(v) if !v.is_empty() => Some(evaluate_loss(model, v)?),
            _ => None,
        };
        if val_loss.is_some_and(|v| !v.is_finite()) {
            return Err(Error::NanLoss { epoch });
        }
        log::debug!("epoch {epoch}: train {train_loss:.6} val {val_loss:?}");
        history.train_loss.push(train_loss);
        history.val_loss.push(val_loss);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::model::build_mlp_sized;

    fn linear_source(n: usize) -> VecSource {
        let samples = (0..n)
            .map(|i| {
                let x = [(i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()];
                (
                    Tensor::from_vec(x.to_vec()),
                    [x[0] + 0.5 * x[1], -x[1], 0.25 * x[0]],
                )
            })
            .collect();
        VecSource { samples }
    }

    #[test]
    fn zero_lr_leaves_parameters() {
        let mut m = build_mlp_sized(2, &[5]).unwrap();
        m.init_glorot(1);
        let before = m.clone();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 4,
            adam: AdamConfig {
                lr: 0.0,
                ..AdamConfig::default()
            },
            ..TrainConfig::default()
        };
        train(&mut m, &linear_source(20), None, &cfg).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn same_seed_same_history() {
        let src = linear_source(50);
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 7,
            seed: 11,
            adam: AdamConfig {
                lr: 0.01,
                ..AdamConfig::default()
            },
            ..TrainConfig::default()
        };
        let run = || {
            let mut m = build_mlp_sized(2, &[6]).unwrap();
            m.init_glorot(2);
            let h = train(&mut m, &src, Some(&src), &cfg).unwrap();
            (m, h)
        };
        let (m1, h1) = run();
        let (m2, h2) = run();
        assert_eq!(h1, h2);
        assert_eq!(m1, m2);
        assert!(h1.train_loss[4] < h1.train_loss[0]);
        assert_eq!(h1.to_csv().lines().count(), 6);
    }

    #[test]
    fn nan_targets_abort_with_epoch() {
        let mut src = linear_source(4);
        src.samples[2].1[0] = f64::NAN;
        let mut m = build_mlp_sized(2, &[3]).unwrap();
        let err = train(&mut m, &src, None, &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NanLoss { epoch: 1 }));
        let zero_batch = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(train(&mut m, &linear_source(4), None, &zero_batch).is_err());
    }
}
