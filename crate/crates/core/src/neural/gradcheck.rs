//! Central finite-difference checks of the analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

use super::model::Model;
use super::tensor::Tensor;

pub const FD_STEP: f64 = 1e-6;

/// |a − n| / max(|a|, |n|, floor). The floor keeps near-zero derivatives
/// from turning rounding noise into huge relative errors.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-5)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_param_error: f64,
    pub max_input_error: f64,
    pub params_checked: usize,
    pub inputs_checked: usize,
}

impl GradCheck {
    pub fn max_error(&self) -> f64 {
        self.max_param_error.max(self.max_input_error)
    }
}

fn probe(model: &Model, x: &Tensor, weights: &[f64]) -> Result<f64> {
    let y = model.forward(x)?;
    Ok(y.data().iter().zip(weights).map(|(a, b)| a * b).sum())
}

/// Compares the backward pass with central differences of the scalar
/// loss `r · model(x)` for a seeded random `r`. At most `max_coords`
/// parameters and inputs are probed, spread evenly over each vector.
pub fn check_model(model: &Model, x: &Tensor, seed: u64, max_coords: usize) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out_len: usize = model.output_shape()?.iter().product();
    let r: Vec<f64> = (0..out_len).map(|_| rng.random_range(-1.0..1.0)).collect();

    let trace = model.forward_trace(x)?;
    let mut grad = vec![0.0; model.param_count()];
    let dy = Tensor::new(trace.output.shape().to_vec(), r.clone())?;
    let dx = model.backward(&trace, &dy, &mut grad);

    let pick = |n: usize| -> Vec<usize> {
        if n <= max_coords {
            (0..n).collect()
        } else {
            (0..max_coords).map(|k| k * n / max_coords).collect()
        }
    };

    let mut params = model.flat_params();
    let mut probe_model = model.clone();
    let mut max_param_error: f64 = 0.0;
    let param_idx = pick(params.len());
    for &k in &param_idx {
        let orig = params[k];
        params[k] = orig + FD_STEP;
        probe_model.set_flat_params(&params)?;
        let up = probe(&probe_model, x, &r)?;
        params[k] = orig - FD_STEP;
        probe_model.set_flat_params(&params)?;
        let down = probe(&probe_model, x, &r)?;
        params[k] = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        max_param_error = max_param_error.max(relative_error(grad[k], numeric));
    }

    let mut xp = x.clone();
    let mut max_input_error: f64 = 0.0;
    let input_idx = pick(x.len());
    for &k in &input_idx {
        let orig = xp.data()[k];
        xp.data_mut()[k] = orig + FD_STEP;
        let up = probe(model, &xp, &r)?;
        xp.data_mut()[k] = orig - FD_STEP;
        let down = probe(model, &xp, &r)?;
        xp.data_mut()[k] = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        max_input_error = max_input_error.max(relative_error(dx.data()[k], numeric));
    }

    Ok(GradCheck {
        max_param_error,
        max_input_error,
        params_checked: param_idx.len(),
        inputs_checked: input_idx.len(),
    })
}

/// Seeded input of the given shape with entries in ±1, kept at least
/// `margin` away from zero so ReLU kinks are not straddled.
pub fn random_input(shape: &[usize], seed: u64, margin: f64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(margin..1.0);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

/// Replaces every parameter with a seeded uniform value in ±scale.
pub fn randomize_params(model: &mut Model, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values: Vec<f64> = (0..model.param_count())
        .map(|_| rng.random_range(-scale..scale))
        .collect();
    model.set_flat_params(&values).expect("length matches");
}
