//! Lagged multivariate linear regression from standardized EEG to 3-D
//! hand position, one independent least-squares fit per axis:
//!
//! ```text
//! P_a[t] = a_a + Σ_n Σ_{l=0..L} b_a(n, l) · V_n[t − l]
//! ```

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{invalid, shape, Error, Result};

pub const DEFAULT_MAX_LAG: usize = 10;
pub const DEFAULT_RIDGE: f64 = 1e-8;
pub const AXES: [&str; 3] = ["x", "y", "z"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LagSpec {
    pub max_lag: usize,
}

impl Default for LagSpec {
    fn default() -> Self {
        LagSpec {
            max_lag: DEFAULT_MAX_LAG,
        }
    }
}

/// Rows are time samples t ≥ L; columns are a leading 1 followed by
/// V_n[t − l], channel-major then lag.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub matrix: DMatrix<f64>,
    pub channels: usize,
    pub max_lag: usize,
}

impl DesignMatrix {
    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn column_index(max_lag: usize, channel: usize, lag: usize) -> usize {
        1 + channel * (max_lag + 1) + lag
    }

    /// Row-wise concatenation of several design matrices with equal layout.
    pub fn stack(parts: &[DesignMatrix]) -> Result<DesignMatrix> {
        let first = parts.first().ok_or_else(|| invalid("nothing to stack"))?;
        if parts
            .iter()
            .any(|p| p.channels != first.channels || p.max_lag != first.max_lag)
        {
            return Err(shape("design matrices differ in layout"));
        }
        let rows: usize = parts.iter().map(|p| p.rows()).sum();
        let mut m = DMatrix::zeros(rows, first.cols());
        let mut r0 = 0;
        for p in parts {
            m.rows_mut(r0, p.rows()).copy_from(&p.matrix);
            r0 += p.rows();
        }
        Ok(DesignMatrix {
            matrix: m,
            channels: first.channels,
            max_lag: first.max_lag,
        })
    }
}

/// Lag vector for time `t`: V_n[t − l], channel-major then lag.
pub fn lag_vector(eeg: &DMatrix<f64>, max_lag: usize, t: usize, out: &mut [f64]) {
    let n = eeg.nrows();
    debug_assert_eq!(out.len(), n * (max_lag + 1));
    for c in 0..n {
        for l in 0..=max_lag {
            out[c * (max_lag + 1) + l] = eeg[(c, t - l)];
        }
    }
}

pub fn build_lagged(eeg: &DMatrix<f64>, spec: LagSpec) -> Result<DesignMatrix> {
    build_lagged_from(eeg, spec, spec.max_lag)
}

/// Like [`build_lagged`] but starting at sample `start` (≥ L) so that
/// several decoders can be scored on the same time points.
pub fn build_lagged_from(eeg: &DMatrix<f64>, spec: LagSpec, start: usize) -> Result<DesignMatrix> {
    let (n, t_len) = eeg.shape();
    let l = spec.max_lag;
    if t_len <= l {
        return Err(invalid(format!("{t_len} samples cannot hold lag {l}")));
    }
    let start = start.max(l);
    let rows = t_len.saturating_sub(start);
    let cols = 1 + n * (l + 1);
    let mut m = DMatrix::zeros(rows, cols);
    let mut buf = vec![0.0; cols - 1];
    for (r, t) in (start..t_len).enumerate() {
        lag_vector(eeg, l, t, &mut buf);
        m[(r, 0)] = 1.0;
        for (j, v) in buf.iter().enumerate() {
            m[(r, j + 1)] = *v;
        }
    }
    Ok(DesignMatrix {
        matrix: m,
        channels: n,
        max_lag: l,
    })
}

/// Kinematic targets aligned with [`build_lagged_from`] rows (rows × 3).
pub fn lagged_targets(kinematics: &DMatrix<f64>, start: usize) -> DMatrix<f64> {
    let t_len = kinematics.ncols();
    let start = start.min(t_len);
    kinematics.columns(start, t_len - start).transpose()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlrModel {
    pub channels: usize,
    pub max_lag: usize,
    pub ridge: f64,
    /// (1 + N·(L+1)) × 3, intercept in row 0.
    pub coefficients: DMatrix<f64>,
}

impl MlrModel {
    pub fn zeros(channels: usize, max_lag: usize) -> Self {
        MlrModel {
            channels,
            max_lag,
            ridge: 0.0,
            coefficients: DMatrix::zeros(1 + channels * (max_lag + 1), 3),
        }
    }

    pub fn intercept(&self, axis: usize) -> f64 {
        self.coefficients[(0, axis)]
    }

    pub fn weight(&self, axis: usize, channel: usize, lag: usize) -> f64 {
        self.coefficients[(DesignMatrix::column_index(self.max_lag, channel, lag), axis)]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# channels={} lag={} ridge={}",
            self.channels, self.max_lag, self.ridge
        );
        out.push_str("axis,channel,lag,value\n");
        for (a, name) in AXES.iter().enumerate() {
            let _ = writeln!(out, "{name},-1,-1,{}", self.intercept(a));
            for c in 0..self.channels {
                for l in 0..=self.max_lag {
                    let _ = writeln!(out, "{name},{c},{l},{}", self.weight(a, c, l));
                }
            }
        }
        out
    }

    pub fn from_csv(path: &Path, text: &str) -> Result<MlrModel> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse(path, 1, "empty model file"))?;
        let fields: Vec<(&str, &str)> = header
            .trim_start_matches('#')
            .split_whitespace()
            .filter_map(|kv| kv.split_once('='))
            .collect();
        let get = |k: &str| {
            fields
                .iter()
                .find(|(key, _)| *key == k)
                .map(|(_, v)| *v)
                .ok_or_else(|| Error::parse(path, 1, format!("header lacks `{k}`")))
        };
        let channels: usize = get("channels")?
            .parse()
            .map_err(|e| Error::parse(path, 1, format!("{e}")))?;
        let max_lag: usize = get("lag")?
            .parse()
            .map_err(|e| Error::parse(path, 1, format!("{e}")))?;
        let ridge: f64 = get("ridge")?
            .parse()
            .map_err(|e| Error::parse(path, 1, format!("{e}")))?;
        let mut model = MlrModel::zeros(channels, max_lag);
        model.ridge = ridge;
        let mut seen = 0usize;
        for (i, line) in lines {
            let line_no = i + 1;
            if line.starts_with("axis") || line.trim().is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != 4 {
                return Err(Error::parse(
                    path,
                    line_no,
                    "expected axis,channel,lag,value",
                ));
            }
            let axis = AXES
                .iter()
                .position(|a| *a == cells[0])
                .ok_or_else(|| Error::parse(path, line_no, format!("bad axis `{}`", cells[0])))?;
            let bad = |e: std::num::ParseIntError| Error::parse(path, line_no, e.to_string());
            let channel: i64 = cells[1].parse().map_err(bad)?;
            let lag: i64 = cells[2].parse().map_err(bad)?;
            let value: f64 = cells[3].parse().map_err(|e: std::num::ParseFloatError| {
                Error::parse(path, line_no, e.to_string())
            })?;
            let row = if lag == -1 {
                0
            } else if channel >= 0
                && (channel as usize) < channels
                && lag >= 0
                && (lag as usize) <= max_lag
            {
                DesignMatrix::column_index(max_lag, channel as usize, lag as usize)
            } else {
                return Err(Error::parse(path, line_no, "channel or lag out of range"));
            };
            model.coefficients[(row, axis)] = value;
            seen += 1;
        }
        if seen != 3 * model.coefficients.nrows() {
            return Err(Error::parse(
                path,
                1,
                format!(
                    "expected {} coefficient rows, found {seen}",
                    3 * model.coefficients.nrows()
                ),
            ));
        }
        Ok(model)
    }
}

/// Per-axis least squares via Householder QR. A positive `ridge` augments
/// the system with √λ·I on every non-intercept column.
pub fn fit(x: &DesignMatrix, y: &DMatrix<f64>, ridge: f64) -> Result<MlrModel> {
    if !(ridge >= 0.0) {
        return Err(invalid(format!("ridge {ridge} must be >= 0")));
    }
    let (rows, cols) = x.matrix.shape();
    if y.nrows() != rows || y.ncols() != 3 {
        return Err(shape(format!(
            "targets are {}×{}, expected {rows}×3",
            y.nrows(),
            y.ncols()
        )));
    }
    if ridge == 0.0 && rows < cols {
        return Err(Error::Numeric(format!(
            "{rows} rows cannot determine {cols} coefficients without ridge"
        )));
    }
    let (a, mut rhs) = if ridge > 0.0 {
        let extra = cols - 1;
        let mut a = DMatrix::zeros(rows + extra, cols);
        a.rows_mut(0, rows).copy_from(&x.matrix);
        let s = ridge.sqrt();
        for j in 1..cols {
            a[(rows + j - 1, j)] = s;
        }
        let mut rhs = DMatrix::zeros(rows + extra, 3);
        rhs.rows_mut(0, rows).copy_from(y);
        (a, rhs)
    } else {
        (x.matrix.clone(), y.clone())
    };
    let qr = a.qr();
    qr.q_tr_mul(&mut rhs);
    let r = qr.r();
    let diag_max = r.diagonal().amax();
    let tol = diag_max * 1e-12 * cols as f64;
    if diag_max == 0.0 || r.diagonal().iter().any(|d| d.abs() <= tol) {
        return Err(Error::Numeric(
            "design matrix is rank-deficient; use a positive ridge".into(),
        ));
    }
    let top = rhs.rows(0, cols).into_owned();
    let coefficients = r
        .solve_upper_triangular(&top)
        .ok_or_else(|| Error::Numeric("triangular solve failed".into()))?;
    Ok(MlrModel {
        channels: x.channels,
        max_lag: x.max_lag,
        ridge,
        coefficients,
    })
}

/// Predicted positions, columns (x, y, z).
pub fn predict(model: &MlrModel, x: &DesignMatrix) -> Result<DMatrix<f64>> {
    if x.cols() != model.coefficients.nrows() {
        return Err(shape(format!(
            "design has {} columns, model expects {}",
            x.cols(),
            model.coefficients.nrows()
        )));
    }
    Ok(&x.matrix * &model.coefficients)
}
