//! Decoder quality: Pearson correlation per axis and band, two-sample
//! t-tests between methods, report CSVs and trajectory exports.

mod plot;

pub use plot::export_trajectories;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::dataio::Dataset;
use crate::error::{invalid, shape, Error, Result};
use crate::mlr::{build_lagged_from, predict, LagSpec, MlrModel, AXES};
use crate::preprocess::Band;

pub const DEFAULT_ALPHA: f64 = 0.05;

/// The four decoders compared throughout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Mlr,
    Mlp,
    CnnLstm,
    WpdCnnLstm,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Mlr,
        Method::Mlp,
        Method::CnnLstm,
        Method::WpdCnnLstm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Mlr => "mlr",
            Method::Mlp => "mlp",
            Method::CnnLstm => "cnnlstm",
            Method::WpdCnnLstm => "wpd-cnnlstm",
        }
    }

    /// The WPD model only runs on the full 0.5-12 Hz band.
    pub fn supports(self, band: Band) -> bool {
        self != Method::WpdCnnLstm || band == Band::Entire
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model `{s}`")))
    }
}

/// A trained decoder that maps an aligned, standardized trial to positions.
pub trait Decoder: Sync {
    /// Earliest sample index the decoder can predict.
    fn context(&self) -> usize;

    /// Predictions (3 × (T − start)) for samples `start..T`.
    fn predict_trial(&self, eeg: &DMatrix<f64>, start: usize) -> Result<DMatrix<f64>>;
}

impl Decoder for MlrModel {
    fn context(&self) -> usize {
        self.max_lag
    }

    fn predict_trial(&self, eeg: &DMatrix<f64>, start: usize) -> Result<DMatrix<f64>> {
        let x = build_lagged_from(
            eeg,
            LagSpec {
                max_lag: self.max_lag,
            },
            start,
        )?;
        Ok(predict(self, &x)?.transpose())
    }
}

/// Pearson correlation with sample (T − 1) standard deviations.
pub fn pcc(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(shape(format!("pcc of lengths {} and {}", a.len(), b.len())));
    }
    let n = a.len();
    if n < 2 {
        return Err(invalid("pcc needs at least 2 samples"));
    }
    let mean = |x: &[f64]| x.iter().sum::<f64>() / n as f64;
    let (ma, mb) = (mean(a), mean(b));
    let sd = |x: &[f64], m: f64| {
        (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    let (sa, sb) = (sd(a, ma), sd(b, mb));
    if !(sa > 0.0) || !(sb > 0.0) {
        return Err(Error::Numeric(
            "correlation undefined for a constant sequence".into(),
        ));
    }
    let s: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| ((x - ma) / sa) * ((y - mb) / sb))
        .sum();
    Ok((s / (n - 1) as f64).clamp(-1.0, 1.0))
}

/// Per-axis PCC of two 3 × T tracks.
pub fn pcc_axes(truth: &DMatrix<f64>, pred: &DMatrix<f64>) -> Result<[f64; 3]> {
    if truth.shape() != pred.shape() || truth.nrows() != 3 {
        return Err(shape("tracks must both be 3 × T"));
    }
    let mut out = [0.0; 3];
    for (a, o) in out.iter_mut().enumerate() {
        let x: Vec<f64> = truth.row(a).iter().copied().collect();
        let y: Vec<f64> = pred.row(a).iter().copied().collect();
        *o = pcc(&x, &y)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Variance {
    #[default]
    Pooled,
    Welch,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTestResult {
    pub t: f64,
    pub p: f64,
    pub df: f64,
    pub significant: bool,
}

fn mean_var(s: &[f64]) -> (f64, f64) {
    let n = s.len() as f64;
    let m = s.iter().sum::<f64>() / n;
    (
        m,
        s.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0),
    )
}

/// Pooled-variance two-sample t-test with a two-sided p value.
pub fn two_sample_ttest(s1: &[f64], s2: &[f64], alpha: f64) -> Result<TTestResult> {
    ttest_with(s1, s2, alpha, Variance::Pooled)
}

/// Two-sided two-sample t-test. Zero variance with equal means gives
/// t = 0, p = 1; with different means, t = ±∞, p = 0.
pub fn ttest_with(s1: &[f64], s2: &[f64], alpha: f64, variance: Variance) -> Result<TTestResult> {
    if s1.len() < 2 || s2.len() < 2 {
        return Err(invalid("each t-test sample needs at least 2 values"));
    }
    let (n1, n2) = (s1.len() as f64, s2.len() as f64);
    let (m1, v1) = mean_var(s1);
    let (m2, v2) = mean_var(s2);
    let (se2, df) = match variance {
        Variance::Pooled => {
            let df = n1 + n2 - 2.0;
            let sp2 = ((n1 - 1.0) * v1 + (n2 - 1.0) * v2) / df;
            (sp2 * (1.0 / n1 + 1.0 / n2), df)
        }
        Variance::Welch => {
            let (a, b) = (v1 / n1, v2 / n2);
            let df = if a + b > 0.0 {
                (a + b).powi(2) / (a * a / (n1 - 1.0) + b * b / (n2 - 1.0))
            } else {
                n1 + n2 - 2.0
            };
            (a + b, df)
        }
    };
    let diff = m1 - m2;
    let (t, p) = if se2 > 0.0 {
        let t = diff / se2.sqrt();
        let dist = StudentsT::new(0.0, 1.0, df)
            .map_err(|e| Error::Numeric(format!("t distribution: {e}")))?;
        (t, (2.0 * dist.sf(t.abs())).min(1.0))
    } else if diff == 0.0 {
        (0.0, 1.0)
    } else {
        (diff.signum() * f64::INFINITY, 0.0)
    };
    Ok(TTestResult {
        t,
        p,
        df,
        significant: p < alpha,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct PccKey {
    pub subject: u32,
    pub method: Method,
    pub band: Band,
    pub axis: usize,
}

/// Correlations keyed by (subject, method, band, axis).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PccReport {
    pub entries: BTreeMap<PccKey, f64>,
}

impl PccReport {
    pub fn insert(&mut self, key: PccKey, value: f64) -> Result<()> {
        if !(-1.0..=1.0).contains(&value) {
            return Err(Error::Numeric(format!("pcc {value} outside [-1, 1]")));
        }
        self.entries.insert(key, value);
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("subject,method,band,axis,pcc\n");
        for (k, v) in &self.entries {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                k.subject, k.method, k.band, AXES[k.axis], v
            );
        }
        out
    }

    pub fn from_csv(path: &Path, text: &str) -> Result<PccReport> {
        let mut report = PccReport::default();
        for (i, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |msg: String| Error::parse(path, i + 1, msg);
            let c: Vec<&str> = line.split(',').collect();
            if c.len() != 5 {
                return Err(bad("expected 5 columns".into()));
            }
            let key = PccKey {
                subject: c[0].parse().map_err(|e| bad(format!("{e}")))?,
                method: c[1].parse().map_err(|e: Error| bad(e.to_string()))?,
                band: c[2].parse().map_err(|e: Error| bad(e.to_string()))?,
                axis: AXES
                    .iter()
                    .position(|a| *a == c[3])
                    .ok_or_else(|| bad(format!("bad axis `{}`", c[3])))?,
            };
            let v: f64 = c[4].parse().map_err(|e| bad(format!("{e}")))?;
            report.insert(key, v).map_err(|e| bad(e.to_string()))?;
        }
        Ok(report)
    }
}

/// Truth and prediction for one test trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialPrediction {
    pub subject: u32,
    pub trial: u32,
    pub truth: DMatrix<f64>,
    pub predicted: DMatrix<f64>,
}

/// Runs a decoder over every trial, scoring samples `start..T`.
pub fn predict_dataset(
    decoder: &dyn Decoder,
    test: &Dataset,
    start: usize,
) -> Result<Vec<TrialPrediction>> {
    let start = start.max(decoder.context());
    test.trials
        .iter()
        .filter(|t| t.samples() > start + 1)
        .map(|t| {
            let predicted = decoder.predict_trial(&t.eeg, start)?;
            let truth = t
                .kinematics
                .columns(start, t.samples() - start)
                .into_owned();
            Ok(TrialPrediction {
                subject: t.subject_id,
                trial: t.trial_id,
                truth,
                predicted,
            })
        })
        .collect()
}

fn concat(cols: impl Iterator<Item = DMatrix<f64>>) -> DMatrix<f64> {
    let parts: Vec<DMatrix<f64>> = cols.collect();
    let total = parts.iter().map(|m| m.ncols()).sum();
    let mut out = DMatrix::zeros(3, total);
    let mut c0 = 0;
    for p in parts {
        out.columns_mut(c0, p.ncols()).copy_from(&p);
        c0 += p.ncols();
    }
    out
}

/// PCC per subject over the concatenated test samples of that subject.
pub fn subject_pcc(preds: &[TrialPrediction]) -> Result<BTreeMap<u32, [f64; 3]>> {
    let mut subjects: Vec<u32> = preds.iter().map(|p| p.subject).collect();
    subjects.dedup();
    subjects.sort_unstable();
    subjects.dedup();
    let mut out = BTreeMap::new();
    for s in subjects {
        let mine = || preds.iter().filter(move |p| p.subject == s);
        let truth = concat(mine().map(|p| p.truth.clone()));
        let pred = concat(mine().map(|p| p.predicted.clone()));
        out.insert(s, pcc_axes(&truth, &pred)?);
    }
    Ok(out)
}

/// Per-trial PCC per axis; these are the sets compared by the t-tests.
pub fn trial_pccs(preds: &[TrialPrediction]) -> Result<[Vec<f64>; 3]> {
    let mut out: [Vec<f64>; 3] = Default::default();
    for p in preds {
        for (a, v) in pcc_axes(&p.truth, &p.predicted)?.into_iter().enumerate() {
            out[a].push(v);
        }
    }
    Ok(out)
}

/// Cross product of methods × bands over the per-band test sets. The WPD
/// method is only scored on the entire band.
pub fn band_sweep(
    test_sets: &BTreeMap<Band, Dataset>,
    decoders: &BTreeMap<(Method, Band), Box<dyn Decoder>>,
    methods: &[Method],
    bands: &[Band],
    start: usize,
) -> Result<PccReport> {
    let mut report = PccReport::default();
    for &band in bands {
        let test = test_sets
            .get(&band)
            .ok_or_else(|| invalid(format!("no test set for band {band}")))?;
        for &method in methods {
            if !method.supports(band) {
                continue;
            }
            let decoder = decoders.get(&(method, band)).ok_or_else(|| {
                invalid(format!("method {method} was not trained for band {band}"))
            })?;
            let preds = predict_dataset(decoder.as_ref(), test, start)?;
            for (subject, values) in subject_pcc(&preds)? {
                for (axis, v) in values.into_iter().enumerate() {
                    report.insert(
                        PccKey {
                            subject,
                            method,
                            band,
                            axis,
                        },
                        v,
                    )?;
                }
            }
        }
    }
    Ok(report)
}

/// One row of the method-comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub first: Method,
    pub second: Method,
    /// "x", "y", "z" or "overall".
    pub direction: &'static str,
    pub result: TTestResult,
}

/// Pairwise t-tests on per-trial correlation sets, per axis and pooled over
/// all axes ("overall").
pub fn compare_methods(
    per_trial: &BTreeMap<Method, [Vec<f64>; 3]>,
    alpha: f64,
) -> Result<Vec<ComparisonRow>> {
    compare_methods_with(per_trial, alpha, Variance::Pooled)
}

pub fn compare_methods_with(
    per_trial: &BTreeMap<Method, [Vec<f64>; 3]>,
    alpha: f64,
    variance: Variance,
) -> Result<Vec<ComparisonRow>> {
    let methods: Vec<Method> = per_trial.keys().copied().collect();
    let mut rows = Vec::new();
    for (i, &a) in methods.iter().enumerate() {
        for &b in &methods[i + 1..] {
            let (sa, sb) = (&per_trial[&a], &per_trial[&b]);
            for axis in 0..3 {
                rows.push(ComparisonRow {
                    first: a,
                    second: b,
                    direction: AXES[axis],
                    result: ttest_with(&sa[axis], &sb[axis], alpha, variance)?,
                });
            }
            let pool = |s: &[Vec<f64>; 3]| s.iter().flatten().copied().collect::<Vec<f64>>();
            rows.push(ComparisonRow {
                first: a,
                second: b,
                direction: "overall",
                result: ttest_with(&pool(sa), &pool(sb), alpha, variance)?,
            });
        }
    }
    Ok(rows)
}

pub const TTEST_HEADER: &str = "pair,direction,t,df,p,significant";

pub fn ttest_csv(rows: &[ComparisonRow]) -> String {
    let mut out = String::new();
    if rows.is_empty() {
        out.push_str("# no method pairs to compare: at least two methods are required\n");
    }
    out.push_str(TTEST_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{} vs {},{},{},{},{},{}",
            r.first,
            r.second,
            r.direction,
            r.result.t,
            r.result.df,
            r.result.p,
            r.result.significant
        );
    }
    out
}
