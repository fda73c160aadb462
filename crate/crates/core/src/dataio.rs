//! Trial corpora: the per-trial CSV layout, synthetic oracle datasets and
//! contiguous train/validation/test partitioning.
//!
//! A trial file looks like
//!
//! ```text
//! # subject=1 trial=3 rate=500 cue=0 onset=310 load=330g friction=silk
//! Fp1,Fp2,...,px,py,pz
//! 12.5,-3.25,...,0,0.001,0
//! ```
//!
//! One row per sample. Every value is written in shortest round-trip form so
//! a write/load cycle is bit-exact.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};

/// The 32-electrode actiCAP layout of the grasp-and-lift recordings.
pub const MONTAGE_32: [&str; 32] = [
    "Fp1", "Fp2", "F7", "F3", "Fz", "F4", "F8", "FC5", "FC1", "FC2", "FC6", "T7", "C3", "Cz", "C4",
    "T8", "TP9", "CP5", "CP1", "CP2", "CP6", "TP10", "P7", "P3", "Pz", "P4", "P8", "PO9", "O1",
    "Oz", "O2", "PO10",
];

const LOAD_LABELS: [&str; 3] = ["165g", "330g", "660g"];
const FRICTION_LABELS: [&str; 3] = ["sandpaper", "suede", "silk"];

/// One grasp-and-lift trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub subject_id: u32,
    pub trial_id: u32,
    /// channels × samples, microvolts.
    pub eeg: DMatrix<f64>,
    /// 3 × samples, normalized position per axis in [0, 1].
    pub kinematics: DMatrix<f64>,
    pub sample_rate: u32,
    pub cue_index: usize,
    pub onset_index: usize,
    pub load_label: String,
    pub friction_label: String,
}

impl TrialRecord {
    pub fn samples(&self) -> usize {
        self.eeg.ncols()
    }

    pub fn channels(&self) -> usize {
        self.eeg.nrows()
    }

    /// Cue-to-onset latency in milliseconds.
    pub fn reaction_time_ms(&self) -> f64 {
        (self.onset_index as f64 - self.cue_index as f64) * 1000.0 / self.sample_rate as f64
    }

    pub fn validate(&self) -> Result<()> {
        let who = format!("subject {} trial {}", self.subject_id, self.trial_id);
        if self.kinematics.nrows() != 3 {
            return Err(invalid(format!("{who}: kinematics must have 3 rows")));
        }
        if self.kinematics.ncols() != self.eeg.ncols() {
            return Err(invalid(format!(
                "{who}: eeg has {} samples but kinematics has {}",
                self.eeg.ncols(),
                self.kinematics.ncols()
            )));
        }
        if self.sample_rate == 0 {
            return Err(invalid(format!("{who}: sample rate must be positive")));
        }
        if self.cue_index > self.onset_index || self.onset_index >= self.samples() {
            return Err(invalid(format!(
                "{who}: need cue <= onset < samples, got cue={} onset={} samples={}",
                self.cue_index,
                self.onset_index,
                self.samples()
            )));
        }
        if let Some(v) = self.kinematics.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(invalid(format!(
                "{who}: kinematics value {v} outside [0, 1]"
            )));
        }
        Ok(())
    }
}

/// Ordered trials sharing one montage.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub trials: Vec<TrialRecord>,
    montage: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(trials: Vec<TrialRecord>, montage: Vec<String>) -> Result<Self> {
        for t in &trials {
            if t.channels() != montage.len() {
                return Err(invalid(format!(
                    "subject {} trial {} has {} channels, montage has {}",
                    t.subject_id,
                    t.trial_id,
                    t.channels(),
                    montage.len()
                )));
            }
        }
        Ok(Dataset {
            trials,
            montage: Some(montage),
        })
    }

    pub fn empty() -> Self {
        Dataset::default()
    }

    /// Channel names; an error for a dataset that never saw a trial file.
    pub fn montage(&self) -> Result<&[String]> {
        self.montage
            .as_deref()
            .ok_or_else(|| invalid("montage is undefined for an empty dataset"))
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    /// Same montage, different trials.
    pub fn with_trials(&self, trials: Vec<TrialRecord>) -> Dataset {
        Dataset {
            trials,
            montage: self.montage.clone(),
        }
    }

    /// Applies a fallible per-trial transform that may also change the montage.
    pub fn map_trials<F>(&self, montage: Vec<String>, f: F) -> Result<Dataset>
    where
        F: Fn(&TrialRecord) -> Result<TrialRecord> + Sync + Send,
    {
        let trials = self.trials.par_iter().map(f).collect::<Result<Vec<_>>>()?;
        Dataset::new(trials, montage)
    }
}

// ---------------------------------------------------------------------------
// CSV layout

pub fn trial_file_name(t: &TrialRecord) -> String {
    format!("s{:03}_t{:04}.csv", t.subject_id, t.trial_id)
}

pub fn format_trial(t: &TrialRecord, montage: &[String]) -> String {
    let mut out = String::with_capacity(t.samples() * (montage.len() + 3) * 12);
    let _ = writeln!(
        out,
        "# subject={} trial={} rate={} cue={} onset={} load={} friction={}",
        t.subject_id,
        t.trial_id,
        t.sample_rate,
        t.cue_index,
        t.onset_index,
        t.load_label,
        t.friction_label
    );
    for name in montage {
        out.push_str(name);
        out.push(',');
    }
    out.push_str("px,py,pz\n");
    for s in 0..t.samples() {
        for c in 0..t.channels() {
            let _ = write!(out, "{},", t.eeg[(c, s)]);
        }
        let _ = writeln!(
            out,
            "{},{},{}",
            t.kinematics[(0, s)],
            t.kinematics[(1, s)],
            t.kinematics[(2, s)]
        );
    }
    out
}

/// Writes one CSV per trial into `dir`, creating it if needed.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    if ds.is_empty() {
        return Ok(Vec::new());
    }
    let montage = ds.montage()?;
    let mut written = Vec::with_capacity(ds.len());
    for t in &ds.trials {
        let path = dir.join(trial_file_name(t));
        fs::write(&path, format_trial(t, montage)).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

fn header_field<'a>(fields: &'a [(&str, &str)], key: &str) -> Option<&'a str> {
    fields.iter().find(|(k, _)| *k == key).map(|(_, v)| *v)
}

/// Parses one trial file, returning the record and its montage.
pub fn parse_trial(path: &Path, text: &str) -> Result<(TrialRecord, Vec<String>)> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "missing header line"))?;
    let body = header
        .strip_prefix('#')
        .ok_or_else(|| Error::parse(path, 1, "missing header line"))?;
    let fields: Vec<(&str, &str)> = body
        .split_whitespace()
        .filter_map(|kv| kv.split_once('='))
        .collect();
    let int = |key: &str| -> Result<u64> {
        header_field(&fields, key)
            .ok_or_else(|| Error::parse(path, 1, format!("header lacks `{key}`")))?
            .parse::<u64>()
            .map_err(|e| Error::parse(path, 1, format!("header `{key}`: {e}")))
    };
    let text_field = |key: &str| -> Result<String> {
        header_field(&fields, key)
            .map(str::to_string)
            .ok_or_else(|| Error::parse(path, 1, format!("header lacks `{key}`")))
    };
    let subject_id = int("subject")? as u32;
    let trial_id = int("trial")? as u32;
    let sample_rate = int("rate")? as u32;
    let cue_index = int("cue")? as usize;
    let onset_index = int("onset")? as usize;
    let load_label = text_field("load")?;
    let friction_label = text_field("friction")?;

    let names_line = lines
        .next()
        .ok_or_else(|| Error::parse(path, 2, "missing channel-name line"))?;
    let names: Vec<&str> = names_line.split(',').map(str::trim).collect();
    if names.len() < 4 || names[names.len() - 3..] != ["px", "py", "pz"] {
        return Err(Error::parse(
            path,
            2,
            "channel-name line must end with px,py,pz",
        ));
    }
    let montage: Vec<String> = names[..names.len() - 3]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let n_ch = montage.len();
    let width = n_ch + 3;

    let mut eeg_cols: Vec<f64> = Vec::new();
    let mut kin_cols: Vec<f64> = Vec::new();
    let mut samples = 0usize;
    for (i, line) in lines.enumerate() {
        let line_no = i + 3;
        if line.trim().is_empty() {
            continue;
        }
        let mut count = 0;
        for (j, cell) in line.split(',').enumerate() {
            if j >= width {
                count = j + 1;
                break;
            }
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|e| Error::parse(path, line_no, format!("column {}: {e}", j + 1)))?;
            if j < n_ch {
                eeg_cols.push(v);
            } else {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::parse(
                        path,
                        line_no,
                        format!("kinematics value {v} in column {} outside [0, 1]", names[j]),
                    ));
                }
                kin_cols.push(v);
            }
            count = j + 1;
        }
        if count != width {
            return Err(Error::parse(
                path,
                line_no,
                format!("expected {width} values, found {count}"),
            ));
        }
        samples += 1;
    }
    // Row-per-sample storage is exactly nalgebra's column-major layout.
    let eeg = DMatrix::from_vec(n_ch, samples, eeg_cols);
    let kinematics = DMatrix::from_vec(3, samples, kin_cols);
    let trial = TrialRecord {
        subject_id,
        trial_id,
        eeg,
        kinematics,
        sample_rate,
        cue_index,
        onset_index,
        load_label,
        friction_label,
    };
    trial
        .validate()
        .map_err(|e| Error::parse(path, 1, e.to_string()))?;
    Ok((trial, montage))
}

/// Loads every `*.csv` trial file in `dir`, ordered by (subject, trial).
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let p = entry.path();
        if p.is_file() && p.extension().is_some_and(|e| e == "csv") {
            paths.push(p);
        }
    }
    paths.sort();
    let parsed = paths
        .par_iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            parse_trial(p, &text)
        })
        .collect::<Result<Vec<_>>>()?;
    if parsed.is_empty() {
        return Ok(Dataset::empty());
    }
    let montage = parsed[0].1.clone();
    for ((_, m), p) in parsed.iter().zip(&paths) {
        if *m != montage {
            return Err(Error::parse(
                p,
                2,
                "montage differs from the other trial files",
            ));
        }
    }
    let mut trials: Vec<TrialRecord> = parsed.into_iter().map(|(t, _)| t).collect();
    trials.sort_by_key(|t| (t.subject_id, t.trial_id));
    Dataset::new(trials, montage)
}

// ---------------------------------------------------------------------------
// Partitioning

/// Contiguous trial-level split. Validation and test sizes are floored; the
/// remainder goes to training.
pub fn split_dataset(ds: &Dataset, ratios: (f64, f64, f64)) -> Result<(Dataset, Dataset, Dataset)> {
    let (tr, va, te) = ratios;
    if [tr, va, te].iter().any(|r| !r.is_finite() || *r < 0.0) {
        return Err(invalid("split ratios must be nonnegative"));
    }
    if (tr + va + te - 1.0).abs() > 1e-9 {
        return Err(invalid(format!(
            "split ratios sum to {}, not 1",
            tr + va + te
        )));
    }
    let nonzero = [tr, va, te].iter().filter(|r| **r > 0.0).count();
    let n = ds.len();
    if n < nonzero {
        return Err(invalid(format!(
            "{n} trials cannot fill {nonzero} nonzero partitions"
        )));
    }
    // The epsilon absorbs representation error such as 0.15 * 120 = 17.999...
    let floor = |r: f64| ((n as f64) * r + 1e-9).floor() as usize;
    let n_val = floor(va);
    let n_test = floor(te);
    let n_train = n - n_val - n_test;
    let train = ds.with_trials(ds.trials[..n_train].to_vec());
    let val = ds.with_trials(ds.trials[n_train..n_train + n_val].to_vec());
    let test = ds.with_trials(ds.trials[n_train + n_val..].to_vec());
    Ok((train, val, test))
}

// ---------------------------------------------------------------------------
// Synthetic oracle data

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Nonlinearity {
    None,
    /// Per axis: tanh(g·u_a) + tanh(g·u_b)·tanh(g·u_c), with u the three
    /// unit-variance lagged-linear latents and (a, b, c) cyclic.
    TanhMix,
}

impl std::str::FromStr for Nonlinearity {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Nonlinearity::None),
            "tanh-mix" => Ok(Nonlinearity::TanhMix),
            other => Err(Error::Config(format!("unknown nonlinearity `{other}`"))),
        }
    }
}

impl std::fmt::Display for Nonlinearity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Nonlinearity::None => "none",
            Nonlinearity::TanhMix => "tanh-mix",
        })
    }
}

pub const TANH_MIX_GAIN: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub channels: usize,
    pub trials: usize,
    pub samples_per_trial: usize,
    pub lag_order: usize,
    pub noise_std: f64,
    pub nonlinearity: Nonlinearity,
    pub seed: u64,
    pub sample_rate: u32,
    /// Sum of 1-10 Hz sinusoids with zero across-channel mean, instead of
    /// white noise. Survives band-pass filtering and re-referencing.
    pub band_limited: bool,
    /// Inclusive reaction-time range in milliseconds.
    pub rt_ms: (u32, u32),
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            channels: 6,
            trials: 20,
            samples_per_trial: 600,
            lag_order: 10,
            noise_std: 0.0,
            nonlinearity: Nonlinearity::None,
            seed: 0,
            sample_rate: 100,
            band_limited: false,
            rt_ms: (0, 0),
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_std >= 0.0) {
            return Err(invalid(format!(
                "noise_std {} must be >= 0",
                self.noise_std
            )));
        }
        if self.samples_per_trial <= self.lag_order {
            return Err(invalid("samples_per_trial must exceed lag_order"));
        }
        if self.channels == 0 || self.sample_rate == 0 {
            return Err(invalid("channels and sample_rate must be positive"));
        }
        if self.rt_ms.0 > self.rt_ms.1 {
            return Err(invalid("rt_ms range is reversed"));
        }
        let max_rt = self.rt_samples(self.rt_ms.1);
        if max_rt >= self.samples_per_trial {
            return Err(invalid("maximum reaction time does not fit in a trial"));
        }
        Ok(())
    }

    fn rt_samples(&self, ms: u32) -> usize {
        (ms as f64 * self.sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn montage(&self) -> Vec<String> {
        if self.channels <= MONTAGE_32.len() {
            MONTAGE_32[..self.channels]
                .iter()
                .map(|s| s.to_string())
                .collect()
        } else {
            (1..=self.channels).map(|i| format!("ch{i}")).collect()
        }
    }
}

/// The generating process behind a synthetic dataset.
///
/// Raw position is `raw_a[t] = a-th output of the lagged map of eeg[t - rt - l]`
/// and the stored kinematics are `(raw - offset) / range` per axis, so after
/// cue/onset alignment the relation is an ordinary lag-`L` map.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub channels: usize,
    pub lag_order: usize,
    pub nonlinearity: Nonlinearity,
    /// Latent coefficients indexed `[axis][channel][lag]`, flattened.
    pub weights: Vec<f64>,
    pub offset: [f64; 3],
    pub range: [f64; 3],
    /// Reaction time of every trial in samples.
    pub rt_samples: Vec<usize>,
}

impl GroundTruth {
    pub fn weight(&self, axis: usize, channel: usize, lag: usize) -> f64 {
        self.weights[(axis * self.channels + channel) * (self.lag_order + 1) + lag]
    }

    /// Linear coefficients in stored (squashed) units: `(intercept, b)` for
    /// one axis with b indexed `[channel][lag]`. Only meaningful for
    /// [`Nonlinearity::None`].
    pub fn effective_linear(&self, axis: usize) -> (f64, Vec<f64>) {
        let per = self.channels * (self.lag_order + 1);
        let b = self.weights[axis * per..(axis + 1) * per]
            .iter()
            .map(|w| w / self.range[axis])
            .collect();
        (-self.offset[axis] / self.range[axis], b)
    }

    /// Noise-free raw position map applied to a lag window accessor.
    fn latent(&self, axis: usize, eeg_at: &impl Fn(usize, usize) -> f64) -> f64 {
        let mut s = 0.0;
        for c in 0..self.channels {
            for l in 0..=self.lag_order {
                s += self.weight(axis, c, l) * eeg_at(c, l);
            }
        }
        s
    }

    fn mix(&self, u: [f64; 3]) -> [f64; 3] {
        match self.nonlinearity {
            Nonlinearity::None => u,
            Nonlinearity::TanhMix => {
                let s = u.map(|v| (TANH_MIX_GAIN * v).tanh());
                [0, 1, 2].map(|a| s[a] + s[(a + 1) % 3] * s[(a + 2) % 3])
            }
        }
    }
}

fn synth_eeg(spec: &SynthSpec, len: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    const SCALE_UV: f64 = 10.0;
    let n = spec.channels;
    if !spec.band_limited {
        return DMatrix::from_fn(n, len, |_, _| {
            let z: f64 = StandardNormal.sample(rng);
            SCALE_UV * z
        });
    }
    const COMPONENTS: usize = 24;
    let mut m = DMatrix::zeros(n, len);
    for c in 0..n {
        let comps: Vec<(f64, f64, f64)> = (0..COMPONENTS)
            .map(|_| {
                let f = rng.random_range(1.0..10.0);
                let ph = rng.random_range(0.0..std::f64::consts::TAU);
                let a = rng.random_range(0.5..1.5);
                (f, ph, a)
            })
            .collect();
        let norm = SCALE_UV * (2.0 / comps.iter().map(|x| x.2 * x.2).sum::<f64>()).sqrt();
        for t in 0..len {
            let time = t as f64 / spec.sample_rate as f64;
            let v: f64 = comps
                .iter()
                .map(|&(f, ph, a)| a * (std::f64::consts::TAU * f * time + ph).sin())
                .sum();
            m[(c, t)] = norm * v;
        }
    }
    if n > 1 {
        for t in 0..len {
            let mean = m.column(t).mean();
            m.column_mut(t).add_scalar_mut(-mean);
        }
    }
    m
}

/// Seeded synthetic dataset with a known lagged map from EEG to kinematics.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<(Dataset, GroundTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.channels;
    let lags = spec.lag_order + 1;
    let t_len = spec.samples_per_trial;

    let mut weights: Vec<f64> = (0..3 * n * lags)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();

    // Per trial: reaction time and an EEG record that starts rt + L samples
    // early so every stored sample has its full lag history.
    let mut rts = Vec::with_capacity(spec.trials);
    let mut full_eeg = Vec::with_capacity(spec.trials);
    for _ in 0..spec.trials {
        let ms = rng.random_range(spec.rt_ms.0..=spec.rt_ms.1);
        let rt = spec.rt_samples(ms);
        rts.push(rt);
        full_eeg.push(synth_eeg(spec, t_len + rt + spec.lag_order, &mut rng));
    }

    let mut truth = GroundTruth {
        channels: n,
        lag_order: spec.lag_order,
        nonlinearity: spec.nonlinearity,
        weights: weights.clone(),
        offset: [0.0; 3],
        range: [1.0; 3],
        rt_samples: rts.clone(),
    };

    let latents = |truth: &GroundTruth| -> Vec<Vec<[f64; 3]>> {
        full_eeg
            .iter()
            .zip(&rts)
            .map(|(eeg, _rt)| {
                (0..t_len)
                    .map(|t| {
                        // Stored t is full index rt + L + t, so lag l of the
                        // rt-delayed source sits at full index t + L - l.
                        let at = |c: usize, l: usize| eeg[(c, t + spec.lag_order - l)];
                        [0, 1, 2].map(|a| truth.latent(a, &at))
                    })
                    .collect()
            })
            .collect()
    };

    // Rescale each axis' coefficients to give its latent unit variance.
    let u = latents(&truth);
    for a in 0..3 {
        let vals: Vec<f64> = u.iter().flatten().map(|v| v[a]).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        let sd = var.sqrt();
        if sd > 0.0 {
            let per = n * lags;
            for w in &mut weights[a * per..(a + 1) * per] {
                *w /= sd;
            }
        }
    }
    truth.weights = weights;
    let u = latents(&truth);

    let mut raw: Vec<Vec<[f64; 3]>> = u
        .iter()
        .map(|tr| tr.iter().map(|v| truth.mix(*v)).collect())
        .collect();

    if spec.noise_std > 0.0 {
        let mut sd = [0.0; 3];
        for (a, s) in sd.iter_mut().enumerate() {
            let vals: Vec<f64> = raw.iter().flatten().map(|v| v[a]).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            *s = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64).sqrt();
        }
        for v in raw.iter_mut().flatten() {
            for a in 0..3 {
                let z: f64 = StandardNormal.sample(&mut rng);
                v[a] += spec.noise_std * sd[a] * z;
            }
        }
    }

    for a in 0..3 {
        let (lo, hi) = raw
            .iter()
            .flatten()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v[a]), hi.max(v[a]))
            });
        truth.offset[a] = lo;
        truth.range[a] = if hi > lo { hi - lo } else { 1.0 };
    }

    let montage = spec.montage();
    let trials = full_eeg
        .iter()
        .zip(&rts)
        .zip(&raw)
        .enumerate()
        .map(|(i, ((eeg, &rt), raw))| {
            let pre = rt + spec.lag_order;
            let eeg = eeg.columns(pre, t_len).into_owned();
            let kinematics = DMatrix::from_fn(3, t_len, |a, t| {
                ((raw[t][a] - truth.offset[a]) / truth.range[a]).clamp(0.0, 1.0)
            });
            TrialRecord {
                subject_id: 1,
                trial_id: i as u32 + 1,
                eeg,
                kinematics,
                sample_rate: spec.sample_rate,
                cue_index: 0,
                onset_index: rt,
                load_label: LOAD_LABELS[i % 3].to_string(),
                friction_label: FRICTION_LABELS[(i / 3) % 3].to_string(),
            }
        })
        .collect();
    Ok((Dataset::new(trials, montage)?, truth))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_trial(id: u32) -> TrialRecord {
        TrialRecord {
            subject_id: 1,
            trial_id: id,
            eeg: DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, -0.5, 0.25, 1e-300]),
            kinematics: DMatrix::from_row_slice(
                3,
                3,
                &[0.0, 0.5, 1.0, 0.1, 0.2, 0.3, 0.0, 0.0, 0.0],
            ),
            sample_rate: 100,
            cue_index: 0,
            onset_index: 1,
            load_label: "165g".into(),
            friction_label: "silk".into(),
        }
    }

    fn montage2() -> Vec<String> {
        vec!["C3".into(), "C4".into()]
    }

    #[test]
    fn two_files_give_two_trials() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset::new(vec![tiny_trial(2), tiny_trial(1)], montage2()).unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back.trials[0].trial_id, 1);
        assert_eq!(back.trials[1], ds.trials[0]);
        assert_eq!(back.montage().unwrap(), montage2().as_slice());
    }

    #[test]
    fn out_of_range_kinematics_names_the_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        fs::write(
            &path,
            "# subject=1 trial=1 rate=100 cue=0 onset=0 load=a friction=b\nC3,px,py,pz\n1,0,0,0\n2,1.2,0,0\n",
        )
        .unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        match err {
            Error::Parse { line, path: p, .. } => {
                assert_eq!(line, 4);
                assert_eq!(p, path);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn ragged_row_and_missing_header_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        fs::write(
            &path,
            "# subject=1 trial=1 rate=100 cue=0 onset=0 load=a friction=b\nC3,px,py,pz\n1,0,0\n",
        )
        .unwrap();
        assert!(matches!(
            load_dataset(dir.path()),
            Err(Error::Parse { line: 3, .. })
        ));
        fs::write(&path, "C3,px,py,pz\n1,0,0,0\n").unwrap();
        assert!(matches!(
            load_dataset(dir.path()),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn empty_directory_has_undefined_montage() {
        let dir = tempfile::tempdir().unwrap();
        let ds = load_dataset(dir.path()).unwrap();
        assert!(ds.is_empty());
        assert!(ds.montage().is_err());
    }

    fn n_trials(n: usize) -> Dataset {
        Dataset::new((1..=n as u32).map(tiny_trial).collect(), montage2()).unwrap()
    }

    #[test]
    fn split_sizes() {
        let sizes = |n, r| {
            let (a, b, c) = split_dataset(&n_trials(n), r).unwrap();
            (a.len(), b.len(), c.len())
        };
        assert_eq!(sizes(120, (0.70, 0.15, 0.15)), (84, 18, 18));
        assert_eq!(sizes(1, (1.0, 0.0, 0.0)), (1, 0, 0));
        assert_eq!(sizes(10, (0.70, 0.15, 0.15)), (8, 1, 1));
    }

    #[test]
    fn split_errors() {
        assert!(split_dataset(&n_trials(2), (0.7, 0.15, 0.15)).is_err());
        assert!(split_dataset(&n_trials(10), (0.7, 0.2, 0.2)).is_err());
        assert!(split_dataset(&n_trials(10), (1.1, -0.1, 0.0)).is_err());
    }

    #[test]
    fn synthetic_is_deterministic_and_valid() {
        let spec = SynthSpec {
            trials: 3,
            rt_ms: (100, 400),
            noise_std: 0.1,
            nonlinearity: Nonlinearity::TanhMix,
            ..SynthSpec::default()
        };
        let (a, ta) = generate_synthetic(&spec).unwrap();
        let (b, tb) = generate_synthetic(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        for t in &a.trials {
            t.validate().unwrap();
        }
    }

    #[test]
    fn negative_noise_rejected() {
        let spec = SynthSpec {
            noise_std: -1.0,
            ..SynthSpec::default()
        };
        assert!(generate_synthetic(&spec).is_err());
    }

    #[test]
    fn noiseless_kinematics_follow_recorded_map() {
        let spec = SynthSpec {
            trials: 2,
            rt_ms: (50, 200),
            ..SynthSpec::default()
        };
        let (ds, gt) = generate_synthetic(&spec).unwrap();
        for (trial, &rt) in ds.trials.iter().zip(&gt.rt_samples) {
            for t in (rt + gt.lag_order)..trial.samples() {
                for a in 0..3 {
                    let (icpt, b) = gt.effective_linear(a);
                    let mut p = icpt;
                    for c in 0..gt.channels {
                        for l in 0..=gt.lag_order {
                            p += b[c * (gt.lag_order + 1) + l] * trial.eeg[(c, t - rt - l)];
                        }
                    }
                    assert!((p - trial.kinematics[(a, t)]).abs() < 1e-9);
                }
            }
        }
    }
}
