//! Flat `key = value` pipeline configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::dataio::{Nonlinearity, SynthSpec};
use crate::error::{Error, Result};
use crate::eval::{Method, Variance, DEFAULT_ALPHA};
use crate::mlr::{DEFAULT_MAX_LAG, DEFAULT_RIDGE};
use crate::neural::network::{DEFAULT_FRAME_LEN, DEFAULT_SEQ_LEN, DEFAULT_WPD_DEPTH};
use crate::preprocess::{Band, DEFAULT_MAX_RT_MS, DEFAULT_TAPS, DEFAULT_TARGET_HZ};
use crate::sourceloc::DEFAULT_THRESHOLD_FRAC;

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synth,
    Dir(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ChannelChoice {
    All,
    Standard18,
    /// Top-k list written by `localize`.
    Ranked,
    Names(Vec<String>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum LeadFieldSource {
    Synth { dipoles: usize },
    Dir(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub data: DataSource,
    pub synth: SynthSpec,
    pub bands: Vec<Band>,
    pub taps: usize,
    pub target_hz: u32,
    pub max_rt_ms: f64,
    pub channels: ChannelChoice,
    pub split: (f64, f64, f64),
    pub lag: usize,
    pub ridge: f64,
    pub models: Vec<Method>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seq_len: usize,
    pub frame_len: usize,
    pub wpd_depth: usize,
    pub train_stride: usize,
    pub leadfield: LeadFieldSource,
    pub localize_k: usize,
    pub localize_alpha: Option<f64>,
    pub localize_threshold: f64,
    pub ttest: Variance,
    pub alpha: f64,
    pub out: PathBuf,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            data: DataSource::Synth,
            synth: SynthSpec {
                channels: 32,
                trials: 40,
                samples_per_trial: 2000,
                lag_order: 10,
                noise_std: 0.05,
                nonlinearity: Nonlinearity::TanhMix,
                seed: 0,
                sample_rate: 500,
                band_limited: true,
                rt_ms: (250, 800),
            },
            bands: Band::ALL.to_vec(),
            taps: DEFAULT_TAPS,
            target_hz: DEFAULT_TARGET_HZ,
            max_rt_ms: DEFAULT_MAX_RT_MS,
            channels: ChannelChoice::Standard18,
            split: (0.70, 0.15, 0.15),
            lag: DEFAULT_MAX_LAG,
            ridge: DEFAULT_RIDGE,
            models: Method::ALL.to_vec(),
            epochs: 20,
            batch_size: 64,
            lr: 1e-3,
            seq_len: DEFAULT_SEQ_LEN,
            frame_len: DEFAULT_FRAME_LEN,
            wpd_depth: DEFAULT_WPD_DEPTH,
            train_stride: 1,
            leadfield: LeadFieldSource::Synth { dipoles: 50 },
            localize_k: 18,
            localize_alpha: None,
            localize_threshold: DEFAULT_THRESHOLD_FRAC,
            ttest: Variance::Pooled,
            alpha: DEFAULT_ALPHA,
            out: PathBuf::from("out"),
            seed: 0,
        }
    }
}

fn bad(key: &str, value: &str) -> Error {
    Error::Config(format!("invalid value `{value}` for `{key}`"))
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| bad(key, value))
}

pub fn parse_list<T>(value: &str) -> Result<Vec<T>>
where
    T: std::str::FromStr<Err = Error>,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect()
}

impl PipelineConfig {
    /// Reads a config file relative to which `data`, `leadfield` and `out`
    /// paths are kept as written.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        let mut seen = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if seen.insert(k.to_string(), i + 1).is_some() {
                return Err(Error::Config(format!("line {}: `{k}` set twice", i + 1)));
            }
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "data" => {
                self.data = if v == "synth" {
                    DataSource::Synth
                } else {
                    DataSource::Dir(PathBuf::from(v))
                }
            }
            "synth.channels" => self.synth.channels = num(key, v)?,
            "synth.trials" => self.synth.trials = num(key, v)?,
            "synth.samples" => self.synth.samples_per_trial = num(key, v)?,
            "synth.lag" => self.synth.lag_order = num(key, v)?,
            "synth.noise_std" => self.synth.noise_std = num(key, v)?,
            "synth.nonlinearity" => self.synth.nonlinearity = v.parse()?,
            "synth.rate" => self.synth.sample_rate = num(key, v)?,
            "synth.band_limited" => self.synth.band_limited = num(key, v)?,
            "synth.rt_ms" => {
                let (lo, hi) = v.split_once(',').ok_or_else(|| bad(key, v))?;
                self.synth.rt_ms = (num(key, lo.trim())?, num(key, hi.trim())?);
            }
            "band" | "bands" => self.bands = parse_list(v)?,
            "taps" => self.taps = num(key, v)?,
            "target_hz" => self.target_hz = num(key, v)?,
            "max_rt_ms" => self.max_rt_ms = num(key, v)?,
            "channels" => {
                self.channels = match v {
                    "all" => ChannelChoice::All,
                    "standard18" => ChannelChoice::Standard18,
                    "ranked" => ChannelChoice::Ranked,
                    list => ChannelChoice::Names(
                        list.split(',')
                            .map(|s| s.trim().to_string())
                            .filter(|s| !s.is_empty())
                            .collect(),
                    ),
                }
            }
            "split" => {
                let parts: Vec<f64> = v
                    .split(',')
                    .map(|s| num(key, s.trim()))
                    .collect::<Result<_>>()?;
                if parts.len() != 3 {
                    return Err(bad(key, v));
                }
                self.split = (parts[0], parts[1], parts[2]);
            }
            "lag" => self.lag = num(key, v)?,
            "ridge" => self.ridge = num(key, v)?,
            "models" => self.models = parse_list(v)?,
            "epochs" => self.epochs = num(key, v)?,
            "batch_size" => self.batch_size = num(key, v)?,
            "lr" => self.lr = num(key, v)?,
            "seq_len" => self.seq_len = num(key, v)?,
            "frame_len" => self.frame_len = num(key, v)?,
            "wpd_depth" => self.wpd_depth = num(key, v)?,
            "train_stride" => self.train_stride = num(key, v)?,
            "leadfield" => {
                self.leadfield = if v == "synth" {
                    LeadFieldSource::Synth { dipoles: 50 }
                } else {
                    LeadFieldSource::Dir(PathBuf::from(v))
                }
            }
            "localize.dipoles" => match &mut self.leadfield {
                LeadFieldSource::Synth { dipoles } => *dipoles = num(key, v)?,
                LeadFieldSource::Dir(_) => {
                    return Err(Error::Config(
                        "`localize.dipoles` only applies to the synthetic lead field".into(),
                    ))
                }
            },
            "localize.k" => self.localize_k = num(key, v)?,
            "localize.alpha" => {
                self.localize_alpha = if v == "auto" {
                    None
                } else {
                    Some(num(key, v)?)
                }
            }
            "localize.threshold" => self.localize_threshold = num(key, v)?,
            "ttest" => {
                self.ttest = match v {
                    "pooled" => Variance::Pooled,
                    "welch" => Variance::Welch,
                    _ => return Err(bad(key, v)),
                }
            }
            "alpha" => self.alpha = num(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "seed" => {
                self.seed = num(key, v)?;
                self.synth.seed = self.seed;
            }
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |msg: String| Err(Error::Config(msg));
        if self.models.is_empty() {
            return cfg("at least one model is required".into());
        }
        if self.bands.is_empty() {
            return cfg("at least one band is required".into());
        }
        if self.taps % 2 == 0 {
            return cfg(format!("taps must be odd, got {}", self.taps));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.train_stride == 0 {
            return cfg("epochs, batch_size and train_stride must be positive".into());
        }
        if !(self.lr >= 0.0) || !(self.ridge >= 0.0) {
            return cfg("lr and ridge must be nonnegative".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return cfg(format!("alpha {} outside (0, 1)", self.alpha));
        }
        if self.seq_len == 0 {
            return cfg("seq_len must be positive".into());
        }
        let (a, b, c) = self.split;
        if a < 0.0 || b < 0.0 || c < 0.0 || ((a + b + c) - 1.0).abs() > 1e-9 {
            return cfg(format!(
                "split {a},{b},{c} must be nonnegative and sum to 1"
            ));
        }
        Ok(())
    }

    /// First sample index scored by every decoder in an aligned trial.
    pub fn eval_start(&self) -> usize {
        self.lag.max(self.frame_len + self.seq_len - 2)
    }

    /// Canonical text of every setting, for manifests.
    pub fn describe(&self) -> BTreeMap<&'static str, String> {
        let join = |v: Vec<String>| v.join(",");
        let mut m = BTreeMap::new();
        m.insert(
            "data",
            match &self.data {
                DataSource::Synth => "synth".to_string(),
                DataSource::Dir(p) => p.display().to_string(),
            },
        );
        m.insert(
            "bands",
            join(self.bands.iter().map(|b| b.to_string()).collect()),
        );
        m.insert("taps", self.taps.to_string());
        m.insert("target_hz", self.target_hz.to_string());
        m.insert("max_rt_ms", self.max_rt_ms.to_string());
        m.insert(
            "split",
            format!("{},{},{}", self.split.0, self.split.1, self.split.2),
        );
        m.insert("lag", self.lag.to_string());
        m.insert("ridge", self.ridge.to_string());
        m.insert("epochs", self.epochs.to_string());
        m.insert("batch_size", self.batch_size.to_string());
        m.insert("lr", self.lr.to_string());
        m.insert("seq_len", self.seq_len.to_string());
        m.insert("frame_len", self.frame_len.to_string());
        m.insert("wpd_depth", self.wpd_depth.to_string());
        m.insert("train_stride", self.train_stride.to_string());
        m.insert("seed", self.seed.to_string());
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys_and_comments() {
        let cfg = PipelineConfig::parse(
            "# demo\nbands = delta, entire\nmodels = mlr,mlp  # two\nchannels = C3,C4\nsplit = 0.8,0.1,0.1\nseed = 9\nlocalize.alpha = 0.5\n",
        )
        .unwrap();
        assert_eq!(cfg.bands, vec![Band::Delta, Band::Entire]);
        assert_eq!(cfg.models, vec![Method::Mlr, Method::Mlp]);
        assert_eq!(
            cfg.channels,
            ChannelChoice::Names(vec!["C3".into(), "C4".into()])
        );
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.synth.seed, 9);
        assert_eq!(cfg.localize_alpha, Some(0.5));
    }

    #[test]
    fn rejects_bad_configs() {
        for text in [
            "bands = gamma",
            "models =",
            "unknown = 1",
            "taps = 400",
            "split = 0.5,0.5,0.5",
            "seed = 1\nseed = 2",
            "no equals sign",
            "lr = fast",
        ] {
            let err = PipelineConfig::parse(text).unwrap_err();
            assert_eq!(err.exit_code(), 1, "{text}: {err}");
        }
    }

    #[test]
    fn eval_start_covers_all_decoders() {
        let cfg = PipelineConfig::default();
        assert_eq!(cfg.eval_start(), 72);
    }
}
