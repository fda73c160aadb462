//! The pipeline stages behind each subcommand. Every file written is
//! announced on stdout; nothing written depends on wall-clock time or on
//! absolute output paths, so reruns produce identical trees.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use sha2::{Digest, Sha256};

use crate::dataio::{
    generate_synthetic, load_dataset, split_dataset, trial_file_name, write_dataset, Dataset,
    TrialRecord,
};
use crate::error::{invalid, Error, Result};
use crate::eval::{
    compare_methods_with, export_trajectories, pcc_axes, subject_pcc, trial_pccs, ttest_csv,
    Decoder, Method, PccKey, PccReport, TrialPrediction, TTEST_HEADER,
};
use crate::mlr::{self, LagSpec, MlrModel};
use crate::neural::{
    evaluate_loss, predict_source, train, AdamConfig, Arch, NeuralDecoder, SampleSource,
    TrainConfig, WindowSource,
};
use crate::preprocess::{
    bandpass, common_average_reference, compute_stats, gate_and_align, resample, select_channels,
    standard18, standardize, Band,
};
use crate::sourceloc::{
    default_alpha, detect_latency, rank_channels, read_leadfield, sensor_power, sloreta_inverse,
    synthetic_leadfield, write_leadfield, LeadField,
};

use super::config::{ChannelChoice, DataSource, LeadFieldSource, PipelineConfig};

const PARTS: [&str; 3] = ["train", "val", "test"];

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn announce(path: &Path) {
    println!("wrote {}", path.display());
}

/// Writes `contents` to `path`, creating parent directories, and announces it.
fn emit(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))?;
    announce(path);
    Ok(())
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Removes trial files left in `dir` by an earlier run.
fn clear_trials(dir: &Path) -> Result<()> {
    let Ok(entries) = fs::read_dir(dir) else {
        return Ok(());
    };
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.starts_with('s') && name.ends_with(".csv") && name.contains("_t") {
            fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(())
}

fn write_trials(ds: &Dataset, dir: &Path) -> Result<Vec<PathBuf>> {
    clear_trials(dir)?;
    let paths = write_dataset(ds, dir)?;
    paths.iter().for_each(|p| announce(p));
    Ok(paths)
}

fn hash_files(paths: &[PathBuf]) -> Result<String> {
    let mut h = Sha256::new();
    for p in paths {
        h.update(
            p.file_name()
                .and_then(|n| n.to_str())
                .unwrap_or("")
                .as_bytes(),
        );
        h.update(fs::read(p).map_err(|e| Error::io(p, e))?);
    }
    Ok(hex::encode(h.finalize()))
}

pub fn synth_dir(cfg: &PipelineConfig) -> PathBuf {
    cfg.out.join("synth")
}

pub fn prep_dir(cfg: &PipelineConfig) -> PathBuf {
    cfg.out.join("prep")
}

fn train_dir(cfg: &PipelineConfig) -> PathBuf {
    cfg.out.join("train")
}

/// `synth`: writes the seeded synthetic corpus.
pub fn cmd_synth(cfg: &PipelineConfig) -> Result<(Dataset, String)> {
    let (ds, truth) = generate_synthetic(&cfg.synth)?;
    let dir = synth_dir(cfg);
    let paths = write_trials(&ds, &dir)?;
    let mut info = String::new();
    let _ = writeln!(info, "nonlinearity = {}", truth.nonlinearity);
    let _ = writeln!(info, "lag_order = {}", truth.lag_order);
    let _ = writeln!(
        info,
        "offset = {},{},{}",
        truth.offset[0], truth.offset[1], truth.offset[2]
    );
    let _ = writeln!(
        info,
        "range = {},{},{}",
        truth.range[0], truth.range[1], truth.range[2]
    );
    emit(&dir.join("truth.txt"), &info)?;
    let hash = hash_files(&paths)?;
    Ok((ds, hash))
}

/// The raw corpus named by `data`, with a digest of its files.
fn load_input(cfg: &PipelineConfig) -> Result<(Dataset, String)> {
    match &cfg.data {
        DataSource::Synth => cmd_synth(cfg),
        DataSource::Dir(dir) => {
            let ds = load_dataset(dir)?;
            if ds.is_empty() {
                return Err(invalid(format!("no trial files in {}", dir.display())));
            }
            let mut paths: Vec<PathBuf> = ds
                .trials
                .iter()
                .map(|t| dir.join(trial_file_name(t)))
                .collect();
            paths.sort();
            let hash = hash_files(&paths)?;
            Ok((ds, hash))
        }
    }
}

fn trial_label(t: &TrialRecord) -> String {
    format!("s{:03}_t{:04}", t.subject_id, t.trial_id)
}

fn ranked_channels(cfg: &PipelineConfig) -> Result<Vec<String>> {
    let path = cfg.out.join("localize").join("channels.csv");
    let text = fs::read_to_string(&path).map_err(|_| {
        Error::Config(format!(
            "channels = ranked needs {}; run `localize` first",
            path.display()
        ))
    })?;
    Ok(text
        .lines()
        .skip(1)
        .filter_map(|l| l.split(',').nth(1).map(str::to_string))
        .collect())
}

fn resolve_channels(cfg: &PipelineConfig, montage: &[String]) -> Result<Vec<String>> {
    Ok(match &cfg.channels {
        ChannelChoice::All => montage.to_vec(),
        ChannelChoice::Standard18 => standard18(),
        ChannelChoice::Ranked => ranked_channels(cfg)?,
        ChannelChoice::Names(n) => n.clone(),
    })
}

/// Resampled trials split into those kept and those over the reaction-time
/// limit.
fn resample_and_gate(cfg: &PipelineConfig, raw: &Dataset) -> Result<(Dataset, Vec<(String, f64)>)> {
    use rayon::prelude::*;
    let montage = raw.montage()?.to_vec();
    let resampled: Vec<TrialRecord> = raw
        .trials
        .par_iter()
        .map(|t| resample(t, cfg.target_hz))
        .collect::<Result<_>>()?;
    let mut kept = Vec::new();
    let mut excluded = Vec::new();
    for t in resampled {
        if gate_and_align(&t, cfg.max_rt_ms)?.is_some() {
            kept.push(t);
        } else {
            excluded.push((trial_label(&t), t.reaction_time_ms()));
        }
    }
    Ok((Dataset::new(kept, montage)?, excluded))
}

/// `prep`: resample, band-pass, re-reference, select, gate, split and
/// standardize, one prepared corpus per band.
pub fn cmd_prep(cfg: &PipelineConfig) -> Result<PathBuf> {
    let (raw, input_hash) = load_input(cfg)?;
    let montage = raw.montage()?.to_vec();
    let names = resolve_channels(cfg, &montage)?;
    crate::preprocess::channel_indices(&montage, &names)?;
    let (kept, excluded) = resample_and_gate(cfg, &raw)?;
    for (label, rt) in &excluded {
        log::info!("excluding {label}: reaction time {rt} ms");
    }
    let (train, val, test) = split_dataset(&kept, cfg.split)?;
    let dir = prep_dir(cfg);
    let mut outputs = Vec::new();

    for &band in &cfg.bands {
        let spec = band.filter(cfg.taps);
        spec.validate(cfg.target_hz as f64)?;
        let process = |t: &TrialRecord| -> Result<TrialRecord> {
            let t = bandpass(t, &spec)?;
            let t = common_average_reference(&t)?;
            let t = select_channels(&t, &montage, &names)?;
            gate_and_align(&t, cfg.max_rt_ms)?
                .ok_or_else(|| invalid(format!("{} unexpectedly failed gating", trial_label(&t))))
        };
        let parts: Vec<Dataset> = [&train, &val, &test]
            .iter()
            .map(|d| d.map_trials(names.clone(), process))
            .collect::<Result<_>>()?;
        let stats = compute_stats(&parts[0])?;
        let band_dir = dir.join(band.name());
        for (part, ds) in PARTS.iter().zip(&parts) {
            let std = ds.map_trials(names.clone(), |t| standardize(t, &stats))?;
            outputs.extend(write_trials(&std, &band_dir.join(part))?);
        }
        let mut s = String::from("channel,mean,std\n");
        for (k, n) in stats.names.iter().enumerate() {
            let _ = writeln!(s, "{n},{},{}", stats.mean[k], stats.std[k]);
        }
        let p = band_dir.join("stats.csv");
        emit(&p, &s)?;
        outputs.push(p);
    }

    let mut m = String::from("# prepared-data manifest\n");
    let desc = cfg.describe();
    let _ = writeln!(m, "input = {}", desc["data"]);
    let _ = writeln!(m, "input_sha256 = {input_hash}");
    let _ = writeln!(
        m,
        "steps = resample({} Hz), bandpass(hamming, {} taps, zero-phase), car, select({} channels), gate_and_align(max {} ms), standardize(train stats)",
        cfg.target_hz,
        cfg.taps,
        names.len(),
        cfg.max_rt_ms
    );
    let _ = writeln!(m, "channels = {}", names.join(","));
    let _ = writeln!(m, "split = {}", desc["split"]);
    let _ = writeln!(
        m,
        "trials = {} kept (train {}, val {}, test {}), {} excluded",
        kept.len(),
        train.len(),
        val.len(),
        test.len(),
        excluded.len()
    );
    for &band in &cfg.bands {
        let (lo, hi) = band.edges();
        let _ = writeln!(m, "band {} = ({lo}, {hi}) Hz", band.name());
    }
    let _ = writeln!(m, "excluded (rt>{}ms):", cfg.max_rt_ms);
    for (label, rt) in &excluded {
        let _ = writeln!(m, "  {label} rt={rt}ms");
    }
    let _ = writeln!(m, "outputs_sha256 = {}", hash_files(&outputs)?);
    let path = dir.join("manifest.txt");
    emit(&path, &m)?;
    Ok(path)
}

fn require(path: &Path, what: &str) -> Result<String> {
    fs::read_to_string(path).map_err(|_| {
        invalid(format!(
            "missing {what} at {}; run the earlier stage first",
            path.display()
        ))
    })
}

fn load_part(cfg: &PipelineConfig, band: Band, part: &str) -> Result<Dataset> {
    load_dataset(&prep_dir(cfg).join(band.name()).join(part))
}

fn arch_for(cfg: &PipelineConfig, method: Method, channels: usize) -> Option<Arch> {
    match method {
        Method::Mlr => None,
        Method::Mlp => Some(Arch::Mlp {
            channels,
            max_lag: cfg.lag,
        }),
        Method::CnnLstm => Some(Arch::CnnLstm {
            channels,
            frame_len: cfg.frame_len,
            seq_len: cfg.seq_len,
        }),
        Method::WpdCnnLstm => Some(Arch::WpdCnnLstm {
            channels,
            frame_len: cfg.frame_len,
            seq_len: cfg.seq_len,
            depth: cfg.wpd_depth,
        }),
    }
}

fn checkpoint_name(method: Method) -> String {
    match method {
        Method::Mlr => "mlr.csv".into(),
        m => format!("{m}.txt"),
    }
}

/// Deterministic per-(band, method) seed.
fn model_seed(cfg: &PipelineConfig, band: Band, method: Method) -> u64 {
    let b = Band::ALL.iter().position(|x| *x == band).unwrap_or(0) as u64;
    let m = Method::ALL.iter().position(|x| *x == method).unwrap_or(0) as u64;
    cfg.seed.wrapping_mul(1000).wrapping_add(10 * b + m)
}

fn concat_tracks(tracks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let total = tracks.iter().map(|m| m.ncols()).sum();
    let mut out = DMatrix::zeros(3, total);
    let mut c0 = 0;
    for m in tracks {
        out.columns_mut(c0, m.ncols()).copy_from(m);
        c0 += m.ncols();
    }
    out
}

fn training_pcc(decoder: &dyn Decoder, data: &Dataset, start: usize) -> Result<[f64; 3]> {
    let start = start.max(decoder.context());
    let mut truth = Vec::new();
    let mut pred = Vec::new();
    for t in data.trials.iter().filter(|t| t.samples() > start) {
        pred.push(decoder.predict_trial(&t.eeg, start)?);
        truth.push(
            t.kinematics
                .columns(start, t.samples() - start)
                .into_owned(),
        );
    }
    pcc_axes(&concat_tracks(&truth), &concat_tracks(&pred))
}

/// Correlation over the (strided) samples a network was trained on.
fn source_pcc(decoder: &NeuralDecoder, src: &WindowSource) -> Result<[f64; 3]> {
    let preds = predict_source(&decoder.model, src)?;
    let mut truth = DMatrix::zeros(3, src.len());
    let mut pred = DMatrix::zeros(3, src.len());
    for (i, p) in preds.iter().enumerate() {
        let (_, y) = src.sample(i)?;
        for a in 0..3 {
            truth[(a, i)] = y[a];
            pred[(a, i)] = p[a];
        }
    }
    pcc_axes(&truth, &pred)
}

fn mse(decoder: &dyn Decoder, data: &Dataset, start: usize) -> Result<Option<f64>> {
    let start = start.max(decoder.context());
    let mut sum = 0.0;
    let mut n = 0usize;
    for t in data.trials.iter().filter(|t| t.samples() > start) {
        let p = decoder.predict_trial(&t.eeg, start)?;
        let y = t.kinematics.columns(start, t.samples() - start);
        sum += (p - y).map(|v| v * v).sum();
        n += 3 * (t.samples() - start);
    }
    Ok((n > 0).then(|| sum / n as f64))
}

fn fit_mlr(cfg: &PipelineConfig, train_set: &Dataset) -> Result<MlrModel> {
    let spec = LagSpec { max_lag: cfg.lag };
    let mut designs = Vec::new();
    let mut targets = Vec::new();
    for t in train_set.trials.iter().filter(|t| t.samples() > cfg.lag) {
        designs.push(mlr::build_lagged(&t.eeg, spec)?);
        targets.push(mlr::lagged_targets(&t.kinematics, cfg.lag));
    }
    if designs.is_empty() {
        return Err(invalid("no training trial is longer than the lag order"));
    }
    let x = mlr::DesignMatrix::stack(&designs)?;
    let rows: usize = targets.iter().map(|m| m.nrows()).sum();
    let mut y = DMatrix::zeros(rows, 3);
    let mut r0 = 0;
    for m in &targets {
        y.rows_mut(r0, m.nrows()).copy_from(m);
        r0 += m.nrows();
    }
    mlr::fit(&x, &y, cfg.ridge)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `train`: one checkpoint per (model, band), loss histories and a summary.
pub fn cmd_train(cfg: &PipelineConfig) -> Result<PathBuf> {
    let prep_manifest = require(&prep_dir(cfg).join("manifest.txt"), "prep manifest")?;
    let dir = train_dir(cfg);
    let mut summary =
        String::from("band,model,train_pcc_x,train_pcc_y,train_pcc_z,train_loss,val_loss\n");
    let mut manifest = String::from("# training manifest\n");
    let _ = writeln!(
        manifest,
        "prep_manifest_sha256 = {}",
        sha256_hex(prep_manifest.as_bytes())
    );
    for (k, v) in cfg.describe() {
        let _ = writeln!(manifest, "{k} = {v}");
    }

    for &band in &cfg.bands {
        let train_set = load_part(cfg, band, "train")?;
        let val_set = load_part(cfg, band, "val")?;
        if train_set.is_empty() {
            return Err(invalid(format!("no training trials for band {band}")));
        }
        let channels = train_set.montage()?.len();
        for &method in &cfg.models {
            if !method.supports(band) {
                continue;
            }
            log::info!("training {method} on {band}");
            let path = dir.join(band.name()).join(checkpoint_name(method));
            let (text, pcc, train_loss, val_loss) = match arch_for(cfg, method, channels) {
                None => {
                    let model = fit_mlr(cfg, &train_set)?;
                    let pcc = training_pcc(&model, &train_set, 0)?;
                    let tl = mse(&model, &train_set, cfg.lag)?;
                    let vl = mse(&model, &val_set, cfg.lag)?;
                    (model.to_csv(), pcc, tl, vl)
                }
                Some(arch) => {
                    let seed = model_seed(cfg, band, method);
                    let mut decoder = NeuralDecoder::new(arch, seed)?;
                    let src = WindowSource::new(arch, &train_set, 0, cfg.train_stride)?;
                    let val_src = WindowSource::new(arch, &val_set, 0, cfg.train_stride)?;
                    let tcfg = TrainConfig {
                        epochs: cfg.epochs,
                        batch_size: cfg.batch_size,
                        seed,
                        adam: AdamConfig {
                            lr: cfg.lr,
                            ..AdamConfig::default()
                        },
                        ..TrainConfig::default()
                    };
                    let history = train(&mut decoder.model, &src, Some(&val_src), &tcfg)?;
                    decoder.epochs = cfg.epochs;
                    emit(
                        &dir.join(band.name()).join(format!("{method}_history.csv")),
                        &history.to_csv(),
                    )?;
                    let pcc = source_pcc(&decoder, &src)?;
                    let tl = Some(evaluate_loss(&decoder.model, &src)?);
                    let vl = if val_src.is_empty() {
                        None
                    } else {
                        Some(evaluate_loss(&decoder.model, &val_src)?)
                    };
                    (decoder.to_checkpoint(), pcc, tl, vl)
                }
            };
            emit(&path, &text)?;
            let _ = writeln!(
                manifest,
                "checkpoint {}/{} = {}",
                band.name(),
                checkpoint_name(method),
                sha256_hex(text.as_bytes())
            );
            let _ = writeln!(
                summary,
                "{band},{method},{},{},{},{},{}",
                pcc[0],
                pcc[1],
                pcc[2],
                opt(train_loss),
                opt(val_loss)
            );
        }
    }
    emit(&dir.join("summary.csv"), &summary)?;
    let path = dir.join("manifest.txt");
    emit(&path, &manifest)?;
    Ok(path)
}

/// Loads a checkpoint after checking it against the training manifest.
fn load_decoder(
    cfg: &PipelineConfig,
    recorded: &BTreeMap<String, String>,
    band: Band,
    method: Method,
    channels: usize,
) -> Result<Box<dyn Decoder>> {
    let key = format!("{}/{}", band.name(), checkpoint_name(method));
    let expected = recorded
        .get(&key)
        .ok_or_else(|| invalid(format!("{method} was not trained for band {band}")))?;
    let path = train_dir(cfg).join(&key);
    let text = read(&path)?;
    if &sha256_hex(text.as_bytes()) != expected {
        return Err(invalid(format!(
            "{} does not match the training manifest",
            path.display()
        )));
    }
    let decoder: Box<dyn Decoder> = match method {
        Method::Mlr => Box::new(MlrModel::from_csv(&path, &text)?),
        _ => {
            let d = NeuralDecoder::from_checkpoint(&path, &text)?;
            if Some(d.arch) != arch_for(cfg, method, channels) {
                return Err(invalid(format!(
                    "{} was trained with a different configuration",
                    path.display()
                )));
            }
            Box::new(d)
        }
    };
    Ok(decoder)
}

/// `eval`: correlation report, method t-tests and trajectory exports on the
/// test partition.
pub fn cmd_eval(cfg: &PipelineConfig) -> Result<PathBuf> {
    let prep_manifest = require(&prep_dir(cfg).join("manifest.txt"), "prep manifest")?;
    let train_manifest = require(&train_dir(cfg).join("manifest.txt"), "training manifest")?;
    let mut recorded = BTreeMap::new();
    let mut prep_hash = None;
    let settings = cfg.describe();
    for line in train_manifest.lines() {
        if let Some((k, v)) = line.split_once(" = ") {
            if let Some(name) = k.strip_prefix("checkpoint ") {
                recorded.insert(name.to_string(), v.to_string());
            } else if k == "prep_manifest_sha256" {
                prep_hash = Some(v.to_string());
            } else if k != "bands" {
                if let Some(current) = settings.get(k) {
                    if current != v {
                        return Err(invalid(format!(
                            "setting {k} is {current} but the checkpoints were trained with {v}"
                        )));
                    }
                }
            }
        }
    }
    if prep_hash.as_deref() != Some(sha256_hex(prep_manifest.as_bytes()).as_str()) {
        return Err(invalid(
            "prepared data changed since training; rerun `train`".to_string(),
        ));
    }

    let start = cfg.eval_start();
    let dir = cfg.out.join("eval");
    let mut report = PccReport::default();
    let ttest_band = if cfg.bands.contains(&Band::Entire) {
        Band::Entire
    } else {
        cfg.bands[0]
    };
    let mut per_trial = BTreeMap::new();

    for &band in &cfg.bands {
        let test = load_part(cfg, band, "test")?;
        if test.is_empty() {
            return Err(invalid(format!("no test trials for band {band}")));
        }
        let channels = test.montage()?.len();
        for &method in &cfg.models {
            if !method.supports(band) {
                continue;
            }
            let decoder = load_decoder(cfg, &recorded, band, method, channels)?;
            let preds: Vec<TrialPrediction> =
                crate::eval::predict_dataset(decoder.as_ref(), &test, start)?;
            if preds.is_empty() {
                return Err(invalid(format!(
                    "test trials for band {band} are shorter than the {start}-sample context"
                )));
            }
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
            if band == ttest_band {
                per_trial.insert(method, trial_pccs(&preds)?);
            }
            let first = &preds[0];
            let stem = format!("{method}_s{:03}_t{:04}", first.subject, first.trial);
            let rate = test.trials[0].sample_rate;
            for p in export_trajectories(
                &dir.join("trajectories").join(band.name()),
                &stem,
                &first.truth,
                &first.predicted,
                rate,
                start,
            )? {
                announce(&p);
            }
        }
    }
    emit(&dir.join("report.csv"), &report.to_csv())?;
    let path = dir.join("ttest.csv");
    let fewest = per_trial.values().map(|s| s[0].len()).min().unwrap_or(0);
    if per_trial.len() > 1 && fewest < 2 {
        log::warn!("{fewest} test trial(s) on band {ttest_band}; method t-tests need at least 2");
        let text = format!(
            "# no method t-tests: band {ttest_band} has {fewest} test trial(s), at least 2 are required\n{TTEST_HEADER}\n"
        );
        emit(&path, &text)?;
    } else {
        let rows = compare_methods_with(&per_trial, cfg.alpha, cfg.ttest)?;
        emit(&path, &ttest_csv(&rows))?;
    }
    Ok(dir.join("report.csv"))
}

fn leadfield(cfg: &PipelineConfig, montage: &[String]) -> Result<LeadField> {
    match &cfg.leadfield {
        LeadFieldSource::Synth { dipoles } => {
            let lf = synthetic_leadfield(montage, *dipoles)?;
            let dir = cfg.out.join("localize");
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let (g, p) = (dir.join("leadfield.csv"), dir.join("positions.csv"));
            write_leadfield(&lf, &g, &p)?;
            announce(&g);
            announce(&p);
            Ok(lf)
        }
        LeadFieldSource::Dir(dir) => {
            read_leadfield(&dir.join("leadfield.csv"), &dir.join("positions.csv"))
        }
    }
}

/// Cue-aligned average over trials of the lead-field sensors after
/// resampling, entire-band filtering and re-referencing.
fn erp(cfg: &PipelineConfig, kept: &Dataset, sensors: &[String]) -> Result<DMatrix<f64>> {
    let montage = kept.montage()?.to_vec();
    let spec = Band::Entire.filter(cfg.taps);
    let ready = kept.map_trials(sensors.to_vec(), |t| {
        let t = bandpass(t, &spec)?;
        let t = common_average_reference(&t)?;
        select_channels(&t, &montage, sensors)
    })?;
    let len = ready
        .trials
        .iter()
        .map(|t| t.samples() - t.cue_index)
        .min()
        .ok_or_else(|| invalid("no trials to localize"))?;
    let mut avg = DMatrix::zeros(sensors.len(), len);
    for t in &ready.trials {
        avg += t.eeg.columns(t.cue_index, len);
    }
    Ok(avg / ready.len() as f64)
}

/// `localize`: sLORETA on the trial-averaged response, ranked channels and
/// regional activation latencies.
pub fn cmd_localize(cfg: &PipelineConfig) -> Result<PathBuf> {
    let (raw, _) = load_input(cfg)?;
    let montage = raw.montage()?.to_vec();
    let lf = leadfield(cfg, &montage)?;
    crate::preprocess::channel_indices(&montage, &lf.sensor_names)?;
    let (kept, _) = resample_and_gate(cfg, &raw)?;
    // CAR needs the full montage, so average-reference before restricting.
    let data = erp(cfg, &kept, &lf.sensor_names)?;
    let h = DMatrix::identity(lf.sensors(), lf.sensors())
        - DMatrix::from_element(lf.sensors(), lf.sensors(), 1.0 / lf.sensors() as f64);
    let data = h * data;
    let alpha = cfg.localize_alpha.unwrap_or_else(|| default_alpha(&lf));
    let map = sloreta_inverse(&lf, &data, alpha)?;
    let window = 0..map.power.ncols();
    let k = cfg.localize_k.min(lf.sensors());
    let ranked = rank_channels(&map, &lf, window.clone(), k)?;
    let power = sensor_power(&map, &lf, window)?;
    if power.iter().all(|p| *p == 0.0) {
        log::warn!("source power is zero everywhere; channel ranking falls back to montage order");
        eprintln!("warning: source power is zero everywhere; ranking falls back to montage order");
    }
    let dir = cfg.out.join("localize");
    let mut csv = String::from("rank,channel,power\n");
    for (r, name) in ranked.iter().enumerate() {
        let s = lf.sensor_names.iter().position(|n| n == name).unwrap_or(0);
        let _ = writeln!(csv, "{},{name},{}", r + 1, power[s]);
    }
    let path = dir.join("channels.csv");
    emit(&path, &csv)?;
    let timeline = detect_latency(&map, &lf.region_labels(), cfg.localize_threshold)?;
    emit(&dir.join("timeline.csv"), &timeline.to_csv(cfg.target_hz))?;
    Ok(path)
}

/// `all`: synth (when configured), localize, prep, train, eval.
pub fn cmd_all(cfg: &PipelineConfig) -> Result<PathBuf> {
    cmd_localize(cfg)?;
    cmd_prep(cfg)?;
    cmd_train(cfg)?;
    cmd_eval(cfg)
}
