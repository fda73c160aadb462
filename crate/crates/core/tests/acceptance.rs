//! Acceptance criteria, one PASS/FAIL line each. Runs without the libtest
//! harness so every line is printed; exits nonzero when any criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use handkin::dataio::{
    generate_synthetic, load_dataset, split_dataset, Dataset, Nonlinearity, SynthSpec,
};
use handkin::eval::{pcc, pcc_axes, two_sample_ttest, Decoder, PccKey, PccReport};
use handkin::mlr::{self, LagSpec, MlrModel};
use handkin::neural::gradcheck::{check_model, random_input, randomize_params};
use handkin::neural::{
    build_cnn_lstm, train, Affine, Arch, Conv1d, Layer, Lstm, Model, NeuralDecoder, TrainConfig,
    WindowSource,
};
use handkin::preprocess::fir::gain_at;
use handkin::preprocess::{bandpass, resample, Band, DEFAULT_TAPS};
use handkin::sourceloc::{default_leadfield, sloreta_inverse, trace_scale};
use handkin::wpd::{decompose, reconstruct, WaveletFilterPair};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> Outcome {
    let start = Instant::now();
    let mut o = f();
    let took = start.elapsed();
    o.detail = format!("{}; {:.2} s", o.detail, took.as_secs_f64());
    if let Some(limit) = limit {
        if took > limit {
            o.pass = false;
            o.detail = format!("{} (limit {} s)", o.detail, limit.as_secs());
        }
    }
    o
}

fn wpd_reconstruction() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let w = WaveletFilterPair::db1();
    let (mut worst_rec, mut worst_energy) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let x: Vec<f64> = (0..1024).map(|_| rng.random_range(-1.0..1.0)).collect();
        let tree = decompose(&x, 5, &w).unwrap();
        let y = reconstruct(&tree).unwrap();
        let norm = x.iter().map(|v| v * v).sum::<f64>();
        let err = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        worst_rec = worst_rec.max((err / norm).sqrt());
        for p in 0..=5 {
            let level: f64 = (0..1 << p)
                .flat_map(|r| tree.node(p, r).unwrap().iter())
                .map(|v| v * v)
                .sum();
            worst_energy = worst_energy.max((level - norm).abs() / norm);
        }
    }
    outcome(
        worst_rec <= 1e-9 && worst_energy <= 1e-9,
        format!("max reconstruction error {worst_rec:.2e}, max energy deviation {worst_energy:.2e} (tol 1e-9)"),
    )
}

fn gradient_suite() -> Outcome {
    const SEEDS: u64 = 20;
    const TOL: f64 = 1e-4;
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut record = |name: &'static str, err: f64| {
        let e = worst.entry(name).or_insert(0.0);
        *e = e.max(err);
    };
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut size = |lo: usize, hi: usize| rng.random_range(lo..=hi);
        let (i, o) = (size(2, 12), size(1, 8));
        let (ci, co, k, len) = (size(1, 4), size(1, 4), size(1, 5), size(6, 14));
        let (pw, pl) = (size(2, 3), size(6, 15));
        let (fi, units) = (size(2, 6), size(2, 6));
        let rl = size(3, 20);
        let cases: Vec<(&'static str, Vec<Layer>, Vec<usize>, f64)> = vec![
            (
                "dense",
                vec![Layer::Dense(Affine::zeros(i, o))],
                vec![i],
                0.0,
            ),
            ("relu", vec![Layer::Relu], vec![rl], 1e-3),
            (
                "conv1d",
                vec![Layer::Conv1d(Conv1d::zeros(ci, co, k))],
                vec![2, ci, len],
                0.0,
            ),
            (
                "maxpool1d",
                vec![Layer::MaxPool1d { width: pw }],
                vec![ci, pl],
                0.0,
            ),
            (
                "lstm (3 steps)",
                vec![Layer::Lstm(Lstm::zeros(fi, units))],
                vec![3, fi],
                0.0,
            ),
        ];
        for (name, layers, shape, margin) in cases {
            let mut m = Model::new(shape.clone(), layers).unwrap();
            randomize_params(&mut m, seed, 0.5);
            let x = random_input(&shape, seed + 1000, margin);
            record(
                name,
                check_model(&m, &x, seed + 2000, 400).unwrap().max_error(),
            );
        }
        let mut m = build_cnn_lstm(2, 32, 3).unwrap();
        randomize_params(&mut m, seed, 0.1);
        let x = random_input(m.input_shape(), seed + 3000, 0.0);
        record(
            "cnn-lstm",
            check_model(&m, &x, seed + 4000, 300).unwrap().max_error(),
        );
    }
    let max = worst.values().fold(0.0f64, |a, b| a.max(*b));
    let detail = worst
        .iter()
        .map(|(k, v)| format!("{k} {v:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    outcome(
        max <= TOL,
        format!("{SEEDS} seeds each, max relative error: {detail} (tol {TOL:.0e})"),
    )
}

fn mlr_oracle() -> Outcome {
    let spec = SynthSpec {
        channels: 6,
        trials: 1,
        samples_per_trial: 5000,
        lag_order: 10,
        noise_std: 0.0,
        seed: 5,
        ..SynthSpec::default()
    };
    let (ds, truth) = generate_synthetic(&spec).unwrap();
    let t = &ds.trials[0];
    let x = mlr::build_lagged(&t.eeg, LagSpec { max_lag: 10 }).unwrap();
    let y = mlr::lagged_targets(&t.kinematics, 10);
    let model = mlr::fit(&x, &y, 0.0).unwrap();
    let mut coef_err = 0.0f64;
    for a in 0..3 {
        let (c0, w) = truth.effective_linear(a);
        coef_err = coef_err.max((model.intercept(a) - c0).abs());
        for n in 0..6 {
            for l in 0..=10 {
                coef_err = coef_err.max((model.weight(a, n, l) - w[n * 11 + l]).abs());
            }
        }
    }
    let pred = mlr::predict(&model, &x).unwrap();
    let r = pcc_axes(&y.transpose(), &pred.transpose()).unwrap();
    let min_r = r.iter().fold(1.0f64, |a, b| a.min(*b));
    outcome(
        coef_err <= 1e-6 && min_r >= 0.999,
        format!("max coefficient error {coef_err:.2e} (tol 1e-6), PCC x/y/z {:.6}/{:.6}/{:.6} (min 0.999)", r[0], r[1], r[2]),
    )
}

fn test_pcc(decoder: &dyn Decoder, test: &Dataset, start: usize) -> [f64; 3] {
    let mut truth = Vec::new();
    let mut pred = Vec::new();
    for t in &test.trials {
        let p = decoder.predict_trial(&t.eeg, start).unwrap();
        for c in 0..p.ncols() {
            for a in 0..3 {
                pred.push(p[(a, c)]);
                truth.push(t.kinematics[(a, start + c)]);
            }
        }
    }
    let n = truth.len() / 3;
    let truth = DMatrix::from_column_slice(3, n, &truth);
    let pred = DMatrix::from_column_slice(3, n, &pred);
    pcc_axes(&truth, &pred).unwrap()
}

fn nonlinear_ordering() -> Outcome {
    const LAG: usize = 4;
    let spec = SynthSpec {
        channels: 4,
        trials: 50,
        samples_per_trial: 500,
        lag_order: LAG,
        noise_std: 0.05,
        nonlinearity: Nonlinearity::TanhMix,
        seed: 21,
        ..SynthSpec::default()
    };
    let (ds, _) = generate_synthetic(&spec).unwrap();
    let (train_set, _, test) = split_dataset(&ds, (0.8, 0.0, 0.2)).unwrap();

    let designs: Vec<_> = train_set
        .trials
        .iter()
        .map(|t| mlr::build_lagged(&t.eeg, LagSpec { max_lag: LAG }).unwrap())
        .collect();
    let x = mlr::DesignMatrix::stack(&designs).unwrap();
    let targets: Vec<DMatrix<f64>> = train_set
        .trials
        .iter()
        .map(|t| mlr::lagged_targets(&t.kinematics, LAG))
        .collect();
    let rows = targets.iter().map(|m| m.nrows()).sum();
    let mut y = DMatrix::zeros(rows, 3);
    let mut r0 = 0;
    for m in &targets {
        y.rows_mut(r0, m.nrows()).copy_from(m);
        r0 += m.nrows();
    }
    let linear: MlrModel = mlr::fit(&x, &y, mlr::DEFAULT_RIDGE).unwrap();

    let arch = Arch::Mlp {
        channels: 4,
        max_lag: LAG,
    };
    let mut mlp = NeuralDecoder::new(arch, 21).unwrap();
    let src = WindowSource::new(arch, &train_set, LAG, 1).unwrap();
    let cfg = TrainConfig {
        epochs: 25,
        batch_size: 64,
        seed: 21,
        ..TrainConfig::default()
    };
    train(&mut mlp.model, &src, None, &cfg).unwrap();

    let r_lin = test_pcc(&linear, &test, LAG);
    let r_mlp = test_pcc(&mlp, &test, LAG);
    let gaps: Vec<f64> = (0..3).map(|a| r_mlp[a] - r_lin[a]).collect();
    let min_gap = gaps.iter().fold(f64::INFINITY, |a, b| a.min(*b));
    outcome(
        min_gap >= 0.1,
        format!(
            "test PCC mLR {:.3}/{:.3}/{:.3}, MLP {:.3}/{:.3}/{:.3}, min gap {min_gap:.3} (need 0.1)",
            r_lin[0], r_lin[1], r_lin[2], r_mlp[0], r_mlp[1], r_mlp[2]
        ),
    )
}

fn sloreta_localization() -> Outcome {
    let lf = default_leadfield(50).unwrap();
    let alpha = 1e-10 * trace_scale(&lf);
    let wave = [0.2, -1.0, 0.6, 1.4, -0.3];
    let mut misses = Vec::new();
    for j in 0..lf.dipoles() {
        let map = sloreta_inverse(&lf, &lf.project(j, &wave), alpha).unwrap();
        if (0..wave.len()).any(|t| map.argmax(t) != j) {
            misses.push(j);
        }
    }
    outcome(
        misses.is_empty(),
        format!("{} of {} dipoles localized exactly with alpha = 1e-10 x trace scale; misses {misses:?}", lf.dipoles() - misses.len(), lf.dipoles()),
    )
}

/// Two-sided p-value of Student's t by Simpson integration of the density.
fn simpson_p(t: f64, df: u32) -> f64 {
    // Gamma at integers and half-integers by the recurrence.
    fn gamma_half(twice: u32) -> f64 {
        let mut g = if twice % 2 == 0 {
            1.0
        } else {
            std::f64::consts::PI.sqrt()
        };
        let mut z = if twice % 2 == 0 { 1.0 } else { 0.5 };
        while 2.0 * z < twice as f64 {
            g *= z;
            z += 1.0;
        }
        g
    }
    let nu = df as f64;
    let c = gamma_half(df + 1) / ((nu * std::f64::consts::PI).sqrt() * gamma_half(df));
    let f = |x: f64| c * (1.0 + x * x / nu).powf(-(nu + 1.0) / 2.0);
    let n = 20_000;
    let h = t.abs() / n as f64;
    let mut s = f(0.0) + f(t.abs());
    for k in 1..n {
        s += f(k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    2.0 * (0.5 - s * h / 3.0)
}

fn pcc_and_ttest_oracles() -> Outcome {
    let mut failures = Vec::new();
    let r = pcc(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap();
    if (r - 0.98198).abs() > 1e-5 {
        failures.push(format!("pcc example {r}"));
    }
    let s1 = [1.0, 2.0, 3.0, 4.0, 5.0];
    let s2 = [6.0, 7.0, 8.0, 9.0, 10.0];
    let tt = two_sample_ttest(&s1, &s2, 0.05).unwrap();
    let oracle_p = simpson_p(-5.0, 8);
    if (tt.t + 5.0).abs() > 1e-12 || (tt.p - 0.00105).abs() > 1e-4 || (tt.p - oracle_p).abs() > 1e-6
    {
        failures.push(format!(
            "t-test example t={} p={} oracle p={oracle_p}",
            tt.t, tt.p
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let cases = 1000;
    for case in 0..cases {
        let n = rng.random_range(3..40);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let a = rng.random_range(0.1..5.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let b = rng.random_range(-50.0..50.0);
        let base = pcc(&x, &y).unwrap();
        let ax: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        if (pcc(&ax, &y).unwrap() - a.signum() * base).abs() > 1e-9 {
            failures.push(format!("affine case {case}"));
        }
        if (pcc(&y, &x).unwrap() - base).abs() > 1e-12 {
            failures.push(format!("symmetry case {case}"));
        }
        let m = rng.random_range(2..30);
        let z: Vec<f64> = (0..m).map(|_| rng.random_range(-3.0..3.0)).collect();
        let (f, g) = (
            two_sample_ttest(&x, &z, 0.05).unwrap(),
            two_sample_ttest(&z, &x, 0.05).unwrap(),
        );
        if (f.t + g.t).abs() > 1e-9 * (1.0 + f.t.abs()) || f.p != g.p {
            failures.push(format!("t antisymmetry case {case}"));
        }
        let mut report = PccReport::default();
        for axis in 0..3 {
            let key = PccKey {
                subject: case as u32 % 7,
                method: handkin::eval::Method::ALL[case % 4],
                band: Band::ALL[(case / 4) % 4],
                axis,
            };
            report.insert(key, rng.random_range(-1.0..=1.0)).unwrap();
        }
        if PccReport::from_csv(Path::new("report.csv"), &report.to_csv()).unwrap() != report {
            failures.push(format!("report round trip case {case}"));
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "pcc example {r:.6}, t {:.6}, p {:.6} (Simpson oracle {oracle_p:.6}), {cases} random invariant cases; failures {:?}",
            tt.t,
            tt.p,
            failures.iter().take(5).collect::<Vec<_>>()
        ),
    )
}

fn filter_spec() -> Outcome {
    let rate = 100.0;
    let h = Band::Delta.filter(DEFAULT_TAPS).kernel(rate).unwrap();
    let pass_db = 20.0 * gain_at(&h, 1.5, rate).log10();
    let stop_db = 20.0 * gain_at(&h, 30.0, rate).log10();

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 20_000;
    let noise = DMatrix::from_fn(1, n, |_, _| rng.random_range(-1.0..1.0));
    let trial = handkin::dataio::TrialRecord {
        subject_id: 1,
        trial_id: 1,
        eeg: noise.clone(),
        kinematics: DMatrix::from_element(3, n, 0.5),
        sample_rate: 100,
        cue_index: 0,
        onset_index: 0,
        load_label: "165g".into(),
        friction_label: "silk".into(),
    };
    let y = bandpass(&trial, &Band::Delta.filter(DEFAULT_TAPS))
        .unwrap()
        .eeg;
    let xcorr = |lag: i64| -> f64 {
        (0..n as i64)
            .filter(|t| (0..n as i64).contains(&(t + lag)))
            .map(|t| noise[(0, t as usize)] * y[(0, (t + lag) as usize)])
            .sum()
    };
    let peak = (-50..=50)
        .max_by(|a, b| xcorr(*a).total_cmp(&xcorr(*b)))
        .unwrap();
    outcome(
        pass_db.abs() <= 1.0 && stop_db < -30.0 && peak == 0,
        format!("gain at 1.5 Hz {pass_db:.3} dB (within 1 dB), at 30 Hz {stop_db:.1} dB (below -30 dB), cross-correlation peak at lag {peak}"),
    )
}

fn run_binary(dir: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_handkin"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "info")
        .output()
        .expect("binary runs")
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(
                    p.strip_prefix(root).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                );
            }
        }
    }
    out
}

fn pipeline_determinism() -> Outcome {
    let cfg = "synth.trials = 20\nsynth.samples = 1500\nepochs = 1\ntrain_stride = 16\nseed = 3\n";
    let mut trees = Vec::new();
    let dirs: Vec<_> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for d in &dirs {
        fs::write(d.path().join("run.cfg"), cfg).unwrap();
        let o = run_binary(d.path(), &["all", "--config", "run.cfg"]);
        if !o.status.success() {
            return outcome(
                false,
                format!("`all` failed: {}", String::from_utf8_lossy(&o.stderr)),
            );
        }
        trees.push(tree(&d.path().join("out")));
    }
    let differing: Vec<_> = trees[0]
        .iter()
        .filter(|(k, v)| trees[1].get(*k) != Some(v))
        .map(|(k, _)| k.display().to_string())
        .collect();
    let same_keys = trees[0].keys().eq(trees[1].keys());
    let checkpoints = trees[0]
        .keys()
        .filter(|k| k.starts_with("train") && k.extension().is_some_and(|e| e == "txt"))
        .count();
    outcome(
        same_keys && differing.is_empty(),
        format!("{} files compared across two `all` runs (4 models, 4 bands, {checkpoints} train text files); differing {differing:?}", trees[0].len()),
    )
}

fn gating_and_split() -> Outcome {
    let mut failures = Vec::new();
    let d = tempfile::tempdir().unwrap();
    fs::write(
        d.path().join("run.cfg"),
        "synth.trials = 40\nsynth.samples = 1500\nbands = entire\n",
    )
    .unwrap();
    let o = run_binary(d.path(), &["prep", "--config", "run.cfg"]);
    if !o.status.success() {
        return outcome(
            false,
            format!("prep failed: {}", String::from_utf8_lossy(&o.stderr)),
        );
    }
    let manifest = fs::read_to_string(d.path().join("out/prep/manifest.txt")).unwrap();
    let listed: Vec<String> = manifest
        .lines()
        .skip_while(|l| !l.starts_with("excluded (rt>700ms):"))
        .skip(1)
        .take_while(|l| l.starts_with("  "))
        .filter_map(|l| l.trim().split(' ').next().map(str::to_string))
        .collect();
    let raw = load_dataset(&d.path().join("out/synth")).unwrap();
    let mut expected = Vec::new();
    for t in &raw.trials {
        let r = resample(t, 100).unwrap();
        if r.reaction_time_ms() > 700.0 {
            expected.push(format!("s{:03}_t{:04}", t.subject_id, t.trial_id));
        }
    }
    if listed != expected || expected.is_empty() {
        failures.push(format!("manifest lists {listed:?}, expected {expected:?}"));
    }
    let stderr = String::from_utf8_lossy(&o.stderr);
    let logged = expected
        .iter()
        .filter(|e| stderr.contains(&format!("excluding {e}")))
        .count();
    if logged != expected.len() {
        failures.push(format!("{logged} of {} exclusions logged", expected.len()));
    }

    let spec = SynthSpec {
        trials: 120,
        samples_per_trial: 50,
        ..SynthSpec::default()
    };
    let (ds, _) = generate_synthetic(&spec).unwrap();
    let (a, b, c) = split_dataset(&ds, (0.7, 0.15, 0.15)).unwrap();
    let sizes = (a.len(), b.len(), c.len());
    if sizes != (84, 18, 18) {
        failures.push(format!("split {sizes:?}"));
    }
    outcome(
        failures.is_empty(),
        format!("{} of {} trials excluded for rt > 700 ms and logged, 120-trial split {sizes:?}; failures {failures:?}", expected.len(), raw.len()),
    )
}

fn main() {
    let criteria: Vec<(&str, Option<u64>, fn() -> Outcome)> = vec![
        ("WPD perfect reconstruction", Some(5), wpd_reconstruction),
        ("gradient suite", Some(60), gradient_suite),
        ("mLR oracle", None, mlr_oracle),
        (
            "nonlinear ordering (MLP over mLR)",
            Some(300),
            nonlinear_ordering,
        ),
        (
            "sLORETA zero localization error",
            None,
            sloreta_localization,
        ),
        ("PCC and t-test oracles", None, pcc_and_ttest_oracles),
        ("filter spec", None, filter_spec),
        ("pipeline determinism", None, pipeline_determinism),
        ("gating and split", None, gating_and_split),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (name, limit, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let o = timed(limit.map(Duration::from_secs), check);
        println!(
            "{} {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
