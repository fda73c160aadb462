//! Trajectory CSV and SVG export.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::error::{shape, Error, Result};
use crate::mlr::AXES;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 240.0;
const PAD: f64 = 30.0;

fn write(path: PathBuf, text: &str) -> Result<PathBuf> {
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn polyline(
    xs: &[f64],
    ys: &[f64],
    x_range: (f64, f64),
    y_range: (f64, f64),
    colour: &str,
) -> String {
    let sx =
        |v: f64| PAD + (v - x_range.0) / (x_range.1 - x_range.0).max(1e-12) * (WIDTH - 2.0 * PAD);
    let sy = |v: f64| {
        HEIGHT - PAD - (v - y_range.0) / (y_range.1 - y_range.0).max(1e-12) * (HEIGHT - 2.0 * PAD)
    };
    let mut pts = String::new();
    for (x, y) in xs.iter().zip(ys) {
        let _ = write!(pts, "{:.2},{:.2} ", sx(*x), sy(*y));
    }
    format!(
        "<polyline fill=\"none\" stroke=\"{colour}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
        pts.trim_end()
    )
}

fn range(v: impl Iterator<Item = f64>) -> (f64, f64) {
    v.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
        (lo.min(x), hi.max(x))
    })
}

fn svg(title: &str, body: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{PAD}\" y=\"18\" font-family=\"sans-serif\" font-size=\"12\">{title}</text>\n\
         {body}\
         <text x=\"{}\" y=\"18\" font-family=\"sans-serif\" font-size=\"11\" fill=\"black\">true</text>\n\
         <text x=\"{}\" y=\"18\" font-family=\"sans-serif\" font-size=\"11\" fill=\"crimson\">predicted</text>\n\
         </svg>\n",
        WIDTH - 140.0,
        WIDTH - 100.0
    )
}

/// Writes `<stem>.csv`, `<stem>_{x,y,z}.svg` and `<stem>_xy.svg` for one
/// trial. `t` is in seconds from movement onset. Returns the written paths.
pub fn export_trajectories(
    dir: &Path,
    stem: &str,
    truth: &DMatrix<f64>,
    predicted: &DMatrix<f64>,
    sample_rate: u32,
    start: usize,
) -> Result<Vec<PathBuf>> {
    if truth.shape() != predicted.shape() || truth.nrows() != 3 {
        return Err(shape("trajectory export needs two 3 × T tracks"));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let n = truth.ncols();
    let times: Vec<f64> = (0..n)
        .map(|k| (start + k) as f64 / sample_rate as f64)
        .collect();

    let mut csv = String::from("t,x_true,y_true,z_true,x_pred,y_pred,z_pred,dx,dy,dz\n");
    for (k, t) in times.iter().enumerate() {
        let _ = write!(csv, "{t}");
        for a in 0..3 {
            let _ = write!(csv, ",{}", truth[(a, k)]);
        }
        for a in 0..3 {
            let _ = write!(csv, ",{}", predicted[(a, k)]);
        }
        for a in 0..3 {
            let _ = write!(csv, ",{}", predicted[(a, k)] - truth[(a, k)]);
        }
        csv.push('\n');
    }
    let mut paths = vec![write(dir.join(format!("{stem}.csv")), &csv)?];

    let t_range = range(times.iter().copied());
    for (a, axis) in AXES.iter().enumerate() {
        let tv: Vec<f64> = truth.row(a).iter().copied().collect();
        let pv: Vec<f64> = predicted.row(a).iter().copied().collect();
        let yr = range(tv.iter().chain(&pv).copied());
        let body = polyline(&times, &tv, t_range, yr, "black")
            + &polyline(&times, &pv, t_range, yr, "crimson");
        paths.push(write(
            dir.join(format!("{stem}_{axis}.svg")),
            &svg(&format!("{stem} {axis} position vs time (s)"), &body),
        )?);
    }

    // 3-D path drawn as its x-y projection.
    let row = |m: &DMatrix<f64>, a: usize| m.row(a).iter().copied().collect::<Vec<f64>>();
    let (tx, ty, px, py) = (
        row(truth, 0),
        row(truth, 1),
        row(predicted, 0),
        row(predicted, 1),
    );
    let xr = range(tx.iter().chain(&px).copied());
    let yr = range(ty.iter().chain(&py).copied());
    let body = polyline(&tx, &ty, xr, yr, "black") + &polyline(&px, &py, xr, yr, "crimson");
    paths.push(write(
        dir.join(format!("{stem}_xy.svg")),
        &svg(&format!("{stem} hand path, x-y projection"), &body),
    )?);
    Ok(paths)
}
