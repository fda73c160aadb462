//! sLORETA source imaging on a supplied lead field, plus the channel ranking
//! and activation latencies derived from it.
//!
//! Lead fields are read from two files. `leadfield.csv`:
//!
//! ```text
//! sensors=32 dipoles=50
//! Fp1,Fp2,...
//! <32 rows of 50 gains>
//! ```
//!
//! and `positions.csv`, one dipole per row with an optional region label,
//! followed by an optional sensor section:
//!
//! ```text
//! x,y,z,region
//! 0.012,-0.031,0.055,motor
//! # sensors
//! name,x,y,z
//! C3,-0.064,0,0.062
//! ```
//!
//! Positions are in metres. Sensors missing from the file fall back to the
//! built-in spherical 10-20 layout.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::dataio::MONTAGE_32;
use crate::error::{invalid, shape, Error, Result};

pub const HEAD_RADIUS_M: f64 = 0.09;
const CONDUCTIVITY: f64 = 0.33;
pub const DEFAULT_ALPHA_SCALE: f64 = 1e-4;
pub const DEFAULT_THRESHOLD_FRAC: f64 = 0.5;
pub const UNLABELLED: &str = "unlabelled";

/// Polar angle from the vertex and azimuth from the right ear towards the
/// nose, in degrees.
const TEN_TWENTY: [(&str, f64, f64); 32] = [
    ("Fp1", 92.0, 108.0),
    ("Fp2", 92.0, 72.0),
    ("F7", 92.0, 144.0),
    ("F3", 60.0, 129.0),
    ("Fz", 46.0, 90.0),
    ("F4", 60.0, 51.0),
    ("F8", 92.0, 36.0),
    ("FC5", 69.0, 159.0),
    ("FC1", 32.0, 135.0),
    ("FC2", 32.0, 45.0),
    ("FC6", 69.0, 21.0),
    ("T7", 92.0, 180.0),
    ("C3", 46.0, 180.0),
    ("Cz", 0.0, 0.0),
    ("C4", 46.0, 0.0),
    ("T8", 92.0, 0.0),
    ("TP9", 115.0, -162.0),
    ("CP5", 69.0, -159.0),
    ("CP1", 32.0, -135.0),
    ("CP2", 32.0, -45.0),
    ("CP6", 69.0, -21.0),
    ("TP10", 115.0, -18.0),
    ("P7", 92.0, -144.0),
    ("P3", 60.0, -129.0),
    ("Pz", 46.0, -90.0),
    ("P4", 60.0, -51.0),
    ("P8", 92.0, -36.0),
    ("PO9", 115.0, -126.0),
    ("O1", 92.0, -108.0),
    ("Oz", 92.0, -90.0),
    ("O2", 92.0, -72.0),
    ("PO10", 115.0, -54.0),
];

/// Scalp position of a standard electrode on a sphere of `radius` metres.
pub fn electrode_position(name: &str, radius: f64) -> Option<[f64; 3]> {
    TEN_TWENTY
        .iter()
        .find(|e| e.0 == name)
        .map(|&(_, theta, phi)| {
            let (t, p) = (theta.to_radians(), phi.to_radians());
            [
                radius * t.sin() * p.cos(),
                radius * t.sin() * p.sin(),
                radius * t.cos(),
            ]
        })
}

/// Lobe implied by an electrode name.
pub fn region_of_electrode(name: &str) -> &'static str {
    let n = name.to_ascii_uppercase();
    if n.starts_with("FC") || n.starts_with('C') && !n.starts_with("CP") {
        "motor"
    } else if n.starts_with("FP") || n.starts_with('F') {
        "frontal"
    } else if n.starts_with('T') {
        "temporal"
    } else if n.starts_with("PO") || n.starts_with('O') {
        "occipital"
    } else {
        "parietal"
    }
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum()
}

/// Fixed-orientation gain matrix with geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct LeadField {
    /// sensors × dipoles.
    pub gain: DMatrix<f64>,
    pub dipole_positions: Vec<[f64; 3]>,
    /// Per-dipole region, if known.
    pub regions: Vec<Option<String>>,
    pub sensor_names: Vec<String>,
    pub sensor_positions: Vec<[f64; 3]>,
}

impl LeadField {
    pub fn sensors(&self) -> usize {
        self.gain.nrows()
    }

    pub fn dipoles(&self) -> usize {
        self.gain.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let (n, m) = self.gain.shape();
        if n < 2 {
            return Err(invalid("lead field needs at least 2 sensors"));
        }
        if self.sensor_names.len() != n || self.sensor_positions.len() != n {
            return Err(shape(format!(
                "lead field has {n} sensors but {} names",
                self.sensor_names.len()
            )));
        }
        if self.dipole_positions.len() != m || self.regions.len() != m {
            return Err(shape(format!(
                "lead field has {m} dipoles but {} positions",
                self.dipole_positions.len()
            )));
        }
        if self.gain.iter().any(|v| !v.is_finite()) {
            return Err(invalid("lead field contains non-finite gains"));
        }
        Ok(())
    }

    /// Region labels with missing ones filled in.
    pub fn region_labels(&self) -> Vec<String> {
        self.regions
            .iter()
            .map(|r| r.clone().unwrap_or_else(|| UNLABELLED.to_string()))
            .collect()
    }

    /// Index of the sensor closest to each dipole.
    pub fn nearest_sensor(&self) -> Vec<usize> {
        self.dipole_positions
            .iter()
            .map(|d| {
                let mut best = 0;
                for (s, p) in self.sensor_positions.iter().enumerate() {
                    if dist2(d, p) < dist2(d, &self.sensor_positions[best]) {
                        best = s;
                    }
                }
                best
            })
            .collect()
    }

    /// Sensor data produced by a single dipole with the given waveform.
    pub fn project(&self, dipole: usize, waveform: &[f64]) -> DMatrix<f64> {
        let col = self.gain.column(dipole);
        DMatrix::from_fn(self.sensors(), waveform.len(), |s, t| col[s] * waveform[t])
    }
}

/// Potential at `sensor` of a unit current dipole at `pos` with moment
/// direction `dir`, in an infinite homogeneous medium.
fn dipole_potential(sensor: &[f64; 3], pos: &[f64; 3], dir: &[f64; 3]) -> f64 {
    let d = [sensor[0] - pos[0], sensor[1] - pos[1], sensor[2] - pos[2]];
    let r = dist2(sensor, pos).sqrt();
    (dir[0] * d[0] + dir[1] * d[1] + dir[2] * d[2]) / (4.0 * PI * CONDUCTIVITY * r.powi(3))
}

/// A deterministic lead field for the given montage: `dipoles` radially
/// oriented sources spread over the upper part of a sphere at 0.8 of the
/// head radius, labelled by the lobe of their nearest electrode.
pub fn synthetic_leadfield(montage: &[String], dipoles: usize) -> Result<LeadField> {
    if dipoles == 0 {
        return Err(invalid("synthetic lead field needs at least one dipole"));
    }
    let sensor_positions = montage
        .iter()
        .map(|n| {
            electrode_position(n, HEAD_RADIUS_M)
                .ok_or_else(|| invalid(format!("no standard position for electrode `{n}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    // Fibonacci lattice over the cap z > -0.3 of the unit sphere.
    let golden = PI * (3.0 - 5f64.sqrt());
    let depth = 0.8 * HEAD_RADIUS_M;
    let mut dipole_positions = Vec::with_capacity(dipoles);
    let mut dirs = Vec::with_capacity(dipoles);
    for i in 0..dipoles {
        let z = 1.0 - 1.3 * (i as f64 + 0.5) / dipoles as f64;
        let rho = (1.0 - z * z).sqrt();
        let a = golden * i as f64;
        let u = [rho * a.cos(), rho * a.sin(), z];
        dipole_positions.push([depth * u[0], depth * u[1], depth * u[2]]);
        dirs.push(u);
    }
    let gain = DMatrix::from_fn(montage.len(), dipoles, |s, j| {
        dipole_potential(&sensor_positions[s], &dipole_positions[j], &dirs[j])
    });
    let mut lf = LeadField {
        gain,
        dipole_positions,
        regions: vec![None; dipoles],
        sensor_names: montage.to_vec(),
        sensor_positions,
    };
    let nearest = lf.nearest_sensor();
    lf.regions = nearest
        .iter()
        .map(|&s| Some(region_of_electrode(&lf.sensor_names[s]).to_string()))
        .collect();
    lf.validate()?;
    Ok(lf)
}

/// The synthetic lead field over the 32-electrode montage.
pub fn default_leadfield(dipoles: usize) -> Result<LeadField> {
    let montage: Vec<String> = MONTAGE_32.iter().map(|s| s.to_string()).collect();
    synthetic_leadfield(&montage, dipoles)
}

pub fn format_leadfield(lf: &LeadField) -> (String, String) {
    let mut gain = format!("sensors={} dipoles={}\n", lf.sensors(), lf.dipoles());
    gain.push_str(&lf.sensor_names.join(","));
    gain.push('\n');
    for s in 0..lf.sensors() {
        let row: Vec<String> = lf.gain.row(s).iter().map(|v| v.to_string()).collect();
        gain.push_str(&row.join(","));
        gain.push('\n');
    }
    let mut pos = String::from("x,y,z,region\n");
    for (p, r) in lf.dipole_positions.iter().zip(&lf.regions) {
        let _ = write!(pos, "{},{},{}", p[0], p[1], p[2]);
        if let Some(r) = r {
            let _ = write!(pos, ",{r}");
        }
        pos.push('\n');
    }
    pos.push_str("# sensors\nname,x,y,z\n");
    for (n, p) in lf.sensor_names.iter().zip(&lf.sensor_positions) {
        let _ = writeln!(pos, "{n},{},{},{}", p[0], p[1], p[2]);
    }
    (gain, pos)
}

pub fn write_leadfield(lf: &LeadField, gain_path: &Path, positions_path: &Path) -> Result<()> {
    let (gain, pos) = format_leadfield(lf);
    std::fs::write(gain_path, gain).map_err(|e| Error::io(gain_path, e))?;
    std::fs::write(positions_path, pos).map_err(|e| Error::io(positions_path, e))
}

fn parse_header(path: &Path, line: &str) -> Result<(usize, usize)> {
    let mut n = None;
    let mut m = None;
    for part in line.split_whitespace() {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| Error::parse(path, 1, format!("bad header field `{part}`")))?;
        let v: usize = v
            .parse()
            .map_err(|_| Error::parse(path, 1, format!("bad count `{v}`")))?;
        match k {
            "sensors" => n = Some(v),
            "dipoles" => m = Some(v),
            _ => return Err(Error::parse(path, 1, format!("unknown header key `{k}`"))),
        }
    }
    match (n, m) {
        (Some(n), Some(m)) => Ok((n, m)),
        _ => Err(Error::parse(path, 1, "header needs sensors= and dipoles=")),
    }
}

fn parse_floats(path: &Path, line_no: usize, fields: &[&str]) -> Result<Vec<f64>> {
    fields
        .iter()
        .map(|f| {
            f.trim()
                .parse::<f64>()
                .map_err(|_| Error::parse(path, line_no, format!("bad number `{f}`")))
        })
        .collect()
}

pub fn parse_leadfield(
    gain_path: &Path,
    gain_text: &str,
    positions_path: &Path,
    positions_text: &str,
) -> Result<LeadField> {
    let mut lines = gain_text.lines();
    let (n, m) = parse_header(gain_path, lines.next().unwrap_or(""))?;
    let names: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::parse(gain_path, 2, "missing sensor names"))?
        .split(',')
        .map(|s| s.trim().to_string())
        .collect();
    if names.len() != n {
        return Err(Error::parse(
            gain_path,
            2,
            format!("expected {n} sensor names, got {}", names.len()),
        ));
    }
    let mut gain = DMatrix::zeros(n, m);
    let mut rows = 0;
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = i + 3;
        if rows == n {
            return Err(Error::parse(
                gain_path,
                line_no,
                "more gain rows than sensors",
            ));
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != m {
            return Err(Error::parse(
                gain_path,
                line_no,
                format!("expected {m} gains, got {}", fields.len()),
            ));
        }
        for (j, v) in parse_floats(gain_path, line_no, &fields)?
            .into_iter()
            .enumerate()
        {
            gain[(rows, j)] = v;
        }
        rows += 1;
    }
    if rows != n {
        return Err(Error::parse(
            gain_path,
            rows + 3,
            format!("expected {n} gain rows, got {rows}"),
        ));
    }

    let mut dipole_positions = Vec::with_capacity(m);
    let mut regions = Vec::with_capacity(m);
    let mut sensor_pos: BTreeMap<String, [f64; 3]> = BTreeMap::new();
    let mut in_sensors = false;
    for (i, line) in positions_text.lines().enumerate() {
        let line_no = i + 1;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        if t.starts_with('#') {
            in_sensors |= t.trim_start_matches('#').trim() == "sensors";
            continue;
        }
        let fields: Vec<&str> = t.split(',').map(str::trim).collect();
        if fields[0] == "x" || fields[0] == "name" {
            continue;
        }
        if in_sensors {
            if fields.len() != 4 {
                return Err(Error::parse(
                    positions_path,
                    line_no,
                    "sensor rows are name,x,y,z",
                ));
            }
            let v = parse_floats(positions_path, line_no, &fields[1..])?;
            sensor_pos.insert(fields[0].to_string(), [v[0], v[1], v[2]]);
        } else {
            if !(3..=4).contains(&fields.len()) {
                return Err(Error::parse(
                    positions_path,
                    line_no,
                    "dipole rows are x,y,z[,region]",
                ));
            }
            let v = parse_floats(positions_path, line_no, &fields[..3])?;
            dipole_positions.push([v[0], v[1], v[2]]);
            regions.push(
                fields
                    .get(3)
                    .filter(|r| !r.is_empty())
                    .map(|r| r.to_string()),
            );
        }
    }
    if dipole_positions.len() != m {
        return Err(Error::parse(
            positions_path,
            positions_text.lines().count(),
            format!(
                "expected {m} dipole positions, got {}",
                dipole_positions.len()
            ),
        ));
    }
    let sensor_positions = names
        .iter()
        .map(|nm| {
            sensor_pos
                .get(nm)
                .copied()
                .or_else(|| electrode_position(nm, HEAD_RADIUS_M))
                .ok_or_else(|| invalid(format!("no position for sensor `{nm}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    let lf = LeadField {
        gain,
        dipole_positions,
        regions,
        sensor_names: names,
        sensor_positions,
    };
    lf.validate()?;
    Ok(lf)
}

pub fn read_leadfield(gain_path: &Path, positions_path: &Path) -> Result<LeadField> {
    let g = std::fs::read_to_string(gain_path).map_err(|e| Error::io(gain_path, e))?;
    let p = std::fs::read_to_string(positions_path).map_err(|e| Error::io(positions_path, e))?;
    parse_leadfield(gain_path, &g, positions_path, &p)
}

/// Standardized current-density power, dipoles × samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceMap {
    pub power: DMatrix<f64>,
}

impl SourceMap {
    /// Dipole with the largest power at sample `t`; the lowest index wins ties.
    pub fn argmax(&self, t: usize) -> usize {
        let col = self.power.column(t);
        let mut best = 0;
        for (j, v) in col.iter().enumerate() {
            if *v > col[best] {
                best = j;
            }
        }
        best
    }
}

fn centering(n: usize) -> DMatrix<f64> {
    DMatrix::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64)
}

/// Regularization used when none is configured: a fixed fraction of the mean
/// diagonal of the average-referenced gain product.
pub fn default_alpha(lf: &LeadField) -> f64 {
    let k = centering(lf.sensors()) * &lf.gain;
    DEFAULT_ALPHA_SCALE * (&k * k.transpose()).trace() / lf.sensors() as f64
}

/// Mean diagonal of the average-referenced gain product, the natural unit for
/// `alpha`.
pub fn trace_scale(lf: &LeadField) -> f64 {
    default_alpha(lf) / DEFAULT_ALPHA_SCALE
}

/// Moore-Penrose inverse of a symmetric matrix via its eigendecomposition.
fn pinv_symmetric(a: DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let eig = SymmetricEigen::new(a);
    let top = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = top * n as f64 * f64::EPSILON * 10.0;
    let inv = DVector::from_iterator(
        n,
        eig.eigenvalues
            .iter()
            .map(|&v| if v.abs() > tol { 1.0 / v } else { 0.0 }),
    );
    &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose()
}

/// sLORETA: minimum-norm estimate under the average-reference constraint,
/// each dipole standardized by its resolution-matrix diagonal, squared.
pub fn sloreta_inverse(lf: &LeadField, data: &DMatrix<f64>, alpha: f64) -> Result<SourceMap> {
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(invalid(format!(
            "alpha must be a nonnegative number, got {alpha}"
        )));
    }
    lf.validate()?;
    if data.nrows() != lf.sensors() {
        return Err(shape(format!(
            "data has {} sensors, lead field has {}",
            data.nrows(),
            lf.sensors()
        )));
    }
    let n = lf.sensors();
    let h = centering(n);
    let k = &h * &lf.gain;
    let m = pinv_symmetric(&k * k.transpose() + &h * alpha);
    // Rows of the imaging operator K' M.
    let operator = k.transpose() * &m;
    let mut resolution = Vec::with_capacity(lf.dipoles());
    let top = (&k * k.transpose()).trace().max(f64::MIN_POSITIVE);
    for j in 0..lf.dipoles() {
        let r = operator.row(j).dot(&k.column(j).transpose());
        if !(r > top * 1e-14) {
            return Err(Error::Numeric(format!(
                "dipole {j} is invisible to the sensor array (resolution {r:e})"
            )));
        }
        resolution.push(r);
    }
    let mut power = operator * (&h * data);
    for (j, mut row) in power.row_iter_mut().enumerate() {
        let r = resolution[j];
        row.apply(|v| *v = *v * *v / r);
    }
    Ok(SourceMap { power })
}

fn check_window(map: &SourceMap, window: &Range<usize>) -> Result<()> {
    if window.start >= window.end {
        return Err(invalid("empty ranking window"));
    }
    if window.end > map.power.ncols() {
        return Err(invalid(format!(
            "window {}..{} exceeds {} samples",
            window.start,
            window.end,
            map.power.ncols()
        )));
    }
    Ok(())
}

/// Accumulated windowed mean power per sensor, in sensor order.
pub fn sensor_power(map: &SourceMap, lf: &LeadField, window: Range<usize>) -> Result<Vec<f64>> {
    check_window(map, &window)?;
    if map.power.nrows() != lf.dipoles() {
        return Err(shape("source map and lead field disagree on dipole count"));
    }
    let width = (window.end - window.start) as f64;
    let mut acc = vec![0.0; lf.sensors()];
    for (j, s) in lf.nearest_sensor().into_iter().enumerate() {
        let mean = map
            .power
            .view((j, window.start), (1, window.end - window.start))
            .sum()
            / width;
        acc[s] += mean;
    }
    Ok(acc)
}

/// Sensors ordered by attributed power, strongest first; equal power keeps
/// montage order.
pub fn rank_channels(
    map: &SourceMap,
    lf: &LeadField,
    window: Range<usize>,
    k: usize,
) -> Result<Vec<String>> {
    if k > lf.sensors() {
        return Err(invalid(format!("k = {k} exceeds {} sensors", lf.sensors())));
    }
    let acc = sensor_power(map, lf, window)?;
    let mut order: Vec<usize> = (0..acc.len()).collect();
    order.sort_by(|&a, &b| acc[b].total_cmp(&acc[a]));
    Ok(order
        .into_iter()
        .take(k)
        .map(|s| lf.sensor_names[s].clone())
        .collect())
}

/// First threshold crossing of each region's mean power.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTimeline {
    pub region_labels: Vec<String>,
    pub first_crossing: BTreeMap<String, Option<usize>>,
}

impl ActivationTimeline {
    pub fn to_csv(&self, sample_rate: u32) -> String {
        let mut out = String::from("region,first_sample,latency_ms\n");
        for (r, c) in &self.first_crossing {
            match c {
                Some(s) => {
                    let _ = writeln!(out, "{r},{s},{}", *s as f64 * 1000.0 / sample_rate as f64);
                }
                None => {
                    let _ = writeln!(out, "{r},none,none");
                }
            }
        }
        out
    }
}

pub fn detect_latency(
    map: &SourceMap,
    labels: &[String],
    threshold_frac: f64,
) -> Result<ActivationTimeline> {
    if !(threshold_frac > 0.0 && threshold_frac < 1.0) {
        return Err(invalid(format!(
            "threshold fraction {threshold_frac} outside (0, 1)"
        )));
    }
    if labels.len() != map.power.nrows() {
        return Err(shape(format!(
            "{} labels for {} dipoles",
            labels.len(),
            map.power.nrows()
        )));
    }
    let mut members: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (j, l) in labels.iter().enumerate() {
        members.entry(l.as_str()).or_default().push(j);
    }
    let mut first_crossing = BTreeMap::new();
    for (region, rows) in members {
        let mean: Vec<f64> = (0..map.power.ncols())
            .map(|t| rows.iter().map(|&j| map.power[(j, t)]).sum::<f64>() / rows.len() as f64)
            .collect();
        let peak = mean.iter().cloned().fold(0.0, f64::max);
        let crossing = if peak > 0.0 {
            mean.iter().position(|&v| v > threshold_frac * peak)
        } else {
            None
        };
        first_crossing.insert(region.to_string(), crossing);
    }
    Ok(ActivationTimeline {
        region_labels: labels.to_vec(),
        first_crossing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lf50() -> LeadField {
        default_leadfield(50).unwrap()
    }

    fn waveform(n: usize) -> Vec<f64> {
        (0..n).map(|t| (0.3 * t as f64).sin() + 0.2).collect()
    }

    #[test]
    fn zero_data_gives_zero_power() {
        let lf = lf50();
        let map = sloreta_inverse(&lf, &DMatrix::zeros(32, 5), default_alpha(&lf)).unwrap();
        assert!(map.power.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_dipoles_localize_exactly() {
        let lf = lf50();
        let alpha = 1e-10 * trace_scale(&lf);
        let w = waveform(12);
        for j in 0..lf.dipoles() {
            let map = sloreta_inverse(&lf, &lf.project(j, &w), alpha).unwrap();
            for t in 0..w.len() {
                assert_eq!(map.argmax(t), j, "dipole {j} sample {t}");
            }
        }
    }

    #[test]
    fn power_scales_quadratically() {
        let lf = lf50();
        let a = default_alpha(&lf);
        let data = lf.project(7, &waveform(6)) + lf.project(30, &waveform(6)).map(|v| 0.5 * v);
        let p1 = sloreta_inverse(&lf, &data, a).unwrap();
        let p5 = sloreta_inverse(&lf, &data.map(|v| 5.0 * v), a).unwrap();
        for (x, y) in p1.power.iter().zip(p5.power.iter()) {
            assert!((y - 25.0 * x).abs() <= 1e-9 * y.abs().max(1e-300));
        }
        for t in 0..6 {
            assert_eq!(p1.argmax(t), p5.argmax(t));
        }
    }

    #[test]
    fn inverse_errors() {
        let lf = lf50();
        assert!(sloreta_inverse(&lf, &DMatrix::zeros(32, 3), -1.0).is_err());
        assert!(matches!(
            sloreta_inverse(&lf, &DMatrix::zeros(31, 3), 0.0),
            Err(Error::Shape(_))
        ));
        let mut dead = lf.clone();
        dead.gain.column_mut(4).fill(0.0);
        assert!(matches!(
            sloreta_inverse(&dead, &DMatrix::zeros(32, 3), 0.0),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn dipole_near_c3_ranks_c3_first() {
        let montage: Vec<String> = MONTAGE_32.iter().map(|s| s.to_string()).collect();
        let mut lf = synthetic_leadfield(&montage, 50).unwrap();
        let c3 = electrode_position("C3", 0.8 * HEAD_RADIUS_M).unwrap();
        // Move dipole 0 directly under C3 and recompute its gains.
        let u = [c3[0] / 0.072, c3[1] / 0.072, c3[2] / 0.072];
        lf.dipole_positions[0] = c3;
        for s in 0..lf.sensors() {
            lf.gain[(s, 0)] = dipole_potential(&lf.sensor_positions[s], &c3, &u);
        }
        let map =
            sloreta_inverse(&lf, &lf.project(0, &waveform(10)), 1e-10 * trace_scale(&lf)).unwrap();
        let ranked = rank_channels(&map, &lf, 0..10, 32).unwrap();
        assert_eq!(ranked[0], "C3");
        let mut sorted = ranked.clone();
        sorted.sort();
        let mut all = montage.clone();
        all.sort();
        assert_eq!(sorted, all);
    }

    #[test]
    fn ties_keep_montage_order() {
        let lf = lf50();
        let map = SourceMap {
            power: DMatrix::zeros(50, 4),
        };
        let ranked = rank_channels(&map, &lf, 0..4, 18).unwrap();
        assert_eq!(
            ranked,
            MONTAGE_32[..18]
                .iter()
                .map(|s| s.to_string())
                .collect::<Vec<_>>()
        );
        assert!(rank_channels(&map, &lf, 2..2, 3).is_err());
        assert!(rank_channels(&map, &lf, 0..5, 3).is_err());
        assert!(rank_channels(&map, &lf, 0..4, 33).is_err());
    }

    #[test]
    fn step_and_silent_regions() {
        let power = DMatrix::from_fn(3, 60, |j, t| if j < 2 && t >= 37 { 1.0 } else { 0.0 });
        let labels: Vec<String> = ["motor", "motor", "occipital"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let tl = detect_latency(&SourceMap { power }, &labels, 0.5).unwrap();
        assert_eq!(tl.first_crossing["motor"], Some(37));
        assert_eq!(tl.first_crossing["occipital"], None);
        assert!(tl.to_csv(100).contains("motor,37,370"));
        let empty = SourceMap {
            power: DMatrix::zeros(3, 2),
        };
        assert!(detect_latency(&empty, &labels, 1.0).is_err());
        assert!(detect_latency(&empty, &labels[..2], 0.5).is_err());
    }

    #[test]
    fn occipital_precedes_motor() {
        let lf = lf50();
        let labels = lf.region_labels();
        let pick = |name: &str| labels.iter().position(|l| l == name).unwrap();
        let (occ, mot) = (pick("occipital"), pick("motor"));
        // 100 Hz: occipital burst at 100 ms, motor burst at 370 ms.
        let burst = |start: usize| -> Vec<f64> {
            (0..80)
                .map(|t| {
                    if (start..start + 15).contains(&t) {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect()
        };
        let data = lf.project(occ, &burst(10)) + lf.project(mot, &burst(37));
        let map = sloreta_inverse(&lf, &data, 1e-10 * trace_scale(&lf)).unwrap();
        let tl = detect_latency(&map, &labels, DEFAULT_THRESHOLD_FRAC).unwrap();
        let (o, m) = (
            tl.first_crossing["occipital"].unwrap(),
            tl.first_crossing["motor"].unwrap(),
        );
        assert!(o < m);
        let gap_ms = (m - o) as f64 * 10.0;
        assert!((gap_ms - 270.0).abs() <= 10.0, "gap {gap_ms}");
    }

    #[test]
    fn file_round_trip() {
        let lf = default_leadfield(12).unwrap();
        let (g, p) = format_leadfield(&lf);
        let back = parse_leadfield(Path::new("g.csv"), &g, Path::new("p.csv"), &p).unwrap();
        assert_eq!(back, lf);
        let no_sensors: String = p.split("# sensors").next().unwrap().to_string();
        let back =
            parse_leadfield(Path::new("g.csv"), &g, Path::new("p.csv"), &no_sensors).unwrap();
        assert_eq!(back.gain, lf.gain);
        let bad = g.replacen("sensors=32", "sensors=31", 1);
        assert!(matches!(
            parse_leadfield(Path::new("g.csv"), &bad, Path::new("p.csv"), &p),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn regions_cover_lobes() {
        let lf = lf50();
        let labels: std::collections::BTreeSet<String> = lf.region_labels().into_iter().collect();
        for r in ["frontal", "motor", "parietal", "occipital"] {
            assert!(labels.contains(r), "{r} missing");
        }
        assert_eq!(region_of_electrode("CP1"), "parietal");
        assert_eq!(region_of_electrode("FC5"), "motor");
        assert_eq!(region_of_electrode("PO9"), "occipital");
    }
}
