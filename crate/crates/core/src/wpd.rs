//! Wavelet packet decomposition with periodic boundaries.
//!
//! Node (p, r) splits into (p+1, 2r) through the low-pass filter and
//! (p+1, 2r+1) through the high-pass filter, each followed by keeping the
//! even-indexed outputs:
//!
//! ```text
//! child[k] = Σ_j f[j] · x[(2k + j) mod n]
//! ```
//!
//! so for db1 the low-pass child pairs x[2k] with x[2k+1]. An odd-length node
//! is zero-padded by one sample before splitting; reconstruction trims it
//! again. With orthonormal filters every level preserves energy exactly.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_1_SQRT_2;

use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct WaveletFilterPair {
    pub name: String,
    pub lowpass: Vec<f64>,
    pub highpass: Vec<f64>,
}

impl WaveletFilterPair {
    /// Builds the quadrature-mirror pair g[j] = (−1)^j h[L−1−j].
    fn from_lowpass(name: &str, lowpass: Vec<f64>) -> Self {
        let n = lowpass.len();
        let highpass = (0..n)
            .map(|j| {
                let v = lowpass[n - 1 - j];
                if j % 2 == 0 {
                    v
                } else {
                    -v
                }
            })
            .collect();
        WaveletFilterPair {
            name: name.to_string(),
            lowpass,
            highpass,
        }
    }

    /// Haar: h = (1/√2, 1/√2), g = (1/√2, −1/√2).
    pub fn db1() -> Self {
        Self::from_lowpass("db1", vec![FRAC_1_SQRT_2, FRAC_1_SQRT_2])
    }

    pub fn db2() -> Self {
        let s3 = 3f64.sqrt();
        let d = 4.0 * 2f64.sqrt();
        Self::from_lowpass(
            "db2",
            vec![
                (1.0 + s3) / d,
                (3.0 + s3) / d,
                (3.0 - s3) / d,
                (1.0 - s3) / d,
            ],
        )
    }

    pub fn db4() -> Self {
        Self::from_lowpass(
            "db4",
            vec![
                0.23037781330889650086,
                0.71484657055291564709,
                0.63088076792985890788,
                -0.027983769416859854211,
                -0.18703481171909308408,
                0.030841381835560763627,
                0.032883011666885199735,
                -0.010597401785069032105,
            ],
        )
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "db1" | "haar" => Ok(Self::db1()),
            "db2" => Ok(Self::db2()),
            "db4" => Ok(Self::db4()),
            other => Err(Error::Config(format!("unknown wavelet `{other}`"))),
        }
    }

    /// Largest deviation from Σh² = Σg² = 1, ⟨h, g⟩ = 0 and orthogonality
    /// of even shifts.
    pub fn orthonormality_defect(&self) -> f64 {
        let h = &self.lowpass;
        let g = &self.highpass;
        let dot = |a: &[f64], b: &[f64], shift: usize| -> f64 {
            a.iter().skip(shift).zip(b.iter()).map(|(x, y)| x * y).sum()
        };
        let mut worst: f64 = 0.0;
        worst = worst.max((dot(h, h, 0) - 1.0).abs());
        worst = worst.max((dot(g, g, 0) - 1.0).abs());
        for s in (0..h.len()).step_by(2) {
            worst = worst.max(dot(h, g, s).abs()).max(dot(g, h, s).abs());
            if s > 0 {
                worst = worst.max(dot(h, h, s).abs()).max(dot(g, g, s).abs());
            }
        }
        worst
    }
}

fn analyze(x: &[f64], f: &[f64]) -> Vec<f64> {
    let n = x.len();
    debug_assert!(n % 2 == 0);
    (0..n / 2)
        .map(|k| {
            f.iter()
                .enumerate()
                .map(|(j, fj)| fj * x[(2 * k + j) % n])
                .sum()
        })
        .collect()
}

fn synthesize(approx: &[f64], detail: &[f64], w: &WaveletFilterPair) -> Vec<f64> {
    let n = 2 * approx.len();
    let mut x = vec![0.0; n];
    for k in 0..approx.len() {
        for j in 0..w.lowpass.len() {
            x[(2 * k + j) % n] += w.lowpass[j] * approx[k] + w.highpass[j] * detail[k];
        }
    }
    x
}

/// Full packet tree, nodes keyed by (level p, band r).
#[derive(Debug, Clone, PartialEq)]
pub struct WpdTree {
    pub depth: usize,
    pub wavelet: WaveletFilterPair,
    pub nodes: BTreeMap<(usize, usize), Vec<f64>>,
    root_len: usize,
}

impl WpdTree {
    pub fn node(&self, p: usize, r: usize) -> Option<&[f64]> {
        self.nodes.get(&(p, r)).map(Vec::as_slice)
    }

    /// Length of every node at level `p`.
    pub fn level_len(&self, p: usize) -> usize {
        (0..p).fold(self.root_len, |n, _| n.div_ceil(2))
    }

    pub fn leaf(&self, r: usize) -> Option<&[f64]> {
        self.node(self.depth, r)
    }

    pub fn leaf_mut(&mut self, r: usize) -> Option<&mut Vec<f64>> {
        self.nodes.get_mut(&(self.depth, r))
    }
}

pub fn max_depth(len: usize) -> usize {
    if len == 0 {
        0
    } else {
        len.ilog2() as usize
    }
}

pub fn decompose(signal: &[f64], depth: usize, wavelet: &WaveletFilterPair) -> Result<WpdTree> {
    if signal.is_empty() {
        return Err(invalid("cannot decompose an empty signal"));
    }
    if depth > max_depth(signal.len()) {
        return Err(invalid(format!(
            "depth {depth} exceeds log2 of length {}",
            signal.len()
        )));
    }
    let mut nodes = BTreeMap::new();
    nodes.insert((0, 0), signal.to_vec());
    for p in 0..depth {
        for r in 0..(1usize << p) {
            let mut parent = nodes[&(p, r)].clone();
            if parent.len() % 2 == 1 {
                parent.push(0.0);
            }
            nodes.insert((p + 1, 2 * r), analyze(&parent, &wavelet.lowpass));
            nodes.insert((p + 1, 2 * r + 1), analyze(&parent, &wavelet.highpass));
        }
    }
    Ok(WpdTree {
        depth,
        wavelet: wavelet.clone(),
        nodes,
        root_len: signal.len(),
    })
}

/// Inverse transform from the leaves.
pub fn reconstruct(tree: &WpdTree) -> Result<Vec<f64>> {
    let leaves = 1usize << tree.depth;
    let mut level: Vec<Vec<f64>> = (0..leaves)
        .map(|r| {
            tree.leaf(r)
                .map(<[f64]>::to_vec)
                .ok_or_else(|| invalid(format!("missing node ({}, {r})", tree.depth)))
        })
        .collect::<Result<_>>()?;
    let want = tree.level_len(tree.depth);
    if level.iter().any(|v| v.len() != want) {
        return Err(invalid("leaf lengths are inconsistent"));
    }
    for p in (0..tree.depth).rev() {
        let parent_len = tree.level_len(p);
        level = level
            .chunks(2)
            .map(|pair| {
                let mut x = synthesize(&pair[0], &pair[1], &tree.wavelet);
                x.truncate(parent_len);
                x
            })
            .collect();
    }
    Ok(level.pop().unwrap_or_default())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LeafOrder {
    /// Band index r ascending.
    #[default]
    Natural,
    /// Ascending frequency: position b holds natural node b ^ (b >> 1).
    Frequency,
}

impl LeafOrder {
    pub fn natural_index(self, position: usize) -> usize {
        match self {
            LeafOrder::Natural => position,
            LeafOrder::Frequency => position ^ (position >> 1),
        }
    }
}

/// Leaf coefficients of one channel concatenated band after band.
pub fn leaf_vector(
    signal: &[f64],
    depth: usize,
    wavelet: &WaveletFilterPair,
    order: LeafOrder,
) -> Result<Vec<f64>> {
    let tree = decompose(signal, depth, wavelet)?;
    let mut out = Vec::with_capacity(signal.len());
    for b in 0..(1usize << depth) {
        out.extend_from_slice(tree.leaf(order.natural_index(b)).unwrap_or(&[]));
    }
    Ok(out)
}

/// Leaf coefficients of every window: rows are (channel, band) pairs,
/// channel-major; columns are the coefficient frames of successive windows.
#[derive(Debug, Clone, PartialEq)]
pub struct WpdFeatures {
    pub depth: usize,
    pub channels: usize,
    pub matrix: DMatrix<f64>,
}

pub fn leaf_features(
    windows: &[DMatrix<f64>],
    depth: usize,
    wavelet: &WaveletFilterPair,
    order: LeafOrder,
) -> Result<WpdFeatures> {
    let first = windows.first().ok_or_else(|| invalid("no windows given"))?;
    let (channels, w) = first.shape();
    let bands = 1usize << depth;
    if w % bands != 0 {
        return Err(invalid(format!(
            "window length {w} is not divisible by 2^{depth}"
        )));
    }
    if windows.iter().any(|m| m.shape() != (channels, w)) {
        return Err(invalid("windows differ in shape"));
    }
    let frames = w / bands;
    let mut matrix = DMatrix::zeros(channels * bands, frames * windows.len());
    for (wi, win) in windows.iter().enumerate() {
        for c in 0..channels {
            let x: Vec<f64> = win.row(c).iter().copied().collect();
            let v = leaf_vector(&x, depth, wavelet, order)?;
            for b in 0..bands {
                for k in 0..frames {
                    matrix[(c * bands + b, wi * frames + k)] = v[b * frames + k];
                }
            }
        }
    }
    Ok(WpdFeatures {
        depth,
        channels,
        matrix,
    })
}
