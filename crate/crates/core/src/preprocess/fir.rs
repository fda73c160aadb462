//! Windowed-sinc FIR design and zero-phase application.

use std::f64::consts::PI;

/// Hamming window of length `n`.
pub fn hamming(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    let m = (n - 1) as f64;
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / m).cos())
        .collect()
}

/// Ideal low-pass impulse response sample at offset `x` from the centre,
/// cutoff `fc` in cycles/sample.
fn sinc_lp(fc: f64, x: f64) -> f64 {
    if x == 0.0 {
        2.0 * fc
    } else {
        (2.0 * PI * fc * x).sin() / (PI * x)
    }
}

/// Hamming-windowed sinc low-pass with unit DC gain. `taps` must be odd.
pub fn lowpass(cutoff_hz: f64, rate: f64, taps: usize) -> Vec<f64> {
    let fc = cutoff_hz / rate;
    let half = (taps - 1) as f64 / 2.0;
    let mut h: Vec<f64> = hamming(taps)
        .iter()
        .enumerate()
        .map(|(i, w)| w * sinc_lp(fc, i as f64 - half))
        .collect();
    let dc: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= dc);
    h
}

/// Hamming-windowed sinc band-pass: the difference of two ideal low-pass
/// responses, windowed once. `taps` must be odd.
pub fn bandpass(low_hz: f64, high_hz: f64, rate: f64, taps: usize) -> Vec<f64> {
    let (fl, fh) = (low_hz / rate, high_hz / rate);
    let half = (taps - 1) as f64 / 2.0;
    hamming(taps)
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let x = i as f64 - half;
            w * (sinc_lp(fh, x) - sinc_lp(fl, x))
        })
        .collect()
}

/// Whole-sample mirror index: ... x2 x1 | x0 x1 x2 ... x_{n-1} | x_{n-2} ...
fn mirror(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut k = i.rem_euclid(period);
    if k >= n as isize {
        k = period - k;
    }
    k as usize
}

/// Convolves `x` with the symmetric odd-length kernel `h`, centred so the
/// output has no delay. Edges use mirror extension.
pub fn filter_zero_phase(x: &[f64], h: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let half = (h.len() / 2) as isize;
    let mut out = vec![0.0; n];
    for (t, o) in out.iter_mut().enumerate() {
        let start = t as isize - half;
        let mut acc = 0.0;
        if start >= 0 && (start as usize + h.len()) <= n {
            let s = start as usize;
            for (hk, xk) in h.iter().zip(&x[s..s + h.len()]) {
                acc += hk * xk;
            }
        } else {
            for (k, hk) in h.iter().enumerate() {
                acc += hk * x[mirror(start + k as isize, n)];
            }
        }
        *o = acc;
    }
    out
}

/// Magnitude response at `freq_hz`.
pub fn gain_at(h: &[f64], freq_hz: f64, rate: f64) -> f64 {
    let w = 2.0 * PI * freq_hz / rate;
    let (re, im) = h.iter().enumerate().fold((0.0, 0.0), |(re, im), (k, v)| {
        (re + v * (w * k as f64).cos(), im - v * (w * k as f64).sin())
    });
    re.hypot(im)
}
