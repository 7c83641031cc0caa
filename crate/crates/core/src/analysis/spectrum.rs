use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::detection::TrajectoryRecord;
use crate::error::{Error, Result};

/// Smallest window accepted by [`periodogram`].
pub const MIN_WINDOW_SAMPLES: usize = 256;

/// Bins closer than this are merged by [`find_peaks`].
pub const MERGE_BINS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    #[default]
    Rectangular,
    Hann,
}

/// One-sided power spectral density of the real photocurrent.
///
/// `power[k] = c_k |dt * X_k|^2 / span` with `c_k = 2` for interior bins and
/// `1` at DC and Nyquist, so `sum(power) * df` equals the mean square of the
/// windowed samples. A Hann window is rescaled by `1 / mean(w^2)` to keep the
/// white-noise level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Periodogram {
    /// Detuning from the cavity frequency (Hz): lab frequency minus `delta_het / 2 pi`.
    pub freqs: Vec<f64>,
    pub power: Vec<f64>,
    pub window: Window,
    pub span_s: f64,
}

impl Periodogram {
    pub fn df(&self) -> f64 {
        1.0 / self.span_s
    }

    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    /// Bin whose frequency is closest to `f`.
    pub fn bin_of(&self, f: f64) -> usize {
        let k = ((f - self.freqs[0]) / self.df()).round();
        k.clamp(0.0, (self.len() - 1) as f64) as usize
    }
}

/// Periodogram of the photocurrent over `(t_start, t_end]`. Without explicit
/// bounds the detection-active stages are used.
pub fn periodogram(
    record: &TrajectoryRecord,
    window: Window,
    t_start: Option<f64>,
    t_end: Option<f64>,
) -> Result<Periodogram> {
    let det = record.meta.detection_window();
    let t0 = t_start.or(det.map(|d| d.0)).unwrap_or(0.0);
    let t1 = t_end
        .or(det.map(|d| d.1))
        .unwrap_or_else(|| record.times.last().copied().unwrap_or(0.0));
    let last = record.times.last().copied().unwrap_or(0.0);
    let first = record.times.first().map_or(0.0, |t| t - record.meta.sample_dt_s);
    let slack = 1e-9 * record.meta.sample_dt_s;
    if t0 < first - slack || t1 > last + slack || t1 <= t0 {
        return Err(Error::InsufficientData(format!(
            "window [{t0}, {t1}] s lies outside the record [{first}, {last}] s"
        )));
    }
    let range = record.sample_range(t0, t1);
    periodogram_of(
        &record.current[range],
        record.meta.sample_dt_s,
        record.meta.delta_het_hz,
        window,
    )
}

/// Periodogram of uniformly spaced real samples.
pub fn periodogram_of(samples: &[f64], sample_dt: f64, delta_het_hz: f64, window: Window) -> Result<Periodogram> {
    let n = samples.len();
    if n < MIN_WINDOW_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "{n} samples in window, need at least {MIN_WINDOW_SAMPLES}"
        )));
    }
    let weights: Vec<f64> = match window {
        Window::Rectangular => vec![1.0; n],
        Window::Hann => {
            let w: Vec<f64> = (0..n).map(|k| 0.5 - 0.5 * (2.0 * PI * k as f64 / n as f64).cos()).collect();
            let ms = w.iter().map(|x| x * x).sum::<f64>() / n as f64;
            w.into_iter().map(|x| x / ms.sqrt()).collect()
        }
    };
    let mut buf: Vec<Complex<f64>> = samples
        .iter()
        .zip(&weights)
        .map(|(x, w)| Complex::new(x * w, 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);

    let span = n as f64 * sample_dt;
    let half = n / 2;
    let mut freqs = Vec::with_capacity(half + 1);
    let mut power = Vec::with_capacity(half + 1);
    for (k, x) in buf.iter().take(half + 1).enumerate() {
        let edge = k == 0 || (n % 2 == 0 && k == half);
        let c = if edge { 1.0 } else { 2.0 };
        freqs.push(k as f64 / span - delta_het_hz);
        power.push(c * (x * sample_dt).norm_sqr() / span);
    }
    Ok(Periodogram {
        freqs,
        power,
        window,
        span_s: span,
    })
}

pub(crate) fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Local maxima above `min_prominence_ratio * median(power)`, strongest first.
pub fn find_peaks(psd: &Periodogram, min_prominence_ratio: f64, max_peaks: usize) -> Vec<usize> {
    find_peaks_in_band(psd, min_prominence_ratio, max_peaks, f64::INFINITY)
}

/// [`find_peaks`] restricted to `|f| <= band_hz`.
pub fn find_peaks_in_band(psd: &Periodogram, min_prominence_ratio: f64, max_peaks: usize, band_hz: f64) -> Vec<usize> {
    let p = &psd.power;
    if p.is_empty() {
        return Vec::new();
    }
    let threshold = min_prominence_ratio * median(p);
    let mut cand: Vec<usize> = (0..p.len())
        .filter(|&k| psd.freqs[k].abs() <= band_hz)
        .filter(|&k| p[k] > threshold)
        .filter(|&k| (k == 0 || p[k] >= p[k - 1]) && (k + 1 == p.len() || p[k] > p[k + 1]))
        .collect();
    cand.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for k in cand {
        if kept.iter().all(|&q| q.abs_diff(k) >= MERGE_BINS) {
            kept.push(k);
        }
    }
    kept.truncate(max_peaks);
    kept
}
