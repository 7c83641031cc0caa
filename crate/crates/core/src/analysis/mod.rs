//! Spectral analysis of photocurrent records and frequency statistics.

pub mod allan;
mod fit;
pub mod oracle;
mod spectrum;

pub use allan::{
    allan_deviation, default_block_sizes, fit_allan_slope, grouped_allan, AllanFit, AllanPoint, AllanSeries,
    GroupedAllan,
};
pub use fit::{fit_lorentzian, lorentzian, LorentzianPeak, FIT_MAX_EVALUATIONS, FIT_XTOL};
pub use oracle::{driven_photon_number, purcell_rate, rabi_oracle, Rabi};
pub use spectrum::{
    find_peaks, find_peaks_in_band, periodogram, periodogram_of, Periodogram, Window, MERGE_BINS,
    MIN_WINDOW_SAMPLES,
};

use serde::{Deserialize, Serialize};

use crate::detection::TrajectoryRecord;
use crate::error::{Error, Result};

pub const REPORT_FORMAT_VERSION: u32 = 1;

/// Center and half splitting of a mirrored pair of lines (Hz).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairStatistics {
    pub f_plus: f64,
    pub f_minus: f64,
    pub center: f64,
    pub half_difference: f64,
}

impl PairStatistics {
    pub fn new(f_plus: f64, f_minus: f64) -> Self {
        PairStatistics {
            f_plus,
            f_minus,
            center: 0.5 * (f_plus + f_minus),
            half_difference: 0.5 * (f_plus - f_minus),
        }
    }
}

/// Statistics of exactly two peaks on opposite sides of zero.
pub fn pair_statistics(peaks: &[LorentzianPeak]) -> Result<PairStatistics> {
    let [a, b] = peaks else {
        return Err(Error::Pairing(format!("need 2 peaks, got {}", peaks.len())));
    };
    let (p, m) = if a.f0 > b.f0 { (a, b) } else { (b, a) };
    if !(p.f0 > 0.0 && m.f0 < 0.0) {
        return Err(Error::Pairing(format!(
            "peaks at {} and {} Hz are on the same side",
            a.f0, b.f0
        )));
    }
    Ok(PairStatistics::new(p.f0, m.f0))
}

/// Pairs positive and negative lines by closest `|f|`, outermost first.
/// Unmatched lines are left out.
pub fn pair_peaks(peaks: &[LorentzianPeak]) -> Vec<PairStatistics> {
    let mut pos: Vec<f64> = peaks.iter().map(|p| p.f0).filter(|&f| f > 0.0).collect();
    let mut neg: Vec<f64> = peaks.iter().map(|p| p.f0).filter(|&f| f < 0.0).collect();
    pos.sort_by(|a, b| b.total_cmp(a));
    neg.sort_by(|a, b| a.total_cmp(b));
    let mut out = Vec::new();
    let mut used = vec![false; neg.len()];
    for &fp in &pos {
        let best = (0..neg.len())
            .filter(|&k| !used[k])
            .min_by(|&x, &y| (neg[x].abs() - fp).abs().total_cmp(&(neg[y].abs() - fp).abs()));
        if let Some(k) = best {
            // Only accept a partner closer to this line than to any other positive line.
            let target = neg[k].abs();
            let nearest_pos = pos
                .iter()
                .min_by(|a, b| (*a - target).abs().total_cmp(&(*b - target).abs()))
                .copied();
            if nearest_pos == Some(fp) {
                used[k] = true;
                out.push(PairStatistics::new(fp, neg[k]));
            }
        }
    }
    out
}

/// Parameters of the record-to-frequencies pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSpec {
    pub window: Window,
    /// Defaults to the detection-active stages.
    pub t_start_s: Option<f64>,
    pub t_end_s: Option<f64>,
    pub min_prominence_ratio: f64,
    pub max_peaks: usize,
    /// Peaks are searched for in `|f| <= band_hz`.
    pub band_hz: f64,
    pub fit_half_width_hz: f64,
}

impl Default for AnalysisSpec {
    fn default() -> Self {
        AnalysisSpec {
            window: Window::Rectangular,
            t_start_s: None,
            t_end_s: None,
            min_prominence_ratio: 50.0,
            max_peaks: 2,
            band_hz: 1000.0,
            fit_half_width_hz: 40.0,
        }
    }
}

impl AnalysisSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_prominence_ratio > 0.0) {
            return Err(Error::config("analysis.min_prominence_ratio", "must be > 0"));
        }
        if self.max_peaks == 0 {
            return Err(Error::config("analysis.max_peaks", "must be >= 1"));
        }
        if !(self.band_hz > 0.0) {
            return Err(Error::config("analysis.band_hz", "must be > 0"));
        }
        if !(self.fit_half_width_hz > 0.0) {
            return Err(Error::config("analysis.fit_half_width_hz", "must be > 0"));
        }
        if let (Some(a), Some(b)) = (self.t_start_s, self.t_end_s) {
            if b <= a {
                return Err(Error::config("analysis.t_end_s", "must exceed t_start_s"));
            }
        }
        Ok(())
    }

    /// Fit half window in bins, at least 3 so the window has 7 points.
    pub fn half_window_bins(&self, psd: &Periodogram) -> usize {
        ((self.fit_half_width_hz / psd.df()).round() as usize).max(3)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakReport {
    pub bin: usize,
    pub bin_freq_hz: f64,
    pub bin_power: f64,
    /// `None` when the fit failed.
    pub fit: Option<LorentzianPeak>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub format_version: u32,
    pub span_s: f64,
    pub df_hz: f64,
    pub median_power: f64,
    /// Sorted by frequency.
    pub peaks: Vec<PeakReport>,
    pub failed_fits: usize,
    pub pairs: Vec<PairStatistics>,
}

impl SpectrumReport {
    pub fn fitted(&self) -> Vec<LorentzianPeak> {
        self.peaks.iter().filter_map(|p| p.fit).collect()
    }

    /// Statistics of the only pair, requiring exactly two good fits.
    pub fn single_pair(&self) -> Result<PairStatistics> {
        if self.failed_fits > 0 {
            return Err(Error::FitFailed { iterations: 0 });
        }
        pair_statistics(&self.fitted())
    }
}

/// Periodogram, peak search and Lorentzian fits of one record.
pub fn analyze_psd(psd: &Periodogram, spec: &AnalysisSpec) -> SpectrumReport {
    let half = spec.half_window_bins(psd);
    let bins = find_peaks_in_band(psd, spec.min_prominence_ratio, spec.max_peaks, spec.band_hz);
    let mut peaks: Vec<PeakReport> = bins
        .into_iter()
        .map(|bin| PeakReport {
            bin,
            bin_freq_hz: psd.freqs[bin],
            bin_power: psd.power[bin],
            fit: fit_lorentzian(psd, bin, half).ok(),
        })
        .collect();
    peaks.sort_by(|a, b| a.bin_freq_hz.total_cmp(&b.bin_freq_hz));
    let failed_fits = peaks.iter().filter(|p| p.fit.is_none()).count();
    let fitted: Vec<LorentzianPeak> = peaks.iter().filter_map(|p| p.fit).collect();
    SpectrumReport {
        format_version: REPORT_FORMAT_VERSION,
        span_s: psd.span_s,
        df_hz: psd.df(),
        median_power: spectrum::median(&psd.power),
        pairs: pair_peaks(&fitted),
        peaks,
        failed_fits,
    }
}

pub fn analyze_record(record: &TrajectoryRecord, spec: &AnalysisSpec) -> Result<(Periodogram, SpectrumReport)> {
    let psd = periodogram(record, spec.window, spec.t_start_s, spec.t_end_s)?;
    let report = analyze_psd(&psd, spec);
    Ok((psd, report))
}

/// Writes `f_hz,power` rows.
pub fn write_psd_csv<W: std::io::Write>(psd: &Periodogram, mut w: W) -> Result<()> {
    writeln!(w, "f_hz,power")?;
    for (f, p) in psd.freqs.iter().zip(&psd.power) {
        writeln!(w, "{f:.16e},{p:.16e}")?;
    }
    Ok(())
}

/// Writes `tau_s,sigma,n,group_std` rows.
pub fn write_allan_csv<W: std::io::Write>(allan: &GroupedAllan, mut w: W) -> Result<()> {
    writeln!(w, "tau_s,sigma,n,group_std")?;
    for (p, g) in allan.series.points.iter().zip(&allan.group_std) {
        writeln!(w, "{:.16e},{:.16e},{},{:.16e}", p.tau_s, p.sigma, p.n, g)?;
    }
    Ok(())
}
