use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::batch::with_workers;
use crate::config::{Config, InitialSection};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    /// Initial Bloch angle of every ensemble (radians).
    Theta,
    BFieldGauss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::config("sweep.values", "must not be empty"));
        }
        for &v in &self.values {
            let ok = match self.variable {
                SweepVariable::Theta => (0.0..=std::f64::consts::PI).contains(&v),
                SweepVariable::BFieldGauss => v >= 0.0 && v.is_finite(),
            };
            if !ok {
                return Err(Error::config("sweep.values", format!("{v} is out of range")));
            }
        }
        Ok(())
    }

    /// `base` with the swept variable set to `value`.
    pub fn apply(&self, base: &Config, value: f64) -> Config {
        let mut c = base.clone();
        match self.variable {
            SweepVariable::Theta => {
                c.initial = InitialSection::Angle {
                    theta: value,
                    theta_per_ensemble: None,
                }
            }
            SweepVariable::BFieldGauss => c.atoms.b_field_gauss = value,
        }
        c
    }
}

/// Peak, peak time and full width at half maximum of a sampled pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseMetrics {
    pub peak: f64,
    pub t_peak: f64,
    /// Width of the envelope. Zero when the peak is not positive, censored at
    /// the ends of the series.
    pub fwhm: f64,
}

/// Upper envelope of a sampled series: its local maxima plus both end points
/// when it oscillates (two or more interior maxima), otherwise the series itself.
pub fn upper_envelope(times: &[f64], values: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let len = values.len();
    let maxima: Vec<usize> = (1..len.saturating_sub(1))
        .filter(|&k| values[k] > values[k - 1] && values[k] >= values[k + 1])
        .collect();
    if maxima.len() < 2 {
        return (times.to_vec(), values.to_vec());
    }
    let keep = std::iter::once(0).chain(maxima).chain(std::iter::once(len - 1));
    keep.map(|k| (times[k], values[k])).unzip()
}

/// Half-maximum crossings of the upper envelope are interpolated linearly.
pub fn pulse_metrics(times: &[f64], values: &[f64]) -> Option<PulseMetrics> {
    let (times, values) = upper_envelope(times, values);
    let (k, &peak) = values.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1))?;
    if !(peak > 0.0) {
        return Some(PulseMetrics {
            peak: peak.max(0.0),
            t_peak: times[k],
            fwhm: 0.0,
        });
    }
    let half = 0.5 * peak;
    let cross = |a: usize, b: usize| {
        let (va, vb) = (values[a], values[b]);
        times[a] + (half - va) / (vb - va) * (times[b] - times[a])
    };
    let start = (1..=k)
        .rev()
        .find(|&j| values[j - 1] < half)
        .map_or(times[0], |j| cross(j - 1, j));
    let end = (k..values.len() - 1)
        .find(|&j| values[j + 1] < half)
        .map_or(times[values.len() - 1], |j| cross(j, j + 1));
    Some(PulseMetrics {
        peak,
        t_peak: times[k],
        fwhm: end - start,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub metrics: Option<PulseMetrics>,
    pub error: Option<String>,
}

/// One unmonitored trajectory per value; the pulse is measured on `n` after
/// the last drive stage.
pub fn run_sweep(base: &Config, sweep: &SweepSpec, workers: usize) -> Result<Vec<SweepPoint>> {
    sweep.validate()?;
    with_workers(workers, || {
        sweep
            .values
            .par_iter()
            .map(|&value| {
                let mut cfg = sweep.apply(base, value);
                cfg.monitored = false;
                let run = || -> Result<PulseMetrics> {
                    let scenario = cfg.resolve()?;
                    let record = scenario.engine()?.integrate(scenario.grid.seed)?;
                    let from = emission_start(&scenario.schedule);
                    let range = record.sample_range(from, f64::INFINITY);
                    let n = record.channel("n").expect("engine records n");
                    pulse_metrics(&record.times[range.clone()], &n[range])
                        .ok_or_else(|| Error::InsufficientData("empty record".into()))
                };
                match run() {
                    Ok(m) => SweepPoint {
                        value,
                        metrics: Some(m),
                        error: None,
                    },
                    Err(e) => SweepPoint {
                        value,
                        metrics: None,
                        error: Some(e.to_string()),
                    },
                }
            })
            .collect()
    })
}

/// End of the last drive stage, or 0.
pub fn emission_start(schedule: &crate::model::StageSchedule) -> f64 {
    let mut t = 0.0;
    let mut start = 0.0;
    for s in &schedule.stages {
        t += s.duration();
        if s.drive().is_some() {
            start = t;
        }
    }
    start
}

pub fn write_sweep_csv<W: std::io::Write>(points: &[SweepPoint], mut w: W) -> Result<()> {
    writeln!(w, "value,peak_n,t_peak_s,fwhm_s")?;
    for p in points {
        match p.metrics {
            Some(m) => writeln!(w, "{:.16e},{:.16e},{:.16e},{:.16e}", p.value, m.peak, m.t_peak, m.fwhm)?,
            None => writeln!(w, "{:.16e},NaN,NaN,NaN", p.value)?,
        }
    }
    Ok(())
}
