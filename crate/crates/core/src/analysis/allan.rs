use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AllanPoint {
    pub tau_s: f64,
    /// Fractional deviation.
    pub sigma: f64,
    /// Number of block averages entering the point.
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct AllanSeries {
    pub points: Vec<AllanPoint>,
}

impl AllanSeries {
    pub fn taus(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.tau_s).collect()
    }

    pub fn sigmas(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.sigma).collect()
    }
}

/// Averages of `m` consecutive values, dropping the incomplete tail.
pub fn block_averages(values: &[f64], m: usize) -> Vec<f64> {
    values
        .chunks_exact(m)
        .map(|c| c.iter().sum::<f64>() / m as f64)
        .collect()
}

/// `sqrt( sum_{n=1}^{M-1} (w_{n+1} - w_n)^2 / (2 (M-1) w_a^2) )` over the
/// block averages `w_n` of `m` consecutive frequencies.
///
/// Frequencies are in Hz, `omega_a_abs` in rad/s.
pub fn allan_deviation(freqs_hz: &[f64], t_c: f64, omega_a_abs: f64, m_list: &[usize]) -> Result<AllanSeries> {
    let f_a = omega_a_abs / (2.0 * PI);
    let mut points = Vec::with_capacity(m_list.len());
    for &m in m_list {
        if m == 0 || freqs_hz.len() < 2 * m {
            return Err(Error::InsufficientData(format!(
                "{} frequencies cannot form two blocks of {m}",
                freqs_hz.len()
            )));
        }
        let avg = block_averages(freqs_hz, m);
        let sum: f64 = avg.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
        let k = avg.len() - 1;
        points.push(AllanPoint {
            tau_s: m as f64 * t_c,
            sigma: (sum / (2.0 * k as f64)).sqrt() / f_a,
            n: avg.len(),
        });
    }
    Ok(AllanSeries { points })
}

/// Powers of two `m` with at least two full blocks in `n` values.
pub fn default_block_sizes(n: usize) -> Vec<usize> {
    std::iter::successors(Some(1usize), |m| Some(m * 2))
        .take_while(|m| 2 * m <= n)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AllanFit {
    /// `sigma(tau) = coefficient / sqrt(tau / 1 s)`.
    pub coefficient: f64,
    /// RMS of `ln sigma` about the fitted line.
    pub residual: f64,
}

/// Fits `ln sigma = ln c - ln(tau) / 2` by least squares.
pub fn fit_allan_slope(series: &AllanSeries) -> Result<AllanFit> {
    let pts = &series.points;
    if pts.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "slope fit needs 3 points, got {}",
            pts.len()
        )));
    }
    if pts.iter().any(|p| !(p.sigma > 0.0) || !(p.tau_s > 0.0) || !p.sigma.is_finite()) {
        return Err(Error::InsufficientData("slope fit needs positive finite sigma and tau".into()));
    }
    let y: Vec<f64> = pts.iter().map(|p| p.sigma.ln() + 0.5 * p.tau_s.ln()).collect();
    let ln_c = y.iter().sum::<f64>() / y.len() as f64;
    let residual = (y.iter().map(|v| (v - ln_c).powi(2)).sum::<f64>() / y.len() as f64).sqrt();
    Ok(AllanFit {
        coefficient: ln_c.exp(),
        residual,
    })
}

/// Allan points of the full sequence with the spread over `groups`
/// consecutive subsets as error bar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupedAllan {
    pub series: AllanSeries,
    /// Standard deviation of the per-group sigma at each tau; NaN when a group is too short.
    pub group_std: Vec<f64>,
}

pub fn grouped_allan(
    freqs_hz: &[f64],
    t_c: f64,
    omega_a_abs: f64,
    m_list: &[usize],
    groups: usize,
) -> Result<GroupedAllan> {
    let series = allan_deviation(freqs_hz, t_c, omega_a_abs, m_list)?;
    let size = if groups > 0 { freqs_hz.len() / groups } else { 0 };
    let group_std = m_list
        .iter()
        .map(|&m| {
            if groups < 2 || size < 2 * m {
                return f64::NAN;
            }
            let s: Vec<f64> = freqs_hz
                .chunks_exact(size)
                .take(groups)
                .map(|g| allan_deviation(g, t_c, omega_a_abs, &[m]).map(|a| a.points[0].sigma))
                .collect::<Result<_>>()
                .unwrap_or_default();
            let mean = s.iter().sum::<f64>() / s.len() as f64;
            (s.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (s.len() - 1) as f64).sqrt()
        })
        .collect();
    Ok(GroupedAllan { series, group_std })
}
