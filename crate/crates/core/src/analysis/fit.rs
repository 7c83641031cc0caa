use levenberg_marquardt::{LeastSquaresProblem, LevenbergMarquardt};
use nalgebra::{storage::Owned, DVector, Dyn, OMatrix, Vector4, U4};
use serde::{Deserialize, Serialize};

use super::spectrum::Periodogram;
use crate::error::{Error, Result};

/// Relative parameter change at which the fit counts as converged.
pub const FIT_XTOL: f64 = 1e-8;
/// Model evaluations after which the fit stops with its current estimate.
pub const FIT_MAX_EVALUATIONS: usize = 200;

/// `L(f) = amplitude * hwhm^2 / ((f - f0)^2 + hwhm^2) + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LorentzianPeak {
    pub f0: f64,
    pub hwhm: f64,
    pub amplitude: f64,
    pub offset: f64,
    /// RMS residual over the window divided by `amplitude`.
    pub residual: f64,
}

impl LorentzianPeak {
    pub fn eval(&self, f: f64) -> f64 {
        lorentzian(f, self.f0, self.hwhm, self.amplitude, self.offset)
    }
}

pub fn lorentzian(f: f64, f0: f64, hwhm: f64, amplitude: f64, offset: f64) -> f64 {
    let g2 = hwhm * hwhm;
    amplitude * g2 / ((f - f0) * (f - f0) + g2) + offset
}

/// Works in units where the window center is 0, one bin is 1 and the peak power is 1.
struct Problem {
    x: Vec<f64>,
    y: Vec<f64>,
    p: Vector4<f64>,
}

impl LeastSquaresProblem<f64, Dyn, U4> for Problem {
    type ResidualStorage = Owned<f64, Dyn>;
    type JacobianStorage = Owned<f64, Dyn, U4>;
    type ParameterStorage = Owned<f64, U4>;

    fn set_params(&mut self, p: &Vector4<f64>) {
        self.p.copy_from(p);
    }

    fn params(&self) -> Vector4<f64> {
        self.p
    }

    fn residuals(&self) -> Option<DVector<f64>> {
        let [f0, g, a, c] = [self.p[0], self.p[1], self.p[2], self.p[3]];
        Some(DVector::from_iterator(
            self.x.len(),
            self.x.iter().zip(&self.y).map(|(&x, &y)| lorentzian(x, f0, g, a, c) - y),
        ))
    }

    fn jacobian(&self) -> Option<OMatrix<f64, Dyn, U4>> {
        let [f0, g, a, _] = [self.p[0], self.p[1], self.p[2], self.p[3]];
        let mut j = OMatrix::<f64, Dyn, U4>::zeros(self.x.len());
        for (r, &x) in self.x.iter().enumerate() {
            let d = x - f0;
            let den = d * d + g * g;
            let shape = g * g / den;
            j[(r, 0)] = a * shape * 2.0 * d / den;
            j[(r, 1)] = a * 2.0 * g * d * d / (den * den);
            j[(r, 2)] = shape;
            j[(r, 3)] = 1.0;
        }
        Some(j)
    }
}

/// Gauss-Newton steps from the converged point. Step acceptance in LM compares
/// objective values, which pins the parameters only to about sqrt(eps); the
/// normal equations resolve the stationary point much more finely.
fn polish(problem: &mut Problem) {
    for _ in 0..8 {
        let (Some(r), Some(j)) = (problem.residuals(), problem.jacobian()) else {
            return;
        };
        let jt = j.transpose();
        let Some(chol) = (&jt * &j).cholesky() else {
            return;
        };
        let step = chol.solve(&(-(&jt * &r)));
        let prev = problem.p;
        let next = prev + step;
        if !next.iter().all(|v| v.is_finite()) {
            return;
        }
        problem.set_params(&next);
        let worse = problem
            .residuals()
            .is_none_or(|r2| r2.norm_squared() > r.norm_squared() * (1.0 + 1e-12));
        if worse {
            problem.set_params(&prev);
            return;
        }
        if step.norm() <= 1e-15 * next.norm() {
            return;
        }
    }
}

/// Least-squares Lorentzian over bins `[bin - half_window_bins, bin + half_window_bins]`.
pub fn fit_lorentzian(psd: &Periodogram, bin: usize, half_window_bins: usize) -> Result<LorentzianPeak> {
    let lo = bin.checked_sub(half_window_bins);
    let hi = bin + half_window_bins;
    let Some(lo) = lo.filter(|_| hi < psd.len()) else {
        return Err(Error::InsufficientData(format!(
            "fit window of {half_window_bins} bins around bin {bin} leaves the spectrum"
        )));
    };
    if hi - lo + 1 < 7 {
        return Err(Error::InsufficientData("fit window needs at least 7 points".into()));
    }
    let scale = psd.power[bin];
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::FitFailed { iterations: 0 });
    }
    let x: Vec<f64> = (lo..=hi).map(|k| k as f64 - bin as f64).collect();
    let y: Vec<f64> = psd.power[lo..=hi].iter().map(|p| p / scale).collect();

    let mut sorted = y.clone();
    sorted.sort_by(f64::total_cmp);
    let c0 = sorted[sorted.len() / 2];
    let half_max = 0.5 * (1.0 + c0);
    let reach = |dir: isize| {
        let mut k = half_window_bins as isize;
        let mut steps = 0.0;
        while steps < half_window_bins as f64 {
            let next = k + dir;
            if y[next as usize] < half_max {
                let (a, b) = (y[k as usize], y[next as usize]);
                return steps + (a - half_max) / (a - b);
            }
            k = next;
            steps += 1.0;
        }
        steps
    };
    let g0 = (0.5 * (reach(-1) + reach(1))).max(0.5);
    let mut problem = Problem {
        x,
        y,
        p: Vector4::new(0.0, g0, 1.0 - c0, c0),
    };
    problem.p[2] = problem.p[2].max(1e-3);

    // Only the parameter change decides convergence.
    let lm = LevenbergMarquardt::new()
        .with_xtol(FIT_XTOL)
        .with_ftol(0.0)
        .with_gtol(0.0)
        .with_patience(FIT_MAX_EVALUATIONS / 5);
    let (mut problem, report) = lm.minimize(problem);
    if report.termination.was_successful() {
        polish(&mut problem);
    }
    let [f0, g, a, c] = [problem.p[0], problem.p[1].abs(), problem.p[2], problem.p[3]];
    use levenberg_marquardt::TerminationReason as T;
    let stopped = report.termination.was_successful()
        || matches!(report.termination, T::LostPatience | T::NoImprovementPossible(_));
    let ok = stopped
        && [f0, g, a, c].iter().all(|v| v.is_finite())
        && a > 0.0
        && g > 0.0
        && f0.abs() <= half_window_bins as f64;
    if !ok {
        return Err(Error::FitFailed {
            iterations: report.number_of_evaluations,
        });
    }
    let sq = problem.residuals().map_or(f64::NAN, |r| r.norm_squared());
    let rms = (sq / problem.x.len() as f64).sqrt();
    let df = psd.df();
    Ok(LorentzianPeak {
        f0: psd.freqs[bin] + f0 * df,
        hwhm: g * df,
        amplitude: a * scale,
        offset: c * scale,
        residual: rms / a,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::spectrum::Window;

    fn synthetic(f0: f64, hwhm: f64, amp: f64, offset: f64) -> Periodogram {
        let df = 0.5;
        let freqs: Vec<f64> = (0..400).map(|k| -100.0 + k as f64 * df).collect();
        let power = freqs.iter().map(|&f| lorentzian(f, f0, hwhm, amp, offset)).collect();
        Periodogram {
            freqs,
            power,
            window: Window::Rectangular,
            span_s: 1.0 / df,
        }
    }

    #[test]
    fn noiseless_recovery() {
        let psd = synthetic(12.3, 4.1, 7.0, 0.2);
        let bin = psd.bin_of(12.3);
        let p = fit_lorentzian(&psd, bin, 30).unwrap();
        assert!((p.f0 - 12.3).abs() < 1e-6 * 12.3);
        assert!((p.hwhm - 4.1).abs() < 1e-6 * 4.1);
        assert!((p.amplitude - 7.0).abs() < 1e-6 * 7.0);
        assert!((p.offset - 0.2).abs() < 1e-6 * 0.2);
    }

    #[test]
    fn window_must_fit() {
        let psd = synthetic(0.0, 2.0, 1.0, 0.0);
        assert!(fit_lorentzian(&psd, 2, 5).is_err());
        assert!(fit_lorentzian(&psd, 200, 2).is_err());
    }
}
