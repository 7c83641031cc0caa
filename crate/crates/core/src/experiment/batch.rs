use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{analyze_record, grouped_allan, fit_allan_slope, AllanFit, GroupedAllan, PairStatistics, SpectrumReport};
use crate::config::Scenario;
use crate::detection::{derive_seed, TrajectoryRecord};
use crate::error::{Error, Result};

/// Largest failed fraction a batch tolerates.
pub const MAX_FAILED_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchSpec {
    pub n_trajectories: usize,
    pub master_seed: u64,
    /// Duty cycle per measurement; may exceed the simulated span.
    pub t_c: f64,
    /// Subsets used for the Allan error bars.
    pub groups: usize,
    /// Worker threads, 0 for all cores.
    pub workers: usize,
    pub keep_records: bool,
}

impl BatchSpec {
    pub fn validate(&self, simulated_span: f64) -> Result<()> {
        if self.n_trajectories < 2 {
            return Err(Error::config("batch.n_trajectories", "must be >= 2"));
        }
        if !(self.t_c >= simulated_span) || !self.t_c.is_finite() {
            return Err(Error::config(
                "batch.t_c_s",
                format!("duty cycle {} s is shorter than the simulated span {simulated_span} s", self.t_c),
            ));
        }
        if self.groups == 0 {
            return Err(Error::config("batch.groups", "must be >= 1"));
        }
        Ok(())
    }

    pub fn seed(&self, index: usize) -> u64 {
        derive_seed(self.master_seed, index as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryOutcome {
    pub index: usize,
    pub seed: u64,
    /// Outermost pair of lines.
    pub pair: Option<PairStatistics>,
    pub report: Option<SpectrumReport>,
    pub error: Option<String>,
    #[serde(skip)]
    pub record: Option<TrajectoryRecord>,
}

impl TrajectoryOutcome {
    pub fn fit_ok(&self) -> bool {
        self.pair.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchResult {
    /// In trajectory order.
    pub outcomes: Vec<TrajectoryOutcome>,
    pub failed: usize,
    pub failed_fits: usize,
}

impl BatchResult {
    /// Center frequencies of the successful trajectories, in order.
    pub fn centers(&self) -> Vec<f64> {
        self.outcomes.iter().filter_map(|o| o.pair.map(|p| p.center)).collect()
    }

    pub fn half_differences(&self) -> Vec<f64> {
        self.outcomes
            .iter()
            .filter_map(|o| o.pair.map(|p| p.half_difference))
            .collect()
    }
}

/// Runs `f` on a pool of `workers` threads (0 for the global pool).
pub(crate) fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::config("batch.workers", e.to_string()))?;
    Ok(pool.install(f))
}

/// One trajectory through the analysis pipeline.
pub fn run_trajectory(scenario: &Scenario, index: usize, seed: u64, keep_record: bool) -> TrajectoryOutcome {
    let mut out = TrajectoryOutcome {
        index,
        seed,
        pair: None,
        report: None,
        error: None,
        record: None,
    };
    let record = match scenario.engine().and_then(|e| e.integrate(seed)) {
        Ok(r) => r,
        Err(e) => {
            out.error = Some(e.to_string());
            return out;
        }
    };
    match analyze_record(&record, &scenario.analysis) {
        Ok((_, report)) => {
            if report.failed_fits == 0 {
                out.pair = report.pairs.first().copied();
            }
            if out.pair.is_none() {
                out.error = Some(format!(
                    "{} peaks, {} failed fits, no line pair",
                    report.peaks.len(),
                    report.failed_fits
                ));
            }
            out.report = Some(report);
        }
        Err(e) => out.error = Some(e.to_string()),
    }
    if keep_record {
        out.record = Some(record);
    }
    out
}

/// Independent trajectories with seeds derived from the master seed. The
/// result depends only on the scenario and the master seed.
pub fn run_batch(scenario: &Scenario, batch: &BatchSpec) -> Result<BatchResult> {
    let outcomes: Vec<TrajectoryOutcome> = with_workers(batch.workers, || {
        (0..batch.n_trajectories)
            .into_par_iter()
            .map(|i| run_trajectory(scenario, i, batch.seed(i), batch.keep_records))
            .collect()
    })?;
    let failed = outcomes.iter().filter(|o| !o.fit_ok()).count();
    let failed_fits = outcomes
        .iter()
        .filter_map(|o| o.report.as_ref())
        .map(|r| r.failed_fits)
        .sum();
    if failed as f64 > MAX_FAILED_FRACTION * batch.n_trajectories as f64 {
        return Err(Error::BatchFailed {
            failed,
            total: batch.n_trajectories,
        });
    }
    Ok(BatchResult {
        outcomes,
        failed,
        failed_fits,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyStability {
    pub allan: GroupedAllan,
    pub fit: Option<AllanFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchAllan {
    pub t_c: f64,
    pub center: FrequencyStability,
    pub half_difference: FrequencyStability,
}

/// Allan deviation of the center and half-splitting sequences with block
/// sizes `1, 2, 4, ...` up to half the sequence.
pub fn batch_allan(result: &BatchResult, t_c: f64, omega_a_abs: f64, groups: usize) -> Result<BatchAllan> {
    let stability = |seq: Vec<f64>| -> Result<FrequencyStability> {
        let m = crate::analysis::default_block_sizes(seq.len());
        let allan = grouped_allan(&seq, t_c, omega_a_abs, &m, groups)?;
        let fit = fit_allan_slope(&allan.series).ok();
        Ok(FrequencyStability { allan, fit })
    };
    Ok(BatchAllan {
        t_c,
        center: stability(result.centers())?,
        half_difference: stability(result.half_differences())?,
    })
}

/// Per-sample mean and standard error of one channel over trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelAverage {
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub std_error: Vec<f64>,
    pub trajectories: usize,
}

pub fn average_channel(
    scenario: &Scenario,
    channel: &str,
    n_trajectories: usize,
    master_seed: u64,
    workers: usize,
) -> Result<ChannelAverage> {
    let engine = scenario.engine()?;
    let runs: Vec<Result<(Vec<f64>, Vec<f64>)>> = with_workers(workers, || {
        (0..n_trajectories)
            .into_par_iter()
            .map(|i| {
                let r = engine.integrate(derive_seed(master_seed, i as u64))?;
                let c = r
                    .channel(channel)
                    .ok_or_else(|| Error::InsufficientData(format!("no channel `{channel}`")))?
                    .to_vec();
                Ok((r.times, c))
            })
            .collect()
    })?;
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let Some((times, _)) = runs.first() else {
        return Err(Error::InsufficientData("no trajectories".into()));
    };
    let len = times.len();
    let k = runs.len() as f64;
    let mut mean = vec![0.0; len];
    let mut sq = vec![0.0; len];
    for (_, c) in &runs {
        for (j, v) in c.iter().enumerate() {
            mean[j] += v / k;
            sq[j] += v * v / k;
        }
    }
    let std_error = mean
        .iter()
        .zip(&sq)
        .map(|(m, s)| ((s - m * m).max(0.0) * k / (k - 1.0).max(1.0) / k).sqrt())
        .collect();
    Ok(ChannelAverage {
        times: times.clone(),
        mean,
        std_error,
        trajectories: runs.len(),
    })
}
