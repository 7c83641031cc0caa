//! Batches, sweeps and atom loss/injection.

mod batch;
mod loss;
mod sweep;

pub use batch::{
    average_channel, batch_allan, run_batch, run_trajectory, BatchAllan, BatchResult, BatchSpec, ChannelAverage,
    FrequencyStability, TrajectoryOutcome, MAX_FAILED_FRACTION,
};
pub use loss::{apply_loss_injection, InjectedState, LossInjectionSpec};
pub use sweep::{emission_start, pulse_metrics, run_sweep, upper_envelope, write_sweep_csv, PulseMetrics, SweepPoint, SweepSpec, SweepVariable};
