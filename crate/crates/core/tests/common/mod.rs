#![allow(dead_code)]

use superrad::config::{Config, Scenario};
use superrad::detection::TrajectoryRecord;

pub fn scenario(toml: &str) -> Scenario {
    Config::from_toml_str(toml).unwrap().resolve().unwrap()
}

pub fn preset(name: &str) -> Config {
    Config::preset(name).unwrap()
}

/// Preset with backaction switched off.
pub fn unmonitored(name: &str) -> Scenario {
    let mut c = preset(name);
    c.monitored = false;
    c.resolve().unwrap()
}

pub fn channel<'a>(record: &'a TrajectoryRecord, name: &str) -> &'a [f64] {
    record
        .channel(name)
        .unwrap_or_else(|| panic!("no channel {name}"))
}

pub fn z_channel<'a>(record: &'a TrajectoryRecord, label: &str) -> &'a [f64] {
    channel(record, &format!("z_mF_{label}"))
}

/// Largest Simpson-rule residual of the excitation balance over sample pairs
/// in `[t0, t1]`, divided by the largest loss rate times the pair length.
pub fn balance_residual(s: &Scenario, record: &TrajectoryRecord, t0: f64, t1: f64) -> f64 {
    let range = record.sample_range(t0, t1);
    let n = channel(record, "n");
    let kappa = s.params.kappa();
    let excited = |k: usize| -> (f64, f64) {
        let mut e = 0.0;
        let mut loss = 0.0;
        for ens in &s.ensembles {
            let z = z_channel(record, &ens.label())[k];
            let x = ens.n_atoms * 0.5 * (1.0 + z);
            e += x;
            loss += ens.gamma * x;
        }
        (e, loss)
    };
    let energy = |k: usize| n[k] + excited(k).0;
    let rate = |k: usize| kappa * n[k] + excited(k).1;
    let h = s.grid.sample_dt;
    let max_rate = range.clone().map(rate).fold(0.0, f64::max);
    let mut worst: f64 = 0.0;
    let mut k = range.start;
    while k + 2 < range.end {
        let de = energy(k + 2) - energy(k);
        let integral = h / 3.0 * (rate(k) + 4.0 * rate(k + 1) + rate(k + 2));
        worst = worst.max((de + integral).abs());
        k += 2;
    }
    worst / (2.0 * h * max_rate)
}

/// Least-squares slope of `ln y` against `t`.
pub fn log_slope(t: &[f64], y: &[f64]) -> f64 {
    let n = t.len() as f64;
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mt = t.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let cov: f64 = t.iter().zip(&ly).map(|(a, b)| (a - mt) * (b - my)).sum();
    let var: f64 = t.iter().map(|a| (a - mt) * (a - mt)).sum();
    cov / var
}
