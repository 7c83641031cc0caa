//! WebAssembly bindings for the demo page in `www/`.
//!
//! Each export has a plain Rust twin returning `Result<_, String>` so the
//! logic is testable off the browser.

use std::f64::consts::TAU;

use superrad::analysis::{driven_photon_number, purcell_rate, rabi_oracle};
use superrad::config::{Config, StageSection};
use superrad::experiment::emission_start;
use superrad::model::{zeeman_splitting, HalfInt, PhysicalParams};
use wasm_bindgen::prelude::*;

/// Sampled curve; `values` may hold several series back to back.
#[wasm_bindgen]
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    times: Vec<f64>,
    values: Vec<f64>,
}

#[wasm_bindgen]
impl Curve {
    #[wasm_bindgen(getter)]
    pub fn times(&self) -> Vec<f64> {
        self.times.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn values(&self) -> Vec<f64> {
        self.values.clone()
    }
}

impl Curve {
    pub fn times_slice(&self) -> &[f64] {
        &self.times
    }

    pub fn values_slice(&self) -> &[f64] {
        &self.values
    }
}

const SPIN_F: f64 = 4.5;

fn m_f_ladder() -> Vec<HalfInt> {
    (0..10).map(|k| HalfInt::from_twice(9 - 2 * k)).collect()
}

fn field(b_gauss: f64) -> Result<f64, String> {
    zeeman_splitting(b_gauss).map_err(|e| e.to_string())
}

/// Excited population of each `m_F = 9/2 .. -9/2` under a drive of
/// `omega_m_hz`, with `points` samples over `t_max_ms`. Series follow each
/// other in `values`.
pub fn rabi_populations(omega_m_hz: f64, b_gauss: f64, t_max_ms: f64, points: usize) -> Result<Curve, String> {
    if !(omega_m_hz >= 0.0) || !(t_max_ms > 0.0) || points < 2 {
        return Err("need omega_m >= 0, t_max > 0 and at least 2 points".into());
    }
    let p = PhysicalParams::default();
    let a_cav = driven_photon_number(p.kappa1, p.kappa(), TAU * omega_m_hz).sqrt();
    let delta_b = field(b_gauss)?;
    let spin = HalfInt::from_f64(SPIN_F).unwrap();
    let times: Vec<f64> = (0..points)
        .map(|k| t_max_ms * 1e-3 * k as f64 / (points - 1) as f64)
        .collect();
    let mut values = Vec::with_capacity(10 * points);
    for m in m_f_ladder() {
        values.extend(times.iter().map(|&t| rabi_oracle(a_cav, p.g0, spin, m, delta_b, t).p_e));
    }
    Ok(Curve { times, values })
}

/// Single-atom Purcell rates in 1/s for `m_F = 9/2 .. -9/2`.
pub fn purcell_rates(b_gauss: f64) -> Result<Vec<f64>, String> {
    let p = PhysicalParams::default();
    let delta_b = field(b_gauss)?;
    let spin = HalfInt::from_f64(SPIN_F).unwrap();
    Ok(m_f_ladder()
        .into_iter()
        .map(|m| purcell_rate(m, p.g0, spin, delta_b, p.kappa()))
        .collect())
}

/// Unmonitored photon number during emission after the optimized preset's
/// drive, with the field, atom number and emission time replaced.
pub fn pulse_photon_number(b_gauss: f64, n_total: f64, emit_ms: f64) -> Result<Curve, String> {
    if !(emit_ms > 0.0 && emit_ms <= 500.0) {
        return Err("emission time must be in (0, 500] ms".into());
    }
    let mut c = Config::preset("optimized_long_pulse").map_err(|e| e.to_string())?;
    c.monitored = false;
    c.atoms.b_field_gauss = b_gauss;
    c.atoms.n_total = n_total;
    c.grid.sample_dt_s = 1e-4;
    for st in &mut c.stages {
        if let StageSection::Emit { duration_s, .. } = st {
            *duration_s = emit_ms * 1e-3;
        }
    }
    let s = c.resolve().map_err(|e| e.to_string())?;
    let r = s
        .engine()
        .and_then(|e| e.integrate(s.grid.seed))
        .map_err(|e| e.to_string())?;
    let range = r.sample_range(emission_start(&s.schedule), f64::INFINITY);
    let n = r.channel("n").ok_or("engine records no photon number")?;
    Ok(Curve {
        times: r.times[range.clone()].to_vec(),
        values: n[range].to_vec(),
    })
}

fn js(e: String) -> JsError {
    JsError::new(&e)
}

#[wasm_bindgen(js_name = rabiPopulations)]
pub fn rabi_populations_js(omega_m_hz: f64, b_gauss: f64, t_max_ms: f64, points: usize) -> Result<Curve, JsError> {
    rabi_populations(omega_m_hz, b_gauss, t_max_ms, points).map_err(js)
}

#[wasm_bindgen(js_name = purcellRates)]
pub fn purcell_rates_js(b_gauss: f64) -> Result<Vec<f64>, JsError> {
    purcell_rates(b_gauss).map_err(js)
}

#[wasm_bindgen(js_name = pulsePhotonNumber)]
pub fn pulse_photon_number_js(b_gauss: f64, n_total: f64, emit_ms: f64) -> Result<Curve, JsError> {
    pulse_photon_number(b_gauss, n_total, emit_ms).map_err(js)
}
