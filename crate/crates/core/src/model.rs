//! Physical configuration: constants, Zeeman-split sub-ensembles, drive
//! schedules, initial states and the time grid.
//!
//! Everything is expressed in a frame rotating at the reference frequency
//! (the cavity resonance by default), so all stored frequencies are angular
//! detunings of order Hz to kHz. The absolute clock frequency only enters
//! fractional normalizations.

use std::f64::consts::{PI, TAU};
use std::fmt;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state::CumulantState;

/// Nuclear spin of 87Sr.
pub const SPIN_F_SR87: HalfInt = HalfInt::from_twice(9);

/// Linear Zeeman coefficient of the pi transitions, in Hz per Gauss.
pub const ZEEMAN_HZ_PER_GAUSS: f64 = 108.4;

/// An integer or half-integer quantum number, stored as twice its value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HalfInt(i32);

impl HalfInt {
    pub const fn from_twice(twice: i32) -> Self {
        HalfInt(twice)
    }

    /// Accepts values that are integer multiples of 1/2.
    pub fn from_f64(v: f64) -> Option<Self> {
        let twice = 2.0 * v;
        if twice.is_finite() && (twice - twice.round()).abs() < 1e-9 {
            Some(HalfInt(twice.round() as i32))
        } else {
            None
        }
    }

    pub fn twice(self) -> i32 {
        self.0
    }

    pub fn value(self) -> f64 {
        f64::from(self.0) / 2.0
    }

    pub fn abs(self) -> Self {
        HalfInt(self.0.abs())
    }
}

impl fmt::Display for HalfInt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = match self.0.signum() {
            1 => "+",
            -1 => "-",
            _ => "",
        };
        let t = self.0.abs();
        if t % 2 == 0 {
            write!(f, "{sign}{}", t / 2)
        } else {
            write!(f, "{sign}{t}/2")
        }
    }
}

/// Cavity, coupling, decay and detection constants. All rates are angular
/// (rad/s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    pub kappa1: f64,
    pub kappa2: f64,
    pub g0: f64,
    pub gamma0: f64,
    /// Detection efficiency in [0, 1].
    pub eta: f64,
    /// Heterodyne offset between the reference laser and the cavity.
    pub delta_het: f64,
    /// Absolute clock frequency, used only for fractional normalization.
    pub omega_a_abs: f64,
    /// Cavity resonance relative to the rotating frame.
    pub detuning_cavity: f64,
    /// Bare atomic transition relative to the rotating frame.
    pub detuning_atom: f64,
}

impl PhysicalParams {
    pub fn kappa(&self) -> f64 {
        self.kappa1 + self.kappa2
    }

    /// Prefactor of the homodyne signal and of every backaction term.
    pub fn measurement_rate_sqrt(&self) -> f64 {
        (self.eta * self.kappa2).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa1 >= 0.0) {
            return Err(Error::config("physics.kappa1_hz", "must be >= 0"));
        }
        if !(self.kappa2 >= 0.0) {
            return Err(Error::config("physics.kappa2_hz", "must be >= 0"));
        }
        if !(self.kappa() > 0.0) {
            return Err(Error::config(
                "physics.kappa1_hz",
                "total cavity loss kappa1 + kappa2 must be > 0",
            ));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::config("physics.eta", "must lie in [0, 1]"));
        }
        if !(self.omega_a_abs > 0.0) {
            return Err(Error::config("physics.clock_freq_hz", "must be > 0"));
        }
        if !(self.gamma0 >= 0.0) {
            return Err(Error::config("physics.gamma0_hz", "must be >= 0"));
        }
        for (key, v) in [
            ("physics.g0_hz", self.g0),
            ("physics.delta_het_hz", self.delta_het),
            ("physics.cavity_detuning_hz", self.detuning_cavity),
            ("physics.atom_detuning_hz", self.detuning_atom),
        ] {
            if !v.is_finite() {
                return Err(Error::config(key, "must be finite"));
            }
        }
        Ok(())
    }
}

impl Default for PhysicalParams {
    fn default() -> Self {
        PhysicalParams {
            kappa1: TAU * 72.5e3,
            kappa2: TAU * 72.5e3,
            g0: TAU * 2.41,
            gamma0: TAU * 1e-3,
            eta: 0.12,
            delta_het: TAU * 1e3,
            omega_a_abs: TAU * 429.5e12,
            detuning_cavity: 0.0,
            detuning_atom: 0.0,
        }
    }
}

/// One m_F sub-ensemble.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleSpec {
    pub m_f: HalfInt,
    /// Mean atom number; fractional values arise from loss and injection.
    pub n_atoms: f64,
    /// Transition frequency relative to the rotating frame (rad/s).
    pub detuning: f64,
    /// Single-atom coupling g_i (rad/s); signed, odd in m_F.
    pub coupling: f64,
    pub gamma: f64,
}

impl EnsembleSpec {
    /// `omega_i - i gamma_i / 2`
    pub fn complex_frequency(&self) -> C64 {
        C64::new(self.detuning, -0.5 * self.gamma)
    }

    pub fn label(&self) -> String {
        self.m_f.to_string()
    }
}

/// Angular Zeeman splitting per unit m_F for a field of `b_gauss`.
pub fn zeeman_splitting(b_gauss: f64) -> Result<f64> {
    if !(b_gauss >= 0.0) || !b_gauss.is_finite() {
        return Err(Error::config(
            "atoms.b_field_gauss",
            format!("magnetic field must be finite and >= 0, got {b_gauss}"),
        ));
    }
    Ok(TAU * ZEEMAN_HZ_PER_GAUSS * b_gauss)
}

/// Clebsch-Gordan weighted coupling of the pi transition `m_f`.
pub fn coupling_for(g0: f64, spin_f: HalfInt, m_f: HalfInt) -> f64 {
    let f = spin_f.value();
    g0 * m_f.value() / (f * (f + 1.0)).sqrt()
}

/// Builds the occupied sub-ensembles with atoms shared evenly between them.
pub fn build_ensembles(
    spin_f: HalfInt,
    b_gauss: f64,
    occupied: &[HalfInt],
    n_total: f64,
    params: &PhysicalParams,
) -> Result<Vec<EnsembleSpec>> {
    let delta_b = zeeman_splitting(b_gauss)?;
    if occupied.is_empty() {
        return Err(Error::config("atoms.occupied_mf", "no occupied m_F levels"));
    }
    if !(n_total > 0.0) || !n_total.is_finite() {
        return Err(Error::config("atoms.n_total", "atom number must be > 0"));
    }
    if spin_f.twice() <= 0 {
        return Err(Error::config("atoms.spin_f", "F must be positive"));
    }
    let mut seen = Vec::with_capacity(occupied.len());
    for &m in occupied {
        if m.abs() > spin_f {
            return Err(Error::config(
                "atoms.occupied_mf",
                format!("m_F = {m} outside [-{spin_f}, {spin_f}]", spin_f = spin_f.abs()),
            ));
        }
        if (spin_f.twice() - m.twice()) % 2 != 0 {
            return Err(Error::config(
                "atoms.occupied_mf",
                format!("m_F = {m} is incompatible with F = {spin_f}"),
            ));
        }
        if seen.contains(&m) {
            return Err(Error::config(
                "atoms.occupied_mf",
                format!("duplicate m_F = {m}"),
            ));
        }
        seen.push(m);
    }
    let per = n_total / occupied.len() as f64;
    Ok(occupied
        .iter()
        .map(|&m| EnsembleSpec {
            m_f: m,
            n_atoms: per,
            detuning: params.detuning_atom + delta_b * m.value(),
            coupling: coupling_for(params.g0, spin_f, m),
            gamma: params.gamma0,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Envelope {
    #[default]
    Square,
}

/// A coherent drive through the input mirror.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriveStage {
    pub duration: f64,
    /// Drive strength Omega_m; `sqrt(kappa1) * omega_m` is an angular rate.
    pub omega_m: f64,
    /// Drive frequency relative to the rotating frame (rad/s).
    pub detuning_drive: f64,
    /// Phase of the complex drive amplitude (radians).
    pub phase: f64,
    pub envelope: Envelope,
}

impl DriveStage {
    /// Complex amplitude Omega(t) at stage-local time `t_local`.
    pub fn amplitude(&self, _t_local: f64) -> C64 {
        match self.envelope {
            Envelope::Square => C64::from_polar(self.omega_m, self.phase),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StageKind {
    Drive(DriveStage),
    Emit { duration: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage {
    pub kind: StageKind,
    /// Whether heterodyne detection (signal and backaction) is on.
    pub detect: bool,
}

impl Stage {
    pub fn duration(&self) -> f64 {
        match self.kind {
            StageKind::Drive(d) => d.duration,
            StageKind::Emit { duration } => duration,
        }
    }

    pub fn drive(&self) -> Option<&DriveStage> {
        match &self.kind {
            StageKind::Drive(d) => Some(d),
            StageKind::Emit { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StageSchedule {
    pub stages: Vec<Stage>,
}

impl StageSchedule {
    pub fn new(stages: Vec<Stage>) -> Self {
        StageSchedule { stages }
    }

    pub fn total_duration(&self) -> f64 {
        self.stages.iter().map(Stage::duration).sum()
    }

    /// Number of integration steps per stage; every boundary must sit on the
    /// `dt` grid.
    pub fn steps_per_stage(&self, dt: f64) -> Result<Vec<u64>> {
        self.stages
            .iter()
            .enumerate()
            .map(|(k, st)| {
                let d = st.duration();
                if !(d > 0.0) {
                    return Err(Error::config(
                        format!("stages[{k}].duration_s"),
                        "must be > 0",
                    ));
                }
                if let StageKind::Drive(drive) = st.kind {
                    if !(drive.omega_m >= 0.0) {
                        return Err(Error::config(
                            format!("stages[{k}].omega_m"),
                            "must be >= 0",
                        ));
                    }
                }
                whole_multiple(d, dt).ok_or_else(|| {
                    Error::config(
                        format!("stages[{k}].duration_s"),
                        format!("{d} s is not an integer multiple of dt = {dt} s"),
                    )
                })
            })
            .collect()
    }

    pub fn validate(&self, dt: f64) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::config("stages", "at least one stage is required"));
        }
        self.steps_per_stage(dt).map(|_| ())
    }
}

/// Returns `x / unit` when it is (to rounding) a positive integer.
pub(crate) fn whole_multiple(x: f64, unit: f64) -> Option<u64> {
    let r = x / unit;
    let k = r.round();
    if k >= 1.0 && (r - k).abs() <= 1e-6 * k.max(1.0) {
        Some(k as u64)
    } else {
        None
    }
}

/// Single-atom product-state moments used for explicit initial states.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AtomMoments {
    pub z: f64,
    pub s: C64,
}

impl AtomMoments {
    /// `cos(theta/2)|e> + sin(theta/2)|g>`
    pub fn from_angle(theta: f64) -> Self {
        AtomMoments {
            z: theta.cos(),
            s: C64::new(0.5 * theta.sin(), 0.0),
        }
    }

    pub fn ground() -> Self {
        AtomMoments {
            z: -1.0,
            s: C64::new(0.0, 0.0),
        }
    }

    pub fn excited() -> Self {
        AtomMoments {
            z: 1.0,
            s: C64::new(0.0, 0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialStateSpec {
    Ground,
    /// Uniform angle, optionally overridden per ensemble.
    Angle {
        theta: f64,
        per_ensemble: Option<Vec<f64>>,
    },
    Explicit(Vec<AtomMoments>),
}

impl InitialStateSpec {
    pub fn atom_moments(&self, k: usize) -> Result<Vec<AtomMoments>> {
        match self {
            InitialStateSpec::Ground => Ok(vec![AtomMoments::ground(); k]),
            InitialStateSpec::Angle {
                theta,
                per_ensemble,
            } => {
                let thetas = match per_ensemble {
                    Some(v) => {
                        if v.len() != k {
                            return Err(Error::config(
                                "initial.theta_per_ensemble",
                                format!("expected {k} angles, got {}", v.len()),
                            ));
                        }
                        v.clone()
                    }
                    None => vec![*theta; k],
                };
                thetas
                    .into_iter()
                    .map(|th| {
                        if !(0.0..=PI).contains(&th) {
                            Err(Error::config(
                                "initial.theta",
                                format!("theta = {th} outside [0, pi]"),
                            ))
                        } else {
                            Ok(AtomMoments::from_angle(th))
                        }
                    })
                    .collect()
            }
            InitialStateSpec::Explicit(v) => {
                if v.len() != k {
                    return Err(Error::config(
                        "initial.atoms",
                        format!("expected {k} entries, got {}", v.len()),
                    ));
                }
                for (idx, m) in v.iter().enumerate() {
                    let ok = (-1.0..=1.0).contains(&m.z)
                        && m.s.norm() <= 0.5 * (1.0 - m.z * m.z).sqrt() + 1e-12;
                    if !ok {
                        return Err(Error::config(
                            format!("initial.atoms[{idx}]"),
                            "single-atom moments are not a physical Bloch vector",
                        ));
                    }
                }
                Ok(v.clone())
            }
        }
    }
}

/// Product-state moments: vacuum field, every atom in its own Bloch state,
/// distinct-atom pair moments factorized.
pub fn initial_moments(spec: &InitialStateSpec, ensembles: &[EnsembleSpec]) -> Result<CumulantState> {
    let atoms = spec.atom_moments(ensembles.len())?;
    Ok(product_state(&atoms))
}

pub(crate) fn product_state(atoms: &[AtomMoments]) -> CumulantState {
    let k = atoms.len();
    let mut st = CumulantState::zeros(k);
    for (i, m) in atoms.iter().enumerate() {
        st.set_s(i, m.s);
        st.set_z(i, m.z);
    }
    for i in 0..k {
        for j in 0..k {
            let (mj, mi) = (atoms[j], atoms[i]);
            st.set_sz(j, i, mj.s * mi.z);
            if j <= i {
                st.set_sp(j, i, mj.s * mi.s.conj());
                st.set_sm(j, i, mj.s * mi.s);
                st.set_zz(j, i, mj.z * mi.z);
            }
        }
    }
    st
}

/// Integration and output grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationGrid {
    pub dt: f64,
    pub sample_dt: f64,
    pub seed: u64,
}

/// Largest `dt * rate` accepted by [`SimulationGrid::validate`].
pub const STABILITY_LIMIT: f64 = 0.1;

impl SimulationGrid {
    pub fn steps_per_sample(&self) -> u64 {
        whole_multiple(self.sample_dt, self.dt).unwrap_or(1)
    }

    pub fn validate(
        &self,
        params: &PhysicalParams,
        ensembles: &[EnsembleSpec],
        schedule: &StageSchedule,
    ) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::config("grid.dt_s", "must be > 0"));
        }
        if whole_multiple(self.sample_dt, self.dt).is_none() {
            return Err(Error::config(
                "grid.sample_dt_s",
                format!(
                    "sample_dt = {} s must be an integer multiple (>= 1) of dt = {} s",
                    self.sample_dt, self.dt
                ),
            ));
        }
        let mut fastest = params.kappa().max(params.delta_het.abs());
        fastest = fastest.max(params.detuning_cavity.abs());
        for e in ensembles {
            fastest = fastest.max(e.detuning.abs());
        }
        for st in &schedule.stages {
            if let Some(d) = st.drive() {
                fastest = fastest.max(d.detuning_drive.abs());
            }
        }
        if self.dt * fastest >= STABILITY_LIMIT {
            return Err(Error::config(
                "grid.dt_s",
                format!(
                    "dt * max rate = {:.3} exceeds the stability limit {STABILITY_LIMIT}; \
                     use dt < {:.3e} s",
                    self.dt * fastest,
                    STABILITY_LIMIT / fastest
                ),
            ));
        }
        Ok(())
    }
}
