//! TOML run configuration. Frequencies are entered in Hz and converted to
//! angular rates on resolution; drive strengths are given as the number
//! `Omega_m / 2 pi`.

use std::f64::consts::TAU;
use std::path::Path;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::AnalysisSpec;
use crate::engine::{Engine, Scheme};
use crate::error::{Error, Result};
use crate::experiment::{BatchSpec, InjectedState, LossInjectionSpec, SweepSpec, SweepVariable};
use crate::model::{
    build_ensembles, initial_moments, AtomMoments, DriveStage, EnsembleSpec, Envelope, HalfInt, InitialStateSpec,
    PhysicalParams, SimulationGrid, Stage, StageKind, StageSchedule,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub name: String,
    /// `false` switches the measurement backaction off.
    #[serde(default = "yes")]
    pub monitored: bool,
    #[serde(default)]
    pub physics: PhysicsSection,
    pub atoms: AtomsSection,
    pub stages: Vec<StageSection>,
    #[serde(default)]
    pub initial: InitialSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub analysis: AnalysisSpec,
    #[serde(default)]
    pub batch: BatchSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_injection: Option<LossSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysicsSection {
    pub kappa1_hz: f64,
    pub kappa2_hz: f64,
    pub g0_hz: f64,
    pub gamma0_hz: f64,
    pub eta: f64,
    pub delta_het_hz: f64,
    pub clock_freq_hz: f64,
    pub cavity_detuning_hz: f64,
    pub atom_detuning_hz: f64,
}

impl Default for PhysicsSection {
    fn default() -> Self {
        PhysicsSection {
            kappa1_hz: 72.5e3,
            kappa2_hz: 72.5e3,
            g0_hz: 2.41,
            gamma0_hz: 1e-3,
            eta: 0.12,
            delta_het_hz: 1e3,
            clock_freq_hz: 429.5e12,
            cavity_detuning_hz: 0.0,
            atom_detuning_hz: 0.0,
        }
    }
}

impl PhysicsSection {
    pub fn params(&self) -> PhysicalParams {
        PhysicalParams {
            kappa1: TAU * self.kappa1_hz,
            kappa2: TAU * self.kappa2_hz,
            g0: TAU * self.g0_hz,
            gamma0: TAU * self.gamma0_hz,
            eta: self.eta,
            delta_het: TAU * self.delta_het_hz,
            omega_a_abs: TAU * self.clock_freq_hz,
            detuning_cavity: TAU * self.cavity_detuning_hz,
            detuning_atom: TAU * self.atom_detuning_hz,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomsSection {
    #[serde(default = "default_spin_f")]
    pub spin_f: f64,
    #[serde(default)]
    pub b_field_gauss: f64,
    pub occupied_mf: Vec<f64>,
    pub n_total: f64,
}

fn default_spin_f() -> f64 {
    4.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StageSection {
    Drive {
        duration_s: f64,
        /// `Omega_m / 2 pi`.
        omega_m: f64,
        #[serde(default)]
        drive_detuning_hz: f64,
        #[serde(default)]
        phase_rad: f64,
        #[serde(default)]
        envelope: Envelope,
        #[serde(default)]
        detect: bool,
    },
    Emit {
        duration_s: f64,
        #[serde(default = "yes")]
        detect: bool,
    },
}

impl StageSection {
    fn stage(&self) -> Stage {
        match *self {
            StageSection::Drive {
                duration_s,
                omega_m,
                drive_detuning_hz,
                phase_rad,
                envelope,
                detect,
            } => Stage {
                kind: StageKind::Drive(DriveStage {
                    duration: duration_s,
                    omega_m: TAU * omega_m,
                    detuning_drive: TAU * drive_detuning_hz,
                    phase: phase_rad,
                    envelope,
                }),
                detect,
            },
            StageSection::Emit { duration_s, detect } => Stage {
                kind: StageKind::Emit { duration: duration_s },
                detect,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitAtom {
    pub z: f64,
    #[serde(default)]
    pub s_re: f64,
    #[serde(default)]
    pub s_im: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSection {
    #[default]
    Ground,
    Angle {
        theta: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        theta_per_ensemble: Option<Vec<f64>>,
    },
    Explicit {
        atoms: Vec<ExplicitAtom>,
    },
}

impl InitialSection {
    pub fn spec(&self) -> InitialStateSpec {
        match self {
            InitialSection::Ground => InitialStateSpec::Ground,
            InitialSection::Angle {
                theta,
                theta_per_ensemble,
            } => InitialStateSpec::Angle {
                theta: *theta,
                per_ensemble: theta_per_ensemble.clone(),
            },
            InitialSection::Explicit { atoms } => InitialStateSpec::Explicit(
                atoms
                    .iter()
                    .map(|a| AtomMoments {
                        z: a.z,
                        s: C64::new(a.s_re, a.s_im),
                    })
                    .collect(),
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub dt_s: f64,
    pub sample_dt_s: f64,
    pub seed: u64,
    pub scheme: Scheme,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            dt_s: 1e-7,
            sample_dt_s: 2e-5,
            seed: 1,
            scheme: Scheme::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BatchSection {
    pub n_trajectories: usize,
    pub master_seed: u64,
    pub t_c_s: f64,
    pub groups: usize,
    /// 0 uses every available core.
    pub workers: usize,
    /// Keep full time series of every trajectory.
    pub keep_records: bool,
}

impl Default for BatchSection {
    fn default() -> Self {
        BatchSection {
            n_trajectories: 120,
            master_seed: 1,
            t_c_s: 1.1,
            groups: 3,
            workers: 0,
            keep_records: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSection {
    pub gamma_los: f64,
    /// Injection rate summed over all ensembles (atoms/s).
    pub lambda_inj_total: f64,
    #[serde(default)]
    pub injected_state: InjectedState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
}

/// Everything needed to run, resolved from a [`Config`].
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: Config,
    /// SHA-256 of the resolved config as JSON.
    pub hash: String,
    pub params: PhysicalParams,
    pub ensembles: Vec<EnsembleSpec>,
    pub schedule: StageSchedule,
    pub grid: SimulationGrid,
    pub initial: InitialStateSpec,
    pub analysis: AnalysisSpec,
    pub batch: BatchSpec,
    pub loss: Option<LossInjectionSpec>,
    pub sweep: Option<SweepSpec>,
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| Error::config("<document>", e.message().trim()))?;
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let msg = e.inner().message().trim().to_string();
            Error::config(key_of(&path, &msg), msg)
        })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("--config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn preset(name: &str) -> Result<Self> {
        let text = preset_text(name).ok_or_else(|| {
            Error::config(
                "--preset",
                format!("unknown preset `{name}`; available: {}", PRESET_NAMES.join(", ")),
            )
        })?;
        Self::from_toml_str(text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }

    pub fn resolve(&self) -> Result<Scenario> {
        let params = self.physics.params();
        params.validate()?;
        let spin_f = HalfInt::from_f64(self.atoms.spin_f)
            .ok_or_else(|| Error::config("atoms.spin_f", "must be a half-integer"))?;
        let occupied = self
            .atoms
            .occupied_mf
            .iter()
            .map(|&m| {
                HalfInt::from_f64(m).ok_or_else(|| Error::config("atoms.occupied_mf", format!("{m} is not a half-integer")))
            })
            .collect::<Result<Vec<_>>>()?;
        let ensembles = build_ensembles(spin_f, self.atoms.b_field_gauss, &occupied, self.atoms.n_total, &params)?;
        let schedule = StageSchedule::new(self.stages.iter().map(StageSection::stage).collect());
        for (k, s) in self.stages.iter().enumerate() {
            let phase = match s {
                StageSection::Drive { phase_rad, drive_detuning_hz, .. } => {
                    if !drive_detuning_hz.is_finite() {
                        return Err(Error::config(format!("stages[{k}].drive_detuning_hz"), "must be finite"));
                    }
                    *phase_rad
                }
                StageSection::Emit { .. } => 0.0,
            };
            if !phase.is_finite() {
                return Err(Error::config(format!("stages[{k}].phase_rad"), "must be finite"));
            }
        }
        let grid = SimulationGrid {
            dt: self.grid.dt_s,
            sample_dt: self.grid.sample_dt_s,
            seed: self.grid.seed,
        };
        grid.validate(&params, &ensembles, &schedule)?;
        schedule.validate(grid.dt)?;
        let initial = self.initial.spec();
        initial.atom_moments(ensembles.len())?;
        self.analysis.validate()?;

        let b = &self.batch;
        let batch = BatchSpec {
            n_trajectories: b.n_trajectories,
            master_seed: b.master_seed,
            t_c: b.t_c_s,
            groups: b.groups,
            workers: b.workers,
            keep_records: b.keep_records,
        };
        batch.validate(schedule.total_duration())?;

        let loss = match &self.loss_injection {
            None => None,
            Some(l) => {
                let spec = LossInjectionSpec {
                    gamma_los: l.gamma_los,
                    lambda_inj: l.lambda_inj_total / ensembles.len() as f64,
                    injected_state: l.injected_state,
                };
                spec.validate()?;
                Some(spec)
            }
        };
        let sweep = match &self.sweep {
            None => None,
            Some(s) => {
                let spec = SweepSpec {
                    variable: s.variable,
                    values: s.values.clone(),
                };
                spec.validate()?;
                Some(spec)
            }
        };

        Ok(Scenario {
            config: self.clone(),
            hash: self.hash(),
            params,
            ensembles,
            schedule,
            grid,
            initial,
            analysis: self.analysis,
            batch,
            loss,
            sweep,
        })
    }
}

/// Dotted key from a serde path plus the field named in an unknown-field message.
fn key_of(path: &str, msg: &str) -> String {
    let field = msg
        .strip_prefix("unknown field `")
        .and_then(|rest| rest.split('`').next());
    let base = if path == "." { "" } else { path };
    match field {
        Some(f) if base.is_empty() => f.to_string(),
        Some(f) if !base.ends_with(f) => format!("{base}.{f}"),
        _ if base.is_empty() => "<document>".to_string(),
        _ => base.to_string(),
    }
}

impl Scenario {
    pub fn engine(&self) -> Result<Engine> {
        let init = initial_moments(&self.initial, &self.ensembles)?;
        Ok(Engine::new(
            self.params,
            self.ensembles.clone(),
            self.schedule.clone(),
            self.grid,
            init,
        )?
        .with_monitoring(self.config.monitored)
        .with_scheme(self.config.grid.scheme)
        .with_loss(self.loss)
        .with_config_hash(self.hash.clone()))
    }
}

pub const PRESET_NAMES: [&str; 4] = [
    "fig2_ten_ensembles",
    "fig3_two_ensembles",
    "optimized_long_pulse",
    "loss_injection",
];

/// Source text of an embedded preset.
pub fn preset_text(name: &str) -> Option<&'static str> {
    Some(match name {
        "fig2_ten_ensembles" => include_str!("../presets/fig2_ten_ensembles.toml"),
        "fig3_two_ensembles" => include_str!("../presets/fig3_two_ensembles.toml"),
        "optimized_long_pulse" => include_str!("../presets/optimized_long_pulse.toml"),
        "loss_injection" => include_str!("../presets/loss_injection.toml"),
        _ => return None,
    })
}
