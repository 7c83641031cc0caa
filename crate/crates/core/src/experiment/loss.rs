use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AtomMoments, EnsembleSpec};
use crate::state::CumulantState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InjectedState {
    #[default]
    Excited,
    Ground,
}

impl InjectedState {
    pub fn moments(self) -> AtomMoments {
        match self {
            InjectedState::Excited => AtomMoments::excited(),
            InjectedState::Ground => AtomMoments::ground(),
        }
    }
}

/// `dN_i/dt = -gamma_los N_i + lambda_inj`, applied to every ensemble.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossInjectionSpec {
    pub gamma_los: f64,
    /// Injection rate per ensemble (atoms/s).
    pub lambda_inj: f64,
    pub injected_state: InjectedState,
}

impl LossInjectionSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_los >= 0.0) || !self.gamma_los.is_finite() {
            return Err(Error::config("loss_injection.gamma_los", "must be finite and >= 0"));
        }
        if !(self.lambda_inj >= 0.0) || !self.lambda_inj.is_finite() {
            return Err(Error::config("loss_injection.lambda_inj_total", "must be finite and >= 0"));
        }
        Ok(())
    }

    /// Steady-state atom number per ensemble, `None` without loss.
    pub fn steady_state(&self) -> Option<f64> {
        (self.gamma_los > 0.0).then(|| self.lambda_inj / self.gamma_los)
    }
}

/// One forward-Euler step of the atom-number rate equation plus relaxation
/// of the per-atom moments toward the injected atom.
///
/// A fraction `lambda dt / N` of ensemble `i` is replaced by fresh atoms, so
/// every moment involving one atom of `i` moves toward its value with that
/// atom swapped for the injected one. Loss removes atoms without bias and
/// leaves per-atom moments alone.
pub fn apply_loss_injection(
    state: &mut CumulantState,
    ensembles: &mut [EnsembleSpec],
    spec: &LossInjectionSpec,
    dt: f64,
) {
    let k = ensembles.len();
    if spec.gamma_los == 0.0 && spec.lambda_inj == 0.0 {
        return;
    }
    let inj = spec.injected_state.moments();
    let rates: Vec<f64> = ensembles
        .iter()
        .map(|e| {
            if spec.lambda_inj == 0.0 {
                0.0
            } else if e.n_atoms > 0.0 {
                (spec.lambda_inj * dt / e.n_atoms).min(1.0)
            } else {
                1.0
            }
        })
        .collect();

    if rates.iter().any(|&r| r > 0.0) {
        let old = state.clone();
        let a = old.a();
        for i in 0..k {
            let r = rates[i];
            if r == 0.0 {
                continue;
            }
            state.set_s(i, old.s(i) + r * (inj.s - old.s(i)));
            state.set_z(i, old.z(i) + r * (inj.z - old.z(i)));
            state.set_as_p(i, old.as_p(i) + r * (a * inj.s.conj() - old.as_p(i)));
            state.set_as_m(i, old.as_m(i) + r * (a * inj.s - old.as_m(i)));
            state.set_as_z(i, old.as_z(i) + r * (a * inj.z - old.as_z(i)));
        }
        let zs: Vec<f64> = (0..k).map(|i| old.z(i)).collect();
        let ss: Vec<C64> = (0..k).map(|i| old.s(i)).collect();
        for i in 0..k {
            for j in 0..k {
                let (rj, ri) = (rates[j], rates[i]);
                if rj == 0.0 && ri == 0.0 {
                    continue;
                }
                // Mixture over which of the two atoms were replaced.
                let w = [(1.0 - rj) * (1.0 - ri), rj * (1.0 - ri), (1.0 - rj) * ri, rj * ri];
                let mix = |x: C64, j_new: C64, i_new: C64, both: C64| {
                    w[0] * x + w[1] * j_new + w[2] * i_new + w[3] * both
                };
                let sz = mix(old.sz(j, i), inj.s * zs[i], ss[j] * inj.z, inj.s * inj.z);
                state.set_sz(j, i, sz);
                if j <= i {
                    let sp = mix(
                        old.sp(j, i),
                        inj.s * ss[i].conj(),
                        ss[j] * inj.s.conj(),
                        inj.s * inj.s.conj(),
                    );
                    state.set_sp(j, i, sp);
                    let sm = mix(old.sm(j, i), inj.s * ss[i], ss[j] * inj.s, inj.s * inj.s);
                    state.set_sm(j, i, sm);
                    let zz = mix(
                        C64::new(old.zz(j, i), 0.0),
                        C64::new(inj.z * zs[i], 0.0),
                        C64::new(zs[j] * inj.z, 0.0),
                        C64::new(inj.z * inj.z, 0.0),
                    );
                    state.set_zz(j, i, zz.re);
                }
            }
        }
    }

    for e in ensembles.iter_mut() {
        let next = e.n_atoms + (-spec.gamma_los * e.n_atoms + spec.lambda_inj) * dt;
        e.n_atoms = if next > 0.0 { next } else { 0.0 };
    }
}
