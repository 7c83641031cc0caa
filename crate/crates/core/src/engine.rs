//! Stochastic second-order mean-field equations for Zeeman-split atomic
//! sub-ensembles in a driven, heterodyne-monitored cavity.
//!
//! The hierarchy is closed at second order: every third-order moment is
//! first brought to normal order (`<a a^+ X> = <a^+ a X> + <X>`) and then
//! replaced by [`cumulant_close`]. One scalar Wiener increment per step
//! drives the backaction on every moment and the photocurrent.

use std::ops::{Deref, DerefMut};

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::detection::{photocurrent_increment, NoiseStream, RecordMeta, StageMark, TrajectoryRecord};
use crate::error::{DivergenceSnapshot, Error, Result};
use crate::experiment::{apply_loss_injection, LossInjectionSpec};
use crate::model::{DriveStage, EnsembleSpec, PhysicalParams, SimulationGrid, StageKind, StageSchedule};
use crate::state::{CumulantState, IDX_A, IDX_AA, IDX_N};

const I: C64 = C64::new(0.0, 1.0);

/// Third-order cumulant closure:
/// `<opq> ~ <o><pq> + <p><oq> + <q><op> - 2<o><p><q>`.
#[inline]
pub fn cumulant_close(o: C64, p: C64, q: C64, op: C64, oq: C64, pq: C64) -> C64 {
    o * pq + p * oq + q * op - 2.0 * o * p * q
}

/// Right-hand side container with the same layout as [`CumulantState`].
#[derive(Debug, Clone, PartialEq)]
pub struct StateDerivative(CumulantState);

impl StateDerivative {
    pub fn zeros(k: usize) -> Self {
        StateDerivative(CumulantState::zeros(k))
    }

    pub fn into_inner(self) -> CumulantState {
        self.0
    }

    fn clear(&mut self) {
        for x in self.0.as_mut_slice() {
            *x = C64::new(0.0, 0.0);
        }
    }
}

impl Deref for StateDerivative {
    type Target = CumulantState;
    fn deref(&self) -> &CumulantState {
        &self.0
    }
}

impl DerefMut for StateDerivative {
    fn deref_mut(&mut self) -> &mut CumulantState {
        &mut self.0
    }
}

/// Source term `-i sqrt(kappa1) Omega^*(t) e^{-i omega_d t}` of `d<a>/dt`.
pub fn drive_source(params: &PhysicalParams, drive: Option<&DriveStage>, t: f64) -> C64 {
    match drive {
        None => C64::new(0.0, 0.0),
        Some(d) => {
            let omega = d.amplitude(t).conj();
            -I * params.kappa1.sqrt() * omega * C64::from_polar(1.0, -d.detuning_drive * t)
        }
    }
}

/// Per-ensemble coefficients reused by drift and diffusion.
#[derive(Clone, Copy)]
struct Coef {
    g: f64,
    /// `g N`
    gn: f64,
    /// `g max(N - 1, 0)` for two distinct atoms of the same ensemble.
    gn_self: f64,
    w: C64,
    gamma: f64,
}

fn coefficients(ensembles: &[EnsembleSpec]) -> impl Iterator<Item = Coef> + '_ {
    ensembles.iter().map(|e| Coef {
        g: e.coupling,
        gn: e.coupling * e.n_atoms.max(0.0),
        gn_self: e.coupling * (e.n_atoms - 1.0).max(0.0),
        w: e.complex_frequency(),
        gamma: e.gamma,
    })
}

fn check_finite(state: &CumulantState, t: f64) -> Result<()> {
    if state.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged {
            t,
            step: 0,
            snapshot: Box::new(DivergenceSnapshot {
                t,
                step: 0,
                last_finite: state.clone(),
            }),
        })
    }
}

/// Deterministic right-hand sides of every moment equation.
pub fn drift(
    state: &CumulantState,
    t: f64,
    params: &PhysicalParams,
    ensembles: &[EnsembleSpec],
    drive: Option<&DriveStage>,
    out: &mut StateDerivative,
) -> Result<()> {
    check_finite(state, t)?;
    let k = state.ensembles();
    debug_assert_eq!(k, ensembles.len());
    debug_assert_eq!(out.ensembles(), k);
    let lay = *state.layout();
    let co: Vec<Coef> = coefficients(ensembles).collect();
    let src = drive_source(params, drive, t);

    let a = state.a();
    let ac = a.conj();
    let n = C64::new(state.n(), 0.0);
    let aa = state.aa();
    let kappa = params.kappa();
    let wc = C64::new(params.detuning_cavity, -0.5 * kappa);

    let mut sum_s = C64::new(0.0, 0.0);
    let mut sum_p_im = 0.0;
    let mut sum_m = C64::new(0.0, 0.0);
    for (i, c) in co.iter().enumerate() {
        sum_s += c.gn * state.s(i);
        sum_p_im += c.gn * state.as_p(i).im;
        sum_m += c.gn * state.as_m(i);
    }

    let d = out.as_mut_slice();
    d[IDX_A] = -I * wc * a + src - I * sum_s;
    d[IDX_N] = C64::new(
        2.0 * (ac * src).re - kappa * n.re - 2.0 * sum_p_im,
        0.0,
    );
    d[IDX_AA] = -2.0 * I * wc * aa + 2.0 * src * a - 2.0 * I * sum_m;

    // Pair weight: g_j N_j for other ensembles, g_i (N_i - 1) within one.
    let weight = |j: usize, i: usize| if j == i { co[i].gn_self } else { co[j].gn };

    for i in 0..k {
        let c = co[i];
        let s = state.s(i);
        let sc = s.conj();
        let z = C64::new(state.z(i), 0.0);
        let p = state.as_p(i);
        let m = state.as_m(i);
        let az = state.as_z(i);

        let mut sum_sp = C64::new(0.0, 0.0);
        let mut sum_sm = C64::new(0.0, 0.0);
        let mut sum_sz = C64::new(0.0, 0.0);
        for j in 0..k {
            let w = weight(j, i);
            sum_sp += w * state.sp(j, i);
            sum_sm += w * state.sm(j, i);
            sum_sz += w * state.sz(j, i);
        }

        // <a^+ a sz>, <a a sz>, <a a s^+>, <a^+ a s^->
        let apa_z = cumulant_close(ac, a, z, n, az.conj(), az);
        let aa_z = cumulant_close(a, a, z, aa, az, az);
        let aa_sp = cumulant_close(a, a, sc, aa, p, p);
        let apa_sm = cumulant_close(ac, a, s, n, p.conj(), m);

        d[lay.s(i)] = -I * c.w * s + I * c.g * az;
        d[lay.z(i)] = C64::new(4.0 * c.g * p.im - c.gamma * (1.0 + z.re), 0.0);
        d[lay.as_p(i)] = I * (c.w.conj() - wc) * p + src * sc
            - I * (0.5 * c.g) * (1.0 - z)
            - I * sum_sp
            - I * c.g * (apa_z + z);
        d[lay.as_m(i)] = -I * (wc + c.w) * m + src * s - I * sum_sm + I * c.g * aa_z;
        d[lay.as_z(i)] = -I * wc * az + src * z
            - I * c.g * s
            - I * sum_sz
            - 2.0 * I * c.g * (aa_sp - (apa_sm + s))
            - c.gamma * (a + az);
    }

    for i in 0..k {
        let ci = co[i];
        let si = state.s(i);
        let zi = C64::new(state.z(i), 0.0);
        let pi = state.as_p(i);
        let mi = state.as_m(i);
        let azi = state.as_z(i);
        for j in 0..k {
            let cj = co[j];
            let sj = state.s(j);
            let zj = C64::new(state.z(j), 0.0);
            let pj = state.as_p(j);
            let mj = state.as_m(j);
            let azj = state.as_z(j);
            let sp = state.sp(j, i);
            let sm = state.sm(j, i);
            let sz_ji = state.sz(j, i);
            let sz_ij = state.sz(i, j);
            let zz = C64::new(state.zz(j, i), 0.0);

            // <a sz_j sp_i>, <a^+ sm_j sz_i>, <a sz_j sz_i>, <a sm_j sp_i>, <a^+ sm_j sm_i>
            let t_a_zj_pi = cumulant_close(a, zj, si.conj(), azj, pi, sz_ij.conj());
            let t_ad_mj_zi = cumulant_close(ac, sj, zi, pj.conj(), azi.conj(), sz_ji);
            let t_a_zj_zi = cumulant_close(a, zj, zi, azj, azi, zz);
            let t_a_mj_pi = cumulant_close(a, sj, si.conj(), mj, pi, sp);
            let t_ad_mj_mi = cumulant_close(ac, sj, si, pj.conj(), pi.conj(), sm);

            d[lay.sz(j, i)] = -I * cj.w * sz_ji + I * cj.g * t_a_zj_zi
                - 2.0 * I * ci.g * (t_a_mj_pi - t_ad_mj_mi)
                - ci.gamma * (sj + sz_ji);

            if j > i {
                continue;
            }
            // <a sm_j sz_i>, <a sz_j sm_i>, <a sp_j sz_i>
            let t_a_mj_zi = cumulant_close(a, sj, zi, mj, azi, sz_ji);
            let t_a_zj_mi = cumulant_close(a, zj, si, azj, mi, sz_ij);
            let t_a_pj_zi = cumulant_close(a, sj.conj(), zi, pj, azi, sz_ji.conj());

            d[lay.sp(j, i)] = -I * (cj.w - ci.w.conj()) * sp + I * cj.g * t_a_zj_pi
                - I * ci.g * t_ad_mj_zi;
            d[lay.sm(j, i)] =
                -I * (ci.w + cj.w) * sm + I * ci.g * t_a_mj_zi + I * cj.g * t_a_zj_mi;
            d[lay.zz(j, i)] = C64::new(
                4.0 * ci.g * t_a_zj_pi.im + 4.0 * cj.g * t_a_pj_zi.im
                    - ci.gamma * (zj.re + zz.re)
                    - cj.gamma * (zi.re + zz.re),
                0.0,
            );
        }
    }
    Ok(())
}

/// Coefficient of `dW` in every moment equation.
///
/// For a moment `<o>` this is
/// `sqrt(eta kappa2) [e^{-i Delta t}(<o a> - <o><a>) + e^{i Delta t}(<a^+ o> - <a>^*<o>)]`
/// with third-order moments closed as in [`drift`].
pub fn diffusion(
    state: &CumulantState,
    t: f64,
    params: &PhysicalParams,
    out: &mut StateDerivative,
) {
    let c = params.measurement_rate_sqrt();
    if c == 0.0 {
        out.clear();
        return;
    }
    let k = state.ensembles();
    let lay = *state.layout();
    let u = C64::from_polar(c, -params.delta_het * t);
    let uc = u.conj();

    let a = state.a();
    let ac = a.conj();
    let n = C64::new(state.n(), 0.0);
    let aa = state.aa();

    let d = out.as_mut_slice();
    d[IDX_A] = u * (aa - a * a) + uc * (n - a * ac);
    let ad_ad_a = cumulant_close(ac, ac, a, aa.conj(), n, n);
    d[IDX_N] = C64::new(2.0 * (uc * (ad_ad_a - ac * n)).re, 0.0);
    let a3 = cumulant_close(a, a, a, aa, aa, aa);
    let ad_a_a = cumulant_close(ac, a, a, n, n, aa);
    d[IDX_AA] = u * (a3 - aa * a) + uc * (ad_a_a - ac * aa);

    for i in 0..k {
        let s = state.s(i);
        let sc = s.conj();
        let z = C64::new(state.z(i), 0.0);
        let p = state.as_p(i);
        let m = state.as_m(i);
        let az = state.as_z(i);

        d[lay.s(i)] = u * (m - s * a) + uc * (p.conj() - ac * s);
        d[lay.z(i)] = C64::new(2.0 * (u * (az - z * a)).re, 0.0);

        let aa_sp = cumulant_close(a, a, sc, aa, p, p);
        let ad_a_sp = cumulant_close(ac, a, sc, n, m.conj(), p);
        d[lay.as_p(i)] = u * (aa_sp - p * a) + uc * (ad_a_sp - ac * p);

        let aa_sm = cumulant_close(a, a, s, aa, m, m);
        let ad_a_sm = cumulant_close(ac, a, s, n, p.conj(), m);
        d[lay.as_m(i)] = u * (aa_sm - m * a) + uc * (ad_a_sm - ac * m);

        let aa_z = cumulant_close(a, a, z, aa, az, az);
        let ad_a_z = cumulant_close(ac, a, z, n, az.conj(), az);
        d[lay.as_z(i)] = u * (aa_z - az * a) + uc * (ad_a_z - ac * az);
    }

    for i in 0..k {
        let si = state.s(i);
        let zi = C64::new(state.z(i), 0.0);
        let pi = state.as_p(i);
        let mi = state.as_m(i);
        let azi = state.as_z(i);
        for j in 0..k {
            let sj = state.s(j);
            let zj = C64::new(state.z(j), 0.0);
            let pj = state.as_p(j);
            let mj = state.as_m(j);
            let azj = state.as_z(j);
            let sz = state.sz(j, i);

            let a_mj_zi = cumulant_close(a, sj, zi, mj, azi, sz);
            let ad_mj_zi = cumulant_close(ac, sj, zi, pj.conj(), azi.conj(), sz);
            d[lay.sz(j, i)] = u * (a_mj_zi - sz * a) + uc * (ad_mj_zi - ac * sz);

            if j > i {
                continue;
            }
            let sp = state.sp(j, i);
            let sm = state.sm(j, i);
            let zz = C64::new(state.zz(j, i), 0.0);

            let a_mj_pi = cumulant_close(a, sj, si.conj(), mj, pi, sp);
            let ad_mj_pi = cumulant_close(ac, sj, si.conj(), pj.conj(), mi.conj(), sp);
            d[lay.sp(j, i)] = u * (a_mj_pi - sp * a) + uc * (ad_mj_pi - ac * sp);

            let a_mj_mi = cumulant_close(a, sj, si, mj, mi, sm);
            let ad_mj_mi = cumulant_close(ac, sj, si, pj.conj(), pi.conj(), sm);
            d[lay.sm(j, i)] = u * (a_mj_mi - sm * a) + uc * (ad_mj_mi - ac * sm);

            let a_zj_zi = cumulant_close(a, zj, zi, azj, azi, zz);
            d[lay.zz(j, i)] = C64::new(2.0 * (u * (a_zj_zi - zz * a)).re, 0.0);
        }
    }
}

/// How the Euler-Maruyama increment is applied to second-order moments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Euler-Maruyama on first moments and on the cumulants
    /// `<xy> - <x><y>`. Equivalent to the raw update plus
    /// `dx dy - dt b_x b_y` on every second-order moment, which keeps a
    /// coherent field coherent while it decays.
    #[default]
    Cumulant,
    /// Euler-Maruyama on the raw moments. The product error
    /// `|a|^2 (kappa dt)^2 / 4` per step feeds a spurious negative field
    /// variance that the backaction amplifies; kept for comparison.
    RawMoments,
}

/// Reusable step buffers.
#[derive(Debug, Clone)]
pub struct Stepper {
    pub scheme: Scheme,
    prev: CumulantState,
    /// Increments of `a`, `s_i`, `z_i` in this step.
    delta: Vec<C64>,
    /// Their noise coefficients.
    coef: Vec<C64>,
}

impl Stepper {
    pub fn new(k: usize, scheme: Scheme) -> Self {
        Stepper {
            scheme,
            prev: CumulantState::zeros(k),
            delta: vec![C64::new(0.0, 0.0); 1 + 2 * k],
            coef: vec![C64::new(0.0, 0.0); 1 + 2 * k],
        }
    }

    /// Advances `state` by one step; on a non-finite result the state is
    /// rolled back and the error carries it.
    pub fn advance(
        &mut self,
        state: &mut CumulantState,
        drift: &StateDerivative,
        dt: f64,
        noise: Option<(&StateDerivative, f64)>,
        t: f64,
    ) -> Result<()> {
        self.prev.as_mut_slice().copy_from_slice(state.as_slice());
        match noise {
            Some((diff, dw)) => {
                for ((x, f), b) in state
                    .as_mut_slice()
                    .iter_mut()
                    .zip(drift.as_slice())
                    .zip(diff.as_slice())
                {
                    *x += f * dt + b * dw;
                }
            }
            None => state.axpy(dt, drift),
        }
        if self.scheme == Scheme::Cumulant {
            self.product_correction(state, dt, noise.map(|(d, _)| d));
        }
        state.symmetrize();
        if state.is_finite() {
            Ok(())
        } else {
            std::mem::swap(state, &mut self.prev);
            Err(Error::Diverged {
                t,
                step: 0,
                snapshot: Box::new(DivergenceSnapshot {
                    t,
                    step: 0,
                    last_finite: state.clone(),
                }),
            })
        }
    }

    /// Adds `dx dy - dt b_x b_y` to every second-order moment `<xy>`.
    fn product_correction(&mut self, state: &mut CumulantState, dt: f64, diff: Option<&StateDerivative>) {
        let k = state.ensembles();
        let lay = *state.layout();
        let (now, before) = (state.as_slice(), self.prev.as_slice());
        let first = |slot: usize| match slot {
            0 => IDX_A,
            s if s <= k => lay.s(s - 1),
            s => lay.z(s - 1 - k),
        };
        for slot in 0..1 + 2 * k {
            let idx = first(slot);
            self.delta[slot] = now[idx] - before[idx];
            self.coef[slot] = diff.map_or(C64::new(0.0, 0.0), |d| d.as_slice()[idx] * dt.sqrt());
        }
        let (d, b) = (&self.delta, &self.coef);
        // dx dy - (sqrt(dt) b_x)(sqrt(dt) b_y)
        let pp = |x: usize, y: usize| d[x] * d[y] - b[x] * b[y];
        let pc = |x: usize, y: usize| d[x] * d[y].conj() - b[x] * b[y].conj();
        let (ia, is, iz) = (0, |i: usize| 1 + i, |i: usize| 1 + k + i);
        let data = state.as_mut_slice();
        data[IDX_N] += d[ia].norm_sqr() - b[ia].norm_sqr();
        data[IDX_AA] += pp(ia, ia);
        for i in 0..k {
            data[lay.as_p(i)] += pc(ia, is(i));
            data[lay.as_m(i)] += pp(ia, is(i));
            data[lay.as_z(i)] += pp(ia, iz(i));
            for j in 0..k {
                data[lay.sz(j, i)] += pp(is(j), iz(i));
            }
            for j in 0..=i {
                data[lay.sp(j, i)] += pc(is(j), is(i));
                data[lay.sm(j, i)] += pp(is(j), is(i));
                data[lay.zz(j, i)] += pp(iz(j), iz(i));
            }
        }
    }
}

/// One step with the default [`Scheme`]:
/// `state += drift dt + diffusion dW` (plus the cumulant correction).
pub fn step(
    state: &mut CumulantState,
    drift: &StateDerivative,
    dt: f64,
    noise: Option<(&StateDerivative, f64)>,
    t: f64,
) -> Result<()> {
    Stepper::new(state.ensembles(), Scheme::Cumulant).advance(state, drift, dt, noise, t)
}

/// Fully validated inputs for one trajectory.
#[derive(Debug, Clone)]
pub struct Engine {
    pub params: PhysicalParams,
    pub ensembles: Vec<EnsembleSpec>,
    pub schedule: StageSchedule,
    pub grid: SimulationGrid,
    pub initial: CumulantState,
    /// Backaction on/off. The photocurrent is recorded either way.
    pub monitored: bool,
    pub scheme: Scheme,
    pub loss: Option<LossInjectionSpec>,
    /// Content hash of the originating configuration, copied into records.
    pub config_hash: String,
}

/// Everything the step loop exposes to an observer.
pub struct StepView<'a> {
    pub step: u64,
    pub t: f64,
    pub state: &'a CumulantState,
    pub ensembles: &'a [EnsembleSpec],
}

impl Engine {
    pub fn new(
        params: PhysicalParams,
        ensembles: Vec<EnsembleSpec>,
        schedule: StageSchedule,
        grid: SimulationGrid,
        initial: CumulantState,
    ) -> Result<Self> {
        params.validate()?;
        if initial.ensembles() != ensembles.len() {
            return Err(Error::config(
                "initial",
                "initial state does not match the number of ensembles",
            ));
        }
        schedule.steps_per_stage(grid.dt)?;
        grid.validate(&params, &ensembles, &schedule)?;
        Ok(Engine {
            params,
            ensembles,
            schedule,
            grid,
            initial,
            monitored: true,
            scheme: Scheme::default(),
            loss: None,
            config_hash: String::new(),
        })
    }

    pub fn with_monitoring(mut self, monitored: bool) -> Self {
        self.monitored = monitored;
        self
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn with_loss(mut self, loss: Option<LossInjectionSpec>) -> Self {
        self.loss = loss;
        self
    }

    pub fn with_config_hash(mut self, hash: impl Into<String>) -> Self {
        self.config_hash = hash.into();
        self
    }

    pub fn channel_names(&self) -> Vec<String> {
        let mut names: Vec<String> = ["n", "re_a", "im_a"].iter().map(|s| s.to_string()).collect();
        for e in &self.ensembles {
            names.push(format!("z_mF_{}", e.label()));
        }
        for e in &self.ensembles {
            names.push(format!("re_as_p_mF_{}", e.label()));
            names.push(format!("im_as_p_mF_{}", e.label()));
        }
        if self.loss.is_some() {
            for e in &self.ensembles {
                names.push(format!("N_mF_{}", e.label()));
            }
        }
        names
    }

    fn sample_channels(&self, st: &CumulantState, ens: &[EnsembleSpec], out: &mut Vec<f64>) {
        out.clear();
        out.push(st.n());
        out.push(st.a().re);
        out.push(st.a().im);
        for i in 0..ens.len() {
            out.push(st.z(i));
        }
        for i in 0..ens.len() {
            out.push(st.as_p(i).re);
            out.push(st.as_p(i).im);
        }
        if self.loss.is_some() {
            out.extend(ens.iter().map(|e| e.n_atoms));
        }
    }

    fn meta(&self, seed: u64) -> RecordMeta {
        let mut marks = Vec::with_capacity(self.schedule.stages.len());
        let mut start = 0.0;
        for st in &self.schedule.stages {
            let end = start + st.duration();
            marks.push(StageMark {
                kind: match st.kind {
                    StageKind::Drive(_) => "drive".into(),
                    StageKind::Emit { .. } => "emit".into(),
                },
                start_s: start,
                end_s: end,
                detect: st.detect,
            });
            start = end;
        }
        RecordMeta {
            format_version: 1,
            config_hash: self.config_hash.clone(),
            seed,
            rng: crate::detection::RNG_ALGORITHM.to_string(),
            dt_s: self.grid.dt,
            sample_dt_s: self.grid.sample_dt,
            delta_het_hz: self.params.delta_het / std::f64::consts::TAU,
            monitored: self.monitored,
            ensembles: self.ensembles.iter().map(|e| e.label()).collect(),
            stages: marks,
            initial_n: self.initial.n(),
            initial_z: (0..self.ensembles.len()).map(|i| self.initial.z(i)).collect(),
        }
    }

    /// Runs the whole schedule and returns the sampled record.
    pub fn integrate(&self, seed: u64) -> Result<TrajectoryRecord> {
        self.integrate_observed(seed, |_| {})
    }

    /// Like [`Engine::integrate`], calling `observer` after every step.
    pub fn integrate_observed<F>(&self, seed: u64, mut observer: F) -> Result<TrajectoryRecord>
    where
        F: FnMut(&StepView<'_>),
    {
        let k = self.ensembles.len();
        let dt = self.grid.dt;
        let steps = self.schedule.steps_per_stage(dt)?;
        let spp = self.grid.steps_per_sample();
        let sample_dt = spp as f64 * dt;

        let mut record = TrajectoryRecord::new(self.meta(seed), self.channel_names());
        let mut st = self.initial.clone();
        let mut ens = self.ensembles.clone();
        let mut noise = NoiseStream::new(seed, dt);
        let mut drift_buf = StateDerivative::zeros(k);
        let mut diff_buf = StateDerivative::zeros(k);
        let mut stepper = Stepper::new(k, self.scheme);
        let mut row = Vec::new();

        let mut counter: u64 = 0;
        let mut in_bin: u64 = 0;
        let mut bin_current = 0.0;
        for (stage, &n_steps) in self.schedule.stages.iter().zip(&steps) {
            let drive = stage.drive();
            for _ in 0..n_steps {
                let t = counter as f64 * dt;
                drift(&st, t, &self.params, &ens, drive, &mut drift_buf)
                    .map_err(|e| with_step(e, counter))?;
                let mut backaction = None;
                if stage.detect {
                    let dw = noise.increment(counter);
                    bin_current += photocurrent_increment(&st, t, dt, dw, &self.params);
                    if self.monitored {
                        diffusion(&st, t, &self.params, &mut diff_buf);
                        backaction = Some((&diff_buf, dw));
                    }
                }
                stepper
                    .advance(&mut st, &drift_buf, dt, backaction, t)
                    .map_err(|e| with_step(e, counter))?;
                if let Some(loss) = &self.loss {
                    apply_loss_injection(&mut st, &mut ens, loss, dt);
                }
                counter += 1;
                observer(&StepView {
                    step: counter,
                    t: counter as f64 * dt,
                    state: &st,
                    ensembles: &ens,
                });
                in_bin += 1;
                if in_bin == spp {
                    self.sample_channels(&st, &ens, &mut row);
                    record.push(counter as f64 * dt, bin_current / sample_dt, &row);
                    in_bin = 0;
                    bin_current = 0.0;
                }
            }
        }
        Ok(record)
    }
}

fn with_step(err: Error, step: u64) -> Error {
    match err {
        Error::Diverged { t, mut snapshot, .. } => {
            snapshot.step = step;
            Error::Diverged { t, step, snapshot }
        }
        other => other,
    }
}
