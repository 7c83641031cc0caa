//! Closed-form checks for the engine.

use crate::model::HalfInt;

fn cg(spin_f: HalfInt) -> f64 {
    let f = spin_f.value();
    (f * (f + 1.0)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rabi {
    /// Excited population after drive time `t`.
    pub p_e: f64,
    /// `sqrt(delta_b^2 + |2 a g0 / sqrt(F(F+1))|^2)`; the transition oscillates at `|m_F|` times this.
    pub omega0: f64,
}

/// Two-level Rabi problem of one `m_F` transition driven by a constant
/// cavity amplitude `a_cav`. Rates in rad/s.
pub fn rabi_oracle(a_cav: f64, g0: f64, spin_f: HalfInt, m_f: HalfInt, delta_b: f64, t: f64) -> Rabi {
    let nu = a_cav * m_f.value() * g0 / cg(spin_f);
    let omega0 = (delta_b.powi(2) + (2.0 * a_cav * g0 / cg(spin_f)).powi(2)).sqrt();
    let omega = m_f.value().abs() * omega0;
    let p_e = if omega == 0.0 {
        0.0
    } else {
        (2.0 * nu / omega).powi(2) * (0.5 * omega * t).sin().powi(2)
    };
    Rabi { p_e, omega0 }
}

/// `4 (m_F g0 / sqrt(F(F+1)))^2 kappa / (m_F^2 delta_b^2 + kappa^2)`, rad/s.
pub fn purcell_rate(m_f: HalfInt, g0: f64, spin_f: HalfInt, delta_b: f64, kappa: f64) -> f64 {
    let m = m_f.value();
    let g = m * g0 / cg(spin_f);
    4.0 * g * g * kappa / (m * m * delta_b * delta_b + kappa * kappa)
}

/// Photon number of the empty cavity under resonant drive, `|2 sqrt(kappa1) omega_m / kappa|^2`.
pub fn driven_photon_number(kappa1: f64, kappa: f64, omega_m: f64) -> f64 {
    (2.0 * kappa1.sqrt() * omega_m / kappa).powi(2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SPIN_F_SR87;
    use std::f64::consts::PI;

    const G0: f64 = 2.0 * PI * 2.41;
    const KAPPA: f64 = 2.0 * PI * 145e3;

    fn m(twice: i32) -> HalfInt {
        HalfInt::from_twice(twice)
    }

    #[test]
    fn rabi_starts_empty() {
        assert_eq!(rabi_oracle(50.0, G0, SPIN_F_SR87, m(9), 2.0 * PI * 100.0, 0.0).p_e, 0.0);
    }

    #[test]
    fn resonant_rabi_reaches_full_contrast() {
        let r = rabi_oracle(70.0, G0, SPIN_F_SR87, m(5), 0.0, 0.0);
        let t_pi = PI / (2.5 * r.omega0);
        let p = rabi_oracle(70.0, G0, SPIN_F_SR87, m(5), 0.0, t_pi).p_e;
        assert!((p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rabi_contrast_independent_of_m() {
        let db = 2.0 * PI * 166.0;
        let peak = |tw: i32| {
            let r = rabi_oracle(70.0, G0, SPIN_F_SR87, m(tw), db, 0.0);
            let t = PI / (m(tw).value().abs() * r.omega0);
            rabi_oracle(70.0, G0, SPIN_F_SR87, m(tw), db, t).p_e
        };
        let p9 = peak(9);
        for tw in [-9, -7, -3, 1, 3, 7] {
            assert!((peak(tw) - p9).abs() < 1e-12);
        }
    }

    #[test]
    fn purcell_limits() {
        assert_eq!(purcell_rate(m(0), G0, SPIN_F_SR87, 1.0, KAPPA), 0.0);
        let g = 4.5 * G0 / 24.75f64.sqrt();
        let r = purcell_rate(m(9), G0, SPIN_F_SR87, 0.0, KAPPA);
        assert!((r - 4.0 * g * g / KAPPA).abs() < 1e-12 * r);
    }

    #[test]
    fn purcell_grows_with_m() {
        let db = 2.0 * PI * 100.0;
        let rates: Vec<f64> = (1..=9).step_by(2).map(|tw| purcell_rate(m(tw), G0, SPIN_F_SR87, db, KAPPA)).collect();
        assert!(rates.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(
            purcell_rate(m(-7), G0, SPIN_F_SR87, db, KAPPA),
            purcell_rate(m(7), G0, SPIN_F_SR87, db, KAPPA)
        );
    }

    #[test]
    fn fig2_drive_photon_number() {
        let k1 = 2.0 * PI * 72.5e3;
        let n = driven_photon_number(k1, 2.0 * k1, 2.0 * PI * 7.5e3);
        assert!((n - 4875.0).abs() < 0.5);
    }
}
