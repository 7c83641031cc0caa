mod common;

use std::f64::consts::PI;

use common::*;
use proptest::prelude::*;
use superrad::config::StageSection;
use superrad::experiment::*;
use superrad::model::*;

fn fig3_batch(workers: usize) -> BatchResult {
    let s = preset("fig3_two_ensembles").resolve().unwrap();
    let spec = BatchSpec {
        n_trajectories: 3,
        master_seed: 21,
        t_c: 1.1,
        groups: 1,
        workers,
        keep_records: false,
    };
    run_batch(&s, &spec).unwrap()
}

#[test]
fn batch_does_not_depend_on_worker_count() {
    let one = fig3_batch(1);
    let four = fig3_batch(4);
    assert_eq!(one, four);
    assert_eq!(one.failed, 0);
    let seeds: Vec<u64> = one.outcomes.iter().map(|o| o.seed).collect();
    assert_eq!(seeds, (0..3).map(|i| superrad::detection::derive_seed(21, i)).collect::<Vec<_>>());
}

#[test]
fn duty_cycle_shorter_than_span_is_rejected() {
    let spec = BatchSpec {
        n_trajectories: 10,
        master_seed: 0,
        t_c: 0.05,
        groups: 1,
        workers: 1,
        keep_records: false,
    };
    let err = spec.validate(0.1).unwrap_err();
    assert!(matches!(err, superrad::Error::Config { ref key, .. } if key == "batch.t_c_s"), "{err}");
    assert!(BatchSpec { t_c: 0.1, ..spec }.validate(0.1).is_ok());
}

fn two_ensembles(n_each: f64) -> Vec<EnsembleSpec> {
    let m = [HalfInt::from_f64(4.5).unwrap(), HalfInt::from_f64(-4.5).unwrap()];
    build_ensembles(SPIN_F_SR87, 0.0, &m, 2.0 * n_each, &PhysicalParams::default()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn steady_state_is_a_fixed_point(gamma in 0.1f64..50.0, lambda in 1e2f64..1e6, dt in 1e-8f64..1e-5) {
        let spec = LossInjectionSpec { gamma_los: gamma, lambda_inj: lambda, injected_state: InjectedState::Excited };
        let n_s = spec.steady_state().unwrap();
        let mut ens = two_ensembles(n_s);
        let mut st = initial_moments(&InitialStateSpec::Angle { theta: 0.0, per_ensemble: None }, &ens).unwrap();
        let before = st.clone();
        for _ in 0..100 {
            apply_loss_injection(&mut st, &mut ens, &spec, dt);
        }
        for e in &ens {
            prop_assert!((e.n_atoms / n_s - 1.0).abs() < 100.0 * 1e-9);
        }
        // Excited atoms replacing excited atoms change no moment.
        for i in 0..2 {
            prop_assert!((st.z(i) - before.z(i)).abs() < 1e-12);
            prop_assert!(st.s(i).norm() < 1e-12);
        }
    }

    #[test]
    fn atom_number_relaxes_toward_steady_state(gamma in 0.1f64..50.0, lambda in 1e2f64..1e6, start in 0.1f64..10.0) {
        let spec = LossInjectionSpec { gamma_los: gamma, lambda_inj: lambda, injected_state: InjectedState::Ground };
        let n_s = spec.steady_state().unwrap();
        let mut ens = two_ensembles(start * n_s);
        let mut st = initial_moments(&InitialStateSpec::Ground, &ens).unwrap();
        let gap0 = (ens[0].n_atoms - n_s).abs();
        for _ in 0..1000 {
            apply_loss_injection(&mut st, &mut ens, &spec, 1e-4);
        }
        let gap = (ens[0].n_atoms - n_s).abs();
        prop_assert!(gap <= gap0 * (-gamma * 0.1f64).exp() * 1.01 + 1e-9 * n_s);
        prop_assert_eq!(st.z(0), -1.0);
    }
}

#[test]
fn injection_drags_inversion_toward_injected_state() {
    let spec = LossInjectionSpec { gamma_los: 5.0, lambda_inj: 2e5, injected_state: InjectedState::Excited };
    let mut ens = two_ensembles(4e4);
    let mut st = initial_moments(&InitialStateSpec::Ground, &ens).unwrap();
    let dt = 1e-6;
    apply_loss_injection(&mut st, &mut ens, &spec, dt);
    let r = spec.lambda_inj * dt / 4e4;
    assert!((st.z(0) - (-1.0 + 2.0 * r)).abs() < 1e-12);
}

#[test]
fn loss_only_atom_number_decays_exponentially() {
    let mut c = preset("loss_injection");
    c.monitored = false;
    c.loss_injection.as_mut().unwrap().lambda_inj_total = 0.0;
    let s = c.resolve().unwrap();
    let r = s.engine().unwrap().integrate(1).unwrap();
    let t_end = *r.times.last().unwrap();
    let total: f64 = s
        .ensembles
        .iter()
        .map(|e| *channel(&r, &format!("N_mF_{}", e.label())).last().unwrap())
        .sum();
    let expected = c.atoms.n_total * (-5.0 * t_end).exp();
    assert!((t_end - 0.3).abs() < 1e-3);
    assert!((total / expected - 1.0).abs() < 0.01, "N = {total}, expected {expected}");
    assert!((total / 2.0e4 - 1.0).abs() < 0.01);
}

fn sweep_base() -> superrad::config::Config {
    let mut c = preset("fig3_two_ensembles");
    c.stages.retain(|s| matches!(s, StageSection::Emit { .. }));
    if let StageSection::Emit { duration_s, .. } = &mut c.stages[0] {
        *duration_s = 0.04;
    }
    c.atoms.b_field_gauss = 0.0;
    c
}

#[test]
fn theta_sweep_measures_each_pulse() {
    let sweep = SweepSpec {
        variable: SweepVariable::Theta,
        values: vec![1.2, 0.6],
    };
    let points = run_sweep(&sweep_base(), &sweep, 2).unwrap();
    assert_eq!(points.iter().map(|p| p.value).collect::<Vec<_>>(), sweep.values);
    let m: Vec<PulseMetrics> = points.iter().map(|p| p.metrics.unwrap()).collect();
    assert!(m.iter().all(|m| m.peak > 0.0 && m.fwhm > 0.0));
    assert!(m[1].peak > m[0].peak, "more inversion, stronger pulse");

    let mut csv = Vec::new();
    write_sweep_csv(&points, &mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 3);
}

#[test]
fn sweep_values_are_range_checked() {
    let bad = SweepSpec {
        variable: SweepVariable::Theta,
        values: vec![PI + 0.1],
    };
    assert!(bad.validate().is_err());
    assert!(SweepSpec { variable: SweepVariable::BFieldGauss, values: vec![] }.validate().is_err());
}
