use splitdae::harness::{energy_csv, replay_energy_csv};
use splitdae::integrators::{integrate, IntegratorKind, StepConfig};
use splitdae::models::{decay, load_phs, save_phs, synthetic_phs_dae};
use splitdae::phs::{dissipativity_check, phs_integrate, regularize, PhsScheme, Quadrature};
use splitdae::{CoupledDae32, State32};

#[test]
fn decay_runs_in_single_precision() {
    let dae: CoupledDae32 = decay(1.0f32).unwrap();
    let s0 = State32::from_stacked(&dae.partition(), 0.0, &[1.0], &[]).unwrap();
    let traj = integrate(&dae, &s0, 1.0, IntegratorKind::ImplicitMidpoint, &StepConfig::new(0.1)).unwrap();
    let closed_form = (0.95f64 / 1.05).powi(10);
    assert!((f64::from(traj.last().unwrap().y1[0]) - closed_form).abs() < 1e-5);
}

#[test]
fn saved_model_reproduces_energy_audit() {
    let p = synthetic_phs_dae::<f64>(3, 1, 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    save_phs(&p, &path).unwrap();
    let q = load_phs::<f64>(&path).unwrap();

    let x0 = q.consistent_state(&[1.0; 4], 0.0).unwrap();
    let reg = regularize(&q, 1e-3).unwrap();
    let cfg = StepConfig::new(1e-2);
    let traj = phs_integrate(&reg, &x0, 0.0, 0.5, PhsScheme::Strang, IntegratorKind::ImplicitMidpoint, &cfg).unwrap();
    let report = dissipativity_check(&traj, &q.input, Quadrature::Trapezoid, 1e-12).unwrap();
    assert!(report.passed);

    let replayed = replay_energy_csv::<f64>(&energy_csv(&traj, &report), 1e-11).unwrap();
    assert!(replayed.passed);
    assert_eq!(replayed.audits.len(), traj.len() - 1);
}
