//! Cross-integrator and mode-boundary guarantees on the converter preset.

use switched_elm::detection::{detect_switchings, DetectionConfig};
use switched_elm::simulator::{
    dcdc_modes, dcdc_switching_law, simulate, DcDcParams, IntegratorKind, Schedule, SimConfig,
    SwitchedLinearSystem,
};

fn dcdc_system() -> SwitchedLinearSystem {
    let params = DcDcParams::default();
    let (m1, m2) = dcdc_modes(&params, Default::default()).unwrap();
    let law = dcdc_switching_law(&params, 1e-5).unwrap();
    SwitchedLinearSystem::new(vec![m1, m2], Schedule::Periodic(law)).unwrap()
}

fn config(integrator: IntegratorKind, substeps: usize) -> SimConfig {
    SimConfig {
        dt: 1e-5,
        horizon: 1000,
        x0: vec![0.5, 0.5],
        integrator,
        substeps,
        noise_std: 0.0,
        noise_seed: 0,
    }
}

#[test]
fn exact_and_rk4_agree_on_every_sample() {
    let system = dcdc_system();
    let exact = simulate(&system, &config(IntegratorKind::EXACT_EXPONENTIAL, 1)).unwrap();
    let rk4 = simulate(&system, &config(IntegratorKind::RK4, 10)).unwrap();
    for k in 0..=1000 {
        let diff = (exact.state(k) - rk4.state(k)).norm();
        let scale = exact.state(k).norm().max(1.0);
        assert!(
            diff / scale <= 1e-6,
            "sample {k}: relative deviation {} between integrators",
            diff / scale
        );
    }
}

#[test]
fn state_is_continuous_across_switching_instants() {
    // the state itself never jumps at a mode change; only its differences
    // do, which is what the order-1 statistic keys on
    let system = dcdc_system();
    let trace = simulate(&system, &config(IntegratorKind::EXACT_EXPONENTIAL, 1)).unwrap();
    let mut max_step = 0.0f64;
    for k in 1..=1000 {
        max_step = max_step.max((trace.state(k) - trace.state(k - 1)).norm());
    }
    let typical: f64 = (1..=1000)
        .map(|k| (trace.state(k) - trace.state(k - 1)).norm())
        .sum::<f64>()
        / 1000.0;
    // boundary steps stay the same order of magnitude as interior steps
    assert!(
        max_step < 20.0 * typical,
        "a switching instant produced a state jump: max {max_step}, typical {typical}"
    );
}

#[test]
fn preset_trace_shows_the_sawtooth_and_its_grid() {
    let system = dcdc_system();
    let trace = simulate(&system, &config(IntegratorKind::EXACT_EXPONENTIAL, 1)).unwrap();
    assert_eq!(trace.len(), 1001);

    // inductor current ramps up during the on-phase and down during the
    // off-phase once the transient settles
    for period_start in [600usize, 800] {
        let i = |k: usize| trace.state(k)[0];
        assert!(i(period_start + 10) > i(period_start + 1), "no on-phase ramp");
        assert!(i(period_start + 19) < i(period_start + 11), "no off-phase decay");
    }

    // single-trace detection still finds every 20-sample-grid instant
    let set = detect_switchings(std::slice::from_ref(&trace), &DetectionConfig::default()).unwrap();
    for k in (1..1000).filter(|k| k % 20 == 0 || k % 20 == 11) {
        assert!(
            set.instants.iter().any(|d| d.abs_diff(k) <= 2),
            "grid instant {k} not found (detected {:?})",
            &set.instants[..set.instants.len().min(12)]
        );
    }
}
