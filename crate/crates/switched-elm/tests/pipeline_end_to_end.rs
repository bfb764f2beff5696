//! Full-pipeline integration checks on the bundled converter experiment.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use switched_elm::detection::{detect_switchings, segment_traces, DetectionConfig, SwitchingSet};
use switched_elm::modeling::{merge_and_model, HiddenSpec, MergeConfig, ResidualMode};
use switched_elm::pipeline::{
    run_pipeline, stage_evaluate, GroundTruth, PipelineConfig, Source, SwitchedModelEstimate,
};
use switched_elm::reconstruction::{
    infer_periodic_law, reconstruct_sequence, LawInterval, PeriodicLaw,
};
use switched_elm::simulator::{
    batch_simulate, IntegratorKind, LinearMode, Schedule, SimConfig, SwitchedLinearSystem,
};
use switched_elm::ActivationKind;

#[test]
fn dcdc_pipeline_identifies_the_converter() {
    let dir = tempfile::tempdir().unwrap();
    let config = PipelineConfig::dcdc_default(dir.path());
    let report = run_pipeline(&config).unwrap();

    let det = report.detection.as_ref().expect("preset runs carry ground truth");
    println!(
        "detection: {}/{} precision {:.3} recall {:.3}",
        det.detected, det.expected, det.precision, det.recall
    );
    println!("model_count: {}", report.model_count);
    println!("law_period: {:?} match {:?}", report.law_period, report.law_match);
    println!("one_step_rel: {:?}", report.one_step_relative_rmse);
    println!("rollout_rel: {:?}", report.rollout_relative_rmse);
    println!(
        "runtimes: sim {:.2}s detect {:.2}s identify {:.2}s reconstruct {:.2}s evaluate {:.2}s",
        report.runtimes.simulate_s,
        report.runtimes.detect_s,
        report.runtimes.identify_s,
        report.runtimes.reconstruct_s,
        report.runtimes.evaluate_s
    );

    assert_eq!(det.precision, 1.0);
    assert_eq!(det.recall, 1.0);
    assert_eq!(det.expected, 99);
    assert_eq!(report.model_count, 2);
    assert_eq!(report.law_period, Some(20));
    assert_eq!(report.law_match, Some(true));
    for rel in report.one_step_relative_rmse.as_ref().unwrap() {
        assert!(*rel <= 0.01, "one-step relative rmse {rel}");
    }
    for rel in report.rollout_relative_rmse.as_ref().unwrap() {
        assert!(*rel <= 0.05, "rollout relative rmse {rel}");
    }

    // artifact inventory
    for name in [
        "config.json",
        "truth.json",
        "statistics.csv",
        "detection.json",
        "labeling.json",
        "models.json",
        "sequence.json",
        "law.json",
        "report.json",
        "runtimes.json",
        "plots/state_response.csv",
        "plots/trajectory.csv",
    ] {
        assert!(dir.path().join(name).exists(), "missing artifact {name}");
    }
    assert!(dir.path().join("traces/trace_00.csv").exists());
    assert!(dir.path().join("traces/trace_19.csv").exists());
}

#[test]
fn absurd_threshold_degrades_to_one_subsystem() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = PipelineConfig::dcdc_default(dir.path());
    config.detection.thresholds.insert(1, 1e6);
    // a single pooled model cannot track the switched dynamics closed-loop,
    // so only the teacher-forced one-step evaluation is requested
    config.evaluate.rollout_x0 = vec![];
    if let Source::Preset(p) = &mut config.source {
        p.horizon = 400;
        p.trace_count = 6;
    }
    config.merge.num_neurons = 80;

    let report = run_pipeline(&config).unwrap();
    assert_eq!(report.model_count, 1);
    assert!(report.dropped_instants.is_empty());
    assert_eq!(report.law_period, None);
    assert!(dir.path().join("report.json").exists());
    assert!(!dir.path().join("law.json").exists());
}

/// Build a two-mode scalar system whose per-sample maps are x -> 0.9x + 1
/// and x -> 0.8x + 0.5; both equilibria are positive so the trajectory
/// never crosses zero, where the ratio statistic legitimately spikes.
fn two_mode_scalar_system(law: PeriodicLaw, dt: f64) -> SwitchedLinearSystem {
    let mode = |phi: f64, gamma: f64| {
        let a = phi.ln() / dt;
        let b = a * gamma / (phi - 1.0);
        LinearMode::new(DMatrix::from_element(1, 1, a), DVector::from_element(1, b)).unwrap()
    };
    SwitchedLinearSystem::new(
        vec![mode(0.9, 1.0), mode(0.8, 0.5)],
        Schedule::Periodic(law),
    )
    .unwrap()
}

#[test]
fn law_round_trips_through_the_full_pipeline() {
    // an asymmetric 30-sample law, nothing like the converter preset
    let dt = 0.1;
    let law = PeriodicLaw::new(
        30,
        0,
        vec![
            LawInterval { mode: 1, start: 0, end: 17 },
            LawInterval { mode: 2, start: 17, end: 30 },
        ],
    )
    .unwrap();
    let system = two_mode_scalar_system(law.clone(), dt);
    let horizon = 150;
    let sim = SimConfig {
        dt,
        horizon,
        x0: vec![3.0],
        integrator: IntegratorKind::EXACT_EXPONENTIAL,
        substeps: 1,
        noise_std: 0.0,
        noise_seed: 0,
    };
    let mut rng = ChaCha12Rng::seed_from_u64(11);
    let x0s: Vec<Vec<f64>> = (0..10).map(|_| vec![rng.gen_range(3.0..6.0)]).collect();
    let traces = batch_simulate(&system, &sim, &x0s).unwrap();

    // calibrate the threshold from the statistic at the true instants, the
    // way a practitioner reads it off the plotted statistic
    let truth_instants = law.change_instants(horizon);
    let stats = switched_elm::detection::aggregated_statistics(
        &traces,
        &DetectionConfig::default(),
    )
    .unwrap();
    let min_at_switch = stats[0]
        .iter()
        .filter(|(k, _)| truth_instants.contains(k))
        .map(|(_, s)| *s)
        .fold(f64::MAX, f64::min);
    let mut det_cfg = DetectionConfig::default();
    det_cfg.thresholds.insert(1, min_at_switch * 0.5);

    let set = detect_switchings(&traces, &det_cfg).unwrap();
    assert_eq!(set.instants, truth_instants, "detection must recover the law grid");

    let segments = segment_traces(&traces, &set).unwrap();
    let labeling = merge_and_model(
        &segments,
        &MergeConfig {
            zeta: 0.05,
            residual_mode: ResidualMode::PerSampleRms,
            hidden: HiddenSpec {
                num_neurons: 40,
                activation: ActivationKind::SIGMOID,
                seed: 99,
            },
            ridge: 1e-8,
        },
    )
    .unwrap();
    assert_eq!(labeling.model_count(), 2);

    let rec = reconstruct_sequence(&set, &labeling).unwrap();
    assert!(rec.dropped_instants.is_empty());
    let inferred = infer_periodic_law(&rec.sequence).expect("law is periodic");
    assert_eq!(inferred, law);
}

#[test]
fn evaluation_is_invariant_under_mode_relabeling() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = PipelineConfig::dcdc_default(dir.path());
    if let Source::Preset(p) = &mut config.source {
        p.horizon = 400;
        p.trace_count = 6;
    }
    config.evaluate.rollout_horizon = 400;
    config.merge.num_neurons = 120;
    run_pipeline(&config).unwrap();

    let truth: GroundTruth =
        switched_elm::pipeline::read_json(dir.path().join("truth.json")).unwrap();
    let labeling: switched_elm::modeling::SubsystemLabeling =
        switched_elm::pipeline::read_json(dir.path().join("labeling.json")).unwrap();
    let sequence: switched_elm::reconstruction::SwitchingSequence =
        switched_elm::pipeline::read_json(dir.path().join("sequence.json")).unwrap();
    let law: PeriodicLaw = switched_elm::pipeline::read_json(dir.path().join("law.json")).unwrap();
    let set = {
        let doc: switched_elm::pipeline::DetectionDoc =
            switched_elm::pipeline::read_json(dir.path().join("detection.json")).unwrap();
        SwitchingSet::new(doc.horizon, doc.instants).unwrap()
    };

    let swap = |m: usize| if m == 1 { 2 } else { 1 };
    let permuted = SwitchedModelEstimate {
        labeling: switched_elm::modeling::SubsystemLabeling {
            models: vec![labeling.models[1].clone(), labeling.models[0].clone()],
            segment_labels: labeling.segment_labels.iter().map(|&l| swap(l)).collect(),
            merge_log: labeling.merge_log.clone(),
            short_segment_assignments: labeling.short_segment_assignments.clone(),
        },
        sequence: switched_elm::reconstruction::SwitchingSequence::new(
            swap(sequence.initial_mode),
            sequence.horizon,
            sequence
                .events
                .iter()
                .map(|e| switched_elm::reconstruction::SwitchEvent {
                    from_mode: swap(e.from_mode),
                    to_mode: swap(e.to_mode),
                    instant: e.instant,
                })
                .collect(),
        )
        .unwrap(),
        law: Some(
            PeriodicLaw::new(
                law.period,
                law.anchor,
                law.intervals
                    .iter()
                    .map(|iv| LawInterval { mode: swap(iv.mode), ..*iv })
                    .collect(),
            )
            .unwrap(),
        ),
    };
    let original = SwitchedModelEstimate {
        labeling,
        sequence,
        law: Some(law),
    };

    let eval_dir_a = tempfile::tempdir().unwrap();
    let eval_dir_b = tempfile::tempdir().unwrap();
    let mut cfg_a = config.clone();
    cfg_a.output_dir = eval_dir_a.path().into();
    let mut cfg_b = config.clone();
    cfg_b.output_dir = eval_dir_b.path().into();
    let report_a = stage_evaluate(&cfg_a, &original, Some(&truth), &set, vec![]).unwrap();
    let report_b = stage_evaluate(&cfg_b, &permuted, Some(&truth), &set, vec![]).unwrap();

    assert_eq!(
        serde_json::to_string(&report_a).unwrap(),
        serde_json::to_string(&report_b).unwrap(),
        "consistent relabeling must not change any metric"
    );
}

#[test]
fn pipeline_runs_from_a_system_document() {
    let dir = tempfile::tempdir().unwrap();
    let law = PeriodicLaw::new(
        30,
        0,
        vec![
            LawInterval { mode: 1, start: 0, end: 17 },
            LawInterval { mode: 2, start: 17, end: 30 },
        ],
    )
    .unwrap();
    let system = two_mode_scalar_system(law, 0.1);
    let doc = switched_elm::pipeline::SystemDoc::from_system(&system);
    let system_path = dir.path().join("system.json");
    switched_elm::pipeline::write_json(&system_path, &doc).unwrap();

    let out = dir.path().join("run");
    let mut config = PipelineConfig::dcdc_default(&out);
    config.source = Source::System(switched_elm::pipeline::SystemSource {
        file: system_path,
        dt: 0.1,
        horizon: 150,
        integrator: IntegratorKind::EXACT_EXPONENTIAL,
        substeps: 1,
        noise_std: 0.0,
        initial_box: vec![[3.0, 6.0]],
        trace_count: 10,
    });
    config.detection.thresholds.insert(1, 0.05);
    config.merge = switched_elm::pipeline::MergeSettings {
        zeta: 0.05,
        residual_mode: ResidualMode::PerSampleRms,
        num_neurons: 40,
        activation: ActivationKind::SIGMOID,
        ridge: 1e-8,
    };
    config.evaluate.rollout_x0 = vec![4.0];
    config.evaluate.rollout_horizon = 150;

    let report = run_pipeline(&config).unwrap();
    assert_eq!(report.model_count, 2);
    assert_eq!(report.law_period, Some(30));
    assert_eq!(report.law_match, Some(true));
    let det = report.detection.unwrap();
    assert_eq!((det.precision, det.recall), (1.0, 1.0));
}
