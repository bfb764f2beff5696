//! End-to-end orchestration: reproducible configs, artifact files, and
//! evaluation of the identified model against ground truth.
//!
//! The pipeline is a sequential stage graph — simulate/ingest, detect,
//! identify, reconstruct, evaluate — with every intermediate result written
//! to the output directory so each stage can also be run on its own from
//! the files of the previous ones. All randomness is derived from one
//! master seed.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::activation::ActivationKind;
use crate::detection::{
    aggregated_statistics, detect_switchings, segment_traces, DetectionConfig, SwitchingSet,
};
use crate::elm::ElmModel;
use crate::error::{Error, Result};
use crate::modeling::{merge_and_model, HiddenSpec, MergeConfig, ResidualMode, SubsystemLabeling};
use crate::reconstruction::{
    infer_periodic_law, reconstruct_sequence, PeriodicLaw, SwitchingSequence,
};
use crate::simulator::{
    batch_simulate, dcdc_modes, dcdc_switching_law, simulate_named, DcDcParams, DcdcMatrixForm,
    IntegratorKind, LinearMode, Schedule, SimConfig, SwitchedLinearSystem,
};
use crate::trace::Trace;

// ---------------------------------------------------------------------------
// configuration
// ---------------------------------------------------------------------------

/// Where the pipeline's traces come from: a bundled simulator preset, a
/// switched-linear system JSON document, or a directory of trace CSV files.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Preset(PresetSource),
    System(SystemSource),
    TraceDir(TraceDirSource),
}

/// Simulator-preset source. `name` currently selects `"dcdc"`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PresetSource {
    pub name: String,
    #[serde(default)]
    pub params: DcDcParams,
    #[serde(default)]
    pub matrix_form: DcdcMatrixForm,
    pub dt: f64,
    pub horizon: usize,
    #[serde(default = "default_integrator")]
    pub integrator: IntegratorKind,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    #[serde(default)]
    pub noise_std: f64,
    /// Per-dimension `[low, high]` box the initial states are drawn from.
    pub initial_box: Vec<[f64; 2]>,
    pub trace_count: usize,
}

fn default_integrator() -> IntegratorKind {
    IntegratorKind::EXACT_EXPONENTIAL
}

fn default_substeps() -> usize {
    1
}

/// Simulate a system loaded from a JSON document of the form
/// `{"modes": [{"A": [[...]], "B": [...]}], "law": {...}}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemSource {
    pub file: PathBuf,
    pub dt: f64,
    pub horizon: usize,
    #[serde(default = "default_integrator")]
    pub integrator: IntegratorKind,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    #[serde(default)]
    pub noise_std: f64,
    pub initial_box: Vec<[f64; 2]>,
    pub trace_count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceDirSource {
    pub dir: PathBuf,
    pub dt: f64,
}

/// Merge-stage settings as they appear in the pipeline config; the hidden
/// layer's seed is not configured here, it derives from the master seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MergeSettings {
    pub zeta: f64,
    pub residual_mode: ResidualMode,
    pub num_neurons: usize,
    pub activation: ActivationKind,
    pub ridge: f64,
}

impl Default for MergeSettings {
    fn default() -> Self {
        Self {
            zeta: 1.0,
            residual_mode: ResidualMode::RawFrobenius,
            num_neurons: 200,
            activation: ActivationKind::SIGMOID,
            ridge: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReconstructConfig {
    /// Attempt to infer a closed-form periodic law from the event sequence.
    pub infer_periodic: bool,
}

impl Default for ReconstructConfig {
    fn default() -> Self {
        Self { infer_periodic: true }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalConfig {
    pub rollout_x0: Vec<f64>,
    pub rollout_horizon: usize,
    pub one_step: bool,
}

/// Everything one pipeline run needs, serializable to a single JSON file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub source: Source,
    pub detection: DetectionConfig,
    pub merge: MergeSettings,
    pub reconstruct: ReconstructConfig,
    pub evaluate: EvalConfig,
    pub output_dir: PathBuf,
    pub master_seed: u64,
}

impl PipelineConfig {
    /// The bundled DC-DC identification experiment.
    pub fn dcdc_default(output_dir: impl Into<PathBuf>) -> Self {
        Self {
            source: Source::Preset(PresetSource {
                name: "dcdc".into(),
                params: DcDcParams::default(),
                matrix_form: DcdcMatrixForm::Standard,
                dt: 1e-5,
                horizon: 1000,
                integrator: IntegratorKind::EXACT_EXPONENTIAL,
                substeps: 1,
                noise_std: 0.0,
                initial_box: vec![[0.0, 1.0], [0.0, 0.0]],
                trace_count: 20,
            }),
            detection: DetectionConfig::default(),
            merge: MergeSettings::default(),
            reconstruct: ReconstructConfig::default(),
            evaluate: EvalConfig {
                rollout_x0: vec![0.5, 0.0],
                rollout_horizon: 1000,
                one_step: true,
            },
            output_dir: output_dir.into(),
            master_seed: 42,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Stable per-purpose seeds derived from the master seed (splitmix64 over
/// the master/stream pair).
pub fn derived_seed(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const SEED_INITIAL_STATES: u64 = 0;
const SEED_HIDDEN_LAYER: u64 = 1;
const SEED_NOISE: u64 = 2;
const SEED_HELD_OUT: u64 = 3;

// ---------------------------------------------------------------------------
// ground truth and artifact documents
// ---------------------------------------------------------------------------

/// JSON mirror of one affine mode, row-major matrices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModeDoc {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<f64>,
}

/// JSON mirror of a switched linear system.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemDoc {
    pub modes: Vec<ModeDoc>,
    pub law: Schedule,
}

impl SystemDoc {
    pub fn from_system(sys: &SwitchedLinearSystem) -> Self {
        Self {
            modes: sys
                .modes
                .iter()
                .map(|m| ModeDoc {
                    a: (0..m.a.nrows())
                        .map(|r| (0..m.a.ncols()).map(|c| m.a[(r, c)]).collect())
                        .collect(),
                    b: m.b.iter().cloned().collect(),
                })
                .collect(),
            law: sys.law.clone(),
        }
    }

    pub fn to_system(&self) -> Result<SwitchedLinearSystem> {
        let modes = self
            .modes
            .iter()
            .map(|d| {
                let n = d.a.len();
                if d.a.iter().any(|row| row.len() != n) {
                    return Err(Error::InvalidConfig("mode matrix A must be square".into()));
                }
                LinearMode::new(
                    DMatrix::from_fn(n, n, |r, c| d.a[r][c]),
                    DVector::from_vec(d.b.clone()),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        SwitchedLinearSystem::new(modes, self.law.clone())
    }
}

/// The generating system and everything evaluation needs to replay it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    pub dt: f64,
    pub horizon: usize,
    pub integrator: IntegratorKind,
    pub substeps: usize,
    pub system: SystemDoc,
    /// Samples where the generating law changes mode, interior to the
    /// window.
    pub true_instants: Vec<usize>,
    /// Initial state reserved for the held-out one-step evaluation trace.
    pub held_out_x0: Vec<f64>,
}

/// Detection-stage artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionDoc {
    pub horizon: usize,
    pub instants: Vec<usize>,
    /// Relative path of the per-order statistics CSV.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_order_statistics: Option<String>,
}

// ---------------------------------------------------------------------------
// evaluation report
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionQuality {
    pub precision: f64,
    pub recall: f64,
    pub detected: usize,
    pub expected: usize,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct StageRuntimes {
    pub simulate_s: f64,
    pub detect_s: f64,
    pub identify_s: f64,
    pub reconstruct_s: f64,
    pub evaluate_s: f64,
}

/// Quantitative comparison of the identified model against ground truth.
///
/// Stage runtimes live in a separate artifact so that reports from repeated
/// runs are byte-identical.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detection: Option<DetectionQuality>,
    pub model_count: usize,
    pub dropped_instants: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub one_step_rmse: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub one_step_relative_rmse: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rollout_rmse: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rollout_relative_rmse: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rollout_max_abs_error: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub law_period: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub law_match: Option<bool>,
    #[serde(skip)]
    pub runtimes: StageRuntimes,
}

/// The identified switched model: subsystem ELMs, the segment labeling,
/// and the reconstructed switching sequence and law.
#[derive(Debug, Clone)]
pub struct SwitchedModelEstimate {
    pub labeling: SubsystemLabeling,
    pub sequence: SwitchingSequence,
    pub law: Option<PeriodicLaw>,
}

impl SwitchedModelEstimate {
    /// The mode governing the step from sample `k`, from the law when one
    /// was inferred, otherwise from the in-window sequence.
    fn mode_at(&self, k: usize) -> Result<usize> {
        match &self.law {
            Some(law) => Ok(law.mode_at(k)),
            None if k <= self.sequence.horizon => Ok(self.sequence.mode_at(k)),
            None => Err(Error::InvalidConfig(format!(
                "sample {k} lies beyond the reconstructed window and no periodic law was \
                 inferred to extrapolate with"
            ))),
        }
    }

    fn model_for(&self, mode: usize) -> Result<&ElmModel> {
        self.labeling
            .models
            .get(mode - 1)
            .ok_or_else(|| Error::InvalidConfig(format!("no model for subsystem {mode}")))
    }
}

// ---------------------------------------------------------------------------
// stages
// ---------------------------------------------------------------------------

/// Simulate the preset or system document (or ingest the trace directory)
/// and write the trace CSVs plus, for simulated sources, `truth.json`.
pub fn stage_simulate(config: &PipelineConfig) -> Result<(Vec<Trace>, Option<GroundTruth>)> {
    let out = &config.output_dir;
    fs::create_dir_all(out.join("traces"))?;
    let sim_spec = match &config.source {
        Source::Preset(preset) => {
            if preset.name != "dcdc" {
                return Err(Error::InvalidConfig(format!(
                    "unknown preset `{}` (known: dcdc)",
                    preset.name
                )));
            }
            let (m1, m2) = dcdc_modes(&preset.params, preset.matrix_form)?;
            let law = dcdc_switching_law(&preset.params, preset.dt)?;
            let system = SwitchedLinearSystem::new(vec![m1, m2], Schedule::Periodic(law))?;
            Some(SimulatedSource {
                system,
                dt: preset.dt,
                horizon: preset.horizon,
                integrator: preset.integrator,
                substeps: preset.substeps,
                noise_std: preset.noise_std,
                initial_box: preset.initial_box.clone(),
                trace_count: preset.trace_count,
            })
        }
        Source::System(src) => {
            let doc: SystemDoc = read_json(&src.file)?;
            Some(SimulatedSource {
                system: doc.to_system()?,
                dt: src.dt,
                horizon: src.horizon,
                integrator: src.integrator,
                substeps: src.substeps,
                noise_std: src.noise_std,
                initial_box: src.initial_box.clone(),
                trace_count: src.trace_count,
            })
        }
        Source::TraceDir(src) => {
            let traces = load_trace_dir(&src.dir, src.dt)?;
            for trace in &traces {
                trace.write_csv(out.join("traces").join(format!("{}.csv", trace.id())))?;
            }
            return Ok((traces, None));
        }
    };
    let spec = sim_spec.expect("simulated sources handled above");
    if spec.initial_box.len() != spec.system.dim() {
        return Err(Error::DimensionMismatch {
            what: "initial_box dimensions",
            expected: spec.system.dim(),
            got: spec.initial_box.len(),
        });
    }
    if spec.trace_count == 0 {
        return Err(Error::InvalidConfig("trace_count must be positive".into()));
    }

    let draw_x0 = |rng: &mut ChaCha12Rng| -> Vec<f64> {
        spec.initial_box
            .iter()
            .map(|[lo, hi]| rng.gen_range(*lo..=*hi))
            .collect()
    };
    let mut rng =
        ChaCha12Rng::seed_from_u64(derived_seed(config.master_seed, SEED_INITIAL_STATES));
    let x0s: Vec<Vec<f64>> = (0..spec.trace_count).map(|_| draw_x0(&mut rng)).collect();
    let mut held_rng = ChaCha12Rng::seed_from_u64(derived_seed(config.master_seed, SEED_HELD_OUT));
    let held_out_x0 = draw_x0(&mut held_rng);

    let sim = SimConfig {
        dt: spec.dt,
        horizon: spec.horizon,
        x0: x0s[0].clone(),
        integrator: spec.integrator,
        substeps: spec.substeps,
        noise_std: spec.noise_std,
        noise_seed: derived_seed(config.master_seed, SEED_NOISE),
    };
    let traces = batch_simulate(&spec.system, &sim, &x0s)?;
    for trace in &traces {
        trace.write_csv(out.join("traces").join(format!("{}.csv", trace.id())))?;
    }
    let true_instants = match &spec.system.law {
        Schedule::Periodic(law) => law.change_instants(spec.horizon),
        Schedule::Explicit(seq) => seq
            .events
            .iter()
            .map(|e| e.instant)
            .filter(|&k| k < spec.horizon)
            .collect(),
    };
    let truth = GroundTruth {
        dt: spec.dt,
        horizon: spec.horizon,
        integrator: spec.integrator,
        substeps: spec.substeps,
        system: SystemDoc::from_system(&spec.system),
        true_instants,
        held_out_x0,
    };
    write_json(out.join("truth.json"), &truth)?;
    Ok((traces, Some(truth)))
}

struct SimulatedSource {
    system: SwitchedLinearSystem,
    dt: f64,
    horizon: usize,
    integrator: IntegratorKind,
    substeps: usize,
    noise_std: f64,
    initial_box: Vec<[f64; 2]>,
    trace_count: usize,
}

/// Read every `*.csv` in a directory as a trace, sorted by file name.
pub fn load_trace_dir(dir: &Path, dt: f64) -> Result<Vec<Trace>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::MissingStageInput {
            stage: "detect",
            what: format!("no trace CSV files in {}", dir.display()),
            producer: "simulate",
        });
    }
    paths.iter().map(|p| Trace::read_csv(p, dt)).collect()
}

/// Detect switching instants and write `detection.json` plus the per-order
/// statistics CSV.
pub fn stage_detect(config: &PipelineConfig, traces: &[Trace]) -> Result<SwitchingSet> {
    let out = &config.output_dir;
    let stats = aggregated_statistics(traces, &config.detection)?;
    write_statistics_csv(out.join("statistics.csv"), &stats)?;
    let set = detect_switchings(traces, &config.detection)?;
    let doc = DetectionDoc {
        horizon: set.horizon,
        instants: set.instants.clone(),
        per_order_statistics: Some("statistics.csv".into()),
    };
    write_json(out.join("detection.json"), &doc)?;
    Ok(set)
}

/// Segment the traces, run the merge, and write `labeling.json` and
/// `models.json`.
pub fn stage_identify(
    config: &PipelineConfig,
    traces: &[Trace],
    set: &SwitchingSet,
) -> Result<SubsystemLabeling> {
    let out = &config.output_dir;
    let segments = segment_traces(traces, set)?;
    let merge = MergeConfig {
        zeta: config.merge.zeta,
        residual_mode: config.merge.residual_mode,
        hidden: HiddenSpec {
            num_neurons: config.merge.num_neurons,
            activation: config.merge.activation,
            seed: derived_seed(config.master_seed, SEED_HIDDEN_LAYER),
        },
        ridge: config.merge.ridge,
    };
    let labeling = merge_and_model(&segments, &merge)?;
    write_json(out.join("labeling.json"), &labeling)?;
    write_json(out.join("models.json"), &labeling.models)?;
    Ok(labeling)
}

/// Label the instants, optionally infer the periodic law, and write
/// `sequence.json` and `law.json`.
pub fn stage_reconstruct(
    config: &PipelineConfig,
    set: &SwitchingSet,
    labeling: &SubsystemLabeling,
) -> Result<(SwitchingSequence, Option<PeriodicLaw>, Vec<usize>)> {
    let out = &config.output_dir;
    let rec = reconstruct_sequence(set, labeling)?;
    write_json(out.join("sequence.json"), &rec.sequence)?;
    let law = if config.reconstruct.infer_periodic {
        infer_periodic_law(&rec.sequence)
    } else {
        None
    };
    if let Some(law) = &law {
        write_json(out.join("law.json"), law)?;
    }
    Ok((rec.sequence, law, rec.dropped_instants))
}

/// Compare the identified model against ground truth and write
/// `report.json` and the plot-data CSVs.
pub fn stage_evaluate(
    config: &PipelineConfig,
    estimate: &SwitchedModelEstimate,
    truth: Option<&GroundTruth>,
    detected: &SwitchingSet,
    dropped: Vec<usize>,
) -> Result<EvaluationReport> {
    let out = &config.output_dir;
    let mut report = EvaluationReport {
        detection: None,
        model_count: estimate.labeling.model_count(),
        dropped_instants: dropped,
        one_step_rmse: None,
        one_step_relative_rmse: None,
        rollout_rmse: None,
        rollout_relative_rmse: None,
        rollout_max_abs_error: None,
        law_period: estimate.law.as_ref().map(|l| l.period),
        law_match: None,
        runtimes: StageRuntimes::default(),
    };

    if let Some(truth) = truth {
        let system = truth.system.to_system()?;
        report.detection = Some(detection_quality(&detected.instants, &truth.true_instants));
        if let (Some(law), Schedule::Periodic(true_law)) = (&estimate.law, &system.law) {
            report.law_match = Some(laws_equivalent(law, true_law, truth.horizon));
        }

        if config.evaluate.one_step {
            let held = simulate_one(&system, truth, &truth.held_out_x0, "held_out")?;
            let (rmse, rel) = one_step_errors(estimate, &held)?;
            report.one_step_rmse = Some(rmse);
            report.one_step_relative_rmse = Some(rel);
        }

        if !config.evaluate.rollout_x0.is_empty() {
            let horizon = config.evaluate.rollout_horizon;
            let truth_cfg = GroundTruth {
                horizon,
                ..truth.clone()
            };
            let true_roll =
                simulate_one(&system, &truth_cfg, &config.evaluate.rollout_x0, "rollout")?;
            let predicted = closed_loop_rollout(estimate, &config.evaluate.rollout_x0, horizon)?;
            let (rmse, rel, max_abs) = rollout_errors(&predicted, &true_roll)?;
            report.rollout_rmse = Some(rmse);
            report.rollout_relative_rmse = Some(rel);
            report.rollout_max_abs_error = Some(max_abs);
            fs::create_dir_all(out.join("plots"))?;
            write_response_csv(out.join("plots").join("state_response.csv"), &true_roll, &predicted)?;
            write_trajectory_csv(out.join("plots").join("trajectory.csv"), &true_roll, &predicted)?;
        }
    }

    write_json(out.join("report.json"), &report)?;
    Ok(report)
}

/// Run the whole pipeline and write every artifact.
///
/// A stage failure aborts with the stage's name; artifacts written up to
/// that point stay on disk.
pub fn run_pipeline(config: &PipelineConfig) -> Result<EvaluationReport> {
    fs::create_dir_all(&config.output_dir)?;
    write_json(config.output_dir.join("config.json"), config)?;
    let mut runtimes = StageRuntimes::default();

    let t = Instant::now();
    let (traces, truth) = stage_simulate(config).map_err(|e| e.in_stage("simulate"))?;
    runtimes.simulate_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let set = stage_detect(config, &traces).map_err(|e| e.in_stage("detect"))?;
    runtimes.detect_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let labeling = stage_identify(config, &traces, &set).map_err(|e| e.in_stage("identify"))?;
    runtimes.identify_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let (sequence, law, dropped) =
        stage_reconstruct(config, &set, &labeling).map_err(|e| e.in_stage("reconstruct"))?;
    runtimes.reconstruct_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let estimate = SwitchedModelEstimate {
        labeling,
        sequence,
        law,
    };
    let mut report = stage_evaluate(config, &estimate, truth.as_ref(), &set, dropped)
        .map_err(|e| e.in_stage("evaluate"))?;
    runtimes.evaluate_s = t.elapsed().as_secs_f64();

    report.runtimes = runtimes;
    write_json(config.output_dir.join("runtimes.json"), &report.runtimes)?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// evaluation internals
// ---------------------------------------------------------------------------

fn simulate_one(
    system: &SwitchedLinearSystem,
    truth: &GroundTruth,
    x0: &[f64],
    id: &str,
) -> Result<Trace> {
    let cfg = SimConfig {
        dt: truth.dt,
        horizon: truth.horizon,
        x0: x0.to_vec(),
        integrator: truth.integrator,
        substeps: truth.substeps,
        noise_std: 0.0,
        noise_seed: 0,
    };
    simulate_named(system, &cfg, id)
}

fn detection_quality(detected: &[usize], expected: &[usize]) -> DetectionQuality {
    let hits = detected.iter().filter(|k| expected.contains(k)).count();
    DetectionQuality {
        precision: if detected.is_empty() {
            1.0
        } else {
            hits as f64 / detected.len() as f64
        },
        recall: if expected.is_empty() {
            1.0
        } else {
            hits as f64 / expected.len() as f64
        },
        detected: detected.len(),
        expected: expected.len(),
    }
}

/// Whether two periodic laws select the same partition of the window, up to
/// a consistent renaming of mode indices (matched by majority overlap).
fn laws_equivalent(estimated: &PeriodicLaw, truth: &PeriodicLaw, horizon: usize) -> bool {
    if estimated.period != truth.period {
        return false;
    }
    let horizon = horizon.max(estimated.period);
    // majority-overlap correspondence estimated mode -> true mode
    let mut pairs: std::collections::BTreeMap<(usize, usize), usize> = Default::default();
    for k in 0..horizon {
        *pairs.entry((estimated.mode_at(k), truth.mode_at(k))).or_default() += 1;
    }
    let mut mapping: std::collections::BTreeMap<usize, usize> = Default::default();
    let est_modes: std::collections::BTreeSet<usize> =
        pairs.keys().map(|(e, _)| *e).collect();
    for e in est_modes {
        let best = pairs
            .iter()
            .filter(|((pe, _), _)| *pe == e)
            .max_by_key(|(_, count)| **count)
            .map(|((_, t), _)| *t)
            .expect("mode appears in the window");
        mapping.insert(e, best);
    }
    (0..horizon).all(|k| mapping[&estimated.mode_at(k)] == truth.mode_at(k))
}

fn one_step_errors(
    estimate: &SwitchedModelEstimate,
    held: &Trace,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n_x = held.state_dim();
    let k_max = held.horizon();
    let mut sq_err = vec![0.0; n_x];
    let mut sq_truth = vec![0.0; n_x];
    for k in 0..k_max {
        let mode = estimate.mode_at(k)?;
        let pred = estimate
            .model_for(mode)?
            .predict_concat(&held.concat_sample(k))?;
        let truth = held.state(k + 1);
        for d in 0..n_x {
            sq_err[d] += (pred[d] - truth[d]).powi(2);
            sq_truth[d] += truth[d].powi(2);
        }
    }
    finalize_errors(sq_err, sq_truth, k_max)
}

fn closed_loop_rollout(
    estimate: &SwitchedModelEstimate,
    x0: &[f64],
    horizon: usize,
) -> Result<Vec<DVector<f64>>> {
    let mut states = Vec::with_capacity(horizon + 1);
    let mut x = DVector::from_vec(x0.to_vec());
    states.push(x.clone());
    for k in 0..horizon {
        let mode = estimate.mode_at(k)?;
        x = estimate.model_for(mode)?.predict_concat(&x)?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("closed-loop rollout diverged"));
        }
        states.push(x.clone());
    }
    Ok(states)
}

fn rollout_errors(
    predicted: &[DVector<f64>],
    truth: &Trace,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let n_x = truth.state_dim();
    let n = predicted.len().min(truth.len());
    let mut sq_err = vec![0.0; n_x];
    let mut sq_truth = vec![0.0; n_x];
    let mut max_abs = vec![0.0f64; n_x];
    for (k, pred) in predicted.iter().enumerate().take(n) {
        let t = truth.state(k);
        for d in 0..n_x {
            let e = pred[d] - t[d];
            sq_err[d] += e * e;
            sq_truth[d] += t[d] * t[d];
            max_abs[d] = max_abs[d].max(e.abs());
        }
    }
    let (rmse, rel) = finalize_errors(sq_err, sq_truth, n)?;
    Ok((rmse, rel, max_abs))
}

fn finalize_errors(
    sq_err: Vec<f64>,
    sq_truth: Vec<f64>,
    count: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if count == 0 {
        return Err(Error::EmptyInput("error metrics over zero samples"));
    }
    let rmse: Vec<f64> = sq_err.iter().map(|s| (s / count as f64).sqrt()).collect();
    let rel: Vec<f64> = rmse
        .iter()
        .zip(&sq_truth)
        .map(|(r, s)| {
            let rms = (s / count as f64).sqrt();
            if rms > 0.0 {
                r / rms
            } else {
                *r
            }
        })
        .collect();
    if rmse.iter().chain(rel.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("evaluation metrics"));
    }
    Ok((rmse, rel))
}

// ---------------------------------------------------------------------------
// artifact writers
// ---------------------------------------------------------------------------

/// Pretty JSON plus a trailing newline.
pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    let text = fs::read_to_string(path.as_ref())?;
    Ok(serde_json::from_str(&text)?)
}

fn write_statistics_csv(path: impl AsRef<Path>, per_order: &[Vec<(usize, f64)>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    let mut header = vec!["k".to_string()];
    header.extend((1..=per_order.len()).map(|p| format!("s{p}")));
    w.write_record(&header)?;
    // orders cover different k ranges; emit the union, blank where undefined
    let k_min = per_order.iter().filter_map(|s| s.first()).map(|(k, _)| *k).min();
    let k_max = per_order.iter().filter_map(|s| s.last()).map(|(k, _)| *k).max();
    if let (Some(k_min), Some(k_max)) = (k_min, k_max) {
        for k in k_min..=k_max {
            let mut rec = vec![k.to_string()];
            for stats in per_order {
                let entry = stats
                    .iter()
                    .find(|(kk, _)| *kk == k)
                    .map(|(_, s)| format!("{s}"))
                    .unwrap_or_default();
                rec.push(entry);
            }
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_response_csv(
    path: impl AsRef<Path>,
    truth: &Trace,
    predicted: &[DVector<f64>],
) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    let n_x = truth.state_dim();
    let mut header = vec!["k".to_string()];
    for d in 1..=n_x {
        header.push(format!("true_x{d}"));
        header.push(format!("pred_x{d}"));
    }
    w.write_record(&header)?;
    for (k, pred) in predicted.iter().enumerate().take(truth.len()) {
        let mut rec = vec![k.to_string()];
        for d in 0..n_x {
            rec.push(format!("{}", truth.state(k)[d]));
            rec.push(format!("{}", pred[d]));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn write_trajectory_csv(
    path: impl AsRef<Path>,
    truth: &Trace,
    predicted: &[DVector<f64>],
) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    let n_x = truth.state_dim();
    let mut header = Vec::new();
    for d in 1..=n_x {
        header.push(format!("true_x{d}"));
    }
    for d in 1..=n_x {
        header.push(format!("pred_x{d}"));
    }
    w.write_record(&header)?;
    for (k, pred) in predicted.iter().enumerate().take(truth.len()) {
        let mut rec = Vec::new();
        for d in 0..n_x {
            rec.push(format!("{}", truth.state(k)[d]));
        }
        for d in 0..n_x {
            rec.push(format!("{}", pred[d]));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
