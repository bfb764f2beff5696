//! `selm` — switched-system identification pipeline.
//!
//! Each stage is independently invokable for debugging; `pipeline` chains
//! all of them. Stages read their inputs from the files earlier stages
//! wrote under the output directory, so
//! `simulate; detect; identify; reconstruct; evaluate` produces the same
//! artifacts as one `pipeline` run. Set `SELM_VERBOSE=1` for progress
//! output on stderr.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use switched_elm::activation::ActivationKind;
use switched_elm::detection::{Aggregation, DetectionConfig, SwitchingSet};
use switched_elm::error::Error;
use switched_elm::modeling::{ResidualMode, SubsystemLabeling};
use switched_elm::pipeline::{
    self, read_json, run_pipeline, DetectionDoc, GroundTruth, PipelineConfig,
    PresetSource, Source, SwitchedModelEstimate, TraceDirSource,
};
use switched_elm::reconstruction::{PeriodicLaw, SwitchingSequence};
use switched_elm::simulator::{DcDcParams, DcdcMatrixForm, IntegratorKind};

#[derive(Parser)]
#[command(
    name = "selm",
    version,
    about = "Identify time-dependent switched dynamical systems from input-state traces"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate ground-truth traces from a simulator preset
    Simulate(SimulateArgs),
    /// Detect switching instants in a set of traces
    Detect(DetectArgs),
    /// Merge segments and fit one model per subsystem
    Identify(IdentifyArgs),
    /// Label switching instants and infer the periodic law
    Reconstruct(ReconstructArgs),
    /// Evaluate the identified model against ground truth
    Evaluate(EvaluateArgs),
    /// Run every stage in order
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct ConfigOpts {
    /// Pipeline config JSON; flags override individual fields
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for artifacts
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed every stage derives its randomness from
    #[arg(long)]
    master_seed: Option<u64>,
}

impl ConfigOpts {
    fn resolve(&self) -> anyhow::Result<PipelineConfig> {
        let mut config = match &self.config {
            Some(path) => PipelineConfig::load(path)
                .with_context(|| format!("reading config {}", path.display()))?,
            None => PipelineConfig::dcdc_default(self.out.clone().unwrap_or_else(|| "out".into())),
        };
        if let Some(out) = &self.out {
            config.output_dir = out.clone();
        }
        if let Some(seed) = self.master_seed {
            config.master_seed = seed;
        }
        Ok(config)
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: ConfigOpts,
    /// Simulator preset name (currently `dcdc`)
    #[arg(long)]
    preset: Option<String>,
    /// Switched-linear system JSON document to simulate instead of a preset
    #[arg(long)]
    system: Option<PathBuf>,
    /// Number of traces to generate
    #[arg(long)]
    traces: Option<usize>,
    /// Sampling period in seconds
    #[arg(long)]
    dt: Option<f64>,
    /// Window length in samples
    #[arg(long)]
    horizon: Option<usize>,
    /// Load resistance in ohms
    #[arg(long)]
    r_load: Option<f64>,
    /// Duty cycle in [0, 1]
    #[arg(long)]
    duty: Option<f64>,
    /// Std of Gaussian noise added to recorded states
    #[arg(long)]
    noise_std: Option<f64>,
    /// Integrator: exact-exponential | rk4
    #[arg(long)]
    integrator: Option<String>,
    #[arg(long)]
    substeps: Option<usize>,
    /// Mode-matrix arrangement: standard | uncorrected
    #[arg(long)]
    matrix_form: Option<String>,
}

#[derive(Args)]
struct DetectArgs {
    #[command(flatten)]
    common: ConfigOpts,
    /// Directory of trace CSV files (instead of the config's source)
    #[arg(long, value_name = "DIR")]
    r#in: Option<PathBuf>,
    /// Sampling period for CSV ingestion
    #[arg(long)]
    dt: Option<f64>,
    /// Threshold for the order-1 statistic
    #[arg(long)]
    eps1: Option<f64>,
    /// Aggregation: average | union
    #[arg(long)]
    agg: Option<String>,
    /// Highest finite-difference order to test
    #[arg(long)]
    order: Option<usize>,
    /// Denominator floor
    #[arg(long)]
    floor: Option<f64>,
    /// Dedup window in samples
    #[arg(long)]
    min_gap: Option<usize>,
}

#[derive(Args)]
struct IdentifyArgs {
    #[command(flatten)]
    common: ConfigOpts,
    /// Directory of trace CSV files
    #[arg(long, value_name = "DIR")]
    r#in: Option<PathBuf>,
    /// Sampling period for CSV ingestion
    #[arg(long)]
    dt: Option<f64>,
    /// Detection artifact (defaults to <out>/detection.json)
    #[arg(long)]
    detection: Option<PathBuf>,
    /// Hidden-layer width
    #[arg(long)]
    neurons: Option<usize>,
    /// Activation: sigmoid | radial-basis | sine | exponential
    #[arg(long)]
    activation: Option<String>,
    /// Merge threshold
    #[arg(long)]
    zeta: Option<f64>,
    /// Residual mode: raw-frobenius | per-sample-rms
    #[arg(long)]
    residual_mode: Option<String>,
    /// Ridge parameter
    #[arg(long)]
    ridge: Option<f64>,
}

#[derive(Args)]
struct ReconstructArgs {
    #[command(flatten)]
    common: ConfigOpts,
    /// Detection artifact (defaults to <out>/detection.json)
    #[arg(long)]
    detection: Option<PathBuf>,
    /// Labeling artifact (defaults to <out>/labeling.json)
    #[arg(long)]
    labeling: Option<PathBuf>,
    /// Infer a periodic law (overrides the config flag)
    #[arg(long)]
    infer_law: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: ConfigOpts,
    /// Ground-truth artifact (defaults to <out>/truth.json)
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Comma-separated rollout initial state, e.g. `0.5,0`
    #[arg(long)]
    rollout_x0: Option<String>,
    /// Rollout length in samples
    #[arg(long)]
    rollout_horizon: Option<usize>,
}

#[derive(Args)]
struct PipelineArgs {
    #[command(flatten)]
    common: ConfigOpts,
}

fn verbose() -> bool {
    std::env::var_os("SELM_VERBOSE").is_some_and(|v| v != "0" && !v.is_empty())
}

fn progress(msg: &str) {
    if verbose() {
        eprintln!("selm: {msg}");
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Detect(args) => cmd_detect(args),
        Command::Identify(args) => cmd_identify(args),
        Command::Reconstruct(args) => cmd_reconstruct(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Pipeline(args) => cmd_pipeline(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("selm: error: {err:#}");
            ExitCode::from(stage_exit_code(&err))
        }
    }
}

/// Nonzero exit code identifying the failed stage.
fn stage_exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Stage { stage, .. }) => match *stage {
            "simulate" => 2,
            "detect" => 3,
            "identify" => 4,
            "reconstruct" => 5,
            "evaluate" => 6,
            _ => 1,
        },
        _ => 1,
    }
}

fn cmd_simulate(args: SimulateArgs) -> anyhow::Result<()> {
    let mut config = args.common.resolve()?;
    if let Some(file) = &args.system {
        let doc: switched_elm::pipeline::SystemDoc = read_json(file)?;
        let dim = doc.modes.first().map_or(0, |m| m.b.len());
        config.source = Source::System(switched_elm::pipeline::SystemSource {
            file: file.clone(),
            dt: args.dt.unwrap_or(1e-5),
            horizon: args.horizon.unwrap_or(1000),
            integrator: IntegratorKind::EXACT_EXPONENTIAL,
            substeps: args.substeps.unwrap_or(1),
            noise_std: args.noise_std.unwrap_or(0.0),
            initial_box: vec![[0.0, 1.0]; dim],
            trace_count: args.traces.unwrap_or(20),
        });
    } else if let Some(name) = &args.preset {
        if !matches!(&config.source, Source::Preset(p) if &p.name == name) {
            config.source = Source::Preset(preset_with_name(name, &config)?);
        }
    }
    if let Source::Preset(preset) = &mut config.source {
        if let Some(n) = args.traces {
            preset.trace_count = n;
        }
        if let Some(dt) = args.dt {
            preset.dt = dt;
        }
        if let Some(h) = args.horizon {
            preset.horizon = h;
        }
        if let Some(r) = args.r_load {
            preset.params.r_load = r;
        }
        if let Some(d) = args.duty {
            preset.params.duty = d;
        }
        if let Some(n) = args.noise_std {
            preset.noise_std = n;
        }
        if let Some(name) = &args.integrator {
            preset.integrator = IntegratorKind::by_name(name)?;
        }
        if let Some(s) = args.substeps {
            preset.substeps = s;
        }
        if let Some(form) = &args.matrix_form {
            preset.matrix_form = match form.as_str() {
                "standard" => DcdcMatrixForm::Standard,
                "uncorrected" => DcdcMatrixForm::Uncorrected,
                other => bail!("unknown matrix form `{other}` (standard | uncorrected)"),
            };
        }
    }
    std::fs::create_dir_all(&config.output_dir)?;
    progress("simulate");
    let (traces, truth) = pipeline::stage_simulate(&config).map_err(|e| e.in_stage("simulate"))?;
    println!(
        "wrote {} traces to {} ({} ground truth)",
        traces.len(),
        config.output_dir.join("traces").display(),
        if truth.is_some() { "with" } else { "without" }
    );
    Ok(())
}

fn preset_with_name(name: &str, config: &PipelineConfig) -> anyhow::Result<PresetSource> {
    if name != "dcdc" {
        bail!("unknown preset `{name}` (known: dcdc)");
    }
    // start from the bundled experiment defaults, keep the config's seed
    let default = PipelineConfig::dcdc_default(&config.output_dir);
    match default.source {
        Source::Preset(p) => Ok(PresetSource {
            name: name.to_string(),
            params: DcDcParams::default(),
            ..p
        }),
        _ => unreachable!("dcdc default is a preset"),
    }
}

fn cmd_detect(args: DetectArgs) -> anyhow::Result<()> {
    let mut config = args.common.resolve()?;
    apply_detection_flags(&mut config.detection, &args)?;
    if let Some(dir) = &args.r#in {
        config.source = Source::TraceDir(TraceDirSource {
            dir: dir.clone(),
            dt: args.dt.unwrap_or(1e-5),
        });
    }
    std::fs::create_dir_all(&config.output_dir)?;
    progress("detect");
    let traces = load_stage_traces(&config, "detect")?;
    let set = pipeline::stage_detect(&config, &traces).map_err(|e| e.in_stage("detect"))?;
    println!(
        "detected {} switching instants over horizon {} -> {}",
        set.instants.len(),
        set.horizon,
        config.output_dir.join("detection.json").display()
    );
    Ok(())
}

fn apply_detection_flags(det: &mut DetectionConfig, args: &DetectArgs) -> anyhow::Result<()> {
    if let Some(order) = args.order {
        det.max_order = order;
    }
    if let Some(eps) = args.eps1 {
        det.thresholds.insert(1, eps);
    }
    if let Some(agg) = &args.agg {
        det.aggregation = match agg.as_str() {
            "average" | "cross-trace-average" => Aggregation::CrossTraceAverage,
            "union" | "per-trace-union" => Aggregation::PerTraceUnion,
            other => bail!("unknown aggregation `{other}` (average | union)"),
        };
    }
    if let Some(floor) = args.floor {
        det.denominator_floor = floor;
    }
    if let Some(gap) = args.min_gap {
        det.min_gap = gap;
    }
    Ok(())
}

/// Traces for a mid-pipeline stage: the CSVs under the output directory if
/// the simulate stage already ran, otherwise the configured source.
fn load_stage_traces(
    config: &PipelineConfig,
    stage: &'static str,
) -> anyhow::Result<Vec<switched_elm::Trace>> {
    let staged = config.output_dir.join("traces");
    let dt = match &config.source {
        Source::Preset(p) => p.dt,
        Source::System(sys) => sys.dt,
        Source::TraceDir(t) => t.dt,
    };
    if staged.is_dir() {
        Ok(pipeline::load_trace_dir(&staged, dt)?)
    } else if let Source::TraceDir(src) = &config.source {
        Ok(pipeline::load_trace_dir(&src.dir, src.dt)?)
    } else {
        Err(Error::MissingStageInput {
            stage,
            what: format!("traces directory {}", staged.display()),
            producer: "simulate",
        }
        .into())
    }
}

fn cmd_identify(args: IdentifyArgs) -> anyhow::Result<()> {
    let mut config = args.common.resolve()?;
    if let Some(dir) = &args.r#in {
        config.source = Source::TraceDir(TraceDirSource {
            dir: dir.clone(),
            dt: args.dt.unwrap_or(1e-5),
        });
    }
    if let Some(n) = args.neurons {
        config.merge.num_neurons = n;
    }
    if let Some(a) = &args.activation {
        config.merge.activation = ActivationKind::by_name(a)?;
    }
    if let Some(z) = args.zeta {
        config.merge.zeta = z;
    }
    if let Some(mode) = &args.residual_mode {
        config.merge.residual_mode = match mode.as_str() {
            "raw-frobenius" | "raw" => ResidualMode::RawFrobenius,
            "per-sample-rms" | "rms" => ResidualMode::PerSampleRms,
            other => bail!("unknown residual mode `{other}` (raw-frobenius | per-sample-rms)"),
        };
    }
    if let Some(r) = args.ridge {
        config.merge.ridge = r;
    }
    std::fs::create_dir_all(&config.output_dir)?;
    progress("identify");
    let traces = load_stage_traces(&config, "identify")?;
    let detection_path = args
        .detection
        .unwrap_or_else(|| config.output_dir.join("detection.json"));
    let set = load_detection(&detection_path, "identify")?;
    let labeling =
        pipeline::stage_identify(&config, &traces, &set).map_err(|e| e.in_stage("identify"))?;
    println!(
        "identified {} subsystems from {} segments -> {}",
        labeling.model_count(),
        labeling.segment_labels.len(),
        config.output_dir.join("labeling.json").display()
    );
    Ok(())
}

fn load_detection(path: &Path, stage: &'static str) -> anyhow::Result<SwitchingSet> {
    if !path.exists() {
        return Err(Error::MissingStageInput {
            stage,
            what: format!("detection artifact {}", path.display()),
            producer: "detect",
        }
        .into());
    }
    let doc: DetectionDoc = read_json(path)?;
    Ok(SwitchingSet::new(doc.horizon, doc.instants)?)
}

fn cmd_reconstruct(args: ReconstructArgs) -> anyhow::Result<()> {
    let mut config = args.common.resolve()?;
    if args.infer_law {
        config.reconstruct.infer_periodic = true;
    }
    std::fs::create_dir_all(&config.output_dir)?;
    progress("reconstruct");
    let detection_path = args
        .detection
        .unwrap_or_else(|| config.output_dir.join("detection.json"));
    let labeling_path = args
        .labeling
        .unwrap_or_else(|| config.output_dir.join("labeling.json"));
    let set = load_detection(&detection_path, "reconstruct")?;
    let labeling: SubsystemLabeling = load_artifact(&labeling_path, "reconstruct", "identify")?;
    let (sequence, law, dropped) = pipeline::stage_reconstruct(&config, &set, &labeling)
        .map_err(|e| e.in_stage("reconstruct"))?;
    println!(
        "sequence with {} events ({} dropped instants); periodic law: {}",
        sequence.events.len(),
        dropped.len(),
        match &law {
            Some(l) => format!("period {} samples", l.period),
            None => "none".into(),
        }
    );
    Ok(())
}

fn load_artifact<T: serde::de::DeserializeOwned>(
    path: &Path,
    stage: &'static str,
    producer: &'static str,
) -> anyhow::Result<T> {
    if !path.exists() {
        return Err(Error::MissingStageInput {
            stage,
            what: format!("artifact {}", path.display()),
            producer,
        }
        .into());
    }
    Ok(read_json(path)?)
}

fn cmd_evaluate(args: EvaluateArgs) -> anyhow::Result<()> {
    let mut config = args.common.resolve()?;
    if let Some(x0) = &args.rollout_x0 {
        config.evaluate.rollout_x0 = parse_vector(x0)?;
    }
    if let Some(h) = args.rollout_horizon {
        config.evaluate.rollout_horizon = h;
    }
    std::fs::create_dir_all(&config.output_dir)?;
    progress("evaluate");
    let out = &config.output_dir;
    let truth_path = args.truth.unwrap_or_else(|| out.join("truth.json"));
    let truth: Option<GroundTruth> = if truth_path.exists() {
        Some(read_json(&truth_path)?)
    } else {
        None
    };
    let set = load_detection(&out.join("detection.json"), "evaluate")?;
    let labeling: SubsystemLabeling = load_artifact(&out.join("labeling.json"), "evaluate", "identify")?;
    let sequence: SwitchingSequence =
        load_artifact(&out.join("sequence.json"), "evaluate", "reconstruct")?;
    let law: Option<PeriodicLaw> = if out.join("law.json").exists() {
        Some(read_json(out.join("law.json"))?)
    } else {
        None
    };
    // dropped instants are recomputed from the same inputs the reconstruct
    // stage used, so the report matches a single pipeline run byte for byte
    let dropped = switched_elm::reconstruction::reconstruct_sequence(&set, &labeling)?
        .dropped_instants;
    let estimate = SwitchedModelEstimate {
        labeling,
        sequence,
        law,
    };
    let report = pipeline::stage_evaluate(&config, &estimate, truth.as_ref(), &set, dropped)
        .map_err(|e| e.in_stage("evaluate"))?;
    print_report_summary(&report);
    Ok(())
}

fn parse_vector(text: &str) -> anyhow::Result<Vec<f64>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .with_context(|| format!("bad number `{s}` in vector"))
        })
        .collect()
}

fn cmd_pipeline(args: PipelineArgs) -> anyhow::Result<()> {
    let config = args.common.resolve()?;
    progress("pipeline");
    let report = run_pipeline(&config)?;
    print_report_summary(&report);
    println!("artifacts in {}", config.output_dir.display());
    Ok(())
}

fn print_report_summary(report: &switched_elm::pipeline::EvaluationReport) {
    println!("subsystems: {}", report.model_count);
    if let Some(det) = &report.detection {
        println!(
            "detection: {}/{} instants, precision {:.3}, recall {:.3}",
            det.detected, det.expected, det.precision, det.recall
        );
    }
    if let Some(period) = report.law_period {
        println!(
            "switching law: period {period} samples{}",
            match report.law_match {
                Some(true) => ", matches ground truth",
                Some(false) => ", does NOT match ground truth",
                None => "",
            }
        );
    }
    if let Some(rel) = &report.one_step_relative_rmse {
        println!("one-step relative rmse: {rel:?}");
    }
    if let Some(rel) = &report.rollout_relative_rmse {
        println!("rollout relative rmse: {rel:?}");
    }
}
