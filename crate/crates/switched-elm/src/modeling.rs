//! Subsystem modeling: merge trace segments that admit a common ELM fit and
//! train one model per discovered subsystem.
//!
//! Two segments belong to the same subsystem when a single output-weight
//! matrix fits their pooled training pairs with residual `gamma` at most the
//! merge threshold `zeta`. Clustering is greedy and deterministic: anchors
//! are processed in ascending original index and each later unassigned
//! segment is absorbed into the anchor's cluster when the combined fit
//! passes the threshold, the candidate fit always being taken against the
//! cluster's accumulated data.
//!
//! Combined fits reduce each segment to its triangular QR factor once and
//! merge factors instead of re-stacking raw rows, so a candidate evaluation
//! costs the same no matter how large the cluster has grown. Residuals are
//! still evaluated against the uncompressed data.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::activation::ActivationKind;
use crate::elm::{svd_filter_solve, ElmModel, HiddenLayer};
use crate::error::{Error, Result};
use crate::trace::Trace;

/// How the combined-fit residual is reported and thresholded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResidualMode {
    /// The plain Frobenius norm of the residual matrix. Grows with sample
    /// count, so `zeta` is scale-sensitive.
    #[serde(rename = "raw-frobenius")]
    RawFrobenius,
    /// The raw residual divided by the square root of the pair count.
    #[serde(rename = "per-sample-rms")]
    PerSampleRms,
}

/// Hidden-layer specification shared by every fit in a run.
///
/// One layer (one seed) is used for all combined fits so that residuals are
/// comparable against a fixed feature map.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HiddenSpec {
    pub num_neurons: usize,
    pub activation: ActivationKind,
    pub seed: u64,
}

/// Merge-stage parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MergeConfig {
    /// Merge threshold `zeta`; a combined fit at or below it is accepted.
    pub zeta: f64,
    pub residual_mode: ResidualMode,
    pub hidden: HiddenSpec,
    /// Ridge parameter for the output-weight solves; 0 is the plain
    /// minimum-norm least-squares fit.
    pub ridge: f64,
}

impl MergeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.zeta.is_nan() || self.zeta <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "merge threshold zeta must be positive, got {}",
                self.zeta
            )));
        }
        if self.ridge < 0.0 {
            return Err(Error::InvalidConfig("ridge must be nonnegative".into()));
        }
        if self.hidden.num_neurons == 0 {
            return Err(Error::InvalidConfig("hidden layer needs at least one neuron".into()));
        }
        Ok(())
    }
}

/// Pair inputs and their next-state targets, as parallel lists.
pub type TrainingPairs = (Vec<DVector<f64>>, Vec<DVector<f64>>);

/// Training pairs from one trace over the sample range `[start, end]`:
/// inputs `concat(x(k), u(k))` for `k` in `[start, end-1]`, each paired with
/// target `x(k+1)`.
///
/// A single-sample range yields no pairs; that is not an error.
pub fn build_training_pairs(trace: &Trace, start: usize, end: usize) -> Result<TrainingPairs> {
    if end > trace.horizon() || start > end {
        return Err(Error::InvalidConfig(format!(
            "segment [{start}, {end}] outside trace `{}` (horizon {})",
            trace.id(),
            trace.horizon()
        )));
    }
    let mut inputs = Vec::with_capacity(end - start);
    let mut targets = Vec::with_capacity(end - start);
    for k in start..end {
        inputs.push(trace.concat_sample(k));
        targets.push(trace.state(k + 1).clone());
    }
    Ok((inputs, targets))
}

/// The consolidated m-th piece of all traces: stacked training pairs plus
/// the originating sample range.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    /// First sample index `k_{m-1}` of the range this segment covers.
    pub start: usize,
    /// Last sample index `k_m`; shared with the next segment.
    pub end: usize,
    /// Pair inputs, one row per pair, `pair_count x (n_x + n_u)`.
    pub inputs: DMatrix<f64>,
    /// Pair targets, `pair_count x n_x`.
    pub targets: DMatrix<f64>,
}

impl Segment {
    /// Consolidate the `[start, end]` range of every trace.
    pub fn from_traces(traces: &[Trace], start: usize, end: usize) -> Result<Self> {
        let mut all_inputs = Vec::new();
        let mut all_targets = Vec::new();
        for trace in traces {
            let (i, t) = build_training_pairs(trace, start, end)?;
            all_inputs.extend(i);
            all_targets.extend(t);
        }
        Ok(Self::from_pairs(start, end, &all_inputs, &all_targets))
    }

    /// Build a segment directly from pair vectors.
    pub fn from_pairs(
        start: usize,
        end: usize,
        inputs: &[DVector<f64>],
        targets: &[DVector<f64>],
    ) -> Self {
        assert_eq!(inputs.len(), targets.len(), "pair lists must align");
        let in_dim = inputs.first().map_or(0, |v| v.len());
        let out_dim = targets.first().map_or(0, |v| v.len());
        let input_mat = DMatrix::from_fn(inputs.len(), in_dim, |r, c| inputs[r][c]);
        let target_mat = DMatrix::from_fn(targets.len(), out_dim, |r, c| targets[r][c]);
        Self {
            start,
            end,
            inputs: input_mat,
            targets: target_mat,
        }
    }

    /// Number of training pairs in the segment.
    pub fn pair_count(&self) -> usize {
        self.inputs.nrows()
    }
}

/// All segments of a detection run, in original order.
#[derive(Debug, Clone)]
pub struct SegmentSet {
    pub horizon: usize,
    pub trace_count: usize,
    pub segments: Vec<Segment>,
}

impl SegmentSet {
    pub fn new(horizon: usize, trace_count: usize, segments: Vec<Segment>) -> Result<Self> {
        let mut dims: Option<(usize, usize)> = None;
        for seg in segments.iter().filter(|s| s.pair_count() > 0) {
            let d = (seg.inputs.ncols(), seg.targets.ncols());
            match dims {
                None => dims = Some(d),
                Some(expect) if expect == d => {}
                Some(expect) => {
                    return Err(Error::InconsistentTraces(format!(
                        "segment [{}, {}] has pair dims {:?}, expected {:?}",
                        seg.start, seg.end, d, expect
                    )))
                }
            }
        }
        Ok(Self {
            horizon,
            trace_count,
            segments,
        })
    }

    pub fn total_pairs(&self) -> usize {
        self.segments.iter().map(|s| s.pair_count()).sum()
    }
}

/// One attempted merge and its outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeAttempt {
    /// Original index of the anchor segment whose cluster attempted the
    /// merge.
    pub anchor: usize,
    /// Original index of the candidate segment.
    pub candidate: usize,
    pub gamma: f64,
    pub accepted: bool,
}

/// A segment too short to contribute pairs, attached to the cluster of the
/// nearest-in-index modeled segment after clustering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShortSegmentAssignment {
    pub segment: usize,
    pub assigned_to: usize,
}

/// Output of [`merge_and_model`]: the discovered subsystem models, the
/// segment-to-subsystem labeling, and the full merge log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubsystemLabeling {
    pub models: Vec<ElmModel>,
    /// Label per original segment index; labels run contiguously from 1 to
    /// `models.len()` in anchor order.
    pub segment_labels: Vec<usize>,
    pub merge_log: Vec<MergeAttempt>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub short_segment_assignments: Vec<ShortSegmentAssignment>,
}

impl SubsystemLabeling {
    pub fn model_count(&self) -> usize {
        self.models.len()
    }
}

/// A least-squares system compressed to its triangular factor.
///
/// Stacking the factors of two blocks and re-reducing gives the factor of
/// the row-stacked original systems, so clusters can grow without the solve
/// cost growing with them.
#[derive(Clone)]
struct LsBlock {
    /// Triangular factor, at most `L` rows.
    r: DMatrix<f64>,
    /// `Q^T T`, row count matching `r`.
    qt_t: DMatrix<f64>,
    /// Row count of the uncompressed system (enters the rank cutoff).
    rows: usize,
}

impl LsBlock {
    fn from_system(h: &DMatrix<f64>, t: &DMatrix<f64>) -> Self {
        let qr = h.clone().qr();
        let qt_t = qr.q().transpose() * t;
        Self {
            r: qr.r(),
            qt_t,
            rows: h.nrows(),
        }
    }

    fn merge(&self, other: &LsBlock) -> Self {
        let stacked_r = stack_rows(&self.r, &other.r);
        let stacked_t = stack_rows(&self.qt_t, &other.qt_t);
        let qr = stacked_r.clone().qr();
        let qt_t = qr.q().transpose() * stacked_t;
        Self {
            r: qr.r(),
            qt_t,
            rows: self.rows + other.rows,
        }
    }

    /// Output weights for the compressed system under the shared
    /// singular-value filter rule.
    fn solve(&self, lambda: f64) -> DMatrix<f64> {
        if lambda > 0.0 {
            // ridge via the augmented system [R; sqrt(lambda) I]
            let l = self.r.ncols();
            let mut aug = DMatrix::zeros(self.r.nrows() + l, l);
            aug.view_mut((0, 0), (self.r.nrows(), l)).copy_from(&self.r);
            for i in 0..l {
                aug[(self.r.nrows() + i, i)] = lambda.sqrt();
            }
            let mut rhs = DMatrix::zeros(self.r.nrows() + l, self.qt_t.ncols());
            rhs.view_mut((0, 0), (self.qt_t.nrows(), self.qt_t.ncols()))
                .copy_from(&self.qt_t);
            let qr = aug.qr();
            let reduced = qr.q().transpose() * rhs;
            qr.r()
                .solve_upper_triangular(&reduced)
                .unwrap_or_else(|| svd_filter_solve(&self.r, &self.qt_t, self.rows, lambda))
        } else {
            svd_filter_solve(&self.r, &self.qt_t, self.rows, 0.0)
        }
    }
}

fn stack_rows(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.ncols(), b.ncols());
    let mut out = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols());
    out.view_mut((0, 0), (a.nrows(), a.ncols())).copy_from(a);
    out.view_mut((a.nrows(), 0), (b.nrows(), b.ncols())).copy_from(b);
    out
}

/// (hidden matrix, target) pairs a residual is evaluated over.
type ResidualSystems<'a> = Vec<(&'a DMatrix<f64>, &'a DMatrix<f64>)>;

/// Residual of `beta` over a list of (hidden matrix, target) systems,
/// evaluated against the uncompressed rows.
fn direct_residual(systems: &ResidualSystems<'_>, beta: &DMatrix<f64>) -> f64 {
    systems
        .iter()
        .map(|(h, t)| (*h * beta - *t).norm_squared())
        .sum::<f64>()
        .sqrt()
}

fn apply_mode(gamma: f64, rows: usize, mode: ResidualMode) -> f64 {
    match mode {
        ResidualMode::RawFrobenius => gamma,
        ResidualMode::PerSampleRms => gamma / (rows as f64).sqrt(),
    }
}

/// Fit one shared output-weight matrix to the pooled pairs of several
/// segments using one hidden layer.
///
/// Returns the weights and the residual `gamma` in the requested mode.
pub fn fit_combined(
    segments: &[&Segment],
    layer: &HiddenLayer,
    ridge: f64,
    mode: ResidualMode,
) -> Result<(DMatrix<f64>, f64)> {
    let active: Vec<&Segment> = segments.iter().copied().filter(|s| s.pair_count() > 0).collect();
    let total: usize = active.iter().map(|s| s.pair_count()).sum();
    if total == 0 {
        return Err(Error::EmptyInput("fit_combined: no training pairs"));
    }
    let mut block: Option<LsBlock> = None;
    let mut hidden_mats = Vec::with_capacity(active.len());
    for seg in &active {
        let h = layer.hidden_matrix(&seg.inputs)?;
        let b = LsBlock::from_system(&h, &seg.targets);
        hidden_mats.push(h);
        block = Some(match block {
            Some(acc) => acc.merge(&b),
            None => b,
        });
    }
    let block = block.expect("at least one active segment");
    let beta = block.solve(ridge);
    let systems: ResidualSystems<'_> = hidden_mats
        .iter()
        .zip(&active)
        .map(|(h, s)| (h, &s.targets))
        .collect();
    let gamma = apply_mode(direct_residual(&systems, &beta), total, mode);
    Ok((beta, gamma))
}

/// Greedy threshold-gated clustering of segments followed by one model fit
/// per cluster.
///
/// Anchors are taken in ascending original index; candidates are evaluated
/// in ascending index against the anchor cluster's accumulated data and
/// absorbed when the combined residual is at most `zeta`. Every attempt is
/// recorded. Segments without pairs are attached to the cluster of the
/// nearest modeled segment once clustering is done.
pub fn merge_and_model(set: &SegmentSet, config: &MergeConfig) -> Result<SubsystemLabeling> {
    config.validate()?;
    let with_pairs: Vec<usize> = (0..set.segments.len())
        .filter(|&i| set.segments[i].pair_count() > 0)
        .collect();
    if with_pairs.is_empty() {
        return Err(Error::EmptyInput("merge_and_model: no segment has training pairs"));
    }
    let input_dim = set.segments[with_pairs[0]].inputs.ncols();
    let layer = HiddenLayer::new(
        input_dim,
        config.hidden.num_neurons,
        config.hidden.activation,
        config.hidden.seed,
    );

    // per-segment hidden matrices and compressed factors, computed once
    let mut hidden_mats: Vec<Option<DMatrix<f64>>> = vec![None; set.segments.len()];
    let mut blocks: Vec<Option<LsBlock>> = vec![None; set.segments.len()];
    for &i in &with_pairs {
        let h = layer.hidden_matrix(&set.segments[i].inputs)?;
        blocks[i] = Some(LsBlock::from_system(&h, &set.segments[i].targets));
        hidden_mats[i] = Some(h);
    }

    let mut unassigned: Vec<usize> = with_pairs.clone();
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    let mut merge_log = Vec::new();

    while !unassigned.is_empty() {
        let anchor = unassigned.remove(0);
        let mut members = vec![anchor];
        let mut acc = blocks[anchor].clone().expect("anchor has a block");
        let mut acc_rows = set.segments[anchor].pair_count();

        let mut remaining = Vec::new();
        for cand in unassigned.drain(..) {
            let trial = acc.merge(blocks[cand].as_ref().expect("candidate has a block"));
            let beta = trial.solve(config.ridge);
            let mut systems: ResidualSystems<'_> = members
                .iter()
                .map(|&i| (hidden_mats[i].as_ref().unwrap(), &set.segments[i].targets))
                .collect();
            systems.push((hidden_mats[cand].as_ref().unwrap(), &set.segments[cand].targets));
            let rows = acc_rows + set.segments[cand].pair_count();
            let gamma = apply_mode(direct_residual(&systems, &beta), rows, config.residual_mode);
            let accepted = gamma <= config.zeta;
            merge_log.push(MergeAttempt {
                anchor,
                candidate: cand,
                gamma,
                accepted,
            });
            if accepted {
                acc = trial;
                acc_rows = rows;
                members.push(cand);
            } else {
                remaining.push(cand);
            }
        }
        unassigned = remaining;
        clusters.push(members);
    }

    // subsystem models: refit each cluster alone
    let mut models = Vec::with_capacity(clusters.len());
    let mut labels = vec![0usize; set.segments.len()];
    for (c, members) in clusters.iter().enumerate() {
        let segs: Vec<&Segment> = members.iter().map(|&i| &set.segments[i]).collect();
        let (beta, _) = fit_combined(&segs, &layer, config.ridge, config.residual_mode)?;
        models.push(ElmModel::new(layer.clone(), beta)?);
        for &i in members {
            labels[i] = c + 1;
        }
    }

    // attach pairless segments to the nearest modeled segment's cluster
    let mut short_assignments = Vec::new();
    for i in 0..set.segments.len() {
        if labels[i] == 0 {
            let nearest = *with_pairs
                .iter()
                .min_by_key(|&&j| (j.abs_diff(i), j))
                .expect("at least one modeled segment");
            labels[i] = labels[nearest];
            short_assignments.push(ShortSegmentAssignment {
                segment: i,
                assigned_to: nearest,
            });
        }
    }

    Ok(SubsystemLabeling {
        models,
        segment_labels: labels,
        merge_log,
        short_segment_assignments: short_assignments,
    })
}
