//! Switching-instant detection from finite-difference discontinuity
//! statistics, and segmentation of traces between the detected instants.
//!
//! A switching occurrence shows up as a jump in some finite difference of
//! the state. The order-`p` statistic at sample `k` is
//!
//! ```text
//! s_p(k) = || D_p x(k+1) - D_p x(k) || / max(|| D_{p-1} x(k) ||, floor)
//! ```
//!
//! with `D_0 x(k) = x(k)` and `D_p x(k) = D_{p-1} x(k) - D_{p-1} x(k-1)`.
//! For `p = 1` this reduces to `||x(k+1) - 2 x(k) + x(k-1)|| / max(||x(k)||,
//! floor)`. Samples where the statistic reaches the order's threshold are
//! flagged; nearby flags are collapsed to the strongest one.

use std::collections::BTreeMap;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modeling::{Segment, SegmentSet};
use crate::trace::{check_consistent, Trace};

/// How per-trace statistics combine into one statistic per sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Aggregation {
    /// Threshold each trace separately, then take the union of the flagged
    /// instants.
    #[serde(rename = "per-trace-union")]
    PerTraceUnion,
    /// Average the statistic over traces, then threshold the average.
    #[serde(rename = "cross-trace-average")]
    CrossTraceAverage,
}

/// Detection parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionConfig {
    /// Highest finite-difference order `p` to test.
    pub max_order: usize,
    /// Threshold per order, keys `1..=max_order`.
    pub thresholds: BTreeMap<usize, f64>,
    pub aggregation: Aggregation,
    /// Lower bound applied to the statistic's denominator.
    pub denominator_floor: f64,
    /// Flags at most this many samples apart collapse into one instant.
    pub min_gap: usize,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            max_order: 1,
            thresholds: BTreeMap::from([(1, 0.002)]),
            aggregation: Aggregation::CrossTraceAverage,
            denominator_floor: 1e-9,
            min_gap: 2,
        }
    }
}

impl DetectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_order == 0 {
            return Err(Error::InvalidDetectionConfig(
                "max_order must be at least 1".into(),
            ));
        }
        for order in 1..=self.max_order {
            match self.thresholds.get(&order) {
                Some(eps) if *eps > 0.0 => {}
                Some(eps) => {
                    return Err(Error::InvalidDetectionConfig(format!(
                        "threshold for order {order} must be positive, got {eps}"
                    )))
                }
                None => {
                    return Err(Error::InvalidDetectionConfig(format!(
                        "no threshold supplied for order {order}"
                    )))
                }
            }
        }
        if self.denominator_floor.is_nan() || self.denominator_floor <= 0.0 {
            return Err(Error::InvalidDetectionConfig(
                "denominator_floor must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Ordered set of detected switching instants over a `K`-length window.
///
/// Instants are strictly increasing and interior to `(0, K)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwitchingSet {
    pub horizon: usize,
    pub instants: Vec<usize>,
}

impl SwitchingSet {
    pub fn new(horizon: usize, instants: Vec<usize>) -> Result<Self> {
        for pair in instants.windows(2) {
            if pair[1] <= pair[0] {
                return Err(Error::InvalidConfig(format!(
                    "switching instants not strictly increasing at {} -> {}",
                    pair[0], pair[1]
                )));
            }
        }
        for &k in &instants {
            if k == 0 || k >= horizon {
                return Err(Error::InstantOutOfRange {
                    instant: k,
                    horizon,
                });
            }
        }
        Ok(Self { horizon, instants })
    }

    pub fn len(&self) -> usize {
        self.instants.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instants.is_empty()
    }
}

/// The order-`p` finite difference `D_p x(k)` for all valid `k`.
///
/// Element `j` of the result is `D_p x(order + j)`; order 0 returns the
/// states unchanged.
pub fn finite_difference(trace: &Trace, order: usize) -> Result<Vec<DVector<f64>>> {
    if trace.len() <= order {
        return Err(Error::TraceTooShort {
            id: trace.id().to_string(),
            len: trace.len(),
            need: order + 1,
        });
    }
    let mut current: Vec<DVector<f64>> = trace.states().to_vec();
    for _ in 0..order {
        current = current.windows(2).map(|w| &w[1] - &w[0]).collect();
    }
    Ok(current)
}

/// The order-`p` switching statistic `s_p(k)` for `k` in `[order, K-1]`.
///
/// The denominator is floored to keep the ratio defined where the state (or
/// its difference) vanishes.
pub fn switching_statistic(
    trace: &Trace,
    order: usize,
    floor: f64,
) -> Result<Vec<(usize, f64)>> {
    if order == 0 {
        return Err(Error::InvalidDetectionConfig(
            "switching statistic needs order >= 1".into(),
        ));
    }
    let k_max = trace.horizon(); // statistic defined for k in [order, K-1]
    if k_max < order + 1 {
        return Err(Error::TraceTooShort {
            id: trace.id().to_string(),
            len: trace.len(),
            need: order + 2,
        });
    }
    let lower = finite_difference(trace, order - 1)?; // element j = D_{p-1} x(order-1+j)
    let upper: Vec<DVector<f64>> = lower.windows(2).map(|w| &w[1] - &w[0]).collect();
    // upper[j] = D_p x(order + j); numerator at k uses upper jump
    let mut out = Vec::with_capacity(k_max - order);
    for k in order..k_max {
        let jump = (&upper[k - order + 1] - &upper[k - order]).norm();
        let denom = lower[k - order + 1].norm().max(floor);
        out.push((k, jump / denom));
    }
    Ok(out)
}

/// Per-sample aggregated statistics, one row per tested order.
///
/// Row `i` covers order `i + 1`; entry `(k, s)` is the statistic at sample
/// `k` after aggregation over traces.
pub fn aggregated_statistics(
    traces: &[Trace],
    config: &DetectionConfig,
) -> Result<Vec<Vec<(usize, f64)>>> {
    check_consistent(traces)?;
    config.validate()?;
    let mut per_order = Vec::with_capacity(config.max_order);
    for order in 1..=config.max_order {
        let per_trace: Vec<Vec<(usize, f64)>> = traces
            .iter()
            .map(|t| switching_statistic(t, order, config.denominator_floor))
            .collect::<Result<_>>()?;
        let len = per_trace[0].len();
        let mut combined = Vec::with_capacity(len);
        for i in 0..len {
            let k = per_trace[0][i].0;
            let value = match config.aggregation {
                Aggregation::CrossTraceAverage => {
                    per_trace.iter().map(|s| s[i].1).sum::<f64>() / per_trace.len() as f64
                }
                // union mode has no single cross-trace statistic; keep the
                // largest per-trace value for reporting and deduplication
                Aggregation::PerTraceUnion => {
                    per_trace.iter().map(|s| s[i].1).fold(f64::MIN, f64::max)
                }
            };
            combined.push((k, value));
        }
        per_order.push(combined);
    }
    Ok(per_order)
}

/// Detect switching instants over a set of traces.
///
/// In per-trace-union mode a sample is flagged when any trace's statistic
/// of any order reaches that order's threshold; in cross-trace-average mode
/// the thresholds apply to the trace-averaged statistic. Runs of flags at
/// most `min_gap` apart collapse to the run's largest-statistic instant.
pub fn detect_switchings(traces: &[Trace], config: &DetectionConfig) -> Result<SwitchingSet> {
    check_consistent(traces)?;
    config.validate()?;
    let horizon = traces[0].horizon();

    // score(k): the strongest evidence seen at k, used to pick one instant
    // out of each run of neighbouring flags
    let mut flagged: BTreeMap<usize, f64> = BTreeMap::new();
    match config.aggregation {
        Aggregation::CrossTraceAverage => {
            for (row, stats) in aggregated_statistics(traces, config)?.iter().enumerate() {
                let eps = config.thresholds[&(row + 1)];
                for &(k, s) in stats {
                    if s >= eps {
                        let e = flagged.entry(k).or_insert(f64::MIN);
                        *e = e.max(s);
                    }
                }
            }
        }
        Aggregation::PerTraceUnion => {
            for order in 1..=config.max_order {
                let eps = config.thresholds[&order];
                for trace in traces {
                    for (k, s) in switching_statistic(trace, order, config.denominator_floor)? {
                        if s >= eps {
                            let e = flagged.entry(k).or_insert(f64::MIN);
                            *e = e.max(s);
                        }
                    }
                }
            }
        }
    }

    let instants = collapse_runs(&flagged, config.min_gap);
    SwitchingSet::new(horizon, instants)
}

/// Collapse runs of flags separated by at most `min_gap` samples, keeping
/// each run's argmax (earliest sample on ties).
fn collapse_runs(flagged: &BTreeMap<usize, f64>, min_gap: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut run: Option<(usize, usize, f64)> = None; // (last k, argmax k, max score)
    for (&k, &score) in flagged {
        match run {
            Some((last, best_k, best_s)) if k - last <= min_gap => {
                if score > best_s {
                    run = Some((k, k, score));
                } else {
                    run = Some((k, best_k, best_s));
                }
            }
            Some((_, best_k, _)) => {
                out.push(best_k);
                run = Some((k, k, score));
            }
            None => run = Some((k, k, score)),
        }
    }
    if let Some((_, best_k, _)) = run {
        out.push(best_k);
    }
    out
}

/// Split every trace at the detected instants and consolidate the m-th
/// piece of all traces into one segment.
///
/// With boundaries `0 = k_0 < k_1 < ... < k_l < k_{l+1} = K`, segment `m`
/// covers sample indices `[k_{m-1}, k_m]`; interior boundary samples are
/// shared by the two adjacent segments.
pub fn segment_traces(traces: &[Trace], set: &SwitchingSet) -> Result<SegmentSet> {
    check_consistent(traces)?;
    let horizon = traces[0].horizon();
    if set.horizon != horizon {
        return Err(Error::InconsistentTraces(format!(
            "switching set horizon {} does not match trace horizon {}",
            set.horizon, horizon
        )));
    }
    for &k in &set.instants {
        if k == 0 || k >= horizon {
            return Err(Error::InstantOutOfRange {
                instant: k,
                horizon,
            });
        }
    }
    let mut boundaries = Vec::with_capacity(set.instants.len() + 2);
    boundaries.push(0);
    boundaries.extend_from_slice(&set.instants);
    boundaries.push(horizon);

    let segments = boundaries
        .windows(2)
        .map(|w| Segment::from_traces(traces, w[0], w[1]))
        .collect::<Result<Vec<_>>>()?;
    SegmentSet::new(horizon, traces.len(), segments)
}
