//! Switching-law reconstruction: label detected instants with subsystem
//! indices and, when the event sequence is (semi-)periodic, infer a
//! closed-form time-dependent law.

use serde::{Deserialize, Serialize};

use crate::detection::SwitchingSet;
use crate::error::{Error, Result};
use crate::modeling::SubsystemLabeling;

/// One mode change: the system switches from `from_mode` to `to_mode` at
/// sample `instant`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwitchEvent {
    #[serde(rename = "from")]
    pub from_mode: usize,
    #[serde(rename = "to")]
    pub to_mode: usize,
    #[serde(rename = "k")]
    pub instant: usize,
}

/// The reconstructed switching sequence over one observation window.
///
/// Valid only on `[0, horizon]`; extrapolation beyond the window goes
/// through [`PeriodicLaw`], never through the raw sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwitchingSequence {
    pub initial_mode: usize,
    pub horizon: usize,
    pub events: Vec<SwitchEvent>,
}

impl SwitchingSequence {
    pub fn new(initial_mode: usize, horizon: usize, events: Vec<SwitchEvent>) -> Result<Self> {
        let mut prev_mode = initial_mode;
        let mut prev_instant = 0usize;
        for e in &events {
            if e.instant <= prev_instant && !(prev_instant == 0 && e.instant > 0) {
                return Err(Error::InvalidConfig(format!(
                    "event instants must be strictly increasing, got {} after {}",
                    e.instant, prev_instant
                )));
            }
            if e.instant >= horizon {
                return Err(Error::InstantOutOfRange {
                    instant: e.instant,
                    horizon,
                });
            }
            if e.from_mode != prev_mode {
                return Err(Error::InvalidConfig(format!(
                    "event at {} leaves mode {} but the sequence was in mode {}",
                    e.instant, e.from_mode, prev_mode
                )));
            }
            if e.from_mode == e.to_mode {
                return Err(Error::InvalidConfig(format!(
                    "event at {} does not change the mode ({})",
                    e.instant, e.from_mode
                )));
            }
            prev_mode = e.to_mode;
            prev_instant = e.instant;
        }
        Ok(Self {
            initial_mode,
            horizon,
            events,
        })
    }

    /// The active mode at sample `k` within the window.
    pub fn mode_at(&self, k: usize) -> usize {
        let mut mode = self.initial_mode;
        for e in &self.events {
            if e.instant <= k {
                mode = e.to_mode;
            } else {
                break;
            }
        }
        mode
    }
}

/// Result of labeling a switching set: the sequence plus any detected
/// instants that turned out not to change the mode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceReconstruction {
    pub sequence: SwitchingSequence,
    /// Detected instants dropped because the segments on both sides carry
    /// the same subsystem label (detection false positives).
    pub dropped_instants: Vec<usize>,
}

/// Label the detected instants with the subsystem indices of the segments
/// around them.
///
/// Consecutive segments with equal labels produce no event; the instant
/// between them is dropped and reported.
pub fn reconstruct_sequence(
    set: &SwitchingSet,
    labeling: &SubsystemLabeling,
) -> Result<SequenceReconstruction> {
    if labeling.segment_labels.len() != set.instants.len() + 1 {
        return Err(Error::DimensionMismatch {
            what: "segment labels per instant",
            expected: set.instants.len() + 1,
            got: labeling.segment_labels.len(),
        });
    }
    let labels = &labeling.segment_labels;
    let mut events = Vec::new();
    let mut dropped = Vec::new();
    for (m, &instant) in set.instants.iter().enumerate() {
        let from = labels[m];
        let to = labels[m + 1];
        if from == to {
            dropped.push(instant);
        } else {
            events.push(SwitchEvent {
                from_mode: from,
                to_mode: to,
                instant,
            });
        }
    }
    let sequence = SwitchingSequence::new(labels[0], set.horizon, events)?;
    Ok(SequenceReconstruction {
        sequence,
        dropped_instants: dropped,
    })
}

/// One interval of a periodic law: `mode` is active on `[start, end)`
/// (offsets within the period).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LawInterval {
    pub mode: usize,
    pub start: usize,
    pub end: usize,
}

/// A time-dependent switching law that repeats every `period` samples.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeriodicLaw {
    /// Period in samples.
    pub period: usize,
    /// Sample index where the first full period starts.
    pub anchor: usize,
    /// Intervals partitioning `[0, period)`, adjacent intervals carrying
    /// distinct modes.
    pub intervals: Vec<LawInterval>,
}

impl PeriodicLaw {
    pub fn new(period: usize, anchor: usize, intervals: Vec<LawInterval>) -> Result<Self> {
        if period == 0 {
            return Err(Error::InvalidConfig("law period must be positive".into()));
        }
        if intervals.is_empty() {
            return Err(Error::InvalidConfig("law needs at least one interval".into()));
        }
        let mut expected_start = 0usize;
        for (i, iv) in intervals.iter().enumerate() {
            if iv.start != expected_start || iv.end <= iv.start {
                return Err(Error::InvalidConfig(format!(
                    "law intervals must partition [0, {period}): interval {i} is [{}, {})",
                    iv.start, iv.end
                )));
            }
            if i > 0 && intervals[i - 1].mode == iv.mode {
                return Err(Error::InvalidConfig(format!(
                    "adjacent law intervals {i} share mode {}",
                    iv.mode
                )));
            }
            expected_start = iv.end;
        }
        if expected_start != period {
            return Err(Error::InvalidConfig(format!(
                "law intervals cover [0, {expected_start}) but the period is {period}"
            )));
        }
        Ok(Self {
            period,
            anchor,
            intervals,
        })
    }

    /// A single-mode law (the degenerate one-interval case).
    pub fn constant(mode: usize, period: usize) -> Self {
        Self {
            period,
            anchor: 0,
            intervals: vec![LawInterval {
                mode,
                start: 0,
                end: period,
            }],
        }
    }

    /// The active mode at any sample `k >= 0`.
    pub fn mode_at(&self, k: usize) -> usize {
        let phase = (k as i64 - self.anchor as i64).rem_euclid(self.period as i64) as usize;
        self.intervals
            .iter()
            .find(|iv| iv.start <= phase && phase < iv.end)
            .map(|iv| iv.mode)
            .expect("intervals partition the period")
    }

    /// Sample indices in `(0, horizon)` where the mode changes.
    pub fn change_instants(&self, horizon: usize) -> Vec<usize> {
        (1..horizon)
            .filter(|&k| self.mode_at(k) != self.mode_at(k - 1))
            .collect()
    }
}

/// Infer the smallest period under which the sequence's mode function
/// repeats, tolerating one sample of jitter on event instants.
///
/// Candidate periods are tried in ascending order. For each, the law read
/// off the first period is replayed over the whole window and its exact
/// event train must match the observed events one for one, instants within
/// one sample and modes equal. Replaying the full window means a wrong
/// period cannot hide behind jitter: its boundary drift accumulates and
/// breaks the match within a few periods.
///
/// Returns `None` when the sequence has fewer than two events or no
/// candidate period up to half the horizon matches.
pub fn infer_periodic_law(seq: &SwitchingSequence) -> Option<PeriodicLaw> {
    if seq.events.len() < 2 {
        return None;
    }
    let horizon = seq.horizon;
    let modes: Vec<usize> = (0..=horizon).map(|k| seq.mode_at(k)).collect();

    for period in 2..=horizon / 2 {
        let first = &modes[..period];
        if first.windows(2).all(|w| w[0] == w[1]) {
            continue; // a constant stretch is not a switching law
        }
        let law = law_from_modes(first, period);
        if replay_matches(&law, seq) {
            return Some(law);
        }
    }
    None
}

/// Whether the law's exact event train over the window matches the observed
/// events one for one, within one sample each.
fn replay_matches(law: &PeriodicLaw, seq: &SwitchingSequence) -> bool {
    let mut observed = seq.events.iter();
    for k in law.change_instants(seq.horizon) {
        match observed.next() {
            Some(e)
                if e.instant.abs_diff(k) <= 1
                    && e.from_mode == law.mode_at(k - 1)
                    && e.to_mode == law.mode_at(k) => {}
            _ => return false,
        }
    }
    observed.next().is_none()
}

fn law_from_modes(modes: &[usize], period: usize) -> PeriodicLaw {
    let mut intervals = Vec::new();
    let mut start = 0usize;
    for k in 1..period {
        if modes[k] != modes[start] {
            intervals.push(LawInterval {
                mode: modes[start],
                start,
                end: k,
            });
            start = k;
        }
    }
    intervals.push(LawInterval {
        mode: modes[start],
        start,
        end: period,
    });
    PeriodicLaw::new(period, 0, intervals).expect("runs form a valid partition")
}
