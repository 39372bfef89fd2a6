//! Closed-form geometry on the normalized unit timeline.
//!
//! Every time value in this crate is a fraction of the video length, so a
//! whole video spans `[0, 1]`. Intervals are plain `(start, end)` pairs; raw
//! candidates are allowed to be out of order or out of range and can be
//! checked with [`is_valid`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of joint relative-location classes (4 start-side x 4 end-side).
pub const NUM_LOC_CLASSES: usize = 16;

/// A `[start, end]` pair on the unit timeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    pub start: f64,
    pub end: f64,
}

impl Interval {
    pub const FULL: Interval = Interval { start: 0.0, end: 1.0 };

    pub const fn new(start: f64, end: f64) -> Self {
        Interval { start, end }
    }

    pub fn len(&self) -> f64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    /// True when `0 <= start < end <= 1`.
    pub fn is_valid(&self) -> bool {
        is_valid(self.start, Boundary::Start, self.end) && is_valid(self.end, Boundary::End, self.start)
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t <= self.end
    }
}

impl From<[f64; 2]> for Interval {
    fn from(v: [f64; 2]) -> Self {
        Interval::new(v[0], v[1])
    }
}

impl From<Interval> for [f64; 2] {
    fn from(i: Interval) -> Self {
        [i.start, i.end]
    }
}

/// Which side of an interval a boundary sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    Start,
    End,
}

/// Position of one boundary relative to its ground-truth counterpart.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SideClass {
    LeftFar = 0,
    LeftNear = 1,
    RightNear = 2,
    RightFar = 3,
}

impl SideClass {
    pub const ALL: [SideClass; 4] = [
        SideClass::LeftFar,
        SideClass::LeftNear,
        SideClass::RightNear,
        SideClass::RightFar,
    ];

    pub fn ordinal(self) -> usize {
        self as usize
    }

    /// Classify boundary `b` against ground truth `gt` with near/far radius `f0`.
    ///
    /// An exact hit (`b == gt`) is `LeftNear`.
    pub fn classify(b: f64, gt: f64, f0: f64) -> SideClass {
        let k = boundary_distance(b, gt);
        match (b > gt, k > f0) {
            (false, true) => SideClass::LeftFar,
            (false, false) => SideClass::LeftNear,
            (true, false) => SideClass::RightNear,
            (true, true) => SideClass::RightFar,
        }
    }
}

/// Joint relative-location class of a `(start, end)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RelLocClass {
    pub start_class: SideClass,
    pub end_class: SideClass,
}

impl RelLocClass {
    pub fn joint_index(&self) -> usize {
        4 * self.start_class.ordinal() + self.end_class.ordinal()
    }

    pub fn from_joint_index(index: usize) -> Option<Self> {
        if index >= NUM_LOC_CLASSES {
            return None;
        }
        Some(RelLocClass {
            start_class: SideClass::ALL[index / 4],
            end_class: SideClass::ALL[index % 4],
        })
    }
}

/// Temporal IoU of two intervals, clamped to `[0, 1]`.
///
/// Disjoint intervals score 0. When all four endpoints coincide the
/// denominator vanishes and the result is 1 (two identical points).
pub fn tiou(a: Interval, b: Interval) -> f64 {
    let inter = a.end.min(b.end) - a.start.max(b.start);
    let hull = a.end.max(b.end) - a.start.min(b.start);
    if hull <= 0.0 {
        return 1.0;
    }
    (inter / hull).clamp(0.0, 1.0)
}

pub fn boundary_distance(b: f64, gt: f64) -> f64 {
    (b - gt).abs()
}

pub fn rel_loc_class(scanner: Interval, gt: Interval, f0: f64) -> RelLocClass {
    debug_assert!(f0 > 0.0);
    RelLocClass {
        start_class: SideClass::classify(scanner.start, gt.start, f0),
        end_class: SideClass::classify(scanner.end, gt.end, f0),
    }
}

/// Validity condition for a single candidate boundary.
///
/// A start must lie in `[0, other)`; an end must lie in `(other, 1]`.
pub fn is_valid(candidate: f64, which: Boundary, other_boundary: f64) -> bool {
    match which {
        Boundary::Start => candidate < other_boundary && candidate >= 0.0,
        Boundary::End => candidate > other_boundary && candidate <= 1.0,
    }
}

/// L1 distance between two agents' outputs.
pub fn conflict(a: Interval, b: Interval) -> f64 {
    (a.start - b.start).abs() + (a.end - b.end).abs()
}

/// Maximum pairwise conflict over all unordered pairs.
pub fn eta(finals: &[Interval]) -> Result<f64> {
    Ok(ConflictReport::new(finals)?.eta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Oos,
    Match,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairConflict {
    pub i: usize,
    pub j: usize,
    pub conflict: f64,
}

/// Pairwise conflicts among N agents plus their maximum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictReport {
    pub pairwise: Vec<PairConflict>,
    pub eta: f64,
    pub verdict: Option<Verdict>,
}

impl ConflictReport {
    pub fn new(finals: &[Interval]) -> Result<Self> {
        if finals.len() < 2 {
            return Err(Error::TooFewAgents(finals.len()));
        }
        let mut pairwise = Vec::with_capacity(finals.len() * (finals.len() - 1) / 2);
        for i in 0..finals.len() {
            for j in (i + 1)..finals.len() {
                pairwise.push(PairConflict { i, j, conflict: conflict(finals[i], finals[j]) });
            }
        }
        let eta = pairwise.iter().map(|p| p.conflict).fold(0.0, f64::max);
        Ok(ConflictReport { pairwise, eta, verdict: None })
    }

    /// Sets the verdict: OOS iff `eta > h`.
    pub fn with_threshold(mut self, h: f64) -> Self {
        self.verdict = Some(if self.eta > h { Verdict::Oos } else { Verdict::Match });
        self
    }
}
