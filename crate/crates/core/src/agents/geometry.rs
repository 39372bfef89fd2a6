//! Action spaces and how actions move boundaries.

use serde::{Deserialize, Serialize};

use crate::timeline::{is_valid, Boundary, Interval};

/// Window of the fixed-size scanner at step `t`. Independent of any action.
pub fn scanner_window(t: usize, step_size: f64, f0: f64) -> Interval {
    let start = t as f64 * step_size;
    Interval::new(start, (start + f0).min(1.0))
}

/// Boundary position selected by an ADD inside `region`.
pub fn apply_add(region: Interval, offset_index: usize, offsets: &[f64]) -> f64 {
    (region.start + offsets[offset_index]).clamp(region.start, region.end)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EsrlAction {
    Hold,
    Add(usize),
}

impl EsrlAction {
    pub const COUNT: usize = 7;

    pub fn from_index(i: usize) -> Self {
        match i {
            0 => EsrlAction::Hold,
            k => EsrlAction::Add(k - 1),
        }
    }

    pub fn index(self) -> usize {
        match self {
            EsrlAction::Hold => 0,
            EsrlAction::Add(k) => k + 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MoverAction {
    ShiftLeftLarge,
    ShiftLeftSmall,
    Hold,
    ShiftRightSmall,
    ShiftRightLarge,
}

impl MoverAction {
    pub const COUNT: usize = 5;
    pub const ALL: [MoverAction; 5] = [
        MoverAction::ShiftLeftLarge,
        MoverAction::ShiftLeftSmall,
        MoverAction::Hold,
        MoverAction::ShiftRightSmall,
        MoverAction::ShiftRightLarge,
    ];

    pub fn from_index(i: usize) -> Self {
        Self::ALL[i]
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn shift(self, small: f64, large: f64) -> f64 {
        match self {
            MoverAction::ShiftLeftLarge => -large,
            MoverAction::ShiftLeftSmall => -small,
            MoverAction::Hold => 0.0,
            MoverAction::ShiftRightSmall => small,
            MoverAction::ShiftRightLarge => large,
        }
    }
}

/// Result of applying one step's pair of actions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Move {
    /// Boundaries the actions asked for, before any rejection or clamping.
    pub proposed: [f64; 2],
    /// Whether each proposal satisfied the validity condition.
    pub valid: [bool; 2],
    pub output: Interval,
}

/// ESRL: an ADD sets a boundary inside the scanner window. A proposal that
/// would break `start < end` is rejected and the boundary keeps its value.
/// The start is resolved first; the end is checked against the new start.
pub fn esrl_move(current: Interval, window: Interval, actions: [EsrlAction; 2], offsets: &[f64]) -> Move {
    let propose = |a: EsrlAction, keep: f64| match a {
        EsrlAction::Hold => keep,
        EsrlAction::Add(k) => apply_add(window, k, offsets),
    };
    let ps = propose(actions[0], current.start);
    let vs = matches!(actions[0], EsrlAction::Hold) || is_valid(ps, Boundary::Start, current.end);
    let start = if vs { ps } else { current.start };
    let pe = propose(actions[1], current.end);
    let ve = matches!(actions[1], EsrlAction::Hold) || is_valid(pe, Boundary::End, start);
    let end = if ve { pe } else { current.end };
    Move { proposed: [ps, pe], valid: [vs, ve], output: Interval::new(start, end) }
}

/// Movers: both boundaries shift, then clamp into `[0, 1]` keeping a gap of
/// at least `min_gap`. Validity is judged on the unclamped proposal.
pub fn mover_move(current: Interval, actions: [MoverAction; 2], small: f64, large: f64, min_gap: f64) -> Move {
    let ps = current.start + actions[0].shift(small, large);
    let vs = is_valid(ps, Boundary::Start, current.end);
    let start = ps.clamp(0.0, (current.end - min_gap).max(0.0));
    let pe = current.end + actions[1].shift(small, large);
    let ve = is_valid(pe, Boundary::End, start);
    let end = pe.clamp((start + min_gap).min(1.0), 1.0);
    Move { proposed: [ps, pe], valid: [vs, ve], output: Interval::new(start, end) }
}

#[cfg(test)]
mod tests {
    use super::*;

    const OFFSETS: [f64; 6] = [0.0, 0.02, 0.04, 0.08, 0.1, 0.12];

    #[test]
    fn scanner_examples() {
        assert_eq!(scanner_window(0, 0.1, 0.12), Interval::new(0.0, 0.12));
        let w9 = scanner_window(9, 0.1, 0.12);
        assert!((w9.start - 0.9).abs() < 1e-12 && w9.end == 1.0);
    }

    #[test]
    fn add_examples() {
        assert!((apply_add(Interval::new(0.3, 0.42), 3, &OFFSETS) - 0.38).abs() < 1e-12);
        assert_eq!(apply_add(Interval::new(0.0, 0.12), 0, &OFFSETS), 0.0);
        assert_eq!(apply_add(Interval::new(0.9, 1.0), 5, &OFFSETS), 1.0);
    }

    #[test]
    fn action_indices_roundtrip() {
        for i in 0..EsrlAction::COUNT {
            assert_eq!(EsrlAction::from_index(i).index(), i);
        }
        for i in 0..MoverAction::COUNT {
            assert_eq!(MoverAction::from_index(i).index(), i);
        }
    }

    #[test]
    fn esrl_add_and_hold() {
        let w = scanner_window(3, 0.1, 0.12);
        let m = esrl_move(Interval::FULL, w, [EsrlAction::Add(0), EsrlAction::Hold], &OFFSETS);
        assert!((m.output.start - 0.3).abs() < 1e-12);
        assert_eq!(m.output.end, 1.0);
        let m = esrl_move(Interval::FULL, w, [EsrlAction::Hold, EsrlAction::Hold], &OFFSETS);
        assert_eq!(m.output, Interval::FULL);
        assert_eq!(m.valid, [true, true]);
    }

    #[test]
    fn esrl_rejects_crossing_add() {
        let current = Interval::new(0.0, 0.14);
        let w = scanner_window(5, 0.1, 0.12);
        let m = esrl_move(current, w, [EsrlAction::Add(2), EsrlAction::Hold], &OFFSETS);
        assert_eq!(m.valid, [false, true]);
        assert_eq!(m.output, current);
    }

    #[test]
    fn mover_examples() {
        let gap = 1.0 / 64.0;
        let m = mover_move(Interval::FULL, [MoverAction::ShiftRightLarge, MoverAction::Hold], 0.05, 0.16, gap);
        assert_eq!(m.output, Interval::new(0.16, 1.0));
        let m = mover_move(Interval::FULL, [MoverAction::Hold, MoverAction::Hold], 0.05, 0.16, gap);
        assert_eq!(m.output, Interval::FULL);

        let tight = Interval::new(0.5, 0.55);
        let m = mover_move(tight, [MoverAction::ShiftRightLarge, MoverAction::Hold], 0.05, 0.16, gap);
        assert_eq!(m.valid[0], false);
        assert!((m.output.start - (0.55 - gap)).abs() < 1e-12);
        assert!(m.output.end - m.output.start >= gap - 1e-12);

        let m = mover_move(Interval::FULL, [MoverAction::ShiftLeftSmall, MoverAction::ShiftRightSmall], 0.05, 0.16, gap);
        assert_eq!(m.valid, [false, false]);
        assert_eq!(m.output, Interval::FULL);
    }

    #[test]
    fn mover_output_always_valid() {
        let gap = 1.0 / 64.0;
        let mut cur = Interval::FULL;
        for k in 0..500usize {
            let a = [MoverAction::from_index(k * 7 % 5), MoverAction::from_index(k * 3 % 5)];
            cur = mover_move(cur, a, 0.05, 0.16, gap).output;
            assert!(cur.start >= 0.0 && cur.end <= 1.0 && cur.end - cur.start >= gap - 1e-12, "{cur:?}");
        }
    }
}
