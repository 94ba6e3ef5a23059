//! PC1/PC3 transmission skipping.
//!
//! After a successful transmission a PC3 node receives a [`SkipDirective`]
//! derived from the gNB's current [`SkipLevel`]. In dynamic mode the level is
//! re-evaluated once per radio frame against the PC1 delay target.

use crate::access::Priority;

pub const FRAME_US: u64 = 10_000;
pub const MAX_LEVEL: u8 = 4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SkipLevel(u8);

impl SkipLevel {
    pub const NO_SKIP: SkipLevel = SkipLevel(0);

    pub fn new(level: u8) -> Option<Self> {
        (level <= MAX_LEVEL).then_some(SkipLevel(level))
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn label(self) -> &'static str {
        match self.0 {
            0 => "NoSkip",
            1 => "SkipNextSlot",
            2 => "SkipNextTX",
            3 => "SkipNextTXx2",
            _ => "SkipNextTXx3",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SkipDirective {
    #[default]
    None,
    /// Stay silent until the next slot boundary instead of reserving.
    DeferToNextLssb,
    /// Forfeit this many backoff completions.
    SkipNextOpportunities(u8),
}

/// Directive for a node that just completed a successful transmission.
/// Only PC3 nodes are ever asked to skip.
pub fn apply_skip(priority: Priority, level: SkipLevel) -> SkipDirective {
    if priority != Priority::Pc3 {
        return SkipDirective::None;
    }
    match level.0 {
        0 => SkipDirective::None,
        1 => SkipDirective::DeferToNextLssb,
        l => SkipDirective::SkipNextOpportunities(l - 1),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SkipMode {
    Fixed(SkipLevel),
    Dynamic {
        target_delay_us: f64,
        deescalate_factor: f64,
    },
}

#[derive(Clone, Debug)]
pub struct SkipController {
    pub mode: SkipMode,
    pub frame_len: u64,
    current: SkipLevel,
    smoothed_delay: Option<f64>,
    trajectory: Vec<SkipLevel>,
}

/// Weight given to the newest frame in the running delay estimate.
const SMOOTHING: f64 = 0.5;

impl SkipController {
    pub fn new(mode: SkipMode) -> Self {
        let current = match mode {
            SkipMode::Fixed(l) => l,
            SkipMode::Dynamic { .. } => SkipLevel::NO_SKIP,
        };
        Self {
            mode,
            frame_len: FRAME_US,
            current,
            smoothed_delay: None,
            trajectory: Vec::new(),
        }
    }

    pub fn level(&self) -> SkipLevel {
        self.current
    }

    /// Levels in force after each frame boundary.
    pub fn trajectory(&self) -> &[SkipLevel] {
        &self.trajectory
    }

    /// Frame-boundary update. `None` means PC1 has no delay sample at all.
    pub fn on_frame(&mut self, measured_pc1_delay_us: Option<f64>) -> SkipLevel {
        if let SkipMode::Dynamic {
            target_delay_us,
            deescalate_factor,
        } = self.mode
        {
            let estimate = match (measured_pc1_delay_us, self.smoothed_delay) {
                (Some(m), Some(prev)) => Some(SMOOTHING * m + (1.0 - SMOOTHING) * prev),
                (Some(m), None) => Some(m),
                (None, _) => None,
            };
            self.smoothed_delay = estimate.or(self.smoothed_delay);
            self.current =
                update_skip_level(self.current, estimate, target_delay_us, deescalate_factor);
        }
        self.trajectory.push(self.current);
        self.current
    }

    pub fn mean_level(&self) -> f64 {
        if self.trajectory.is_empty() {
            return self.current.0 as f64;
        }
        self.trajectory.iter().map(|l| l.0 as f64).sum::<f64>() / self.trajectory.len() as f64
    }

    pub fn max_level(&self) -> SkipLevel {
        self.trajectory.iter().copied().max().unwrap_or(self.current)
    }
}

/// One escalation/de-escalation step. A missing measurement counts as a
/// violation.
pub fn update_skip_level(
    level: SkipLevel,
    measured: Option<f64>,
    target_delay_us: f64,
    deescalate_factor: f64,
) -> SkipLevel {
    match measured {
        None => SkipLevel((level.0 + 1).min(MAX_LEVEL)),
        Some(d) if d > target_delay_us => SkipLevel((level.0 + 1).min(MAX_LEVEL)),
        Some(d) if d < deescalate_factor * target_delay_us => SkipLevel(level.0.saturating_sub(1)),
        Some(_) => level,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lvl(l: u8) -> SkipLevel {
        SkipLevel::new(l).unwrap()
    }

    #[test]
    fn escalation_examples() {
        assert_eq!(update_skip_level(lvl(1), Some(700.0), 500.0, 0.5), lvl(2));
        assert_eq!(update_skip_level(lvl(4), Some(700.0), 500.0, 0.5), lvl(4));
        assert_eq!(update_skip_level(lvl(3), Some(200.0), 500.0, 0.5), lvl(2));
        assert_eq!(update_skip_level(lvl(0), Some(100.0), 500.0, 0.5), lvl(0));
        assert_eq!(update_skip_level(lvl(2), Some(400.0), 500.0, 0.5), lvl(2));
        assert_eq!(update_skip_level(lvl(2), None, 500.0, 0.5), lvl(3));
    }

    #[test]
    fn directive_mapping() {
        assert_eq!(apply_skip(Priority::Pc3, lvl(0)), SkipDirective::None);
        assert_eq!(apply_skip(Priority::Pc3, lvl(1)), SkipDirective::DeferToNextLssb);
        assert_eq!(apply_skip(Priority::Pc3, lvl(2)), SkipDirective::SkipNextOpportunities(1));
        assert_eq!(apply_skip(Priority::Pc3, lvl(4)), SkipDirective::SkipNextOpportunities(3));
    }

    #[test]
    fn pc1_and_wifi_never_skip() {
        for l in 0..=MAX_LEVEL {
            assert_eq!(apply_skip(Priority::Pc1, lvl(l)), SkipDirective::None);
            assert_eq!(apply_skip(Priority::WiFiBe, lvl(l)), SkipDirective::None);
        }
    }

    #[test]
    fn level_bounds() {
        assert!(SkipLevel::new(5).is_none());
        assert_eq!(lvl(3).label(), "SkipNextTXx2");
    }

    #[test]
    fn monotone_while_above_target() {
        let mut c = SkipController::new(SkipMode::Dynamic {
            target_delay_us: 500.0,
            deescalate_factor: 0.5,
        });
        let mut prev = c.level();
        for d in [900.0, 3000.0, 600.0, 700.0, 2000.0, 800.0] {
            let l = c.on_frame(Some(d));
            assert!(l >= prev);
            prev = l;
        }
        assert_eq!(prev, lvl(4));
    }

    #[test]
    fn smoothing_delays_deescalation() {
        let mut c = SkipController::new(SkipMode::Dynamic {
            target_delay_us: 1000.0,
            deescalate_factor: 0.5,
        });
        c.on_frame(Some(3000.0));
        c.on_frame(Some(3000.0));
        assert_eq!(c.level(), lvl(2));
        // 0.5*100 + 0.5*3000 stays above target
        assert_eq!(c.on_frame(Some(100.0)), lvl(3));
        assert_eq!(c.trajectory().len(), 3);
    }

    #[test]
    fn fixed_mode_never_moves() {
        let mut c = SkipController::new(SkipMode::Fixed(lvl(2)));
        c.on_frame(None);
        c.on_frame(Some(1.0));
        assert_eq!(c.level(), lvl(2));
        assert_eq!(c.mean_level(), 2.0);
    }
}
