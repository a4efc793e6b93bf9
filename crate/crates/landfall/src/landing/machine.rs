//! Temporal confirmation and the flight-phase state machine.

use serde::{Deserialize, Serialize};

use super::site::LandingCandidate;
use super::LandingError;

/// Confirms a landing site only after it persists across frames.
#[derive(Debug, Clone)]
pub struct CandidateTracker {
    tracked: Option<LandingCandidate>,
    streak: usize,
    last_confirm_time: f64,
    /// Candidates within this world distance count as the same site.
    pub same_site_radius_m: f64,
    /// Consecutive sightings required to confirm.
    pub confirm_streak: usize,
    /// Seconds without a confirmation before the site search is declared
    /// stuck.
    pub timeout_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrackerDecision {
    Confirmed(LandingCandidate),
    Pending,
    LostTimeout,
}

impl CandidateTracker {
    pub fn new(start_time: f64) -> Self {
        Self {
            tracked: None,
            streak: 0,
            last_confirm_time: start_time,
            same_site_radius_m: 1.0,
            confirm_streak: 5,
            timeout_s: 5.0,
        }
    }

    pub fn streak(&self) -> usize {
        self.streak
    }

    /// Feeds one frame's best candidate (or lack of one).
    ///
    /// A candidate within the association radius of the tracked site extends
    /// the streak; anything else restarts it. Reaching the required streak
    /// confirms and also resets the timeout clock, as does the timeout
    /// itself so it fires once per stuck window rather than every frame.
    pub fn update(&mut self, candidate: Option<&LandingCandidate>, now: f64) -> TrackerDecision {
        match candidate {
            Some(c) => {
                let same_site = self.tracked.as_ref().map_or(false, |t| {
                    (t.world_point() - c.world_point()).norm() <= self.same_site_radius_m
                });
                self.streak = if same_site { self.streak + 1 } else { 1 };
                self.tracked = Some(*c);
            }
            None => {
                self.streak = 0;
                self.tracked = None;
            }
        }
        if self.streak >= self.confirm_streak {
            self.last_confirm_time = now;
            return TrackerDecision::Confirmed(self.tracked.unwrap());
        }
        if now - self.last_confirm_time > self.timeout_s {
            self.last_confirm_time = now;
            return TrackerDecision::LostTimeout;
        }
        TrackerDecision::Pending
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LandingState {
    /// Hover and scan for a safe site.
    SelectSite,
    /// Fly toward the confirmed site while re-checking it.
    Descend,
    /// Low-altitude hover for a dense-cloud re-check.
    ConfirmSite,
    FinalDescend,
    Landed,
    /// Sweep unvisited ground because selection timed out.
    Wander,
    Abort,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LandingEvent {
    Confirmed,
    Pending,
    LostTimeout,
    DepthReady,
    ConfirmPass,
    ConfirmFail,
    AltitudeBelowThreshold,
    Touchdown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Command {
    Hold,
    RunSelection,
    GotoSite,
    NextWaypoint,
    Hover,
    Reselect,
    DescendToSite,
    Stop,
}

/// Advances the flight phase by one event.
///
/// Besides the main flow (select, descend, low-altitude confirm, final
/// descend, touchdown, with wander on selection timeout), selection states
/// accept per-frame `Pending`/`DepthReady` self-loops, and a timeout during
/// `Descend` falls back to reselection. Every other pairing is rejected.
pub fn step_state_machine(
    state: LandingState,
    event: LandingEvent,
) -> Result<(LandingState, Command), LandingError> {
    use Command as C;
    use LandingEvent as E;
    use LandingState as S;
    let next = match (state, event) {
        (S::SelectSite, E::Confirmed) => (S::Descend, C::GotoSite),
        (S::SelectSite, E::LostTimeout) => (S::Wander, C::NextWaypoint),
        (S::SelectSite, E::Pending) => (S::SelectSite, C::Hold),
        (S::SelectSite, E::DepthReady) => (S::SelectSite, C::RunSelection),
        (S::Wander, E::Confirmed) => (S::Descend, C::GotoSite),
        (S::Wander, E::Pending) => (S::Wander, C::Hold),
        (S::Wander, E::LostTimeout) => (S::Wander, C::NextWaypoint),
        (S::Wander, E::DepthReady) => (S::Wander, C::RunSelection),
        (S::Descend, E::Confirmed | E::Pending) => (S::Descend, C::GotoSite),
        (S::Descend, E::DepthReady) => (S::Descend, C::RunSelection),
        (S::Descend, E::LostTimeout) => (S::SelectSite, C::Reselect),
        (S::Descend, E::AltitudeBelowThreshold) => (S::ConfirmSite, C::Hover),
        (S::ConfirmSite, E::ConfirmPass) => (S::FinalDescend, C::DescendToSite),
        (S::ConfirmSite, E::ConfirmFail) => (S::SelectSite, C::Reselect),
        (S::FinalDescend, E::Touchdown) => (S::Landed, C::Stop),
        _ => return Err(LandingError::InvalidTransition { state, event }),
    };
    Ok(next)
}

/// A seeded serpentine sweep over a square of ground, one waypoint per grid
/// cell, never revisiting a cell.
#[derive(Debug, Clone)]
pub struct WanderPlan {
    waypoints: Vec<(f64, f64)>,
    cursor: usize,
}

impl WanderPlan {
    /// Covers `[-half_extent, half_extent]^2` with cells `cell_m` across.
    /// The seed picks one of the eight sweep symmetries (start corner and
    /// major axis).
    pub fn new(half_extent_m: f64, cell_m: f64, seed: u64) -> Result<Self, LandingError> {
        if !(half_extent_m > 0.0 && cell_m > 0.0) {
            return Err(LandingError::BadInput {
                reason: "wander extent and cell size must be positive".into(),
            });
        }
        let n = ((2.0 * half_extent_m / cell_m).ceil() as usize).max(1);
        let flip_rows = seed & 1 != 0;
        let flip_cols = seed & 2 != 0;
        let transpose = seed & 4 != 0;
        let center = |i: usize| -> f64 { (i as f64 + 0.5) * cell_m - half_extent_m };
        let mut waypoints = Vec::with_capacity(n * n);
        for a in 0..n {
            let row = if flip_rows { n - 1 - a } else { a };
            for b in 0..n {
                // Serpentine: every other sweep runs backwards.
                let along = if a % 2 == 0 { b } else { n - 1 - b };
                let col = if flip_cols { n - 1 - along } else { along };
                let (x, y) = if transpose {
                    (center(row), center(col))
                } else {
                    (center(col), center(row))
                };
                waypoints.push((x, y));
            }
        }
        Ok(Self { waypoints, cursor: 0 })
    }

    /// Next unvisited cell centre, `None` once the sweep is exhausted.
    pub fn next_waypoint(&mut self) -> Option<(f64, f64)> {
        let wp = self.waypoints.get(self.cursor).copied();
        if wp.is_some() {
            self.cursor += 1;
        }
        wp
    }

    pub fn remaining(&self) -> usize {
        self.waypoints.len() - self.cursor
    }
}
