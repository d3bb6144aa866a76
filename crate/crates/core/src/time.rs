//! Time frames, days and radio duty cycles.

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// Seconds in a simulated day.
pub const DAY_SECS: u64 = 86_400;

/// Frame and matching windows shared by every device of a deployment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeFramePolicy {
    /// Lifetime `T` of a frame keypair and its ephemeral identifier, in seconds.
    pub frame_period: u64,
    /// Continuous dwell required before an encounter token is established.
    pub min_encounter_duration: u64,
    /// Maximum accepted difference between the two recorded encounter timestamps.
    pub epsilon: u64,
}

impl Default for TimeFramePolicy {
    fn default() -> Self {
        Self { frame_period: 900, min_encounter_duration: 300, epsilon: 30 }
    }
}

impl TimeFramePolicy {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.frame_period == 0 {
            return Err(ConfigError::invalid("frame_period", "must be positive"));
        }
        if self.epsilon == 0 || self.epsilon >= self.frame_period {
            return Err(ConfigError::invalid("epsilon", "must satisfy 0 < epsilon < frame_period"));
        }
        if self.min_encounter_duration > self.frame_period {
            return Err(ConfigError::invalid("min_encounter_duration", "must not exceed frame_period"));
        }
        Ok(())
    }

    /// Index `l` of the frame containing `t`.
    pub fn frame_index(&self, t: u64) -> u64 {
        t / self.frame_period
    }

    pub fn frame_start(&self, frame_index: u64) -> u64 {
        frame_index * self.frame_period
    }

    /// First second after the frame.
    pub fn frame_end(&self, frame_index: u64) -> u64 {
        (frame_index + 1) * self.frame_period
    }
}

pub fn day_of(t: u64) -> u64 {
    t / DAY_SECS
}

/// A periodic on/off radio window: `on` seconds active out of every `period`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DutyCycle {
    pub period: u64,
    pub on: u64,
    /// Start of the first cycle.
    pub phase: u64,
}

impl DutyCycle {
    /// Advertising: 40 s on, 20 s idle, every minute.
    pub const fn advertising(phase: u64) -> Self {
        Self { period: 60, on: 40, phase }
    }

    /// Scanning: 30 s on, 20 s idle, every 50 s.
    pub const fn scanning(phase: u64) -> Self {
        Self { period: 50, on: 30, phase }
    }

    pub fn is_on(&self, t: u64) -> bool {
        t >= self.phase && (t - self.phase) % self.period < self.on
    }

    /// Active windows intersecting `[from, to)`, clipped to that range.
    pub fn windows(&self, from: u64, to: u64) -> Vec<(u64, u64)> {
        let mut out = Vec::new();
        if to <= from {
            return out;
        }
        let first_cycle = if from <= self.phase { 0 } else { (from - self.phase) / self.period };
        let mut start = self.phase + first_cycle * self.period;
        while start < to {
            let end = start + self.on;
            let (s, e) = (start.max(from), end.min(to));
            if s < e {
                out.push((s, e));
            }
            start += self.period;
        }
        out
    }

    /// Window openings (cycle starts) in `[from, to)`.
    pub fn openings(&self, from: u64, to: u64) -> impl Iterator<Item = u64> + '_ {
        let first = if from <= self.phase {
            self.phase
        } else {
            let k = (from - self.phase).div_ceil(self.period);
            self.phase + k * self.period
        };
        (0..).map(move |k| first + k * self.period).take_while(move |&t| t < to)
    }
}

/// Intersections of two sets of sorted, disjoint half-open windows.
pub fn overlaps(a: &[(u64, u64)], b: &[(u64, u64)]) -> Vec<(u64, u64)> {
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::new();
    while i < a.len() && j < b.len() {
        let s = a[i].0.max(b[j].0);
        let e = a[i].1.min(b[j].1);
        if s < e {
            out.push((s, e));
        }
        if a[i].1 < b[j].1 {
            i += 1;
        } else {
            j += 1;
        }
    }
    out
}
