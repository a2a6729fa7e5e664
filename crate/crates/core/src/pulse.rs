//! Square drive pulses and pulse sequences.
//!
//! During a pulse the drive enters the field equation as F·e^{iφ}; outside it
//! is zero. Phase φ = 0 is the [+X] convention, φ = π/2 the [+Y] variant.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A square drive pulse.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pulse {
    /// Start time (s).
    pub t_start: f64,
    /// Duration (s), > 0.
    pub duration: f64,
    /// Drive amplitude F (rad/s).
    pub amplitude: f64,
    /// Drive phase φ (rad).
    pub phase: f64,
}

impl Pulse {
    pub fn t_end(&self) -> f64 {
        self.t_start + self.duration
    }

    /// Complex drive F·e^{iφ} while the pulse is on.
    pub fn drive(&self) -> Complex64 {
        Complex64::from_polar(self.amplitude, self.phase)
    }
}

/// An ordered, non-overlapping list of pulses plus the total simulated
/// duration. Back-to-back pulses (zero gap) are allowed; interleaved
/// interiors are not.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseSequence {
    pub pulses: Vec<Pulse>,
    /// Total simulated duration (s); must exceed the last pulse end.
    pub t_end: f64,
}

impl PulseSequence {
    pub fn new(pulses: Vec<Pulse>, t_end: f64) -> Result<Self> {
        let seq = PulseSequence { pulses, t_end };
        seq.validate()?;
        Ok(seq)
    }

    /// A pulse-free sequence of the given duration.
    pub fn free_evolution(t_end: f64) -> Result<Self> {
        Self::new(Vec::new(), t_end)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_end > 0.0) || !self.t_end.is_finite() {
            return Err(Error::InvalidParam(format!(
                "t_end = {} must be positive and finite",
                self.t_end
            )));
        }
        let mut prev_end = 0.0f64;
        for (i, p) in self.pulses.iter().enumerate() {
            if !(p.duration > 0.0) {
                return Err(Error::InvalidParam(format!(
                    "pulse {i} has non-positive duration {}",
                    p.duration
                )));
            }
            if !p.t_start.is_finite() || p.t_start < 0.0 {
                return Err(Error::InvalidParam(format!(
                    "pulse {i} starts at invalid time {}",
                    p.t_start
                )));
            }
            if p.t_start < prev_end {
                return Err(Error::InvalidParam(format!(
                    "pulse {i} overlaps the previous pulse"
                )));
            }
            if !p.amplitude.is_finite() || !p.phase.is_finite() {
                return Err(Error::InvalidParam(format!("pulse {i} is not finite")));
            }
            prev_end = p.t_end();
        }
        if prev_end >= self.t_end {
            return Err(Error::InvalidParam(format!(
                "t_end = {} does not exceed the last pulse end {prev_end}",
                self.t_end
            )));
        }
        Ok(())
    }

    /// The complex drive at time `t`.
    pub fn drive_at(&self, t: f64) -> Complex64 {
        for p in &self.pulses {
            if t >= p.t_start && t < p.t_end() {
                return p.drive();
            }
        }
        Complex64::new(0.0, 0.0)
    }

    /// Pulse on/off switching times within (0, t_end), sorted.
    pub fn switch_times(&self) -> Vec<f64> {
        let mut ts = Vec::with_capacity(2 * self.pulses.len());
        for p in &self.pulses {
            for t in [p.t_start, p.t_end()] {
                if t > 0.0 && t < self.t_end {
                    ts.push(t);
                }
            }
        }
        ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ts.dedup();
        ts
    }

    /// Returns a copy with every pulse phase advanced by `theta` (rad).
    pub fn with_phase_offset(&self, theta: f64) -> Self {
        let mut seq = self.clone();
        for p in &mut seq.pulses {
            p.phase += theta;
        }
        seq
    }
}

/// The two-pulse Hahn sequence: pulse 1 on [t1, t1+d1], pulse 2 on
/// [t1+d1+tau, t1+d1+tau+d2]. The delay τ is measured from the end of
/// pulse 1 to the start of pulse 2.
#[allow(clippy::too_many_arguments)]
pub fn hahn_sequence(
    tau: f64,
    t1: f64,
    d1: f64,
    d2: f64,
    amplitude: f64,
    phase1: f64,
    phase2: f64,
    t_end: f64,
) -> Result<PulseSequence> {
    if !(tau >= 0.0) {
        return Err(Error::InvalidParam(format!("tau = {tau} must be >= 0")));
    }
    let p1 = Pulse {
        t_start: t1,
        duration: d1,
        amplitude,
        phase: phase1,
    };
    let p2 = Pulse {
        t_start: t1 + d1 + tau,
        duration: d2,
        amplitude,
        phase: phase2,
    };
    PulseSequence::new(vec![p1, p2], t_end)
}
