//! Virtual time and pacing.
//!
//! Virtual time is kept as integer microseconds so periodic schedules land on
//! exact instants and runs are reproducible.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use thiserror::Error;

const MICROS_PER_SEC: u64 = 1_000_000;

/// A point or span on the virtual clock, in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SimTime(u64);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid duration {0:?}: expected non-negative decimal seconds")]
pub struct ParseTimeError(pub String);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimTime(s * MICROS_PER_SEC)
    }

    /// Rounds to the nearest microsecond. Negative or non-finite input is an
    /// error.
    pub fn from_secs_f64(s: f64) -> Result<Self, ParseTimeError> {
        if !s.is_finite() || s < 0.0 || s * MICROS_PER_SEC as f64 > u64::MAX as f64 {
            return Err(ParseTimeError(s.to_string()));
        }
        Ok(SimTime((s * MICROS_PER_SEC as f64).round() as u64))
    }

    pub const fn as_micros(self) -> u64 {
        self.0
    }

    pub const fn whole_secs(self) -> u64 {
        self.0 / MICROS_PER_SEC
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / MICROS_PER_SEC as f64
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    pub fn saturating_add(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_add(other.0))
    }

    pub fn saturating_sub(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(other.0))
    }

    /// How many whole `period`s fit in `self`.
    pub fn div_floor(self, period: SimTime) -> u64 {
        self.0 / period.0
    }

    pub fn times(self, k: u64) -> SimTime {
        SimTime(self.0.saturating_mul(k))
    }
}

impl std::ops::Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        self.saturating_add(rhs)
    }
}

impl fmt::Display for SimTime {
    /// Seconds with microsecond precision, trailing zeros trimmed.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let whole = self.0 / MICROS_PER_SEC;
        let frac = self.0 % MICROS_PER_SEC;
        if frac == 0 {
            write!(f, "{whole}")
        } else {
            let digits = format!("{frac:06}");
            write!(f, "{whole}.{}", digits.trim_end_matches('0'))
        }
    }
}

impl FromStr for SimTime {
    type Err = ParseTimeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let v: f64 = s.trim().parse().map_err(|_| ParseTimeError(s.to_string()))?;
        SimTime::from_secs_f64(v).map_err(|_| ParseTimeError(s.to_string()))
    }
}

/// Decides how long a driver waits before handling the event scheduled at a
/// virtual instant.
pub trait Pacer {
    fn wait_until(&mut self, at: SimTime);
}

/// Runs as fast as possible; virtual time never touches the wall clock.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoWait;

impl Pacer for NoWait {
    fn wait_until(&mut self, _at: SimTime) {}
}

/// Maps virtual time onto the wall clock: virtual instant `t` is reached
/// `t / scale` after `origin`. A scale of 1.0 is real time.
#[derive(Debug, Clone, Copy)]
pub struct WallClock {
    origin: Instant,
    scale: f64,
}

impl WallClock {
    pub fn new(origin: Instant, scale: f64) -> Self {
        assert!(scale.is_finite() && scale > 0.0, "time scale must be positive");
        WallClock { origin, scale }
    }

    /// Shifts this clock so that virtual zero falls `offset` (virtual) later.
    pub fn delayed(self, offset: SimTime) -> Self {
        let shift = Duration::from_secs_f64(offset.as_secs_f64() / self.scale);
        WallClock {
            origin: self.origin + shift,
            scale: self.scale,
        }
    }

    fn deadline(&self, at: SimTime) -> Instant {
        self.origin + Duration::from_secs_f64(at.as_secs_f64() / self.scale)
    }
}

impl Pacer for WallClock {
    fn wait_until(&mut self, at: SimTime) {
        let deadline = self.deadline(at);
        let now = Instant::now();
        if deadline > now {
            std::thread::sleep(deadline - now);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_display() {
        assert_eq!("2".parse::<SimTime>().unwrap(), SimTime::from_secs(2));
        assert_eq!("0.5".parse::<SimTime>().unwrap(), SimTime::from_micros(500_000));
        assert_eq!(SimTime::from_micros(2_500_000).to_string(), "2.5");
        assert_eq!(SimTime::from_secs(60).to_string(), "60");
        assert!("-1".parse::<SimTime>().is_err());
        assert!("abc".parse::<SimTime>().is_err());
        assert!("inf".parse::<SimTime>().is_err());
    }

    #[test]
    fn floor_division() {
        assert_eq!(SimTime::from_secs(7).div_floor(SimTime::from_secs(2)), 3);
        assert_eq!(SimTime::from_secs(3600).div_floor(SimTime::from_secs(2)), 1800);
    }

    #[test]
    fn wall_clock_waits() {
        let start = Instant::now();
        let mut clock = WallClock::new(start, 1000.0);
        clock.wait_until(SimTime::from_secs(5));
        assert!(start.elapsed() >= Duration::from_millis(5));
    }
}
