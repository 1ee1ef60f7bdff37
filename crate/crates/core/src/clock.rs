//! Logical time. A virtual clock only moves when told to; a wall clock maps
//! elapsed real milliseconds onto the same logical scale.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockMode {
    Virtual,
    Wall,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ClockError {
    #[error("clock cannot move backwards from {now} to {requested}")]
    Backwards { now: u64, requested: u64 },
    #[error("a wall clock cannot be advanced explicitly")]
    NotVirtual,
}

#[derive(Debug, Clone)]
pub struct Clock {
    mode: ClockMode,
    now: u64,
    origin: Instant,
}

impl Clock {
    pub fn virtual_clock() -> Self {
        Self {
            mode: ClockMode::Virtual,
            now: 0,
            origin: Instant::now(),
        }
    }

    pub fn wall() -> Self {
        Self {
            mode: ClockMode::Wall,
            now: 0,
            origin: Instant::now(),
        }
    }

    pub fn new(mode: ClockMode) -> Self {
        match mode {
            ClockMode::Virtual => Self::virtual_clock(),
            ClockMode::Wall => Self::wall(),
        }
    }

    pub fn mode(&self) -> ClockMode {
        self.mode
    }

    pub fn now(&self) -> u64 {
        match self.mode {
            ClockMode::Virtual => self.now,
            ClockMode::Wall => (self.origin.elapsed().as_millis() as u64).max(self.now),
        }
    }

    /// Moves a virtual clock forward to `to`. Moving to the current time is
    /// a no-op.
    pub fn advance_to(&mut self, to: u64) -> Result<(), ClockError> {
        if self.mode != ClockMode::Virtual {
            return Err(ClockError::NotVirtual);
        }
        if to < self.now {
            return Err(ClockError::Backwards {
                now: self.now,
                requested: to,
            });
        }
        self.now = to;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn virtual_clock_is_monotone() {
        let mut c = Clock::virtual_clock();
        c.advance_to(100).unwrap();
        c.advance_to(100).unwrap();
        assert_eq!(c.now(), 100);
        assert_eq!(
            c.advance_to(50),
            Err(ClockError::Backwards {
                now: 100,
                requested: 50
            })
        );
    }

    #[test]
    fn wall_clock_refuses_explicit_advance() {
        let mut c = Clock::wall();
        assert_eq!(c.advance_to(10), Err(ClockError::NotVirtual));
    }
}
