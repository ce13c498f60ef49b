//! Learning-rate schedules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Decay {
    /// Multiply by `factor` once every `every` epochs.
    Step { factor: f64, every: usize },
    /// Multiply by `factor` after every epoch.
    Exp { factor: f64 },
}

impl Default for Decay {
    fn default() -> Self {
        Decay::Step {
            factor: 0.1,
            every: 30,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial: f64,
    pub decay: Decay,
}

impl LrSchedule {
    pub fn step(initial: f64, factor: f64, every: usize) -> Self {
        LrSchedule {
            initial,
            decay: Decay::Step { factor, every },
        }
    }

    pub fn exp(initial: f64, factor: f64) -> Self {
        LrSchedule {
            initial,
            decay: Decay::Exp { factor },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.initial > 0.0) || !self.initial.is_finite() {
            return Err(Error::config(format!("lr must be positive, got {}", self.initial)));
        }
        let factor = match self.decay {
            Decay::Step { every: 0, .. } => {
                return Err(Error::config("schedule.every must be at least 1"));
            }
            Decay::Step { factor, .. } | Decay::Exp { factor } => factor,
        };
        if !(factor > 0.0 && factor < 1.0) {
            return Err(Error::config(format!("schedule.factor must be in (0, 1), got {factor}")));
        }
        Ok(())
    }

    /// Learning rate used throughout `epoch` (0-based).
    ///
    /// Step decay divides by `(1/factor)^k` rather than multiplying by
    /// `factor^k`: with `factor = 0.1` the divisor is an exact power of ten,
    /// so 0.1 becomes exactly 0.01, 0.001, ...
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.decay {
            Decay::Step { factor, every } => {
                let k = (epoch / every) as i32;
                self.initial / (1.0 / factor).powi(k)
            }
            Decay::Exp { factor } => self.initial * factor.powi(epoch as i32),
        }
    }
}

pub fn lr_at(schedule: &LrSchedule, epoch: usize) -> f64 {
    schedule.lr_at(epoch)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_decay_hits_powers_of_ten() {
        let s = LrSchedule::step(0.1, 0.1, 30);
        assert_eq!(s.lr_at(0), 0.1);
        assert_eq!(s.lr_at(29), 0.1);
        assert_eq!(s.lr_at(30), 0.01);
        assert_eq!(s.lr_at(60), 0.001);
    }

    #[test]
    fn exp_decay() {
        let s = LrSchedule::exp(0.045, 0.98);
        assert_eq!(s.lr_at(0), 0.045);
        assert_eq!(s.lr_at(1), 0.0441);
    }

    #[test]
    fn validation() {
        assert!(LrSchedule::step(0.0, 0.1, 30).validate().is_err());
        assert!(LrSchedule::step(0.1, 1.0, 30).validate().is_err());
        assert!(LrSchedule::step(0.1, 0.1, 0).validate().is_err());
        assert!(LrSchedule::exp(0.1, 0.98).validate().is_ok());
    }
}
