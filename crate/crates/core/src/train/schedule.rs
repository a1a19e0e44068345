use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// One change to the learning rate, taking effect from `epoch` onwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum LrEvent {
    Set {
        epoch: usize,
        rate: f64,
    },
    Scale {
        epoch: usize,
        factor: f64,
    },
    /// Linear ramp from the rate in force at `start` to `to` at `end`.
    Linear {
        start: usize,
        end: usize,
        to: f64,
    },
}

impl LrEvent {
    fn start(&self) -> usize {
        match *self {
            LrEvent::Set { epoch, .. } | LrEvent::Scale { epoch, .. } => epoch,
            LrEvent::Linear { start, .. } => start,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub initial: f64,
    #[serde(default)]
    pub events: Vec<LrEvent>,
}

impl LrSchedule {
    pub fn constant(rate: f64) -> Self {
        Self { initial: rate, events: Vec::new() }
    }

    /// 0.1, divided by 5 at epochs 240, 480, 640, 800 and 1000.
    pub fn paper_aet() -> Self {
        Self {
            initial: 0.1,
            events: [240, 480, 640, 800, 1000].into_iter().map(|epoch| LrEvent::Scale { epoch, factor: 0.2 }).collect(),
        }
    }

    /// 1e-3, raised to 5e-3 at epoch 50, then decayed linearly to 1e-5
    /// between epochs 3000 and 4500.
    pub fn paper_avt() -> Self {
        Self {
            initial: 1e-3,
            events: vec![LrEvent::Set { epoch: 50, rate: 5e-3 }, LrEvent::Linear { start: 3000, end: 4500, to: 1e-5 }],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |r: f64| r.is_finite() && r >= 0.0;
        if !ok(self.initial) {
            return Err(Error::Config(format!("initial learning rate {} is invalid", self.initial)));
        }
        let mut last = 0;
        for e in &self.events {
            let valid = match *e {
                LrEvent::Set { rate, .. } => ok(rate),
                LrEvent::Scale { factor, .. } => ok(factor),
                LrEvent::Linear { start, end, to } => ok(to) && end > start,
            };
            if !valid {
                return Err(Error::Config(format!("invalid learning-rate event {e:?}")));
            }
            if e.start() < last {
                return Err(Error::Config("learning-rate events must be ordered by epoch".into()));
            }
            last = e.start();
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let mut rate = self.initial;
        for e in &self.events {
            match *e {
                LrEvent::Set { epoch: at, rate: r } if epoch >= at => rate = r,
                LrEvent::Scale { epoch: at, factor } if epoch >= at => rate *= factor,
                LrEvent::Linear { start, end, to } if epoch >= start => {
                    rate = if epoch >= end {
                        to
                    } else {
                        rate + (to - rate) * (epoch - start) as f64 / (end - start) as f64
                    };
                }
                _ => {}
            }
        }
        rate
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_schedule() {
        let s = LrSchedule::paper_aet();
        assert_eq!(s.lr_at(0), 0.1);
        assert!((s.lr_at(250) - 0.02).abs() < 1e-15);
        assert!((s.lr_at(1200) - 0.1 * 0.2f64.powi(5)).abs() < 1e-15);
    }

    #[test]
    fn bump_then_linear_decay() {
        let s = LrSchedule::paper_avt();
        assert_eq!(s.lr_at(49), 1e-3);
        assert_eq!(s.lr_at(50), 5e-3);
        assert_eq!(s.lr_at(3000), 5e-3);
        assert!((s.lr_at(3750) - 0.5 * (5e-3 + 1e-5)).abs() < 1e-15);
        assert_eq!(s.lr_at(9000), 1e-5);
    }

    #[test]
    fn unordered_events_rejected() {
        let s = LrSchedule {
            initial: 0.1,
            events: vec![LrEvent::Scale { epoch: 5, factor: 0.5 }, LrEvent::Set { epoch: 2, rate: 0.1 }],
        };
        assert!(s.validate().is_err());
    }
}
