use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Learning-rate schedule description.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant { lr: f64 },
    Noam { scale: f64, warmup: u64, dim: usize },
}

impl LrSchedule {
    pub fn at(&self, step: u64) -> Result<f64> {
        match *self {
            LrSchedule::Constant { lr } => {
                if step == 0 {
                    return Err(Error::InvalidArgument("lr schedule: step 0".into()));
                }
                Ok(lr)
            }
            LrSchedule::Noam { .. } => noam_lr(self, step),
        }
    }
}

/// Warmup-then-inverse-sqrt decay:
/// `scale · dim^{-1/2} · min(step^{-1/2}, step · warmup^{-3/2})`.
pub fn noam_lr(schedule: &LrSchedule, step: u64) -> Result<f64> {
    let LrSchedule::Noam { scale, warmup, dim } = *schedule else {
        return Err(Error::InvalidArgument(
            "noam_lr called on a non-noam schedule".into(),
        ));
    };
    if step == 0 {
        return Err(Error::InvalidArgument("noam_lr: step must be >= 1".into()));
    }
    if warmup == 0 || dim == 0 || scale <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "noam_lr: bad schedule (scale {scale}, warmup {warmup}, dim {dim})"
        )));
    }
    let s = step as f64;
    let w = warmup as f64;
    Ok(scale * (dim as f64).powf(-0.5) * f64::min(s.powf(-0.5), s * w.powf(-1.5)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noam(scale: f64, warmup: u64, dim: usize) -> LrSchedule {
        LrSchedule::Noam { scale, warmup, dim }
    }

    #[test]
    fn warmup_value_hand_computed() {
        // 1/sqrt(64) * 100 * 400^{-1.5} = (1/8) * 100/8000 = 0.0015625
        let lr = noam_lr(&noam(1.0, 400, 64), 100).unwrap();
        assert!((lr - 0.0015625).abs() < 1e-15, "got {lr}");
    }

    #[test]
    fn crossover_at_warmup() {
        let s = noam(2.0, 400, 64);
        let at = noam_lr(&s, 400).unwrap();
        let expect = 2.0 * (64f64).powf(-0.5) * (400f64).powf(-0.5);
        assert!((at - expect).abs() < 1e-15);
        // continuous there: step just below matches the linear ramp
        let below = noam_lr(&s, 399).unwrap();
        assert!(below < at);
    }

    #[test]
    fn lr_halves_at_four_times_warmup() {
        let s = noam(1.0, 400, 64);
        let peak = noam_lr(&s, 400).unwrap();
        let later = noam_lr(&s, 1600).unwrap();
        assert!((later - peak / 2.0).abs() < 1e-15);
    }

    #[test]
    fn positive_for_all_steps_and_zero_rejected() {
        let s = noam(1.0, 400, 64);
        assert!(noam_lr(&s, 0).is_err());
        for step in [1u64, 10, 399, 400, 401, 100_000] {
            assert!(noam_lr(&s, step).unwrap() > 0.0);
        }
        assert!(LrSchedule::Constant { lr: 1e-3 }.at(0).is_err());
        assert_eq!(LrSchedule::Constant { lr: 1e-3 }.at(5).unwrap(), 1e-3);
    }

    #[test]
    fn monotone_up_then_down() {
        let s = noam(1.0, 100, 32);
        let mut prev = 0.0;
        for step in 1..=100 {
            let lr = noam_lr(&s, step).unwrap();
            assert!(lr > prev);
            prev = lr;
        }
        for step in 101..200 {
            let lr = noam_lr(&s, step).unwrap();
            assert!(lr < prev);
            prev = lr;
        }
    }
}
