use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Cosine,
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub total_steps: u64,
    pub kind: ScheduleKind,
}

impl LrSchedule {
    pub fn cosine(base_lr: f64, total_steps: u64) -> Self {
        Self {
            base_lr,
            total_steps: total_steps.max(1),
            kind: ScheduleKind::Cosine,
        }
    }

    pub fn constant(base_lr: f64) -> Self {
        Self {
            base_lr,
            total_steps: 1,
            kind: ScheduleKind::Constant,
        }
    }
}

/// Learning rate at `step`. Steps past `total_steps` clamp to the endpoint.
pub fn lr_at(schedule: &LrSchedule, step: u64) -> f64 {
    match schedule.kind {
        ScheduleKind::Constant => schedule.base_lr,
        ScheduleKind::Cosine => {
            let step = step.min(schedule.total_steps);
            if step == schedule.total_steps {
                return 0.0;
            }
            let frac = step as f64 / schedule.total_steps as f64;
            schedule.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_endpoints_and_midpoint() {
        let s = LrSchedule::cosine(0.9, 1000);
        assert_eq!(lr_at(&s, 0), 0.9);
        assert!((lr_at(&s, 500) - 0.45).abs() < 1e-12);
        assert!(lr_at(&s, 1000).abs() < 1e-12);
        assert!(lr_at(&s, 5000).abs() < 1e-12);
    }

    #[test]
    fn cosine_is_non_increasing() {
        let s = LrSchedule::cosine(1e-3, 97);
        let mut prev = f64::INFINITY;
        for t in 0..=97 {
            let v = lr_at(&s, t);
            assert!(v <= prev);
            prev = v;
        }
    }
}
