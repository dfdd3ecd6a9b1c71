use serde::{Deserialize, Serialize};

/// Linear warm-up followed by per-epoch exponential decay.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub decay: f64,
    pub warmup_steps: u64,
    pub steps_per_epoch: u64,
}

impl LrSchedule {
    pub fn constant(base_lr: f64) -> Self {
        LrSchedule {
            base_lr,
            decay: 1.0,
            warmup_steps: 0,
            steps_per_epoch: 1,
        }
    }

    pub fn lr(&self, step: u64) -> f64 {
        if step < self.warmup_steps {
            return self.base_lr * step as f64 / self.warmup_steps as f64;
        }
        let epochs = (step - self.warmup_steps) / self.steps_per_epoch.max(1);
        self.base_lr * self.decay.powi(epochs as i32)
    }
}
