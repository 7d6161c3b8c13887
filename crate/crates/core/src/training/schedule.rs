use serde::{Deserialize, Serialize};

/// One-cycle learning-rate policy with cosine warm-up and cosine anneal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OneCycle {
    pub total_steps: usize,
    /// Fraction of `total_steps` spent rising to `max_lr`.
    pub pct_start: f64,
    pub initial_lr: f64,
    pub max_lr: f64,
    /// Terminal rate as a divisor of `initial_lr`.
    pub final_div: f64,
}

impl OneCycle {
    pub fn new(total_steps: usize) -> Self {
        Self {
            total_steps,
            pct_start: 0.3,
            initial_lr: 5e-5,
            max_lr: 3e-4,
            final_div: 1e4,
        }
    }

    pub fn final_lr(&self) -> f64 {
        self.initial_lr / self.final_div
    }

    fn peak_step(&self) -> f64 {
        self.pct_start * self.total_steps as f64
    }

    /// Rate at `step`, clamped to `[0, total_steps]`.
    pub fn lr(&self, step: usize) -> f64 {
        let step = step.min(self.total_steps) as f64;
        let peak = self.peak_step();
        if step <= peak {
            if peak == 0.0 {
                return self.max_lr;
            }
            cosine(self.initial_lr, self.max_lr, step / peak)
        } else {
            let span = self.total_steps as f64 - peak;
            cosine(self.max_lr, self.final_lr(), (step - peak) / span)
        }
    }
}

fn cosine(start: f64, end: f64, progress: f64) -> f64 {
    end + (start - end) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}
