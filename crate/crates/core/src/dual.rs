//! Projected dual ascent on one inequality constraint `E[KL] <= bound`.

/// Lagrange multiplier for one information constraint.
///
/// The multiplier is projected onto `[0, ∞)` after every update. A disabled
/// constraint (infinite bound, or pinned by an ablation) keeps `beta = 0` and
/// contributes nothing to the objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualState {
    pub beta: f64,
    pub bound: f64,
    pub step_size: f64,
    /// Exponential moving average of the batch KL estimates.
    pub running_kl: f64,
    pinned: bool,
    updates: u64,
}

const RUNNING_DECAY: f64 = 0.9;

impl DualState {
    pub fn new(bound: f64, beta0: f64, step_size: f64) -> Self {
        let pinned = !bound.is_finite();
        Self {
            beta: if pinned { 0.0 } else { beta0.max(0.0) },
            bound,
            step_size,
            running_kl: 0.0,
            pinned,
            updates: 0,
        }
    }

    /// A multiplier held at zero: the constraint is switched off.
    pub fn disabled(bound: f64) -> Self {
        Self {
            beta: 0.0,
            bound,
            step_size: 0.0,
            running_kl: 0.0,
            pinned: true,
            updates: 0,
        }
    }

    pub fn is_active(&self) -> bool {
        !self.pinned
    }

    /// Penalty weight to use in the current step's objective.
    pub fn weight(&self) -> f64 {
        if self.pinned {
            0.0
        } else {
            self.beta
        }
    }

    /// `beta * (kl - bound)`, or 0 when the constraint is off.
    pub fn penalty(&self, kl: f64) -> f64 {
        if self.pinned {
            0.0
        } else {
            self.beta * (kl - self.bound)
        }
    }

    /// `beta <- max(0, beta + step * (kl - bound))`.
    pub fn update(&mut self, kl: f64) {
        self.running_kl = if self.updates == 0 {
            kl
        } else {
            RUNNING_DECAY * self.running_kl + (1.0 - RUNNING_DECAY) * kl
        };
        self.updates += 1;
        if self.pinned {
            return;
        }
        self.beta = (self.beta + self.step_size * (kl - self.bound)).max(0.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn infinite_bound_pins_beta() {
        let mut d = DualState::new(f64::INFINITY, 1.0, 0.1);
        d.update(1e6);
        assert_eq!(d.beta, 0.0);
        assert_eq!(d.penalty(5.0), 0.0);
        assert!(!d.is_active());
    }

    #[test]
    fn ascent_direction() {
        let mut d = DualState::new(0.1, 1.0, 0.5);
        d.update(0.3);
        assert!((d.beta - 1.1).abs() < 1e-12);
        d.update(0.0);
        assert!((d.beta - 1.05).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn beta_never_negative(kls in proptest::collection::vec(0.0f64..50.0, 1..100),
                               step in 0.0f64..5.0, beta0 in 0.0f64..3.0) {
            let mut d = DualState::new(0.1, beta0, step);
            for kl in kls {
                d.update(kl);
                prop_assert!(d.beta >= 0.0);
            }
        }

        #[test]
        fn constant_violation_strictly_increases(excess in 1e-3f64..10.0, steps in 1usize..50) {
            let mut d = DualState::new(0.1, 0.0, 0.01);
            let mut last = d.beta;
            for _ in 0..steps {
                d.update(0.1 + excess);
                prop_assert!(d.beta > last);
                last = d.beta;
            }
        }
    }
}
