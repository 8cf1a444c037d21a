//! Exact computations on tabular games: joint laws, marginal coefficients,
//! action values, policy values, optimal pairs and the identifying system.

pub mod exact_q;
pub mod law;
pub mod identification;
pub mod truth;

pub use exact_q::{exact_optimal_pair, exact_policy_value, exact_q, ExactQ, OptimalPair};
pub use law::{exact_joint_law, exact_joint_law_with, point_laws, ActionRule, JointLaw, PointLaws, PointTable};
pub use identification::{identification_system, reward_system, first_step_system, IdentificationSystem};
pub use truth::{continuation_truth, true_coefficients, true_reward_coefficients, CoefficientTriple, TrueCoefficients};

/// Compensated (Kahan–Babuška) summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    /// Adds a term.
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    /// Compensated total.
    pub fn total(&self) -> f64 {
        self.sum + self.comp
    }
}
