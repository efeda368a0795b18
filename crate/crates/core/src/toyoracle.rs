//! Closed forms for the horizon-2 scalar problem `s' = s + a`, `π(s) = θ`,
//! critic `(s + a)² φ₁`, cost `(s₂ - g)²` at the horizon only.

use crate::dynamics::{rollout, DynamicsError, EnvStepper, FixedPolicy, TaskSpec};
use crate::nets::PolicyModel;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OracleError {
    #[error("degenerate instance: {0} is zero")]
    ZeroDenominator(&'static str),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// A toy problem instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyInstance {
    pub s0: f64,
    pub goal: f64,
    pub phi: f64,
    pub theta: f64,
}

impl ToyInstance {
    pub const HORIZON: usize = 2;

    /// State after one step of the policy.
    pub fn s1(&self) -> f64 {
        self.s0 + self.theta
    }
}

/// `(g - s₀) / 2`: two equal steps land on the goal.
pub fn optimal_policy(s0: f64, g: f64) -> f64 {
    (g - s0) / 2.0
}

/// φ₁ for which one inner step with `α = ½` from θ reaches the goal:
/// `(s₀ + 2θ - g) / (2(s₀ + s₁ + 2θ))`.
pub fn meta_optimal_phi(s0: f64, s1: f64, theta: f64, g: f64) -> Result<f64, OracleError> {
    let d = s0 + s1 + 2.0 * theta;
    if d == 0.0 {
        return Err(OracleError::ZeroDenominator("s0 + s1 + 2θ"));
    }
    Ok((s0 + 2.0 * theta - g) / (2.0 * d))
}

/// Minimizer over φ₁ of the undiscounted TD error on one horizon-2 rollout
/// with constant action `a` and terminal cost `r₂`:
/// `(s₁+a)² r₂ / [((s₀+a)² - (s₁+a)²)² + (s₁+a)⁴]`.
pub fn supq_optimal_phi(s0: f64, s1: f64, a: f64, r2: f64) -> Result<f64, OracleError> {
    let p = (s0 + a) * (s0 + a);
    let q = (s1 + a) * (s1 + a);
    let den = (p - q) * (p - q) + q * q;
    if den == 0.0 {
        return Err(OracleError::ZeroDenominator("TD curvature"));
    }
    Ok(q * r2 / den)
}

/// TD error of the toy Q on the same rollout, as a function of φ₁.
pub fn supq_td_error(s0: f64, s1: f64, a: f64, r2: f64, phi: f64) -> f64 {
    let q0 = (s0 + a) * (s0 + a) * phi;
    let q1 = (s1 + a) * (s1 + a) * phi;
    (q0 - q1) * (q0 - q1) + (q1 - r2) * (q1 - r2)
}

/// Where policy descent on a fixed positive toy Q stops: `-(s₀ + s₁) / 2`.
pub fn supq_policy_fixed_point(s0: f64, s1: f64) -> f64 {
    -(s0 + s1) / 2.0
}

/// On-policy return: the summed per-step costs of a value-only rollout.
pub fn true_q_return(
    policy: &PolicyModel,
    params: &[f64],
    env: &dyn EnvStepper,
    s0: &[f64],
    task: &TaskSpec,
) -> Result<f64, OracleError> {
    let traj = rollout(FixedPolicy::new(policy, params), env, s0, task)?;
    Ok(traj.total_cost())
}
