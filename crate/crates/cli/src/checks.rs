//! Scalar toy verification and derivative probes. Each check reports the
//! error it achieved next to the tolerance it was held to.

use anyhow::Result;
use critic_core::baselines::{
    fit_q, metacritic_scalar_fixed_point, policy_from_q, toy_dataset, PolicyStates, QLearningConfig,
};
use critic_core::diffcore::Graph;
use critic_core::dynamics::{DynamicsModel, TaskSpec};
use critic_core::metacritic::{
    meta_train, meta_train_test_rounds, outer_loss_and_grad, InnerLoopConfig, MetaSetup, MetaTask,
    OuterLoopConfig, ThetaInit,
};
use critic_core::nets::{Activation, CriticModel, PolicyModel};
use critic_core::optim::OptimizerConfig;
use critic_core::toyoracle::{
    meta_optimal_phi, optimal_policy, supq_optimal_phi, supq_policy_fixed_point,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub detail: String,
    /// Worst error seen.
    pub error: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.error <= self.tolerance
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: {} (error {:.3e}, tolerance {:.1e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.detail,
            self.error,
            self.tolerance
        )
    }
}

/// Fault injection: the oracles are perturbed so every comparison with
/// them must fail.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Mutation(pub bool);

impl Mutation {
    fn apply(self, x: f64) -> f64 {
        if self.0 {
            x * (1.0 + 1e-2) + 1e-2
        } else {
            x
        }
    }
}

const TOY_POLICY: PolicyModel = PolicyModel::Constant { action_dim: 1 };

fn toy_setup() -> MetaSetup<'static> {
    MetaSetup {
        policy: &TOY_POLICY,
        critic: &CriticModel::ToyQuadratic,
        model: &DynamicsModel::ScalarIntegrator,
    }
}

fn toy_task(s0: f64, g: f64) -> MetaTask {
    MetaTask {
        task: TaskSpec::new(vec![g], 2),
        starts: vec![vec![s0]],
    }
}

fn converging_outer(theta: f64, tolerance: f64) -> OuterLoopConfig {
    let mut outer = OuterLoopConfig::new(1e-3, 100_000, ThetaInit::Fixed(vec![theta]));
    outer.tolerance = Some(tolerance);
    outer
}

fn supq_cfg() -> QLearningConfig {
    QLearningConfig {
        gamma: 1.0,
        q_lr: 1e-3,
        policy_lr: 0.05,
        batch_size: 0,
        epochs: 100_000,
        policy_steps: 2000,
        optimizer: OptimizerConfig::Sgd,
        tolerance: Some(1e-12),
        seed: 0,
        capacity: 0,
    }
}

/// Relative error with a unit floor on the magnitude.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Meta-training then meta-testing from `s0` reaches the optimal policy.
pub fn toy_recovery(s0: f64, g: f64, m: Mutation) -> Result<Check> {
    let res = meta_train_test_rounds(
        &toy_setup(),
        &toy_task(s0, g),
        &InnerLoopConfig::new(0.5),
        &converging_outer(0.0, 1e-12),
        vec![0.0],
        &DynamicsModel::ScalarIntegrator,
        20,
        1e-10,
    )?;
    let want = m.apply(optimal_policy(s0, g));
    let got = res.theta[0];
    Ok(Check {
        name: "toy-recovery",
        detail: format!(
            "θ_meta = {got:.6} after {} rounds, optimum {want}",
            res.thetas.len()
        ),
        error: (got - want).abs(),
        tolerance: 1e-4,
    })
}

/// TD fitting followed by policy descent on Q lands at `-(s₀+s₁)/2`.
pub fn supq_fixed_point(s0: f64, s1: f64, m: Mutation) -> Result<Check> {
    let a = s1 - s0;
    // The TD loss is quadratic in φ with curvature 2((p-q)² + q²); keep the
    // step below the stability limit.
    let (p, q) = ((s0 + a).powi(2), (s1 + a).powi(2));
    let cfg = QLearningConfig {
        q_lr: (0.5 / ((p - q).powi(2) + q * q)).min(1e-3),
        ..supq_cfg()
    };
    let d = toy_dataset(s0, a, 0.0);
    let phi = fit_q(&CriticModel::ToyQuadratic, vec![0.0], &d, &cfg)?;
    let states = PolicyStates::Fixed {
        states: vec![vec![s0], vec![s1]],
        goal: vec![0.0],
    };
    let theta = policy_from_q(
        &CriticModel::ToyQuadratic,
        &phi.0,
        &TOY_POLICY,
        vec![0.0],
        &cfg,
        &states,
    )?;
    let want = m.apply(supq_policy_fixed_point(s0, s1));
    let got = theta.0[0];
    let optimal = optimal_policy(s0, 0.0);
    let mut error = (got - want).abs();
    if (got - optimal).abs() <= 1e-3 {
        error = f64::INFINITY;
    }
    Ok(Check {
        name: "supq-fixed-point",
        detail: format!("θ_supq = {got:.8}, -(s0+s1)/2 = {want}, optimum {optimal}"),
        error,
        tolerance: 1e-6,
    })
}

/// The learning-to-learn scalar critic converges elsewhere than the optimum.
pub fn metacritic_scalar(s0: f64, s1: f64, m: Mutation) -> Result<Check> {
    let a = s1 - s0;
    let phi = metacritic_scalar_fixed_point(s0, s1, a)?;
    // One step from θ = a with α = ½ on the critic (s+a)²φ.
    let grad = 2.0 * phi * ((s0 + a) + (s1 + a));
    let theta = m.apply(a - 0.5 * grad);
    let engine = {
        let cfg = supq_cfg();
        let states = PolicyStates::Fixed {
            states: vec![vec![s0], vec![s1]],
            goal: vec![0.0],
        };
        let one = QLearningConfig {
            policy_lr: 0.5,
            policy_steps: 1,
            ..cfg
        };
        policy_from_q(
            &CriticModel::ToyQuadratic,
            &[phi],
            &TOY_POLICY,
            vec![a],
            &one,
            &states,
        )?
        .0[0]
    };
    let optimal = optimal_policy(s0, 0.0);
    let mut error = (engine - theta).abs();
    if (theta - optimal).abs() <= 1e-3 {
        error = f64::INFINITY;
    }
    Ok(Check {
        name: "metacritic-scalar",
        detail: format!("φ = {phi}, one step lands at θ = {theta}, optimum {optimal}"),
        error,
        tolerance: 1e-12,
    })
}

fn random_instance(rng: &mut impl Rng) -> (f64, f64, f64) {
    loop {
        let s0: f64 = rng.gen_range(-3.0..3.0);
        let th: f64 = rng.gen_range(-1.0..1.0);
        let g: f64 = rng.gen_range(-3.0..3.0);
        if (2.0 * s0 + 3.0 * th).abs() >= 0.5 {
            return (s0, th, g);
        }
    }
}

/// Engine-converged φ₁ against the meta-objective closed form.
pub fn meta_phi_oracle(count: usize, seed: u64, m: Mutation) -> Result<Check> {
    let setup = toy_setup();
    let inner = InnerLoopConfig::new(0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..count {
        let (s0, th, g) = random_instance(&mut rng);
        let (phi, _) = meta_train(
            &setup,
            &[toy_task(s0, g)],
            &inner,
            &converging_outer(th, 1e-10),
            vec![0.0],
        )?;
        let closed = m.apply(meta_optimal_phi(s0, s0 + th, th, g)?);
        worst = worst.max((phi.0[0] - closed).abs());
    }
    Ok(Check {
        name: "meta-phi-oracle",
        detail: format!("{count} random instances"),
        error: worst,
        tolerance: 1e-6,
    })
}

/// TD-fitted φ₁ against the supervised closed form.
pub fn supq_phi_oracle(count: usize, seed: u64, m: Mutation) -> Result<Check> {
    let cfg = supq_cfg();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < count {
        let s0: f64 = rng.gen_range(-2.0..2.0);
        let a: f64 = rng.gen_range(-1.5..1.5);
        let g: f64 = rng.gen_range(-2.0..2.0);
        let s1 = s0 + a;
        let r2 = (s1 + a - g).powi(2);
        let (p, q) = ((s0 + a).powi(2), (s1 + a).powi(2));
        // Keep the TD curvature away from zero so plain descent converges.
        if (p - q).powi(2) + q * q < 0.5 {
            continue;
        }
        let d = toy_dataset(s0, a, g);
        let phi = fit_q(&CriticModel::ToyQuadratic, vec![0.0], &d, &cfg)?;
        let closed = m.apply(supq_optimal_phi(s0, s1, a, r2)?);
        worst = worst.max((phi.0[0] - closed).abs());
        done += 1;
    }
    Ok(Check {
        name: "supq-phi-oracle",
        detail: format!("{count} random instances"),
        error: worst,
        tolerance: 1e-6,
    })
}

/// The engine's outer gradient against `2(s₂-g)(-2(s₀+s₁+2θ))`.
pub fn outer_gradient_closed_form(count: usize, seed: u64, m: Mutation) -> Result<Check> {
    let setup = toy_setup();
    let inner = InnerLoopConfig::new(0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..count {
        let s0: f64 = rng.gen_range(-6.0..6.0);
        let th: f64 = rng.gen_range(-2.0..2.0);
        let ph: f64 = rng.gen_range(-1.0..1.0);
        let g: f64 = rng.gen_range(-3.0..3.0);
        let t = toy_task(s0, g);
        let (_, grad) = outer_loss_and_grad(&setup, &t.task, &[s0], &inner, &[ph], &[th])?;
        let s1 = s0 + th;
        let d = s0 + s1 + 2.0 * th;
        let s2 = s0 + 2.0 * (th - ph * d);
        let closed = m.apply(2.0 * (s2 - g) * (-2.0 * d));
        // Rounding bound of the expression: magnitude of its summands.
        let scale = 4.0 * d.abs() * (s0.abs() + 2.0 * th.abs() + 2.0 * (ph * d).abs() + g.abs());
        worst = worst.max((grad[0] - closed).abs() / (f64::EPSILON * scale.max(f64::MIN_POSITIVE)));
    }
    Ok(Check {
        name: "outer-gradient-closed-form",
        detail: format!("{count} random instances, error in rounding units"),
        error: worst,
        tolerance: 8.0,
    })
}

fn fd_step(x: f64) -> f64 {
    1e-6 * x.abs().max(1.0)
}

fn central_diff(x: &[f64], mut f: impl FnMut(&[f64]) -> Result<f64>) -> Result<Vec<f64>> {
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let h = fd_step(x[i]);
        probe[i] = x[i] + h;
        let up = f(&probe)?;
        probe[i] = x[i] - h;
        let down = f(&probe)?;
        probe[i] = x[i];
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| rel_err(*x, *y))
        .fold(0.0, f64::max)
}

fn uniform(rng: &mut impl Rng, n: usize, r: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-r..r)).collect()
}

/// Gradient of the critic output in its state, action and parameters.
fn critic_grad(
    critic: &CriticModel,
    phi: &[f64],
    s: &[f64],
    a: &[f64],
    goal: &[f64],
) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let p = g.input_vec(phi);
    let vars = critic.bind(&mut g, p)?;
    let sv = g.input_vec(s);
    let av = g.input_vec(a);
    let gv = g.constant_vec(goal);
    let out = vars.forward(&mut g, sv, av, gv)?;
    Ok(g.grad_values(out, &[sv, av, p])?.flatten())
}

/// Probes of first-order (critic input and parameter) and second-order
/// (outer gradient through the inner step) derivatives against central
/// differences, on the toy critic and a width-8 MLP critic.
pub struct DerivativeReport {
    pub first: Check,
    pub second: Check,
}

pub fn derivative_probes(probes: usize, seed: u64) -> Result<DerivativeReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mlp = CriticModel::mlp(2, 2, 2, vec![8], Activation::Tanh);
    let pm = DynamicsModel::point_mass(0.1);
    let pm_policy = PolicyModel::Constant { action_dim: 2 };
    let (mut first, mut second) = (0.0f64, 0.0f64);
    let (mut n1, mut n2) = (0, 0);

    for k in 0..probes {
        let toy = k % 2 == 0;
        let order_two = (k / 2) % 2 == 1;
        let (critic, setup_model, policy, dim) = if toy {
            (
                &CriticModel::ToyQuadratic,
                &DynamicsModel::ScalarIntegrator,
                &TOY_POLICY,
                1,
            )
        } else {
            (&mlp, &pm, &pm_policy, 2)
        };
        let phi = if toy {
            uniform(&mut rng, 1, 1.0)
        } else {
            let base = mlp.init_params(rng.gen());
            base.iter().map(|x| x + rng.gen_range(-0.1..0.1)).collect()
        };
        let s = uniform(&mut rng, dim, 2.0);
        let goal = uniform(&mut rng, dim, 2.0);
        if !order_two {
            let a = uniform(&mut rng, dim, 2.0);
            let ad = critic_grad(critic, &phi, &s, &a, &goal)?;
            let mut x = s.clone();
            x.extend(&a);
            x.extend(&phi);
            let fd = central_diff(&x, |x| {
                Ok(critic.value(&x[2 * dim..], &x[..dim], &x[dim..2 * dim], &goal)?)
            })?;
            first = first.max(max_rel(&ad, &fd));
            n1 += 1;
        } else {
            let setup = MetaSetup {
                policy,
                critic,
                model: setup_model,
            };
            let task = TaskSpec::new(goal, if toy { 2 } else { 5 });
            let inner = InnerLoopConfig::new(if toy { 0.5 } else { 0.3 });
            let theta = uniform(&mut rng, dim, 1.0);
            let (_, ad) = outer_loss_and_grad(&setup, &task, &s, &inner, &phi, &theta)?;
            let fd = central_diff(&phi, |p| {
                Ok(outer_loss_and_grad(&setup, &task, &s, &inner, p, &theta)?.0)
            })?;
            second = second.max(max_rel(&ad, &fd));
            n2 += 1;
        }
    }
    Ok(DerivativeReport {
        first: Check {
            name: "first-order-derivatives",
            detail: format!("{n1} probes of critic gradients"),
            error: first,
            tolerance: 1e-5,
        },
        second: Check {
            name: "second-order-derivatives",
            detail: format!("{n2} probes of outer gradients"),
            error: second,
            tolerance: 1e-4,
        },
    })
}

/// Everything `toy-verify` runs, in report order.
pub fn toy_verify(m: Mutation) -> Result<Vec<Check>> {
    let deriv = derivative_probes(100, 0)?;
    Ok(vec![
        toy_recovery(-6.0, 0.0, m)?,
        supq_fixed_point(-6.0, -2.0, m)?,
        metacritic_scalar(-6.0, -2.0, m)?,
        meta_phi_oracle(100, 1, m)?,
        supq_phi_oracle(100, 2, m)?,
        outer_gradient_closed_form(100, 3, m)?,
        deriv.first,
        deriv.second,
    ])
}
