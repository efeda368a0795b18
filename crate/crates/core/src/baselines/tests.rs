use super::*;
use crate::dynamics::DynamicsModel;
use crate::nets::{Activation, MlpConfig};
use crate::toyoracle::{supq_optimal_phi, supq_policy_fixed_point};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOY_POLICY: PolicyModel = PolicyModel::Constant { action_dim: 1 };

fn toy_cfg() -> QLearningConfig {
    QLearningConfig {
        gamma: 1.0,
        q_lr: 1e-3,
        policy_lr: 0.05,
        batch_size: 0,
        epochs: 100_000,
        policy_steps: 2000,
        optimizer: OptimizerConfig::Sgd,
        tolerance: Some(1e-10),
        seed: 0,
        capacity: 0,
    }
}

fn td(phi: f64, d: &ReplayDataset) -> f64 {
    let b: Vec<&Transition> = d.transitions().collect();
    q_td_loss_and_grad(&CriticModel::ToyQuadratic, &[phi], &b, 1.0)
        .unwrap()
        .0
}

#[test]
fn dataset_pairs_next_actions() {
    let d = toy_dataset(-6.0, 4.0, 0.0);
    let ts: Vec<&Transition> = d.transitions().collect();
    assert_eq!(ts.len(), 2);
    assert_eq!(ts[0].next, Some((vec![-2.0], vec![4.0])));
    assert_eq!(ts[0].reward, 0.0);
    assert_eq!(ts[1].next, None);
    assert_eq!(ts[1].reward, 4.0);
}

#[test]
fn dataset_capacity_drops_oldest() {
    let mut d = ReplayDataset::new(3);
    for i in 0..5 {
        d.push(Transition {
            state: vec![i as f64],
            action: vec![0.0],
            reward: 0.0,
            next: None,
            goal: vec![0.0],
        });
    }
    let first: Vec<f64> = d.transitions().map(|t| t.state[0]).collect();
    assert_eq!(first, vec![2.0, 3.0, 4.0]);
}

#[test]
fn bellman_consistent_q_has_zero_td_error() {
    // s0 = -3, a = 2: (s0+a)² = (s1+a)² = 1, s2 = 1, r2 = 1 with g = 0.
    let d = toy_dataset(-3.0, 2.0, 0.0);
    assert_eq!(td(1.0, &d), 0.0);
}

#[test]
fn toy_td_error_matches_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let s0: f64 = rng.gen_range(-6.0..6.0);
        let a: f64 = rng.gen_range(-4.0..4.0);
        let g: f64 = rng.gen_range(-2.0..2.0);
        let phi: f64 = rng.gen_range(-2.0..2.0);
        let (s1, s2) = (s0 + a, s0 + 2.0 * a);
        let r2 = (s2 - g) * (s2 - g);
        let p = (s0 + a) * (s0 + a);
        let q = (s1 + a) * (s1 + a);
        let expected = (p * phi - q * phi).powi(2) + (q * phi - r2).powi(2);
        let d = toy_dataset(s0, a, g);
        let b: Vec<&Transition> = d.transitions().collect();
        let (loss, grad) = q_td_loss_and_grad(&CriticModel::ToyQuadratic, &[phi], &b, 1.0).unwrap();
        assert!((loss - expected).abs() <= 1e-12 * expected.max(1.0));
        let analytic = 2.0 * phi * (p - q).powi(2) + 2.0 * q * (q * phi - r2);
        assert!(
            (grad[0] - analytic).abs() <= 1e-12 * analytic.abs().max(1.0),
            "{} vs {analytic}",
            grad[0]
        );
    }
}

#[test]
fn fit_q_reaches_closed_form_optimum() {
    let d = toy_dataset(-6.0, 4.0, 0.0);
    let phi = fit_q(&CriticModel::ToyQuadratic, vec![0.0], &d, &toy_cfg()).unwrap();
    let closed = supq_optimal_phi(-6.0, -2.0, 4.0, 4.0).unwrap();
    assert!(
        (phi.0[0] - closed).abs() <= 1e-8,
        "{} vs {closed}",
        phi.0[0]
    );
}

#[test]
fn fit_q_on_zero_reward_transitions_drives_td_to_zero() {
    let mut d = ReplayDataset::new(0);
    for _ in 0..4 {
        d.push(Transition {
            state: vec![1.0],
            action: vec![0.5],
            reward: 0.0,
            next: Some((vec![2.0], vec![0.5])),
            goal: vec![0.0],
        });
    }
    let phi = fit_q(&CriticModel::ToyQuadratic, vec![0.3], &d, &toy_cfg()).unwrap();
    assert!(td(phi.0[0], &d) < 1e-12);
}

#[test]
fn td_error_decreases_monotonically_with_small_steps() {
    let d = toy_dataset(-6.0, 4.0, 0.0);
    let mut cfg = toy_cfg();
    cfg.tolerance = None;
    let mut phi = vec![-1.0];
    let mut prev = td(phi[0], &d);
    for _ in 0..200 {
        cfg.epochs = 1;
        phi = fit_q(&CriticModel::ToyQuadratic, phi, &d, &cfg).unwrap().0;
        let now = td(phi[0], &d);
        assert!(now <= prev, "{now} > {prev}");
        prev = now;
    }
}

#[test]
fn toy_policy_from_q_stops_at_non_optimal_fixed_point() {
    let d = toy_dataset(-6.0, 4.0, 0.0);
    let cfg = toy_cfg();
    let phi = fit_q(&CriticModel::ToyQuadratic, vec![0.0], &d, &cfg).unwrap();
    let states = PolicyStates::Fixed {
        states: vec![vec![-6.0], vec![-2.0]],
        goal: vec![0.0],
    };
    let theta = policy_from_q(
        &CriticModel::ToyQuadratic,
        &phi.0,
        &TOY_POLICY,
        vec![0.0],
        &cfg,
        &states,
    )
    .unwrap();
    assert!((theta.0[0] - 4.0).abs() <= 1e-8);
    assert_eq!(supq_policy_fixed_point(-6.0, -2.0), 4.0);

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..10 {
        let s0: f64 = rng.gen_range(-4.0..4.0);
        let s1: f64 = rng.gen_range(-4.0..4.0);
        let states = PolicyStates::Fixed {
            states: vec![vec![s0], vec![s1]],
            goal: vec![0.0],
        };
        let th = policy_from_q(
            &CriticModel::ToyQuadratic,
            &[0.5],
            &TOY_POLICY,
            vec![1.0],
            &cfg,
            &states,
        )
        .unwrap();
        assert!((th.0[0] - supq_policy_fixed_point(s0, s1)).abs() <= 1e-8);
    }
}

#[test]
fn zero_q_leaves_policy_unchanged() {
    let states = PolicyStates::Fixed {
        states: vec![vec![-6.0], vec![-2.0]],
        goal: vec![0.0],
    };
    let th = policy_from_q(
        &CriticModel::ToyQuadratic,
        &[0.0],
        &TOY_POLICY,
        vec![1.25],
        &toy_cfg(),
        &states,
    )
    .unwrap();
    assert_eq!(th.0, vec![1.25]);
}

#[test]
fn metacritic_scalar_fixed_point_examples() {
    assert_eq!(metacritic_scalar_fixed_point(0.0, 0.0, 1.0).unwrap(), 0.0);
    assert_eq!(metacritic_scalar_fixed_point(-6.0, -2.0, 4.0).unwrap(), 0.5);
    assert_ne!(metacritic_scalar_fixed_point(-6.0, -2.0, 4.0).unwrap(), 3.0);
    assert!(metacritic_scalar_fixed_point(1.0, 1.0, -1.0).is_err());
}

fn point_mass_q() -> (CriticModel, PolicyModel, DdpgConfig) {
    let critic = CriticModel::Mlp {
        net: MlpConfig::new(4, vec![8], 1, Activation::Tanh),
        with_goal: false,
    };
    let policy = PolicyModel::Mlp(MlpConfig::new(2, vec![], 2, Activation::Tanh));
    let cfg = DdpgConfig {
        q: QLearningConfig {
            gamma: 0.9,
            q_lr: 1e-2,
            policy_lr: 1e-3,
            batch_size: 8,
            epochs: 3,
            policy_steps: 2,
            optimizer: OptimizerConfig::adam(),
            tolerance: None,
            seed: 3,
            capacity: 200,
        },
        iterations: 4,
        theta_init: ThetaInit::Network,
    };
    (critic, policy, cfg)
}

fn pm_tasks(shift: f64) -> Vec<MetaTask> {
    [[0.5, 0.5], [-0.5, 1.0]]
        .iter()
        .map(|g| MetaTask {
            task: TaskSpec::new(vec![g[0] + shift, g[1] + shift], 5),
            starts: vec![vec![shift, shift]],
        })
        .collect()
}

#[test]
fn ddpg_curve_length_and_errors() {
    let (critic, policy, cfg) = point_mass_q();
    let env = DynamicsModel::point_mass(0.1);
    let res = ddpg_train(&critic, &policy, &env, &pm_tasks(0.0), &cfg).unwrap();
    assert_eq!(res.curve.len(), cfg.iterations);
    assert!(res.curve.iter().all(|c| c.len() == 2));
    assert!(ddpg_train(&critic, &policy, &env, &[], &cfg).is_err());
}

#[test]
fn goal_shift_leaves_learning_unchanged() {
    let (critic, policy, cfg) = point_mass_q();
    let env = DynamicsModel::point_mass(0.1);
    let a = ddpg_train(&critic, &policy, &env, &pm_tasks(0.0), &cfg).unwrap();
    let b = ddpg_train(&critic, &policy, &env, &pm_tasks(0.75), &cfg).unwrap();
    for (x, y) in
        a.q.0
            .iter()
            .zip(&b.q.0)
            .chain(a.policy.0.iter().zip(&b.policy.0))
    {
        assert!((x - y).abs() <= 1e-9, "{x} vs {y}");
    }
    for (x, y) in a.curve.iter().flatten().zip(b.curve.iter().flatten()) {
        assert!((x - y).abs() <= 1e-9);
    }
}
