use critic_core::dynamics::{rollout, terminal_task_cost, DynamicsModel, FixedPolicy, TaskSpec};
use critic_core::landscape::{argmin_cell, landscape_grid, GridSpec, Surface};
use critic_core::metacritic::{
    meta_test, meta_train, InnerLoopConfig, MetaSetup, MetaTask, OuterLoopConfig, ThetaInit,
};
use critic_core::nets::{Activation, Checkpoint, CheckpointHeader, CriticModel, PolicyModel};
use critic_core::optim::OptimizerConfig;
use critic_core::toyoracle::{meta_optimal_phi, optimal_policy, true_q_return};
use proptest::prelude::*;

const TOY: PolicyModel = PolicyModel::Constant { action_dim: 1 };

#[test]
fn toy_meta_training_reaches_the_closed_form_critic() {
    let setup = MetaSetup {
        policy: &TOY,
        critic: &CriticModel::ToyQuadratic,
        model: &DynamicsModel::ScalarIntegrator,
    };
    let task = MetaTask {
        task: TaskSpec::new(vec![0.0], 2),
        starts: vec![vec![-6.0]],
    };
    let mut outer = OuterLoopConfig::new(1e-3, 100_000, ThetaInit::Fixed(vec![0.0]));
    outer.tolerance = Some(1e-12);
    let (phi, _) = meta_train(
        &setup,
        &[task],
        &InnerLoopConfig::new(0.5),
        &outer,
        vec![0.0],
    )
    .unwrap();
    let closed = meta_optimal_phi(-6.0, -6.0, 0.0, 0.0).unwrap();
    assert!((phi.0[0] - closed).abs() < 1e-9);

    // One model-free step with that critic lands on the goal.
    let res = meta_test(
        &CriticModel::ToyQuadratic,
        &phi.0,
        &TOY,
        &[0.0],
        &TaskSpec::new(vec![0.0], 2),
        &DynamicsModel::ScalarIntegrator,
        &[-6.0],
        &InnerLoopConfig::new(0.5),
        1,
    )
    .unwrap();
    assert!(res.final_cost() < 1e-12);
}

#[test]
fn point_mass_true_return_argmin_is_the_constant_reaching_action() {
    let env = DynamicsModel::point_mass(0.1);
    let spec = GridSpec::square(vec![0.8, -1.2], vec![0.0, 0.0], 10);
    let grid = landscape_grid(Surface::TrueReturn, &env, &spec).unwrap();
    let (i, j) = argmin_cell(&grid).unwrap();
    let p = spec.point(i, j);
    assert!(
        (p[0] - 0.8).abs() < 1e-12 && (p[1] + 1.2).abs() < 1e-12,
        "{p:?}"
    );
}

#[test]
fn checkpoints_reject_garbage() {
    assert!(Checkpoint::read_from(&b"nope"[..]).is_err());
    assert!(Checkpoint::read_from(&b"MBCK\x09\x00\x00\x00"[..]).is_err());
}

proptest! {
    #[test]
    fn checkpoint_round_trips(params in prop::collection::vec(-1e6f64..1e6, 81), seed in any::<u64>(), it in 0usize..10_000) {
        let ck = Checkpoint {
            header: CheckpointHeader {
                kind: "meta-critic".into(),
                model: CriticModel::mlp(4, 2, 2, vec![8], Activation::Elu),
                seed,
                iteration: it,
            },
            params,
        };
        let back = Checkpoint::read_from(&ck.to_bytes()[..]).unwrap();
        prop_assert_eq!(back, ck);
    }

    #[test]
    fn point_mass_constant_action_unrolls_linearly(
        s0 in prop::array::uniform2(-2.0f64..2.0),
        a in prop::array::uniform2(-2.0f64..2.0),
        horizon in 1usize..20,
    ) {
        let env = DynamicsModel::point_mass(0.1);
        let policy = PolicyModel::Constant { action_dim: 2 };
        let task = TaskSpec::new(vec![0.0, 0.0], horizon);
        let traj = rollout(FixedPolicy::new(&policy, &a), &env, &s0, &task).unwrap();
        let t = horizon as f64 * 0.1;
        for k in 0..2 {
            prop_assert!((traj.final_state()[k] - (s0[k] + a[k] * t)).abs() < 1e-12);
        }
        let cost = terminal_task_cost(&traj, &[0.0, 0.0]).unwrap();
        prop_assert!((cost - traj.final_state().iter().map(|x| x * x).sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn toy_return_is_smallest_at_the_optimal_policy(s0 in -5.0f64..5.0, g in -5.0f64..5.0, d in 0.01f64..2.0) {
        let task = TaskSpec::new(vec![g], 2);
        let env = DynamicsModel::ScalarIntegrator;
        let best = optimal_policy(s0, g);
        let at = |th: f64| true_q_return(&TOY, &[th], &env, &[s0], &task).unwrap();
        prop_assert!(at(best) < 1e-20);
        prop_assert!(at(best + d) > at(best));
        prop_assert!(at(best - d) > at(best));
    }

    #[test]
    fn adam_and_sgd_step_against_the_gradient(p in -3.0f64..3.0, mag in 1e-6f64..1e6, neg in any::<bool>()) {
        let g = if neg { -mag } else { mag };
        for cfg in [OptimizerConfig::Sgd, OptimizerConfig::adam()] {
            let mut opt = critic_core::optim::Optimizer::new(cfg, 0.01, 1);
            let mut x = [p];
            opt.step(&mut x, &[g]);
            prop_assert!((x[0] - p) * g < 0.0);
        }
    }
}
