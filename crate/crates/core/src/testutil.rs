//! Finite-difference oracles and random expression generators for tests.

use crate::diffcore::{Graph, Var};
use rand::Rng;

/// Step used by the central-difference oracle.
pub fn fd_step(x: f64) -> f64 {
    1e-6 * x.abs().max(1.0)
}

/// Relative error with a unit floor on the magnitude.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn central_diff(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = fd_step(x[i]);
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Max relative error between two equally long slices.
pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| rel_err(*x, *y))
        .fold(0.0, f64::max)
}

/// Builds a random smooth scalar expression of the given inputs.
///
/// Every operation is analytic on the reals and bounded in growth so
/// finite differences stay meaningful for bindings in `[-2, 2]`.
pub fn random_smooth_expr(g: &mut Graph, inputs: &[Var], rng: &mut impl Rng, ops: usize) -> Var {
    let mut pool: Vec<Var> = inputs.to_vec();
    for _ in 0..ops {
        let a = pool[rng.gen_range(0..pool.len())];
        let b = pool[rng.gen_range(0..pool.len())];
        let node = match rng.gen_range(0..10) {
            0 => g.add(a, b),
            1 => g.sub(a, b),
            2 => g.mul(a, b),
            3 => {
                // a / (1 + b^2)
                let b2 = g.square(b);
                let one = g.scalar_const(1.0);
                let den = g.add(one, b2);
                g.div(a, den)
            }
            4 => g.tanh(a),
            5 => g.sin(a),
            6 => g.cos(a),
            7 => {
                let t = g.tanh(a);
                g.exp(t)
            }
            8 => {
                let a2 = g.square(a);
                let one = g.scalar_const(1.0);
                let arg = g.add(one, a2);
                g.log(arg)
            }
            _ => {
                let c = g.scalar_const(rng.gen_range(-1.5..1.5));
                let t = g.tanh(a);
                let p = g.powi(t, 3);
                g.mul(p, c)
            }
        };
        pool.push(node);
    }
    let k = pool.len().min(4);
    let mut out = pool[pool.len() - 1];
    for &v in &pool[pool.len() - k..pool.len() - 1] {
        out = g.add(out, v);
    }
    out
}
