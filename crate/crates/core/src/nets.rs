//! Small multilayer perceptrons for policies and critics, expressed over
//! [`crate::diffcore`] so that parameter gradients of any order are available.
//!
//! Parameters live in one flat vector. Each layer contributes its weight
//! matrix (`out x in`, row-major) followed by its bias (`out`).

use crate::diffcore::{Graph, Shape, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{self, Read, Write};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NetError {
    #[error("{what} width mismatch: expected {expected}, got {got}")]
    Width {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid network config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Elu,
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, g: &mut Graph, x: Var) -> Var {
        match self {
            Activation::Tanh => g.tanh(x),
            Activation::Elu => g.elu(x),
            Activation::Relu => g.relu(x),
            Activation::Identity => x,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpConfig {
    pub input: usize,
    #[serde(default)]
    pub hidden: Vec<usize>,
    pub output: usize,
    /// Activation after every hidden layer.
    pub activation: Activation,
    /// Activation after the last layer.
    #[serde(default = "identity")]
    pub output_activation: Activation,
}

fn identity() -> Activation {
    Activation::Identity
}

/// Offsets of one layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerLayout {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

/// Weights and bias of one layer, copied out of a flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl MlpConfig {
    pub fn new(input: usize, hidden: Vec<usize>, output: usize, activation: Activation) -> Self {
        MlpConfig {
            input,
            hidden,
            output,
            activation,
            output_activation: Activation::Identity,
        }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if self.input == 0 || self.output == 0 || self.hidden.contains(&0) {
            return Err(NetError::Config(format!(
                "all widths must be at least 1, got {} -> {:?} -> {}",
                self.input, self.hidden, self.output
            )));
        }
        Ok(())
    }

    pub fn layers(&self) -> Vec<LayerLayout> {
        let mut widths = vec![self.input];
        widths.extend(&self.hidden);
        widths.push(self.output);
        let mut offset = 0;
        widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let l = LayerLayout {
                    fan_in,
                    fan_out,
                    weight_offset: offset,
                    bias_offset: offset + fan_in * fan_out,
                };
                offset += (fan_in + 1) * fan_out;
                l
            })
            .collect()
    }

    /// Sum over layers of `(in + 1) * out`.
    pub fn param_count(&self) -> usize {
        self.layers()
            .iter()
            .map(|l| (l.fan_in + 1) * l.fan_out)
            .sum()
    }

    /// Weights uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, biases zero.
    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.init_params_with(&mut rng)
    }

    pub fn init_params_with(&self, rng: &mut impl Rng) -> Vec<f64> {
        let mut params = vec![0.0; self.param_count()];
        for l in self.layers() {
            let bound = 1.0 / (l.fan_in as f64).sqrt();
            for w in &mut params[l.weight_offset..l.bias_offset] {
                *w = rng.gen_range(-bound..=bound);
            }
        }
        params
    }

    pub fn unflatten(&self, flat: &[f64]) -> Result<Vec<Layer>, NetError> {
        self.check_len(flat.len())?;
        Ok(self
            .layers()
            .iter()
            .map(|l| Layer {
                weights: flat[l.weight_offset..l.bias_offset].to_vec(),
                bias: flat[l.bias_offset..l.bias_offset + l.fan_out].to_vec(),
            })
            .collect())
    }

    pub fn flatten(&self, layers: &[Layer]) -> Result<Vec<f64>, NetError> {
        let layout = self.layers();
        if layout.len() != layers.len() {
            return Err(NetError::Width {
                what: "layer count",
                expected: layout.len(),
                got: layers.len(),
            });
        }
        let mut flat = Vec::with_capacity(self.param_count());
        for (l, layer) in layout.iter().zip(layers) {
            if layer.weights.len() != l.fan_in * l.fan_out || layer.bias.len() != l.fan_out {
                return Err(NetError::Width {
                    what: "layer",
                    expected: (l.fan_in + 1) * l.fan_out,
                    got: layer.weights.len() + layer.bias.len(),
                });
            }
            flat.extend(&layer.weights);
            flat.extend(&layer.bias);
        }
        Ok(flat)
    }

    fn check_len(&self, got: usize) -> Result<(), NetError> {
        let expected = self.param_count();
        if got != expected {
            return Err(NetError::Width {
                what: "parameter vector",
                expected,
                got,
            });
        }
        Ok(())
    }

    /// Slices per-layer weight and bias nodes out of a flat parameter node.
    /// Bind once and reuse the result for every forward pass in a graph.
    pub fn bind(&self, g: &mut Graph, flat: Var) -> Result<MlpVars, NetError> {
        self.check_len(g.shape(flat).len())?;
        let layers = self
            .layers()
            .iter()
            .map(|l| {
                let w = g.slice(flat, l.weight_offset, Shape::matrix(l.fan_out, l.fan_in));
                let b = g.slice(flat, l.bias_offset, Shape::vector(l.fan_out));
                (w, b)
            })
            .collect();
        Ok(MlpVars {
            layers,
            activation: self.activation,
            output_activation: self.output_activation,
            input: self.input,
        })
    }
}

/// Layer nodes of an MLP bound into a graph.
#[derive(Debug, Clone)]
pub struct MlpVars {
    layers: Vec<(Var, Var)>,
    activation: Activation,
    output_activation: Activation,
    input: usize,
}

impl MlpVars {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var, NetError> {
        let got = g.shape(x).len();
        if got != self.input {
            return Err(NetError::Width {
                what: "network input",
                expected: self.input,
                got,
            });
        }
        let x = if g.shape(x).is_vector() {
            x
        } else {
            g.reshape(x, Shape::vector(got))
        };
        let last = self.layers.len() - 1;
        let mut h = x;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let z = g.matvec(w, h);
            let z = g.add(z, b);
            let act = if i == last {
                self.output_activation
            } else {
                self.activation
            };
            h = act.apply(g, z);
        }
        Ok(h)
    }
}

/// Policy parameters θ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams(pub Vec<f64>);

/// Critic parameters φ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticParams(pub Vec<f64>);

/// Deterministic policy families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyModel {
    /// State-independent action: the parameters are the action.
    Constant {
        action_dim: usize,
    },
    Mlp(MlpConfig),
}

/// A policy bound into a graph.
#[derive(Debug, Clone)]
pub enum PolicyVars {
    Constant(Var),
    Mlp(MlpVars),
}

impl PolicyModel {
    pub fn param_count(&self) -> usize {
        match self {
            PolicyModel::Constant { action_dim } => *action_dim,
            PolicyModel::Mlp(c) => c.param_count(),
        }
    }

    pub fn state_dim(&self) -> Option<usize> {
        match self {
            PolicyModel::Constant { .. } => None,
            PolicyModel::Mlp(c) => Some(c.input),
        }
    }

    pub fn action_dim(&self) -> usize {
        match self {
            PolicyModel::Constant { action_dim } => *action_dim,
            PolicyModel::Mlp(c) => c.output,
        }
    }

    pub fn bind(&self, g: &mut Graph, params: Var) -> Result<PolicyVars, NetError> {
        match self {
            PolicyModel::Constant { action_dim } => {
                let got = g.shape(params).len();
                if got != *action_dim {
                    return Err(NetError::Width {
                        what: "policy parameters",
                        expected: *action_dim,
                        got,
                    });
                }
                let p = if g.shape(params).is_vector() {
                    params
                } else {
                    g.reshape(params, Shape::vector(got))
                };
                Ok(PolicyVars::Constant(p))
            }
            PolicyModel::Mlp(c) => Ok(PolicyVars::Mlp(c.bind(g, params)?)),
        }
    }

    /// Value-only action for a plain parameter vector.
    pub fn act(&self, params: &[f64], state: &[f64]) -> Result<Vec<f64>, NetError> {
        let mut g = Graph::new();
        let p = g.constant_vec(params);
        let vars = self.bind(&mut g, p)?;
        let s = g.constant_vec(state);
        let a = vars.forward(&mut g, s)?;
        Ok(g.value(a).to_vec())
    }
}

impl PolicyVars {
    /// `a = π(s)`.
    pub fn forward(&self, g: &mut Graph, state: Var) -> Result<Var, NetError> {
        match self {
            PolicyVars::Constant(p) => Ok(*p),
            PolicyVars::Mlp(m) => m.forward(g, state),
        }
    }
}

/// Critic families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CriticModel {
    /// Scalar toy critic `(s + a)^2 φ₁`; ignores the goal.
    ToyQuadratic,
    /// MLP over the concatenated inputs. With `with_goal` the input is
    /// `(s, a, g)`, otherwise `(s, a)`.
    Mlp { net: MlpConfig, with_goal: bool },
}

#[derive(Debug, Clone)]
pub enum CriticVars {
    ToyQuadratic(Var),
    Mlp { net: MlpVars, with_goal: bool },
}

/// How a critic learns about the goal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Conditioning {
    /// The critic ignores the goal.
    None,
    /// The goal is a critic input.
    Input,
    /// States are presented as `s - g`, to both critic and policy.
    Shift,
}

impl CriticModel {
    pub fn conditioning(&self) -> Conditioning {
        match self {
            CriticModel::ToyQuadratic => Conditioning::None,
            CriticModel::Mlp {
                with_goal: true, ..
            } => Conditioning::Input,
            CriticModel::Mlp {
                with_goal: false, ..
            } => Conditioning::Shift,
        }
    }

    /// Goal-conditioned MLP critic for the given state/action/goal widths.
    pub fn mlp(
        state_dim: usize,
        action_dim: usize,
        goal_dim: usize,
        hidden: Vec<usize>,
        activation: Activation,
    ) -> Self {
        CriticModel::Mlp {
            net: MlpConfig::new(state_dim + action_dim + goal_dim, hidden, 1, activation),
            with_goal: true,
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            CriticModel::ToyQuadratic => 1,
            CriticModel::Mlp { net, .. } => net.param_count(),
        }
    }

    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        match self {
            CriticModel::ToyQuadratic => vec![0.0],
            CriticModel::Mlp { net, .. } => net.init_params(seed),
        }
    }

    pub fn bind(&self, g: &mut Graph, params: Var) -> Result<CriticVars, NetError> {
        match self {
            CriticModel::ToyQuadratic => {
                let got = g.shape(params).len();
                if got != 1 {
                    return Err(NetError::Width {
                        what: "critic parameters",
                        expected: 1,
                        got,
                    });
                }
                let p = g.reshape(params, Shape::SCALAR);
                Ok(CriticVars::ToyQuadratic(p))
            }
            CriticModel::Mlp { net, with_goal } => Ok(CriticVars::Mlp {
                net: net.bind(g, params)?,
                with_goal: *with_goal,
            }),
        }
    }

    /// Value-only critic output.
    pub fn value(
        &self,
        params: &[f64],
        state: &[f64],
        action: &[f64],
        goal: &[f64],
    ) -> Result<f64, NetError> {
        let mut g = Graph::new();
        let p = g.constant_vec(params);
        let vars = self.bind(&mut g, p)?;
        let s = g.constant_vec(state);
        let a = g.constant_vec(action);
        let gl = g.constant_vec(goal);
        let out = vars.forward(&mut g, s, a, gl)?;
        Ok(g.scalar(out))
    }
}

impl CriticVars {
    /// Scalar critic output for one `(s, a, g)`.
    pub fn forward(
        &self,
        g: &mut Graph,
        state: Var,
        action: Var,
        goal: Var,
    ) -> Result<Var, NetError> {
        match self {
            CriticVars::ToyQuadratic(phi) => {
                for (what, v) in [("toy state", state), ("toy action", action)] {
                    let got = g.shape(v).len();
                    if got != 1 {
                        return Err(NetError::Width {
                            what,
                            expected: 1,
                            got,
                        });
                    }
                }
                let s = g.reshape(state, Shape::SCALAR);
                let a = g.reshape(action, Shape::SCALAR);
                let sa = g.add(s, a);
                let sq = g.square(sa);
                Ok(g.mul(sq, *phi))
            }
            CriticVars::Mlp { net, with_goal } => {
                let x = if *with_goal {
                    g.concat(&[state, action, goal])
                } else {
                    g.concat(&[state, action])
                };
                let out = net.forward(g, x)?;
                Ok(g.reshape(out, Shape::SCALAR))
            }
        }
    }
}

// ---- checkpoint files ----

const CHECKPOINT_MAGIC: &[u8; 4] = b"MBCK";
const CHECKPOINT_VERSION: u32 = 1;

/// Metadata stored in front of a parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    /// What the parameters belong to, e.g. `"meta-critic"` or `"supervised-q"`.
    pub kind: String,
    pub model: CriticModel,
    pub seed: u64,
    /// Outer iteration at which the snapshot was taken.
    pub iteration: usize,
}

/// Parameter checkpoint.
///
/// Byte layout (all integers little-endian):
///
/// | bytes | content |
/// |-------|---------|
/// | 4 | magic `MBCK` |
/// | 4 | format version, `u32` (currently 1) |
/// | 4 | header length `n`, `u32` |
/// | n | header, UTF-8 JSON of [`CheckpointHeader`] |
/// | 8 | parameter count `m`, `u64` |
/// | 8m | parameters, `f64` |
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn write_to(&self, mut w: impl Write) -> io::Result<()> {
        let header = serde_json::to_vec(&self.header).map_err(io::Error::other)?;
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        w.write_all(&(self.params.len() as u64).to_le_bytes())?;
        for p in &self.params {
            w.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)
            .expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from(mut r: impl Read) -> io::Result<Self> {
        let bad = |msg: String| io::Error::new(io::ErrorKind::InvalidData, msg);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad(format!("bad checkpoint magic {magic:?}")));
        }
        let mut u32buf = [0u8; 4];
        r.read_exact(&mut u32buf)?;
        let version = u32::from_le_bytes(u32buf);
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        r.read_exact(&mut u32buf)?;
        let mut header = vec![0u8; u32::from_le_bytes(u32buf) as usize];
        r.read_exact(&mut header)?;
        let header: CheckpointHeader = serde_json::from_slice(&header)
            .map_err(|e| bad(format!("bad checkpoint header: {e}")))?;
        let mut u64buf = [0u8; 8];
        r.read_exact(&mut u64buf)?;
        let count = u64::from_le_bytes(u64buf) as usize;
        let expected = header.model.param_count();
        if count != expected {
            return Err(bad(format!(
                "checkpoint holds {count} parameters, model needs {expected}"
            )));
        }
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            r.read_exact(&mut u64buf)?;
            params.push(f64::from_le_bytes(u64buf));
        }
        Ok(Checkpoint { header, params })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{central_diff, max_rel_err};

    fn policy_2x64() -> MlpConfig {
        MlpConfig::new(2, vec![64, 64], 2, Activation::Tanh)
    }

    #[test]
    fn param_count_follows_shape_rule() {
        assert_eq!(policy_2x64().param_count(), 4482);
        let linear = MlpConfig::new(3, vec![], 2, Activation::Tanh);
        assert_eq!(linear.param_count(), 8);
    }

    #[test]
    fn zero_width_is_rejected() {
        assert!(MlpConfig::new(0, vec![], 1, Activation::Elu)
            .validate()
            .is_err());
        assert!(MlpConfig::new(2, vec![0], 1, Activation::Elu)
            .validate()
            .is_err());
        assert!(policy_2x64().validate().is_ok());
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let c = policy_2x64();
        let a = c.init_params(42);
        assert_eq!(a, c.init_params(42));
        assert_ne!(a, c.init_params(43));
        for l in c.layers() {
            let bound = 1.0 / (l.fan_in as f64).sqrt();
            assert!(a[l.weight_offset..l.bias_offset]
                .iter()
                .all(|w| w.abs() <= bound));
            assert!(a[l.bias_offset..l.bias_offset + l.fan_out]
                .iter()
                .all(|b| *b == 0.0));
        }
    }

    #[test]
    fn init_weights_have_zero_mean() {
        // 10^4 draws from U(-1, 1): sigma = 1/sqrt(3), tolerance 3 sigma / 100.
        let c = MlpConfig::new(1, vec![], 10_000, Activation::Identity);
        let p = c.init_params(5);
        let w = &p[..10_000];
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let sigma = 1.0 / 3f64.sqrt();
        assert!(mean.abs() <= 3.0 * sigma / 100.0, "mean {mean}");
    }

    #[test]
    fn zero_params_give_zero_action() {
        let c = policy_2x64();
        let pm = PolicyModel::Mlp(c.clone());
        let a = pm.act(&vec![0.0; c.param_count()], &[0.3, -1.2]).unwrap();
        assert_eq!(a, vec![0.0, 0.0]);
    }

    #[test]
    fn identity_linear_policy_copies_state() {
        let c = MlpConfig::new(2, vec![], 2, Activation::Tanh);
        let params = c
            .flatten(&[Layer {
                weights: vec![1.0, 0.0, 0.0, 1.0],
                bias: vec![0.0, 0.0],
            }])
            .unwrap();
        let a = PolicyModel::Mlp(c).act(&params, &[0.7, -2.5]).unwrap();
        assert_eq!(a, vec![0.7, -2.5]);
    }

    #[test]
    fn policy_width_mismatch() {
        let pm = PolicyModel::Mlp(policy_2x64());
        let p = pm_params(&pm);
        assert!(matches!(
            pm.act(&p, &[1.0, 2.0, 3.0]),
            Err(NetError::Width { .. })
        ));
        assert!(matches!(
            pm.act(&p[1..], &[1.0, 2.0]),
            Err(NetError::Width { .. })
        ));
    }

    fn pm_params(pm: &PolicyModel) -> Vec<f64> {
        match pm {
            PolicyModel::Mlp(c) => c.init_params(1),
            PolicyModel::Constant { action_dim } => vec![0.1; *action_dim],
        }
    }

    #[test]
    fn policy_param_gradient_matches_fd() {
        let c = MlpConfig::new(3, vec![5, 4], 2, Activation::Tanh);
        let pm = PolicyModel::Mlp(c.clone());
        let theta = c.init_params(3);
        let state = [0.4, -0.9, 1.3];
        for coord in 0..2 {
            let mut g = Graph::new();
            let p = g.input_vec(&theta);
            let vars = pm.bind(&mut g, p).unwrap();
            let s = g.constant_vec(&state);
            let a = vars.forward(&mut g, s).unwrap();
            let out = g.elem(a, coord);
            let got = g.grad_values(out, &[p]).unwrap().flatten();
            let fd = central_diff(&theta, |th| pm.act(th, &state).unwrap()[coord]);
            assert!(max_rel_err(&got, &fd) <= 1e-5);
        }
    }

    #[test]
    fn zero_critic_outputs_zero() {
        let cm = CriticModel::mlp(4, 2, 2, vec![8, 8], Activation::Elu);
        let v = cm
            .value(
                &vec![0.0; cm.param_count()],
                &[1.0; 4],
                &[2.0; 2],
                &[0.5; 2],
            )
            .unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn toy_critic_value() {
        let v = CriticModel::ToyQuadratic
            .value(&[2.0], &[-6.0], &[3.0], &[0.0])
            .unwrap();
        assert_eq!(v, 18.0);
    }

    #[test]
    fn critic_action_gradient_matches_fd() {
        let cm = CriticModel::mlp(4, 2, 2, vec![6, 6], Activation::Elu);
        let phi = cm.init_params(9);
        let (s, a0, goal) = ([0.2, -0.3, 0.5, 0.1], [0.7, -0.4], [1.0, -1.0]);
        let mut g = Graph::new();
        let p = g.constant_vec(&phi);
        let vars = cm.bind(&mut g, p).unwrap();
        let sv = g.constant_vec(&s);
        let av = g.input_vec(&a0);
        let gv = g.constant_vec(&goal);
        let out = vars.forward(&mut g, sv, av, gv).unwrap();
        let got = g.grad_values(out, &[av]).unwrap().flatten();
        let fd = central_diff(&a0, |a| cm.value(&phi, &s, a, &goal).unwrap());
        assert!(max_rel_err(&got, &fd) <= 1e-5);
    }

    #[test]
    fn critic_gradient_reaches_every_layer() {
        let cm = CriticModel::mlp(4, 2, 2, vec![8, 8], Activation::Elu);
        let CriticModel::Mlp { net, .. } = &cm else {
            unreachable!()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let phi: Vec<f64> = (0..cm.param_count())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        for _ in 0..10 {
            let input: Vec<f64> = (0..8).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let mut g = Graph::new();
            let p = g.input_vec(&phi);
            let vars = cm.bind(&mut g, p).unwrap();
            let s = g.constant_vec(&input[..4]);
            let a = g.constant_vec(&input[4..6]);
            let gl = g.constant_vec(&input[6..]);
            let out = vars.forward(&mut g, s, a, gl).unwrap();
            let grad = g.grad_values(out, &[p]).unwrap().flatten();
            for l in net.layers() {
                let end = l.bias_offset + l.fan_out;
                assert!(grad[l.weight_offset..end].iter().any(|x| *x != 0.0));
            }
        }
    }

    #[test]
    fn forward_is_pure() {
        let cm = CriticModel::mlp(1, 1, 1, vec![4], Activation::Tanh);
        let phi = cm.init_params(2);
        let a = cm.value(&phi, &[0.3], &[0.1], &[0.0]).unwrap();
        let _ = cm.value(&phi, &[5.0], &[-3.0], &[1.0]).unwrap();
        let b = cm.value(&phi, &[0.3], &[0.1], &[0.0]).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        assert!(Checkpoint::read_from(&b"NOPE\x01\x00\x00\x00"[..]).is_err());
        let ck = Checkpoint {
            header: CheckpointHeader {
                kind: "meta-critic".into(),
                model: CriticModel::ToyQuadratic,
                seed: 3,
                iteration: 0,
            },
            params: vec![0.25],
        };
        let mut bytes = ck.to_bytes();
        assert_eq!(Checkpoint::read_from(bytes.as_slice()).unwrap(), ck);
        bytes.truncate(bytes.len() - 3);
        assert!(Checkpoint::read_from(bytes.as_slice()).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn flatten_unflatten_round_trip(values in proptest::collection::vec(-1e6f64..1e6, 4482)) {
                let c = policy_2x64();
                let layers = c.unflatten(&values).unwrap();
                prop_assert_eq!(c.flatten(&layers).unwrap(), values);
            }

            #[test]
            fn checkpoint_round_trip(params in proptest::collection::vec(any::<f64>().prop_filter("finite", |x| x.is_finite()), 40), seed in any::<u64>()) {
                let model = CriticModel::mlp(2, 1, 1, vec![5, 2], Activation::Elu);
                prop_assert_eq!(model.param_count(), 40);
                let ck = Checkpoint {
                    header: CheckpointHeader { kind: "meta-critic".into(), model, seed, iteration: 7 },
                    params,
                };
                prop_assert_eq!(Checkpoint::read_from(ck.to_bytes().as_slice()).unwrap(), ck);
            }
        }
    }
}
