use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{is_envelope_path, NetworkConfig};
use crate::error::{Error, Result};
use crate::ndcore::{Tape, Tensor, Var};

/// All trainable tensors of the network, in the fixed order of
/// [`NetworkConfig::param_shapes`].
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    config: NetworkConfig,
    tensors: Vec<(String, Tensor)>,
}

impl NetworkParams {
    /// Glorot-uniform weights, zero biases, forget-gate bias 1.
    pub fn init(config: &NetworkConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let tensors = config
            .param_shapes()
            .into_iter()
            .map(|(name, shape)| {
                let numel: usize = shape.iter().product();
                let data = if name.ends_with(".b") || name.starts_with("lstm.b_") {
                    let fill = if name == "lstm.b_f" { 1.0 } else { 0.0 };
                    vec![fill; numel]
                } else {
                    let (fan_in, fan_out) = fans(&shape);
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    (0..numel).map(|_| rng.random_range(-limit..limit)).collect()
                };
                (name.to_string(), Tensor::new(shape, data).expect("shape"))
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            tensors,
        })
    }

    /// Assembles parameters from named tensors, e.g. read from a weights file.
    /// Names and shapes must match `config` exactly; order is free.
    pub fn from_named(config: &NetworkConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        config.validate()?;
        let expected = config.param_shapes();
        if named.len() != expected.len() {
            return Err(Error::InvalidConfig(format!(
                "expected {} tensors, found {}",
                expected.len(),
                named.len()
            )));
        }
        let mut tensors = Vec::with_capacity(expected.len());
        for (name, shape) in expected {
            let Some((_, t)) = named.iter().find(|(n, _)| n == name) else {
                return Err(Error::InvalidConfig(format!("missing tensor {name}")));
            };
            if t.shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    op: "load parameters",
                    lhs: shape,
                    rhs: t.shape().to_vec(),
                });
            }
            if !t.all_finite() {
                return Err(Error::NonFinite(format!("tensor {name}")));
            }
            tensors.push((name.to_string(), t.clone()));
        }
        Ok(Self {
            config: config.clone(),
            tensors,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|(n, _)| n.as_str())
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.tensors.iter().map(|(_, t)| t)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.tensors.iter_mut().map(|(_, t)| t)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.iter().map(|(_, t)| t.numel()).sum()
    }

    /// `true` at the positions of envelope-path tensors.
    pub fn envelope_mask(&self) -> Vec<bool> {
        self.names().map(is_envelope_path).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().all(Tensor::all_finite)
    }

    /// Records every tensor on `tape`, as trainable leaves if `trainable`.
    pub fn register(&self, tape: &mut Tape, trainable: bool) -> ParamVars {
        let vars = self
            .tensors()
            .map(|t| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        ParamVars { vars }
    }
}

fn fans(shape: &[usize]) -> (usize, usize) {
    match shape {
        // conv kernels [out, in, k]
        [o, i, k] => (i * k, o * k),
        [o, i] => (*i, *o),
        _ => (shape[0], shape[0]),
    }
}

/// Tape handles of a registered [`NetworkParams`], same order.
#[derive(Clone, Debug)]
pub struct ParamVars {
    vars: Vec<Var>,
}

pub(crate) mod slot {
    pub const EEG_CONV_W: usize = 0;
    pub const EEG_CONV_B: usize = 1;
    pub const DENSE1_W: usize = 2;
    pub const DENSE1_B: usize = 3;
    pub const DENSE2_W: usize = 4;
    pub const DENSE2_B: usize = 5;
    pub const ENV_CONV_W: usize = 6;
    pub const ENV_CONV_B: usize = 7;
    pub const LSTM_W: usize = 8;
    pub const LSTM_U: usize = 12;
    pub const LSTM_B: usize = 16;
}

impl ParamVars {
    /// Wraps handles already on a tape; they must follow the storage order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub(crate) fn at(&self, slot: usize) -> Var {
        self.vars[slot]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_parameter_count() {
        let p = NetworkParams::init(&NetworkConfig::default()).unwrap();
        assert_eq!(p.num_parameters(), 7232);
        let by_layer = |prefix: &str| -> usize {
            p.iter()
                .filter(|(n, _)| n.starts_with(prefix))
                .map(|(_, t)| t.numel())
                .sum()
        };
        assert_eq!(by_layer("eeg_conv."), 5128);
        assert_eq!(by_layer("eeg_dense1."), 144);
        assert_eq!(by_layer("eeg_dense2."), 272);
        assert_eq!(by_layer("env_conv."), 88);
        assert_eq!(by_layer("lstm."), 1600);
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let cfg = NetworkConfig::default();
        let a = NetworkParams::init(&cfg).unwrap();
        assert_eq!(a, NetworkParams::init(&cfg).unwrap());
        let other = NetworkParams::init(&NetworkConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a, other);

        let w = a.get("eeg_dense1.W").unwrap();
        let limit = (6.0f64 / (8 + 16) as f64).sqrt();
        assert!(w.data().iter().all(|v| v.abs() <= limit));
        assert!(a.get("lstm.b_f").unwrap().data().iter().all(|&v| v == 1.0));
        assert!(a.get("lstm.b_i").unwrap().data().iter().all(|&v| v == 0.0));
        assert!(a.get("eeg_conv.b").unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn degenerate_config_rejected() {
        let cfg = NetworkConfig {
            conv_filters: 0,
            ..Default::default()
        };
        assert!(NetworkParams::init(&cfg).is_err());
    }

    #[test]
    fn from_named_checks_shapes() {
        let cfg = NetworkConfig::default();
        let p = NetworkParams::init(&cfg).unwrap();
        let mut named: Vec<_> = p.iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
        named.reverse();
        assert_eq!(NetworkParams::from_named(&cfg, named.clone()).unwrap(), p);
        named[0].1 = Tensor::zeros(&[3]);
        assert!(NetworkParams::from_named(&cfg, named).is_err());
    }
}
