//! MLP layers with ELU hidden activations and a Gaussian policy head.

use super::tape::{NodeId, Tape};
use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::rng;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Elu,
    Identity,
}

/// Architecture of a dense stack: input width, hidden widths, output width.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
    pub activation: Activation,
    pub init_seed: u64,
}

impl MlpSpec {
    pub fn new(input: usize, hidden: &[usize], output: usize, init_seed: u64) -> MlpSpec {
        MlpSpec {
            input,
            hidden: hidden.to_vec(),
            output,
            activation: Activation::Elu,
            init_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input == 0
            || self.output == 0
            || self.hidden.iter().any(|&w| w == 0)
        {
            return Err(Error::Contract("MlpSpec widths must be positive".into()));
        }
        Ok(())
    }

    /// Width of the last hidden layer (the output width when there is none).
    pub fn last_hidden(&self) -> usize {
        self.hidden.last().copied().unwrap_or(self.output)
    }
}

/// Dense stack: affine + activation per hidden layer, identity output layer.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub spec: MlpSpec,
    layers: Vec<(ParamId, ParamId)>,
}

impl Mlp {
    /// Allocate parameters in `store` with uniform fan-in initialization
    /// (U(−1/√fan_in, 1/√fan_in)), seeded by the spec.
    pub fn new(store: &mut ParamStore, prefix: &str, spec: MlpSpec) -> Result<Mlp> {
        spec.validate()?;
        let mut widths = vec![spec.input];
        widths.extend_from_slice(&spec.hidden);
        widths.push(spec.output);
        let mut layers = Vec::new();
        for l in 0..widths.len() - 1 {
            let (inp, out) = (widths[l], widths[l + 1]);
            let mut stream = rng::stream(spec.init_seed, prefix, l as u64);
            let bound = 1.0 / (inp as f64).sqrt();
            let w_data: Vec<f64> = (0..out * inp)
                .map(|_| stream.gen_range(-bound..=bound))
                .collect();
            let w = store.add(
                format!("{prefix}.l{l}.w"),
                Tensor::from_vec(&[out, inp], w_data)?,
            );
            let b = store.add(format!("{prefix}.l{l}.b"), Tensor::zeros(&[out]));
            layers.push((w, b));
        }
        Ok(Mlp { spec, layers })
    }

    pub fn params(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.layers.iter().flat_map(|&(w, b)| [w, b])
    }

    /// Scale the final layer's weights (policy-head trick: start the output
    /// near zero).
    pub fn scale_output_layer(&self, store: &mut ParamStore, factor: f64) {
        if let Some(&(w, b)) = self.layers.last() {
            store.value_mut(w).data.iter_mut().for_each(|v| *v *= factor);
            store.value_mut(b).data.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// Forward through the stack, recording the tape. Returns the output node
    /// and the last hidden-layer node (equal to the output node when the
    /// stack has no hidden layers).
    pub fn forward_full(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        if tape.len(x) != self.spec.input {
            return Err(Error::Shape {
                expected: vec![self.spec.input],
                got: vec![tape.len(x)],
                context: "Mlp::forward input".into(),
            });
        }
        let mut cur = x;
        let mut last_hidden = x;
        let n_hidden = self.spec.hidden.len();
        for (l, &(w, b)) in self.layers.iter().enumerate() {
            cur = tape.affine(store, w, b, cur);
            if l < n_hidden {
                if self.spec.activation == Activation::Elu {
                    cur = tape.elu(cur);
                }
                last_hidden = cur;
            }
        }
        Ok((cur, last_hidden))
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        Ok(self.forward_full(tape, store, x)?.0)
    }

    /// Tape-free forward for inference-only paths.
    pub fn infer(&self, store: &ParamStore, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.spec.input {
            return Err(Error::Shape {
                expected: vec![self.spec.input],
                got: vec![x.len()],
                context: "Mlp::infer input".into(),
            });
        }
        let mut cur = x.to_vec();
        let n_hidden = self.spec.hidden.len();
        for (l, &(w, b)) in self.layers.iter().enumerate() {
            let wt = store.value(w);
            let bt = store.value(b);
            let (out, inp) = (wt.shape[0], wt.shape[1]);
            let mut next = Vec::with_capacity(out);
            for j in 0..out {
                let row = &wt.data[j * inp..(j + 1) * inp];
                let mut s = bt.data[j];
                for i in 0..inp {
                    s += row[i] * cur[i];
                }
                next.push(s);
            }
            if l < n_hidden && self.spec.activation == Activation::Elu {
                next.iter_mut().for_each(|v| {
                    if *v <= 0.0 {
                        *v = v.exp() - 1.0;
                    }
                });
            }
            cur = next;
        }
        Ok(cur)
    }
}

/// Per-channel learned log standard deviation for a Gaussian policy.
#[derive(Debug, Clone)]
pub struct GaussianHead {
    pub log_std: ParamId,
    pub channels: usize,
}

impl GaussianHead {
    /// Initialize with std = `init_std` on every channel.
    pub fn new(store: &mut ParamStore, prefix: &str, channels: usize, init_std: f64) -> GaussianHead {
        debug_assert!(init_std > 0.0);
        let t = Tensor::from_vec(&[channels], vec![init_std.ln(); channels]).unwrap();
        GaussianHead {
            log_std: store.add(format!("{prefix}.log_std"), t),
            channels,
        }
    }

    pub fn std(&self, store: &ParamStore) -> Vec<f64> {
        store.value(self.log_std).data.iter().map(|v| v.exp()).collect()
    }

    /// Sample an action from N(mean, std²) using the provided stream.
    pub fn sample(
        &self,
        store: &ParamStore,
        mean: &[f64],
        stream: &mut rand_chacha::ChaCha8Rng,
    ) -> Vec<f64> {
        let ls = &store.value(self.log_std).data;
        mean.iter()
            .zip(ls.iter())
            .map(|(&m, &l)| m + l.exp() * rng::gaussian(stream))
            .collect()
    }

    /// Sum of per-channel normal log densities (pure; used for rollout
    /// bookkeeping and agreement tests against the taped path).
    pub fn log_prob(&self, store: &ParamStore, mean: &[f64], action: &[f64]) -> f64 {
        let ls = &store.value(self.log_std).data;
        gaussian_log_prob(mean, ls, action)
    }

    /// Taped log-probability: differentiable w.r.t. the mean node and the
    /// log_std parameter.
    pub fn log_prob_node(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        mean: NodeId,
        action: &[f64],
    ) -> NodeId {
        debug_assert_eq!(action.len(), self.channels);
        let ls = tape.param(store, self.log_std);
        let a = tape.input_slice(action);
        let neg_ls = tape.scale(ls, -1.0);
        let inv_std = tape.exp(neg_ls);
        let diff = tape.sub(a, mean);
        let z = tape.mul(diff, inv_std);
        let z2 = tape.mul(z, z);
        let half_z2 = tape.scale(z2, -0.5);
        let term = tape.add(half_z2, neg_ls);
        let s = tape.sum(term);
        let c = -0.5 * (std::f64::consts::TAU).ln() * self.channels as f64;
        tape.add_scalar(s, c)
    }
}

/// Σ_c log N(action_c; mean_c, exp(log_std_c)²).
pub fn gaussian_log_prob(mean: &[f64], log_std: &[f64], action: &[f64]) -> f64 {
    debug_assert_eq!(mean.len(), action.len());
    debug_assert_eq!(mean.len(), log_std.len());
    let mut lp = -0.5 * (std::f64::consts::TAU).ln() * mean.len() as f64;
    for i in 0..mean.len() {
        let std = log_std[i].exp();
        let z = (action[i] - mean[i]) / std;
        lp += -0.5 * z * z - log_std[i];
    }
    lp
}
