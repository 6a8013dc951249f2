//! PPO: generalized advantage estimation and the clipped-surrogate update,
//! generic over any Gaussian actor-critic exposing taped forward nodes.

use crate::error::{Error, Result};
use crate::nn::{Adam, GaussianHead, Mlp, MlpSpec, NodeId, ParamStore, Tape};
use crate::threads;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Gaussian actor-critic over a flat observation vector.
pub trait PolicyModel: Sync {
    fn obs_dim(&self) -> usize;
    fn store(&self) -> &ParamStore;
    fn store_mut(&mut self) -> &mut ParamStore;
    fn head(&self) -> &GaussianHead;
    /// Build (action-mean node, value node) on the tape against `store`.
    fn forward_nodes(&self, tape: &mut Tape, store: &ParamStore, obs: &[f64])
        -> Result<(NodeId, NodeId)>;
    /// Pure forward: (action mean, value).
    fn infer(&self, store: &ParamStore, obs: &[f64]) -> Result<(Vec<f64>, f64)>;
}

/// Plain MLP actor-critic: shared trunk, action-mean output, value head off
/// the last hidden layer. Used by toy tasks and tests.
#[derive(Debug, Clone)]
pub struct MlpPolicy {
    pub store: ParamStore,
    trunk: Mlp,
    value_head: Mlp,
    pub head: GaussianHead,
    obs_dim: usize,
}

impl MlpPolicy {
    pub fn new(
        obs_dim: usize,
        hidden: &[usize],
        channels: usize,
        init_std: f64,
        seed: u64,
    ) -> Result<MlpPolicy> {
        let mut store = ParamStore::new();
        let trunk = Mlp::new(&mut store, "trunk", MlpSpec::new(obs_dim, hidden, channels, seed))?;
        trunk.scale_output_layer(&mut store, 0.01);
        let value_in = trunk.spec.last_hidden();
        let value_head = Mlp::new(
            &mut store,
            "value",
            MlpSpec::new(value_in, &[], 1, crate::rng::child_seed(seed, "value", 0)),
        )?;
        let head = GaussianHead::new(&mut store, "policy", channels, init_std);
        Ok(MlpPolicy {
            store,
            trunk,
            value_head,
            head,
            obs_dim,
        })
    }
}

impl PolicyModel for MlpPolicy {
    fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn head(&self) -> &GaussianHead {
        &self.head
    }

    fn forward_nodes(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        obs: &[f64],
    ) -> Result<(NodeId, NodeId)> {
        let x = tape.input_slice(obs);
        let (mean, hidden) = self.trunk.forward_full(tape, store, x)?;
        let value = self.value_head.forward(tape, store, hidden)?;
        Ok((mean, value))
    }

    fn infer(&self, store: &ParamStore, obs: &[f64]) -> Result<(Vec<f64>, f64)> {
        let mut tape = Tape::new();
        let (mean, value) = self.forward_nodes(&mut tape, store, obs)?;
        Ok((tape.values(mean).to_vec(), tape.values(value)[0]))
    }
}

/// PPO hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoParams {
    pub envs: usize,
    pub horizon: usize,
    pub epochs: usize,
    pub minibatches: usize,
    pub clip: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub lr: f64,
    pub grad_clip: f64,
    pub max_updates: usize,
    /// Early stop once the rolling success rate reaches this value.
    pub target_sr: Option<f64>,
    /// Episodes in the rolling success-rate window.
    pub sr_window: usize,
    /// Regenerate training scenes every this many rollouts.
    pub scene_regen_interval: usize,
    /// Episode time cap during training (evaluation uses the sim timeouts).
    pub train_timeout: f64,
}

impl Default for PpoParams {
    fn default() -> Self {
        PpoParams {
            envs: 16,
            horizon: 64,
            epochs: 4,
            minibatches: 4,
            clip: 0.2,
            value_coef: 0.5,
            entropy_coef: 0.0,
            gamma: 0.99,
            lambda: 0.95,
            lr: 3e-4,
            grad_clip: 1.0,
            max_updates: 300,
            target_sr: None,
            sr_window: 100,
            scene_regen_interval: 10,
            train_timeout: 30.0,
        }
    }
}

impl PpoParams {
    pub fn validate(&self) -> Vec<String> {
        let mut bad = Vec::new();
        if self.envs == 0 || self.horizon == 0 || self.epochs == 0 || self.minibatches == 0 {
            bad.push("ppo: envs/horizon/epochs/minibatches must be positive".into());
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            bad.push(format!("ppo.clip must be in (0,1), got {}", self.clip));
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.lambda) {
            bad.push("ppo.gamma and ppo.lambda must be in [0,1]".into());
        }
        if self.lr <= 0.0 {
            bad.push("ppo.lr must be positive".into());
        }
        if self.train_timeout <= 0.0 {
            bad.push("ppo.train_timeout must be positive".into());
        }
        bad
    }
}

/// Flat rollout storage, env-major: index = env · horizon + step.
#[derive(Debug, Clone, Default)]
pub struct RolloutBatch {
    pub num_envs: usize,
    pub horizon: usize,
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    /// Per-env value estimate of the state after the last step.
    pub bootstrap: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBatch {
    pub fn with_capacity(num_envs: usize, horizon: usize) -> RolloutBatch {
        let n = num_envs * horizon;
        RolloutBatch {
            num_envs,
            horizon,
            obs: Vec::with_capacity(n),
            actions: Vec::with_capacity(n),
            log_probs: Vec::with_capacity(n),
            values: Vec::with_capacity(n),
            rewards: Vec::with_capacity(n),
            dones: Vec::with_capacity(n),
            bootstrap: Vec::with_capacity(num_envs),
            advantages: Vec::new(),
            returns: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    /// Fill advantages and returns with GAE per environment.
    pub fn compute_gae(&mut self, gamma: f64, lambda: f64) {
        self.advantages = vec![0.0; self.len()];
        self.returns = vec![0.0; self.len()];
        for e in 0..self.num_envs {
            let s = e * self.horizon;
            let range = s..s + self.horizon;
            let (adv, ret) = gae(
                &self.rewards[range.clone()],
                &self.values[range.clone()],
                &self.dones[range.clone()],
                self.bootstrap[e],
                gamma,
                lambda,
            );
            self.advantages[range.clone()].copy_from_slice(&adv);
            self.returns[range].copy_from_slice(&ret);
        }
    }
}

/// Generalized advantage estimation over one environment's sequence.
/// `dones[t]` marks a step that terminated its episode; nothing bootstraps
/// across it. The final step bootstraps from `bootstrap` unless done.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let h = rewards.len();
    assert_eq!(values.len(), h);
    assert_eq!(dones.len(), h);
    let mut adv = vec![0.0; h];
    let mut ret = vec![0.0; h];
    let mut acc = 0.0;
    for t in (0..h).rev() {
        let nonterminal = if dones[t] { 0.0 } else { 1.0 };
        let next_value = if t + 1 < h { values[t + 1] } else { bootstrap };
        let delta = rewards[t] + gamma * next_value * nonterminal - values[t];
        acc = delta + gamma * lambda * nonterminal * acc;
        adv[t] = acc;
        ret[t] = acc + values[t];
    }
    (adv, ret)
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct LossStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub mean_ratio: f64,
    pub clip_fraction: f64,
}

/// Samples per gradient-accumulation chunk. Fixed (not tied to worker count)
/// so the reduction order — and therefore every float — is identical in
/// sequential and parallel modes.
const GRAD_CHUNK: usize = 64;

struct SampleLoss {
    loss: f64,
    ratio: f64,
    clipped: bool,
    policy_term: f64,
    value_term: f64,
    entropy: f64,
}

fn sample_backward<P: PolicyModel>(
    policy: &P,
    store: &mut ParamStore,
    batch: &RolloutBatch,
    idx: usize,
    adv: f64,
    cfg: &PpoParams,
    seed: f64,
) -> Result<SampleLoss> {
    let mut tape = Tape::new();
    let (mean, value) = policy.forward_nodes(&mut tape, store, &batch.obs[idx])?;
    let logp = policy
        .head()
        .log_prob_node(&mut tape, store, mean, &batch.actions[idx]);
    let ratio_node = {
        let d = tape.add_scalar(logp, -batch.log_probs[idx]);
        tape.exp(d)
    };
    let surr1 = tape.scale(ratio_node, adv);
    let clipped = tape.clamp(ratio_node, 1.0 - cfg.clip, 1.0 + cfg.clip);
    let surr2 = tape.scale(clipped, adv);
    let objective = tape.min2(surr1, surr2);
    let policy_loss = tape.scale(objective, -1.0);

    let vdiff = tape.add_scalar(value, -batch.returns[idx]);
    let vsq = tape.mul(vdiff, vdiff);
    let value_loss = tape.scale(vsq, cfg.value_coef);

    let mut total = tape.add(policy_loss, value_loss);
    let mut entropy = 0.0;
    if cfg.entropy_coef != 0.0 {
        // Gaussian entropy: Σ log_std + k/2·ln(2πe); only log_std carries grad.
        let ls = tape.param(store, policy.head().log_std);
        let s = tape.sum(ls);
        let k = policy.head().channels as f64;
        let ent = tape.add_scalar(s, 0.5 * k * (std::f64::consts::TAU * std::f64::consts::E).ln());
        entropy = tape.scalar(ent);
        let bonus = tape.scale(ent, -cfg.entropy_coef);
        total = tape.add(total, bonus);
    }

    let loss = tape.scalar(total);
    if !loss.is_finite() {
        return Err(Error::Diverged(format!("non-finite PPO loss at sample {idx}")));
    }
    tape.backward(total, seed, store)?;
    let ratio = tape.scalar(ratio_node);
    Ok(SampleLoss {
        loss,
        ratio,
        clipped: (ratio - 1.0).abs() > cfg.clip,
        policy_term: -tape.scalar(objective),
        value_term: tape.scalar(value_loss),
        entropy,
    })
}

/// One PPO update: normalize advantages over the batch, then run
/// `epochs × minibatches` clipped-surrogate steps with Adam.
pub fn ppo_update<P: PolicyModel>(
    policy: &mut P,
    adam: &mut Adam,
    batch: &RolloutBatch,
    cfg: &PpoParams,
    shuffle: &mut ChaCha8Rng,
) -> Result<LossStats> {
    if batch.is_empty() || batch.advantages.len() != batch.len() {
        return Err(Error::Contract(
            "ppo_update needs a non-empty batch with advantages computed".into(),
        ));
    }
    let n = batch.len();
    let mean_adv = batch.advantages.iter().sum::<f64>() / n as f64;
    let var = batch
        .advantages
        .iter()
        .map(|a| (a - mean_adv) * (a - mean_adv))
        .sum::<f64>()
        / n as f64;
    let std = var.sqrt().max(1e-8);
    let norm_adv: Vec<f64> = batch.advantages.iter().map(|a| (a - mean_adv) / std).collect();

    let mb_size = n.div_ceil(cfg.minibatches);
    let mut stats = LossStats::default();
    let mut stat_count = 0usize;

    let mut indices: Vec<usize> = (0..n).collect();
    for _epoch in 0..cfg.epochs {
        indices.shuffle(shuffle);
        for mb in indices.chunks(mb_size) {
            policy.store_mut().zero_grads();
            let seed = 1.0 / mb.len() as f64;
            let chunks: Vec<&[usize]> = mb.chunks(GRAD_CHUNK).collect();
            let results: Vec<Result<(ParamStore, Vec<SampleLoss>)>> =
                threads::indexed_map(chunks.len(), |ci| {
                    let mut local = policy.store().clone();
                    local.zero_grads();
                    let mut losses = Vec::with_capacity(chunks[ci].len());
                    for &idx in chunks[ci] {
                        losses.push(sample_backward(
                            policy,
                            &mut local,
                            batch,
                            idx,
                            norm_adv[idx],
                            cfg,
                            seed,
                        )?);
                    }
                    Ok((local, losses))
                });
            let mut mb_loss = 0.0;
            for r in results {
                let (local, losses) = r?;
                for (id, p) in local.iter() {
                    let g = policy.store_mut().grad_mut(id);
                    for (gi, li) in g.data.iter_mut().zip(p.grad.data.iter()) {
                        *gi += li;
                    }
                }
                for l in losses {
                    mb_loss += l.loss;
                    stats.policy_loss += l.policy_term;
                    stats.value_loss += l.value_term;
                    stats.entropy += l.entropy;
                    stats.mean_ratio += l.ratio;
                    stats.clip_fraction += if l.clipped { 1.0 } else { 0.0 };
                    stat_count += 1;
                }
            }
            if !mb_loss.is_finite() {
                return Err(Error::Diverged("non-finite minibatch loss".into()));
            }
            adam.step(policy.store_mut());
        }
    }
    let k = stat_count.max(1) as f64;
    stats.policy_loss /= k;
    stats.value_loss /= k;
    stats.entropy /= k;
    stats.mean_ratio /= k;
    stats.clip_fraction /= k;
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gae_terminal_pair() {
        let (adv, ret) = gae(&[1.0, 1.0], &[0.0, 0.0], &[false, true], 0.0, 1.0, 1.0);
        assert_eq!(adv, vec![2.0, 1.0]);
        assert_eq!(ret, vec![2.0, 1.0]);
    }

    #[test]
    fn gae_zero_everything() {
        let (adv, _) = gae(&[0.0; 5], &[0.0; 5], &[false; 5], 0.0, 0.99, 0.95);
        assert!(adv.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn gae_matches_brute_force() {
        // Independent O(H²) oracle: A_t = Σ_l (γλ)^l δ_{t+l}, stopping at
        // episode boundaries.
        let mut rng = crate::rng::stream(3, "gae", 0);
        use rand::Rng;
        let h = 20;
        let rewards: Vec<f64> = (0..h).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let values: Vec<f64> = (0..h).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut dones = vec![false; h];
        dones[7] = true;
        dones[15] = true;
        let bootstrap = 0.37;
        let (gamma, lambda) = (0.99, 0.95);
        let (adv, ret) = gae(&rewards, &values, &dones, bootstrap, gamma, lambda);

        for t in 0..h {
            let mut expect = 0.0;
            let mut coef = 1.0;
            for l in t..h {
                let nonterminal = if dones[l] { 0.0 } else { 1.0 };
                let next_v = if l + 1 < h { values[l + 1] } else { bootstrap };
                let delta = rewards[l] + gamma * next_v * nonterminal - values[l];
                expect += coef * delta;
                if dones[l] {
                    break;
                }
                coef *= gamma * lambda;
            }
            assert!(
                (adv[t] - expect).abs() < 1e-10,
                "t={t}: {} vs {}",
                adv[t],
                expect
            );
            assert_relative_eq!(ret[t], adv[t] + values[t], epsilon = 1e-12);
        }
    }

    fn tiny_batch(policy: &MlpPolicy, n: usize, adv: f64) -> RolloutBatch {
        let mut b = RolloutBatch::with_capacity(1, n);
        for i in 0..n {
            let obs = vec![0.1 * i as f64, -0.2];
            let (mean, value) = policy.infer(&policy.store, &obs).unwrap();
            let action = mean.clone();
            let lp = policy.head.log_prob(&policy.store, &mean, &action);
            b.obs.push(obs);
            b.actions.push(action);
            b.log_probs.push(lp);
            b.values.push(value);
            b.rewards.push(0.0);
            b.dones.push(false);
        }
        b.bootstrap = vec![0.0];
        b.advantages = vec![adv; n];
        b.returns = b.values.clone();
        b
    }

    #[test]
    fn ratio_is_one_before_any_update() {
        let policy = MlpPolicy::new(2, &[8], 3, 0.2, 9).unwrap();
        let b = tiny_batch(&policy, 6, 1.0);
        // Recompute log-probs through the taped path: ratio must be 1.
        for i in 0..b.len() {
            let mut tape = Tape::new();
            let (mean, _) = policy.forward_nodes(&mut tape, &policy.store, &b.obs[i]).unwrap();
            let lp = policy
                .head
                .log_prob_node(&mut tape, &policy.store, mean, &b.actions[i]);
            let ratio = (tape.scalar(lp) - b.log_probs[i]).exp();
            assert_relative_eq!(ratio, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_advantage_leaves_policy_head_unchanged() {
        // With adv ≡ 0 (and matching returns) the surrogate contributes no
        // gradient; Adam sees zero grads for the trunk output path.
        let mut policy = MlpPolicy::new(2, &[8], 3, 0.2, 9).unwrap();
        let b = tiny_batch(&policy, 8, 0.0);
        let before = policy.store.value(policy.head.log_std).data.clone();
        let mut adam = Adam::new(&policy.store, 1e-2);
        let mut shuffle = crate::rng::stream(0, "shuffle", 0);
        let cfg = PpoParams {
            epochs: 1,
            minibatches: 1,
            ..PpoParams::default()
        };
        ppo_update(&mut policy, &mut adam, &b, &cfg, &mut shuffle).unwrap();
        // Advantages all zero -> normalized to zero -> no policy gradient.
        let after = policy.store.value(policy.head.log_std).data.clone();
        assert_eq!(before, after);
    }

    #[test]
    fn clipped_region_has_zero_policy_gradient() {
        // Single sample with ratio 1.5 and positive advantage: the clipped
        // branch is selected and its gradient is zero.
        let policy = MlpPolicy::new(2, &[8], 3, 0.2, 9).unwrap();
        let mut b = tiny_batch(&policy, 1, 1.0);
        // Fake an old log-prob that makes the ratio 1.5.
        b.log_probs[0] -= 1.5f64.ln();
        let cfg = PpoParams::default();
        let mut store = policy.store.clone();
        store.zero_grads();
        let s = sample_backward(&policy, &mut store, &b, 0, 1.0, &cfg, 1.0).unwrap();
        assert_relative_eq!(s.ratio, 1.5, epsilon = 1e-9);
        assert!(s.clipped);
        // All gradients except the value path must be zero; log_std gets
        // gradient only through the (clipped, zero-grad) policy term.
        let g = store.grad(policy.head.log_std);
        assert!(g.data.iter().all(|&x| x == 0.0), "log_std grad {:?}", g.data);
    }

    #[test]
    fn update_runs_and_reports_stats() {
        let mut policy = MlpPolicy::new(2, &[8], 3, 0.2, 9).unwrap();
        let mut b = tiny_batch(&policy, 32, 0.0);
        for (i, a) in b.advantages.iter_mut().enumerate() {
            *a = if i % 2 == 0 { 1.0 } else { -1.0 };
        }
        let mut adam = Adam::new(&policy.store, 3e-4);
        let mut shuffle = crate::rng::stream(1, "shuffle", 0);
        let stats = ppo_update(&mut policy, &mut adam, &b, &PpoParams::default(), &mut shuffle).unwrap();
        assert!(stats.mean_ratio.is_finite());
    }
}
