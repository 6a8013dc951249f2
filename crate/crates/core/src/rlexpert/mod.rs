//! Privileged RL experts: capability-specific rewards, the recurrent-by-token
//! actor-critic, PPO, and the training loop.

pub mod ppo;
pub mod train;

pub use ppo::{gae, ppo_update, LossStats, MlpPolicy, PolicyModel, PpoParams, RolloutBatch};
pub use train::{train_expert, TrainCurvePoint, TrainOutput};

use crate::error::Result;
use crate::geom::Vec2;
use crate::nn::{checkpoint, GaussianHead, Mlp, MlpSpec, NodeId, ParamStore, Tape};
use crate::sensing::{ExpertObservation, DEPTH_MAX};
use crate::simkernel::{RobotState, StepOutcome, Velocity, V_MAX};
use crate::world::Capability;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Reward coefficients for one capability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub alpha_goal: f64,
    pub beta_step: f64,
    pub gamma_reg: f64,
    pub delta_col: f64,
}

/// Per-capability coefficient table. Defaults are the published values:
/// β = −0.05 and δ = −15 everywhere, γ = 0.05 / 0.02 / 0, α = 1.2 / 1.5 / 1.2
/// for reaching / squeezing / avoiding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardTable {
    pub alpha_reaching: f64,
    pub alpha_squeezing: f64,
    pub alpha_avoiding: f64,
    pub beta_step: f64,
    pub gamma_reaching: f64,
    pub gamma_squeezing: f64,
    pub gamma_avoiding: f64,
    pub delta_col: f64,
}

impl Default for RewardTable {
    fn default() -> Self {
        RewardTable {
            alpha_reaching: 1.2,
            alpha_squeezing: 1.5,
            alpha_avoiding: 1.2,
            beta_step: -0.05,
            gamma_reaching: 0.05,
            gamma_squeezing: 0.02,
            gamma_avoiding: 0.0,
            delta_col: -15.0,
        }
    }
}

impl RewardTable {
    pub fn weights(&self, cap: Capability) -> RewardWeights {
        let (alpha_goal, gamma_reg) = match cap {
            Capability::Reaching | Capability::Mixed => (self.alpha_reaching, self.gamma_reaching),
            Capability::Squeezing => (self.alpha_squeezing, self.gamma_squeezing),
            Capability::Avoiding => (self.alpha_avoiding, self.gamma_avoiding),
        };
        RewardWeights {
            alpha_goal,
            beta_step: self.beta_step,
            gamma_reg,
            delta_col: self.delta_col,
        }
    }
}

/// Base reward terms (r_goal, r_step, r_reg, r_col) before weighting.
///
/// r_goal is per-step metric progress toward the goal plus a terminal bonus
/// of 10; r_step is the constant 1 (β < 0 makes it a per-step cost); r_reg
/// penalizes retreating and yaw magnitude; r_col indicates a collision.
pub fn reward_terms(
    prev: &RobotState,
    cur: &RobotState,
    outcome: &StepOutcome,
    v: Velocity,
    goal: Vec2,
) -> [f64; 4] {
    let progress = prev.position.dist(goal) - cur.position.dist(goal);
    let r_goal = progress + if outcome.reached { 10.0 } else { 0.0 };
    let r_step = 1.0;
    let retreat = (-v.0[0]).max(0.0) / V_MAX[0];
    let yaw = (v.0[2].abs() / V_MAX[2]).powi(2);
    let r_reg = -(retreat + yaw);
    let r_col = if outcome.collided { 1.0 } else { 0.0 };
    [r_goal, r_step, r_reg, r_col]
}

/// Weighted sum of the four base terms: α·r_goal + β·r_step + γ·r_reg + δ·r_col.
pub fn compute_reward(
    prev: &RobotState,
    cur: &RobotState,
    outcome: &StepOutcome,
    v: Velocity,
    w: &RewardWeights,
    goal: Vec2,
) -> f64 {
    let [r_goal, r_step, r_reg, r_col] = reward_terms(prev, cur, outcome, v, goal);
    w.alpha_goal * r_goal + w.beta_step * r_step + w.gamma_reg * r_reg + w.delta_col * r_col
}

/// Network widths preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertArch {
    /// Rays per camera.
    pub rays: usize,
    /// Per-view encoder output width.
    pub enc_width: usize,
    /// Trunk hidden widths; the last one is the history-token width.
    pub trunk_hidden: Vec<usize>,
    /// Initial Gaussian policy std.
    pub init_std: f64,
}

impl ExpertArch {
    pub fn desk(rays: usize) -> ExpertArch {
        ExpertArch {
            rays,
            enc_width: 64,
            trunk_hidden: vec![128, 64, 64],
            init_std: 0.2,
        }
    }

    pub fn paper(rays: usize) -> ExpertArch {
        ExpertArch {
            rays,
            enc_width: 64,
            trunk_hidden: vec![512, 256, 128],
            init_std: 0.2,
        }
    }

    pub fn token_width(&self) -> usize {
        *self.trunk_hidden.last().expect("trunk has hidden layers")
    }

    /// Trunk input: 4 encoded views + last action (3) + goal (2) + token.
    pub fn trunk_input(&self) -> usize {
        4 * self.enc_width + 3 + 2 + self.token_width()
    }

    /// Flat observation width fed to the policy: raw rays, action, goal, token.
    pub fn obs_dim(&self) -> usize {
        4 * self.rays + 3 + 2 + self.token_width()
    }
}

/// Privileged actor-critic: four per-view ray encoders, a trunk MLP whose
/// final hidden activations are carried to the next step as the history
/// token, an action-mean head (the trunk output), and a value head.
#[derive(Debug, Clone)]
pub struct ExpertPolicy {
    pub capability: Capability,
    pub arch: ExpertArch,
    pub store: ParamStore,
    encoders: Vec<Mlp>,
    trunk: Mlp,
    value_head: Mlp,
    pub head: GaussianHead,
}

/// Input scaling constants shared by both policies: depth rays and goal
/// offsets are brought to O(1) before entering the networks.
pub const RAY_SCALE: f64 = 1.0 / DEPTH_MAX;
pub const GOAL_SCALE: f64 = 0.1;

impl ExpertPolicy {
    pub fn new(capability: Capability, arch: ExpertArch, seed: u64) -> Result<ExpertPolicy> {
        let mut store = ParamStore::new();
        let mut encoders = Vec::with_capacity(4);
        for v in 0..4 {
            encoders.push(Mlp::new(
                &mut store,
                &format!("enc{v}"),
                MlpSpec::new(arch.rays, &[], arch.enc_width, crate::rng::child_seed(seed, "enc", v as u64)),
            )?);
        }
        let trunk = Mlp::new(
            &mut store,
            "trunk",
            MlpSpec::new(
                arch.trunk_input(),
                &arch.trunk_hidden,
                3,
                crate::rng::child_seed(seed, "trunk", 0),
            ),
        )?;
        // Action means start near zero so early exploration comes from the
        // Gaussian std rather than saturated random outputs.
        trunk.scale_output_layer(&mut store, 0.01);
        let value_head = Mlp::new(
            &mut store,
            "value",
            MlpSpec::new(
                arch.token_width(),
                &[],
                1,
                crate::rng::child_seed(seed, "value", 0),
            ),
        )?;
        let head = GaussianHead::new(&mut store, "policy", 3, arch.init_std);
        Ok(ExpertPolicy {
            capability,
            arch,
            store,
            encoders,
            trunk,
            value_head,
            head,
        })
    }

    pub fn zero_token(&self) -> Vec<f64> {
        vec![0.0; self.arch.token_width()]
    }

    /// Flatten an observation + history token into the policy input layout:
    /// `[rays F/R/B/L (scaled), last_action, goal_rel (scaled), token]`.
    pub fn flat_obs(&self, obs: &ExpertObservation, token: &[f64]) -> Vec<f64> {
        debug_assert_eq!(token.len(), self.arch.token_width());
        let r = self.arch.rays;
        let mut flat = Vec::with_capacity(self.arch.obs_dim());
        for view in obs.views() {
            debug_assert_eq!(view.rays.len(), r);
            flat.extend(view.rays.iter().map(|d| d * RAY_SCALE));
        }
        flat.extend_from_slice(&obs.last_action.0);
        flat.push(obs.goal_rel.x * GOAL_SCALE);
        flat.push(obs.goal_rel.y * GOAL_SCALE);
        flat.extend_from_slice(token);
        flat
    }

    /// Pure forward: action mean, value, and the next history token.
    pub fn forward(
        &self,
        store: &ParamStore,
        flat: &[f64],
    ) -> Result<(Vec<f64>, f64, Vec<f64>)> {
        let r = self.arch.rays;
        let mut trunk_in = Vec::with_capacity(self.arch.trunk_input());
        for v in 0..4 {
            let enc = self.encoders[v].infer(store, &flat[v * r..(v + 1) * r])?;
            trunk_in.extend(enc.into_iter().map(elu));
        }
        trunk_in.extend_from_slice(&flat[4 * r..]);
        let (mean, token) = self.trunk_infer_full(store, &trunk_in)?;
        let value = self.value_head.infer(store, &token)?[0];
        Ok((mean, value, token))
    }

    fn trunk_infer_full(&self, store: &ParamStore, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        // infer() recomputes the whole stack; run layers once keeping the
        // last hidden activations.
        let mut tape = Tape::new();
        let xn = tape.input_slice(x);
        let (out, hidden) = self.trunk.forward_full(&mut tape, store, xn)?;
        Ok((tape.values(out).to_vec(), tape.values(hidden).to_vec()))
    }
}

fn elu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        v.exp() - 1.0
    }
}

impl ppo::PolicyModel for ExpertPolicy {
    fn obs_dim(&self) -> usize {
        self.arch.obs_dim()
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
        flat: &[f64],
    ) -> Result<(NodeId, NodeId)> {
        let r = self.arch.rays;
        let mut parts = Vec::with_capacity(5);
        for v in 0..4 {
            let x = tape.input_slice(&flat[v * r..(v + 1) * r]);
            let enc = self.encoders[v].forward(tape, store, x)?;
            parts.push(tape.elu(enc));
        }
        parts.push(tape.input_slice(&flat[4 * r..]));
        let trunk_in = tape.concat(&parts);
        let (mean, hidden) = self.trunk.forward_full(tape, store, trunk_in)?;
        let value = self.value_head.forward(tape, store, hidden)?;
        Ok((mean, value))
    }

    fn infer(&self, store: &ParamStore, flat: &[f64]) -> Result<(Vec<f64>, f64)> {
        let (mean, value, _) = self.forward(store, flat)?;
        Ok((mean, value))
    }
}

const CKPT_KIND_EXPERT: &str = "expert";

impl ExpertPolicy {
    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = serde_json::json!({
            "kind": CKPT_KIND_EXPERT,
            "capability": self.capability.name(),
            "arch": self.arch,
        });
        checkpoint::save(path, &meta, &self.store)
    }

    pub fn load(path: &Path) -> Result<ExpertPolicy> {
        let (meta, store) = checkpoint::load(path)?;
        if meta["kind"] != CKPT_KIND_EXPERT {
            return Err(crate::error::Error::Format {
                offset: 11,
                reason: format!("checkpoint kind {} is not an expert", meta["kind"]),
            });
        }
        let capability: Capability = meta["capability"]
            .as_str()
            .unwrap_or("")
            .parse()
            .map_err(|e| crate::error::Error::Format {
                offset: 11,
                reason: format!("bad capability tag: {e}"),
            })?;
        let arch: ExpertArch = serde_json::from_value(meta["arch"].clone())?;
        let mut fresh = ExpertPolicy::new(capability, arch, 0)?;
        if fresh.store.len() != store.len() {
            return Err(crate::error::Error::Format {
                offset: 11,
                reason: "checkpoint parameter count does not match architecture".into(),
            });
        }
        for ((_, a), (_, b)) in fresh.store.iter().zip(store.iter()) {
            if a.name != b.name || a.value.shape != b.value.shape {
                return Err(crate::error::Error::Format {
                    offset: 11,
                    reason: format!("checkpoint parameter mismatch: {} vs {}", a.name, b.name),
                });
            }
        }
        fresh.store = store;
        Ok(fresh)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Vec2;
    use crate::sensing::{SensingParams, SensorRig};
    use crate::simkernel::Action;
    use approx::assert_relative_eq;

    fn outcome(collided: bool, reached: bool) -> StepOutcome {
        StepOutcome {
            next_state: RobotState::new(Vec2::ZERO, 0.0),
            collided,
            reached,
            timed_out: false,
            elapsed: 0.1,
        }
    }

    #[test]
    fn stationary_reaching_step_cost() {
        let w = RewardTable::default().weights(Capability::Reaching);
        let s = RobotState::new(Vec2::ZERO, 0.0);
        let r = compute_reward(&s, &s, &outcome(false, false), Velocity::ZERO, &w, Vec2::new(5.0, 0.0));
        assert_relative_eq!(r, -0.05, epsilon = 1e-12);
    }

    #[test]
    fn collision_step_avoiding() {
        let w = RewardTable::default().weights(Capability::Avoiding);
        let s = RobotState::new(Vec2::ZERO, 0.0);
        let r = compute_reward(&s, &s, &outcome(true, false), Velocity::ZERO, &w, Vec2::new(5.0, 0.0));
        assert_relative_eq!(r, -15.05, epsilon = 1e-12);
    }

    #[test]
    fn squeezing_reach_bonus() {
        // 0.15 m progress plus the reach bonus, zero regularizer.
        let w = RewardTable::default().weights(Capability::Squeezing);
        let prev = RobotState::new(Vec2::ZERO, 0.0);
        let cur = RobotState::new(Vec2::new(0.15, 0.0), 0.0);
        let goal = Vec2::new(5.0, 0.0);
        let r = compute_reward(&prev, &cur, &outcome(false, true), Velocity([1.5, 0.0, 0.0]), &w, goal);
        assert_relative_eq!(r, 1.5 * (0.15 + 10.0) - 0.05, epsilon = 1e-9);
        assert_relative_eq!(r, 15.175, epsilon = 1e-9);
    }

    #[test]
    fn reward_is_linear_in_weights() {
        let prev = RobotState::new(Vec2::ZERO, 0.3);
        let cur = RobotState::new(Vec2::new(0.1, -0.05), 0.35);
        let goal = Vec2::new(3.0, 2.0);
        let v = Velocity([-0.4, 0.2, 0.3]);
        let out = outcome(false, false);
        let terms = reward_terms(&prev, &cur, &out, v, goal);
        for cap in Capability::TRAINABLE {
            let w = RewardTable::default().weights(cap);
            let direct = compute_reward(&prev, &cur, &out, v, &w, goal);
            let dot = w.alpha_goal * terms[0]
                + w.beta_step * terms[1]
                + w.gamma_reg * terms[2]
                + w.delta_col * terms[3];
            assert_eq!(direct, dot);
        }
    }

    #[test]
    fn idle_is_never_profitable() {
        // No progress, no events: reward must be ≤ 0 for every capability.
        let s = RobotState::new(Vec2::ZERO, 0.0);
        for cap in Capability::TRAINABLE {
            let w = RewardTable::default().weights(cap);
            for v in [
                Velocity::ZERO,
                Velocity([-1.5, 0.0, 0.0]),
                Velocity([0.0, 0.0, 0.7]),
            ] {
                let r = compute_reward(&s, &s, &outcome(false, false), v, &w, Vec2::new(4.0, 0.0));
                assert!(r <= 0.0, "{cap}: idle reward {r}");
            }
        }
    }

    fn tiny_arch() -> ExpertArch {
        ExpertArch {
            rays: 8,
            enc_width: 8,
            trunk_hidden: vec![16, 8],
            init_std: 0.2,
        }
    }

    fn some_obs(rays: usize) -> ExpertObservation {
        let s = RobotState::new(Vec2::ZERO, 0.2);
        let scene = crate::world::Scene::empty(Capability::Reaching, 1e9, 1e9);
        let rig = SensorRig::fixed(2.0);
        let p = SensingParams {
            rays,
            ..SensingParams::default()
        };
        let views = crate::sensing::capture_views(&s, &scene, &rig, p.rays);
        crate::sensing::assemble_expert_obs(&s, &views, &rig, Action([0.1, 0.0, -0.2]), Vec2::new(2.0, 1.0))
    }

    #[test]
    fn token_starts_zero_and_has_trunk_width() {
        let p = ExpertPolicy::new(Capability::Reaching, tiny_arch(), 1).unwrap();
        assert_eq!(p.zero_token(), vec![0.0; 8]);
        assert_eq!(p.arch.token_width(), 8);
    }

    #[test]
    fn history_token_changes_output() {
        let p = ExpertPolicy::new(Capability::Reaching, tiny_arch(), 1).unwrap();
        let obs = some_obs(8);
        let t0 = p.zero_token();
        let mut t1 = p.zero_token();
        t1[0] = 0.5;
        let (m0, _, _) = p.forward(&p.store, &p.flat_obs(&obs, &t0)).unwrap();
        let (m1, _, _) = p.forward(&p.store, &p.flat_obs(&obs, &t1)).unwrap();
        assert_ne!(m0, m1, "different tokens must be able to change the output");
    }

    #[test]
    fn forward_is_deterministic() {
        let p = ExpertPolicy::new(Capability::Reaching, tiny_arch(), 1).unwrap();
        let obs = some_obs(8);
        let flat = p.flat_obs(&obs, &p.zero_token());
        let a = p.forward(&p.store, &flat).unwrap();
        let b = p.forward(&p.store, &flat).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn new_token_is_last_hidden_activations() {
        use ppo::PolicyModel;
        let p = ExpertPolicy::new(Capability::Reaching, tiny_arch(), 1).unwrap();
        let obs = some_obs(8);
        let flat = p.flat_obs(&obs, &p.zero_token());
        let (_, _, token) = p.forward(&p.store, &flat).unwrap();
        assert_eq!(token.len(), p.arch.token_width());
        // Taped and pure paths agree.
        let mut tape = Tape::new();
        let (mean_n, value_n) = p.forward_nodes(&mut tape, &p.store, &flat).unwrap();
        let (mean, value, _) = p.forward(&p.store, &flat).unwrap();
        assert_eq!(tape.values(mean_n), mean.as_slice());
        assert_relative_eq!(tape.values(value_n)[0], value);
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = ExpertPolicy::new(Capability::Squeezing, tiny_arch(), 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.ckpt");
        p.save(&path).unwrap();
        let q = ExpertPolicy::load(&path).unwrap();
        assert_eq!(q.capability, Capability::Squeezing);
        let obs = some_obs(8);
        let flat = p.flat_obs(&obs, &p.zero_token());
        assert_eq!(
            p.forward(&p.store, &flat).unwrap(),
            q.forward(&q.store, &flat).unwrap()
        );
    }
}
