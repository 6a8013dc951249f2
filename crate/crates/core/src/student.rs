//! The non-privileged student policy: a fine encoder for the newest frame, a
//! shared coarse encoder whose embeddings are mean-aggregated over the
//! history window, and an aggregator MLP regressing the expert's velocity
//! action under mean-square error.
//!
//! The student's only observation type is [`StudentObservation`] (or a stored
//! [`LabeledStep`], which holds the same degraded values); nothing in this
//! module can consume an `ExpertObservation`.

use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::nn::{checkpoint, Adam, Mlp, MlpSpec, NodeId, ParamStore, Tape};
use crate::rlexpert::{GOAL_SCALE, RAY_SCALE};
use crate::rng;
use crate::sensing::{SensingParams, StudentObservation};
use crate::simkernel::Action;
use crate::threads;
use crate::world::Capability;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// One distillation sample: the student-view observation parts, the goal, and
/// the expert's pre-clip action label. `expert_obs_hash` is a digest of the
/// privileged observation the label came from; the observation itself is
/// never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledStep {
    pub episode_id: u64,
    pub step_index: u32,
    pub capability: Capability,
    /// Episode time of the observation, seconds.
    pub timestamp: f64,
    pub goal_rel: [f64; 2],
    pub expert_action: [f64; 3],
    /// Newest frame, 4·R rays, degraded.
    pub fine_rays: Vec<f32>,
    /// (window−1) coarse slots × 4·(R/4) bins, zero-padded at the oldest end.
    pub coarse_history: Vec<f32>,
    pub terminal: bool,
    pub reached: bool,
    pub expert_obs_hash: u64,
}

impl LabeledStep {
    pub fn expected_fine_len(sensing: &SensingParams) -> usize {
        4 * sensing.rays
    }

    pub fn expected_coarse_len(sensing: &SensingParams) -> usize {
        (sensing.window - 1) * 4 * sensing.coarse_bins()
    }
}

/// Network widths for the student.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentArch {
    pub rays: usize,
    pub window: usize,
    pub fine_width: usize,
    pub coarse_width: usize,
    pub agg_hidden: Vec<usize>,
}

impl StudentArch {
    pub fn desk(sensing: &SensingParams) -> StudentArch {
        StudentArch {
            rays: sensing.rays,
            window: sensing.window,
            fine_width: 128,
            coarse_width: 32,
            agg_hidden: vec![128, 64, 64],
        }
    }

    pub fn paper(sensing: &SensingParams) -> StudentArch {
        StudentArch {
            rays: sensing.rays,
            window: sensing.window,
            fine_width: 128,
            coarse_width: 32,
            agg_hidden: vec![512, 256, 128],
        }
    }

    pub fn fine_input(&self) -> usize {
        4 * self.rays
    }

    pub fn coarse_input(&self) -> usize {
        4 * (self.rays / 4)
    }

    pub fn agg_input(&self) -> usize {
        self.fine_width + self.coarse_width + 2
    }
}

/// Deterministic velocity regressor over degraded windowed observations.
#[derive(Debug, Clone)]
pub struct StudentPolicy {
    pub arch: StudentArch,
    pub store: ParamStore,
    fine_enc: Mlp,
    coarse_enc: Mlp,
    aggregator: Mlp,
}

impl StudentPolicy {
    pub fn new(arch: StudentArch, seed: u64) -> Result<StudentPolicy> {
        let mut store = ParamStore::new();
        let fine_enc = Mlp::new(
            &mut store,
            "fine",
            MlpSpec::new(arch.fine_input(), &[], arch.fine_width, rng::child_seed(seed, "fine", 0)),
        )?;
        let coarse_enc = Mlp::new(
            &mut store,
            "coarse",
            MlpSpec::new(
                arch.coarse_input(),
                &[],
                arch.coarse_width,
                rng::child_seed(seed, "coarse", 0),
            ),
        )?;
        let aggregator = Mlp::new(
            &mut store,
            "agg",
            MlpSpec::new(arch.agg_input(), &arch.agg_hidden, 3, rng::child_seed(seed, "agg", 0)),
        )?;
        Ok(StudentPolicy {
            arch,
            store,
            fine_enc,
            coarse_enc,
            aggregator,
        })
    }

    fn scaled(xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|v| v * RAY_SCALE).collect()
    }

    /// Taped forward over canonical observation parts.
    pub fn forward_nodes(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        fine: &[f64],
        coarse_slots: &[Vec<f64>],
        goal_rel: Vec2,
    ) -> Result<NodeId> {
        if fine.len() != self.arch.fine_input() || coarse_slots.len() != self.arch.window - 1 {
            return Err(Error::Shape {
                expected: vec![self.arch.fine_input(), self.arch.window - 1],
                got: vec![fine.len(), coarse_slots.len()],
                context: "StudentPolicy::forward".into(),
            });
        }
        let fine_in = tape.input(Self::scaled(fine));
        let fine_aff = self.fine_enc.forward(tape, store, fine_in)?;
        let fine_emb = tape.elu(fine_aff);
        let mut coarse_embs = Vec::with_capacity(coarse_slots.len());
        for slot in coarse_slots {
            let x = tape.input(Self::scaled(slot));
            let aff = self.coarse_enc.forward(tape, store, x)?;
            coarse_embs.push(tape.elu(aff));
        }
        let coarse_mean = tape.mean_stack(&coarse_embs);
        let goal = tape.input(vec![goal_rel.x * GOAL_SCALE, goal_rel.y * GOAL_SCALE]);
        let agg_in = tape.concat(&[fine_emb, coarse_mean, goal]);
        self.aggregator.forward(tape, store, agg_in)
    }

    pub fn forward_parts(
        &self,
        store: &ParamStore,
        fine: &[f64],
        coarse_slots: &[Vec<f64>],
        goal_rel: Vec2,
    ) -> Result<Action> {
        let mut tape = Tape::new();
        let out = self.forward_nodes(&mut tape, store, fine, coarse_slots, goal_rel)?;
        let v = tape.values(out);
        Ok(Action([v[0], v[1], v[2]]))
    }

    /// Deterministic pre-clip action for a live observation.
    pub fn act(&self, obs: &StudentObservation, sensing: &SensingParams) -> Result<Action> {
        let (fine, coarse) = obs.to_parts(sensing);
        self.forward_parts(&self.store, &fine, &coarse, obs.goal_rel)
    }

    /// Forward from a stored record; bit-identical to the live path because
    /// observation parts round through f32 in both.
    pub fn act_on_record(&self, step: &LabeledStep) -> Result<Action> {
        let (fine, coarse) = record_parts(&self.arch, step)?;
        self.forward_parts(
            &self.store,
            &fine,
            &coarse,
            Vec2::new(step.goal_rel[0], step.goal_rel[1]),
        )
    }
}

fn record_parts(arch: &StudentArch, step: &LabeledStep) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let fine_len = 4 * arch.rays;
    let slot_len = 4 * (arch.rays / 4);
    let slots = arch.window - 1;
    if step.fine_rays.len() != fine_len || step.coarse_history.len() != slots * slot_len {
        return Err(Error::Shape {
            expected: vec![fine_len, slots * slot_len],
            got: vec![step.fine_rays.len(), step.coarse_history.len()],
            context: "LabeledStep parts".into(),
        });
    }
    let fine: Vec<f64> = step.fine_rays.iter().map(|&v| v as f64).collect();
    let coarse: Vec<Vec<f64>> = (0..slots)
        .map(|s| {
            step.coarse_history[s * slot_len..(s + 1) * slot_len]
                .iter()
                .map(|&v| v as f64)
                .collect()
        })
        .collect();
    Ok((fine, coarse))
}

/// Mean over batch and channels of squared action error.
pub fn bc_loss(policy: &StudentPolicy, batch: &[&LabeledStep]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Contract("bc_loss needs a non-empty batch".into()));
    }
    let mut total = 0.0;
    for step in batch {
        let pred = policy.act_on_record(step)?;
        total += mse(&pred.0, &step.expert_action);
    }
    Ok(total / batch.len() as f64)
}

/// Mean squared error over channels.
pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64
}

/// Fine-tuning hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudentTrainParams {
    pub lr: f64,
    pub batch_size: usize,
    pub grad_clip: f64,
    /// Epochs for offline pretraining.
    pub pretrain_epochs: usize,
    /// Epochs per DAgger iteration fine-tune.
    pub finetune_epochs: usize,
}

impl Default for StudentTrainParams {
    fn default() -> Self {
        StudentTrainParams {
            lr: 3e-4,
            batch_size: 64,
            grad_clip: 1.0,
            pretrain_epochs: 4,
            finetune_epochs: 3,
        }
    }
}

impl StudentTrainParams {
    pub fn validate(&self) -> Vec<String> {
        let mut bad = Vec::new();
        if self.lr < 0.0 {
            bad.push("student.lr must be non-negative".into());
        }
        if self.batch_size == 0 || self.pretrain_epochs == 0 || self.finetune_epochs == 0 {
            bad.push("student batch_size and epochs must be positive".into());
        }
        bad
    }
}

/// Samples per gradient chunk; fixed so reductions are order-identical in
/// sequential and parallel modes.
const GRAD_CHUNK: usize = 64;

/// Shuffled minibatch Adam on the BC loss. Returns the mean training loss per
/// epoch.
pub fn finetune(
    policy: &mut StudentPolicy,
    data: &[&LabeledStep],
    epochs: usize,
    params: &StudentTrainParams,
    shuffle: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::Contract("finetune needs a non-empty dataset".into()));
    }
    let mut adam = Adam::new(&policy.store, params.lr);
    adam.grad_clip = Some(params.grad_clip);
    let mut curve = Vec::with_capacity(epochs);
    let mut indices: Vec<usize> = (0..data.len()).collect();
    for _epoch in 0..epochs {
        indices.shuffle(shuffle);
        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for mb in indices.chunks(params.batch_size) {
            policy.store.zero_grads();
            let seed = 1.0 / mb.len() as f64;
            let chunks: Vec<&[usize]> = mb.chunks(GRAD_CHUNK).collect();
            let policy_ref = &*policy;
            let results: Vec<Result<(ParamStore, f64)>> =
                threads::indexed_map(chunks.len(), |ci| {
                    let mut local = policy_ref.store.clone();
                    local.zero_grads();
                    let mut loss_sum = 0.0;
                    for &idx in chunks[ci] {
                        let step = data[idx];
                        let (fine, coarse) = record_parts(&policy_ref.arch, step)?;
                        let mut tape = Tape::new();
                        let pred = policy_ref.forward_nodes(
                            &mut tape,
                            &local,
                            &fine,
                            &coarse,
                            Vec2::new(step.goal_rel[0], step.goal_rel[1]),
                        )?;
                        let target = tape.input_slice(&step.expert_action);
                        let diff = tape.sub(pred, target);
                        let sq = tape.mul(diff, diff);
                        let loss = tape.mean(sq);
                        let lv = tape.scalar(loss);
                        if !lv.is_finite() {
                            return Err(Error::Diverged("non-finite BC loss".into()));
                        }
                        loss_sum += lv;
                        tape.backward(loss, seed, &mut local)?;
                    }
                    Ok((local, loss_sum))
                });
            for r in results {
                let (local, loss_sum) = r?;
                for (id, p) in local.iter() {
                    let g = policy.store.grad_mut(id);
                    for (gi, li) in g.data.iter_mut().zip(p.grad.data.iter()) {
                        *gi += li;
                    }
                }
                epoch_loss += loss_sum;
            }
            seen += mb.len();
            adam.step(&mut policy.store);
        }
        curve.push(epoch_loss / seen.max(1) as f64);
    }
    Ok(curve)
}

const CKPT_KIND_STUDENT: &str = "student";

impl StudentPolicy {
    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = serde_json::json!({
            "kind": CKPT_KIND_STUDENT,
            "arch": self.arch,
        });
        checkpoint::save(path, &meta, &self.store)
    }

    pub fn load(path: &Path) -> Result<StudentPolicy> {
        let (meta, store) = checkpoint::load(path)?;
        if meta["kind"] != CKPT_KIND_STUDENT {
            return Err(Error::Format {
                offset: 11,
                reason: format!("checkpoint kind {} is not a student", meta["kind"]),
            });
        }
        let arch: StudentArch = serde_json::from_value(meta["arch"].clone())?;
        let mut fresh = StudentPolicy::new(arch, 0)?;
        if fresh.store.len() != store.len() {
            return Err(Error::Format {
                offset: 11,
                reason: "checkpoint parameter count does not match architecture".into(),
            });
        }
        fresh.store = store;
        Ok(fresh)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensing::{FrameFeatures, Granularity};

    fn tiny_arch() -> StudentArch {
        StudentArch {
            rays: 8,
            window: 8,
            fine_width: 16,
            coarse_width: 8,
            agg_hidden: vec![16, 8],
        }
    }

    fn sensing() -> SensingParams {
        SensingParams {
            rays: 8,
            depth_noise_std: 0.0,
            ..SensingParams::default()
        }
    }

    fn step_with(fine_fill: f32, action: [f64; 3]) -> LabeledStep {
        let s = sensing();
        LabeledStep {
            episode_id: 1,
            step_index: 0,
            capability: Capability::Reaching,
            timestamp: 0.0,
            goal_rel: [2.0, -1.0],
            expert_action: action,
            fine_rays: vec![fine_fill; LabeledStep::expected_fine_len(&s)],
            coarse_history: vec![0.0; LabeledStep::expected_coarse_len(&s)],
            terminal: false,
            reached: false,
            expert_obs_hash: 0,
        }
    }

    #[test]
    fn zero_net_outputs_zero_action() {
        let mut p = StudentPolicy::new(tiny_arch(), 1).unwrap();
        let ids: Vec<_> = p.store.iter().map(|(id, _)| id).collect();
        for id in ids {
            p.store.value_mut(id).data.iter_mut().for_each(|v| *v = 0.0);
        }
        let a = p.act_on_record(&step_with(2.0, [0.0; 3])).unwrap();
        assert_eq!(a, Action::ZERO);
    }

    #[test]
    fn single_frame_equals_explicit_zero_padding() {
        let p = StudentPolicy::new(tiny_arch(), 2).unwrap();
        let s = sensing();
        let fine_frame = FrameFeatures {
            views: [0, 1, 2, 3].map(|_| vec![1.5; 8]),
            granularity: Granularity::Fine,
            timestamp: 0.7,
        };
        let one = StudentObservation {
            window: vec![fine_frame.clone()],
            goal_rel: Vec2::new(1.0, 0.5),
        };
        let mut window = Vec::new();
        for i in 0..7 {
            window.push(FrameFeatures {
                views: [0, 1, 2, 3].map(|_| vec![0.0; 2]),
                granularity: Granularity::Coarse,
                timestamp: i as f64 * 0.1,
            });
        }
        window.push(fine_frame);
        let padded = StudentObservation {
            window,
            goal_rel: Vec2::new(1.0, 0.5),
        };
        let a = p.act(&one, &s).unwrap();
        let b = p.act(&padded, &s).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn forward_is_deterministic() {
        let p = StudentPolicy::new(tiny_arch(), 3).unwrap();
        let step = step_with(1.0, [0.1, 0.2, 0.3]);
        let first = p.act_on_record(&step).unwrap();
        for _ in 0..100 {
            assert_eq!(p.act_on_record(&step).unwrap(), first);
        }
    }

    #[test]
    fn bc_loss_zero_when_predicting_labels() {
        let p = StudentPolicy::new(tiny_arch(), 4).unwrap();
        let mut step = step_with(1.0, [0.0; 3]);
        step.expert_action = p.act_on_record(&step).unwrap().0;
        let loss = bc_loss(&p, &[&step]).unwrap();
        assert!(loss < 1e-30, "loss {loss}");
    }

    #[test]
    fn bc_loss_single_channel_error() {
        // pred (0,0,0) vs label (1,0,0) -> mean over 3 channels = 1/3.
        let mut p = StudentPolicy::new(tiny_arch(), 5).unwrap();
        let ids: Vec<_> = p.store.iter().map(|(id, _)| id).collect();
        for id in ids {
            p.store.value_mut(id).data.iter_mut().for_each(|v| *v = 0.0);
        }
        let step = step_with(1.0, [1.0, 0.0, 0.0]);
        let loss = bc_loss(&p, &[&step]).unwrap();
        assert!((loss - 1.0 / 3.0).abs() < 1e-15, "loss {loss}");
    }

    #[test]
    fn mse_is_symmetric() {
        let a = [0.3, -0.7, 1.1];
        let b = [-0.2, 0.4, 0.9];
        assert_eq!(mse(&a, &b), mse(&b, &a));
    }

    #[test]
    fn zero_lr_finetune_keeps_params() {
        let mut p = StudentPolicy::new(tiny_arch(), 6).unwrap();
        let before: Vec<Vec<f64>> = p.store.iter().map(|(_, q)| q.value.data.clone()).collect();
        let steps: Vec<LabeledStep> = (0..8).map(|i| step_with(i as f32 * 0.3, [0.5, 0.0, 0.0])).collect();
        let refs: Vec<&LabeledStep> = steps.iter().collect();
        let params = StudentTrainParams {
            lr: 0.0,
            ..StudentTrainParams::default()
        };
        let mut shuffle = crate::rng::stream(0, "ft", 0);
        finetune(&mut p, &refs, 2, &params, &mut shuffle).unwrap();
        let after: Vec<Vec<f64>> = p.store.iter().map(|(_, q)| q.value.data.clone()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn overfits_small_memorization_set() {
        let mut p = StudentPolicy::new(tiny_arch(), 7).unwrap();
        let mut rng = crate::rng::stream(1, "mem", 0);
        use rand::Rng;
        let steps: Vec<LabeledStep> = (0..32)
            .map(|i| {
                let mut s = step_with(0.0, [0.0; 3]);
                s.episode_id = i;
                s.fine_rays.iter_mut().for_each(|r| *r = rng.gen_range(0.0..4.0));
                s.expert_action = [
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ];
                s
            })
            .collect();
        let refs: Vec<&LabeledStep> = steps.iter().collect();
        let params = StudentTrainParams {
            lr: 1e-2,
            batch_size: 32,
            ..StudentTrainParams::default()
        };
        let mut shuffle = crate::rng::stream(2, "ft", 0);
        let curve = finetune(&mut p, &refs, 300, &params, &mut shuffle).unwrap();
        let last = *curve.last().unwrap();
        assert!(last < 1e-2, "memorization loss {last}");
        assert!(curve[1] <= curve[0] * 1.5, "loss should not explode");
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = StudentPolicy::new(tiny_arch(), 8).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("student.ckpt");
        p.save(&path).unwrap();
        let q = StudentPolicy::load(&path).unwrap();
        let step = step_with(1.3, [0.0; 3]);
        assert_eq!(p.act_on_record(&step).unwrap(), q.act_on_record(&step).unwrap());
    }
}
