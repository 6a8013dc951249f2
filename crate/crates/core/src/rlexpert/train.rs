//! Expert training loop: parallel-env rollouts with proprioceptive noise,
//! capability rewards, GAE, and PPO updates, with periodic scene
//! regeneration.

use super::ppo::{ppo_update, PpoParams, RolloutBatch};
use super::{compute_reward, ExpertArch, ExpertPolicy, RewardTable, RewardWeights};
use crate::error::{Error, Result};
use crate::nn::Adam;
use crate::rng;
use crate::runner::EpisodeDriver;
use crate::sensing::{add_proprio_noise, SensingParams};
use crate::simkernel::{Action, SimParams};
use crate::threads;
use crate::world::{generate_scene, sample_episode, Capability, EpisodeParams, Scene, SceneParams};
use serde::Serialize;
use std::collections::VecDeque;

/// Everything the training loop needs besides the capability and seed.
#[derive(Debug, Clone, Copy)]
pub struct ExpertTrainSetup<'a> {
    pub scene: &'a SceneParams,
    pub sim: &'a SimParams,
    pub sensing: &'a SensingParams,
    pub ppo: &'a PpoParams,
    pub rewards: &'a RewardTable,
    pub arch: &'a ExpertArch,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct TrainCurvePoint {
    pub update: usize,
    pub mean_return: f64,
    pub success_rate: f64,
    pub collision_rate: f64,
    pub mean_episode_time: f64,
    pub episodes_completed: usize,
}

pub struct TrainOutput {
    pub policy: ExpertPolicy,
    pub curve: Vec<TrainCurvePoint>,
}

struct EnvSlot {
    driver: EpisodeDriver,
    token: Vec<f64>,
    scene: Scene,
    env_index: usize,
    episode_counter: u64,
    ep_return: f64,
    ep_steps: usize,
}

#[derive(Debug, Clone, Copy)]
struct EpisodeStat {
    ret: f64,
    reached: bool,
    collided: bool,
    duration: f64,
}

struct StepRecord {
    flat: Vec<f64>,
    action: Vec<f64>,
    log_prob: f64,
    value: f64,
    reward: f64,
    done: bool,
}

fn fresh_episode(
    scene: &Scene,
    run_seed: u64,
    env_index: usize,
    counter: u64,
    sim: &SimParams,
    sensing: &SensingParams,
    ep_params: &EpisodeParams,
) -> Result<EpisodeDriver> {
    // A dense scene can reject a particular episode seed; try a few.
    let mut last_err = None;
    for retry in 0..8u64 {
        let ep_seed = rng::child_seed(run_seed, "episode", (env_index as u64) << 40 | counter << 8 | retry);
        match sample_episode(scene, ep_seed, ep_params) {
            Ok(spec) => return Ok(EpisodeDriver::new(spec, sim, sensing, ep_seed)),
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.unwrap())
}

impl EnvSlot {
    fn reset_episode(
        &mut self,
        run_seed: u64,
        sim: &SimParams,
        sensing: &SensingParams,
        ep_params: &EpisodeParams,
    ) -> Result<()> {
        self.episode_counter += 1;
        self.driver = fresh_episode(
            &self.scene,
            run_seed,
            self.env_index,
            self.episode_counter,
            sim,
            sensing,
            ep_params,
        )?;
        self.token.iter_mut().for_each(|t| *t = 0.0);
        self.ep_return = 0.0;
        self.ep_steps = 0;
        Ok(())
    }
}

/// Roll one env for `horizon` steps against a frozen policy.
fn rollout_env(
    slot: &mut EnvSlot,
    policy: &ExpertPolicy,
    weights: &RewardWeights,
    setup: &ExpertTrainSetup,
    run_seed: u64,
    ep_params: &EpisodeParams,
) -> Result<(Vec<StepRecord>, f64, Vec<EpisodeStat>)> {
    let horizon = setup.ppo.horizon;
    let sigma = setup.sensing.proprio_sigma;
    let mut records = Vec::with_capacity(horizon);
    let mut stats = Vec::new();

    for _ in 0..horizon {
        let views = slot.driver.capture();
        let obs = slot.driver.expert_obs(&views);
        let obs = add_proprio_noise(obs, sigma, &mut slot.driver.streams.noise);
        let flat = policy.flat_obs(&obs, &slot.token);
        let (mean, value, next_token) = policy.forward(&policy.store, &flat)?;
        let action = policy.head.sample(&policy.store, &mean, &mut slot.driver.streams.action);
        let log_prob = policy.head.log_prob(&policy.store, &mean, &action);

        let prev_state = slot.driver.episode.state;
        let goal = slot.driver.episode.spec.goal;
        let out = slot.driver.apply(Action([action[0], action[1], action[2]]))?;
        let reward = compute_reward(
            &prev_state,
            &out.next_state,
            &out,
            slot.driver.episode.last_velocity,
            weights,
            goal,
        );
        slot.ep_return += reward;
        slot.ep_steps += 1;
        let done = out.terminal();
        records.push(StepRecord {
            flat,
            action,
            log_prob,
            value,
            reward,
            done,
        });
        slot.token = next_token;
        if done {
            stats.push(EpisodeStat {
                ret: slot.ep_return,
                reached: out.reached,
                collided: out.collided,
                duration: out.elapsed,
            });
            slot.reset_episode(run_seed, setup.sim, setup.sensing, ep_params)?;
        }
    }

    // Value bootstrap for the state after the last step. The views are cast
    // fresh without touching the student history ring.
    let views = crate::sensing::capture_views(
        &slot.driver.episode.state,
        &slot.driver.episode.scene,
        &slot.driver.rig,
        setup.sensing.rays,
    );
    let obs = slot.driver.expert_obs(&views);
    let obs = add_proprio_noise(obs, sigma, &mut slot.driver.streams.noise);
    let flat = policy.flat_obs(&obs, &slot.token);
    let (_, bootstrap, _) = policy.forward(&policy.store, &flat)?;

    Ok((records, bootstrap, stats))
}

/// Train one capability expert with PPO.
pub fn train_expert(
    capability: Capability,
    setup: &ExpertTrainSetup,
    seed: u64,
) -> Result<TrainOutput> {
    let mut violations = setup.ppo.validate();
    violations.extend(setup.scene.validate());
    violations.extend(setup.sim.validate());
    violations.extend(setup.sensing.validate());
    if !violations.is_empty() {
        return Err(Error::Config { keys: violations });
    }

    let weights = setup.rewards.weights(capability);
    let cap_params = *setup.scene.for_capability(capability);
    let ep_params = EpisodeParams::new(&cap_params, setup.ppo.train_timeout);

    let mut policy = ExpertPolicy::new(capability, setup.arch.clone(), seed)?;
    let mut adam = Adam::new(&policy.store, setup.ppo.lr);
    adam.grad_clip = Some(setup.ppo.grad_clip);
    let mut shuffle = rng::stream(seed, "shuffle", 0);

    let mut slots: Vec<EnvSlot> = Vec::with_capacity(setup.ppo.envs);
    let mut scene_epoch = 0u64;
    for e in 0..setup.ppo.envs {
        let scene_seed = rng::child_seed(seed, "scene", (e as u64) << 32 | scene_epoch);
        let scene = generate_scene(capability, scene_seed, setup.scene)?;
        let driver = fresh_episode(&scene, seed, e, 0, setup.sim, setup.sensing, &ep_params)?;
        slots.push(EnvSlot {
            token: vec![0.0; setup.arch.token_width()],
            driver,
            scene,
            env_index: e,
            episode_counter: 0,
            ep_return: 0.0,
            ep_steps: 0,
        });
    }

    let mut curve = Vec::with_capacity(setup.ppo.max_updates);
    let mut window: VecDeque<EpisodeStat> = VecDeque::with_capacity(setup.ppo.sr_window + 1);

    for update in 0..setup.ppo.max_updates {
        if update > 0 && update % setup.ppo.scene_regen_interval == 0 {
            scene_epoch += 1;
            for slot in slots.iter_mut() {
                let scene_seed =
                    rng::child_seed(seed, "scene", (slot.env_index as u64) << 32 | scene_epoch);
                slot.scene = generate_scene(capability, scene_seed, setup.scene)?;
                slot.reset_episode(seed, setup.sim, setup.sensing, &ep_params)?;
            }
        }

        // Data-parallel rollout against the frozen policy snapshot.
        let results: Vec<Result<(Vec<StepRecord>, f64, Vec<EpisodeStat>)>> = {
            let policy_ref = &policy;
            let setup_ref = setup;
            let weights_ref = &weights;
            let ep_ref = &ep_params;
            let mut taken: Vec<EnvSlot> = std::mem::take(&mut slots);
            let out: Vec<_> = if threads::parallel() {
                use rayon::prelude::*;
                taken
                    .par_iter_mut()
                    .map(|slot| rollout_env(slot, policy_ref, weights_ref, setup_ref, seed, ep_ref))
                    .collect()
            } else {
                taken
                    .iter_mut()
                    .map(|slot| rollout_env(slot, policy_ref, weights_ref, setup_ref, seed, ep_ref))
                    .collect()
            };
            slots = taken;
            out
        };

        let mut batch = RolloutBatch::with_capacity(setup.ppo.envs, setup.ppo.horizon);
        let mut completed = Vec::new();
        for r in results {
            let (records, bootstrap, stats) = r?;
            for rec in records {
                batch.obs.push(rec.flat);
                batch.actions.push(rec.action);
                batch.log_probs.push(rec.log_prob);
                batch.values.push(rec.value);
                batch.rewards.push(rec.reward);
                batch.dones.push(rec.done);
            }
            batch.bootstrap.push(bootstrap);
            completed.extend(stats);
        }
        batch.compute_gae(setup.ppo.gamma, setup.ppo.lambda);

        let stats = ppo_update(&mut policy, &mut adam, &batch, setup.ppo, &mut shuffle)?;
        if std::env::var("CAPNAV_DEBUG").is_ok() {
            eprintln!(
                "update {update}: pi {:.4} vf {:.4} ratio {:.3} clip {:.2} std {:.3}",
                stats.policy_loss,
                stats.value_loss,
                stats.mean_ratio,
                stats.clip_fraction,
                policy.store.value(policy.head.log_std).data[0].exp()
            );
        }

        for s in &completed {
            if !s.ret.is_finite() {
                return Err(Error::Diverged("episode return is non-finite".into()));
            }
            window.push_back(*s);
            if window.len() > setup.ppo.sr_window {
                window.pop_front();
            }
        }
        let point = curve_point(update, &window, completed.len());
        curve.push(point);

        if let Some(target) = setup.ppo.target_sr {
            if window.len() >= setup.ppo.sr_window.min(20) && point.success_rate >= target {
                break;
            }
        }
    }

    Ok(TrainOutput { policy, curve })
}

fn curve_point(update: usize, window: &VecDeque<EpisodeStat>, completed: usize) -> TrainCurvePoint {
    let n = window.len();
    if n == 0 {
        return TrainCurvePoint {
            update,
            mean_return: 0.0,
            success_rate: 0.0,
            collision_rate: 0.0,
            mean_episode_time: 0.0,
            episodes_completed: completed,
        };
    }
    let nf = n as f64;
    TrainCurvePoint {
        update,
        mean_return: window.iter().map(|s| s.ret).sum::<f64>() / nf,
        success_rate: window.iter().filter(|s| s.reached).count() as f64 / nf,
        collision_rate: window.iter().filter(|s| s.collided).count() as f64 / nf,
        mean_episode_time: window.iter().map(|s| s.duration).sum::<f64>() / nf,
        episodes_completed: completed,
    }
}

/// Render a training curve as CSV.
pub fn curve_to_csv(curve: &[TrainCurvePoint]) -> String {
    let mut out = String::from("update,mean_return,success_rate,collision_rate,mean_episode_time,episodes_completed\n");
    for p in curve {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            p.update,
            p.mean_return,
            p.success_rate,
            p.collision_rate,
            p.mean_episode_time,
            p.episodes_completed
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_setup() -> (SceneParams, SimParams, SensingParams, PpoParams, RewardTable, ExpertArch) {
        let mut scene = SceneParams::default();
        scene.reaching.statics = 0;
        scene.reaching.bounds_width = 20.0;
        scene.reaching.bounds_height = 20.0;
        scene.reaching.max_goal_dist = 6.0;
        let sim = SimParams::default();
        let sensing = SensingParams {
            rays: 8,
            ..SensingParams::default()
        };
        let ppo = PpoParams {
            envs: 2,
            horizon: 16,
            epochs: 1,
            minibatches: 1,
            max_updates: 2,
            train_timeout: 5.0,
            ..PpoParams::default()
        };
        let arch = ExpertArch {
            rays: 8,
            enc_width: 8,
            trunk_hidden: vec![16, 8],
            init_std: 0.2,
        };
        (scene, sim, sensing, ppo, RewardTable::default(), arch)
    }

    #[test]
    fn two_updates_run_and_curve_has_entries() {
        let (scene, sim, sensing, ppo, rewards, arch) = tiny_setup();
        let setup = ExpertTrainSetup {
            scene: &scene,
            sim: &sim,
            sensing: &sensing,
            ppo: &ppo,
            rewards: &rewards,
            arch: &arch,
        };
        let out = train_expert(Capability::Reaching, &setup, 7).unwrap();
        assert_eq!(out.curve.len(), 2);
    }

    #[test]
    fn same_seed_gives_identical_training() {
        let (scene, sim, sensing, ppo, rewards, arch) = tiny_setup();
        let setup = ExpertTrainSetup {
            scene: &scene,
            sim: &sim,
            sensing: &sensing,
            ppo: &ppo,
            rewards: &rewards,
            arch: &arch,
        };
        let a = train_expert(Capability::Reaching, &setup, 11).unwrap();
        let b = train_expert(Capability::Reaching, &setup, 11).unwrap();
        for ((_, pa), (_, pb)) in a.policy.store.iter().zip(b.policy.store.iter()) {
            assert_eq!(pa.value.data, pb.value.data, "param {} differs", pa.name);
        }
        let c = train_expert(Capability::Reaching, &setup, 12).unwrap();
        let differs = a
            .policy
            .store
            .iter()
            .zip(c.policy.store.iter())
            .any(|((_, pa), (_, pc))| pa.value.data != pc.value.data);
        assert!(differs, "different seeds should differ");
    }
}
