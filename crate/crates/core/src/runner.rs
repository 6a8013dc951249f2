//! Shared per-episode driver: owns the stepping state, the sensor rig, and
//! the raw frame history; producers (training, collection, evaluation) pull
//! expert or student observations from it and push actions through it.
//!
//! All stochastic pieces of one episode (rig sampling, student degradation,
//! dynamic-obstacle waypoints, policy action noise, proprioceptive noise) get
//! independent streams derived from the episode seed, so an episode replays
//! identically regardless of what else ran before it.

use crate::error::Result;
use crate::rng;
use crate::sensing::{
    assemble_expert_obs, assemble_student_obs, capture_views, goal_in_robot_frame,
    ExpertObservation, RawFrame, SensingParams, SensorRig, StudentObservation,
};
use crate::simkernel::{Action, Episode, SimParams, StepOutcome};
use crate::world::EpisodeSpec;
use rand_chacha::ChaCha8Rng;

/// Independent RNG streams for one episode.
pub struct EpisodeStreams {
    pub rig: ChaCha8Rng,
    pub degrade: ChaCha8Rng,
    pub dynamics: ChaCha8Rng,
    pub action: ChaCha8Rng,
    pub noise: ChaCha8Rng,
}

impl EpisodeStreams {
    pub fn derive(episode_seed: u64) -> EpisodeStreams {
        EpisodeStreams {
            rig: rng::stream(episode_seed, "rig", 0),
            degrade: rng::stream(episode_seed, "degrade", 0),
            dynamics: rng::stream(episode_seed, "dynamics", 0),
            action: rng::stream(episode_seed, "action", 0),
            noise: rng::stream(episode_seed, "noise", 0),
        }
    }
}

pub struct EpisodeDriver {
    pub episode: Episode,
    pub rig: SensorRig,
    pub last_action: Action,
    sensing: SensingParams,
    history: Vec<RawFrame>,
    pub streams: EpisodeStreams,
    captured_this_step: bool,
}

impl EpisodeDriver {
    pub fn new(
        spec: EpisodeSpec,
        sim: &SimParams,
        sensing: &SensingParams,
        episode_seed: u64,
    ) -> EpisodeDriver {
        let mut streams = EpisodeStreams::derive(episode_seed);
        let rig = SensorRig::sample(sensing, &mut streams.rig);
        let dynamics_rng = streams.dynamics.clone();
        EpisodeDriver {
            episode: Episode::new(spec, sim, dynamics_rng),
            rig,
            last_action: Action::ZERO,
            sensing: *sensing,
            history: Vec::new(),
            streams,
            captured_this_step: false,
        }
    }

    /// Cast the four views for the current state and append the raw frame to
    /// the student history. Call once per control step, before reading
    /// observations.
    pub fn capture(&mut self) -> [Vec<f64>; 4] {
        let views = capture_views(
            &self.episode.state,
            &self.episode.scene,
            &self.rig,
            self.sensing.rays,
        );
        self.history.push(RawFrame {
            views: views.clone(),
            timestamp: self.episode.elapsed,
        });
        // Only the newest `window` frames can ever be observed.
        let cap = self.sensing.window;
        if self.history.len() > cap {
            let drop = self.history.len() - cap;
            self.history.drain(..drop);
        }
        self.captured_this_step = true;
        views
    }

    /// Privileged observation from pre-captured views.
    pub fn expert_obs(&self, views: &[Vec<f64>; 4]) -> ExpertObservation {
        assemble_expert_obs(
            &self.episode.state,
            views,
            &self.rig,
            self.last_action,
            self.episode.spec.goal,
        )
    }

    /// Degraded windowed observation for the student.
    pub fn student_obs(&mut self) -> Result<StudentObservation> {
        debug_assert!(self.captured_this_step, "capture() before student_obs()");
        let goal_rel = goal_in_robot_frame(&self.episode.state, self.episode.spec.goal);
        assemble_student_obs(&self.history, goal_rel, &self.sensing, &mut self.streams.degrade)
    }

    /// Execute an action and remember it as `last_action` for the next
    /// observation.
    pub fn apply(&mut self, action: Action) -> Result<StepOutcome> {
        let out = self.episode.step(action)?;
        self.last_action = action;
        self.captured_this_step = false;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{Capability, EpisodeParams, Scene};

    fn driver() -> EpisodeDriver {
        let scene = Scene::empty(Capability::Reaching, 30.0, 30.0);
        let p = EpisodeParams {
            max_goal_dist: 8.0,
            min_goal_dist: 2.0,
            timeout: 90.0,
            clearance: 0.05,
        };
        let spec = crate::world::sample_episode(&scene, 3, &p).unwrap();
        EpisodeDriver::new(spec, &SimParams::default(), &SensingParams::default(), 99)
    }

    #[test]
    fn first_step_has_zero_last_action() {
        let mut d = driver();
        let views = d.capture();
        let obs = d.expert_obs(&views);
        assert_eq!(obs.last_action, Action::ZERO);
    }

    #[test]
    fn history_grows_then_caps_at_window() {
        let mut d = driver();
        for i in 0..12 {
            let _ = d.capture();
            let obs = d.student_obs().unwrap();
            assert_eq!(obs.window.len(), (i + 1).min(8));
            d.apply(Action([0.0, 0.0, 0.1])).unwrap();
        }
    }

    #[test]
    fn replay_is_deterministic() {
        let run = || {
            let mut d = driver();
            let mut trace = Vec::new();
            for _ in 0..5 {
                let views = d.capture();
                let obs = d.expert_obs(&views);
                trace.push(obs.d_front.rays.clone());
                d.apply(Action([0.5, 0.1, 0.0])).unwrap();
                trace.push(vec![d.episode.state.position.x, d.episode.state.position.y]);
            }
            trace
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn rig_fov_within_sampling_range() {
        let d = driver();
        let p = SensingParams::default();
        assert!(d.rig.fov >= p.fov_min && d.rig.fov <= p.fov_max);
        assert!(d.rig.origin_jitter.x.abs() <= p.origin_jitter);
    }
}
