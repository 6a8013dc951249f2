//! Omnidirectional kinematics, action clipping, collision detection, and
//! reward-free episode stepping with ordered termination checks.

use crate::error::{Error, Result};
use crate::geom::{normalize_angle, rect_intersects, OrientedRect, Vec2};
use crate::world::{step_dynamics, EpisodeSpec, Pose, Scene, ROBOT_HALF};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Velocity limits per channel: (m/s, m/s, rad/s).
pub const V_MAX: [f64; 3] = [1.5, 1.0, std::f64::consts::FRAC_PI_4];

/// Planar robot pose; the footprint is the constant 0.70 m × 0.35 m rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub position: Vec2,
    /// Normalized to (−π, π].
    pub yaw: f64,
}

impl RobotState {
    pub fn new(position: Vec2, yaw: f64) -> Self {
        RobotState {
            position,
            yaw: normalize_angle(yaw),
        }
    }

    pub fn from_pose(p: Pose) -> Self {
        RobotState::new(p.pos, p.yaw)
    }

    pub fn footprint(&self) -> OrientedRect {
        OrientedRect::new(self.position, ROBOT_HALF, self.yaw)
    }
}

/// Unitless commanded action, one value per (x, y, yaw) channel. Values may
/// exceed [−1, 1]; clipping is the kernel's job.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action(pub [f64; 3]);

impl Action {
    pub const ZERO: Action = Action([0.0; 3]);

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Body-frame metric velocity after clipping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Velocity(pub [f64; 3]);

impl Velocity {
    pub const ZERO: Velocity = Velocity([0.0; 3]);

    /// The normalized action that reproduces this velocity through
    /// `clip_action`.
    pub fn as_action(&self) -> Action {
        Action([
            self.0[0] / V_MAX[0],
            self.0[1] / V_MAX[1],
            self.0[2] / V_MAX[2],
        ])
    }
}

/// Componentwise clamp to [−1, 1] scaled by the per-channel maxima.
pub fn clip_action(a: Action) -> Result<Velocity> {
    for (i, v) in a.0.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::InvalidAction { index: i, value: *v });
        }
    }
    Ok(Velocity([
        a.0[0].clamp(-1.0, 1.0) * V_MAX[0],
        a.0[1].clamp(-1.0, 1.0) * V_MAX[1],
        a.0[2].clamp(-1.0, 1.0) * V_MAX[2],
    ]))
}

/// Explicit-Euler step: body-frame velocity rotated by the current yaw, then
/// yaw advanced and re-normalized.
pub fn integrate(state: &RobotState, v: Velocity, dt: f64) -> RobotState {
    debug_assert!(dt > 0.0);
    let body = Vec2::new(v.0[0], v.0[1]);
    let world = body.rotated(state.yaw);
    RobotState {
        position: state.position + world * dt,
        yaw: normalize_angle(state.yaw + v.0[2] * dt),
    }
}

/// True iff the robot rectangle intersects any static, wall, dynamic body, or
/// leaves the scene bounds. Test order (statics, walls, dynamics, bounds) is
/// fixed for trace determinism.
pub fn check_collision(state: &RobotState, scene: &Scene) -> bool {
    let rect = state.footprint();
    for o in &scene.statics {
        if rect_intersects(&rect, &o.collider()) {
            return true;
        }
    }
    for w in &scene.walls {
        if rect_intersects(&rect, &w.collider()) {
            return true;
        }
    }
    for d in &scene.dynamics {
        if rect_intersects(&rect, &d.body.collider()) {
            return true;
        }
    }
    !rect.corners().iter().all(|c| scene.bounds.contains(*c))
}

/// Result of one control step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub next_state: RobotState,
    pub collided: bool,
    pub reached: bool,
    pub timed_out: bool,
    /// Episode time after this step, seconds.
    pub elapsed: f64,
}

impl StepOutcome {
    pub fn terminal(&self) -> bool {
        self.collided || self.reached || self.timed_out
    }
}

/// Simulation constants shared by training, collection, and evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimParams {
    /// Control period, seconds.
    pub dt: f64,
    pub goal_radius: f64,
    /// Extra inflation of the footprint for collision tests (0 = exact).
    pub collision_margin: f64,
    pub timeout_capability: f64,
    pub timeout_mixed: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            dt: 0.1,
            goal_radius: 0.5,
            collision_margin: 0.0,
            timeout_capability: 90.0,
            timeout_mixed: 120.0,
        }
    }
}

impl SimParams {
    pub fn timeout_for(&self, cap: crate::world::Capability) -> f64 {
        if cap == crate::world::Capability::Mixed {
            self.timeout_mixed
        } else {
            self.timeout_capability
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut bad = Vec::new();
        if !(self.dt > 0.0) {
            bad.push(format!("sim.dt must be positive, got {}", self.dt));
        }
        if !(self.goal_radius > 0.0) {
            bad.push(format!("sim.goal_radius must be positive, got {}", self.goal_radius));
        }
        if self.collision_margin < 0.0 {
            bad.push("sim.collision_margin must be non-negative".into());
        }
        if !(self.timeout_capability > 0.0) || !(self.timeout_mixed > 0.0) {
            bad.push("sim timeouts must be positive".into());
        }
        bad
    }
}

/// One running episode. Owns the evolving scene (dynamics state), robot state,
/// and clock; stepping a terminated episode is a contract violation.
#[derive(Debug, Clone)]
pub struct Episode {
    pub spec: EpisodeSpec,
    pub scene: Scene,
    pub state: RobotState,
    pub elapsed: f64,
    pub last_velocity: Velocity,
    terminated: bool,
    dt: f64,
    goal_radius: f64,
    collision_margin: f64,
    dynamics_rng: ChaCha8Rng,
}

impl Episode {
    pub fn new(spec: EpisodeSpec, sim: &SimParams, dynamics_rng: ChaCha8Rng) -> Episode {
        let scene = spec.scene.clone();
        let state = RobotState::from_pose(spec.start);
        Episode {
            spec,
            scene,
            state,
            elapsed: 0.0,
            last_velocity: Velocity::ZERO,
            terminated: false,
            dt: sim.dt,
            goal_radius: sim.goal_radius,
            collision_margin: sim.collision_margin,
            dynamics_rng,
        }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn terminated(&self) -> bool {
        self.terminated
    }

    pub fn goal_dist(&self) -> f64 {
        self.state.position.dist(self.spec.goal)
    }

    fn collides(&self, state: &RobotState) -> bool {
        if self.collision_margin > 0.0 {
            let rect = OrientedRect::new(
                state.position,
                ROBOT_HALF + Vec2::new(self.collision_margin, self.collision_margin),
                state.yaw,
            );
            let hit = self.scene.colliders().any(|c| rect_intersects(&rect, &c));
            hit || !rect.corners().iter().all(|c| self.scene.bounds.contains(*c))
        } else {
            check_collision(state, &self.scene)
        }
    }

    /// Apply one action: clip, integrate, advance dynamics, then evaluate
    /// termination in the fixed order collision → reached → timeout.
    pub fn step(&mut self, a: Action) -> Result<StepOutcome> {
        if self.terminated {
            return Err(Error::Contract(
                "step() called on a terminated episode".into(),
            ));
        }
        let v = clip_action(a)?;
        let next = integrate(&self.state, v, self.dt);
        self.scene = step_dynamics(&self.scene, self.dt, &mut self.dynamics_rng);
        self.elapsed += self.dt;
        self.last_velocity = v;

        let collided = self.collides(&next);
        let reached = !collided && next.position.dist(self.spec.goal) <= self.goal_radius;
        let timed_out = !collided && !reached && self.elapsed >= self.spec.timeout - 1e-9;

        self.state = next;
        self.terminated = collided || reached || timed_out;
        Ok(StepOutcome {
            next_state: next,
            collided,
            reached,
            timed_out,
            elapsed: self.elapsed,
        })
    }
}
