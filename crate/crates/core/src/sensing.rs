//! Four-view depth sensing and observation assembly.
//!
//! The expert sees clean metric depth rays (privileged). The student sees the
//! same geometry through a degradation pipeline: coarse pooling of history
//! frames, 8-level quantization, and additive noise — the desk-scale stand-in
//! for a harder observation modality. The two assembly paths never share the
//! degradation code, so privileged observations cannot pick it up by accident.

use crate::error::{Error, Result};
use crate::geom::{ray_collider, Vec2};
use crate::simkernel::{Action, RobotState};
use crate::world::Scene;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Valid depth range; returns are clamped into it.
pub const DEPTH_MIN: f64 = 0.01;
pub const DEPTH_MAX: f64 = 4.0;

/// Camera mount sides, with yaw offsets 0, −π/2, π, +π/2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mount {
    Front,
    Right,
    Back,
    Left,
}

impl Mount {
    pub const ALL: [Mount; 4] = [Mount::Front, Mount::Right, Mount::Back, Mount::Left];

    pub fn yaw_offset(self) -> f64 {
        match self {
            Mount::Front => 0.0,
            Mount::Right => -std::f64::consts::FRAC_PI_2,
            Mount::Back => std::f64::consts::PI,
            Mount::Left => std::f64::consts::FRAC_PI_2,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Mount::Front => 0,
            Mount::Right => 1,
            Mount::Back => 2,
            Mount::Left => 3,
        }
    }
}

/// One camera's clamped depth returns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthImage {
    pub rays: Vec<f64>,
    pub mount: Mount,
    pub fov: f64,
}

/// Privileged observation: four clean depth views, the last commanded action,
/// and the goal expressed in the robot frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertObservation {
    pub d_front: DepthImage,
    pub d_right: DepthImage,
    pub d_back: DepthImage,
    pub d_left: DepthImage,
    pub last_action: Action,
    pub goal_rel: Vec2,
}

impl ExpertObservation {
    pub fn views(&self) -> [&DepthImage; 4] {
        [&self.d_front, &self.d_right, &self.d_back, &self.d_left]
    }

    /// FNV-1a digest over the observation's numeric content; recorded next to
    /// student samples so labels can be audited without storing the
    /// privileged data itself.
    pub fn digest(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |v: f64| {
            for b in v.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for view in self.views() {
            for &r in &view.rays {
                eat(r);
            }
            eat(view.fov);
        }
        for &a in &self.last_action.0 {
            eat(a);
        }
        eat(self.goal_rel.x);
        eat(self.goal_rel.y);
        h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Granularity {
    /// Full-resolution latest frame (R rays per view).
    Fine,
    /// Pooled history frame (R/4 bins per view).
    Coarse,
}

/// One windowed frame of the student observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameFeatures {
    /// Per-view ray vectors, indexed Front/Right/Back/Left.
    pub views: [Vec<f64>; 4],
    pub granularity: Granularity,
    pub timestamp: f64,
}

/// Degraded, windowed multi-view observation for the student.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentObservation {
    /// Oldest first; the newest entry is the only Fine frame.
    pub window: Vec<FrameFeatures>,
    pub goal_rel: Vec2,
}

/// Undegraded per-step capture feeding the student history ring.
#[derive(Debug, Clone, PartialEq)]
pub struct RawFrame {
    pub views: [Vec<f64>; 4],
    pub timestamp: f64,
}

/// Per-episode sensor configuration: sampled FOV and ray-origin jitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorRig {
    pub fov: f64,
    pub origin_jitter: Vec2,
}

impl SensorRig {
    pub fn fixed(fov: f64) -> SensorRig {
        SensorRig {
            fov,
            origin_jitter: Vec2::ZERO,
        }
    }

    pub fn sample(params: &SensingParams, rng: &mut ChaCha8Rng) -> SensorRig {
        if params.randomize_rig {
            SensorRig {
                fov: rng.gen_range(params.fov_min..=params.fov_max),
                origin_jitter: Vec2::new(
                    rng.gen_range(-params.origin_jitter..=params.origin_jitter),
                    rng.gen_range(-params.origin_jitter..=params.origin_jitter),
                ),
            }
        } else {
            SensorRig::fixed(params.fov_fixed)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensingParams {
    /// Rays per camera (must be a multiple of 4).
    pub rays: usize,
    /// Sliding-window length for the student.
    pub window: usize,
    pub fov_min: f64,
    pub fov_max: f64,
    pub fov_fixed: f64,
    pub randomize_rig: bool,
    /// Ray-origin jitter half-range, meters.
    pub origin_jitter: f64,
    /// Student depth quantization levels.
    pub quant_levels: usize,
    /// Student additive depth noise, meters.
    pub depth_noise_std: f64,
    /// Proprioceptive (last-action) noise during expert training.
    pub proprio_sigma: f64,
}

impl Default for SensingParams {
    fn default() -> Self {
        SensingParams {
            rays: 32,
            window: 8,
            fov_min: 100f64.to_radians(),
            fov_max: 140f64.to_radians(),
            fov_fixed: 120f64.to_radians(),
            randomize_rig: true,
            origin_jitter: 0.05,
            quant_levels: 8,
            depth_noise_std: 0.1,
            proprio_sigma: 0.05,
        }
    }
}

impl SensingParams {
    pub fn coarse_bins(&self) -> usize {
        self.rays / 4
    }

    pub fn validate(&self) -> Vec<String> {
        let mut bad = Vec::new();
        if self.rays < 4 || self.rays % 4 != 0 {
            bad.push(format!("sensing.rays must be a positive multiple of 4, got {}", self.rays));
        }
        if self.window < 1 {
            bad.push("sensing.window must be at least 1".into());
        }
        let deg = std::f64::consts::PI;
        if !(self.fov_min > 0.0 && self.fov_max < deg && self.fov_min <= self.fov_max) {
            bad.push("sensing fov range must satisfy 0 < fov_min <= fov_max < 180 deg".into());
        }
        if !(self.fov_fixed > 0.0 && self.fov_fixed < deg) {
            bad.push("sensing.fov_fixed out of range".into());
        }
        if self.quant_levels < 2 {
            bad.push("sensing.quant_levels must be at least 2".into());
        }
        if self.depth_noise_std < 0.0 || self.proprio_sigma < 0.0 || self.origin_jitter < 0.0 {
            bad.push("sensing noise parameters must be non-negative".into());
        }
        bad
    }
}

fn cast_view(origin: Vec2, center_heading: f64, scene: &Scene, fov: f64, r: usize) -> Vec<f64> {
    debug_assert!(r >= 2 && fov > 0.0 && fov < std::f64::consts::PI);
    let mut rays = Vec::with_capacity(r);
    for i in 0..r {
        let theta = center_heading - fov / 2.0 + fov * i as f64 / (r as f64 - 1.0);
        let dir = Vec2::from_angle(theta);
        let mut depth = f64::INFINITY;
        for c in scene.colliders() {
            if let Some(t) = ray_collider(origin, dir, &c) {
                depth = depth.min(t);
            }
        }
        if let Some(t) = scene.bounds.ray_exit(origin, dir) {
            depth = depth.min(t);
        }
        rays.push(depth.clamp(DEPTH_MIN, DEPTH_MAX));
    }
    rays
}

/// Cast `r` rays evenly spanning [−fov/2, +fov/2] about the mount direction.
pub fn raycast(state: &RobotState, scene: &Scene, mount: Mount, fov: f64, r: usize) -> DepthImage {
    DepthImage {
        rays: cast_view(state.position, state.yaw + mount.yaw_offset(), scene, fov, r),
        mount,
        fov,
    }
}

/// Capture the four clean views for one step, with the rig's origin jitter
/// applied in the robot frame.
pub fn capture_views(
    state: &RobotState,
    scene: &Scene,
    rig: &SensorRig,
    r: usize,
) -> [Vec<f64>; 4] {
    let origin = state.position + rig.origin_jitter.rotated(state.yaw);
    Mount::ALL.map(|m| cast_view(origin, state.yaw + m.yaw_offset(), scene, rig.fov, r))
}

/// World goal rotated into the robot frame.
pub fn goal_in_robot_frame(state: &RobotState, goal: Vec2) -> Vec2 {
    (goal - state.position).rotated(-state.yaw)
}

/// Assemble the privileged observation from pre-captured views.
pub fn assemble_expert_obs(
    state: &RobotState,
    views: &[Vec<f64>; 4],
    rig: &SensorRig,
    last_action: Action,
    goal: Vec2,
) -> ExpertObservation {
    let img = |m: Mount| DepthImage {
        rays: views[m.index()].clone(),
        mount: m,
        fov: rig.fov,
    };
    ExpertObservation {
        d_front: img(Mount::Front),
        d_right: img(Mount::Right),
        d_back: img(Mount::Back),
        d_left: img(Mount::Left),
        last_action,
        goal_rel: goal_in_robot_frame(state, goal),
    }
}

/// Perturb the proprioceptive (last-action) channels with iid Gaussian noise.
/// Depth rays are untouched.
pub fn add_proprio_noise(
    mut obs: ExpertObservation,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> ExpertObservation {
    debug_assert!(sigma >= 0.0);
    if sigma == 0.0 {
        return obs;
    }
    for c in &mut obs.last_action.0 {
        *c += sigma * crate::rng::gaussian(rng);
    }
    obs
}

/// Mean-pool contiguous groups of 4 rays into coarse bins.
pub fn pool_coarse(rays: &[f64]) -> Vec<f64> {
    debug_assert!(rays.len() % 4 == 0);
    rays.chunks_exact(4)
        .map(|c| (c[0] + c[1] + c[2] + c[3]) / 4.0)
        .collect()
}

/// Snap a depth to the center of its quantization bin.
fn quantize(d: f64, levels: usize) -> f64 {
    let span = DEPTH_MAX - DEPTH_MIN;
    let w = span / levels as f64;
    let bin = (((d - DEPTH_MIN) / w).floor() as i64).clamp(0, levels as i64 - 1);
    DEPTH_MIN + (bin as f64 + 0.5) * w
}

fn degrade(rays: &[f64], levels: usize, noise_std: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    rays.iter()
        .map(|&d| {
            let mut v = quantize(d, levels);
            if noise_std > 0.0 {
                v += noise_std * crate::rng::gaussian(rng);
            }
            v.clamp(DEPTH_MIN, DEPTH_MAX)
        })
        .collect()
}

/// Build the student observation from the raw frame history (oldest first).
///
/// The newest frame stays fine-grained; the up-to-7 older frames are pooled
/// to coarse bins. Every ray is then quantized and noised — the student never
/// sees clean metric depth.
pub fn assemble_student_obs(
    history: &[RawFrame],
    goal_rel: Vec2,
    params: &SensingParams,
    rng: &mut ChaCha8Rng,
) -> Result<StudentObservation> {
    if history.is_empty() {
        return Err(Error::Contract(
            "assemble_student_obs requires at least one frame".into(),
        ));
    }
    let k = params.window;
    let start = history.len().saturating_sub(k);
    let tail = &history[start..];
    let newest = tail.len() - 1;
    let mut window = Vec::with_capacity(tail.len());
    for (i, frame) in tail.iter().enumerate() {
        let (views, granularity) = if i == newest {
            (
                [0, 1, 2, 3].map(|v| degrade(&frame.views[v], params.quant_levels, params.depth_noise_std, rng)),
                Granularity::Fine,
            )
        } else {
            (
                [0, 1, 2, 3].map(|v| {
                    let pooled = pool_coarse(&frame.views[v]);
                    degrade(&pooled, params.quant_levels, params.depth_noise_std, rng)
                }),
                Granularity::Coarse,
            )
        };
        window.push(FrameFeatures {
            views,
            granularity,
            timestamp: frame.timestamp,
        });
    }
    Ok(StudentObservation { window, goal_rel })
}

impl StudentObservation {
    /// Flatten to the canonical network/dataset layout: the fine frame as one
    /// 4·R vector and exactly `window−1` coarse slots of 4·(R/4) values each,
    /// zero-padded at the oldest end. Values are rounded through f32 — the
    /// dataset's storage precision — so the policy sees bit-identical inputs
    /// live and when replayed from a stored record.
    pub fn to_parts(&self, params: &SensingParams) -> (Vec<f64>, Vec<Vec<f64>>) {
        let r = params.rays;
        let bins = params.coarse_bins();
        let slots = params.window - 1;
        let newest = self.window.last().expect("window non-empty");
        debug_assert_eq!(newest.granularity, Granularity::Fine);
        let f32r = |v: &f64| *v as f32 as f64;
        let mut fine = Vec::with_capacity(4 * r);
        for v in &newest.views {
            fine.extend(v.iter().map(f32r));
        }
        let coarse_frames = &self.window[..self.window.len() - 1];
        let pad = slots.saturating_sub(coarse_frames.len());
        let mut coarse = Vec::with_capacity(slots);
        for _ in 0..pad {
            coarse.push(vec![0.0; 4 * bins]);
        }
        for f in coarse_frames {
            let mut flat = Vec::with_capacity(4 * bins);
            for v in &f.views {
                flat.extend(v.iter().map(f32r));
            }
            coarse.push(flat);
        }
        (fine, coarse)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{Capability, Obstacle, ObstacleShape, WallSegment};
    use approx::assert_relative_eq;

    fn unbounded() -> Scene {
        Scene::empty(Capability::Reaching, 1e9, 1e9)
    }

    #[test]
    fn empty_scene_rays_at_max() {
        let s = RobotState::new(Vec2::ZERO, 0.0);
        let img = raycast(&s, &unbounded(), Mount::Front, 2.0, 16);
        assert!(img.rays.iter().all(|&d| d == DEPTH_MAX));
    }

    #[test]
    fn perpendicular_wall_depths() {
        let mut scene = unbounded();
        scene.walls.push(WallSegment {
            start: Vec2::new(2.0, -1000.0),
            end: Vec2::new(2.0, 1000.0),
            thickness: 1e-9,
        });
        let s = RobotState::new(Vec2::ZERO, 0.0);
        let fov = 60f64.to_radians();
        let img = raycast(&s, &scene, Mount::Front, fov, 5);
        // Rays at -30, -15, 0, 15, 30 degrees.
        assert_relative_eq!(img.rays[2], 2.0, epsilon = 1e-9);
        let expect = 2.0 / 15f64.to_radians().cos();
        assert_relative_eq!(img.rays[1], expect, epsilon = 1e-9);
        assert_relative_eq!(img.rays[3], expect, epsilon = 1e-9);
        let expect30 = (2.0 / 30f64.to_radians().cos()).min(DEPTH_MAX);
        assert_relative_eq!(img.rays[0], expect30, epsilon = 1e-9);
    }

    #[test]
    fn near_obstacle_clamps_to_min() {
        let mut scene = unbounded();
        scene.statics.push(Obstacle {
            shape: ObstacleShape::Circle { radius: 0.001 },
            center: Vec2::new(0.005, 0.0),
        });
        let s = RobotState::new(Vec2::ZERO, 0.0);
        let img = raycast(&s, &scene, Mount::Front, 0.5, 3);
        assert_eq!(img.rays[1], DEPTH_MIN);
    }

    #[test]
    fn goal_rel_frames() {
        let s0 = RobotState::new(Vec2::ZERO, 0.0);
        let g = goal_in_robot_frame(&s0, Vec2::new(3.0, 0.0));
        assert_relative_eq!(g.x, 3.0);
        assert_relative_eq!(g.y, 0.0);

        let s1 = RobotState::new(Vec2::ZERO, std::f64::consts::FRAC_PI_2);
        let g = goal_in_robot_frame(&s1, Vec2::new(3.0, 0.0));
        assert_relative_eq!(g.x, 0.0, epsilon = 1e-12);
        assert_relative_eq!(g.y, -3.0, epsilon = 1e-12);
    }

    fn some_expert_obs() -> ExpertObservation {
        let s = RobotState::new(Vec2::ZERO, 0.3);
        let scene = unbounded();
        let rig = SensorRig::fixed(2.0);
        let views = capture_views(&s, &scene, &rig, 8);
        assemble_expert_obs(&s, &views, &rig, Action([0.1, -0.2, 0.05]), Vec2::new(2.0, 1.0))
    }

    #[test]
    fn proprio_noise_zero_sigma_is_identity() {
        let obs = some_expert_obs();
        let mut rng = crate::rng::stream(0, "noise", 0);
        let noised = add_proprio_noise(obs.clone(), 0.0, &mut rng);
        assert_eq!(obs, noised);
    }

    #[test]
    fn proprio_noise_sample_std() {
        let obs = some_expert_obs();
        let mut rng = crate::rng::stream(1, "noise", 0);
        let n = 100_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let x = add_proprio_noise(obs.clone(), 0.05, &mut rng);
            let d = x.last_action.0[0] - obs.last_action.0[0];
            sum += d;
            sum_sq += d * d;
        }
        let mean = sum / n as f64;
        let std = (sum_sq / n as f64 - mean * mean).sqrt();
        assert!((std - 0.05).abs() / 0.05 < 0.02, "sample std {std}");
    }

    #[test]
    fn proprio_noise_leaves_depth_untouched() {
        let obs = some_expert_obs();
        let mut rng = crate::rng::stream(2, "noise", 0);
        let noised = add_proprio_noise(obs.clone(), 0.5, &mut rng);
        for (a, b) in obs.views().iter().zip(noised.views().iter()) {
            assert_eq!(a.rays, b.rays);
        }
        assert_ne!(obs.last_action, noised.last_action);
    }

    fn frame(t: f64, fill: f64, r: usize) -> RawFrame {
        RawFrame {
            views: [0, 1, 2, 3].map(|_| vec![fill; r]),
            timestamp: t,
        }
    }

    #[test]
    fn single_frame_window_is_fine() {
        let p = SensingParams::default();
        let mut rng = crate::rng::stream(0, "stu", 0);
        let obs = assemble_student_obs(&[frame(0.0, 1.0, p.rays)], Vec2::ZERO, &p, &mut rng).unwrap();
        assert_eq!(obs.window.len(), 1);
        assert_eq!(obs.window[0].granularity, Granularity::Fine);
        assert_eq!(obs.window[0].views[0].len(), p.rays);
    }

    #[test]
    fn long_history_truncates_to_window() {
        let p = SensingParams::default();
        let mut rng = crate::rng::stream(1, "stu", 0);
        let history: Vec<RawFrame> = (0..12).map(|i| frame(i as f64 * 0.1, 2.0, p.rays)).collect();
        let obs = assemble_student_obs(&history, Vec2::ZERO, &p, &mut rng).unwrap();
        assert_eq!(obs.window.len(), 8);
        let coarse = obs.window.iter().filter(|f| f.granularity == Granularity::Coarse).count();
        assert_eq!(coarse, 7);
        assert_eq!(obs.window.last().unwrap().granularity, Granularity::Fine);
        assert_eq!(obs.window[0].views[0].len(), p.coarse_bins());
        // Strictly increasing timestamps, oldest first.
        for w in obs.window.windows(2) {
            assert!(w[0].timestamp < w[1].timestamp);
        }
    }

    #[test]
    fn empty_history_is_contract_violation() {
        let p = SensingParams::default();
        let mut rng = crate::rng::stream(2, "stu", 0);
        match assemble_student_obs(&[], Vec2::ZERO, &p, &mut rng) {
            Err(Error::Contract(_)) => {}
            other => panic!("expected contract violation, got {other:?}"),
        }
    }

    #[test]
    fn pooling_means_groups_of_four() {
        let rays = vec![1.0, 1.0, 1.0, 1.0, 3.0, 3.0, 3.0, 3.0];
        assert_eq!(pool_coarse(&rays), vec![1.0, 3.0]);
    }

    #[test]
    fn pooling_preserves_mean() {
        let rays: Vec<f64> = (0..32).map(|i| 0.01 + 0.1 * i as f64).collect();
        let pooled = pool_coarse(&rays);
        let m1: f64 = rays.iter().sum::<f64>() / rays.len() as f64;
        let m2: f64 = pooled.iter().sum::<f64>() / pooled.len() as f64;
        assert!((m1 - m2).abs() < 1e-12);
    }

    #[test]
    fn quantization_snaps_to_bin_centers() {
        let w = (DEPTH_MAX - DEPTH_MIN) / 8.0;
        assert_relative_eq!(quantize(DEPTH_MIN, 8), DEPTH_MIN + 0.5 * w);
        assert_relative_eq!(quantize(DEPTH_MAX, 8), DEPTH_MIN + 7.5 * w);
        let mid = DEPTH_MIN + 3.2 * w;
        assert_relative_eq!(quantize(mid, 8), DEPTH_MIN + 3.5 * w);
    }

    #[test]
    fn ray_monotonicity_under_retreating_obstacle() {
        let s = RobotState::new(Vec2::ZERO, 0.0);
        let mut prev = 0.0;
        for d in [0.5, 1.0, 2.0, 3.0, 5.0] {
            let mut scene = unbounded();
            scene.statics.push(Obstacle {
                shape: ObstacleShape::Circle { radius: 0.2 },
                center: Vec2::new(d, 0.0),
            });
            let img = raycast(&s, &scene, Mount::Front, 0.5, 3);
            assert!(img.rays[1] >= prev);
            prev = img.rays[1];
        }
    }

    #[test]
    fn to_parts_pads_oldest_slots() {
        let p = SensingParams::default();
        let mut rng = crate::rng::stream(3, "stu", 0);
        let history: Vec<RawFrame> = (0..3).map(|i| frame(i as f64 * 0.1, 2.0, p.rays)).collect();
        let obs = assemble_student_obs(&history, Vec2::ZERO, &p, &mut rng).unwrap();
        let (fine, coarse) = obs.to_parts(&p);
        assert_eq!(fine.len(), 4 * p.rays);
        assert_eq!(coarse.len(), p.window - 1);
        // 2 real coarse frames -> first 5 slots are zero padding.
        for slot in &coarse[..5] {
            assert!(slot.iter().all(|&v| v == 0.0));
        }
        assert!(coarse[5].iter().any(|&v| v != 0.0));
    }
}
