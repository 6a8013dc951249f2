//! Procedural scene generation for the three capability families plus the
//! mixed benchmark arena, and random-waypoint motion for dynamic obstacles.
//!
//! Generation is a pure function of `(capability, seed, params)`: all draws
//! come from a ChaCha stream derived from the seed, so equal inputs produce
//! bitwise-equal scenes.

use crate::error::{Error, Result};
use crate::geom::{disc_intersects, rect_intersects, Aabb, Collider, OrientedRect, Vec2};
use crate::rng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Robot footprint half extents: the 0.70 m × 0.35 m cuboid projected to 2D.
pub const ROBOT_HALF: Vec2 = Vec2 { x: 0.35, y: 0.175 };

/// Robot width (the narrow footprint dimension); lower bound for squeeze gaps.
pub const ROBOT_WIDTH: f64 = 0.35;

/// Rejection-sampling attempt cap for placement loops.
pub const N_MAX_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Capability {
    Reaching,
    Squeezing,
    Avoiding,
    Mixed,
}

impl Capability {
    /// The three trainable capabilities (excludes the mixed benchmark scene).
    pub const TRAINABLE: [Capability; 3] =
        [Capability::Reaching, Capability::Squeezing, Capability::Avoiding];

    pub const ALL: [Capability; 4] = [
        Capability::Reaching,
        Capability::Squeezing,
        Capability::Avoiding,
        Capability::Mixed,
    ];

    pub fn code(self) -> u8 {
        match self {
            Capability::Reaching => 0,
            Capability::Squeezing => 1,
            Capability::Avoiding => 2,
            Capability::Mixed => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Capability> {
        match code {
            0 => Some(Capability::Reaching),
            1 => Some(Capability::Squeezing),
            2 => Some(Capability::Avoiding),
            3 => Some(Capability::Mixed),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Capability::Reaching => "reaching",
            Capability::Squeezing => "squeezing",
            Capability::Avoiding => "avoiding",
            Capability::Mixed => "mixed",
        }
    }
}

impl std::fmt::Display for Capability {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Capability {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "reaching" => Ok(Capability::Reaching),
            "squeezing" => Ok(Capability::Squeezing),
            "avoiding" => Ok(Capability::Avoiding),
            "mixed" => Ok(Capability::Mixed),
            other => Err(format!("unknown capability '{other}'")),
        }
    }
}

/// Static obstacle footprint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ObstacleShape {
    /// Cylinder/cone footprint.
    Circle { radius: f64 },
    /// Cuboid footprint.
    Rectangle { half: Vec2, heading: f64 },
    /// Long-pole footprint; endpoints at center ± half_axis.
    Capsule { half_axis: Vec2, radius: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub shape: ObstacleShape,
    pub center: Vec2,
}

impl Obstacle {
    pub fn collider(&self) -> Collider {
        match self.shape {
            ObstacleShape::Circle { radius } => Collider::Circle {
                center: self.center,
                radius,
            },
            ObstacleShape::Rectangle { half, heading } => {
                Collider::Rect(OrientedRect::new(self.center, half, heading))
            }
            ObstacleShape::Capsule { half_axis, radius } => Collider::Capsule {
                a: self.center - half_axis,
                b: self.center + half_axis,
                radius,
            },
        }
    }

    /// Radius of the smallest circle around `center` containing the shape.
    pub fn bounding_radius(&self) -> f64 {
        match self.shape {
            ObstacleShape::Circle { radius } => radius,
            ObstacleShape::Rectangle { half, .. } => half.norm(),
            ObstacleShape::Capsule { half_axis, radius } => half_axis.norm() + radius,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicObstacle {
    pub body: Obstacle,
    /// Constant travel speed, m/s.
    pub speed: f64,
    /// Current random-waypoint target.
    pub waypoint: Vec2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WallSegment {
    pub start: Vec2,
    pub end: Vec2,
    pub thickness: f64,
}

impl WallSegment {
    pub fn collider(&self) -> Collider {
        let axis = self.end - self.start;
        let center = (self.start + self.end) * 0.5;
        let heading = axis.y.atan2(axis.x);
        Collider::Rect(OrientedRect::new(
            center,
            Vec2::new(axis.norm() * 0.5, self.thickness * 0.5),
            heading,
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub bounds: Aabb,
    pub statics: Vec<Obstacle>,
    pub dynamics: Vec<DynamicObstacle>,
    pub walls: Vec<WallSegment>,
    pub capability: Capability,
    pub seed: u64,
}

impl Scene {
    /// Empty unbounded-feeling arena for tests and smoke runs.
    pub fn empty(capability: Capability, width: f64, height: f64) -> Scene {
        Scene {
            bounds: Aabb::centered(width, height),
            statics: Vec::new(),
            dynamics: Vec::new(),
            walls: Vec::new(),
            capability,
            seed: 0,
        }
    }

    /// Colliders in the fixed order statics, walls, dynamics.
    pub fn colliders(&self) -> impl Iterator<Item = Collider> + '_ {
        self.statics
            .iter()
            .map(|o| o.collider())
            .chain(self.walls.iter().map(|w| w.collider()))
            .chain(self.dynamics.iter().map(|d| d.body.collider()))
    }
}

/// Planar pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub pos: Vec2,
    pub yaw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub scene: Scene,
    pub start: Pose,
    pub goal: Vec2,
    /// Episode time limit, seconds.
    pub timeout: f64,
}

/// Generation knobs for one capability's scenes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CapabilityParams {
    pub bounds_width: f64,
    pub bounds_height: f64,
    pub statics: usize,
    pub dynamics: usize,
    pub walls: usize,
    pub gap_width_min: f64,
    pub gap_width_max: f64,
    pub dynamic_speed_min: f64,
    pub dynamic_speed_max: f64,
    /// Straight-line start→goal distance cap.
    pub max_goal_dist: f64,
    pub min_goal_dist: f64,
}

impl Default for CapabilityParams {
    fn default() -> Self {
        CapabilityParams {
            bounds_width: 20.0,
            bounds_height: 20.0,
            statics: 0,
            dynamics: 0,
            walls: 0,
            gap_width_min: 0.50,
            gap_width_max: 0.90,
            dynamic_speed_min: 0.5,
            dynamic_speed_max: 1.5,
            max_goal_dist: 10.0,
            min_goal_dist: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneParams {
    pub reaching: CapabilityParams,
    pub squeezing: CapabilityParams,
    pub avoiding: CapabilityParams,
    pub mixed: CapabilityParams,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            reaching: CapabilityParams {
                bounds_width: 40.0,
                bounds_height: 40.0,
                statics: 12,
                max_goal_dist: 30.0,
                min_goal_dist: 2.0,
                ..CapabilityParams::default()
            },
            squeezing: CapabilityParams {
                statics: 20,
                walls: 2,
                gap_width_min: 0.50,
                gap_width_max: 0.90,
                max_goal_dist: 15.0,
                ..CapabilityParams::default()
            },
            avoiding: CapabilityParams {
                dynamics: 8,
                max_goal_dist: 10.0,
                ..CapabilityParams::default()
            },
            mixed: CapabilityParams {
                bounds_width: 36.0,
                bounds_height: 10.0,
                statics: 6,
                dynamics: 5,
                walls: 2,
                gap_width_min: 0.65,
                gap_width_max: 0.90,
                max_goal_dist: 40.0,
                ..CapabilityParams::default()
            },
        }
    }
}

impl SceneParams {
    pub fn for_capability(&self, cap: Capability) -> &CapabilityParams {
        match cap {
            Capability::Reaching => &self.reaching,
            Capability::Squeezing => &self.squeezing,
            Capability::Avoiding => &self.avoiding,
            Capability::Mixed => &self.mixed,
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut bad = Vec::new();
        for (name, p) in [
            ("scene.reaching", &self.reaching),
            ("scene.squeezing", &self.squeezing),
            ("scene.avoiding", &self.avoiding),
            ("scene.mixed", &self.mixed),
        ] {
            if p.bounds_width <= 2.0 * ROBOT_HALF.x || p.bounds_height <= 2.0 * ROBOT_HALF.x {
                bad.push(format!("{name}: bounds too small for the robot footprint"));
            }
            if p.gap_width_min < ROBOT_WIDTH {
                bad.push(format!(
                    "{name}: gap_width_min {} below robot width {ROBOT_WIDTH}",
                    p.gap_width_min
                ));
            }
            if p.gap_width_max < p.gap_width_min {
                bad.push(format!("{name}: gap_width_max < gap_width_min"));
            }
            if p.dynamic_speed_min <= 0.0 || p.dynamic_speed_max < p.dynamic_speed_min {
                bad.push(format!("{name}: dynamic speed range invalid"));
            }
            if p.max_goal_dist <= 0.0 || p.min_goal_dist < 0.0 || p.min_goal_dist > p.max_goal_dist
            {
                bad.push(format!("{name}: goal distance range invalid"));
            }
        }
        bad
    }
}

// Footprint size ranges for generated obstacles, by role.
const STATIC_CIRCLE_R: (f64, f64) = (0.25, 0.80);
const STATIC_RECT_HALF: (f64, f64) = (0.25, 0.90);
const STATIC_POLE_HALFLEN: (f64, f64) = (0.50, 1.50);
const STATIC_POLE_R: (f64, f64) = (0.08, 0.20);
const PILLAR_R: (f64, f64) = (0.15, 0.40);
const DYNAMIC_CIRCLE_R: (f64, f64) = (0.15, 0.45);
const DYNAMIC_RECT_HALF: (f64, f64) = (0.15, 0.35);
const WALL_THICKNESS: f64 = 0.15;
/// Keep pillars away from walls so gaps stay traversable.
const WALL_CLEARANCE: f64 = 1.0;
/// Minimum spacing between placed obstacle boundaries.
const OBSTACLE_SPACING: f64 = 0.10;

fn uniform(rng: &mut ChaCha8Rng, range: (f64, f64)) -> f64 {
    rng.gen_range(range.0..=range.1)
}

fn random_static_shape(rng: &mut ChaCha8Rng) -> ObstacleShape {
    match rng.gen_range(0..3u8) {
        0 => ObstacleShape::Circle {
            radius: uniform(rng, STATIC_CIRCLE_R),
        },
        1 => ObstacleShape::Rectangle {
            half: Vec2::new(uniform(rng, STATIC_RECT_HALF), uniform(rng, STATIC_RECT_HALF)),
            heading: rng.gen_range(-std::f64::consts::PI..=std::f64::consts::PI),
        },
        _ => {
            let dir = Vec2::from_angle(rng.gen_range(-std::f64::consts::PI..=std::f64::consts::PI));
            ObstacleShape::Capsule {
                half_axis: dir * uniform(rng, STATIC_POLE_HALFLEN),
                radius: uniform(rng, STATIC_POLE_R),
            }
        }
    }
}

fn random_pillar_shape(rng: &mut ChaCha8Rng) -> ObstacleShape {
    if rng.gen_bool(0.7) {
        ObstacleShape::Circle {
            radius: uniform(rng, PILLAR_R),
        }
    } else {
        ObstacleShape::Rectangle {
            half: Vec2::new(uniform(rng, PILLAR_R), uniform(rng, PILLAR_R)),
            heading: rng.gen_range(-std::f64::consts::PI..=std::f64::consts::PI),
        }
    }
}

fn random_dynamic_shape(rng: &mut ChaCha8Rng) -> ObstacleShape {
    match rng.gen_range(0..3u8) {
        0 => ObstacleShape::Circle {
            radius: uniform(rng, DYNAMIC_CIRCLE_R),
        },
        1 => ObstacleShape::Rectangle {
            half: Vec2::new(uniform(rng, DYNAMIC_RECT_HALF), uniform(rng, DYNAMIC_RECT_HALF)),
            heading: rng.gen_range(-std::f64::consts::PI..=std::f64::consts::PI),
        },
        _ => {
            let dir = Vec2::from_angle(rng.gen_range(-std::f64::consts::PI..=std::f64::consts::PI));
            ObstacleShape::Capsule {
                half_axis: dir * rng.gen_range(0.3..=0.6),
                radius: rng.gen_range(0.08..=0.15),
            }
        }
    }
}

/// Minimum boundary distance between two colliders (coarse; used only to
/// enforce spacing between generated obstacles).
fn collider_gap(a: &Collider, b: &Collider) -> f64 {
    use crate::geom::{dist_point_segment, dist_segment_segment};
    match (*a, *b) {
        (Collider::Circle { center: c1, radius: r1 }, Collider::Circle { center: c2, radius: r2 }) => {
            c1.dist(c2) - r1 - r2
        }
        (Collider::Circle { center, radius }, Collider::Rect(r))
        | (Collider::Rect(r), Collider::Circle { center, radius }) => {
            r.closest_point(center).dist(center) - radius
        }
        (Collider::Circle { center, radius }, Collider::Capsule { a, b, radius: cr })
        | (Collider::Capsule { a, b, radius: cr }, Collider::Circle { center, radius }) => {
            dist_point_segment(center, a, b) - radius - cr
        }
        (Collider::Capsule { a: a1, b: b1, radius: r1 }, Collider::Capsule { a: a2, b: b2, radius: r2 }) => {
            dist_segment_segment(a1, b1, a2, b2) - r1 - r2
        }
        (Collider::Rect(r1), Collider::Rect(r2)) => {
            if crate::geom::rect_intersects_rect(&r1, &r2) {
                return -1.0;
            }
            let c1 = r1.corners();
            let c2 = r2.corners();
            let mut d = f64::INFINITY;
            for i in 0..4 {
                for j in 0..4 {
                    d = d.min(dist_segment_segment(
                        c1[i],
                        c1[(i + 1) % 4],
                        c2[j],
                        c2[(j + 1) % 4],
                    ));
                }
            }
            d
        }
        (Collider::Rect(r), Collider::Capsule { a, b, radius })
        | (Collider::Capsule { a, b, radius }, Collider::Rect(r)) => {
            if crate::geom::rect_intersects_capsule(&r, a, b, radius) {
                return -1.0;
            }
            let c = r.corners();
            let mut d = f64::INFINITY;
            for i in 0..4 {
                d = d.min(dist_segment_segment(a, b, c[i], c[(i + 1) % 4]));
            }
            d - radius
        }
    }
}

struct Placer<'a> {
    bounds: Aabb,
    placed: Vec<Collider>,
    walls: &'a [WallSegment],
    attempts: usize,
}

impl<'a> Placer<'a> {
    fn new(bounds: Aabb, walls: &'a [WallSegment]) -> Self {
        Placer {
            bounds,
            placed: Vec::new(),
            walls,
            attempts: 0,
        }
    }

    /// Place one obstacle with its center inside `region`, keeping spacing
    /// from earlier placements and clearance from walls.
    fn place(
        &mut self,
        rng: &mut ChaCha8Rng,
        region: Aabb,
        mut shape_fn: impl FnMut(&mut ChaCha8Rng) -> ObstacleShape,
        what: &str,
    ) -> Result<Obstacle> {
        loop {
            self.attempts += 1;
            if self.attempts > N_MAX_ATTEMPTS {
                return Err(Error::Generation {
                    constraint: format!("{what}: no in-bounds non-overlapping placement"),
                    attempts: N_MAX_ATTEMPTS,
                });
            }
            let shape = shape_fn(rng);
            let center = Vec2::new(
                rng.gen_range(region.min.x..=region.max.x),
                rng.gen_range(region.min.y..=region.max.y),
            );
            let ob = Obstacle { shape, center };
            let br = ob.bounding_radius();
            let inner = self.bounds.shrunk(br);
            if inner.min.x > inner.max.x || inner.min.y > inner.max.y || !inner.contains(center) {
                continue;
            }
            let collider = ob.collider();
            if self
                .placed
                .iter()
                .any(|c| collider_gap(c, &collider) < OBSTACLE_SPACING)
            {
                continue;
            }
            if self.walls.iter().any(|w| {
                let Collider::Rect(r) = w.collider() else {
                    unreachable!()
                };
                collider_gap(&Collider::Rect(r), &collider) < WALL_CLEARANCE
            }) {
                continue;
            }
            self.placed.push(collider);
            return Ok(ob);
        }
    }
}

/// Build a vertical wall at `x` spanning the bounds' full height, pierced by
/// one gap. The gap is returned as (low y, high y) of the opening.
fn wall_with_gap(
    bounds: Aabb,
    x: f64,
    gap_range: (f64, f64),
    rng: &mut ChaCha8Rng,
) -> (Vec<WallSegment>, (f64, f64)) {
    let gap = uniform(rng, gap_range);
    let margin = gap / 2.0 + 0.5;
    let cy = rng.gen_range(bounds.min.y + margin..=bounds.max.y - margin);
    let lo = cy - gap / 2.0;
    let hi = cy + gap / 2.0;
    let segs = vec![
        WallSegment {
            start: Vec2::new(x, bounds.min.y),
            end: Vec2::new(x, lo),
            thickness: WALL_THICKNESS,
        },
        WallSegment {
            start: Vec2::new(x, hi),
            end: Vec2::new(x, bounds.max.y),
            thickness: WALL_THICKNESS,
        },
    ];
    (segs, (lo, hi))
}

/// Deterministically generate a scene for `capability`.
pub fn generate_scene(capability: Capability, seed: u64, params: &SceneParams) -> Result<Scene> {
    let violations = params.validate();
    if !violations.is_empty() {
        return Err(Error::Config { keys: violations });
    }
    let p = params.for_capability(capability);
    let bounds = Aabb::centered(p.bounds_width, p.bounds_height);
    let mut rng = rng::stream(seed, "scene", capability.code() as u64);

    let mut walls: Vec<WallSegment> = Vec::new();
    let mut statics: Vec<Obstacle> = Vec::new();
    let mut dynamics: Vec<DynamicObstacle> = Vec::new();

    match capability {
        Capability::Reaching => {
            let mut placer = Placer::new(bounds, &[]);
            for _ in 0..p.statics {
                statics.push(placer.place(&mut rng, bounds, random_static_shape, "static obstacle")?);
            }
        }
        Capability::Squeezing => {
            // Full-height walls split the arena; start/goal sampling puts the
            // robot on opposite sides so every episode traverses the gaps.
            let w = bounds.width();
            for i in 0..p.walls {
                let frac = (i as f64 + 1.0) / (p.walls as f64 + 1.0);
                let x = bounds.min.x + frac * w + rng.gen_range(-0.08_f64..=0.08) * w;
                let (segs, _) = wall_with_gap(bounds, x, (p.gap_width_min, p.gap_width_max), &mut rng);
                walls.extend(segs);
            }
            let mut placer = Placer::new(bounds, &walls);
            for _ in 0..p.statics {
                statics.push(placer.place(&mut rng, bounds, random_pillar_shape, "pillar")?);
            }
        }
        Capability::Avoiding => {
            let mut placer = Placer::new(bounds, &[]);
            for _ in 0..p.statics {
                statics.push(placer.place(&mut rng, bounds, random_static_shape, "static obstacle")?);
            }
            for _ in 0..p.dynamics {
                let body = placer.place(&mut rng, bounds, random_dynamic_shape, "dynamic obstacle")?;
                let speed = rng.gen_range(p.dynamic_speed_min..=p.dynamic_speed_max);
                let waypoint = Vec2::new(
                    rng.gen_range(bounds.min.x..=bounds.max.x),
                    rng.gen_range(bounds.min.y..=bounds.max.y),
                );
                dynamics.push(DynamicObstacle {
                    body,
                    speed,
                    waypoint,
                });
            }
        }
        Capability::Mixed => {
            // Three sequential zones: squeeze corridor, static clutter,
            // dynamic field. Gap difficulty is deliberately reduced.
            let w = bounds.width();
            let x0 = bounds.min.x;
            for i in 0..p.walls {
                let frac = 0.14 + 0.12 * i as f64;
                let (segs, _) =
                    wall_with_gap(bounds, x0 + frac * w, (p.gap_width_min, p.gap_width_max), &mut rng);
                walls.extend(segs);
            }
            let static_zone = Aabb::new(
                Vec2::new(x0 + 0.40 * w, bounds.min.y),
                Vec2::new(x0 + 0.62 * w, bounds.max.y),
            );
            let dynamic_zone = Aabb::new(
                Vec2::new(x0 + 0.68 * w, bounds.min.y),
                Vec2::new(x0 + 0.95 * w, bounds.max.y),
            );
            let mut placer = Placer::new(bounds, &walls);
            for _ in 0..p.statics {
                statics.push(placer.place(&mut rng, static_zone, random_pillar_shape, "static obstacle")?);
            }
            for _ in 0..p.dynamics {
                let body =
                    placer.place(&mut rng, dynamic_zone, random_dynamic_shape, "dynamic obstacle")?;
                let speed = rng.gen_range(p.dynamic_speed_min..=p.dynamic_speed_max);
                let waypoint = Vec2::new(
                    rng.gen_range(dynamic_zone.min.x..=dynamic_zone.max.x),
                    rng.gen_range(dynamic_zone.min.y..=dynamic_zone.max.y),
                );
                dynamics.push(DynamicObstacle {
                    body,
                    speed,
                    waypoint,
                });
            }
        }
    }

    if capability == Capability::Avoiding && dynamics.is_empty() {
        return Err(Error::Generation {
            constraint: "avoiding scene requires at least one dynamic obstacle".into(),
            attempts: 0,
        });
    }
    if capability == Capability::Squeezing && walls.is_empty() {
        return Err(Error::Generation {
            constraint: "squeezing scene requires at least one wall with a gap".into(),
            attempts: 0,
        });
    }

    Ok(Scene {
        bounds,
        statics,
        dynamics,
        walls,
        capability,
        seed,
    })
}

/// Episode-sampling knobs (derived from sim + scene config).
#[derive(Debug, Clone, Copy)]
pub struct EpisodeParams {
    pub max_goal_dist: f64,
    pub min_goal_dist: f64,
    pub timeout: f64,
    /// Required clearance around start pose and goal.
    pub clearance: f64,
}

impl EpisodeParams {
    pub fn new(p: &CapabilityParams, timeout: f64) -> Self {
        EpisodeParams {
            max_goal_dist: p.max_goal_dist,
            min_goal_dist: p.min_goal_dist,
            timeout,
            clearance: 0.05,
        }
    }
}

fn robot_rect(pos: Vec2, yaw: f64, inflate: f64) -> OrientedRect {
    OrientedRect::new(pos, ROBOT_HALF + Vec2::new(inflate, inflate), yaw)
}

/// A pose is free when the (inflated) footprint stays in bounds and clear of
/// every collider, dynamics included.
pub fn pose_is_free(scene: &Scene, pos: Vec2, yaw: f64, clearance: f64) -> bool {
    let rect = robot_rect(pos, yaw, clearance);
    if !rect.corners().iter().all(|c| scene.bounds.contains(*c)) {
        return false;
    }
    !scene.colliders().any(|c| rect_intersects(&rect, &c))
}

fn point_is_free(scene: &Scene, p: Vec2, radius: f64) -> bool {
    if !scene.bounds.shrunk(radius).contains(p) {
        return false;
    }
    !scene.colliders().any(|c| disc_intersects(p, radius, &c))
}

/// Capability-specific sampling regions. Squeezing and mixed episodes pin the
/// start left of the first wall and the goal right of the last so every
/// episode crosses the gaps.
fn sample_regions(scene: &Scene) -> (Aabb, Aabb) {
    let b = scene.bounds;
    match scene.capability {
        Capability::Squeezing if !scene.walls.is_empty() => {
            let min_x = scene
                .walls
                .iter()
                .map(|w| w.start.x.min(w.end.x))
                .fold(f64::INFINITY, f64::min);
            let max_x = scene
                .walls
                .iter()
                .map(|w| w.start.x.max(w.end.x))
                .fold(f64::NEG_INFINITY, f64::max);
            (
                Aabb::new(b.min, Vec2::new(min_x - 1.0, b.max.y)),
                Aabb::new(Vec2::new(max_x + 1.0, b.min.y), b.max),
            )
        }
        Capability::Mixed => {
            let w = b.width();
            (
                Aabb::new(b.min, Vec2::new(b.min.x + 0.10 * w, b.max.y)),
                Aabb::new(Vec2::new(b.max.x - 0.10 * w, b.min.y), b.max),
            )
        }
        _ => (b, b),
    }
}

/// Sample a collision-free start pose and goal for `scene`.
pub fn sample_episode(scene: &Scene, seed: u64, params: &EpisodeParams) -> Result<EpisodeSpec> {
    let mut rng = rng::stream(seed, "episode", scene.seed);
    let (start_region, goal_region) = sample_regions(scene);
    let goal_clear_radius = ROBOT_HALF.norm() + params.clearance;

    for _ in 0..N_MAX_ATTEMPTS {
        let pos = Vec2::new(
            rng.gen_range(start_region.min.x..=start_region.max.x),
            rng.gen_range(start_region.min.y..=start_region.max.y),
        );
        let yaw = rng.gen_range(-std::f64::consts::PI..=std::f64::consts::PI);
        if !pose_is_free(scene, pos, yaw, params.clearance) {
            continue;
        }
        let goal = Vec2::new(
            rng.gen_range(goal_region.min.x..=goal_region.max.x),
            rng.gen_range(goal_region.min.y..=goal_region.max.y),
        );
        let d = pos.dist(goal);
        if d > params.max_goal_dist || d < params.min_goal_dist {
            continue;
        }
        if !point_is_free(scene, goal, goal_clear_radius) {
            continue;
        }
        return Ok(EpisodeSpec {
            scene: scene.clone(),
            start: Pose { pos, yaw },
            goal,
            timeout: params.timeout,
        });
    }
    Err(Error::Sampling {
        constraint: "no collision-free start/goal pair within the distance cap".into(),
        attempts: N_MAX_ATTEMPTS,
    })
}

/// Advance every dynamic obstacle by `dt` toward its waypoint. Arrivals snap
/// to the waypoint and draw a fresh uniform in-bounds target. Statics and
/// walls are untouched; the input scene is not mutated.
pub fn step_dynamics(scene: &Scene, dt: f64, rng: &mut ChaCha8Rng) -> Scene {
    debug_assert!(dt > 0.0);
    let mut out = scene.clone();
    for d in &mut out.dynamics {
        let to_wp = d.waypoint - d.body.center;
        let dist = to_wp.norm();
        let step = d.speed * dt;
        if dist <= step {
            d.body.center = d.waypoint;
            d.waypoint = Vec2::new(
                rng.gen_range(scene.bounds.min.x..=scene.bounds.max.x),
                rng.gen_range(scene.bounds.min.y..=scene.bounds.max.y),
            );
        } else {
            d.body.center = d.body.center + to_wp * (step / dist);
        }
    }
    out
}

const SCENE_MAGIC: &[u8; 8] = b"CAPSCN01";
const SCENE_VERSION: u32 = 1;

/// Serialize a scene to the versioned blob embedded in benchmark manifests.
pub fn scene_to_blob(scene: &Scene) -> Vec<u8> {
    let body = serde_json::to_vec(scene).expect("scene serializes");
    let mut out = Vec::with_capacity(body.len() + 20);
    out.extend_from_slice(SCENE_MAGIC);
    out.extend_from_slice(&SCENE_VERSION.to_le_bytes());
    out.extend_from_slice(&(body.len() as u64).to_le_bytes());
    out.extend_from_slice(&body);
    out
}

pub fn scene_from_blob(blob: &[u8]) -> Result<Scene> {
    if blob.len() < 20 || &blob[..8] != SCENE_MAGIC {
        return Err(Error::Format {
            offset: 0,
            reason: "bad scene blob magic".into(),
        });
    }
    let version = u32::from_le_bytes(blob[8..12].try_into().unwrap());
    if version != SCENE_VERSION {
        return Err(Error::Format {
            offset: 8,
            reason: format!("unsupported scene blob version {version}"),
        });
    }
    let len = u64::from_le_bytes(blob[12..20].try_into().unwrap()) as usize;
    if blob.len() < 20 + len {
        return Err(Error::Format {
            offset: 20,
            reason: format!("scene blob truncated: need {len} payload bytes"),
        });
    }
    let scene: Scene = serde_json::from_slice(&blob[20..20 + len])?;
    Ok(scene)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> SceneParams {
        SceneParams::default()
    }

    #[test]
    fn zero_density_reaching_is_empty() {
        let mut p = params();
        p.reaching.statics = 0;
        let s = generate_scene(Capability::Reaching, 7, &p).unwrap();
        assert!(s.statics.is_empty());
        assert!(s.dynamics.is_empty());
        assert!(s.walls.is_empty());
    }

    #[test]
    fn avoiding_speeds_in_range() {
        let s = generate_scene(Capability::Avoiding, 3, &params()).unwrap();
        assert!(!s.dynamics.is_empty());
        for d in &s.dynamics {
            assert!(d.speed >= 0.5 && d.speed <= 1.5, "speed {}", d.speed);
        }
    }

    /// Geometric gap oracle: walls in a squeezing scene are collinear
    /// verticals; the opening is the y-distance between facing segment ends.
    #[test]
    fn squeezing_gaps_measured_geometrically() {
        let s = generate_scene(Capability::Squeezing, 11, &params()).unwrap();
        let mut by_x: std::collections::BTreeMap<i64, Vec<(f64, f64)>> = Default::default();
        for w in &s.walls {
            assert_eq!(w.start.x, w.end.x, "squeezing walls are vertical");
            let key = (w.start.x * 1e6).round() as i64;
            let (lo, hi) = (w.start.y.min(w.end.y), w.start.y.max(w.end.y));
            by_x.entry(key).or_default().push((lo, hi));
        }
        let mut gaps = 0;
        for (_, mut segs) in by_x {
            segs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            for pair in segs.windows(2) {
                let gap = pair[1].0 - pair[0].1;
                assert!(
                    (0.50..=0.90).contains(&gap),
                    "gap {gap} outside [0.50, 0.90]"
                );
                assert!(gap >= ROBOT_WIDTH);
                gaps += 1;
            }
        }
        assert!(gaps >= 1, "at least one wall gap expected");
    }

    #[test]
    fn generation_is_deterministic() {
        for cap in Capability::ALL {
            let a = generate_scene(cap, 42, &params()).unwrap();
            let b = generate_scene(cap, 42, &params()).unwrap();
            assert_eq!(a, b);
            let c = generate_scene(cap, 43, &params()).unwrap();
            assert_ne!(a, c);
        }
    }

    #[test]
    fn obstacles_inside_bounds() {
        for cap in Capability::ALL {
            let s = generate_scene(cap, 5, &params()).unwrap();
            for o in s.statics.iter().chain(s.dynamics.iter().map(|d| &d.body)) {
                let br = o.bounding_radius();
                assert!(s.bounds.shrunk(br).contains(o.center));
            }
        }
    }

    #[test]
    fn empty_scene_episode_always_succeeds() {
        let s = Scene::empty(Capability::Reaching, 20.0, 20.0);
        let p = EpisodeParams {
            max_goal_dist: 10.0,
            min_goal_dist: 0.0,
            timeout: 90.0,
            clearance: 0.05,
        };
        let e = sample_episode(&s, 1, &p).unwrap();
        assert!(e.start.pos.dist(e.goal) <= 10.0);
    }

    #[test]
    fn fully_blocked_scene_fails_sampling() {
        let mut s = Scene::empty(Capability::Reaching, 4.0, 4.0);
        s.statics.push(Obstacle {
            shape: ObstacleShape::Rectangle {
                half: Vec2::new(2.0, 2.0),
                heading: 0.0,
            },
            center: Vec2::ZERO,
        });
        let p = EpisodeParams {
            max_goal_dist: 10.0,
            min_goal_dist: 0.0,
            timeout: 90.0,
            clearance: 0.05,
        };
        match sample_episode(&s, 1, &p) {
            Err(Error::Sampling { .. }) => {}
            other => panic!("expected sampling error, got {other:?}"),
        }
    }

    #[test]
    fn avoiding_goal_distance_cap() {
        let s = generate_scene(Capability::Avoiding, 9, &params()).unwrap();
        let p = EpisodeParams::new(&params().avoiding, 90.0);
        let mut max_d: f64 = 0.0;
        for seed in 0..1000 {
            let e = sample_episode(&s, seed, &p).unwrap();
            max_d = max_d.max(e.start.pos.dist(e.goal));
        }
        assert!(max_d <= 10.0, "max start-goal distance {max_d}");
    }

    #[test]
    fn dynamics_straight_line_advance() {
        let mut s = Scene::empty(Capability::Avoiding, 40.0, 40.0);
        s.dynamics.push(DynamicObstacle {
            body: Obstacle {
                shape: ObstacleShape::Circle { radius: 0.3 },
                center: Vec2::ZERO,
            },
            speed: 1.0,
            waypoint: Vec2::new(10.0, 0.0),
        });
        let mut rng = crate::rng::stream(0, "dyn", 0);
        let s2 = step_dynamics(&s, 0.1, &mut rng);
        let c = s2.dynamics[0].body.center;
        assert!((c.x - 0.1).abs() < 1e-12 && c.y.abs() < 1e-12, "{c:?}");
    }

    #[test]
    fn dynamics_at_waypoint_redraws() {
        let mut s = Scene::empty(Capability::Avoiding, 40.0, 40.0);
        s.dynamics.push(DynamicObstacle {
            body: Obstacle {
                shape: ObstacleShape::Circle { radius: 0.3 },
                center: Vec2::new(3.0, 4.0),
            },
            speed: 1.0,
            waypoint: Vec2::new(3.0, 4.0),
        });
        let mut rng = crate::rng::stream(0, "dyn", 0);
        let s2 = step_dynamics(&s, 0.1, &mut rng);
        assert_eq!(s2.dynamics[0].body.center, Vec2::new(3.0, 4.0));
        assert_ne!(s2.dynamics[0].waypoint, Vec2::new(3.0, 4.0));
    }

    #[test]
    fn dynamics_path_length_bounded() {
        let mut s = Scene::empty(Capability::Avoiding, 40.0, 40.0);
        s.dynamics.push(DynamicObstacle {
            body: Obstacle {
                shape: ObstacleShape::Circle { radius: 0.3 },
                center: Vec2::ZERO,
            },
            speed: 1.5,
            waypoint: Vec2::new(5.0, 5.0),
        });
        let mut rng = crate::rng::stream(1, "dyn", 0);
        let mut cur = s.clone();
        let mut total = 0.0;
        for _ in 0..100 {
            let next = step_dynamics(&cur, 0.1, &mut rng);
            total += next.dynamics[0].body.center.dist(cur.dynamics[0].body.center);
            cur = next;
        }
        assert!(total <= 15.0 + 1e-9, "path length {total}");
    }

    #[test]
    fn per_step_displacement_is_speed_dt() {
        let s = generate_scene(Capability::Avoiding, 17, &params()).unwrap();
        let mut rng = crate::rng::stream(2, "dyn", 0);
        let mut cur = s;
        for _ in 0..50 {
            let next = step_dynamics(&cur, 0.1, &mut rng);
            for (a, b) in cur.dynamics.iter().zip(next.dynamics.iter()) {
                let moved = a.body.center.dist(b.body.center);
                let expect = a.speed * 0.1;
                assert!(
                    (moved - expect).abs() < 1e-9 || moved <= expect,
                    "moved {moved}, speed*dt {expect}"
                );
            }
            cur = next;
        }
    }

    #[test]
    fn scene_blob_round_trip() {
        let s = generate_scene(Capability::Mixed, 21, &params()).unwrap();
        let blob = scene_to_blob(&s);
        let back = scene_from_blob(&blob).unwrap();
        assert_eq!(s, back);
        assert!(scene_from_blob(&blob[..10]).is_err());
    }
}
