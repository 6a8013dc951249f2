//! Planar geometry: vectors, colliders, intersection tests, ray casting.
//!
//! Everything here is pure and allocation-free. Rectangle-vs-rectangle uses
//! separating-axis tests; circle and capsule cases reduce to closest-point
//! distances.

use serde::{Deserialize, Serialize};
use std::ops::{Add, Div, Mul, Neg, Sub};

/// 2D vector, f64 components, meters unless stated otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

pub const EPS: f64 = 1e-12;

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// Z component of the 3D cross product.
    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn dist(self, o: Vec2) -> f64 {
        (self - o).norm()
    }

    /// Unit vector; zero vector maps to zero.
    pub fn normalized(self) -> Vec2 {
        let n = self.norm();
        if n <= EPS {
            Vec2::ZERO
        } else {
            self / n
        }
    }

    /// Counterclockwise perpendicular.
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    /// Rotate counterclockwise by `angle` radians.
    pub fn rotated(self, angle: f64) -> Vec2 {
        let (s, c) = angle.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn from_angle(angle: f64) -> Vec2 {
        let (s, c) = angle.sin_cos();
        Vec2::new(c, s)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl Div<f64> for Vec2 {
    type Output = Vec2;
    fn div(self, s: f64) -> Vec2 {
        Vec2::new(self.x / s, self.y / s)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Wrap an angle to (−π, π].
pub fn normalize_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut r = a % two_pi;
    if r <= -std::f64::consts::PI {
        r += two_pi;
    } else if r > std::f64::consts::PI {
        r -= two_pi;
    }
    r
}

/// Axis-aligned rectangle, used for scene bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec2,
    pub max: Vec2,
}

impl Aabb {
    pub fn new(min: Vec2, max: Vec2) -> Self {
        debug_assert!(min.x <= max.x && min.y <= max.y);
        Aabb { min, max }
    }

    /// Centered box with the given full extents.
    pub fn centered(width: f64, height: f64) -> Self {
        let h = Vec2::new(width / 2.0, height / 2.0);
        Aabb { min: -h, max: h }
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    /// Shrink by `m` on every side (negative grows).
    pub fn shrunk(&self, m: f64) -> Aabb {
        Aabb {
            min: self.min + Vec2::new(m, m),
            max: self.max - Vec2::new(m, m),
        }
    }

    /// Distance along the ray (origin inside) to the boundary; `None` when
    /// the origin lies outside.
    pub fn ray_exit(&self, origin: Vec2, dir: Vec2) -> Option<f64> {
        if !self.contains(origin) {
            return None;
        }
        let mut t_exit = f64::INFINITY;
        for (o, d, lo, hi) in [
            (origin.x, dir.x, self.min.x, self.max.x),
            (origin.y, dir.y, self.min.y, self.max.y),
        ] {
            if d.abs() > EPS {
                let t1 = (lo - o) / d;
                let t2 = (hi - o) / d;
                t_exit = t_exit.min(t1.max(t2));
            }
        }
        if t_exit.is_finite() {
            Some(t_exit.max(0.0))
        } else {
            None
        }
    }
}

/// Rectangle with arbitrary heading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedRect {
    pub center: Vec2,
    /// Half extents along the rect's local x and y axes.
    pub half: Vec2,
    pub heading: f64,
}

impl OrientedRect {
    pub fn new(center: Vec2, half: Vec2, heading: f64) -> Self {
        OrientedRect {
            center,
            half,
            heading,
        }
    }

    /// World point expressed in the rect's local frame.
    pub fn to_local(&self, p: Vec2) -> Vec2 {
        (p - self.center).rotated(-self.heading)
    }

    pub fn corners(&self) -> [Vec2; 4] {
        let hx = Vec2::from_angle(self.heading) * self.half.x;
        let hy = Vec2::from_angle(self.heading).perp() * self.half.y;
        [
            self.center + hx + hy,
            self.center - hx + hy,
            self.center - hx - hy,
            self.center + hx - hy,
        ]
    }

    /// Closest point on (or in) the rect to a world point.
    pub fn closest_point(&self, p: Vec2) -> Vec2 {
        let l = self.to_local(p);
        let c = Vec2::new(l.x.clamp(-self.half.x, self.half.x), l.y.clamp(-self.half.y, self.half.y));
        self.center + c.rotated(self.heading)
    }

    pub fn contains(&self, p: Vec2) -> bool {
        let l = self.to_local(p);
        l.x.abs() <= self.half.x && l.y.abs() <= self.half.y
    }
}

/// Geometry-level view of any solid in the scene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Collider {
    Circle { center: Vec2, radius: f64 },
    Rect(OrientedRect),
    Capsule { a: Vec2, b: Vec2, radius: f64 },
}

/// Closest point to `p` on segment `ab`.
pub fn closest_on_segment(p: Vec2, a: Vec2, b: Vec2) -> Vec2 {
    let ab = b - a;
    let len_sq = ab.norm_sq();
    if len_sq <= EPS {
        return a;
    }
    let t = ((p - a).dot(ab) / len_sq).clamp(0.0, 1.0);
    a + ab * t
}

pub fn dist_point_segment(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    p.dist(closest_on_segment(p, a, b))
}

/// Minimum distance between segments `ab` and `cd` (0 when they cross).
pub fn dist_segment_segment(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> f64 {
    let r1 = b - a;
    let r2 = d - c;
    let denom = r1.cross(r2);
    if denom.abs() > EPS {
        let t = (c - a).cross(r2) / denom;
        let u = (c - a).cross(r1) / denom;
        if (0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&u) {
            return 0.0;
        }
    }
    dist_point_segment(a, c, d)
        .min(dist_point_segment(b, c, d))
        .min(dist_point_segment(c, a, b))
        .min(dist_point_segment(d, a, b))
}

/// Separating-axis test for two oriented rectangles.
pub fn rect_intersects_rect(r1: &OrientedRect, r2: &OrientedRect) -> bool {
    let c1 = r1.corners();
    let c2 = r2.corners();
    let axes = [
        Vec2::from_angle(r1.heading),
        Vec2::from_angle(r1.heading).perp(),
        Vec2::from_angle(r2.heading),
        Vec2::from_angle(r2.heading).perp(),
    ];
    for axis in axes {
        let (mut min1, mut max1) = (f64::INFINITY, f64::NEG_INFINITY);
        for p in c1 {
            let v = p.dot(axis);
            min1 = min1.min(v);
            max1 = max1.max(v);
        }
        let (mut min2, mut max2) = (f64::INFINITY, f64::NEG_INFINITY);
        for p in c2 {
            let v = p.dot(axis);
            min2 = min2.min(v);
            max2 = max2.max(v);
        }
        if min1 > max2 || min2 > max1 {
            return false;
        }
    }
    true
}

pub fn rect_intersects_circle(r: &OrientedRect, center: Vec2, radius: f64) -> bool {
    r.closest_point(center).dist(center) <= radius
}

/// Distance from segment `ab` to the rect boundary/interior.
fn dist_segment_rect(a: Vec2, b: Vec2, r: &OrientedRect) -> f64 {
    if r.contains(a) || r.contains(b) {
        return 0.0;
    }
    let c = r.corners();
    let mut d = f64::INFINITY;
    for i in 0..4 {
        d = d.min(dist_segment_segment(a, b, c[i], c[(i + 1) % 4]));
    }
    d
}

pub fn rect_intersects_capsule(r: &OrientedRect, a: Vec2, b: Vec2, radius: f64) -> bool {
    dist_segment_rect(a, b, r) <= radius
}

/// Does an oriented rectangle touch the collider?
pub fn rect_intersects(r: &OrientedRect, c: &Collider) -> bool {
    match *c {
        Collider::Circle { center, radius } => rect_intersects_circle(r, center, radius),
        Collider::Rect(ref o) => rect_intersects_rect(r, o),
        Collider::Capsule { a, b, radius } => rect_intersects_capsule(r, a, b, radius),
    }
}

/// Does a disc touch the collider? Used for goal-clearance checks.
pub fn disc_intersects(center: Vec2, radius: f64, c: &Collider) -> bool {
    match *c {
        Collider::Circle {
            center: oc,
            radius: or,
        } => center.dist(oc) <= radius + or,
        Collider::Rect(ref r) => rect_intersects_circle(r, center, radius),
        Collider::Capsule { a, b, radius: cr } => dist_point_segment(center, a, b) <= radius + cr,
    }
}

/// Smallest t ≥ 0 where `origin + t·dir` meets the circle; 0 when starting
/// inside.
pub fn ray_circle(origin: Vec2, dir: Vec2, center: Vec2, radius: f64) -> Option<f64> {
    let oc = origin - center;
    let b = oc.dot(dir);
    let c = oc.norm_sq() - radius * radius;
    if c <= 0.0 {
        return Some(0.0);
    }
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let t = -b - disc.sqrt();
    if t >= 0.0 {
        Some(t)
    } else {
        None
    }
}

/// Slab test against an oriented rectangle.
pub fn ray_rect(origin: Vec2, dir: Vec2, r: &OrientedRect) -> Option<f64> {
    let o = r.to_local(origin);
    let d = dir.rotated(-r.heading);
    let mut t_enter = f64::NEG_INFINITY;
    let mut t_exit = f64::INFINITY;
    for (oi, di, h) in [(o.x, d.x, r.half.x), (o.y, d.y, r.half.y)] {
        if di.abs() <= EPS {
            if oi.abs() > h {
                return None;
            }
        } else {
            let t1 = (-h - oi) / di;
            let t2 = (h - oi) / di;
            t_enter = t_enter.max(t1.min(t2));
            t_exit = t_exit.min(t1.max(t2));
        }
    }
    if t_enter > t_exit || t_exit < 0.0 {
        None
    } else {
        Some(t_enter.max(0.0))
    }
}

/// Intersection parameter of a ray with segment `ab`.
fn ray_segment(origin: Vec2, dir: Vec2, a: Vec2, b: Vec2) -> Option<f64> {
    let ab = b - a;
    let denom = dir.cross(ab);
    if denom.abs() <= EPS {
        return None;
    }
    let t = (a - origin).cross(ab) / denom;
    let u = (a - origin).cross(dir) / denom;
    if t >= 0.0 && (0.0..=1.0).contains(&u) {
        Some(t)
    } else {
        None
    }
}

pub fn ray_capsule(origin: Vec2, dir: Vec2, a: Vec2, b: Vec2, radius: f64) -> Option<f64> {
    if dist_point_segment(origin, a, b) <= radius {
        return Some(0.0);
    }
    let mut best: Option<f64> = None;
    let mut keep = |t: Option<f64>| {
        if let Some(t) = t {
            best = Some(best.map_or(t, |b: f64| b.min(t)));
        }
    };
    keep(ray_circle(origin, dir, a, radius));
    keep(ray_circle(origin, dir, b, radius));
    let n = (b - a).normalized().perp() * radius;
    keep(ray_segment(origin, dir, a + n, b + n));
    keep(ray_segment(origin, dir, a - n, b - n));
    best
}

/// Smallest non-negative hit parameter against any collider.
pub fn ray_collider(origin: Vec2, dir: Vec2, c: &Collider) -> Option<f64> {
    match *c {
        Collider::Circle { center, radius } => ray_circle(origin, dir, center, radius),
        Collider::Rect(ref r) => ray_rect(origin, dir, r),
        Collider::Capsule { a, b, radius } => ray_capsule(origin, dir, a, b, radius),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn angle_normalization_range() {
        assert_relative_eq!(normalize_angle(3.0 * std::f64::consts::PI), std::f64::consts::PI);
        assert_relative_eq!(normalize_angle(-std::f64::consts::PI), std::f64::consts::PI);
        assert_relative_eq!(normalize_angle(0.1), 0.1);
    }

    #[test]
    fn rect_circle_touching() {
        let r = OrientedRect::new(Vec2::ZERO, Vec2::new(0.35, 0.175), 0.0);
        assert!(rect_intersects_circle(&r, Vec2::new(0.6, 0.0), 0.5));
        assert!(!rect_intersects_circle(&r, Vec2::new(1.0, 0.0), 0.5));
    }

    #[test]
    fn sat_disjoint_and_overlapping() {
        let a = OrientedRect::new(Vec2::ZERO, Vec2::new(1.0, 0.5), 0.0);
        let b = OrientedRect::new(Vec2::new(2.5, 0.0), Vec2::new(1.0, 0.5), 0.3);
        assert!(!rect_intersects_rect(&a, &b));
        let c = OrientedRect::new(Vec2::new(1.2, 0.0), Vec2::new(1.0, 0.5), 1.0);
        assert!(rect_intersects_rect(&a, &c));
    }

    #[test]
    fn ray_hits_perpendicular_wall() {
        // Wall modeled as a long thin rect 2 m ahead.
        let wall = OrientedRect::new(Vec2::new(2.0, 0.0), Vec2::new(0.05, 50.0), 0.0);
        let t = ray_rect(Vec2::ZERO, Vec2::new(1.0, 0.0), &wall).unwrap();
        assert_relative_eq!(t, 1.95, epsilon = 1e-12);
    }

    #[test]
    fn ray_circle_from_inside_is_zero() {
        let t = ray_circle(Vec2::ZERO, Vec2::new(1.0, 0.0), Vec2::new(0.1, 0.0), 0.5).unwrap();
        assert_eq!(t, 0.0);
    }

    #[test]
    fn capsule_ray_side_hit() {
        // Vertical capsule centered at x=3.
        let t = ray_capsule(
            Vec2::ZERO,
            Vec2::new(1.0, 0.0),
            Vec2::new(3.0, -1.0),
            Vec2::new(3.0, 1.0),
            0.25,
        )
        .unwrap();
        assert_relative_eq!(t, 2.75, epsilon = 1e-12);
    }

    #[test]
    fn aabb_ray_exit() {
        let b = Aabb::centered(10.0, 10.0);
        let t = b.ray_exit(Vec2::new(1.0, 0.0), Vec2::new(1.0, 0.0)).unwrap();
        assert_relative_eq!(t, 4.0, epsilon = 1e-12);
        assert!(b.ray_exit(Vec2::new(9.0, 0.0), Vec2::new(1.0, 0.0)).is_none());
    }

    #[test]
    fn segment_distance_crossing_is_zero() {
        let d = dist_segment_segment(
            Vec2::new(-1.0, 0.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(0.0, -1.0),
            Vec2::new(0.0, 1.0),
        );
        assert_eq!(d, 0.0);
    }
}
