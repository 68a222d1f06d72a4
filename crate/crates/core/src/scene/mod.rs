//! Procedural synthetic scenes with analytic ray intersection.
//!
//! A scene is an axis-aligned room box containing a handful of convex
//! primitives (boxes and spheres). Surfaces carry procedural color fields
//! (checker plus a three-phase sinusoid of the surface coordinates) so that
//! renders contain both high- and low-frequency structure. Ray intersection
//! is closed-form, which makes RGB-D ground truth, scene-coordinate maps and
//! pose supervision exact.

use crate::geom::{CameraView, Pose, Vec3};
use crate::par;
use crate::rng::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("camera center {0:?} is not in the room's free space")]
    CameraOutsideFreeSpace([f64; 3]),
    #[error("primitive {0} is not strictly inside the room box")]
    PrimitiveOutsideRoom(usize),
    #[error("invalid near/far range: t_near {0} must be < t_far {1}")]
    BadRange(f64, f64),
    #[error("could not sample {0} free-space poses after {1} attempts")]
    PoseGeneration(usize, usize),
    #[error(transparent)]
    Geom(#[from] crate::geom::GeomError),
}

#[derive(Debug, Clone, Copy)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn contains(&self, p: Vec3, margin: f64) -> bool {
        p.x > self.min.x + margin
            && p.x < self.max.x - margin
            && p.y > self.min.y + margin
            && p.y < self.max.y - margin
            && p.z > self.min.z + margin
            && p.z < self.max.z - margin
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn half_extent(&self) -> Vec3 {
        (self.max - self.min) * 0.5
    }

    pub fn diagonal(&self) -> f64 {
        (self.max - self.min).norm()
    }

    /// Signed distance, negative inside.
    pub fn sdf(&self, p: Vec3) -> f64 {
        let c = self.center();
        let h = self.half_extent();
        let q = Vec3::new(
            (p.x - c.x).abs() - h.x,
            (p.y - c.y).abs() - h.y,
            (p.z - c.z).abs() - h.z,
        );
        let outside = Vec3::new(q.x.max(0.0), q.y.max(0.0), q.z.max(0.0)).norm();
        let inside = q.x.max(q.y).max(q.z).min(0.0);
        outside + inside
    }

    /// Slab intersection: (t_entry, t_exit) or None when the ray misses.
    fn slab(&self, o: Vec3, d: Vec3) -> Option<(f64, f64)> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for axis in 0..3 {
            let (ov, dv, lo, hi) = match axis {
                0 => (o.x, d.x, self.min.x, self.max.x),
                1 => (o.y, d.y, self.min.y, self.max.y),
                _ => (o.z, d.z, self.min.z, self.max.z),
            };
            if dv.abs() < 1e-15 {
                if ov < lo || ov > hi {
                    return None;
                }
                continue;
            }
            let (mut a, mut b) = ((lo - ov) / dv, (hi - ov) / dv);
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            t0 = t0.max(a);
            t1 = t1.min(b);
            if t0 > t1 {
                return None;
            }
        }
        Some((t0, t1))
    }
}

/// Procedural surface color: checker plus per-channel sinusoid of the
/// surface coordinates, clamped to [0,1].
#[derive(Debug, Clone, Copy)]
pub struct ColorField {
    pub base: [f64; 3],
    pub amp: [f64; 3],
    pub freq: f64,
    pub phase: [f64; 3],
    pub checker_cell: f64,
    pub checker_contrast: f64,
}

impl ColorField {
    pub fn eval(&self, u: f64, v: f64) -> [f64; 3] {
        let cell = self.checker_cell.max(1e-6);
        let parity = ((u / cell).floor() + (v / cell).floor()).rem_euclid(2.0);
        let checker = if parity < 1.0 { 0.5 } else { -0.5 } * self.checker_contrast;
        let mut out = [0.0; 3];
        for ch in 0..3 {
            let wave = (std::f64::consts::TAU * self.freq * (u + 0.618 * v) + self.phase[ch]).sin();
            out[ch] = (self.base[ch] + self.amp[ch] * wave + checker).clamp(0.0, 1.0);
        }
        out
    }

    fn random(rng: &mut Rng) -> Self {
        ColorField {
            base: [
                rng.range(0.3, 0.7),
                rng.range(0.3, 0.7),
                rng.range(0.3, 0.7),
            ],
            amp: [
                rng.range(0.1, 0.25),
                rng.range(0.1, 0.25),
                rng.range(0.1, 0.25),
            ],
            freq: rng.range(0.5, 3.0),
            phase: [
                rng.range(0.0, std::f64::consts::TAU),
                rng.range(0.0, std::f64::consts::TAU),
                rng.range(0.0, std::f64::consts::TAU),
            ],
            checker_cell: rng.range(0.15, 0.5),
            checker_contrast: rng.range(0.15, 0.4),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Shape {
    Box(Aabb),
    Sphere { center: Vec3, radius: f64 },
}

impl Shape {
    pub fn sdf(&self, p: Vec3) -> f64 {
        match self {
            Shape::Box(b) => b.sdf(p),
            Shape::Sphere { center, radius } => (p - *center).norm() - radius,
        }
    }

    fn contains(&self, p: Vec3, margin: f64) -> bool {
        self.sdf(p) < margin
    }

    /// Nearest intersection with the outside surface, t > eps.
    fn intersect(&self, o: Vec3, d: Vec3) -> Option<f64> {
        const EPS: f64 = 1e-9;
        match self {
            Shape::Box(b) => {
                let (t0, t1) = b.slab(o, d)?;
                if t0 > EPS {
                    Some(t0)
                } else if t1 > EPS {
                    // Origin inside the box: exit face.
                    Some(t1)
                } else {
                    None
                }
            }
            Shape::Sphere { center, radius } => {
                let oc = o - *center;
                let b = oc.dot(d);
                let c = oc.dot(oc) - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                let t0 = -b - sq;
                let t1 = -b + sq;
                if t0 > EPS {
                    Some(t0)
                } else if t1 > EPS {
                    Some(t1)
                } else {
                    None
                }
            }
        }
    }

    /// Deterministic 2-D surface coordinates of a point on this shape.
    fn surface_uv(&self, p: Vec3) -> (f64, f64) {
        match self {
            Shape::Box(b) => box_face_uv(b, p),
            Shape::Sphere { center, radius } => {
                let q = p - *center;
                let theta = q.z.atan2(q.x);
                let phi = (q.y / radius.max(1e-12)).clamp(-1.0, 1.0).acos();
                (theta * radius, phi * radius)
            }
        }
    }

    /// A deterministic point on the surface, for look-at targets.
    fn surface_point(&self, rng: &mut Rng) -> Vec3 {
        match self {
            Shape::Box(b) => {
                let h = b.half_extent();
                let c = b.center();
                let face = rng.below(6);
                let (u, v) = (rng.range(-1.0, 1.0), rng.range(-1.0, 1.0));
                match face {
                    0 => Vec3::new(c.x + h.x, c.y + u * h.y, c.z + v * h.z),
                    1 => Vec3::new(c.x - h.x, c.y + u * h.y, c.z + v * h.z),
                    2 => Vec3::new(c.x + u * h.x, c.y + h.y, c.z + v * h.z),
                    3 => Vec3::new(c.x + u * h.x, c.y - h.y, c.z + v * h.z),
                    4 => Vec3::new(c.x + u * h.x, c.y + v * h.y, c.z + h.z),
                    _ => Vec3::new(c.x + u * h.x, c.y + v * h.y, c.z - h.z),
                }
            }
            Shape::Sphere { center, radius } => {
                let z = rng.range(-1.0, 1.0);
                let t = rng.range(0.0, std::f64::consts::TAU);
                let r = (1.0 - z * z).max(0.0).sqrt();
                *center + Vec3::new(r * t.cos(), z, r * t.sin()) * *radius
            }
        }
    }
}

/// In-plane coordinates of the box face nearest to `p`.
fn box_face_uv(b: &Aabb, p: Vec3) -> (f64, f64) {
    let c = b.center();
    let h = b.half_extent();
    let rel = [
        (p.x - c.x).abs() / h.x.max(1e-12),
        (p.y - c.y).abs() / h.y.max(1e-12),
        (p.z - c.z).abs() / h.z.max(1e-12),
    ];
    let axis = if rel[0] >= rel[1] && rel[0] >= rel[2] {
        0
    } else if rel[1] >= rel[2] {
        1
    } else {
        2
    };
    match axis {
        0 => (p.y, p.z),
        1 => (p.x, p.z),
        _ => (p.x, p.y),
    }
}

#[derive(Debug, Clone)]
pub struct Primitive {
    pub shape: Shape,
    pub color: ColorField,
}

/// Room box, interior primitives and the sampling range along rays.
#[derive(Debug, Clone)]
pub struct Scene {
    pub room: Aabb,
    pub wall_color: ColorField,
    pub primitives: Vec<Primitive>,
    pub t_near: f64,
    pub t_far: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct Hit {
    pub t: f64,
    pub point: Vec3,
    pub color: [f64; 3],
}

/// Analytic color and depth images for one camera, plus validity via depth
/// (0 marks invalid, valid depths lie in [t_near, t_far]).
#[derive(Debug, Clone)]
pub struct RgbdFrame {
    pub camera: CameraView,
    /// Row-major [h*w] RGB in [0,1].
    pub color: Vec<[f64; 3]>,
    /// Row-major [h*w] distance along the unit ray, meters. 0 = invalid.
    pub depth: Vec<f64>,
}

pub enum PoseMode {
    /// Smooth seeded loop through the room interior.
    Trajectory,
    /// Independent uniform free-space placements.
    UniformFreeSpace,
}

impl Scene {
    pub fn new(
        room: Aabb,
        wall_color: ColorField,
        primitives: Vec<Primitive>,
        t_near: f64,
        t_far: f64,
    ) -> Result<Self, SceneError> {
        if t_near >= t_far || t_near <= 0.0 {
            return Err(SceneError::BadRange(t_near, t_far));
        }
        for (i, prim) in primitives.iter().enumerate() {
            let inside = match prim.shape {
                Shape::Box(b) => room.contains(b.min, 1e-6) && room.contains(b.max, 1e-6),
                Shape::Sphere { center, radius } => room.contains(center, radius + 1e-6),
            };
            if !inside {
                return Err(SceneError::PrimitiveOutsideRoom(i));
            }
        }
        Ok(Scene {
            room,
            wall_color,
            primitives,
            t_near,
            t_far,
        })
    }

    /// Procedurally generated desk scene: room of the given extents with
    /// `n_primitives` random interior boxes and spheres.
    pub fn generate(extents: Vec3, n_primitives: usize, seed: u64) -> Result<Self, SceneError> {
        let mut rng = Rng::derive(seed, "scene-generate");
        let half = extents * 0.5;
        let room = Aabb {
            min: -half,
            max: half,
        };
        let mut primitives = Vec::with_capacity(n_primitives);
        for _ in 0..n_primitives {
            let color = ColorField::random(&mut rng);
            let margin = 0.35;
            let center = Vec3::new(
                rng.range(room.min.x + margin, room.max.x - margin),
                rng.range(room.min.y + margin, room.max.y - margin),
                rng.range(room.min.z + margin, room.max.z - margin),
            );
            let shape = if rng.uniform() < 0.5 {
                let he = Vec3::new(
                    rng.range(0.1, 0.3),
                    rng.range(0.1, 0.3),
                    rng.range(0.1, 0.3),
                );
                Shape::Box(Aabb {
                    min: center - he,
                    max: center + he,
                })
            } else {
                Shape::Sphere {
                    center,
                    radius: rng.range(0.1, 0.3),
                }
            };
            primitives.push(Primitive { shape, color });
        }
        Scene::new(
            room,
            ColorField::random(&mut rng),
            primitives,
            0.05,
            10.0,
        )
    }

    pub fn diagonal(&self) -> f64 {
        self.room.diagonal()
    }

    /// True when `p` lies inside the room and outside every primitive.
    pub fn in_free_space(&self, p: Vec3, margin: f64) -> bool {
        self.room.contains(p, margin)
            && self.primitives.iter().all(|q| !q.shape.contains(p, margin))
    }

    /// Free-space signed distance: positive in free space, zero on surfaces.
    pub fn free_space_sdf(&self, p: Vec3) -> f64 {
        let c = self.room.center();
        let h = self.room.half_extent();
        let wall = (h.x - (p.x - c.x).abs())
            .min(h.y - (p.y - c.y).abs())
            .min(h.z - (p.z - c.z).abs());
        self.primitives
            .iter()
            .fold(wall, |acc, prim| acc.min(prim.shape.sdf(p)))
    }

    /// Nearest surface along the ray, or None when the origin is outside the
    /// room and the ray escapes.
    pub fn intersect(&self, o: Vec3, d: Vec3) -> Option<Hit> {
        debug_assert!((d.norm() - 1.0).abs() < 1e-9, "ray direction must be unit");
        let mut best: Option<(f64, usize)> = None; // (t, prim index or usize::MAX for wall)
        for (i, prim) in self.primitives.iter().enumerate() {
            if let Some(t) = prim.shape.intersect(o, d) {
                if best.map_or(true, |(bt, _)| t < bt) {
                    best = Some((t, i));
                }
            }
        }
        if let Some((t0, t1)) = self.room.slab(o, d) {
            // From inside the room the relevant wall is the exit face.
            let wall_t = if t0 > 1e-9 { t0 } else { t1 };
            if wall_t > 1e-9 && best.map_or(true, |(bt, _)| wall_t < bt) {
                best = Some((wall_t, usize::MAX));
            }
        }
        best.map(|(t, idx)| {
            let point = o + d * t;
            let (field, uv) = if idx == usize::MAX {
                (&self.wall_color, box_face_uv(&self.room, point))
            } else {
                let prim = &self.primitives[idx];
                (&prim.color, prim.shape.surface_uv(point))
            };
            Hit {
                t,
                point,
                color: field.eval(uv.0, uv.1),
            }
        })
    }

    /// Analytic RGB-D plus the scene-coordinate map (o + depth*d per valid
    /// pixel; invalid entries are zero with depth 0).
    pub fn render_gt(&self, camera: &CameraView) -> Result<(RgbdFrame, Vec<[f64; 3]>), SceneError> {
        let center = camera.pose.center();
        if !self.in_free_space(center, 0.0) {
            return Err(SceneError::CameraOutsideFreeSpace(center.to_array()));
        }
        let (w, h) = (camera.width, camera.height);
        let rows = par::map_collect(h, |py| {
            let mut color = vec![[0.0; 3]; w];
            let mut depth = vec![0.0; w];
            let mut coords = vec![[0.0; 3]; w];
            for px in 0..w {
                let (o, d) = camera
                    .ray_for_pixel(px as f64, py as f64)
                    .expect("pixel in bounds");
                if let Some(hit) = self.intersect(o, d) {
                    color[px] = hit.color;
                    if hit.t >= self.t_near && hit.t <= self.t_far {
                        depth[px] = hit.t;
                        coords[px] = hit.point.to_array();
                    }
                }
            }
            (color, depth, coords)
        });
        let mut color = Vec::with_capacity(w * h);
        let mut depth = Vec::with_capacity(w * h);
        let mut coords = Vec::with_capacity(w * h);
        for (c, d, q) in rows {
            color.extend(c);
            depth.extend(d);
            coords.extend(q);
        }
        Ok((
            RgbdFrame {
                camera: *camera,
                color,
                depth,
            },
            coords,
        ))
    }

    /// Deterministic camera poses in free space looking at scene surfaces.
    pub fn sample_poses(
        &self,
        intrinsics: crate::geom::Intrinsics,
        width: usize,
        height: usize,
        count: usize,
        mode: PoseMode,
        z_min: f64,
        rng: &mut Rng,
    ) -> Result<Vec<CameraView>, SceneError> {
        assert!(count >= 1, "count must be at least 1");
        let margin = 0.12;
        let c = self.room.center();
        let h = self.room.half_extent();
        let mut out = Vec::with_capacity(count);
        let max_attempts = 1000 * count.max(8);
        let mut attempts = 0;

        match mode {
            PoseMode::Trajectory => {
                let phase = rng.range(0.0, std::f64::consts::TAU);
                let height_phase = rng.range(0.0, std::f64::consts::TAU);
                let mut i = 0usize;
                let mut jitter = 0.0;
                while out.len() < count {
                    attempts += 1;
                    if attempts > max_attempts {
                        return Err(SceneError::PoseGeneration(count, attempts));
                    }
                    let theta =
                        phase + std::f64::consts::TAU * (i as f64 + jitter) / count.max(8) as f64;
                    let eye = Vec3::new(
                        c.x + 0.55 * h.x * theta.cos(),
                        c.y + 0.35 * h.y * (2.0 * theta + height_phase).sin(),
                        c.z + 0.55 * h.z * theta.sin(),
                    );
                    // Look across the room, through the center toward the far wall.
                    let target = c + (c - eye) * 0.5;
                    if !self.in_free_space(eye, margin) || (target - eye).norm() < 1e-6 {
                        jitter += 0.37;
                        continue;
                    }
                    let pose = Pose::look_at(eye, target);
                    out.push(CameraView::new(pose, intrinsics, width, height)?);
                    i += 1;
                    jitter = 0.0;
                }
            }
            PoseMode::UniformFreeSpace => {
                while out.len() < count {
                    attempts += 1;
                    if attempts > max_attempts {
                        return Err(SceneError::PoseGeneration(count, attempts));
                    }
                    let eye = Vec3::new(
                        rng.range(self.room.min.x + margin, self.room.max.x - margin),
                        rng.range(self.room.min.y + margin, self.room.max.y - margin),
                        rng.range(self.room.min.z + margin, self.room.max.z - margin),
                    );
                    if !self.in_free_space(eye, margin) {
                        continue;
                    }
                    let target = if self.primitives.is_empty() || rng.uniform() < 0.4 {
                        // A wall point.
                        let b = &self.room;
                        Shape::Box(Aabb {
                            min: b.min,
                            max: b.max,
                        })
                        .surface_point(rng)
                    } else {
                        let pi = rng.below(self.primitives.len());
                        self.primitives[pi].shape.surface_point(rng)
                    };
                    if (target - eye).norm() < 1e-6 {
                        continue;
                    }
                    let pose = Pose::look_at(eye, target);
                    // Enforce a minimum standoff along the optical axis.
                    let axis = pose.rotate(Vec3::new(0.0, 0.0, 1.0));
                    match self.intersect(eye, axis) {
                        Some(hit) if hit.t >= z_min => {}
                        _ => continue,
                    }
                    out.push(CameraView::new(pose, intrinsics, width, height)?);
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests;
