//! 3D vectors, rotations, SE(3) poses and pinhole cameras.
//!
//! Conventions: world-from-camera poses (`x_world = R x_cam + t`), camera
//! looks along +z with x right and y down, world "down" is +y. Depth values
//! throughout the crate are distances along the unit ray, in meters.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeomError {
    #[error("pixel ({0}, {1}) outside image bounds {2}x{3}")]
    PixelOutOfBounds(f64, f64, usize, usize),
    #[error("rotation matrix is not orthonormal with det +1 (defect {0:.3e})")]
    BadRotation(f64),
    #[error("invalid camera intrinsics: {0}")]
    BadIntrinsics(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Vec3 {
        let n = self.norm();
        assert!(n > 0.0, "cannot normalize zero vector");
        self * (1.0 / n)
    }

    pub fn l1(self) -> f64 {
        self.x.abs() + self.y.abs() + self.z.abs()
    }

    pub fn min_elem(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x.min(o.x), self.y.min(o.y), self.z.min(o.z))
    }

    pub fn max_elem(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x.max(o.x), self.y.max(o.y), self.z.max(o.z))
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 3]) -> Vec3 {
        Vec3::new(a[0], a[1], a[2])
    }
}

impl std::ops::Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl std::ops::Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl std::ops::Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl std::ops::Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Row-major 3x3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat3 {
    pub m: [[f64; 3]; 3],
}

impl Mat3 {
    pub fn identity() -> Self {
        Mat3 {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    pub fn from_rows(r0: [f64; 3], r1: [f64; 3], r2: [f64; 3]) -> Self {
        Mat3 { m: [r0, r1, r2] }
    }

    pub fn from_cols(c0: Vec3, c1: Vec3, c2: Vec3) -> Self {
        Mat3 {
            m: [
                [c0.x, c1.x, c2.x],
                [c0.y, c1.y, c2.y],
                [c0.z, c1.z, c2.z],
            ],
        }
    }

    pub fn col(&self, j: usize) -> Vec3 {
        Vec3::new(self.m[0][j], self.m[1][j], self.m[2][j])
    }

    pub fn row(&self, i: usize) -> Vec3 {
        Vec3::new(self.m[i][0], self.m[i][1], self.m[i][2])
    }

    pub fn transpose(&self) -> Mat3 {
        let m = &self.m;
        Mat3::from_rows(
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        )
    }

    pub fn det(&self) -> f64 {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn mul_vec(&self, v: Vec3) -> Vec3 {
        Vec3::new(
            self.row(0).dot(v),
            self.row(1).dot(v),
            self.row(2).dot(v),
        )
    }

    pub fn mul_mat(&self, o: &Mat3) -> Mat3 {
        let mut r = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for (k, ok) in o.m.iter().enumerate() {
                    r[i][j] += self.m[i][k] * ok[j];
                }
            }
        }
        Mat3 { m: r }
    }

    pub fn trace(&self) -> f64 {
        self.m[0][0] + self.m[1][1] + self.m[2][2]
    }

    /// Max absolute deviation of `R^T R` from identity plus det defect.
    pub fn orthonormal_defect(&self) -> f64 {
        let rtr = self.transpose().mul_mat(self);
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((rtr.m[i][j] - target).abs());
            }
        }
        worst.max((self.det() - 1.0).abs())
    }
}

/// Rodrigues formula: rotation matrix for the axis-angle vector `w`.
pub fn so3_exp(w: Vec3) -> Mat3 {
    let theta = w.norm();
    if theta < 1e-12 {
        // First-order expansion keeps the result orthonormal to O(theta^2).
        let m = Mat3::from_rows([1.0, -w.z, w.y], [w.z, 1.0, -w.x], [-w.y, w.x, 1.0]);
        return m;
    }
    let k = w * (1.0 / theta);
    let (s, c) = (theta.sin(), theta.cos());
    let kx = Mat3::from_rows([0.0, -k.z, k.y], [k.z, 0.0, -k.x], [-k.y, k.x, 0.0]);
    let kx2 = kx.mul_mat(&kx);
    let mut m = Mat3::identity();
    for i in 0..3 {
        for j in 0..3 {
            m.m[i][j] += s * kx.m[i][j] + (1.0 - c) * kx2.m[i][j];
        }
    }
    m
}

/// Rigid transform, world-from-camera: `x_world = R x_cam + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub r: Mat3,
    pub t: Vec3,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            r: Mat3::identity(),
            t: Vec3::ZERO,
        }
    }

    pub fn new(r: Mat3, t: Vec3) -> Self {
        Pose { r, t }
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vec3 {
        self.t
    }

    pub fn transform(&self, x_cam: Vec3) -> Vec3 {
        self.r.mul_vec(x_cam) + self.t
    }

    /// Map a world point into camera coordinates.
    pub fn world_to_cam(&self, x_world: Vec3) -> Vec3 {
        self.r.transpose().mul_vec(x_world - self.t)
    }

    /// Rotate a camera-frame direction into the world frame.
    pub fn rotate(&self, d_cam: Vec3) -> Vec3 {
        self.r.mul_vec(d_cam)
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.r.transpose();
        Pose {
            r: rt,
            t: -rt.mul_vec(self.t),
        }
    }

    pub fn compose(&self, o: &Pose) -> Pose {
        Pose {
            r: self.r.mul_mat(&o.r),
            t: self.r.mul_vec(o.t) + self.t,
        }
    }

    pub fn check_rotation(&self, tol: f64) -> Result<(), GeomError> {
        let defect = self.r.orthonormal_defect();
        if defect > tol {
            return Err(GeomError::BadRotation(defect));
        }
        Ok(())
    }

    /// Camera pose at `eye` looking toward `target`, world down = +y.
    pub fn look_at(eye: Vec3, target: Vec3) -> Pose {
        let f = (target - eye).normalized();
        let down = Vec3::new(0.0, 1.0, 0.0);
        let mut right = down.cross(f);
        if right.norm() < 1e-9 {
            // Looking straight up/down; pick an arbitrary horizontal right.
            right = Vec3::new(1.0, 0.0, 0.0).cross(f);
        }
        let right = right.normalized();
        let cam_down = f.cross(right);
        Pose {
            r: Mat3::from_cols(right, cam_down, f),
            t: eye,
        }
    }
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

/// Posed pinhole camera with image size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraView {
    pub pose: Pose,
    pub intrinsics: Intrinsics,
    pub width: usize,
    pub height: usize,
}

impl CameraView {
    pub fn new(
        pose: Pose,
        intrinsics: Intrinsics,
        width: usize,
        height: usize,
    ) -> Result<Self, GeomError> {
        pose.check_rotation(1e-9)?;
        let k = &intrinsics;
        if !(k.fx > 0.0 && k.fy > 0.0) {
            return Err(GeomError::BadIntrinsics(format!(
                "fx, fy must be positive (got {}, {})",
                k.fx, k.fy
            )));
        }
        if !(k.cx > 0.0 && k.cx < width as f64 && k.cy > 0.0 && k.cy < height as f64) {
            return Err(GeomError::BadIntrinsics(format!(
                "principal point ({}, {}) outside {}x{}",
                k.cx, k.cy, width, height
            )));
        }
        Ok(CameraView {
            pose,
            intrinsics,
            width,
            height,
        })
    }

    /// Ray through the center of pixel (px, py): origin is the camera center,
    /// direction is unit length in world coordinates.
    pub fn ray_for_pixel(&self, px: f64, py: f64) -> Result<(Vec3, Vec3), GeomError> {
        if !(px >= 0.0 && px < self.width as f64 && py >= 0.0 && py < self.height as f64) {
            return Err(GeomError::PixelOutOfBounds(px, py, self.width, self.height));
        }
        let k = &self.intrinsics;
        let d_cam = Vec3::new(
            (px + 0.5 - k.cx) / k.fx,
            (py + 0.5 - k.cy) / k.fy,
            1.0,
        );
        let d_world = self.pose.rotate(d_cam).normalized();
        Ok((self.pose.center(), d_world))
    }

    /// Project a world point to pixel coordinates. Returns `None` when the
    /// point is at or behind the camera plane.
    pub fn project(&self, x_world: Vec3) -> Option<(f64, f64)> {
        let p = self.pose.world_to_cam(x_world);
        if p.z <= 1e-12 {
            return None;
        }
        let k = &self.intrinsics;
        Some((k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy))
    }
}

/// Angle of the relative rotation between two rotation matrices, in degrees.
pub fn rotation_angle_deg(a: &Mat3, b: &Mat3) -> f64 {
    let rel = a.transpose().mul_mat(b);
    let c = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    c.acos().to_degrees()
}
