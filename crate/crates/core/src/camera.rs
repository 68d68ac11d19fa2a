//! Decomposed pan-tilt-zoom camera model.
//!
//! A world point is first moved into the fixed tripod frame by the base
//! transform `S [I | -C]`, then rotated by pan and tilt and projected by an
//! intrinsic matrix whose only free parameter is the focal length. Scene
//! landmarks are stored as rays `(theta, phi)` in the tripod frame, which
//! sidesteps the unobservable depth of a purely rotating camera.
//!
//! Conventions: angles are in degrees, image `x` points right and `y` points
//! down, the principal point is the image centre. Pan rotates about the
//! tripod Y axis and tilt about the camera X axis; positive tilt looks up.

use nalgebra::{Matrix3, SMatrix, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{PtzError, Result};

/// Minimum camera-frame depth accepted before dehomogenizing.
pub const DEPTH_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageSize {
    pub width: u32,
    pub height: u32,
}

impl ImageSize {
    pub fn new(width: u32, height: u32) -> Result<Self> {
        if width < 2 || height < 2 {
            return Err(PtzError::InvalidInput(format!(
                "image size {width}x{height} must be at least 2x2"
            )));
        }
        Ok(Self { width, height })
    }

    pub fn principal_point(&self) -> (f64, f64) {
        (self.width as f64 / 2.0, self.height as f64 / 2.0)
    }

    /// Closed-rectangle containment test in pixel coordinates.
    pub fn contains(&self, p: &Pixel) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x <= self.width as f64 && p.y <= self.height as f64
    }
}

/// Fixed camera location `C` and base rotation `S` of the tripod.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PtzBase {
    pub camera_center: Vector3<f64>,
    pub base_rotation: Matrix3<f64>,
}

impl PtzBase {
    pub fn new(camera_center: Vector3<f64>, base_rotation: Matrix3<f64>) -> Result<Self> {
        let ortho = (base_rotation.transpose() * base_rotation - Matrix3::identity())
            .abs()
            .max();
        let det = base_rotation.determinant();
        if ortho > 1e-9 || (det - 1.0).abs() > 1e-9 {
            return Err(PtzError::InvalidInput(format!(
                "base rotation is not a proper rotation (orthonormality error {ortho:.2e}, det {det})"
            )));
        }
        Ok(Self {
            camera_center,
            base_rotation,
        })
    }

    pub fn identity() -> Self {
        Self {
            camera_center: Vector3::zeros(),
            base_rotation: Matrix3::identity(),
        }
    }

    pub fn to_tripod(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.base_rotation * (point - self.camera_center)
    }
}

/// Pan and tilt in degrees, focal length in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub pan: f64,
    pub tilt: f64,
    pub focal: f64,
}

impl CameraPose {
    pub fn new(pan: f64, tilt: f64, focal: f64) -> Result<Self> {
        let pose = Self { pan, tilt, focal };
        if !pose.is_valid() {
            return Err(PtzError::InvalidInput(format!(
                "invalid camera pose (pan {pan}, tilt {tilt}, focal {focal})"
            )));
        }
        Ok(pose)
    }

    pub fn is_valid(&self) -> bool {
        self.focal.is_finite()
            && self.focal > 0.0
            && self.pan.is_finite()
            && self.pan > -180.0
            && self.pan <= 180.0
            && self.tilt.is_finite()
            && self.tilt > -90.0
            && self.tilt < 90.0
    }

    /// Returns a copy with pan wrapped into (-180, 180].
    pub fn normalized(mut self) -> Self {
        self.pan = wrap_degrees(self.pan);
        self
    }

    /// Unit optical axis expressed in the tripod frame.
    pub fn optical_axis(&self) -> Vector3<f64> {
        unit_direction(self.pan, self.tilt)
    }
}

/// Wraps an angle in degrees into (-180, 180].
pub fn wrap_degrees(angle: f64) -> f64 {
    let mut a = angle % 360.0;
    if a <= -180.0 {
        a += 360.0;
    } else if a > 180.0 {
        a -= 360.0;
    }
    a
}

/// A landmark ray in the tripod frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ray {
    pub theta: f64,
    pub phi: f64,
}

impl Ray {
    pub fn new(theta: f64, phi: f64) -> Result<Self> {
        let ray = Self { theta, phi };
        if !ray.is_valid() {
            return Err(PtzError::InvalidInput(format!(
                "invalid ray ({theta}, {phi})"
            )));
        }
        Ok(ray)
    }

    pub fn is_valid(&self) -> bool {
        self.theta.is_finite()
            && self.phi.is_finite()
            && self.theta.abs() < 90.0
            && self.phi.abs() < 90.0
    }

    /// The ray as a point on the `Z = 1` plane.
    pub fn plane_point(&self) -> Vector3<f64> {
        let t = self.theta.to_radians().tan();
        let p = self.phi.to_radians().tan();
        Vector3::new(t, -p * (t * t + 1.0).sqrt(), 1.0)
    }

    pub fn unit_direction(&self) -> Vector3<f64> {
        unit_direction(self.theta, self.phi)
    }

    /// Great-circle angle to another ray, in degrees.
    pub fn angle_to(&self, other: &Ray) -> f64 {
        angle_between(&self.unit_direction(), &other.unit_direction())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pixel {
    pub x: f64,
    pub y: f64,
}

impl Pixel {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Pixel) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

fn unit_direction(theta_deg: f64, phi_deg: f64) -> Vector3<f64> {
    let (st, ct) = theta_deg.to_radians().sin_cos();
    let (sp, cp) = phi_deg.to_radians().sin_cos();
    Vector3::new(cp * st, -sp, cp * ct)
}

/// Angle in degrees between two (not necessarily unit) vectors.
pub fn angle_between(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    // atan2 form stays accurate for nearly parallel vectors
    a.cross(b).norm().atan2(a.dot(b)).to_degrees()
}

/// Rotation for the pan angle about the tripod Y axis.
pub fn pan_rotation(pan_deg: f64) -> Matrix3<f64> {
    let (s, c) = pan_deg.to_radians().sin_cos();
    Matrix3::new(c, 0.0, -s, 0.0, 1.0, 0.0, s, 0.0, c)
}

/// Rotation for the tilt angle about the camera X axis.
pub fn tilt_rotation(tilt_deg: f64) -> Matrix3<f64> {
    let (s, c) = tilt_deg.to_radians().sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, s, 0.0, -s, c)
}

/// Tripod-to-camera rotation `Q_phi * Q_theta`.
pub fn camera_rotation(pose: &CameraPose) -> Matrix3<f64> {
    tilt_rotation(pose.tilt) * pan_rotation(pose.pan)
}

pub fn intrinsic_matrix(pose: &CameraPose, size: ImageSize) -> Matrix3<f64> {
    intrinsic_from_focal(pose.focal, size)
}

pub(crate) fn intrinsic_from_focal(focal: f64, size: ImageSize) -> Matrix3<f64> {
    let (cx, cy) = size.principal_point();
    Matrix3::new(focal, 0.0, cx, 0.0, focal, cy, 0.0, 0.0, 1.0)
}

fn dehomogenize(q: &Vector3<f64>) -> Result<Pixel> {
    if q.z <= DEPTH_EPS {
        return Err(PtzError::BehindCamera);
    }
    Ok(Pixel::new(q.x / q.z, q.y / q.z))
}

/// Projects a tripod-frame direction into the image.
pub fn project_direction(pose: &CameraPose, size: ImageSize, dir: &Vector3<f64>) -> Result<Pixel> {
    let cam = camera_rotation(pose) * dir;
    if cam.z <= DEPTH_EPS {
        return Err(PtzError::BehindCamera);
    }
    let (cx, cy) = size.principal_point();
    Ok(Pixel::new(
        pose.focal * cam.x / cam.z + cx,
        pose.focal * cam.y / cam.z + cy,
    ))
}

pub fn project_ray(pose: &CameraPose, size: ImageSize, ray: &Ray) -> Result<Pixel> {
    project_direction(pose, size, &ray.plane_point())
}

/// Tripod-frame direction `[X, Y, Z]` of a pixel (not normalized).
pub fn pixel_direction(pose: &CameraPose, size: ImageSize, pixel: &Pixel) -> Vector3<f64> {
    let (cx, cy) = size.principal_point();
    let cam = Vector3::new(
        (pixel.x - cx) / pose.focal,
        (pixel.y - cy) / pose.focal,
        1.0,
    );
    camera_rotation(pose).transpose() * cam
}

/// Converts a tripod-frame direction with positive Z into a ray.
pub fn direction_to_ray(dir: &Vector3<f64>) -> Result<Ray> {
    if dir.z <= DEPTH_EPS {
        return Err(PtzError::BehindCamera);
    }
    let theta = dir.x.atan2(dir.z).to_degrees();
    let phi = (-dir.y).atan2(dir.x.hypot(dir.z)).to_degrees();
    Ok(Ray { theta, phi })
}

pub fn back_project(pose: &CameraPose, size: ImageSize, pixel: &Pixel) -> Result<Ray> {
    direction_to_ray(&pixel_direction(pose, size, pixel))
}

pub fn world_point_to_ray(base: &PtzBase, point: &Vector3<f64>) -> Result<Ray> {
    direction_to_ray(&base.to_tripod(point))
}

pub fn project_world_point(
    base: &PtzBase,
    pose: &CameraPose,
    size: ImageSize,
    point: &Vector3<f64>,
) -> Result<Pixel> {
    let q = intrinsic_matrix(pose, size) * camera_rotation(pose) * base.to_tripod(point);
    dehomogenize(&q)
}

/// Homography taking frame-a pixels of a ray to frame-b pixels of the same ray.
pub fn relative_homography(
    pose_a: &CameraPose,
    pose_b: &CameraPose,
    size: ImageSize,
) -> Result<Matrix3<f64>> {
    let ka_inv = intrinsic_matrix(pose_a, size)
        .try_inverse()
        .ok_or_else(|| PtzError::Degenerate("intrinsic matrix is singular".into()))?;
    let h = intrinsic_matrix(pose_b, size)
        * camera_rotation(pose_b)
        * camera_rotation(pose_a).transpose()
        * ka_inv;
    normalize_homography(h)
}

pub(crate) fn normalize_homography(h: Matrix3<f64>) -> Result<Matrix3<f64>> {
    if h[(2, 2)].abs() < 1e-12 {
        return Err(PtzError::Degenerate(
            "homography has vanishing H[2][2]".into(),
        ));
    }
    Ok(h / h[(2, 2)])
}

pub fn apply_homography(h: &Matrix3<f64>, p: &Pixel) -> Result<Pixel> {
    let q = h * Vector3::new(p.x, p.y, 1.0);
    if q.z.abs() <= DEPTH_EPS {
        return Err(PtzError::Degenerate("point maps to infinity".into()));
    }
    Ok(Pixel::new(q.x / q.z, q.y / q.z))
}

/// Jacobian of [`project_ray`] with respect to `[pan, tilt, focal, theta, phi]`.
///
/// Angle columns are per degree, the focal column per pixel.
pub fn jacobian_projection(
    pose: &CameraPose,
    _size: ImageSize,
    ray: &Ray,
) -> Result<SMatrix<f64, 2, 5>> {
    let k = std::f64::consts::PI / 180.0;
    let qt = pan_rotation(pose.pan);
    let qp = tilt_rotation(pose.tilt);
    let d = ray.plane_point();
    let q = qp * qt * d;
    if q.z <= DEPTH_EPS {
        return Err(PtzError::BehindCamera);
    }

    let (sp, cp) = pose.pan.to_radians().sin_cos();
    let dqt = Matrix3::new(-sp, 0.0, -cp, 0.0, 0.0, 0.0, cp, 0.0, -sp);
    let (st, ct) = pose.tilt.to_radians().sin_cos();
    let dqp = Matrix3::new(0.0, 0.0, 0.0, 0.0, -st, ct, 0.0, -ct, -st);

    let ti = ray.theta.to_radians();
    let pi = ray.phi.to_radians();
    let sec_t = 1.0 / ti.cos();
    let sec_p = 1.0 / pi.cos();
    let dd_theta = Vector3::new(sec_t * sec_t, -pi.tan() * ti.tan() * sec_t, 0.0);
    let dd_phi = Vector3::new(0.0, -sec_p * sec_p * sec_t, 0.0);

    let r = qp * qt;
    let dq = [
        qp * dqt * d * k,
        dqp * qt * d * k,
        r * dd_theta * k,
        r * dd_phi * k,
    ];

    let f = pose.focal;
    let iz = 1.0 / q.z;
    let mut j = SMatrix::<f64, 2, 5>::zeros();
    let cols = [0usize, 1, 3, 4];
    for (col, dqi) in cols.iter().zip(dq.iter()) {
        j[(0, *col)] = f * (dqi.x * iz - q.x * dqi.z * iz * iz);
        j[(1, *col)] = f * (dqi.y * iz - q.y * dqi.z * iz * iz);
    }
    j[(0, 2)] = q.x * iz;
    j[(1, 2)] = q.y * iz;
    Ok(j)
}
