//! Minimal (pan, tilt, focal) solver from two pixel-ray pairs.
//!
//! The focal length is a root of the difference between the angle subtended
//! by the two pixels and the angle between the two rays. Pan and tilt then
//! follow in closed form by aligning the first pixel with its ray, and the
//! second pair picks among candidate roots.

use nalgebra::Vector3;

use super::PixelRay;
use crate::camera::{
    angle_between, project_ray, tilt_rotation, wrap_degrees, CameraPose, ImageSize, Pixel, Ray,
};
use crate::error::{PtzError, Result};

pub const FOCAL_SEARCH_MIN: f64 = 100.0;
pub const FOCAL_SEARCH_MAX: f64 = 20_000.0;
pub const FOCAL_TOLERANCE: f64 = 1e-6;

const MIN_PIXEL_SEPARATION: f64 = 1.0;
const MIN_RAY_SEPARATION_DEG: f64 = 0.01;
const SCAN_STEPS: usize = 256;

fn camera_direction(pixel: &Pixel, focal: f64, size: ImageSize) -> Vector3<f64> {
    let (cx, cy) = size.principal_point();
    Vector3::new((pixel.x - cx) / focal, (pixel.y - cy) / focal, 1.0)
}

/// Pixel-pair angle at `focal` minus the ray-pair angle.
pub(crate) fn focal_residual(
    a: &Pixel,
    b: &Pixel,
    ray_angle: f64,
    focal: f64,
    size: ImageSize,
) -> f64 {
    angle_between(
        &camera_direction(a, focal, size),
        &camera_direction(b, focal, size),
    ) - ray_angle
}

/// Pan/tilt solutions that send `pixel` (at `focal`) onto `ray`.
fn align_single(pixel: &Pixel, ray: &Ray, focal: f64, size: ImageSize) -> Vec<CameraPose> {
    let m = camera_direction(pixel, focal, size).normalize();
    let u = ray.unit_direction();
    // tilt solves  m_y cos(t) - m_z sin(t) = u_y
    let rho = m.y.hypot(m.z);
    if rho < 1e-15 {
        return Vec::new();
    }
    let c = (u.y / rho).clamp(-1.0, 1.0);
    if (u.y / rho).abs() > 1.0 + 1e-12 {
        return Vec::new();
    }
    let beta = m.z.atan2(m.y);
    let base = c.acos();
    let mut out = Vec::with_capacity(2);
    for tilt_rad in [base - beta, -base - beta] {
        let tilt = wrap_degrees(tilt_rad.to_degrees());
        if tilt.abs() >= 90.0 {
            continue;
        }
        let v = tilt_rotation(tilt).transpose() * m;
        let pan = wrap_degrees((u.x.atan2(u.z) - v.x.atan2(v.z)).to_degrees());
        out.push(CameraPose { pan, tilt, focal });
    }
    out
}

fn check_preconditions(a: &PixelRay, b: &PixelRay) -> Result<f64> {
    if !a.ray.is_valid() || !b.ray.is_valid() {
        return Err(PtzError::Degenerate(
            "ray outside the forward hemisphere".into(),
        ));
    }
    if a.pixel.distance(&b.pixel) <= MIN_PIXEL_SEPARATION {
        return Err(PtzError::Degenerate("pixels closer than 1 px".into()));
    }
    let ray_angle = a.ray.angle_to(&b.ray);
    if ray_angle <= MIN_RAY_SEPARATION_DEG {
        return Err(PtzError::Degenerate("rays closer than 0.01 degrees".into()));
    }
    Ok(ray_angle)
}

/// Best pose hypothesis and its reprojection residual on the second pair.
///
/// Unlike [`solve_two_point`] this does not reject noisy samples whose second
/// pair cannot be matched exactly; RANSAC scores those itself.
pub fn two_point_hypothesis(
    a: &PixelRay,
    b: &PixelRay,
    size: ImageSize,
) -> Result<(CameraPose, f64)> {
    let ray_angle = check_preconditions(a, b)?;

    let roots = focal_roots(&a.pixel, &b.pixel, ray_angle, size);
    if roots.is_empty() {
        return Err(PtzError::NoSolution(format!(
            "ray angle {ray_angle:.4} deg outside the pixel-angle range over the focal bracket"
        )));
    }
    roots
        .into_iter()
        .flat_map(|focal| align_single(&a.pixel, &a.ray, focal, size))
        .filter_map(|pose| {
            let p = project_ray(&pose, size, &b.ray).ok()?;
            Some((pose, p.distance(&b.pixel)))
        })
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .ok_or_else(|| PtzError::NoSolution("no pan/tilt aligns the first pair".into()))
}

/// Every focal length in the search bracket where the pixel-pair angle equals
/// `ray_angle`.
///
/// For pixels near the centre the angle falls monotonically with focal
/// length, but two off-centre pixels at similar azimuths about the principal
/// point subtend a small angle at short focal lengths too, so the residual
/// can rise before it falls and have two roots. A log-spaced scan brackets
/// each sign change and bisection refines it.
fn focal_roots(a: &Pixel, b: &Pixel, ray_angle: f64, size: ImageSize) -> Vec<f64> {
    let g = |f: f64| focal_residual(a, b, ray_angle, f, size);
    let ratio = (FOCAL_SEARCH_MAX / FOCAL_SEARCH_MIN).powf(1.0 / SCAN_STEPS as f64);
    let mut roots = Vec::new();
    let mut lo = FOCAL_SEARCH_MIN;
    let mut g_lo = g(lo);
    for i in 1..=SCAN_STEPS {
        let hi = if i == SCAN_STEPS {
            FOCAL_SEARCH_MAX
        } else {
            lo * ratio
        };
        let g_hi = g(hi);
        if g_lo == 0.0 {
            roots.push(lo);
        } else if g_lo * g_hi < 0.0 {
            let (mut l, mut h) = (lo, hi);
            while h - l > FOCAL_TOLERANCE {
                let mid = 0.5 * (l + h);
                if (g(mid) > 0.0) == (g_lo > 0.0) {
                    l = mid;
                } else {
                    h = mid;
                }
            }
            roots.push(0.5 * (l + h));
        }
        lo = hi;
        g_lo = g_hi;
    }
    if g_lo == 0.0 {
        roots.push(lo);
    }
    roots
}

/// Solves (pan, tilt, focal) exactly from two pixel-ray pairs.
pub fn solve_two_point(a: &PixelRay, b: &PixelRay, size: ImageSize) -> Result<CameraPose> {
    let (pose, residual) = two_point_hypothesis(a, b, size)?;
    if residual > 10.0 * FOCAL_TOLERANCE {
        return Err(PtzError::Inconsistent { residual });
    }
    Ok(pose)
}
