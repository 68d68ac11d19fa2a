use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use super::PixelRay;
use crate::camera::{jacobian_projection, project_ray, CameraPose, ImageSize};
use crate::error::{PtzError, Result};

const MAX_ITERATIONS: usize = 100;
const STEP_TOLERANCE: f64 = 1e-10;
const INITIAL_DAMPING: f64 = 1e-3;
const MAX_DAMPING: f64 = 1e12;

/// Cost history of a refinement run; `costs[0]` is the initial cost.
#[derive(Debug, Clone)]
pub struct RefineTrace {
    pub pose: CameraPose,
    pub costs: Vec<f64>,
    pub iterations: usize,
}

fn cost(pose: &CameraPose, corrs: &[PixelRay], size: ImageSize) -> Option<f64> {
    if !pose.is_valid() {
        return None;
    }
    let mut sum = 0.0;
    for c in corrs {
        let p = project_ray(pose, size, &c.ray).ok()?;
        let (dx, dy) = (c.pixel.x - p.x, c.pixel.y - p.y);
        sum += dx * dx + dy * dy;
    }
    Some(sum)
}

fn normal_equations(
    pose: &CameraPose,
    corrs: &[PixelRay],
    size: ImageSize,
) -> Result<(Matrix3<f64>, Vector3<f64>)> {
    let mut jtj = Matrix3::zeros();
    let mut jtr = Vector3::zeros();
    for c in corrs {
        let p = project_ray(pose, size, &c.ray)?;
        let j = jacobian_projection(pose, size, &c.ray)?;
        let jp = j.fixed_columns::<3>(0);
        let r = nalgebra::Vector2::new(c.pixel.x - p.x, c.pixel.y - p.y);
        jtj += jp.transpose() * jp;
        jtr += jp.transpose() * r;
    }
    Ok((jtj, jtr))
}

fn is_rank_deficient(jtj: &Matrix3<f64>) -> bool {
    let d = jtj.diagonal();
    if d.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return true;
    }
    let scale = Vector3::new(1.0 / d.x.sqrt(), 1.0 / d.y.sqrt(), 1.0 / d.z.sqrt());
    let scaled = Matrix3::from_diagonal(&scale) * jtj * Matrix3::from_diagonal(&scale);
    let eig = SymmetricEigen::new(scaled).eigenvalues;
    eig.min() < 1e-12
}

/// Minimizes the summed squared reprojection error over (pan, tilt, focal).
///
/// Damped Gauss-Newton with Marquardt scaling: damping is multiplied by 10
/// after a rejected step and divided by 10 after an accepted one.
pub fn refine_pose_traced(
    initial: &CameraPose,
    corrs: &[PixelRay],
    size: ImageSize,
) -> Result<RefineTrace> {
    if corrs.len() < 2 {
        return Err(PtzError::SingularNormalEquations);
    }
    let mut pose = *initial;
    let mut current = cost(&pose, corrs, size).ok_or(PtzError::BehindCamera)?;
    let mut costs = vec![current];
    let mut lambda = INITIAL_DAMPING;
    let mut iterations = 0;

    let (mut jtj, mut jtr) = normal_equations(&pose, corrs, size)?;
    if is_rank_deficient(&jtj) {
        return Err(PtzError::SingularNormalEquations);
    }

    while iterations < MAX_ITERATIONS && current > 0.0 {
        iterations += 1;
        let mut damped = jtj;
        for i in 0..3 {
            damped[(i, i)] += lambda * jtj[(i, i)];
        }
        let Some(chol) = damped.cholesky() else {
            lambda *= 10.0;
            if lambda > MAX_DAMPING {
                break;
            }
            continue;
        };
        let step = chol.solve(&jtr);
        let candidate = CameraPose {
            pan: pose.pan + step.x,
            tilt: pose.tilt + step.y,
            focal: pose.focal + step.z,
        };
        match cost(&candidate, corrs, size) {
            Some(c) if c <= current => {
                pose = candidate.normalized();
                current = c;
                costs.push(c);
                lambda = (lambda / 10.0).max(1e-12);
                if step.norm() < STEP_TOLERANCE {
                    break;
                }
                (jtj, jtr) = normal_equations(&pose, corrs, size)?;
            }
            _ => {
                lambda *= 10.0;
                if lambda > MAX_DAMPING || step.norm() < STEP_TOLERANCE {
                    break;
                }
            }
        }
    }

    Ok(RefineTrace {
        pose,
        costs,
        iterations,
    })
}

pub fn refine_pose(
    initial: &CameraPose,
    corrs: &[PixelRay],
    size: ImageSize,
) -> Result<CameraPose> {
    refine_pose_traced(initial, corrs, size).map(|t| t.pose)
}
