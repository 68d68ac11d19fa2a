use nalgebra::Vector3;
use proptest::prelude::*;
use ptz_slam::camera::{
    apply_homography, back_project, intrinsic_matrix, jacobian_projection, pan_rotation,
    project_ray, relative_homography, tilt_rotation, wrap_degrees,
};
use ptz_slam::solvers::{solve_two_point, PixelRay};
use ptz_slam::{CameraPose, ImageSize, Pixel, PtzError, Ray};

const HD: ImageSize = ImageSize {
    width: 1280,
    height: 720,
};

fn pose() -> impl Strategy<Value = CameraPose> {
    (-45.0..45.0f64, -40.0..40.0f64, 800.0..8000.0f64).prop_map(|(pan, tilt, focal)| CameraPose {
        pan,
        tilt,
        focal,
    })
}

fn pixel() -> impl Strategy<Value = Pixel> {
    (0.0..1280.0f64, 0.0..720.0f64).prop_map(|(x, y)| Pixel::new(x, y))
}

fn ray_diff(a: &Ray, b: &Ray) -> f64 {
    wrap_degrees(a.theta - b.theta)
        .abs()
        .max((a.phi - b.phi).abs())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn back_projection_inverts_projection(p in pose(), px in pixel()) {
        let ray = back_project(&p, HD, &px).unwrap();
        let again = project_ray(&p, HD, &ray).unwrap();
        prop_assert!(again.distance(&px) < 1e-7, "pixel drift {}", again.distance(&px));
        let back = back_project(&p, HD, &again).unwrap();
        prop_assert!(ray_diff(&ray, &back) < 1e-9);
    }

    #[test]
    fn projection_factors_into_intrinsics_and_rotations(p in pose(), px in pixel()) {
        let ray = back_project(&p, HD, &px).unwrap();
        let q = intrinsic_matrix(&p, HD) * tilt_rotation(p.tilt) * pan_rotation(p.pan) * ray.plane_point();
        let direct = project_ray(&p, HD, &ray).unwrap();
        prop_assert!(Pixel::new(q.x / q.z, q.y / q.z).distance(&direct) < 1e-9);
    }

    #[test]
    fn jacobian_matches_central_differences(p in pose(), px in pixel()) {
        let ray = back_project(&p, HD, &px).unwrap();
        let j = jacobian_projection(&p, HD, &ray).unwrap();
        let f = |v: [f64; 5]| {
            let q = project_ray(&CameraPose { pan: v[0], tilt: v[1], focal: v[2] }, HD, &Ray { theta: v[3], phi: v[4] }).unwrap();
            Vector3::new(q.x, q.y, 0.0)
        };
        let x = [p.pan, p.tilt, p.focal, ray.theta, ray.phi];
        let steps = [1e-5, 1e-5, 1e-3, 1e-5, 1e-5];
        let (mut diff, mut norm) = (0.0, 0.0);
        for c in 0..5 {
            let (mut hi, mut lo) = (x, x);
            hi[c] += steps[c];
            lo[c] -= steps[c];
            let d = (f(hi) - f(lo)) / (2.0 * steps[c]);
            for r in 0..2 {
                diff += (j[(r, c)] - d[r]).powi(2);
                norm += d[r].powi(2);
            }
        }
        prop_assert!((diff / norm).sqrt() < 1e-4, "relative error {}", (diff / norm).sqrt());
    }

    #[test]
    fn relative_homography_transports_pixels(a in pose(), dpan in -5.0..5.0f64, dtilt in -5.0..5.0f64, scale in 0.7..1.4f64, px in pixel()) {
        let b = CameraPose { pan: a.pan + dpan, tilt: (a.tilt + dtilt).clamp(-80.0, 80.0), focal: a.focal * scale };
        let ray = back_project(&a, HD, &px).unwrap();
        let Ok(in_b) = project_ray(&b, HD, &ray) else { return Ok(()) };
        let h = relative_homography(&a, &b, HD).unwrap();
        let moved = apply_homography(&h, &px).unwrap();
        prop_assert!(moved.distance(&in_b) < 1e-6 * (1.0 + in_b.x.abs() + in_b.y.abs()));
    }

    #[test]
    fn two_point_recovers_noise_free_pose(p in pose(), a in pixel(), b in pixel()) {
        prop_assume!(a.distance(&b) > 50.0);
        let pair = |px: &Pixel| PixelRay::new(*px, back_project(&p, HD, px).unwrap());
        let est = solve_two_point(&pair(&a), &pair(&b), HD).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert!(wrap_degrees(est.pan - p.pan).abs() < 1e-6);
        prop_assert!((est.tilt - p.tilt).abs() < 1e-6);
        prop_assert!((est.focal - p.focal).abs() < 1e-3);
    }
}

#[test]
fn two_point_rejects_degenerate_pairs() {
    let p = CameraPose {
        pan: 10.0,
        tilt: -5.0,
        focal: 2000.0,
    };
    let px = Pixel::new(300.0, 200.0);
    let pr = PixelRay::new(px, back_project(&p, HD, &px).unwrap());
    assert!(matches!(
        solve_two_point(&pr, &pr, HD),
        Err(PtzError::Degenerate(_))
    ));
    let behind = PixelRay::new(
        Pixel::new(900.0, 200.0),
        Ray {
            theta: pr.ray.theta + 90.0,
            phi: pr.ray.phi,
        },
    );
    assert!(matches!(
        solve_two_point(&pr, &behind, HD),
        Err(PtzError::Degenerate(_))
    ));
    // Ten pixels can never span 60 degrees inside the focal bracket.
    let a = PixelRay::new(
        Pixel::new(640.0, 360.0),
        Ray {
            theta: 0.0,
            phi: 0.0,
        },
    );
    let b = PixelRay::new(
        Pixel::new(650.0, 360.0),
        Ray {
            theta: 60.0,
            phi: 0.0,
        },
    );
    assert!(matches!(
        solve_two_point(&a, &b, HD),
        Err(PtzError::NoSolution(_))
    ));
    // Second ray disagrees with the first-pair alignment.
    let c = PixelRay::new(
        Pixel::new(900.0, 360.0),
        Ray {
            theta: 0.0,
            phi: 8.0,
        },
    );
    assert!(matches!(
        solve_two_point(&a, &c, HD),
        Err(PtzError::Inconsistent { .. })
    ));
}
