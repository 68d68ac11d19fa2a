use nalgebra::{Matrix3, SMatrix, SymmetricEigen, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::RansacParams;
use crate::camera::{apply_homography, normalize_homography, Pixel};
use crate::error::{PtzError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct HomographyEstimate {
    pub h: Matrix3<f64>,
    pub inliers: Vec<bool>,
}

impl HomographyEstimate {
    pub fn num_inliers(&self) -> usize {
        self.inliers.iter().filter(|b| **b).count()
    }
}

/// Similarity moving the centroid to the origin with mean distance sqrt(2).
fn normalizer(points: &[Pixel]) -> Matrix3<f64> {
    let n = points.len() as f64;
    let (mx, my) = points
        .iter()
        .fold((0.0, 0.0), |a, p| (a.0 + p.x, a.1 + p.y));
    let (mx, my) = (mx / n, my / n);
    let mean_dist = points
        .iter()
        .map(|p| (p.x - mx).hypot(p.y - my))
        .sum::<f64>()
        / n;
    let s = if mean_dist > 1e-12 {
        std::f64::consts::SQRT_2 / mean_dist
    } else {
        1.0
    };
    Matrix3::new(s, 0.0, -s * mx, 0.0, s, -s * my, 0.0, 0.0, 1.0)
}

fn collinear(a: &Pixel, b: &Pixel, c: &Pixel) -> bool {
    let cross = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
    let scale = a
        .distance(b)
        .max(a.distance(c))
        .max(b.distance(c))
        .max(1e-12);
    cross.abs() / (scale * scale) < 1e-6
}

fn has_collinear_triple(points: &[Pixel]) -> bool {
    let n = points.len();
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                if collinear(&points[i], &points[j], &points[k]) {
                    return true;
                }
            }
        }
    }
    false
}

/// Normalized direct linear transform from at least four pairs `src -> dst`.
pub fn dlt_homography(pairs: &[(Pixel, Pixel)]) -> Result<Matrix3<f64>> {
    if pairs.len() < 4 {
        return Err(PtzError::Degenerate(
            "homography needs at least 4 pairs".into(),
        ));
    }
    let src: Vec<Pixel> = pairs.iter().map(|p| p.0).collect();
    let dst: Vec<Pixel> = pairs.iter().map(|p| p.1).collect();
    if pairs.len() == 4 && (has_collinear_triple(&src) || has_collinear_triple(&dst)) {
        return Err(PtzError::Degenerate("collinear sample".into()));
    }
    let ts = normalizer(&src);
    let td = normalizer(&dst);

    let mut ata = SMatrix::<f64, 9, 9>::zeros();
    for (s, d) in src.iter().zip(&dst) {
        let a = ts * Vector3::new(s.x, s.y, 1.0);
        let b = td * Vector3::new(d.x, d.y, 1.0);
        let r1 = SMatrix::<f64, 1, 9>::from_row_slice(&[
            0.0,
            0.0,
            0.0,
            -a.x,
            -a.y,
            -1.0,
            b.y * a.x,
            b.y * a.y,
            b.y,
        ]);
        let r2 = SMatrix::<f64, 1, 9>::from_row_slice(&[
            a.x,
            a.y,
            1.0,
            0.0,
            0.0,
            0.0,
            -b.x * a.x,
            -b.x * a.y,
            -b.x,
        ]);
        ata += r1.transpose() * r1 + r2.transpose() * r2;
    }
    let eig = SymmetricEigen::new(ata);
    let (idx, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("nine eigenvalues");
    let v = eig.eigenvectors.column(idx);
    let hn = Matrix3::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]);
    let td_inv = td
        .try_inverse()
        .ok_or_else(|| PtzError::Degenerate("singular normalizer".into()))?;
    let h = td_inv * hn * ts;
    if h.determinant().abs() < 1e-15 {
        return Err(PtzError::Degenerate("singular homography".into()));
    }
    normalize_homography(h)
}

/// Symmetric transfer check: both forward and backward transfer errors below threshold.
fn inlier_mask(h: &Matrix3<f64>, pairs: &[(Pixel, Pixel)], threshold: f64) -> Vec<bool> {
    let Some(h_inv) = h.try_inverse() else {
        return vec![false; pairs.len()];
    };
    pairs
        .iter()
        .map(|(s, d)| {
            let fwd = apply_homography(h, s)
                .map(|p| p.distance(d))
                .unwrap_or(f64::INFINITY);
            let bwd = apply_homography(&h_inv, d)
                .map(|p| p.distance(s))
                .unwrap_or(f64::INFINITY);
            fwd < threshold && bwd < threshold
        })
        .collect()
}

/// Four-point RANSAC with a final DLT re-estimate on the inliers.
pub fn ransac_homography(
    pairs: &[(Pixel, Pixel)],
    params: &RansacParams,
) -> Result<HomographyEstimate> {
    params.validate()?;
    let n = pairs.len();
    let required = params.min_inliers.max(4);
    if n < 4 {
        return Err(PtzError::NotEnoughInliers { found: n, required });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<(Matrix3<f64>, Vec<bool>, usize)> = None;
    let mut needed = params.max_iterations;
    let mut iter = 0;
    while iter < needed {
        iter += 1;
        let mut idx = [0usize; 4];
        let mut k = 0;
        while k < 4 {
            let c = rng.random_range(0..n);
            if !idx[..k].contains(&c) {
                idx[k] = c;
                k += 1;
            }
        }
        let sample: Vec<(Pixel, Pixel)> = idx.iter().map(|&i| pairs[i]).collect();
        let Ok(h) = dlt_homography(&sample) else {
            continue;
        };
        let mask = inlier_mask(&h, pairs, params.inlier_threshold);
        let count = mask.iter().filter(|b| **b).count();
        if best.as_ref().is_none_or(|b| count > b.2) {
            needed = params
                .required_iterations(count as f64 / n as f64, 4)
                .max(iter);
            best = Some((h, mask, count));
        }
    }
    let Some((mut h, mut mask, mut count)) = best else {
        return Err(PtzError::NotEnoughInliers { found: 0, required });
    };
    if count < required {
        return Err(PtzError::NotEnoughInliers {
            found: count,
            required,
        });
    }
    for _ in 0..2 {
        let inl: Vec<(Pixel, Pixel)> = pairs
            .iter()
            .zip(&mask)
            .filter(|(_, m)| **m)
            .map(|(p, _)| *p)
            .collect();
        let Ok(refit) = dlt_homography(&inl) else {
            break;
        };
        let new_mask = inlier_mask(&refit, pairs, params.inlier_threshold);
        let new_count = new_mask.iter().filter(|b| **b).count();
        if new_count < count {
            break;
        }
        let unchanged = new_mask == mask;
        h = refit;
        mask = new_mask;
        count = new_count;
        if unchanged {
            break;
        }
    }
    Ok(HomographyEstimate { h, inliers: mask })
}
