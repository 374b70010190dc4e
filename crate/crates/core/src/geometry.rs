//! Homography background model: normalized DLT, RANSAC over flow-derived
//! correspondences, and the residual motion map that flags pixels moving
//! differently from the dominant plane.

use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dims, Error, Result};
use crate::model::{normalize_min_max, FlowField, ScalarMap};

pub type Point = [f64; 2];

/// Smallest triangle area treated as non-collinear.
pub const COLLINEAR_TOLERANCE: f64 = 1e-9;
/// Homogeneous scale below which a point maps to infinity.
pub const INFINITY_TOLERANCE: f64 = 1e-12;
pub const DEFAULT_GRID_STRIDE: usize = 8;
/// Residuals below this many pixels are flow quantization noise and read as 0.
pub const RESIDUAL_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    /// Location in frame `t`.
    pub x: Point,
    /// Matching location in frame `t - 1`.
    pub x_prev: Point,
}

impl Correspondence {
    pub fn new(x: Point, x_prev: Point) -> Result<Self> {
        if x.iter().chain(&x_prev).any(|v| !v.is_finite()) {
            return Err(Error::invalid("correspondence coordinates must be finite"));
        }
        Ok(Correspondence { x, x_prev })
    }

    pub fn swapped(&self) -> Correspondence {
        Correspondence {
            x: self.x_prev,
            x_prev: self.x,
        }
    }
}

/// A 3x3 projective map, scaled so `H[2][2] = 1` (or to unit Frobenius norm
/// when that entry vanishes).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    m: Matrix3<f64>,
}

impl Homography {
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("homography entries must be finite"));
        }
        let m = if m[(2, 2)].abs() > INFINITY_TOLERANCE {
            m / m[(2, 2)]
        } else {
            let norm = m.norm();
            if norm == 0.0 {
                return Err(Error::Degenerate("zero homography".into()));
            }
            m / norm
        };
        if m.determinant().abs() < 1e-9 {
            return Err(Error::Degenerate("homography is singular".into()));
        }
        Ok(Homography { m })
    }

    pub fn identity() -> Self {
        Homography {
            m: Matrix3::identity(),
        }
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    pub fn inverse(&self) -> Homography {
        let inv = self.m.try_inverse().expect("determinant checked on construction");
        Homography::new(inv).expect("inverse of a regular homography is regular")
    }

    pub fn apply(&self, p: Point) -> Result<Point> {
        let q = self.m * Vector3::new(p[0], p[1], 1.0);
        if q[2].abs() < INFINITY_TOLERANCE {
            return Err(Error::Degenerate(format!(
                "point ({}, {}) maps to the plane at infinity",
                p[0], p[1]
            )));
        }
        Ok([q[0] / q[2], q[1] / q[2]])
    }
}

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Translates the centroid to the origin and scales the mean distance from
/// it to sqrt(2). Returns the moved points and the transform applied.
pub fn normalize_points(points: &[Point]) -> Result<(Vec<Point>, Matrix3<f64>)> {
    if points.is_empty() {
        return Err(Error::invalid("cannot normalize an empty point set"));
    }
    let n = points.len() as f64;
    let cx = points.iter().map(|p| p[0]).sum::<f64>() / n;
    let cy = points.iter().map(|p| p[1]).sum::<f64>() / n;
    let mean = points.iter().map(|p| dist(*p, [cx, cy])).sum::<f64>() / n;
    if !(mean > 0.0) {
        return Err(Error::Degenerate("all points coincide".into()));
    }
    let s = std::f64::consts::SQRT_2 / mean;
    let t = Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0);
    let moved = points.iter().map(|p| [s * (p[0] - cx), s * (p[1] - cy)]).collect();
    Ok((moved, t))
}

fn triangle_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])).abs()
}

/// Least-squares homography mapping each `x` onto its `x_prev`.
pub fn dlt_homography(corrs: &[Correspondence]) -> Result<Homography> {
    let n = corrs.len();
    if n < 4 {
        return Err(Error::invalid(format!("need at least 4 correspondences, got {n}")));
    }
    if n == 4 {
        for i in 0..4 {
            for j in i + 1..4 {
                for k in j + 1..4 {
                    if triangle_area(corrs[i].x, corrs[j].x, corrs[k].x) < COLLINEAR_TOLERANCE {
                        return Err(Error::Degenerate("three source points are collinear".into()));
                    }
                }
            }
        }
    }
    let src: Vec<Point> = corrs.iter().map(|c| c.x).collect();
    let dst: Vec<Point> = corrs.iter().map(|c| c.x_prev).collect();
    let (src, t_src) = normalize_points(&src)?;
    let (dst, t_dst) = normalize_points(&dst)?;

    // Padding to at least 9 rows keeps the null direction in V^T.
    let rows = (2 * n).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (k, (p, q)) in src.iter().zip(&dst).enumerate() {
        let ([x, y], [u, v]) = (*p, *q);
        let r = 2 * k;
        a.row_mut(r).copy_from_slice(&[0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]);
        a.row_mut(r + 1).copy_from_slice(&[x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, -u]);
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let (smallest, second) = (order[0], order[1]);
    let largest = svd.singular_values[order[order.len() - 1]];
    if svd.singular_values[second] <= 1e-9 * largest {
        return Err(Error::Degenerate("DLT system is rank deficient".into()));
    }
    let h = v_t.row(smallest);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let t_dst_inv = t_dst.try_inverse().expect("similarity transforms are invertible");
    Homography::new(t_dst_inv * hn * t_src)
}

/// `|x_prev - H x| + |x - H^-1 x_prev|` in pixels.
pub fn symmetric_transfer_error(h: &Homography, c: &Correspondence) -> Result<f64> {
    let forward = dist(c.x_prev, h.apply(c.x)?);
    let backward = dist(c.x, h.inverse().apply(c.x_prev)?);
    Ok(forward + backward)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacParams {
    pub inlier_tolerance: f64,
    pub success_prob: f64,
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        RansacParams {
            inlier_tolerance: 3.0,
            success_prob: 0.99,
            max_iterations: 2000,
            seed: 0,
        }
    }
}

impl RansacParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.inlier_tolerance > 0.0 && self.inlier_tolerance.is_finite()) {
            return Err(Error::invalid(format!("inlier_tolerance must be > 0: {}", self.inlier_tolerance)));
        }
        if !(self.success_prob > 0.0 && self.success_prob < 1.0) {
            return Err(Error::invalid(format!("success_prob must lie in (0, 1): {}", self.success_prob)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacFit {
    pub homography: Homography,
    /// Indices into the input, ascending.
    pub inliers: Vec<usize>,
    /// Samples drawn, degenerate ones included.
    pub iterations: usize,
    /// Inlier count of every non-degenerate sampled model, in draw order.
    pub sample_inlier_counts: Vec<usize>,
}

fn inliers_of(h: &Homography, corrs: &[Correspondence], tolerance: f64) -> Vec<usize> {
    let inv = h.inverse();
    corrs
        .iter()
        .enumerate()
        .filter(|(_, c)| {
            let fwd = h.apply(c.x).map(|p| dist(c.x_prev, p));
            let bwd = inv.apply(c.x_prev).map(|p| dist(c.x, p));
            matches!((fwd, bwd), (Ok(a), Ok(b)) if a + b < tolerance)
        })
        .map(|(i, _)| i)
        .collect()
}

/// Iterations needed to draw one all-inlier sample with probability `p`
/// when a fraction `w` of the data are inliers.
fn adaptive_iterations(p: f64, w: f64, cap: usize) -> usize {
    let miss = 1.0 - w.powi(4);
    if miss <= 0.0 {
        return 1;
    }
    if miss >= 1.0 {
        return cap;
    }
    let n = ((1.0 - p).ln() / miss.ln()).ceil();
    if n.is_finite() && n < cap as f64 {
        (n as usize).max(1)
    } else {
        cap
    }
}

/// Robust homography fit. The final model is refit on all inliers of the
/// best sample; should the refit admit fewer inliers, the sample model is
/// kept instead.
pub fn ransac_homography(corrs: &[Correspondence], params: &RansacParams) -> Result<RansacFit> {
    params.validate()?;
    let n = corrs.len();
    if n < 4 {
        return Err(Error::invalid(format!("need at least 4 correspondences, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<(Homography, Vec<usize>)> = None;
    let mut counts = Vec::new();
    let mut required = params.max_iterations;
    let mut iterations = 0;
    while iterations < required {
        iterations += 1;
        let mut idx = rand::seq::index::sample(&mut rng, n, 4).into_vec();
        idx.sort_unstable();
        let sample: Vec<Correspondence> = idx.iter().map(|&i| corrs[i]).collect();
        let Ok(h) = dlt_homography(&sample) else {
            continue;
        };
        let inl = inliers_of(&h, corrs, params.inlier_tolerance);
        counts.push(inl.len());
        if best.as_ref().is_none_or(|(_, b)| inl.len() > b.len()) {
            let w = inl.len() as f64 / n as f64;
            required = adaptive_iterations(params.success_prob, w, params.max_iterations).max(iterations);
            best = Some((h, inl));
        }
    }
    let (h, inl) = match best {
        Some((h, inl)) if inl.len() >= 4 => (h, inl),
        _ => {
            return Err(Error::Degenerate(
                "no RANSAC sample produced at least 4 inliers".into(),
            ))
        }
    };
    let subset: Vec<Correspondence> = inl.iter().map(|&i| corrs[i]).collect();
    let (homography, inliers) = match dlt_homography(&subset) {
        Ok(refit) => {
            let refit_inl = inliers_of(&refit, corrs, params.inlier_tolerance);
            if refit_inl.len() >= inl.len() {
                (refit, refit_inl)
            } else {
                (h, inl)
            }
        }
        Err(_) => (h, inl),
    };
    Ok(RansacFit {
        homography,
        inliers,
        iterations,
        sample_inlier_counts: counts,
    })
}

/// Samples the backward flow on a regular grid starting at the origin.
pub fn correspondences_from_flow(flow: &FlowField, stride: usize) -> Vec<Correspondence> {
    let stride = stride.max(1);
    let (w, h) = flow.dims();
    let mut out = Vec::new();
    for y in (0..h).step_by(stride) {
        for x in (0..w).step_by(stride) {
            let (u, v) = flow.get(x, y);
            let p = [x as f64, y as f64];
            out.push(Correspondence {
                x: p,
                x_prev: [p[0] + f64::from(u), p[1] + f64::from(v)],
            });
        }
    }
    out
}

/// Distance between where the flow sends each pixel and where the homography
/// sends it, min-max normalized.
pub fn residual_motion_map(flow: &FlowField, h: &Homography) -> Result<ScalarMap> {
    let (w, ht) = flow.dims();
    let mut raw = Vec::with_capacity(w * ht);
    for y in 0..ht {
        for x in 0..w {
            let (u, v) = flow.get(x, y);
            let p = [x as f64, y as f64];
            let r = dist([p[0] + f64::from(u), p[1] + f64::from(v)], h.apply(p)?);
            raw.push(if r < RESIDUAL_FLOOR { 0.0 } else { r });
        }
    }
    let map = ScalarMap::new(w, ht, normalize_min_max(&raw))?;
    check_dims("residual_motion_map", flow.dims(), map.dims())?;
    Ok(map)
}

/// Residual map against the RANSAC background homography. Frames too small
/// for the default grid are sampled densely.
pub fn residual_saliency(flow: &FlowField) -> Result<ScalarMap> {
    let mut corrs = correspondences_from_flow(flow, DEFAULT_GRID_STRIDE);
    if corrs.len() < 16 {
        corrs = correspondences_from_flow(flow, 1);
    }
    let fit = ransac_homography(&corrs, &RansacParams::default())?;
    residual_motion_map(flow, &fit.homography)
}
