//! Salient motion maps computed on optical flow.
//!
//! The default source is the minimum barrier distance (MBD) of every pixel
//! to the image boundary in a 3-channel flow feature space. The barrier of
//! a path is the largest per-channel spread `max - min` of the features
//! along it; the distance of a pixel is the smallest barrier over all
//! 4-connected paths reaching a seed.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{normalize_min_max, FlowField, PipelineConfig, SaliencySource, ScalarMap};

/// Raster passes used by the pipeline's MBD source.
pub const DEFAULT_MBD_PASSES: usize = 3;

/// Largest image handled by [`exact_barrier_distance`].
pub const EXACT_MBD_MAX_PIXELS: usize = 256;

/// Largest image handled by [`global_contrast`].
pub const GLOBAL_CONTRAST_MAX_PIXELS: usize = 16384;

const EXACT_MBD_MAX_CORNERS: usize = 1 << 16;

/// Per-pixel flow features, each channel in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureImage {
    width: usize,
    height: usize,
    data: Vec<[f64; 3]>,
}

impl FeatureImage {
    pub fn new(width: usize, height: usize, data: Vec<[f64; 3]>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::invalid(format!(
                "feature image of {} pixels does not match {width}x{height}",
                data.len()
            )));
        }
        if data
            .iter()
            .flatten()
            .any(|v| !v.is_finite() || !(0.0..=1.0).contains(v))
        {
            return Err(Error::invalid("feature values must lie in [0, 1]"));
        }
        Ok(FeatureImage {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[[f64; 3]] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.data[y * self.width + x]
    }

    pub fn transposed(&self) -> FeatureImage {
        let (w, h) = self.dims();
        let mut data = Vec::with_capacity(w * h);
        for x in 0..w {
            for y in 0..h {
                data.push(self.get(x, y));
            }
        }
        FeatureImage {
            width: h,
            height: w,
            data,
        }
    }
}

/// Pixels whose barrier distance is zero by definition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedSet {
    width: usize,
    height: usize,
    indices: Vec<usize>,
}

impl SeedSet {
    pub fn new(width: usize, height: usize, points: &[(usize, usize)]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("seed set is empty"));
        }
        if let Some(&(x, y)) = points.iter().find(|&&(x, y)| x >= width || y >= height) {
            return Err(Error::invalid(format!(
                "seed ({x},{y}) outside {width}x{height}"
            )));
        }
        let mut indices: Vec<usize> = points.iter().map(|&(x, y)| y * width + x).collect();
        indices.sort_unstable();
        indices.dedup();
        Ok(SeedSet {
            width,
            height,
            indices,
        })
    }

    /// Every pixel on the image border.
    pub fn boundary(width: usize, height: usize) -> Self {
        let points: Vec<(usize, usize)> = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .filter(|&(x, y)| x == 0 || y == 0 || x + 1 == width || y + 1 == height)
            .collect();
        Self::new(width, height, &points).expect("boundary of a non-empty image")
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn transposed(&self) -> SeedSet {
        let points: Vec<(usize, usize)> = self
            .indices
            .iter()
            .map(|&i| (i / self.width, i % self.width))
            .collect();
        SeedSet::new(self.height, self.width, &points).unwrap()
    }
}

/// Channels `(u, v, |F|)`, each min-max normalized over the frame.
pub fn encode_flow_features(flow: &FlowField) -> FeatureImage {
    let (w, h) = flow.dims();
    let u: Vec<f64> = flow.u().iter().map(|&a| f64::from(a)).collect();
    let v: Vec<f64> = flow.v().iter().map(|&a| f64::from(a)).collect();
    let mag: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a.hypot(*b)).collect();
    let (u, v, mag) = (normalize_min_max(&u), normalize_min_max(&v), normalize_min_max(&mag));
    let data = (0..w * h).map(|i| [u[i], v[i], mag[i]]).collect();
    FeatureImage {
        width: w,
        height: h,
        data,
    }
}

fn check_seeds(feat: &FeatureImage, seeds: &SeedSet) -> Result<()> {
    crate::error::check_dims("seed set", feat.dims(), seeds.dims())?;
    if seeds.indices.is_empty() {
        return Err(Error::invalid("seed set is empty"));
    }
    Ok(())
}

/// Unnormalized raster-scan MBD distances.
///
/// Each round is one forward scan (predecessors left and up) followed by one
/// backward scan (predecessors right and down); `passes` rounds are run.
/// Every update only lowers a pixel's distance, so the result is pointwise
/// non-increasing in `passes`.
pub fn mbd_distances(feat: &FeatureImage, seeds: &SeedSet, passes: usize) -> Result<Vec<f64>> {
    check_seeds(feat, seeds)?;
    if passes == 0 {
        return Err(Error::invalid("mbd passes must be >= 1"));
    }
    let (w, h) = feat.dims();
    let f = &feat.data;
    let mut dist = vec![f64::INFINITY; w * h];
    let mut hi = f.clone();
    let mut lo = f.clone();
    for &s in &seeds.indices {
        dist[s] = 0.0;
    }

    let relax = |dist: &mut [f64], hi: &mut [[f64; 3]], lo: &mut [[f64; 3]], p: usize, q: usize| {
        if !dist[q].is_finite() {
            return;
        }
        let mut up = [0.0; 3];
        let mut down = [0.0; 3];
        let mut barrier = 0.0f64;
        for c in 0..3 {
            up[c] = hi[q][c].max(f[p][c]);
            down[c] = lo[q][c].min(f[p][c]);
            barrier = barrier.max(up[c] - down[c]);
        }
        if barrier < dist[p] {
            dist[p] = barrier;
            hi[p] = up;
            lo[p] = down;
        }
    };

    for _ in 0..passes {
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                if x > 0 {
                    relax(&mut dist, &mut hi, &mut lo, p, p - 1);
                }
                if y > 0 {
                    relax(&mut dist, &mut hi, &mut lo, p, p - w);
                }
            }
        }
        for y in (0..h).rev() {
            for x in (0..w).rev() {
                let p = y * w + x;
                if x + 1 < w {
                    relax(&mut dist, &mut hi, &mut lo, p, p + 1);
                }
                if y + 1 < h {
                    relax(&mut dist, &mut hi, &mut lo, p, p + w);
                }
            }
        }
    }
    debug_assert!(dist.iter().all(|d| d.is_finite()));
    Ok(dist)
}

/// Raster-scan MBD saliency, min-max normalized to `[0, 1]`.
pub fn mbd_saliency(feat: &FeatureImage, seeds: &SeedSet, passes: usize) -> Result<ScalarMap> {
    let dist = mbd_distances(feat, seeds, passes)?;
    Ok(ScalarMap::from_raw(
        feat.width,
        feat.height,
        normalize_min_max(&dist),
    ))
}

#[derive(PartialEq)]
struct HeapEntry(f64, usize);

impl Eq for HeapEntry {}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapEntry {
    // Min-heap on cost, then on index.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .0
            .total_cmp(&self.0)
            .then_with(|| other.1.cmp(&self.1))
    }
}

/// Unnormalized exact minimum barrier distances.
///
/// A path's barrier equals `max_c (max_c - low_c)` minimized over lower
/// bounds `low` that the path respects, so the exact distance is the minimum,
/// over every tuple of per-channel lower bounds drawn from the image's
/// values, of a minimax path cost restricted to pixels above the bounds.
/// Cost grows with the product of distinct values per channel.
pub fn exact_barrier_distances(feat: &FeatureImage, seeds: &SeedSet) -> Result<Vec<f64>> {
    check_seeds(feat, seeds)?;
    let (w, h) = feat.dims();
    let n = w * h;
    if n > EXACT_MBD_MAX_PIXELS {
        return Err(Error::TooLarge(format!(
            "exact barrier distance supports at most {EXACT_MBD_MAX_PIXELS} pixels, got {n}"
        )));
    }
    let levels: Vec<Vec<f64>> = (0..3)
        .map(|c| {
            let mut vals: Vec<f64> = feat.data.iter().map(|p| p[c]).collect();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            vals
        })
        .collect();
    let corners = levels.iter().map(Vec::len).product::<usize>();
    if corners > EXACT_MBD_MAX_CORNERS {
        return Err(Error::TooLarge(format!(
            "exact barrier distance would enumerate {corners} lower-bound tuples"
        )));
    }

    let mut best = vec![f64::INFINITY; n];
    let mut cost = vec![f64::INFINITY; n];
    let mut heap = BinaryHeap::new();
    for &l0 in &levels[0] {
        for &l1 in &levels[1] {
            for &l2 in &levels[2] {
                let low = [l0, l1, l2];
                let weight = |q: usize| -> Option<f64> {
                    let v = feat.data[q];
                    if (0..3).any(|c| v[c] < low[c]) {
                        None
                    } else {
                        Some((0..3).map(|c| v[c] - low[c]).fold(0.0, f64::max))
                    }
                };
                cost.fill(f64::INFINITY);
                heap.clear();
                for &s in &seeds.indices {
                    if let Some(ws) = weight(s) {
                        cost[s] = ws;
                        heap.push(HeapEntry(ws, s));
                    }
                }
                while let Some(HeapEntry(c, p)) = heap.pop() {
                    if c > cost[p] {
                        continue;
                    }
                    let (x, y) = (p % w, p / w);
                    let mut nbrs = [usize::MAX; 4];
                    if x > 0 {
                        nbrs[0] = p - 1;
                    }
                    if x + 1 < w {
                        nbrs[1] = p + 1;
                    }
                    if y > 0 {
                        nbrs[2] = p - w;
                    }
                    if y + 1 < h {
                        nbrs[3] = p + w;
                    }
                    for q in nbrs.into_iter().filter(|&q| q != usize::MAX) {
                        if let Some(wq) = weight(q) {
                            let nc = c.max(wq);
                            if nc < cost[q] {
                                cost[q] = nc;
                                heap.push(HeapEntry(nc, q));
                            }
                        }
                    }
                }
                for (b, &c) in best.iter_mut().zip(&cost) {
                    *b = b.min(c);
                }
            }
        }
    }
    // Seeds are zero-length paths.
    for &s in &seeds.indices {
        best[s] = 0.0;
    }
    debug_assert!(best.iter().all(|d| d.is_finite()));
    Ok(best)
}

/// Exact minimum barrier distance, normalized like [`mbd_saliency`].
pub fn exact_barrier_distance(feat: &FeatureImage, seeds: &SeedSet) -> Result<ScalarMap> {
    let dist = exact_barrier_distances(feat, seeds)?;
    Ok(ScalarMap::from_raw(
        feat.width,
        feat.height,
        normalize_min_max(&dist),
    ))
}

/// Sum of Euclidean feature distances from each pixel to every pixel,
/// min-max normalized. Quadratic in the pixel count.
pub fn global_contrast(feat: &FeatureImage) -> Result<ScalarMap> {
    let n = feat.data.len();
    if n > GLOBAL_CONTRAST_MAX_PIXELS {
        return Err(Error::TooLarge(format!(
            "global contrast supports at most {GLOBAL_CONTRAST_MAX_PIXELS} pixels, got {n}"
        )));
    }
    let data = &feat.data;
    let sums: Vec<f64> = data
        .par_iter()
        .map(|a| {
            data.iter()
                .map(|b| {
                    let d: f64 = (0..3).map(|c| (a[c] - b[c]).powi(2)).sum();
                    d.sqrt()
                })
                .sum()
        })
        .collect();
    Ok(ScalarMap::from_raw(
        feat.width,
        feat.height,
        normalize_min_max(&sums),
    ))
}

/// Salient motion map of a backward flow field, using the configured source.
pub fn salient_motion_map(flow: &FlowField, cfg: &PipelineConfig) -> Result<ScalarMap> {
    match cfg.saliency_source {
        SaliencySource::Mbd => {
            let feat = encode_flow_features(flow);
            let seeds = SeedSet::boundary(feat.width, feat.height);
            mbd_saliency(&feat, &seeds, DEFAULT_MBD_PASSES)
        }
        SaliencySource::GlobalContrast => global_contrast(&encode_flow_features(flow)),
        SaliencySource::HomographyResidual => crate::geometry::residual_saliency(flow),
    }
}
