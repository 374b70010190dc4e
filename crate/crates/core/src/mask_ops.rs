//! Multi-level Otsu binarization, disk dilation and mask fusion.

use crate::error::{check_dims, Error, Result};
use crate::model::{BinaryMask, ScalarMap, MAX_OTSU_LEVELS};

pub const HISTOGRAM_BINS: usize = 256;

/// Counts of a `[0, 1]` map quantized to 256 bins (`bin = floor(v * 255)`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Histogram256 {
    counts: [u64; HISTOGRAM_BINS],
}

impl Histogram256 {
    pub fn from_counts(counts: [u64; HISTOGRAM_BINS]) -> Self {
        Histogram256 { counts }
    }

    pub fn from_map(map: &ScalarMap) -> Self {
        let mut counts = [0u64; HISTOGRAM_BINS];
        for &v in map.values() {
            counts[bin_of(v)] += 1;
        }
        Histogram256 { counts }
    }

    pub fn counts(&self) -> &[u64; HISTOGRAM_BINS] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn occupied_bins(&self) -> impl Iterator<Item = usize> + '_ {
        (0..HISTOGRAM_BINS).filter(|&b| self.counts[b] > 0)
    }
}

pub fn bin_of(v: f64) -> usize {
    ((v * 255.0).floor().max(0.0) as usize).min(HISTOGRAM_BINS - 1)
}

/// Strictly increasing split points. Class `c` holds the bins in
/// `(t[c-1], t[c]]`; the last class holds everything above the largest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThresholdSet {
    thresholds: Vec<u8>,
    degenerate: bool,
}

impl ThresholdSet {
    pub fn thresholds(&self) -> &[u8] {
        &self.thresholds
    }

    pub fn largest(&self) -> u8 {
        *self.thresholds.last().expect("threshold set is non-empty")
    }

    /// True when the histogram had a single occupied bin.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }
}

struct Prefix {
    count: [u64; HISTOGRAM_BINS + 1],
    moment: [u64; HISTOGRAM_BINS + 1],
}

impl Prefix {
    fn new(hist: &Histogram256) -> Self {
        let mut count = [0u64; HISTOGRAM_BINS + 1];
        let mut moment = [0u64; HISTOGRAM_BINS + 1];
        for b in 0..HISTOGRAM_BINS {
            count[b + 1] = count[b] + hist.counts[b];
            moment[b + 1] = moment[b] + hist.counts[b] * b as u64;
        }
        Prefix { count, moment }
    }

    /// `s^2 / n` for the bins `lo..hi`; empty classes score zero.
    fn class_score(&self, lo: usize, hi: usize) -> f64 {
        let n = self.count[hi] - self.count[lo];
        if n == 0 {
            return 0.0;
        }
        let s = (self.moment[hi] - self.moment[lo]) as f64;
        s * s / n as f64
    }
}

/// Exhaustive multi-level Otsu.
///
/// Maximizing the between-class variance is equivalent to maximizing
/// `sum_c s_c^2 / n_c` (class sum and count), since the total mean is fixed.
/// Tuples are visited in lexicographic order and only a strictly better
/// score replaces the incumbent, so ties resolve to the smallest tuple.
pub fn otsu_thresholds(hist: &Histogram256, k: usize) -> Result<ThresholdSet> {
    if !(1..=MAX_OTSU_LEVELS).contains(&k) {
        return Err(Error::invalid(format!(
            "otsu levels must be in [1, {MAX_OTSU_LEVELS}], got {k}"
        )));
    }
    let mut occupied = hist.occupied_bins();
    let first = occupied
        .next()
        .ok_or_else(|| Error::invalid("histogram is empty"))?;
    if occupied.next().is_none() {
        let start = first.min(HISTOGRAM_BINS - 1 - k);
        return Ok(ThresholdSet {
            thresholds: (0..k).map(|i| (start + i) as u8).collect(),
            degenerate: true,
        });
    }

    let prefix = Prefix::new(hist);
    let mut current = vec![0usize; k];
    let mut best = (f64::NEG_INFINITY, vec![0usize; k]);
    search(&prefix, k, 0, 0, 0.0, &mut current, &mut best);
    Ok(ThresholdSet {
        thresholds: best.1.iter().map(|&t| t as u8).collect(),
        degenerate: false,
    })
}

fn search(
    prefix: &Prefix,
    k: usize,
    depth: usize,
    lo: usize,
    partial: f64,
    current: &mut [usize],
    best: &mut (f64, Vec<usize>),
) {
    if depth == k {
        let score = partial + prefix.class_score(lo, HISTOGRAM_BINS);
        if score > best.0 {
            best.0 = score;
            best.1.copy_from_slice(current);
        }
        return;
    }
    // Threshold t closes the class at bin t; leave room for the remaining ones.
    let first = if depth == 0 { 0 } else { current[depth - 1] + 1 };
    let last = HISTOGRAM_BINS - 1 - (k - depth);
    for t in first..=last {
        current[depth] = t;
        let score = partial + prefix.class_score(lo, t + 1);
        search(prefix, k, depth + 1, t + 1, score, current, best);
    }
}

/// Adaptive binarization: foreground is every pixel whose bin lies strictly
/// above the largest Otsu threshold. Single-bin maps (all-zero, constant)
/// are all background.
pub fn binarize(map: &ScalarMap, k: usize) -> Result<BinaryMask> {
    let (w, h) = map.dims();
    let hist = Histogram256::from_map(map);
    if hist.occupied_bins().nth(1).is_none() {
        return Ok(BinaryMask::zeros(w, h));
    }
    let top = usize::from(otsu_thresholds(&hist, k)?.largest());
    let labels = map
        .values()
        .iter()
        .map(|&v| u8::from(bin_of(v) > top))
        .collect();
    Ok(BinaryMask::from_raw(w, h, labels))
}

/// Half-widths of the rows of a disk of squared radius `radius_sq`.
fn disk_rows(radius_sq: f64) -> Vec<(i64, i64)> {
    let reach = radius_sq.max(0.0).sqrt().floor() as i64;
    (-reach..=reach)
        .filter_map(|dy| {
            let rest = radius_sq - (dy * dy) as f64;
            if rest < 0.0 {
                return None;
            }
            let mut hw = rest.sqrt().floor() as i64;
            while ((hw + 1) * (hw + 1)) as f64 <= rest {
                hw += 1;
            }
            while hw > 0 && (hw * hw) as f64 > rest {
                hw -= 1;
            }
            Some((dy, hw))
        })
        .collect()
}

pub(crate) fn dilate_disk(mask: &BinaryMask, radius: f64) -> BinaryMask {
    let (w, h) = mask.dims();
    let rows = disk_rows(radius * radius);
    let mut out = vec![0u8; w * h];
    let (wi, hi) = (w as i64, h as i64);
    for (i, _) in mask.labels().iter().enumerate().filter(|(_, &l)| l == 1) {
        let (x, y) = ((i % w) as i64, (i / w) as i64);
        for &(dy, hw) in &rows {
            let yy = y + dy;
            if yy < 0 || yy >= hi {
                continue;
            }
            let x0 = (x - hw).max(0);
            let x1 = (x + hw).min(wi - 1);
            let row = yy as usize * w;
            out[row + x0 as usize..=row + x1 as usize].fill(1);
        }
    }
    BinaryMask::from_raw(w, h, out)
}

/// Dilation by the Euclidean disk `dx^2 + dy^2 <= r^2`.
pub fn dilate(mask: &BinaryMask, r: usize) -> BinaryMask {
    if r == 0 {
        return mask.clone();
    }
    dilate_disk(mask, r as f64)
}

/// Dilated salient motion mask intersected with the objectness mask.
pub fn fuse(salient: &BinaryMask, objectness: &BinaryMask, r: usize) -> Result<BinaryMask> {
    check_dims("fuse", salient.dims(), objectness.dims())?;
    dilate(salient, r).and(objectness)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn hist_from(pairs: &[(usize, u64)]) -> Histogram256 {
        let mut counts = [0u64; 256];
        for &(b, c) in pairs {
            counts[b] = c;
        }
        Histogram256::from_counts(counts)
    }

    #[test]
    fn two_spikes_pick_smallest_separator() {
        let t = otsu_thresholds(&hist_from(&[(10, 5), (200, 5)]), 1).unwrap();
        assert_eq!(t.thresholds(), &[10]);
        let t = otsu_thresholds(&hist_from(&[(0, 3), (255, 3)]), 1).unwrap();
        assert_eq!(t.thresholds(), &[0]);
        assert!(!t.is_degenerate());
    }

    #[test]
    fn uniform_histogram_tri_split() {
        let t = otsu_thresholds(&Histogram256::from_counts([10; 256]), 2).unwrap();
        let th = t.thresholds();
        assert!((i32::from(th[0]) - 84).abs() <= 1, "{th:?}");
        assert!((i32::from(th[1]) - 169).abs() <= 1, "{th:?}");
    }

    #[test]
    fn degenerate_and_invalid_histograms() {
        let t = otsu_thresholds(&hist_from(&[(40, 9)]), 1).unwrap();
        assert!(t.is_degenerate());
        assert_eq!(t.thresholds(), &[40]);
        let t = otsu_thresholds(&hist_from(&[(255, 9)]), 3).unwrap();
        assert_eq!(t.thresholds(), &[252, 253, 254]);
        assert!(otsu_thresholds(&hist_from(&[]), 1).is_err());
        assert!(otsu_thresholds(&hist_from(&[(1, 1), (5, 1)]), 5).is_err());
        assert!(otsu_thresholds(&hist_from(&[(1, 1), (5, 1)]), 0).is_err());
    }

    #[test]
    fn binarize_examples() {
        let zero = ScalarMap::zeros(6, 5);
        assert!(binarize(&zero, 3).unwrap().is_all_background());
        let half = ScalarMap::filled(6, 5, 0.5);
        assert!(binarize(&half, 1).unwrap().is_all_background());
        let ones = ScalarMap::filled(6, 5, 1.0);
        assert!(binarize(&ones, 2).unwrap().is_all_background());

        let block = BinaryMask::from_fn(10, 10, |x, y| (3..7).contains(&x) && (2..5).contains(&y));
        for k in 1..=4 {
            assert_eq!(binarize(&block.to_scalar(), k).unwrap(), block, "k = {k}");
        }
    }

    #[test]
    fn dilate_examples() {
        let m = BinaryMask::from_fn(11, 11, |x, y| (x, y) == (5, 5));
        assert_eq!(dilate(&m, 0), m);
        let d = dilate(&m, 1);
        let expected = BinaryMask::from_fn(11, 11, |x, y| {
            matches!((x, y), (5, 5) | (4, 5) | (6, 5) | (5, 4) | (5, 6))
        });
        assert_eq!(d, expected);
        let ones = BinaryMask::ones(7, 4);
        assert_eq!(dilate(&ones, 3), ones);

        // Disk of radius 2 holds 13 pixels: dx^2 + dy^2 <= 4.
        assert_eq!(dilate(&m, 2).count(), 13);
        let big = BinaryMask::from_fn(15, 15, |x, y| (x, y) == (7, 7));
        assert_eq!(dilate(&big, 6).count(), 113);
    }

    #[test]
    fn fuse_examples() {
        let (w, h) = (12, 10);
        let zeros = BinaryMask::zeros(w, h);
        let ones = BinaryMask::ones(w, h);
        assert_eq!(fuse(&ones, &zeros, 4).unwrap(), zeros);
        let left = BinaryMask::from_fn(w, h, |x, _| x < w / 2);
        assert_eq!(fuse(&left, &ones, 0).unwrap(), left);
        let dot = BinaryMask::from_fn(w, h, |x, y| (x, y) == (5, 5));
        let col = BinaryMask::from_fn(w, h, |x, _| x == 6);
        assert_eq!(fuse(&dot, &col, 1).unwrap(), BinaryMask::from_fn(w, h, |x, y| (x, y) == (6, 5)));
        assert!(fuse(&dot, &BinaryMask::zeros(w + 1, h), 1).is_err());
    }

    fn random_mask(w: usize, h: usize, p: f64, seed: u64) -> BinaryMask {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        BinaryMask::from_fn(w, h, |_, _| rng.gen_bool(p))
    }

    proptest! {
        #[test]
        fn dilation_is_monotone(seed in any::<u64>(), r in 0usize..5) {
            let m = random_mask(15, 12, 0.05, seed);
            let a = dilate(&m, r);
            let b = dilate(&m, r + 1);
            prop_assert!(m.is_subset_of(&a));
            prop_assert!(a.is_subset_of(&b));
        }

        #[test]
        fn dilation_matches_definition(seed in any::<u64>(), r in 0usize..4) {
            let m = random_mask(9, 8, 0.08, seed);
            let d = dilate(&m, r);
            let r2 = (r * r) as i64;
            for y in 0..8i64 {
                for x in 0..9i64 {
                    let expected = (0..8i64).any(|qy| (0..9i64).any(|qx| {
                        m.get(qx as usize, qy as usize) && (x - qx).pow(2) + (y - qy).pow(2) <= r2
                    }));
                    prop_assert_eq!(d.get(x as usize, y as usize), expected);
                }
            }
        }

        #[test]
        fn fusion_stays_inside_objectness(s1 in any::<u64>(), s2 in any::<u64>(), r in 0usize..7) {
            let s = random_mask(16, 16, 0.1, s1);
            let o = random_mask(16, 16, 0.5, s2);
            let p = fuse(&s, &o, r).unwrap();
            prop_assert!(p.is_subset_of(&o));
            prop_assert_eq!(fuse(&s, &BinaryMask::ones(16, 16), 0).unwrap(), s.clone());
            prop_assert_eq!(fuse(&BinaryMask::ones(16, 16), &o, r).unwrap(), o);
        }

        #[test]
        fn binarize_depends_only_on_bins(seed in any::<u64>(), k in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let bins: Vec<usize> = (0..80).map(|_| rng.gen_range(0..256)).collect();
            let a = ScalarMap::new(10, 8, bins.iter().map(|&b| b as f64 / 255.0).collect()).unwrap();
            // Move every value elsewhere inside its own bin.
            let b = ScalarMap::new(10, 8, bins.iter().map(|&b| {
                if b == 255 { 1.0 } else { (b as f64 + rng.gen_range(0.0..0.999)) / 255.0 }
            }).collect()).unwrap();
            prop_assert_eq!(Histogram256::from_map(&a), Histogram256::from_map(&b));
            prop_assert_eq!(binarize(&a, k).unwrap(), binarize(&b, k).unwrap());
        }
    }

    #[test]
    fn histogram_binning() {
        assert_eq!(bin_of(0.0), 0);
        assert_eq!(bin_of(1.0), 255);
        assert_eq!(bin_of(0.5), 127);
        let map = ScalarMap::new(3, 1, vec![0.0, 1.0, 1.0]).unwrap();
        let h = Histogram256::from_map(&map);
        assert_eq!(h.total(), 3);
        assert_eq!(h.counts()[255], 2);
    }
}
