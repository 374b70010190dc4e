//! Optical flow I/O, a block-matching flow baseline, and backward warping.
//!
//! Flow files use the Middlebury `.flo` layout: the float `202021.25`
//! (bytes `PIEH`), width and height as little-endian `i32`, then interleaved
//! little-endian `f32` pairs `(u, v)` in row-major order.

use std::path::Path;

use rayon::prelude::*;

use crate::error::{check_dims, Error, Result};
use crate::model::{BinaryMask, FlowField, Frame, ScalarMap};

const FLO_MAGIC: [u8; 4] = *b"PIEH";
const FLO_HEADER_LEN: usize = 12;

pub fn read_flo(bytes: &[u8]) -> Result<FlowField> {
    if bytes.len() < 4 || bytes[..4] != FLO_MAGIC {
        return Err(Error::FlowFormat("not a flow file".into()));
    }
    if bytes.len() < FLO_HEADER_LEN {
        return Err(Error::FlowFormat("unexpected end of flow data".into()));
    }
    let width = i32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let height = i32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if width <= 0 || height <= 0 {
        return Err(Error::FlowFormat(format!(
            "invalid flow dimensions {width}x{height}"
        )));
    }
    let (width, height) = (width as usize, height as usize);
    let n = width
        .checked_mul(height)
        .ok_or_else(|| Error::FlowFormat("flow dimensions overflow".into()))?;
    let payload = &bytes[FLO_HEADER_LEN..];
    if payload.len() < n * 8 {
        return Err(Error::FlowFormat("unexpected end of flow data".into()));
    }
    if payload.len() > n * 8 {
        return Err(Error::FlowFormat(format!(
            "{} trailing bytes after flow data",
            payload.len() - n * 8
        )));
    }
    let mut u = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    for (i, pair) in payload.chunks_exact(8).enumerate() {
        let a = f32::from_le_bytes(pair[..4].try_into().unwrap());
        let b = f32::from_le_bytes(pair[4..].try_into().unwrap());
        if !a.is_finite() || !b.is_finite() {
            return Err(Error::FlowFormat(format!(
                "invalid flow sample at ({},{})",
                i % width,
                i / width
            )));
        }
        u.push(a);
        v.push(b);
    }
    FlowField::new(width, height, u, v)
}

pub fn write_flo(flow: &FlowField) -> Vec<u8> {
    let n = flow.width() * flow.height();
    let mut out = Vec::with_capacity(FLO_HEADER_LEN + n * 8);
    out.extend_from_slice(&FLO_MAGIC);
    out.extend_from_slice(&(flow.width() as i32).to_le_bytes());
    out.extend_from_slice(&(flow.height() as i32).to_le_bytes());
    for (a, b) in flow.u().iter().zip(flow.v()) {
        out.extend_from_slice(&a.to_le_bytes());
        out.extend_from_slice(&b.to_le_bytes());
    }
    out
}

pub fn load_flo(path: &Path) -> Result<FlowField> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_flo(&bytes).map_err(|e| match e {
        Error::FlowFormat(msg) => Error::FlowFormat(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn save_flo(path: &Path, flow: &FlowField) -> Result<()> {
    std::fs::write(path, write_flo(flow)).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockCost {
    /// Sum of absolute differences.
    Sad,
    /// Sum of squared differences.
    Ssd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockMatchParams {
    pub block_size: usize,
    pub search_radius: usize,
    pub cost: BlockCost,
}

impl Default for BlockMatchParams {
    fn default() -> Self {
        BlockMatchParams {
            block_size: 5,
            search_radius: 4,
            cost: BlockCost::Sad,
        }
    }
}

impl BlockMatchParams {
    fn validate(&self, width: usize, height: usize) -> Result<()> {
        if self.block_size < 3 || self.block_size.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "block_size must be odd and >= 3, got {}",
                self.block_size
            )));
        }
        if self.search_radius == 0 {
            return Err(Error::invalid("search_radius must be >= 1"));
        }
        if self.block_size > width || self.block_size > height {
            return Err(Error::invalid(format!(
                "block of {} px does not fit a {width}x{height} frame",
                self.block_size
            )));
        }
        Ok(())
    }
}

/// Candidate displacements ordered by the tie-break rule: smallest squared
/// magnitude, then smallest `u`, then smallest `v`.
fn search_order(radius: i64) -> Vec<(i64, i64)> {
    let mut cands: Vec<(i64, i64)> = (-radius..=radius)
        .flat_map(|du| (-radius..=radius).map(move |dv| (du, dv)))
        .collect();
    cands.sort_by_key(|&(du, dv)| (du * du + dv * dv, du, dv));
    cands
}

/// Integer-precision backward flow by exhaustive block matching.
///
/// For every pixel `p` of `cur` the returned vector `d` minimizes the block
/// cost between `cur` around `p` and `prev` around `p + d`, with `p + d`
/// inside `prev`. Block samples outside the frame are clamped to the border.
pub fn estimate_flow(prev: &Frame, cur: &Frame, params: &BlockMatchParams) -> Result<FlowField> {
    check_dims("estimate_flow", prev.dims(), cur.dims())?;
    let (w, h) = cur.dims();
    params.validate(w, h)?;
    let half = (params.block_size / 2) as i64;
    let cands = search_order(params.search_radius as i64);
    let (wi, hi) = (w as i64, h as i64);
    let px = |f: &Frame, x: i64, y: i64| -> [u8; 3] {
        f.rgb(x.clamp(0, wi - 1) as usize, y.clamp(0, hi - 1) as usize)
    };

    let rows: Vec<Vec<(f32, f32)>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let y = y as i64;
            (0..wi)
                .map(|x| {
                    let mut best: Option<(u64, i64, i64)> = None;
                    for &(du, dv) in &cands {
                        let (mx, my) = (x + du, y + dv);
                        if mx < 0 || my < 0 || mx >= wi || my >= hi {
                            continue;
                        }
                        let mut cost = 0u64;
                        for oy in -half..=half {
                            for ox in -half..=half {
                                let a = px(cur, x + ox, y + oy);
                                let b = px(prev, mx + ox, my + oy);
                                for c in 0..3 {
                                    let d = (i64::from(a[c]) - i64::from(b[c])).unsigned_abs();
                                    cost += match params.cost {
                                        BlockCost::Sad => d,
                                        BlockCost::Ssd => d * d,
                                    };
                                }
                            }
                        }
                        if best.is_none_or(|(c, _, _)| cost < c) {
                            best = Some((cost, du, dv));
                        }
                    }
                    let (_, du, dv) = best.expect("zero displacement is always a candidate");
                    (du as f32, dv as f32)
                })
                .collect()
        })
        .collect();

    let mut u = Vec::with_capacity(w * h);
    let mut v = Vec::with_capacity(w * h);
    for (a, b) in rows.into_iter().flatten() {
        u.push(a);
        v.push(b);
    }
    FlowField::new(w, h, u, v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WarpSampling {
    Nearest,
    #[default]
    Bilinear,
}

/// Gathers `map` through backward flow: `out(p) = map(p + flow(p))`.
///
/// Samples outside the source domain read as 0.
pub fn warp_scalar_map(map: &ScalarMap, flow: &FlowField, sampling: WarpSampling) -> Result<ScalarMap> {
    check_dims("warp_scalar_map", map.dims(), flow.dims())?;
    let (w, h) = map.dims();
    let src = map.values();
    let values = (0..w * h)
        .map(|i| {
            let (x, y) = ((i % w) as f64, (i / w) as f64);
            let sx = x + f64::from(flow.u()[i]);
            let sy = y + f64::from(flow.v()[i]);
            match sampling {
                WarpSampling::Nearest => nearest_index(sx, sy, w, h).map_or(0.0, |j| src[j]),
                WarpSampling::Bilinear => bilinear(src, w, h, sx, sy),
            }
        })
        .collect();
    Ok(ScalarMap::from_raw(w, h, values))
}

/// Nearest-neighbour gather of a binary mask through backward flow.
pub fn warp_mask(mask: &BinaryMask, flow: &FlowField) -> Result<BinaryMask> {
    check_dims("warp_mask", mask.dims(), flow.dims())?;
    let (w, h) = mask.dims();
    let src = mask.labels();
    let labels = (0..w * h)
        .map(|i| {
            let sx = (i % w) as f64 + f64::from(flow.u()[i]);
            let sy = (i / w) as f64 + f64::from(flow.v()[i]);
            nearest_index(sx, sy, w, h).map_or(0, |j| src[j])
        })
        .collect();
    Ok(BinaryMask::from_raw(w, h, labels))
}

fn nearest_index(sx: f64, sy: f64, w: usize, h: usize) -> Option<usize> {
    let (rx, ry) = (sx.round(), sy.round());
    if rx < 0.0 || ry < 0.0 || rx >= w as f64 || ry >= h as f64 {
        return None;
    }
    Some(ry as usize * w + rx as usize)
}

fn bilinear(src: &[f64], w: usize, h: usize, sx: f64, sy: f64) -> f64 {
    if sx < 0.0 || sy < 0.0 || sx > (w - 1) as f64 || sy > (h - 1) as f64 {
        return 0.0;
    }
    let x0 = sx.floor() as usize;
    let y0 = sy.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = sx - x0 as f64;
    let fy = sy - y0 as f64;
    let at = |x: usize, y: usize| src[y * w + x];
    let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
    let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
    top * (1.0 - fy) + bottom * fy
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn textured(w: usize, h: usize, seed: u64) -> Frame {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Frame::from_fn(w, h, |_, _| [rng.gen(), rng.gen(), rng.gen()])
    }

    #[test]
    fn read_hand_encoded_one_pixel_file() {
        // 202021.25f32 == 0x4849_4550 -> "PIEH" little-endian.
        let mut bytes = vec![0x50, 0x49, 0x45, 0x48];
        bytes.extend_from_slice(&[1, 0, 0, 0, 1, 0, 0, 0]);
        bytes.extend_from_slice(&[0x00, 0x00, 0xC0, 0x3F]); // 1.5
        bytes.extend_from_slice(&[0x00, 0x00, 0x00, 0xC0]); // -2.0
        assert_eq!(202021.25f32.to_le_bytes(), *b"PIEH");
        assert_eq!(bytes.len(), 20);
        let flow = read_flo(&bytes).unwrap();
        assert_eq!(flow.dims(), (1, 1));
        assert_eq!(flow.u(), &[1.5]);
        assert_eq!(flow.v(), &[-2.0]);
        assert_eq!(write_flo(&flow), bytes);
    }

    #[test]
    fn format_errors() {
        let err = read_flo(b"XXXX\x01\0\0\0\x01\0\0\0\0\0\0\0\0\0\0\0").unwrap_err();
        assert_eq!(err.to_string(), "not a flow file");
        let mut bytes = write_flo(&FlowField::zeros(2, 2));
        bytes.truncate(bytes.len() - 3);
        assert_eq!(read_flo(&bytes).unwrap_err().to_string(), "unexpected end of flow data");
        let mut bytes = write_flo(&FlowField::zeros(2, 1));
        bytes[20..24].copy_from_slice(&f32::INFINITY.to_le_bytes());
        assert_eq!(read_flo(&bytes).unwrap_err().to_string(), "invalid flow sample at (1,0)");
    }

    #[test]
    fn write_sizes() {
        let zero = write_flo(&FlowField::zeros(1, 1));
        assert_eq!(zero.len(), 20);
        assert!(zero[12..].iter().all(|&b| b == 0));
        assert_eq!(write_flo(&FlowField::zeros(2, 1)).len(), 28);
    }

    proptest! {
        #[test]
        fn flo_byte_round_trip(w in 1usize..6, h in 1usize..6, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let flow = FlowField::from_fn(w, h, |_, _| (rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0)));
            let bytes = write_flo(&flow);
            let back = read_flo(&bytes).unwrap();
            prop_assert_eq!(&back, &flow);
            prop_assert_eq!(write_flo(&back), bytes);
        }

        #[test]
        fn warp_mask_matches_scalar_path(w in 2usize..9, h in 2usize..9, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mask = BinaryMask::from_fn(w, h, |_, _| rng.gen_bool(0.4));
            let flow = FlowField::from_fn(w, h, |_, _| (rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0)));
            let direct = warp_mask(&mask, &flow).unwrap();
            let scalar = warp_scalar_map(&mask.to_scalar(), &flow, WarpSampling::Nearest).unwrap();
            let via = BinaryMask::from_fn(w, h, |x, y| scalar.get(x, y) >= 0.5);
            prop_assert_eq!(direct, via);
        }

        #[test]
        fn integer_translation_is_exact(tx in -3i32..4, ty in -3i32..4, seed in any::<u64>()) {
            let (w, h) = (8usize, 7usize);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let map = ScalarMap::from_fn(w, h, |_, _| rng.gen_range(0.0..1.0));
            let flow = FlowField::uniform(w, h, tx as f32, ty as f32);
            for sampling in [WarpSampling::Nearest, WarpSampling::Bilinear] {
                let out = warp_scalar_map(&map, &flow, sampling).unwrap();
                for y in 0..h as i32 {
                    for x in 0..w as i32 {
                        let (sx, sy) = (x + tx, y + ty);
                        let expected = if sx >= 0 && sy >= 0 && sx < w as i32 && sy < h as i32 {
                            map.get(sx as usize, sy as usize)
                        } else {
                            0.0
                        };
                        prop_assert_eq!(out.get(x as usize, y as usize), expected);
                    }
                }
            }
        }

        #[test]
        fn constant_map_is_warp_invariant(seed in any::<u64>(), c in 0.0f64..1.0) {
            let (w, h) = (9usize, 9usize);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // Flow that keeps every sample inside the frame.
            let flow = FlowField::from_fn(w, h, |x, y| {
                let tx = rng.gen_range(0.0..(w - 1) as f32);
                let ty = rng.gen_range(0.0..(h - 1) as f32);
                (tx - x as f32, ty - y as f32)
            });
            let map = ScalarMap::filled(w, h, c);
            for sampling in [WarpSampling::Nearest, WarpSampling::Bilinear] {
                let out = warp_scalar_map(&map, &flow, sampling).unwrap();
                for &v in out.values() {
                    prop_assert!((v - c).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn warp_examples() {
        let map = ScalarMap::from_fn(6, 6, |x, y| if (x, y) == (3, 3) { 1.0 } else { 0.0 });
        let id = warp_scalar_map(&map, &FlowField::zeros(6, 6), WarpSampling::Bilinear).unwrap();
        assert_eq!(id, map);

        let out = warp_scalar_map(&map, &FlowField::uniform(6, 6, 1.0, 0.0), WarpSampling::Nearest).unwrap();
        let ones: Vec<_> = (0..36).filter(|&i| out.values()[i] == 1.0).collect();
        assert_eq!(ones, vec![3 * 6 + 2]);

        let away = warp_scalar_map(&ScalarMap::filled(6, 6, 1.0), &FlowField::uniform(6, 6, 100.0, 0.0), WarpSampling::Bilinear).unwrap();
        assert!(away.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn warp_mask_examples() {
        let m = BinaryMask::from_fn(5, 5, |x, y| x == 2 && y == 2);
        assert_eq!(warp_mask(&m, &FlowField::zeros(5, 5)).unwrap(), m);
        let up = warp_mask(&m, &FlowField::uniform(5, 5, 0.0, 1.0)).unwrap();
        assert_eq!(up, BinaryMask::from_fn(5, 5, |x, y| x == 2 && y == 1));
        let ones = BinaryMask::ones(5, 5);
        let flow = FlowField::from_fn(5, 5, |x, _| (if x > 2 { -1.0 } else { 1.0 }, 0.0));
        assert_eq!(warp_mask(&ones, &flow).unwrap(), ones);
        assert!(warp_mask(&m, &FlowField::zeros(4, 5)).is_err());
    }

    #[test]
    fn block_matching_static_and_shifted() {
        let prev = textured(24, 20, 7);
        let p = BlockMatchParams { block_size: 5, search_radius: 3, cost: BlockCost::Sad };
        let flow = estimate_flow(&prev, &prev, &p).unwrap();
        assert!(flow.u().iter().chain(flow.v()).all(|&c| c == 0.0));

        // cur(x, y) = prev(x - 2, y): content moved right by two pixels.
        let cur = Frame::from_fn(24, 20, |x, y| prev.rgb(x.saturating_sub(2), y));
        for cost in [BlockCost::Sad, BlockCost::Ssd] {
            let flow = estimate_flow(&prev, &cur, &BlockMatchParams { cost, ..p }).unwrap();
            for y in 3..17 {
                for x in 5..21 {
                    assert_eq!(flow.get(x, y), (-2.0, 0.0), "at ({x},{y})");
                }
            }
        }
    }

    #[test]
    fn block_matching_constant_frames_tie_to_zero() {
        let f = Frame::from_fn(10, 10, |_, _| [80, 80, 80]);
        let flow = estimate_flow(&f, &f, &BlockMatchParams::default()).unwrap();
        assert!(flow.u().iter().chain(flow.v()).all(|&c| c == 0.0));
    }

    #[test]
    fn block_matching_rejects_bad_params() {
        let f = textured(8, 8, 1);
        let even = BlockMatchParams { block_size: 4, ..Default::default() };
        assert!(estimate_flow(&f, &f, &even).is_err());
        let huge = BlockMatchParams { block_size: 9, ..Default::default() };
        assert!(estimate_flow(&f, &f, &huge).is_err());
        assert!(estimate_flow(&f, &textured(9, 8, 1), &BlockMatchParams::default()).is_err());
    }

    #[test]
    fn search_order_tie_break() {
        let order = search_order(1);
        assert_eq!(order[0], (0, 0));
        assert_eq!(&order[1..5], &[(-1, 0), (0, -1), (0, 1), (1, 0)]);
    }
}
