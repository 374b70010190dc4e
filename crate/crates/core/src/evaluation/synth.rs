//! Deterministic synthetic sequences: a textured red square translating over
//! a textured background, with optional "water" (a region whose texture and
//! flow change randomly every frame) and a static blue distractor that the
//! proposal files report as a confident object.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{save_flo, warp_mask};
use crate::io::{write_frame_png, write_mask_png};
use crate::model::{BinaryMask, FlowField, Frame};
use crate::objectness::{save_proposals, InstanceProposal, ProposalSet};
use crate::pipeline::{frame_id, DatasetLayout};

/// Chebyshev gap kept between the distractor and every square position.
const DISTRACTOR_MARGIN: i64 = 10;
const SQUARE_CONFIDENCE: f64 = 0.9;
const DISTRACTOR_CONFIDENCE: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicRegion {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
    /// Largest per-frame flow magnitude in pixels; each frame draws one
    /// vector with magnitude in `[amplitude / 2, amplitude]`.
    pub amplitude: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProposalNoise {
    /// The square's confidence is `0.9 - U(0, confidence_jitter)` per frame.
    pub confidence_jitter: f64,
    /// Pixels removed from each side of the square's proposal.
    pub erosion: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    pub width: usize,
    pub height: usize,
    pub frame_count: usize,
    pub square_size: usize,
    /// Displacement of the square per frame, `[dx, dy]`.
    pub velocity: [i64; 2],
    /// Top-left corner at frame 0; centers the trajectory when absent.
    pub origin: Option<[i64; 2]>,
    pub background_texture_seed: u64,
    pub dynamic_background: Option<DynamicRegion>,
    pub proposal_noise: ProposalNoise,
    /// Uniform noise in `[-flow_jitter, flow_jitter]` added to every written
    /// flow component.
    pub flow_jitter: f64,
    pub extra_static_object: bool,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            width: 64,
            height: 64,
            frame_count: 20,
            square_size: 16,
            velocity: [2, 1],
            origin: None,
            background_texture_seed: 0,
            dynamic_background: None,
            proposal_noise: ProposalNoise::default(),
            flow_jitter: 0.0,
            extra_static_object: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSequence {
    pub frames: Vec<Frame>,
    pub gt_masks: Vec<BinaryMask>,
    /// Backward flow of frame `t` at index `t`; `None` for frame 0.
    pub flows: Vec<Option<FlowField>>,
    pub proposals: Vec<ProposalSet>,
    pub distractor: Option<BinaryMask>,
    pub dynamic_region: Option<BinaryMask>,
}

#[derive(Clone, Copy)]
struct Rect {
    x: i64,
    y: i64,
    w: i64,
    h: i64,
}

impl Rect {
    fn contains(&self, x: usize, y: usize) -> bool {
        let (x, y) = (x as i64, y as i64);
        x >= self.x && x < self.x + self.w && y >= self.y && y < self.y + self.h
    }

    fn inside(&self, width: usize, height: usize) -> bool {
        self.x >= 0 && self.y >= 0 && self.x + self.w <= width as i64 && self.y + self.h <= height as i64
    }

    fn shrunk(&self, by: i64) -> Rect {
        Rect {
            x: self.x + by,
            y: self.y + by,
            w: (self.w - 2 * by).max(0),
            h: (self.h - 2 * by).max(0),
        }
    }

    fn mask(&self, width: usize, height: usize) -> BinaryMask {
        BinaryMask::from_fn(width, height, |x, y| self.contains(x, y))
    }
}

/// Independent random stream `k` derived from the scene seed.
fn stream(seed: u64, k: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng
}

fn jittered(rng: &mut ChaCha8Rng, lo: [u8; 3], hi: [u8; 3]) -> [u8; 3] {
    [0, 1, 2].map(|c| rng.gen_range(lo[c]..=hi[c]))
}

impl SynthParams {
    fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.frame_count == 0 || self.square_size == 0 {
            return Err(Error::invalid("width, height, frame_count and square_size must be positive"));
        }
        if !(self.flow_jitter >= 0.0 && self.flow_jitter.is_finite()) {
            return Err(Error::invalid(format!("flow_jitter must be >= 0: {}", self.flow_jitter)));
        }
        let jitter = self.proposal_noise.confidence_jitter;
        if !(0.0..=SQUARE_CONFIDENCE).contains(&jitter) {
            return Err(Error::invalid(format!("confidence_jitter must lie in [0, 0.9]: {jitter}")));
        }
        if let Some(d) = &self.dynamic_background {
            if d.x + d.width > self.width || d.y + d.height > self.height {
                return Err(Error::invalid("dynamic_background region leaves the frame"));
            }
            if !(d.amplitude >= 0.0 && d.amplitude.is_finite()) {
                return Err(Error::invalid(format!("dynamic_background amplitude must be >= 0: {}", d.amplitude)));
            }
        }
        Ok(())
    }

    fn square_at(&self, t: usize) -> Rect {
        let s = self.square_size as i64;
        let span = (self.frame_count as i64 - 1).max(0);
        let [vx, vy] = self.velocity;
        let origin = self.origin.unwrap_or_else(|| {
            // Center the bounding box of the whole trajectory.
            let center = |extent: usize, v: i64| {
                let travel = (v * span).abs();
                (extent as i64 - s - travel) / 2 + if v < 0 { travel } else { 0 }
            };
            [center(self.width, vx), center(self.height, vy)]
        });
        Rect {
            x: origin[0] + vx * t as i64,
            y: origin[1] + vy * t as i64,
            w: s,
            h: s,
        }
    }

    /// First distractor position, scanning from the bottom-right, that keeps
    /// the margin from every square position.
    fn distractor(&self) -> Result<Rect> {
        let s = self.square_size as i64;
        let squares: Vec<Rect> = (0..self.frame_count).map(|t| self.square_at(t)).collect();
        let clear = |c: &Rect| {
            squares.iter().all(|q| {
                c.x >= q.x + q.w + DISTRACTOR_MARGIN
                    || q.x >= c.x + c.w + DISTRACTOR_MARGIN
                    || c.y >= q.y + q.h + DISTRACTOR_MARGIN
                    || q.y >= c.y + c.h + DISTRACTOR_MARGIN
            })
        };
        for y in (0..=self.height as i64 - s).rev() {
            for x in (0..=self.width as i64 - s).rev() {
                let c = Rect { x, y, w: s, h: s };
                if clear(&c) {
                    return Ok(c);
                }
            }
        }
        Err(Error::invalid("no room for a static distractor away from the square's path"))
    }
}

pub fn synth_sequence(params: &SynthParams) -> Result<SynthSequence> {
    params.validate()?;
    let (w, h) = (params.width, params.height);
    for t in 0..params.frame_count {
        if !params.square_at(t).inside(w, h) {
            return Err(Error::invalid(format!("square leaves the frame at frame {t}")));
        }
    }
    let seed = params.background_texture_seed;
    let mut tex = stream(seed, 0);
    let background: Vec<[u8; 3]> = (0..w * h).map(|_| jittered(&mut tex, [40, 60, 40], [120, 160, 120])).collect();
    let s = params.square_size;
    let square_tex: Vec<[u8; 3]> = (0..s * s).map(|_| jittered(&mut tex, [200, 20, 20], [240, 50, 50])).collect();
    let distractor = if params.extra_static_object {
        Some(params.distractor()?)
    } else {
        None
    };
    let distractor_tex: Vec<[u8; 3]> = (0..s * s).map(|_| jittered(&mut tex, [20, 30, 180], [50, 60, 230])).collect();
    let water = params.dynamic_background.as_ref().map(|d| Rect {
        x: d.x as i64,
        y: d.y as i64,
        w: d.width as i64,
        h: d.height as i64,
    });

    let mut frames = Vec::with_capacity(params.frame_count);
    let mut gt_masks = Vec::with_capacity(params.frame_count);
    let mut flows = Vec::with_capacity(params.frame_count);
    let mut proposals = Vec::with_capacity(params.frame_count);
    for t in 0..params.frame_count {
        let sq = params.square_at(t);
        let mut rng = stream(seed, 1 + t as u64);
        let water_colors: Vec<[u8; 3]> = (0..w * h).map(|_| jittered(&mut rng, [20, 90, 110], [70, 150, 180])).collect();
        let frame = Frame::from_fn(w, h, |x, y| {
            if sq.contains(x, y) {
                square_tex[(y - sq.y as usize) * s + (x - sq.x as usize)]
            } else if let Some(d) = distractor.filter(|d| d.contains(x, y)) {
                distractor_tex[(y - d.y as usize) * s + (x - d.x as usize)]
            } else if water.is_some_and(|r| r.contains(x, y)) {
                water_colors[y * w + x]
            } else {
                background[y * w + x]
            }
        });

        let flow = (t > 0).then(|| {
            let water_vec = params.dynamic_background.as_ref().map(|d| {
                let angle = rng.gen_range(0.0..std::f64::consts::TAU);
                let mag = if d.amplitude > 0.0 { rng.gen_range(d.amplitude / 2.0..=d.amplitude) } else { 0.0 };
                ((mag * angle.cos()) as f32, (mag * angle.sin()) as f32)
            });
            let [vx, vy] = params.velocity;
            let jitter = params.flow_jitter;
            FlowField::from_fn(w, h, |x, y| {
                let (mut u, mut v) = if sq.contains(x, y) {
                    (-vx as f32, -vy as f32)
                } else if water.is_some_and(|r| r.contains(x, y)) {
                    water_vec.unwrap_or((0.0, 0.0))
                } else {
                    (0.0, 0.0)
                };
                if jitter > 0.0 {
                    u += rng.gen_range(-jitter..=jitter) as f32;
                    v += rng.gen_range(-jitter..=jitter) as f32;
                }
                (u, v)
            })
        });

        let id = frame_id(t);
        let erosion = params.proposal_noise.erosion as i64;
        let confidence = SQUARE_CONFIDENCE - params.proposal_noise.confidence_jitter * rng.gen::<f64>();
        let mut props = vec![InstanceProposal {
            mask: sq.shrunk(erosion).mask(w, h),
            confidence,
            category: "object".into(),
        }];
        if let Some(d) = distractor {
            props.push(InstanceProposal {
                mask: d.mask(w, h),
                confidence: DISTRACTOR_CONFIDENCE,
                category: "distractor".into(),
            });
        }
        proposals.push(ProposalSet::new(id, w, h, props)?);
        frames.push(frame);
        gt_masks.push(sq.mask(w, h));
        flows.push(flow);
    }
    Ok(SynthSequence {
        frames,
        gt_masks,
        flows,
        proposals,
        distractor: distractor.map(|d| d.mask(w, h)),
        dynamic_region: water.map(|r| r.mask(w, h)),
    })
}

/// Writes the sequence in the pipeline's ingestion layout under `root`.
pub fn write_dataset(seq: &SynthSequence, root: &Path) -> Result<DatasetLayout> {
    let layout = DatasetLayout::under(root);
    let dirs = [
        Some(&layout.frames),
        layout.flow.as_ref(),
        layout.proposals.as_ref(),
        layout.gt.as_ref(),
    ];
    for dir in dirs.into_iter().flatten() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let flow_dir = layout.flow.as_ref().expect("standard layout has flow");
    let proposal_dir = layout.proposals.as_ref().expect("standard layout has proposals");
    let gt_dir = layout.gt.as_ref().expect("standard layout has ground truth");
    for (t, frame) in seq.frames.iter().enumerate() {
        let id = frame_id(t);
        write_frame_png(&layout.frames.join(format!("{id}.png")), frame)?;
        write_mask_png(&gt_dir.join(format!("{id}.png")), &seq.gt_masks[t])?;
        if let Some(flow) = &seq.flows[t] {
            save_flo(&flow_dir.join(format!("{id}.flo")), flow)?;
        }
        save_proposals(proposal_dir, &seq.proposals[t])?;
    }
    Ok(layout)
}

/// Checks that every frame's square is exactly the previous square carried
/// by the written flow. Pixels uncovered by the motion are excluded: their
/// backward flow is zero, so they still read the previous square.
pub fn check_consistency(seq: &SynthSequence) -> Result<()> {
    for t in 1..seq.frames.len() {
        let flow = seq.flows[t]
            .as_ref()
            .ok_or_else(|| Error::invalid(format!("frame {t} has no flow")))?;
        let warped = warp_mask(&seq.gt_masks[t - 1], flow)?;
        let (prev, cur) = (&seq.gt_masks[t - 1], &seq.gt_masks[t]);
        let (w, h) = cur.dims();
        for y in 0..h {
            for x in 0..w {
                let uncovered = prev.get(x, y) && !cur.get(x, y);
                if !uncovered && warped.get(x, y) != cur.get(x, y) {
                    return Err(Error::invalid(format!(
                        "frame {t}: warped mask disagrees with ground truth at ({x}, {y})"
                    )));
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectness::load_proposals;

    fn shift(m: &BinaryMask, dx: i64, dy: i64) -> BinaryMask {
        let (w, h) = m.dims();
        BinaryMask::from_fn(w, h, |x, y| {
            let (sx, sy) = (x as i64 - dx, y as i64 - dy);
            sx >= 0 && sy >= 0 && sx < w as i64 && sy < h as i64 && m.get(sx as usize, sy as usize)
        })
    }

    #[test]
    fn static_square_has_constant_masks_and_zero_flow() {
        let seq = synth_sequence(&SynthParams { velocity: [0, 0], frame_count: 5, ..Default::default() }).unwrap();
        assert!(seq.gt_masks.windows(2).all(|p| p[0] == p[1]));
        assert!(seq.flows[0].is_none());
        for f in seq.flows.iter().skip(1).flatten() {
            assert!(f.u().iter().chain(f.v()).all(|&c| c == 0.0));
        }
        check_consistency(&seq).unwrap();
    }

    #[test]
    fn moving_square_shifts_by_velocity() {
        let params = SynthParams { velocity: [2, 0], ..Default::default() };
        let seq = synth_sequence(&params).unwrap();
        for t in 1..seq.gt_masks.len() {
            assert_eq!(seq.gt_masks[t], shift(&seq.gt_masks[t - 1], 2, 0));
            assert_eq!(seq.gt_masks[t].count(), 256);
        }
        check_consistency(&seq).unwrap();
    }

    #[test]
    fn noisy_variants_stay_consistent() {
        let params = SynthParams {
            velocity: [2, 0],
            dynamic_background: Some(DynamicRegion { x: 4, y: 4, width: 12, height: 10, amplitude: 3.0 }),
            flow_jitter: 0.3,
            proposal_noise: ProposalNoise { confidence_jitter: 0.5, erosion: 1 },
            ..Default::default()
        };
        let seq = synth_sequence(&params).unwrap();
        check_consistency(&seq).unwrap();
        for set in &seq.proposals {
            let p = &set.proposals()[0];
            assert_eq!(p.mask.count(), 14 * 14);
            assert!((0.4..=0.9).contains(&p.confidence));
        }
    }

    #[test]
    fn distractor_is_static_and_clear_of_the_path() {
        let params = SynthParams {
            square_size: 12,
            velocity: [2, 0],
            origin: Some([4, 6]),
            extra_static_object: true,
            ..Default::default()
        };
        let seq = synth_sequence(&params).unwrap();
        let d = seq.distractor.clone().unwrap();
        assert_eq!(d.count(), 144);
        for (t, set) in seq.proposals.iter().enumerate() {
            assert_eq!(set.proposals()[1].mask, d);
            assert!(set.proposals()[1].confidence > 0.9);
            assert!(seq.gt_masks[t].and(&d).unwrap().is_all_background());
            if let Some(f) = &seq.flows[t] {
                let (w, _) = f.dims();
                for (i, _) in d.labels().iter().enumerate().filter(|(_, &l)| l == 1) {
                    assert_eq!(f.get(i % w, i / w), (0.0, 0.0));
                }
            }
        }
    }

    #[test]
    fn invalid_params_are_rejected() {
        let off = SynthParams { velocity: [3, 0], origin: Some([0, 0]), ..Default::default() };
        assert!(synth_sequence(&off).is_err());
        let crowded = SynthParams { square_size: 40, extra_static_object: true, ..Default::default() };
        assert!(synth_sequence(&crowded).is_err());
        assert!(serde_json::from_str::<SynthParams>(r#"{"widht": 3}"#).is_err());
    }

    #[test]
    fn dataset_round_trips_through_the_ingestion_formats() {
        let dir = tempfile::tempdir().unwrap();
        let params = SynthParams { frame_count: 4, extra_static_object: true, square_size: 10, velocity: [1, 0], ..Default::default() };
        let seq = synth_sequence(&params).unwrap();
        let layout = write_dataset(&seq, dir.path()).unwrap();
        assert_eq!(layout.frame_ids().unwrap(), vec!["00000", "00001", "00002", "00003"]);
        assert!(!layout.flow.as_ref().unwrap().join("00000.flo").exists());
        let flow = crate::flow::load_flo(&layout.flow.as_ref().unwrap().join("00002.flo")).unwrap();
        assert_eq!(Some(flow), seq.flows[2]);
        let props = load_proposals(layout.proposals.as_ref().unwrap(), "00001", 64, 64).unwrap();
        assert_eq!(props, seq.proposals[1]);
        let frame = crate::io::read_frame_png(&layout.frames.join("00003.png")).unwrap();
        assert_eq!(frame, seq.frames[3]);
    }

    #[test]
    fn generation_is_deterministic() {
        let params = SynthParams {
            dynamic_background: Some(DynamicRegion { x: 2, y: 2, width: 8, height: 8, amplitude: 2.0 }),
            flow_jitter: 0.2,
            ..Default::default()
        };
        assert_eq!(synth_sequence(&params).unwrap(), synth_sequence(&params).unwrap());
    }
}
