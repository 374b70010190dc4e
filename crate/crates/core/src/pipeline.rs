//! The online segmentation loop and its file-system front end.
//!
//! Per frame `t >= 1`:
//!
//! ```text
//! S~  = salient motion map of the backward flow F^t
//! O   = union of confident proposals
//! P   = dilate(binarize(S~), r) AND O
//! M   = P, or with propagation and a non-empty buffer
//!       dilate(binarize(theta S~ + (1 - theta) prior), r) AND binarize(theta O + (1 - theta) prior)
//! L   = graph-cut refinement of M
//! ```
//!
//! The buffer stores `M`, never `L`. Frame 0 has no flow and emits an empty
//! mask.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::crf::crf_refine;
use crate::error::{check_dims, Error, Result};
use crate::evaluation::{score_sequence, SequenceScores};
use crate::flow::{estimate_flow, load_flo, BlockMatchParams};
use crate::io::{read_frame_png, read_mask_png, write_mask_png};
use crate::mask_ops::{binarize, fuse};
use crate::model::{validate_config, BinaryMask, FlowField, Frame, PipelineConfig};
use crate::objectness::{load_proposals, objectness_mask, ProposalSet};
use crate::propagation::{accumulated_prior, refine_motion_map, refine_objectness_map, refined_segmentation, MaskBuffer};
use crate::saliency::salient_motion_map;

/// Zero-padded file stem of frame `t`.
pub fn frame_id(t: usize) -> String {
    format!("{t:05}")
}

/// Where a sequence lives on disk. Every file in every directory is named
/// after its frame id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetLayout {
    pub frames: PathBuf,
    /// `<id>.flo` backward flow; frame 0 has none.
    pub flow: Option<PathBuf>,
    /// `<id>.json` sidecars plus their mask PNGs.
    pub proposals: Option<PathBuf>,
    /// Single-channel 0/255 PNG masks.
    pub gt: Option<PathBuf>,
}

impl DatasetLayout {
    pub fn new(frames: impl Into<PathBuf>) -> Self {
        DatasetLayout {
            frames: frames.into(),
            flow: None,
            proposals: None,
            gt: None,
        }
    }

    /// `frames/`, `flow/`, `proposals/` and `gt/` under `root`.
    pub fn under(root: &Path) -> Self {
        DatasetLayout {
            frames: root.join("frames"),
            flow: Some(root.join("flow")),
            proposals: Some(root.join("proposals")),
            gt: Some(root.join("gt")),
        }
    }

    /// Frame ids in order. Stems must be integers numbered contiguously from 0.
    pub fn frame_ids(&self) -> Result<Vec<String>> {
        let ids = numbered_pngs(&self.frames)?;
        if ids.is_empty() {
            return Err(Error::invalid(format!("{}: no PNG frames", self.frames.display())));
        }
        for (t, (n, id)) in ids.iter().enumerate() {
            if *n != t as u64 {
                return Err(Error::invalid(format!(
                    "{}: frame ids must be contiguous from 0, found {id} at position {t}",
                    self.frames.display()
                )));
            }
        }
        Ok(ids.into_iter().map(|(_, id)| id).collect())
    }
}

/// `(number, stem)` of every `*.png` in `dir` whose stem is an integer,
/// sorted numerically.
fn numbered_pngs(dir: &Path) -> Result<Vec<(u64, String)>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut ids = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("png") {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        match stem.parse::<u64>() {
            Ok(n) => ids.push((n, stem.to_string())),
            Err(_) => log::debug!("skipping non-numeric file {}", path.display()),
        }
    }
    ids.sort();
    Ok(ids)
}

/// Which stages run, mirroring the ablation rows. Salient motion always runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StageSelection {
    pub objectness: bool,
    pub propagation: bool,
    pub crf: bool,
}

impl StageSelection {
    pub const S: Self = Self::of(false, false, false);
    pub const SO: Self = Self::of(true, false, false);
    pub const SOP: Self = Self::of(true, true, false);
    pub const SOC: Self = Self::of(true, false, true);
    pub const SOPC: Self = Self::of(true, true, true);

    /// The ablation rows in report order.
    pub const ROWS: [Self; 4] = [Self::S, Self::SO, Self::SOP, Self::SOPC];

    const fn of(objectness: bool, propagation: bool, crf: bool) -> Self {
        StageSelection {
            objectness,
            propagation,
            crf,
        }
    }

    /// Stages enabled by the config's flags, on top of S+O.
    pub fn from_config(cfg: &PipelineConfig) -> Self {
        Self::of(true, cfg.enable_propagation, cfg.enable_crf)
    }

    pub fn validate(&self) -> Result<()> {
        if (self.propagation || self.crf) && !self.objectness {
            return Err(Error::invalid("propagation and CRF stages require objectness fusion"));
        }
        Ok(())
    }

    /// Short form used on the command line: `s`, `so`, `sop`, `soc`, `sopc`.
    pub fn code(&self) -> String {
        let mut s = String::from("s");
        for (on, c) in [(self.objectness, 'o'), (self.propagation, 'p'), (self.crf, 'c')] {
            if on {
                s.push(c);
            }
        }
        s
    }
}

impl std::str::FromStr for StageSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s" => Ok(Self::S),
            "so" => Ok(Self::SO),
            "sop" => Ok(Self::SOP),
            "soc" => Ok(Self::SOC),
            "sopc" => Ok(Self::SOPC),
            other => Err(Error::invalid(format!("unknown stage selection {other:?} (expected s, so, sop, soc or sopc)"))),
        }
    }
}

impl fmt::Display for StageSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("S")?;
        for (on, c) in [(self.objectness, "+O"), (self.propagation, "+P"), (self.crf, "+C")] {
            if on {
                f.write_str(c)?;
            }
        }
        Ok(())
    }
}

/// Mixes the run seed with the frame index for the per-frame mixture fits.
fn frame_seed(seed: u64, t: usize) -> u64 {
    seed ^ (t as u64).wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Online processor: feed frames strictly in order.
#[derive(Debug, Clone)]
pub struct Pipeline {
    cfg: PipelineConfig,
    stages: StageSelection,
    seed: u64,
    buffer: MaskBuffer,
    next_frame: usize,
    dims: Option<(usize, usize)>,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig, stages: StageSelection, seed: u64) -> Result<Self> {
        let cfg = validate_config(cfg)?;
        stages.validate()?;
        let capacity = if stages.propagation { cfg.n_prev } else { 0 };
        Ok(Pipeline {
            cfg,
            stages,
            seed,
            buffer: MaskBuffer::new(capacity),
            next_frame: 0,
            dims: None,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn stages(&self) -> StageSelection {
        self.stages
    }

    /// Index of the frame the next call to [`Pipeline::process`] handles.
    pub fn next_frame(&self) -> usize {
        self.next_frame
    }

    pub fn buffer(&self) -> &MaskBuffer {
        &self.buffer
    }

    /// Segments the next frame. `flow` (backward, to the previous frame) is
    /// required from frame 1 on, `proposals` whenever objectness is enabled.
    pub fn process(
        &mut self,
        frame: &Frame,
        flow: Option<&FlowField>,
        proposals: Option<&ProposalSet>,
    ) -> Result<BinaryMask> {
        let t = self.next_frame;
        let dims = *self.dims.get_or_insert(frame.dims());
        check_dims("frame", dims, frame.dims())?;
        let (w, h) = dims;
        if t == 0 {
            self.next_frame = 1;
            return Ok(BinaryMask::zeros(w, h));
        }
        let flow = flow.ok_or_else(|| Error::invalid(format!("frame {t}: no flow")))?;
        check_dims("flow", dims, flow.dims())?;

        let raw_motion = salient_motion_map(flow, &self.cfg)?;
        let motion = binarize(&raw_motion, self.cfg.otsu_levels_motion)?;
        if !self.stages.objectness {
            self.next_frame += 1;
            return Ok(motion);
        }
        let proposals = proposals.ok_or_else(|| Error::invalid(format!("frame {t}: no proposals")))?;
        check_dims("proposals", dims, proposals.dims())?;
        let object = objectness_mask(proposals, self.cfg.confidence_threshold);

        self.buffer.warp(flow)?;
        // Propagation starts once frame t (one-based) exceeds n.
        let m = if t + 1 > self.buffer.capacity() && !self.buffer.is_empty() {
            let prior = accumulated_prior(&self.buffer)?;
            let s_bar = refine_motion_map(&raw_motion, &prior, self.cfg.theta)?;
            let o_bar = refine_objectness_map(&object, &prior, self.cfg.theta)?;
            refined_segmentation(&s_bar, &o_bar, &self.cfg)?
        } else {
            fuse(&motion, &object, self.cfg.dilate_radius())?
        };
        if self.stages.propagation {
            self.buffer.push(m.clone())?;
        }
        let out = if self.stages.crf {
            crf_refine(frame, &m, &self.cfg, frame_seed(self.seed, t))?.mask
        } else {
            m
        };
        self.next_frame += 1;
        Ok(out)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    /// Block matching fills in missing flow files when set.
    pub flow_estimation: Option<BlockMatchParams>,
}

fn load_flow(layout: &DatasetLayout, id: &str, prev: &Frame, cur: &Frame, opts: &RunOptions) -> Result<FlowField> {
    let path = layout.flow.as_ref().map(|d| d.join(format!("{id}.flo")));
    if let Some(path) = path.as_ref().filter(|p| p.exists()) {
        return load_flo(path);
    }
    match &opts.flow_estimation {
        Some(params) => {
            log::warn!("frame {id}: no flow file, estimating by block matching");
            estimate_flow(prev, cur, params)
        }
        None => Err(Error::invalid(format!(
            "frame {id}: missing flow file{} and flow estimation is disabled",
            path.map(|p| format!(" {}", p.display())).unwrap_or_default()
        ))),
    }
}

/// Runs the pipeline over every frame of `layout`, in order.
pub fn run_pipeline(
    layout: &DatasetLayout,
    cfg: &PipelineConfig,
    stages: StageSelection,
    seed: u64,
    opts: &RunOptions,
) -> Result<Vec<BinaryMask>> {
    let ids = layout.frame_ids()?;
    run_frames(layout, &ids, cfg, stages, seed, opts)
}

/// Like [`run_pipeline`] but over an explicit prefix or subset of frame ids.
pub fn run_frames(
    layout: &DatasetLayout,
    ids: &[String],
    cfg: &PipelineConfig,
    stages: StageSelection,
    seed: u64,
    opts: &RunOptions,
) -> Result<Vec<BinaryMask>> {
    let mut pipeline = Pipeline::new(cfg.clone(), stages, seed)?;
    if stages.objectness && layout.proposals.is_none() {
        return Err(Error::invalid("objectness stage enabled but no proposals directory given"));
    }
    let mut prev: Option<Frame> = None;
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let frame = read_frame_png(&layout.frames.join(format!("{id}.png")))?;
        if let Some(p) = &prev {
            check_dims("frame", p.dims(), frame.dims())?;
        }
        let (w, h) = frame.dims();
        let flow = match &prev {
            Some(p) => Some(load_flow(layout, id, p, &frame, opts)?),
            None => None,
        };
        let proposals = match (&layout.proposals, &prev) {
            (Some(dir), Some(_)) if stages.objectness => Some(load_proposals(dir, id, w, h)?),
            _ => None,
        };
        out.push(pipeline.process(&frame, flow.as_ref(), proposals.as_ref())?);
        prev = Some(frame);
    }
    Ok(out)
}

pub fn write_masks(dir: &Path, ids: &[String], masks: &[BinaryMask]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (id, m) in ids.iter().zip(masks) {
        write_mask_png(&dir.join(format!("{id}.png")), m)?;
    }
    Ok(())
}

/// Reads every numbered mask in `dir`, in frame order.
pub fn read_masks(dir: &Path) -> Result<Vec<(String, BinaryMask)>> {
    numbered_pngs(dir)?
        .into_iter()
        .map(|(_, id)| Ok((id.clone(), read_mask_png(&dir.join(format!("{id}.png")))?)))
        .collect()
}

/// Scores predictions against ground truth, skipping the first
/// `skip_leading` frames (the pipeline's frame 0 is a placeholder).
pub fn evaluate(preds: &[BinaryMask], gts: &[BinaryMask], skip_leading: usize) -> Result<SequenceScores> {
    if preds.len() != gts.len() {
        return Err(Error::invalid(format!("{} predictions for {} ground-truth masks", preds.len(), gts.len())));
    }
    if preds.len() <= skip_leading {
        return Err(Error::invalid("no frames left to evaluate"));
    }
    score_sequence(&preds[skip_leading..], &gts[skip_leading..])
}

/// Pairs every ground-truth mask with the prediction of the same name.
pub fn evaluate_dirs(pred_dir: &Path, gt_dir: &Path, skip_leading: usize) -> Result<SequenceScores> {
    let gts = read_masks(gt_dir)?;
    if gts.is_empty() {
        return Err(Error::invalid(format!("{}: no ground-truth masks", gt_dir.display())));
    }
    let mut preds = Vec::with_capacity(gts.len());
    for (id, gt) in &gts {
        let pred = read_mask_png(&pred_dir.join(format!("{id}.png")))?;
        check_dims("prediction", gt.dims(), pred.dims())?;
        preds.push(pred);
    }
    let gts: Vec<BinaryMask> = gts.into_iter().map(|(_, m)| m).collect();
    evaluate(&preds, &gts, skip_leading)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub stages: String,
    pub j_mean: f64,
    pub j_recall: f64,
    pub j_decay: Option<f64>,
    pub f_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub frames_evaluated: usize,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, stages: StageSelection) -> Option<&AblationRow> {
        let label = stages.to_string();
        self.rows.iter().find(|r| r.stages == label)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

impl fmt::Display for AblationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10} {:>8} {:>8} {:>8} {:>8}", "stages", "J mean", "J recall", "J decay", "F mean")?;
        for r in &self.rows {
            let decay = r.j_decay.map_or_else(|| "-".to_string(), |d| format!("{d:.4}"));
            writeln!(
                f,
                "{:<10} {:>8.4} {:>8.4} {:>8} {:>8.4}",
                r.stages, r.j_mean, r.j_recall, decay, r.f_mean
            )?;
        }
        write!(f, "({} frames evaluated, frame 0 excluded)", self.frames_evaluated)
    }
}

/// Runs each ablation row on identical inputs and scores it against the
/// layout's ground truth.
pub fn ablation_report(layout: &DatasetLayout, cfg: &PipelineConfig, seed: u64, opts: &RunOptions) -> Result<AblationReport> {
    let gt_dir = layout
        .gt
        .as_ref()
        .ok_or_else(|| Error::invalid("ablation needs a ground-truth directory"))?;
    let ids = layout.frame_ids()?;
    let gts = ids
        .iter()
        .map(|id| read_mask_png(&gt_dir.join(format!("{id}.png"))))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(StageSelection::ROWS.len());
    for stages in StageSelection::ROWS {
        let masks = run_frames(layout, &ids, cfg, stages, seed, opts)?;
        let scores = evaluate(&masks, &gts, 1)?;
        rows.push(AblationRow {
            stages: stages.to_string(),
            j_mean: scores.j_mean,
            j_recall: scores.j_recall,
            j_decay: scores.j_decay,
            f_mean: scores.f_mean,
        });
    }
    Ok(AblationReport {
        frames_evaluated: ids.len() - 1,
        rows,
    })
}
