//! Forward propagation of previous segmentations into the current frame.
//!
//! The buffer keeps the last `n` segmentation masks, always expressed in the
//! coordinates of the most recently processed frame: each new backward flow
//! re-warps every stored mask before the new one is appended. Their mean is
//! blended with the current motion and objectness evidence.

use std::collections::VecDeque;

use crate::error::{check_dims, Error, Result};
use crate::flow::warp_mask;
use crate::mask_ops::{binarize, dilate};
use crate::model::{BinaryMask, FlowField, PipelineConfig, ScalarMap};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskBuffer {
    capacity: usize,
    masks: VecDeque<BinaryMask>,
}

impl MaskBuffer {
    pub fn new(capacity: usize) -> Self {
        MaskBuffer {
            capacity,
            masks: VecDeque::with_capacity(capacity + 1),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    /// Oldest first.
    pub fn masks(&self) -> impl Iterator<Item = &BinaryMask> {
        self.masks.iter()
    }

    /// Re-expresses every buffered mask in the coordinates of the frame that
    /// `flow_t` belongs to.
    pub fn warp(&mut self, flow_t: &FlowField) -> Result<()> {
        for m in self.masks.iter_mut() {
            *m = warp_mask(m, flow_t)?;
        }
        Ok(())
    }

    /// Appends `mask`, dropping the oldest entry when over capacity.
    pub fn push(&mut self, mask: BinaryMask) -> Result<()> {
        if let Some(first) = self.masks.front() {
            check_dims("MaskBuffer::push", first.dims(), mask.dims())?;
        }
        self.masks.push_back(mask);
        while self.masks.len() > self.capacity {
            self.masks.pop_front();
        }
        Ok(())
    }

    /// Warps every buffered mask by `flow_t`, appends `new_mask`, and drops
    /// the oldest entry when over capacity.
    pub fn advance(&mut self, flow_t: &FlowField, new_mask: BinaryMask) -> Result<()> {
        check_dims("advance_buffer", flow_t.dims(), new_mask.dims())?;
        self.warp(flow_t)?;
        self.push(new_mask)
    }
}

/// Functional form of [`MaskBuffer::advance`].
pub fn advance_buffer(buf: &MaskBuffer, flow_t: &FlowField, new_mask: BinaryMask) -> Result<MaskBuffer> {
    let mut next = buf.clone();
    next.advance(flow_t, new_mask)?;
    Ok(next)
}

/// Mean of the buffered (already warped) masks.
pub fn accumulated_prior(buf: &MaskBuffer) -> Result<ScalarMap> {
    let first = buf
        .masks
        .front()
        .ok_or_else(|| Error::invalid("accumulated prior of an empty buffer"))?;
    let (w, h) = first.dims();
    let mut sum = vec![0u32; w * h];
    for m in &buf.masks {
        check_dims("accumulated_prior", (w, h), m.dims())?;
        for (s, &l) in sum.iter_mut().zip(m.labels()) {
            *s += u32::from(l);
        }
    }
    let len = buf.masks.len() as f64;
    Ok(ScalarMap::from_raw(
        w,
        h,
        sum.into_iter().map(|s| f64::from(s) / len).collect(),
    ))
}

fn blend(raw: &ScalarMap, prior: &ScalarMap, theta: f64) -> Result<ScalarMap> {
    check_dims("propagation blend", raw.dims(), prior.dims())?;
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::invalid(format!("theta out of range (0, 1]: {theta}")));
    }
    let values = raw
        .values()
        .iter()
        .zip(prior.values())
        .map(|(&r, &p)| theta * r + (1.0 - theta) * p)
        .collect();
    Ok(ScalarMap::from_raw(raw.width(), raw.height(), values))
}

/// `theta * raw + (1 - theta) * prior`, pixel-wise.
pub fn refine_motion_map(raw: &ScalarMap, prior: &ScalarMap, theta: f64) -> Result<ScalarMap> {
    blend(raw, prior, theta)
}

pub fn refine_objectness_map(raw_mask: &BinaryMask, prior: &ScalarMap, theta: f64) -> Result<ScalarMap> {
    blend(&raw_mask.to_scalar(), prior, theta)
}

/// Dilated binarized motion map intersected with the binarized objectness map.
pub fn refined_segmentation(s_bar: &ScalarMap, o_bar: &ScalarMap, cfg: &PipelineConfig) -> Result<BinaryMask> {
    check_dims("refined_segmentation", s_bar.dims(), o_bar.dims())?;
    let motion = binarize(s_bar, cfg.otsu_levels_motion)?;
    let object = binarize(o_bar, cfg.otsu_levels_object)?;
    dilate(&motion, cfg.dilate_radius()).and(&object)
}
