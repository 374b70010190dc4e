//! Value types shared by every pipeline stage.
//!
//! All images use the same pixel convention: `(x, y)` with the origin at the
//! top-left corner, `x` growing rightward and `y` downward, stored row-major.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An 8-bit RGB frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Frame {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("frame must be at least 1x1"));
        }
        if data.len() != width * height * 3 {
            return Err(Error::invalid(format!(
                "frame data length {} does not match {}x{}x3",
                data.len(),
                width,
                height
            )));
        }
        Ok(Frame {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Self {
        assert!(width > 0 && height > 0, "frame must be at least 1x1");
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Frame {
            width,
            height,
            data,
        }
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

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn rgb(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Color of the pixel at linear index `idx`, scaled to `[0, 1]`.
    pub fn unit_color(&self, idx: usize) -> [f64; 3] {
        let i = idx * 3;
        [
            f64::from(self.data[i]) / 255.0,
            f64::from(self.data[i + 1]) / 255.0,
            f64::from(self.data[i + 2]) / 255.0,
        ]
    }
}

/// Dense optical flow. `u` is the horizontal and `v` the vertical
/// displacement in pixels.
///
/// Flow used by the pipeline is backward flow: the vector stored at a pixel
/// of frame `t` points to its matching location in frame `t - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    u: Vec<f32>,
    v: Vec<f32>,
}

impl FlowField {
    pub fn new(width: usize, height: usize, u: Vec<f32>, v: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("flow field must be at least 1x1"));
        }
        let n = width * height;
        if u.len() != n || v.len() != n {
            return Err(Error::invalid(format!(
                "flow component lengths ({}, {}) do not match {}x{}",
                u.len(),
                v.len(),
                width,
                height
            )));
        }
        if let Some(i) = (0..n).find(|&i| !u[i].is_finite() || !v[i].is_finite()) {
            return Err(Error::FlowFormat(format!(
                "invalid flow sample at ({},{})",
                i % width,
                i / width
            )));
        }
        Ok(FlowField {
            width,
            height,
            u,
            v,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::uniform(width, height, 0.0, 0.0)
    }

    pub fn uniform(width: usize, height: usize, u: f32, v: f32) -> Self {
        assert!(width > 0 && height > 0);
        assert!(u.is_finite() && v.is_finite());
        FlowField {
            width,
            height,
            u: vec![u; width * height],
            v: vec![v; width * height],
        }
    }

    /// Builds a field from a per-pixel closure; panics on non-finite output.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> (f32, f32)) -> Self {
        let mut u = Vec::with_capacity(width * height);
        let mut v = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let (a, b) = f(x, y);
                u.push(a);
                v.push(b);
            }
        }
        Self::new(width, height, u, v).expect("flow closure produced an invalid field")
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

    pub fn u(&self) -> &[f32] {
        &self.u
    }

    pub fn v(&self) -> &[f32] {
        &self.v
    }

    pub fn get(&self, x: usize, y: usize) -> (f32, f32) {
        let i = y * self.width + x;
        (self.u[i], self.v[i])
    }
}

/// Per-pixel real-valued map.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl ScalarMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("map must be at least 1x1"));
        }
        if values.len() != width * height {
            return Err(Error::invalid(format!(
                "map length {} does not match {}x{}",
                values.len(),
                width,
                height
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("map contains non-finite values"));
        }
        Ok(ScalarMap {
            width,
            height,
            values,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0 && value.is_finite());
        ScalarMap {
            width,
            height,
            values: vec![value; width * height],
        }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y));
            }
        }
        Self::new(width, height, values).expect("map closure produced an invalid map")
    }

    pub(crate) fn from_raw(width: usize, height: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), width * height);
        debug_assert!(values.iter().all(|v| v.is_finite()));
        ScalarMap {
            width,
            height,
            values,
        }
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

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// Min-max normalization to `[0, 1]`. A constant map becomes all zeros.
    pub fn normalized(&self) -> ScalarMap {
        ScalarMap::from_raw(self.width, self.height, normalize_min_max(&self.values))
    }
}

pub(crate) fn normalize_min_max(values: &[f64]) -> Vec<f64> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if !(hi > lo) {
        return vec![0.0; values.len()];
    }
    let span = hi - lo;
    values
        .iter()
        .map(|&v| ((v - lo) / span).clamp(0.0, 1.0))
        .collect()
}

/// Per-pixel foreground (1) / background (0) labels.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    labels: Vec<u8>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, labels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("mask must be at least 1x1"));
        }
        if labels.len() != width * height {
            return Err(Error::invalid(format!(
                "mask length {} does not match {}x{}",
                labels.len(),
                width,
                height
            )));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::invalid("mask labels must be 0 or 1"));
        }
        Ok(BinaryMask {
            width,
            height,
            labels,
        })
    }

    pub(crate) fn from_raw(width: usize, height: usize, labels: Vec<u8>) -> Self {
        debug_assert_eq!(labels.len(), width * height);
        debug_assert!(labels.iter().all(|&l| l <= 1), "mask label outside {{0,1}}");
        BinaryMask {
            width,
            height,
            labels,
        }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0);
        Self::from_raw(width, height, vec![0; width * height])
    }

    pub fn ones(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0);
        Self::from_raw(width, height, vec![1; width * height])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        assert!(width > 0 && height > 0);
        let mut labels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                labels.push(u8::from(f(x, y)));
            }
        }
        Self::from_raw(width, height, labels)
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

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.labels[y * self.width + x] == 1
    }

    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        self.labels[y * self.width + x] = u8::from(on);
    }

    pub fn count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    pub fn is_all_background(&self) -> bool {
        self.labels.iter().all(|&l| l == 0)
    }

    pub fn is_all_foreground(&self) -> bool {
        self.labels.iter().all(|&l| l == 1)
    }

    /// True when every foreground pixel of `self` is foreground in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.dims() == other.dims()
            && self
                .labels
                .iter()
                .zip(&other.labels)
                .all(|(&a, &b)| a <= b)
    }

    pub fn and(&self, other: &BinaryMask) -> Result<BinaryMask> {
        crate::error::check_dims("mask intersection", self.dims(), other.dims())?;
        let labels = self
            .labels
            .iter()
            .zip(&other.labels)
            .map(|(&a, &b)| a & b)
            .collect();
        Ok(Self::from_raw(self.width, self.height, labels))
    }

    pub fn or(&self, other: &BinaryMask) -> Result<BinaryMask> {
        crate::error::check_dims("mask union", self.dims(), other.dims())?;
        let labels = self
            .labels
            .iter()
            .zip(&other.labels)
            .map(|(&a, &b)| a | b)
            .collect();
        Ok(Self::from_raw(self.width, self.height, labels))
    }

    pub fn to_scalar(&self) -> ScalarMap {
        ScalarMap::from_raw(
            self.width,
            self.height,
            self.labels.iter().map(|&l| f64::from(l)).collect(),
        )
    }
}

/// Which flow-derived map feeds the salient motion stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SaliencySource {
    #[default]
    Mbd,
    GlobalContrast,
    HomographyResidual,
}

/// Every tunable of the pipeline. Validated once, then treated as immutable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Weight of the current-frame evidence against the propagated masks.
    pub theta: f64,
    /// Number of previous segmentation masks propagated into the current frame.
    pub n_prev: usize,
    /// Radius of the disk used to dilate the salient motion mask.
    pub dilate_radius: i64,
    pub otsu_levels_motion: usize,
    pub otsu_levels_object: usize,
    pub confidence_threshold: f64,
    /// Pairwise weight of the graph-cut energy.
    pub lambda: f64,
    /// Contrast parameter of the pairwise term; estimated from the frame when absent.
    pub beta_override: Option<f64>,
    pub gmm_components: usize,
    pub enable_propagation: bool,
    pub enable_crf: bool,
    pub saliency_source: SaliencySource,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            theta: 0.85,
            n_prev: 2,
            dilate_radius: 6,
            otsu_levels_motion: 3,
            otsu_levels_object: 2,
            confidence_threshold: 0.5,
            lambda: 50.0,
            beta_override: None,
            gmm_components: 5,
            enable_propagation: true,
            enable_crf: true,
            saliency_source: SaliencySource::Mbd,
        }
    }
}

/// Largest supported number of Otsu thresholds.
pub const MAX_OTSU_LEVELS: usize = 4;

/// Checks every field invariant, returning the config unchanged on success.
pub fn validate_config(cfg: PipelineConfig) -> Result<PipelineConfig> {
    let bad = |msg: String| Err(Error::InvalidConfig(msg));
    if !(cfg.theta > 0.0 && cfg.theta <= 1.0) {
        return bad(format!("theta out of range (0, 1]: {}", cfg.theta));
    }
    if cfg.dilate_radius < 0 {
        return bad(format!("dilate_radius negative: {}", cfg.dilate_radius));
    }
    for (name, k) in [
        ("otsu_levels_motion", cfg.otsu_levels_motion),
        ("otsu_levels_object", cfg.otsu_levels_object),
    ] {
        if !(1..=MAX_OTSU_LEVELS).contains(&k) {
            return bad(format!("{name} out of range [1, {MAX_OTSU_LEVELS}]: {k}"));
        }
    }
    if !(0.0..=1.0).contains(&cfg.confidence_threshold) {
        return bad(format!(
            "confidence_threshold out of range [0, 1]: {}",
            cfg.confidence_threshold
        ));
    }
    if !(cfg.lambda >= 0.0 && cfg.lambda.is_finite()) {
        return bad(format!("lambda must be finite and >= 0: {}", cfg.lambda));
    }
    if let Some(beta) = cfg.beta_override {
        if !(beta > 0.0 && beta.is_finite()) {
            return bad(format!("beta_override must be finite and > 0: {beta}"));
        }
    }
    if cfg.gmm_components == 0 {
        return bad("gmm_components must be at least 1".to_string());
    }
    Ok(cfg)
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = serde_json::from_str(text)
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        validate_config(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn dilate_radius(&self) -> usize {
        usize::try_from(self.dilate_radius).unwrap_or(0)
    }
}
