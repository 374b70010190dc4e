//! Graph-cut boundary refinement.
//!
//! Foreground and background color mixtures are fitted from a coarse mask,
//! turned into per-pixel labeling costs, and combined with contrast-sensitive
//! smoothness on the 4-connected grid:
//!
//! ```text
//! E(L) = sum_i U_i(L_i) + lambda * sum_(i,j) [L_i != L_j] * w_ij
//! w_ij = exp(-beta * |I_i - I_j|^2)
//! ```
//!
//! The energy is submodular, so a single s-t minimum cut gives the exact
//! global minimizer.

mod gmm;
mod maxflow;

pub use gmm::{
    fit_gmm, fit_gmm_traced, ColorGmm, GmmComponent, COVARIANCE_RIDGE, EM_MAX_ITERATIONS,
    EM_RELATIVE_TOLERANCE,
};

use crate::error::{check_dims, Error, Result};
use crate::model::{BinaryMask, Frame, PipelineConfig};
use maxflow::FlowGraph;

/// Upper clamp on a single labeling cost.
pub const UNARY_CLAMP: f64 = 50.0;

/// Largest instance [`brute_force_labeling`] will enumerate.
pub const BRUTE_FORCE_MAX_PIXELS: usize = 20;

/// Per-pixel costs of labeling background (`cost_bg`) or foreground (`cost_fg`).
#[derive(Debug, Clone, PartialEq)]
pub struct UnaryCosts {
    width: usize,
    height: usize,
    cost_bg: Vec<f64>,
    cost_fg: Vec<f64>,
}

impl UnaryCosts {
    pub fn new(width: usize, height: usize, cost_bg: Vec<f64>, cost_fg: Vec<f64>) -> Result<Self> {
        let n = width * height;
        if cost_bg.len() != n || cost_fg.len() != n {
            return Err(Error::invalid(format!("unary costs must have {n} entries per label")));
        }
        if cost_bg.iter().chain(&cost_fg).any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(Error::invalid("unary costs must be finite and non-negative"));
        }
        Ok(UnaryCosts {
            width,
            height,
            cost_bg,
            cost_fg,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn cost_bg(&self) -> &[f64] {
        &self.cost_bg
    }

    pub fn cost_fg(&self) -> &[f64] {
        &self.cost_fg
    }

    /// The same costs with the two labels exchanged.
    pub fn swapped(&self) -> UnaryCosts {
        UnaryCosts {
            width: self.width,
            height: self.height,
            cost_bg: self.cost_fg.clone(),
            cost_fg: self.cost_bg.clone(),
        }
    }
}

/// Smoothness weights of the 4-connected grid.
///
/// `horizontal[y * (w - 1) + x]` joins `(x, y)` and `(x + 1, y)`;
/// `vertical[y * w + x]` joins `(x, y)` and `(x, y + 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseWeights {
    width: usize,
    height: usize,
    beta: f64,
    horizontal: Vec<f64>,
    vertical: Vec<f64>,
}

impl PairwiseWeights {
    pub fn new(width: usize, height: usize, beta: f64, horizontal: Vec<f64>, vertical: Vec<f64>) -> Result<Self> {
        if horizontal.len() != width.saturating_sub(1) * height || vertical.len() != width * height.saturating_sub(1) {
            return Err(Error::invalid(format!("edge weight count does not match a {width}x{height} grid")));
        }
        if horizontal.iter().chain(&vertical).any(|w| !(0.0..=1.0).contains(w)) {
            return Err(Error::invalid("pairwise weights must lie in [0, 1]"));
        }
        Ok(PairwiseWeights {
            width,
            height,
            beta,
            horizontal,
            vertical,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn horizontal(&self) -> &[f64] {
        &self.horizontal
    }

    pub fn vertical(&self) -> &[f64] {
        &self.vertical
    }

    pub fn edge_count(&self) -> usize {
        self.horizontal.len() + self.vertical.len()
    }

    /// Every edge as `(i, j, w_ij)` with linear pixel indices, horizontal first.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let w = self.width;
        let hw = w.saturating_sub(1);
        let horizontal = self.horizontal.iter().enumerate().map(move |(k, &wt)| {
            let (x, y) = (k % hw, k / hw);
            (y * w + x, y * w + x + 1, wt)
        });
        let vertical = self.vertical.iter().enumerate().map(move |(k, &wt)| (k, k + w, wt));
        horizontal.chain(vertical)
    }
}

/// Per-pixel costs `-log p(I_i)` under each mixture.
///
/// Densities of tight clusters exceed 1, so raw negative log-likelihoods can
/// be negative. Each pixel's pair is shifted so the cheaper label costs 0
/// before clamping to `[0, UNARY_CLAMP]`. The shift is the same for both
/// labels of a pixel and leaves the minimizer of the energy unchanged.
pub fn unary_costs(frame: &Frame, fg: &ColorGmm, bg: &ColorGmm) -> UnaryCosts {
    let (w, h) = frame.dims();
    let mut cost_bg = Vec::with_capacity(w * h);
    let mut cost_fg = Vec::with_capacity(w * h);
    for i in 0..w * h {
        let c = frame.unit_color(i);
        let nll_fg = -fg.log_likelihood(&c);
        let nll_bg = -bg.log_likelihood(&c);
        let floor = nll_fg.min(nll_bg);
        let cost = |nll: f64| {
            if floor.is_finite() {
                (nll - floor).clamp(0.0, UNARY_CLAMP)
            } else {
                UNARY_CLAMP
            }
        };
        cost_fg.push(cost(nll_fg));
        cost_bg.push(cost(nll_bg));
    }
    UnaryCosts {
        width: w,
        height: h,
        cost_bg,
        cost_fg,
    }
}

fn color_dist2(frame: &Frame, i: usize, j: usize) -> f64 {
    let (a, b) = (frame.unit_color(i), frame.unit_color(j));
    (0..3).map(|c| (a[c] - b[c]).powi(2)).sum()
}

/// Contrast weights `exp(-beta * |dI|^2)`. Without an override, beta is
/// `1 / (2 * mean |dI|^2)` over all edges, or 1 when that mean is 0.
pub fn pairwise_weights(frame: &Frame, beta: Option<f64>) -> Result<PairwiseWeights> {
    let (w, h) = frame.dims();
    let mut hd = Vec::with_capacity(w.saturating_sub(1) * h);
    for y in 0..h {
        for x in 0..w - 1 {
            hd.push(color_dist2(frame, y * w + x, y * w + x + 1));
        }
    }
    let vd: Vec<f64> = (0..w * (h - 1)).map(|i| color_dist2(frame, i, i + w)).collect();
    let beta = match beta {
        Some(b) if b > 0.0 && b.is_finite() => b,
        Some(b) => return Err(Error::invalid(format!("beta must be finite and > 0, got {b}"))),
        None => {
            let count = hd.len() + vd.len();
            let mean = hd.iter().chain(&vd).sum::<f64>() / count.max(1) as f64;
            if mean > 0.0 {
                1.0 / (2.0 * mean)
            } else {
                1.0
            }
        }
    };
    let weight = |d: &f64| (-beta * d).exp();
    Ok(PairwiseWeights {
        width: w,
        height: h,
        beta,
        horizontal: hd.iter().map(weight).collect(),
        vertical: vd.iter().map(weight).collect(),
    })
}

fn check_terms(context: &'static str, unary: &UnaryCosts, pairwise: &PairwiseWeights, lambda: f64) -> Result<()> {
    check_dims(context, unary.dims(), pairwise.dims())?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    Ok(())
}

fn energy_of(labels: &[u8], unary: &UnaryCosts, pairwise: &PairwiseWeights, lambda: f64) -> f64 {
    let data: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| if l == 0 { unary.cost_bg[i] } else { unary.cost_fg[i] })
        .sum();
    let smooth: f64 = pairwise
        .edges()
        .filter(|&(i, j, _)| labels[i] != labels[j])
        .map(|(_, _, w)| w)
        .sum();
    data + lambda * smooth
}

pub fn energy(labeling: &BinaryMask, unary: &UnaryCosts, pairwise: &PairwiseWeights, lambda: f64) -> Result<f64> {
    check_terms("energy", unary, pairwise, lambda)?;
    check_dims("energy", unary.dims(), labeling.dims())?;
    Ok(energy_of(labeling.labels(), unary, pairwise, lambda))
}

/// Exact minimizer of the energy via s-t minimum cut.
///
/// Foreground is the set of pixels still reachable from the source after
/// max-flow, which is the smallest source side among all minimum cuts.
pub fn min_cut_labeling(unary: &UnaryCosts, pairwise: &PairwiseWeights, lambda: f64) -> Result<BinaryMask> {
    check_terms("min_cut_labeling", unary, pairwise, lambda)?;
    let (w, h) = unary.dims();
    let n = w * h;
    let (source, sink) = (n, n + 1);
    let mut g = FlowGraph::new(n + 2);
    for i in 0..n {
        // Pushing the shared part of both terminal costs straight through
        // keeps only one terminal arc per pixel.
        let (bg, fg) = (unary.cost_bg[i], unary.cost_fg[i]);
        let shared = bg.min(fg);
        if bg > shared {
            g.add_edge(source, i, bg - shared, 0.0);
        }
        if fg > shared {
            g.add_edge(i, sink, fg - shared, 0.0);
        }
    }
    if lambda > 0.0 {
        for (i, j, wt) in pairwise.edges() {
            let cap = lambda * wt;
            if cap > 0.0 {
                g.add_edge(i, j, cap, cap);
            }
        }
    }
    g.max_flow(source, sink);
    let side = g.source_side(source);
    Ok(BinaryMask::from_raw(w, h, side[..n].iter().map(|&s| u8::from(s)).collect()))
}

/// Exhaustive minimizer for tiny grids. Pixel 0 is the most significant bit
/// and the first strict minimum wins, so ties resolve to the
/// lexicographically smallest labeling.
pub fn brute_force_labeling(unary: &UnaryCosts, pairwise: &PairwiseWeights, lambda: f64) -> Result<BinaryMask> {
    check_terms("brute_force_labeling", unary, pairwise, lambda)?;
    let (w, h) = unary.dims();
    let n = w * h;
    if n > BRUTE_FORCE_MAX_PIXELS {
        return Err(Error::TooLarge(format!(
            "brute force labeling of {n} pixels (limit {BRUTE_FORCE_MAX_PIXELS})"
        )));
    }
    let mut labels = vec![0u8; n];
    let mut best = (f64::INFINITY, labels.clone());
    for pattern in 0u32..(1u32 << n) {
        for (i, l) in labels.iter_mut().enumerate() {
            *l = ((pattern >> (n - 1 - i)) & 1) as u8;
        }
        let e = energy_of(&labels, unary, pairwise, lambda);
        if e < best.0 {
            best = (e, labels.clone());
        }
    }
    Ok(BinaryMask::from_raw(w, h, best.1))
}

/// Everything fitted from one frame and its coarse mask.
#[derive(Debug, Clone)]
pub struct CrfTerms {
    pub fg: ColorGmm,
    pub bg: ColorGmm,
    pub unary: UnaryCosts,
    pub pairwise: PairwiseWeights,
}

fn pixels_where(frame: &Frame, mask: &BinaryMask, label: u8) -> Vec<[f64; 3]> {
    mask.labels()
        .iter()
        .enumerate()
        .filter(|&(_, &l)| l == label)
        .map(|(i, _)| frame.unit_color(i))
        .collect()
}

/// Fits both mixtures from `coarse` and builds the energy terms. The mask
/// must contain both labels.
pub fn fit_crf_terms(frame: &Frame, coarse: &BinaryMask, cfg: &PipelineConfig, seed: u64) -> Result<CrfTerms> {
    check_dims("crf_refine", frame.dims(), coarse.dims())?;
    let fg_pixels = pixels_where(frame, coarse, 1);
    let bg_pixels = pixels_where(frame, coarse, 0);
    let fg = fit_gmm(&fg_pixels, cfg.gmm_components, seed)?;
    let bg = fit_gmm(&bg_pixels, cfg.gmm_components, seed.wrapping_add(0x9e37_79b9_7f4a_7c15))?;
    let unary = unary_costs(frame, &fg, &bg);
    let pairwise = pairwise_weights(frame, cfg.beta_override)?;
    Ok(CrfTerms {
        fg,
        bg,
        unary,
        pairwise,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrfOutcome {
    pub mask: BinaryMask,
    /// Set when the coarse mask had a single label and was returned as is.
    pub pass_through: bool,
}

pub fn crf_refine(frame: &Frame, coarse: &BinaryMask, cfg: &PipelineConfig, seed: u64) -> Result<CrfOutcome> {
    check_dims("crf_refine", frame.dims(), coarse.dims())?;
    if coarse.is_all_background() || coarse.is_all_foreground() {
        return Ok(CrfOutcome {
            mask: coarse.clone(),
            pass_through: true,
        });
    }
    let terms = fit_crf_terms(frame, coarse, cfg, seed)?;
    Ok(CrfOutcome {
        mask: min_cut_labeling(&terms.unary, &terms.pairwise, cfg.lambda)?,
        pass_through: false,
    })
}
