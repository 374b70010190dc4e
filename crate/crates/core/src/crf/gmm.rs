//! Full-covariance RGB Gaussian mixtures fitted by k-means++ seeded EM.

use nalgebra::{Cholesky, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Ridge added to every covariance estimate.
pub const COVARIANCE_RIDGE: f64 = 1e-3;
pub const EM_MAX_ITERATIONS: usize = 50;
pub const EM_RELATIVE_TOLERANCE: f64 = 1e-4;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, PartialEq)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: [f64; 3],
    pub covariance: Matrix3<f64>,
    inverse: Matrix3<f64>,
    log_det: f64,
}

impl GmmComponent {
    pub fn new(weight: f64, mean: [f64; 3], covariance: Matrix3<f64>) -> Result<Self> {
        let chol = Cholesky::new(covariance)
            .ok_or_else(|| Error::invalid("covariance is not positive definite"))?;
        let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Ok(GmmComponent {
            weight,
            mean,
            covariance,
            inverse: chol.inverse(),
            log_det,
        })
    }

    pub fn is_active(&self) -> bool {
        self.weight > 0.0
    }

    /// Log of the Gaussian density (without the mixture weight).
    pub fn log_density(&self, x: &[f64; 3]) -> f64 {
        let d = Vector3::new(x[0] - self.mean[0], x[1] - self.mean[1], x[2] - self.mean[2]);
        let maha = (d.transpose() * self.inverse * d)[(0, 0)];
        -0.5 * (3.0 * LN_2PI + self.log_det + maha)
    }
}

/// Mixture of `k_c` components; surplus components carry weight 0 and are
/// ignored by the likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorGmm {
    components: Vec<GmmComponent>,
}

impl ColorGmm {
    pub fn new(components: Vec<GmmComponent>) -> Result<Self> {
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if components.is_empty() || components.iter().any(|c| c.weight < 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("mixture weights must be non-negative and sum to 1"));
        }
        Ok(ColorGmm { components })
    }

    pub fn components(&self) -> &[GmmComponent] {
        &self.components
    }

    pub fn active(&self) -> impl Iterator<Item = &GmmComponent> + Clone {
        self.components.iter().filter(|c| c.is_active())
    }

    pub fn log_likelihood(&self, x: &[f64; 3]) -> f64 {
        log_sum_exp(self.active().map(|c| c.weight.ln() + c.log_density(x)))
    }

    pub fn total_log_likelihood(&self, pixels: &[[f64; 3]]) -> f64 {
        pixels.iter().map(|x| self.log_likelihood(x)).sum()
    }
}

fn log_sum_exp(terms: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = terms.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + terms.map(|t| (t - max).exp()).sum::<f64>().ln()
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|c| (a[c] - b[c]).powi(2)).sum()
}

/// k-means++ seeding. Stops early when every pixel coincides with a center.
fn kmeans_pp(pixels: &[[f64; 3]], k: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let mut centers = vec![pixels[rng.gen_range(0..pixels.len())]];
    let mut nearest: Vec<f64> = pixels.iter().map(|p| dist2(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = nearest.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut target = rng.gen::<f64>() * total;
        let mut pick = nearest.iter().rposition(|&d| d > 0.0).unwrap();
        for (i, &d) in nearest.iter().enumerate() {
            if d > 0.0 && target < d {
                pick = i;
                break;
            }
            target -= d;
        }
        let c = pixels[pick];
        for (n, p) in nearest.iter_mut().zip(pixels) {
            *n = n.min(dist2(p, &c));
        }
        centers.push(c);
    }
    centers
}

/// Weighted maximum-likelihood update from per-pixel responsibilities
/// (`resp[i * k + j]`). Components with no mass are deactivated.
fn m_step(pixels: &[[f64; 3]], resp: &[f64], k: usize) -> Result<Vec<GmmComponent>> {
    let n = pixels.len() as f64;
    let mut out = Vec::with_capacity(k);
    for j in 0..k {
        let mass: f64 = (0..pixels.len()).map(|i| resp[i * k + j]).sum();
        if mass <= 1e-9 {
            out.push(inactive());
            continue;
        }
        let mut mean = [0.0; 3];
        for (i, p) in pixels.iter().enumerate() {
            let r = resp[i * k + j];
            for c in 0..3 {
                mean[c] += r * p[c];
            }
        }
        mean.iter_mut().for_each(|m| *m /= mass);
        let mu = Vector3::from(mean);
        let mut cov = Matrix3::zeros();
        for (i, p) in pixels.iter().enumerate() {
            let r = resp[i * k + j];
            if r > 0.0 {
                let d = Vector3::from(*p) - mu;
                cov += d * d.transpose() * r;
            }
        }
        cov /= mass;
        cov += Matrix3::identity() * COVARIANCE_RIDGE;
        out.push(GmmComponent::new(mass / n, mean, cov)?);
    }
    let total: f64 = out.iter().map(|c| c.weight).sum();
    for c in &mut out {
        c.weight /= total;
    }
    Ok(out)
}

fn inactive() -> GmmComponent {
    let cov = Matrix3::identity() * COVARIANCE_RIDGE;
    GmmComponent::new(0.0, [0.0; 3], cov).expect("ridge is positive definite")
}

/// E-step: responsibilities and the total log-likelihood.
fn e_step(pixels: &[[f64; 3]], comps: &[GmmComponent], resp: &mut [f64]) -> f64 {
    let k = comps.len();
    let mut total = 0.0;
    let mut logs = vec![f64::NEG_INFINITY; k];
    for (i, p) in pixels.iter().enumerate() {
        for (j, c) in comps.iter().enumerate() {
            logs[j] = if c.is_active() {
                c.weight.ln() + c.log_density(p)
            } else {
                f64::NEG_INFINITY
            };
        }
        let lse = log_sum_exp(logs.iter().copied());
        total += lse;
        for j in 0..k {
            resp[i * k + j] = (logs[j] - lse).exp();
        }
    }
    total
}

/// Fits a `k`-component mixture and returns it with the log-likelihood of
/// every accepted EM iterate (non-decreasing).
pub fn fit_gmm_traced(pixels: &[[f64; 3]], k: usize, seed: u64) -> Result<(ColorGmm, Vec<f64>)> {
    if pixels.is_empty() {
        return Err(Error::invalid("cannot fit a mixture to zero pixels"));
    }
    if k == 0 {
        return Err(Error::invalid("mixture needs at least one component"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = kmeans_pp(pixels, k, &mut rng);

    // Hard assignment to the nearest seed center initializes EM.
    let mut resp = vec![0.0; pixels.len() * k];
    for (i, p) in pixels.iter().enumerate() {
        let j = (0..centers.len())
            .min_by(|&a, &b| dist2(p, &centers[a]).total_cmp(&dist2(p, &centers[b])))
            .unwrap();
        resp[i * k + j] = 1.0;
    }
    let mut comps = m_step(pixels, &resp, k)?;
    let mut ll = e_step(pixels, &comps, &mut resp);
    let mut trace = vec![ll];
    let mut next_resp = vec![0.0; resp.len()];
    for _ in 0..EM_MAX_ITERATIONS {
        let next = m_step(pixels, &resp, k)?;
        let next_ll = e_step(pixels, &next, &mut next_resp);
        if next_ll < ll {
            // The ridge can break EM's ascent guarantee; keep the better iterate.
            break;
        }
        let gain = (next_ll - ll) / ll.abs().max(f64::MIN_POSITIVE);
        comps = next;
        ll = next_ll;
        std::mem::swap(&mut resp, &mut next_resp);
        trace.push(ll);
        if gain < EM_RELATIVE_TOLERANCE {
            break;
        }
    }
    Ok((ColorGmm { components: comps }, trace))
}

pub fn fit_gmm(pixels: &[[f64; 3]], k: usize, seed: u64) -> Result<ColorGmm> {
    fit_gmm_traced(pixels, k, seed).map(|(g, _)| g)
}
