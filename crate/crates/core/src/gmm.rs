//! Histogram decomposition into three Gaussian components and the water /
//! urban thresholds taken from the intersections of adjacent components.
//!
//! EM runs on bin centers weighted by counts, so each iteration is `O(bins)`
//! regardless of image size. Initialization is fixed (10th/50th/90th
//! percentiles, equal weights, a third of the data standard deviation), which
//! makes the fit fully deterministic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Grid;

pub const DEFAULT_BINS: usize = 256;
pub const DEFAULT_TAU_CENTER: f64 = 1.4;
pub const MAX_EM_ITERATIONS: usize = 500;
pub const EM_TOLERANCE: f64 = 1e-8;

/// Components whose mixing weight falls below this are considered collapsed.
const MIN_WEIGHT: f64 = 1e-10;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// Equal-width bins over `[min, max]`; the maximum lands in the last bin.
    pub fn from_values(values: &[f64], bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::Config("histogram needs at least one bin".into()));
        }
        if values.is_empty() {
            return Err(Error::InvalidGrid("cannot histogram an empty grid".into()));
        }
        let (lo, hi) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        if hi <= lo {
            return Err(Error::DegenerateHistogram(lo));
        }
        let width = (hi - lo) / bins as f64;
        let mut bin_edges: Vec<f64> = (0..bins).map(|i| lo + i as f64 * width).collect();
        bin_edges.push(hi);
        let mut counts = vec![0u64; bins];
        for &v in values {
            let idx = (((v - lo) / width) as usize).min(bins - 1);
            counts[idx] += 1;
        }
        Ok(Self { bin_edges, counts })
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn bin_width(&self) -> f64 {
        (self.bin_edges[self.bins()] - self.bin_edges[0]) / self.bins() as f64
    }

    pub fn centers(&self) -> Vec<f64> {
        self.bin_edges.windows(2).map(|e| 0.5 * (e[0] + e[1])).collect()
    }

    /// Quantile `q` in `[0, 1]`, interpolating linearly inside the bin that
    /// contains it.
    pub fn quantile(&self, q: f64) -> f64 {
        let target = q.clamp(0.0, 1.0) * self.total() as f64;
        let mut cum = 0.0;
        for (i, &c) in self.counts.iter().enumerate() {
            let c = c as f64;
            if c > 0.0 && cum + c >= target {
                let frac = ((target - cum) / c).clamp(0.0, 1.0);
                return self.bin_edges[i] + frac * (self.bin_edges[i + 1] - self.bin_edges[i]);
            }
            cum += c;
        }
        self.bin_edges[self.bins()]
    }

    /// Count-weighted mean and standard deviation of the bin centers.
    fn moments(&self) -> (f64, f64) {
        let n = self.total() as f64;
        let centers = self.centers();
        let mean = centers
            .iter()
            .zip(&self.counts)
            .map(|(&x, &c)| x * c as f64)
            .sum::<f64>()
            / n;
        let var = centers
            .iter()
            .zip(&self.counts)
            .map(|(&x, &c)| c as f64 * (x - mean).powi(2))
            .sum::<f64>()
            / n;
        (mean, var.sqrt())
    }
}

/// Equal-width histogram over `[min(g), max(g)]` with at least 8 bins.
pub fn build_histogram(g: &Grid, bins: usize) -> Result<Histogram> {
    if bins < 8 {
        return Err(Error::Config(format!("histogram needs >= 8 bins, got {bins}")));
    }
    Histogram::from_values(g.values(), bins)
}

/// Three-component mixture, sorted by mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmParams {
    pub weights: [f64; 3],
    pub means: [f64; 3],
    pub stds: [f64; 3],
    pub log_likelihood: f64,
}

impl GmmParams {
    pub fn component_pdf(&self, k: usize, x: f64) -> f64 {
        self.weights[k] * normal_pdf(x, self.means[k], self.stds[k])
    }

    pub fn pdf(&self, x: f64) -> f64 {
        (0..3).map(|k| self.component_pdf(k, x)).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmFit {
    pub params: GmmParams,
    pub iterations: usize,
    pub converged: bool,
    /// Log-likelihood before the first M-step and after each iteration.
    pub log_likelihood_trace: Vec<f64>,
}

pub fn normal_pdf(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    (-0.5 * z * z - LN_SQRT_2PI).exp() / std
}

struct Weighted {
    x: Vec<f64>,
    c: Vec<f64>,
    n: f64,
}

/// E-step: responsibilities per (point, component) and the log-likelihood.
fn e_step(data: &Weighted, w: &[f64; 3], m: &[f64; 3], s: &[f64; 3], resp: &mut [[f64; 3]]) -> f64 {
    let mut ll = 0.0;
    for (i, &x) in data.x.iter().enumerate() {
        let mut lp = [0.0; 3];
        for k in 0..3 {
            let z = (x - m[k]) / s[k];
            lp[k] = w[k].ln() - s[k].ln() - LN_SQRT_2PI - 0.5 * z * z;
        }
        let top = lp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = lp.iter().map(|&l| (l - top).exp()).sum();
        let lse = top + sum.ln();
        for k in 0..3 {
            resp[i][k] = (lp[k] - lse).exp();
        }
        ll += data.c[i] * lse;
    }
    ll
}

/// Fits three Gaussians to the histogram by EM.
pub fn fit_gmm_em(h: &Histogram) -> Result<GmmFit> {
    let nonempty = h.counts.iter().filter(|&&c| c > 0).count();
    if nonempty < 3 {
        return Err(Error::TooFewBins(nonempty));
    }
    let floor = h.bin_width();
    let data = {
        let (x, c): (Vec<f64>, Vec<f64>) = h
            .centers()
            .into_iter()
            .zip(&h.counts)
            .filter(|(_, &c)| c > 0)
            .map(|(x, &c)| (x, c as f64))
            .unzip();
        let n = c.iter().sum();
        Weighted { x, c, n }
    };

    let (_, data_std) = h.moments();
    let mut weights = [1.0 / 3.0; 3];
    let mut means = [h.quantile(0.10), h.quantile(0.50), h.quantile(0.90)];
    let s0 = (data_std / 3.0).max(floor);
    let mut stds = [s0; 3];

    let mut resp = vec![[0.0; 3]; data.x.len()];
    let mut ll_prev = e_step(&data, &weights, &means, &stds, &mut resp);
    let mut trace = vec![ll_prev];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < MAX_EM_ITERATIONS {
        iterations += 1;
        for k in 0..3 {
            let nk: f64 = data.c.iter().zip(&resp).map(|(&c, r)| c * r[k]).sum();
            if nk / data.n < MIN_WEIGHT {
                return Err(Error::EmCollapse { component: k });
            }
            let mean = data.x.iter().zip(&data.c).zip(&resp)
                .map(|((&x, &c), r)| c * r[k] * x)
                .sum::<f64>()
                / nk;
            let var = data.x.iter().zip(&data.c).zip(&resp)
                .map(|((&x, &c), r)| c * r[k] * (x - mean).powi(2))
                .sum::<f64>()
                / nk;
            weights[k] = nk / data.n;
            means[k] = mean;
            stds[k] = var.sqrt().max(floor);
        }
        let ll = e_step(&data, &weights, &means, &stds, &mut resp);
        debug_assert!(
            ll >= ll_prev - 1e-9 * (1.0 + ll_prev.abs()),
            "EM log-likelihood decreased: {ll_prev} -> {ll}"
        );
        trace.push(ll);
        if (ll - ll_prev).abs() < EM_TOLERANCE {
            converged = true;
            ll_prev = ll;
            break;
        }
        ll_prev = ll;
    }

    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| means[a].total_cmp(&means[b]));
    let params = GmmParams {
        weights: order.map(|k| weights[k]),
        means: order.map(|k| means[k]),
        stds: order.map(|k| stds[k]),
        log_likelihood: ll_prev,
    };
    if params.means[0] >= params.means[1] || params.means[1] >= params.means[2] {
        return Err(Error::EmCollapse {
            component: if params.means[0] >= params.means[1] { 1 } else { 2 },
        });
    }
    Ok(GmmFit {
        params,
        iterations,
        converged,
        log_likelihood_trace: trace,
    })
}

/// Point in `(m1, m2)` where `w1 N(x; m1, s1) = w2 N(x; m2, s2)`.
///
/// Solves the quadratic in `x` obtained from equal log densities and keeps the
/// root inside the interval where the first component hands over to the
/// second. Falls back to bisection on the log-ratio when the closed form is
/// ill-conditioned. `None` when one component dominates the whole interval.
pub fn pair_intersection(w1: f64, m1: f64, s1: f64, w2: f64, m2: f64, s2: f64) -> Option<f64> {
    if !(m1 < m2) {
        return None;
    }
    // f(x) = ln(w1 N1) - ln(w2 N2); positive where component 1 dominates.
    let log_ratio = |x: f64| {
        let z1 = (x - m1) / s1;
        let z2 = (x - m2) / s2;
        (w1 / s1).ln() - 0.5 * z1 * z1 - (w2 / s2).ln() + 0.5 * z2 * z2
    };
    let a = 0.5 / (s2 * s2) - 0.5 / (s1 * s1);
    let b = m1 / (s1 * s1) - m2 / (s2 * s2);
    let c = 0.5 * m2 * m2 / (s2 * s2) - 0.5 * m1 * m1 / (s1 * s1) + (w1 * s2 / (w2 * s1)).ln();

    let mut roots: Vec<f64> = Vec::with_capacity(2);
    let scale = b.abs().max(c.abs()).max(1e-300);
    if a.abs() <= 1e-12 * scale {
        if b != 0.0 {
            roots.push(-c / b);
        }
    } else {
        let disc = b * b - 4.0 * a * c;
        if disc >= 0.0 {
            let q = -0.5 * (b + b.signum() * disc.sqrt());
            if q != 0.0 {
                roots.push(q / a);
                roots.push(c / q);
            } else {
                roots.push(-b / (2.0 * a));
            }
        }
    }
    let inside: Vec<f64> = roots.into_iter().filter(|&x| x > m1 && x < m2).collect();
    // Prefer the crossing where the ratio goes from component 1 to component 2.
    let slope = |x: f64| {
        let eps = 1e-7 * (m2 - m1);
        log_ratio(x + eps) - log_ratio(x - eps)
    };
    if let Some(&x) = inside.iter().find(|&&x| slope(x) < 0.0).or(inside.first()) {
        return Some(x);
    }

    let (fa, fb) = (log_ratio(m1), log_ratio(m2));
    if fa > 0.0 && fb < 0.0 {
        let (mut lo, mut hi) = (m1, m2);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if log_ratio(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        return Some(0.5 * (lo + hi));
    }
    None
}

/// Intersections between components (1,2) and (2,3).
pub fn find_intersections(p: &GmmParams) -> [Option<f64>; 2] {
    [0, 1].map(|i| {
        pair_intersection(
            p.weights[i],
            p.means[i],
            p.stds[i],
            p.weights[i + 1],
            p.means[i + 1],
            p.stds[i + 1],
        )
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdProvenance {
    GmmIntersection,
    QuantileFallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub tau_water: f64,
    pub tau_urban: f64,
    pub tau_center: f64,
    pub provenance: ThresholdProvenance,
    /// Set when the derived thresholds came out inverted and were swapped.
    #[serde(default)]
    pub swapped: bool,
}

impl Thresholds {
    /// 25th / 75th percentile thresholds, used when the mixture fit fails.
    pub fn quantile_fallback(h: &Histogram, tau_center: f64) -> Self {
        finish(h.quantile(0.25), h.quantile(0.75), tau_center, ThresholdProvenance::QuantileFallback, h)
    }
}

fn finish(
    mut water: f64,
    mut urban: f64,
    tau_center: f64,
    provenance: ThresholdProvenance,
    h: &Histogram,
) -> Thresholds {
    let mut swapped = false;
    if water > urban {
        log::warn!("water threshold {water} above urban threshold {urban}; swapping");
        std::mem::swap(&mut water, &mut urban);
        swapped = true;
    }
    if water == urban {
        urban = (water + h.bin_width()).min(h.bin_edges[h.bins()]);
        if urban <= water {
            urban = water.next_up();
        }
    }
    Thresholds {
        tau_water: water,
        tau_urban: urban,
        tau_center,
        provenance,
        swapped,
    }
}

/// Water threshold from the first intersection, urban from the second; a
/// missing intersection falls back to the 25th / 75th percentile.
pub fn derive_thresholds(p: &GmmParams, h: &Histogram, tau_center: f64) -> Thresholds {
    let [first, second] = find_intersections(p);
    let provenance = if first.is_some() && second.is_some() {
        ThresholdProvenance::GmmIntersection
    } else {
        ThresholdProvenance::QuantileFallback
    };
    let water = first.unwrap_or_else(|| h.quantile(0.25));
    let urban = second.unwrap_or_else(|| h.quantile(0.75));
    finish(water, urban, tau_center, provenance, h)
}
