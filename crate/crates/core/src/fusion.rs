//! Optical edge density, SAR fusion and non-local means denoising.
//!
//! All kernels replicate edge pixels at the borders so that density does not
//! artificially fall off at the scene boundary.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{check_alignment, normalize_minmax, Grid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    /// Standard deviation of the edge-density blur, in pixels.
    pub blur_sigma: f64,
    pub w_optical: f64,
    pub w_sar: f64,
    /// NLM patch side, odd.
    pub nlm_patch: usize,
    /// NLM search window side, odd. Runtime grows with its square.
    pub nlm_search: usize,
    /// Filtering strength as a fraction of the input value range.
    pub nlm_strength: f64,
    /// Noise standard deviation used by NLM. `None` estimates it from the
    /// image.
    pub nlm_noise_sigma: Option<f64>,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            blur_sigma: 8.0,
            w_optical: 1.0,
            w_sar: 1.0,
            nlm_patch: 7,
            nlm_search: 21,
            nlm_strength: 0.1,
            nlm_noise_sigma: None,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.blur_sigma.is_finite() && self.blur_sigma > 0.0) {
            return bad("blur_sigma must be > 0");
        }
        if !(self.w_optical >= 0.0 && self.w_sar >= 0.0)
            || !(self.w_optical + self.w_sar > 0.0)
            || !(self.w_optical + self.w_sar).is_finite()
        {
            return bad("fusion weights must be >= 0 with a positive sum");
        }
        for (name, n) in [("nlm_patch", self.nlm_patch), ("nlm_search", self.nlm_search)] {
            if n < 3 || n % 2 == 0 {
                return Err(Error::Config(format!("{name} must be odd and >= 3, got {n}")));
            }
        }
        if !(self.nlm_strength.is_finite() && self.nlm_strength > 0.0) {
            return bad("nlm_strength must be > 0");
        }
        if let Some(s) = self.nlm_noise_sigma {
            if !(s.is_finite() && s >= 0.0) {
                return bad("nlm_noise_sigma must be >= 0");
            }
        }
        Ok(())
    }
}

/// Gradient magnitude from the 3x3 Sobel pair.
pub fn sobel_magnitude(g: &Grid) -> Result<Grid> {
    let (w, h) = (g.width(), g.height());
    if w < 3 || h < 3 {
        return Err(Error::GridTooSmall {
            width: w,
            height: h,
            kernel: 3,
        });
    }
    let mut out = vec![0.0; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let y = y as isize;
        for (x, o) in row.iter_mut().enumerate() {
            let x = x as isize;
            let p = |dx: isize, dy: isize| g.get_clamped(x + dx, y + dy);
            let gx = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
            let gy = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
            *o = (gx * gx + gy * gy).sqrt();
        }
    });
    Ok(g.with_values(out))
}

/// Normalized 1-D Gaussian taps for offsets `-r..=r`, `r = ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

/// Separable Gaussian blur with edge replication. No normalization.
pub fn gaussian_blur(g: &Grid, sigma: f64) -> Grid {
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as isize;
    let (w, h) = (g.width(), g.height());

    let mut tmp = vec![0.0; w * h];
    tmp.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, o) in row.iter_mut().enumerate() {
            *o = kernel
                .iter()
                .enumerate()
                .map(|(k, &t)| t * g.get_clamped(x as isize + k as isize - r, y as isize))
                .sum();
        }
    });
    let mut out = vec![0.0; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, o) in row.iter_mut().enumerate() {
            *o = kernel
                .iter()
                .enumerate()
                .map(|(k, &t)| {
                    let yy = (y as isize + k as isize - r).clamp(0, h as isize - 1) as usize;
                    t * tmp[yy * w + x]
                })
                .sum();
        }
    });
    g.with_values(out)
}

/// Continuous edge-density field: Gaussian blur of the edge map, rescaled
/// to `[0, 1]`.
pub fn edge_density(edges: &Grid, cfg: &FusionConfig) -> Grid {
    normalize_minmax(&gaussian_blur(edges, cfg.blur_sigma))
}

/// Weighted per-pixel sum of the optical edge density and normalized SAR.
pub fn combine(edge_density: &Grid, sar_norm: &Grid, cfg: &FusionConfig) -> Result<Grid> {
    check_alignment(edge_density, sar_norm)?;
    let values = edge_density
        .values()
        .iter()
        .zip(sar_norm.values())
        .map(|(&e, &s)| cfg.w_optical * e + cfg.w_sar * s)
        .collect();
    Ok(edge_density.with_values(values))
}

/// Fast noise standard deviation estimate (Immerkaer 1996): mean absolute
/// response of the difference-of-Laplacians mask over interior pixels.
pub fn estimate_noise_sigma(g: &Grid) -> f64 {
    let (w, h) = (g.width(), g.height());
    if w < 3 || h < 3 {
        return 0.0;
    }
    const MASK: [[f64; 3]; 3] = [[1.0, -2.0, 1.0], [-2.0, 4.0, -2.0], [1.0, -2.0, 1.0]];
    let total: f64 = (1..h - 1)
        .into_par_iter()
        .map(|y| {
            let mut acc = 0.0;
            for x in 1..w - 1 {
                let mut s = 0.0;
                for (j, mrow) in MASK.iter().enumerate() {
                    for (i, m) in mrow.iter().enumerate() {
                        s += m * g.get(x + i - 1, y + j - 1);
                    }
                }
                acc += s.abs();
            }
            acc
        })
        .collect::<Vec<_>>()
        .iter()
        .sum();
    (std::f64::consts::PI / 2.0).sqrt() * total / (6.0 * ((w - 2) * (h - 2)) as f64)
}

/// Whether the NLM search window fits inside the grid.
pub fn nlm_fits(g: &Grid, cfg: &FusionConfig) -> bool {
    g.width() >= cfg.nlm_search && g.height() >= cfg.nlm_search
}

/// Non-local means. Each pixel becomes the weighted mean of the in-grid
/// pixels of its search window, with weight
/// `exp(-max(d2 - 2 sigma_n^2, 0) / h^2)` where `d2` is the mean squared
/// difference between the two patches (edge-replicated) and
/// `h = nlm_strength * range(g)`.
///
/// Patch distances are box-filtered per search offset, so the cost is
/// `O(search^2 * N)` independent of the patch size. Rows are processed in
/// parallel; the summation order is fixed, so output is deterministic.
///
/// Grids smaller than the search window are returned unchanged.
pub fn nlm_denoise(g: &Grid, cfg: &FusionConfig) -> Grid {
    if !nlm_fits(g, cfg) {
        log::warn!(
            "grid {}x{} smaller than NLM search window {}; skipping denoise",
            g.width(),
            g.height(),
            cfg.nlm_search
        );
        return g.clone();
    }
    let (lo, hi) = g.min_max();
    let range = hi - lo;
    if range <= 0.0 {
        return g.clone();
    }
    let sigma_n = cfg.nlm_noise_sigma.unwrap_or_else(|| estimate_noise_sigma(g));
    let h2 = (cfg.nlm_strength * range).powi(2);
    let bias = 2.0 * sigma_n * sigma_n;

    let (w, h) = (g.width(), g.height());
    let pr = (cfg.nlm_patch / 2) as isize;
    let sr = (cfg.nlm_search / 2) as isize;
    let side = 2 * pr as usize + 1;
    let patch_area = (side * side) as f64;
    // padded image, pad = patch radius
    let (wp, hp) = (w + 2 * pr as usize, h + 2 * pr as usize);
    let padded: Vec<f64> = (0..hp)
        .flat_map(|v| (0..wp).map(move |u| (u, v)))
        .map(|(u, v)| g.get_clamped(u as isize - pr, v as isize - pr))
        .collect();

    let mut acc_w = vec![0.0; w * h];
    let mut acc_v = vec![0.0; w * h];
    // horizontal window sums of squared differences, w columns x hp rows
    let mut hsum = vec![0.0; w * hp];

    for dy in -sr..=sr {
        for dx in -sr..=sr {
            hsum.par_chunks_mut(w).enumerate().for_each(|(v, row)| {
                let vq = v as isize + dy;
                if vq < 0 || vq >= hp as isize {
                    row.iter_mut().for_each(|s| *s = 0.0);
                    return;
                }
                let base_p = v * wp;
                let base_q = vq as usize * wp;
                let diff = |u: usize| -> f64 {
                    let uq = u as isize + dx;
                    if uq < 0 || uq >= wp as isize {
                        return 0.0;
                    }
                    let d = padded[base_p + u] - padded[base_q + uq as usize];
                    d * d
                };
                let mut s: f64 = (0..side).map(diff).sum();
                row[0] = s;
                for (x, slot) in row.iter_mut().enumerate().skip(1) {
                    s += diff(x + side - 1) - diff(x - 1);
                    *slot = s;
                }
            });
            let hsum = &hsum;
            acc_w
                .par_chunks_mut(w)
                .zip(acc_v.par_chunks_mut(w))
                .enumerate()
                .for_each(|(y, (aw, av))| {
                    let qy = y as isize + dy;
                    if qy < 0 || qy >= h as isize {
                        return;
                    }
                    let qrow = &g.values()[qy as usize * w..(qy as usize + 1) * w];
                    for x in 0..w {
                        let qx = x as isize + dx;
                        if qx < 0 || qx >= w as isize {
                            continue;
                        }
                        let ssd: f64 = (0..side).map(|j| hsum[(y + j) * w + x]).sum();
                        let d2 = (ssd / patch_area - bias).max(0.0);
                        let weight = (-d2 / h2).exp();
                        aw[x] += weight;
                        av[x] += weight * qrow[qx as usize];
                    }
                });
        }
    }

    let values = acc_v
        .iter()
        .zip(&acc_w)
        .zip(g.values())
        .map(|((&v, &wsum), &orig)| {
            if wsum > 0.0 {
                (v / wsum).clamp(lo, hi)
            } else {
                orig
            }
        })
        .collect();
    g.with_values(values)
}
