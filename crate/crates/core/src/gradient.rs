//! Density-distance profile around urban centers and the metrics derived
//! from it: gradient coefficient (alpha), minimum effective distance (LD),
//! density peaks and the mono/polycentric classification.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{Grid, Mask};

pub const DEFAULT_MINIMA_WINDOW: usize = 5;
pub const DEFAULT_PROMINENCE_FACTOR: f64 = 0.02;

/// Exact Euclidean distance (in pixels) from every pixel to the nearest set
/// pixel of `centers`.
///
/// Two separable passes (Meijster, Roerdink & Hesselink): a column scan for
/// the vertical distance, then a lower-envelope pass per row. All arithmetic
/// is on integers, so the squared distances are exact.
pub fn distance_transform(centers: &Mask, resolution_m: f64) -> Result<Grid> {
    let sq = squared_distance_transform(centers)?;
    let values = sq.into_iter().map(|d| (d as f64).sqrt()).collect();
    Grid::new(centers.width(), centers.height(), resolution_m, values)
}

/// Squared pixel distances to the nearest set pixel.
pub fn squared_distance_transform(centers: &Mask) -> Result<Vec<i64>> {
    if centers.is_empty() {
        return Err(Error::EmptyCenterMask);
    }
    let (w, h) = (centers.width(), centers.height());
    let inf = (w + h) as i64;

    // phase 1: vertical distance to the nearest center in the same column
    let mut g = vec![0i64; w * h];
    for x in 0..w {
        g[x] = if centers.get(x, 0) { 0 } else { inf };
        for y in 1..h {
            g[y * w + x] = if centers.get(x, y) { 0 } else { g[(y - 1) * w + x] + 1 };
        }
        for y in (0..h - 1).rev() {
            let below = g[(y + 1) * w + x];
            if below < g[y * w + x] {
                g[y * w + x] = below + 1;
            }
        }
    }

    // phase 2: lower envelope of parabolas along each row
    let mut out = vec![0i64; w * h];
    let mut s = vec![0usize; w];
    let mut t = vec![0i64; w];
    for y in 0..h {
        let row = &g[y * w..(y + 1) * w];
        let f = |x: i64, i: usize| (x - i as i64).pow(2) + row[i] * row[i];
        let sep = |i: usize, u: usize| {
            let (i64i, i64u) = (i as i64, u as i64);
            (i64u * i64u - i64i * i64i + row[u] * row[u] - row[i] * row[i]).div_euclid(2 * (i64u - i64i))
        };
        let mut q: isize = 0;
        s[0] = 0;
        t[0] = 0;
        for u in 1..w {
            while q >= 0 && f(t[q as usize], s[q as usize]) > f(t[q as usize], u) {
                q -= 1;
            }
            if q < 0 {
                q = 0;
                s[0] = u;
            } else {
                let wpos = 1 + sep(s[q as usize], u);
                if wpos < w as i64 {
                    q += 1;
                    s[q as usize] = u;
                    t[q as usize] = wpos;
                }
            }
        }
        for u in (0..w).rev() {
            out[y * w + u] = f(u as i64, s[q as usize]);
            if u as i64 == t[q as usize] {
                q -= 1;
            }
        }
    }
    Ok(out)
}

/// Mean urban density per 1-pixel distance bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityProfile {
    /// Distance bin `d` covers pixels with `d <= D < d + 1`.
    pub bin_index: Vec<usize>,
    pub bin_distance_km: Vec<f64>,
    pub mean_density: Vec<f64>,
    pub pixel_count: Vec<usize>,
    pub q25: Vec<f64>,
    pub q75: Vec<f64>,
}

impl DensityProfile {
    pub fn len(&self) -> usize {
        self.mean_density.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean_density.is_empty()
    }

    pub fn points(&self) -> Vec<(f64, f64)> {
        self.bin_distance_km
            .iter()
            .copied()
            .zip(self.mean_density.iter().copied())
            .collect()
    }

    /// Count-weighted mean of the bin means.
    pub fn weighted_mean(&self) -> f64 {
        let total: usize = self.pixel_count.iter().sum();
        self.mean_density
            .iter()
            .zip(&self.pixel_count)
            .map(|(&m, &c)| m * c as f64)
            .sum::<f64>()
            / total as f64
    }
}

/// Linear-interpolated quantile of sorted data.
fn sorted_quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Bins the density of urban pixels by their distance to the nearest center.
pub fn extract_profile(dist: &Grid, rho: &Grid, u_final: &Mask) -> Result<DensityProfile> {
    crate::raster::check_alignment(dist, rho)?;
    if !u_final.matches(rho) {
        return Err(Error::DimensionMismatch {
            a_width: rho.width(),
            a_height: rho.height(),
            b_width: u_final.width(),
            b_height: u_final.height(),
        });
    }
    if u_final.is_empty() {
        return Err(Error::NoUrbanArea);
    }
    let max_bin = dist.values().iter().fold(0.0f64, |m, &d| m.max(d)).floor() as usize;
    let mut bins: Vec<Vec<f64>> = vec![Vec::new(); max_bin + 1];
    for ((&d, &r), &u) in dist.values().iter().zip(rho.values()).zip(u_final.bits()) {
        if u {
            bins[d.floor() as usize].push(r);
        }
    }
    let km_per_px = dist.resolution_m() / 1000.0;
    let mut p = DensityProfile {
        bin_index: Vec::new(),
        bin_distance_km: Vec::new(),
        mean_density: Vec::new(),
        pixel_count: Vec::new(),
        q25: Vec::new(),
        q75: Vec::new(),
    };
    for (d, mut vals) in bins.into_iter().enumerate() {
        if vals.is_empty() {
            continue;
        }
        vals.sort_by(f64::total_cmp);
        p.bin_index.push(d);
        p.bin_distance_km.push(d as f64 * km_per_px);
        p.mean_density.push(vals.iter().sum::<f64>() / vals.len() as f64);
        p.pixel_count.push(vals.len());
        p.q25.push(sorted_quantile(&vals, 0.25));
        p.q75.push(sorted_quantile(&vals, 0.75));
    }
    Ok(p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimaSelection {
    /// Profile indices of the selected points.
    pub indices: Vec<usize>,
    pub points: Vec<(f64, f64)>,
    /// True when fewer than two minima were found and every profile point
    /// was used instead.
    pub fallback: bool,
}

/// Interior bins strictly below every other bin of the `window`-wide window
/// centred on them (truncated at the profile ends).
pub fn local_minima_indices(values: &[f64], window: usize) -> Vec<usize> {
    let n = values.len();
    if n < 3 {
        return Vec::new();
    }
    let half = (window.max(3) / 2) as isize;
    (1..n - 1)
        .filter(|&i| {
            let lo = (i as isize - half).max(0) as usize;
            let hi = ((i as isize + half) as usize).min(n - 1);
            (lo..=hi).all(|j| j == i || values[i] < values[j])
        })
        .collect()
}

pub fn find_local_minima(p: &DensityProfile, window: usize) -> MinimaSelection {
    let indices = local_minima_indices(&p.mean_density, window);
    if indices.len() >= 2 {
        let points = indices
            .iter()
            .map(|&i| (p.bin_distance_km[i], p.mean_density[i]))
            .collect();
        MinimaSelection {
            indices,
            points,
            fallback: false,
        }
    } else {
        MinimaSelection {
            indices: (0..p.len()).collect(),
            points: p.points(),
            fallback: true,
        }
    }
}

/// Least-squares line through density minima; `alpha` is per km.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientFit {
    pub alpha: f64,
    pub beta: f64,
    pub r_squared: f64,
    pub minima_points: Vec<(f64, f64)>,
}

impl GradientFit {
    pub fn predict(&self, d_km: f64) -> f64 {
        self.beta + self.alpha * d_km
    }
}

/// Ordinary least squares on `(distance_km, density)` pairs.
///
/// Uses the mean-centred form of the normal-equation slope, which is
/// algebraically the textbook `(n Sxy - Sx Sy) / (n Sxx - Sx^2)` but does not
/// cancel catastrophically.
pub fn fit_gradient(points: &[(f64, f64)]) -> Result<GradientFit> {
    if points.len() < 2 {
        return Err(Error::DegenerateRegression(format!(
            "{} point(s), need at least 2",
            points.len()
        )));
    }
    let n = points.len() as f64;
    let mean_d = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_r = points.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sdd, mut sdr, mut srr) = (0.0, 0.0, 0.0);
    for &(d, r) in points {
        let (dd, dr) = (d - mean_d, r - mean_r);
        sdd += dd * dd;
        sdr += dd * dr;
        srr += dr * dr;
    }
    if sdd == 0.0 {
        return Err(Error::DegenerateRegression("all distances identical".into()));
    }
    let alpha = sdr / sdd;
    let beta = mean_r - alpha * mean_d;
    let ss_res: f64 = points
        .iter()
        .map(|&(d, r)| (r - (beta + alpha * d)).powi(2))
        .sum();
    let r_squared = if srr == 0.0 { 1.0 } else { 1.0 - ss_res / srr };
    Ok(GradientFit {
        alpha,
        beta,
        r_squared,
        minima_points: points.to_vec(),
    })
}

/// Distance (km) where the fitted line reaches `rho_target`.
pub fn compute_ld(fit: &GradientFit, rho_target: f64) -> Result<f64> {
    if fit.alpha == 0.0 {
        return Err(Error::FlatGradient);
    }
    Ok((rho_target - fit.beta) / fit.alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub index: usize,
    pub value: f64,
    /// `value - min(left_low, right_low)`, the quantity thresholded by the
    /// detection rule.
    pub prominence: f64,
}

/// Local maxima `v[i] > v[i-1], v[i] > v[i+1]` whose height above the lower
/// of the two flanking minima exceeds `factor * (max - min)`.
///
/// A flanking minimum is the lowest value between the peak and the first
/// strictly higher sample on that side, or the profile end.
pub fn detect_peaks(values: &[f64], factor: f64) -> Vec<Peak> {
    let n = values.len();
    if n < 3 {
        return Vec::new();
    }
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let threshold = factor * (hi - lo);
    let mut peaks = Vec::new();
    for i in 1..n - 1 {
        let v = values[i];
        if !(v > values[i - 1] && v > values[i + 1]) {
            continue;
        }
        let left_low = values[..i]
            .iter()
            .rev()
            .take_while(|&&x| x <= v)
            .fold(v, |m, &x| m.min(x));
        let right_low = values[i + 1..]
            .iter()
            .take_while(|&&x| x <= v)
            .fold(v, |m, &x| m.min(x));
        let prominence = v - left_low.min(right_low);
        if prominence > threshold {
            peaks.push(Peak {
                index: i,
                value: v,
                prominence,
            });
        }
    }
    peaks
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfilePeak {
    pub distance_km: f64,
    pub density: f64,
    pub prominence: f64,
}

/// Peaks of the radial cross-section through the centers.
///
/// The profile is a function of distance from the centers, so the
/// cross-section is the profile mirrored about `d = 0`. Running
/// [`detect_peaks`] on that symmetric series lets the central bin count as a
/// peak when it dominates its neighbours; interior peaks are unaffected.
pub fn profile_peaks(p: &DensityProfile, factor: f64) -> Vec<ProfilePeak> {
    let n = p.len();
    if n < 2 {
        return Vec::new();
    }
    let mirrored: Vec<f64> = p.mean_density[1..]
        .iter()
        .rev()
        .chain(p.mean_density.iter())
        .copied()
        .collect();
    detect_peaks(&mirrored, factor)
        .into_iter()
        .filter(|pk| pk.index >= n - 1)
        .map(|pk| {
            let i = pk.index - (n - 1);
            ProfilePeak {
                distance_km: p.bin_distance_km[i],
                density: p.mean_density[i],
                prominence: pk.prominence,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Morphology {
    Monocentric,
    Polycentric,
}

/// Monocentric for at most one peak. The flag is set when there is no peak
/// at all.
pub fn classify_morphology(peak_count: usize) -> (Morphology, bool) {
    match peak_count {
        0 => (Morphology::Monocentric, true),
        1 => (Morphology::Monocentric, false),
        _ => (Morphology::Polycentric, false),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "kebab-case")]
pub enum RhoTarget {
    /// Lowest bin mean of the profile.
    ProfileMin,
    Absolute(f64),
}

impl Default for RhoTarget {
    fn default() -> Self {
        RhoTarget::ProfileMin
    }
}

impl RhoTarget {
    pub fn resolve(&self, p: &DensityProfile) -> f64 {
        match *self {
            RhoTarget::ProfileMin => p.mean_density.iter().copied().fold(f64::INFINITY, f64::min),
            RhoTarget::Absolute(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradientConfig {
    pub minima_window: usize,
    pub prominence_factor: f64,
    pub rho_target: RhoTarget,
}

impl Default for GradientConfig {
    fn default() -> Self {
        Self {
            minima_window: DEFAULT_MINIMA_WINDOW,
            prominence_factor: DEFAULT_PROMINENCE_FACTOR,
            rho_target: RhoTarget::ProfileMin,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientMetrics {
    pub alpha: f64,
    pub beta: f64,
    pub r_squared: f64,
    pub ld_km: f64,
    pub rho_target: f64,
    pub peaks: Vec<ProfilePeak>,
    pub morphology: Morphology,
    pub minima_count: usize,
    pub minima_fallback: bool,
    pub no_distinct_peak: bool,
    pub negative_ld: bool,
}

#[derive(Debug, Clone)]
pub struct GradientAnalysis {
    pub distance: Grid,
    pub profile: DensityProfile,
    pub minima: MinimaSelection,
    pub fit: GradientFit,
    pub metrics: GradientMetrics,
}

/// Distance transform, profile, fit, LD and peaks for one density field.
pub fn analyze_gradient(
    rho: &Grid,
    u_final: &Mask,
    centers: &Mask,
    cfg: &GradientConfig,
) -> Result<GradientAnalysis> {
    let distance = distance_transform(centers, rho.resolution_m())
        .map_err(Error::in_stage("distance_transform"))?;
    let profile =
        extract_profile(&distance, rho, u_final).map_err(Error::in_stage("extract_profile"))?;
    if profile.len() < 3 {
        return Err(Error::in_stage("extract_profile")(Error::ProfileTooShort {
            got: profile.len(),
            needed: 3,
        }));
    }
    let minima = find_local_minima(&profile, cfg.minima_window);
    let fit = fit_gradient(&minima.points).map_err(Error::in_stage("fit_gradient"))?;
    let rho_target = cfg.rho_target.resolve(&profile);
    let ld_km = compute_ld(&fit, rho_target).map_err(Error::in_stage("compute_ld"))?;
    let peaks = profile_peaks(&profile, cfg.prominence_factor);
    let (morphology, no_distinct_peak) = classify_morphology(peaks.len());
    let metrics = GradientMetrics {
        alpha: fit.alpha,
        beta: fit.beta,
        r_squared: fit.r_squared,
        ld_km,
        rho_target,
        peaks,
        morphology,
        minima_count: if minima.fallback { 0 } else { minima.indices.len() },
        minima_fallback: minima.fallback,
        no_distinct_peak,
        negative_ld: ld_km < 0.0,
    };
    Ok(GradientAnalysis {
        distance,
        profile,
        minima,
        fit,
        metrics,
    })
}
