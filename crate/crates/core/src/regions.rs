//! Splits the residual series (observed minus fitted density) into up to
//! three contiguous distance regions and labels each one uniform or variable.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradient::{DensityProfile, GradientFit};

pub const MIN_REGION_FRACTION: f64 = 0.05;
pub const UNIFORM_STD_RATIO: f64 = 0.7;
pub const MAX_REGIONS: usize = 3;
pub const MAX_KMEANS_ITERATIONS: usize = 100;

const STD_EPS: f64 = 1e-12;
const VAR_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualSeries {
    pub distance_km: Vec<f64>,
    pub residual: Vec<f64>,
}

impl ResidualSeries {
    pub fn len(&self) -> usize {
        self.residual.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residual.is_empty()
    }
}

pub fn compute_residuals(p: &DensityProfile, fit: &GradientFit) -> ResidualSeries {
    let residual = p
        .bin_distance_km
        .iter()
        .zip(&p.mean_density)
        .map(|(&d, &m)| m - fit.predict(d))
        .collect();
    ResidualSeries {
        distance_km: p.bin_distance_km.clone(),
        residual,
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Forward differences, closed with a reflected sample so the last gradient
/// is the negated second-to-last one.
pub fn forward_gradient(r: &[f64]) -> Vec<f64> {
    let n = r.len();
    let mut g: Vec<f64> = r.windows(2).map(|w| w[1] - w[0]).collect();
    if n >= 2 {
        g.push(r[n - 2] - r[n - 1]);
    } else if n == 1 {
        g.push(0.0);
    }
    g
}

/// `x'[i] = x[i + 1]`, last sample repeated.
fn lead(x: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = x.iter().skip(1).copied().collect();
    if let Some(&last) = x.last() {
        out.push(last);
    }
    out
}

fn standardize(col: &mut [f64]) {
    let (mean, std) = mean_std(col);
    if std < STD_EPS {
        col.iter_mut().for_each(|v| *v = 0.0);
    } else {
        col.iter_mut().for_each(|v| *v = (*v - mean) / std);
    }
}

/// Raw (unstandardized) feature columns: residual, gradient and both led by
/// one bin.
pub fn raw_feature_columns(r: &ResidualSeries) -> [Vec<f64>; 4] {
    let g = forward_gradient(&r.residual);
    [r.residual.clone(), g.clone(), lead(&r.residual), lead(&g)]
}

/// Per-bin feature vectors with every column standardized.
pub fn build_features(r: &ResidualSeries) -> Result<Vec<[f64; 4]>> {
    if r.len() < 4 {
        return Err(Error::SeriesTooShort(r.len()));
    }
    let mut cols = raw_feature_columns(r);
    cols.iter_mut().for_each(|c| standardize(c));
    Ok((0..r.len())
        .map(|i| [cols[0][i], cols[1][i], cols[2][i], cols[3][i]])
        .collect())
}

fn sq_dist(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    pub centroids: Vec<[f64; 4]>,
    pub iterations: usize,
    /// Within-cluster sum of squares after each iteration.
    pub wcss_trace: Vec<f64>,
}

/// Lloyd's algorithm with farthest-point seeding from the first row.
pub fn kmeans(x: &[[f64; 4]], k: usize) -> KMeansResult {
    assert!(k >= 1 && !x.is_empty());
    let mut centroids = vec![x[0]];
    while centroids.len() < k {
        let mut best = (0usize, -1.0f64);
        for (i, p) in x.iter().enumerate() {
            let d = centroids
                .iter()
                .map(|c| sq_dist(p, c))
                .fold(f64::INFINITY, f64::min);
            if d > best.1 {
                best = (i, d);
            }
        }
        centroids.push(x[best.0]);
    }

    let nearest = |p: &[f64; 4], cs: &[[f64; 4]]| {
        let mut best = (0usize, f64::INFINITY);
        for (j, c) in cs.iter().enumerate() {
            let d = sq_dist(p, c);
            if d < best.1 {
                best = (j, d);
            }
        }
        best.0
    };

    let mut labels: Vec<usize> = x.iter().map(|p| nearest(p, &centroids)).collect();
    let mut wcss_trace = Vec::new();
    let mut iterations = 0;
    while iterations < MAX_KMEANS_ITERATIONS {
        iterations += 1;
        for (j, c) in centroids.iter_mut().enumerate() {
            let members: Vec<&[f64; 4]> = x.iter().zip(&labels).filter(|(_, &l)| l == j).map(|(p, _)| p).collect();
            if members.is_empty() {
                continue;
            }
            let mut m = [0.0; 4];
            for p in &members {
                for (a, b) in m.iter_mut().zip(p.iter()) {
                    *a += b;
                }
            }
            m.iter_mut().for_each(|a| *a /= members.len() as f64);
            *c = m;
        }
        let wcss: f64 = x.iter().zip(&labels).map(|(p, &l)| sq_dist(p, &centroids[l])).sum();
        if let Some(&prev) = wcss_trace.last() {
            debug_assert!(wcss <= prev + 1e-9 * (1.0 + prev), "k-means objective increased");
        }
        wcss_trace.push(wcss);
        let next: Vec<usize> = x.iter().map(|p| nearest(p, &centroids)).collect();
        if next == labels {
            break;
        }
        labels = next;
    }
    KMeansResult {
        labels,
        centroids,
        iterations,
        wcss_trace,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegionLabel {
    Uniform,
    Variation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub start_km: f64,
    pub end_km: f64,
    /// Inclusive range of residual-series indices.
    pub start_bin: usize,
    pub end_bin: usize,
    pub label: RegionLabel,
    pub std: f64,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KCandidate {
    pub k: usize,
    pub region_count: usize,
    pub pooled_variance: f64,
    pub wcss_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSet {
    pub regions: Vec<Region>,
    pub overall_std: f64,
    pub k_selected: usize,
    pub candidates: Vec<KCandidate>,
}

/// Half-open index ranges of equal consecutive labels.
pub fn label_runs(labels: &[usize]) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut start = 0;
    for i in 1..=labels.len() {
        if i == labels.len() || labels[i] != labels[start] {
            runs.push((start, i));
            start = i;
        }
    }
    runs
}

fn segment_var(r: &[f64], (a, b): (usize, usize)) -> f64 {
    let s = mean_std(&r[a..b]).1;
    s * s
}

/// Variance floor for the segment cost, relative to the series spread so
/// the cost differences do not depend on the residual units.
fn variance_floor(r: &[f64]) -> f64 {
    let s = mean_std(r).1;
    VAR_EPS * s * s + f64::MIN_POSITIVE
}

/// Gaussian log-likelihood cost of a segment, `n * ln(var)`.
fn segment_cost(r: &[f64], seg: (usize, usize), floor: f64) -> f64 {
    (seg.1 - seg.0) as f64 * (segment_var(r, seg) + floor).ln()
}

fn merge_increase(r: &[f64], a: (usize, usize), b: (usize, usize), floor: f64) -> f64 {
    let merged = (a.0.min(b.0), a.1.max(b.1));
    segment_cost(r, merged, floor) - segment_cost(r, a, floor) - segment_cost(r, b, floor)
}

/// Repeatedly folds the smallest run below `MIN_REGION_FRACTION` into the
/// neighbour it fits best, i.e. the one whose union raises the segment cost
/// least. Ties go to the smaller neighbour, then the left one.
pub fn merge_small(r: &[f64], mut segs: Vec<(usize, usize)>) -> Vec<(usize, usize)> {
    let n = r.len() as f64;
    let floor = variance_floor(r);
    loop {
        if segs.len() <= 1 {
            return segs;
        }
        let Some(i) = segs
            .iter()
            .enumerate()
            .filter(|(_, s)| ((s.1 - s.0) as f64) / n < MIN_REGION_FRACTION)
            .min_by_key(|(_, s)| s.1 - s.0)
            .map(|(i, _)| i)
        else {
            return segs;
        };
        let cost = |j: usize| merge_increase(r, segs[i], segs[j], floor);
        let size = |j: usize| segs[j].1 - segs[j].0;
        let target = match (i.checked_sub(1), (i + 1 < segs.len()).then_some(i + 1)) {
            (Some(l), Some(rt)) => {
                let (cl, cr) = (cost(l), cost(rt));
                if cl < cr || (cl == cr && size(l) <= size(rt)) {
                    l
                } else {
                    rt
                }
            }
            (Some(l), None) => l,
            (None, Some(rt)) => rt,
            (None, None) => unreachable!(),
        };
        let (a, b) = (i.min(target), i.max(target));
        segs[a] = (segs[a].0, segs[b].1);
        segs.remove(b);
    }
}

/// Merges adjacent segments until at most `MAX_REGIONS` remain, each time
/// picking the pair whose union raises the segment cost least.
pub fn cap_regions(r: &[f64], mut segs: Vec<(usize, usize)>) -> Vec<(usize, usize)> {
    let floor = variance_floor(r);
    while segs.len() > MAX_REGIONS {
        let mut best = (0usize, f64::INFINITY);
        for i in 0..segs.len() - 1 {
            let delta = merge_increase(r, segs[i], segs[i + 1], floor);
            if delta < best.1 {
                best = (i, delta);
            }
        }
        let i = best.0;
        segs[i] = (segs[i].0, segs[i + 1].1);
        segs.remove(i + 1);
    }
    segs
}

fn pooled_variance(r: &[f64], segs: &[(usize, usize)]) -> f64 {
    segs.iter()
        .map(|&s| (s.1 - s.0) as f64 * segment_var(r, s))
        .sum::<f64>()
        / r.len() as f64
}

/// Runs k-means for k = 1..=3 and keeps the segmentation with the most
/// regions, breaking ties by the lower pooled within-region variance.
pub fn segment_regions(features: &[[f64; 4]], r: &ResidualSeries) -> RegionSet {
    let res = &r.residual;
    let mut best: Option<(usize, Vec<(usize, usize)>, f64)> = None;
    let mut candidates = Vec::new();
    for k in 1..=MAX_REGIONS.min(features.len()) {
        let km = kmeans(features, k);
        let segs = cap_regions(res, merge_small(res, label_runs(&km.labels)));
        let pv = pooled_variance(res, &segs);
        candidates.push(KCandidate {
            k,
            region_count: segs.len(),
            pooled_variance: pv,
            wcss_trace: km.wcss_trace,
        });
        let better = match &best {
            None => true,
            Some((_, bs, bpv)) => segs.len() > bs.len() || (segs.len() == bs.len() && pv < *bpv),
        };
        if better {
            best = Some((k, segs, pv));
        }
    }
    let (k_selected, segs, _) = best.expect("at least one k candidate");
    let n = res.len();
    let d_max = *r.distance_km.last().unwrap();
    let regions = segs
        .iter()
        .enumerate()
        .map(|(i, &(a, b))| Region {
            start_km: r.distance_km[a],
            end_km: segs.get(i + 1).map_or(d_max, |next| r.distance_km[next.0]),
            start_bin: a,
            end_bin: b - 1,
            label: RegionLabel::Variation,
            std: 0.0,
            fraction: (b - a) as f64 / n as f64,
        })
        .collect();
    let set = RegionSet {
        regions,
        overall_std: 0.0,
        k_selected,
        candidates,
    };
    label_regions(set, r)
}

/// Uniform iff the region's residual std is below 0.7 of the series std.
/// A series with zero spread is uniform everywhere.
pub fn label_regions(mut rs: RegionSet, r: &ResidualSeries) -> RegionSet {
    let overall = mean_std(&r.residual).1;
    rs.overall_std = overall;
    for reg in &mut rs.regions {
        reg.std = mean_std(&r.residual[reg.start_bin..=reg.end_bin]).1;
        reg.label = if overall == 0.0 || reg.std < UNIFORM_STD_RATIO * overall {
            RegionLabel::Uniform
        } else {
            RegionLabel::Variation
        };
    }
    rs
}

/// Residuals, features, segmentation and labels in one call.
pub fn analyze_regions(p: &DensityProfile, fit: &GradientFit) -> Result<(ResidualSeries, RegionSet)> {
    let r = compute_residuals(p, fit);
    let x = build_features(&r)?;
    let rs = segment_regions(&x, &r);
    Ok((r, rs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand_core::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn series(res: Vec<f64>, step_km: f64) -> ResidualSeries {
        ResidualSeries {
            distance_km: (0..res.len()).map(|i| i as f64 * step_km).collect(),
            residual: res,
        }
    }

    fn profile(means: Vec<f64>, step_km: f64) -> DensityProfile {
        let n = means.len();
        DensityProfile {
            bin_index: (0..n).collect(),
            bin_distance_km: (0..n).map(|i| i as f64 * step_km).collect(),
            pixel_count: vec![1; n],
            q25: means.clone(),
            q75: means.clone(),
            mean_density: means,
        }
    }

    fn uniform(rng: &mut Xoshiro256PlusPlus) -> f64 {
        (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// 0 +/- 0.01 below 2 km, +/-0.5 alternating from 2 km on.
    pub(crate) fn two_phase(seed: u64) -> ResidualSeries {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let res = (0..100)
            .map(|i| {
                let d = i as f64 * 0.05;
                if d < 2.0 {
                    (uniform(&mut rng) - 0.5) * 0.02
                } else if i % 2 == 0 {
                    0.5
                } else {
                    -0.5
                }
            })
            .collect();
        series(res, 0.05)
    }

    #[test]
    fn residuals_on_line_are_zero() {
        let fit = GradientFit { alpha: -0.05, beta: 2.0, r_squared: 1.0, minima_points: vec![] };
        let p = profile((0..10).map(|i| 2.0 - 0.05 * i as f64).collect(), 1.0);
        assert!(compute_residuals(&p, &fit).residual.iter().all(|&r| r.abs() < 1e-15));
    }

    #[test]
    fn residuals_recover_sine() {
        let fit = GradientFit { alpha: -0.05, beta: 2.0, r_squared: 1.0, minima_points: vec![] };
        let p = profile((0..40).map(|i| 2.0 - 0.05 * i as f64 * 0.3 + (i as f64 * 0.3).sin()).collect(), 0.3);
        let r = compute_residuals(&p, &fit);
        for (i, v) in r.residual.iter().enumerate() {
            assert!((v - (i as f64 * 0.3).sin()).abs() < 1e-9);
        }
    }

    #[test]
    fn residual_mean_vanishes_for_full_fit() {
        let means: Vec<f64> = (0..25).map(|i| 1.5 - 0.02 * i as f64 + 0.1 * ((i * 7 % 5) as f64)).collect();
        let p = profile(means, 0.1);
        let fit = crate::gradient::fit_gradient(&p.points()).unwrap();
        let r = compute_residuals(&p, &fit);
        assert!(r.residual.iter().sum::<f64>().abs() / 25.0 < 1e-12);
    }

    #[test]
    fn gradient_column_example() {
        let r = series(vec![0.0, 1.0, 0.0, 1.0], 1.0);
        assert_eq!(raw_feature_columns(&r)[1], vec![1.0, -1.0, 1.0, -1.0]);
        assert_eq!(raw_feature_columns(&r)[2], vec![1.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn zero_residuals_give_zero_features_and_one_uniform_region() {
        let r = series(vec![0.0; 30], 0.1);
        let x = build_features(&r).unwrap();
        assert!(x.iter().all(|row| row.iter().all(|&v| v == 0.0)));
        let rs = segment_regions(&x, &r);
        assert_eq!(rs.regions.len(), 1);
        assert_eq!(rs.regions[0].label, RegionLabel::Uniform);
        assert_eq!(rs.regions[0].start_km, 0.0);
        assert!((rs.regions[0].end_km - 2.9).abs() < 1e-12);
    }

    #[test]
    fn short_series_rejected() {
        assert!(matches!(build_features(&series(vec![0.0; 3], 1.0)), Err(Error::SeriesTooShort(3))));
    }

    #[test]
    fn features_are_standardized() {
        let r = series((0..50).map(|i| ((i * i) % 7) as f64 * 0.1).collect(), 0.1);
        let x = build_features(&r).unwrap();
        for c in 0..4 {
            let col: Vec<f64> = x.iter().map(|row| row[c]).collect();
            let (m, s) = mean_std(&col);
            assert!(m.abs() < 1e-9);
            assert!((s * s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn two_phase_boundary_found() {
        let r = two_phase(11);
        let rs = segment_regions(&build_features(&r).unwrap(), &r);
        let first = &rs.regions[0];
        assert_eq!(first.label, RegionLabel::Uniform);
        let changepoint = 40usize;
        assert!((first.end_bin as isize + 1 - changepoint as isize).abs() <= 2, "{rs:?}");
        assert!(rs.regions[1..].iter().all(|r| r.label == RegionLabel::Variation));
    }

    #[test]
    fn small_run_merges_into_closer_neighbour() {
        // quiet left side, oscillating right side; the stray bin belongs
        // to the oscillation even though its value is close to zero
        let mut r: Vec<f64> = (0..40).map(|i| 0.01 * (i % 2) as f64).collect();
        r.push(0.1);
        r.extend((0..39).map(|i| if i % 2 == 0 { 0.5 } else { -0.5 }));
        let segs = merge_small(&r, vec![(0, 40), (40, 41), (41, 80)]);
        assert_eq!(segs, vec![(0, 40), (40, 80)]);
    }

    #[test]
    fn cap_keeps_the_variance_break() {
        let r: Vec<f64> = (0..60)
            .map(|i| if i < 20 { 0.001 * (i % 2) as f64 } else if i % 2 == 0 { 0.5 } else { -0.5 })
            .collect();
        let segs = cap_regions(&r, vec![(0, 10), (10, 20), (20, 30), (30, 45), (45, 60)]);
        assert_eq!(segs.len(), 3);
        assert!(segs.iter().any(|s| s.1 == 20));
    }

    #[test]
    fn label_boundary_is_strict() {
        let r = series(vec![1.0, -1.0, 1.0, -1.0, 1.0, -1.0], 1.0);
        let rs = RegionSet {
            regions: vec![Region {
                start_km: 0.0,
                end_km: 5.0,
                start_bin: 0,
                end_bin: 5,
                label: RegionLabel::Uniform,
                std: 0.0,
                fraction: 1.0,
            }],
            overall_std: 0.0,
            k_selected: 1,
            candidates: vec![],
        };
        let rs = label_regions(rs, &r);
        assert_eq!(rs.regions[0].label, RegionLabel::Variation);
        assert_eq!(rs.overall_std, 1.0);
    }

    #[test]
    fn kmeans_separates_two_blobs() {
        let mut x = vec![[0.0, 0.0, 0.0, 0.0]; 5];
        x.extend(vec![[5.0, 5.0, 0.0, 0.0]; 5]);
        let km = kmeans(&x, 2);
        assert_eq!(km.labels, vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1]);
        assert_eq!(*km.wcss_trace.last().unwrap(), 0.0);
    }

    fn check_regions(r: &ResidualSeries, rs: &RegionSet) -> std::result::Result<(), TestCaseError> {
        prop_assert!(!rs.regions.is_empty() && rs.regions.len() <= MAX_REGIONS);
        prop_assert_eq!(rs.regions[0].start_bin, 0);
        prop_assert_eq!(rs.regions.last().unwrap().end_bin, r.len() - 1);
        prop_assert_eq!(rs.regions[0].start_km, r.distance_km[0]);
        prop_assert_eq!(rs.regions.last().unwrap().end_km, *r.distance_km.last().unwrap());
        for w in rs.regions.windows(2) {
            prop_assert_eq!(w[0].end_bin + 1, w[1].start_bin);
            prop_assert_eq!(w[0].end_km, w[1].start_km);
        }
        for reg in &rs.regions {
            if rs.regions.len() > 1 {
                prop_assert!(reg.fraction >= MIN_REGION_FRACTION);
            }
            let uniform = rs.overall_std == 0.0 || reg.std < UNIFORM_STD_RATIO * rs.overall_std;
            prop_assert_eq!(reg.label == RegionLabel::Uniform, uniform);
        }
        Ok(())
    }

    proptest! {
        #[test]
        fn region_invariants(res in proptest::collection::vec(-1.0f64..1.0, 4..120)) {
            let r = series(res, 0.07);
            let x = build_features(&r).unwrap();
            let rs = segment_regions(&x, &r);
            check_regions(&r, &rs)?;
            prop_assert_eq!(&segment_regions(&x, &r), &rs);
            for c in &rs.candidates {
                for w in c.wcss_trace.windows(2) {
                    prop_assert!(w[1] <= w[0] + 1e-9 * (1.0 + w[0]));
                }
            }
        }

        #[test]
        fn white_noise_labels_follow_std_ratio(seed in 0u64..1000, scale in 0.01f64..10.0) {
            let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
            let base: Vec<f64> = (0..80).map(|_| uniform(&mut rng) - 0.5).collect();
            let unit = series(base.clone(), 0.1);
            let scaled = series(base.iter().map(|v| v * scale).collect(), 0.1);
            let a = segment_regions(&build_features(&unit).unwrap(), &unit);
            let b = segment_regions(&build_features(&scaled).unwrap(), &scaled);
            check_regions(&scaled, &b)?;
            // labels depend on the std ratio only, not on the units
            let bounds = |rs: &RegionSet| rs.regions.iter().map(|r| (r.start_bin, r.end_bin, r.label)).collect::<Vec<_>>();
            prop_assert_eq!(bounds(&a), bounds(&b));
        }
    }
}
