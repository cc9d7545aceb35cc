//! Water / terrain / urban classification, urban mask refinement and
//! urban-center extraction.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::Thresholds;
use crate::raster::{Grid, Mask};

pub const DEFAULT_MIN_COMPONENT_PX: usize = 100;
pub const STRUCTURING_ELEMENT: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
#[repr(u8)]
pub enum LandClass {
    Water = 1,
    Terrain = 2,
    Urban = 3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationMap {
    pub width: usize,
    pub height: usize,
    pub classes: Vec<LandClass>,
    pub urban_final: Mask,
    pub centers: Mask,
    pub thresholds: Thresholds,
}

impl SegmentationMap {
    /// Per-pixel class counts `(water, terrain, urban)`.
    pub fn class_counts(&self) -> (usize, usize, usize) {
        class_counts(&self.classes)
    }

    /// Display labels: 0 discarded urban, 1 water, 2 terrain, 3 urban,
    /// 4 center.
    pub fn display_labels(&self) -> Vec<u8> {
        self.classes
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                if self.centers.bits()[i] {
                    4
                } else if self.urban_final.bits()[i] {
                    3
                } else if c == LandClass::Urban {
                    0
                } else {
                    c as u8
                }
            })
            .collect()
    }
}

pub fn class_counts(classes: &[LandClass]) -> (usize, usize, usize) {
    classes.iter().fold((0, 0, 0), |(w, t, u), c| match c {
        LandClass::Water => (w + 1, t, u),
        LandClass::Terrain => (w, t + 1, u),
        LandClass::Urban => (w, t, u + 1),
    })
}

pub fn classify_value(rho: f64, t: &Thresholds) -> LandClass {
    if rho < t.tau_water {
        LandClass::Water
    } else if rho < t.tau_urban {
        LandClass::Terrain
    } else {
        LandClass::Urban
    }
}

pub fn classify(rho: &Grid, t: &Thresholds) -> Vec<LandClass> {
    rho.values().iter().map(|&v| classify_value(v, t)).collect()
}

pub fn urban_mask(rho: &Grid, classes: &[LandClass]) -> Mask {
    Mask::from_fn(rho.width(), rho.height(), |x, y| {
        classes[y * rho.width() + x] == LandClass::Urban
    })
}

/// Square-window max (`dilate = true`) or min filter. Pixels outside the
/// grid count as background, so erosion clears everything within `size / 2`
/// of the border.
fn square_filter(m: &Mask, size: usize, dilate: bool) -> Mask {
    let r = (size / 2) as isize;
    let (w, h) = (m.width() as isize, m.height() as isize);
    let window = |c: isize, n: isize| {
        if !dilate && (c - r < 0 || c + r > n - 1) {
            None
        } else {
            Some(((c - r).max(0), (c + r).min(n - 1)))
        }
    };
    // separable: rows first, then columns
    let mut rows = vec![false; m.bits().len()];
    for y in 0..h {
        for x in 0..w {
            rows[(y * w + x) as usize] = match window(x, w) {
                None => false,
                Some((lo, hi)) if dilate => (lo..=hi).any(|xx| m.get(xx as usize, y as usize)),
                Some((lo, hi)) => (lo..=hi).all(|xx| m.get(xx as usize, y as usize)),
            };
        }
    }
    Mask::from_fn(m.width(), m.height(), |x, y| {
        let (x, y) = (x as isize, y as isize);
        match window(y, h) {
            None => false,
            Some((lo, hi)) if dilate => (lo..=hi).any(|yy| rows[(yy * w + x) as usize]),
            Some((lo, hi)) => (lo..=hi).all(|yy| rows[(yy * w + x) as usize]),
        }
    })
}

pub fn dilate(m: &Mask, size: usize) -> Mask {
    square_filter(m, size, true)
}

pub fn erode(m: &Mask, size: usize) -> Mask {
    square_filter(m, size, false)
}

/// Closing of the mask as a subset of the unbounded plane, cropped back to
/// the grid. The mask is padded before dilating so set pixels near the
/// border are not lost to the background frame.
pub fn close(m: &Mask, size: usize) -> Mask {
    let r = size / 2;
    let (w, h) = (m.width(), m.height());
    let padded = Mask::from_fn(w + 2 * r, h + 2 * r, |x, y| {
        x >= r && y >= r && x - r < w && y - r < h && m.get(x - r, y - r)
    });
    // erosion windows of interior pixels stay inside the padded frame
    let closed = erode(&dilate(&padded, size), size);
    Mask::from_fn(w, h, |x, y| closed.get(x + r, y + r))
}

/// `Close(Dilate(u, k), k)` with a 5x5 square `k`.
pub fn refine_urban_mask(u: &Mask) -> Mask {
    close(&dilate(u, STRUCTURING_ELEMENT), STRUCTURING_ELEMENT)
}

/// 8-connected component labels (`0` = background, components from `1`) and
/// the pixel count of each component, indexed by `label - 1`.
pub fn label_components(m: &Mask) -> (Vec<u32>, Vec<usize>) {
    let (w, h) = (m.width(), m.height());
    let mut labels = vec![0u32; w * h];
    let mut areas = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !m.bits()[start] || labels[start] != 0 {
            continue;
        }
        let label = areas.len() as u32 + 1;
        let mut area = 0;
        labels[start] = label;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            area += 1;
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if m.bits()[j] && labels[j] == 0 {
                        labels[j] = label;
                        queue.push_back(j);
                    }
                }
            }
        }
        areas.push(area);
    }
    (labels, areas)
}

/// Keeps the 8-connected components with at least `min_component_px`
/// pixels. Returns the filtered mask and the number of kept components.
pub fn filter_components(u: &Mask, min_component_px: usize) -> (Mask, usize) {
    let (labels, areas) = label_components(u);
    let kept = areas.iter().filter(|&&a| a >= min_component_px).count();
    let bits = labels
        .iter()
        .map(|&l| l != 0 && areas[l as usize - 1] >= min_component_px)
        .collect();
    (Mask::new(u.width(), u.height(), bits).expect("same shape"), kept)
}

/// Pixels with `rho > tau_center` inside the final urban mask.
pub fn identify_centers(rho: &Grid, u_final: &Mask, t: &Thresholds) -> Result<Mask> {
    if !u_final.matches(rho) {
        return Err(Error::DimensionMismatch {
            a_width: rho.width(),
            a_height: rho.height(),
            b_width: u_final.width(),
            b_height: u_final.height(),
        });
    }
    let bits: Vec<bool> = rho
        .values()
        .iter()
        .zip(u_final.bits())
        .map(|(&v, &u)| u && v > t.tau_center)
        .collect();
    if !bits.iter().any(|&b| b) {
        return Err(Error::NoUrbanCenters);
    }
    Mask::new(rho.width(), rho.height(), bits)
}

/// Runs classification, refinement, filtering and center extraction.
pub fn segment(rho: &Grid, t: &Thresholds, min_component_px: usize) -> Result<(SegmentationMap, Mask, usize)> {
    let classes = classify(rho, t);
    let initial = urban_mask(rho, &classes);
    let refined = refine_urban_mask(&initial);
    let (urban_final, components) = filter_components(&refined, min_component_px);
    if urban_final.is_empty() {
        return Err(Error::NoUrbanArea);
    }
    let centers = identify_centers(rho, &urban_final, t)?;
    Ok((
        SegmentationMap {
            width: rho.width(),
            height: rho.height(),
            classes,
            urban_final,
            centers,
            thresholds: t.clone(),
        },
        initial,
        components,
    ))
}
