//! Synthetic scenes with known ground truth.
//!
//! Density follows a negative exponential around each center,
//! `D(r) = D0 * exp(-decay * r_km)`, combined by taking the maximum over
//! centers. Noise comes from xoshiro256++ seeded through SplitMix64
//! (`seed_from_u64`); uniforms are `(next_u64 >> 11) * 2^-53` and normals
//! use the cosine branch of Box-Muller. Each output draws from its own
//! stream, obtained by successive `jump()` calls on the seeded generator.

use rand_core::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Grid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticCenter {
    pub x: f64,
    pub y: f64,
    pub d0: f64,
    /// Per km.
    pub decay: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub width: usize,
    pub height: usize,
    pub resolution_m: f64,
    pub centers: Vec<SyntheticCenter>,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("synthetic scene must be at least 1x1".into()));
        }
        if !(self.resolution_m > 0.0 && self.resolution_m.is_finite()) {
            return Err(Error::Config("resolution_m must be positive".into()));
        }
        if self.centers.is_empty() {
            return Err(Error::Config("at least one center required".into()));
        }
        for c in &self.centers {
            if !(c.d0 > 0.0 && c.decay > 0.0 && c.x.is_finite() && c.y.is_finite()) {
                return Err(Error::Config(format!("invalid center {c:?}")));
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config("noise_sigma must be non-negative".into()));
        }
        Ok(())
    }

    pub fn max_d0(&self) -> f64 {
        self.centers.iter().map(|c| c.d0).fold(0.0, f64::max)
    }

    /// Noise-free density at a pixel.
    pub fn clark_density(&self, x: f64, y: f64) -> f64 {
        let km = self.resolution_m / 1000.0;
        self.centers
            .iter()
            .map(|c| {
                let r_km = ((x - c.x).powi(2) + (y - c.y).powi(2)).sqrt() * km;
                c.d0 * (-c.decay * r_km).exp()
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

impl SyntheticSpec {
    /// One center in the middle of a 5.12 km square scene.
    pub fn monocentric(size: usize, seed: u64) -> Self {
        let res = 5120.0 / size as f64;
        let c = size as f64 / 2.0;
        SyntheticSpec {
            width: size,
            height: size,
            resolution_m: res,
            centers: vec![SyntheticCenter { x: c, y: c, d0: 2.0, decay: 0.8 }],
            noise_sigma: 0.05,
            seed,
        }
    }

    /// A dominant center and two subordinate ones. The subordinate peaks
    /// stay below the center threshold, so they show up as bumps in the
    /// distance profile instead of becoming centers themselves.
    pub fn polycentric(size: usize, seed: u64) -> Self {
        let res = 5120.0 / size as f64;
        let at = |f: f64| f * size as f64;
        SyntheticSpec {
            width: size,
            height: size,
            resolution_m: res,
            centers: vec![
                SyntheticCenter { x: at(0.29), y: at(0.29), d0: 2.0, decay: 0.8 },
                SyntheticCenter { x: at(0.74), y: at(0.33), d0: 1.2, decay: 0.8 },
                SyntheticCenter { x: at(0.49), y: at(0.76), d0: 1.2, decay: 0.8 },
            ],
            noise_sigma: 0.05,
            seed,
        }
    }
}

pub fn uniform01(rng: &mut Xoshiro256PlusPlus) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub fn standard_normal(rng: &mut Xoshiro256PlusPlus) -> f64 {
    let u1 = 1.0 - uniform01(rng);
    let u2 = uniform01(rng);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Independent streams for density, SAR and optical noise.
fn streams(seed: u64) -> [Xoshiro256PlusPlus; 3] {
    let mut base = Xoshiro256PlusPlus::seed_from_u64(seed);
    let a = base.clone();
    base.jump();
    let b = base.clone();
    base.jump();
    [a, b, base]
}

fn density_with(spec: &SyntheticSpec, rng: &mut Xoshiro256PlusPlus) -> Result<Grid> {
    let mut values = Vec::with_capacity(spec.width * spec.height);
    for y in 0..spec.height {
        for x in 0..spec.width {
            let v = spec.clark_density(x as f64, y as f64);
            let noise = if spec.noise_sigma > 0.0 {
                spec.noise_sigma * standard_normal(rng)
            } else {
                0.0
            };
            values.push((v + noise).max(0.0));
        }
    }
    Grid::new(spec.width, spec.height, spec.resolution_m, values)
}

pub fn generate_density(spec: &SyntheticSpec) -> Result<Grid> {
    spec.validate()?;
    let [mut rng, _, _] = streams(spec.seed);
    density_with(spec, &mut rng)
}

#[derive(Debug, Clone)]
pub struct ScenePair {
    pub density: Grid,
    pub optical: Grid,
    pub sar: Grid,
}

/// Lot pitch and building footprint of the optical texture, in pixels.
pub const LOT_PX: usize = 6;
pub const BUILDING_PX: usize = 4;
const GROUND: f64 = 0.2;
const ROOF: f64 = 0.8;

const BAYER4: [[u8; 4]; 4] = [[0, 8, 2, 10], [12, 4, 14, 6], [3, 11, 1, 9], [15, 7, 13, 5]];

/// Density grid plus a pseudo SAR and optical pair derived from it.
///
/// SAR is the density scaled by the largest `D0` with multiplicative
/// speckle, clipped to [0, 1]. The optical image is a lattice of lots; a lot
/// holds a bright square building when its normalized noise-free density
/// exceeds a 4x4 ordered-dither threshold, so the share of built lots (and
/// with it the Sobel edge density) tracks density.
pub fn generate_scene_pair(spec: &SyntheticSpec) -> Result<ScenePair> {
    spec.validate()?;
    let [mut r_density, mut r_sar, mut r_opt] = streams(spec.seed);
    let density = density_with(spec, &mut r_density)?;
    let scale = spec.max_d0();
    let sigma = spec.noise_sigma;

    let sar_values = density
        .values()
        .iter()
        .map(|&d| {
            let speckle = if sigma > 0.0 { 1.0 + sigma * standard_normal(&mut r_sar) } else { 1.0 };
            (d / scale * speckle).clamp(0.0, 1.0)
        })
        .collect();
    let sar = Grid::new(spec.width, spec.height, spec.resolution_m, sar_values)?;

    let margin = (LOT_PX - BUILDING_PX) / 2;
    let mut opt_values = Vec::with_capacity(spec.width * spec.height);
    for y in 0..spec.height {
        for x in 0..spec.width {
            let (lx, ly) = (x / LOT_PX, y / LOT_PX);
            let (ox, oy) = (x % LOT_PX, y % LOT_PX);
            let inside = (margin..margin + BUILDING_PX).contains(&ox) && (margin..margin + BUILDING_PX).contains(&oy);
            let centre = (LOT_PX / 2) as f64;
            let lot_density = spec.clark_density(
                (lx * LOT_PX) as f64 + centre,
                (ly * LOT_PX) as f64 + centre,
            ) / scale;
            let threshold = (BAYER4[ly % 4][lx % 4] as f64 + 0.5) / 16.0;
            let mut v = if inside && lot_density > threshold { ROOF } else { GROUND };
            if sigma > 0.0 {
                v += 0.5 * sigma * standard_normal(&mut r_opt);
            }
            opt_values.push(v.clamp(0.0, 1.0));
        }
    }
    let optical = Grid::new(spec.width, spec.height, spec.resolution_m, opt_values)?;
    Ok(ScenePair {
        density,
        optical,
        sar,
    })
}

/// Ground-truth record written next to a generated scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub spec: SyntheticSpec,
    pub max_density: f64,
    pub prng: String,
}

impl GroundTruth {
    pub fn new(spec: &SyntheticSpec) -> Self {
        Self {
            spec: spec.clone(),
            max_density: spec.max_d0(),
            prng: "xoshiro256++ (splitmix64 seeding), box-muller cosine branch".into(),
        }
    }
}
