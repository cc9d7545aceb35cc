//! Raster data model shared by every stage: scalar [`Grid`]s, boolean
//! [`Mask`]s, file I/O and the two preprocessing checks (min-max
//! normalization and alignment validation).
//!
//! Two on-disk formats are understood:
//!
//! * 8/16-bit PNG (grayscale; RGB is reduced to luminance). Samples are
//!   scaled to `[0, 1]`.
//! * `.f32`: little-endian `f32` samples in row-major order, with a JSON
//!   sidecar next to it (`scene.f32` + `scene.json`) holding
//!   `{"width": .., "height": .., "resolution_m": ..}`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance used when comparing resolutions of two grids.
pub const RESOLUTION_RTOL: f64 = 1e-6;

/// A 2-D scalar raster with its ground sampling distance.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    width: usize,
    height: usize,
    resolution_m: f64,
    values: Vec<f64>,
}

impl Grid {
    pub fn new(width: usize, height: usize, resolution_m: f64, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidGrid(format!("empty grid {width}x{height}")));
        }
        if values.len() != width * height {
            return Err(Error::InvalidGrid(format!(
                "{} values for a {width}x{height} grid",
                values.len()
            )));
        }
        if !(resolution_m.is_finite() && resolution_m > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "resolution must be positive, got {resolution_m}"
            )));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            width,
            height,
            resolution_m,
            values,
        })
    }

    /// Builds a grid by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(
        width: usize,
        height: usize,
        resolution_m: f64,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y));
            }
        }
        Self::new(width, height, resolution_m, values)
    }

    /// New grid with the same shape and resolution but different samples.
    ///
    /// Panics if `values` has the wrong length; callers inside the crate
    /// always produce per-pixel outputs.
    pub(crate) fn with_values(&self, values: Vec<f64>) -> Grid {
        assert_eq!(values.len(), self.values.len());
        Grid {
            width: self.width,
            height: self.height,
            resolution_m: self.resolution_m,
            values,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn resolution_m(&self) -> f64 {
        self.resolution_m
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// Sample with edge replication for out-of-range coordinates.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.values[y * self.width + x]
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn transpose(&self) -> Grid {
        let mut values = Vec::with_capacity(self.values.len());
        for x in 0..self.width {
            for y in 0..self.height {
                values.push(self.get(x, y));
            }
        }
        Grid {
            width: self.height,
            height: self.width,
            resolution_m: self.resolution_m,
            values,
        }
    }
}

/// A boolean raster aligned with a [`Grid`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::InvalidGrid(format!(
                "{} mask bits for a {width}x{height} grid",
                bits.len()
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            bits,
        }
    }

    /// Mask of the grid pixels for which `pred` holds.
    pub fn from_grid(grid: &Grid, pred: impl Fn(f64) -> bool) -> Self {
        Self {
            width: grid.width(),
            height: grid.height(),
            bits: grid.values().iter().map(|&v| pred(v)).collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        self.bits[y * self.width + x] = on;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// True when every set pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    pub fn matches(&self, grid: &Grid) -> bool {
        self.width == grid.width() && self.height == grid.height()
    }
}

/// How to interpret an input raster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridKind {
    /// Optical image; color inputs are reduced to luminance.
    OpticalGray,
    /// SAR backscatter intensity image.
    Sar,
    /// `.f32` raw samples with JSON sidecar.
    RawFloat,
}

impl GridKind {
    /// Raw-float for `.f32` paths, otherwise `image_kind`.
    pub fn infer(path: &Path, image_kind: GridKind) -> GridKind {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("f32") => GridKind::RawFloat,
            _ => image_kind,
        }
    }
}

/// Contents of the `.json` sidecar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub width: usize,
    pub height: usize,
    pub resolution_m: f64,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn read_sidecar(path: &Path) -> Result<Sidecar> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Sidecar {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Loads a raster. `resolution_override` takes precedence over any sidecar.
pub fn load_grid(path: &Path, kind: GridKind, resolution_override: Option<f64>) -> Result<Grid> {
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
        ));
    }
    match kind {
        GridKind::RawFloat => load_raw(path, resolution_override),
        GridKind::OpticalGray | GridKind::Sar => load_png(path, resolution_override),
    }
}

fn load_raw(path: &Path, resolution_override: Option<f64>) -> Result<Grid> {
    let side_path = sidecar_path(path);
    let side = read_sidecar(&side_path)?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = side.width * side.height * 4;
    if bytes.len() != expected {
        return Err(Error::Sidecar {
            path: side_path,
            message: format!(
                "dimension mismatch: {}x{} needs {expected} bytes, file has {}",
                side.width,
                side.height,
                bytes.len()
            ),
        });
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Grid::new(
        side.width,
        side.height,
        resolution_override.unwrap_or(side.resolution_m),
        values,
    )
}

fn load_png(path: &Path, resolution_override: Option<f64>) -> Result<Grid> {
    use image::DynamicImage;

    let decode_err = |message: String| Error::Decode {
        path: path.to_path_buf(),
        message,
    };
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| decode_err(e.to_string()))?;

    let (width, height) = (img.width() as usize, img.height() as usize);
    let luma = |r: f64, g: f64, b: f64| 0.299 * r + 0.587 * g + 0.114 * b;
    let values: Vec<f64> = match &img {
        DynamicImage::ImageLuma8(buf) => buf.pixels().map(|p| p.0[0] as f64 / 255.0).collect(),
        DynamicImage::ImageLumaA8(buf) => buf.pixels().map(|p| p.0[0] as f64 / 255.0).collect(),
        DynamicImage::ImageLuma16(buf) => buf.pixels().map(|p| p.0[0] as f64 / 65535.0).collect(),
        DynamicImage::ImageLumaA16(buf) => {
            buf.pixels().map(|p| p.0[0] as f64 / 65535.0).collect()
        }
        DynamicImage::ImageRgb8(buf) => buf
            .pixels()
            .map(|p| luma(p.0[0] as f64, p.0[1] as f64, p.0[2] as f64) / 255.0)
            .collect(),
        DynamicImage::ImageRgba8(buf) => buf
            .pixels()
            .map(|p| luma(p.0[0] as f64, p.0[1] as f64, p.0[2] as f64) / 255.0)
            .collect(),
        DynamicImage::ImageRgb16(buf) => buf
            .pixels()
            .map(|p| luma(p.0[0] as f64, p.0[1] as f64, p.0[2] as f64) / 65535.0)
            .collect(),
        DynamicImage::ImageRgba16(buf) => buf
            .pixels()
            .map(|p| luma(p.0[0] as f64, p.0[1] as f64, p.0[2] as f64) / 65535.0)
            .collect(),
        other => return Err(decode_err(format!("unsupported pixel format {:?}", other.color()))),
    };

    let resolution_m = match resolution_override {
        Some(r) => r,
        None => {
            let side_path = sidecar_path(path);
            if !side_path.exists() {
                return Err(Error::Config(format!(
                    "{}: no resolution given and no sidecar found",
                    path.display()
                )));
            }
            let side = read_sidecar(&side_path)?;
            if side.width != width || side.height != height {
                return Err(Error::Sidecar {
                    path: side_path,
                    message: format!(
                        "dimension mismatch: sidecar {}x{}, image {width}x{height}",
                        side.width, side.height
                    ),
                });
            }
            side.resolution_m
        }
    };
    Grid::new(width, height, resolution_m, values)
}

/// Writes `grid` as `.f32` samples plus sidecar. Samples are narrowed to `f32`.
pub fn save_grid(grid: &Grid, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(grid.len() * 4);
    for &v in grid.values() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let side = Sidecar {
        width: grid.width(),
        height: grid.height(),
        resolution_m: grid.resolution_m(),
    };
    let side_path = sidecar_path(path);
    let text = serde_json::to_string_pretty(&side).expect("sidecar serializes");
    fs::write(&side_path, text).map_err(|e| Error::io(&side_path, e))
}

/// Linear rescale to `[0, 1]`. A constant grid maps to all zeros.
pub fn normalize_minmax(grid: &Grid) -> Grid {
    let (lo, hi) = grid.min_max();
    let span = hi - lo;
    if span <= 0.0 {
        return grid.with_values(vec![0.0; grid.len()]);
    }
    let values = grid
        .values()
        .iter()
        .map(|&v| ((v - lo) / span).clamp(0.0, 1.0))
        .collect();
    grid.with_values(values)
}

/// Validates that two grids can be combined pixel by pixel.
pub fn check_alignment(a: &Grid, b: &Grid) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::DimensionMismatch {
            a_width: a.width(),
            a_height: a.height(),
            b_width: b.width(),
            b_height: b.height(),
        });
    }
    let (ra, rb) = (a.resolution_m(), b.resolution_m());
    if (ra - rb).abs() > RESOLUTION_RTOL * ra.abs().max(rb.abs()) {
        return Err(Error::ResolutionMismatch { a: ra, b: rb });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(w: usize, h: usize, res: f64, v: &[f64]) -> Grid {
        Grid::new(w, h, res, v.to_vec()).unwrap()
    }

    #[test]
    fn png_8bit_scales_to_unit_interval() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.png");
        let img = image::GrayImage::from_raw(2, 2, vec![0, 255, 128, 64]).unwrap();
        img.save(&path).unwrap();
        let g = load_grid(&path, GridKind::OpticalGray, Some(5.0)).unwrap();
        assert_eq!(g.values(), &[0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0]);
        assert_eq!(g.resolution_m(), 5.0);
    }

    #[test]
    fn png_16bit_scales_to_unit_interval() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g16.png");
        let img: image::ImageBuffer<image::Luma<u16>, Vec<u16>> =
            image::ImageBuffer::from_raw(2, 1, vec![0, 65535]).unwrap();
        img.save(&path).unwrap();
        let g = load_grid(&path, GridKind::Sar, Some(10.0)).unwrap();
        assert_eq!(g.values(), &[0.0, 1.0]);
    }

    #[test]
    fn rgb_png_reduces_to_luminance() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rgb.png");
        let img = image::RgbImage::from_raw(1, 1, vec![255, 0, 0]).unwrap();
        img.save(&path).unwrap();
        let g = load_grid(&path, GridKind::OpticalGray, Some(1.0)).unwrap();
        assert!((g.values()[0] - 0.299).abs() < 1e-12);
    }

    #[test]
    fn png_without_resolution_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.png");
        image::GrayImage::new(2, 2).save(&path).unwrap();
        let err = load_grid(&path, GridKind::OpticalGray, None).unwrap_err();
        assert!(err.is_input_error());
    }

    #[test]
    fn raw_float_uses_sidecar_metadata() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.f32");
        let values: Vec<f64> = (0..9).map(|i| i as f64 * 0.5).collect();
        save_grid(&grid(3, 3, 5.0, &values), &path).unwrap();
        let g = load_grid(&path, GridKind::RawFloat, None).unwrap();
        assert_eq!((g.width(), g.height(), g.resolution_m()), (3, 3, 5.0));
        assert_eq!(g.values(), values.as_slice());
    }

    #[test]
    fn raw_float_with_nan_reports_index() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nan.f32");
        let mut bytes = Vec::new();
        for v in [1.0f32, 2.0, f32::NAN, 4.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(&path, bytes).unwrap();
        fs::write(
            sidecar_path(&path),
            r#"{"width":2,"height":2,"resolution_m":5}"#,
        )
        .unwrap();
        let err = load_grid(&path, GridKind::RawFloat, None).unwrap_err();
        assert_eq!(err.to_string(), "non-finite value at index 2");
    }

    #[test]
    fn raw_float_sidecar_size_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.f32");
        fs::write(&path, [0u8; 12]).unwrap();
        fs::write(
            sidecar_path(&path),
            r#"{"width":2,"height":2,"resolution_m":5}"#,
        )
        .unwrap();
        let err = load_grid(&path, GridKind::RawFloat, None).unwrap_err();
        assert!(matches!(err, Error::Sidecar { .. }), "{err}");
    }

    #[test]
    fn missing_file_and_corrupt_header() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.png");
        assert!(matches!(
            load_grid(&missing, GridKind::Sar, Some(1.0)),
            Err(Error::Io { .. })
        ));
        let corrupt = dir.path().join("corrupt.png");
        fs::write(&corrupt, b"\x89PNG\r\n\x1a\nthis is not a png").unwrap();
        assert!(matches!(
            load_grid(&corrupt, GridKind::Sar, Some(1.0)),
            Err(Error::Decode { .. })
        ));
    }

    #[test]
    fn normalize_examples() {
        let g = normalize_minmax(&grid(3, 1, 1.0, &[0.0, 5.0, 10.0]));
        assert_eq!(g.values(), &[0.0, 0.5, 1.0]);
        let g = normalize_minmax(&grid(3, 1, 1.0, &[7.0, 7.0, 7.0]));
        assert_eq!(g.values(), &[0.0, 0.0, 0.0]);
        let g = normalize_minmax(&grid(2, 1, 1.0, &[0.0, 1.0]));
        assert_eq!(g.values(), &[0.0, 1.0]);
    }

    #[test]
    fn alignment_checks() {
        let a = grid(3, 3, 5.0, &[0.0; 9]);
        check_alignment(&a, &grid(3, 3, 5.0, &[1.0; 9])).unwrap();
        assert!(matches!(
            check_alignment(&a, &grid(3, 4, 5.0, &[0.0; 12])),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            check_alignment(&a, &grid(3, 3, 10.0, &[0.0; 9])),
            Err(Error::ResolutionMismatch { .. })
        ));
        // within relative tolerance
        check_alignment(&a, &grid(3, 3, 5.0 * (1.0 + 1e-9), &[0.0; 9])).unwrap();
    }

    #[test]
    fn grid_rejects_bad_construction() {
        assert!(Grid::new(2, 2, 1.0, vec![0.0; 3]).is_err());
        assert!(Grid::new(2, 2, 0.0, vec![0.0; 4]).is_err());
        assert!(matches!(
            Grid::new(2, 1, 1.0, vec![0.0, f64::INFINITY]),
            Err(Error::NonFinite { index: 1 })
        ));
    }

    proptest! {
        #[test]
        fn raw_round_trip_is_bit_exact(
            w in 1usize..8, h in 1usize..8,
            seed in proptest::collection::vec(-1e6f32..1e6, 64),
        ) {
            let values: Vec<f64> = seed.iter().take(w * h).map(|&v| v as f64)
                .chain(std::iter::repeat(0.25)).take(w * h).collect();
            let g = Grid::new(w, h, 7.5, values).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("rt.f32");
            save_grid(&g, &path).unwrap();
            let back = load_grid(&path, GridKind::RawFloat, None).unwrap();
            prop_assert_eq!(back, g);
        }

        #[test]
        fn normalize_range_and_idempotence(values in proptest::collection::vec(-1e9f64..1e9, 1..50)) {
            let g = Grid::new(values.len(), 1, 1.0, values).unwrap();
            let n = normalize_minmax(&g);
            prop_assert!(n.values().iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert_eq!(normalize_minmax(&n), n);
        }
    }
}
