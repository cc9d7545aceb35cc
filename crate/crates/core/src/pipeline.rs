//! End-to-end run: load, fuse, threshold, segment, measure the gradient and
//! split the residuals into regions.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{self, FusionConfig};
use crate::gmm::{self, Histogram, Thresholds};
use crate::gradient::{self, DensityProfile, GradientConfig, GradientFit, GradientMetrics, RhoTarget};
use crate::raster::{self, Grid, GridKind};
use crate::regions::{self, RegionSet, ResidualSeries};
use crate::segmentation::{self, SegmentationMap};

pub const TOOL_NAME: &str = "urbangrad";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Analysis parameters. Every field has a default, so `{}` is a valid
/// config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub fusion: FusionConfig,
    pub histogram_bins: usize,
    pub min_component_px: usize,
    pub tau_center: f64,
    pub prominence_factor: f64,
    pub minima_window: usize,
    pub rho_target: RhoTarget,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            fusion: FusionConfig::default(),
            histogram_bins: gmm::DEFAULT_BINS,
            min_component_px: segmentation::DEFAULT_MIN_COMPONENT_PX,
            tau_center: gmm::DEFAULT_TAU_CENTER,
            prominence_factor: gradient::DEFAULT_PROMINENCE_FACTOR,
            minima_window: gradient::DEFAULT_MINIMA_WINDOW,
            rho_target: RhoTarget::ProfileMin,
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: PipelineConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.fusion.validate()?;
        if self.histogram_bins < 8 {
            return Err(Error::Config(format!("histogram_bins must be >= 8, got {}", self.histogram_bins)));
        }
        if !self.tau_center.is_finite() {
            return Err(Error::Config("tau_center must be finite".into()));
        }
        if !(self.prominence_factor.is_finite() && self.prominence_factor >= 0.0) {
            return Err(Error::Config("prominence_factor must be >= 0".into()));
        }
        if self.minima_window < 3 || self.minima_window % 2 == 0 {
            return Err(Error::Config(format!("minima_window must be odd and >= 3, got {}", self.minima_window)));
        }
        if let RhoTarget::Absolute(v) = self.rho_target {
            if !v.is_finite() {
                return Err(Error::Config("rho_target value must be finite".into()));
            }
        }
        Ok(())
    }

    pub fn gradient(&self) -> GradientConfig {
        GradientConfig {
            minima_window: self.minima_window,
            prominence_factor: self.prominence_factor,
            rho_target: self.rho_target,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputPaths {
    pub optical: PathBuf,
    pub sar: PathBuf,
    pub resolution_m: Option<f64>,
}

/// A non-fatal condition worth surfacing to whoever reads the report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Warning {
    pub code: String,
    pub message: String,
}

impl Warning {
    fn new(code: &str, message: impl Into<String>) -> Self {
        Self {
            code: code.to_string(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolInfo {
    pub name: String,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneInfo {
    pub width: usize,
    pub height: usize,
    pub resolution_m: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optical: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sar: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmSummary {
    pub weights: [f64; 3],
    pub means: [f64; 3],
    pub stds: [f64; 3],
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationStats {
    pub water_px: usize,
    pub terrain_px: usize,
    pub urban_px: usize,
    pub urban_refined_px: usize,
    pub urban_final_px: usize,
    pub center_px: usize,
    /// Connected components of the refined mask before area filtering.
    pub component_count: usize,
    pub components_kept: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub tool: ToolInfo,
    pub scene: SceneInfo,
    pub config: PipelineConfig,
    pub thresholds: Thresholds,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gmm: Option<GmmSummary>,
    pub segmentation: SegmentationStats,
    pub gradient: GradientMetrics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regions: Option<RegionSet>,
    pub warnings: Vec<Warning>,
    /// Only key that may differ between identical runs; absent unless asked
    /// for.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generated_at: Option<String>,
}

impl Report {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Everything a run produces, including the intermediate rasters needed for
/// plots.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub report: Report,
    pub rho: Grid,
    pub histogram: Histogram,
    pub segmentation: SegmentationMap,
    pub initial_urban: crate::raster::Mask,
    pub refined_urban: crate::raster::Mask,
    pub distance: Grid,
    pub profile: DensityProfile,
    pub fit: GradientFit,
    pub residuals: Option<ResidualSeries>,
}

/// Fused, denoised density field from an optical/SAR pair.
pub fn fuse(optical: &Grid, sar: &Grid, cfg: &FusionConfig) -> Result<Grid> {
    raster::check_alignment(optical, sar)?;
    let optical = raster::normalize_minmax(optical);
    let sar = raster::normalize_minmax(sar);
    let edges = fusion::sobel_magnitude(&optical)?;
    let density = fusion::edge_density(&edges, cfg);
    let rho = fusion::combine(&density, &sar, cfg)?;
    Ok(fusion::nlm_denoise(&rho, cfg))
}

/// Runs every stage from the combined density field onwards.
pub fn analyze_density(rho: &Grid, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    let mut warnings = Vec::new();

    let histogram = gmm::build_histogram(rho, cfg.histogram_bins).map_err(Error::in_stage("histogram"))?;
    let (thresholds, gmm_summary) = match gmm::fit_gmm_em(&histogram) {
        Ok(fit) => {
            if !fit.converged {
                warnings.push(Warning::new(
                    "em-not-converged",
                    format!("EM stopped after {} iterations", fit.iterations),
                ));
            }
            let t = gmm::derive_thresholds(&fit.params, &histogram, cfg.tau_center);
            let summary = GmmSummary {
                weights: fit.params.weights,
                means: fit.params.means,
                stds: fit.params.stds,
                log_likelihood: fit.params.log_likelihood,
                iterations: fit.iterations,
                converged: fit.converged,
            };
            (t, Some(summary))
        }
        Err(e @ Error::EmCollapse { .. }) => {
            warnings.push(Warning::new("em-collapse", e.to_string()));
            (Thresholds::quantile_fallback(&histogram, cfg.tau_center), None)
        }
        Err(e) => return Err(Error::in_stage("gmm")(e)),
    };
    if thresholds.provenance == gmm::ThresholdProvenance::QuantileFallback {
        warnings.push(Warning::new(
            "quantile-thresholds",
            "no usable mixture intersections; thresholds are the 25th and 75th percentiles",
        ));
    }
    if thresholds.swapped {
        warnings.push(Warning::new("thresholds-swapped", "water threshold exceeded urban threshold; swapped"));
    }

    let (seg, initial_urban, component_count) =
        segmentation::segment(rho, &thresholds, cfg.min_component_px).map_err(Error::in_stage("segmentation"))?;
    let refined_urban = segmentation::refine_urban_mask(&initial_urban);
    let (water_px, terrain_px, urban_px) = seg.class_counts();
    let stats = SegmentationStats {
        water_px,
        terrain_px,
        urban_px,
        urban_refined_px: refined_urban.count(),
        urban_final_px: seg.urban_final.count(),
        center_px: seg.centers.count(),
        component_count,
        components_kept: segmentation::label_components(&seg.urban_final).1.len(),
    };

    let ga = gradient::analyze_gradient(rho, &seg.urban_final, &seg.centers, &cfg.gradient())?;
    if ga.metrics.minima_fallback {
        warnings.push(Warning::new(
            "minima-fallback",
            "fewer than two local minima in the profile; fitted all bins",
        ));
    }
    if ga.metrics.no_distinct_peak {
        warnings.push(Warning::new("no-distinct-peak", "profile has no peak above the prominence threshold"));
    }
    if ga.metrics.negative_ld {
        warnings.push(Warning::new("negative-ld", format!("LD = {} km is negative", ga.metrics.ld_km)));
    }

    let (residuals, region_set) = match regions::analyze_regions(&ga.profile, &ga.fit) {
        Ok((r, rs)) => (Some(r), Some(rs)),
        Err(e @ Error::SeriesTooShort(_)) => {
            warnings.push(Warning::new("regions-skipped", e.to_string()));
            (None, None)
        }
        Err(e) => return Err(Error::in_stage("regions")(e)),
    };

    let report = Report {
        tool: ToolInfo {
            name: TOOL_NAME.into(),
            version: TOOL_VERSION.into(),
        },
        scene: SceneInfo {
            width: rho.width(),
            height: rho.height(),
            resolution_m: rho.resolution_m(),
            optical: None,
            sar: None,
        },
        config: cfg.clone(),
        thresholds,
        gmm: gmm_summary,
        segmentation: stats,
        gradient: ga.metrics,
        regions: region_set,
        warnings,
        generated_at: None,
    };
    Ok(PipelineOutput {
        report,
        rho: rho.clone(),
        histogram,
        segmentation: seg,
        initial_urban,
        refined_urban,
        distance: ga.distance,
        profile: ga.profile,
        fit: ga.fit,
        residuals,
    })
}

/// Full pipeline on an in-memory scene pair.
pub fn run_on_grids(optical: &Grid, sar: &Grid, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    let rho = fuse(optical, sar, &cfg.fusion).map_err(|e| match e {
        e if e.is_input_error() => e,
        e => Error::in_stage("fusion")(e),
    })?;
    let mut out = analyze_density(&rho, cfg)?;
    if !fusion::nlm_fits(&rho, &cfg.fusion) {
        out.report.warnings.insert(
            0,
            Warning::new("nlm-skipped", "scene smaller than the NLM search window; denoising skipped"),
        );
    }
    Ok(out)
}

/// Loads the inputs and runs the full pipeline.
pub fn run_pipeline(inputs: &InputPaths, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    let load = |path: &Path, kind| raster::load_grid(path, GridKind::infer(path, kind), inputs.resolution_m);
    let optical = load(&inputs.optical, GridKind::OpticalGray)?;
    let sar = load(&inputs.sar, GridKind::Sar)?;
    let mut out = run_on_grids(&optical, &sar, cfg)?;
    out.report.scene.optical = Some(inputs.optical.display().to_string());
    out.report.scene.sar = Some(inputs.sar.display().to_string());
    Ok(out)
}
