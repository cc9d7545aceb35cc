//! Urban density-gradient analysis from fused optical and SAR rasters.
//!
//! Stages, in pipeline order: [`raster`] loading, [`fusion`] of optical edge
//! density with SAR backscatter, [`gmm`] histogram thresholds,
//! [`segmentation`] into water / terrain / urban with urban centers,
//! [`gradient`] profile and metrics, and [`regions`] of the residuals.
//! [`pipeline`] strings them together and [`output`] writes the artefacts.
//! [`synth`] builds scenes with known ground truth.

pub mod error;
pub mod fusion;
pub mod gmm;
pub mod gradient;
pub mod output;
pub mod pipeline;
pub mod raster;
pub mod regions;
pub mod segmentation;
pub mod synth;

pub use error::{Error, Result};
pub use pipeline::{analyze_density, run_on_grids, run_pipeline, PipelineConfig, PipelineOutput, Report};
pub use raster::{Grid, Mask};
