//! Physical model of curved-page scanning artifacts and their inversion.
//!
//! A book page pressed onto a scanner bends into an elastica near the spine.
//! That shape produces three artifacts in the scan: a horizontal squeeze, a
//! blur that grows with height above the platen, and darkening from the
//! receding light source. This crate simulates all three from a handful of
//! physical parameters, inverts them, and estimates the parameters from data.
//!
//! - [`geometry`]: page shape and scan parameters
//! - [`raster`]: images, masks, PGM/PPM codec
//! - [`forward`]: distortion, blur operator, darkening
//! - [`inverse`]: lightening, regularized deblurring, undistortion
//! - [`estimate`]: fitting shapes and photometry, artifact detectors

pub mod error;
pub mod estimate;
pub mod forward;
pub mod geometry;
pub mod inverse;
pub mod raster;
pub mod sparse;

pub use error::{Error, Result};
pub use forward::{
    blur, build_blur_operator, darken, distort, distort_with, simulate, ArtifactSet, BlurOperator,
    DistortOptions,
};
pub use geometry::{shape_at_x, solve_shape, unfolded_theta0, PageShape, ScanParams, ShapeSample, SpineSide};
pub use inverse::{
    deblur, deblur_unclamped, lighten, lighten_unclamped, recover, undistort, undistort_with, SolveMethod, SolverConfig,
};
pub use estimate::{
    column_rms_report, detect_artifacts, estimate_from_whitespace, fit_calibration_strip, fit_shape,
    ColumnRms, DetectorReport, FitResult, FittedParams,
};
pub use raster::{channel_map, load_image, save_image, Image, Mask};
