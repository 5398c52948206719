//! Registration pipeline for time-lapse microscopy of deforming tissue.
//!
//! The pipeline aligns each frame of a grayscale sequence to a reference
//! frame in two phases: a mask-guided rigid pre-alignment, then a multi-level
//! cubic B-spline free-form deformation refined coarse-to-fine. Supporting
//! modules provide region-boundary refinement by polar graph search,
//! synthetic benchmark generation with known ground truth, and evaluation
//! metrics (RMSE, Hausdorff distance, overlap scores).
//!
//! Conventions used throughout:
//! - Images are row-major `f64` grids sampled at integer pixel centers, with
//!   intensities normalized to [0, 1] on load.
//! - A transform maps *reference* coordinates to *source* coordinates, so
//!   warping is a backward resampling: `out(p) = src(T(p))`.
//! - Randomness is explicit: generators are seeded and draw in a pinned
//!   order, so every output is bit-reproducible.

pub mod boundary;
pub mod error;
pub mod ffd;
pub mod geom;
pub mod image;
pub mod metrics;
pub mod nonrigid;
pub mod pgm;
pub mod rigid;
pub mod synth;
pub mod transform;

pub use error::{RegError, Result};
pub use ffd::Lattice;
pub use geom::{Point, RoiRect};
pub use image::{Image, Mask};
pub use rigid::{register_rigid, RigidConfig, RigidParams};
pub use transform::TransformChain;

pub use boundary::{mask_polygon, refine_boundary, RefineConfig, RefineResult};
pub use metrics::{hausdorff, overlap, rmse, Overlap};
pub use nonrigid::{register_nonrigid, register_nonrigid_from, EnergyConfig, IterationRecord};
pub use synth::{clean_register_eval, generate_item, phantom_pouch, SynthItem, SynthSpec};
