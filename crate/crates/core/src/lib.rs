//! scenesynth-core: rebuild a fixed surveillance scene as a virtual world,
//! simulate pedestrians in it, render synthetic frames with automatically
//! computed occlusion-aware ground truth, and measure how much scene-matched
//! synthetic training data helps a detector compared to mismatched data.
//!
//! Pipeline stages:
//!
//! 1. **camgeom**: pinhole camera: world → camera → image-plane → pixel.
//! 2. **scenesim**: walkable-region scene description and agent simulation
//!    (solo walkers, small groups, standing phone-callers).
//! 3. **meshgen**: procedural low-poly articulated humanoids.
//! 4. **rasterlab**: software z-buffer rasterizer, occlusion-aware
//!    auto-labeler, and the naive labeling baselines it improves on.
//! 5. **dataset**: dataset directories, VOC-style XML annotations, CSV
//!    ground-truth ingestion, label rescaling.
//! 6. **detect**: HOG features + linear classifier, sliding-window scan,
//!    non-maximum suppression.
//! 7. **evalkit**: VOC-2007 matching, PR curves, 11-point AP, reports.
//! 8. **pipeline**: end-to-end orchestration used by the `scenesynth` CLI.

pub mod bbox;
pub mod camgeom;
pub mod config;
pub mod dataset;
pub mod detect;
pub mod evalkit;
pub mod geom2d;
pub mod imgio;
pub mod meshgen;
pub mod pipeline;
pub mod rasterlab;
pub mod scenesim;
