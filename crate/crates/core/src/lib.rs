//! Build instruction-based object-removal datasets from scene-graph
//! annotations, and score inpainting results.
//!
//! The dataset side selects removable objects, matches externally predicted
//! instance masks to them, dilates the masks, hands them to an inpainter and
//! writes a `remove the ...` instruction for each pair. The evaluation side
//! computes CLIP Distance, CLIP Accuracy, RelSim and FID from files produced
//! by external models.

pub mod error;
pub mod instruction;
pub mod mask_ops;
pub mod metrics;
pub mod pipeline;
pub mod relations;
pub mod scene_graph;
pub mod selection;

pub use error::{ForgeError, Result};
