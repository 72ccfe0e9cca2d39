//! File formats: binary tensors, database manifests, weights, PGM images.

pub mod manifest;
pub mod pgm;
pub mod tensor;
pub mod weights;

pub use manifest::{read_manifest, read_positions, write_manifest, write_positions, ManifestEntry};
pub use pgm::{read_pgm, write_pgm};
pub use tensor::{mask_path, read_feature_map, read_tensor, write_feature_map, write_tensor};
pub use weights::{bias_path, read_conv_stack, write_conv_stack};
