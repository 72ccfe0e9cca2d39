//! Cross-view localization of ground camera sequences against satellite
//! imagery, built from deterministic numerical operations.
//!
//! The pipeline answers "where was this drive?" by comparing what a ground
//! camera saw with what a satellite sees from above:
//!
//! 1. **Projection** ([`geometry`]): each ground frame is warped onto a
//!    metric overhead canvas by assuming the scene is locally planar, so
//!    ground and satellite content become directly comparable, pixel for
//!    pixel.
//! 2. **Fusion** ([`fusion`]): the N projected frames of a sequence are
//!    reduced to one map by per-pixel cross-frame attention, which keeps
//!    what the frames agree on and votes down frame-specific artefacts.
//! 3. **Matching** ([`matching`]): the fused map is correlated against
//!    each satellite patch over a metric displacement search grid, with an
//!    uncertainty field modulating the scores; the best cell yields both
//!    the sub-patch displacement estimate and a descriptor distance.
//! 4. **Evaluation** ([`eval`]): distances feed a soft-margin triplet loss
//!    (with analytic gradients) and recall@k retrieval metrics under a
//!    metric success radius.
//!
//! [`synth`] renders exactly planar synthetic worlds in both views, acting
//! as the geometric oracle the whole pipeline is tested against, and
//! [`io`] pins the bit-exact file formats used by the `cvl` command-line
//! driver.
//!
//! Everything is reproducible: no global state, explicit seeds, and
//! parallel loops that only ever write disjoint outputs, so results are
//! identical across runs and thread counts.

pub mod error;
pub mod eval;
pub mod feature;
pub mod fusion;
pub mod geometry;
pub mod io;
pub mod matching;
pub mod synth;

pub use error::{Error, Result};
pub use eval::{
    batch_loss, batch_loss_grad, first_hit_rank, geo_distance, recall_at_k, triplet_loss,
    triplet_loss_grad, DistanceMatrix, GeoPoint, Ranking, EARTH_RADIUS_M,
};
pub use feature::{stack_channels, FeatureMap};
pub use fusion::{
    attention_fuse, attention_matrix, attention_matrix_scaled, mean_fuse, qkv_transform,
    AttentionTensor, ConvLayer, ConvStack, QkvStacks,
};
pub use geometry::{
    ground_pixel_to_world, heading_forward, overhead_pixel_to_world, warp_sequence_to_overhead,
    warp_to_overhead, world_to_ground_pixel, world_to_overhead_pixel, CameraIntrinsics,
    CanvasSpec, Interpolation, RigidPose,
};
pub use io::{
    bias_path, mask_path, read_conv_stack, read_feature_map, read_manifest, read_pgm,
    read_positions, read_tensor, write_conv_stack, write_feature_map, write_manifest, write_pgm,
    write_positions, write_tensor, ManifestEntry,
};
pub use matching::{
    aligned_distance, best_displacement, best_match, ncc_field, scan_database, search_radius,
    shifted_view, uncertainty_field, weighted_similarity, DatabaseEntry, MatchReport, ScanResult,
    SimilarityField, UncertaintyField, SEARCH_HALF_EXTENT_M, UNCERTAINTY_FLOOR,
};
pub use synth::{make_trajectory, render_ground, render_satellite, Scene, Trajectory};
