//! Panoptic post-processing toolkit: confidence-scored mask-wise merging and
//! its pixel-wise baselines, query-to-target assignment with stuff queries
//! bound to fixed categories, matching losses, a multi-scale attention mask
//! head, PQ evaluation, and deterministic synthetic scenes with brute-force
//! oracles.
//!
//! ```
//! use panoptic_core::{generate_scene, mask_wise_merge, pq, MergeParams, SceneParams, Taxonomy};
//!
//! let taxonomy = Taxonomy::synthetic_default();
//! let scene = generate_scene(&SceneParams { noise_sigma: 0.0, ..SceneParams::default() }, &taxonomy).unwrap();
//! let map = mask_wise_merge(&scene.stack, &MergeParams::default());
//! assert_eq!(pq(&map, &scene.gt, &taxonomy).unwrap().all.pq, 1.0);
//! ```

pub mod assignment;
pub mod attnfuse;
pub mod error;
pub mod harness;
pub mod io;
pub mod losses;
pub mod merging;
pub mod metrics;
pub mod scoring;
pub mod synth;
pub mod types;

pub use assignment::{
    decoupled_assign, hungarian, matching_cost, Assignment, CostMatrix, CostWeights, DecoupledAssignment, Location,
    LocationMode, MatchingOptions, QueryPrediction, TargetInstance,
};
pub use attnfuse::{flatten_attn, fuse_attn, mask_from_attention, predict_mask, split_attn, upsample_bilinear, FuseHead};
pub use error::{Error, Result};
pub use harness::{bench_scene, run_bench, BenchConfig, BenchReport, TimingRow};
pub use losses::{
    deep_supervised_loss, dice_loss, dice_loss_grad, dynamic_lambda, dynamic_lambda_for, focal_loss, masked_seg_weight,
    total_loss, FocalParams, LossWeights, ProportionBase,
};
pub use merging::{heuristic_merge, mask_wise_merge, merge, merge_same_category_stuff, pixel_wise_argmax, MergeParams, Strategy};
pub use metrics::{pq, pq_with, query_stats, DecileTable, EvalOptions, PqAccumulator, PqReport, QueryStats};
pub use scoring::{confidence, confidence_from_quality, segmentation_quality, ScoreParams};
pub use synth::{generate_scene, image_seed, oracle_assignment, oracle_merge, Scene, SceneParams};
pub use types::{
    binarize, validate_stack, CategoryId, CategorySpec, InstanceId, MaskLabel, MaskStack, MultiScaleAttn, PanopticMap,
    Provenance, Segment, Taxonomy, ValidatedStack, BINARIZE_THRESHOLD,
};
