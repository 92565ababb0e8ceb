//! Two-step anchor-refinement object detection at desk scale.
//!
//! The crate trains and runs a single-shot detector in which a first stage
//! (anchor refinement) scores tiled anchors as object/background and coarsely
//! shifts them, and a second stage (object detection) classifies and refines
//! the shifted anchors using features fused through top-down transfer blocks.
//! Everything from the differentiable ops to the evaluation protocol is
//! self-contained and deterministic under explicit seeds.
//!
//! Start with the runnable examples (`cargo run --release --example <name>`):
//!
//! * `anchor_grid`: tile and inspect the multi-level anchor grid
//! * `gradient_check`: verify every op against central finite differences
//! * `make_dataset`: render a synthetic shapes dataset to disk
//! * `overfit_single_image`: sanity-train on one image
//! * `train_and_detect`: small end-to-end training run plus inference
//! * `evaluate_detections`: AP / mAP and false-positive taxonomy
//! * `ablation_table`: compare the four architecture variants
//! * `latency_bench`: per-op and end-to-end latency
//!
//! The `cdet` binary wraps the same library functions behind subcommands for
//! scripted use.

pub mod anchors;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod loss;
pub mod matching;
pub mod microdiff;
pub mod network;
pub mod pipeline;

pub use error::{Error, Result};
