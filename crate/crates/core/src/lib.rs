//! Chest X-ray triage classification pipeline.
//!
//! A manifest-driven pipeline that trains, evaluates and explains a 4-class
//! (or 3-class) chest X-ray classifier: `Normal`, `BacterialPneumonia`,
//! `ViralPneumonia` and `COVID19` (the 3-class configuration clubs the two
//! pneumonias). The pieces fit together as follows:
//!
//! * [`dataset`] ingests the two image sources into a patient-aware manifest,
//!   re-splits it by patient id and defines the deterministic preprocessing.
//! * [`model`] is a DenseNet backbone with a C-way sigmoid head, freezable
//!   backbone and safetensors checkpoints.
//! * [`loss`] and [`sampler`] carry the two imbalance mechanisms: per-class
//!   positive/negative weights inside a binary cross-entropy, and fixed-ratio
//!   batch composition (5:5:5:1 four-class, 7:7:1 three-class).
//! * [`trainer`] runs the two-stage protocol (head-only, then end-to-end) and
//!   selects checkpoints by lowest validation loss.
//! * [`metrics`] computes AUROC/ROC, accuracy, sensitivity, PPV, confusion
//!   matrices and bootstrap F1 confidence intervals.
//! * [`saliency`] produces randomized-masking saliency maps by querying the
//!   trained model as a black box.
//!
//! The `cxr-triage` binary exposes the pipeline as subcommands
//! (`prepare-data`, `train`, `evaluate`, `infer`, `explain`); the `examples/`
//! directory has one runnable example per capability, none of which need the
//! real datasets or pretrained weights.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod saliency;
pub mod sampler;
pub mod seeding;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
