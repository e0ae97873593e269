//! Core algorithms for label-informed graph structure learning: dense
//! reverse-mode autodiff, sparse operators, graph-convolution backbones with
//! a transition-weighted label-propagation head, the similarity/transition
//! structure learner, and the unrolled joint trainer.
//!
//! The crate is `no_std`-compatible (with `alloc`); all file formats, IO,
//! and the command-line harness live in the companion binary crate.
#![cfg_attr(not(feature = "std"), no_std)]
// Numeric kernels frequently walk several parallel buffers by row/column
// index; indexed loops are clearer than zipped iterator chains there.
#![allow(clippy::needless_range_loop)]

extern crate alloc;

pub mod adam;
pub mod gnn;
pub mod graph;
pub mod matrix;
pub mod sparse;
pub mod structure;
pub mod tape;
pub mod trainer;
