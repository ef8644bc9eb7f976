//! LiDAR place recognition built around attention-refined range-image descriptors.
//!
//! The pipeline runs point cloud → spherical range image ([`projection`]) →
//! encoder + stacked channel attention + pooled, layer-normalized descriptor
//! ([`model`]) → cosine kNN against a descriptor map ([`retrieval`]).
//! [`training`] fits the network on positive/negative pairs drawn from loop
//! ground truth ([`data`]) and [`evaluation`] scores retrieval with
//! precision/recall/F1 and recall@N.
//!
//! All network math runs on the small reverse-mode engine in [`tensor`],
//! [`graph`], [`ops`] and [`optim`].

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod data;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod graph;
pub mod model;
pub mod ops;
pub mod optim;
pub mod projection;
pub mod retrieval;
pub mod run_config;
pub mod tensor;
pub mod training;

pub(crate) mod binio;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
