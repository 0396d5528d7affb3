//! Pose estimation from mmWave radar point clouds with an edge-featured
//! graph attention network.
//!
//! The pipeline: radar frames are sorted, fused across consecutive frames and
//! denoised ([`data`]), turned into directed KNN graphs with six mutual edge
//! features per edge ([`graph`]), pushed through an edge-conditioned GAT with
//! mean pooling and a regression head ([`model`]), trained with Adam on a
//! reverse-mode tape ([`autodiff`], [`train`]) and scored with MAE/RMSE and
//! (PA-)MPJPE ([`metrics`]).
//!
//! Core numerics are generic over the scalar type through [`Real`];
//! the `*64` aliases at the crate root are what the CLI and trainer use.

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod gradcheck;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod train;

use std::fmt;

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

/// Scalar type the numeric core is generic over.
///
/// Implemented for `f32` and `f64`. `f64` is the working precision of the
/// shipped pipeline (gradient checking at 1e-4 relative error leaves no room
/// for single precision); `f32` remains available for inference experiments.
pub trait Real:
    Float
    + NumAssignOps
    + FromPrimitive
    + ToPrimitive
    + fmt::Debug
    + fmt::Display
    + fmt::LowerExp
    + Default
    + Send
    + Sync
    + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

/// Lossy conversion from `f64` into any [`Real`].
#[inline]
pub fn real<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("f64 convertible to Real scalar")
}

pub type Tensor64 = autodiff::Tensor<f64>;
pub type Tape64 = autodiff::Tape<f64>;
pub type ParamSet64 = autodiff::ParamSet<f64>;
pub type AdamState64 = autodiff::AdamState<f64>;
pub type Dataset64 = data::Dataset<f64>;
pub type RadarFrame64 = data::RadarFrame<f64>;
pub type Skeleton64 = data::Skeleton<f64>;
pub type FrameGraph64 = graph::FrameGraph<f64>;
pub type GraphBatch64 = graph::GraphBatch<f64>;
pub type MetricReport64 = metrics::MetricReport<f64>;
