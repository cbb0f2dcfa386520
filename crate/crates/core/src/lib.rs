//! Personal road networks learned from trip logs, route and destination
//! prediction, and hierarchical topic models of quantized car signals.

// Index loops mirror the update formulas; negated comparisons reject NaN.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod corpus;
pub mod eval;
pub mod hdp;
pub mod hmm;
pub mod predict;
pub mod quantize;
pub mod real;
pub mod stream;
pub mod trips;

pub use real::Real;

pub type Trip = trips::Trip<f64>;
pub type Observation = trips::Observation<f64>;
pub type HmmModel = hmm::HmmModel<f64>;
pub type HdpState = hdp::HdpState<f64>;
pub type Codebook = quantize::Codebook<f64>;
pub type Vocabulary = quantize::Vocabulary<f64>;

pub type TripF32 = trips::Trip<f32>;
pub type HmmModelF32 = hmm::HmmModel<f32>;
pub type HdpStateF32 = hdp::HdpState<f32>;
pub type CodebookF32 = quantize::Codebook<f32>;
