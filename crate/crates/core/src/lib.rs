//! Meta-weight graph networks at desk scale.
//!
//! The crate covers the full pipeline: CSR graphs with structural
//! primitives ([`graph`]), homophily/centrality measurement ([`metrics`]),
//! block-model synthetic data ([`synthgen`]), the meta-weight encoder
//! ([`meta`]) and adaptive convolution ([`conv`]), model assembly and
//! training ([`models`]), Monte Carlo verification of the concentration
//! guarantee ([`theory`]), and sweep plumbing ([`harness`]).

pub mod bundle;
pub mod conv;
pub mod graph;
pub mod harness;
pub mod meta;
pub mod metrics;
pub mod models;
pub mod synthgen;
pub mod theory;

pub use mwgnn_autodiff as autodiff;
