//! Forecasting the age distribution of life-table deaths.
//!
//! Densities are mapped to unconstrained curves either by a cumulative-sum +
//! logit transform or by the centred log-ratio transform, decomposed by
//! functional principal components (univariate, stacked multivariate or
//! multilevel), and the component scores are extrapolated with exponential
//! smoothing. The crate also carries an expanding-window evaluation harness and
//! temporary annuity pricing from the forecast life tables.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod annuity;
pub mod cli;
pub mod eval;
pub mod fpca;
pub mod lifetable;
pub mod pipeline;
pub mod scorefc;
pub mod synthetic;
pub mod transforms;
