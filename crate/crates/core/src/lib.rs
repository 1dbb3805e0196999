//! Ventilator pressure control through a learned, differentiable lung
//! simulator.
//!
//! The pipeline collects exploratory breaths from a synthetic lung
//! ([`lung`]), fits a one-step pressure predictor on them ([`sim`]), trains
//! a residual PID + network controller by unrolling it through that
//! predictor ([`policy`]), and scores the result against grid-searched PID
//! on the synthetic lung ([`bench`]).

pub mod bench;
pub mod config;
pub mod controller;
pub mod dataset;
pub mod error;
pub mod explore;
pub mod io;
pub mod lung;
pub mod nn;
pub mod pipeline;
pub mod policy;
pub mod rng;
pub mod sim;
pub mod types;
pub mod waveform;

pub use error::{Error, Result};
