//! U-Net family segmentation models with attention gates and feature
//! pyramid attention, a small autograd engine to train them on the CPU, and
//! an experiment harness over synthetic prostate-zone phantoms.

pub mod blocks;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod graph;
pub mod kernels;
pub mod metrics;
pub mod models;
pub mod params;
pub mod report;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
