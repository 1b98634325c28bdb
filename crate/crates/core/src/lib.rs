//! LiDAR-only planar localization against compact bird's-eye-view prior maps.

pub mod bev;
pub mod config;
pub mod error;
pub mod evaluator;
pub mod features;
pub mod geom;
pub mod ground_grid;
pub mod map_store;
pub mod matcher;
pub mod pipeline;
pub mod pose_filter;
pub mod registrar;
pub mod synth;

pub use error::{Error, Result};
