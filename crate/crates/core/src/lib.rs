//! Allocation of cloud services to mobile users over a two-tier cloud.
//!
//! Users move over a grid of cells and issue location-time workflows. Each
//! function occurrence can run on the device, on a nearby capacity-limited
//! local cloud reached over WiFi, or on a priced public cloud. Allocators pick
//! one service per occurrence to maximize the mean, over users, of each
//! user's worst normalized QoS dimension.

pub mod allocation;
pub mod error;
pub mod harness;
pub mod mobility;
pub mod model;
pub mod profiles;
pub mod registry;
pub mod workflow;
pub mod world;

pub use error::{Error, Result};
