//! Thin client for the mapro optimization service.

pub mod api;

#[cfg(feature = "http")]
mod http;

#[cfg(feature = "http")]
pub use http::{ClientError, MaproClient};
