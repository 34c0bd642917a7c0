//! Night-to-day image translation and VLAD retrieval for visual localization.

pub(crate) mod binio;
pub mod error;
pub mod features;
pub mod geoeval;
pub mod image;
pub mod imgproc;
pub mod pipeline;
pub mod retrieval;
pub mod translator;
pub mod vlad;

pub use error::{Error, Result};
