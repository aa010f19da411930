//! Budget-aware configuration of depthwise-separable segmentation networks.
//!
//! - [`tensor`]: naive convolution engine with an exact MAC counter
//! - [`cost`]: analytic MAC accounting for layers and networks
//! - [`bilinear`]: bilinear kernel banks for transposed-conv upsampling
//! - [`architecture`]: backbone specs, width scaling and the FCN head
//! - [`optimizer`]: GP-surrogate Bayesian search and exhaustive search
//! - [`app`]: scenario files and the command implementations

pub mod app;
pub mod architecture;
pub mod bilinear;
pub mod cost;
pub mod error;
pub mod optimizer;
pub mod oracle;
pub mod tensor;

pub use error::{Error, Result};
