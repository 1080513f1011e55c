//! Physics-informed multi-shot diffusion MRI reconstruction at desk scale:
//! synthetic paired data, classical reconstruction with motion kernels, a
//! small unrolled kernel-learning network, and evaluation metrics.

pub mod coils;
pub mod error;
pub mod fft;
pub mod grid;
pub mod learned;
pub mod mask;
pub mod metrics;
pub mod parr;
pub mod pipeline;
pub mod recon;
pub mod synth;

pub use error::{PiddError, Result};
pub use grid::{Axis, ComplexGrid, Domain, Grid, RealGrid};
