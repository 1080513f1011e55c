//! Physics-informed generation of paired multi-shot training data.

pub mod assemble;
pub mod coils;
pub mod dataset;
pub mod diffusion;
pub mod phantom;
pub mod phase;

pub use assemble::{add_noise, assemble_ground_truth, shot_images};
pub use coils::{make_coils, make_coils_with, CoilModel};
pub use dataset::{generate_dataset, generate_sample, MultiShotSample, SampleMeta, SynthesisSpec};
pub use diffusion::{synth_magnitude, DiffusionProtocol};
pub use phantom::{make_phantom, PhantomSpec, TensorPhantom};
pub use phase::{sample_phase_coeffs, synth_motion_phase, PolynomialPhaseCoeffs};
