//! The unrolled kernel-learning network: layers, training and probing.

pub mod conv;
pub mod network;
pub mod probe;
pub mod train;
pub mod unrolled;

pub use network::{mkl_activations, mkl_forward, NetworkConfig, WeightSet};
pub use probe::{extract_learned_modulations, learned_modulations, ModulationProbe};
pub use train::{evaluate_loss, train, train_from, EpochRecord, TrainConfig, TrainOutcome, TrainStatus, TrainingPair};
pub use unrolled::{backward, loss, pf_postprocess, pidd_forward, pidd_reconstruct, Acquisition, ForwardPass};
