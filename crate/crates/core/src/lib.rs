//! Collaborative unsupervised domain adaptation for gaze regression.
//!
//! A group of pretrained networks is adapted to an unlabeled target domain.
//! Each online member is pulled towards the consensus of a slowly averaged
//! momentum group, with predictions that stray beyond a normal-quantile
//! threshold penalised linearly.

pub mod bench;
pub mod checkpoint;
pub mod data;
pub mod engine;
pub mod ensemble;
pub mod error;
pub mod gaze;
pub mod losses;
pub mod nn;
pub mod optim;
pub mod runtime;
pub mod tensor;

pub use error::{Error, Result};
pub use gaze::{angular_error, gaze_to_vector, mean_angular_error, DomainTag, GazeLabel, GazeSample, SampleBatch};
pub use tensor::Tensor;
