//! Collective abnormality detection for connected vehicles.
//!
//! The crate learns a switching dynamic-model vocabulary for each vehicle from
//! normal driving data, tracks vehicles online with a Markov jump particle
//! filter that reports a Hellinger abnormality score per step, and replays the
//! inter-vehicle observation exchange over a simulated 802.11p link with
//! Rician fading so detection quality can be compared across channel
//! conditions.
//!
//! Pipeline overview:
//!
//! * [`statespace`]: CSV-shaped sensor series, resampling, min-max
//!   normalization, generalized states and the null-force innovation filter.
//! * [`gng`]: growing neural gas with utility that turns samples into letters.
//! * [`vocabulary`]: words, transition matrix, per-word linear models and the
//!   model file.
//! * [`mjpf`]: the particle filter bank and the abnormality measure.
//! * [`channel`] and [`netsim`]: link budget, fading and the packet simulator.
//! * [`scenario`]: synthetic perimeter and emergency-stop datasets.
//! * [`eval`]: confusion counts, ROC and AUC.

pub mod channel;
pub mod error;
pub mod eval;
pub mod gng;
pub mod io;
pub mod mjpf;
pub mod netsim;
pub mod scenario;
pub mod statespace;
pub mod vocabulary;

mod seed;

pub use error::{Error, Result};
pub use seed::derive_seed;
