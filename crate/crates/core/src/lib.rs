//! Confidence-based decoding for masked diffusion language models.
//!
//! The engine fills a fixed-length masked response over `T` steps. At each
//! step a [`Denoiser`] predicts every masked position, a confidence strategy
//! scores them, and the best-scoring positions are unmasked. On top of the
//! plain strategies it supports:
//!
//! - a short suffix anchor pre-filled near the end of the response,
//! - anchor-proximity confidence modulation that holds back positions next to
//!   the anchor early in decoding and relaxes as decoding progresses,
//! - EOT suppression and block-wise semi-autoregressive decoding as baselines.
//!
//! Every run produces a [`DecodeTrace`] from which [`stats`] derives EOT
//! ratios, early-decoding position histograms and paired-run comparisons.

pub mod confidence;
pub mod decode;
pub mod denoiser;
pub mod error;
pub mod modulation;
pub mod remote;
pub mod rng;
pub mod schedule;
pub mod state;
pub mod stats;
pub mod synthetic;
pub mod table;
pub mod trace;

pub use confidence::{ConfidenceVector, Score, Strategy};
pub use decode::{decode, decode_semi_ar, decode_synthetic, rerun_header, DecodeConfig, DecodeMode, DecodeOutput, TieBreak};
pub use denoiser::{Denoiser, DenoiserRequest, DenoiserResponse, Prediction};
pub use error::{DenoiserError, Error, Result};
pub use modulation::{compute_weights, modulate, ModulationParams, WeightField};
pub use remote::RemoteDenoiser;
pub use schedule::schedule_counts;
pub use state::{AnchorSpec, DecidedAt, SequenceState, TokenId, Vocabulary};
pub use synthetic::{SyntheticDenoiser, SyntheticModelConfig};
pub use table::{PredictionTable, Recorder, TableDenoiser};
pub use trace::{DecodeTrace, StepRecord, TraceHeader};
