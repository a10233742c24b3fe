//! Event prediction over multichannel time series: a horizon-conditioned
//! predictor is pretrained with a joint-embedding objective on unlabeled
//! streams, then finetuned into a discrete-time survival model whose output
//! is a monotone probability surface p(t, dt) = P(event within dt | history
//! up to t). Evaluation ranks, projects, and calibrates that surface.
//!
//! Everything runs on f32 CPU tensors through the reverse-mode tape in
//! [`autodiff`]; no external ML framework is involved.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod featurize;
pub mod metrics;
pub mod network;
pub mod pretrain;
pub mod survival;
pub mod theory;

pub use autodiff::{Tape, TensorId};
pub use data::{Dataset, DatasetSpec, Episode, Split, SyntheticSpec, WindowCfg};
pub use error::HepaError;
pub use featurize::TokenSequence;
pub use metrics::{MetricReport, ProbabilitySurface, SurfaceRow};
pub use network::ModelWeights;
pub use pretrain::{PretrainConfig, PretrainReport, TrainingSnapshot};
pub use survival::{FinetuneConfig, FinetuneMode, FinetuneReport, PredictorInit};
pub use theory::{SweepPoint, SweepReport};

pub type Result<T> = std::result::Result<T, HepaError>;
