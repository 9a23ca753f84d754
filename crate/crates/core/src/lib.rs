//! Subjectivity detection for value-laden arguments.
//!
//! Two families of methods are provided on top of a multi-annotator value
//! annotation corpus:
//!
//! - [`infer`]: predict each annotator's value labels, then flag an
//!   (argument, value) cell as subjective where the predictions differ.
//! - [`direct`]: train one binary subjectivity classifier per value, with
//!   binary cross-entropy optionally combined with a triplet or a
//!   softmax-contrast ("tension") objective.
//!
//! [`corpus`] handles ingestion, selection, splits, agreement and
//! augmentation; [`encoder`] provides the text encoders, heads and the
//! training step; [`evaluation`] computes the reported metrics.

pub mod corpus;
pub mod direct;
pub mod encoder;
pub mod evaluation;
pub mod infer;
pub mod seed;
pub mod synthetic;
pub mod transport;

pub use corpus::{AnnotationRecord, Corpus, CorpusError, SplitSpec, ValueSelection};
pub use direct::{DsModel, DsVariant};
pub use encoder::{EncoderConfig, LossBreakdown, TrainConfig};
pub use evaluation::MetricsReport;
pub use infer::{IsModelBundle, IsVariant};
