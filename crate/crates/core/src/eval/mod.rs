//! Objective evaluation: character error rate with failure labeling,
//! real-time-factor timing, and opinion-score aggregation.

mod cer;
mod corpus;
mod mos;
mod rtf;

pub use cer::{
    cer, detect_failure, EditStats, FailureKind, FailureLabel, DEFAULT_DEL_THRESH,
    DEFAULT_INS_THRESH,
};
pub use corpus::{evaluate_corpus, CorpusReport, UtteranceEval};
pub use mos::{mos_aggregate, MosReport};
pub use rtf::{measure_rtf, Clock, RtfReport, SystemClock};
