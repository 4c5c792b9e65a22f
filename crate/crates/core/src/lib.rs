//! Latency evaluation for simultaneous machine translation over continuous
//! streams.
//!
//! The crate provides sentence-level AP, AL and DAL ([`metrics`]), their
//! stream-level counterparts driven by a global read/write trace
//! ([`stream`]), edit-distance re-segmentation of unsegmented hypotheses
//! ([`resegment`]) and a wait-k simulator that produces traces for testing
//! ([`simulate`]). Metrics and evaluation modes are strategies looked up by
//! name in a [`registry::Registry`].
//!
//! All delays are counted in source tokens.

pub mod corpus;
pub mod error;
pub mod metrics;
pub mod registry;
pub mod resegment;
pub mod simulate;
pub mod stream;

pub use corpus::{
    apply_segmentation, load_traces, tokenize, ReadWriteTrace, Segmentation, SentenceView,
    TokenStream, TraceDocument, TraceRecord,
};
pub use error::{Error, Result};
pub use metrics::{
    build_metrics, metric_registry, LatencyMetric, MetricConfig, MetricKind, SentenceScore,
    TauFallback,
};
pub use resegment::{
    edit_distance, resegment, resegment_bruteforce, AlignmentResult, ResegmentConfig,
};
pub use simulate::{
    perturb_segmentation, simulate, simulate_stream, waitk_delays, GammaMode, PolicySpec,
    RandomCorpus, SimCorpus, SimOptions, Simulation,
};
pub use stream::{
    evaluate_concat1, evaluate_sentences, evaluate_stream, localize_delays, strategy_registry,
    Aggregation, EmptySegmentPolicy, EvalOptions, EvaluationStrategy, StreamEvaluation,
    StreamInput,
};
