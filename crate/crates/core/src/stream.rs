//! Stream-level evaluation.
//!
//! A stream is one read/write trace over a concatenated source. Three
//! evaluation modes are registered:
//!
//! * `stream`: global delays are converted to each sentence's local frame
//!   (`g_n(i) = G(i + |y_1..n-1|) - |x_1..n-1|`) and DAL's ratcheted delay
//!   is carried across sentence boundaries.
//! * `concat1`: the whole stream is treated as a single sentence pair.
//! * `sentence`: local views are scored independently, with no carry.
//!
//! Sentences from several streams are pooled before aggregation; the carry
//! resets at every stream start.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{ReadWriteTrace, Segmentation, SentenceView};
use crate::error::{Error, Result};
use crate::metrics::{LatencyMetric, MetricKind, SentenceScore};
use crate::registry::Registry;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// Uniform mean of sentence values.
    #[default]
    Macro,
    /// Pooled cost sum over pooled normalizers.
    Micro,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmptySegmentPolicy {
    #[default]
    Reject,
    /// Leave the sentence out of the aggregate and count it.
    Skip,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub aggregation: Aggregation,
    pub empty_segments: EmptySegmentPolicy,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Warnings {
    /// AL sentences whose delays never reached the full source.
    pub tau_fallbacks: usize,
    /// Local delays `<= 0` produced by localization.
    pub negative_local_delays: usize,
    pub empty_segments: usize,
}

impl Warnings {
    fn absorb(&mut self, other: &Warnings) {
        self.tau_fallbacks += other.tau_fallbacks;
        self.negative_local_delays += other.negative_local_delays;
        self.empty_segments += other.empty_segments;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricEvaluation {
    pub label: String,
    pub kind: MetricKind,
    pub scale: Option<f64>,
    /// One score per evaluated (non-skipped) sentence, in input order.
    pub per_sentence: Vec<SentenceScore>,
    pub aggregate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamEvaluation {
    pub mode: String,
    pub aggregation: Aggregation,
    /// Sentences in the governing segmentation(s), skipped ones included.
    pub sentences: usize,
    /// Pooled indices of sentences left out because a side was empty.
    pub skipped: Vec<usize>,
    pub metrics: Vec<MetricEvaluation>,
    pub warnings: Warnings,
}

impl StreamEvaluation {
    /// Looks up a metric by kind and, for DAL, by scale.
    pub fn metric(&self, kind: MetricKind, scale: Option<f64>) -> Option<&MetricEvaluation> {
        self.metrics
            .iter()
            .find(|m| m.kind == kind && (scale.is_none() || m.scale == scale))
    }

    pub fn aggregate(&self, kind: MetricKind, scale: Option<f64>) -> Option<f64> {
        self.metric(kind, scale).map(|m| m.aggregate)
    }
}

/// One sentence after localization.
#[derive(Debug, Clone, PartialEq)]
pub enum LocalSentence {
    View(SentenceView),
    /// A sentence with an empty source or hypothesis side.
    Empty {
        src_len: usize,
        tgt_len: usize,
    },
}

/// Converts the global trace into per-sentence local views. Empty segments
/// on either side come back as [`LocalSentence::Empty`].
pub fn localize(
    trace: &ReadWriteTrace,
    src_seg: &Segmentation,
    hyp_seg: &Segmentation,
) -> Result<Vec<LocalSentence>> {
    if src_seg.num_segments() != hyp_seg.num_segments() {
        return Err(Error::validation(format!(
            "source segmentation has {} segments but hypothesis segmentation has {}",
            src_seg.num_segments(),
            hyp_seg.num_segments()
        )));
    }
    if src_seg.stream_len() != trace.src_len() {
        return Err(Error::validation(format!(
            "source segmentation covers {} tokens, trace reads {}",
            src_seg.stream_len(),
            trace.src_len()
        )));
    }
    if hyp_seg.stream_len() != trace.tgt_len() {
        return Err(Error::validation(format!(
            "hypothesis segmentation covers {} tokens, trace writes {}",
            hyp_seg.stream_len(),
            trace.tgt_len()
        )));
    }
    src_seg
        .ranges()
        .zip(hyp_seg.ranges())
        .map(|(src, hyp)| {
            if src.is_empty() || hyp.is_empty() {
                return Ok(LocalSentence::Empty {
                    src_len: src.len(),
                    tgt_len: hyp.len(),
                });
            }
            let offset = src.start as i64;
            let delays = trace.delays()[hyp.clone()]
                .iter()
                .map(|&d| d as i64 - offset)
                .collect();
            SentenceView::new(src.len(), delays).map(LocalSentence::View)
        })
        .collect()
}

/// Like [`localize`] but requires every segment to be non-empty.
pub fn localize_delays(
    trace: &ReadWriteTrace,
    src_seg: &Segmentation,
    hyp_seg: &Segmentation,
) -> Result<Vec<SentenceView>> {
    localize(trace, src_seg, hyp_seg)?
        .into_iter()
        .enumerate()
        .map(|(n, s)| match s {
            LocalSentence::View(v) => Ok(v),
            LocalSentence::Empty { src_len, tgt_len } => Err(empty_error(n, src_len, tgt_len)),
        })
        .collect()
}

fn empty_error(n: usize, src_len: usize, tgt_len: usize) -> Error {
    Error::validation(format!(
        "sentence {} has an empty segment (|x|={src_len}, |y|={tgt_len})",
        n + 1
    ))
}

/// Scores one stream's sentences in order. With `carry`, each metric's
/// handoff is threaded into the next sentence; skipped sentences shift it by
/// their source length.
fn score_stream(
    sentences: &[LocalSentence],
    metrics: &[Box<dyn LatencyMetric>],
    carry: bool,
    policy: EmptySegmentPolicy,
) -> Result<(Vec<Vec<SentenceScore>>, Vec<usize>, Warnings)> {
    let mut warnings = Warnings::default();
    let mut skipped = Vec::new();
    for (n, s) in sentences.iter().enumerate() {
        match s {
            LocalSentence::View(v) => {
                warnings.negative_local_delays += v.delays().iter().filter(|&&d| d <= 0).count();
            }
            LocalSentence::Empty { src_len, tgt_len } => {
                if policy == EmptySegmentPolicy::Reject {
                    return Err(empty_error(n, *src_len, *tgt_len));
                }
                warnings.empty_segments += 1;
                skipped.push(n);
            }
        }
    }

    let mut per_metric = Vec::with_capacity(metrics.len());
    for metric in metrics {
        let mut scores = Vec::with_capacity(sentences.len());
        let mut handoff: Option<f64> = None;
        for s in sentences {
            match s {
                LocalSentence::View(v) => {
                    let out = metric.score(v, if carry { handoff } else { None })?;
                    if out.tau_fallback {
                        warnings.tau_fallbacks += 1;
                    }
                    handoff = out.handoff;
                    scores.push(out.score);
                }
                LocalSentence::Empty { src_len, .. } => {
                    handoff = handoff.map(|h| h - *src_len as f64);
                }
            }
        }
        per_metric.push(scores);
    }
    Ok((per_metric, skipped, warnings))
}

fn aggregate(scores: &[SentenceScore], aggregation: Aggregation) -> f64 {
    if scores.is_empty() {
        return f64::NAN;
    }
    match aggregation {
        Aggregation::Macro => scores.iter().map(|s| s.value).sum::<f64>() / scores.len() as f64,
        Aggregation::Micro => {
            let num: f64 = scores.iter().map(SentenceScore::cost_sum).sum();
            let den: f64 = scores.iter().map(|s| s.normalizer).sum();
            num / den
        }
    }
}

/// Scores streams of local sentences and pools them into one evaluation.
fn evaluate_localized(
    mode: &str,
    streams: &[Vec<LocalSentence>],
    metrics: &[Box<dyn LatencyMetric>],
    carry: bool,
    opts: &EvalOptions,
) -> Result<StreamEvaluation> {
    let scored = streams
        .par_iter()
        .map(|s| score_stream(s, metrics, carry, opts.empty_segments))
        .collect::<Result<Vec<_>>>()?;

    let mut per_metric: Vec<Vec<SentenceScore>> = vec![Vec::new(); metrics.len()];
    let mut skipped = Vec::new();
    let mut warnings = Warnings::default();
    let mut offset = 0;
    for ((scores, skip, w), stream) in scored.into_iter().zip(streams) {
        for (all, mut these) in per_metric.iter_mut().zip(scores) {
            all.append(&mut these);
        }
        skipped.extend(skip.into_iter().map(|n| n + offset));
        warnings.absorb(&w);
        offset += stream.len();
    }

    let metrics = metrics
        .iter()
        .zip(per_metric)
        .map(|(m, per_sentence)| MetricEvaluation {
            label: m.label(),
            kind: m.kind(),
            scale: m.scale(),
            aggregate: aggregate(&per_sentence, opts.aggregation),
            per_sentence,
        })
        .collect();
    Ok(StreamEvaluation {
        mode: mode.to_string(),
        aggregation: opts.aggregation,
        sentences: offset,
        skipped,
        metrics,
        warnings,
    })
}

/// Stream-level evaluation of one trace under the given segmentations.
pub fn evaluate_stream(
    trace: &ReadWriteTrace,
    src_seg: &Segmentation,
    hyp_seg: &Segmentation,
    metrics: &[Box<dyn LatencyMetric>],
    opts: &EvalOptions,
) -> Result<StreamEvaluation> {
    let sentences = localize(trace, src_seg, hyp_seg)?;
    evaluate_localized(StreamLevel.name(), &[sentences], metrics, true, opts)
}

/// The whole trace as one sentence pair with a single global length ratio.
pub fn evaluate_concat1(
    trace: &ReadWriteTrace,
    metrics: &[Box<dyn LatencyMetric>],
    opts: &EvalOptions,
) -> Result<StreamEvaluation> {
    let sentence = concat1_sentence(trace)?;
    evaluate_localized(Concat1.name(), &[vec![sentence]], metrics, false, opts)
}

fn concat1_sentence(trace: &ReadWriteTrace) -> Result<LocalSentence> {
    if trace.tgt_len() == 0 || trace.src_len() == 0 {
        return Ok(LocalSentence::Empty {
            src_len: trace.src_len(),
            tgt_len: trace.tgt_len(),
        });
    }
    let delays = trace.delays().iter().map(|&d| d as i64).collect();
    SentenceView::new(trace.src_len(), delays).map(LocalSentence::View)
}

/// Conventional evaluation: every view scored on its own.
pub fn evaluate_sentences(
    views: &[SentenceView],
    metrics: &[Box<dyn LatencyMetric>],
    opts: &EvalOptions,
) -> Result<StreamEvaluation> {
    let sentences: Vec<LocalSentence> = views.iter().cloned().map(LocalSentence::View).collect();
    evaluate_localized(
        IndependentSentences.name(),
        &[sentences],
        metrics,
        false,
        opts,
    )
}

/// One stream handed to an [`EvaluationStrategy`].
#[derive(Debug, Clone, Copy)]
pub struct StreamInput<'a> {
    pub trace: &'a ReadWriteTrace,
    /// Reference segmentation of the source stream.
    pub src_seg: Option<&'a Segmentation>,
    /// Segmentation of the hypothesis aligned with `src_seg`.
    pub hyp_seg: Option<&'a Segmentation>,
}

impl<'a> StreamInput<'a> {
    fn segmentations(&self, mode: &str) -> Result<(&'a Segmentation, &'a Segmentation)> {
        match (self.src_seg, self.hyp_seg) {
            (Some(src), Some(hyp)) => Ok((src, hyp)),
            _ => Err(Error::validation(format!(
                "mode `{mode}` needs source and hypothesis segmentations"
            ))),
        }
    }
}

/// An evaluation mode selectable by name.
pub trait EvaluationStrategy: Send + Sync {
    fn name(&self) -> &'static str;

    /// Whether the mode consumes source/hypothesis segmentations.
    fn needs_segmentation(&self) -> bool;

    fn evaluate(
        &self,
        streams: &[StreamInput<'_>],
        metrics: &[Box<dyn LatencyMetric>],
        opts: &EvalOptions,
    ) -> Result<StreamEvaluation>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct StreamLevel;

impl EvaluationStrategy for StreamLevel {
    fn name(&self) -> &'static str {
        "stream"
    }

    fn needs_segmentation(&self) -> bool {
        true
    }

    fn evaluate(
        &self,
        streams: &[StreamInput<'_>],
        metrics: &[Box<dyn LatencyMetric>],
        opts: &EvalOptions,
    ) -> Result<StreamEvaluation> {
        let localized = localize_all(self.name(), streams)?;
        evaluate_localized(self.name(), &localized, metrics, true, opts)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IndependentSentences;

impl EvaluationStrategy for IndependentSentences {
    fn name(&self) -> &'static str {
        "sentence"
    }

    fn needs_segmentation(&self) -> bool {
        true
    }

    fn evaluate(
        &self,
        streams: &[StreamInput<'_>],
        metrics: &[Box<dyn LatencyMetric>],
        opts: &EvalOptions,
    ) -> Result<StreamEvaluation> {
        let localized = localize_all(self.name(), streams)?;
        evaluate_localized(self.name(), &localized, metrics, false, opts)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Concat1;

impl EvaluationStrategy for Concat1 {
    fn name(&self) -> &'static str {
        "concat1"
    }

    fn needs_segmentation(&self) -> bool {
        false
    }

    fn evaluate(
        &self,
        streams: &[StreamInput<'_>],
        metrics: &[Box<dyn LatencyMetric>],
        opts: &EvalOptions,
    ) -> Result<StreamEvaluation> {
        let sentences = streams
            .iter()
            .map(|s| concat1_sentence(s.trace).map(|x| vec![x]))
            .collect::<Result<Vec<_>>>()?;
        evaluate_localized(self.name(), &sentences, metrics, false, opts)
    }
}

fn localize_all(mode: &str, streams: &[StreamInput<'_>]) -> Result<Vec<Vec<LocalSentence>>> {
    streams
        .iter()
        .enumerate()
        .map(|(d, s)| {
            let (src, hyp) = s.segmentations(mode)?;
            localize(s.trace, src, hyp)
                .map_err(|e| Error::validation(format!("stream {}: {e}", d + 1)))
        })
        .collect()
}

pub type StrategyRegistry = Registry<(), dyn EvaluationStrategy>;

/// Registry holding `stream`, `concat1` and `sentence`.
pub fn strategy_registry() -> StrategyRegistry {
    let mut registry = StrategyRegistry::new("mode");
    registry
        .register("stream", |_| Ok(Box::new(StreamLevel)))
        .register("concat1", |_| Ok(Box::new(Concat1)))
        .register("sentence", |_| Ok(Box::new(IndependentSentences)));
    registry
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;

    use super::*;
    use crate::metrics::{build_metrics, metric_registry, TauFallback};

    fn metrics(scales: &[f64]) -> Vec<Box<dyn LatencyMetric>> {
        let names: Vec<String> = ["ap", "al", "dal"].iter().map(|s| s.to_string()).collect();
        build_metrics(
            &metric_registry(),
            &names,
            scales,
            TauFallback::TargetLength,
        )
        .unwrap()
    }

    fn seg(b: &[usize]) -> Segmentation {
        Segmentation::permissive(b.to_vec(), *b.last().unwrap_or(&0)).unwrap()
    }

    fn table_trace() -> ReadWriteTrace {
        ReadWriteTrace::new(vec![1, 2, 3, 3, 4, 4], 4).unwrap()
    }

    #[test]
    fn localize_table_two() {
        let views = localize_delays(&table_trace(), &seg(&[2, 4]), &seg(&[2, 6])).unwrap();
        assert_eq!(views[0].delays(), [1, 2]);
        assert_eq!(views[1].delays(), [1, 1, 2, 2]);
        assert_eq!(views[1].gamma(), 2.0);
    }

    #[test]
    fn localize_single_sentence_is_identity() {
        let views = localize_delays(&table_trace(), &seg(&[4]), &seg(&[6])).unwrap();
        assert_eq!(views[0].delays(), [1, 2, 3, 3, 4, 4]);
    }

    #[test]
    fn localize_over_read() {
        let trace = ReadWriteTrace::new(vec![3, 3, 4], 4).unwrap();
        let views = localize_delays(&trace, &seg(&[2, 4]), &seg(&[1, 3])).unwrap();
        assert_eq!(views[0].delays(), [3]);
        assert_eq!(views[1].delays(), [1, 2]);
    }

    #[test]
    fn localize_rejects_count_mismatch() {
        assert!(localize_delays(&table_trace(), &seg(&[2, 4]), &seg(&[6])).is_err());
        assert!(localize_delays(&table_trace(), &seg(&[2, 3]), &seg(&[2, 6])).is_err());
    }

    #[test]
    fn stream_table_two() {
        let ev = evaluate_stream(
            &table_trace(),
            &seg(&[2, 4]),
            &seg(&[2, 6]),
            &metrics(&[1.0]),
            &EvalOptions::default(),
        )
        .unwrap();
        assert_relative_eq!(
            ev.aggregate(MetricKind::Ap, None).unwrap(),
            0.75,
            epsilon = 1e-12
        );
        assert_relative_eq!(
            ev.aggregate(MetricKind::Al, None).unwrap(),
            11.0 / 12.0,
            epsilon = 1e-12
        );
        assert_relative_eq!(
            ev.aggregate(MetricKind::Dal, None).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        assert_eq!(ev.sentences, 2);
    }

    #[test]
    fn carry_ratchets_second_sentence() {
        // sentence 1 g=[2,2], sentence 2 g=[1,2], both |x|=2, gamma=1
        let trace = ReadWriteTrace::new(vec![2, 2, 3, 4], 4).unwrap();
        let (src, hyp) = (seg(&[2, 4]), seg(&[2, 4]));
        let ev = evaluate_stream(
            &trace,
            &src,
            &hyp,
            &metrics(&[1.0, 0.0]),
            &EvalOptions::default(),
        )
        .unwrap();
        let full = ev.metric(MetricKind::Dal, Some(1.0)).unwrap();
        assert_relative_eq!(full.per_sentence[1].value, 2.0, epsilon = 1e-12);
        // s = 0: g'_1 = [2, 2], carry 2 - 2 + 0 = 0 < 1, no ratchet
        let relaxed = ev.metric(MetricKind::Dal, Some(0.0)).unwrap();
        assert_relative_eq!(relaxed.per_sentence[0].value, 1.5, epsilon = 1e-12);
        assert_relative_eq!(relaxed.per_sentence[1].value, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn concat1_table_one() {
        let ev =
            evaluate_concat1(&table_trace(), &metrics(&[1.0]), &EvalOptions::default()).unwrap();
        assert_relative_eq!(
            ev.aggregate(MetricKind::Ap, None).unwrap(),
            17.0 / 24.0,
            epsilon = 1e-12
        );
        assert_relative_eq!(
            ev.aggregate(MetricKind::Al, None).unwrap(),
            19.0 / 15.0,
            epsilon = 1e-12
        );
        assert_relative_eq!(
            ev.aggregate(MetricKind::Dal, None).unwrap(),
            1.5,
            epsilon = 1e-12
        );
    }

    #[test]
    fn sentences_match_stream_on_table() {
        let m = metrics(&[1.0]);
        let views = localize_delays(&table_trace(), &seg(&[2, 4]), &seg(&[2, 6])).unwrap();
        let ind = evaluate_sentences(&views, &m, &EvalOptions::default()).unwrap();
        let st = evaluate_stream(
            &table_trace(),
            &seg(&[2, 4]),
            &seg(&[2, 6]),
            &m,
            &EvalOptions::default(),
        )
        .unwrap();
        for (a, b) in ind.metrics.iter().zip(&st.metrics) {
            assert_eq!(a.per_sentence, b.per_sentence);
        }
    }

    #[test]
    fn empty_segments_rejected_or_skipped() {
        let trace = ReadWriteTrace::new(vec![1, 2, 4, 4], 4).unwrap();
        let (src, hyp) = (seg(&[2, 3, 4]), seg(&[2, 2, 4]));
        let m = metrics(&[1.0]);
        assert!(evaluate_stream(&trace, &src, &hyp, &m, &EvalOptions::default()).is_err());
        let opts = EvalOptions {
            empty_segments: EmptySegmentPolicy::Skip,
            ..EvalOptions::default()
        };
        let ev = evaluate_stream(&trace, &src, &hyp, &m, &opts).unwrap();
        assert_eq!(ev.skipped, vec![1]);
        assert_eq!(ev.warnings.empty_segments, 1);
        assert_eq!(ev.sentences, 3);
        let dal = ev.metric(MetricKind::Dal, None).unwrap();
        assert_eq!(dal.per_sentence.len(), 2);
        // third sentence: local g = [1, 1], gamma 2; carry 2 + 1 - 2 - 1 = 0 does not bind
        assert_eq!(dal.per_sentence[1].costs, vec![1.0, 1.0]);
    }

    #[test]
    fn micro_aggregation_pools_costs() {
        let opts = EvalOptions {
            aggregation: Aggregation::Micro,
            ..EvalOptions::default()
        };
        let ev = evaluate_stream(
            &table_trace(),
            &seg(&[2, 4]),
            &seg(&[2, 6]),
            &metrics(&[1.0]),
            &opts,
        )
        .unwrap();
        // AL: (1 + 1 + 1 + 0.5 + 1) / (2 + 3)
        assert_relative_eq!(
            ev.aggregate(MetricKind::Al, None).unwrap(),
            0.9,
            epsilon = 1e-12
        );
        // AP: (3 + 6) / (4 + 8)
        assert_relative_eq!(
            ev.aggregate(MetricKind::Ap, None).unwrap(),
            0.75,
            epsilon = 1e-12
        );
    }

    #[test]
    fn strategies_by_name() {
        let reg = strategy_registry();
        let trace = table_trace();
        let (src, hyp) = (seg(&[2, 4]), seg(&[2, 6]));
        let input = StreamInput {
            trace: &trace,
            src_seg: Some(&src),
            hyp_seg: Some(&hyp),
        };
        let m = metrics(&[1.0]);
        for name in ["stream", "sentence", "concat1"] {
            let strategy = reg.build(name, &()).unwrap();
            let ev = strategy
                .evaluate(&[input], &m, &EvalOptions::default())
                .unwrap();
            assert_eq!(ev.mode, name);
        }
        let bare = StreamInput {
            trace: &trace,
            src_seg: None,
            hyp_seg: None,
        };
        assert!(reg
            .build("stream", &())
            .unwrap()
            .evaluate(&[bare], &m, &EvalOptions::default())
            .is_err());
        assert!(reg
            .build("concat1", &())
            .unwrap()
            .evaluate(&[bare], &m, &EvalOptions::default())
            .is_ok());
    }

    #[test]
    fn streams_pool_and_reset_carry() {
        let trace = ReadWriteTrace::new(vec![2, 2, 3, 4], 4).unwrap();
        let (src, hyp) = (seg(&[2, 4]), seg(&[2, 4]));
        let one = StreamInput {
            trace: &trace,
            src_seg: Some(&src),
            hyp_seg: Some(&hyp),
        };
        let m = metrics(&[1.0]);
        let ev = StreamLevel
            .evaluate(&[one, one], &m, &EvalOptions::default())
            .unwrap();
        assert_eq!(ev.sentences, 4);
        let dal = ev.metric(MetricKind::Dal, None).unwrap();
        let values: Vec<f64> = dal.per_sentence.iter().map(|s| s.value).collect();
        assert_eq!(values, vec![2.0, 2.0, 2.0, 2.0]);
    }
}
