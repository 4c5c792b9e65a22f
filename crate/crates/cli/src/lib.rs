//! Library side of the `streamlat` command: configuration types, the
//! evaluation report and the three subcommand drivers.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use streamlat::corpus::{read_segmentations, read_sentences, write_segmentations, write_traces};
use streamlat::metrics::SentenceScore;
use streamlat::stream::Warnings;
use streamlat::{
    apply_segmentation, build_metrics, load_traces, metric_registry, perturb_segmentation,
    resegment, simulate, strategy_registry, tokenize, Aggregation, EmptySegmentPolicy, EvalOptions,
    GammaMode, MetricKind, PolicySpec, RandomCorpus, ResegmentConfig, Segmentation, SimCorpus,
    SimOptions, StreamInput, TauFallback, TokenStream, TraceDocument,
};

pub const TOOL: &str = "streamlat";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Exit status for a failed run: 2 for I/O failures, 1 for everything else.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    let io = err.chain().any(|cause| {
        cause.is::<std::io::Error>()
            || matches!(cause.downcast_ref(), Some(streamlat::Error::Io(_)))
    });
    if io {
        2
    } else {
        1
    }
}

fn open(path: &Path) -> anyhow::Result<BufReader<File>> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    Ok(BufReader::new(file))
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut name = prefix.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateConfig {
    pub trace: PathBuf,
    pub src_refs: Option<PathBuf>,
    pub tgt_refs: Option<PathBuf>,
    pub src_seg: Option<PathBuf>,
    pub hyp_seg: Option<PathBuf>,
    pub mode: String,
    pub metrics: Vec<String>,
    pub s: Vec<f64>,
    pub decimals: usize,
    pub per_sentence: bool,
    pub aggregation: Aggregation,
    pub empty_segments: EmptySegmentPolicy,
    pub tau_fallback: TauFallback,
    pub case_sensitive: bool,
}

impl EvaluateConfig {
    pub fn new(trace: impl Into<PathBuf>) -> Self {
        Self {
            trace: trace.into(),
            src_refs: None,
            tgt_refs: None,
            src_seg: None,
            hyp_seg: None,
            mode: "stream".into(),
            metrics: vec!["ap".into(), "al".into(), "dal".into()],
            s: vec![1.0, 0.95],
            decimals: 4,
            per_sentence: false,
            aggregation: Aggregation::Macro,
            empty_segments: EmptySegmentPolicy::Reject,
            tau_fallback: TauFallback::TargetLength,
            case_sensitive: false,
        }
    }

    /// Reads a config file. A full report is accepted too; its echoed
    /// configuration is used.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let value: serde_json::Value = serde_json::from_reader(open(path)?)
            .with_context(|| format!("{} is not valid JSON", path.display()))?;
        let value = match value {
            serde_json::Value::Object(mut map) if map.contains_key("config") => {
                map.remove("config").unwrap()
            }
            other => other,
        };
        serde_json::from_value(value)
            .with_context(|| format!("{}: invalid evaluation config", path.display()))
    }
}

/// Where each side's sentence boundaries came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentationOrigin {
    File,
    References,
    Resegmented,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationInfo {
    pub source: SegmentationOrigin,
    pub hypothesis: SegmentationOrigin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub label: String,
    pub metric: MetricKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s: Option<f64>,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_sentence: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub tool: String,
    pub version: String,
    pub config: EvaluateConfig,
    pub streams: usize,
    pub sentences: usize,
    /// Indices of the sentences that were scored, in pooled input order.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scored: Option<Vec<usize>>,
    pub skipped: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub segmentation: Option<SegmentationInfo>,
    pub metrics: Vec<MetricReport>,
    pub warnings: Warnings,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportFormat {
    #[default]
    Json,
    Tsv,
}

fn round_to(value: f64, decimals: usize) -> f64 {
    if !value.is_finite() {
        return value;
    }
    let factor = 10f64.powi(decimals as i32);
    (value * factor).round() / factor
}

impl Report {
    /// Renders the report, rounding values to the configured decimals.
    pub fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Json => {
                let mut rounded = self.clone();
                let d = self.config.decimals;
                for m in &mut rounded.metrics {
                    m.value = round_to(m.value, d);
                    if let Some(values) = &mut m.per_sentence {
                        values.iter_mut().for_each(|v| *v = round_to(*v, d));
                    }
                }
                let mut out = serde_json::to_string_pretty(&rounded).expect("report serializes");
                out.push('\n');
                out
            }
            ReportFormat::Tsv => self.render_tsv(),
        }
    }

    fn render_tsv(&self) -> String {
        let d = self.config.decimals;
        let fmt = |v: f64| format!("{v:.d$}");
        let mut out = String::from("sentence");
        for m in &self.metrics {
            out.push('\t');
            out.push_str(&m.label);
        }
        out.push('\n');
        if let Some(indices) = &self.scored {
            for (row, index) in indices.iter().enumerate() {
                out.push_str(&index.to_string());
                for m in &self.metrics {
                    out.push('\t');
                    out.push_str(
                        &m.per_sentence
                            .as_ref()
                            .map_or(String::new(), |v| fmt(v[row])),
                    );
                }
                out.push('\n');
            }
        }
        out.push_str("all");
        for m in &self.metrics {
            out.push('\t');
            out.push_str(&fmt(m.value));
        }
        out.push('\n');
        out
    }

    /// Human-readable warnings for stderr.
    pub fn warning_messages(&self) -> Vec<String> {
        let mut out = Vec::new();
        let w = &self.warnings;
        if w.tau_fallbacks > 0 {
            out.push(format!(
                "{} AL sentence(s) never reached the full source; tau set to the hypothesis length",
                w.tau_fallbacks
            ));
        }
        if w.negative_local_delays > 0 {
            out.push(format!(
                "{} local delay(s) were <= 0 after localization",
                w.negative_local_delays
            ));
        }
        if w.empty_segments > 0 {
            out.push(format!(
                "{} sentence(s) with an empty side were skipped",
                w.empty_segments
            ));
        }
        if let Some(seg) = &self.segmentation {
            if seg.source == SegmentationOrigin::Resegmented {
                out.push(
                    "source stream does not match the source references; re-segmented it".into(),
                );
            }
            if seg.hypothesis == SegmentationOrigin::Resegmented {
                out.push("hypothesis stream re-segmented against the target references".into());
            }
        }
        out
    }
}

/// Splits `refs` into consecutive groups whose token counts equal `lens`.
fn partition_refs(refs: &[TokenStream], lens: &[usize]) -> Option<Vec<Range<usize>>> {
    let mut groups = Vec::with_capacity(lens.len());
    let mut next = 0;
    for &len in lens {
        let start = next;
        let mut total = 0;
        while total < len {
            total += refs.get(next)?.len();
            next += 1;
        }
        if total != len {
            return None;
        }
        groups.push(start..next);
    }
    if let Some(last) = groups.last_mut() {
        while next < refs.len() && refs[next].is_empty() {
            next += 1;
            last.end = next;
        }
    }
    (next == refs.len()).then_some(groups)
}

fn ranges_from_counts(counts: impl IntoIterator<Item = usize>) -> Vec<Range<usize>> {
    let mut start = 0;
    counts
        .into_iter()
        .map(|n| {
            let r = start..start + n;
            start += n;
            r
        })
        .collect()
}

fn read_refs(path: &Path) -> anyhow::Result<Vec<TokenStream>> {
    read_sentences(open(path)?).with_context(|| format!("reading {}", path.display()))
}

struct Segmentations {
    src: Vec<Segmentation>,
    hyp: Vec<Segmentation>,
    info: SegmentationInfo,
}

fn derive_segmentations(
    cfg: &EvaluateConfig,
    docs: &[TraceDocument],
) -> anyhow::Result<Segmentations> {
    let reseg = ResegmentConfig {
        case_sensitive: cfg.case_sensitive,
    };
    let src_refs = cfg.src_refs.as_deref().map(read_refs).transpose()?;
    let tgt_refs = cfg.tgt_refs.as_deref().map(read_refs).transpose()?;
    if let (Some(s), Some(t)) = (&src_refs, &tgt_refs) {
        if s.len() != t.len() {
            bail!(
                "source references have {} lines but target references have {}",
                s.len(),
                t.len()
            );
        }
    }

    let src_lens: Vec<usize> = docs.iter().map(|d| d.source.len()).collect();
    let (src, groups, src_origin) = if let Some(path) = &cfg.src_seg {
        let segs = read_segmentations(open(path)?, &src_lens)
            .with_context(|| format!("reading {}", path.display()))?;
        let groups = ranges_from_counts(segs.iter().map(Segmentation::num_segments));
        (segs, groups, SegmentationOrigin::File)
    } else if let Some(refs) = &src_refs {
        match partition_refs(refs, &src_lens) {
            Some(groups) => {
                let segs = groups
                    .iter()
                    .map(|g| {
                        let lens: Vec<usize> = refs[g.clone()].iter().map(TokenStream::len).collect();
                        Segmentation::from_lengths(&lens)
                    })
                    .collect::<streamlat::Result<Vec<_>>>()?;
                (segs, groups, SegmentationOrigin::References)
            }
            None if docs.len() == 1 => {
                let aligned = resegment(&docs[0].source, refs, reseg).context("re-segmenting the source stream")?;
                (vec![aligned.segmentation], ranges_from_counts([refs.len()]), SegmentationOrigin::Resegmented)
            }
            None => bail!(
                "source references do not split into the {} trace streams by token count; pass --src-seg",
                docs.len()
            ),
        }
    } else {
        bail!("mode `{}` needs --src-seg or --src-refs", cfg.mode);
    };

    let hyp_lens: Vec<usize> = docs.iter().map(|d| d.hypothesis.len()).collect();
    let (hyp, hyp_origin) = if let Some(path) = &cfg.hyp_seg {
        let segs = read_segmentations(open(path)?, &hyp_lens)
            .with_context(|| format!("reading {}", path.display()))?;
        (segs, SegmentationOrigin::File)
    } else if let Some(refs) = &tgt_refs {
        let total = groups.last().map_or(0, |g| g.end);
        if refs.len() != total {
            bail!(
                "target references have {} lines for {} source sentences",
                refs.len(),
                total
            );
        }
        let segs = docs
            .iter()
            .zip(&groups)
            .enumerate()
            .map(|(d, (doc, g))| {
                resegment(&doc.hypothesis, &refs[g.clone()], reseg)
                    .map(|a| a.segmentation)
                    .with_context(|| format!("re-segmenting hypothesis of stream {}", d + 1))
            })
            .collect::<anyhow::Result<Vec<_>>>()?;
        (segs, SegmentationOrigin::Resegmented)
    } else {
        bail!("mode `{}` needs --hyp-seg or --tgt-refs", cfg.mode);
    };

    Ok(Segmentations {
        src,
        hyp,
        info: SegmentationInfo {
            source: src_origin,
            hypothesis: hyp_origin,
        },
    })
}

pub fn run_evaluate(cfg: &EvaluateConfig) -> anyhow::Result<Report> {
    let strategy = strategy_registry().build(&cfg.mode, &())?;
    let metrics = build_metrics(&metric_registry(), &cfg.metrics, &cfg.s, cfg.tau_fallback)?;
    let docs = load_traces(open(&cfg.trace)?)
        .with_context(|| format!("reading {}", cfg.trace.display()))?;
    if docs.is_empty() {
        bail!("{} contains no trace records", cfg.trace.display());
    }

    let segs = if strategy.needs_segmentation() {
        Some(derive_segmentations(cfg, &docs)?)
    } else {
        None
    };
    let inputs: Vec<StreamInput<'_>> = docs
        .iter()
        .enumerate()
        .map(|(d, doc)| StreamInput {
            trace: &doc.trace,
            src_seg: segs.as_ref().map(|s| &s.src[d]),
            hyp_seg: segs.as_ref().map(|s| &s.hyp[d]),
        })
        .collect();
    let opts = EvalOptions {
        aggregation: cfg.aggregation,
        empty_segments: cfg.empty_segments,
    };
    let eval = strategy.evaluate(&inputs, &metrics, &opts)?;

    let scored = cfg.per_sentence.then(|| {
        (0..eval.sentences)
            .filter(|i| !eval.skipped.contains(i))
            .collect()
    });
    let metrics = eval
        .metrics
        .into_iter()
        .map(|m| MetricReport {
            label: m.label,
            metric: m.kind,
            s: m.scale,
            value: m.aggregate,
            per_sentence: cfg.per_sentence.then(|| {
                m.per_sentence
                    .iter()
                    .map(|s: &SentenceScore| s.value)
                    .collect()
            }),
        })
        .collect();
    Ok(Report {
        tool: TOOL.into(),
        version: VERSION.into(),
        config: cfg.clone(),
        streams: docs.len(),
        sentences: eval.sentences,
        scored,
        skipped: eval.skipped,
        segmentation: segs.map(|s| s.info),
        metrics,
        warnings: eval.warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GammaSetting {
    /// One writing rate for every sentence.
    Global,
    /// Each sentence's own length ratio.
    PerSentence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CorpusSource {
    File(PathBuf),
    Random(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateConfig {
    pub corpus: CorpusSource,
    pub k: usize,
    pub gamma_mode: GammaSetting,
    /// Global writing rate; the corpus length ratio when unset.
    pub gamma: Option<f64>,
    pub seed: u64,
    /// Perturbs the system's input segmentation by up to this many tokens.
    pub perturb_max_shift: Option<usize>,
    pub noise: f64,
    pub out_prefix: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateOutput {
    pub files: Vec<PathBuf>,
    pub sentences: usize,
    pub source_tokens: usize,
    pub hypothesis_tokens: usize,
}

fn write_lines<'a>(
    path: &Path,
    lines: impl IntoIterator<Item = &'a TokenStream>,
) -> anyhow::Result<()> {
    let mut w = create(path)?;
    for line in lines {
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn run_simulate(cfg: &SimulateConfig) -> anyhow::Result<SimulateOutput> {
    let corpus = match &cfg.corpus {
        CorpusSource::File(path) => {
            SimCorpus::read(open(path)?).with_context(|| format!("reading {}", path.display()))?
        }
        CorpusSource::Random(n) => SimCorpus::random(&RandomCorpus::new(*n, cfg.seed))?,
    };
    let gamma_mode = match cfg.gamma_mode {
        GammaSetting::PerSentence => GammaMode::PerSentence,
        GammaSetting::Global => GammaMode::Global(cfg.gamma.unwrap_or_else(|| {
            corpus.reference_stream().len() as f64 / corpus.source_stream().len() as f64
        })),
    };
    let policy = PolicySpec::new(cfg.k, gamma_mode)?;
    let system_segmentation = cfg
        .perturb_max_shift
        .map(|m| perturb_segmentation(&corpus.source_segmentation(), m, cfg.seed));
    let opts = SimOptions {
        system_segmentation,
        substitution_rate: cfg.noise,
        seed: cfg.seed,
    };
    let sim = simulate(&corpus, &policy, &opts)?;

    let mut files = Vec::new();
    let path = with_suffix(&cfg.out_prefix, ".trace.jsonl");
    let mut w = create(&path)?;
    write_traces(&mut w, std::slice::from_ref(&sim.document))?;
    w.flush()?;
    files.push(path);

    let mut segs = vec![(".src.seg", &sim.src_seg), (".hyp.seg", &sim.hyp_seg)];
    if cfg.perturb_max_shift.is_some() {
        segs.push((".sys.seg", &sim.system_seg));
    }
    for (suffix, seg) in segs {
        let path = with_suffix(&cfg.out_prefix, suffix);
        let mut w = create(&path)?;
        write_segmentations(&mut w, std::slice::from_ref(seg))?;
        w.flush()?;
        files.push(path);
    }

    let path = with_suffix(&cfg.out_prefix, ".src.txt");
    write_lines(&path, corpus.sentences().iter().map(|s| &s.source))?;
    files.push(path);
    let path = with_suffix(&cfg.out_prefix, ".ref.txt");
    write_lines(&path, corpus.sentences().iter().map(|s| &s.reference))?;
    files.push(path);

    Ok(SimulateOutput {
        files,
        sentences: corpus.len(),
        source_tokens: sim.document.source.len(),
        hypothesis_tokens: sim.document.hypothesis.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResegmentRun {
    pub hyp: PathBuf,
    pub refs: PathBuf,
    pub out_prefix: PathBuf,
    pub case_sensitive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSummary {
    pub total_cost: usize,
    pub per_segment_cost: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResegmentOutput {
    pub files: Vec<PathBuf>,
    pub segmentation: Segmentation,
    pub cost: CostSummary,
}

/// Aligns the hypothesis file (all lines form one stream) to the reference
/// sentences and writes `P.seg`, `P.cost.json` and the segmented text `P.txt`.
pub fn run_resegment(cfg: &ResegmentRun) -> anyhow::Result<ResegmentOutput> {
    let mut text = String::new();
    for line in open(&cfg.hyp)?.lines() {
        text.push_str(&line.with_context(|| format!("reading {}", cfg.hyp.display()))?);
        text.push(' ');
    }
    let hyp = tokenize(&text);
    let refs = read_refs(&cfg.refs)?;
    let aligned = resegment(
        &hyp,
        &refs,
        ResegmentConfig {
            case_sensitive: cfg.case_sensitive,
        },
    )?;

    let mut files = Vec::new();
    let path = with_suffix(&cfg.out_prefix, ".seg");
    let mut w = create(&path)?;
    write_segmentations(&mut w, std::slice::from_ref(&aligned.segmentation))?;
    w.flush()?;
    files.push(path);

    let cost = CostSummary {
        total_cost: aligned.total_cost,
        per_segment_cost: aligned.per_segment_cost,
    };
    let path = with_suffix(&cfg.out_prefix, ".cost.json");
    let mut w = create(&path)?;
    serde_json::to_writer_pretty(&mut w, &cost)?;
    w.write_all(b"\n")?;
    w.flush()?;
    files.push(path);

    let path = with_suffix(&cfg.out_prefix, ".txt");
    write_lines(&path, &apply_segmentation(&hyp, &aligned.segmentation)?)?;
    files.push(path);

    Ok(ResegmentOutput {
        files,
        segmentation: aligned.segmentation,
        cost,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(lens: &[usize]) -> Vec<TokenStream> {
        lens.iter()
            .map(|&n| TokenStream::new((0..n).map(|i| format!("t{i}")).collect()).unwrap())
            .collect()
    }

    #[test]
    fn partitions_by_token_count() {
        assert_eq!(
            partition_refs(&toks(&[2, 2, 3]), &[4, 3]),
            Some(vec![0..2, 2..3])
        );
        assert_eq!(partition_refs(&toks(&[2, 2, 3]), &[3, 4]), None);
        assert_eq!(partition_refs(&toks(&[2, 2]), &[2]), None);
        assert_eq!(partition_refs(&toks(&[2, 0]), &[2]), Some(ranges_from_counts([2])));
    }

    #[test]
    fn rounding() {
        assert_eq!(round_to(17.0 / 24.0, 4), 0.7083);
        assert_eq!(round_to(19.0 / 15.0, 4), 1.2667);
        assert!(round_to(f64::NAN, 4).is_nan());
    }

    #[test]
    fn suffixing_keeps_directory() {
        assert_eq!(
            with_suffix(Path::new("out/run"), ".seg"),
            PathBuf::from("out/run.seg")
        );
    }
}
