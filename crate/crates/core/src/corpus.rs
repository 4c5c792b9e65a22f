//! Token streams, segmentations, read/write traces and their file formats.

use std::fmt;
use std::io::{BufRead, Write};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An ordered sequence of whitespace-free, non-empty tokens.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct TokenStream(Vec<String>);

impl TokenStream {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        for (i, tok) in tokens.iter().enumerate() {
            if tok.is_empty() {
                return Err(Error::validation(format!("token {i} is empty")));
            }
            if tok.chars().any(char::is_whitespace) {
                return Err(Error::validation(format!(
                    "token {i} ({tok:?}) contains whitespace"
                )));
            }
        }
        Ok(Self(tokens))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    /// Concatenates streams in order.
    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a TokenStream>) -> TokenStream {
        TokenStream(
            parts
                .into_iter()
                .flat_map(|p| p.0.iter().cloned())
                .collect(),
        )
    }

    pub(crate) fn slice(&self, range: Range<usize>) -> TokenStream {
        TokenStream(self.0[range].to_vec())
    }

    pub(crate) fn from_trusted(tokens: Vec<String>) -> Self {
        debug_assert!(TokenStream::new(tokens.clone()).is_ok());
        Self(tokens)
    }
}

impl TryFrom<Vec<String>> for TokenStream {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        TokenStream::new(tokens)
    }
}

impl From<TokenStream> for Vec<String> {
    fn from(stream: TokenStream) -> Self {
        stream.0
    }
}

impl fmt::Display for TokenStream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join(" "))
    }
}

/// Splits on runs of unicode whitespace. No other normalization is applied.
pub fn tokenize(text: &str) -> TokenStream {
    TokenStream(text.split_whitespace().map(str::to_owned).collect())
}

/// Sentence boundaries over a stream of `stream_len` tokens.
///
/// `boundaries` holds exclusive segment ends; the last one equals the stream
/// length. A strict segmentation has non-empty segments. A permissive one
/// (produced by re-segmentation) may contain empty segments.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Segmentation {
    boundaries: Vec<usize>,
    stream_len: usize,
}

impl Segmentation {
    /// Builds a segmentation with strictly increasing boundaries.
    pub fn new(boundaries: Vec<usize>, stream_len: usize) -> Result<Self> {
        let seg = Self::permissive(boundaries, stream_len)?;
        if let Some(n) = seg.first_empty() {
            return Err(Error::validation(format!(
                "segment {} is empty (boundaries must be strictly increasing)",
                n + 1
            )));
        }
        Ok(seg)
    }

    /// Builds a segmentation whose boundaries need only be non-decreasing.
    pub fn permissive(boundaries: Vec<usize>, stream_len: usize) -> Result<Self> {
        let mut prev = 0;
        for (i, &b) in boundaries.iter().enumerate() {
            if b > stream_len {
                return Err(Error::validation(format!(
                    "boundary {b} at position {} exceeds stream length {stream_len}",
                    i + 1
                )));
            }
            if b < prev {
                return Err(Error::validation(format!(
                    "boundaries decrease at position {} ({prev} > {b})",
                    i + 1
                )));
            }
            prev = b;
        }
        match boundaries.last() {
            Some(&last) if last != stream_len => Err(Error::validation(format!(
                "last boundary {last} does not equal stream length {stream_len}"
            ))),
            None if stream_len > 0 => Err(Error::validation(format!(
                "no boundaries given for a stream of {stream_len} tokens"
            ))),
            _ => Ok(Self {
                boundaries,
                stream_len,
            }),
        }
    }

    /// Segmentation with the given segment lengths.
    pub fn from_lengths(lengths: &[usize]) -> Result<Self> {
        let boundaries: Vec<usize> = lengths
            .iter()
            .scan(0, |acc, &l| {
                *acc += l;
                Some(*acc)
            })
            .collect();
        let total = boundaries.last().copied().unwrap_or(0);
        Self::permissive(boundaries, total)
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    pub fn stream_len(&self) -> usize {
        self.stream_len
    }

    pub fn num_segments(&self) -> usize {
        self.boundaries.len()
    }

    /// Half-open token ranges, one per segment.
    pub fn ranges(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        let starts = std::iter::once(0).chain(self.boundaries.iter().copied());
        starts
            .zip(self.boundaries.iter().copied())
            .map(|(s, e)| s..e)
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.ranges().map(|r| r.len()).collect()
    }

    pub fn has_empty(&self) -> bool {
        self.first_empty().is_some()
    }

    fn first_empty(&self) -> Option<usize> {
        self.ranges().position(|r| r.is_empty())
    }

    /// Parses one line of a segmentation file.
    pub fn parse_line(line: &str, stream_len: usize) -> Result<Self> {
        let boundaries = line
            .split_whitespace()
            .map(|t| {
                t.parse::<usize>()
                    .map_err(|e| Error::validation(format!("bad boundary {t:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::permissive(boundaries, stream_len)
    }
}

impl fmt::Display for Segmentation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.boundaries.iter().map(usize::to_string).collect();
        f.write_str(&parts.join(" "))
    }
}

/// Splits `stream` into the segments described by `seg`.
pub fn apply_segmentation(stream: &TokenStream, seg: &Segmentation) -> Result<Vec<TokenStream>> {
    if seg.stream_len() != stream.len() {
        return Err(Error::validation(format!(
            "segmentation covers {} tokens but the stream has {}",
            seg.stream_len(),
            stream.len()
        )));
    }
    Ok(seg.ranges().map(|r| stream.slice(r)).collect())
}

/// Global read counts: `delays[j]` source tokens had been read when
/// hypothesis token `j` was written.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReadWriteTrace {
    delays: Vec<usize>,
    src_len: usize,
}

impl ReadWriteTrace {
    pub fn new(delays: Vec<usize>, src_len: usize) -> Result<Self> {
        let mut prev = 0;
        for (j, &d) in delays.iter().enumerate() {
            if d == 0 {
                return Err(Error::validation(format!(
                    "delay {} is 0; at least one source token must be read before writing",
                    j + 1
                )));
            }
            if d > src_len {
                return Err(Error::validation(format!(
                    "delay {} is {d}, more than the {src_len} source tokens",
                    j + 1
                )));
            }
            if d < prev {
                return Err(Error::validation(format!(
                    "delays decrease at position {} ({prev} > {d})",
                    j + 1
                )));
            }
            prev = d;
        }
        Ok(Self { delays, src_len })
    }

    pub fn delays(&self) -> &[usize] {
        &self.delays
    }

    pub fn src_len(&self) -> usize {
        self.src_len
    }

    pub fn tgt_len(&self) -> usize {
        self.delays.len()
    }
}

/// One source/hypothesis pair with local read counts; the unit consumed by
/// the sentence-level metric formulas.
///
/// Local delays may be non-positive or exceed `src_len` after stream
/// localization.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceView {
    src_len: usize,
    delays: Vec<i64>,
    gamma: f64,
}

impl SentenceView {
    pub fn new(src_len: usize, delays: Vec<i64>) -> Result<Self> {
        if src_len == 0 {
            return Err(Error::validation("sentence has an empty source"));
        }
        if delays.is_empty() {
            return Err(Error::validation("sentence has an empty target"));
        }
        if delays.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::validation("sentence delays are not non-decreasing"));
        }
        let gamma = crate::metrics::gamma(src_len, delays.len())?;
        Ok(Self {
            src_len,
            delays,
            gamma,
        })
    }

    pub fn src_len(&self) -> usize {
        self.src_len
    }

    pub fn tgt_len(&self) -> usize {
        self.delays.len()
    }

    pub fn delays(&self) -> &[i64] {
        &self.delays
    }

    /// Target-to-source length ratio.
    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

/// One line of the trace JSONL format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    pub source_stream: String,
    pub hypothesis_stream: String,
    pub delays: Vec<usize>,
}

/// A validated stream: source and hypothesis tokens with the global trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceDocument {
    pub source: TokenStream,
    pub hypothesis: TokenStream,
    pub trace: ReadWriteTrace,
}

impl TraceDocument {
    pub fn new(source: TokenStream, hypothesis: TokenStream, delays: Vec<usize>) -> Result<Self> {
        if delays.len() != hypothesis.len() {
            return Err(Error::validation(format!(
                "{} delays for {} hypothesis tokens",
                delays.len(),
                hypothesis.len()
            )));
        }
        let trace = ReadWriteTrace::new(delays, source.len())?;
        Ok(Self {
            source,
            hypothesis,
            trace,
        })
    }

    pub fn from_record(record: &TraceRecord) -> Result<Self> {
        Self::new(
            tokenize(&record.source_stream),
            tokenize(&record.hypothesis_stream),
            record.delays.clone(),
        )
    }

    pub fn to_record(&self) -> TraceRecord {
        TraceRecord {
            source_stream: self.source.to_string(),
            hypothesis_stream: self.hypothesis.to_string(),
            delays: self.trace.delays().to_vec(),
        }
    }
}

/// Reads a trace JSONL stream. Blank lines are skipped.
pub fn load_traces<R: BufRead>(reader: R) -> Result<Vec<TraceDocument>> {
    let mut docs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TraceRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        docs.push(TraceDocument::from_record(&record).map_err(|e| e.at_line(i + 1))?);
    }
    Ok(docs)
}

pub fn write_traces<W: Write>(mut writer: W, docs: &[TraceDocument]) -> Result<()> {
    for doc in docs {
        serde_json::to_writer(&mut writer, &doc.to_record()).map_err(std::io::Error::from)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a sentence-per-line file. Every line is one sentence, blank lines
/// included (as empty streams).
pub fn read_sentences<R: BufRead>(reader: R) -> Result<Vec<TokenStream>> {
    reader.lines().map(|line| Ok(tokenize(&line?))).collect()
}

/// Reads a segmentation file, one line per stream, validating each line
/// against the corresponding stream length.
pub fn read_segmentations<R: BufRead>(
    reader: R,
    stream_lens: &[usize],
) -> Result<Vec<Segmentation>> {
    let lines = reader.lines().collect::<std::io::Result<Vec<_>>>()?;
    if lines.len() != stream_lens.len() {
        return Err(Error::validation(format!(
            "segmentation file has {} lines for {} streams",
            lines.len(),
            stream_lens.len()
        )));
    }
    lines
        .iter()
        .zip(stream_lens)
        .enumerate()
        .map(|(i, (line, &len))| Segmentation::parse_line(line, len).map_err(|e| e.at_line(i + 1)))
        .collect()
}

pub fn write_segmentations<W: Write>(mut writer: W, segs: &[Segmentation]) -> Result<()> {
    for seg in segs {
        writeln!(writer, "{seg}")?;
    }
    Ok(())
}
