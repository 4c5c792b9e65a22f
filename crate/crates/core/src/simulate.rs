//! Wait-k simulation over concatenated corpora.
//!
//! Each system segment is translated by a sentence-level wait-k policy with
//! catch-up, `g(i) = min(floor(k + (i-1)/gamma), |x|)`. The hypothesis is
//! the reference translation (oracle output), optionally with random token
//! substitutions. The writing rate is either one global ratio or the true
//! per-sentence ratio. Local delays are shifted by the source prefix length
//! into a single global trace.
//!
//! The system may use its own input segmentation. Reference target tokens
//! are then distributed over system segments by a monotone source alignment
//! (target `i` of a sentence with lengths `S`, `T` is aligned to source
//! token `ceil(i*S/T)`), so the hypothesis text is unchanged and only the
//! timing follows the system's segments.
//!
//! Randomness comes from ChaCha8 seeded with a `u64`, which is stable across
//! platforms.

use std::io::BufRead;
use std::ops::RangeInclusive;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, Segmentation, TokenStream, TraceDocument};
use crate::error::{Error, Result};

/// Guards `floor` against ratios like 7/3 that are not exact in binary.
const FLOOR_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GammaMode {
    /// One writing rate for every sentence.
    Global(f64),
    /// Each sentence's own target/source ratio.
    PerSentence,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub k: usize,
    pub gamma_mode: GammaMode,
}

impl PolicySpec {
    pub fn new(k: usize, gamma_mode: GammaMode) -> Result<Self> {
        if k == 0 {
            return Err(Error::validation("wait-k needs k >= 1"));
        }
        if let GammaMode::Global(g) = gamma_mode {
            if !(g.is_finite() && g > 0.0) {
                return Err(Error::validation(format!(
                    "writing rate must be positive, got {g}"
                )));
            }
        }
        Ok(Self { k, gamma_mode })
    }
}

/// Local read counts of a wait-k policy with catch-up.
pub fn waitk_delays(k: usize, gamma: f64, src_len: usize, tgt_len: usize) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::validation("wait-k needs k >= 1"));
    }
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::validation(format!(
            "writing rate must be positive, got {gamma}"
        )));
    }
    if src_len == 0 {
        return Err(Error::validation("wait-k needs a non-empty source"));
    }
    Ok((0..tgt_len)
        .map(|i| {
            let reads = (k as f64 + i as f64 / gamma + FLOOR_EPS).floor() as usize;
            reads.min(src_len)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimSentence {
    pub source: TokenStream,
    pub reference: TokenStream,
}

impl SimSentence {
    pub fn gamma(&self) -> f64 {
        self.reference.len() as f64 / self.source.len() as f64
    }
}

/// Parameters of the seeded random corpus generator.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomCorpus {
    pub sentences: usize,
    pub src_len: RangeInclusive<usize>,
    /// Length ratios are drawn uniformly from `gamma.0..=gamma.1`.
    pub gamma: (f64, f64),
    /// Tokens are drawn uniformly from this many word types.
    pub vocab: usize,
    pub seed: u64,
}

impl RandomCorpus {
    pub fn new(sentences: usize, seed: u64) -> Self {
        Self {
            sentences,
            src_len: 3..=30,
            gamma: (0.5, 2.0),
            vocab: 64,
            seed,
        }
    }
}

/// Source/reference sentence pairs forming one evaluation stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimCorpus {
    sentences: Vec<SimSentence>,
}

impl SimCorpus {
    pub fn new(sentences: Vec<SimSentence>) -> Result<Self> {
        for (n, s) in sentences.iter().enumerate() {
            if s.source.is_empty() || s.reference.is_empty() {
                return Err(Error::validation(format!(
                    "corpus sentence {} has an empty side",
                    n + 1
                )));
            }
        }
        Ok(Self { sentences })
    }

    /// Length-only corpus; tokens are positional placeholders.
    pub fn from_lengths(lengths: &[(usize, usize)]) -> Result<Self> {
        let sentences = lengths
            .iter()
            .enumerate()
            .map(|(n, &(src, tgt))| SimSentence {
                source: placeholder("x", n, src),
                reference: placeholder("y", n, tgt),
            })
            .collect();
        Self::new(sentences)
    }

    pub fn random(params: &RandomCorpus) -> Result<Self> {
        let (lo, hi) = params.gamma;
        if params.vocab == 0 || !(lo > 0.0 && lo <= hi) || params.src_len.is_empty() {
            return Err(Error::validation("invalid random corpus parameters"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let words = |prefix: &str, len: usize, rng: &mut ChaCha8Rng| {
            let tokens = (0..len)
                .map(|_| format!("{prefix}{}", rng.gen_range(0..params.vocab)))
                .collect();
            TokenStream::from_trusted(tokens)
        };
        let sentences = (0..params.sentences)
            .map(|_| {
                let src = rng.gen_range(params.src_len.clone());
                let gamma = rng.gen_range(lo..=hi);
                let tgt = ((gamma * src as f64).round() as usize).max(1);
                SimSentence {
                    source: words("x", src, &mut rng),
                    reference: words("w", tgt, &mut rng),
                }
            })
            .collect();
        Self::new(sentences)
    }

    /// Reads a corpus file. Each line is either `src_len tgt_len` or
    /// `source text<TAB>reference text`.
    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut sentences = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let sentence =
                parse_corpus_line(&line, sentences.len()).map_err(|e| e.at_line(i + 1))?;
            sentences.push(sentence);
        }
        Self::new(sentences)
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn sentences(&self) -> &[SimSentence] {
        &self.sentences
    }

    pub fn gammas(&self) -> Vec<f64> {
        self.sentences.iter().map(SimSentence::gamma).collect()
    }

    pub fn source_stream(&self) -> TokenStream {
        TokenStream::concat(self.sentences.iter().map(|s| &s.source))
    }

    pub fn reference_stream(&self) -> TokenStream {
        TokenStream::concat(self.sentences.iter().map(|s| &s.reference))
    }

    pub fn source_segmentation(&self) -> Segmentation {
        let lens: Vec<usize> = self.sentences.iter().map(|s| s.source.len()).collect();
        Segmentation::from_lengths(&lens).expect("sentences are non-empty")
    }

    pub fn reference_segmentation(&self) -> Segmentation {
        let lens: Vec<usize> = self.sentences.iter().map(|s| s.reference.len()).collect();
        Segmentation::from_lengths(&lens).expect("sentences are non-empty")
    }
}

fn placeholder(prefix: &str, n: usize, len: usize) -> TokenStream {
    TokenStream::from_trusted(
        (1..=len)
            .map(|i| format!("{prefix}{}.{i}", n + 1))
            .collect(),
    )
}

fn parse_corpus_line(line: &str, n: usize) -> Result<SimSentence> {
    if let Some((src, tgt)) = line.split_once('\t') {
        return Ok(SimSentence {
            source: tokenize(src),
            reference: tokenize(tgt),
        });
    }
    let nums: Vec<&str> = line.split_whitespace().collect();
    match nums.as_slice() {
        [a, b] => {
            let parse = |s: &str| {
                s.parse::<usize>()
                    .map_err(|e| Error::validation(format!("bad length {s:?}: {e}")))
            };
            let (src, tgt) = (parse(a)?, parse(b)?);
            Ok(SimSentence {
                source: placeholder("x", n, src),
                reference: placeholder("y", n, tgt),
            })
        }
        _ => Err(Error::validation(
            "expected `src_len tgt_len` or `source<TAB>reference`",
        )),
    }
}

/// Knobs beyond the policy itself.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimOptions {
    /// Input segmentation used by the system; the reference one if unset.
    pub system_segmentation: Option<Segmentation>,
    /// Probability of replacing each hypothesis token by a random corpus token.
    pub substitution_rate: f64,
    pub seed: u64,
}

/// A simulated decode together with the reference segmentations.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub document: TraceDocument,
    /// Reference sentence boundaries over the source stream.
    pub src_seg: Segmentation,
    /// Reference sentence boundaries over the hypothesis stream.
    pub hyp_seg: Segmentation,
    /// Segmentation the system decoded with.
    pub system_seg: Segmentation,
}

/// Wait-k decode of the corpus under its reference segmentation.
pub fn simulate_stream(corpus: &SimCorpus, policy: &PolicySpec) -> Result<Simulation> {
    simulate(corpus, policy, &SimOptions::default())
}

pub fn simulate(corpus: &SimCorpus, policy: &PolicySpec, opts: &SimOptions) -> Result<Simulation> {
    let src_seg = corpus.source_segmentation();
    let hyp_seg = corpus.reference_segmentation();
    let system_seg = opts
        .system_segmentation
        .clone()
        .unwrap_or_else(|| src_seg.clone());
    if system_seg.stream_len() != src_seg.stream_len() || system_seg.has_empty() {
        return Err(Error::validation(
            "system segmentation must cover the source stream with non-empty segments",
        ));
    }
    if !(0.0..=1.0).contains(&opts.substitution_rate) {
        return Err(Error::validation("substitution rate must lie in [0, 1]"));
    }

    // global 1-based source position each reference target token is aligned to
    let mut aligned = Vec::with_capacity(hyp_seg.stream_len());
    let mut offset = 0;
    for s in corpus.sentences() {
        let (src, tgt) = (s.source.len(), s.reference.len());
        aligned.extend((1..=tgt).map(|i| offset + (i * src).div_ceil(tgt)));
        offset += src;
    }

    let mut delays = Vec::with_capacity(aligned.len());
    let mut next_target = 0;
    for range in system_seg.ranges() {
        let first = next_target;
        while next_target < aligned.len() && aligned[next_target] <= range.end {
            next_target += 1;
        }
        let tgt_len = next_target - first;
        if tgt_len == 0 {
            continue;
        }
        let gamma = match policy.gamma_mode {
            GammaMode::Global(g) => g,
            GammaMode::PerSentence => tgt_len as f64 / range.len() as f64,
        };
        let local = waitk_delays(policy.k, gamma, range.len(), tgt_len)?;
        delays.extend(local.into_iter().map(|d| d + range.start));
    }
    debug_assert_eq!(next_target, aligned.len());

    let mut hypothesis = corpus.reference_stream();
    if opts.substitution_rate > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let pool = hypothesis.tokens().to_vec();
        let tokens = hypothesis
            .tokens()
            .iter()
            .map(|tok| {
                if rng.gen_bool(opts.substitution_rate) {
                    pool.choose(&mut rng).expect("non-empty corpus").clone()
                } else {
                    tok.clone()
                }
            })
            .collect();
        hypothesis = TokenStream::from_trusted(tokens);
    }

    let document = TraceDocument::new(corpus.source_stream(), hypothesis, delays)?;
    Ok(Simulation {
        document,
        src_seg,
        hyp_seg,
        system_seg,
    })
}

/// Moves each internal boundary by a uniform shift in `[-max_shift, max_shift]`.
/// The last boundary is fixed and every segment stays non-empty.
pub fn perturb_segmentation(seg: &Segmentation, max_shift: usize, seed: u64) -> Segmentation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = max_shift as i64;
    let shifts: Vec<i64> = (0..seg.num_segments().saturating_sub(1))
        .map(|_| rng.gen_range(-m..=m))
        .collect();
    shift_boundaries(seg, &shifts)
}

/// Applies per-boundary shifts left to right, clamping so boundaries stay
/// strictly increasing.
pub fn shift_boundaries(seg: &Segmentation, shifts: &[i64]) -> Segmentation {
    let n = seg.num_segments();
    let total = seg.stream_len() as i64;
    let mut out = Vec::with_capacity(n);
    let mut prev = 0i64;
    for (i, &b) in seg.boundaries().iter().enumerate() {
        let next = if i + 1 == n {
            total
        } else {
            let lo = prev + 1;
            let hi = total - (n - 1 - i) as i64;
            let shift = shifts.get(i).copied().unwrap_or(0);
            // an already-invalid input keeps its boundary within the feasible band
            (b as i64 + shift).clamp(lo, hi.max(lo))
        };
        out.push(next as usize);
        prev = next;
    }
    Segmentation::permissive(out, seg.stream_len()).expect("clamped boundaries are valid")
}
