//! Sentence-level latency metrics: Average Proportion (AP), Average Lagging
//! (AL) and Differentiable Average Lagging (DAL).
//!
//! Every metric is a normalized sum of per-target-position costs,
//! `L = (1/Z) * sum_i C_i`. The metrics differ in the cost `C_i` and in the
//! normalizer `Z`:
//!
//! | metric | `C_i`                   | `Z`                         |
//! |--------|-------------------------|-----------------------------|
//! | AP     | `g(i)`                  | `|x| * |y|`                 |
//! | AL     | `g(i) - (i-1)/gamma`    | `tau`, first `i` with `g(i) >= |x|` |
//! | DAL    | `g'(i) - (i-1)/gamma`   | `|y|`                       |
//!
//! where `g'(i) = max(g(i), g'(i-1) + s/gamma)` and `s` scales the cost of a
//! write operation (`s = 1` is conventional DAL).

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::SentenceView;
use crate::error::{Error, Result};
use crate::registry::Registry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Ap,
    Al,
    Dal,
}

impl MetricKind {
    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Ap => "ap",
            MetricKind::Al => "al",
            MetricKind::Dal => "dal",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name().to_ascii_uppercase())
    }
}

/// What AL does when the delays never reach the full source length.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TauFallback {
    /// Use `tau = |y|` and flag the sentence.
    #[default]
    TargetLength,
    /// Fail the evaluation.
    Reject,
}

/// Parameters shared by all registered metric constructors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    /// Write-cost scale in `[0, 1]`; only DAL reads it.
    pub scale: f64,
    pub tau_fallback: TauFallback,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            scale: 1.0,
            tau_fallback: TauFallback::TargetLength,
        }
    }
}

impl MetricConfig {
    pub fn with_scale(scale: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&scale) {
            return Err(Error::validation(format!(
                "write-cost scale must lie in [0, 1], got {scale}"
            )));
        }
        Ok(Self {
            scale,
            ..Self::default()
        })
    }
}

/// Costs and normalizer behind one sentence-level value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceScore {
    pub value: f64,
    /// `C_i` for every target position.
    pub costs: Vec<f64>,
    /// Number of leading positions that enter the sum (`tau` for AL).
    pub counted: usize,
    pub normalizer: f64,
}

impl SentenceScore {
    fn from_costs(costs: Vec<f64>, counted: usize, normalizer: f64) -> Self {
        let value = costs[..counted].iter().sum::<f64>() / normalizer;
        Self {
            value,
            costs,
            counted,
            normalizer,
        }
    }

    pub fn cost_sum(&self) -> f64 {
        self.costs[..self.counted].iter().sum()
    }
}

/// Target-to-source length ratio `|y| / |x|`.
pub fn gamma(src_len: usize, tgt_len: usize) -> Result<f64> {
    if src_len == 0 || tgt_len == 0 {
        return Err(Error::validation(format!(
            "length ratio undefined for |x|={src_len}, |y|={tgt_len}"
        )));
    }
    Ok(tgt_len as f64 / src_len as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tau {
    /// 1-based target position.
    pub index: usize,
    /// Set when no position read the full source and `|y|` was used.
    pub fallback: bool,
}

/// First 1-based position whose delay reaches `src_len`, or `|y|` if none does.
pub fn tau(delays: &[i64], src_len: usize) -> Tau {
    match delays.iter().position(|&d| d >= src_len as i64) {
        Some(i) => Tau {
            index: i + 1,
            fallback: false,
        },
        None => Tau {
            index: delays.len(),
            fallback: true,
        },
    }
}

/// Wait-0 oracle reads before writing 1-based position `i`.
fn oracle(i: usize, gamma: f64) -> f64 {
    (i - 1) as f64 / gamma
}

pub fn ap_sentence(view: &SentenceView) -> SentenceScore {
    let costs: Vec<f64> = view.delays().iter().map(|&d| d as f64).collect();
    let n = costs.len();
    SentenceScore::from_costs(costs, n, (view.src_len() * view.tgt_len()) as f64)
}

/// AL with the `tau` that was used.
pub fn al_sentence(view: &SentenceView, fallback: TauFallback) -> Result<(SentenceScore, Tau)> {
    let tau = tau(view.delays(), view.src_len());
    if tau.fallback && fallback == TauFallback::Reject {
        return Err(Error::validation(format!(
            "delays never reach the source length {} (max {})",
            view.src_len(),
            view.delays().last().copied().unwrap_or(0)
        )));
    }
    let gamma = view.gamma();
    let costs = view
        .delays()
        .iter()
        .enumerate()
        .map(|(i, &d)| d as f64 - oracle(i + 1, gamma))
        .collect();
    Ok((
        SentenceScore::from_costs(costs, tau.index, tau.index as f64),
        tau,
    ))
}

/// DAL with write-cost scale `scale`. `carry_in` is the previous sentence's
/// ratcheted delay already expressed in this sentence's frame; it only enters
/// the max at the first position. Returns the score and `g'(|y|)`.
pub fn dal_sentence(
    view: &SentenceView,
    scale: f64,
    carry_in: Option<f64>,
) -> (SentenceScore, f64) {
    let gamma = view.gamma();
    let step = scale / gamma;
    let mut costs = Vec::with_capacity(view.tgt_len());
    let mut ratchet = f64::NEG_INFINITY;
    for (i, &d) in view.delays().iter().enumerate() {
        let floor = if i == 0 {
            carry_in.unwrap_or(f64::NEG_INFINITY)
        } else {
            ratchet + step
        };
        ratchet = (d as f64).max(floor);
        costs.push(ratchet - oracle(i + 1, gamma));
    }
    let n = costs.len();
    (SentenceScore::from_costs(costs, n, n as f64), ratchet)
}

/// Result of scoring one sentence through a [`LatencyMetric`].
#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub score: SentenceScore,
    /// Delay handed to the next sentence, in the next sentence's local frame.
    pub handoff: Option<f64>,
    pub tau_fallback: bool,
}

/// A latency metric that scores sentences one at a time.
///
/// Metrics that carry state across sentence boundaries return a `handoff`
/// which the caller feeds back as `carry_in` for the following sentence.
pub trait LatencyMetric: Send + Sync {
    fn kind(&self) -> MetricKind;

    /// Write-cost scale, for metrics that have one.
    fn scale(&self) -> Option<f64> {
        None
    }

    fn label(&self) -> String {
        match self.scale() {
            Some(s) => format!("{}(s={s})", self.kind()),
            None => self.kind().to_string(),
        }
    }

    fn score(&self, view: &SentenceView, carry_in: Option<f64>) -> Result<Scored>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AverageProportion;

impl LatencyMetric for AverageProportion {
    fn kind(&self) -> MetricKind {
        MetricKind::Ap
    }

    fn score(&self, view: &SentenceView, _carry_in: Option<f64>) -> Result<Scored> {
        Ok(Scored {
            score: ap_sentence(view),
            handoff: None,
            tau_fallback: false,
        })
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AverageLagging {
    pub tau_fallback: TauFallback,
}

impl LatencyMetric for AverageLagging {
    fn kind(&self) -> MetricKind {
        MetricKind::Al
    }

    fn score(&self, view: &SentenceView, _carry_in: Option<f64>) -> Result<Scored> {
        let (score, tau) = al_sentence(view, self.tau_fallback)?;
        Ok(Scored {
            score,
            handoff: None,
            tau_fallback: tau.fallback,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DifferentiableAverageLagging {
    scale: f64,
}

impl DifferentiableAverageLagging {
    pub fn new(scale: f64) -> Result<Self> {
        MetricConfig::with_scale(scale)?;
        Ok(Self { scale })
    }
}

impl LatencyMetric for DifferentiableAverageLagging {
    fn kind(&self) -> MetricKind {
        MetricKind::Dal
    }

    fn scale(&self) -> Option<f64> {
        Some(self.scale)
    }

    fn score(&self, view: &SentenceView, carry_in: Option<f64>) -> Result<Scored> {
        let (score, last) = dal_sentence(view, self.scale, carry_in);
        // The next sentence starts |x| source tokens later.
        let handoff = last + self.scale / view.gamma() - view.src_len() as f64;
        Ok(Scored {
            score,
            handoff: Some(handoff),
            tau_fallback: false,
        })
    }
}

pub type MetricRegistry = Registry<MetricConfig, dyn LatencyMetric>;

/// Registry holding `ap`, `al` and `dal`.
pub fn metric_registry() -> MetricRegistry {
    let mut registry = MetricRegistry::new("metric");
    registry
        .register("ap", |_| Ok(Box::new(AverageProportion)))
        .register("al", |cfg| {
            Ok(Box::new(AverageLagging {
                tau_fallback: cfg.tau_fallback,
            }))
        })
        .register("dal", |cfg| {
            Ok(Box::new(DifferentiableAverageLagging::new(cfg.scale)?))
        });
    registry
}

/// Builds one metric per name; DAL is instantiated once per scale in `scales`.
pub fn build_metrics(
    registry: &MetricRegistry,
    names: &[String],
    scales: &[f64],
    tau_fallback: TauFallback,
) -> Result<Vec<Box<dyn LatencyMetric>>> {
    let mut out = Vec::new();
    for name in names {
        let base = MetricConfig {
            tau_fallback,
            ..MetricConfig::default()
        };
        let probe = registry.build(name, &base)?;
        if probe.scale().is_none() {
            out.push(probe);
            continue;
        }
        if scales.is_empty() {
            return Err(Error::validation(format!(
                "metric `{name}` needs at least one write-cost scale"
            )));
        }
        for &scale in scales {
            let cfg = MetricConfig {
                tau_fallback,
                ..MetricConfig::with_scale(scale)?
            };
            out.push(registry.build(name, &cfg)?);
        }
    }
    Ok(out)
}
