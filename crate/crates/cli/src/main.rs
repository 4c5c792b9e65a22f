use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use streamlat::{Aggregation, EmptySegmentPolicy, TauFallback};
use streamlat_cli::{
    exit_code, run_evaluate, run_resegment, run_simulate, CorpusSource, EvaluateConfig,
    GammaSetting, ReportFormat, ResegmentRun, SimulateConfig,
};

/// Latency evaluation for simultaneous translation over continuous streams.
#[derive(Parser)]
#[command(name = "streamlat", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score a read/write trace with AP, AL and DAL.
    Evaluate(EvaluateArgs),
    /// Generate a wait-k trace and its reference files.
    Simulate(SimulateArgs),
    /// Split an unsegmented hypothesis to match reference sentences.
    Resegment(ResegmentArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Tsv,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Trace JSONL file, one stream per line.
    #[arg(long, required_unless_present = "config")]
    trace: Option<PathBuf>,
    /// Source reference sentences, one per line.
    #[arg(long)]
    src_refs: Option<PathBuf>,
    /// Target reference sentences, one per line.
    #[arg(long)]
    tgt_refs: Option<PathBuf>,
    /// Hypothesis segmentation, one line per stream.
    #[arg(long)]
    hyp_seg: Option<PathBuf>,
    /// Source segmentation, one line per stream.
    #[arg(long)]
    src_seg: Option<PathBuf>,
    /// Evaluation mode: stream, concat1 or sentence.
    #[arg(long, default_value = "stream")]
    mode: String,
    #[arg(long, value_delimiter = ',', default_value = "ap,al,dal")]
    metrics: Vec<String>,
    /// DAL write-cost scales.
    #[arg(long, value_delimiter = ',', default_value = "1.0,0.95")]
    s: Vec<f64>,
    /// Decimals kept in the report.
    #[arg(long, default_value_t = 4)]
    decimals: usize,
    /// Include per-sentence values.
    #[arg(long)]
    per_sentence: bool,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    /// Skip sentences with an empty side instead of failing.
    #[arg(long)]
    allow_empty: bool,
    /// Pool costs across sentences instead of averaging sentence scores.
    #[arg(long)]
    micro: bool,
    /// Fail when an AL sentence never reads the full source.
    #[arg(long)]
    strict_tau: bool,
    /// Case-sensitive token matching during re-segmentation.
    #[arg(long)]
    case_sensitive: bool,
    /// Re-run the configuration echoed in a previous report (or a bare config file).
    #[arg(long, conflicts_with_all = ["trace", "src_refs", "tgt_refs", "hyp_seg", "src_seg"])]
    config: Option<PathBuf>,
}

impl EvaluateArgs {
    fn into_config(self) -> anyhow::Result<EvaluateConfig> {
        if let Some(path) = &self.config {
            return EvaluateConfig::load(path);
        }
        let mut cfg = EvaluateConfig::new(self.trace.context("--trace is required")?);
        cfg.src_refs = self.src_refs;
        cfg.tgt_refs = self.tgt_refs;
        cfg.hyp_seg = self.hyp_seg;
        cfg.src_seg = self.src_seg;
        cfg.mode = self.mode;
        cfg.metrics = self.metrics;
        cfg.s = self.s;
        cfg.decimals = self.decimals;
        cfg.per_sentence = self.per_sentence;
        if self.allow_empty {
            cfg.empty_segments = EmptySegmentPolicy::Skip;
        }
        if self.micro {
            cfg.aggregation = Aggregation::Micro;
        }
        if self.strict_tau {
            cfg.tau_fallback = TauFallback::Reject;
        }
        cfg.case_sensitive = self.case_sensitive;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum GammaArg {
    Global,
    PerSentence,
}

#[derive(Args)]
struct SimulateArgs {
    /// Corpus file: `src_len tgt_len` or `source<TAB>reference` per line.
    #[arg(long, required_unless_present = "random", conflicts_with = "random")]
    corpus: Option<PathBuf>,
    /// Generate a random corpus with this many sentences.
    #[arg(long)]
    random: Option<usize>,
    #[arg(long)]
    k: usize,
    #[arg(long, value_enum, default_value = "per-sentence")]
    gamma_mode: GammaArg,
    /// Global writing rate (defaults to the corpus length ratio).
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Shift the system's sentence boundaries by up to this many tokens.
    #[arg(long)]
    perturb_max_shift: Option<usize>,
    /// Per-token substitution probability in the hypothesis.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long)]
    out_prefix: PathBuf,
}

#[derive(Args)]
struct ResegmentArgs {
    /// Unsegmented hypothesis text.
    #[arg(long)]
    hyp: PathBuf,
    /// Reference sentences, one per line.
    #[arg(long)]
    refs: PathBuf,
    #[arg(long)]
    out_prefix: PathBuf,
    #[arg(long)]
    case_sensitive: bool,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Evaluate(args) => {
            let format = match args.format {
                Format::Json => ReportFormat::Json,
                Format::Tsv => ReportFormat::Tsv,
            };
            let report = run_evaluate(&args.into_config()?)?;
            for w in report.warning_messages() {
                eprintln!("warning: {w}");
            }
            std::io::stdout()
                .lock()
                .write_all(report.render(format).as_bytes())?;
        }
        Command::Simulate(args) => {
            let corpus = match (args.corpus, args.random) {
                (Some(path), _) => CorpusSource::File(path),
                (None, Some(n)) => CorpusSource::Random(n),
                (None, None) => anyhow::bail!("pass --corpus or --random"),
            };
            let cfg = SimulateConfig {
                corpus,
                k: args.k,
                gamma_mode: match args.gamma_mode {
                    GammaArg::Global => GammaSetting::Global,
                    GammaArg::PerSentence => GammaSetting::PerSentence,
                },
                gamma: args.gamma,
                seed: args.seed,
                perturb_max_shift: args.perturb_max_shift,
                noise: args.noise,
                out_prefix: args.out_prefix,
            };
            let out = run_simulate(&cfg)?;
            eprintln!(
                "simulated {} sentences ({} source / {} target tokens)",
                out.sentences, out.source_tokens, out.hypothesis_tokens
            );
            for f in out.files {
                println!("{}", f.display());
            }
        }
        Command::Resegment(args) => {
            let out = run_resegment(&ResegmentRun {
                hyp: args.hyp,
                refs: args.refs,
                out_prefix: args.out_prefix,
                case_sensitive: args.case_sensitive,
            })?;
            eprintln!("total edit cost {}", out.cost.total_cost);
            for f in out.files {
                println!("{}", f.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return if err.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
