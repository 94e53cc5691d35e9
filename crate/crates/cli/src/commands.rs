use std::io::Write;
use std::path::{Path, PathBuf};

use clap::builder::TypedValueParser as _;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};
use vsematch::inference::{DEFAULT_BETA, DEFAULT_CSLS_K};
use vsematch::losses::{DEFAULT_KNN_K, DEFAULT_MARGIN};
use vsematch::metrics::{
    average_reports, contiguous_folds, matching_histogram, matching_recall, DEFAULT_HUB_THRESHOLDS,
};
use vsematch::{
    compute_report, cosine_similarity, generate_synthetic, hub_histogram, hub_summary, match_hungarian, rank,
    Direction, EmbeddingSet, InferenceConfig, LossConfig, LossKind, Matrix, PairIndex, RetrievalReport,
    SimilarityMatrix, Strategy, SyntheticSpec, TrainConfig, TrainData,
};

use crate::error::{CliError, Result};
use crate::format::{self, Precision};
use crate::report::{EvalReport, HubRow, ReportRow};

pub const QUERIES_FILE: &str = "queries.emb";
pub const ITEMS_FILE: &str = "items.emb";
pub const PAIRS_FILE: &str = "pairs.tsv";
pub const QUERY_ENCODER_FILE: &str = "query_encoder.emb";
pub const ITEM_ENCODER_FILE: &str = "item_encoder.emb";
pub const HISTORY_FILE: &str = "history.tsv";

#[derive(Debug, Parser)]
#[command(name = "vsematch", version, args_override_self = true)]
#[command(about = "Synthesize, train and evaluate joint text-image embeddings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic paired dataset.
    Synth(SynthArgs),
    /// Train linear query/item encoders with a triplet ranking loss.
    Train(TrainArgs),
    /// Rank, report R@K / Med r / Mean r, and optionally diagnose hubs.
    Eval(EvalArgs),
}

fn unit_interval(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("must be in [0, 1], got {v}"))
    }
}

fn non_negative(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("must be a finite number >= 0, got {v}"))
    }
}

fn positive(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("must be a finite number > 0, got {v}"))
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(2..))]
    pub classes: u64,
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
    pub per_class: u64,
    /// Raw dimension of both sides (overridden by --dim-query / --dim-item).
    #[arg(long, default_value_t = 32, value_parser = clap::value_parser!(u64).range(1..))]
    pub dim: u64,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub dim_query: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub dim_item: Option<u64>,
    #[arg(long, default_value_t = 0.0, value_parser = non_negative)]
    pub noise: f64,
    #[arg(long, default_value_t = 0.0, value_parser = unit_interval)]
    pub hub_fraction: f64,
    #[arg(long, default_value_t = 0.0, value_parser = non_negative)]
    pub hub_strength: f64,
    #[arg(long, default_value_t = 1.0, value_parser = non_negative)]
    pub class_spread: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Precision::F64)]
    pub precision: Precision,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    Sum,
    Max,
    Knn,
}

impl From<LossArg> for LossKind {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Sum => LossKind::SumMargin,
            LossArg::Max => LossKind::MaxMargin,
            LossArg::Knn => LossKind::KnnMargin,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub items: PathBuf,
    /// Ground-truth pairs; diagonal pairing when omitted.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = LossArg::Knn)]
    pub loss: LossArg,
    #[arg(long, default_value_t = DEFAULT_KNN_K, value_parser = clap::value_parser!(u64).range(1..).map(|v| v as usize))]
    pub knn_k: usize,
    #[arg(long, default_value_t = DEFAULT_MARGIN, value_parser = positive)]
    pub margin: f64,
    #[arg(long, default_value_t = 30, value_parser = clap::value_parser!(u64).range(1..).map(|v| v as usize))]
    pub epochs: usize,
    #[arg(long, default_value_t = 128, value_parser = clap::value_parser!(u64).range(2..).map(|v| v as usize))]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.001, value_parser = non_negative)]
    pub lr: f64,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..).map(|v| v as usize))]
    pub lr_decay_every: usize,
    #[arg(long, default_value_t = 10.0, value_parser = positive)]
    pub lr_decay_factor: f64,
    /// Joint embedding dimension.
    #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u64).range(1..).map(|v| v as usize))]
    pub dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Precision::F64)]
    pub precision: Precision,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InferenceArg {
    Naive,
    Is,
    Csls,
    Hungarian,
}

impl InferenceArg {
    fn name(self) -> &'static str {
        match self {
            InferenceArg::Naive => "naive",
            InferenceArg::Is => "is",
            InferenceArg::Csls => "csls",
            InferenceArg::Hungarian => "hungarian",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Json,
    Tsv,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub items: PathBuf,
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = InferenceArg::Naive)]
    pub inference: InferenceArg,
    #[arg(long, default_value_t = DEFAULT_BETA, value_parser = positive)]
    pub beta: f64,
    #[arg(long, default_value_t = DEFAULT_CSLS_K, value_parser = clap::value_parser!(u64).range(1..).map(|v| v as usize))]
    pub csls_k: usize,
    #[arg(long, value_enum, default_value_t = ReportFormat::Json)]
    pub format: ReportFormat,
    /// Append hub diagnostics (items NN to 0, 1, >=2, >=5, >=10 queries).
    #[arg(long)]
    pub diagnose: bool,
    /// Average over this many contiguous query folds, each ranked against
    /// the items paired with its queries.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..).map(|v| v as usize))]
    pub folds: usize,
    /// Report file; the report goes to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` (program name first) and runs the command, writing
/// human-readable output to `stdout`. Returns the process exit code.
pub fn run_from<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let rendered = e.render().to_string();
            let _ = if code == 0 {
                write!(stdout, "{rendered}")
            } else {
                write!(stderr, "{rendered}")
            };
            return code;
        }
    };
    match run(cli.command, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: Command, stdout: &mut dyn Write) -> Result<()> {
    match command {
        Command::Synth(a) => cmd_synth(&a, stdout),
        Command::Train(a) => cmd_train(&a, stdout),
        Command::Eval(a) => cmd_eval(&a, stdout),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn print(stdout: &mut dyn Write, text: &str) -> Result<()> {
    stdout
        .write_all(text.as_bytes())
        .map_err(|e| CliError::io("<stdout>", e))
}

pub fn cmd_synth(a: &SynthArgs, stdout: &mut dyn Write) -> Result<()> {
    let spec = SyntheticSpec {
        n_classes: a.classes as usize,
        samples_per_class: a.per_class as usize,
        d_raw_query: a.dim_query.unwrap_or(a.dim) as usize,
        d_raw_item: a.dim_item.unwrap_or(a.dim) as usize,
        noise_sigma: a.noise,
        hub_fraction: a.hub_fraction,
        hub_strength: a.hub_strength,
        class_spread: a.class_spread,
        seed: a.seed,
    };
    let data = generate_synthetic(&spec)?;
    ensure_dir(&a.out_dir)?;
    format::write_embeddings(&a.out_dir.join(QUERIES_FILE), data.queries.data(), a.precision)?;
    format::write_embeddings(&a.out_dir.join(ITEMS_FILE), data.items.data(), a.precision)?;
    format::write_pairs(&a.out_dir.join(PAIRS_FILE), &data.pairs)?;
    let echo = serde_json::to_string_pretty(&json!({ "spec": spec, "hub_items": data.hub_items.len() }))
        .expect("spec serializes");
    print(stdout, &format!("{echo}\n"))
}

fn load_pair(queries: &Path, items: &Path, pairs: Option<&Path>) -> Result<(Matrix, Matrix, PairIndex)> {
    let q = format::read_embeddings(queries)?;
    let i = format::read_embeddings(items)?;
    let p = format::pairs_or_diagonal(pairs, q.rows(), i.rows())?;
    Ok((q, i, p))
}

pub fn cmd_train(a: &TrainArgs, stdout: &mut dyn Write) -> Result<()> {
    let (q, i, pairs) = load_pair(&a.queries, &a.items, a.pairs.as_deref())?;
    let queries = EmbeddingSet::with_prefix(q, "")?;
    let items = EmbeddingSet::with_prefix(i, "")?;
    let data = TrainData::from_pairs(&queries, &items, &pairs)?;
    if data.len() < a.batch_size {
        return Err(CliError::Usage(format!(
            "--batch-size {} exceeds the {} training pairs",
            a.batch_size,
            data.len()
        )));
    }
    let loss = LossConfig {
        kind: a.loss.into(),
        margin_alpha: a.margin,
        knn_k: a.knn_k,
    };
    if loss.kind == LossKind::KnnMargin && a.knn_k >= a.batch_size {
        return Err(CliError::Usage(format!(
            "--knn-k {} needs --knn-k < --batch-size ({})",
            a.knn_k, a.batch_size
        )));
    }
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        lr: a.lr,
        lr_decay_every: a.lr_decay_every,
        lr_decay_factor: a.lr_decay_factor,
        embed_dim: a.dim,
        seed: a.seed,
        loss,
    };
    let out = vsematch::train(&data, &cfg)?;

    ensure_dir(&a.out_dir)?;
    format::write_encoder(&a.out_dir.join(QUERY_ENCODER_FILE), &out.query_encoder, a.precision)?;
    format::write_encoder(&a.out_dir.join(ITEM_ENCODER_FILE), &out.item_encoder, a.precision)?;
    let encoded_q = out.query_encoder.forward(queries.data())?;
    let encoded_i = out.item_encoder.forward(items.data())?;
    format::write_embeddings(&a.out_dir.join(QUERIES_FILE), &encoded_q, a.precision)?;
    format::write_embeddings(&a.out_dir.join(ITEMS_FILE), &encoded_i, a.precision)?;
    format::write_history(&a.out_dir.join(HISTORY_FILE), &out.history)?;
    let mut text = String::new();
    for r in &out.history {
        text.push_str(&format!("epoch {:>3}  loss {:>12.4}  lr {}\n", r.epoch, r.loss, r.lr));
    }
    print(stdout, &text)
}

fn strategy_params(a: &EvalArgs) -> Map<String, Value> {
    let mut params = Map::new();
    match a.inference {
        InferenceArg::Is => {
            params.insert("beta".into(), json!(a.beta));
        }
        InferenceArg::Csls => {
            params.insert("csls_k".into(), json!(a.csls_k));
        }
        InferenceArg::Naive | InferenceArg::Hungarian => {}
    }
    if a.folds > 1 {
        params.insert("folds".into(), json!(a.folds));
    }
    params
}

fn inference_config(a: &EvalArgs) -> InferenceConfig {
    let strategy = match a.inference {
        InferenceArg::Naive => Strategy::Naive,
        InferenceArg::Is => Strategy::InvertedSoftmax,
        InferenceArg::Csls => Strategy::Csls,
        InferenceArg::Hungarian => Strategy::Hungarian,
    };
    InferenceConfig {
        strategy,
        beta: a.beta,
        csls_k: a.csls_k,
    }
}

/// Both retrieval directions on one similarity matrix. Hungarian yields R@1
/// and the matching weight; rankings yield full reports.
struct Evaluated {
    rankings: Option<[RetrievalReport; 2]>,
    matching: Option<([f64; 2], f64)>,
    hubs: [vsematch::HubHistogram; 2],
}

fn evaluate(sim: &SimilarityMatrix, pairs: &PairIndex, a: &EvalArgs) -> Result<Evaluated> {
    let reverse = sim.transpose();
    let inverse = pairs.inverse();
    if a.inference == InferenceArg::Hungarian {
        let forward = match_hungarian(sim)?;
        let backward = match_hungarian(&reverse)?;
        let r1 = [matching_recall(&forward, pairs)?, matching_recall(&backward, &inverse)?];
        let hubs = [
            matching_histogram(&forward, sim.n_items()),
            matching_histogram(&backward, reverse.n_items()),
        ];
        return Ok(Evaluated {
            rankings: None,
            matching: Some((r1, forward.total_weight)),
            hubs,
        });
    }
    let cfg = inference_config(a);
    let t2i = rank(sim, &cfg)?;
    let i2t = rank(&reverse, &cfg)?;
    let reports = [
        compute_report(&i2t, &inverse, Direction::ImageToText)?,
        compute_report(&t2i, pairs, Direction::TextToImage)?,
    ];
    let hubs = [hub_histogram(&i2t.adjusted), hub_histogram(&t2i.adjusted)];
    Ok(Evaluated {
        rankings: Some(reports),
        matching: None,
        hubs,
    })
}

fn check_csls_k(a: &EvalArgs, n_queries: usize, n_items: usize) -> Result<()> {
    let limit = n_queries.min(n_items);
    if a.inference == InferenceArg::Csls && a.csls_k > limit {
        return Err(CliError::Usage(format!(
            "--csls-k {} must not exceed min(#queries, #items) = {limit}{}",
            a.csls_k,
            if a.folds > 1 { " within the smallest fold" } else { "" }
        )));
    }
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs, stdout: &mut dyn Write) -> Result<()> {
    let (q, i, pairs) = load_pair(&a.queries, &a.items, a.pairs.as_deref())?;
    if q.cols() != i.cols() {
        return Err(CliError::Shape(format!(
            "{} has dimension {} but {} has dimension {}",
            a.queries.display(),
            q.cols(),
            a.items.display(),
            i.cols()
        )));
    }
    if a.folds > q.rows() {
        return Err(CliError::Usage(format!(
            "--folds {} exceeds the {} queries",
            a.folds,
            q.rows()
        )));
    }
    let sim = cosine_similarity(&EmbeddingSet::with_prefix(q, "")?, &EmbeddingSet::with_prefix(i, "")?)?;

    let mut parts = Vec::new();
    for range in contiguous_folds(sim.n_queries(), a.folds) {
        let queries: Vec<usize> = range.collect();
        let (sub, sub_pairs) = if a.folds == 1 {
            (sim.clone(), pairs.clone())
        } else {
            let mut items: Vec<usize> = queries
                .iter()
                .flat_map(|&q| pairs.positives(q).iter().copied())
                .collect();
            items.sort_unstable();
            items.dedup();
            (sim.submatrix(&queries, &items), pairs.restrict(&queries, &items))
        };
        check_csls_k(a, sub.n_queries(), sub.n_items())?;
        parts.push(evaluate(&sub, &sub_pairs, a)?);
    }

    let strategy = a.inference.name();
    let params = strategy_params(a);
    let directions = [Direction::ImageToText, Direction::TextToImage];
    let reports: Vec<ReportRow> = if a.inference == InferenceArg::Hungarian {
        let n = parts.len() as f64;
        let weight: f64 = parts.iter().map(|p| p.matching.unwrap().1).sum();
        directions
            .iter()
            .enumerate()
            .map(|(d, dir)| {
                let mut params = params.clone();
                params.insert("matching_weight".into(), json!(weight));
                ReportRow {
                    direction: dir.as_str().to_string(),
                    r_at_1: parts.iter().map(|p| p.matching.unwrap().0[d]).sum::<f64>() / n,
                    r_at_5: None,
                    r_at_10: None,
                    med_r: None,
                    mean_r: None,
                    strategy: strategy.to_string(),
                    params,
                }
            })
            .collect()
    } else {
        (0..2)
            .map(|d| {
                let per_fold: Vec<RetrievalReport> =
                    parts.iter().map(|p| p.rankings.as_ref().unwrap()[d].clone()).collect();
                average_reports(&per_fold).map(|r| ReportRow::from_report(&r, strategy, params.clone()))
            })
            .collect::<vsematch::Result<_>>()?
    };

    let hubs = if a.diagnose {
        // diagnostics always describe the whole set, not the folds
        let whole = if a.folds == 1 {
            parts.swap_remove(0)
        } else {
            evaluate(&sim, &pairs, a)?
        };
        let rows = directions
            .iter()
            .zip(&whole.hubs)
            .map(|(dir, h)| {
                Ok(HubRow {
                    direction: dir.as_str().to_string(),
                    summary: hub_summary(h, &DEFAULT_HUB_THRESHOLDS)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Some(rows)
    } else {
        None
    };

    let report = EvalReport { reports, hubs };
    let body = match a.format {
        ReportFormat::Json => report.to_json(),
        ReportFormat::Tsv => report.to_tsv(),
    };
    match &a.out {
        Some(path) => {
            format::write_atomic(path, body.as_bytes())?;
            print(stdout, &report.human())
        }
        None => print(stdout, &body),
    }
}
