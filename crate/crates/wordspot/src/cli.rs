//! Command-line interface.

use std::fmt::Write as _;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use log::info;
use wordspot_core::eval::{compare_methods, Comparison};
use wordspot_core::subspace::DEFAULT_VARIANCE;
use wordspot_core::synth::{generate_synthetic_corpus, DEFAULT_DOCS, DEFAULT_SOURCE_TEXT};
use wordspot_core::{
    fit_pca, CorpusIndex, EvalConfig, IndexBuilder, Judgment, Method, Retention, RocchioParams, Strategy,
};

use crate::api::{self, ParamsOverride, QuerySource, SearchResponse, DEFAULT_TOP};
use crate::error::AppError;
use crate::pages;
use crate::server::{self, AppState, Loaded, ServerConfig, DEFAULT_BIND};
use crate::session_file::SessionFile;

const DEFAULT_THRESHOLD: f64 = wordspot_core::raster::DEFAULT_THRESHOLD;

#[derive(Debug, Parser)]
#[command(name = "wordspot", version, about = "Query-by-word-image retrieval with relevance feedback")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a labeled synthetic corpus (doc_NNNN.pbm + doc_NNNN.txt).
    GenCorpus(GenCorpusArgs),
    /// Segment and describe page images into an index file.
    Ingest(IngestArgs),
    /// Fit a PCA subspace and store it in the index.
    PcaFit(PcaFitArgs),
    /// Rank the index against a query image or an indexed word.
    Search(SearchArgs),
    /// Apply one round of relevance judgments to a saved session.
    Feedback(FeedbackArgs),
    /// Run the evaluation protocol and write a comparison report.
    Eval(EvalArgs),
    /// Start the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct GenCorpusArgs {
    /// Output directory for pages and label files.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_DOCS)]
    pub docs: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Source text; defaults to the built-in passage.
    #[arg(long)]
    pub source: Option<PathBuf>,
    /// Also ingest the corpus into this index file.
    #[arg(long)]
    pub index: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Directory of page images (.pbm/.pgm/.pnm/.png); sorted file order gives document ids.
    #[arg(long)]
    pub pages: PathBuf,
    /// Directory of `<page stem>.txt` label files, one word per line.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Intensity fraction below which a grayscale pixel counts as ink.
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub binarize: f64,
}

#[derive(Debug, Args)]
pub struct PcaFitArgs {
    #[arg(long)]
    pub index: PathBuf,
    /// Retained variance fraction.
    #[arg(long, conflicts_with = "fixed_m")]
    pub variance: Option<f64>,
    /// Retain exactly this many directions.
    #[arg(long)]
    pub fixed_m: Option<usize>,
    /// Keep raw principal coordinates and rank them by L1.
    #[arg(long)]
    pub no_whiten: bool,
    /// Where to write the updated index; defaults to overwriting --index.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RocchioArgs {
    /// positive, negative or combined.
    #[arg(long)]
    pub strategy: Option<Strategy>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
}

impl RocchioArgs {
    fn overrides(&self) -> ParamsOverride {
        ParamsOverride {
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
            strategy: self.strategy,
            ..ParamsOverride::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[arg(long)]
    pub index: PathBuf,
    /// Word image file (.pbm/.pgm/.png).
    #[arg(long, conflicts_with = "word_id", required_unless_present = "word_id")]
    pub query_image: Option<PathBuf>,
    /// Use an indexed word as the query.
    #[arg(long)]
    pub word_id: Option<u64>,
    /// Rank in the index's PCA subspace.
    #[arg(long)]
    pub subspace: bool,
    #[arg(long, default_value_t = DEFAULT_TOP)]
    pub top: usize,
    /// Save a session file for later `feedback` rounds.
    #[arg(long)]
    pub session: Option<PathBuf>,
    /// Print the response as JSON.
    #[arg(long)]
    pub json: bool,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub binarize: f64,
    #[command(flatten)]
    pub rocchio: RocchioArgs,
}

#[derive(Debug, Args)]
pub struct FeedbackArgs {
    #[arg(long)]
    pub session: PathBuf,
    /// Comma-separated word ids judged relevant.
    #[arg(long, value_delimiter = ',')]
    pub relevant: Vec<u64>,
    /// Comma-separated word ids judged non-relevant.
    #[arg(long, value_delimiter = ',')]
    pub nonrelevant: Vec<u64>,
    #[arg(long)]
    pub json: bool,
    #[command(flatten)]
    pub rocchio: RocchioArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub index: PathBuf,
    /// `all`, or a comma list of baseline, positive, negative, combined, pca.
    #[arg(long, default_value = "all")]
    pub strategies: String,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = wordspot_core::eval::DEFAULT_QUERIES)]
    pub queries: usize,
    /// Results shown to the judge per round.
    #[arg(long, default_value_t = DEFAULT_TOP)]
    pub shown: usize,
    #[arg(long, default_value_t = 1)]
    pub rounds: usize,
    /// Rate cutoff (0-100) for the retrieved set.
    #[arg(long, default_value_t = wordspot_core::eval::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Index to load at startup; one can also be loaded via POST /v1/admin/index.
    #[arg(long)]
    pub index: Option<PathBuf>,
    /// Page image directory used for thumbnails.
    #[arg(long)]
    pub pages: Option<PathBuf>,
    #[arg(long, env = "WORDSPOT_BIND", default_value = DEFAULT_BIND)]
    pub bind: SocketAddr,
    /// Idle seconds before a session expires.
    #[arg(long, env = "WORDSPOT_SESSION_TIMEOUT", default_value_t = 1800)]
    pub session_timeout: u64,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub binarize: f64,
}

pub fn run(cli: Cli) -> Result<(), AppError> {
    match cli.command {
        Command::GenCorpus(a) => gen_corpus(&a),
        Command::Ingest(a) => {
            let index = ingest(&a.pages, a.labels.as_deref(), a.binarize)?;
            index.save(&a.out)?;
            println!("indexed {} words from {} into {}", index.len(), a.pages.display(), a.out.display());
            Ok(())
        }
        Command::PcaFit(a) => pca_fit(&a),
        Command::Search(a) => search(&a),
        Command::Feedback(a) => feedback(&a),
        Command::Eval(a) => eval(&a),
        Command::Serve(a) => serve(a),
    }
}

fn gen_corpus(a: &GenCorpusArgs) -> Result<(), AppError> {
    let text = match &a.source {
        Some(p) => fs::read_to_string(p).map_err(|e| AppError::Path(p.clone(), e))?,
        None => DEFAULT_SOURCE_TEXT.to_string(),
    };
    let corpus = generate_synthetic_corpus(&text, a.docs, a.seed)?;
    corpus.write_to_dir(&a.out)?;
    let words: usize = corpus.labels.iter().map(Vec::len).sum();
    println!("wrote {} pages, {words} words, to {}", corpus.pages.len(), a.out.display());
    if let Some(path) = &a.index {
        let index = corpus.build_index()?;
        index.save(path)?;
        println!("indexed {} words into {}", index.len(), path.display());
    }
    Ok(())
}

/// Builds an index from a page directory; labels are matched by file stem.
pub fn ingest(pages_dir: &Path, labels_dir: Option<&Path>, threshold: f64) -> Result<CorpusIndex, AppError> {
    let files = pages::page_files(pages_dir).map_err(|e| AppError::Path(pages_dir.to_path_buf(), e))?;
    if files.is_empty() {
        return Err(AppError::Usage(format!("no page images in {}", pages_dir.display())));
    }
    let mut builder = IndexBuilder::new();
    for (doc, file) in files.iter().enumerate() {
        let page = pages::load_image(file, threshold)?;
        let labels = labels_dir.map(|d| pages::load_labels(d, file)).transpose()?;
        let n = builder.add_document(&page, doc as u64, labels.as_deref())?;
        info!("{}: {n} words", file.display());
    }
    Ok(builder.build()?)
}

fn pca_fit(a: &PcaFitArgs) -> Result<(), AppError> {
    let index = CorpusIndex::load(&a.index)?;
    let retention = match a.fixed_m {
        Some(m) => Retention::Fixed(m),
        None => Retention::Variance(a.variance.unwrap_or(DEFAULT_VARIANCE)),
    };
    let model = fit_pca(&index.descriptors().collect::<Vec<_>>(), retention, !a.no_whiten)?;
    print!("{}", pca_summary(&model));
    let out = a.out.as_ref().unwrap_or(&a.index);
    index.with_pca(model)?.save(out)?;
    println!("saved {}", out.display());
    Ok(())
}

pub fn pca_summary(model: &wordspot_core::PcaModel) -> String {
    let mut s = String::new();
    let total: f64 = model.eigenvalues().iter().sum();
    let _ = writeln!(s, "{:>4} {:>14} {:>10}", "k", "eigenvalue", "cumulative");
    let mut cum = 0.0;
    for (k, l) in model.eigenvalues().iter().enumerate() {
        cum += l;
        let mark = if k + 1 == model.dim() { "  <- m" } else { "" };
        let _ = writeln!(s, "{:>4} {:>14.6e} {:>9.4}%{mark}", k + 1, l, 100.0 * cum / total);
    }
    let je = model.reconstruction_error();
    let _ = writeln!(s, "m = {} of {}", model.dim(), model.source_dim());
    let _ = writeln!(s, "whitened = {}", model.is_whitened());
    let _ = writeln!(s, "retained variance = {:.6}", model.retained_variance());
    let _ = writeln!(s, "J_e(m) = {je:.6e}");
    let _ = writeln!(s, "J_e / total variance = {:.6}", if total > 0.0 { je / total } else { 0.0 });
    s
}

fn print_response(r: &SearchResponse, json: bool) -> Result<(), AppError> {
    if json {
        println!("{}", serde_json::to_string_pretty(r)?);
        return Ok(());
    }
    println!(
        "round {}  space {:?}  strategy {}  max distance {:.6}",
        r.round,
        r.space,
        r.params.strategy.name(),
        r.max_distance
    );
    println!("{:>4} {:>8} {:>5} {:>18} {:>8} {:>12}", "rank", "word_id", "doc", "box", "rate", "distance");
    for item in &r.results {
        let b = item.bbox;
        println!(
            "{:>4} {:>8} {:>5} {:>18} {:>8.3} {:>12.6}",
            item.rank,
            item.word_id,
            item.doc_id,
            format!("{},{} {}x{}", b.x, b.y, b.w, b.h),
            item.rate,
            item.distance
        );
    }
    Ok(())
}

fn search(a: &SearchArgs) -> Result<(), AppError> {
    let index = CorpusIndex::load(&a.index)?;
    let source = match (&a.query_image, a.word_id) {
        (Some(p), None) => QuerySource::Image(pages::load_image(p, a.binarize)?),
        (None, Some(id)) => QuerySource::WordId(id),
        _ => return Err(AppError::Usage("give exactly one of --query-image or --word-id".into())),
    };
    let params = a.rocchio.overrides().apply(RocchioParams::default());
    let session = api::start_session("cli".into(), &index, &source, a.subspace, params, a.top)?;
    print_response(&api::search_response(&session, &index, &mut |_| None), a.json)?;
    if let Some(path) = &a.session {
        SessionFile::new(&a.index, session)?.save(path)?;
        info!("session saved to {}", path.display());
    }
    Ok(())
}

fn feedback(a: &FeedbackArgs) -> Result<(), AppError> {
    let mut file = SessionFile::load(&a.session)?;
    let index = file.open_index()?;
    let judgments: Vec<Judgment> = a
        .relevant
        .iter()
        .map(|&id| Judgment::relevant(id))
        .chain(a.nonrelevant.iter().map(|&id| Judgment::nonrelevant(id)))
        .collect();
    api::apply_feedback(&mut file.session, &index, &judgments, &a.rocchio.overrides())?;
    print_response(&api::search_response(&file.session, &index, &mut |_| None), a.json)?;
    file.save(&a.session)
}

/// Parses `--strategies`: the feedback methods to run and whether to add the PCA row.
pub fn parse_strategies(list: &str) -> Result<(Vec<Method>, bool), AppError> {
    if list.trim().eq_ignore_ascii_case("all") {
        return Ok((Method::ALL.to_vec(), true));
    }
    let mut methods = Vec::new();
    let mut pca = false;
    for part in list.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if part.eq_ignore_ascii_case("pca") {
            pca = true;
        } else {
            let m: Method = part.parse().map_err(AppError::Usage)?;
            if !methods.contains(&m) {
                methods.push(m);
            }
        }
    }
    if methods.is_empty() && !pca {
        return Err(AppError::Usage("no strategies selected".into()));
    }
    Ok((methods, pca))
}

pub fn eval_config(a: &EvalArgs) -> EvalConfig {
    let mut params = RocchioParams::default();
    params.alpha = a.alpha.unwrap_or(params.alpha);
    params.beta = a.beta.unwrap_or(params.beta);
    params.gamma = a.gamma.unwrap_or(params.gamma);
    EvalConfig {
        n_queries: a.queries,
        shown: a.shown,
        rounds: a.rounds,
        rate_threshold: a.threshold,
        params,
        seed: a.seed,
        ..EvalConfig::default()
    }
}

pub fn run_eval(index: &CorpusIndex, a: &EvalArgs) -> Result<Comparison, AppError> {
    let (methods, pca) = parse_strategies(&a.strategies)?;
    Ok(compare_methods(index, &eval_config(a), &methods, pca)?)
}

fn eval(a: &EvalArgs) -> Result<(), AppError> {
    let index = CorpusIndex::load(&a.index)?;
    let cmp = run_eval(&index, a)?;
    print!("{}", cmp.to_table());
    for r in &cmp.rows {
        info!("{}: {:.1} us per ranking", r.method, r.mean_rank_micros);
    }
    if let Some(out) = &a.out {
        let mut text = serde_json::to_string_pretty(&cmp)?;
        text.push('\n');
        fs::write(out, text).map_err(|e| AppError::Path(out.clone(), e))?;
        println!("report written to {}", out.display());
    }
    Ok(())
}

fn serve(a: ServeArgs) -> Result<(), AppError> {
    let config = ServerConfig {
        session_timeout: Duration::from_secs(a.session_timeout),
        threshold: a.binarize,
    };
    let initial = match a.index {
        Some(path) => Some(Loaded::open(path, a.pages, a.binarize)?),
        None => None,
    };
    let state = AppState::new(config, initial);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(server::serve(state, a.bind))?;
    Ok(())
}
