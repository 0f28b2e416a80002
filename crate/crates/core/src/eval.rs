//! Batch evaluation with a simulated judge: random query words, one or more
//! feedback rounds, and precision/recall of the rate-thresholded result set.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{label_occurrences, CorpusIndex};
use crate::feedback::{FeedbackError, FeedbackSession, Judgment, RocchioParams, Strategy, DEFAULT_SHOWN};
use crate::retrieval::{self, QueryVector, RankError, RankedList, RankedResult, Space};
use crate::subspace::{fit_pca, PcaError, Retention, DEFAULT_VARIANCE};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_QUERIES: usize = 30;
pub const DEFAULT_THRESHOLD: f64 = 75.0;
/// Query words need at least this many characters.
pub const MIN_QUERY_LEN: usize = 4;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("relevant set is empty")]
    NoGroundTruth,
    #[error("word {0} has no label")]
    Unlabeled(u64),
    #[error("only {found} query-eligible words, {needed} requested")]
    Vocabulary { found: usize, needed: usize },
    #[error("invalid evaluation config: {0}")]
    Config(String),
    #[error("subspace evaluation needs an index with a PCA model")]
    NoModel,
    #[error(transparent)]
    Feedback(#[from] FeedbackError),
    #[error(transparent)]
    Rank(#[from] RankError),
    #[error(transparent)]
    Pca(#[from] PcaError),
}

/// A row of the comparison table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Baseline,
    PositiveOnly,
    NegativeOnly,
    Combined,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Baseline, Method::PositiveOnly, Method::NegativeOnly, Method::Combined];

    pub fn strategy(self) -> Option<Strategy> {
        match self {
            Method::Baseline => None,
            Method::PositiveOnly => Some(Strategy::PositiveOnly),
            Method::NegativeOnly => Some(Strategy::NegativeOnly),
            Method::Combined => Some(Strategy::Combined),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::PositiveOnly => "positive",
            Method::NegativeOnly => "negative",
            Method::Combined => "combined",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("baseline") || s.eq_ignore_ascii_case("none") {
            return Ok(Method::Baseline);
        }
        Ok(match s.parse::<Strategy>()? {
            Strategy::PositiveOnly => Method::PositiveOnly,
            Strategy::NegativeOnly => Method::NegativeOnly,
            Strategy::Combined => Method::Combined,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub n_queries: usize,
    pub shown: usize,
    pub rounds: usize,
    pub rate_threshold: f64,
    pub method: Method,
    pub params: RocchioParams,
    pub subspace: bool,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_queries: DEFAULT_QUERIES,
            shown: DEFAULT_SHOWN,
            rounds: 1,
            rate_threshold: DEFAULT_THRESHOLD,
            method: Method::Baseline,
            params: RocchioParams::default(),
            subspace: false,
            seed: 42,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.n_queries == 0 {
            return Err(EvalError::Config("n_queries must be at least 1".into()));
        }
        if self.shown == 0 {
            return Err(EvalError::Config("shown must be at least 1".into()));
        }
        if !(0.0..=100.0).contains(&self.rate_threshold) {
            return Err(EvalError::Config(format!("rate threshold {} outside [0, 100]", self.rate_threshold)));
        }
        self.params.validate()?;
        Ok(())
    }

    /// Feedback rounds actually run; the baseline never refines.
    pub fn effective_rounds(&self) -> usize {
        if self.method == Method::Baseline {
            0
        } else {
            self.rounds
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    /// Whether the judge produced usable feedback for this round.
    pub applied: bool,
    pub judgments: usize,
    pub retrieved: usize,
    pub hits: usize,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryReport {
    pub query: String,
    pub source_word_id: u64,
    pub relevant: usize,
    /// Round 0 is the initial ranking.
    pub rounds: Vec<RoundMetrics>,
    pub precision: f64,
    pub recall: f64,
}

/// Wall-clock ranking cost. Not serialized, so reports stay reproducible.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Timing {
    pub rank_calls: usize,
    pub rank_total: Duration,
}

impl Timing {
    pub fn mean_rank_seconds(&self) -> f64 {
        if self.rank_calls == 0 {
            0.0
        } else {
            self.rank_total.as_secs_f64() / self.rank_calls as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub method: String,
    pub space: Space,
    pub config: EvalConfig,
    pub self_match_excluded: bool,
    pub queries: Vec<QueryReport>,
    pub avg_precision: f64,
    pub avg_recall: f64,
    #[serde(skip)]
    pub timing: Timing,
}

/// `(|retrieved ∩ relevant| / |retrieved|, |retrieved ∩ relevant| / |relevant|)`,
/// precision 0 for an empty retrieved set.
pub fn precision_recall(retrieved: &HashSet<u64>, relevant: &HashSet<u64>) -> Result<(f64, f64), EvalError> {
    if relevant.is_empty() {
        return Err(EvalError::NoGroundTruth);
    }
    let hits = retrieved.intersection(relevant).count() as f64;
    let p = if retrieved.is_empty() { 0.0 } else { hits / retrieved.len() as f64 };
    Ok((p, hits / relevant.len() as f64))
}

/// Judges every shown result by exact label match, keeping only the
/// verdicts `strategy` can use.
pub fn feedback_oracle(
    shown: &[RankedResult],
    query_label: &str,
    index: &CorpusIndex,
    strategy: Strategy,
) -> Result<Vec<Judgment>, EvalError> {
    let mut out = Vec::new();
    for r in shown {
        let entry = index.entry(r.word_id).ok_or(FeedbackError::Judgment(r.word_id))?;
        let label = entry.label.as_deref().ok_or(EvalError::Unlabeled(r.word_id))?;
        let relevant = label == query_label;
        if (relevant && strategy.uses_relevant()) || (!relevant && strategy.uses_nonrelevant()) {
            out.push(Judgment { word_id: r.word_id, relevant });
        }
    }
    Ok(out)
}

/// Labels eligible as queries, in label order.
pub fn eligible_queries(index: &CorpusIndex) -> Vec<(String, Vec<u64>)> {
    label_occurrences(index)
        .into_iter()
        .filter(|(label, pos)| label.chars().count() >= MIN_QUERY_LEN && pos.len() >= 2)
        .map(|(label, pos)| (label.to_string(), pos.into_iter().map(|p| index.entries()[p].word_id).collect()))
        .collect()
}

fn score(ranking: &RankedList, threshold: f64, source: u64, relevant: &HashSet<u64>) -> Result<RoundMetrics, EvalError> {
    let retrieved: HashSet<u64> = ranking.at_or_above(threshold).filter(|&id| id != source).collect();
    let (precision, recall) = precision_recall(&retrieved, relevant)?;
    Ok(RoundMetrics {
        applied: true,
        judgments: 0,
        retrieved: retrieved.len(),
        hits: retrieved.intersection(relevant).count(),
        precision,
        recall,
    })
}

fn timed_rank(q: &QueryVector, index: &CorpusIndex, timing: &mut Timing) -> Result<RankedList, RankError> {
    let t = Instant::now();
    let list = retrieval::rank(q, index)?;
    timing.rank_total += t.elapsed();
    timing.rank_calls += 1;
    Ok(list)
}

/// Runs the configured protocol over `n_queries` random query words.
pub fn run_experiment(index: &CorpusIndex, config: &EvalConfig) -> Result<EvalReport, EvalError> {
    config.validate()?;
    let model = if config.subspace {
        Some(index.pca().ok_or(EvalError::NoModel)?)
    } else {
        None
    };
    let pool = eligible_queries(index);
    if pool.len() < config.n_queries {
        return Err(EvalError::Vocabulary {
            found: pool.len(),
            needed: config.n_queries,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let picks = sample(&mut rng, pool.len(), config.n_queries).into_vec();
    let sources: Vec<usize> = picks.iter().map(|&i| rng.random_range(0..pool[i].1.len())).collect();

    let mut params = config.params;
    if let Some(s) = config.method.strategy() {
        params.strategy = s;
    }
    let mut timing = Timing::default();
    let mut queries = Vec::with_capacity(picks.len());
    for (&pick, &src) in picks.iter().zip(&sources) {
        let (label, occurrences) = &pool[pick];
        let source = occurrences[src];
        let relevant: HashSet<u64> = occurrences.iter().copied().filter(|&id| id != source).collect();
        let descriptor = index.entry(source).expect("occurrence ids come from the index").descriptor.as_slice();
        let q0 = match model {
            Some(m) => QueryVector::projected(m, descriptor)?,
            None => QueryVector::original(descriptor)?,
        };

        let initial = timed_rank(&q0, index, &mut timing)?;
        let mut session = FeedbackSession::from_ranking(format!("eval-{pick}"), q0, params, initial, index)?.with_shown(config.shown);
        let mut rounds = vec![score(session.current_ranking(), config.rate_threshold, source, &relevant)?];
        for _ in 0..config.effective_rounds() {
            let shown = session.current_ranking().top(session.shown());
            let judgments = feedback_oracle(shown, label, index, params.strategy)?;
            let applied = !judgments.is_empty();
            if applied {
                let t = Instant::now();
                session.run_feedback_round(&judgments, index)?;
                timing.rank_total += t.elapsed();
                timing.rank_calls += 1;
            }
            let mut m = score(session.current_ranking(), config.rate_threshold, source, &relevant)?;
            m.applied = applied;
            m.judgments = judgments.len();
            rounds.push(m);
        }
        let last = rounds.last().expect("round 0 always present");
        queries.push(QueryReport {
            query: label.clone(),
            source_word_id: source,
            relevant: relevant.len(),
            precision: last.precision,
            recall: last.recall,
            rounds,
        });
    }

    let n = queries.len() as f64;
    let avg_precision = queries.iter().map(|q| q.precision).sum::<f64>() / n;
    let avg_recall = queries.iter().map(|q| q.recall).sum::<f64>() / n;
    Ok(EvalReport {
        schema_version: REPORT_SCHEMA_VERSION,
        method: method_label(config),
        space: model.map_or(Space::Original, |m| Space::Subspace { dim: m.dim() }),
        config: config.clone(),
        self_match_excluded: true,
        queries,
        avg_precision,
        avg_recall,
        timing,
    })
}

fn method_label(config: &EvalConfig) -> String {
    if config.subspace {
        format!("pca-{}", config.method.name())
    } else {
        config.method.name().to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: String,
    pub avg_precision: f64,
    pub avg_recall: f64,
    pub space: Space,
    /// Mean wall time per ranking call, in microseconds. Not serialized.
    #[serde(skip)]
    pub mean_rank_micros: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub schema_version: u32,
    pub seed: u64,
    pub rows: Vec<ComparisonRow>,
    pub reports: Vec<EvalReport>,
}

impl Comparison {
    pub fn row(&self, method: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    /// Method / Precision / Recall table with percentages.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<16} {:>10} {:>10}", "Method", "Precision", "Recall");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<16} {:>9.2}% {:>9.2}%",
                r.method,
                100.0 * r.avg_precision,
                100.0 * r.avg_recall
            );
        }
        out
    }
}

/// Baseline, the three feedback strategies, and a PCA-subspace baseline,
/// all under `base`'s seed.
pub fn compare_strategies(index: &CorpusIndex, base: &EvalConfig) -> Result<Comparison, EvalError> {
    compare_methods(index, base, &Method::ALL, true)
}

/// Runs each of `methods` in the original space, then optionally a
/// PCA-subspace baseline. The PCA row uses the index's model, or fits a
/// whitened one at the default retained variance when there is none.
pub fn compare_methods(
    index: &CorpusIndex,
    base: &EvalConfig,
    methods: &[Method],
    with_pca: bool,
) -> Result<Comparison, EvalError> {
    let mut reports = Vec::with_capacity(methods.len() + 1);
    for &method in methods {
        let config = EvalConfig {
            method,
            subspace: false,
            ..base.clone()
        };
        reports.push(run_experiment(index, &config)?);
    }
    if with_pca {
        let fitted;
        let pca_index = match index.pca() {
            Some(_) => index,
            None => {
                let model =
                    fit_pca(&index.descriptors().collect::<Vec<_>>(), Retention::Variance(DEFAULT_VARIANCE), true)?;
                fitted = index.with_pca(model).map_err(|e| EvalError::Config(e.to_string()))?;
                &fitted
            }
        };
        let config = EvalConfig {
            method: Method::Baseline,
            subspace: true,
            ..base.clone()
        };
        reports.push(run_experiment(pca_index, &config)?);
    }

    let rows = reports
        .iter()
        .map(|r| ComparisonRow {
            method: r.method.clone(),
            avg_precision: r.avg_precision,
            avg_recall: r.avg_recall,
            space: r.space,
            mean_rank_micros: r.timing.mean_rank_seconds() * 1e6,
        })
        .collect();
    Ok(Comparison {
        schema_version: REPORT_SCHEMA_VERSION,
        seed: base.seed,
        rows,
        reports,
    })
}
