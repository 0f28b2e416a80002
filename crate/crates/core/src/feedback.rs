//! Rocchio query refinement and the per-query feedback session.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::CorpusIndex;
use crate::retrieval::{self, QueryVector, RankError, RankedList, Space};

/// Weight of the original query.
pub const DEFAULT_ALPHA: f64 = 1.0;
/// Weight of the relevant centroid.
pub const DEFAULT_BETA: f64 = 0.82;
/// Weight of the non-relevant centroid.
pub const DEFAULT_GAMMA: f64 = 0.25;
/// Only this many top results of the previous ranking can be judged.
pub const DEFAULT_SHOWN: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeedbackError {
    #[error("no usable feedback: {0}")]
    EmptyFeedback(String),
    #[error("word {0} was not among the results shown in the previous round")]
    Judgment(u64),
    #[error("feedback vectors have dimension {actual}, query has {expected}")]
    Dimension { expected: usize, actual: usize },
    #[error("invalid Rocchio parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Rank(#[from] RankError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    PositiveOnly,
    NegativeOnly,
    Combined,
}

impl Strategy {
    pub fn uses_relevant(self) -> bool {
        matches!(self, Strategy::PositiveOnly | Strategy::Combined)
    }

    pub fn uses_nonrelevant(self) -> bool {
        matches!(self, Strategy::NegativeOnly | Strategy::Combined)
    }

    pub fn name(self) -> &'static str {
        match self {
            Strategy::PositiveOnly => "positive",
            Strategy::NegativeOnly => "negative",
            Strategy::Combined => "combined",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "positive" | "positiveonly" => Ok(Strategy::PositiveOnly),
            "negative" | "negativeonly" => Ok(Strategy::NegativeOnly),
            "combined" | "both" => Ok(Strategy::Combined),
            _ => Err(format!("unknown strategy {s:?} (expected positive, negative or combined)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocchioParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub strategy: Strategy,
    /// Reject `gamma >= beta` unless cleared.
    #[serde(default = "yes")]
    pub enforce_gamma_below_beta: bool,
    /// In the original space, apply the update to offsets from the corpus
    /// feature mean instead of to raw descriptors. Subspace coordinates are
    /// already centered, so this has no effect there.
    #[serde(default = "yes")]
    pub center: bool,
}

fn yes() -> bool {
    true
}

impl Default for RocchioParams {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            gamma: DEFAULT_GAMMA,
            strategy: Strategy::PositiveOnly,
            enforce_gamma_below_beta: true,
            center: true,
        }
    }
}

impl RocchioParams {
    pub fn with_strategy(strategy: Strategy) -> Self {
        Self {
            strategy,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), FeedbackError> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !v.is_finite() || v < 0.0 {
                return Err(FeedbackError::InvalidParams(format!("{name} = {v} must be finite and >= 0")));
            }
        }
        if self.enforce_gamma_below_beta && self.gamma > 0.0 && self.gamma >= self.beta {
            return Err(FeedbackError::InvalidParams(format!(
                "gamma ({}) must be below beta ({})",
                self.gamma, self.beta
            )));
        }
        Ok(())
    }
}

/// A user's verdict on one shown result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgment {
    pub word_id: u64,
    pub relevant: bool,
}

impl Judgment {
    pub fn relevant(word_id: u64) -> Self {
        Self { word_id, relevant: true }
    }

    pub fn nonrelevant(word_id: u64) -> Self {
        Self {
            word_id,
            relevant: false,
        }
    }
}

/// `(weight / |set|) * sum(set)`, or `None` for an empty set.
fn weighted_centroid<V: AsRef<[f64]>>(set: &[V], weight: f64, dim: usize) -> Result<Option<Vec<f64>>, FeedbackError> {
    if set.is_empty() {
        return Ok(None);
    }
    let mut sum = vec![0.0; dim];
    for v in set {
        let v = v.as_ref();
        if v.len() != dim {
            return Err(FeedbackError::Dimension {
                expected: dim,
                actual: v.len(),
            });
        }
        for (s, x) in sum.iter_mut().zip(v) {
            *s += x;
        }
    }
    let coeff = weight / set.len() as f64;
    sum.iter_mut().for_each(|s| *s *= coeff);
    Ok(Some(sum))
}

fn combine(q0: &QueryVector, alpha: f64, offset: Vec<f64>, sign: f64) -> Result<QueryVector, FeedbackError> {
    let values = q0
        .values()
        .iter()
        .zip(&offset)
        .map(|(q, o)| alpha * q + sign * o)
        .collect();
    Ok(QueryVector::new(values, q0.space())?)
}

/// `alpha * q0 + (beta / |relevant|) * sum(relevant)`.
pub fn rocchio_positive<V: AsRef<[f64]>>(
    q0: &QueryVector,
    relevant: &[V],
    alpha: f64,
    beta: f64,
) -> Result<QueryVector, FeedbackError> {
    let pos = weighted_centroid(relevant, beta, q0.values().len())?
        .ok_or_else(|| FeedbackError::EmptyFeedback("no relevant examples".into()))?;
    combine(q0, alpha, pos, 1.0)
}

/// `alpha * q0 - (gamma / |nonrelevant|) * sum(nonrelevant)`.
pub fn rocchio_negative<V: AsRef<[f64]>>(
    q0: &QueryVector,
    nonrelevant: &[V],
    alpha: f64,
    gamma: f64,
) -> Result<QueryVector, FeedbackError> {
    let neg = weighted_centroid(nonrelevant, gamma, q0.values().len())?
        .ok_or_else(|| FeedbackError::EmptyFeedback("no non-relevant examples".into()))?;
    combine(q0, alpha, neg, -1.0)
}

/// Both terms; an empty set drops its term, reducing to the one-sided forms.
pub fn rocchio_combined<V: AsRef<[f64]>, U: AsRef<[f64]>>(
    q0: &QueryVector,
    relevant: &[V],
    nonrelevant: &[U],
    alpha: f64,
    beta: f64,
    gamma: f64,
) -> Result<QueryVector, FeedbackError> {
    let dim = q0.values().len();
    let pos = weighted_centroid(relevant, beta, dim)?;
    let neg = weighted_centroid(nonrelevant, gamma, dim)?;
    match (pos, neg) {
        (None, None) => Err(FeedbackError::EmptyFeedback("no judged examples".into())),
        (Some(p), None) => combine(q0, alpha, p, 1.0),
        (None, Some(n)) => combine(q0, alpha, n, -1.0),
        (Some(p), Some(n)) => {
            let offset = p.iter().zip(&n).map(|(a, b)| a - b).collect();
            combine(q0, alpha, offset, 1.0)
        }
    }
}

/// Applies the strategy selected in `params`.
pub fn refine<V: AsRef<[f64]>, U: AsRef<[f64]>>(
    q0: &QueryVector,
    relevant: &[V],
    nonrelevant: &[U],
    params: &RocchioParams,
) -> Result<QueryVector, FeedbackError> {
    match params.strategy {
        Strategy::PositiveOnly => rocchio_positive(q0, relevant, params.alpha, params.beta),
        Strategy::NegativeOnly => rocchio_negative(q0, nonrelevant, params.alpha, params.gamma),
        Strategy::Combined => rocchio_combined(q0, relevant, nonrelevant, params.alpha, params.beta, params.gamma),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRound {
    pub judgments: Vec<Judgment>,
    pub ranking: RankedList,
}

/// Live state of one query and its feedback rounds.
///
/// Every refinement is recomputed from the original query with the union
/// of all judgments so far; a later verdict on the same word replaces an
/// earlier one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackSession {
    pub session_id: String,
    q0: QueryVector,
    q_current: QueryVector,
    params: RocchioParams,
    shown: usize,
    initial: RankedList,
    rounds: Vec<FeedbackRound>,
    verdicts: BTreeMap<u64, bool>,
    /// Corpus feature mean for original-space sessions.
    #[serde(default)]
    origin: Option<Vec<f64>>,
}

impl FeedbackSession {
    /// Ranks `q0` and opens a session around it.
    pub fn start(
        session_id: impl Into<String>,
        q0: QueryVector,
        params: RocchioParams,
        index: &CorpusIndex,
    ) -> Result<Self, FeedbackError> {
        let initial = retrieval::rank(&q0, index)?;
        Self::from_ranking(session_id, q0, params, initial, index)
    }

    /// Opens a session around a ranking of `q0` against `index` that the
    /// caller already holds.
    pub fn from_ranking(
        session_id: impl Into<String>,
        q0: QueryVector,
        params: RocchioParams,
        initial: RankedList,
        index: &CorpusIndex,
    ) -> Result<Self, FeedbackError> {
        params.validate()?;
        let origin = (q0.space() == Space::Original).then(|| index.feature_mean().to_vec());
        if initial.space != q0.space() {
            return Err(RankError::Space {
                query: q0.space(),
                index: Some(initial.space),
            }
            .into());
        }
        Ok(Self {
            session_id: session_id.into(),
            q_current: q0.clone(),
            q0,
            params,
            shown: DEFAULT_SHOWN,
            initial,
            rounds: Vec::new(),
            verdicts: BTreeMap::new(),
            origin,
        })
    }

    pub fn with_shown(mut self, shown: usize) -> Self {
        self.shown = shown.max(1);
        self
    }

    pub fn q0(&self) -> &QueryVector {
        &self.q0
    }

    pub fn q_current(&self) -> &QueryVector {
        &self.q_current
    }

    pub fn params(&self) -> &RocchioParams {
        &self.params
    }

    pub fn set_params(&mut self, params: RocchioParams) -> Result<(), FeedbackError> {
        params.validate()?;
        self.params = params;
        Ok(())
    }

    pub fn shown(&self) -> usize {
        self.shown
    }

    pub fn space(&self) -> Space {
        self.q0.space()
    }

    pub fn rounds(&self) -> &[FeedbackRound] {
        &self.rounds
    }

    /// Number of completed feedback rounds.
    pub fn round_index(&self) -> usize {
        self.rounds.len()
    }

    pub fn initial_ranking(&self) -> &RankedList {
        &self.initial
    }

    pub fn current_ranking(&self) -> &RankedList {
        self.rounds.last().map_or(&self.initial, |r| &r.ranking)
    }

    /// Judgments accumulated over all rounds.
    pub fn verdicts(&self) -> impl Iterator<Item = Judgment> + '_ {
        self.verdicts.iter().map(|(&word_id, &relevant)| Judgment { word_id, relevant })
    }

    fn row<'a>(&self, index: &'a CorpusIndex, word_id: u64) -> Result<&'a [f64], FeedbackError> {
        let pos = index.position(word_id).ok_or(FeedbackError::Judgment(word_id))?;
        let (matrix, dim) = match self.space() {
            Space::Original => (index.descriptor_matrix(), crate::features::DESCRIPTOR_LEN),
            Space::Subspace { dim } => match (index.projected_matrix(), index.pca()) {
                (Some(m), Some(model)) if model.dim() == dim => (m, dim),
                _ => {
                    return Err(RankError::Space {
                        query: self.space(),
                        index: index.pca().map(|m| Space::Subspace { dim: m.dim() }),
                    }
                    .into())
                }
            },
        };
        Ok(&matrix[pos * dim..(pos + 1) * dim])
    }

    /// Applies one round of judgments and re-ranks.
    pub fn run_feedback_round(&mut self, judgments: &[Judgment], index: &CorpusIndex) -> Result<&RankedList, FeedbackError> {
        if judgments.is_empty() {
            return Err(FeedbackError::EmptyFeedback("no judgments supplied".into()));
        }
        let shown = self.current_ranking().top(self.shown);
        for j in judgments {
            if !shown.iter().any(|r| r.word_id == j.word_id) {
                return Err(FeedbackError::Judgment(j.word_id));
            }
        }
        let strategy = self.params.strategy;
        let usable = judgments
            .iter()
            .any(|j| (j.relevant && strategy.uses_relevant()) || (!j.relevant && strategy.uses_nonrelevant()));
        if !usable {
            return Err(FeedbackError::EmptyFeedback(format!(
                "{} feedback needs at least one {} judgment",
                strategy.name(),
                if strategy == Strategy::PositiveOnly { "relevant" } else { "non-relevant" }
            )));
        }

        let mut verdicts = self.verdicts.clone();
        for j in judgments {
            verdicts.insert(j.word_id, j.relevant);
        }
        let mut relevant = Vec::new();
        let mut nonrelevant = Vec::new();
        for (&id, &rel) in &verdicts {
            let row = self.row(index, id)?;
            if rel {
                relevant.push(row);
            } else {
                nonrelevant.push(row);
            }
        }
        let q_m = match (&self.origin, self.params.center) {
            (Some(origin), true) => {
                let shift = |v: &[f64]| v.iter().zip(origin).map(|(a, o)| a - o).collect::<Vec<f64>>();
                let q0 = QueryVector::new(shift(self.q0.values()), self.space())?;
                let relevant: Vec<Vec<f64>> = relevant.into_iter().map(shift).collect();
                let nonrelevant: Vec<Vec<f64>> = nonrelevant.into_iter().map(shift).collect();
                let offset = refine(&q0, &relevant, &nonrelevant, &self.params)?;
                let values = offset.values().iter().zip(origin).map(|(v, o)| v + o).collect();
                QueryVector::new(values, self.space())?
            }
            _ => refine(&self.q0, &relevant, &nonrelevant, &self.params)?,
        };
        let ranking = retrieval::rank(&q_m, index)?;

        self.verdicts = verdicts;
        self.q_current = q_m;
        self.rounds.push(FeedbackRound {
            judgments: judgments.to_vec(),
            ranking,
        });
        Ok(&self.rounds.last().expect("just pushed").ranking)
    }
}

/// Free-function form of [`FeedbackSession::run_feedback_round`].
pub fn run_feedback_round<'s>(
    session: &'s mut FeedbackSession,
    judgments: &[Judgment],
    index: &CorpusIndex,
) -> Result<&'s RankedList, FeedbackError> {
    session.run_feedback_round(judgments, index)
}
