//! Wire types shared by the CLI `--json` output and the HTTP service, and
//! the query plumbing both go through.

use serde::{Deserialize, Serialize};
use wordspot_core::features::describe_word_image;
use wordspot_core::{
    CorpusIndex, FeedbackSession, Judgment, PageImage, QueryVector, RankedList, RocchioParams, Space, Strategy,
    WordBox, WordEntry,
};

use crate::error::AppError;

pub const DEFAULT_TOP: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultItem {
    /// 1-based position in the ranking.
    pub rank: usize,
    pub word_id: u64,
    pub doc_id: u64,
    #[serde(rename = "box")]
    pub bbox: WordBox,
    pub rate: f64,
    pub distance: f64,
    /// `/v1/thumbnails/{hash}` when page images are available.
    pub thumbnail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResponse {
    pub session_id: String,
    /// 0 for the initial ranking, then one more per feedback round.
    pub round: usize,
    pub space: Space,
    pub params: RocchioParams,
    pub max_distance: f64,
    pub results: Vec<ResultItem>,
}

/// Optional per-request overrides of the Rocchio settings.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsOverride {
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    pub strategy: Option<Strategy>,
    pub center: Option<bool>,
    pub enforce_gamma_below_beta: Option<bool>,
}

impl ParamsOverride {
    pub fn apply(&self, mut p: RocchioParams) -> RocchioParams {
        p.alpha = self.alpha.unwrap_or(p.alpha);
        p.beta = self.beta.unwrap_or(p.beta);
        p.gamma = self.gamma.unwrap_or(p.gamma);
        p.strategy = self.strategy.unwrap_or(p.strategy);
        p.center = self.center.unwrap_or(p.center);
        p.enforce_gamma_below_beta = self.enforce_gamma_below_beta.unwrap_or(p.enforce_gamma_below_beta);
        p
    }

    pub fn is_empty(&self) -> bool {
        *self == Self::default()
    }
}

pub enum QuerySource {
    WordId(u64),
    Image(PageImage),
}

/// The 93-component descriptor for a query.
pub fn query_descriptor(index: &CorpusIndex, source: &QuerySource) -> Result<Vec<f64>, AppError> {
    match source {
        QuerySource::WordId(id) => Ok(index.entry(*id).ok_or(AppError::UnknownWord(*id))?.descriptor.to_vec()),
        QuerySource::Image(img) => Ok(describe_word_image(img)?.to_vec()),
    }
}

/// Wraps a descriptor as a query in the original space or the index's subspace.
pub fn build_query(index: &CorpusIndex, descriptor: &[f64], subspace: bool) -> Result<QueryVector, AppError> {
    if subspace {
        let model = index.pca().ok_or(AppError::NoModel)?;
        Ok(QueryVector::projected(model, descriptor)?)
    } else {
        Ok(QueryVector::original(descriptor)?)
    }
}

pub fn start_session(
    session_id: String,
    index: &CorpusIndex,
    source: &QuerySource,
    subspace: bool,
    params: RocchioParams,
    top: usize,
) -> Result<FeedbackSession, AppError> {
    if top == 0 {
        return Err(AppError::Usage("top must be at least 1".into()));
    }
    let q0 = build_query(index, &query_descriptor(index, source)?, subspace)?;
    Ok(FeedbackSession::start(session_id, q0, params, index)?.with_shown(top))
}

/// Applies parameter overrides, then one round of judgments. On failure the
/// session keeps its previous parameters.
pub fn apply_feedback(
    session: &mut FeedbackSession,
    index: &CorpusIndex,
    judgments: &[Judgment],
    overrides: &ParamsOverride,
) -> Result<(), AppError> {
    let previous = *session.params();
    if !overrides.is_empty() {
        session.set_params(overrides.apply(previous))?;
    }
    if let Err(e) = session.run_feedback_round(judgments, index) {
        session.set_params(previous).expect("previous params were valid");
        return Err(e.into());
    }
    Ok(())
}

pub fn result_items(
    list: &RankedList,
    index: &CorpusIndex,
    top: usize,
    thumbnail: &mut dyn FnMut(&WordEntry) -> Option<String>,
) -> Vec<ResultItem> {
    list.top(top)
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let entry = index.entry(r.word_id).expect("ranked ids come from the index");
            ResultItem {
                rank: i + 1,
                word_id: r.word_id,
                doc_id: entry.doc_id,
                bbox: entry.bbox,
                rate: r.rate,
                distance: r.distance,
                thumbnail: thumbnail(entry),
            }
        })
        .collect()
}

pub fn search_response(
    session: &FeedbackSession,
    index: &CorpusIndex,
    thumbnail: &mut dyn FnMut(&WordEntry) -> Option<String>,
) -> SearchResponse {
    let list = session.current_ranking();
    SearchResponse {
        session_id: session.session_id.clone(),
        round: session.round_index(),
        space: session.space(),
        params: *session.params(),
        max_distance: list.max_distance,
        results: result_items(list, index, session.shown(), thumbnail),
    }
}
