//! Exact cosine retrieval over a frozen embedding index.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::zero_shot::{PromptSet, DEFAULT_TEMPLATE};
use super::InferenceError;
use crate::alignment::AlignmentModel;
use crate::dataset::Sample;
use crate::numcore::{dot, norm, Matrix};

const UNIT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Image,
    Text,
}

/// Unit-norm embeddings keyed by id, sorted by id.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalIndex {
    ids: Vec<String>,
    embeddings: Matrix,
    modality: Modality,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Hit {
    pub id: String,
    pub cosine: f64,
}

impl RetrievalIndex {
    /// Sorts rows by id and checks ids are unique and rows unit-norm.
    pub fn new(ids: Vec<String>, embeddings: Matrix, modality: Modality) -> Result<Self, InferenceError> {
        if ids.is_empty() {
            return Err(InferenceError::NoSamples);
        }
        if ids.len() != embeddings.rows() {
            return Err(InferenceError::IndexShape {
                ids: ids.len(),
                rows: embeddings.rows(),
            });
        }
        let mut order: Vec<usize> = (0..ids.len()).collect();
        order.sort_by(|&a, &b| ids[a].cmp(&ids[b]));
        for w in order.windows(2) {
            if ids[w[0]] == ids[w[1]] {
                return Err(InferenceError::DuplicateId(ids[w[0]].clone()));
            }
        }
        let embeddings = embeddings.select_rows(&order);
        for (i, row) in embeddings.row_iter().enumerate() {
            let n = norm(row);
            if (n - 1.0).abs() > UNIT_TOLERANCE {
                return Err(InferenceError::NotUnitNorm {
                    id: ids[order[i]].clone(),
                    norm: n,
                });
            }
        }
        let ids = order.iter().map(|&i| ids[i].clone()).collect();
        Ok(Self {
            ids,
            embeddings,
            modality,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn embeddings(&self) -> &Matrix {
        &self.embeddings
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    /// Exact top-k by cosine, descending, ties by ascending id. `exclude`
    /// drops one id from the candidates.
    pub fn search(&self, query: &[f64], k: usize, exclude: Option<&str>) -> Result<Vec<Hit>, InferenceError> {
        if query.len() != self.dim() {
            return Err(InferenceError::QueryDim {
                expected: self.dim(),
                found: query.len(),
            });
        }
        let excluded = exclude.and_then(|id| self.position(id));
        let available = self.len() - usize::from(excluded.is_some());
        if k == 0 {
            return Err(InferenceError::ZeroK);
        }
        if k > available {
            return Err(InferenceError::KTooLarge { k, size: available });
        }
        let mut scored: Vec<(usize, f64)> = self
            .embeddings
            .row_iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != excluded)
            .map(|(i, row)| (i, dot(query, row)))
            .collect();
        // Rows are already in id order, so index order breaks ties by id.
        let by_rank = |a: &(usize, f64), b: &(usize, f64)| match b.1.total_cmp(&a.1) {
            Ordering::Equal => a.0.cmp(&b.0),
            o => o,
        };
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, by_rank);
            scored.truncate(k);
        }
        scored.sort_by(by_rank);
        Ok(scored
            .into_iter()
            .map(|(i, cosine)| Hit {
                id: self.ids[i].clone(),
                cosine,
            })
            .collect())
    }

    fn position(&self, id: &str) -> Option<usize> {
        self.ids.binary_search_by(|p| p.as_str().cmp(id)).ok()
    }
}

/// Embeds every sample through the encoder of `modality`. Text indexes use
/// the sample captions.
pub fn build_index(
    model: &AlignmentModel,
    samples: &[Sample],
    modality: Modality,
) -> Result<RetrievalIndex, InferenceError> {
    if samples.is_empty() {
        return Err(InferenceError::NoSamples);
    }
    let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    let embeddings = match modality {
        Modality::Image => {
            let rows: Vec<&[f64]> = samples.iter().map(|s| s.features.as_slice()).collect();
            model.embed_images(&Matrix::from_rows(&rows))?
        }
        Modality::Text => {
            let captions = samples
                .iter()
                .map(|s| {
                    s.caption
                        .as_deref()
                        .ok_or_else(|| InferenceError::MissingCaption(s.id.clone()))
                })
                .collect::<Result<Vec<_>, _>>()?;
            model.embed_captions(&captions)?
        }
    };
    RetrievalIndex::new(ids, embeddings, modality)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Query {
    /// Free text, or a bare class name rendered through the template.
    Text(String),
    /// Raw image input features.
    Image(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrieveOptions {
    pub template: String,
    /// Id left out of the candidates, for self-retrieval exclusion.
    pub exclude: Option<String>,
}

impl Default for RetrieveOptions {
    fn default() -> Self {
        Self {
            template: DEFAULT_TEMPLATE.to_string(),
            exclude: None,
        }
    }
}

/// The text a query is embedded from.
pub fn render_text_query(model: &AlignmentModel, text: &str, template: &str) -> Result<String, InferenceError> {
    if model.classes.is_empty() {
        return Ok(text.to_string());
    }
    let prompts = PromptSet::new(model.classes.clone(), template)?;
    Ok(prompts.render_query(text))
}

pub fn embed_query(model: &AlignmentModel, query: &Query, template: &str) -> Result<Vec<f64>, InferenceError> {
    let m = match query {
        Query::Text(t) => model.embed_captions(&[render_text_query(model, t, template)?])?,
        Query::Image(x) => model.embed_images(&Matrix::from_rows(&[x.as_slice()]))?,
    };
    Ok(m.row(0).to_vec())
}

pub fn retrieve(
    model: &AlignmentModel,
    query: &Query,
    index: &RetrievalIndex,
    k: usize,
    options: &RetrieveOptions,
) -> Result<Vec<Hit>, InferenceError> {
    let q = embed_query(model, query, &options.template)?;
    index.search(&q, k, options.exclude.as_deref())
}

/// Mean over query rows of the mean top-k cosine, × 100. `exclude[i]`, when
/// given, is left out of the candidates for query `i`.
pub fn mean_topk_cosine(
    queries: &Matrix,
    index: &RetrievalIndex,
    k: usize,
    exclude: Option<&[String]>,
) -> Result<f64, InferenceError> {
    if queries.rows() == 0 {
        return Err(InferenceError::NoSamples);
    }
    let mut total = 0.0;
    for (i, q) in queries.row_iter().enumerate() {
        let skip = exclude.map(|ids| ids[i].as_str());
        let hits = index.search(q, k, skip)?;
        total += hits.iter().map(|h| h.cosine).sum::<f64>() / k as f64;
    }
    Ok(100.0 * total / queries.rows() as f64)
}

/// Average top-k cosine of `queries` against `index`, × 100, unrounded.
pub fn avg_topk_cosine(
    model: &AlignmentModel,
    queries: &[Query],
    index: &RetrievalIndex,
    k: usize,
    options: &RetrieveOptions,
) -> Result<f64, InferenceError> {
    let rows = queries
        .iter()
        .map(|q| embed_query(model, q, &options.template))
        .collect::<Result<Vec<_>, _>>()?;
    if rows.is_empty() {
        return Err(InferenceError::NoSamples);
    }
    let excl = options.exclude.as_ref().map(|id| vec![id.clone(); rows.len()]);
    mean_topk_cosine(&Matrix::from_rows(&rows), index, k, excl.as_deref())
}
