//! Two-stage retrieval: text-embedding pool of 3k, then top k by vitals similarity.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use super::store::rank;
use super::{cosine_similarity, EmbeddingStore, EmbeddingVector, RetrievalError, VitalsNormalizer};
use crate::dataset::{Dataset, TriageRecord};

/// Stage-1 pool size for `k` final demonstrations.
pub fn pool_size(k: usize) -> usize {
    3 * k
}

/// Cosine similarity where an all-zero vitals vector (every component at the
/// training mean or imputed) carries no direction and scores 0.
fn vitals_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, RetrievalError> {
    match cosine_similarity(a, b) {
        Err(RetrievalError::ZeroVector) => Ok(0.0),
        other => other,
    }
}

/// Retrieves `k` training records for `query`, most similar first.
///
/// Stage 1 keeps the `3k` training records whose text embeddings are most
/// cosine-similar to the query's; stage 2 ranks that pool by cosine
/// similarity of normalized vitals vectors. Ties are broken by ascending id
/// in both stages. The query itself is never returned, even if it appears in
/// `train`.
pub fn kate_retrieve<'a>(
    query: &TriageRecord,
    train: &'a Dataset,
    text_store: &EmbeddingStore,
    normalizer: &VitalsNormalizer,
    k: usize,
) -> Result<Vec<&'a TriageRecord>, RetrievalError> {
    let ranking = text_ranking(query, train, text_store)?;
    select(query, train, &ranking, normalizer, k)
}

/// Full stage-1 ranking of the training pool (excluding the query) as
/// indices into `train.records`.
fn text_ranking(query: &TriageRecord, train: &Dataset, text_store: &EmbeddingStore) -> Result<Vec<usize>, RetrievalError> {
    let q = text_store.require(&query.id)?;
    let mut scored = Vec::with_capacity(train.len());
    let mut index = HashMap::with_capacity(train.len());
    for (i, r) in train.records.iter().enumerate() {
        if r.id == query.id {
            continue;
        }
        let sim = cosine_similarity(q, text_store.require(&r.id)?)?;
        scored.push((r.id.clone(), sim));
        index.insert(r.id.as_str(), i);
    }
    rank(&mut scored);
    Ok(scored.iter().map(|(id, _)| index[id.as_str()]).collect())
}

fn select<'a>(
    query: &TriageRecord,
    train: &'a Dataset,
    ranking: &[usize],
    normalizer: &VitalsNormalizer,
    k: usize,
) -> Result<Vec<&'a TriageRecord>, RetrievalError> {
    let needed = pool_size(k);
    if needed > ranking.len() {
        return Err(RetrievalError::PoolTooSmall { needed, available: ranking.len() });
    }
    let qv = normalizer.vector(query);
    let mut scored = Vec::with_capacity(needed);
    for &i in &ranking[..needed] {
        let r = &train.records[i];
        scored.push((r.id.clone(), vitals_similarity(&qv, &normalizer.vector(r))?, i));
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(scored.into_iter().take(k).map(|(_, _, i)| &train.records[i]).collect())
}

/// KATE retrieval over a fixed training set that memoizes each query's
/// stage-1 text ranking, so different `k` reuse the same ranking.
pub struct KateRetriever<'a> {
    train: &'a Dataset,
    text_store: &'a EmbeddingStore,
    normalizer: &'a VitalsNormalizer,
    rankings: Mutex<HashMap<String, Arc<Vec<usize>>>>,
}

impl<'a> KateRetriever<'a> {
    pub fn new(train: &'a Dataset, text_store: &'a EmbeddingStore, normalizer: &'a VitalsNormalizer) -> Self {
        Self { train, text_store, normalizer, rankings: Mutex::new(HashMap::new()) }
    }

    pub fn train(&self) -> &'a Dataset {
        self.train
    }

    pub fn retrieve(&self, query: &TriageRecord, k: usize) -> Result<Vec<&'a TriageRecord>, RetrievalError> {
        let cached = self.rankings.lock().expect("ranking cache poisoned").get(&query.id).cloned();
        let ranking = match cached {
            Some(r) => r,
            None => {
                let r = Arc::new(text_ranking(query, self.train, self.text_store)?);
                self.rankings.lock().expect("ranking cache poisoned").insert(query.id.clone(), Arc::clone(&r));
                r
            }
        };
        select(query, self.train, &ranking, self.normalizer, k)
    }

    /// Number of memoized stage-1 rankings.
    pub fn cached_rankings(&self) -> usize {
        self.rankings.lock().expect("ranking cache poisoned").len()
    }
}
