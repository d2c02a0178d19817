use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RetrievalError;

/// A finite real vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, RetrievalError> {
        if values.iter().all(|v| v.is_finite()) {
            Ok(Self(values))
        } else {
            Err(RetrievalError::NonFinite)
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// dot(a, b) / (‖a‖‖b‖).
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, RetrievalError> {
    if a.dim() != b.dim() {
        return Err(RetrievalError::DimensionMismatch { expected: a.dim(), got: b.dim() });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(RetrievalError::ZeroVector);
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Record id → embedding, all of one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dimension: usize,
    entries: BTreeMap<String, EmbeddingVector>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    dimension: usize,
}

#[derive(Serialize, Deserialize)]
struct Line {
    id: String,
    vector: EmbeddingVector,
}

impl EmbeddingStore {
    pub fn new(dimension: usize) -> Self {
        Self { dimension, entries: BTreeMap::new() }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, id: impl Into<String>, vector: EmbeddingVector) -> Result<(), RetrievalError> {
        if vector.dim() != self.dimension {
            return Err(RetrievalError::DimensionMismatch { expected: self.dimension, got: vector.dim() });
        }
        self.entries.insert(id.into(), vector);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&EmbeddingVector> {
        self.entries.get(id)
    }

    pub fn require(&self, id: &str) -> Result<&EmbeddingVector, RetrievalError> {
        self.get(id).ok_or_else(|| RetrievalError::MissingEmbedding(id.to_string()))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entries.contains_key(id)
    }

    /// Entries in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &EmbeddingVector)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Reads the line-delimited JSON format: a `{"dimension": d}` header line
    /// followed by one `{"id": ..., "vector": [...]}` object per line.
    pub fn load(path: &Path) -> Result<Self, RetrievalError> {
        let err = |message: String| RetrievalError::File { path: path.display().to_string(), message };
        let file = File::open(path).map_err(|e| err(e.to_string()))?;
        let mut lines = BufReader::new(file).lines();
        let header_line = lines.next().ok_or_else(|| err("empty file".into()))?.map_err(|e| err(e.to_string()))?;
        let header: Header = serde_json::from_str(&header_line).map_err(|e| err(format!("header: {e}")))?;
        let mut store = Self::new(header.dimension);
        for (n, line) in lines.enumerate() {
            let line = line.map_err(|e| err(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: Line = serde_json::from_str(&line).map_err(|e| err(format!("line {}: {e}", n + 2)))?;
            let vector = EmbeddingVector::new(entry.vector.into_inner()).map_err(|e| err(e.to_string()))?;
            store.insert(entry.id, vector).map_err(|e| err(e.to_string()))?;
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<(), RetrievalError> {
        let err = |e: std::io::Error| RetrievalError::File { path: path.display().to_string(), message: e.to_string() };
        let mut w = BufWriter::new(File::create(path).map_err(err)?);
        let header = serde_json::to_string(&Header { dimension: self.dimension }).expect("header serializes");
        writeln!(w, "{header}").map_err(err)?;
        for (id, vector) in &self.entries {
            let line = serde_json::to_string(&Line { id: id.clone(), vector: vector.clone() }).expect("entry serializes");
            writeln!(w, "{line}").map_err(err)?;
        }
        w.flush().map_err(err)
    }
}

/// Sorts by similarity descending, then id ascending.
pub(crate) fn rank(scored: &mut [(String, f64)]) {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
}

/// The `k` most similar entries with their cosine similarities.
pub fn knn_scored(store: &EmbeddingStore, query: &EmbeddingVector, k: usize) -> Result<Vec<(String, f64)>, RetrievalError> {
    if k > store.len() {
        return Err(RetrievalError::KTooLarge { k, size: store.len() });
    }
    let mut scored = store
        .iter()
        .map(|(id, v)| cosine_similarity(query, v).map(|s| (id.to_string(), s)))
        .collect::<Result<Vec<_>, _>>()?;
    rank(&mut scored);
    scored.truncate(k);
    Ok(scored)
}

/// Ids of the `k` entries most cosine-similar to `query`, most similar first.
/// Ties are broken by ascending id.
pub fn knn(store: &EmbeddingStore, query: &EmbeddingVector, k: usize) -> Result<Vec<String>, RetrievalError> {
    Ok(knn_scored(store, query, k)?.into_iter().map(|(id, _)| id).collect())
}
