//! Demonstration selection by k-means over text embeddings.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PromptError;
use crate::dataset::{Dataset, TriageRecord};
use crate::retrieval::EmbeddingStore;
use crate::seeds::keyed_seed;

pub const KMEANS_ITERATIONS: usize = 25;

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = dist2(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Assigns every point to its nearest centroid, then moves the farthest
/// point of a multi-member cluster into each empty cluster.
fn assign(points: &[&[f64]], centroids: &mut [Vec<f64>]) -> Vec<usize> {
    let mut labels: Vec<usize> = points.iter().map(|p| nearest(p, centroids).0).collect();
    loop {
        let mut sizes = vec![0usize; centroids.len()];
        for &l in &labels {
            sizes[l] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return labels;
        };
        let donor = (0..points.len())
            .filter(|&i| sizes[labels[i]] > 1)
            .max_by(|&a, &b| {
                let da = dist2(points[a], &centroids[labels[a]]);
                let db = dist2(points[b], &centroids[labels[b]]);
                da.total_cmp(&db).then(b.cmp(&a))
            })
            .expect("k ≤ n leaves a multi-member cluster");
        centroids[empty] = points[donor].to_vec();
        labels[donor] = empty;
    }
}

/// Lloyd's k-means with k-means++ seeding and a fixed iteration count.
/// Returns the cluster label of each point and the final centroids.
pub fn kmeans(points: &[&[f64]], k: usize, seed: u64) -> (Vec<usize>, Vec<Vec<f64>>) {
    assert!(k >= 1 && k <= points.len(), "need 1 ≤ k ≤ n");
    let mut rng = ChaCha8Rng::seed_from_u64(keyed_seed(seed, "kmeans/init"));
    let mut chosen = vec![rng.gen_range(0..points.len())];
    while chosen.len() < k {
        let d: Vec<f64> = points
            .iter()
            .map(|p| chosen.iter().map(|&c| dist2(p, points[c])).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = d.iter().rposition(|&x| x > 0.0).expect("positive total");
            for (i, &x) in d.iter().enumerate() {
                if x > 0.0 && target < x {
                    pick = i;
                    break;
                }
                target -= x;
            }
            pick
        } else {
            (0..points.len()).find(|i| !chosen.contains(i)).expect("k ≤ n")
        };
        chosen.push(next);
    }
    let mut centroids: Vec<Vec<f64>> = chosen.iter().map(|&i| points[i].to_vec()).collect();
    let dim = points[0].len();
    let mut labels = assign(points, &mut centroids);
    for _ in 0..KMEANS_ITERATIONS {
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p.iter()) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        let next = assign(points, &mut centroids);
        if next == labels {
            break;
        }
        labels = next;
    }
    (labels, centroids)
}

/// Cluster members ordered nearest-to-centroid first (ties by id).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoCotClusters {
    pub members: Vec<Vec<String>>,
}

impl AutoCotClusters {
    /// One record id per cluster: the member nearest the centroid, skipping
    /// `exclude`.
    pub fn representatives(&self, exclude: Option<&str>) -> Vec<&str> {
        self.members
            .iter()
            .filter_map(|m| m.iter().map(String::as_str).find(|id| Some(*id) != exclude))
            .collect()
    }
}

/// Clusters the labelled training records by text embedding.
pub fn select_demos_autocot(
    train: &Dataset,
    text_store: &EmbeddingStore,
    clusters: usize,
    seed: u64,
) -> Result<AutoCotClusters, PromptError> {
    let mut records: Vec<&TriageRecord> = train.records.iter().filter(|r| r.label.is_some()).collect();
    records.sort_by(|a, b| a.id.cmp(&b.id));
    if clusters == 0 || clusters > records.len() {
        return Err(PromptError::ShotsExceedTrain { shots: clusters, available: records.len() });
    }
    let vectors = records
        .iter()
        .map(|r| text_store.require(&r.id).map(|v| v.values()))
        .collect::<Result<Vec<_>, _>>()?;
    let (labels, centroids) = kmeans(&vectors, clusters, seed);
    let mut members: Vec<Vec<(f64, &str)>> = vec![Vec::new(); clusters];
    for (i, &l) in labels.iter().enumerate() {
        members[l].push((dist2(vectors[i], &centroids[l]), records[i].id.as_str()));
    }
    let members = members
        .into_iter()
        .map(|mut m| {
            m.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
            m.into_iter().map(|(_, id)| id.to_string()).collect()
        })
        .collect();
    Ok(AutoCotClusters { members })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{AcuityLevel, Protocol};
    use crate::retrieval::EmbeddingVector;

    fn setup(points: &[(&str, [f64; 2])]) -> (Dataset, EmbeddingStore) {
        let mut store = EmbeddingStore::new(2);
        let mut records = Vec::new();
        for (id, v) in points {
            let mut r = TriageRecord::new(*id, "x");
            r.label = Some(AcuityLevel::new(3).unwrap());
            records.push(r);
            store.insert(*id, EmbeddingVector::new(v.to_vec()).unwrap()).unwrap();
        }
        (Dataset::new("t", Protocol::Esi, vec![], records).unwrap(), store)
    }

    #[test]
    fn single_cluster_picks_nearest_to_mean() {
        let (t, s) = setup(&[("a", [0.0, 0.0]), ("b", [1.0, 1.0]), ("c", [2.0, 2.0]), ("d", [10.0, 10.0])]);
        // mean (3.25, 3.25): nearest is c
        let c = select_demos_autocot(&t, &s, 1, 0).unwrap();
        assert_eq!(c.representatives(None), ["c"]);
        assert_eq!(c.representatives(Some("c")), ["b"]);
    }

    #[test]
    fn separated_groups_give_one_each() {
        let (t, s) = setup(&[
            ("a1", [1.0, 0.0]),
            ("a2", [1.0, 0.0]),
            ("a3", [1.0, 0.0]),
            ("b1", [0.0, 5.0]),
            ("b2", [0.0, 5.0]),
        ]);
        for seed in 0..20 {
            let c = select_demos_autocot(&t, &s, 2, seed).unwrap();
            let mut reps: Vec<char> = c.representatives(None).iter().map(|id| id.chars().next().unwrap()).collect();
            reps.sort();
            assert_eq!(reps, ['a', 'b'], "seed {seed}");
        }
    }

    #[test]
    fn never_empty_clusters() {
        let pts: Vec<Vec<f64>> = (0..30).map(|i| vec![(i % 3) as f64, 0.0]).collect();
        let refs: Vec<&[f64]> = pts.iter().map(Vec::as_slice).collect();
        let (labels, _) = kmeans(&refs, 5, 4);
        for c in 0..5 {
            assert!(labels.contains(&c));
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let pts: Vec<Vec<f64>> = (0..50).map(|i| vec![((i * 37) % 11) as f64, ((i * 17) % 7) as f64]).collect();
        let refs: Vec<&[f64]> = pts.iter().map(Vec::as_slice).collect();
        assert_eq!(kmeans(&refs, 4, 8), kmeans(&refs, 4, 8));
    }
}
