//! Supportive logical-form selection.
//!
//! Skeleton embeddings are clustered with k-means; one structure is drawn
//! from each cluster, and then one logical form per structure is chosen
//! greedily so that it is as dissimilar as possible (max-min on the
//! full-form embeddings) from the forms already chosen.

use std::collections::{BTreeSet, HashSet};

use rand::seq::{index, IndexedRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{cosine, embed_all, EmbedError, EmbeddingProvider, EmbeddingVector};
use crate::logic_form::{serialize, skeletonize, LogicalForm};

pub const DEFAULT_K: usize = 12;
pub const KMEANS_TOL: f64 = 1e-6;
pub const KMEANS_MAX_ITER: usize = 100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SelectError {
    #[error("k-means needs at least k={k} distinct points, got {distinct} distinct of {points}")]
    TooFewPoints { k: usize, points: usize, distinct: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("no pool entry left for structure `{0}`")]
    NoCandidateForStructure(String),
    #[error("need at least 2 entries, got {0}")]
    TooFewEntries(usize),
    #[error("clustering covers {clustered} points but the pool has {pool}")]
    ClusteringMismatch { clustered: usize, pool: usize },
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub id: String,
    pub logical_form: LogicalForm,
    pub skeleton: String,
    pub skeleton_vec: EmbeddingVector,
    pub form_vec: EmbeddingVector,
}

/// Embeds skeletons and serialized forms for every `(id, form)` pair.
pub fn build_pool(
    forms: &[(String, LogicalForm)],
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<PoolEntry>, SelectError> {
    let skeletons: Vec<String> = forms.iter().map(|(_, lf)| skeletonize(lf)).collect();
    let texts: Vec<String> = forms.iter().map(|(_, lf)| serialize(lf)).collect();

    // many forms share a skeleton; embed each distinct one once
    let distinct: Vec<String> = skeletons.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let distinct_vecs = embed_all(provider, &distinct)?;
    let form_vecs = embed_all(provider, &texts)?;

    Ok(forms
        .iter()
        .zip(skeletons)
        .zip(form_vecs)
        .map(|(((id, lf), skeleton), form_vec)| {
            let pos = distinct.binary_search(&skeleton).expect("skeleton was collected above");
            PoolEntry {
                id: id.clone(),
                logical_form: lf.clone(),
                skeleton_vec: distinct_vecs[pos].clone(),
                skeleton,
                form_vec,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub k: usize,
    /// Cluster means; not unit length in general.
    pub centroids: Vec<Vec<f64>>,
    /// Cluster index of each input point, in input order.
    pub assignment: Vec<usize>,
    /// Sum of squared distances to the assigned centroid.
    pub inertia: f64,
    /// Inertia after each Lloyd iteration.
    pub history: Vec<f64>,
    pub iterations: usize,
}

impl Clustering {
    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] == cluster).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        self.assignment.iter().for_each(|&c| sizes[c] += 1);
        sizes
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid, lowest index on ties.
fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = squared_distance(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn distinct_count<V: AsRef<[f64]>>(points: &[V]) -> usize {
    points
        .iter()
        .map(|p| p.as_ref().iter().map(|x| x.to_bits()).collect::<Vec<u64>>())
        .collect::<HashSet<_>>()
        .len()
}

fn inertia<V: AsRef<[f64]>>(points: &[V], centroids: &[Vec<f64>], assignment: &[usize]) -> f64 {
    points
        .iter()
        .zip(assignment)
        .map(|(p, &c)| squared_distance(p.as_ref(), &centroids[c]))
        .sum()
}

fn plus_plus_init<V: AsRef<[f64]>>(points: &[V], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let first = rng.random_range(0..points.len());
    let mut centroids = vec![points[first].as_ref().to_vec()];
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p.as_ref(), &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let mut target = rng.random::<f64>() * total;
        let mut pick = d2.iter().rposition(|&d| d > 0.0).expect("distinct points remain");
        for (i, &d) in d2.iter().enumerate() {
            if d > 0.0 && target < d {
                pick = i;
                break;
            }
            target -= d;
        }
        let centroid = points[pick].as_ref().to_vec();
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(squared_distance(p.as_ref(), &centroid));
        }
        centroids.push(centroid);
    }
    centroids
}

/// Assigns every point to its nearest centroid; an empty cluster takes the
/// point farthest from its own centroid and is moved onto it. Repeats until
/// no cluster is empty.
fn assign_and_repair<V: AsRef<[f64]>>(points: &[V], centroids: &mut [Vec<f64>]) -> Vec<usize> {
    let k = centroids.len();
    // each repair puts a centroid exactly on a point, so this terminates
    // well before the bound when at least k points are distinct
    for _ in 0..=k * 4 {
        let assignment: Vec<usize> = points.iter().map(|p| nearest(p.as_ref(), centroids).0).collect();
        let mut sizes = vec![0usize; k];
        assignment.iter().for_each(|&c| sizes[c] += 1);
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return assignment;
        };
        let far = points
            .iter()
            .enumerate()
            .filter(|(i, _)| sizes[assignment[*i]] > 1)
            .map(|(i, p)| (i, squared_distance(p.as_ref(), &centroids[assignment[i]])))
            .filter(|(_, d)| *d > 0.0)
            .fold(None::<(usize, f64)>, |best, cur| match best {
                Some(b) if b.1 >= cur.1 => Some(b),
                _ => Some(cur),
            });
        match far {
            Some((i, _)) => centroids[empty] = points[i].as_ref().to_vec(),
            None => return assignment,
        }
    }
    points.iter().map(|p| nearest(p.as_ref(), centroids).0).collect()
}

/// Seeded k-means++ with Lloyd iterations.
///
/// Stops when no centroid moves by more than [`KMEANS_TOL`] (Euclidean) or
/// after [`KMEANS_MAX_ITER`] iterations. Requires at least `k` distinct
/// points, otherwise some cluster would have to stay empty.
pub fn kmeans<V: AsRef<[f64]>>(points: &[V], k: usize, seed: u64) -> Result<Clustering, SelectError> {
    if k == 0 {
        return Err(SelectError::ZeroK);
    }
    let distinct = distinct_count(points);
    if points.len() < k || distinct < k {
        return Err(SelectError::TooFewPoints { k, points: points.len(), distinct });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(points, k, &mut rng);
    let mut history = Vec::new();
    let mut iterations = 0;
    let dim = points[0].as_ref().len();

    while iterations < KMEANS_MAX_ITER {
        iterations += 1;
        let assignment = assign_and_repair(points, &mut centroids);
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assignment) {
            counts[c] += 1;
            sums[c].iter_mut().zip(p.as_ref()).for_each(|(s, x)| *s += x);
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let mean: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            shift = shift.max(squared_distance(&mean, &centroids[c]).sqrt());
            centroids[c] = mean;
        }
        history.push(inertia(points, &centroids, &assignment));
        if shift < KMEANS_TOL {
            break;
        }
    }

    let assignment = assign_and_repair(points, &mut centroids);
    let final_inertia = inertia(points, &centroids, &assignment);
    Ok(Clustering {
        k,
        centroids,
        assignment,
        inertia: final_inertia,
        history,
        iterations,
    })
}

/// One skeleton per cluster, visiting clusters in index order. Each draw is
/// uniform over the cluster's distinct skeletons, skipping ones already
/// taken by an earlier cluster when the cluster has any alternative.
pub fn pick_structures(clustering: &Clustering, pool: &[PoolEntry], seed: u64) -> Result<Vec<String>, SelectError> {
    if clustering.assignment.len() != pool.len() {
        return Err(SelectError::ClusteringMismatch {
            clustered: clustering.assignment.len(),
            pool: pool.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<String> = Vec::with_capacity(clustering.k);
    for cluster in 0..clustering.k {
        let skeletons: BTreeSet<&str> = clustering
            .members(cluster)
            .into_iter()
            .map(|i| pool[i].skeleton.as_str())
            .collect();
        let all: Vec<&str> = skeletons.into_iter().collect();
        let fresh: Vec<&str> = all.iter().copied().filter(|s| !picked.iter().any(|p| p == s)).collect();
        let choices = if fresh.is_empty() { &all } else { &fresh };
        if let Some(s) = choices.choose(&mut rng) {
            picked.push(s.to_string());
        }
    }
    Ok(picked)
}

/// Index-based core of [`sample_logical_forms`].
pub fn sample_indices(structures: &[String], pool: &[PoolEntry], seed: u64) -> Result<Vec<usize>, SelectError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut selected: Vec<usize> = Vec::with_capacity(structures.len());
    for structure in structures {
        let mut candidates: Vec<usize> = (0..pool.len())
            .filter(|&i| pool[i].skeleton == *structure && !selected.contains(&i))
            .collect();
        candidates.sort_by(|&a, &b| pool[a].id.cmp(&pool[b].id));
        if candidates.is_empty() {
            return Err(SelectError::NoCandidateForStructure(structure.clone()));
        }
        let choice = if selected.is_empty() {
            *candidates.choose(&mut rng).expect("non-empty")
        } else {
            let mut best: Option<(usize, f64)> = None;
            for &c in &candidates {
                let worst = selected
                    .iter()
                    .map(|&s| cosine(&pool[c].form_vec, &pool[s].form_vec))
                    .collect::<Result<Vec<f64>, _>>()?
                    .into_iter()
                    .fold(f64::NEG_INFINITY, f64::max);
                // candidates are id-sorted, so strict `<` keeps the smallest id on ties
                if best.is_none_or(|(_, b)| worst < b) {
                    best = Some((c, worst));
                }
            }
            best.expect("non-empty").0
        };
        selected.push(choice);
    }
    Ok(selected)
}

/// Greedy max-min diverse sampling: one entry per structure, in order. The
/// first is uniform among its candidates; each later one minimises its
/// maximum form-embedding cosine to the entries already chosen, ties going
/// to the smallest id.
pub fn sample_logical_forms(structures: &[String], pool: &[PoolEntry], seed: u64) -> Result<Vec<PoolEntry>, SelectError> {
    Ok(sample_indices(structures, pool, seed)?
        .into_iter()
        .map(|i| pool[i].clone())
        .collect())
}

/// Mean cosine of `form_vec` over all unordered pairs.
pub fn avg_pairwise_similarity(entries: &[PoolEntry]) -> Result<f64, SelectError> {
    let vecs: Vec<&EmbeddingVector> = entries.iter().map(|e| &e.form_vec).collect();
    avg_pairwise_cosine(&vecs)
}

pub fn avg_pairwise_cosine(vecs: &[&EmbeddingVector]) -> Result<f64, SelectError> {
    if vecs.len() < 2 {
        return Err(SelectError::TooFewEntries(vecs.len()));
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..vecs.len() {
        for j in i + 1..vecs.len() {
            total += cosine(vecs[i], vecs[j])?;
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SelectionStrategy {
    /// Cluster, pick structures, diverse sampling.
    #[default]
    Kqg,
    /// Uniform random k-subset of the pool.
    Random,
}

impl std::str::FromStr for SelectionStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "kqg" | "kmeans" => Ok(Self::Kqg),
            "random" => Ok(Self::Random),
            other => Err(format!("unknown selection strategy `{other}` (expected kqg or random)")),
        }
    }
}

impl std::fmt::Display for SelectionStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Kqg => "kqg",
            Self::Random => "random",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub k: usize,
    pub seed: u64,
    pub strategy: SelectionStrategy,
    /// Cluster skeleton embeddings (`true`) or raw form embeddings (`false`).
    pub structure_encoding: bool,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            seed: 0,
            strategy: SelectionStrategy::Kqg,
            structure_encoding: true,
        }
    }
}

/// Uniform random k-subset, returned in pool order.
pub fn random_indices(pool_len: usize, k: usize, seed: u64) -> Result<Vec<usize>, SelectError> {
    if k == 0 {
        return Err(SelectError::ZeroK);
    }
    if pool_len < k {
        return Err(SelectError::TooFewPoints { k, points: pool_len, distinct: pool_len });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, pool_len, k).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Runs the configured selection and returns pool indices in selection order.
pub fn select_indices(pool: &[PoolEntry], config: &SelectionConfig) -> Result<Vec<usize>, SelectError> {
    match config.strategy {
        SelectionStrategy::Random => random_indices(pool.len(), config.k, config.seed),
        SelectionStrategy::Kqg => {
            let vectors: Vec<&[f64]> = pool
                .iter()
                .map(|e| {
                    if config.structure_encoding {
                        e.skeleton_vec.values()
                    } else {
                        e.form_vec.values()
                    }
                })
                .collect();
            let clustering = kmeans(&vectors, config.k, config.seed)?;
            let structures = pick_structures(&clustering, pool, config.seed)?;
            sample_indices(&structures, pool, config.seed)
        }
    }
}

pub fn select(pool: &[PoolEntry], config: &SelectionConfig) -> Result<Vec<PoolEntry>, SelectError> {
    Ok(select_indices(pool, config)?.into_iter().map(|i| pool[i].clone()).collect())
}
