//! Word-cluster feature family: k-means over an external word-embedding
//! table and per-essay binary cluster-membership encoding.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Essay;
use crate::error::{Error, Result};

/// Word vectors of a uniform dimension.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub vectors: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    /// Parse the standard text format: one `word v1 .. vd` entry per line,
    /// with an optional `count dim` header line (auto-detected as a line of
    /// exactly two integers).
    pub fn load(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::Resource {
            kind: "embeddings",
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let mut table = EmbeddingTable::default();
        let mut declared_dim: Option<usize> = None;
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            if idx == 0 && fields.len() == 2 {
                if let (Ok(_), Ok(dim)) = (fields[0].parse::<usize>(), fields[1].parse::<usize>())
                {
                    declared_dim = Some(dim);
                    continue;
                }
            }
            let word = fields[0].to_string();
            let vector: Vec<f64> = fields[1..]
                .iter()
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|e| Error::Data(format!("line {}: bad value {f:?}: {e}", idx + 1)))
                })
                .collect::<Result<_>>()?;
            if vector.is_empty() || vector.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!(
                    "line {}: embedding for {word:?} is empty or non-finite",
                    idx + 1
                )));
            }
            let dim = *declared_dim.get_or_insert(vector.len());
            if table.dim == 0 {
                table.dim = dim;
            }
            if vector.len() != table.dim {
                return Err(Error::Data(format!(
                    "line {}: dimension {} differs from {}",
                    idx + 1,
                    vector.len(),
                    table.dim
                )));
            }
            if table.vectors.insert(word.clone(), vector).is_some() {
                return Err(Error::DuplicateId(word));
            }
        }
        Ok(table)
    }

    /// Scale every vector to unit L2 norm (zero vectors are left untouched),
    /// making Euclidean k-means behave like cosine clustering.
    pub fn normalize(&mut self) {
        for vector in self.vectors.values_mut() {
            let norm = vector.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                for v in vector.iter_mut() {
                    *v /= norm;
                }
            }
        }
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

/// Fitted k-means clustering with a word-to-cluster assignment map.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub dim: usize,
    pub centroids: Vec<Vec<f64>>,
    pub assignments: BTreeMap<String, u32>,
    pub seed: u64,
    pub inertia: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0usize, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = Vec::with_capacity(k);
    centroids.push(points[rng.gen_range(0..points.len())].clone());
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let next = match WeightedIndex::new(&d2) {
            Ok(dist) => dist.sample(rng),
            // All remaining mass at distance 0; pick the first point not yet
            // chosen as a centroid.
            Err(_) => (0..points.len())
                .find(|&i| !centroids.contains(&points[i]))
                .unwrap_or(0),
        };
        centroids.push(points[next].clone());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, centroids.last().unwrap()));
        }
    }
    centroids
}

/// Lloyd's algorithm with seeded k-means++ initialization over every word in
/// the table. Stops when the largest centroid shift drops below `tol` or
/// after `max_iters` passes; clusters left empty by an update are reseeded to
/// the point farthest from its assigned centroid.
pub fn kmeans(
    table: &EmbeddingTable,
    k: usize,
    seed: u64,
    max_iters: usize,
    tol: f64,
) -> Result<ClusterModel> {
    if table.is_empty() {
        return Err(Error::Data("embedding table is empty".into()));
    }
    let words: Vec<&String> = table.vectors.keys().collect();
    let points: Vec<Vec<f64>> = table.vectors.values().cloned().collect();
    let mut distinct: Vec<&[f64]> = Vec::new();
    for p in &points {
        if !distinct.iter().any(|q| *q == p.as_slice()) {
            distinct.push(p);
        }
    }
    if k == 0 || k > distinct.len() {
        return Err(Error::Config(format!(
            "k = {k} outside 1..={} distinct points",
            distinct.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(&points, k, &mut rng);
    let mut assigned: Vec<usize> = vec![0; points.len()];
    let mut prev_inertia = f64::INFINITY;

    for _ in 0..max_iters {
        let assignment: Vec<(usize, f64)> = points
            .par_iter()
            .map(|p| nearest(p, &centroids))
            .collect();
        let inertia: f64 = assignment.iter().map(|(_, d)| d).sum();
        for (i, (c, _)) in assignment.iter().enumerate() {
            assigned[i] = *c;
        }
        debug_assert!(
            inertia <= prev_inertia * (1.0 + 1e-9) + 1e-12,
            "inertia rose from {prev_inertia} to {inertia}"
        );
        prev_inertia = inertia;

        // Sequential centroid update keeps the float accumulation order, and
        // with it the whole fit, deterministic.
        let mut sums = vec![vec![0.0; table.dim]; k];
        let mut counts = vec![0usize; k];
        for (i, point) in points.iter().enumerate() {
            counts[assigned[i]] += 1;
            for (s, v) in sums[assigned[i]].iter_mut().zip(point) {
                *s += v;
            }
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            if counts[c] == 0 {
                // Reseed to the point currently worst-served by its cluster.
                let far = assignment
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
                    .map(|(i, _)| i)
                    .unwrap();
                let new = points[far].clone();
                shift = shift.max(sq_dist(&new, &centroids[c]).sqrt());
                centroids[c] = new;
                prev_inertia = f64::INFINITY;
                continue;
            }
            let new: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            shift = shift.max(sq_dist(&new, &centroids[c]).sqrt());
            centroids[c] = new;
        }
        if shift < tol {
            break;
        }
    }

    // Final assignment against the settled centroids.
    let assignment: Vec<(usize, f64)> = points
        .par_iter()
        .map(|p| nearest(p, &centroids))
        .collect();
    let inertia: f64 = assignment.iter().map(|(_, d)| d).sum();
    let assignments: BTreeMap<String, u32> = words
        .iter()
        .zip(&assignment)
        .map(|(w, (c, _))| ((*w).clone(), *c as u32))
        .collect();

    Ok(ClusterModel {
        k,
        dim: table.dim,
        centroids,
        assignments,
        seed,
        inertia,
    })
}

impl ClusterModel {
    /// Sorted, deduplicated cluster ids of the essay's in-vocabulary words
    /// (case-folded lookup). Set semantics: repetition and order of tokens
    /// are irrelevant.
    pub fn active_clusters(&self, essay: &Essay) -> Vec<u32> {
        let mut ids: Vec<u32> = essay
            .tokens
            .iter()
            .filter_map(|t| self.assignments.get(&t.to_lowercase()).copied())
            .collect();
        ids.sort_unstable();
        ids.dedup();
        debug_assert!(ids.iter().all(|&c| (c as usize) < self.k));
        ids
    }

    /// Binary membership vector of length k.
    pub fn cluster_encode(&self, essay: &Essay) -> Vec<f64> {
        let mut out = vec![0.0; self.k];
        for c in self.active_clusters(essay) {
            out[c as usize] = 1.0;
        }
        out
    }
}
