//! Gradient-boosted decision trees for multiclass prediction.
//!
//! One regression tree per class per round fits the softmax cross-entropy
//! gradients; leaves take Newton steps -G/(H+lambda) with the learning rate
//! baked in. Split search is exact greedy over presorted columns. Optional
//! gradient-based one-side sampling keeps the largest gradients and
//! reweights a uniform remainder sample to stay unbiased.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, ModelFileError, Result};
use crate::features::FeatureMatrix;

/// One-side sampling rates. `top_rate` is the fraction of rows kept
/// outright by gradient magnitude; `other_rate` is the fraction sampled
/// uniformly from the remainder and amplified by (1 - top_rate) / other_rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GossConfig {
    pub top_rate: f64,
    pub other_rate: f64,
}

impl GossConfig {
    pub fn validate(&self) -> Result<()> {
        let GossConfig {
            top_rate: a,
            other_rate: b,
        } = *self;
        if !a.is_finite() || !b.is_finite() || a <= 0.0 || a > 1.0 || b < 0.0 || a + b > 1.0 {
            return Err(Error::Config(format!(
                "sampling rates must satisfy 0 < top <= 1, other >= 0, top + other <= 1 \
                 (got top={a}, other={b})"
            )));
        }
        if a < 1.0 && b == 0.0 {
            return Err(Error::Config(
                "one-side sampling with top rate < 1 needs a positive rate for the remainder"
                    .into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GBTConfig {
    pub n_classes: usize,
    pub n_rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub min_samples_leaf: usize,
    pub class_weights: Option<Vec<f64>>,
    pub goss: Option<GossConfig>,
    pub seed: u64,
}

impl GBTConfig {
    pub fn new(n_classes: usize) -> GBTConfig {
        GBTConfig {
            n_classes,
            n_rounds: 200,
            max_depth: 3,
            learning_rate: 0.06,
            lambda: 1.0,
            min_samples_leaf: 20,
            class_weights: None,
            goss: None,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        if self.max_depth == 0 {
            return Err(Error::Config("max_depth must be at least 1".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::Config(format!(
                "learning rate must be positive (got {})",
                self.learning_rate
            )));
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::Config(format!(
                "lambda must be non-negative (got {})",
                self.lambda
            )));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::Config("min_samples_leaf must be at least 1".into()));
        }
        if let Some(w) = &self.class_weights {
            if w.len() != self.n_classes {
                return Err(Error::Config(format!(
                    "{} class weights for {} classes",
                    w.len(),
                    self.n_classes
                )));
            }
            if w.iter().any(|v| !v.is_finite() || *v <= 0.0) {
                return Err(Error::Config("class weights must be positive".into()));
            }
        }
        if let Some(goss) = &self.goss {
            goss.validate()?;
        }
        Ok(())
    }
}

/// w_c = n / (K * n_c): weights average to 1 and equalize total per-class
/// mass. Every class must appear in the labels.
pub fn default_class_weights(labels: &[usize], n_classes: usize) -> Result<Vec<f64>> {
    let mut counts = vec![0usize; n_classes];
    for &y in labels {
        if y >= n_classes {
            return Err(Error::Data(format!(
                "label {y} outside {n_classes} classes"
            )));
        }
        counts[y] += 1;
    }
    let missing: Vec<String> = counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c == 0)
        .map(|(i, _)| i.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Data(format!(
            "cannot weight classes with no training examples: {}",
            missing.join(", ")
        )));
    }
    let n = labels.len() as f64;
    Ok(counts
        .iter()
        .map(|&c| n / (n_classes as f64 * c as f64))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    /// Route a row (dense block plus sorted sparse pairs) to its leaf.
    /// Rows go left when value <= threshold; absent sparse columns read 0.
    pub fn predict(&self, dense: &[f64], sparse: &[(u32, f64)], dense_width: usize) -> f64 {
        let mut id = 0usize;
        loop {
            match self.nodes[id] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    let v = feature_value(dense, sparse, dense_width, feature);
                    id = if v <= threshold {
                        left as usize
                    } else {
                        right as usize
                    };
                }
            }
        }
    }

    /// Longest root-to-leaf path in edges.
    pub fn depth(&self) -> usize {
        self.depth_from(0)
    }

    fn depth_from(&self, id: usize) -> usize {
        match self.nodes[id] {
            Node::Leaf { .. } => 0,
            Node::Split { left, right, .. } => {
                1 + self
                    .depth_from(left as usize)
                    .max(self.depth_from(right as usize))
            }
        }
    }
}

fn feature_value(dense: &[f64], sparse: &[(u32, f64)], dense_width: usize, feature: u32) -> f64 {
    if (feature as usize) < dense_width {
        dense[feature as usize]
    } else {
        let col = feature - dense_width as u32;
        sparse
            .binary_search_by_key(&col, |&(c, _)| c)
            .map(|i| sparse[i].1)
            .unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GBTModel {
    pub config: GBTConfig,
    pub dense_width: usize,
    pub fingerprint: u64,
    /// trees[round][class]
    pub trees: Vec<Vec<Tree>>,
    /// Weighted training logloss after each round.
    pub logloss: Vec<f64>,
}

impl GBTModel {
    pub fn n_classes(&self) -> usize {
        self.config.n_classes
    }

    pub fn check_fingerprint(&self, fingerprint: u64) -> Result<()> {
        if self.fingerprint != fingerprint {
            return Err(ModelFileError::FingerprintMismatch {
                model: self.fingerprint,
                expected: fingerprint,
            }
            .into());
        }
        Ok(())
    }

    /// Class probabilities for one row of a matrix with a matching layout.
    pub fn predict_proba(&self, matrix: &FeatureMatrix, row: usize) -> Result<Vec<f64>> {
        self.check_fingerprint(matrix.fingerprint())?;
        Ok(self.proba_parts(matrix.dense_row(row), matrix.sparse_row(row)))
    }

    pub fn predict_proba_all(&self, matrix: &FeatureMatrix) -> Result<Vec<Vec<f64>>> {
        self.check_fingerprint(matrix.fingerprint())?;
        Ok((0..matrix.rows())
            .map(|i| self.proba_parts(matrix.dense_row(i), matrix.sparse_row(i)))
            .collect())
    }

    pub fn predict(&self, matrix: &FeatureMatrix, row: usize) -> Result<usize> {
        Ok(argmax(&self.predict_proba(matrix, row)?))
    }

    /// Probabilities from raw row parts; callers must have verified the
    /// feature layout matches the one the model was trained on.
    pub fn proba_parts(&self, dense: &[f64], sparse: &[(u32, f64)]) -> Vec<f64> {
        let mut scores = vec![0.0; self.config.n_classes];
        for round in &self.trees {
            for (c, tree) in round.iter().enumerate() {
                scores[c] += tree.predict(dense, sparse, self.dense_width);
            }
        }
        let mut proba = vec![0.0; scores.len()];
        softmax_into(&scores, &mut proba);
        proba
    }
}

/// Index of the largest probability; ties resolve to the lower index.
pub fn argmax(proba: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in proba.iter().enumerate().skip(1) {
        if p > proba[best] {
            best = i;
        }
    }
    best
}

pub fn softmax_into(scores: &[f64], out: &mut [f64]) {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &s) in out.iter_mut().zip(scores) {
        *o = (s - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Keep the ceil(top_rate * n) rows with the largest magnitudes (ties to the
/// lower row) at multiplier 1, plus ceil(other_rate * n) rows sampled
/// uniformly without replacement from the rest at (1 - top_rate) /
/// other_rate. Returns (row, multiplier) pairs sorted by row.
pub fn goss_sample(
    magnitudes: &[f64],
    config: &GossConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(u32, f64)>> {
    config.validate()?;
    let n = magnitudes.len();
    if n == 0 {
        return Err(Error::Data("cannot sample from an empty gradient set".into()));
    }
    if magnitudes.iter().any(|m| !m.is_finite()) {
        return Err(Error::Data("gradient magnitudes must be finite".into()));
    }
    if config.top_rate >= 1.0 {
        return Ok((0..n as u32).map(|i| (i, 1.0)).collect());
    }
    let n_top = ((config.top_rate * n as f64).ceil() as usize).min(n);
    let mut order: Vec<u32> = (0..n as u32).collect();
    order.sort_unstable_by(|&i, &j| {
        magnitudes[j as usize]
            .partial_cmp(&magnitudes[i as usize])
            .unwrap()
            .then(i.cmp(&j))
    });
    let mut kept: Vec<(u32, f64)> = order[..n_top].iter().map(|&i| (i, 1.0)).collect();
    let mut rest: Vec<u32> = order[n_top..].to_vec();
    rest.sort_unstable();
    let n_other = ((config.other_rate * n as f64).ceil() as usize).min(rest.len());
    let multiplier = (1.0 - config.top_rate) / config.other_rate;
    for idx in rand::seq::index::sample(rng, rest.len(), n_other).iter() {
        kept.push((rest[idx], multiplier));
    }
    kept.sort_unstable_by_key(|&(row, _)| row);
    Ok(kept)
}

pub fn train_gbt(matrix: &FeatureMatrix, labels: &[usize], config: &GBTConfig) -> Result<GBTModel> {
    config.validate()?;
    let n = matrix.rows();
    if n == 0 {
        return Err(Error::Data("cannot train on an empty feature matrix".into()));
    }
    if labels.len() != n {
        return Err(Error::Data(format!(
            "{} labels for {} feature rows",
            labels.len(),
            n
        )));
    }
    let k = config.n_classes;
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::Data(format!("label {bad} outside {k} classes")));
    }
    let weights = match &config.class_weights {
        Some(w) => w.clone(),
        None => vec![1.0; k],
    };
    let row_weight: Vec<f64> = labels.iter().map(|&y| weights[y]).collect();
    let weight_sum: f64 = row_weight.iter().sum();

    let presorted = Presorted::build(matrix);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let dense_width = matrix.dense_width();

    let mut scores = vec![0.0f64; n * k];
    let mut proba = vec![0.0f64; n * k];
    let mut grad = vec![0.0f64; n * k];
    let mut hess = vec![0.0f64; n * k];
    let mut g_eff = vec![0.0f64; n];
    let mut h_eff = vec![0.0f64; n];
    let all_rows: Vec<(u32, f64)> = (0..n as u32).map(|r| (r, 1.0)).collect();

    let mut trees = Vec::with_capacity(config.n_rounds);
    let mut logloss = Vec::with_capacity(config.n_rounds);

    for _round in 0..config.n_rounds {
        for i in 0..n {
            softmax_into(&scores[i * k..(i + 1) * k], &mut proba[i * k..(i + 1) * k]);
            let w = row_weight[i];
            for c in 0..k {
                let p = proba[i * k + c];
                let y = if labels[i] == c { 1.0 } else { 0.0 };
                grad[i * k + c] = w * (p - y);
                hess[i * k + c] = w * p * (1.0 - p);
            }
        }

        let kept = match &config.goss {
            Some(goss) if goss.top_rate < 1.0 => {
                let mags: Vec<f64> = (0..n)
                    .map(|i| (0..k).map(|c| grad[i * k + c].abs()).sum())
                    .collect();
                goss_sample(&mags, goss, &mut rng)?
            }
            _ => all_rows.clone(),
        };

        let mut round_trees = Vec::with_capacity(k);
        for c in 0..k {
            for &(row, mult) in &kept {
                let r = row as usize;
                g_eff[r] = grad[r * k + c] * mult;
                h_eff[r] = hess[r * k + c] * mult;
            }
            let tree = build_tree(matrix, &presorted, &g_eff, &h_eff, &kept, config);
            for i in 0..n {
                scores[i * k + c] += tree.predict(matrix.dense_row(i), matrix.sparse_row(i), dense_width);
            }
            round_trees.push(tree);
        }
        trees.push(round_trees);

        let mut loss = 0.0;
        for i in 0..n {
            softmax_into(&scores[i * k..(i + 1) * k], &mut proba[i * k..(i + 1) * k]);
            loss -= row_weight[i] * proba[i * k + labels[i]].max(1e-300).ln();
        }
        logloss.push(loss / weight_sum);
    }

    Ok(GBTModel {
        config: config.clone(),
        dense_width,
        fingerprint: matrix.fingerprint(),
        trees,
        logloss,
    })
}

/// Column orderings computed once per training run: for each dense feature
/// the rows sorted by (value, row); for each sparse column its nonzero
/// (row, value) entries sorted the same way.
struct Presorted {
    dense: Vec<Vec<u32>>,
    sparse: Vec<Vec<(u32, f64)>>,
}

impl Presorted {
    fn build(matrix: &FeatureMatrix) -> Presorted {
        let n = matrix.rows();
        let dw = matrix.dense_width();
        let mut dense = Vec::with_capacity(dw);
        for f in 0..dw {
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_unstable_by(|&i, &j| {
                let a = matrix.dense_row(i as usize)[f];
                let b = matrix.dense_row(j as usize)[f];
                a.partial_cmp(&b).unwrap().then(i.cmp(&j))
            });
            dense.push(idx);
        }
        let mut sparse: Vec<Vec<(u32, f64)>> = vec![Vec::new(); matrix.sparse_width()];
        for i in 0..n {
            for &(col, value) in matrix.sparse_row(i) {
                sparse[col as usize].push((i as u32, value));
            }
        }
        for col in &mut sparse {
            col.sort_unstable_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
        }
        Presorted { dense, sparse }
    }
}

#[derive(Debug, Clone, Copy)]
struct SplitCand {
    gain: f64,
    feature: u32,
    threshold: f64,
}

/// Higher gain wins; ties fall to the lower feature, then lower threshold.
fn better(cand: &SplitCand, current: &Option<SplitCand>) -> bool {
    match current {
        None => true,
        Some(b) => {
            if cand.gain != b.gain {
                cand.gain > b.gain
            } else if cand.feature != b.feature {
                cand.feature < b.feature
            } else {
                cand.threshold < b.threshold
            }
        }
    }
}

/// Midpoint of two distinct values, falling back to the lower value when
/// rounding would put the boundary outside (lo, hi).
fn split_threshold(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) * 0.5;
    if mid > lo && mid < hi {
        mid
    } else {
        lo
    }
}

fn leaf_score(g: f64, h: f64, lambda: f64) -> f64 {
    let denom = h + lambda;
    if denom > 0.0 {
        g * g / denom
    } else {
        0.0
    }
}

fn split_gain(gl: f64, hl: f64, g: f64, h: f64, lambda: f64) -> f64 {
    0.5 * (leaf_score(gl, hl, lambda) + leaf_score(g - gl, h - hl, lambda)
        - leaf_score(g, h, lambda))
}

#[derive(Clone, Copy)]
struct LevelNode {
    id: u32,
    g: f64,
    h: f64,
    n: usize,
}

#[derive(Clone, Copy)]
struct Acc {
    g: f64,
    h: f64,
    n: usize,
    prev: f64,
    seen: bool,
}

const EMPTY_ACC: Acc = Acc {
    g: 0.0,
    h: 0.0,
    n: 0,
    prev: 0.0,
    seen: false,
};

/// Streams each feature's rows in value order through per-node prefix
/// accumulators, proposing a split at every distinct-value boundary.
struct SplitFinder<'a> {
    nodes: &'a [LevelNode],
    min_leaf: usize,
    lambda: f64,
    accs: Vec<Acc>,
    best: Vec<Option<SplitCand>>,
}

impl<'a> SplitFinder<'a> {
    fn new(nodes: &'a [LevelNode], min_leaf: usize, lambda: f64) -> SplitFinder<'a> {
        SplitFinder {
            nodes,
            min_leaf,
            lambda,
            accs: vec![EMPTY_ACC; nodes.len()],
            best: vec![None; nodes.len()],
        }
    }

    fn start_feature(&mut self) {
        self.accs.fill(EMPTY_ACC);
    }

    fn visit(&mut self, slot: usize, feature: u32, value: f64, g: f64, h: f64, count: usize) {
        let acc = &mut self.accs[slot];
        if acc.seen && value > acc.prev {
            let node = &self.nodes[slot];
            if acc.n >= self.min_leaf && node.n - acc.n >= self.min_leaf {
                let gain = split_gain(acc.g, acc.h, node.g, node.h, self.lambda);
                if gain > 0.0 {
                    let cand = SplitCand {
                        gain,
                        feature,
                        threshold: split_threshold(acc.prev, value),
                    };
                    if better(&cand, &self.best[slot]) {
                        self.best[slot] = Some(cand);
                    }
                }
            }
        }
        acc.g += g;
        acc.h += h;
        acc.n += count;
        acc.prev = value;
        acc.seen = true;
    }
}

fn build_tree(
    matrix: &FeatureMatrix,
    presorted: &Presorted,
    g: &[f64],
    h: &[f64],
    kept: &[(u32, f64)],
    config: &GBTConfig,
) -> Tree {
    let n = matrix.rows();
    let dw = matrix.dense_width();
    let mut tree = Tree {
        nodes: vec![Node::Leaf { value: 0.0 }],
    };

    let mut row_node: Vec<u32> = vec![u32::MAX; n];
    let mut node_slot: Vec<i32> = vec![-1; n];
    let mut root = LevelNode {
        id: 0,
        g: 0.0,
        h: 0.0,
        n: 0,
    };
    for &(row, _) in kept {
        let r = row as usize;
        row_node[r] = 0;
        node_slot[r] = 0;
        root.g += g[r];
        root.h += h[r];
        root.n += 1;
    }
    let mut active = vec![root];

    for _depth in 0..config.max_depth {
        if active.is_empty() {
            break;
        }
        let mut finder = SplitFinder::new(&active, config.min_samples_leaf, config.lambda);

        for (f, order) in presorted.dense.iter().enumerate() {
            finder.start_feature();
            for &row in order {
                let slot = node_slot[row as usize];
                if slot < 0 {
                    continue;
                }
                let r = row as usize;
                finder.visit(slot as usize, f as u32, matrix.dense_row(r)[f], g[r], h[r], 1);
            }
        }

        // Sparse columns carry only nonzero entries; each node's zero rows
        // form one implicit group scanned at value 0 between the negative
        // and positive entries.
        let mut nonzero: Vec<(f64, f64, usize)> = vec![(0.0, 0.0, 0); active.len()];
        for (j, col) in presorted.sparse.iter().enumerate() {
            let feature = (dw + j) as u32;
            for e in nonzero.iter_mut() {
                *e = (0.0, 0.0, 0);
            }
            for &(row, _) in col {
                let slot = node_slot[row as usize];
                if slot < 0 {
                    continue;
                }
                let r = row as usize;
                let e = &mut nonzero[slot as usize];
                e.0 += g[r];
                e.1 += h[r];
                e.2 += 1;
            }
            finder.start_feature();
            let pos_start = col.partition_point(|&(_, v)| v < 0.0);
            for &(row, value) in &col[..pos_start] {
                let slot = node_slot[row as usize];
                if slot < 0 {
                    continue;
                }
                let r = row as usize;
                finder.visit(slot as usize, feature, value, g[r], h[r], 1);
            }
            for slot in 0..active.len() {
                let node = active[slot];
                let (nzg, nzh, nzn) = nonzero[slot];
                let zn = node.n - nzn;
                if zn > 0 {
                    finder.visit(slot, feature, 0.0, node.g - nzg, node.h - nzh, zn);
                }
            }
            for &(row, value) in &col[pos_start..] {
                let slot = node_slot[row as usize];
                if slot < 0 {
                    continue;
                }
                let r = row as usize;
                finder.visit(slot as usize, feature, value, g[r], h[r], 1);
            }
        }

        let best = finder.best;
        let first_child = tree.nodes.len() as u32;
        // (node id, feature, threshold, left child id), ascending by node id
        let mut splits: Vec<(u32, u32, f64, u32)> = Vec::new();
        let mut next_active: Vec<LevelNode> = Vec::new();
        for (slot, node) in active.iter().enumerate() {
            match &best[slot] {
                Some(cand) => {
                    let left = tree.nodes.len() as u32;
                    tree.nodes.push(Node::Leaf { value: 0.0 });
                    tree.nodes.push(Node::Leaf { value: 0.0 });
                    tree.nodes[node.id as usize] = Node::Split {
                        feature: cand.feature,
                        threshold: cand.threshold,
                        left,
                        right: left + 1,
                    };
                    splits.push((node.id, cand.feature, cand.threshold, left));
                    for id in [left, left + 1] {
                        next_active.push(LevelNode {
                            id,
                            g: 0.0,
                            h: 0.0,
                            n: 0,
                        });
                    }
                }
                None => {
                    tree.nodes[node.id as usize] = Node::Leaf {
                        value: leaf_value(node.g, node.h, config),
                    };
                }
            }
        }

        for &(row, _) in kept {
            let r = row as usize;
            match splits.binary_search_by_key(&row_node[r], |s| s.0) {
                Ok(idx) => {
                    let (_, feature, threshold, left) = splits[idx];
                    let v = matrix.value(r, feature as usize);
                    let child = if v <= threshold { left } else { left + 1 };
                    row_node[r] = child;
                    let slot = (child - first_child) as usize;
                    node_slot[r] = slot as i32;
                    let node = &mut next_active[slot];
                    node.g += g[r];
                    node.h += h[r];
                    node.n += 1;
                }
                Err(_) => node_slot[r] = -1,
            }
        }
        active = next_active;
    }

    for node in &active {
        tree.nodes[node.id as usize] = Node::Leaf {
            value: leaf_value(node.g, node.h, config),
        };
    }
    tree
}

fn leaf_value(g: f64, h: f64, config: &GBTConfig) -> f64 {
    let denom = h + config.lambda;
    if denom > 0.0 {
        -config.learning_rate * g / denom
    } else {
        0.0
    }
}
