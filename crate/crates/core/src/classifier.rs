//! Gradient-boosted decision trees with logistic loss.
//!
//! Split finding is exact and greedy: every feature is scanned in presorted
//! order, one tree level at a time. Gains use the second-order objective with
//! L2 leaf regularization.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::features::{registry, FeatureVector, RegistryKind};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ClassifierError {
    #[error("degenerate dataset: {0}")]
    DegenerateDataset(String),
    #[error("registry mismatch: model expects {expected}, got {got}")]
    RegistryMismatch { expected: String, got: String },
    #[error("fold {fold} lacks one of the classes")]
    DegenerateFold { fold: usize },
    #[error("need at least 2 folds, got {0}")]
    InvalidFolds(usize),
    #[error("corrupt model: {0}")]
    CorruptModel(String),
    #[error("bad dataset: {0}")]
    BadDataset(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> ClassifierError {
    ClassifierError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Labeled feature rows sharing one registry.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub registry_id: String,
    pub feature_names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn new(registry_id: impl Into<String>, feature_names: Vec<String>) -> Self {
        Self {
            registry_id: registry_id.into(),
            feature_names,
            rows: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn for_registry(kind: RegistryKind) -> Self {
        let reg = registry(kind);
        Self::new(reg.id(), reg.names().into_iter().map(String::from).collect())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    pub fn push_row(&mut self, values: Vec<f64>, label: bool) -> Result<(), ClassifierError> {
        if values.len() != self.n_features() {
            return Err(ClassifierError::BadDataset(format!(
                "row has {} values, expected {}",
                values.len(),
                self.n_features()
            )));
        }
        self.rows.push(values);
        self.labels.push(u8::from(label));
        Ok(())
    }

    pub fn push(&mut self, v: &FeatureVector, label: bool) -> Result<(), ClassifierError> {
        if v.registry_id != self.registry_id {
            return Err(ClassifierError::RegistryMismatch {
                expected: self.registry_id.clone(),
                got: v.registry_id.clone(),
            });
        }
        self.push_row(v.values.clone(), label)
    }

    pub fn extend(&mut self, other: &Dataset) -> Result<(), ClassifierError> {
        if other.registry_id != self.registry_id {
            return Err(ClassifierError::RegistryMismatch {
                expected: self.registry_id.clone(),
                got: other.registry_id.clone(),
            });
        }
        self.rows.extend(other.rows.iter().cloned());
        self.labels.extend(other.labels.iter().copied());
        Ok(())
    }

    fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            registry_id: self.registry_id.clone(),
            feature_names: self.feature_names.clone(),
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Header row of feature names plus `label`.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<&str> = self.feature_names.iter().map(String::as_str).collect();
        header.push("label");
        w.write_record(&header).expect("in-memory write");
        for (row, label) in self.rows.iter().zip(&self.labels) {
            let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            rec.push(label.to_string());
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }

    /// Parse CSV; the registry id is inferred from the header when it names
    /// a known registry and is `custom` otherwise.
    pub fn from_csv(text: &str) -> Result<Dataset, ClassifierError> {
        let bad = |e: csv::Error| ClassifierError::BadDataset(e.to_string());
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> = r.headers().map_err(bad)?.iter().map(String::from).collect();
        let Some((last, names)) = header.split_last() else {
            return Err(ClassifierError::BadDataset("empty header".into()));
        };
        if last != "label" {
            return Err(ClassifierError::BadDataset("last column must be `label`".into()));
        }
        let registry_id = [RegistryKind::Breakage, RegistryKind::Tracking]
            .into_iter()
            .map(registry)
            .find(|reg| reg.names() == names.iter().map(String::as_str).collect::<Vec<_>>())
            .map_or_else(|| "custom".to_string(), |reg| reg.id().to_string());
        let mut ds = Dataset::new(registry_id, names.to_vec());
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(bad)?;
            let mut values = Vec::with_capacity(names.len());
            for cell in rec.iter().take(names.len()) {
                let v: f64 = cell
                    .trim()
                    .parse()
                    .map_err(|_| ClassifierError::BadDataset(format!("row {}: `{cell}` is not a number", line + 1)))?;
                if !v.is_finite() {
                    return Err(ClassifierError::BadDataset(format!("row {}: non-finite value", line + 1)));
                }
                values.push(v);
            }
            let label = match rec.get(names.len()).map(str::trim) {
                Some("1") => true,
                Some("0") => false,
                other => {
                    return Err(ClassifierError::BadDataset(format!(
                        "row {}: label must be 0 or 1, got {other:?}",
                        line + 1
                    )))
                }
            };
            ds.push_row(values, label)?;
        }
        Ok(ds)
    }

    pub fn load(path: &Path) -> Result<Dataset, ClassifierError> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        Dataset::from_csv(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), ClassifierError> {
        fs::write(path, self.to_csv()).map_err(|e| io_err(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub trees: usize,
    pub depth: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// L2 penalty on leaf weights.
    pub lambda: f64,
    /// Fraction of rows sampled per tree; 1.0 uses all rows.
    pub subsample: f64,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            trees: 200,
            depth: 6,
            learning_rate: 0.1,
            seed: 0,
            lambda: 1.0,
            subsample: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Node {
    /// `x[feature] <= threshold` goes left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn score(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    /// Split features referenced anywhere in the tree.
    pub fn features(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Split { feature, .. } => Some(*feature),
            Node::Leaf { .. } => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub format_version: u32,
    pub registry_id: String,
    pub n_features: usize,
    pub learning_rate: f64,
    pub base_score: f64,
    pub seed: u64,
    pub params: TrainParams,
    pub trees: Vec<Tree>,
}

impl Model {
    /// A model with no trees: every prediction is `sigmoid(base_score)`.
    pub fn constant(registry_id: impl Into<String>, n_features: usize, base_score: f64) -> Self {
        Self {
            format_version: MODEL_FORMAT_VERSION,
            registry_id: registry_id.into(),
            n_features,
            learning_rate: 0.0,
            base_score,
            seed: 0,
            params: TrainParams {
                trees: 0,
                ..TrainParams::default()
            },
            trees: Vec::new(),
        }
    }

    pub fn margin(&self, x: &[f64]) -> f64 {
        self.base_score + self.trees.iter().map(|t| t.score(x)).sum::<f64>()
    }

    pub fn predict_row(&self, x: &[f64]) -> f64 {
        sigmoid(self.margin(x))
    }

    pub fn uses_feature(&self, j: usize) -> bool {
        self.trees.iter().any(|t| t.features().any(|f| f == j))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Model, ClassifierError> {
        let m: Model = serde_json::from_str(text).map_err(|e| ClassifierError::CorruptModel(e.to_string()))?;
        m.check()?;
        Ok(m)
    }

    fn check(&self) -> Result<(), ClassifierError> {
        let corrupt = |s: String| Err(ClassifierError::CorruptModel(s));
        if self.format_version != MODEL_FORMAT_VERSION {
            return corrupt(format!("unsupported format_version {}", self.format_version));
        }
        if !self.base_score.is_finite() {
            return corrupt("non-finite base_score".into());
        }
        for (t, tree) in self.trees.iter().enumerate() {
            if tree.nodes.is_empty() {
                return corrupt(format!("tree {t} has no nodes"));
            }
            for (i, node) in tree.nodes.iter().enumerate() {
                match node {
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => {
                        if *feature >= self.n_features {
                            return corrupt(format!("tree {t} node {i}: feature {feature} out of range"));
                        }
                        // children always follow their parent, which rules out cycles
                        if *left <= i || *right <= i || *left >= tree.nodes.len() || *right >= tree.nodes.len() {
                            return corrupt(format!("tree {t} node {i}: bad child index"));
                        }
                        if threshold.is_nan() {
                            return corrupt(format!("tree {t} node {i}: NaN threshold"));
                        }
                    }
                    Node::Leaf { value } if !value.is_finite() => {
                        return corrupt(format!("tree {t} node {i}: non-finite leaf"));
                    }
                    Node::Leaf { .. } => {}
                }
            }
        }
        Ok(())
    }
}

pub fn save_model(model: &Model, path: &Path) -> Result<(), ClassifierError> {
    fs::write(path, model.to_json()).map_err(|e| io_err(path, e))
}

pub fn load_model(path: &Path) -> Result<Model, ClassifierError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    Model::from_json(&text)
}

/// Probability that `x` is positive.
pub fn predict(model: &Model, x: &FeatureVector) -> Result<f64, ClassifierError> {
    if x.registry_id != model.registry_id || x.values.len() != model.n_features {
        return Err(ClassifierError::RegistryMismatch {
            expected: model.registry_id.clone(),
            got: x.registry_id.clone(),
        });
    }
    Ok(model.predict_row(&x.values))
}

#[derive(Debug, Clone, Copy)]
struct NodeStats {
    g: f64,
    h: f64,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

fn leaf_weight(s: NodeStats, lambda: f64) -> f64 {
    -s.g / (s.h + lambda)
}

fn score(g: f64, h: f64, lambda: f64) -> f64 {
    g * g / (h + lambda)
}

fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    if m < b {
        m
    } else {
        a
    }
}

const UNASSIGNED: usize = usize::MAX;

fn build_tree(
    rows: &[Vec<f64>],
    sorted: &[Vec<usize>],
    grad: &[f64],
    hess: &[f64],
    in_sample: &[bool],
    params: &TrainParams,
) -> Tree {
    let n = rows.len();
    let nf = sorted.len();
    let lambda = params.lambda;
    let mut nodes: Vec<Node> = vec![Node::Leaf { value: 0.0 }];
    // per row: index into `frontier`, or UNASSIGNED
    let mut slot = vec![UNASSIGNED; n];
    let mut root = NodeStats { g: 0.0, h: 0.0 };
    for i in 0..n {
        if in_sample[i] {
            slot[i] = 0;
            root.g += grad[i];
            root.h += hess[i];
        }
    }
    // (tree node index, stats)
    let mut frontier: Vec<(usize, NodeStats)> = vec![(0, root)];

    for _level in 0..params.depth {
        let mut best: Vec<Option<Candidate>> = vec![None; frontier.len()];
        for f in 0..nf {
            let mut left = vec![NodeStats { g: 0.0, h: 0.0 }; frontier.len()];
            let mut last: Vec<Option<f64>> = vec![None; frontier.len()];
            for &i in &sorted[f] {
                let a = slot[i];
                if a == UNASSIGNED {
                    continue;
                }
                let x = rows[i][f];
                if let Some(prev) = last[a] {
                    if x > prev {
                        let total = frontier[a].1;
                        let l = left[a];
                        let (gr, hr) = (total.g - l.g, total.h - l.h);
                        let gain = score(l.g, l.h, lambda) + score(gr, hr, lambda) - score(total.g, total.h, lambda);
                        if gain > 0.0 && best[a].is_none_or(|b| gain > b.gain) {
                            best[a] = Some(Candidate {
                                gain,
                                feature: f,
                                threshold: midpoint(prev, x),
                            });
                        }
                    }
                }
                left[a].g += grad[i];
                left[a].h += hess[i];
                last[a] = Some(x);
            }
        }

        let mut next: Vec<(usize, NodeStats)> = Vec::new();
        // frontier slot -> (left slot, right slot) in `next`
        let mut remap: Vec<Option<(usize, usize, Candidate)>> = vec![None; frontier.len()];
        for (a, cand) in best.iter().enumerate() {
            if let Some(c) = cand {
                let l = nodes.len();
                nodes.push(Node::Leaf { value: 0.0 });
                nodes.push(Node::Leaf { value: 0.0 });
                nodes[frontier[a].0] = Node::Split {
                    feature: c.feature,
                    threshold: c.threshold,
                    left: l,
                    right: l + 1,
                };
                let ls = next.len();
                next.push((l, NodeStats { g: 0.0, h: 0.0 }));
                next.push((l + 1, NodeStats { g: 0.0, h: 0.0 }));
                remap[a] = Some((ls, ls + 1, *c));
            } else {
                nodes[frontier[a].0] = Node::Leaf {
                    value: leaf_weight(frontier[a].1, lambda) * params.learning_rate,
                };
            }
        }
        if next.is_empty() {
            return Tree { nodes };
        }
        for i in 0..n {
            let a = slot[i];
            if a == UNASSIGNED {
                continue;
            }
            slot[i] = match remap[a] {
                Some((l, r, c)) => {
                    let s = if rows[i][c.feature] <= c.threshold { l } else { r };
                    next[s].1.g += grad[i];
                    next[s].1.h += hess[i];
                    s
                }
                None => UNASSIGNED,
            };
        }
        frontier = next;
    }
    for (node, stats) in frontier {
        nodes[node] = Node::Leaf {
            value: leaf_weight(stats, lambda) * params.learning_rate,
        };
    }
    Tree { nodes }
}

/// Fit a boosted ensemble. Deterministic in (data order, params).
pub fn train(data: &Dataset, params: &TrainParams) -> Result<Model, ClassifierError> {
    if data.len() < 2 {
        return Err(ClassifierError::DegenerateDataset(format!("{} rows", data.len())));
    }
    let pos = data.positives();
    if pos == 0 || pos == data.len() {
        return Err(ClassifierError::DegenerateDataset("only one class present".into()));
    }
    let n = data.len();
    let nf = data.n_features();
    let sorted: Vec<Vec<usize>> = (0..nf)
        .map(|f| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| data.rows[a][f].total_cmp(&data.rows[b][f]).then(a.cmp(&b)));
            idx
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let base_score = 0.0;
    let mut margin = vec![base_score; n];
    let mut trees = Vec::with_capacity(params.trees);
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    for _ in 0..params.trees {
        for i in 0..n {
            let p = sigmoid(margin[i]);
            grad[i] = p - f64::from(data.labels[i]);
            hess[i] = p * (1.0 - p);
        }
        let in_sample: Vec<bool> = if params.subsample < 1.0 {
            (0..n).map(|_| rng.gen::<f64>() < params.subsample).collect()
        } else {
            vec![true; n]
        };
        let tree = build_tree(&data.rows, &sorted, &grad, &hess, &in_sample, params);
        for (m, row) in margin.iter_mut().zip(&data.rows) {
            *m += tree.score(row);
        }
        trees.push(tree);
    }
    Ok(Model {
        format_version: MODEL_FORMAT_VERSION,
        registry_id: data.registry_id.clone(),
        n_features: nf,
        learning_rate: params.learning_rate,
        base_score,
        seed: params.seed,
        params: *params,
        trees,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn add(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        if self.total() == 0 {
            return 0.0;
        }
        (self.tp + self.tn) as f64 / self.total() as f64
    }

    /// 0 when nothing was predicted positive.
    pub fn precision(&self) -> f64 {
        if self.tp + self.fp == 0 {
            return 0.0;
        }
        self.tp as f64 / (self.tp + self.fp) as f64
    }

    pub fn recall(&self) -> f64 {
        if self.tp + self.fn_ == 0 {
            return 0.0;
        }
        self.tp as f64 / (self.tp + self.fn_) as f64
    }

    pub fn f1(&self) -> f64 {
        let d = 2 * self.tp + self.fp + self.fn_;
        if d == 0 {
            return 0.0;
        }
        2.0 * self.tp as f64 / d as f64
    }
}

pub fn confusion(model: &Model, data: &Dataset, threshold: f64) -> Confusion {
    let mut c = Confusion::default();
    for (row, &label) in data.rows.iter().zip(&data.labels) {
        c.add(model.predict_row(row) > threshold, label == 1);
    }
    c
}

pub fn accuracy(model: &Model, data: &Dataset) -> f64 {
    confusion(model, data, 0.5).accuracy()
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub f1_mean: f64,
    /// Population standard deviation over folds.
    pub f1_std: f64,
    pub fold_f1: Vec<f64>,
}

/// Stratified k-fold cross-validation with F1 at threshold 0.5.
pub fn cross_validate(
    data: &Dataset,
    folds: usize,
    params: &TrainParams,
    seed: u64,
) -> Result<CvResult, ClassifierError> {
    if folds < 2 {
        return Err(ClassifierError::InvalidFolds(folds));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pos: Vec<usize> = (0..data.len()).filter(|&i| data.labels[i] == 1).collect();
    let mut neg: Vec<usize> = (0..data.len()).filter(|&i| data.labels[i] == 0).collect();
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let mut assignment = vec![0usize; data.len()];
    for (j, &i) in pos.iter().chain(neg.iter()).enumerate() {
        assignment[i] = j % folds;
    }
    let mut fold_f1 = Vec::with_capacity(folds);
    for fold in 0..folds {
        let test: Vec<usize> = (0..data.len()).filter(|&i| assignment[i] == fold).collect();
        let train_idx: Vec<usize> = (0..data.len()).filter(|&i| assignment[i] != fold).collect();
        let test_set = data.subset(&test);
        let train_set = data.subset(&train_idx);
        let test_pos = test_set.positives();
        if test_pos == 0 || test_pos == test_set.len() {
            return Err(ClassifierError::DegenerateFold { fold });
        }
        let model = train(&train_set, params).map_err(|e| match e {
            ClassifierError::DegenerateDataset(_) => ClassifierError::DegenerateFold { fold },
            other => other,
        })?;
        fold_f1.push(confusion(&model, &test_set, 0.5).f1());
    }
    let (f1_mean, f1_std) = mean_std(&fold_f1);
    Ok(CvResult {
        f1_mean,
        f1_std,
        fold_f1,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Importances {
    pub names: Vec<String>,
    /// Mean accuracy drop per feature.
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Importances {
    /// Feature indices by decreasing mean importance; ties keep index order.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.mean.len()).collect();
        idx.sort_by(|&a, &b| self.mean[b].total_cmp(&self.mean[a]).then(a.cmp(&b)));
        idx
    }
}

/// Accuracy drop when each feature column is shuffled, over `repeats`
/// seeded shuffles.
pub fn permutation_importance(
    model: &Model,
    data: &Dataset,
    repeats: usize,
    seed: u64,
) -> Result<Importances, ClassifierError> {
    if data.registry_id != model.registry_id || data.n_features() != model.n_features {
        return Err(ClassifierError::RegistryMismatch {
            expected: model.registry_id.clone(),
            got: data.registry_id.clone(),
        });
    }
    let base = accuracy(model, data);
    let mut mean = Vec::with_capacity(data.n_features());
    let mut std = Vec::with_capacity(data.n_features());
    let mut rows = data.rows.clone();
    for j in 0..data.n_features() {
        if !model.uses_feature(j) {
            mean.push(0.0);
            std.push(0.0);
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(j as u64);
        let original: Vec<f64> = data.rows.iter().map(|r| r[j]).collect();
        let mut drops = Vec::with_capacity(repeats);
        for _ in 0..repeats {
            let mut col = original.clone();
            col.shuffle(&mut rng);
            for (r, v) in rows.iter_mut().zip(&col) {
                r[j] = *v;
            }
            let mut c = Confusion::default();
            for (row, &label) in rows.iter().zip(&data.labels) {
                c.add(model.predict_row(row) > 0.5, label == 1);
            }
            drops.push(base - c.accuracy());
        }
        for (r, v) in rows.iter_mut().zip(&original) {
            r[j] = *v;
        }
        let (m, s) = mean_std(&drops);
        mean.push(m);
        std.push(s);
    }
    Ok(Importances {
        names: data.feature_names.clone(),
        mean,
        std,
    })
}
