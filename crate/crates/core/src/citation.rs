//! Graph convolutional node classification with sampled higher-order path
//! messages.
//!
//! A plain layer computes `act(Â H W + b)` with
//! `Â = D^{-1/2} (A + I) D^{-1/2}`. The path layer adds, for every sampled
//! path `v → v1 → .. → vk` with `k ≥ 2`, the term
//! `Â_{v,v1} [h_v1, .., h_vk] W_k`, evaluated as `Σ_j Â_{v,v1} h_vj W_kj`.
//! Paths are drawn per hop: every first-order path is extended by
//! `per_hop` uniformly chosen neighbors at each further hop.

use std::rc::Rc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::paths::{Path, PathSampler};
use crate::synth::PlantedGraph;
use crate::tensor::{Adam, AdamConfig, Index, ParamId, ParamStore, Tape, Tensor, Var};
use crate::train::{accuracy, EpochMetrics, FinalMetrics, Split, TrainReport};

/// Node-classification data set.
#[derive(Clone, Debug)]
pub struct CitationGraph {
    pub graph: Graph,
    /// `n × features`.
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl CitationGraph {
    pub fn new(n: usize, links: &[(usize, usize)], features: Tensor, labels: Vec<usize>) -> Result<Self> {
        if features.rows() != n || labels.len() != n {
            return Err(Error::config(format!(
                "{} feature rows and {} labels for {n} nodes",
                features.rows(),
                labels.len()
            )));
        }
        let classes = labels.iter().max().map_or(0, |&m| m + 1);
        Ok(CitationGraph {
            graph: Graph::from_edges(n, links)?,
            features,
            labels,
            classes,
        })
    }

    pub fn from_planted(data: &PlantedGraph) -> Result<Self> {
        let n = data.labels.len();
        let cols = data.features.first().map_or(0, Vec::len);
        let flat = data.features.iter().flatten().map(|&b| b as f64).collect();
        Self::new(n, &data.links, Tensor::from_vec(n, cols, flat)?, data.labels.clone())
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }

    /// Scales every non-empty feature row to sum to one.
    pub fn row_normalized(mut self) -> Self {
        let c = self.features.cols();
        for row in self.features.data_mut().chunks_mut(c.max(1)) {
            let s: f64 = row.iter().sum();
            if s > 0.0 {
                row.iter_mut().for_each(|v| *v /= s);
            }
        }
        self
    }
}

/// `per_class` training nodes of every class, then `val` and `test` nodes,
/// all from one seeded shuffle. Sizes are clamped to what is available.
pub fn planetoid_split(labels: &[usize], per_class: usize, val: usize, test: usize, seed: u64) -> Split {
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let classes = labels.iter().max().map_or(0, |&m| m + 1);
    let mut taken = vec![0usize; classes];
    let mut train = Vec::new();
    let mut rest = Vec::new();
    for v in order {
        if taken[labels[v]] < per_class {
            taken[labels[v]] += 1;
            train.push(v);
        } else {
            rest.push(v);
        }
    }
    let val_n = val.min(rest.len());
    let test_n = test.min(rest.len() - val_n);
    let val_set = rest[..val_n].to_vec();
    let test_set = rest[val_n..val_n + test_n].to_vec();
    Split {
        train,
        val: val_set,
        test: test_set,
    }
}

/// Symmetrically normalised adjacency with self-loops, stored as
/// `(receiver, sender, weight)` triples sorted by receiver then sender.
#[derive(Clone, Debug)]
pub struct NormalizedAdjacency {
    pub receivers: Index,
    pub senders: Index,
    /// Column of weights, one row per triple.
    pub weights: Tensor,
}

pub fn normalize_adjacency(graph: &Graph) -> NormalizedAdjacency {
    let n = graph.n();
    let scale: Vec<f64> = (0..n).map(|v| 1.0 / ((graph.degree(v) + 1) as f64).sqrt()).collect();
    let mut receivers = Vec::new();
    let mut senders = Vec::new();
    let mut weights = Vec::new();
    for v in 0..n {
        let mut row: Vec<usize> = graph.neighbors(v).to_vec();
        row.push(v);
        row.sort_unstable();
        for w in row {
            receivers.push(v);
            senders.push(w);
            weights.push(scale[v] * scale[w]);
        }
    }
    NormalizedAdjacency {
        receivers: Rc::from(receivers),
        senders: Rc::from(senders),
        weights: Tensor::column(&weights),
    }
}

impl NormalizedAdjacency {
    /// `Â_vw`, zero for non-adjacent pairs.
    pub fn weight(&self, v: usize, w: usize) -> f64 {
        let lo = self.receivers.partition_point(|&r| r < v);
        let hi = self.receivers.partition_point(|&r| r <= v);
        self.senders[lo..hi]
            .binary_search(&w)
            .map_or(0.0, |k| self.weights.data()[lo + k])
    }
}

/// Feature block of a citation path: the states of its non-root nodes.
/// Citation links carry no edge features.
pub fn citation_path_features(states: &Tensor, path: &Path) -> Vec<f64> {
    path.nodes()[1..]
        .iter()
        .flat_map(|&u| states.row_slice(u).iter().copied())
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GcnConfig {
    pub hidden_dim: usize,
    pub dropout: f64,
    /// L2 penalty on first-layer weights, as `weight_decay / 2 · Σ w²`.
    pub weight_decay: f64,
    pub lr: f64,
    pub epochs: usize,
    pub patience: usize,
    /// 1 gives the plain network; 2 or 3 adds sampled path messages.
    pub max_path_len: usize,
    /// Extensions drawn per path and hop; 0 disables higher-order messages.
    pub per_hop: usize,
    /// Draw fresh paths every epoch instead of once.
    pub resample: bool,
    /// Path samples averaged at evaluation time.
    pub eval_samples: usize,
    pub normalize_features: bool,
    pub train_per_class: usize,
    pub val_size: usize,
    pub test_size: usize,
    pub seed: u64,
}

impl Default for GcnConfig {
    fn default() -> Self {
        GcnConfig {
            hidden_dim: 16,
            dropout: 0.5,
            weight_decay: 5e-4,
            lr: 0.01,
            epochs: 200,
            patience: 50,
            max_path_len: 1,
            per_hop: 1,
            resample: true,
            eval_samples: 8,
            normalize_features: true,
            train_per_class: 20,
            val_size: 500,
            test_size: 1000,
            seed: 0,
        }
    }
}

impl GcnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.epochs == 0 || self.eval_samples == 0 {
            return Err(Error::config("hidden_dim, epochs and eval_samples must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout must be in [0, 1)"));
        }
        if !(1..=3).contains(&self.max_path_len) {
            return Err(Error::config("max_path_len must be 1, 2 or 3"));
        }
        if !(self.lr > 0.0) || self.weight_decay < 0.0 {
            return Err(Error::config("lr must be positive and weight_decay non-negative"));
        }
        Ok(())
    }

    pub fn uses_paths(&self) -> bool {
        self.max_path_len > 1 && self.per_hop > 0
    }
}

#[derive(Clone, Debug)]
struct Layer {
    w: ParamId,
    b: ParamId,
    /// `path[k - 2][j]`: block of `W_k` applied to the `(j + 1)`-th path node.
    path: Vec<Vec<ParamId>>,
}

/// Sampled higher-order paths grouped by length.
#[derive(Clone, Debug, Default)]
pub struct PathSample {
    /// `blocks[k - 2]` holds the length-`k` paths.
    pub blocks: Vec<SampledBlock>,
}

#[derive(Clone, Debug)]
pub struct SampledBlock {
    pub roots: Index,
    pub nodes: Vec<Index>,
    /// `Â_{v, v1}` per path.
    pub weights: Tensor,
}

/// Two-layer (path) GCN.
#[derive(Clone, Debug)]
pub struct PathGcn {
    config: GcnConfig,
    store: ParamStore,
    layers: [Layer; 2],
}

impl PathGcn {
    pub fn new(config: GcnConfig, features: usize, classes: usize) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let d = config.hidden_dim;
        let dims = [(features, d), (d, classes)];
        // first-order weights first, so path blocks never shift them
        let mut layers = [0, 1].map(|l| {
            let (fan_in, fan_out) = dims[l];
            Layer {
                w: store.glorot(format!("layer{l}.w"), fan_in, fan_out, &mut rng),
                b: store.zeros(format!("layer{l}.b"), 1, fan_out),
                path: Vec::new(),
            }
        });
        for (l, layer) in layers.iter_mut().enumerate() {
            let (fan_in, fan_out) = dims[l];
            for k in 2..=config.max_path_len {
                // W_k is (k·fan_in) × fan_out, stored as k row blocks
                let a = (6.0 / (k * fan_in + fan_out) as f64).sqrt();
                let blocks = (0..k)
                    .map(|j| {
                        let data = (0..fan_in * fan_out).map(|_| rng.gen_range(-a..a)).collect();
                        store.add(format!("layer{l}.path{k}.{j}"), Tensor::from_vec(fan_in, fan_out, data).unwrap())
                    })
                    .collect();
                layer.path.push(blocks);
            }
        }
        Ok(PathGcn {
            config,
            store,
            layers,
        })
    }

    pub fn config(&self) -> &GcnConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Draws one path sample for every node.
    pub fn sample_paths(&self, graph: &Graph, adj: &NormalizedAdjacency, sampler: &mut PathSampler) -> PathSample {
        if !self.config.uses_paths() {
            return PathSample::default();
        }
        let len = self.config.max_path_len;
        let mut roots = vec![Vec::new(); len - 1];
        let mut nodes: Vec<Vec<Vec<usize>>> = (2..=len).map(|k| vec![Vec::new(); k]).collect();
        let mut weights = vec![Vec::new(); len - 1];
        for v in 0..graph.n() {
            for p in sampler.sample_per_hop(graph, v, len, self.config.per_hop) {
                let k = p.len();
                if k < 2 {
                    continue;
                }
                let q = p.nodes();
                roots[k - 2].push(v);
                for j in 0..k {
                    nodes[k - 2][j].push(q[j + 1]);
                }
                weights[k - 2].push(adj.weight(v, q[1]));
            }
        }
        PathSample {
            blocks: roots
                .into_iter()
                .zip(nodes)
                .zip(weights)
                .map(|((r, ns), w)| SampledBlock {
                    roots: Rc::from(r),
                    nodes: ns.into_iter().map(Rc::from).collect(),
                    weights: Tensor::column(&w),
                })
                .collect(),
        }
    }

    fn layer(
        &self,
        tape: &mut Tape,
        layer: &Layer,
        h: Var,
        adj: &NormalizedAdjacency,
        paths: &PathSample,
        n: usize,
    ) -> Result<Var> {
        let w = tape.param(&self.store, layer.w);
        let hw = tape.matmul(h, w)?;
        let gathered = tape.gather_rows(hw, &adj.senders)?;
        let aw = tape.constant(adj.weights.clone());
        let scaled = tape.row_scale(gathered, aw)?;
        let mut out = tape.segment_sum(scaled, &adj.receivers, n)?;
        for (block, ws) in paths.blocks.iter().zip(&layer.path) {
            if block.roots.is_empty() {
                continue;
            }
            let mut total: Option<Var> = None;
            for (nodes, &wj) in block.nodes.iter().zip(ws) {
                let wj = tape.param(&self.store, wj);
                let hj = tape.matmul(h, wj)?;
                let g = tape.gather_rows(hj, nodes)?;
                total = Some(match total {
                    None => g,
                    Some(t) => tape.add(t, g)?,
                });
            }
            let pw = tape.constant(block.weights.clone());
            let scaled = tape.row_scale(total.unwrap(), pw)?;
            let msg = tape.segment_sum(scaled, &block.roots, n)?;
            out = tape.add(out, msg)?;
        }
        let b = tape.param(&self.store, layer.b);
        tape.add_bias(out, b)
    }

    /// Class logits, `n × classes`. Dropout is applied when `dropout_rng`
    /// is given.
    pub fn forward(
        &self,
        tape: &mut Tape,
        features: &Tensor,
        adj: &NormalizedAdjacency,
        paths: &PathSample,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let n = features.rows();
        let p = self.config.dropout;
        let mut masks = Vec::new();
        if let Some(rng) = dropout_rng {
            if p > 0.0 {
                let keep = 1.0 / (1.0 - p);
                for cols in [features.cols(), self.config.hidden_dim] {
                    let data = (0..n * cols).map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep }).collect();
                    masks.push(Tensor::from_vec(n, cols, data)?);
                }
            }
        }
        let mut masks = masks.into_iter();
        let mut x = tape.constant(features.clone());
        if let Some(m) = masks.next() {
            let m = tape.constant(m);
            x = tape.mul(x, m)?;
        }
        let pre = self.layer(tape, &self.layers[0], x, adj, paths, n)?;
        let mut h = tape.relu(pre);
        if let Some(m) = masks.next() {
            let m = tape.constant(m);
            h = tape.mul(h, m)?;
        }
        self.layer(tape, &self.layers[1], h, adj, paths, n)
    }

    /// Mean cross-entropy over `nodes` plus the first-layer L2 penalty.
    pub fn loss(&self, tape: &mut Tape, logits: Var, labels: &[usize], nodes: &Index) -> Result<Var> {
        let logp = tape.log_softmax_rows(logits);
        let rows = tape.gather_rows(logp, nodes)?;
        let picked: Index = nodes.iter().map(|&v| labels[v]).collect::<Vec<_>>().into();
        let lp = tape.pick(rows, &picked)?;
        let mean = tape.mean(lp)?;
        let ce = tape.scale(mean, -1.0);
        if self.config.weight_decay == 0.0 {
            return Ok(ce);
        }
        let first = &self.layers[0];
        let mut penalty: Option<Var> = None;
        let path_ws = if self.config.uses_paths() { first.path.as_slice() } else { &[] };
        for id in std::iter::once(first.w).chain(path_ws.iter().flatten().copied()) {
            let w = tape.param(&self.store, id);
            let sq = tape.square(w);
            let s = tape.sum(sq);
            penalty = Some(match penalty {
                None => s,
                Some(p) => tape.add(p, s)?,
            });
        }
        let penalty = tape.scale(penalty.unwrap(), self.config.weight_decay / 2.0);
        tape.add(ce, penalty)
    }
}

/// Deterministic seeds of the independent random streams of a run.
fn stream_seeds(seed: u64) -> (u64, u64) {
    let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    (r.gen(), r.gen())
}

/// Result of [`train_node_classification`].
#[derive(Clone, Debug)]
pub struct NodeClassificationRun {
    pub model: PathGcn,
    pub report: TrainReport,
    /// Evaluation-mode logits of the restored model.
    pub logits: Tensor,
}

/// Evaluation-mode logits: the mean over `eval_samples` path samples, or a
/// single pass for the plain network or a fixed sample.
pub fn eval_logits(
    model: &PathGcn,
    data: &CitationGraph,
    adj: &NormalizedAdjacency,
    fixed: Option<&PathSample>,
    sampler: &mut PathSampler,
) -> Result<Tensor> {
    let draws = if model.config.uses_paths() && fixed.is_none() {
        model.config.eval_samples
    } else {
        1
    };
    let mut mean: Option<Tensor> = None;
    for _ in 0..draws {
        let owned;
        let sample = match fixed {
            Some(s) => s,
            None => {
                owned = model.sample_paths(&data.graph, adj, sampler);
                &owned
            }
        };
        let mut tape = Tape::new();
        let y = model.forward(&mut tape, &data.features, adj, sample, None)?;
        let y = tape.value(y);
        match &mut mean {
            None => mean = Some(y.clone()),
            Some(m) => m.add_assign(y),
        }
    }
    let mut m = mean.unwrap();
    if draws > 1 {
        m.data_mut().iter_mut().for_each(|v| *v /= draws as f64);
    }
    Ok(m)
}

/// Full-batch training with early stopping on validation accuracy (ties go
/// to the lower validation loss); the best parameters are restored before
/// scoring the test split.
pub fn train_node_classification(data: &CitationGraph, config: &GcnConfig, split: &Split) -> Result<NodeClassificationRun> {
    let start = Instant::now();
    config.validate()?;
    for (name, s) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
        if s.is_empty() {
            return Err(Error::EmptySplit(name));
        }
    }
    let data_owned;
    let data = if config.normalize_features {
        data_owned = data.clone().row_normalized();
        &data_owned
    } else {
        data
    };
    let mut model = PathGcn::new(config.clone(), data.features.cols(), data.classes)?;
    let adj = normalize_adjacency(&data.graph);
    let (dropout_seed, sample_seed) = stream_seeds(config.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(dropout_seed);
    let mut sampler = PathSampler::new(sample_seed);
    let fixed = (!config.resample).then(|| model.sample_paths(&data.graph, &adj, &mut sampler));
    let mut adam = Adam::new(AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    });
    let train_idx: Index = split.train.clone().into();
    let val_idx: Index = split.val.clone().into();
    let mut report = TrainReport::default();
    let mut best = (f64::NEG_INFINITY, f64::INFINITY, 0usize, model.params().snapshot());

    for epoch in 1..=config.epochs {
        let owned;
        let sample = match &fixed {
            Some(s) => s,
            None => {
                owned = model.sample_paths(&data.graph, &adj, &mut sampler);
                &owned
            }
        };
        let mut tape = Tape::new();
        let logits = model.forward(&mut tape, &data.features, &adj, sample, Some(&mut dropout_rng))?;
        let loss = model.loss(&mut tape, logits, &data.labels, &train_idx)?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("training loss at epoch {epoch}")));
        }
        let grads = tape.backward(loss)?;
        let store = model.params_mut();
        store.zero_grad();
        store.accumulate(&grads);
        adam.step(store);

        let logits = eval_logits(&model, data, &adj, fixed.as_ref(), &mut sampler)?;
        let val_acc = accuracy(&logits, &data.labels, &split.val);
        let val_loss = {
            let mut t = Tape::new();
            let l = t.constant(logits);
            let lp = t.log_softmax_rows(l);
            let rows = t.gather_rows(lp, &val_idx)?;
            let picked: Index = split.val.iter().map(|&v| data.labels[v]).collect::<Vec<_>>().into();
            let p = t.pick(rows, &picked)?;
            -t.value(p).data().iter().sum::<f64>() / split.val.len() as f64
        };
        report.epochs.push(EpochMetrics {
            epoch,
            train_loss: value,
            val_metric: val_acc,
        });
        if val_acc > best.0 || (val_acc == best.0 && val_loss < best.1) {
            best = (val_acc, val_loss, epoch, model.params().snapshot());
        } else if epoch - best.2 >= config.patience {
            break;
        }
    }
    model.params_mut().restore(&best.3)?;
    let logits = eval_logits(&model, data, &adj, fixed.as_ref(), &mut sampler)?;
    report.final_metrics = FinalMetrics {
        best_epoch: best.2,
        best_val_metric: best.0,
        test_accuracy: Some(accuracy(&logits, &data.labels, &split.test)),
        wall_seconds: start.elapsed().as_secs_f64(),
        seed: config.seed,
        ..FinalMetrics::default()
    };
    Ok(NodeClassificationRun { model, report, logits })
}
