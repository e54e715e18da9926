//! Path-augmented message passing network for graph-level regression.
//!
//! Each propagation step computes one message per rooted path with a dense
//! layer chosen by path length, aggregates a node's messages with a single
//! attention softmax, and updates node states with a sigmoid dense layer
//! over `[h, m]`. A set2set readout over `[h_T, x]` and a linear head give
//! the prediction.

mod features;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixtures;
use crate::graph::{build_graph, Graph};
use crate::paths::DEFAULT_PATH_CAP;
use crate::tensor::gradcheck::{check_gradients, GradcheckReport, DEFAULT_STEP};
use crate::tensor::{Index, ParamId, ParamStore, Tape, Tensor, Var};

pub use features::{mode_width, static_width, Batch, BatchBlock, MoleculeFeatures, PathBlock};

/// Leaky-relu slope of the attention scores.
pub const ATTENTION_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureMode {
    /// Hidden states and edge features only.
    #[default]
    Base,
    /// Adds ring and functional-group flags.
    Substructure,
    /// Adds bond lengths, bond angles and dihedrals; needs coordinates.
    Geometry,
}

impl FeatureMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureMode::Base => "base",
            FeatureMode::Substructure => "substructure",
            FeatureMode::Geometry => "geometry",
        }
    }
}

impl std::str::FromStr for FeatureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(FeatureMode::Base),
            "substructure" => Ok(FeatureMode::Substructure),
            "geometry" => Ok(FeatureMode::Geometry),
            other => Err(Error::config(format!(
                "unknown feature mode `{other}` (expected base, substructure or geometry)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    /// Propagation steps `T`.
    pub steps: usize,
    /// Longest path `ℓ`, between 1 and 3.
    pub max_path_len: usize,
    pub mode: FeatureMode,
    pub set2set_steps: usize,
    pub heads: usize,
    /// Use only paths of exactly `max_path_len` edges.
    pub exact_length: bool,
    /// One attention softmax per path length instead of a joint one.
    pub per_length_attention: bool,
    /// Sample at most this many paths per root instead of enumerating.
    pub path_budget: Option<usize>,
    pub path_cap: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden_dim: 32,
            steps: 3,
            max_path_len: 2,
            mode: FeatureMode::Base,
            set2set_steps: 3,
            heads: 1,
            exact_length: false,
            per_length_attention: false,
            path_budget: None,
            path_cap: DEFAULT_PATH_CAP,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hidden_dim", self.hidden_dim),
            ("steps", self.steps),
            ("set2set_steps", self.set2set_steps),
            ("heads", self.heads),
            ("path_cap", self.path_cap),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if !(1..=3).contains(&self.max_path_len) {
            return Err(Error::config(format!(
                "max_path_len must be 1, 2 or 3, got {}",
                self.max_path_len
            )));
        }
        if self.path_budget == Some(0) {
            return Err(Error::config("path_budget must be positive"));
        }
        Ok(())
    }
}

/// Widths taken from the data rather than from the configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputDims {
    pub node_dim: usize,
    pub edge_dim: usize,
    pub targets: usize,
}

/// `x W + b`.
#[derive(Clone, Copy, Debug)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
}

impl Dense {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        Dense {
            w: store.glorot(format!("{name}.w"), fan_in, fan_out, rng),
            b: store.zeros(format!("{name}.b"), 1, fan_out),
        }
    }

    pub fn apply(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        tape.dense(x, w, b)
    }
}

#[derive(Clone, Debug)]
struct StepParams {
    messages: Vec<Dense>,
    attention: Vec<ParamId>,
    update: Dense,
}

#[derive(Clone, Copy, Debug)]
pub struct Set2Set {
    pub proj: Dense,
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b: ParamId,
}

/// Message of the edge-based network: `relu(W [h_v, h_w, e_vw] + b)` for
/// every directed edge `(v ← w)`.
pub fn message_standard(
    tape: &mut Tape,
    store: &ParamStore,
    layer: &Dense,
    h: Var,
    src: &Index,
    dst: &Index,
    edge_features: Var,
) -> Result<Var> {
    let hv = tape.gather_rows(h, src)?;
    let hw = tape.gather_rows(h, dst)?;
    let input = tape.concat(&[hv, hw, edge_features], 1)?;
    let pre = layer.apply(tape, store, input)?;
    Ok(tape.relu(pre))
}

/// Message of every path in `block`: `relu(W_k [h_v, h_v1, .., h_vk, s] + b)`
/// with `s` the static edge and mode features of the path.
pub fn message_path(tape: &mut Tape, store: &ParamStore, layer: &Dense, h: Var, block: &BatchBlock) -> Result<Var> {
    let mut parts = Vec::with_capacity(block.len + 2);
    parts.push(tape.gather_rows(h, &block.roots)?);
    for nodes in &block.nodes {
        parts.push(tape.gather_rows(h, nodes)?);
    }
    parts.push(tape.constant(block.statics.clone()));
    let input = tape.concat(&parts, 1)?;
    let pre = layer.apply(tape, store, input)?;
    Ok(tape.relu(pre))
}

/// Attention-weighted sum of messages per root.
///
/// Each head scores message `i` of root `v` as
/// `leaky_relu(a · [h_v, msg_i])`, normalises the scores over the messages of
/// `v`, and sums; heads are averaged. Nodes with no messages get zeros.
pub fn attention_aggregate(
    tape: &mut Tape,
    store: &ParamStore,
    heads: &[ParamId],
    h: Var,
    messages: Var,
    roots: &Index,
    n: usize,
) -> Result<Var> {
    let hv = tape.gather_rows(h, roots)?;
    let pair = tape.concat(&[hv, messages], 1)?;
    let mut total: Option<Var> = None;
    for &a in heads {
        let a = tape.param(store, a);
        let raw = tape.matmul(pair, a)?;
        let scores = tape.leaky_relu(raw, ATTENTION_SLOPE);
        let weights = tape.segment_softmax(scores, roots, n)?;
        let weighted = tape.row_scale(messages, weights)?;
        let m = tape.segment_sum(weighted, roots, n)?;
        total = Some(match total {
            None => m,
            Some(t) => tape.add(t, m)?,
        });
    }
    let total = total.ok_or_else(|| Error::config("attention needs at least one head"))?;
    Ok(if heads.len() > 1 {
        tape.scale(total, 1.0 / heads.len() as f64)
    } else {
        total
    })
}

/// `σ(W [h, m] + b)`.
pub fn node_update(tape: &mut Tape, store: &ParamStore, layer: &Dense, h: Var, m: Var) -> Result<Var> {
    let input = tape.concat(&[h, m], 1)?;
    let pre = layer.apply(tape, store, input)?;
    Ok(tape.sigmoid(pre))
}

/// Set2set over `z_v = W_p [h_v, x_v] + b_p`; returns `graphs × 2d`.
#[allow(clippy::too_many_arguments)]
pub fn set2set_readout(
    tape: &mut Tape,
    store: &ParamStore,
    params: &Set2Set,
    h: Var,
    x: Var,
    graph_of: &Index,
    graphs: usize,
    steps: usize,
) -> Result<Var> {
    let hx = tape.concat(&[h, x], 1)?;
    let z = params.proj.apply(tape, store, hx)?;
    let d = tape.shape(z)[1];
    let mut q_star = tape.constant(Tensor::zeros(graphs, 2 * d));
    let mut hid = tape.constant(Tensor::zeros(graphs, d));
    let mut cell = tape.constant(Tensor::zeros(graphs, d));
    let w_ih = tape.param(store, params.w_ih);
    let w_hh = tape.param(store, params.w_hh);
    let b = tape.param(store, params.b);
    for _ in 0..steps {
        let (q, c) = tape.lstm_cell(q_star, hid, cell, w_ih, w_hh, b)?;
        hid = q;
        cell = c;
        let qv = tape.gather_rows(q, graph_of)?;
        let prod = tape.mul(z, qv)?;
        let e = tape.row_sum(prod);
        let a = tape.segment_softmax(e, graph_of, graphs)?;
        let weighted = tape.row_scale(z, a)?;
        let r = tape.segment_sum(weighted, graph_of, graphs)?;
        q_star = tape.concat(&[q, r], 1)?;
    }
    Ok(q_star)
}

/// The full network and its parameters.
#[derive(Clone, Debug)]
pub struct PathMpnn {
    config: ModelConfig,
    dims: InputDims,
    store: ParamStore,
    embed: Dense,
    steps: Vec<StepParams>,
    readout: Set2Set,
    head: Dense,
}

impl PathMpnn {
    pub fn new(config: ModelConfig, dims: InputDims) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let d = config.hidden_dim;
        let embed = Dense::new(&mut store, "embed", dims.node_dim, d, &mut rng);
        let steps = (0..config.steps)
            .map(|t| StepParams {
                messages: (1..=config.max_path_len)
                    .map(|k| {
                        let width = (k + 1) * d + static_width(config.mode, dims.edge_dim, k);
                        Dense::new(&mut store, &format!("step{t}.message{k}"), width, d, &mut rng)
                    })
                    .collect(),
                attention: (0..config.heads)
                    .map(|h| store.glorot(format!("step{t}.attention{h}"), 2 * d, 1, &mut rng))
                    .collect(),
                update: Dense::new(&mut store, &format!("step{t}.update"), 2 * d, d, &mut rng),
            })
            .collect();
        let proj = Dense::new(&mut store, "readout.proj", d + dims.node_dim, d, &mut rng);
        let readout = Set2Set {
            proj,
            w_ih: store.glorot("readout.lstm.w_ih", 2 * d, 4 * d, &mut rng),
            w_hh: store.glorot("readout.lstm.w_hh", d, 4 * d, &mut rng),
            b: store.zeros("readout.lstm.b", 1, 4 * d),
        };
        let head = Dense::new(&mut store, "head", 2 * d, dims.targets, &mut rng);
        Ok(PathMpnn {
            config,
            dims,
            store,
            embed,
            steps,
            readout,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn dims(&self) -> InputDims {
        self.dims
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn featurize(&self, graph: &Graph, targets: Vec<f64>) -> Result<MoleculeFeatures> {
        if graph.node_dim() != self.dims.node_dim || graph.edge_dim() != self.dims.edge_dim {
            return Err(Error::config(format!(
                "graph has feature widths ({}, {}), model expects ({}, {})",
                graph.node_dim(),
                graph.edge_dim(),
                self.dims.node_dim,
                self.dims.edge_dim
            )));
        }
        MoleculeFeatures::new(graph, &self.config, targets)
    }

    fn embed_and_readout<F>(&self, store: &ParamStore, tape: &mut Tape, batch: &Batch, mut aggregate: F) -> Result<Var>
    where
        F: FnMut(&mut Tape, &StepParams, Var) -> Result<Option<Var>>,
    {
        let x = tape.constant(batch.x.clone());
        let pre = self.embed.apply(tape, store, x)?;
        let mut h = tape.tanh(pre);
        for step in &self.steps {
            let m = match aggregate(tape, step, h)? {
                Some(m) => m,
                None => tape.constant(Tensor::zeros(batch.n, self.config.hidden_dim)),
            };
            h = node_update(tape, store, &step.update, h, m)?;
        }
        let g = set2set_readout(
            tape,
            store,
            &self.readout,
            h,
            x,
            &batch.graph_of,
            batch.graphs,
            self.config.set2set_steps,
        )?;
        self.head.apply(tape, store, g)
    }

    /// Predictions for every molecule of the batch, `graphs × targets`.
    pub fn forward(&self, tape: &mut Tape, batch: &Batch) -> Result<Var> {
        self.forward_with(&self.store, tape, batch)
    }

    /// [`PathMpnn::forward`] reading parameter values from `store`, which
    /// must have this model's layout.
    pub fn forward_with(&self, store: &ParamStore, tape: &mut Tape, batch: &Batch) -> Result<Var> {
        if batch.blocks.len() != self.config.max_path_len {
            return Err(Error::config("batch was featurized for a different path length"));
        }
        let n = batch.n;
        self.embed_and_readout(store, tape, batch, |tape, step, h| {
            let mut messages = Vec::new();
            let mut roots: Vec<usize> = Vec::new();
            let mut per_length: Option<Var> = None;
            for (block, layer) in batch.blocks.iter().zip(&step.messages) {
                if block.count() == 0 {
                    continue;
                }
                let msg = message_path(tape, store, layer, h, block)?;
                if self.config.per_length_attention {
                    let m = attention_aggregate(tape, store, &step.attention, h, msg, &block.roots, n)?;
                    per_length = Some(match per_length {
                        None => m,
                        Some(p) => tape.add(p, m)?,
                    });
                } else {
                    messages.push(msg);
                    roots.extend(block.roots.iter());
                }
            }
            if self.config.per_length_attention || messages.is_empty() {
                return Ok(per_length);
            }
            let all = tape.concat(&messages, 0)?;
            let roots: Index = roots.into();
            attention_aggregate(tape, store, &step.attention, h, all, &roots, n).map(Some)
        })
    }

    /// The edge-based network that uses only first-order messages built
    /// directly from the edge list. Shares the length-1 message parameters,
    /// so with `max_path_len = 1` in base mode it computes exactly what
    /// [`PathMpnn::forward`] does.
    pub fn forward_standard(&self, tape: &mut Tape, batch: &Batch) -> Result<Var> {
        self.forward_standard_with(&self.store, tape, batch)
    }

    pub fn forward_standard_with(&self, store: &ParamStore, tape: &mut Tape, batch: &Batch) -> Result<Var> {
        if self.config.mode != FeatureMode::Base {
            return Err(Error::config("the edge-based network uses base features only"));
        }
        let n = batch.n;
        self.embed_and_readout(store, tape, batch, |tape, step, h| {
            if batch.edge_src.is_empty() {
                return Ok(None);
            }
            let e = tape.constant(batch.edge_features.clone());
            let msg = message_standard(tape, store, &step.messages[0], h, &batch.edge_src, &batch.edge_dst, e)?;
            attention_aggregate(tape, store, &step.attention, h, msg, &batch.edge_src, n).map(Some)
        })
    }

    /// Forward pass on plain graphs without targets.
    pub fn predict(&self, graphs: &[&Graph]) -> Result<Tensor> {
        let feats = graphs
            .iter()
            .map(|g| self.featurize(g, vec![0.0; self.dims.targets]))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&MoleculeFeatures> = feats.iter().collect();
        let batch = Batch::new(&refs)?;
        let mut tape = Tape::new();
        let y = self.forward(&mut tape, &batch)?;
        Ok(tape.value(y).clone())
    }
}

/// Full forward and backward gradient check on the five-atom fixture.
///
/// Base mode uses single-edge paths, substructure mode paths up to length 2
/// and geometry mode paths up to length 3. All parameters, biases included,
/// are drawn uniformly from `[-0.5, 0.5]` so that no term vanishes.
pub fn gradcheck_full_model(mode: FeatureMode, seed: u64) -> Result<GradcheckReport> {
    let record = fixtures::five_atom_molecule();
    let graph = build_graph(&record, &fixtures::featurizer(mode == FeatureMode::Geometry))?;
    let config = ModelConfig {
        hidden_dim: 4,
        steps: 2,
        max_path_len: match mode {
            FeatureMode::Base => 1,
            FeatureMode::Substructure => 2,
            FeatureMode::Geometry => 3,
        },
        mode,
        set2set_steps: 2,
        seed,
        ..ModelConfig::default()
    };
    let dims = InputDims {
        node_dim: graph.node_dim(),
        edge_dim: graph.edge_dim(),
        targets: record.targets.len(),
    };
    let mut model = PathMpnn::new(config, dims)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let ids: Vec<ParamId> = model.params().ids().collect();
    for id in ids {
        for v in model.params_mut().value_mut(id).data_mut() {
            *v = rng.gen_range(-0.5..0.5);
        }
    }
    let feats = model.featurize(&graph, record.targets.clone())?;
    let batch = Batch::new(&[&feats])?;
    let mut store = model.params().clone();
    check_gradients(&mut store, DEFAULT_STEP, |tape, store| {
        let pred = model.forward_with(store, tape, &batch)?;
        let target = tape.constant(batch.targets.clone());
        // squared error keeps the loss smooth even if the prediction hits
        // the target exactly
        let diff = tape.sub(pred, target)?;
        let sq = tape.square(diff);
        Ok(tape.sum(sq))
    })
}
