//! Per-molecule path feature blocks and their batched disjoint union.

use std::rc::Rc;

use crate::chem::{SubstructureContext, SubstructureFeatures};
use crate::error::{Error, Result};
use crate::geometry::{geometry_path_features, GeometryFeatures};
use crate::graph::Graph;
use crate::paths::{enumerate_paths_with, LengthMode, Path, PathQuery, PathSampler};
use crate::tensor::{Index, Tensor};

use super::{FeatureMode, ModelConfig};

/// Width of the mode-specific part of a length-`len` path block.
pub fn mode_width(mode: FeatureMode, len: usize) -> usize {
    match mode {
        FeatureMode::Base => 0,
        FeatureMode::Substructure => SubstructureFeatures::width(len),
        FeatureMode::Geometry => GeometryFeatures::width(len),
    }
}

/// Width of the static (state-independent) part of a length-`len` path
/// block: edge features along the path followed by mode features.
pub fn static_width(mode: FeatureMode, edge_dim: usize, len: usize) -> usize {
    len * edge_dim + mode_width(mode, len)
}

/// All paths of one length within one molecule.
#[derive(Clone, Debug, PartialEq)]
pub struct PathBlock {
    pub len: usize,
    pub roots: Vec<usize>,
    /// `nodes[j][i]` is the `(j + 1)`-th node of path `i`.
    pub nodes: Vec<Vec<usize>>,
    /// One row of edge and mode features per path.
    pub statics: Tensor,
}

impl PathBlock {
    fn empty(len: usize, width: usize) -> Self {
        PathBlock {
            len,
            roots: Vec::new(),
            nodes: vec![Vec::new(); len],
            statics: Tensor::zeros(0, width),
        }
    }

    pub fn count(&self) -> usize {
        self.roots.len()
    }
}

/// Everything the network reads from one molecule.
#[derive(Clone, Debug, PartialEq)]
pub struct MoleculeFeatures {
    pub n: usize,
    pub x: Tensor,
    /// Blocks for lengths `1..=max_path_len`; skipped lengths are empty.
    pub blocks: Vec<PathBlock>,
    /// Directed edges `(v ← w)` in root-major order, for the edge-based network.
    pub edge_src: Vec<usize>,
    pub edge_dst: Vec<usize>,
    pub edge_features: Tensor,
    pub targets: Vec<f64>,
}

impl MoleculeFeatures {
    pub fn new(graph: &Graph, config: &ModelConfig, targets: Vec<f64>) -> Result<Self> {
        let mode = config.mode;
        if mode == FeatureMode::Geometry && graph.coords().is_none() {
            return Err(Error::config("geometry mode needs coordinates for every molecule"));
        }
        let ed = graph.edge_dim();
        let ctx = (mode == FeatureMode::Substructure).then(|| SubstructureContext::new(graph));
        let mut blocks: Vec<PathBlock> = (1..=config.max_path_len)
            .map(|k| PathBlock::empty(k, static_width(mode, ed, k)))
            .collect();
        let mut statics: Vec<Vec<f64>> = vec![Vec::new(); config.max_path_len];
        let query = PathQuery {
            max_len: config.max_path_len,
            mode: if config.exact_length {
                LengthMode::Exact
            } else {
                LengthMode::UpTo
            },
            cap: config.path_cap,
        };
        let mut sampler = config.path_budget.map(|_| PathSampler::new(config.seed));

        for v in 0..graph.n() {
            let paths = match (&mut sampler, config.path_budget) {
                (Some(s), Some(budget)) => {
                    let mut p = s.sample(graph, v, config.max_path_len, budget);
                    if config.exact_length {
                        p.retain(|p| p.len() == config.max_path_len);
                    }
                    p
                }
                _ => enumerate_paths_with(graph, v, query)?,
            };
            for path in paths {
                let k = path.len();
                let block = &mut blocks[k - 1];
                let row = &mut statics[k - 1];
                push_path(graph, &path, mode, ctx.as_ref(), block, row)?;
            }
        }
        for (block, row) in blocks.iter_mut().zip(statics) {
            let width = block.statics.cols();
            block.statics = Tensor::from_vec(block.count(), width, row)?;
        }

        let mut edge_src = Vec::new();
        let mut edge_dst = Vec::new();
        let mut ef = Vec::new();
        for v in 0..graph.n() {
            for &w in graph.neighbors(v) {
                edge_src.push(v);
                edge_dst.push(w);
                ef.extend_from_slice(graph.edge_features(v, w).unwrap());
            }
        }
        Ok(MoleculeFeatures {
            n: graph.n(),
            x: Tensor::from_vec(graph.n(), graph.node_dim(), graph.node_feature_matrix().to_vec())?,
            blocks,
            edge_features: Tensor::from_vec(edge_src.len(), ed, ef)?,
            edge_src,
            edge_dst,
            targets,
        })
    }

    pub fn path_count(&self) -> usize {
        self.blocks.iter().map(PathBlock::count).sum()
    }
}

fn push_path(
    graph: &Graph,
    path: &Path,
    mode: FeatureMode,
    ctx: Option<&SubstructureContext>,
    block: &mut PathBlock,
    row: &mut Vec<f64>,
) -> Result<()> {
    let p = path.nodes();
    block.roots.push(p[0]);
    for (j, &u) in p[1..].iter().enumerate() {
        block.nodes[j].push(u);
    }
    for w in p.windows(2) {
        row.extend_from_slice(graph.edge_features(w[0], w[1]).unwrap());
    }
    match mode {
        FeatureMode::Base => {}
        FeatureMode::Substructure => row.extend(ctx.unwrap().path_features(path).to_vec()),
        FeatureMode::Geometry => row.extend(geometry_path_features(graph, path)?.to_vec()),
    }
    Ok(())
}

/// Index-shifted concatenation of several molecules.
#[derive(Clone, Debug)]
pub struct Batch {
    pub n: usize,
    pub graphs: usize,
    pub x: Tensor,
    pub graph_of: Index,
    pub blocks: Vec<BatchBlock>,
    pub edge_src: Index,
    pub edge_dst: Index,
    pub edge_features: Tensor,
    /// `graphs × targets`.
    pub targets: Tensor,
}

#[derive(Clone, Debug)]
pub struct BatchBlock {
    pub len: usize,
    pub roots: Index,
    pub nodes: Vec<Index>,
    pub statics: Tensor,
}

impl BatchBlock {
    pub fn count(&self) -> usize {
        self.roots.len()
    }
}

fn stack(parts: &[&Tensor], cols: usize) -> Result<Tensor> {
    let mut data = Vec::new();
    let mut rows = 0;
    for t in parts {
        if t.cols() != cols {
            return Err(Error::config(format!("feature width {} where {cols} expected", t.cols())));
        }
        rows += t.rows();
        data.extend_from_slice(t.data());
    }
    Tensor::from_vec(rows, cols, data)
}

impl Batch {
    pub fn new(mols: &[&MoleculeFeatures]) -> Result<Self> {
        let first = mols
            .first()
            .ok_or_else(|| Error::config("cannot batch zero molecules"))?;
        let n_targets = first.targets.len();
        let mut offsets = Vec::with_capacity(mols.len());
        let mut n = 0;
        let mut graph_of = Vec::new();
        for (g, m) in mols.iter().enumerate() {
            if m.blocks.len() != first.blocks.len() || m.targets.len() != n_targets {
                return Err(Error::config("molecules in a batch disagree on path length or target count"));
            }
            offsets.push(n);
            graph_of.extend(std::iter::repeat(g).take(m.n));
            n += m.n;
        }
        let shift = |v: &[usize], off: usize, out: &mut Vec<usize>| out.extend(v.iter().map(|&i| i + off));

        let mut blocks = Vec::with_capacity(first.blocks.len());
        for k in 0..first.blocks.len() {
            let len = k + 1;
            let mut roots = Vec::new();
            let mut nodes = vec![Vec::new(); len];
            for (m, &off) in mols.iter().zip(&offsets) {
                let b = &m.blocks[k];
                shift(&b.roots, off, &mut roots);
                for j in 0..len {
                    shift(&b.nodes[j], off, &mut nodes[j]);
                }
            }
            let parts: Vec<&Tensor> = mols.iter().map(|m| &m.blocks[k].statics).collect();
            blocks.push(BatchBlock {
                len,
                roots: Rc::from(roots),
                nodes: nodes.into_iter().map(Rc::from).collect(),
                statics: stack(&parts, first.blocks[k].statics.cols())?,
            });
        }

        let mut edge_src = Vec::new();
        let mut edge_dst = Vec::new();
        for (m, &off) in mols.iter().zip(&offsets) {
            shift(&m.edge_src, off, &mut edge_src);
            shift(&m.edge_dst, off, &mut edge_dst);
        }
        let xs: Vec<&Tensor> = mols.iter().map(|m| &m.x).collect();
        let es: Vec<&Tensor> = mols.iter().map(|m| &m.edge_features).collect();
        let targets: Vec<f64> = mols.iter().flat_map(|m| m.targets.iter().copied()).collect();
        Ok(Batch {
            n,
            graphs: mols.len(),
            x: stack(&xs, first.x.cols())?,
            graph_of: Rc::from(graph_of),
            blocks,
            edge_src: Rc::from(edge_src),
            edge_dst: Rc::from(edge_dst),
            edge_features: stack(&es, first.edge_features.cols())?,
            targets: Tensor::from_vec(mols.len(), n_targets, targets)?,
        })
    }
}
