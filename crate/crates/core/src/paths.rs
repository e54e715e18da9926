//! Simple-path enumeration and sampling.
//!
//! The message of node `v` sums over every simple path rooted at `v`. For
//! small molecular graphs the full set is enumerated; for large graphs a
//! seeded sampler draws a subset.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;

/// Default upper bound on the number of paths rooted at a single node.
pub const DEFAULT_PATH_CAP: usize = 100_000;

/// A simple path `[v, v1, ..., vk]` rooted at `v`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Path(Vec<usize>);

impl Path {
    pub fn new(nodes: Vec<usize>) -> Self {
        Path(nodes)
    }

    pub fn nodes(&self) -> &[usize] {
        &self.0
    }

    /// Number of edges.
    pub fn len(&self) -> usize {
        self.0.len().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn root(&self) -> usize {
        self.0[0]
    }

    pub fn last(&self) -> usize {
        *self.0.last().unwrap()
    }

    /// Consecutive nodes adjacent and no node repeated.
    pub fn is_simple_in(&self, graph: &Graph) -> bool {
        if self.0.len() < 2 || self.0.iter().any(|&v| v >= graph.n()) {
            return false;
        }
        let adjacent = self.0.windows(2).all(|w| graph.has_edge(w[0], w[1]));
        let mut seen = self.0.clone();
        seen.sort_unstable();
        seen.dedup();
        adjacent && seen.len() == self.0.len()
    }
}

impl std::fmt::Display for Path {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut first = true;
        for v in &self.0 {
            if !first {
                f.write_str(" ")?;
            }
            write!(f, "{v}")?;
            first = false;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LengthMode {
    /// Every length `1..=max_len`.
    #[default]
    UpTo,
    /// Only paths of exactly `max_len` edges.
    Exact,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PathQuery {
    pub max_len: usize,
    pub mode: LengthMode,
    pub cap: usize,
}

impl PathQuery {
    pub fn up_to(max_len: usize) -> Self {
        PathQuery {
            max_len,
            mode: LengthMode::UpTo,
            cap: DEFAULT_PATH_CAP,
        }
    }

    pub fn exact(max_len: usize) -> Self {
        PathQuery {
            mode: LengthMode::Exact,
            ..PathQuery::up_to(max_len)
        }
    }
}

/// All simple paths rooted at `v` with `1..=max_len` edges, in lexicographic
/// order of their node sequences.
pub fn enumerate_paths(graph: &Graph, v: usize, max_len: usize) -> Result<Vec<Path>> {
    enumerate_paths_with(graph, v, PathQuery::up_to(max_len))
}

pub fn enumerate_paths_with(graph: &Graph, v: usize, query: PathQuery) -> Result<Vec<Path>> {
    if v >= graph.n() {
        return Err(Error::NodeOutOfRange { node: v, n: graph.n() });
    }
    if query.max_len == 0 {
        return Err(Error::InvalidArgument {
            op: "enumerate_paths",
            msg: "path length must be at least 1".into(),
        });
    }
    let mut out = Vec::new();
    let mut emitted = 0usize;
    let mut stack = vec![v];
    let mut on_path = vec![false; graph.n()];
    on_path[v] = true;
    extend(graph, &query, &mut stack, &mut on_path, &mut out, &mut emitted)?;
    Ok(out)
}

// Preorder DFS over sorted neighbor lists; preorder over sorted children is
// exactly lexicographic order of the node sequences.
fn extend(
    graph: &Graph,
    query: &PathQuery,
    stack: &mut Vec<usize>,
    on_path: &mut [bool],
    out: &mut Vec<Path>,
    emitted: &mut usize,
) -> Result<()> {
    let depth = stack.len() - 1;
    if depth == query.max_len {
        return Ok(());
    }
    let tail = *stack.last().unwrap();
    for &w in graph.neighbors(tail) {
        if on_path[w] {
            continue;
        }
        stack.push(w);
        on_path[w] = true;
        *emitted += 1;
        if *emitted > query.cap {
            return Err(Error::PathCapExceeded {
                node: stack[0],
                cap: query.cap,
            });
        }
        if query.mode == LengthMode::UpTo || depth + 1 == query.max_len {
            out.push(Path(stack.clone()));
        }
        extend(graph, query, stack, on_path, out, emitted)?;
        on_path[w] = false;
        stack.pop();
    }
    Ok(())
}

/// Brute-force path counts by length: checks every node sequence of length
/// `k + 1` starting at `v` for adjacency and distinctness. Index `k` of the
/// result holds the count for length `k`; index 0 is always 0.
///
/// Exponential in `max_len`; meant for graphs with a dozen nodes.
pub fn count_paths_oracle(graph: &Graph, v: usize, max_len: usize) -> Vec<usize> {
    let n = graph.n();
    let mut counts = vec![0; max_len + 1];
    for k in 1..=max_len {
        let total = n.checked_pow(k as u32).expect("oracle is limited to tiny graphs");
        let mut seq = vec![0usize; k + 1];
        seq[0] = v;
        for code in 0..total {
            let mut c = code;
            for slot in seq.iter_mut().skip(1) {
                *slot = c % n;
                c /= n;
            }
            let adjacent = seq.windows(2).all(|w| graph.has_edge(w[0], w[1]));
            let distinct = (0..seq.len()).all(|i| (i + 1..seq.len()).all(|j| seq[i] != seq[j]));
            if adjacent && distinct {
                counts[k] += 1;
            }
        }
    }
    counts
}

/// Seeded path sampler. One sampler per worker; results depend only on the
/// seed and the sequence of calls.
#[derive(Clone, Debug)]
pub struct PathSampler {
    rng: ChaCha8Rng,
}

impl PathSampler {
    pub fn new(seed: u64) -> Self {
        PathSampler {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Randomized depth-first search: at every hop the admissible neighbors
    /// are tried in a uniformly shuffled order, every visited prefix is
    /// emitted, and the search stops after `budget` paths. With a budget at
    /// least the total path count the result is the full path set.
    pub fn sample(&mut self, graph: &Graph, v: usize, max_len: usize, budget: usize) -> Vec<Path> {
        let mut out = Vec::new();
        if v >= graph.n() || max_len == 0 || budget == 0 {
            return out;
        }
        let mut on_path = vec![false; graph.n()];
        on_path[v] = true;
        let mut stack = vec![v];
        self.sample_dfs(graph, max_len, budget, &mut stack, &mut on_path, &mut out);
        out
    }

    fn sample_dfs(
        &mut self,
        graph: &Graph,
        max_len: usize,
        budget: usize,
        stack: &mut Vec<usize>,
        on_path: &mut [bool],
        out: &mut Vec<Path>,
    ) {
        if stack.len() > max_len {
            return;
        }
        let tail = *stack.last().unwrap();
        let mut options: Vec<usize> = graph
            .neighbors(tail)
            .iter()
            .copied()
            .filter(|&w| !on_path[w])
            .collect();
        options.shuffle(&mut self.rng);
        for w in options {
            if out.len() >= budget {
                return;
            }
            stack.push(w);
            on_path[w] = true;
            out.push(Path(stack.clone()));
            self.sample_dfs(graph, max_len, budget, stack, on_path, out);
            on_path[w] = false;
            stack.pop();
        }
    }

    /// Per-hop sampling: all first-order paths, then every path of length
    /// `k` is extended by up to `per_hop` uniformly chosen admissible
    /// neighbors (without replacement). `per_hop = 1` draws a single
    /// second- and third-order neighbor for each first-order neighbor.
    /// Dead ends simply stop growing.
    pub fn sample_per_hop(&mut self, graph: &Graph, v: usize, max_len: usize, per_hop: usize) -> Vec<Path> {
        let mut out = Vec::new();
        if v >= graph.n() || max_len == 0 {
            return out;
        }
        let mut frontier: Vec<Path> = graph.neighbors(v).iter().map(|&w| Path(vec![v, w])).collect();
        out.extend(frontier.iter().cloned());
        for _ in 1..max_len {
            if per_hop == 0 {
                break;
            }
            let mut next = Vec::new();
            for p in &frontier {
                let options: Vec<usize> = graph
                    .neighbors(p.last())
                    .iter()
                    .copied()
                    .filter(|w| !p.0.contains(w))
                    .collect();
                for &w in options.choose_multiple(&mut self.rng, per_hop.min(options.len())) {
                    let mut nodes = p.0.clone();
                    nodes.push(w);
                    next.push(Path(nodes));
                }
            }
            out.extend(next.iter().cloned());
            frontier = next;
        }
        out
    }
}

/// Convenience wrapper around [`PathSampler::sample`] with a fresh seed.
pub fn sample_paths(graph: &Graph, v: usize, max_len: usize, budget: usize, seed: u64) -> Vec<Path> {
    PathSampler::new(seed).sample(graph, v, max_len, budget)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nodes(paths: &[Path]) -> Vec<Vec<usize>> {
        paths.iter().map(|p| p.nodes().to_vec()).collect()
    }

    fn complete(n: usize) -> Graph {
        let mut e = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                e.push((i, j));
            }
        }
        Graph::from_edges(n, &e).unwrap()
    }

    fn by_len(paths: &[Path], max_len: usize) -> Vec<usize> {
        let mut c = vec![0; max_len + 1];
        for p in paths {
            c[p.len()] += 1;
        }
        c
    }

    #[test]
    fn chain_p4() {
        let g = Graph::from_edges(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
        let p = enumerate_paths(&g, 0, 3).unwrap();
        assert_eq!(nodes(&p), vec![vec![0, 1], vec![0, 1, 2], vec![0, 1, 2, 3]]);
    }

    #[test]
    fn star_dead_ends() {
        let g = Graph::from_edges(4, &[(0, 1), (0, 2), (0, 3)]).unwrap();
        let p = enumerate_paths(&g, 0, 2).unwrap();
        assert_eq!(by_len(&p, 2), vec![0, 3, 0]);
    }

    #[test]
    fn k4_counts_match_oracle() {
        let g = complete(4);
        let p = enumerate_paths(&g, 0, 3).unwrap();
        assert_eq!(by_len(&p, 3), vec![0, 3, 6, 6]);
        assert_eq!(count_paths_oracle(&g, 0, 3), vec![0, 3, 6, 6]);
        assert!(p.windows(2).all(|w| w[0] < w[1]), "lexicographic order");
    }

    #[test]
    fn oracle_small_cases() {
        assert_eq!(count_paths_oracle(&complete(3), 0, 2), vec![0, 2, 2]);
        let edge = Graph::from_edges(2, &[(0, 1)]).unwrap();
        assert_eq!(count_paths_oracle(&edge, 0, 5), vec![0, 1, 0, 0, 0, 0]);
        let lonely = Graph::from_edges(3, &[(1, 2)]).unwrap();
        assert_eq!(count_paths_oracle(&lonely, 0, 3), vec![0, 0, 0, 0]);
        assert!(enumerate_paths(&lonely, 0, 3).unwrap().is_empty());
    }

    #[test]
    fn exact_mode_keeps_only_full_length() {
        let g = complete(4);
        let p = enumerate_paths_with(&g, 0, PathQuery::exact(2)).unwrap();
        assert_eq!(p.len(), 6);
        assert!(p.iter().all(|p| p.len() == 2));
    }

    #[test]
    fn cap_guard_fires() {
        let g = complete(8);
        let q = PathQuery {
            cap: 50,
            ..PathQuery::up_to(4)
        };
        assert!(matches!(
            enumerate_paths_with(&g, 0, q),
            Err(Error::PathCapExceeded { node: 0, cap: 50 })
        ));
    }

    #[test]
    fn length_one_equals_neighbors() {
        let g = Graph::from_edges(5, &[(0, 3), (0, 1), (1, 2), (3, 4)]).unwrap();
        let p = enumerate_paths_with(&g, 0, PathQuery::exact(1)).unwrap();
        let last: Vec<usize> = p.iter().map(|p| p.last()).collect();
        assert_eq!(last, g.neighbors(0));
    }

    #[test]
    fn exhaustive_budget_recovers_enumeration() {
        let g = complete(5);
        let mut full = enumerate_paths(&g, 2, 3).unwrap();
        let mut sampled = sample_paths(&g, 2, 3, 10_000, 9);
        full.sort();
        sampled.sort();
        assert_eq!(full, sampled);
    }

    #[test]
    fn sampler_is_deterministic() {
        let g = complete(6);
        assert_eq!(sample_paths(&g, 0, 3, 7, 42), sample_paths(&g, 0, 3, 7, 42));
        let mut a = PathSampler::new(3);
        let mut b = PathSampler::new(3);
        assert_eq!(a.sample_per_hop(&g, 1, 3, 1), b.sample_per_hop(&g, 1, 3, 1));
    }

    #[test]
    fn per_hop_shape() {
        let g = complete(5);
        let mut s = PathSampler::new(1);
        let p = s.sample_per_hop(&g, 0, 3, 1);
        // 4 first-order neighbors, each extended once at hops 2 and 3
        assert_eq!(by_len(&p, 3), vec![0, 4, 4, 4]);
        assert!(p.iter().all(|p| p.is_simple_in(&g)));
        assert_eq!(by_len(&s.sample_per_hop(&g, 0, 3, 0), 3), vec![0, 4, 0, 0]);
    }

    // Chi-square goodness of fit against the uniform distribution over the
    // three admissible first hops of K4.
    #[test]
    fn first_hop_choice_is_uniform() {
        let g = complete(4);
        let draws = 10_000;
        let mut counts = [0usize; 4];
        for seed in 0..draws {
            let p = sample_paths(&g, 0, 3, 1, seed as u64);
            assert_eq!(p.len(), 1);
            counts[p[0].nodes()[1]] += 1;
        }
        let expected = draws as f64 / 3.0;
        let sigma = (draws as f64 * (1.0 / 3.0) * (2.0 / 3.0)).sqrt();
        for &c in &counts[1..] {
            assert!((c as f64 - expected).abs() < 3.0 * sigma, "{counts:?}");
        }
    }
}
