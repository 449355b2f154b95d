//! Graph data model: dense adjacency, node features and a class label.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Matrix;

const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("graph has no nodes")]
    Empty,
    #[error("adjacency is {0}x{1}, expected square")]
    NotSquare(usize, usize),
    #[error("adjacency not symmetric at ({0}, {1})")]
    Asymmetric(usize, usize),
    #[error("negative edge weight at ({0}, {1})")]
    NegativeWeight(usize, usize),
    #[error("self-loop at node {0}; input adjacency must have a zero diagonal")]
    SelfLoop(usize),
    #[error("feature matrix has {features} rows but graph has {nodes} nodes")]
    FeatureRows { nodes: usize, features: usize },
    #[error("non-finite value in graph")]
    NonFinite,
    #[error("edge endpoint {index} out of range for {n} nodes")]
    NodeIndex { index: usize, n: usize },
    #[error("not a permutation of 0..{0}")]
    NotPermutation(usize),
    #[error("assignment chain mismatch at step {step}: expected {expected} rows, got {got}")]
    ChainShape {
        step: usize,
        expected: usize,
        got: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    adjacency: Matrix,
    features: Matrix,
    pub label: usize,
}

fn validate(adj: &Matrix, feat: &Matrix, zero_diag: bool) -> Result<(), GraphError> {
    let (r, c) = adj.dim();
    if r == 0 {
        return Err(GraphError::Empty);
    }
    if r != c {
        return Err(GraphError::NotSquare(r, c));
    }
    if feat.nrows() != r {
        return Err(GraphError::FeatureRows {
            nodes: r,
            features: feat.nrows(),
        });
    }
    if !adj.iter().chain(feat.iter()).all(|v| v.is_finite()) {
        return Err(GraphError::NonFinite);
    }
    for i in 0..r {
        if zero_diag && adj[[i, i]] != 0.0 {
            return Err(GraphError::SelfLoop(i));
        }
        for j in 0..r {
            if adj[[i, j]] < 0.0 {
                return Err(GraphError::NegativeWeight(i, j));
            }
            if (adj[[i, j]] - adj[[j, i]]).abs() > SYMMETRY_TOL * (1.0 + adj[[i, j]].abs()) {
                return Err(GraphError::Asymmetric(i, j));
            }
        }
    }
    Ok(())
}

impl Graph {
    /// Input graph: symmetric, non-negative, zero diagonal.
    pub fn new(adjacency: Matrix, features: Matrix, label: usize) -> Result<Self, GraphError> {
        validate(&adjacency, &features, true)?;
        Ok(Self {
            adjacency,
            features,
            label,
        })
    }

    /// Weighted graph that may carry self-weights (coarsened explanations).
    pub fn weighted(adjacency: Matrix, features: Matrix, label: usize) -> Result<Self, GraphError> {
        validate(&adjacency, &features, false)?;
        Ok(Self {
            adjacency,
            features,
            label,
        })
    }

    /// Builds an unweighted graph from an undirected edge list. Duplicate
    /// edges collapse; self-loops are dropped.
    pub fn from_edges(
        n: usize,
        edges: &[(usize, usize)],
        features: Matrix,
        label: usize,
    ) -> Result<Self, GraphError> {
        let mut adj = Array2::zeros((n, n));
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(GraphError::NodeIndex { index: u.max(v), n });
            }
            if u != v {
                adj[[u, v]] = 1.0;
                adj[[v, u]] = 1.0;
            }
        }
        Self::new(adj, features, label)
    }

    pub fn n(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn adjacency(&self) -> &Matrix {
        &self.adjacency
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn with_features(&self, features: Matrix) -> Result<Self, GraphError> {
        validate(&self.adjacency, &features, false)?;
        Ok(Self {
            adjacency: self.adjacency.clone(),
            features,
            label: self.label,
        })
    }

    /// Number of undirected edges with positive weight (self-weights excluded).
    pub fn edge_count(&self) -> usize {
        let n = self.n();
        (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .filter(|&(i, j)| self.adjacency[[i, j]] > 0.0)
            .count()
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.n();
        let mut out = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if self.adjacency[[i, j]] > 0.0 {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.n())
            .map(|i| {
                self.adjacency
                    .row(i)
                    .iter()
                    .enumerate()
                    .filter(|&(j, &w)| j != i && w > 0.0)
                    .count()
            })
            .collect()
    }

    pub fn is_connected(&self) -> bool {
        let n = self.n();
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for v in 0..n {
                if !seen[v] && v != u && self.adjacency[[u, v]] > 0.0 {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// 0/1 structure view: off-diagonal entries at or above
    /// `frac * max_offdiag` become edges; the diagonal is dropped.
    pub fn binarized(&self, frac: f64) -> Graph {
        let n = self.n();
        let mut max = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    max = max.max(self.adjacency[[i, j]]);
                }
            }
        }
        let mut adj = Array2::zeros((n, n));
        if max > 0.0 {
            let cut = frac * max;
            for i in 0..n {
                for j in 0..n {
                    if i != j && self.adjacency[[i, j]] >= cut {
                        adj[[i, j]] = 1.0;
                    }
                }
            }
        }
        Graph {
            adjacency: adj,
            features: self.features.clone(),
            label: self.label,
        }
    }
}

/// `D^-1/2 (A + I) D^-1/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    pub matrix: Matrix,
}

pub fn normalize_adjacency(g: &Graph) -> Result<NormalizedAdjacency, GraphError> {
    validate(&g.adjacency, &g.features, false)?;
    Ok(NormalizedAdjacency {
        matrix: normalize_matrix(&g.adjacency),
    })
}

pub(crate) fn normalize_matrix(a: &Matrix) -> Matrix {
    let n = a.nrows();
    let hat = a + &Array2::<f64>::eye(n);
    let dinv: Vec<f64> = hat.sum_axis(Axis(1)).iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut out = hat;
    for i in 0..n {
        for j in 0..n {
            out[[i, j]] *= dinv[i] * dinv[j];
        }
    }
    out
}

/// Relabels node `i` as `perm[i]`.
pub fn permute_nodes(g: &Graph, perm: &[usize]) -> Result<Graph, GraphError> {
    let n = g.n();
    if perm.len() != n {
        return Err(GraphError::NotPermutation(n));
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || seen[p] {
            return Err(GraphError::NotPermutation(n));
        }
        seen[p] = true;
    }
    let mut adj = Array2::zeros((n, n));
    let mut feat = Array2::zeros(g.features.dim());
    for i in 0..n {
        feat.row_mut(perm[i]).assign(&g.features.row(i));
        for j in 0..n {
            adj[[perm[i], perm[j]]] = g.adjacency[[i, j]];
        }
    }
    Ok(Graph {
        adjacency: adj,
        features: feat,
        label: g.label,
    })
}

/// Composes the assignment chain `S1 ... Sl` onto the raw graph:
/// features `(S1..Sl)^T X`, adjacency `(S1..Sl)^T A (S1..Sl)`.
pub fn coarsen_raw(g: &Graph, assignments: &[Matrix]) -> Result<Graph, GraphError> {
    let mut expected = g.n();
    let mut chain: Option<Matrix> = None;
    for (step, s) in assignments.iter().enumerate() {
        if s.nrows() != expected {
            return Err(GraphError::ChainShape {
                step,
                expected,
                got: s.nrows(),
            });
        }
        expected = s.ncols();
        chain = Some(match chain {
            None => s.clone(),
            Some(c) => c.dot(s),
        });
    }
    let Some(c) = chain else {
        return Ok(g.clone());
    };
    let feat = c.t().dot(&g.features);
    let mut adj = c.t().dot(&g.adjacency).dot(&c);
    // Symmetrize away round-off.
    let at = adj.t().to_owned();
    adj = (&adj + &at) * 0.5;
    Graph::weighted(adj, feat, g.label)
}

/// One-hot node degree, degrees at or above `bins - 1` share the last bin.
pub fn degree_one_hot(adjacency: &Matrix, bins: usize) -> Matrix {
    let n = adjacency.nrows();
    let bins = bins.max(1);
    let mut out = Array2::zeros((n, bins));
    for i in 0..n {
        let d = (0..n).filter(|&j| j != i && adjacency[[i, j]] > 0.0).count();
        out[[i, d.min(bins - 1)]] = 1.0;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn path(n: usize) -> Graph {
        let edges: Vec<_> = (0..n - 1).map(|i| (i, i + 1)).collect();
        Graph::from_edges(n, &edges, Array2::ones((n, 2)), 0).unwrap()
    }

    fn random_graph(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Graph {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.gen_bool(0.4) {
                    edges.push((i, j));
                }
            }
        }
        let feat = Array2::from_shape_fn((n, d), |_| rng.gen_range(-1.0..1.0));
        Graph::from_edges(n, &edges, feat, 1).unwrap()
    }

    #[test]
    fn normalize_single_node() {
        let g = Graph::new(array![[0.0]], array![[1.0]], 0).unwrap();
        assert_eq!(normalize_adjacency(&g).unwrap().matrix, array![[1.0]]);
    }

    #[test]
    fn normalize_two_node_path() {
        let m = normalize_adjacency(&path(2)).unwrap().matrix;
        for v in m.iter() {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn normalize_triangle_is_all_thirds() {
        let g = Graph::from_edges(3, &[(0, 1), (1, 2), (2, 0)], Array2::ones((3, 1)), 0).unwrap();
        let m = normalize_adjacency(&g).unwrap().matrix;
        for v in m.iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn invalid_adjacency_rejected() {
        let feat = Array2::ones((2, 1));
        assert_eq!(
            Graph::new(array![[0.0, 1.0], [0.0, 0.0]], feat.clone(), 0),
            Err(GraphError::Asymmetric(0, 1))
        );
        assert_eq!(
            Graph::new(array![[0.0, -1.0], [-1.0, 0.0]], feat.clone(), 0),
            Err(GraphError::NegativeWeight(0, 1))
        );
        assert_eq!(
            Graph::new(array![[1.0, 0.0], [0.0, 0.0]], feat, 0),
            Err(GraphError::SelfLoop(0))
        );
    }

    #[test]
    fn permute_identity_and_automorphism() {
        let g = path(2);
        assert_eq!(permute_nodes(&g, &[0, 1]).unwrap(), g);
        assert_eq!(permute_nodes(&g, &[1, 0]).unwrap(), g);
        assert!(permute_nodes(&g, &[0, 0]).is_err());
        assert!(permute_nodes(&g, &[0]).is_err());
    }

    #[test]
    fn permute_three_path_reversal() {
        let g = path(3);
        let p = permute_nodes(&g, &[2, 1, 0]).unwrap();
        // Edges (0,1),(1,2) relabel to (2,1),(1,0): same edge set.
        let mut e = p.edges();
        e.sort();
        assert_eq!(e, vec![(0, 1), (1, 2)]);
        let feat = array![[1.0], [2.0], [3.0]];
        let g = Graph::from_edges(3, &[(0, 1)], feat, 0).unwrap();
        let p = permute_nodes(&g, &[2, 1, 0]).unwrap();
        assert_eq!(p.edges(), vec![(1, 2)]);
        assert_eq!(p.features().column(0).to_vec(), vec![3.0, 2.0, 1.0]);
    }

    #[test]
    fn normalization_commutes_with_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let g = random_graph(&mut rng, 7, 2);
            let mut perm: Vec<usize> = (0..7).collect();
            rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
            let lhs = normalize_adjacency(&permute_nodes(&g, &perm).unwrap()).unwrap().matrix;
            let base = normalize_adjacency(&g).unwrap().matrix;
            for i in 0..7 {
                for j in 0..7 {
                    assert!((lhs[[perm[i], perm[j]]] - base[[i, j]]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn coarsen_identity_and_merge() {
        let g = path(2);
        assert_eq!(coarsen_raw(&g, &[Array2::eye(2)]).unwrap().adjacency(), g.adjacency());
        let feat = array![[1.0, 2.0], [3.0, 5.0]];
        let g = Graph::from_edges(2, &[(0, 1)], feat, 0).unwrap();
        let c = coarsen_raw(&g, &[array![[1.0], [1.0]]]).unwrap();
        assert_eq!(c.adjacency(), &array![[2.0]]);
        assert_eq!(c.features(), &array![[4.0, 7.0]]);
    }

    #[test]
    fn coarsen_chain_shape_checked() {
        let g = path(3);
        let err = coarsen_raw(&g, &[Array2::ones((3, 2)), Array2::ones((3, 1))]).unwrap_err();
        assert_eq!(
            err,
            GraphError::ChainShape {
                step: 1,
                expected: 2,
                got: 3
            }
        );
    }

    fn row_stochastic(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Matrix {
        let mut s = Array2::from_shape_fn((n, k), |_| rng.gen_range(0.01..1.0));
        for mut row in s.rows_mut() {
            let t = row.sum();
            row.mapv_inplace(|v| v / t);
        }
        s
    }

    #[test]
    fn coarsen_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let g = random_graph(&mut rng, 6, 3);
            let s = row_stochastic(&mut rng, 6, 3);
            let c = coarsen_raw(&g, &[s.clone()]).unwrap();
            for j in 0..3 {
                for l in 0..3 {
                    let mut brute = 0.0;
                    for i in 0..6 {
                        for k in 0..6 {
                            brute += s[[i, j]] * g.adjacency()[[i, k]] * s[[k, l]];
                        }
                    }
                    assert!((c.adjacency()[[j, l]] - brute).abs() < 1e-12);
                }
            }
            // Total weight is preserved under row-stochastic assignments.
            assert!((c.adjacency().sum() - g.adjacency().sum()).abs() < 1e-9);
        }
    }

    #[test]
    fn degree_one_hot_caps() {
        let g = Graph::from_edges(4, &[(0, 1), (0, 2), (0, 3)], Array2::ones((4, 1)), 0).unwrap();
        let f = degree_one_hot(g.adjacency(), 3);
        assert_eq!(f.row(0).to_vec(), vec![0.0, 0.0, 1.0]);
        assert_eq!(f.row(1).to_vec(), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn binarized_view_drops_diagonal() {
        let g = Graph::weighted(
            array![[5.0, 2.0, 0.4], [2.0, 1.0, 1.0], [0.4, 1.0, 0.0]],
            Array2::ones((3, 1)),
            0,
        )
        .unwrap();
        let b = g.binarized(0.5);
        assert_eq!(b.edges(), vec![(0, 1), (1, 2)]);
        assert_eq!(b.adjacency()[[0, 0]], 0.0);
    }
}
