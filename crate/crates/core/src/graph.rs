//! Weighted undirected population graphs and the random-walk transition
//! matrix they induce.
//!
//! Nodes carry external string labels (as read from edge lists) and dense
//! internal ids `0..N`. Edges are stored symmetrically; an explicit self-loop
//! `(i, i, w)` contributes `w` once to `deg(i)`.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Tolerance used for the stochasticity and detailed-balance checks.
pub const BALANCE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph<T> {
    /// Sorted neighbor lists; `(j, w_ij)` appears in row `i` and `(i, w_ij)` in row `j`.
    adjacency: Vec<Vec<(usize, T)>>,
    labels: Vec<String>,
}

impl<T: Real> WeightedGraph<T> {
    /// Builds a graph on `node_count` nodes labelled `"0".."N-1"`.
    ///
    /// Repeated pairs (in either direction) collapse to the maximum weight.
    /// Zero weights are dropped.
    pub fn from_edges<I>(node_count: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, T)>,
    {
        let labels = (0..node_count).map(|i| i.to_string()).collect();
        Self::from_labeled_edges(labels, edges)
    }

    pub fn from_labeled_edges<I>(labels: Vec<String>, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, T)>,
    {
        let n = labels.len();
        if n == 0 {
            return Err(Error::EmptyGraph);
        }
        let mut collapsed: BTreeMap<(usize, usize), T> = BTreeMap::new();
        for (u, v, w) in edges {
            for id in [u, v] {
                if id >= n {
                    return Err(Error::NodeOutOfRange { id, count: n });
                }
            }
            if !(w >= T::zero()) {
                return Err(Error::NegativeWeight {
                    u: labels[u].clone(),
                    v: labels[v].clone(),
                    weight: w.as_f64(),
                });
            }
            if w == T::zero() {
                continue;
            }
            let key = (u.min(v), u.max(v));
            let entry = collapsed.entry(key).or_insert(w);
            if w > *entry {
                *entry = w;
            }
        }
        let mut adjacency = vec![Vec::new(); n];
        for (&(u, v), &w) in &collapsed {
            adjacency[u].push((v, w));
            if u != v {
                adjacency[v].push((u, w));
            }
        }
        for row in &mut adjacency {
            row.sort_by_key(|&(j, _)| j);
        }
        Ok(Self { adjacency, labels })
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges().count()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> &str {
        &self.labels[i]
    }

    /// Internal id of an external label.
    pub fn id_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, T)] {
        &self.adjacency[i]
    }

    pub fn weight(&self, i: usize, j: usize) -> T {
        self.adjacency[i]
            .binary_search_by_key(&j, |&(k, _)| k)
            .map(|pos| self.adjacency[i][pos].1)
            .unwrap_or_else(|_| T::zero())
    }

    pub fn degree(&self, i: usize) -> T {
        self.adjacency[i].iter().fold(T::zero(), |acc, &(_, w)| acc + w)
    }

    pub fn degrees(&self) -> Vec<T> {
        (0..self.node_count()).map(|i| self.degree(i)).collect()
    }

    pub fn volume(&self) -> T {
        self.degrees().into_iter().fold(T::zero(), |a, d| a + d)
    }

    /// Edges `(i, j, w)` with `i <= j`, each undirected edge once.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        self.adjacency.iter().enumerate().flat_map(|(i, row)| {
            row.iter()
                .filter(move |&&(j, _)| j >= i)
                .map(move |&(j, w)| (i, j, w))
        })
    }

    /// Dense weighted adjacency matrix.
    pub fn adjacency_matrix(&self) -> DMatrix<T> {
        let n = self.node_count();
        let mut a = DMatrix::zeros(n, n);
        for (i, j, w) in self.edges() {
            a[(i, j)] = w;
            a[(j, i)] = w;
        }
        a
    }

    pub fn is_connected(&self) -> bool {
        self.components().len() == 1
    }

    /// Connected components, each sorted ascending, in order of their
    /// smallest member.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.node_count();
        let mut seen = vec![false; n];
        let mut out = Vec::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            seen[start] = true;
            let mut comp = vec![start];
            let mut queue = VecDeque::from([start]);
            while let Some(u) = queue.pop_front() {
                for &(v, _) in &self.adjacency[u] {
                    if !seen[v] {
                        seen[v] = true;
                        comp.push(v);
                        queue.push_back(v);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    /// Induced subgraph on the largest connected component.
    ///
    /// Ties between equally large components go to the one containing the
    /// smallest original id. Relative id order is preserved.
    pub fn largest_connected_component(&self) -> Result<Subgraph<T>> {
        if self.node_count() == 0 {
            return Err(Error::EmptyGraph);
        }
        let components = self.components();
        // components come ordered by minimum id; on equal size the earlier one compares greater
        let best = components
            .iter()
            .enumerate()
            .max_by(|(ia, a), (ib, b)| a.len().cmp(&b.len()).then(ib.cmp(ia)))
            .map(|(_, c)| c.clone())
            .expect("non-empty graph has a component");
        self.induced(&best)
    }

    /// Induced subgraph on `nodes` (must be sorted, distinct).
    pub fn induced(&self, nodes: &[usize]) -> Result<Subgraph<T>> {
        let mut old_to_new = vec![None; self.node_count()];
        for (new, &old) in nodes.iter().enumerate() {
            old_to_new[old] = Some(new);
        }
        let labels = nodes.iter().map(|&o| self.labels[o].clone()).collect();
        let edges = self.edges().filter_map(|(i, j, w)| {
            Some((old_to_new[i]?, old_to_new[j]?, w))
        });
        let graph = Self::from_labeled_edges(labels, edges.collect::<Vec<_>>())?;
        Ok(Subgraph {
            graph,
            original_ids: nodes.to_vec(),
            old_to_new,
        })
    }

    /// Writes sorted `u v w` lines using external labels.
    pub fn write_edge_list<W: Write>(&self, mut out: W) -> Result<()> {
        let mut lines: Vec<(String, String, T)> = self
            .edges()
            .map(|(i, j, w)| {
                let (a, b) = (&self.labels[i], &self.labels[j]);
                if a <= b {
                    (a.clone(), b.clone(), w)
                } else {
                    (b.clone(), a.clone(), w)
                }
            })
            .collect();
        lines.sort_by(|x, y| (&x.0, &x.1).cmp(&(&y.0, &y.1)));
        for (a, b, w) in lines {
            writeln!(out, "{a} {b} {w}")?;
        }
        Ok(())
    }
}

/// Parses a whitespace-separated edge list (`u v` or `u v w` per line,
/// `#` comments). Labels get ids in order of first appearance.
pub fn read_edge_list<T: Real, R: BufRead>(source: R) -> Result<WeightedGraph<T>> {
    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut labels: Vec<String> = Vec::new();
    let mut edges = Vec::new();
    let mut intern = |label: &str, labels: &mut Vec<String>| -> usize {
        *ids.entry(label.to_string()).or_insert_with(|| {
            labels.push(label.to_string());
            labels.len() - 1
        })
    };
    for (idx, line) in source.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        let weight = match fields.len() {
            2 => T::one(),
            3 => {
                let w: f64 = fields[2].parse().map_err(|_| Error::Parse {
                    line: lineno,
                    message: format!("bad weight {:?}", fields[2]),
                })?;
                if !w.is_finite() {
                    return Err(Error::Parse {
                        line: lineno,
                        message: format!("non-finite weight {:?}", fields[2]),
                    });
                }
                if w < 0.0 {
                    return Err(Error::NegativeWeight {
                        u: fields[0].to_string(),
                        v: fields[1].to_string(),
                        weight: w,
                    });
                }
                T::lit(w)
            }
            k => {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("expected 2 or 3 fields, found {k}"),
                })
            }
        };
        let u = intern(fields[0], &mut labels);
        let v = intern(fields[1], &mut labels);
        edges.push((u, v, weight));
    }
    if labels.is_empty() {
        return Err(Error::EmptyGraph);
    }
    WeightedGraph::from_labeled_edges(labels, edges)
}

/// Result of restricting a graph to a node subset.
#[derive(Debug, Clone)]
pub struct Subgraph<T> {
    pub graph: WeightedGraph<T>,
    /// `original_ids[new] = old`.
    pub original_ids: Vec<usize>,
    old_to_new: Vec<Option<usize>>,
}

impl<T> Subgraph<T> {
    pub fn new_id(&self, old: usize) -> Option<usize> {
        self.old_to_new.get(old).copied().flatten()
    }
}

/// Row-stochastic transition matrix together with a stationary
/// distribution it is reversible with respect to.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix<T: Real> {
    matrix: DMatrix<T>,
    stationary: DVector<T>,
}

impl<T: Real> TransitionMatrix<T> {
    /// `P_ij = w_ij / deg(i)`, `pi(i) = deg(i) / vol(G)`.
    pub fn from_graph(graph: &WeightedGraph<T>) -> Result<Self> {
        let n = graph.node_count();
        if n == 0 {
            return Err(Error::EmptyGraph);
        }
        let degrees = graph.degrees();
        if let Some(i) = degrees.iter().position(|&d| !(d > T::zero())) {
            return Err(Error::ZeroDegree(graph.label(i).to_string()));
        }
        let volume = degrees.iter().fold(T::zero(), |a, &d| a + d);
        let mut matrix = DMatrix::zeros(n, n);
        for i in 0..n {
            for &(j, w) in graph.neighbors(i) {
                matrix[(i, j)] = w / degrees[i];
            }
        }
        let stationary = DVector::from_iterator(n, degrees.iter().map(|&d| d / volume));
        Self::with_stationary(matrix, stationary)
    }

    /// Validates a chain against a supplied stationary distribution.
    pub fn with_stationary(matrix: DMatrix<T>, stationary: DVector<T>) -> Result<Self> {
        let n = matrix.nrows();
        if matrix.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: matrix.ncols(),
            });
        }
        if stationary.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: stationary.len(),
            });
        }
        let tol = T::tolerance(BALANCE_TOL);
        for i in 0..n {
            let mut sum = T::zero();
            for j in 0..n {
                let p = matrix[(i, j)];
                if !(p >= T::zero()) {
                    return Err(Error::InvalidParameter(format!(
                        "negative transition probability at ({i}, {j})"
                    )));
                }
                sum += p;
            }
            if (sum - T::one()).abs() > tol {
                return Err(Error::NotStochastic {
                    row: i,
                    sum: sum.as_f64(),
                });
            }
        }
        if stationary.iter().any(|&p| !(p > T::zero())) {
            return Err(Error::InvalidDistribution(
                "stationary distribution must be positive".into(),
            ));
        }
        let total = stationary.iter().fold(T::zero(), |a, &p| a + p);
        if (total - T::one()).abs() > tol {
            return Err(Error::InvalidDistribution(format!(
                "stationary distribution sums to {total}"
            )));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let residual =
                    (stationary[i] * matrix[(i, j)] - stationary[j] * matrix[(j, i)]).abs();
                if residual > tol {
                    return Err(Error::NotReversible {
                        i,
                        j,
                        residual: residual.as_f64(),
                    });
                }
            }
        }
        Ok(Self { matrix, stationary })
    }

    /// Solves for the stationary distribution of an irreducible chain and
    /// checks reversibility against it.
    pub fn from_reversible(matrix: DMatrix<T>) -> Result<Self> {
        let n = matrix.nrows();
        if matrix.ncols() != n || n == 0 {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: matrix.ncols(),
            });
        }
        // pi (P - I) = 0 with the last equation replaced by sum(pi) = 1
        let mut system = matrix.transpose() - DMatrix::identity(n, n);
        for j in 0..n {
            system[(n - 1, j)] = T::one();
        }
        let mut rhs = DVector::zeros(n);
        rhs[n - 1] = T::one();
        let stationary = system.lu().solve(&rhs).ok_or_else(|| {
            Error::InvalidDistribution("chain is reducible; stationary distribution not unique".into())
        })?;
        Self::with_stationary(matrix, stationary)
    }

    pub fn state_count(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.matrix
    }

    pub fn stationary(&self) -> &DVector<T> {
        &self.stationary
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.matrix[(i, j)]
    }

    /// `E_pi(y)`.
    pub fn stationary_mean(&self, y: &[T]) -> T {
        y.iter()
            .zip(self.stationary.iter())
            .fold(T::zero(), |a, (&v, &p)| a + v * p)
    }

    /// `Var_pi(y)`.
    pub fn stationary_variance(&self, y: &[T]) -> T {
        let mean = self.stationary_mean(y);
        y.iter()
            .zip(self.stationary.iter())
            .fold(T::zero(), |a, (&v, &p)| a + p * (v - mean) * (v - mean))
    }
}
