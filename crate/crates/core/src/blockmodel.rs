//! Blockmodels: block-level chains, their node-level expansions, and exact
//! joint laws of tree-indexed walks used to check that projecting a node walk
//! onto blocks gives the block walk.

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::graph::{TransitionMatrix, WeightedGraph};
use crate::sampler::RdsSample;
use crate::scalar::Real;
use crate::tree::ReferralTree;

/// `k`-block model: block transition matrix, block trait and an optional
/// node-level expansion with `nodes_per_block` nodes in every block.
#[derive(Debug, Clone)]
pub struct BlockModel<T: Real> {
    chain: TransitionMatrix<T>,
    traits: Vec<T>,
    nodes_per_block: Option<usize>,
}

impl<T: Real> BlockModel<T> {
    pub fn new(transition: DMatrix<T>, traits: Vec<T>) -> Result<Self> {
        let chain = TransitionMatrix::from_reversible(transition)?;
        if traits.len() != chain.state_count() {
            return Err(Error::DimensionMismatch {
                expected: chain.state_count(),
                got: traits.len(),
            });
        }
        Ok(Self {
            chain,
            traits,
            nodes_per_block: None,
        })
    }

    pub fn two_block(params: TwoBlockParams<T>, traits: [T; 2]) -> Result<Self> {
        Self::new(params.matrix(), traits.to_vec())
    }

    pub fn with_expansion(mut self, nodes_per_block: usize) -> Result<Self> {
        if nodes_per_block == 0 {
            return Err(Error::InvalidParameter("expansion needs at least one node per block".into()));
        }
        self.nodes_per_block = Some(nodes_per_block);
        Ok(self)
    }

    pub fn k(&self) -> usize {
        self.traits.len()
    }

    pub fn chain(&self) -> &TransitionMatrix<T> {
        &self.chain
    }

    pub fn traits(&self) -> &[T] {
        &self.traits
    }

    pub fn nodes_per_block(&self) -> Option<usize> {
        self.nodes_per_block
    }

    /// The `k`-state chain on block labels.
    pub fn block_process(&self) -> &TransitionMatrix<T> {
        &self.chain
    }

    /// Block of node `i` in the expansion (nodes are numbered block by block).
    pub fn block_of(&self, node: usize) -> Result<usize> {
        let s = self.expansion_size()?;
        if node >= s * self.k() {
            return Err(Error::NodeOutOfRange {
                id: node,
                count: s * self.k(),
            });
        }
        Ok(node / s)
    }

    pub fn assignment(&self) -> Result<Vec<usize>> {
        let s = self.expansion_size()?;
        Ok((0..s * self.k()).map(|i| i / s).collect())
    }

    /// Node graph with `w_ij = pi_a P_ab` for `a = b(i)`, `b = b(j)`,
    /// self-loops included, so that the node walk moves to a uniformly chosen
    /// node of a block drawn from the block chain.
    pub fn expand_graph(&self) -> Result<WeightedGraph<T>> {
        let s = self.expansion_size()?;
        let k = self.k();
        let pi = self.chain.stationary();
        let mut edges = Vec::new();
        for i in 0..s * k {
            for j in i..s * k {
                let (a, b) = (i / s, j / s);
                let w = pi[a] * self.chain.get(a, b);
                if w > T::zero() {
                    edges.push((i, j, w));
                }
            }
        }
        WeightedGraph::from_edges(s * k, edges)
    }

    pub fn node_traits(&self) -> Result<Vec<T>> {
        let s = self.expansion_size()?;
        Ok((0..s * self.k()).map(|i| self.traits[i / s]).collect())
    }

    /// Node degree in each block of the expansion: `s * pi_a`.
    pub fn block_degrees(&self) -> Result<Vec<T>> {
        let s = T::from_count(self.expansion_size()?);
        Ok(self.chain.stationary().iter().map(|&p| s * p).collect())
    }

    /// `mu_true = N^{-1} sum_i y(i)`, equal to the plain block average since
    /// blocks have equal size.
    pub fn population_mean(&self) -> T {
        self.traits.iter().fold(T::zero(), |a, &y| a + y) / T::from_count(self.k())
    }

    fn expansion_size(&self) -> Result<usize> {
        self.nodes_per_block
            .ok_or_else(|| Error::InvalidParameter("blockmodel has no node-level expansion".into()))
    }
}

/// Diagonal of a 2-block transition matrix `[[p, 1-p], [1-q, q]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoBlockParams<T> {
    pub p: T,
    pub q: T,
}

impl<T: Real> TwoBlockParams<T> {
    pub fn new(p: T, q: T) -> Result<Self> {
        let open = |x: T| x > T::zero() && x < T::one();
        if !open(p) || !open(q) {
            return Err(Error::InvalidParameter(format!("p = {p}, q = {q} must lie in (0, 1)")));
        }
        Ok(Self { p, q })
    }

    pub fn matrix(&self) -> DMatrix<T> {
        DMatrix::from_row_slice(2, 2, &[self.p, T::one() - self.p, T::one() - self.q, self.q])
    }

    pub fn lambda2(&self) -> T {
        self.p + self.q - T::one()
    }

    pub fn stationary(&self) -> [T; 2] {
        let denom = T::lit(2.0) - self.p - self.q;
        [(T::one() - self.q) / denom, (T::one() - self.p) / denom]
    }
}

/// Block label of every vertex of a node-level sample.
pub fn project_node_walk<T: Real>(sample: &RdsSample<T>, assignment: &[Option<usize>]) -> Result<Vec<usize>> {
    project_states(sample.states(), assignment)
}

pub fn project_states(states: &[usize], assignment: &[Option<usize>]) -> Result<Vec<usize>> {
    states
        .iter()
        .map(|&x| {
            assignment
                .get(x)
                .copied()
                .flatten()
                .ok_or(Error::MissingLabel(x))
        })
        .collect()
}

/// `mu_j = sum_{b(i) = j} nu_i`.
pub fn induced_block_seed<T: Real>(nu: &[T], assignment: &[usize], k: usize) -> Result<Vec<T>> {
    if nu.len() != assignment.len() {
        return Err(Error::DimensionMismatch {
            expected: assignment.len(),
            got: nu.len(),
        });
    }
    let mut mu = vec![T::zero(); k];
    for (&w, &b) in nu.iter().zip(assignment) {
        if b >= k {
            return Err(Error::MissingLabel(b));
        }
        mu[b] += w;
    }
    Ok(mu)
}

/// Probability of every assignment of states to tree vertices under the
/// tree-indexed walk started from `seed`, by full enumeration.
pub fn exact_joint_law<T: Real>(
    chain: &TransitionMatrix<T>,
    tree: &ReferralTree,
    seed: &[T],
) -> Result<BTreeMap<Vec<usize>, T>> {
    let k = chain.state_count();
    if seed.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: seed.len(),
        });
    }
    let n = tree.len();
    let outcomes = k
        .checked_pow(n as u32)
        .filter(|&c| c <= 1 << 24)
        .ok_or_else(|| Error::InvalidParameter("enumeration too large".into()))?;
    let mut law = BTreeMap::new();
    let mut states = vec![0usize; n];
    for _ in 0..outcomes {
        let mut prob = seed[states[0]];
        for v in 1..n {
            let p = tree.parent(v).expect("non-root vertex");
            prob *= chain.get(states[p], states[v]);
        }
        law.insert(states.clone(), prob);
        // odometer increment
        for digit in states.iter_mut() {
            *digit += 1;
            if *digit < k {
                break;
            }
            *digit = 0;
        }
    }
    Ok(law)
}

/// Joint law of the block labels of a node-level walk.
pub fn projected_joint_law<T: Real>(
    node_chain: &TransitionMatrix<T>,
    tree: &ReferralTree,
    seed: &[T],
    assignment: &[Option<usize>],
) -> Result<BTreeMap<Vec<usize>, T>> {
    let mut law = BTreeMap::new();
    for (states, p) in exact_joint_law(node_chain, tree, seed)? {
        let blocks = project_states(&states, assignment)?;
        *law.entry(blocks).or_insert_with(T::zero) += p;
    }
    Ok(law)
}

/// Total variation distance between two laws on a common countable space.
pub fn total_variation<T: Real>(a: &BTreeMap<Vec<usize>, T>, b: &BTreeMap<Vec<usize>, T>) -> T {
    let mut sum = T::zero();
    for (key, &pa) in a {
        sum += (pa - b.get(key).copied().unwrap_or_else(T::zero)).abs();
    }
    for (key, &pb) in b {
        if !a.contains_key(key) {
            sum += pb.abs();
        }
    }
    sum * T::lit(0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn balanced_two_block() {
        let params = TwoBlockParams::new(0.95, 0.95).unwrap();
        let model = BlockModel::two_block(params, [1.0, 0.0]).unwrap();
        let pi = model.block_process().stationary();
        assert_abs_diff_eq!(pi[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(model.block_process().get(0, 1), 0.05, epsilon = 1e-15);
    }

    #[test]
    fn unbalanced_stationary() {
        let params = TwoBlockParams::new(0.95, 0.85).unwrap();
        let [a, b] = params.stationary();
        assert_abs_diff_eq!(a, 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(b, 0.25, epsilon = 1e-12);
        let model = BlockModel::two_block(params, [1.0, 0.0]).unwrap();
        assert_abs_diff_eq!(model.chain().stationary()[0], 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(params.lambda2(), 0.8, epsilon = 1e-12);
    }

    #[test]
    fn three_block_rows() {
        let m = DMatrix::from_row_slice(3, 3, &[0.8, 0.1, 0.1, 0.2, 0.6, 0.2, 0.2, 0.2, 0.6]);
        let model = BlockModel::new(m, vec![0.0, 1.0, 2.0]).unwrap();
        for i in 0..3 {
            let s: f64 = (0..3).map(|j| model.chain().get(i, j)).sum();
            assert_abs_diff_eq!(s, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn rejects_non_reversible() {
        let m = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        assert!(BlockModel::new(m, vec![0.0, 1.0, 2.0]).is_err());
    }

    #[test]
    fn expansion_rows_and_degrees() {
        let params = TwoBlockParams::new(0.95, 0.85).unwrap();
        let model = BlockModel::two_block(params, [1.0, 0.0]).unwrap().with_expansion(3).unwrap();
        let g = model.expand_graph().unwrap();
        assert_eq!(g.node_count(), 6);
        // same-block nodes have identical weight rows
        for l in 0..6 {
            assert_eq!(g.weight(0, l), g.weight(1, l));
            assert_eq!(g.weight(3, l), g.weight(5, l));
        }
        let d = g.degrees();
        assert_abs_diff_eq!(d[0] / d[3], 3.0, epsilon = 1e-12);
        let bd = model.block_degrees().unwrap();
        assert_abs_diff_eq!(bd[0], d[0], epsilon = 1e-12);
        let node_chain = TransitionMatrix::from_graph(&g).unwrap();
        assert_abs_diff_eq!(node_chain.get(0, 4), 0.05 / 3.0, epsilon = 1e-12);
        assert_eq!(model.node_traits().unwrap(), vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn projection_single_block_is_constant() {
        let labels = vec![Some(0); 4];
        assert_eq!(project_states(&[3, 1, 2, 0], &labels).unwrap(), vec![0; 4]);
        assert_eq!(project_states(&[1], &[Some(0), None]), Err(Error::MissingLabel(1)));
    }

    #[test]
    fn induced_seed() {
        let mu = induced_block_seed(&[0.1, 0.2, 0.3, 0.4], &[0, 0, 1, 1], 2).unwrap();
        assert_abs_diff_eq!(mu[0], 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(mu[1], 0.7, epsilon = 1e-15);
    }

    #[test]
    fn projection_matches_block_walk_on_three_vertices() {
        let params = TwoBlockParams::new(0.8, 0.7).unwrap();
        let model = BlockModel::two_block(params, [1.0, 0.0]).unwrap().with_expansion(2).unwrap();
        let node_chain = TransitionMatrix::from_graph(&model.expand_graph().unwrap()).unwrap();
        let labels: Vec<Option<usize>> = model.assignment().unwrap().into_iter().map(Some).collect();
        let tree = ReferralTree::m_tree(2, 1).unwrap();
        let nu = [0.1, 0.2, 0.3, 0.4];
        let mu = induced_block_seed(&nu, &model.assignment().unwrap(), 2).unwrap();
        let projected = projected_joint_law(&node_chain, &tree, &nu, &labels).unwrap();
        let block = exact_joint_law(model.chain(), &tree, &mu).unwrap();
        assert!(total_variation(&projected, &block) < 1e-12);
        let total: f64 = block.values().sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
    }
}
