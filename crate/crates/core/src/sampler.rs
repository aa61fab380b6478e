//! Realized RDS samples: tree-indexed walks with replacement and the
//! without-replacement recruitment protocol on a fixed network.

use std::collections::VecDeque;
use std::io::{BufRead, Write};
use std::sync::Arc;

use rand::seq::index::sample as sample_indices;
use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{TransitionMatrix, WeightedGraph};
use crate::scalar::Real;
use crate::tree::{OffspringLaw, ReferralTree};

/// Initial condition of the walk.
#[derive(Debug, Clone, PartialEq)]
pub enum SeedSpec<T> {
    FixedNode(usize),
    Distribution(Vec<T>),
    Stationary,
    /// Proportional to degree; on a chain this is the stationary law.
    DegreeProportional,
}

impl<T: Real> SeedSpec<T> {
    /// Seed probabilities over `stationary.len()` states.
    pub fn probabilities(&self, stationary: &[T]) -> Result<Vec<T>> {
        let n = stationary.len();
        match self {
            SeedSpec::FixedNode(i) => {
                if *i >= n {
                    return Err(Error::NodeOutOfRange { id: *i, count: n });
                }
                let mut p = vec![T::zero(); n];
                p[*i] = T::one();
                Ok(p)
            }
            SeedSpec::Distribution(nu) => {
                if nu.len() != n {
                    return Err(Error::DimensionMismatch {
                        expected: n,
                        got: nu.len(),
                    });
                }
                if nu.iter().any(|&p| !(p >= T::zero())) {
                    return Err(Error::InvalidDistribution("seed distribution has negative mass".into()));
                }
                let total = nu.iter().fold(T::zero(), |a, &p| a + p);
                if (total - T::one()).abs() > T::tolerance(1e-12) {
                    return Err(Error::InvalidDistribution(format!("seed distribution sums to {total}")));
                }
                Ok(nu.clone())
            }
            SeedSpec::Stationary | SeedSpec::DegreeProportional => Ok(stationary.to_vec()),
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, stationary: &[T], rng: &mut R) -> Result<usize> {
        if let SeedSpec::FixedNode(i) = self {
            if *i >= stationary.len() {
                return Err(Error::NodeOutOfRange {
                    id: *i,
                    count: stationary.len(),
                });
            }
            return Ok(*i);
        }
        let p = self.probabilities(stationary)?;
        Ok(draw_index(&cumulative(&p), rng))
    }
}

fn cumulative<T: Real>(p: &[T]) -> Vec<T> {
    let mut acc = T::zero();
    p.iter()
        .map(|&x| {
            acc += x;
            acc
        })
        .collect()
}

/// Inverse-CDF draw; rounding slack at the top goes to the last state with
/// positive mass.
fn draw_index<T: Real, R: Rng + ?Sized>(cdf: &[T], rng: &mut R) -> usize {
    let total = cdf[cdf.len() - 1];
    let u = T::lit(rng.random::<f64>()) * total;
    let idx = cdf.partition_point(|&c| c <= u);
    if idx < cdf.len() {
        return idx;
    }
    let mut last = cdf.len() - 1;
    while last > 0 && cdf[last] == cdf[last - 1] {
        last -= 1;
    }
    last
}

/// One realized sample: a state per tree vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct RdsSample<T> {
    tree: Arc<ReferralTree>,
    states: Vec<usize>,
    traits: Vec<T>,
    degrees: Option<Vec<T>>,
    with_replacement: bool,
}

impl<T: Real> RdsSample<T> {
    pub fn new(
        tree: Arc<ReferralTree>,
        states: Vec<usize>,
        traits: Vec<T>,
        degrees: Option<Vec<T>>,
        with_replacement: bool,
    ) -> Result<Self> {
        let n = tree.len();
        if states.len() != n || traits.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: states.len().min(traits.len()),
            });
        }
        if let Some(d) = &degrees {
            if d.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: d.len() });
            }
            if let Some(pos) = d.iter().position(|&x| !(x > T::zero())) {
                return Err(Error::ZeroDegree(format!("sample vertex {pos}")));
            }
        }
        Ok(Self {
            tree,
            states,
            traits,
            degrees,
            with_replacement,
        })
    }

    pub fn tree(&self) -> &ReferralTree {
        &self.tree
    }

    pub fn shared_tree(&self) -> Arc<ReferralTree> {
        Arc::clone(&self.tree)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[usize] {
        &self.states
    }

    pub fn traits(&self) -> &[T] {
        &self.traits
    }

    /// Degree of each sampled state, if recorded.
    pub fn degrees(&self) -> Option<&[T]> {
        self.degrees.as_deref()
    }

    pub fn seed_state(&self) -> usize {
        self.states[0]
    }

    pub fn with_replacement(&self) -> bool {
        self.with_replacement
    }

    /// Depth of the deepest generation.
    pub fn generations(&self) -> usize {
        self.tree.depth()
    }

    /// Attaches per-state degrees, e.g. block degrees of a node expansion.
    pub fn with_state_degrees(mut self, state_degrees: &[T]) -> Result<Self> {
        let d = self
            .states
            .iter()
            .map(|&x| {
                state_degrees.get(x).copied().ok_or(Error::NodeOutOfRange {
                    id: x,
                    count: state_degrees.len(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        self.degrees = Some(d);
        Ok(self)
    }

    /// Restriction to generations `0..=depth`.
    pub fn up_to_generation(&self, depth: usize) -> Self {
        let tree = self.tree.up_to_generation(depth);
        let n = tree.len();
        Self {
            tree: Arc::new(tree),
            states: self.states[..n].to_vec(),
            traits: self.traits[..n].to_vec(),
            degrees: self.degrees.as_ref().map(|d| d[..n].to_vec()),
            with_replacement: self.with_replacement,
        }
    }

    /// CSV with header `vertex,parent,generation,state_id,trait_value`, plus
    /// a `degree` column when degrees are recorded.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        write!(out, "vertex,parent,generation,state_id,trait_value")?;
        if self.degrees.is_some() {
            write!(out, ",degree")?;
        }
        writeln!(out)?;
        for v in 0..self.len() {
            let parent = self.tree.parent(v).map(|p| p.to_string()).unwrap_or_default();
            write!(
                out,
                "{v},{parent},{},{},{}",
                self.tree.generation(v),
                self.states[v],
                self.traits[v]
            )?;
            if let Some(d) = &self.degrees {
                write!(out, ",{}", d[v])?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(source: R) -> Result<Self> {
        let mut parents = Vec::new();
        let mut states = Vec::new();
        let mut traits = Vec::new();
        let mut degrees = Vec::new();
        let mut has_degree = false;
        for (idx, line) in source.lines().enumerate() {
            let line = line?;
            let line_no = idx + 1;
            if idx == 0 {
                has_degree = line.trim_end().ends_with(",degree");
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let expected = if has_degree { 6 } else { 5 };
            if fields.len() != expected {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected {expected} fields, found {}", fields.len()),
                });
            }
            let bad = |what: &str, raw: &str| Error::Parse {
                line: line_no,
                message: format!("bad {what} {raw:?}"),
            };
            let vertex: usize = fields[0].parse().map_err(|_| bad("vertex", fields[0]))?;
            if vertex != parents.len() {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("vertex ids must be consecutive, found {vertex}"),
                });
            }
            parents.push(if fields[1].is_empty() {
                None
            } else {
                Some(fields[1].parse().map_err(|_| bad("parent", fields[1]))?)
            });
            states.push(fields[3].parse().map_err(|_| bad("state", fields[3]))?);
            let y: f64 = fields[4].parse().map_err(|_| bad("trait", fields[4]))?;
            traits.push(T::lit(y));
            if has_degree {
                let d: f64 = fields[5].parse().map_err(|_| bad("degree", fields[5]))?;
                degrees.push(T::lit(d));
            }
        }
        let tree = ReferralTree::from_parents(parents)?;
        Self::new(
            Arc::new(tree),
            states,
            traits,
            has_degree.then_some(degrees),
            true,
        )
    }
}

/// Precomputed row CDFs for repeated walks on one chain.
#[derive(Debug, Clone)]
pub struct WalkSampler<T: Real> {
    rows: Vec<Vec<T>>,
    stationary: Vec<T>,
}

impl<T: Real> WalkSampler<T> {
    pub fn new(chain: &TransitionMatrix<T>) -> Self {
        let n = chain.state_count();
        let rows = (0..n)
            .map(|i| cumulative(&(0..n).map(|j| chain.get(i, j)).collect::<Vec<_>>()))
            .collect();
        Self {
            rows,
            stationary: chain.stationary().iter().copied().collect(),
        }
    }

    pub fn state_count(&self) -> usize {
        self.rows.len()
    }

    pub fn step<R: Rng + ?Sized>(&self, from: usize, rng: &mut R) -> usize {
        draw_index(&self.rows[from], rng)
    }

    /// States of a walk on `tree`: the seed, then each vertex drawn from its
    /// parent's row in breadth-first order.
    pub fn walk_states<R: Rng + ?Sized>(&self, tree: &ReferralTree, seed: &SeedSpec<T>, rng: &mut R) -> Result<Vec<usize>> {
        let mut states = Vec::with_capacity(tree.len());
        states.push(seed.draw(&self.stationary, rng)?);
        for v in 1..tree.len() {
            let p = tree.parent(v).expect("non-root vertex");
            let next = self.step(states[p], rng);
            states.push(next);
        }
        Ok(states)
    }

    pub fn walk<R: Rng + ?Sized>(
        &self,
        tree: Arc<ReferralTree>,
        seed: &SeedSpec<T>,
        y: &[T],
        rng: &mut R,
    ) -> Result<RdsSample<T>> {
        if y.len() != self.state_count() {
            return Err(Error::DimensionMismatch {
                expected: self.state_count(),
                got: y.len(),
            });
        }
        let states = self.walk_states(&tree, seed, rng)?;
        let traits = states.iter().map(|&x| y[x]).collect();
        RdsSample::new(tree, states, traits, None, true)
    }
}

/// Tree-indexed walk with replacement on `chain`.
pub fn walk<T: Real, R: Rng + ?Sized>(
    chain: &TransitionMatrix<T>,
    tree: Arc<ReferralTree>,
    seed: &SeedSpec<T>,
    y: &[T],
    rng: &mut R,
) -> Result<RdsSample<T>> {
    WalkSampler::new(chain).walk(tree, seed, y, rng)
}

/// Without-replacement recruitment on `graph`.
///
/// Participants are processed in arrival order; each draws an offspring count
/// and recruits that many distinct, not-yet-recruited contacts uniformly at
/// random (all of them if fewer remain). Sampling stops at exactly `target_n`
/// participants. If recruitment dies out first, the whole process restarts
/// with a freshly drawn seed; after `max_restarts` restarts the call fails.
pub fn walk_without_replacement<T: Real, R: Rng + ?Sized>(
    graph: &WeightedGraph<T>,
    law: &OffspringLaw,
    seed: &SeedSpec<T>,
    target_n: usize,
    max_restarts: usize,
    y: &[T],
    rng: &mut R,
) -> Result<RdsSample<T>> {
    let n_nodes = graph.node_count();
    if y.len() != n_nodes {
        return Err(Error::DimensionMismatch {
            expected: n_nodes,
            got: y.len(),
        });
    }
    if target_n == 0 || target_n > n_nodes {
        return Err(Error::InvalidParameter(format!(
            "target size {target_n} must be in 1..={n_nodes}"
        )));
    }
    law.validate()?;
    let degrees = graph.degrees();
    if let Some(i) = degrees.iter().position(|&d| !(d > T::zero())) {
        return Err(Error::ZeroDegree(graph.label(i).to_string()));
    }
    let volume = graph.volume();
    let pi: Vec<T> = degrees.iter().map(|&d| d / volume).collect();

    let mut recruited = vec![false; n_nodes];
    for _attempt in 0..=max_restarts {
        recruited.iter_mut().for_each(|r| *r = false);
        let start = seed.draw(&pi, rng)?;
        recruited[start] = true;
        let mut parents: Vec<Option<usize>> = vec![None];
        let mut states = vec![start];
        let mut queue = VecDeque::from([0usize]);
        let mut eligible = Vec::new();
        while states.len() < target_n {
            let Some(v) = queue.pop_front() else { break };
            let x = states[v];
            let want = law.sample(rng);
            eligible.clear();
            eligible.extend(
                graph
                    .neighbors(x)
                    .iter()
                    .map(|&(j, _)| j)
                    .filter(|&j| j != x && !recruited[j]),
            );
            let take = want.min(eligible.len()).min(target_n - states.len());
            if take == 0 {
                continue;
            }
            let picked = sample_indices(rng, eligible.len(), take);
            for idx in picked.iter() {
                let node = eligible[idx];
                recruited[node] = true;
                parents.push(Some(v));
                states.push(node);
                queue.push_back(states.len() - 1);
            }
        }
        if states.len() == target_n {
            let tree = ReferralTree::from_parents(parents)?;
            let traits = states.iter().map(|&x| y[x]).collect();
            let degs = states.iter().map(|&x| degrees[x]).collect();
            return RdsSample::new(Arc::new(tree), states, traits, Some(degs), false);
        }
    }
    Err(Error::RestartsExhausted {
        attempts: max_restarts + 1,
        target: target_n,
    })
}
