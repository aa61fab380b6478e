//! Referral trees: parent maps in breadth-first order.

use std::collections::VecDeque;
use std::io::{BufRead, Write};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::Binomial;

use crate::error::{Error, Result};

/// Rooted tree with vertices numbered in breadth-first order; vertex 0 is the
/// seed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReferralTree {
    parent: Vec<Option<usize>>,
    generation: Vec<usize>,
    children: Vec<Vec<usize>>,
    /// `generation_start[t]..generation_start[t + 1]` are the generation-t ids.
    generation_start: Vec<usize>,
}

impl ReferralTree {
    /// Validates a parent map: vertex 0 is the only root, parents precede
    /// children and generations never decrease along the id order.
    pub fn from_parents(parent: Vec<Option<usize>>) -> Result<Self> {
        if parent.is_empty() {
            return Err(Error::InvalidTree("tree has no vertices".into()));
        }
        if parent[0].is_some() {
            return Err(Error::InvalidTree("vertex 0 must be the root".into()));
        }
        let n = parent.len();
        let mut generation = vec![0usize; n];
        let mut children = vec![Vec::new(); n];
        for v in 1..n {
            let p = parent[v]
                .ok_or_else(|| Error::InvalidTree(format!("vertex {v} has no parent")))?;
            if p >= v {
                return Err(Error::InvalidTree(format!(
                    "parent {p} of vertex {v} does not precede it"
                )));
            }
            generation[v] = generation[p] + 1;
            if generation[v] < generation[v - 1] {
                return Err(Error::InvalidTree(format!(
                    "vertex {v} breaks breadth-first order"
                )));
            }
            children[p].push(v);
        }
        // children must also be claimed in parent order for a true BFS layout
        let mut last_parent = 0;
        for v in 1..n {
            let p = parent[v].unwrap_or(0);
            if generation[v] == generation[v - 1] && v > 1 && p < last_parent {
                return Err(Error::InvalidTree(format!(
                    "vertex {v} breaks breadth-first order"
                )));
            }
            last_parent = p;
        }
        let depth = generation[n - 1];
        let mut generation_start = vec![0usize; depth + 2];
        for t in 0..=depth {
            generation_start[t + 1] = generation_start[t] + generation.iter().filter(|&&g| g == t).count();
        }
        Ok(Self {
            parent,
            generation,
            children,
            generation_start,
        })
    }

    /// Complete `m`-ary tree with generations `0..=depth`.
    pub fn m_tree(m: usize, depth: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidParameter("m-tree needs m >= 1".into()));
        }
        let mut parent = vec![None];
        let mut frontier = 0..1;
        for _ in 0..depth {
            let start = parent.len();
            for p in frontier.clone() {
                parent.extend(std::iter::repeat_n(Some(p), m));
            }
            frontier = start..parent.len();
        }
        Self::from_parents(parent)
    }

    /// Galton-Watson tree: every vertex in generations `0..depth` draws an
    /// independent offspring count.
    pub fn galton_watson<R: Rng + ?Sized>(law: &OffspringLaw, depth: usize, rng: &mut R) -> Result<Self> {
        law.validate()?;
        let mut parent = vec![None];
        let mut frontier = 0..1;
        for _ in 0..depth {
            let start = parent.len();
            for p in frontier.clone() {
                let k = law.sample(rng);
                parent.extend(std::iter::repeat_n(Some(p), k));
            }
            if parent.len() == start {
                break;
            }
            frontier = start..parent.len();
        }
        Self::from_parents(parent)
    }

    /// Galton-Watson tree grown generation by generation until it has at
    /// least `size` vertices, then cut to its first `size` vertices. Returns
    /// a smaller tree if the process dies out.
    pub fn galton_watson_sized<R: Rng + ?Sized>(law: &OffspringLaw, size: usize, rng: &mut R) -> Result<Self> {
        law.validate()?;
        if size == 0 {
            return Err(Error::InvalidParameter("tree size must be positive".into()));
        }
        let mut parent = vec![None];
        let mut frontier = 0..1;
        while parent.len() < size {
            let start = parent.len();
            for p in frontier.clone() {
                let k = law.sample(rng);
                parent.extend(std::iter::repeat_n(Some(p), k));
                if parent.len() >= size {
                    break;
                }
            }
            if parent.len() == start {
                break;
            }
            frontier = start..parent.len();
        }
        parent.truncate(size);
        Self::from_parents(parent)
    }

    /// First `n` vertices in breadth-first order (always a subtree).
    pub fn truncate(&self, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("cannot truncate to zero vertices".into()));
        }
        Self::from_parents(self.parent[..n.min(self.len())].to_vec())
    }

    /// Generations `0..=depth`.
    pub fn up_to_generation(&self, depth: usize) -> Self {
        let end = self.generation_start[(depth + 1).min(self.generation_start.len() - 1)];
        Self::from_parents(self.parent[..end].to_vec()).expect("prefix of a valid tree")
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn parent(&self, v: usize) -> Option<usize> {
        self.parent[v]
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parent
    }

    pub fn children(&self, v: usize) -> &[usize] {
        &self.children[v]
    }

    pub fn generation(&self, v: usize) -> usize {
        self.generation[v]
    }

    /// Generation of the last vertex.
    pub fn depth(&self) -> usize {
        self.generation[self.len() - 1]
    }

    pub fn generation_range(&self, t: usize) -> std::ops::Range<usize> {
        if t + 1 >= self.generation_start.len() {
            return self.len()..self.len();
        }
        self.generation_start[t]..self.generation_start[t + 1]
    }

    pub fn generation_sizes(&self) -> Vec<usize> {
        self.generation_start.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Degree of `v` in the tree: children plus one edge to the parent.
    pub fn tree_degree(&self, v: usize) -> usize {
        self.children[v].len() + usize::from(self.parent[v].is_some())
    }

    /// All-pairs tree distances, row-major `n * n`.
    pub fn distances(&self) -> Vec<u32> {
        let n = self.len();
        let mut out = vec![0u32; n * n];
        let mut queue = VecDeque::with_capacity(n);
        let mut seen = vec![usize::MAX; n];
        for src in 0..n {
            let row = &mut out[src * n..(src + 1) * n];
            seen[src] = src;
            queue.push_back(src);
            while let Some(v) = queue.pop_front() {
                let d = row[v];
                let next = self.children[v].iter().copied().chain(self.parent[v]);
                for w in next {
                    if seen[w] != src {
                        seen[w] = src;
                        row[w] = d + 1;
                        queue.push_back(w);
                    }
                }
            }
        }
        out
    }

    pub fn distance(&self, mut a: usize, mut b: usize) -> usize {
        let mut d = 0;
        while self.generation[a] > self.generation[b] {
            a = self.parent[a].unwrap_or(a);
            d += 1;
        }
        while self.generation[b] > self.generation[a] {
            b = self.parent[b].unwrap_or(b);
            d += 1;
        }
        while a != b {
            a = self.parent[a].unwrap_or(a);
            b = self.parent[b].unwrap_or(b);
            d += 2;
        }
        d
    }

    /// CSV with header `vertex,parent,generation`; the root's parent is empty.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "vertex,parent,generation")?;
        for v in 0..self.len() {
            match self.parent[v] {
                Some(p) => writeln!(out, "{v},{p},{}", self.generation[v])?,
                None => writeln!(out, "{v},,{}", self.generation[v])?,
            }
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(source: R) -> Result<Self> {
        let mut parent = Vec::new();
        for (idx, line) in source.lines().enumerate() {
            let line = line?;
            let line_no = idx + 1;
            if idx == 0 || line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() < 2 {
                return Err(Error::Parse {
                    line: line_no,
                    message: "expected vertex,parent[,generation]".into(),
                });
            }
            let vertex: usize = fields[0].parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("bad vertex id {:?}", fields[0]),
            })?;
            if vertex != parent.len() {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("vertex ids must be consecutive, found {vertex}"),
                });
            }
            let p = if fields[1].is_empty() {
                None
            } else {
                Some(fields[1].parse().map_err(|_| Error::Parse {
                    line: line_no,
                    message: format!("bad parent id {:?}", fields[1]),
                })?)
            };
            parent.push(p);
        }
        Self::from_parents(parent)
    }
}

/// Offspring distribution of a Galton-Watson referral tree.
#[derive(Debug, Clone, PartialEq)]
pub enum OffspringLaw {
    Deterministic(usize),
    /// `1 + Binomial(trials, prob)`.
    OnePlusBinomial { trials: u64, prob: f64 },
    /// Probability of `k` offspring at index `k`.
    Custom(Vec<f64>),
}

impl OffspringLaw {
    pub fn validate(&self) -> Result<()> {
        match self {
            OffspringLaw::Deterministic(_) => Ok(()),
            OffspringLaw::OnePlusBinomial { prob, .. } => {
                if (0.0..=1.0).contains(prob) {
                    Ok(())
                } else {
                    Err(Error::InvalidDistribution(format!("binomial probability {prob}")))
                }
            }
            OffspringLaw::Custom(pmf) => {
                if pmf.is_empty() || pmf.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                    return Err(Error::InvalidDistribution("offspring pmf must be nonnegative".into()));
                }
                let total: f64 = pmf.iter().sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidDistribution(format!("offspring pmf sums to {total}")));
                }
                Ok(())
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            OffspringLaw::Deterministic(m) => *m as f64,
            OffspringLaw::OnePlusBinomial { trials, prob } => 1.0 + *trials as f64 * prob,
            OffspringLaw::Custom(pmf) => pmf.iter().enumerate().map(|(k, p)| k as f64 * p).sum(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match self {
            OffspringLaw::Deterministic(m) => *m,
            OffspringLaw::OnePlusBinomial { trials, prob } => {
                let b = Binomial::new(*trials, *prob).expect("validated binomial");
                1 + b.sample(rng) as usize
            }
            OffspringLaw::Custom(pmf) => {
                let idx = WeightedIndex::new(pmf).expect("validated pmf");
                idx.sample(rng)
            }
        }
    }

    /// Total offspring of `parents` independent individuals.
    pub fn sample_total<R: Rng + ?Sized>(&self, parents: u64, rng: &mut R) -> u64 {
        match self {
            OffspringLaw::Deterministic(m) => parents * *m as u64,
            OffspringLaw::OnePlusBinomial { trials, prob } => {
                if parents == 0 {
                    return 0;
                }
                let b = Binomial::new(parents * trials, *prob).expect("validated binomial");
                parents + b.sample(rng)
            }
            OffspringLaw::Custom(pmf) => {
                // multinomial split of the parents over offspring counts
                let mut remaining = parents;
                let mut mass = 1.0;
                let mut total = 0u64;
                for (k, &p) in pmf.iter().enumerate() {
                    if remaining == 0 {
                        break;
                    }
                    let share = if mass > 0.0 { (p / mass).clamp(0.0, 1.0) } else { 1.0 };
                    let c = Binomial::new(remaining, share).expect("probability in range").sample(rng);
                    total += c * k as u64;
                    remaining -= c;
                    mass -= p;
                }
                total
            }
        }
    }
}
