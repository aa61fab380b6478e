//! Estimators of the population mean from one RDS sample.
//!
//! `Mean`, `Ipw` and `Vh` are weighted averages with uniform weights; the GLS
//! family replaces the uniform weights by the minimum-variance weights for the
//! stationary-start covariance of the sample.

use std::fmt;
use std::io::Write;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::graph::WeightedGraph;
use crate::sampler::RdsSample;
use crate::scalar::Real;
use crate::spectral::SpectralDecomposition;
use crate::tree::ReferralTree;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EstimatorKind {
    Mean,
    Ipw,
    Vh,
    Gls,
    GlsIpw,
    GlsVh,
    SbmFgls,
    SbmFglsVh,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 8] = [
        EstimatorKind::Mean,
        EstimatorKind::Ipw,
        EstimatorKind::Vh,
        EstimatorKind::Gls,
        EstimatorKind::GlsIpw,
        EstimatorKind::GlsVh,
        EstimatorKind::SbmFgls,
        EstimatorKind::SbmFglsVh,
    ];

    /// Weighting scheme: `mean`, `gls` or `sbm_fgls`.
    pub fn base(self) -> &'static str {
        match self {
            EstimatorKind::Mean | EstimatorKind::Ipw | EstimatorKind::Vh => "mean",
            EstimatorKind::Gls | EstimatorKind::GlsIpw | EstimatorKind::GlsVh => "gls",
            EstimatorKind::SbmFgls | EstimatorKind::SbmFglsVh => "sbm_fgls",
        }
    }

    /// Degree adjustment: `none`, `ipw` or `vh`.
    pub fn adjustment(self) -> &'static str {
        match self {
            EstimatorKind::Mean | EstimatorKind::Gls | EstimatorKind::SbmFgls => "none",
            EstimatorKind::Ipw | EstimatorKind::GlsIpw => "ipw",
            EstimatorKind::Vh | EstimatorKind::GlsVh | EstimatorKind::SbmFglsVh => "vh",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Mean => "mean",
            EstimatorKind::Ipw => "ipw",
            EstimatorKind::Vh => "vh",
            EstimatorKind::Gls => "gls",
            EstimatorKind::GlsIpw => "gls_ipw",
            EstimatorKind::GlsVh => "gls_vh",
            EstimatorKind::SbmFgls => "sbm_fgls",
            EstimatorKind::SbmFglsVh => "sbm_fgls_vh",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRecord<T> {
    pub kind: EstimatorKind,
    pub value: T,
    pub n: usize,
    /// Deepest generation in the sample.
    pub t: usize,
    pub replicate: usize,
    pub seed_state: usize,
}

impl<T: Real> EstimateRecord<T> {
    fn from_sample(kind: EstimatorKind, value: T, sample: &RdsSample<T>) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::Degenerate(format!("{kind} estimate is not finite")));
        }
        Ok(Self {
            kind,
            value,
            n: sample.len(),
            t: sample.generations(),
            replicate: 0,
            seed_state: sample.seed_state(),
        })
    }

    pub fn with_replicate(mut self, replicate: usize) -> Self {
        self.replicate = replicate;
        self
    }
}

pub const ESTIMATES_HEADER: &str = "replicate,estimator,adjustment,t,n,seed_state,value";

/// Writes records as CSV rows (header included).
pub fn write_estimates_csv<T: Real, W: Write>(records: &[EstimateRecord<T>], mut out: W) -> Result<()> {
    writeln!(out, "{ESTIMATES_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.replicate,
            r.kind.base(),
            r.kind.adjustment(),
            r.t,
            r.n,
            r.seed_state,
            r.value
        )?;
    }
    Ok(())
}

/// Population degree information needed by IPW.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationDegrees<T> {
    /// Degree of every state the walk can visit.
    pub per_state: Vec<T>,
    /// `vol(G) / N`.
    pub mean_degree: T,
}

impl<T: Real> PopulationDegrees<T> {
    pub fn from_graph(graph: &WeightedGraph<T>) -> Self {
        Self {
            per_state: graph.degrees(),
            mean_degree: graph.volume() / T::from_count(graph.node_count()),
        }
    }

    /// Block-level states of an equal-size node expansion: every block's
    /// nodes share one degree, so `vol(G)/N` is the plain block average.
    pub fn from_block_degrees(block_degrees: Vec<T>) -> Self {
        let mean = block_degrees.iter().fold(T::zero(), |a, &d| a + d) / T::from_count(block_degrees.len());
        Self {
            per_state: block_degrees,
            mean_degree: mean,
        }
    }

    fn of_state(&self, x: usize) -> Result<T> {
        let d = self
            .per_state
            .get(x)
            .copied()
            .ok_or(Error::NodeOutOfRange {
                id: x,
                count: self.per_state.len(),
            })?;
        if !(d > T::zero()) {
            return Err(Error::ZeroDegree(format!("state {x}")));
        }
        Ok(d)
    }
}

fn total<T: Real>(values: impl Iterator<Item = T>) -> T {
    values.fold(T::zero(), |a, v| a + v)
}

fn sample_degrees<T: Real>(sample: &RdsSample<T>) -> Result<&[T]> {
    sample.degrees().ok_or_else(|| {
        Error::DegreesUnavailable("sample carries no per-participant degrees; record them before using VH".into())
    })
}

/// `n^{-1} sum_sigma y(X_sigma)`.
pub fn sample_mean<T: Real>(sample: &RdsSample<T>) -> Result<EstimateRecord<T>> {
    if sample.is_empty() {
        return Err(Error::Degenerate("empty sample".into()));
    }
    let value = total(sample.traits().iter().copied()) / T::from_count(sample.len());
    EstimateRecord::from_sample(EstimatorKind::Mean, value, sample)
}

/// `y^pi(i) = y(i) / (N pi(i)) = y(i) vol(G) / (N deg(i))` for each sampled
/// vertex.
fn ipw_trait<T: Real>(sample: &RdsSample<T>, degrees: &PopulationDegrees<T>) -> Result<Vec<T>> {
    sample
        .states()
        .iter()
        .zip(sample.traits())
        .map(|(&x, &y)| Ok(y * degrees.mean_degree / degrees.of_state(x)?))
        .collect()
}

/// Sample mean of `y^pi`. Needs the population mean degree; without it use
/// [`vh`].
pub fn ipw<T: Real>(sample: &RdsSample<T>, degrees: Option<&PopulationDegrees<T>>) -> Result<EstimateRecord<T>> {
    let degrees = degrees.ok_or_else(|| {
        Error::DegreesUnavailable("IPW needs population degrees (vol(G)/N); use the VH estimator instead".into())
    })?;
    let adjusted = ipw_trait(sample, degrees)?;
    let value = total(adjusted.into_iter()) / T::from_count(sample.len());
    EstimateRecord::from_sample(EstimatorKind::Ipw, value, sample)
}

/// `(sum y/deg) / (sum 1/deg)` over the sample.
pub fn vh<T: Real>(sample: &RdsSample<T>) -> Result<EstimateRecord<T>> {
    let degs = sample_degrees(sample)?;
    let num = total(sample.traits().iter().zip(degs).map(|(&y, &d)| y / d));
    let den = total(degs.iter().map(|&d| T::one() / d));
    EstimateRecord::from_sample(EstimatorKind::Vh, num / den, sample)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightSource {
    ClosedForm2Block,
    GeneralSolve,
}

/// Per-vertex GLS weights, summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct GlsWeights<T> {
    pub weights: Vec<T>,
    pub source: WeightSource,
}

impl<T: Real> GlsWeights<T> {
    pub fn apply(&self, values: &[T]) -> Result<T> {
        if values.len() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: self.weights.len(),
                got: values.len(),
            });
        }
        Ok(total(self.weights.iter().zip(values).map(|(&w, &v)| w * v)))
    }

    pub fn sum(&self) -> T {
        total(self.weights.iter().copied())
    }
}

/// Closed-form 2-block weights:
/// `w_sigma = [1 - lambda (deg(sigma) - 1)] / [n (1 - lambda (1 - 2/n))]`,
/// with `deg` the degree of `sigma` in the tree.
pub fn closed_form_weights<T: Real>(tree: &ReferralTree, lambda2: T) -> Result<GlsWeights<T>> {
    let n = T::from_count(tree.len());
    let denom = n * (T::one() - lambda2 * (T::one() - T::lit(2.0) / n));
    if denom.abs() <= T::tolerance(1e-12) * n {
        return Err(Error::DegenerateGls);
    }
    let weights = (0..tree.len())
        .map(|v| {
            let deg = T::from_count(tree.tree_degree(v));
            (T::one() - lambda2 * (deg - T::one())) / denom
        })
        .collect();
    Ok(GlsWeights {
        weights,
        source: WeightSource::ClosedForm2Block,
    })
}

/// Solves `Sigma x = 1` and normalizes: `w = x / (x^T 1)`.
pub fn general_weights<T: Real>(sigma: DMatrix<T>) -> Result<GlsWeights<T>> {
    let n = sigma.nrows();
    if sigma.ncols() != n || n == 0 {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: sigma.ncols(),
        });
    }
    let chol = Cholesky::new(sigma).ok_or(Error::SingularCovariance)?;
    let x = chol.solve(&DVector::from_element(n, T::one()));
    let s = x.sum();
    if !(s.abs() > T::default_epsilon()) || !s.is_finite() {
        return Err(Error::SingularCovariance);
    }
    Ok(GlsWeights {
        weights: x.iter().map(|&v| v / s).collect(),
        source: WeightSource::GeneralSolve,
    })
}

/// Stationary-start covariance of `y(X_sigma)` over the tree:
/// `Sigma_{sigma,tau} = sum_{j>=2} lambda_j^{d(sigma,tau)} <y, f_j>_pi^2`.
pub fn build_sigma_blockmodel<T: Real>(
    tree: &ReferralTree,
    dec: &SpectralDecomposition<T>,
    y: &[T],
) -> Result<DMatrix<T>> {
    Ok(TreeCovariance::new(dec, y)?.matrix(tree))
}

/// The covariance kernel `d -> sum_{j>=2} lambda_j^d <y, f_j>_pi^2`, expanded
/// once per trait and reused across trees.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeCovariance<T> {
    lambdas: Vec<T>,
    squared_coefficients: Vec<T>,
}

impl<T: Real> TreeCovariance<T> {
    pub fn new(dec: &SpectralDecomposition<T>, y: &[T]) -> Result<Self> {
        let coeffs = dec.expand(y)?;
        Ok(Self {
            lambdas: dec.eigenvalues()[1..].to_vec(),
            squared_coefficients: coeffs[1..].iter().map(|&c| c * c).collect(),
        })
    }

    /// Covariance at tree distances `0..=max_distance`.
    pub fn by_distance(&self, max_distance: usize) -> Vec<T> {
        let mut out = vec![T::zero(); max_distance + 1];
        for (&lambda, &c2) in self.lambdas.iter().zip(&self.squared_coefficients) {
            let mut power = T::one();
            for slot in out.iter_mut() {
                *slot += c2 * power;
                power *= lambda;
            }
        }
        out
    }

    pub fn matrix(&self, tree: &ReferralTree) -> DMatrix<T> {
        let n = tree.len();
        let dist = tree.distances();
        let max_d = dist.iter().copied().max().unwrap_or(0) as usize;
        let table = self.by_distance(max_d);
        DMatrix::from_fn(n, n, |a, b| table[dist[a * n + b] as usize])
    }

    /// GLS weights for `tree` under this covariance.
    pub fn weights(&self, tree: &ReferralTree) -> Result<GlsWeights<T>> {
        general_weights(self.matrix(tree))
    }
}

/// Weighted average with the given weights.
pub fn gls<T: Real>(sample: &RdsSample<T>, weights: &GlsWeights<T>) -> Result<EstimateRecord<T>> {
    let value = weights.apply(sample.traits())?;
    EstimateRecord::from_sample(EstimatorKind::Gls, value, sample)
}

/// Closed-form 2-block GLS estimate.
pub fn gls_closed_form_2block<T: Real>(sample: &RdsSample<T>, lambda2: T) -> Result<EstimateRecord<T>> {
    gls(sample, &closed_form_weights(sample.tree(), lambda2)?)
}

/// GLS with an explicit covariance matrix, indexed by vertex id.
pub fn gls_general<T: Real>(sample: &RdsSample<T>, sigma: DMatrix<T>) -> Result<(GlsWeights<T>, EstimateRecord<T>)> {
    if sigma.nrows() != sample.len() {
        return Err(Error::DimensionMismatch {
            expected: sample.len(),
            got: sigma.nrows(),
        });
    }
    let weights = general_weights(sigma)?;
    let record = gls(sample, &weights)?;
    Ok((weights, record))
}

/// GLS applied to `y^pi = y vol(G) / (N deg)`.
pub fn gls_ipw<T: Real>(
    sample: &RdsSample<T>,
    weights: &GlsWeights<T>,
    degrees: Option<&PopulationDegrees<T>>,
) -> Result<EstimateRecord<T>> {
    let degrees = degrees.ok_or_else(|| {
        Error::DegreesUnavailable("GLS-IPW needs population degrees (vol(G)/N); use GLS-VH instead".into())
    })?;
    let adjusted = ipw_trait(sample, degrees)?;
    EstimateRecord::from_sample(EstimatorKind::GlsIpw, weights.apply(&adjusted)?, sample)
}

/// Ratio of GLS estimates of `y/deg` and `1/deg`, sharing one weight vector.
pub fn gls_vh<T: Real>(sample: &RdsSample<T>, weights: &GlsWeights<T>) -> Result<EstimateRecord<T>> {
    let value = vh_ratio(sample, weights)?;
    EstimateRecord::from_sample(EstimatorKind::GlsVh, value, sample)
}

fn vh_ratio<T: Real>(sample: &RdsSample<T>, weights: &GlsWeights<T>) -> Result<T> {
    let degs = sample_degrees(sample)?;
    let num: Vec<T> = sample.traits().iter().zip(degs).map(|(&y, &d)| y / d).collect();
    let den: Vec<T> = degs.iter().map(|&d| T::one() / d).collect();
    Ok(weights.apply(&num)? / weights.apply(&den)?)
}

/// Plug-in estimate of the 2-block second eigenvalue from parent-to-child
/// trait transitions, with add-one smoothing.
pub fn estimate_lambda2<T: Real>(sample: &RdsSample<T>) -> Result<T> {
    let tree = sample.tree();
    let pairs = sample.len().saturating_sub(1);
    if pairs < 2 {
        return Err(Error::TooFewTransitions(pairs));
    }
    let one = T::one();
    let tol = T::tolerance(1e-12);
    let mut class = Vec::with_capacity(sample.len());
    for &y in sample.traits() {
        if (y - one).abs() <= tol {
            class.push(0usize);
        } else if y.abs() <= tol {
            class.push(1usize);
        } else {
            return Err(Error::NonBinaryTrait(y.as_f64()));
        }
    }
    let mut counts = [[0usize; 2]; 2];
    for v in 1..sample.len() {
        let p = tree.parent(v).expect("non-root vertex");
        counts[class[p]][class[v]] += 1;
    }
    let smoothed = |a: usize| {
        T::from_count(counts[a][a] + 1) / T::from_count(counts[a][0] + counts[a][1] + 2)
    };
    Ok(smoothed(0) + smoothed(1) - one)
}

/// SBM-fGLS plug-in: closed-form 2-block weights at the estimated
/// `lambda2`. An approximation of the published feasible-GLS procedure.
pub fn sbm_fgls<T: Real>(sample: &RdsSample<T>) -> Result<EstimateRecord<T>> {
    let lambda = estimate_lambda2(sample)?;
    let weights = closed_form_weights(sample.tree(), lambda)?;
    EstimateRecord::from_sample(EstimatorKind::SbmFgls, weights.apply(sample.traits())?, sample)
}

/// SBM-fGLS weights with the VH adjustment.
pub fn sbm_fgls_vh<T: Real>(sample: &RdsSample<T>) -> Result<EstimateRecord<T>> {
    let lambda = estimate_lambda2(sample)?;
    let weights = closed_form_weights(sample.tree(), lambda)?;
    EstimateRecord::from_sample(EstimatorKind::SbmFglsVh, vh_ratio(sample, &weights)?, sample)
}
