//! Spectral analysis of reversible chains in the pi-weighted inner product.
//!
//! The decomposition symmetrizes `P` as `S = D^{1/2} P D^{-1/2}` with
//! `D = diag(pi)`. The top eigenvector `sqrt(pi)` is split off explicitly with
//! a Householder reflection so that `f_1` is exactly the constant function
//! with eigenvalue exactly 1, even when 1 is a repeated eigenvalue.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::graph::{TransitionMatrix, WeightedGraph};
use crate::scalar::Real;

/// Gap below which `lambda_2` and `lambda_3` are treated as equal.
pub const MULTIPLICITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct SpectralDecomposition<T: Real> {
    eigenvalues: Vec<T>,
    /// `eigenvectors[j]` is `f_{j+1}` as a function on states.
    eigenvectors: Vec<DVector<T>>,
    weights: DVector<T>,
}

impl<T: Real> SpectralDecomposition<T> {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// Eigenvalues sorted by descending modulus (ties: descending value).
    pub fn eigenvalues(&self) -> &[T] {
        &self.eigenvalues
    }

    pub fn eigenvalue(&self, j: usize) -> T {
        self.eigenvalues[j]
    }

    /// Zero-based: `eigenvector(0)` is the constant function.
    pub fn eigenvector(&self, j: usize) -> &DVector<T> {
        &self.eigenvectors[j]
    }

    pub fn weights(&self) -> &DVector<T> {
        &self.weights
    }

    /// Second eigenvalue (by modulus), or 0 for a one-state chain.
    pub fn lambda2(&self) -> T {
        self.eigenvalues.get(1).copied().unwrap_or_else(T::zero)
    }

    /// `true` when `|lambda_2 - lambda_3| < 1e-9`, where the single-eigenvalue
    /// limit formulas no longer apply.
    pub fn second_eigenvalue_repeated(&self) -> bool {
        self.eigenvalues.len() > 2
            && (self.eigenvalues[1] - self.eigenvalues[2]).abs() < T::lit(MULTIPLICITY_TOL)
    }

    pub fn inner_product(&self, a: &[T], b: &[T]) -> T {
        a.iter()
            .zip(b)
            .zip(self.weights.iter())
            .fold(T::zero(), |acc, ((&x, &y), &w)| acc + x * y * w)
    }

    /// Coefficients `c_j = <y, f_j>_pi`.
    pub fn expand(&self, y: &[T]) -> Result<Vec<T>> {
        if y.len() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: self.weights.len(),
                got: y.len(),
            });
        }
        Ok(self
            .eigenvectors
            .iter()
            .map(|f| self.inner_product(y, f.as_slice()))
            .collect())
    }

    /// `sum_j c_j f_j`.
    pub fn reconstruct(&self, coefficients: &[T]) -> Result<Vec<T>> {
        if coefficients.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: coefficients.len(),
            });
        }
        let n = self.weights.len();
        let mut out = vec![T::zero(); n];
        for (c, f) in coefficients.iter().zip(&self.eigenvectors) {
            for i in 0..n {
                out[i] += *c * f[i];
            }
        }
        Ok(out)
    }

    /// `sum_j lambda_j^power f_j(i) f_j(k) pi(k)`, i.e. `(P^power)_{ik}`.
    pub fn reconstruct_power(&self, power: u32) -> DMatrix<T> {
        let n = self.weights.len();
        let mut out = DMatrix::zeros(n, n);
        for (lambda, f) in self.eigenvalues.iter().zip(&self.eigenvectors) {
            let scale = lambda.powi(power as i32);
            for i in 0..n {
                for k in 0..n {
                    out[(i, k)] += scale * f[i] * f[k] * self.weights[k];
                }
            }
        }
        out
    }

    /// Audit export: one row per eigenpair, `j,lambda,f_0..f_{N-1}` with
    /// one-based `j`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let n = self.weights.len();
        write!(out, "j,lambda")?;
        for i in 0..n {
            write!(out, ",f_{i}")?;
        }
        writeln!(out)?;
        for (j, (lambda, f)) in self.eigenvalues.iter().zip(&self.eigenvectors).enumerate() {
            write!(out, "{},{}", j + 1, lambda)?;
            for v in f.iter() {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Full eigendecomposition of a reversible transition matrix.
pub fn decompose<T: Real>(chain: &TransitionMatrix<T>) -> Result<SpectralDecomposition<T>> {
    // re-validate: the chain may have been built from a matrix edited after construction
    let chain = TransitionMatrix::with_stationary(chain.matrix().clone(), chain.stationary().clone())?;
    let n = chain.state_count();
    let pi = chain.stationary();
    let sqrt_pi: DVector<T> = pi.map(|p| p.sqrt());

    let mut sym = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            sym[(i, j)] = sqrt_pi[i] * chain.get(i, j) / sqrt_pi[j];
        }
    }
    let sym = (&sym + sym.transpose()) * T::lit(0.5);

    let mut pairs: Vec<(T, DVector<T>)> = Vec::with_capacity(n);
    pairs.push((T::one(), DVector::from_element(n, T::one())));

    if n > 1 {
        let basis = complement_basis(&sqrt_pi);
        let reduced = basis.transpose() * &sym * &basis;
        let reduced = (&reduced + reduced.transpose()) * T::lit(0.5);
        let eig = SymmetricEigen::try_new(reduced, T::default_epsilon(), 10_000)
            .ok_or_else(|| Error::Eigensolver("symmetric QR did not converge".into()))?;
        let mut rest: Vec<(T, DVector<T>)> = (0..n - 1)
            .map(|k| {
                let u = &basis * eig.eigenvectors.column(k);
                let f = DVector::from_iterator(n, u.iter().zip(sqrt_pi.iter()).map(|(&a, &s)| a / s));
                (eig.eigenvalues[k], f)
            })
            .collect();
        sort_by_modulus(&mut rest);
        for (_, f) in rest.iter_mut() {
            fix_sign(f);
        }
        pairs.extend(rest);
    }

    let (eigenvalues, eigenvectors) = pairs.into_iter().unzip();
    Ok(SpectralDecomposition {
        eigenvalues,
        eigenvectors,
        weights: pi.clone(),
    })
}

/// Orthonormal basis (as columns) of the complement of the unit vector `v`.
fn complement_basis<T: Real>(v: &DVector<T>) -> DMatrix<T> {
    let n = v.len();
    // Householder H with H e_0 = v; columns 1.. of H span v's complement
    let mut u = v.clone();
    u[0] -= T::one();
    let norm_sq = u.norm_squared();
    let mut h = DMatrix::identity(n, n);
    if norm_sq > T::default_epsilon() {
        h -= (&u * u.transpose()) * (T::lit(2.0) / norm_sq);
    }
    h.columns(1, n - 1).into_owned()
}

fn sort_by_modulus<T: Real>(pairs: &mut [(T, DVector<T>)]) {
    pairs.sort_by(|a, b| {
        b.0.abs()
            .partial_cmp(&a.0.abs())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    // within runs of (numerically) equal modulus, order by descending value
    let tol = T::tolerance(1e-12);
    let mut start = 0;
    while start < pairs.len() {
        let mut end = start + 1;
        while end < pairs.len() && (pairs[end - 1].0.abs() - pairs[end].0.abs()).abs() < tol {
            end += 1;
        }
        pairs[start..end].sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
        start = end;
    }
}

/// Makes the first largest-magnitude entry positive.
fn fix_sign<T: Real>(f: &mut DVector<T>) {
    let max = f.iter().fold(T::zero(), |m, &x| if x.abs() > m { x.abs() } else { m });
    let slack = max * T::tolerance(1e-9);
    if let Some(&lead) = f.iter().find(|&&x| x.abs() >= max - slack) {
        if lead < T::zero() {
            f.neg_mut();
        }
    }
}

/// `c_j = <y, f_j>_pi` for every eigenfunction.
pub fn expand_in_eigenbasis<T: Real>(y: &[T], dec: &SpectralDecomposition<T>) -> Result<Vec<T>> {
    dec.expand(y)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    LowVariance,
    HighVariance,
    Critical,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Regime::LowVariance => "low-variance",
            Regime::HighVariance => "high-variance",
            Regime::Critical => "critical",
        })
    }
}

/// Compares `m * lambda2^2` against 1.
pub fn classify_regime<T: Real>(m: T, lambda2: T) -> Regime {
    let product = m * lambda2 * lambda2;
    let tol = T::tolerance(1e-12);
    if (product - T::one()).abs() <= tol {
        Regime::Critical
    } else if product > T::one() {
        Regime::HighVariance
    } else {
        Regime::LowVariance
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BottleneckStat<T> {
    pub lambda_tilde: T,
    /// Centered, unit-Euclidean-norm trait.
    pub standardized_trait: Vec<T>,
}

/// `y~^T D^{-1/2} A D^{-1/2} y~` for the centered, unit-norm trait `y~`.
pub fn bottleneck<T: Real>(graph: &WeightedGraph<T>, y: &[T]) -> Result<BottleneckStat<T>> {
    let n = graph.node_count();
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: y.len(),
        });
    }
    let mean = y.iter().fold(T::zero(), |a, &v| a + v) / T::from_count(n);
    let centered: Vec<T> = y.iter().map(|&v| v - mean).collect();
    let norm = centered.iter().fold(T::zero(), |a, &v| a + v * v).sqrt();
    if !(norm > T::tolerance(1e-12)) {
        return Err(Error::ConstantTrait);
    }
    let standardized: Vec<T> = centered.iter().map(|&v| v / norm).collect();
    let degrees = graph.degrees();
    if let Some(i) = degrees.iter().position(|&d| !(d > T::zero())) {
        return Err(Error::ZeroDegree(graph.label(i).to_string()));
    }
    let inv_sqrt: Vec<T> = degrees.iter().map(|&d| T::one() / d.sqrt()).collect();
    let mut total = T::zero();
    for (i, j, w) in graph.edges() {
        let term = standardized[i] * w * inv_sqrt[i] * inv_sqrt[j] * standardized[j];
        total += if i == j { term } else { term + term };
    }
    Ok(BottleneckStat {
        lambda_tilde: total,
        standardized_trait: standardized,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn two_block(p: f64, q: f64) -> TransitionMatrix<f64> {
        TransitionMatrix::from_reversible(DMatrix::from_row_slice(2, 2, &[p, 1.0 - p, 1.0 - q, q]))
            .unwrap()
    }

    #[test]
    fn two_block_second_eigenvalue() {
        for &(p, q) in &[(0.95, 0.95), (0.8, 0.7), (0.95, 0.85), (0.2, 0.3)] {
            let dec = decompose(&two_block(p, q)).unwrap();
            assert_abs_diff_eq!(dec.lambda2(), p + q - 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn balanced_two_block_eigenvector() {
        let dec = decompose(&two_block(0.9, 0.9)).unwrap();
        assert_abs_diff_eq!(dec.eigenvector(1)[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(dec.eigenvector(1)[1], -1.0, epsilon = 1e-12);
        assert_eq!(dec.eigenvector(0).as_slice(), &[1.0, 1.0]);
    }

    #[test]
    fn identity_chain_all_ones() {
        let n = 4;
        let chain = TransitionMatrix::with_stationary(
            DMatrix::identity(n, n),
            DVector::from_element(n, 0.25),
        )
        .unwrap();
        let dec = decompose(&chain).unwrap();
        for &l in dec.eigenvalues() {
            assert_abs_diff_eq!(l, 1.0, epsilon = 1e-12);
        }
        assert!(dec.second_eigenvalue_repeated());
        assert_eq!(dec.eigenvector(0).as_slice(), &[1.0; 4]);
    }

    #[test]
    fn expansion_examples() {
        let dec = decompose(&two_block(0.95, 0.95)).unwrap();
        let c = dec.expand(&[3.0, 3.0]).unwrap();
        assert_abs_diff_eq!(c[0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c[1], 0.0, epsilon = 1e-12);
        let c = dec.expand(&[0.5, -0.5]).unwrap();
        // 0.5 * 0.5 * 1 + (-0.5) * 0.5 * (-1)
        assert_abs_diff_eq!(c[1], 0.5, epsilon = 1e-12);
        assert!(dec.expand(&[1.0]).is_err());
    }

    #[test]
    fn expanding_an_eigenvector_gives_unit_coefficient() {
        let g = WeightedGraph::from_edges(
            4,
            [(0, 1, 1.0), (1, 2, 2.0), (2, 3, 1.0), (0, 3, 0.5), (0, 2, 1.5)],
        )
        .unwrap();
        let dec = decompose(&TransitionMatrix::from_graph(&g).unwrap()).unwrap();
        let c = dec.expand(dec.eigenvector(2).as_slice()).unwrap();
        for (j, &cj) in c.iter().enumerate() {
            assert_abs_diff_eq!(cj, if j == 2 { 1.0 } else { 0.0 }, epsilon = 1e-10);
        }
    }

    #[test]
    fn two_node_graph_is_periodic() {
        let g = WeightedGraph::from_edges(2, [(0, 1, 1.0)]).unwrap();
        let dec = decompose(&TransitionMatrix::from_graph(&g).unwrap()).unwrap();
        assert_abs_diff_eq!(dec.eigenvalue(0), 1.0);
        assert_abs_diff_eq!(dec.eigenvalue(1), -1.0, epsilon = 1e-12);
    }

    #[test]
    fn regimes() {
        assert_eq!(classify_regime(2.0, 0.9), Regime::HighVariance);
        assert_eq!(classify_regime(2.0, 0.5), Regime::LowVariance);
        assert_eq!(classify_regime(4.0, 0.5), Regime::Critical);
    }

    #[test]
    fn bottleneck_complete_graph() {
        let n = 6;
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                edges.push((i, j, 1.0));
            }
        }
        let g = WeightedGraph::from_edges(n, edges).unwrap();
        let y = [1.0, -1.0, 1.0, -1.0, 1.0, -1.0];
        let stat = bottleneck(&g, &y).unwrap();
        assert_abs_diff_eq!(stat.lambda_tilde, -1.0 / (n as f64 - 1.0), epsilon = 1e-12);
        // direct dense evaluation
        let a = g.adjacency_matrix();
        let d = DMatrix::from_diagonal(&DVector::from_iterator(
            n,
            g.degrees().iter().map(|d| 1.0 / d.sqrt()),
        ));
        let l = &d * a * &d;
        let yt = DVector::from_vec(stat.standardized_trait.clone());
        assert_abs_diff_eq!((yt.transpose() * l * &yt)[0], stat.lambda_tilde, epsilon = 1e-12);
    }

    #[test]
    fn bottleneck_path_matches_dense_product() {
        let g = WeightedGraph::from_edges(4, [(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0)]).unwrap();
        let stat = bottleneck(&g, &[1.0, 1.0, 0.0, 0.0]).unwrap();
        // y~ = (1,1,-1,-1)/2, degrees (1,2,2,1):
        // 2 * [ (1/2)(1/2)/sqrt(2) + (1/2)(-1/2)/2 + (-1/2)(-1/2)/sqrt(2) ]
        let expected = 2.0 * (0.25 / 2f64.sqrt() - 0.25 / 2.0 + 0.25 / 2f64.sqrt());
        assert_abs_diff_eq!(stat.lambda_tilde, expected, epsilon = 1e-12);
        let sum: f64 = stat.standardized_trait.iter().sum();
        let norm: f64 = stat.standardized_trait.iter().map(|v| v * v).sum();
        assert_abs_diff_eq!(sum, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(norm, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn bottleneck_rejects_constant_trait() {
        let g = WeightedGraph::from_edges(2, [(0, 1, 1.0)]).unwrap();
        assert_eq!(bottleneck(&g, &[2.0, 2.0]), Err(Error::ConstantTrait));
    }

    #[test]
    fn csv_export_shape() {
        let dec = decompose(&two_block(0.8, 0.7)).unwrap();
        let mut buf = Vec::new();
        dec.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "j,lambda,f_0,f_1");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("1,1,1,1"));
    }
}
