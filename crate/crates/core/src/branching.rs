//! Multitype Galton-Watson view of a tree-indexed walk: generation type
//! counts, mean and second-moment recursions, martingales and the
//! seed-dependent limit means of the sample average.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Binomial, Distribution};

use crate::error::{Error, Result};
use crate::graph::TransitionMatrix;
use crate::sampler::RdsSample;
use crate::scalar::Real;
use crate::spectral::{classify_regime, Regime, SpectralDecomposition};
use crate::tree::OffspringLaw;

/// `Z_t`: number of generation-t vertices in each state, with
/// `W_t = y^T Z_t` and `S_t = sum_{l <= t} W_l`.
#[derive(Debug, Clone, PartialEq)]
pub struct TypeCounts<T> {
    pub counts: Vec<Vec<u64>>,
    pub w: Vec<T>,
    pub s: Vec<T>,
}

impl<T: Real> TypeCounts<T> {
    pub fn from_counts(counts: Vec<Vec<u64>>, y: &[T]) -> Result<Self> {
        let mut w = Vec::with_capacity(counts.len());
        let mut s = Vec::with_capacity(counts.len());
        let mut acc = T::zero();
        for z in &counts {
            if z.len() != y.len() {
                return Err(Error::DimensionMismatch {
                    expected: y.len(),
                    got: z.len(),
                });
            }
            let wt = z.iter().zip(y).fold(T::zero(), |a, (&c, &v)| a + T::lit(c as f64) * v);
            acc += wt;
            w.push(wt);
            s.push(acc);
        }
        Ok(Self { counts, w, s })
    }

    pub fn generations(&self) -> usize {
        self.counts.len()
    }

    pub fn generation_size(&self, t: usize) -> u64 {
        self.counts[t].iter().sum()
    }

    /// `n_t`, the number of vertices in generations `0..=t`.
    pub fn cumulative_size(&self, t: usize) -> u64 {
        (0..=t).map(|l| self.generation_size(l)).sum()
    }

    /// Sample average over generations `0..=t`: `S_t / n_t`.
    pub fn sample_mean(&self, t: usize) -> T {
        self.s[t] / T::lit(self.cumulative_size(t) as f64)
    }

    /// `<Z_t, f>`.
    pub fn project(&self, t: usize, f: &[T]) -> T {
        self.counts[t]
            .iter()
            .zip(f)
            .fold(T::zero(), |a, (&c, &v)| a + T::lit(c as f64) * v)
    }
}

/// Per-generation type counts of a sample over `k` states.
pub fn count_types<T: Real>(sample: &RdsSample<T>, k: usize, y: &[T]) -> Result<TypeCounts<T>> {
    let tree = sample.tree();
    let mut counts = vec![vec![0u64; k]; tree.depth() + 1];
    for (v, &x) in sample.states().iter().enumerate() {
        if x >= k {
            return Err(Error::NodeOutOfRange { id: x, count: k });
        }
        counts[tree.generation(v)][x] += 1;
    }
    TypeCounts::from_counts(counts, y)
}

/// Simulates `Z_0..Z_depth` directly at the level of counts: the offspring of
/// all type-`j` parents are split over types by one multinomial draw from row
/// `j`. Equal in law to counting a full walk, at a cost independent of the
/// generation sizes.
pub fn simulate_type_counts<T: Real, R: Rng + ?Sized>(
    chain: &TransitionMatrix<T>,
    law: &OffspringLaw,
    seed_state: usize,
    depth: usize,
    rng: &mut R,
) -> Result<Vec<Vec<u64>>> {
    let k = chain.state_count();
    if seed_state >= k {
        return Err(Error::NodeOutOfRange { id: seed_state, count: k });
    }
    law.validate()?;
    let rows: Vec<Vec<f64>> = (0..k).map(|i| (0..k).map(|j| chain.get(i, j).as_f64()).collect()).collect();
    let mut z = vec![0u64; k];
    z[seed_state] = 1;
    let mut out = Vec::with_capacity(depth + 1);
    out.push(z.clone());
    for _ in 0..depth {
        let mut next = vec![0u64; k];
        for (j, &parents) in z.iter().enumerate() {
            let children = law.sample_total(parents, rng);
            multinomial_into(children, &rows[j], &mut next, rng);
        }
        out.push(next.clone());
        z = next;
    }
    Ok(out)
}

/// Adds a Multinomial(`n`, `p`) draw to `out` via sequential binomials.
fn multinomial_into<R: Rng + ?Sized>(n: u64, p: &[f64], out: &mut [u64], rng: &mut R) {
    let mut remaining = n;
    let mut mass = 1.0f64;
    for (slot, &pj) in out.iter_mut().zip(p).take(p.len() - 1) {
        if remaining == 0 {
            return;
        }
        let share = if mass > 0.0 { (pj / mass).clamp(0.0, 1.0) } else { 0.0 };
        let c = Binomial::new(remaining, share).expect("probability in range").sample(rng);
        *slot += c;
        remaining -= c;
        mass -= pj;
    }
    out[p.len() - 1] += remaining;
}

/// `M = m P`.
pub fn mean_matrix<T: Real>(chain: &TransitionMatrix<T>, m: T) -> DMatrix<T> {
    chain.matrix() * m
}

/// `E Z_t = Z_0 M^t` for `t = 0..=depth`, as row vectors.
pub fn expected_counts<T: Real>(chain: &TransitionMatrix<T>, m: T, z0: &[T], depth: usize) -> Vec<DVector<T>> {
    let mt = mean_matrix(chain, m).transpose();
    let mut current = DVector::from_column_slice(z0);
    let mut out = Vec::with_capacity(depth + 1);
    out.push(current.clone());
    for _ in 0..depth {
        current = &mt * current;
        out.push(current.clone());
    }
    out
}

/// First and second moments of `Z_t` for a deterministic `m`-tree.
#[derive(Debug, Clone)]
pub struct CountMoments<T: Real> {
    /// `E Z_t` as column vectors.
    pub mean: Vec<DVector<T>>,
    /// `C_t = E[Z_t^T Z_t]`.
    pub second: Vec<DMatrix<T>>,
}

impl<T: Real> CountMoments<T> {
    /// `Var <Z_t, f> = f^T (C_t - E Z_t^T E Z_t) f`.
    pub fn projected_variance(&self, t: usize, f: &[T]) -> T {
        let f = DVector::from_column_slice(f);
        let mean = self.mean[t].dot(&f);
        (f.transpose() * &self.second[t] * &f)[0] - mean * mean
    }
}

/// Second-moment recursion
/// `C_t = M^T C_{t-1} M + sum_k V_k E Z_{t-1,k}` with
/// `V_k = m (diag(P_k) - P_k P_k^T)`, started from a single seed.
pub fn covariance_recursion<T: Real>(chain: &TransitionMatrix<T>, m: usize, seed: usize, depth: usize) -> Result<CountMoments<T>> {
    let k = chain.state_count();
    if seed >= k {
        return Err(Error::NodeOutOfRange { id: seed, count: k });
    }
    let mf = T::from_count(m);
    let mm = mean_matrix(chain, mf);
    let v: Vec<DMatrix<T>> = (0..k)
        .map(|row| {
            let p = chain.matrix().row(row).transpose();
            (DMatrix::from_diagonal(&p) - &p * p.transpose()) * mf
        })
        .collect();
    let mut z0 = DVector::zeros(k);
    z0[seed] = T::one();
    let mut mean = vec![z0.clone()];
    let mut second = vec![&z0 * z0.transpose()];
    for t in 1..=depth {
        let prev_mean = &mean[t - 1];
        let mut c = mm.transpose() * &second[t - 1] * &mm;
        for (vk, &ez) in v.iter().zip(prev_mean.iter()) {
            c += vk * ez;
        }
        let next_mean = mm.transpose() * prev_mean;
        second.push(c);
        mean.push(next_mean);
    }
    Ok(CountMoments { mean, second })
}

/// Martingales of one sample: `Y_{t,j} = (m lambda_j)^{-t} <Z_t, f_j>` and
/// `M_n` over the breadth-first vertex order.
#[derive(Debug, Clone, PartialEq)]
pub struct MartingaleTrace<T> {
    /// `y[t][j]`, zero-based `j` (so `y[t][1]` tracks `f_2`).
    pub y: Vec<Vec<T>>,
    /// `m_n[n]` for `n = 0..len`, with `M_0 = 0`.
    pub m_n: Vec<T>,
}

/// `M_n = sum_{k=1..n} [y(X_k) - lambda2 y(X_{p(k)})] - n (1 - lambda2) E_pi(y)`,
/// with vertices numbered from the root at 0, so the sum runs over the first
/// `n` non-root vertices.
pub fn martingale_m<T: Real>(sample: &RdsSample<T>, lambda2: T, stationary_mean: T) -> Vec<T> {
    let tree = sample.tree();
    let y = sample.traits();
    let drift = (T::one() - lambda2) * stationary_mean;
    let mut out = Vec::with_capacity(sample.len());
    let mut acc = T::zero();
    out.push(acc);
    for k in 1..sample.len() {
        let p = tree.parent(k).expect("non-root vertex");
        acc += y[k] - lambda2 * y[p] - drift;
        out.push(acc);
    }
    out
}

pub fn martingale_traces<T: Real>(
    sample: &RdsSample<T>,
    dec: &SpectralDecomposition<T>,
    y: &[T],
    m: T,
) -> Result<MartingaleTrace<T>> {
    let k = dec.weights().len();
    let counts = count_types(sample, k, y)?;
    let mut traces = Vec::with_capacity(counts.generations());
    for t in 0..counts.generations() {
        let row = (0..dec.len())
            .map(|j| {
                let scale = (m * dec.eigenvalue(j)).powi(t as i32);
                counts.project(t, dec.eigenvector(j).as_slice()) / scale
            })
            .collect();
        traces.push(row);
    }
    let mean = dec.inner_product(y, &vec![T::one(); k]);
    Ok(MartingaleTrace {
        y: traces,
        m_n: martingale_m(sample, dec.lambda2(), mean),
    })
}

/// Trace export: `replicate,t_or_n,quantity,value`.
pub fn write_trace_csv<T: Real, W: Write>(traces: &[(usize, MartingaleTrace<T>)], mut out: W) -> Result<()> {
    writeln!(out, "replicate,t_or_n,quantity,value")?;
    for (rep, trace) in traces {
        for (t, row) in trace.y.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                writeln!(out, "{rep},{t},Y_{},{v}", j + 1)?;
            }
        }
        for (n, v) in trace.m_n.iter().enumerate() {
            writeln!(out, "{rep},{n},M,{v}")?;
        }
    }
    Ok(())
}

/// Limit mean of `lambda2^{-t} (mu_hat_t - E_pi y)` from one seed state.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureComponentSummary<T> {
    pub seed: usize,
    pub mean: T,
    pub lambda2: T,
    /// `(m - 1) lambda2 / (m lambda2 - 1)`.
    pub factor: T,
    /// `<y, f_2>_pi` of the trait the formula was applied to.
    pub coefficient: T,
    pub regime: Regime,
}

fn check_mixture_preconditions<T: Real>(dec: &SpectralDecomposition<T>, m: T, seed: usize) -> Result<(T, T)> {
    if seed >= dec.weights().len() {
        return Err(Error::NodeOutOfRange {
            id: seed,
            count: dec.weights().len(),
        });
    }
    let lambda2 = dec.lambda2();
    let regime = classify_regime(m, lambda2);
    if regime != Regime::HighVariance {
        return Err(Error::RegimeViolation {
            product: (m * lambda2 * lambda2).as_f64(),
            regime: regime.to_string(),
        });
    }
    if dec.second_eigenvalue_repeated() {
        let gap = (dec.eigenvalue(1) - dec.eigenvalue(2)).abs().as_f64();
        return Err(Error::RepeatedSecondEigenvalue { gap });
    }
    let factor = (m - T::one()) * lambda2 / (m * lambda2 - T::one());
    Ok((lambda2, factor))
}

/// `E X^(i) = (m - 1) lambda2 / (m lambda2 - 1) <y, f_2>_pi f_2(i)`.
pub fn mixture_component_mean<T: Real>(
    dec: &SpectralDecomposition<T>,
    y: &[T],
    m: T,
    seed: usize,
) -> Result<MixtureComponentSummary<T>> {
    let (lambda2, factor) = check_mixture_preconditions(dec, m, seed)?;
    let coefficient = dec.expand(y)?[1];
    Ok(MixtureComponentSummary {
        seed,
        mean: factor * coefficient * dec.eigenvector(1)[seed],
        lambda2,
        factor,
        coefficient,
        regime: Regime::HighVariance,
    })
}

/// Limit mean of `lambda2^{-t} (mu_hat_VH,t - mu_true)` from one seed state.
///
/// The VH estimator is a ratio of the sample averages of `y/deg` and
/// `1/deg`; linearizing the ratio around `mu_true` gives
/// `E_pi(1/deg)^{-1} (m - 1) lambda2 / (m lambda2 - 1) <(y - mu_true)/deg, f_2>_pi f_2(i)`,
/// which is what this returns.
pub fn vh_mixture_component_mean<T: Real>(
    dec: &SpectralDecomposition<T>,
    y: &[T],
    degrees: &[T],
    m: T,
    seed: usize,
) -> Result<MixtureComponentSummary<T>> {
    let (lambda2, factor) = check_mixture_preconditions(dec, m, seed)?;
    let (inv_deg, mu_true) = vh_targets(dec, y, degrees)?;
    let centered: Vec<T> = y.iter().zip(degrees).map(|(&v, &d)| (v - mu_true) / d).collect();
    let coefficient = dec.expand(&centered)?[1];
    Ok(MixtureComponentSummary {
        seed,
        mean: factor * coefficient * dec.eigenvector(1)[seed] / inv_deg,
        lambda2,
        factor,
        coefficient,
        regime: Regime::HighVariance,
    })
}

/// The same limit with `<y/deg, f_2>_pi` in place of the centered
/// coefficient. Differs from [`vh_mixture_component_mean`] unless
/// `<1/deg, f_2>_pi = 0` or `mu_true = 0`.
pub fn vh_mixture_component_mean_uncentered<T: Real>(
    dec: &SpectralDecomposition<T>,
    y: &[T],
    degrees: &[T],
    m: T,
    seed: usize,
) -> Result<MixtureComponentSummary<T>> {
    let (lambda2, factor) = check_mixture_preconditions(dec, m, seed)?;
    let (inv_deg, _) = vh_targets(dec, y, degrees)?;
    let y2: Vec<T> = y.iter().zip(degrees).map(|(&v, &d)| v / d).collect();
    let coefficient = dec.expand(&y2)?[1];
    Ok(MixtureComponentSummary {
        seed,
        mean: factor * coefficient * dec.eigenvector(1)[seed] / inv_deg,
        lambda2,
        factor,
        coefficient,
        regime: Regime::HighVariance,
    })
}

/// `(E_pi(1/deg), E_pi(y/deg) / E_pi(1/deg))`.
fn vh_targets<T: Real>(dec: &SpectralDecomposition<T>, y: &[T], degrees: &[T]) -> Result<(T, T)> {
    let k = dec.weights().len();
    if degrees.len() != k || y.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: degrees.len().min(y.len()),
        });
    }
    if let Some(i) = degrees.iter().position(|&d| !(d > T::zero())) {
        return Err(Error::ZeroDegree(format!("state {i}")));
    }
    let ones = vec![T::one(); k];
    let inv: Vec<T> = degrees.iter().map(|&d| T::one() / d).collect();
    let y2: Vec<T> = y.iter().zip(degrees).map(|(&v, &d)| v / d).collect();
    let e_inv = dec.inner_product(&inv, &ones);
    let e_y2 = dec.inner_product(&y2, &ones);
    Ok((e_inv, e_y2 / e_inv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::gls_closed_form_2block;
    use crate::sampler::{SeedSpec, WalkSampler};
    use crate::spectral::decompose;
    use crate::tree::ReferralTree;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn two_block(p: f64, q: f64) -> TransitionMatrix<f64> {
        TransitionMatrix::from_reversible(DMatrix::from_row_slice(2, 2, &[p, 1.0 - p, 1.0 - q, q])).unwrap()
    }

    #[test]
    fn identity_chain_counts() {
        let chain = TransitionMatrix::with_stationary(DMatrix::identity(2, 2), DVector::from_element(2, 0.5)).unwrap();
        let tree = Arc::new(ReferralTree::m_tree(2, 3).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = WalkSampler::new(&chain).walk(tree, &SeedSpec::FixedNode(1), &[0.0, 1.0], &mut rng).unwrap();
        let c = count_types(&s, 2, &[0.0, 1.0]).unwrap();
        assert_eq!(c.counts, vec![vec![0, 1], vec![0, 2], vec![0, 4], vec![0, 8]]);
        assert_eq!(c.s[3], 15.0);
        assert_eq!(c.sample_mean(3), 1.0);
        let sim = simulate_type_counts(&chain, &OffspringLaw::Deterministic(2), 1, 3, &mut rng).unwrap();
        assert_eq!(sim, c.counts);
    }

    #[test]
    fn generation_sizes_sum() {
        let chain = two_block(0.7, 0.6);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sim = simulate_type_counts(&chain, &OffspringLaw::Deterministic(2), 0, 3, &mut rng).unwrap();
        let sizes: Vec<u64> = sim.iter().map(|z| z.iter().sum()).collect();
        assert_eq!(sizes, vec![1, 2, 4, 8]);
    }

    #[test]
    fn mean_matrix_eigen_relation() {
        let chain = two_block(0.8, 0.7);
        assert_eq!(mean_matrix(&chain, 1.0), chain.matrix().clone());
        let dec = decompose(&chain).unwrap();
        let m = mean_matrix(&chain, 2.0);
        let f2 = dec.eigenvector(1);
        let lhs = &m * f2;
        for i in 0..2 {
            assert_abs_diff_eq!(lhs[i], 2.0 * dec.lambda2() * f2[i], epsilon = 1e-10);
        }
    }

    /// Exact law of `Z_t` on a 2-state chain with a deterministic `m`-tree:
    /// enumerate the type of every child of every parent.
    fn enumerate_counts(chain: &TransitionMatrix<f64>, m: usize, seed: usize, depth: usize) -> Vec<(Vec<u64>, f64)> {
        let mut law = vec![(vec![if seed == 0 { 1 } else { 0 }, if seed == 1 { 1 } else { 0 }], 1.0)];
        for _ in 0..depth {
            let mut next: Vec<(Vec<u64>, f64)> = Vec::new();
            for (z, p) in &law {
                // children of type-0 parents: Binomial(m z0, P00) of type 0
                let n0 = m as u64 * z[0];
                let n1 = m as u64 * z[1];
                for a in 0..=n0 {
                    for b in 0..=n1 {
                        let pa = binom(n0, a) * chain.get(0, 0).powi(a as i32) * chain.get(0, 1).powi((n0 - a) as i32);
                        let pb = binom(n1, b) * chain.get(1, 0).powi(b as i32) * chain.get(1, 1).powi((n1 - b) as i32);
                        let key = vec![a + b, n0 - a + n1 - b];
                        let prob = p * pa * pb;
                        match next.iter_mut().find(|(k, _)| *k == key) {
                            Some(entry) => entry.1 += prob,
                            None => next.push((key, prob)),
                        }
                    }
                }
            }
            law = next;
        }
        law
    }

    fn binom(n: u64, k: u64) -> f64 {
        (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
    }

    #[test]
    fn expected_counts_match_enumeration() {
        let chain = two_block(0.9, 0.6);
        for t in 0..=3 {
            let law = enumerate_counts(&chain, 2, 0, t);
            let exact: Vec<f64> = (0..2).map(|j| law.iter().map(|(z, p)| z[j] as f64 * p).sum()).collect();
            let formula = &expected_counts(&chain, 2.0, &[1.0, 0.0], t)[t];
            for j in 0..2 {
                assert_abs_diff_eq!(formula[j], exact[j], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn covariance_recursion_matches_enumeration() {
        let chain = two_block(0.95, 0.85);
        let dec = decompose(&chain).unwrap();
        let f2 = dec.eigenvector(1).as_slice().to_vec();
        for seed in 0..2 {
            let moments = covariance_recursion(&chain, 2, seed, 2).unwrap();
            assert_abs_diff_eq!(moments.projected_variance(0, &f2), 0.0, epsilon = 1e-15);
            for t in 1..=2 {
                let law = enumerate_counts(&chain, 2, seed, t);
                let proj = |z: &Vec<u64>| z[0] as f64 * f2[0] + z[1] as f64 * f2[1];
                let mean: f64 = law.iter().map(|(z, p)| proj(z) * p).sum();
                let var: f64 = law.iter().map(|(z, p)| (proj(z) - mean).powi(2) * p).sum();
                assert_abs_diff_eq!(moments.projected_variance(t, &f2), var, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn martingale_conditional_expectation_exact() {
        // E[Y_{t+1,2} | Z_t] = Y_{t,2} for every reachable Z_t, t <= 1
        let chain = two_block(0.8, 0.7);
        let dec = decompose(&chain).unwrap();
        let f2 = dec.eigenvector(1);
        let m = 2usize;
        let scale = m as f64 * dec.lambda2();
        for seed in 0..2 {
            for t in 0..=1 {
                for (z, _) in enumerate_counts(&chain, m, seed, t) {
                    let y_t = (z[0] as f64 * f2[0] + z[1] as f64 * f2[1]) / scale.powi(t as i32);
                    // one more generation from exactly this Z_t
                    let next = one_step_law(&chain, m, &z);
                    let e_next: f64 = next
                        .iter()
                        .map(|(zn, p)| p * (zn[0] as f64 * f2[0] + zn[1] as f64 * f2[1]))
                        .sum::<f64>()
                        / scale.powi(t as i32 + 1);
                    assert!((e_next - y_t).abs() < 1e-12);
                }
            }
        }
    }

    fn one_step_law(chain: &TransitionMatrix<f64>, m: usize, z: &[u64]) -> Vec<(Vec<u64>, f64)> {
        let n0 = m as u64 * z[0];
        let n1 = m as u64 * z[1];
        let mut out = Vec::new();
        for a in 0..=n0 {
            for b in 0..=n1 {
                let pa = binom(n0, a) * chain.get(0, 0).powi(a as i32) * chain.get(0, 1).powi((n0 - a) as i32);
                let pb = binom(n1, b) * chain.get(1, 0).powi(b as i32) * chain.get(1, 1).powi((n1 - b) as i32);
                out.push((vec![a + b, n0 - a + n1 - b], pa * pb));
            }
        }
        out
    }

    #[test]
    fn centered_constant_trait_has_zero_martingale() {
        let chain = two_block(0.8, 0.7);
        let tree = Arc::new(ReferralTree::m_tree(2, 4).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = WalkSampler::new(&chain).walk(tree, &SeedSpec::Stationary, &[0.0, 0.0], &mut rng).unwrap();
        assert!(martingale_m(&s, 0.5, 0.0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gls_and_martingale_identity() {
        // n (1 - lambda (1 - 2/n)) (GLS - mu) = M_{n-1} + (1 + lambda)(y_0 - mu)
        let chain = two_block(0.8, 0.7);
        let y = [1.0, 0.0];
        let mu = chain.stationary_mean(&y);
        let lambda = 0.5;
        let tree = Arc::new(ReferralTree::m_tree(2, 6).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let s = WalkSampler::new(&chain).walk(tree.clone(), &SeedSpec::FixedNode(1), &y, &mut rng).unwrap();
            let n = s.len() as f64;
            let gls = gls_closed_form_2block(&s, lambda).unwrap().value;
            let m = *martingale_m(&s, lambda, mu).last().unwrap();
            let lhs = (n * (1.0 - lambda) + 2.0 * lambda) * (gls - mu);
            assert_abs_diff_eq!(lhs, m + (1.0 + lambda) * (s.traits()[0] - mu), epsilon = 1e-10);
        }
    }

    #[test]
    fn traces_start_at_seed_eigenvector() {
        let chain = two_block(0.95, 0.95);
        let dec = decompose(&chain).unwrap();
        let tree = Arc::new(ReferralTree::m_tree(2, 3).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let y = [1.0, 0.0];
        let s = WalkSampler::new(&chain).walk(tree, &SeedSpec::FixedNode(1), &y, &mut rng).unwrap();
        let tr = martingale_traces(&s, &dec, &y, 2.0).unwrap();
        assert_abs_diff_eq!(tr.y[0][1], dec.eigenvector(1)[1], epsilon = 1e-15);
        assert_abs_diff_eq!(tr.y[0][0], 1.0, epsilon = 1e-15);
        assert_eq!(tr.m_n.len(), 15);
        let mut buf = Vec::new();
        write_trace_csv(&[(0, tr)], &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("replicate,t_or_n,quantity,value\n0,0,Y_1,1\n"));
    }

    #[test]
    fn balanced_mixture_means() {
        let chain = two_block(0.95, 0.95);
        let dec = decompose(&chain).unwrap();
        let y = [0.5, -0.5];
        let a = mixture_component_mean(&dec, &y, 2.0, 0).unwrap();
        let b = mixture_component_mean(&dec, &y, 2.0, 1).unwrap();
        assert_abs_diff_eq!(a.factor, 1.125, epsilon = 1e-12);
        assert_abs_diff_eq!(a.mean, 0.5625, epsilon = 1e-12);
        assert_abs_diff_eq!(b.mean, -0.5625, epsilon = 1e-12);
        // uncentered trait gives the same coefficient since f_2 is pi-orthogonal to constants
        assert_abs_diff_eq!(mixture_component_mean(&dec, &[1.0, 0.0], 2.0, 0).unwrap().mean, 0.5625, epsilon = 1e-12);
        assert!(mixture_component_mean(&dec, &[1.0, 1.0], 2.0, 0).unwrap().mean.abs() < 1e-12);
    }

    #[test]
    fn mixture_mean_preconditions() {
        let dec = decompose(&two_block(0.8, 0.7)).unwrap();
        assert!(matches!(mixture_component_mean(&dec, &[1.0, 0.0], 2.0, 0), Err(Error::RegimeViolation { .. })));
        let id = TransitionMatrix::with_stationary(DMatrix::identity(3, 3), DVector::from_element(3, 1.0 / 3.0)).unwrap();
        // identity has lambda2 = 1, which is outside the high-variance check anyway
        assert!(mixture_component_mean(&decompose(&id).unwrap(), &[1.0, 0.0, 0.0], 2.0, 0).is_err());
    }

    #[test]
    fn vh_mean_reduces_to_sample_mean_for_equal_degrees() {
        let dec = decompose(&two_block(0.95, 0.95)).unwrap();
        let y = [1.0, 0.0];
        let vh = vh_mixture_component_mean(&dec, &y, &[4.0, 4.0], 2.0, 0).unwrap();
        let plain = mixture_component_mean(&dec, &y, 2.0, 0).unwrap();
        assert_abs_diff_eq!(vh.mean, plain.mean, epsilon = 1e-12);
    }

    #[test]
    fn count_simulation_matches_expected_counts() {
        let chain = two_block(0.9, 0.6);
        let law = OffspringLaw::OnePlusBinomial { trials: 2, prob: 0.5 };
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let reps = 20_000;
        let t = 3;
        let mut sum = [0.0f64; 2];
        let mut sum_sq = [0.0f64; 2];
        for _ in 0..reps {
            let z = simulate_type_counts(&chain, &law, 0, t, &mut rng).unwrap();
            for j in 0..2 {
                let v = z[t][j] as f64;
                sum[j] += v;
                sum_sq[j] += v * v;
            }
        }
        let expected = &expected_counts(&chain, law.mean(), &[1.0, 0.0], t)[t];
        for j in 0..2 {
            let mean = sum[j] / reps as f64;
            let var = sum_sq[j] / reps as f64 - mean * mean;
            assert!((mean - expected[j]).abs() < 3.0 * (var / reps as f64).sqrt(), "type {j}");
        }
    }
}
