//! Summaries of replicate estimates: moments, Gaussian KDE, normal Q-Q
//! pairs, Kolmogorov-Smirnov distances and a two-class separation check.
//!
//! These operate on `f64` only; they consume harness output, not model
//! quantities.

use std::io::Write;

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

pub const KDE_GRID_POINTS: usize = 512;

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("valid standard normal")
}

fn check_finite(values: &[f64]) -> Result<()> {
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::Degenerate(format!("non-finite value {v}")));
    }
    Ok(())
}

/// Sample mean and unbiased variance (`n - 1` denominator).
pub fn mean_variance(values: &[f64]) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::Degenerate(format!("need at least 2 values, got {}", values.len())));
    }
    check_finite(values)?;
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, var))
}

/// Monte Carlo standard error of the mean.
pub fn standard_error(values: &[f64]) -> Result<f64> {
    let (_, var) = mean_variance(values)?;
    Ok((var / values.len() as f64).sqrt())
}

/// Least-squares slope of `ys` on `xs`.
pub fn linear_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Degenerate("slope needs at least 2 paired points".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Degenerate("all x values equal".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(sxy / sxx)
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Linear-interpolated sample quantile, `prob` in [0, 1].
fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let pos = prob * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    /// `0.9 min(sd, IQR / 1.34) n^{-1/5}`.
    Silverman,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Kde {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
}

impl Kde {
    /// Trapezoid integral over the grid.
    pub fn integral(&self) -> f64 {
        self.grid
            .windows(2)
            .zip(self.density.windows(2))
            .map(|(x, d)| (x[1] - x[0]) * (d[0] + d[1]) / 2.0)
            .sum()
    }

    /// Density interpolated at `x` (0 outside the grid).
    pub fn at(&self, x: f64) -> f64 {
        let last = self.grid.len() - 1;
        if x < self.grid[0] || x > self.grid[last] {
            return 0.0;
        }
        let idx = self.grid.partition_point(|&g| g <= x).min(last).max(1);
        let (x0, x1) = (self.grid[idx - 1], self.grid[idx]);
        let frac = if x1 > x0 { (x - x0) / (x1 - x0) } else { 0.0 };
        self.density[idx - 1] + frac * (self.density[idx] - self.density[idx - 1])
    }

    /// Local maxima at least 5% as high as the global maximum.
    pub fn modes(&self) -> Vec<f64> {
        let peak = self.density.iter().cloned().fold(0.0, f64::max);
        let d = &self.density;
        let mut out = Vec::new();
        let mut i = 1;
        while i + 1 < d.len() {
            if d[i] > d[i - 1] {
                // walk across a flat top
                let mut j = i;
                while j + 1 < d.len() && d[j + 1] == d[i] {
                    j += 1;
                }
                if j + 1 < d.len() && d[j + 1] < d[i] && d[i] >= 0.05 * peak {
                    out.push(self.grid[(i + j) / 2]);
                }
                i = j + 1;
            } else {
                i += 1;
            }
        }
        out
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "x,density")?;
        for (x, d) in self.grid.iter().zip(&self.density) {
            writeln!(out, "{x},{d}")?;
        }
        Ok(())
    }
}

pub fn silverman_bandwidth(values: &[f64]) -> Result<f64> {
    let (_, var) = mean_variance(values)?;
    let s = sorted(values);
    let iqr = quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25);
    let sd = var.sqrt();
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    Ok(0.9 * spread * (values.len() as f64).powf(-0.2))
}

/// Gaussian kernel density estimate on 512 points spanning
/// `[min - 3h, max + 3h]`.
pub fn kde(values: &[f64], bandwidth: Bandwidth) -> Result<Kde> {
    check_finite(values)?;
    let s = sorted(values);
    if s.len() < 2 || s[0] == s[s.len() - 1] {
        return Err(Error::Degenerate(
            "KDE needs at least two distinct values; the replicates are constant".into(),
        ));
    }
    let h = match bandwidth {
        Bandwidth::Silverman => silverman_bandwidth(values)?,
        Bandwidth::Fixed(h) => h,
    };
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidParameter(format!("bandwidth {h} must be positive")));
    }
    let lo = s[0] - 3.0 * h;
    let hi = s[s.len() - 1] + 3.0 * h;
    let step = (hi - lo) / (KDE_GRID_POINTS - 1) as f64;
    let grid: Vec<f64> = (0..KDE_GRID_POINTS).map(|i| lo + step * i as f64).collect();
    let norm = 1.0 / (s.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    // kernels beyond 8h contribute below 1e-14 of their peak
    let cutoff = 8.0 * h;
    let density = grid
        .iter()
        .map(|&x| {
            let start = s.partition_point(|&v| v < x - cutoff);
            let end = s.partition_point(|&v| v <= x + cutoff);
            s[start..end]
                .iter()
                .map(|&v| (-0.5 * ((x - v) / h).powi(2)).exp())
                .sum::<f64>()
                * norm
        })
        .collect();
    Ok(Kde {
        grid,
        density,
        bandwidth: h,
    })
}

/// Pairs `(theoretical, empirical)`: standard-normal quantiles at
/// `(i - 0.5)/n` against the sorted standardized values.
pub fn qq_normal(values: &[f64]) -> Result<Vec<(f64, f64)>> {
    let (mean, var) = mean_variance(values)?;
    let sd = var.sqrt();
    if sd == 0.0 {
        return Err(Error::Degenerate("Q-Q plot of constant values".into()));
    }
    let n = values.len();
    let normal = standard_normal();
    Ok(sorted(values)
        .into_iter()
        .enumerate()
        .map(|(i, v)| (normal.inverse_cdf((i as f64 + 0.5) / n as f64), (v - mean) / sd))
        .collect())
}

pub fn write_qq_csv<W: Write>(pairs: &[(f64, f64)], mut out: W) -> Result<()> {
    writeln!(out, "theoretical,empirical")?;
    for (a, b) in pairs {
        writeln!(out, "{a},{b}")?;
    }
    Ok(())
}

/// Largest gap between the empirical CDF and the normal with the sample's
/// mean and standard deviation. Constant input gives 0.5.
pub fn ks_to_fitted_normal(values: &[f64]) -> Result<f64> {
    let (mean, var) = mean_variance(values)?;
    let sd = var.sqrt();
    if sd == 0.0 {
        return Ok(0.5);
    }
    let normal = Normal::new(mean, sd).map_err(|e| Error::Degenerate(e.to_string()))?;
    let s = sorted(values);
    let n = s.len() as f64;
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < s.len() {
        // ties: the ECDF jumps once over the whole run
        let mut j = i;
        while j + 1 < s.len() && s[j + 1] == s[i] {
            j += 1;
        }
        let f = normal.cdf(s[i]);
        d = d.max((f - i as f64 / n).abs()).max(((j + 1) as f64 / n - f).abs());
        i = j + 1;
    }
    Ok(d)
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Degenerate("two-sample KS needs nonempty samples".into()));
    }
    check_finite(a)?;
    check_finite(b)?;
    let (a, b) = (sorted(a), sorted(b));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeparationReport {
    pub mean_a: f64,
    pub mean_b: f64,
    pub pooled_se: f64,
    pub z: f64,
    /// `|mean_a - mean_b| > 3 * pooled_se`.
    pub separated: bool,
}

/// Compares the means of two seed classes.
pub fn mixture_separation(a: &[f64], b: &[f64]) -> Result<SeparationReport> {
    let (mean_a, var_a) = mean_variance(a)?;
    let (mean_b, var_b) = mean_variance(b)?;
    let pooled_se = (var_a / a.len() as f64 + var_b / b.len() as f64).sqrt();
    let diff = (mean_a - mean_b).abs();
    let z = if pooled_se > 0.0 { diff / pooled_se } else if diff > 0.0 { f64::INFINITY } else { 0.0 };
    Ok(SeparationReport {
        mean_a,
        mean_b,
        pooled_se,
        z,
        separated: diff > 3.0 * pooled_se,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistributionSummary {
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
    pub ks_normal: f64,
    pub modes: Vec<f64>,
    pub kde: Kde,
    pub qq: Vec<(f64, f64)>,
}

pub fn summarize(values: &[f64]) -> Result<DistributionSummary> {
    let (mean, variance) = mean_variance(values)?;
    let kde = kde(values, Bandwidth::Silverman)?;
    Ok(DistributionSummary {
        n: values.len(),
        mean,
        variance,
        ks_normal: ks_to_fitted_normal(values)?,
        modes: kde.modes(),
        qq: qq_normal(values)?,
        kde,
    })
}
