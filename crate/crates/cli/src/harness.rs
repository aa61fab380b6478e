//! Replicate loop, per-group summaries and the output bundle.
//!
//! Replicate `r` draws everything from its own ChaCha stream
//! `(master_seed, r)`, and results are gathered by index, so output does not
//! depend on the number of worker threads.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use rds_core::estimators::{
    closed_form_weights, gls, gls_ipw, gls_vh, ipw, sample_mean, sbm_fgls, sbm_fgls_vh, vh, EstimatorKind,
    GlsWeights, TreeCovariance,
};
use rds_core::sampler::{walk_without_replacement, RdsSample, SeedSpec, WalkSampler};
use rds_core::spectral::classify_regime;
use rds_core::stats::{mixture_separation, summarize, write_qq_csv, Kde};
use rds_core::tree::{OffspringLaw, ReferralTree};

use crate::config::{ExperimentConfig, SeedConfig, TreeSpec};
use crate::error::{LabError, LabResult};
use crate::population::Population;

pub const THREADS_ENV: &str = "RDS_LAB_THREADS";
pub const ESTIMATES_HEADER: &str = "replicate,estimator,adjustment,t,n,seed_class,value";

/// RNG for one replicate: stream `replicate` of the master seed.
pub fn replicate_rng(master_seed: u64, replicate: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(replicate as u64);
    rng
}

/// Worker pool sized by `threads`, else by `RDS_LAB_THREADS`, else by rayon's default.
pub fn thread_pool(threads: Option<usize>) -> LabResult<rayon::ThreadPool> {
    let from_env = || {
        std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
    };
    let n = threads.or_else(from_env).unwrap_or(0);
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| LabError::Input(format!("thread pool: {e}")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRow {
    pub replicate: usize,
    pub kind: EstimatorKind,
    /// Requested generation, or the deepest generation of the full sample.
    pub t: usize,
    /// Requested generation; `None` for full-sample rows.
    pub generation: Option<usize>,
    pub n: usize,
    pub seed_class: String,
    pub value: f64,
}

pub fn write_rows<W: Write>(rows: &[EstimateRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{ESTIMATES_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.replicate,
            r.kind.base(),
            r.kind.adjustment(),
            r.t,
            r.n,
            r.seed_class,
            r.value
        )?;
    }
    Ok(())
}

/// Trait value at the seed, used to split replicates by seed class.
pub fn seed_class(sample: &RdsSample<f64>) -> String {
    format!("{}", sample.traits()[0])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Adjusted {
    Plain,
    Ipw,
    Vh,
}

/// Source of GLS weights: the closed form on 2-state chains, otherwise a
/// Cholesky solve against the covariance of the (adjusted) trait.
struct WeightPlan {
    closed_form: Option<f64>,
    kernels: Vec<(Adjusted, TreeCovariance<f64>)>,
}

#[derive(Default, Clone)]
struct WeightSet {
    plain: Option<GlsWeights<f64>>,
    ipw: Option<GlsWeights<f64>>,
    vh: Option<GlsWeights<f64>>,
}

impl WeightPlan {
    fn new(pop: &Population, kinds: &[EstimatorKind]) -> LabResult<Self> {
        if pop.state_count() == 2 {
            return Ok(Self {
                closed_form: pop.lambda2(),
                kernels: Vec::new(),
            });
        }
        let mut kernels = Vec::new();
        for (kind, which) in [
            (EstimatorKind::Gls, Adjusted::Plain),
            (EstimatorKind::GlsIpw, Adjusted::Ipw),
            (EstimatorKind::GlsVh, Adjusted::Vh),
        ] {
            if !kinds.contains(&kind) {
                continue;
            }
            let trait_values: Vec<f64> = match which {
                Adjusted::Plain => pop.traits.clone(),
                Adjusted::Ipw => pop
                    .traits
                    .iter()
                    .zip(&pop.state_degrees)
                    .map(|(y, d)| y * pop.degrees.mean_degree / d)
                    .collect(),
                Adjusted::Vh => pop.traits.iter().zip(&pop.state_degrees).map(|(y, d)| y / d).collect(),
            };
            kernels.push((which, TreeCovariance::new(&pop.spectrum, &trait_values)?));
        }
        Ok(Self {
            closed_form: None,
            kernels,
        })
    }

    fn weights(&self, tree: &ReferralTree) -> rds_core::Result<WeightSet> {
        if let Some(lambda) = self.closed_form {
            let w = closed_form_weights(tree, lambda)?;
            return Ok(WeightSet {
                plain: Some(w.clone()),
                ipw: Some(w.clone()),
                vh: Some(w),
            });
        }
        let mut set = WeightSet::default();
        for (which, kernel) in &self.kernels {
            let w = Some(kernel.weights(tree)?);
            match which {
                Adjusted::Plain => set.plain = w,
                Adjusted::Ipw => set.ipw = w,
                Adjusted::Vh => set.vh = w,
            }
        }
        Ok(set)
    }

    fn needed(&self, kinds: &[EstimatorKind]) -> bool {
        kinds
            .iter()
            .any(|k| matches!(k, EstimatorKind::Gls | EstimatorKind::GlsIpw | EstimatorKind::GlsVh))
    }
}

enum TreeSource {
    Fixed(Arc<ReferralTree>),
    ByDepth(OffspringLaw, usize),
    BySize(OffspringLaw, usize),
}

/// Immutable inputs shared by all replicates.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub population: Population,
    kinds: Vec<EstimatorKind>,
    tree: TreeSource,
    seed: SeedSpec<f64>,
    plan: WeightPlan,
    /// Weights for fixed trees, keyed by truncated tree size.
    fixed_weights: BTreeMap<usize, WeightSet>,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> LabResult<Self> {
        config.validate()?;
        let population = Population::build(&config.model, !config.sampling.replacement)?;
        let kinds = config.estimator_kinds()?;
        let tree = match &config.tree {
            TreeSpec::MTree { m, depth } => TreeSource::Fixed(Arc::new(ReferralTree::m_tree(*m, *depth)?)),
            TreeSpec::GaltonWatson {
                offspring,
                depth: Some(d),
                ..
            } => TreeSource::ByDepth(offspring.law(), *d),
            TreeSpec::GaltonWatson {
                offspring, size: Some(s), ..
            } => TreeSource::BySize(offspring.law(), *s),
            TreeSpec::GaltonWatson { .. } => unreachable!("validated"),
        };
        let seed = match &config.sampling.seed {
            SeedConfig::Stationary => SeedSpec::Stationary,
            SeedConfig::Uniform => SeedSpec::Distribution(vec![1.0 / population.state_count() as f64; population.state_count()]),
            SeedConfig::Fixed { state } => {
                if *state >= population.state_count() {
                    return Err(LabError::Config {
                        field: "sampling.seed.state".into(),
                        message: format!("state {state} out of range for {} states", population.state_count()),
                    });
                }
                SeedSpec::FixedNode(*state)
            }
        };
        let plan = WeightPlan::new(&population, &kinds)?;
        let mut fixed_weights = BTreeMap::new();
        if let TreeSource::Fixed(full) = &tree {
            if plan.needed(&kinds) {
                let mut trees = vec![full.as_ref().clone()];
                trees.extend(config.generations.iter().map(|&g| full.up_to_generation(g)));
                for t in trees {
                    if let std::collections::btree_map::Entry::Vacant(e) = fixed_weights.entry(t.len()) {
                        e.insert(plan.weights(&t)?);
                    }
                }
            }
        }
        Ok(Self {
            config,
            population,
            kinds,
            tree,
            seed,
            plan,
            fixed_weights,
        })
    }

    pub fn kinds(&self) -> &[EstimatorKind] {
        &self.kinds
    }

    /// The sample of replicate `r`.
    pub fn sample(&self, r: usize) -> rds_core::Result<RdsSample<f64>> {
        let mut rng = replicate_rng(self.config.seed, r);
        let pop = &self.population;
        if !self.config.sampling.replacement {
            let TreeSource::BySize(law, size) = &self.tree else {
                unreachable!("validated")
            };
            let graph = pop.graph.as_ref().expect("node-level population has a graph");
            return walk_without_replacement(
                graph,
                law,
                &self.seed,
                *size,
                self.config.sampling.max_restarts,
                &pop.traits,
                &mut rng,
            );
        }
        let tree = match &self.tree {
            TreeSource::Fixed(t) => t.clone(),
            TreeSource::ByDepth(law, d) => Arc::new(ReferralTree::galton_watson(law, *d, &mut rng)?),
            TreeSource::BySize(law, s) => Arc::new(ReferralTree::galton_watson_sized(law, *s, &mut rng)?),
        };
        WalkSampler::new(&pop.chain)
            .walk(tree, &self.seed, &pop.traits, &mut rng)?
            .with_state_degrees(&pop.state_degrees)
    }

    fn weights_for(&self, tree: &ReferralTree) -> rds_core::Result<WeightSet> {
        if !self.plan.needed(&self.kinds) {
            return Ok(WeightSet::default());
        }
        if let Some(w) = self.fixed_weights.get(&tree.len()) {
            return Ok(w.clone());
        }
        self.plan.weights(tree)
    }

    /// Every configured estimator on every requested truncation of `sample`.
    pub fn evaluate(&self, sample: &RdsSample<f64>, replicate: usize) -> rds_core::Result<Vec<EstimateRow>> {
        let class = seed_class(sample);
        let mut views: Vec<(Option<usize>, RdsSample<f64>)> = Vec::new();
        if self.config.generations.is_empty() {
            views.push((None, sample.clone()));
        } else {
            for &g in &self.config.generations {
                views.push((Some(g), sample.up_to_generation(g)));
            }
        }
        let mut rows = Vec::with_capacity(views.len() * self.kinds.len());
        for (generation, s) in views {
            let weights = self.weights_for(s.tree())?;
            let degrees = Some(&self.population.degrees);
            for &kind in &self.kinds {
                let missing = || rds_core::Error::InvalidParameter(format!("no GLS weights prepared for {kind}"));
                let record = match kind {
                    EstimatorKind::Mean => sample_mean(&s)?,
                    EstimatorKind::Ipw => ipw(&s, degrees)?,
                    EstimatorKind::Vh => vh(&s)?,
                    EstimatorKind::Gls => gls(&s, weights.plain.as_ref().ok_or_else(missing)?)?,
                    EstimatorKind::GlsIpw => gls_ipw(&s, weights.ipw.as_ref().ok_or_else(missing)?, degrees)?,
                    EstimatorKind::GlsVh => gls_vh(&s, weights.vh.as_ref().ok_or_else(missing)?)?,
                    EstimatorKind::SbmFgls => sbm_fgls(&s)?,
                    EstimatorKind::SbmFglsVh => sbm_fgls_vh(&s)?,
                };
                rows.push(EstimateRow {
                    replicate,
                    kind,
                    t: generation.unwrap_or(record.t),
                    generation,
                    n: record.n,
                    seed_class: class.clone(),
                    value: record.value,
                });
            }
        }
        Ok(rows)
    }

    pub fn run_replicate(&self, r: usize) -> LabResult<Vec<EstimateRow>> {
        let wrap = |source| LabError::Replicate { replicate: r, source };
        let sample = self.sample(r).map_err(wrap)?;
        self.evaluate(&sample, r).map_err(wrap)
    }

    /// All replicates on `pool`, ordered by replicate index.
    pub fn run(&self, pool: &rayon::ThreadPool) -> LabResult<Vec<EstimateRow>> {
        let per_replicate: Vec<Vec<EstimateRow>> = pool.install(|| {
            (0..self.config.replicates)
                .into_par_iter()
                .map(|r| self.run_replicate(r))
                .collect::<LabResult<_>>()
        })?;
        Ok(per_replicate.into_iter().flatten().collect())
    }

    pub fn samples(&self, pool: &rayon::ThreadPool) -> LabResult<Vec<RdsSample<f64>>> {
        pool.install(|| {
            (0..self.config.replicates)
                .into_par_iter()
                .map(|r| self.sample(r).map_err(|source| LabError::Replicate { replicate: r, source }))
                .collect()
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PopulationSummary {
    pub states: usize,
    pub lambda2: Option<f64>,
    pub lambda2_repeated: bool,
    pub mean_offspring: f64,
    pub regime: Option<String>,
    pub mu_true: f64,
    pub stationary_mean: f64,
    pub lambda_tilde: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GroupSummary {
    pub estimator: String,
    pub adjustment: String,
    /// Requested generation; absent for full samples.
    pub generation: Option<usize>,
    pub seed_class: String,
    pub count: usize,
    pub mean: Option<f64>,
    pub variance: Option<f64>,
    pub ks_normal: Option<f64>,
    pub modes: Vec<f64>,
    pub kde_file: Option<String>,
    pub qq_file: Option<String>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SeparationSummary {
    pub estimator: String,
    pub adjustment: String,
    pub generation: Option<usize>,
    pub class_a: String,
    pub class_b: String,
    pub mean_a: f64,
    pub mean_b: f64,
    pub pooled_se: f64,
    pub z: f64,
    pub separated: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub version: u32,
    pub replicates: usize,
    pub seed: u64,
    pub population: PopulationSummary,
    pub groups: Vec<GroupSummary>,
    pub separation: Vec<SeparationSummary>,
}

/// Rows, summary and the curves behind the summary's file names.
pub struct ExperimentResult {
    pub rows: Vec<EstimateRow>,
    pub summary: Summary,
    curves: Vec<(String, Kde, Vec<(f64, f64)>)>,
}

type GroupKey = (EstimatorKind, Option<usize>);

fn group_label(kind: EstimatorKind, generation: Option<usize>, class: &str) -> String {
    let t = generation.map_or_else(|| "full".to_string(), |g| format!("t{g}"));
    let class = if class == "all" { "all".to_string() } else { format!("seed{class}") };
    format!("{}_{t}_{class}", kind.name())
}

pub fn summarize_rows(experiment: &Experiment, rows: Vec<EstimateRow>) -> ExperimentResult {
    let pop = &experiment.population;
    let m = experiment.config.mean_offspring();
    let lambda2 = pop.lambda2();
    let population = PopulationSummary {
        states: pop.state_count(),
        lambda2,
        lambda2_repeated: pop.spectrum.second_eigenvalue_repeated(),
        mean_offspring: m,
        regime: lambda2.map(|l| classify_regime(m, l).to_string()),
        mu_true: pop.mu_true,
        stationary_mean: pop.stationary_mean,
        lambda_tilde: pop.lambda_tilde,
    };
    let mut grouped: BTreeMap<GroupKey, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    for r in &rows {
        let classes = grouped.entry((r.kind, r.generation)).or_default();
        classes.entry("all".to_string()).or_default().push(r.value);
        classes.entry(r.seed_class.clone()).or_default().push(r.value);
    }
    let mut groups = Vec::new();
    let mut separation = Vec::new();
    let mut curves = Vec::new();
    for ((kind, generation), classes) in &grouped {
        for (class, values) in classes {
            let label = group_label(*kind, *generation, class);
            let mut g = GroupSummary {
                estimator: kind.base().to_string(),
                adjustment: kind.adjustment().to_string(),
                generation: *generation,
                seed_class: class.clone(),
                count: values.len(),
                mean: None,
                variance: None,
                ks_normal: None,
                modes: Vec::new(),
                kde_file: None,
                qq_file: None,
                note: None,
            };
            match summarize(values) {
                Ok(s) => {
                    g.mean = Some(s.mean);
                    g.variance = Some(s.variance);
                    g.ks_normal = Some(s.ks_normal);
                    g.modes = s.modes.clone();
                    g.kde_file = Some(format!("kde_{label}.csv"));
                    g.qq_file = Some(format!("qq_{label}.csv"));
                    curves.push((label, s.kde, s.qq));
                }
                Err(e) => {
                    if let Some(&first) = values.first() {
                        g.mean = Some(values.iter().sum::<f64>() / values.len() as f64);
                        if values.iter().all(|&v| v == first) {
                            g.variance = Some(0.0);
                        }
                    }
                    g.note = Some(e.to_string());
                }
            }
            groups.push(g);
        }
        let seeded: Vec<(&String, &Vec<f64>)> = classes.iter().filter(|(c, _)| c.as_str() != "all").collect();
        if let [(a, va), (b, vb)] = seeded.as_slice() {
            if let Ok(rep) = mixture_separation(va, vb) {
                separation.push(SeparationSummary {
                    estimator: kind.base().to_string(),
                    adjustment: kind.adjustment().to_string(),
                    generation: *generation,
                    class_a: (*a).clone(),
                    class_b: (*b).clone(),
                    mean_a: rep.mean_a,
                    mean_b: rep.mean_b,
                    pooled_se: rep.pooled_se,
                    z: rep.z,
                    separated: rep.separated,
                });
            }
        }
    }
    ExperimentResult {
        rows,
        summary: Summary {
            version: crate::config::CONFIG_VERSION,
            replicates: experiment.config.replicates,
            seed: experiment.config.seed,
            population,
            groups,
            separation,
        },
        curves,
    }
}

/// Builds, runs and summarizes an experiment.
pub fn run_experiment(config: ExperimentConfig, threads: Option<usize>) -> LabResult<ExperimentResult> {
    let experiment = Experiment::new(config)?;
    let pool = thread_pool(threads)?;
    let rows = experiment.run(&pool)?;
    Ok(summarize_rows(&experiment, rows))
}

/// Writes into a fresh sibling temp directory, then swaps it in for `out`.
pub fn write_atomically(out: &Path, fill: impl FnOnce(&Path) -> LabResult<()>) -> LabResult<()> {
    let parent = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => Path::new(".").to_path_buf(),
    };
    fs::create_dir_all(&parent).map_err(|e| LabError::io(&parent, e))?;
    let tmp = tempfile::Builder::new()
        .prefix(".rds-lab-")
        .tempdir_in(&parent)
        .map_err(|e| LabError::io(&parent, e))?;
    fill(tmp.path())?;
    if out.exists() {
        fs::remove_dir_all(out).map_err(|e| LabError::io(out, e))?;
    }
    let kept = tmp.keep();
    fs::rename(&kept, out).map_err(|e| LabError::io(out, e))?;
    Ok(())
}

fn create(dir: &Path, name: &str) -> LabResult<BufWriter<File>> {
    let path = dir.join(name);
    File::create(&path)
        .map(BufWriter::new)
        .map_err(|e| LabError::io(&path, e))
}

impl ExperimentResult {
    pub fn write_to(&self, out: &Path, config: &ExperimentConfig) -> LabResult<()> {
        write_atomically(out, |dir| {
            let mut f = create(dir, "estimates.csv")?;
            let path = dir.join("estimates.csv");
            write_rows(&self.rows, &mut f).map_err(|e| LabError::io(&path, e))?;
            f.flush().map_err(|e| LabError::io(&path, e))?;

            let path = dir.join("summary.json");
            let mut f = create(dir, "summary.json")?;
            serde_json::to_writer_pretty(&mut f, &self.summary).map_err(|e| LabError::Input(e.to_string()))?;
            writeln!(f).and_then(|_| f.flush()).map_err(|e| LabError::io(&path, e))?;

            let path = dir.join("config.toml");
            fs::write(&path, config.to_toml_string()).map_err(|e| LabError::io(&path, e))?;

            for (label, kde, qq) in &self.curves {
                let name = format!("kde_{label}.csv");
                let mut f = create(dir, &name)?;
                kde.write_csv(&mut f)?;
                f.flush().map_err(|e| LabError::io(&dir.join(&name), e))?;
                let name = format!("qq_{label}.csv");
                let mut f = create(dir, &name)?;
                write_qq_csv(qq, &mut f)?;
                f.flush().map_err(|e| LabError::io(&dir.join(&name), e))?;
            }
            Ok(())
        })
    }

    /// Values of one estimator, optionally restricted to a seed class.
    pub fn values(&self, kind: EstimatorKind, generation: Option<usize>, class: Option<&str>) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.kind == kind && r.generation == generation && class.is_none_or(|c| r.seed_class == c))
            .map(|r| r.value)
            .collect()
    }
}

/// One CSV per replicate under `out/samples/`.
pub fn write_samples(samples: &[RdsSample<f64>], out: &Path) -> LabResult<()> {
    write_atomically(out, |dir| {
        let sub = dir.join("samples");
        fs::create_dir_all(&sub).map_err(|e| LabError::io(&sub, e))?;
        for (r, s) in samples.iter().enumerate() {
            let name = format!("replicate_{r}.csv");
            let mut f = create(&sub, &name)?;
            s.write_csv(&mut f)?;
            f.flush().map_err(|e| LabError::io(&sub.join(&name), e))?;
        }
        Ok(())
    })
}
