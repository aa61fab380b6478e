use std::fs::{self, File};
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use rds_core::estimators::{
    closed_form_weights, gls, gls_ipw, gls_vh, ipw, sample_mean, sbm_fgls, sbm_fgls_vh, vh, write_estimates_csv,
    EstimateRecord, EstimatorKind, PopulationDegrees,
};
use rds_core::graph::{read_edge_list, TransitionMatrix, WeightedGraph};
use rds_core::sampler::RdsSample;
use rds_core::spectral::{bottleneck, classify_regime, decompose};
use rds_lab::harness::{run_experiment, thread_pool, write_atomically, write_samples, Experiment, THREADS_ENV};
use rds_lab::population::read_traits;
use rds_lab::{ExperimentConfig, SyntheticSchoolSpec};

#[derive(Parser)]
#[command(name = "rds-lab", version, about = "Respondent-driven sampling experiments")]
struct Cli {
    /// Master RNG seed (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for replicate loops.
    #[arg(long, global = true, env = THREADS_ENV)]
    threads: Option<usize>,
    /// Output directory (overrides the config file).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Eigenvalues of the random walk on an edge list, plus the bottleneck
    /// statistic and regime when traits and a branching number are given.
    Spectrum {
        edgelist: PathBuf,
        /// `node,trait` CSV.
        #[arg(long)]
        traits: Option<PathBuf>,
        /// Mean offspring count used to classify the regime.
        #[arg(long)]
        m: Option<f64>,
    },
    /// Draws the configured samples and writes one CSV per replicate.
    Simulate { config: PathBuf },
    /// Evaluates estimators on a sample CSV.
    Estimate {
        sample: PathBuf,
        /// Comma-separated estimator names; defaults to every estimator the
        /// inputs support.
        #[arg(long, value_delimiter = ',')]
        estimators: Option<Vec<String>>,
        /// Second eigenvalue for closed-form GLS weights.
        #[arg(long)]
        lambda2: Option<f64>,
        /// Population mean degree vol(G)/N, needed by IPW.
        #[arg(long)]
        mean_degree: Option<f64>,
    },
    /// Runs the full replicate harness.
    Experiment { config: PathBuf },
    /// Generates a synthetic school network from a TOML spec.
    SynthSchool { spec: PathBuf },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Spectrum { edgelist, traits, m } => spectrum(&cli, edgelist, traits.as_deref(), *m),
        Command::Simulate { config } => simulate(&cli, config),
        Command::Estimate {
            sample,
            estimators,
            lambda2,
            mean_degree,
        } => estimate(&cli, sample, estimators.as_deref(), *lambda2, *mean_degree),
        Command::Experiment { config } => experiment(&cli, config),
        Command::SynthSchool { spec } => synth_school(&cli, spec),
    }
}

fn load_config(cli: &Cli, path: &Path) -> Result<(ExperimentConfig, PathBuf)> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let out = cli
        .out
        .clone()
        .or_else(|| config.output.clone())
        .context("no output directory: pass --out or set `output` in the config")?;
    config.output = Some(out.clone());
    Ok((config, out))
}

fn spectrum(cli: &Cli, edgelist: &Path, traits: Option<&Path>, m: Option<f64>) -> Result<()> {
    let file = File::open(edgelist).with_context(|| format!("opening {}", edgelist.display()))?;
    let graph: WeightedGraph<f64> = read_edge_list(io::BufReader::new(file))?;
    let chain = TransitionMatrix::from_graph(&graph)?;
    let dec = decompose(&chain)?;
    let mut report = String::new();
    report.push_str(&format!("states: {}\n", dec.len()));
    let values: Vec<String> = dec.eigenvalues().iter().map(|l| l.to_string()).collect();
    report.push_str(&format!("eigenvalues: {}\n", values.join(" ")));
    if dec.len() > 1 {
        report.push_str(&format!("lambda2: {}\n", dec.lambda2()));
        if dec.second_eigenvalue_repeated() {
            report.push_str("lambda2_repeated: true\n");
        }
        if let Some(m) = m {
            report.push_str(&format!("regime: {}\n", classify_regime(m, dec.lambda2())));
        }
    }
    if let Some(path) = traits {
        let y = read_traits(path, &graph)?;
        report.push_str(&format!("lambda_tilde: {}\n", bottleneck(&graph, &y)?.lambda_tilde));
    }
    print!("{report}");
    if let Some(out) = &cli.out {
        write_atomically(out, |dir| {
            let mut csv = Vec::new();
            dec.write_csv(&mut csv)?;
            fs::write(dir.join("spectrum.csv"), csv).map_err(|e| rds_lab::LabError::io(dir, e))?;
            fs::write(dir.join("spectrum.txt"), &report).map_err(|e| rds_lab::LabError::io(dir, e))?;
            Ok(())
        })?;
    }
    Ok(())
}

fn simulate(cli: &Cli, path: &Path) -> Result<()> {
    let (config, out) = load_config(cli, path)?;
    let experiment = Experiment::new(config)?;
    let samples = experiment.samples(&thread_pool(cli.threads)?)?;
    write_samples(&samples, &out)?;
    eprintln!("wrote {} samples to {}", samples.len(), out.join("samples").display());
    Ok(())
}

/// Estimators computable from a sample file and the optional inputs.
fn estimate_sample(
    sample: &RdsSample<f64>,
    kinds: &[EstimatorKind],
    lambda2: Option<f64>,
    mean_degree: Option<f64>,
) -> Result<Vec<EstimateRecord<f64>>> {
    let degrees = match (mean_degree, sample.degrees()) {
        (Some(mean), Some(d)) => {
            let states = sample.states().iter().copied().max().unwrap_or(0) + 1;
            let mut per_state = vec![0.0; states];
            for (&x, &deg) in sample.states().iter().zip(d) {
                per_state[x] = deg;
            }
            Some(PopulationDegrees {
                per_state,
                mean_degree: mean,
            })
        }
        (Some(_), None) => bail!("IPW needs a degree column in the sample"),
        (None, _) => None,
    };
    let weights = lambda2.map(|l| closed_form_weights(sample.tree(), l)).transpose()?;
    let need_weights = || weights.as_ref().context("GLS estimators need --lambda2");
    kinds
        .iter()
        .map(|&kind| {
            Ok(match kind {
                EstimatorKind::Mean => sample_mean(sample)?,
                EstimatorKind::Ipw => ipw(sample, degrees.as_ref())?,
                EstimatorKind::Vh => vh(sample)?,
                EstimatorKind::Gls => gls(sample, need_weights()?)?,
                EstimatorKind::GlsIpw => gls_ipw(sample, need_weights()?, degrees.as_ref())?,
                EstimatorKind::GlsVh => gls_vh(sample, need_weights()?)?,
                EstimatorKind::SbmFgls => sbm_fgls(sample)?,
                EstimatorKind::SbmFglsVh => sbm_fgls_vh(sample)?,
            })
        })
        .collect()
}

fn default_kinds(sample: &RdsSample<f64>, lambda2: Option<f64>, mean_degree: Option<f64>) -> Vec<EstimatorKind> {
    let has_degrees = sample.degrees().is_some();
    let binary = sample.traits().iter().all(|&y| y == 0.0 || y == 1.0);
    EstimatorKind::ALL
        .into_iter()
        .filter(|k| match k {
            EstimatorKind::Mean => true,
            EstimatorKind::Ipw => has_degrees && mean_degree.is_some(),
            EstimatorKind::Vh => has_degrees,
            EstimatorKind::Gls => lambda2.is_some(),
            EstimatorKind::GlsIpw => lambda2.is_some() && has_degrees && mean_degree.is_some(),
            EstimatorKind::GlsVh => lambda2.is_some() && has_degrees,
            EstimatorKind::SbmFgls => binary && sample.len() > 2,
            EstimatorKind::SbmFglsVh => binary && sample.len() > 2 && has_degrees,
        })
        .collect()
}

fn estimate(
    cli: &Cli,
    path: &Path,
    names: Option<&[String]>,
    lambda2: Option<f64>,
    mean_degree: Option<f64>,
) -> Result<()> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let sample = RdsSample::<f64>::read_csv(BufReader::new(file))?;
    let kinds = match names {
        Some(names) => names
            .iter()
            .map(|n| EstimatorKind::parse(n.trim()).with_context(|| format!("unknown estimator {n:?}")))
            .collect::<Result<Vec<_>>>()?,
        None => default_kinds(&sample, lambda2, mean_degree),
    };
    let records = estimate_sample(&sample, &kinds, lambda2, mean_degree)?;
    let mut buf = Vec::new();
    write_estimates_csv(&records, &mut buf)?;
    match &cli.out {
        Some(out) => write_atomically(out, |dir| {
            fs::write(dir.join("estimates.csv"), &buf).map_err(|e| rds_lab::LabError::io(dir, e))
        })?,
        None => io::stdout().write_all(&buf)?,
    }
    Ok(())
}

fn experiment(cli: &Cli, path: &Path) -> Result<()> {
    let (config, out) = load_config(cli, path)?;
    let result = run_experiment(config.clone(), cli.threads)?;
    result.write_to(&out, &config)?;
    eprintln!(
        "{} replicates, {} estimates written to {}",
        config.replicates,
        result.rows.len(),
        out.display()
    );
    Ok(())
}

fn synth_school(cli: &Cli, path: &Path) -> Result<()> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut spec: SyntheticSchoolSpec = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if let Some(seed) = cli.seed {
        spec.seed = seed;
    }
    let out = cli.out.clone().context("synth-school needs --out")?;
    let school = spec.generate()?;
    let lambda_tilde = school.lambda_tilde()?;
    let lambda2 = decompose(&TransitionMatrix::from_graph(&school.graph)?)?.lambda2();
    write_atomically(&out, |dir| {
        let io_err = |e| rds_lab::LabError::io(dir, e);
        let mut edges = Vec::new();
        school.graph.write_edge_list(&mut edges)?;
        fs::write(dir.join("edges.txt"), edges).map_err(io_err)?;
        let mut traits = Vec::new();
        school.write_traits(&mut traits)?;
        fs::write(dir.join("traits.csv"), traits).map_err(io_err)?;
        let info = serde_json::json!({
            "nodes": school.graph.node_count(),
            "edges": school.graph.edge_count(),
            "lambda_tilde": lambda_tilde,
            "lambda2": lambda2,
            "spec": spec,
        });
        fs::write(dir.join("school.json"), format!("{info:#}\n")).map_err(io_err)?;
        Ok(())
    })?;
    println!(
        "nodes: {}\nedges: {}\nlambda_tilde: {lambda_tilde}\nlambda2: {lambda2}",
        school.graph.node_count(),
        school.graph.edge_count()
    );
    Ok(())
}
