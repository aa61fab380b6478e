//! Everything fixed across replicates: the chain the walk runs on, its
//! spectrum, traits and degrees.

use std::collections::HashMap;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use rds_core::blockmodel::{BlockModel, TwoBlockParams};
use rds_core::estimators::PopulationDegrees;
use rds_core::graph::{read_edge_list, TransitionMatrix, WeightedGraph};
use rds_core::spectral::{bottleneck, decompose, SpectralDecomposition};
use rds_core::{DMatrix, Real};

use crate::config::ModelSpec;
use crate::error::{LabError, LabResult};

#[derive(Debug, Clone)]
pub struct Population {
    pub chain: TransitionMatrix<f64>,
    pub spectrum: SpectralDecomposition<f64>,
    /// Trait per walk state.
    pub traits: Vec<f64>,
    /// Degree per walk state (block degrees for block-level walks).
    pub state_degrees: Vec<f64>,
    pub degrees: PopulationDegrees<f64>,
    /// Node-level graph, present whenever one exists.
    pub graph: Option<WeightedGraph<f64>>,
    /// Population mean over nodes.
    pub mu_true: f64,
    pub stationary_mean: f64,
    pub lambda_tilde: Option<f64>,
}

impl Population {
    /// Builds the population. `node_level` forces a walk over nodes (needed
    /// without replacement); otherwise block models walk over blocks.
    pub fn build(model: &ModelSpec, node_level: bool) -> LabResult<Self> {
        match model {
            ModelSpec::TwoBlock {
                p,
                q,
                traits,
                nodes_per_block,
            } => {
                let bm = BlockModel::two_block(TwoBlockParams::new(*p, *q)?, *traits)?;
                Self::from_block_model(bm, *nodes_per_block, node_level)
            }
            ModelSpec::Block {
                matrix,
                traits,
                nodes_per_block,
            } => {
                let k = matrix.len();
                let flat: Vec<f64> = matrix.iter().flatten().copied().collect();
                let bm = BlockModel::new(DMatrix::from_row_slice(k, k, &flat), traits.clone())?;
                Self::from_block_model(bm, *nodes_per_block, node_level)
            }
            ModelSpec::EdgeList { path, traits } => {
                let file = File::open(path).map_err(|e| LabError::io(path, e))?;
                let graph: WeightedGraph<f64> = read_edge_list(BufReader::new(file))?;
                let lcc = graph.largest_connected_component()?.graph;
                let y = read_traits(traits, &lcc)?;
                Self::from_graph(lcc, y)
            }
            ModelSpec::School(spec) => {
                let school = spec.generate()?;
                Self::from_graph(school.graph, school.traits)
            }
        }
    }

    fn from_block_model(bm: BlockModel<f64>, nodes_per_block: Option<usize>, node_level: bool) -> LabResult<Self> {
        let bm = bm.with_expansion(nodes_per_block.unwrap_or(1))?;
        let graph = match nodes_per_block {
            Some(_) => Some(bm.expand_graph()?),
            None => None,
        };
        let lambda_tilde = match &graph {
            Some(g) => bottleneck(g, &bm.node_traits()?).ok().map(|b| b.lambda_tilde),
            None => None,
        };
        if node_level {
            let g = graph.ok_or_else(|| LabError::Input("node-level walk needs nodes_per_block".into()))?;
            return Self::from_graph(g, bm.node_traits()?);
        }
        let chain = bm.chain().clone();
        let spectrum = decompose(&chain)?;
        let block_degrees = bm.block_degrees()?;
        let stationary_mean = chain.stationary_mean(bm.traits());
        Ok(Self {
            spectrum,
            traits: bm.traits().to_vec(),
            degrees: PopulationDegrees::from_block_degrees(block_degrees.clone()),
            state_degrees: block_degrees,
            graph,
            mu_true: bm.population_mean(),
            stationary_mean,
            lambda_tilde,
            chain,
        })
    }

    pub fn from_graph(graph: WeightedGraph<f64>, traits: Vec<f64>) -> LabResult<Self> {
        if traits.len() != graph.node_count() {
            return Err(LabError::Input(format!(
                "{} traits for {} nodes",
                traits.len(),
                graph.node_count()
            )));
        }
        let chain = TransitionMatrix::from_graph(&graph)?;
        let spectrum = decompose(&chain)?;
        let mu_true = traits.iter().sum::<f64>() / traits.len() as f64;
        let stationary_mean = chain.stationary_mean(&traits);
        let lambda_tilde = bottleneck(&graph, &traits).ok().map(|b| b.lambda_tilde);
        Ok(Self {
            spectrum,
            state_degrees: graph.degrees(),
            degrees: PopulationDegrees::from_graph(&graph),
            traits,
            mu_true,
            stationary_mean,
            lambda_tilde,
            graph: Some(graph),
            chain,
        })
    }

    pub fn state_count(&self) -> usize {
        self.traits.len()
    }

    pub fn lambda2(&self) -> Option<f64> {
        (self.spectrum.len() > 1).then(|| self.spectrum.lambda2().as_f64())
    }
}

/// Reads a `node,trait` CSV and orders the values by graph id. Every graph
/// node needs a value; extra rows (nodes outside the component) are ignored.
pub fn read_traits(path: &Path, graph: &WeightedGraph<f64>) -> LabResult<Vec<f64>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| LabError::Input(format!("{}: {e}", path.display())))?;
    let mut by_label: HashMap<String, f64> = HashMap::new();
    for (line, row) in reader.records().enumerate() {
        let row = row.map_err(|e| LabError::Input(format!("{}: {e}", path.display())))?;
        let (Some(node), Some(value)) = (row.get(0), row.get(1)) else {
            return Err(LabError::Input(format!("{}: row {} needs node,trait", path.display(), line + 2)));
        };
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| LabError::Input(format!("{}: row {}: bad trait {value:?}", path.display(), line + 2)))?;
        by_label.insert(node.trim().to_string(), value);
    }
    graph
        .labels()
        .iter()
        .map(|label| {
            by_label
                .get(label)
                .copied()
                .ok_or_else(|| LabError::Input(format!("{}: no trait for node {label:?}", path.display())))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::school::write_traits;

    #[test]
    fn block_level_population() {
        let model = ModelSpec::TwoBlock {
            p: 0.95,
            q: 0.85,
            traits: [1.0, 0.0],
            nodes_per_block: Some(3),
        };
        let pop = Population::build(&model, false).unwrap();
        assert_eq!(pop.state_count(), 2);
        assert!((pop.lambda2().unwrap() - 0.8).abs() < 1e-12);
        assert!((pop.stationary_mean - 0.75).abs() < 1e-12);
        assert!((pop.mu_true - 0.5).abs() < 1e-12);
        assert!((pop.state_degrees[0] / pop.state_degrees[1] - 3.0).abs() < 1e-12);
        assert!(pop.graph.is_some());
    }

    #[test]
    fn node_level_population_matches_block_level() {
        let model = ModelSpec::TwoBlock {
            p: 0.9,
            q: 0.7,
            traits: [1.0, 0.0],
            nodes_per_block: Some(4),
        };
        let block = Population::build(&model, false).unwrap();
        let node = Population::build(&model, true).unwrap();
        assert_eq!(node.state_count(), 8);
        assert!((node.lambda2().unwrap() - block.lambda2().unwrap()).abs() < 1e-9);
        assert!((node.stationary_mean - block.stationary_mean).abs() < 1e-12);
        assert!((node.mu_true - block.mu_true).abs() < 1e-12);
    }

    #[test]
    fn node_level_needs_expansion() {
        let model = ModelSpec::TwoBlock {
            p: 0.9,
            q: 0.7,
            traits: [1.0, 0.0],
            nodes_per_block: None,
        };
        assert!(Population::build(&model, true).is_err());
    }

    #[test]
    fn edge_list_population_reads_traits_by_label() {
        let dir = tempfile::tempdir().unwrap();
        let edges = dir.path().join("g.txt");
        std::fs::write(&edges, "a b\nb c\nc a\nx y\n").unwrap();
        let g: WeightedGraph<f64> = read_edge_list(&b"a b\nb c\nc a\n"[..]).unwrap();
        let traits = dir.path().join("t.csv");
        let mut buf = Vec::new();
        write_traits(&g, &[1.0, 0.0, 0.0], &mut buf).unwrap();
        let mut text = String::from_utf8(buf).unwrap();
        text.push_str("x,1\ny,1\n");
        std::fs::write(&traits, text).unwrap();
        let pop = Population::build(&ModelSpec::EdgeList { path: edges, traits: traits.clone() }, false).unwrap();
        assert_eq!(pop.state_count(), 3);
        assert!((pop.mu_true - 1.0 / 3.0).abs() < 1e-12);

        std::fs::write(&traits, "node,trait\na,1\n").unwrap();
        assert!(read_traits(&traits, &g).is_err());
    }
}
