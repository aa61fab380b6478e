//! Synthetic school friendship networks with grade communities and a binary
//! school-status trait (0 = lower grades, 1 = upper grades).

use std::io::Write;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use rds_core::graph::WeightedGraph;
use rds_core::spectral::bottleneck;

use crate::error::{LabError, LabResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSchoolSpec {
    pub nodes: usize,
    /// Even number of grades; the upper half forms the second school.
    #[serde(default = "default_grades")]
    pub grades: usize,
    /// Friends nominated per student before symmetrization.
    #[serde(default = "default_nominations")]
    pub nominations: usize,
    /// Probability a nomination stays in the nominator's grade.
    pub within_grade: f64,
    /// Probability a nomination crosses to the other school.
    pub cross_school: f64,
    /// Generator seed, independent of the experiment seed.
    #[serde(default)]
    pub seed: u64,
}

fn default_grades() -> usize {
    6
}

fn default_nominations() -> usize {
    10
}

fn invalid(field: &str, message: impl Into<String>) -> LabError {
    LabError::Config {
        field: field.to_string(),
        message: message.into(),
    }
}

impl SyntheticSchoolSpec {
    pub fn validate(&self) -> LabResult<()> {
        if self.grades < 2 || self.grades % 2 != 0 {
            return Err(invalid("grades", format!("{} must be even and at least 2", self.grades)));
        }
        let per_grade = self.nodes / self.grades;
        if per_grade < 2 {
            return Err(invalid("nodes", "need at least two students per grade"));
        }
        if self.nominations == 0 || self.nominations >= per_grade {
            return Err(invalid("nominations", format!("must be in 1..{per_grade}")));
        }
        for (name, v) in [("within_grade", self.within_grade), ("cross_school", self.cross_school)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(name, format!("{v} is outside [0, 1]")));
            }
        }
        if self.within_grade + self.cross_school > 1.0 + 1e-12 {
            return Err(invalid("cross_school", "within_grade + cross_school exceeds 1"));
        }
        if self.grades == 2 && self.within_grade + self.cross_school < 1.0 - 1e-12 {
            return Err(invalid("within_grade", "with two grades, within_grade + cross_school must be 1"));
        }
        Ok(())
    }

    pub fn generate(&self) -> LabResult<School> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let g = self.grades;
        let grade_of: Vec<usize> = (0..self.nodes).map(|i| i * g / self.nodes).collect();
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); g];
        for (i, &gr) in grade_of.iter().enumerate() {
            members[gr].push(i);
        }
        let half = g / 2;
        let school = |gr: usize| usize::from(gr >= half);
        let mut edges = Vec::with_capacity(self.nodes * self.nominations);
        for (i, &gr) in grade_of.iter().enumerate() {
            for _ in 0..self.nominations {
                let u: f64 = rng.random();
                let target_grade = if u < self.within_grade {
                    gr
                } else if u < self.within_grade + self.cross_school {
                    let other = 1 - school(gr);
                    other * half + rng.random_range(0..half)
                } else if half == 1 {
                    gr
                } else {
                    // another grade in the same school
                    let base = school(gr) * half;
                    let mut pick = base + rng.random_range(0..half - 1);
                    if pick >= gr {
                        pick += 1;
                    }
                    pick
                };
                let pool = &members[target_grade];
                let j = loop {
                    let cand = pool[sample(&mut rng, pool.len(), 1).index(0)];
                    if cand != i {
                        break cand;
                    }
                };
                edges.push((i, j, 1.0));
            }
        }
        let full = WeightedGraph::from_edges(self.nodes, edges)?;
        let lcc = full.largest_connected_component()?;
        let traits = lcc
            .original_ids
            .iter()
            .map(|&i| school(grade_of[i]) as f64)
            .collect();
        let grades = lcc.original_ids.iter().map(|&i| grade_of[i]).collect();
        Ok(School {
            graph: lcc.graph,
            traits,
            grades,
        })
    }
}

/// A generated network restricted to its largest component.
#[derive(Debug, Clone)]
pub struct School {
    pub graph: WeightedGraph<f64>,
    pub traits: Vec<f64>,
    pub grades: Vec<usize>,
}

impl School {
    pub fn lambda_tilde(&self) -> LabResult<f64> {
        Ok(bottleneck(&self.graph, &self.traits)?.lambda_tilde)
    }

    pub fn write_traits<W: Write>(&self, out: W) -> LabResult<()> {
        write_traits(&self.graph, &self.traits, out)
    }
}

/// `node,trait` CSV keyed by graph label.
pub fn write_traits<W: Write>(graph: &WeightedGraph<f64>, traits: &[f64], out: W) -> LabResult<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| LabError::Input(e.to_string());
    w.write_record(["node", "trait"]).map_err(io)?;
    for (i, y) in traits.iter().enumerate() {
        w.write_record([graph.label(i), &y.to_string()]).map_err(io)?;
    }
    w.flush().map_err(|e| LabError::Input(e.to_string()))?;
    Ok(())
}
