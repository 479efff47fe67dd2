//! Ground-truth particle systems and the evolving scenario streams built on them.
//!
//! Two systems are provided. In the springs system, connected agent pairs
//! are joined by linear springs. In the charged system every pair interacts
//! through an inverse-square force whose sign follows the product of the
//! two charges. Both run in a 2-D box with reflective walls and are
//! integrated with velocity Verlet at a fine internal step, then subsampled.

mod io;
mod scenario;
mod sim;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use io::{read_trajectory_jsonl, write_trajectory_jsonl, TrajectoryHeader};
pub use scenario::{
    make_scenario_stream, samples_from_trajectory, window_count, DynamicsSchedule, Sample,
    ScenarioConfig, ScenarioStream, Segment,
};
pub use sim::{simulate, simulate_charged, simulate_springs, AgentState, SimConfig, Trajectory};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemKind {
    Springs,
    Charged,
}

impl SystemKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SystemKind::Springs => "springs",
            SystemKind::Charged => "charged",
        }
    }
}

impl std::str::FromStr for SystemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "springs" => Ok(SystemKind::Springs),
            "charged" => Ok(SystemKind::Charged),
            other => Err(Error::Config(format!(
                "unknown system `{other}` (expected springs or charged)"
            ))),
        }
    }
}

/// Which charged pairs count as edges in the ground truth.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChargeLabeling {
    /// Opposite charges (`q_i q_j < 0`).
    #[default]
    Attract,
    /// Like charges (`q_i q_j > 0`).
    Repel,
}

impl std::str::FromStr for ChargeLabeling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attract" => Ok(ChargeLabeling::Attract),
            "repel" => Ok(ChargeLabeling::Repel),
            other => Err(Error::Config(format!(
                "unknown charge labeling `{other}` (expected attract or repel)"
            ))),
        }
    }
}

impl ChargeLabeling {
    pub fn as_str(self) -> &'static str {
        match self {
            ChargeLabeling::Attract => "attract",
            ChargeLabeling::Repel => "repel",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "system", rename_all = "lowercase")]
pub enum SystemParams {
    Springs { k: f64 },
    Charged { k_e: f64, charges: Vec<f64> },
}

/// Binary interaction matrix produced by a simulator, plus the physical
/// parameters that generated it. Used for force computation and evaluation only.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TruthGraph {
    n: usize,
    edges: Vec<u8>,
    params: SystemParams,
}

impl TruthGraph {
    /// Springs graph from a full `n × n` edge matrix.
    pub fn springs(edges: Vec<Vec<u8>>, k: f64) -> Result<Self> {
        let n = edges.len();
        let flat = flatten_edges(&edges)?;
        let g = Self {
            n,
            edges: flat,
            params: SystemParams::Springs { k },
        };
        g.validate()?;
        Ok(g)
    }

    /// Charged system with per-agent charges; edges follow from `labeling`.
    pub fn charged(charges: Vec<f64>, k_e: f64, labeling: ChargeLabeling) -> Result<Self> {
        let n = charges.len();
        if n < 2 {
            return Err(Error::Config(format!("need at least 2 agents, got {n}")));
        }
        if charges.iter().any(|&q| q != 1.0 && q != -1.0) {
            return Err(Error::Config("charges must be +1 or -1".into()));
        }
        let mut edges = vec![0u8; n * n];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let product = charges[i] * charges[j];
                let hit = match labeling {
                    ChargeLabeling::Attract => product < 0.0,
                    ChargeLabeling::Repel => product > 0.0,
                };
                edges[i * n + j] = hit as u8;
            }
        }
        Ok(Self {
            n,
            edges,
            params: SystemParams::Charged { k_e, charges },
        })
    }

    /// Rebuild from serialized parts, checking every invariant.
    pub fn from_parts(edges: Vec<Vec<u8>>, params: SystemParams) -> Result<Self> {
        let n = edges.len();
        let g = Self {
            n,
            edges: flatten_edges(&edges)?,
            params,
        };
        g.validate()?;
        Ok(g)
    }

    fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Config(format!("need at least 2 agents, got {}", self.n)));
        }
        if self.edges.iter().any(|&e| e > 1) {
            return Err(Error::Config("edges must be 0 or 1".into()));
        }
        if (0..self.n).any(|i| self.edge(i, i)) {
            return Err(Error::Config("truth graph has a self-interaction".into()));
        }
        match &self.params {
            SystemParams::Springs { k } => {
                if !(*k > 0.0 && k.is_finite()) {
                    return Err(Error::Config(format!("spring constant must be positive, got {k}")));
                }
                if !self.is_symmetric() {
                    return Err(Error::Config("springs graph must be symmetric".into()));
                }
            }
            SystemParams::Charged { k_e, charges } => {
                if !(*k_e > 0.0 && k_e.is_finite()) {
                    return Err(Error::Config(format!("charge constant must be positive, got {k_e}")));
                }
                if charges.len() != self.n {
                    return Err(Error::Config("one charge per agent required".into()));
                }
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edge(&self, i: usize, j: usize) -> bool {
        self.edges[i * self.n + j] == 1
    }

    /// Row-major `n × n` edge flags.
    pub fn edges(&self) -> &[u8] {
        &self.edges
    }

    pub fn edge_rows(&self) -> Vec<Vec<u8>> {
        self.edges.chunks(self.n).map(<[u8]>::to_vec).collect()
    }

    pub fn system(&self) -> SystemKind {
        match self.params {
            SystemParams::Springs { .. } => SystemKind::Springs,
            SystemParams::Charged { .. } => SystemKind::Charged,
        }
    }

    pub fn params(&self) -> &SystemParams {
        &self.params
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..self.n).all(|j| self.edges[i * self.n + j] == self.edges[j * self.n + i]))
    }

    /// Flip every off-diagonal edge. Parameters are kept.
    pub fn complement(&self) -> Self {
        let mut edges = self.edges.clone();
        for i in 0..self.n {
            for j in 0..self.n {
                if i != j {
                    edges[i * self.n + j] ^= 1;
                }
            }
        }
        Self {
            n: self.n,
            edges,
            params: self.params.clone(),
        }
    }

    /// Fraction of off-diagonal entries that are edges.
    pub fn density(&self) -> f64 {
        let on: usize = self.edges.iter().map(|&e| e as usize).sum();
        on as f64 / (self.n * (self.n - 1)) as f64
    }
}

fn flatten_edges(edges: &[Vec<u8>]) -> Result<Vec<u8>> {
    let n = edges.len();
    if edges.iter().any(|row| row.len() != n) {
        return Err(Error::dim("truth_graph", "edge matrix must be square"));
    }
    Ok(edges.concat())
}

/// Symmetric springs graph; each unordered pair is connected with probability `p`.
pub fn sample_interaction_graph<R: Rng + ?Sized>(n: usize, p: f64, k: f64, rng: &mut R) -> Result<TruthGraph> {
    if n < 2 {
        return Err(Error::Config(format!("need at least 2 agents, got {n}")));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Config(format!("edge probability {p} outside [0, 1]")));
    }
    let mut edges = vec![vec![0u8; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let on = rng.random::<f64>() < p;
            edges[i][j] = on as u8;
            edges[j][i] = on as u8;
        }
    }
    TruthGraph::springs(edges, k)
}

/// Charged system with charges drawn uniformly from {-1, +1}.
pub fn sample_charged_graph<R: Rng + ?Sized>(
    n: usize,
    k_e: f64,
    labeling: ChargeLabeling,
    rng: &mut R,
) -> Result<TruthGraph> {
    let charges = (0..n)
        .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
        .collect();
    TruthGraph::charged(charges, k_e, labeling)
}

/// Mean absolute difference over off-diagonal entries.
pub fn graph_dissimilarity(a: &TruthGraph, b: &TruthGraph) -> Result<f64> {
    if a.n != b.n {
        return Err(Error::dim(
            "graph_dissimilarity",
            format!("{} agents vs {} agents", a.n, b.n),
        ));
    }
    let n = a.n;
    let mut differing = 0usize;
    for i in 0..n {
        for j in 0..n {
            if i != j && a.edge(i, j) != b.edge(i, j) {
                differing += 1;
            }
        }
    }
    Ok(differing as f64 / (n * (n - 1)) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn degenerate_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let empty = sample_interaction_graph(6, 0.0, 0.1, &mut rng).unwrap();
        assert!(empty.edges().iter().all(|&e| e == 0));
        let full = sample_interaction_graph(6, 1.0, 0.1, &mut rng).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                assert_eq!(full.edge(i, j), i != j);
            }
        }
    }

    #[test]
    fn sampled_graphs_are_symmetric_without_self_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let g = sample_interaction_graph(7, 0.5, 0.1, &mut rng).unwrap();
            assert!(g.is_symmetric());
            assert!((0..7).all(|i| !g.edge(i, i)));
        }
    }

    #[test]
    fn edge_density_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draws = 10_000;
        let mean: f64 = (0..draws)
            .map(|_| sample_interaction_graph(10, 0.5, 0.1, &mut rng).unwrap().density())
            .sum::<f64>()
            / draws as f64;
        assert!((mean - 0.5).abs() < 0.02, "{mean}");
    }

    #[test]
    fn too_few_agents() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            sample_interaction_graph(1, 0.5, 0.1, &mut rng),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn charged_labeling_conventions() {
        let q = vec![1.0, -1.0, 1.0];
        let attract = TruthGraph::charged(q.clone(), 1.0, ChargeLabeling::Attract).unwrap();
        let repel = TruthGraph::charged(q, 1.0, ChargeLabeling::Repel).unwrap();
        assert!(attract.edge(0, 1) && !attract.edge(0, 2));
        assert!(!repel.edge(0, 1) && repel.edge(0, 2));
        assert_eq!(attract.edges(), repel.complement().edges());
    }

    #[test]
    fn dissimilarity_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = sample_interaction_graph(5, 0.5, 0.1, &mut rng).unwrap();
        assert_eq!(graph_dissimilarity(&g, &g).unwrap(), 0.0);
        assert_eq!(graph_dissimilarity(&g, &g.complement()).unwrap(), 1.0);

        let a = TruthGraph::springs(vec![vec![0, 0, 0], vec![0, 0, 0], vec![0, 0, 0]], 0.1).unwrap();
        let b = TruthGraph::springs(vec![vec![0, 1, 0], vec![1, 0, 0], vec![0, 0, 0]], 0.1).unwrap();
        assert!((graph_dissimilarity(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-15);

        let c = sample_interaction_graph(4, 0.5, 0.1, &mut rng).unwrap();
        assert!(matches!(graph_dissimilarity(&g, &c), Err(Error::Dimension { .. })));
    }
}
