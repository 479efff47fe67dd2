//! The trainable adjacency tensor and its learning-rate controller.
//!
//! The adjacency `I(t)` holds one strength in `[0, 1]` per ordered agent pair
//! and interaction type, stored row-major as `[receiver][sender][type]`. Each
//! training iteration applies exactly one projected gradient step
//! `I ← clamp(I − η ∇I, 0, 1)`. The step size `η` is driven by AdaRelation:
//! when the adjacency has moved by more than `epsilon` on average over the
//! last `w` iterations the rate drops by `alpha`, otherwise it rises by
//! `alpha`, and it is always clipped to `[eta_min, eta_max]`.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::diffengine::Tensor;
use crate::error::{Error, Result};
use crate::physics::TruthGraph;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaRelationConfig {
    pub epsilon: f64,
    pub alpha: f64,
    pub eta_min: f64,
    pub eta_max: f64,
    /// History length `w`, in iterations.
    pub window: usize,
    pub eta_init: f64,
}

impl Default for AdaRelationConfig {
    /// Settings for the message-passing decoders in [`crate::decoder`].
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            alpha: 1.0,
            eta_min: 100.0,
            eta_max: 200.0,
            window: 100,
            eta_init: 100.0,
        }
    }
}

impl AdaRelationConfig {
    /// Fixed learning rate: `alpha = 0` and both bounds pinned to `eta`.
    pub fn constant(eta: f64) -> Self {
        Self {
            alpha: 0.0,
            eta_min: eta,
            eta_max: eta,
            eta_init: eta,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::Config(format!("adarelation.{field}: {msg}")));
        if !(self.eta_min > 0.0) {
            return bad("eta_min", format!("must be positive, got {}", self.eta_min));
        }
        if !(self.eta_min <= self.eta_max && self.eta_max.is_finite()) {
            return bad(
                "eta_max",
                format!("need eta_min <= eta_max, got {} / {}", self.eta_min, self.eta_max),
            );
        }
        // may lie outside the bounds; the first controller step clips it
        if !(self.eta_init > 0.0 && self.eta_init.is_finite()) {
            return bad("eta_init", format!("must be positive, got {}", self.eta_init));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha", format!("must be non-negative, got {}", self.alpha));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon", format!("must be positive, got {}", self.epsilon));
        }
        if self.window == 0 {
            return bad("window", "must be at least 1".into());
        }
        Ok(())
    }
}

/// One application of the controller: `clip(eta ± alpha)`, decreasing only
/// when `deviation > epsilon` strictly.
pub fn next_eta(deviation: f64, eta: f64, config: &AdaRelationConfig) -> f64 {
    let delta = if deviation > config.epsilon {
        -config.alpha
    } else {
        config.alpha
    };
    (eta + delta).clamp(config.eta_min, config.eta_max)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdjacencyParam {
    n: usize,
    m: usize,
    values: Vec<f64>,
    /// Snapshots of `values`, oldest first, newest equal to `values`.
    history: VecDeque<Vec<f64>>,
    capacity: usize,
    eta: f64,
    updates: usize,
}

pub fn init_adjacency(n: usize, m: usize, config: &AdaRelationConfig) -> Result<AdjacencyParam> {
    AdjacencyParam::filled(n, m, 0.5, config)
}

impl AdjacencyParam {
    pub fn filled(n: usize, m: usize, value: f64, config: &AdaRelationConfig) -> Result<Self> {
        if n < 2 || m == 0 {
            return Err(Error::Config(format!(
                "adjacency needs at least 2 agents and 1 type, got {n} and {m}"
            )));
        }
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::Config(format!("initial strength {value} outside [0, 1]")));
        }
        config.validate()?;
        Self::from_values(n, m, vec![value; n * n * m], config)
    }

    /// Adjacency set to a ground-truth graph: strength 1 on edges, 0 elsewhere.
    /// With `m >= 2`, channel 0 is the no-edge type and channel 1 the edge type.
    pub fn from_truth(truth: &TruthGraph, m: usize, config: &AdaRelationConfig) -> Result<Self> {
        let n = truth.n();
        let mut values = vec![0.0; n * n * m];
        for i in 0..n {
            for j in 0..n {
                let edge = truth.edge(i, j);
                let base = (i * n + j) * m;
                if m == 1 {
                    values[base] = if edge { 1.0 } else { 0.0 };
                } else {
                    values[base + usize::from(edge)] = 1.0;
                }
            }
        }
        Self::from_values(n, m, values, config)
    }

    fn from_values(n: usize, m: usize, values: Vec<f64>, config: &AdaRelationConfig) -> Result<Self> {
        config.validate()?;
        let mut history = VecDeque::with_capacity(config.window + 1);
        history.push_back(values.clone());
        Ok(Self {
            n,
            m,
            values,
            history,
            capacity: config.window + 1,
            eta: config.eta_init,
            updates: 0,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn types(&self) -> usize {
        self.m
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, i: usize, j: usize, channel: usize) -> f64 {
        self.values[(i * self.n + j) * self.m + channel]
    }

    pub fn history_len(&self) -> usize {
        self.history.len()
    }

    /// Number of gradient updates applied so far.
    pub fn updates(&self) -> usize {
        self.updates
    }

    pub fn as_tensor(&self) -> Tensor {
        Tensor::from_parts(vec![self.n, self.n, self.m], self.values.clone())
    }

    /// Mean absolute change against the oldest retained snapshot, which is
    /// `w` updates back once the history is full.
    pub fn deviation(&self) -> f64 {
        let oldest = self.history.front().expect("history is never empty");
        let total: f64 = self
            .values
            .iter()
            .zip(oldest)
            .map(|(a, b)| (a - b).abs())
            .sum();
        total / self.values.len() as f64
    }

    /// Update `eta` from the current deviation. Returns `(deviation, new eta)`.
    pub fn adarelation_step(&mut self, config: &AdaRelationConfig) -> (f64, f64) {
        let d = self.deviation();
        self.eta = next_eta(d, self.eta, config);
        (d, self.eta)
    }

    /// One projected gradient step with the current `eta`; records a snapshot.
    pub fn update(&mut self, grad: &Tensor) -> Result<()> {
        if grad.shape() != [self.n, self.n, self.m] {
            return Err(Error::dim(
                "update_adjacency",
                format!(
                    "gradient shape {:?}, adjacency [{}, {}, {}]",
                    grad.shape(),
                    self.n,
                    self.n,
                    self.m
                ),
            ));
        }
        if !grad.is_finite() {
            return Err(Error::NonFinite("adjacency gradient".into()));
        }
        for (v, g) in self.values.iter_mut().zip(grad.data()) {
            *v = (*v - self.eta * g).clamp(0.0, 1.0);
        }
        if self.history.len() == self.capacity {
            self.history.pop_front();
        }
        self.history.push_back(self.values.clone());
        self.updates += 1;
        Ok(())
    }

    /// Binarized prediction for ordered pair `(i, j)`.
    ///
    /// With one type, strengths `>= 0.5` are edges. With several, the
    /// argmax type decides and type 0 means no edge; ties go to the lower type.
    pub fn predicts_edge(&self, i: usize, j: usize) -> bool {
        let base = (i * self.n + j) * self.m;
        let cell = &self.values[base..base + self.m];
        if self.m == 1 {
            return cell[0] >= 0.5;
        }
        let mut best = 0;
        for (c, &v) in cell.iter().enumerate() {
            if v > cell[best] {
                best = c;
            }
        }
        best != 0
    }

    /// Fraction of the `N(N-1)` ordered off-diagonal pairs classified correctly.
    pub fn relation_accuracy(&self, truth: &TruthGraph) -> Result<f64> {
        if truth.n() != self.n {
            return Err(Error::dim(
                "relation_accuracy",
                format!("adjacency has {} agents, truth {}", self.n, truth.n()),
            ));
        }
        let mut correct = 0usize;
        for i in 0..self.n {
            for j in 0..self.n {
                if i != j && self.predicts_edge(i, j) == truth.edge(i, j) {
                    correct += 1;
                }
            }
        }
        Ok(correct as f64 / (self.n * (self.n - 1)) as f64)
    }

    pub fn snapshot(&self, iteration: usize) -> AdjacencySnapshot {
        let values = (0..self.n)
            .map(|i| {
                (0..self.n)
                    .map(|j| {
                        let base = (i * self.n + j) * self.m;
                        self.values[base..base + self.m].to_vec()
                    })
                    .collect()
            })
            .collect();
        AdjacencySnapshot {
            iteration,
            eta: self.eta,
            values,
        }
    }
}

/// Exported adjacency state: `values[i][j][type]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdjacencySnapshot {
    pub iteration: usize,
    pub eta: f64,
    pub values: Vec<Vec<Vec<f64>>>,
}

/// For each segment, the first iteration (relative to the segment start)
/// whose accuracy reaches `threshold`, or `None` if it never does.
///
/// `boundaries` lists segment start indices into `series`, ascending.
pub fn iterations_to_threshold(series: &[f64], boundaries: &[usize], threshold: f64) -> Vec<Option<usize>> {
    boundaries
        .iter()
        .enumerate()
        .map(|(k, &start)| {
            let end = boundaries.get(k + 1).copied().unwrap_or(series.len()).min(series.len());
            series
                .get(start..end)
                .and_then(|seg| seg.iter().position(|&a| a >= threshold))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> AdaRelationConfig {
        AdaRelationConfig::default()
    }

    #[test]
    fn init_fills_half_and_starts_at_eta_init() {
        let adj = init_adjacency(3, 1, &cfg()).unwrap();
        assert_eq!(adj.as_tensor().shape(), &[3, 3, 1]);
        assert!(adj.values().iter().all(|&v| v == 0.5));
        assert_eq!(adj.eta(), 100.0);
        assert_eq!(adj.deviation(), 0.0);
        assert_eq!(adj.history_len(), 1);
    }

    #[test]
    fn init_rejects_bad_sizes() {
        assert!(init_adjacency(1, 1, &cfg()).is_err());
        assert!(init_adjacency(3, 0, &cfg()).is_err());
    }

    #[test]
    fn uniform_shift_deviation() {
        let mut adj = init_adjacency(2, 1, &AdaRelationConfig::constant(1.0)).unwrap();
        adj.update(&Tensor::filled(&[2, 2, 1], 0.1)).unwrap();
        assert!((adj.deviation() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn controller_examples() {
        let c = cfg();
        assert_eq!(next_eta(0.06, 150.0, &c), 149.0);
        assert_eq!(next_eta(0.0, 200.0, &c), 200.0);
        assert_eq!(next_eta(0.05, 150.0, &c), 151.0);
        assert_eq!(next_eta(1.0, 100.0, &c), 100.0);
    }

    #[test]
    fn update_clamps_and_records() {
        let mut adj = init_adjacency(3, 1, &cfg()).unwrap();
        adj.update(&Tensor::zeros(&[3, 3, 1])).unwrap();
        assert!(adj.values().iter().all(|&v| v == 0.5));
        assert_eq!(adj.history_len(), 2);

        let mut g = Tensor::zeros(&[3, 3, 1]);
        g.data_mut()[1] = 0.01;
        g.data_mut()[2] = -0.01;
        adj.update(&g).unwrap();
        assert_eq!(adj.value(0, 1, 0), 0.0);
        assert_eq!(adj.value(0, 2, 0), 1.0);
        assert_eq!(adj.updates(), 2);
    }

    #[test]
    fn update_rejects_bad_gradients() {
        let mut adj = init_adjacency(3, 1, &cfg()).unwrap();
        assert!(matches!(adj.update(&Tensor::zeros(&[3, 3, 2])), Err(Error::Dimension { .. })));
        let nan = Tensor::from_parts(vec![3, 3, 1], vec![f64::NAN; 9]);
        assert!(matches!(adj.update(&nan), Err(Error::NonFinite(_))));
    }

    /// `w` identical steps from the 0.5 fill move each entry by `min(w·η·g, 0.5)`.
    #[test]
    fn deviation_after_w_uniform_updates() {
        for (eta, g) in [(100.0, 1e-5), (100.0, 3e-4), (150.0, -2e-5), (200.0, 1e-2)] {
            let config = AdaRelationConfig {
                window: 40,
                ..AdaRelationConfig::constant(eta)
            };
            let mut adj = init_adjacency(4, 2, &config).unwrap();
            for _ in 0..config.window {
                adj.update(&Tensor::filled(&[4, 4, 2], g)).unwrap();
            }
            let expected = (config.window as f64 * eta * g.abs()).min(0.5);
            assert!((adj.deviation() - expected).abs() < 1e-12, "{eta} {g}");
        }
    }

    #[test]
    fn history_keeps_w_plus_one_snapshots() {
        let config = AdaRelationConfig {
            window: 3,
            ..AdaRelationConfig::constant(1.0)
        };
        let mut adj = init_adjacency(2, 1, &config).unwrap();
        for step in 1..=6 {
            adj.update(&Tensor::filled(&[2, 2, 1], -0.01)).unwrap();
            assert_eq!(adj.history_len(), (step + 1).min(4));
        }
        // compares against the value three updates back
        assert!((adj.deviation() - 0.03).abs() < 1e-12);
    }

    #[test]
    fn accuracy_examples() {
        let truth = TruthGraph::springs(vec![vec![0, 1, 0], vec![1, 0, 1], vec![0, 1, 0]], 0.1).unwrap();
        let c = cfg();
        let exact = AdjacencyParam::from_truth(&truth, 1, &c).unwrap();
        assert_eq!(exact.relation_accuracy(&truth).unwrap(), 1.0);
        let flipped = AdjacencyParam::from_truth(&truth.complement(), 1, &c).unwrap();
        assert_eq!(flipped.relation_accuracy(&truth).unwrap(), 0.0);

        // wrong on two ordered pairs: (0,1) and (2,0)
        let mut adj = AdjacencyParam::from_truth(&truth, 1, &c).unwrap();
        adj.values[1] = 0.2;
        adj.values[2 * 3] = 0.9;
        assert!((adj.relation_accuracy(&truth).unwrap() - 4.0 / 6.0).abs() < 1e-15);

        let two_types = AdjacencyParam::from_truth(&truth, 2, &c).unwrap();
        assert_eq!(two_types.relation_accuracy(&truth).unwrap(), 1.0);
    }

    #[test]
    fn half_fill_counts_as_edges() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let truth = crate::physics::sample_interaction_graph(6, 0.5, 0.1, &mut rng).unwrap();
        let adj = init_adjacency(6, 1, &cfg()).unwrap();
        assert!((adj.relation_accuracy(&truth).unwrap() - truth.density()).abs() < 1e-15);
    }

    #[test]
    fn threshold_crossings() {
        assert_eq!(iterations_to_threshold(&[1.0; 30], &[0, 10, 20], 0.9), vec![Some(0); 3]);
        assert_eq!(iterations_to_threshold(&[0.5; 30], &[0, 15], 0.9), vec![None, None]);
        let ramp: Vec<f64> = (0..100).map(|i| 0.5 + 0.5 * i as f64 / 100.0).collect();
        assert_eq!(iterations_to_threshold(&ramp, &[0], 0.9), vec![Some(80)]);
        let two: Vec<f64> = ramp.iter().chain(&ramp).copied().collect();
        assert_eq!(iterations_to_threshold(&two, &[0, 100], 0.9), vec![Some(80), Some(80)]);
    }

    #[test]
    fn snapshot_layout() {
        let truth = TruthGraph::springs(vec![vec![0, 1], vec![1, 0]], 0.1).unwrap();
        let adj = AdjacencyParam::from_truth(&truth, 2, &cfg()).unwrap();
        let snap = adj.snapshot(7);
        assert_eq!(snap.iteration, 7);
        assert_eq!(snap.values[0][1], vec![0.0, 1.0]);
        assert_eq!(snap.values[1][1], vec![1.0, 0.0]);
        let json = serde_json::to_string(&snap).unwrap();
        assert_eq!(serde_json::from_str::<AdjacencySnapshot>(&json).unwrap(), snap);
    }
}
