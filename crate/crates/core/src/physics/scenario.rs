use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::sim::{simulate, AgentState, SimConfig, Trajectory};
use super::{sample_charged_graph, sample_interaction_graph, ChargeLabeling, SystemKind, TruthGraph};
use crate::error::{Error, Result};

/// Which system each segment runs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DynamicsSchedule {
    Springs,
    Charged,
    /// Springs or charged, drawn uniformly per segment.
    RandomPerSegment,
    Explicit(Vec<SystemKind>),
}

impl fmt::Display for DynamicsSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DynamicsSchedule::Springs => f.write_str("springs"),
            DynamicsSchedule::Charged => f.write_str("charged"),
            DynamicsSchedule::RandomPerSegment => f.write_str("random"),
            DynamicsSchedule::Explicit(kinds) => {
                let names: Vec<&str> = kinds.iter().map(|k| k.as_str()).collect();
                write!(f, "[{}]", names.join(","))
            }
        }
    }
}

impl FromStr for DynamicsSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "springs" => Ok(Self::Springs),
            "charged" => Ok(Self::Charged),
            "random" => Ok(Self::RandomPerSegment),
            _ => {
                let inner = s
                    .strip_prefix('[')
                    .and_then(|r| r.strip_suffix(']'))
                    .ok_or_else(|| {
                        Error::Config(format!(
                            "dynamics must be springs, charged, random or [kind,...], got `{s}`"
                        ))
                    })?;
                let kinds = inner
                    .split(',')
                    .map(|k| k.trim().parse())
                    .collect::<Result<Vec<SystemKind>>>()?;
                Ok(Self::Explicit(kinds))
            }
        }
    }
}

/// Everything needed to regenerate an evolving stream bit for bit.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub agents: usize,
    pub segments: usize,
    /// Stored steps per segment when `segment_steps` is empty.
    pub steps_per_segment: usize,
    /// Explicit per-segment lengths (irregular evolution). Overrides
    /// `segments` and `steps_per_segment` when non-empty.
    pub segment_steps: Vec<usize>,
    pub edge_probability: f64,
    pub spring_k: [f64; 2],
    pub charge_ke: [f64; 2],
    pub dynamics: DynamicsSchedule,
    pub charge_labeling: ChargeLabeling,
    /// Observation and prediction window length, in stored steps.
    pub window: usize,
    /// Stored steps between consecutive sample starts.
    pub stride: usize,
    pub seed: u64,
    pub loc_std: f64,
    pub vel_norm: f64,
    pub sim: SimConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            agents: 10,
            segments: 10,
            steps_per_segment: 90_000,
            segment_steps: Vec::new(),
            edge_probability: 0.5,
            spring_k: [0.1, 0.1],
            charge_ke: [1.0, 1.0],
            dynamics: DynamicsSchedule::Springs,
            charge_labeling: ChargeLabeling::Attract,
            window: 30,
            stride: 60,
            seed: 0,
            loc_std: 0.5,
            vel_norm: 0.5,
            sim: SimConfig::default(),
        }
    }
}

/// Number of `(observation, target)` windows of length `window` each that fit
/// in `steps` stored steps when starts advance by `stride`.
pub fn window_count(steps: usize, window: usize, stride: usize) -> usize {
    if stride == 0 || steps < 2 * window {
        0
    } else {
        (steps - 2 * window) / stride + 1
    }
}

impl ScenarioConfig {
    pub fn segment_lengths(&self) -> Vec<usize> {
        if self.segment_steps.is_empty() {
            vec![self.steps_per_segment; self.segments]
        } else {
            self.segment_steps.clone()
        }
    }

    pub fn segment_count(&self) -> usize {
        self.segment_lengths().len()
    }

    /// Stored steps needed for exactly `samples` windows.
    pub fn steps_for_samples(&self, samples: usize) -> usize {
        (samples.max(1) - 1) * self.stride + 2 * self.window
    }

    pub fn samples_per_segment(&self) -> Vec<usize> {
        self.segment_lengths()
            .into_iter()
            .map(|t| window_count(t, self.window, self.stride))
            .collect()
    }

    pub fn total_samples(&self) -> usize {
        self.samples_per_segment().iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::Config(format!("scenario.{field}: {msg}")));
        if self.agents < 2 {
            return bad("agents", format!("need at least 2, got {}", self.agents));
        }
        if !(0.0..=1.0).contains(&self.edge_probability) {
            return bad("edge_probability", format!("{} outside [0, 1]", self.edge_probability));
        }
        for (field, [lo, hi]) in [("spring_k", self.spring_k), ("charge_ke", self.charge_ke)] {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return bad(field, format!("range [{lo}, {hi}] must satisfy 0 < lo <= hi"));
            }
        }
        if self.window == 0 {
            return bad("window", "must be at least 1".into());
        }
        if self.stride == 0 {
            return bad("stride", "must be at least 1".into());
        }
        if !(self.loc_std >= 0.0 && self.vel_norm >= 0.0) {
            return bad("loc_std", "initial spreads must be non-negative".into());
        }
        let lengths = self.segment_lengths();
        if lengths.is_empty() {
            return bad("segments", "need at least one segment".into());
        }
        if let Some((i, t)) = lengths.iter().enumerate().find(|(_, &t)| t < 2 * self.window) {
            return bad(
                "steps_per_segment",
                format!("segment {i} has {t} steps, shorter than two windows ({})", 2 * self.window),
            );
        }
        if let DynamicsSchedule::Explicit(kinds) = &self.dynamics {
            if kinds.len() != lengths.len() {
                return bad(
                    "dynamics",
                    format!("{} entries for {} segments", kinds.len(), lengths.len()),
                );
            }
        }
        self.sim.validate()
    }

    /// Simulate segment `index`. A pure function of `(self, index)`.
    pub fn generate_segment(&self, index: usize) -> Result<Segment> {
        let lengths = self.segment_lengths();
        let steps = *lengths
            .get(index)
            .ok_or_else(|| Error::Config(format!("segment {index} out of range")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64 + 1);

        let kind = match &self.dynamics {
            DynamicsSchedule::Springs => SystemKind::Springs,
            DynamicsSchedule::Charged => SystemKind::Charged,
            DynamicsSchedule::RandomPerSegment => {
                if rng.random::<bool>() {
                    SystemKind::Springs
                } else {
                    SystemKind::Charged
                }
            }
            DynamicsSchedule::Explicit(kinds) => kinds[index],
        };
        let draw = |rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]| {
            if lo == hi {
                lo
            } else {
                rng.random_range(lo..=hi)
            }
        };
        let truth = match kind {
            SystemKind::Springs => {
                let k = draw(&mut rng, self.spring_k);
                sample_interaction_graph(self.agents, self.edge_probability, k, &mut rng)?
            }
            SystemKind::Charged => {
                let k_e = draw(&mut rng, self.charge_ke);
                sample_charged_graph(self.agents, k_e, self.charge_labeling, &mut rng)?
            }
        };
        let initial = AgentState::random(self.agents, self.loc_std, self.vel_norm, &mut rng);
        let trajectory = simulate(&initial, &truth, steps, &self.sim)?;
        let first_iteration = self.samples_per_segment()[..index].iter().sum();
        Ok(Segment {
            index,
            truth: Arc::new(truth),
            trajectory,
            first_iteration,
        })
    }
}

/// One contiguous span governed by a single ground-truth draw.
#[derive(Clone, Debug)]
pub struct Segment {
    pub index: usize,
    pub truth: Arc<TruthGraph>,
    pub trajectory: Trajectory,
    /// Global iteration of this segment's first sample.
    pub first_iteration: usize,
}

impl Segment {
    pub fn samples(&self, window: usize, stride: usize) -> Result<Vec<Sample>> {
        samples_from_trajectory(
            &self.trajectory,
            &self.truth,
            window,
            stride,
            self.index,
            self.first_iteration,
        )
    }
}

/// One streaming training example: `window` observed steps followed
/// immediately by `window` target steps.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub observation: Trajectory,
    pub target: Trajectory,
    pub truth: Arc<TruthGraph>,
    pub segment_index: usize,
    pub global_iteration: usize,
}

impl Sample {
    pub fn n_agents(&self) -> usize {
        self.observation.n_agents()
    }

    pub fn window(&self) -> usize {
        self.observation.steps()
    }
}

/// Slice a trajectory into samples.
pub fn samples_from_trajectory(
    trajectory: &Trajectory,
    truth: &Arc<TruthGraph>,
    window: usize,
    stride: usize,
    segment_index: usize,
    first_iteration: usize,
) -> Result<Vec<Sample>> {
    if window == 0 || stride == 0 {
        return Err(Error::Config("window and stride must be positive".into()));
    }
    if trajectory.steps() < 2 * window {
        return Err(Error::Config(format!(
            "{} steps cannot hold two windows of {window}",
            trajectory.steps()
        )));
    }
    if truth.n() != trajectory.n_agents() {
        return Err(Error::dim(
            "samples_from_trajectory",
            format!("{} agents in trajectory, {} in truth graph", trajectory.n_agents(), truth.n()),
        ));
    }
    let count = window_count(trajectory.steps(), window, stride);
    Ok((0..count)
        .map(|s| {
            let start = s * stride;
            Sample {
                observation: trajectory.window(start, window),
                target: trajectory.window(start + window, window),
                truth: Arc::clone(truth),
                segment_index,
                global_iteration: first_iteration + s,
            }
        })
        .collect())
}

/// Lazily simulated, strictly ordered stream of samples across all segments.
pub struct ScenarioStream {
    config: ScenarioConfig,
    next_segment: usize,
    pending: std::vec::IntoIter<Sample>,
    failed: bool,
}

pub fn make_scenario_stream(config: &ScenarioConfig) -> Result<ScenarioStream> {
    config.validate()?;
    Ok(ScenarioStream {
        config: config.clone(),
        next_segment: 0,
        pending: Vec::new().into_iter(),
        failed: false,
    })
}

impl ScenarioStream {
    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn total_samples(&self) -> usize {
        self.config.total_samples()
    }
}

impl Iterator for ScenarioStream {
    type Item = Result<Sample>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            if self.failed {
                return None;
            }
            if let Some(s) = self.pending.next() {
                return Some(Ok(s));
            }
            if self.next_segment >= self.config.segment_count() {
                return None;
            }
            let idx = self.next_segment;
            self.next_segment += 1;
            let batch = self
                .config
                .generate_segment(idx)
                .and_then(|seg| seg.samples(self.config.window, self.config.stride));
            match batch {
                Ok(samples) => self.pending = samples.into_iter(),
                Err(e) => {
                    self.failed = true;
                    return Some(Err(e));
                }
            }
        }
    }
}
