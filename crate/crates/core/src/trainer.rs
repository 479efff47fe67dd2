//! The online training loop.
//!
//! Every incoming sample triggers exactly one iteration: optional mirror
//! expansion, one batched rollout, one backward pass, one adjacency update
//! and one decoder update. Nothing is reset at segment boundaries; the
//! learner is never told when the interaction graph changes.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::augment::expand_tm;
use crate::decoder::{rollout_loss, Adam, DecoderConfig, DecoderParams, RolloutBatch};
use crate::error::{Error, Result};
use crate::physics::Sample;
use crate::relation::{init_adjacency, iterations_to_threshold, AdaRelationConfig, AdjacencyParam};

/// Prediction horizons reported in the metrics, in steps past the observation window.
pub const HORIZONS: [usize; 4] = [1, 10, 20, 30];

/// Accuracy level used for the per-segment convergence summary.
pub const CONVERGENCE_THRESHOLD: f64 = 0.9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub decoder: DecoderConfig,
    pub decoder_lr: f64,
    /// Seed for decoder weight initialization.
    pub decoder_seed: u64,
    pub adarelation: AdaRelationConfig,
    pub trajectory_mirror: bool,
    /// Record wall-clock time per iteration. Off by default so logs are reproducible.
    pub wall_time: bool,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            decoder: DecoderConfig::default(),
            decoder_lr: 1e-4,
            decoder_seed: 0,
            adarelation: AdaRelationConfig::default(),
            trajectory_mirror: true,
            wall_time: false,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        self.decoder.validate()?;
        self.adarelation.validate()?;
        if !(self.decoder_lr > 0.0 && self.decoder_lr.is_finite()) {
            return Err(Error::Config(format!(
                "decoder.lr: must be positive, got {}",
                self.decoder_lr
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub iteration: usize,
    pub segment: usize,
    pub accuracy: f64,
    /// One entry per [`HORIZONS`] value; `None` past the prediction window.
    pub mse: [Option<f64>; 4],
    pub loss: f64,
    pub eta: f64,
    pub deviation: f64,
    pub wall_time_ms: Option<f64>,
}

/// Learner state carried across iterations.
#[derive(Clone, Debug)]
pub struct TrainerState {
    pub params: DecoderParams,
    pub optimizer: Adam,
    pub adjacency: AdjacencyParam,
    iterations: usize,
}

impl TrainerState {
    pub fn new(config: &TrainerConfig, n_agents: usize) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            params: DecoderParams::init(config.decoder, config.decoder_seed)?,
            optimizer: Adam::new(config.decoder_lr),
            adjacency: init_adjacency(n_agents, config.decoder.edge_types, &config.adarelation)?,
            iterations: 0,
        })
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }
}

/// One online iteration on `sample`. Errors carry the sample's iteration index.
pub fn iteration_step(state: &mut TrainerState, sample: &Sample, config: &TrainerConfig) -> Result<MetricsRecord> {
    let started = config.wall_time.then(Instant::now);
    step_inner(state, sample, config, started).map_err(|e| e.at_iteration(sample.global_iteration, "training step"))
}

fn step_inner(
    state: &mut TrainerState,
    sample: &Sample,
    config: &TrainerConfig,
    started: Option<Instant>,
) -> Result<MetricsRecord> {
    if sample.n_agents() != state.adjacency.n() {
        return Err(Error::dim(
            "iteration_step",
            format!(
                "sample has {} agents, adjacency {}",
                sample.n_agents(),
                state.adjacency.n()
            ),
        ));
    }
    let batch = if config.trajectory_mirror {
        RolloutBatch::from_samples(&expand_tm(sample))?
    } else {
        RolloutBatch::from_samples(std::slice::from_ref(sample))?
    };
    let eval = rollout_loss(&state.params, &batch, &state.adjacency.as_tensor())?;
    if !eval.loss.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }

    let (deviation, eta) = state.adjacency.adarelation_step(&config.adarelation);
    let updates_before = (state.adjacency.updates(), state.optimizer.steps());
    state.adjacency.update(&eval.adjacency_grad)?;
    state.optimizer.update(&mut state.params, &eval.param_grads)?;
    debug_assert_eq!(state.adjacency.updates(), updates_before.0 + 1);
    debug_assert_eq!(state.optimizer.steps(), updates_before.1 + 1);
    state.iterations += 1;

    let accuracy = state.adjacency.relation_accuracy(&sample.truth)?;
    let mse = HORIZONS.map(|k| batch.horizon_mse(&eval.predictions, 0, k));
    Ok(MetricsRecord {
        iteration: sample.global_iteration,
        segment: sample.segment_index,
        accuracy,
        mse,
        loss: eval.loss,
        eta,
        deviation,
        wall_time_ms: started.map(|t| t.elapsed().as_secs_f64() * 1e3),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentSummary {
    pub segment: usize,
    pub first_iteration: usize,
    pub iterations: usize,
    pub average_accuracy: f64,
    /// Mean accuracy over the second half of the segment.
    pub late_accuracy: f64,
    pub final_accuracy: f64,
    /// Iterations from the segment start until accuracy first reaches the threshold.
    pub iterations_to_threshold: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    /// False when the stream was empty; all averages are then absent.
    pub has_data: bool,
    pub iterations: usize,
    pub average_accuracy: Option<f64>,
    /// Averages over iterations where the horizon is defined, keyed like [`HORIZONS`].
    pub average_mse: [Option<f64>; 4],
    pub average_loss: Option<f64>,
    pub threshold: f64,
    pub segments: Vec<SegmentSummary>,
}

impl RunSummary {
    pub fn from_records(records: &[MetricsRecord]) -> Self {
        let mean = |values: &mut dyn Iterator<Item = f64>| {
            let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
            (count > 0).then(|| sum / count as f64)
        };
        let mut boundaries = Vec::new();
        for (k, r) in records.iter().enumerate() {
            if k == 0 || r.segment != records[k - 1].segment {
                boundaries.push(k);
            }
        }
        let accuracy: Vec<f64> = records.iter().map(|r| r.accuracy).collect();
        let crossings = iterations_to_threshold(&accuracy, &boundaries, CONVERGENCE_THRESHOLD);
        let segments = boundaries
            .iter()
            .enumerate()
            .map(|(k, &start)| {
                let end = boundaries.get(k + 1).copied().unwrap_or(records.len());
                let acc = &accuracy[start..end];
                let half = acc.len() / 2;
                SegmentSummary {
                    segment: records[start].segment,
                    first_iteration: records[start].iteration,
                    iterations: acc.len(),
                    average_accuracy: mean(&mut acc.iter().copied()).unwrap_or(0.0),
                    late_accuracy: mean(&mut acc[half..].iter().copied()).unwrap_or(0.0),
                    final_accuracy: acc[acc.len() - 1],
                    iterations_to_threshold: crossings[k],
                }
            })
            .collect();
        Self {
            has_data: !records.is_empty(),
            iterations: records.len(),
            average_accuracy: mean(&mut records.iter().map(|r| r.accuracy)),
            average_mse: std::array::from_fn(|h| mean(&mut records.iter().filter_map(|r| r.mse[h]))),
            average_loss: mean(&mut records.iter().map(|r| r.loss)),
            threshold: CONVERGENCE_THRESHOLD,
            segments,
        }
    }

    /// Mean over segments of the second-half accuracy.
    pub fn mean_late_accuracy(&self) -> Option<f64> {
        if self.segments.is_empty() {
            return None;
        }
        Some(self.segments.iter().map(|s| s.late_accuracy).sum::<f64>() / self.segments.len() as f64)
    }
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub records: Vec<MetricsRecord>,
    pub summary: RunSummary,
    /// `None` when the stream was empty.
    pub state: Option<TrainerState>,
}

/// Consume `stream` once, one iteration per sample.
///
/// `observer` runs after every iteration with the updated state; an error
/// from it aborts the run.
pub fn run_online<I, F>(stream: I, config: &TrainerConfig, mut observer: F) -> Result<RunOutput>
where
    I: IntoIterator<Item = Result<Sample>>,
    F: FnMut(&TrainerState, &MetricsRecord) -> Result<()>,
{
    config.validate()?;
    let mut state: Option<TrainerState> = None;
    let mut records: Vec<MetricsRecord> = Vec::new();
    for sample in stream {
        let sample = sample?;
        if let Some(prev) = records.last() {
            if sample.global_iteration <= prev.iteration || sample.segment_index < prev.segment {
                return Err(Error::Contract(format!(
                    "stream out of order at iteration {}",
                    sample.global_iteration
                )));
            }
        }
        let st = match &mut state {
            Some(st) => st,
            None => state.insert(TrainerState::new(config, sample.n_agents())?),
        };
        let record = iteration_step(st, &sample, config)?;
        observer(st, &record)?;
        records.push(record);
    }
    let summary = RunSummary::from_records(&records);
    Ok(RunOutput { records, summary, state })
}

pub const CSV_HEADER: &str = "iteration,segment,accuracy,mse_1,mse_10,mse_20,mse_30,loss,eta,deviation,wall_time_ms";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn csv_row(r: &MetricsRecord) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{}",
        r.iteration,
        r.segment,
        r.accuracy,
        opt(r.mse[0]),
        opt(r.mse[1]),
        opt(r.mse[2]),
        opt(r.mse[3]),
        r.loss,
        r.eta,
        r.deviation,
        opt(r.wall_time_ms)
    )
}

/// Streams metrics rows to a CSV file, keeping every `log_every`-th iteration.
pub struct MetricsWriter {
    path: std::path::PathBuf,
    out: std::io::BufWriter<std::fs::File>,
    log_every: usize,
    seen: usize,
}

impl MetricsWriter {
    pub fn create(path: &Path, log_every: usize) -> Result<Self> {
        if log_every == 0 {
            return Err(Error::Config("output.log_every: must be at least 1".into()));
        }
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        writeln!(out, "{CSV_HEADER}").map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            out,
            log_every,
            seen: 0,
        })
    }

    pub fn write(&mut self, record: &MetricsRecord) -> Result<()> {
        if self.seen % self.log_every == 0 {
            writeln!(self.out, "{}", csv_row(record)).map_err(|e| Error::io(&self.path, e))?;
        }
        self.seen += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub fn write_metrics_csv(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let mut w = MetricsWriter::create(path, 1)?;
    for r in records {
        w.write(r)?;
    }
    w.finish()
}

pub fn write_summary_json(path: &Path, summary: &RunSummary) -> Result<()> {
    let text = serde_json::to_string_pretty(summary)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
