use std::collections::BTreeMap;

use super::{check_adjacency, decoder_step, Bound, DecoderConfig, DecoderParams, DecoderVariant, Graph, STATE_DIM};
use crate::diffengine::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::physics::{Sample, Trajectory};

/// Leaf name under which the adjacency is registered on rollout tapes.
pub const ADJACENCY_LEAF: &str = "adjacency";

/// Observation and target windows of one or more scenes, stacked into
/// `2 * window` frames of shape `[batch * n, 4]`.
#[derive(Clone, Debug)]
pub struct RolloutBatch {
    n: usize,
    batch: usize,
    window: usize,
    frames: Vec<Tensor>,
}

impl RolloutBatch {
    pub fn new(scenes: &[(&Trajectory, &Trajectory)]) -> Result<Self> {
        let Some((first, _)) = scenes.first() else {
            return Err(Error::Contract("rollout batch needs at least one scene".into()));
        };
        let n = first.n_agents();
        let window = first.steps();
        if window == 0 {
            return Err(Error::Contract("rollout window must be at least 1".into()));
        }
        for (obs, target) in scenes {
            for t in [obs, target] {
                if t.n_agents() != n || t.steps() != window {
                    return Err(Error::dim(
                        "rollout",
                        format!(
                            "scene has {} agents x {} steps, expected {n} x {window}",
                            t.n_agents(),
                            t.steps()
                        ),
                    ));
                }
            }
        }
        let frames = (0..2 * window)
            .map(|s| {
                let mut data = Vec::with_capacity(scenes.len() * n * STATE_DIM);
                for (obs, target) in scenes {
                    let src = if s < window { obs.state(s) } else { target.state(s - window) };
                    data.extend_from_slice(src);
                }
                Tensor::from_parts(vec![scenes.len() * n, STATE_DIM], data)
            })
            .collect();
        Ok(Self {
            n,
            batch: scenes.len(),
            window,
            frames,
        })
    }

    pub fn from_samples(samples: &[Sample]) -> Result<Self> {
        let pairs: Vec<_> = samples.iter().map(|s| (&s.observation, &s.target)).collect();
        Self::new(&pairs)
    }

    pub fn n_agents(&self) -> usize {
        self.n
    }

    pub fn batch_size(&self) -> usize {
        self.batch
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// Ground-truth frames, observation first.
    pub fn frames(&self) -> &[Tensor] {
        &self.frames
    }

    /// Mean squared error of scene `scene` at `horizon` steps past the
    /// observation window, or `None` if the horizon exceeds the window.
    ///
    /// `predictions[s - 1]` must predict frame `s`, as returned by [`rollout_loss`].
    pub fn horizon_mse(&self, predictions: &[Tensor], scene: usize, horizon: usize) -> Option<f64> {
        if horizon == 0 || horizon > self.window || scene >= self.batch {
            return None;
        }
        let s = self.window + horizon - 1;
        let width = self.n * STATE_DIM;
        let range = scene * width..(scene + 1) * width;
        let pred = &predictions.get(s - 1)?.data()[range.clone()];
        let truth = &self.frames[s].data()[range];
        let sq: f64 = pred.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum();
        Some(sq / width as f64)
    }
}

/// Record a full rollout on `tape` and return `(loss, predictions)`.
///
/// Frames `1 .. window` are predicted from the ground truth one step back
/// (teacher forcing). Frame `window` is predicted from the last observed
/// frame, and every later frame from the previous prediction. The loss is
/// the mean over all `2 * window - 1` predicted frames of the per-frame
/// mean squared error. `params` must hold every decoder parameter name.
pub fn build_rollout(
    tape: &mut Tape,
    params: &BTreeMap<String, Var>,
    adjacency: Var,
    config: &DecoderConfig,
    batch: &RolloutBatch,
) -> Result<(Var, Vec<Var>)> {
    check_adjacency(tape.value(adjacency), batch.n, config.edge_types)?;
    let bound = Bound::resolve(config, params)?;
    let graph = Graph::new(batch.n, batch.batch, config)?;
    let strengths = graph.strengths(tape, adjacency)?;
    let mut hidden = match config.variant {
        DecoderVariant::Rnn => Some(tape.constant(Tensor::zeros(&[graph.nodes, config.hidden]))?),
        DecoderVariant::Mlp => None,
    };
    let w = batch.window;
    let mut predictions: Vec<Var> = Vec::with_capacity(2 * w - 1);
    let mut loss: Option<Var> = None;
    for s in 1..2 * w {
        let input = if s <= w {
            tape.constant(batch.frames[s - 1].clone())?
        } else {
            predictions[s - 2]
        };
        let (pred, h) = decoder_step(tape, &bound, &graph, &strengths, input, hidden).map_err(|e| Error::Rollout {
            step: s,
            source: Box::new(e),
        })?;
        hidden = h;
        let target = tape.constant(batch.frames[s].clone())?;
        let err = tape.mse(pred, target)?;
        loss = Some(match loss {
            None => err,
            Some(l) => tape.add(l, err)?,
        });
        predictions.push(pred);
    }
    let total = loss.expect("window is at least 1");
    let mean = tape.scale(total, 1.0 / (2 * w - 1) as f64)?;
    Ok((mean, predictions))
}

/// Loss, predictions and gradients of one rollout.
#[derive(Clone, Debug)]
pub struct LossEval {
    pub loss: f64,
    /// `predictions[s - 1]` predicts frame `s`.
    pub predictions: Vec<Tensor>,
    pub param_grads: BTreeMap<String, Tensor>,
    pub adjacency_grad: Tensor,
}

pub fn rollout_loss(params: &DecoderParams, batch: &RolloutBatch, adjacency: &Tensor) -> Result<LossEval> {
    let mut tape = Tape::new();
    let mut vars = BTreeMap::new();
    for (name, value) in params.tensors() {
        vars.insert(name.clone(), tape.leaf(name.clone(), value.clone())?);
    }
    let adj = tape.leaf(ADJACENCY_LEAF, adjacency.clone())?;
    let (loss, preds) = build_rollout(&mut tape, &vars, adj, params.config(), batch)?;
    tape.set_output(loss);
    let mut grads = tape.backward()?;
    let adjacency_grad = grads
        .remove(ADJACENCY_LEAF)
        .ok_or_else(|| Error::Contract("adjacency gradient missing".into()))?;
    Ok(LossEval {
        loss: tape.value(loss).data()[0],
        predictions: preds.iter().map(|&p| tape.value(p).clone()).collect(),
        param_grads: grads,
        adjacency_grad,
    })
}

/// Rollout loss without gradients.
pub fn evaluate_loss(params: &DecoderParams, batch: &RolloutBatch, adjacency: &Tensor) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = params.constants(&mut tape)?;
    let adj = tape.constant(adjacency.clone())?;
    let (loss, _) = build_rollout(&mut tape, &vars, adj, params.config(), batch)?;
    Ok(tape.value(loss).data()[0])
}
