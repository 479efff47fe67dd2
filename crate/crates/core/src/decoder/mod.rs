//! Message-passing decoders that predict the next state of every agent.
//!
//! Both variants read a weighted interaction graph: for every ordered pair
//! `(i, j)` with `i != j`, agent `j` sends a message to agent `i` scaled by
//! the adjacency strength `adj[i][j][type]`. Messages arriving at an agent
//! are summed. With one interaction type a single message network is used;
//! with `m >= 2` types, type 0 means "no interaction" and types `1..m` each
//! own a message network.
//!
//! * [`DecoderVariant::Mlp`] computes messages from the current states and
//!   feeds `[state, aggregate]` through a three-layer output network.
//! * [`DecoderVariant::Rnn`] computes messages from a recurrent hidden state,
//!   updates that state with a gated recurrent unit driven by the current
//!   input, and reads the prediction off the new hidden state.
//!
//! Both predict a state change that is added to the input, and the last
//! output layer starts at zero so an untrained decoder is the identity map.

mod optim;
mod rollout;

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffengine::{Tape, Tensor, Var};
use crate::error::{Error, Result};

pub use optim::{load_checkpoint, optimizer_update, save_checkpoint, Adam, Checkpoint};
pub use rollout::{build_rollout, evaluate_loss, rollout_loss, LossEval, RolloutBatch, ADJACENCY_LEAF};

/// Per-agent state width: position and velocity in two dimensions.
pub const STATE_DIM: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderVariant {
    Mlp,
    Rnn,
}

impl DecoderVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            DecoderVariant::Mlp => "mlp",
            DecoderVariant::Rnn => "rnn",
        }
    }
}

impl std::str::FromStr for DecoderVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(DecoderVariant::Mlp),
            "rnn" => Ok(DecoderVariant::Rnn),
            other => Err(Error::Config(format!("unknown decoder `{other}` (expected mlp or rnn)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub variant: DecoderVariant,
    pub hidden: usize,
    /// Number of adjacency channels `m`.
    pub edge_types: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            variant: DecoderVariant::Rnn,
            hidden: 256,
            edge_types: 1,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::Config("decoder.hidden: must be at least 1".into()));
        }
        if self.edge_types == 0 {
            return Err(Error::Config("decoder.edge_types: must be at least 1".into()));
        }
        Ok(())
    }

    /// Number of message networks.
    pub fn transforms(&self) -> usize {
        if self.edge_types == 1 {
            1
        } else {
            self.edge_types - 1
        }
    }

    /// Adjacency channel that weights message network `k`.
    pub fn channel_of(&self, k: usize) -> usize {
        if self.edge_types == 1 {
            0
        } else {
            k + 1
        }
    }

    /// Every parameter name with its shape and initialization fan-in.
    /// A fan-in of zero marks a zero-initialized tensor.
    fn layout(&self) -> Vec<(String, Vec<usize>, usize)> {
        let h = self.hidden;
        let d = STATE_DIM;
        let msg_in = match self.variant {
            DecoderVariant::Mlp => d,
            DecoderVariant::Rnn => h,
        };
        let mut out = Vec::new();
        let mut linear = |name: &str, rows: usize, cols: usize, bias: bool, fan_in: usize| {
            out.push((format!("{name}.w"), vec![rows, cols], fan_in));
            if bias {
                out.push((format!("{name}.b"), vec![cols], fan_in));
            }
        };
        for k in 0..self.transforms() {
            // the two halves of one layer over the concatenated pair
            linear(&format!("msg{k}.fc1.recv"), msg_in, h, true, 2 * msg_in);
            linear(&format!("msg{k}.fc1.send"), msg_in, h, false, 2 * msg_in);
            linear(&format!("msg{k}.fc2"), h, h, true, h);
        }
        let out_in = match self.variant {
            DecoderVariant::Mlp => d + h,
            DecoderVariant::Rnn => {
                for gate in ["r", "i", "n"] {
                    linear(&format!("gru.input_{gate}"), d, h, true, d);
                }
                for gate in ["r", "i", "h"] {
                    linear(&format!("gru.hidden_{gate}"), h, h, false, h);
                }
                h
            }
        };
        linear("out.fc1", out_in, h, true, out_in);
        linear("out.fc2", h, h, true, h);
        linear("out.fc3", h, d, true, 0);
        out
    }

    pub fn expected_shapes(&self) -> BTreeMap<String, Vec<usize>> {
        self.layout().into_iter().map(|(n, s, _)| (n, s)).collect()
    }
}

/// Named decoder weights.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderParams {
    config: DecoderConfig,
    tensors: BTreeMap<String, Tensor>,
}

impl DecoderParams {
    /// Uniform `±1/sqrt(fan_in)` weights and biases; the final layer is zero.
    pub fn init(config: DecoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = config
            .layout()
            .into_iter()
            .map(|(name, shape, fan_in)| {
                let len: usize = shape.iter().product();
                let data = if fan_in == 0 {
                    vec![0.0; len]
                } else {
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    (0..len).map(|_| rng.random_range(-bound..bound)).collect()
                };
                (name, Tensor::from_parts(shape, data))
            })
            .collect();
        Ok(Self { config, tensors })
    }

    /// Wrap existing tensors, checking names and shapes against `config`.
    pub fn from_tensors(config: DecoderConfig, tensors: BTreeMap<String, Tensor>) -> Result<Self> {
        config.validate()?;
        check_shapes("decoder parameters", &config, &tensors)?;
        Ok(Self { config, tensors })
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.config
    }

    pub fn tensors(&self) -> &BTreeMap<String, Tensor> {
        &self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub(crate) fn tensors_mut(&mut self) -> &mut BTreeMap<String, Tensor> {
        &mut self.tensors
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// One decoder step for a single scene of `N` agents, without gradients.
    ///
    /// `states` is `[N, 4]`, `adjacency` is `[N, N, m]`. For the recurrent
    /// variant `hidden` is `[N, H]` (zeros when `None`) and the new hidden
    /// state is returned alongside the prediction.
    pub fn step(&self, states: &Tensor, adjacency: &Tensor, hidden: Option<&Tensor>) -> Result<(Tensor, Option<Tensor>)> {
        let n = states.shape()[0];
        let mut tape = Tape::new();
        let vars = self.constants(&mut tape)?;
        let adj = tape.constant(adjacency.clone())?;
        let graph = Graph::new(n, 1, &self.config)?;
        check_adjacency(adjacency, n, self.config.edge_types)?;
        if states.shape() != [n, STATE_DIM] {
            return Err(Error::dim("decoder_step", format!("states shape {:?}", states.shape())));
        }
        let x = tape.constant(states.clone())?;
        let h = match (self.config.variant, hidden) {
            (DecoderVariant::Rnn, Some(h)) => Some(tape.constant(h.clone())?),
            (DecoderVariant::Rnn, None) => Some(tape.constant(Tensor::zeros(&[n, self.config.hidden]))?),
            (DecoderVariant::Mlp, _) => None,
        };
        let bound = Bound::resolve(&self.config, &vars)?;
        let strengths = graph.strengths(&mut tape, adj)?;
        let (pred, h_next) = decoder_step(&mut tape, &bound, &graph, &strengths, x, h)?;
        Ok((tape.value(pred).clone(), h_next.map(|v| tape.value(v).clone())))
    }

    fn constants(&self, tape: &mut Tape) -> Result<BTreeMap<String, Var>> {
        self.tensors
            .iter()
            .map(|(k, v)| Ok((k.clone(), tape.constant(v.clone())?)))
            .collect()
    }
}

fn check_shapes(what: &str, config: &DecoderConfig, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
    let expected = config.expected_shapes();
    for (name, shape) in &expected {
        match tensors.get(name) {
            None => return Err(Error::Contract(format!("{what}: missing `{name}`"))),
            Some(t) if t.shape() != shape.as_slice() => {
                return Err(Error::dim(
                    "decoder_params",
                    format!("{what}: `{name}` has shape {:?}, expected {:?}", t.shape(), shape),
                ))
            }
            Some(_) => {}
        }
    }
    if let Some(extra) = tensors.keys().find(|k| !expected.contains_key(*k)) {
        return Err(Error::Contract(format!("{what}: unexpected `{extra}`")));
    }
    Ok(())
}

fn check_adjacency(adjacency: &Tensor, n: usize, m: usize) -> Result<()> {
    if adjacency.shape() != [n, n, m] {
        return Err(Error::dim(
            "decoder_step",
            format!("adjacency shape {:?}, expected [{n}, {n}, {m}]", adjacency.shape()),
        ));
    }
    Ok(())
}

/// Edge lists of a batch of `batch` independent scenes of `n` agents each,
/// numbered scene-major, all sharing one adjacency.
pub(crate) struct Graph {
    nodes: usize,
    edges: usize,
    recv: Arc<[usize]>,
    /// Flat gather indices selecting the receiver / sender row of a `[nodes, H]` matrix.
    recv_rows: Arc<[usize]>,
    send_rows: Arc<[usize]>,
    /// Flat adjacency indices per message network.
    strength_index: Vec<Arc<[usize]>>,
    hidden: usize,
}

impl Graph {
    pub(crate) fn new(n: usize, batch: usize, config: &DecoderConfig) -> Result<Self> {
        if n < 2 || batch == 0 {
            return Err(Error::dim("decoder_step", format!("need at least 2 agents, got {n}")));
        }
        let h = config.hidden;
        let m = config.edge_types;
        let mut recv = Vec::new();
        let mut send = Vec::new();
        let mut pairs = Vec::new();
        for b in 0..batch {
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        recv.push(b * n + i);
                        send.push(b * n + j);
                        pairs.push(i * n + j);
                    }
                }
            }
        }
        let rows = |idx: &[usize]| -> Arc<[usize]> { idx.iter().flat_map(|&r| r * h..(r + 1) * h).collect() };
        let strength_index = (0..config.transforms())
            .map(|k| {
                let c = config.channel_of(k);
                pairs.iter().map(|&p| p * m + c).collect()
            })
            .collect();
        Ok(Self {
            nodes: n * batch,
            edges: recv.len(),
            recv_rows: rows(&recv),
            send_rows: rows(&send),
            recv: recv.into(),
            strength_index,
            hidden: h,
        })
    }

    /// Per-edge strengths `[E, 1]` for each message network.
    pub(crate) fn strengths(&self, tape: &mut Tape, adjacency: Var) -> Result<Vec<Var>> {
        self.strength_index
            .iter()
            .map(|idx| tape.gather(adjacency, idx.clone(), vec![self.edges, 1]))
            .collect()
    }
}

struct Linear {
    w: Var,
    b: Option<Var>,
}

impl Linear {
    fn get(vars: &BTreeMap<String, Var>, name: &str, bias: bool) -> Result<Self> {
        let find = |key: String| {
            vars.get(&key)
                .copied()
                .ok_or_else(|| Error::Contract(format!("decoder parameter `{key}` not bound")))
        };
        Ok(Self {
            w: find(format!("{name}.w"))?,
            b: if bias { Some(find(format!("{name}.b"))?) } else { None },
        })
    }

    fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self.b {
            Some(b) => tape.affine(x, self.w, b),
            None => tape.matmul(x, self.w),
        }
    }
}

struct MessageNet {
    recv: Linear,
    send: Linear,
    fc2: Linear,
}

struct Gru {
    input: [Linear; 3],
    hidden: [Linear; 3],
}

/// Parameter handles resolved once per tape.
pub(crate) struct Bound {
    variant: DecoderVariant,
    messages: Vec<MessageNet>,
    gru: Option<Gru>,
    out: [Linear; 3],
}

impl Bound {
    pub(crate) fn resolve(config: &DecoderConfig, vars: &BTreeMap<String, Var>) -> Result<Self> {
        let messages = (0..config.transforms())
            .map(|k| {
                Ok(MessageNet {
                    recv: Linear::get(vars, &format!("msg{k}.fc1.recv"), true)?,
                    send: Linear::get(vars, &format!("msg{k}.fc1.send"), false)?,
                    fc2: Linear::get(vars, &format!("msg{k}.fc2"), true)?,
                })
            })
            .collect::<Result<_>>()?;
        let gru = match config.variant {
            DecoderVariant::Mlp => None,
            DecoderVariant::Rnn => Some(Gru {
                input: [
                    Linear::get(vars, "gru.input_r", true)?,
                    Linear::get(vars, "gru.input_i", true)?,
                    Linear::get(vars, "gru.input_n", true)?,
                ],
                hidden: [
                    Linear::get(vars, "gru.hidden_r", false)?,
                    Linear::get(vars, "gru.hidden_i", false)?,
                    Linear::get(vars, "gru.hidden_h", false)?,
                ],
            }),
        };
        Ok(Self {
            variant: config.variant,
            messages,
            gru,
            out: [
                Linear::get(vars, "out.fc1", true)?,
                Linear::get(vars, "out.fc2", true)?,
                Linear::get(vars, "out.fc3", true)?,
            ],
        })
    }
}

/// Summed incoming messages `[nodes, H]` computed from per-node features `src`.
fn aggregate(tape: &mut Tape, bound: &Bound, graph: &Graph, strengths: &[Var], src: Var) -> Result<Var> {
    let act = |tape: &mut Tape, v: Var| match bound.variant {
        DecoderVariant::Mlp => tape.relu(v),
        DecoderVariant::Rnn => tape.tanh(v),
    };
    let shape = vec![graph.edges, graph.hidden];
    let mut total = None;
    for (net, &s) in bound.messages.iter().zip(strengths) {
        let pr = net.recv.apply(tape, src)?;
        let ps = net.send.apply(tape, src)?;
        let er = tape.gather(pr, graph.recv_rows.clone(), shape.clone())?;
        let es = tape.gather(ps, graph.send_rows.clone(), shape.clone())?;
        let pre = tape.add(er, es)?;
        let a = act(tape, pre)?;
        let z = net.fc2.apply(tape, a)?;
        let msg = act(tape, z)?;
        let weighted = tape.scale_rows(msg, s)?;
        total = Some(match total {
            None => weighted,
            Some(t) => tape.add(t, weighted)?,
        });
    }
    let total = total.expect("at least one message network");
    tape.index_add(total, graph.recv.clone(), graph.nodes)
}

fn output(tape: &mut Tape, bound: &Bound, x: Var, features: Var) -> Result<Var> {
    let a = bound.out[0].apply(tape, features)?;
    let a = tape.relu(a)?;
    let b = bound.out[1].apply(tape, a)?;
    let b = tape.relu(b)?;
    let delta = bound.out[2].apply(tape, b)?;
    tape.add(x, delta)
}

/// Record one decoder step on `tape`.
///
/// `x` is `[nodes, 4]`; `hidden` must be present for the recurrent variant
/// and is ignored otherwise. Returns the prediction and the new hidden state.
pub(crate) fn decoder_step(
    tape: &mut Tape,
    bound: &Bound,
    graph: &Graph,
    strengths: &[Var],
    x: Var,
    hidden: Option<Var>,
) -> Result<(Var, Option<Var>)> {
    match (&bound.gru, hidden) {
        (None, _) => {
            let agg = aggregate(tape, bound, graph, strengths, x)?;
            let features = tape.concat(x, agg)?;
            Ok((output(tape, bound, x, features)?, None))
        }
        (Some(gru), Some(h)) => {
            let agg = aggregate(tape, bound, graph, strengths, h)?;
            let gate = |tape: &mut Tape, k: usize| -> Result<Var> {
                let a = gru.input[k].apply(tape, x)?;
                let b = gru.hidden[k].apply(tape, agg)?;
                tape.add(a, b)
            };
            let r = gate(tape, 0)?;
            let r = tape.sigmoid(r)?;
            let i = gate(tape, 1)?;
            let i = tape.sigmoid(i)?;
            let xn = gru.input[2].apply(tape, x)?;
            let hn = gru.hidden[2].apply(tape, agg)?;
            let rh = tape.mul(r, hn)?;
            let pre = tape.add(xn, rh)?;
            let cand = tape.tanh(pre)?;
            // (1 - i) * cand + i * h
            let diff = tape.sub(h, cand)?;
            let keep = tape.mul(i, diff)?;
            let h_next = tape.add(cand, keep)?;
            Ok((output(tape, bound, x, h_next)?, Some(h_next)))
        }
        (Some(_), None) => Err(Error::Contract("recurrent decoder step needs a hidden state".into())),
    }
}
