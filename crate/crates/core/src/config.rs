//! Run configuration: a flat `key = value` text format and the named presets.
//!
//! ```text
//! # comments start with '#'
//! scenario.agents = 5
//! adarelation.eta_min = 20
//! scenario.spring_k = [0.1, 0.2]
//! ```
//!
//! Keys not listed in [`KEYS`] are rejected with the nearest valid key as a
//! suggestion. [`dump_config`] writes every key, and parsing that output
//! reproduces the configuration exactly.

use std::path::PathBuf;

use sha2::{Digest, Sha256};

use crate::decoder::{DecoderConfig, DecoderVariant};
use crate::error::{Error, Result};
use crate::physics::{DynamicsSchedule, ScenarioConfig};
use crate::relation::AdaRelationConfig;
use crate::trainer::TrainerConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Write every `log_every`-th iteration to the metrics CSV.
    pub log_every: usize,
    pub dump_trajectories: bool,
    pub checkpoint: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs"),
            log_every: 1,
            dump_trajectories: false,
            checkpoint: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    pub trainer: TrainerConfig,
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.trainer.validate()?;
        if self.output.log_every == 0 {
            return Err(Error::Config("output.log_every: must be at least 1".into()));
        }
        Ok(())
    }

    /// Seed both the scenario stream and the decoder initialization.
    pub fn set_seed(&mut self, seed: u64) {
        self.scenario.seed = seed;
        self.trainer.decoder_seed = seed;
    }

    /// Fixed adjacency learning rate: no adaptation, both bounds at `eta`.
    pub fn set_constant_lr(&mut self, eta: f64) {
        let window = self.trainer.adarelation.window;
        let epsilon = self.trainer.adarelation.epsilon;
        self.trainer.adarelation = AdaRelationConfig {
            window,
            epsilon,
            ..AdaRelationConfig::constant(eta)
        };
    }

    /// Change the sample stride, keeping the number of samples per segment.
    pub fn set_stride(&mut self, stride: usize) {
        let samples = self.scenario.samples_per_segment();
        self.scenario.stride = stride;
        if self.scenario.segment_steps.is_empty() {
            if let Some(&first) = samples.first() {
                self.scenario.steps_per_segment = self.scenario.steps_for_samples(first);
            }
        } else {
            self.scenario.segment_steps = samples.iter().map(|&s| self.scenario.steps_for_samples(s)).collect();
        }
    }
}

/// Every accepted key, in dump order.
pub const KEYS: &[&str] = &[
    "scenario.agents",
    "scenario.segments",
    "scenario.steps_per_segment",
    "scenario.segment_steps",
    "scenario.edge_probability",
    "scenario.spring_k",
    "scenario.charge_ke",
    "scenario.dynamics",
    "scenario.charge_labeling",
    "scenario.window",
    "scenario.stride",
    "scenario.seed",
    "scenario.loc_std",
    "scenario.vel_norm",
    "sim.box_half_width",
    "sim.dt",
    "sim.substeps",
    "sim.r_min",
    "decoder.variant",
    "decoder.hidden",
    "decoder.edge_types",
    "decoder.lr",
    "decoder.seed",
    "adarelation.epsilon",
    "adarelation.alpha",
    "adarelation.eta_min",
    "adarelation.eta_max",
    "adarelation.eta_init",
    "adarelation.window",
    "training.trajectory_mirror",
    "output.dir",
    "output.log_every",
    "output.wall_time",
    "output.dump_trajectories",
    "output.checkpoint",
];

fn get(cfg: &RunConfig, key: &str) -> String {
    let s = &cfg.scenario;
    let t = &cfg.trainer;
    let a = &t.adarelation;
    let o = &cfg.output;
    match key {
        "scenario.agents" => s.agents.to_string(),
        "scenario.segments" => s.segments.to_string(),
        "scenario.steps_per_segment" => s.steps_per_segment.to_string(),
        "scenario.segment_steps" => list(&s.segment_steps),
        "scenario.edge_probability" => s.edge_probability.to_string(),
        "scenario.spring_k" => list(&s.spring_k),
        "scenario.charge_ke" => list(&s.charge_ke),
        "scenario.dynamics" => s.dynamics.to_string(),
        "scenario.charge_labeling" => s.charge_labeling.as_str().to_string(),
        "scenario.window" => s.window.to_string(),
        "scenario.stride" => s.stride.to_string(),
        "scenario.seed" => s.seed.to_string(),
        "scenario.loc_std" => s.loc_std.to_string(),
        "scenario.vel_norm" => s.vel_norm.to_string(),
        "sim.box_half_width" => s.sim.box_half_width.map_or("none".to_string(), |b| b.to_string()),
        "sim.dt" => s.sim.dt.to_string(),
        "sim.substeps" => s.sim.substeps.to_string(),
        "sim.r_min" => s.sim.r_min.to_string(),
        "decoder.variant" => t.decoder.variant.as_str().to_string(),
        "decoder.hidden" => t.decoder.hidden.to_string(),
        "decoder.edge_types" => t.decoder.edge_types.to_string(),
        "decoder.lr" => t.decoder_lr.to_string(),
        "decoder.seed" => t.decoder_seed.to_string(),
        "adarelation.epsilon" => a.epsilon.to_string(),
        "adarelation.alpha" => a.alpha.to_string(),
        "adarelation.eta_min" => a.eta_min.to_string(),
        "adarelation.eta_max" => a.eta_max.to_string(),
        "adarelation.eta_init" => a.eta_init.to_string(),
        "adarelation.window" => a.window.to_string(),
        "training.trajectory_mirror" => t.trajectory_mirror.to_string(),
        "output.dir" => o.dir.display().to_string(),
        "output.log_every" => o.log_every.to_string(),
        "output.wall_time" => t.wall_time.to_string(),
        "output.dump_trajectories" => o.dump_trajectories.to_string(),
        "output.checkpoint" => o.checkpoint.to_string(),
        _ => unreachable!("key list and getter out of sync: {key}"),
    }
}

fn set(cfg: &mut RunConfig, key: &str, v: &str) -> std::result::Result<(), String> {
    let s = &mut cfg.scenario;
    let t = &mut cfg.trainer;
    let a = &mut t.adarelation;
    let o = &mut cfg.output;
    match key {
        "scenario.agents" => s.agents = num(v)?,
        "scenario.segments" => s.segments = num(v)?,
        "scenario.steps_per_segment" => s.steps_per_segment = num(v)?,
        "scenario.segment_steps" => s.segment_steps = parse_list(v)?,
        "scenario.edge_probability" => s.edge_probability = num(v)?,
        "scenario.spring_k" => s.spring_k = pair(v)?,
        "scenario.charge_ke" => s.charge_ke = pair(v)?,
        "scenario.dynamics" => s.dynamics = v.parse::<DynamicsSchedule>().map_err(|e| e.to_string())?,
        "scenario.charge_labeling" => s.charge_labeling = v.parse().map_err(|e: Error| e.to_string())?,
        "scenario.window" => s.window = num(v)?,
        "scenario.stride" => s.stride = num(v)?,
        "scenario.seed" => s.seed = num(v)?,
        "scenario.loc_std" => s.loc_std = num(v)?,
        "scenario.vel_norm" => s.vel_norm = num(v)?,
        "sim.box_half_width" => {
            s.sim.box_half_width = if v == "none" { None } else { Some(num(v)?) };
        }
        "sim.dt" => s.sim.dt = num(v)?,
        "sim.substeps" => s.sim.substeps = num(v)?,
        "sim.r_min" => s.sim.r_min = num(v)?,
        "decoder.variant" => t.decoder.variant = v.parse::<DecoderVariant>().map_err(|e| e.to_string())?,
        "decoder.hidden" => t.decoder.hidden = num(v)?,
        "decoder.edge_types" => t.decoder.edge_types = num(v)?,
        "decoder.lr" => t.decoder_lr = num(v)?,
        "decoder.seed" => t.decoder_seed = num(v)?,
        "adarelation.epsilon" => a.epsilon = num(v)?,
        "adarelation.alpha" => a.alpha = num(v)?,
        "adarelation.eta_min" => a.eta_min = num(v)?,
        "adarelation.eta_max" => a.eta_max = num(v)?,
        "adarelation.eta_init" => a.eta_init = num(v)?,
        "adarelation.window" => a.window = num(v)?,
        "training.trajectory_mirror" => t.trajectory_mirror = boolean(v)?,
        "output.dir" => o.dir = PathBuf::from(v),
        "output.log_every" => o.log_every = num(v)?,
        "output.wall_time" => t.wall_time = boolean(v)?,
        "output.dump_trajectories" => o.dump_trajectories = boolean(v)?,
        "output.checkpoint" => o.checkpoint = boolean(v)?,
        _ => unreachable!("key list and setter out of sync: {key}"),
    }
    Ok(())
}

fn num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| format!("invalid number `{v}`: {e}"))
}

fn boolean(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false, got `{v}`")),
    }
}

fn list<T: ToString>(items: &[T]) -> String {
    let parts: Vec<String> = items.iter().map(T::to_string).collect();
    format!("[{}]", parts.join(", "))
}

fn parse_list<T: std::str::FromStr>(v: &str) -> std::result::Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    let inner = v
        .strip_prefix('[')
        .and_then(|r| r.strip_suffix(']'))
        .ok_or_else(|| format!("expected a bracketed list, got `{v}`"))?;
    if inner.trim().is_empty() {
        return Ok(Vec::new());
    }
    inner.split(',').map(|p| num(p.trim())).collect()
}

fn pair(v: &str) -> std::result::Result<[f64; 2], String> {
    let items: Vec<f64> = parse_list(v)?;
    <[f64; 2]>::try_from(items).map_err(|_| format!("expected [lo, hi], got `{v}`"))
}

fn suggest(key: &str) -> Option<String> {
    KEYS.iter()
        .map(|k| (strsim::levenshtein(key, k), *k))
        .min()
        .filter(|(d, _)| *d <= 4)
        .map(|(_, k)| k.to_string())
}

/// Apply `key = value` lines from `text` on top of `base` and validate.
pub fn parse_config(text: &str, base: RunConfig) -> Result<RunConfig> {
    let mut cfg = base;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = strip_comment(raw);
        if content.trim().is_empty() {
            continue;
        }
        let indent = content.len() - content.trim_start().len();
        let Some(eq) = content.find('=') else {
            return Err(Error::Parse {
                line,
                column: indent + 1,
                message: "expected `key = value`".into(),
            });
        };
        let key = content[..eq].trim();
        if key.is_empty() {
            return Err(Error::Parse {
                line,
                column: indent + 1,
                message: "missing key before `=`".into(),
            });
        }
        if !KEYS.contains(&key) {
            return Err(Error::UnknownKey {
                key: key.to_string(),
                line,
                suggestion: suggest(key),
            });
        }
        let rest = &content[eq + 1..];
        let value = rest.trim();
        let column = eq + 2 + (rest.len() - rest.trim_start().len());
        set(&mut cfg, key, value).map_err(|message| Error::Parse {
            line,
            column,
            message: format!("{key}: {message}"),
        })?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// `#` starts a comment at the beginning of a line or after whitespace.
fn strip_comment(line: &str) -> &str {
    let bytes = line.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        if b == b'#' && (i == 0 || bytes[i - 1].is_ascii_whitespace()) {
            return &line[..i];
        }
    }
    line
}

pub fn dump_config(cfg: &RunConfig) -> String {
    let mut out = String::new();
    let mut section = "";
    for key in KEYS {
        let prefix = key.split('.').next().unwrap_or("");
        if prefix != section {
            if !section.is_empty() {
                out.push('\n');
            }
            section = prefix;
        }
        out.push_str(&format!("{key} = {}\n", get(cfg, key)));
    }
    out
}

/// SHA-256 of the dumped configuration, hex encoded.
pub fn config_hash(cfg: &RunConfig) -> String {
    let digest = Sha256::digest(dump_config(cfg).as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub const PRESETS: &[&str] = &[
    "springs-evolving-relation",
    "charged-evolving-relation",
    "springs-evolving-relation-parameter",
    "charged-evolving-relation-parameter",
    "mixed-evolving-dynamics",
    "irregular-evolution-case1",
    "irregular-evolution-case2",
    "irregular-evolution-case3",
    "irregular-evolution-case4",
    "irregular-evolution-case5",
];

/// Segment lengths of the irregular cases, in thousands of iterations.
const IRREGULAR: [[usize; 10]; 5] = [
    [1, 1, 1, 2, 2, 2, 2, 3, 3, 3],
    [3, 3, 3, 2, 2, 2, 2, 1, 1, 1],
    [1, 3, 2, 2, 1, 3, 2, 3, 1, 2],
    [2, 3, 1, 3, 2, 2, 1, 2, 3, 1],
    [3, 1, 1, 2, 3, 2, 2, 1, 3, 2],
];

/// Samples per segment at desk scale for the regular presets.
pub const DESK_SAMPLES: usize = 600;

/// Resolve a named preset. `desk` shrinks only sizes: agent count, segment
/// count and length, and hidden width.
pub fn preset(name: &str, desk: bool) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let s = &mut cfg.scenario;
    match name {
        "springs-evolving-relation" => {}
        "charged-evolving-relation" => s.dynamics = DynamicsSchedule::Charged,
        "springs-evolving-relation-parameter" => s.spring_k = [0.1, 0.2],
        "charged-evolving-relation-parameter" => {
            s.dynamics = DynamicsSchedule::Charged;
            s.charge_ke = [1.0, 2.0];
        }
        "mixed-evolving-dynamics" => s.dynamics = DynamicsSchedule::RandomPerSegment,
        _ => {
            let case = name
                .strip_prefix("irregular-evolution-case")
                .and_then(|c| c.parse::<usize>().ok())
                .filter(|c| (1..=5).contains(c))
                .ok_or_else(|| unknown_preset(name))?;
            let per_unit = if desk { 100 } else { 1000 };
            let lengths = IRREGULAR[case - 1].map(|k| s.steps_for_samples(k * per_unit));
            s.segment_steps = lengths.to_vec();
        }
    }
    if desk {
        s.agents = 5;
        if s.segment_steps.is_empty() {
            s.segments = 4;
            s.steps_per_segment = s.steps_for_samples(DESK_SAMPLES);
        }
        cfg.trainer.decoder.hidden = 64;
    }
    cfg.trainer.decoder = DecoderConfig {
        variant: DecoderVariant::Rnn,
        ..cfg.trainer.decoder
    };
    Ok(cfg)
}

fn unknown_preset(name: &str) -> Error {
    let nearest = PRESETS
        .iter()
        .map(|p| (strsim::levenshtein(name, p), *p))
        .min()
        .map(|(_, p)| p)
        .unwrap_or_default();
    Error::Config(format!("unknown preset `{name}` (nearest: `{nearest}`)"))
}
