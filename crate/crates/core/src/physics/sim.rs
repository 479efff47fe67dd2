use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{SystemParams, TruthGraph};
use crate::error::{Error, Result};

/// Integrator and box settings shared by both systems.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Half-width of the reflective box; `None` disables the walls.
    pub box_half_width: Option<f64>,
    /// Internal integration step.
    pub dt: f64,
    /// Internal steps per stored step.
    pub substeps: usize,
    /// Distance floor inside the inverse-square law.
    pub r_min: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            box_half_width: Some(5.0),
            dt: 0.001,
            substeps: 100,
            r_min: 0.1,
        }
    }
}

impl SimConfig {
    pub fn dt_effective(&self) -> f64 {
        self.dt * self.substeps as f64
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) || self.substeps == 0 {
            return Err(Error::Config("integration step and substeps must be positive".into()));
        }
        if let Some(b) = self.box_half_width {
            if !(b > 0.0) {
                return Err(Error::Config(format!("box half-width must be positive, got {b}")));
            }
        }
        if !(self.r_min > 0.0) {
            return Err(Error::Config(format!("r_min must be positive, got {}", self.r_min)));
        }
        Ok(())
    }
}

/// Positions and velocities of every agent.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentState {
    pub positions: Vec<[f64; 2]>,
    pub velocities: Vec<[f64; 2]>,
}

impl AgentState {
    /// Gaussian positions with standard deviation `loc_std`; random velocity
    /// directions rescaled to speed `speed`.
    pub fn random<R: Rng + ?Sized>(n: usize, loc_std: f64, speed: f64, rng: &mut R) -> Self {
        let mut normal = || rng.sample::<f64, _>(StandardNormal);
        let positions = (0..n).map(|_| [normal() * loc_std, normal() * loc_std]).collect();
        let velocities = (0..n)
            .map(|_| {
                let v = [normal(), normal()];
                let norm = v[0].hypot(v[1]).max(f64::MIN_POSITIVE);
                [v[0] * speed / norm, v[1] * speed / norm]
            })
            .collect();
        Self {
            positions,
            velocities,
        }
    }

    pub fn n(&self) -> usize {
        self.positions.len()
    }

    /// Negate the chosen axes of both positions and velocities.
    pub fn flipped(&self, flip_x: bool, flip_y: bool) -> Self {
        let f = |p: &[f64; 2]| {
            [
                if flip_x { -p[0] } else { p[0] },
                if flip_y { -p[1] } else { p[1] },
            ]
        };
        Self {
            positions: self.positions.iter().map(f).collect(),
            velocities: self.velocities.iter().map(f).collect(),
        }
    }
}

/// Stored states, `steps × agents × (px, py, vx, vy)` in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    n: usize,
    dt_effective: f64,
    data: Vec<f64>,
}

impl Trajectory {
    pub fn new(n: usize, dt_effective: f64, data: Vec<f64>) -> Result<Self> {
        if n == 0 || data.is_empty() || data.len() % (n * 4) != 0 {
            return Err(Error::dim(
                "trajectory",
                format!("{} values do not form whole steps of {n} agents", data.len()),
            ));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("trajectory value {pos}")));
        }
        Ok(Self {
            n,
            dt_effective,
            data,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.n
    }

    pub fn steps(&self) -> usize {
        self.data.len() / (self.n * 4)
    }

    pub fn dt_effective(&self) -> f64 {
        self.dt_effective
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Flat `agents × 4` state at stored step `t`.
    pub fn state(&self, t: usize) -> &[f64] {
        let w = self.n * 4;
        &self.data[t * w..(t + 1) * w]
    }

    pub fn agent(&self, t: usize, i: usize) -> [f64; 4] {
        let s = &self.state(t)[i * 4..i * 4 + 4];
        [s[0], s[1], s[2], s[3]]
    }

    /// Steps `start .. start + len` as a new trajectory.
    pub fn window(&self, start: usize, len: usize) -> Self {
        let w = self.n * 4;
        Self {
            n: self.n,
            dt_effective: self.dt_effective,
            data: self.data[start * w..(start + len) * w].to_vec(),
        }
    }

    /// Negate the chosen axes in every stored state.
    pub fn flipped(&self, flip_x: bool, flip_y: bool) -> Self {
        let mut data = self.data.clone();
        for agent in data.chunks_mut(4) {
            if flip_x {
                agent[0] = -agent[0];
                agent[2] = -agent[2];
            }
            if flip_y {
                agent[1] = -agent[1];
                agent[3] = -agent[3];
            }
        }
        Self {
            n: self.n,
            dt_effective: self.dt_effective,
            data,
        }
    }
}

/// Run whichever system `graph` describes.
pub fn simulate(initial: &AgentState, graph: &TruthGraph, total_steps: usize, config: &SimConfig) -> Result<Trajectory> {
    match graph.params() {
        SystemParams::Springs { k } => simulate_springs(initial, graph, *k, total_steps, config),
        SystemParams::Charged { k_e, .. } => simulate_charged(initial, graph, *k_e, total_steps, config),
    }
}

/// Linear springs `F_ij = -k (r_i - r_j)` between connected agents.
pub fn simulate_springs(
    initial: &AgentState,
    graph: &TruthGraph,
    k: f64,
    total_steps: usize,
    config: &SimConfig,
) -> Result<Trajectory> {
    if !matches!(graph.params(), SystemParams::Springs { .. }) {
        return Err(Error::Contract("simulate_springs needs a springs graph".into()));
    }
    if !(k > 0.0) {
        return Err(Error::Config(format!("spring constant must be positive, got {k}")));
    }
    let n = check_agents(initial, graph)?;
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .filter(|&(i, j)| graph.edge(i, j))
        .collect();
    integrate(initial, total_steps, config, |pos, acc| {
        acc.iter_mut().for_each(|a| *a = [0.0, 0.0]);
        for &(i, j) in &pairs {
            let fx = k * (pos[j][0] - pos[i][0]);
            let fy = k * (pos[j][1] - pos[i][1]);
            acc[i][0] += fx;
            acc[i][1] += fy;
            acc[j][0] -= fx;
            acc[j][1] -= fy;
        }
    })
}

/// Inverse-square law `F_ij = k_e q_i q_j (r_i - r_j) / max(|r_i - r_j|, r_min)^3`
/// between every pair.
pub fn simulate_charged(
    initial: &AgentState,
    graph: &TruthGraph,
    k_e: f64,
    total_steps: usize,
    config: &SimConfig,
) -> Result<Trajectory> {
    let SystemParams::Charged { charges, .. } = graph.params() else {
        return Err(Error::Contract("simulate_charged needs a charged graph".into()));
    };
    if !(k_e > 0.0) {
        return Err(Error::Config(format!("charge constant must be positive, got {k_e}")));
    }
    let n = check_agents(initial, graph)?;
    let r_min = config.r_min;
    integrate(initial, total_steps, config, |pos, acc| {
        acc.iter_mut().for_each(|a| *a = [0.0, 0.0]);
        for i in 0..n {
            for j in i + 1..n {
                let dx = pos[i][0] - pos[j][0];
                let dy = pos[i][1] - pos[j][1];
                let r = (dx * dx + dy * dy).sqrt().max(r_min);
                let s = k_e * charges[i] * charges[j] / (r * r * r);
                acc[i][0] += s * dx;
                acc[i][1] += s * dy;
                acc[j][0] -= s * dx;
                acc[j][1] -= s * dy;
            }
        }
    })
}

fn check_agents(initial: &AgentState, graph: &TruthGraph) -> Result<usize> {
    let n = initial.n();
    if n != graph.n() || initial.velocities.len() != n {
        return Err(Error::dim(
            "simulate",
            format!("{n} agents in state, {} in graph", graph.n()),
        ));
    }
    Ok(n)
}

/// Velocity Verlet with reflective walls, storing every `substeps`-th state.
/// The initial state is stored as step 0.
fn integrate<F>(initial: &AgentState, total_steps: usize, config: &SimConfig, force: F) -> Result<Trajectory>
where
    F: Fn(&[[f64; 2]], &mut [[f64; 2]]),
{
    config.validate()?;
    if total_steps == 0 {
        return Err(Error::Config("total_steps must be at least 1".into()));
    }
    let n = initial.n();
    let dt = config.dt;
    let half = 0.5 * dt;
    let mut pos = initial.positions.clone();
    let mut vel = initial.velocities.clone();
    let mut acc = vec![[0.0; 2]; n];
    force(&pos, &mut acc);

    let mut data = Vec::with_capacity(total_steps * n * 4);
    let record = |data: &mut Vec<f64>, pos: &[[f64; 2]], vel: &[[f64; 2]]| {
        for (p, v) in pos.iter().zip(vel) {
            data.extend_from_slice(&[p[0], p[1], v[0], v[1]]);
        }
    };
    record(&mut data, &pos, &vel);
    for step in 1..total_steps {
        for _ in 0..config.substeps {
            for (v, a) in vel.iter_mut().zip(&acc) {
                v[0] += half * a[0];
                v[1] += half * a[1];
            }
            for (p, v) in pos.iter_mut().zip(vel.iter_mut()) {
                p[0] += dt * v[0];
                p[1] += dt * v[1];
                if let Some(b) = config.box_half_width {
                    for d in 0..2 {
                        reflect(&mut p[d], &mut v[d], b);
                    }
                }
            }
            force(&pos, &mut acc);
            for (v, a) in vel.iter_mut().zip(&acc) {
                v[0] += half * a[0];
                v[1] += half * a[1];
            }
        }
        let start = data.len();
        record(&mut data, &pos, &vel);
        if data[start..].iter().any(|x| !x.is_finite()) {
            return Err(Error::Diverged { step });
        }
    }
    Trajectory::new(n, config.dt_effective(), data)
}

fn reflect(p: &mut f64, v: &mut f64, b: f64) {
    if *p > b {
        *p = 2.0 * b - *p;
        *v = -v.abs();
    } else if *p < -b {
        *p = -2.0 * b - *p;
        *v = v.abs();
    }
}
