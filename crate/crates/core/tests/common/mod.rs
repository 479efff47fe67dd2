#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use relinfer_core::decoder::{build_rollout, DecoderConfig, DecoderParams, DecoderVariant, RolloutBatch, ADJACENCY_LEAF};
use relinfer_core::diffengine::{finite_diff_check, Leaves, Tape, Tensor, Var};
use relinfer_core::physics::{
    sample_interaction_graph, simulate, AgentState, SimConfig, Trajectory, TruthGraph,
};
use relinfer_core::relation::{next_eta, AdaRelationConfig, AdjacencyParam};
use relinfer_core::Result;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let len = shape.iter().product();
    let data = (0..len).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Values in `[lo, hi]` with random sign, so nothing sits near a kink at 0.
pub fn signed(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let len = shape.iter().product();
    let data = (0..len)
        .map(|_| {
            let v = rng.random_range(lo..hi);
            if rng.random::<bool>() { v } else { -v }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn leaves(items: Vec<(&str, Tensor)>) -> Leaves {
    items.into_iter().map(|(n, t)| (n.to_string(), t)).collect()
}

/// Reduce `out` against a constant target well below it, so the upstream
/// gradient never changes sign or vanishes.
fn reduce(tape: &mut Tape, out: Var) -> Result<Var> {
    let target = Tensor::filled(tape.value(out).shape(), -5.0);
    let t = tape.constant(target)?;
    tape.mse(out, t)
}

pub const FD_STEP: f64 = 1e-6;

/// Worst finite-difference relative error per primitive, on inputs drawn from `seed`.
pub fn primitive_errors(seed: u64) -> Vec<(&'static str, f64)> {
    let mut r = rng(seed);
    let rows = r.random_range(2..5usize);
    let inner = r.random_range(2..5usize);
    let cols = r.random_range(2..5usize);
    let mut out = Vec::new();
    let mut check = |name: &'static str, l: Leaves, f: &dyn Fn(&mut Tape, &BTreeMap<String, Var>) -> Result<Var>| {
        let err = finite_diff_check(|t, v| f(t, v), &l, FD_STEP).unwrap();
        out.push((name, err));
    };

    let a = uniform(&mut r, &[rows, inner], 0.5, 1.5);
    let b = uniform(&mut r, &[inner, cols], 0.5, 1.5);
    let bias = uniform(&mut r, &[cols], 0.5, 1.5);
    check("matmul", leaves(vec![("a", a.clone()), ("b", b.clone())]), &|t, v| {
        let y = t.matmul(v["a"], v["b"])?;
        reduce(t, y)
    });
    check(
        "affine",
        leaves(vec![("x", a.clone()), ("w", b.clone()), ("b", bias)]),
        &|t, v| {
            let y = t.affine(v["x"], v["w"], v["b"])?;
            reduce(t, y)
        },
    );
    let c = uniform(&mut r, &[rows, cols], 0.5, 1.5);
    check("concat", leaves(vec![("a", a.clone()), ("c", c.clone())]), &|t, v| {
        let y = t.concat(v["a"], v["c"])?;
        reduce(t, y)
    });
    let x = signed(&mut r, &[rows, cols], 0.1, 2.0);
    check("tanh", leaves(vec![("x", x.clone())]), &|t, v| {
        let y = t.tanh(v["x"])?;
        reduce(t, y)
    });
    check("relu", leaves(vec![("x", x.clone())]), &|t, v| {
        let y = t.relu(v["x"])?;
        reduce(t, y)
    });
    check("sigmoid", leaves(vec![("x", x.clone())]), &|t, v| {
        let y = t.sigmoid(v["x"])?;
        reduce(t, y)
    });
    let y0 = uniform(&mut r, &[rows, cols], 0.5, 1.5);
    let pair = || leaves(vec![("x", c.clone()), ("y", y0.clone())]);
    check("add", pair(), &|t, v| {
        let y = t.add(v["x"], v["y"])?;
        reduce(t, y)
    });
    check("sub", pair(), &|t, v| {
        let y = t.sub(v["x"], v["y"])?;
        reduce(t, y)
    });
    check("mul", pair(), &|t, v| {
        let y = t.mul(v["x"], v["y"])?;
        reduce(t, y)
    });
    let factor = r.random_range(0.5..2.0);
    check("scale", pair(), &move |t, v| {
        let y = t.scale(v["x"], factor)?;
        reduce(t, y)
    });
    let s = uniform(&mut r, &[rows, 1], 0.5, 1.5);
    check("scale_rows", leaves(vec![("x", c.clone()), ("s", s)]), &|t, v| {
        let y = t.scale_rows(v["x"], v["s"])?;
        reduce(t, y)
    });
    let picks: Vec<usize> = (0..2 * rows).map(|_| r.random_range(0..rows * cols)).collect();
    let index: Arc<[usize]> = picks.into();
    let gather_shape = vec![2 * rows, 1];
    check("gather", leaves(vec![("x", c.clone())]), &|t, v| {
        let y = t.gather(v["x"], index.clone(), gather_shape.clone())?;
        reduce(t, y)
    });
    let row_picks: Vec<usize> = (0..rows + 1).map(|_| r.random_range(0..rows)).collect();
    check("gather_rows", leaves(vec![("x", c.clone())]), &|t, v| {
        let y = t.gather_rows(v["x"], &row_picks)?;
        reduce(t, y)
    });
    let targets: Arc<[usize]> = (0..rows).map(|_| r.random_range(0..3)).collect::<Vec<_>>().into();
    check("index_add", leaves(vec![("x", c.clone())]), &|t, v| {
        let y = t.index_add(v["x"], targets.clone(), 3)?;
        reduce(t, y)
    });
    for axis in 0..2 {
        check("sum_axis", leaves(vec![("x", c.clone())]), &move |t, v| {
            let y = t.sum_axis(v["x"], axis)?;
            reduce(t, y)
        });
    }
    let shifted = c.map(|v| v - 3.0);
    check("mse", leaves(vec![("a", c.clone()), ("b", shifted)]), &|t, v| t.mse(v["a"], v["b"]));
    out
}

/// Decoder weights drawn uniformly from `±scale`, including the output
/// layer that is zero at initialization.
pub fn random_params(config: DecoderConfig, r: &mut ChaCha8Rng, scale: f64) -> DecoderParams {
    let tensors = config
        .expected_shapes()
        .into_iter()
        .map(|(name, shape)| {
            let t = uniform(r, &shape, -scale, scale);
            (name, t)
        })
        .collect();
    DecoderParams::from_tensors(config, tensors).unwrap()
}

/// A short springs trajectory with `2 * window` stored steps.
pub fn springs_pair(n: usize, window: usize, r: &mut ChaCha8Rng) -> (Trajectory, Trajectory, TruthGraph) {
    let graph = sample_interaction_graph(n, 0.5, 0.1, r).unwrap();
    let init = AgentState::random(n, 0.5, 0.5, r);
    let sim = SimConfig {
        substeps: 20,
        ..SimConfig::default()
    };
    let traj = simulate(&init, &graph, 2 * window, &sim).unwrap();
    (traj.window(0, window), traj.window(window, window), graph)
}

/// Finite-difference check of a full rollout over every decoder weight and
/// the adjacency, 3 agents and a window of 5.
///
/// Weights are random in `±0.5` except the output layer, which is scaled
/// down to `±0.005`: the decoder starts from a zero output layer, so training
/// lives near the identity map. With a large output layer the loss grows and
/// forward roundoff swamps central differences on components below 1e-7.
pub fn rollout_fd_error(seed: u64, variant: DecoderVariant) -> f64 {
    let mut r = rng(seed);
    let config = DecoderConfig {
        variant,
        hidden: 6,
        edge_types: 1,
    };
    let params = random_params(config, &mut r, 0.5);
    let tensors = params
        .tensors()
        .iter()
        .map(|(k, v)| {
            let v = if k.starts_with("out.fc3") { v.map(|x| x * 0.01) } else { v.clone() };
            (k.clone(), v)
        })
        .collect();
    let params = DecoderParams::from_tensors(config, tensors).unwrap();
    let (obs, target, _) = springs_pair(3, 5, &mut r);
    let batch = RolloutBatch::new(&[(&obs, &target)]).unwrap();
    let mut l: Leaves = params.tensors().clone();
    l.insert(ADJACENCY_LEAF.to_string(), uniform(&mut r, &[3, 3, 1], 0.1, 0.9));
    finite_diff_check(
        |tape, vars| {
            let mut p = vars.clone();
            let adj = p.remove(ADJACENCY_LEAF).unwrap();
            let (loss, _) = build_rollout(tape, &p, adj, &config, &batch)?;
            Ok(loss)
        },
        &l,
        FD_STEP,
    )
    .unwrap()
}

/// Mean absolute difference between two flat arrays.
pub fn mean_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

/// Correct off-diagonal classifications and the pair count. One type
/// thresholds at 0.5; several types take the first maximal type, 0 = no edge.
pub fn accuracy_oracle(values: &[f64], truth: &[u8], n: usize, m: usize) -> (usize, usize) {
    let mut correct = 0;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let cell = &values[(i * n + j) * m..(i * n + j + 1) * m];
            let edge = if m == 1 {
                cell[0] >= 0.5
            } else {
                let top = cell.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                cell.iter().position(|&v| v == top).unwrap() != 0
            };
            if edge == (truth[i * n + j] == 1) {
                correct += 1;
            }
        }
    }
    (correct, n * (n - 1))
}

/// A random adjacency walk: `(adjacency, every state it passed through)`.
fn random_walk(r: &mut ChaCha8Rng, n: usize, m: usize, cfg: &AdaRelationConfig, steps: usize) -> (AdjacencyParam, Vec<Vec<f64>>) {
    let mut adj = AdjacencyParam::filled(n, m, r.random_range(0.0..=1.0), cfg).unwrap();
    let mut past = vec![adj.values().to_vec()];
    for _ in 0..steps {
        adj.update(&uniform(r, &[n, n, m], -1.0, 1.0)).unwrap();
        past.push(adj.values().to_vec());
    }
    (adj, past)
}

/// Largest gap between `deviation()` and a recomputation against the state
/// `window` updates back (or the first state), over a random walk.
pub fn deviation_trial(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (n, m) = (r.random_range(2..7), r.random_range(1..4));
    let cfg = AdaRelationConfig {
        window: r.random_range(1..8),
        ..AdaRelationConfig::constant(r.random_range(0.01..0.5))
    };
    let mut adj = AdjacencyParam::filled(n, m, 0.5, &cfg).unwrap();
    let mut past = vec![adj.values().to_vec()];
    let mut worst = 0.0f64;
    for _ in 0..r.random_range(0..25) {
        let oldest = &past[past.len().saturating_sub(cfg.window + 1)];
        worst = worst.max((adj.deviation() - mean_abs_diff(adj.values(), oldest)).abs());
        adj.update(&uniform(&mut r, &[n, n, m], -1.0, 1.0)).unwrap();
        past.push(adj.values().to_vec());
    }
    let oldest = &past[past.len().saturating_sub(cfg.window + 1)];
    worst.max((adj.deviation() - mean_abs_diff(adj.values(), oldest)).abs())
}

/// Whether `relation_accuracy` equals the brute-force count exactly.
pub fn accuracy_trial(seed: u64) -> bool {
    let mut r = rng(seed);
    let (n, m) = (r.random_range(2..8), r.random_range(1..4));
    let cfg = AdaRelationConfig::constant(r.random_range(0.01..0.5));
    let steps = r.random_range(0..4);
    let (adj, _) = random_walk(&mut r, n, m, &cfg, steps);
    let truth = sample_interaction_graph(n, r.random_range(0.0..=1.0), 0.1, &mut r).unwrap();
    let (correct, total) = accuracy_oracle(adj.values(), truth.edges(), n, m);
    adj.relation_accuracy(&truth).unwrap() == correct as f64 / total as f64
}

/// Whether the controller follows `eta <- clip(eta -/+ alpha)` bit for bit,
/// both as a pure recurrence over a random deviation series and inside
/// `adarelation_step` on a random walk.
pub fn controller_trial(seed: u64) -> bool {
    let mut r = rng(seed);
    let lo = r.random_range(1.0..50.0);
    let cfg = AdaRelationConfig {
        epsilon: r.random_range(0.0..0.2),
        alpha: if r.random::<bool>() { 0.0 } else { r.random_range(0.1..20.0) },
        eta_min: lo,
        eta_max: lo + r.random_range(0.0..60.0),
        window: r.random_range(1..10),
        eta_init: r.random_range(0.5..120.0),
    };
    let oracle = |d: f64, eta: f64| {
        let moved = if d > cfg.epsilon { eta - cfg.alpha } else { eta + cfg.alpha };
        moved.max(cfg.eta_min).min(cfg.eta_max)
    };
    let mut eta = cfg.eta_init;
    for _ in 0..200 {
        let d = match r.random_range(0..4) {
            0 => cfg.epsilon,
            _ => r.random_range(0.0..0.4),
        };
        let want = oracle(d, eta);
        if next_eta(d, eta, &cfg) != want {
            return false;
        }
        eta = want;
    }
    // step sizes small enough that the walk produces deviations on both sides of epsilon
    let scaled = AdaRelationConfig { eta_min: lo * 1e-4, eta_max: (lo + 60.0) * 1e-4, eta_init: lo * 1e-4, alpha: cfg.alpha * 1e-4, ..cfg };
    let (n, m) = (r.random_range(2..6), r.random_range(1..3));
    let mut adj = AdjacencyParam::filled(n, m, 0.5, &scaled).unwrap();
    let mut past = vec![adj.values().to_vec()];
    let mut eta = scaled.eta_init;
    for _ in 0..60 {
        let oldest = &past[past.len().saturating_sub(scaled.window + 1)];
        let d = mean_abs_diff(adj.values(), oldest);
        let moved = if d > scaled.epsilon { eta - scaled.alpha } else { eta + scaled.alpha };
        eta = moved.max(scaled.eta_min).min(scaled.eta_max);
        let (got_d, got_eta) = adj.adarelation_step(&scaled);
        if (got_d - d).abs() > 1e-15 || got_eta != eta || adj.eta() != eta {
            return false;
        }
        adj.update(&uniform(&mut r, &[n, n, m], -400.0, 400.0)).unwrap();
        past.push(adj.values().to_vec());
    }
    true
}

pub fn dissimilarity_oracle(a: &[u8], b: &[u8], n: usize) -> (usize, usize) {
    let mut differing = 0;
    for i in 0..n {
        for j in 0..n {
            if i != j && a[i * n + j] != b[i * n + j] {
                differing += 1;
            }
        }
    }
    (differing, n * (n - 1))
}
