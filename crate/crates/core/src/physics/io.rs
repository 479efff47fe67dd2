//! JSON-Lines trajectory files: one header record, then one record per stored step.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::sim::Trajectory;
use super::{SystemKind, SystemParams, TruthGraph};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryHeader {
    pub n: usize,
    pub dt_effective: f64,
    pub system_tag: SystemKind,
    pub edges: Vec<Vec<u8>>,
    pub params: SystemParams,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StepRecord {
    t: usize,
    agents: Vec<[f64; 4]>,
}

pub fn write_trajectory_jsonl(path: &Path, trajectory: &Trajectory, truth: &TruthGraph) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let header = TrajectoryHeader {
        n: trajectory.n_agents(),
        dt_effective: trajectory.dt_effective(),
        system_tag: truth.system(),
        edges: truth.edge_rows(),
        params: truth.params().clone(),
    };
    let mut write_line = |line: String| writeln!(out, "{line}").map_err(|e| Error::io(path, e));
    write_line(serde_json::to_string(&header)?)?;
    for t in 0..trajectory.steps() {
        let record = StepRecord {
            t,
            agents: (0..trajectory.n_agents()).map(|i| trajectory.agent(t, i)).collect(),
        };
        write_line(serde_json::to_string(&record)?)?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Read a trajectory file. Errors name the offending 1-based line.
pub fn read_trajectory_jsonl(path: &Path) -> Result<(Trajectory, TruthGraph)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let fail = |line: usize, message: String| Error::Ingest {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = BufReader::new(file).lines().enumerate();
    let (_, first) = lines.next().ok_or_else(|| fail(1, "empty file".into()))?;
    let first = first.map_err(|e| Error::io(path, e))?;
    let header: TrajectoryHeader =
        serde_json::from_str(&first).map_err(|e| fail(1, format!("bad header: {e}")))?;
    let truth = TruthGraph::from_parts(header.edges.clone(), header.params.clone())
        .map_err(|e| fail(1, e.to_string()))?;
    if truth.n() != header.n || truth.system() != header.system_tag {
        return Err(fail(1, "header fields disagree with edges or params".into()));
    }

    let mut data = Vec::new();
    let mut expected_t = 0;
    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: StepRecord = serde_json::from_str(&line).map_err(|e| fail(lineno, e.to_string()))?;
        if rec.t != expected_t {
            return Err(fail(lineno, format!("expected t = {expected_t}, got {}", rec.t)));
        }
        if rec.agents.len() != header.n {
            return Err(fail(
                lineno,
                format!("expected {} agents, got {}", header.n, rec.agents.len()),
            ));
        }
        if rec.agents.iter().flatten().any(|v| !v.is_finite()) {
            return Err(fail(lineno, "non-finite state".into()));
        }
        data.extend(rec.agents.iter().flatten());
        expected_t += 1;
    }
    if expected_t == 0 {
        return Err(fail(2, "no step records".into()));
    }
    let trajectory = Trajectory::new(header.n, header.dt_effective, data)?;
    Ok((trajectory, truth))
}
