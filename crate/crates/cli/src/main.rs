use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use relinfer_core::config::{config_hash, dump_config, parse_config, preset, RunConfig};
use relinfer_core::decoder::save_checkpoint;
use relinfer_core::physics::{
    make_scenario_stream, read_trajectory_jsonl, samples_from_trajectory, write_trajectory_jsonl, Sample, SystemKind,
    SystemParams,
};
use relinfer_core::relation::AdjacencySnapshot;
use relinfer_core::trainer::{run_online, write_summary_json, MetricsWriter};
use relinfer_core::{Error, Result};

/// Online relational inference on streaming multi-agent trajectories.
#[derive(Parser)]
#[command(name = "relinfer", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train online on a simulated or ingested stream and write metrics.
    Run(RunArgs),
    /// Simulate a scenario and write one trajectory file per segment.
    GenData(ConfigArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Named preset to start from (default: springs-evolving-relation).
    #[arg(long)]
    preset: Option<String>,
    /// Flat `key = value` file applied on top of the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for both the data stream and the decoder initialization.
    #[arg(long)]
    seed: Option<u64>,
    /// Use the reduced-size variant of the preset.
    #[arg(long)]
    desk_scale: bool,
    /// Sample stride in stored steps.
    #[arg(long, value_parser = ["30", "60"])]
    stride: Option<String>,
    /// Output directory.
    #[arg(long, env = "RELINFER_OUT_DIR")]
    out: Option<PathBuf>,
    /// Print the fully resolved configuration and exit.
    #[arg(long)]
    dump_config: bool,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Disable mirror augmentation.
    #[arg(long)]
    no_tm: bool,
    /// Fixed adjacency learning rate instead of the adaptive one.
    #[arg(long, value_name = "VALUE")]
    constant_lr: Option<f64>,
    /// Train on trajectory files instead of simulating; one segment per file, in order.
    #[arg(long, value_name = "PATH")]
    ingest: Vec<PathBuf>,
}

fn resolve(args: &ConfigArgs) -> Result<RunConfig> {
    let name = args.preset.as_deref().unwrap_or("springs-evolving-relation");
    let mut cfg = preset(name, args.desk_scale)?;
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
        cfg = parse_config(&text, cfg).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    }
    if let Some(seed) = args.seed {
        cfg.set_seed(seed);
    }
    if let Some(stride) = &args.stride {
        cfg.set_stride(stride.parse().expect("validated by clap"));
    }
    if let Some(out) = &args.out {
        cfg.output.dir = out.clone();
    }
    Ok(cfg)
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn ingest_stream(paths: &[PathBuf], cfg: &RunConfig) -> Result<Vec<Sample>> {
    let mut samples = Vec::new();
    for (segment, path) in paths.iter().enumerate() {
        let (trajectory, truth) = read_trajectory_jsonl(path)?;
        let first = samples.len();
        samples.extend(samples_from_trajectory(
            &trajectory,
            &Arc::new(truth),
            cfg.scenario.window,
            cfg.scenario.stride,
            segment,
            first,
        )?);
    }
    Ok(samples)
}

fn run(args: &RunArgs) -> Result<()> {
    let mut cfg = resolve(&args.config)?;
    if args.no_tm {
        cfg.trainer.trajectory_mirror = false;
    }
    if let Some(eta) = args.constant_lr {
        cfg.set_constant_lr(eta);
    }
    cfg.validate()?;
    if args.config.dump_config {
        print!("{}", dump_config(&cfg));
        return Ok(());
    }
    let out = cfg.output.dir.clone();
    let snapshots = out.join("adjacency");
    create_dir(&snapshots)?;
    let config_path = out.join("config.txt");
    std::fs::write(&config_path, dump_config(&cfg)).map_err(|e| Error::Io {
        path: config_path,
        source: e,
    })?;

    let stream: Box<dyn Iterator<Item = Result<Sample>>> = if args.ingest.is_empty() {
        if cfg.output.dump_trajectories {
            dump_segments(&cfg, &out.join("trajectories"))?;
        }
        Box::new(make_scenario_stream(&cfg.scenario)?)
    } else {
        Box::new(ingest_stream(&args.ingest, &cfg)?.into_iter().map(Ok))
    };

    let mut metrics = MetricsWriter::create(&out.join("metrics.csv"), cfg.output.log_every)?;
    let mut last: Option<(usize, AdjacencySnapshot)> = None;
    let write_snapshot = |segment: usize, snap: &AdjacencySnapshot| {
        write_json(&snapshots.join(format!("segment_{segment:03}_end.json")), snap)
    };
    let output = run_online(stream, &cfg.trainer, |state, record| {
        metrics.write(record)?;
        if let Some((segment, snap)) = &last {
            if *segment != record.segment {
                write_snapshot(*segment, snap)?;
            }
        }
        last = Some((record.segment, state.adjacency.snapshot(record.iteration)));
        Ok(())
    })?;
    metrics.finish()?;
    if let Some((segment, snap)) = &last {
        write_snapshot(*segment, snap)?;
    }
    write_summary_json(&out.join("summary.json"), &output.summary)?;
    if let (true, Some(state)) = (cfg.output.checkpoint, &output.state) {
        save_checkpoint(
            &out.join("checkpoint.json"),
            &state.params,
            &state.optimizer,
            &config_hash(&cfg),
        )?;
    }

    let s = &output.summary;
    match s.average_accuracy {
        Some(acc) => println!(
            "{} iterations, {} segments, average accuracy {acc:.4}, output in {}",
            s.iterations,
            s.segments.len(),
            out.display()
        ),
        None => println!("no data; output in {}", out.display()),
    }
    Ok(())
}

#[derive(Serialize)]
struct ManifestEntry {
    index: usize,
    file: String,
    steps: usize,
    system: SystemKind,
    edges: Vec<Vec<u8>>,
    params: SystemParams,
}

#[derive(Serialize)]
struct Manifest {
    config_hash: String,
    dt_effective: f64,
    segments: Vec<ManifestEntry>,
}

/// Write every segment of the scenario plus `manifest.json` into `dir`.
fn dump_segments(cfg: &RunConfig, dir: &Path) -> Result<()> {
    cfg.scenario.validate()?;
    create_dir(dir)?;
    let mut entries = Vec::new();
    for k in 0..cfg.scenario.segment_count() {
        let seg = cfg.scenario.generate_segment(k)?;
        let file = format!("segment_{:03}.jsonl", seg.index);
        write_trajectory_jsonl(&dir.join(&file), &seg.trajectory, &seg.truth)?;
        entries.push(ManifestEntry {
            index: seg.index,
            file,
            steps: seg.trajectory.steps(),
            system: seg.truth.system(),
            edges: seg.truth.edge_rows(),
            params: seg.truth.params().clone(),
        });
    }
    let manifest = Manifest {
        config_hash: config_hash(cfg),
        dt_effective: cfg.scenario.sim.dt_effective(),
        segments: entries,
    };
    write_json(&dir.join("manifest.json"), &manifest)
}

fn gen_data(args: &ConfigArgs) -> Result<()> {
    let cfg = resolve(args)?;
    cfg.validate()?;
    if args.dump_config {
        print!("{}", dump_config(&cfg));
        return Ok(());
    }
    dump_segments(&cfg, &cfg.output.dir)?;
    println!(
        "wrote {} segments to {}",
        cfg.scenario.segment_count(),
        cfg.output.dir.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => run(args),
        Command::GenData(args) => gen_data(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
