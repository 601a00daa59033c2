use std::path::{Path, PathBuf};
use std::process::ExitCode;

use angiofem::config::SimulationConfig;
use angiofem::error::{ConfigError, Error, Result, SensitivityError};
use angiofem::mesh::TetMesh;
use angiofem::network::VesselNetwork;
use angiofem::params::{PRESETS, SCHEMA};
use angiofem::plot::{plot_series, SeriesTable};
use angiofem::sensitivity::{
    run_campaign, trajectories_csv, write_reports, CampaignSettings, InputSpace, OutputLayout,
};
use angiofem::simulation::{evaluate_outputs, load_mesh, summary, OutputWriter, Simulation, SCREENING_OUTPUTS};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "angiofem", version, about = "Coupled tumor growth and angiogenesis simulator")]
struct Cli {
    /// Log level (error, warn, info, debug).
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (overrides `output_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Resume from a state file written by `--checkpoint-every`.
        #[arg(long)]
        restart: Option<PathBuf>,
        /// Write `state_<step>.bin` every N steps.
        #[arg(long, default_value_t = 0)]
        checkpoint_every: usize,
    },
    /// Morris elementary-effects screening.
    Morris {
        #[arg(long)]
        config: PathBuf,
        /// Input space file; the default screening space when omitted.
        #[arg(long)]
        space: Option<PathBuf>,
        /// Trajectories generated.
        #[arg(long = "R", default_value_t = 1000)]
        total: usize,
        /// Trajectories selected and evaluated.
        #[arg(long = "r", default_value_t = 50)]
        selected: usize,
        /// Grid levels (overrides the space file).
        #[arg(long = "p")]
        levels: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        workers: usize,
        /// Seed of the trajectory sampling (defaults to the config seed).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Plot time series as SVG.
    Postprocess {
        /// Series files to overlay.
        #[arg(long, required = true)]
        series: Vec<PathBuf>,
        #[arg(long)]
        plot: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// List the scenario presets or show one.
    Preset {
        name: Option<String>,
        #[arg(long)]
        list: bool,
    },
    /// List the configurable parameters with units and documented ranges.
    Params,
    /// Write a structured cube mesh.
    Mesh {
        #[arg(long)]
        cube: usize,
        /// Edge length in mm.
        #[arg(long, default_value_t = 1.0)]
        edge: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(d) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_config(path: &Path) -> Result<SimulationConfig> {
    let cfg = SimulationConfig::load(path)?;
    for w in cfg.warnings() {
        log::warn!("{w}");
    }
    Ok(cfg)
}

fn run(config: &Path, seed: Option<u64>, out: Option<PathBuf>, restart: Option<PathBuf>, every: usize) -> Result<()> {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let dir = out
        .or_else(|| cfg.output_dir.as_ref().map(|d| cfg.resolve_path(d)))
        .unwrap_or_else(|| PathBuf::from("out"));
    let writer = OutputWriter::new(&dir)?;
    let mut sim = match restart {
        Some(state) => Simulation::load_state(cfg, &state)?,
        None => Simulation::new(cfg)?,
    };
    log::info!(
        "{} tissue nodes, {} elements, {} vessel segments, {} steps",
        sim.mesh.n_nodes(),
        sim.mesh.n_tets(),
        sim.state.net.segments.len(),
        sim.n_steps()
    );
    if every == 0 {
        sim.run(Some(&writer))?;
    } else {
        while !sim.finished() {
            let target = ((sim.state.step / every) + 1) * every;
            let mut cfg = sim.config.clone();
            let end = cfg.final_time;
            cfg.final_time = (target as f64 * cfg.time_step).min(end);
            let full = std::mem::replace(&mut sim.config, cfg);
            let r = sim.run(Some(&writer));
            sim.config = full;
            r?;
            let path = dir.join(format!("state_{:05}.bin", sim.state.step));
            sim.save_state(&path)?;
            log::info!("state written to {}", path.display());
        }
    }
    print!("{}", summary(&sim.series));
    println!("outputs in {}", dir.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn morris(
    config: &Path,
    space: Option<PathBuf>,
    total: usize,
    selected: usize,
    levels: Option<usize>,
    out: &Path,
    workers: usize,
    seed: Option<u64>,
) -> Result<()> {
    let cfg = load_config(config)?;
    let mut sp = match space {
        Some(p) => InputSpace::load(&p)?,
        None => InputSpace::default_space(),
    };
    if let Some(p) = levels {
        let report_times = sp.report_times.clone();
        sp = InputSpace::new(sp.inputs, p)?;
        sp.report_times = report_times;
    }
    sp.check_parameters()?;
    let times = if sp.report_times.is_empty() { vec![cfg.final_time] } else { sp.report_times.clone() };
    if times.iter().any(|&t| !(t > 0.0)) {
        return Err(SensitivityError::Space("report times must be positive".into()).into());
    }
    let mesh: TetMesh = load_mesh(&cfg)?;
    let net = VesselNetwork::load(&cfg.resolve_path(&cfg.network))?;
    let layout = OutputLayout {
        outputs: SCREENING_OUTPUTS.iter().map(|s| s.to_string()).collect(),
        times: times.clone(),
    };
    let settings = CampaignSettings { total, selected, seed: seed.unwrap_or(cfg.seed), workers };
    log::info!(
        "{} inputs, {} levels, {} of {} trajectories, {} runs",
        sp.k(),
        sp.p,
        selected,
        total,
        selected * (sp.k() + 1)
    );
    let result = run_campaign(&sp, &layout, &settings, |values| {
        evaluate_outputs(&cfg, &mesh, &net, values, &times).map_err(|e| e.to_string())
    })?;
    if result.failures > 0 {
        log::warn!("{} model runs failed; their effects are reported as missing", result.failures);
    }
    let files = write_reports(&result.reports, out)?;
    write(&out.join("trajectories.csv"), &trajectories_csv(&sp, &result))?;
    for f in files {
        println!("{}", f.display());
    }
    Ok(())
}

fn postprocess(series: &[PathBuf], metric: &str, out: &Path) -> Result<()> {
    let tables = series.iter().map(|p| SeriesTable::load(p)).collect::<Result<Vec<_>>>()?;
    write(out, &plot_series(&tables, metric)?)
}

fn preset(name: Option<String>, list: bool) -> Result<()> {
    match name {
        Some(n) if !list => {
            let p = angiofem::params::preset(&n)?;
            println!("{}: {}", p.name, p.description);
            for (k, v) in p.values {
                println!("  {k} = {v}");
            }
        }
        None if !list => {
            return Err(ConfigError::Invalid {
                key: "preset".into(),
                msg: "give a preset name or --list".into(),
            }
            .into())
        }
        _ => {
            for p in PRESETS {
                println!("{:<6} {}", p.name, p.description);
            }
        }
    }
    Ok(())
}

fn params() {
    for s in SCHEMA {
        let range = s.range.map(|(a, b)| format!("[{a}, {b}]")).unwrap_or_default();
        println!("{:<18} {:<14} {:<48} {}", s.key, s.unit, s.doc, range);
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, seed, out, restart, checkpoint_every } => {
            run(&config, seed, out, restart, checkpoint_every)
        }
        Command::Morris { config, space, total, selected, levels, out, workers, seed } => {
            morris(&config, space, total, selected, levels, &out, workers, seed)
        }
        Command::Postprocess { series, plot, out } => postprocess(&series, &plot, &out),
        Command::Preset { name, list } => preset(name, list),
        Command::Params => {
            params();
            Ok(())
        }
        Command::Mesh { cube, edge, out } => {
            if cube == 0 || !(edge > 0.0) {
                return Err(ConfigError::Invalid {
                    key: "mesh".into(),
                    msg: "need --cube >= 1 and a positive --edge".into(),
                }
                .into());
            }
            write(&out, &TetMesh::cube(cube, edge).to_text())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(&cli.log))
        .format_timestamp(None)
        .init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
