//! Time loop of one run: growth, tumor, pressure, oxygen, VEGF, outputs.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::angiogenesis::{advance_tips, events_csv, EcmField, GrowthEvent, GrowthParameters};
use crate::config::{MeshSource, SimulationConfig};
use crate::coupling::InterfaceMaps;
use crate::error::{ConfigError, Error, Result};
use crate::flow::{
    pressure_step, tissue_velocity, vessel_velocity, CaseHistory, FlowInputs, FlowParameters, FlowPrevious,
};
use crate::mesh::{Point, TetMesh};
use crate::network::{NetworkDiscretization, PartitionOptions, VesselNetwork};
use crate::tissue::{tumor_step, update_phil, TumorConstitutive};
use crate::transport::{oxygen_step, vegf_step, OxygenPrevious, TissueState, TransportParameters};

/// Columns of the time series, in CSV order.
pub const SERIES_COLUMNS: [&str; 17] = [
    "step",
    "time",
    "p_phi",
    "c_avg",
    "rho_net",
    "v_omega",
    "n_tips",
    "total_length",
    "mean_phi",
    "n_segments",
    "newton_iterations",
    "substeps",
    "pressure_kkt_residual",
    "pressure_exchange_mismatch",
    "oxygen_kkt_residual",
    "oxygen_exchange_mismatch",
    "events",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub step: usize,
    /// Hours.
    pub time: f64,
    /// Relative tumor mass increase.
    pub p_phi: f64,
    /// `(1/|Ω|)∫Φ_l C`.
    pub c_avg: f64,
    /// `L / N_tips`, infinite without tips.
    pub rho_net: f64,
    /// Fraction of elements crossed by the network.
    pub v_omega: f64,
    pub n_tips: usize,
    pub total_length: f64,
    pub mean_phi: f64,
    pub n_segments: usize,
    pub newton_iterations: usize,
    pub substeps: u32,
    pub pressure_kkt_residual: f64,
    pub pressure_exchange_mismatch: f64,
    pub oxygen_kkt_residual: f64,
    pub oxygen_exchange_mismatch: f64,
    /// Growth events of this step.
    pub events: usize,
}

impl OutputRecord {
    pub fn value(&self, column: &str) -> Option<f64> {
        Some(match column {
            "step" => self.step as f64,
            "time" => self.time,
            "p_phi" => self.p_phi,
            "c_avg" => self.c_avg,
            "rho_net" => self.rho_net,
            "v_omega" => self.v_omega,
            "n_tips" => self.n_tips as f64,
            "total_length" => self.total_length,
            "mean_phi" => self.mean_phi,
            "n_segments" => self.n_segments as f64,
            "newton_iterations" => self.newton_iterations as f64,
            "substeps" => self.substeps as f64,
            "pressure_kkt_residual" => self.pressure_kkt_residual,
            "pressure_exchange_mismatch" => self.pressure_exchange_mismatch,
            "oxygen_kkt_residual" => self.oxygen_kkt_residual,
            "oxygen_exchange_mismatch" => self.oxygen_exchange_mismatch,
            "events" => self.events as f64,
            _ => return None,
        })
    }

    fn csv_row(&self) -> String {
        SERIES_COLUMNS
            .iter()
            .map(|c| {
                let v = self.value(c).expect("known column");
                match *c {
                    "step" | "n_tips" | "n_segments" | "newton_iterations" | "substeps" | "events" => {
                        format!("{}", v as u64)
                    }
                    _ => format!("{v}"),
                }
            })
            .collect::<Vec<_>>()
            .join(",")
    }
}

pub fn series_csv(series: &[OutputRecord]) -> String {
    let mut s = SERIES_COLUMNS.join(",");
    s.push('\n');
    for r in series {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

/// Mutable state carried between steps. The network discretization is a
/// function of the network and is rebuilt on restore.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub step: usize,
    pub time: f64,
    pub net: VesselNetwork,
    pub phi: Vec<f64>,
    pub p: Vec<f64>,
    pub c: Vec<f64>,
    pub g: Vec<f64>,
    pub p_hat: Vec<f64>,
    pub c_hat: Vec<f64>,
    pub pressure_history: CaseHistory,
    pub oxygen_history: CaseHistory,
    pub rng: ChaCha8Rng,
    pub phi0_integral: f64,
}

/// Primary-dof field carried over to a grown network. Existing segments
/// keep their index and partition; new dofs start at zero.
pub fn remap_primary(old: &NetworkDiscretization, new: &NetworkDiscretization, v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; new.n_prim];
    for (s, part) in old.segments.iter().enumerate() {
        let Some(np) = new.segments.get(s) else { continue };
        if np.nodes.len() == part.nodes.len() {
            for (&a, &b) in part.nodes.iter().zip(&np.nodes) {
                out[b] = v[a];
            }
        }
    }
    out
}

pub struct Simulation {
    pub config: SimulationConfig,
    pub mesh: TetMesh,
    pub ecm: EcmField,
    pub state: State,
    pub disc: NetworkDiscretization,
    pub series: Vec<OutputRecord>,
    pub events: Vec<GrowthEvent>,
    /// Darcy velocity per element from the latest pressure solve.
    pub velocity: Vec<Point>,
    law: TumorConstitutive,
    fp: FlowParameters,
    tp: TransportParameters,
    gp: GrowthParameters,
    maps: InterfaceMaps,
    volume: f64,
}

pub fn load_mesh(config: &SimulationConfig) -> Result<TetMesh> {
    Ok(match &config.mesh {
        MeshSource::File(p) => TetMesh::load(&config.resolve_path(p))?,
        MeshSource::Cube { n, edge } => TetMesh::cube(*n, *edge),
    })
}

impl Simulation {
    /// Loads mesh and network and computes the initial equilibrium.
    pub fn new(config: SimulationConfig) -> Result<Self> {
        let mesh = load_mesh(&config)?;
        let net = VesselNetwork::load(&config.resolve_path(&config.network))?;
        Self::with_inputs(config, mesh, net)
    }

    /// Initial state: uniform `Φ⁰`, `g⁰`; pressure and oxygen from steady
    /// solves on the initial network unless overridden.
    pub fn with_inputs(config: SimulationConfig, mesh: TetMesh, net: VesselNetwork) -> Result<Self> {
        config.validate()?;
        if net.segments.is_empty() {
            return Err(ConfigError::Invalid {
                key: "network".into(),
                msg: "the network has no segments".into(),
            }
            .into());
        }
        let prm = &config.parameters;
        let num = &config.numerics;
        let n = mesh.n_nodes();
        let phi = vec![config.initial.phi.unwrap_or(prm.phi_0); n];
        let phi0_integral = mesh.integrate(&phi)?;
        if !(phi0_integral > 0.0) {
            return Err(ConfigError::Invalid {
                key: "initial.phi".into(),
                msg: "initial tumor mass is zero".into(),
            }
            .into());
        }
        let phil = update_phil(&phi, prm.phi_max);
        let disc = Self::discretize(&mesh, &net, &config)?;
        let maps = InterfaceMaps::new(&mesh, &disc);
        let law = TumorConstitutive::from(prm);
        let fp = FlowParameters::from(prm);
        let tp = TransportParameters::from(prm);
        let ecm = EcmField::build(&mesh, config.seed, prm.ecm_perturbation);
        let volume = mesh.total_volume();

        let mut p = vec![prm.p_ls; n];
        let mut p_hat = vec![prm.p_ls; disc.n_prim];
        let mut p_hist = CaseHistory::default();
        let mut c = vec![config.initial.c.unwrap_or(0.0); n];
        let mut c_hat = vec![config.initial.c.unwrap_or(0.0); disc.n_prim];
        let mut c_hist = CaseHistory::default();
        let mut velocity = vec![[0.0; 3]; mesh.n_tets()];
        let mut p_diag = (0.0, 0.0);
        let mut c_diag = (0.0, 0.0);

        let presolve_pressure = |c: &[f64], p: &[f64], p_hat: &[f64], hist: &CaseHistory| {
            pressure_step(
                &mesh,
                &net,
                &disc,
                &maps,
                &fp,
                &law,
                &FlowInputs { phi: &phi, phil: &phil, c_prev: c, dt: f64::INFINITY },
                &FlowPrevious { p, p_hat_junctions: &p_hat[..disc.n_junctions], phil: &phil, history: hist },
                num,
            )
        };
        // pressure, then oxygen on its velocities, then pressure with that oxygen
        let passes = if config.initial.c.is_none() { 2 } else { 1 };
        for pass in 0..passes {
            if num.pressure_presolve {
                let fs = presolve_pressure(&c, &p, &p_hat, &p_hist)?;
                p_diag = (fs.diagnostics.kkt_residual, fs.diagnostics.balance.mismatch());
                velocity = fs.velocity;
                p = fs.p;
                p_hat = fs.p_hat;
                p_hist = fs.history;
            }
            if config.initial.c.is_none() && pass == 0 {
                let vv = vessel_velocity(&disc, &p_hat, prm.radius, prm.viscosity);
                let tissue = TissueState { phi: &phi, phil: &phil, velocity: &velocity };
                let os = oxygen_step(
                    &mesh,
                    &net,
                    &disc,
                    &maps,
                    &tp,
                    &tissue,
                    &vv,
                    &OxygenPrevious { c: &c, c_hat: &c_hat, history: &c_hist },
                    f64::INFINITY,
                    num,
                )?;
                c_diag = (os.kkt_residual, os.balance.mismatch());
                c = os.c;
                c_hat = os.c_hat;
                c_hist = os.history;
            }
        }

        let state = State {
            step: 0,
            time: 0.0,
            net,
            g: vec![config.initial.g; n],
            phi,
            p,
            c,
            p_hat,
            c_hat,
            pressure_history: p_hist,
            oxygen_history: c_hist,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            phi0_integral,
        };
        let mut sim = Self {
            gp: GrowthParameters::from(prm),
            config,
            mesh,
            ecm,
            state,
            disc,
            series: Vec::new(),
            events: Vec::new(),
            velocity,
            law,
            fp,
            tp,
            maps,
            volume,
        };
        let rec = sim.record(0, 0, p_diag, c_diag, 0);
        sim.series.push(rec);
        Ok(sim)
    }

    fn discretize(mesh: &TetMesh, net: &VesselNetwork, config: &SimulationConfig) -> Result<NetworkDiscretization> {
        let opts = PartitionOptions {
            refinement: config.numerics.refinement,
            aux_ratio: config.numerics.aux_ratio,
        };
        Ok(NetworkDiscretization::build(mesh, net, config.parameters.radius, opts)?)
    }

    pub fn n_steps(&self) -> usize {
        self.config.n_steps()
    }

    pub fn finished(&self) -> bool {
        self.state.step >= self.n_steps()
    }

    fn record(
        &self,
        newton_iterations: usize,
        substeps: u32,
        p_diag: (f64, f64),
        c_diag: (f64, f64),
        events: usize,
    ) -> OutputRecord {
        let s = &self.state;
        let mesh = &self.mesh;
        let phil = update_phil(&s.phi, self.config.parameters.phi_max);
        let mass = mesh.integrate_with(|e, q| mesh.eval_qp(&s.phi, e, q));
        let oxygen = mesh.integrate_with(|e, q| mesh.eval_qp(&phil, e, q) * mesh.eval_qp(&s.c, e, q));
        OutputRecord {
            step: s.step,
            time: s.time,
            p_phi: if s.step == 0 { 0.0 } else { (mass - s.phi0_integral) / s.phi0_integral },
            c_avg: oxygen / self.volume,
            rho_net: s.net.density(),
            v_omega: self.disc.intersected_tets().len() as f64 / mesh.n_tets() as f64,
            n_tips: s.net.n_tips(),
            total_length: s.net.total_length(),
            mean_phi: mass / self.volume,
            n_segments: s.net.segments.len(),
            newton_iterations,
            substeps,
            pressure_kkt_residual: p_diag.0,
            pressure_exchange_mismatch: p_diag.1,
            oxygen_kkt_residual: c_diag.0,
            oxygen_exchange_mismatch: c_diag.1,
            events,
        }
    }

    /// Advances one step. On failure the state is left at the previous step.
    pub fn step(&mut self) -> Result<&OutputRecord> {
        let k = self.state.step + 1;
        let time = k as f64 * self.config.time_step;
        self.advance(k, time).map_err(|e| Error::Step {
            step: k,
            time,
            source: Box::new(e),
        })?;
        Ok(self.series.last().expect("series has the initial record"))
    }

    fn advance(&mut self, k: usize, time: f64) -> Result<()> {
        let dt = self.config.time_step;
        let prm = self.config.parameters.clone();
        let num = self.config.numerics.clone();
        let mesh = &self.mesh;
        let old = &self.state;
        let mut net = old.net.clone();
        let mut rng = old.rng.clone();

        // (1) growth with the previous VEGF field, (2) rebuild
        let events = advance_tips(&mut net, mesh, &old.g, &self.ecm, &self.gp, dt, time, &mut rng);
        let grown = net.segments.len() != old.net.segments.len() || net.junctions != old.net.junctions;
        let (disc, maps, p_hat_prev, c_hat_prev) = if grown {
            let disc = Self::discretize(mesh, &net, &self.config)?;
            let maps = InterfaceMaps::new(mesh, &disc);
            let p_hat = remap_primary(&self.disc, &disc, &old.p_hat);
            let c_hat = remap_primary(&self.disc, &disc, &old.c_hat);
            (Some(disc), Some(maps), p_hat, c_hat)
        } else {
            (None, None, old.p_hat.clone(), old.c_hat.clone())
        };
        let disc_ref = disc.as_ref().unwrap_or(&self.disc);
        let maps_ref = maps.as_ref().unwrap_or(&self.maps);

        // (3) tumor with lagged oxygen, (4) liquid fraction
        let (phi, report) = tumor_step(mesh, self.law, &old.phi, &old.c, dt, &num)?;
        let phil_old = update_phil(&old.phi, prm.phi_max);
        let phil = update_phil(&phi, prm.phi_max);

        // (5) pressure and velocities
        let fs = pressure_step(
            mesh,
            &net,
            disc_ref,
            maps_ref,
            &self.fp,
            &self.law,
            &FlowInputs { phi: &phi, phil: &phil, c_prev: &old.c, dt },
            &FlowPrevious {
                p: &old.p,
                p_hat_junctions: &p_hat_prev[..disc_ref.n_junctions],
                phil: &phil_old,
                history: &old.pressure_history,
            },
            &num,
        )?;
        let vv = vessel_velocity(disc_ref, &fs.p_hat, prm.radius, prm.viscosity);
        let velocity = tissue_velocity(mesh, &fs.p, &phil, self.fp.kappa_over_mu);

        // (6) oxygen, (7) VEGF with the current tumor and oxygen
        let tissue = TissueState { phi: &phi, phil: &phil, velocity: &velocity };
        let os = oxygen_step(
            mesh,
            &net,
            disc_ref,
            maps_ref,
            &self.tp,
            &tissue,
            &vv,
            &OxygenPrevious { c: &old.c, c_hat: &c_hat_prev, history: &old.oxygen_history },
            dt,
            &num,
        )?;
        let g = vegf_step(mesh, Some(disc_ref), &self.tp, &tissue, &os.c, &old.g, dt, num.kkt_tol)?;

        let p_diag = (fs.diagnostics.kkt_residual, fs.diagnostics.balance.mismatch());
        let c_diag = (os.kkt_residual, os.balance.mismatch());
        let n_events = events.len();
        self.state = State {
            step: k,
            time,
            net,
            phi,
            p: fs.p,
            c: os.c,
            g,
            p_hat: fs.p_hat,
            c_hat: os.c_hat,
            pressure_history: fs.history,
            oxygen_history: os.history,
            rng,
            phi0_integral: old.phi0_integral,
        };
        if let (Some(d), Some(m)) = (disc, maps) {
            self.disc = d;
            self.maps = m;
        }
        self.velocity = velocity;
        self.events.extend(events);
        let rec = self.record(report.iterations, report.substeps, p_diag, c_diag, n_events);
        self.series.push(rec);
        Ok(())
    }

    /// Runs to the final time, writing outputs when a directory is given.
    pub fn run(&mut self, out: Option<&OutputWriter>) -> Result<()> {
        if let Some(w) = out {
            w.begin(self)?;
        }
        while !self.finished() {
            if let Err(e) = self.step() {
                if let Some(w) = out {
                    let path = w.dir.join("failure_state.bin");
                    match self.save_state(&path) {
                        Ok(()) => log::error!("state before the failing step written to {}", path.display()),
                        Err(d) => log::error!("could not write the state dump: {d}"),
                    }
                    w.events(self)?;
                }
                return Err(e);
            }
            if let Some(w) = out {
                w.after_step(self)?;
            }
            let r = self.series.last().expect("record");
            log::info!(
                "step {}/{} t = {} h: P_phi = {:.4e}, C_avg = {:.4}, tips = {}, L = {:.4} mm",
                r.step,
                self.n_steps(),
                r.time,
                r.p_phi,
                r.c_avg,
                r.n_tips,
                r.total_length
            );
        }
        if let Some(w) = out {
            w.events(self)?;
        }
        Ok(())
    }

    pub fn tissue_vtk(&self) -> String {
        let s = &self.state;
        let phil = update_phil(&s.phi, self.config.parameters.phi_max);
        self.mesh.to_vtk(
            &[("phi", &s.phi), ("phil", &phil), ("p", &s.p), ("c", &s.c), ("g", &s.g)],
            &[("velocity", &self.velocity)],
        )
    }

    pub fn network_vtk(&self) -> String {
        let s = &self.state;
        self.disc.to_vtk(&[("p_hat", &s.p_hat), ("c_hat", &s.c_hat)], &[])
    }
}

/// Output directory layout: `series.csv`, `events.csv`, `vtk/`.
#[derive(Debug, Clone)]
pub struct OutputWriter {
    pub dir: PathBuf,
}

impl OutputWriter {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(dir.join("vtk")).map_err(|e| Error::io(&dir, e))?;
        Ok(Self { dir })
    }

    fn write(&self, name: &str, text: &str) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, text).map_err(|e| Error::io(path, e))
    }

    fn begin(&self, sim: &Simulation) -> Result<()> {
        self.write("series.csv", &series_csv(&sim.series))?;
        self.write("config.toml", &sim.config.to_toml())?;
        if sim.state.step == 0 {
            self.snapshot(sim)?;
        }
        Ok(())
    }

    fn after_step(&self, sim: &Simulation) -> Result<()> {
        let path = self.dir.join("series.csv");
        let mut f = fs::OpenOptions::new()
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        let row = sim.series.last().expect("record").csv_row();
        writeln!(f, "{row}").map_err(|e| Error::io(&path, e))?;
        let every = sim.config.snapshot_every;
        if (every > 0 && sim.state.step % every == 0) || sim.finished() {
            self.snapshot(sim)?;
        }
        Ok(())
    }

    fn snapshot(&self, sim: &Simulation) -> Result<()> {
        let k = sim.state.step;
        self.write(&format!("vtk/tissue_{k:05}.vtk"), &sim.tissue_vtk())?;
        self.write(&format!("vtk/network_{k:05}.vtk"), &sim.network_vtk())
    }

    fn events(&self, sim: &Simulation) -> Result<()> {
        self.write("events.csv", &events_csv(&sim.events))
    }
}

const MAGIC: &[u8; 8] = b"TGSTATE\0";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    endianness: String,
    step: usize,
    time: f64,
    seed: u64,
    rng_stream: u64,
    /// Decimal `u128` word position of the rng.
    rng_word_pos: String,
    phi0_integral: f64,
    n_tissue_nodes: usize,
    network: VesselNetwork,
    pressure_history: CaseHistory,
    oxygen_history: CaseHistory,
    /// Arrays stored after the manifest, in order, as little-endian f64.
    arrays: Vec<ArrayEntry>,
}

fn restart_err(msg: impl Into<String>) -> Error {
    Error::Restart(msg.into())
}

impl Simulation {
    /// Versioned container: magic, u32 version, u64 manifest length, the
    /// JSON manifest, then the nodal arrays as little-endian f64.
    pub fn encode_state(&self) -> Vec<u8> {
        let s = &self.state;
        let arrays: [(&str, &[f64]); 6] = [
            ("phi", &s.phi),
            ("p", &s.p),
            ("c", &s.c),
            ("g", &s.g),
            ("p_hat", &s.p_hat),
            ("c_hat", &s.c_hat),
        ];
        let manifest = Manifest {
            format: "tumor-angiogenesis-state".into(),
            version: VERSION,
            endianness: "little".into(),
            step: s.step,
            time: s.time,
            seed: self.config.seed,
            rng_stream: s.rng.get_stream(),
            rng_word_pos: s.rng.get_word_pos().to_string(),
            phi0_integral: s.phi0_integral,
            n_tissue_nodes: self.mesh.n_nodes(),
            network: s.net.clone(),
            pressure_history: s.pressure_history.clone(),
            oxygen_history: s.oxygen_history.clone(),
            arrays: arrays.iter().map(|(n, a)| ArrayEntry { name: n.to_string(), len: a.len() }).collect(),
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(text.len() as u64).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        for (_, a) in arrays {
            for v in a {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn save_state(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode_state()).map_err(|e| Error::io(path, e))
    }

    /// Rebuilds a simulation from a state container. The series restarts
    /// with the record of the restored step.
    pub fn restore(config: SimulationConfig, mesh: TetMesh, bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(restart_err("not a state file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(restart_err(format!("unsupported version {version}")));
        }
        let mlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(20..20 + mlen).ok_or_else(|| restart_err("truncated manifest"))?;
        let m: Manifest =
            serde_json::from_slice(body).map_err(|e| restart_err(format!("bad manifest: {e}")))?;
        if m.seed != config.seed {
            return Err(restart_err(format!("state was written with seed {}, config has {}", m.seed, config.seed)));
        }
        if m.n_tissue_nodes != mesh.n_nodes() {
            return Err(restart_err("state does not match the mesh"));
        }
        let mut pos = 20 + mlen;
        let mut arrays = Vec::new();
        for a in &m.arrays {
            let end = pos + 8 * a.len;
            let raw = bytes.get(pos..end).ok_or_else(|| restart_err(format!("truncated array {}", a.name)))?;
            arrays.push(
                raw.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect::<Vec<f64>>(),
            );
            pos = end;
        }
        if pos != bytes.len() || arrays.len() != 6 {
            return Err(restart_err("unexpected array layout"));
        }
        let word_pos: u128 = m.rng_word_pos.parse().map_err(|_| restart_err("bad rng position"))?;
        let mut rng = ChaCha8Rng::seed_from_u64(m.seed);
        rng.set_stream(m.rng_stream);
        rng.set_word_pos(word_pos);

        let prm = config.parameters.clone();
        let disc = Self::discretize(&mesh, &m.network, &config)?;
        let maps = InterfaceMaps::new(&mesh, &disc);
        let mut it = arrays.into_iter();
        let mut next = || it.next().expect("six arrays");
        let state = State {
            step: m.step,
            time: m.time,
            net: m.network,
            phi: next(),
            p: next(),
            c: next(),
            g: next(),
            p_hat: next(),
            c_hat: next(),
            pressure_history: m.pressure_history,
            oxygen_history: m.oxygen_history,
            rng,
            phi0_integral: m.phi0_integral,
        };
        let n = mesh.n_nodes();
        if [&state.phi, &state.p, &state.c, &state.g].iter().any(|a| a.len() != n)
            || state.p_hat.len() != disc.n_prim
            || state.c_hat.len() != disc.n_prim
        {
            return Err(restart_err("array sizes do not match the discretization"));
        }
        let phil = update_phil(&state.phi, prm.phi_max);
        let velocity = tissue_velocity(&mesh, &state.p, &phil, prm.kappa_over_mu());
        let mut sim = Self {
            ecm: EcmField::build(&mesh, config.seed, prm.ecm_perturbation),
            law: TumorConstitutive::from(&prm),
            fp: FlowParameters::from(&prm),
            tp: TransportParameters::from(&prm),
            gp: GrowthParameters::from(&prm),
            volume: mesh.total_volume(),
            config,
            mesh,
            state,
            disc,
            maps,
            series: Vec::new(),
            events: Vec::new(),
            velocity,
        };
        let rec = sim.record(0, 0, (0.0, 0.0), (0.0, 0.0), 0);
        sim.series.push(rec);
        Ok(sim)
    }

    pub fn load_state(config: SimulationConfig, path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mesh = load_mesh(&config)?;
        Self::restore(config, mesh, &bytes)
    }
}

/// Outputs monitored by the screening campaign.
pub const SCREENING_OUTPUTS: [&str; 4] = ["p_phi", "c_avg", "rho_net", "v_omega"];

/// Runs `config` with `overrides` on top of its parameters and returns the
/// screening outputs at `times` (hours), output-major.
pub fn evaluate_outputs(
    config: &SimulationConfig,
    mesh: &TetMesh,
    net: &VesselNetwork,
    overrides: &[(String, f64)],
    times: &[f64],
) -> Result<Vec<f64>> {
    let mut cfg = config.clone();
    for (k, v) in overrides {
        cfg.overrides.insert(k.clone(), *v);
    }
    cfg.resolve()?;
    let t_end = times.iter().copied().fold(0.0, f64::max);
    cfg.final_time = cfg.final_time.max(t_end);
    let steps: Vec<usize> = times.iter().map(|t| (t / cfg.time_step).round() as usize).collect();
    let last = steps.iter().copied().max().unwrap_or(0);
    let mut sim = Simulation::with_inputs(cfg, mesh.clone(), net.clone())?;
    while sim.state.step < last {
        sim.step()?;
    }
    let mut out = Vec::with_capacity(SCREENING_OUTPUTS.len() * times.len());
    for name in SCREENING_OUTPUTS {
        for &k in &steps {
            out.push(sim.series[k].value(name).expect("known column"));
        }
    }
    Ok(out)
}

/// Human-readable summary of a finished run.
pub fn summary(series: &[OutputRecord]) -> String {
    let mut s = String::new();
    if let (Some(first), Some(last)) = (series.first(), series.last()) {
        let _ = writeln!(s, "steps        {} -> {}", first.step, last.step);
        let _ = writeln!(s, "time         {} h", last.time);
        let _ = writeln!(s, "P_phi        {:.6}", last.p_phi);
        let _ = writeln!(s, "mean phi     {:.6}", last.mean_phi);
        let _ = writeln!(s, "C_avg        {:.6}", last.c_avg);
        let _ = writeln!(s, "tips         {}", last.n_tips);
        let _ = writeln!(s, "length       {:.6} mm", last.total_length);
        let _ = writeln!(s, "rho_net      {:.6} mm", last.rho_net);
        let _ = writeln!(s, "V_omega      {:.6}", last.v_omega);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Junction, JunctionKind, Segment};

    fn line_network(x: f64) -> VesselNetwork {
        let j = |pos, kind| Junction { pos, kind };
        VesselNetwork::new(
            vec![
                j([x, 0.5, 0.0], JunctionKind::Inlet),
                j([x, 0.5, 0.5], JunctionKind::Interior),
                j([x, 0.5, 0.8], JunctionKind::Tip),
            ],
            vec![
                Segment { j: [0, 1], birth_time: 0.0 },
                Segment { j: [1, 2], birth_time: 0.0 },
            ],
        )
        .unwrap()
    }

    fn config(final_time: f64) -> SimulationConfig {
        let mut c = SimulationConfig::new(MeshSource::Cube { n: 4, edge: 1.0 }, "unused", final_time);
        c.seed = 3;
        c
    }

    fn sim(final_time: f64) -> Simulation {
        Simulation::with_inputs(config(final_time), TetMesh::cube(4, 1.0), line_network(0.4)).unwrap()
    }

    #[test]
    fn initial_record_has_zero_mass_increase() {
        let s = sim(6.0);
        let r = &s.series[0];
        assert_eq!(r.p_phi, 0.0);
        assert_eq!(r.n_tips, 1);
        assert!((r.mean_phi - 0.5).abs() < 1e-12);
        assert!(r.v_omega > 0.0 && r.v_omega < 1.0);
        assert!(r.c_avg > 0.0);
    }

    #[test]
    fn oxygen_average_of_uniform_fields() {
        let mut s = sim(6.0);
        let n = s.mesh.n_nodes();
        s.state.c = vec![10.0; n];
        s.state.phi = vec![0.5; n];
        let r = s.record(0, 0, (0.0, 0.0), (0.0, 0.0), 0);
        assert!((r.c_avg - 5.0).abs() < 1e-12);
    }

    #[test]
    fn remap_keeps_existing_segments() {
        let mesh = TetMesh::cube(4, 1.0);
        let net = line_network(0.4);
        let opts = PartitionOptions::default();
        let d0 = NetworkDiscretization::build(&mesh, &net, 0.005, opts).unwrap();
        let mut grown = net.clone();
        grown.extend_tip(0, [0.4, 0.5, 0.95], 6.0);
        let d1 = NetworkDiscretization::build(&mesh, &grown, 0.005, opts).unwrap();
        let v: Vec<f64> = (0..d0.n_prim).map(|i| i as f64 + 1.0).collect();
        let w = remap_primary(&d0, &d1, &v);
        for s in 0..2 {
            for k in 0..d0.segments[s].nodes.len() {
                assert_eq!(w[d1.node_dof(s, k)], v[d0.node_dof(s, k)]);
            }
        }
        let fresh = d1.segments[2].nodes.last().copied().unwrap();
        assert_eq!(w[fresh], 0.0);
    }

    #[test]
    fn state_round_trips_through_container() {
        let mut s = sim(12.0);
        s.step().unwrap();
        let bytes = s.encode_state();
        let r = Simulation::restore(s.config.clone(), s.mesh.clone(), &bytes).unwrap();
        assert_eq!(r.state, s.state);
        assert_eq!(r.encode_state(), bytes);
        assert!(Simulation::restore(s.config.clone(), s.mesh.clone(), &bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn series_csv_has_header_and_rows() {
        let s = sim(6.0);
        let csv = series_csv(&s.series);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), SERIES_COLUMNS.join(","));
        assert_eq!(lines.next().unwrap().split(',').count(), SERIES_COLUMNS.len());
    }
}
