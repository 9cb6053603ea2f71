//! Time integration of the nonlinear 1D flow equations over a vessel network.
//!
//! Interior points advance with the two-step Lax-Wendroff scheme; vessel ends
//! close through outgoing characteristics combined with the inflow waveform
//! (root), junction conservation (internal nodes), and structured-tree
//! impedance convolutions (terminals). Cycles repeat until the station time
//! series stop changing between cycles.

mod boundary;
mod grid;

pub use boundary::{solve_dense, JunctionSolution};
pub use grid::{StepContext, VesselGrid};

use crate::error::{Error, Result};
use crate::network::{assign_gravity_angles, Posture, VesselNetwork};
use crate::scales;
use crate::tree::{root_impedance_spectrum, FirConvolver, ImpedanceSpectrum, StructuredTreeSpec, TreeDefaults};
use crate::wall::MMHG;
use crate::waveform::Waveform;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Velocity headroom (cm/s) added to the resting wave speed when sizing the
/// time step from the CFL bound.
const CFL_VELOCITY_HEADROOM: f64 = 200.0;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GridConfig {
    /// Target spatial step (cm); every vessel keeps at least 8 grid points.
    #[serde(default = "default_dx")]
    pub dx_cm: f64,
    /// CFL safety factor applied when sizing dt.
    #[serde(default = "default_safety")]
    pub cfl_safety: f64,
    /// Override for the samples per period N (N dt = T exactly). Chosen from
    /// the CFL bound as a power of two >= 1024 when absent.
    #[serde(default)]
    pub steps_per_period: Option<usize>,
    #[serde(default = "default_max_cycles")]
    pub max_cycles: usize,
    /// Cycle-to-cycle relative L2 change of (p, q) below which the run is
    /// considered periodic.
    #[serde(default = "default_periodicity_tol")]
    pub periodicity_tol: f64,
    /// Stored samples per period for outputs and analysis.
    #[serde(default = "default_output_samples")]
    pub output_samples: usize,
}

fn default_dx() -> f64 {
    0.1
}
fn default_safety() -> f64 {
    0.5
}
fn default_max_cycles() -> usize {
    30
}
fn default_periodicity_tol() -> f64 {
    1e-3
}
fn default_output_samples() -> usize {
    512
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            dx_cm: default_dx(),
            cfl_safety: default_safety(),
            steps_per_period: None,
            max_cycles: default_max_cycles(),
            periodicity_tol: default_periodicity_tol(),
            output_samples: default_output_samples(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Reference pressure of the wall law (g/cm/s^2). The structured trees
    /// drive transmural pressure relative to this value.
    #[serde(default)]
    pub p0: f64,
    /// When set, write each terminal vessel's impedance spectrum as a CSV
    /// (omega, Re Z, Im Z) into this directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dump_impedance_dir: Option<std::path::PathBuf>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            p0: 0.0,
            dump_impedance_dir: None,
        }
    }
}

/// One recorded axial station of a vessel.
#[derive(Debug, Clone, PartialEq)]
pub struct StationSeries {
    pub x_cm: f64,
    /// Reference wave speed at the station, used for wave-intensity analysis.
    pub c0: f64,
    pub p_mmhg: Vec<f64>,
    pub q_mls: Vec<f64>,
    pub a_cm2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VesselSeries {
    pub id: u32,
    pub name: String,
    pub stations: Vec<StationSeries>,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct RunDiagnostics {
    pub cycles_run: usize,
    pub converged: bool,
    pub final_cycle_delta: f64,
    pub steps_per_period: usize,
    pub dt_s: f64,
    pub max_junction_flow_residual: f64,
    pub max_junction_pressure_residual: f64,
    /// |V_in - V_out - dStorage| / V_in over the final cycle.
    pub volume_audit_rel: f64,
    pub volume_in_ml: f64,
    pub volume_out_ml: f64,
    pub volume_stored_delta_ml: f64,
    pub resonance_flags: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationResult {
    pub period: f64,
    /// Sample times of the recorded cycle (s), uniform spacing.
    pub time: Vec<f64>,
    pub vessels: Vec<VesselSeries>,
    pub diagnostics: RunDiagnostics,
    /// Boundary-layer thickness used by the run (cm).
    pub delta_cm: f64,
    pub rho: f64,
    pub mu: f64,
}

type SpectrumKey = [u64; 13];

fn spectrum_key(spec: &StructuredTreeSpec, period: f64, n: usize) -> SpectrumKey {
    [
        spec.r_root.to_bits(),
        spec.alpha.to_bits(),
        spec.beta.to_bits(),
        spec.r_min.to_bits(),
        spec.lrr.to_bits(),
        spec.fluid.rho.to_bits(),
        spec.fluid.mu.to_bits(),
        spec.k1.to_bits(),
        spec.k2.to_bits(),
        spec.k3.to_bits(),
        spec.k2_convention as u64,
        period.to_bits(),
        n as u64,
    ]
}

fn cached_spectrum(
    spec: &StructuredTreeSpec,
    period: f64,
    n: usize,
) -> Result<std::sync::Arc<ImpedanceSpectrum>> {
    use std::sync::{Arc, Mutex, OnceLock};
    static CACHE: OnceLock<Mutex<BTreeMap<SpectrumKey, Arc<ImpedanceSpectrum>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(BTreeMap::new()));
    let key = spectrum_key(spec, period, n);
    if let Some(hit) = cache.lock().unwrap().get(&key) {
        return Ok(hit.clone());
    }
    let computed = Arc::new(root_impedance_spectrum(spec, period, n)?);
    let mut guard = cache.lock().unwrap();
    let entry = guard.entry(key).or_insert(computed);
    Ok(entry.clone())
}

struct JunctionPlan {
    parent: usize,
    daughters: Vec<usize>,
}

/// A running simulation: owns the per-vessel grids and advances one global
/// time step at a time. `run_simulation` drives it cycle by cycle; tests use
/// it directly to observe interior snapshots.
pub struct Simulation {
    pub grids: Vec<VesselGrid>,
    junctions: Vec<JunctionPlan>,
    root: usize,
    terminals: Vec<usize>,
    ctx: StepContext,
    inflow: Waveform,
    pub steps_per_period: usize,
    step_index: usize,
    pub max_flow_residual: f64,
    pub max_pressure_residual: f64,
    vol_in: f64,
    vol_out: f64,
    resonance_flags: usize,
}

impl Simulation {
    pub fn new(
        network: &VesselNetwork,
        inflow: &Waveform,
        grid_cfg: &GridConfig,
        trees: &TreeDefaults,
        opts: &SolverOptions,
    ) -> Result<Simulation> {
        if grid_cfg.dx_cm <= 0.0 || !(0.0..=1.0).contains(&grid_cfg.cfl_safety) || grid_cfg.cfl_safety == 0.0 {
            return Err(Error::Config(
                "grid needs dx > 0 and a CFL safety factor in (0, 1]".into(),
            ));
        }
        let period = inflow.period;
        let mut grids: Vec<VesselGrid> = (0..network.vessels.len())
            .map(|i| VesselGrid::new(network, i, grid_cfg.dx_cm))
            .collect();

        // Time step from the CFL bound at rest plus a velocity headroom.
        let mut dt_bound = f64::INFINITY;
        for g in &grids {
            let cmax = g.c0.iter().cloned().fold(0.0f64, f64::max);
            dt_bound = dt_bound.min(grid_cfg.cfl_safety * g.dx / (cmax + CFL_VELOCITY_HEADROOM));
        }
        let n_steps = match grid_cfg.steps_per_period {
            Some(n) => {
                if n < 16 || n % 2 != 0 {
                    return Err(Error::Config(format!(
                        "steps_per_period must be even and >= 16, got {n}"
                    )));
                }
                if period / n as f64 > dt_bound {
                    return Err(Error::Config(format!(
                        "steps_per_period = {n} gives dt = {:.3e} s above the CFL bound {:.3e} s",
                        period / n as f64,
                        dt_bound
                    )));
                }
                n
            }
            None => {
                let needed = (period / dt_bound).ceil() as usize;
                needed.next_power_of_two().max(1024)
            }
        };
        let dt = period / n_steps as f64;

        let ctx = StepContext::new(
            network.fluid.rho,
            network.fluid.nu(),
            network.fluid.g,
            period,
            opts.p0,
            dt,
        );

        // Structured-tree spectra. A process-wide cache keyed on the full
        // tree parameters deduplicates across equal terminals and repeated
        // runs; each entry is computed exactly once, so results do not
        // depend on scheduling.
        let terminals = network.terminal_indices();
        let mut resonance_flags = 0usize;
        for &ti in &terminals {
            let spec = StructuredTreeSpec::for_vessel(network, ti, trees)?;
            let spectrum = cached_spectrum(&spec, period, n_steps)?;
            resonance_flags += spectrum.resonance_flags;
            if let Some(dir) = &opts.dump_impedance_dir {
                std::fs::create_dir_all(dir)?;
                let mut body = String::from("omega_rad_s,re_z,im_z\n");
                for (k, z) in spectrum.z.iter().enumerate() {
                    body.push_str(&format!("{:.9},{:.9e},{:.9e}\n", spectrum.omega(k), z.re, z.im));
                }
                std::fs::write(dir.join(format!("tree_v{:02}.csv", network.vessels[ti].id)), body)?;
            }
            let taps: Vec<f64> = spectrum.impulse.iter().map(|z| z * dt).collect();
            grids[ti].conv = Some(FirConvolver::new(&taps));
        }

        let junctions = network
            .junctions
            .iter()
            .map(|j| JunctionPlan {
                parent: j.parent,
                daughters: j.daughters.clone(),
            })
            .collect();

        Ok(Simulation {
            grids,
            junctions,
            root: network.root,
            terminals,
            ctx,
            inflow: inflow.clone(),
            steps_per_period: n_steps,
            step_index: 0,
            max_flow_residual: 0.0,
            max_pressure_residual: 0.0,
            vol_in: 0.0,
            vol_out: 0.0,
            resonance_flags,
        })
    }

    pub fn dt(&self) -> f64 {
        self.ctx.dt
    }

    pub fn time(&self) -> f64 {
        self.step_index as f64 * self.ctx.dt
    }

    pub fn context(&self) -> &StepContext {
        &self.ctx
    }

    /// Reset the per-cycle volume accounting.
    pub fn reset_volume_audit(&mut self) {
        self.vol_in = 0.0;
        self.vol_out = 0.0;
    }

    pub fn volumes(&self) -> (f64, f64) {
        (self.vol_in, self.vol_out)
    }

    pub fn total_stored_volume(&self) -> f64 {
        self.grids.iter().map(|g| g.stored_volume()).sum()
    }

    /// Advance the whole network by one time step.
    pub fn step(&mut self) -> Result<()> {
        let q_in_old = self.grids[self.root].q[0];
        let q_out_old: f64 = self
            .terminals
            .iter()
            .map(|&t| self.grids[t].q[self.grids[t].m - 1])
            .sum();

        // Commit terminal outlet flows into the convolution histories.
        for &t in &self.terminals {
            let g = &mut self.grids[t];
            let q_end = g.q[g.m - 1];
            g.conv.as_mut().unwrap().push(q_end);
        }

        // Interior update. Vessels are independent, but at this grain (tens
        // of microseconds for the whole network) task dispatch costs more
        // than the work, so the loop stays sequential; results do not depend
        // on worker count either way.
        let ctx = self.ctx;
        let time_now = self.time();
        for g in self.grids.iter_mut() {
            if let Some(j) = g.interior_step(&ctx) {
                return Err(Error::Numerics(format!(
                    "non-positive area in vessel {} near grid point {} at t = {:.6} s",
                    g.id, j, time_now
                )));
            }
        }
        for g in &self.grids {
            if !g.cfl_ratio.is_finite() || g.cfl_ratio > 1.0 {
                return Err(Error::Numerics(format!(
                    "CFL violation in vessel {} (ratio {:.3}) at t = {:.6} s",
                    g.id, g.cfl_ratio, time_now
                )));
            }
        }

        // Root inlet.
        let t_next = (self.step_index + 1) as f64 * self.ctx.dt;
        let q_prescribed = self.inflow.value_at(t_next);
        let (a_in, q_in) = boundary::solve_inlet(&self.grids[self.root], &ctx, q_prescribed)?;
        self.grids[self.root].a_new[0] = a_in;
        self.grids[self.root].q_new[0] = q_in;

        // Junctions.
        for plan in &self.junctions {
            let parent = &self.grids[plan.parent];
            let daughters: Vec<&VesselGrid> =
                plan.daughters.iter().map(|&d| &self.grids[d]).collect();
            let sol = boundary::solve_junction(parent, &daughters, &ctx)?;
            self.max_flow_residual = self.max_flow_residual.max(sol.flow_residual);
            self.max_pressure_residual = self.max_pressure_residual.max(sol.pressure_residual);
            {
                let gp = &mut self.grids[plan.parent];
                let jp = gp.m - 1;
                gp.a_new[jp] = sol.parent_end.0;
                gp.q_new[jp] = sol.parent_end.1;
            }
            for (i, &d) in plan.daughters.iter().enumerate() {
                let gd = &mut self.grids[d];
                gd.a_new[0] = sol.daughter_starts[i].0;
                gd.q_new[0] = sol.daughter_starts[i].1;
            }
        }

        // Terminal outlets.
        for &t in &self.terminals {
            let (a_t, q_t) = boundary::solve_terminal(&self.grids[t], &ctx)?;
            let g = &mut self.grids[t];
            let jb = g.m - 1;
            g.a_new[jb] = a_t;
            g.q_new[jb] = q_t;
        }

        for g in &mut self.grids {
            g.swap_state();
        }
        self.step_index += 1;

        // Trapezoid volume bookkeeping for the audit.
        let q_in_new = self.grids[self.root].q[0];
        let q_out_new: f64 = self
            .terminals
            .iter()
            .map(|&t| self.grids[t].q[self.grids[t].m - 1])
            .sum();
        self.vol_in += 0.5 * (q_in_old + q_in_new) * self.ctx.dt;
        self.vol_out += 0.5 * (q_out_old + q_out_new) * self.ctx.dt;

        Ok(())
    }
}

/// CFL sizing without building spectra or running: returns the bound on dt
/// and the samples per period the solver would pick.
pub fn estimate_time_step(
    network: &VesselNetwork,
    grid_cfg: &GridConfig,
    period: f64,
) -> Result<(f64, usize)> {
    let mut dt_bound = f64::INFINITY;
    for i in 0..network.vessels.len() {
        let g = VesselGrid::new(network, i, grid_cfg.dx_cm);
        let cmax = g.c0.iter().cloned().fold(0.0f64, f64::max);
        dt_bound = dt_bound.min(grid_cfg.cfl_safety * g.dx / (cmax + CFL_VELOCITY_HEADROOM));
    }
    let n = match grid_cfg.steps_per_period {
        Some(n) => n,
        None => ((period / dt_bound).ceil() as usize).next_power_of_two().max(1024),
    };
    Ok((dt_bound, n))
}

/// Run a posture-adjusted simulation to periodic convergence and return the
/// last recorded cycle at three stations per vessel (inlet, midpoint,
/// outlet), pressures in mmHg.
pub fn run_simulation(
    network: &VesselNetwork,
    inflow: &Waveform,
    grid_cfg: &GridConfig,
    posture: Posture,
    trees: &TreeDefaults,
    opts: &SolverOptions,
) -> Result<SimulationResult> {
    let mut net = network.clone();
    assign_gravity_angles(&mut net, posture)?;
    let mut sim = Simulation::new(&net, inflow, grid_cfg, trees, opts)?;

    let n = sim.steps_per_period;
    let out_samples = grid_cfg.output_samples.clamp(1, n);
    if n % out_samples != 0 {
        return Err(Error::Config(format!(
            "output_samples = {out_samples} must divide the steps per period {n}"
        )));
    }
    let stride = n / out_samples;

    // Station layout: proximal, midpoint, distal grid point of each vessel.
    let station_idx: Vec<Vec<usize>> = sim
        .grids
        .iter()
        .map(|g| vec![0, (g.m - 1) / 2, g.m - 1])
        .collect();
    let n_stations: usize = station_idx.iter().map(|s| s.len()).sum();

    let mut cur = CycleBuffer::new(n_stations, out_samples);
    let mut prev = CycleBuffer::new(n_stations, out_samples);

    let mut cycles_run = 0;
    let mut converged = false;
    let mut delta = f64::INFINITY;
    let mut volume_audit = (0.0, 0.0, 0.0);

    for cycle in 0..grid_cfg.max_cycles {
        sim.reset_volume_audit();
        let stored_start = sim.total_stored_volume();
        std::mem::swap(&mut cur, &mut prev);
        for s in 0..n {
            if s % stride == 0 {
                record_sample(&sim, &station_idx, &mut cur, s / stride, opts.p0);
            }
            sim.step()?;
        }
        cycles_run = cycle + 1;
        let stored_end = sim.total_stored_volume();
        let (vin, vout) = sim.volumes();
        volume_audit = (vin, vout, stored_end - stored_start);

        if cycle > 0 {
            delta = cur.relative_delta(&prev, sim.context().rho);
            if delta < grid_cfg.periodicity_tol {
                converged = true;
                break;
            }
        }
    }

    let (vin, vout, dstored) = volume_audit;
    let audit_rel = if vin.abs() > 1e-12 {
        (vin - vout - dstored).abs() / vin.abs()
    } else {
        (vin - vout - dstored).abs()
    };

    let time: Vec<f64> = (0..out_samples)
        .map(|k| k as f64 * stride as f64 * sim.dt())
        .collect();
    let mut vessels = Vec::with_capacity(sim.grids.len());
    let mut flat = 0usize;
    for (vi, g) in sim.grids.iter().enumerate() {
        let mut stations = Vec::new();
        for &j in &station_idx[vi] {
            let buf = &cur.stations[flat];
            stations.push(StationSeries {
                x_cm: g.x(j),
                c0: g.c0[j],
                p_mmhg: buf.p.iter().map(|p| p / MMHG).collect(),
                q_mls: buf.q.clone(),
                a_cm2: buf.a.clone(),
            });
            flat += 1;
        }
        vessels.push(VesselSeries {
            id: g.id,
            name: g.name.clone(),
            stations,
        });
    }

    Ok(SimulationResult {
        period: inflow.period,
        time,
        vessels,
        diagnostics: RunDiagnostics {
            cycles_run,
            converged,
            final_cycle_delta: delta,
            steps_per_period: n,
            dt_s: sim.dt(),
            max_junction_flow_residual: sim.max_flow_residual,
            max_junction_pressure_residual: sim.max_pressure_residual,
            volume_audit_rel: audit_rel,
            volume_in_ml: vin,
            volume_out_ml: vout,
            volume_stored_delta_ml: dstored,
            resonance_flags: sim.resonance_flags,
        },
        delta_cm: sim.context().delta,
        rho: sim.context().rho,
        mu: sim.context().rho * sim.context().nu,
    })
}

struct StationBuf {
    p: Vec<f64>,
    q: Vec<f64>,
    a: Vec<f64>,
}

struct CycleBuffer {
    stations: Vec<StationBuf>,
}

impl CycleBuffer {
    fn new(n_stations: usize, samples: usize) -> CycleBuffer {
        CycleBuffer {
            stations: (0..n_stations)
                .map(|_| StationBuf {
                    p: vec![0.0; samples],
                    q: vec![0.0; samples],
                    a: vec![0.0; samples],
                })
                .collect(),
        }
    }

    /// Relative L2 change of the scaled (p, q) series against another cycle.
    fn relative_delta(&self, other: &CycleBuffer, rho: f64) -> f64 {
        let p_scale = scales::pressure(rho);
        let q_scale = scales::FLOW;
        let mut num = 0.0;
        let mut den = 0.0;
        for (a, b) in self.stations.iter().zip(&other.stations) {
            for k in 0..a.p.len() {
                let dp = (a.p[k] - b.p[k]) / p_scale;
                let dq = (a.q[k] - b.q[k]) / q_scale;
                num += dp * dp + dq * dq;
                let p = a.p[k] / p_scale;
                let q = a.q[k] / q_scale;
                den += p * p + q * q;
            }
        }
        (num / den.max(1e-300)).sqrt()
    }
}

fn record_sample(
    sim: &Simulation,
    station_idx: &[Vec<usize>],
    buf: &mut CycleBuffer,
    k: usize,
    p0: f64,
) {
    let mut flat = 0usize;
    for (vi, stations) in station_idx.iter().enumerate() {
        let g = &sim.grids[vi];
        for &j in stations {
            let s = &mut buf.stations[flat];
            s.p[k] = g.pressure(j, g.a[j], p0);
            s.q[k] = g.q[j];
            s.a[k] = g.a[j];
            flat += 1;
        }
    }
}
