//! Run configuration, measured-flow conservation rescaling, scenario
//! orchestration, and result export. Everything the command-line front end
//! needs that is not numerics.

use crate::analysis::{build_report, exercise_transform, AnalysisReport};
use crate::error::{Error, Result};
use crate::network::{load_network, Posture, VesselNetwork};
use crate::solver::{run_simulation, GridConfig, RunDiagnostics, SimulationResult, SolverOptions};
use crate::tree::TreeDefaults;
use crate::waveform::Waveform;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    /// Network file (JSON, CGS units).
    pub network: PathBuf,
    /// Inflow waveform CSV (t_s,q_mls), one period.
    pub inflow: PathBuf,
    #[serde(default = "default_posture")]
    pub posture: Posture,
    #[serde(default)]
    pub exercise: bool,
    #[serde(default = "default_flow_factor")]
    pub flow_factor: f64,
    #[serde(default = "default_period_factor")]
    pub period_factor: f64,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub tree: TreeDefaults,
    /// Reference pressure of the wall law (g/cm/s^2).
    #[serde(default)]
    pub p0: f64,
    /// Per-vessel overrides applied on top of the network file's own.
    #[serde(default)]
    pub vessel_overrides: BTreeMap<u32, ConfigOverride>,
    /// Named vessel-id sets for regional flow fractions.
    #[serde(default)]
    pub regions: BTreeMap<String, Vec<u32>>,
    /// Vessels to run wave-intensity analysis on.
    #[serde(default)]
    pub wia_vessels: Vec<u32>,
    /// Optional measured-flow plane set for the conservation utility.
    #[serde(default)]
    pub measured_flows: Option<PathBuf>,
    /// Write each terminal vessel's impedance spectrum under out/impedance.
    #[serde(default)]
    pub dump_impedance: bool,
    /// Output directory.
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Worker threads (defaults to the machine's core count).
    #[serde(default)]
    pub threads: Option<usize>,
}

fn default_posture() -> Posture {
    Posture::Supine
}
fn default_flow_factor() -> f64 {
    2.0
}
fn default_period_factor() -> f64 {
    0.6
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct ConfigOverride {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k3: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_min: Option<f64>,
}

/// Parse and validate a run configuration file. Relative paths inside the
/// file resolve against the file's directory.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg: RunConfig = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let rebase = |p: &PathBuf| {
        if p.is_relative() {
            base.join(p)
        } else {
            p.clone()
        }
    };
    cfg.network = rebase(&cfg.network);
    cfg.inflow = rebase(&cfg.inflow);
    cfg.measured_flows = cfg.measured_flows.as_ref().map(rebase);
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.network.exists() {
            return Err(Error::Config(format!(
                "network file {} does not exist",
                self.network.display()
            )));
        }
        if !self.inflow.exists() {
            return Err(Error::Config(format!(
                "inflow file {} does not exist",
                self.inflow.display()
            )));
        }
        if let Some(mf) = &self.measured_flows {
            if !mf.exists() {
                return Err(Error::Config(format!(
                    "measured-flow file {} does not exist",
                    mf.display()
                )));
            }
        }
        if self.flow_factor <= 0.0 || self.period_factor <= 0.0 {
            return Err(Error::Config("exercise factors must be positive".into()));
        }
        Ok(())
    }

    /// Load the network with config-level overrides applied, and the inflow
    /// (exercise-transformed when the flag is set).
    pub fn load_inputs(&self) -> Result<(VesselNetwork, Waveform)> {
        let mut network = load_network(&self.network)?;
        for (id, ov) in &self.vessel_overrides {
            let idx = network.index_of(*id).ok_or_else(|| {
                Error::Config(format!("vessel override references unknown vessel id {id}"))
            })?;
            if let Some(k3) = ov.k3 {
                network.vessels[idx].k3_override = Some(k3);
            }
            if let Some(r_min) = ov.r_min {
                network.vessels[idx].r_min_override = Some(r_min);
            }
        }
        for (name, ids) in &self.regions {
            for id in ids {
                if network.index_of(*id).is_none() {
                    return Err(Error::Config(format!(
                        "region {name:?} references unknown vessel id {id}"
                    )));
                }
            }
        }
        for id in &self.wia_vessels {
            if network.index_of(*id).is_none() {
                return Err(Error::Config(format!("wia vessel id {id} not in network")));
            }
        }

        let inflow = Waveform::from_csv(&self.inflow)?;
        let inflow = if self.exercise {
            exercise_transform(&inflow, self.flow_factor, self.period_factor, inflow.len())?
        } else {
            inflow
        };
        Ok((network, inflow))
    }

    /// Canonical digest of the configuration for the provenance manifest.
    pub fn sha256(&self) -> String {
        let canon = serde_json::to_string(self).expect("config serializes");
        let mut h = Sha256::new();
        h.update(canon.as_bytes());
        hex_string(&h.finalize())
    }
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

// ---------------------------------------------------------------------------
// Measured-flow conservation rescaling
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeasuredPlane {
    pub name: String,
    pub mean_lmin: f64,
    #[serde(default)]
    pub parent: Option<String>,
    /// Marks the continuing main-vessel plane at its parent's junction.
    #[serde(default)]
    pub trunk: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeasuredFlowSet {
    pub planes: Vec<MeasuredPlane>,
}

impl MeasuredFlowSet {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Parse(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ScaledPlane {
    pub name: String,
    pub measured_lmin: f64,
    pub scaled_lmin: f64,
    pub factor: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScaledFlows {
    pub planes: Vec<ScaledPlane>,
}

impl ScaledFlows {
    pub fn get(&self, name: &str) -> Option<&ScaledPlane> {
        self.planes.iter().find(|p| p.name == name)
    }
}

/// Enforce mass conservation across measured flow planes.
///
/// Trunk planes are clipped so no plane carries more than its upstream
/// plane; branch planes at each junction are scaled by a common factor so the
/// junction closes exactly: trunk + sum(branches) = parent.
pub fn scale_measured_flows(set: &MeasuredFlowSet) -> Result<ScaledFlows> {
    let n = set.planes.len();
    if n == 0 {
        return Ok(ScaledFlows { planes: Vec::new() });
    }
    for p in &set.planes {
        if p.mean_lmin < 0.0 {
            return Err(Error::Value(format!(
                "plane {:?} has negative mean flow {}",
                p.name, p.mean_lmin
            )));
        }
    }
    let index: BTreeMap<&str, usize> = set
        .planes
        .iter()
        .enumerate()
        .map(|(i, p)| (p.name.as_str(), i))
        .collect();
    if index.len() != n {
        return Err(Error::Value("duplicate plane names".into()));
    }

    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut roots = Vec::new();
    for (i, p) in set.planes.iter().enumerate() {
        match &p.parent {
            None => roots.push(i),
            Some(parent) => {
                let pi = *index.get(parent.as_str()).ok_or_else(|| {
                    Error::Value(format!(
                        "plane {:?} references unknown parent {parent:?}",
                        p.name
                    ))
                })?;
                children[pi].push(i);
            }
        }
    }

    let mut scaled = vec![f64::NAN; n];
    let mut factor = vec![1.0f64; n];
    let mut stack: Vec<usize> = roots.clone();
    for &r in &roots {
        scaled[r] = set.planes[r].mean_lmin;
    }
    let mut visited = 0usize;
    while let Some(i) = stack.pop() {
        visited += 1;
        if visited > n {
            return Err(Error::Value("plane relations contain a cycle".into()));
        }
        let parent_scaled = scaled[i];
        let trunks: Vec<usize> = children[i]
            .iter()
            .copied()
            .filter(|&c| set.planes[c].trunk)
            .collect();
        if trunks.len() > 1 {
            return Err(Error::Value(format!(
                "plane {:?} has more than one trunk child",
                set.planes[i].name
            )));
        }
        let trunk_scaled = if let Some(&t) = trunks.first() {
            let clipped = set.planes[t].mean_lmin.min(parent_scaled);
            scaled[t] = clipped;
            factor[t] = if set.planes[t].mean_lmin > 0.0 {
                clipped / set.planes[t].mean_lmin
            } else {
                1.0
            };
            clipped
        } else {
            0.0
        };

        let branches: Vec<usize> = children[i]
            .iter()
            .copied()
            .filter(|&c| !set.planes[c].trunk)
            .collect();
        if !branches.is_empty() {
            let target = parent_scaled - trunk_scaled;
            if target < 0.0 {
                return Err(Error::Value(format!(
                    "infeasible junction at plane {:?}: daughter sum target {target} is negative",
                    set.planes[i].name
                )));
            }
            let measured_sum: f64 = branches.iter().map(|&b| set.planes[b].mean_lmin).sum();
            if measured_sum <= 0.0 {
                if target > 1e-12 {
                    return Err(Error::Value(format!(
                        "infeasible junction at plane {:?}: target {target} but measured branches are zero",
                        set.planes[i].name
                    )));
                }
                for &b in &branches {
                    scaled[b] = 0.0;
                    factor[b] = 1.0;
                }
            } else {
                let f = target / measured_sum;
                for &b in &branches {
                    scaled[b] = set.planes[b].mean_lmin * f;
                    factor[b] = f;
                }
            }
        }
        stack.extend(children[i].iter().copied());
    }
    if scaled.iter().any(|v| v.is_nan()) {
        return Err(Error::Value(
            "plane relations contain a cycle or unreachable plane".into(),
        ));
    }

    Ok(ScaledFlows {
        planes: set
            .planes
            .iter()
            .enumerate()
            .map(|(i, p)| ScaledPlane {
                name: p.name.clone(),
                measured_lmin: p.mean_lmin,
                scaled_lmin: scaled[i],
                factor: factor[i],
            })
            .collect(),
    })
}

// ---------------------------------------------------------------------------
// Run orchestration and artifact output
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub config_sha256: String,
    pub network: PathBuf,
    pub inflow: PathBuf,
    pub posture: Posture,
    pub exercise: bool,
    pub period_s: f64,
    pub grid: GridConfig,
    pub tree: TreeDefaults,
    pub p0: f64,
    pub diagnostics: RunDiagnostics,
    pub wall_clock_s: f64,
}

pub struct RunArtifacts {
    pub result: SimulationResult,
    pub report: AnalysisReport,
    pub manifest: Manifest,
}

/// Execute a configured run: build the network, run to convergence, analyze,
/// and (when `write_files`) write the artifact files.
pub fn execute_run(cfg: &RunConfig, write_files: bool) -> Result<RunArtifacts> {
    let started = std::time::Instant::now();
    let (network, inflow) = cfg.load_inputs()?;
    let opts = SolverOptions {
        p0: cfg.p0,
        dump_impedance_dir: if cfg.dump_impedance && write_files {
            Some(cfg.out.join("impedance"))
        } else {
            None
        },
    };
    let result = run_in_pool(cfg.threads, || {
        run_simulation(&network, &inflow, &cfg.grid, cfg.posture, &cfg.tree, &opts)
    })?;
    let report = build_report(&result, &network, &cfg.regions, &cfg.wia_vessels)?;
    let manifest = Manifest {
        config_sha256: cfg.sha256(),
        network: cfg.network.clone(),
        inflow: cfg.inflow.clone(),
        posture: cfg.posture,
        exercise: cfg.exercise,
        period_s: result.period,
        grid: cfg.grid,
        tree: cfg.tree,
        p0: cfg.p0,
        diagnostics: result.diagnostics.clone(),
        wall_clock_s: started.elapsed().as_secs_f64(),
    };
    if write_files {
        write_artifacts(&cfg.out, &result, &report, &manifest)?;
    }
    Ok(RunArtifacts {
        result,
        report,
        manifest,
    })
}

/// Run a closure inside a dedicated rayon pool when a thread count is given.
pub fn run_in_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    match threads {
        None => f(),
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .expect("thread pool")
            .install(f),
    }
}

pub fn write_artifacts(
    out: &Path,
    result: &SimulationResult,
    report: &AnalysisReport,
    manifest: &Manifest,
) -> Result<()> {
    let vessels_dir = out.join("vessels");
    std::fs::create_dir_all(&vessels_dir)?;
    for v in &result.vessels {
        let path = vessels_dir.join(format!("v{:02}_{}.csv", v.id, sanitize(&v.name)));
        let mut body = String::from("t_s,x_cm,p_mmHg,q_mls,A_cm2\n");
        for s in &v.stations {
            for (k, t) in result.time.iter().enumerate() {
                body.push_str(&format!(
                    "{:.9},{:.4},{:.9},{:.9},{:.9}\n",
                    t, s.x_cm, s.p_mmhg[k], s.q_mls[k], s.a_cm2[k]
                ));
            }
        }
        std::fs::write(path, body)?;
    }
    // Midpoint wall-shear-stress series for every vessel.
    let wss_dir = out.join("wss");
    std::fs::create_dir_all(&wss_dir)?;
    for v in &result.vessels {
        let mid = &v.stations[1];
        let wss = crate::analysis::wall_shear_stress(&mid.q_mls, &mid.a_cm2, result.mu, result.delta_cm)?;
        let mut body = String::from("t_s,wss_g_cm_s2\n");
        for (k, t) in result.time.iter().enumerate() {
            body.push_str(&format!("{:.9},{:.9}\n", t, wss[k]));
        }
        std::fs::write(wss_dir.join(format!("v{:02}_{}.csv", v.id, sanitize(&v.name))), body)?;
    }

    // Wave-intensity series for the vessels the report analyzed.
    if !report.wia.is_empty() {
        let wia_dir = out.join("wia");
        std::fs::create_dir_all(&wia_dir)?;
        let dt = result.time.get(1).copied().unwrap_or(result.period) - result.time[0];
        for summary in &report.wia {
            let v = result
                .vessels
                .iter()
                .find(|v| v.id == summary.id)
                .expect("wia vessel present");
            let mid = &v.stations[1];
            let p_cgs: Vec<f64> = mid.p_mmhg.iter().map(|p| p * crate::wall::MMHG).collect();
            let wia = crate::analysis::wia_decompose(&p_cgs, &mid.q_mls, &mid.a_cm2, result.rho, mid.c0, dt)?;
            let mut body = String::from(
                "t_s,dpdt_plus,dpdt_minus,dudt_plus,dudt_minus,wi_plus,wi_minus,p_plus_mmHg,p_minus_mmHg\n",
            );
            for (k, t) in result.time.iter().enumerate() {
                body.push_str(&format!(
                    "{:.9},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e}\n",
                    t,
                    wia.dpdt_plus[k],
                    wia.dpdt_minus[k],
                    wia.dudt_plus[k],
                    wia.dudt_minus[k],
                    wia.wi_plus[k],
                    wia.wi_minus[k],
                    wia.p_plus[k] / crate::wall::MMHG,
                    wia.p_minus[k] / crate::wall::MMHG,
                ));
            }
            std::fs::write(
                wia_dir.join(format!("v{:02}_{}.csv", v.id, sanitize(&v.name))),
                body,
            )?;
        }
    }

    std::fs::write(
        out.join("report.json"),
        serde_json::to_string_pretty(report).expect("report serializes") + "\n",
    )?;
    std::fs::write(
        out.join("manifest.json"),
        serde_json::to_string_pretty(manifest).expect("manifest serializes") + "\n",
    )?;
    Ok(())
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_lowercase()
            } else {
                '_'
            }
        })
        .collect()
}

/// Re-read the station series of a previous run from its vessels/ directory.
/// Station metadata (c0) is rebuilt from the network geometry.
pub fn read_outputs(out: &Path, network: &VesselNetwork, period: f64) -> Result<SimulationResult> {
    use crate::solver::{StationSeries, VesselSeries};
    let vessels_dir = out.join("vessels");
    let mut vessels = Vec::new();
    let mut time: Vec<f64> = Vec::new();
    for v in &network.vessels {
        let path = vessels_dir.join(format!("v{:02}_{}.csv", v.id, sanitize(&v.name)));
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Error::Parse(format!("cannot read {}: {e}", path.display())))?;
        // Station blocks share the time column; group rows by x.
        let mut stations: Vec<(f64, StationSeries)> = Vec::new();
        for (lineno, line) in text.lines().enumerate().skip(1) {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(Error::Parse(format!(
                    "{}:{}: expected 5 fields",
                    path.display(),
                    lineno + 1
                )));
            }
            let parse = |s: &str| -> Result<f64> {
                s.trim()
                    .parse()
                    .map_err(|e| Error::Parse(format!("{}:{}: {e}", path.display(), lineno + 1)))
            };
            let t = parse(fields[0])?;
            let x = parse(fields[1])?;
            let p = parse(fields[2])?;
            let q = parse(fields[3])?;
            let a = parse(fields[4])?;
            let is_first_station = stations.is_empty();
            let station = match stations.iter_mut().find(|(sx, _)| (*sx - x).abs() < 1e-9) {
                Some((_, s)) => s,
                None => {
                    let r0 = v.taper.radius(x.min(v.length));
                    let c0 =
                        ((2.0 / 3.0) * network.wall_stiffness(v, r0) / network.fluid.rho).sqrt();
                    stations.push((
                        x,
                        StationSeries {
                            x_cm: x,
                            c0,
                            p_mmhg: Vec::new(),
                            q_mls: Vec::new(),
                            a_cm2: Vec::new(),
                        },
                    ));
                    &mut stations.last_mut().unwrap().1
                }
            };
            station.p_mmhg.push(p);
            station.q_mls.push(q);
            station.a_cm2.push(a);
            if vessels.is_empty() && (is_first_station || stations.len() == 1) {
                time.push(t);
            }
        }
        vessels.push(VesselSeries {
            id: v.id,
            name: v.name.clone(),
            stations: stations.into_iter().map(|(_, s)| s).collect(),
        });
    }
    let n_samples = vessels
        .first()
        .and_then(|v| v.stations.first())
        .map(|s| s.p_mmhg.len())
        .unwrap_or(0);
    time.truncate(n_samples);
    Ok(SimulationResult {
        period,
        time,
        vessels,
        diagnostics: RunDiagnostics {
            cycles_run: 0,
            converged: true,
            final_cycle_delta: 0.0,
            steps_per_period: n_samples,
            dt_s: period / n_samples.max(1) as f64,
            max_junction_flow_residual: 0.0,
            max_junction_pressure_residual: 0.0,
            volume_audit_rel: 0.0,
            volume_in_ml: 0.0,
            volume_out_ml: 0.0,
            volume_stored_delta_ml: 0.0,
            resonance_flags: 0,
        },
        delta_cm: (network.fluid.nu() * period / (2.0 * std::f64::consts::PI)).sqrt(),
        rho: network.fluid.rho,
        mu: network.fluid.mu,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plane(name: &str, lmin: f64, parent: Option<&str>, trunk: bool) -> MeasuredPlane {
        MeasuredPlane {
            name: name.into(),
            mean_lmin: lmin,
            parent: parent.map(String::from),
            trunk,
        }
    }

    #[test]
    fn conservative_set_is_identity() {
        let set = MeasuredFlowSet {
            planes: vec![
                plane("inflow", 4.0, None, false),
                plane("trunk", 3.0, Some("inflow"), true),
                plane("branch", 1.0, Some("inflow"), false),
            ],
        };
        let scaled = scale_measured_flows(&set).unwrap();
        for p in &scaled.planes {
            assert!((p.factor - 1.0).abs() < 1e-12, "{p:?}");
            assert!((p.scaled_lmin - p.measured_lmin).abs() < 1e-12);
        }
    }

    #[test]
    fn aortic_chain_clips_and_branches_close() {
        // Trunk targets as tabulated; the ascending-aorta plane exceeds the
        // inflow and is clipped, branch planes rescale to close junctions.
        let set = MeasuredFlowSet {
            planes: vec![
                plane("inflow", 4.06, None, false),
                plane("asc_aorta", 4.14, Some("inflow"), true),
                plane("arch1", 3.32, Some("asc_aorta"), true),
                plane("brachiocephalic", 1.95, Some("asc_aorta"), false),
                plane("arch2", 3.13, Some("arch1"), true),
                plane("l_carotid", 1.19, Some("arch1"), false),
                plane("thoracic", 2.62, Some("arch2"), true),
                plane("l_subclavian", 0.82, Some("arch2"), false),
            ],
        };
        let scaled = scale_measured_flows(&set).unwrap();
        assert!((scaled.get("asc_aorta").unwrap().scaled_lmin - 4.06).abs() < 1e-12);
        // Branch close to the tabulated 0.75 L/min value.
        let brach = scaled.get("brachiocephalic").unwrap().scaled_lmin;
        assert!((brach - 0.75).abs() < 0.02, "brachiocephalic {brach}");
        // Exact conservation at every junction.
        let get = |n: &str| scaled.get(n).unwrap().scaled_lmin;
        assert!((get("asc_aorta") - get("arch1") - get("brachiocephalic")).abs() < 1e-12);
        assert!((get("arch1") - get("arch2") - get("l_carotid")).abs() < 1e-12);
        assert!((get("arch2") - get("thoracic") - get("l_subclavian")).abs() < 1e-12);
    }

    #[test]
    fn cycle_in_planes_is_rejected() {
        let set = MeasuredFlowSet {
            planes: vec![
                plane("a", 1.0, Some("b"), true),
                plane("b", 1.0, Some("a"), true),
            ],
        };
        assert!(scale_measured_flows(&set).is_err());
    }

    #[test]
    fn infeasible_branch_target_is_rejected() {
        let set = MeasuredFlowSet {
            planes: vec![
                plane("inflow", 4.0, None, false),
                plane("trunk", 3.0, Some("inflow"), true),
                plane("branch", 0.0, Some("inflow"), false),
            ],
        };
        assert!(scale_measured_flows(&set).is_err());
    }

    #[test]
    fn config_defaults_and_digest_are_stable() {
        let json = r#"{
            "network": "net.json",
            "inflow": "inflow.csv"
        }"#;
        let cfg: RunConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.posture, Posture::Supine);
        assert!(!cfg.exercise);
        assert!((cfg.flow_factor - 2.0).abs() < 1e-12);
        assert!((cfg.period_factor - 0.6).abs() < 1e-12);
        assert!((cfg.tree.alpha - 0.9).abs() < 1e-12);
        assert!((cfg.tree.beta - 0.6).abs() < 1e-12);
        assert!((cfg.tree.lrr - 50.0).abs() < 1e-12);
        assert!((cfg.tree.r_min_cm - 0.01).abs() < 1e-12);
        let d1 = cfg.sha256();
        let cfg2: RunConfig = serde_json::from_str(json).unwrap();
        assert_eq!(d1, cfg2.sha256());
    }

    #[test]
    fn unknown_override_id_is_rejected() {
        // Single-vessel network on disk, override for a vessel that is not
        // there.
        let dir = std::env::temp_dir().join("hemo1d_config_test");
        std::fs::create_dir_all(&dir).unwrap();
        let net_path = dir.join("net.json");
        std::fs::write(
            &net_path,
            r#"{
                "stiffness": {"k1": 2.0e6, "k2": -35.0, "k3": 3.8e5},
                "vessels": [{"id": 1, "name": "v", "length_cm": 5.0, "r_in_cm": 0.3,
                             "r_out_cm": 0.3, "parent": null, "terminal": true}]
            }"#,
        )
        .unwrap();
        let inflow_path = dir.join("inflow.csv");
        crate::waveform::synthetic_inflow(10.0, 0.5, 64)
            .unwrap()
            .to_csv(&inflow_path)
            .unwrap();

        let mut overrides = BTreeMap::new();
        overrides.insert(
            7u32,
            ConfigOverride {
                k3: Some(5.7e5),
                r_min: None,
            },
        );
        let cfg = RunConfig {
            network: net_path,
            inflow: inflow_path,
            posture: Posture::Supine,
            exercise: false,
            flow_factor: 2.0,
            period_factor: 0.6,
            grid: GridConfig::default(),
            tree: TreeDefaults::default(),
            p0: 0.0,
            vessel_overrides: overrides,
            regions: BTreeMap::new(),
            wia_vessels: Vec::new(),
            measured_flows: None,
            dump_impedance: false,
            out: dir.join("out"),
            threads: None,
        };
        let err = cfg.load_inputs().unwrap_err();
        assert!(err.to_string().contains("unknown vessel id 7"), "{err}");
    }
}
