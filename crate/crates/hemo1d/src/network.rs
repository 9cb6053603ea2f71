//! Arterial network representation: tapered elastic vessel segments joined in
//! a rooted tree, plus the construction utilities used to build networks from
//! measured dimensions (allometric length scaling, exponential taper fitting,
//! gravity-angle assignment for posture studies).

use crate::error::{Error, Result};
use crate::wall::{stiffness_with_sign, StiffnessSign, WallLaw};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

/// Default axial taper rate (1/cm) applied when a vessel is built from its
/// endpoint radii alone. Matches the decay rate fitted to a thoracic-aorta
/// radius profile; the remaining two coefficients are solved so the segment
/// hits both endpoint radii exactly.
pub const DEFAULT_TAPER_RATE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fluid {
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_mu")]
    pub mu: f64,
    #[serde(default = "default_g")]
    pub g: f64,
}

fn default_rho() -> f64 {
    1.057
}
fn default_mu() -> f64 {
    0.032
}
fn default_g() -> f64 {
    981.0
}

impl Default for Fluid {
    fn default() -> Self {
        Fluid {
            rho: default_rho(),
            mu: default_mu(),
            g: default_g(),
        }
    }
}

impl Fluid {
    /// Kinematic viscosity nu = mu / rho.
    pub fn nu(&self) -> f64 {
        self.mu / self.rho
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StiffnessConstants {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    #[serde(default)]
    pub k2_convention: StiffnessSign,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    Up,
    Down,
    Horizontal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Posture {
    Supine,
    Upright,
}

/// Exponential taper r(x) = n1 exp(-n2 x) + n3.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Taper {
    pub n1: f64,
    pub n2: f64,
    pub n3: f64,
}

impl Taper {
    /// Solve the two endpoint conditions r(0) = r_in, r(length) = r_out for
    /// (n1, n3) at a fixed decay rate. Uniform vessels get n1 = n2 = 0.
    pub fn from_endpoints(r_in: f64, r_out: f64, length: f64, rate: f64) -> Taper {
        if (r_in - r_out).abs() < 1e-12 {
            return Taper {
                n1: 0.0,
                n2: 0.0,
                n3: r_in,
            };
        }
        let n1 = (r_in - r_out) / (1.0 - (-rate * length).exp());
        Taper {
            n1,
            n2: rate,
            n3: r_in - n1,
        }
    }

    pub fn radius(&self, x: f64) -> f64 {
        self.n1 * (-self.n2 * x).exp() + self.n3
    }

    pub fn radius_deriv(&self, x: f64) -> f64 {
        -self.n1 * self.n2 * (-self.n2 * x).exp()
    }
}

/// One tapered elastic vessel segment.
#[derive(Debug, Clone, PartialEq)]
pub struct Vessel {
    pub id: u32,
    pub name: String,
    /// Segment length (cm).
    pub length: f64,
    /// Inlet radius (cm).
    pub r_in: f64,
    /// Outlet radius (cm).
    pub r_out: f64,
    pub taper: Taper,
    /// Per-vessel stiffness override for k3 (also inherited by the vessel's
    /// structured tree when terminal).
    pub k3_override: Option<f64>,
    /// Per-vessel structured-tree minimum radius override.
    pub r_min_override: Option<f64>,
    pub orientation: Option<Orientation>,
    pub terminal: bool,
    pub parent: Option<u32>,
    /// Angle between the vessel axis and the gravitational field.
    pub theta: f64,
    /// cos(theta), stored exactly so a supine run carries a true zero.
    pub cos_theta: f64,
}

impl Vessel {
    /// Reference radius r0(x) from the taper law. Errors outside [0, L].
    pub fn radius_at(&self, x: f64) -> Result<f64> {
        if !(0.0..=self.length).contains(&x) {
            return Err(Error::Value(format!(
                "x = {x} outside [0, {}] for vessel {}",
                self.length, self.id
            )));
        }
        Ok(self.taper.radius(x))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Junction {
    /// Index of the parent vessel (its distal end meets this junction).
    pub parent: usize,
    /// Indices of daughter vessels, ordered by id.
    pub daughters: Vec<usize>,
}

/// A validated rooted-tree arterial network. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct VesselNetwork {
    pub vessels: Vec<Vessel>,
    pub junctions: Vec<Junction>,
    /// Index of the root vessel.
    pub root: usize,
    pub fluid: Fluid,
    pub stiffness: StiffnessConstants,
    pub posture: Posture,
    /// Non-fatal findings gathered while loading (e.g. expanding taper).
    pub warnings: Vec<String>,
}

impl VesselNetwork {
    pub fn index_of(&self, id: u32) -> Option<usize> {
        self.vessels.iter().position(|v| v.id == id)
    }

    pub fn effective_k3(&self, vessel: &Vessel) -> f64 {
        vessel.k3_override.unwrap_or(self.stiffness.k3)
    }

    /// Stiffness Eh/r0 at radius r0 using this network's constants and the
    /// given vessel's k3 override.
    pub fn wall_stiffness(&self, vessel: &Vessel, r0: f64) -> f64 {
        stiffness_with_sign(
            r0,
            self.stiffness.k1,
            self.stiffness.k2,
            self.effective_k3(vessel),
            self.stiffness.k2_convention,
        )
    }

    /// Wall law at axial position x of a vessel, with reference pressure p0.
    pub fn wall_at(&self, vessel: &Vessel, x: f64, p0: f64) -> Result<WallLaw> {
        let r0 = vessel.radius_at(x)?;
        Ok(WallLaw {
            p0,
            a0: PI * r0 * r0,
            r0,
            eh_r0: self.wall_stiffness(vessel, r0),
        })
    }

    pub fn terminal_indices(&self) -> Vec<usize> {
        (0..self.vessels.len())
            .filter(|&i| self.vessels[i].terminal)
            .collect()
    }

    /// Vessel indices ordered parents-before-daughters starting at the root.
    pub fn topological_order(&self) -> Vec<usize> {
        let daughters = self.daughter_map();
        let mut order = Vec::with_capacity(self.vessels.len());
        let mut stack = vec![self.root];
        while let Some(i) = stack.pop() {
            order.push(i);
            if let Some(ds) = daughters.get(&i) {
                for &d in ds.iter().rev() {
                    stack.push(d);
                }
            }
        }
        order
    }

    fn daughter_map(&self) -> BTreeMap<usize, Vec<usize>> {
        let mut map: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for j in &self.junctions {
            map.insert(j.parent, j.daughters.clone());
        }
        map
    }

    /// Serializable file form; `load_network(save(n))` reproduces `n`.
    pub fn to_file(&self) -> NetworkFile {
        NetworkFile {
            fluid: self.fluid,
            stiffness: self.stiffness,
            posture: Some(self.posture),
            vessels: self
                .vessels
                .iter()
                .map(|v| VesselRecord {
                    id: v.id,
                    name: v.name.clone(),
                    length_cm: v.length,
                    r_in_cm: v.r_in,
                    r_out_cm: v.r_out,
                    parent: v.parent,
                    orientation: v.orientation,
                    terminal: v.terminal,
                    overrides: if v.k3_override.is_none() && v.r_min_override.is_none() {
                        None
                    } else {
                        Some(VesselOverrides {
                            k3: v.k3_override,
                            r_min: v.r_min_override,
                        })
                    },
                })
                .collect(),
        }
    }
}

// ---------------------------------------------------------------------------
// File schema
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkFile {
    #[serde(default)]
    pub fluid: Fluid,
    pub stiffness: StiffnessConstants,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub posture: Option<Posture>,
    pub vessels: Vec<VesselRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VesselRecord {
    pub id: u32,
    pub name: String,
    pub length_cm: f64,
    pub r_in_cm: f64,
    pub r_out_cm: f64,
    pub parent: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orientation: Option<Orientation>,
    pub terminal: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overrides: Option<VesselOverrides>,
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct VesselOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k3: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_min: Option<f64>,
}

/// Load and validate a network file (JSON, CGS units).
pub fn load_network(path: &Path) -> Result<VesselNetwork> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Parse(format!("cannot read {}: {e}", path.display())))?;
    let file: NetworkFile =
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    build_network(file)
}

pub fn build_network(file: NetworkFile) -> Result<VesselNetwork> {
    if file.vessels.is_empty() {
        return Err(Error::Topology("network has no vessels".into()));
    }
    if file.fluid.rho <= 0.0 || file.fluid.mu <= 0.0 {
        return Err(Error::Value(format!(
            "fluid constants must be positive (rho = {}, mu = {})",
            file.fluid.rho, file.fluid.mu
        )));
    }

    let mut warnings = Vec::new();
    let mut records = file.vessels.clone();
    records.sort_by_key(|r| r.id);
    for pair in records.windows(2) {
        if pair[0].id == pair[1].id {
            return Err(Error::Topology(format!("duplicate vessel id {}", pair[0].id)));
        }
    }

    let index: BTreeMap<u32, usize> = records.iter().enumerate().map(|(i, r)| (r.id, i)).collect();

    let mut roots = Vec::new();
    let mut daughters: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        if r.length_cm <= 0.0 || r.r_in_cm <= 0.0 || r.r_out_cm <= 0.0 {
            return Err(Error::Value(format!(
                "vessel {} has non-positive dimension (L = {}, r_in = {}, r_out = {})",
                r.id, r.length_cm, r.r_in_cm, r.r_out_cm
            )));
        }
        if r.r_out_cm > r.r_in_cm {
            warnings.push(format!(
                "vessel {} ({}) expands along its length (r_in = {} < r_out = {})",
                r.id, r.name, r.r_in_cm, r.r_out_cm
            ));
        }
        match r.parent {
            None => roots.push(i),
            Some(pid) => {
                let pi = *index.get(&pid).ok_or_else(|| {
                    Error::Topology(format!("vessel {} references unknown parent {pid}", r.id))
                })?;
                if pi == i {
                    return Err(Error::Topology(format!("vessel {} is its own parent", r.id)));
                }
                daughters.entry(pi).or_default().push(i);
            }
        }
    }
    if roots.is_empty() {
        return Err(Error::Topology("no root vessel (every vessel has a parent)".into()));
    }
    if roots.len() > 1 {
        let ids: Vec<u32> = roots.iter().map(|&i| records[i].id).collect();
        return Err(Error::Topology(format!("multiple roots: {ids:?}")));
    }
    let root = roots[0];

    // Reachability from the root doubles as the cycle check: a parent chain
    // that loops can never reach the root.
    let mut seen = vec![false; records.len()];
    let mut stack = vec![root];
    let mut reached = 0usize;
    while let Some(i) = stack.pop() {
        if seen[i] {
            return Err(Error::Topology(format!(
                "cycle detected at vessel {}",
                records[i].id
            )));
        }
        seen[i] = true;
        reached += 1;
        if let Some(ds) = daughters.get(&i) {
            stack.extend(ds.iter().copied());
        }
    }
    if reached != records.len() {
        let orphan: Vec<u32> = records
            .iter()
            .enumerate()
            .filter(|(i, _)| !seen[*i])
            .map(|(_, r)| r.id)
            .collect();
        return Err(Error::Topology(format!(
            "vessels not reachable from the root (cycle or orphan): {orphan:?}"
        )));
    }

    for (i, r) in records.iter().enumerate() {
        let is_leaf = !daughters.contains_key(&i);
        if is_leaf && !r.terminal {
            return Err(Error::Topology(format!(
                "leaf vessel {} must carry the terminal flag",
                r.id
            )));
        }
        if !is_leaf && r.terminal {
            return Err(Error::Topology(format!(
                "vessel {} is marked terminal but has daughters",
                r.id
            )));
        }
    }

    let vessels: Vec<Vessel> = records
        .iter()
        .map(|r| Vessel {
            id: r.id,
            name: r.name.clone(),
            length: r.length_cm,
            r_in: r.r_in_cm,
            r_out: r.r_out_cm,
            taper: Taper::from_endpoints(r.r_in_cm, r.r_out_cm, r.length_cm, DEFAULT_TAPER_RATE),
            k3_override: r.overrides.and_then(|o| o.k3),
            r_min_override: r.overrides.and_then(|o| o.r_min),
            orientation: r.orientation,
            terminal: r.terminal,
            parent: r.parent,
            theta: std::f64::consts::FRAC_PI_2,
            cos_theta: 0.0,
        })
        .collect();

    let junctions = daughters
        .into_iter()
        .map(|(parent, ds)| Junction {
            parent,
            daughters: ds,
        })
        .collect();

    let mut network = VesselNetwork {
        vessels,
        junctions,
        root,
        fluid: file.fluid,
        stiffness: file.stiffness,
        posture: file.posture.unwrap_or(Posture::Supine),
        warnings,
    };
    let posture = network.posture;
    assign_gravity_angles(&mut network, posture)?;
    Ok(network)
}

// ---------------------------------------------------------------------------
// Construction utilities
// ---------------------------------------------------------------------------

/// Allometric scaling configuration: literature weight `w1`, patient weight
/// `w2`, exponent `alpha`. The default ratio is w1/w2; `invert_ratio` selects
/// the w2/w1 convention instead.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PatientScaling {
    pub w1_kg: f64,
    pub w2_kg: f64,
    #[serde(default = "default_alpha_scale")]
    pub alpha: f64,
    #[serde(default)]
    pub invert_ratio: bool,
}

fn default_alpha_scale() -> f64 {
    0.35
}

/// L2 = L1 (w1/w2)^alpha.
pub fn allometric_scale(l1: f64, scaling: &PatientScaling) -> Result<f64> {
    if l1 <= 0.0 {
        return Err(Error::Value(format!("length must be positive, got {l1}")));
    }
    if scaling.w1_kg <= 0.0 || scaling.w2_kg <= 0.0 || scaling.alpha <= 0.0 {
        return Err(Error::Value(
            "patient scaling needs positive weights and exponent".into(),
        ));
    }
    let ratio = if scaling.invert_ratio {
        scaling.w2_kg / scaling.w1_kg
    } else {
        scaling.w1_kg / scaling.w2_kg
    };
    Ok(l1 * ratio.powf(scaling.alpha))
}

/// Assign gravity angles for a posture.
///
/// Supine: theta = pi/2 everywhere, so the gravity source term vanishes.
/// Upright: vessels carrying blood upward get theta = -pi, downward theta = 0,
/// horizontal theta = pi/2, from the per-vessel orientation labels.
pub fn assign_gravity_angles(network: &mut VesselNetwork, posture: Posture) -> Result<()> {
    for v in &mut network.vessels {
        let (theta, cos_theta) = match posture {
            Posture::Supine => (std::f64::consts::FRAC_PI_2, 0.0),
            Posture::Upright => match v.orientation {
                Some(Orientation::Up) => (-std::f64::consts::PI, -1.0),
                Some(Orientation::Down) => (0.0, 1.0),
                Some(Orientation::Horizontal) => (std::f64::consts::FRAC_PI_2, 0.0),
                None => {
                    return Err(Error::Value(format!(
                        "vessel {} has no orientation label (required for upright posture)",
                        v.id
                    )))
                }
            },
        };
        v.theta = theta;
        v.cos_theta = cos_theta;
    }
    network.posture = posture;
    Ok(())
}

// ---------------------------------------------------------------------------
// Taper fitting
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct TaperFit {
    pub n1: f64,
    pub n2: f64,
    pub n3: f64,
    /// Euclidean norm of the residuals at the returned coefficients.
    pub residual_norm: f64,
    pub converged: bool,
}

/// Least-squares fit of r = n1 exp(-n2 x) + n3 to radius samples.
///
/// Damped Gauss-Newton; n2 is initialized from a log-linear regression of
/// r - r(end) against x. All-equal radii short-circuit to (0, 0, r).
pub fn fit_taper(samples: &[(f64, f64)]) -> Result<TaperFit> {
    if samples.len() < 3 {
        return Err(Error::Value(format!(
            "taper fit needs at least 3 samples, got {}",
            samples.len()
        )));
    }
    for w in samples.windows(2) {
        if w[1].0 <= w[0].0 {
            return Err(Error::Value("taper fit sample positions must increase".into()));
        }
    }
    if samples.iter().any(|&(_, r)| r <= 0.0) {
        return Err(Error::Value("taper fit radii must be positive".into()));
    }

    let r_last = samples[samples.len() - 1].1;
    let spread = samples
        .iter()
        .map(|&(_, r)| (r - r_last).abs())
        .fold(0.0, f64::max);
    if spread < 1e-12 {
        return Ok(TaperFit {
            n1: 0.0,
            n2: 0.0,
            n3: r_last,
            residual_norm: 0.0,
            converged: true,
        });
    }

    // Log-linear init for n2 from the positive part of r - r(end).
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut n = 0.0;
    for &(x, r) in samples {
        let d = r - r_last;
        if d > 1e-12 {
            let y = d.ln();
            sx += x;
            sy += y;
            sxx += x * x;
            sxy += x * y;
            n += 1.0;
        }
    }
    let slope = if n >= 2.0 && (n * sxx - sx * sx).abs() > 1e-300 {
        (n * sxy - sx * sy) / (n * sxx - sx * sx)
    } else {
        0.0
    };
    let mut p = [
        (samples[0].1 - r_last).max(1e-6),
        (-slope).max(1e-3),
        r_last,
    ];

    let residuals = |p: &[f64; 3]| -> Vec<f64> {
        samples
            .iter()
            .map(|&(x, r)| p[0] * (-p[1] * x).exp() + p[2] - r)
            .collect()
    };
    let norm = |v: &[f64]| v.iter().map(|e| e * e).sum::<f64>().sqrt();

    let mut res = residuals(&p);
    let mut cost = norm(&res);
    let mut converged = false;
    for _ in 0..200 {
        // J^T J and J^T r for the 3-parameter model.
        let mut jtj = [[0.0f64; 3]; 3];
        let mut jtr = [0.0f64; 3];
        for (k, &(x, _)) in samples.iter().enumerate() {
            let e = (-p[1] * x).exp();
            let row = [e, -p[0] * x * e, 1.0];
            for a in 0..3 {
                for b in 0..3 {
                    jtj[a][b] += row[a] * row[b];
                }
                jtr[a] += row[a] * res[k];
            }
        }
        let mut lambda = 1e-12 * (jtj[0][0] + jtj[1][1] + jtj[2][2]).max(1.0);
        let mut improved = false;
        for _ in 0..20 {
            let mut m = jtj;
            for (a, row) in m.iter_mut().enumerate() {
                row[a] += lambda;
            }
            let rhs = [-jtr[0], -jtr[1], -jtr[2]];
            let Some(step) = solve3(m, rhs) else {
                lambda *= 10.0;
                continue;
            };
            let trial = [p[0] + step[0], p[1] + step[1], p[2] + step[2]];
            let trial_res = residuals(&trial);
            let trial_cost = norm(&trial_res);
            if trial_cost <= cost {
                let rel_step = (step.iter().map(|s| s * s).sum::<f64>()).sqrt()
                    / (1.0 + p.iter().map(|v| v * v).sum::<f64>().sqrt());
                p = trial;
                res = trial_res;
                cost = trial_cost;
                improved = true;
                if rel_step < 1e-10 {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if converged || !improved {
            converged = converged || !improved && cost < 1e-8;
            break;
        }
    }

    // The model is invariant under (n1, n2) -> (n1 e^{n2 c}, n2) shifts only
    // up to sampling, so tiny negatives are projection noise.
    let n1 = if p[0] < 0.0 && p[0] > -1e-9 { 0.0 } else { p[0] };
    let n2 = if p[1] < 0.0 && p[1] > -1e-9 { 0.0 } else { p[1] };
    Ok(TaperFit {
        n1,
        n2,
        n3: p[2],
        residual_norm: cost,
        converged: converged && n1 >= 0.0 && n2 >= 0.0,
    })
}

fn solve3(mut m: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let piv = (col..3).max_by(|&a, &bb| m[a][col].abs().total_cmp(&m[bb][col].abs()))?;
        if m[piv][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..3 {
            let f = m[row][col] / m[col][col];
            for k in col..3 {
                m[row][k] -= f * m[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let mut s = b[row];
        for k in row + 1..3 {
            s -= m[row][k] * x[k];
        }
        x[row] = s / m[row][row];
    }
    Some(x)
}
