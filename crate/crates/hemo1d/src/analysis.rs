//! Post-processing of converged cycles: wave-intensity decomposition,
//! reflection coefficients, wall shear stress, regional flow fractions,
//! pressure statistics, and the exercise inflow transform.

use crate::error::{Error, Result};
use crate::network::VesselNetwork;
use crate::solver::SimulationResult;
use crate::wall::MMHG;
use crate::waveform::Waveform;
use serde::Serialize;
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum WaveKind {
    ForwardCompression,
    ForwardExpansion,
    BackwardCompression,
    BackwardExpansion,
}

/// A maximal run of samples carrying one wave type.
#[derive(Debug, Clone, Serialize)]
pub struct WaveSegment {
    pub kind: WaveKind,
    pub start: usize,
    /// Exclusive end index.
    pub end: usize,
    pub peak_intensity: f64,
}

/// Forward/backward decomposition of one period of synchronized p, q, A
/// samples on a uniform periodic grid.
#[derive(Debug, Clone)]
pub struct WiaResult {
    pub dt: f64,
    pub rho_c: f64,
    /// Time-normalized derivative components (centered differences).
    pub dpdt: Vec<f64>,
    pub dudt: Vec<f64>,
    pub dpdt_plus: Vec<f64>,
    pub dpdt_minus: Vec<f64>,
    pub dudt_plus: Vec<f64>,
    pub dudt_minus: Vec<f64>,
    /// Wave intensities WI+- = (dp+-/dt)(du+-/dt). WI+ >= 0 >= WI-.
    pub wi_plus: Vec<f64>,
    pub wi_minus: Vec<f64>,
    /// Cumulative pressure/velocity components built from forward-difference
    /// increments; p_plus + p_minus telescopes exactly to p - p(0).
    pub p_plus: Vec<f64>,
    pub p_minus: Vec<f64>,
    pub u_plus: Vec<f64>,
    pub u_minus: Vec<f64>,
    pub segments: Vec<WaveSegment>,
}

/// Decompose pressure (CGS) and flow into forward and backward components
/// using a constant rho c evaluated at the station's reference state.
pub fn wia_decompose(p: &[f64], q: &[f64], a: &[f64], rho: f64, c: f64, dt: f64) -> Result<WiaResult> {
    let n = p.len();
    if q.len() != n || a.len() != n {
        return Err(Error::Value(format!(
            "wia needs equal-length series (p {}, q {}, a {})",
            n,
            q.len(),
            a.len()
        )));
    }
    if n < 4 {
        return Err(Error::Value("wia needs at least 4 samples".into()));
    }
    if c <= 0.0 || rho <= 0.0 || dt <= 0.0 {
        return Err(Error::Value("wia needs positive rho, c, dt".into()));
    }
    let rho_c = rho * c;
    let u: Vec<f64> = q.iter().zip(a).map(|(q, a)| q / a).collect();

    let central = |s: &[f64], k: usize| (s[(k + 1) % n] - s[(k + n - 1) % n]) / (2.0 * dt);
    let mut dpdt = vec![0.0; n];
    let mut dudt = vec![0.0; n];
    for k in 0..n {
        dpdt[k] = central(p, k);
        dudt[k] = central(&u, k);
    }

    let mut dpdt_plus = vec![0.0; n];
    let mut dpdt_minus = vec![0.0; n];
    let mut dudt_plus = vec![0.0; n];
    let mut dudt_minus = vec![0.0; n];
    let mut wi_plus = vec![0.0; n];
    let mut wi_minus = vec![0.0; n];
    for k in 0..n {
        dpdt_plus[k] = 0.5 * (dpdt[k] + rho_c * dudt[k]);
        dpdt_minus[k] = 0.5 * (dpdt[k] - rho_c * dudt[k]);
        dudt_plus[k] = 0.5 * (dudt[k] + dpdt[k] / rho_c);
        dudt_minus[k] = 0.5 * (dudt[k] - dpdt[k] / rho_c);
        wi_plus[k] = dpdt_plus[k] * dudt_plus[k];
        wi_minus[k] = dpdt_minus[k] * dudt_minus[k];
    }

    // Cumulative components from forward-difference increments; these
    // telescope so the reconstruction identity is exact.
    let mut p_plus = vec![0.0; n];
    let mut p_minus = vec![0.0; n];
    let mut u_plus = vec![0.0; n];
    let mut u_minus = vec![0.0; n];
    for k in 1..n {
        let dp = p[k] - p[k - 1];
        let du = u[k] - u[k - 1];
        let dpp = 0.5 * (dp + rho_c * du);
        let dpm = 0.5 * (dp - rho_c * du);
        let dup = 0.5 * (du + dp / rho_c);
        let dum = 0.5 * (du - dp / rho_c);
        p_plus[k] = p_plus[k - 1] + dpp;
        p_minus[k] = p_minus[k - 1] + dpm;
        u_plus[k] = u_plus[k - 1] + dup;
        u_minus[k] = u_minus[k - 1] + dum;
    }

    let segments = classify(&wi_plus, &dpdt_plus, &wi_minus, &dpdt_minus);

    Ok(WiaResult {
        dt,
        rho_c,
        dpdt,
        dudt,
        dpdt_plus,
        dpdt_minus,
        dudt_plus,
        dudt_minus,
        wi_plus,
        wi_minus,
        p_plus,
        p_minus,
        u_plus,
        u_minus,
        segments,
    })
}

/// Per-sample classification into maximal runs. Incident waves are
/// compressive where WI+ is active and dp+/dt > 0, expansive where
/// dp+/dt < 0; reflected analogues use WI- and dp-/dt.
fn classify(
    wi_plus: &[f64],
    dpdt_plus: &[f64],
    wi_minus: &[f64],
    dpdt_minus: &[f64],
) -> Vec<WaveSegment> {
    let n = wi_plus.len();
    let scale_p = wi_plus.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale_m = wi_minus.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut segments = Vec::new();
    let mut channel = |wi: &[f64], dpdt: &[f64], scale: f64, comp: WaveKind, exp: WaveKind| {
        let eps = 1e-10 * scale;
        let kind_at = |k: usize| -> Option<WaveKind> {
            if wi[k].abs() <= eps {
                None
            } else if dpdt[k] > 0.0 {
                Some(comp)
            } else {
                Some(exp)
            }
        };
        let mut run: Option<(WaveKind, usize, f64)> = None;
        for k in 0..n {
            let here = kind_at(k);
            match (&mut run, here) {
                (Some((kind, start, peak)), Some(h)) if *kind == h => {
                    let _ = start;
                    *peak = peak.max(wi[k].abs());
                }
                (state, here) => {
                    if let Some((kind, start, peak)) = state.take() {
                        segments.push(WaveSegment {
                            kind,
                            start,
                            end: k,
                            peak_intensity: peak,
                        });
                    }
                    if let Some(h) = here {
                        *state = Some((h, k, wi[k].abs()));
                    }
                }
            }
        }
        if let Some((kind, start, peak)) = run {
            segments.push(WaveSegment {
                kind,
                start,
                end: n,
                peak_intensity: peak,
            });
        }
    };
    channel(
        wi_plus,
        dpdt_plus,
        scale_p,
        WaveKind::ForwardCompression,
        WaveKind::ForwardExpansion,
    );
    channel(
        wi_minus,
        dpdt_minus,
        scale_m,
        WaveKind::BackwardCompression,
        WaveKind::BackwardExpansion,
    );
    segments
}

/// Reflection coefficient: the ratio of reflected to incident cumulative
/// pressure amplitudes over the systolic compression window. The window runs
/// from the foot of the main dp+/dt upstroke to the end of the following
/// expansion lobe (the dicrotic transition), found by zero crossings.
pub fn reflection_coefficient(wia: &WiaResult) -> Result<f64> {
    let n = wia.dpdt_plus.len();
    let peak = (0..n)
        .max_by(|&i, &j| wia.dpdt_plus[i].total_cmp(&wia.dpdt_plus[j]))
        .unwrap();
    if wia.dpdt_plus[peak] <= 0.0 {
        return Err(Error::Value("no incident compression upstroke".into()));
    }

    // Walk back (periodically) to the last non-positive dp+/dt sample.
    let mut start = peak;
    for _ in 0..n {
        let prev = (start + n - 1) % n;
        if wia.dpdt_plus[prev] <= 0.0 {
            break;
        }
        start = prev;
        if start == peak {
            break; // everywhere positive
        }
    }
    // Walk forward through the compression, then through the expansion lobe.
    let mut k = peak;
    for _ in 0..n {
        let next = (k + 1) % n;
        if wia.dpdt_plus[next] < 0.0 {
            k = next;
            break;
        }
        k = next;
        if k == peak {
            break;
        }
    }
    let mut end = k;
    for _ in 0..n {
        let next = (end + 1) % n;
        if wia.dpdt_plus[next] >= 0.0 {
            break;
        }
        end = next;
        if end == peak {
            break;
        }
    }

    let window: Vec<usize> = {
        let mut idx = Vec::new();
        let mut k = start;
        loop {
            idx.push(k);
            if k == end {
                break;
            }
            k = (k + 1) % n;
            if idx.len() > n {
                break;
            }
        }
        idx
    };

    let amp = |series: &[f64]| -> f64 {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &k in &window {
            lo = lo.min(series[k]);
            hi = hi.max(series[k]);
        }
        hi - lo
    };
    let dp_plus = amp(&wia.p_plus);
    let dp_minus = amp(&wia.p_minus);
    let p_scale = wia
        .p_plus
        .iter()
        .chain(&wia.p_minus)
        .fold(0.0f64, |m, v| m.max(v.abs()));
    if dp_plus <= 1e-12 * p_scale.max(1e-300) {
        return Err(Error::Value("zero incident pressure amplitude".into()));
    }
    Ok(dp_minus / dp_plus)
}

/// Wall shear stress series tau_w = mu (q/A) / delta (boundary-layer value;
/// the stress is zero in the core by construction).
pub fn wall_shear_stress(q: &[f64], a: &[f64], mu: f64, delta: f64) -> Result<Vec<f64>> {
    if q.len() != a.len() {
        return Err(Error::Value("wall shear stress needs matching series".into()));
    }
    if delta <= 0.0 {
        return Err(Error::Value(format!("boundary layer must be positive, got {delta}")));
    }
    Ok(q.iter().zip(a).map(|(q, a)| mu * (q / a) / delta).collect())
}

/// Exercise transform: flow values scaled by `flow_factor`, cycle shortened
/// by `period_factor`, resampled to `n` points.
pub fn exercise_transform(
    inflow: &Waveform,
    flow_factor: f64,
    period_factor: f64,
    n: usize,
) -> Result<Waveform> {
    inflow.scaled(flow_factor, period_factor, n)
}

/// (systolic, diastolic, pulse) of one period of pressure samples.
pub fn pressure_stats(p: &[f64]) -> Result<(f64, f64, f64)> {
    if p.is_empty() {
        return Err(Error::Value("pressure series is empty".into()));
    }
    let sys = p.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let dia = p.iter().fold(f64::INFINITY, |m, &v| m.min(v));
    Ok((sys, dia, sys - dia))
}

/// Fraction of cardiac output reaching each named region: the sum of the
/// member vessels' mean flows over the root vessel's mean flow, all at
/// vessel midpoints.
pub fn flow_fractions(
    result: &SimulationResult,
    network: &VesselNetwork,
    regions: &BTreeMap<String, Vec<u32>>,
) -> Result<BTreeMap<String, f64>> {
    let mean_flow: BTreeMap<u32, f64> = result
        .vessels
        .iter()
        .map(|v| {
            let q = &v.stations[1].q_mls;
            (v.id, q.iter().sum::<f64>() / q.len() as f64)
        })
        .collect();
    let root_id = network.vessels[network.root].id;
    let root_mean = *mean_flow
        .get(&root_id)
        .ok_or_else(|| Error::Value("root vessel missing from results".into()))?;
    if root_mean.abs() < 1e-300 {
        return Err(Error::Value("root mean flow is zero".into()));
    }

    let mut seen: BTreeMap<u32, &str> = BTreeMap::new();
    let mut out = BTreeMap::new();
    for (name, ids) in regions {
        let mut acc = 0.0;
        for id in ids {
            if let Some(prev) = seen.insert(*id, name) {
                return Err(Error::Value(format!(
                    "vessel {id} appears in regions {prev:?} and {name:?}"
                )));
            }
            acc += mean_flow.get(id).ok_or_else(|| {
                Error::Value(format!("region {name:?} references unknown vessel id {id}"))
            })?;
        }
        out.insert(name.clone(), acc / root_mean);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Report assembly
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct VesselSummary {
    pub id: u32,
    pub name: String,
    pub systolic_mmhg: f64,
    pub diastolic_mmhg: f64,
    pub pulse_mmhg: f64,
    pub mean_flow_mls: f64,
    pub peak_wss: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct WiaSummary {
    pub id: u32,
    pub name: String,
    pub reflection_coefficient: f64,
    pub peak_wi_plus: f64,
    pub peak_wi_minus: f64,
    pub segments: Vec<WaveSegment>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalysisReport {
    pub period_s: f64,
    pub heart_rate_bpm: f64,
    pub boundary_layer_cm: f64,
    pub vessels: Vec<VesselSummary>,
    pub flow_fractions: BTreeMap<String, f64>,
    pub wia: Vec<WiaSummary>,
}

/// Summarize a converged run: per-vessel pressure statistics and peak wall
/// shear stress at the midpoint station, regional flow fractions, and
/// wave-intensity summaries for the requested vessels.
pub fn build_report(
    result: &SimulationResult,
    network: &VesselNetwork,
    regions: &BTreeMap<String, Vec<u32>>,
    wia_vessels: &[u32],
) -> Result<AnalysisReport> {
    let dt = result.time.get(1).copied().unwrap_or(result.period) - result.time[0];
    let mut vessels = Vec::with_capacity(result.vessels.len());
    for v in &result.vessels {
        let mid = &v.stations[1];
        let (sys, dia, pulse) = pressure_stats(&mid.p_mmhg)?;
        let wss = wall_shear_stress(&mid.q_mls, &mid.a_cm2, result.mu, result.delta_cm)?;
        let peak_wss = wss.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        vessels.push(VesselSummary {
            id: v.id,
            name: v.name.clone(),
            systolic_mmhg: sys,
            diastolic_mmhg: dia,
            pulse_mmhg: pulse,
            mean_flow_mls: mid.q_mls.iter().sum::<f64>() / mid.q_mls.len() as f64,
            peak_wss,
        });
    }

    let mut wia_out = Vec::new();
    for id in wia_vessels {
        let v = result
            .vessels
            .iter()
            .find(|v| v.id == *id)
            .ok_or_else(|| Error::Value(format!("wia vessel id {id} not in results")))?;
        let mid = &v.stations[1];
        let p_cgs: Vec<f64> = mid.p_mmhg.iter().map(|p| p * MMHG).collect();
        let wia = wia_decompose(&p_cgs, &mid.q_mls, &mid.a_cm2, result.rho, mid.c0, dt)?;
        let i_r = reflection_coefficient(&wia)?;
        wia_out.push(WiaSummary {
            id: *id,
            name: v.name.clone(),
            reflection_coefficient: i_r,
            peak_wi_plus: wia.wi_plus.iter().fold(0.0f64, |m, &v| m.max(v)),
            peak_wi_minus: wia.wi_minus.iter().fold(0.0f64, |m, &v| m.min(v)),
            segments: wia.segments,
        });
    }

    Ok(AnalysisReport {
        period_s: result.period,
        heart_rate_bpm: 60.0 / result.period,
        boundary_layer_cm: result.delta_cm,
        vessels,
        flow_fractions: flow_fractions(result, network, regions)?,
        wia: wia_out,
    })
}
