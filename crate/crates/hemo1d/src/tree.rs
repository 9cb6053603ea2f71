//! Structured-tree outflow impedance.
//!
//! Each terminal vessel is closed by an asymmetric self-similar tree of small
//! vessels (daughter radii alpha*r and beta*r, segment length lrr*r) whose
//! root input impedance Z(0, omega) is computed per frequency from the
//! linearized flow equations and combined across junctions like a
//! transmission-line network. The terminal load at the end of every branch is
//! zero, so the tree's DC impedance is a pure series/parallel Poiseuille sum.
//!
//! Subtrees of equal radius are identical, so the recursion is memoized on
//! the exponent pair (j, k) with r = r_root alpha^j beta^k; this keeps the
//! cost polynomial in depth rather than exponential.

use crate::error::{Error, Result};
use crate::network::{Fluid, VesselNetwork};
use crate::wall::{stiffness_with_sign, StiffnessSign};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use std::f64::consts::PI;

/// Switch from the continued-fraction Bessel ratio to its large-argument
/// asymptotic form beyond this |w0|. At the seam the two branches agree to
/// a few parts in 1e6 of F_J (absolute error ~4e-8, negligible against
/// 1 - F_J) and the error shrinks as |w0|^-4.
const WOMERSLEY_ASYMPTOTIC_CUTOFF: f64 = 50.0;

/// Oscillatory velocity-profile factor F_J = 2 J1(w0) / (w0 J0(w0)) with
/// w0^2 = i^3 r0^2 omega / nu. Returns 1 at omega = 0 (Poiseuille limit) and
/// tends to 0 as |w0| grows.
pub fn womersley_factor(r0: f64, omega: f64, nu: f64) -> Complex64 {
    debug_assert!(r0 > 0.0 && omega >= 0.0 && nu > 0.0);
    if omega == 0.0 {
        return Complex64::new(1.0, 0.0);
    }
    let s = r0 * (omega / nu).sqrt();
    // sqrt(i^3) on the upper branch: w0 = s (-1 + i)/sqrt(2). F_J is even in
    // w0 so the branch choice is free; Im w0 > 0 suits the asymptotics.
    let w0 = Complex64::new(-s / std::f64::consts::SQRT_2, s / std::f64::consts::SQRT_2);
    if s > WOMERSLEY_ASYMPTOTIC_CUTOFF {
        // J1/J0 ~ i + 1/(2 w0) + i/(8 w0^2) for Im w0 -> +inf.
        let inv = 1.0 / w0;
        let ratio = Complex64::i() + 0.5 * inv + Complex64::i() * 0.125 * inv * inv;
        return 2.0 * ratio / w0;
    }
    let ratio = bessel_j1_over_j0(w0);
    2.0 * ratio / w0
}

/// J1(z)/J0(z) by the modified Lentz continued fraction built from the
/// three-term recurrence; stable wherever J0(z) != 0. Hand-rolled complex
/// arithmetic: this sits in the innermost loop of the spectrum sweep.
fn bessel_j1_over_j0(z: Complex64) -> Complex64 {
    let inv_norm = 1.0 / (z.re * z.re + z.im * z.im);
    let (tr, ti) = (2.0 * z.re * inv_norm, -2.0 * z.im * inv_norm); // 2/z
    let (mut fr, mut fi) = (1e-30f64, 0.0f64);
    let (mut cr, mut ci) = (fr, fi);
    let (mut dr, mut di) = (0.0f64, 0.0f64);
    let max_iter = (2.0 * z.norm()) as usize + 64;
    for j in 1..=max_iter {
        let k = j as f64;
        let (br, bi) = (tr * k, ti * k);
        let s = if j == 1 { 1.0 } else { -1.0 };
        // d = b + s d; c = b + s / c
        dr = br + s * dr;
        di = bi + s * di;
        if dr * dr + di * di < 1e-60 {
            dr = 1e-30;
            di = 0.0;
        }
        let cn = 1.0 / (cr * cr + ci * ci);
        cr = br + s * cr * cn;
        ci = bi - s * ci * cn;
        if cr * cr + ci * ci < 1e-60 {
            cr = 1e-30;
            ci = 0.0;
        }
        // d <- 1/d; delta = c d; f *= delta
        let dn = 1.0 / (dr * dr + di * di);
        dr *= dn;
        di *= -dn;
        let er = cr * dr - ci * di;
        let ei = cr * di + ci * dr;
        let (nfr, nfi) = (fr * er - fi * ei, fr * ei + fi * er);
        fr = nfr;
        fi = nfi;
        let du = er - 1.0;
        if du * du + ei * ei < 1e-30 {
            break;
        }
    }
    Complex64::new(fr, fi)
}

/// Parameters for one structured tree.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StructuredTreeSpec {
    /// Root radius (cm); the tree attaches to a terminal vessel outlet.
    pub r_root: f64,
    /// Radius ratio of the larger daughter, 0 < beta <= alpha < 1.
    pub alpha: f64,
    /// Radius ratio of the smaller daughter.
    pub beta: f64,
    /// Minimum generated radius (cm); daughters below it are not generated.
    pub r_min: f64,
    /// Segment length-to-radius ratio.
    pub lrr: f64,
    pub fluid: Fluid,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k2_convention: StiffnessSign,
    /// Terminal impedance applied where no daughters are generated. Zero.
    pub z_terminal: f64,
    /// Hard limit on tree depth before erroring out.
    pub generation_cap: u32,
}

/// Tree-shape defaults shared by all terminal vessels of a run.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TreeDefaults {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_lrr")]
    pub lrr: f64,
    #[serde(default = "default_r_min")]
    pub r_min_cm: f64,
    #[serde(default = "default_generation_cap")]
    pub generation_cap: u32,
}

fn default_alpha() -> f64 {
    0.90
}
fn default_beta() -> f64 {
    0.60
}
fn default_lrr() -> f64 {
    50.0
}
fn default_r_min() -> f64 {
    0.01
}
fn default_generation_cap() -> u32 {
    60
}

impl Default for TreeDefaults {
    fn default() -> Self {
        TreeDefaults {
            alpha: default_alpha(),
            beta: default_beta(),
            lrr: default_lrr(),
            r_min_cm: default_r_min(),
            generation_cap: default_generation_cap(),
        }
    }
}

impl StructuredTreeSpec {
    /// Tree for a terminal vessel: rooted at the vessel outlet radius, with
    /// the vessel's r_min override applied. Small-vessel stiffness uses the
    /// network's shared constants; per-vessel k3 overrides are large-vessel
    /// calibration and do not propagate into the microvascular beds.
    pub fn for_vessel(
        network: &VesselNetwork,
        vessel_index: usize,
        defaults: &TreeDefaults,
    ) -> Result<Self> {
        let v = &network.vessels[vessel_index];
        let spec = StructuredTreeSpec {
            r_root: v.r_out,
            alpha: defaults.alpha,
            beta: defaults.beta,
            r_min: v.r_min_override.unwrap_or(defaults.r_min_cm),
            lrr: defaults.lrr,
            fluid: network.fluid,
            k1: network.stiffness.k1,
            k2: network.stiffness.k2,
            k3: network.stiffness.k3,
            k2_convention: network.stiffness.k2_convention,
            z_terminal: 0.0,
            generation_cap: defaults.generation_cap,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta <= self.alpha && self.alpha < 1.0) {
            return Err(Error::Value(format!(
                "tree ratios must satisfy 0 < beta <= alpha < 1 (alpha = {}, beta = {})",
                self.alpha, self.beta
            )));
        }
        if self.r_root <= 0.0 || self.r_min <= 0.0 || self.lrr <= 0.0 {
            return Err(Error::Value(
                "tree radii and length ratio must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Depth of the deepest chain (pure-alpha path).
    pub fn max_generations(&self) -> u32 {
        if self.r_root < self.r_min {
            return 0;
        }
        ((self.r_root / self.r_min).ln() / (1.0 / self.alpha).ln()).floor() as u32
    }

    fn radius(&self, j: u32, k: u32) -> f64 {
        self.r_root * self.alpha.powi(j as i32) * self.beta.powi(k as i32)
    }

    fn segment(&self, r: f64) -> SegmentGeom {
        let a0 = PI * r * r;
        let f = stiffness_with_sign(r, self.k1, self.k2, self.k3, self.k2_convention);
        let compliance = 1.5 * a0 / f;
        let c0 = ((2.0 / 3.0) * f / self.fluid.rho).sqrt();
        let length = self.lrr * r;
        SegmentGeom {
            r0: r,
            length,
            a0,
            c0,
            compliance,
            r_poiseuille: 8.0 * self.fluid.mu * length / (PI * r.powi(4)),
            nu: self.fluid.nu(),
        }
    }
}

/// Frequency-independent constants of one tree segment.
#[derive(Debug, Clone, Copy)]
pub struct SegmentGeom {
    pub r0: f64,
    pub length: f64,
    pub a0: f64,
    pub c0: f64,
    pub compliance: f64,
    pub r_poiseuille: f64,
    pub nu: f64,
}

/// Input impedance of one segment terminated by `z_out`.
///
/// omega = 0 uses the Poiseuille limit Z_out + 8 mu L / (pi r^4); omega > 0
/// uses the two-port transfer relation with complex wave speed
/// c = c0 sqrt(1 - F_J) and admittance scale g = C c. Returns the impedance
/// and a flag marking a near-resonant denominator that was re-evaluated at a
/// perturbed frequency.
pub fn segment_impedance_core(z_out: Complex64, omega: f64, seg: &SegmentGeom) -> (Complex64, bool) {
    if omega == 0.0 {
        return (z_out + seg.r_poiseuille, false);
    }
    match segment_transfer(z_out, omega, seg) {
        Some(z) => (z, false),
        None => {
            let z = segment_transfer(z_out, omega * (1.0 + 1e-9), seg)
                .unwrap_or_else(|| z_out + seg.r_poiseuille);
            (z, true)
        }
    }
}

fn segment_transfer(z_out: Complex64, omega: f64, seg: &SegmentGeom) -> Option<Complex64> {
    let fj = womersley_factor(seg.r0, omega, seg.nu);
    let c = seg.c0 * (Complex64::new(1.0, 0.0) - fj).sqrt();
    let g = seg.compliance * c;
    let phase = omega * seg.length / c;
    let (sin, cos) = (phase.sin(), phase.cos());
    let num = Complex64::i() * sin / g + z_out * cos;
    let den = cos + Complex64::i() * g * z_out * sin;
    if den.norm() < 1e-14 * (1.0 + (g * z_out).norm()) {
        return None;
    }
    Some(num / den)
}

/// Convenience wrapper evaluating the segment constants from a tree spec.
pub fn segment_impedance(
    z_out: Complex64,
    r0: f64,
    length: f64,
    omega: f64,
    spec: &StructuredTreeSpec,
) -> Result<Complex64> {
    if r0 <= 0.0 {
        return Err(Error::Value(format!("segment radius must be positive, got {r0}")));
    }
    if omega < 0.0 {
        return Err(Error::Value(format!("negative frequency {omega}")));
    }
    let mut seg = spec.segment(r0);
    seg.length = length;
    seg.r_poiseuille = 8.0 * spec.fluid.mu * length / (PI * r0.powi(4));
    Ok(segment_impedance_core(z_out, omega, &seg).0)
}

/// Root impedance sampled at omega_k = 2 pi k / T for k = 0..N/2, plus the
/// periodic impulse response used for time-domain coupling.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpedanceSpectrum {
    pub period: f64,
    /// Samples per period of the time grid the impulse response lives on.
    pub n: usize,
    /// Z(0, omega_k), k = 0..N/2 inclusive. The Nyquist entry is real.
    pub z: Vec<Complex64>,
    /// Periodic impulse response z(t_j), j = 0..N-1, per unit time.
    pub impulse: Vec<f64>,
    /// Number of frequencies that hit the resonance guard.
    pub resonance_flags: usize,
}

impl ImpedanceSpectrum {
    pub fn dt(&self) -> f64 {
        self.period / self.n as f64
    }

    pub fn omega(&self, k: usize) -> f64 {
        2.0 * PI * k as f64 / self.period
    }

    pub fn dc(&self) -> f64 {
        self.z[0].re
    }
}

/// Compute the root impedance spectrum of a structured tree.
///
/// Frequencies are independent and evaluated in parallel; within one
/// frequency the junction recursion is memoized on the radius exponents.
pub fn root_impedance_spectrum(
    spec: &StructuredTreeSpec,
    period: f64,
    n: usize,
) -> Result<ImpedanceSpectrum> {
    spec.validate()?;
    if n < 16 || n % 2 != 0 {
        return Err(Error::Value(format!(
            "spectrum needs an even sample count >= 16, got {n}"
        )));
    }
    if period <= 0.0 {
        return Err(Error::Value(format!("period must be positive, got {period}")));
    }
    let depth = spec.max_generations();
    if depth > spec.generation_cap {
        return Err(Error::Value(format!(
            "structured tree exceeds {} generations (needs {depth}); raise r_min = {} or lower alpha = {} / beta = {}",
            spec.generation_cap, spec.r_min, spec.alpha, spec.beta
        )));
    }

    let table = TreeTable::build(spec);
    let results: Vec<(Complex64, usize)> = (0..=n / 2)
        .into_par_iter()
        .map(|k| {
            let omega = 2.0 * PI * k as f64 / period;
            table.root_impedance(omega)
        })
        .collect();

    let mut z: Vec<Complex64> = results.iter().map(|(v, _)| *v).collect();
    let resonance_flags = results.iter().map(|(_, f)| f).sum();
    // Real Nyquist entry keeps the impulse response exactly real.
    let last = z.len() - 1;
    z[last] = Complex64::new(z[last].re, 0.0);

    let impulse = impulse_response(&z, period);
    Ok(ImpedanceSpectrum {
        period,
        n,
        z,
        impulse,
        resonance_flags,
    })
}

/// Segment table indexed by radius exponents (j, k); entry present iff the
/// segment is generated (radius >= r_min). The root is always generated.
struct TreeTable {
    segs: Vec<Vec<Option<SegmentGeom>>>,
    z_terminal: f64,
}

impl TreeTable {
    fn build(spec: &StructuredTreeSpec) -> TreeTable {
        let jmax = spec.max_generations() as usize;
        let kmax = if spec.r_root < spec.r_min {
            0
        } else {
            ((spec.r_root / spec.r_min).ln() / (1.0 / spec.beta).ln()).floor() as usize
        };
        let mut segs: Vec<Vec<Option<SegmentGeom>>> = vec![vec![None; kmax + 1]; jmax + 1];
        for (j, row) in segs.iter_mut().enumerate() {
            for (k, slot) in row.iter_mut().enumerate() {
                let r = spec.radius(j as u32, k as u32);
                if r >= spec.r_min || (j, k) == (0, 0) {
                    *slot = Some(spec.segment(r));
                }
            }
        }
        TreeTable {
            segs,
            z_terminal: spec.z_terminal,
        }
    }

    fn exists(&self, j: usize, k: usize) -> bool {
        self.segs
            .get(j)
            .and_then(|row| row.get(k))
            .map(|s| s.is_some())
            .unwrap_or(false)
    }

    /// Z at the tree root for one frequency. Children are processed before
    /// parents by walking levels j + k from deep to shallow.
    fn root_impedance(&self, omega: f64) -> (Complex64, usize) {
        let jmax = self.segs.len() - 1;
        let kmax = self.segs[0].len() - 1;
        let mut z: Vec<Vec<Complex64>> =
            vec![vec![Complex64::new(0.0, 0.0); kmax + 1]; jmax + 1];
        let mut flags = 0usize;
        for level in (0..=jmax + kmax).rev() {
            for j in (0..=jmax.min(level)).rev() {
                let k = level - j;
                if k > kmax || self.segs[j][k].is_none() {
                    continue;
                }
                let seg = self.segs[j][k].as_ref().unwrap();
                let d1 = self.exists(j + 1, k).then(|| z[j + 1][k]);
                let d2 = self.exists(j, k + 1).then(|| z[j][k + 1]);
                let load = match (d1, d2) {
                    (Some(z1), Some(z2)) => z1 * z2 / (z1 + z2),
                    (Some(z1), None) => z1,
                    (None, Some(z2)) => z2,
                    (None, None) => Complex64::new(self.z_terminal, 0.0),
                };
                let (zi, flagged) = segment_impedance_core(load, omega, seg);
                if flagged {
                    flags += 1;
                }
                z[j][k] = zi;
            }
        }
        (z[0][0], flags)
    }
}

/// Real periodic impulse response of a half spectrum (k = 0..N/2).
///
/// The convention pairs with the solver's convolution: with
/// h_j = dt * z(t_j), a discrete-frequency input q e^{i omega_k t} produces
/// the output Z(omega_k) q e^{i omega_k t} exactly.
pub fn impulse_response(z_half: &[Complex64], period: f64) -> Vec<f64> {
    let n = 2 * (z_half.len() - 1);
    let mut full: Vec<Complex64> = Vec::with_capacity(n);
    full.extend_from_slice(z_half);
    for k in (1..z_half.len() - 1).rev() {
        full.push(z_half[k].conj());
    }
    // Drop any imaginary residue at Nyquist so the response is exactly real.
    full[z_half.len() - 1] = Complex64::new(full[z_half.len() - 1].re, 0.0);

    let mut planner = FftPlanner::new();
    let ifft = planner.plan_fft_inverse(n);
    ifft.process(&mut full);
    full.iter().map(|v| v.re / period).collect()
}

// ---------------------------------------------------------------------------
// Streaming FIR convolution
// ---------------------------------------------------------------------------

/// Streaming FIR evaluator for the outlet pressure convolution
/// p(t_n) = sum_{j=0}^{N-1} h_j q_{n-j}.
///
/// The j = 0 term is the caller's business (its input is the unknown being
/// solved for at the boundary); `tail()` returns the sum over j >= 1 given
/// the samples pushed so far. Uniform partitioned convolution keeps the cost
/// per step at one short direct dot product plus amortized FFT work, while
/// computing exactly the same sum as the naive loop.
pub struct FirConvolver {
    h0: f64,
    /// h[1..block] used for the direct head.
    head: Vec<f64>,
    /// FFT(2B) of each tail partition h[bB..(b+1)B], b = 1..K-1.
    partitions: Vec<Vec<Complex64>>,
    /// Frequency-domain delay line, most recent completed block first.
    fdl: std::collections::VecDeque<Vec<Complex64>>,
    /// Tail contribution of completed blocks to the current block's samples.
    block_out: Vec<f64>,
    /// Last `block` input samples (ring, newest at position (n-1) % block).
    ring: Vec<f64>,
    /// Previous completed input block.
    prev_block: Vec<f64>,
    /// Input samples accumulated in the current block.
    cur_block: Vec<f64>,
    block: usize,
    pos: usize,
    fft: std::sync::Arc<dyn rustfft::Fft<f64>>,
    ifft: std::sync::Arc<dyn rustfft::Fft<f64>>,
}

impl FirConvolver {
    pub fn new(h: &[f64]) -> FirConvolver {
        let n = h.len();
        assert!(n >= 2, "FIR needs at least 2 taps");
        // Largest divisor of n not above 512; a power of two for the usual
        // power-of-two tap counts.
        let mut block = (n / 2).clamp(1, 512);
        while n % block != 0 {
            block -= 1;
        }
        let parts = n / block;

        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(2 * block);
        let ifft = planner.plan_fft_inverse(2 * block);

        let mut partitions = Vec::with_capacity(parts.saturating_sub(1));
        for b in 1..parts {
            let mut buf = vec![Complex64::new(0.0, 0.0); 2 * block];
            for i in 0..block {
                buf[i] = Complex64::new(h[b * block + i], 0.0);
            }
            fft.process(&mut buf);
            partitions.push(buf);
        }
        let fdl = std::collections::VecDeque::from(vec![
            vec![Complex64::new(0.0, 0.0); 2 * block];
            parts.saturating_sub(1)
        ]);

        FirConvolver {
            h0: h[0],
            head: h[1..block].to_vec(),
            partitions,
            fdl,
            block_out: vec![0.0; block],
            ring: vec![0.0; block],
            prev_block: vec![0.0; block],
            cur_block: Vec::with_capacity(block),
            block,
            pos: 0,
            fft,
            ifft,
        }
    }

    pub fn head_coeff(&self) -> f64 {
        self.h0
    }

    /// Sum over j in [1, N) of h_j q_{n-j} for the step about to be closed.
    pub fn tail(&self) -> f64 {
        let s = self.pos % self.block;
        // Direct head against q_{n-1}, q_{n-2}, ...: the ring wraps at most
        // once, so the dot product splits into two contiguous runs.
        let (h1, h2) = self.head.split_at(s.min(self.head.len()));
        let run1: f64 = h1
            .iter()
            .zip(self.ring[..s].iter().rev())
            .map(|(h, q)| h * q)
            .sum();
        let run2: f64 = h2
            .iter()
            .zip(self.ring[s + 1..].iter().rev())
            .map(|(h, q)| h * q)
            .sum();
        self.block_out[s] + run1 + run2
    }

    /// Commit the input sample for the current step and advance.
    pub fn push(&mut self, q: f64) {
        let s = self.pos % self.block;
        self.ring[s] = q;
        self.cur_block.push(q);
        self.pos += 1;
        if self.cur_block.len() == self.block {
            self.complete_block();
        }
    }

    fn complete_block(&mut self) {
        // Spectrum of the overlap-save window [prev_block | cur_block].
        let mut buf = vec![Complex64::new(0.0, 0.0); 2 * self.block];
        for i in 0..self.block {
            buf[i] = Complex64::new(self.prev_block[i], 0.0);
            buf[self.block + i] = Complex64::new(self.cur_block[i], 0.0);
        }
        self.fft.process(&mut buf);
        self.fdl.push_front(buf);
        self.fdl.pop_back();

        std::mem::swap(&mut self.prev_block, &mut self.cur_block);
        self.cur_block.clear();

        // Tail contribution for the upcoming block: partition b against the
        // window ending b blocks ago.
        let mut acc = vec![Complex64::new(0.0, 0.0); 2 * self.block];
        for (b, part) in self.partitions.iter().enumerate() {
            let x = &self.fdl[b];
            for i in 0..2 * self.block {
                acc[i] += part[i] * x[i];
            }
        }
        self.ifft.process(&mut acc);
        let scale = 1.0 / (2 * self.block) as f64;
        for i in 0..self.block {
            self.block_out[i] = acc[self.block + i].re * scale;
        }
    }
}
