//! Per-vessel discretization and the two-step Lax-Wendroff interior update.
//!
//! The conservation form advanced here is
//!   A_t + q_x = 0
//!   q_t + (q^2/A + B)_x = S_geom + S_fric + S_grav
//! with B(A; A0, f) = (4/(3 rho)) f (sqrt(A0 A) - A0), so a resting vessel
//! (A = A0, q = 0) has identically zero flux and source and is preserved to
//! machine precision. Taper and radius-dependent stiffness enter through the
//! analytic x-derivatives of A0 and f.

use crate::network::{Vessel, VesselNetwork};
use crate::tree::FirConvolver;
use std::f64::consts::PI;

/// Frequency-independent coefficients of the flux and source at one axial
/// location, precomputed so the hot loop costs one square root per state.
#[derive(Debug, Clone, Copy, Default)]
struct PointCoef {
    a0: f64,
    sqrt_a0: f64,
    /// a0^(1/4), for the wave speed c = c0 (a0/A)^(1/4).
    qrt_a0: f64,
    c0: f64,
    /// (4 / 3 rho) f
    b_coef: f64,
    /// (4 / 3 rho) df/dx
    geom_f: f64,
    /// (4 / 3 rho) f dA0/dx
    geom_a: f64,
}

impl PointCoef {
    /// Momentum flux q^2/A + B and source term, sharing one sqrt(A).
    #[inline]
    fn flux_source(&self, a: f64, q: f64, fric2: f64, g_cos: f64) -> (f64, f64) {
        let sa = a.sqrt();
        let b = self.b_coef * (self.sqrt_a0 * sa - self.a0);
        let flux2 = q * q / a + b;
        let fric = -fric2 * q / sa;
        let geom = self.geom_f * (2.0 * self.sqrt_a0 * sa - self.a0 - a)
            + self.geom_a * (sa / self.sqrt_a0 - 1.0);
        (flux2, fric + g_cos * a + geom)
    }

    #[inline]
    fn wave_speed(&self, a: f64) -> f64 {
        self.c0 * self.qrt_a0 / a.sqrt().sqrt()
    }
}

/// Geometry, state, and scratch buffers of one discretized vessel.
pub struct VesselGrid {
    pub vessel_index: usize,
    pub id: u32,
    pub name: String,
    pub m: usize,
    pub dx: f64,
    pub length: f64,
    pub cos_theta: f64,

    // Grid-point geometry (len m).
    pub a0: Vec<f64>,
    pub f: Vec<f64>,
    pub c0: Vec<f64>,
    pub da0dx: Vec<f64>,
    pub dfdx: Vec<f64>,
    coef: Vec<PointCoef>,
    coef_mid: Vec<PointCoef>,

    // State at time t and the buffer being built for t + dt.
    pub a: Vec<f64>,
    pub q: Vec<f64>,
    pub a_new: Vec<f64>,
    pub q_new: Vec<f64>,

    // Scratch: point fluxes/sources and half-step state at midpoints.
    fp2: Vec<f64>,
    sp: Vec<f64>,
    a_half: Vec<f64>,
    q_half: Vec<f64>,

    /// Outlet impedance convolution (terminal vessels only).
    pub conv: Option<FirConvolver>,

    /// Largest (|u| + c) dt / dx seen in the last interior update.
    pub cfl_ratio: f64,
}

/// Fluid and scheme constants shared by every vessel of a run.
#[derive(Debug, Clone, Copy)]
pub struct StepContext {
    pub rho: f64,
    pub nu: f64,
    pub g: f64,
    /// Boundary-layer thickness sqrt(nu T / 2 pi) of the running scenario.
    pub delta: f64,
    /// Friction prefactor 2 sqrt(pi) nu / delta; the source term is
    /// -fric2 q / sqrt(A) per unit length.
    pub fric2: f64,
    pub p0: f64,
    pub dt: f64,
}

impl StepContext {
    pub fn new(rho: f64, nu: f64, g: f64, period: f64, p0: f64, dt: f64) -> StepContext {
        let delta = (nu * period / (2.0 * PI)).sqrt();
        StepContext {
            rho,
            nu,
            g,
            delta,
            fric2: 2.0 * PI.sqrt() * nu / delta,
            p0,
            dt,
        }
    }
}

impl VesselGrid {
    pub fn new(network: &VesselNetwork, vessel_index: usize, dx_target: f64) -> VesselGrid {
        let v: &Vessel = &network.vessels[vessel_index];
        let m = ((v.length / dx_target).ceil() as usize + 1).max(8);
        let dx = v.length / (m - 1) as f64;
        let rho = network.fluid.rho;
        let gb = 4.0 / (3.0 * rho);

        let point = |x: f64| -> (f64, f64, f64, f64, f64, PointCoef) {
            let r0 = v.taper.radius(x);
            let dr0 = v.taper.radius_deriv(x);
            // Snap the reference area to the exact square of its stored root
            // so sqrt(a0) * sqrt(A) == a0 holds bitwise at A == a0 and the
            // resting state carries exactly zero flux.
            let s = (PI * r0 * r0).sqrt();
            let a0 = s * s;
            let f = network.wall_stiffness(v, r0);
            let c0 = ((2.0 / 3.0) * f / rho).sqrt();
            let da0 = 2.0 * PI * r0 * dr0;
            // d/dx of k1 exp(e r0) + k3 with e the resolved exponent.
            let e = network.stiffness.k2_convention.exponent(network.stiffness.k2);
            let df = network.stiffness.k1 * e * (e * r0).exp() * dr0;
            let coef = PointCoef {
                a0,
                sqrt_a0: s,
                qrt_a0: s.sqrt(),
                c0,
                b_coef: gb * f,
                geom_f: gb * df,
                geom_a: gb * f * da0,
            };
            (a0, f, c0, da0, df, coef)
        };

        let mut a0 = Vec::with_capacity(m);
        let mut f = Vec::with_capacity(m);
        let mut c0 = Vec::with_capacity(m);
        let mut da0dx = Vec::with_capacity(m);
        let mut dfdx = Vec::with_capacity(m);
        let mut coef = Vec::with_capacity(m);
        for j in 0..m {
            let (a0j, fj, c0j, daj, dfj, cj) = point(j as f64 * dx);
            a0.push(a0j);
            f.push(fj);
            c0.push(c0j);
            da0dx.push(daj);
            dfdx.push(dfj);
            coef.push(cj);
        }
        let mut coef_mid = Vec::with_capacity(m - 1);
        for j in 0..m - 1 {
            coef_mid.push(point((j as f64 + 0.5) * dx).5);
        }

        VesselGrid {
            vessel_index,
            id: v.id,
            name: v.name.clone(),
            m,
            dx,
            length: v.length,
            cos_theta: v.cos_theta,
            a: a0.clone(),
            q: vec![0.0; m],
            a_new: a0.clone(),
            q_new: vec![0.0; m],
            fp2: vec![0.0; m],
            sp: vec![0.0; m],
            a_half: vec![0.0; m - 1],
            q_half: vec![0.0; m - 1],
            a0,
            f,
            c0,
            da0dx,
            dfdx,
            coef,
            coef_mid,
            conv: None,
            cfl_ratio: 0.0,
        }
    }

    pub fn x(&self, j: usize) -> f64 {
        j as f64 * self.dx
    }

    /// Local wave speed c(A, x_j) = c0 (A0/A)^(1/4).
    pub fn wave_speed(&self, j: usize, a: f64) -> f64 {
        self.coef[j].wave_speed(a)
    }

    /// Transmural pressure p(A, x_j).
    pub fn pressure(&self, j: usize, a: f64, p0: f64) -> f64 {
        p0 + (4.0 / 3.0) * self.f[j] * (1.0 - self.coef[j].sqrt_a0 / a.sqrt())
    }

    /// dp/dA at (A, x_j).
    pub fn dpda(&self, j: usize, a: f64) -> f64 {
        (2.0 / 3.0) * self.f[j] * self.coef[j].sqrt_a0 / (a * a.sqrt())
    }

    /// Richtmyer two-step update of the interior points (j = 1..m-2) into the
    /// `a_new` / `q_new` buffers. Boundary entries are left for the closures.
    ///
    /// Returns the index of the first non-positive half-step or updated area,
    /// if any.
    pub fn interior_step(&mut self, ctx: &StepContext) -> Option<usize> {
        let m = self.m;
        let lam = ctx.dt / self.dx;
        let g_cos = ctx.g * self.cos_theta;
        let mut cfl: f64 = 0.0;

        // Point fluxes, sources, and the CFL ratio in one pass.
        for j in 0..m {
            let a = self.a[j];
            let q = self.q[j];
            let (flux2, src) = self.coef[j].flux_source(a, q, ctx.fric2, g_cos);
            self.fp2[j] = flux2;
            self.sp[j] = src;
            let u = q / a;
            cfl = cfl.max((u.abs() + self.coef[j].wave_speed(a)) * lam);
        }
        self.cfl_ratio = cfl;

        // Half step at midpoints. The area predictor averages deviations from
        // the local reference area so a resting tapered vessel stays exactly
        // at rest.
        for j in 0..m - 1 {
            let dev = 0.5 * ((self.a[j] - self.a0[j]) + (self.a[j + 1] - self.a0[j + 1]));
            let a_star = self.coef_mid[j].a0 + dev - 0.5 * lam * (self.q[j + 1] - self.q[j]);
            let q_star = 0.5 * (self.q[j] + self.q[j + 1])
                - 0.5 * lam * (self.fp2[j + 1] - self.fp2[j])
                + 0.25 * ctx.dt * (self.sp[j] + self.sp[j + 1]);
            if !a_star.is_finite() || a_star <= 0.0 {
                return Some(j);
            }
            self.a_half[j] = a_star;
            self.q_half[j] = q_star;
        }

        // Full step from the half-step fluxes and sources; the point scratch
        // arrays are reused for the midpoint values.
        for j in 0..m - 1 {
            let (flux2, src) =
                self.coef_mid[j].flux_source(self.a_half[j], self.q_half[j], ctx.fric2, g_cos);
            self.fp2[j] = flux2;
            self.sp[j] = src;
        }
        for j in 1..m - 1 {
            let a_next = self.a[j] - lam * (self.q_half[j] - self.q_half[j - 1]);
            let q_next = self.q[j] - lam * (self.fp2[j] - self.fp2[j - 1])
                + 0.5 * ctx.dt * (self.sp[j] + self.sp[j - 1]);
            if !a_next.is_finite() || a_next <= 0.0 {
                return Some(j);
            }
            self.a_new[j] = a_next;
            self.q_new[j] = q_next;
        }
        None
    }

    /// Characteristic invariant W+ (outgoing at the distal end) or W-
    /// (outgoing at the proximal end): W_pm = u -/+ 4 (c - c0).
    pub fn invariant(&self, j: usize, a: f64, q: f64, plus: bool) -> f64 {
        let u = q / a;
        let dc = self.wave_speed(j, a) - self.c0[j];
        if plus {
            u - 4.0 * dc
        } else {
            u + 4.0 * dc
        }
    }

    /// Trace the outgoing characteristic from the interior to the boundary
    /// over one time step and return the boundary value of the invariant at
    /// t + dt. The foot point is located with a midpoint (predictor-
    /// corrector) speed and the source integrated trapezoidally, keeping the
    /// boundary treatment second order.
    pub fn trace_invariant(&self, ctx: &StepContext, distal: bool) -> f64 {
        let m = self.m;
        let (jb, plus) = if distal { (m - 1, true) } else { (0, false) };
        let u_b = self.q[jb] / self.a[jb];
        let c_b = self.wave_speed(jb, self.a[jb]);
        let lambda_b = if plus { u_b + c_b } else { u_b - c_b };

        // Predictor foot with the boundary speed, corrector with the mean of
        // boundary and foot speeds.
        let x_pred = (self.x(jb) - lambda_b * ctx.dt).clamp(0.0, self.length);
        let pred = self.probe(x_pred, distal, ctx.rho);
        let lam_pred = if plus {
            pred.u + pred.c
        } else {
            pred.u - pred.c
        };
        let xf = (self.x(jb) - 0.5 * (lambda_b + lam_pred) * ctx.dt).clamp(0.0, self.length);
        let foot = self.probe(xf, distal, ctx.rho);

        let w_f = if plus {
            foot.u - 4.0 * (foot.c - foot.c0)
        } else {
            foot.u + 4.0 * (foot.c - foot.c0)
        };

        // Trapezoidal source: mean of the rates at the foot state and at the
        // current boundary state.
        let dw_foot = foot.invariant_rate(ctx, self.cos_theta, plus);
        let bnd = self.probe(self.x(jb), distal, ctx.rho);
        let dw_bnd = bnd.invariant_rate(ctx, self.cos_theta, plus);
        w_f + 0.5 * ctx.dt * (dw_foot + dw_bnd)
    }

    /// State and geometry at an axial position near one end, interpolated
    /// quadratically through the three points closest to that end.
    fn probe(&self, x: f64, distal: bool, rho: f64) -> ProbeState {
        let base = if distal { self.m - 3 } else { 0 };
        let x0 = self.x(base);
        let s = (x - x0) / self.dx; // in [0, 2]
        let w0 = 0.5 * (s - 1.0) * (s - 2.0);
        let w1 = -s * (s - 2.0);
        let w2 = 0.5 * s * (s - 1.0);
        let pick = |v: &[f64]| w0 * v[base] + w1 * v[base + 1] + w2 * v[base + 2];

        let a = pick(&self.a).max(1e-12);
        let q = pick(&self.q);
        let a0 = pick(&self.a0);
        let f = pick(&self.f);
        let c0 = ((2.0 / 3.0) * f / rho).sqrt();
        ProbeState {
            a,
            q,
            u: q / a,
            a0,
            f,
            da0: pick(&self.da0dx),
            df: pick(&self.dfdx),
            c0,
            c: c0 * (a0 / a).sqrt().sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct ProbeState {
    a: f64,
    q: f64,
    u: f64,
    a0: f64,
    f: f64,
    da0: f64,
    df: f64,
    c0: f64,
    c: f64,
}

impl ProbeState {
    /// dW/dt along the characteristic: friction + gravity + wall-gradient
    /// terms.
    fn invariant_rate(&self, ctx: &StepContext, cos_theta: f64, plus: bool) -> f64 {
        let r = (self.a / PI).sqrt();
        let fric = -2.0 * PI * ctx.nu * r * self.q / (ctx.delta * self.a * self.a);
        let grav = ctx.g * cos_theta;
        let px = (4.0 / 3.0)
            * (self.df * (1.0 - (self.a0 / self.a).sqrt())
                - self.f * self.da0 / (2.0 * (self.a0 * self.a).sqrt()));
        let c0p = self.c0 * self.df / (2.0 * self.f);
        let cx = 0.5 * self.c * (self.df / self.f + self.da0 / (2.0 * self.a0));
        let lam = if plus { self.u + self.c } else { self.u - self.c };
        let sign = if plus { 4.0 } else { -4.0 };
        fric + grav - px / ctx.rho + sign * lam * (c0p - cx)
    }
}

impl VesselGrid {
    /// Commit the freshly built state.
    pub fn swap_state(&mut self) {
        std::mem::swap(&mut self.a, &mut self.a_new);
        std::mem::swap(&mut self.q, &mut self.q_new);
    }

    /// Integral of A over the vessel (trapezoid), for volume audits.
    pub fn stored_volume(&self) -> f64 {
        let mut acc = 0.0;
        for j in 0..self.m - 1 {
            acc += 0.5 * (self.a[j] + self.a[j + 1]) * self.dx;
        }
        acc
    }
}
