//! Boundary and junction closures.
//!
//! Every vessel end is closed by combining the outgoing characteristic
//! invariant (traced from the interior) with the boundary condition proper:
//! prescribed inflow at the root, the impedance convolution at terminal
//! outlets, and mass conservation plus pressure continuity at junctions.

use super::grid::{StepContext, VesselGrid};
use crate::error::{Error, Result};
use crate::scales;

const MAX_NEWTON_ITER: usize = 50;
/// Convergence target for scaled residuals; the acceptance bound is 1e-10.
const NEWTON_TOL: f64 = 1e-11;

/// Residuals cannot drop below the floating-point resolution of the terms
/// they subtract; targets and acceptance bounds are floored accordingly.
fn tol_floor(span: f64, scale: f64) -> f64 {
    8.0 * f64::EPSILON * span / scale
}

/// Inlet closure: q(0) is prescribed, A(0) follows from the outgoing W-.
pub fn solve_inlet(grid: &VesselGrid, ctx: &StepContext, q_in: f64) -> Result<(f64, f64)> {
    let w_minus = grid.trace_invariant(ctx, false);
    let u_scale = scales::velocity();
    let u_span = (q_in / grid.a[0]).abs() + 8.0 * grid.c0[0];
    let target = NEWTON_TOL.max(tol_floor(u_span, u_scale));

    let mut a = grid.a[0];
    for _ in 0..MAX_NEWTON_ITER {
        let g = grid.invariant(0, a, q_in, false) - w_minus;
        if g.abs() / u_scale < target {
            break;
        }
        let c = grid.wave_speed(0, a);
        let dg = -q_in / (a * a) - c / a;
        let mut step = -g / dg;
        // Keep the iterate physical.
        while a + step <= 0.0 {
            step *= 0.5;
        }
        a += step;
        if step.abs() <= 1e-14 * a {
            break;
        }
    }
    let g = grid.invariant(0, a, q_in, false) - w_minus;
    if g.abs() / u_scale > 1e-9f64.max(8.0 * tol_floor(u_span, u_scale)) {
        return Err(Error::Numerics(format!(
            "inlet closure for vessel {} failed to converge (residual {g:.3e})",
            grid.id
        )));
    }
    Ok((a, q_in))
}

/// Terminal closure: the outlet pressure equals the impedance convolution of
/// the outlet flow history; the current-step flow enters implicitly through
/// the head coefficient of the impulse response.
pub fn solve_terminal(grid: &VesselGrid, ctx: &StepContext) -> Result<(f64, f64)> {
    let conv = grid
        .conv
        .as_ref()
        .expect("terminal vessel must carry a convolver");
    let tail = conv.tail();
    let h0 = conv.head_coeff();
    let w_plus = grid.trace_invariant(ctx, true);
    let jb = grid.m - 1;
    let u_scale = scales::velocity();
    let p_scale = scales::pressure(ctx.rho);
    let p_span = (4.0 / 3.0) * grid.f[jb] + (h0 * grid.q[jb]).abs() + tail.abs();
    let u_span = (grid.q[jb] / grid.a[jb]).abs() + 8.0 * grid.c0[jb];
    let target = NEWTON_TOL
        .max(tol_floor(p_span, p_scale))
        .max(tol_floor(u_span, u_scale));

    let mut a = grid.a[jb];
    let mut q = grid.q[jb];
    let mut r1 = grid.invariant(jb, a, q, true) - w_plus;
    let mut r2 = grid.pressure(jb, a, ctx.p0) - ctx.p0 - h0 * q - tail;
    let mut norm = (r1 / u_scale).abs().max((r2 / p_scale).abs());
    for _ in 0..MAX_NEWTON_ITER {
        if norm < target {
            break;
        }
        let c = grid.wave_speed(jb, a);
        let j00 = -q / (a * a) + c / a;
        let j01 = 1.0 / a;
        let j10 = grid.dpda(jb, a);
        let j11 = -h0;
        let det = j00 * j11 - j01 * j10;
        if det.abs() < 1e-300 {
            break;
        }
        let da = (-r1 * j11 + r2 * j01) / det;
        let dq = (-j00 * r2 + j10 * r1) / det;
        // Damped update.
        let prev = norm;
        let mut alpha = 1.0;
        for _ in 0..30 {
            let at = a + alpha * da;
            if at <= 0.0 {
                alpha *= 0.5;
                continue;
            }
            let qt = q + alpha * dq;
            let t1 = grid.invariant(jb, at, qt, true) - w_plus;
            let t2 = grid.pressure(jb, at, ctx.p0) - ctx.p0 - h0 * qt - tail;
            let tnorm = (t1 / u_scale).abs().max((t2 / p_scale).abs());
            if tnorm <= norm || alpha < 1e-4 {
                a = at;
                q = qt;
                r1 = t1;
                r2 = t2;
                norm = tnorm;
                break;
            }
            alpha *= 0.5;
        }
        // At the floating-point floor further iterations cannot help.
        if norm > 0.5 * prev {
            break;
        }
    }
    if norm > 1e-9f64.max(8.0 * target) {
        return Err(Error::Numerics(format!(
            "terminal closure for vessel {} failed to converge (residual {norm:.3e})",
            grid.id
        )));
    }
    Ok((a, q))
}

/// Converged junction values plus the residual audit.
pub struct JunctionSolution {
    pub parent_end: (f64, f64),
    pub daughter_starts: Vec<(f64, f64)>,
    /// |q_p - sum q_i| / flow scale after convergence.
    pub flow_residual: f64,
    /// max_i |p_p - p_i| / pressure scale after convergence.
    pub pressure_residual: f64,
}

/// Junction closure: one mass balance, pressure continuity to each daughter,
/// and the outgoing characteristic of every connected vessel. Damped Newton
/// with the analytic Jacobian.
pub fn solve_junction(
    parent: &VesselGrid,
    daughters: &[&VesselGrid],
    ctx: &StepContext,
) -> Result<JunctionSolution> {
    let n = daughters.len();
    let dim = 2 + 2 * n;
    let jp = parent.m - 1;

    let w_plus = parent.trace_invariant(ctx, true);
    let w_minus: Vec<f64> = daughters.iter().map(|d| d.trace_invariant(ctx, false)).collect();

    let q_scale = scales::FLOW;
    let u_scale = scales::velocity();
    let p_scale = scales::pressure(ctx.rho);

    // Unknowns: [A_p, q_p, A_0, q_0, A_1, q_1, ...].
    let mut x = Vec::with_capacity(dim);
    x.push(parent.a[jp]);
    x.push(parent.q[jp]);
    for d in daughters {
        x.push(d.a[0]);
        x.push(d.q[0]);
    }

    let residuals = |x: &[f64]| -> Vec<f64> {
        let (a_p, q_p) = (x[0], x[1]);
        let mut r = vec![0.0; dim];
        let mut q_sum = 0.0;
        for i in 0..n {
            q_sum += x[3 + 2 * i];
        }
        r[0] = (q_p - q_sum) / q_scale;
        let p_p = parent.pressure(jp, a_p, ctx.p0);
        for (i, d) in daughters.iter().enumerate() {
            r[1 + i] = (p_p - d.pressure(0, x[2 + 2 * i], ctx.p0)) / p_scale;
        }
        r[1 + n] = (parent.invariant(jp, a_p, q_p, true) - w_plus) / u_scale;
        for (i, d) in daughters.iter().enumerate() {
            r[2 + n + i] =
                (d.invariant(0, x[2 + 2 * i], x[3 + 2 * i], false) - w_minus[i]) / u_scale;
        }
        r
    };
    let inf_norm = |r: &[f64]| r.iter().fold(0.0f64, |m, v| m.max(v.abs()));

    let f_span = daughters
        .iter()
        .map(|d| d.f[0])
        .fold(parent.f[jp], f64::max);
    let c_span = daughters
        .iter()
        .map(|d| d.c0[0])
        .fold(parent.c0[jp], f64::max);
    let target = NEWTON_TOL
        .max(tol_floor((4.0 / 3.0) * f_span, p_scale))
        .max(tol_floor(8.0 * c_span, u_scale));

    let mut r = residuals(&x);
    let mut norm = inf_norm(&r);
    for _ in 0..MAX_NEWTON_ITER {
        if norm < target {
            break;
        }
        // Assemble the Jacobian (row-major).
        let mut jac = vec![0.0; dim * dim];
        let (a_p, q_p) = (x[0], x[1]);
        jac[1] = 1.0 / q_scale; // d r0 / d q_p
        for i in 0..n {
            jac[3 + 2 * i] = -1.0 / q_scale;
        }
        let dpda_p = parent.dpda(jp, a_p);
        for (i, d) in daughters.iter().enumerate() {
            let row = 1 + i;
            jac[row * dim] = dpda_p / p_scale;
            jac[row * dim + 2 + 2 * i] = -d.dpda(0, x[2 + 2 * i]) / p_scale;
        }
        {
            let row = 1 + n;
            let c_p = parent.wave_speed(jp, a_p);
            jac[row * dim] = (-q_p / (a_p * a_p) + c_p / a_p) / u_scale;
            jac[row * dim + 1] = (1.0 / a_p) / u_scale;
        }
        for (i, d) in daughters.iter().enumerate() {
            let row = 2 + n + i;
            let a_i = x[2 + 2 * i];
            let q_i = x[3 + 2 * i];
            let c_i = d.wave_speed(0, a_i);
            jac[row * dim + 2 + 2 * i] = (-q_i / (a_i * a_i) - c_i / a_i) / u_scale;
            jac[row * dim + 3 + 2 * i] = (1.0 / a_i) / u_scale;
        }

        let mut rhs: Vec<f64> = r.iter().map(|v| -v).collect();
        if !solve_dense(dim, &mut jac, &mut rhs) {
            return Err(Error::Numerics(format!(
                "singular junction system at parent vessel {}",
                parent.id
            )));
        }

        let prev = norm;
        let mut alpha = 1.0f64;
        let mut accepted = false;
        for _ in 0..30 {
            let trial: Vec<f64> = x.iter().zip(&rhs).map(|(v, s)| v + alpha * s).collect();
            if trial.iter().step_by(2).any(|&a| a <= 0.0) {
                alpha *= 0.5;
                continue;
            }
            let tr = residuals(&trial);
            let tnorm = inf_norm(&tr);
            if tnorm <= norm || alpha < 1e-4 {
                x = trial;
                r = tr;
                norm = tnorm;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        // Stop once the residual stops shrinking (floating-point floor).
        if !accepted || norm > 0.5 * prev {
            break;
        }
    }
    if norm > 1e-10f64.max(8.0 * target) {
        return Err(Error::Numerics(format!(
            "junction at parent vessel {} did not converge after {MAX_NEWTON_ITER} iterations (residual {norm:.3e})",
            parent.id
        )));
    }

    // Physical residual audit at the accepted state.
    let q_sum: f64 = (0..n).map(|i| x[3 + 2 * i]).sum();
    let flow_residual = (x[1] - q_sum).abs() / q_scale;
    let p_p = parent.pressure(jp, x[0], ctx.p0);
    let pressure_residual = daughters
        .iter()
        .enumerate()
        .map(|(i, d)| (p_p - d.pressure(0, x[2 + 2 * i], ctx.p0)).abs() / p_scale)
        .fold(0.0f64, f64::max);

    Ok(JunctionSolution {
        parent_end: (x[0], x[1]),
        daughter_starts: (0..n).map(|i| (x[2 + 2 * i], x[3 + 2 * i])).collect(),
        flow_residual,
        pressure_residual,
    })
}

/// Gaussian elimination with partial pivoting on a row-major square system.
/// Returns false when the matrix is numerically singular.
pub fn solve_dense(n: usize, a: &mut [f64], b: &mut [f64]) -> bool {
    for col in 0..n {
        let mut piv = col;
        let mut best = a[col * n + col].abs();
        for row in col + 1..n {
            let v = a[row * n + col].abs();
            if v > best {
                best = v;
                piv = row;
            }
        }
        if best < 1e-300 {
            return false;
        }
        if piv != col {
            for k in 0..n {
                a.swap(col * n + k, piv * n + k);
            }
            b.swap(col, piv);
        }
        for row in col + 1..n {
            let f = a[row * n + col] / a[col * n + col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row * n + k] -= f * a[col * n + k];
            }
            b[row] -= f * b[col];
        }
    }
    for row in (0..n).rev() {
        let mut s = b[row];
        for k in row + 1..n {
            s -= a[row * n + k] * b[k];
        }
        b[row] = s / a[row * n + row];
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_solver_small_system() {
        let mut a = vec![2.0, 1.0, -1.0, -3.0, -1.0, 2.0, -2.0, 1.0, 2.0];
        let mut b = vec![8.0, -11.0, -3.0];
        assert!(solve_dense(3, &mut a, &mut b));
        assert!((b[0] - 2.0).abs() < 1e-12);
        assert!((b[1] - 3.0).abs() < 1e-12);
        assert!((b[2] - (-1.0)).abs() < 1e-12);
    }

    #[test]
    fn dense_solver_detects_singular() {
        let mut a = vec![1.0, 2.0, 2.0, 4.0];
        let mut b = vec![1.0, 2.0];
        assert!(!solve_dense(2, &mut a, &mut b));
    }
}
