//! Elastic wall mechanics: the pressure-area law of a thin linear-elastic
//! membrane with radius-dependent stiffness, and the derived compliance and
//! wave-speed scales used by the solver and the structured trees.
//!
//! All quantities are CGS (g, cm, s).

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// 1 mmHg in g/cm/s^2.
pub const MMHG: f64 = 1333.22;

pub fn to_mmhg(p_cgs: f64) -> f64 {
    p_cgs / MMHG
}

/// Sign convention for the stiffness exponent.
///
/// The stiffness law is `Eh/r0 = k1 exp(e * r0) + k3`. `Decaying` forces
/// `e = -|k2|` so the exponential term dies out with radius and large vessels
/// approach `k3`; `Literal` uses `e = -k2` with `k2` exactly as configured
/// (a negative `k2` then grows with radius).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StiffnessSign {
    #[default]
    Decaying,
    Literal,
}

impl StiffnessSign {
    pub fn exponent(self, k2: f64) -> f64 {
        match self {
            StiffnessSign::Decaying => -k2.abs(),
            StiffnessSign::Literal => -k2,
        }
    }
}

/// Radius-dependent stiffness `Eh/r0 = k1 exp(-|k2| r0) + k3` (decaying form).
pub fn stiffness(r0: f64, k1: f64, k2: f64, k3: f64) -> f64 {
    stiffness_with_sign(r0, k1, k2, k3, StiffnessSign::Decaying)
}

pub fn stiffness_with_sign(r0: f64, k1: f64, k2: f64, k3: f64, sign: StiffnessSign) -> f64 {
    k1 * (sign.exponent(k2) * r0).exp() + k3
}

/// Wall constitutive state at one axial location: reference pressure/area and
/// the composite elastic modulus `Eh/r0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WallLaw {
    /// Reference pressure (pressure at which the area equals `a0`).
    pub p0: f64,
    /// Reference cross-sectional area, `pi r0^2`.
    pub a0: f64,
    /// Reference radius.
    pub r0: f64,
    /// Composite stiffness `Eh/r0`.
    pub eh_r0: f64,
}

impl WallLaw {
    pub fn new(r0: f64, p0: f64, k1: f64, k2: f64, k3: f64, sign: StiffnessSign) -> Result<Self> {
        if r0 <= 0.0 {
            return Err(Error::Value(format!("wall law needs r0 > 0, got {r0}")));
        }
        let eh_r0 = stiffness_with_sign(r0, k1, k2, k3, sign);
        if eh_r0 <= 0.0 {
            return Err(Error::Value(format!(
                "non-positive stiffness Eh/r0 = {eh_r0} at r0 = {r0}"
            )));
        }
        Ok(WallLaw {
            p0,
            a0: std::f64::consts::PI * r0 * r0,
            r0,
            eh_r0,
        })
    }

    /// p = p0 + (4/3)(Eh/r0)(1 - sqrt(A0/A)).
    pub fn pressure_from_area(&self, a: f64) -> Result<f64> {
        if a <= 0.0 {
            return Err(Error::Value(format!("non-positive area {a}")));
        }
        Ok(self.p0 + (4.0 / 3.0) * self.eh_r0 * (1.0 - (self.a0 / a).sqrt()))
    }

    /// Exact inverse of `pressure_from_area`:
    /// A = A0 / (1 - 3(p - p0)/(4 Eh/r0))^2.
    ///
    /// Fails at or above the finite-pressure asymptote p0 + (4/3) Eh/r0.
    pub fn area_from_pressure(&self, p: f64) -> Result<f64> {
        let s = 1.0 - 3.0 * (p - self.p0) / (4.0 * self.eh_r0);
        if s <= 0.0 {
            return Err(Error::Value(format!(
                "pressure {p} at or above the wall-law asymptote {}",
                self.p0 + 4.0 / 3.0 * self.eh_r0
            )));
        }
        Ok(self.a0 / (s * s))
    }

    /// Compliance dA/dp at the reference state: C = (3/2) A0 / (Eh/r0).
    pub fn compliance_at_reference(&self) -> f64 {
        1.5 * self.a0 / self.eh_r0
    }

    /// Linearized pulse-wave speed at the reference state:
    /// c0 = sqrt((2/3)(Eh/r0)/rho) = sqrt(A0/(rho C)).
    pub fn wave_speed_reference(&self, rho: f64) -> f64 {
        ((2.0 / 3.0) * self.eh_r0 / rho).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const DEF_K1: f64 = 2.0e6;
    const DEF_K2: f64 = -35.0;
    const DEF_K3: f64 = 3.8e5;

    fn law(r0: f64) -> WallLaw {
        WallLaw::new(r0, 0.0, DEF_K1, DEF_K2, DEF_K3, StiffnessSign::Decaying).unwrap()
    }

    #[test]
    fn stiffness_large_vessel_is_k3() {
        // Exponential term ~ 1e-18 * k1 at r0 = 1.2 cm.
        let s = stiffness(1.2, DEF_K1, DEF_K2, DEF_K3);
        assert!((s - 3.8e5).abs() / 3.8e5 < 1e-10, "got {s}");
    }

    #[test]
    fn stiffness_zero_radius_limit() {
        let s = stiffness(1e-300, DEF_K1, DEF_K2, DEF_K3);
        assert!((s - 2.38e6).abs() / 2.38e6 < 1e-12);
    }

    #[test]
    fn stiffness_small_vessel() {
        // 2e6 exp(-0.35) + 3.8e5 = 1.789383e6
        let s = stiffness(0.01, DEF_K1, DEF_K2, DEF_K3);
        let expect = 2.0e6 * (-0.35f64).exp() + 3.8e5;
        assert!((s - expect).abs() < 1e-6);
        assert!((s - 1.789_38e6).abs() / 1.789_38e6 < 1e-4);
    }

    #[test]
    fn stiffness_literal_sign_grows() {
        let decay = stiffness_with_sign(0.5, DEF_K1, DEF_K2, DEF_K3, StiffnessSign::Decaying);
        let literal = stiffness_with_sign(0.5, DEF_K1, DEF_K2, DEF_K3, StiffnessSign::Literal);
        assert!(literal > decay);
        assert!((literal - (2.0e6 * (35.0f64 * 0.5).exp() + 3.8e5)).abs() < 1.0);
    }

    #[test]
    fn pressure_at_reference_area() {
        let w = law(1.2);
        assert_eq!(w.pressure_from_area(w.a0).unwrap(), w.p0);
    }

    #[test]
    fn pressure_at_four_a0() {
        // sqrt(1/4) = 1/2 => p - p0 = (2/3) Eh/r0 = 2.5333e5 ~ 190.0 mmHg.
        let w = law(1.2);
        let p = w.pressure_from_area(4.0 * w.a0).unwrap();
        let expect = (2.0 / 3.0) * w.eh_r0;
        assert!((p - expect).abs() / expect < 1e-12);
        assert!((to_mmhg(p) - 190.03).abs() < 0.05, "{}", to_mmhg(p));
    }

    #[test]
    fn pressure_asymptote() {
        let w = law(1.2);
        let p_inf = w.pressure_from_area(1e30 * w.a0).unwrap();
        let asym = (4.0 / 3.0) * w.eh_r0;
        assert!((p_inf - asym).abs() / asym < 1e-9);
        assert!((to_mmhg(asym) - 380.06).abs() < 0.1);
        // At or above the asymptote the inverse is undefined.
        assert!(w.area_from_pressure(asym).is_err());
        assert!(w.area_from_pressure(asym * 1.01).is_err());
    }

    #[test]
    fn area_inverse_examples() {
        let w = law(1.2);
        assert!((w.area_from_pressure(w.p0).unwrap() - w.a0).abs() < 1e-14);
        let a = w.area_from_pressure((2.0 / 3.0) * w.eh_r0).unwrap();
        assert!((a - 4.0 * w.a0).abs() / w.a0 < 1e-12);
    }

    #[test]
    fn compliance_example() {
        // r0 = 0.01: C = (3/2) pi 1e-4 / 1.789383e6 ~ 2.63e-10
        let w = law(0.01);
        let c = w.compliance_at_reference();
        assert!((c - 2.633_5e-10).abs() / 2.633_5e-10 < 1e-3, "{c}");
        // Doubling A0 doubles C (build a law with sqrt(2) r0 but same stiffness).
        let w2 = WallLaw {
            a0: 2.0 * w.a0,
            ..w
        };
        assert!((w2.compliance_at_reference() - 2.0 * c).abs() < 1e-24);
    }

    #[test]
    fn compliance_matches_finite_difference() {
        let w = law(0.3);
        let h = w.a0 * 1e-6;
        let dpda = (w.pressure_from_area(w.a0 + h).unwrap() - w.pressure_from_area(w.a0 - h).unwrap())
            / (2.0 * h);
        let c_fd = 1.0 / dpda;
        let c = w.compliance_at_reference();
        assert!((c_fd - c).abs() / c < 1e-6);
    }

    #[test]
    fn wave_speed_example() {
        let w = law(1.2);
        let c0 = w.wave_speed_reference(1.057);
        assert!((c0 - 489.56).abs() < 0.05, "{c0}");
        // Algebraic identity with the compliance.
        let alt = (w.a0 / (1.057 * w.compliance_at_reference())).sqrt();
        assert!((c0 - alt).abs() / c0 < 1e-12);
        // Quadrupling the stiffness doubles the speed.
        let w4 = WallLaw {
            eh_r0: 4.0 * w.eh_r0,
            ..w
        };
        assert!((w4.wave_speed_reference(1.057) - 2.0 * c0).abs() / c0 < 1e-12);
    }

    proptest! {
        #[test]
        fn pressure_area_round_trip(r0 in 0.01f64..2.0, frac in -0.9f64..0.999) {
            let w = law(r0);
            // Pressures strictly below the asymptote.
            let p = w.p0 + frac * (4.0 / 3.0) * w.eh_r0;
            let a = w.area_from_pressure(p).unwrap();
            let back = w.pressure_from_area(a).unwrap();
            let scale = w.eh_r0;
            prop_assert!((back - p).abs() / scale < 1e-10);
        }

        #[test]
        fn pressure_strictly_increasing(r0 in 0.01f64..2.0, a1 in 0.1f64..10.0, da in 1e-6f64..10.0) {
            let w = law(r0);
            let a1 = a1 * w.a0;
            let a2 = a1 + da * w.a0;
            prop_assert!(w.pressure_from_area(a2).unwrap() > w.pressure_from_area(a1).unwrap());
        }

        #[test]
        fn stiffness_decreasing_bounded_below(r in 0.001f64..0.7, dr in 1e-4f64..0.3) {
            // Radii kept below ~1 cm so the exponential term stays above the
            // f64 resolution of k3 and strict comparisons are meaningful.
            let s1 = stiffness(r, DEF_K1, DEF_K2, DEF_K3);
            let s2 = stiffness(r + dr, DEF_K1, DEF_K2, DEF_K3);
            prop_assert!(s2 < s1);
            prop_assert!(s2 > DEF_K3);
        }
    }
}
