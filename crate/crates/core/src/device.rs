//! SOT-MRAM magnetic tunnel junction resistance model.
//!
//! The MTJ resistance depends on the angle between the free and pinned
//! layer magnetizations and, through the tunneling magnetoresistance, on
//! the bias across the junction:
//!
//! ```text
//! R(θ) = 2·R_mtj·(1 + TMR) / (2 + TMR·(1 + cos θ)),   R_mtj = RA / Area
//! TMR  = (TMR0 / 100) / (1 + (V_b / V0)²)
//! ```
//!
//! Every conductance used by the synapse, crossbar and netlist code is
//! derived from this module.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical constants of a single SOT-MRAM cell.
///
/// Defaults are the SHE-MRAM parameter set: RA = 10 Ω·µm², TMR0 = 200 (a
/// percentage), V0 = 0.65 V, a 50 nm × 30 nm elliptical MTJ and a
/// 100 nm × 50 nm × 3 nm heavy-metal strip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeviceParams {
    /// Resistance-area product in Ω·µm².
    pub ra_product: f64,
    /// Zero-bias TMR expressed as a percentage (200 means TMR = 2.0).
    pub tmr0: f64,
    /// Bias fitting voltage in volts.
    pub v0: f64,
    /// MTJ major axis in nm.
    pub mtj_length: f64,
    /// MTJ minor axis in nm.
    pub mtj_width: f64,
    /// Heavy-metal length × width × thickness in nm. Not used by the read model.
    pub hm_dims: [f64; 3],
}

impl Default for DeviceParams {
    fn default() -> Self {
        Self {
            ra_product: 10.0,
            tmr0: 200.0,
            v0: 0.65,
            mtj_length: 50.0,
            mtj_width: 30.0,
            hm_dims: [100.0, 50.0, 3.0],
        }
    }
}

/// Magnetization configuration of the free layer relative to the pinned layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DeviceState {
    /// Parallel, θ = 0 (low resistance).
    P,
    /// Antiparallel, θ = π (high resistance).
    AP,
}

impl DeviceState {
    pub fn angle(self) -> f64 {
        match self {
            DeviceState::P => 0.0,
            DeviceState::AP => PI,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DeviceState::P => "P",
            DeviceState::AP => "AP",
        }
    }
}

impl std::str::FromStr for DeviceState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "P" => Ok(DeviceState::P),
            "AP" => Ok(DeviceState::AP),
            other => Err(Error::InvalidInput(format!("unknown device state `{other}`"))),
        }
    }
}

/// Voltage across the junction at which the device is read.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BiasPoint {
    pub v_b: f64,
}

impl BiasPoint {
    pub const ZERO: BiasPoint = BiasPoint { v_b: 0.0 };

    /// Bias restricted to `|v_b| <= supply_limit`.
    pub fn new(v_b: f64, supply_limit: f64) -> Result<Self> {
        if !v_b.is_finite() {
            return Err(Error::InvalidParameter(format!("bias voltage {v_b} is not finite")));
        }
        if v_b.abs() > supply_limit {
            return Err(Error::InvalidParameter(format!(
                "bias voltage {v_b} V exceeds the ±{supply_limit} V supply range"
            )));
        }
        Ok(Self { v_b })
    }
}

impl DeviceParams {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("ra_product", self.ra_product),
            ("tmr0", self.tmr0),
            ("v0", self.v0),
            ("mtj_length", self.mtj_length),
            ("mtj_width", self.mtj_width),
            ("hm_length", self.hm_dims[0]),
            ("hm_width", self.hm_dims[1]),
            ("hm_thickness", self.hm_dims[2]),
        ];
        for (name, value) in named {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "device parameter {name} must be strictly positive, got {value}"
                )));
            }
        }
        Ok(())
    }

    /// Elliptical junction area l·w·π/4 in µm².
    pub fn area_um2(&self) -> f64 {
        // nm² -> µm²
        self.mtj_length * self.mtj_width * PI / 4.0 * 1e-6
    }

    /// R_mtj = RA / Area, in ohms. This is also the parallel-state resistance.
    pub fn base_resistance(&self) -> Result<f64> {
        self.validate()?;
        Ok(self.ra_product / self.area_um2())
    }

    /// Bias-dependent TMR as a plain ratio.
    pub fn tmr_at_bias(&self, bias: BiasPoint) -> Result<f64> {
        self.validate()?;
        let ratio = bias.v_b / self.v0;
        Ok((self.tmr0 / 100.0) / (1.0 + ratio * ratio))
    }

    /// Resistance of a cell in `state` read at `bias`.
    ///
    /// P returns R_mtj exactly; AP returns R_mtj·(1 + TMR). Use
    /// [`DeviceParams::resistance_at_angle`] for the general expression.
    pub fn resistance(&self, state: DeviceState, bias: BiasPoint) -> Result<f64> {
        let base = self.base_resistance()?;
        match state {
            DeviceState::P => Ok(base),
            DeviceState::AP => Ok(base * (1.0 + self.tmr_at_bias(bias)?)),
        }
    }

    /// The full angular form 2R(1+TMR) / (2 + TMR(1 + cos θ)).
    pub fn resistance_at_angle(&self, theta: f64, bias: BiasPoint) -> Result<f64> {
        let base = self.base_resistance()?;
        let tmr = self.tmr_at_bias(bias)?;
        Ok(2.0 * base * (1.0 + tmr) / (2.0 + tmr * (1.0 + theta.cos())))
    }

    pub fn conductance(&self, state: DeviceState, bias: BiasPoint) -> Result<f64> {
        Ok(1.0 / self.resistance(state, bias)?)
    }

    /// G_P − G_AP at `bias`; the conductance swing of one synapse pair.
    pub fn conductance_swing(&self, bias: BiasPoint) -> Result<f64> {
        Ok(self.conductance(DeviceState::P, bias)? - self.conductance(DeviceState::AP, bias)?)
    }
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    use super::*;

    // Hand evaluation: 50·30·π/4 nm² = 1.1780972450961724e-3 µm²,
    // 10 Ω·µm² / that area = 8488.263631567752 Ω.
    const R_P_TABLE: f64 = 8488.263631567752;

    #[test]
    fn base_resistance_matches_hand_evaluation() {
        let r = DeviceParams::default().base_resistance().unwrap();
        assert_relative_eq!(r, R_P_TABLE, max_relative = 1e-12);
    }

    #[test]
    fn unit_area_gives_ra() {
        // l·w·π/4 = 1 µm² = 1e6 nm²
        let side = (4.0e6 / PI).sqrt();
        let p = DeviceParams {
            ra_product: 1.0,
            mtj_length: side,
            mtj_width: side,
            ..Default::default()
        };
        assert_relative_eq!(p.base_resistance().unwrap(), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn doubling_dimensions_quarters_resistance() {
        let p = DeviceParams::default();
        let q = DeviceParams {
            mtj_length: 2.0 * p.mtj_length,
            mtj_width: 2.0 * p.mtj_width,
            ..p
        };
        assert_relative_eq!(
            p.base_resistance().unwrap() / q.base_resistance().unwrap(),
            4.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn tmr_points() {
        let p = DeviceParams::default();
        assert_eq!(p.tmr_at_bias(BiasPoint::ZERO).unwrap(), 2.0);
        assert_eq!(p.tmr_at_bias(BiasPoint { v_b: 0.65 }).unwrap(), 1.0);
        assert_relative_eq!(p.tmr_at_bias(BiasPoint { v_b: 0.325 }).unwrap(), 1.6, max_relative = 1e-12);
    }

    #[test]
    fn state_resistances() {
        let p = DeviceParams::default();
        for v in [0.0, 0.1, 0.4, -0.7] {
            assert_eq!(p.resistance(DeviceState::P, BiasPoint { v_b: v }).unwrap(), p.base_resistance().unwrap());
        }
        assert_relative_eq!(
            p.resistance(DeviceState::AP, BiasPoint::ZERO).unwrap(),
            3.0 * R_P_TABLE,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            p.resistance(DeviceState::AP, BiasPoint { v_b: 0.65 }).unwrap(),
            2.0 * R_P_TABLE,
            max_relative = 1e-12
        );
    }

    #[test]
    fn conductances() {
        let p = DeviceParams::default();
        let gp = p.conductance(DeviceState::P, BiasPoint::ZERO).unwrap();
        let gap = p.conductance(DeviceState::AP, BiasPoint::ZERO).unwrap();
        assert_relative_eq!(gp * 1e6, 117.80972450961724, max_relative = 1e-9);
        assert_relative_eq!(gap * 1e6, 39.269908169872416, max_relative = 1e-9);
        assert_relative_eq!(gp * p.resistance(DeviceState::P, BiasPoint::ZERO).unwrap(), 1.0, max_relative = 1e-15);
    }

    #[test]
    fn rejects_non_positive_parameters() {
        let bad = DeviceParams {
            mtj_width: 0.0,
            ..Default::default()
        };
        assert!(matches!(bad.base_resistance(), Err(Error::InvalidParameter(_))));
        let bad = DeviceParams {
            ra_product: -1.0,
            ..Default::default()
        };
        assert!(bad.tmr_at_bias(BiasPoint::ZERO).is_err());
        assert!(BiasPoint::new(f64::NAN, 1.0).is_err());
        assert!(BiasPoint::new(0.9, 0.8).is_err());
    }

    fn params() -> impl Strategy<Value = DeviceParams> {
        (0.1f64..100.0, 1.0f64..500.0, 0.05f64..2.0, 5.0f64..200.0, 5.0f64..200.0).prop_map(
            |(ra, tmr0, v0, l, w)| DeviceParams {
                ra_product: ra,
                tmr0,
                v0,
                mtj_length: l,
                mtj_width: w,
                ..Default::default()
            },
        )
    }

    proptest! {
        #[test]
        fn ap_exceeds_p(p in params(), v in -2.0f64..2.0) {
            let bias = BiasPoint { v_b: v };
            prop_assert!(p.resistance(DeviceState::AP, bias).unwrap() > p.resistance(DeviceState::P, bias).unwrap());
        }

        #[test]
        fn tmr_even_bounded_and_decreasing(p in params(), v in 0.0f64..2.0, dv in 1e-3f64..1.0) {
            let t = |x: f64| p.tmr_at_bias(BiasPoint { v_b: x }).unwrap();
            prop_assert_eq!(t(v), t(-v));
            prop_assert!(t(v) <= p.tmr0 / 100.0);
            prop_assert!(t(v + dv) < t(v));
            let r = |x: f64| p.resistance(DeviceState::AP, BiasPoint { v_b: x }).unwrap();
            prop_assert!(r(v + dv) < r(v));
        }

        #[test]
        fn angular_form_agrees_with_states(p in params(), v in -1.0f64..1.0) {
            let bias = BiasPoint { v_b: v };
            let base = p.base_resistance().unwrap();
            let at_zero = p.resistance_at_angle(0.0, bias).unwrap();
            prop_assert!((at_zero - base).abs() <= 4.0 * f64::EPSILON * base);
            let ap = p.resistance(DeviceState::AP, bias).unwrap();
            let at_pi = p.resistance_at_angle(PI, bias).unwrap();
            prop_assert!((at_pi - ap).abs() <= 1e-12 * ap);
        }
    }
}
