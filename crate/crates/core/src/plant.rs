//! Plant-side simulation: a continuous process model discretized at the
//! executor base step, plus the named presets the shipped scenarios use.
//! Signals are in volts — the sensor/actuator scaling into physical units
//! is the scenario author's business.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::lti::{ContinuousTf, DiscreteLti, LtiError};
use crate::poly::Polynomial;

/// Parameters of the heat-exchanger style preset
/// G(s) = K·e^(−L·s) / ((τ₁s+1)(τ₂s+1)). The defaults are configuration
/// values chosen so a 1 s controller period over a 45 ms base step is a
/// sensible pairing; they are not measurements of any particular rig.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantOverrides {
    pub k: f64,
    pub tau1_s: f64,
    pub tau2_s: f64,
    pub dead_time_s: f64,
    #[serde(rename = "init_output_V")]
    pub init_output_v: f64,
}

impl Default for PlantOverrides {
    fn default() -> Self {
        Self {
            k: 1.0,
            tau1_s: 10.0,
            tau2_s: 2.0,
            dead_time_s: 1.0,
            init_output_v: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlantError {
    UnknownPreset(String),
    Lti(LtiError),
}

impl fmt::Display for PlantError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlantError::UnknownPreset(name) => write!(
                f,
                "unknown plant preset `{name}` (have: heat_exchanger, first_order, static_gain)"
            ),
            PlantError::Lti(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for PlantError {}

impl From<LtiError> for PlantError {
    fn from(e: LtiError) -> Self {
        PlantError::Lti(e)
    }
}

/// A named process model before discretization.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantSpec {
    pub name: String,
    pub tf: ContinuousTf,
    pub output_unit: String,
    pub init_output_v: f64,
}

impl PlantSpec {
    /// Look up a preset by its scenario-file name, with overrides applied.
    pub fn preset(name: &str, ov: &PlantOverrides) -> Result<Self, PlantError> {
        let tf = match name {
            "heat_exchanger" => ContinuousTf::new(
                Polynomial::constant(ov.k),
                &Polynomial::new(vec![1.0, ov.tau1_s]) * &Polynomial::new(vec![1.0, ov.tau2_s]),
                ov.dead_time_s,
            )?,
            "first_order" => ContinuousTf::new(
                Polynomial::constant(ov.k),
                Polynomial::new(vec![1.0, ov.tau1_s]),
                ov.dead_time_s,
            )?,
            "static_gain" => ContinuousTf::new(Polynomial::constant(ov.k), Polynomial::one(), 0.0)?,
            other => return Err(PlantError::UnknownPreset(other.to_string())),
        };
        Ok(Self {
            name: name.to_string(),
            tf,
            output_unit: "V".to_string(),
            init_output_v: ov.init_output_v,
        })
    }
}

/// A plant discretized at the executor base step, ready to step.
#[derive(Debug, Clone)]
pub struct PlantInstance {
    spec: PlantSpec,
    sys: DiscreteLti,
    last_output_v: f64,
}

/// Discretize `spec.tf` at the base step and initialize the output.
pub fn make_plant(spec: PlantSpec, base_step_s: f64) -> Result<PlantInstance, PlantError> {
    let mut sys = spec.tf.c2d_zoh(base_step_s)?;
    sys.set_initial_output(spec.init_output_v);
    let last_output_v = spec.init_output_v;
    Ok(PlantInstance {
        spec,
        sys,
        last_output_v,
    })
}

impl PlantInstance {
    pub fn spec(&self) -> &PlantSpec {
        &self.spec
    }

    pub fn sys(&self) -> &DiscreteLti {
        &self.sys
    }

    pub fn last_output(&self) -> f64 {
        self.last_output_v
    }

    /// Advance one base step with the applied input voltage.
    pub fn step(&mut self, u_v: f64) -> f64 {
        let y = self.sys.step(u_v);
        self.last_output_v = y;
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn heat_exchanger_discretizes_at_base_step() {
        let spec = PlantSpec::preset("heat_exchanger", &PlantOverrides::default()).unwrap();
        let plant = make_plant(spec, 0.045).unwrap();
        assert_eq!(plant.sys().period_s(), 0.045);
        // dead time 1 s at 45 ms rounds to 22 samples
        assert_eq!(plant.sys().delay(), 22);
    }

    #[test]
    fn dead_time_override_rounds() {
        let ov = PlantOverrides {
            dead_time_s: 0.135,
            ..Default::default()
        };
        let spec = PlantSpec::preset("heat_exchanger", &ov).unwrap();
        let plant = make_plant(spec, 0.045).unwrap();
        assert_eq!(plant.sys().delay(), 3);
    }

    #[test]
    fn static_gain_passes_input_through() {
        let spec = PlantSpec::preset("static_gain", &PlantOverrides::default()).unwrap();
        let mut plant = make_plant(spec, 0.045).unwrap();
        for u in [0.0, 1.0, 2.5, -0.3] {
            assert_abs_diff_eq!(plant.step(u), u, epsilon = 1e-15);
        }
        let spec = PlantSpec::preset(
            "static_gain",
            &PlantOverrides {
                k: 2.0,
                ..Default::default()
            },
        )
        .unwrap();
        let mut plant = make_plant(spec, 0.045).unwrap();
        assert_abs_diff_eq!(plant.step(1.5), 3.0, epsilon = 1e-15);
    }

    #[test]
    fn zero_input_from_zero_state_stays_zero() {
        let spec = PlantSpec::preset("heat_exchanger", &PlantOverrides::default()).unwrap();
        let mut plant = make_plant(spec, 0.045).unwrap();
        for _ in 0..100 {
            assert_eq!(plant.step(0.0), 0.0);
        }
    }

    #[test]
    fn unit_step_rises_monotonically_to_dc_gain() {
        let spec = PlantSpec::preset("heat_exchanger", &PlantOverrides::default()).unwrap();
        let mut plant = make_plant(spec, 0.045).unwrap();
        let mut prev = -1.0;
        let mut last = 0.0;
        for _ in 0..4000 {
            last = plant.step(1.0);
            assert!(last >= prev - 1e-12, "overshoot in an overdamped response");
            prev = last;
        }
        // 4000 steps = 180 s = 18 dominant time constants
        assert_abs_diff_eq!(last, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn presets_settle_within_eight_time_constants() {
        for (name, tau_dom) in [
            ("heat_exchanger", 10.0),
            ("first_order", 10.0),
            ("static_gain", 1e-3),
        ] {
            let spec = PlantSpec::preset(name, &PlantOverrides::default()).unwrap();
            let mut plant = make_plant(spec, 0.045).unwrap();
            let n = ((8.0 * tau_dom + 2.0) / 0.045) as usize;
            let mut y = 0.0;
            for _ in 0..n {
                y = plant.step(1.0);
            }
            assert!(
                (y - 1.0).abs() < 0.001,
                "{name} at {y} after 8 time constants"
            );
        }
    }

    #[test]
    fn step_delegates_to_lti_exactly() {
        let ov = PlantOverrides::default();
        let spec = PlantSpec::preset("heat_exchanger", &ov).unwrap();
        let mut plant = make_plant(spec.clone(), 0.045).unwrap();
        let mut sys = spec.tf.c2d_zoh(0.045).unwrap();
        sys.set_initial_output(spec.init_output_v);
        let inputs = [0.0, 1.0, 0.5, 2.0, -1.0, 0.0, 3.3];
        for &u in inputs.iter().cycle().take(500) {
            let yp = plant.step(u);
            let ys = sys.step(u);
            assert_eq!(yp, ys);
            assert_eq!(plant.last_output(), yp);
        }
    }

    #[test]
    fn unknown_preset_is_reported() {
        let err = PlantSpec::preset("boiler", &PlantOverrides::default()).unwrap_err();
        assert!(matches!(err, PlantError::UnknownPreset(_)));
        assert!(err.to_string().contains("boiler"));
    }

    #[test]
    fn nonzero_initial_output_holds_at_equilibrium() {
        let ov = PlantOverrides {
            init_output_v: 2.0,
            ..Default::default()
        };
        let spec = PlantSpec::preset("first_order", &ov).unwrap();
        let mut plant = make_plant(spec, 0.045).unwrap();
        assert_eq!(plant.last_output(), 2.0);
        for _ in 0..50 {
            assert_abs_diff_eq!(plant.step(2.0), 2.0, epsilon = 1e-12);
        }
    }
}
