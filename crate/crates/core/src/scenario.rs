//! Scenario files: one JSON document describes a complete run — mode,
//! timing, plant, controller, card, reference and transport. Unknown keys
//! are rejected so typos fail loudly, defaults are filled on parse, and the
//! effective configuration serializes back to an equivalent document (it is
//! echoed in the run report for reproducibility).

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::controllers::pid::PidGains;
use crate::controllers::rst::TMode;
use crate::reference::Reference;
use crate::transport::DEFAULT_PORT;
use crate::vdevice::CardConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Pure simulation, no card.
    Sim,
    /// Card in the loop, wall-clock paced.
    Rt,
    /// External controller over UDP, wall-clock paced.
    Hil,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Sim => write!(f, "sim"),
            Mode::Rt => write!(f, "rt"),
            Mode::Hil => write!(f, "hil"),
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sim" => Ok(Mode::Sim),
            "rt" => Ok(Mode::Rt),
            "hil" => Ok(Mode::Hil),
            other => Err(format!("unknown mode `{other}` (sim, rt, hil)")),
        }
    }
}

/// Plant section: a preset name plus parameter overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    pub preset: String,
    #[serde(default)]
    pub overrides: crate::plant::PlantOverrides,
}

/// RST controller section: plant-model and target polynomials in ascending
/// powers of q⁻¹.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RstSection {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub d: usize,
    pub p: Vec<f64>,
    #[serde(default = "default_t_mode")]
    pub t_mode: TMode,
}

fn default_t_mode() -> TMode {
    TMode::UnitDcGain
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerSection {
    Pid(PidGains),
    Rst(RstSection),
    /// The control law lives in an external process reached over UDP.
    External,
}

/// UDP endpoint configuration for hil mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransportSection {
    pub bind: String,
    pub peer: String,
    /// Defaults to one base step.
    pub step_timeout_ms: Option<u64>,
}

impl Default for TransportSection {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:0".to_string(),
            peer: format!("127.0.0.1:{}", default_peer_port()),
            step_timeout_ms: None,
        }
    }
}

/// `HILSIM_PORT` overrides the built-in default UDP port.
pub fn default_peer_port() -> u16 {
    std::env::var("HILSIM_PORT")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(DEFAULT_PORT)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub mode: Mode,
    pub base_step_s: f64,
    pub duration_s: f64,
    #[serde(default)]
    pub seed: u64,
    pub plant: PlantSection,
    pub controller: ControllerSection,
    /// Defaults to the base step (the automatic rate of an analog block).
    #[serde(default)]
    pub controller_period_s: Option<f64>,
    #[serde(default)]
    pub card: CardConfig,
    pub reference: Reference,
    /// Re-read acceptance tolerance, fraction of the expected value.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transport: Option<TransportSection>,
}

fn default_tolerance() -> f64 {
    0.02
}

#[derive(Debug)]
pub enum ScenarioError {
    Io(std::io::Error),
    Parse(serde_json::Error),
    Invalid(String),
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScenarioError::Io(e) => write!(f, "cannot read scenario: {e}"),
            ScenarioError::Parse(e) => write!(f, "scenario parse error: {e}"),
            ScenarioError::Invalid(msg) => write!(f, "invalid scenario: {msg}"),
        }
    }
}

impl std::error::Error for ScenarioError {}

impl Scenario {
    /// Parse and fully validate a scenario document.
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let scenario: Scenario = serde_json::from_str(text).map_err(ScenarioError::Parse)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let text = fs::read_to_string(path).map_err(ScenarioError::Io)?;
        Self::from_json(&text)
    }

    /// Effective controller period after defaulting.
    pub fn controller_period(&self) -> f64 {
        self.controller_period_s.unwrap_or(self.base_step_s)
    }

    /// Trace row count: whole base steps in the duration.
    pub fn n_steps(&self) -> u64 {
        (self.duration_s / self.base_step_s).floor() as u64
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let inv = |msg: String| Err(ScenarioError::Invalid(msg));
        if self.base_step_s <= 0.0 {
            return inv(format!("base_step_s must be > 0, got {}", self.base_step_s));
        }
        if self.duration_s < self.base_step_s {
            return inv(format!(
                "duration_s {} is shorter than one base step {}",
                self.duration_s, self.base_step_s
            ));
        }
        if self.controller_period() < self.base_step_s - 1e-12 {
            return inv(format!(
                "controller_period_s {} below base_step_s {}",
                self.controller_period(),
                self.base_step_s
            ));
        }
        if self.tolerance <= 0.0 {
            return inv(format!("tolerance must be > 0, got {}", self.tolerance));
        }
        self.card
            .validate()
            .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        self.reference.validate().map_err(ScenarioError::Invalid)?;
        if let ControllerSection::Pid(g) = &self.controller {
            g.validate().map_err(ScenarioError::Invalid)?;
        }
        if self.mode != Mode::Hil {
            if let ControllerSection::External = self.controller {
                return inv("controller \"external\" is only valid in hil mode".to_string());
            }
        }
        if self.mode == Mode::Hil && self.card.bits > 8 {
            return inv(format!(
                "hil transport carries 8-bit codes, card has {} bits",
                self.card.bits
            ));
        }
        Ok(())
    }

    /// The fully-defaulted form that is echoed into the run report.
    pub fn effective(&self) -> Scenario {
        let mut s = self.clone();
        s.controller_period_s = Some(self.controller_period());
        s.card.rng_seed = self.seed;
        if s.mode == Mode::Hil && s.transport.is_none() {
            s.transport = Some(TransportSection::default());
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "name": "t",
        "mode": "sim",
        "base_step_s": 0.045,
        "duration_s": 2.0,
        "plant": { "preset": "static_gain" },
        "controller": { "pid": { "kp": 1.0, "ki": 0.0, "kd": 0.0, "out_min_V": 0.0, "out_max_V": 4.5 } },
        "reference": { "kind": "step", "amplitude_V": 1.0, "start_s": 0.0 }
    }"#;

    #[test]
    fn minimal_scenario_fills_defaults() {
        let s = Scenario::from_json(MINIMAL).unwrap();
        assert_eq!(s.seed, 0);
        assert_eq!(s.tolerance, 0.02);
        assert_eq!(s.controller_period(), 0.045);
        assert_eq!(s.n_steps(), 44);
        assert_eq!(s.card, CardConfig::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = MINIMAL.replace("\"name\"", "\"nmae\"");
        let err = Scenario::from_json(&bad).unwrap_err();
        assert!(err.to_string().contains("nmae"), "{err}");
    }

    #[test]
    fn missing_section_is_named() {
        let bad = r#"{
            "name": "t", "mode": "sim", "base_step_s": 0.045, "duration_s": 2.0,
            "controller": { "pid": { "kp": 1.0, "ki": 0.0, "kd": 0.0, "out_min_V": 0.0, "out_max_V": 4.5 } },
            "reference": { "kind": "step", "amplitude_V": 1.0, "start_s": 0.0 }
        }"#;
        let err = Scenario::from_json(bad).unwrap_err();
        assert!(err.to_string().contains("plant"), "{err}");
    }

    #[test]
    fn effective_round_trips() {
        let s = Scenario::from_json(MINIMAL).unwrap().effective();
        let text = serde_json::to_string_pretty(&s).unwrap();
        let back = Scenario::from_json(&text).unwrap();
        assert_eq!(back.effective(), s);
    }

    #[test]
    fn hil_constraints() {
        // external controller only makes sense with a transport in the loop
        let s = MINIMAL.replace(
            "{ \"pid\": { \"kp\": 1.0, \"ki\": 0.0, \"kd\": 0.0, \"out_min_V\": 0.0, \"out_max_V\": 4.5 } }",
            "\"external\"",
        );
        let err = Scenario::from_json(&s).unwrap_err();
        assert!(err.to_string().contains("external"), "{err}");
        // in hil mode both external and a concrete law (for the peer) parse
        let s = s.replace("\"sim\"", "\"hil\"");
        assert!(Scenario::from_json(&s).is_ok());
        assert!(Scenario::from_json(&MINIMAL.replace("\"sim\"", "\"hil\"")).is_ok());
        // the wire carries one byte per sample
        let s = s.replace(
            "\"reference\"",
            "\"card\": { \"bits\": 12 },\n\"reference\"",
        );
        let err = Scenario::from_json(&s).unwrap_err();
        assert!(err.to_string().contains("8-bit"), "{err}");
    }

    #[test]
    fn controller_period_below_base_rejected() {
        let s = MINIMAL.replace(
            "\"duration_s\": 2.0,",
            "\"duration_s\": 2.0, \"controller_period_s\": 0.01,",
        );
        let err = Scenario::from_json(&s).unwrap_err();
        assert!(err.to_string().contains("controller_period_s"), "{err}");
    }
}
