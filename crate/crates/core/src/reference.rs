//! Reference (setpoint) signal generators: step, square wave and constant.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    Step,
    Square,
    Const,
}

/// Scenario-file reference section. `start_s` delays the onset; a square
/// wave alternates between amplitude and zero with 50% duty over
/// `period_s` (required for `square`, ignored otherwise).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Reference {
    pub kind: ReferenceKind,
    #[serde(rename = "amplitude_V")]
    pub amplitude_v: f64,
    #[serde(default)]
    pub start_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period_s: Option<f64>,
}

impl Reference {
    pub fn step(amplitude_v: f64, start_s: f64) -> Self {
        Self {
            kind: ReferenceKind::Step,
            amplitude_v,
            start_s,
            period_s: None,
        }
    }

    pub fn constant(amplitude_v: f64) -> Self {
        Self {
            kind: ReferenceKind::Const,
            amplitude_v,
            start_s: 0.0,
            period_s: None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.kind == ReferenceKind::Square {
            match self.period_s {
                Some(p) if p > 0.0 => {}
                _ => return Err("square reference needs period_s > 0".to_string()),
            }
        }
        Ok(())
    }

    pub fn value(&self, t_s: f64) -> f64 {
        match self.kind {
            ReferenceKind::Const => self.amplitude_v,
            ReferenceKind::Step => {
                if t_s >= self.start_s {
                    self.amplitude_v
                } else {
                    0.0
                }
            }
            ReferenceKind::Square => {
                if t_s < self.start_s {
                    return 0.0;
                }
                let period = self.period_s.unwrap_or(1.0);
                let phase = ((t_s - self.start_s) / period).fract();
                if phase < 0.5 {
                    self.amplitude_v
                } else {
                    0.0
                }
            }
        }
    }
}
