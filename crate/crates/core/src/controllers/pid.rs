//! Discrete PID acting on the error signal, with hard output limits and
//! conditional (clamping) anti-windup: the integral state does not move
//! while the output is pinned at a limit.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PidGains {
    pub kp: f64,
    /// 1/s
    pub ki: f64,
    /// s
    pub kd: f64,
    #[serde(rename = "out_min_V")]
    pub out_min_v: f64,
    #[serde(rename = "out_max_V")]
    pub out_max_v: f64,
}

impl PidGains {
    pub fn validate(&self) -> Result<(), String> {
        if self.out_min_v >= self.out_max_v {
            return Err(format!(
                "out_min_V ({}) must be below out_max_V ({})",
                self.out_min_v, self.out_max_v
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PidController {
    gains: PidGains,
    period_s: f64,
    integral: f64,
    prev_error: f64,
    anti_windup: bool,
}

impl PidController {
    pub fn new(gains: PidGains, period_s: f64) -> Self {
        Self {
            gains,
            period_s,
            integral: 0.0,
            prev_error: 0.0,
            anti_windup: true,
        }
    }

    pub fn without_anti_windup(mut self) -> Self {
        self.anti_windup = false;
        self
    }

    pub fn gains(&self) -> &PidGains {
        &self.gains
    }

    pub fn reset(&mut self) {
        self.integral = 0.0;
        self.prev_error = 0.0;
    }

    /// One sample: e = r − y, u = kp·e + ki·∫e + kd·de/dt, clamped to the
    /// output limits. With anti-windup on, the integral update is discarded
    /// whenever the clamp is active.
    pub fn step(&mut self, r_v: f64, y_v: f64) -> f64 {
        let e = r_v - y_v;
        let derivative = (e - self.prev_error) / self.period_s;
        let integral_candidate = self.integral + e * self.period_s;
        let u_unsat =
            self.gains.kp * e + self.gains.ki * integral_candidate + self.gains.kd * derivative;
        let u = u_unsat.clamp(self.gains.out_min_v, self.gains.out_max_v);
        if !self.anti_windup || u == u_unsat {
            self.integral = integral_candidate;
        }
        self.prev_error = e;
        u
    }
}
