//! Virtual ADDA card with the measured defects of the real low-cost board:
//! 8-bit converters, a true output range that stops at 4.5 V instead of the
//! advertised 5.0 V, a stochastic multi-cycle settling delay on DAC writes,
//! a bowed DAC transfer curve and additive read noise. All randomness comes
//! from one seeded generator, so identical configs and call sequences give
//! bit-identical outputs.

use std::collections::VecDeque;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub const NUM_CHANNELS: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub enum CardError {
    InvalidChannel(u8),
    CodeOutOfRange { code: u16, max: u16 },
    BadConfig(String),
}

impl fmt::Display for CardError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CardError::InvalidChannel(ch) => write!(f, "invalid analog channel {ch} (card has 2)"),
            CardError::CodeOutOfRange { code, max } => {
                write!(f, "code {code} out of range 0..={max}")
            }
            CardError::BadConfig(msg) => write!(f, "bad card config: {msg}"),
        }
    }
}

impl std::error::Error for CardError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelayKind {
    Fixed,
    UniformInt,
}

/// DAC write settling-delay model, in advance_cycle units. `fixed` draws
/// min_cycles every time (min and max must agree); `uniform_int` draws
/// uniformly from [min_cycles, max_cycles].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelayModel {
    pub kind: DelayKind,
    pub min_cycles: u32,
    pub max_cycles: u32,
}

impl DelayModel {
    pub fn fixed(cycles: u32) -> Self {
        Self {
            kind: DelayKind::Fixed,
            min_cycles: cycles,
            max_cycles: cycles,
        }
    }

    pub fn uniform(min_cycles: u32, max_cycles: u32) -> Self {
        Self {
            kind: DelayKind::UniformInt,
            min_cycles,
            max_cycles,
        }
    }

    fn validate(&self) -> Result<(), CardError> {
        if self.min_cycles > self.max_cycles {
            return Err(CardError::BadConfig(format!(
                "delay_model min_cycles {} > max_cycles {}",
                self.min_cycles, self.max_cycles
            )));
        }
        if self.kind == DelayKind::Fixed && self.min_cycles != self.max_cycles {
            return Err(CardError::BadConfig(format!(
                "fixed delay_model needs min_cycles == max_cycles, got {} and {}",
                self.min_cycles, self.max_cycles
            )));
        }
        Ok(())
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> u32 {
        match self.kind {
            DelayKind::Fixed => self.min_cycles,
            DelayKind::UniformInt => rng.gen_range(self.min_cycles..=self.max_cycles),
        }
    }

    pub fn mean(&self) -> f64 {
        (self.min_cycles as f64 + self.max_cycles as f64) / 2.0
    }
}

impl Default for DelayModel {
    /// Average of 5 cycles, matching the measured board behaviour.
    fn default() -> Self {
        DelayModel::uniform(3, 7)
    }
}

/// Card defect parameters. Defaults reproduce the measured board; zeroing
/// the defect fields (and widening actual_max_V to the nominal value)
/// yields an ideal converter pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CardConfig {
    #[serde(rename = "nominal_fullscale_V")]
    pub nominal_fullscale_v: f64,
    #[serde(rename = "actual_max_V")]
    pub actual_max_v: f64,
    pub bits: u32,
    pub delay_model: DelayModel,
    pub nonlin_alpha: f64,
    #[serde(rename = "noise_std_V")]
    pub noise_std_v: f64,
    pub rng_seed: u64,
}

impl Default for CardConfig {
    fn default() -> Self {
        Self {
            nominal_fullscale_v: 5.0,
            actual_max_v: 4.5,
            bits: 8,
            delay_model: DelayModel::default(),
            nonlin_alpha: 0.1,
            noise_std_v: 0.01,
            rng_seed: 0,
        }
    }
}

impl CardConfig {
    /// Defect-free card: full nominal range, linear, noiseless, zero delay.
    pub fn ideal() -> Self {
        Self {
            actual_max_v: 5.0,
            delay_model: DelayModel::fixed(0),
            nonlin_alpha: 0.0,
            noise_std_v: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), CardError> {
        if !(self.actual_max_v > 0.0 && self.actual_max_v <= self.nominal_fullscale_v) {
            return Err(CardError::BadConfig(format!(
                "need 0 < actual_max_V ({}) <= nominal_fullscale_V ({})",
                self.actual_max_v, self.nominal_fullscale_v
            )));
        }
        if !(1..=16).contains(&self.bits) {
            return Err(CardError::BadConfig(format!(
                "bits must be in 1..=16, got {}",
                self.bits
            )));
        }
        if self.noise_std_v < 0.0 {
            return Err(CardError::BadConfig(format!(
                "noise_std_V must be >= 0, got {}",
                self.noise_std_v
            )));
        }
        self.delay_model.validate()
    }

    pub fn max_code(&self) -> u16 {
        ((1u32 << self.bits) - 1) as u16
    }

    /// Voltage span of one code under the nominal scale.
    pub fn lsb_v(&self) -> f64 {
        self.nominal_fullscale_v / self.max_code() as f64
    }
}

/// ADC conversion: clamp to [0, nominal], scale to the code range, round
/// half away from zero.
pub fn quantize(v_v: f64, cfg: &CardConfig) -> u16 {
    let clamped = v_v.clamp(0.0, cfg.nominal_fullscale_v);
    let code = (clamped / cfg.nominal_fullscale_v * cfg.max_code() as f64).round();
    code as u16
}

/// Inverse of `quantize` up to the rounding loss.
pub fn dequantize(code: u16, cfg: &CardConfig) -> f64 {
    code as f64 / cfg.max_code() as f64 * cfg.nominal_fullscale_v
}

/// Voltage the DAC actually produces for a code: the nominal ramp compressed
/// to the true range with a quadratic bow, x + α·x·(1−x). Endpoints are
/// exact and the curve is strictly monotone for |α| < 1.
pub fn dac_transfer(code: u16, cfg: &CardConfig) -> Result<f64, CardError> {
    let max = cfg.max_code();
    if code > max {
        return Err(CardError::CodeOutOfRange { code, max });
    }
    let x = code as f64 / max as f64;
    Ok(cfg.actual_max_v * (x + cfg.nonlin_alpha * x * (1.0 - x)))
}

#[derive(Debug, Clone)]
struct PendingWrite {
    volts: f64,
    cycles_remaining: u32,
}

/// The two-in/two-out analog card. DAC writes pass through a per-channel
/// delay pipeline before they settle on the output; ADC reads see whatever
/// voltage the wiring put on the input plus Gaussian noise.
#[derive(Debug, Clone)]
pub struct VirtualAddaCard {
    config: CardConfig,
    dac_pipeline: [VecDeque<PendingWrite>; NUM_CHANNELS],
    dac_settled_v: [f64; NUM_CHANNELS],
    adc_wire_v: [f64; NUM_CHANNELS],
    adc_last_code: [u16; NUM_CHANNELS],
    rng: ChaCha8Rng,
}

impl VirtualAddaCard {
    pub fn new(config: CardConfig) -> Result<Self, CardError> {
        config.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        Ok(Self {
            config,
            dac_pipeline: [VecDeque::new(), VecDeque::new()],
            dac_settled_v: [0.0; NUM_CHANNELS],
            adc_wire_v: [0.0; NUM_CHANNELS],
            adc_last_code: [0; NUM_CHANNELS],
            rng,
        })
    }

    pub fn config(&self) -> &CardConfig {
        &self.config
    }

    fn check_channel(channel: u8) -> Result<usize, CardError> {
        if (channel as usize) < NUM_CHANNELS {
            Ok(channel as usize)
        } else {
            Err(CardError::InvalidChannel(channel))
        }
    }

    /// Queue a DAC write. The converted voltage becomes the settled output
    /// after the drawn number of advance_cycle calls; a drawn delay of zero
    /// settles immediately.
    pub fn dac_write(&mut self, channel: u8, code: u16) -> Result<(), CardError> {
        let ch = Self::check_channel(channel)?;
        let volts = dac_transfer(code, &self.config)?;
        let cycles = self.config.delay_model.draw(&mut self.rng);
        if cycles == 0 {
            self.dac_settled_v[ch] = volts;
        } else {
            self.dac_pipeline[ch].push_back(PendingWrite {
                volts,
                cycles_remaining: cycles,
            });
        }
        Ok(())
    }

    /// Settled output voltage of a DAC channel.
    pub fn dac_settled(&self, channel: u8) -> Result<f64, CardError> {
        Ok(self.dac_settled_v[Self::check_channel(channel)?])
    }

    /// Bind a voltage to an ADC input; this is what a wire (loopback or
    /// transport) drives.
    pub fn set_adc_wire(&mut self, channel: u8, volts: f64) -> Result<(), CardError> {
        self.adc_wire_v[Self::check_channel(channel)?] = volts;
        Ok(())
    }

    /// Convert the wire voltage plus read noise to a code.
    pub fn adc_read(&mut self, channel: u8) -> Result<u16, CardError> {
        let ch = Self::check_channel(channel)?;
        let noise = if self.config.noise_std_v > 0.0 {
            let normal = Normal::new(0.0, self.config.noise_std_v)
                .map_err(|e| CardError::BadConfig(e.to_string()))?;
            normal.sample(&mut self.rng)
        } else {
            0.0
        };
        let code = quantize(self.adc_wire_v[ch] + noise, &self.config);
        self.adc_last_code[ch] = code;
        Ok(code)
    }

    /// Code the last adc_read on this channel produced.
    pub fn adc_last_code(&self, channel: u8) -> Result<u16, CardError> {
        Ok(self.adc_last_code[Self::check_channel(channel)?])
    }

    /// One delay cycle: decrement all pipeline counters and settle entries
    /// that reach zero, oldest first so a later write supersedes an earlier
    /// one settling on the same cycle.
    pub fn advance_cycle(&mut self) {
        for ch in 0..NUM_CHANNELS {
            let mut settled = None;
            for entry in self.dac_pipeline[ch].iter_mut() {
                entry.cycles_remaining = entry.cycles_remaining.saturating_sub(1);
            }
            while let Some(front) = self.dac_pipeline[ch].front() {
                if front.cycles_remaining == 0 {
                    settled = Some(self.dac_pipeline[ch].pop_front().unwrap().volts);
                } else {
                    break;
                }
            }
            if let Some(v) = settled {
                self.dac_settled_v[ch] = v;
            }
        }
    }

    pub fn pending_writes(&self, channel: u8) -> Result<usize, CardError> {
        Ok(self.dac_pipeline[Self::check_channel(channel)?].len())
    }
}
