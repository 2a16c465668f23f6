//! DAC linearization: sweep the deterministic transfer curve once, build an
//! inverse lookup table over the range the card can actually reach, and
//! record a gain factor for rescaling voltage requests into that range.
//! Corrected writes land within one effective LSB of the request; the lost
//! headroom above actual_max_V surfaces as saturation events instead of
//! silently wrong output.

use std::fmt;

use crate::vdevice::{dac_transfer, CardConfig, CardError, VirtualAddaCard};

/// Inverse map from requested code to the code whose settled output is
/// nearest the requested target voltage.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationTable {
    /// nominal_fullscale_V / actual_max_V; rescales voltage requests that
    /// were budgeted against the nominal range.
    pub gain: f64,
    /// One entry per code; non-decreasing.
    pub inverse_lut: Vec<u16>,
    /// Top of the usable linearized range (the card's true maximum).
    pub achieved_max_v: f64,
    /// Worst |settled − target| over the sweep.
    pub residual_max_v: f64,
    bits: u32,
}

/// Result of one corrected write.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrectedWrite {
    pub code_sent: u16,
    /// Voltage the output will settle to once the write propagates.
    pub expected_v: f64,
    /// The request exceeded the achievable range and was clamped.
    pub saturated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CalibrationError {
    Card(CardError),
    TableMismatch { table_bits: u32, card_bits: u32 },
}

impl fmt::Display for CalibrationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CalibrationError::Card(e) => write!(f, "{e}"),
            CalibrationError::TableMismatch {
                table_bits,
                card_bits,
            } => write!(
                f,
                "calibration table built for {table_bits}-bit card, card has {card_bits} bits"
            ),
        }
    }
}

impl std::error::Error for CalibrationError {}

impl From<CardError> for CalibrationError {
    fn from(e: CardError) -> Self {
        CalibrationError::Card(e)
    }
}

/// Sweep the (noise-free) transfer curve and build the inverse table.
/// Target voltages are spaced linearly over [0, actual_max_V]; for each the
/// nearest settled output is chosen, lower code winning exact ties. The
/// sweep exploits monotonicity, so it is linear in the code count.
pub fn calibrate(card_cfg: &CardConfig) -> Result<CalibrationTable, CalibrationError> {
    card_cfg.validate()?;
    let max_code = card_cfg.max_code();
    let achieved_max_v = card_cfg.actual_max_v;
    let curve: Vec<f64> = (0..=max_code)
        .map(|c| dac_transfer(c, card_cfg))
        .collect::<Result<_, _>>()?;

    let mut inverse_lut = Vec::with_capacity(max_code as usize + 1);
    let mut residual_max_v: f64 = 0.0;
    let mut c = 0usize;
    for t in 0..=max_code {
        let target_v = t as f64 / max_code as f64 * achieved_max_v;
        while c < max_code as usize && (curve[c + 1] - target_v).abs() < (curve[c] - target_v).abs()
        {
            c += 1;
        }
        inverse_lut.push(c as u16);
        residual_max_v = residual_max_v.max((curve[c] - target_v).abs());
    }

    Ok(CalibrationTable {
        gain: card_cfg.nominal_fullscale_v / card_cfg.actual_max_v,
        inverse_lut,
        achieved_max_v,
        residual_max_v,
        bits: card_cfg.bits,
    })
}

impl CalibrationTable {
    /// Code width the table was built for.
    pub fn bits(&self) -> u32 {
        self.bits
    }

    /// Effective LSB of the linearized range.
    pub fn effective_lsb_v(&self) -> f64 {
        self.achieved_max_v / (self.inverse_lut.len() as f64 - 1.0)
    }

    /// True when the table maps every code to itself (already linear card).
    pub fn is_identity(&self) -> bool {
        self.inverse_lut
            .iter()
            .enumerate()
            .all(|(i, &c)| i as u16 == c)
    }

    /// Voltage request → target code in the achieved range → corrected code.
    pub fn correct(&self, v_v: f64) -> CorrectedWrite {
        let max_code = self.inverse_lut.len() as f64 - 1.0;
        let saturated = v_v > self.achieved_max_v || v_v < 0.0;
        let clamped = v_v.clamp(0.0, self.achieved_max_v);
        let target = (clamped / self.achieved_max_v * max_code).round() as usize;
        let code_sent = self.inverse_lut[target];
        CorrectedWrite {
            code_sent,
            expected_v: f64::NAN,
            saturated,
        }
    }

    /// Corrected write through the card: returns the code sent and the
    /// voltage the settled output will take; out-of-range requests clamp
    /// and flag saturation.
    pub fn corrected_write(
        &self,
        card: &mut VirtualAddaCard,
        channel: u8,
        v_v: f64,
    ) -> Result<CorrectedWrite, CalibrationError> {
        if self.bits != card.config().bits {
            return Err(CalibrationError::TableMismatch {
                table_bits: self.bits,
                card_bits: card.config().bits,
            });
        }
        let mut w = self.correct(v_v);
        w.expected_v = dac_transfer(w.code_sent, card.config())?;
        card.dac_write(channel, w.code_sent)?;
        Ok(w)
    }
}
