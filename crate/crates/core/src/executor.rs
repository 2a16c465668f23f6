//! Fixed-step control-loop executor. Each base step: sample the reference,
//! read the sensor channel through the card with the tolerance re-read
//! loop, run the controller when its rate block is due (holding the output
//! in between), push the control action through the DAC→wire→ADC path, step
//! the plant, publish the new output on the sensor channel, record a trace
//! row, and — in wall-clock mode — sleep until the step deadline. Overruns
//! and tolerance misses are counted, never fatal.

use std::fmt;
use std::io::{self, BufRead, Write as IoWrite};
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::calibration::{CalibrationError, CalibrationTable};
use crate::controllers::{PidController, RstController};
use crate::plant::PlantInstance;
use crate::reference::Reference;
use crate::transport::{HilLink, Wire, ACTUATOR_CHANNEL, SENSOR_CHANNEL};
use crate::vdevice::{dequantize, quantize, CardConfig, CardError, VirtualAddaCard};

/// Absolute floor for the re-read tolerance so expected values near zero
/// do not demand sub-noise precision.
pub const ZERO_GUARD_V: f64 = 0.05;

/// Default cap on re-reads per compensated read (4× the mean write delay).
pub const DEFAULT_MAX_RETRIES: u32 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pacing {
    AsFastAsPossible,
    WallClock,
}

/// Integer-indexed time base: sim_time(k) = k·base_step_s, no float
/// accumulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeBase {
    pub base_step_s: f64,
    pub n_steps: u64,
    pub pacing: Pacing,
}

impl TimeBase {
    pub fn sim_time(&self, step: u64) -> f64 {
        step as f64 * self.base_step_s
    }
}

/// Multi-rate schedule for one block: it fires at the first base step
/// at-or-after each due time, then the next due time advances by one period
/// (m·period, never accumulated, so no drift).
#[derive(Debug, Clone, PartialEq)]
pub struct RateSpec {
    pub block_id: String,
    pub period_s: f64,
    fired: u64,
}

impl RateSpec {
    pub fn new(block_id: impl Into<String>, period_s: f64) -> Self {
        Self {
            block_id: block_id.into(),
            period_s,
            fired: 0,
        }
    }

    /// True exactly once per due time, at the first step whose sim time
    /// reaches it (1 ns slack absorbs binary-fraction noise in k·base).
    pub fn fire(&mut self, step: u64, base_step_s: f64) -> bool {
        let due = self.fired as f64 * self.period_s;
        if step as f64 * base_step_s >= due - 1e-9 {
            self.fired += 1;
            true
        } else {
            false
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PaceOutcome {
    Met,
    Overrun { lateness_ms: f64 },
}

/// Sleep until `deadline` (coarse sleep plus a 1 ms spin finish); if the
/// deadline already passed, report by how much.
pub fn pace(deadline: Instant) -> PaceOutcome {
    let now = Instant::now();
    if now > deadline {
        return PaceOutcome::Overrun {
            lateness_ms: (now - deadline).as_secs_f64() * 1e3,
        };
    }
    let spin_margin = Duration::from_millis(1);
    let remaining = deadline - now;
    if remaining > spin_margin {
        std::thread::sleep(remaining - spin_margin);
    }
    while Instant::now() < deadline {
        std::hint::spin_loop();
    }
    PaceOutcome::Met
}

/// The re-read acceptance predicate: a reading counts as correct when it is
/// within tol_frac of the expected value, relative to max(|expected|, 50 mV).
pub fn within_tolerance(read_v: f64, expected_v: f64, tol_frac: f64) -> bool {
    (read_v - expected_v).abs() <= tol_frac * expected_v.abs().max(ZERO_GUARD_V)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReadOutcome {
    pub volts: f64,
    pub code: u16,
    pub retries: u32,
    /// False when max_retries ran out before the tolerance was met; the
    /// last reading is still returned and the loop continues.
    pub met: bool,
}

/// Read the ADC until the value agrees with what the loop expects on that
/// channel: (read, check, advance one delay cycle, re-read). This is the
/// compensation that keeps card settling delay from corrupting the loop.
pub fn read_compensated(
    card: &mut VirtualAddaCard,
    wire: &Wire,
    channel: u8,
    expected_v: f64,
    tol_frac: f64,
    max_retries: u32,
) -> Result<ReadOutcome, CardError> {
    wire.propagate(card)?;
    let mut code = card.adc_read(channel)?;
    let mut volts = dequantize(code, card.config());
    let mut retries = 0;
    while !within_tolerance(volts, expected_v, tol_frac) && retries < max_retries {
        card.advance_cycle();
        wire.propagate(card)?;
        code = card.adc_read(channel)?;
        volts = dequantize(code, card.config());
        retries += 1;
    }
    Ok(ReadOutcome {
        volts,
        code,
        retries,
        met: within_tolerance(volts, expected_v, tol_frac),
    })
}

/// One row per base step.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub step: u64,
    pub t_sim_s: f64,
    pub r_v: f64,
    pub e_v: f64,
    pub u_cmd_v: f64,
    pub u_code: u16,
    pub u_actual_v: f64,
    pub y_plant_v: f64,
    pub y_code: u16,
    pub y_read_v: f64,
    pub retries: u32,
    pub saturated: bool,
    pub overrun: bool,
    pub wall_dt_ms: f64,
}

pub const TRACE_CSV_HEADER: &str = "step,t_sim_s,r_V,e_V,u_cmd_V,u_code,u_actual_V,y_plant_V,\
y_code,y_read_V,retries,saturated,overrun,wall_dt_ms";

impl TraceRecord {
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.step,
            self.t_sim_s,
            self.r_v,
            self.e_v,
            self.u_cmd_v,
            self.u_code,
            self.u_actual_v,
            self.y_plant_v,
            self.y_code,
            self.y_read_v,
            self.retries,
            self.saturated as u8,
            self.overrun as u8,
            self.wall_dt_ms
        )
    }

    pub fn from_csv_row(line: &str) -> Result<Self, String> {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 14 {
            return Err(format!("expected 14 columns, got {}", fields.len()));
        }
        fn num<T: std::str::FromStr>(s: &str, name: &str) -> Result<T, String> {
            s.trim()
                .parse()
                .map_err(|_| format!("bad value `{s}` for column {name}"))
        }
        Ok(TraceRecord {
            step: num(fields[0], "step")?,
            t_sim_s: num(fields[1], "t_sim_s")?,
            r_v: num(fields[2], "r_V")?,
            e_v: num(fields[3], "e_V")?,
            u_cmd_v: num(fields[4], "u_cmd_V")?,
            u_code: num(fields[5], "u_code")?,
            u_actual_v: num(fields[6], "u_actual_V")?,
            y_plant_v: num(fields[7], "y_plant_V")?,
            y_code: num(fields[8], "y_code")?,
            y_read_v: num(fields[9], "y_read_V")?,
            retries: num(fields[10], "retries")?,
            saturated: num::<u8>(fields[11], "saturated")? != 0,
            overrun: num::<u8>(fields[12], "overrun")? != 0,
            wall_dt_ms: num(fields[13], "wall_dt_ms")?,
        })
    }
}

pub fn write_trace_csv(mut w: impl IoWrite, trace: &[TraceRecord]) -> io::Result<()> {
    writeln!(w, "{TRACE_CSV_HEADER}")?;
    for rec in trace {
        writeln!(w, "{}", rec.to_csv_row())?;
    }
    Ok(())
}

/// Parse a trace CSV, reporting the 1-based line number on failure.
pub fn read_trace_csv(r: impl BufRead) -> Result<Vec<TraceRecord>, String> {
    let mut lines = r.lines().enumerate();
    let header = match lines.next() {
        Some((_, Ok(h))) => h,
        Some((_, Err(e))) => return Err(format!("line 1: {e}")),
        None => return Err("empty file".to_string()),
    };
    if header.trim() != TRACE_CSV_HEADER {
        return Err(format!("line 1: unexpected header `{}`", header.trim()));
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let line = line.map_err(|e| format!("line {}: {e}", i + 1))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(TraceRecord::from_csv_row(&line).map_err(|e| format!("line {}: {e}", i + 1))?);
    }
    Ok(out)
}

/// End-of-run summary, serialized as JSON on stdout by the CLI.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub steps_total: u64,
    pub overruns: u64,
    pub mean_period_ms: f64,
    pub p99_period_ms: f64,
    pub max_retries: u32,
    pub settle_step: Option<u64>,
    #[serde(rename = "steady_state_error_V")]
    pub steady_state_error_v: f64,
    /// Steps where a compensated read ran out of retries.
    pub tolerance_misses: u64,
}

impl RunReport {
    pub fn from_trace(trace: &[TraceRecord], tolerance_misses: u64) -> Self {
        let n = trace.len() as u64;
        let overruns = trace.iter().filter(|r| r.overrun).count() as u64;
        let max_retries = trace.iter().map(|r| r.retries).max().unwrap_or(0);
        let mut periods: Vec<f64> = trace.iter().map(|r| r.wall_dt_ms).collect();
        let mean_period_ms = if periods.is_empty() {
            0.0
        } else {
            periods.iter().sum::<f64>() / periods.len() as f64
        };
        periods.sort_by(|a, b| a.total_cmp(b));
        let p99_period_ms = if periods.is_empty() {
            0.0
        } else {
            periods[((periods.len() - 1) as f64 * 0.99).ceil() as usize]
        };

        // settle: last entry into the 2% band around the reference that is
        // never left again
        let settle_step = trace.last().map(|last| {
            let band = 0.02 * last.r_v.abs().max(ZERO_GUARD_V);
            let mut settle = None;
            for rec in trace.iter().rev() {
                if (rec.y_read_v - rec.r_v).abs() <= band {
                    settle = Some(rec.step);
                } else {
                    break;
                }
            }
            settle
        });
        let settle_step = settle_step.flatten();

        let tail = (trace.len() / 10).max(1).min(trace.len());
        let steady_state_error_v = if trace.is_empty() {
            0.0
        } else {
            trace[trace.len() - tail..]
                .iter()
                .map(|r| r.r_v - r.y_read_v)
                .sum::<f64>()
                / tail as f64
        };

        RunReport {
            steps_total: n,
            overruns,
            mean_period_ms,
            p99_period_ms,
            max_retries,
            settle_step,
            steady_state_error_v,
            tolerance_misses,
        }
    }
}

/// A controller living inside the loop process.
pub enum LocalLaw {
    Pid(PidController),
    Rst(RstController),
    /// u = r; diagnostic loop.
    PassThrough,
}

impl LocalLaw {
    pub fn step(&mut self, r_v: f64, y_v: f64) -> f64 {
        match self {
            LocalLaw::Pid(pid) => pid.step(r_v, y_v),
            LocalLaw::Rst(rst) => rst.step(r_v, y_v),
            LocalLaw::PassThrough => r_v,
        }
    }
}

pub enum ControlSource {
    Local(LocalLaw),
    /// External controller over UDP (hardware-in-the-loop).
    Remote(HilLink),
}

/// Signal path between controller and plant.
#[allow(clippy::large_enum_variant)]
pub enum IoPath {
    /// Pure simulation, no card anywhere; the quantizer config is used only
    /// to fill the informational code columns of the trace.
    Direct { quantizer: CardConfig },
    /// Card in the loop: both the control action and the plant output pass
    /// through DAC → wire → ADC.
    Card {
        card: VirtualAddaCard,
        wire: Wire,
        table: CalibrationTable,
    },
}

pub struct RunSetup {
    pub plant: PlantInstance,
    pub control: ControlSource,
    pub io: IoPath,
    pub reference: Reference,
    pub timebase: TimeBase,
    pub controller_period_s: f64,
    pub tol_frac: f64,
    pub max_retries: u32,
}

#[derive(Debug)]
pub enum LoopError {
    Config(String),
    Card(CardError),
    Calibration(CalibrationError),
}

impl fmt::Display for LoopError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LoopError::Config(msg) => write!(f, "loop configuration: {msg}"),
            LoopError::Card(e) => write!(f, "{e}"),
            LoopError::Calibration(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for LoopError {}

impl From<CardError> for LoopError {
    fn from(e: CardError) -> Self {
        LoopError::Card(e)
    }
}

impl From<CalibrationError> for LoopError {
    fn from(e: CalibrationError) -> Self {
        LoopError::Calibration(e)
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub trace: Vec<TraceRecord>,
    pub report: RunReport,
}

fn validate(setup: &RunSetup) -> Result<(), LoopError> {
    let tb = &setup.timebase;
    if tb.base_step_s <= 0.0 {
        return Err(LoopError::Config(format!(
            "base_step_s must be > 0, got {}",
            tb.base_step_s
        )));
    }
    if tb.n_steps == 0 {
        return Err(LoopError::Config(
            "duration shorter than one base step".to_string(),
        ));
    }
    if setup.controller_period_s < tb.base_step_s - 1e-12 {
        return Err(LoopError::Config(format!(
            "controller_period_s {} below base_step_s {}",
            setup.controller_period_s, tb.base_step_s
        )));
    }
    if (setup.plant.sys().period_s() - tb.base_step_s).abs() > 1e-12 {
        return Err(LoopError::Config(format!(
            "plant discretized at {} s but base step is {} s",
            setup.plant.sys().period_s(),
            tb.base_step_s
        )));
    }
    if setup.tol_frac <= 0.0 {
        return Err(LoopError::Config(format!(
            "tol_frac must be > 0, got {}",
            setup.tol_frac
        )));
    }
    setup.reference.validate().map_err(LoopError::Config)?;
    if let IoPath::Card { card, table, .. } = &setup.io {
        if table.bits() != card.config().bits {
            return Err(LoopError::Config(format!(
                "calibration table built for {}-bit card, card has {} bits",
                table.bits(),
                card.config().bits
            )));
        }
    }
    if let ControlSource::Remote(_) = &setup.control {
        let bits = match &setup.io {
            IoPath::Direct { quantizer } => quantizer.bits,
            IoPath::Card { card, .. } => card.config().bits,
        };
        if bits > 8 {
            return Err(LoopError::Config(format!(
                "hil transport carries 8-bit codes, card has {bits} bits"
            )));
        }
    }
    Ok(())
}

/// Run the loop to completion. Runtime anomalies (overruns, tolerance
/// misses, saturation) land in the trace and report; only configuration
/// and programming errors abort.
pub fn run_loop(mut setup: RunSetup) -> Result<RunOutcome, LoopError> {
    validate(&setup)?;
    let base = setup.timebase.base_step_s;
    let n_steps = setup.timebase.n_steps;
    let pacing = setup.timebase.pacing;
    let quant_cfg = match &setup.io {
        IoPath::Direct { quantizer } => quantizer.clone(),
        IoPath::Card { card, .. } => card.config().clone(),
    };
    let mut rate = RateSpec::new("controller", setup.controller_period_s);
    let mut trace: Vec<TraceRecord> = Vec::with_capacity(n_steps as usize);
    let mut tolerance_misses = 0u64;
    let mut expected_y = setup.plant.last_output();
    let mut sim_last_y = setup.plant.last_output();
    let mut u_held = 0.0f64;

    // prime the sensor channel with the plant's initial output so the first
    // measurement sees the operating point, not a floating wire
    if let IoPath::Card { card, wire, table } = &mut setup.io {
        let w = table.corrected_write(card, SENSOR_CHANNEL, setup.plant.last_output())?;
        while card.pending_writes(SENSOR_CHANNEL)? > 0 {
            card.advance_cycle();
        }
        wire.propagate(card)?;
        expected_y = w.expected_v;
    }
    let run_start = Instant::now();

    for k in 0..n_steps {
        let step_start = Instant::now();
        let t = setup.timebase.sim_time(k);
        let r = setup.reference.value(t);

        // measure the sensor channel
        let (y_read, y_code, retries_y, y_met) = match &mut setup.io {
            IoPath::Direct { quantizer } => (sim_last_y, quantize(sim_last_y, quantizer), 0, true),
            IoPath::Card { card, wire, .. } => {
                let o = read_compensated(
                    card,
                    wire,
                    SENSOR_CHANNEL,
                    expected_y,
                    setup.tol_frac,
                    setup.max_retries,
                )?;
                (o.volts, o.code, o.retries, o.met)
            }
        };
        let e = r - y_read;

        // control action, zero-order held between controller samples
        let mut hil_timeout = false;
        if rate.fire(k, base) {
            u_held = match &mut setup.control {
                ControlSource::Local(law) => law.step(r, y_read),
                ControlSource::Remote(link) => {
                    let (code, timed_out) = link.round_trip(k as u32, y_code as u8);
                    hil_timeout = timed_out;
                    dequantize(code as u16, &quant_cfg)
                }
            };
        }
        let u_cmd = u_held;

        // actuate and read the applied value back through the loop path
        let (u_code, u_actual, mut saturated, retries_u, u_applied, u_met) = match &mut setup.io {
            IoPath::Direct { quantizer } => {
                (quantize(u_cmd, quantizer), u_cmd, false, 0, u_cmd, true)
            }
            IoPath::Card { card, wire, table } => {
                let w = table.corrected_write(card, ACTUATOR_CHANNEL, u_cmd)?;
                card.advance_cycle();
                let o = read_compensated(
                    card,
                    wire,
                    ACTUATOR_CHANNEL,
                    w.expected_v,
                    setup.tol_frac,
                    setup.max_retries,
                )?;
                (
                    w.code_sent,
                    w.expected_v,
                    w.saturated,
                    o.retries,
                    o.volts,
                    o.met,
                )
            }
        };

        let y_plant = setup.plant.step(u_applied);

        // publish the new output on the sensor channel
        match &mut setup.io {
            IoPath::Direct { .. } => sim_last_y = y_plant,
            IoPath::Card { card, wire, table } => {
                let w = table.corrected_write(card, SENSOR_CHANNEL, y_plant)?;
                saturated |= w.saturated;
                expected_y = w.expected_v;
                // a zero-delay write settles at once; make it visible
                wire.propagate(card)?;
            }
        }

        if !y_met || !u_met {
            tolerance_misses += 1;
        }

        let (overrun, wall_dt_ms) = match pacing {
            Pacing::AsFastAsPossible => (hil_timeout, step_start.elapsed().as_secs_f64() * 1e3),
            Pacing::WallClock => {
                let deadline = run_start + Duration::from_secs_f64((k + 1) as f64 * base);
                let outcome = pace(deadline);
                let late = matches!(outcome, PaceOutcome::Overrun { .. });
                (
                    late || hil_timeout,
                    step_start.elapsed().as_secs_f64() * 1e3,
                )
            }
        };

        trace.push(TraceRecord {
            step: k,
            t_sim_s: t,
            r_v: r,
            e_v: e,
            u_cmd_v: u_cmd,
            u_code,
            u_actual_v: u_actual,
            y_plant_v: y_plant,
            y_code,
            y_read_v: y_read,
            retries: retries_y + retries_u,
            saturated,
            overrun,
            wall_dt_ms,
        });
    }

    if let ControlSource::Remote(link) = setup.control {
        link.close();
    }
    let report = RunReport::from_trace(&trace, tolerance_misses);
    Ok(RunOutcome { trace, report })
}
