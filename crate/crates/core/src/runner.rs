//! Wires a parsed scenario into a runnable loop: sim mode runs plant and
//! controller directly, rt mode puts the virtual card (with calibration and
//! loopback wiring) between them under wall-clock pacing, hil mode swaps the
//! local controller for UDP round trips to an external process.

use std::fmt;
use std::time::Duration;

use crate::calibration::{calibrate, CalibrationError};
use crate::controllers::pid::PidController;
use crate::controllers::rst::{design_rst, RstController, RstError};
use crate::executor::{
    run_loop, ControlSource, IoPath, LocalLaw, LoopError, Pacing, RunReport, RunSetup, TimeBase,
    TraceRecord, DEFAULT_MAX_RETRIES,
};
use crate::plant::{make_plant, PlantError, PlantSpec};
use crate::poly::Polynomial;
use crate::scenario::{ControllerSection, Mode, Scenario, ScenarioError, TransportSection};
use crate::transport::{HilLink, HilPeer, PeerLaw, Wire};
use crate::vdevice::{CardError, VirtualAddaCard};

#[derive(Debug)]
pub enum RunnerError {
    Scenario(ScenarioError),
    Plant(PlantError),
    Design(RstError),
    Card(CardError),
    Calibration(CalibrationError),
    Loop(LoopError),
    Transport(std::io::Error),
    Unsupported(String),
}

impl fmt::Display for RunnerError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunnerError::Scenario(e) => write!(f, "{e}"),
            RunnerError::Plant(e) => write!(f, "plant: {e}"),
            RunnerError::Design(e) => write!(f, "rst design: {e}"),
            RunnerError::Card(e) => write!(f, "card: {e}"),
            RunnerError::Calibration(e) => write!(f, "calibration: {e}"),
            RunnerError::Loop(e) => write!(f, "{e}"),
            RunnerError::Transport(e) => write!(f, "transport: {e}"),
            RunnerError::Unsupported(msg) => write!(f, "{msg}"),
        }
    }
}

impl std::error::Error for RunnerError {}

impl From<ScenarioError> for RunnerError {
    fn from(e: ScenarioError) -> Self {
        RunnerError::Scenario(e)
    }
}

impl From<PlantError> for RunnerError {
    fn from(e: PlantError) -> Self {
        RunnerError::Plant(e)
    }
}

impl From<RstError> for RunnerError {
    fn from(e: RstError) -> Self {
        RunnerError::Design(e)
    }
}

impl From<CardError> for RunnerError {
    fn from(e: CardError) -> Self {
        RunnerError::Card(e)
    }
}

impl From<CalibrationError> for RunnerError {
    fn from(e: CalibrationError) -> Self {
        RunnerError::Calibration(e)
    }
}

impl From<LoopError> for RunnerError {
    fn from(e: LoopError) -> Self {
        RunnerError::Loop(e)
    }
}

#[derive(Debug)]
pub struct RunArtifacts {
    pub trace: Vec<TraceRecord>,
    pub report: RunReport,
    /// The fully-defaulted configuration the run actually used.
    pub effective: Scenario,
}

/// Build the local control law a scenario describes (also used by the
/// reference peer, which runs the same section on the other side of the
/// UDP link).
pub fn build_local_law(scenario: &Scenario) -> Result<LocalLaw, RunnerError> {
    match &scenario.controller {
        ControllerSection::Pid(gains) => Ok(LocalLaw::Pid(PidController::new(
            *gains,
            scenario.controller_period(),
        ))),
        ControllerSection::Rst(sec) => {
            let design = design_rst(
                &Polynomial::new(sec.a.clone()),
                &Polynomial::new(sec.b.clone()),
                sec.d,
                &Polynomial::new(sec.p.clone()),
                sec.t_mode,
            )?;
            Ok(LocalLaw::Rst(RstController::from_design(
                &design,
                scenario.controller_period(),
            )))
        }
        ControllerSection::External => Err(RunnerError::Unsupported(
            "controller \"external\" has no in-process law".to_string(),
        )),
    }
}

/// Peer-side law for `hil-peer --law rst`.
pub fn build_peer_law(scenario: &Scenario) -> Result<PeerLaw, RunnerError> {
    match build_local_law(scenario)? {
        LocalLaw::Rst(controller) => Ok(PeerLaw::Rst {
            controller,
            reference: scenario.reference,
            quantizer: scenario.effective().card,
        }),
        _ => Err(RunnerError::Unsupported(
            "scenario has no rst controller section for the peer law".to_string(),
        )),
    }
}

fn hil_timeout(scenario: &Scenario, transport: &TransportSection) -> Duration {
    let default_ms = (scenario.base_step_s * 1e3).round().max(1.0) as u64;
    Duration::from_millis(transport.step_timeout_ms.unwrap_or(default_ms))
}

/// Assemble the full loop setup for a validated scenario. Exposed so tests
/// can run any mode without pacing.
pub fn build_setup(scenario: &Scenario, pacing: Pacing) -> Result<RunSetup, RunnerError> {
    let eff = scenario.effective();
    let spec = PlantSpec::preset(&eff.plant.preset, &eff.plant.overrides)?;
    let plant = make_plant(spec, eff.base_step_s)?;

    let io = match eff.mode {
        Mode::Sim => IoPath::Direct {
            quantizer: eff.card.clone(),
        },
        Mode::Rt | Mode::Hil => {
            let table = calibrate(&eff.card)?;
            let card = VirtualAddaCard::new(eff.card.clone())?;
            IoPath::Card {
                card,
                wire: Wire::loopback(),
                table,
            }
        }
    };

    let control = match eff.mode {
        Mode::Sim | Mode::Rt => ControlSource::Local(build_local_law(&eff)?),
        Mode::Hil => {
            let transport = eff.transport.clone().unwrap_or_default();
            let link = HilLink::connect(
                &transport.bind,
                transport.peer.as_str(),
                hil_timeout(&eff, &transport),
                eff.base_step_s,
            )
            .map_err(RunnerError::Transport)?;
            ControlSource::Remote(link)
        }
    };

    Ok(RunSetup {
        plant,
        control,
        io,
        reference: eff.reference,
        timebase: TimeBase {
            base_step_s: eff.base_step_s,
            n_steps: eff.n_steps(),
            pacing,
        },
        controller_period_s: eff.controller_period(),
        tol_frac: eff.tolerance,
        max_retries: DEFAULT_MAX_RETRIES,
    })
}

/// Parse-validate-wire-run. sim mode runs as fast as possible; rt and hil
/// pace each step against the wall clock.
pub fn run(scenario: &Scenario) -> Result<RunArtifacts, RunnerError> {
    scenario.validate()?;
    let pacing = match scenario.mode {
        Mode::Sim => Pacing::AsFastAsPossible,
        Mode::Rt | Mode::Hil => Pacing::WallClock,
    };
    let setup = build_setup(scenario, pacing)?;
    let outcome = run_loop(setup)?;
    Ok(RunArtifacts {
        trace: outcome.trace,
        report: outcome.report,
        effective: scenario.effective(),
    })
}

/// Serve one `hil-peer` session on `listen`, answering until BYE or
/// `idle_timeout` of silence.
pub fn serve_peer(
    scenario: &Scenario,
    law_name: &str,
    listen: &str,
    idle_timeout: Duration,
) -> Result<crate::transport::PeerStats, RunnerError> {
    let mut law = match law_name {
        "echo" => PeerLaw::Echo,
        "rst" => build_peer_law(scenario)?,
        other => {
            return Err(RunnerError::Unsupported(format!(
                "unknown peer law `{other}` (rst, echo)"
            )))
        }
    };
    let mut peer = HilPeer::bind(listen, scenario.base_step_s).map_err(RunnerError::Transport)?;
    peer.serve(&mut law, idle_timeout)
        .map_err(RunnerError::Transport)
}
