//! `hilsim` — scenario-driven control-loop runs against a virtual ADDA
//! card, plus the design, calibration, plotting and external-controller
//! utilities around them.

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::exit;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use hilsim_core::calibration::calibrate;
use hilsim_core::controllers::rst::{design_rst, TMode};
use hilsim_core::executor::write_trace_csv;
use hilsim_core::plot::plot_trace_csv;
use hilsim_core::poly::Polynomial;
use hilsim_core::runner;
use hilsim_core::scenario::{default_peer_port, Mode, RstSection, Scenario};
use hilsim_core::vdevice::{dac_transfer, CardConfig};

#[derive(Parser)]
#[command(
    name = "hilsim",
    version,
    about = "Real-time control simulation with a virtual ADDA card"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file and write the trace CSV; the run report (with
    /// the effective configuration echoed) goes to stdout as JSON.
    Run(RunArgs),
    /// Solve an RST pole placement and print R, S, T and the residual.
    DesignRst(DesignArgs),
    /// Build the DAC linearization table and print its summary.
    Calibrate(CalibrateArgs),
    /// Act as the external controller for a hil-mode run.
    HilPeer(PeerArgs),
    /// Render a trace CSV as an SVG figure.
    Plot(PlotArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario JSON file.
    scenario: PathBuf,
    /// Override the scenario's mode (sim, rt, hil).
    #[arg(long)]
    mode: Option<Mode>,
    /// Trace CSV output path.
    #[arg(long, default_value = "trace.csv")]
    out: PathBuf,
    /// Override the scenario's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the scenario's duration in seconds.
    #[arg(long)]
    duration: Option<f64>,
    /// Also render the trace to this SVG path.
    #[arg(long)]
    plot: Option<PathBuf>,
}

#[derive(Args)]
struct DesignArgs {
    /// Plant denominator A coefficients, ascending powers of q^-1.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, num_args = 1)]
    a: Option<Vec<f64>>,
    /// Plant numerator B coefficients.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, num_args = 1)]
    b: Option<Vec<f64>>,
    /// Extra plant delay in samples.
    #[arg(long)]
    d: Option<usize>,
    /// Target pole polynomial P coefficients.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, num_args = 1)]
    p: Option<Vec<f64>>,
    /// unit_dc_gain or paper_literal.
    #[arg(long, default_value = "unit_dc_gain")]
    t_mode: String,
    /// JSON file with {"a": [...], "b": [...], "d": n, "p": [...]} instead
    /// of the inline flags.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Card config JSON (defaults describe the measured board).
    #[arg(long)]
    card: Option<PathBuf>,
    /// Dump the lookup table as CSV (target_code,corrected_code,residual_V).
    #[arg(long)]
    lut_csv: Option<PathBuf>,
}

#[derive(Args)]
struct PeerArgs {
    /// Control law to run: rst (from the scenario) or echo.
    #[arg(long, default_value = "rst")]
    law: String,
    /// Scenario file; required for the rst law.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Listen address. Defaults to 0.0.0.0 on the standard port
    /// (HILSIM_PORT overrides the port).
    #[arg(long)]
    listen: Option<String>,
    /// Give up after this much silence.
    #[arg(long, default_value_t = 600)]
    idle_timeout_s: u64,
}

#[derive(Args)]
struct PlotArgs {
    /// Trace CSV produced by `run`.
    trace: PathBuf,
    /// Output SVG path.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run(args) => cmd_run(args),
        Command::DesignRst(args) => cmd_design(args),
        Command::Calibrate(args) => cmd_calibrate(args),
        Command::HilPeer(args) => cmd_peer(args),
        Command::Plot(args) => cmd_plot(args),
    }
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let mut scenario = Scenario::from_path(&args.scenario)
        .with_context(|| format!("loading {}", args.scenario.display()))?;
    if let Some(mode) = args.mode {
        scenario.mode = mode;
    }
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    if let Some(duration) = args.duration {
        scenario.duration_s = duration;
    }
    scenario.validate().map_err(|e| anyhow!("{e}"))?;

    let artifacts = runner::run(&scenario).map_err(|e| anyhow!("{e}"))?;

    let file =
        fs::File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write_trace_csv(std::io::BufWriter::new(file), &artifacts.trace)?;

    if let Some(svg) = &args.plot {
        let svg_text =
            hilsim_core::plot::render_svg(&artifacts.trace).map_err(|e| anyhow!("{e}"))?;
        fs::write(svg, svg_text).with_context(|| format!("writing {}", svg.display()))?;
    }

    let mut report = serde_json::to_value(&artifacts.report)?;
    report["trace_path"] = serde_json::Value::String(args.out.display().to_string());
    report["scenario"] = serde_json::to_value(&artifacts.effective)?;
    print_stdout(&serde_json::to_string_pretty(&report)?)?;
    Ok(())
}

/// Print to stdout, exiting quietly when the consumer (e.g. `head`) has
/// closed the pipe.
fn print_stdout(text: &str) -> Result<()> {
    let mut out = std::io::stdout();
    match writeln!(out, "{text}").and_then(|_| out.flush()) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => exit(0),
        Err(e) => Err(e.into()),
    }
}

fn cmd_design(args: DesignArgs) -> Result<()> {
    let (a, b, d, p, t_mode) = if let Some(path) = &args.json {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let sec: RstSection = serde_json::from_str(&text).context("parsing design JSON")?;
        (sec.a, sec.b, sec.d, sec.p, sec.t_mode)
    } else {
        let t_mode = match args.t_mode.as_str() {
            "unit_dc_gain" => TMode::UnitDcGain,
            "paper_literal" => TMode::PaperLiteral,
            other => bail!("unknown t-mode `{other}` (unit_dc_gain, paper_literal)"),
        };
        (
            args.a
                .ok_or_else(|| anyhow!("--a is required without --json"))?,
            args.b
                .ok_or_else(|| anyhow!("--b is required without --json"))?,
            args.d
                .ok_or_else(|| anyhow!("--d is required without --json"))?,
            args.p
                .ok_or_else(|| anyhow!("--p is required without --json"))?,
            t_mode,
        )
    };
    let design = design_rst(
        &Polynomial::new(a),
        &Polynomial::new(b),
        d,
        &Polynomial::new(p),
        t_mode,
    )
    .map_err(|e| anyhow!("{e}"))?;
    print_stdout(&format!(
        "R = {:?}\nS = {:?}\nT = {:?}\nresidual = {:.3e}",
        design.r.coeffs(),
        design.s.coeffs(),
        design.t.coeffs(),
        design.residual
    ))?;
    Ok(())
}

fn cmd_calibrate(args: CalibrateArgs) -> Result<()> {
    let cfg: CardConfig = match &args.card {
        Some(path) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).context("parsing card config")?
        }
        None => CardConfig::default(),
    };
    let table = calibrate(&cfg).map_err(|e| anyhow!("{e}"))?;
    print_stdout(&format!(
        "gain           = {:.6}\nachieved_max_V = {:.6}\nresidual_max_V = {:.6}\neffective_lsb_V = {:.6}",
        table.gain,
        table.achieved_max_v,
        table.residual_max_v,
        table.effective_lsb_v()
    ))?;
    if let Some(path) = &args.lut_csv {
        let max_code = cfg.max_code();
        let mut out = String::from("target_code,corrected_code,residual_V\n");
        for (t, &c) in table.inverse_lut.iter().enumerate() {
            let target_v = t as f64 / max_code as f64 * table.achieved_max_v;
            let residual = (dac_transfer(c, &cfg).map_err(|e| anyhow!("{e}"))? - target_v).abs();
            out.push_str(&format!("{t},{c},{residual}\n"));
        }
        fs::write(path, out).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn cmd_peer(args: PeerArgs) -> Result<()> {
    let scenario = match &args.scenario {
        Some(path) => {
            Some(Scenario::from_path(path).with_context(|| format!("loading {}", path.display()))?)
        }
        None => None,
    };
    let listen = args
        .listen
        .unwrap_or_else(|| format!("0.0.0.0:{}", default_peer_port()));
    let idle = Duration::from_secs(args.idle_timeout_s);

    let stats = match args.law.as_str() {
        "echo" => {
            // echo needs no scenario; synthesize a minimal one for the
            // serve plumbing when none was given
            let base = scenario.as_ref().map_or(0.045, |s| s.base_step_s);
            let mut peer = hilsim_core::transport::HilPeer::bind(listen.as_str(), base)
                .map_err(|e| anyhow!("bind {listen}: {e}"))?;
            eprintln!(
                "hilsim hil-peer: echo law listening on {}",
                peer.local_addr()?
            );
            peer.serve(&mut hilsim_core::transport::PeerLaw::Echo, idle)?
        }
        "rst" => {
            let scenario =
                scenario.ok_or_else(|| anyhow!("--scenario is required for the rst law"))?;
            eprintln!("hilsim hil-peer: rst law listening on {listen}");
            runner::serve_peer(&scenario, "rst", &listen, idle).map_err(|e| anyhow!("{e}"))?
        }
        other => bail!("unknown peer law `{other}` (rst, echo)"),
    };
    let mut err = std::io::stderr();
    writeln!(
        err,
        "hilsim hil-peer: served {} samples, {} replies, bye={}",
        stats.sensor_frames, stats.replies, stats.got_bye
    )?;
    Ok(())
}

fn cmd_plot(args: PlotArgs) -> Result<()> {
    plot_trace_csv(&args.trace, &args.out).map_err(|e| anyhow!("{e}"))?;
    print_stdout(&format!("wrote {}", args.out.display()))?;
    Ok(())
}
