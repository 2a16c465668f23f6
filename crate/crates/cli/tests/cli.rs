//! Black-box tests of the `hilsim` binary: scenario runs in each mode,
//! design/calibrate/plot utilities, and a two-process hil session.

use std::fs;
use std::net::UdpSocket;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::Instant;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hilsim"))
}

fn preset(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../presets")
        .join(name)
}

fn tmpdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("hilsim_cli_{tag}_{}", std::process::id()));
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn hilsim");
    assert!(
        out.status.success(),
        "command failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn parse_csv(path: &Path) -> Vec<Vec<String>> {
    let text = fs::read_to_string(path).unwrap();
    text.lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn run_sim_mode_produces_clean_trace_and_report() {
    let dir = tmpdir("sim");
    let out_csv = dir.join("t.csv");
    let out = run_ok(
        bin()
            .arg("run")
            .arg(preset("pid_heat_exchanger.json"))
            .args(["--mode", "sim", "--out"])
            .arg(&out_csv),
    );

    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["steps_total"], 1333);
    assert_eq!(report["overruns"], 0);
    assert_eq!(report["max_retries"], 0);
    assert_eq!(report["tolerance_misses"], 0);
    // effective configuration is echoed for reproducibility
    assert_eq!(report["scenario"]["mode"], "sim");
    assert_eq!(report["scenario"]["controller_period_s"], 0.045);

    let rows = parse_csv(&out_csv);
    assert_eq!(
        rows[0].join(","),
        "step,t_sim_s,r_V,e_V,u_cmd_V,u_code,u_actual_V,y_plant_V,y_code,y_read_V,retries,saturated,overrun,wall_dt_ms"
    );
    assert_eq!(rows.len(), 1 + 1333);
    // sim mode: no card, no retries, no saturation
    assert!(rows[1..].iter().all(|r| r[10] == "0" && r[11] == "0"));
}

#[test]
fn rt_runs_are_deterministic_up_to_wall_clock() {
    let dir = tmpdir("det");
    let (a, b) = (dir.join("a.csv"), dir.join("b.csv"));
    for out in [&a, &b] {
        run_ok(
            bin()
                .arg("run")
                .arg(preset("pid_heat_exchanger.json"))
                .args(["--mode", "rt", "--seed", "7", "--duration", "1.5", "--out"])
                .arg(out),
        );
    }
    let (ra, rb) = (parse_csv(&a), parse_csv(&b));
    assert_eq!(ra.len(), rb.len());
    assert_eq!(ra.len(), 1 + 33);
    for (la, lb) in ra.iter().zip(&rb).skip(1) {
        // identical except the wall_dt_ms column
        assert_eq!(la[..13], lb[..13]);
    }
}

#[test]
fn pid_preset_response_rises_like_the_designed_loop() {
    let dir = tmpdir("rise");
    let out_csv = dir.join("t.csv");
    run_ok(
        bin()
            .arg("run")
            .arg(preset("pid_heat_exchanger.json"))
            .args(["--mode", "sim", "--out"])
            .arg(&out_csv),
    );
    let rows = parse_csv(&out_csv);
    let y_final: f64 = rows.last().unwrap()[9].parse().unwrap();
    let crossing = rows[1..]
        .iter()
        .find(|r| r[9].parse::<f64>().unwrap() >= 0.63 * y_final)
        .map(|r| r[1].parse::<f64>().unwrap())
        .expect("response must cross 63% of its final value");
    // reference steps at 1 s; the closed loop's dominant constant is a few
    // seconds, much faster than the 10 s open-loop lag
    assert!(
        (2.0..=12.0).contains(&crossing),
        "63% crossing at t = {crossing} s is out of family"
    );
}

#[test]
fn design_rst_prints_polynomials_and_fails_on_singular() {
    let out = run_ok(bin().args([
        "design-rst",
        "--a",
        "1,-0.9",
        "--b",
        "0,0.5",
        "--d",
        "0",
        "--p",
        "1,-0.6",
    ]));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("R = [0.6"), "{text}");
    assert!(text.contains("S = [1.0]"), "{text}");
    assert!(text.contains("T = [2.0, -1.2]"), "{text}");
    assert!(text.contains("residual"), "{text}");

    // paper_literal variant
    let out = run_ok(bin().args([
        "design-rst",
        "--a",
        "1,-0.9",
        "--b",
        "0,0.5",
        "--d",
        "0",
        "--p",
        "1,-0.6",
        "--t-mode",
        "paper_literal",
    ]));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("T = [2.0, -3.0"), "{text}");

    // shared factor between A and q^-d B: solver error, nonzero exit
    let out = bin()
        .args([
            "design-rst",
            "--a",
            "1,-0.5",
            "--b",
            "0,1,-0.5",
            "--d",
            "0",
            "--p",
            "1,-0.6",
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.to_lowercase().contains("singular"), "{err}");

    // a plant with no static gain is rejected before the solve
    let out = bin()
        .args([
            "design-rst",
            "--a",
            "1,-0.9",
            "--b",
            "0,1,-1",
            "--d",
            "0",
            "--p",
            "1,-0.6",
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("B(1)"));
}

#[test]
fn calibrate_prints_summary_and_dumps_lut() {
    let dir = tmpdir("cal");
    let lut = dir.join("lut.csv");
    let out = run_ok(bin().arg("calibrate").arg("--lut-csv").arg(&lut));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("gain           = 1.111111"), "{text}");
    assert!(text.contains("residual_max_V = 0.009163"), "{text}");
    let rows = parse_csv(&lut);
    assert_eq!(rows[0].join(","), "target_code,corrected_code,residual_V");
    assert_eq!(rows.len(), 1 + 256);
    let worst: f64 = rows[1..]
        .iter()
        .map(|r| r[2].parse::<f64>().unwrap())
        .fold(0.0, f64::max);
    assert!(worst <= 4.5 / 255.0, "worst LUT residual {worst}");
}

#[test]
fn plot_renders_svg_with_both_panels() {
    let dir = tmpdir("plot");
    let csv = dir.join("t.csv");
    let svg = dir.join("t.svg");
    run_ok(
        bin()
            .arg("run")
            .arg(preset("rst_heat_exchanger.json"))
            .args(["--mode", "sim", "--duration", "5", "--out"])
            .arg(&csv)
            .arg("--plot")
            .arg(&svg),
    );
    let text = fs::read_to_string(&svg).unwrap();
    assert_eq!(text.matches("<polyline").count(), 4);
    assert!(text.contains("Response"));
    assert!(text.contains("Control action"));

    // standalone plot subcommand over the same trace
    let svg2 = dir.join("t2.svg");
    run_ok(bin().arg("plot").arg(&csv).arg("--out").arg(&svg2));
    assert!(svg2.exists());

    // malformed csv: nonzero exit, no file
    let bad = dir.join("bad.csv");
    fs::write(&bad, "not,a,trace\n1,2\n").unwrap();
    let out = bin()
        .arg("plot")
        .arg(&bad)
        .arg("--out")
        .arg(dir.join("bad.svg"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(!dir.join("bad.svg").exists());
}

#[test]
fn scenario_errors_name_the_problem() {
    let dir = tmpdir("err");
    let bad = dir.join("bad.json");
    let text = fs::read_to_string(preset("pid_heat_exchanger.json"))
        .unwrap()
        .replace("\"plant\"", "\"plnat\"");
    fs::write(&bad, text).unwrap();
    let out = bin().arg("run").arg(&bad).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("plnat") || err.contains("plant"), "{err}");

    let out = bin()
        .arg("run")
        .arg(dir.join("missing.json"))
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn presets_complete_quickly_as_fast_as_possible() {
    let dir = tmpdir("speed");
    for name in [
        "pid_heat_exchanger.json",
        "rst_heat_exchanger.json",
        "hil_rst_heat_exchanger.json",
    ] {
        let started = Instant::now();
        run_ok(
            bin()
                .arg("run")
                .arg(preset(name))
                .args(["--mode", "sim", "--out"])
                .arg(dir.join("t.csv")),
        );
        let elapsed = started.elapsed();
        assert!(elapsed.as_secs_f64() < 10.0, "{name} took {elapsed:?}");
    }
}

#[test]
fn hil_session_between_two_processes() {
    let dir = tmpdir("hil");
    // pick a free UDP port for this session
    let port = {
        let probe = UdpSocket::bind("127.0.0.1:0").unwrap();
        probe.local_addr().unwrap().port()
    };

    // scenario without a transport section: the run side falls back to the
    // standard peer address, overridden here via HILSIM_PORT
    let mut scenario: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(preset("hil_rst_heat_exchanger.json")).unwrap())
            .unwrap();
    scenario.as_object_mut().unwrap().remove("transport");
    scenario["duration_s"] = serde_json::json!(3.0);
    let scenario_path = dir.join("hil.json");
    fs::write(
        &scenario_path,
        serde_json::to_string_pretty(&scenario).unwrap(),
    )
    .unwrap();

    let peer = bin()
        .args(["hil-peer", "--law", "rst", "--scenario"])
        .arg(&scenario_path)
        .args([
            "--listen",
            &format!("127.0.0.1:{port}"),
            "--idle-timeout-s",
            "30",
        ])
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    std::thread::sleep(std::time::Duration::from_millis(300));

    let csv = dir.join("hil.csv");
    let out = bin()
        .arg("run")
        .arg(&scenario_path)
        .args(["--out"])
        .arg(&csv)
        .env("HILSIM_PORT", port.to_string())
        .output()
        .unwrap();
    let peer_out = peer.wait_with_output().unwrap();
    assert!(
        out.status.success(),
        "run failed:\n{}\npeer stderr:\n{}",
        String::from_utf8_lossy(&out.stderr),
        String::from_utf8_lossy(&peer_out.stderr)
    );
    assert!(peer_out.status.success());
    let peer_log = String::from_utf8_lossy(&peer_out.stderr);
    assert!(peer_log.contains("bye=true"), "{peer_log}");

    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["steps_total"], 66);
    assert_eq!(
        report["overruns"], 0,
        "no round trip may time out on localhost"
    );
    let rows = parse_csv(&csv);
    assert_eq!(rows.len(), 1 + 66);
    // the controller really acted: control codes move off zero
    assert!(rows[1..].iter().any(|r| r[5] != "0"));
}

#[test]
fn echo_peer_works_without_scenario() {
    let port = {
        let probe = UdpSocket::bind("127.0.0.1:0").unwrap();
        probe.local_addr().unwrap().port()
    };
    let mut peer = bin()
        .args([
            "hil-peer",
            "--law",
            "echo",
            "--listen",
            &format!("127.0.0.1:{port}"),
            "--idle-timeout-s",
            "10",
        ])
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    std::thread::sleep(std::time::Duration::from_millis(300));

    // speak the protocol directly: SENSOR code must echo back as ACTUATOR
    let sock = UdpSocket::bind("127.0.0.1:0").unwrap();
    sock.connect(("127.0.0.1", port)).unwrap();
    sock.set_read_timeout(Some(std::time::Duration::from_secs(5)))
        .unwrap();
    sock.send(&[0x48, 0x4C, 0x01, 0x01, 0, 0, 0, 1, 0x01, 77])
        .unwrap();
    let mut buf = [0u8; 64];
    let n = sock.recv(&mut buf).unwrap();
    assert_eq!(&buf[..n], &[0x48, 0x4C, 0x01, 0x02, 0, 0, 0, 1, 0x00, 77]);
    // end the session
    sock.send(&[0x48, 0x4C, 0x01, 0x04, 0, 0, 0, 2, 0x00, 0])
        .unwrap();
    let status = peer.wait().unwrap();
    assert!(status.success());
}
