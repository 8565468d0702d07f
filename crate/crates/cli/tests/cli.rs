use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_upqkd"))
}

fn preset(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("presets").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("failed to start upqkd")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Parses CSV text into (header, rows).
fn csv(text: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (header, rows)
}

fn column(header: &[String], rows: &[Vec<String>], name: &str) -> Vec<f64> {
    let i = header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"));
    rows.iter().map(|r| r[i].parse().unwrap()).collect()
}

fn write_cfg(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn analyze_table2_preset() {
    let o = run(&["analyze", "--config", preset("table2.cfg").to_str().unwrap(), "--format", "csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (h, rows) = csv(&stdout(&o));
    assert_eq!(h.join(","), upqkd_cli::commands::ANALYZE_HEADER.join(","));
    let names: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(names, ["bb84-25", "sarg-25", "bb84-50", "sarg-50"]);

    let qber = column(&h, &rows, "qber_th");
    for (q, reference) in qber.iter().zip([0.0156, 0.0162, 0.0921, 0.0411]) {
        assert!((q - reference).abs() <= 0.005, "{q} vs {reference}");
    }
    let s = column(&h, &rows, "secure_rate_bps");
    for (got, frozen) in s.iter().zip([130_512.0, 138_556.0, 2_570.28, 19_182.6]) {
        assert!((got / frozen - 1.0).abs() < 1e-5, "{got} vs {frozen}");
    }
}

#[test]
fn analyze_text_format_is_aligned() {
    let o = run(&["analyze", "--config", preset("table2-literal.cfg").to_str().unwrap()]);
    assert!(o.status.success());
    let out = stdout(&o);
    let widths: Vec<usize> = out.lines().map(str::len).collect();
    assert_eq!(widths.len(), 5);
    assert!(widths.iter().all(|&w| w == widths[0]));
}

#[test]
fn empty_scenario_list_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "empty.cfg", "# defaults only\nlink.visibility = 99 %\n");
    let o = run(&["analyze", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no scenarios"), "{}", stderr(&o));
}

#[test]
fn bad_values_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "bad.cfg", "scenario.name = x\nlink.visibility = 1.3\n");
    let o = run(&["analyze", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("link.visibility"), "{}", stderr(&o));

    let cfg = write_cfg(dir.path(), "unit.cfg", "scenario.name = x\nchannel.length = 25\n");
    let o = run(&["analyze", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("needs a unit"), "{}", stderr(&o));

    let cfg = write_cfg(dir.path(), "unknown.cfg", "scenario.name = x\nchannel.colour = blue\n");
    let o = run(&["analyze", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown key"));
}

#[test]
fn usage_and_runtime_exit_codes() {
    assert_eq!(run(&["analyze"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    let missing = run(&["analyze", "--config", "/nonexistent/x.cfg"]);
    assert_eq!(missing.status.code(), Some(2));

    let o = run(&[
        "analyze",
        "--config",
        preset("table2.cfg").to_str().unwrap(),
        "--out",
        "/nonexistent-dir/out.csv",
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn simulate_is_reproducible_and_matches_theory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = preset("table2.cfg");
    let mut files = Vec::new();
    for i in 0..2 {
        let out = dir.path().join(format!("run{i}.csv"));
        let o = run(&[
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--scenario",
            "bb84-25",
            "--pulses",
            "1e7",
            "--seed",
            "42",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        files.push(fs::read(&out).unwrap());
    }
    assert_eq!(files[0], files[1]);

    let (h, rows) = csv(std::str::from_utf8(&files[0]).unwrap());
    assert_eq!(h.join(","), upqkd_cli::commands::SIMULATE_HEADER.join(","));
    let q = column(&h, &rows, "qber_emp")[0];
    let q_th = column(&h, &rows, "qber_th")[0];
    let n_sift = column(&h, &rows, "sift_fraction")[0] * column(&h, &rows, "raw_rate_hz")[0] * 1e7 / 1.27e9;
    let sigma = (q_th * (1.0 - q_th) / n_sift).sqrt();
    assert!((q - q_th).abs() <= 3.0 * sigma, "{q} vs {q_th} (sigma {sigma})");
}

#[test]
fn simulate_rejects_zero_pulses() {
    let o = run(&["simulate", "--config", preset("bb84-25.cfg").to_str().unwrap(), "--pulses", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulate_event_stream() {
    let dir = tempfile::tempdir().unwrap();
    let events = dir.path().join("events.csv");
    let o = run(&[
        "simulate",
        "--config",
        preset("hardware.cfg").to_str().unwrap(),
        "--scenario",
        "hw-sarg-25",
        "--pulses",
        "100000",
        "--events",
        events.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&events).unwrap();
    let (h, rows) = csv(&text);
    assert_eq!(h.join(","), upqkd_cli::commands::EVENTS_HEADER.join(","));
    assert!(rows.len() > 100);
    assert!(rows.iter().all(|r| ["signal", "dark", "afterpulse"].contains(&r[3].as_str())));
}

#[test]
fn sweep_matches_analyze_at_50_km() {
    let dir = tempfile::tempdir().unwrap();
    let base = "include = LINK\nchannel.attenuation = 0.2 dB/km\nscenario.name = base\n"
        .replace("LINK", preset("link-common.cfg").to_str().unwrap());
    let cfg = write_cfg(dir.path(), "base.cfg", &base);
    let o = run(&[
        "sweep", "--config", cfg.to_str().unwrap(), "--km-from", "0", "--km-to", "100", "--step", "10",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (h, rows) = csv(&stdout(&o));
    assert_eq!(h.join(","), upqkd_cli::commands::SWEEP_HEADER.join(","));
    assert_eq!(rows.len(), 22);

    for protocol in ["bb84", "sarg"] {
        let row = rows.iter().find(|r| r[0] == protocol && r[1] == "50").unwrap();
        let single = base.clone() + &format!("channel.length = 50 km\nlink.protocol = {protocol}\n");
        let cfg50 = write_cfg(dir.path(), &format!("{protocol}50.cfg"), &single);
        let a = run(&["analyze", "--config", cfg50.to_str().unwrap(), "--format", "csv"]);
        let (ah, arows) = csv(&stdout(&a));
        for (sweep_col, analyze_col) in [
            ("t", "t"),
            ("mu_opt", "mu"),
            ("raw_rate_hz", "raw_rate_hz"),
            ("qber_th", "qber_th"),
            ("secure_rate_bps", "secure_rate_bps"),
        ] {
            let si = h.iter().position(|x| x == sweep_col).unwrap();
            let ai = ah.iter().position(|x| x == analyze_col).unwrap();
            assert_eq!(row[si], arows[0][ai], "{protocol} {sweep_col}");
        }
    }
}

#[test]
fn sweep_clamps_and_decays() {
    let o = run(&["sweep", "--km-from", "0", "--km-to", "200 km", "--step", "20"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (h, rows) = csv(&stdout(&o));
    let t = column(&h, &rows, "t");
    let s = column(&h, &rows, "secure_rate_bps");
    assert!(t[..11].windows(2).all(|w| w[1] < w[0]));
    assert!(s.iter().all(|&x| x >= 0.0));
    assert_eq!(*s[..11].last().unwrap(), 0.0);

    let o = run(&["sweep", "--km-from", "10", "--km-to", "0", "--step", "1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn detector_curve_anchors() {
    let o = run(&["detector-curve", "--pump-from", "0 W", "--pump-to", "400 mW", "--points", "401"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (h, rows) = csv(&stdout(&o));
    assert_eq!(h.join(","), "pump_w,efficiency,noise_hz");
    let eff = column(&h, &rows, "efficiency");
    let noise = column(&h, &rows, "noise_hz");
    assert_eq!((eff[0], noise[0]), (0.0, 150.0));
    let peak = eff.iter().cloned().fold(0.0, f64::max);
    assert!((0.05..=0.07).contains(&peak), "{peak}");
    let ipeak = eff.iter().position(|&e| e == peak).unwrap();
    assert!(ipeak > 0 && ipeak < eff.len() - 1 && eff[eff.len() - 1] < peak);
    let near = (0..ipeak)
        .min_by(|&a, &b| (eff[a] - 0.02).abs().total_cmp(&(eff[b] - 0.02).abs()))
        .unwrap();
    assert!(noise[near] < 20e3, "{}", noise[near]);
    assert!(noise.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn histogram_both_polarizations() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("h.csv");
    let o = run(&[
        "histogram",
        "--config",
        preset("fig4.cfg").to_str().unwrap(),
        "--scenario",
        "fig4-25km",
        "--pulses",
        "5e5",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (h, rows) = csv(&fs::read_to_string(&out).unwrap());
    assert_eq!(h.join(","), "time_ps,controlled,uncontrolled");
    // one clock period of 5 ps bins
    assert_eq!(rows.len(), 158);
    let time = column(&h, &rows, "time_ps");
    let area = |name: &str, lo: f64, hi: f64| -> f64 {
        column(&h, &rows, name)
            .iter()
            .zip(&time)
            .filter(|(_, &t)| t >= lo && t < hi)
            .map(|(c, _)| c)
            .sum()
    };
    let main_c = area("controlled", -150.0, 150.0);
    let side_c = area("controlled", -400.0, -150.0) + area("controlled", 150.0, 400.0);
    assert!(side_c < 0.01 * main_c);
    let main_u = area("uncontrolled", -150.0, 150.0);
    let left_u = area("uncontrolled", -450.0, -150.0);
    let ratio = main_u / main_c;
    assert!((ratio - 0.5).abs() < 0.05, "{ratio}");
    assert!((2.0 * left_u / main_u - 1.0).abs() < 0.1);
}

#[test]
fn per_scenario_output_paths() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        dir.path(),
        "out.cfg",
        "sim.pulses = 200000\n\
         scenario.name = a\n\
         channel.length = 25 km\n\
         output.csv = a.csv\n\
         output.events = a-events.csv\n\
         scenario.name = b\n\
         channel.length = 50 km\n",
    );
    let o = run(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    // stdout still carries both rows
    assert_eq!(csv(&stdout(&o)).1.len(), 2);
    let (_, rows) = csv(&fs::read_to_string(dir.path().join("a.csv")).unwrap());
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][0], "a");
    let (h, ev) = csv(&fs::read_to_string(dir.path().join("a-events.csv")).unwrap());
    assert_eq!(h.join(","), upqkd_cli::commands::EVENTS_HEADER.join(","));
    assert!(!ev.is_empty() && ev.iter().all(|r| r[0] == "a"));
}
