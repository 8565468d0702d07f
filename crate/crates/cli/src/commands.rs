//! Subcommand bodies. Each returns the rows it would print so they can be
//! checked without spawning a process.
//!
//! CSV headers are fixed per command:
//!
//! | command | columns |
//! |---|---|
//! | analyze | `scenario,protocol,receiver,km,t,mu,mu_opt,p_phot,q_det,qber_th,qber,p_sift,i_eve,raw_rate_hz,secure_rate_bps` |
//! | simulate | `scenario,protocol,receiver,km,mu,pulses,seed,raw_rate_hz,qber_emp,qber_emp_sigma,qber_th,sift_fraction,p_sift,secure_rate_bps` |
//! | simulate events | `scenario,slot,detector,origin,timestamp_ps,in_gate` |
//! | sweep | `protocol,km,t,mu_opt,raw_rate_hz,qber_th,secure_rate_bps` |
//! | detector-curve | `pump_w,efficiency,noise_hz` |
//! | histogram | `time_ps,controlled,uncontrolled` (one count column unless both are requested) |

use std::io::Write;

use upqkd::keyrate::{self, RawRate};
use upqkd::protocol::{Origin, Protocol, Receiver};
use upqkd::simulator::{self, Histogram, SimResult};
use upqkd::updetector::UpconversionDetector;

use crate::config::Scenario;
use crate::table::{num, Table};
use crate::CliError;

pub const ANALYZE_HEADER: &[&str] = &[
    "scenario",
    "protocol",
    "receiver",
    "km",
    "t",
    "mu",
    "mu_opt",
    "p_phot",
    "q_det",
    "qber_th",
    "qber",
    "p_sift",
    "i_eve",
    "raw_rate_hz",
    "secure_rate_bps",
];

pub const SIMULATE_HEADER: &[&str] = &[
    "scenario",
    "protocol",
    "receiver",
    "km",
    "mu",
    "pulses",
    "seed",
    "raw_rate_hz",
    "qber_emp",
    "qber_emp_sigma",
    "qber_th",
    "sift_fraction",
    "p_sift",
    "secure_rate_bps",
];

pub const EVENTS_HEADER: &[&str] = &["scenario", "slot", "detector", "origin", "timestamp_ps", "in_gate"];

pub const SWEEP_HEADER: &[&str] = &["protocol", "km", "t", "mu_opt", "raw_rate_hz", "qber_th", "secure_rate_bps"];

pub const CURVE_HEADER: &[&str] = &["pump_w", "efficiency", "noise_hz"];

pub fn protocol_name(p: Protocol) -> &'static str {
    match p {
        Protocol::Bb84 => "bb84",
        Protocol::Sarg => "sarg",
    }
}

pub fn receiver_name(r: Receiver) -> &'static str {
    match r {
        Receiver::TwoDetector => "two",
        Receiver::FourDetector => "four",
    }
}

fn warn(scenario: &Scenario, warnings: &mut Vec<String>) {
    if let Some(w) = scenario.sim.timing_warning() {
        warnings.push(format!("{}: {w}", scenario.name));
    }
    if let Ok(params) = scenario.rate_params() {
        for w in keyrate::approximation_warnings(&params) {
            warnings.push(format!("{}: {w}", scenario.name));
        }
    }
}

/// Closed-form link report per scenario. A measured rate in the scenario
/// replaces the modeled one, and a measured QBER the theory value.
pub fn analyze(scenarios: &[Scenario], warnings: &mut Vec<String>) -> Result<Table, CliError> {
    let mut table = Table::new(ANALYZE_HEADER);
    for sc in scenarios {
        warn(sc, warnings);
        let params = sc.rate_params()?;
        let raw = match sc.measured_rate_hz {
            Some(rate_hz) => RawRate::Measured {
                rate_hz,
                qber: sc.measured_qber,
            },
            None => RawRate::Modeled,
        };
        let r = keyrate::analyze(&params, raw)?;
        table.push(vec![
            sc.name.clone(),
            protocol_name(r.protocol).into(),
            receiver_name(r.receiver).into(),
            num(sc.length_km()),
            num(r.t),
            num(r.mu),
            num(keyrate::optimal_mu(r.protocol, r.t)?),
            num(r.p_phot),
            num(r.q_det),
            num(r.qber_theory),
            num(r.qber),
            num(r.p_sift),
            num(r.i_eve),
            num(r.raw_rate),
            num(r.secure_rate),
        ]);
    }
    Ok(table)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SimOverrides {
    pub pulses: Option<u64>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub record_events: bool,
}

impl SimOverrides {
    fn apply(&self, sc: &Scenario) -> Result<Scenario, CliError> {
        let mut sc = sc.clone();
        if let Some(p) = self.pulses {
            if p == 0 {
                return Err(CliError::Usage("--pulses must be > 0".into()));
            }
            sc.sim.n_pulses = p;
        }
        if let Some(s) = self.seed {
            sc.sim.seed = s;
        }
        if let Some(w) = self.workers {
            sc.sim.workers = Some(w);
        }
        sc.sim.record_events = self.record_events;
        sc.sim.validate()?;
        Ok(sc)
    }
}

/// Monte Carlo summary per scenario, plus the event stream when requested.
pub fn simulate(
    scenarios: &[Scenario],
    overrides: SimOverrides,
    warnings: &mut Vec<String>,
) -> Result<(Table, Option<Table>), CliError> {
    // validate everything before spending time on the first run
    let scenarios: Vec<Scenario> = scenarios.iter().map(|s| overrides.apply(s)).collect::<Result<_, _>>()?;
    let mut summary = Table::new(SIMULATE_HEADER);
    let mut events = overrides.record_events.then(|| Table::new(EVENTS_HEADER));
    for sc in &scenarios {
        warn(sc, warnings);
        let params = sc.rate_params()?;
        let result = simulator::run(&sc.sim)?;
        summary.push(summary_row(sc, &params, &result));
        if let Some(ev) = events.as_mut() {
            for e in &result.events {
                ev.push(vec![
                    sc.name.clone(),
                    e.slot_index.to_string(),
                    e.detector.index().to_string(),
                    origin_name(e.origin).into(),
                    num(e.timestamp_ps),
                    e.in_gate.to_string(),
                ]);
            }
        }
    }
    Ok((summary, events))
}

fn origin_name(o: Origin) -> &'static str {
    match o {
        Origin::Signal => "signal",
        Origin::Dark => "dark",
        Origin::Afterpulse => "afterpulse",
    }
}

fn summary_row(sc: &Scenario, params: &keyrate::RateParams, r: &SimResult) -> Vec<String> {
    let q_th = keyrate::qber_theory(params);
    let ie = keyrate::i_eve(params.protocol, params.mu, params.t, params.i1);
    let s = keyrate::secure_rate(r.raw_rate_hz(), r.qber(), ie, r.sift_fraction());
    vec![
        sc.name.clone(),
        protocol_name(params.protocol).into(),
        receiver_name(params.receiver).into(),
        num(sc.length_km()),
        num(params.mu),
        r.n_pulses.to_string(),
        sc.sim.seed.to_string(),
        num(r.raw_rate_hz()),
        num(r.qber()),
        num(r.qber_sigma(r.qber())),
        num(q_th),
        num(r.sift_fraction()),
        num(keyrate::p_sift(params)),
        num(s),
    ]
}

/// Distances `from, from + step, ..` up to `to`, inclusive within rounding.
pub fn distance_grid(from: f64, to: f64, step: f64) -> Result<Vec<f64>, CliError> {
    if !(from >= 0.0 && to >= from && step > 0.0) {
        return Err(CliError::Usage(format!(
            "need 0 <= km-from <= km-to and step > 0 (got {from}, {to}, {step})"
        )));
    }
    let n = ((to - from) / step + 1e-9).floor() as usize;
    if n > 1_000_000 {
        return Err(CliError::Usage("sweep has more than a million points".into()));
    }
    Ok((0..=n).map(|i| from + i as f64 * step).collect())
}

/// Both protocols at their optimal mean photon number along the base
/// scenario's fiber, everything else held fixed.
pub fn sweep(base: &Scenario, kms: &[f64]) -> Result<Table, CliError> {
    let mut table = Table::new(SWEEP_HEADER);
    for protocol in [Protocol::Bb84, Protocol::Sarg] {
        for &km in kms {
            let mut sc = base.clone();
            sc.sim.protocol = protocol;
            sc.sim.channel.length_km = km;
            sc.mu_optimal = true;
            let sc = sc.with_optimal_mu();
            let params = sc.rate_params()?;
            let r = keyrate::analyze(&params, RawRate::Modeled)?;
            table.push(vec![
                protocol_name(protocol).into(),
                num(km),
                num(r.t),
                num(r.mu),
                num(r.raw_rate),
                num(r.qber_theory),
                num(r.secure_rate),
            ]);
        }
    }
    Ok(table)
}

/// Efficiency and noise at `points` evenly spaced pump powers.
pub fn detector_curve(det: &UpconversionDetector, from_w: f64, to_w: f64, points: usize) -> Result<Table, CliError> {
    if !(from_w >= 0.0 && to_w > from_w) || points < 2 {
        return Err(CliError::Usage(format!(
            "need 0 <= pump-from < pump-to and at least 2 points (got {from_w} W, {to_w} W, {points})"
        )));
    }
    det.validate()?;
    let mut table = Table::new(CURVE_HEADER);
    for i in 0..points {
        let p = from_w + (to_w - from_w) * i as f64 / (points - 1) as f64;
        table.push(vec![num(p), num(det.overall_efficiency_at(p)), num(det.noise_rate_at(p))]);
    }
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Polarization {
    Controlled,
    Uncontrolled,
    Both,
}

/// Arrival-time histogram(s) of one scenario, folded onto the clock period.
pub fn histogram(
    sc: &Scenario,
    overrides: SimOverrides,
    bin_ps: f64,
    window_ps: Option<f64>,
    polarization: Polarization,
) -> Result<Table, CliError> {
    let sc = overrides.apply(sc)?;
    let period = sc.sim.source.period_ps();
    let window = window_ps.unwrap_or(period);
    let valid = bin_ps > 0.0 && window > 0.0;
    if !valid {
        return Err(CliError::Usage("bin width and window must be > 0".into()));
    }
    let flags: &[(bool, &'static str)] = match polarization {
        Polarization::Controlled => &[(true, "counts")],
        Polarization::Uncontrolled => &[(false, "counts")],
        Polarization::Both => &[(true, "controlled"), (false, "uncontrolled")],
    };
    let mut hists: Vec<Histogram> = Vec::new();
    for &(controlled, _) in flags {
        let mut run = sc.clone();
        run.sim.polarization_controlled = controlled;
        run.sim.record_events = true;
        let r = simulator::run(&run.sim)?;
        hists.push(r.histogram(bin_ps, window)?);
    }
    let mut header = vec!["time_ps"];
    header.extend(flags.iter().map(|(_, name)| *name));
    let mut table = Table::new(&header);
    for i in 0..hists[0].counts.len() {
        let mut row = vec![num(hists[0].bin_center(i))];
        row.extend(hists.iter().map(|h| h.counts[i].to_string()));
        table.push(row);
    }
    Ok(table)
}

/// Writes each scenario's rows to its `output.csv` / `output.events` path,
/// when the config sets one. Rows are matched on the `scenario` column.
pub fn emit_scenario_files(
    scenarios: &[Scenario],
    summary: &Table,
    events: Option<&Table>,
) -> Result<(), CliError> {
    let only = |table: &Table, name: &str| Table {
        header: table.header.clone(),
        rows: table.rows.iter().filter(|r| r[0] == name).cloned().collect(),
    };
    for sc in scenarios {
        if let Some(path) = &sc.output_csv {
            emit(&only(summary, &sc.name), Some(path), crate::table::Format::Csv)?;
        }
        if let (Some(path), Some(ev)) = (&sc.output_events, events) {
            emit(&only(ev, &sc.name), Some(path), crate::table::Format::Csv)?;
        }
    }
    Ok(())
}

/// Writes to the file if given, stdout otherwise.
pub fn emit(table: &Table, path: Option<&std::path::Path>, format: crate::table::Format) -> Result<(), CliError> {
    match path {
        Some(p) => {
            let file = std::fs::File::create(p)
                .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", p.display())))?;
            let mut w = std::io::BufWriter::new(file);
            table.write(&mut w, format)?;
            w.flush()?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            table.write(&mut lock, format)?;
        }
    }
    Ok(())
}
