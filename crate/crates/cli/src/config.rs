//! Scenario files.
//!
//! One `section.key = value` per line, `#` starts a comment. Dimensional
//! values carry their unit (`channel.length = 25 km`, `detector.gate = 350 ps`);
//! fractions take a bare number or a percentage. `include = other.cfg` splices
//! another file in place, resolved relative to the including file.
//!
//! Keys before the first `scenario.name` are defaults for every scenario.
//! Each `scenario.name` starts a new scenario, and the keys after it override
//! the defaults for that scenario only.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use upqkd::keyrate::{optimal_mu, RateParams, SARG_I1};
use upqkd::photonics::{FiberChannel, SourceConfig};
use upqkd::protocol::{Basis, Protocol, QubitState, Receiver};
use upqkd::simulator::{RunMode, SimConfig, DEFAULT_DELAY_PS};
use upqkd::updetector::UpconversionDetector;

const MAX_INCLUDE_DEPTH: usize = 16;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("{location}: {key}: {message}")]
    Key {
        location: String,
        key: String,
        message: String,
    },
    #[error("{location}: {message}")]
    Syntax { location: String, message: String },
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("scenario {scenario}: {message}")]
    Invalid { scenario: String, message: String },
    #[error("no scenarios")]
    NoScenarios,
}

#[derive(Debug, Clone)]
struct Entry {
    key: String,
    value: String,
    location: String,
    dir: PathBuf,
}

impl Entry {
    fn err(&self, message: impl Into<String>) -> ConfigError {
        ConfigError::Key {
            location: self.location.clone(),
            key: self.key.clone(),
            message: message.into(),
        }
    }
}

/// A fully resolved scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub sim: SimConfig,
    pub q_disp: f64,
    pub i1: f64,
    /// `source.mu = optimal`: recomputed from `t` whenever the channel changes.
    pub mu_optimal: bool,
    pub measured_rate_hz: Option<f64>,
    pub measured_qber: Option<f64>,
    pub output_csv: Option<PathBuf>,
    pub output_events: Option<PathBuf>,
}

impl Default for Scenario {
    fn default() -> Self {
        let mut sim = SimConfig::new(
            SourceConfig::default(),
            FiberChannel::new(0.0, 0.2),
            UpconversionDetector::table2_calibrated(),
            Protocol::Bb84,
        );
        sim.mode = RunMode::Random;
        Self {
            name: "default".into(),
            sim,
            q_disp: 0.0,
            i1: SARG_I1,
            mu_optimal: true,
            measured_rate_hz: None,
            measured_qber: None,
            output_csv: None,
            output_events: None,
        }
        .with_optimal_mu()
    }
}

impl Scenario {
    pub fn length_km(&self) -> f64 {
        self.sim.channel.length_km
    }

    pub fn transmission(&self) -> f64 {
        self.sim.channel.transmission()
    }

    /// Re-applies `source.mu = optimal` after a channel or protocol change.
    pub fn with_optimal_mu(mut self) -> Self {
        if self.mu_optimal {
            if let Ok(mu) = optimal_mu(self.sim.protocol, self.transmission()) {
                self.sim.source.mu = mu;
            }
        }
        self
    }

    pub fn rate_params(&self) -> upqkd::Result<RateParams> {
        let mut p = self.sim.rate_params()?;
        p.q_disp = self.q_disp;
        p.i1 = self.i1;
        p.validate()?;
        Ok(p)
    }
}

/// Loads every scenario of a config file. An empty list is an error.
pub fn load(path: &Path) -> Result<Vec<Scenario>, ConfigError> {
    let scenarios = load_allow_empty(path)?;
    if scenarios.is_empty() {
        return Err(ConfigError::NoScenarios);
    }
    Ok(scenarios)
}

pub fn load_allow_empty(path: &Path) -> Result<Vec<Scenario>, ConfigError> {
    let mut entries = Vec::new();
    read_entries(path, &mut Vec::new(), &mut entries)?;
    build(&entries)
}

/// Parses config text held in memory; includes resolve against `dir`.
pub fn parse_str(text: &str, origin: &str, dir: &Path) -> Result<Vec<Scenario>, ConfigError> {
    let mut entries = Vec::new();
    parse_lines(text, origin, dir, &mut Vec::new(), &mut entries)?;
    build(&entries)
}

fn read_entries(path: &Path, stack: &mut Vec<PathBuf>, out: &mut Vec<Entry>) -> Result<(), ConfigError> {
    let io = |e: std::io::Error| ConfigError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let canonical = fs::canonicalize(path).map_err(io)?;
    if stack.contains(&canonical) {
        return Err(ConfigError::Io {
            path: path.display().to_string(),
            message: "include cycle".into(),
        });
    }
    if stack.len() >= MAX_INCLUDE_DEPTH {
        return Err(ConfigError::Io {
            path: path.display().to_string(),
            message: "includes nested too deeply".into(),
        });
    }
    let text = fs::read_to_string(path).map_err(io)?;
    let dir = canonical.parent().map(Path::to_path_buf).unwrap_or_default();
    stack.push(canonical);
    parse_lines(&text, &path.display().to_string(), &dir, stack, out)?;
    stack.pop();
    Ok(())
}

fn parse_lines(
    text: &str,
    origin: &str,
    dir: &Path,
    stack: &mut Vec<PathBuf>,
    out: &mut Vec<Entry>,
) -> Result<(), ConfigError> {
    for (i, raw) in text.lines().enumerate() {
        let location = format!("{origin}:{}", i + 1);
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError::Syntax {
                location,
                message: format!("expected `key = value`, got `{line}`"),
            });
        };
        let (key, value) = (key.trim(), value.trim());
        if value.is_empty() {
            return Err(ConfigError::Key {
                location,
                key: key.into(),
                message: "missing value".into(),
            });
        }
        if key == "include" {
            read_entries(&dir.join(value), stack, out)?;
            continue;
        }
        out.push(Entry {
            key: key.into(),
            value: value.into(),
            location,
            dir: dir.to_path_buf(),
        });
    }
    Ok(())
}

fn build(entries: &[Entry]) -> Result<Vec<Scenario>, ConfigError> {
    let mut globals: Vec<&Entry> = Vec::new();
    let mut groups: Vec<(&Entry, Vec<&Entry>)> = Vec::new();
    for e in entries {
        if e.key == "scenario.name" {
            if groups.iter().any(|(n, _)| n.value == e.value) {
                return Err(e.err(format!("duplicate scenario `{}`", e.value)));
            }
            groups.push((e, Vec::new()));
        } else if let Some((_, keys)) = groups.last_mut() {
            keys.push(e);
        } else {
            globals.push(e);
        }
    }

    let global_map = unique(&globals)?;
    let mut scenarios = Vec::with_capacity(groups.len());
    for (name, keys) in groups {
        let mut merged = global_map.clone();
        merged.extend(unique(&keys)?);
        let mut b = Builder::default();
        for e in merged.values() {
            b.set(e)?;
        }
        let sc = b.finish(&name.value).map_err(|message| ConfigError::Invalid {
            scenario: name.value.clone(),
            message,
        })?;
        scenarios.push(sc);
    }
    Ok(scenarios)
}

fn unique<'a>(entries: &[&'a Entry]) -> Result<HashMap<String, &'a Entry>, ConfigError> {
    let mut map = HashMap::new();
    for e in entries {
        if let Some(prev) = map.insert(e.key.clone(), *e) {
            return Err(e.err(format!("duplicate key (first set at {})", prev.location)));
        }
    }
    Ok(map)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unit {
    /// Bare number or percentage.
    Fraction,
    /// Bare number.
    Number,
    /// Non-negative integer, scientific notation allowed.
    Count,
    Picoseconds,
    Kilometers,
    Centimeters,
    Nanometers,
    Picometers,
    Hertz,
    Watts,
    Decibels,
    DecibelsPerKm,
    PsPerNmKm,
    HertzPerWatt,
    HertzPerWatt2,
    PerWattCm2,
}

impl Unit {
    fn scales(self) -> &'static [(&'static str, f64)] {
        match self {
            Unit::Fraction => &[("", 1.0), ("%", 0.01)],
            Unit::Number | Unit::Count => &[("", 1.0)],
            Unit::Picoseconds => &[("fs", 1e-3), ("ps", 1.0), ("ns", 1e3), ("us", 1e6), ("µs", 1e6)],
            Unit::Kilometers => &[("m", 1e-3), ("km", 1.0)],
            Unit::Centimeters => &[("mm", 0.1), ("cm", 1.0), ("m", 100.0)],
            Unit::Nanometers => &[("pm", 1e-3), ("nm", 1.0), ("um", 1e3), ("µm", 1e3)],
            Unit::Picometers => &[("pm", 1.0), ("nm", 1e3)],
            Unit::Hertz => &[("Hz", 1.0), ("kHz", 1e3), ("MHz", 1e6), ("GHz", 1e9)],
            Unit::Watts => &[("uW", 1e-6), ("µW", 1e-6), ("mW", 1e-3), ("W", 1.0)],
            Unit::Decibels => &[("dB", 1.0)],
            Unit::DecibelsPerKm => &[("dB/km", 1.0)],
            Unit::PsPerNmKm => &[("ps/nm/km", 1.0), ("ps/(nm km)", 1.0)],
            Unit::HertzPerWatt => &[("Hz/W", 1.0), ("kHz/W", 1e3)],
            Unit::HertzPerWatt2 => &[("Hz/W2", 1.0), ("Hz/W^2", 1.0), ("kHz/W2", 1e3), ("kHz/W^2", 1e3)],
            Unit::PerWattCm2 => &[("/W/cm2", 1.0), ("/W/cm^2", 1.0)],
        }
    }
}

/// Parses `"25 km"`, `"25km"`, `"99 %"` or `"1e7"` into the unit's base scale.
pub fn parse_quantity(raw: &str, unit: Unit) -> Result<f64, String> {
    let raw = raw.trim();
    let split = (1..=raw.len())
        .rev()
        .filter(|&i| raw.is_char_boundary(i))
        .find(|&i| raw[..i].parse::<f64>().is_ok())
        .ok_or_else(|| format!("`{raw}` does not start with a number"))?;
    let number: f64 = raw[..split].parse().unwrap_or(f64::NAN);
    if !number.is_finite() {
        return Err(format!("`{raw}` is not finite"));
    }
    let suffix = raw[split..].trim();
    let scales = unit.scales();
    let Some(&(_, scale)) = scales.iter().find(|(s, _)| *s == suffix) else {
        let accepted: Vec<&str> = scales.iter().map(|(s, _)| *s).filter(|s| !s.is_empty()).collect();
        return Err(if suffix.is_empty() {
            format!("`{raw}` needs a unit ({})", accepted.join(", "))
        } else if accepted.is_empty() {
            format!("`{raw}` takes no unit")
        } else {
            format!("unknown unit `{suffix}` (expected {})", accepted.join(", "))
        });
    };
    let value = number * scale;
    if unit == Unit::Count && (value < 0.0 || value.fract() != 0.0 || value > u64::MAX as f64) {
        return Err(format!("`{raw}` is not a non-negative integer"));
    }
    Ok(value)
}

fn in_range(v: f64, lo: f64, hi: f64) -> Result<f64, String> {
    if v >= lo && v <= hi {
        Ok(v)
    } else {
        Err(format!("{v} is outside [{lo}, {hi}]"))
    }
}

fn positive(v: f64) -> Result<f64, String> {
    if v > 0.0 {
        Ok(v)
    } else {
        Err(format!("{v} must be > 0"))
    }
}

fn non_negative(v: f64) -> Result<f64, String> {
    if v >= 0.0 {
        Ok(v)
    } else {
        Err(format!("{v} must be >= 0"))
    }
}

pub fn parse_protocol(s: &str) -> Result<Protocol, String> {
    match s.to_ascii_lowercase().as_str() {
        "bb84" => Ok(Protocol::Bb84),
        "sarg" | "sarg04" => Ok(Protocol::Sarg),
        _ => Err(format!("unknown protocol `{s}` (bb84, sarg)")),
    }
}

pub fn parse_preset(s: &str) -> Result<UpconversionDetector, String> {
    match s {
        "hardware" => Ok(UpconversionDetector::hardware()),
        "table2" => Ok(UpconversionDetector::table2_calibrated()),
        "table2-literal" => Ok(UpconversionDetector::table2_literal()),
        _ => Err(format!("unknown preset `{s}` (hardware, table2, table2-literal)")),
    }
}

fn parse_mode(s: &str) -> Result<RunMode, String> {
    if s == "random" {
        return Ok(RunMode::Random);
    }
    let state = s
        .strip_prefix("fixed:")
        .ok_or_else(|| format!("unknown mode `{s}` (random, fixed:Z0, fixed:Z1, fixed:X0, fixed:X1)"))?;
    let basis = match state.get(..1) {
        Some("Z") => Basis::Z,
        Some("X") => Basis::X,
        _ => return Err(format!("unknown state `{state}`")),
    };
    let bit = match state.get(1..) {
        Some("0") => 0,
        Some("1") => 1,
        _ => return Err(format!("unknown state `{state}`")),
    };
    Ok(RunMode::FixedState(QubitState::new(basis, bit)))
}

/// Raw per-key values, applied in a fixed order by [`Builder::finish`].
#[derive(Default)]
struct Builder {
    rep_rate_hz: Option<f64>,
    mu: Option<Option<f64>>,
    wavelength_nm: Option<f64>,
    spectral_width_pm: Option<f64>,
    pulse_width_ps: Option<f64>,

    length_km: Option<f64>,
    attenuation: Option<f64>,
    transmission: Option<f64>,
    dispersion: Option<f64>,
    excess_loss_db: Option<f64>,

    preset: Option<UpconversionDetector>,
    effective_efficiency: Option<f64>,
    dark_prob: Option<f64>,
    eta_norm: Option<f64>,
    waveguide_cm: Option<f64>,
    pump_w: Option<f64>,
    fixed_loss: Option<f64>,
    spad_efficiency: Option<f64>,
    jitter_ps: Option<f64>,
    intrinsic_hz: Option<f64>,
    noise_linear: Option<f64>,
    noise_quadratic: Option<f64>,
    afterpulse: Option<f64>,
    gate_ps: Option<f64>,
    operating_efficiency: Option<f64>,

    protocol: Option<Protocol>,
    receiver: Option<Receiver>,
    visibility: Option<f64>,
    q_disp: Option<f64>,
    i1: Option<f64>,
    measured_rate: Option<f64>,
    measured_qber: Option<f64>,

    pulses: Option<u64>,
    seed: Option<u64>,
    polarization_controlled: Option<bool>,
    delay_ps: Option<f64>,
    mode: Option<RunMode>,
    workers: Option<usize>,

    output_csv: Option<PathBuf>,
    output_events: Option<PathBuf>,
}

impl Builder {
    fn set(&mut self, e: &Entry) -> Result<(), ConfigError> {
        let v = e.value.as_str();
        let q = |unit| parse_quantity(v, unit).map_err(|m| e.err(m));
        let checked = |r: Result<f64, String>| r.map_err(|m| e.err(m));
        match e.key.as_str() {
            "source.rep_rate" => self.rep_rate_hz = Some(checked(positive(q(Unit::Hertz)?))?),
            "source.mu" => {
                self.mu = Some(if v == "optimal" {
                    None
                } else {
                    Some(checked(non_negative(q(Unit::Number)?))?)
                })
            }
            "source.wavelength" => self.wavelength_nm = Some(checked(positive(q(Unit::Nanometers)?))?),
            "source.spectral_width" => {
                self.spectral_width_pm = Some(checked(positive(q(Unit::Picometers)?))?)
            }
            "source.pulse_width" => self.pulse_width_ps = Some(checked(positive(q(Unit::Picoseconds)?))?),

            "channel.length" => self.length_km = Some(checked(non_negative(q(Unit::Kilometers)?))?),
            "channel.attenuation" => {
                self.attenuation = Some(checked(non_negative(q(Unit::DecibelsPerKm)?))?)
            }
            "channel.transmission" => {
                let t = q(Unit::Fraction)?;
                if !(t > 0.0 && t <= 1.0) {
                    return Err(e.err(format!("{t} is outside (0, 1]")));
                }
                self.transmission = Some(t)
            }
            "channel.dispersion" => self.dispersion = Some(q(Unit::PsPerNmKm)?),
            "channel.excess_loss" => self.excess_loss_db = Some(checked(non_negative(q(Unit::Decibels)?))?),

            "detector.preset" => self.preset = Some(parse_preset(v).map_err(|m| e.err(m))?),
            "detector.effective_efficiency" => {
                let x = checked(in_range(q(Unit::Fraction)?, 0.0, 1.0))?;
                self.effective_efficiency = Some(checked(positive(x))?)
            }
            "detector.dark_prob" => self.dark_prob = Some(checked(in_range(q(Unit::Fraction)?, 0.0, 0.1))?),
            "detector.eta_norm" => self.eta_norm = Some(checked(non_negative(q(Unit::PerWattCm2)?))?),
            "detector.waveguide_length" => {
                self.waveguide_cm = Some(checked(non_negative(q(Unit::Centimeters)?))?)
            }
            "detector.pump_power" => self.pump_w = Some(checked(non_negative(q(Unit::Watts)?))?),
            "detector.fixed_loss" => self.fixed_loss = Some(checked(in_range(q(Unit::Fraction)?, 0.0, 1.0))?),
            "detector.spad_efficiency" => {
                self.spad_efficiency = Some(checked(in_range(q(Unit::Fraction)?, 0.0, 1.0))?)
            }
            "detector.jitter" => self.jitter_ps = Some(checked(non_negative(q(Unit::Picoseconds)?))?),
            "detector.intrinsic_dark_rate" => {
                self.intrinsic_hz = Some(checked(non_negative(q(Unit::Hertz)?))?)
            }
            "detector.noise_linear" => {
                self.noise_linear = Some(checked(non_negative(q(Unit::HertzPerWatt)?))?)
            }
            "detector.noise_quadratic" => {
                self.noise_quadratic = Some(checked(non_negative(q(Unit::HertzPerWatt2)?))?)
            }
            "detector.afterpulse" => self.afterpulse = Some(checked(in_range(q(Unit::Fraction)?, 0.0, 1.0))?),
            "detector.gate" => self.gate_ps = Some(checked(positive(q(Unit::Picoseconds)?))?),
            "detector.operating_efficiency" => {
                let x = checked(in_range(q(Unit::Fraction)?, 0.0, 1.0))?;
                self.operating_efficiency = Some(checked(positive(x))?)
            }

            "link.protocol" => self.protocol = Some(parse_protocol(v).map_err(|m| e.err(m))?),
            "link.receiver" => {
                self.receiver = Some(match v {
                    "two" | "two-detector" => Receiver::TwoDetector,
                    "four" | "four-detector" => Receiver::FourDetector,
                    _ => return Err(e.err(format!("unknown receiver `{v}` (two, four)"))),
                })
            }
            "link.visibility" => self.visibility = Some(checked(in_range(q(Unit::Fraction)?, 0.0, 1.0))?),
            "link.q_disp" => self.q_disp = Some(checked(in_range(q(Unit::Fraction)?, 0.0, 0.5))?),
            "link.i1" => self.i1 = Some(checked(in_range(q(Unit::Fraction)?, 0.0, 1.0))?),
            "link.measured_rate" => self.measured_rate = Some(checked(non_negative(q(Unit::Hertz)?))?),
            "link.measured_qber" => {
                self.measured_qber = Some(checked(in_range(q(Unit::Fraction)?, 0.0, 0.5))?)
            }

            "sim.pulses" => self.pulses = Some(checked(positive(q(Unit::Count)?))? as u64),
            "sim.seed" => {
                self.seed = Some(v.parse::<u64>().map_err(|_| e.err(format!("`{v}` is not a 64-bit seed")))?)
            }
            "sim.polarization" => {
                self.polarization_controlled = Some(match v {
                    "controlled" => true,
                    "uncontrolled" => false,
                    _ => return Err(e.err(format!("unknown polarization `{v}` (controlled, uncontrolled)"))),
                })
            }
            "sim.interferometer_delay" => self.delay_ps = Some(checked(positive(q(Unit::Picoseconds)?))?),
            "sim.mode" => self.mode = Some(parse_mode(v).map_err(|m| e.err(m))?),
            "sim.workers" => self.workers = Some(checked(positive(q(Unit::Count)?))? as usize),

            "output.csv" => self.output_csv = Some(e.dir.join(v)),
            "output.events" => self.output_events = Some(e.dir.join(v)),

            _ => return Err(e.err("unknown key")),
        }
        Ok(())
    }

    fn finish(self, name: &str) -> Result<Scenario, String> {
        let mut sc = Scenario {
            name: name.to_string(),
            ..Scenario::default()
        };
        let sim = &mut sc.sim;

        let src = &mut sim.source;
        if let Some(v) = self.rep_rate_hz {
            src.rep_rate_hz = v;
        }
        if let Some(v) = self.wavelength_nm {
            src.wavelength_nm = v;
        }
        if let Some(v) = self.spectral_width_pm {
            src.spectral_width_pm = v;
        }
        if let Some(v) = self.pulse_width_ps {
            src.pulse_width_ps = v;
        }

        let length = self.length_km.unwrap_or(0.0);
        let mut channel = match self.transmission {
            Some(t) => {
                if self.attenuation.is_some() || self.excess_loss_db.is_some() {
                    return Err("channel.transmission cannot be combined with attenuation or excess_loss".into());
                }
                FiberChannel::with_transmission(length, t)
            }
            None => FiberChannel {
                length_km: length,
                attenuation_db_per_km: self.attenuation.unwrap_or(0.2),
                excess_loss_db: self.excess_loss_db.unwrap_or(0.0),
                ..FiberChannel::default()
            },
        };
        if let Some(d) = self.dispersion {
            channel.dispersion_ps_per_nm_km = d;
        }
        sim.channel = channel;

        let mut det = self.preset.unwrap_or_else(UpconversionDetector::table2_calibrated);
        if self.effective_efficiency.is_some() || self.dark_prob.is_some() {
            let eta = self.effective_efficiency.unwrap_or_else(|| det.overall_efficiency());
            let gate = self.gate_ps.unwrap_or(det.gate_width_ps);
            let p_dark = match self.dark_prob {
                Some(p) => p,
                None => det.dark_prob_for_gate(gate).map_err(|e| e.to_string())?,
            };
            det = UpconversionDetector::effective(eta, p_dark, gate);
            if det.noise_quad_hz_per_w2 < 0.0 || det.fixed_loss > 1.0 {
                return Err(format!(
                    "detector.effective_efficiency {eta} with detector.dark_prob {p_dark} is not reachable from the hardware model"
                ));
            }
        }
        let overrides = [
            (self.eta_norm, &mut det.eta_norm),
            (self.waveguide_cm, &mut det.waveguide_length_cm),
            (self.pump_w, &mut det.pump_power_w),
            (self.fixed_loss, &mut det.fixed_loss),
            (self.spad_efficiency, &mut det.spad_efficiency),
            (self.jitter_ps, &mut det.jitter_fwhm_ps),
            (self.intrinsic_hz, &mut det.intrinsic_dark_rate_hz),
            (self.noise_linear, &mut det.noise_lin_hz_per_w),
            (self.noise_quadratic, &mut det.noise_quad_hz_per_w2),
            (self.afterpulse, &mut det.afterpulse_prob),
            (self.gate_ps, &mut det.gate_width_ps),
        ];
        for (value, field) in overrides {
            if let Some(v) = value {
                *field = v;
            }
        }
        if let Some(target) = self.operating_efficiency {
            if self.pump_w.is_some() {
                return Err("detector.operating_efficiency and detector.pump_power are exclusive".into());
            }
            det.pump_power_w = det.operating_point(target).map_err(|e| e.to_string())?;
        }
        sim.detector = det;

        if let Some(p) = self.protocol {
            sim.protocol = p;
        }
        if let Some(r) = self.receiver {
            sim.receiver = r;
        }
        if let Some(v) = self.visibility {
            sim.visibility = v;
        }
        if let Some(n) = self.pulses {
            sim.n_pulses = n;
        }
        if let Some(s) = self.seed {
            sim.seed = s;
        }
        if let Some(c) = self.polarization_controlled {
            sim.polarization_controlled = c;
        }
        sim.interferometer_delay_ps = self.delay_ps.unwrap_or(DEFAULT_DELAY_PS);
        if let Some(m) = self.mode {
            if let RunMode::FixedState(_) = m {
                if sim.receiver == Receiver::FourDetector {
                    return Err("fixed-state runs use the two-detector receiver".into());
                }
            }
            sim.mode = m;
        }
        sim.workers = self.workers;

        sc.q_disp = self.q_disp.unwrap_or(0.0);
        sc.i1 = self.i1.unwrap_or(SARG_I1);
        sc.measured_rate_hz = self.measured_rate;
        sc.measured_qber = self.measured_qber;
        sc.output_csv = self.output_csv;
        sc.output_events = self.output_events;
        match self.mu {
            Some(Some(mu)) => {
                sc.mu_optimal = false;
                sc.sim.source.mu = mu;
            }
            _ => {
                sc.mu_optimal = true;
                sc = sc.with_optimal_mu();
            }
        }
        sc.sim.validate().map_err(|e| e.to_string())?;
        Ok(sc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Vec<Scenario>, ConfigError> {
        parse_str(text, "test.cfg", Path::new("."))
    }

    #[test]
    fn quantities() {
        assert_eq!(parse_quantity("25 km", Unit::Kilometers), Ok(25.0));
        assert_eq!(parse_quantity("2500m", Unit::Kilometers), Ok(2.5));
        assert_eq!(parse_quantity("1.27 GHz", Unit::Hertz), Ok(1.27e9));
        assert_eq!(parse_quantity("99 %", Unit::Fraction), Ok(0.99));
        assert_eq!(parse_quantity("0.99", Unit::Fraction), Ok(0.99));
        assert_eq!(parse_quantity("1e7", Unit::Count), Ok(1e7));
        assert_eq!(parse_quantity("0.35 ns", Unit::Picoseconds), Ok(350.0));
        assert_eq!(parse_quantity("4.5e6 Hz/W^2", Unit::HertzPerWatt2), Ok(4.5e6));
        assert!(parse_quantity("25", Unit::Kilometers).unwrap_err().contains("needs a unit"));
        assert!(parse_quantity("25 ps", Unit::Kilometers).unwrap_err().contains("unknown unit"));
        assert!(parse_quantity("1.5", Unit::Count).is_err());
        assert!(parse_quantity("km", Unit::Kilometers).is_err());
        assert!(parse_quantity("0.3 km", Unit::Fraction).is_err());
    }

    #[test]
    fn defaults_and_overrides() {
        let s = parse(
            "link.visibility = 98 %\n\
             scenario.name = a\n\
             channel.length = 25 km\n\
             scenario.name = b\n\
             link.visibility = 0.9\n\
             link.protocol = sarg\n",
        )
        .unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].sim.visibility, 0.98);
        assert_eq!(s[1].sim.visibility, 0.9);
        assert_eq!(s[0].length_km(), 25.0);
        assert_eq!(s[1].length_km(), 0.0);
        // mu defaults to the optimum for the scenario's protocol and channel
        assert!((s[0].sim.source.mu - s[0].transmission()).abs() < 1e-12);
        assert!((s[1].sim.source.mu - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_unknown_and_duplicate_keys() {
        let e = parse("scenario.name = a\nlink.colour = red\n").unwrap_err();
        assert!(e.to_string().contains("link.colour") && e.to_string().contains("unknown key"));
        let e = parse("scenario.name = a\nsource.mu = 0.1\nsource.mu = 0.2\n").unwrap_err();
        assert!(e.to_string().contains("duplicate key"), "{e}");
        let e = parse("scenario.name = a\nscenario.name = a\n").unwrap_err();
        assert!(e.to_string().contains("duplicate scenario"));
        assert!(matches!(parse("no equals sign\n"), Err(ConfigError::Syntax { .. })));
    }

    #[test]
    fn range_errors_name_the_key() {
        let e = parse("scenario.name = a\nlink.visibility = 1.2\n").unwrap_err();
        assert!(e.to_string().contains("link.visibility"), "{e}");
        assert!(e.to_string().contains("test.cfg:2"), "{e}");
        let e = parse("scenario.name = a\nsim.pulses = 0\n").unwrap_err();
        assert!(e.to_string().contains("sim.pulses"), "{e}");
    }

    #[test]
    fn empty_list() {
        assert_eq!(parse("# nothing\nlink.visibility = 0.99\n").unwrap(), vec![]);
    }

    #[test]
    fn transmission_and_presets() {
        let s = parse(
            "detector.preset = table2-literal\n\
             scenario.name = a\n\
             channel.length = 50 km\n\
             channel.transmission = 0.101\n\
             source.mu = 0.101\n",
        )
        .unwrap();
        assert!((s[0].transmission() - 0.101).abs() < 1e-12);
        assert!((s[0].sim.detector.overall_efficiency() - 0.012).abs() < 1e-12);
        assert!(!s[0].mu_optimal);
        let e = parse("scenario.name = a\nchannel.transmission = 0.1\nchannel.attenuation = 0.2 dB/km\n");
        assert!(matches!(e, Err(ConfigError::Invalid { .. })));
    }

    #[test]
    fn detector_fields() {
        let s = parse(
            "scenario.name = a\n\
             detector.preset = hardware\n\
             detector.operating_efficiency = 2 %\n\
             detector.jitter = 30 ps\n\
             detector.gate = 0.3 ns\n",
        )
        .unwrap();
        let d = &s[0].sim.detector;
        assert!((d.overall_efficiency() - 0.02).abs() < 1e-6);
        assert_eq!(d.jitter_fwhm_ps, 30.0);
        assert_eq!(d.gate_width_ps, 300.0);

        let s = parse("scenario.name = a\ndetector.effective_efficiency = 1 %\ndetector.dark_prob = 5e-6\n").unwrap();
        let d = &s[0].sim.detector;
        assert!((d.overall_efficiency() - 0.01).abs() < 1e-12);
        assert!((d.dark_prob_per_gate().unwrap() - 5e-6).abs() < 1e-15);
    }

    #[test]
    fn modes() {
        let s = parse("scenario.name = a\nsim.mode = fixed:X1\n").unwrap();
        assert_eq!(s[0].sim.mode, RunMode::FixedState(QubitState::new(Basis::X, 1)));
        assert!(parse("scenario.name = a\nsim.mode = fixed:Y0\n").is_err());
        assert!(parse("scenario.name = a\nsim.mode = fixed:Z0\nlink.receiver = four\n").is_err());
    }

    #[test]
    fn includes_and_cycles() {
        let dir = std::env::temp_dir().join(format!("upqkd-cfg-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        fs::write(dir.join("a.cfg"), "scenario.name = a\nsource.mu = 0.2\n").unwrap();
        fs::write(dir.join("top.cfg"), "link.visibility = 0.97\ninclude = a.cfg\n").unwrap();
        fs::write(dir.join("loop.cfg"), "include = loop.cfg\n").unwrap();
        let s = load(&dir.join("top.cfg")).unwrap();
        assert_eq!(s[0].name, "a");
        assert_eq!(s[0].sim.visibility, 0.97);
        assert!(load(&dir.join("loop.cfg")).unwrap_err().to_string().contains("cycle"));
        assert!(matches!(load(&dir.join("missing.cfg")), Err(ConfigError::Io { .. })));
        fs::remove_dir_all(&dir).unwrap();
    }
}
