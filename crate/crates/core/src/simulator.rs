//! Seeded Monte Carlo of the whole link, slot by slot.
//!
//! Slots are cut into fixed blocks of [`BLOCK_SLOTS`]. Block `b` draws from
//! the ChaCha8 stream `(seed, b)`, so the result does not depend on how many
//! workers run the blocks or in which order. Afterpulses are the only thing
//! crossing a block boundary: blocks first run assuming nothing arrives from
//! their predecessor, then any block whose predecessor left an afterpulse
//! pending is re-run, in block order, with that afterpulse injected.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{check, Error, Result};
use crate::keyrate::{RateParams, TrueFalseCounts, SARG_I1};
use crate::photonics::{effective_pulse_width, quadrature, FiberChannel, PhotonNumber, SourceConfig};
use crate::protocol::{
    click_probabilities_unchecked, prepare, prepare_state, resolve_slot, sift, Basis, Click,
    DetectionOutcome, DetectorId, MeasurementSetting, Origin, Port, Protocol, QubitState, Receiver,
    SiftedPair,
};
use crate::updetector::{GaussianSpread, UpconversionDetector};
use crate::FWHM_PER_SIGMA;

/// Slots per RNG substream. Part of the reproducibility contract.
pub const BLOCK_SLOTS: u64 = 1 << 16;

/// Path difference of the unbalanced interferometers, ps.
pub const DEFAULT_DELAY_PS: f64 = 300.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RunMode {
    /// Random state per slot, random basis per slot (or per photon with four detectors).
    Random,
    /// The same state every slot, measured in its own basis.
    FixedState(QubitState),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub source: SourceConfig,
    pub channel: FiberChannel,
    pub detector: UpconversionDetector,
    pub protocol: Protocol,
    pub receiver: Receiver,
    pub visibility: f64,
    pub interferometer_delay_ps: f64,
    /// Bob's input polarization aligned to his interferometer.
    pub polarization_controlled: bool,
    pub n_pulses: u64,
    pub seed: u64,
    pub mode: RunMode,
    /// Worker threads; `None` uses the global pool.
    pub workers: Option<usize>,
    /// Keep every click for histograms and event dumps.
    pub record_events: bool,
}

impl SimConfig {
    pub fn new(
        source: SourceConfig,
        channel: FiberChannel,
        detector: UpconversionDetector,
        protocol: Protocol,
    ) -> Self {
        Self {
            source,
            channel,
            detector,
            protocol,
            receiver: Receiver::TwoDetector,
            visibility: 0.99,
            interferometer_delay_ps: DEFAULT_DELAY_PS,
            polarization_controlled: true,
            n_pulses: 1_000_000,
            seed: 0,
            mode: RunMode::Random,
            workers: None,
            record_events: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.source.validate()?;
        self.channel.validate()?;
        self.detector.validate()?;
        check(
            (0.0..=1.0).contains(&self.visibility),
            "visibility",
            self.visibility,
            "must lie in [0, 1]",
        )?;
        check(
            self.interferometer_delay_ps > 0.0,
            "interferometer_delay",
            self.interferometer_delay_ps,
            "must be > 0",
        )?;
        check(self.n_pulses > 0, "pulses", self.n_pulses as f64, "must be > 0")?;
        if let Some(w) = self.workers {
            check(w > 0, "workers", w as f64, "must be > 0")?;
        }
        let per_period = self.dark_prob_per_period();
        check(per_period < 1.0, "noise_rate", self.detector.noise_rate(), "one dark count per period or more")?;
        self.detector.dark_prob_per_gate()?;
        Ok(())
    }

    /// Optical pulse FWHM at Bob, before detector jitter.
    pub fn optical_width_ps(&self) -> f64 {
        effective_pulse_width(&self.source, &self.channel)
    }

    /// Expected FWHM of the registered arrival-time peak.
    pub fn arrival_fwhm_ps(&self) -> f64 {
        quadrature(&[self.optical_width_ps(), self.detector.jitter_fwhm_ps])
    }

    /// A message when neighbouring time bins overlap.
    pub fn timing_warning(&self) -> Option<String> {
        let width = self.arrival_fwhm_ps();
        (self.interferometer_delay_ps <= width).then(|| {
            format!(
                "time-bin separation {:.0} ps does not exceed the {width:.0} ps arrival width",
                self.interferometer_delay_ps
            )
        })
    }

    fn dark_prob_per_period(&self) -> f64 {
        self.detector.noise_rate() * self.source.period_ps() * 1e-12
    }

    /// Per-photon efficiency into the key gate, including the gate's cut of
    /// the arrival distribution and, without polarization control, the
    /// non-interfering satellite half.
    pub fn effective_efficiency(&self) -> f64 {
        let gate = self.detector.gate_acceptance(self.optical_width_ps());
        let interfering = if self.polarization_controlled { 1.0 } else { 0.5 };
        self.detector.overall_efficiency() * gate * interfering
    }

    /// Analytic parameters matching this configuration.
    pub fn rate_params(&self) -> Result<RateParams> {
        Ok(RateParams {
            protocol: self.protocol,
            receiver: self.receiver,
            mu: self.source.mu,
            t: self.channel.transmission(),
            eta: self.effective_efficiency(),
            p_dark: self.detector.dark_prob_per_gate()?,
            q_opt: (1.0 - self.visibility) / 2.0,
            q_disp: 0.0,
            rep_rate_hz: self.source.rep_rate_hz,
            i1: SARG_I1,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionEvent {
    pub slot_index: u64,
    pub detector: DetectorId,
    pub origin: Origin,
    /// Absolute time from the first slot center, ps.
    pub timestamp_ps: f64,
    pub in_gate: bool,
}

/// Tallies that add across blocks.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SimCounts {
    /// Avalanches of any origin, in or out of the gate.
    pub clicks: u64,
    pub signal_clicks: u64,
    pub dark_clicks: u64,
    pub afterpulse_clicks: u64,
    /// Slots with a retained in-gate click.
    pub detected: u64,
    /// Detected slots where Bob's basis matched Alice's.
    pub matched_basis: u64,
    pub sifted: u64,
    pub sifted_errors: u64,
    /// `[prepared bit][0 = true, 1 = false]` over matched-basis detections.
    pub true_false: [[u64; 2]; 2],
}

impl SimCounts {
    fn add(&mut self, o: &SimCounts) {
        self.clicks += o.clicks;
        self.signal_clicks += o.signal_clicks;
        self.dark_clicks += o.dark_clicks;
        self.afterpulse_clicks += o.afterpulse_clicks;
        self.detected += o.detected;
        self.matched_basis += o.matched_basis;
        self.sifted += o.sifted;
        self.sifted_errors += o.sifted_errors;
        for b in 0..2 {
            for k in 0..2 {
                self.true_false[b][k] += o.true_false[b][k];
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub n_pulses: u64,
    pub rep_rate_hz: f64,
    pub protocol: Protocol,
    pub mode: RunMode,
    pub counts: SimCounts,
    pub events: Vec<DetectionEvent>,
    pub sifted: Vec<SiftedPair>,
}

impl SimResult {
    pub fn period_ps(&self) -> f64 {
        1e12 / self.rep_rate_hz
    }

    /// Simulated wall time, s.
    pub fn duration_s(&self) -> f64 {
        self.n_pulses as f64 / self.rep_rate_hz
    }

    /// Detected slots per second, before sifting.
    pub fn raw_rate_hz(&self) -> f64 {
        self.counts.detected as f64 / self.duration_s()
    }

    pub fn qber(&self) -> f64 {
        ratio(self.counts.sifted_errors, self.counts.sifted)
    }

    pub fn sift_fraction(&self) -> f64 {
        ratio(self.counts.sifted, self.counts.detected)
    }

    /// Binomial standard error of a fraction `p` estimated from this run's
    /// sifted key.
    pub fn qber_sigma(&self, p: f64) -> f64 {
        binomial_sigma(p, self.counts.sifted)
    }

    pub fn sift_sigma(&self, p: f64) -> f64 {
        binomial_sigma(p, self.counts.detected)
    }

    pub fn histogram(&self, bin_width_ps: f64, window_ps: f64) -> Result<Histogram> {
        build_histogram(&self.events, bin_width_ps, window_ps, self.period_ps())
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub fn binomial_sigma(p: f64, n: u64) -> f64 {
    if n == 0 {
        return f64::INFINITY;
    }
    (p * (1.0 - p) / n as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct PendingAfterpulse {
    detector: DetectorId,
    offset_ps: f64,
}

struct BlockOutput {
    counts: SimCounts,
    events: Vec<DetectionEvent>,
    sifted: Vec<SiftedPair>,
    spill: Vec<PendingAfterpulse>,
}

/// Everything a block needs, precomputed once per run.
struct Kernel<'a> {
    cfg: &'a SimConfig,
    photons: PhotonNumber,
    survive: f64,
    optical: GaussianSpread,
    dark_per_period: f64,
    gate_half: f64,
    period: f64,
}

impl<'a> Kernel<'a> {
    fn new(cfg: &'a SimConfig) -> Result<Self> {
        Ok(Self {
            cfg,
            photons: PhotonNumber::new(cfg.source.mu)?,
            survive: cfg.channel.transmission() * cfg.detector.overall_efficiency(),
            optical: GaussianSpread::from_fwhm(cfg.optical_width_ps()),
            dark_per_period: cfg.dark_prob_per_period(),
            gate_half: cfg.detector.gate_width_ps / 2.0,
            period: cfg.source.period_ps(),
        })
    }

    fn run_block(&self, block: u64, incoming: &[PendingAfterpulse]) -> BlockOutput {
        let cfg = self.cfg;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(block);

        let start = block * BLOCK_SLOTS;
        let end = (start + BLOCK_SLOTS).min(cfg.n_pulses);
        let mut out = BlockOutput {
            counts: SimCounts::default(),
            events: Vec::new(),
            sifted: Vec::new(),
            spill: Vec::new(),
        };
        let mut pending: Vec<PendingAfterpulse> = incoming.to_vec();
        let mut next: Vec<PendingAfterpulse> = Vec::new();

        for slot in start..end {
            let prep = match cfg.mode {
                RunMode::Random => prepare(&mut rng, cfg.protocol, slot),
                RunMode::FixedState(s) => prepare_state(&mut rng, cfg.protocol, slot, s),
            };
            let pm_basis = match (cfg.receiver, cfg.mode) {
                (Receiver::TwoDetector, RunMode::Random) => random_basis(&mut rng),
                (Receiver::TwoDetector, RunMode::FixedState(s)) => s.basis,
                (Receiver::FourDetector, _) => Basis::Z,
            };
            // With one interferometer the same two physical detectors serve
            // whichever basis the modulator selects.
            let physical = |d: DetectorId| match cfg.receiver {
                Receiver::TwoDetector => DetectorId {
                    basis: pm_basis,
                    port: d.port,
                },
                Receiver::FourDetector => d,
            };

            let mut clicks: [Option<Click>; 4] = [None; 4];
            for ap in pending.drain(..) {
                place(&mut clicks, physical(ap.detector), Origin::Afterpulse, ap.offset_ps);
            }

            let n = self.photons.sample(&mut rng);
            for _ in 0..n {
                if rng.random::<f64>() >= self.survive {
                    continue;
                }
                let basis = match cfg.receiver {
                    Receiver::TwoDetector => pm_basis,
                    Receiver::FourDetector => random_basis(&mut rng),
                };
                let (path_offset, interferes) = if cfg.polarization_controlled {
                    (0.0, true)
                } else {
                    let u = rng.random::<f64>();
                    if u < 0.25 {
                        (-cfg.interferometer_delay_ps, false)
                    } else if u < 0.75 {
                        (0.0, true)
                    } else {
                        (cfg.interferometer_delay_ps, false)
                    }
                };
                let p_d1 = if interferes {
                    click_probabilities_unchecked(prep.state, basis, cfg.visibility).0
                } else {
                    0.5
                };
                let port = if rng.random::<f64>() < p_d1 { Port::D1 } else { Port::D2 };
                let arrival = path_offset + self.optical.sample(&mut rng);
                let registered = cfg.detector.sample_detection_time(arrival, &mut rng);
                place(&mut clicks, DetectorId { basis, port }, Origin::Signal, registered);
            }

            if self.dark_per_period > 0.0 {
                for i in 0..cfg.receiver.detector_count() {
                    if rng.random::<f64>() < self.dark_per_period {
                        let offset = (rng.random::<f64>() - 0.5) * self.period;
                        let det = physical(DetectorId::from_index(i));
                        place(&mut clicks, det, Origin::Dark, offset);
                    }
                }
            }

            let mut gated = [None; 4];
            let mut n_gated = 0;
            for c in clicks.iter().flatten() {
                out.counts.clicks += 1;
                match c.origin {
                    Origin::Signal => out.counts.signal_clicks += 1,
                    Origin::Dark => out.counts.dark_clicks += 1,
                    Origin::Afterpulse => out.counts.afterpulse_clicks += 1,
                }
                let in_gate = c.offset_ps.abs() <= self.gate_half;
                if cfg.record_events {
                    out.events.push(DetectionEvent {
                        slot_index: slot,
                        detector: c.detector,
                        origin: c.origin,
                        timestamp_ps: slot as f64 * self.period + c.offset_ps,
                        in_gate,
                    });
                }
                if cfg.detector.afterpulse_prob > 0.0
                    && rng.random::<f64>() < cfg.detector.afterpulse_prob
                {
                    next.push(PendingAfterpulse {
                        detector: c.detector,
                        offset_ps: c.offset_ps,
                    });
                }
                if in_gate {
                    gated[n_gated] = Some(*c);
                    n_gated += 1;
                }
            }
            std::mem::swap(&mut pending, &mut next);

            let gated: Vec<Click> = gated[..n_gated].iter().flatten().copied().collect();
            let Some(click) = resolve_slot(&gated, &mut rng) else {
                continue;
            };
            out.counts.detected += 1;
            let setting = MeasurementSetting {
                slot_index: slot,
                basis: click.detector.basis,
                receiver: cfg.receiver,
            };
            if setting.basis == prep.state.basis {
                out.counts.matched_basis += 1;
                let bit = prep.state.bit as usize;
                let wrong = (click.detector.port.bit() != prep.state.bit) as usize;
                out.counts.true_false[bit][wrong] += 1;
            }
            let outcome = DetectionOutcome {
                slot_index: slot,
                detector: click.detector,
                origin: click.origin,
                timestamp_ps: slot as f64 * self.period + click.offset_ps,
            };
            if let Some(pair) = sift(cfg.protocol, &prep, &setting, &outcome) {
                out.counts.sifted += 1;
                out.counts.sifted_errors += pair.is_error() as u64;
                out.sifted.push(pair);
            }
        }
        out.spill = pending;
        out
    }
}

/// Threshold detector with dead time: only the earliest avalanche per detector counts.
fn place(clicks: &mut [Option<Click>; 4], detector: DetectorId, origin: Origin, offset_ps: f64) {
    let slot = &mut clicks[detector.index()];
    if slot.is_none_or(|c| offset_ps < c.offset_ps) {
        *slot = Some(Click {
            detector,
            origin,
            offset_ps,
        });
    }
}

#[inline]
fn random_basis<R: Rng + ?Sized>(rng: &mut R) -> Basis {
    if rng.random::<bool>() {
        Basis::X
    } else {
        Basis::Z
    }
}

/// Runs the configured number of pulses.
pub fn run(cfg: &SimConfig) -> Result<SimResult> {
    cfg.validate()?;
    let kernel = Kernel::new(cfg)?;
    let n_blocks = cfg.n_pulses.div_ceil(BLOCK_SLOTS);

    let first_pass = || {
        (0..n_blocks)
            .into_par_iter()
            .map(|b| kernel.run_block(b, &[]))
            .collect::<Vec<_>>()
    };
    let mut blocks = match cfg.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| Error::ThreadPool(e.to_string()))?
            .install(first_pass),
        None => first_pass(),
    };
    for b in 1..blocks.len() {
        if !blocks[b - 1].spill.is_empty() {
            let incoming = blocks[b - 1].spill.clone();
            blocks[b] = kernel.run_block(b as u64, &incoming);
        }
    }

    let mut result = SimResult {
        n_pulses: cfg.n_pulses,
        rep_rate_hz: cfg.source.rep_rate_hz,
        protocol: cfg.protocol,
        mode: cfg.mode,
        counts: SimCounts::default(),
        events: Vec::with_capacity(blocks.iter().map(|b| b.events.len()).sum()),
        sifted: Vec::with_capacity(blocks.iter().map(|b| b.sifted.len()).sum()),
    };
    for b in blocks {
        result.counts.add(&b.counts);
        result.events.extend(b.events);
        result.sifted.extend(b.sifted);
    }
    Ok(result)
}

/// Arrival-time histogram folded onto one clock period.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// Left edge of the first bin, relative to the slot center, ps.
    pub start_ps: f64,
    pub bin_width_ps: f64,
    pub counts: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakStats {
    pub area: u64,
    pub mean_ps: f64,
    /// Gaussian-equivalent FWHM from the second moment, bin-width corrected.
    pub fwhm_ps: f64,
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn bin_center(&self, i: usize) -> f64 {
        self.start_ps + (i as f64 + 0.5) * self.bin_width_ps
    }

    /// Area, mean and width of the bins whose centers lie within
    /// `half_span_ps` of `center_ps`.
    pub fn peak_stats(&self, center_ps: f64, half_span_ps: f64) -> PeakStats {
        let (mut n, mut s1, mut s2) = (0u64, 0.0, 0.0);
        for (i, &c) in self.counts.iter().enumerate() {
            let x = self.bin_center(i);
            if (x - center_ps).abs() <= half_span_ps {
                n += c;
                s1 += c as f64 * x;
                s2 += c as f64 * x * x;
            }
        }
        if n == 0 {
            return PeakStats {
                area: 0,
                mean_ps: center_ps,
                fwhm_ps: 0.0,
            };
        }
        let mean = s1 / n as f64;
        let var = (s2 / n as f64 - mean * mean - self.bin_width_ps.powi(2) / 12.0).max(0.0);
        PeakStats {
            area: n,
            mean_ps: mean,
            fwhm_ps: FWHM_PER_SIGMA * var.sqrt(),
        }
    }
}

/// Bins click times, taken modulo the clock period and centered on the slot,
/// into a window of `window_ps` around the slot center.
pub fn build_histogram(
    events: &[DetectionEvent],
    bin_width_ps: f64,
    window_ps: f64,
    period_ps: f64,
) -> Result<Histogram> {
    check(bin_width_ps > 0.0, "bin_width", bin_width_ps, "must be > 0")?;
    check(window_ps > 0.0, "window", window_ps, "must be > 0")?;
    check(period_ps > 0.0, "period", period_ps, "must be > 0")?;
    let n_bins = (window_ps / bin_width_ps).ceil() as usize;
    let start = -window_ps / 2.0;
    let mut counts = vec![0u64; n_bins];
    for e in events {
        let rel = (e.timestamp_ps + period_ps / 2.0).rem_euclid(period_ps) - period_ps / 2.0;
        let idx = ((rel - start) / bin_width_ps).floor();
        if idx >= 0.0 && (idx as usize) < n_bins {
            counts[idx as usize] += 1;
        }
    }
    Ok(Histogram {
        start_ps: start,
        bin_width_ps,
        counts,
    })
}

/// True/false counts of a fixed-state run, scaled to `duration_s` seconds.
pub fn table1_counts(result: &SimResult, duration_s: f64) -> Result<TrueFalseCounts> {
    let RunMode::FixedState(state) = result.mode else {
        return Err(Error::NotFixedState);
    };
    check(duration_s > 0.0, "duration", duration_s, "must be > 0")?;
    let scale = duration_s / result.duration_s();
    let bit = state.bit as usize;
    let mut table = TrueFalseCounts::default();
    table.true_counts[bit] = result.counts.true_false[bit][0] as f64 * scale;
    table.false_counts[bit] = result.counts.true_false[bit][1] as f64 * scale;
    Ok(table)
}

impl TrueFalseCounts {
    /// Row-wise sum, for combining the two fixed-state runs.
    pub fn merge(&self, other: &TrueFalseCounts) -> TrueFalseCounts {
        let mut out = *self;
        for i in 0..2 {
            out.true_counts[i] += other.true_counts[i];
            out.false_counts[i] += other.false_counts[i];
        }
        out
    }
}
