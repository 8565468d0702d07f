//! BB84 and SARG over time-bin phase encoding.
//!
//! Alice's interferometer applies one of four relative phases between the
//! short and long time bins; Bob's interferometer (or pair of them) maps the
//! phase difference onto two output detectors. BB84 and SARG share the
//! hardware and differ only in the public reconciliation.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;

use crate::error::{check, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Protocol {
    Bb84,
    Sarg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Receiver {
    /// One interferometer, basis set by a phase modulator.
    TwoDetector,
    /// Two interferometers behind a 50/50 splitter.
    FourDetector,
}

impl Receiver {
    pub fn detector_count(self) -> usize {
        match self {
            Receiver::TwoDetector => 2,
            Receiver::FourDetector => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Basis {
    Z,
    X,
}

impl Basis {
    pub fn opposite(self) -> Self {
        match self {
            Basis::Z => Basis::X,
            Basis::X => Basis::Z,
        }
    }

    /// Phase Bob's modulator applies to measure in this basis.
    pub fn measurement_phase(self) -> f64 {
        match self {
            Basis::Z => 0.0,
            Basis::X => FRAC_PI_2,
        }
    }

    pub fn index(self) -> u8 {
        match self {
            Basis::Z => 0,
            Basis::X => 1,
        }
    }

    fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        if rng.random::<bool>() {
            Basis::X
        } else {
            Basis::Z
        }
    }
}

/// One of the four BB84 states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QubitState {
    pub basis: Basis,
    pub bit: u8,
}

impl QubitState {
    pub const fn new(basis: Basis, bit: u8) -> Self {
        Self { basis, bit }
    }

    /// Relative phase Alice writes: (Z,0)→0, (Z,1)→π, (X,0)→π/2, (X,1)→3π/2.
    pub fn phase(self) -> f64 {
        self.basis.measurement_phase() + if self.bit == 1 { PI } else { 0.0 }
    }

    pub fn flipped(self) -> Self {
        Self::new(self.basis, self.bit ^ 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Preparation {
    pub slot_index: u64,
    pub state: QubitState,
    /// SARG only: the opposite-basis state announced together with `state`.
    pub announced_partner: Option<QubitState>,
}

impl Preparation {
    /// The announced pair as Bob sees it, one state per basis.
    pub fn announced_pair(&self) -> Option<AnnouncedPair> {
        self.announced_partner
            .map(|partner| AnnouncedPair::new(self.state, partner))
    }
}

/// Unordered SARG announcement: one state from each basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnnouncedPair {
    z: QubitState,
    x: QubitState,
}

impl AnnouncedPair {
    pub fn new(a: QubitState, b: QubitState) -> Self {
        debug_assert_ne!(a.basis, b.basis);
        match a.basis {
            Basis::Z => Self { z: a, x: b },
            Basis::X => Self { z: b, x: a },
        }
    }

    pub fn in_basis(&self, basis: Basis) -> QubitState {
        match basis {
            Basis::Z => self.z,
            Basis::X => self.x,
        }
    }
}

/// Uniform, independent basis and bit; a uniform opposite-basis partner for SARG.
pub fn prepare<R: Rng + ?Sized>(rng: &mut R, protocol: Protocol, slot_index: u64) -> Preparation {
    let state = QubitState::new(Basis::random(rng), rng.random::<bool>() as u8);
    prepare_state(rng, protocol, slot_index, state)
}

/// Preparation of a given state; draws the SARG partner.
pub fn prepare_state<R: Rng + ?Sized>(
    rng: &mut R,
    protocol: Protocol,
    slot_index: u64,
    state: QubitState,
) -> Preparation {
    let announced_partner = match protocol {
        Protocol::Bb84 => None,
        Protocol::Sarg => Some(sarg_partner(rng, state)),
    };
    Preparation {
        slot_index,
        state,
        announced_partner,
    }
}

/// Which of the two valid SARG pairs containing `sent` is announced.
pub fn sarg_partner<R: Rng + ?Sized>(rng: &mut R, sent: QubitState) -> QubitState {
    QubitState::new(sent.basis.opposite(), rng.random::<bool>() as u8)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MeasurementSetting {
    pub slot_index: u64,
    pub basis: Basis,
    pub receiver: Receiver,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Port {
    /// Constructive output for phase difference 0; decodes bit 0.
    D1,
    D2,
}

impl Port {
    pub fn bit(self) -> u8 {
        match self {
            Port::D1 => 0,
            Port::D2 => 1,
        }
    }

    pub fn from_bit(bit: u8) -> Self {
        if bit == 0 {
            Port::D1
        } else {
            Port::D2
        }
    }
}

/// A physical detector: output port of the interferometer measuring `basis`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DetectorId {
    pub basis: Basis,
    pub port: Port,
}

impl DetectorId {
    pub fn index(self) -> usize {
        2 * self.basis.index() as usize + self.port.bit() as usize
    }

    pub fn from_index(i: usize) -> Self {
        Self {
            basis: if i < 2 { Basis::Z } else { Basis::X },
            port: Port::from_bit((i % 2) as u8),
        }
    }

    /// State Bob infers from this click.
    pub fn outcome_state(self) -> QubitState {
        QubitState::new(self.basis, self.port.bit())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Origin {
    Signal,
    Dark,
    Afterpulse,
}

/// A single avalanche inside one slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Click {
    pub detector: DetectorId,
    pub origin: Origin,
    /// Offset from the slot center, ps.
    pub offset_ps: f64,
}

/// The click retained for a slot after gating and double-click resolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionOutcome {
    pub slot_index: u64,
    pub detector: DetectorId,
    pub origin: Origin,
    pub timestamp_ps: f64,
}

/// `(p_D1, p_D2)` for state `state` measured in `basis` at visibility `v`.
pub fn click_probabilities(state: QubitState, basis: Basis, visibility: f64) -> Result<(f64, f64)> {
    check(
        (0.0..=1.0).contains(&visibility),
        "visibility",
        visibility,
        "must lie in [0, 1]",
    )?;
    Ok(click_probabilities_unchecked(state, basis, visibility))
}

#[inline]
pub(crate) fn click_probabilities_unchecked(state: QubitState, basis: Basis, v: f64) -> (f64, f64) {
    let p1 = match (state.basis == basis, state.bit) {
        // cos(±π/2) is 0 analytically; keep it exact
        (false, _) => 0.5,
        (true, 0) => 0.5 * (1.0 + v),
        (true, _) => 0.5 * (1.0 - v),
    };
    (p1, 1.0 - p1)
}

/// General form for arbitrary phases, `p_D1 = (1 + V·cos(φ_A − φ_B))/2`.
pub fn interference_probability(phase_alice: f64, phase_bob: f64, visibility: f64) -> f64 {
    0.5 * (1.0 + visibility * (phase_alice - phase_bob).cos())
}

/// Bits Alice and Bob keep for one slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SiftedPair {
    pub slot_index: u64,
    pub alice: u8,
    pub bob: u8,
}

impl SiftedPair {
    pub fn is_error(&self) -> bool {
        self.alice != self.bob
    }
}

/// BB84: keep the slot when Bob's basis matches Alice's.
pub fn sift_bb84(
    prep: &Preparation,
    setting: &MeasurementSetting,
    outcome: &DetectionOutcome,
) -> Option<SiftedPair> {
    (setting.basis == prep.state.basis).then(|| SiftedPair {
        slot_index: prep.slot_index,
        alice: prep.state.bit,
        bob: outcome.detector.port.bit(),
    })
}

/// Outcome of SARG reconciliation seen from Bob's side only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SargDecision {
    Inconclusive,
    /// Bob excluded one announced state and infers the other.
    Conclusive(QubitState),
}

/// Bob's SARG inference from the announced pair and his click.
///
/// The pair holds one state per basis. If Bob's result is orthogonal to the
/// pair member in his basis, that member is excluded and the other one is
/// inferred; otherwise the slot is inconclusive.
pub fn sarg_decision(pair: &AnnouncedPair, basis: Basis, port: Port) -> SargDecision {
    let same_basis = pair.in_basis(basis);
    if port.bit() != same_basis.bit {
        SargDecision::Conclusive(pair.in_basis(basis.opposite()))
    } else {
        SargDecision::Inconclusive
    }
}

/// Key bit carried by a SARG state: the index of its basis.
pub fn sarg_key_bit(state: QubitState) -> u8 {
    state.basis.index()
}

/// SARG: keep the slot when Bob's click excludes one announced state.
pub fn sift_sarg(
    prep: &Preparation,
    setting: &MeasurementSetting,
    outcome: &DetectionOutcome,
) -> Option<SiftedPair> {
    let pair = prep.announced_pair()?;
    match sarg_decision(&pair, setting.basis, outcome.detector.port) {
        SargDecision::Inconclusive => None,
        SargDecision::Conclusive(inferred) => Some(SiftedPair {
            slot_index: prep.slot_index,
            alice: sarg_key_bit(prep.state),
            bob: sarg_key_bit(inferred),
        }),
    }
}

pub fn sift(
    protocol: Protocol,
    prep: &Preparation,
    setting: &MeasurementSetting,
    outcome: &DetectionOutcome,
) -> Option<SiftedPair> {
    match protocol {
        Protocol::Bb84 => sift_bb84(prep, setting, outcome),
        Protocol::Sarg => sift_sarg(prep, setting, outcome),
    }
}

/// Empty slot → `None`; one click → that click; several → one uniformly at random.
pub fn resolve_slot<R: Rng + ?Sized>(clicks: &[Click], rng: &mut R) -> Option<Click> {
    match clicks.len() {
        0 => None,
        1 => Some(clicks[0]),
        n => Some(clicks[rng.random_range(0..n)]),
    }
}
