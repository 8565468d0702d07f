//! Measured results of the 1.27 GHz field test over 25 km and 50 km of
//! standard fiber, one interferometer and two detectors at Bob.

use crate::keyrate::TrueFalseCounts;
use crate::protocol::Protocol;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResultRow {
    pub protocol: Protocol,
    pub length_km: f64,
    pub mu: f64,
    /// Raw detection rate, bit/s.
    pub raw_rate: f64,
    pub qber_measured: f64,
    pub qber_theory: f64,
    /// Estimated secure rate, bit/s.
    pub secure_rate: f64,
}

impl ResultRow {
    /// Transmittance implied by the mean photon number, which was set to
    /// the optimum for each protocol.
    pub fn implied_transmission(&self) -> f64 {
        match self.protocol {
            Protocol::Bb84 => self.mu,
            Protocol::Sarg => (self.mu / 2.0).powi(2),
        }
    }

    pub fn label(&self) -> String {
        let p = match self.protocol {
            Protocol::Bb84 => "BB84",
            Protocol::Sarg => "SARG",
        };
        format!("{p}-{}", self.length_km)
    }
}

pub const RESULTS: [ResultRow; 4] = [
    ResultRow {
        protocol: Protocol::Bb84,
        length_km: 25.0,
        mu: 0.286,
        raw_rate: 710e3,
        qber_measured: 0.0184,
        qber_theory: 0.0156,
        secure_rate: 135e3,
    },
    ResultRow {
        protocol: Protocol::Sarg,
        length_km: 25.0,
        mu: 1.064,
        raw_rate: 2.04e6,
        qber_measured: 0.0182,
        qber_theory: 0.0162,
        secure_rate: 140e3,
    },
    ResultRow {
        protocol: Protocol::Bb84,
        length_km: 50.0,
        mu: 0.101,
        raw_rate: 110e3,
        qber_measured: 0.0951,
        qber_theory: 0.0921,
        secure_rate: 2e3,
    },
    ResultRow {
        protocol: Protocol::Sarg,
        length_km: 50.0,
        mu: 0.640,
        raw_rate: 590e3,
        qber_measured: 0.0471,
        qber_theory: 0.0411,
        secure_rate: 20e3,
    },
];

/// Fixed-phase coincidence counts per detector, same order as [`RESULTS`].
pub const RAW_COUNTS: [TrueFalseCounts; 4] = [
    TrueFalseCounts {
        true_counts: [763e3, 660e3],
        false_counts: [11.6e3, 14.5e3],
    },
    TrueFalseCounts {
        true_counts: [2.24e6, 1.84e6],
        false_counts: [17.9e3, 19.3e3],
    },
    TrueFalseCounts {
        true_counts: [117e3, 104e3],
        false_counts: [9.54e3, 11.5e3],
    },
    TrueFalseCounts {
        true_counts: [636e3, 558e3],
        false_counts: [12.1e3, 16.9e3],
    },
];
