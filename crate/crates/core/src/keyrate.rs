//! Closed-form link analysis: QBER, sifting, Eve's information and the
//! asymptotic secure key rate `R·(1 − H(QBER) − I_Eve)·P_sift`.
//!
//! Eve is limited to individual and photon-number-splitting attacks; the
//! secure-rate expression is the asymptotic one, without finite-key terms.

use crate::error::{check, Error, Result};
use crate::protocol::{Protocol, Receiver};

/// Single-photon Eve information for SARG.
pub const SARG_I1: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateParams {
    pub protocol: Protocol,
    pub receiver: Receiver,
    /// Mean photon number per pulse.
    pub mu: f64,
    /// Channel transmittance.
    pub t: f64,
    /// Detection efficiency.
    pub eta: f64,
    /// Dark-count probability per gate and detector.
    pub p_dark: f64,
    /// Optical error `(1 − V)/2`.
    pub q_opt: f64,
    /// Additive error from dispersion into neighbouring bins, treated like `q_opt`.
    pub q_disp: f64,
    pub rep_rate_hz: f64,
    pub i1: f64,
}

impl RateParams {
    /// Link constants of the field-test theory figures: `Q_opt = 0.5 %`,
    /// `P_dark = 7e-6`, 0.8 % effective efficiency, one interferometer.
    pub fn table2(protocol: Protocol, mu: f64, t: f64) -> Self {
        Self {
            protocol,
            receiver: Receiver::TwoDetector,
            mu,
            t,
            eta: 0.008,
            p_dark: 7e-6,
            q_opt: 0.005,
            q_disp: 0.0,
            rep_rate_hz: 1.27e9,
            i1: SARG_I1,
        }
    }

    /// As [`Self::table2`] with the quoted 1.2 % detection efficiency.
    pub fn table2_literal(protocol: Protocol, mu: f64, t: f64) -> Self {
        Self {
            eta: 0.012,
            ..Self::table2(protocol, mu, t)
        }
    }

    pub fn with_receiver(self, receiver: Receiver) -> Self {
        Self { receiver, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        check(self.mu >= 0.0 && self.mu.is_finite(), "mu", self.mu, "must be >= 0")?;
        check(self.t > 0.0 && self.t <= 1.0, "t", self.t, "must lie in (0, 1]")?;
        check(self.eta >= 0.0 && self.eta <= 1.0, "eta", self.eta, "must lie in [0, 1]")?;
        check(
            (0.0..1.0).contains(&self.p_dark),
            "p_dark",
            self.p_dark,
            "must lie in [0, 1)",
        )?;
        check((0.0..=0.5).contains(&self.q_opt), "q_opt", self.q_opt, "must lie in [0, 0.5]")?;
        check((0.0..=0.5).contains(&self.q_disp), "q_disp", self.q_disp, "must lie in [0, 0.5]")?;
        check(self.rep_rate_hz > 0.0, "rep_rate", self.rep_rate_hz, "must be > 0")?;
        check((0.0..=1.0).contains(&self.i1), "i1", self.i1, "must lie in [0, 1]")
    }

    /// Detectors a dark count can come from in one sifting basis, relative
    /// to the two-detector receiver.
    fn dark_multiplier(&self) -> f64 {
        match self.receiver {
            Receiver::TwoDetector => 1.0,
            Receiver::FourDetector => 2.0,
        }
    }

    fn optical_error(&self) -> f64 {
        self.q_opt + self.q_disp
    }
}

/// Detection probability per pulse from signal photons, `μ·η·t`.
pub fn p_phot(params: &RateParams) -> f64 {
    params.mu * params.eta * params.t
}

/// Dark-count error term `P_dark/P_phot`, doubled for four detectors.
pub fn q_det(params: &RateParams) -> f64 {
    let pp = p_phot(params);
    if pp == 0.0 {
        return if params.p_dark == 0.0 { 0.0 } else { f64::INFINITY };
    }
    params.dark_multiplier() * params.p_dark / pp
}

/// First-order QBER: `Q_opt + Q_det` for BB84 and `2(Q_opt + Q_det)` for
/// SARG, capped at 1/2.
pub fn qber_theory(params: &RateParams) -> f64 {
    let bb84 = params.optical_error() + q_det(params);
    let q = match params.protocol {
        Protocol::Bb84 => bb84,
        Protocol::Sarg => 2.0 * bb84,
    };
    q.min(0.5)
}

/// QBER as the ratio of expected wrong to kept clicks per pulse, before the
/// `P_dark << P_phot` expansion.
pub fn qber_exact(params: &RateParams) -> f64 {
    let (wrong, kept) = sifted_flow(params);
    if kept == 0.0 {
        0.0
    } else {
        wrong / kept
    }
}

/// Kept fraction of detected pulses without the small-`P_dark` expansion.
pub fn sift_fraction_exact(params: &RateParams) -> f64 {
    let detected = detection_probability(params);
    if detected == 0.0 {
        return 0.0;
    }
    sifted_flow(params).1 / detected
}

/// Expected (wrong, kept) clicks per pulse after sifting.
fn sifted_flow(params: &RateParams) -> (f64, f64) {
    let pp = p_phot(params);
    let q = params.optical_error();
    let dark = params.dark_multiplier() * params.p_dark;
    match params.protocol {
        Protocol::Bb84 => (0.5 * (q * pp + dark), 0.5 * (pp + 2.0 * dark)),
        Protocol::Sarg => (
            0.5 * (q * pp + dark),
            0.25 * ((1.0 + 2.0 * q) * pp + 4.0 * dark),
        ),
    }
}

/// Probability that at least one detector fires in a gate (first order).
pub fn detection_probability(params: &RateParams) -> f64 {
    let detectors = 2.0 * params.dark_multiplier();
    p_phot(params) + detectors * params.p_dark
}

/// Conditions under which [`qber_theory`] is a poor approximation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ApproximationWarning {
    /// `P_dark` is not small against `P_phot`; carries the ratio.
    DarkNotNegligible(f64),
    /// `P_phot` is not small against one.
    SignalNotSmall(f64),
}

impl std::fmt::Display for ApproximationWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::DarkNotNegligible(r) => write!(f, "P_dark/P_phot = {r:.3}, first-order QBER is biased high"),
            Self::SignalNotSmall(p) => write!(f, "P_phot = {p:.3} is not << 1"),
        }
    }
}

pub fn approximation_warnings(params: &RateParams) -> Vec<ApproximationWarning> {
    let mut out = Vec::new();
    let pp = p_phot(params);
    let ratio = if pp > 0.0 { params.p_dark / pp } else { f64::INFINITY };
    if ratio > 0.05 {
        out.push(ApproximationWarning::DarkNotNegligible(ratio));
    }
    if pp > 0.1 {
        out.push(ApproximationWarning::SignalNotSmall(pp));
    }
    out
}

/// True and false click counts, indexed by the prepared bit: row "0" is
/// D1 true / D2 false, row "1" is D2 true / D1 false.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrueFalseCounts {
    pub true_counts: [f64; 2],
    pub false_counts: [f64; 2],
}

/// Wrong over total counts, doubled for SARG.
pub fn qber_empirical(counts: &TrueFalseCounts, protocol: Protocol) -> Result<f64> {
    let all = counts.true_counts.iter().chain(&counts.false_counts);
    for &c in all.clone() {
        check(c >= 0.0, "count", c, "must be >= 0")?;
    }
    let total: f64 = all.sum();
    if total <= 0.0 {
        return Err(Error::NoCounts);
    }
    let q = counts.false_counts.iter().sum::<f64>() / total;
    Ok(match protocol {
        Protocol::Bb84 => q,
        Protocol::Sarg => 2.0 * q,
    })
}

/// Binary Shannon entropy in bits.
pub fn shannon_entropy(q: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&q), "entropy argument {q}");
    if q <= 0.0 || q >= 1.0 {
        return 0.0;
    }
    -q * q.log2() - (1.0 - q) * (1.0 - q).log2()
}

/// Eve's information, `μ/2t` (BB84) or `I₁ + (1 − I₁)μ²/12t` (SARG), clamped to [0, 1].
pub fn i_eve(protocol: Protocol, mu: f64, t: f64, i1: f64) -> f64 {
    let raw = match protocol {
        Protocol::Bb84 => mu / (2.0 * t),
        Protocol::Sarg => i1 + (1.0 - i1) * mu * mu / (12.0 * t),
    };
    raw.clamp(0.0, 1.0)
}

/// Sifting fraction: 1/2 for BB84, `(1 + Q_opt + 2Q_det)/4` for SARG.
pub fn p_sift(params: &RateParams) -> f64 {
    match params.protocol {
        Protocol::Bb84 => 0.5,
        Protocol::Sarg => {
            let qd = q_det(params);
            let qd = if qd.is_finite() { qd } else { 0.0 };
            0.25 * (1.0 + params.optical_error() + 2.0 * qd)
        }
    }
}

/// Mean photon number maximizing the secure rate: `t` (BB84) or `2√t` (SARG).
pub fn optimal_mu(protocol: Protocol, t: f64) -> Result<f64> {
    check(t > 0.0 && t <= 1.0, "t", t, "must lie in (0, 1]")?;
    Ok(match protocol {
        Protocol::Bb84 => t,
        Protocol::Sarg => 2.0 * t.sqrt(),
    })
}

/// `max(0, R·(1 − H(qber) − I_Eve)·P_sift)`.
pub fn secure_rate(raw_rate: f64, qber: f64, i_eve: f64, p_sift: f64) -> f64 {
    let fraction = 1.0 - shannon_entropy(qber.clamp(0.0, 1.0)) - i_eve;
    (raw_rate * fraction * p_sift).max(0.0)
}

/// Raw detection rate predicted by the model, `ν·(P_phot + n_det·P_dark)`,
/// counted before sifting like a measured R.
pub fn modeled_raw_rate(params: &RateParams) -> f64 {
    params.rep_rate_hz * detection_probability(params)
}

/// Where the raw rate in a [`LinkReport`] comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RawRate {
    Modeled,
    /// A measured detection rate and, optionally, the measured QBER that
    /// then replaces the theory value in the secure rate.
    Measured { rate_hz: f64, qber: Option<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkReport {
    pub protocol: Protocol,
    pub receiver: Receiver,
    pub mu: f64,
    pub t: f64,
    pub p_phot: f64,
    pub q_det: f64,
    pub qber_theory: f64,
    /// QBER entering the secure rate.
    pub qber: f64,
    pub raw_rate: f64,
    pub i_eve: f64,
    pub p_sift: f64,
    pub secure_rate: f64,
}

pub fn analyze(params: &RateParams, raw: RawRate) -> Result<LinkReport> {
    params.validate()?;
    let theory = qber_theory(params);
    let (raw_rate, qber) = match raw {
        RawRate::Modeled => (modeled_raw_rate(params), theory),
        RawRate::Measured { rate_hz, qber } => {
            check(rate_hz >= 0.0, "measured_rate", rate_hz, "must be >= 0")?;
            let q = qber.unwrap_or(theory);
            check((0.0..=0.5).contains(&q), "measured_qber", q, "must lie in [0, 0.5]")?;
            (rate_hz, q)
        }
    };
    let ie = i_eve(params.protocol, params.mu, params.t, params.i1);
    let ps = p_sift(params);
    Ok(LinkReport {
        protocol: params.protocol,
        receiver: params.receiver,
        mu: params.mu,
        t: params.t,
        p_phot: p_phot(params),
        q_det: q_det(params),
        qber_theory: theory,
        qber,
        raw_rate,
        i_eve: ie,
        p_sift: ps,
        secure_rate: secure_rate(raw_rate, qber, ie, ps).min(raw_rate),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn p_phot_examples() {
        let p = RateParams::table2(Protocol::Bb84, 0.286, 0.286);
        assert!(close(p_phot(&p), 6.5437e-4, 1e-8));
        let p = RateParams::table2(Protocol::Sarg, 1.064, 0.283);
        assert!(close(p_phot(&p), 2.4089e-3, 1e-7));
        assert_eq!(p_phot(&RateParams { mu: 0.0, ..p }), 0.0);
    }

    #[test]
    fn qber_theory_examples() {
        let bb = RateParams::table2(Protocol::Bb84, 0.286, 0.286);
        assert!(close(qber_theory(&bb), 0.015697, 1e-6), "{}", qber_theory(&bb));
        let sarg50 = RateParams::table2(Protocol::Sarg, 0.640, 0.1024);
        assert!(close(qber_theory(&sarg50), 0.036702, 1e-6), "{}", qber_theory(&sarg50));
        let dark_free = RateParams { p_dark: 0.0, ..bb };
        assert_eq!(qber_theory(&dark_free), 0.005);
        let dark_free = RateParams { p_dark: 0.0, ..sarg50 };
        assert_eq!(qber_theory(&dark_free), 0.01);
    }

    #[test]
    fn exact_ratio_matches_unexpanded_form() {
        let p = RateParams::table2(Protocol::Sarg, 0.640, 0.1024);
        let (pp, pd, q) = (p_phot(&p), p.p_dark, p.q_opt);
        let direct = 0.5 * (q * pp + pd) / (0.25 * ((1.0 + 2.0 * q) * pp + 4.0 * pd));
        assert!(close(qber_exact(&p), direct, 1e-15));
        let b = RateParams::table2(Protocol::Bb84, 0.286, 0.286);
        let pp = p_phot(&b);
        assert!(close(qber_exact(&b), (q * pp + pd) / (pp + 2.0 * pd), 1e-15));
        // first order agrees when dark counts are negligible
        let clean = RateParams { p_dark: 1e-9, ..b };
        assert!(close(qber_exact(&clean), qber_theory(&clean), 1e-6));
    }

    #[test]
    fn qber_empirical_examples() {
        let bb84 = TrueFalseCounts {
            true_counts: [763e3, 660e3],
            false_counts: [11.6e3, 14.5e3],
        };
        assert!(close(qber_empirical(&bb84, Protocol::Bb84).unwrap(), 0.018011, 1e-6));
        let sarg = TrueFalseCounts {
            true_counts: [2.24e6, 1.84e6],
            false_counts: [17.9e3, 19.3e3],
        };
        assert!(close(qber_empirical(&sarg, Protocol::Sarg).unwrap(), 0.018071, 1e-6));
        let clean = TrueFalseCounts {
            true_counts: [10.0, 3.0],
            false_counts: [0.0, 0.0],
        };
        assert_eq!(qber_empirical(&clean, Protocol::Bb84).unwrap(), 0.0);
        assert_eq!(
            qber_empirical(&TrueFalseCounts::default(), Protocol::Bb84),
            Err(Error::NoCounts)
        );
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(shannon_entropy(0.5), 1.0);
        assert_eq!(shannon_entropy(0.0), 0.0);
        assert_eq!(shannon_entropy(1.0), 0.0);
        assert!(close(shannon_entropy(0.0184), 0.13236, 1e-5));
    }

    #[test]
    fn i_eve_examples() {
        assert_eq!(i_eve(Protocol::Bb84, 0.3, 0.3, SARG_I1), 0.5);
        assert!(close(i_eve(Protocol::Sarg, 1.064, 0.283, SARG_I1), 0.6, 1e-3));
        assert_eq!(i_eve(Protocol::Sarg, 0.0, 0.283, SARG_I1), 0.4);
        // large mu is clamped
        assert_eq!(i_eve(Protocol::Bb84, 5.0, 0.1, SARG_I1), 1.0);
    }

    #[test]
    fn p_sift_examples() {
        let bb = RateParams::table2(Protocol::Bb84, 0.286, 0.286);
        assert_eq!(p_sift(&bb), 0.5);
        // choose p_dark so that Q_det = 0.0041
        let mut s = RateParams::table2(Protocol::Sarg, 1.0, 0.1);
        s.p_dark = 0.0041 * p_phot(&s);
        assert!(close(p_sift(&s), 0.2533, 1e-6));
        let noiseless = RateParams { p_dark: 0.0, q_opt: 0.0, ..s };
        assert_eq!(p_sift(&noiseless), 0.25);
    }

    #[test]
    fn optimal_mu_examples() {
        assert_eq!(optimal_mu(Protocol::Bb84, 0.286).unwrap(), 0.286);
        assert!(close(optimal_mu(Protocol::Sarg, 0.1024).unwrap(), 0.640, 1e-12));
        assert_eq!(optimal_mu(Protocol::Bb84, 1.0).unwrap(), 1.0);
        assert!(optimal_mu(Protocol::Bb84, 0.0).is_err());
        assert!(optimal_mu(Protocol::Sarg, 1.5).is_err());
    }

    #[test]
    fn secure_rate_examples() {
        assert!(close(secure_rate(710e3, 0.0184, 0.5, 0.5), 130_512.0, 1.0));
        assert!(close(secure_rate(590e3, 0.0471, 0.600, 0.2605), 19_373.0, 5.0));
        assert_eq!(secure_rate(1e6, 0.2, 0.5, 0.5), 0.0);
    }

    #[test]
    fn analyze_measured_rows() {
        let bb = RateParams::table2(Protocol::Bb84, 0.286, 0.286);
        let r = analyze(&bb, RawRate::Measured { rate_hz: 710e3, qber: Some(0.0184) }).unwrap();
        assert!((130e3..=135e3).contains(&r.secure_rate), "{}", r.secure_rate);

        let t = (1.064f64 / 2.0).powi(2);
        let sarg = RateParams::table2(Protocol::Sarg, 1.064, t);
        let r = analyze(&sarg, RawRate::Measured { rate_hz: 2.04e6, qber: Some(0.0182) }).unwrap();
        assert!(close(r.secure_rate, 138.6e3, 0.5e3), "{}", r.secure_rate);
    }

    #[test]
    fn analyze_ideal_link() {
        let ideal = RateParams {
            p_dark: 0.0,
            q_opt: 0.0,
            ..RateParams::table2(Protocol::Bb84, 0.5, 1.0)
        };
        let r = analyze(&ideal, RawRate::Modeled).unwrap();
        assert_eq!(r.qber, 0.0);
        assert!(close(r.secure_rate, r.raw_rate * (1.0 - r.i_eve) * r.p_sift, 1e-9));
        assert!(close(r.raw_rate, 1.27e9 * 0.5 * 0.008, 1e-6));
    }

    #[test]
    fn analyze_rejects_bad_params() {
        let bad = RateParams { t: 0.0, ..RateParams::table2(Protocol::Bb84, 0.3, 0.3) };
        assert!(analyze(&bad, RawRate::Modeled).is_err());
    }

    #[test]
    fn warnings_flag_long_links() {
        let short = RateParams::table2(Protocol::Bb84, 0.286, 0.286);
        assert!(approximation_warnings(&short).is_empty());
        let long = RateParams::table2(Protocol::Bb84, 0.101, 0.101);
        assert!(matches!(
            approximation_warnings(&long)[..],
            [ApproximationWarning::DarkNotNegligible(_)]
        ));
    }

    fn arb_params() -> impl Strategy<Value = RateParams> {
        (
            prop_oneof![Just(Protocol::Bb84), Just(Protocol::Sarg)],
            0.01f64..2.0,
            0.001f64..1.0,
            0.001f64..0.1,
            0.0f64..1e-4,
            0.0f64..0.05,
        )
            .prop_map(|(protocol, mu, t, eta, p_dark, q_opt)| RateParams {
                mu,
                t,
                eta,
                p_dark,
                q_opt,
                ..RateParams::table2(protocol, mu, t)
            })
    }

    proptest! {
        #[test]
        fn secure_rate_monotone(r in 0.0f64..1e7, q1 in 0.0f64..0.5, q2 in 0.0f64..0.5,
                                 i1 in 0.0f64..1.0, i2 in 0.0f64..1.0, ps in 0.0f64..1.0) {
            let (qa, qb) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
            let (ia, ib) = if i1 <= i2 { (i1, i2) } else { (i2, i1) };
            prop_assert!(secure_rate(r, qb, ia, ps) <= secure_rate(r, qa, ia, ps));
            prop_assert!(secure_rate(r, qa, ib, ps) <= secure_rate(r, qa, ia, ps));
            prop_assert!(secure_rate(r, qa, ia, ps) >= 0.0);
        }

        #[test]
        fn sarg_doubles_bb84(p in arb_params()) {
            let bb = RateParams { protocol: Protocol::Bb84, ..p };
            let sg = RateParams { protocol: Protocol::Sarg, ..p };
            let (qb, qs) = (qber_theory(&bb), qber_theory(&sg));
            if qs < 0.5 {
                prop_assert_eq!(qs, 2.0 * qb);
            }
        }

        #[test]
        fn four_detectors_double_only_q_det(p in arb_params()) {
            let two = p.with_receiver(Receiver::TwoDetector);
            let four = p.with_receiver(Receiver::FourDetector);
            let factor = match p.protocol { Protocol::Bb84 => 1.0, Protocol::Sarg => 2.0 };
            let (q2, q4) = (qber_theory(&two), qber_theory(&four));
            if q4 < 0.5 {
                let diff = q4 - q2;
                prop_assert!((diff - factor * q_det(&two)).abs() <= 1e-14 * q4.max(1e-3));
            }
        }

        #[test]
        fn entropy_symmetric(q in 0.0f64..=1.0) {
            prop_assert!((shannon_entropy(q) - shannon_entropy(1.0 - q)).abs() < 1e-12);
        }

        #[test]
        fn report_invariants(p in arb_params()) {
            let r = analyze(&p, RawRate::Modeled).unwrap();
            prop_assert!((0.0..=0.5).contains(&r.qber));
            prop_assert!(r.secure_rate >= 0.0 && r.secure_rate <= r.raw_rate);
            if p.protocol == Protocol::Sarg {
                prop_assert!(r.p_sift >= 0.25);
            }
        }
    }
}
