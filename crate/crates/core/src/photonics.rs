//! Pulsed source and fiber channel.
//!
//! Widths are FWHM throughout. Where a Gaussian is sampled, its standard
//! deviation is `FWHM / 2.3548`.

use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{check, Result};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Typical chromatic dispersion of standard single-mode fiber at 1550 nm.
pub const SMF_DISPERSION_PS_PER_NM_KM: f64 = 17.0;

/// Mode-locked source.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceConfig {
    pub rep_rate_hz: f64,
    /// Mean photon number per pulse.
    pub mu: f64,
    pub wavelength_nm: f64,
    /// Spectral FWHM in pm.
    pub spectral_width_pm: f64,
    /// Temporal FWHM in ps.
    pub pulse_width_ps: f64,
    /// Time-bandwidth product `Δν·Δt`.
    pub tbp_constant: f64,
}

impl Default for SourceConfig {
    /// The 1.27 GHz, 1550 nm source behind a 100 pm grating filter.
    fn default() -> Self {
        Self {
            rep_rate_hz: 1.27e9,
            mu: 0.286,
            wavelength_nm: 1550.0,
            spectral_width_pm: 100.0,
            pulse_width_ps: 80.0,
            tbp_constant: 1.0,
        }
    }
}

impl SourceConfig {
    pub fn validate(&self) -> Result<()> {
        check(self.rep_rate_hz > 0.0, "rep_rate", self.rep_rate_hz, "must be > 0")?;
        check(self.mu >= 0.0 && self.mu.is_finite(), "mu", self.mu, "must be >= 0")?;
        check(self.wavelength_nm > 0.0, "wavelength", self.wavelength_nm, "must be > 0")?;
        check(
            self.spectral_width_pm > 0.0,
            "spectral_width",
            self.spectral_width_pm,
            "must be > 0",
        )?;
        check(self.pulse_width_ps > 0.0, "pulse_width", self.pulse_width_ps, "must be > 0")?;
        check(self.tbp_constant > 0.0, "tbp_constant", self.tbp_constant, "must be > 0")?;
        check(
            self.period_ps() > self.pulse_width_ps,
            "pulse_width",
            self.pulse_width_ps,
            "must be shorter than the pulse period",
        )
    }

    /// Clock period in ps.
    pub fn period_ps(&self) -> f64 {
        1e12 / self.rep_rate_hz
    }

    /// Pulse width a transform-limited pulse with this spectrum would have.
    pub fn transform_limited_width_ps(&self) -> Result<f64> {
        transform_limited_width(self.spectral_width_pm, self.wavelength_nm, self.tbp_constant)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FiberChannel {
    pub length_km: f64,
    pub attenuation_db_per_km: f64,
    pub dispersion_ps_per_nm_km: f64,
    /// Lumped receiver/system loss in dB.
    pub excess_loss_db: f64,
}

impl Default for FiberChannel {
    fn default() -> Self {
        Self {
            length_km: 0.0,
            attenuation_db_per_km: 0.2,
            dispersion_ps_per_nm_km: SMF_DISPERSION_PS_PER_NM_KM,
            excess_loss_db: 0.0,
        }
    }
}

impl FiberChannel {
    pub fn new(length_km: f64, attenuation_db_per_km: f64) -> Self {
        Self {
            length_km,
            attenuation_db_per_km,
            ..Self::default()
        }
    }

    /// Channel whose total loss (no excess) gives transmittance `t` over `length_km`.
    pub fn with_transmission(length_km: f64, t: f64) -> Self {
        let loss_db = -10.0 * t.log10();
        let attenuation = if length_km > 0.0 { loss_db / length_km } else { 0.0 };
        let excess = if length_km > 0.0 { 0.0 } else { loss_db };
        Self {
            length_km,
            attenuation_db_per_km: attenuation,
            excess_loss_db: excess,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        check(self.length_km >= 0.0, "length", self.length_km, "must be >= 0")?;
        check(
            self.attenuation_db_per_km >= 0.0,
            "attenuation",
            self.attenuation_db_per_km,
            "must be >= 0",
        )?;
        check(
            self.dispersion_ps_per_nm_km.is_finite(),
            "dispersion",
            self.dispersion_ps_per_nm_km,
            "must be finite",
        )?;
        check(
            self.excess_loss_db >= 0.0 && self.excess_loss_db.is_finite(),
            "excess_loss",
            self.excess_loss_db,
            "must be >= 0",
        )?;
        let t = self.transmission();
        check(t > 0.0 && t <= 1.0, "transmission", t, "must lie in (0, 1]")
    }

    pub fn total_loss_db(&self) -> f64 {
        self.attenuation_db_per_km * self.length_km + self.excess_loss_db
    }

    /// Transmittance `t = 10^(-loss/10)`.
    pub fn transmission(&self) -> f64 {
        10f64.powf(-self.total_loss_db() / 10.0)
    }

    /// Group-delay spread (ps) accumulated by a pulse of the given spectral width.
    pub fn dispersion_broadening_ps(&self, spectral_width_pm: f64) -> f64 {
        (self.dispersion_ps_per_nm_km * (spectral_width_pm * 1e-3) * self.length_km).abs()
    }
}

/// Transform-limited duration: `Δν = c·Δλ/λ²`, `Δt = K/Δν`.
pub fn transform_limited_width(spectral_width_pm: f64, wavelength_nm: f64, k: f64) -> Result<f64> {
    check(spectral_width_pm > 0.0, "spectral_width", spectral_width_pm, "must be > 0")?;
    check(wavelength_nm > 0.0, "wavelength", wavelength_nm, "must be > 0")?;
    Ok(k / spectral_bandwidth_hz(spectral_width_pm, wavelength_nm) * 1e12)
}

/// Optical bandwidth in Hz of a spectral width given in wavelength units.
pub fn spectral_bandwidth_hz(spectral_width_pm: f64, wavelength_nm: f64) -> f64 {
    let lambda = wavelength_nm * 1e-9;
    SPEED_OF_LIGHT * (spectral_width_pm * 1e-12) / (lambda * lambda)
}

/// Quadrature sum of independent Gaussian-like widths.
pub fn quadrature(widths: &[f64]) -> f64 {
    widths.iter().map(|w| w * w).sum::<f64>().sqrt()
}

/// Pulse width at the fiber output.
pub fn effective_pulse_width(source: &SourceConfig, channel: &FiberChannel) -> f64 {
    quadrature(&[
        source.pulse_width_ps,
        channel.dispersion_broadening_ps(source.spectral_width_pm),
    ])
}

/// Photon-number statistics of a weak coherent pulse.
#[derive(Debug, Clone, Copy)]
pub struct PhotonNumber {
    poisson: Option<Poisson<f64>>,
}

impl PhotonNumber {
    pub fn new(mu: f64) -> Result<Self> {
        check(mu >= 0.0 && mu.is_finite(), "mu", mu, "must be >= 0")?;
        let poisson = if mu > 0.0 {
            Some(Poisson::new(mu).map_err(|_| crate::Error::InvalidParameter {
                name: "mu",
                value: mu,
                reason: "not a valid Poisson mean",
            })?)
        } else {
            None
        };
        Ok(Self { poisson })
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        match &self.poisson {
            Some(p) => p.sample(rng) as u32,
            None => 0,
        }
    }
}

/// Draws one Poisson photon number with mean `mu`.
pub fn sample_photon_count<R: Rng + ?Sized>(mu: f64, rng: &mut R) -> Result<u32> {
    Ok(PhotonNumber::new(mu)?.sample(rng))
}
