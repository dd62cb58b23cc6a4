//! 802.11p link model: Friis path loss, unit-mean fading and the
//! sensitivity rule for each data rate.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ModulationEntry {
    /// Mbps.
    pub data_rate: f64,
    pub modulation: &'static str,
    /// dBm.
    pub sensitivity: f64,
}

/// Supported rates with their modulation and receiver sensitivity.
pub const MODULATION_TABLE: [ModulationEntry; 4] = [
    ModulationEntry { data_rate: 3.0, modulation: "BPSK", sensitivity: -85.0 },
    ModulationEntry { data_rate: 9.0, modulation: "QPSK", sensitivity: -80.0 },
    ModulationEntry { data_rate: 18.0, modulation: "16QAM", sensitivity: -73.0 },
    ModulationEntry { data_rate: 27.0, modulation: "64QAM", sensitivity: -68.0 },
];

/// Rician K factors used in the reference experiments.
pub const REFERENCE_K_FACTORS: [f64; 4] = [0.0, 1.8, 2.6, 3.0];

pub fn modulation_for_rate(data_rate: f64) -> Result<ModulationEntry> {
    MODULATION_TABLE
        .iter()
        .copied()
        .find(|e| (e.data_rate - data_rate).abs() < 1e-9)
        .ok_or_else(|| {
            Error::InvalidParameter(format!(
                "unsupported data rate {data_rate} Mbps (expected one of 3, 9, 18, 27)"
            ))
        })
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    db_to_linear(dbm)
}

pub fn mw_to_dbm(mw: f64) -> f64 {
    linear_to_db(mw)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Fading {
    /// Rician with the config's `k_factor` (Rayleigh when it is zero).
    Rician,
    Nakagami { m: f64 },
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelConfig {
    /// Hz.
    pub frequency: f64,
    /// Hz.
    pub bandwidth: f64,
    /// dBm.
    pub tx_power: f64,
    pub alpha: f64,
    pub g_t: f64,
    pub g_r: f64,
    pub k_factor: f64,
    pub fading: Fading,
    /// Mbps.
    pub data_rate: f64,
    /// dBm.
    pub sensitivity: f64,
    /// Metres.
    pub max_range: f64,
    /// Draw Rician fades by inverse transform from one uniform per packet,
    /// so runs that share a seed lose nested packet sets as K or the
    /// sensitivity changes.
    pub inverse_cdf: bool,
    pub seed: u64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            frequency: 5.9e9,
            bandwidth: 10e6,
            tx_power: 20.0,
            alpha: 2.0,
            g_t: 1.0,
            g_r: 1.0,
            k_factor: 3.0,
            fading: Fading::Rician,
            data_rate: 18.0,
            sensitivity: -73.0,
            max_range: 100.0,
            inverse_cdf: false,
            seed: 0,
        }
    }
}

impl ChannelConfig {
    /// Default link at a supported rate, with sensitivity from the table.
    pub fn for_rate(data_rate: f64, k_factor: f64) -> Result<Self> {
        let entry = modulation_for_rate(data_rate)?;
        Ok(ChannelConfig {
            data_rate,
            sensitivity: entry.sensitivity,
            k_factor,
            ..ChannelConfig::default()
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.frequency > 0.0) || !(self.bandwidth > 0.0) {
            return bad("frequency and bandwidth must be positive".into());
        }
        if !(self.alpha > 0.0) || !(self.g_t > 0.0) || !(self.g_r > 0.0) {
            return bad("path-loss exponent and antenna gains must be positive".into());
        }
        if !(self.k_factor >= 0.0) {
            return bad(format!("K factor must be non-negative, got {}", self.k_factor));
        }
        if let Fading::Nakagami { m } = self.fading {
            if !(m >= 0.5) {
                return bad(format!("Nakagami m must be at least 0.5, got {m}"));
            }
        }
        if !(self.data_rate > 0.0) || !(self.max_range > 0.0) || self.tx_power.is_nan() || self.sensitivity.is_nan() {
            return bad("data rate and range must be positive".into());
        }
        Ok(())
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.frequency
    }

    /// Seconds to serialize `bytes` at the configured rate.
    pub fn transmission_time(&self, bytes: usize) -> f64 {
        (bytes * 8) as f64 / (self.data_rate * 1e6)
    }
}

/// Friis gain `lambda^2 / ((4 pi)^2 d^alpha) * G_R * G_T`.
pub fn path_loss(distance: f64, cfg: &ChannelConfig) -> Result<f64> {
    if !(distance > 0.0) || !distance.is_finite() {
        return Err(Error::InvalidParameter(format!("distance must be positive, got {distance}")));
    }
    let lambda = cfg.wavelength();
    Ok(lambda * lambda / ((4.0 * PI).powi(2) * distance.powf(cfg.alpha)) * cfg.g_r * cfg.g_t)
}

/// Power gain of a Rician channel with unit-normalized mean power: the
/// squared magnitude of a line-of-sight component of power `K / (K + 1)` plus
/// complex Gaussian scatter of power `1 / (K + 1)`.
pub fn sample_rician<R: Rng + ?Sized>(k_factor: f64, mean_power: f64, rng: &mut R) -> Result<f64> {
    if !(k_factor >= 0.0) || !(mean_power >= 0.0) {
        return Err(Error::InvalidParameter("K factor and mean power must be non-negative".into()));
    }
    let rho = (k_factor / (k_factor + 1.0)).sqrt();
    let sigma = (0.5 / (k_factor + 1.0)).sqrt();
    let i: f64 = rng.sample(StandardNormal);
    let q: f64 = rng.sample(StandardNormal);
    let (re, im) = (rho + sigma * i, sigma * q);
    Ok(mean_power * (re * re + im * im))
}

/// Nakagami-m power gain: `Gamma(m, mean_power / m)`.
pub fn sample_nakagami<R: Rng + ?Sized>(m: f64, mean_power: f64, rng: &mut R) -> Result<f64> {
    if !(m >= 0.5) {
        return Err(Error::InvalidParameter(format!("Nakagami m must be at least 0.5, got {m}")));
    }
    if !(mean_power > 0.0) {
        return Err(Error::InvalidParameter("mean power must be positive".into()));
    }
    let g = Gamma::new(m, mean_power / m).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    Ok(g.sample(rng))
}

/// CDF of the Rician power gain, as a Poisson(K) mixture of
/// `Gamma(j + 1)` laws in `(K + 1) x / mean_power`.
pub fn rician_power_cdf(x: f64, k_factor: f64, mean_power: f64) -> f64 {
    if !(x > 0.0) {
        return 0.0;
    }
    let h = (k_factor + 1.0) * x / mean_power;
    let mut pois = (-k_factor).exp();
    let mut mass = 0.0;
    // P(Gamma(j + 1, 1) <= h), updated by peeling off one Poisson(h) term
    let mut term = (-h).exp();
    let mut gamma_cdf = -(-h).exp_m1();
    let mut total = 0.0;
    for j in 0..10_000 {
        total += pois * gamma_cdf;
        mass += pois;
        if 1.0 - mass < 1e-16 || gamma_cdf <= 0.0 {
            break;
        }
        let next = j as f64 + 1.0;
        pois *= k_factor / next;
        term *= h / next;
        gamma_cdf = (gamma_cdf - term).max(0.0);
    }
    total.clamp(0.0, 1.0)
}

/// Inverse of [`rician_power_cdf`] by bisection.
pub fn rician_power_quantile(u: f64, k_factor: f64, mean_power: f64) -> f64 {
    if !(u > 0.0) {
        return 0.0;
    }
    let u = u.min(1.0 - 1e-16);
    let mut hi = mean_power;
    while rician_power_cdf(hi, k_factor, mean_power) < u {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..64 {
        let mid = 0.5 * (lo + hi);
        if rician_power_cdf(mid, k_factor, mean_power) < u {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Nakagami shape with the same first two power moments as Rician `K`.
pub fn nakagami_m_for_rician(k_factor: f64) -> f64 {
    (k_factor + 1.0).powi(2) / (2.0 * k_factor + 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkSample {
    pub distance: f64,
    pub pl_linear: f64,
    pub fade: f64,
    pub pr_dbm: f64,
    pub delivered: bool,
}

pub fn sample_fade<R: Rng + ?Sized>(cfg: &ChannelConfig, rng: &mut R) -> Result<f64> {
    match cfg.fading {
        Fading::Rician if cfg.inverse_cdf => Ok(rician_power_quantile(rng.random::<f64>(), cfg.k_factor, 1.0)),
        Fading::Rician => sample_rician(cfg.k_factor, 1.0, rng),
        Fading::Nakagami { m } => sample_nakagami(m, 1.0, rng),
        Fading::None => Ok(1.0),
    }
}

/// One packet over the link: `P_r = P_t * P_L * zeta`, delivered when the
/// received power reaches the sensitivity and the receiver is in range.
pub fn link_sample<R: Rng + ?Sized>(distance: f64, cfg: &ChannelConfig, rng: &mut R) -> Result<LinkSample> {
    let pl = path_loss(distance, cfg)?;
    let fade = sample_fade(cfg, rng)?;
    let pr_dbm = cfg.tx_power + linear_to_db(pl * fade);
    Ok(LinkSample {
        distance,
        pl_linear: pl,
        fade,
        pr_dbm,
        delivered: pr_dbm >= cfg.sensitivity && distance <= cfg.max_range,
    })
}
