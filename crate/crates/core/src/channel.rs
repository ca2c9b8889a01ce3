//! Uplink/downlink channel model.
//!
//! Large-scale attenuation follows free-space path loss with a configurable
//! exponent; small-scale fading is Rayleigh (`h0 ~ CN(0, 1)`), redrawn every
//! round. Rates are computed from the SINR equations only; no waveform is
//! simulated.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::seed;
use crate::{Error, Result};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Radio parameters shared by every device in the cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelParams {
    /// Carrier wavelength in meters (2.4 GHz by default).
    pub wavelength_m: f64,
    pub path_loss_exponent: f64,
    /// Combined transmit/receive antenna gain (linear).
    pub antenna_gain: f64,
    /// Thermal noise density in dBm/Hz.
    pub noise_density_dbm_per_hz: f64,
    pub uplink_bandwidth_hz: f64,
    pub downlink_bandwidth_hz: f64,
    /// Parameter-server broadcast power in watts.
    pub ps_tx_power_w: f64,
    pub cell_radius_m: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            wavelength_m: SPEED_OF_LIGHT / 2.4e9,
            path_loss_exponent: 3.0,
            antenna_gain: 1.0,
            noise_density_dbm_per_hz: -174.0,
            uplink_bandwidth_hz: 4e6,
            downlink_bandwidth_hz: 10e6,
            ps_tx_power_w: 0.2,
            cell_radius_m: 500.0,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("wavelength_m", self.wavelength_m),
            ("antenna_gain", self.antenna_gain),
            ("uplink_bandwidth_hz", self.uplink_bandwidth_hz),
            ("downlink_bandwidth_hz", self.downlink_bandwidth_hz),
            ("ps_tx_power_w", self.ps_tx_power_w),
            ("cell_radius_m", self.cell_radius_m),
        ];
        for (field, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(field, format!("must be positive, got {v}")));
            }
        }
        if !(self.path_loss_exponent.is_finite() && self.path_loss_exponent >= 2.0) {
            return Err(Error::config(
                "path_loss_exponent",
                format!("must be at least 2, got {}", self.path_loss_exponent),
            ));
        }
        if !self.noise_density_dbm_per_hz.is_finite() {
            return Err(Error::config("noise_density_dbm_per_hz", "must be finite"));
        }
        Ok(())
    }

    /// Noise density converted to W/Hz.
    pub fn noise_density_w_per_hz(&self) -> f64 {
        10f64.powf((self.noise_density_dbm_per_hz - 30.0) / 10.0)
    }

    /// Uplink noise power `N0 * B` in watts.
    pub fn uplink_noise_w(&self) -> f64 {
        self.noise_density_w_per_hz() * self.uplink_bandwidth_hz
    }

    /// Downlink noise power `N0 * B_d` in watts.
    pub fn downlink_noise_w(&self) -> f64 {
        self.noise_density_w_per_hz() * self.downlink_bandwidth_hz
    }

    /// Amplitude path gain for a device at `distance_m`.
    pub fn path_loss(&self, distance_m: f64) -> Result<f64> {
        path_loss(
            self.antenna_gain,
            self.wavelength_m,
            distance_m,
            self.path_loss_exponent,
        )
    }
}

/// Free-space amplitude gain `sqrt(gain) * wavelength / (4 pi d^(alpha/2))`.
pub fn path_loss(antenna_gain: f64, wavelength: f64, distance: f64, exponent: f64) -> Result<f64> {
    if !(distance > 0.0) {
        return Err(Error::domain(format!("distance must be positive, got {distance}")));
    }
    if !(wavelength > 0.0) {
        return Err(Error::domain(format!("wavelength must be positive, got {wavelength}")));
    }
    if !(antenna_gain > 0.0) {
        return Err(Error::domain(format!(
            "antenna gain must be positive, got {antenna_gain}"
        )));
    }
    Ok(antenna_gain.sqrt() * wavelength / (4.0 * PI * distance.powf(exponent / 2.0)))
}

/// One device's channel in one round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelRealization {
    pub device: usize,
    pub round: usize,
    /// Path-loss amplitude `L`.
    pub large_scale: f64,
    /// Rayleigh coefficient `h0`.
    pub small_scale: Complex64,
}

impl ChannelRealization {
    pub fn composite(&self) -> Complex64 {
        self.small_scale * self.large_scale
    }

    /// `|L h0|^2`.
    pub fn squared_gain(&self) -> f64 {
        self.large_scale * self.large_scale * self.small_scale.norm_sqr()
    }
}

/// Draws the fading coefficient for `(device, round)` from a stream keyed by
/// `(seed, device, round)`. The same key always yields the same realization.
pub fn draw_channel(seed: u64, device: usize, round: usize, large_scale: f64) -> ChannelRealization {
    let mut rng = seed::keyed_rng(seed, &[device as u64, round as u64]);
    let re: f64 = StandardNormal.sample(&mut rng);
    let im: f64 = StandardNormal.sample(&mut rng);
    ChannelRealization {
        device,
        round,
        large_scale,
        small_scale: Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2,
    }
}

/// SIC decoding outcome for one NOMA group.
///
/// Per-device vectors are indexed like the inputs to [`noma_rates`];
/// `decode_order` lists input indices strongest first.
#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub decode_order: Vec<usize>,
    pub sinr: Vec<f64>,
    /// bits/s/Hz
    pub spectral_efficiency: Vec<f64>,
}

impl RateReport {
    /// Bits deliverable in one slot: `B * R_k * t`.
    pub fn bit_budgets(&self, bandwidth_hz: f64, slot_s: f64) -> Vec<f64> {
        self.spectral_efficiency
            .iter()
            .map(|r| bandwidth_hz * r * slot_s)
            .collect()
    }

    pub fn sum_rate(&self) -> f64 {
        self.spectral_efficiency.iter().sum()
    }

    pub fn weighted_sum_rate(&self, weights: &[f64]) -> f64 {
        self.spectral_efficiency.iter().zip(weights).map(|(r, w)| r * w).sum()
    }
}

/// SIC order: received power `p g` descending, ties by index ascending.
pub fn decode_order(powers: &[f64], gains: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..powers.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = powers[a] * gains[a];
        let rb = powers[b] * gains[b];
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    order
}

/// Uplink NOMA rates with the receiver decoding in received-power order.
pub fn noma_rates(powers: &[f64], gains: &[f64], noise: f64) -> Result<RateReport> {
    check_group(powers, gains, noise)?;
    let order = decode_order(powers, gains);
    Ok(rates_in_order(powers, gains, noise, &order))
}

/// Rates for an explicit decode order; each device sees the devices decoded
/// after it as interference.
pub fn rates_in_order(powers: &[f64], gains: &[f64], noise: f64, order: &[usize]) -> RateReport {
    let n = powers.len();
    let mut sinr = vec![0.0; n];
    let mut se = vec![0.0; n];
    let mut interference = 0.0;
    for &k in order.iter().rev() {
        let rx = powers[k] * gains[k];
        let g = rx / (interference + noise);
        sinr[k] = g;
        se[k] = g.ln_1p() / std::f64::consts::LN_2;
        interference += rx;
    }
    RateReport {
        decode_order: order.to_vec(),
        sinr,
        spectral_efficiency: se,
    }
}

fn check_group(powers: &[f64], gains: &[f64], noise: f64) -> Result<()> {
    if powers.is_empty() {
        return Err(Error::domain("empty device group"));
    }
    if powers.len() != gains.len() {
        return Err(Error::LengthMismatch {
            expected: powers.len(),
            found: gains.len(),
        });
    }
    if !(noise > 0.0) {
        return Err(Error::domain(format!("noise power must be positive, got {noise}")));
    }
    for (i, (&p, &g)) in powers.iter().zip(gains).enumerate() {
        if !(p >= 0.0 && g >= 0.0) || !p.is_finite() || !g.is_finite() {
            return Err(Error::domain(format!(
                "power and gain must be finite and non-negative (index {i}: p={p}, g={g})"
            )));
        }
    }
    Ok(())
}

/// Interference-free rate of a device holding the channel alone.
pub fn tdma_rate(power: f64, gain: f64, noise: f64) -> f64 {
    (power * gain / noise).ln_1p() / std::f64::consts::LN_2
}

/// Broadcast time `max_k I / (B_d log2(1 + p_d gamma_k))` where `gamma_k` is
/// the downlink channel-to-noise ratio of device `k` (it excludes `p_d`).
pub fn downlink_time(model_bits: f64, cnr: &[f64], ps_power: f64, bandwidth_hz: f64) -> Result<f64> {
    if !(model_bits > 0.0) {
        return Err(Error::domain("model size must be positive"));
    }
    if cnr.is_empty() {
        return Err(Error::domain("downlink needs at least one device"));
    }
    let mut worst: f64 = 0.0;
    for (device, &g) in cnr.iter().enumerate() {
        let rate = bandwidth_hz * (ps_power * g).ln_1p() / std::f64::consts::LN_2;
        if !(rate > 0.0) {
            return Err(Error::UnreachableDevice { device });
        }
        worst = worst.max(model_bits / rate);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300)
    }

    #[test]
    fn path_loss_examples() {
        let l = path_loss(1.0, 4.0 * PI, 1.0, 3.0).unwrap();
        assert!((l - 1.0).abs() < 1e-15);
        let l = path_loss(1.0, 4.0 * PI, 2.0, 2.0).unwrap();
        assert!((l - 0.5).abs() < 1e-15);

        // Independent route: the power gain delta lambda^2 / (16 pi^2 d^alpha).
        let power = 0.125f64.powi(2) / (16.0 * PI * PI * 250f64.powi(3));
        let l = path_loss(1.0, 0.125, 250.0, 3.0).unwrap();
        assert!(close(l, power.sqrt(), 1e-12));
        assert!((l - 2.52e-6).abs() < 0.005e-6);
    }

    #[test]
    fn path_loss_rejects_bad_domain() {
        assert!(path_loss(1.0, 0.125, 0.0, 3.0).is_err());
        assert!(path_loss(1.0, -1.0, 10.0, 3.0).is_err());
        assert!(path_loss(0.0, 0.125, 10.0, 3.0).is_err());
    }

    #[test]
    fn path_loss_decreasing() {
        let near = path_loss(1.0, 0.125, 10.0, 3.0).unwrap();
        let far = path_loss(1.0, 0.125, 20.0, 3.0).unwrap();
        let steeper = path_loss(1.0, 0.125, 10.0, 3.5).unwrap();
        assert!(far < near);
        assert!(steeper < near);
    }

    #[test]
    fn default_noise_power() {
        let p = ChannelParams::default();
        let expected = 10f64.powf(-20.4) * 4e6;
        assert!(close(p.uplink_noise_w(), expected, 1e-12));
        assert!((p.uplink_noise_w() - 1.59e-14).abs() < 0.01e-14);
        assert!((p.wavelength_m - 0.125).abs() < 1e-3);
    }

    #[test]
    fn draw_is_deterministic_and_round_keyed() {
        let a = draw_channel(42, 3, 7, 1e-6);
        let b = draw_channel(42, 3, 7, 1e-6);
        let c = draw_channel(42, 3, 8, 1e-6);
        assert_eq!(a, b);
        assert_ne!(a.small_scale, c.small_scale);
        let g = a.squared_gain();
        assert!(close(g, 1e-12 * a.small_scale.norm_sqr(), 1e-12));
        assert!(close(g, a.composite().norm_sqr(), 1e-12));
    }

    #[test]
    fn fading_has_unit_power() {
        let n = 100_000;
        let mean: f64 = (0..n)
            .map(|i| draw_channel(9, i, 0, 1.0).small_scale.norm_sqr())
            .sum::<f64>()
            / n as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean |h0|^2 = {mean}");
    }

    #[test]
    fn noma_examples() {
        let r = noma_rates(&[1.0], &[1.0], 1.0).unwrap();
        assert!((r.spectral_efficiency[0] - 1.0).abs() < 1e-15);

        let r = noma_rates(&[3.0, 1.0], &[1.0, 1.0], 1.0).unwrap();
        assert_eq!(r.decode_order, vec![0, 1]);
        assert!((r.sinr[0] - 1.5).abs() < 1e-15);
        assert!((r.sinr[1] - 1.0).abs() < 1e-15);
        assert!((r.spectral_efficiency[0] - 2.5f64.log2()).abs() < 1e-12);
        assert!((r.spectral_efficiency[1] - 1.0).abs() < 1e-12);
        assert!((r.sum_rate() - 5f64.log2()).abs() < 1e-12);
    }

    #[test]
    fn noma_sorts_internally() {
        // Weaker device listed first; it is decoded last.
        let r = noma_rates(&[1.0, 3.0], &[1.0, 1.0], 1.0).unwrap();
        assert_eq!(r.decode_order, vec![1, 0]);
        assert!((r.sinr[1] - 1.5).abs() < 1e-15);
        assert!((r.sinr[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn noma_tie_breaks_by_index() {
        let r = noma_rates(&[1.0, 1.0, 1.0], &[2.0, 2.0, 2.0], 1.0).unwrap();
        assert_eq!(r.decode_order, vec![0, 1, 2]);
    }

    #[test]
    fn noma_errors() {
        assert!(noma_rates(&[], &[], 1.0).is_err());
        assert!(noma_rates(&[1.0], &[1.0, 2.0], 1.0).is_err());
        assert!(noma_rates(&[1.0], &[1.0], 0.0).is_err());
        assert!(noma_rates(&[-1.0], &[1.0], 1.0).is_err());
    }

    #[test]
    fn tdma_examples() {
        assert!((tdma_rate(3.0, 1.0, 1.0) - 2.0).abs() < 1e-15);
        assert_eq!(tdma_rate(0.0, 5.0, 1.0), 0.0);
        assert!((tdma_rate(2.0, 0.5, 1.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn downlink_examples() {
        // B_d log2(1 + p_d gamma) = I  => 1 s.
        let bits = 1e6;
        let bw = 1e6;
        let t = downlink_time(bits, &[1.0], 1.0, bw).unwrap();
        assert!((t - 1.0).abs() < 1e-12);
        // Rates I and I/2 bits/s => 2 s.
        let t = downlink_time(bits, &[1.0, 2f64.sqrt() - 1.0], 1.0, bw).unwrap();
        assert!((t - 2.0).abs() < 1e-12);
        assert!(matches!(
            downlink_time(bits, &[1.0, 0.0], 1.0, bw),
            Err(Error::UnreachableDevice { device: 1 })
        ));
    }

    #[test]
    fn params_validate() {
        assert!(ChannelParams::default().validate().is_ok());
        let p = ChannelParams {
            path_loss_exponent: 1.5,
            ..Default::default()
        };
        assert!(p.validate().is_err());
        let p = ChannelParams {
            uplink_bandwidth_hz: 0.0,
            ..Default::default()
        };
        assert!(p.validate().is_err());
    }

    proptest! {
        #[test]
        fn sic_sum_telescopes(
            group in prop::collection::vec((1e-3f64..10.0, 1e-3f64..10.0), 1..=6),
            noise in 1e-3f64..5.0,
        ) {
            let (p, g): (Vec<f64>, Vec<f64>) = group.into_iter().unzip();
            let r = noma_rates(&p, &g, noise).unwrap();
            let total: f64 = p.iter().zip(&g).map(|(p, g)| p * g).sum();
            let capacity = (total / noise).ln_1p() / std::f64::consts::LN_2;
            prop_assert!(close(r.sum_rate(), capacity, 1e-9));
            // Any other decode order telescopes too.
            let rev: Vec<usize> = r.decode_order.iter().rev().copied().collect();
            let alt = rates_in_order(&p, &g, noise, &rev);
            prop_assert!(close(alt.sum_rate(), capacity, 1e-9));
        }

        #[test]
        fn last_device_power_monotone(
            group in prop::collection::vec((0.1f64..10.0, 0.1f64..10.0), 2..=5),
            bump in 1.01f64..3.0,
        ) {
            let (p, g): (Vec<f64>, Vec<f64>) = group.into_iter().unzip();
            let order = decode_order(&p, &g);
            let last = *order.last().unwrap();
            let before = rates_in_order(&p, &g, 1.0, &order);
            let mut p2 = p.clone();
            p2[last] *= bump;
            let after = rates_in_order(&p2, &g, 1.0, &order);
            prop_assert!(after.spectral_efficiency[last] > before.spectral_efficiency[last]);
            for &k in &order[..order.len() - 1] {
                prop_assert!(after.spectral_efficiency[k] <= before.spectral_efficiency[k]);
            }
        }
    }
}
