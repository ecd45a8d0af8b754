//! Downlink channel: distance-based average power with a deterministic
//! excess loss, Nakagami-m power fading, thermal noise, and the Monte-Carlo
//! SINR coverage loop shared by every simulator.

use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("distance must be positive, got {0}")]
    NonpositiveDistance(f64),
    #[error("invalid channel parameters: {0}")]
    InvalidParams(String),
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    db_to_linear(dbm - 30.0)
}

/// User-facing channel configuration in dB units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub tx_power_dbm: f64,
    pub bandwidth_hz: f64,
    pub noise_psd_dbm_hz: f64,
    pub sinr_threshold_db: f64,
    pub extra_loss_los_db: f64,
    pub extra_loss_nlos_db: f64,
    pub pathloss_exp_los: f64,
    pub pathloss_exp_nlos: f64,
    pub nakagami_m_los: f64,
    pub nakagami_m_nlos: f64,
    pub bs_height_m: f64,
    pub r_max_m: f64,
    pub n_iter: usize,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            tx_power_dbm: 30.0,
            bandwidth_hz: 10e6,
            noise_psd_dbm_hz: -174.0,
            sinr_threshold_db: 0.0,
            extra_loss_los_db: -38.6,
            extra_loss_nlos_db: -59.5,
            pathloss_exp_los: 2.0,
            pathloss_exp_nlos: 3.0,
            nakagami_m_los: 2.0,
            nakagami_m_nlos: 1.0,
            bs_height_m: 20.0,
            r_max_m: 2000.0,
            n_iter: 2000,
        }
    }
}

/// Channel parameters in linear units (watts, meters).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub tx_power_w: f64,
    pub bandwidth_hz: f64,
    pub noise_psd_dbm_hz: f64,
    pub sinr_threshold_linear: f64,
    pub extra_loss_los: f64,
    pub extra_loss_nlos: f64,
    pub pathloss_exp_los: f64,
    pub pathloss_exp_nlos: f64,
    pub nakagami_m_los: f64,
    pub nakagami_m_nlos: f64,
    pub bs_height_m: f64,
    pub r_max_m: f64,
    pub n_iter: usize,
}

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams::from_config(&ChannelConfig::default()).expect("default channel is valid")
    }
}

impl ChannelParams {
    pub fn from_config(c: &ChannelConfig) -> Result<Self, ChannelError> {
        let p = Self {
            tx_power_w: dbm_to_watts(c.tx_power_dbm),
            bandwidth_hz: c.bandwidth_hz,
            noise_psd_dbm_hz: c.noise_psd_dbm_hz,
            sinr_threshold_linear: db_to_linear(c.sinr_threshold_db),
            extra_loss_los: db_to_linear(c.extra_loss_los_db),
            extra_loss_nlos: db_to_linear(c.extra_loss_nlos_db),
            pathloss_exp_los: c.pathloss_exp_los,
            pathloss_exp_nlos: c.pathloss_exp_nlos,
            nakagami_m_los: c.nakagami_m_los,
            nakagami_m_nlos: c.nakagami_m_nlos,
            bs_height_m: c.bs_height_m,
            r_max_m: c.r_max_m,
            n_iter: c.n_iter,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        let bad = |m: String| Err(ChannelError::InvalidParams(m));
        let positive = [
            ("tx_power_w", self.tx_power_w),
            ("bandwidth_hz", self.bandwidth_hz),
            ("extra_loss_los", self.extra_loss_los),
            ("extra_loss_nlos", self.extra_loss_nlos),
            ("bs_height_m", self.bs_height_m),
            ("r_max_m", self.r_max_m),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if !(self.sinr_threshold_linear >= 0.0) {
            return bad("sinr threshold must be nonnegative".into());
        }
        if !(self.pathloss_exp_los >= 2.0 && self.pathloss_exp_nlos >= 2.0) {
            return bad("path-loss exponents must be >= 2".into());
        }
        let m = self.nakagami_m_los;
        if !(m >= 1.0 && m.fract() == 0.0) {
            return bad(format!("LoS Nakagami m must be an integer >= 1, got {m}"));
        }
        if !(self.nakagami_m_nlos >= 1.0) {
            return bad("NLoS Nakagami m must be >= 1".into());
        }
        if self.n_iter == 0 {
            return bad("n_iter must be >= 1".into());
        }
        Ok(())
    }

    pub fn with_threshold_db(mut self, db: f64) -> Self {
        self.sinr_threshold_linear = db_to_linear(db);
        self
    }

    fn branch(&self, los: bool) -> (f64, f64) {
        if los {
            (self.extra_loss_los, self.pathloss_exp_los)
        } else {
            (self.extra_loss_nlos, self.pathloss_exp_nlos)
        }
    }

    pub fn nakagami_m(&self, los: bool) -> f64 {
        if los {
            self.nakagami_m_los
        } else {
            self.nakagami_m_nlos
        }
    }
}

/// `rho * eta * d^-alpha` for the LoS or NLoS branch.
pub fn avg_received_power(params: &ChannelParams, d_m: f64, los: bool) -> Result<f64, ChannelError> {
    if !(d_m > 0.0) {
        return Err(ChannelError::NonpositiveDistance(d_m));
    }
    let (eta, alpha) = params.branch(los);
    Ok(params.tx_power_w * eta * d_m.powf(-alpha))
}

pub fn noise_power(params: &ChannelParams) -> f64 {
    dbm_to_watts(params.noise_psd_dbm_hz + 10.0 * params.bandwidth_hz.log10())
}

/// Unit-mean Gamma(m, 1/m) power gain sampler.
#[derive(Clone, Debug)]
pub enum NakagamiGain {
    /// Integer shape: mean of `m` unit exponentials.
    Erlang(u32),
    General(Gamma<f64>),
}

impl NakagamiGain {
    pub fn new(m: f64) -> Self {
        assert!(m >= 1.0, "Nakagami m must be >= 1, got {m}");
        if m.fract() == 0.0 && m <= 64.0 {
            NakagamiGain::Erlang(m as u32)
        } else {
            NakagamiGain::General(Gamma::new(m, 1.0 / m).expect("valid gamma"))
        }
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            NakagamiGain::Erlang(1) => Exp1.sample(rng),
            NakagamiGain::Erlang(k) => {
                let s: f64 = (0..*k).map(|_| -> f64 { Exp1.sample(rng) }).sum();
                s / *k as f64
            }
            NakagamiGain::General(g) => g.sample(rng),
        }
    }
}

pub fn sample_nakagami_power<R: Rng + ?Sized>(m: f64, rng: &mut R) -> f64 {
    NakagamiGain::new(m).sample(rng)
}

/// Per-link state after blockage resolution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkState {
    pub distance_m: f64,
    pub blocked: bool,
    pub avg_power_w: f64,
}

impl LinkState {
    pub fn new(params: &ChannelParams, distance_m: f64, blocked: bool) -> Result<Self, ChannelError> {
        Ok(Self {
            distance_m,
            blocked,
            avg_power_w: avg_received_power(params, distance_m, !blocked)?,
        })
    }
}

/// Index of the strongest average power; lowest index wins ties.
pub fn strongest_link(links: &[LinkState]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, l) in links.iter().enumerate() {
        if best.is_none_or(|b| l.avg_power_w > links[b].avg_power_w) {
            best = Some(i);
        }
    }
    best
}

/// Fraction of `n_iter` fading realizations with SINR above the threshold.
pub fn coverage_trials<R: Rng + ?Sized>(
    params: &ChannelParams,
    links: &[LinkState],
    associated_index: usize,
    n_iter: usize,
    rng: &mut R,
) -> f64 {
    assert!(associated_index < links.len(), "associated index out of range");
    assert!(n_iter >= 1);
    let gamma = params.sinr_threshold_linear;
    if gamma.is_infinite() {
        return 0.0;
    }
    let noise = noise_power(params);
    let los = NakagamiGain::new(params.nakagami_m_los);
    let nlos = NakagamiGain::new(params.nakagami_m_nlos);
    let mut covered = 0usize;
    for _ in 0..n_iter {
        let mut signal = 0.0;
        let mut interference = 0.0;
        for (i, l) in links.iter().enumerate() {
            let g = if l.blocked { nlos.sample(rng) } else { los.sample(rng) };
            let s = l.avg_power_w * g;
            if i == associated_index {
                signal = s;
            } else {
                interference += s;
            }
        }
        if signal > gamma * (interference + noise) {
            covered += 1;
        }
    }
    covered as f64 / n_iter as f64
}

/// [`coverage_trials`] with `params.n_iter` realizations.
pub fn coverage_from_links<R: Rng + ?Sized>(
    params: &ChannelParams,
    links: &[LinkState],
    associated_index: usize,
    rng: &mut R,
) -> f64 {
    coverage_trials(params, links, associated_index, params.n_iter, rng)
}
