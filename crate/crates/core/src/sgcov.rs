//! Stochastic-geometry coverage for a homogeneous base-station process with
//! independent LoS marks: the exact double integral, its trained two-term
//! closed form `c1 l c2^l + c3 l c4^l`, the coefficient database and the
//! per-receive-point lookup.
//!
//! Densities are per m^2 in the integral layer and per km^2 in the closed
//! form and database.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{noise_power, ChannelParams, NakagamiGain};
use crate::geometry::Point;
use crate::ingest::CityModel;
use crate::losmodel::{self, A2glpmParams, LosError, PolyCoeffTable, SCENARIO_AB};
use crate::lsq::{self, ClosureProblem, LmOptions};
use crate::quad;
use crate::rng::{item_stream, Purpose};
use crate::simcore::type1_blockage;

const PER_KM2: f64 = 1e-6;
const QUAD_REL_TOL: f64 = 1e-5;
const INNER_REL_TOL: f64 = 1e-7;
const R_MAX_CAP_M: f64 = 20_000.0;

#[derive(Debug, Error, PartialEq)]
pub enum SgError {
    #[error("distance {r} outside [{lo}, {hi}]")]
    OutOfRange { r: f64, lo: f64, hi: f64 },
    #[error("quadrature did not reach tolerance (error {error:e} on value {value:e})")]
    QuadratureFailure { value: f64, error: f64 },
    #[error("least-squares fit diverged: {0}")]
    FitDiverged(String),
    #[error("objective has no maximum on the search interval")]
    ArgmaxNotFound,
    #[error("coefficient database is empty")]
    EmptyDatabase,
    #[error("no R_max up to {cap} m satisfies the criteria")]
    Unsatisfiable { cap: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("database i/o: {0}")]
    Io(String),
    #[error(transparent)]
    Los(#[from] LosError),
}

/// LoS probability as a function of 3D link length, for a fixed (a, b) and
/// transmitter height.
#[derive(Clone, Copy, Debug)]
struct Terrain {
    ab: A2glpmParams,
    h: f64,
}

impl Terrain {
    fn new(a: f64, b: f64, ch: &ChannelParams) -> Result<Self, SgError> {
        Ok(Self {
            ab: A2glpmParams::new(a, b)?,
            h: ch.bs_height_m,
        })
    }

    #[inline]
    fn p(&self, l: f64) -> f64 {
        let g = (l * l - self.h * self.h).max(0.0).sqrt();
        let theta = if g == 0.0 { 90.0 } else { (self.h / g).atan().to_degrees() };
        self.ab.p_los_elevation(theta)
    }
}

fn checked(q: quad::Quadrature, abs_tol: f64, rel_tol: f64) -> Result<f64, SgError> {
    if q.error > 10.0 * abs_tol.max(rel_tol * q.value.abs()) {
        return Err(SgError::QuadratureFailure { value: q.value, error: q.error });
    }
    Ok(q.value)
}

fn integrate<F: FnMut(f64) -> f64>(f: F, a: f64, b: f64, rel: f64) -> Result<f64, SgError> {
    checked(quad::integrate(f, a, b, 1e-14, rel, 400), 1e-14, rel)
}

/// `int_h^r l p(l) dl`.
fn los_mass(t: &Terrain, r: f64) -> Result<f64, SgError> {
    integrate(|l| l * t.p(l), t.h, r, INNER_REL_TOL)
}

fn check_range(r: f64, ch: &ChannelParams) -> Result<(), SgError> {
    let (lo, hi) = (ch.bs_height_m, ch.r_max_m);
    if !(r >= lo * (1.0 - 1e-12) && r <= hi * (1.0 + 1e-12)) {
        return Err(SgError::OutOfRange { r, lo, hi });
    }
    Ok(())
}

/// Density of the distance to the nearest LoS base station.
pub fn f_los_pdf(a: f64, b: f64, lambda_per_m2: f64, r: f64, ch: &ChannelParams) -> Result<f64, SgError> {
    check_range(r, ch)?;
    if lambda_per_m2 == 0.0 {
        return Ok(0.0);
    }
    let t = Terrain::new(a, b, ch)?;
    Ok(pdf_at(&t, lambda_per_m2, r, los_mass(&t, r)?))
}

#[inline]
fn pdf_at(t: &Terrain, lambda: f64, r: f64, mass: f64) -> f64 {
    2.0 * PI * lambda * t.p(r) * r * (-2.0 * PI * lambda * mass).exp()
}

/// Probability that at least one LoS base station lies within `r`.
#[cfg(test)]
fn los_cdf(t: &Terrain, lambda: f64, r: f64) -> Result<f64, SgError> {
    Ok(1.0 - (-2.0 * PI * lambda * los_mass(t, r)?).exp())
}

/// Laplace transform of interference plus noise seen by a receiver served
/// by a LoS base station at distance `r`.
pub fn laplace_interference(
    a: f64,
    b: f64,
    lambda_per_m2: f64,
    s: f64,
    r: f64,
    ch: &ChannelParams,
    include_nlos: bool,
) -> Result<f64, SgError> {
    check_range(r, ch)?;
    if !(s >= 0.0) {
        return Err(SgError::InvalidConfig(format!("s must be >= 0, got {s}")));
    }
    let t = Terrain::new(a, b, ch)?;
    laplace_at(&t, lambda_per_m2, s, r, ch, include_nlos)
}

fn laplace_at(
    t: &Terrain,
    lambda: f64,
    s: f64,
    r: f64,
    ch: &ChannelParams,
    include_nlos: bool,
) -> Result<f64, SgError> {
    if s == 0.0 {
        return Ok(1.0);
    }
    let mut exponent = s * noise_power(ch);
    if lambda > 0.0 && r < ch.r_max_m {
        let (m, sp, al) = (ch.nakagami_m_los, s * ch.extra_loss_los * ch.tx_power_w, ch.pathloss_exp_los);
        let los = integrate(
            |l| (1.0 - (m / (m + sp * l.powf(-al))).powf(m)) * l * t.p(l),
            r,
            ch.r_max_m,
            INNER_REL_TOL,
        )?;
        exponent += 2.0 * PI * lambda * los;
    }
    if include_nlos && lambda > 0.0 {
        let (m, sp, an) = (ch.nakagami_m_nlos, s * ch.extra_loss_nlos * ch.tx_power_w, ch.pathloss_exp_nlos);
        // Only NLoS stations weaker on average than the serving LoS link interfere.
        let lo = (ch.extra_loss_nlos / ch.extra_loss_los)
            .powf(1.0 / an)
            * r.powf(ch.pathloss_exp_los / an);
        let lo = lo.max(ch.bs_height_m);
        if lo < ch.r_max_m {
            let nlos = integrate(
                |l| (1.0 - (m / (m + sp * l.powf(-an))).powf(m)) * l * (1.0 - t.p(l)),
                lo,
                ch.r_max_m,
                INNER_REL_TOL,
            )?;
            exponent += 2.0 * PI * lambda * nlos;
        }
    }
    Ok((-exponent).exp())
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Gamma-tail approximation constant `m (m!)^(-1/m)`.
fn alzer(m: f64) -> f64 {
    let fact: f64 = (1..=m as u32).map(|k| k as f64).product();
    m * fact.powf(-1.0 / m)
}

/// Coverage probability by nested quadrature.
pub fn coverage_integral(a: f64, b: f64, lambda_per_m2: f64, ch: &ChannelParams) -> Result<f64, SgError> {
    coverage_integral_with(a, b, lambda_per_m2, ch, false)
}

pub fn coverage_integral_with(
    a: f64,
    b: f64,
    lambda_per_m2: f64,
    ch: &ChannelParams,
    include_nlos: bool,
) -> Result<f64, SgError> {
    if !(lambda_per_m2 >= 0.0) {
        return Err(SgError::InvalidConfig("density must be >= 0".into()));
    }
    if lambda_per_m2 == 0.0 {
        return Ok(0.0);
    }
    let t = Terrain::new(a, b, ch)?;
    let m = ch.nakagami_m_los as u32;
    let eta_m = alzer(ch.nakagami_m_los);
    let scale = ch.sinr_threshold_linear / (ch.tx_power_w * ch.extra_loss_los);
    let mut failure = None;
    let value = integrate(
        |r| {
            let inner = || -> Result<f64, SgError> {
                let mass = los_mass(&t, r)?;
                let pdf = pdf_at(&t, lambda_per_m2, r, mass);
                let mut acc = 0.0;
                for k in 1..=m {
                    let s = k as f64 * eta_m * scale * r.powf(ch.pathloss_exp_los);
                    let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                    acc += sign * binomial(m, k) * laplace_at(&t, lambda_per_m2, s, r, ch, include_nlos)?;
                }
                Ok(pdf * acc)
            };
            inner().unwrap_or_else(|e| {
                failure.get_or_insert(e);
                0.0
            })
        },
        ch.bs_height_m,
        ch.r_max_m,
        QUAD_REL_TOL,
    )?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(value.clamp(0.0, 1.0))
}

/// Monte-Carlo coverage with base stations drawn as a Poisson process in
/// the disk whose 3D distances reach `ch.r_max_m`, LoS marks drawn
/// independently per station and service from the strongest LoS station.
pub fn symmetric_scenario_coverage(
    a: f64,
    b: f64,
    lambda_per_m2: f64,
    ch: &ChannelParams,
    n_iter: usize,
    seed: u64,
) -> Result<f64, SgError> {
    symmetric_scenario_stream(a, b, lambda_per_m2, ch, n_iter, seed, 0)
}

pub fn symmetric_scenario_stream(
    a: f64,
    b: f64,
    lambda_per_m2: f64,
    ch: &ChannelParams,
    n_iter: usize,
    seed: u64,
    stream: u64,
) -> Result<f64, SgError> {
    if !(lambda_per_m2 >= 0.0) || n_iter == 0 {
        return Err(SgError::InvalidConfig("density must be >= 0 and n_iter >= 1".into()));
    }
    let t = Terrain::new(a, b, ch)?;
    let h = ch.bs_height_m;
    let g_max2 = ch.r_max_m * ch.r_max_m - h * h;
    let mean = lambda_per_m2 * PI * g_max2;
    if mean <= 0.0 {
        return Ok(0.0);
    }
    let poisson = Poisson::new(mean).map_err(|e| SgError::InvalidConfig(e.to_string()))?;
    let los_gain = NakagamiGain::new(ch.nakagami_m_los);
    let nlos_gain = NakagamiGain::new(ch.nakagami_m_nlos);
    let noise = noise_power(ch);
    let gamma = ch.sinr_threshold_linear;
    let mut rng = item_stream(seed, stream, Purpose::Sampling);
    let mut covered = 0usize;
    let mut powers: Vec<(f64, bool)> = Vec::new();
    for _ in 0..n_iter {
        let n = poisson.sample(&mut rng) as usize;
        powers.clear();
        let mut nearest_los: Option<(usize, f64)> = None;
        for _ in 0..n {
            let g2 = g_max2 * rng.random::<f64>();
            let d = (g2 + h * h).sqrt();
            let los = rng.random::<f64>() < t.p(d);
            let (eta, alpha) = if los {
                (ch.extra_loss_los, ch.pathloss_exp_los)
            } else {
                (ch.extra_loss_nlos, ch.pathloss_exp_nlos)
            };
            let avg = ch.tx_power_w * eta * d.powf(-alpha);
            if los && nearest_los.is_none_or(|(_, best)| avg > best) {
                nearest_los = Some((powers.len(), avg));
            }
            powers.push((avg, los));
        }
        let Some((serving, _)) = nearest_los else {
            continue;
        };
        let mut signal = 0.0;
        let mut interference = 0.0;
        for (i, &(avg, los)) in powers.iter().enumerate() {
            let g = if los { los_gain.sample(&mut rng) } else { nlos_gain.sample(&mut rng) };
            if i == serving {
                signal = avg * g;
            } else {
                interference += avg * g;
            }
        }
        if signal > gamma * (interference + noise) {
            covered += 1;
        }
    }
    Ok(covered as f64 / n_iter as f64)
}

/// One database row.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgCoefficients {
    pub a: f64,
    pub b: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    /// Mean absolute training residual over the density grid; absent for
    /// rows that were not trained here.
    #[serde(default)]
    pub residual: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_max_m: Option<f64>,
}

impl SgCoefficients {
    pub fn new(a: f64, b: f64, c: [f64; 4]) -> Self {
        Self { a, b, c1: c[0], c2: c[1], c3: c[2], c4: c[3], residual: None, r_max_m: None }
    }

    pub fn c(&self) -> [f64; 4] {
        [self.c1, self.c2, self.c3, self.c4]
    }

    /// Closed form without clamping.
    #[inline]
    pub fn raw(&self, lambda_per_km2: f64) -> f64 {
        closed_form_raw(&self.c(), lambda_per_km2)
    }
}

#[inline]
fn closed_form_raw(c: &[f64; 4], l: f64) -> f64 {
    c[0] * l * c[1].powf(l) + c[2] * l * c[3].powf(l)
}

pub fn closed_form_coverage(coeffs: &SgCoefficients, lambda_per_km2: f64) -> f64 {
    if lambda_per_km2 <= 0.0 {
        return 0.0;
    }
    coeffs.raw(lambda_per_km2).clamp(0.0, 1.0)
}

/// `b(a) = p1 + p2 / (1 + exp(p3 (a - p4)))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BCurve {
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
    pub p4: f64,
}

impl BCurve {
    pub fn eval(&self, a: f64) -> f64 {
        self.p1 + self.p2 / (1.0 + (self.p3 * (a - self.p4)).exp())
    }
}

pub fn fit_b_of_a(anchors: &[(f64, f64)]) -> Result<BCurve, SgError> {
    if anchors.len() < 4 {
        return Err(SgError::InvalidConfig("need at least 4 anchors".into()));
    }
    let problem = ClosureProblem::new(4, |p: &[f64]| {
        anchors
            .iter()
            .map(|&(a, b)| p[0] + p[1] / (1.0 + (p[2] * (a - p[3])).exp()) - b)
            .collect()
    });
    let x0 = [0.08, 0.4, 1.0, 7.0];
    let lo = [-1.0, 0.0, 1e-6, -100.0];
    let hi = [1.0, 10.0, 100.0, 100.0];
    let opts = LmOptions { max_iter: 500, ..LmOptions::default() };
    let r = lsq::minimize(&problem, &x0, &lo, &hi, &opts);
    if !r.x.iter().all(|v| v.is_finite()) {
        return Err(SgError::FitDiverged("non-finite curve parameters".into()));
    }
    let c = BCurve { p1: r.x[0], p2: r.x[1], p3: r.x[2], p4: r.x[3] };
    let worst = anchors.iter().map(|&(a, b)| (c.eval(a) - b).abs()).fold(0.0, f64::max);
    if worst > 0.05 {
        return Err(SgError::FitDiverged(format!("anchor residual {worst}")));
    }
    Ok(c)
}

/// Grid scan plus golden-section refinement of the first interior local
/// maximum of `f` on `[lo, hi]`; the global grid maximum when there is none.
fn first_local_max<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64) -> Result<f64, SgError> {
    const N: usize = 4000;
    let xs: Vec<f64> = (0..=N).map(|i| lo * (hi / lo).powf(i as f64 / N as f64)).collect();
    let ys: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    let first = (1..N).find(|&i| ys[i] > ys[i - 1] && ys[i] >= ys[i + 1]);
    let k = match first {
        Some(k) => k,
        None => {
            let (k, _) = ys
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (i, &y)| if y > acc.1 { (i, y) } else { acc });
            if ys.iter().all(|&y| y == ys[0]) {
                return Err(SgError::ArgmaxNotFound);
            }
            if k == 0 || k == N {
                return Ok(xs[k]);
            }
            k
        }
    };
    let (mut a, mut b) = (xs[k - 1], xs[k + 1]);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..100 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if f(c) >= f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    Ok(0.5 * (a + b))
}

/// Starting point for training, read off the mean-value form of the exact
/// integral at representative distances.
pub fn initial_coefficients(a: f64, b: f64, lambda_bar_per_km2: f64, ch: &ChannelParams) -> Result<SgCoefficients, SgError> {
    if !(lambda_bar_per_km2 > 0.0) {
        return Err(SgError::InvalidConfig("mean density must be positive".into()));
    }
    if ch.nakagami_m_los != 2.0 {
        return Err(SgError::InvalidConfig("the two-term closed form needs LoS m = 2".into()));
    }
    let t = Terrain::new(a, b, ch)?;
    let (h, rmax) = (ch.bs_height_m, ch.r_max_m);
    let lambda = lambda_bar_per_km2 * PER_KM2;
    let l_tilde = first_local_max(|l| 2.0 * PI * l * t.p(l), h * (1.0 + 1e-9), rmax)?;
    // Integrand of the LoS mass, tabulated once and accumulated by trapezoids.
    let r_tilde = {
        const N: usize = 4000;
        let xs: Vec<f64> = (0..=N).map(|i| h * (rmax / h).powf(i as f64 / N as f64)).collect();
        let mut mass = 0.0;
        let mut best = (h, f64::NEG_INFINITY);
        for i in 0..=N {
            if i > 0 {
                let (x0, x1) = (xs[i - 1], xs[i]);
                mass += 0.5 * (x1 - x0) * (x0 * t.p(x0) + x1 * t.p(x1));
            }
            let v = 2.0 * PI * xs[i] * pdf_at(&t, lambda, xs[i], mass);
            if v > best.1 {
                best = (xs[i], v);
            }
        }
        best.0
    };
    let m = ch.nakagami_m_los;
    let alpha = ch.pathloss_exp_los;
    let eta_m = alzer(m);
    let snr_scale = ch.sinr_threshold_linear / (ch.tx_power_w * ch.extra_loss_los) * r_tilde.powf(alpha) * noise_power(ch);
    let near = 2.0 * PI * (r_tilde - h) * l_tilde * t.p(l_tilde);
    let far = |k: f64| {
        let q = 1.0 - (m / (m + k * eta_m * ch.sinr_threshold_linear * (r_tilde / l_tilde).powf(alpha))).powf(m);
        2.0 * PI * (rmax - r_tilde) * q * l_tilde * t.p(l_tilde)
    };
    let front = 2.0 * PI * (rmax - h) * r_tilde * t.p(r_tilde) * PER_KM2;
    let c1 = binomial(2, 1) * front * (-eta_m * snr_scale).exp();
    let c3 = -binomial(2, 2) * front * (-2.0 * eta_m * snr_scale).exp();
    let c2 = (-(near + far(1.0)) * PER_KM2).exp();
    let c4 = (-(near + far(2.0)) * PER_KM2).exp();
    Ok(SgCoefficients::new(a, b, [c1, c2, c3, c4]))
}

/// How the truncation radius of each training pair is chosen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RMaxPolicy {
    Fixed(f64),
    /// `(eps1, eps2, eps3)` evaluated at the mean training density.
    Criteria(f64, f64, f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgTrainConfig {
    pub n_ab: usize,
    pub a_range: (f64, f64),
    pub lambda_grid_per_km2: Vec<f64>,
    /// Monte-Carlo realizations per training density.
    pub n_iter: usize,
    pub r_max: RMaxPolicy,
    /// Also train the four reference scenario pairs.
    pub include_anchors: bool,
    /// Weight of a `c1^2 + c3^2` penalty added to the fit. The two exponential
    /// terms are nearly collinear, so without it the split between them drifts.
    pub ridge: f64,
    pub seed: u64,
}

impl Default for SgTrainConfig {
    fn default() -> Self {
        Self {
            n_ab: 128,
            a_range: (4.0, 30.0),
            lambda_grid_per_km2: vec![1.0, 2.0, 3.0, 5.0, 7.0, 10.0, 15.0, 20.0, 30.0, 50.0],
            n_iter: 4000,
            r_max: RMaxPolicy::Fixed(150.0),
            include_anchors: true,
            ridge: 1e-4,
            seed: 0,
        }
    }
}

impl SgTrainConfig {
    pub fn validate(&self) -> Result<(), SgError> {
        let bad = |m: &str| Err(SgError::InvalidConfig(m.into()));
        let g = &self.lambda_grid_per_km2;
        if g.is_empty() || !g.iter().all(|&l| l > 0.0) || g.windows(2).any(|w| w[1] <= w[0]) {
            return bad("density grid must be positive and strictly ascending");
        }
        if self.n_ab == 0 && !self.include_anchors {
            return bad("no (a, b) pairs to train");
        }
        if self.n_iter == 0 {
            return bad("n_iter must be >= 1");
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return bad("ridge weight must be finite and >= 0");
        }
        if !(self.a_range.0 > 0.0 && self.a_range.1 >= self.a_range.0) {
            return bad("a range must be positive and ordered");
        }
        match self.r_max {
            RMaxPolicy::Fixed(r) if !(r > 0.0) => bad("fixed R_max must be positive"),
            RMaxPolicy::Criteria(e1, e2, e3)
                if ![e1, e2, e3].iter().all(|e| *e > 0.0 && *e < 1.0) =>
            {
                bad("R_max criteria must lie in (0, 1)")
            }
            _ => Ok(()),
        }
    }

    pub fn mean_lambda_per_km2(&self) -> f64 {
        self.lambda_grid_per_km2.iter().sum::<f64>() / self.lambda_grid_per_km2.len() as f64
    }
}

/// Smallest truncation radius on a geometric grid beyond which stations are
/// likely blocked, NLoS power is negligible against noise and a LoS server
/// exists with high probability.
pub fn choose_r_max(
    a: f64,
    b: f64,
    lambda_per_km2: f64,
    ch: &ChannelParams,
    eps1: f64,
    eps2: f64,
    eps3: f64,
) -> Result<f64, SgError> {
    if ![eps1, eps2, eps3].iter().all(|e| *e > 0.0 && *e < 1.0) {
        return Err(SgError::InvalidConfig("criteria must lie in (0, 1)".into()));
    }
    let t = Terrain::new(a, b, ch)?;
    let lambda = lambda_per_km2 * PER_KM2;
    let noise = noise_power(ch);
    let mut r = ch.bs_height_m;
    let mut mass = 0.0;
    loop {
        let next = r * 1.1;
        if next > R_MAX_CAP_M * (1.0 + 1e-12) {
            return Err(SgError::Unsatisfiable { cap: R_MAX_CAP_M });
        }
        mass += integrate(|l| l * t.p(l), r, next, INNER_REL_TOL)?;
        r = next;
        let blocked = t.p(r) < eps1;
        let faint = ch.tx_power_w * ch.extra_loss_nlos * r.powf(-ch.pathloss_exp_nlos) < eps2 * noise;
        let served = 1.0 - (-2.0 * PI * lambda * mass).exp() > 1.0 - eps3;
        if blocked && faint && served {
            return Ok(r);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientDb {
    pub curve: BCurve,
    pub lambda_grid_per_km2: Vec<f64>,
    pub entries: Vec<SgCoefficients>,
}

/// Published coefficient rows for the reference scenarios.
pub const TABLE_ROWS: [[f64; 4]; 4] = [
    [0.0889, 0.9315, -0.0290, 0.9807],
    [0.0271, 0.9680, -0.0167, 0.9917],
    [0.0206, 0.9744, -0.0133, 0.9932],
    [0.0028, 0.9999, -0.0031, 0.9929],
];

impl CoefficientDb {
    /// Seed database holding the published reference-scenario rows.
    pub fn reference() -> Self {
        let curve = fit_b_of_a(&SCENARIO_AB).expect("reference anchors fit");
        let entries = SCENARIO_AB
            .iter()
            .zip(TABLE_ROWS)
            .map(|(&(a, b), c)| SgCoefficients::new(a, b, c))
            .collect();
        Self {
            curve,
            lambda_grid_per_km2: SgTrainConfig::default().lambda_grid_per_km2,
            entries,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("db serializes");
        s.push('\n');
        s
    }

    pub fn from_json(s: &str) -> Result<Self, SgError> {
        let db: Self = serde_json::from_str(s).map_err(|e| SgError::Io(e.to_string()))?;
        if db.entries.is_empty() {
            return Err(SgError::EmptyDatabase);
        }
        Ok(db)
    }

    pub fn save(&self, path: &Path) -> Result<(), SgError> {
        std::fs::write(path, self.to_json()).map_err(|e| SgError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, SgError> {
        let s = std::fs::read_to_string(path).map_err(|e| SgError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&s)
    }

    /// Row minimizing `|a_i - a|/a + |b_i - b|/b`; lowest index on ties.
    pub fn nearest(&self, a: f64, b: f64) -> Result<usize, SgError> {
        let mut best: Option<(usize, f64)> = None;
        for (i, e) in self.entries.iter().enumerate() {
            let dev = (e.a - a).abs() / a + (e.b - b).abs() / b;
            if best.is_none_or(|(_, d)| dev < d) {
                best = Some((i, dev));
            }
        }
        best.map(|(i, _)| i).ok_or(SgError::EmptyDatabase)
    }
}

/// Training pairs: `n_ab` points log-spaced in `a` on the fitted curve,
/// followed by the reference anchors when requested.
pub fn training_pairs(cfg: &SgTrainConfig, curve: &BCurve) -> Vec<(f64, f64)> {
    let (lo, hi) = cfg.a_range;
    let mut pairs: Vec<(f64, f64)> = (0..cfg.n_ab)
        .map(|i| {
            let f = if cfg.n_ab == 1 { 0.0 } else { i as f64 / (cfg.n_ab - 1) as f64 };
            let a = lo * (hi / lo).powf(f);
            (a, curve.eval(a))
        })
        .collect();
    if cfg.include_anchors {
        for &p in &SCENARIO_AB {
            if !pairs.contains(&p) {
                pairs.push(p);
            }
        }
    }
    pairs
}

/// Fits one pair's coefficients against Monte-Carlo targets on the grid.
pub fn train_pair(
    a: f64,
    b: f64,
    cfg: &SgTrainConfig,
    ch: &ChannelParams,
    stream: u64,
) -> Result<SgCoefficients, SgError> {
    let lambda_bar = cfg.mean_lambda_per_km2();
    let r_max = match cfg.r_max {
        RMaxPolicy::Fixed(r) => r,
        RMaxPolicy::Criteria(e1, e2, e3) => choose_r_max(a, b, lambda_bar, ch, e1, e2, e3)?,
    };
    let ch = ChannelParams { r_max_m: r_max, ..ch.clone() };
    let grid = &cfg.lambda_grid_per_km2;
    let targets: Vec<f64> = grid
        .iter()
        .enumerate()
        .map(|(j, &l)| {
            let sub = stream * grid.len() as u64 + j as u64;
            symmetric_scenario_stream(a, b, l * PER_KM2, &ch, cfg.n_iter, cfg.seed, sub)
        })
        .collect::<Result<_, _>>()?;
    let init = initial_coefficients(a, b, lambda_bar, &ch)?;
    let problem = ClosureProblem::new(4, |c: &[f64]| {
        let c = [c[0], c[1], c[2], c[3]];
        let mut r: Vec<f64> = grid.iter().zip(&targets).map(|(&l, &y)| closed_form_raw(&c, l) - y).collect();
        if cfg.ridge > 0.0 {
            let w = cfg.ridge.sqrt();
            r.extend([w * c[0], w * c[2]]);
        }
        r
    });
    let lo = [1e-12, 1e-9, -1e3, 1e-9];
    let hi = [1e3, 1.0, -1e-12, 1.0];
    let opts = LmOptions { max_iter: 1000, ftol: 1e-14, xtol: 1e-13, ..LmOptions::default() };
    let fit = lsq::minimize(&problem, &init.c(), &lo, &hi, &opts);
    if !fit.x.iter().all(|v| v.is_finite()) {
        return Err(SgError::FitDiverged(format!("pair ({a}, {b})")));
    }
    let c = [fit.x[0], fit.x[1], fit.x[2], fit.x[3]];
    let residual = grid
        .iter()
        .zip(&targets)
        .map(|(&l, &y)| (closed_form_raw(&c, l) - y).abs())
        .sum::<f64>()
        / grid.len() as f64;
    Ok(SgCoefficients {
        residual: Some(residual),
        r_max_m: Some(r_max),
        ..SgCoefficients::new(a, b, c)
    })
}

pub fn train_coefficients(cfg: &SgTrainConfig, ch: &ChannelParams) -> Result<CoefficientDb, SgError> {
    cfg.validate()?;
    let curve = fit_b_of_a(&SCENARIO_AB)?;
    let pairs = training_pairs(cfg, &curve);
    let entries = pairs
        .par_iter()
        .enumerate()
        .map(|(i, &(a, b))| train_pair(a, b, cfg, ch, i as u64))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CoefficientDb {
        curve,
        lambda_grid_per_km2: cfg.lambda_grid_per_km2.clone(),
        entries,
    })
}

/// Base stations per km^2 within `r_sun_m` of `mrp`.
pub fn local_bs_density_per_km2(city: &CityModel, mrp: Point, r_sun_m: f64) -> f64 {
    let r2 = r_sun_m * r_sun_m;
    let n = city
        .basestations()
        .iter()
        .filter(|b| b.position_m.dist2(mrp) < r2)
        .count();
    n as f64 / (PI * r2 * PER_KM2)
}

/// Constant-time coverage estimate at one receive point.
pub fn sg_coverage(
    city: &CityModel,
    mrp: Point,
    db: &CoefficientDb,
    r_sun_m: f64,
    omega: f64,
    table: &PolyCoeffTable,
) -> Result<f64, SgError> {
    if db.entries.is_empty() {
        return Err(SgError::EmptyDatabase);
    }
    if type1_blockage(city, mrp, &mut Default::default()) {
        return Ok(0.0);
    }
    let lambda = local_bs_density_per_km2(city, mrp, r_sun_m);
    if lambda == 0.0 {
        return Ok(0.0);
    }
    let stats = losmodel::neighborhood_stats(city, mrp, r_sun_m, omega);
    let ab = losmodel::ab_from_stats(&stats, table)?;
    let i = db.nearest(ab.a, ab.b)?;
    Ok(closed_form_coverage(&db.entries[i], lambda))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::dbm_to_watts;
    use crate::rng::seeded;

    fn ch(r_max: f64) -> ChannelParams {
        ChannelParams { r_max_m: r_max, ..ChannelParams::default() }
    }

    #[test]
    fn zero_density_cases() {
        let c = ch(1000.0);
        assert_eq!(f_los_pdf(9.61, 0.16, 0.0, 100.0, &c).unwrap(), 0.0);
        assert_eq!(coverage_integral(9.61, 0.16, 0.0, &c).unwrap(), 0.0);
        let s = 1e10;
        let l = laplace_interference(9.61, 0.16, 0.0, s, 100.0, &c, true).unwrap();
        assert!((l - (-s * noise_power(&c)).exp()).abs() < 1e-15);
        assert_eq!(laplace_interference(9.61, 0.16, 1e-5, 0.0, 100.0, &c, true).unwrap(), 1.0);
        assert!(matches!(f_los_pdf(9.61, 0.16, 1e-5, 5.0, &c), Err(SgError::OutOfRange { .. })));
    }

    #[test]
    fn pdf_integrates_below_one() {
        let c = ch(2000.0);
        let mut prev = 0.0;
        for lam_km2 in [1.0, 10.0, 100.0, 1000.0] {
            let lam = lam_km2 * PER_KM2;
            let total = quad::integrate_default(|r| f_los_pdf(4.88, 0.43, lam, r, &c).unwrap(), 20.0, 2000.0);
            assert!(total <= 1.0 + 1e-9 && total >= prev - 1e-12, "{lam_km2}: {total}");
            prev = total;
        }
        assert!(prev > 0.999);
    }

    #[test]
    fn pdf_reduces_to_ppp_contact_distance() {
        let c = ch(1500.0);
        let lam = 20.0 * PER_KM2;
        for r in [20.0, 50.0, 120.0, 400.0, 1000.0] {
            let got = f_los_pdf(1e-12, 0.4, lam, r, &c).unwrap();
            let want = 2.0 * PI * lam * r * (-PI * lam * (r * r - 400.0)).exp();
            assert!((got - want).abs() < 1e-6 * want.max(1e-12), "r={r}: {got} vs {want}");
        }
    }

    /// Empirical `E[exp(-s (I + noise))]` over LoS interferers beyond `r`.
    fn laplace_mc(a: f64, b: f64, lam: f64, s: f64, r: f64, c: &ChannelParams, n: usize) -> f64 {
        let t = Terrain::new(a, b, c).unwrap();
        let h = c.bs_height_m;
        let (g_lo2, g_hi2) = (r * r - h * h, c.r_max_m * c.r_max_m - h * h);
        let pois = Poisson::new(lam * PI * (g_hi2 - g_lo2)).unwrap();
        let gain = NakagamiGain::new(c.nakagami_m_los);
        let mut rng = seeded(77, 0);
        let mut acc = 0.0;
        for _ in 0..n {
            let k = pois.sample(&mut rng) as usize;
            let mut i = noise_power(c);
            for _ in 0..k {
                let d = (g_lo2 + (g_hi2 - g_lo2) * rng.random::<f64>() + h * h).sqrt();
                if rng.random::<f64>() < t.p(d) {
                    i += c.tx_power_w * c.extra_loss_los * d.powf(-c.pathloss_exp_los) * gain.sample(&mut rng);
                }
            }
            acc += (-s * i).exp();
        }
        acc / n as f64
    }

    #[test]
    fn laplace_matches_monte_carlo() {
        let c = ch(1500.0);
        let lam = 20.0 * PER_KM2;
        for (a, b) in [(4.88, 0.43), (9.61, 0.16)] {
            for r in [40.0, 150.0] {
                let s = 2f64.sqrt() * r * r / (c.tx_power_w * c.extra_loss_los);
                let exact = laplace_interference(a, b, lam, s, r, &c, false).unwrap();
                let mc = laplace_mc(a, b, lam, s, r, &c, 100_000);
                assert!((exact - mc).abs() < 0.01, "({a},{b}) r={r}: {exact} vs {mc}");
                assert!(exact > 0.0 && exact <= 1.0);
            }
        }
    }

    #[test]
    fn nlos_term_only_lowers_laplace() {
        let c = ch(1500.0);
        let s = 1e9;
        let without = laplace_interference(27.23, 0.08, 3e-5, s, 60.0, &c, false).unwrap();
        let with = laplace_interference(27.23, 0.08, 3e-5, s, 60.0, &c, true).unwrap();
        assert!(with < without);
    }

    #[test]
    fn coverage_monotone_in_threshold_and_power() {
        let c = ch(1500.0);
        let lam = 10.0 * PER_KM2;
        let mut prev = 1.0;
        for db in [-6.0, 0.0, 6.0, 12.0] {
            let v = coverage_integral(9.61, 0.16, lam, &c.clone().with_threshold_db(db)).unwrap();
            assert!(v < prev, "{db}: {v}");
            prev = v;
        }
        let lo = coverage_integral(9.61, 0.16, lam, &c).unwrap();
        let hot = ChannelParams { tx_power_w: dbm_to_watts(40.0), ..c };
        assert!(coverage_integral(9.61, 0.16, lam, &hot).unwrap() > lo);
    }

    #[test]
    fn void_probability_at_low_threshold() {
        let c = ch(1200.0).with_threshold_db(-60.0);
        let lam = 5.0 * PER_KM2;
        let t = Terrain::new(9.61, 0.16, &c).unwrap();
        let target = los_cdf(&t, lam, c.r_max_m).unwrap();
        let mc = symmetric_scenario_coverage(9.61, 0.16, lam, &c, 20_000, 3).unwrap();
        assert!((mc - target).abs() < 0.01, "{mc} vs {target}");
        assert_eq!(symmetric_scenario_coverage(9.61, 0.16, 0.0, &c, 100, 3).unwrap(), 0.0);
    }

    #[test]
    fn integral_agrees_with_simulation_suburban() {
        let c = ch(choose_r_max(4.88, 0.43, 14.3, &ChannelParams::default(), 0.05, 0.1, 0.01).unwrap());
        let mut diff = 0.0;
        let grid = [2.0, 5.0, 10.0, 20.0, 50.0];
        for (j, l) in grid.iter().enumerate() {
            let q = coverage_integral(4.88, 0.43, l * PER_KM2, &c).unwrap();
            let s = symmetric_scenario_stream(4.88, 0.43, l * PER_KM2, &c, 10_000, 5, j as u64).unwrap();
            diff += (q - s).abs();
        }
        assert!(diff / grid.len() as f64 <= 0.02, "mean gap {}", diff / grid.len() as f64);
    }

    #[test]
    fn closed_form_examples() {
        let row = SgCoefficients::new(4.88, 0.43, TABLE_ROWS[0]);
        assert_eq!(closed_form_coverage(&row, 0.0), 0.0);
        assert!((closed_form_coverage(&row, 10.0) - 0.19860146625034714).abs() < 1e-12);
        assert!(closed_form_coverage(&row, 5000.0) < 1e-12);
    }

    #[test]
    fn closed_form_has_interior_peak() {
        for c in TABLE_ROWS.iter().take(3) {
            let row = SgCoefficients::new(0.0, 0.0, *c);
            let vals: Vec<f64> = (1..2000).map(|i| row.raw(i as f64 * 0.5)).collect();
            let k = vals
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |a, (i, &v)| if v > a.1 { (i, v) } else { a })
                .0;
            assert!(k > 0 && k < vals.len() - 1);
            let local_maxima = vals.windows(3).filter(|w| w[1] > w[0] && w[1] >= w[2]).count();
            assert_eq!(local_maxima, 1);
            assert!(vals[..k].windows(2).all(|w| w[1] >= w[0]));
        }
    }

    #[test]
    fn b_curve_fits_reference_pairs() {
        let c = fit_b_of_a(&SCENARIO_AB).unwrap();
        for (a, b) in SCENARIO_AB {
            assert!((c.eval(a) - b).abs() <= 0.02);
        }
        assert!(c.eval(4.88) > c.eval(27.23));
        for i in 0..=260 {
            let a = 4.0 + 0.1 * i as f64;
            let v = c.eval(a);
            assert!(v > 0.0 && v < 0.6, "b({a}) = {v}");
        }
        // Independent fit of the same four points.
        let want = [0.07995138, 0.72334494, 0.42699171, 4.72941048];
        for (got, w) in [c.p1, c.p2, c.p3, c.p4].iter().zip(want) {
            assert!((got - w).abs() < 1e-5, "{got} vs {w}");
        }
        assert!(fit_b_of_a(&SCENARIO_AB[..3]).is_err());
    }

    #[test]
    fn initial_coefficients_signs() {
        for (a, b) in SCENARIO_AB {
            let r = choose_r_max(a, b, 14.3, &ChannelParams::default(), 0.05, 0.1, 0.01).unwrap();
            let init = initial_coefficients(a, b, 14.3, &ch(r)).unwrap();
            assert!(init.c1 > 0.0 && init.c3 < 0.0, "{init:?}");
            assert!(init.c2 > 0.0 && init.c2 < 1.0 && init.c4 > 0.0 && init.c4 < 1.0, "{init:?}");
        }
    }

    #[test]
    fn r_max_search() {
        let base = ChannelParams::default();
        let r = choose_r_max(9.61, 0.16, 25.0, &base, 0.05, 0.1, 0.01).unwrap();
        assert!((1000.0..=20_000.0).contains(&r), "{r}");
        let tighter = choose_r_max(9.61, 0.16, 25.0, &base, 0.05, 0.01, 0.01).unwrap();
        assert!(tighter >= r);
        assert!(matches!(
            choose_r_max(9.61, 0.16, 1e-6, &base, 0.05, 0.1, 0.01),
            Err(SgError::Unsatisfiable { .. })
        ));
    }

    #[test]
    fn nearest_pair_example_and_order_invariance() {
        let mut db = CoefficientDb::reference();
        db.entries.truncate(2);
        let i = db.nearest(9.0, 0.2).unwrap();
        assert_eq!((db.entries[i].a, db.entries[i].b), (9.61, 0.16));
        let dev = |a: f64, b: f64| (a - 9.0f64).abs() / 9.0 + (b - 0.2f64).abs() / 0.2;
        assert!((dev(4.88, 0.43) - 1.6078).abs() < 1e-3);
        assert!((dev(9.61, 0.16) - 0.2678).abs() < 1e-3);
        let mut full = CoefficientDb::reference();
        let pick = full.entries[full.nearest(11.0, 0.12).unwrap()];
        full.entries.reverse();
        assert_eq!(full.entries[full.nearest(11.0, 0.12).unwrap()], pick);
        assert!(CoefficientDb::from_json(r#"{"curve":{"p1":0,"p2":0,"p3":1,"p4":0},"lambda_grid_per_km2":[1],"entries":[]}"#).is_err());
    }

    #[test]
    fn database_json_round_trip() {
        let db = CoefficientDb::reference();
        assert_eq!(CoefficientDb::from_json(&db.to_json()).unwrap(), db);
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = SgTrainConfig {
            n_ab: 2,
            include_anchors: false,
            n_iter: 300,
            lambda_grid_per_km2: vec![2.0, 10.0, 30.0],
            ..SgTrainConfig::default()
        };
        let a = train_coefficients(&cfg, &ChannelParams::default()).unwrap();
        let b = train_coefficients(&cfg, &ChannelParams::default()).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(a.entries.len(), 2);
    }
}
