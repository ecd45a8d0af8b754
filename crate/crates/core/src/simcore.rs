//! Blockage-verified Monte-Carlo coverage at one receive point.
//!
//! Two engines share the channel layer:
//! - accelerated: enclosing-circle prefilters, early exits and, past the
//!   horizontal cutoff `d_th_m`, a Bernoulli LoS draw from the terrain model;
//! - traditional: every building, every edge, no shortcuts. This is the
//!   accuracy oracle.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{self, ChannelParams, LinkState};
use crate::geometry::{self, Point, Segment3D};
use crate::ingest::{BasestationSpec, CityModel};
use crate::losmodel::{self, A2glpmParams, LosError, PolyCoeffTable, DEFAULT_R_SUN_M};
use crate::rng::{item_stream, Purpose};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("city has no base stations")]
    NoBasestations,
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Los(#[from] LosError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Horizontal distance up to which blockage is verified geometrically.
    pub d_th_m: f64,
    pub n_iter: usize,
    pub r_sun_m: f64,
    /// Rayleigh scale of building heights used for the terrain statistics.
    pub omega: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            d_th_m: 200.0,
            n_iter: 2000,
            r_sun_m: DEFAULT_R_SUN_M,
            omega: 15.0,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        // NaN fails every comparison below.
        if !(self.d_th_m >= 0.0) {
            return Err(SimError::InvalidConfig("d_th_m must be >= 0".into()));
        }
        if self.n_iter == 0 {
            return Err(SimError::InvalidConfig("n_iter must be >= 1".into()));
        }
        if !(self.r_sun_m > 0.0) {
            return Err(SimError::InvalidConfig("r_sun_m must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationCounters {
    pub type1_circle_tests: u64,
    pub type1_ray_casts: u64,
    pub type2_building_prefilters: u64,
    pub type2_edge_tests: u64,
    pub a2glpm_draws: u64,
}

impl std::ops::AddAssign for VerificationCounters {
    fn add_assign(&mut self, o: Self) {
        self.type1_circle_tests += o.type1_circle_tests;
        self.type1_ray_casts += o.type1_ray_casts;
        self.type2_building_prefilters += o.type2_building_prefilters;
        self.type2_edge_tests += o.type2_edge_tests;
        self.a2glpm_draws += o.a2glpm_draws;
    }
}

/// Is `mrp` inside some building? Circle test first, ray cast on a hit.
pub fn type1_blockage(city: &CityModel, mrp: Point, counters: &mut VerificationCounters) -> bool {
    for b in city.buildings() {
        counters.type1_circle_tests += 1;
        if b.center_m().dist2(mrp) <= b.radius_m() * b.radius_m() * (1.0 + 1e-9) {
            counters.type1_ray_casts += 1;
            if geometry::point_in_polygon(mrp, b.ring()) {
                return true;
            }
        }
    }
    false
}

/// Does any building occlude the link from `mrp` to `bs`?
pub fn type2_blockage(
    city: &CityModel,
    mrp: Point,
    bs: &BasestationSpec,
    counters: &mut VerificationCounters,
) -> bool {
    let seg = Segment3D::link(mrp, bs.position_m, bs.height_m);
    for b in city.buildings() {
        counters.type2_building_prefilters += 1;
        let t = geometry::segment_blocks_3d_traced(&seg, b);
        counters.type2_edge_tests += t.edges_tested;
        if t.blocked {
            return true;
        }
    }
    false
}

/// Point-in-polygon against every building, no prefilter.
pub fn type1_blockage_naive(city: &CityModel, mrp: Point, counters: &mut VerificationCounters) -> bool {
    let mut inside = false;
    for b in city.buildings() {
        counters.type1_ray_casts += 1;
        inside |= geometry::point_in_polygon(mrp, b.ring());
    }
    inside
}

/// Every edge of every building, no prefilter, no early exit.
pub fn type2_blockage_naive(
    city: &CityModel,
    mrp: Point,
    bs: &BasestationSpec,
    counters: &mut VerificationCounters,
) -> bool {
    let seg = Segment3D::link(mrp, bs.position_m, bs.height_m);
    let mut blocked = false;
    for b in city.buildings() {
        let (hit, edges) = geometry::segment_blocks_3d_exhaustive(&seg, b);
        counters.type2_edge_tests += edges;
        blocked |= hit;
    }
    blocked
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Traditional,
    Accelerated,
}

/// Everything one receive-point evaluation produced.
#[derive(Clone, Debug, PartialEq)]
pub struct MrpOutcome {
    pub coverage: f64,
    pub counters: VerificationCounters,
    pub inside_building: bool,
    /// One entry per base station, in city order. Empty when inside a building.
    pub links: Vec<LinkState>,
    pub associated: Option<usize>,
    pub ab: Option<A2glpmParams>,
}

impl MrpOutcome {
    pub fn blockage(&self) -> Vec<bool> {
        self.links.iter().map(|l| l.blocked).collect()
    }
}

/// Evaluates one receive point. `stream` keys the random streams, normally
/// the receive point's grid index.
pub fn evaluate_mrp(
    city: &CityModel,
    mrp: Point,
    stream: u64,
    engine: Engine,
    sim: &SimConfig,
    ch: &ChannelParams,
    table: &PolyCoeffTable,
) -> Result<MrpOutcome, SimError> {
    sim.validate()?;
    if city.basestations().is_empty() {
        return Err(SimError::NoBasestations);
    }
    let mut counters = VerificationCounters::default();
    let inside = match engine {
        Engine::Accelerated => type1_blockage(city, mrp, &mut counters),
        Engine::Traditional => type1_blockage_naive(city, mrp, &mut counters),
    };
    if inside {
        return Ok(MrpOutcome {
            coverage: 0.0,
            counters,
            inside_building: true,
            links: Vec::new(),
            associated: None,
            ab: None,
        });
    }

    let d_th = match engine {
        Engine::Accelerated => sim.d_th_m,
        Engine::Traditional => f64::INFINITY,
    };
    let needs_model = city
        .basestations()
        .iter()
        .any(|bs| bs.position_m.dist(mrp) > d_th);
    let ab = if needs_model {
        let stats = losmodel::neighborhood_stats(city, mrp, sim.r_sun_m, sim.omega);
        Some(losmodel::ab_from_stats(&stats, table)?)
    } else {
        None
    };

    let mut blockage_rng = item_stream(sim.seed, stream, Purpose::Blockage);
    let mut links = Vec::with_capacity(city.basestations().len());
    for bs in city.basestations() {
        let ground = bs.position_m.dist(mrp);
        let d3 = ground.hypot(bs.height_m);
        let blocked = if ground <= d_th {
            match engine {
                Engine::Accelerated => type2_blockage(city, mrp, bs, &mut counters),
                Engine::Traditional => type2_blockage_naive(city, mrp, bs, &mut counters),
            }
        } else {
            counters.a2glpm_draws += 1;
            let p = ab.expect("model computed when needed").p_los(d3, bs.height_m)?;
            blockage_rng.random::<f64>() >= p
        };
        links.push(LinkState::new(ch, d3, blocked).expect("3D distance is at least the BS height"));
    }

    let associated = channel::strongest_link(&links).expect("nonempty");
    let mut fading = item_stream(sim.seed, stream, Purpose::Fading);
    let coverage = channel::coverage_trials(ch, &links, associated, sim.n_iter, &mut fading);
    Ok(MrpOutcome {
        coverage,
        counters,
        inside_building: false,
        links,
        associated: Some(associated),
        ab,
    })
}

pub fn accelerated_coverage(
    city: &CityModel,
    mrp: Point,
    sim: &SimConfig,
    ch: &ChannelParams,
    table: &PolyCoeffTable,
) -> Result<(f64, VerificationCounters), SimError> {
    let o = evaluate_mrp(city, mrp, 0, Engine::Accelerated, sim, ch, table)?;
    Ok((o.coverage, o.counters))
}

pub fn traditional_coverage(
    city: &CityModel,
    mrp: Point,
    n_iter: usize,
    ch: &ChannelParams,
    seed: u64,
) -> Result<f64, SimError> {
    let sim = SimConfig {
        d_th_m: f64::INFINITY,
        n_iter,
        seed,
        ..SimConfig::default()
    };
    let o = evaluate_mrp(city, mrp, 0, Engine::Traditional, &sim, ch, &PolyCoeffTable::standard())?;
    Ok(o.coverage)
}
