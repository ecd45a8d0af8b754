//! Coverage manifolds: per-point evaluation over a regular grid, loss
//! statistics between manifolds, timing benchmarks and raster export.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::ChannelParams;
use crate::geometry::Point;
use crate::ingest::{Bounds, CityModel};
use crate::losmodel::PolyCoeffTable;
use crate::mlcov::{self, WeightModel};
use crate::sgcov::{self, CoefficientDb};
use crate::simcore::{self, Engine, SimConfig, SimError, VerificationCounters};

/// Value stored at points whose evaluation failed.
pub const SENTINEL: f64 = -1.0;
pub const DEFAULT_SPACING_M: f64 = 20.0;

#[derive(Debug, Error)]
pub enum ManifoldError {
    #[error("grids differ in shape or placement")]
    GridMismatch,
    #[error("invalid region: {0}")]
    InvalidRegion(String),
    #[error("method {0:?} needs {1}")]
    MissingInput(Method, &'static str),
    #[error("i/o: {0}")]
    IoFailure(#[from] std::io::Error),
    #[error("parse: {0}")]
    Parse(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Traditional,
    Accelerated,
    Sg,
    Ml,
}

/// Everything the four methods may need. Only the fields the chosen method
/// reads have to be meaningful.
#[derive(Clone, Debug, Default)]
pub struct MethodConfigs {
    pub sim: SimConfig,
    pub ch: ChannelParams,
    pub table: PolyCoeffTable,
    pub sg_db: Option<CoefficientDb>,
    pub ml_model: Option<WeightModel>,
}

impl MethodConfigs {
    fn check(&self, method: Method) -> Result<(), ManifoldError> {
        match method {
            Method::Sg if self.sg_db.is_none() => Err(ManifoldError::MissingInput(method, "a coefficient database")),
            Method::Ml if self.ml_model.is_none() => Err(ManifoldError::MissingInput(method, "a weight model")),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PointDiag {
    pub counters: VerificationCounters,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub note: Option<String>,
}

/// Coverage at `nx * ny` points `origin + (ix, iy) * spacing`, stored
/// row-major with `ix` fastest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifoldGrid {
    pub method: Method,
    pub origin: Point,
    pub spacing_m: f64,
    pub nx: usize,
    pub ny: usize,
    pub values: Vec<f64>,
    pub diagnostics: Vec<PointDiag>,
    /// Wall-clock time per point; not serialized, so saved grids are
    /// reproducible byte for byte.
    #[serde(skip)]
    pub elapsed_ns: Vec<u64>,
}

impl ManifoldGrid {
    pub fn point(&self, i: usize) -> Point {
        grid_point(self.origin, self.spacing_m, self.nx, i)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn same_lattice(&self, o: &ManifoldGrid) -> bool {
        self.nx == o.nx && self.ny == o.ny && self.origin == o.origin && self.spacing_m == o.spacing_m
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("grid serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, ManifoldError> {
        let g: ManifoldGrid = serde_json::from_str(s).map_err(|e| ManifoldError::Parse(e.to_string()))?;
        if g.values.len() != g.nx * g.ny || g.diagnostics.len() != g.values.len() || !(g.spacing_m > 0.0) {
            return Err(ManifoldError::Parse("grid shape and value count disagree".into()));
        }
        Ok(g)
    }
}

fn grid_point(origin: Point, spacing: f64, nx: usize, i: usize) -> Point {
    Point::new(origin.x + (i % nx) as f64 * spacing, origin.y + (i / nx) as f64 * spacing)
}

/// Lattice covering `region` from its lower-left corner.
pub fn lattice(region: &Bounds, spacing_m: f64) -> Result<(Point, usize, usize), ManifoldError> {
    if !(spacing_m > 0.0 && spacing_m.is_finite()) {
        return Err(ManifoldError::InvalidRegion(format!("spacing must be positive, got {spacing_m}")));
    }
    if !(region.x1 >= region.x0 && region.y1 >= region.y0) {
        return Err(ManifoldError::InvalidRegion("region corners out of order".into()));
    }
    let n = |w: f64| (w / spacing_m + 1e-9).floor() as usize + 1;
    Ok((Point::new(region.x0, region.y0), n(region.width()), n(region.height())))
}

/// Coverage at one point by `method`; `stream` keys its random streams.
pub fn evaluate_point(
    city: &CityModel,
    p: Point,
    stream: u64,
    method: Method,
    cfg: &MethodConfigs,
) -> (f64, PointDiag) {
    let fail = |e: String| (SENTINEL, PointDiag { note: Some(e), ..PointDiag::default() });
    match method {
        Method::Traditional | Method::Accelerated => {
            let engine = if method == Method::Traditional { Engine::Traditional } else { Engine::Accelerated };
            match simcore::evaluate_mrp(city, p, stream, engine, &cfg.sim, &cfg.ch, &cfg.table) {
                Ok(o) => (o.coverage, PointDiag { counters: o.counters, note: None }),
                Err(SimError::NoBasestations) => (0.0, PointDiag { note: Some("no base stations".into()), ..PointDiag::default() }),
                Err(e) => fail(e.to_string()),
            }
        }
        Method::Sg => {
            let db = cfg.sg_db.as_ref().expect("checked by caller");
            match sgcov::sg_coverage(city, p, db, cfg.sim.r_sun_m, cfg.sim.omega, &cfg.table) {
                Ok(v) => (v, PointDiag::default()),
                Err(e) => fail(e.to_string()),
            }
        }
        Method::Ml => {
            let model = cfg.ml_model.as_ref().expect("checked by caller");
            match mlcov::ml_coverage_at(city, p, model, &cfg.ch, cfg.sim.n_iter, cfg.sim.seed, stream) {
                Ok(v) => (v, PointDiag::default()),
                Err(e) => fail(e.to_string()),
            }
        }
    }
}

/// Evaluates every lattice point of `region` independently, in parallel.
/// Point `i` uses stream `i`, so the result does not depend on scheduling.
pub fn compute_manifold(
    city: &CityModel,
    region: &Bounds,
    spacing_m: f64,
    method: Method,
    cfg: &MethodConfigs,
) -> Result<ManifoldGrid, ManifoldError> {
    let b = city.bounds();
    if region.x0 < b.x0 || region.y0 < b.y0 || region.x1 > b.x1 || region.y1 > b.y1 {
        return Err(ManifoldError::InvalidRegion("region extends outside the city bounds".into()));
    }
    cfg.check(method)?;
    let (origin, nx, ny) = lattice(region, spacing_m)?;
    let out: Vec<(f64, PointDiag, u64)> = (0..nx * ny)
        .into_par_iter()
        .map(|i| {
            let t = Instant::now();
            let (v, d) = evaluate_point(city, grid_point(origin, spacing_m, nx, i), i as u64, method, cfg);
            (v, d, t.elapsed().as_nanos() as u64)
        })
        .collect();
    let mut values = Vec::with_capacity(out.len());
    let mut diagnostics = Vec::with_capacity(out.len());
    let mut elapsed_ns = Vec::with_capacity(out.len());
    for (v, d, t) in out {
        values.push(v);
        diagnostics.push(d);
        elapsed_ns.push(t);
    }
    Ok(ManifoldGrid {
        method,
        origin,
        spacing_m,
        nx,
        ny,
        values,
        diagnostics,
        elapsed_ns,
    })
}

/// True where a point is excluded from loss statistics: no base station or
/// no building center within `r_sun_m`.
pub fn exclusion_mask(city: &CityModel, grid: &ManifoldGrid, r_sun_m: f64) -> Vec<bool> {
    let r2 = r_sun_m * r_sun_m;
    (0..grid.len())
        .map(|i| {
            let p = grid.point(i);
            let bs = city.basestations().iter().any(|b| b.position_m.dist2(p) < r2);
            let bld = city.buildings().iter().any(|b| b.center_m().dist2(p) < r2);
            !(bs && bld)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossStats {
    pub mean: f64,
    pub median: f64,
    pub max: f64,
    pub n_used: usize,
    /// Points left out by the mask or because either grid holds the sentinel.
    pub excluded: Vec<bool>,
}

/// Absolute per-point differences between two manifolds on the same lattice.
pub fn compare_manifolds(
    test: &ManifoldGrid,
    reference: &ManifoldGrid,
    mask: Option<&[bool]>,
) -> Result<LossStats, ManifoldError> {
    if !test.same_lattice(reference) || mask.is_some_and(|m| m.len() != test.len()) {
        return Err(ManifoldError::GridMismatch);
    }
    let excluded: Vec<bool> = (0..test.len())
        .map(|i| mask.is_some_and(|m| m[i]) || test.values[i] == SENTINEL || reference.values[i] == SENTINEL)
        .collect();
    let mut d: Vec<f64> = (0..test.len())
        .filter(|&i| !excluded[i])
        .map(|i| (test.values[i] - reference.values[i]).abs())
        .collect();
    d.sort_by(f64::total_cmp);
    let n = d.len();
    let (mean, median, max) = if n == 0 {
        (0.0, 0.0, 0.0)
    } else {
        let median = if n % 2 == 1 { d[n / 2] } else { 0.5 * (d[n / 2 - 1] + d[n / 2]) };
        (d.iter().sum::<f64>() / n as f64, median, d[n - 1])
    };
    Ok(LossStats {
        mean,
        median,
        max,
        n_used: n,
        excluded,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodTiming {
    pub method: Method,
    pub samples_ns: Vec<u64>,
    pub mean_ns: f64,
    /// Mean of the slowest fifth of the samples.
    pub top20_mean_ns: f64,
    /// Mean of the fastest fifth of the samples.
    pub bottom20_mean_ns: f64,
}

impl MethodTiming {
    fn from_samples(method: Method, samples_ns: Vec<u64>) -> Self {
        let mut s = samples_ns.clone();
        s.sort_unstable();
        let n = s.len();
        let k = (n / 5).max(1).min(n);
        let mean = |v: &[u64]| if v.is_empty() { 0.0 } else { v.iter().map(|&x| x as f64).sum::<f64>() / v.len() as f64 };
        Self {
            method,
            mean_ns: mean(&s),
            top20_mean_ns: mean(&s[n - k..]),
            bottom20_mean_ns: mean(&s[..k]),
            samples_ns,
        }
    }

    /// Ratio of the slow-fifth mean to the fast-fifth mean.
    pub fn dispersion(&self) -> f64 {
        self.top20_mean_ns / self.bottom20_mean_ns
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub methods: Vec<MethodTiming>,
}

impl BenchReport {
    pub fn get(&self, m: Method) -> Option<&MethodTiming> {
        self.methods.iter().find(|t| t.method == m)
    }
}

/// Times each method on each point, one point at a time on the calling
/// thread. The first `warmup` points are evaluated once beforehand and the
/// results discarded.
pub fn bench(
    city: &CityModel,
    methods: &[Method],
    mrps: &[Point],
    cfg: &MethodConfigs,
    warmup: usize,
) -> Result<BenchReport, ManifoldError> {
    let mut out = Vec::with_capacity(methods.len());
    for &m in methods {
        cfg.check(m)?;
        for (i, &p) in mrps.iter().enumerate().take(warmup) {
            std::hint::black_box(evaluate_point(city, p, i as u64, m, cfg));
        }
        let samples = mrps
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                let t = Instant::now();
                std::hint::black_box(evaluate_point(city, p, i as u64, m, cfg));
                t.elapsed().as_nanos() as u64
            })
            .collect();
        out.push(MethodTiming::from_samples(m, samples));
    }
    Ok(BenchReport { methods: out })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    Csv,
    Pgm,
}

pub fn manifold_csv(grid: &ManifoldGrid) -> String {
    let mut s = String::from("x,y,p\n");
    for i in 0..grid.len() {
        let p = grid.point(i);
        writeln!(s, "{},{},{}", p.x, p.y, grid.values[i]).expect("string write");
    }
    s
}

/// 8-bit binary PGM, top row at the largest y. Sentinels become 0.
pub fn manifold_pgm(grid: &ManifoldGrid) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", grid.nx, grid.ny).into_bytes();
    for iy in (0..grid.ny).rev() {
        for ix in 0..grid.nx {
            let v = grid.values[iy * grid.nx + ix];
            let px = if v == SENTINEL { 0 } else { (v.clamp(0.0, 1.0) * 255.0).floor() as u8 };
            out.push(px);
        }
    }
    out
}

pub fn export_manifold(grid: &ManifoldGrid, path: &Path, format: ExportFormat) -> Result<(), ManifoldError> {
    match format {
        ExportFormat::Csv => std::fs::write(path, manifold_csv(grid))?,
        ExportFormat::Pgm => std::fs::write(path, manifold_pgm(grid))?,
    }
    Ok(())
}

/// Reads `x,y,p` rows back as `(x, y, p)` triples.
pub fn read_csv_points(path: &Path) -> Result<Vec<(f64, f64, f64)>, ManifoldError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| ManifoldError::Parse(e.to_string()))?;
    rdr.deserialize()
        .map(|r| r.map_err(|e| ManifoldError::Parse(e.to_string())))
        .collect()
}
