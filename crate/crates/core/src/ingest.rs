//! City models: building footprints with heights plus base-station positions.
//!
//! Cities are loaded from a JSON buildings file and a CSV base-station file,
//! or generated synthetically from density targets. A [`CityModel`] is
//! immutable once built.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{self, Circle, GeometryError, Point};
use crate::rng::seeded;

/// Default base-station antenna height in meters.
pub const DEFAULT_BS_HEIGHT_M: f64 = 20.0;

/// Snap distance for rings whose last vertex nearly equals the first.
const CLOSE_SNAP_M: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("building {index}: malformed ring ({reason})")]
    MalformedRing { index: usize, reason: String },
    #[error("building {index}: negative height {height}")]
    NegativeHeight { index: usize, height: f64 },
    #[error("base station {index}: height must be positive, got {height}")]
    NonpositiveBsHeight { index: usize, height: f64 },
    #[error("city has neither buildings nor base stations")]
    EmptyCity,
    #[error("geometry outside the city bounds")]
    OutOfBounds,
    #[error("cannot place {placed}/{wanted} footprints without overlap")]
    InfeasibleDensity { placed: usize, wanted: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl IngestError {
    fn ring(index: usize, e: GeometryError) -> Self {
        let reason = match e {
            GeometryError::EmptyRing => "empty".to_string(),
            GeometryError::MalformedRing(r) => r,
        };
        IngestError::MalformedRing { index, reason }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BuildingSpec {
    ring: Vec<Point>,
    height_m: f64,
    center_m: Point,
    radius_m: f64,
    area_m2: f64,
}

impl BuildingSpec {
    /// Validates a closed ring, normalizes it to clockwise order and derives
    /// the enclosing circle and floor area.
    pub fn new(mut ring: Vec<Point>, height_m: f64) -> Result<Self, GeometryError> {
        if ring.is_empty() {
            return Err(GeometryError::EmptyRing);
        }
        if !(height_m >= 0.0) || !height_m.is_finite() {
            return Err(GeometryError::MalformedRing(format!("bad height {height_m}")));
        }
        let first = ring[0];
        let last = *ring.last().unwrap();
        if first != last {
            if first.dist(last) <= CLOSE_SNAP_M {
                *ring.last_mut().unwrap() = first;
            } else {
                return Err(GeometryError::MalformedRing("ring is not closed".into()));
            }
        }
        let mut distinct: Vec<Point> = Vec::with_capacity(ring.len());
        for &p in &ring[..ring.len() - 1] {
            if !distinct.contains(&p) {
                distinct.push(p);
            }
        }
        if distinct.len() < 3 {
            return Err(GeometryError::MalformedRing(format!(
                "{} distinct vertices",
                distinct.len()
            )));
        }
        if is_self_intersecting(&ring) {
            return Err(GeometryError::MalformedRing("self-intersection".into()));
        }
        if geometry::signed_area(&ring) > 0.0 {
            ring.reverse();
        }
        let area_m2 = geometry::polygon_area(&ring)?;
        let circle = geometry::min_enclosing_circle(&ring[..ring.len() - 1])?;
        Ok(Self {
            ring,
            height_m,
            center_m: circle.center,
            radius_m: circle.radius,
            area_m2,
        })
    }

    /// Closed, clockwise ring.
    pub fn ring(&self) -> &[Point] {
        &self.ring
    }
    pub fn height_m(&self) -> f64 {
        self.height_m
    }
    pub fn center_m(&self) -> Point {
        self.center_m
    }
    pub fn radius_m(&self) -> f64 {
        self.radius_m
    }
    pub fn area_m2(&self) -> f64 {
        self.area_m2
    }
    pub fn circle(&self) -> Circle {
        Circle::new(self.center_m, self.radius_m)
    }

    /// Number of edges in the ring.
    pub fn edge_count(&self) -> usize {
        self.ring.len() - 1
    }

    pub fn contains(&self, p: Point) -> bool {
        self.center_m.dist2(p) < self.radius_m * self.radius_m
            && geometry::point_in_polygon(p, &self.ring)
    }

    fn with_height(&self, height_m: f64) -> Self {
        Self {
            height_m,
            ..self.clone()
        }
    }
}

fn segments_cross(a: Point, b: Point, c: Point, d: Point) -> bool {
    let o = |p: Point, q: Point, r: Point| (q - p).cross(r - p);
    let on = |p: Point, q: Point, r: Point| {
        r.x >= p.x.min(q.x) && r.x <= p.x.max(q.x) && r.y >= p.y.min(q.y) && r.y <= p.y.max(q.y)
    };
    let (d1, d2, d3, d4) = (o(c, d, a), o(c, d, b), o(a, b, c), o(a, b, d));
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on(c, d, a))
        || (d2 == 0.0 && on(c, d, b))
        || (d3 == 0.0 && on(a, b, c))
        || (d4 == 0.0 && on(a, b, d))
}

fn is_self_intersecting(ring: &[Point]) -> bool {
    let n = ring.len() - 1;
    for i in 0..n {
        for j in i + 1..n {
            // Adjacent edges share a vertex by construction.
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            if segments_cross(ring[i], ring[i + 1], ring[j], ring[j + 1]) {
                return true;
            }
        }
    }
    false
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasestationSpec {
    pub position_m: Point,
    pub height_m: f64,
}

impl BasestationSpec {
    pub fn new(position_m: Point, height_m: f64) -> Self {
        Self {
            position_m,
            height_m,
        }
    }
}

/// Axis-aligned rectangle `[x0, x1] x [y0, y1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Bounds {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    /// Square of side `side` with its lower-left corner at the origin.
    pub fn square(side: f64) -> Self {
        Self::new(0.0, 0.0, side, side)
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }
    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }
    pub fn area_m2(&self) -> f64 {
        self.width() * self.height()
    }
    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.x0 && p.x <= self.x1 && p.y >= self.y0 && p.y <= self.y1
    }
    pub fn diameter(&self) -> f64 {
        self.width().hypot(self.height())
    }
    pub fn center(&self) -> Point {
        Point::new(0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CityModel {
    buildings: Vec<BuildingSpec>,
    basestations: Vec<BasestationSpec>,
    bounds: Bounds,
}

impl CityModel {
    pub fn new(
        buildings: Vec<BuildingSpec>,
        basestations: Vec<BasestationSpec>,
        bounds: Bounds,
    ) -> Result<Self, IngestError> {
        for (index, bs) in basestations.iter().enumerate() {
            if !(bs.height_m > 0.0) {
                return Err(IngestError::NonpositiveBsHeight {
                    index,
                    height: bs.height_m,
                });
            }
            if !bounds.contains(bs.position_m) {
                return Err(IngestError::OutOfBounds);
            }
        }
        if buildings
            .iter()
            .flat_map(|b| b.ring().iter())
            .any(|&p| !bounds.contains(p))
        {
            return Err(IngestError::OutOfBounds);
        }
        Ok(Self {
            buildings,
            basestations,
            bounds,
        })
    }

    /// Bounds taken as the bounding box of all geometry.
    pub fn with_tight_bounds(
        buildings: Vec<BuildingSpec>,
        basestations: Vec<BasestationSpec>,
    ) -> Result<Self, IngestError> {
        let pts = buildings
            .iter()
            .flat_map(|b| b.ring().iter().copied())
            .chain(basestations.iter().map(|b| b.position_m));
        let mut bounds = Bounds::new(f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in pts {
            bounds.x0 = bounds.x0.min(p.x);
            bounds.y0 = bounds.y0.min(p.y);
            bounds.x1 = bounds.x1.max(p.x);
            bounds.y1 = bounds.y1.max(p.y);
        }
        if !bounds.x0.is_finite() {
            return Err(IngestError::EmptyCity);
        }
        Self::new(buildings, basestations, bounds)
    }

    pub fn buildings(&self) -> &[BuildingSpec] {
        &self.buildings
    }
    pub fn basestations(&self) -> &[BasestationSpec] {
        &self.basestations
    }
    pub fn bounds(&self) -> Bounds {
        self.bounds
    }

    /// Index of the first building whose footprint contains `p`.
    pub fn building_at(&self, p: Point) -> Option<usize> {
        self.buildings.iter().position(|b| b.contains(p))
    }

    /// Maximum-likelihood Rayleigh scale of the building heights.
    pub fn rayleigh_scale_estimate(&self) -> Option<f64> {
        if self.buildings.is_empty() {
            return None;
        }
        let s2: f64 = self.buildings.iter().map(|b| b.height_m * b.height_m).sum();
        Some((s2 / (2.0 * self.buildings.len() as f64)).sqrt())
    }
}

/// Settings applied while reading city files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadDefaults {
    pub bs_height_m: f64,
    /// Rayleigh scale used for buildings without a height.
    pub omega: f64,
    pub seed: u64,
    pub bounds: Option<Bounds>,
}

impl Default for LoadDefaults {
    fn default() -> Self {
        Self {
            bs_height_m: DEFAULT_BS_HEIGHT_M,
            omega: 9.0,
            seed: 0,
            bounds: None,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct BuildingRecord {
    ring: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    height: Option<f64>,
}

pub fn parse_buildings(json: &str, defaults: &LoadDefaults) -> Result<Vec<BuildingSpec>, IngestError> {
    let records: Vec<BuildingRecord> =
        serde_json::from_str(json).map_err(|e| IngestError::Parse(format!("buildings: {e}")))?;
    let mut rng = seeded(defaults.seed, u64::MAX);
    let mut out = Vec::with_capacity(records.len());
    for (index, rec) in records.into_iter().enumerate() {
        let height = match rec.height {
            Some(h) if h < 0.0 => return Err(IngestError::NegativeHeight { index, height: h }),
            Some(h) => h,
            None => {
                if !(defaults.omega > 0.0) {
                    return Err(IngestError::InvalidConfig("omega must be positive".into()));
                }
                sample_rayleigh(&mut rng, defaults.omega)
            }
        };
        let ring: Vec<Point> = rec.ring.iter().map(|&[x, y]| Point::new(x, y)).collect();
        out.push(BuildingSpec::new(ring, height).map_err(|e| IngestError::ring(index, e))?);
    }
    Ok(out)
}

pub fn parse_basestations(text: &str, defaults: &LoadDefaults) -> Result<Vec<BasestationSpec>, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| IngestError::Parse(format!("bs header: {e}")))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (Some(xi), Some(yi)) = (col("x"), col("y")) else {
        return Err(IngestError::Parse("bs file needs x,y columns".into()));
    };
    let hi = col("height");
    let num = |s: &str, what: &str| {
        s.parse::<f64>()
            .map_err(|e| IngestError::Parse(format!("bs {what} '{s}': {e}")))
    };
    let mut out = Vec::new();
    for (index, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| IngestError::Parse(format!("bs row {index}: {e}")))?;
        let x = num(rec.get(xi).unwrap_or(""), "x")?;
        let y = num(rec.get(yi).unwrap_or(""), "y")?;
        let height = match hi.and_then(|i| rec.get(i)).filter(|s| !s.is_empty()) {
            Some(s) => num(s, "height")?,
            None => defaults.bs_height_m,
        };
        if !(height > 0.0) {
            return Err(IngestError::NonpositiveBsHeight { index, height });
        }
        out.push(BasestationSpec::new(Point::new(x, y), height));
    }
    Ok(out)
}

fn read(path: &Path) -> Result<String, IngestError> {
    fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_city(
    buildings_path: &Path,
    bs_path: &Path,
    defaults: &LoadDefaults,
) -> Result<CityModel, IngestError> {
    let buildings = parse_buildings(&read(buildings_path)?, defaults)?;
    let basestations = parse_basestations(&read(bs_path)?, defaults)?;
    if buildings.is_empty() && basestations.is_empty() {
        return Err(IngestError::EmptyCity);
    }
    match defaults.bounds {
        Some(b) => CityModel::new(buildings, basestations, b),
        None => CityModel::with_tight_bounds(buildings, basestations),
    }
}

pub fn buildings_to_json(city: &CityModel) -> String {
    let records: Vec<BuildingRecord> = city
        .buildings
        .iter()
        .map(|b| BuildingRecord {
            ring: b.ring.iter().map(|p| [p.x, p.y]).collect(),
            height: Some(b.height_m),
        })
        .collect();
    let mut s = serde_json::to_string(&records).expect("buildings serialize");
    s.push('\n');
    s
}

pub fn basestations_to_csv(city: &CityModel) -> String {
    let mut s = String::from("x,y,height\n");
    for bs in &city.basestations {
        s.push_str(&format!("{},{},{}\n", bs.position_m.x, bs.position_m.y, bs.height_m));
    }
    s
}

pub fn write_city(city: &CityModel, buildings_path: &Path, bs_path: &Path) -> Result<(), IngestError> {
    let write = |p: &Path, s: String| {
        fs::write(p, s).map_err(|source| IngestError::Io {
            path: p.display().to_string(),
            source,
        })
    };
    write(buildings_path, buildings_to_json(city))?;
    write(bs_path, basestations_to_csv(city))
}

/// Rayleigh(omega) variate by inversion.
pub fn sample_rayleigh<R: Rng>(rng: &mut R, omega: f64) -> f64 {
    let u: f64 = rng.random();
    omega * (-2.0 * (1.0 - u).ln()).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthCityConfig {
    pub bounds: Bounds,
    pub building_density_per_km2: f64,
    pub built_area_ratio: f64,
    pub rayleigh_scale: f64,
    pub bs_density_per_km2: f64,
    #[serde(default = "default_bs_height")]
    pub bs_height_m: f64,
    /// Footprint aspect ratios are drawn log-uniformly from this range.
    #[serde(default = "default_aspect")]
    pub aspect_range: (f64, f64),
    /// Relative half-width of the uniform footprint-area jitter, in [0, 1).
    #[serde(default = "default_jitter")]
    pub area_jitter: f64,
    #[serde(default = "default_retries")]
    pub max_retries: usize,
    pub seed: u64,
}

fn default_bs_height() -> f64 {
    DEFAULT_BS_HEIGHT_M
}
fn default_aspect() -> (f64, f64) {
    (0.5, 2.0)
}
fn default_jitter() -> f64 {
    0.5
}
fn default_retries() -> usize {
    500
}

impl SynthCityConfig {
    /// Square city of `side_m` with the given (iota, kappa, omega, bs density).
    pub fn square(side_m: f64, iota: f64, kappa: f64, omega: f64, bs_density: f64, seed: u64) -> Self {
        Self {
            bounds: Bounds::square(side_m),
            building_density_per_km2: iota,
            built_area_ratio: kappa,
            rayleigh_scale: omega,
            bs_density_per_km2: bs_density,
            bs_height_m: DEFAULT_BS_HEIGHT_M,
            aspect_range: default_aspect(),
            area_jitter: default_jitter(),
            max_retries: default_retries(),
            seed,
        }
    }

    /// 1 km^2 city with the urban scenario statistics.
    pub fn urban(seed: u64) -> Self {
        Self::square(1000.0, 500.0, 0.3, 15.0, 50.0, seed)
    }

    /// 1 km^2 city with the suburban scenario statistics.
    pub fn suburban(seed: u64) -> Self {
        Self::square(1000.0, 750.0, 0.1, 8.0, 50.0, seed)
    }

    fn validate(&self) -> Result<(), IngestError> {
        let bad = |m: &str| Err(IngestError::InvalidConfig(m.into()));
        if !(self.bounds.width() > 0.0 && self.bounds.height() > 0.0) {
            return bad("bounds must have positive extent");
        }
        if !(self.building_density_per_km2 >= 0.0 && self.bs_density_per_km2 >= 0.0) {
            return bad("densities must be nonnegative");
        }
        if !(self.rayleigh_scale > 0.0) {
            return bad("rayleigh scale must be positive");
        }
        if !(0.0..1.0).contains(&self.built_area_ratio) {
            return bad("built area ratio must be in [0, 1)");
        }
        if !(self.bs_height_m > 0.0) {
            return bad("bs height must be positive");
        }
        let (lo, hi) = self.aspect_range;
        if !(lo > 0.0 && hi >= lo) {
            return bad("aspect range must be positive and ordered");
        }
        if !(0.0..1.0).contains(&self.area_jitter) {
            return bad("area jitter must be in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
struct Rect {
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
}

impl Rect {
    fn overlaps(&self, o: &Rect) -> bool {
        self.x0 < o.x1 && o.x0 < self.x1 && self.y0 < o.y1 && o.y0 < self.y1
    }

    fn ring(&self) -> Vec<Point> {
        vec![
            Point::new(self.x0, self.y0),
            Point::new(self.x0, self.y1),
            Point::new(self.x1, self.y1),
            Point::new(self.x1, self.y0),
            Point::new(self.x0, self.y0),
        ]
    }
}

/// Bucketed rectangle set for overlap queries.
struct RectIndex {
    cell: f64,
    origin: Point,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<usize>>,
    rects: Vec<Rect>,
}

impl RectIndex {
    fn new(bounds: Bounds, cell: f64) -> Self {
        let nx = ((bounds.width() / cell).ceil() as usize).max(1);
        let ny = ((bounds.height() / cell).ceil() as usize).max(1);
        Self {
            cell,
            origin: Point::new(bounds.x0, bounds.y0),
            nx,
            ny,
            buckets: vec![Vec::new(); nx * ny],
            rects: Vec::new(),
        }
    }

    fn span(&self, r: &Rect) -> (usize, usize, usize, usize) {
        let ix = |x: f64| (((x - self.origin.x) / self.cell).floor().max(0.0) as usize).min(self.nx - 1);
        let iy = |y: f64| (((y - self.origin.y) / self.cell).floor().max(0.0) as usize).min(self.ny - 1);
        (ix(r.x0), ix(r.x1), iy(r.y0), iy(r.y1))
    }

    fn hits(&self, r: &Rect) -> bool {
        let (i0, i1, j0, j1) = self.span(r);
        for j in j0..=j1 {
            for i in i0..=i1 {
                if self.buckets[j * self.nx + i].iter().any(|&k| self.rects[k].overlaps(r)) {
                    return true;
                }
            }
        }
        false
    }

    fn insert(&mut self, r: Rect) {
        let k = self.rects.len();
        let (i0, i1, j0, j1) = self.span(&r);
        for j in j0..=j1 {
            for i in i0..=i1 {
                self.buckets[j * self.nx + i].push(k);
            }
        }
        self.rects.push(r);
    }
}

/// Synthetic city: Poisson building count, non-overlapping axis-aligned
/// rectangular footprints whose total area equals the target built-area
/// ratio, Rayleigh heights and Poisson base stations. Fully determined by
/// `config.seed`.
pub fn generate_city(config: &SynthCityConfig) -> Result<CityModel, IngestError> {
    config.validate()?;
    let bounds = config.bounds;
    let area_km2 = bounds.area_m2() * 1e-6;
    let mut rng = seeded(config.seed, 0);

    let n_buildings = poisson(&mut rng, config.building_density_per_km2 * area_km2);
    let mut buildings = Vec::with_capacity(n_buildings);
    if n_buildings > 0 && config.built_area_ratio > 0.0 {
        let mean_area = config.built_area_ratio * bounds.area_m2() / n_buildings as f64;
        let j = config.area_jitter;
        let mut factors: Vec<f64> = (0..n_buildings)
            .map(|_| 1.0 - j + 2.0 * j * rng.random::<f64>())
            .collect();
        let fmean = factors.iter().sum::<f64>() / n_buildings as f64;
        factors.iter_mut().for_each(|f| *f /= fmean);
        let (alo, ahi) = (config.aspect_range.0.ln(), config.aspect_range.1.ln());

        let max_side = factors
            .iter()
            .map(|f| (mean_area * f * config.aspect_range.1).sqrt())
            .fold(0.0, f64::max);
        let mut index = RectIndex::new(bounds, max_side.max(1.0));

        for (k, f) in factors.iter().enumerate() {
            let area = mean_area * f;
            let aspect = (alo + (ahi - alo) * rng.random::<f64>()).exp();
            let w = (area * aspect).sqrt();
            let h = area / w;
            if w >= bounds.width() || h >= bounds.height() {
                return Err(IngestError::InfeasibleDensity {
                    placed: k,
                    wanted: n_buildings,
                });
            }
            let mut placed = false;
            for _ in 0..config.max_retries {
                let cx = bounds.x0 + w / 2.0 + (bounds.width() - w) * rng.random::<f64>();
                let cy = bounds.y0 + h / 2.0 + (bounds.height() - h) * rng.random::<f64>();
                let r = Rect {
                    x0: cx - w / 2.0,
                    y0: cy - h / 2.0,
                    x1: cx + w / 2.0,
                    y1: cy + h / 2.0,
                };
                if !index.hits(&r) {
                    index.insert(r);
                    placed = true;
                    break;
                }
            }
            if !placed {
                return Err(IngestError::InfeasibleDensity {
                    placed: k,
                    wanted: n_buildings,
                });
            }
        }
        for r in &index.rects {
            let height = sample_rayleigh(&mut rng, config.rayleigh_scale);
            buildings.push(BuildingSpec::new(r.ring(), height).expect("rectangle is a valid ring"));
        }
    }

    let n_bs = poisson(&mut rng, config.bs_density_per_km2 * area_km2);
    let basestations = (0..n_bs)
        .map(|_| {
            let x = bounds.x0 + bounds.width() * rng.random::<f64>();
            let y = bounds.y0 + bounds.height() * rng.random::<f64>();
            BasestationSpec::new(Point::new(x, y), config.bs_height_m)
        })
        .collect();

    CityModel::new(buildings, basestations, bounds)
}

fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("finite positive mean").sample(rng) as usize
}

/// Same footprints with fresh i.i.d. Rayleigh(omega) heights.
pub fn resample_heights(city: &CityModel, omega: f64, seed: u64) -> Result<CityModel, IngestError> {
    if !(omega > 0.0) {
        return Err(IngestError::InvalidConfig("omega must be positive".into()));
    }
    let mut rng = seeded(seed, 1);
    let buildings = city
        .buildings
        .iter()
        .map(|b| b.with_height(sample_rayleigh(&mut rng, omega)))
        .collect();
    Ok(CityModel {
        buildings,
        basestations: city.basestations.clone(),
        bounds: city.bounds,
    })
}
