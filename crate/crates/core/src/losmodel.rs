//! Neighborhood terrain statistics and the elevation-angle LoS probability
//! model whose two parameters are polynomials in those statistics.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Point;
use crate::ingest::CityModel;

/// Default neighborhood radius in meters.
pub const DEFAULT_R_SUN_M: f64 = 50.0;

#[derive(Debug, Error, PartialEq)]
pub enum LosError {
    #[error("LoS parameter {name} = {value} is not positive")]
    NonpositiveParameter { name: &'static str, value: f64 },
    #[error("distance {d_m} is below the transmitter height {h_m}")]
    DistanceBelowHeight { d_m: f64, h_m: f64 },
    #[error("coefficient table: {0}")]
    Table(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborhoodStats {
    pub kappa: f64,
    /// Buildings per km^2.
    pub iota: f64,
    pub omega: f64,
    pub radius_m: f64,
}

impl NeighborhoodStats {
    pub fn new(kappa: f64, iota: f64, omega: f64) -> Self {
        Self {
            kappa,
            iota,
            omega,
            radius_m: DEFAULT_R_SUN_M,
        }
    }
}

/// Built-area ratio and building density over buildings whose center lies
/// strictly inside the circle of radius `r_sun_m` around `mrp`.
pub fn neighborhood_stats(city: &CityModel, mrp: Point, r_sun_m: f64, omega: f64) -> NeighborhoodStats {
    assert!(r_sun_m > 0.0, "neighborhood radius must be positive");
    let r2 = r_sun_m * r_sun_m;
    let (mut area, mut count) = (0.0, 0usize);
    for b in city.buildings() {
        if b.center_m().dist2(mrp) < r2 {
            area += b.area_m2();
            count += 1;
        }
    }
    let disk = std::f64::consts::PI * r2;
    NeighborhoodStats {
        kappa: (area / disk).min(1.0),
        iota: count as f64 / (disk * 1e-6),
        omega,
        radius_m: r_sun_m,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct A2glpmParams {
    pub a: f64,
    pub b: f64,
}

impl A2glpmParams {
    pub fn new(a: f64, b: f64) -> Result<Self, LosError> {
        if !(a > 0.0) {
            return Err(LosError::NonpositiveParameter { name: "a", value: a });
        }
        if !(b > 0.0) {
            return Err(LosError::NonpositiveParameter { name: "b", value: b });
        }
        Ok(Self { a, b })
    }

    /// LoS probability at elevation `theta_deg`.
    #[inline]
    pub fn p_los_elevation(&self, theta_deg: f64) -> f64 {
        1.0 / (1.0 + self.a * (-self.b * (theta_deg - self.a)).exp())
    }

    /// LoS probability for a 3D link length `d_m` to a transmitter at `h_m`.
    #[inline]
    pub fn p_los(&self, d_m: f64, h_m: f64) -> Result<f64, LosError> {
        Ok(self.p_los_elevation(elevation_deg(d_m, h_m)?))
    }
}

/// Elevation angle in degrees; 90 when the link is vertical.
pub fn elevation_deg(d_m: f64, h_m: f64) -> Result<f64, LosError> {
    if !(h_m > 0.0) || d_m < h_m * (1.0 - 1e-12) {
        return Err(LosError::DistanceBelowHeight { d_m, h_m });
    }
    let ground = (d_m * d_m - h_m * h_m).max(0.0).sqrt();
    Ok(if ground == 0.0 {
        90.0
    } else {
        (h_m / ground).atan().to_degrees()
    })
}

pub fn p_los(params: &A2glpmParams, d_m: f64, h_bs_m: f64) -> Result<f64, LosError> {
    params.p_los(d_m, h_bs_m)
}

/// Input box on which the polynomial fit is trusted. Inputs are clamped to it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolyDomain {
    pub kappa_iota: (f64, f64),
    pub omega: (f64, f64),
}

/// Cubic polynomials in `(kappa * iota, omega)`: `Q = sum C[i][j] (k i)^i w^j`
/// over `i + j <= 3`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolyCoeffTable {
    pub a: [[f64; 4]; 4],
    pub b: [[f64; 4]; 4],
    pub domain: Option<PolyDomain>,
}

#[derive(Serialize, Deserialize)]
struct TableFile {
    a: BTreeMap<String, f64>,
    b: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    domain: Option<PolyDomain>,
}

fn parse_key(k: &str) -> Option<(usize, usize)> {
    let inner = k.trim().strip_prefix('(')?.strip_suffix(')')?;
    let (i, j) = inner.split_once(',')?;
    Some((i.trim().parse().ok()?, j.trim().parse().ok()?))
}

fn to_grid(m: &BTreeMap<String, f64>, name: &str) -> Result<[[f64; 4]; 4], LosError> {
    let mut g = [[0.0; 4]; 4];
    for (k, &v) in m {
        let (i, j) = parse_key(k).ok_or_else(|| LosError::Table(format!("{name}: bad key {k:?}")))?;
        if i + j > 3 {
            return Err(LosError::Table(format!("{name}: degree of {k} exceeds 3")));
        }
        g[i][j] = v;
    }
    Ok(g)
}

fn from_grid(g: &[[f64; 4]; 4]) -> BTreeMap<String, f64> {
    let mut m = BTreeMap::new();
    for i in 0..4 {
        for j in 0..4 - i {
            m.insert(format!("({i},{j})"), g[i][j]);
        }
    }
    m
}

impl PolyCoeffTable {
    /// Published air-to-ground fit, indexed `[power of k*i][power of w]`.
    pub fn standard() -> Self {
        let a = [
            [9.34e-01, 2.30e-01, -2.25e-03, 1.86e-05],
            [1.97e-02, 2.44e-03, 6.58e-06, 0.0],
            [-1.24e-04, -3.34e-06, 0.0, 0.0],
            [2.73e-07, 0.0, 0.0, 0.0],
        ];
        let b = [
            [1.17, -7.56e-02, 1.98e-03, -1.78e-05],
            [-5.79e-03, 1.81e-04, -1.65e-06, 0.0],
            [1.73e-05, -2.02e-07, 0.0, 0.0],
            [-2.00e-08, 0.0, 0.0, 0.0],
        ];
        Self {
            a,
            b,
            domain: Some(PolyDomain {
                kappa_iota: (0.0, 250.0),
                omega: (1.0, 50.0),
            }),
        }
    }

    pub fn from_json(s: &str) -> Result<Self, LosError> {
        let f: TableFile = serde_json::from_str(s).map_err(|e| LosError::Table(e.to_string()))?;
        Ok(Self {
            a: to_grid(&f.a, "a")?,
            b: to_grid(&f.b, "b")?,
            domain: f.domain,
        })
    }

    pub fn load(path: &Path) -> Result<Self, LosError> {
        let s = std::fs::read_to_string(path).map_err(|e| LosError::Table(format!("{}: {e}", path.display())))?;
        Self::from_json(&s)
    }

    pub fn to_json(&self) -> String {
        let f = TableFile {
            a: from_grid(&self.a),
            b: from_grid(&self.b),
            domain: self.domain,
        };
        serde_json::to_string_pretty(&f).expect("table serializes")
    }

    fn eval(g: &[[f64; 4]; 4], x: f64, w: f64) -> f64 {
        let mut q = 0.0;
        for (i, row) in g.iter().enumerate() {
            for (j, c) in row.iter().enumerate().take(4 - i) {
                q += c * x.powi(i as i32) * w.powi(j as i32);
            }
        }
        q
    }

    /// Evaluates both polynomials at the (clamped) inputs.
    pub fn eval_raw(&self, kappa_iota: f64, omega: f64) -> (f64, f64) {
        let (x, w) = match self.domain {
            Some(d) => (
                kappa_iota.clamp(d.kappa_iota.0, d.kappa_iota.1),
                omega.clamp(d.omega.0, d.omega.1),
            ),
            None => (kappa_iota, omega),
        };
        (Self::eval(&self.a, x, w), Self::eval(&self.b, x, w))
    }
}

impl Default for PolyCoeffTable {
    fn default() -> Self {
        Self::standard()
    }
}

pub fn ab_from_stats(stats: &NeighborhoodStats, table: &PolyCoeffTable) -> Result<A2glpmParams, LosError> {
    let (a, b) = table.eval_raw(stats.kappa * stats.iota, stats.omega);
    A2glpmParams::new(a, b)
}

/// Reference terrain scenarios as `(name, kappa, iota per km^2, omega)`.
pub const SCENARIOS: [(&str, f64, f64, f64); 4] = [
    ("suburban", 0.1, 750.0, 8.0),
    ("urban", 0.3, 500.0, 15.0),
    ("dense-urban", 0.5, 300.0, 20.0),
    ("high-rise", 0.5, 300.0, 50.0),
];

/// Published (a, b) pairs for [`SCENARIOS`], in the same order.
pub const SCENARIO_AB: [(f64, f64); 4] = [(4.88, 0.43), (9.61, 0.16), (12.08, 0.11), (27.23, 0.08)];
