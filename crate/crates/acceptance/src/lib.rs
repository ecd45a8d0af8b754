//! Fixtures shared by the acceptance suite: the fixed synthetic cities and
//! receive-point samplers.

use covmap::geometry::Point;
use covmap::ingest::{generate_city, Bounds, CityModel, SynthCityConfig};
use covmap::rng::{item_stream, Purpose};
use rand::Rng;

/// Urban statistics on 1 km^2 with 100 base stations per km^2.
pub fn urban_city(seed: u64) -> CityModel {
    generate_city(&SynthCityConfig::square(1000.0, 500.0, 0.3, 15.0, 100.0, seed)).expect("urban city generates")
}

/// Sparse homogeneous 3 km city used for the edge-test scaling check.
pub fn sparse_city(seed: u64) -> CityModel {
    let cfg = SynthCityConfig {
        max_retries: 2000,
        ..SynthCityConfig::square(3000.0, 100.0, 0.05, 5.0, 30.0, seed)
    };
    generate_city(&cfg).expect("sparse city generates")
}

/// True when `p` has both a base station and a building center strictly
/// within `r_m`. Points failing this are left out of loss statistics.
pub fn has_neighborhood(city: &CityModel, p: Point, r_m: f64) -> bool {
    let r2 = r_m * r_m;
    city.basestations().iter().any(|b| b.position_m.dist2(p) < r2)
        && city.buildings().iter().any(|b| b.center_m().dist2(p) < r2)
}

/// `n` uniform points of `region` outside every building that pass `keep`.
pub fn sample_points(
    city: &CityModel,
    region: Bounds,
    n: usize,
    seed: u64,
    keep: impl Fn(Point) -> bool,
) -> Vec<Point> {
    let mut rng = item_stream(seed, 0, Purpose::Sampling);
    let mut out = Vec::with_capacity(n);
    let mut tries = 0usize;
    while out.len() < n {
        tries += 1;
        assert!(tries < 1_000_000, "region too crowded to sample {n} points");
        let p = Point::new(rng.random_range(region.x0..region.x1), rng.random_range(region.y0..region.y1));
        if city.building_at(p).is_none() && keep(p) {
            out.push(p);
        }
    }
    out
}
