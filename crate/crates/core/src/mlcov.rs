//! Grid-weight coverage estimator.
//!
//! The square neighborhood of a receive point is quantized into `dim x dim`
//! cells holding building heights (H) and surviving base stations (B). A
//! learned product of soft steps over the cells between the receive point
//! and a target cell stands in for the line-of-sight probability of a base
//! station in that cell.
//!
//! Cell coordinates are handled in doubled units relative to the receive
//! point, which sits on the corner shared by the four central cells: the
//! center of cell `ix` is at `2 * ix - dim + 1`, an odd integer, and the cell
//! spans one unit either side of it. All path geometry is then exact integer
//! arithmetic.

use std::collections::HashMap;
use std::io::{BufRead, Write as _};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{avg_received_power, noise_power, ChannelParams, NakagamiGain};
use crate::geometry::Point;
use crate::ingest::CityModel;
use crate::lsq::{self, LeastSquares, LmOptions, Normal};
use crate::rng::{item_stream, Purpose};
use crate::simcore::{type2_blockage, VerificationCounters};

pub const DEFAULT_DIM: usize = 8;
pub const DEFAULT_SIDE_M: f64 = 235.75;

#[derive(Debug, Error)]
pub enum MlError {
    #[error("receive point lies inside a building")]
    InsideBuilding,
    #[error("no base station in the neighborhood has an unblocked link")]
    NoAssociableBs,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("insufficient training data: {0}")]
    InsufficientData(String),
    #[error("weight fit diverged: {0}")]
    FitDiverged(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse: {0}")]
    Parse(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub ix: usize,
    pub iy: usize,
}

impl Cell {
    pub const fn new(ix: usize, iy: usize) -> Self {
        Self { ix, iy }
    }

    fn doubled(self, dim: usize) -> (i64, i64) {
        let d = dim as i64;
        (2 * self.ix as i64 - d + 1, 2 * self.iy as i64 - d + 1)
    }

    fn from_doubled(x: i64, y: i64, dim: usize) -> Self {
        let d = dim as i64;
        Self::new(((x + d - 1) / 2) as usize, ((y + d - 1) / 2) as usize)
    }
}

fn check_grid(dim: usize, side_m: f64) -> Result<(), MlError> {
    if dim < 2 || !dim.is_multiple_of(2) {
        return Err(MlError::InvalidConfig(format!("grid dimension must be even and >= 2, got {dim}")));
    }
    if !(side_m > 0.0 && side_m.is_finite()) {
        return Err(MlError::InvalidConfig(format!("side length must be positive, got {side_m}")));
    }
    Ok(())
}

/// Cell of the `dim x dim` grid of side `side_m` centered on `mrp` that
/// contains `p`, if any. Cells are half-open on their upper edges.
pub fn cell_of(mrp: Point, p: Point, dim: usize, side_m: f64) -> Option<Cell> {
    let cs = side_m / dim as f64;
    let u = ((p.x - mrp.x) / cs + dim as f64 / 2.0).floor();
    let v = ((p.y - mrp.y) / cs + dim as f64 / 2.0).floor();
    let lim = dim as f64;
    (u >= 0.0 && v >= 0.0 && u < lim && v < lim).then(|| Cell::new(u as usize, v as usize))
}

pub fn cell_center(mrp: Point, c: Cell, dim: usize, side_m: f64) -> Point {
    let cs = side_m / dim as f64;
    let half = dim as f64 / 2.0;
    Point::new(mrp.x + (c.ix as f64 + 0.5 - half) * cs, mrp.y + (c.iy as f64 + 0.5 - half) * cs)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssociatedBs {
    pub index: usize,
    /// 3D link distance.
    pub distance_m: f64,
    pub ground_m: f64,
    pub los: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemovedBs {
    pub distance_m: f64,
    pub index: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurvivorBs {
    pub index: usize,
    pub cell: Cell,
    pub distance_m: f64,
}

/// Quantized neighborhood of one receive point. Matrices are indexed
/// `[iy][ix]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSample {
    pub dim: usize,
    pub side_length_m: f64,
    pub mrp: Point,
    pub occupancy: Vec<Vec<u8>>,
    pub heights: Vec<Vec<f64>>,
    pub associated: AssociatedBs,
    /// Nearer base stations that were tried and found blocked, nearest first.
    pub removed: Vec<RemovedBs>,
    /// In-square base stations left after association, nearest first.
    pub survivors: Vec<SurvivorBs>,
}

impl GridSample {
    pub fn height(&self, c: Cell) -> f64 {
        self.heights[c.iy][c.ix]
    }

    /// Number of surviving base stations mapped to `c`.
    pub fn multiplicity(&self, c: Cell) -> usize {
        self.survivors.iter().filter(|s| s.cell == c).count()
    }
}

/// Builds H and B for `mrp`: heights at cell centers, then nearest-first
/// removal of in-square base stations until one has an unblocked link.
pub fn build_matrices(city: &CityModel, mrp: Point, dim: usize, side_m: f64) -> Result<GridSample, MlError> {
    check_grid(dim, side_m)?;
    if city.building_at(mrp).is_some() {
        return Err(MlError::InsideBuilding);
    }
    let mut heights = vec![vec![0.0; dim]; dim];
    for (iy, row) in heights.iter_mut().enumerate() {
        for (ix, h) in row.iter_mut().enumerate() {
            let c = cell_center(mrp, Cell::new(ix, iy), dim, side_m);
            if let Some(b) = city.building_at(c) {
                *h = city.buildings()[b].height_m();
            }
        }
    }

    let mut inside: Vec<(f64, usize, Cell)> = city
        .basestations()
        .iter()
        .enumerate()
        .filter_map(|(i, bs)| {
            let c = cell_of(mrp, bs.position_m, dim, side_m)?;
            Some((bs.position_m.dist(mrp).hypot(bs.height_m), i, c))
        })
        .collect();
    inside.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut counters = VerificationCounters::default();
    let mut removed = Vec::new();
    let mut associated = None;
    let mut rest = 0;
    for (k, &(d, i, _)) in inside.iter().enumerate() {
        let bs = &city.basestations()[i];
        if type2_blockage(city, mrp, bs, &mut counters) {
            removed.push(RemovedBs { distance_m: d, index: i });
        } else {
            associated = Some(AssociatedBs {
                index: i,
                distance_m: d,
                ground_m: bs.position_m.dist(mrp),
                los: true,
            });
            rest = k + 1;
            break;
        }
    }
    let associated = associated.ok_or(MlError::NoAssociableBs)?;
    let survivors: Vec<SurvivorBs> = inside[rest..]
        .iter()
        .map(|&(d, i, c)| SurvivorBs { index: i, cell: c, distance_m: d })
        .collect();
    let mut occupancy = vec![vec![0u8; dim]; dim];
    for s in &survivors {
        occupancy[s.cell.iy][s.cell.ix] = 1;
    }
    Ok(GridSample {
        dim,
        side_length_m: side_m,
        mrp,
        occupancy,
        heights,
        associated,
        removed,
        survivors,
    })
}

/// Exact rational `n / d` with `d > 0`.
#[derive(Clone, Copy)]
struct Frac(i64, i64);

impl Frac {
    fn new(n: i64, d: i64) -> Self {
        if d < 0 { Frac(-n, -d) } else { Frac(n, d) }
    }
    fn le(self, o: Frac) -> bool {
        self.0 * o.1 <= o.0 * self.1
    }
    fn min(self, o: Frac) -> Frac {
        if self.le(o) { self } else { o }
    }
    fn max(self, o: Frac) -> Frac {
        if self.le(o) { o } else { self }
    }
}

/// Does the segment from the origin (excluded) to `t` meet the closed cell
/// centered at `c`? Both in doubled units; `t` has odd, hence nonzero,
/// coordinates.
fn segment_meets_cell(t: (i64, i64), c: (i64, i64)) -> bool {
    let axis = |tc: i64, cc: i64| {
        let (a, b) = (Frac::new(cc - 1, tc), Frac::new(cc + 1, tc));
        (a.min(b), a.max(b))
    };
    let (xl, xh) = axis(t.0, c.0);
    let (yl, yh) = axis(t.1, c.1);
    let lo = xl.max(yl).max(Frac(0, 1));
    let hi = xh.min(yh).min(Frac(1, 1));
    // hi > 0 keeps cells that touch the segment only at the receive point out.
    lo.le(hi) && !hi.le(Frac(0, 1))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathStep {
    pub cell: Cell,
    /// Projection of the cell center on the receive-point-to-target
    /// direction, as a fraction of the target distance.
    pub t: f64,
}

/// Cells traversed by the straight line from the receive point to the center
/// of `target`, nearest first, ending with `target` itself. Corner touches
/// count as traversal.
pub fn cell_path(dim: usize, target: Cell) -> Vec<PathStep> {
    let t = target.doubled(dim);
    let tt = (t.0 * t.0 + t.1 * t.1) as f64;
    let mut steps: Vec<PathStep> = Vec::new();
    for iy in 0..dim {
        for ix in 0..dim {
            let cell = Cell::new(ix, iy);
            let c = cell.doubled(dim);
            if segment_meets_cell(t, c) {
                let proj = (c.0 * t.0 + c.1 * t.1) as f64 / tt;
                steps.push(PathStep { cell, t: proj.max(0.0) });
            }
        }
    }
    steps.sort_by(|a, b| a.t.total_cmp(&b.t).then((a.cell.iy, a.cell.ix).cmp(&(b.cell.iy, b.cell.ix))));
    steps
}

/// The eight symmetries of the square grid, in doubled coordinates.
fn dihedral(k: usize, (x, y): (i64, i64)) -> (i64, i64) {
    match k {
        0 => (x, y),
        1 => (-y, x),
        2 => (-x, -y),
        3 => (y, -x),
        4 => (-x, y),
        5 => (x, -y),
        6 => (y, x),
        _ => (-y, -x),
    }
}

/// Image of cell `c` under symmetry `k`.
pub fn transform_cell(k: usize, c: Cell, dim: usize) -> Cell {
    let (x, y) = dihedral(k % 8, c.doubled(dim));
    Cell::from_doubled(x, y, dim)
}

fn pair_key(dim: usize, target: Cell, pos: Cell) -> [i64; 4] {
    (0..8)
        .map(|k| {
            let t = dihedral(k, target.doubled(dim));
            let p = dihedral(k, pos.doubled(dim));
            [t.0, t.1, p.0, p.1]
        })
        .min()
        .expect("eight symmetries")
}

fn target_key(dim: usize, target: Cell) -> (i64, i64) {
    (0..8).map(|k| dihedral(k, target.doubled(dim))).min().expect("eight symmetries")
}

/// Shared `(tau, h)` of one symmetry class. `cells` lists the member
/// `(target cell, path position)` pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightClass {
    pub cells: Vec<(Cell, usize)>,
    pub tau: f64,
    pub h: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct WeightModelFile {
    dim: usize,
    #[serde(rename = "L_m")]
    side_length_m: f64,
    classes: Vec<WeightClass>,
}

/// Per-cell soft-step products over traversed heights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WeightModelFile", into = "WeightModelFile")]
pub struct WeightModel {
    pub dim: usize,
    pub side_length_m: f64,
    pub classes: Vec<WeightClass>,
    /// For each target cell (row-major), its path as `(cell, class)`.
    paths: Vec<Vec<(Cell, usize)>>,
}

impl From<WeightModel> for WeightModelFile {
    fn from(m: WeightModel) -> Self {
        Self {
            dim: m.dim,
            side_length_m: m.side_length_m,
            classes: m.classes,
        }
    }
}

impl TryFrom<WeightModelFile> for WeightModel {
    type Error = MlError;

    fn try_from(f: WeightModelFile) -> Result<Self, MlError> {
        let mut m = WeightModel::initial(f.dim, f.side_length_m, 0.0, 1.0)?;
        if f.classes.len() != m.classes.len() {
            return Err(MlError::Parse(format!(
                "expected {} classes for dim {}, found {}",
                m.classes.len(),
                f.dim,
                f.classes.len()
            )));
        }
        for (mine, theirs) in m.classes.iter_mut().zip(f.classes) {
            if mine.cells != theirs.cells {
                return Err(MlError::Parse("class membership does not match the grid".into()));
            }
            if !(theirs.tau > 0.0) || !(theirs.h >= 0.0) {
                return Err(MlError::Parse("class needs tau > 0 and h >= 0".into()));
            }
            *mine = theirs;
        }
        Ok(m)
    }
}

impl WeightModel {
    /// Untrained model: thresholds at the line-of-sight height over each
    /// path cell, `t * bs_height_m`, and a common scale `tau0`.
    pub fn initial(dim: usize, side_m: f64, bs_height_m: f64, tau0: f64) -> Result<Self, MlError> {
        check_grid(dim, side_m)?;
        if !(tau0 > 0.0) || !(bs_height_m >= 0.0) {
            return Err(MlError::InvalidConfig("need tau0 > 0 and bs height >= 0".into()));
        }
        let mut ids: HashMap<[i64; 4], usize> = HashMap::new();
        let mut classes: Vec<WeightClass> = Vec::new();
        let mut paths = Vec::with_capacity(dim * dim);
        for iy in 0..dim {
            for ix in 0..dim {
                let target = Cell::new(ix, iy);
                let steps = cell_path(dim, target);
                let mut path = Vec::with_capacity(steps.len());
                for (k, s) in steps.iter().enumerate() {
                    let key = pair_key(dim, target, s.cell);
                    let id = *ids.entry(key).or_insert_with(|| {
                        classes.push(WeightClass { cells: Vec::new(), tau: tau0, h: s.t * bs_height_m });
                        classes.len() - 1
                    });
                    classes[id].cells.push((target, k));
                    path.push((s.cell, id));
                }
                paths.push(path);
            }
        }
        Ok(Self {
            dim,
            side_length_m: side_m,
            classes,
            paths,
        })
    }

    pub fn path(&self, target: Cell) -> &[(Cell, usize)] {
        &self.paths[target.iy * self.dim + target.ix]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("weight model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, MlError> {
        serde_json::from_str(s).map_err(|e| MlError::Parse(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), MlError> {
        Ok(std::fs::write(path, self.to_json())?)
    }

    pub fn load(path: &Path) -> Result<Self, MlError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn soft_step(tau: f64, h: f64, height: f64) -> f64 {
    0.5 - 0.5 * (tau * (height - h)).tanh()
}

/// Path positions that contribute a term: a positive height equal to one
/// already seen nearer on the path is the same building and is dropped.
fn active_positions(path: &[(Cell, usize)], heights: &[Vec<f64>]) -> Vec<usize> {
    let mut keep = Vec::with_capacity(path.len());
    for (k, &(c, _)) in path.iter().enumerate() {
        let hk = heights[c.iy][c.ix];
        let dup = hk > 0.0
            && path[..k]
                .iter()
                .any(|&(p, _)| heights[p.iy][p.ix].to_bits() == hk.to_bits());
        if !dup {
            keep.push(k);
        }
    }
    keep
}

/// Learned probability that a base station in `cell` has an unblocked link.
pub fn cell_weight(model: &WeightModel, cell: Cell, heights: &[Vec<f64>]) -> f64 {
    let path = model.path(cell);
    active_positions(path, heights)
        .into_iter()
        .map(|k| {
            let (c, id) = path[k];
            let cls = &model.classes[id];
            soft_step(cls.tau, cls.h, heights[c.iy][c.ix])
        })
        .product()
}

/// Blockage labels for the survivors of `sample`, true when unblocked.
pub fn label_sample(city: &CityModel, sample: &GridSample) -> Vec<bool> {
    let mut counters = VerificationCounters::default();
    sample
        .survivors
        .iter()
        .map(|s| !type2_blockage(city, sample.mrp, &city.basestations()[s.index], &mut counters))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlTrainConfig {
    pub dim: usize,
    pub side_length_m: f64,
    pub bs_height_m: f64,
    pub tau0: f64,
    pub tau_bounds: (f64, f64),
    pub h_max_m: f64,
    pub max_iter: usize,
}

impl Default for MlTrainConfig {
    fn default() -> Self {
        Self {
            dim: DEFAULT_DIM,
            side_length_m: DEFAULT_SIDE_M,
            bs_height_m: 20.0,
            tau0: 0.5,
            tau_bounds: (1e-3, 20.0),
            h_max_m: 1000.0,
            max_iter: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    /// Canonical target cell of the orbit this group fits.
    pub target: Cell,
    pub n_obs: usize,
    /// Total squared loss after each accepted solver step.
    pub history: Vec<f64>,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlTrainReport {
    pub n_observations: usize,
    /// Mean squared error of the fitted weights against the labels.
    pub loss: f64,
    pub groups: Vec<GroupReport>,
    /// Per class: observations touching it and their mean absolute residual.
    pub class_obs: Vec<usize>,
    pub class_residual: Vec<f64>,
}

struct Obs<'a> {
    target: Cell,
    heights: &'a [Vec<f64>],
    active: Vec<usize>,
    y: f64,
}

struct GroupProblem<'a> {
    model: &'a WeightModel,
    obs: Vec<Obs<'a>>,
    /// Global class id -> local parameter slot.
    slot: HashMap<usize, usize>,
}

impl GroupProblem<'_> {
    /// Weight and its gradient as `(parameter index, d/dparam)`.
    fn eval(&self, x: &[f64], o: &Obs<'_>, grad: &mut Vec<(usize, f64)>) -> f64 {
        grad.clear();
        let path = self.model.path(o.target);
        let n = o.active.len();
        let mut f = Vec::with_capacity(n);
        let mut u = Vec::with_capacity(n);
        for &k in &o.active {
            let (c, id) = path[k];
            let s = self.slot[&id];
            let (tau, h) = (x[2 * s], x[2 * s + 1]);
            let hk = o.heights[c.iy][c.ix];
            let arg = tau * (hk - h);
            u.push((s, arg.tanh(), hk - h, tau));
            f.push(0.5 - 0.5 * arg.tanh());
        }
        let mut prefix = vec![1.0; n + 1];
        for i in 0..n {
            prefix[i + 1] = prefix[i] * f[i];
        }
        let mut suffix = 1.0;
        for i in (0..n).rev() {
            let others = prefix[i] * suffix;
            let (s, th, dh, tau) = u[i];
            let df_du = -0.5 * (1.0 - th * th);
            grad.push((2 * s, others * df_du * dh));
            grad.push((2 * s + 1, others * df_du * (-tau)));
            suffix *= f[i];
        }
        prefix[n]
    }
}

impl LeastSquares for GroupProblem<'_> {
    fn n_params(&self) -> usize {
        2 * self.slot.len()
    }

    fn cost(&self, x: &[f64]) -> f64 {
        let mut g = Vec::new();
        self.obs
            .iter()
            .map(|o| {
                let r = self.eval(x, o, &mut g) - o.y;
                0.5 * r * r
            })
            .sum()
    }

    fn normal(&self, x: &[f64]) -> Normal {
        let n = self.n_params();
        let mut jtj = DMatrix::zeros(n, n);
        let mut jtr = DVector::zeros(n);
        let mut cost = 0.0;
        let mut g = Vec::new();
        for o in &self.obs {
            let r = self.eval(x, o, &mut g) - o.y;
            cost += 0.5 * r * r;
            for &(i, gi) in &g {
                jtr[i] += gi * r;
                for &(j, gj) in &g {
                    jtj[(i, j)] += gi * gj;
                }
            }
        }
        Normal { cost, jtj, jtr }
    }
}

/// Fits the class parameters to blockage labels by bounded least squares.
/// `labels[i][k]` is true when survivor `k` of `samples[i]` is unblocked.
/// Classes are fitted in independent groups, one per symmetry orbit of
/// target cells; classes no observation touches keep their initial values.
pub fn train_weights(
    samples: &[GridSample],
    labels: &[Vec<bool>],
    cfg: &MlTrainConfig,
) -> Result<(WeightModel, MlTrainReport), MlError> {
    if samples.len() != labels.len() {
        return Err(MlError::InvalidConfig("one label vector per sample".into()));
    }
    let mut model = WeightModel::initial(cfg.dim, cfg.side_length_m, cfg.bs_height_m, cfg.tau0)?;
    if !(cfg.tau_bounds.0 > 0.0 && cfg.tau_bounds.1 >= cfg.tau_bounds.0 && cfg.h_max_m >= 0.0) {
        return Err(MlError::InvalidConfig("tau bounds must be positive and ordered".into()));
    }

    let mut by_group: HashMap<(i64, i64), Vec<Obs<'_>>> = HashMap::new();
    for (s, l) in samples.iter().zip(labels) {
        if s.dim != cfg.dim || s.side_length_m != cfg.side_length_m {
            return Err(MlError::InvalidConfig("sample grid differs from the training grid".into()));
        }
        if s.survivors.len() != l.len() {
            return Err(MlError::InvalidConfig("one label per surviving base station".into()));
        }
        for (b, &unblocked) in s.survivors.iter().zip(l) {
            let active = active_positions(model.path(b.cell), &s.heights);
            by_group.entry(target_key(cfg.dim, b.cell)).or_default().push(Obs {
                target: b.cell,
                heights: &s.heights,
                active,
                y: if unblocked { 1.0 } else { 0.0 },
            });
        }
    }
    let n_observations: usize = by_group.values().map(Vec::len).sum();
    if n_observations == 0 {
        return Err(MlError::InsufficientData("no surviving base stations in any sample".into()));
    }

    let mut keys: Vec<(i64, i64)> = by_group.keys().copied().collect();
    keys.sort();
    let frozen = model.clone();
    let problems: Vec<GroupProblem<'_>> = keys
        .iter()
        .map(|k| {
            let obs = by_group.remove(k).expect("key present");
            let mut slot = HashMap::new();
            for o in &obs {
                for &(_, id) in frozen.path(o.target) {
                    let next = slot.len();
                    slot.entry(id).or_insert(next);
                }
            }
            GroupProblem { model: &frozen, obs, slot }
        })
        .collect();

    let opts = LmOptions {
        max_iter: cfg.max_iter,
        ..LmOptions::default()
    };
    let fits: Vec<_> = problems
        .par_iter()
        .map(|p| {
            let n = p.slot.len();
            let mut x0 = vec![0.0; 2 * n];
            let mut lo = vec![0.0; 2 * n];
            let mut hi = vec![0.0; 2 * n];
            for (&id, &s) in &p.slot {
                x0[2 * s] = frozen.classes[id].tau;
                x0[2 * s + 1] = frozen.classes[id].h;
                lo[2 * s] = cfg.tau_bounds.0;
                hi[2 * s] = cfg.tau_bounds.1;
                hi[2 * s + 1] = cfg.h_max_m;
            }
            lsq::minimize(p, &x0, &lo, &hi, &opts)
        })
        .collect();

    let mut groups = Vec::with_capacity(keys.len());
    for ((k, p), fit) in keys.iter().zip(&problems).zip(&fits) {
        if !fit.x.iter().all(|v| v.is_finite()) {
            return Err(MlError::FitDiverged(format!("group {k:?}")));
        }
        for (&id, &s) in &p.slot {
            model.classes[id].tau = fit.x[2 * s];
            model.classes[id].h = fit.x[2 * s + 1];
        }
        groups.push(GroupReport {
            target: Cell::from_doubled(k.0, k.1, cfg.dim),
            n_obs: p.obs.len(),
            history: fit.history.iter().map(|c| 2.0 * c).collect(),
            converged: fit.converged,
        });
    }

    let mut class_obs = vec![0usize; model.classes.len()];
    let mut class_abs = vec![0.0; model.classes.len()];
    let mut sq = 0.0;
    for p in &problems {
        for o in &p.obs {
            let r = cell_weight(&model, o.target, o.heights) - o.y;
            sq += r * r;
            for &(_, id) in model.path(o.target) {
                class_obs[id] += 1;
                class_abs[id] += r.abs();
            }
        }
    }
    let class_residual = class_abs
        .iter()
        .zip(&class_obs)
        .map(|(a, &n)| if n > 0 { a / n as f64 } else { 0.0 })
        .collect();
    let report = MlTrainReport {
        n_observations,
        loss: sq / n_observations as f64,
        groups,
        class_obs,
        class_residual,
    };
    Ok((model, report))
}

/// Mean squared error of `model` against held-out labels.
pub fn weight_loss(model: &WeightModel, samples: &[GridSample], labels: &[Vec<bool>]) -> f64 {
    let mut sq = 0.0;
    let mut n = 0usize;
    for (s, l) in samples.iter().zip(labels) {
        for (b, &y) in s.survivors.iter().zip(l) {
            let r = cell_weight(model, b.cell, &s.heights) - if y { 1.0 } else { 0.0 };
            sq += r * r;
            n += 1;
        }
    }
    if n == 0 { 0.0 } else { sq / n as f64 }
}

/// Coverage from a grid sample: the associated link is line-of-sight, the
/// removed ones are not, and each survivor is line-of-sight with its cell
/// weight, redrawn in every fading realization. Base stations outside the
/// square are ignored.
pub fn ml_coverage(sample: &GridSample, model: &WeightModel, ch: &ChannelParams, n_iter: usize, seed: u64) -> f64 {
    ml_coverage_stream(sample, model, ch, n_iter, seed, 0)
}

pub fn ml_coverage_stream(
    sample: &GridSample,
    model: &WeightModel,
    ch: &ChannelParams,
    n_iter: usize,
    seed: u64,
    stream: u64,
) -> f64 {
    assert!(n_iter >= 1);
    assert_eq!(sample.dim, model.dim, "sample and model grids differ");
    let gamma = ch.sinr_threshold_linear;
    if gamma.is_infinite() {
        return 0.0;
    }
    let power = |d: f64, los: bool| avg_received_power(ch, d, los).expect("link distance is at least the BS height");
    // (LoS power, NLoS power, LoS probability); the associated link comes first.
    let mut links = Vec::with_capacity(1 + sample.removed.len() + sample.survivors.len());
    let d = sample.associated.distance_m;
    links.push((power(d, true), power(d, false), 1.0));
    for r in &sample.removed {
        links.push((power(r.distance_m, true), power(r.distance_m, false), 0.0));
    }
    for s in &sample.survivors {
        let w = cell_weight(model, s.cell, &sample.heights);
        links.push((power(s.distance_m, true), power(s.distance_m, false), w));
    }
    let noise = noise_power(ch);
    let los_gain = NakagamiGain::new(ch.nakagami_m_los);
    let nlos_gain = NakagamiGain::new(ch.nakagami_m_nlos);
    let mut fading = item_stream(seed, stream, Purpose::Fading);
    let mut blockage = item_stream(seed, stream, Purpose::Blockage);
    let mut covered = 0usize;
    for _ in 0..n_iter {
        let mut signal = 0.0;
        let mut interference = 0.0;
        for (i, &(p_los, p_nlos, w)) in links.iter().enumerate() {
            let los = if w >= 1.0 {
                true
            } else if w <= 0.0 {
                false
            } else {
                blockage.random::<f64>() < w
            };
            let s = if los { p_los * los_gain.sample(&mut fading) } else { p_nlos * nlos_gain.sample(&mut fading) };
            if i == 0 {
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

/// [`ml_coverage_stream`] at a point of `city`: zero inside buildings and
/// when no base station in the square can be associated.
pub fn ml_coverage_at(
    city: &CityModel,
    mrp: Point,
    model: &WeightModel,
    ch: &ChannelParams,
    n_iter: usize,
    seed: u64,
    stream: u64,
) -> Result<f64, MlError> {
    match build_matrices(city, mrp, model.dim, model.side_length_m) {
        Ok(s) => Ok(ml_coverage_stream(&s, model, ch, n_iter, seed, stream)),
        Err(MlError::InsideBuilding | MlError::NoAssociableBs) => Ok(0.0),
        Err(e) => Err(e),
    }
}

/// One training sample with its survivor labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub sample: GridSample,
    pub unblocked: Vec<bool>,
}

/// Draws `n` labelled samples at uniform receive points, cycling through
/// `cities`. Points inside buildings or without an associable base station
/// are redrawn. Each sample draws from its own stream.
pub fn generate_corpus(
    cities: &[CityModel],
    n: usize,
    dim: usize,
    side_m: f64,
    seed: u64,
) -> Result<Vec<TrainingRecord>, MlError> {
    check_grid(dim, side_m)?;
    if cities.is_empty() {
        return Err(MlError::InsufficientData("no cities".into()));
    }
    (0..n)
        .into_par_iter()
        .map(|i| {
            let city = &cities[i % cities.len()];
            let b = city.bounds();
            let m = side_m / 2.0;
            let (x0, x1, y0, y1) = if b.width() > side_m && b.height() > side_m {
                (b.x0 + m, b.x1 - m, b.y0 + m, b.y1 - m)
            } else {
                (b.x0, b.x1, b.y0, b.y1)
            };
            let mut rng = item_stream(seed, i as u64, Purpose::Sampling);
            for _ in 0..10_000 {
                let p = Point::new(rng.random_range(x0..x1), rng.random_range(y0..y1));
                match build_matrices(city, p, dim, side_m) {
                    Ok(sample) => {
                        let unblocked = label_sample(city, &sample);
                        return Ok(TrainingRecord { sample, unblocked });
                    }
                    Err(MlError::InsideBuilding | MlError::NoAssociableBs) => continue,
                    Err(e) => return Err(e),
                }
            }
            Err(MlError::InsufficientData(format!("no usable receive point found for sample {i}")))
        })
        .collect()
}

pub fn write_corpus(path: &Path, records: &[TrainingRecord]) -> Result<(), MlError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| MlError::Parse(e.to_string()))?;
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_corpus(path: &Path) -> Result<Vec<TrainingRecord>, MlError> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| MlError::Parse(format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}
