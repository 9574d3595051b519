//! Workspace domains and uniform grid cell decompositions.
//!
//! A [`CellDecomposition`] keeps every grid square that meets the interior of
//! the domain. A square that sticks out of the domain is marked `clipped`; its
//! geometric extent is still the full square, but membership and reference
//! points use the valid region `square ∩ cl(D)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, Point};

pub type CellId = usize;

/// Grids with more candidate squares than this are refused.
const MAX_GRID_SQUARES: usize = 50_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("grid side must be positive, got {0}")]
    NonPositiveSide(f64),
    #[error("side {side} does not evenly tile axis {axis} of extent {extent} ({ratio} squares)")]
    NonTilingSide {
        side: f64,
        axis: usize,
        extent: f64,
        ratio: f64,
    },
    #[error("grid of {0} squares exceeds the supported size")]
    GridTooLarge(usize),
    #[error("target cell diameter {0} is below the minimum-side threshold")]
    DegenerateTarget(f64),
    #[error("point {point:?} lies outside the closed domain (margin {margin})")]
    OutsideDomain { point: Vec<f64>, margin: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

/// Workspace domain `D`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Domain {
    Disk { center: Point, radius: f64 },
    Box { lo: Point, hi: Point },
}

impl Domain {
    pub fn disk(center: Point, radius: f64) -> Result<Self, GeometryError> {
        let d = Domain::Disk { center, radius };
        d.validate()?;
        Ok(d)
    }

    pub fn boxed(lo: Point, hi: Point) -> Result<Self, GeometryError> {
        let d = Domain::Box { lo, hi };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        match self {
            Domain::Disk { center, radius } => {
                if center.is_empty() {
                    return Err(GeometryError::InvalidDomain("empty center".into()));
                }
                if !(*radius > 0.0) || !radius.is_finite() {
                    return Err(GeometryError::InvalidDomain(format!(
                        "radius must be positive, got {radius}"
                    )));
                }
            }
            Domain::Box { lo, hi } => {
                if lo.is_empty() || lo.len() != hi.len() {
                    return Err(GeometryError::InvalidDomain(
                        "box corners must be nonempty and of equal dimension".into(),
                    ));
                }
                if lo.iter().zip(hi).any(|(a, b)| !(b > a)) {
                    return Err(GeometryError::InvalidDomain(
                        "box requires hi > lo componentwise".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            Domain::Disk { center, .. } => center.len(),
            Domain::Box { lo, .. } => lo.len(),
        }
    }

    /// Signed distance-like margin: positive inside, zero on the boundary,
    /// negative outside. For boxes this is the smallest slack over all faces.
    pub fn margin(&self, x: &[f64]) -> f64 {
        match self {
            Domain::Disk { center, radius } => radius - linalg::dist(x, center),
            Domain::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(v, (a, b))| (v - a).min(b - v))
                .fold(f64::INFINITY, f64::min),
        }
    }

    /// Membership in `cl(D)` up to `tol`.
    pub fn contains_closed(&self, x: &[f64], tol: f64) -> bool {
        self.margin(x) >= -tol
    }

    /// Membership in `int(D)`.
    pub fn contains_open(&self, x: &[f64]) -> bool {
        self.margin(x) > 0.0
    }

    /// Closest point of `cl(D)`.
    pub fn project(&self, x: &[f64]) -> Point {
        match self {
            Domain::Disk { center, radius } => Ball::new(center.clone(), *radius).project(x),
            Domain::Box { lo, hi } => Square::new(lo.clone(), hi.clone()).project(x),
        }
    }

    pub fn bounding_box(&self) -> (Point, Point) {
        match self {
            Domain::Disk { center, radius } => (
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            ),
            Domain::Box { lo, hi } => (lo.clone(), hi.clone()),
        }
    }

    pub fn volume(&self) -> f64 {
        match self {
            Domain::Disk { radius, .. } => linalg::unit_ball_volume(self.dim()) * radius.powi(self.dim() as i32),
            Domain::Box { lo, hi } => lo.iter().zip(hi).map(|(a, b)| b - a).product(),
        }
    }

    pub fn diameter(&self) -> f64 {
        match self {
            Domain::Disk { radius, .. } => 2.0 * radius,
            Domain::Box { lo, hi } => linalg::dist(lo, hi),
        }
    }

    /// Whether the closed ball `B(center; radius)` lies in `cl(D)`.
    pub fn contains_ball(&self, center: &[f64], radius: f64, tol: f64) -> bool {
        self.margin(center) >= radius - tol
    }

    fn as_convex(&self) -> ConvexRegion {
        match self {
            Domain::Disk { center, radius } => ConvexRegion::Ball(Ball::new(center.clone(), *radius)),
            Domain::Box { lo, hi } => ConvexRegion::Square(Square::new(lo.clone(), hi.clone())),
        }
    }
}

/// Axis-aligned box `[lo, hi]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Square {
    pub lo: Point,
    pub hi: Point,
}

impl Square {
    pub fn new(lo: Point, hi: Point) -> Self {
        Square { lo, hi }
    }

    pub fn center(&self) -> Point {
        self.lo.iter().zip(&self.hi).map(|(a, b)| 0.5 * (a + b)).collect()
    }

    pub fn project(&self, x: &[f64]) -> Point {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(v, (a, b))| v.clamp(*a, *b))
            .collect()
    }

    pub fn distance(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(v, (a, b))| {
                let d = (a - v).max(v - b).max(0.0);
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (a, b))| *v >= a - tol && *v <= b + tol)
    }

    /// Distance to the farthest point of the square.
    pub fn farthest_distance(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(v, (a, b))| {
                let d = (v - a).abs().max((b - v).abs());
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }

    /// The square shrunk by `delta` on every face (never inverted).
    pub fn shrunk(&self, delta: f64) -> Square {
        let (lo, hi) = self
            .lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| {
                let d = delta.min(0.5 * (b - a));
                (a + d, b - d)
            })
            .unzip();
        Square { lo, hi }
    }
}

/// Closed Euclidean ball.
#[derive(Clone, Debug, PartialEq)]
pub struct Ball {
    pub center: Point,
    pub radius: f64,
}

impl Ball {
    pub fn new(center: Point, radius: f64) -> Self {
        Ball { center, radius }
    }

    pub fn project(&self, x: &[f64]) -> Point {
        let d = linalg::dist(x, &self.center);
        if d <= self.radius {
            x.to_vec()
        } else {
            let s = self.radius / d;
            self.center.iter().zip(x).map(|(c, v)| c + s * (v - c)).collect()
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) enum ConvexRegion {
    Ball(Ball),
    Square(Square),
}

impl ConvexRegion {
    fn project(&self, x: &[f64]) -> Point {
        match self {
            ConvexRegion::Ball(b) => b.project(x),
            ConvexRegion::Square(s) => s.project(x),
        }
    }
}

/// Dykstra's alternating projection: approximates the nearest point of the
/// intersection of convex `regions` to `x0`.
pub(crate) fn nearest_in_intersection(x0: &[f64], regions: &[ConvexRegion], max_iter: usize, tol: f64) -> Point {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut corrections = vec![vec![0.0; n]; regions.len()];
    for _ in 0..max_iter {
        let prev = x.clone();
        for (region, corr) in regions.iter().zip(corrections.iter_mut()) {
            let y: Point = x.iter().zip(corr.iter()).map(|(a, b)| a + b).collect();
            let p = region.project(&y);
            for k in 0..n {
                corr[k] = y[k] - p[k];
            }
            x = p;
        }
        if linalg::dist(&x, &prev) <= tol {
            break;
        }
    }
    x
}

/// One grid cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub id: CellId,
    #[serde(rename = "lo")]
    pub square_lo: Point,
    #[serde(rename = "hi")]
    pub square_hi: Point,
    pub clipped: bool,
    #[serde(rename = "ref_point")]
    pub reference_point: Point,
}

impl Cell {
    pub fn square(&self) -> Square {
        Square::new(self.square_lo.clone(), self.square_hi.clone())
    }

    pub fn center(&self) -> Point {
        self.square().center()
    }
}

/// Uniform grid decomposition of a [`Domain`].
#[derive(Clone, Debug)]
pub struct CellDecomposition {
    domain: Domain,
    side: f64,
    origin: Point,
    counts: Vec<usize>,
    strides: Vec<usize>,
    lookup: Vec<Option<CellId>>,
    grid_index: Vec<Vec<usize>>,
    cells: Vec<Cell>,
    d_max: f64,
    d_in: f64,
}

#[derive(Serialize, Deserialize)]
struct DecompositionJson {
    domain: Domain,
    side: f64,
    cells: Vec<Cell>,
}

/// Chooses the largest grid side not exceeding `(√n/n)·d_max_target` such
/// that every bounding-box axis is an integer number of squares.
///
/// For a disk in the plane this is `2R / ceil(2R / ((√2/2)·d_max_target))`.
pub fn fit_side(domain: &Domain, d_max_target: f64) -> Result<f64, GeometryError> {
    let n = domain.dim() as f64;
    let (lo, hi) = domain.bounding_box();
    let max_extent = lo.iter().zip(&hi).map(|(a, b)| b - a).fold(0.0_f64, f64::max);
    if !(d_max_target > 0.0) || d_max_target < 1e-12 * max_extent {
        return Err(GeometryError::DegenerateTarget(d_max_target));
    }
    let limit = d_max_target / n.sqrt();
    let extents: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| b - a).collect();
    let first = extents[0];
    let all_equal = extents.iter().all(|e| (e - first).abs() <= 1e-12 * first.abs());
    if all_equal {
        let count = (first / limit * (1.0 - 1e-14)).ceil().max(1.0);
        let side = first / count;
        if count as usize > MAX_GRID_SQUARES {
            return Err(GeometryError::GridTooLarge(count as usize));
        }
        return Ok(side);
    }
    // Unequal box axes: search counts on the first axis until the side also
    // tiles every other axis.
    let start = (first / limit * (1.0 - 1e-14)).ceil().max(1.0) as usize;
    for count in start..start.saturating_mul(1000).max(start + 1) {
        let side = first / count as f64;
        if extents.iter().all(|e| is_integer_ratio(*e, side)) {
            return Ok(side);
        }
    }
    Err(GeometryError::NonTilingSide {
        side: limit,
        axis: 1,
        extent: extents[1],
        ratio: extents[1] / limit,
    })
}

fn is_integer_ratio(extent: f64, side: f64) -> bool {
    let q = extent / side;
    (q - q.round()).abs() <= 1e-9 * q.max(1.0)
}

impl CellDecomposition {
    /// Builds the grid of side `side` anchored at the lower corner of the
    /// domain's bounding box, keeping squares that meet `int(D)`.
    pub fn build_grid(domain: Domain, side: f64) -> Result<Self, GeometryError> {
        domain.validate()?;
        if !(side > 0.0) || !side.is_finite() {
            return Err(GeometryError::NonPositiveSide(side));
        }
        let n = domain.dim();
        let (origin, hi) = domain.bounding_box();
        let mut counts = Vec::with_capacity(n);
        for axis in 0..n {
            let extent = hi[axis] - origin[axis];
            let q = extent / side;
            if !is_integer_ratio(extent, side) || q.round() < 1.0 {
                return Err(GeometryError::NonTilingSide {
                    side,
                    axis,
                    extent,
                    ratio: q,
                });
            }
            counts.push(q.round() as usize);
        }
        let total = counts
            .iter()
            .try_fold(1usize, |acc, c| acc.checked_mul(*c))
            .filter(|t| *t <= MAX_GRID_SQUARES)
            .ok_or(GeometryError::GridTooLarge(usize::MAX))?;
        let mut strides = vec![1usize; n];
        for axis in 1..n {
            strides[axis] = strides[axis - 1] * counts[axis - 1];
        }

        let margin = 1e-6 * side;
        let mut lookup = vec![None; total];
        let mut cells = Vec::new();
        let mut grid_index = Vec::new();
        let mut idx = vec![0usize; n];
        for flat in 0..total {
            // axis 0 varies fastest: row-major order with rows along the last axis
            let mut rem = flat;
            for axis in (0..n).rev() {
                idx[axis] = rem / strides[axis];
                rem %= strides[axis];
            }
            let lo: Point = (0..n).map(|k| origin[k] + idx[k] as f64 * side).collect();
            let hi: Point = (0..n).map(|k| origin[k] + (idx[k] + 1) as f64 * side).collect();
            let square = Square::new(lo, hi);
            if !square_meets_interior(&domain, &square) {
                continue;
            }
            let clipped = !square_inside(&domain, &square);
            let reference_point = if clipped {
                clipped_reference_point(&domain, &square, margin)
            } else {
                square.center()
            };
            let id = cells.len();
            lookup[flat] = Some(id);
            grid_index.push(idx.clone());
            cells.push(Cell {
                id,
                square_lo: square.lo,
                square_hi: square.hi,
                clipped,
                reference_point,
            });
        }
        let d_max = (n as f64).sqrt() * side;
        Ok(CellDecomposition {
            domain,
            side,
            origin,
            counts,
            strides,
            lookup,
            grid_index,
            cells,
            d_max,
            d_in: side,
        })
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn side(&self) -> f64 {
        self.side
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn cell(&self, id: CellId) -> &Cell {
        &self.cells[id]
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Supremum of the cell diameters (full squares).
    pub fn d_max(&self) -> f64 {
        self.d_max
    }

    /// Largest ball diameter inscribable in every cell.
    pub fn d_in(&self) -> f64 {
        self.d_in
    }

    pub fn grid_counts(&self) -> &[usize] {
        &self.counts
    }

    /// Membership tolerance, `1e-12 · side`.
    pub fn eps_geo(&self) -> f64 {
        1e-12 * self.side
    }

    pub fn reference_point(&self, id: CellId) -> &[f64] {
        &self.cells[id].reference_point
    }

    /// Whether `x` lies in the valid region `square ∩ cl(D)` of cell `id`, up
    /// to `tol`.
    pub fn in_valid_region(&self, id: CellId, x: &[f64], tol: f64) -> bool {
        let c = &self.cells[id];
        c.square().contains(x, tol) && (!c.clipped || self.domain.contains_closed(x, tol))
    }

    /// Id of a cell containing `x`; the lowest id wins on shared boundaries.
    pub fn locate(&self, x: &[f64]) -> Result<CellId, GeometryError> {
        let n = self.dim();
        if x.len() != n {
            return Err(GeometryError::Dimension {
                expected: n,
                got: x.len(),
            });
        }
        let eps = self.eps_geo();
        let margin = self.domain.margin(x);
        if margin < -eps {
            return Err(GeometryError::OutsideDomain {
                point: x.to_vec(),
                margin,
            });
        }
        // Per axis, the one or two grid indices whose slab holds x.
        let mut choices: Vec<Vec<usize>> = Vec::with_capacity(n);
        for axis in 0..n {
            let q = (x[axis] - self.origin[axis]) / self.side;
            let count = self.counts[axis];
            let tol_q = eps / self.side;
            let mut opts = Vec::with_capacity(2);
            let k = q.round();
            if (q - k).abs() <= tol_q {
                let k = k as i64;
                for c in [k - 1, k] {
                    if c >= 0 && (c as usize) < count {
                        opts.push(c as usize);
                    }
                }
            } else {
                let f = q.floor() as i64;
                if f >= 0 && (f as usize) < count {
                    opts.push(f as usize);
                }
            }
            if opts.is_empty() {
                return Err(GeometryError::OutsideDomain {
                    point: x.to_vec(),
                    margin,
                });
            }
            choices.push(opts);
        }
        let mut best: Option<CellId> = None;
        let mut idx = vec![0usize; n];
        let combos: usize = choices.iter().map(|c| c.len()).product();
        for mut code in 0..combos {
            let mut flat = 0;
            for axis in 0..n {
                let len = choices[axis].len();
                idx[axis] = choices[axis][code % len];
                code /= len;
                flat += idx[axis] * self.strides[axis];
            }
            if let Some(id) = self.lookup[flat] {
                if self.cells[id].square().contains(x, eps) {
                    best = Some(best.map_or(id, |b| b.min(id)));
                }
            }
        }
        best.ok_or(GeometryError::OutsideDomain {
            point: x.to_vec(),
            margin,
        })
    }

    /// Cells whose valid region meets the ball `B(center; radius)`, using the
    /// open ball when `open` is set. Ids come back sorted.
    pub fn cells_meeting_ball(&self, center: &[f64], radius: f64, open: bool) -> Vec<CellId> {
        let n = self.dim();
        let mut ranges = Vec::with_capacity(n);
        for axis in 0..n {
            let lo = ((center[axis] - radius - self.origin[axis]) / self.side).floor() - 1.0;
            let hi = ((center[axis] + radius - self.origin[axis]) / self.side).floor() + 1.0;
            let count = self.counts[axis] as f64;
            let lo = lo.clamp(0.0, count - 1.0) as usize;
            let hi = hi.clamp(0.0, count - 1.0) as usize;
            ranges.push((lo, hi));
        }
        let mut out = Vec::new();
        let mut idx: Vec<usize> = ranges.iter().map(|r| r.0).collect();
        'outer: loop {
            let flat: usize = idx.iter().zip(&self.strides).map(|(i, s)| i * s).sum();
            if let Some(id) = self.lookup[flat] {
                let d = self.valid_region_distance(id, center);
                let hit = if open { d < radius } else { d <= radius };
                if hit {
                    out.push(id);
                }
            }
            for axis in 0..n {
                if idx[axis] < ranges[axis].1 {
                    idx[axis] += 1;
                    continue 'outer;
                }
                idx[axis] = ranges[axis].0;
            }
            break;
        }
        out.sort_unstable();
        out
    }

    /// Distance from `x` to the valid region of cell `id`.
    pub fn valid_region_distance(&self, id: CellId, x: &[f64]) -> f64 {
        let cell = &self.cells[id];
        let square = cell.square();
        let q = square.project(x);
        if !cell.clipped || self.domain.contains_closed(&q, self.eps_geo()) {
            return linalg::dist(&q, x);
        }
        let p = nearest_in_intersection(
            x,
            &[ConvexRegion::Square(square), self.domain.as_convex()],
            200,
            1e-14 * self.side,
        );
        linalg::dist(&p, x)
    }

    /// Ids of the cells sharing a face, edge or corner with `id` (excluding it).
    pub fn adjacent(&self, id: CellId) -> Vec<CellId> {
        let n = self.dim();
        let base = &self.grid_index[id];
        let mut out = Vec::new();
        let combos = 3usize.pow(n as u32);
        for mut code in 0..combos {
            let mut flat = 0usize;
            let mut valid = true;
            let mut is_self = true;
            for axis in 0..n {
                let off = (code % 3) as i64 - 1;
                code /= 3;
                if off != 0 {
                    is_self = false;
                }
                let v = base[axis] as i64 + off;
                if v < 0 || v >= self.counts[axis] as i64 {
                    valid = false;
                    break;
                }
                flat += v as usize * self.strides[axis];
            }
            if valid && !is_self {
                if let Some(other) = self.lookup[flat] {
                    out.push(other);
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// Uniform sample from the valid region of cell `id`.
    pub fn sample_in_cell<R: rand::Rng + ?Sized>(&self, id: CellId, rng: &mut R) -> Point {
        let cell = &self.cells[id];
        loop {
            let x: Point = cell
                .square_lo
                .iter()
                .zip(&cell.square_hi)
                .map(|(a, b)| a + (b - a) * rng.random::<f64>())
                .collect();
            if !cell.clipped || self.domain.contains_closed(&x, 0.0) {
                return x;
            }
        }
    }

    /// Uniform sample from `cl(D)`.
    pub fn sample_in_domain<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Point {
        sample_in_domain(&self.domain, rng)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(DecompositionJson {
            domain: self.domain.clone(),
            side: self.side,
            cells: self.cells.clone(),
        })
        .expect("decomposition serializes")
    }
}

/// Uniform sample from `cl(D)` by rejection from the bounding box.
pub fn sample_in_domain<R: rand::Rng + ?Sized>(domain: &Domain, rng: &mut R) -> Point {
    let (lo, hi) = domain.bounding_box();
    loop {
        let x: Point = lo
            .iter()
            .zip(&hi)
            .map(|(a, b)| a + (b - a) * rng.random::<f64>())
            .collect();
        if domain.contains_closed(&x, 0.0) {
            return x;
        }
    }
}

fn square_meets_interior(domain: &Domain, square: &Square) -> bool {
    match domain {
        Domain::Disk { center, radius } => square.distance(center) < *radius,
        Domain::Box { lo, hi } => square
            .lo
            .iter()
            .zip(&square.hi)
            .zip(lo.iter().zip(hi))
            .all(|((sl, sh), (dl, dh))| sh > dl && sl < dh),
    }
}

fn square_inside(domain: &Domain, square: &Square) -> bool {
    match domain {
        Domain::Disk { center, radius } => square.farthest_distance(center) <= *radius,
        Domain::Box { lo, hi } => square
            .lo
            .iter()
            .zip(&square.hi)
            .zip(lo.iter().zip(hi))
            .all(|((sl, sh), (dl, dh))| *sl >= *dl && *sh <= *dh),
    }
}

/// Square center projected into the domain shrunk by `margin`; falls back to
/// the nearest point of `square ∩ shrunk domain` when the projection leaves
/// the square.
fn clipped_reference_point(domain: &Domain, square: &Square, margin: f64) -> Point {
    let c = square.center();
    let shrunk = match domain {
        Domain::Disk { center, radius } => ConvexRegion::Ball(Ball::new(center.clone(), (radius - margin).max(0.0))),
        Domain::Box { lo, hi } => ConvexRegion::Square(Square::new(lo.clone(), hi.clone()).shrunk(margin)),
    };
    let p = shrunk.project(&c);
    if square.contains(&p, 0.0) {
        return p;
    }
    let p = nearest_in_intersection(
        &c,
        &[ConvexRegion::Square(square.clone()), shrunk.clone()],
        500,
        1e-15 * margin.max(f64::MIN_POSITIVE),
    );
    // Land exactly inside both sets.
    let p = square.project(&shrunk.project(&p));
    square.project(&p)
}
