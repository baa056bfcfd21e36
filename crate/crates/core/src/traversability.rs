//! Geometric traversability from registered terrain points.
//!
//! Points are binned into grid cells where running moments are kept. A cell's
//! surface is the orthogonal least-squares plane through its points; slope,
//! roughness and step height against neighboring cells are turned into a
//! score in `[0, 1]` and then thresholded into the navigation grid.

use std::path::Path;

use nalgebra::{Matrix3, Point3, SymmetricEigen};

use crate::error::{Error, Result};
use crate::grid::{BinaryTraversabilityGrid, Cell, Grid, GridSpec, Nav, Traversability, TraversabilityGrid};

pub type TerrainPointBatch = Vec<Point3<f64>>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraversabilityParams {
    /// Radians.
    pub max_slope: f64,
    /// Meters, RMS distance to the fitted plane.
    pub max_roughness: f64,
    /// Meters.
    pub max_step: f64,
    pub min_points: u32,
}

impl Default for TraversabilityParams {
    fn default() -> Self {
        Self {
            max_slope: 25f64.to_radians(),
            max_roughness: 0.05,
            max_step: 0.15,
            min_points: 5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellTerrainStats {
    pub count: u32,
    pub mean_z: f64,
    /// Angle between the plane normal and vertical, in `[0, pi/2]`.
    pub slope: f64,
    pub roughness: f64,
    pub step_height: f64,
}

/// Running moments of the points in one cell, taken about the cell center
/// so sums stay well conditioned far from the world origin.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
struct Moments {
    n: u32,
    s: [f64; 3],
    // xx, xy, xz, yy, yz, zz
    ss: [f64; 6],
    z_min: f64,
    z_max: f64,
}

impl Moments {
    fn add(&mut self, x: f64, y: f64, z: f64) {
        if self.n == 0 {
            self.z_min = z;
            self.z_max = z;
        } else {
            self.z_min = self.z_min.min(z);
            self.z_max = self.z_max.max(z);
        }
        self.n += 1;
        self.s[0] += x;
        self.s[1] += y;
        self.s[2] += z;
        self.ss[0] += x * x;
        self.ss[1] += x * y;
        self.ss[2] += x * z;
        self.ss[3] += y * y;
        self.ss[4] += y * z;
        self.ss[5] += z * z;
    }

    fn mean_z(&self) -> f64 {
        self.s[2] / self.n as f64
    }

    /// Slope and RMS residual of the orthogonal least-squares plane.
    fn plane(&self) -> (f64, f64) {
        if self.n < 3 {
            return (0.0, 0.0);
        }
        let n = self.n as f64;
        let m = [self.s[0] / n, self.s[1] / n, self.s[2] / n];
        let c = |k: usize, a: usize, b: usize| self.ss[k] / n - m[a] * m[b];
        let cov = Matrix3::new(
            c(0, 0, 0),
            c(1, 0, 1),
            c(2, 0, 2),
            c(1, 0, 1),
            c(3, 1, 1),
            c(4, 1, 2),
            c(2, 0, 2),
            c(4, 1, 2),
            c(5, 2, 2),
        );
        let eig = SymmetricEigen::new(cov);
        let k = eig.eigenvalues.imin();
        let normal = eig.eigenvectors.column(k);
        let slope = normal[2].abs().min(1.0).acos();
        let roughness = eig.eigenvalues[k].max(0.0).sqrt();
        (slope, roughness)
    }
}

#[derive(Clone, Debug)]
pub struct TerrainStats {
    moments: Grid<Moments>,
    /// Points that fell outside the grid extent.
    pub dropped: u64,
}

impl TerrainStats {
    pub fn new(spec: GridSpec) -> Self {
        Self {
            moments: Grid::filled(spec, Moments::default()),
            dropped: 0,
        }
    }

    pub fn spec(&self) -> &GridSpec {
        self.moments.spec()
    }

    pub fn count(&self, cell: Cell) -> u32 {
        self.moments[cell].n
    }

    /// Bins every point into its cell. Points outside the grid are counted in `dropped`.
    pub fn accumulate_points(&mut self, batch: &[Point3<f64>]) {
        for p in batch {
            self.add_point(p.x, p.y, p.z);
        }
    }

    /// Adds one point; returns the cell it landed in.
    pub fn add_point(&mut self, x: f64, y: f64, z: f64) -> Option<Cell> {
        let spec = *self.spec();
        match spec.world_to_cell(x, y) {
            Ok(cell) => {
                let (cx, cy) = spec.center(cell);
                self.moments[cell].add(x - cx, y - cy, z);
                Some(cell)
            }
            Err(_) => {
                self.dropped += 1;
                None
            }
        }
    }

    fn neighbor_mean(&self, cell: Cell, min_points: u32) -> Option<f64> {
        let spec = self.spec();
        let (sum, k) = spec
            .neighbors8(cell)
            .map(|nb| &self.moments[nb])
            .filter(|m| m.n >= min_points.max(1))
            .fold((0.0, 0usize), |(s, k), m| (s + m.mean_z(), k + 1));
        (k > 0).then(|| sum / k as f64)
    }

    /// Statistics of one cell; neighbors count toward the step height when
    /// they hold at least `min_points` points.
    pub fn cell_stats(&self, cell: Cell, min_points: u32) -> CellTerrainStats {
        let m = &self.moments[cell];
        if m.n == 0 {
            return CellTerrainStats {
                count: 0,
                mean_z: 0.0,
                slope: 0.0,
                roughness: 0.0,
                step_height: 0.0,
            };
        }
        let (slope, roughness) = m.plane();
        let step_height = self
            .neighbor_mean(cell, min_points)
            .map(|nm| (m.z_max - nm).max(nm - m.z_min).max(0.0))
            .unwrap_or(0.0);
        CellTerrainStats {
            count: m.n,
            mean_z: m.mean_z(),
            slope,
            roughness,
            step_height,
        }
    }

    pub fn score_cell(&self, cell: Cell, params: &TraversabilityParams) -> Traversability {
        if self.moments[cell].n < params.min_points {
            return Traversability::Unknown;
        }
        let st = self.cell_stats(cell, params.min_points);
        let term = |metric: f64, max: f64| (1.0 - metric / max).clamp(0.0, 1.0);
        let s = term(st.slope, params.max_slope)
            .min(term(st.roughness, params.max_roughness))
            .min(term(st.step_height, params.max_step));
        Traversability::Score(s)
    }

    pub fn score_cells(&self, params: &TraversabilityParams) -> TraversabilityGrid {
        let spec = *self.spec();
        let cells = spec.cells().map(|c| self.score_cell(c, params)).collect();
        Grid::from_vec(spec, cells).expect("spec-sized")
    }

    /// Rescores `changed` cells and their 8-neighbors in place.
    pub fn rescore(&self, trav: &mut TraversabilityGrid, changed: &[Cell], params: &TraversabilityParams) {
        let spec = *self.spec();
        let mut touched: Vec<Cell> = Vec::with_capacity(changed.len() * 9);
        for &c in changed {
            touched.push(c);
            touched.extend(spec.neighbors8(c));
        }
        touched.sort_unstable();
        touched.dedup();
        for c in touched {
            trav[c] = self.score_cell(c, params);
        }
    }
}

/// Score >= `t` is Free (inclusive), below is Blocked, Unknown stays Unknown.
pub fn threshold(trav: &TraversabilityGrid, t: f64) -> BinaryTraversabilityGrid {
    trav.map(|v| match *v {
        Traversability::Unknown => Nav::Unknown,
        Traversability::Score(s) if s >= t => Nav::Free,
        Traversability::Score(_) => Nav::Blocked,
    })
}

pub fn parse_points(text: &str) -> Result<TerrainPointBatch> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|e| Error::Parse {
                line: n + 1,
                msg: format!("{e}"),
            })?;
        match vals[..] {
            [x, y, z] if x.is_finite() && y.is_finite() && z.is_finite() => out.push(Point3::new(x, y, z)),
            _ => {
                return Err(Error::Parse {
                    line: n + 1,
                    msg: "expected three finite values `x y z`".into(),
                })
            }
        }
    }
    Ok(out)
}

pub fn read_points(path: &Path) -> Result<TerrainPointBatch> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_points(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec() -> GridSpec {
        GridSpec::new(0.0, 0.0, 0.5, 4, 4).unwrap()
    }

    /// Vertical least-squares fit z = a x + b y + c via normal equations.
    fn ls_slope(points: &[Point3<f64>]) -> f64 {
        let mut ata = Matrix3::zeros();
        let mut atb = nalgebra::Vector3::zeros();
        for p in points {
            let row = nalgebra::Vector3::new(p.x, p.y, 1.0);
            ata += row * row.transpose();
            atb += row * p.z;
        }
        let sol = ata.lu().solve(&atb).unwrap();
        sol[0].hypot(sol[1]).atan()
    }

    #[test]
    fn empty_batch_is_identity() {
        let mut st = TerrainStats::new(spec());
        st.accumulate_points(&[]);
        assert!(spec().cells().all(|c| st.count(c) == 0));
        assert_eq!(st.dropped, 0);
    }

    #[test]
    fn flat_cell_has_zero_slope_and_roughness() {
        let mut st = TerrainStats::new(spec());
        st.accumulate_points(&[
            Point3::new(0.1, 0.1, 0.0),
            Point3::new(0.4, 0.1, 0.0),
            Point3::new(0.1, 0.4, 0.0),
            Point3::new(0.4, 0.4, 0.0),
        ]);
        let s = st.cell_stats(Cell::new(0, 0), 5);
        assert_eq!(s.count, 4);
        assert!(s.slope.abs() < 1e-12);
        assert!(s.roughness.abs() < 1e-12);
    }

    #[test]
    fn plane_at_twenty_degrees() {
        let spec = GridSpec::new(0.0, 0.0, 1.0, 1, 1).unwrap();
        let t = 20f64.to_radians().tan();
        let pts: Vec<_> = (0..100)
            .map(|k| {
                let x = (k % 10) as f64 * 0.1 + 0.03;
                let y = (k / 10) as f64 * 0.1 + 0.05;
                Point3::new(x, y, x * t)
            })
            .collect();
        let oracle = ls_slope(&pts);
        let mut st = TerrainStats::new(spec);
        st.accumulate_points(&pts);
        let s = st.cell_stats(Cell::new(0, 0), 5);
        assert!((oracle.to_degrees() - 20.0).abs() < 0.5);
        assert!((s.slope - oracle).abs() < 1e-9);
        assert!(s.roughness < 1e-7);
    }

    #[test]
    fn scoring_rules() {
        let p = TraversabilityParams::default();
        let mut st = TerrainStats::new(spec());
        assert_eq!(st.score_cell(Cell::new(0, 0), &p), Traversability::Unknown);

        for k in 0..6 {
            st.add_point(0.05 + 0.07 * k as f64, 0.1 + (0.13 * (k * k) as f64) % 0.3, 0.0);
        }
        assert_eq!(st.score_cell(Cell::new(0, 0), &p), Traversability::Score(1.0));

        // slope exactly at the limit scores zero
        let mut st = TerrainStats::new(GridSpec::new(0.0, 0.0, 1.0, 1, 1).unwrap());
        let t = p.max_slope.tan();
        for k in 0..9 {
            let (x, y) = (0.2 + 0.3 * (k % 3) as f64, 0.2 + 0.3 * (k / 3) as f64);
            st.add_point(x, y, x * t);
        }
        match st.score_cell(Cell::new(0, 0), &p) {
            Traversability::Score(s) => assert!(s < 1e-9, "score {s}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn step_height_against_neighbors() {
        let spec = GridSpec::new(0.0, 0.0, 1.0, 3, 1).unwrap();
        let mut st = TerrainStats::new(spec);
        for i in 0..3 {
            for k in 0..6 {
                let z = if i == 1 { 0.4 } else { 0.0 };
                st.add_point(i as f64 + 0.1 + 0.15 * k as f64, 0.2 + 0.1 * k as f64, z);
            }
        }
        let s = st.cell_stats(Cell::new(1, 0), 5);
        assert!((s.step_height - 0.4).abs() < 1e-12);
        let p = TraversabilityParams::default();
        assert_eq!(st.score_cell(Cell::new(1, 0), &p), Traversability::Score(0.0));
        // lone cell without scored neighbors uses step 0
        let mut lone = TerrainStats::new(spec);
        for k in 0..6 {
            lone.add_point(1.1 + 0.15 * k as f64, 0.2 + 0.1 * k as f64, 3.0);
        }
        assert_eq!(lone.cell_stats(Cell::new(1, 0), 5).step_height, 0.0);
    }

    #[test]
    fn out_of_extent_points_are_tallied() {
        let mut st = TerrainStats::new(spec());
        st.accumulate_points(&[Point3::new(-1.0, 0.0, 0.0), Point3::new(9.0, 9.0, 0.0)]);
        assert_eq!(st.dropped, 2);
    }

    #[test]
    fn threshold_examples() {
        let s = GridSpec::new(0.0, 0.0, 1.0, 4, 1).unwrap();
        let unknown = Grid::filled(s, Traversability::Unknown);
        assert!(threshold(&unknown, 0.3).as_slice().iter().all(|n| *n == Nav::Unknown));
        let trav = Grid::from_vec(
            s,
            vec![
                Traversability::Score(0.7),
                Traversability::Score(0.5),
                Traversability::Score(0.49),
                Traversability::Unknown,
            ],
        )
        .unwrap();
        assert_eq!(
            threshold(&trav, 0.5).as_slice(),
            &[Nav::Free, Nav::Free, Nav::Blocked, Nav::Unknown]
        );
    }

    #[test]
    fn parses_point_files() {
        let pts = parse_points("# header\n0 0 0\n1.5 -2 0.25\n\n").unwrap();
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[1], Point3::new(1.5, -2.0, 0.25));
        assert!(parse_points("1 2\n").is_err());
        assert!(parse_points("1 2 x\n").is_err());
    }

    fn score_of(points: &[Point3<f64>], batches: usize) -> Vec<Traversability> {
        let spec = GridSpec::new(0.0, 0.0, 0.5, 3, 3).unwrap();
        let mut st = TerrainStats::new(spec);
        let chunk = points.len().div_ceil(batches.max(1)).max(1);
        for b in points.chunks(chunk) {
            st.accumulate_points(b);
        }
        st.score_cells(&TraversabilityParams::default()).as_slice().to_vec()
    }

    proptest! {
        #[test]
        fn permutation_and_batching_invariant(
            pts in prop::collection::vec((0.0f64..1.5, 0.0f64..1.5, -0.2f64..0.2), 1..120),
            seed in any::<u64>(), batches in 1usize..7,
        ) {
            let points: Vec<_> = pts.iter().map(|&(x, y, z)| Point3::new(x, y, z)).collect();
            let mut shuffled = points.clone();
            use rand::{seq::SliceRandom, SeedableRng};
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let a = score_of(&points, 1);
            let b = score_of(&shuffled, batches);
            for (x, y) in a.iter().zip(&b) {
                match (x, y) {
                    (Traversability::Unknown, Traversability::Unknown) => {}
                    (Traversability::Score(p), Traversability::Score(q)) => prop_assert!((p - q).abs() < 1e-9),
                    _ => prop_assert!(false, "{:?} vs {:?}", x, y),
                }
            }
        }

        #[test]
        fn raising_threshold_never_frees(scores in prop::collection::vec(prop::option::of(0.0f64..=1.0), 1..50),
                                         t1 in 0.0f64..=1.0, dt in 0.0f64..=1.0) {
            let s = GridSpec::new(0.0, 0.0, 1.0, scores.len(), 1).unwrap();
            let trav = Grid::from_vec(s, scores.iter().map(|o| o.map_or(Traversability::Unknown, Traversability::Score)).collect()).unwrap();
            let t2 = (t1 + dt).min(1.0);
            let lo = threshold(&trav, t1);
            let hi = threshold(&trav, t2);
            for (a, b) in lo.as_slice().iter().zip(hi.as_slice()) {
                prop_assert!(!(*a == Nav::Blocked && *b == Nav::Free));
            }
        }

        #[test]
        fn exact_planes_fit_exactly(a in -1.0f64..1.0, b in -1.0f64..1.0, c in -2.0f64..2.0) {
            let spec = GridSpec::new(10.0, -30.0, 0.5, 1, 1).unwrap();
            let mut st = TerrainStats::new(spec);
            for k in 0..16 {
                let x = 10.03 + 0.11 * (k % 4) as f64 + 0.01 * k as f64;
                let y = -29.97 + 0.12 * (k / 4) as f64;
                st.add_point(x, y, a * (x - 10.0) + b * (y + 30.0) + c);
            }
            let s = st.cell_stats(Cell::new(0, 0), 5);
            prop_assert!(s.roughness < 1e-7);
            prop_assert!((s.slope - a.hypot(b).atan()).abs() < 1e-9);
        }
    }
}
