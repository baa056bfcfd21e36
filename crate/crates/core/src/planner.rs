//! Shortest paths on the navigation grid and waypoint sampling along them.
//!
//! Moves are 8-connected over Free cells. A diagonal move is refused when both
//! cardinal cells it cuts past are non-Free. Costs are kept as exact counts of
//! cardinal and diagonal steps, so equal-length paths compare equal no matter
//! the order in which their steps were summed.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::grid::{BinaryTraversabilityGrid, Cell, GridSpec, NEIGHBORS_8};

/// Path cost as a number of cardinal and diagonal steps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct StepCost {
    pub cardinal: u32,
    pub diagonal: u32,
}

impl StepCost {
    /// Length in cell units.
    pub fn value(&self) -> f64 {
        self.cardinal as f64 + self.diagonal as f64 * std::f64::consts::SQRT_2
    }

    fn add(self, di: i64, dj: i64) -> Self {
        if di != 0 && dj != 0 {
            Self {
                diagonal: self.diagonal + 1,
                ..self
            }
        } else {
            Self {
                cardinal: self.cardinal + 1,
                ..self
            }
        }
    }

    fn plus(self, o: StepCost) -> Self {
        Self {
            cardinal: self.cardinal + o.cardinal,
            diagonal: self.diagonal + o.diagonal,
        }
    }

    /// Octile distance between two cells.
    pub fn octile(a: Cell, b: Cell) -> Self {
        let dx = a.i.abs_diff(b.i) as u32;
        let dy = a.j.abs_diff(b.j) as u32;
        Self {
            cardinal: dx.max(dy) - dx.min(dy),
            diagonal: dx.min(dy),
        }
    }
}

impl PartialOrd for StepCost {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for StepCost {
    fn cmp(&self, other: &Self) -> Ordering {
        if self == other {
            // a + b*sqrt(2) is injective over integer pairs
            return Ordering::Equal;
        }
        self.value().total_cmp(&other.value())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Path {
    pub cells: Vec<Cell>,
    pub cost: StepCost,
    pub length_m: f64,
}

impl Path {
    fn from_cells(cells: Vec<Cell>, resolution: f64) -> Self {
        let cost = cells.windows(2).fold(StepCost::default(), |c, w| {
            c.add(w[1].i as i64 - w[0].i as i64, w[1].j as i64 - w[0].j as i64)
        });
        Self {
            length_m: cost.value() * resolution,
            cost,
            cells,
        }
    }

    pub fn start(&self) -> Cell {
        self.cells[0]
    }

    pub fn goal(&self) -> Cell {
        *self.cells.last().expect("paths are non-empty")
    }
}

/// Whether the move `cell + (di, dj)` is allowed; returns the target cell.
fn step(nav: &BinaryTraversabilityGrid, cell: Cell, di: i64, dj: i64) -> Option<Cell> {
    let spec = nav.spec();
    let next = spec.offset(cell, di, dj)?;
    if !nav.is_free(next) {
        return None;
    }
    if di != 0 && dj != 0 {
        let a = spec.offset(cell, di, 0).is_some_and(|c| nav.is_free(c));
        let b = spec.offset(cell, 0, dj).is_some_and(|c| nav.is_free(c));
        if !a && !b {
            return None;
        }
    }
    Some(next)
}

#[derive(PartialEq, Eq)]
struct Open {
    f: StepCost,
    g: StepCost,
    index: usize,
}

impl Ord for Open {
    // BinaryHeap is a max-heap: smallest f first, then larger g, then smaller index.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .cmp(&self.f)
            .then_with(|| self.g.cmp(&other.g))
            .then_with(|| other.index.cmp(&self.index))
    }
}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

const NONE: usize = usize::MAX;

fn unwind(spec: &GridSpec, parent: &[usize], goal: usize) -> Vec<Cell> {
    let mut cells = vec![spec.cell_at(goal)];
    let mut k = goal;
    while parent[k] != NONE {
        k = parent[k];
        cells.push(spec.cell_at(k));
    }
    cells.reverse();
    cells
}

/// A* with the octile heuristic. The start cell is always expanded; the goal
/// must be Free.
pub fn plan(nav: &BinaryTraversabilityGrid, start: Cell, goal: Cell) -> Result<Path> {
    let spec = nav.spec();
    if !spec.contains(start) {
        return Err(Error::CellOutOfBounds(start));
    }
    if !spec.contains(goal) || !nav.is_free(goal) && goal != start {
        return Err(Error::NoPath { start, goal });
    }
    let n = spec.len();
    let mut g: Vec<Option<StepCost>> = vec![None; n];
    let mut parent = vec![NONE; n];
    let mut closed = vec![false; n];
    let mut open = BinaryHeap::new();
    let s = spec.index(start);
    let t = spec.index(goal);
    g[s] = Some(StepCost::default());
    open.push(Open {
        f: StepCost::octile(start, goal),
        g: StepCost::default(),
        index: s,
    });
    while let Some(Open { g: gk, index: k, .. }) = open.pop() {
        if closed[k] {
            continue;
        }
        closed[k] = true;
        if k == t {
            return Ok(Path::from_cells(unwind(spec, &parent, t), spec.resolution));
        }
        let cell = spec.cell_at(k);
        for &(di, dj) in &NEIGHBORS_8 {
            let Some(next) = step(nav, cell, di, dj) else { continue };
            let m = spec.index(next);
            if closed[m] {
                continue;
            }
            let cand = gk.add(di, dj);
            if g[m].is_none_or(|old| cand < old) {
                g[m] = Some(cand);
                parent[m] = k;
                open.push(Open {
                    f: cand.plus(StepCost::octile(next, goal)),
                    g: cand,
                    index: m,
                });
            }
        }
    }
    Err(Error::NoPath { start, goal })
}

/// Single-source shortest paths from one start to every reachable cell.
#[derive(Clone, Debug)]
pub struct ShortestPathTree {
    spec: GridSpec,
    start: Cell,
    cost: Vec<Option<StepCost>>,
    parent: Vec<usize>,
}

impl ShortestPathTree {
    pub fn build(nav: &BinaryTraversabilityGrid, start: Cell) -> Result<Self> {
        let spec = *nav.spec();
        if !spec.contains(start) {
            return Err(Error::CellOutOfBounds(start));
        }
        let n = spec.len();
        let mut cost: Vec<Option<StepCost>> = vec![None; n];
        let mut parent = vec![NONE; n];
        let mut closed = vec![false; n];
        let mut open = BinaryHeap::new();
        let s = spec.index(start);
        cost[s] = Some(StepCost::default());
        open.push(Open {
            f: StepCost::default(),
            g: StepCost::default(),
            index: s,
        });
        while let Some(Open { g: gk, index: k, .. }) = open.pop() {
            if closed[k] {
                continue;
            }
            closed[k] = true;
            let cell = spec.cell_at(k);
            for &(di, dj) in &NEIGHBORS_8 {
                let Some(next) = step(nav, cell, di, dj) else { continue };
                let m = spec.index(next);
                if closed[m] {
                    continue;
                }
                let cand = gk.add(di, dj);
                if cost[m].is_none_or(|old| cand < old) {
                    cost[m] = Some(cand);
                    parent[m] = k;
                    open.push(Open {
                        f: cand,
                        g: cand,
                        index: m,
                    });
                }
            }
        }
        Ok(Self {
            spec,
            start,
            cost,
            parent,
        })
    }

    pub fn cost_to(&self, goal: Cell) -> Option<StepCost> {
        self.spec.contains(goal).then(|| self.cost[self.spec.index(goal)]).flatten()
    }

    pub fn path_to(&self, goal: Cell) -> Result<Path> {
        if self.cost_to(goal).is_none() {
            return Err(Error::NoPath {
                start: self.start,
                goal,
            });
        }
        let cells = unwind(&self.spec, &self.parent, self.spec.index(goal));
        Ok(Path::from_cells(cells, self.spec.resolution))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Waypoint {
    pub x: f64,
    pub y: f64,
    /// Radians, direction toward the next sample.
    pub heading: f64,
}

/// Samples the polyline through the path's cell centers at arc-length
/// multiples of `spacing_m`, plus the start and the final cell.
pub fn sample_waypoints(spec: &GridSpec, path: &Path, spacing_m: f64) -> Vec<Waypoint> {
    assert!(spacing_m > 0.0, "waypoint spacing must be positive");
    let pts: Vec<(f64, f64)> = path.cells.iter().map(|&c| spec.center(c)).collect();
    let mut seg_start = Vec::with_capacity(pts.len());
    let mut total = 0.0;
    for w in pts.windows(2) {
        seg_start.push(total);
        total += (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1);
    }
    let at = |s: f64| -> (f64, f64) {
        if pts.len() == 1 {
            return pts[0];
        }
        let k = seg_start.partition_point(|&a| a <= s).saturating_sub(1).min(pts.len() - 2);
        let (a, b) = (pts[k], pts[k + 1]);
        let len = (b.0 - a.0).hypot(b.1 - a.1);
        let u = ((s - seg_start[k]) / len).clamp(0.0, 1.0);
        (a.0 + u * (b.0 - a.0), a.1 + u * (b.1 - a.1))
    };

    let mut stations = vec![0.0];
    let mut k = 1;
    // stations closer than a hair to the end collapse onto it
    while (k as f64) * spacing_m < total - 1e-9 {
        stations.push(k as f64 * spacing_m);
        k += 1;
    }
    if total > 0.0 {
        stations.push(total);
    }
    let positions: Vec<(f64, f64)> = stations.iter().map(|&s| at(s)).collect();
    let mut out: Vec<Waypoint> = Vec::with_capacity(positions.len());
    for (n, &(x, y)) in positions.iter().enumerate() {
        let heading = if n + 1 < positions.len() {
            let (nx, ny) = positions[n + 1];
            (ny - y).atan2(nx - x)
        } else if n > 0 {
            out[n - 1].heading
        } else {
            0.0
        };
        out.push(Waypoint { x, y, heading });
    }
    out
}
