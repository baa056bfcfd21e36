//! Frontier detection, size-capped clustering and the goal blacklist.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::grid::{BinaryTraversabilityGrid, Cell, GridSpec, OccupancyGrid, UNKNOWN_P};

pub const DEFAULT_MAX_CLUSTER_SIZE: usize = 30;

/// Axis-aligned rectangle in world meters, inclusive on all sides.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplorationBoundary {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl ExplorationBoundary {
    pub fn new(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Self {
        Self {
            min_x,
            min_y,
            max_x,
            max_y,
        }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.min_x && x <= self.max_x && y >= self.min_y && y <= self.max_y
    }

    /// Whether the center of `cell` lies inside.
    pub fn contains_cell(&self, spec: &GridSpec, cell: Cell) -> bool {
        let (x, y) = spec.center(cell);
        self.contains(x, y)
    }

    pub fn cell_mask(&self, spec: &GridSpec) -> Vec<bool> {
        spec.cells().map(|c| self.contains_cell(spec, c)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrontierCluster {
    /// Breadth-first visitation order.
    pub cells: Vec<Cell>,
    pub candidate: Cell,
}

/// Goals found unreachable. A cell within one cell (Chebyshev) of a listed
/// entry is suppressed as well.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Blacklist {
    failures: BTreeMap<Cell, u32>,
}

impl Blacklist {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, cell: Cell) {
        *self.failures.entry(cell).or_insert(0) += 1;
    }

    pub fn failures(&self, cell: Cell) -> u32 {
        self.failures.get(&cell).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.failures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn suppresses(&self, cell: Cell) -> bool {
        (cell.j.saturating_sub(1)..=cell.j + 1).any(|j| {
            (cell.i.saturating_sub(1)..=cell.i + 1).any(|i| self.failures.contains_key(&Cell::new(i, j)))
        })
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        self.failures.keys().copied()
    }
}

/// The frontier predicate for one cell.
pub fn is_frontier(
    occ: &OccupancyGrid,
    nav: &BinaryTraversabilityGrid,
    in_boundary: &[bool],
    cell: Cell,
) -> bool {
    let spec = occ.spec();
    let k = spec.index(cell);
    in_boundary[k]
        && nav.is_free(cell)
        && occ[cell] < UNKNOWN_P
        && spec
            .neighbors8(cell)
            .any(|nb| in_boundary[spec.index(nb)] && occ[nb] == UNKNOWN_P)
}

/// Known-free, navigable cells inside the boundary with an Unknown 8-neighbor
/// (also inside the boundary). Returned in row-major order.
pub fn detect_frontiers(
    occ: &OccupancyGrid,
    nav: &BinaryTraversabilityGrid,
    boundary: &ExplorationBoundary,
) -> Vec<Cell> {
    assert_eq!(occ.spec(), nav.spec(), "occupancy and navigation grids must share a spec");
    let spec = occ.spec();
    let mask = boundary.cell_mask(spec);
    spec.cells()
        .filter(|&c| is_frontier(occ, nav, &mask, c))
        .collect()
}

/// Groups frontier cells into 8-connected components, splitting components
/// larger than `max_cluster_size` into consecutive BFS chunks. Clusters whose
/// candidate is blacklisted are dropped.
pub fn cluster_frontiers(
    spec: &GridSpec,
    cells: &[Cell],
    max_cluster_size: usize,
    blacklist: &Blacklist,
) -> Vec<FrontierCluster> {
    assert!(max_cluster_size >= 1);
    let mut member = vec![false; spec.len()];
    let mut seeds: Vec<usize> = Vec::with_capacity(cells.len());
    for &c in cells {
        let k = spec.index(c);
        if !member[k] {
            member[k] = true;
            seeds.push(k);
        }
    }
    seeds.sort_unstable();

    let mut visited = vec![false; spec.len()];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for seed in seeds {
        if visited[seed] {
            continue;
        }
        visited[seed] = true;
        queue.push_back(spec.cell_at(seed));
        let mut component = Vec::new();
        while let Some(c) = queue.pop_front() {
            component.push(c);
            for nb in spec.neighbors8(c) {
                let k = spec.index(nb);
                if member[k] && !visited[k] {
                    visited[k] = true;
                    queue.push_back(nb);
                }
            }
        }
        for chunk in component.chunks(max_cluster_size) {
            let candidate = chunk[(chunk.len() - 1) / 2];
            if !blacklist.suppresses(candidate) {
                out.push(FrontierCluster {
                    cells: chunk.to_vec(),
                    candidate,
                });
            }
        }
    }
    out
}

pub fn mission_complete(clusters: &[FrontierCluster]) -> bool {
    clusters.is_empty()
}
