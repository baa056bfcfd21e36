//! Expected entropy reduction at a candidate goal.
//!
//! Rays are cast from the goal on a fixed angular lattice. Along a ray, the
//! n-th Unknown cell is assumed observable with probability `gamma^n`, which
//! fixes its posterior occupancy and therefore its entropy drop. The arrival
//! orientation is the lattice direction whose field-of-view window collects
//! the most gain.

use std::f64::consts::{PI, TAU};

use crate::grid::{Cell, GridSpec, OccupancyGrid, UNKNOWN_P};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayCastParams {
    /// Angular spacing of the ray lattice, radians.
    pub delta_theta: f64,
    /// Camera field of view, radians.
    pub fov: f64,
    pub max_range: f64,
    /// Observability degradation per traversed Unknown cell, in (0, 1].
    pub gamma: f64,
    /// Cells above this probability stop a ray.
    pub occupied_threshold: f64,
}

impl Default for RayCastParams {
    fn default() -> Self {
        Self {
            delta_theta: 8.5f64.to_radians(),
            fov: 87f64.to_radians(),
            max_range: 5.0,
            gamma: 0.9,
            occupied_threshold: 0.65,
        }
    }
}

impl RayCastParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.fov > 0.0 && self.fov <= TAU) {
            return Err(format!("fov must lie in (0, 2pi], got {}", self.fov));
        }
        if !(self.delta_theta > 0.0 && self.delta_theta <= self.fov) {
            return Err(format!("delta_theta must lie in (0, fov], got {}", self.delta_theta));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        if !(self.max_range > 0.0) {
            return Err(format!("max_range must be positive, got {}", self.max_range));
        }
        Ok(())
    }

    /// Directions `0, dtheta, 2 dtheta, ...` strictly below 2pi.
    pub fn directions(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut k = 0usize;
        loop {
            let t = k as f64 * self.delta_theta;
            if t >= TAU - 1e-12 {
                break;
            }
            out.push(t);
            k += 1;
        }
        out
    }
}

/// Binary Shannon entropy in bits, with `0 log 0 = 0`.
pub fn cell_entropy(p: f64) -> f64 {
    let term = |q: f64| if q <= 0.0 { 0.0 } else { -q * q.log2() };
    term(p) + term(1.0 - p)
}

/// Grid cells crossed by a ray, in order, each exactly once, together with
/// the distance at which the ray enters them.
pub struct GridRay<'a> {
    spec: &'a GridSpec,
    cell: Option<(i64, i64)>,
    step: (i64, i64),
    t_max: (f64, f64),
    t_delta: (f64, f64),
    t_entry: f64,
    max_range: f64,
}

impl<'a> GridRay<'a> {
    pub fn new(spec: &'a GridSpec, x: f64, y: f64, theta: f64, max_range: f64) -> Self {
        let (dx, dy) = (theta.cos(), theta.sin());
        let res = spec.resolution;
        let fx = (x - spec.origin_x) / res;
        let fy = (y - spec.origin_y) / res;
        let (ci, cj) = (fx.floor() as i64, fy.floor() as i64);
        let axis = |f: f64, c: i64, d: f64| -> (i64, f64, f64) {
            if d > 0.0 {
                (1, ((c + 1) as f64 - f) * res / d, res / d)
            } else if d < 0.0 {
                (-1, (f - c as f64) * res / -d, res / -d)
            } else {
                (0, f64::INFINITY, f64::INFINITY)
            }
        };
        let (si, tmx, tdx) = axis(fx, ci, dx);
        let (sj, tmy, tdy) = axis(fy, cj, dy);
        let inside = ci >= 0 && cj >= 0 && (ci as usize) < spec.width && (cj as usize) < spec.height;
        Self {
            spec,
            cell: inside.then_some((ci, cj)),
            step: (si, sj),
            t_max: (tmx, tmy),
            t_delta: (tdx, tdy),
            t_entry: 0.0,
            max_range,
        }
    }
}

impl Iterator for GridRay<'_> {
    type Item = (Cell, f64);

    fn next(&mut self) -> Option<Self::Item> {
        let (i, j) = self.cell?;
        if self.t_entry > self.max_range {
            self.cell = None;
            return None;
        }
        let out = (Cell::new(i as usize, j as usize), self.t_entry);
        let next = if self.t_max.0 < self.t_max.1 {
            self.t_entry = self.t_max.0;
            self.t_max.0 += self.t_delta.0;
            (i + self.step.0, j)
        } else {
            self.t_entry = self.t_max.1;
            self.t_max.1 += self.t_delta.1;
            (i, j + self.step.1)
        };
        let inside = next.0 >= 0
            && next.1 >= 0
            && (next.0 as usize) < self.spec.width
            && (next.1 as usize) < self.spec.height;
        self.cell = inside.then_some(next);
        Some(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayCell {
    pub cell: Cell,
    pub observability: f64,
    pub posterior: f64,
    /// Entropy drop in bits; zero for cells that were already known.
    pub gain: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RayResult {
    pub cells: Vec<RayCell>,
    pub gain: f64,
}

fn walk_ray(
    occ: &OccupancyGrid,
    x: f64,
    y: f64,
    theta: f64,
    params: &RayCastParams,
    mut visit: impl FnMut(RayCell),
) {
    let mut unknown_seen = 0i32;
    for (cell, _) in GridRay::new(occ.spec(), x, y, theta, params.max_range) {
        let p = occ[cell];
        if p > params.occupied_threshold {
            visit(RayCell {
                cell,
                observability: 1.0,
                posterior: p,
                gain: 0.0,
            });
            return;
        }
        let observability = params.gamma.powi(unknown_seen);
        if p == UNKNOWN_P {
            let posterior = (1.0 + observability) / 2.0;
            visit(RayCell {
                cell,
                observability,
                posterior,
                gain: (1.0 - cell_entropy(posterior)).max(0.0),
            });
            unknown_seen += 1;
        } else {
            visit(RayCell {
                cell,
                observability,
                posterior: p,
                gain: 0.0,
            });
        }
    }
}

/// Casts one ray from world point `(x, y)` and reports every crossed cell.
pub fn cast_ray(occ: &OccupancyGrid, x: f64, y: f64, theta: f64, params: &RayCastParams) -> RayResult {
    let mut cells = Vec::new();
    walk_ray(occ, x, y, theta, params, |c| cells.push(c));
    let gain = cells.iter().map(|c| c.gain).sum();
    RayResult { cells, gain }
}

/// Total gain along one ray, without collecting cells.
pub fn ray_gain(occ: &OccupancyGrid, x: f64, y: f64, theta: f64, params: &RayCastParams) -> f64 {
    let mut g = 0.0;
    walk_ray(occ, x, y, theta, params, |c| g += c.gain);
    g
}

/// Absolute angular difference wrapped into `[0, pi]`.
pub fn angular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    if d > PI {
        TAU - d
    } else {
        d
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OrientationScan {
    pub directions: Vec<f64>,
    /// Gain of the single ray cast in each direction.
    pub ray_gains: Vec<f64>,
    /// Sum of ray gains inside the field-of-view window centred on each direction.
    pub windowed: Vec<f64>,
    pub best_theta: f64,
    pub best_gain: f64,
}

pub(crate) const WINDOW_EPS: f64 = 1e-9;
/// Windowed gains closer than this (bits) count as tied.
pub const TIE_EPS: f64 = 1e-9;

/// Finds the arrival orientation with the largest windowed gain; ties, up to
/// `TIE_EPS`, go to the smallest angle.
pub fn scan_orientations(occ: &OccupancyGrid, x: f64, y: f64, params: &RayCastParams) -> OrientationScan {
    let directions = params.directions();
    let ray_gains: Vec<f64> = directions
        .iter()
        .map(|&t| ray_gain(occ, x, y, t, params))
        .collect();
    let half = params.fov / 2.0 + WINDOW_EPS;
    let windowed: Vec<f64> = directions
        .iter()
        .map(|&center| {
            directions
                .iter()
                .zip(&ray_gains)
                .filter(|(t, _)| angular_distance(**t, center) <= half)
                .map(|(_, g)| g)
                .sum()
        })
        .collect();
    let mut best = 0;
    for (k, w) in windowed.iter().enumerate() {
        if *w > windowed[best] + TIE_EPS {
            best = k;
        }
    }
    OrientationScan {
        best_theta: directions[best],
        best_gain: windowed[best],
        directions,
        ray_gains,
        windowed,
    }
}
