//! Synthetic worlds, sensing, motion and a surrogate localization covariance.
//!
//! Terrain is analytic (planar ramps plus Gaussian bumps) with box obstacles on
//! top. Obstacles taller than the sensors block LiDAR and camera rays; lower
//! ones are seen over but still form steps in the terrain.

use std::path::Path;

use nalgebra::{Matrix3, Matrix6, SymmetricEigen, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fisher::{landmark_fim, visible, BearingNoise, CameraModel, CameraPose, Landmark, DEFAULT_LANDMARK_SIGMA};
use crate::frontier::{Blacklist, ExplorationBoundary};
use crate::grid::{Cell, Grid, GridSpec, OccupancyGrid, Traversability, TraversabilityGrid, UNKNOWN_P};
use crate::infogain::GridRay;
use crate::planner::Path as GridPath;
use crate::traversability::{TerrainStats, TraversabilityParams};

const HIT_LOGODDS: f64 = 1.386;
const P_MIN: f64 = 0.02;
const P_MAX: f64 = 0.98;
/// Landmarks sit this far outside obstacle faces.
const FACE_OFFSET: f64 = 0.06;
const MAX_FACE_POINT_HEIGHT: f64 = 1.0;

fn d_one() -> f64 {
    1.0
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RampSpec {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
    /// Height gained across the rectangle along `axis`.
    pub rise: f64,
    /// `"x"` or `"y"`; negative rises descend.
    #[serde(default = "default_axis")]
    pub axis: String,
}

fn default_axis() -> String {
    "x".into()
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BumpSpec {
    pub x: f64,
    pub y: f64,
    pub height: f64,
    pub sigma: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RandomBumps {
    pub count: usize,
    pub height: [f64; 2],
    pub sigma: [f64; 2],
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TerrainConfig {
    #[serde(default)]
    pub ramps: Vec<RampSpec>,
    #[serde(default)]
    pub bumps: Vec<BumpSpec>,
    #[serde(default)]
    pub random_bumps: Option<RandomBumps>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BoxObstacle {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
    pub height: f64,
}

impl BoxObstacle {
    fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }

    fn gap_to(&self, o: &BoxObstacle) -> f64 {
        let dx = (o.x0 - self.x1).max(self.x0 - o.x1).max(0.0);
        let dy = (o.y0 - self.y1).max(self.y0 - o.y1).max(0.0);
        dx.hypot(dy)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RandomObstacles {
    pub count: usize,
    /// Side length range, meters.
    pub size: [f64; 2],
    pub height: [f64; 2],
    /// Minimum free gap between obstacles.
    #[serde(default = "d_one")]
    pub gap: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct LandmarkConfig {
    #[serde(default)]
    pub count: Option<usize>,
    #[serde(default)]
    pub explicit: Option<Vec<[f64; 3]>>,
    /// Detection standard deviation, meters.
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    /// Share of generated landmarks placed on obstacle faces; the rest go on
    /// terrain bumps.
    #[serde(default = "default_obstacle_share")]
    pub obstacle_share: f64,
}

fn default_sigma() -> f64 {
    DEFAULT_LANDMARK_SIGMA
}

fn default_obstacle_share() -> f64 {
    0.8
}

impl Default for LandmarkConfig {
    fn default() -> Self {
        Self {
            count: Some(0),
            explicit: None,
            sigma: default_sigma(),
            obstacle_share: default_obstacle_share(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SensorConfig {
    pub fov_deg: f64,
    pub max_depth_m: f64,
    pub lidar_radius_m: f64,
    pub camera_height_m: f64,
    /// Travel between sensing steps.
    pub sense_interval_m: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            fov_deg: 87.0,
            max_depth_m: 5.0,
            lidar_radius_m: 8.0,
            camera_height_m: 0.3,
            sense_interval_m: 0.5,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RobotConfig {
    pub start_xy_theta: [f64; 3],
    #[serde(default = "default_speed")]
    pub speed: f64,
    /// Rad/s.
    #[serde(default = "default_turn_rate")]
    pub turn_rate: f64,
}

fn default_speed() -> f64 {
    0.4
}

fn default_turn_rate() -> f64 {
    0.5
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateConfig {
    /// Process noise per meter traveled.
    pub q: f64,
    pub kappa: f64,
    #[serde(rename = "T_lc")]
    pub t_lc: f64,
    #[serde(rename = "L")]
    pub l: usize,
    /// Initial standard deviation of the translational pose components.
    pub initial_sigma: f64,
    /// A landmark out of view at least this long (seconds) counts as
    /// re-acquired when seen again.
    pub revisit_gap: f64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            q: 1e-3,
            kappa: 0.5,
            t_lc: 60.0,
            l: 5,
            initial_sigma: 0.01,
            revisit_gap: 10.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    #[serde(default)]
    pub name: String,
    pub seed: u64,
    pub size_m: f64,
    pub resolution: f64,
    #[serde(default)]
    pub terrain: TerrainConfig,
    #[serde(default)]
    pub obstacles: Vec<BoxObstacle>,
    #[serde(default)]
    pub random_obstacles: Option<RandomObstacles>,
    /// Radius around the start kept free of random features.
    #[serde(default = "default_clearance")]
    pub start_clearance_m: f64,
    #[serde(default)]
    pub landmarks: LandmarkConfig,
    #[serde(default)]
    pub sensors: SensorConfig,
    pub robot: RobotConfig,
    #[serde(default)]
    pub surrogate: SurrogateConfig,
}

fn default_clearance() -> f64 {
    3.0
}

impl WorldConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: WorldConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.size_m > 0.0 && self.size_m.is_finite()) {
            return bad(format!("size_m must be positive, got {}", self.size_m));
        }
        if !(self.resolution > 0.0 && self.resolution < self.size_m) {
            return bad(format!("resolution must lie in (0, size_m), got {}", self.resolution));
        }
        let [x, y, _] = self.robot.start_xy_theta;
        if !(x > 0.0 && y > 0.0 && x < self.size_m && y < self.size_m) {
            return bad("robot start lies outside the world".into());
        }
        if self.robot.speed <= 0.0 || self.robot.turn_rate <= 0.0 {
            return bad("robot speed and turn rate must be positive".into());
        }
        let s = &self.sensors;
        if !(s.fov_deg > 0.0 && s.fov_deg <= 360.0) || s.max_depth_m <= 0.0 || s.lidar_radius_m <= 0.0 {
            return bad("sensor ranges must be positive and fov in (0, 360]".into());
        }
        if s.sense_interval_m <= 0.0 || s.camera_height_m <= 0.0 {
            return bad("sense interval and camera height must be positive".into());
        }
        let g = &self.surrogate;
        if !(g.q >= 0.0 && g.kappa > 0.0 && g.kappa <= 1.0 && g.t_lc >= 0.0 && g.l >= 1 && g.initial_sigma > 0.0 && g.revisit_gap >= 0.0) {
            return bad("surrogate needs q >= 0, kappa in (0, 1], T_lc >= 0, L >= 1, initial_sigma > 0".into());
        }
        match (&self.landmarks.count, &self.landmarks.explicit) {
            (Some(_), Some(_)) => return bad("landmarks: give either count or explicit, not both".into()),
            (None, None) => return bad("landmarks: count or explicit list required".into()),
            _ => {}
        }
        if !(0.0..=1.0).contains(&self.landmarks.obstacle_share) || self.landmarks.sigma <= 0.0 {
            return bad("landmarks: obstacle_share in [0, 1] and sigma > 0 required".into());
        }
        for r in &self.terrain.ramps {
            if r.x1 <= r.x0 || r.y1 <= r.y0 || !(r.axis == "x" || r.axis == "y") {
                return bad("ramp needs x1 > x0, y1 > y0 and axis x or y".into());
            }
        }
        for b in &self.terrain.bumps {
            if b.sigma <= 0.0 {
                return bad("bump sigma must be positive".into());
            }
        }
        for o in &self.obstacles {
            if o.x1 <= o.x0 || o.y1 <= o.y0 || o.height <= 0.0 {
                return bad("obstacle boxes need positive extent and height".into());
            }
        }
        if let Some(r) = &self.terrain.random_bumps {
            if r.height[0] > r.height[1] || r.sigma[0] > r.sigma[1] || r.sigma[0] <= 0.0 {
                return bad("random_bumps ranges must be ordered, sigma > 0".into());
            }
        }
        if let Some(r) = &self.random_obstacles {
            if r.size[0] > r.size[1] || r.height[0] > r.height[1] || r.size[0] <= 0.0 || r.height[0] <= 0.0 {
                return bad("random_obstacles ranges must be ordered and positive".into());
            }
        }
        Ok(())
    }

    pub fn camera(&self) -> CameraModel {
        CameraModel {
            fov: self.sensors.fov_deg.to_radians(),
            max_depth: self.sensors.max_depth_m,
            height: self.sensors.camera_height_m,
        }
    }
}

#[derive(Clone, Debug)]
pub struct World {
    pub config: WorldConfig,
    pub rng_seed: u64,
    pub spec: GridSpec,
    pub ramps: Vec<RampSpec>,
    pub bumps: Vec<BumpSpec>,
    pub obstacles: Vec<BoxObstacle>,
    /// Tallest obstacle covering each cell center, 0 where none.
    pub obstacle_height: Grid<f64>,
    pub landmarks: Vec<Landmark>,
    pub boundary: ExplorationBoundary,
}

impl World {
    /// Terrain height without obstacles.
    pub fn ground(&self, x: f64, y: f64) -> f64 {
        let mut z = 0.0;
        for r in &self.ramps {
            if x >= r.x0 && x <= r.x1 && y >= r.y0 && y <= r.y1 {
                z += if r.axis == "x" {
                    r.rise * (x - r.x0) / (r.x1 - r.x0)
                } else {
                    r.rise * (y - r.y0) / (r.y1 - r.y0)
                };
            }
        }
        for b in &self.bumps {
            let d2 = (x - b.x).powi(2) + (y - b.y).powi(2);
            z += b.height * (-d2 / (2.0 * b.sigma * b.sigma)).exp();
        }
        z
    }

    pub fn blocks_rays(&self, cell: Cell) -> bool {
        self.obstacle_height[cell] > self.config.sensors.camera_height_m
    }

    pub fn is_obstacle(&self, cell: Cell) -> bool {
        self.obstacle_height[cell] > 0.0
    }

    pub fn start(&self) -> (f64, f64, f64) {
        let [x, y, t] = self.config.robot.start_xy_theta;
        (x, y, t)
    }

    /// Terrain points a LiDAR return would produce in one cell: a 3x3
    /// lattice on the ground or obstacle top, or spread up a vertical face
    /// for obstacles that block the beam.
    pub fn cell_points(&self, cell: Cell) -> Vec<Vector3<f64>> {
        let res = self.spec.resolution;
        let x0 = self.spec.origin_x + cell.i as f64 * res;
        let y0 = self.spec.origin_y + cell.j as f64 * res;
        let h = self.obstacle_height[cell];
        let face = self.blocks_rays(cell);
        (0..9)
            .map(|k| {
                let x = x0 + (0.5 + (k % 3) as f64) / 3.0 * res;
                let y = y0 + (0.5 + (k / 3) as f64) / 3.0 * res;
                let g = self.ground(x, y);
                let z = if face {
                    g + h.min(MAX_FACE_POINT_HEIGHT) * k as f64 / 8.0
                } else {
                    g + h
                };
                Vector3::new(x, y, z)
            })
            .collect()
    }

    /// Traversability after every cell has been sensed.
    pub fn full_traversability(&self, params: &TraversabilityParams) -> TraversabilityGrid {
        let mut stats = TerrainStats::new(self.spec);
        for c in self.spec.cells() {
            for p in self.cell_points(c) {
                stats.add_point(p.x, p.y, p.z);
            }
        }
        stats.score_cells(params)
    }

    /// Ground-truth occupancy: 1 on obstacles, 0 elsewhere.
    pub fn true_occupancy(&self) -> OccupancyGrid {
        self.obstacle_height.map(|&h| if h > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn elevation(&self) -> Grid<f64> {
        let cells = self
            .spec
            .cells()
            .map(|c| {
                let (x, y) = self.spec.center(c);
                self.ground(x, y) + self.obstacle_height[c]
            })
            .collect();
        Grid::from_vec(self.spec, cells).expect("spec-sized")
    }
}

fn uniform(rng: &mut ChaCha8Rng, range: [f64; 2]) -> f64 {
    if range[1] > range[0] {
        rng.random_range(range[0]..range[1])
    } else {
        range[0]
    }
}

fn obstacle_grid(spec: &GridSpec, obstacles: &[BoxObstacle]) -> Grid<f64> {
    let mut g = Grid::filled(*spec, 0.0);
    for o in obstacles {
        for c in spec.cells() {
            let (x, y) = spec.center(c);
            if o.contains(x, y) && o.height > g[c] {
                g[c] = o.height;
            }
        }
    }
    g
}

pub fn generate_world(config: &WorldConfig) -> Result<World> {
    config.validate()?;
    let size = config.size_m;
    let n = (size / config.resolution).round() as usize;
    let spec = GridSpec::new(0.0, 0.0, config.resolution, n, n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (sx, sy, _) = {
        let [x, y, t] = config.robot.start_xy_theta;
        (x, y, t)
    };
    let clear = config.start_clearance_m;

    let mut bumps = config.terrain.bumps.clone();
    if let Some(rb) = &config.terrain.random_bumps {
        let mut placed = 0;
        let mut tries = 0;
        while placed < rb.count && tries < rb.count * 100 {
            tries += 1;
            let sigma = uniform(&mut rng, rb.sigma);
            let height = uniform(&mut rng, rb.height);
            let x = rng.random_range(0.0..size);
            let y = rng.random_range(0.0..size);
            if (x - sx).hypot(y - sy) < clear + 2.5 * sigma {
                continue;
            }
            bumps.push(BumpSpec { x, y, height, sigma });
            placed += 1;
        }
    }

    let mut obstacles = config.obstacles.clone();
    if let Some(ro) = &config.random_obstacles {
        let mut placed = 0;
        let mut tries = 0;
        while placed < ro.count && tries < ro.count * 200 {
            tries += 1;
            let w = uniform(&mut rng, ro.size);
            let h = uniform(&mut rng, ro.size);
            let height = uniform(&mut rng, ro.height);
            let x0 = rng.random_range(1.0..(size - 1.0 - w).max(1.0 + 1e-9));
            let y0 = rng.random_range(1.0..(size - 1.0 - h).max(1.0 + 1e-9));
            let o = BoxObstacle {
                x0,
                y0,
                x1: x0 + w,
                y1: y0 + h,
                height,
            };
            let cx = sx.clamp(o.x0, o.x1);
            let cy = sy.clamp(o.y0, o.y1);
            if (cx - sx).hypot(cy - sy) < clear {
                continue;
            }
            if obstacles.iter().any(|p| p.gap_to(&o) < ro.gap) {
                continue;
            }
            obstacles.push(o);
            placed += 1;
        }
    }
    let obstacle_height = obstacle_grid(&spec, &obstacles);
    let start_cell = spec.world_to_cell(sx, sy)?;
    if obstacle_height[start_cell] > 0.0 {
        return Err(Error::Config("robot start lies inside an obstacle".into()));
    }

    let mut world = World {
        config: config.clone(),
        rng_seed: config.seed,
        spec,
        ramps: config.terrain.ramps.clone(),
        bumps,
        obstacles,
        obstacle_height,
        landmarks: Vec::new(),
        boundary: ExplorationBoundary::new(0.0, 0.0, size, size),
    };
    world.landmarks = place_landmarks(&world, &mut rng)?;
    Ok(world)
}

fn place_landmarks(world: &World, rng: &mut ChaCha8Rng) -> Result<Vec<Landmark>> {
    let cfg = &world.config.landmarks;
    let sigma = cfg.sigma;
    let spec = &world.spec;
    let size = world.config.size_m;
    let free_at = |x: f64, y: f64| -> bool {
        spec.world_to_cell(x, y)
            .map(|c| !world.is_obstacle(c))
            .unwrap_or(false)
    };
    if let Some(list) = &cfg.explicit {
        let mut out = Vec::with_capacity(list.len());
        for &[x, y, z] in list {
            if !world.boundary.contains(x, y) || !free_at(x, y) {
                return Err(Error::Config(format!(
                    "landmark ({x}, {y}, {z}) lies outside the boundary or inside an obstacle"
                )));
            }
            out.push(Landmark::isotropic(Vector3::new(x, y, z), sigma));
        }
        return Ok(out);
    }
    let count = cfg.count.unwrap_or(0);
    let tall: Vec<&BoxObstacle> = world
        .obstacles
        .iter()
        .filter(|o| o.height > world.config.sensors.camera_height_m)
        .collect();
    let perimeter: f64 = tall.iter().map(|o| 2.0 * (o.x1 - o.x0 + o.y1 - o.y0)).sum();
    let mut out = Vec::with_capacity(count);
    let mut tries = 0;
    while out.len() < count && tries < count * 200 + 100 {
        tries += 1;
        let on_obstacle = !tall.is_empty() && rng.random_bool(cfg.obstacle_share);
        let p = if on_obstacle {
            let mut s = rng.random_range(0.0..perimeter);
            let mut chosen = tall[0];
            for o in &tall {
                let per = 2.0 * (o.x1 - o.x0 + o.y1 - o.y0);
                if s < per {
                    chosen = o;
                    break;
                }
                s -= per;
            }
            let o = chosen;
            let (w, h) = (o.x1 - o.x0, o.y1 - o.y0);
            let t = rng.random_range(0.0..2.0 * (w + h));
            let (x, y) = if t < w {
                (o.x0 + t, o.y0 - FACE_OFFSET)
            } else if t < 2.0 * w {
                (o.x0 + t - w, o.y1 + FACE_OFFSET)
            } else if t < 2.0 * w + h {
                (o.x0 - FACE_OFFSET, o.y0 + t - 2.0 * w)
            } else {
                (o.x1 + FACE_OFFSET, o.y0 + t - 2.0 * w - h)
            };
            let z = world.ground(x, y) + rng.random_range(0.15..o.height.clamp(0.16, 1.5));
            Vector3::new(x, y, z)
        } else if !world.bumps.is_empty() {
            let b = &world.bumps[rng.random_range(0..world.bumps.len())];
            let r = rng.random_range(0.0..1.5 * b.sigma);
            let a = rng.random_range(0.0..std::f64::consts::TAU);
            let (x, y) = (b.x + r * a.cos(), b.y + r * a.sin());
            Vector3::new(x, y, world.ground(x, y) + rng.random_range(0.05..0.3))
        } else {
            let (x, y) = (rng.random_range(0.0..size), rng.random_range(0.0..size));
            Vector3::new(x, y, world.ground(x, y) + rng.random_range(0.05..1.0))
        };
        if !world.boundary.contains(p.x, p.y) || !free_at(p.x, p.y) {
            continue;
        }
        out.push(Landmark::isotropic(p, sigma));
    }
    Ok(out)
}

/// 6-DoF pose covariance in the order `(x, y, z, roll, pitch, yaw)` alongside
/// the true planar pose.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseBelief {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub cov: Matrix6<f64>,
}

impl PoseBelief {
    pub fn trace(&self) -> f64 {
        self.cov.trace()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum UpdateKind {
    Motion,
    Measurement,
    LoopClosure,
}

/// One covariance update, kept when auditing is enabled.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CovUpdate {
    pub kind: UpdateKind,
    pub trace_before: f64,
    pub trace_after: f64,
    pub min_eigenvalue: f64,
    pub asymmetry: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricSample {
    pub t: f64,
    pub trace_cov: f64,
    pub pct_unexplored: f64,
    pub n_loop_closures: u32,
    pub distance: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct LandmarkTrack {
    first_seen: f64,
    last_seen: f64,
    /// Map covariance: detection noise plus the robot's position covariance
    /// when the landmark was first seen.
    covariance: Matrix3<f64>,
}

#[derive(Clone, Debug)]
pub struct MissionState {
    pub occ: OccupancyGrid,
    logodds: Vec<f64>,
    pub terrain: TerrainStats,
    pub trav: TraversabilityGrid,
    pub trav_params: TraversabilityParams,
    pub trav_threshold: f64,
    pub belief: PoseBelief,
    pub blacklist: Blacklist,
    pub clock: f64,
    pub distance_traveled: f64,
    pub log: Vec<MetricSample>,
    pub n_loop_closures: u32,
    pub noise: BearingNoise,
    tracks: Vec<Option<LandmarkTrack>>,
    pending_closure: Vec<(usize, f64)>,
    revealed: Vec<bool>,
    stamp: Vec<u32>,
    sense_id: u32,
    in_boundary: Vec<bool>,
    boundary_cells: usize,
    unknown_in_boundary: usize,
    since_sense: f64,
    pub audit: Option<Vec<CovUpdate>>,
}

/// Result of one sensing step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SenseReport {
    /// Indices into `World::landmarks`.
    pub observed: Vec<usize>,
    pub new_terrain_cells: usize,
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn wrap_angle(a: f64) -> f64 {
    let t = a.rem_euclid(std::f64::consts::TAU);
    if t > std::f64::consts::PI {
        t - std::f64::consts::TAU
    } else {
        t
    }
}

fn check_cov(cov: &Matrix6<f64>) -> (f64, f64) {
    let asym = (cov - cov.transpose()).abs().max();
    let min_eig = SymmetricEigen::new(*cov).eigenvalues.min();
    assert!(min_eig >= -1e-9, "covariance lost positive semidefiniteness: {min_eig}");
    (min_eig, asym)
}

fn motion_diag() -> Vector6<f64> {
    Vector6::new(1.0, 1.0, 0.1, 0.1, 0.1, 1.0)
}

impl MissionState {
    pub fn new(world: &World, trav_params: TraversabilityParams, trav_threshold: f64, noise: BearingNoise) -> Self {
        let spec = world.spec;
        let in_boundary = world.boundary.cell_mask(&spec);
        let boundary_cells = in_boundary.iter().filter(|&&b| b).count();
        let (x, y, theta) = world.start();
        let s0 = world.config.surrogate.initial_sigma;
        let cov = Matrix6::from_diagonal(&(motion_diag() * s0 * s0));
        Self {
            occ: OccupancyGrid::unknown(spec),
            logodds: vec![0.0; spec.len()],
            terrain: TerrainStats::new(spec),
            trav: Grid::filled(spec, Traversability::Unknown),
            trav_params,
            trav_threshold,
            belief: PoseBelief { x, y, theta, cov },
            blacklist: Blacklist::new(),
            clock: 0.0,
            distance_traveled: 0.0,
            log: Vec::new(),
            n_loop_closures: 0,
            noise,
            tracks: vec![None; world.landmarks.len()],
            pending_closure: Vec::new(),
            revealed: vec![false; spec.len()],
            stamp: vec![0; spec.len()],
            sense_id: 0,
            in_boundary,
            boundary_cells,
            unknown_in_boundary: boundary_cells,
            since_sense: 0.0,
            audit: None,
        }
    }

    pub fn with_audit(mut self) -> Self {
        self.audit = Some(Vec::new());
        self
    }

    pub fn robot_cell(&self) -> Result<Cell> {
        self.occ.spec().world_to_cell(self.belief.x, self.belief.y)
    }

    pub fn pct_unexplored(&self) -> f64 {
        if self.boundary_cells == 0 {
            return 0.0;
        }
        100.0 * self.unknown_in_boundary as f64 / self.boundary_cells as f64
    }

    /// Landmarks observed so far, in world order, with their map covariance.
    pub fn mapped_landmarks(&self, world: &World) -> Vec<Landmark> {
        self.tracks
            .iter()
            .zip(&world.landmarks)
            .filter_map(|(t, l)| t.map(|t| Landmark::new(l.position, t.covariance)))
            .collect()
    }

    pub fn is_traversable(&self, cell: Cell) -> bool {
        matches!(self.trav[cell], Traversability::Score(s) if s >= self.trav_threshold)
    }

    fn audit_push(&mut self, kind: UpdateKind, before: f64) {
        let (min_eigenvalue, asymmetry) = check_cov(&self.belief.cov);
        let after = self.belief.cov.trace();
        if let Some(a) = self.audit.as_mut() {
            a.push(CovUpdate {
                kind,
                trace_before: before,
                trace_after: after,
                min_eigenvalue,
                asymmetry,
            });
        }
    }

    pub fn motion_update(&mut self, q: f64, dd: f64) {
        let before = self.belief.cov.trace();
        let add = Matrix6::from_diagonal(&(motion_diag() * (q * dd)));
        self.belief.cov += add;
        self.belief.cov = (self.belief.cov + self.belief.cov.transpose()) * 0.5;
        self.audit_push(UpdateKind::Motion, before);
    }

    /// `cov <- (cov^-1 + info)^-1`, evaluated in Joseph form on a square-root
    /// factor of `info` so the result stays PSD and the trace cannot grow.
    pub fn measurement_update(&mut self, info: &Matrix6<f64>) {
        let before = self.belief.cov.trace();
        let sym = (info + info.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        let mut h = Matrix6::zeros();
        for k in 0..6 {
            let l = eig.eigenvalues[k].max(0.0).sqrt();
            h.set_row(k, &(eig.eigenvectors.column(k).transpose() * l));
        }
        let p = self.belief.cov;
        let s = Matrix6::identity() + h * p * h.transpose();
        let s_inv = s.cholesky().map(|c| c.inverse()).unwrap_or_else(Matrix6::identity);
        let k = p * h.transpose() * s_inv;
        let a = Matrix6::identity() - k * h;
        let mut next = a * p * a.transpose() + k * k.transpose();
        next = (next + next.transpose()) * 0.5;
        if next.trace() <= before {
            self.belief.cov = next;
        }
        self.audit_push(UpdateKind::Measurement, before);
    }

    fn set_logodds(&mut self, k: usize, l: f64, hit: bool) {
        let lo = logit(P_MIN);
        let hi = logit(P_MAX);
        let mut l = l.clamp(lo, hi);
        if l == 0.0 {
            // never return a cell to the exact Unknown value
            l = if hit { 1e-6 } else { -1e-6 };
        }
        let was_unknown = self.occ.as_slice()[k] == UNKNOWN_P;
        self.logodds[k] = l;
        self.occ.as_mut_slice()[k] = (1.0 / (1.0 + (-l).exp())).clamp(P_MIN, P_MAX);
        if was_unknown && self.in_boundary[k] {
            self.unknown_in_boundary -= 1;
        }
    }

    fn camera_pose(&self, world: &World) -> CameraPose {
        let b = &self.belief;
        let cam = world.config.camera();
        CameraPose::from_planar(b.x, b.y, b.theta, world.ground(b.x, b.y) + cam.height, cam.fov, cam.max_depth)
    }

    fn line_blocked(world: &World, x: f64, y: f64, tx: f64, ty: f64) -> bool {
        let d = (tx - x).hypot(ty - y);
        let reach = d - 1.5 * world.spec.resolution;
        if reach <= 0.0 {
            return false;
        }
        let theta = (ty - y).atan2(tx - x);
        GridRay::new(&world.spec, x, y, theta, reach).any(|(c, _)| world.blocks_rays(c))
    }

    /// LiDAR terrain sampling, camera occupancy update and landmark detection
    /// from the current true pose.
    pub fn sense(&mut self, world: &World) -> SenseReport {
        let spec = world.spec;
        let (x, y, theta) = (self.belief.x, self.belief.y, self.belief.theta);
        let sensors = &world.config.sensors;

        let mut changed = Vec::new();
        let n_lidar = ((std::f64::consts::TAU * sensors.lidar_radius_m / spec.resolution).ceil() as usize).max(8);
        for r in 0..n_lidar {
            let a = r as f64 * std::f64::consts::TAU / n_lidar as f64;
            for (c, _) in GridRay::new(&spec, x, y, a, sensors.lidar_radius_m) {
                let k = spec.index(c);
                if !self.revealed[k] {
                    self.revealed[k] = true;
                    for p in world.cell_points(c) {
                        self.terrain.add_point(p.x, p.y, p.z);
                    }
                    changed.push(c);
                }
                if world.blocks_rays(c) {
                    break;
                }
            }
        }
        let new_terrain_cells = changed.len();
        self.terrain.rescore(&mut self.trav, &changed, &self.trav_params);

        self.sense_id = self.sense_id.wrapping_add(1).max(1);
        let id = self.sense_id;
        let fov = sensors.fov_deg.to_radians();
        let n_cam = ((fov * sensors.max_depth_m / (0.5 * spec.resolution)).ceil() as usize).max(2);
        let mut hits = Vec::new();
        let mut misses = Vec::new();
        for r in 0..n_cam {
            let a = theta - fov / 2.0 + fov * r as f64 / (n_cam - 1) as f64;
            for (c, _) in GridRay::new(&spec, x, y, a, sensors.max_depth_m) {
                let k = spec.index(c);
                if self.stamp[k] != id {
                    self.stamp[k] = id;
                    if world.is_obstacle(c) {
                        hits.push(k);
                    } else {
                        misses.push(k);
                    }
                }
                if world.blocks_rays(c) {
                    break;
                }
            }
        }
        for &k in &misses {
            let l = self.logodds[k] - HIT_LOGODDS;
            self.set_logodds(k, l, false);
        }
        for &k in &hits {
            let l = self.logodds[k] + HIT_LOGODDS;
            self.set_logodds(k, l, true);
        }

        let pose = self.camera_pose(world);
        let center = pose.center();
        let r2 = sensors.max_depth_m * sensors.max_depth_m;
        let observed = world
            .landmarks
            .iter()
            .enumerate()
            .filter(|(_, l)| (l.position - center).norm_squared() <= r2)
            .filter(|(_, l)| visible(&pose, l))
            .filter(|(_, l)| !Self::line_blocked(world, x, y, l.position.x, l.position.y))
            .map(|(i, _)| i)
            .collect();
        SenseReport {
            observed,
            new_terrain_cells,
        }
    }

    /// Measurement update from the observed landmarks, then the loop-closure
    /// rule. Returns whether a loop closure fired.
    fn update_from_observations(&mut self, world: &World, observed: &[usize]) -> bool {
        let sur = &world.config.surrogate;
        let now = self.clock;
        let pose = self.camera_pose(world);
        let p_xyz = self.belief.cov.fixed_view::<3, 3>(0, 0).into_owned();
        let mut info = Matrix6::zeros();
        let mut fused = false;
        let mut reacquired = Vec::new();
        for &i in observed {
            let lm = &world.landmarks[i];
            match self.tracks[i].as_mut() {
                None => {
                    // initialized from the current pose: no information about it yet
                    self.tracks[i] = Some(LandmarkTrack {
                        first_seen: now,
                        last_seen: now,
                        covariance: lm.covariance + p_xyz,
                    });
                }
                Some(t) => {
                    if now - t.last_seen >= sur.revisit_gap {
                        let mapped = Landmark::new(lm.position, t.covariance);
                        if let Ok(f) = landmark_fim(&pose, &mapped, &self.noise) {
                            info += f;
                            fused = true;
                        }
                        if now - t.first_seen >= sur.t_lc {
                            reacquired.push(i);
                        }
                    }
                    t.last_seen = now;
                }
            }
        }
        if fused {
            self.measurement_update(&info);
        }

        self.pending_closure.retain(|&(_, t)| now - t <= sur.revisit_gap);
        for i in reacquired {
            if !self.pending_closure.iter().any(|&(k, _)| k == i) {
                self.pending_closure.push((i, now));
            }
        }
        if self.pending_closure.len() >= sur.l {
            let before = self.belief.cov.trace();
            self.belief.cov *= sur.kappa;
            self.audit_push(UpdateKind::LoopClosure, before);
            self.n_loop_closures += 1;
            self.pending_closure.clear();
            return true;
        }
        false
    }

    /// Sense, fuse landmark information, apply the loop-closure rule and log.
    pub fn sense_and_update(&mut self, world: &World) -> SenseReport {
        let report = self.sense(world);
        self.update_from_observations(world, &report.observed);
        self.record_metrics();
        self.since_sense = 0.0;
        report
    }

    pub fn record_metrics(&mut self) -> MetricSample {
        let s = MetricSample {
            t: self.clock,
            trace_cov: self.belief.cov.trace(),
            pct_unexplored: self.pct_unexplored(),
            n_loop_closures: self.n_loop_closures,
            distance: self.distance_traveled,
        };
        self.log.push(s);
        s
    }

    /// Drives `path` cell by cell, sensing every `sense_interval_m`, then turns
    /// to `theta_star` and senses once more.
    pub fn execute_path(&mut self, world: &World, path: &GridPath, theta_star: f64) -> Result<()> {
        let spec = world.spec;
        let here = self.robot_cell()?;
        if path.cells.first() != Some(&here) {
            return Err(Error::Config("path does not start at the robot cell".into()));
        }
        let robot = &world.config.robot;
        let q = world.config.surrogate.q;
        let interval = world.config.sensors.sense_interval_m;
        for w in path.cells.windows(2) {
            let next = w[1];
            if !self.is_traversable(next) {
                return Err(Error::PathBlocked(next));
            }
            let (nx, ny) = spec.center(next);
            let (dx, dy) = (nx - self.belief.x, ny - self.belief.y);
            let dd = dx.hypot(dy);
            self.belief.theta = dy.atan2(dx);
            self.belief.x = nx;
            self.belief.y = ny;
            self.distance_traveled += dd;
            self.clock += dd / robot.speed;
            self.motion_update(q, dd);
            self.since_sense += dd;
            if self.since_sense >= interval - 1e-9 {
                self.sense_and_update(world);
            }
        }
        let turn = wrap_angle(theta_star - self.belief.theta).abs();
        self.clock += turn / robot.turn_rate;
        self.belief.theta = theta_star;
        self.sense_and_update(world);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::StepCost;

    fn flat(size: f64, landmarks: &str, obstacles: &str) -> WorldConfig {
        WorldConfig::from_json(&format!(
            r#"{{"seed": 3, "size_m": {size}, "resolution": 0.1,
                "obstacles": {obstacles}, "landmarks": {landmarks},
                "robot": {{"start_xy_theta": [1.05, 1.05, 0.0]}}}}"#
        ))
        .unwrap()
    }

    fn state(world: &World) -> MissionState {
        MissionState::new(world, TraversabilityParams::default(), 0.4, BearingNoise::default()).with_audit()
    }

    fn straight_path(spec: &GridSpec, j: usize, from: usize, to: usize) -> GridPath {
        let cells: Vec<Cell> = if from <= to {
            (from..=to).map(|i| Cell::new(i, j)).collect()
        } else {
            (to..=from).rev().map(|i| Cell::new(i, j)).collect()
        };
        let n = cells.len() - 1;
        GridPath {
            cells,
            cost: StepCost {
                cardinal: n as u32,
                diagonal: 0,
            },
            length_m: n as f64 * spec.resolution,
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/worlds/ramp_yard.json")).unwrap();
        let cfg = WorldConfig::from_json(&text).unwrap();
        let a = generate_world(&cfg).unwrap();
        let b = generate_world(&cfg).unwrap();
        assert_eq!(a.obstacles, b.obstacles);
        assert_eq!(a.bumps, b.bumps);
        assert_eq!(a.landmarks, b.landmarks);
        assert!(!a.landmarks.is_empty());
        for l in &a.landmarks {
            assert!(a.boundary.contains(l.position.x, l.position.y));
            assert!(!a.is_obstacle(a.spec.world_to_cell(l.position.x, l.position.y).unwrap()));
        }
    }

    #[test]
    fn flat_world_scores_one_everywhere() {
        let w = generate_world(&flat(3.0, r#"{"count": 0}"#, "[]")).unwrap();
        let t = w.full_traversability(&TraversabilityParams::default());
        assert!(t.as_slice().iter().all(|v| *v == Traversability::Score(1.0)));
    }

    #[test]
    fn config_errors() {
        assert!(WorldConfig::from_json("{").is_err());
        assert!(WorldConfig::from_json(r#"{"seed": 1, "size_m": -1, "resolution": 0.1, "robot": {"start_xy_theta": [1,1,0]}}"#).is_err());
        let both = r#"{"seed": 1, "size_m": 5, "resolution": 0.1, "landmarks": {"count": 1, "explicit": []},
            "robot": {"start_xy_theta": [1,1,0]}}"#;
        assert!(WorldConfig::from_json(both).is_err());
    }

    #[test]
    fn wall_becomes_occupied_and_hides_cells() {
        let w = generate_world(&flat(6.0, r#"{"count": 0}"#, r#"[{"x0": 2.0, "y0": 0.0, "x1": 2.3, "y1": 6.0, "height": 1.0}]"#)).unwrap();
        let mut s = state(&w);
        let wall = w.spec.world_to_cell(2.05, 1.05).unwrap();
        let behind = w.spec.world_to_cell(3.0, 1.05).unwrap();
        for _ in 0..3 {
            s.sense(&w);
        }
        assert!(s.occ[wall] >= 0.9);
        assert_eq!(s.occ[behind], UNKNOWN_P);
        assert!((s.occ[Cell::new(15, 10)] - 0.02).abs() < 1e-12);
    }

    #[test]
    fn landmark_free_corridor_only_grows() {
        let w = generate_world(&flat(8.0, r#"{"count": 0}"#, "[]")).unwrap();
        let mut s = state(&w);
        s.sense_and_update(&w);
        let path = straight_path(&w.spec, 10, 10, 60);
        let before = s.belief.trace();
        s.execute_path(&w, &path, 0.0).unwrap();
        assert!(s.belief.trace() > before);
        let traces: Vec<f64> = s.log.iter().map(|m| m.trace_cov).collect();
        assert!(traces.windows(2).all(|p| p[1] >= p[0]));
        assert!((s.distance_traveled - 5.0).abs() < 1e-9);
    }

    #[test]
    fn reacquired_landmarks_lower_the_trace() {
        let pts: Vec<String> = (0..10)
            .map(|k| format!("[{}, {}, 0.6]", 3.0 + 0.45 * k as f64, if k % 2 == 0 { 2.0 } else { 0.2 }))
            .collect();
        let with = generate_world(&flat(8.0, &format!(r#"{{"explicit": [{}]}}"#, pts.join(",")), "[]")).unwrap();
        let without = generate_world(&flat(8.0, r#"{"count": 0}"#, "[]")).unwrap();
        let out = straight_path(&with.spec, 10, 10, 75);
        let back = straight_path(&with.spec, 10, 75, 10);
        let mut a = state(&with);
        let mut b = state(&without);
        a.sense_and_update(&with);
        b.sense_and_update(&without);
        a.execute_path(&with, &out, 0.0).unwrap();
        b.execute_path(&without, &out, 0.0).unwrap();
        // first sightings only build the map
        assert_eq!(a.belief.trace(), b.belief.trace());
        a.clock += 20.0;
        b.clock += 20.0;
        a.execute_path(&with, &back, std::f64::consts::PI).unwrap();
        b.execute_path(&without, &back, std::f64::consts::PI).unwrap();
        assert!(a.belief.trace() < b.belief.trace());
        assert!(a.audit.as_ref().unwrap().iter().any(|u| u.kind == UpdateKind::Measurement));
        for u in a.audit.as_ref().unwrap() {
            match u.kind {
                UpdateKind::Motion => assert!(u.trace_after >= u.trace_before),
                _ => assert!(u.trace_after <= u.trace_before + 1e-12),
            }
        }
    }

    #[test]
    fn revisit_after_t_lc_closes_the_loop() {
        let pts: Vec<String> = (0..6).map(|k| format!("[3.5, {}, 0.5]", 0.5 + 0.25 * k as f64)).collect();
        let mut cfg = flat(8.0, &format!(r#"{{"explicit": [{}]}}"#, pts.join(",")), "[]");
        cfg.surrogate.t_lc = 10.0;
        let w = generate_world(&cfg).unwrap();
        let mut s = state(&w);
        s.sense_and_update(&w);
        assert_eq!(s.n_loop_closures, 0);
        let out = straight_path(&w.spec, 10, 10, 1);
        s.execute_path(&w, &out, std::f64::consts::PI).unwrap();
        s.clock += 20.0;
        let before = s.belief.trace();
        s.belief.theta = 0.0;
        let report = s.sense(&w);
        assert!(report.observed.len() >= 5);
        let audit_len = s.audit.as_ref().unwrap().len();
        assert!(s.update_from_observations(&w, &report.observed));
        assert_eq!(s.n_loop_closures, 1);
        let audit = s.audit.as_ref().unwrap();
        let lc = audit[audit_len..].iter().find(|u| u.kind == UpdateKind::LoopClosure).unwrap();
        assert!((lc.trace_after - 0.5 * lc.trace_before).abs() < 1e-15);
        assert!(s.belief.trace() < before);
        // refractory: the same landmarks do not close again right away
        assert!(!s.update_from_observations(&w, &report.observed));
    }

    #[test]
    fn blocked_path_is_reported() {
        let w = generate_world(&flat(6.0, r#"{"count": 0}"#, r#"[{"x0": 2.0, "y0": 0.0, "x1": 2.3, "y1": 6.0, "height": 0.25}]"#)).unwrap();
        let mut s = state(&w);
        s.sense_and_update(&w);
        let path = straight_path(&w.spec, 10, 10, 40);
        match s.execute_path(&w, &path, 0.0) {
            Err(Error::PathBlocked(c)) => assert!(c.i >= 19 && c.i <= 23),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unexplored_share_never_increases() {
        let w = generate_world(&flat(6.0, r#"{"count": 0}"#, "[]")).unwrap();
        let mut s = state(&w);
        s.sense_and_update(&w);
        let first = s.pct_unexplored();
        assert!(first < 100.0 && first > 0.0);
        let path = straight_path(&w.spec, 10, 10, 50);
        s.execute_path(&w, &path, std::f64::consts::FRAC_PI_2).unwrap();
        assert!(s.log.windows(2).all(|p| p[1].pct_unexplored <= p[0].pct_unexplored));
        assert!(s.log.windows(2).all(|p| p[1].t >= p[0].t && p[1].distance >= p[0].distance));
    }
}
