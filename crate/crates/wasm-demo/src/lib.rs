use std::fmt::Write as _;

use wasm_bindgen::prelude::*;

use fitslam::grid::{Cell, Nav};
use fitslam::harness::{run_mission, world_for_seed, MissionParams, Strategy};
use fitslam::infogain::{scan_orientations, RayCastParams};
use fitslam::planner::plan;
use fitslam::simworld::{generate_world, MissionState, World, WorldConfig};
use fitslam::traversability::threshold;

const OFFICE: &str = include_str!("../../core/worlds/flat_office.json");

/// One generated office world and the map after the robot's first look around.
#[wasm_bindgen]
pub struct Explorer {
    world: World,
    state: MissionState,
    params: MissionParams,
}

#[wasm_bindgen]
impl Explorer {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32) -> Explorer {
        let base = WorldConfig::from_json(OFFICE).expect("bundled world parses");
        let world = generate_world(&world_for_seed(&base, seed as u64)).expect("bundled world generates");
        let params = MissionParams::default();
        let mut state = MissionState::new(&world, params.trav, params.trav_threshold, params.noise);
        state.sense_and_update(&world);
        Explorer { world, state, params }
    }

    pub fn width(&self) -> usize {
        self.world.spec.width
    }

    pub fn height(&self) -> usize {
        self.world.spec.height
    }

    pub fn resolution(&self) -> f64 {
        self.world.spec.resolution
    }

    /// Robot start as `[x, y, heading]`.
    pub fn start(&self) -> Vec<f64> {
        let (x, y, t) = self.world.start();
        vec![x, y, t]
    }

    /// Occupancy probabilities, row-major from the bottom row.
    pub fn occupancy(&self) -> Vec<f32> {
        self.state.occ.as_slice().iter().map(|&p| p as f32).collect()
    }

    /// 0 unknown, 1 free, 2 blocked.
    pub fn navigable(&self) -> Vec<u8> {
        let nav = threshold(&self.state.trav, self.params.trav_threshold);
        nav.as_slice()
            .iter()
            .map(|n| match n {
                Nav::Unknown => 0,
                Nav::Free => 1,
                Nav::Blocked => 2,
            })
            .collect()
    }

    /// `[best_theta, best_gain, direction_0, window_0, direction_1, window_1, ...]`.
    pub fn scan(&self, x: f64, y: f64) -> Vec<f64> {
        let cam = self.world.config.camera();
        let p = RayCastParams {
            fov: cam.fov,
            max_range: cam.max_depth,
            ..self.params.raycast
        };
        let s = scan_orientations(&self.state.occ, x, y, &p);
        let mut out = vec![s.best_theta, s.best_gain];
        for (d, w) in s.directions.iter().zip(&s.windowed) {
            out.push(*d);
            out.push(*w);
        }
        out
    }

    /// Cells of the shortest path as `[i0, j0, i1, j1, ...]`; empty when there is none.
    pub fn plan(&self, x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<u32> {
        let spec = &self.world.spec;
        let (Ok(a), Ok(b)) = (spec.world_to_cell(x0, y0), spec.world_to_cell(x1, y1)) else {
            return Vec::new();
        };
        let nav = threshold(&self.state.trav, self.params.trav_threshold);
        match plan(&nav, a, b) {
            Ok(path) => path.cells.iter().flat_map(|c: &Cell| [c.i as u32, c.j as u32]).collect(),
            Err(_) => Vec::new(),
        }
    }

    /// Full missions of all three strategies on this world, as lines of
    /// `strategy,t,trace_cov,pct_unexplored,n_loop_closures`.
    pub fn compare(&self, seed: u32) -> String {
        let mut out = String::new();
        for st in [Strategy::FitSlam, Strategy::Greedy, Strategy::Random(seed as u64)] {
            let Ok(r) = run_mission(&self.world, st, &self.params, false) else {
                continue;
            };
            for s in &r.log {
                let _ = writeln!(out, "{},{:.2},{:.6e},{:.3},{}", st.name(), s.t, s.trace_cov, s.pct_unexplored, s.n_loop_closures);
            }
        }
        out
    }
}
