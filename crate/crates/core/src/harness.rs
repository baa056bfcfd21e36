//! Mission loop, strategies and experiment output.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fisher::{path_information, path_normalizer, BearingNoise, LandmarkVoxels};
use crate::frontier::{cluster_frontiers, detect_frontiers, mission_complete, DEFAULT_MAX_CLUSTER_SIZE};
use crate::grid::Cell;
use crate::infogain::{scan_orientations, RayCastParams};
use crate::planner::{sample_waypoints, ShortestPathTree};
use crate::simworld::{generate_world, CovUpdate, MetricSample, MissionState, World, WorldConfig};
use crate::traversability::{threshold, TraversabilityParams};
use crate::utility::{compute_u1, nearer_first, select_best, shortlist, CandidateGoal, UtilityParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    FitSlam,
    Greedy,
    /// Uniform choice driven by its own generator.
    Random(u64),
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::FitSlam => "fit",
            Strategy::Greedy => "greedy",
            Strategy::Random(_) => "random",
        }
    }

    /// Parses `fit`, `greedy` or `random`; the random generator is seeded with `seed`.
    pub fn parse(name: &str, seed: u64) -> Result<Self> {
        match name.trim() {
            "fit" | "fitslam" | "fit-slam" => Ok(Strategy::FitSlam),
            "greedy" => Ok(Strategy::Greedy),
            "random" => Ok(Strategy::Random(seed)),
            other => Err(Error::Config(format!("unknown strategy '{other}'"))),
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        match self {
            Strategy::Random(_) => Strategy::Random(seed),
            s => s,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MissionParams {
    pub utility: UtilityParams,
    /// Field of view and range are taken from the world's camera.
    pub raycast: RayCastParams,
    pub trav: TraversabilityParams,
    pub trav_threshold: f64,
    pub max_cluster_size: usize,
    /// Simulated seconds.
    pub max_mission_time: f64,
    pub max_iterations: usize,
    pub noise: BearingNoise,
    pub voxel_size: f64,
    /// A run whose candidates are all unreachable counts as complete when at
    /// most this share (percent) of the boundary is still unknown.
    pub stall_pct: f64,
}

impl Default for MissionParams {
    fn default() -> Self {
        Self {
            utility: UtilityParams::default(),
            raycast: RayCastParams::default(),
            trav: TraversabilityParams::default(),
            trav_threshold: 0.4,
            max_cluster_size: DEFAULT_MAX_CLUSTER_SIZE,
            max_mission_time: 7200.0,
            max_iterations: 5000,
            noise: BearingNoise::default(),
            voxel_size: 0.25,
            stall_pct: 5.0,
        }
    }
}

impl MissionParams {
    pub fn validate(&self) -> Result<()> {
        self.utility.validate().map_err(Error::Config)?;
        self.raycast.validate().map_err(Error::Config)?;
        if self.max_cluster_size == 0 || self.voxel_size <= 0.0 || self.max_mission_time <= 0.0 {
            return Err(Error::Config(
                "cluster size, voxel size and mission time must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    Complete,
    /// Every remaining candidate was unreachable while too much stayed unknown.
    Stalled,
    Timeout,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Termination::Complete => "complete",
            Termination::Stalled => "stalled",
            Termination::Timeout => "timeout",
        }
    }
}

#[derive(Clone, Debug)]
pub struct MissionResult {
    pub log: Vec<MetricSample>,
    pub termination: Termination,
    /// Selected goals in order.
    pub goals: Vec<Cell>,
    pub audit: Option<Vec<CovUpdate>>,
    pub blacklisted: usize,
}

impl MissionResult {
    pub fn final_sample(&self) -> MetricSample {
        *self.log.last().expect("missions log at least the initial sample")
    }

    /// First time the explored share reaches `coverage_pct`.
    pub fn time_to_coverage(&self, coverage_pct: f64) -> Option<f64> {
        self.log
            .iter()
            .find(|s| 100.0 - s.pct_unexplored >= coverage_pct - 1e-9)
            .map(|s| s.t)
    }
}

fn evaluate(state: &MissionState, c: &mut CandidateGoal, raycast: &RayCastParams) {
    let (x, y) = state.occ.spec().center(c.goal());
    let scan = scan_orientations(&state.occ, x, y, raycast);
    c.delta_e = scan.best_gain;
    c.theta_star = scan.best_theta;
}

/// Runs the exploration loop on `world` until no frontier remains, the
/// candidates run out, or time is up.
pub fn run_mission(world: &World, strategy: Strategy, params: &MissionParams, audit: bool) -> Result<MissionResult> {
    params.validate()?;
    let cam = world.config.camera();
    let raycast = RayCastParams {
        fov: cam.fov,
        max_range: cam.max_depth,
        ..params.raycast
    };
    let spec = world.spec;
    let mut state = MissionState::new(world, params.trav, params.trav_threshold, params.noise);
    if audit {
        state = state.with_audit();
    }
    let mut rng = match strategy {
        Strategy::Random(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
        _ => None,
    };
    let mut goals = Vec::new();
    let mut reached: Vec<Cell> = Vec::new();
    state.sense_and_update(world);

    let mut termination = Termination::Timeout;
    for _ in 0..params.max_iterations {
        if state.clock >= params.max_mission_time {
            break;
        }
        let nav = threshold(&state.trav, params.trav_threshold);
        let frontier = detect_frontiers(&state.occ, &nav, &world.boundary);
        let clusters = cluster_frontiers(&spec, &frontier, params.max_cluster_size, &state.blacklist);
        if mission_complete(&clusters) {
            termination = Termination::Complete;
            break;
        }
        let robot = state.robot_cell()?;
        let tree = ShortestPathTree::build(&nav, robot)?;
        let mut candidates = Vec::new();
        for cl in clusters {
            let goal = cl.candidate;
            // a goal that is still a frontier after being reached is not worth another visit
            if reached.iter().any(|g| g.chebyshev(&goal) <= 1) {
                state.blacklist.insert(goal);
                continue;
            }
            match tree.path_to(goal) {
                Ok(path) => {
                    let rho = path.length_m.max(spec.resolution);
                    candidates.push(CandidateGoal::new(cl, path, rho, 0.0, 0.0));
                }
                Err(_) => state.blacklist.insert(goal),
            }
        }
        if candidates.is_empty() {
            termination = if state.pct_unexplored() > params.stall_pct {
                Termination::Stalled
            } else {
                Termination::Complete
            };
            break;
        }

        let chosen = match strategy {
            Strategy::FitSlam => {
                for c in candidates.iter_mut() {
                    evaluate(&state, c, &raycast);
                }
                compute_u1(&mut candidates, &params.utility)?;
                let mut short = shortlist(&candidates, params.utility.shortlist_n);
                let voxels = LandmarkVoxels::build(&state.mapped_landmarks(world), params.voxel_size);
                for c in short.iter_mut() {
                    let mut wps = sample_waypoints(&spec, &c.path, cam.max_depth);
                    if let Some(last) = wps.last_mut() {
                        last.heading = c.theta_star;
                    }
                    c.info = Some(path_information(&wps, &voxels, &cam, &params.noise));
                }
                let n_i = path_normalizer(short.iter().filter_map(|c| c.info.as_ref()));
                for c in short.iter_mut() {
                    if let Some(info) = c.info.as_mut() {
                        info.normalize(n_i);
                    }
                }
                let best = select_best(&mut short, &params.utility)?;
                short.swap_remove(best)
            }
            Strategy::Greedy => {
                let k = (0..candidates.len())
                    .min_by(|&a, &b| nearer_first(&candidates[a], &candidates[b]))
                    .expect("nonempty");
                let mut c = candidates.swap_remove(k);
                evaluate(&state, &mut c, &raycast);
                c
            }
            Strategy::Random(_) => {
                let r = rng.as_mut().expect("seeded for random strategy");
                let k = r.random_range(0..candidates.len());
                let mut c = candidates.swap_remove(k);
                evaluate(&state, &mut c, &raycast);
                c
            }
        };

        goals.push(chosen.goal());
        match state.execute_path(world, &chosen.path, chosen.theta_star) {
            Ok(()) => reached.push(chosen.goal()),
            Err(Error::PathBlocked(_)) => {}
            Err(e) => return Err(e),
        }
    }

    Ok(MissionResult {
        log: std::mem::take(&mut state.log),
        termination,
        goals,
        audit: state.audit.take(),
        blacklisted: state.blacklist.len(),
    })
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub world: WorldConfig,
    pub strategies: Vec<Strategy>,
    pub seeds: Vec<u64>,
    pub params: MissionParams,
    pub out_dir: PathBuf,
}

/// World configuration for one run seed: the base seed mixed with the run seed.
pub fn world_for_seed(base: &WorldConfig, seed: u64) -> WorldConfig {
    let mut cfg = base.clone();
    cfg.seed = base.seed ^ seed.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    cfg
}

/// Parses `a..b` (inclusive) or a comma-separated list.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let bad = || Error::Config(format!("cannot parse seeds '{text}'"));
    if let Some((a, b)) = text.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
        if b < a {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    text.split(',')
        .map(|s| s.trim().parse().map_err(|_| bad()))
        .collect()
}

#[derive(Clone, Debug)]
pub struct RunRecord {
    pub strategy: Strategy,
    pub seed: u64,
    pub result: MissionResult,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub strategy: String,
    pub runs: usize,
    pub median_final_trace: f64,
    pub median_time_to_90pct: f64,
    pub median_time_to_50pct: f64,
    pub median_loop_closures: f64,
    pub median_final_pct_unexplored: f64,
    pub stalled: usize,
    pub timeouts: usize,
}

#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub runs: Vec<RunRecord>,
    pub summary: Vec<SummaryRow>,
    pub files: Vec<PathBuf>,
}

impl ExperimentReport {
    pub fn any_stalled(&self) -> bool {
        self.runs.iter().any(|r| r.result.termination == Termination::Stalled)
    }

    pub fn row(&self, strategy: &str) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.strategy == strategy)
    }
}

/// Median with unreached values encoded as +inf.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        let (a, b) = (v[n / 2 - 1], v[n / 2]);
        if a == b {
            a
        } else {
            0.5 * (a + b)
        }
    }
}

pub fn metrics_csv(log: &[MetricSample]) -> String {
    let mut out = String::from("t,trace_cov,pct_unexplored,n_loop_closures,distance\n");
    for s in log {
        let _ = writeln!(
            out,
            "{:.3},{:.9e},{:.4},{},{:.3}",
            s.t, s.trace_cov, s.pct_unexplored, s.n_loop_closures, s.distance
        );
    }
    out
}

pub fn summarize(runs: &[RunRecord], strategies: &[Strategy]) -> Vec<SummaryRow> {
    strategies
        .iter()
        .map(|st| {
            let mine: Vec<&RunRecord> = runs.iter().filter(|r| r.strategy.name() == st.name()).collect();
            let col = |f: &dyn Fn(&MissionResult) -> f64| -> f64 {
                median(&mine.iter().map(|r| f(&r.result)).collect::<Vec<_>>())
            };
            SummaryRow {
                strategy: st.name().to_string(),
                runs: mine.len(),
                median_final_trace: col(&|r| r.final_sample().trace_cov),
                median_time_to_90pct: col(&|r| r.time_to_coverage(90.0).unwrap_or(f64::INFINITY)),
                median_time_to_50pct: col(&|r| r.time_to_coverage(50.0).unwrap_or(f64::INFINITY)),
                median_loop_closures: col(&|r| r.final_sample().n_loop_closures as f64),
                median_final_pct_unexplored: col(&|r| r.final_sample().pct_unexplored),
                stalled: mine.iter().filter(|r| r.result.termination == Termination::Stalled).count(),
                timeouts: mine.iter().filter(|r| r.result.termination == Termination::Timeout).count(),
            }
        })
        .collect()
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from(
        "strategy,runs,median_final_trace,median_time_to_90pct,median_time_to_50pct,median_loop_closures,median_final_pct_unexplored,stalled,timeouts\n",
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{:.9e},{:.3},{:.3},{:.1},{:.4},{},{}",
            r.strategy,
            r.runs,
            r.median_final_trace,
            r.median_time_to_90pct,
            r.median_time_to_50pct,
            r.median_loop_closures,
            r.median_final_pct_unexplored,
            r.stalled,
            r.timeouts
        );
    }
    out
}

/// Value of a step-held series at time `t`.
fn held(log: &[MetricSample], t: f64, f: impl Fn(&MetricSample) -> f64) -> f64 {
    let k = log.partition_point(|s| s.t <= t);
    f(&log[k.saturating_sub(1)])
}

const COLORS: [&str; 4] = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd"];

/// Line chart of the per-strategy median of `f` over seeds.
pub fn svg_chart(
    runs: &[RunRecord],
    strategies: &[Strategy],
    title: &str,
    y_label: &str,
    f: impl Fn(&MetricSample) -> f64 + Copy,
) -> String {
    let (w, h, ml, mr, mt, mb) = (720.0, 420.0, 80.0, 150.0, 40.0, 50.0);
    let t_max = runs
        .iter()
        .map(|r| r.result.final_sample().t)
        .fold(1.0, f64::max);
    let steps = 200;
    let series: Vec<(String, Vec<(f64, f64)>)> = strategies
        .iter()
        .map(|st| {
            let mine: Vec<&RunRecord> = runs.iter().filter(|r| r.strategy.name() == st.name()).collect();
            let pts = (0..=steps)
                .map(|k| {
                    let t = t_max * k as f64 / steps as f64;
                    let vals: Vec<f64> = mine.iter().map(|r| held(&r.result.log, t, f)).collect();
                    (t, median(&vals))
                })
                .collect();
            (st.name().to_string(), pts)
        })
        .collect();
    let y_max = series
        .iter()
        .flat_map(|(_, p)| p.iter().map(|q| q.1))
        .filter(|v| v.is_finite())
        .fold(0.0, f64::max)
        .max(1e-12);
    let px = |t: f64| ml + (w - ml - mr) * t / t_max;
    let py = |v: f64| mt + (h - mt - mb) * (1.0 - v / y_max);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{title}</text>"#, (ml + w - mr) / 2.0);
    let (x0, x1, y0, y1) = (ml, w - mr, mt, h - mb);
    let _ = writeln!(s, r#"<path d="M{x0},{y0} L{x0},{y1} L{x1},{y1}" fill="none" stroke="black"/>"#);
    for k in 0..=4 {
        let t = t_max * k as f64 / 4.0;
        let v = y_max * k as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{:.0}</text>"#, px(t), y1 + 18.0, t);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.3}</text>"#, x0 - 6.0, py(v) + 4.0, v);
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">Time (s)</text>"#, (x0 + x1) / 2.0, h - 12.0);
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{y_label}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );
    for (k, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let d: Vec<String> = pts
            .iter()
            .filter(|p| p.1.is_finite())
            .map(|&(t, v)| format!("{:.1},{:.1}", px(t), py(v)))
            .collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, d.join(" "));
        let ly = mt + 20.0 * k as f64 + 10.0;
        let _ = writeln!(s, r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/>"#, x1 + 15.0, x1 + 40.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}">{name}</text>"#, x1 + 46.0, ly + 4.0);
    }
    s.push_str("</svg>\n");
    s
}

fn write(path: &Path, text: &str, files: &mut Vec<PathBuf>) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    files.push(path.to_path_buf());
    Ok(())
}

/// Runs every (strategy, seed) pair and writes per-run CSVs, `summary.csv`
/// and two SVG charts into the output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.world.validate()?;
    cfg.params.validate()?;
    if cfg.strategies.is_empty() || cfg.seeds.is_empty() {
        return Err(Error::Config("need at least one strategy and one seed".into()));
    }
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let mut runs = Vec::new();
    let mut files = Vec::new();
    for &seed in &cfg.seeds {
        let world = generate_world(&world_for_seed(&cfg.world, seed))?;
        for &st in &cfg.strategies {
            let strategy = st.with_seed(seed);
            let result = run_mission(&world, strategy, &cfg.params, false)?;
            let path = cfg.out_dir.join(format!("metrics_{}_{}.csv", strategy.name(), seed));
            write(&path, &metrics_csv(&result.log), &mut files)?;
            runs.push(RunRecord {
                strategy,
                seed,
                result,
            });
        }
    }
    let summary = summarize(&runs, &cfg.strategies);
    write(&cfg.out_dir.join("summary.csv"), &summary_csv(&summary), &mut files)?;
    let trace_svg = svg_chart(&runs, &cfg.strategies, "Localization covariance", "trace(cov)", |s| s.trace_cov);
    write(&cfg.out_dir.join("trace_cov.svg"), &trace_svg, &mut files)?;
    let pct_svg = svg_chart(&runs, &cfg.strategies, "Unexplored map", "% unexplored", |s| s.pct_unexplored);
    write(&cfg.out_dir.join("pct_unexplored.svg"), &pct_svg, &mut files)?;
    Ok(ExperimentReport { runs, summary, files })
}
