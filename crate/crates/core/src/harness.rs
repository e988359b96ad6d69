//! Path datasets, baselines, campaigns and significance tests.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::drl::{evaluate_policy, ArchName, DrlError, EvalMetrics};
use crate::env::{normalize, EnvConfig, EnvError, ObsMode};
use crate::geom::{distance_to_segment, orient2d, Point};
use crate::pdm::{sample_pdm_with, Pdm, PdmError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("test undefined: {0}")]
    UndefinedTest(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Pdm(#[from] PdmError),
    #[error(transparent)]
    Drl(#[from] DrlError),
}

/// Candidate headings scored per greedy step.
pub const GREEDY_CANDIDATES: usize = 16;
/// Probability of a random in-bounds candidate instead of the best one.
pub const GREEDY_EPSILON: f64 = 0.1;
/// Cell edge of the coverage grid used to score candidates.
pub const GREEDY_CELL: f64 = 1.5;

/// Greedy coverage heuristic: each step takes the in-bounds heading whose
/// swath covers the most not-yet-seen mass on a coarse grid.
#[derive(Debug, Clone)]
pub struct GreedyPlanner {
    cfg: EnvConfig,
    epsilon: f64,
    nx: usize,
    ny: usize,
    mass: Vec<f64>,
    seen: Vec<bool>,
    marked: usize,
}

impl GreedyPlanner {
    pub fn new(pdm: &Pdm, cfg: &EnvConfig, epsilon: f64) -> Self {
        let d = cfg.domain;
        let nx = (d.width() / GREEDY_CELL).ceil() as usize;
        let ny = (d.height() / GREEDY_CELL).ceil() as usize;
        let mut mass = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                mass.push(pdm.density(&Self::center(cfg, i, j)) * GREEDY_CELL * GREEDY_CELL);
            }
        }
        Self { cfg: cfg.clone(), epsilon, nx, ny, mass, seen: vec![false; nx * ny], marked: 0 }
    }

    fn center(cfg: &EnvConfig, i: usize, j: usize) -> Point {
        Point::new(cfg.domain.x_min + (i as f64 + 0.5) * GREEDY_CELL, cfg.domain.y_min + (j as f64 + 0.5) * GREEDY_CELL)
    }

    /// Cells whose centers lie within the buffer radius of segment `a`–`b`.
    fn swath(&self, a: &Point, b: &Point, mut f: impl FnMut(usize)) {
        let r = self.cfg.buffer_radius;
        let d = self.cfg.domain;
        let idx = |v: f64, lo: f64, n: usize| (((v - lo) / GREEDY_CELL).floor().max(0.0) as usize).min(n - 1);
        let (i0, i1) = (idx(a.x.min(b.x) - r, d.x_min, self.nx), idx(a.x.max(b.x) + r, d.x_min, self.nx));
        let (j0, j1) = (idx(a.y.min(b.y) - r, d.y_min, self.ny), idx(a.y.max(b.y) + r, d.y_min, self.ny));
        for j in j0..=j1 {
            for i in i0..=i1 {
                if distance_to_segment(&Self::center(&self.cfg, i, j), a, b) <= r {
                    f(j * self.nx + i);
                }
            }
        }
    }

    fn mark(&mut self, a: &Point, b: &Point) {
        let mut cells = Vec::new();
        self.swath(a, b, |k| cells.push(k));
        for k in cells {
            self.seen[k] = true;
        }
    }

    /// Grid estimate of the unseen mass the step `a`–`b` would cover.
    pub fn gain(&self, a: &Point, b: &Point) -> f64 {
        let mut g = 0.0;
        self.swath(a, b, |k| {
            if !self.seen[k] {
                g += self.mass[k];
            }
        });
        g
    }

    /// Marks coverage for every segment of `path` not yet seen, then picks
    /// the next heading action.
    pub fn act<R: Rng + ?Sized>(&mut self, path: &[Point], rng: &mut R) -> f64 {
        let cur = *path.last().expect("path is never empty");
        if self.marked == 0 {
            self.mark(&path[0], &path[0]);
            self.marked = 1;
        }
        while self.marked < path.len() {
            let (a, b) = (path[self.marked - 1], path[self.marked]);
            self.mark(&a, &b);
            self.marked += 1;
        }
        let d = self.cfg.domain;
        let mut options: Vec<(f64, f64, f64)> = Vec::with_capacity(GREEDY_CANDIDATES);
        for k in 0..GREEDY_CANDIDATES {
            let action = -1.0 + 2.0 * k as f64 / GREEDY_CANDIDATES as f64;
            let h = PI * (action + 1.0);
            let next = Point::new(cur.x + self.cfg.step_size * h.cos(), cur.y + self.cfg.step_size * h.sin());
            if d.contains(&next) {
                let probe = Point::new(cur.x + 3.0 * self.cfg.step_size * h.cos(), cur.y + 3.0 * self.cfg.step_size * h.sin());
                let density = self.mass_near(&probe);
                options.push((action, self.gain(&cur, &next), density));
            }
        }
        if options.is_empty() {
            let c = d.center();
            return ((c.y - cur.y).atan2(c.x - cur.x) / PI).rem_euclid(2.0) - 1.0;
        }
        if rng.gen::<f64>() < self.epsilon {
            return options[rng.gen_range(0..options.len())].0;
        }
        // ties (nothing unseen nearby) go to the heading toward more mass
        options
            .iter()
            .max_by(|a, b| a.1.total_cmp(&b.1).then(a.2.total_cmp(&b.2)))
            .map(|o| o.0)
            .unwrap()
    }

    fn mass_near(&self, p: &Point) -> f64 {
        let d = self.cfg.domain;
        let i = ((p.x - d.x_min) / GREEDY_CELL).floor().clamp(0.0, (self.nx - 1) as f64) as usize;
        let j = ((p.y - d.y_min) / GREEDY_CELL).floor().clamp(0.0, (self.ny - 1) as f64) as usize;
        self.mass[j * self.nx + i]
    }
}

/// Flies one greedy path of `cfg.n_waypoints` steps from `start`.
pub fn greedy_path<R: Rng + ?Sized>(pdm: &Pdm, cfg: &EnvConfig, start: Point, epsilon: f64, rng: &mut R) -> Vec<Point> {
    let mut planner = GreedyPlanner::new(pdm, cfg, epsilon);
    let mut path = vec![start];
    for _ in 0..cfg.n_waypoints {
        let a = planner.act(&path, rng);
        let h = PI * (a + 1.0);
        let cur = *path.last().unwrap();
        path.push(Point::new(cur.x + cfg.step_size * h.cos(), cur.y + cfg.step_size * h.sin()));
    }
    path
}

/// Greedy heuristic played on `n_episodes` environment episodes.
pub fn greedy_baseline(cfg: &EnvConfig, n_episodes: usize, seed: u64) -> Result<EvalMetrics, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut planner: Option<(u64, GreedyPlanner)> = None;
    Ok(evaluate_policy(cfg, ObsMode::FrameStack, None, n_episodes, seed, |env, _| {
        let st = env.state();
        if planner.as_ref().is_none_or(|(ep, _)| *ep != env.episode()) {
            planner = Some((env.episode(), GreedyPlanner::new(&st.pdm, cfg, GREEDY_EPSILON)));
        }
        planner.as_mut().unwrap().1.act(st.path.vertices(), &mut rng)
    })?)
}

/// Uniform random actions on `n_episodes` environment episodes.
pub fn random_baseline(cfg: &EnvConfig, n_episodes: usize, seed: u64) -> Result<EvalMetrics, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6a09_e667_f3bc_c908);
    Ok(evaluate_policy(cfg, ObsMode::FrameStack, None, n_episodes, seed, |_, _| rng.gen_range(-1.0..=1.0))?)
}

/// Paths in normalized coordinates with their provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct PathDataset {
    pub paths: Vec<Vec<[f64; 2]>>,
    pub generator: String,
    pub seed: u64,
}

impl PathDataset {
    /// `# generator seed` line, then one path per line as `x,y,x,y,...`.
    pub fn to_text(&self) -> String {
        let mut s = format!("# {} {}\n", self.generator, self.seed);
        for p in &self.paths {
            let line: Vec<String> = p.iter().map(|[x, y]| format!("{x},{y}")).collect();
            s.push_str(&line.join(","));
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, HarnessError> {
        let mut ds = PathDataset { paths: Vec::new(), generator: "unknown".into(), seed: 0 };
        for (k, line) in text.lines().enumerate() {
            let line = line.trim();
            let err = |msg: &str| HarnessError::Parse { line: k + 1, msg: msg.into() };
            if line.is_empty() {
                continue;
            }
            if let Some(h) = line.strip_prefix('#') {
                let mut it = h.split_whitespace();
                if let (Some(g), Some(s)) = (it.next(), it.next()) {
                    ds.generator = g.to_string();
                    ds.seed = s.parse().map_err(|_| err("bad seed in header"))?;
                }
                continue;
            }
            let vals = line
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| err("not a number"))?;
            if vals.len() % 2 != 0 || vals.len() < 4 {
                return Err(err("expected at least two x,y pairs"));
            }
            if vals.iter().any(|v| !(-1.0..=1.0).contains(v)) {
                return Err(err("coordinate outside [-1, 1]"));
            }
            ds.paths.push(vals.chunks_exact(2).map(|c| [c[0], c[1]]).collect());
        }
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// `n_paths` greedy paths over one map, from uniform random starts.
pub fn generate_paths_greedy(pdm: &Pdm, n_paths: usize, cfg: &EnvConfig, seed: u64) -> Result<PathDataset, HarnessError> {
    if n_paths == 0 {
        return Err(HarnessError::InvalidParameter("n_paths must be at least 1".into()));
    }
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = cfg.domain;
    let paths = (0..n_paths)
        .map(|_| {
            let start = Point::new(rng.gen_range(d.x_min..=d.x_max), rng.gen_range(d.y_min..=d.y_max));
            greedy_path(pdm, cfg, start, GREEDY_EPSILON, &mut rng).iter().map(|p| normalize(p, &d)).collect()
        })
        .collect();
    Ok(PathDataset { paths, generator: "greedy".into(), seed })
}

/// Like [`generate_paths_greedy`] but with a freshly sampled map per path.
pub fn generate_dataset(n_paths: usize, cfg: &EnvConfig, seed: u64) -> Result<PathDataset, HarnessError> {
    if n_paths == 0 {
        return Err(HarnessError::InvalidParameter("n_paths must be at least 1".into()));
    }
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = cfg.domain;
    let mut paths = Vec::with_capacity(n_paths);
    for _ in 0..n_paths {
        let pdm = sample_pdm_with(&mut rng, cfg.n_gaussian, cfg.sigma, d)?;
        let start = Point::new(rng.gen_range(d.x_min..=d.x_max), rng.gen_range(d.y_min..=d.y_max));
        paths.push(greedy_path(&pdm, cfg, start, GREEDY_EPSILON, &mut rng).iter().map(|p| normalize(p, &d)).collect());
    }
    Ok(PathDataset { paths, generator: "greedy".into(), seed })
}

/// Number of pairs of non-adjacent segments of `path` that cross.
pub fn self_intersections(path: &[Point]) -> usize {
    let crosses = |a: &Point, b: &Point, c: &Point, d: &Point| {
        let (d1, d2) = (orient2d(a, b, c), orient2d(a, b, d));
        let (d3, d4) = (orient2d(c, d, a), orient2d(c, d, b));
        d1 * d2 < 0.0 && d3 * d4 < 0.0
    };
    let n = path.len().saturating_sub(1);
    let mut count = 0;
    for i in 0..n {
        for j in i + 2..n {
            if crosses(&path[i], &path[i + 1], &path[j], &path[j + 1]) {
                count += 1;
            }
        }
    }
    count
}

/// Two-sided Welch t-test p-value.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<f64, HarnessError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(HarnessError::UndefinedTest("each sample needs at least two values".into()));
    }
    let stats = |x: &[f64]| {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        (n, m, x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0))
    };
    let (na, ma, va) = stats(a);
    let (nb, mb, vb) = stats(b);
    let (sa, sb) = (va / na, vb / nb);
    let se2 = sa + sb;
    if !(se2 > 0.0) {
        return Err(HarnessError::UndefinedTest("both samples have zero variance".into()));
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| HarnessError::UndefinedTest(e.to_string()))?;
    Ok((2.0 * dist.sf(t.abs())).clamp(0.0, 1.0))
}

/// Outcome of one (architecture, seed) run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub arch: ArchName,
    pub seed: u64,
    /// `None` when the run completed.
    pub crash: Option<String>,
    pub mean_efficiency: f64,
    pub max_efficiency: f64,
    pub mean_step_reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchSummary {
    pub arch: ArchName,
    pub runs: usize,
    pub crashed: usize,
    pub mean_efficiency: f64,
    pub std_efficiency: f64,
    pub mean_max_efficiency: f64,
    pub mean_step_reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignResult {
    pub runs: Vec<RunRecord>,
    pub summary: Vec<ArchSummary>,
}

/// Completed-run metrics reported by a campaign runner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunMetrics {
    pub mean_efficiency: f64,
    pub max_efficiency: f64,
    pub mean_step_reward: f64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt())
}

/// The (architecture, seed) cross product in an order shuffled by
/// `order_seed`. Seeds are `0..n_seeds`.
pub fn campaign_order(archs: &[ArchName], n_seeds: u64, order_seed: u64) -> Vec<(ArchName, u64)> {
    let mut v: Vec<_> = archs.iter().flat_map(|&a| (0..n_seeds).map(move |s| (a, s))).collect();
    v.shuffle(&mut ChaCha8Rng::seed_from_u64(order_seed));
    v
}

/// Executes every run through `run`, recording crashes instead of
/// stopping, and aggregates completed runs per architecture.
pub fn run_campaign<F>(archs: &[ArchName], n_seeds: u64, order_seed: u64, mut run: F) -> Result<CampaignResult, HarnessError>
where
    F: FnMut(ArchName, u64) -> Result<RunMetrics, String>,
{
    if n_seeds == 0 || archs.is_empty() {
        return Err(HarnessError::InvalidParameter("need at least one architecture and one seed".into()));
    }
    let mut runs = Vec::new();
    for (arch, seed) in campaign_order(archs, n_seeds, order_seed) {
        let rec = match run(arch, seed) {
            Ok(m) => RunRecord {
                arch,
                seed,
                crash: None,
                mean_efficiency: m.mean_efficiency,
                max_efficiency: m.max_efficiency,
                mean_step_reward: m.mean_step_reward,
            },
            Err(cause) => RunRecord {
                arch,
                seed,
                crash: Some(cause),
                mean_efficiency: f64::NAN,
                max_efficiency: f64::NAN,
                mean_step_reward: f64::NAN,
            },
        };
        runs.push(rec);
    }
    let summary = archs
        .iter()
        .map(|&arch| {
            let mine: Vec<_> = runs.iter().filter(|r| r.arch == arch).collect();
            let ok: Vec<_> = mine.iter().filter(|r| r.crash.is_none()).collect();
            let (me, se) = mean_std(&ok.iter().map(|r| r.mean_efficiency).collect::<Vec<_>>());
            ArchSummary {
                arch,
                runs: mine.len(),
                crashed: mine.len() - ok.len(),
                mean_efficiency: me,
                std_efficiency: se,
                mean_max_efficiency: mean_std(&ok.iter().map(|r| r.max_efficiency).collect::<Vec<_>>()).0,
                mean_step_reward: mean_std(&ok.iter().map(|r| r.mean_step_reward).collect::<Vec<_>>()).0,
            }
        })
        .collect();
    Ok(CampaignResult { runs, summary })
}

impl CampaignResult {
    pub fn runs_csv(&self) -> String {
        let mut s = String::from("arch,seed,status,mean_efficiency,max_efficiency,mean_step_reward\n");
        for r in &self.runs {
            let status = r.crash.as_deref().map_or("ok".to_string(), |c| format!("crashed: {}", c.replace([',', '\n'], ";")));
            let _ = writeln!(s, "{},{},{},{},{},{}", r.arch, r.seed, status, r.mean_efficiency, r.max_efficiency, r.mean_step_reward);
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from("arch,runs,crashed,mean_efficiency,std_efficiency,mean_max_efficiency,mean_step_reward\n");
        for a in &self.summary {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                a.arch, a.runs, a.crashed, a.mean_efficiency, a.std_efficiency, a.mean_max_efficiency, a.mean_step_reward
            );
        }
        s
    }
}
