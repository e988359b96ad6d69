//! Command implementations behind the `searchplan` binary.

pub mod config;
pub mod svg;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use searchplan::autodiff::{load_checkpoint, save_checkpoint, AutodiffError};
use searchplan::drl::{
    build_architecture, evaluate_policy_observed, Agent, ArchName, DrlError, EvalMetrics, METRICS_HEADER,
};
use searchplan::env::{EnvError, ObsMode, SearchEnv};
use searchplan::geom::Point;
use searchplan::harness::{generate_dataset, GreedyPlanner, HarnessError, PathDataset, GREEDY_EPSILON};
use searchplan::pdm::{sample_pdm, PdmError};
use searchplan::rae::{train_rae, FrozenEncoder, RaeError, RaeModel};
use searchplan::verify::{checkpoint_check, run_suite, Suite};

use config::{ConfigError, RunConfig};

/// Relative paths are resolved under this directory when it is set.
pub const OUT_ROOT_VAR: &str = "SEARCHPLAN_OUT_ROOT";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Failed(_) => 1,
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<AutodiffError> for CliError {
    fn from(e: AutodiffError) -> Self {
        match e {
            AutodiffError::NonFinite { .. } | AutodiffError::NotScalar { .. } => CliError::Failed(e.to_string()),
            _ => CliError::Io(e.to_string()),
        }
    }
}

impl From<EnvError> for CliError {
    fn from(e: EnvError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<PdmError> for CliError {
    fn from(e: PdmError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<DrlError> for CliError {
    fn from(e: DrlError) -> Self {
        match e {
            DrlError::Autodiff(a) => a.into(),
            DrlError::Config(_) | DrlError::Env(_) => CliError::Config(e.to_string()),
            _ => CliError::Failed(e.to_string()),
        }
    }
}

impl From<RaeError> for CliError {
    fn from(e: RaeError) -> Self {
        match e {
            RaeError::Autodiff(a) => a.into(),
            RaeError::Layout(_) => CliError::Io(e.to_string()),
            RaeError::InvalidParameter(_) => CliError::Config(e.to_string()),
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Io(_) | HarnessError::Parse { .. } => CliError::Io(e.to_string()),
            HarnessError::Drl(d) => d.into(),
            _ => CliError::Config(e.to_string()),
        }
    }
}

pub fn resolve(p: &Path) -> PathBuf {
    match std::env::var_os(OUT_ROOT_VAR) {
        Some(root) if p.is_relative() => PathBuf::from(root).join(p),
        _ => p.to_path_buf(),
    }
}

/// `--out` if given, else `out_dir` from the config.
fn output(out: Option<&Path>, cfg: &RunConfig) -> Result<PathBuf, CliError> {
    match out.or(cfg.out_dir.as_deref()) {
        Some(p) => Ok(resolve(p)),
        None => Err(CliError::Config("no output path: pass --out or set out_dir".into())),
    }
}

fn read(p: &Path) -> Result<String, CliError> {
    fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))
}

fn write(p: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    }
    fs::write(p, contents).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))
}

fn make_dir(p: &Path) -> Result<(), CliError> {
    fs::create_dir_all(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))
}

pub fn load_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    match path {
        Some(p) => Ok(RunConfig::parse(&read(&resolve(p))?)?),
        None => Ok(RunConfig::default()),
    }
}

/// Wall-clock record kept apart from the reproducible outputs.
struct Sidecar {
    command: &'static str,
    started: SystemTime,
    clock: Instant,
}

impl Sidecar {
    fn start(command: &'static str) -> Self {
        Self { command, started: SystemTime::now(), clock: Instant::now() }
    }

    fn finish(self, path: &Path) -> Result<(), CliError> {
        let secs = |t: SystemTime| t.duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64());
        let text = format!(
            "command={}\nversion={}\nstarted_unix={:.3}\nfinished_unix={:.3}\nelapsed_s={:.3}\n",
            self.command,
            env!("CARGO_PKG_VERSION"),
            secs(self.started),
            secs(SystemTime::now()),
            self.clock.elapsed().as_secs_f64()
        );
        write(path, &text)
    }
}

fn sidecar_for_file(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".meta");
    out.with_file_name(name)
}

pub fn gen_pdm(seed: Option<u64>, n: Option<usize>, config: Option<&Path>, out: Option<&Path>) -> Result<(), CliError> {
    let side = Sidecar::start("gen-pdm");
    let cfg = load_config(config)?;
    let out = output(out, &cfg)?;
    let seed = seed.unwrap_or(cfg.seed);
    let pdm = sample_pdm(seed, n.unwrap_or(cfg.env.n_gaussian), cfg.env.sigma, cfg.env.domain)?;
    write(&out, &pdm.to_text())?;
    println!("wrote {} ({} components), p_A = {:.9}", out.display(), pdm.components().len(), pdm.domain_mass());
    side.finish(&sidecar_for_file(&out))
}

pub fn gen_paths(n: usize, seed: Option<u64>, config: Option<&Path>, out: Option<&Path>) -> Result<(), CliError> {
    let side = Sidecar::start("gen-paths");
    let cfg = load_config(config)?;
    let out = output(out, &cfg)?;
    let ds = generate_dataset(n, &cfg.env, seed.unwrap_or(cfg.seed))?;
    write(&out, &ds.to_text())?;
    println!("wrote {} paths to {}", ds.paths.len(), out.display());
    side.finish(&sidecar_for_file(&out))
}

pub fn train_rae_cmd(data: &Path, seed: Option<u64>, config: Option<&Path>, out: Option<&Path>) -> Result<(), CliError> {
    let side = Sidecar::start("train-rae");
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let out = output(out, &cfg)?;
    let ds = PathDataset::load(&resolve(data))?;
    make_dir(&out)?;
    write(&out.join("config.txt"), &cfg.to_text(None))?;
    let res = train_rae(&ds.paths, cfg.rae_arch, &cfg.rae, cfg.seed, |r| {
        println!("epoch {:>4} train {:.6e} val {:.6e} best {:.6e}", r.epoch, r.train_loss, r.val_loss, r.best_val_loss)
    })?;
    save_checkpoint(&res.model.store, &out.join("rae.ckpt"))?;
    write(&out.join("loss.csv"), &res.history_csv())?;
    let last = res.history.last().map_or(0, |r| r.epoch);
    let best = res.history[res.best_epoch].val_loss;
    write(
        &out.join("summary.csv"),
        &format!("best_epoch,last_epoch,stopped_early,best_val_mse\n{},{last},{},{best}\n", res.best_epoch, res.stopped_early),
    )?;
    println!("best epoch {} (val mse {best:.6e}); {}", res.best_epoch, if res.stopped_early {
        format!("stopped early at epoch {last}")
    } else {
        format!("ran all {last} epochs")
    });
    side.finish(&out.join("run.meta"))
}

pub fn load_encoder(path: &Path) -> Result<Arc<FrozenEncoder>, CliError> {
    let model = RaeModel::<f32>::from_store(load_checkpoint::<f32>(&resolve(path))?)?;
    Ok(FrozenEncoder::from_model(&model))
}

#[derive(Debug, Clone)]
pub struct TrainPolicyArgs<'a> {
    pub arch: &'a str,
    pub encoder: Option<&'a Path>,
    pub config: Option<&'a Path>,
    pub steps: u64,
    pub seed: Option<u64>,
    pub out: Option<&'a Path>,
}

pub fn train_policy(a: &TrainPolicyArgs<'_>) -> Result<(), CliError> {
    let side = Sidecar::start("train-policy");
    let arch: ArchName = a.arch.parse().map_err(|e: DrlError| CliError::Config(e.to_string()))?;
    let mut cfg = load_config(a.config)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if arch.obs_mode() == ObsMode::Latent && a.encoder.is_none() {
        return Err(CliError::Config(format!("{arch} needs --encoder")));
    }
    let encoder = a.encoder.map(load_encoder).transpose()?;
    let mut agent = build_architecture(&cfg.agent(arch)?, encoder)?;
    let out = output(a.out, &cfg)?;
    make_dir(&out)?;
    write(&out.join("config.txt"), &cfg.to_text(Some(arch)))?;
    let _ = fs::remove_file(out.join("crash.txt"));
    if let Some(e) = a.encoder {
        fs::copy(resolve(e), out.join("encoder.ckpt")).map_err(|err| CliError::Io(format!("{}: {err}", e.display())))?;
    }
    let mut csv = format!("{METRICS_HEADER}\n");
    println!("{arch}: {} parameters, {} steps", agent.param_count(), a.steps);
    let result = agent.train(a.steps, cfg.log_interval, |row| {
        csv.push_str(&row.csv_line());
        csv.push('\n');
        println!(
            "step {:>8} episodes {:>6} ep_rew_mean {:>10.4} efficiency {:.4}",
            row.global_step, row.episodes, row.ep_rew_mean, row.efficiency_mean
        );
    });
    write(&out.join("metrics.csv"), &csv)?;
    if let Err(e) = result {
        let err = CliError::from(e);
        write(&out.join("crash.txt"), &format!("{err}\n"))?;
        side.finish(&out.join("run.meta"))?;
        return Err(err);
    }
    save_checkpoint(agent.store(), &out.join("policy.ckpt"))?;
    write(&out.join("policy.txt"), &format!("arch={arch}\n"))?;
    println!("wrote {}", out.display());
    side.finish(&out.join("run.meta"))
}

/// Restores a trained agent from a `train-policy` output directory.
pub fn load_policy(dir: &Path) -> Result<Agent, CliError> {
    let dir = resolve(dir);
    let meta = read(&dir.join("policy.txt"))?;
    let arch = meta
        .lines()
        .find_map(|l| l.strip_prefix("arch="))
        .ok_or_else(|| CliError::Io(format!("{}: no arch line", dir.join("policy.txt").display())))?;
    let arch: ArchName = arch.trim().parse().map_err(|e: DrlError| CliError::Io(e.to_string()))?;
    let cfg = RunConfig::parse(&read(&dir.join("config.txt"))?)?;
    let encoder = match arch.obs_mode() {
        ObsMode::Latent => Some(load_encoder(&dir.join("encoder.ckpt"))?),
        ObsMode::FrameStack => None,
    };
    let mut agent = build_architecture(&cfg.agent(arch)?, encoder)?;
    let store = load_checkpoint::<f32>(&dir.join("policy.ckpt"))?;
    agent.load_params(&store).map_err(|e| CliError::Io(e.to_string()))?;
    Ok(agent)
}

fn summary_csv(m: &EvalMetrics) -> String {
    format!(
        "episodes,mean_step_reward,std_step_reward,mean_episode_length,mean_efficiency,max_efficiency\n{},{},{},{},{},{}\n",
        m.episodes.len(),
        m.mean_step_reward,
        m.std_step_reward,
        m.mean_episode_length,
        m.mean_efficiency,
        m.max_efficiency
    )
}

#[derive(Debug, Clone)]
pub struct EvalArgs<'a> {
    /// A `train-policy` directory, or `random` / `greedy`.
    pub policy: &'a str,
    pub episodes: usize,
    pub seed: u64,
    pub config: Option<&'a Path>,
    pub plots: usize,
    pub out: Option<&'a Path>,
}

pub fn eval(a: &EvalArgs<'_>) -> Result<EvalMetrics, CliError> {
    let side = Sidecar::start("eval");
    let out = match a.out {
        Some(p) => resolve(p),
        None => output(None, &load_config(a.config)?)?,
    };
    let mut plots: Vec<(usize, String)> = Vec::new();
    let mut keep = |k: usize, env: &SearchEnv| {
        if k < a.plots {
            let st = env.state();
            let path: Vec<Point> = st.path.vertices().to_vec();
            let title = format!("episode {k}, efficiency {:.4}", st.efficiency());
            plots.push((k, svg::episode_svg(&st.pdm, &path, &env.config().domain, &title)));
        }
    };
    let metrics = match a.policy {
        "random" | "greedy" => {
            let cfg = load_config(a.config)?;
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed ^ 0x5eed);
            if a.policy == "random" {
                evaluate_policy_observed(&cfg.env, ObsMode::FrameStack, None, a.episodes, a.seed, |_, _| rng.gen_range(-1.0..=1.0), &mut keep)?
            } else {
                let mut planner: Option<(u64, GreedyPlanner)> = None;
                evaluate_policy_observed(
                    &cfg.env,
                    ObsMode::FrameStack,
                    None,
                    a.episodes,
                    a.seed,
                    |env, _| {
                        if planner.as_ref().is_none_or(|(ep, _)| *ep != env.episode()) {
                            planner = Some((env.episode(), GreedyPlanner::new(&env.state().pdm, env.config(), GREEDY_EPSILON)));
                        }
                        planner.as_mut().unwrap().1.act(env.state().path.vertices(), &mut rng)
                    },
                    &mut keep,
                )?
            }
        }
        dir => {
            if a.config.is_some() {
                return Err(CliError::Config("--config applies to the random and greedy baselines only".into()));
            }
            let agent = load_policy(Path::new(dir))?;
            let cfg = agent.config().env.clone();
            evaluate_policy_observed(
                &cfg,
                agent.arch().obs_mode(),
                agent.encoder().cloned(),
                a.episodes,
                a.seed,
                |_, obs| agent.act(&[obs.to_vec()])[0],
                &mut keep,
            )?
        }
    };
    make_dir(&out)?;
    write(&out.join("episodes.csv"), &metrics.episodes_csv())?;
    write(&out.join("summary.csv"), &summary_csv(&metrics))?;
    for (k, s) in &plots {
        write(&out.join(format!("path_{k:03}.svg")), s)?;
    }
    println!(
        "{} episodes: mean efficiency {:.4}, max {:.4}, mean step reward {:.4} (std {:.4}), mean length {:.1}",
        metrics.episodes.len(),
        metrics.mean_efficiency,
        metrics.max_efficiency,
        metrics.mean_step_reward,
        metrics.std_step_reward,
        metrics.mean_episode_length
    );
    side.finish(&out.join("run.meta"))?;
    Ok(metrics)
}

/// Runs the oracle suite and checks each checkpoint; prints one line per
/// check and fails if any check fails.
pub fn verify(suite: &str, checkpoints: &[PathBuf]) -> Result<(), CliError> {
    let suite: Suite = suite.parse().map_err(CliError::Config)?;
    let mut checks = run_suite(suite);
    checks.extend(checkpoints.iter().map(|p| checkpoint_check(&resolve(p))));
    let mut report = String::new();
    for c in &checks {
        let _ = writeln!(report, "{c}");
    }
    print!("{report}");
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        return Err(CliError::Failed(format!("{failed} of {} checks failed", checks.len())));
    }
    println!("all {} checks passed", checks.len());
    Ok(())
}
