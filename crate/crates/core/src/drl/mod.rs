//! SAC and PPO agents over the search environment.
//!
//! Six architectures combine an observation mode (latent from a frozen
//! encoder, or frame stack) with a feature extractor and an algorithm. The
//! core of every network is two ReLU layers of a configurable width.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use thiserror::Error;

use crate::autodiff::{AutodiffError, ParamId, ParamStore};
use crate::env::{observation_dim, EnvConfig, EnvError, ObsMode};
use crate::rae::FrozenEncoder;

mod buffer;
mod nets;
mod ppo;
mod sac;
mod vecenv;

pub use buffer::{Batch, ReplayBuffer};
pub use nets::{ActorCritic, Extractor, ExtractorKind, Mlp, SacActor, TwinCritic, FCN_EXTRACTOR_OUT, LSTM_EXTRACTOR_HIDDEN};
pub use ppo::{compute_gae, normalize_advantages, PpoAgent, PpoLosses};
pub use sac::{SacAgent, SacLosses};
pub use vecenv::{collect_rollouts, evaluate_policy, evaluate_policy_observed, stack, EpisodeMetrics, EpisodeRecord, EvalMetrics, Transition, VecEnv};

#[derive(Debug, Error)]
pub enum DrlError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("non-finite {what} at step {step}")]
    NonFinite { step: u64, what: String },
    #[error("no episodes to evaluate")]
    EmptyMetrics,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algo {
    Sac,
    Ppo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ArchName {
    LstmaeSac,
    LstmaePpo,
    FsSacFcn,
    FsPpoFcn,
    FsSacLstm,
    FsPpoLstm,
}

impl ArchName {
    pub const ALL: [ArchName; 6] = [
        ArchName::LstmaeSac,
        ArchName::LstmaePpo,
        ArchName::FsSacFcn,
        ArchName::FsPpoFcn,
        ArchName::FsSacLstm,
        ArchName::FsPpoLstm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ArchName::LstmaeSac => "LSTMAE_SAC",
            ArchName::LstmaePpo => "LSTMAE_PPO",
            ArchName::FsSacFcn => "FS_SAC_FCN",
            ArchName::FsPpoFcn => "FS_PPO_FCN",
            ArchName::FsSacLstm => "FS_SAC_LSTM",
            ArchName::FsPpoLstm => "FS_PPO_LSTM",
        }
    }

    pub fn algo(self) -> Algo {
        match self {
            ArchName::LstmaeSac | ArchName::FsSacFcn | ArchName::FsSacLstm => Algo::Sac,
            _ => Algo::Ppo,
        }
    }

    pub fn obs_mode(self) -> ObsMode {
        match self {
            ArchName::LstmaeSac | ArchName::LstmaePpo => ObsMode::Latent,
            _ => ObsMode::FrameStack,
        }
    }

    pub fn extractor(self) -> ExtractorKind {
        match self {
            ArchName::LstmaeSac | ArchName::LstmaePpo => ExtractorKind::LatentPassthrough,
            ArchName::FsSacFcn | ArchName::FsPpoFcn => ExtractorKind::FcnOnPath,
            ArchName::FsSacLstm | ArchName::FsPpoLstm => ExtractorKind::LstmOnPath,
        }
    }
}

impl fmt::Display for ArchName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ArchName {
    type Err = DrlError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ArchName::ALL
            .into_iter()
            .find(|a| a.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| DrlError::Config(format!("unknown architecture {s:?}")))
    }
}

/// Hyperparameter set a run starts from before explicit overrides.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Full-size reference hyperparameters.
    Full,
    /// Scaled for single-core runs of about 1e5 steps.
    Desk,
}

impl FromStr for Preset {
    type Err = DrlError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Preset::Full),
            "desk" => Ok(Preset::Desk),
            _ => Err(DrlError::Config(format!("unknown preset {s:?} (expected full or desk)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SacConfig {
    pub tau: f64,
    pub n_envs: usize,
    /// Env steps (per env) between training phases.
    pub train_freq: usize,
    pub batch_size: usize,
    pub buffer_size: usize,
    pub gradient_steps: usize,
    pub learning_rate: f64,
    /// Transitions collected with uniform random actions before training.
    pub learning_starts: u64,
    pub target_entropy: f64,
    pub gamma: f64,
    pub init_ent_coef: f64,
    /// Recorded only: exploration uses a plain diagonal Gaussian.
    pub sde_freq: u32,
}

impl SacConfig {
    pub fn preset(arch: ArchName, preset: Preset) -> Self {
        let lstmae = arch == ArchName::LstmaeSac;
        match preset {
            Preset::Full if lstmae => Self {
                tau: 0.19028,
                n_envs: 8,
                train_freq: 10,
                batch_size: 512,
                buffer_size: 500_000,
                gradient_steps: 100,
                learning_rate: 5.9174e-6,
                learning_starts: 6547,
                target_entropy: -1.0,
                gamma: 0.99,
                init_ent_coef: 1.0,
                sde_freq: 4,
            },
            Preset::Full => Self {
                tau: 0.19736,
                n_envs: 8,
                train_freq: 1,
                batch_size: 1024,
                buffer_size: 5_000_000,
                gradient_steps: 2,
                learning_rate: 1.4363e-4,
                learning_starts: 8092,
                target_entropy: -1.0,
                gamma: 0.99,
                init_ent_coef: 1.0,
                sde_freq: 5,
            },
            Preset::Desk => Self {
                tau: 0.005,
                n_envs: 8,
                train_freq: 1,
                batch_size: 256,
                buffer_size: 100_000,
                gradient_steps: 1,
                learning_rate: 3e-4,
                learning_starts: 2000,
                target_entropy: -1.0,
                gamma: 0.99,
                init_ent_coef: 1.0,
                sde_freq: if lstmae { 4 } else { 5 },
            },
        }
    }

    pub fn validate(&self) -> Result<(), DrlError> {
        let bad = |m: &str| Err(DrlError::Config(format!("sac: {m}")));
        if !(0.0..=1.0).contains(&self.tau) {
            return bad("tau must lie in [0, 1]");
        }
        if self.n_envs == 0 || self.train_freq == 0 || self.batch_size == 0 || self.buffer_size == 0 {
            return bad("n_envs, train_freq, batch_size and buffer_size must be positive");
        }
        if !(self.learning_rate > 0.0 && self.init_ent_coef > 0.0) {
            return bad("learning_rate and init_ent_coef must be positive");
        }
        if !(0.0..=1.0).contains(&self.gamma) || !self.target_entropy.is_finite() {
            return bad("gamma must lie in [0, 1] and target_entropy must be finite");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PpoConfig {
    /// Steps per env in each rollout.
    pub n_steps: usize,
    pub n_envs: usize,
    pub ent_coef: f64,
    pub vf_coef: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub n_epochs: usize,
    pub clip_range: f64,
    pub gae_lambda: f64,
    pub max_grad_norm: f64,
    pub gamma: f64,
    /// Recorded only, as for SAC.
    pub sde_freq: u32,
}

impl PpoConfig {
    /// There is a single PPO profile per architecture; `Desk` keeps it.
    pub fn preset(arch: ArchName, _preset: Preset) -> Self {
        match arch {
            ArchName::FsPpoFcn => Self {
                n_steps: 5126,
                n_envs: 7,
                ent_coef: 1.07e-7,
                vf_coef: 0.356e-2,
                batch_size: 156,
                learning_rate: 2.108e-4,
                n_epochs: 30,
                clip_range: 0.482e-1,
                gae_lambda: 0.8009,
                max_grad_norm: 0.953e-1,
                gamma: 0.99,
                sde_freq: 2,
            },
            ArchName::FsPpoLstm => Self {
                n_steps: 6126,
                n_envs: 8,
                ent_coef: 2.07e-7,
                vf_coef: 1.356e-2,
                batch_size: 256,
                learning_rate: 3.108e-4,
                n_epochs: 40,
                clip_range: 0.1482,
                gae_lambda: 0.9009,
                max_grad_norm: 0.1953,
                gamma: 0.99,
                sde_freq: 3,
            },
            _ => Self {
                n_steps: 3104,
                n_envs: 8,
                ent_coef: 1.55e-2,
                vf_coef: 0.3287,
                batch_size: 64,
                learning_rate: 4.36e-4,
                n_epochs: 58,
                clip_range: 8.208e-2,
                gae_lambda: 0.9285,
                max_grad_norm: 0.6142,
                gamma: 0.99,
                sde_freq: 5,
            },
        }
    }

    pub fn validate(&self) -> Result<(), DrlError> {
        let bad = |m: &str| Err(DrlError::Config(format!("ppo: {m}")));
        if !(0.0..1.0).contains(&self.clip_range) {
            return bad("clip_range must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) || !(0.0..=1.0).contains(&self.gamma) {
            return bad("gae_lambda and gamma must lie in [0, 1]");
        }
        if self.n_steps == 0 || self.n_envs == 0 || self.batch_size == 0 || self.n_epochs == 0 {
            return bad("n_steps, n_envs, batch_size and n_epochs must be positive");
        }
        if !(self.learning_rate > 0.0 && self.max_grad_norm > 0.0) {
            return bad("learning_rate and max_grad_norm must be positive");
        }
        if !(self.ent_coef >= 0.0 && self.vf_coef >= 0.0) {
            return bad("ent_coef and vf_coef must be non-negative");
        }
        Ok(())
    }
}

/// Everything needed to build and train one architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub arch: ArchName,
    pub width: usize,
    pub depth: usize,
    pub env: EnvConfig,
    pub sac: SacConfig,
    pub ppo: PpoConfig,
    pub seed: u64,
}

impl AgentConfig {
    pub fn new(arch: ArchName, preset: Preset) -> Self {
        Self {
            arch,
            width: 256,
            depth: 2,
            env: EnvConfig::default(),
            sac: SacConfig::preset(arch, preset),
            ppo: PpoConfig::preset(arch, preset),
            seed: 0,
        }
    }
}

/// One line of the training metrics CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub global_step: u64,
    pub episodes: u64,
    /// Mean return of the last 100 finished episodes.
    pub ep_rew_mean: f64,
    pub ep_len_mean: f64,
    pub efficiency_mean: f64,
    /// Actor loss (SAC) or clipped surrogate loss (PPO).
    pub policy_loss: f64,
    /// Critic loss (SAC) or value loss (PPO).
    pub value_loss: f64,
    /// Entropy coefficient (SAC) or entropy loss (PPO).
    pub entropy_term: f64,
}

pub const METRICS_HEADER: &str = "global_step,episodes,rollout_ep_rew_mean,ep_len_mean,efficiency_mean,policy_loss,value_loss,entropy_term";

impl MetricsRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e}",
            self.global_step,
            self.episodes,
            self.ep_rew_mean,
            self.ep_len_mean,
            self.efficiency_mean,
            self.policy_loss,
            self.value_loss,
            self.entropy_term
        )
    }
}

/// Rolling window of finished episodes used in metrics rows.
#[derive(Debug, Clone, Default)]
pub(crate) struct EpisodeWindow {
    recent: VecDeque<EpisodeRecord>,
    total: u64,
}

impl EpisodeWindow {
    pub(crate) fn extend(&mut self, eps: Vec<EpisodeRecord>) {
        for e in eps {
            self.total += 1;
            self.recent.push_back(e);
            if self.recent.len() > 100 {
                self.recent.pop_front();
            }
        }
    }

    pub(crate) fn row(&self, global_step: u64, losses: [f64; 3]) -> MetricsRow {
        let n = self.recent.len() as f64;
        let mean = |f: fn(&EpisodeRecord) -> f64| {
            if n == 0.0 {
                f64::NAN
            } else {
                self.recent.iter().map(f).sum::<f64>() / n
            }
        };
        MetricsRow {
            global_step,
            episodes: self.total,
            ep_rew_mean: mean(|e| e.reward),
            ep_len_mean: mean(|e| e.length as f64),
            efficiency_mean: mean(|e| e.efficiency),
            policy_loss: losses[0],
            value_loss: losses[1],
            entropy_term: losses[2],
        }
    }
}

pub(crate) fn check_finite(step: u64, what: &str, v: f64) -> Result<f64, DrlError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(DrlError::NonFinite { step, what: what.to_string() })
    }
}

/// A built agent of either algorithm.
#[derive(Debug, Clone)]
pub enum Agent {
    Sac(SacAgent),
    Ppo(PpoAgent),
}

/// Wires observation mode, extractor and core for `cfg.arch`.
///
/// Latent architectures need the frozen encoder whose output they consume.
pub fn build_architecture(cfg: &AgentConfig, encoder: Option<Arc<FrozenEncoder>>) -> Result<Agent, DrlError> {
    cfg.env.validate()?;
    if cfg.width == 0 || cfg.depth == 0 {
        return Err(DrlError::Config("width and depth must be positive".into()));
    }
    let mode = cfg.arch.obs_mode();
    let encoder = match mode {
        ObsMode::Latent => Some(encoder.ok_or_else(|| {
            DrlError::Config(format!("{} needs a frozen encoder checkpoint", cfg.arch))
        })?),
        ObsMode::FrameStack => None,
    };
    let latent = encoder.as_ref().map_or(0, |e| e.latent_dim());
    let obs_dim = observation_dim(&cfg.env, mode, latent);
    let rest_dim = 5 * cfg.env.n_gaussian + 4;
    let path_dim = obs_dim - rest_dim;
    match cfg.arch.algo() {
        Algo::Sac => {
            cfg.sac.validate()?;
            Ok(Agent::Sac(SacAgent::new(cfg.clone(), encoder, path_dim, rest_dim)))
        }
        Algo::Ppo => {
            cfg.ppo.validate()?;
            Ok(Agent::Ppo(PpoAgent::new(cfg.clone(), encoder, path_dim, rest_dim)))
        }
    }
}

impl Agent {
    pub fn config(&self) -> &AgentConfig {
        match self {
            Agent::Sac(a) => a.config(),
            Agent::Ppo(a) => a.config(),
        }
    }

    pub fn arch(&self) -> ArchName {
        self.config().arch
    }

    pub fn encoder(&self) -> Option<&Arc<FrozenEncoder>> {
        match self {
            Agent::Sac(a) => a.encoder(),
            Agent::Ppo(a) => a.encoder(),
        }
    }

    pub fn store(&self) -> &ParamStore<f32> {
        match self {
            Agent::Sac(a) => a.store(),
            Agent::Ppo(a) => a.store(),
        }
    }

    /// Network parameters (optimizer state and the SAC temperature excluded).
    pub fn network_ids(&self) -> Vec<ParamId> {
        match self {
            Agent::Sac(a) => a.network_ids(),
            Agent::Ppo(a) => a.network_ids(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.store().count(&self.network_ids())
    }

    /// Deterministic actions for a batch of observations.
    pub fn act(&self, obs: &[Vec<f32>]) -> Vec<f64> {
        match self {
            Agent::Sac(a) => a.act_deterministic(obs),
            Agent::Ppo(a) => a.act_deterministic(obs),
        }
    }

    /// Trains for `total_steps` transitions, reporting a metrics row every
    /// `log_interval` transitions and once at the end.
    pub fn train<F: FnMut(&MetricsRow)>(&mut self, total_steps: u64, log_interval: u64, on_row: F) -> Result<(), DrlError> {
        match self {
            Agent::Sac(a) => a.train(total_steps, log_interval, on_row),
            Agent::Ppo(a) => a.train(total_steps, log_interval, on_row),
        }
    }

    /// Copies values from a checkpoint store with the same names and shapes.
    pub fn load_params(&mut self, src: &ParamStore<f32>) -> Result<(), DrlError> {
        let dst = match self {
            Agent::Sac(a) => a.store_mut(),
            Agent::Ppo(a) => a.store_mut(),
        };
        if src.len() != dst.len() {
            return Err(DrlError::Config(format!("checkpoint has {} tensors, model has {}", src.len(), dst.len())));
        }
        for p in src.params() {
            let id = dst
                .find(&p.name)
                .ok_or_else(|| DrlError::Config(format!("checkpoint tensor {} not in model", p.name)))?;
            if dst.value(id).shape() != p.value.shape() {
                return Err(DrlError::Config(format!("checkpoint tensor {} has the wrong shape", p.name)));
            }
            *dst.value_mut(id) = p.value.clone();
        }
        Ok(())
    }

    /// Evaluates the deterministic policy on `n_episodes` episodes from `seed`.
    pub fn evaluate(&self, n_episodes: usize, seed: u64) -> Result<EvalMetrics, DrlError> {
        let cfg = &self.config().env;
        evaluate_policy(cfg, self.arch().obs_mode(), self.encoder().cloned(), n_episodes, seed, |_, obs| {
            self.act(&[obs.to_vec()])[0]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rae::{RaeArch, RaeModel};

    fn encoder() -> Arc<FrozenEncoder> {
        FrozenEncoder::from_model(&RaeModel::<f32>::new(RaeArch::desk(), 0).unwrap())
    }

    #[test]
    fn names_round_trip() {
        for a in ArchName::ALL {
            assert_eq!(a.as_str().parse::<ArchName>().unwrap(), a);
        }
        assert!(matches!("FS_SAC_CONV2D".parse::<ArchName>(), Err(DrlError::Config(_))));
    }

    #[test]
    fn latent_archs_need_encoder() {
        for arch in [ArchName::LstmaeSac, ArchName::LstmaePpo] {
            let cfg = AgentConfig::new(arch, Preset::Desk);
            assert!(matches!(build_architecture(&cfg, None), Err(DrlError::Config(_))));
        }
    }

    #[test]
    fn small_parameter_counts() {
        let count = |arch| {
            let cfg = AgentConfig::new(arch, Preset::Full);
            build_architecture(&cfg, Some(encoder())).unwrap().param_count()
        };
        assert_eq!(count(ArchName::LstmaeSac), 84_994 + 4 * 84_993);
        assert_eq!(count(ArchName::FsSacFcn), 84_994 + 4 * 84_993 + 3 * (128 * 48 + 48));
        let lstm = 2 * 512 + 128 * 512 + 512;
        let actor = 152 * 256 + 256 + 256 * 256 + 256 + 2 * 257;
        let critic = 153 * 256 + 256 + 256 * 256 + 256 + 257;
        assert_eq!(count(ArchName::FsSacLstm), actor + 4 * critic + 3 * lstm);
        let ppo = |input: usize| 2 * (input * 256 + 256 + 256 * 256 + 256) + 2 * 257 + 1;
        assert_eq!(count(ArchName::LstmaePpo), ppo(72));
        assert_eq!(count(ArchName::FsPpoFcn), ppo(72) + 128 * 48 + 48);
        assert_eq!(count(ArchName::FsPpoLstm), ppo(152) + lstm);
    }

    #[test]
    fn presets_validate() {
        for a in ArchName::ALL {
            for p in [Preset::Full, Preset::Desk] {
                let c = AgentConfig::new(a, p);
                c.sac.validate().unwrap();
                c.ppo.validate().unwrap();
            }
        }
        let mut c = PpoConfig::preset(ArchName::LstmaePpo, Preset::Full);
        c.clip_range = 1.0;
        assert!(c.validate().is_err());
        c.clip_range = 0.0;
        assert!(c.validate().is_ok());
    }
}
