//! Flat `key=value` run configuration.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use searchplan::drl::{AgentConfig, ArchName, PpoConfig, Preset, SacConfig};
use searchplan::env::{EnvConfig, ThresholdMode};
use searchplan::rae::{RaeArch, RaeTrainConfig};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: expected key=value")]
    Syntax { line: usize },
    #[error("line {line}: unknown key '{key}'")]
    UnknownKey { line: usize, key: String },
    #[error("{key}: cannot use '{value}': {msg}")]
    BadValue { key: String, value: String, msg: String },
    #[error("{0}")]
    Invalid(String),
}

/// Every accepted key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("preset", "desk | full; base values before overrides (default desk)"),
    ("seed", "master seed for every random stream (default 0)"),
    ("out_dir", "output directory when --out is not given"),
    ("env.step_size", "distance flown per step, m"),
    ("env.buffer_radius", "sensor radius, m"),
    ("env.domain.x_min", "search domain lower x, m"),
    ("env.domain.y_min", "search domain lower y, m"),
    ("env.domain.x_max", "search domain upper x, m"),
    ("env.domain.y_max", "search domain upper y, m"),
    ("env.n_waypoints", "steps per episode"),
    ("env.n_gaussian", "mixture components per sampled map"),
    ("env.sigma.xx", "component covariance xx, m^2"),
    ("env.sigma.yy", "component covariance yy, m^2"),
    ("env.sigma.xy", "component covariance xy, m^2"),
    ("env.eps", "reward threshold below which a step is penalized"),
    ("env.w_oob", "out-of-bounds penalty weight"),
    ("env.w_r", "low-gain penalty weight"),
    ("env.w0", "observation weight of the first waypoint"),
    ("env.threshold", "scaled | raw; quantity compared against env.eps"),
    ("env.arc_segments", "polygon segments per full circle of the sensor disk"),
    ("env.rel_tol", "relative tolerance of the adaptive cubature"),
    ("rae.enc_hidden", "encoder LSTM width"),
    ("rae.latent", "latent size"),
    ("rae.dec_hidden", "decoder LSTM width"),
    ("rae.dec_layers", "decoder LSTM layers"),
    ("rae.learning_rate", "Adam step size"),
    ("rae.grad_clip", "global gradient-norm clip"),
    ("rae.l1_lambda", "L1 weight penalty"),
    ("rae.patience", "epochs without validation improvement before stopping"),
    ("rae.batch_size", "paths per batch"),
    ("rae.max_epochs", "epoch cap"),
    ("rae.val_fraction", "share of paths held out for validation"),
    ("policy.width", "hidden units per core layer"),
    ("policy.depth", "core hidden layers"),
    ("policy.log_interval", "environment steps between metrics rows"),
    ("sac.tau", "Polyak coefficient"),
    ("sac.n_envs", "parallel environments"),
    ("sac.train_freq", "steps per env between training phases"),
    ("sac.batch_size", "replay minibatch"),
    ("sac.buffer_size", "replay capacity"),
    ("sac.gradient_steps", "updates per training phase"),
    ("sac.learning_rate", "Adam step size"),
    ("sac.learning_starts", "random-action transitions before training"),
    ("sac.target_entropy", "entropy target of the temperature update"),
    ("sac.gamma", "discount"),
    ("sac.init_ent_coef", "initial temperature"),
    ("sac.sde_freq", "recorded only; not used"),
    ("ppo.n_steps", "rollout steps per env"),
    ("ppo.n_envs", "parallel environments"),
    ("ppo.ent_coef", "entropy bonus weight"),
    ("ppo.vf_coef", "value loss weight"),
    ("ppo.batch_size", "minibatch"),
    ("ppo.learning_rate", "Adam step size"),
    ("ppo.n_epochs", "passes over each rollout"),
    ("ppo.clip_range", "surrogate clip range"),
    ("ppo.gae_lambda", "GAE lambda"),
    ("ppo.max_grad_norm", "global gradient-norm clip"),
    ("ppo.gamma", "discount"),
    ("ppo.sde_freq", "recorded only; not used"),
];

/// `--help` text listing every key.
pub fn keys_help() -> String {
    let mut s = String::from("Config keys (file of key=value lines, '#' comments):\n");
    for (k, d) in KEYS {
        let _ = writeln!(s, "  {k:<22} {d}");
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preset: Preset,
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub env: EnvConfig,
    pub rae_arch: RaeArch,
    pub rae: RaeTrainConfig,
    pub width: usize,
    pub depth: usize,
    pub log_interval: u64,
    /// `sac.*` and `ppo.*` pairs, applied on top of the per-architecture preset.
    algo_overrides: Vec<(String, String)>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::with_preset(Preset::Desk)
    }
}

fn val<T: FromStr>(key: &str, v: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e: T::Err| ConfigError::BadValue { key: key.into(), value: v.into(), msg: e.to_string() })
}

fn apply_sac(c: &mut SacConfig, key: &str, v: &str) -> Result<bool, ConfigError> {
    match key {
        "sac.tau" => c.tau = val(key, v)?,
        "sac.n_envs" => c.n_envs = val(key, v)?,
        "sac.train_freq" => c.train_freq = val(key, v)?,
        "sac.batch_size" => c.batch_size = val(key, v)?,
        "sac.buffer_size" => c.buffer_size = val(key, v)?,
        "sac.gradient_steps" => c.gradient_steps = val(key, v)?,
        "sac.learning_rate" => c.learning_rate = val(key, v)?,
        "sac.learning_starts" => c.learning_starts = val(key, v)?,
        "sac.target_entropy" => c.target_entropy = val(key, v)?,
        "sac.gamma" => c.gamma = val(key, v)?,
        "sac.init_ent_coef" => c.init_ent_coef = val(key, v)?,
        "sac.sde_freq" => c.sde_freq = val(key, v)?,
        _ => return Ok(false),
    }
    Ok(true)
}

fn apply_ppo(c: &mut PpoConfig, key: &str, v: &str) -> Result<bool, ConfigError> {
    match key {
        "ppo.n_steps" => c.n_steps = val(key, v)?,
        "ppo.n_envs" => c.n_envs = val(key, v)?,
        "ppo.ent_coef" => c.ent_coef = val(key, v)?,
        "ppo.vf_coef" => c.vf_coef = val(key, v)?,
        "ppo.batch_size" => c.batch_size = val(key, v)?,
        "ppo.learning_rate" => c.learning_rate = val(key, v)?,
        "ppo.n_epochs" => c.n_epochs = val(key, v)?,
        "ppo.clip_range" => c.clip_range = val(key, v)?,
        "ppo.gae_lambda" => c.gae_lambda = val(key, v)?,
        "ppo.max_grad_norm" => c.max_grad_norm = val(key, v)?,
        "ppo.gamma" => c.gamma = val(key, v)?,
        "ppo.sde_freq" => c.sde_freq = val(key, v)?,
        _ => return Ok(false),
    }
    Ok(true)
}

impl RunConfig {
    pub fn with_preset(preset: Preset) -> Self {
        let (rae_arch, rae) = match preset {
            Preset::Full => (RaeArch::full(), RaeTrainConfig::default()),
            Preset::Desk => (RaeArch::desk(), RaeTrainConfig::desk()),
        };
        Self {
            preset,
            seed: 0,
            out_dir: None,
            env: EnvConfig::default(),
            rae_arch,
            rae,
            width: 256,
            depth: 2,
            log_interval: 1000,
            algo_overrides: Vec::new(),
        }
    }

    /// Parses a document. `preset` is applied first wherever it appears;
    /// later lines override earlier ones.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut pairs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.iter().any(|(name, _)| *name == k) {
                return Err(ConfigError::UnknownKey { line: i + 1, key: k.into() });
            }
            pairs.push((k.to_string(), v.to_string()));
        }
        let preset = match pairs.iter().rev().find(|(k, _)| k == "preset") {
            Some((k, v)) => val::<Preset>(k, v)?,
            None => Preset::Desk,
        };
        let mut cfg = Self::with_preset(preset);
        for (k, v) in &pairs {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one key; `preset` is accepted only when it matches.
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), ConfigError> {
        let env = &mut self.env;
        match key {
            "preset" => {
                if val::<Preset>(key, v)? != self.preset {
                    return Err(ConfigError::Invalid("preset can only be chosen when the config is created".into()));
                }
            }
            "seed" => self.seed = val(key, v)?,
            "out_dir" => self.out_dir = Some(PathBuf::from(v)),
            "env.step_size" => env.step_size = val(key, v)?,
            "env.buffer_radius" => env.buffer_radius = val(key, v)?,
            "env.domain.x_min" => env.domain.x_min = val(key, v)?,
            "env.domain.y_min" => env.domain.y_min = val(key, v)?,
            "env.domain.x_max" => env.domain.x_max = val(key, v)?,
            "env.domain.y_max" => env.domain.y_max = val(key, v)?,
            "env.n_waypoints" => env.n_waypoints = val(key, v)?,
            "env.n_gaussian" => env.n_gaussian = val(key, v)?,
            "env.sigma.xx" => env.sigma.xx = val(key, v)?,
            "env.sigma.yy" => env.sigma.yy = val(key, v)?,
            "env.sigma.xy" => env.sigma.xy = val(key, v)?,
            "env.eps" => env.eps = val(key, v)?,
            "env.w_oob" => env.w_oob = val(key, v)?,
            "env.w_r" => env.w_r = val(key, v)?,
            "env.w0" => env.w0 = val(key, v)?,
            "env.threshold" => {
                env.threshold = match v {
                    "scaled" => ThresholdMode::Scaled,
                    "raw" => ThresholdMode::Raw,
                    _ => {
                        return Err(ConfigError::BadValue { key: key.into(), value: v.into(), msg: "expected scaled or raw".into() })
                    }
                }
            }
            "env.arc_segments" => env.arc_segments = val(key, v)?,
            "env.rel_tol" => env.rel_tol = val(key, v)?,
            "rae.enc_hidden" => self.rae_arch.enc_hidden = val(key, v)?,
            "rae.latent" => self.rae_arch.latent = val(key, v)?,
            "rae.dec_hidden" => self.rae_arch.dec_hidden = val(key, v)?,
            "rae.dec_layers" => self.rae_arch.dec_layers = val(key, v)?,
            "rae.learning_rate" => self.rae.learning_rate = val(key, v)?,
            "rae.grad_clip" => self.rae.grad_clip = val(key, v)?,
            "rae.l1_lambda" => self.rae.l1_lambda = val(key, v)?,
            "rae.patience" => self.rae.patience = val(key, v)?,
            "rae.batch_size" => self.rae.batch_size = val(key, v)?,
            "rae.max_epochs" => self.rae.max_epochs = val(key, v)?,
            "rae.val_fraction" => self.rae.val_fraction = val(key, v)?,
            "policy.width" => self.width = val(key, v)?,
            "policy.depth" => self.depth = val(key, v)?,
            "policy.log_interval" => self.log_interval = val(key, v)?,
            _ if key.starts_with("sac.") || key.starts_with("ppo.") => {
                // check name and value against a scratch config now
                let mut sac = SacConfig::preset(ArchName::LstmaeSac, self.preset);
                let mut ppo = PpoConfig::preset(ArchName::LstmaePpo, self.preset);
                if !(apply_sac(&mut sac, key, v)? || apply_ppo(&mut ppo, key, v)?) {
                    return Err(ConfigError::UnknownKey { line: 0, key: key.into() });
                }
                self.algo_overrides.retain(|(k, _)| k != key);
                self.algo_overrides.push((key.into(), v.into()));
            }
            _ => return Err(ConfigError::UnknownKey { line: 0, key: key.into() }),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.env.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.width == 0 || self.depth == 0 || self.log_interval == 0 {
            return Err(ConfigError::Invalid("policy.width, policy.depth and policy.log_interval must be positive".into()));
        }
        if self.rae_arch.enc_hidden == 0 || self.rae_arch.latent == 0 || self.rae_arch.dec_hidden == 0 || self.rae_arch.dec_layers == 0 {
            return Err(ConfigError::Invalid("rae sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.rae.val_fraction) {
            return Err(ConfigError::Invalid("rae.val_fraction must lie in [0, 1)".into()));
        }
        for arch in ArchName::ALL {
            let a = self.agent(arch)?;
            a.sac.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
            a.ppo.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        Ok(())
    }

    /// Agent settings for `arch`: preset values, then overrides.
    pub fn agent(&self, arch: ArchName) -> Result<AgentConfig, ConfigError> {
        let mut a = AgentConfig::new(arch, self.preset);
        a.width = self.width;
        a.depth = self.depth;
        a.env = self.env.clone();
        a.seed = self.seed;
        for (k, v) in &self.algo_overrides {
            if !apply_sac(&mut a.sac, k, v)? {
                apply_ppo(&mut a.ppo, k, v)?;
            }
        }
        Ok(a)
    }

    /// Resolved document. With `arch`, the `sac.*`/`ppo.*` lines show that
    /// architecture's values; without, only explicit overrides appear.
    pub fn to_text(&self, arch: Option<ArchName>) -> String {
        let e = &self.env;
        let preset = match self.preset {
            Preset::Full => "full",
            Preset::Desk => "desk",
        };
        let mut s = format!("preset={preset}\nseed={}\n", self.seed);
        if let Some(d) = &self.out_dir {
            let _ = writeln!(s, "out_dir={}", d.display());
        }
        let threshold = match e.threshold {
            ThresholdMode::Scaled => "scaled",
            ThresholdMode::Raw => "raw",
        };
        let lines: Vec<(&str, String)> = vec![
            ("env.step_size", e.step_size.to_string()),
            ("env.buffer_radius", e.buffer_radius.to_string()),
            ("env.domain.x_min", e.domain.x_min.to_string()),
            ("env.domain.y_min", e.domain.y_min.to_string()),
            ("env.domain.x_max", e.domain.x_max.to_string()),
            ("env.domain.y_max", e.domain.y_max.to_string()),
            ("env.n_waypoints", e.n_waypoints.to_string()),
            ("env.n_gaussian", e.n_gaussian.to_string()),
            ("env.sigma.xx", e.sigma.xx.to_string()),
            ("env.sigma.yy", e.sigma.yy.to_string()),
            ("env.sigma.xy", e.sigma.xy.to_string()),
            ("env.eps", e.eps.to_string()),
            ("env.w_oob", e.w_oob.to_string()),
            ("env.w_r", e.w_r.to_string()),
            ("env.w0", e.w0.to_string()),
            ("env.threshold", threshold.to_string()),
            ("env.arc_segments", e.arc_segments.to_string()),
            ("env.rel_tol", e.rel_tol.to_string()),
            ("rae.enc_hidden", self.rae_arch.enc_hidden.to_string()),
            ("rae.latent", self.rae_arch.latent.to_string()),
            ("rae.dec_hidden", self.rae_arch.dec_hidden.to_string()),
            ("rae.dec_layers", self.rae_arch.dec_layers.to_string()),
            ("rae.learning_rate", self.rae.learning_rate.to_string()),
            ("rae.grad_clip", self.rae.grad_clip.to_string()),
            ("rae.l1_lambda", self.rae.l1_lambda.to_string()),
            ("rae.patience", self.rae.patience.to_string()),
            ("rae.batch_size", self.rae.batch_size.to_string()),
            ("rae.max_epochs", self.rae.max_epochs.to_string()),
            ("rae.val_fraction", self.rae.val_fraction.to_string()),
            ("policy.width", self.width.to_string()),
            ("policy.depth", self.depth.to_string()),
            ("policy.log_interval", self.log_interval.to_string()),
        ];
        for (k, v) in lines {
            let _ = writeln!(s, "{k}={v}");
        }
        match arch.map(|a| self.agent(a)) {
            Some(Ok(a)) => {
                let c = &a.sac;
                for (k, v) in [
                    ("sac.tau", c.tau.to_string()),
                    ("sac.n_envs", c.n_envs.to_string()),
                    ("sac.train_freq", c.train_freq.to_string()),
                    ("sac.batch_size", c.batch_size.to_string()),
                    ("sac.buffer_size", c.buffer_size.to_string()),
                    ("sac.gradient_steps", c.gradient_steps.to_string()),
                    ("sac.learning_rate", c.learning_rate.to_string()),
                    ("sac.learning_starts", c.learning_starts.to_string()),
                    ("sac.target_entropy", c.target_entropy.to_string()),
                    ("sac.gamma", c.gamma.to_string()),
                    ("sac.init_ent_coef", c.init_ent_coef.to_string()),
                    ("sac.sde_freq", c.sde_freq.to_string()),
                ] {
                    let _ = writeln!(s, "{k}={v}");
                }
                let p = &a.ppo;
                for (k, v) in [
                    ("ppo.n_steps", p.n_steps.to_string()),
                    ("ppo.n_envs", p.n_envs.to_string()),
                    ("ppo.ent_coef", p.ent_coef.to_string()),
                    ("ppo.vf_coef", p.vf_coef.to_string()),
                    ("ppo.batch_size", p.batch_size.to_string()),
                    ("ppo.learning_rate", p.learning_rate.to_string()),
                    ("ppo.n_epochs", p.n_epochs.to_string()),
                    ("ppo.clip_range", p.clip_range.to_string()),
                    ("ppo.gae_lambda", p.gae_lambda.to_string()),
                    ("ppo.max_grad_norm", p.max_grad_norm.to_string()),
                    ("ppo.gamma", p.gamma.to_string()),
                    ("ppo.sde_freq", p.sde_freq.to_string()),
                ] {
                    let _ = writeln!(s, "{k}={v}");
                }
            }
            _ => {
                for (k, v) in &self.algo_overrides {
                    let _ = writeln!(s, "{k}={v}");
                }
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(RunConfig::parse("seed=1\nenv.stepsize=3"), Err(ConfigError::UnknownKey { line: 2, .. })));
        assert!(matches!(RunConfig::parse("nonsense"), Err(ConfigError::Syntax { line: 1 })));
        assert!(matches!(RunConfig::parse("seed=-1"), Err(ConfigError::BadValue { .. })));
        assert!(matches!(RunConfig::parse("env.step_size=-8"), Err(ConfigError::Invalid(_))));
        assert!(matches!(RunConfig::parse("ppo.clip_range=1.5"), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn preset_then_overrides() {
        let c = RunConfig::parse("# comment\nsac.tau = 0.5\npreset=full\nenv.eps=0.2\n").unwrap();
        assert_eq!(c.preset, Preset::Full);
        assert_eq!(c.env.eps, 0.2);
        assert_eq!(c.rae_arch, RaeArch::full());
        let a = c.agent(ArchName::LstmaeSac).unwrap();
        assert_eq!((a.sac.tau, a.sac.gradient_steps), (0.5, 100));
        let fs = c.agent(ArchName::FsSacFcn).unwrap();
        assert_eq!((fs.sac.tau, fs.sac.batch_size), (0.5, 1024));
    }

    #[test]
    fn full_preset_is_representable() {
        let c = RunConfig::with_preset(Preset::Full);
        let a = c.agent(ArchName::LstmaeSac).unwrap();
        assert_eq!((a.sac.learning_rate, a.sac.learning_starts, a.sac.sde_freq), (5.9174e-6, 6547, 4));
        let p = c.agent(ArchName::FsPpoFcn).unwrap().ppo;
        assert_eq!((p.n_steps, p.n_envs, p.clip_range), (5126, 7, 0.0482));
        let big = RunConfig::parse("preset=full\npolicy.width=2000").unwrap();
        assert_eq!(big.agent(ArchName::LstmaeSac).unwrap().width, 2000);
    }

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::with_preset(Preset::Desk);
        c.set("sac.batch_size", "64").unwrap();
        c.set("env.threshold", "raw").unwrap();
        c.seed = 17;
        for arch in [None, Some(ArchName::FsPpoLstm)] {
            let back = RunConfig::parse(&c.to_text(arch)).unwrap();
            let a = arch.unwrap_or(ArchName::FsSacFcn);
            assert_eq!(back.agent(a).unwrap(), c.agent(a).unwrap());
            assert_eq!(back.env, c.env);
            assert_eq!(back.rae, c.rae);
        }
    }

    #[test]
    fn help_lists_every_key() {
        let h = keys_help();
        assert!(KEYS.iter().all(|(k, _)| h.contains(k)));
    }
}
