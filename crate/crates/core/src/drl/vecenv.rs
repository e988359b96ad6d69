use std::sync::Arc;

use crate::autodiff::Tensor;
use crate::env::{EnvConfig, EnvError, ObsMode, SearchEnv};
use crate::rae::FrozenEncoder;

use super::DrlError;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub env_id: usize,
    pub episode: u64,
    pub obs: Vec<f32>,
    pub action: f64,
    pub reward: f64,
    /// Terminal observation when `done`.
    pub next_obs: Vec<f32>,
    pub done: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeRecord {
    pub env_id: usize,
    pub episode: u64,
    pub reward: f64,
    pub length: usize,
    pub efficiency: f64,
}

/// `n` environments stepped in lockstep, in env-id order. Worker `i` draws
/// its episodes from seed stream `i`.
#[derive(Debug, Clone)]
pub struct VecEnv {
    envs: Vec<SearchEnv>,
    obs: Vec<Vec<f32>>,
    ep_reward: Vec<f64>,
    finished: Vec<EpisodeRecord>,
}

impl VecEnv {
    pub fn new(cfg: &EnvConfig, mode: ObsMode, encoder: Option<Arc<FrozenEncoder>>, n: usize) -> Result<Self, EnvError> {
        if n == 0 {
            return Err(EnvError::Config("at least one environment is required".into()));
        }
        let envs = (0..n)
            .map(|i| SearchEnv::new(cfg.clone(), mode, encoder.clone(), i as u64))
            .collect::<Result<Vec<_>, _>>()?;
        let obs = envs.iter().map(SearchEnv::observe).collect();
        Ok(Self { envs, obs, ep_reward: vec![0.0; n], finished: Vec::new() })
    }

    pub fn len(&self) -> usize {
        self.envs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envs.is_empty()
    }

    pub fn obs_dim(&self) -> usize {
        self.envs[0].observation_dim()
    }

    pub fn observations(&self) -> &[Vec<f32>] {
        &self.obs
    }

    pub fn envs(&self) -> &[SearchEnv] {
        &self.envs
    }

    /// Steps every env with its action (clipped to `[-1, 1]`), restarting
    /// finished episodes in place.
    pub fn step(&mut self, actions: &[f64]) -> Result<Vec<Transition>, EnvError> {
        assert_eq!(actions.len(), self.envs.len(), "one action per env");
        let mut out = Vec::with_capacity(actions.len());
        for (i, env) in self.envs.iter_mut().enumerate() {
            let a = actions[i].clamp(-1.0, 1.0);
            let episode = env.episode();
            let (next, o) = env.step(a)?;
            self.ep_reward[i] += o.reward;
            let obs = std::mem::replace(&mut self.obs[i], next.clone());
            if o.done {
                self.finished.push(EpisodeRecord {
                    env_id: i,
                    episode,
                    reward: self.ep_reward[i],
                    length: env.state().t,
                    efficiency: env.state().efficiency(),
                });
                self.ep_reward[i] = 0.0;
                self.obs[i] = env.reset()?;
            }
            out.push(Transition { env_id: i, episode, obs, action: a, reward: o.reward, next_obs: next, done: o.done });
        }
        Ok(out)
    }

    /// Episodes completed since the last call.
    pub fn drain_finished(&mut self) -> Vec<EpisodeRecord> {
        std::mem::take(&mut self.finished)
    }
}

/// Row-stacks equal-length observations.
pub fn stack(rows: &[Vec<f32>]) -> Tensor<f32> {
    let cols = rows.first().map_or(0, Vec::len);
    let mut v = Vec::with_capacity(rows.len() * cols);
    for r in rows {
        assert_eq!(r.len(), cols, "ragged observations");
        v.extend_from_slice(r);
    }
    Tensor::new(rows.len(), cols, v)
}

/// Runs `steps` lockstep steps with `policy` choosing one action per env.
pub fn collect_rollouts<F>(venv: &mut VecEnv, steps: usize, mut policy: F) -> Result<Vec<Transition>, DrlError>
where
    F: FnMut(&[Vec<f32>]) -> Vec<f64>,
{
    let mut out = Vec::with_capacity(steps * venv.len());
    for _ in 0..steps {
        let actions = policy(venv.observations());
        out.extend(venv.step(&actions)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeMetrics {
    pub length: usize,
    pub total_reward: f64,
    pub mean_step_reward: f64,
    pub efficiency: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalMetrics {
    pub episodes: Vec<EpisodeMetrics>,
    pub mean_step_reward: f64,
    pub std_step_reward: f64,
    pub mean_episode_length: f64,
    pub mean_efficiency: f64,
    pub max_efficiency: f64,
}

impl EvalMetrics {
    fn from_episodes(episodes: Vec<EpisodeMetrics>) -> Result<Self, DrlError> {
        if episodes.is_empty() {
            return Err(DrlError::EmptyMetrics);
        }
        let n = episodes.len() as f64;
        let mean = |f: &dyn Fn(&EpisodeMetrics) -> f64| episodes.iter().map(f).sum::<f64>() / n;
        let mean_step_reward = mean(&|e| e.mean_step_reward);
        let var = episodes.iter().map(|e| (e.mean_step_reward - mean_step_reward).powi(2)).sum::<f64>() / n;
        Ok(Self {
            mean_step_reward,
            std_step_reward: var.sqrt(),
            mean_episode_length: mean(&|e| e.length as f64),
            mean_efficiency: mean(&|e| e.efficiency),
            max_efficiency: episodes.iter().map(|e| e.efficiency).fold(f64::NEG_INFINITY, f64::max),
            episodes,
        })
    }

    pub fn episodes_csv(&self) -> String {
        let mut s = String::from("episode,length,total_reward,mean_step_reward,efficiency\n");
        for (k, e) in self.episodes.iter().enumerate() {
            s.push_str(&format!("{k},{},{},{},{}\n", e.length, e.total_reward, e.mean_step_reward, e.efficiency));
        }
        s
    }
}

/// Plays `n_episodes` episodes drawn from `seed`, one after another, with
/// `act` choosing each action from the env and its observation.
pub fn evaluate_policy<F>(
    cfg: &EnvConfig,
    mode: ObsMode,
    encoder: Option<Arc<FrozenEncoder>>,
    n_episodes: usize,
    seed: u64,
    act: F,
) -> Result<EvalMetrics, DrlError>
where
    F: FnMut(&SearchEnv, &[f32]) -> f64,
{
    evaluate_policy_observed(cfg, mode, encoder, n_episodes, seed, act, |_, _| {})
}

/// [`evaluate_policy`] that also hands each finished episode, with its
/// index, to `on_end` before the env restarts.
pub fn evaluate_policy_observed<F, G>(
    cfg: &EnvConfig,
    mode: ObsMode,
    encoder: Option<Arc<FrozenEncoder>>,
    n_episodes: usize,
    seed: u64,
    mut act: F,
    mut on_end: G,
) -> Result<EvalMetrics, DrlError>
where
    F: FnMut(&SearchEnv, &[f32]) -> f64,
    G: FnMut(usize, &SearchEnv),
{
    if n_episodes == 0 {
        return Err(DrlError::EmptyMetrics);
    }
    let cfg = EnvConfig { seed, ..cfg.clone() };
    let mut env = SearchEnv::new(cfg, mode, encoder, 0)?;
    let mut obs = env.observe();
    let mut episodes = Vec::with_capacity(n_episodes);
    for k in 0..n_episodes {
        if k > 0 {
            obs = env.reset()?;
        }
        let mut total = 0.0;
        loop {
            let a = act(&env, &obs).clamp(-1.0, 1.0);
            let (next, o) = env.step(a)?;
            total += o.reward;
            obs = next;
            if o.done {
                break;
            }
        }
        on_end(k, &env);
        let length = env.state().t;
        episodes.push(EpisodeMetrics {
            length,
            total_reward: total,
            mean_step_reward: total / length as f64,
            efficiency: env.state().efficiency(),
        });
    }
    EvalMetrics::from_episodes(episodes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> EnvConfig {
        EnvConfig { seed: 9, ..EnvConfig::default() }
    }

    #[test]
    fn single_env_matches_direct_stepping() {
        let mut venv = VecEnv::new(&cfg(), ObsMode::FrameStack, None, 1).unwrap();
        let actions = [0.3, -0.2, 0.9, 0.1, -0.7];
        let tr = collect_rollouts(&mut venv, actions.len(), {
            let mut k = 0;
            move |_| {
                k += 1;
                vec![actions[k - 1]]
            }
        })
        .unwrap();
        let mut env = SearchEnv::new(cfg(), ObsMode::FrameStack, None, 0).unwrap();
        for (t, a) in tr.iter().zip(actions) {
            let obs = env.observe();
            let (next, o) = env.step(a).unwrap();
            assert_eq!((t.obs.clone(), t.next_obs.clone(), t.reward, t.done), (obs, next, o.reward, o.done));
        }
    }

    #[test]
    fn episodes_restart_within_worker() {
        let mut venv = VecEnv::new(&cfg(), ObsMode::FrameStack, None, 2).unwrap();
        // heading straight right leaves the domain within 19 steps
        let tr = collect_rollouts(&mut venv, 40, |obs| vec![-1.0; obs.len()]).unwrap();
        let done: Vec<_> = tr.iter().filter(|t| t.done).collect();
        assert!(done.len() >= 2);
        for d in &done {
            let after = tr.iter().find(|t| t.env_id == d.env_id && t.episode == d.episode + 1);
            if let Some(t) = after {
                assert_eq!(t.obs[2 * 64 + 20 + 3], 0.0, "fresh episode starts at step 0");
            }
        }
        let eps = venv.drain_finished();
        assert_eq!(eps.len(), done.len());
        assert!(eps.iter().all(|e| e.length <= 64 && (0.0..=1.0).contains(&e.efficiency)));
    }

    #[test]
    fn rollouts_are_deterministic() {
        let run = || {
            let mut venv = VecEnv::new(&cfg(), ObsMode::FrameStack, None, 8).unwrap();
            let mut k = 0u32;
            collect_rollouts(&mut venv, 30, |obs| {
                k += 1;
                (0..obs.len()).map(|i| (k as f64 * 0.37 + i as f64).sin()).collect()
            })
            .unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn evaluation_metrics() {
        assert!(matches!(
            evaluate_policy(&cfg(), ObsMode::FrameStack, None, 0, 1, |_, _| 0.0),
            Err(DrlError::EmptyMetrics)
        ));
        let m = evaluate_policy(&cfg(), ObsMode::FrameStack, None, 5, 1, |_, _| 0.5).unwrap();
        assert_eq!(m.episodes.len(), 5);
        assert!(m.mean_episode_length <= 64.0);
        assert!(m.max_efficiency >= m.mean_efficiency);
        assert!(m.episodes.iter().all(|e| (0.0..=1.0).contains(&e.efficiency)));
        let again = evaluate_policy(&cfg(), ObsMode::FrameStack, None, 5, 1, |_, _| 0.5).unwrap();
        assert_eq!(m, again);
    }
}
