use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{clip_grad_norm, Adam, Graph, ParamId, ParamStore, Tensor};
use crate::env::EnvConfig;
use crate::rae::FrozenEncoder;

use super::nets::{ActorCritic, Extractor};
use super::vecenv::{stack, VecEnv};
use super::{check_finite, AgentConfig, DrlError, EpisodeWindow, MetricsRow};

const ACTION_DIM: usize = 1;

/// Mean losses over the minibatches of the last update.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PpoLosses {
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
}

/// GAE(λ) advantages and returns for a rollout stored step-major
/// (`index = step * n_envs + env`). `dones[i]` marks that the transition at
/// `i` ended its episode; `last_values` are the values of the observations
/// after the final step.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_values: &[f64],
    n_envs: usize,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    assert!(n.is_multiple_of(n_envs) && values.len() == n && dones.len() == n && last_values.len() == n_envs);
    let steps = n / n_envs;
    let mut adv = vec![0.0; n];
    for e in 0..n_envs {
        let mut gae = 0.0;
        for t in (0..steps).rev() {
            let i = t * n_envs + e;
            let next_value = if t + 1 == steps { last_values[e] } else { values[i + n_envs] };
            let cont = if dones[i] { 0.0 } else { 1.0 };
            let delta = rewards[i] + gamma * next_value * cont - values[i];
            gae = delta + gamma * lambda * cont * gae;
            adv[i] = gae;
        }
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// Shifts and scales to mean 0 and (population) std 1; a batch without
/// spread becomes all zeros.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let std = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
    for a in adv.iter_mut() {
        *a = if std > 1e-12 { (*a - mean) / std } else { 0.0 };
    }
}

#[derive(Debug, Clone, Default)]
struct Rollout {
    obs: Vec<Vec<f32>>,
    actions: Vec<f32>,
    log_probs: Vec<f64>,
    values: Vec<f64>,
    rewards: Vec<f64>,
    dones: Vec<bool>,
}

/// Proximal policy optimization with a clipped surrogate objective.
#[derive(Debug, Clone)]
pub struct PpoAgent {
    cfg: AgentConfig,
    encoder: Option<Arc<FrozenEncoder>>,
    store: ParamStore<f32>,
    policy: ActorCritic,
    opt: Adam<f32>,
    rng: ChaCha8Rng,
    n_updates: u64,
}

impl PpoAgent {
    pub(crate) fn new(cfg: AgentConfig, encoder: Option<Arc<FrozenEncoder>>, path_dim: usize, rest_dim: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut store = ParamStore::new();
        let ext = Extractor::new(&mut store, "ext", cfg.arch.extractor(), path_dim, rest_dim, &mut rng);
        let policy = ActorCritic::new(&mut store, ext, cfg.width, cfg.depth, ACTION_DIM, &mut rng);
        let opt = Adam::new(&store, &policy.ids(), cfg.ppo.learning_rate);
        Self { cfg, encoder, store, policy, opt, rng, n_updates: 0 }
    }

    pub fn config(&self) -> &AgentConfig {
        &self.cfg
    }

    pub fn encoder(&self) -> Option<&Arc<FrozenEncoder>> {
        self.encoder.as_ref()
    }

    pub fn store(&self) -> &ParamStore<f32> {
        &self.store
    }

    pub(crate) fn store_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.store
    }

    pub fn network_ids(&self) -> Vec<ParamId> {
        self.policy.ids()
    }

    pub fn log_std(&self) -> f64 {
        self.store.value(self.policy.log_std).data()[0] as f64
    }

    /// Policy means, clipped to the action range.
    pub fn act_deterministic(&self, obs: &[Vec<f32>]) -> Vec<f64> {
        let (mean, _) = self.evaluate_obs(obs);
        mean.into_iter().map(|m| m.clamp(-1.0, 1.0)).collect()
    }

    /// Means and values of a batch under the current parameters.
    pub fn evaluate_obs(&self, obs: &[Vec<f32>]) -> (Vec<f64>, Vec<f64>) {
        let mut g = Graph::new(&self.store);
        let o = g.constant(stack(obs));
        let (mu, v) = self.policy.forward(&mut g, o, true);
        let f = |t: &Tensor<f32>| t.data().iter().map(|&x| x as f64).collect();
        (f(g.value(mu)), f(g.value(v)))
    }

    /// Sampled actions, values and log-probabilities. The log-probabilities
    /// use the same graph arithmetic as the update, so an unchanged policy
    /// gives a ratio of exactly 1.
    fn sample(&mut self, obs: &[Vec<f32>]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let sd = self.log_std().exp();
        let mut g = Graph::new(&self.store);
        let o = g.constant(stack(obs));
        let (mu, v) = self.policy.forward(&mut g, o, true);
        let actions: Vec<f32> = g
            .value(mu)
            .data()
            .iter()
            .map(|&m| (m as f64 + sd * self.rng.sample::<f64, _>(StandardNormal)) as f32)
            .collect();
        let a = g.constant(Tensor::new(actions.len(), ACTION_DIM, actions.clone()));
        let lp = self.policy.log_prob(&mut g, mu, a, true);
        let f = |t: &Tensor<f32>| t.data().iter().map(|&x| x as f64).collect();
        (actions.iter().map(|&x| x as f64).collect(), f(g.value(v)), f(g.value(lp)))
    }

    fn update(&mut self, ro: &Rollout, advantages: &[f64], returns: &[f64]) -> Result<PpoLosses, DrlError> {
        let ppo = self.cfg.ppo.clone();
        let n = ro.actions.len();
        let mut order: Vec<usize> = (0..n).collect();
        let mut sums = PpoLosses::default();
        let mut batches = 0usize;
        let ids = self.policy.ids();
        for _ in 0..ppo.n_epochs {
            order.shuffle(&mut self.rng);
            for chunk in order.chunks(ppo.batch_size) {
                let b = chunk.len();
                let mut adv: Vec<f64> = chunk.iter().map(|&i| advantages[i]).collect();
                if b > 1 {
                    normalize_advantages(&mut adv);
                }
                let obs = Tensor::new(b, ro.obs[0].len(), chunk.iter().flat_map(|&i| ro.obs[i].iter().copied()).collect());
                let col = |f: &dyn Fn(usize) -> f64| Tensor::<f32>::new(b, 1, chunk.iter().map(|&i| f(i) as f32).collect());
                let acts = col(&|i| ro.actions[i] as f64);
                let old = col(&|i| ro.log_probs[i]);
                let ret = col(&|i| returns[i]);
                let advt = Tensor::<f32>::new(b, 1, adv.iter().map(|&a| a as f32).collect());
                let (losses, grads) = {
                    let mut g = Graph::new(&self.store);
                    let o = g.constant(obs);
                    let (mu, v) = self.policy.forward(&mut g, o, false);
                    let a = g.constant(acts);
                    let lp = self.policy.log_prob(&mut g, mu, a, false);
                    let old = g.constant(old);
                    let d = g.sub(lp, old);
                    let ratio = g.exp(d);
                    let advv = g.constant(advt);
                    let s1 = g.mul(advv, ratio);
                    let clipped = g.clamp(ratio, 1.0 - ppo.clip_range, 1.0 + ppo.clip_range);
                    let s2 = g.mul(advv, clipped);
                    let m = g.minimum(s1, s2);
                    let pg = g.mean(m);
                    let pg = g.scale(pg, -1.0);
                    let ret = g.constant(ret);
                    let vl = g.mse(v, ret);
                    let ent = self.policy.entropy(&mut g);
                    let ent_loss = g.scale(ent, -1.0);
                    let e_term = g.scale(ent_loss, ppo.ent_coef);
                    let v_term = g.scale(vl, ppo.vf_coef);
                    let total = g.add(pg, e_term);
                    let total = g.add(total, v_term);
                    let clip_frac = g
                        .value(ratio)
                        .data()
                        .iter()
                        .filter(|r| (**r as f64 - 1.0).abs() > ppo.clip_range)
                        .count() as f64
                        / b as f64;
                    let item = |x| g.value(x).item() as f64;
                    let losses = PpoLosses { policy: item(pg), value: item(vl), entropy: item(ent_loss), clip_fraction: clip_frac };
                    check_finite(self.n_updates, "ppo loss", item(total))?;
                    (losses, g.backward(total))
                };
                self.store.accumulate(&grads?);
                clip_grad_norm(&mut self.store, &ids, ppo.max_grad_norm);
                self.opt.step(&mut self.store);
                self.n_updates += 1;
                sums.policy += losses.policy;
                sums.value += losses.value;
                sums.entropy += losses.entropy;
                sums.clip_fraction += losses.clip_fraction;
                batches += 1;
            }
        }
        let k = batches.max(1) as f64;
        Ok(PpoLosses {
            policy: sums.policy / k,
            value: sums.value / k,
            entropy: sums.entropy / k,
            clip_fraction: sums.clip_fraction / k,
        })
    }

    pub fn train<F: FnMut(&MetricsRow)>(&mut self, total_steps: u64, log_interval: u64, mut on_row: F) -> Result<(), DrlError> {
        let ppo = self.cfg.ppo.clone();
        let env_cfg = EnvConfig { seed: self.cfg.seed, ..self.cfg.env.clone() };
        let mut venv = VecEnv::new(&env_cfg, self.cfg.arch.obs_mode(), self.encoder.clone(), ppo.n_envs)?;
        let mut window = EpisodeWindow::default();
        let mut losses = PpoLosses::default();
        let mut steps = 0u64;
        let mut next_log = log_interval.max(1);
        while steps < total_steps {
            let mut ro = Rollout::default();
            for _ in 0..ppo.n_steps {
                let obs = venv.observations().to_vec();
                let (actions, values, logp) = self.sample(&obs);
                let trans = venv.step(&actions)?;
                window.extend(venv.drain_finished());
                for (k, t) in trans.into_iter().enumerate() {
                    ro.obs.push(t.obs);
                    ro.actions.push(actions[k] as f32);
                    ro.log_probs.push(logp[k]);
                    ro.values.push(values[k]);
                    ro.rewards.push(t.reward);
                    ro.dones.push(t.done);
                }
                steps += venv.len() as u64;
                if steps >= next_log && steps < total_steps {
                    on_row(&window.row(steps, [losses.policy, losses.value, losses.entropy]));
                    while next_log <= steps {
                        next_log += log_interval.max(1);
                    }
                }
                if steps >= total_steps {
                    break;
                }
            }
            let (_, last_values) = self.evaluate_obs(venv.observations());
            let (adv, ret) = compute_gae(&ro.rewards, &ro.values, &ro.dones, &last_values, ppo.n_envs, ppo.gamma, ppo.gae_lambda);
            losses = self.update(&ro, &adv, &ret)?;
        }
        on_row(&window.row(steps, [losses.policy, losses.value, losses.entropy]));
        Ok(())
    }
}
