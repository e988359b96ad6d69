use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Adam, Graph, ParamId, ParamStore, Tensor};
use crate::rae::FrozenEncoder;

use super::buffer::{Batch, ReplayBuffer};
use super::nets::{Extractor, SacActor, TwinCritic};
use super::vecenv::{stack, VecEnv};
use super::{check_finite, AgentConfig, DrlError, EpisodeWindow, MetricsRow};

const ACTION_DIM: usize = 1;

/// Losses of the last gradient step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SacLosses {
    pub actor: f64,
    pub critic: f64,
    pub ent_coef: f64,
    pub ent_coef_loss: f64,
}

/// Soft actor-critic with twin critics, Polyak-averaged targets and a
/// learned entropy temperature.
#[derive(Debug, Clone)]
pub struct SacAgent {
    cfg: AgentConfig,
    encoder: Option<Arc<FrozenEncoder>>,
    store: ParamStore<f32>,
    actor: SacActor,
    critic: TwinCritic,
    target: TwinCritic,
    log_alpha: ParamId,
    actor_opt: Adam<f32>,
    critic_opt: Adam<f32>,
    alpha_opt: Adam<f32>,
    buffer: ReplayBuffer,
    rng: ChaCha8Rng,
    n_updates: u64,
}

fn normal(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor<f32> {
    Tensor::new(rows, cols, (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect())
}

impl SacAgent {
    pub(crate) fn new(cfg: AgentConfig, encoder: Option<Arc<FrozenEncoder>>, path_dim: usize, rest_dim: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut store = ParamStore::new();
        let kind = cfg.arch.extractor();
        let ext = Extractor::new(&mut store, "actor.ext", kind, path_dim, rest_dim, &mut rng);
        let actor = SacActor::new(&mut store, ext, cfg.width, cfg.depth, ACTION_DIM, &mut rng);
        let ext = Extractor::new(&mut store, "critic.ext", kind, path_dim, rest_dim, &mut rng);
        let critic = TwinCritic::new(&mut store, "critic", ext, cfg.width, cfg.depth, ACTION_DIM, &mut rng);
        let ext = Extractor::new(&mut store, "target.ext", kind, path_dim, rest_dim, &mut rng);
        let target = TwinCritic::new(&mut store, "target", ext, cfg.width, cfg.depth, ACTION_DIM, &mut rng);
        store.copy_values(&critic.ids(), &target.ids());
        let log_alpha = store.add("log_ent_coef", Tensor::scalar(cfg.sac.init_ent_coef.ln() as f32));
        let lr = cfg.sac.learning_rate;
        let actor_opt = Adam::new(&store, &actor.ids(), lr);
        let critic_opt = Adam::new(&store, &critic.ids(), lr);
        let alpha_opt = Adam::new(&store, &[log_alpha], lr);
        let buffer = ReplayBuffer::new(cfg.sac.buffer_size, path_dim + rest_dim, ACTION_DIM);
        Self {
            cfg,
            encoder,
            store,
            actor,
            critic,
            target,
            log_alpha,
            actor_opt,
            critic_opt,
            alpha_opt,
            buffer,
            rng,
            n_updates: 0,
        }
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

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn buffer_mut(&mut self) -> &mut ReplayBuffer {
        &mut self.buffer
    }

    pub fn critic_ids(&self) -> Vec<ParamId> {
        self.critic.ids()
    }

    pub fn target_ids(&self) -> Vec<ParamId> {
        self.target.ids()
    }

    pub fn actor_ids(&self) -> Vec<ParamId> {
        self.actor.ids()
    }

    pub fn network_ids(&self) -> Vec<ParamId> {
        let mut v = self.actor.ids();
        v.extend(self.critic.ids());
        v.extend(self.target.ids());
        v
    }

    pub fn ent_coef(&self) -> f64 {
        (self.store.value(self.log_alpha).item() as f64).exp()
    }

    pub fn n_updates(&self) -> u64 {
        self.n_updates
    }

    pub fn act_deterministic(&self, obs: &[Vec<f32>]) -> Vec<f64> {
        let mut g = Graph::new(&self.store);
        let o = g.constant(stack(obs));
        let a = self.actor.deterministic(&mut g, o);
        g.value(a).data().iter().map(|&x| x as f64).collect()
    }

    /// Samples from the squashed Gaussian.
    pub fn act_stochastic(&mut self, obs: &[Vec<f32>]) -> Vec<f64> {
        let eps = normal(obs.len(), ACTION_DIM, &mut self.rng);
        let mut g = Graph::new(&self.store);
        let o = g.constant(stack(obs));
        let (a, _) = self.actor.sample(&mut g, o, &eps, true);
        g.value(a).data().iter().map(|&x| x as f64).collect()
    }

    /// One gradient step on a replay minibatch: temperature, critics, actor,
    /// then Polyak averaging of the targets.
    pub fn update(&mut self) -> Result<SacLosses, DrlError> {
        let batch = self.buffer.sample(self.cfg.sac.batch_size, &mut self.rng);
        self.update_on(&batch)
    }

    pub fn update_on(&mut self, batch: &Batch) -> Result<SacLosses, DrlError> {
        let step = self.n_updates;
        let n = batch.obs.rows();
        let eps_pi = normal(n, ACTION_DIM, &mut self.rng);
        let eps_next = normal(n, ACTION_DIM, &mut self.rng);
        let sac = &self.cfg.sac;
        let log_alpha = self.store.value(self.log_alpha).item() as f64;
        let alpha = log_alpha.exp();

        // temperature
        let mean_logp = {
            let mut g = Graph::new(&self.store);
            let o = g.constant(batch.obs.clone());
            let (_, lp) = self.actor.sample(&mut g, o, &eps_pi, true);
            g.value(lp).sum_f64() / n as f64
        };
        let ent_coef_loss = check_finite(step, "entropy coefficient loss", -log_alpha * (mean_logp + sac.target_entropy))?;
        self.store.grad_mut(self.log_alpha).data_mut()[0] = -(mean_logp + sac.target_entropy) as f32;
        self.alpha_opt.step(&mut self.store);

        // soft Bellman target
        let target = {
            let mut g = Graph::new(&self.store);
            let next = g.constant(batch.next_obs.clone());
            let (a2, lp2) = self.actor.sample(&mut g, next, &eps_next, true);
            let (q1, q2) = self.target.forward(&mut g, next, a2, true);
            let q = g.minimum(q1, q2);
            let (q, lp2) = (g.value(q).data(), g.value(lp2).data());
            let y: Vec<f32> = (0..n)
                .map(|i| {
                    let soft = q[i] as f64 - alpha * lp2[i] as f64;
                    let cont = 1.0 - batch.dones.data()[i] as f64;
                    (batch.rewards.data()[i] as f64 + cont * sac.gamma * soft) as f32
                })
                .collect();
            Tensor::new(n, 1, y)
        };

        let (critic_loss, grads) = {
            let mut g = Graph::new(&self.store);
            let o = g.constant(batch.obs.clone());
            let a = g.constant(batch.actions.clone());
            let y = g.constant(target);
            let (q1, q2) = self.critic.forward(&mut g, o, a, false);
            let l1 = g.mse(q1, y);
            let l2 = g.mse(q2, y);
            let l = g.add(l1, l2);
            let l = g.scale(l, 0.5);
            let v = g.value(l).item() as f64;
            (v, g.backward(l))
        };
        check_finite(step, "critic loss", critic_loss)?;
        self.store.accumulate(&grads?);
        self.critic_opt.step(&mut self.store);

        let (actor_loss, grads) = {
            let mut g = Graph::new(&self.store);
            let o = g.constant(batch.obs.clone());
            let (a, lp) = self.actor.sample(&mut g, o, &eps_pi, false);
            let (q1, q2) = self.critic.forward(&mut g, o, a, true);
            let q = g.minimum(q1, q2);
            let alp = g.scale(lp, alpha);
            let d = g.sub(alp, q);
            let l = g.mean(d);
            let v = g.value(l).item() as f64;
            (v, g.backward(l))
        };
        check_finite(step, "actor loss", actor_loss)?;
        self.store.accumulate(&grads?);
        self.actor_opt.step(&mut self.store);

        self.store.polyak(&self.critic.ids(), &self.target.ids(), sac.tau);
        self.n_updates += 1;
        Ok(SacLosses { actor: actor_loss, critic: critic_loss, ent_coef: alpha, ent_coef_loss })
    }

    pub fn train<F: FnMut(&MetricsRow)>(&mut self, total_steps: u64, log_interval: u64, mut on_row: F) -> Result<(), DrlError> {
        let sac = self.cfg.sac.clone();
        let env_cfg = crate::env::EnvConfig { seed: self.cfg.seed, ..self.cfg.env.clone() };
        let mut venv = VecEnv::new(&env_cfg, self.cfg.arch.obs_mode(), self.encoder.clone(), sac.n_envs)?;
        let mut window = EpisodeWindow::default();
        let mut losses = SacLosses { ent_coef: self.ent_coef(), ..Default::default() };
        let mut steps = 0u64;
        let mut vec_steps = 0u64;
        let mut next_log = log_interval.max(1);
        while steps < total_steps {
            let obs = venv.observations().to_vec();
            let actions = if steps < sac.learning_starts {
                (0..obs.len()).map(|_| self.rng.gen_range(-1.0..=1.0)).collect()
            } else {
                self.act_stochastic(&obs)
            };
            for t in venv.step(&actions)? {
                self.buffer.push(&t.obs, &[t.action as f32], t.reward as f32, &t.next_obs, t.done);
            }
            window.extend(venv.drain_finished());
            steps += venv.len() as u64;
            vec_steps += 1;
            if steps > sac.learning_starts && vec_steps.is_multiple_of(sac.train_freq as u64) {
                for _ in 0..sac.gradient_steps {
                    losses = self.update()?;
                }
            }
            if steps >= next_log || steps >= total_steps {
                on_row(&window.row(steps, [losses.actor, losses.critic, losses.ent_coef]));
                while next_log <= steps {
                    next_log += log_interval.max(1);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drl::{build_architecture, Agent, AgentConfig, ArchName, Preset};

    fn agent(tau: f64) -> SacAgent {
        let mut cfg = AgentConfig::new(ArchName::FsSacFcn, Preset::Desk);
        cfg.width = 16;
        cfg.sac.tau = tau;
        cfg.sac.batch_size = 8;
        match build_architecture(&cfg, None).unwrap() {
            Agent::Sac(a) => a,
            Agent::Ppo(_) => unreachable!(),
        }
    }

    fn fill(a: &mut SacAgent) {
        let mut venv = VecEnv::new(&a.cfg.env, a.cfg.arch.obs_mode(), None, 2).unwrap();
        for k in 0..10 {
            for t in venv.step(&[0.1 * k as f64, -0.3]).unwrap() {
                a.buffer.push(&t.obs, &[t.action as f32], t.reward as f32, &t.next_obs, t.done);
            }
        }
    }

    fn values(s: &ParamStore<f32>, ids: &[ParamId]) -> Vec<Vec<f32>> {
        ids.iter().map(|id| s.value(*id).data().to_vec()).collect()
    }

    #[test]
    fn targets_start_equal_to_critics() {
        let a = agent(0.005);
        assert_eq!(values(&a.store, &a.critic_ids()), values(&a.store, &a.target_ids()));
    }

    #[test]
    fn tau_one_copies_and_tau_zero_freezes() {
        let mut a = agent(1.0);
        fill(&mut a);
        a.update().unwrap();
        assert_eq!(values(&a.store, &a.critic_ids()), values(&a.store, &a.target_ids()));

        let mut b = agent(0.0);
        fill(&mut b);
        let before = values(&b.store, &b.target_ids());
        let critics = values(&b.store, &b.critic_ids());
        b.update().unwrap();
        assert_eq!(values(&b.store, &b.target_ids()), before);
        assert_ne!(values(&b.store, &b.critic_ids()), critics);
    }

    #[test]
    fn actions_are_squashed() {
        let mut a = agent(0.005);
        fill(&mut a);
        let obs: Vec<Vec<f32>> = (0..16).map(|k| vec![k as f32 * 3.0 - 20.0; 152]).collect();
        for x in a.act_stochastic(&obs).into_iter().chain(a.act_deterministic(&obs)) {
            assert!((-1.0..=1.0).contains(&x));
        }
    }

    #[test]
    fn non_finite_loss_aborts_update() {
        let mut a = agent(0.005);
        fill(&mut a);
        let mut batch = a.buffer.sample(8, &mut ChaCha8Rng::seed_from_u64(0));
        batch.rewards.data_mut()[0] = f32::NAN;
        let before = values(&a.store, &a.critic_ids());
        assert!(matches!(a.update_on(&batch), Err(DrlError::NonFinite { .. })));
        assert_eq!(values(&a.store, &a.critic_ids()), before);
    }

    /// One-step bandit with reward -(a - 0.3)²: the policy mean must settle
    /// at 0.3.
    #[test]
    fn bandit_mean_converges() {
        let mut cfg = AgentConfig::new(ArchName::LstmaeSac, Preset::Desk);
        cfg.width = 32;
        cfg.sac.batch_size = 64;
        cfg.seed = 4;
        let mut a = SacAgent::new(cfg, None, 1, 1);
        let obs = vec![vec![0.0f32, 0.0]];
        for step in 0..20_000 {
            let act = if step < 256 { a.rng.gen_range(-1.0..=1.0) } else { a.act_stochastic(&obs)[0] };
            let r = -(act - 0.3) * (act - 0.3);
            a.buffer.push(&obs[0], &[act as f32], r as f32, &obs[0], true);
            if step >= 256 {
                a.update().unwrap();
            }
        }
        let mean = a.act_deterministic(&obs)[0];
        assert!((mean - 0.3).abs() < 0.05, "mean {mean}");
    }
}
