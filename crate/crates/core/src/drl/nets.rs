//! Feature extractors, MLP cores and the SAC/PPO heads built from them.

use rand::Rng;

use crate::autodiff::{Graph, Linear, ParamId, ParamStore, Scalar, Tensor, Var};
use crate::rae::LstmLayer;

/// Output width of the frame-stack FCN extractor.
pub const FCN_EXTRACTOR_OUT: usize = 48;
/// Hidden width of the frame-stack LSTM extractor.
pub const LSTM_EXTRACTOR_HIDDEN: usize = 128;

const LOG_STD_MIN: f64 = -20.0;
const LOG_STD_MAX: f64 = 2.0;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtractorKind {
    /// The observation is used as is (latent path features).
    LatentPassthrough,
    /// `relu(Linear(s_path))` replaces the frame-stacked path.
    FcnOnPath,
    /// Last output of an LSTM run over the `(x, y)` pairs of `s_path`.
    LstmOnPath,
}

/// Maps an observation row `[path features | rest]` to the core input.
#[derive(Debug, Clone)]
pub struct Extractor {
    pub kind: ExtractorKind,
    pub path_dim: usize,
    pub rest_dim: usize,
    fcn: Option<Linear>,
    lstm: Option<LstmLayer>,
}

impl Extractor {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        kind: ExtractorKind,
        path_dim: usize,
        rest_dim: usize,
        rng: &mut R,
    ) -> Self {
        let (fcn, lstm) = match kind {
            ExtractorKind::LatentPassthrough => (None, None),
            ExtractorKind::FcnOnPath => (Some(Linear::new(store, &format!("{name}.fcn"), path_dim, FCN_EXTRACTOR_OUT, rng)), None),
            ExtractorKind::LstmOnPath => {
                assert!(path_dim.is_multiple_of(2), "s_path holds (x, y) pairs");
                (None, Some(LstmLayer::new(store, &format!("{name}.lstm"), 2, LSTM_EXTRACTOR_HIDDEN, rng)))
            }
        };
        Self { kind, path_dim, rest_dim, fcn, lstm }
    }

    pub fn in_dim(&self) -> usize {
        self.path_dim + self.rest_dim
    }

    pub fn out_dim(&self) -> usize {
        self.rest_dim
            + match self.kind {
                ExtractorKind::LatentPassthrough => self.path_dim,
                ExtractorKind::FcnOnPath => FCN_EXTRACTOR_OUT,
                ExtractorKind::LstmOnPath => LSTM_EXTRACTOR_HIDDEN,
            }
    }

    pub fn ids(&self) -> Vec<ParamId> {
        let mut v = Vec::new();
        if let Some(l) = &self.fcn {
            v.extend(l.ids());
        }
        if let Some(l) = &self.lstm {
            v.extend(l.ids());
        }
        v
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, obs: Var, frozen: bool) -> Var {
        let (rows, cols) = g.shape(obs);
        assert_eq!(cols, self.in_dim(), "observation width");
        let features = match self.kind {
            ExtractorKind::LatentPassthrough => return obs,
            ExtractorKind::FcnOnPath => {
                let p = g.slice(obs, 0, self.path_dim);
                let h = self.fcn.as_ref().unwrap().apply(g, p, frozen);
                g.relu(h)
            }
            ExtractorKind::LstmOnPath => {
                let layer = self.lstm.as_ref().unwrap();
                let mut h = g.constant(Tensor::zeros(rows, layer.hidden));
                let mut c = g.constant(Tensor::zeros(rows, layer.hidden));
                for t in 0..self.path_dim / 2 {
                    let x = g.slice(obs, 2 * t, 2 * t + 2);
                    (h, c) = layer.cell(g, x, h, c, frozen);
                }
                h
            }
        };
        let rest = g.slice(obs, self.path_dim, cols);
        g.concat(&[features, rest])
    }
}

/// Stack of `Linear + relu` layers.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        width: usize,
        depth: usize,
        rng: &mut R,
    ) -> Self {
        let layers = (0..depth)
            .map(|k| Linear::new(store, &format!("{name}.{k}"), if k == 0 { input } else { width }, width, rng))
            .collect();
        Self { layers }
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.output)
    }

    pub fn ids(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|l| l.ids()).collect()
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, mut x: Var, frozen: bool) -> Var {
        for l in &self.layers {
            let y = l.apply(g, x, frozen);
            x = g.relu(y);
        }
        x
    }
}

/// Squashed-Gaussian actor: `a = tanh(mu + std * eps)`.
#[derive(Debug, Clone)]
pub struct SacActor {
    pub extractor: Extractor,
    pub core: Mlp,
    pub mu: Linear,
    pub log_std: Linear,
}

impl SacActor {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        extractor: Extractor,
        width: usize,
        depth: usize,
        action_dim: usize,
        rng: &mut R,
    ) -> Self {
        let core = Mlp::new(store, "actor.core", extractor.out_dim(), width, depth, rng);
        let mu = Linear::new(store, "actor.mu", width, action_dim, rng);
        let log_std = Linear::new(store, "actor.log_std", width, action_dim, rng);
        Self { extractor, core, mu, log_std }
    }

    pub fn ids(&self) -> Vec<ParamId> {
        let mut v = self.extractor.ids();
        v.extend(self.core.ids());
        v.extend(self.mu.ids());
        v.extend(self.log_std.ids());
        v
    }

    /// Pre-squash mean and clamped log standard deviation.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, obs: Var, frozen: bool) -> (Var, Var) {
        let f = self.extractor.forward(g, obs, frozen);
        let h = self.core.forward(g, f, frozen);
        let mu = self.mu.apply(g, h, frozen);
        let ls = self.log_std.apply(g, h, frozen);
        (mu, g.clamp(ls, LOG_STD_MIN, LOG_STD_MAX))
    }

    /// Reparameterized sample with its log-probability (one column per row).
    pub fn sample<T: Scalar>(&self, g: &mut Graph<'_, T>, obs: Var, eps: &Tensor<T>, frozen: bool) -> (Var, Var) {
        let (mu, ls) = self.forward(g, obs, frozen);
        let std = g.exp(ls);
        let noise = g.constant(eps.clone());
        let spread = g.mul(std, noise);
        let u = g.add(mu, spread);
        let a = g.tanh(u);
        // Gaussian part: sum(-eps²/2 - log std - ln(2 pi)/2)
        let rows = eps.rows();
        let base: Vec<f64> = (0..rows)
            .map(|r| eps.row_slice(r).iter().map(|e| -0.5 * e.as_f64() * e.as_f64() - HALF_LN_2PI).sum())
            .collect();
        let base = g.constant(Tensor::from_f64(rows, 1, &base));
        let neg_ls = g.scale(ls, -1.0);
        let neg_ls = g.row_sum(neg_ls);
        let gauss = g.add(base, neg_ls);
        // tanh correction: sum(ln(1 - a² + 1e-6))
        let a2 = g.square(a);
        let one_minus = g.scale(a2, -1.0);
        let one_minus = g.add_scalar(one_minus, 1.0 + 1e-6);
        let corr = g.ln(one_minus);
        let corr = g.row_sum(corr);
        (a, g.sub(gauss, corr))
    }

    /// `tanh(mu)`.
    pub fn deterministic<T: Scalar>(&self, g: &mut Graph<'_, T>, obs: Var) -> Var {
        let (mu, _) = self.forward(g, obs, true);
        g.tanh(mu)
    }
}

/// Two Q heads over a shared extractor, each fed `[features | action]`.
#[derive(Debug, Clone)]
pub struct TwinCritic {
    pub extractor: Extractor,
    pub q: [(Mlp, Linear); 2],
}

impl TwinCritic {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        extractor: Extractor,
        width: usize,
        depth: usize,
        action_dim: usize,
        rng: &mut R,
    ) -> Self {
        let input = extractor.out_dim() + action_dim;
        let mut head = |k: usize| {
            let core = Mlp::new(store, &format!("{name}.q{k}"), input, width, depth, rng);
            let out = Linear::new(store, &format!("{name}.q{k}.out"), width, 1, rng);
            (core, out)
        };
        let q = [head(0), head(1)];
        Self { extractor, q }
    }

    pub fn ids(&self) -> Vec<ParamId> {
        let mut v = self.extractor.ids();
        for (core, out) in &self.q {
            v.extend(core.ids());
            v.extend(out.ids());
        }
        v
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, obs: Var, action: Var, frozen: bool) -> (Var, Var) {
        let f = self.extractor.forward(g, obs, frozen);
        let x = g.concat(&[f, action]);
        let mut q = self.q.iter().map(|(core, out)| {
            let h = core.forward(g, x, frozen);
            out.apply(g, h, frozen)
        });
        let q0 = q.next().unwrap();
        let q1 = q.next().unwrap();
        (q0, q1)
    }
}

/// Gaussian actor-critic with a shared extractor and a state-independent
/// log standard deviation.
#[derive(Debug, Clone)]
pub struct ActorCritic {
    pub extractor: Extractor,
    pub pi: Mlp,
    pub vf: Mlp,
    pub action_net: Linear,
    pub value_net: Linear,
    pub log_std: ParamId,
}

impl ActorCritic {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        extractor: Extractor,
        width: usize,
        depth: usize,
        action_dim: usize,
        rng: &mut R,
    ) -> Self {
        let input = extractor.out_dim();
        let pi = Mlp::new(store, "pi", input, width, depth, rng);
        let vf = Mlp::new(store, "vf", input, width, depth, rng);
        let action_net = Linear::new(store, "action_net", width, action_dim, rng);
        // small initial action means
        for id in action_net.ids() {
            let v = store.value_mut(id);
            *v = v.map(|x| x * T::from_f64_lossy(0.01));
        }
        let value_net = Linear::new(store, "value_net", width, 1, rng);
        let log_std = store.add("log_std", Tensor::zeros(1, action_dim));
        Self { extractor, pi, vf, action_net, value_net, log_std }
    }

    pub fn ids(&self) -> Vec<ParamId> {
        let mut v = self.extractor.ids();
        v.extend(self.pi.ids());
        v.extend(self.vf.ids());
        v.extend(self.action_net.ids());
        v.extend(self.value_net.ids());
        v.push(self.log_std);
        v
    }

    /// Action mean and state value.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, obs: Var, frozen: bool) -> (Var, Var) {
        let f = self.extractor.forward(g, obs, frozen);
        let hp = self.pi.forward(g, f, frozen);
        let hv = self.vf.forward(g, f, frozen);
        (self.action_net.apply(g, hp, frozen), self.value_net.apply(g, hv, frozen))
    }

    /// Log-density of `actions` under `N(mean, exp(log_std)²)`, one column.
    pub fn log_prob<T: Scalar>(&self, g: &mut Graph<'_, T>, mean: Var, actions: Var, frozen: bool) -> Var {
        let (rows, cols) = g.shape(mean);
        let ls = if frozen { g.param_const(self.log_std) } else { g.param(self.log_std) };
        let ls = if cols == 1 { g.broadcast(ls, rows, 1) } else { self.tile_rows(g, ls, rows) };
        let diff = g.sub(actions, mean);
        let neg = g.scale(ls, -1.0);
        let inv = g.exp(neg);
        let z = g.mul(diff, inv);
        let z2 = g.square(z);
        let a = g.scale(z2, -0.5);
        let b = g.sub(a, ls);
        let lp = g.add_scalar(b, -HALF_LN_2PI);
        g.row_sum(lp)
    }

    fn tile_rows<T: Scalar>(&self, g: &mut Graph<'_, T>, row: Var, rows: usize) -> Var {
        let (_, cols) = g.shape(row);
        let zeros = g.constant(Tensor::zeros(rows, cols));
        g.add_bias(zeros, row)
    }

    /// Entropy of the diagonal Gaussian (independent of the state).
    pub fn entropy<T: Scalar>(&self, g: &mut Graph<'_, T>) -> Var {
        let ls = g.param(self.log_std);
        let e = g.add_scalar(ls, 0.5 + HALF_LN_2PI);
        g.sum(e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::check_gradients;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn constant_matches_closed_form() {
        assert!((0.5 * (2.0 * PI).ln() - HALF_LN_2PI).abs() < 1e-15);
    }

    #[test]
    fn extractor_widths() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = ParamStore::<f32>::new();
        let e = Extractor::new(&mut s, "e", ExtractorKind::LatentPassthrough, 48, 24, &mut rng);
        assert_eq!((e.out_dim(), s.total_count()), (72, 0));
        let e = Extractor::new(&mut s, "f", ExtractorKind::FcnOnPath, 128, 24, &mut rng);
        assert_eq!((e.out_dim(), s.count(&e.ids())), (72, 128 * 48 + 48));
        let e = Extractor::new(&mut s, "l", ExtractorKind::LstmOnPath, 128, 24, &mut rng);
        assert_eq!((e.out_dim(), s.count(&e.ids())), (152, 2 * 512 + 128 * 512 + 512));
    }

    #[test]
    fn actor_log_prob_matches_density() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = ParamStore::<f64>::new();
        let e = Extractor::new(&mut s, "e", ExtractorKind::LatentPassthrough, 3, 1, &mut rng);
        let actor = SacActor::new(&mut s, e, 8, 2, 1, &mut rng);
        let obs = Tensor::<f64>::uniform(5, 4, 1.0, &mut rng);
        let eps = Tensor::<f64>::uniform(5, 1, 2.0, &mut rng);
        let mut g = Graph::new(&s);
        let o = g.constant(obs);
        let (mu, ls) = actor.forward(&mut g, o, true);
        let (a, lp) = actor.sample(&mut g, o, &eps, true);
        for r in 0..5 {
            let (m, l, e) = (g.value(mu).get(r, 0), g.value(ls).get(r, 0), eps.get(r, 0));
            let u = m + l.exp() * e;
            let sd = l.exp();
            let dens = (-0.5 * ((u - m) / sd).powi(2)).exp() / (sd * (2.0 * PI).sqrt());
            let want = dens.ln() - (1.0 - u.tanh().powi(2) + 1e-6).ln();
            assert!((g.value(lp).get(r, 0) - want).abs() < 1e-10);
            assert!((g.value(a).get(r, 0) - u.tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn gaussian_log_prob_and_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut s = ParamStore::<f64>::new();
        let e = Extractor::new(&mut s, "e", ExtractorKind::LatentPassthrough, 2, 1, &mut rng);
        let ac = ActorCritic::new(&mut s, e, 4, 1, 1, &mut rng);
        s.value_mut(ac.log_std).data_mut()[0] = 0.3;
        let mut g = Graph::new(&s);
        let mean = g.constant(Tensor::from_f64(2, 1, &[0.1, -0.4]));
        let act = g.constant(Tensor::from_f64(2, 1, &[0.5, 0.2]));
        let lp = ac.log_prob(&mut g, mean, act, false);
        let sd = 0.3f64.exp();
        for (r, (m, a)) in [(0.1, 0.5), (-0.4, 0.2)].iter().enumerate() {
            let want = -0.5 * ((a - m) / sd).powi(2) - sd.ln() - HALF_LN_2PI;
            assert!((g.value(lp).get(r, 0) - want).abs() < 1e-12);
        }
        let h = ac.entropy(&mut g);
        assert!((g.value(h).item() - (0.5 + HALF_LN_2PI + 0.3)).abs() < 1e-12);
    }

    #[test]
    fn extractors_pass_gradient_checks() {
        for kind in [ExtractorKind::FcnOnPath, ExtractorKind::LstmOnPath] {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let mut s = ParamStore::<f64>::new();
            let e = Extractor::new(&mut s, "e", kind, 6, 2, &mut rng);
            let ids = e.ids();
            let obs = Tensor::<f64>::uniform(3, 8, 1.0, &mut rng);
            let report = check_gradients(&s, &ids, 1e-5, |g| {
                let o = g.constant(obs.clone());
                let y = e.forward(g, o, false);
                let y = g.tanh(y);
                g.sum(y)
            })
            .unwrap();
            assert!(report.passes(1e-4), "{kind:?}: {report:?}");
        }
    }
}
