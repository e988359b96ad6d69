use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{AutodiffError, Graph, ParamId, ParamStore, Tensor, Var};

/// Outcome of a central-difference comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compares backward-mode gradients of `loss` against central differences
/// with step `h` for every entry of the parameters in `ids`.
pub fn check_gradients<F>(store: &ParamStore<f64>, ids: &[ParamId], h: f64, loss: F) -> Result<GradCheckReport, AutodiffError>
where
    F: Fn(&mut Graph<'_, f64>) -> Var,
{
    let analytic = {
        let mut g = Graph::new(store);
        let l = loss(&mut g);
        g.backward(l)?
    };
    let eval = |s: &ParamStore<f64>| {
        let mut g = Graph::new(s);
        let l = loss(&mut g);
        g.value(l).item()
    };
    let mut work = store.clone();
    let mut report = GradCheckReport { max_rel_error: 0.0, worst_param: String::new(), worst_index: 0, checked: 0 };
    for id in ids {
        for k in 0..store.value(*id).len() {
            let x0 = store.value(*id).data()[k];
            work.value_mut(*id).data_mut()[k] = x0 + h;
            let fp = eval(&work);
            work.value_mut(*id).data_mut()[k] = x0 - h;
            let fm = eval(&work);
            work.value_mut(*id).data_mut()[k] = x0;
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic.get(*id).map_or(0.0, |g| g.data()[k]);
            let e = relative_error(a, numeric);
            report.checked += 1;
            if e > report.max_rel_error || report.worst_param.is_empty() {
                report.max_rel_error = report.max_rel_error.max(e);
                report.worst_param = store.name(*id).to_string();
                report.worst_index = k;
            }
        }
    }
    Ok(report)
}

type OpFn = fn(&mut Graph<'_, f64>, Var, Var, Var) -> Var;

/// Central-difference check of every graph op on `points` random inputs,
/// inputs kept away from kinks. Returns the worst report per op.
pub fn check_every_op(seed: u64, points: usize) -> Result<Vec<(&'static str, GradCheckReport)>, AutodiffError> {
    let ops: Vec<(&'static str, OpFn)> = vec![
        ("sigmoid", |g, a, _, _| g.sigmoid(a)),
        ("tanh", |g, a, _, _| g.tanh(a)),
        ("softsign", |g, a, _, _| g.softsign(a)),
        ("relu", |g, a, _, _| g.relu(a)),
        ("exp", |g, a, _, _| g.exp(a)),
        ("ln", |g, a, _, _| {
            let s = g.square(a);
            let p = g.add_scalar(s, 0.5);
            g.ln(p)
        }),
        ("abs", |g, a, _, _| g.abs(a)),
        ("square", |g, a, _, _| g.square(a)),
        ("scale", |g, a, _, _| g.scale(a, -1.7)),
        ("clamp", |g, a, _, _| g.clamp(a, -0.5, 0.5)),
        ("matmul", |g, a, b, _| {
            let bt = g.slice(b, 0, 3);
            let sq = g.concat(&[bt, b]);
            let sq = g.slice(sq, 0, 3);
            g.matmul(a, sq)
        }),
        ("add", |g, a, b, _| g.add(a, b)),
        ("sub", |g, a, b, _| g.sub(a, b)),
        ("mul", |g, a, b, _| g.mul(a, b)),
        ("minimum", |g, a, b, _| g.minimum(a, b)),
        ("add_bias", |g, a, _, c| g.add_bias(a, c)),
        ("broadcast", |g, a, _, c| {
            let s = g.sum(c);
            let b = g.broadcast(s, 2, 3);
            g.mul(a, b)
        }),
        ("layer_norm", |g, a, _, c| {
            let bias = g.square(c);
            g.layer_norm(a, c, bias)
        }),
        ("concat_slice", |g, a, b, c| {
            let x = g.concat(&[a, b, a]);
            let y = g.slice(x, 2, 7);
            let z = g.slice(y, 0, 3);
            g.add_bias(z, c)
        }),
        ("row_sum", |g, a, _, _| g.row_sum(a)),
        ("sum", |g, a, _, _| g.sum(a)),
        ("mean", |g, a, _, _| g.mean(a)),
        ("mse", |g, a, b, _| g.mse(a, b)),
        ("l1_penalty", |g, a, _, _| {
            let l = g.l1_penalty(&[ParamId(0), ParamId(2)]);
            // scaled so sign(a) + k never cancels to an exact zero
            let s = g.sum(a);
            let s = g.scale(s, 0.5);
            g.add(l, s)
        }),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (name, op) in ops {
        let mut worst: Option<GradCheckReport> = None;
        for _ in 0..points {
            let mut s = ParamStore::<f64>::new();
            let mut av = Tensor::<f64>::uniform(2, 3, 1.5, &mut rng);
            // stay away from kinks where the derivative is undefined
            for x in av.data_mut() {
                if x.abs() < 0.05 || (x.abs() - 0.5).abs() < 0.05 {
                    *x += 0.2;
                }
            }
            let a = s.add("a", av.clone());
            let mut bv = Tensor::<f64>::uniform(2, 3, 1.5, &mut rng);
            for (y, x) in bv.data_mut().iter_mut().zip(av.data()) {
                if (*y - x).abs() < 0.05 {
                    *y += 0.3;
                }
            }
            if name == "matmul" {
                bv = Tensor::uniform(3, 3, 1.5, &mut rng);
            }
            let b = s.add("b", bv);
            let mut cv = Tensor::<f64>::uniform(1, 3, 1.5, &mut rng);
            for x in cv.data_mut() {
                if x.abs() < 0.05 {
                    *x += 0.2;
                }
            }
            let c = s.add("c", cv);
            let w = s.add("w", Tensor::uniform(1, 1, 1.0, &mut rng));
            let ids = [a, b, c, w];
            let report = check_gradients(&s, &ids, 1e-5, |g| {
                let av = g.param(a);
                let bv = g.param(b);
                let cv = g.param(c);
                let y = op(g, av, bv, cv);
                let (r, cols) = g.shape(y);
                // fixed weights so every output entry contributes differently
                let proj: Vec<f64> = (0..r * cols).map(|k| ((k as f64) * 0.37).sin() + 1.1).collect();
                let p = g.constant(Tensor::from_f64(r, cols, &proj));
                let wv = g.param(w);
                let wb = g.broadcast(wv, r, cols);
                let y = g.mul(y, p);
                let y = g.mul(y, wb);
                g.sum(y)
            })
            ?;
            if worst.as_ref().is_none_or(|w| report.max_rel_error > w.max_rel_error) {
                worst = Some(report);
            }
        }
        out.push((name, worst.expect("at least one point")));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_op_passes_central_differences() {
        for (name, report) in check_every_op(42, 20).unwrap() {
            assert!(report.passes(1e-4), "{name}: {report:?}");
        }
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!(relative_error(1e-9, 0.0) < 1e-2);
    }
}
