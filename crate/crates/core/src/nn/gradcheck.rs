use crate::error::{Error, Result};

use super::{Graph, ParamStore, Value};

/// Outcome of [`finite_diff_check`].
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Max relative error per parameter, in store order.
    pub per_param: Vec<(String, f64)>,
    pub global_max_rel: f64,
    /// Parameter holding the global max.
    pub worst_param: String,
}

impl GradCheckReport {
    pub fn within(&self, tol: f64) -> bool {
        self.global_max_rel <= tol
    }
}

/// Compare analytic gradients against central finite differences.
///
/// `build` must deterministically construct a 1×1 loss from the graph it is
/// given (graphs are created with `train = false`, so dropout is inert).
/// Each parameter's gradient is judged as a vector:
/// `‖a−n‖∞ / max(‖a‖∞, ‖n‖∞, 1e-8)`. Normalizing by the parameter's own
/// gradient scale keeps the check strict where the gradient lives while not
/// demanding four significant digits from components the loss barely touches
/// — central differences of an O(1) loss cannot resolve those below the
/// f64 rounding floor.
pub fn finite_diff_check<F>(
    params: &ParamStore<f64>,
    eps: f64,
    build: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<Value>,
{
    if eps <= 0.0 {
        return Err(Error::InvalidArgument("finite_diff_check: eps <= 0".into()));
    }
    // analytic pass
    let mut analytic = params.zeros_like();
    {
        let mut g = Graph::new(params, 0, false);
        let loss = build(&mut g)?;
        let lv = g.tape.item(loss)?;
        if !lv.is_finite() {
            return Err(Error::NonFinite("finite_diff_check loss".into()));
        }
        g.backward(loss)?;
        g.harvest_grads(&mut analytic)?;
    }

    // numeric pass: perturb one scalar at a time on a working copy
    let mut work = params.clone();
    let names: Vec<String> = params.names().cloned().collect();
    let mut per_param = Vec::with_capacity(names.len());
    let mut global = 0.0f64;
    let mut worst = String::new();

    let eval = |store: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new(store, 0, false);
        let loss = build(&mut g)?;
        let v = g.tape.item(loss)?;
        if !v.is_finite() {
            return Err(Error::NonFinite("finite_diff_check loss".into()));
        }
        Ok(v)
    };

    for name in &names {
        let n_elems = params.get(name)?.len();
        let mut max_diff = 0.0f64;
        let mut norm_a = 0.0f64;
        let mut norm_n = 0.0f64;
        for i in 0..n_elems {
            let orig = work.get(name)?.data[i];
            work.get_mut(name)?.data[i] = orig + eps;
            let lp = eval(&work)?;
            work.get_mut(name)?.data[i] = orig - eps;
            let lm = eval(&work)?;
            work.get_mut(name)?.data[i] = orig;

            let numeric = (lp - lm) / (2.0 * eps);
            let a = analytic.get(name)?.data[i];
            max_diff = max_diff.max((a - numeric).abs());
            norm_a = norm_a.max(a.abs());
            norm_n = norm_n.max(numeric.abs());
        }
        let param_rel = max_diff / norm_a.max(norm_n).max(1e-8);
        if param_rel > global {
            global = param_rel;
            worst = name.clone();
        }
        per_param.push((name.clone(), param_rel));
    }

    Ok(GradCheckReport {
        per_param,
        global_max_rel: global,
        worst_param: worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tape::Conv1dPadding;
    use crate::nn::{init_glorot, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_store(entries: &[(&str, Vec<usize>)], seed: u64) -> ParamStore<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        for (name, shape) in entries {
            init_glorot(&mut p, &mut rng, name, shape.clone()).unwrap();
        }
        p
    }

    #[test]
    fn sum_of_params_has_exact_unit_grad() {
        let p = rand_store(&[("w", vec![3, 4])], 1);
        let rep = finite_diff_check(&p, 1e-5, |g| {
            let w = g.p("w")?;
            Ok(g.tape.sum_all(w))
        })
        .unwrap();
        assert!(rep.global_max_rel < 1e-9, "{rep:?}");
    }

    #[test]
    fn l2_norm_sq_at_zero_is_flat() {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::<f64>::zeros(vec![2, 3]));
        let rep = finite_diff_check(&p, 1e-5, |g| {
            let w = g.p("w")?;
            let sq = g.tape.mul(w, w)?;
            Ok(g.tape.sum_all(sq))
        })
        .unwrap();
        assert!(rep.global_max_rel < 1e-6, "{rep:?}");
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::new(vec![1], vec![1e308]).unwrap());
        let r = finite_diff_check(&p, 1e-5, |g| {
            let w = g.p("w")?;
            let sq = g.tape.mul(w, w)?; // overflows to inf
            Ok(g.tape.sum_all(sq))
        });
        assert!(r.is_err());
    }

    // The per-primitive sweep: every op that can sit on a gradient path gets
    // finite-differenced through a small randomized graph.

    fn check<F>(p: &ParamStore<f64>, build: F)
    where
        F: Fn(&mut Graph<'_, f64>) -> Result<Value>,
    {
        let rep = finite_diff_check(p, 1e-5, build).unwrap();
        assert!(
            rep.global_max_rel < 1e-4,
            "worst {} rel {:.3e}",
            rep.worst_param,
            rep.global_max_rel
        );
    }

    #[test]
    fn primitive_affine_tanh_sigmoid_relu_abs_exp() {
        let p = rand_store(&[("l.w", vec![4, 3]), ("l.b", vec![1, 3])], 2);
        check(&p, |g| {
            let x = g.constant(2, 4, (0..8).map(|i| (i as f64 * 0.37).sin()).collect())?;
            let a = g.affine(x, "l")?;
            let t = g.tape.tanh(a);
            let s = g.tape.sigmoid(t);
            let r = g.tape.relu(s);
            let ab = g.tape.abs(r);
            let e = g.tape.exp(ab);
            Ok(g.tape.mean_all(e))
        });
    }

    #[test]
    fn primitive_mul_sub_scale_transpose() {
        let p = rand_store(&[("a", vec![3, 3]), ("b", vec![3, 3])], 3);
        check(&p, |g| {
            let a = g.p("a")?;
            let b = g.p("b")?;
            let at = g.tape.transpose(a);
            let m = g.tape.mul(at, b)?;
            let d = g.tape.sub(m, a)?;
            let s = g.tape.scale(d, 1.7);
            Ok(g.tape.mean_all(s))
        });
    }

    #[test]
    fn primitive_matmul_chain() {
        let p = rand_store(&[("a", vec![2, 5]), ("b", vec![5, 3]), ("c", vec![3, 2])], 4);
        check(&p, |g| {
            let a = g.p("a")?;
            let b = g.p("b")?;
            let c = g.p("c")?;
            let ab = g.tape.matmul(a, b)?;
            let abc = g.tape.matmul(ab, c)?;
            let t = g.tape.tanh(abc);
            Ok(g.tape.sum_all(t))
        });
    }

    #[test]
    fn primitive_softmax_plain_and_masked() {
        let p = rand_store(&[("x", vec![3, 5])], 5);
        check(&p, |g| {
            let x = g.p("x")?;
            let y = g.tape.softmax_rows(x, None)?;
            let w = g.constant(3, 5, (0..15).map(|i| (i as f64 * 0.11).cos()).collect())?;
            let m = g.tape.mul(y, w)?;
            Ok(g.tape.sum_all(m))
        });
        check(&p, |g| {
            let x = g.p("x")?;
            let mask: Vec<bool> = (0..15).map(|i| i % 4 != 0).collect();
            let y = g.tape.softmax_rows(x, Some(mask))?;
            let w = g.constant(3, 5, (0..15).map(|i| (i as f64 * 0.23).sin()).collect())?;
            let m = g.tape.mul(y, w)?;
            Ok(g.tape.sum_all(m))
        });
    }

    #[test]
    fn primitive_row_normalize() {
        // keep inputs positive so row sums stay well away from zero
        let mut p = ParamStore::new();
        p.insert(
            "x",
            Tensor::new(vec![2, 4], (0..8).map(|i| 0.5 + 0.1 * i as f64).collect()).unwrap(),
        );
        check(&p, |g| {
            let x = g.p("x")?;
            let y = g.tape.row_normalize(x)?;
            let w = g.constant(2, 4, (0..8).map(|i| (i as f64 * 0.7).sin()).collect())?;
            let m = g.tape.mul(y, w)?;
            Ok(g.tape.sum_all(m))
        });
    }

    #[test]
    fn primitive_layer_norm() {
        let p = rand_store(
            &[("x", vec![3, 6]), ("ln.gain", vec![1, 6]), ("ln.bias", vec![1, 6])],
            6,
        );
        check(&p, |g| {
            let x = g.p("x")?;
            let y = g.layer_norm(x, "ln")?;
            let w = g.constant(3, 6, (0..18).map(|i| (i as f64 * 0.31).cos()).collect())?;
            let m = g.tape.mul(y, w)?;
            Ok(g.tape.mean_all(m))
        });
    }

    #[test]
    fn primitive_conv1d_same_and_valid() {
        let p = rand_store(&[("x", vec![7, 2]), ("k", vec![6, 3])], 7);
        check(&p, |g| {
            let x = g.p("x")?;
            let k = g.p("k")?;
            let y = g.tape.conv1d(x, k, 3, Conv1dPadding::Same)?;
            let t = g.tape.tanh(y);
            Ok(g.tape.mean_all(t))
        });
        check(&p, |g| {
            let x = g.p("x")?;
            let k = g.p("k")?;
            let y = g.tape.conv1d(x, k, 3, Conv1dPadding::Valid)?;
            Ok(g.tape.mean_all(y))
        });
    }

    #[test]
    fn primitive_lstm_step_and_seq() {
        let (isz, hsz) = (3, 4);
        let p = rand_store(
            &[
                ("l.w_ih", vec![isz, 4 * hsz]),
                ("l.w_hh", vec![hsz, 4 * hsz]),
                ("l.b", vec![1, 4 * hsz]),
            ],
            8,
        );
        check(&p, |g| {
            let xs = g.constant(5, isz, (0..15).map(|i| (i as f64 * 0.21).sin()).collect())?;
            let hs = g.lstm_seq("l", xs)?;
            Ok(g.tape.mean_all(hs))
        });
    }

    #[test]
    fn primitive_embed_concat_slice_reverse() {
        let p = rand_store(&[("emb", vec![5, 3])], 9);
        check(&p, |g| {
            let e = g.p("emb")?;
            let x = g.tape.embed(e, &[0, 3, 3, 1])?;
            let r = g.tape.reverse_rows(x);
            let top = g.tape.slice_rows(r, 0, 2)?;
            let bot = g.tape.slice_rows(r, 2, 2)?;
            let cc = g.tape.concat_cols(&[top, bot])?;
            let left = g.tape.slice_cols(cc, 0, 3)?;
            let cr = g.tape.concat_rows(&[left, x])?;
            let t = g.tape.tanh(cr);
            Ok(g.tape.mean_all(t))
        });
    }

    #[test]
    fn primitive_scale_by_add_row_bce() {
        let p = rand_store(&[("x", vec![1, 6]), ("s", vec![1, 1]), ("b", vec![1, 6])], 10);
        check(&p, |g| {
            let x = g.p("x")?;
            let s = g.p("s")?;
            let b = g.p("b")?;
            let big = g.tape.concat_rows(&[x, x])?;
            let ar = g.tape.add_row(big, b)?;
            let sc = g.tape.scale_by(ar, s)?;
            let targets = vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.5, 0.0, 1.0];
            let mask = vec![
                true, true, false, true, true, true, true, false, true, true, true, true,
            ];
            g.tape.bce_with_logits(sc, &targets, &mask, 3.0)
        });
    }
}
