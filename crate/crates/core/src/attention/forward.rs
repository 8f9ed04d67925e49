//! Forward attention: constrains a step's alignment to stay-or-advance moves
//! over the previous step's alignment, optionally gated by a learned
//! transition agent.

use crate::error::{Error, Result};
use crate::nn::{Graph, Scalar, Value};

fn check_prob_row<S: Scalar>(g: &Graph<'_, S>, v: Value, what: &str) -> Result<usize> {
    let (r, c) = g.tape.dims(v);
    if r != 1 {
        return Err(Error::shape(
            "forward_attention_step",
            format!("{what} must be a single row, got {r}x{c}"),
        ));
    }
    let data = g.tape.value(v);
    let mut sum = 0.0f64;
    for &x in data {
        let x = x.cast_f64();
        if !x.is_finite() || x < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "{what} must be finite and non-negative, got {x}"
            )));
        }
        sum += x;
    }
    if (sum - 1.0).abs() > 1e-5 {
        return Err(Error::InvalidArgument(format!(
            "{what} must sum to 1 (got {sum})"
        )));
    }
    Ok(c)
}

/// One forward-attention update. `attn_probs` is the raw content-based
/// alignment α̂_t and `prev_align` the recursion state α_{t−1}, both 1×N
/// probability rows. Without a transition term the recursion is
///
///   α'_t(n) ∝ (α_{t−1}(n) + α_{t−1}(n−1)) · α̂_t(n)
///
/// With a transition agent output u_t ∈ [0,1] (a 1×1 node) the stay/advance
/// halves are blended as (1−u)·α_{t−1}(n) + u·α_{t−1}(n−1). Every entry gets
/// a 1e-10 floor before renormalization; if the product mass is all-zero
/// before flooring, the alignment is dead and an error is returned.
pub fn forward_attention_step<S: Scalar>(
    g: &mut Graph<'_, S>,
    attn_probs: Value,
    prev_align: Value,
    transition: Option<Value>,
) -> Result<Value> {
    let n = check_prob_row(g, attn_probs, "attn_probs")?;
    let n_prev = check_prob_row(g, prev_align, "prev_align")?;
    if n != n_prev {
        return Err(Error::shape(
            "forward_attention_step",
            format!("attn_probs has {n} positions but prev_align has {n_prev}"),
        ));
    }

    // α_{t−1}(n−1): previous alignment shifted one position right, zero enters
    let shifted = if n == 1 {
        g.zeros(1, 1)
    } else {
        let zero = g.zeros(1, 1);
        let head = g.tape.slice_cols(prev_align, 0, n - 1)?;
        g.tape.concat_cols(&[zero, head])?
    };

    let base = match transition {
        None => g.tape.add(prev_align, shifted)?,
        Some(u) => {
            let (ur, uc) = g.tape.dims(u);
            if (ur, uc) != (1, 1) {
                return Err(Error::shape(
                    "forward_attention_step",
                    format!("transition must be 1x1, got {ur}x{uc}"),
                ));
            }
            let uv = g.tape.value(u)[0].cast_f64();
            if !(0.0..=1.0).contains(&uv) {
                return Err(Error::InvalidArgument(format!(
                    "transition probability must lie in [0,1], got {uv}"
                )));
            }
            let one = g.scalar(S::cast_from(1.0));
            let stay_w = g.tape.sub(one, u)?;
            let stay = g.tape.scale_by(prev_align, stay_w)?;
            let advance = g.tape.scale_by(shifted, u)?;
            g.tape.add(stay, advance)?
        }
    };

    let prod = g.tape.mul(base, attn_probs)?;
    if g.tape.value(prod).iter().all(|x| x.cast_f64() == 0.0) {
        return Err(Error::Numerical(
            "forward attention alignment died: stay/advance mass and content \
             probabilities have disjoint support"
                .into(),
        ));
    }
    let floor = g.constant(1, n, vec![S::cast_from(1e-10); n])?;
    let floored = g.tape.add(prod, floor)?;
    g.tape.row_normalize(floored)
}

/// Transition agent u_t = sigmoid(affine([context, decoder state, previous u])).
/// Parameters live under `{prefix}.w` ((d_ctx + d_state + 1)×1) and
/// `{prefix}.b` (1×1). Returns a 1×1 probability node.
pub fn transition_agent<S: Scalar>(
    g: &mut Graph<'_, S>,
    prefix: &str,
    context: Value,
    state: Value,
    prev_u: Value,
) -> Result<Value> {
    for (v, what) in [(context, "context"), (state, "state"), (prev_u, "prev_u")] {
        let (r, c) = g.tape.dims(v);
        if r != 1 {
            return Err(Error::shape(
                "transition_agent",
                format!("{what} must be a single row, got {r}x{c}"),
            ));
        }
    }
    if g.tape.dims(prev_u).1 != 1 {
        return Err(Error::shape(
            "transition_agent",
            format!("prev_u must be 1x1, got 1x{}", g.tape.dims(prev_u).1),
        ));
    }
    let cat = g.tape.concat_cols(&[context, state, prev_u])?;
    let pre = g.affine(cat, prefix)?;
    let (r, c) = g.tape.dims(pre);
    if (r, c) != (1, 1) {
        return Err(Error::shape(
            "transition_agent",
            format!("{prefix}.w must map to a single logit, got {r}x{c}"),
        ));
    }
    Ok(g.tape.sigmoid(pre))
}
