//! Multi-head scaled dot-product attention with optional boolean masking.

use crate::error::{Error, Result};
use crate::nn::{Graph, Scalar, Value};

/// Multi-head attention over full sequences. `queries` is Tq×d and
/// `keys`/`values` are Tk×d; all projections (`{prefix}.q.w`, `{prefix}.k.w`,
/// `{prefix}.v.w`, `{prefix}.out.w`) are d×d, carved into per-head column
/// blocks of width d/n_heads. `mask`, when given, is row-major Tq×Tk with
/// `true` meaning "may attend"; masked positions get probability exactly
/// zero, and a row with every position masked is an error. Returns the
/// attended output (Tq×d) and one Tq×Tk alignment per head in head order.
pub fn multi_head_attention<S: Scalar>(
    g: &mut Graph<'_, S>,
    prefix: &str,
    queries: Value,
    keys: Value,
    values: Value,
    mask: Option<&[bool]>,
    n_heads: usize,
) -> Result<(Value, Vec<Value>)> {
    let (t_q, d) = g.tape.dims(queries);
    let (t_k, d_k) = g.tape.dims(keys);
    let (t_v, d_v) = g.tape.dims(values);
    if d_k != d || d_v != d {
        return Err(Error::shape(
            "multi_head_attention",
            format!("model width mismatch: queries {d}, keys {d_k}, values {d_v}"),
        ));
    }
    if t_v != t_k {
        return Err(Error::shape(
            "multi_head_attention",
            format!("keys have {t_k} rows but values have {t_v}"),
        ));
    }
    if n_heads == 0 || d % n_heads != 0 {
        return Err(Error::InvalidArgument(format!(
            "n_heads must divide the model width ({d} % {n_heads})"
        )));
    }
    if let Some(m) = mask {
        if m.len() != t_q * t_k {
            return Err(Error::shape(
                "multi_head_attention",
                format!("mask has {} entries, expected {}x{}", m.len(), t_q, t_k),
            ));
        }
    }
    let d_head = d / n_heads;

    let q = g.linear(queries, &format!("{prefix}.q"))?;
    let k = g.linear(keys, &format!("{prefix}.k"))?;
    let v = g.linear(values, &format!("{prefix}.v"))?;

    let scale = S::cast_from(1.0 / (d_head as f64).sqrt());
    let mut heads = Vec::with_capacity(n_heads);
    let mut aligns = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let qh = g.tape.slice_cols(q, h * d_head, d_head)?;
        let kh = g.tape.slice_cols(k, h * d_head, d_head)?;
        let vh = g.tape.slice_cols(v, h * d_head, d_head)?;
        let kt = g.tape.transpose(kh);
        let raw = g.tape.matmul(qh, kt)?;
        let scores = g.tape.scale(raw, scale);
        let align = g.tape.softmax_rows(scores, mask.map(|m| m.to_vec()))?;
        heads.push(g.tape.matmul(align, vh)?);
        aligns.push(align);
    }
    let cat = g.tape.concat_cols(&heads)?;
    let out = g.linear(cat, &format!("{prefix}.out"))?;
    Ok((out, aligns))
}
