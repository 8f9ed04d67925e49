//! Location-sensitive attention: content scores plus convolutional features
//! of the cumulative alignment, so the mechanism knows where it has already
//! looked.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Conv1dPadding, Graph, Scalar, Value};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationAttentionConfig {
    /// Channels of the alignment convolution.
    #[serde(default = "default_channels")]
    pub conv_channels: usize,
    /// Width of the alignment convolution; must be odd so the features stay
    /// centered on each encoder position.
    #[serde(default = "default_width")]
    pub kernel_width: usize,
}

fn default_channels() -> usize {
    32
}

fn default_width() -> usize {
    31
}

impl Default for LocationAttentionConfig {
    fn default() -> Self {
        Self { conv_channels: default_channels(), kernel_width: default_width() }
    }
}

impl LocationAttentionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.conv_channels == 0 {
            return Err(Error::Config("conv_channels must be positive".into()));
        }
        if self.kernel_width == 0 || self.kernel_width % 2 == 0 {
            return Err(Error::Config(format!(
                "kernel_width must be odd, got {}",
                self.kernel_width
            )));
        }
        Ok(())
    }
}

/// Recurrent state threaded through decode steps. `cumulative` is the sum of
/// all alignments emitted so far; `key_cache` holds the projected keys after
/// the first step so they are not re-projected every frame.
pub struct AttentionState {
    pub prev_align: Value,
    pub cumulative: Value,
    pub key_cache: Option<Value>,
}

impl AttentionState {
    /// All-zero state (no attention history yet).
    pub fn fresh<S: Scalar>(g: &mut Graph<'_, S>, n_enc: usize) -> Self {
        Self {
            prev_align: g.zeros(1, n_enc),
            cumulative: g.zeros(1, n_enc),
            key_cache: None,
        }
    }

    /// State whose history starts pinned at the first encoder position, as
    /// forward attention requires.
    pub fn fresh_onehot<S: Scalar>(g: &mut Graph<'_, S>, n_enc: usize) -> Result<Self> {
        let mut d = vec![S::cast_from(0.0); n_enc];
        d[0] = S::cast_from(1.0);
        let prev_align = g.constant(1, n_enc, d.clone())?;
        let cumulative = g.constant(1, n_enc, d)?;
        Ok(Self { prev_align, cumulative, key_cache: None })
    }
}

/// One attention step. `query` is the 1×d_q decoder state, `keys` the N×d_k
/// encoder outputs. Scores are
///
///   e_n = vᵀ tanh(W·query + V·key_n + U·f_n + b)
///
/// where f = conv1d(cumulative alignment) provides the location features.
/// Returns (context 1×d_k, alignment 1×N, advanced state). Parameters:
/// `{prefix}.query.w`, `{prefix}.keys.w`, `{prefix}.loc.w`, `{prefix}.conv`
/// (kernel_width×conv_channels), `{prefix}.b` (1×d_attn), `{prefix}.v`
/// (d_attn×1).
pub fn location_sensitive_attend<S: Scalar>(
    g: &mut Graph<'_, S>,
    prefix: &str,
    query: Value,
    keys: Value,
    state: &AttentionState,
    cfg: &LocationAttentionConfig,
) -> Result<(Value, Value, AttentionState)> {
    cfg.validate()?;
    let (qr, _) = g.tape.dims(query);
    if qr != 1 {
        return Err(Error::shape(
            "location_sensitive_attend",
            format!("query must be a single row, got {qr} rows"),
        ));
    }
    let (n_enc, _) = g.tape.dims(keys);
    for (v, what) in [(state.prev_align, "prev_align"), (state.cumulative, "cumulative")] {
        let (r, c) = g.tape.dims(v);
        if (r, c) != (1, n_enc) {
            return Err(Error::shape(
                "location_sensitive_attend",
                format!("state {what} is {r}x{c} but keys have {n_enc} rows"),
            ));
        }
    }

    let cache = match state.key_cache {
        Some(c) => c,
        None => g.linear(keys, &format!("{prefix}.keys"))?,
    };
    let (_, d_attn) = g.tape.dims(cache);

    let qp = g.linear(query, &format!("{prefix}.query"))?;
    let b = g.p(&format!("{prefix}.b"))?;
    let qb = g.tape.add(qp, b)?;

    let kern = g.p(&format!("{prefix}.conv"))?;
    let (kr, kc) = g.tape.dims(kern);
    if kr != cfg.kernel_width || kc != cfg.conv_channels {
        return Err(Error::shape(
            "location_sensitive_attend",
            format!(
                "{prefix}.conv is {kr}x{kc}, expected {}x{}",
                cfg.kernel_width, cfg.conv_channels
            ),
        ));
    }
    let cum_col = g.tape.transpose(state.cumulative);
    let f = g.tape.conv1d(cum_col, kern, cfg.kernel_width, Conv1dPadding::Same)?;
    let loc = g.linear(f, &format!("{prefix}.loc"))?;

    let content = g.tape.add(cache, loc)?;
    let pre = g.tape.add_row(content, qb)?;
    let act = g.tape.tanh(pre);
    let v = g.p(&format!("{prefix}.v"))?;
    let (vr, vc) = g.tape.dims(v);
    if (vr, vc) != (d_attn, 1) {
        return Err(Error::shape(
            "location_sensitive_attend",
            format!("{prefix}.v is {vr}x{vc}, expected {d_attn}x1"),
        ));
    }
    let scores_col = g.tape.matmul(act, v)?;
    let scores = g.tape.transpose(scores_col);
    let align = g.tape.softmax_rows(scores, None)?;

    let context = g.tape.matmul(align, keys)?;
    let cumulative = g.tape.add(state.cumulative, align)?;
    Ok((
        context,
        align,
        AttentionState { prev_align: align, cumulative, key_cache: Some(cache) },
    ))
}
