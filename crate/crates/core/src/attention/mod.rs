//! Attention mechanisms: location-sensitive attention for recurrent decoders,
//! forward attention with an optional transition agent, multi-head scaled
//! dot-product attention for Transformer stacks, plus the guided-attention
//! loss and the diagonality diagnostic shared by training and evaluation.

mod forward;
mod guided;
mod location;
mod mha;
mod types;

pub use forward::{forward_attention_step, transition_agent};
pub use guided::{
    diagonality, guided_attention_loss, guided_attention_loss_node, guided_attention_weights,
};
pub use location::{location_sensitive_attend, AttentionState, LocationAttentionConfig};
pub use mha::multi_head_attention;
pub use types::{read_alignment, write_alignment, AlignmentMatrix, GuidedAttentionConfig};
