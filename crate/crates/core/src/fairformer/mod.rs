//! FairFormer: a two-tower, permutation-equivariant attention model that
//! maps a valuation matrix to per-item distributions over agents.
//!
//! Pipeline: exchangeable embedding of the valuations into agent and item
//! tokens, `L` self-attention blocks per tower, item-to-agent cross-attention,
//! `K` item self-attention blocks, a final RMSNorm, the bilinear term
//! `D = Z̃·Hᵀ`, the scores `S = D + α·V`, and a row softmax at temperature
//! `τ`. Training maximizes the expected log-Nash welfare of the fractional
//! allocation while annealing `τ`.

mod checkpoint;
mod config;
mod model;
mod params;
mod train;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Manifest, TensorEntry, CHECKPOINT_FORMAT,
    CHECKPOINT_VERSION,
};
pub use config::ModelConfig;
pub use model::{allocate, exchangeable_embed, ff_cross_attn, ff_self_attn, forward, SelfBlock};
pub use params::{ModelParams, FEATURES};
pub use train::{batch_grad, batch_loss, nw_loss, tau_schedule, train, train_from, AdamW, Sampler, TrainOutcome};
