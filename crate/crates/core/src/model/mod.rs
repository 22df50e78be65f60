//! T5-style encoder-decoder model: configuration, weights, checkpoint files
//! and the forward pass.

mod checkpoint;
mod config;
mod forward;
mod init;
mod position;

pub use checkpoint::{expected_tensors, load_checkpoint, save_checkpoint, Checkpoint, MAGIC};
pub use config::ModelConfig;
pub use forward::{decode_step, decoder_logits, encode, EncoderStates, DECODER_START_ID};
pub use init::init_toy;
pub use position::relative_position_bucket;
