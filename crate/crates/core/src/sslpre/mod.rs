//! Contrastive pretraining of the base encoder on unlabeled features.

mod augment;
mod infonce;
mod pretrain;
mod probe;

pub use augment::{augment, AugConfig};
pub use infonce::{infonce_batch, infonce_loss, l2_normalize_backward, l2_normalize_rows};
pub use pretrain::{
    checkpoint_file_name, encode, load_checkpoints, pretrain_encoder, save_checkpoints,
    select_checkpoint, EncoderCheckpoint, EncoderSpec, SslConfig, SslIndex, SSL_INDEX_FILE,
};
pub use probe::{linear_probe_accuracy, online_probe_score};
