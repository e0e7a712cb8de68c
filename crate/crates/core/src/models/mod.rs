//! Learnable components: latent codec, ε-network, conditioning table and
//! detector classifiers.

mod classifier;
mod codec;
mod embedding;
mod layers;
mod score_net;

pub use classifier::{argmax_label, ClassifierNet};
pub use codec::{Codec, CodecKind};
pub use embedding::{EmbeddingTable, COND_WIDTH, FAKE_STYLE, NULL_INDEX, REAL_STYLE};
pub use layers::{Linear, Parameterized};
pub use score_net::{time_embedding, ScoreNet, HIDDEN_WIDTH, TIME_EMBED_WIDTH};

/// Image channels.
pub const CHANNELS: usize = 3;
/// Image height and width.
pub const SIDE: usize = 16;
/// Flattened image length.
pub const PIXELS: usize = CHANNELS * SIDE * SIDE;
/// Image tensor shape `[C, H, W]`.
pub const IMAGE_SHAPE: [usize; 3] = [CHANNELS, SIDE, SIDE];

/// Class label of genuine images; the attack's target.
pub const LABEL_REAL: usize = 0;
pub const LABEL_FAKE: usize = 1;

pub(crate) use codec::TRAINABLE as CODEC_TRAINABLE;
pub(crate) use score_net::ScoreNodes;
