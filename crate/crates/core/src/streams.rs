//! Named random streams.
//!
//! A root seed fans out into independent ChaCha8 streams that share the key
//! derived from the seed and differ only in the stream id. Every consumer
//! draws from its own stream, so changing how many values one consumer takes
//! (for example more users) leaves the others untouched.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Channels,
    Requests,
    Arrivals,
    Placement,
    Validation,
}

impl Stream {
    pub fn id(self) -> u64 {
        match self {
            Stream::Channels => 1,
            Stream::Requests => 2,
            Stream::Arrivals => 3,
            Stream::Placement => 4,
            Stream::Validation => 5,
        }
    }
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.id());
    rng
}
