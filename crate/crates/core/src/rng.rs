//! Named, index-addressable random streams.
//!
//! Every random draw in the crate comes from `stream(seed, Stream::X, index)`,
//! so a trajectory, a training step or an evaluation trial can be reproduced
//! on its own, in any order, on any number of threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Data,
    Init,
    Training,
    Eval,
    Flow,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Data => 0x6461_7461,
            Stream::Init => 0x696e_6974,
            Stream::Training => 0x7472_6169,
            Stream::Eval => 0x6576_616c,
            Stream::Flow => 0x666c_6f77,
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Independent generator for `(seed, stream, index)`.
pub fn stream(seed: u64, which: Stream, index: u64) -> StreamRng {
    let key = splitmix64(splitmix64(seed ^ which.tag()) ^ splitmix64(index.wrapping_add(1)));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(index);
    rng
}

/// Sub-stream of a stream, for draws nested inside an indexed unit of work.
pub fn substream(seed: u64, which: Stream, index: u64, sub: u64) -> StreamRng {
    stream(splitmix64(seed ^ sub.wrapping_mul(0x2545_f491_4f6c_dd1d)), which, index)
}
