//! Seeded random streams.
//!
//! Every random draw in a run comes from a ChaCha stream whose seed is a pure
//! function of the master seed and a short path of counters (session index,
//! repeat index, purpose). Streams never share state, so repeats can run on
//! any thread in any order and still reproduce bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// What a stream is used for inside one simulated session.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Inspection = 1,
    Gaze = 2,
    Policy = 3,
    Judgment = 4,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and a counter path.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix(master), |acc, &c| splitmix(acc ^ splitmix(c.wrapping_add(0xA5A5))))
}

pub fn stream(master: u64, path: &[u64]) -> SimRng {
    let mut seed = [0u8; 32];
    let mut s = derive_seed(master, path);
    for chunk in seed.chunks_mut(8) {
        s = splitmix(s);
        chunk.copy_from_slice(&s.to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}

/// The four independent streams consumed by one session.
#[derive(Debug, Clone)]
pub struct SessionStreams {
    pub inspection: SimRng,
    pub gaze: SimRng,
    pub policy: SimRng,
    pub judgment: SimRng,
}

impl SessionStreams {
    pub fn new(master: u64, session: u64) -> Self {
        let s = |p: Purpose| stream(master, &[session, p as u64]);
        SessionStreams {
            inspection: s(Purpose::Inspection),
            gaze: s(Purpose::Gaze),
            policy: s(Purpose::Policy),
            judgment: s(Purpose::Judgment),
        }
    }
}
