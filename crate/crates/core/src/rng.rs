//! Counter-based random streams.
//!
//! Every stream is a SplitMix64 sequence whose starting state is a hash of
//! `(seed, stream id)`. Training keys one stream per token per iteration, so
//! the draws a token sees do not depend on which worker samples it or on
//! how the corpus is chunked.

use rand::RngCore;

use crate::scalar::Scalar;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Salt separating the initialization stream from per-iteration streams.
pub(crate) const INIT_DOMAIN: u64 = 0x1D17_A55E_0000_0001;
/// Salt for held-out inference streams.
pub(crate) const EVAL_DOMAIN: u64 = 0xE7A1_0000_0000_0002;

#[derive(Clone, Debug)]
pub struct RngStream {
    state: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let key = mix64(seed.wrapping_add(GOLDEN_GAMMA));
        let state = mix64(key ^ mix64(stream.wrapping_mul(GOLDEN_GAMMA).wrapping_add(key)));
        RngStream { state }
    }

    /// Stream for one token in one training iteration.
    pub fn for_token(seed: u64, iteration: u64, token: u64) -> Self {
        let iter_seed = mix64(seed ^ mix64(iteration.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)));
        RngStream::new(iter_seed, token)
    }

    #[inline]
    pub fn next_word(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// Uniform in `[0, 1)` at the precision of `F`.
    #[inline]
    pub fn uniform<F: Scalar>(&mut self) -> F {
        F::unit_from_bits(self.next_word())
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        (self.next_word() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        self.next_word()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let bytes = self.next_word().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<u64> = (0..4)
            .map({
                let mut r = RngStream::new(7, 3);
                move |_| r.next_word()
            })
            .collect();
        let b: Vec<u64> = (0..4)
            .map({
                let mut r = RngStream::new(7, 3);
                move |_| r.next_word()
            })
            .collect();
        let c: Vec<u64> = (0..4)
            .map({
                let mut r = RngStream::new(7, 4);
                move |_| r.next_word()
            })
            .collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(RngStream::for_token(1, 0, 5).next_word(), RngStream::for_token(1, 1, 5).next_word());
    }

    #[test]
    fn uniform_mean_is_one_half() {
        let mut r = RngStream::new(42, 0);
        let n = 200_000;
        let mean: f64 = (0..n).map(|_| r.uniform::<f64>()).sum::<f64>() / n as f64;
        // sd of the mean is 1/sqrt(12 n) ~ 6.5e-4
        assert!((mean - 0.5).abs() < 5.0 * 6.5e-4, "mean {mean}");
    }
}
