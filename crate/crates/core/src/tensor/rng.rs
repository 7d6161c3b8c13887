use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Counter-addressed source of dropout masks.
///
/// Each mask is drawn from a fresh ChaCha stream keyed on
/// `(seed, epoch, batch, op_index)`, so a mask never depends on how many
/// random numbers earlier ops consumed.
#[derive(Clone, Debug)]
pub struct MaskStream {
    seed: u64,
    epoch: u64,
    batch: u64,
    op_index: u64,
}

impl MaskStream {
    pub fn new(seed: u64, epoch: u64, batch: u64) -> Self {
        Self {
            seed,
            epoch,
            batch,
            op_index: 0,
        }
    }

    /// Keep-mask for `len` units: each entry is `1/(1-rate)` with probability
    /// `1 - rate`, else 0.
    pub fn next_mask(&mut self, len: usize, rate: f64) -> Vec<f64> {
        let key = mix(
            mix(
                mix(mix(0x5354_414d_5000_0001, self.seed), self.epoch),
                self.batch,
            ),
            self.op_index,
        );
        self.op_index += 1;
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        let keep = 1.0 / (1.0 - rate);
        (0..len)
            .map(|_| {
                if rng.random::<f64>() < rate {
                    0.0
                } else {
                    keep
                }
            })
            .collect()
    }

    pub fn op_index(&self) -> u64 {
        self.op_index
    }
}

fn mix(acc: u64, v: u64) -> u64 {
    // splitmix64 finalizer over the running key
    let mut z = acc ^ v.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(acc << 6);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn masks_depend_only_on_address() {
        let mut a = MaskStream::new(7, 1, 2);
        let mut b = MaskStream::new(7, 1, 2);
        assert_eq!(a.next_mask(64, 0.3), b.next_mask(64, 0.3));
        let second = a.next_mask(64, 0.3);
        assert_ne!(second, MaskStream::new(7, 1, 3).next_mask(64, 0.3));
        assert_eq!(second, b.next_mask(64, 0.3));
    }

    #[test]
    fn zero_rate_keeps_everything() {
        let m = MaskStream::new(1, 0, 0).next_mask(100, 0.0);
        assert!(m.iter().all(|&v| v == 1.0));
    }
}
