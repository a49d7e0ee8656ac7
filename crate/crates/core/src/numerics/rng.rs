use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::numerics::Tensor;
use crate::scalar::Scalar;

/// Counter-based random stream identified by `(seed, stream_id)`.
///
/// Two streams with the same pair replay the same draws; distinct stream ids
/// select disjoint ChaCha20 keystreams. Workers never share a stream; they
/// [`derive`](RngStream::derive) their own.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha20Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Position of the underlying block counter, in 32-bit words.
    pub fn counter(&self) -> u128 {
        self.rng.get_word_pos()
    }

    /// A fresh stream keyed by this stream's identity and `child`.
    ///
    /// Independent of how many values were already drawn from `self`.
    pub fn derive(&self, child: u64) -> Self {
        Self::new(self.seed, mix(self.stream_id, child))
    }

    /// Rewinds to the first draw.
    pub fn reset(&mut self) {
        *self = Self::new(self.seed, self.stream_id);
    }

    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform draw on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.random()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

fn mix(a: u64, b: u64) -> u64 {
    // splitmix64 finaliser over the pair
    let mut z = a
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(b.wrapping_add(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// I.i.d. standard-normal tensor of the given shape.
pub fn gaussian_sample<S: Scalar>(rng: &mut RngStream, shape: &[usize]) -> Tensor<S> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| S::lit(rng.normal())).collect();
    Tensor::new(shape.to_vec(), data).expect("shape product matches")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::special::normal_cdf;

    #[test]
    fn replay_after_reset() {
        let mut a = RngStream::new(7, 0);
        let x: Tensor = gaussian_sample(&mut a, &[2]);
        a.reset();
        let y: Tensor = gaussian_sample(&mut a, &[2]);
        assert_eq!(x, y);
        let mut b = RngStream::new(7, 1);
        let z: Tensor = gaussian_sample(&mut b, &[2]);
        assert_ne!(x, z);
    }

    #[test]
    fn empty_shape_gives_empty_tensor() {
        let mut a = RngStream::new(1, 0);
        let t: Tensor = gaussian_sample(&mut a, &[0]);
        assert!(t.is_empty());
        assert_eq!(t.shape(), &[0]);
    }

    #[test]
    fn moments_of_a_million_draws() {
        let mut a = RngStream::new(11, 3);
        let t: Tensor = gaussian_sample(&mut a, &[1_000_000]);
        let n = t.len() as f64;
        let mean = t.sum() / n;
        let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        // 3-sigma CLT band: 3/sqrt(1e6) = 0.003 for the mean, ~0.0042 for the variance
        assert!(mean.abs() < 0.005, "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn kolmogorov_smirnov_against_normal_cdf() {
        let mut a = RngStream::new(5, 9);
        let t: Tensor = gaussian_sample(&mut a, &[100_000]);
        let mut v = t.into_data();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = v.len() as f64;
        let ks = v
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = normal_cdf(x);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 0.01, "KS statistic {ks}");
    }

    #[test]
    fn derived_streams_do_not_depend_on_parent_position() {
        let mut a = RngStream::new(3, 4);
        let c1 = a.derive(2);
        a.normal();
        let c2 = a.derive(2);
        let (mut c1, mut c2) = (c1, c2);
        assert_eq!(c1.normal(), c2.normal());
    }
}
