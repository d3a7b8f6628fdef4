//! Splittable, counter-based random streams.
//!
//! A [`RandomStream`] is a `(master_seed, stream_index)` pair. The master
//! seed keys a ChaCha8 generator and the index selects its stream, so every
//! sample in a run can draw from its own independent sequence no matter which
//! worker produces it or in what order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RandomStream {
    pub master_seed: u64,
    pub stream_index: u64,
}

impl RandomStream {
    pub fn new(master_seed: u64, stream_index: u64) -> Self {
        Self {
            master_seed,
            stream_index,
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_index);
        rng
    }
}

pub fn gaussian_sample(stream: RandomStream, count: usize, sigma: f64) -> Result<Vec<f64>> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::invalid("sigma", format!("must be finite and >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(vec![0.0; count]);
    }
    let mut rng = stream.rng();
    Ok((0..count)
        .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
        .collect())
}

pub fn bernoulli_mask(stream: RandomStream, count: usize, keep_prob: f64) -> Result<Vec<bool>> {
    if !(keep_prob > 0.0 && keep_prob <= 1.0) {
        return Err(Error::invalid(
            "keep_prob",
            format!("must lie in (0, 1], got {keep_prob}"),
        ));
    }
    let mut rng = stream.rng();
    // random::<f64>() lies in [0, 1), so keep_prob = 1 keeps everything.
    Ok((0..count).map(|_| rng.random::<f64>() < keep_prob).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_sigma_is_all_zeros() {
        let v = gaussian_sample(RandomStream::new(1, 0), 100, 0.0).unwrap();
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn negative_sigma_rejected() {
        assert!(gaussian_sample(RandomStream::new(1, 0), 10, -0.1).is_err());
        assert!(gaussian_sample(RandomStream::new(1, 0), 10, f64::NAN).is_err());
    }

    #[test]
    fn unit_gaussian_moments() {
        let n = 1_000_000;
        let v = gaussian_sample(RandomStream::new(7, 3), n, 1.0).unwrap();
        let mean = v.iter().sum::<f64>() / n as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() <= 0.005, "mean {mean}");
        let sd = var.sqrt();
        assert!((0.995..=1.005).contains(&sd), "sd {sd}");
    }

    #[test]
    fn same_stream_same_sequence() {
        let s = RandomStream::new(42, 9);
        assert_eq!(gaussian_sample(s, 64, 0.5).unwrap(), gaussian_sample(s, 64, 0.5).unwrap());
        assert_eq!(bernoulli_mask(s, 64, 0.3).unwrap(), bernoulli_mask(s, 64, 0.3).unwrap());
    }

    #[test]
    fn distinct_indices_differ() {
        let a = gaussian_sample(RandomStream::new(42, 0), 32, 1.0).unwrap();
        let b = gaussian_sample(RandomStream::new(42, 1), 32, 1.0).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn keep_all_when_prob_one() {
        assert!(bernoulli_mask(RandomStream::new(3, 0), 10_000, 1.0).unwrap().iter().all(|&b| b));
    }

    #[test]
    fn keep_prob_out_of_range_rejected() {
        for p in [0.0, -0.5, 1.5, f64::NAN] {
            assert!(bernoulli_mask(RandomStream::new(3, 0), 4, p).is_err(), "{p}");
        }
    }

    #[test]
    fn half_mask_fraction() {
        let n = 1_000_000;
        let m = bernoulli_mask(RandomStream::new(11, 2), n, 0.5).unwrap();
        let frac = m.iter().filter(|&&b| b).count() as f64 / n as f64;
        assert!((frac - 0.5).abs() <= 0.002, "fraction {frac}");
    }

    #[test]
    fn stream_is_thread_independent() {
        let s = RandomStream::new(5, 17);
        let expected = gaussian_sample(s, 256, 1.0).unwrap();
        let handles: Vec<_> = (0..4)
            .map(|_| std::thread::spawn(move || gaussian_sample(s, 256, 1.0).unwrap()))
            .collect();
        for h in handles {
            assert_eq!(h.join().unwrap(), expected);
        }
    }
}
