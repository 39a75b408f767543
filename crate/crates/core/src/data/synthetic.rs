use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::BiTemporalSample;
use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Pairs whose only change is a few bright squares added to the second date.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub size: usize,
    pub squares: (usize, usize),
    pub side: (usize, usize),
    /// Per-pixel acquisition noise on both dates.
    pub noise: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            size: 64,
            squares: (1, 3),
            side: (8, 20),
            noise: 0.02,
        }
    }
}

pub fn synthetic_pairs<T: Scalar>(count: usize, spec: &SyntheticSpec, seed: u64) -> Result<Vec<BiTemporalSample<T>>> {
    let s = spec.size;
    if s == 0 || spec.side.0 == 0 || spec.side.1 > s || spec.side.0 > spec.side.1 || spec.squares.0 > spec.squares.1 {
        return Err(Error::Config(format!("invalid synthetic spec {spec:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            // smooth per-channel background gradient
            let base: Vec<[f64; 3]> = (0..3)
                .map(|_| [rng.random_range(0.15..0.45), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)])
                .collect();
            let mut t1 = Tensor::<T>::zeros([3, s, s]);
            let mut t2 = Tensor::<T>::zeros([3, s, s]);
            let mut mask = BinaryMask::zeros(s, s);
            let n_sq = rng.random_range(spec.squares.0..=spec.squares.1);
            for _ in 0..n_sq {
                let side = rng.random_range(spec.side.0..=spec.side.1);
                let (r0, c0) = (rng.random_range(0..=s - side), rng.random_range(0..=s - side));
                for r in r0..r0 + side {
                    for c in c0..c0 + side {
                        mask.data_mut()[r * s + c] = true;
                    }
                }
            }
            let bright: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.85..1.0));
            for (ch, b) in base.iter().enumerate() {
                for r in 0..s {
                    for c in 0..s {
                        let i = r * s + c;
                        let bg = b[0] + b[1] * r as f64 / s as f64 + b[2] * c as f64 / s as f64;
                        let n1 = spec.noise * rng.random_range(-1.0..1.0);
                        let n2 = spec.noise * rng.random_range(-1.0..1.0);
                        let v2 = if mask.data()[i] { bright[ch] } else { bg };
                        t1.data_mut()[ch * s * s + i] = T::lit((bg + n1).clamp(0.0, 1.0));
                        t2.data_mut()[ch * s * s + i] = T::lit((v2 + n2).clamp(0.0, 1.0));
                    }
                }
            }
            BiTemporalSample::new(t1, t2, mask)
        })
        .collect()
}
