use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::BiTemporalSample;
use crate::mask::BinaryMask;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Element of the square's symmetry group: an optional horizontal flip
/// followed by `quarter_turns` counter-clockwise rotations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct Dihedral {
    pub quarter_turns: u8,
    pub flip: bool,
}

impl Dihedral {
    pub const IDENTITY: Self = Self {
        quarter_turns: 0,
        flip: false,
    };

    pub fn all() -> [Self; 8] {
        std::array::from_fn(Self::from_index)
    }

    /// `i` in `0..8`.
    pub fn from_index(i: usize) -> Self {
        Self {
            quarter_turns: (i % 4) as u8,
            flip: i >= 4,
        }
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self::from_index(rng.random_range(0..8))
    }

    /// `self` first, then `next`.
    pub fn then(self, next: Self) -> Self {
        // F R^k = R^-k F
        let k1 = if next.flip {
            (4 - self.quarter_turns) % 4
        } else {
            self.quarter_turns
        };
        Self {
            quarter_turns: (next.quarter_turns + k1) % 4,
            flip: self.flip ^ next.flip,
        }
    }

    /// Same element without its rotation.
    pub fn flip_only(self) -> Self {
        Self {
            quarter_turns: 0,
            flip: self.flip,
        }
    }

    /// Destination of source pixel `(r, c)` in an `h × w` raster, plus the output extent.
    pub fn map_coord(self, r: usize, c: usize, h: usize, w: usize) -> ((usize, usize), (usize, usize)) {
        let (mut r, mut c, mut h, mut w) = (r, if self.flip { w - 1 - c } else { c }, h, w);
        for _ in 0..self.quarter_turns {
            (r, c) = (w - 1 - c, r);
            (h, w) = (w, h);
        }
        ((r, c), (h, w))
    }

    fn scatter<V: Copy + Default>(self, src: &[V], h: usize, w: usize) -> (Vec<V>, usize, usize) {
        let (_, (oh, ow)) = self.map_coord(0, 0, h, w);
        let mut out = vec![V::default(); h * w];
        for r in 0..h {
            for c in 0..w {
                let ((rr, cc), _) = self.map_coord(r, c, h, w);
                out[rr * ow + cc] = src[r * w + c];
            }
        }
        (out, oh, ow)
    }

    pub fn apply_image<T: Scalar>(self, img: &Tensor<T>) -> Tensor<T> {
        let (ch, h, w) = img.dims3().expect("image is [C, H, W]");
        let mut data = Vec::with_capacity(img.len());
        let (mut oh, mut ow) = (h, w);
        for plane in img.data().chunks(h * w).take(ch) {
            let (p, a, b) = self.scatter(plane, h, w);
            (oh, ow) = (a, b);
            data.extend(p);
        }
        Tensor::new([ch, oh, ow], data).expect("same element count")
    }

    pub fn apply_mask(self, mask: &BinaryMask) -> BinaryMask {
        let (d, oh, ow) = self.scatter(mask.data(), mask.height(), mask.width());
        BinaryMask::new(oh, ow, d).expect("same element count")
    }

    pub fn apply<T: Scalar>(self, s: &BiTemporalSample<T>) -> BiTemporalSample<T> {
        BiTemporalSample {
            t1: self.apply_image(&s.t1),
            t2: self.apply_image(&s.t2),
            mask: self.apply_mask(&s.mask),
        }
    }
}

/// Applies one uniformly drawn group element to all three rasters.
/// Rotations are dropped for non-square samples.
pub fn augment<T: Scalar>(sample: &BiTemporalSample<T>, seed: u64) -> (BiTemporalSample<T>, Dihedral) {
    augment_with(sample, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub(crate) fn augment_with<T: Scalar, R: Rng + ?Sized>(
    sample: &BiTemporalSample<T>,
    rng: &mut R,
) -> (BiTemporalSample<T>, Dihedral) {
    let mut g = Dihedral::random(rng);
    if sample.height() != sample.width() && g.quarter_turns != 0 {
        log::debug!("non-square sample: {g:?} reduced to flip only");
        g = g.flip_only();
    }
    (g.apply(sample), g)
}
