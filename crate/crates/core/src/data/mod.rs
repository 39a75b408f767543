//! Bi-temporal samples, raster I/O, tiling, splits and augmentation.

mod augment;
mod dataset;
mod split;
mod synthetic;
mod tiling;

use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

pub use augment::{augment, Dihedral};
pub(crate) use augment::augment_with;
pub use dataset::{read_manifest, write_manifest, DirectoryDataset, ManifestRow, MANIFEST_FILE};
pub use split::{split_dataset, Split, SplitName, SplitSpec};
pub use synthetic::{synthetic_pairs, SyntheticSpec};
pub use tiling::{tile_pair, untile_image, untile_mask, ImagePad, TileGrid, TileMode, TileSpec};

use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Co-registered image pair with its change mask. Images are `[3, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BiTemporalSample<T> {
    pub t1: Tensor<T>,
    pub t2: Tensor<T>,
    pub mask: BinaryMask,
}

impl<T: Scalar> BiTemporalSample<T> {
    pub fn new(t1: Tensor<T>, t2: Tensor<T>, mask: BinaryMask) -> Result<Self> {
        let (c1, h1, w1) = t1.dims3()?;
        let (c2, h2, w2) = t2.dims3()?;
        if c1 != 3 || c2 != 3 {
            return Err(Error::shape(format!("images must have 3 channels, got {c1} and {c2}")));
        }
        if (h1, w1) != (h2, w2) || (h1, w1) != (mask.height(), mask.width()) {
            return Err(Error::shape(format!(
                "extent mismatch: t1 {h1}x{w1}, t2 {h2}x{w2}, mask {}x{}",
                mask.height(),
                mask.width()
            )));
        }
        Ok(Self { t1, t2, mask })
    }

    pub fn height(&self) -> usize {
        self.mask.height()
    }

    pub fn width(&self) -> usize {
        self.mask.width()
    }
}

fn decode(path: &Path) -> Result<image::DynamicImage> {
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
        ));
    }
    image::open(path).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// RGB raster scaled to `[0, 1]`, optionally mapped to `[-1, 1]`.
pub fn load_image<T: Scalar>(path: &Path, normalize: bool) -> Result<Tensor<T>> {
    let img = decode(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![T::zero(); 3 * h * w];
    for (i, px) in img.pixels().enumerate() {
        for c in 0..3 {
            let v = f64::from(px.0[c]) / 255.0;
            data[c * h * w + i] = T::lit(if normalize { (v - 0.5) / 0.5 } else { v });
        }
    }
    Tensor::new([3, h, w], data)
}

/// Single-channel raster binarized at half intensity.
pub fn load_mask(path: &Path) -> Result<BinaryMask> {
    let img = decode(path)?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    BinaryMask::new(h, w, img.pixels().map(|p| p.0[0] >= 128).collect())
}

pub fn load_sample<T: Scalar>(
    t1_path: &Path,
    t2_path: &Path,
    mask_path: &Path,
    normalize: bool,
) -> Result<BiTemporalSample<T>> {
    let t1 = load_image(t1_path, normalize)?;
    let t2 = load_image(t2_path, normalize)?;
    let mask = load_mask(mask_path)?;
    BiTemporalSample::new(t1, t2, mask)
}

fn write_err(path: &Path, e: image::ImageError) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

/// Writes a `[3, H, W]` tensor in `[0, 1]` as 8-bit RGB.
pub fn save_image<T: Scalar>(img: &Tensor<T>, path: &Path) -> Result<()> {
    let (c, h, w) = img.dims3()?;
    if c != 3 {
        return Err(Error::shape(format!("expected 3 channels, got {c}")));
    }
    let d = img.data();
    let out: RgbImage = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        let q = |v: T| (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8;
        Rgb([q(d[i]), q(d[h * w + i]), q(d[2 * h * w + i])])
    });
    out.save(path).map_err(|e| write_err(path, e))
}

/// Writes a mask as 0/255 grayscale.
pub fn save_mask(mask: &BinaryMask, path: &Path) -> Result<()> {
    let out: GrayImage = ImageBuffer::from_fn(mask.width() as u32, mask.height() as u32, |x, y| {
        Luma([if mask.get(y as usize, x as usize) { 255 } else { 0 }])
    });
    out.save(path).map_err(|e| write_err(path, e))
}

pub fn save_rgb(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path).map_err(|e| write_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_is_binarized_and_normalization_centres() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("m.png");
        GrayImage::from_fn(2, 1, |x, _| Luma([if x == 0 { 0 } else { 255 }]))
            .save(&m)
            .unwrap();
        assert_eq!(load_mask(&m).unwrap().data(), &[false, true]);

        let p = dir.path().join("a.png");
        RgbImage::from_pixel(2, 2, Rgb([0, 255, 0])).save(&p).unwrap();
        let t: Tensor<f64> = load_image(&p, true).unwrap();
        assert_eq!(&t.data()[..4], &[-1.0; 4]);
        assert_eq!(&t.data()[4..8], &[1.0; 4]);
    }

    #[test]
    fn extent_mismatch_names_both_extents() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b, m) = (dir.path().join("a.png"), dir.path().join("b.png"), dir.path().join("m.png"));
        RgbImage::new(4, 4).save(&a).unwrap();
        RgbImage::new(4, 3).save(&b).unwrap();
        GrayImage::new(4, 4).save(&m).unwrap();
        let err = load_sample::<f32>(&a, &b, &m, false).unwrap_err().to_string();
        assert!(err.contains("4x4") && err.contains("3x4"), "{err}");
    }

    #[test]
    fn undecodable_and_missing_files() {
        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.png");
        std::fs::write(&bad, b"not an image").unwrap();
        assert!(matches!(load_mask(&bad), Err(Error::Format { .. })));
        assert!(matches!(load_mask(&dir.path().join("nope.png")), Err(Error::Io { .. })));
    }

    #[test]
    fn png_roundtrip_is_exact_on_byte_grid() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.png");
        let t = Tensor::<f32>::from_fn([3, 2, 3], |i| ((i * 13 % 256) as f64 / 255.0) as f32);
        save_image(&t, &p).unwrap();
        let back: Tensor<f32> = load_image(&p, false).unwrap();
        assert_eq!(t, back);
    }
}
