use serde::{Deserialize, Serialize};

use super::BiTemporalSample;
use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TileMode {
    /// Drop partial tiles at the right and bottom edges.
    Strict,
    /// Pad up to the next tile multiple.
    Pad,
}

/// Fill used for image pixels beyond the raster in pad mode. Masks always pad with 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImagePad {
    Edge,
    Constant(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TileSpec {
    pub tile_size: usize,
    pub mode: TileMode,
    pub pad_value: ImagePad,
}

impl Default for TileSpec {
    fn default() -> Self {
        Self {
            tile_size: 256,
            mode: TileMode::Pad,
            pad_value: ImagePad::Edge,
        }
    }
}

impl TileSpec {
    pub fn new(tile_size: usize, mode: TileMode) -> Result<Self> {
        let s = Self {
            tile_size,
            mode,
            ..Self::default()
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tile_size == 0 {
            return Err(Error::Config("tile size must be positive".into()));
        }
        Ok(())
    }
}

/// Row-major tile layout over an `height × width` raster.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TileGrid {
    pub height: usize,
    pub width: usize,
    pub tile: usize,
    pub rows: usize,
    pub cols: usize,
}

impl TileGrid {
    pub fn new(height: usize, width: usize, spec: &TileSpec) -> Result<Self> {
        spec.validate()?;
        let s = spec.tile_size;
        let (rows, cols) = match spec.mode {
            TileMode::Strict => (height / s, width / s),
            TileMode::Pad => (height.div_ceil(s), width.div_ceil(s)),
        };
        if rows * cols == 0 {
            log::warn!("{height}x{width} raster yields no {s}x{s} tiles in {:?} mode", spec.mode);
        }
        Ok(Self {
            height,
            width,
            tile: s,
            rows,
            cols,
        })
    }

    pub fn count(&self) -> usize {
        self.rows * self.cols
    }

    /// `(row, col)` of the `k`-th tile.
    pub fn position(&self, k: usize) -> (usize, usize) {
        (k / self.cols, k % self.cols)
    }

    fn origin(&self, k: usize) -> (usize, usize) {
        let (r, c) = self.position(k);
        (r * self.tile, c * self.tile)
    }
}

fn tile_image<T: Scalar>(img: &Tensor<T>, grid: &TileGrid, pad: ImagePad) -> Result<Vec<Tensor<T>>> {
    let (ch, h, w) = img.dims3()?;
    let s = grid.tile;
    let d = img.data();
    Ok((0..grid.count())
        .map(|k| {
            let (r0, c0) = grid.origin(k);
            let mut out = Vec::with_capacity(ch * s * s);
            for c in 0..ch {
                for y in r0..r0 + s {
                    for x in c0..c0 + s {
                        out.push(match pad {
                            _ if y < h && x < w => d[c * h * w + y * w + x],
                            ImagePad::Edge => d[c * h * w + y.min(h - 1) * w + x.min(w - 1)],
                            ImagePad::Constant(v) => T::lit(v),
                        });
                    }
                }
            }
            Tensor::new([ch, s, s], out).expect("tile buffer matches tile shape")
        })
        .collect())
}

fn tile_mask(mask: &BinaryMask, grid: &TileGrid) -> Vec<BinaryMask> {
    let s = grid.tile;
    (0..grid.count())
        .map(|k| {
            let (r0, c0) = grid.origin(k);
            let mut m = BinaryMask::zeros(s, s);
            for y in r0..(r0 + s).min(mask.height()) {
                for x in c0..(c0 + s).min(mask.width()) {
                    m.data_mut()[(y - r0) * s + (x - c0)] = mask.get(y, x);
                }
            }
            m
        })
        .collect()
}

/// Cuts a sample into row-major tiles using one grid for all three rasters.
pub fn tile_pair<T: Scalar>(sample: &BiTemporalSample<T>, spec: &TileSpec) -> Result<Vec<BiTemporalSample<T>>> {
    let grid = TileGrid::new(sample.height(), sample.width(), spec)?;
    let a = tile_image(&sample.t1, &grid, spec.pad_value)?;
    let b = tile_image(&sample.t2, &grid, spec.pad_value)?;
    let m = tile_mask(&sample.mask, &grid);
    Ok(a
        .into_iter()
        .zip(b)
        .zip(m)
        .map(|((t1, t2), mask)| BiTemporalSample { t1, t2, mask })
        .collect())
}

fn check_tiles(n: usize, grid: &TileGrid) -> Result<()> {
    if n != grid.count() {
        return Err(Error::CountMismatch {
            expected: grid.count(),
            found: n,
        });
    }
    Ok(())
}

/// Stitches row-major tiles and crops to the grid's raster extent.
pub fn untile_image<T: Scalar>(tiles: &[Tensor<T>], grid: &TileGrid) -> Result<Tensor<T>> {
    check_tiles(tiles.len(), grid)?;
    let ch = match tiles.first() {
        Some(t) => t.dims3()?.0,
        None => return Err(Error::Empty("no tiles to stitch".into())),
    };
    let (h, w, s) = (grid.rows * grid.tile, grid.cols * grid.tile, grid.tile);
    let (oh, ow) = (grid.height.min(h), grid.width.min(w));
    let mut out = Tensor::zeros([ch, oh, ow]);
    for (k, t) in tiles.iter().enumerate() {
        if t.shape() != [ch, s, s] {
            return Err(Error::shape(format!("tile {k} has shape {:?}", t.shape())));
        }
        let (r0, c0) = grid.origin(k);
        for c in 0..ch {
            for y in r0..(r0 + s).min(oh) {
                for x in c0..(c0 + s).min(ow) {
                    out.data_mut()[c * oh * ow + y * ow + x] = t.data()[c * s * s + (y - r0) * s + (x - c0)];
                }
            }
        }
    }
    Ok(out)
}

pub fn untile_mask(tiles: &[BinaryMask], grid: &TileGrid) -> Result<BinaryMask> {
    check_tiles(tiles.len(), grid)?;
    let s = grid.tile;
    let (oh, ow) = (grid.height.min(grid.rows * s), grid.width.min(grid.cols * s));
    let mut out = BinaryMask::zeros(oh, ow);
    for (k, t) in tiles.iter().enumerate() {
        if (t.height(), t.width()) != (s, s) {
            return Err(Error::shape(format!("tile {k} is {}x{}", t.height(), t.width())));
        }
        let (r0, c0) = grid.origin(k);
        for y in r0..(r0 + s).min(oh) {
            for x in c0..(c0 + s).min(ow) {
                out.data_mut()[y * ow + x] = t.get(y - r0, x - c0);
            }
        }
    }
    Ok(out)
}
