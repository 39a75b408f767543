//! Whole-scene inference by tiling.

use std::path::Path;

use crate::data::{load_image, untile_mask, BiTemporalSample, TileGrid, TileMode, TileSpec};
use crate::data::tile_pair;
use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::model::ENCODER_STRIDE;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::train::Model;

/// Binary change map congruent with the input scene. Tiles are padded at the
/// scene border, predicted in row-major batches and cropped back.
pub fn predict_scene<T: Scalar>(
    model: &Model<T>,
    t1: &Tensor<T>,
    t2: &Tensor<T>,
    tile: &TileSpec,
    batch_size: usize,
) -> Result<BinaryMask> {
    let (_, h, w) = t1.dims3()?;
    if !tile.tile_size.is_multiple_of(ENCODER_STRIDE) {
        return Err(Error::Config(format!(
            "tile size {} is not a multiple of {ENCODER_STRIDE}",
            tile.tile_size
        )));
    }
    let spec = TileSpec {
        mode: TileMode::Pad,
        ..*tile
    };
    if tile.mode != TileMode::Pad {
        log::info!("scene prediction always pads partial tiles");
    }
    let sample = BiTemporalSample::new(t1.clone(), t2.clone(), BinaryMask::zeros(h, w))?;
    let grid = TileGrid::new(h, w, &spec)?;
    let tiles = tile_pair(&sample, &spec)?;
    let mut preds = Vec::with_capacity(tiles.len());
    for chunk in tiles.chunks(batch_size.max(1)) {
        let refs: Vec<_> = chunk.iter().collect();
        preds.extend(model.predict(&refs)?);
    }
    untile_mask(&preds, &grid)
}

pub fn predict_scene_files<T: Scalar>(
    model: &Model<T>,
    t1_path: &Path,
    t2_path: &Path,
    tile: &TileSpec,
    batch_size: usize,
) -> Result<BinaryMask> {
    let t1 = load_image(t1_path, false)?;
    let t2 = load_image(t2_path, false)?;
    if t1.shape() != t2.shape() {
        return Err(Error::shape(format!(
            "scene extents differ: {:?} vs {:?}",
            &t1.shape()[1..],
            &t2.shape()[1..]
        )));
    }
    predict_scene(model, &t1, &t2, tile, batch_size)
}
