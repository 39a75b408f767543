//! Change-map rendering and frequency index inspection.

use std::fmt;

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::spectral::{dct_basis, FrequencyIndexSet};

/// Colour per confusion outcome.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RenderPalette {
    pub tp: [u8; 3],
    pub tn: [u8; 3],
    pub fp: [u8; 3],
    pub fn_: [u8; 3],
}

impl Default for RenderPalette {
    fn default() -> Self {
        Self {
            tp: [255, 255, 255],
            tn: [0, 0, 0],
            fp: [255, 0, 0],
            fn_: [0, 255, 0],
        }
    }
}

impl RenderPalette {
    pub fn color(&self, pred: bool, gt: bool) -> [u8; 3] {
        match (pred, gt) {
            (true, true) => self.tp,
            (false, false) => self.tn,
            (true, false) => self.fp,
            (false, true) => self.fn_,
        }
    }
}

pub fn render_change_map(pred: &BinaryMask, gt: &BinaryMask, palette: &RenderPalette) -> Result<RgbImage> {
    if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
        return Err(Error::shape(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    Ok(ImageBuffer::from_fn(pred.width() as u32, pred.height() as u32, |x, y| {
        let (r, c) = (y as usize, x as usize);
        Rgb(palette.color(pred.get(r, c), gt.get(r, c)))
    }))
}

/// Basis matrix min-max scaled to 8 bits; a constant basis renders mid-gray.
pub fn render_basis(height: usize, width: usize, u: usize, v: usize) -> Result<GrayImage> {
    let b = dct_basis::<f64>(height, width, u, v)?;
    let (lo, hi) = b
        .values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let span = hi - lo;
    Ok(ImageBuffer::from_fn(width as u32, height as u32, |x, y| {
        let val = b.at(y as usize, x as usize);
        let g = if span < 1e-12 { 128.0 } else { 255.0 * (val - lo) / span };
        Luma([g.round() as u8])
    }))
}

/// Effective indices of an index set on one feature-map extent.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrequencyReport {
    pub height: usize,
    pub width: usize,
    pub base_grid: (usize, usize),
    pub scale: (usize, usize),
    pub declared: Vec<(usize, usize)>,
    pub effective: Vec<(usize, usize)>,
}

pub fn freq_inspect(idx: &FrequencyIndexSet, height: usize, width: usize) -> FrequencyReport {
    FrequencyReport {
        height,
        width,
        base_grid: idx.base_grid(),
        scale: idx.scale_factors(height, width),
        declared: idx.indices().to_vec(),
        effective: idx.effective(height, width),
    }
}

impl FrequencyReport {
    pub fn basis_images(&self) -> Result<Vec<((usize, usize), GrayImage)>> {
        self.effective
            .iter()
            .map(|&(u, v)| Ok(((u, v), render_basis(self.height, self.width, u, v)?)))
            .collect()
    }
}

impl fmt::Display for FrequencyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "feature {}x{}, base grid {}x{}, scale factor {}x{}",
            self.height, self.width, self.base_grid.0, self.base_grid.1, self.scale.0, self.scale.1
        )?;
        writeln!(f, "k  declared  effective")?;
        for (k, (d, e)) in self.declared.iter().zip(&self.effective).enumerate() {
            writeln!(f, "{k:<2} ({}, {})    ({}, {})", d.0, d.1, e.0, e.1)?;
        }
        Ok(())
    }
}
