use std::path::Path;

use super::checkpoint::write_atomic;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Pixel value of the 1-pixel lines between tiles.
pub const SEPARATOR: u8 = 0;

/// `rows × cols` equally shaped tiles, stored row-major by tile, each tile
/// `channels×height×width` with values in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct ImageGrid {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub tiles: Vec<f32>,
}

impl ImageGrid {
    /// Lays a `B×C×H×W` batch out row-major; requires `B == rows·cols`.
    pub fn from_batch(images: &Tensor<f32>, rows: usize, cols: usize) -> Result<Self> {
        let [b, c, h, w] = images.shape()[..] else {
            return Err(Error::dim(format!("image grid needs B×C×H×W tiles, got {:?}", images.shape())));
        };
        if b != rows * cols {
            return Err(Error::dim(format!("{b} tiles cannot fill a {rows}×{cols} grid")));
        }
        if c != 1 && c != 3 {
            return Err(Error::dim(format!("tiles must have 1 or 3 channels, got {c}")));
        }
        Ok(Self { rows, cols, channels: c, height: h, width: w, tiles: images.data().to_vec() })
    }

    /// Near-square layout: the largest divisor of `count` not above its
    /// square root gives the row count.
    pub fn layout(count: usize) -> (usize, usize) {
        let rows = (1..=count).take_while(|r| r * r <= count).filter(|r| count % r == 0).last().unwrap_or(1);
        (rows, count / rows.max(1))
    }

    pub fn tile(&self, row: usize, col: usize) -> &[f32] {
        let size = self.channels * self.height * self.width;
        let i = row * self.cols + col;
        &self.tiles[i * size..(i + 1) * size]
    }

    pub fn canvas_size(&self) -> (usize, usize) {
        (self.cols * (self.width + 1) - 1, self.rows * (self.height + 1) - 1)
    }

    /// Interleaved 8-bit pixels of the whole grid, row-major.
    pub fn to_pixels(&self) -> Vec<u8> {
        let (cw, ch) = self.canvas_size();
        let c = self.channels;
        let mut out = vec![SEPARATOR; cw * ch * c];
        let plane = self.height * self.width;
        for r in 0..self.rows {
            for col in 0..self.cols {
                let tile = self.tile(r, col);
                for y in 0..self.height {
                    for x in 0..self.width {
                        let (py, px) = (r * (self.height + 1) + y, col * (self.width + 1) + x);
                        for k in 0..c {
                            out[(py * cw + px) * c + k] = to_byte(tile[k * plane + y * self.width + x]);
                        }
                    }
                }
            }
        }
        out
    }

    /// Binary PGM (`P5`) for grayscale or PPM (`P6`) for RGB.
    pub fn to_pnm(&self) -> Vec<u8> {
        let (w, h) = self.canvas_size();
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
        out.extend(self.to_pixels());
        out
    }
}

fn to_byte(v: f32) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

pub fn export_grid(grid: &ImageGrid, path: &Path) -> Result<()> {
    write_atomic(path, &grid.to_pnm())
}
