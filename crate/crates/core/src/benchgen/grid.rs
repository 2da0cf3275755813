//! Decision-grid geometry: cell-to-pixel reconstruction and boolean rasters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grid cell as `(row, col)`.
pub type Cell = (usize, usize);

/// Pixel position `(x, y)` of a cell plus sub-cell offset.
pub fn cell_to_pixel(i: usize, j: usize, dx: f64, dy: f64, d: f64) -> Result<(f64, f64)> {
    let inside = |v: f64| (0.0..d).contains(&v);
    if !inside(dx) || !inside(dy) {
        return Err(Error::OffsetOutOfRange { dx, dy, d });
    }
    Ok((j as f64 * d + dx, i as f64 * d + dy))
}

/// Row-major boolean image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl Raster {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        x < self.width && y < self.height && self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        assert!(x < self.width && y < self.height, "pixel out of bounds");
        self.data[y * self.width + x] = v;
    }

    /// True iff the continuous point falls on a set pixel; anything outside
    /// the image is false.
    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        if !(x >= 0.0 && y >= 0.0) {
            return false;
        }
        let (px, py) = (x.floor() as usize, y.floor() as usize);
        self.get(px, py)
    }

    pub fn fill_rect(&mut self, x0: usize, y0: usize, w: usize, h: usize) {
        for y in y0..(y0 + h).min(self.height) {
            for x in x0..(x0 + w).min(self.width) {
                self.data[y * self.width + x] = true;
            }
        }
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Length of the image diagonal in pixels.
    pub fn diagonal(&self) -> f64 {
        (self.width as f64).hypot(self.height as f64)
    }

    /// Each row as alternating run lengths, starting with a (possibly empty)
    /// run of unset pixels.
    pub fn to_rle(&self) -> Vec<Vec<u32>> {
        self.data
            .chunks(self.width.max(1))
            .take(self.height)
            .map(|row| {
                let mut runs = Vec::new();
                let mut current = false;
                let mut len = 0u32;
                for &v in row {
                    if v == current {
                        len += 1;
                    } else {
                        runs.push(len);
                        current = v;
                        len = 1;
                    }
                }
                runs.push(len);
                runs
            })
            .collect()
    }

    pub fn from_rle(width: usize, rows: &[Vec<u32>]) -> Result<Self> {
        let mut r = Raster::new(width, rows.len());
        for (y, runs) in rows.iter().enumerate() {
            let mut x = 0usize;
            for (k, &len) in runs.iter().enumerate() {
                let end = x + len as usize;
                if end > width {
                    return Err(Error::ShapeMismatch(format!("row {y} runs exceed width {width}")));
                }
                if k % 2 == 1 {
                    r.fill_rect(x, y, len as usize, 1);
                }
                x = end;
            }
            if x != width {
                return Err(Error::ShapeMismatch(format!("row {y} covers {x} of {width} pixels")));
            }
        }
        Ok(r)
    }
}

/// Wire format of a raster.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RleRaster {
    pub width: usize,
    pub rows: Vec<Vec<u32>>,
}

impl From<&Raster> for RleRaster {
    fn from(r: &Raster) -> Self {
        Self {
            width: r.width,
            rows: r.to_rle(),
        }
    }
}

impl TryFrom<RleRaster> for Raster {
    type Error = Error;

    fn try_from(r: RleRaster) -> Result<Self> {
        Raster::from_rle(r.width, &r.rows)
    }
}
