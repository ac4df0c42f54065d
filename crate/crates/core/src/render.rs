//! Binary portable pixmaps of planar runs: final occupation (P6) and
//! odometer contour shading (P5). One pixel per lattice site.

use thiserror::Error;

use crate::engine::RunRecord;
use crate::lattice::{Site, SiteField};

/// Pixels of background around the bounding box of the base.
pub const MARGIN: i64 = 4;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RenderError {
    #[error("images are drawn for planar runs only (got dimension {0})")]
    Dimension(usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pixmap {
    pub width: usize,
    pub height: usize,
    /// 3 for P6 (RGB), 1 for P5 (gray).
    pub channels: usize,
    pub data: Vec<u8>,
}

impl Pixmap {
    fn new(width: usize, height: usize, channels: usize) -> Self {
        Pixmap {
            width,
            height,
            channels,
            data: vec![0; width * height * channels],
        }
    }

    pub fn pixel(&self, col: usize, row: usize) -> &[u8] {
        let i = (row * self.width + col) * self.channels;
        &self.data[i..i + self.channels]
    }

    fn pixel_mut(&mut self, col: usize, row: usize) -> &mut [u8] {
        let i = (row * self.width + col) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    /// Encoded file; `comment` lines go into the header.
    pub fn encode(&self, comment: Option<&str>) -> Vec<u8> {
        let magic = if self.channels == 3 { "P6" } else { "P5" };
        let mut header = format!("{magic}\n");
        if let Some(c) = comment {
            for line in c.lines() {
                let line = line.trim_start_matches('#').trim_start();
                header.push_str(&format!("# {line}\n"));
            }
        }
        header.push_str(&format!("{} {}\n255\n", self.width, self.height));
        let mut out = header.into_bytes();
        out.extend_from_slice(&self.data);
        out
    }
}

/// Box `[lo, hi]²` covering the base plus the margin.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Frame {
    pub lo: [i64; 2],
    pub hi: [i64; 2],
}

impl Frame {
    pub fn around(field: &SiteField<u64>) -> Self {
        let mut lo = [0i64; 2];
        let mut hi = [0i64; 2];
        let mut first = true;
        for (s, _) in field.nonzero() {
            let c = s.coords();
            for a in 0..2 {
                if first {
                    lo[a] = c[a];
                    hi[a] = c[a];
                } else {
                    lo[a] = lo[a].min(c[a]);
                    hi[a] = hi[a].max(c[a]);
                }
            }
            first = false;
        }
        Frame {
            lo: [lo[0] - MARGIN, lo[1] - MARGIN],
            hi: [hi[0] + MARGIN, hi[1] + MARGIN],
        }
    }

    pub fn width(&self) -> usize {
        (self.hi[0] - self.lo[0] + 1) as usize
    }

    pub fn height(&self) -> usize {
        (self.hi[1] - self.lo[1] + 1) as usize
    }

    /// Sites in raster order: rows from top (largest y) to bottom.
    fn raster(&self) -> impl Iterator<Item = (usize, usize, Site)> + '_ {
        (0..self.height()).flat_map(move |row| {
            (0..self.width()).map(move |col| {
                let x = self.lo[0] + col as i64;
                let y = self.hi[1] - row as i64;
                (col, row, Site::plane(x, y))
            })
        })
    }
}

fn require_plane(run: &RunRecord) -> Result<(), RenderError> {
    if run.dim == 2 {
        Ok(())
    } else {
        Err(RenderError::Dimension(run.dim))
    }
}

/// Red channel proportional to oil, blue to water, each normalized by its
/// own maximum.
pub fn render_occupation(run: &RunRecord) -> Result<Pixmap, RenderError> {
    require_plane(run)?;
    let frame = Frame::around(&run.odometer);
    let oil = &run.final_config.oil;
    let water = &run.final_config.water;
    let max_oil = oil.values().iter().copied().max().unwrap_or(0).max(1) as f64;
    let max_water = water.values().iter().copied().max().unwrap_or(0).max(1) as f64;
    let mut img = Pixmap::new(frame.width(), frame.height(), 3);
    for (col, row, site) in frame.raster() {
        let px = img.pixel_mut(col, row);
        px[0] = (255.0 * oil.get(&site) as f64 / max_oil).round() as u8;
        px[2] = (255.0 * water.get(&site) as f64 / max_water).round() as u8;
    }
    Ok(img)
}

/// Gray level `frac(u^{1/4} / 5)`; a quartic odometer gives evenly spaced rings.
pub fn contour_level(u: u64) -> u8 {
    let v = (u as f64).powf(0.25) / 5.0;
    (255.0 * v.fract()).floor() as u8
}

pub fn render_contours(run: &RunRecord) -> Result<Pixmap, RenderError> {
    require_plane(run)?;
    Ok(render_contours_field(&run.odometer))
}

pub fn render_contours_field(odometer: &SiteField<u64>) -> Pixmap {
    let frame = Frame::around(odometer);
    let mut img = Pixmap::new(frame.width(), frame.height(), 1);
    for (col, row, site) in frame.raster() {
        img.pixel_mut(col, row)[0] = contour_level(odometer.get(&site));
    }
    img
}

/// Ring boundaries crossed walking from the image centre to the right edge:
/// places where the gray level drops.
pub fn rings_along_row(img: &Pixmap, row: usize, from_col: usize) -> usize {
    (from_col + 1..img.width)
        .filter(|&c| img.pixel(c, row)[0] < img.pixel(c - 1, row)[0])
        .count()
}
