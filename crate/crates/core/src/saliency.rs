//! Black-box saliency by randomized masking.
//!
//! The model is queried on many randomly masked variants of one image; each
//! mask is added into a per-class accumulator weighted by the class score it
//! produced, and the sums are normalized by `num_masks * keep_probability`.
//! Masks that preserve the evidence for a class keep its score high, so
//! pixels under them accumulate weight.
//!
//! Masks are built from a small Bernoulli cell grid, bilinearly upsampled
//! past the image size and cropped at a random sub-cell shift. Masking
//! happens in raw intensity space (a masked pixel is black tissue, not a
//! negative normalized value); the scoring function re-normalizes.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding;

/// Mask generation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub num_masks: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    /// Probability a cell is kept. The open interval is the useful range;
    /// `p = 1` is admitted as the degenerate all-ones limit.
    pub keep_probability: f64,
    pub seed: u64,
}

impl Default for MaskSpec {
    fn default() -> Self {
        MaskSpec {
            num_masks: 1000,
            grid_h: 7,
            grid_w: 7,
            keep_probability: 0.5,
            seed: 0,
        }
    }
}

impl MaskSpec {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.num_masks == 0 {
            problems.push("num_masks must be >= 1".to_string());
        }
        if self.grid_h == 0 || self.grid_w == 0 {
            problems.push("mask grid must be at least 1x1".to_string());
        }
        if !self.keep_probability.is_finite()
            || self.keep_probability <= 0.0
            || self.keep_probability > 1.0
        {
            problems.push(format!(
                "keep_probability must be in (0,1], got {}",
                self.keep_probability
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems))
        }
    }
}

/// Row-major `h x w` grid of f32 values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Grid {
    pub fn new(h: usize, w: usize, data: Vec<f32>) -> Grid {
        debug_assert_eq!(data.len(), h * w);
        Grid { h, w, data }
    }

    pub fn zeros(h: usize, w: usize) -> Grid {
        Grid {
            h,
            w,
            data: vec![0.0; h * w],
        }
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.w + c]
    }

    /// (row, col) of the maximum entry; first occurrence wins.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, v) in self.data.iter().enumerate() {
            if *v > self.data[best] {
                best = i;
            }
        }
        (best / self.w, best % self.w)
    }

    pub fn min_max(&self) -> (f32, f32) {
        let mut lo = f32::INFINITY;
        let mut hi = f32::NEG_INFINITY;
        for &v in &self.data {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }
}

/// Lazily yields `spec.num_masks` image-sized masks with values in `[0,1]`.
/// Mask `i` is a pure function of `(seed, i)`.
pub struct MaskGenerator {
    spec: MaskSpec,
    size: usize,
    next: usize,
}

impl MaskGenerator {
    pub fn new(spec: MaskSpec, image_size: usize) -> Result<MaskGenerator> {
        spec.validate()?;
        if image_size == 0 {
            return Err(Error::InvalidArgument("image size must be > 0".into()));
        }
        Ok(MaskGenerator {
            spec,
            size: image_size,
            next: 0,
        })
    }

    fn make(&self, index: usize) -> Grid {
        let spec = &self.spec;
        let mut rng = seeding::indexed_rng(spec.seed, "masks", index as u64);
        let cells: Vec<f32> = (0..spec.grid_h * spec.grid_w)
            .map(|_| {
                let draw: f64 = rng.random();
                if draw < spec.keep_probability {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        // cell size in pixels, rounded up so the upsampled field overhangs
        let cell_h = self.size.div_ceil(spec.grid_h);
        let cell_w = self.size.div_ceil(spec.grid_w);
        let dy = rng.random_range(0..cell_h);
        let dx = rng.random_range(0..cell_w);

        let mut data = Vec::with_capacity(self.size * self.size);
        for r in 0..self.size {
            // continuous source coordinate in cell units
            let sy = ((r + dy) as f32 + 0.5) / cell_h as f32 - 0.5;
            let (y0, y1, fy) = clamp_lerp(sy, spec.grid_h);
            for c in 0..self.size {
                let sx = ((c + dx) as f32 + 0.5) / cell_w as f32 - 0.5;
                let (x0, x1, fx) = clamp_lerp(sx, spec.grid_w);
                let top = cells[y0 * spec.grid_w + x0] * (1.0 - fx)
                    + cells[y0 * spec.grid_w + x1] * fx;
                let bot = cells[y1 * spec.grid_w + x0] * (1.0 - fx)
                    + cells[y1 * spec.grid_w + x1] * fx;
                data.push(top * (1.0 - fy) + bot * fy);
            }
        }
        Grid::new(self.size, self.size, data)
    }
}

fn clamp_lerp(coord: f32, extent: usize) -> (usize, usize, f32) {
    let max = (extent - 1) as f32;
    let x = coord.clamp(0.0, max);
    let lo = x.floor();
    let hi = (lo + 1.0).min(max);
    (lo as usize, hi as usize, x - lo)
}

impl Iterator for MaskGenerator {
    type Item = Grid;

    fn next(&mut self) -> Option<Grid> {
        if self.next >= self.spec.num_masks {
            return None;
        }
        let mask = self.make(self.next);
        self.next += 1;
        Some(mask)
    }
}

/// Generate the mask sequence for an image size.
pub fn generate_masks(spec: &MaskSpec, image_size: usize) -> Result<MaskGenerator> {
    MaskGenerator::new(*spec, image_size)
}

/// Per-class saliency maps for one raw grayscale image.
///
/// `score_fn` sees the masked raw image and must return one finite,
/// nonnegative score per class (model scores live in (0,1)). The result is
/// `saliency_c = (1 / (num_masks * p)) * sum_i score_c(x * m_i) * m_i`.
pub fn rise_saliency<F>(mut score_fn: F, image: &Grid, spec: &MaskSpec) -> Result<Vec<Grid>>
where
    F: FnMut(&Grid) -> Result<Vec<f64>>,
{
    if image.h != image.w {
        return Err(Error::InvalidArgument(format!(
            "expected a square image, got {}x{}",
            image.h, image.w
        )));
    }
    let size = image.h;
    let mut maps: Vec<Grid> = Vec::new();
    for (index, mask) in generate_masks(spec, size)?.enumerate() {
        let masked = Grid::new(
            size,
            size,
            image
                .data
                .iter()
                .zip(&mask.data)
                .map(|(&px, &m)| px * m)
                .collect(),
        );
        let scores = score_fn(&masked).map_err(|e| Error::MaskScoringFailed {
            index,
            reason: e.to_string(),
        })?;
        if maps.is_empty() {
            maps = vec![Grid::zeros(size, size); scores.len()];
        }
        if scores.len() != maps.len() {
            return Err(Error::MaskScoringFailed {
                index,
                reason: format!("score count changed from {} to {}", maps.len(), scores.len()),
            });
        }
        for (class, &score) in scores.iter().enumerate() {
            if !score.is_finite() || score < 0.0 {
                return Err(Error::MaskScoringFailed {
                    index,
                    reason: format!("class {class} score {score} outside [0,inf)"),
                });
            }
            let s = score as f32;
            for (acc, &m) in maps[class].data.iter_mut().zip(&mask.data) {
                *acc += s * m;
            }
        }
    }
    let norm = (1.0 / (spec.num_masks as f64 * spec.keep_probability)) as f32;
    for map in &mut maps {
        for v in &mut map.data {
            *v *= norm;
        }
    }
    Ok(maps)
}

/// Saliency artifacts for one image, serialized alongside the overlays.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SaliencyOutput {
    pub mask_spec: MaskSpec,
    pub class_names: Vec<String>,
    /// Unmasked model scores per class.
    pub scores: Vec<f64>,
    pub predicted: String,
    pub maps: Vec<Grid>,
}

/// Alpha-blend a min-max scaled heat colormap over the grayscale image.
/// Red marks regions of greater importance.
pub fn render_overlay(image: &Grid, saliency: &Grid, path: &Path) -> Result<()> {
    if image.h != saliency.h || image.w != saliency.w {
        return Err(Error::InvalidArgument(
            "saliency and image dimensions differ".into(),
        ));
    }
    let (lo, hi) = saliency.min_max();
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = image::RgbImage::new(image.w as u32, image.h as u32);
    for r in 0..image.h {
        for c in 0..image.w {
            let gray = image.get(r, c).clamp(0.0, 1.0) * 255.0;
            let t = (saliency.get(r, c) - lo) / span;
            let (hr, hg, hb) = heat_color(t);
            let alpha = 0.45;
            let mix = |g: f32, h: f32| ((1.0 - alpha) * g + alpha * h).round() as u8;
            out.put_pixel(
                c as u32,
                r as u32,
                image::Rgb([mix(gray, hr), mix(gray, hg), mix(gray, hb)]),
            );
        }
    }
    out.save(path).map_err(|e| Error::ImageDecode {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Blue (cold) through green to red (hot) over t in [0,1].
fn heat_color(t: f32) -> (f32, f32, f32) {
    let t = t.clamp(0.0, 1.0);
    let r = (1.5 - (t - 1.0).abs() * 4.0).clamp(0.0, 1.0);
    let g = (1.5 - (t - 0.5).abs() * 4.0).clamp(0.0, 1.0);
    let b = (1.5 - t * 4.0).clamp(0.0, 1.0);
    (r * 255.0, g * 255.0, b * 255.0)
}
