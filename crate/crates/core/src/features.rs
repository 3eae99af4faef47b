//! Deterministic per-cell features at two resolutions.
//!
//! Each cell vector is `[color(3) | orientation histogram(bins) | coords(2)]`.
//! The appearance part (color + histogram) is unit-normalized and scaled by
//! `√κ`, so the inner product of two appearance parts is `κ · cos`. The two
//! coordinate channels carry the cell centre in `[-1, 1]`, weighted by `γ`.

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, reshape_grid_to_matrix, Grid, Matrix};
use crate::scribble_robot::ScribbleRaster;

/// Which transfer path the features feed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    /// Coarse features for matching against annotated frames.
    Global,
    /// Fine features for matching against the adjacent frame.
    Local,
}

impl Level {
    pub fn stride(self) -> usize {
        match self {
            Level::Global => 8,
            Level::Local => 4,
        }
    }

    fn index(self) -> usize {
        match self {
            Level::Global => 0,
            Level::Local => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorSpace {
    /// CIE L*a*b* under D65.
    Lab,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractorConfig {
    pub color_space: ColorSpace,
    pub orientation_bins: usize,
    /// Box-blur radius applied before aggregation, `[global, local]`.
    pub smoothing_radius: [usize; 2],
    /// γ: weight of the coordinate channels.
    pub coord_weight: f64,
    /// κ: inner products of appearance parts equal κ·cosine.
    pub temperature: f64,
    /// Scale of the gradient histogram relative to the color part.
    pub gradient_weight: f64,
    /// Constant added to every histogram bin; keeps flat dark cells
    /// away from the zero vector.
    pub histogram_floor: f64,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            color_space: ColorSpace::Lab,
            orientation_bins: 8,
            smoothing_radius: [1, 0],
            coord_weight: 0.3,
            temperature: 10.0,
            gradient_weight: 0.04,
            histogram_floor: 0.1,
        }
    }
}

impl ExtractorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.orientation_bins < 4 {
            return Err(Error::Input(format!(
                "orientation_bins must be >= 4, got {}",
                self.orientation_bins
            )));
        }
        if !(self.coord_weight >= 0.0 && self.coord_weight.is_finite()) {
            return Err(Error::Input(format!(
                "coord_weight must be >= 0, got {}",
                self.coord_weight
            )));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Input(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        if !(self.histogram_floor > 0.0 && self.gradient_weight >= 0.0) {
            return Err(Error::Input(
                "histogram_floor must be > 0 and gradient_weight >= 0".into(),
            ));
        }
        Ok(())
    }

    pub fn channel_count(&self) -> usize {
        3 + self.orientation_bins + 2
    }
}

/// Per-cell feature vectors at a fixed stride relative to the image.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureGrid {
    grid: Grid,
    stride: usize,
    appearance_len: usize,
    image_height: usize,
    image_width: usize,
}

impl FeatureGrid {
    /// Builds a grid from raw cell vectors; the last two channels are
    /// treated as coordinates. Intended for tests and synthetic inputs.
    pub fn from_grid(grid: Grid, stride: usize) -> Result<Self> {
        if grid.channels() < 3 {
            return Err(Error::dim("feature grid needs at least 3 channels"));
        }
        Ok(Self {
            appearance_len: grid.channels() - 2,
            image_height: grid.height() * stride,
            image_width: grid.width() * stride,
            grid,
            stride,
        })
    }

    pub fn height(&self) -> usize {
        self.grid.height()
    }

    pub fn width(&self) -> usize {
        self.grid.width()
    }

    pub fn channels(&self) -> usize {
        self.grid.channels()
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn cell_count(&self) -> usize {
        self.grid.pixel_count()
    }

    pub fn image_size(&self) -> (usize, usize) {
        (self.image_height, self.image_width)
    }

    #[inline]
    pub fn cell(&self, index: usize) -> &[f64] {
        self.grid.pixel(index)
    }

    pub fn appearance(&self, index: usize) -> &[f64] {
        &self.cell(index)[..self.appearance_len]
    }

    pub fn appearance_len(&self) -> usize {
        self.appearance_len
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn to_matrix(&self) -> Matrix {
        reshape_grid_to_matrix(&self.grid)
    }

    /// Cell containing image pixel `(y, x)`.
    pub fn cell_of_pixel(&self, y: usize, x: usize) -> usize {
        (y / self.stride).min(self.height() - 1) * self.width()
            + (x / self.stride).min(self.width() - 1)
    }

    pub fn inner(&self, a: usize, other: &FeatureGrid, b: usize) -> f64 {
        dot(self.cell(a), other.cell(b))
    }
}

fn srgb_to_linear(c: u8) -> f64 {
    let c = c as f64 / 255.0;
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn lab_f(t: f64) -> f64 {
    const D: f64 = 6.0 / 29.0;
    if t > D * D * D {
        t.cbrt()
    } else {
        t / (3.0 * D * D) + 4.0 / 29.0
    }
}

pub fn rgb_to_lab(rgb: [u8; 3]) -> [f64; 3] {
    let [r, g, b] = rgb.map(srgb_to_linear);
    let x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
    let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    let z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
    let (fx, fy, fz) = (lab_f(x / 0.95047), lab_f(y), lab_f(z / 1.08883));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// Separable box blur with edge-normalized windows.
fn box_blur(plane: &[f64], h: usize, w: usize, radius: usize) -> Vec<f64> {
    if radius == 0 {
        return plane.to_vec();
    }
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let (lo, hi) = (x.saturating_sub(radius), (x + radius + 1).min(w));
            tmp[y * w + x] = plane[y * w + lo..y * w + hi].iter().sum::<f64>() / (hi - lo) as f64;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        let (lo, hi) = (y.saturating_sub(radius), (y + radius + 1).min(h));
        for x in 0..w {
            out[y * w + x] = (lo..hi).map(|yy| tmp[yy * w + x]).sum::<f64>() / (hi - lo) as f64;
        }
    }
    out
}

pub fn extract(frame: &RgbImage, level: Level, config: &ExtractorConfig) -> Result<FeatureGrid> {
    config.validate()?;
    let (w, h) = (frame.width() as usize, frame.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::Input(
            "cannot extract features from an empty frame".into(),
        ));
    }
    let stride = level.stride();
    let (gh, gw) = (h.div_ceil(stride), w.div_ceil(stride));
    let bins = config.orientation_bins;

    let mut planes = [vec![0.0; h * w], vec![0.0; h * w], vec![0.0; h * w]];
    for (i, px) in frame.pixels().enumerate() {
        let lab = rgb_to_lab(px.0);
        for c in 0..3 {
            planes[c][i] = lab[c];
        }
    }
    let radius = config.smoothing_radius[level.index()];
    let planes = planes.map(|p| box_blur(&p, h, w, radius));
    let lum = &planes[0];

    let channels = config.channel_count();
    let mut grid = Grid::zeros(gh, gw, channels);
    let mut counts = vec![0.0f64; gh * gw];
    for y in 0..h {
        for x in 0..w {
            let cell = (y / stride) * gw + x / stride;
            let i = y * w + x;
            counts[cell] += 1.0;
            let v = grid.pixel_mut(cell);
            for c in 0..3 {
                v[c] += planes[c][i];
            }
            let gx = (lum[y * w + (x + 1).min(w - 1)] - lum[y * w + x.saturating_sub(1)]) / 2.0;
            let gy = (lum[(y + 1).min(h - 1) * w + x] - lum[y.saturating_sub(1) * w + x]) / 2.0;
            let mag = gx.hypot(gy);
            if mag > 0.0 {
                // Unsigned orientation, soft-assigned to the two nearest bins.
                let theta = gy.atan2(gx).rem_euclid(std::f64::consts::PI);
                let pos = theta / std::f64::consts::PI * bins as f64 - 0.5;
                let lo = pos.floor();
                let frac = pos - lo;
                let b0 = (lo as i64).rem_euclid(bins as i64) as usize;
                let b1 = (b0 + 1) % bins;
                v[3 + b0] += mag * (1.0 - frac);
                v[3 + b1] += mag * frac;
            }
        }
    }

    let scale = config.temperature.sqrt();
    for (cell, &n) in counts.iter().enumerate() {
        let (cy, cx) = (cell / gw, cell % gw);
        let v = grid.pixel_mut(cell);
        // Centre lightness so mid-grey sits at the origin of the color part.
        v[0] = v[0] / (100.0 * n) - 0.5;
        v[1] /= 100.0 * n;
        v[2] /= 100.0 * n;
        for b in &mut v[3..3 + bins] {
            *b = *b * config.gradient_weight / n + config.histogram_floor;
        }
        let norm = v[..3 + bins].iter().map(|a| a * a).sum::<f64>().sqrt();
        for a in &mut v[..3 + bins] {
            *a *= scale / norm;
        }
        let yc = ((cy * stride) as f64 + (stride as f64 / 2.0)).min(h as f64);
        let xc = ((cx * stride) as f64 + (stride as f64 / 2.0)).min(w as f64);
        v[3 + bins] = config.coord_weight * (2.0 * xc / w as f64 - 1.0);
        v[4 + bins] = config.coord_weight * (2.0 * yc / h as f64 - 1.0);
    }

    Ok(FeatureGrid {
        grid,
        stride,
        appearance_len: 3 + bins,
        image_height: h,
        image_width: w,
    })
}

/// Deduplicated cell indices touched by positive and negative scribbles.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ScribbleCells {
    pub positive: Vec<usize>,
    pub negative: Vec<usize>,
}

pub fn scribble_cells(grid: &FeatureGrid, raster: &ScribbleRaster) -> Result<ScribbleCells> {
    if (raster.height, raster.width) != grid.image_size() {
        return Err(Error::dim(format!(
            "scribble raster {}x{} does not match image {:?}",
            raster.height,
            raster.width,
            grid.image_size()
        )));
    }
    let collect = |pixels: &mut dyn Iterator<Item = usize>| {
        let mut cells: Vec<usize> = pixels
            .map(|i| grid.cell_of_pixel(i / raster.width, i % raster.width))
            .collect();
        cells.sort_unstable();
        cells.dedup();
        cells
    };
    Ok(ScribbleCells {
        positive: collect(&mut raster.positive_pixels()),
        negative: collect(&mut raster.negative_pixels()),
    })
}

pub type FeatureSet = Vec<Vec<f64>>;

/// Feature vectors under positive and negative scribbles. A grid cell
/// contributes once no matter how many scribble pixels it contains.
pub fn scribble_feature_sets(
    grid: &FeatureGrid,
    raster: &ScribbleRaster,
) -> Result<(FeatureSet, FeatureSet)> {
    let cells = scribble_cells(grid, raster)?;
    if cells.positive.is_empty() {
        return Err(Error::Annotation(
            "at least one positive scribble point is required".into(),
        ));
    }
    let vecs = |ids: &[usize]| ids.iter().map(|&i| grid.cell(i).to_vec()).collect();
    Ok((vecs(&cells.positive), vecs(&cells.negative)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scribble_robot::{Point, ScribbleSet, Stroke};
    use image::Rgb;

    fn two_tone() -> RgbImage {
        RgbImage::from_fn(64, 64, |x, _| {
            if x < 32 {
                Rgb([220, 30, 30])
            } else {
                Rgb([30, 40, 220])
            }
        })
    }

    #[test]
    fn grid_sizes_follow_stride() {
        let img = RgbImage::from_pixel(64, 64, Rgb([100, 120, 140]));
        let cfg = ExtractorConfig::default();
        let g = extract(&img, Level::Global, &cfg).unwrap();
        let l = extract(&img, Level::Local, &cfg).unwrap();
        assert_eq!((g.height(), g.width(), g.stride()), (8, 8, 8));
        assert_eq!((l.height(), l.width(), l.stride()), (16, 16, 4));
        assert_eq!(g.channels(), 3 + 8 + 2);
    }

    #[test]
    fn empty_frame_is_rejected() {
        let img = RgbImage::new(0, 5);
        assert!(matches!(
            extract(&img, Level::Global, &ExtractorConfig::default()),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn constant_frame_has_identical_appearance() {
        for color in [[0, 0, 0], [255, 255, 255], [10, 200, 90]] {
            let img = RgbImage::from_pixel(40, 40, Rgb(color));
            let cfg = ExtractorConfig::default();
            let g = extract(&img, Level::Global, &cfg).unwrap();
            let first = g.appearance(0).to_vec();
            for i in 0..g.cell_count() {
                assert_eq!(g.appearance(i), first.as_slice());
                let ip = dot(g.appearance(i), &first);
                assert!((ip - cfg.temperature).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn appearance_norm_is_sqrt_kappa() {
        let img = RgbImage::from_fn(37, 29, |x, y| {
            Rgb([(x * 7) as u8, (y * 9) as u8, ((x * y) % 255) as u8])
        });
        let cfg = ExtractorConfig {
            temperature: 4.0,
            ..Default::default()
        };
        for level in [Level::Global, Level::Local] {
            let g = extract(&img, level, &cfg).unwrap();
            for i in 0..g.cell_count() {
                let n = dot(g.appearance(i), g.appearance(i)).sqrt();
                assert!((n - 2.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn two_tone_cross_similarity_is_lower() {
        let cfg = ExtractorConfig::default();
        let g = extract(&two_tone(), Level::Global, &cfg).unwrap();
        let side = |i: usize| (i % g.width()) < 4;
        let mut max_cross = f64::NEG_INFINITY;
        let mut min_same = f64::INFINITY;
        for a in 0..g.cell_count() {
            for b in 0..g.cell_count() {
                let ip = dot(g.appearance(a), g.appearance(b));
                if side(a) == side(b) {
                    min_same = min_same.min(ip);
                } else {
                    max_cross = max_cross.max(ip);
                }
            }
        }
        assert!(max_cross < min_same, "cross {max_cross} vs same {min_same}");
    }

    #[test]
    fn extraction_is_deterministic() {
        let img = two_tone();
        let cfg = ExtractorConfig::default();
        let a = extract(&img, Level::Local, &cfg).unwrap();
        let b = extract(&img, Level::Local, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn translation_by_one_stride_shifts_interior_cells() {
        let base = |x: u32, y: u32| {
            let v = ((x * 37 + y * 91) % 200) as u8;
            Rgb([v, 255 - v, ((x ^ y) * 13 % 256) as u8])
        };
        let stride = Level::Global.stride() as u32;
        let a = RgbImage::from_fn(64, 64, base);
        let b = RgbImage::from_fn(64, 64, |x, y| base(x.wrapping_sub(stride) % 1024, y));
        let cfg = ExtractorConfig::default();
        let fa = extract(&a, Level::Global, &cfg).unwrap();
        let fb = extract(&b, Level::Global, &cfg).unwrap();
        for cy in 1..fa.height() - 1 {
            for cx in 1..fa.width() - 2 {
                let ia = cy * fa.width() + cx;
                let ib = cy * fb.width() + cx + 1;
                for (p, q) in fa.appearance(ia).iter().zip(fb.appearance(ib)) {
                    assert!((p - q).abs() < 1e-6);
                }
            }
        }
    }

    fn raster_of(points: &[(i64, i64)], line: bool) -> ScribbleRaster {
        let mut set = ScribbleSet::new(0, 1);
        let pts: Vec<Point> = points.iter().map(|&(x, y)| Point::new(x, y)).collect();
        if line {
            set.positive.push(Stroke::new(pts));
        } else {
            set.positive.extend(pts.into_iter().map(Stroke::point));
        }
        set.rasterize(64, 64).unwrap()
    }

    #[test]
    fn scribble_point_maps_to_containing_cell() {
        let img = two_tone();
        let g = extract(&img, Level::Global, &ExtractorConfig::default()).unwrap();
        let (pos, neg) = scribble_feature_sets(&g, &raster_of(&[(10, 10)], false)).unwrap();
        assert_eq!(pos, vec![g.cell(9).to_vec()]);
        assert!(neg.is_empty());

        let (pos, _) = scribble_feature_sets(&g, &raster_of(&[(10, 10), (12, 14)], false)).unwrap();
        assert_eq!(pos.len(), 1);
    }

    #[test]
    fn stroke_across_three_cells() {
        let g = extract(&two_tone(), Level::Global, &ExtractorConfig::default()).unwrap();
        // x from 4 to 20 at y = 3 crosses cells 0, 1, 2 of the first row.
        let raster = raster_of(&[(4, 3), (20, 3)], true);
        let expected: std::collections::BTreeSet<usize> = (4..=20).map(|x| x / 8).collect();
        let cells = scribble_cells(&g, &raster).unwrap();
        assert_eq!(cells.positive.len(), expected.len());
        assert_eq!(cells.positive.len(), 3);
    }

    #[test]
    fn missing_positive_is_an_annotation_error() {
        let g = extract(&two_tone(), Level::Global, &ExtractorConfig::default()).unwrap();
        let mut set = ScribbleSet::new(0, 1);
        set.negative.push(Stroke::point(Point::new(3, 3)));
        let raster = set.rasterize(64, 64).unwrap();
        assert!(matches!(
            scribble_feature_sets(&g, &raster),
            Err(Error::Annotation(_))
        ));
    }
}
