//! Dense grid and matrix primitives shared by the rest of the engine.
//!
//! Pixel indexing is row-major everywhere: the pixel at `(y, x)` of an
//! `h × w` grid has index `y * w + x`. Multi-channel grids store channels
//! innermost (`HWC`), so a grid reshapes to an `(h·w) × c` matrix without
//! moving any data.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.values[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows * cols != values.len() {
            return Err(Error::dim(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!("non-finite matrix entry at {bad}")));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                values.push(f(r, c));
            }
        }
        Self { rows, cols, values }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.values[r * self.cols + c] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.cols];
        for row in self.values.chunks_exact(self.cols.max(1)) {
            for (s, v) in sums.iter_mut().zip(row) {
                *s += v;
            }
        }
        sums
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn scale(&mut self, k: f64) {
        self.values.iter_mut().for_each(|v| *v *= k);
    }

    pub fn add_assign(&mut self, other: &Matrix) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::dim(format!(
                "cannot add {}x{} to {}x{}",
                other.rows, other.cols, self.rows, self.cols
            )));
        }
        self.values
            .iter_mut()
            .zip(&other.values)
            .for_each(|(a, b)| *a += b);
        Ok(())
    }
}

/// Per-entry eligibility aligned with a [`Matrix`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskPattern {
    rows: usize,
    cols: usize,
    eligible: Vec<bool>,
}

impl MaskPattern {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            eligible: vec![false; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = Self::new(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m.eligible[r * cols + c] = f(r, c);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn is_eligible(&self, r: usize, c: usize) -> bool {
        self.eligible[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, eligible: bool) {
        self.eligible[r * self.cols + c] = eligible;
    }

    pub fn column_count(&self, c: usize) -> usize {
        (0..self.rows).filter(|&r| self.is_eligible(r, c)).count()
    }
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::dim(format!(
            "cannot multiply {}x{} by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let out_row = &mut out.values[i * b.cols..(i + 1) * b.cols];
        for k in 0..a.cols {
            let aik = a.values[i * a.cols + k];
            if aik == 0.0 {
                continue;
            }
            let b_row = &b.values[k * b.cols..(k + 1) * b.cols];
            for (o, bv) in out_row.iter_mut().zip(b_row) {
                *o += aik * bv;
            }
        }
    }
    Ok(out)
}

/// `a × bᵀ` without materializing the transpose.
pub fn matmul_transposed(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(Error::dim(format!(
            "cannot multiply {}x{} by transpose of {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    Ok(Matrix::from_fn(a.rows, b.rows, |i, j| {
        dot(a.row(i), b.row(j))
    }))
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Softmax over each column. Ineligible entries are treated as `-inf`:
/// they contribute nothing to the partition sum and come out exactly 0.
pub fn column_softmax(w: &Matrix, mask: Option<&MaskPattern>) -> Result<Matrix> {
    if let Some(m) = mask {
        if m.rows != w.rows || m.cols != w.cols {
            return Err(Error::dim(format!(
                "mask {}x{} does not match matrix {}x{}",
                m.rows, m.cols, w.rows, w.cols
            )));
        }
    }
    let eligible = |r: usize, c: usize| mask.is_none_or(|m| m.is_eligible(r, c));
    let mut out = Matrix::zeros(w.rows, w.cols);
    for c in 0..w.cols {
        let mut max = f64::NEG_INFINITY;
        for r in 0..w.rows {
            if eligible(r, c) {
                max = max.max(w.get(r, c));
            }
        }
        if max == f64::NEG_INFINITY {
            return Err(Error::DegenerateColumn { column: c });
        }
        let mut sum = 0.0;
        for r in 0..w.rows {
            if eligible(r, c) {
                let e = (w.get(r, c) - max).exp();
                out.set(r, c, e);
                sum += e;
            }
        }
        for r in 0..w.rows {
            if eligible(r, c) {
                out.set(r, c, out.get(r, c) / sum);
            }
        }
    }
    Ok(out)
}

/// Multi-channel grid, channels innermost.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height * width * channels != data.len() {
            return Err(Error::dim(format!(
                "{height}x{width}x{channels} grid needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    #[inline]
    pub fn pixel(&self, index: usize) -> &[f64] {
        &self.data[index * self.channels..(index + 1) * self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, index: usize) -> &mut [f64] {
        &mut self.data[index * self.channels..(index + 1) * self.channels]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Single channel copied out as its own grid.
    pub fn channel(&self, c: usize) -> Grid {
        let data = self
            .data
            .chunks_exact(self.channels)
            .map(|px| px[c])
            .collect();
        Grid {
            height: self.height,
            width: self.width,
            channels: 1,
            data,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Grid {
        Grid {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }
}

/// Height, width and channel count of a grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Grid {
    pub fn shape(&self) -> GridShape {
        GridShape {
            height: self.height,
            width: self.width,
            channels: self.channels,
        }
    }
}

pub fn reshape_grid_to_matrix(grid: &Grid) -> Matrix {
    Matrix {
        rows: grid.height * grid.width,
        cols: grid.channels,
        values: grid.data.clone(),
    }
}

pub fn reshape_matrix_to_grid(m: &Matrix, height: usize, width: usize) -> Result<Grid> {
    if m.rows != height * width {
        return Err(Error::dim(format!(
            "matrix with {} rows cannot form a {height}x{width} grid",
            m.rows
        )));
    }
    Grid::from_vec(height, width, m.cols, m.values.clone())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResampleMode {
    Bilinear,
    Area,
}

/// Per-axis interpolation taps: for each output index, `(source index, weight)`.
type Taps = Vec<Vec<(usize, f64)>>;

fn bilinear_taps(src: usize, dst: usize) -> Taps {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            // Half-pixel centers, clamped at the borders.
            let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(src - 1);
            let f = s - i0 as f64;
            if f == 0.0 || i0 == i1 {
                vec![(i0, 1.0)]
            } else {
                vec![(i0, 1.0 - f), (i1, f)]
            }
        })
        .collect()
}

fn area_taps(src: usize, dst: usize) -> Taps {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let lo = o as f64 * scale;
            let hi = (o + 1) as f64 * scale;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(src);
            let mut taps: Vec<(usize, f64)> = (first..last)
                .filter_map(|i| {
                    let overlap = (hi.min((i + 1) as f64) - lo.max(i as f64)).max(0.0);
                    (overlap > 0.0).then_some((i, overlap))
                })
                .collect();
            let total: f64 = taps.iter().map(|t| t.1).sum();
            taps.iter_mut().for_each(|t| t.1 /= total);
            taps
        })
        .collect()
}

/// Resample a grid to `target_h × target_w`. Bilinear uses half-pixel
/// centers (corners of an upsampled grid equal the source corners); area
/// averages the covered source region and so preserves the mean.
pub fn resample(grid: &Grid, target_h: usize, target_w: usize, mode: ResampleMode) -> Result<Grid> {
    if target_h == 0 || target_w == 0 {
        return Err(Error::dim(format!(
            "cannot resample to {target_h}x{target_w}"
        )));
    }
    if grid.height == 0 || grid.width == 0 {
        return Err(Error::dim("cannot resample an empty grid"));
    }
    if target_h == grid.height && target_w == grid.width {
        return Ok(grid.clone());
    }
    let taps = match mode {
        ResampleMode::Bilinear => bilinear_taps,
        ResampleMode::Area => area_taps,
    };
    let (ty, tx) = (taps(grid.height, target_h), taps(grid.width, target_w));
    let ch = grid.channels;

    // Horizontal pass.
    let mut tmp = vec![0.0; grid.height * target_w * ch];
    for y in 0..grid.height {
        for (x, xt) in tx.iter().enumerate() {
            let out = &mut tmp[(y * target_w + x) * ch..(y * target_w + x + 1) * ch];
            for &(sx, w) in xt {
                let src = grid.pixel(y * grid.width + sx);
                for (o, s) in out.iter_mut().zip(src) {
                    *o += w * s;
                }
            }
        }
    }
    // Vertical pass.
    let mut data = vec![0.0; target_h * target_w * ch];
    for (y, yt) in ty.iter().enumerate() {
        for &(sy, w) in yt {
            let src = &tmp[sy * target_w * ch..(sy + 1) * target_w * ch];
            let out = &mut data[y * target_w * ch..(y + 1) * target_w * ch];
            for (o, s) in out.iter_mut().zip(src) {
                *o += w * s;
            }
        }
    }
    Grid::from_vec(target_h, target_w, ch, data)
}

/// Repeated 3×3 box filtering. Out-of-bounds neighbours are skipped and
/// the average is taken over the in-bounds ones, so constants are fixed
/// points and values never leave their input range.
pub fn box_filter(grid: &Grid, iterations: usize) -> Grid {
    let mut cur = grid.clone();
    let (h, w, ch) = (grid.height, grid.width, grid.channels);
    for _ in 0..iterations {
        let mut next = Grid::zeros(h, w, ch);
        for y in 0..h {
            for x in 0..w {
                let mut count = 0.0;
                let out = next.pixel_mut(y * w + x);
                for ny in y.saturating_sub(1)..(y + 2).min(h) {
                    for nx in x.saturating_sub(1)..(x + 2).min(w) {
                        count += 1.0;
                        for (o, v) in out.iter_mut().zip(cur.pixel(ny * w + nx)) {
                            *o += v;
                        }
                    }
                }
                out.iter_mut().for_each(|o| *o /= count);
            }
        }
        cur = next;
    }
    cur
}
