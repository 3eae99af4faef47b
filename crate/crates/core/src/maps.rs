//! Per-object probability grids and resolved label grids at image resolution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Grid;

/// Per-object probabilities in `[0, 1]`, one channel per object. Channel
/// `k` holds object `k + 1` (label 0 is background).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityMap(Grid);

impl ProbabilityMap {
    pub fn filled(height: usize, width: usize, objects: usize, value: f64) -> Self {
        assert!((0.0..=1.0).contains(&value));
        Self(Grid::filled(height, width, objects, value))
    }

    /// Wraps a grid, rejecting values outside `[0, 1]`.
    pub fn from_grid(grid: Grid) -> Result<Self> {
        if grid.channels() == 0 {
            return Err(Error::Input(
                "probability map needs at least one object".into(),
            ));
        }
        if let Some(v) = grid.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Input(format!("probability {v} outside [0, 1]")));
        }
        Ok(Self(grid))
    }

    /// Wraps a grid after clamping into `[0, 1]`; NaN becomes 0.
    pub fn from_grid_clamped(grid: Grid) -> Self {
        Self(grid.map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) }))
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn object_count(&self) -> usize {
        self.0.channels()
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, object: usize) -> f64 {
        self.0.get(y, x, object)
    }

    pub fn grid(&self) -> &Grid {
        &self.0
    }

    pub fn into_grid(self) -> Grid {
        self.0
    }

    /// Raw values; callers must keep them inside `[0, 1]`.
    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        self.0.data_mut()
    }

    pub fn channel(&self, object: usize) -> Grid {
        self.0.channel(object)
    }

    /// Replaces one object channel with the values of a single-channel grid.
    pub fn set_channel(&mut self, object: usize, values: &Grid) -> Result<()> {
        if values.height() != self.height() || values.width() != self.width() {
            return Err(Error::dim("channel size does not match map"));
        }
        let ch = self.object_count();
        let data = self.0.data_mut();
        for (i, v) in values.data().iter().enumerate() {
            data[i * ch + object] = v.clamp(0.0, 1.0);
        }
        Ok(())
    }
}

/// Integer labels: 0 is background, `k` is object `k`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    height: usize,
    width: usize,
    labels: Vec<u8>,
}

impl LabelMap {
    pub fn background(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            labels: vec![0; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::dim(format!(
                "{height}x{width} label map needs {} labels, got {}",
                height * width,
                labels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, label: u8) {
        self.labels[y * self.width + x] = label;
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [u8] {
        &mut self.labels
    }

    pub fn max_label(&self) -> u8 {
        self.labels.iter().copied().max().unwrap_or(0)
    }

    pub fn area(&self, object: u8) -> usize {
        self.labels.iter().filter(|&&l| l == object).count()
    }

    pub fn object_mask(&self, object: u8) -> Vec<bool> {
        self.labels.iter().map(|&l| l == object).collect()
    }

    /// Indicator of `object` as a one-channel grid of 0.0 / 1.0.
    pub fn indicator(&self, object: u8) -> Grid {
        let data = self
            .labels
            .iter()
            .map(|&l| if l == object { 1.0 } else { 0.0 })
            .collect();
        Grid::from_vec(self.height, self.width, 1, data).expect("shape is consistent")
    }

    /// One channel per object `1..=objects`, hard 0/1 probabilities.
    pub fn to_probability(&self, objects: usize) -> ProbabilityMap {
        let mut data = vec![0.0; self.labels.len() * objects];
        for (i, &l) in self.labels.iter().enumerate() {
            if l > 0 && (l as usize) <= objects {
                data[i * objects + l as usize - 1] = 1.0;
            }
        }
        ProbabilityMap(Grid::from_vec(self.height, self.width, objects, data).expect("shape"))
    }

    pub(crate) fn same_size(&self, other: &LabelMap) -> Result<()> {
        if self.height != other.height || self.width != other.width {
            return Err(Error::dim(format!(
                "label maps differ in size: {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }
}
