//! Probability transfer between frames.
//!
//! Global transfer matches every target cell against every annotated-frame
//! cell: `W = F_t · F_aᵀ`, `A = column_softmax(W)`, estimate `= A · F_o`.
//! With several annotated frames the estimates are averaged.
//!
//! Local transfer matches a target cell `i` only against previous-frame
//! cells `j ∈ N_i`, where `N_i` samples the `(2d+1)²` neighbourhood of `i`
//! with step 2. Columns are softmax-normalized over their in-window entries,
//! so every column of `A^L` is a distribution over nearby target cells.
//! The local transition is kept in windowed form (one weight per target
//! cell and offset); the dense form is only built on request.

use crate::error::{Error, Result};
use crate::features::FeatureGrid;
use crate::maps::ProbabilityMap;
use crate::numerics::{
    column_softmax, dot, matmul, matmul_transposed, resample, Grid, MaskPattern, Matrix,
    ResampleMode,
};

/// Column-stochastic matrix mapping source cells (columns) to target cells
/// (rows).
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionMatrix(Matrix);

impl TransitionMatrix {
    pub fn target_count(&self) -> usize {
        self.0.rows()
    }

    pub fn source_count(&self) -> usize {
        self.0.cols()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn apply(&self, source_field: &Matrix) -> Result<Matrix> {
        if source_field.rows() != self.source_count() {
            return Err(Error::dim(format!(
                "source field has {} rows, transition expects {}",
                source_field.rows(),
                self.source_count()
            )));
        }
        matmul(&self.0, source_field)
    }
}

fn check_channels(a: &FeatureGrid, b: &FeatureGrid) -> Result<()> {
    if a.channels() != b.channels() {
        return Err(Error::dim(format!(
            "feature channel mismatch: {} vs {}",
            a.channels(),
            b.channels()
        )));
    }
    Ok(())
}

/// `W(i, j) = f_t,i · f_a,j` for target cell `i` and annotated cell `j`.
pub fn global_affinity(f_t: &FeatureGrid, f_a: &FeatureGrid) -> Result<Matrix> {
    check_channels(f_t, f_a)?;
    matmul_transposed(&f_t.to_matrix(), &f_a.to_matrix())
}

pub fn global_transition(f_t: &FeatureGrid, f_a: &FeatureGrid) -> Result<TransitionMatrix> {
    Ok(TransitionMatrix(column_softmax(
        &global_affinity(f_t, f_a)?,
        None,
    )?))
}

/// `A · source_field`; `source_field` has one row per annotated-frame cell
/// and any number of columns (objects, or feature channels).
pub fn transfer_global(
    f_t: &FeatureGrid,
    f_a: &FeatureGrid,
    source_field: &Matrix,
) -> Result<Matrix> {
    if source_field.rows() != f_a.cell_count() {
        return Err(Error::dim(format!(
            "source field has {} rows, annotated grid has {} cells",
            source_field.rows(),
            f_a.cell_count()
        )));
    }
    global_transition(f_t, f_a)?.apply(source_field)
}

/// Mean of the single-frame global estimates over all annotated frames.
pub fn transfer_global_multi(
    f_t: &FeatureGrid,
    annotated: &[(&FeatureGrid, &Matrix)],
) -> Result<Matrix> {
    let Some(((f0, s0), rest)) = annotated.split_first() else {
        return Err(Error::Input(
            "global transfer needs at least one annotated frame".into(),
        ));
    };
    let mut acc = transfer_global(f_t, f0, s0)?;
    for (f_a, src) in rest {
        acc.add_assign(&transfer_global(f_t, f_a, src)?)?;
    }
    if !rest.is_empty() {
        acc.scale(1.0 / annotated.len() as f64);
    }
    Ok(acc)
}

/// Sampling pattern of the local neighbourhood `N_i`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LocalWindow {
    radius: usize,
    step: usize,
    offsets: Vec<(isize, isize)>,
}

impl LocalWindow {
    pub const DEFAULT_RADIUS: usize = 4;
    pub const STEP: usize = 2;

    pub fn new(radius: usize) -> Self {
        let r = radius as isize;
        let mut offsets = Vec::new();
        for dy in (-r..=r).step_by(Self::STEP) {
            for dx in (-r..=r).step_by(Self::STEP) {
                offsets.push((dy, dx));
            }
        }
        Self {
            radius,
            step: Self::STEP,
            offsets,
        }
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn step(&self) -> usize {
        self.step
    }

    /// `(dy, dx)` offsets in grid cells, row-major.
    pub fn offsets(&self) -> &[(isize, isize)] {
        &self.offsets
    }

    /// In-bounds cells of `N_i` for cell `(y, x)` on an `h × w` grid,
    /// paired with the offset index.
    pub fn neighbours(
        &self,
        y: usize,
        x: usize,
        h: usize,
        w: usize,
    ) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.offsets
            .iter()
            .enumerate()
            .filter_map(move |(k, &(dy, dx))| {
                let ny = y as isize + dy;
                let nx = x as isize + dx;
                (ny >= 0 && nx >= 0 && (ny as usize) < h && (nx as usize) < w)
                    .then(|| (k, ny as usize * w + nx as usize))
            })
    }
}

impl Default for LocalWindow {
    fn default() -> Self {
        Self::new(Self::DEFAULT_RADIUS)
    }
}

/// Windowed affinity or transition between two equally sized grids.
/// `values[i * K + k]` holds the entry for target cell `i` and source cell
/// `i + offsets[k]`; out-of-bounds slots are ineligible and hold 0.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalMatrix {
    height: usize,
    width: usize,
    window: LocalWindow,
    values: Vec<f64>,
    eligible: Vec<bool>,
}

impl LocalMatrix {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn window(&self) -> &LocalWindow {
        &self.window
    }

    fn k(&self) -> usize {
        self.window.offsets.len()
    }

    /// Source cell for target `i` at offset slot `k`, if in bounds.
    fn source(&self, i: usize, k: usize) -> Option<usize> {
        let (dy, dx) = self.window.offsets[k];
        let (y, x) = (
            (i / self.width) as isize + dy,
            (i % self.width) as isize + dx,
        );
        (y >= 0 && x >= 0 && (y as usize) < self.height && (x as usize) < self.width)
            .then(|| y as usize * self.width + x as usize)
    }

    pub fn eligible_count(&self, target: usize) -> usize {
        let k = self.k();
        self.eligible[target * k..(target + 1) * k]
            .iter()
            .filter(|&&e| e)
            .count()
    }

    /// Entry `(target, source)`; exactly 0 outside the window.
    pub fn get(&self, target: usize, source: usize) -> f64 {
        let k = self.k();
        (0..k)
            .find(|&s| self.eligible[target * k + s] && self.source(target, s) == Some(source))
            .map_or(0.0, |s| self.values[target * k + s])
    }

    /// Dense `(HW) × (HW)` form and its eligibility pattern.
    pub fn to_dense(&self) -> (Matrix, MaskPattern) {
        let n = self.height * self.width;
        let k = self.k();
        let mut m = Matrix::zeros(n, n);
        let mut mask = MaskPattern::new(n, n);
        for i in 0..n {
            for s in 0..k {
                if let (true, Some(j)) = (self.eligible[i * k + s], self.source(i, s)) {
                    m.set(i, j, self.values[i * k + s]);
                    mask.set(i, j, true);
                }
            }
        }
        (m, mask)
    }

    /// Column sums (one per source cell).
    pub fn column_sums(&self) -> Vec<f64> {
        let k = self.k();
        let mut sums = vec![0.0; self.height * self.width];
        for i in 0..self.height * self.width {
            for s in 0..k {
                if let (true, Some(j)) = (self.eligible[i * k + s], self.source(i, s)) {
                    sums[j] += self.values[i * k + s];
                }
            }
        }
        sums
    }
}

fn check_same_shape(f_t: &FeatureGrid, f_p: &FeatureGrid) -> Result<()> {
    check_channels(f_t, f_p)?;
    if f_t.height() != f_p.height() || f_t.width() != f_p.width() {
        return Err(Error::dim(format!(
            "local transfer needs equal grids: {}x{} vs {}x{}",
            f_t.height(),
            f_t.width(),
            f_p.height(),
            f_p.width()
        )));
    }
    Ok(())
}

/// `W^L(i, j) = f_t,i · f_p,j` for `j ∈ N_i`, ineligible otherwise.
pub fn local_affinity(
    f_t: &FeatureGrid,
    f_p: &FeatureGrid,
    window: &LocalWindow,
) -> Result<LocalMatrix> {
    check_same_shape(f_t, f_p)?;
    let (h, w) = (f_t.height(), f_t.width());
    let k = window.offsets.len();
    let mut values = vec![0.0; h * w * k];
    let mut eligible = vec![false; h * w * k];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            for (s, j) in window.neighbours(y, x, h, w) {
                values[i * k + s] = dot(f_t.cell(i), f_p.cell(j));
                eligible[i * k + s] = true;
            }
        }
    }
    Ok(LocalMatrix {
        height: h,
        width: w,
        window: window.clone(),
        values,
        eligible,
    })
}

/// Local transition plus the number of source columns that no window
/// references (their mass cannot be transferred).
#[derive(Clone, Debug, PartialEq)]
pub struct LocalTransition {
    pub matrix: LocalMatrix,
    pub unreferenced_columns: usize,
}

/// Masked column softmax carried out in windowed form.
pub fn local_transition(affinity: &LocalMatrix) -> LocalTransition {
    let n = affinity.height * affinity.width;
    let k = affinity.k();
    let mut col_max = vec![f64::NEG_INFINITY; n];
    for i in 0..n {
        for s in 0..k {
            if let (true, Some(j)) = (affinity.eligible[i * k + s], affinity.source(i, s)) {
                col_max[j] = col_max[j].max(affinity.values[i * k + s]);
            }
        }
    }
    let mut out = affinity.clone();
    let mut col_sum = vec![0.0; n];
    for i in 0..n {
        for s in 0..k {
            if let (true, Some(j)) = (out.eligible[i * k + s], out.source(i, s)) {
                let e = (out.values[i * k + s] - col_max[j]).exp();
                out.values[i * k + s] = e;
                col_sum[j] += e;
            }
        }
    }
    for i in 0..n {
        for s in 0..k {
            if let (true, Some(j)) = (out.eligible[i * k + s], out.source(i, s)) {
                out.values[i * k + s] /= col_sum[j];
            }
        }
    }
    let unreferenced_columns = col_max.iter().filter(|m| **m == f64::NEG_INFINITY).count();
    LocalTransition {
        matrix: out,
        unreferenced_columns,
    }
}

impl LocalTransition {
    /// `A^L · p` for a grid-shaped field with any number of channels.
    pub fn apply(&self, field: &Grid) -> Result<Grid> {
        let m = &self.matrix;
        if field.height() != m.height || field.width() != m.width {
            return Err(Error::dim(format!(
                "field {}x{} does not match local grid {}x{}",
                field.height(),
                field.width(),
                m.height,
                m.width
            )));
        }
        let k = m.k();
        let ch = field.channels();
        let mut out = Grid::zeros(m.height, m.width, ch);
        for i in 0..m.height * m.width {
            let dst = out.pixel_mut(i);
            for s in 0..k {
                if let (true, Some(j)) = (m.eligible[i * k + s], m.source(i, s)) {
                    let a = m.values[i * k + s];
                    for (d, v) in dst.iter_mut().zip(field.pixel(j)) {
                        *d += a * v;
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Transfers the previous frame's probabilities to the target frame at the
/// local grid resolution. `p_prev` is at image resolution and is
/// area-downsampled first. The result is non-negative but, being a mass
/// transport, may exceed 1 where several sources converge.
pub fn transfer_local(
    f_t: &FeatureGrid,
    f_p: &FeatureGrid,
    p_prev: &ProbabilityMap,
) -> Result<Grid> {
    transfer_local_with(f_t, f_p, p_prev, &LocalWindow::default())
}

pub fn transfer_local_with(
    f_t: &FeatureGrid,
    f_p: &FeatureGrid,
    p_prev: &ProbabilityMap,
    window: &LocalWindow,
) -> Result<Grid> {
    if (p_prev.height(), p_prev.width()) != f_p.image_size() {
        return Err(Error::dim(format!(
            "previous mask {}x{} does not match frame {:?}",
            p_prev.height(),
            p_prev.width(),
            f_p.image_size()
        )));
    }
    let p_local = resample(p_prev.grid(), f_p.height(), f_p.width(), ResampleMode::Area)?;
    let transition = local_transition(&local_affinity(f_t, f_p, window)?);
    transition.apply(&p_local)
}
