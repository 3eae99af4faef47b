//! Annotation step (scribbles → probabilities on the annotated frame),
//! transfer step (annotated + previous frames → probabilities on a target
//! frame), and multi-object label resolution.

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{extract, rgb_to_lab, scribble_cells, ExtractorConfig, FeatureGrid, Level};
use crate::maps::{LabelMap, ProbabilityMap};
use crate::numerics::{
    box_filter, dot, resample, reshape_grid_to_matrix, reshape_matrix_to_grid, Grid, ResampleMode,
};
use crate::scribble_robot::{ScribbleRaster, ScribbleSet};
use crate::transfer::{transfer_global_multi, transfer_local_with, LocalWindow};

/// Probability at or above which a pixel under a positive scribble is held.
pub const POSITIVE_CLAMP: f64 = 0.95;
/// Probability at or below which a pixel under a negative scribble is held.
pub const NEGATIVE_CLAMP: f64 = 0.05;
/// Objects with probability below this are zeroed before the argmax.
pub const DEFAULT_THRESHOLD: f64 = 0.8;

/// The tunable scalars of the segmentation heads.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadParams {
    /// κ: similarity temperature.
    pub kappa: f64,
    /// γ: coordinate-channel weight.
    pub gamma: f64,
    /// α: weight of the fresh scribble evidence against the prior mask.
    pub alpha: f64,
    /// β: weight of the global estimate against the local one.
    pub beta: f64,
    pub smoothing_iterations: usize,
}

impl Default for HeadParams {
    fn default() -> Self {
        Self {
            kappa: 10.0,
            gamma: 0.3,
            alpha: 0.8,
            beta: 0.3,
            smoothing_iterations: 2,
        }
    }
}

impl HeadParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.kappa > 0.0
            && self.kappa.is_finite()
            && self.gamma >= 0.0
            && self.gamma.is_finite()
            && (0.0..=1.0).contains(&self.alpha)
            && (0.0..=1.0).contains(&self.beta);
        if ok {
            Ok(())
        } else {
            Err(Error::Input(format!(
                "head parameters out of range: {self:?}"
            )))
        }
    }
}

/// Which transfer estimates feed the target-frame prediction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransferMode {
    #[default]
    Both,
    GlobalOnly,
    LocalOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmenterConfig {
    pub head: HeadParams,
    /// Base extractor settings; κ and γ are taken from `head`.
    pub extractor: ExtractorConfig,
    pub threshold: f64,
    pub local_radius: usize,
    pub transfer_mode: TransferMode,
    /// Appearance cosine above which a border cell is considered part of
    /// the scribbled object and dropped from the background seeds.
    pub border_exclusion_cosine: f64,
    /// Color width of the edge-aware upsampling (Lab units / 100); zero
    /// selects plain bilinear upsampling.
    pub guide_sigma: f64,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self {
            head: HeadParams::default(),
            extractor: ExtractorConfig::default(),
            threshold: DEFAULT_THRESHOLD,
            local_radius: LocalWindow::DEFAULT_RADIUS,
            transfer_mode: TransferMode::Both,
            border_exclusion_cosine: 0.95,
            guide_sigma: 0.1,
        }
    }
}

/// Features of one frame at both levels, plus the color guide used for
/// edge-aware upsampling.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameFeatures {
    pub global: FeatureGrid,
    pub local: FeatureGrid,
    pub guide: Guide,
}

/// Lab color (scaled by 1/100) per pixel and averaged over the cells of
/// both feature grids. Steers the edge-aware filters below.
#[derive(Clone, Debug, PartialEq)]
pub struct Guide {
    pixels: Grid,
    local: Grid,
    global: Grid,
}

impl Guide {
    pub fn new(frame: &RgbImage, local: (usize, usize), global: (usize, usize)) -> Result<Self> {
        let (w, h) = (frame.width() as usize, frame.height() as usize);
        let data = frame
            .pixels()
            .flat_map(|p| rgb_to_lab(p.0).map(|v| v / 100.0))
            .collect();
        let pixels = Grid::from_vec(h, w, 3, data)?;
        Ok(Self {
            local: resample(&pixels, local.0, local.1, ResampleMode::Area)?,
            global: resample(&pixels, global.0, global.1, ResampleMode::Area)?,
            pixels,
        })
    }

    pub fn pixels(&self) -> &Grid {
        &self.pixels
    }

    pub fn local(&self) -> &Grid {
        &self.local
    }

    pub fn global(&self) -> &Grid {
        &self.global
    }
}

fn color_distance2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Joint bilateral upsampling. Each target sample averages the 4×4
/// nearest source samples, weighted by a unit Gaussian in source-grid
/// distance times a Gaussian of width `sigma` in color. `sigma <= 0`
/// gives plain bilinear resampling.
pub fn guided_upsample(
    field: &Grid,
    source_colors: &Grid,
    target_colors: &Grid,
    sigma: f64,
) -> Result<Grid> {
    let (h, w) = (target_colors.height(), target_colors.width());
    if sigma <= 0.0 {
        return resample(field, h, w, ResampleMode::Bilinear);
    }
    let (gh, gw, k) = (field.height(), field.width(), field.channels());
    if (gh, gw) != (source_colors.height(), source_colors.width()) {
        return Err(Error::dim("field does not match its color grid"));
    }
    let (sy, sx) = (h as f64 / gh as f64, w as f64 / gw as f64);
    let inv_two_sigma2 = 1.0 / (2.0 * sigma * sigma);
    let mut out = Grid::zeros(h, w, k);
    let mut acc = vec![0.0; k];
    let mut plain = vec![0.0; k];
    for y in 0..h {
        let cy = (y as f64 + 0.5) / sy - 0.5;
        let y0 = cy.floor() as isize;
        for x in 0..w {
            let cx = (x as f64 + 0.5) / sx - 0.5;
            let x0 = cx.floor() as isize;
            let color = target_colors.pixel(y * w + x);
            acc.fill(0.0);
            plain.fill(0.0);
            let (mut total, mut plain_total) = (0.0, 0.0);
            for i in (y0 - 1).max(0)..=(y0 + 2).min(gh as isize - 1) {
                for j in (x0 - 1).max(0)..=(x0 + 2).min(gw as isize - 1) {
                    let c = i as usize * gw + j as usize;
                    let spatial =
                        (-0.5 * ((cy - i as f64).powi(2) + (cx - j as f64).powi(2))).exp();
                    let wgt = spatial
                        * (-color_distance2(color, source_colors.pixel(c)) * inv_two_sigma2).exp();
                    total += wgt;
                    plain_total += spatial;
                    for ((a, p), v) in acc.iter_mut().zip(plain.iter_mut()).zip(field.pixel(c)) {
                        *a += wgt * v;
                        *p += spatial * v;
                    }
                }
            }
            // A color unlike every nearby sample falls back to space alone.
            let (sum, norm) = if total > 1e-200 {
                (&acc, total)
            } else {
                (&plain, plain_total)
            };
            for (o, a) in out.pixel_mut(y * w + x).iter_mut().zip(sum) {
                *o = a / norm;
            }
        }
    }
    Ok(out)
}

/// `iterations` passes of a 3×3 average whose weights fall off with color
/// difference (width `sigma`). `sigma <= 0` gives the plain box filter.
pub fn guided_smooth(field: &Grid, colors: &Grid, iterations: usize, sigma: f64) -> Result<Grid> {
    if sigma <= 0.0 {
        return Ok(box_filter(field, iterations));
    }
    let (h, w, k) = (field.height(), field.width(), field.channels());
    if (h, w) != (colors.height(), colors.width()) {
        return Err(Error::dim("field does not match its color grid"));
    }
    let inv_two_sigma2 = 1.0 / (2.0 * sigma * sigma);
    let mut cur = field.clone();
    for _ in 0..iterations {
        let mut next = Grid::zeros(h, w, k);
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let mut total = 0.0;
                let px = next.pixel_mut(i);
                for yy in y.saturating_sub(1)..(y + 2).min(h) {
                    for xx in x.saturating_sub(1)..(x + 2).min(w) {
                        let j = yy * w + xx;
                        let wgt = (-color_distance2(colors.pixel(i), colors.pixel(j))
                            * inv_two_sigma2)
                            .exp();
                        total += wgt;
                        for (o, v) in px.iter_mut().zip(cur.pixel(j)) {
                            *o += wgt * v;
                        }
                    }
                }
                // The centre weighs 1, so total >= 1.
                for o in px.iter_mut() {
                    *o /= total;
                }
            }
        }
        cur = next;
    }
    Ok(cur)
}

impl FrameFeatures {
    pub fn image_size(&self) -> (usize, usize) {
        self.local.image_size()
    }
}

/// Outputs of one transfer step. Estimates are kept for loss computation.
#[derive(Clone, Debug, PartialEq)]
pub struct TStepOutput {
    pub probability: ProbabilityMap,
    /// Global estimate on the global grid.
    pub global_estimate: Grid,
    /// Local estimate on the local grid (the auxiliary-loss input).
    pub local_estimate: Grid,
    /// `β·q_g + (1−β)·q_l` on the local grid, before smoothing.
    pub fused: Grid,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Segmenter {
    config: SegmenterConfig,
    extractor: ExtractorConfig,
    window: LocalWindow,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Segmenter {
    pub fn new(config: SegmenterConfig) -> Result<Self> {
        config.head.validate()?;
        if !(0.0..=1.0).contains(&config.threshold) {
            return Err(Error::Input(format!(
                "threshold {} outside [0, 1]",
                config.threshold
            )));
        }
        let extractor = ExtractorConfig {
            temperature: config.head.kappa,
            coord_weight: config.head.gamma,
            ..config.extractor.clone()
        };
        extractor.validate()?;
        Ok(Self {
            window: LocalWindow::new(config.local_radius),
            extractor,
            config,
        })
    }

    pub fn with_params(params: HeadParams) -> Result<Self> {
        Self::new(SegmenterConfig {
            head: params,
            ..Default::default()
        })
    }

    pub fn config(&self) -> &SegmenterConfig {
        &self.config
    }

    pub fn params(&self) -> &HeadParams {
        &self.config.head
    }

    pub fn features(&self, frame: &RgbImage) -> Result<FrameFeatures> {
        let local = extract(frame, Level::Local, &self.extractor)?;
        let global = extract(frame, Level::Global, &self.extractor)?;
        Ok(FrameFeatures {
            guide: Guide::new(
                frame,
                (local.height(), local.width()),
                (global.height(), global.width()),
            )?,
            global,
            local,
        })
    }

    pub fn astep(
        &self,
        frame: &RgbImage,
        scribbles: &[ScribbleSet],
        prev: Option<&ProbabilityMap>,
        object_count: usize,
    ) -> Result<ProbabilityMap> {
        self.astep_with_features(&self.features(frame)?, scribbles, prev, object_count)
    }

    /// Scribble-driven probabilities for every object on the annotated frame.
    ///
    /// For object `k`, cell `i` scores `σ(s⁺(i) − s⁻(i))` where `s±` is the
    /// best inner product with a positive/negative seed cell. Negative seeds
    /// are the object's negative scribbles, the other objects' positive
    /// scribbles, and image-border cells that do not resemble the object.
    /// The score is blended with the prior (`prev`, or 0.5 when absent),
    /// smoothed, upsampled, and clamped under the scribbles.
    pub fn astep_with_features(
        &self,
        feats: &FrameFeatures,
        scribbles: &[ScribbleSet],
        prev: Option<&ProbabilityMap>,
        object_count: usize,
    ) -> Result<ProbabilityMap> {
        let (h, w) = feats.image_size();
        let grid = &feats.local;
        let head = &self.config.head;
        if object_count == 0 {
            return Err(Error::Input("object count must be at least 1".into()));
        }
        if let Some(p) = prev {
            if (p.height(), p.width(), p.object_count()) != (h, w, object_count) {
                return Err(Error::dim(
                    "previous mask does not match frame and object count",
                ));
            }
        }
        if scribbles.is_empty() && prev.is_none() {
            return Err(Error::Annotation("no scribbles supplied".into()));
        }
        for s in scribbles {
            if s.object == 0 || s.object as usize > object_count {
                return Err(Error::Annotation(format!(
                    "object id {} not in 1..={object_count}",
                    s.object
                )));
            }
            if prev.is_none() && !s.has_positive() {
                return Err(Error::Annotation(format!(
                    "object {} has no positive scribble on a first annotation",
                    s.object
                )));
            }
        }

        let rasters = scribbles
            .iter()
            .map(|s| s.rasterize(h, w))
            .collect::<Result<Vec<_>>>()?;
        let cells = rasters
            .iter()
            .map(|r| scribble_cells(grid, r))
            .collect::<Result<Vec<_>>>()?;
        let prev_local = prev
            .map(|p| resample(p.grid(), grid.height(), grid.width(), ResampleMode::Area))
            .transpose()?;
        let border = border_cells(grid.height(), grid.width());
        let kappa = head.kappa;

        let mut out = match prev {
            Some(p) => p.clone(),
            None => ProbabilityMap::filled(h, w, object_count, 0.0),
        };
        for object in 0..object_count {
            let Some(idx) = scribbles
                .iter()
                .position(|s| s.object as usize == object + 1)
            else {
                continue;
            };
            let mut positive = cells[idx].positive.clone();
            if positive.is_empty() {
                // Later rounds may bring only negatives; the prior's confident
                // cells then stand in as positive seeds.
                if let Some(pl) = &prev_local {
                    positive = (0..grid.cell_count())
                        .filter(|&c| {
                            pl.pixel(c)[object] >= self.config.threshold
                                && !cells[idx].negative.contains(&c)
                        })
                        .collect();
                }
            }

            let mut negative = cells[idx].negative.clone();
            for (j, c) in cells.iter().enumerate() {
                if j != idx {
                    negative.extend(c.positive.iter().copied());
                }
            }
            negative.extend(border.iter().copied().filter(|&b| {
                let looks_like_object = positive.iter().any(|&p| {
                    dot(grid.appearance(b), grid.appearance(p)) / kappa
                        > self.config.border_exclusion_cosine
                });
                let believed_object = prev_local
                    .as_ref()
                    .is_some_and(|pl| pl.pixel(b)[object] >= 0.5);
                !looks_like_object && !believed_object && !positive.contains(&b)
            }));
            negative.sort_unstable();
            negative.dedup();
            negative.retain(|c| !positive.contains(c));

            let mut channel = Grid::zeros(grid.height(), grid.width(), 1);
            for i in 0..grid.cell_count() {
                let prior = prev_local.as_ref().map_or(0.5, |pl| pl.pixel(i)[object]);
                let raw = if positive.is_empty() {
                    prior
                } else {
                    let best = |seeds: &[usize]| {
                        seeds
                            .iter()
                            .map(|&s| dot(grid.cell(i), grid.cell(s)))
                            .fold(f64::NEG_INFINITY, f64::max)
                    };
                    let s_pos = best(&positive);
                    let s_neg = if negative.is_empty() {
                        // No background evidence at all: compare against a
                        // fixed fraction of a perfect match.
                        0.8 * kappa
                    } else {
                        best(&negative)
                    };
                    sigmoid(s_pos - s_neg)
                };
                channel.data_mut()[i] = head.alpha * raw + (1.0 - head.alpha) * prior;
            }
            let guide = &feats.guide;
            let sigma = self.config.guide_sigma;
            let channel = guided_smooth(&channel, guide.local(), head.smoothing_iterations, sigma)?;
            let channel = guided_upsample(&channel, guide.local(), guide.pixels(), sigma)?;
            out.set_channel(object, &channel)?;
        }

        apply_scribble_clamps(&mut out, scribbles, &rasters);
        Ok(out)
    }

    /// Target-frame probabilities from the annotated frames (global path)
    /// and the adjacent segmented frame (local path).
    pub fn tstep(
        &self,
        target: &FrameFeatures,
        prev_features: &FrameFeatures,
        prev_mask: &ProbabilityMap,
        annotated: &[(&FrameFeatures, &ProbabilityMap)],
    ) -> Result<TStepOutput> {
        if annotated.is_empty() {
            return Err(Error::Protocol(
                "transfer step needs at least one annotated frame".into(),
            ));
        }
        let objects = prev_mask.object_count();
        let g = &target.global;
        let l = &target.local;

        let sources = annotated
            .iter()
            .map(|(f, p)| {
                if p.object_count() != objects {
                    return Err(Error::dim(
                        "annotated mask object count differs from previous mask",
                    ));
                }
                let down = resample(
                    p.grid(),
                    f.global.height(),
                    f.global.width(),
                    ResampleMode::Area,
                )?;
                Ok(reshape_grid_to_matrix(&with_support(&down)))
            })
            .collect::<Result<Vec<_>>>()?;
        let pairs: Vec<_> = annotated
            .iter()
            .zip(&sources)
            .map(|((f, _), s)| (&f.global, s))
            .collect();
        let moved =
            reshape_matrix_to_grid(&transfer_global_multi(g, &pairs)?, g.height(), g.width())?;
        let q_g = divide_by_support(&moved);
        let guide = &target.guide;
        let sigma = self.config.guide_sigma;
        let q_g_local = guided_upsample(&q_g, guide.global(), guide.local(), sigma)?;
        let prev = ProbabilityMap::from_grid(with_support(prev_mask.grid()))?;
        let q_l = divide_by_support(&transfer_local_with(
            l,
            &prev_features.local,
            &prev,
            &self.window,
        )?);

        let beta = match self.config.transfer_mode {
            TransferMode::Both => self.config.head.beta,
            TransferMode::GlobalOnly => 1.0,
            TransferMode::LocalOnly => 0.0,
        };
        let mut fused = q_g_local.clone();
        for (f, ql) in fused.data_mut().iter_mut().zip(q_l.data()) {
            *f = beta * *f + (1.0 - beta) * ql;
        }
        let smoothed = guided_smooth(
            &fused,
            guide.local(),
            self.config.head.smoothing_iterations,
            sigma,
        )?;
        let full = guided_upsample(&smoothed, guide.local(), guide.pixels(), sigma)?;
        Ok(TStepOutput {
            probability: ProbabilityMap::from_grid_clamped(full),
            global_estimate: q_g,
            local_estimate: q_l,
            fused,
        })
    }

    pub fn resolve(&self, maps: &ProbabilityMap) -> LabelMap {
        resolve_labels(maps, self.config.threshold)
    }
}

/// Appends a channel of ones. Transferred alongside the probabilities it
/// measures how much source support each target cell received.
fn with_support(field: &Grid) -> Grid {
    let k = field.channels();
    let mut out = Grid::zeros(field.height(), field.width(), k + 1);
    for i in 0..field.height() * field.width() {
        let px = out.pixel_mut(i);
        px[..k].copy_from_slice(field.pixel(i));
        px[k] = 1.0;
    }
    out
}

/// Undoes dilution of transferred mass. Where a target cell received less
/// than one cell's worth of support (the last channel), its channels are
/// divided by that support, giving the support-weighted average of the
/// source probabilities. Better-supported cells keep the transferred mass.
fn divide_by_support(moved: &Grid) -> Grid {
    let k = moved.channels() - 1;
    let mut out = Grid::zeros(moved.height(), moved.width(), k);
    for i in 0..moved.height() * moved.width() {
        let px = moved.pixel(i);
        let support = px[k].min(1.0);
        if support > 1e-300 {
            for (o, v) in out.pixel_mut(i).iter_mut().zip(&px[..k]) {
                *o = v / support;
            }
        }
    }
    out
}

fn border_cells(h: usize, w: usize) -> Vec<usize> {
    (0..h * w)
        .filter(|&i| {
            let (y, x) = (i / w, i % w);
            y == 0 || x == 0 || y + 1 == h || x + 1 == w
        })
        .collect()
}

fn apply_scribble_clamps(
    out: &mut ProbabilityMap,
    scribbles: &[ScribbleSet],
    rasters: &[ScribbleRaster],
) {
    let objects = out.object_count();
    let data = out.data_mut();
    for (set, raster) in scribbles.iter().zip(rasters) {
        let k = set.object as usize - 1;
        for i in raster.positive_pixels() {
            let px = &mut data[i * objects..(i + 1) * objects];
            px[k] = px[k].max(POSITIVE_CLAMP);
            for (j, v) in px.iter_mut().enumerate() {
                if j != k {
                    *v = v.min(NEGATIVE_CLAMP);
                }
            }
        }
    }
    for (set, raster) in scribbles.iter().zip(rasters) {
        let k = set.object as usize - 1;
        for i in raster.negative_pixels() {
            let v = &mut data[i * objects + k];
            *v = v.min(NEGATIVE_CLAMP);
        }
    }
}

/// Zeroes object probabilities below `threshold`, then labels each pixel
/// with the most probable surviving object (lowest index on ties), or
/// background when none survive.
pub fn resolve_labels(maps: &ProbabilityMap, threshold: f64) -> LabelMap {
    let (h, w, k) = (maps.height(), maps.width(), maps.object_count());
    let mut labels = vec![0u8; h * w];
    for (i, px) in maps.grid().data().chunks_exact(k).enumerate() {
        let mut best = 0u8;
        let mut best_p = f64::NEG_INFINITY;
        for (j, &p) in px.iter().enumerate() {
            if p >= threshold && p > best_p {
                best = (j + 1) as u8;
                best_p = p;
            }
        }
        labels[i] = best;
    }
    LabelMap::from_vec(h, w, labels).expect("shape is consistent")
}
