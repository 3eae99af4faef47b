//! Region similarity J, boundary accuracy F, and round-indexed curves.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maps::LabelMap;

/// Boundary tolerance as a fraction of the image diagonal.
pub const DEFAULT_BOUNDARY_FRACTION: f64 = 0.008;

/// Intersection over union of `object`'s pixels; 1.0 when both are empty.
pub fn jaccard(pred: &LabelMap, gt: &LabelMap, object: u8) -> Result<f64> {
    pred.same_size(gt)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        let (p, g) = (p == object, g == object);
        inter += usize::from(p && g);
        union += usize::from(p || g);
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// `ceil(fraction · diagonal)` in pixels.
pub fn boundary_tolerance(height: usize, width: usize, fraction: f64) -> usize {
    (fraction * ((height * height + width * width) as f64).sqrt()).ceil() as usize
}

/// Object pixels with at least one 4-neighbour outside the object. Pixels
/// on the image edge are not boundary on account of the edge alone.
pub fn boundary_pixels(mask: &[bool], height: usize, width: usize) -> Vec<bool> {
    let mut out = vec![false; mask.len()];
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            if !mask[i] {
                continue;
            }
            let off = (y > 0 && !mask[i - width])
                || (y + 1 < height && !mask[i + width])
                || (x > 0 && !mask[i - 1])
                || (x + 1 < width && !mask[i + 1]);
            out[i] = off;
        }
    }
    out
}

/// Marks every pixel within chessboard distance `radius` of a set pixel.
fn dilate(mask: &[bool], height: usize, width: usize, radius: usize) -> Vec<bool> {
    let mut rows = vec![false; mask.len()];
    for y in 0..height {
        for x in 0..width {
            if mask[y * width + x] {
                let (lo, hi) = (x.saturating_sub(radius), (x + radius).min(width - 1));
                rows[y * width + lo..=y * width + hi].fill(true);
            }
        }
    }
    let mut out = vec![false; mask.len()];
    for y in 0..height {
        for x in 0..width {
            if rows[y * width + x] {
                let (lo, hi) = (y.saturating_sub(radius), (y + radius).min(height - 1));
                for yy in lo..=hi {
                    out[yy * width + x] = true;
                }
            }
        }
    }
    out
}

/// Boundary F-measure with a chessboard-distance tolerance in pixels.
pub fn boundary_f(pred: &LabelMap, gt: &LabelMap, object: u8, tolerance: usize) -> Result<f64> {
    pred.same_size(gt)?;
    let (h, w) = (gt.height(), gt.width());
    let bp = boundary_pixels(&pred.object_mask(object), h, w);
    let bg = boundary_pixels(&gt.object_mask(object), h, w);
    let np = bp.iter().filter(|&&b| b).count();
    let ng = bg.iter().filter(|&&b| b).count();
    match (np, ng) {
        (0, 0) => return Ok(1.0),
        (0, _) | (_, 0) => return Ok(0.0),
        _ => {}
    }
    let near_g = dilate(&bg, h, w, tolerance);
    let near_p = dilate(&bp, h, w, tolerance);
    let hit_p = bp.iter().zip(&near_g).filter(|(&b, &n)| b && n).count();
    let hit_g = bg.iter().zip(&near_p).filter(|(&b, &n)| b && n).count();
    let precision = hit_p as f64 / np as f64;
    let recall = hit_g as f64 / ng as f64;
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Boundary F with the default diagonal-fraction tolerance.
pub fn boundary_f_default(pred: &LabelMap, gt: &LabelMap, object: u8) -> Result<f64> {
    boundary_f(
        pred,
        gt,
        object,
        boundary_tolerance(gt.height(), gt.width(), DEFAULT_BOUNDARY_FRACTION),
    )
}

/// Mean J and F for one frame over objects `1..=objects`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameScore {
    pub j: f64,
    pub f: f64,
}

impl FrameScore {
    pub fn jf(&self) -> f64 {
        0.5 * (self.j + self.f)
    }
}

pub fn score_frame(
    pred: &LabelMap,
    gt: &LabelMap,
    objects: usize,
    tolerance: usize,
) -> Result<FrameScore> {
    if objects == 0 {
        return Err(Error::Input("object count must be at least 1".into()));
    }
    let mut score = FrameScore::default();
    for k in 1..=objects as u8 {
        score.j += jaccard(pred, gt, k)?;
        score.f += boundary_f(pred, gt, k, tolerance)?;
    }
    score.j /= objects as f64;
    score.f /= objects as f64;
    Ok(score)
}

/// Per-frame scores and their means.
pub fn score_sequence(
    preds: &[LabelMap],
    gts: &[LabelMap],
    objects: usize,
) -> Result<(Vec<FrameScore>, FrameScore)> {
    if preds.len() != gts.len() || preds.is_empty() {
        return Err(Error::Input(format!(
            "need matching nonempty frame lists, got {} predictions and {} ground truths",
            preds.len(),
            gts.len()
        )));
    }
    let frames = preds
        .iter()
        .zip(gts)
        .map(|(p, g)| {
            let tol = boundary_tolerance(g.height(), g.width(), DEFAULT_BOUNDARY_FRACTION);
            score_frame(p, g, objects, tol)
        })
        .collect::<Result<Vec<_>>>()?;
    let n = frames.len() as f64;
    let mean = FrameScore {
        j: frames.iter().map(|s| s.j).sum::<f64>() / n,
        f: frames.iter().map(|s| s.f).sum::<f64>() / n,
    };
    Ok((frames, mean))
}

/// Per-round mean scores.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundCurve {
    pub j: Vec<f64>,
    pub f: Vec<f64>,
}

impl RoundCurve {
    pub fn push(&mut self, score: FrameScore) {
        self.j.push(score.j);
        self.f.push(score.f);
    }

    pub fn rounds(&self) -> usize {
        self.j.len()
    }

    pub fn jf(&self) -> Vec<f64> {
        self.j
            .iter()
            .zip(&self.f)
            .map(|(j, f)| 0.5 * (j + f))
            .collect()
    }

    pub fn auc_j(&self) -> Result<f64> {
        auc(&self.j)
    }

    pub fn auc_jf(&self) -> Result<f64> {
        auc(&self.jf())
    }
}

/// Trapezoidal area with round `r` placed at `(r − 1)/(R − 1)`. A single
/// round yields its own score.
pub fn auc(values: &[f64]) -> Result<f64> {
    match values {
        [] => Err(Error::Input("area under an empty curve".into())),
        [v] => Ok(*v),
        _ => {
            let area: f64 = values.windows(2).map(|p| 0.5 * (p[0] + p[1])).sum();
            Ok(area / (values.len() - 1) as f64)
        }
    }
}
